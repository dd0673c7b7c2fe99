use serde::{Deserialize, Serialize};

use super::{OccurrenceIndex, Posting};
use crate::error::{Error, Result};
use crate::extract::{EntityOccurrence, EntityPair};

/// Upper bounds `D_1 < ... < D_N` of the distance buckets; bucket `i` holds
/// distances in `(D_{i-1}, D_i]` with `D_0 = 0`, except that the first
/// bucket also takes distance 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct DistanceBuckets(Vec<u64>);

impl DistanceBuckets {
    pub fn new(boundaries: Vec<u64>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::InvalidArgument("at least one distance bucket is required".into()));
        }
        if boundaries[0] == 0 {
            return Err(Error::InvalidArgument("bucket boundaries must be positive".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "bucket boundaries must be strictly increasing: {boundaries:?}"
            )));
        }
        Ok(DistanceBuckets(boundaries))
    }

    pub fn boundaries(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max(&self) -> u64 {
        *self.0.last().expect("non-empty by construction")
    }

    pub fn bucket_of(&self, d: u64) -> Option<usize> {
        let i = self.0.partition_point(|&b| b < d);
        (i < self.0.len()).then_some(i)
    }
}

impl Default for DistanceBuckets {
    fn default() -> Self {
        DistanceBuckets(vec![10, 20, 50, 100, 200])
    }
}

impl TryFrom<Vec<u64>> for DistanceBuckets {
    type Error = Error;

    fn try_from(v: Vec<u64>) -> Result<Self> {
        DistanceBuckets::new(v)
    }
}

impl From<DistanceBuckets> for Vec<u64> {
    fn from(b: DistanceBuckets) -> Self {
        b.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoocHistogram {
    pub pair: EntityPair,
    pub buckets: DistanceBuckets,
    pub bucket_counts: Vec<u64>,
    pub total_within_max: u64,
}

impl CoocHistogram {
    pub fn zeros(pair: EntityPair, buckets: DistanceBuckets) -> Self {
        CoocHistogram {
            pair,
            bucket_counts: vec![0; buckets.len()],
            buckets,
            total_within_max: 0,
        }
    }

    /// Count of co-occurrences with distance `<= D_i`, for each `i`.
    pub fn cumulative(&self) -> Vec<u64> {
        self.bucket_counts
            .iter()
            .scan(0u64, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }
}

/// Work done by one [`count_cooc_instrumented`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoocStats {
    /// Occurrence pairs inspected; equals the number that landed in a bucket.
    pub pairs_visited: u64,
    /// Window pointer moves over the target list.
    pub pointer_steps: u64,
    /// Documents containing both entities.
    pub shared_docs: u64,
}

/// Character distance between two occurrences in the same document.
pub fn distance(a: &EntityOccurrence, b: &EntityOccurrence) -> Result<u64> {
    if a.doc_id != b.doc_id {
        return Err(Error::InvalidArgument(format!(
            "distance is undefined across documents ({:?} vs {:?})",
            a.doc_id, b.doc_id
        )));
    }
    Ok((a.offset as u64).abs_diff(b.offset as u64))
}

pub fn count_cooc(index: &OccurrenceIndex, pair: &EntityPair, buckets: &DistanceBuckets) -> CoocHistogram {
    count_cooc_instrumented(index, pair, buckets).0
}

/// Histogram of same-document key/target occurrence pairs by distance bucket.
///
/// Both posting lists are walked once; for each key occurrence only the
/// target occurrences inside `[offset - D_N, offset + D_N]` are visited.
pub fn count_cooc_instrumented(
    index: &OccurrenceIndex,
    pair: &EntityPair,
    buckets: &DistanceBuckets,
) -> (CoocHistogram, CoocStats) {
    let mut hist = CoocHistogram::zeros(pair.clone(), buckets.clone());
    let mut stats = CoocStats::default();
    let keys = index.postings(pair.key_kind, &pair.key);
    let targets = index.postings(pair.target_kind, &pair.target);
    let max = buckets.max();

    let (mut i, mut j) = (0, 0);
    while i < keys.len() && j < targets.len() {
        let (dk, dt) = (keys[i].doc, targets[j].doc);
        if dk < dt {
            i += doc_run(keys, i);
            continue;
        }
        if dt < dk {
            j += doc_run(targets, j);
            continue;
        }
        let (nk, nt) = (doc_run(keys, i), doc_run(targets, j));
        stats.shared_docs += 1;
        window_count(&keys[i..i + nk], &targets[j..j + nt], buckets, max, &mut hist, &mut stats);
        i += nk;
        j += nt;
    }
    hist.total_within_max = hist.bucket_counts.iter().sum();
    (hist, stats)
}

fn doc_run(postings: &[Posting], start: usize) -> usize {
    let doc = postings[start].doc;
    postings[start..].partition_point(|p| p.doc == doc)
}

fn window_count(
    keys: &[Posting],
    targets: &[Posting],
    buckets: &DistanceBuckets,
    max: u64,
    hist: &mut CoocHistogram,
    stats: &mut CoocStats,
) {
    let (mut lo, mut hi) = (0usize, 0usize);
    for k in keys {
        let low = k.offset.saturating_sub(max);
        let high = k.offset.saturating_add(max);
        while lo < targets.len() && targets[lo].offset < low {
            lo += 1;
            stats.pointer_steps += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < targets.len() && targets[hi].offset <= high {
            hi += 1;
            stats.pointer_steps += 1;
        }
        for t in &targets[lo..hi] {
            let d = k.offset.abs_diff(t.offset);
            stats.pairs_visited += 1;
            let b = buckets.bucket_of(d).expect("window limits distance to D_N");
            hist.bucket_counts[b] += 1;
        }
    }
}
