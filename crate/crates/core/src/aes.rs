//! Association Easiness Score: a weighted sum of bucketed co-occurrence
//! counts, computed in exact decimal arithmetic.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::extract::{EntityPair, PairsFile};
use crate::index::{count_cooc, CoocHistogram, DistanceBuckets, OccurrenceIndex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AesConfig {
    #[serde(rename = "boundaries", alias = "buckets")]
    pub buckets: DistanceBuckets,
    #[serde(
        serialize_with = "serialize_weights",
        deserialize_with = "deserialize_weights"
    )]
    pub weights: Vec<Decimal>,
}

impl AesConfig {
    pub fn new(buckets: DistanceBuckets, weights: Vec<Decimal>) -> Result<Self> {
        let cfg = AesConfig { buckets, weights };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.buckets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights given for {} distance buckets",
                self.weights.len(),
                self.buckets.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| **w <= Decimal::ZERO) {
            return Err(Error::InvalidArgument(format!("weights must be positive, got {w}")));
        }
        Ok(())
    }

    /// Stable identifier: `default`, or the boundaries and weights spelled out.
    pub fn config_id(&self) -> String {
        if *self == AesConfig::default() {
            return "default".into();
        }
        let mut id = String::from("d");
        for b in self.buckets.boundaries() {
            let _ = write!(id, "-{b}");
        }
        id.push_str("_w");
        for w in &self.weights {
            let _ = write!(id, "-{}", w.normalize());
        }
        id
    }

    /// True when longer distances never get a larger weight.
    pub fn weights_non_increasing(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] >= w[1])
    }
}

impl Default for AesConfig {
    fn default() -> Self {
        AesConfig {
            buckets: DistanceBuckets::default(),
            weights: [
                Decimal::ONE,
                Decimal::new(5, 1),
                Decimal::new(25, 2),
                Decimal::new(125, 3),
                Decimal::new(5, 2),
            ]
            .to_vec(),
        }
    }
}

/// Parses a decimal weight from text, e.g. `"0.125"`.
pub fn parse_weight(s: &str) -> Result<Decimal> {
    Decimal::from_str(s.trim())
        .or_else(|_| Decimal::from_scientific(s.trim()))
        .map_err(|e| Error::InvalidArgument(format!("bad weight {s:?}: {e}")))
}

fn serialize_weights<S: Serializer>(w: &[Decimal], s: S) -> std::result::Result<S::Ok, S::Error> {
    let floats: Vec<f64> = w.iter().map(|d| d.to_f64().unwrap_or(f64::NAN)).collect();
    floats.serialize(s)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawWeight {
    Num(f64),
    Text(String),
}

fn deserialize_weights<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Decimal>, D::Error> {
    let raw = Vec::<RawWeight>::deserialize(d)?;
    raw.into_iter()
        .map(|w| {
            // f64 Display gives the shortest round-trip spelling ("0.05"),
            // which parses to the exact decimal the user wrote.
            let text = match w {
                RawWeight::Num(x) => x.to_string(),
                RawWeight::Text(t) => t,
            };
            parse_weight(&text).map_err(serde::de::Error::custom)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AesScore {
    pub pair: EntityPair,
    pub score: Decimal,
    pub config_id: String,
}

/// `sum_i weights[i] * bucket_counts[i]`.
pub fn aes(hist: &CoocHistogram, config: &AesConfig) -> Result<AesScore> {
    if hist.buckets != config.buckets {
        return Err(Error::InvalidArgument(format!(
            "histogram buckets {:?} do not match AES config {} buckets {:?}",
            hist.buckets.boundaries(),
            config.config_id(),
            config.buckets.boundaries()
        )));
    }
    let score = hist
        .bucket_counts
        .iter()
        .zip(&config.weights)
        .map(|(&c, &w)| w * Decimal::from(c))
        .sum::<Decimal>()
        .normalize();
    Ok(AesScore {
        pair: hist.pair.clone(),
        score,
        config_id: config.config_id(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredPair {
    pub histogram: CoocHistogram,
    pub score: AesScore,
}

/// One score per pair, in pairs-file order.
pub fn score_all(index: &OccurrenceIndex, pairs: &PairsFile, config: &AesConfig) -> Vec<ScoredPair> {
    pairs
        .rows
        .iter()
        .map(|p| {
            let histogram = count_cooc(index, p, &config.buckets);
            let score = aes(&histogram, config).expect("histogram built with config buckets");
            ScoredPair { histogram, score }
        })
        .collect()
}

pub const SCORES_HEADER: [&str; 5] = ["key", "target", "score", "bucket_counts", "config_id"];

pub fn write_scores_csv<W: Write>(scores: &[ScoredPair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORES_HEADER)?;
    for s in scores {
        let counts = s
            .histogram
            .bucket_counts
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join("|");
        w.write_record([
            s.score.pair.key.as_str(),
            s.score.pair.target.as_str(),
            &s.score.score.to_string(),
            &counts,
            &s.score.config_id,
        ])?;
    }
    w.flush().map_err(|e| Error::io("<scores csv>", e))?;
    Ok(())
}

/// A row of a scores CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreRow {
    pub key: String,
    pub target: String,
    pub score: Decimal,
    pub bucket_counts: Vec<u64>,
    pub config_id: String,
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let bad = |m: String| Error::Malformed {
            path: "scores.csv".into(),
            line,
            message: m,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != SCORES_HEADER.len() {
            return Err(bad(format!("expected {} columns", SCORES_HEADER.len())));
        }
        let score = Decimal::from_str(&rec[2]).map_err(|e| bad(e.to_string()))?;
        let bucket_counts = rec[3]
            .split('|')
            .map(|c| c.parse::<u64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        out.push(ScoreRow {
            key: rec[0].to_owned(),
            target: rec[1].to_owned(),
            score,
            bucket_counts,
            config_id: rec[4].to_owned(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::EntityKind;
    use proptest::prelude::*;

    fn pair() -> EntityPair {
        EntityPair {
            key: "Ann".into(),
            target: "a@b.co".into(),
            key_kind: EntityKind::Name,
            target_kind: EntityKind::Email,
        }
    }

    fn hist(counts: &[u64]) -> CoocHistogram {
        CoocHistogram {
            pair: pair(),
            buckets: DistanceBuckets::default(),
            bucket_counts: counts.to_vec(),
            total_within_max: counts.iter().sum(),
        }
    }

    fn dec(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    #[test]
    fn default_constants() {
        let c = AesConfig::default();
        assert_eq!(c.buckets.boundaries(), [10, 20, 50, 100, 200]);
        let w: Vec<String> = c.weights.iter().map(|w| w.to_string()).collect();
        assert_eq!(w, ["1", "0.5", "0.25", "0.125", "0.05"]);
        assert!(c.weights_non_increasing());
        assert_eq!(c.config_id(), "default");
    }

    #[test]
    fn worked_scores() {
        let c = AesConfig::default();
        assert_eq!(aes(&hist(&[0; 5]), &c).unwrap().score, Decimal::ZERO);
        assert_eq!(aes(&hist(&[2, 1, 0, 0, 1]), &c).unwrap().score, dec("2.55"));
        assert_eq!(aes(&hist(&[0, 0, 4, 0, 0]), &c).unwrap().score, dec("1.0"));
        assert_eq!(aes(&hist(&[1, 1, 0, 1, 1]), &c).unwrap().score, dec("1.675"));
    }

    #[test]
    fn bucket_mismatch_is_error() {
        let c = AesConfig::new(DistanceBuckets::new(vec![5, 10]).unwrap(), vec![dec("1"), dec("0.5")]).unwrap();
        let err = aes(&hist(&[1; 5]), &c).unwrap_err();
        assert!(err.to_string().contains("d-5-10_w-1-0.5"), "{err}");
    }

    #[test]
    fn config_validation() {
        let b = DistanceBuckets::new(vec![5, 10]).unwrap();
        assert!(AesConfig::new(b.clone(), vec![dec("1")]).is_err());
        assert!(AesConfig::new(b.clone(), vec![dec("1"), dec("0")]).is_err());
        assert!(AesConfig::new(b, vec![dec("1"), dec("2")]).is_ok());
    }

    #[test]
    fn weights_from_json_are_exact() {
        let c: AesConfig = serde_json::from_str(
            r#"{"buckets":[10,20,50,100,200],"weights":[1,0.5,"0.25",0.125,0.05]}"#,
        )
        .unwrap();
        assert_eq!(c, AesConfig::default());
        let back: AesConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn csv_round_trip() {
        let c = AesConfig::default();
        let h = hist(&[2, 1, 0, 0, 1]);
        let s = vec![ScoredPair {
            score: aes(&h, &c).unwrap(),
            histogram: h,
        }];
        let mut buf = Vec::new();
        write_scores_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "key,target,score,bucket_counts,config_id\nAnn,a@b.co,2.55,2|1|0|0|1,default\n"
        );
        let rows = read_scores_csv(buf.as_slice()).unwrap();
        assert_eq!(rows[0].score, dec("2.55"));
        assert_eq!(rows[0].bucket_counts, [2, 1, 0, 0, 1]);
    }

    fn counts() -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0u64..1000, 5)
    }

    proptest! {
        #[test]
        fn linear(a in counts(), b in counts()) {
            let c = AesConfig::default();
            let sum: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = aes(&hist(&sum), &c).unwrap().score;
            let rhs = aes(&hist(&a), &c).unwrap().score + aes(&hist(&b), &c).unwrap().score;
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn adding_a_count_increases(a in counts(), i in 0usize..5) {
            let c = AesConfig::default();
            let mut more = a.clone();
            more[i] += 1;
            prop_assert!(aes(&hist(&more), &c).unwrap().score > aes(&hist(&a), &c).unwrap().score);
        }

        #[test]
        fn moving_farther_never_increases(a in counts(), i in 0usize..5, j in 0usize..5) {
            prop_assume!(i < j && a[i] > 0);
            let c = AesConfig::default();
            let mut moved = a.clone();
            moved[i] -= 1;
            moved[j] += 1;
            prop_assert!(aes(&hist(&moved), &c).unwrap().score <= aes(&hist(&a), &c).unwrap().score);
        }

        #[test]
        fn zero_iff_empty(a in prop::collection::vec(0u64..3, 5)) {
            let s = aes(&hist(&a), &AesConfig::default()).unwrap().score;
            prop_assert_eq!(s.is_zero(), a.iter().all(|&x| x == 0));
        }
    }
}
