//! Occurrence index over a corpus: sorted posting lists per entity, plus the
//! co-occurrence, occurrence-count and verbatim-substring queries built on it.

mod cooc;
mod file;
mod verbatim;

use std::collections::HashMap;

use rayon::prelude::*;

pub use cooc::{count_cooc, count_cooc_instrumented, distance, CoocHistogram, CoocStats, DistanceBuckets};
pub use file::{read_index, write_index, INDEX_MAGIC, INDEX_VERSION};
pub use verbatim::{contains_verbatim, VerbatimMatches, VerbatimScanner};

use crate::corpus::{CorpusManifest, Document};
use crate::error::Result;
use crate::extract::{lookup_key, EntityKind, EntityOccurrence, EntityPair, Extractor, Hit};

/// One occurrence: position of the document in the index's sorted doc table
/// and the character offset within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Posting {
    pub doc: u32,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityPostings {
    pub kind: EntityKind,
    /// Canonical spelling.
    pub entity: String,
    /// Sorted by (doc, offset), no duplicates.
    pub postings: Vec<Posting>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OccurrenceIndex {
    doc_ids: Vec<String>,
    entities: Vec<EntityPostings>,
    lookup: HashMap<(EntityKind, String), usize>,
    pub buckets: Option<DistanceBuckets>,
    pub manifest: Option<CorpusManifest>,
}

impl OccurrenceIndex {
    pub(crate) fn from_parts(
        doc_ids: Vec<String>,
        mut entities: Vec<EntityPostings>,
        buckets: Option<DistanceBuckets>,
        manifest: Option<CorpusManifest>,
    ) -> Self {
        entities.sort_by(|a, b| {
            (a.kind, lookup_key(a.kind, &a.entity)).cmp(&(b.kind, lookup_key(b.kind, &b.entity)))
        });
        let lookup = entities
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.kind, lookup_key(e.kind, &e.entity)), i))
            .collect();
        OccurrenceIndex {
            doc_ids,
            entities,
            lookup,
            buckets,
            manifest,
        }
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn entities(&self) -> &[EntityPostings] {
        &self.entities
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn posting_count(&self) -> u64 {
        self.entities.iter().map(|e| e.postings.len() as u64).sum()
    }

    pub fn get(&self, kind: EntityKind, entity: &str) -> Option<&EntityPostings> {
        self.lookup
            .get(&(kind, lookup_key(kind, entity)))
            .map(|&i| &self.entities[i])
    }

    pub fn postings(&self, kind: EntityKind, entity: &str) -> &[Posting] {
        self.get(kind, entity).map_or(&[], |e| &e.postings)
    }

    /// Occurrence count of one entity (0 when unseen).
    pub fn total(&self, kind: EntityKind, entity: &str) -> u64 {
        self.postings(kind, entity).len() as u64
    }

    /// `freq(key) + freq(target)` over the indexed corpus.
    pub fn occurrence_sum(&self, pair: &EntityPair) -> u64 {
        self.total(pair.key_kind, &pair.key) + self.total(pair.target_kind, &pair.target)
    }

    pub fn totals_by_kind(&self) -> [u64; 4] {
        let mut out = [0u64; 4];
        for e in &self.entities {
            out[e.kind.code() as usize] += e.postings.len() as u64;
        }
        out
    }
}

pub fn occurrence_sum(index: &OccurrenceIndex, pair: &EntityPair) -> u64 {
    index.occurrence_sum(pair)
}

#[derive(Debug, Default)]
struct BuilderEntry {
    entity: String,
    postings: Vec<(u32, u64)>,
}

/// Accumulates occurrences; shards built separately can be merged in any order.
#[derive(Debug, Default)]
pub struct IndexBuilder {
    doc_ids: Vec<String>,
    doc_lookup: HashMap<String, u32>,
    by_kind: [HashMap<String, BuilderEntry>; 4],
}

impl IndexBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn doc_slot(&mut self, doc_id: &str) -> u32 {
        if let Some(&slot) = self.doc_lookup.get(doc_id) {
            return slot;
        }
        let slot = u32::try_from(self.doc_ids.len()).expect("more than u32::MAX documents");
        self.doc_ids.push(doc_id.to_owned());
        self.doc_lookup.insert(doc_id.to_owned(), slot);
        slot
    }

    fn push(&mut self, kind: EntityKind, entity: &str, slot: u32, offset: u64) {
        let map = &mut self.by_kind[kind.code() as usize];
        let key = lookup_key(kind, entity);
        let entry = match map.get_mut(&key) {
            Some(e) => e,
            None => map.entry(key).or_insert_with(|| BuilderEntry {
                entity: entity.to_owned(),
                postings: Vec::new(),
            }),
        };
        // Keep the smallest spelling so the result is independent of input order.
        if entity < entry.entity.as_str() {
            entry.entity = entity.to_owned();
        }
        entry.postings.push((slot, offset));
    }

    pub fn add(&mut self, occ: &EntityOccurrence) {
        let slot = self.doc_slot(&occ.doc_id);
        self.push(occ.kind, &occ.entity, slot, occ.offset as u64);
    }

    pub fn add_hits(&mut self, doc_id: &str, hits: &[Hit]) {
        let slot = self.doc_slot(doc_id);
        for h in hits {
            self.push(h.kind, &h.entity, slot, h.offset as u64);
        }
    }

    /// Registers a document even if it has no occurrences.
    pub fn add_document(&mut self, doc_id: &str) {
        self.doc_slot(doc_id);
    }

    pub fn merge(&mut self, other: IndexBuilder) {
        let remap: Vec<u32> = other.doc_ids.iter().map(|d| self.doc_slot(d)).collect();
        for (kind, map) in EntityKind::ALL.into_iter().zip(other.by_kind) {
            for (_, entry) in map {
                for (slot, offset) in entry.postings {
                    self.push(kind, &entry.entity, remap[slot as usize], offset);
                }
            }
        }
    }

    pub fn finish(self) -> OccurrenceIndex {
        let mut order: Vec<u32> = (0..self.doc_ids.len() as u32).collect();
        order.sort_by(|&a, &b| self.doc_ids[a as usize].cmp(&self.doc_ids[b as usize]));
        let mut remap = vec![0u32; order.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        let mut doc_ids = self.doc_ids;
        let sorted_ids: Vec<String> = order
            .iter()
            .map(|&old| std::mem::take(&mut doc_ids[old as usize]))
            .collect();

        let mut entities = Vec::new();
        for (kind, map) in EntityKind::ALL.into_iter().zip(self.by_kind) {
            for (_, entry) in map {
                let mut postings: Vec<Posting> = entry
                    .postings
                    .into_iter()
                    .map(|(slot, offset)| Posting {
                        doc: remap[slot as usize],
                        offset,
                    })
                    .collect();
                postings.sort_unstable();
                postings.dedup();
                entities.push(EntityPostings {
                    kind,
                    entity: entry.entity,
                    postings,
                });
            }
        }
        OccurrenceIndex::from_parts(sorted_ids, entities, None, None)
    }
}

/// Builds an index from an arbitrary occurrence stream.
pub fn build_index<I>(occurrences: I) -> OccurrenceIndex
where
    I: IntoIterator<Item = EntityOccurrence>,
{
    let mut b = IndexBuilder::new();
    for occ in occurrences {
        b.add(&occ);
    }
    b.finish()
}

const BATCH_BYTES: usize = 32 << 20;

/// Extracts and indexes a document stream. Extraction runs in parallel over
/// batches; documents are consumed in stream order.
pub fn index_documents<I>(
    docs: I,
    extractor: &Extractor,
    manifest: &mut CorpusManifest,
) -> Result<OccurrenceIndex>
where
    I: IntoIterator<Item = Result<Document>>,
{
    let mut builder = IndexBuilder::new();
    let mut batch: Vec<Document> = Vec::new();
    let mut batch_bytes = 0usize;

    let flush = |batch: &mut Vec<Document>, builder: &mut IndexBuilder| {
        let hits: Vec<Vec<Hit>> = batch.par_iter().map(|d| extractor.hits(&d.text)).collect();
        for (doc, hits) in batch.iter().zip(hits) {
            builder.add_document(&doc.doc_id);
            builder.add_hits(&doc.doc_id, &hits);
        }
        batch.clear();
    };

    for doc in docs {
        let doc = doc?;
        manifest.record(&doc);
        batch_bytes += doc.text.len();
        batch.push(doc);
        if batch_bytes >= BATCH_BYTES {
            flush(&mut batch, &mut builder);
            batch_bytes = 0;
        }
    }
    flush(&mut batch, &mut builder);

    let mut index = builder.finish();
    index.manifest = Some(manifest.clone());
    Ok(index)
}
