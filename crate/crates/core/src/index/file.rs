//! Binary index file.
//!
//! ```text
//! magic        5 bytes   "AAIX1"
//! header_len   u32 LE
//! header       header_len bytes of UTF-8 JSON (see `Header`)
//! entities     header.entity_count records, sorted by (kind tag, lookup key):
//!   kind         u8        index into header.kinds
//!   entity_len   u32 LE
//!   entity       entity_len bytes, canonical spelling (UTF-8)
//!   count        u64 LE
//!   postings     count x (doc u32 LE, offset u64 LE), ascending
//! ```
//!
//! `doc` indexes `header.doc_ids`, which is sorted. Every field is written in
//! a fixed order, so identical indexes serialize to identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DistanceBuckets, EntityPostings, OccurrenceIndex, Posting};
use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::extract::EntityKind;

pub const INDEX_MAGIC: &[u8; 5] = b"AAIX1";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kinds: Vec<EntityKind>,
    buckets: Option<DistanceBuckets>,
    manifest: Option<CorpusManifest>,
    doc_ids: Vec<String>,
    entity_count: u64,
    posting_count: u64,
    /// Occurrence totals per kind, in `kinds` order.
    kind_totals: Vec<u64>,
}

pub fn write_index(index: &OccurrenceIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(index, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode(index: &OccurrenceIndex, w: &mut impl Write) -> std::io::Result<()> {
    let header = Header {
        version: INDEX_VERSION,
        kinds: EntityKind::ALL.to_vec(),
        buckets: index.buckets.clone(),
        manifest: index.manifest.clone(),
        doc_ids: index.doc_ids.clone(),
        entity_count: index.entities.len() as u64,
        posting_count: index.posting_count(),
        kind_totals: index.totals_by_kind().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for e in &index.entities {
        w.write_all(&[e.kind.code()])?;
        w.write_all(&(e.entity.len() as u32).to_le_bytes())?;
        w.write_all(e.entity.as_bytes())?;
        w.write_all(&(e.postings.len() as u64).to_le_bytes())?;
        for p in &e.postings {
            w.write_all(&p.doc.to_le_bytes())?;
            w.write_all(&p.offset.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_index(path: impl AsRef<Path>) -> Result<OccurrenceIndex> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(&mut BufReader::new(file)).map_err(|e| match e {
        Decode::Io(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::IndexFormat(format!("{}: truncated", path.display()))
        }
        Decode::Io(e) => Error::io(path, e),
        Decode::Format(msg) => Error::IndexFormat(format!("{}: {msg}", path.display())),
    })
}

enum Decode {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for Decode {
    fn from(e: std::io::Error) -> Self {
        Decode::Io(e)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn decode(r: &mut impl Read) -> std::result::Result<OccurrenceIndex, Decode> {
    let bad = |m: &str| Decode::Format(m.to_owned());
    if &read_array::<5>(r)? != INDEX_MAGIC {
        return Err(bad("bad magic"));
    }
    let header_len = u32::from_le_bytes(read_array(r)?) as usize;
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Decode::Format(format!("header: {e}")))?;
    if header.version != INDEX_VERSION {
        return Err(Decode::Format(format!("unsupported version {}", header.version)));
    }
    if header.doc_ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("document table not sorted"));
    }
    let n_docs = header.doc_ids.len() as u64;

    let mut entities = Vec::with_capacity(header.entity_count as usize);
    let mut postings_seen = 0u64;
    for _ in 0..header.entity_count {
        let [tag] = read_array::<1>(r)?;
        let kind = header
            .kinds
            .get(tag as usize)
            .copied()
            .ok_or_else(|| bad("unknown kind tag"))?;
        let len = u32::from_le_bytes(read_array(r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let entity = String::from_utf8(name).map_err(|_| bad("entity is not UTF-8"))?;
        let count = u64::from_le_bytes(read_array(r)?);
        let mut postings = Vec::with_capacity(count.min(1 << 20) as usize);
        for _ in 0..count {
            let doc = u32::from_le_bytes(read_array(r)?);
            let offset = u64::from_le_bytes(read_array(r)?);
            if u64::from(doc) >= n_docs {
                return Err(bad("posting refers to unknown document"));
            }
            postings.push(Posting { doc, offset });
        }
        if postings.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("posting list not sorted"));
        }
        postings_seen += count;
        entities.push(EntityPostings {
            kind,
            entity,
            postings,
        });
    }
    if postings_seen != header.posting_count {
        return Err(bad("posting count mismatch"));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(OccurrenceIndex::from_parts(
        header.doc_ids,
        entities,
        header.buckets,
        header.manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::EntityOccurrence;
    use crate::index::build_index;
    use proptest::prelude::*;

    fn sample() -> OccurrenceIndex {
        let mk = |e: &str, k, d: &str, o| EntityOccurrence {
            entity: e.into(),
            kind: k,
            doc_id: d.into(),
            offset: o,
            surface: e.into(),
        };
        let mut idx = build_index([
            mk("Ann Bee", EntityKind::Name, "b", 4),
            mk("ann@b.co", EntityKind::Email, "a", 9),
            mk("7135550142", EntityKind::Phone, "a", 40),
        ]);
        idx.buckets = Some(DistanceBuckets::default());
        idx
    }

    #[test]
    fn round_trip_and_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("1.aaix"), dir.path().join("2.aaix"));
        let idx = sample();
        write_index(&idx, &p1).unwrap();
        let back = read_index(&p1).unwrap();
        assert_eq!(back, idx);
        write_index(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(&std::fs::read(&p1).unwrap()[..5], b"AAIX1");
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.aaix");
        std::fs::write(&p, b"NOPE!").unwrap();
        assert!(matches!(read_index(&p), Err(Error::IndexFormat(_))));
        let mut bytes = Vec::new();
        encode(&sample(), &mut bytes).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_index(&p), Err(Error::IndexFormat(_))));
    }

    proptest! {
        #[test]
        fn encode_decode_identity(
            occs in prop::collection::vec((0u8..4, "[a-c]{1,3}", 0u8..4, 0usize..500), 0..40)
        ) {
            let idx = build_index(occs.into_iter().map(|(k, e, d, o)| EntityOccurrence {
                entity: e.clone(),
                kind: EntityKind::from_code(k).unwrap(),
                doc_id: format!("doc{d}"),
                offset: o,
                surface: e,
            }));
            let mut bytes = Vec::new();
            encode(&idx, &mut bytes).unwrap();
            let back = decode(&mut bytes.as_slice()).ok().unwrap();
            prop_assert_eq!(back, idx);
        }
    }
}
