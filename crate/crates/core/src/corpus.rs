//! Corpus loading.
//!
//! A corpus is either a directory tree of UTF-8 text files (one document per
//! file, keyed by relative path) or a JSONL file with one `{"id", "text"}`
//! object per line. Documents are always produced in lexicographic `doc_id`
//! order, and all offsets used elsewhere in the crate are counted in Unicode
//! scalar values of the normalized text.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub char_count: usize,
}

impl Document {
    /// Builds a document from raw text, applying newline normalization.
    pub fn new(doc_id: impl Into<String>, raw: &str) -> Self {
        let text = normalize_text(raw);
        let char_count = text.chars().count();
        Document {
            doc_id: doc_id.into(),
            text,
            char_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorpusFormat {
    PlainDir,
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "PLAIN_DIR" | "DIR" => Ok(CorpusFormat::PlainDir),
            "JSONL" => Ok(CorpusFormat::Jsonl),
            _ => Err(Error::InvalidArgument(format!(
                "unknown corpus format {s:?} (expected PLAIN_DIR or JSONL)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub source_path: String,
    pub format: CorpusFormat,
    pub doc_count: u64,
    pub total_chars: u64,
}

impl CorpusManifest {
    pub fn new(source_path: impl Into<String>, format: CorpusFormat) -> Self {
        CorpusManifest {
            source_path: source_path.into(),
            format,
            doc_count: 0,
            total_chars: 0,
        }
    }

    pub fn record(&mut self, doc: &Document) {
        self.doc_count += 1;
        self.total_chars += doc.char_count as u64;
    }
}

/// Replaces CRLF and lone CR with LF. Nothing else is touched.
pub fn normalize_text(raw: &str) -> String {
    if !raw.contains('\r') {
        return raw.to_owned();
    }
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\r' {
            if chars.peek() == Some(&'\n') {
                chars.next();
            }
            out.push('\n');
        } else {
            out.push(c);
        }
    }
    out
}

/// Decodes raw bytes as UTF-8 and normalizes newlines.
pub fn decode_document(doc_id: &str, bytes: Vec<u8>) -> Result<Document> {
    match String::from_utf8(bytes) {
        Ok(raw) => Ok(Document::new(doc_id, &raw)),
        Err(e) => Err(Error::Encoding {
            doc_id: doc_id.to_owned(),
            byte_offset: e.utf8_error().valid_up_to(),
        }),
    }
}

#[derive(Debug, Clone)]
enum Source {
    File(PathBuf),
    JsonlLine { offset: u64, len: usize, line: usize },
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: String,
    text: String,
}

/// A validated, ordered view of a corpus on disk.
///
/// Opening a corpus checks ids and JSONL syntax up front; document text is
/// read lazily so large corpora can be streamed.
#[derive(Debug, Clone)]
pub struct CorpusReader {
    path: PathBuf,
    format: CorpusFormat,
    entries: Vec<(String, Source)>,
}

impl CorpusReader {
    pub fn open(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        fs::metadata(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = match format {
            CorpusFormat::PlainDir => scan_dir(&path)?,
            CorpusFormat::Jsonl => scan_jsonl(&path)?,
        };
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateDocId(w[0].0.clone()));
        }
        Ok(CorpusReader {
            path,
            format,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn empty_manifest(&self) -> CorpusManifest {
        CorpusManifest::new(self.path.display().to_string(), self.format)
    }

    /// Streams documents in `doc_id` order.
    pub fn documents(&self) -> Documents<'_> {
        Documents {
            reader: self,
            next: 0,
            jsonl: None,
        }
    }

    pub fn load_all(&self) -> Result<(Vec<Document>, CorpusManifest)> {
        let mut manifest = self.empty_manifest();
        let mut docs = Vec::with_capacity(self.entries.len());
        for doc in self.documents() {
            let doc = doc?;
            manifest.record(&doc);
            docs.push(doc);
        }
        Ok((docs, manifest))
    }
}

/// Opens and fully loads a corpus.
pub fn load_corpus(
    path: impl AsRef<Path>,
    format: CorpusFormat,
) -> Result<(Vec<Document>, CorpusManifest)> {
    CorpusReader::open(path, format)?.load_all()
}

pub struct Documents<'a> {
    reader: &'a CorpusReader,
    next: usize,
    jsonl: Option<File>,
}

impl Documents<'_> {
    fn read(&mut self, doc_id: &str, source: &Source) -> Result<Document> {
        match source {
            Source::File(p) => {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                decode_document(doc_id, bytes)
            }
            Source::JsonlLine { offset, len, line } => {
                let path = &self.reader.path;
                if self.jsonl.is_none() {
                    self.jsonl = Some(File::open(path).map_err(|e| Error::io(path, e))?);
                }
                let file = self.jsonl.as_mut().expect("opened above");
                let mut buf = vec![0u8; *len];
                file.seek(SeekFrom::Start(*offset))
                    .and_then(|_| file.read_exact(&mut buf))
                    .map_err(|e| Error::io(path, e))?;
                let rec: JsonlRecord =
                    serde_json::from_slice(&buf).map_err(|e| Error::Malformed {
                        path: path.clone(),
                        line: *line,
                        message: e.to_string(),
                    })?;
                Ok(Document::new(rec.id, &rec.text))
            }
        }
    }
}

impl Iterator for Documents<'_> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        let (doc_id, source) = self.reader.entries.get(self.next)?;
        self.next += 1;
        Some(self.read(doc_id, source))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.reader.entries.len() - self.next;
        (left, Some(left))
    }
}

fn scan_dir(root: &Path) -> Result<Vec<(String, Source)>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        let doc_id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        out.push((doc_id, Source::File(entry.path().to_path_buf())));
    }
    Ok(out)
}

fn scan_jsonl(path: &Path) -> Result<Vec<(String, Source)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut buf = Vec::new();
    let mut offset = 0u64;
    let mut line = 0usize;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line += 1;
        let start = offset;
        offset += n as u64;
        let body = buf.trim_ascii();
        if body.is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        // Validate the full record shape now so errors carry a line number.
        let JsonlRecord { id, .. } =
            serde_json::from_slice(body).map_err(|e| malformed(e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateDocId(id));
        }
        out.push((
            id,
            Source::JsonlLine {
                offset: start,
                len: n,
                line,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_only_newlines() {
        assert_eq!(normalize_text("a\r\nb"), "a\nb");
        assert_eq!(normalize_text("A  B"), "A  B");
        assert_eq!(normalize_text("x\ry"), "x\ny");
        assert_eq!(normalize_text("\r\r\n\n"), "\n\n\n");
    }

    #[test]
    fn plain_dir_sorted_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "yo").unwrap();
        fs::write(dir.path().join("a.txt"), "hi").unwrap();
        let (docs, manifest) = load_corpus(dir.path(), CorpusFormat::PlainDir).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["a.txt", "b.txt"]);
        assert_eq!(manifest.doc_count, 2);
        assert_eq!(manifest.total_chars, 4);
    }

    #[test]
    fn nested_dirs_use_slash_ids() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("x/y")).unwrap();
        fs::write(dir.path().join("x/y/z.txt"), "é\r\n").unwrap();
        let (docs, _) = load_corpus(dir.path(), CorpusFormat::PlainDir).unwrap();
        assert_eq!(docs[0].doc_id, "x/y/z.txt");
        assert_eq!(docs[0].text, "é\n");
        assert_eq!(docs[0].char_count, 2);
    }

    #[test]
    fn jsonl_crlf_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"id\":\"d1\",\"text\":\"x\\r\\ny\",\"extra\":1}\n").unwrap();
        let (docs, _) = load_corpus(&p, CorpusFormat::Jsonl).unwrap();
        assert_eq!(docs[0].text, "x\ny");
        assert_eq!(docs[0].char_count, 3);
    }

    #[test]
    fn jsonl_duplicate_id_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(
            &p,
            "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d1\",\"text\":\"b\"}\n",
        )
        .unwrap();
        let err = CorpusReader::open(&p, CorpusFormat::Jsonl).unwrap_err();
        assert!(matches!(err, Error::DuplicateDocId(id) if id == "d1"));
    }

    #[test]
    fn jsonl_malformed_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"id\":\"d1\",\"text\":\"a\"}\n\n{\"id\":\"d2\"}\n").unwrap();
        match CorpusReader::open(&p, CorpusFormat::Jsonl).unwrap_err() {
            Error::Malformed { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn jsonl_order_is_lexicographic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(
            &p,
            "{\"id\":\"z\",\"text\":\"last\"}\n{\"id\":\"a\",\"text\":\"first\"}\n",
        )
        .unwrap();
        let (docs, _) = load_corpus(&p, CorpusFormat::Jsonl).unwrap();
        assert_eq!(docs[0].text, "first");
        assert_eq!(docs[1].text, "last");
    }

    #[test]
    fn invalid_utf8_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.txt"), b"ok\xffno").unwrap();
        let err = load_corpus(dir.path(), CorpusFormat::PlainDir).unwrap_err();
        assert!(
            matches!(err, Error::Encoding { ref doc_id, byte_offset: 2 } if doc_id == "bad.txt")
        );
    }

    #[test]
    fn missing_path_names_it() {
        let err = CorpusReader::open("/nonexistent/corpus", CorpusFormat::PlainDir).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus"));
    }
}
