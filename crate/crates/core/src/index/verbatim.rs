use std::collections::BTreeMap;

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};

use crate::corpus::{normalize_text, Document};
use crate::error::{Error, Result};
use crate::extract::CharCursor;

/// needle -> every (doc_id, char offset) where it occurs.
pub type VerbatimMatches = BTreeMap<String, Vec<(String, usize)>>;

/// Single-pass exact substring search for many needles at once.
#[derive(Debug)]
pub struct VerbatimScanner {
    needles: Vec<String>,
    automaton: AhoCorasick,
    found: Vec<Vec<(String, usize)>>,
}

impl VerbatimScanner {
    pub fn new<I, S>(needles: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut needles: Vec<String> = needles
            .into_iter()
            .map(|n| normalize_text(n.as_ref()))
            .collect();
        if needles.is_empty() || needles.iter().any(String::is_empty) {
            return Err(Error::InvalidArgument("verbatim needles must be non-empty".into()));
        }
        needles.sort();
        needles.dedup();
        let automaton = AhoCorasickBuilder::new()
            .match_kind(MatchKind::Standard)
            .build(&needles)
            .map_err(|e| Error::InvalidArgument(format!("needle automaton: {e}")))?;
        let found = vec![Vec::new(); needles.len()];
        Ok(VerbatimScanner {
            needles,
            automaton,
            found,
        })
    }

    pub fn scan(&mut self, doc: &Document) {
        let mut hits: Vec<(usize, usize)> = self
            .automaton
            .find_overlapping_iter(&doc.text)
            .map(|m| (m.start(), m.pattern().as_usize()))
            .collect();
        hits.sort_unstable();
        let mut cursor = CharCursor::new(&doc.text);
        for (start, pid) in hits {
            self.found[pid].push((doc.doc_id.clone(), cursor.char_offset(start)));
        }
    }

    pub fn finish(self) -> VerbatimMatches {
        self.needles.into_iter().zip(self.found).collect()
    }
}

/// Scans `docs` once and reports every position of every needle.
pub fn contains_verbatim<'a, I, S>(docs: I, needles: &[S]) -> Result<VerbatimMatches>
where
    I: IntoIterator<Item = &'a Document>,
    S: AsRef<str>,
{
    let mut scanner = VerbatimScanner::new(needles)?;
    for d in docs {
        scanner.scan(d);
    }
    Ok(scanner.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_hit() {
        let d = Document::new("doc", "xx abc yy");
        let m = contains_verbatim([&d], &["abc"]).unwrap();
        assert_eq!(m["abc"], [("doc".to_owned(), 3)]);
    }

    #[test]
    fn absent_needle_is_empty() {
        let d = Document::new("doc", "xx abc yy");
        let m = contains_verbatim([&d], &["zzz"]).unwrap();
        assert!(m["zzz"].is_empty());
    }

    #[test]
    fn overlapping_needles() {
        let d = Document::new("doc", "zabc");
        let m = contains_verbatim([&d], &["ab", "abc"]).unwrap();
        assert_eq!(m["ab"], [("doc".to_owned(), 1)]);
        assert_eq!(m["abc"], [("doc".to_owned(), 1)]);
    }

    #[test]
    fn empty_needles_rejected() {
        let d = Document::new("doc", "x");
        assert!(contains_verbatim([&d], &[] as &[&str]).is_err());
        assert!(contains_verbatim([&d], &[""]).is_err());
    }

    fn naive(docs: &[Document], needle: &str) -> Vec<(String, usize)> {
        let n: Vec<char> = needle.chars().collect();
        let mut out = Vec::new();
        for d in docs {
            let t: Vec<char> = d.text.chars().collect();
            for i in 0..t.len() {
                if t[i..].starts_with(&n) {
                    out.push((d.doc_id.clone(), i));
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn agrees_with_naive_scan(
            texts in prop::collection::vec("[abé\n]{0,40}", 1..5),
            needles in prop::collection::vec("[abé\n]{1,4}", 1..6),
        ) {
            let docs: Vec<Document> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document::new(format!("d{i}"), t))
                .collect();
            let m = contains_verbatim(docs.iter(), &needles).unwrap();
            for n in &needles {
                prop_assert_eq!(&m[n], &naive(&docs, n));
            }
        }
    }
}
