//! Entity extraction: emails, phone numbers and roster terms, each reported
//! with the character offset of its first character.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const DEFAULT_PHONE_DIGITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityKind {
    Email,
    Phone,
    Name,
    Generic,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [
        EntityKind::Email,
        EntityKind::Phone,
        EntityKind::Name,
        EntityKind::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Email => "EMAIL",
            EntityKind::Phone => "PHONE",
            EntityKind::Name => "NAME",
            EntityKind::Generic => "GENERIC",
        }
    }

    /// Position in [`EntityKind::ALL`]; used as the on-disk kind tag.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Kinds found by roster-style literal search rather than a pattern.
    pub fn is_term(self) -> bool {
        matches!(self, EntityKind::Name | EntityKind::Generic)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EMAIL" => Ok(EntityKind::Email),
            "PHONE" => Ok(EntityKind::Phone),
            "NAME" => Ok(EntityKind::Name),
            "GENERIC" => Ok(EntityKind::Generic),
            other => Err(Error::InvalidArgument(format!("unknown entity kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityOccurrence {
    pub entity: String,
    pub kind: EntityKind,
    pub doc_id: String,
    pub offset: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityPair {
    pub key: String,
    pub target: String,
    pub key_kind: EntityKind,
    pub target_kind: EntityKind,
}

impl EntityPair {
    /// Builds a pair from raw strings, canonicalizing both sides.
    pub fn new(
        key: &str,
        key_kind: EntityKind,
        target: &str,
        target_kind: EntityKind,
        phone_digits: usize,
    ) -> Result<Self> {
        let key = canonical_or_err(key_kind, key, phone_digits)?;
        let target = canonical_or_err(target_kind, target, phone_digits)?;
        if key == target {
            return Err(Error::InvalidArgument(format!(
                "pair key and target are identical: {key:?}"
            )));
        }
        Ok(EntityPair {
            key,
            target,
            key_kind,
            target_kind,
        })
    }

    pub fn reversed(&self) -> EntityPair {
        EntityPair {
            key: self.target.clone(),
            target: self.key.clone(),
            key_kind: self.target_kind,
            target_kind: self.key_kind,
        }
    }
}

fn canonical_or_err(kind: EntityKind, raw: &str, phone_digits: usize) -> Result<String> {
    let canon = canonicalize(kind, raw, phone_digits);
    let valid = match kind {
        EntityKind::Email => email_regex()
            .find(&canon)
            .is_some_and(|m| m.start() == 0 && m.end() == canon.len()),
        EntityKind::Phone => canon.len() == phone_digits,
        EntityKind::Name | EntityKind::Generic => !canon.is_empty(),
    };
    if valid {
        Ok(canon)
    } else {
        Err(Error::InvalidArgument(format!(
            "{raw:?} is not a valid {kind} value"
        )))
    }
}

/// Canonical form of an entity string under its kind's rule.
///
/// EMAIL: trimmed, lowercased. PHONE: digits only, with a leading country
/// digit `1` dropped when it makes the number one digit too long.
/// NAME/GENERIC: trimmed with inner whitespace runs collapsed; case kept.
pub fn canonicalize(kind: EntityKind, raw: &str, phone_digits: usize) -> String {
    match kind {
        EntityKind::Email => raw.trim().to_lowercase(),
        EntityKind::Phone => canonical_phone(raw, phone_digits),
        EntityKind::Name | EntityKind::Generic => {
            raw.split_whitespace().collect::<Vec<_>>().join(" ")
        }
    }
}

fn canonical_phone(raw: &str, phone_digits: usize) -> String {
    let digits: String = raw.chars().filter(char::is_ascii_digit).collect();
    if digits.len() == phone_digits + 1 && digits.starts_with('1') {
        digits[1..].to_owned()
    } else {
        digits
    }
}

/// Key under which an entity is looked up in an index. Term kinds are
/// matched case-insensitively, so their keys are case-folded.
pub fn lookup_key(kind: EntityKind, canonical: &str) -> String {
    if kind.is_term() {
        fold_case(canonical)
    } else {
        canonical.to_owned()
    }
}

pub(crate) fn email_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,24}").expect("email regex")
    })
}

// Digits joined by at most one separator (space, dot, dash) and optional
// parentheses, with an optional leading "+".
pub(crate) fn phone_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\+?\(?[0-9](?:[0-9]|[ .\-]\(?[0-9]|\)[ .\-]?\(?[0-9]|\([0-9])*")
            .expect("phone regex")
    })
}

/// Lowercases each char whose lowercase form is a single char of the same
/// UTF-8 width, so byte and char offsets line up with the input.
pub fn fold_case(text: &str) -> String {
    if text.is_ascii() {
        return text.to_ascii_lowercase();
    }
    text.chars()
        .map(|c| {
            let mut lower = c.to_lowercase();
            match (lower.next(), lower.next()) {
                (Some(l), None) if l.len_utf8() == c.len_utf8() => l,
                _ => c,
            }
        })
        .collect()
}

/// Converts non-decreasing byte offsets into char offsets in one forward pass.
pub(crate) struct CharCursor<'a> {
    bytes: &'a [u8],
    byte: usize,
    chars: usize,
}

impl<'a> CharCursor<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        CharCursor {
            bytes: text.as_bytes(),
            byte: 0,
            chars: 0,
        }
    }

    pub(crate) fn char_offset(&mut self, byte: usize) -> usize {
        if byte < self.byte {
            self.byte = 0;
            self.chars = 0;
        }
        self.chars += self.bytes[self.byte..byte]
            .iter()
            .filter(|&&b| (b & 0xC0) != 0x80)
            .count();
        self.byte = byte;
        self.chars
    }
}

/// A match inside one text: canonical entity, kind, char offset and the byte
/// range of the surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hit {
    pub entity: String,
    pub kind: EntityKind,
    pub offset: usize,
    pub byte_start: usize,
    pub byte_end: usize,
}

impl Hit {
    fn into_occurrence(self, doc: &Document) -> EntityOccurrence {
        EntityOccurrence {
            surface: doc.text[self.byte_start..self.byte_end].to_owned(),
            entity: self.entity,
            kind: self.kind,
            doc_id: doc.doc_id.clone(),
            offset: self.offset,
        }
    }
}

pub fn email_hits(text: &str) -> Vec<Hit> {
    let mut cursor = CharCursor::new(text);
    email_regex()
        .find_iter(text)
        .map(|m| Hit {
            entity: m.as_str().to_lowercase(),
            kind: EntityKind::Email,
            offset: cursor.char_offset(m.start()),
            byte_start: m.start(),
            byte_end: m.end(),
        })
        .collect()
}

pub fn phone_hits(text: &str, phone_digits: usize) -> Vec<Hit> {
    let mut cursor = CharCursor::new(text);
    let mut out = Vec::new();
    for m in phone_regex().find_iter(text) {
        let glued = text[..m.start()]
            .chars()
            .next_back()
            .is_some_and(|c| c.is_alphanumeric() || c == '_');
        if glued {
            continue;
        }
        let canon = canonical_phone(m.as_str(), phone_digits);
        if canon.len() != phone_digits {
            continue;
        }
        out.push(Hit {
            entity: canon,
            kind: EntityKind::Phone,
            offset: cursor.char_offset(m.start()),
            byte_start: m.start(),
            byte_end: m.end(),
        });
    }
    out
}

pub fn extract_emails(doc: &Document) -> Vec<EntityOccurrence> {
    email_hits(&doc.text)
        .into_iter()
        .map(|h| h.into_occurrence(doc))
        .collect()
}

pub fn extract_phones(doc: &Document, digit_len: usize) -> Result<Vec<EntityOccurrence>> {
    if digit_len < 7 {
        return Err(Error::InvalidArgument(format!(
            "phone digit length must be at least 7, got {digit_len}"
        )));
    }
    Ok(phone_hits(&doc.text, digit_len)
        .into_iter()
        .map(|h| h.into_occurrence(doc))
        .collect())
}

/// Case-insensitive, boundary-checked simultaneous search for a fixed set of
/// terms (roster names, LAMA subjects/objects, ...).
#[derive(Debug, Clone)]
pub struct TermMatcher {
    automaton: Option<AhoCorasick>,
    // pattern id -> (canonical spelling, kind)
    terms: Vec<(String, EntityKind)>,
}

impl TermMatcher {
    /// Terms whose folded forms coincide are merged; the lexicographically
    /// smallest spelling wins.
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, EntityKind)>,
        S: AsRef<str>,
    {
        let mut canon: Vec<(String, EntityKind)> = terms
            .into_iter()
            .map(|(s, k)| (canonicalize(k, s.as_ref(), DEFAULT_PHONE_DIGITS), k))
            .collect();
        if canon.iter().any(|(s, _)| s.is_empty()) {
            return Err(Error::InvalidArgument("empty term in roster".into()));
        }
        canon.sort();
        let mut seen = HashSet::new();
        canon.retain(|(s, k)| seen.insert((fold_case(s), *k)));

        let automaton = if canon.is_empty() {
            None
        } else {
            let patterns: Vec<String> = canon.iter().map(|(s, _)| fold_case(s)).collect();
            Some(
                AhoCorasickBuilder::new()
                    .match_kind(MatchKind::Standard)
                    .build(&patterns)
                    .map_err(|e| Error::InvalidArgument(format!("term automaton: {e}")))?,
            )
        };
        Ok(TermMatcher {
            automaton,
            terms: canon,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn hits(&self, text: &str) -> Vec<Hit> {
        let Some(ac) = &self.automaton else {
            return Vec::new();
        };
        let folded = fold_case(text);
        debug_assert_eq!(folded.len(), text.len());
        let mut raw: Vec<(usize, usize, usize)> = ac
            .find_overlapping_iter(&folded)
            .filter(|m| on_boundary(&folded, m.start(), m.end()))
            .map(|m| (m.start(), m.end(), m.pattern().as_usize()))
            .collect();
        raw.sort_unstable();
        let mut cursor = CharCursor::new(text);
        raw.into_iter()
            .map(|(start, end, pid)| {
                let (entity, kind) = &self.terms[pid];
                Hit {
                    entity: entity.clone(),
                    kind: *kind,
                    offset: cursor.char_offset(start),
                    byte_start: start,
                    byte_end: end,
                }
            })
            .collect()
    }

    pub fn find(&self, doc: &Document) -> Vec<EntityOccurrence> {
        self.hits(&doc.text)
            .into_iter()
            .map(|h| h.into_occurrence(doc))
            .collect()
    }
}

fn on_boundary(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}

pub fn find_names(doc: &Document, roster: &[String]) -> Result<Vec<EntityOccurrence>> {
    if roster.is_empty() {
        return Err(Error::InvalidArgument("roster is empty".into()));
    }
    let matcher = TermMatcher::new(roster.iter().map(|n| (n, EntityKind::Name)))?;
    Ok(matcher.find(doc))
}

/// Everything pulled out of one document by [`Extractor`].
#[derive(Debug, Clone)]
pub struct Extractor {
    pub phone_digits: usize,
    pub emails: bool,
    pub phones: bool,
    terms: Option<TermMatcher>,
}

impl Extractor {
    pub fn new(phone_digits: usize) -> Self {
        Extractor {
            phone_digits,
            emails: true,
            phones: true,
            terms: None,
        }
    }

    pub fn with_terms(mut self, terms: TermMatcher) -> Self {
        self.terms = (!terms.is_empty()).then_some(terms);
        self
    }

    /// All hits in `text`, ordered by (offset, kind, entity).
    pub fn hits(&self, text: &str) -> Vec<Hit> {
        let mut hits = Vec::new();
        if self.emails {
            hits.extend(email_hits(text));
        }
        if self.phones {
            hits.extend(phone_hits(text, self.phone_digits));
        }
        if let Some(t) = &self.terms {
            hits.extend(t.hits(text));
        }
        hits.sort_by(|a, b| {
            (a.offset, a.kind, &a.entity, a.byte_end).cmp(&(b.offset, b.kind, &b.entity, b.byte_end))
        });
        hits
    }

    pub fn extract(&self, doc: &Document) -> Vec<EntityOccurrence> {
        self.hits(&doc.text)
            .into_iter()
            .map(|h| h.into_occurrence(doc))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairsFile {
    pub rows: Vec<EntityPair>,
    pub source: String,
}

impl PairsFile {
    /// NAME and GENERIC entities referenced by the pairs, for term search.
    pub fn terms(&self) -> Vec<(String, EntityKind)> {
        let mut out = Vec::new();
        for p in &self.rows {
            if p.key_kind.is_term() {
                out.push((p.key.clone(), p.key_kind));
            }
            if p.target_kind.is_term() {
                out.push((p.target.clone(), p.target_kind));
            }
        }
        out
    }
}

/// Loads a four-column TSV pairs file: key, target, key_kind, target_kind.
pub fn load_pairs(path: impl AsRef<Path>, phone_digits: usize) -> Result<PairsFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path, phone_digits)
}

pub fn parse_pairs(text: &str, path: &Path, phone_digits: usize) -> Result<PairsFile> {
    let mut rows = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: PathBuf::from(path),
            line: line_no,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(malformed(format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        let key_kind: EntityKind = cols[2].parse().map_err(|e: Error| malformed(e.to_string()))?;
        let target_kind: EntityKind = cols[3].parse().map_err(|e: Error| malformed(e.to_string()))?;
        let pair = EntityPair::new(cols[0], key_kind, cols[1], target_kind, phone_digits)
            .map_err(|e| malformed(e.to_string()))?;
        let dedup_key = (
            lookup_key(key_kind, &pair.key),
            lookup_key(target_kind, &pair.target),
        );
        if seen.insert(dedup_key, line_no).is_some() {
            return Err(Error::DuplicatePair {
                path: PathBuf::from(path),
                line: line_no,
                key: pair.key,
                target: pair.target,
            });
        }
        rows.push(pair);
    }
    Ok(PairsFile {
        rows,
        source: path.display().to_string(),
    })
}

/// One name per line; blank lines and `#` comments are skipped.
pub fn load_roster(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(text: &str) -> Document {
        Document::new("d", text)
    }

    #[test]
    fn email_from_signature_block() {
        let d = doc("Have a great day =)\nThe Travel Agency in the Park heather.davis@travelpark.com");
        let occ = extract_emails(&d);
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].entity, "heather.davis@travelpark.com");
    }

    #[test]
    fn email_none() {
        assert!(extract_emails(&doc("no at-sign here")).is_empty());
    }

    #[test]
    fn email_case_and_offsets() {
        let occ = extract_emails(&doc("A@B.CO x a@b.co"));
        let got: Vec<_> = occ.iter().map(|o| (o.entity.as_str(), o.offset)).collect();
        // "A@B.CO" spans 0..6, then " x " puts the second match at 9.
        assert_eq!(got, [("a@b.co", 0), ("a@b.co", 9)]);
        assert_eq!(occ[0].surface, "A@B.CO");
    }

    #[test]
    fn email_offsets_count_chars_not_bytes() {
        let occ = extract_emails(&doc("héllo ünï a@b.co"));
        assert_eq!(occ[0].offset, 10);
    }

    #[test]
    fn phone_parenthesized() {
        let occ = extract_phones(&doc("call at (713) 555-0142"), 10).unwrap();
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].entity, "7135550142");
        assert_eq!(occ[0].surface, "(713) 555-0142");
        assert_eq!(occ[0].offset, 8);
    }

    #[test]
    fn phone_too_short() {
        assert!(extract_phones(&doc("order #12345"), 10).unwrap().is_empty());
    }

    #[test]
    fn phone_country_code_dropped() {
        let occ = extract_phones(&doc("+1 713-555-0142"), 10).unwrap();
        assert_eq!(occ[0].entity, "7135550142");
        let occ = extract_phones(&doc("1.713.555.0142"), 10).unwrap();
        assert_eq!(occ[0].entity, "7135550142");
    }

    #[test]
    fn phone_nine_digit_reading() {
        let occ = extract_phones(&doc("x: 123-456-789 and 713-555-0142"), 9).unwrap();
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].entity, "123456789");
    }

    #[test]
    fn phone_digit_len_guard() {
        assert!(extract_phones(&doc("x"), 6).is_err());
    }

    #[test]
    fn phone_glued_to_word_is_skipped() {
        assert!(extract_phones(&doc("id7135550142"), 10).unwrap().is_empty());
    }

    #[test]
    fn names_boundary_and_case() {
        let roster = vec!["Karen Arnold".to_owned()];
        let occ = find_names(&doc("From: Karen Arnold <ka@x.com>"), &roster).unwrap();
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].offset, 6);
        assert!(find_names(&doc("karen arnoldson"), &roster).unwrap().is_empty());
        let occ = find_names(&doc("KAREN ARNOLD x Karen Arnold"), &roster).unwrap();
        assert_eq!(occ.len(), 2);
        assert!(occ.iter().all(|o| o.entity == "Karen Arnold"));
        assert_eq!(occ[0].surface, "KAREN ARNOLD");
        assert_eq!(occ[1].offset, 15);
    }

    #[test]
    fn names_overlapping_all_reported() {
        let roster = vec!["Karen Arnold".to_owned(), "Arnold Smith".to_owned()];
        let occ = find_names(&doc("Karen Arnold Smith"), &roster).unwrap();
        let got: Vec<_> = occ.iter().map(|o| (o.entity.as_str(), o.offset)).collect();
        assert_eq!(got, [("Karen Arnold", 0), ("Arnold Smith", 6)]);
    }

    #[test]
    fn names_non_ascii() {
        let roster = vec!["Zoë Åberg".to_owned()];
        let occ = find_names(&doc("é ZOË ÅBERG!"), &roster).unwrap();
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].offset, 2);
        assert_eq!(occ[0].surface, "ZOË ÅBERG");
    }

    #[test]
    fn empty_roster_rejected() {
        assert!(find_names(&doc("x"), &[]).is_err());
        assert!(find_names(&doc("x"), &[" ".to_owned()]).is_err());
    }

    fn pairs(text: &str) -> Result<PairsFile> {
        parse_pairs(text, Path::new("pairs.tsv"), 10)
    }

    #[test]
    fn pairs_canonicalized() {
        let p = pairs("# header\nKaren Arnold\tKaren@X.com\tNAME\tEMAIL\n").unwrap();
        assert_eq!(p.rows.len(), 1);
        assert_eq!(p.rows[0].key, "Karen Arnold");
        assert_eq!(p.rows[0].target, "karen@x.com");
        let p = pairs("Ann\t+1 (713) 555-0142\tNAME\tPHONE\n").unwrap();
        assert_eq!(p.rows[0].target, "7135550142");
    }

    #[test]
    fn pairs_duplicate_rejected() {
        let row = "Karen Arnold\tkaren@x.com\tNAME\tEMAIL\n";
        let err = pairs(&format!("{row}{row}")).unwrap_err();
        assert!(matches!(err, Error::DuplicatePair { line: 2, .. }));
    }

    #[test]
    fn pairs_malformed_row() {
        let err = pairs("ok\tok@x.com\tNAME\tEMAIL\nKaren\tk@x.com\tNAME\n").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
        let err = pairs("Karen\tnot-an-email\tNAME\tEMAIL\n").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 1, .. }));
        let err = pairs("Karen\tKaren\tNAME\tNAME\n").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 1, .. }));
    }

    proptest! {
        #[test]
        fn canonicalization_is_idempotent(s in "[ -~]{0,30}", k in 0u8..4, digits in 7usize..12) {
            let kind = EntityKind::from_code(k).unwrap();
            let once = canonicalize(kind, &s, digits);
            prop_assert_eq!(canonicalize(kind, &once, digits), once.clone());
        }

        #[test]
        fn surfaces_reread_at_offsets(text in "[a-zA-Z0-9@. ()+\\-éß\n]{0,200}") {
            let d = doc(&text);
            let chars: Vec<char> = d.text.chars().collect();
            let roster = vec!["ab".to_owned(), "é a".to_owned()];
            let mut all = extract_emails(&d);
            all.extend(extract_phones(&d, 7).unwrap());
            all.extend(find_names(&d, &roster).unwrap());
            for o in all {
                let n = o.surface.chars().count();
                prop_assert!(o.offset + n <= d.char_count);
                let reread: String = chars[o.offset..o.offset + n].iter().collect();
                prop_assert_eq!(reread, o.surface);
            }
        }
    }
}
