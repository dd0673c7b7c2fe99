use std::collections::BTreeSet;

use aesaudit::aes::{aes, read_scores_csv, score_all, write_scores_csv, AesConfig};
use aesaudit::corpus::{load_corpus, CorpusFormat};
use aesaudit::eval::{judge, summarize, EvalSummary};
use aesaudit::extract::{load_pairs, EntityKind, EntityOccurrence, EntityPair};
use aesaudit::index::{build_index, count_cooc, count_cooc_instrumented, read_index, write_index, DistanceBuckets};
use aesaudit::probe::{Decoding, ProbeRecord, ProbeStatus, RequestParams};
use proptest::prelude::*;
use rust_decimal::Decimal;

fn occ(entity: &str, doc: u8, offset: usize) -> EntityOccurrence {
    EntityOccurrence {
        entity: entity.into(),
        kind: EntityKind::Email,
        doc_id: format!("d{doc}"),
        offset,
        surface: entity.into(),
    }
}

fn occurrences() -> impl Strategy<Value = Vec<(bool, u8, usize)>> {
    prop::collection::vec((any::<bool>(), 0u8..4, 0usize..600), 0..60)
}

fn pair() -> EntityPair {
    EntityPair::new("a@x.io", EntityKind::Email, "b@x.io", EntityKind::Email, 10).unwrap()
}

proptest! {
    #[test]
    fn histogram_is_symmetric_and_bounded(raw in occurrences()) {
        let index = build_index(raw.iter().map(|&(a, d, o)| occ(if a { "a@x.io" } else { "b@x.io" }, d, o)));
        let buckets = DistanceBuckets::default();
        let p = pair();
        let (h, stats) = count_cooc_instrumented(&index, &p, &buckets);
        let r = count_cooc(&index, &p.reversed(), &buckets);
        prop_assert_eq!(&h.bucket_counts, &r.bucket_counts);
        prop_assert_eq!(h.bucket_counts.iter().sum::<u64>(), h.total_within_max);
        prop_assert_eq!(stats.pairs_visited, h.total_within_max);
        let nk = index.total(EntityKind::Email, "a@x.io");
        let nt = index.total(EntityKind::Email, "b@x.io");
        prop_assert!(h.total_within_max <= nk * nt);
        prop_assert!(stats.pointer_steps <= 2 * nt);
        let cum = h.cumulative();
        prop_assert!(cum.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn aes_grows_with_any_extra_cooccurrence(raw in occurrences(), extra in 0usize..200, doc in 0u8..4) {
        let mut occs: Vec<_> = raw.iter().map(|&(a, d, o)| occ(if a { "a@x.io" } else { "b@x.io" }, d, o)).collect();
        let config = AesConfig::default();
        let before = aes(&count_cooc(&build_index(occs.clone()), &pair(), &config.buckets), &config).unwrap().score;
        occs.push(occ("a@x.io", doc, 10_000));
        occs.push(occ("b@x.io", doc, 10_000 + extra));
        let after = aes(&count_cooc(&build_index(occs), &pair(), &config.buckets), &config).unwrap().score;
        prop_assert!(after > before);
        prop_assert!(before >= Decimal::ZERO);
    }

    #[test]
    fn index_file_round_trips(raw in occurrences()) {
        let mut index = build_index(raw.iter().map(|&(a, d, o)| occ(if a { "a@x.io" } else { "b@x.io" }, d, o)));
        index.buckets = Some(DistanceBuckets::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.aaix");
        write_index(&index, &path).unwrap();
        let back = read_index(&path).unwrap();
        prop_assert_eq!(back.posting_count(), index.posting_count());
        prop_assert_eq!(back.doc_ids(), index.doc_ids());
        prop_assert_eq!(&back.buckets, &index.buckets);
        let b = DistanceBuckets::default();
        prop_assert_eq!(count_cooc(&back, &pair(), &b), count_cooc(&index, &pair(), &b));
    }

    #[test]
    fn summary_counts_stay_ordered(n in 1u64..5000, a in 0u64..5000, b in 0u64..5000, c in 0u64..5000) {
        let mut v = [a % (n + 1), b % (n + 1), c % (n + 1)];
        v.sort_unstable();
        let [verb, correct, pred] = v;
        let s = EvalSummary::from_counts(n, pred, correct, verb).unwrap();
        prop_assert!(s.accuracy.hundredths() <= 10_000);
        prop_assert!(s.non_verbatim_accuracy <= s.accuracy);
        if correct < pred {
            prop_assert!(EvalSummary::from_counts(n, correct, pred, verb).is_err());
        }
    }

    #[test]
    fn judging_never_credits_a_different_email(local in "[a-z]{1,8}", other in "[a-z]{1,8}") {
        prop_assume!(local != other);
        let target = format!("{local}@corp.com");
        let r = record(&target, &format!(" {other}@corp.com"));
        let j = judge(&r, 10);
        prop_assert!(!j.correct);
        let s = summarize(&[j], 1).unwrap();
        prop_assert_eq!(s.n_predicted, 1);
        prop_assert_eq!(s.n_correct, 0);
    }
}

fn record(target: &str, generated: &str) -> ProbeRecord {
    ProbeRecord {
        template_id: "t".into(),
        pair: EntityPair::new("Jo Doe", EntityKind::Name, target, EntityKind::Email, 10).unwrap(),
        prompt: "the email address of Jo Doe is".into(),
        generated: generated.into(),
        model_id: "m".into(),
        timestamp: String::new(),
        request_params: RequestParams { max_new_tokens: 100, decoding: Decoding::Greedy },
        status: ProbeStatus::Ok,
        error: None,
        attempts: 1,
    }
}

#[test]
fn plain_dir_and_jsonl_corpora_index_alike() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain");
    std::fs::create_dir(&plain).unwrap();
    let texts = [("a.txt", "Jo Doe <jo@corp.com>\r\nCall 713-555-0142"), ("b.txt", "über café jo@corp.com")];
    let mut jsonl = String::new();
    for (id, t) in texts {
        std::fs::write(plain.join(id), t).unwrap();
        jsonl.push_str(&serde_json::json!({"id": id, "text": t}).to_string());
        jsonl.push('\n');
    }
    let jpath = dir.path().join("c.jsonl");
    std::fs::write(&jpath, jsonl).unwrap();
    let (a, ma) = load_corpus(&plain, CorpusFormat::PlainDir).unwrap();
    let (b, mb) = load_corpus(&jpath, CorpusFormat::Jsonl).unwrap();
    assert_eq!(ma.total_chars, mb.total_chars);
    let ids = |d: &[aesaudit::corpus::Document]| d.iter().map(|x| (x.doc_id.clone(), x.text.clone())).collect::<BTreeSet<_>>();
    assert_eq!(ids(&a), ids(&b));
    assert!(a.iter().all(|d| !d.text.contains('\r')));
}

#[test]
fn scores_csv_round_trips_from_a_pairs_file() {
    let dir = tempfile::tempdir().unwrap();
    let pairs_path = dir.path().join("pairs.tsv");
    std::fs::write(&pairs_path, "# key\ttarget\tkind\tkind\nJo Doe\tjo@corp.com\tNAME\tEMAIL\nAl Roe\tal@corp.com\tNAME\tEMAIL\n").unwrap();
    let pairs = load_pairs(&pairs_path, 10).unwrap();
    let index = build_index([
        EntityOccurrence { entity: "jo doe".into(), kind: EntityKind::Name, doc_id: "d".into(), offset: 0, surface: "Jo Doe".into() },
        occ("jo@corp.com", 0, 8),
    ]
    .into_iter()
    .map(|mut o| {
        o.doc_id = "d".into();
        o
    }));
    let config = AesConfig::default();
    let rows = score_all(&index, &pairs, &config);
    let mut buf = Vec::new();
    write_scores_csv(&rows, &mut buf).unwrap();
    let back = read_scores_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), rows.len());
    for (b, r) in back.iter().zip(&rows) {
        assert_eq!((&b.key, &b.target), (&r.histogram.pair.key, &r.histogram.pair.target));
        assert_eq!(b.score, r.score.score);
        assert_eq!(b.bucket_counts, r.histogram.bucket_counts);
    }
    assert_eq!(back[0].score, Decimal::ONE);
    assert_eq!(back[1].score, Decimal::ZERO);
}
