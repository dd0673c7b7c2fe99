//! Binned accuracy curves and the report bundle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::Path;
use std::str::FromStr;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::aes::{ScoreRow, ScoredPair};
use crate::error::{Error, Result};
use crate::eval::{summarize_settings, Judgment, Percent, SettingSummary};
use crate::extract::EntityKind;
use crate::index::OccurrenceIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BinScheme {
    Log,
    Linear,
}

impl FromStr for BinScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LOG" => Ok(BinScheme::Log),
            "LINEAR" => Ok(BinScheme::Linear),
            _ => Err(Error::InvalidArgument(format!("unknown bin scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub scheme: BinScheme,
    /// LOG only; must exceed 1.
    #[serde(default = "default_base")]
    pub base: f64,
    /// LINEAR only; must be positive.
    #[serde(default = "default_width")]
    pub width: Decimal,
    pub min_samples: u64,
}

fn default_base() -> f64 {
    10.0
}

fn default_width() -> Decimal {
    Decimal::ONE
}

impl BinSpec {
    pub fn log(base: f64, min_samples: u64) -> Self {
        BinSpec {
            scheme: BinScheme::Log,
            base,
            width: default_width(),
            min_samples,
        }
    }

    pub fn linear(width: Decimal, min_samples: u64) -> Self {
        BinSpec {
            scheme: BinScheme::Linear,
            base: default_base(),
            width,
            min_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_samples < 1 {
            return Err(Error::InvalidArgument("min_samples must be at least 1".into()));
        }
        match self.scheme {
            BinScheme::Log if !(self.base.is_finite() && self.base > 1.0) => Err(
                Error::InvalidArgument(format!("log base must exceed 1, got {}", self.base)),
            ),
            BinScheme::Linear if self.width <= Decimal::ZERO => Err(Error::InvalidArgument(
                format!("bin width must be positive, got {}", self.width),
            )),
            _ => Ok(()),
        }
    }

    /// Bin number of `x` (x >= 0).
    pub fn bin_of(&self, x: Decimal) -> i64 {
        match self.scheme {
            BinScheme::Log => log_bin(x.to_f64().unwrap_or(f64::MAX), self.base),
            BinScheme::Linear => (x / self.width).floor().to_i64().unwrap_or(i64::MAX),
        }
    }

    fn label_and_center(&self, k: i64) -> (String, f64) {
        match self.scheme {
            BinScheme::Log => {
                let lo = self.base.powi(k as i32);
                let hi = self.base.powi(k as i32 + 1);
                (format!("[{}, {})", fmt_num(lo), fmt_num(hi)), (lo * hi).sqrt())
            }
            BinScheme::Linear => {
                let lo = self.width * Decimal::from(k);
                let hi = lo + self.width;
                let center = (lo + hi) / Decimal::TWO;
                (
                    format!("[{}, {})", lo.normalize(), hi.normalize()),
                    center.to_f64().unwrap_or(f64::NAN),
                )
            }
        }
    }
}

fn log_bin(x: f64, base: f64) -> i64 {
    let x = x.max(1.0);
    let mut k = (x.ln() / base.ln()).floor() as i64;
    // correct float error at exact powers
    while base.powi(k as i32 + 1) <= x {
        k += 1;
    }
    while k > 0 && base.powi(k as i32) > x {
        k -= 1;
    }
    k.max(0)
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.4}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bin_label: String,
    pub x_center: f64,
    pub mean_accuracy: Percent,
    pub n_samples: u64,
}

/// Emitted points plus the bins held back by `min_samples`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub suppressed: Vec<CurvePoint>,
}

impl Curve {
    pub fn total_samples(&self) -> u64 {
        self.points
            .iter()
            .chain(&self.suppressed)
            .map(|p| p.n_samples)
            .sum()
    }
}

/// Mean accuracy per bin of x; bins with fewer than `min_samples` values are
/// moved to `suppressed`.
pub fn bin_curve(values: &[(Decimal, bool)], spec: &BinSpec) -> Result<Curve> {
    spec.validate()?;
    if let Some((x, _)) = values.iter().find(|(x, _)| x.is_sign_negative() && !x.is_zero()) {
        return Err(Error::InvalidArgument(format!("negative x value {x}")));
    }
    let mut bins: BTreeMap<i64, (u64, u64)> = BTreeMap::new();
    for &(x, correct) in values {
        let e = bins.entry(spec.bin_of(x)).or_default();
        e.0 += 1;
        e.1 += u64::from(correct);
    }
    let mut curve = Curve::default();
    for (k, (n, hits)) in bins {
        let (bin_label, x_center) = spec.label_and_center(k);
        let p = CurvePoint {
            bin_label,
            x_center,
            mean_accuracy: Percent::ratio(hits, n),
            n_samples: n,
        };
        if n >= spec.min_samples {
            curve.points.push(p);
        } else {
            curve.suppressed.push(p);
        }
    }
    Ok(curve)
}

/// Accuracy at each distance threshold, each pair weighted by its cumulative
/// co-occurrence count within that threshold. Zero-weight thresholds are omitted.
pub fn accuracy_vs_distance(
    entries: &[(bool, Vec<u64>)],
    thresholds: &[u64],
    min_samples: u64,
) -> Result<Curve> {
    if let Some((_, c)) = entries.iter().find(|(_, c)| c.len() != thresholds.len()) {
        return Err(Error::InvalidArgument(format!(
            "{} cumulative counts for {} thresholds",
            c.len(),
            thresholds.len()
        )));
    }
    let mut curve = Curve::default();
    for (i, &t) in thresholds.iter().enumerate() {
        let (mut weight, mut hits) = (0u64, 0u64);
        for (correct, cum) in entries {
            weight += cum[i];
            if *correct {
                hits += cum[i];
            }
        }
        if weight == 0 {
            continue;
        }
        let p = CurvePoint {
            bin_label: format!("d<={t}"),
            x_center: t as f64,
            mean_accuracy: Percent::ratio(hits, weight),
            n_samples: weight,
        };
        if weight >= min_samples {
            curve.points.push(p);
        } else {
            curve.suppressed.push(p);
        }
    }
    Ok(curve)
}

/// Per-pair inputs to the report, keyed by canonical (key, target).
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub key: String,
    pub target: String,
    pub score: Decimal,
    pub bucket_counts: Vec<u64>,
}

impl PairStats {
    pub fn cumulative(&self) -> Vec<u64> {
        self.bucket_counts
            .iter()
            .scan(0u64, |acc, c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }

    pub fn total_within_max(&self) -> u64 {
        self.bucket_counts.iter().sum()
    }
}

impl From<&ScoredPair> for PairStats {
    fn from(s: &ScoredPair) -> Self {
        PairStats {
            key: s.histogram.pair.key.clone(),
            target: s.histogram.pair.target.clone(),
            score: s.score.score,
            bucket_counts: s.histogram.bucket_counts.clone(),
        }
    }
}

impl From<&ScoreRow> for PairStats {
    fn from(r: &ScoreRow) -> Self {
        PairStats {
            key: r.key.clone(),
            target: r.target.clone(),
            score: r.score,
            bucket_counts: r.bucket_counts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Bins for co-occurrence frequency and occurrence sum.
    pub count_bins: BinSpec,
    pub aes_bins: BinSpec,
    /// Distance thresholds, equal to the histogram bucket boundaries.
    pub thresholds: Vec<u64>,
    /// Examples per target kind for the summary; defaults to judgment counts.
    pub n_examples: BTreeMap<EntityKind, u64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            count_bins: BinSpec::log(10.0, 10),
            aes_bins: BinSpec::linear(Decimal::ONE, 10),
            thresholds: vec![10, 20, 50, 100, 200],
            n_examples: BTreeMap::new(),
        }
    }
}

pub const CURVE_NAMES: [&str; 4] = ["cooc_frequency", "aes", "occurrence_sum", "distance"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub setting: String,
    pub model: String,
    pub curve: String,
    pub x_label: String,
    #[serde(flatten)]
    pub data: Curve,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub curves: Vec<NamedCurve>,
    pub summary: Vec<SettingSummary>,
}

fn pair_label(key: &str, target: &str) -> String {
    format!("({key}, {target})")
}

/// The four accuracy curves per (template, model) plus the summary table.
pub fn curves(
    judgments: &[Judgment],
    stats: &[PairStats],
    index: &OccurrenceIndex,
    config: &ReportConfig,
) -> Result<ReportBundle> {
    config.count_bins.validate()?;
    config.aes_bins.validate()?;
    let by_pair: BTreeMap<(&str, &str), &PairStats> = stats
        .iter()
        .map(|s| ((s.key.as_str(), s.target.as_str()), s))
        .collect();
    let judged: BTreeSet<(&str, &str)> = judgments
        .iter()
        .map(|j| (j.pair.key.as_str(), j.pair.target.as_str()))
        .collect();
    let mut missing: Vec<String> = judged
        .iter()
        .filter(|p| !by_pair.contains_key(p))
        .map(|(k, t)| format!("{} not in scores", pair_label(k, t)))
        .collect();
    missing.extend(
        by_pair
            .keys()
            .filter(|p| !judged.contains(p))
            .map(|(k, t)| format!("{} not in judgments", pair_label(k, t))),
    );
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(missing));
    }
    if let Some(s) = stats.iter().find(|s| s.bucket_counts.len() != config.thresholds.len()) {
        return Err(Error::InvalidArgument(format!(
            "scores for {} have {} buckets but {} thresholds are configured",
            pair_label(&s.key, &s.target),
            s.bucket_counts.len(),
            config.thresholds.len()
        )));
    }

    let mut groups: BTreeMap<(&str, &str), Vec<&Judgment>> = BTreeMap::new();
    for j in judgments {
        groups
            .entry((j.template_id.as_str(), j.model_id.as_str()))
            .or_default()
            .push(j);
    }
    let mut bundle = ReportBundle::default();
    for ((setting, model), js) in groups {
        let mut freq = Vec::with_capacity(js.len());
        let mut score = Vec::with_capacity(js.len());
        let mut occ = Vec::with_capacity(js.len());
        let mut dist = Vec::with_capacity(js.len());
        for j in js {
            let s = by_pair[&(j.pair.key.as_str(), j.pair.target.as_str())];
            freq.push((Decimal::from(s.total_within_max()), j.correct));
            score.push((s.score, j.correct));
            occ.push((Decimal::from(index.occurrence_sum(&j.pair)), j.correct));
            dist.push((j.correct, s.cumulative()));
        }
        let datas = [
            ("co-occurrence count", bin_curve(&freq, &config.count_bins)?),
            ("AES", bin_curve(&score, &config.aes_bins)?),
            ("occurrence sum", bin_curve(&occ, &config.count_bins)?),
            (
                "distance threshold",
                accuracy_vs_distance(&dist, &config.thresholds, config.count_bins.min_samples)?,
            ),
        ];
        for (name, (x_label, data)) in CURVE_NAMES.iter().zip(datas) {
            bundle.curves.push(NamedCurve {
                setting: setting.to_owned(),
                model: model.to_owned(),
                curve: (*name).to_owned(),
                x_label: x_label.to_owned(),
                data,
            });
        }
    }
    bundle.summary = summarize_settings(judgments, &config.n_examples)?;
    Ok(bundle)
}

/// Lowercase alphanumerics with single dashes between runs.
pub fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_owned()
}

const CURVE_CSV_HEADER: [&str; 8] = [
    "setting",
    "model",
    "curve",
    "bin_label",
    "x_center",
    "mean_accuracy",
    "n_samples",
    "suppressed",
];

fn write_curve_rows<W: std::io::Write>(w: &mut csv::Writer<W>, c: &NamedCurve) -> Result<()> {
    let rows = c
        .data
        .points
        .iter()
        .map(|p| (p, false))
        .chain(c.data.suppressed.iter().map(|p| (p, true)));
    for (p, suppressed) in rows {
        w.write_record([
            c.setting.as_str(),
            c.model.as_str(),
            c.curve.as_str(),
            p.bin_label.as_str(),
            &fmt_num(p.x_center),
            &p.mean_accuracy.to_string(),
            &p.n_samples.to_string(),
            if suppressed { "true" } else { "false" },
        ])?;
    }
    Ok(())
}

fn write_csv_file(path: &Path, curves: &[&NamedCurve]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(CURVE_CSV_HEADER)?;
    for c in curves {
        write_curve_rows(&mut w, c)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json_file<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Standalone SVG line plot of the emitted points.
pub fn render_svg(c: &NamedCurve) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const L: f64 = 56.0;
    const R: f64 = 16.0;
    const T: f64 = 32.0;
    const B: f64 = 48.0;
    let pts = &c.data.points;
    let log_x = c.curve != "aes" && c.curve != "distance";
    let tx = |x: f64| if log_x { x.max(1.0).log10() } else { x };
    let (xmin, xmax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(tx(p.x_center)), hi.max(tx(p.x_center)))
    });
    let span = if xmax > xmin { xmax - xmin } else { 1.0 };
    let px = |x: f64| L + (tx(x) - xmin) / span * (W - L - R);
    let py = |a: f64| T + (1.0 - a / 100.0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        xml_escape(&format!("{} / {}: accuracy vs {}", c.setting, c.model, c.x_label))
    );
    let _ = writeln!(
        s,
        r#"<path d="M{L} {T} V{} H{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R
    );
    for a in [0.0, 50.0, 100.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{a}</text>"#,
            L - 4.0,
            py(a) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}{}</text>"#,
        (L + W - R) / 2.0,
        H - 12.0,
        xml_escape(&c.x_label),
        if log_x { " (log scale)" } else { "" }
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">accuracy (%)</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );
    if !pts.is_empty() {
        let line: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.x_center), py(p.mean_accuracy.as_f64())))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        for p in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"><title>{} n={} acc={}</title></circle>"#,
                px(p.x_center),
                py(p.mean_accuracy.as_f64()),
                xml_escape(&p.bin_label),
                p.n_samples,
                p.mean_accuracy
            );
        }
        let first = &pts[0];
        let last = &pts[pts.len() - 1];
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            px(first.x_center),
            H - B + 14.0,
            fmt_num(first.x_center)
        );
        if pts.len() > 1 {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                px(last.x_center),
                H - B + 14.0,
                fmt_num(last.x_center)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Writes `curves/*.{csv,json,svg}`, `curves/all.{csv,json}`,
/// `summary.csv` and `summary.json` under `dir`.
pub fn write_bundle(dir: impl AsRef<Path>, bundle: &ReportBundle) -> Result<()> {
    let dir = dir.as_ref();
    let curves_dir = dir.join("curves");
    fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    let mut used = BTreeSet::new();
    for c in &bundle.curves {
        let base = format!("{}__{}__{}", slug(&c.setting), slug(&c.model), c.curve);
        let mut stem = base.clone();
        let mut n = 2;
        while !used.insert(stem.clone()) {
            stem = format!("{base}-{n}");
            n += 1;
        }
        write_csv_file(&curves_dir.join(format!("{stem}.csv")), &[c])?;
        write_json_file(&curves_dir.join(format!("{stem}.json")), c)?;
        let svg = curves_dir.join(format!("{stem}.svg"));
        fs::write(&svg, render_svg(c)).map_err(|e| Error::io(&svg, e))?;
    }
    let all: Vec<&NamedCurve> = bundle.curves.iter().collect();
    write_csv_file(&curves_dir.join("all.csv"), &all)?;
    write_json_file(&curves_dir.join("all.json"), &bundle.curves)?;
    crate::eval::write_summary(dir, &bundle.summary)
}
