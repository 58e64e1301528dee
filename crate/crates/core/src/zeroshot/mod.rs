//! Concept templates and cosine-similarity zero-shot classification.
//!
//! A template is the renormalized mean of one concept's normalized image
//! features. Trial features are ranked against every template by cosine
//! similarity; a top-k hit is a trial whose true concept appears within the
//! first k ranks. Ties rank the lower concept index first, so classification
//! is a pure function of its inputs.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data_io::FeatureBank;
use crate::numerics::Mat;
use crate::{Error, Result};

/// How many ranks the JSON report keeps per trial.
pub const REPORT_TOP_N: usize = 10;

/// One unit-norm template row per concept.
#[derive(Debug, Clone)]
pub struct TemplateBank {
    /// (n_concepts, D), L2-normalized rows.
    pub templates: Mat<f32>,
    pub concept_ids: Vec<String>,
}

impl TemplateBank {
    pub fn n_concepts(&self) -> usize {
        self.templates.rows()
    }

    pub fn dim(&self) -> usize {
        self.templates.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.concept_ids.len() != self.templates.rows() {
            return Err(Error::Format(format!(
                "{} concept ids for {} template rows",
                self.concept_ids.len(),
                self.templates.rows()
            )));
        }
        let mut seen: HashSet<&str> = HashSet::with_capacity(self.concept_ids.len());
        for id in &self.concept_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Integrity(format!("duplicate template concept '{id}'")));
            }
        }
        for r in 0..self.templates.rows() {
            let norm: f64 = self
                .templates
                .row(r)
                .iter()
                .map(|&v| v as f64 * v as f64)
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > 1e-4 {
                return Err(Error::Normalization(format!(
                    "template '{}' has norm {norm}, expected 1",
                    self.concept_ids[r]
                )));
            }
        }
        Ok(())
    }

    /// Expected O(1) concept-id lookup table.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.concept_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

/// Cosine similarity with f64 accumulation, clamped into [-1, 1].
///
/// Bit-identical inputs short-circuit to exactly 1.0, so self-similarity
/// survives rounding. Zero or non-finite norms are rejected rather than
/// folded into a NaN score.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dim(format!(
            "cosine of length {} against length {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    let mut same = true;
    for (&x, &y) in a.iter().zip(b) {
        same &= x.to_bits() == y.to_bits();
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if !(denom.is_finite() && denom > 0.0) {
        return Err(Error::Normalization(
        "cosine undefined: a vector norm is zero or not finite".into(),
        ));
    }
    if same {
        return Ok(1.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Builds one template per listed concept from the bank's feature rows.
///
/// Each feature row is normalized before averaging so no single high-norm
/// image dominates its concept; the mean is renormalized afterwards. When
/// `stimulus_ids` is given, any template image that also appears as an EEG
/// stimulus is rejected: templates must come from images the recordings
/// never saw.
pub fn build_templates(
    bank: &FeatureBank,
    concepts: &[String],
    stimulus_ids: Option<&[String]>,
) -> Result<TemplateBank> {
    bank.validate()?;
    if concepts.is_empty() {
        return Err(Error::Argument("no concepts listed for templates".into()));
    }
    let mut wanted: HashSet<&str> = HashSet::with_capacity(concepts.len());
    for c in concepts {
        if !wanted.insert(c.as_str()) {
            return Err(Error::Argument(format!("concept '{c}' listed twice")));
        }
    }
    let stimuli: HashSet<&str> = stimulus_ids
        .map(|ids| ids.iter().map(String::as_str).collect())
        .unwrap_or_default();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (row, concept) in bank.concept_ids.iter().enumerate() {
        groups.entry(concept.as_str()).or_default().push(row);
    }
    let d = bank.dim();
    let mut templates = Mat::zeros(concepts.len(), d);
    let mut acc = vec![0.0f64; d];
    for (ci, concept) in concepts.iter().enumerate() {
        let rows = groups
            .get(concept.as_str())
            .filter(|r| !r.is_empty())
            .ok_or_else(|| {
                Error::Coverage(format!("concept '{concept}' has no template images"))
            })?;
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &r in rows {
            let image = &bank.image_ids[r];
            if stimuli.contains(image.as_str()) {
                return Err(Error::Leakage(format!(
                    "template image '{image}' of concept '{concept}' is also an EEG stimulus"
                )));
            }
            let feat = bank.features.row(r);
            let norm = feat.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::Normalization(format!(
                    "feature of image '{image}' has norm {norm}"
                )));
            }
            for (a, &v) in acc.iter_mut().zip(feat) {
                *a += v as f64 / norm;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        let mean_norm = acc.iter().map(|v| v * inv * (v * inv)).sum::<f64>().sqrt();
        if !(mean_norm.is_finite() && mean_norm > 0.0) {
            return Err(Error::Normalization(format!(
                "features of concept '{concept}' average to norm {mean_norm}"
            )));
        }
        let scale = inv / mean_norm;
        for (dst, &v) in templates.row_mut(ci).iter_mut().zip(&acc) {
            *dst = (v * scale) as f32;
        }
    }
    let tb = TemplateBank {
        templates,
        concept_ids: concepts.to_vec(),
    };
    debug_assert!(tb.validate().is_ok());
    Ok(tb)
}

/// Per-trial similarity matrix, full ranking and top-k hit flags.
#[derive(Debug, Clone)]
pub struct SimilarityReport {
    /// (n_trials, n_concepts) cosine similarities.
    pub similarity: Mat<f64>,
    /// Concept indices per trial, best match first.
    pub ranking: Vec<Vec<usize>>,
    /// The ks that were evaluated, in request order.
    pub ks: Vec<usize>,
    /// `topk_hits[ki][trial]` is true iff the true concept ranks within ks[ki].
    pub topk_hits: Vec<Vec<bool>>,
    /// True concept index per trial.
    pub true_concepts: Vec<usize>,
    /// Concept ids aligned with similarity columns.
    pub concept_ids: Vec<String>,
}

impl SimilarityReport {
    pub fn n_trials(&self) -> usize {
        self.similarity.rows()
    }

    pub fn n_concepts(&self) -> usize {
        self.similarity.cols()
    }

    /// 0-based rank of the trial's true concept.
    pub fn true_rank(&self, trial: usize) -> usize {
        let want = self.true_concepts[trial];
        self.ranking[trial]
            .iter()
            .position(|&c| c == want)
            .expect("ranking is a permutation of all concepts")
    }
}

/// Ranks every trial feature against every template by cosine similarity.
///
/// Ranking sorts by descending similarity and breaks ties toward the lower
/// concept index. `true_concepts` holds the correct template index per
/// trial and feeds the top-k hit flags for every k in `ks`.
pub fn classify(
    features: &Mat<f32>,
    tb: &TemplateBank,
    ks: &[usize],
    true_concepts: &[usize],
) -> Result<SimilarityReport> {
    tb.validate()?;
    let n = features.rows();
    let kc = tb.n_concepts();
    if features.cols() != tb.dim() {
        return Err(Error::Dim(format!(
            "features have dimension {}, templates {}",
            features.cols(),
            tb.dim()
        )));
    }
    if n == 0 {
        return Err(Error::Argument("no trials to classify".into()));
    }
    if true_concepts.len() != n {
        return Err(Error::Dim(format!(
            "{} true concepts for {n} trials",
            true_concepts.len()
        )));
    }
    for &c in true_concepts {
        if c >= kc {
            return Err(Error::Argument(format!(
                "true concept index {c} out of range for {kc} templates"
            )));
        }
    }
    let mut seen_k = HashSet::with_capacity(ks.len());
    for &k in ks {
        if k == 0 || k > kc {
            return Err(Error::Argument(format!(
                "top-{k} is not evaluable over {kc} concepts"
            )));
        }
        if !seen_k.insert(k) {
            return Err(Error::Argument(format!("top-{k} listed twice")));
        }
    }
    let mut similarity = Mat::zeros(n, kc);
    let mut ranking = Vec::with_capacity(n);
    let mut true_rank = Vec::with_capacity(n);
    for (i, &want) in true_concepts.iter().enumerate() {
        let feat = features.row(i);
        for j in 0..kc {
            let s = cosine(feat, tb.templates.row(j))?;
            similarity.set(i, j, s);
        }
        let row = similarity.row(i);
        let mut order: Vec<usize> = (0..kc).collect();
        order.sort_by(|&p, &q| row[q].total_cmp(&row[p]).then_with(|| p.cmp(&q)));
        true_rank.push(
            order
                .iter()
                .position(|&c| c == want)
                .expect("order is a permutation"),
        );
        ranking.push(order);
    }
    let topk_hits = ks
        .iter()
        .map(|&k| true_rank.iter().map(|&r| r < k).collect())
        .collect();
    Ok(SimilarityReport {
        similarity,
        ranking,
        ks: ks.to_vec(),
        topk_hits,
        true_concepts: true_concepts.to_vec(),
        concept_ids: tb.concept_ids.clone(),
    })
}

/// Fraction of trials whose true concept ranks within the top k.
pub fn topk_accuracy(report: &SimilarityReport, k: usize) -> Result<f64> {
    let ki = report
        .ks
        .iter()
        .position(|&have| have == k)
        .ok_or_else(|| Error::Argument(format!("top-{k} was not evaluated")))?;
    let hits = &report.topk_hits[ki];
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

#[derive(Serialize)]
struct TrialRecord<'a> {
    true_concept: &'a str,
    /// 1-based rank of the true concept in the full ordering.
    true_rank: usize,
    top_concepts: Vec<&'a str>,
    top_similarity: Vec<f64>,
}

#[derive(Serialize)]
struct ReportRecord<'a> {
    n_trials: usize,
    n_concepts: usize,
    ks: &'a [usize],
    accuracy: Vec<f64>,
    trials: Vec<TrialRecord<'a>>,
}

/// Writes the report as JSON with per-trial rankings truncated to the
/// [`REPORT_TOP_N`] best concepts.
pub fn write_report_json(report: &SimilarityReport, path: impl AsRef<Path>) -> Result<()> {
    let mut trials = Vec::with_capacity(report.n_trials());
    for i in 0..report.n_trials() {
        let order = &report.ranking[i];
        let keep = order.len().min(REPORT_TOP_N);
        trials.push(TrialRecord {
            true_concept: &report.concept_ids[report.true_concepts[i]],
            true_rank: report.true_rank(i) + 1,
            top_concepts: order[..keep]
                .iter()
                .map(|&c| report.concept_ids[c].as_str())
                .collect(),
            top_similarity: order[..keep]
                .iter()
                .map(|&c| report.similarity.at(i, c))
                .collect(),
        });
    }
    let record = ReportRecord {
        n_trials: report.n_trials(),
        n_concepts: report.n_concepts(),
        ks: &report.ks,
        accuracy: report
            .ks
            .iter()
            .map(|&k| topk_accuracy(report, k))
            .collect::<Result<_>>()?,
        trials,
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &record)?;
    Ok(())
}

/// Writes one `k,accuracy` row per evaluated k.
pub fn write_accuracy_csv(report: &SimilarityReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "k,accuracy")?;
    for &k in &report.ks {
        writeln!(out, "{k},{}", topk_accuracy(report, k)?)?;
    }
    Ok(())
}
