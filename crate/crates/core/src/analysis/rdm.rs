//! Representational similarity between decoded concepts and their templates.
//!
//! The matrix is arranged in semantic category blocks so cluster structure
//! is visible by eye: concepts are grouped by category in [`CATEGORIES`]
//! order and sorted lexicographically inside each block.

use std::collections::HashMap;

use crate::contrastive::normalize_rows;
use crate::data_io::EEGEpochSet;
use crate::encoders::{forward_eval, EncoderParams};
use crate::numerics::{Mat, Tensor4};
use crate::zeroshot::{cosine, TemplateBank};
use crate::{Error, Result};

/// Category block order.
pub const CATEGORIES: [&str; 5] = ["animal", "food", "vehicle", "tool", "others"];

/// Concept-level similarity matrix in category-block order.
///
/// `matrix[(i, j)]` is the cosine between the decoded embedding of concept i
/// and the template of concept j; rows and columns share one ordering.
#[derive(Debug, Clone)]
pub struct Rdm {
    pub matrix: Mat<f64>,
    pub concept_ids: Vec<String>,
    /// Category per concept, parallel to `concept_ids`.
    pub categories: Vec<String>,
}

impl Rdm {
    pub fn n(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.concept_ids.len();
        if self.matrix.rows() != n || self.matrix.cols() != n || self.categories.len() != n {
            return Err(Error::Dim(format!(
                "rdm over {n} concepts has a {}x{} matrix and {} categories",
                self.matrix.rows(),
                self.matrix.cols(),
                self.categories.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = self.matrix.at(i, j);
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Numerical(format!(
                        "rdm[({i}, {j})] = {v} is not a cosine"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean off-diagonal similarity inside and across category blocks.
    pub fn within_between(&self) -> (f64, f64) {
        let n = self.n();
        let (mut ws, mut wn, mut bs, mut bn) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if self.categories[i] == self.categories[j] {
                    ws += self.matrix.at(i, j);
                    wn += 1;
                } else {
                    bs += self.matrix.at(i, j);
                    bn += 1;
                }
            }
        }
        (ws / wn.max(1) as f64, bs / bn.max(1) as f64)
    }
}

fn category_rank(cat: &str) -> Option<usize> {
    CATEGORIES.iter().position(|c| *c == cat)
}

/// Similarity matrix between per-concept embeddings and concept templates.
///
/// `features` holds one L2-normalized embedding per entry of `concepts`.
/// Every template concept needs exactly one embedding and a category from
/// `category_map`; the output ordering comes from the templates, so two runs
/// over the same bank are directly comparable.
pub fn rdm_from_features(
    features: &Mat<f32>,
    concepts: &[String],
    templates: &TemplateBank,
    category_map: &HashMap<String, String>,
) -> Result<Rdm> {
    templates.validate()?;
    if features.rows() != concepts.len() {
        return Err(Error::Dim(format!(
            "{} feature rows for {} concepts",
            features.rows(),
            concepts.len()
        )));
    }
    if features.cols() != templates.dim() {
        return Err(Error::Dim(format!(
            "feature dim {} does not match template dim {}",
            features.cols(),
            templates.dim()
        )));
    }
    let mut row_of = HashMap::new();
    for (r, c) in concepts.iter().enumerate() {
        if row_of.insert(c.as_str(), r).is_some() {
            return Err(Error::Argument(format!("concept '{c}' appears twice")));
        }
    }
    let index = templates.index();
    for c in concepts {
        if !index.contains_key(c.as_str()) {
            return Err(Error::Mapping(format!("concept '{c}' has no template")));
        }
    }
    // (category rank, id, template row) defines the block ordering.
    let mut order = Vec::with_capacity(templates.n_concepts());
    for (t, cid) in templates.concept_ids.iter().enumerate() {
        let cat = category_map.get(cid).ok_or_else(|| {
            Error::Mapping(format!("concept '{cid}' has no category"))
        })?;
        let rank = category_rank(cat).ok_or_else(|| {
            Error::Mapping(format!(
                "concept '{cid}' has category '{cat}', expected one of {}",
                CATEGORIES.join(", ")
            ))
        })?;
        if !row_of.contains_key(cid.as_str()) {
            return Err(Error::Coverage(format!(
                "no embedding for template concept '{cid}'"
            )));
        }
        order.push((rank, cid.as_str(), t));
    }
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));

    let n = order.len();
    let mut matrix = Mat::zeros(n, n);
    for (i, &(_, cid_i, _)) in order.iter().enumerate() {
        let erow = features.row(row_of[cid_i]);
        for (j, &(_, _, tj)) in order.iter().enumerate() {
            matrix.set(i, j, cosine(erow, templates.templates.row(tj))?);
        }
    }
    let rdm = Rdm {
        matrix,
        concept_ids: order.iter().map(|&(_, c, _)| c.to_string()).collect(),
        categories: order
            .iter()
            .map(|&(r, _, _)| CATEGORIES[r].to_string())
            .collect(),
    };
    rdm.validate()?;
    Ok(rdm)
}

/// Encodes the concept-mean test signal and scores it against the templates.
///
/// All trials of a concept (every image, every repetition) average in signal
/// space before encoding, mirroring the evaluation path.
pub fn rdm(
    params: &EncoderParams<f32>,
    eeg: &EEGEpochSet,
    templates: &TemplateBank,
    category_map: &HashMap<String, String>,
) -> Result<Rdm> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (trial, cid) in eeg.concept_ids.iter().enumerate() {
        let slot = groups.entry(cid.as_str()).or_default();
        if slot.is_empty() {
            order.push(cid.as_str());
        }
        slot.push(trial);
    }
    let [_, _, c, t] = eeg.epochs.dims();
    let mut avg = Tensor4::<f32>::zeros([order.len(), 1, c, t]);
    let mut acc = vec![0.0f64; t];
    for (g, cid) in order.iter().enumerate() {
        let trials = &groups[cid];
        let inv = 1.0 / trials.len() as f64;
        for ch in 0..c {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for &tr in trials {
                for (a, &v) in acc.iter_mut().zip(eeg.epochs.row(tr, 0, ch)) {
                    *a += v as f64;
                }
            }
            for (d, &a) in avg.row_mut(g, 0, ch).iter_mut().zip(&acc) {
                *d = (a * inv) as f32;
            }
        }
    }
    let emb = forward_eval(params, &avg, 0)?;
    let (feats, _) = normalize_rows(&emb)?;
    let concepts: Vec<String> = order.iter().map(|c| c.to_string()).collect();
    rdm_from_features(&feats, &concepts, templates, category_map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tests::fixture;
    use crate::encoders::ModuleKind;

    fn unit_bank() -> TemplateBank {
        // Two tight clusters on orthogonal axes: b/a together, d/c together.
        let rows: [[f32; 4]; 4] = [
            [1.0, 0.0, 0.0, 0.0],
            [0.8, 0.6, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.6, 0.8],
        ];
        let mut templates = Mat::zeros(4, 4);
        for (i, row) in rows.iter().enumerate() {
            templates.row_mut(i).copy_from_slice(row);
        }
        TemplateBank {
            templates,
            concept_ids: ["b", "a", "d", "c"].iter().map(|s| s.to_string()).collect(),
        }
    }

    fn categories() -> HashMap<String, String> {
        [("a", "animal"), ("b", "animal"), ("c", "food"), ("d", "food")]
            .iter()
            .map(|(c, k)| (c.to_string(), k.to_string()))
            .collect()
    }

    #[test]
    fn identical_features_give_a_unit_diagonal_in_block_order() {
        let tb = unit_bank();
        // Feed the same vectors back, deliberately out of template order.
        let concepts: Vec<String> =
            ["c", "a", "b", "d"].iter().map(|s| s.to_string()).collect();
        let mut features = Mat::zeros(4, 4);
        for (r, c) in concepts.iter().enumerate() {
            let t = tb.index()[c.as_str()];
            features.row_mut(r).copy_from_slice(tb.templates.row(t));
        }
        let rdm = rdm_from_features(&features, &concepts, &tb, &categories()).unwrap();
        assert_eq!(rdm.concept_ids, vec!["a", "b", "c", "d"]);
        assert_eq!(rdm.categories, vec!["animal", "animal", "food", "food"]);
        for i in 0..4 {
            assert_eq!(rdm.matrix.at(i, i), 1.0, "diagonal is exact, not approximate");
        }
        // Clusters sit on orthogonal axes: within = (0.8 + 0.6) / 2, across 0.
        let (within, between) = rdm.within_between();
        assert!((within - 0.7).abs() < 1e-6, "within = {within}");
        assert!(between.abs() < 1e-6, "between = {between}");
    }

    #[test]
    fn mapping_coverage_and_duplicate_errors() {
        let tb = unit_bank();
        let cats = categories();
        let concepts: Vec<String> =
            ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let mut features = Mat::zeros(4, 4);
        for r in 0..4 {
            features.set(r, r, 1.0);
        }

        let mut missing_cat = cats.clone();
        missing_cat.remove("d");
        assert!(matches!(
            rdm_from_features(&features, &concepts, &tb, &missing_cat),
            Err(Error::Mapping(_))
        ));

        let mut bad_cat = cats.clone();
        bad_cat.insert("d".into(), "plants".into());
        assert!(matches!(
            rdm_from_features(&features, &concepts, &tb, &bad_cat),
            Err(Error::Mapping(_))
        ));

        let unknown: Vec<String> =
            ["a", "b", "c", "z"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(
            rdm_from_features(&features, &unknown, &tb, &cats),
            Err(Error::Mapping(_))
        ));

        let twice: Vec<String> =
            ["a", "b", "c", "c"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(
            rdm_from_features(&features, &twice, &tb, &cats),
            Err(Error::Argument(_))
        ));

        let short: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut narrow = Mat::zeros(3, 4);
        for r in 0..3 {
            narrow.set(r, r, 1.0);
        }
        assert!(matches!(
            rdm_from_features(&narrow, &short, &tb, &cats),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn full_pipeline_rdm_is_bounded_and_block_ordered() {
        let fx = fixture(ModuleKind::None, 12);
        let cats: HashMap<String, String> = fx
            .tb
            .concept_ids
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), CATEGORIES[i % CATEGORIES.len()].to_string()))
            .collect();
        let rdm = rdm(&fx.params, &fx.data.test, &fx.tb, &cats).unwrap();
        assert_eq!(rdm.n(), fx.tb.n_concepts());
        assert!(rdm.validate().is_ok());
        let mut ranks: Vec<usize> = rdm
            .categories
            .iter()
            .map(|c| CATEGORIES.iter().position(|k| k == c).unwrap())
            .collect();
        let sorted = {
            let mut s = ranks.clone();
            s.sort_unstable();
            s
        };
        assert_eq!(ranks, sorted, "rows come in category-block order");
        ranks.dedup();
        assert_eq!(ranks.len(), CATEGORIES.len());
    }
}
