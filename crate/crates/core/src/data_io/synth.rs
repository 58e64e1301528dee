//! Synthetic planted-signal generator: the end-to-end oracle.
//!
//! Concepts are random unit vectors in R^D, images are small angular
//! perturbations of their concept, and each clean trial embeds the stimulus
//! feature linearly into a fixed time window of the EEG plane through a
//! seeded mixing matrix. Everything downstream (training, retrieval,
//! localization sweeps) can therefore be verified against known structure.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Mat, Tensor4};
use crate::{Error, Result};

use super::{
    load_feature_bank, read_raw_matrix, save_feature_bank, write_raw_matrix, EEGEpochSet,
    FeatureBank,
};

/// Parameters of the synthetic dataset.
///
/// Every field has a serde default, so JSON configs only list what they
/// override. The train/test concept pools are disjoint; test templates come
/// from images never used as stimuli.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_concepts: usize,
    pub images_per_concept: usize,
    pub repetitions: usize,
    /// Electrode count.
    pub c: usize,
    /// Samples per trial.
    pub t: usize,
    /// Feature dimension.
    pub d: usize,
    pub mixing_seed: u64,
    /// Noise standard deviation relative to the planted-signal RMS.
    pub noise_std: f64,
    /// Half-open sample range [start, end) carrying the planted signal.
    pub signal_window: (usize, usize),
    pub sample_rate: f64,
    pub test_concepts: usize,
    pub test_images_per_concept: usize,
    pub test_repetitions: usize,
    pub template_images_per_concept: usize,
    /// Angular spread of image features around their concept vector.
    pub image_jitter: f64,
    /// Electrodes carrying the planted signal (strictly increasing); `None`
    /// plants on all electrodes.
    pub active_electrodes: Option<Vec<usize>>,
    /// Optional sinusoidal modulation of the planted signal, in Hz.
    pub carrier_hz: Option<f64>,
    /// Optional number of concept clusters, for representational-structure
    /// analyses.
    pub n_categories: Option<usize>,
    /// Within-category concept spread, relative angular scale.
    pub category_spread: f64,
    /// Electrode labels; `None` generates generic "ch_NN" names.
    pub channel_names: Option<Vec<String>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_concepts: 200,
            images_per_concept: 10,
            repetitions: 4,
            c: 32,
            t: 250,
            d: 64,
            mixing_seed: 7,
            noise_std: 1.0,
            signal_window: (25, 150),
            sample_rate: 250.0,
            test_concepts: 50,
            test_images_per_concept: 1,
            test_repetitions: 4,
            template_images_per_concept: 3,
            image_jitter: 0.1,
            active_electrodes: None,
            carrier_hz: None,
            n_categories: None,
            category_spread: 0.25,
            channel_names: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_concepts", self.n_concepts),
            ("images_per_concept", self.images_per_concept),
            ("repetitions", self.repetitions),
            ("c", self.c),
            ("t", self.t),
            ("d", self.d),
            ("test_concepts", self.test_concepts),
            ("test_images_per_concept", self.test_images_per_concept),
            ("test_repetitions", self.test_repetitions),
            ("template_images_per_concept", self.template_images_per_concept),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be at least 1")));
            }
        }
        let (start, end) = self.signal_window;
        if !(start < end && end <= self.t) {
            return Err(Error::Argument(format!(
                "signal window [{start}, {end}) must satisfy 0 <= start < end <= {}",
                self.t
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Argument(format!(
                "noise_std must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        if !(self.image_jitter.is_finite() && self.image_jitter >= 0.0) {
            return Err(Error::Argument(format!(
                "image_jitter must be finite and non-negative, got {}",
                self.image_jitter
            )));
        }
        if !(self.category_spread.is_finite() && self.category_spread > 0.0) {
            return Err(Error::Argument(format!(
                "category_spread must be positive, got {}",
                self.category_spread
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Argument(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if let Some(active) = &self.active_electrodes {
            if active.is_empty() {
                return Err(Error::Argument("active_electrodes must not be empty".into()));
            }
            for w in active.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Argument(
                        "active_electrodes must be strictly increasing".into(),
                    ));
                }
            }
            if *active.last().unwrap() >= self.c {
                return Err(Error::Argument(format!(
                    "active electrode {} out of range for {} electrodes",
                    active.last().unwrap(),
                    self.c
                )));
            }
        }
        if let Some(hz) = self.carrier_hz {
            if !(hz.is_finite() && hz > 0.0 && hz < self.sample_rate / 2.0) {
                return Err(Error::Argument(format!(
                    "carrier_hz {hz} must sit strictly below the Nyquist frequency {}",
                    self.sample_rate / 2.0
                )));
            }
        }
        if let Some(k) = self.n_categories {
            if k == 0 {
                return Err(Error::Argument("n_categories must be at least 1".into()));
            }
        }
        if let Some(names) = &self.channel_names {
            if names.len() != self.c {
                return Err(Error::Argument(format!(
                    "{} channel names for {} electrodes",
                    names.len(),
                    self.c
                )));
            }
        }
        Ok(())
    }

    fn total_concepts(&self) -> usize {
        self.n_concepts + self.test_concepts
    }
}

/// The generating parameters the oracle can be checked against.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// (n_concepts + test_concepts, D) unit concept vectors, train first.
    pub concept_features: Mat<f32>,
    pub concept_ids: Vec<String>,
    /// (active electrodes x window length, D) mixing matrix.
    pub mixing: Mat<f32>,
    pub active_electrodes: Vec<usize>,
    pub signal_window: (usize, usize),
    pub carrier_hz: Option<f64>,
    /// Category label per concept when cluster structure was requested.
    pub category_ids: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct TruthMeta {
    active_electrodes: Vec<usize>,
    signal_window: (usize, usize),
    carrier_hz: Option<f64>,
    category_ids: Option<Vec<String>>,
}

impl GroundTruth {
    /// Writes concepts.feat, mixing.bin and truth.json into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let bank = FeatureBank {
            features: self.concept_features.clone(),
            image_ids: self.concept_ids.clone(),
            concept_ids: self.concept_ids.clone(),
            encoder_tag: "ground-truth".into(),
        };
        save_feature_bank(dir.join("concepts.feat"), &bank)?;
        write_raw_matrix(dir.join("mixing.bin"), &self.mixing)?;
        let meta = TruthMeta {
            active_electrodes: self.active_electrodes.clone(),
            signal_window: self.signal_window,
            carrier_hz: self.carrier_hz,
            category_ids: self.category_ids.clone(),
        };
        let file = std::fs::File::create(dir.join("truth.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &meta)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<GroundTruth> {
        let dir = dir.as_ref();
        let bank = load_feature_bank(dir.join("concepts.feat"))?;
        let mixing = read_raw_matrix(dir.join("mixing.bin"))?;
        let meta: TruthMeta = serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(dir.join("truth.json"))?,
        ))?;
        Ok(GroundTruth {
            concept_features: bank.features,
            concept_ids: bank.concept_ids,
            mixing,
            active_electrodes: meta.active_electrodes,
            signal_window: meta.signal_window,
            carrier_hz: meta.carrier_hz,
            category_ids: meta.category_ids,
        })
    }
}

/// Everything one generation produces.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: EEGEpochSet,
    pub test: EEGEpochSet,
    /// Features of the train stimulus images.
    pub train_bank: FeatureBank,
    /// Features of held-out-concept template images, id-disjoint from every
    /// EEG stimulus.
    pub template_bank: FeatureBank,
    pub truth: GroundTruth,
}

/// Box-Muller standard normal draw.
fn gauss<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        // Resample away from zero so the log stays finite.
        if u1 > 1e-12 {
            let u2: f64 = rng.random();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

fn gauss_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

fn normalize_f64(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // A zero draw from a continuous density is measure-zero; guard anyway.
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    } else {
        v[0] = 1.0;
    }
}

/// Unit vector plus a relative angular offset, renormalized. The offset draw
/// is scaled by 1/sqrt(D) so `scale` is the approximate offset norm.
fn perturbed<R: Rng>(rng: &mut R, base: &[f64], scale: f64) -> Vec<f64> {
    let d = base.len();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut v: Vec<f64> = base
        .iter()
        .map(|&b| b + scale * inv_sqrt_d * gauss(rng))
        .collect();
    normalize_f64(&mut v);
    v
}

fn to_f32_row(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Computes the clean (active electrodes x window) plane for one image as an
/// f32 matrix-vector product in feature-index order. Tests replay this exact
/// accumulation, so keep it single-precision and sequential.
fn clean_plane(mixing: &Mat<f32>, feature: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; mixing.rows()];
    for (r, slot) in out.iter_mut().enumerate() {
        let row = mixing.row(r);
        let mut acc = 0.0f32;
        for (a, f) in row.iter().zip(feature) {
            acc += a * f;
        }
        *slot = acc;
    }
    out
}

struct TrialPlan<'a> {
    stimulus_id: String,
    concept_id: String,
    repetition: u32,
    feature: &'a [f32],
}

/// One trial per (image, repetition), image-major so clean planes can be
/// cached across adjacent repetitions.
fn plan_trials<'a>(
    feat: &'a Mat<f32>,
    ids: &[String],
    concepts: &[String],
    reps: usize,
) -> Vec<TrialPlan<'a>> {
    let mut plans = Vec::with_capacity(ids.len() * reps);
    for row in 0..ids.len() {
        for rep in 0..reps {
            plans.push(TrialPlan {
                stimulus_id: ids[row].clone(),
                concept_id: concepts[row].clone(),
                repetition: rep as u32,
                feature: feat.row(row),
            });
        }
    }
    plans
}

/// Generates the full synthetic dataset for `spec`.
///
/// All randomness flows from one seeded stream in a fixed draw order
/// (category centers, concepts, mixing, train images, test images, template
/// images, train noise, test noise), so equal specs give bit-identical data.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.mixing_seed);
    let d = spec.d;
    let total_concepts = spec.total_concepts();
    let (start, end) = spec.signal_window;
    let win = end - start;
    let active: Vec<usize> = spec
        .active_electrodes
        .clone()
        .unwrap_or_else(|| (0..spec.c).collect());

    let category_centers: Option<Vec<Vec<f64>>> = spec.n_categories.map(|k| {
        (0..k)
            .map(|_| {
                let mut v = gauss_vec(&mut rng, d);
                normalize_f64(&mut v);
                v
            })
            .collect()
    });
    let category_ids: Option<Vec<String>> = spec
        .n_categories
        .map(|k| (0..total_concepts).map(|i| format!("cat_{:02}", i % k)).collect());

    let mut concepts_f64: Vec<Vec<f64>> = Vec::with_capacity(total_concepts);
    for i in 0..total_concepts {
        let v = match &category_centers {
            Some(centers) => perturbed(&mut rng, &centers[i % centers.len()], spec.category_spread),
            None => {
                let mut v = gauss_vec(&mut rng, d);
                normalize_f64(&mut v);
                v
            }
        };
        concepts_f64.push(v);
    }
    let concept_ids: Vec<String> = (0..total_concepts)
        .map(|i| format!("concept_{i:04}"))
        .collect();

    // Mixing entries are N(0, 1/D), so each clean sample of a unit feature
    // has variance 1/D; noise_std is expressed against that RMS.
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut mixing = Mat::zeros(active.len() * win, d);
    for v in mixing.data_mut() {
        *v = (gauss(&mut rng) * inv_sqrt_d) as f32;
    }
    let noise_abs = spec.noise_std * inv_sqrt_d;

    let carrier: Vec<f32> = match spec.carrier_hz {
        Some(hz) => (0..win)
            .map(|w| {
                let phase = std::f64::consts::TAU * hz * (w as f64) / spec.sample_rate;
                (std::f64::consts::SQRT_2 * phase.sin()) as f32
            })
            .collect(),
        None => vec![1.0; win],
    };

    let draw_images =
        |rng: &mut ChaCha12Rng, concept_range: std::ops::Range<usize>, per: usize, prefix: &str| {
            let mut features = Mat::zeros(concept_range.len() * per, d);
            let mut image_ids = Vec::with_capacity(features.rows());
            let mut image_concepts = Vec::with_capacity(features.rows());
            let mut row = 0;
            for ci in concept_range {
                for ii in 0..per {
                    let img = perturbed(rng, &concepts_f64[ci], spec.image_jitter);
                    features.row_mut(row).copy_from_slice(&to_f32_row(&img));
                    image_ids.push(format!("{prefix}_{ci:04}_{ii:02}"));
                    image_concepts.push(concept_ids[ci].clone());
                    row += 1;
                }
            }
            (features, image_ids, image_concepts)
        };

    let (train_feat, train_img_ids, train_img_concepts) =
        draw_images(&mut rng, 0..spec.n_concepts, spec.images_per_concept, "img");
    let (test_feat, test_img_ids, test_img_concepts) = draw_images(
        &mut rng,
        spec.n_concepts..total_concepts,
        spec.test_images_per_concept,
        "img",
    );
    let (tmpl_feat, tmpl_img_ids, tmpl_img_concepts) = draw_images(
        &mut rng,
        spec.n_concepts..total_concepts,
        spec.template_images_per_concept,
        "tmpl",
    );

    let channel_names: Vec<String> = spec
        .channel_names
        .clone()
        .unwrap_or_else(|| (0..spec.c).map(|i| format!("ch_{i:02}")).collect());

    let build_set = |rng: &mut ChaCha12Rng,
                         plans: &[TrialPlan],
                         label: &str|
     -> Result<EEGEpochSet> {
        let n = plans.len();
        let mut epochs = Tensor4::zeros([n, 1, spec.c, spec.t]);
        let mut stimulus_ids = Vec::with_capacity(n);
        let mut cids = Vec::with_capacity(n);
        let mut reps = Vec::with_capacity(n);
        let mut cached_id: Option<&str> = None;
        let mut cached_plane: Vec<f32> = Vec::new();
        for (idx, plan) in plans.iter().enumerate() {
            // Trials are image-major, so the clean plane cache hits for
            // every repetition after the first.
            if cached_id != Some(plan.stimulus_id.as_str()) {
                cached_plane = clean_plane(&mixing, plan.feature);
                cached_id = Some(plan.stimulus_id.as_str());
            }
            for (ai, &e) in active.iter().enumerate() {
                let row = epochs.row_mut(idx, 0, e);
                for w in 0..win {
                    row[start + w] = cached_plane[ai * win + w] * carrier[w];
                }
            }
            if noise_abs > 0.0 {
                for v in epochs.trial_mut(idx) {
                    *v += (noise_abs * gauss(rng)) as f32;
                }
            }
            stimulus_ids.push(plan.stimulus_id.clone());
            cids.push(plan.concept_id.clone());
            reps.push(plan.repetition);
        }
        let set = EEGEpochSet {
            epochs,
            sample_rate: spec.sample_rate,
            channel_names: channel_names.clone(),
            stimulus_ids,
            concept_ids: cids,
            repetition_index: reps,
        };
        set.validate()
            .map_err(|e| Error::Argument(format!("{label} generation invariant: {e}")))?;
        Ok(set)
    };

    let train_plans = plan_trials(&train_feat, &train_img_ids, &train_img_concepts, spec.repetitions);
    let train = build_set(&mut rng, &train_plans, "train")?;
    drop(train_plans);
    let test_plans = plan_trials(&test_feat, &test_img_ids, &test_img_concepts, spec.test_repetitions);
    let test = build_set(&mut rng, &test_plans, "test")?;
    drop(test_plans);

    let mut concept_features = Mat::zeros(total_concepts, d);
    for (i, v) in concepts_f64.iter().enumerate() {
        concept_features.row_mut(i).copy_from_slice(&to_f32_row(v));
    }

    let train_bank = FeatureBank {
        features: train_feat,
        image_ids: train_img_ids,
        concept_ids: train_img_concepts,
        encoder_tag: "synthetic-oracle".into(),
    };
    train_bank.validate()?;
    let template_bank = FeatureBank {
        features: tmpl_feat,
        image_ids: tmpl_img_ids,
        concept_ids: tmpl_img_concepts,
        encoder_tag: "synthetic-oracle".into(),
    };
    template_bank.validate()?;

    Ok(SynthData {
        train,
        test,
        train_bank,
        template_bank,
        truth: GroundTruth {
            concept_features,
            concept_ids,
            mixing,
            active_electrodes: active,
            signal_window: spec.signal_window,
            carrier_hz: spec.carrier_hz,
            category_ids,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::pair_by_stimulus;

    fn tiny_spec() -> SynthSpec {
        SynthSpec {
            n_concepts: 3,
            images_per_concept: 2,
            repetitions: 2,
            c: 4,
            t: 20,
            d: 8,
            mixing_seed: 9,
            noise_std: 0.5,
            signal_window: (5, 15),
            test_concepts: 2,
            test_images_per_concept: 1,
            test_repetitions: 2,
            template_images_per_concept: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = tiny_spec();
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a.train.epochs.data(), b.train.epochs.data());
        assert_eq!(a.test.epochs.data(), b.test.epochs.data());
        assert_eq!(a.train_bank.features.data(), b.train_bank.features.data());
        assert_eq!(a.template_bank.features.data(), b.template_bank.features.data());
        assert_eq!(a.truth.mixing.data(), b.truth.mixing.data());
    }

    #[test]
    fn seed_changes_the_data() {
        let spec = tiny_spec();
        let mut other = tiny_spec();
        other.mixing_seed = 10;
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&other).unwrap();
        assert_ne!(a.train.epochs.data(), b.train.epochs.data());
    }

    #[test]
    fn noiseless_trials_are_exactly_the_planted_signal() {
        let mut spec = tiny_spec();
        spec.noise_std = 0.0;
        spec.repetitions = 1;
        spec.active_electrodes = Some(vec![1, 2]);
        let data = synth_generate(&spec).unwrap();
        let (start, end) = spec.signal_window;
        let win = end - start;
        let index = data.train_bank.index();
        for trial in 0..data.train.n_trials() {
            let row = index[data.train.stimulus_ids[trial].as_str()];
            let expected = clean_plane(&data.truth.mixing, data.train_bank.features.row(row));
            for c in 0..spec.c {
                let signal_row = data.train.epochs.row(trial, 0, c);
                match data.truth.active_electrodes.iter().position(|&e| e == c) {
                    Some(ai) => {
                        for w in 0..win {
                            assert_eq!(signal_row[start + w], expected[ai * win + w]);
                        }
                        for (s, v) in signal_row.iter().enumerate() {
                            if s < start || s >= end {
                                assert_eq!(*v, 0.0);
                            }
                        }
                    }
                    None => assert!(signal_row.iter().all(|v| *v == 0.0)),
                }
            }
        }
    }

    #[test]
    fn repetitions_share_the_clean_signal() {
        let mut spec = tiny_spec();
        spec.noise_std = 0.0;
        let data = synth_generate(&spec).unwrap();
        // Trials are image-major with repetitions adjacent.
        for img in 0..data.train.n_trials() / spec.repetitions {
            let first = data.train.epochs.trial(img * spec.repetitions);
            for rep in 1..spec.repetitions {
                assert_eq!(first, data.train.epochs.trial(img * spec.repetitions + rep));
            }
        }
        assert_ne!(data.train.epochs.trial(0), data.train.epochs.trial(spec.repetitions));
    }

    #[test]
    fn counts_ids_and_pairing_line_up() {
        let spec = tiny_spec();
        let data = synth_generate(&spec).unwrap();
        assert_eq!(
            data.train.n_trials(),
            spec.n_concepts * spec.images_per_concept * spec.repetitions
        );
        assert_eq!(
            data.test.n_trials(),
            spec.test_concepts * spec.test_images_per_concept * spec.test_repetitions
        );
        assert_eq!(
            data.template_bank.n_images(),
            spec.test_concepts * spec.template_images_per_concept
        );
        for tid in &data.template_bank.image_ids {
            assert!(!data.train.stimulus_ids.contains(tid));
            assert!(!data.test.stimulus_ids.contains(tid));
        }
        let paired = pair_by_stimulus(data.train, data.train_bank).unwrap();
        assert_eq!(paired.n_pairs(), spec.n_concepts * spec.images_per_concept * spec.repetitions);
        // Held-out concepts never appear in the train split.
        let test_concepts: std::collections::HashSet<&String> =
            data.test.concept_ids.iter().collect();
        for cid in &paired.eeg.concept_ids {
            assert!(!test_concepts.contains(cid));
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn carrier_modulates_inside_the_window_only() {
        let mut spec = tiny_spec();
        spec.noise_std = 0.0;
        let plain = synth_generate(&spec).unwrap();
        spec.carrier_hz = Some(4.0);
        let modulated = synth_generate(&spec).unwrap();
        let (start, end) = spec.signal_window;
        let a = plain.train.epochs.row(0, 0, 0);
        let b = modulated.train.epochs.row(0, 0, 0);
        assert!(a[start..end] != b[start..end]);
        // The first window sample sits at phase zero.
        assert_eq!(b[start], 0.0);
        for s in 0..start {
            assert_eq!(b[s], 0.0);
        }
        for s in end..spec.t {
            assert_eq!(b[s], 0.0);
        }
    }

    #[test]
    fn truth_round_trips_through_disk() {
        let data = synth_generate(&tiny_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.truth.save(dir.path()).unwrap();
        let back = GroundTruth::load(dir.path()).unwrap();
        assert_eq!(back.concept_features.data(), data.truth.concept_features.data());
        assert_eq!(back.mixing.data(), data.truth.mixing.data());
        assert_eq!(back.active_electrodes, data.truth.active_electrodes);
        assert_eq!(back.signal_window, data.truth.signal_window);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = tiny_spec();
        s.signal_window = (15, 5);
        assert!(matches!(synth_generate(&s), Err(Error::Argument(_))));
        let mut s = tiny_spec();
        s.signal_window = (0, 21);
        assert!(matches!(synth_generate(&s), Err(Error::Argument(_))));
        let mut s = tiny_spec();
        s.carrier_hz = Some(200.0);
        assert!(matches!(synth_generate(&s), Err(Error::Argument(_))));
        let mut s = tiny_spec();
        s.active_electrodes = Some(vec![0, 4]);
        assert!(matches!(synth_generate(&s), Err(Error::Argument(_))));
        let mut s = tiny_spec();
        s.images_per_concept = 0;
        assert!(matches!(synth_generate(&s), Err(Error::Argument(_))));
    }

    #[test]
    fn categories_tighten_within_cluster_similarity() {
        let mut spec = tiny_spec();
        spec.n_concepts = 12;
        spec.n_categories = Some(3);
        spec.category_spread = 0.2;
        let data = synth_generate(&spec).unwrap();
        let cats = data.truth.category_ids.as_ref().unwrap();
        assert_eq!(cats.len(), spec.n_concepts + spec.test_concepts);
        let dot = |a: &[f32], b: &[f32]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
        };
        let mut within = Vec::new();
        let mut across = Vec::new();
        for i in 0..spec.n_concepts {
            for j in (i + 1)..spec.n_concepts {
                let sim = dot(
                    data.truth.concept_features.row(i),
                    data.truth.concept_features.row(j),
                );
                if cats[i] == cats[j] {
                    within.push(sim);
                } else {
                    across.push(sim);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&within) > mean(&across) + 0.3);
    }
}
