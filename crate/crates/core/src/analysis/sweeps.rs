//! Accuracy sweeps over masking, ablation, filtering and data-budget grids.
//!
//! Every sweep starts with an unablated baseline point and is deterministic
//! given (parameters, data, grid, seed). A directory-backed [`PointStore`]
//! writes each finished point as its own JSON record, so interrupted sweeps
//! resume where they stopped instead of recomputing.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{train, TrainConfig, TrainOutcome};
use crate::data_io::{pair_by_stimulus, subset_epochs, EEGEpochSet, PairedDataset};
use crate::encoders::{EncoderParams, HyperParams};
use crate::preprocess::{
    ablate_electrodes, bandpass, electrodes_in_region, mask_time_window, repetition_groups,
    BandSpec, Region,
};
use crate::zeroshot::TemplateBank;
use crate::{Error, Result};

use super::{EvalOptions, Evaluator, SweepResult};

/// Default masking-grid step, in ms.
pub const DEFAULT_TIME_STEP_MS: f64 = 100.0;

/// The repetition grid 5, 10, ..., 80.
pub fn default_repetition_grid() -> Vec<usize> {
    (1..=16).map(|k| 5 * k).collect()
}

/// The training-budget grid 0.25, 0.5, 0.75, 1.0.
pub fn default_size_fractions() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}

/// Which end of the epoch the kept window grows from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSweepMode {
    /// Keep [0, x) for growing x.
    Forward,
    /// Keep [x, end) for growing x.
    Backward,
    /// Keep one step-wide window [x, x + step) sliding over the epoch.
    Segment,
}

impl TimeSweepMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TimeSweepMode::Forward => "forward",
            TimeSweepMode::Backward => "backward",
            TimeSweepMode::Segment => "segment",
        }
    }

    pub fn parse(s: &str) -> Result<TimeSweepMode> {
        match s {
            "forward" => Ok(TimeSweepMode::Forward),
            "backward" => Ok(TimeSweepMode::Backward),
            "segment" => Ok(TimeSweepMode::Segment),
            other => Err(Error::Argument(format!(
                "unknown time sweep mode '{other}' (forward|backward|segment)"
            ))),
        }
    }
}

/// Condition- or repetition-axis subsampling for the training-size sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeAxis {
    /// Subsample distinct stimuli, keeping all their repetitions.
    Conditions,
    /// Subsample repetition indices across all stimuli.
    Repetitions,
}

impl SizeAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SizeAxis::Conditions => "conditions",
            SizeAxis::Repetitions => "repetitions",
        }
    }

    pub fn parse(s: &str) -> Result<SizeAxis> {
        match s {
            "conditions" => Ok(SizeAxis::Conditions),
            "repetitions" => Ok(SizeAxis::Repetitions),
            other => Err(Error::Argument(format!(
                "unknown size axis '{other}' (conditions|repetitions)"
            ))),
        }
    }
}

/// Training-size sweep grid: nested seeded subsets along one axis.
#[derive(Debug, Clone)]
pub struct SizeSpec {
    /// Kept fractions, each in (0, 1].
    pub fractions: Vec<f64>,
    pub axis: SizeAxis,
    /// Seed of the subsampling shuffle. Subsets nest: a smaller fraction is
    /// always a prefix of a larger one under the same seed.
    pub seed: u64,
}

/// Training recipe for sweeps whose points each fit a fresh encoder.
pub struct RetrainContext<'a> {
    pub train: &'a PairedDataset,
    pub val: Option<&'a PairedDataset>,
    pub hyper: HyperParams,
    pub cfg: TrainConfig,
}

impl RetrainContext<'_> {
    /// Trains on transformed copies of the train (and validation) epochs.
    fn run(
        &self,
        transform: &dyn Fn(&EEGEpochSet) -> Result<EEGEpochSet>,
    ) -> Result<EncoderParams<f32>> {
        let train_ds = pair_by_stimulus(transform(&self.train.eeg)?, self.train.bank.clone())?;
        let val_ds = match self.val {
            Some(v) => Some(pair_by_stimulus(transform(&v.eeg)?, v.bank.clone())?),
            None => None,
        };
        self.finish(train(&train_ds, val_ds.as_ref(), self.hyper, &self.cfg, |_| {})?)
    }

    /// Trains on the listed train trials; the validation split stays whole.
    fn run_on_subset(&self, trials: &[usize]) -> Result<EncoderParams<f32>> {
        let eeg = subset_epochs(&self.train.eeg, trials)?;
        let train_ds = pair_by_stimulus(eeg, self.train.bank.clone())?;
        self.finish(train(&train_ds, self.val, self.hyper, &self.cfg, |_| {})?)
    }

    fn finish(&self, outcome: TrainOutcome) -> Result<EncoderParams<f32>> {
        if let Some(why) = outcome.aborted {
            return Err(Error::NonFinite(format!("retraining aborted: {why}")));
        }
        Ok(match outcome.best {
            Some(best) => best.params,
            None => outcome.params,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PointRecord {
    axis: String,
    label: String,
    value: f64,
    top1: f64,
    top5: f64,
}

/// Where finished grid points are remembered. Use one directory per sweep;
/// records are checked against the grid on reuse.
pub struct PointStore {
    dir: Option<PathBuf>,
}

impl PointStore {
    /// Keeps nothing; every run computes every point.
    pub fn memory() -> PointStore {
        PointStore { dir: None }
    }

    /// Persists one JSON record per finished point under `dir`.
    pub fn at(dir: impl AsRef<Path>) -> Result<PointStore> {
        std::fs::create_dir_all(dir.as_ref())?;
        Ok(PointStore {
            dir: Some(dir.as_ref().to_path_buf()),
        })
    }

    fn path(&self, idx: usize) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("point_{idx:03}.json")))
    }

    fn load(&self, idx: usize, axis: &str, label: &str) -> Result<Option<PointRecord>> {
        let Some(path) = self.path(idx) else {
            return Ok(None);
        };
        if !path.exists() {
            return Ok(None);
        }
        let rec: PointRecord = serde_json::from_reader(BufReader::new(File::open(&path)?))?;
        if rec.axis != axis || rec.label != label {
            return Err(Error::Integrity(format!(
                "{} holds point '{}'/'{}', expected '{axis}'/'{label}'; \
                 the store belongs to a different grid",
                path.display(),
                rec.axis,
                rec.label
            )));
        }
        Ok(Some(rec))
    }

    fn save(&self, idx: usize, rec: &PointRecord) -> Result<()> {
        let Some(path) = self.path(idx) else {
            return Ok(());
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), rec)?;
        Ok(())
    }
}

struct Point<P> {
    label: String,
    value: f64,
    cfg: P,
}

fn run_points<P>(
    axis: &str,
    points: Vec<Point<P>>,
    meta: BTreeMap<String, String>,
    store: &PointStore,
    mut eval_point: impl FnMut(&P) -> Result<(f64, f64)>,
) -> Result<SweepResult> {
    let mut labels = Vec::with_capacity(points.len());
    let mut values = Vec::with_capacity(points.len());
    let mut top1 = Vec::with_capacity(points.len());
    let mut top5 = Vec::with_capacity(points.len());
    for (idx, point) in points.iter().enumerate() {
        let rec = match store.load(idx, axis, &point.label)? {
            Some(rec) => rec,
            None => {
                let (t1, t5) = eval_point(&point.cfg)?;
                let rec = PointRecord {
                    axis: axis.to_string(),
                    label: point.label.clone(),
                    value: point.value,
                    top1: t1,
                    top5: t5,
                };
                store.save(idx, &rec)?;
                rec
            }
        };
        labels.push(point.label.clone());
        values.push(point.value);
        top1.push(rec.top1);
        top5.push(rec.top5);
    }
    let result = SweepResult {
        axis: axis.to_string(),
        labels,
        values,
        top1,
        top5,
        meta,
    };
    result.validate()?;
    Ok(result)
}

fn fmt_ms(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{:.0}", v.round())
    } else {
        format!("{v}")
    }
}

/// Accuracy as a function of the kept time window.
///
/// Samples outside the window are zeroed at evaluation. With `retrain`,
/// every point (the baseline included) instead fits a fresh encoder on
/// identically masked training data; `ev.params` is not consulted then.
pub fn sweep_time(
    ev: &Evaluator,
    eeg: &EEGEpochSet,
    mode: TimeSweepMode,
    step_ms: f64,
    retrain: Option<&RetrainContext>,
    store: &PointStore,
) -> Result<SweepResult> {
    if !(step_ms.is_finite() && step_ms > 0.0) {
        return Err(Error::Argument(format!("step of {step_ms} ms is not usable")));
    }
    let duration_ms = eeg.n_samples() as f64 / eeg.sample_rate * 1000.0;
    if step_ms > duration_ms + 1e-9 {
        return Err(Error::Argument(format!(
            "step of {step_ms} ms exceeds the {duration_ms} ms epoch"
        )));
    }
    let mut points: Vec<Point<Option<(f64, f64)>>> = vec![Point {
        label: "full".into(),
        value: duration_ms,
        cfg: None,
    }];
    match mode {
        TimeSweepMode::Forward => {
            let mut k = 1;
            while k as f64 * step_ms <= duration_ms + 1e-9 {
                let end = k as f64 * step_ms;
                points.push(Point {
                    label: format!("0-{}ms", fmt_ms(end)),
                    value: end,
                    cfg: Some((0.0, end)),
                });
                k += 1;
            }
        }
        TimeSweepMode::Backward => {
            let mut k = 1;
            while k as f64 * step_ms < duration_ms - 1e-9 {
                let start = k as f64 * step_ms;
                points.push(Point {
                    label: format!("{}-{}ms", fmt_ms(start), fmt_ms(duration_ms)),
                    value: start,
                    cfg: Some((start, duration_ms)),
                });
                k += 1;
            }
        }
        TimeSweepMode::Segment => {
            let mut k = 0;
            while k as f64 * step_ms + step_ms <= duration_ms + 1e-9 {
                let start = k as f64 * step_ms;
                points.push(Point {
                    label: format!("{}-{}ms", fmt_ms(start), fmt_ms(start + step_ms)),
                    value: start,
                    cfg: Some((start, start + step_ms)),
                });
                k += 1;
            }
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("mode".into(), mode.as_str().into());
    meta.insert("step_ms".into(), fmt_ms(step_ms));
    meta.insert("duration_ms".into(), fmt_ms(duration_ms));
    meta.insert("retrain".into(), retrain.is_some().to_string());
    if let Some(rc) = retrain {
        meta.insert("train_seed".into(), rc.cfg.seed.to_string());
    }
    let axis = format!("time_{}", mode.as_str());
    run_points(&axis, points, meta, store, |cfg| {
        let masked = match cfg {
            None => None,
            Some(win) => Some(mask_time_window(eeg, *win)?),
        };
        let set = masked.as_ref().unwrap_or(eeg);
        match retrain {
            None => ev.accuracy(set),
            Some(rc) => {
                let params = match cfg {
                    None => rc.run(&|s| Ok(s.clone()))?,
                    Some(win) => rc.run(&|s| mask_time_window(s, *win))?,
                };
                Evaluator { params: &params, ..*ev }.accuracy(set)
            }
        }
    })
}

/// Accuracy with one scalp region zeroed at a time, after a no-ablation
/// baseline. Regions without channels in this montage are skipped and noted
/// in the metadata.
pub fn sweep_regions(
    ev: &Evaluator,
    eeg: &EEGEpochSet,
    overrides: &HashMap<String, Region>,
    store: &PointStore,
) -> Result<SweepResult> {
    let mut points: Vec<Point<Vec<usize>>> = vec![Point {
        label: "none".into(),
        value: 0.0,
        cfg: Vec::new(),
    }];
    let mut meta = BTreeMap::new();
    for (i, region) in Region::ALL.iter().enumerate() {
        let channels = electrodes_in_region(&eeg.channel_names, *region, overrides)?;
        meta.insert(
            format!("channels_{}", region.name()),
            channels.len().to_string(),
        );
        if channels.is_empty() {
            continue;
        }
        points.push(Point {
            label: region.name().into(),
            value: (i + 1) as f64,
            cfg: channels,
        });
    }
    run_points("region", points, meta, store, |channels| {
        if channels.is_empty() {
            ev.accuracy(eeg)
        } else {
            ev.accuracy(&ablate_electrodes(eeg, channels)?)
        }
    })
}

/// Accuracy per frequency band, retraining on band-limited data.
///
/// Both the training and the test epochs pass through the same band filter,
/// so no out-of-band information leaks across a point. The baseline point
/// retrains on unfiltered data.
pub fn sweep_bands(
    rc: &RetrainContext,
    test_eeg: &EEGEpochSet,
    templates: &TemplateBank,
    opts: EvalOptions,
    bands: &[BandSpec],
    store: &PointStore,
) -> Result<SweepResult> {
    if bands.is_empty() {
        return Err(Error::Argument("no bands to sweep".into()));
    }
    let mut points: Vec<Point<Option<BandSpec>>> = vec![Point {
        label: "full".into(),
        value: 0.0,
        cfg: None,
    }];
    let mut meta = BTreeMap::new();
    meta.insert("retrain".into(), "true".into());
    meta.insert("train_seed".into(), rc.cfg.seed.to_string());
    for band in bands {
        meta.insert(
            format!("band_{}", band.name),
            format!("{}-{}Hz", band.lo, band.hi),
        );
        points.push(Point {
            label: band.name.clone(),
            value: 0.5 * (band.lo + band.hi),
            cfg: Some(band.clone()),
        });
    }
    run_points("band", points, meta, store, |cfg| match cfg {
        None => {
            let params = rc.run(&|s| Ok(s.clone()))?;
            Evaluator { params: &params, templates, opts }.accuracy(test_eeg)
        }
        Some(band) => {
            let params = rc.run(&|s| bandpass(s, band))?;
            let filtered = bandpass(test_eeg, band)?;
            Evaluator { params: &params, templates, opts }.accuracy(&filtered)
        }
    })
}

/// Accuracy as a function of the training budget.
///
/// Each fraction retrains on a nested seeded subset of the training split
/// (by stimulus or by repetition index) and evaluates on the fixed test
/// split. The baseline point trains on everything.
pub fn sweep_training_size(
    rc: &RetrainContext,
    test_eeg: &EEGEpochSet,
    templates: &TemplateBank,
    opts: EvalOptions,
    spec: &SizeSpec,
    store: &PointStore,
) -> Result<SweepResult> {
    if spec.fractions.is_empty() {
        return Err(Error::Argument("no fractions to sweep".into()));
    }
    for &f in &spec.fractions {
        if !(f.is_finite() && f > 0.0 && f <= 1.0) {
            return Err(Error::Argument(format!(
                "fraction {f} is outside (0, 1]"
            )));
        }
    }
    let eeg = &rc.train.eeg;
    let keys: Vec<String> = match spec.axis {
        SizeAxis::Conditions => {
            let mut seen = std::collections::HashSet::new();
            eeg.stimulus_ids
                .iter()
                .filter(|s| seen.insert(s.as_str()))
                .cloned()
                .collect()
        }
        SizeAxis::Repetitions => {
            let mut reps = eeg.repetition_index.clone();
            reps.sort_unstable();
            reps.dedup();
            reps.iter().map(|r| r.to_string()).collect()
        }
    };
    let mut shuffled: Vec<usize> = (0..keys.len()).collect();
    shuffled.shuffle(&mut ChaCha12Rng::seed_from_u64(spec.seed));

    let trials_for = |fraction: f64| -> Vec<usize> {
        let keep = ((fraction * keys.len() as f64).ceil() as usize)
            .clamp(1, keys.len());
        let kept: std::collections::HashSet<&str> = shuffled[..keep]
            .iter()
            .map(|&i| keys[i].as_str())
            .collect();
        (0..eeg.n_trials())
            .filter(|&t| match spec.axis {
                SizeAxis::Conditions => kept.contains(eeg.stimulus_ids[t].as_str()),
                SizeAxis::Repetitions => {
                    kept.contains(eeg.repetition_index[t].to_string().as_str())
                }
            })
            .collect()
    };

    let mut points: Vec<Point<Vec<usize>>> = vec![Point {
        label: "full".into(),
        value: 1.0,
        cfg: (0..eeg.n_trials()).collect(),
    }];
    for &f in &spec.fractions {
        points.push(Point {
            label: format!("{f}"),
            value: f,
            cfg: trials_for(f),
        });
    }
    let mut meta = BTreeMap::new();
    meta.insert("size_axis".into(), spec.axis.as_str().into());
    meta.insert("subsample_seed".into(), spec.seed.to_string());
    meta.insert("train_seed".into(), rc.cfg.seed.to_string());
    meta.insert("n_keys".into(), keys.len().to_string());
    run_points("training_size", points, meta, store, |trials| {
        let params = rc.run_on_subset(trials)?;
        Evaluator { params: &params, templates, opts }.accuracy(test_eeg)
    })
}

/// Accuracy as a function of how many test repetitions are averaged.
///
/// The baseline averages all available repetitions; each grid point averages
/// the first n per stimulus.
pub fn sweep_test_repetitions(
    ev: &Evaluator,
    eeg: &EEGEpochSet,
    reps: &[usize],
    store: &PointStore,
) -> Result<SweepResult> {
    if reps.is_empty() {
        return Err(Error::Argument("no repetition counts to sweep".into()));
    }
    let available = repetition_groups(eeg, None)?
        .iter()
        .map(|g| g.trials.len())
        .min()
        .unwrap_or(0);
    for &n in reps {
        if n == 0 || n > available {
            return Err(Error::Argument(format!(
                "cannot average {n} repetitions: every stimulus has at least \
                 {available} and at least 1 is required"
            )));
        }
    }
    let mut points: Vec<Point<Option<usize>>> = vec![Point {
        label: "all".into(),
        value: available as f64,
        cfg: None,
    }];
    for &n in reps {
        points.push(Point {
            label: n.to_string(),
            value: n as f64,
            cfg: Some(n),
        });
    }
    let mut meta = BTreeMap::new();
    meta.insert("available".into(), available.to_string());
    run_points("test_repetitions", points, meta, store, |cfg| {
        let mut sub = *ev;
        sub.opts.avg_reps = *cfg;
        sub.accuracy(eeg)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tests::{fixture, tiny_hyper, Fixture};
    use crate::encoders::ModuleKind;

    fn evaluator<'a>(fx: &'a Fixture) -> Evaluator<'a> {
        Evaluator {
            params: &fx.params,
            templates: &fx.tb,
            opts: EvalOptions::default(),
        }
    }

    #[test]
    fn forward_sweep_full_window_matches_the_baseline_exactly() {
        let fx = fixture(ModuleKind::None, 3);
        let ev = evaluator(&fx);
        // 30 samples at 30 Hz = 1000 ms; a 250 ms step divides it evenly.
        let sweep = sweep_time(
            &ev,
            &fx.data.test,
            TimeSweepMode::Forward,
            250.0,
            None,
            &PointStore::memory(),
        )
        .unwrap();
        assert_eq!(sweep.labels[0], "full");
        assert_eq!(sweep.labels.len(), 5);
        let last = sweep.len() - 1;
        assert_eq!(sweep.labels[last], "0-1000ms");
        assert_eq!(sweep.top1[last], sweep.top1[0]);
        assert_eq!(sweep.top5[last], sweep.top5[0]);
        let (t1, t5) = ev.accuracy(&fx.data.test).unwrap();
        assert_eq!(sweep.top1[0], t1);
        assert_eq!(sweep.top5[0], t5);

        let again = sweep_time(
            &ev,
            &fx.data.test,
            TimeSweepMode::Forward,
            250.0,
            None,
            &PointStore::memory(),
        )
        .unwrap();
        assert_eq!(sweep.top1, again.top1, "sweeps are deterministic");
    }

    #[test]
    fn backward_and_segment_grids_have_the_expected_points() {
        let fx = fixture(ModuleKind::None, 3);
        let ev = evaluator(&fx);
        let back = sweep_time(
            &ev,
            &fx.data.test,
            TimeSweepMode::Backward,
            250.0,
            None,
            &PointStore::memory(),
        )
        .unwrap();
        assert_eq!(
            back.labels,
            vec!["full", "250-1000ms", "500-1000ms", "750-1000ms"]
        );
        let seg = sweep_time(
            &ev,
            &fx.data.test,
            TimeSweepMode::Segment,
            250.0,
            None,
            &PointStore::memory(),
        )
        .unwrap();
        assert_eq!(
            seg.labels,
            vec!["full", "0-250ms", "250-500ms", "500-750ms", "750-1000ms"]
        );
        assert!(seg.validate().is_ok());
    }

    #[test]
    fn region_sweep_baseline_reproduces_plain_evaluation() {
        let fx = fixture(ModuleKind::None, 4);
        let ev = evaluator(&fx);
        let sweep = sweep_regions(
            &ev,
            &fx.data.test,
            &HashMap::new(),
            &PointStore::memory(),
        )
        .unwrap();
        // Fz/Cz/Pz/Oz: the montage has no temporal channel, so that region
        // is skipped and noted in the metadata.
        assert_eq!(sweep.labels, vec!["none", "frontal", "central", "parietal", "occipital"]);
        assert_eq!(sweep.meta["channels_temporal"], "0");
        let (t1, _) = ev.accuracy(&fx.data.test).unwrap();
        assert_eq!(sweep.top1[0], t1);
    }

    #[test]
    fn repetition_sweep_baseline_averages_everything() {
        let fx = fixture(ModuleKind::None, 5);
        let ev = evaluator(&fx);
        let sweep = sweep_test_repetitions(
            &ev,
            &fx.data.test,
            &[1, 2, 4],
            &PointStore::memory(),
        )
        .unwrap();
        assert_eq!(sweep.labels, vec!["all", "1", "2", "4"]);
        assert_eq!(sweep.meta["available"], "4");
        let (t1, _) = ev.accuracy(&fx.data.test).unwrap();
        assert_eq!(sweep.top1[0], t1);
        // 4 repetitions is all of them, so both points agree exactly.
        assert_eq!(sweep.top1[3], sweep.top1[0]);
        assert!(matches!(
            sweep_test_repetitions(&ev, &fx.data.test, &[5], &PointStore::memory()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn point_store_resumes_and_rejects_foreign_grids() {
        let fx = fixture(ModuleKind::None, 6);
        let ev = evaluator(&fx);
        let dir = tempfile::tempdir().unwrap();
        let store = PointStore::at(dir.path()).unwrap();
        let first = sweep_regions(&ev, &fx.data.test, &HashMap::new(), &store).unwrap();

        // Tamper with a stored point: the rerun must trust the record
        // instead of recomputing it.
        let path = dir.path().join("point_001.json");
        let mut rec: PointRecord =
            serde_json::from_reader(File::open(&path).unwrap()).unwrap();
        rec.top1 = 0.123;
        serde_json::to_writer(File::create(&path).unwrap(), &rec).unwrap();
        let resumed = sweep_regions(&ev, &fx.data.test, &HashMap::new(), &store).unwrap();
        assert_eq!(resumed.top1[1], 0.123);
        assert_eq!(resumed.top1[0], first.top1[0]);

        // A record from a different grid is an error, not a silent reuse.
        rec.label = "somewhere_else".into();
        serde_json::to_writer(File::create(&path).unwrap(), &rec).unwrap();
        assert!(matches!(
            sweep_regions(&ev, &fx.data.test, &HashMap::new(), &store),
            Err(Error::Integrity(_))
        ));
    }

    fn retrain_fixture(fx: &Fixture) -> (PairedDataset, TrainConfig) {
        let ds = pair_by_stimulus(fx.data.train.clone(), fx.data.train_bank.clone()).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        (ds, cfg)
    }

    #[test]
    fn band_sweep_baseline_equals_a_direct_training_run() {
        let fx = fixture(ModuleKind::None, 7);
        let (ds, cfg) = retrain_fixture(&fx);
        let rc = RetrainContext {
            train: &ds,
            val: None,
            hyper: tiny_hyper(ModuleKind::None),
            cfg,
        };
        let bands = [
            BandSpec::custom("low", 0.5, 7.0),
            BandSpec::custom("high", 7.0, 14.0),
        ];
        let sweep = sweep_bands(
            &rc,
            &fx.data.test,
            &fx.tb,
            EvalOptions::default(),
            &bands,
            &PointStore::memory(),
        )
        .unwrap();
        assert_eq!(sweep.labels, vec!["full", "low", "high"]);

        // Same data, same seed: the baseline point is the ordinary pipeline.
        let outcome = train(&ds, None, rc.hyper, &rc.cfg, |_| {}).unwrap();
        let ev = Evaluator {
            params: &outcome.params,
            templates: &fx.tb,
            opts: EvalOptions::default(),
        };
        let (t1, t5) = ev.accuracy(&fx.data.test).unwrap();
        assert_eq!(sweep.top1[0], t1);
        assert_eq!(sweep.top5[0], t5);
    }

    #[test]
    fn training_size_full_fraction_equals_the_baseline() {
        let fx = fixture(ModuleKind::None, 8);
        let (ds, cfg) = retrain_fixture(&fx);
        let rc = RetrainContext {
            train: &ds,
            val: None,
            hyper: tiny_hyper(ModuleKind::None),
            cfg,
        };
        let spec = SizeSpec {
            fractions: vec![0.5, 1.0],
            axis: SizeAxis::Conditions,
            seed: 21,
        };
        let sweep = sweep_training_size(
            &rc,
            &fx.data.test,
            &fx.tb,
            EvalOptions::default(),
            &spec,
            &PointStore::memory(),
        )
        .unwrap();
        assert_eq!(sweep.labels, vec!["full", "0.5", "1"]);
        assert_eq!(sweep.top1[2], sweep.top1[0], "fraction 1 is the full data");
        assert_eq!(sweep.top5[2], sweep.top5[0]);

        let reps = SizeSpec {
            fractions: vec![0.5],
            axis: SizeAxis::Repetitions,
            seed: 21,
        };
        let by_rep = sweep_training_size(
            &rc,
            &fx.data.test,
            &fx.tb,
            EvalOptions::default(),
            &reps,
            &PointStore::memory(),
        )
        .unwrap();
        assert_eq!(by_rep.labels, vec!["full", "0.5"]);
        assert!(matches!(
            sweep_training_size(
                &rc,
                &fx.data.test,
                &fx.tb,
                EvalOptions::default(),
                &SizeSpec { fractions: vec![0.0], axis: SizeAxis::Conditions, seed: 0 },
                &PointStore::memory(),
            ),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn masked_retraining_runs_per_window() {
        let fx = fixture(ModuleKind::None, 9);
        let (ds, cfg) = retrain_fixture(&fx);
        let rc = RetrainContext {
            train: &ds,
            val: None,
            hyper: tiny_hyper(ModuleKind::None),
            cfg,
        };
        let ev = evaluator(&fx);
        let sweep = sweep_time(
            &ev,
            &fx.data.test,
            TimeSweepMode::Forward,
            500.0,
            Some(&rc),
            &PointStore::memory(),
        )
        .unwrap();
        assert_eq!(sweep.labels, vec!["full", "0-500ms", "0-1000ms"]);
        // Masking the whole epoch changes nothing, so the retrained full
        // window reproduces the baseline run bit for bit.
        assert_eq!(sweep.top1[2], sweep.top1[0]);
        assert_eq!(sweep.meta["retrain"], "true");
    }
}
