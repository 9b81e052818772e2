//! Experiment harness: seeded trials over sigma/noise grids, resumable
//! sweeps with one JSON manifest per trial, initial-firing-rate probes,
//! and CSV report tables derived from manifests alone.

use crate::encode::{load_events, load_idx, EncodedDataset, EncodingConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{
    kruskal_wallis, mean_category_distances, CategoryDistances, StatTestResult,
};
use crate::net::{simulate, NetworkSpec};
use crate::rng::{derive, stream, trial_seed};
use crate::train::{
    init_weights, train_run, EpochRecord, NoiseModel, TrainConfig, TrainOutcome,
    TrainRunOptions, WeightSnapshot,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MANIFEST_SCHEMA: &str = "eisnn-run-manifest/1";

/// Biological band of initial hidden firing rates (Hz) targeted by the
/// sigma probe.
pub const RATE_BAND_HZ: (f64, f64) = (0.01, 25.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    FashionMnist,
    Shd,
}

impl DatasetKind {
    pub fn preset(&self, n_excitatory: usize) -> Result<NetworkSpec> {
        match self {
            DatasetKind::FashionMnist => NetworkSpec::fashion_mnist(n_excitatory),
            DatasetKind::Shd => NetworkSpec::shd(n_excitatory),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetKind::FashionMnist => f.write_str("fashion-mnist"),
            DatasetKind::Shd => f.write_str("shd"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EiRatio {
    pub n_excitatory: usize,
    pub n_inhibitory: usize,
}

impl std::fmt::Display for EiRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.n_excitatory, self.n_inhibitory)
    }
}

/// Metric knobs for a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricFlags {
    /// Van Rossum kernel time constant in ms.
    pub distance_tau_ms: f64,
    /// Seeded case subsample size for distance averaging.
    pub distance_cases: usize,
    /// Compute distances on the test split instead of the train split.
    pub distance_on_test: bool,
    /// Scan for sign-mask violations after every update.
    pub scan_sign_violations: bool,
    pub histogram_bins: usize,
}

impl Default for MetricFlags {
    fn default() -> Self {
        MetricFlags {
            distance_tau_ms: 1.0,
            distance_cases: 1000,
            distance_on_test: false,
            scan_sign_violations: false,
            histogram_bins: 64,
        }
    }
}

/// Default logarithmic sigma grid spanning silent to saturated activity.
pub fn default_sigma_grid() -> Vec<f64> {
    (0..8)
        .map(|i| 10f64.powf(-4.0 + 3.0 * i as f64 / 7.0))
        .collect()
}

/// Full sweep configuration. Unknown keys in a config file are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Dataset root; falls back to the SNN_DATA_DIR environment variable.
    pub data_dir: Option<PathBuf>,
    pub ei_ratio: EiRatio,
    pub sigma_init_list: Vec<f64>,
    pub sigma_noise_ratio_list: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    pub train: TrainConfig,
    /// Seeded subset of the training split (None = all).
    pub train_subset: Option<usize>,
    /// Seeded subset of the test split used for per-epoch evaluation.
    pub eval_subset: Option<usize>,
    pub metrics: MetricFlags,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::FashionMnist,
            data_dir: None,
            ei_ratio: EiRatio {
                n_excitatory: 80,
                n_inhibitory: 20,
            },
            sigma_init_list: default_sigma_grid(),
            sigma_noise_ratio_list: vec![0.0],
            repeats: 1,
            base_seed: 0,
            train: TrainConfig::default(),
            train_subset: None,
            eval_subset: None,
            metrics: MetricFlags::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.sigma_init_list.is_empty() || self.sigma_noise_ratio_list.is_empty() {
            return Err(Error::Config("sigma and noise lists must be non-empty".into()));
        }
        if self.sigma_init_list.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("sigma_init values must be positive".into()));
        }
        if self.sigma_noise_ratio_list.iter().any(|&r| r < 0.0) {
            return Err(Error::Config("noise ratios must be >= 0".into()));
        }
        let spec = self.network_spec()?;
        spec.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let spec = self.dataset.preset(self.ei_ratio.n_excitatory)?;
        if spec.n_inhibitory != self.ei_ratio.n_inhibitory {
            return Err(Error::Config(format!(
                "ei_ratio {} does not partition the {}-unit hidden layer",
                self.ei_ratio, spec.n_hidden
            )));
        }
        Ok(spec)
    }

    pub fn resolved_data_dir(&self) -> Result<PathBuf> {
        if let Some(dir) = &self.data_dir {
            return Ok(dir.clone());
        }
        std::env::var_os("SNN_DATA_DIR")
            .map(PathBuf::from)
            .ok_or_else(|| {
                Error::Config("no data_dir configured and SNN_DATA_DIR is unset".into())
            })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Number of trials in the sweep grid.
    pub fn n_trials(&self) -> usize {
        self.sigma_init_list.len() * self.sigma_noise_ratio_list.len() * self.repeats
    }
}

/// Load and encode the train/test splits of a dataset from its root dir.
pub fn load_dataset(kind: DatasetKind, data_dir: &Path) -> Result<(EncodedDataset, EncodedDataset)> {
    match kind {
        DatasetKind::FashionMnist => {
            let enc = EncodingConfig::new(100, 1.0);
            let train = load_idx(
                &data_dir.join("train-images-idx3-ubyte"),
                &data_dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = load_idx(
                &data_dir.join("t10k-images-idx3-ubyte"),
                &data_dir.join("t10k-labels-idx1-ubyte"),
            )?;
            Ok((
                EncodedDataset::from_images(&train, &enc)?,
                EncodedDataset::from_images(&test, &enc)?,
            ))
        }
        DatasetKind::Shd => {
            let train = load_events(&data_dir.join("shd_train.spkevt"))?;
            let test = load_events(&data_dir.join("shd_test.spkevt"))?;
            Ok((
                EncodedDataset::from_event_sets(&train, 200, 1.0)?,
                EncodedDataset::from_event_sets(&test, 200, 1.0)?,
            ))
        }
    }
}

/// Mean per-neuron hidden firing rate in Hz of untrained weights over a
/// seeded sample.
pub fn initial_rate_probe(
    spec: &NetworkSpec,
    w_in: &Matrix,
    w_out: &Matrix,
    sample: &EncodedDataset,
) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Data("empty probe sample".into()));
    }
    sample.check_against(spec)?;
    let chunks: Vec<&[crate::net::SpikeRaster]> = sample.rasters.chunks(32).collect();
    let counts: Vec<Result<usize>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut total = 0usize;
            for raster in *chunk {
                total += simulate(spec, w_in, w_out, raster)?.hidden_spikes.total_spikes();
            }
            Ok(total)
        })
        .collect();
    let mut total = 0usize;
    for c in counts {
        total += c?;
    }
    let duration_s = spec.duration_ms() / 1000.0;
    Ok(total as f64 / (spec.n_hidden as f64 * sample.len() as f64 * duration_s))
}

/// Probe the grid and pick the sigma whose initial rate lies inside
/// `band`, preferring the one nearest `target_hz` (geometrically). When
/// the grid jumps over the band, log-bisect between the straddling points.
/// Returns (sigma, probed rate).
pub fn find_sigma_in_band(
    spec: &NetworkSpec,
    sigma_out: f64,
    probe_sample: &EncodedDataset,
    grid: &[f64],
    band: (f64, f64),
    target_hz: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::Parameter("empty sigma grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let init_seed = derive(seed, stream::INIT);
    let rate_of = |sigma: f64| -> Result<f64> {
        let (w_in, w_out) = init_weights(spec, sigma, sigma_out, init_seed)?;
        initial_rate_probe(spec, &w_in.values, &w_out.values, probe_sample)
    };
    let rates: Vec<f64> = sorted.iter().map(|&s| rate_of(s)).collect::<Result<_>>()?;

    let in_band: Vec<usize> = (0..sorted.len())
        .filter(|&i| rates[i] >= band.0 && rates[i] <= band.1)
        .collect();
    if let Some(&best) = in_band.iter().min_by(|&&a, &&b| {
        let da = (rates[a] / target_hz).ln().abs();
        let db = (rates[b] / target_hz).ln().abs();
        da.partial_cmp(&db).unwrap()
    }) {
        return Ok((sorted[best], rates[best]));
    }

    // grid jumped the band: bisect the first straddling gap in log space
    for i in 1..sorted.len() {
        if rates[i - 1] < band.0 && rates[i] > band.1 {
            let mut lo = sorted[i - 1];
            let mut hi = sorted[i];
            for _ in 0..60 {
                let mid = ((lo.ln() + hi.ln()) / 2.0).exp();
                let r = rate_of(mid)?;
                if r < band.0 {
                    lo = mid;
                } else if r > band.1 {
                    hi = mid;
                } else {
                    return Ok((mid, r));
                }
            }
            return Err(Error::Numeric(
                "sigma bisection failed to land inside the rate band".into(),
            ));
        }
    }
    Err(Error::Data(format!(
        "no sigma in the grid produces a rate inside [{}, {}] Hz (rates {:?})",
        band.0, band.1, rates
    )))
}

/// Identity of one trial inside a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialKey {
    pub trial_index: usize,
    pub sigma_init: f64,
    pub sigma_noise_ratio: f64,
    pub repeat: usize,
}

/// Every seed a trial consumes, recorded for re-analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub base: u64,
    pub trial: u64,
    pub init: u64,
    pub shuffle: u64,
    pub noise: u64,
    pub probe: u64,
    pub subsample: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummaries {
    pub tau_ms: f64,
    pub n_cases: usize,
    pub on_test_split: bool,
    pub pre_training: CategoryDistances,
    pub post_training: CategoryDistances,
}

/// Self-contained record of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema: String,
    pub dataset: DatasetKind,
    pub ei_ratio: EiRatio,
    pub trial: TrialKey,
    pub network: NetworkSpec,
    pub train_config: TrainConfig,
    pub noise: Option<NoiseModel>,
    pub seeds: SeedRecord,
    pub initial_rate_hz: f64,
    pub epochs: Vec<EpochRecord>,
    pub weight_snapshots: Vec<WeightSnapshot>,
    pub distances: DistanceSummaries,
    pub success: bool,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("bad manifest: {e}")))
    }

    /// JSON with the wall-clock measurement zeroed, for determinism
    /// comparisons (timing is the one inherently nondeterministic field).
    pub fn canonical_json(&self) -> String {
        let mut clone = self.clone();
        clone.wall_clock_seconds = 0.0;
        clone.to_json()
    }

    /// Per-trial accuracy for noise tables: mean test accuracy over the
    /// final `window` trained epochs.
    pub fn tail_mean_accuracy(&self, window: usize) -> f64 {
        let trained: Vec<f64> = self
            .epochs
            .iter()
            .filter(|e| e.epoch > 0)
            .map(|e| e.test_accuracy)
            .collect();
        if trained.is_empty() {
            return self.epochs.first().map_or(0.0, |e| e.test_accuracy);
        }
        let tail = &trained[trained.len().saturating_sub(window)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn peak_accuracy(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| e.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.test_accuracy)
    }
}

/// Dataset success rule: Fashion-MNIST requires peak accuracy strictly
/// over 50%; SHD requires the mean accuracy of the last 25 trained epochs
/// strictly over 30%.
pub fn success_rule(dataset: DatasetKind, epochs: &[EpochRecord]) -> bool {
    match dataset {
        DatasetKind::FashionMnist => {
            epochs.iter().map(|e| e.test_accuracy).fold(f64::NEG_INFINITY, f64::max) > 0.50
        }
        DatasetKind::Shd => {
            let trained: Vec<f64> = epochs
                .iter()
                .filter(|e| e.epoch > 0)
                .map(|e| e.test_accuracy)
                .collect();
            if trained.is_empty() {
                return false;
            }
            let tail = &trained[trained.len().saturating_sub(25)..];
            tail.iter().sum::<f64>() / tail.len() as f64 > 0.30
        }
    }
}

fn hidden_rasters_for(
    spec: &NetworkSpec,
    w_in: &Matrix,
    w_out: &Matrix,
    data: &EncodedDataset,
) -> Result<Vec<crate::net::SpikeRaster>> {
    let chunks: Vec<&[crate::net::SpikeRaster]> = data.rasters.chunks(32).collect();
    let partials: Vec<Result<Vec<crate::net::SpikeRaster>>> = chunks
        .par_iter()
        .map(|chunk| {
            chunk
                .iter()
                .map(|r| Ok(simulate(spec, w_in, w_out, r)?.hidden_spikes))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(data.len());
    for p in partials {
        out.extend(p?);
    }
    Ok(out)
}

/// Run one fully seeded trial and build its manifest. Also returns the
/// raw training outcome (final weights included) for callers that need
/// more than the manifest.
pub fn run_trial(
    cfg: &ExperimentConfig,
    spec: &NetworkSpec,
    train_data: &EncodedDataset,
    test_data: &EncodedDataset,
    key: TrialKey,
) -> Result<(RunManifest, TrainOutcome)> {
    let started = Instant::now();
    let trial = trial_seed(cfg.base_seed, key.trial_index as u64);
    let seeds = SeedRecord {
        base: cfg.base_seed,
        trial,
        init: derive(trial, stream::INIT),
        shuffle: derive(trial, stream::SHUFFLE),
        noise: derive(trial, stream::NOISE),
        probe: derive(trial, stream::PROBE),
        subsample: derive(trial, stream::SUBSAMPLE),
    };
    let train_cfg = TrainConfig {
        sigma_init: key.sigma_init,
        seed: trial,
        ..cfg.train.clone()
    };
    let noise = NoiseModel {
        sigma_noise_ratio: key.sigma_noise_ratio,
        seed: seeds.noise,
    };

    // probe the untrained network's firing rate on a seeded sample
    let probe_sample = train_data.seeded_subset(256, seeds.probe)?;
    let (w_in0, w_out0) = init_weights(spec, train_cfg.sigma_init, train_cfg.sigma_out, seeds.init)?;
    let initial_rate_hz = initial_rate_probe(spec, &w_in0.values, &w_out0.values, &probe_sample)?;

    // distance subsample, shared by the pre and post measurements
    let dist_source = if cfg.metrics.distance_on_test {
        test_data
    } else {
        train_data
    };
    let dist_sample = dist_source.seeded_subset(cfg.metrics.distance_cases, seeds.subsample)?;
    let pre_rasters = hidden_rasters_for(spec, &w_in0.values, &w_out0.values, &dist_sample)?;
    let pre_training =
        mean_category_distances(&pre_rasters, spec.n_excitatory, cfg.metrics.distance_tau_ms)?;
    drop(pre_rasters);

    let opts = TrainRunOptions {
        scan_sign_violations: cfg.metrics.scan_sign_violations,
        histogram_bins: cfg.metrics.histogram_bins,
    };
    let outcome = train_run(spec, train_data, test_data, &train_cfg, Some(&noise), &opts)?;

    let post_rasters =
        hidden_rasters_for(spec, &outcome.w_in.values, &outcome.w_out.values, &dist_sample)?;
    let post_training =
        mean_category_distances(&post_rasters, spec.n_excitatory, cfg.metrics.distance_tau_ms)?;

    let success = success_rule(cfg.dataset, &outcome.epochs);
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        dataset: cfg.dataset,
        ei_ratio: cfg.ei_ratio,
        trial: key,
        network: spec.clone(),
        train_config: train_cfg,
        noise: Some(noise),
        seeds,
        initial_rate_hz,
        epochs: outcome.epochs.clone(),
        weight_snapshots: outcome.weight_snapshots.clone(),
        distances: DistanceSummaries {
            tau_ms: cfg.metrics.distance_tau_ms,
            n_cases: dist_sample.len(),
            on_test_split: cfg.metrics.distance_on_test,
            pre_training,
            post_training,
        },
        success,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((manifest, outcome))
}

/// Write a manifest atomically (write-temp-then-rename).
pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, manifest.to_json()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunManifest::from_json(&text)
}

/// Load every `trial_*.json` manifest under a directory, sorted by index.
pub fn read_manifest_dir(dir: &Path) -> Result<Vec<RunManifest>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trial_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| read_manifest(p)).collect()
}

pub fn manifest_filename(trial_index: usize) -> String {
    format!("trial_{trial_index:05}.json")
}

/// Outcome counters of one sweep invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepStats {
    pub executed: usize,
    pub resumed: usize,
}

/// Run the full sigma x noise x repeat grid. Each trial is independently
/// seeded from the base seed and its grid index, so partial sweeps resume
/// to the identical manifest set: trials whose manifest file already
/// exists are loaded, not re-run.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    train_data: &EncodedDataset,
    test_data: &EncodedDataset,
    out_dir: Option<&Path>,
    mut on_trial: impl FnMut(usize, &RunManifest),
) -> Result<(Vec<RunManifest>, SweepStats)> {
    cfg.validate()?;
    let spec = cfg.network_spec()?;
    train_data.check_against(&spec)?;
    test_data.check_against(&spec)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let n_noise = cfg.sigma_noise_ratio_list.len();
    let mut manifests = Vec::with_capacity(cfg.n_trials());
    let mut stats = SweepStats {
        executed: 0,
        resumed: 0,
    };
    for (i_sigma, &sigma) in cfg.sigma_init_list.iter().enumerate() {
        for (i_noise, &ratio) in cfg.sigma_noise_ratio_list.iter().enumerate() {
            for repeat in 0..cfg.repeats {
                let trial_index = (i_sigma * n_noise + i_noise) * cfg.repeats + repeat;
                let path = out_dir.map(|d| d.join(manifest_filename(trial_index)));
                if let Some(p) = &path {
                    if p.exists() {
                        let manifest = read_manifest(p)?;
                        on_trial(trial_index, &manifest);
                        manifests.push(manifest);
                        stats.resumed += 1;
                        continue;
                    }
                }
                let key = TrialKey {
                    trial_index,
                    sigma_init: sigma,
                    sigma_noise_ratio: ratio,
                    repeat,
                };
                let (manifest, _) = run_trial(cfg, &spec, train_data, test_data, key)?;
                if let Some(p) = &path {
                    write_manifest(p, &manifest)?;
                }
                on_trial(trial_index, &manifest);
                manifests.push(manifest);
                stats.executed += 1;
            }
        }
    }
    Ok((manifests, stats))
}

/// The four CSV tables derivable from a set of manifests.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTables {
    /// Per-trial accuracy against probed initial firing rate.
    pub accuracy_vs_rate: String,
    /// Accuracy per noise level with t-tests against the all-excitatory
    /// baseline.
    pub accuracy_vs_noise: String,
    /// Per-epoch activity and percent-excitatory, overall and per class.
    pub activity_by_epoch: String,
    /// Distance-category medians with Kruskal-Wallis p-values.
    pub distance_categories: String,
}

impl ReportTables {
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("accuracy_vs_rate.csv", &self.accuracy_vs_rate),
            ("accuracy_vs_noise.csv", &self.accuracy_vs_noise),
            ("activity_by_epoch.csv", &self.activity_by_epoch),
            ("distance_categories.csv", &self.distance_categories),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Build the four report tables from manifests alone.
pub fn report(manifests: &[RunManifest]) -> Result<ReportTables> {
    if manifests.is_empty() {
        return Err(Error::Data("no manifests to report on".into()));
    }
    let mut sorted: Vec<&RunManifest> = manifests.iter().collect();
    sorted.sort_by(|a, b| {
        (format!("{}", a.dataset), a.trial.trial_index)
            .partial_cmp(&(format!("{}", b.dataset), b.trial.trial_index))
            .unwrap()
    });

    // (a) accuracy vs initial firing rate, one row per trial
    let mut fig1 = String::from(
        "dataset,ei_ratio,trial_index,sigma_init,sigma_noise_ratio,repeat,initial_rate_hz,peak_accuracy,final_accuracy,success\n",
    );
    for m in &sorted {
        fig1.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            m.dataset,
            m.ei_ratio,
            m.trial.trial_index,
            fmt_f(m.trial.sigma_init),
            fmt_f(m.trial.sigma_noise_ratio),
            m.trial.repeat,
            fmt_f(m.initial_rate_hz),
            fmt_f(m.peak_accuracy()),
            fmt_f(m.final_accuracy()),
            m.success
        ));
    }

    // (b) accuracy vs noise with t-tests against the 100:0 baseline at the
    // same noise level; per-trial accuracy is the mean of the final 10
    // trained epochs
    let mut groups: Vec<((String, String, u64), Vec<f64>, EiRatio)> = Vec::new();
    for m in &sorted {
        let key = (
            format!("{}", m.dataset),
            format!("{}", m.ei_ratio),
            m.trial.sigma_noise_ratio.to_bits(),
        );
        let acc = m.tail_mean_accuracy(10);
        match groups.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, accs, _)) => accs.push(acc),
            None => groups.push((key, vec![acc], m.ei_ratio)),
        }
    }
    let mut fig2 = String::from(
        "dataset,ei_ratio,sigma_noise_ratio,n_trials,mean_accuracy,std_accuracy,t_vs_100_0,p_vs_100_0\n",
    );
    for ((dataset, ei, noise_bits), accs, ratio) in &groups {
        let noise = f64::from_bits(*noise_bits);
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let std = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let baseline = groups.iter().find(|((d, e, nb), _, r)| {
            d == dataset && *nb == *noise_bits && r.n_inhibitory == 0 && e != ei
        });
        let test: Option<StatTestResult> = match baseline {
            Some((_, base_accs, _)) if ratio.n_inhibitory > 0 => {
                crate::metrics::welch_t_test(accs, base_accs).ok()
            }
            _ => None,
        };
        fig2.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            dataset,
            ei,
            fmt_f(noise),
            accs.len(),
            fmt_f(mean),
            fmt_f(std),
            fmt_opt(test.map(|t| t.statistic)),
            fmt_opt(test.map(|t| t.p_value)),
        ));
    }

    // (c) per-epoch activity, overall plus per class
    let mut fig34 = String::from(
        "dataset,ei_ratio,trial_index,epoch,class,cases,spikes_per_case_excitatory,spikes_per_case_inhibitory,percent_excitatory,accuracy,train_loss\n",
    );
    for m in &sorted {
        for e in &m.epochs {
            fig34.push_str(&format!(
                "{},{},{},{},all,{},{},{},{},{},{}\n",
                m.dataset,
                m.ei_ratio,
                m.trial.trial_index,
                e.epoch,
                e.per_class.iter().map(|c| c.cases).sum::<usize>(),
                fmt_f(e.activity.spikes_per_case_excitatory),
                fmt_f(e.activity.spikes_per_case_inhibitory),
                fmt_opt(e.activity.percent_excitatory),
                fmt_f(e.test_accuracy),
                fmt_opt(e.train_loss),
            ));
            for c in &e.activity.per_class {
                let acc = e
                    .per_class
                    .get(c.class)
                    .and_then(|pc| pc.accuracy);
                fig34.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},\n",
                    m.dataset,
                    m.ei_ratio,
                    m.trial.trial_index,
                    e.epoch,
                    c.class,
                    c.cases,
                    fmt_f(c.spikes_per_case_excitatory),
                    fmt_f(c.spikes_per_case_inhibitory),
                    fmt_opt(c.percent_excitatory),
                    fmt_opt(acc),
                ));
            }
        }
    }

    // (d) distance categories: pre-training over all trials, post-training
    // split by success, with Kruskal-Wallis across the three categories
    let mut fig5 = String::from(
        "dataset,ei_ratio,phase,group,n_networks,median_ee,median_ei,median_ii,kruskal_h,kruskal_p\n",
    );
    let mut ei_keys: Vec<(String, String)> = Vec::new();
    for m in &sorted {
        let key = (format!("{}", m.dataset), format!("{}", m.ei_ratio));
        if !ei_keys.contains(&key) {
            ei_keys.push(key);
        }
    }
    for (dataset, ei) in &ei_keys {
        let of_group = |phase: &str, keep: &dyn Fn(&RunManifest) -> bool| -> String {
            let selected: Vec<&&RunManifest> = sorted
                .iter()
                .filter(|m| {
                    format!("{}", m.dataset) == *dataset
                        && format!("{}", m.ei_ratio) == *ei
                        && keep(m)
                })
                .collect();
            let pick = |m: &RunManifest| {
                if phase == "pre" {
                    m.distances.pre_training
                } else {
                    m.distances.post_training
                }
            };
            let mut ee: Vec<f64> = selected.iter().filter_map(|m| pick(m).ee).collect();
            let mut eim: Vec<f64> = selected.iter().filter_map(|m| pick(m).ei).collect();
            let mut ii: Vec<f64> = selected.iter().filter_map(|m| pick(m).ii).collect();
            let kw = if !ee.is_empty() && !eim.is_empty() && !ii.is_empty() {
                kruskal_wallis(&[ee.clone(), eim.clone(), ii.clone()]).ok()
            } else {
                None
            };
            format!(
                "{},{},{},{}",
                selected.len(),
                fmt_opt(median(&mut ee)),
                fmt_opt(median(&mut eim)),
                fmt_opt(median(&mut ii)),
            ) + &format!(
                ",{},{}",
                fmt_opt(kw.map(|k| k.statistic)),
                fmt_opt(kw.map(|k| k.p_value))
            )
        };
        fig5.push_str(&format!(
            "{dataset},{ei},pre,all,{}\n",
            of_group("pre", &|_| true)
        ));
        fig5.push_str(&format!(
            "{dataset},{ei},post,success,{}\n",
            of_group("post", &|m| m.success)
        ));
        fig5.push_str(&format!(
            "{dataset},{ei},post,failed,{}\n",
            of_group("post", &|m| !m.success)
        ));
    }

    Ok(ReportTables {
        accuracy_vs_rate: fig1,
        accuracy_vs_noise: fig2,
        activity_by_epoch: fig34,
        distance_categories: fig5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::EncodedDataset;
    use crate::metrics::{ActivitySummary, ClassActivity};
    use crate::train::{ClassAccuracy, EpochRecord};

    fn tiny_images(n: usize, seed: u64) -> EncodedDataset {
        let samples = crate::synth::synth_images(n, seed, 1234);
        let cfg = crate::encode::EncodingConfig::new(100, 1.0);
        EncodedDataset::from_images(&samples, &cfg).unwrap()
    }

    fn tiny_config(out_epochs: usize) -> ExperimentConfig {
        ExperimentConfig {
            train: TrainConfig {
                epochs: out_epochs,
                batch_size: 16,
                ..TrainConfig::default()
            },
            sigma_init_list: vec![0.006],
            metrics: MetricFlags {
                distance_cases: 8,
                ..MetricFlags::default()
            },
            ..ExperimentConfig::default()
        }
    }

    fn fixture_epoch(epoch: usize, acc: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: (epoch > 0).then_some(2.0 - 0.1 * epoch as f64),
            test_accuracy: acc,
            per_class: vec![ClassAccuracy {
                class: 0,
                cases: 10,
                correct: (acc * 10.0) as usize,
                accuracy: Some(acc),
            }],
            activity: ActivitySummary {
                spikes_per_case_excitatory: 4.0,
                spikes_per_case_inhibitory: 2.0,
                percent_excitatory: Some(100.0 * 4.0 / 6.0),
                per_class: vec![ClassActivity {
                    class: 0,
                    cases: 10,
                    spikes_per_case_excitatory: 4.0,
                    spikes_per_case_inhibitory: 2.0,
                    percent_excitatory: Some(100.0 * 4.0 / 6.0),
                }],
            },
        }
    }

    fn fixture_manifest(index: usize, noise: f64, accs: &[f64], dist_scale: f64) -> RunManifest {
        let spec = NetworkSpec::fashion_mnist(80).unwrap();
        let epochs: Vec<EpochRecord> = accs
            .iter()
            .enumerate()
            .map(|(e, &a)| fixture_epoch(e, a))
            .collect();
        let success = success_rule(DatasetKind::FashionMnist, &epochs);
        RunManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            dataset: DatasetKind::FashionMnist,
            ei_ratio: EiRatio {
                n_excitatory: 80,
                n_inhibitory: 20,
            },
            trial: TrialKey {
                trial_index: index,
                sigma_init: 0.001,
                sigma_noise_ratio: noise,
                repeat: index,
            },
            network: spec,
            train_config: TrainConfig::default(),
            noise: Some(NoiseModel {
                sigma_noise_ratio: noise,
                seed: 9,
            }),
            seeds: SeedRecord {
                base: 1,
                trial: 2,
                init: 3,
                shuffle: 4,
                noise: 5,
                probe: 6,
                subsample: 7,
            },
            initial_rate_hz: 3.25,
            epochs,
            weight_snapshots: vec![],
            distances: DistanceSummaries {
                tau_ms: 1.0,
                n_cases: 8,
                on_test_split: false,
                pre_training: CategoryDistances {
                    ee: Some(1.30 * dist_scale),
                    ei: Some(1.29 * dist_scale),
                    ii: Some(1.31 * dist_scale),
                },
                post_training: CategoryDistances {
                    ee: Some(0.90 * dist_scale),
                    ei: Some(1.00 * dist_scale),
                    ii: Some(1.10 * dist_scale),
                },
            },
            success,
            wall_clock_seconds: 12.5,
        }
    }

    #[test]
    fn manifest_roundtrip_is_byte_identical() {
        let m = fixture_manifest(0, 0.2, &[0.1, 0.4, 0.6], 1.0);
        let json = m.to_json();
        let parsed = RunManifest::from_json(&json).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(parsed.to_json(), json);
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let m = fixture_manifest(0, 0.0, &[0.1], 1.0);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        assert!(RunManifest::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn experiment_config_rejects_unknown_keys() {
        let bad = r#"{"dataset":"fashion-mnist","unknown_field":3}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
        let good = r#"{"dataset":"shd","ei_ratio":{"n_excitatory":160,"n_inhibitory":40}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(good).unwrap();
        assert_eq!(cfg.dataset, DatasetKind::Shd);
    }

    #[test]
    fn success_rule_boundaries() {
        let fm = |peak: f64| {
            success_rule(
                DatasetKind::FashionMnist,
                &[fixture_epoch(0, 0.1), fixture_epoch(1, peak)],
            )
        };
        assert!(fm(0.51));
        assert!(!fm(0.50)); // strict inequality
        let shd_epochs: Vec<EpochRecord> =
            (0..=30).map(|e| fixture_epoch(e, 0.29)).collect();
        assert!(!success_rule(DatasetKind::Shd, &shd_epochs));
        let shd_good: Vec<EpochRecord> = (0..=30).map(|e| fixture_epoch(e, 0.31)).collect();
        assert!(success_rule(DatasetKind::Shd, &shd_good));
    }

    #[test]
    fn tail_mean_accuracy_windows() {
        let m = fixture_manifest(0, 0.0, &[0.0, 0.2, 0.4, 0.6], 1.0);
        // trained epochs: 0.2 0.4 0.6; window 2 -> (0.4+0.6)/2
        assert!((m.tail_mean_accuracy(2) - 0.5).abs() < 1e-12);
        assert!((m.tail_mean_accuracy(10) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn default_grid_spans_and_sorted() {
        let g = default_sigma_grid();
        assert_eq!(g.len(), 8);
        assert!((g[0] - 1e-4).abs() < 1e-12);
        assert!((g[7] - 1e-1).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn probe_zero_weights_and_saturation_bound() {
        let spec = NetworkSpec::new(
            6,
            4,
            2,
            4,
            30,
            crate::net::NeuronParams::default(),
        )
        .unwrap();
        let mut pairs = Vec::new();
        for t in 0..30u32 {
            pairs.push((t, (t % 6) as u32));
        }
        let raster = crate::net::SpikeRaster::from_pairs(30, 6, 1.0, pairs).unwrap();
        let data = EncodedDataset::new(vec![raster; 4], vec![0, 1, 0, 1]).unwrap();

        let zero_in = Matrix::zeros(6, 4);
        let zero_out = Matrix::zeros(4, 2);
        assert_eq!(
            initial_rate_probe(&spec, &zero_in, &zero_out, &data).unwrap(),
            0.0
        );

        // huge weights: every unit fires every step it physically can;
        // the rate approaches the 1 spike/ms = 1000 Hz saturation bound
        let big_in = Matrix::from_vec(6, 4, vec![100.0; 24]);
        let rate = initial_rate_probe(&spec, &big_in, &zero_out, &data).unwrap();
        assert!(rate > 900.0 && rate <= 1000.0, "rate {rate}");

        // determinism
        let r2 = initial_rate_probe(&spec, &big_in, &zero_out, &data).unwrap();
        assert_eq!(rate, r2);
    }

    #[test]
    fn sweep_is_resumable_to_identical_manifests() {
        let train = tiny_images(48, 10);
        let test = tiny_images(24, 20);
        let mut cfg = tiny_config(1);
        cfg.sigma_init_list = vec![0.004, 0.008];
        cfg.base_seed = 3;

        let dir = tempfile::tempdir().unwrap();
        let (first, stats) =
            run_sweep(&cfg, &train, &test, Some(dir.path()), |_, _| {}).unwrap();
        assert_eq!(stats.executed, 2);
        assert_eq!(first.len(), 2);

        // interrupt: delete the second manifest, resume
        std::fs::remove_file(dir.path().join(manifest_filename(1))).unwrap();
        let (second, stats2) =
            run_sweep(&cfg, &train, &test, Some(dir.path()), |_, _| {}).unwrap();
        assert_eq!(stats2.resumed, 1);
        assert_eq!(stats2.executed, 1);
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.canonical_json(), b.canonical_json());
        }

        // trial count arithmetic
        assert_eq!(cfg.n_trials(), 2);
        let m = read_manifest_dir(dir.path()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].trial.trial_index, 0);
        assert_eq!(m[1].trial.trial_index, 1);
        assert_ne!(m[0].seeds.trial, m[1].seeds.trial);
    }

    #[test]
    fn report_golden_tables() {
        // two 80:20 trials (noise 0.0 and 0.2) plus one 100:0 baseline at
        // each noise level so the t-test columns engage
        let mut manifests = vec![
            fixture_manifest(0, 0.0, &[0.1, 0.55, 0.60], 1.0),
            fixture_manifest(1, 0.2, &[0.1, 0.45, 0.50], 1.2),
        ];
        let mut baseline0 = fixture_manifest(2, 0.0, &[0.1, 0.50, 0.52], 0.9);
        baseline0.ei_ratio = EiRatio {
            n_excitatory: 100,
            n_inhibitory: 0,
        };
        let mut baseline1 = fixture_manifest(3, 0.2, &[0.1, 0.40, 0.42], 0.8);
        baseline1.ei_ratio = EiRatio {
            n_excitatory: 100,
            n_inhibitory: 0,
        };
        manifests.push(baseline0);
        manifests.push(baseline1);

        let tables = report(&manifests).unwrap();

        let expect_fig1 = "\
dataset,ei_ratio,trial_index,sigma_init,sigma_noise_ratio,repeat,initial_rate_hz,peak_accuracy,final_accuracy,success\n\
fashion-mnist,80:20,0,0.001000,0.000000,0,3.250000,0.600000,0.600000,true\n\
fashion-mnist,80:20,1,0.001000,0.200000,1,3.250000,0.500000,0.500000,false\n\
fashion-mnist,100:0,2,0.001000,0.000000,2,3.250000,0.520000,0.520000,true\n\
fashion-mnist,100:0,3,0.001000,0.200000,3,3.250000,0.420000,0.420000,false\n";
        assert_eq!(tables.accuracy_vs_rate, expect_fig1);

        // single-trial groups cannot host a t-test; columns stay empty
        let expect_fig2 = "\
dataset,ei_ratio,sigma_noise_ratio,n_trials,mean_accuracy,std_accuracy,t_vs_100_0,p_vs_100_0\n\
fashion-mnist,80:20,0.000000,1,0.575000,0.000000,,\n\
fashion-mnist,80:20,0.200000,1,0.475000,0.000000,,\n\
fashion-mnist,100:0,0.000000,1,0.510000,0.000000,,\n\
fashion-mnist,100:0,0.200000,1,0.410000,0.000000,,\n";
        assert_eq!(tables.accuracy_vs_noise, expect_fig2);

        // distance rows: medians of per-manifest means; KW across the
        // three category lists
        assert!(tables
            .distance_categories
            .starts_with("dataset,ei_ratio,phase,group,n_networks,median_ee,median_ei,median_ii,kruskal_h,kruskal_p\n"));
        let post_success_8020 = tables
            .distance_categories
            .lines()
            .find(|l| l.starts_with("fashion-mnist,80:20,post,success"))
            .unwrap();
        // the single successful 80:20 trial has post means 0.90/1.00/1.10
        assert_eq!(
            post_success_8020,
            "fashion-mnist,80:20,post,success,1,0.900000,1.000000,1.100000,2.000000,0.367879"
        );

        // activity rows exist for overall and per-class entries
        assert!(tables
            .activity_by_epoch
            .contains("fashion-mnist,80:20,0,1,all,10,4.000000,2.000000,66.666667,0.550000,1.900000"));
        assert!(tables
            .activity_by_epoch
            .contains("fashion-mnist,80:20,0,1,0,10,4.000000,2.000000,66.666667,0.550000,"));
    }

    #[test]
    fn report_rejects_empty() {
        assert!(report(&[]).is_err());
    }

    #[test]
    fn find_sigma_lands_in_band() {
        let train = tiny_images(32, 10);
        let spec = NetworkSpec::fashion_mnist(80).unwrap();
        let (sigma, rate) = find_sigma_in_band(
            &spec,
            0.01,
            &train,
            &default_sigma_grid(),
            RATE_BAND_HZ,
            5.0,
            123,
        )
        .unwrap();
        assert!(sigma > 0.0);
        assert!(rate >= RATE_BAND_HZ.0 && rate <= RATE_BAND_HZ.1, "rate {rate}");
    }
}
