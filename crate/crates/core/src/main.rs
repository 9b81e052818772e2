//! Command-line experiment harness.

use clap::{Args, Parser, Subcommand};
use eisnn::encode::{write_events, write_idx, SpikeEventSet};
use eisnn::error::{Error, Result};
use eisnn::exp::{
    self, default_sigma_grid, read_manifest_dir, report, run_sweep, DatasetKind, EiRatio,
    ExperimentConfig,
};
use eisnn::synth;
use eisnn::train::write_checkpoint;
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "eisnn",
    about = "Train and analyze spiking networks with excitatory/inhibitory partitions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment config file (JSON). Flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for manifests, checkpoints, and tables.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Dataset selection.
    #[arg(long, value_parser = parse_dataset)]
    dataset: Option<DatasetKind>,
    /// Dataset root directory (default: $SNN_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Hidden-layer E:I partition, e.g. 80:20.
    #[arg(long, value_parser = parse_ei)]
    ei: Option<EiRatio>,
    /// Input-to-hidden initialization std (single value).
    #[arg(long)]
    sigma_init: Option<f64>,
    /// Update-noise std as a fraction of sigma_init (single value).
    #[arg(long)]
    noise_ratio: Option<f64>,
    /// Seeded subset size of the training split.
    #[arg(long)]
    train_subset: Option<usize>,
    /// Seeded subset size of the test split for per-epoch evaluation.
    #[arg(long)]
    eval_subset: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial and write its manifest and final checkpoints.
    Train(CommonOpts),
    /// Run the full sigma x noise x repeat grid (resumable).
    Sweep(CommonOpts),
    /// Build CSV tables from a directory of manifests.
    Analyze {
        #[command(flatten)]
        common: CommonOpts,
        /// Directory holding trial_*.json manifests (default: --out).
        #[arg(long)]
        manifests: Option<PathBuf>,
    },
    /// Probe initial hidden firing rates across the sigma grid.
    Probe(CommonOpts),
    /// Convert a JSON event listing into the canonical event file.
    ConvertEvents {
        /// JSON input: [{"label":..,"n_units":..,"duration":..,"events":[[unit,time],..]},..]
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write seeded synthetic datasets in the standard file formats.
    SynthData {
        #[command(flatten)]
        common: CommonOpts,
        /// Training samples to generate.
        #[arg(long, default_value_t = 10000)]
        train_count: usize,
        /// Test samples to generate.
        #[arg(long, default_value_t = 2000)]
        test_count: usize,
    },
}

fn parse_dataset(s: &str) -> std::result::Result<DatasetKind, String> {
    match s {
        "fashion-mnist" => Ok(DatasetKind::FashionMnist),
        "shd" => Ok(DatasetKind::Shd),
        other => Err(format!("unknown dataset {other:?} (fashion-mnist|shd)")),
    }
}

fn parse_ei(s: &str) -> std::result::Result<EiRatio, String> {
    let (e, i) = s
        .split_once(':')
        .ok_or_else(|| format!("expected E:I, got {s:?}"))?;
    Ok(EiRatio {
        n_excitatory: e.trim().parse().map_err(|e| format!("bad E count: {e}"))?,
        n_inhibitory: i.trim().parse().map_err(|e| format!("bad I count: {e}"))?,
    })
}

fn build_config(opts: &CommonOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &opts.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = opts.dataset {
        cfg.dataset = d;
    }
    if let Some(dir) = &opts.data_dir {
        cfg.data_dir = Some(dir.clone());
    }
    if let Some(seed) = opts.seed {
        cfg.base_seed = seed;
    }
    if let Some(epochs) = opts.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(ei) = opts.ei {
        cfg.ei_ratio = ei;
    }
    if let Some(sigma) = opts.sigma_init {
        cfg.sigma_init_list = vec![sigma];
    }
    if let Some(ratio) = opts.noise_ratio {
        cfg.sigma_noise_ratio_list = vec![ratio];
    }
    if let Some(n) = opts.train_subset {
        cfg.train_subset = Some(n);
    }
    if let Some(n) = opts.eval_subset {
        cfg.eval_subset = Some(n);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_splits(
    cfg: &ExperimentConfig,
) -> Result<(eisnn::encode::EncodedDataset, eisnn::encode::EncodedDataset)> {
    let dir = cfg.resolved_data_dir()?;
    let (mut train, mut test) = exp::load_dataset(cfg.dataset, &dir)?;
    if let Some(n) = cfg.train_subset {
        train = train.seeded_subset(n, eisnn::rng::derive(cfg.base_seed, eisnn::rng::stream::SUBSAMPLE))?;
    }
    if let Some(n) = cfg.eval_subset {
        test = test.seeded_subset(n, eisnn::rng::derive(cfg.base_seed, eisnn::rng::stream::EVAL))?;
    }
    Ok((train, test))
}

fn cmd_train(opts: &CommonOpts) -> Result<()> {
    let mut cfg = build_config(opts)?;
    cfg.repeats = 1;
    if cfg.sigma_init_list.len() > 1 {
        cfg.sigma_init_list.truncate(1);
    }
    if cfg.sigma_noise_ratio_list.len() > 1 {
        cfg.sigma_noise_ratio_list.truncate(1);
    }
    let (train_data, test_data) = load_splits(&cfg)?;
    let spec = cfg.network_spec()?;
    let key = exp::TrialKey {
        trial_index: 0,
        sigma_init: cfg.sigma_init_list[0],
        sigma_noise_ratio: cfg.sigma_noise_ratio_list[0],
        repeat: 0,
    };
    eprintln!(
        "training {} {} sigma_init={} noise_ratio={} epochs={}",
        cfg.dataset, cfg.ei_ratio, key.sigma_init, key.sigma_noise_ratio, cfg.train.epochs
    );
    let (manifest, outcome) = exp::run_trial(&cfg, &spec, &train_data, &test_data, key)?;
    std::fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
    let manifest_path = opts.out.join(exp::manifest_filename(0));
    exp::write_manifest(&manifest_path, &manifest)?;
    write_checkpoint(&opts.out.join("w_in_final.snnwt"), 0, &outcome.w_in)?;
    write_checkpoint(&opts.out.join("w_out_final.snnwt"), 1, &outcome.w_out)?;
    for e in &manifest.epochs {
        eprintln!(
            "  epoch {:3}  loss {}  accuracy {:.4}",
            e.epoch,
            e.train_loss.map_or("     -".into(), |l| format!("{l:.4}")),
            e.test_accuracy
        );
    }
    println!("{}", manifest_path.display());
    Ok(())
}

fn cmd_sweep(opts: &CommonOpts) -> Result<()> {
    let cfg = build_config(opts)?;
    let (train_data, test_data) = load_splits(&cfg)?;
    let total = cfg.n_trials();
    let (manifests, stats) = run_sweep(
        &cfg,
        &train_data,
        &test_data,
        Some(&opts.out),
        |idx, m| {
            eprintln!(
                "trial {idx:4}/{total}: sigma={:<10} noise={:<5} rate={:8.3} Hz  peak_acc={:.4}  success={}",
                m.trial.sigma_init,
                m.trial.sigma_noise_ratio,
                m.initial_rate_hz,
                m.peak_accuracy(),
                m.success
            );
        },
    )?;
    eprintln!(
        "sweep complete: {} executed, {} resumed, {} manifests in {}",
        stats.executed,
        stats.resumed,
        manifests.len(),
        opts.out.display()
    );
    Ok(())
}

fn cmd_analyze(common: &CommonOpts, manifests_dir: &Option<PathBuf>) -> Result<()> {
    let dir = manifests_dir.clone().unwrap_or_else(|| common.out.clone());
    let manifests = read_manifest_dir(&dir)?;
    if manifests.is_empty() {
        return Err(Error::Data(format!(
            "no trial_*.json manifests under {}",
            dir.display()
        )));
    }
    let tables = report(&manifests)?;
    tables.write_to_dir(&common.out)?;
    eprintln!(
        "wrote 4 tables from {} manifests to {}",
        manifests.len(),
        common.out.display()
    );
    Ok(())
}

fn cmd_probe(opts: &CommonOpts) -> Result<()> {
    use std::io::Write;
    let cfg = build_config(opts)?;
    let (train_data, _) = load_splits(&cfg)?;
    let spec = cfg.network_spec()?;
    let grid = if opts.sigma_init.is_some() {
        cfg.sigma_init_list.clone()
    } else if cfg.sigma_init_list.len() > 1 {
        cfg.sigma_init_list.clone()
    } else {
        default_sigma_grid()
    };
    let probe_seed = eisnn::rng::derive(cfg.base_seed, eisnn::rng::stream::PROBE);
    let sample = train_data.seeded_subset(256, probe_seed)?;
    let mut out = std::io::stdout().lock();
    // a closed pipe (e.g. `probe | head`) ends output, not the program
    if writeln!(out, "sigma_init,rate_hz").is_err() {
        return Ok(());
    }
    for &sigma in &grid {
        let (w_in, w_out) = eisnn::train::init_weights(
            &spec,
            sigma,
            cfg.train.sigma_out,
            eisnn::rng::derive(probe_seed, eisnn::rng::stream::INIT),
        )?;
        let rate = exp::initial_rate_probe(&spec, &w_in.values, &w_out.values, &sample)?;
        if writeln!(out, "{sigma},{rate:.6}").is_err() {
            return Ok(());
        }
    }
    Ok(())
}

/// JSON event listing accepted by convert-events.
#[derive(Deserialize)]
struct JsonEventSet {
    label: u32,
    n_units: u32,
    duration: f64,
    events: Vec<(u32, f64)>,
}

fn cmd_convert_events(input: &PathBuf, output: &PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let parsed: Vec<JsonEventSet> =
        serde_json::from_str(&text).map_err(|e| Error::format(input, e.to_string()))?;
    let mut sets = Vec::with_capacity(parsed.len());
    for (i, j) in parsed.into_iter().enumerate() {
        let mut events = j.events;
        events.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        sets.push(
            SpikeEventSet::new(events, j.label, j.n_units, j.duration)
                .map_err(|e| Error::Data(format!("sample {i}: {e}")))?,
        );
    }
    write_events(output, &sets)?;
    eprintln!("wrote {} event sets to {}", sets.len(), output.display());
    Ok(())
}

fn cmd_synth_data(common: &CommonOpts, train_count: usize, test_count: usize) -> Result<()> {
    let out = &common.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let seed = common.seed.unwrap_or(0);
    let dataset = common.dataset.unwrap_or(DatasetKind::FashionMnist);
    match dataset {
        DatasetKind::FashionMnist => {
            let train = synth::synth_images(train_count, eisnn::rng::derive(seed, 1), 1234);
            let test = synth::synth_images(test_count, eisnn::rng::derive(seed, 2), 1234);
            write_idx(
                &out.join("train-images-idx3-ubyte"),
                &out.join("train-labels-idx1-ubyte"),
                &train,
                synth::IMG_SIDE,
                synth::IMG_SIDE,
            )?;
            write_idx(
                &out.join("t10k-images-idx3-ubyte"),
                &out.join("t10k-labels-idx1-ubyte"),
                &test,
                synth::IMG_SIDE,
                synth::IMG_SIDE,
            )?;
            eprintln!(
                "wrote synthetic image dataset ({train_count} train / {test_count} test) to {}",
                out.display()
            );
        }
        DatasetKind::Shd => {
            let train = synth::synth_events(train_count, eisnn::rng::derive(seed, 3))?;
            let test = synth::synth_events(test_count, eisnn::rng::derive(seed, 4))?;
            write_events(&out.join("shd_train.spkevt"), &train)?;
            write_events(&out.join("shd_test.spkevt"), &test)?;
            eprintln!(
                "wrote synthetic event dataset ({train_count} train / {test_count} test) to {}",
                out.display()
            );
        }
    }
    Ok(())
}

fn configure_workers(opts: &CommonOpts) {
    if let Some(n) = opts.workers {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(opts) => {
            configure_workers(opts);
            cmd_train(opts)
        }
        Command::Sweep(opts) => {
            configure_workers(opts);
            cmd_sweep(opts)
        }
        Command::Analyze { common, manifests } => cmd_analyze(common, manifests),
        Command::Probe(opts) => {
            configure_workers(opts);
            cmd_probe(opts)
        }
        Command::ConvertEvents { input, output } => cmd_convert_events(input, output),
        Command::SynthData {
            common,
            train_count,
            test_count,
        } => cmd_synth_data(common, *train_count, *test_count),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
