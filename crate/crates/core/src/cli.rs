//! Command-line entry point. [`run`] returns the process exit code: 0 on
//! success, 1 when an operation fails, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{load_dataset, load_tracks, save_tracks, split, synth_generate, window_samples, SynthConfig, Track, TrackSample, DEFAULT_SPLIT};
use crate::error::{Error, Result};
use crate::metrics::{to_csv, MetricsReport};
use crate::model::{EgoKind, ModelConfig, GRAD_CHECK_EPS};
use crate::ssm::{time_scan, ScanTiming};
use crate::train::{evaluate, evaluate_cvcs, grad_check_model, log_to_csv, train_loop_with, Checkpoint, TrainConfig, LOG_HEADER};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "trajmamba", version, about = "Egocentric pedestrian trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic JSONL dataset with known ego coupling.
    Synth(SynthArgs),
    /// Train a model and write the best checkpoint plus a CSV log.
    Train(TrainArgs),
    /// Evaluate a checkpoint and/or the CV-CS baseline.
    Eval(EvalArgs),
    /// Predict future boxes for windows of one track file.
    Predict(PredictArgs),
    /// Check model gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Time the selective scan.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory; the dataset is written to DIR/tracks.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    tracks: usize,
    #[arg(long, default_value_t = 60)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    ego_gain: f64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value = "speed", value_parser = parse_ego_kind)]
    ego_kind: EgoKind,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.001`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        self.resolve_from(TrainConfig::default())
    }

    /// Config file if given, else `base`, then the `--set` overrides.
    fn resolve_from(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => base,
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSONL file or directory of JSONL files.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV; defaults to the checkpoint path plus `.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BaselineArg {
    Cvcs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to evaluate; optional with `--baseline`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Metrics CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also report a baseline.
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    /// Replace the ego encoder output with zeros.
    #[arg(long)]
    ablate_ego_zero: bool,
    /// Track-level split to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Window settings when no checkpoint is given.
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// JSONL file with one or more tracks.
    #[arg(long)]
    track: PathBuf,
    /// Frame number of the last observed box; every complete window when omitted.
    #[arg(long)]
    frame: Option<i64>,
    /// Output JSONL, one line per window.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Model config; a tiny normalized model (d_model 8, m_obs 6, n_pred 4) by default.
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = GRAD_CHECK_EPS)]
    eps: f64,
    /// Seed of the randomized weights, inputs and targets.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 2048)]
    len: usize,
    /// Model width; the scan runs over `expand * d_model` channels.
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    expand: usize,
    #[arg(long, default_value_t = 16)]
    d_state: usize,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Optional CSV output; the row is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_ego_kind(s: &str) -> std::result::Result<EgoKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// The tiny model used by `gradcheck` when no config file is given.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        m_obs: 6,
        n_pred: 4,
        normalize: true,
        ..ModelConfig::default()
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Bench(a) => bench(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn print_config(out: &mut dyn Write, pairs: &[(&str, String)]) -> Result<()> {
    let io = |e| Error::io("<stdout>", e);
    writeln!(out, "# resolved config").map_err(io)?;
    for (k, v) in pairs {
        writeln!(out, "{k} = {v}").map_err(io)?;
    }
    Ok(())
}

fn say(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = SynthConfig {
        n_tracks: a.tracks,
        len: a.len,
        seed: a.seed,
        ego_gain: a.ego_gain,
        noise: a.noise,
        ego_kind: a.ego_kind,
    };
    print_config(
        out,
        &[
            ("out", a.out.display().to_string()),
            ("tracks", cfg.n_tracks.to_string()),
            ("len", cfg.len.to_string()),
            ("seed", cfg.seed.to_string()),
            ("ego_gain", format!("{:?}", cfg.ego_gain)),
            ("noise", format!("{:?}", cfg.noise)),
            ("ego_kind", cfg.ego_kind.to_string()),
        ],
    )?;
    let tracks = synth_generate(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join("tracks.jsonl");
    save_tracks(&path, &tracks)?;
    say(out, &format!("wrote {} tracks to {}", tracks.len(), path.display()))?;
    Ok(0)
}

/// Splits tracks with the default ratios and cuts windows from each part.
fn split_windows(tracks: &[Track], cfg: &TrainConfig) -> Result<[Vec<TrackSample>; 3]> {
    let (tr, va, te) = split(tracks, DEFAULT_SPLIT, cfg.split_seed)?;
    let w = |t: &[Track]| window_samples(t, cfg.model.m_obs, cfg.model.n_pred, cfg.stride);
    Ok([w(&tr)?, w(&va)?, w(&te)?])
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.config.resolve()?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    let mut pairs = vec![
        ("data", a.data.display().to_string()),
        ("out", a.out.display().to_string()),
        ("log", log_path.display().to_string()),
    ];
    pairs.extend(cfg.to_pairs());
    print_config(out, &pairs)?;

    let tracks = load_dataset(&a.data)?;
    let [train, val, _] = split_windows(&tracks, &cfg)?;
    say(out, &format!("windows: train {} val {}", train.len(), val.len()))?;
    say(out, LOG_HEADER)?;
    let mut io_err = None;
    let outcome = train_loop_with(&train, &val, &cfg, |row| {
        if let Err(e) = say(out, &row.csv()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    outcome.best.save(&a.out)?;
    write_file(&log_path, &log_to_csv(&outcome.log))?;
    say(
        out,
        &format!(
            "best step {} val_ade {} ({} steps{})",
            outcome.best.step,
            outcome.best.best_val_ade,
            outcome.steps_run,
            if outcome.stopped_early { ", stopped early" } else { "" }
        ),
    )?;
    Ok(0)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    if a.ckpt.is_none() && a.baseline.is_none() {
        return Err(Error::Config("eval needs --ckpt, --baseline, or both".into()));
    }
    let ckpt = a.ckpt.as_deref().map(Checkpoint::load).transpose()?;
    let cfg = match &ckpt {
        Some(c) => {
            if a.config.config.is_some() || !a.config.overrides.is_empty() {
                return Err(Error::Config("--config/--set cannot be combined with --ckpt".into()));
            }
            c.config.clone()
        }
        None => a.config.resolve()?,
    };
    let split_name = format!("{:?}", a.split).to_lowercase();
    let mut pairs = vec![
        ("ckpt", a.ckpt.as_ref().map_or("none".into(), |p| p.display().to_string())),
        ("data", a.data.display().to_string()),
        ("out", a.out.display().to_string()),
        ("split", split_name.clone()),
        ("baseline", if a.baseline.is_some() { "cvcs".into() } else { "none".into() }),
        ("ablate_ego_zero", a.ablate_ego_zero.to_string()),
    ];
    pairs.extend(cfg.to_pairs());
    print_config(out, &pairs)?;

    let tracks = load_dataset(&a.data)?;
    let samples = match a.split {
        SplitArg::All => window_samples(&tracks, cfg.model.m_obs, cfg.model.n_pred, cfg.stride)?,
        s => {
            let [tr, va, te] = split_windows(&tracks, &cfg)?;
            match s {
                SplitArg::Train => tr,
                SplitArg::Val => va,
                _ => te,
            }
        }
    };
    let mut rows: Vec<(String, MetricsReport)> = Vec::new();
    if let Some(c) = &ckpt {
        let model = c.model()?;
        let label = if a.ablate_ego_zero { format!("{split_name}:ego_zero") } else { split_name.clone() };
        rows.push((label, evaluate(&samples, &model, a.ablate_ego_zero)?));
    }
    if a.baseline.is_some() {
        rows.push((format!("{split_name}:cvcs"), evaluate_cvcs(&samples, cfg.model.n_pred)?));
    }
    let csv = to_csv(&rows);
    write_file(&a.out, &csv)?;
    write!(out, "{csv}").map_err(|e| Error::io("<stdout>", e))?;
    Ok(0)
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    track_id: &'a str,
    /// Frame number of the last observed box.
    frame: i64,
    pred: Vec<[f64; 4]>,
    /// Ground truth when the track extends over the whole horizon.
    gt: Option<Vec<[f64; 4]>>,
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let mut pairs = vec![
        ("ckpt", a.ckpt.display().to_string()),
        ("track", a.track.display().to_string()),
        ("frame", a.frame.map_or("all".into(), |f| f.to_string())),
        ("out", a.out.display().to_string()),
    ];
    pairs.extend(ckpt.config.to_pairs());
    print_config(out, &pairs)?;

    let model = ckpt.model()?;
    let (m, n) = (model.config().m_obs, model.config().n_pred);
    let tracks = load_tracks(&a.track)?;
    let mut text = String::new();
    let mut count = 0;
    for t in &tracks {
        let ends: Vec<usize> = match a.frame {
            Some(f) => match t.frames.iter().position(|&x| x == f) {
                Some(i) if i + 1 >= m => vec![i],
                Some(_) => {
                    return Err(Error::Domain(format!(
                        "track {}: frame {f} has fewer than {m} observed frames up to it",
                        t.track_id
                    )))
                }
                None => continue,
            },
            None => (m - 1..t.len().saturating_sub(n)).collect(),
        };
        for end in ends {
            let obs = end + 1 - m..end + 1;
            let pred = model.predict(&t.boxes[obs.clone()], &t.ego[obs])?;
            let gt = (end + n < t.len()).then(|| t.boxes[end + 1..end + 1 + n].iter().map(|b| b.to_array()).collect());
            let line = PredictionLine {
                track_id: &t.track_id,
                frame: t.frames[end],
                pred: pred.iter().map(|b| b.to_array()).collect(),
                gt,
            };
            text.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
            text.push('\n');
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset("prediction windows"));
    }
    write_file(&a.out, &text)?;
    say(out, &format!("wrote {count} predictions to {}", a.out.display()))?;
    Ok(0)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.config.resolve_from(TrainConfig {
        model: tiny_model_config(),
        ..TrainConfig::default()
    })?;
    let mut pairs = vec![("eps", format!("{:?}", a.eps)), ("check_seed", a.seed.to_string())];
    pairs.extend(cfg.model.to_pairs());
    print_config(out, &pairs)?;
    if !(a.eps > 0.0) {
        return Err(Error::Config("eps must be positive".into()));
    }
    let r = grad_check_model(&cfg.model, a.eps, a.seed)?;
    say(out, &format!("checked {} parameters", r.checked))?;
    say(out, &format!("max_rel_err = {:e}", r.max_rel_err))?;
    if r.max_rel_err < GRAD_CHECK_TOLERANCE {
        say(out, "PASS")?;
        Ok(0)
    } else {
        say(out, &format!("FAIL: worst element {:?} analytic {:e} numeric {:e}", r.worst, r.analytic, r.numeric))?;
        Ok(1)
    }
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32> {
    if a.len == 0 || a.d_model == 0 || a.expand == 0 || a.d_state == 0 || a.iters == 0 {
        return Err(Error::Config("bench sizes must be >= 1".into()));
    }
    print_config(
        out,
        &[
            ("len", a.len.to_string()),
            ("d_model", a.d_model.to_string()),
            ("expand", a.expand.to_string()),
            ("d_state", a.d_state.to_string()),
            ("iters", a.iters.to_string()),
        ],
    )?;
    let t = time_scan(a.len, a.expand * a.d_model, a.d_state, a.iters, 0);
    let csv = format!("{}\n{}\n", ScanTiming::CSV_HEADER, t.csv_row());
    if let Some(p) = &a.out {
        write_file(p, &csv)?;
    }
    write!(out, "{csv}").map_err(|e| Error::io("<stdout>", e))?;
    Ok(0)
}
