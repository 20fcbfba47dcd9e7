//! `gdiff <schedule|train|sample|verify|fit-noise>`.
//!
//! Every command resolves its settings in layers: built-in defaults, then a
//! JSON config file (`--config`, either flat or keyed by command name), then
//! `GDIFF_<KEY>` environment variables, then flags, then `--set key=value`.
//! Each run writes `manifest.json` with the resolved settings next to its
//! outputs. Exit codes: 0 success, 1 failed check or runtime error, 2 usage
//! or compatibility error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::analysis::{fit_error_curve, write_curve, ResidualSource, SyntheticGamma, SyntheticGaussian, TraceSource};
use crate::denoiser::{Checkpoint, Denoiser};
use crate::diffusion::{
    sample_chain, write_samples_binary, write_samples_json, ChainSpec, NoiseKind, SampleTrace, Sampler, Sigma,
};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic, write_json};
use crate::rng::RngStream;
use crate::schedule::{
    fibonacci_schedule, linear_schedule, subsample_timesteps, GammaParams, NoiseSchedule, ScheduleFile, ScheduleSpec,
    SubsampleStrategy, FIBONACCI_SEED, LINEAR_BETA_END, LINEAR_BETA_START, REFERENCE_T,
};
use crate::tensor::Tensor;
use crate::training::{
    default_schedule_spec, denormalize, mixture_w1, train, write_loss_csv, DatasetSpec, TrainConfig, ToyName,
};
use crate::verify::{self, VerifyConfig};

pub const ENV_PREFIX: &str = "GDIFF_";

#[derive(Parser, Debug)]
#[command(name = "gdiff", version, about = "Gaussian and Gamma denoising diffusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a noise schedule and dump it with its Gamma parameters.
    Schedule(ScheduleArgs),
    /// Train a noise predictor.
    Train(TrainArgs),
    /// Draw samples from a trained checkpoint.
    Sample(SampleArgs),
    /// Run the numerical verification suite.
    Verify(VerifyArgs),
    /// Compare Gaussian and Gamma fits to residual-noise histograms.
    FitNoise(FitNoiseArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all outputs.
    #[arg(long, short = 'o', global = true)]
    out_dir: Option<PathBuf>,
    /// Override any setting, e.g. `--set lr=0.0005`. Values parse as JSON, else as strings.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, conflicts_with_all = ["fibonacci", "scaled"])]
    linear: bool,
    #[arg(long, conflicts_with = "scaled")]
    fibonacci: bool,
    /// Reference linear schedule rescaled to length T.
    #[arg(long)]
    scaled: bool,
    #[arg(long = "T")]
    t: Option<usize>,
    /// Length of a Fibonacci schedule.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    /// Also derive Gamma parameters.
    #[arg(long)]
    theta0: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// gaussian or gamma.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    theta0: Option<f64>,
    /// mixture1d, rings2d, blobs8x8, or a CSV path.
    #[arg(long)]
    dataset: Option<String>,
    /// Size of a generated toy dataset.
    #[arg(long)]
    n_data: Option<usize>,
    #[arg(long = "T")]
    t: Option<usize>,
    /// default, linear, scaled_linear, fibonacci, or a schedule JSON path.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Steps between checkpoints; 0 keeps only the final one.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// ddpm, ddgm or ddim. Defaults to the ancestral sampler of the checkpoint's noise.
    #[arg(long)]
    sampler: Option<String>,
    /// Number of reverse steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Number of samples.
    #[arg(short = 'n', long = "n")]
    n: Option<usize>,
    /// uniform or quadratic timestep subsampling.
    #[arg(long)]
    subsample: Option<String>,
    /// sqrt_beta, beta or zero.
    #[arg(long)]
    sigma: Option<String>,
    /// Also write the full reverse trace.
    #[arg(long)]
    trace: bool,
    /// csv, json or binary.
    #[arg(long)]
    format: Option<String>,
    /// Require the checkpoint to match this schedule file.
    #[arg(long)]
    schedule_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated subset of lemma1, variance, vlb, lemma2, gradcheck.
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<String>>,
    /// Timesteps for the closed-form comparison.
    #[arg(long = "t", value_delimiter = ',')]
    t: Option<Vec<usize>>,
    /// Inject a fault: kbar.
    #[arg(long)]
    corrupt: Option<String>,
    /// Chains per closed-form comparison.
    #[arg(long)]
    chains: Option<usize>,
}

#[derive(Args, Debug)]
struct FitNoiseArgs {
    #[command(flatten)]
    common: Common,
    /// synthetic-gamma, synthetic-gaussian or model.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long = "t", value_delimiter = ',')]
    t: Option<Vec<usize>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Residuals (or model samples) per repeat.
    #[arg(short = 'n', long = "n")]
    n: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    sampler: Option<String>,
}

/// Exit status for an error: 2 for usage and compatibility problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Checkpoint(_) => 2,
        _ => 1,
    }
}

/// Parse `args` (including the program name), run, and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Schedule(a) => cmd_schedule(a),
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Verify(a) => cmd_verify(a),
        Command::FitNoise(a) => cmd_fit_noise(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Layer file, environment, flags and `--set` over `defaults`.
fn resolve<T: Serialize + DeserializeOwned>(command: &str, defaults: &T, common: &Common, flags: Map<String, Value>) -> Result<T> {
    let map = resolve_map(command, defaults, common, flags)?;
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("{command} settings: {e}")))
}

fn resolve_map<T: Serialize>(command: &str, defaults: &T, common: &Common, flags: Map<String, Value>) -> Result<Map<String, Value>> {
    let Value::Object(mut map) = serde_json::to_value(defaults)? else {
        unreachable!("settings serialize to objects")
    };
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        let section = match file.get(command) {
            Some(Value::Object(s)) => s.clone(),
            _ => match file {
                Value::Object(s) => s,
                _ => return Err(Error::Config("config file must hold a JSON object".into())),
            },
        };
        for (k, v) in section {
            if k != "schedule" && k != "train" && k != "sample" && k != "verify" && k != "fit-noise" || k == command {
                map.insert(k, v);
            }
        }
    }
    let keys: Vec<String> = map.keys().cloned().collect();
    for k in keys {
        if let Ok(raw) = std::env::var(format!("{ENV_PREFIX}{}", k.to_uppercase())) {
            map.insert(k, parse_value(&raw));
        }
    }
    map.extend(flags);
    if let Some(seed) = common.seed {
        map.insert("seed".into(), seed.into());
    }
    if let Some(dir) = &common.out_dir {
        map.insert("out_dir".into(), dir.to_string_lossy().into_owned().into());
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        map.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    Ok(map)
}

fn flag_map(pairs: Vec<(&str, Option<Value>)>) -> Map<String, Value> {
    pairs.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))).collect()
}

fn json<T: Serialize>(v: &Option<T>) -> Option<Value> {
    v.as_ref().map(|x| serde_json::to_value(x).expect("plain values serialize"))
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    outputs: Vec<String>,
    metrics: Map<String, Value>,
}

fn write_manifest<C: Serialize>(out_dir: &Path, command: &str, config: &C, outputs: &[&str], metrics: Map<String, Value>) -> Result<()> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        metrics,
    };
    write_json(out_dir.join("manifest.json"), &m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRun {
    /// linear, fibonacci or scaled_linear.
    kind: Option<String>,
    #[serde(rename = "T")]
    t: Option<usize>,
    n: Option<usize>,
    beta_start: f64,
    beta_end: f64,
    beta1: f64,
    beta2: f64,
    theta0: Option<f64>,
    seed: u64,
    out_dir: PathBuf,
}

fn cmd_schedule(a: ScheduleArgs) -> Result<i32> {
    let defaults = ScheduleRun {
        kind: None,
        t: None,
        n: None,
        beta_start: LINEAR_BETA_START,
        beta_end: LINEAR_BETA_END,
        beta1: FIBONACCI_SEED,
        beta2: FIBONACCI_SEED,
        theta0: None,
        seed: 0,
        out_dir: ".".into(),
    };
    let kind = if a.linear {
        Some("linear")
    } else if a.fibonacci {
        Some("fibonacci")
    } else if a.scaled {
        Some("scaled_linear")
    } else {
        None
    };
    let flags = flag_map(vec![
        ("kind", kind.map(Value::from)),
        ("T", json(&a.t)),
        ("n", json(&a.n)),
        ("beta_start", json(&a.beta_start)),
        ("beta_end", json(&a.beta_end)),
        ("beta1", json(&a.beta1)),
        ("beta2", json(&a.beta2)),
        ("theta0", json(&a.theta0)),
    ]);
    let cfg: ScheduleRun = resolve("schedule", &defaults, &a.common, flags)?;
    let need_t = || cfg.t.ok_or_else(|| Error::Config("--T is required".into()));
    let sched = match cfg.kind.as_deref() {
        Some("linear") => linear_schedule(need_t()?, cfg.beta_start, cfg.beta_end)?,
        Some("scaled_linear") => crate::schedule::scaled_linear_schedule(need_t()?)?,
        Some("fibonacci") => {
            let n = cfg.n.or(cfg.t).ok_or_else(|| Error::Config("--n is required".into()))?;
            fibonacci_schedule(n, cfg.beta1, cfg.beta2)?
        }
        Some(other) => return Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        None => return Err(Error::Config("one of --linear, --fibonacci, --scaled is required".into())),
    };
    let file = ScheduleFile::full(&sched, cfg.theta0)?;
    write_json(cfg.out_dir.join("schedule.json"), &file)?;
    let mut metrics = Map::new();
    metrics.insert("T".into(), sched.len().into());
    metrics.insert("schedule_hash".into(), sched.hash().into());
    metrics.insert("alpha_bar_T".into(), sched.alpha_bar(sched.len()).into());
    let mut ok = true;
    if let Some(e) = file.checks {
        metrics.insert("identity_max_rel_error".into(), e.max().into());
        ok = e.max() <= verify::IDENTITY_TOL;
    }
    write_manifest(&cfg.out_dir, "schedule", &cfg, &["schedule.json"], metrics)?;
    println!(
        "schedule: T = {}, beta_1 = {}, beta_T = {}, alpha_bar_T = {}, hash {}",
        sched.len(),
        fmt_f64(sched.beta(1)),
        fmt_f64(sched.beta(sched.len())),
        fmt_f64(sched.alpha_bar(sched.len())),
        sched.hash()
    );
    if let Some(e) = file.checks {
        println!("identity check: max relative error {} ({})", fmt_f64(e.max()), if ok { "ok" } else { "FAILED" });
    }
    Ok(if ok { 0 } else { 1 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRun {
    kind: String,
    theta0: Option<f64>,
    dataset: String,
    n_data: usize,
    #[serde(rename = "T")]
    t: usize,
    schedule: String,
    beta_start: Option<f64>,
    beta_end: Option<f64>,
    steps: usize,
    batch_size: usize,
    lr: f64,
    checkpoint_every: usize,
    hidden: Vec<usize>,
    time_dim: usize,
    loss_window: usize,
    seed: u64,
    out_dir: PathBuf,
}

fn parse_kind(s: &str) -> Result<NoiseKind> {
    match s {
        "gaussian" => Ok(NoiseKind::Gaussian),
        "gamma" => Ok(NoiseKind::Gamma),
        other => Err(Error::Config(format!("unknown noise kind {other:?}"))),
    }
}

fn parse_sampler(s: &str) -> Result<Sampler> {
    match s {
        "ddpm" => Ok(Sampler::Ddpm),
        "ddgm" => Ok(Sampler::Ddgm),
        "ddim" => Ok(Sampler::Ddim),
        other => Err(Error::Config(format!("unknown sampler {other:?}"))),
    }
}

impl TrainRun {
    fn to_config(&self) -> Result<TrainConfig> {
        let schedule = match self.schedule.as_str() {
            "default" => default_schedule_spec(self.t),
            "linear" => ScheduleSpec::Linear {
                beta_start: self.beta_start.unwrap_or(LINEAR_BETA_START),
                beta_end: self.beta_end.unwrap_or(LINEAR_BETA_END),
            },
            "scaled_linear" => ScheduleSpec::ScaledLinear,
            "fibonacci" => ScheduleSpec::Fibonacci { beta1: FIBONACCI_SEED, beta2: FIBONACCI_SEED },
            path => ScheduleSpec::File { path: path.into() },
        };
        let dataset = match ToyName::parse(&self.dataset) {
            Ok(name) => DatasetSpec::Toy { name, n: self.n_data },
            Err(_) if self.dataset.ends_with(".csv") => DatasetSpec::Csv { path: self.dataset.clone().into() },
            Err(e) => return Err(e),
        };
        let cfg = TrainConfig {
            kind: parse_kind(&self.kind)?,
            t_max: self.t,
            schedule,
            theta0: self.theta0,
            batch_size: self.batch_size,
            steps: self.steps,
            lr: self.lr,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            dataset,
            hidden: self.hidden.clone(),
            time_dim: self.time_dim,
            loss_window: self.loss_window,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let base = TrainConfig::toy(NoiseKind::Gaussian);
    let defaults = TrainRun {
        kind: "gaussian".into(),
        theta0: None,
        dataset: "mixture1d".into(),
        n_data: 100_000,
        t: base.t_max,
        schedule: "default".into(),
        beta_start: None,
        beta_end: None,
        steps: base.steps,
        batch_size: base.batch_size,
        lr: base.lr,
        checkpoint_every: 0,
        hidden: base.hidden,
        time_dim: base.time_dim,
        loss_window: base.loss_window,
        seed: 0,
        out_dir: ".".into(),
    };
    let flags = flag_map(vec![
        ("kind", json(&a.kind)),
        ("theta0", json(&a.theta0)),
        ("dataset", json(&a.dataset)),
        ("n_data", json(&a.n_data)),
        ("T", json(&a.t)),
        ("schedule", json(&a.schedule)),
        ("beta_start", json(&a.beta_start)),
        ("beta_end", json(&a.beta_end)),
        ("steps", json(&a.steps)),
        ("batch_size", json(&a.batch_size)),
        ("lr", json(&a.lr)),
        ("checkpoint_every", json(&a.checkpoint_every)),
    ]);
    let run: TrainRun = resolve("train", &defaults, &a.common, flags)?;
    let cfg = run.to_config()?;
    let data = cfg.dataset.load(&mut cfg.streams().0)?;
    let sched = cfg.schedule.build(cfg.t_max)?;
    let out = run.out_dir.clone();
    let ckpt_dir = out.join("checkpoints");
    let mut written: Vec<String> = Vec::new();
    let make_ckpt = |step: usize, model: &crate::denoiser::ReferenceMlp| -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(model, &sched, cfg.kind, cfg.theta0, step)?;
        ck.header.normalization = Some(data.normalization().to_vec());
        ck.header.dataset = Some(data.name().to_string());
        Ok(ck)
    };
    let outcome = train(&cfg, &data, |step, model| {
        let ck = make_ckpt(step, model)?;
        if step == cfg.steps {
            ck.save(out.join("model.ckpt"))
        } else {
            let name = format!("step-{step:08}.ckpt");
            ck.save(ckpt_dir.join(&name))?;
            written.push(format!("checkpoints/{name}"));
            Ok(())
        }
    })?;
    write_loss_csv(&outcome.losses, out.join("loss.csv"))?;
    let mut metrics = Map::new();
    metrics.insert("steps".into(), outcome.losses.len().into());
    if let Some(l) = outcome.final_loss(cfg.loss_window) {
        metrics.insert("final_window_loss".into(), l.into());
    }
    if let Some(l) = outcome.initial_loss(cfg.loss_window) {
        metrics.insert("initial_window_loss".into(), l.into());
    }
    metrics.insert("schedule_hash".into(), sched.hash().into());
    let mut outputs = vec!["model.ckpt", "loss.csv"];
    outputs.extend(written.iter().map(String::as_str));
    write_manifest(&out, "train", &run, &outputs, metrics)?;
    match outcome.final_loss(cfg.loss_window) {
        Some(l) => println!(
            "final loss (mean of last {} steps): {}",
            cfg.loss_window.min(outcome.losses.len()),
            fmt_f64(l)
        ),
        None => println!("no training steps; wrote the initialization"),
    }
    Ok(0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRun {
    checkpoint: Option<PathBuf>,
    sampler: Option<String>,
    steps: Option<usize>,
    n: usize,
    subsample: String,
    sigma: String,
    trace: bool,
    format: String,
    schedule_file: Option<PathBuf>,
    seed: u64,
    out_dir: PathBuf,
}

fn parse_sigma(s: &str) -> Result<Sigma> {
    match s {
        "sqrt_beta" => Ok(Sigma::SqrtBeta),
        "beta" => Ok(Sigma::Beta),
        "zero" => Ok(Sigma::Zero),
        other => Err(Error::Config(format!("unknown sigma {other:?}"))),
    }
}

fn parse_subsample(s: &str) -> Result<SubsampleStrategy> {
    match s {
        "uniform" => Ok(SubsampleStrategy::Uniform),
        "quadratic" => Ok(SubsampleStrategy::Quadratic),
        other => Err(Error::Config(format!("unknown subsampling {other:?}"))),
    }
}

/// A checkpoint together with its schedule and the compatible sampler.
struct LoadedModel {
    ck: Checkpoint,
    sched: NoiseSchedule,
    params: Option<GammaParams>,
    model: crate::denoiser::ReferenceMlp,
}

fn load_model(path: &Path, schedule_file: Option<&Path>) -> Result<LoadedModel> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    let sched = ck.schedule()?;
    if let Some(f) = schedule_file {
        let (other, _) = ScheduleFile::load(f)?.to_schedule()?;
        ck.ensure_schedule(&other)?;
    }
    let params = ck.header.theta0.map(|th| GammaParams::new(&sched, th)).transpose()?;
    let model = ck.model()?;
    Ok(LoadedModel { ck, sched, params, model })
}

fn default_sampler(kind: NoiseKind) -> Sampler {
    match kind {
        NoiseKind::Gaussian => Sampler::Ddpm,
        NoiseKind::Gamma => Sampler::Ddgm,
    }
}

fn run_chain(
    m: &LoadedModel,
    sampler: Sampler,
    steps: &[usize],
    sigma: Sigma,
    n: usize,
    record_trace: bool,
    rng: &mut RngStream,
) -> Result<SampleTrace> {
    let spec = ChainSpec {
        sched: &m.sched,
        params: m.params.as_ref(),
        kind: m.ck.header.noise_kind,
        sampler,
        steps,
        sigma,
        record_trace,
    };
    spec.validate()?;
    sample_chain(&m.model, &spec, &[n, m.model.input_dim()], rng)
}

fn samples_csv(x: &Tensor) -> String {
    let mut out = String::new();
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn cmd_sample(a: SampleArgs) -> Result<i32> {
    let defaults = SampleRun {
        checkpoint: None,
        sampler: None,
        steps: None,
        n: 10_000,
        subsample: "uniform".into(),
        sigma: "sqrt_beta".into(),
        trace: false,
        format: "csv".into(),
        schedule_file: None,
        seed: 0,
        out_dir: ".".into(),
    };
    let flags = flag_map(vec![
        ("checkpoint", json(&a.checkpoint)),
        ("sampler", json(&a.sampler)),
        ("steps", json(&a.steps)),
        ("n", json(&a.n)),
        ("subsample", json(&a.subsample)),
        ("sigma", json(&a.sigma)),
        ("trace", a.trace.then_some(Value::Bool(true))),
        ("format", json(&a.format)),
        ("schedule_file", json(&a.schedule_file)),
    ]);
    let run: SampleRun = resolve("sample", &defaults, &a.common, flags)?;
    let path = run.checkpoint.clone().ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    let m = load_model(&path, run.schedule_file.as_deref())?;
    let kind = m.ck.header.noise_kind;
    let sampler = run.sampler.as_deref().map(parse_sampler).transpose()?.unwrap_or(default_sampler(kind));
    let t_max = m.sched.len();
    let steps = subsample_timesteps(t_max, run.steps.unwrap_or(t_max), parse_subsample(&run.subsample)?)
        .map_err(|e| Error::Config(e.to_string()))?;
    if run.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let mut rng = RngStream::new(run.seed).split(4);
    let trace = run_chain(&m, sampler, &steps, parse_sigma(&run.sigma)?, run.n, run.trace, &mut rng)?;
    let samples = match &m.ck.header.normalization {
        Some(norm) => denormalize(&trace.final_state, norm)?,
        None => trace.final_state.clone(),
    };
    let out = &run.out_dir;
    let file = match run.format.as_str() {
        "csv" => {
            write_atomic(out.join("samples.csv"), samples_csv(&samples).as_bytes())?;
            "samples.csv"
        }
        "json" => {
            write_samples_json(&samples, out.join("samples.json"))?;
            "samples.json"
        }
        "binary" => {
            write_samples_binary(&samples, out.join("samples.bin"))?;
            "samples.bin"
        }
        other => return Err(Error::Config(format!("unknown format {other:?}"))),
    };
    let mut outputs = vec![file];
    if run.trace {
        trace.write_csv(out.join("trace.csv"))?;
        outputs.push("trace.csv");
    }
    let mut metrics = Map::new();
    metrics.insert("sampler".into(), serde_json::to_value(sampler)?);
    metrics.insert("reverse_steps".into(), steps.len().into());
    if m.ck.header.dataset.as_deref() == Some(ToyName::Mixture1d.as_str()) && samples.row_len() == 1 {
        let w1 = mixture_w1(samples.data())?;
        metrics.insert("wasserstein1_to_mixture1d".into(), w1.into());
        println!("W1 to the generating mixture: {}", fmt_f64(w1));
    }
    write_manifest(out, "sample", &run, &outputs, metrics)?;
    println!("wrote {} samples ({:?}, {} steps) to {}", run.n, sampler, steps.len(), out.join(file).display());
    Ok(0)
}

#[derive(Clone, Debug, Serialize)]
struct VerifyRun {
    #[serde(flatten)]
    suite: VerifyConfig,
    out_dir: PathBuf,
}

fn cmd_verify(a: VerifyArgs) -> Result<i32> {
    let defaults = VerifyRun { suite: VerifyConfig::default(), out_dir: ".".into() };
    let flags = flag_map(vec![
        ("only", json(&a.only)),
        ("t_grid", json(&a.t)),
        ("corrupt", json(&a.corrupt)),
        ("lemma1_chains", json(&a.chains)),
    ]);
    let mut resolved = resolve_map("verify", &defaults, &a.common, flags)?;
    let out_dir: PathBuf = match resolved.remove("out_dir") {
        Some(Value::String(s)) => s.into(),
        _ => return Err(Error::Config("out_dir must be a path".into())),
    };
    let suite: VerifyConfig =
        serde_json::from_value(Value::Object(resolved)).map_err(|e| Error::Config(format!("verify settings: {e}")))?;
    let started = std::time::Instant::now();
    let report = verify::run_with_progress(&suite, |c| eprintln!("running {}", c.name()))?;
    write_json(out_dir.join("verify.json"), &report)?;
    write_atomic(out_dir.join("verify.csv"), report.to_csv().as_bytes())?;
    let run = VerifyRun { suite, out_dir: out_dir.clone() };
    let mut metrics = Map::new();
    metrics.insert("passed".into(), report.passed.into());
    write_manifest(&out_dir, "verify", &run, &["verify.json", "verify.csv"], metrics)?;
    for c in &report.checks {
        println!("{:<10} {}", c.check.name(), if c.passed { "pass" } else { "FAIL" });
        for m in c.failures() {
            println!("    {} {}: {} > {}", m.case, m.metric, fmt_f64(m.value), m.limit.map(fmt_f64).unwrap_or_default());
        }
    }
    eprintln!("verify finished in {:.1}s", started.elapsed().as_secs_f64());
    if report.passed {
        Ok(0)
    } else {
        eprintln!("failed checks: {}", report.failed_checks().join(", "));
        Ok(1)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitNoiseRun {
    source: String,
    theta0: f64,
    t: Option<Vec<usize>>,
    repeats: usize,
    bins: usize,
    n: usize,
    checkpoint: Option<PathBuf>,
    sampler: Option<String>,
    seed: u64,
    out_dir: PathBuf,
}

/// Ten evenly spaced timesteps ending at `t_max`.
fn default_grid(t_max: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (1..=10).map(|i| (i * t_max / 10).max(1)).collect();
    g.dedup();
    g
}

fn cmd_fit_noise(a: FitNoiseArgs) -> Result<i32> {
    let defaults = FitNoiseRun {
        source: "synthetic-gamma".into(),
        theta0: 0.1,
        t: None,
        repeats: 100,
        bins: crate::analysis::DEFAULT_BINS,
        n: 10_000,
        checkpoint: None,
        sampler: None,
        seed: 0,
        out_dir: ".".into(),
    };
    let flags = flag_map(vec![
        ("source", json(&a.source)),
        ("theta0", json(&a.theta0)),
        ("t", json(&a.t)),
        ("repeats", json(&a.repeats)),
        ("bins", json(&a.bins)),
        ("n", json(&a.n)),
        ("checkpoint", json(&a.checkpoint)),
        ("sampler", json(&a.sampler)),
    ]);
    let run: FitNoiseRun = resolve("fit-noise", &defaults, &a.common, flags)?;
    let rng = RngStream::new(run.seed).split(5);
    let reference = linear_schedule(REFERENCE_T, LINEAR_BETA_START, LINEAR_BETA_END)?;
    let (rows, label) = match run.source.as_str() {
        "synthetic-gamma" => {
            let params = GammaParams::new(&reference, run.theta0)?;
            let grid = run.t.clone().unwrap_or_else(|| default_grid(REFERENCE_T));
            let src = SyntheticGamma { sched: &reference, params: &params, n: run.n };
            (fit_error_curve(&src, &grid, run.repeats, run.bins, &rng)?, src.label().to_string())
        }
        "synthetic-gaussian" => {
            let grid = run.t.clone().unwrap_or_else(|| default_grid(REFERENCE_T));
            let src = SyntheticGaussian { n: run.n };
            (fit_error_curve(&src, &grid, run.repeats, run.bins, &rng)?, src.label().to_string())
        }
        "model" => {
            let path = run
                .checkpoint
                .clone()
                .ok_or_else(|| Error::Config("the model source needs --checkpoint".into()))?;
            let m = load_model(&path, None)?;
            let sampler = run
                .sampler
                .as_deref()
                .map(parse_sampler)
                .transpose()?
                .unwrap_or(default_sampler(m.ck.header.noise_kind));
            let t_max = m.sched.len();
            let grid = run.t.clone().unwrap_or_else(|| default_grid(t_max));
            let steps: Vec<usize> = (1..=t_max).collect();
            let traces = (0..run.repeats)
                .map(|r| run_chain(&m, sampler, &steps, Sigma::default(), run.n, true, &mut rng.split2(0, r as u64)))
                .collect::<Result<Vec<_>>>()?;
            let src = TraceSource { sched: &m.sched, traces: &traces };
            (fit_error_curve(&src, &grid, run.repeats, run.bins, &rng)?, src.label().to_string())
        }
        other => return Err(Error::Config(format!("unknown residual source {other:?}"))),
    };
    let title = format!("residual fit error ({label})");
    write_curve(&rows, run.out_dir.join("fit_noise.csv"), Some(&run.out_dir.join("fit_noise.svg")), &title)?;
    let gamma_wins = rows.iter().filter(|r| r.gamma_mse_mean <= r.gaussian_mse_mean).count();
    let mut metrics = Map::new();
    metrics.insert("source".into(), label.clone().into());
    metrics.insert("gamma_fit_not_worse_at".into(), gamma_wins.into());
    metrics.insert("grid_points".into(), rows.len().into());
    write_manifest(&run.out_dir, "fit-noise", &run, &["fit_noise.csv", "fit_noise.svg"], metrics)?;
    println!("{label}: gamma fit error <= gaussian fit error at {gamma_wins} of {} timesteps", rows.len());
    Ok(0)
}
