//! Command-line front end.
//!
//! Every output path is relative to the output directory (`--out-dir`,
//! the `out_dir` key, or the working directory); absolute output paths and
//! `..` components are rejected. Inputs are read from anywhere.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use wavelatent_core::pipeline::{augment_training, CompressorKind, PipelineBundle};
use wavelatent_core::signal::{split_by_trial, TrainPlan};
use wavelatent_core::synth::{generate_dataset, SynthConfig};
use wavelatent_core::{DatasetGrid, StateVector};

use crate::config::RunConfig;
use crate::container::{load_bundle, save, Artifact};
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::{parallel, report};

#[derive(Debug, Parser)]
#[command(name = "wavelatent", version, about = "Latent compression, state estimation and waveform reconstruction")]
pub struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Configuration override, `key=value`; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory every output is written under.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Fit a pipeline bundle on a dataset.
    Fit(FitArgs),
    /// Estimate the state of every record in a dataset.
    Estimate(EstimateArgs),
    /// Reconstruct waveforms for requested states.
    Reconstruct(ReconstructArgs),
    /// Retrain a VAE bundle's state estimators on sampled latents.
    Augment(AugmentArgs),
    /// Evaluate a bundle on a test set and write CSV and SVG reports.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// case1, case1-full or case2.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trials at every state, replacing the preset's table.
    #[arg(long)]
    pub trials: Option<u32>,
    /// Target SNR in dB, or `inf`.
    #[arg(long)]
    pub snr_db: Option<String>,
    /// Dataset file; `.csv` writes text, anything else `WLAT` binary.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// dmaps, cae or vae.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fit on at most this many trials per state (half where fewer exist).
    #[arg(long)]
    pub train_trials: Option<u32>,
    /// Also write the held-out trials to this dataset file.
    #[arg(long, requires = "train_trials")]
    pub test_output: Option<PathBuf>,
    #[arg(short, long, default_value = "model.wlmd")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub input: PathBuf,
    /// CSV `k1,k2,path,trial,est_k1,est_k2`.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    /// CSV with header `k1,k2,path`.
    #[arg(long, conflicts_with_all = ["state", "path"])]
    pub states: Option<PathBuf>,
    /// Single state `k1,k2`.
    #[arg(long, requires = "path")]
    pub state: Option<String>,
    #[arg(long, requires = "state")]
    pub path: Option<u32>,
    /// CSV `k1,k2,path,extrapolated,interpolated,out_of_range,s0..`.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    /// Training set the bundle was fitted on.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    /// Test set.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Report directory.
    #[arg(short, long)]
    pub output: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Context {
    config: RunConfig,
    out_dir: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for pair in &cli.set {
            config.set_pair(pair)?;
        }
        let out_dir = match (&cli.out_dir, config.raw("out_dir")) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => PathBuf::from(d),
            (None, None) => PathBuf::from("."),
        };
        Ok(Self { config, out_dir })
    }

    /// Output location under the output directory; parents are created.
    fn output(&self, rel: &Path) -> Result<PathBuf> {
        if rel.as_os_str().is_empty() {
            return Err(Error::Usage("empty output path".into()));
        }
        if rel.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
            return Err(Error::Usage(format!(
                "output {} must be a relative path without '..'",
                rel.display()
            )));
        }
        let full = self.out_dir.join(rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(full)
    }

    fn write(&self, rel: &Path, contents: &[u8]) -> Result<PathBuf> {
        let path = self.output(rel)?;
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Context::new(&cli)?;
    let pool = parallel::pool()?;
    pool.install(|| match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Estimate(a) => estimate(&ctx, a),
        Command::Reconstruct(a) => reconstruct(&ctx, a),
        Command::Augment(a) => augment(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
    })
}

fn parse_snr(raw: &str) -> Result<Option<f64>> {
    if raw.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| Error::Usage(format!("invalid SNR {raw:?}")))
}

fn gen(ctx: &Context, a: &GenArgs) -> Result<()> {
    let cfg = &ctx.config;
    let preset = a.preset.as_deref().or(cfg.raw("preset")).unwrap_or("case1");
    let mut synth = SynthConfig::preset(preset)?;
    if let Some(seed) = a.seed.or(cfg.get("seed")?) {
        synth.seed = seed;
    }
    if let Some(n) = a.trials.or(cfg.get("trials")?) {
        synth = synth.with_uniform_trials(n);
    }
    match &a.snr_db {
        Some(raw) => synth.snr_db = parse_snr(raw)?,
        None => {
            if let Some(snr) = cfg.snr_db()? {
                synth.snr_db = snr;
            }
        }
    }
    let ds = generate_dataset(&synth)?;
    let path = ctx.output(&a.output)?;
    save_dataset(&ds, &path)?;
    println!("wrote {} records to {}", ds.len(), path.display());
    Ok(())
}

fn kind_of(ctx: &Context, flag: Option<&str>) -> Result<CompressorKind> {
    match flag {
        Some(k) => Ok(k.parse()?),
        None => Ok(ctx.config.kind()?.unwrap_or(CompressorKind::Dmaps)),
    }
}

fn split(ds: &DatasetGrid, train_trials: u32) -> Result<(DatasetGrid, DatasetGrid)> {
    Ok(split_by_trial(ds, &TrainPlan::at_most(ds, train_trials))?)
}

fn fit(ctx: &Context, a: &FitArgs) -> Result<()> {
    let kind = kind_of(ctx, a.kind.as_deref())?;
    let mut pcfg = ctx.config.pipeline(kind)?;
    if let Some(seed) = a.seed {
        pcfg.seed = seed;
    }
    let ds = load_dataset(&a.input)?;
    let train = match a.train_trials.or(ctx.config.get("train_trials")?) {
        Some(n) => {
            let (train, test) = split(&ds, n)?;
            if let Some(t) = &a.test_output {
                let path = ctx.output(t)?;
                save_dataset(&test, &path)?;
                println!("wrote {} held-out records to {}", test.len(), path.display());
            }
            train
        }
        None => ds,
    };
    let bundle = parallel::fit(&train, &pcfg)?;
    let path = ctx.output(&a.output)?;
    save(&Artifact::Bundle(bundle), &path)?;
    println!("wrote {kind} bundle to {}", path.display());
    Ok(())
}

fn estimate(ctx: &Context, a: &EstimateArgs) -> Result<()> {
    let bundle = load_bundle(&a.model)?;
    let ds = load_dataset(&a.input)?;
    let est = parallel::estimate(&bundle, &ds)?;
    let mut out = String::from("k1,k2,path,trial,est_k1,est_k2\n");
    let mut skipped = 0usize;
    for (r, e) in ds.records().iter().zip(est) {
        match e {
            Some(e) => {
                let _ = writeln!(out, "{},{},{},{},{},{}", r.state.k1, r.state.k2, r.path_id, r.trial_id, e.k1, e.k2);
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        eprintln!("warning: {skipped} records on paths without a model were skipped");
    }
    let path = ctx.write(&a.output, out.as_bytes())?;
    println!("wrote estimates to {}", path.display());
    Ok(())
}

fn read_states(path: &Path) -> Result<Vec<(StateVector, u32)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let want = ["k1", "k2", "path"];
    if headers.len() != 3 || headers.iter().zip(want).any(|(h, w)| h.trim() != w) {
        return Err(Error::format(0, "state file header must be k1,k2,path"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let at = rec.position().map_or(0, |p| p.byte());
        let field = |i: usize| rec[i].trim().to_string();
        let k1 = field(0).parse().map_err(|_| Error::format(at, "invalid k1"))?;
        let k2 = field(1).parse().map_err(|_| Error::format(at, "invalid k2"))?;
        let p = field(2).parse().map_err(|_| Error::format(at, "invalid path"))?;
        out.push((StateVector::new(k1, k2), p));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(offset, format!("{other:?}")),
    }
}

fn parse_state(raw: &str) -> Result<StateVector> {
    let bad = || Error::Usage(format!("state {raw:?} is not k1,k2"));
    let (a, b) = raw.split_once(',').ok_or_else(bad)?;
    Ok(StateVector::new(
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn reconstruct(ctx: &Context, a: &ReconstructArgs) -> Result<()> {
    let bundle: PipelineBundle = load_bundle(&a.model)?;
    let requests = match (&a.states, &a.state, a.path) {
        (Some(file), _, _) => read_states(file)?,
        (None, Some(s), Some(p)) => vec![(parse_state(s)?, p)],
        _ => return Err(Error::Usage("give --states FILE or --state K1,K2 --path P".into())),
    };
    let mut out = String::from("k1,k2,path,extrapolated,interpolated,out_of_range");
    for i in 0..bundle.samples_per_record {
        let _ = write!(out, ",s{i}");
    }
    out.push('\n');
    for (state, path) in requests {
        let r = bundle.reconstruct_signal(state, path)?;
        let _ = write!(out, "{},{},{},{},{},{}", state.k1, state.k2, path, r.extrapolated, r.interpolated, r.out_of_range);
        for s in &r.samples {
            let _ = write!(out, ",{s}");
        }
        out.push('\n');
        if r.extrapolated {
            eprintln!("warning: ({}, {}) lies outside the training grid", state.k1, state.k2);
        }
    }
    let path = ctx.write(&a.output, out.as_bytes())?;
    println!("wrote waveforms to {}", path.display());
    Ok(())
}

fn augment(ctx: &Context, a: &AugmentArgs) -> Result<()> {
    let bundle = load_bundle(&a.model)?;
    let train = load_dataset(&a.input)?;
    if !bundle.matches(&train) {
        eprintln!("warning: dataset differs from the bundle's training set");
    }
    let samples = match a.samples {
        Some(n) => n,
        None => ctx.config.get("samples_per_state")?.unwrap_or(20),
    };
    let mut pcfg = ctx.config.pipeline(bundle.kind)?;
    pcfg.latent_dim = bundle.latent_dim;
    let out = augment_training(&bundle, &train, samples, &pcfg)?;
    let path = ctx.output(&a.output)?;
    save(&Artifact::Bundle(out), &path)?;
    println!("wrote augmented bundle to {}", path.display());
    Ok(())
}

fn eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let bundle = load_bundle(&a.model)?;
    let test = load_dataset(&a.input)?;
    if bundle.matches(&test) {
        eprintln!("warning: evaluating on the training set");
    }
    let rep = parallel::evaluate(&bundle, &test)?;
    let dir = &a.output;
    ctx.write(&dir.join("estimation.csv"), report::estimation_csv(&rep).as_bytes())?;
    ctx.write(&dir.join("reconstruction.csv"), report::reconstruction_csv(&rep).as_bytes())?;
    ctx.write(&dir.join("estimation.svg"), report::estimation_svg(&rep).as_bytes())?;
    ctx.write(&dir.join("reconstruction.svg"), report::reconstruction_svg(&rep).as_bytes())?;
    println!("{}", rep.summary());
    println!("wrote report to {}", ctx.out_dir.join(dir).display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(dir: &Path) -> Context {
        Context {
            config: RunConfig::default(),
            out_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn outputs_stay_inside_out_dir() {
        let dir = tempfile::tempdir().unwrap();
        let c = ctx(dir.path());
        assert!(matches!(c.output(Path::new("../x")), Err(Error::Usage(_))));
        assert!(matches!(c.output(Path::new("/tmp/x")), Err(Error::Usage(_))));
        assert!(matches!(c.output(Path::new("a/../../x")), Err(Error::Usage(_))));
        assert_eq!(c.output(Path::new("a/b.csv")).unwrap(), dir.path().join("a/b.csv"));
    }

    #[test]
    fn state_and_snr_parsing() {
        assert_eq!(parse_state(" 1.5, 7.5").unwrap(), StateVector::new(1.5, 7.5));
        assert!(parse_state("1.5").is_err());
        assert_eq!(parse_snr("inf").unwrap(), None);
        assert_eq!(parse_snr("20").unwrap(), Some(20.0));
    }
}
