use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use bwe_lab::config::LabConfig;
use bwe_lab::dataset::{collect, load_dataset, write_dataset};
use bwe_lab::emulator::dump_profiles;
use bwe_lab::evaluator::{
    best_online, compare_results, evaluate, CandidateScore, MethodRuns, PolicySpec, RawResults, BASELINE,
};
use bwe_lab::learner::{select_checkpoints, train, Checkpoint, Method};

/// Exit status when `eval --strict` finds a method below the gain floor.
const EXIT_REGRESSION: u8 = 3;

#[derive(Parser)]
#[command(name = "bwe-lab", version, about = "Emulated RTC bandwidth-estimation lab")]
struct Cli {
    /// TOML configuration file; built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List network profiles, or dump their definitions as JSON.
    Profiles {
        #[arg(long)]
        dump: bool,
    },
    /// Run behavior-policy calls and write an offline dataset.
    Collect {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated profile names.
        #[arg(long, value_delimiter = ',')]
        profiles: Vec<String>,
        /// Calls per profile.
        #[arg(long)]
        calls: Option<usize>,
    },
    /// Train a policy on a dataset and write checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory (default: runs/<method>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// diql, bc or iql.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate policies online and compare them with the behavior policy.
    Eval {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated entries: `behavior`, `constant:<bps>`, `<name>`
        /// (checkpoints in <runs>/<name>) or `<name>=<dir or .ckpt file>`.
        #[arg(long, value_delimiter = ',', default_value = "behavior,diql")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        profiles: Vec<String>,
        /// Calls per profile.
        #[arg(long)]
        calls: Option<usize>,
        /// Where bare method names look for checkpoints.
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        /// Exit with status 3 if any method's smallest gain is below the floor.
        #[arg(long)]
        strict: bool,
    },
    /// Re-render a saved raw result file.
    Report {
        #[arg(long)]
        raw: PathBuf,
        /// Directory for report.csv and report.txt; prints only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = BASELINE)]
        baseline: String,
    },
    /// Write a checkpoint's parameters as a flat JSON tensor manifest.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: Vec<String>,
    seed: u64,
    config: String,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    details: serde_json::Value,
}

// stdout may be a closed pipe (`bwe-lab profiles | head`); that is not an error
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| Ok(FileHash { path: p.display().to_string(), sha256: sha256_file(p)? }))
        .collect()
}

fn write_manifest(
    path: &Path,
    command: &str,
    cfg: &LabConfig,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    details: serde_json::Value,
) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        args: std::env::args().skip(1).collect(),
        seed: cfg.seed,
        config: cfg.to_toml(),
        inputs: hashes(inputs)?,
        outputs: hashes(outputs)?,
        details,
    };
    let text = serde_json::to_string_pretty(&m)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Checkpoint files in a run directory, sorted by file name.
fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading run directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .ckpt files in {}; run `bwe-lab train --out {}` first", dir.display(), dir.display());
    }
    Ok(files)
}

fn load_config(cli: &Cli) -> Result<LabConfig> {
    let mut cfg = match &cli.config {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_profiles(cfg: &LabConfig, dump: bool) -> Result<()> {
    let ps = cfg.resolve_profiles(&[])?;
    if dump {
        say_raw!("{}", dump_profiles(&ps));
        return Ok(());
    }
    say!("{:<14} {:>12} {:>10} {:>8} {:>8}", "name", "mean kbps", "delay ms", "loss", "secs");
    for p in &ps {
        say!(
            "{:<14} {:>12.0} {:>10.0} {:>8.3} {:>8}",
            p.name,
            p.mean_capacity() / 1e3,
            p.base_delay_ms,
            p.loss_model.stationary_loss(),
            p.duration_ms / 1000
        );
    }
    Ok(())
}

fn cmd_collect(cfg: &mut LabConfig, out: &Path, profiles: Vec<String>, calls: Option<usize>) -> Result<()> {
    if !profiles.is_empty() {
        cfg.collect.profiles = profiles;
    }
    if let Some(c) = calls {
        cfg.collect.calls_per_profile = c;
    }
    let ps = cfg.resolve_profiles(&cfg.collect.profiles)?;
    let ds = collect(&ps, cfg.collect.calls_per_profile, cfg.seed, &cfg.call_config(), &cfg.behavior)?;
    write_dataset(&ds, out)?;
    log::info!("{} transitions from {} calls written to {}", ds.len(), ds.calls.len(), out.display());
    let mut inputs = Vec::new();
    if let Some(f) = &cfg.collect.profile_file {
        inputs.push(f.clone());
    }
    let manifest = sidecar(out, "manifest.json");
    write_manifest(&manifest, "collect", cfg, &inputs, &[out.to_path_buf()], serde_json::Value::Null)?;
    say!("{} transitions -> {}", ds.len(), out.display());
    Ok(())
}

/// `<file>.<suffix>` beside a file output.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(
    cfg: &mut LabConfig,
    data: &Path,
    out: Option<PathBuf>,
    method: Option<Method>,
    epochs: Option<usize>,
) -> Result<()> {
    if let Some(m) = method {
        cfg.train.method = m;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let tc = cfg.train_config();
    tc.validate()?;
    let ds = load_dataset(data)?;
    let call = cfg.call_config();
    ds.header
        .check_against(&call)
        .with_context(|| format!("{} was collected with a different config", data.display()))?;
    let out = out.unwrap_or_else(|| PathBuf::from("runs").join(tc.method.to_string()));
    create_dir(&out)?;
    let outcome = train(&ds, &tc, &call)?;

    let mut outputs = Vec::new();
    for ck in &outcome.checkpoints {
        let p = out.join(format!("epoch_{:04}.ckpt", ck.meta.epoch));
        ck.save(&p)?;
        outputs.push(p);
    }
    let log_path = out.join("train_log.json");
    write(&log_path, serde_json::to_string_pretty(&outcome.log)? + "\n")?;
    outputs.push(log_path);
    let picks: Vec<serde_json::Value> = select_checkpoints(&outcome.checkpoints, tc.top_k)
        .into_iter()
        .map(|i| {
            let m = &outcome.checkpoints[i].meta;
            serde_json::json!({ "file": format!("epoch_{:04}.ckpt", m.epoch), "epoch": m.epoch, "offline_mse": m.offline_mse })
        })
        .collect();
    write_manifest(
        &out.join("manifest.json"),
        "train",
        cfg,
        &[data.to_path_buf()],
        &outputs,
        serde_json::json!({ "selection": picks }),
    )?;
    say!("{} checkpoints -> {}", outcome.checkpoints.len(), out.display());
    for p in &picks {
        say!("  top: {} (offline mse {:.6})", p["file"].as_str().unwrap_or("?"), p["offline_mse"]);
    }
    Ok(())
}

/// One `--methods` entry resolved to something runnable.
enum MethodEntry {
    Fixed(String, PolicySpec),
    Trained { name: String, files: Vec<PathBuf> },
}

fn parse_method(token: &str, cfg: &LabConfig, runs: &Path) -> Result<MethodEntry> {
    let token = token.trim();
    if token == BASELINE {
        return Ok(MethodEntry::Fixed(token.into(), PolicySpec::Behavior(cfg.behavior)));
    }
    if let Some(bps) = token.strip_prefix("constant:") {
        let bps: f64 = bps.parse().with_context(|| format!("bad rate in {token:?}, expected constant:<bps>"))?;
        if !(bps > 0.0) {
            bail!("constant rate must be positive, got {bps}");
        }
        return Ok(MethodEntry::Fixed(token.into(), PolicySpec::Constant { bps }));
    }
    let (name, path) = match token.split_once('=') {
        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
        None => (token.to_string(), runs.join(token)),
    };
    if name.is_empty() {
        bail!("empty method name in {token:?}");
    }
    let files = if path.is_dir() {
        checkpoint_files(&path)?
    } else if path.is_file() {
        vec![path]
    } else {
        bail!("no checkpoints for method {name:?} at {}; train one or pass {name}=<dir>", path.display());
    };
    Ok(MethodEntry::Trained { name, files })
}

#[derive(Serialize)]
struct Selection {
    method: String,
    chosen: String,
    candidates: Vec<(String, CandidateScore)>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cfg: &mut LabConfig,
    out: &Path,
    methods: &[String],
    profiles: Vec<String>,
    calls: Option<usize>,
    runs: &Path,
    strict: bool,
) -> Result<u8> {
    if let Some(c) = calls {
        cfg.eval.calls = c;
    }
    let call = cfg.call_config();
    let ps = cfg.resolve_profiles(&profiles)?;
    let mut seen = std::collections::HashSet::new();
    let entries = methods
        .iter()
        .map(|t| {
            let e = parse_method(t, cfg, runs)?;
            let name = match &e {
                MethodEntry::Fixed(n, _) | MethodEntry::Trained { name: n, .. } => n.clone(),
            };
            if !seen.insert(name.clone()) {
                bail!("method {name:?} listed twice");
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    if !seen.contains(BASELINE) {
        bail!("--methods must include {BASELINE:?}, the comparison baseline");
    }

    let mut inputs = Vec::new();
    let mut all = Vec::new();
    let mut selections = Vec::new();
    for e in entries {
        match e {
            MethodEntry::Fixed(name, spec) => {
                let raw = evaluate(&[(name, spec)], &ps, cfg.eval.calls, cfg.seed, &call)?;
                all.extend(raw.methods);
            }
            MethodEntry::Trained { name, files } => {
                let cks = files
                    .iter()
                    .map(|f| Checkpoint::load(f).map_err(anyhow::Error::from))
                    .collect::<Result<Vec<_>>>()?;
                let picks = select_checkpoints(&cks, cfg.eval.top_k);
                let cand: Vec<Checkpoint> = picks.iter().map(|&i| cks[i].clone()).collect();
                let (k, runs, scores): (usize, MethodRuns, _) =
                    best_online(&name, &cand, cfg.eval.stochastic, &ps, cfg.eval.calls, cfg.seed, &call)?;
                log::info!("{name}: picked {} of {} candidates", files[picks[k]].display(), cand.len());
                selections.push(Selection {
                    method: name,
                    chosen: files[picks[k]].display().to_string(),
                    candidates: picks.iter().map(|&i| files[i].display().to_string()).zip(scores).collect(),
                });
                inputs.extend(picks.iter().map(|&i| files[i].clone()));
                all.push(runs);
            }
        }
    }
    let raw = RawResults { seed: cfg.seed, calls: cfg.eval.calls, methods: all };
    let report = compare_results(&raw, BASELINE)?;

    create_dir(out)?;
    let paths = [out.join("raw.json"), out.join("report.csv"), out.join("report.txt")];
    write(&paths[0], serde_json::to_string_pretty(&raw)? + "\n")?;
    write(&paths[1], report.to_csv())?;
    write(&paths[2], report.to_text())?;
    write_manifest(
        &out.join("manifest.json"),
        "eval",
        cfg,
        &inputs,
        &paths,
        serde_json::json!({ "selection": selections }),
    )?;
    say_raw!("{}", report.to_text());

    let bad = report.regressions(cfg.eval.min_gain_floor);
    for m in &bad {
        eprintln!(
            "{}: min gain {:+.4} on {} is below the floor {:+.4}",
            m.method, m.min_gain, m.min_gain_profile, cfg.eval.min_gain_floor
        );
    }
    Ok(if strict && !bad.is_empty() { EXIT_REGRESSION } else { 0 })
}

fn cmd_report(raw: &Path, out: Option<PathBuf>, baseline: &str) -> Result<()> {
    let text = std::fs::read_to_string(raw).with_context(|| format!("reading {}", raw.display()))?;
    let raw_res: RawResults =
        serde_json::from_str(&text).with_context(|| format!("{} is not a raw result file", raw.display()))?;
    let report = compare_results(&raw_res, baseline)?;
    if let Some(dir) = out {
        create_dir(&dir)?;
        write(&dir.join("report.csv"), report.to_csv())?;
        write(&dir.join("report.txt"), report.to_text())?;
    }
    say_raw!("{}", report.to_text());
    Ok(())
}

fn cmd_export(checkpoint: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    write(out, serde_json::to_string(&ck.export_manifest())? + "\n")?;
    say!("exported {} -> {}", checkpoint.display(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::Profiles { dump } => cmd_profiles(&cfg, dump)?,
        Cmd::Collect { out, profiles, calls } => cmd_collect(&mut cfg, &out, profiles, calls)?,
        Cmd::Train { data, out, method, epochs } => cmd_train(&mut cfg, &data, out, method, epochs)?,
        Cmd::Eval { out, methods, profiles, calls, runs, strict } => {
            return cmd_eval(&mut cfg, &out, &methods, profiles, calls, &runs, strict)
        }
        Cmd::Report { raw, out, baseline } => cmd_report(&raw, out, &baseline)?,
        Cmd::Export { checkpoint, out } => cmd_export(&checkpoint, &out)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BWE_LAB_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
