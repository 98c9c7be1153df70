use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Cli, CliError, Command, EvalArgs, GenArgs, Mode, ProfileArgs, ReplayArgs, RunConfig, TrainArgs};
use crate::geom::Vec2;
use crate::nn::{named_rng, Checkpoint, ParamVector, Stream};
use crate::policy::{grnn_infer_count, Aggregation, GrnnConfig, PolicyNet, PolicySource};
use crate::scenario::{
    generate_scenarios, rollout, write_trace, GenConfig, PreparedScenario, Preset, Scenario, SimOptions, TraceHeader,
    TRACE_FORMAT_VERSION,
};
use crate::training::{evaluate, IlTrainer, RlTrainer, TrainLog};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const PROFILE_FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";

/// Index of a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub preset: Option<Preset>,
    pub first_index: u64,
    pub count: usize,
    pub generator: GenConfig,
    pub files: Vec<String>,
    /// SHA-256 over every file name and its bytes, in order.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub agents: usize,
    pub mean_step_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope_ms_per_agent: f64,
    pub intercept_ms: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub format_version: u32,
    pub policy: String,
    pub blocks: usize,
    pub steps: usize,
    pub grnn_infer_ms: f64,
    pub grnn_infer_calls: u64,
    pub rows: Vec<ProfileRow>,
    pub fit: Option<LinearFit>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn require<T>(v: Option<T>, what: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

pub(super) fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed);
    if let Some(w) = cli.workers.or(cfg.workers) {
        if w == 0 {
            return Err(CliError::Usage("workers must be positive".into()));
        }
        // a pool built earlier in the same process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let seed_or = |s: Option<u64>| require(s, "seed (--seed or `seed` in the config)");
    match cli.command {
        Command::Gen(a) => cmd_gen(&cfg, seed_or(seed)?, a),
        Command::Train(a) => cmd_train(&cfg, seed, a),
        Command::Eval(a) => cmd_eval(&cfg, seed_or(seed)?, a),
        Command::Replay(a) => cmd_replay(&cfg, seed_or(seed)?, a),
        Command::Profile(a) => cmd_profile(&cfg, seed_or(seed)?, a),
    }
}

fn cmd_gen(cfg: &RunConfig, seed: u64, a: GenArgs) -> Result<(), CliError> {
    let preset: Option<Preset> = a.preset.map(Into::into);
    let count = match (preset, a.count) {
        (Some(p), _) => p.count(),
        (None, Some(n)) => n,
        (None, None) => return Err(CliError::Usage("give --preset or --count".into())),
    };
    let first = a.first_index.unwrap_or(0) + preset.map_or(0, Preset::stream_offset);
    let out = require(a.out.or_else(|| cfg.paths.dataset.clone()), "output directory (--out)")?;
    let scenarios = generate_scenarios(&cfg.gen, seed, count, first)?;
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut hasher = Sha256::new();
    let mut files = Vec::with_capacity(count);
    for (k, s) in scenarios.iter().enumerate() {
        let name = format!("scenario_{k:04}.json");
        let body = s.to_json();
        let path = out.join(&name);
        std::fs::write(&path, &body).map_err(io_err(&path))?;
        hasher.update(name.as_bytes());
        hasher.update(body.as_bytes());
        files.push(name);
    }
    let sha256: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        seed,
        preset,
        first_index: first,
        count,
        generator: cfg.gen.clone(),
        files,
        sha256,
    };
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(io_err(&path))?;
    println!("wrote {count} scenarios to {} (sha256 {})", out.display(), manifest.sha256);
    Ok(())
}

/// Loads and prepares every scenario listed in `dir/manifest.json`.
pub fn load_dataset(dir: &Path) -> Result<Vec<PreparedScenario>, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != MANIFEST_FORMAT_VERSION as u64 {
        return Err(CliError::Data(format!("{}: unknown manifest format version {version}", path.display())));
    }
    let m: DatasetManifest =
        serde_json::from_value(raw).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if m.files.is_empty() {
        return Err(CliError::Data(format!("{}: empty dataset", dir.display())));
    }
    m.files
        .iter()
        .map(|f| {
            let p = dir.join(f);
            let s = Scenario::load(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            PreparedScenario::new(s).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// `expert`, `baseline`, or a checkpoint path; returns a display label.
pub fn load_policy(spec: &str) -> Result<(String, PolicySource), CliError> {
    match spec {
        "expert" => return Ok(("expert".into(), PolicySource::Expert)),
        "baseline" => return Ok(("baseline".into(), PolicySource::Baseline)),
        _ => {}
    }
    let path = Path::new(spec);
    let ck = Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let hyper = &ck.header.hyperparameters;
    let field = |k: &str| hyper.get(k).cloned().unwrap_or(serde_json::Value::Null);
    let aggregation: Aggregation = serde_json::from_value(field("aggregation")).unwrap_or_default();
    let grnn: GrnnConfig = serde_json::from_value(field("grnn")).unwrap_or_default();
    let net = PolicyNet::new(aggregation);
    let params = ck.params()?;
    net.check_params(&params).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let label = path.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
    Ok((label, PolicySource::Neural { net: Arc::new(net), params: Arc::new(params), grnn }))
}

fn glorot(aggregation: Aggregation, seed: u64) -> ParamVector {
    let mut p = PolicyNet::new(aggregation).zero_params();
    p.init_glorot(&mut named_rng(seed, Stream::Init, 0));
    p
}

fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    ck.save(&tmp)?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn open_log(path: &Path, append: bool) -> Result<TrainLog, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(io_err(path))?;
    Ok(TrainLog::with_sink(Box::new(BufWriter::new(f))))
}

fn cmd_train(cfg: &RunConfig, seed: Option<u64>, a: TrainArgs) -> Result<(), CliError> {
    let dataset = require(a.dataset.or_else(|| cfg.paths.dataset.clone()), "dataset (--dataset)")?;
    let ck_path = require(a.checkpoint.or_else(|| cfg.paths.checkpoint.clone()), "checkpoint path (--checkpoint)")?;
    let validation_dir = a.validation.or_else(|| cfg.paths.validation.clone());
    let resume = match &a.resume {
        Some(p) => Some(Checkpoint::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let seed = match (&resume, seed) {
        (Some(ck), Some(s)) if s != ck.header.seed => {
            return Err(CliError::Usage(format!("--seed {s} differs from the checkpoint seed {}", ck.header.seed)));
        }
        (Some(ck), _) => ck.header.seed,
        (None, s) => require(s, "seed (--seed or `seed` in the config)")?,
    };
    let trainset = load_dataset(&dataset)?;
    let validation = match &validation_dir {
        Some(d) => load_dataset(d)?,
        None => Vec::new(),
    };
    let name = match a.mode {
        Mode::Il => "il",
        Mode::Rl => "rl",
    };
    let log_path = match a.log {
        Some(p) => p,
        None => {
            let dir = a.log_dir.or_else(|| cfg.paths.log_dir.clone());
            let dir = dir.or_else(|| ck_path.parent().map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("."));
            dir.join(format!("{name}.jsonl"))
        }
    };
    let mut log = open_log(&log_path, resume.is_some())?;
    let every = a.checkpoint_every.or(cfg.checkpoint_every).unwrap_or(if a.mode == Mode::Rl { 100 } else { 1 }).max(1);
    match a.mode {
        Mode::Il => {
            let mut t = match &resume {
                Some(ck) => IlTrainer::from_checkpoint(ck, a.iterations)?,
                None => {
                    let mut c = cfg.il();
                    c.rounds = a.iterations.unwrap_or(c.rounds);
                    c.horizon = a.horizon.unwrap_or(c.horizon);
                    let theta0 = glorot(c.aggregation, seed);
                    IlTrainer::new(c, theta0, seed)?
                }
            };
            while !t.is_done() {
                t.run_round(&trainset, &validation, &mut log)?;
                if t.round() % every == 0 {
                    save_checkpoint(&t.checkpoint(), &ck_path)?;
                }
            }
            save_checkpoint(&t.checkpoint(), &ck_path)?;
            println!("il: {} rounds, checkpoint {}", t.round(), ck_path.display());
        }
        Mode::Rl => {
            let mut t = match &resume {
                Some(ck) => RlTrainer::from_checkpoint(ck, a.iterations)?,
                None => {
                    let mut c = cfg.rl();
                    c.iterations = a.iterations.unwrap_or(c.iterations);
                    c.horizon = a.horizon.unwrap_or(c.horizon);
                    let theta0 = glorot(c.aggregation, seed);
                    RlTrainer::new(c, theta0, seed)?
                }
            };
            while !t.is_done() {
                t.step(&trainset, &validation, &mut log)?;
                if t.iteration() % every == 0 {
                    save_checkpoint(&t.checkpoint(), &ck_path)?;
                }
            }
            save_checkpoint(&t.checkpoint(), &ck_path)?;
            println!("rl: {} iterations, checkpoint {}", t.iteration(), ck_path.display());
        }
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, seed: u64, a: EvalArgs) -> Result<(), CliError> {
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be positive".into()));
    }
    let dir = require(a.testset.or_else(|| cfg.paths.testset.clone()), "test set (--testset)")?;
    let policies = a.policies.iter().map(|s| load_policy(s)).collect::<Result<Vec<_>, _>>()?;
    let testset = load_dataset(&dir)?;
    let opts = SimOptions { solver: cfg.solver(), horizon: a.horizon, ..SimOptions::default() };
    let report = evaluate(&policies, &testset, a.runs, seed, opts)?;
    print!("{}", report.table());
    if let Some(out) = a.out {
        report.save(&out)?;
    }
    Ok(())
}

fn cmd_replay(cfg: &RunConfig, seed: u64, a: ReplayArgs) -> Result<(), CliError> {
    let (label, source) = load_policy(&a.policy)?;
    let scenario = Scenario::load(&a.scenario)?;
    let prep = PreparedScenario::new(scenario)?;
    let opts = SimOptions { record_frames: true, solver: cfg.solver(), horizon: a.horizon };
    let res = rollout(&prep, &source, seed, opts)?;
    let frames = res.frames.unwrap_or_default();
    let env = &prep.scenario.env;
    let header = TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        policy: label,
        seed,
        horizon: res.horizon,
        radius: prep.scenario.r,
        bounds: [env.width(), env.height()],
        frames: frames.len(),
    };
    let f = File::create(&a.out).map_err(io_err(&a.out))?;
    write_trace(BufWriter::new(f), &header, &frames)?;
    println!("{} frames, {} agents, written to {}", frames.len(), res.records.len(), a.out.display());
    Ok(())
}

/// Least squares `y ≈ slope·x + intercept` with its R².
fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LinearFit { slope_ms_per_agent: slope, intercept_ms: intercept, r2 })
}

fn cmd_profile(cfg: &RunConfig, seed: u64, a: ProfileArgs) -> Result<(), CliError> {
    if a.steps == 0 || a.agents.is_empty() {
        return Err(CliError::Usage("--steps and --agents must be non-empty".into()));
    }
    let (label, source) = load_policy(&a.policy)?;
    let scenario = match &a.scenario {
        Some(p) => Scenario::load(p)?,
        None => {
            let g = GenConfig { min_size: 16, max_size: 16, ..cfg.gen.clone() };
            generate_scenarios(&g, seed, 1, 0)?.remove(0)
        }
    };
    let prep = PreparedScenario::new(scenario)?;
    let ctx = &prep.ctx;
    let calls0 = grnn_infer_count();
    let t0 = Instant::now();
    let policy = source.prepare(ctx)?;
    let grnn_infer_ms = t0.elapsed().as_secs_f64() * 1e3;
    let env = &prep.scenario.env;
    let r = prep.scenario.r;
    let mut rows = Vec::with_capacity(a.agents.len());
    for &n in &a.agents {
        let mut rng = named_rng(seed, Stream::Probe, n as u64);
        let mut xs: Vec<Vec2> = Vec::with_capacity(n);
        while xs.len() < n {
            let o = env.origin();
            let p = Vec2::new(o.x + rng.random_range(0.0..env.width()), o.y + rng.random_range(0.0..env.height()));
            if env.clearance(p) >= r {
                xs.push(p);
            }
        }
        let mut total = 0.0;
        let mut vs = vec![Vec2::new(0.0, 0.0); n];
        for _ in 0..a.steps {
            let t = Instant::now();
            for (i, (x, v)) in xs.iter().zip(vs.iter_mut()).enumerate() {
                *v = policy.velocity(ctx, &prep.routes[i % prep.routes.len()], *x)?;
            }
            total += t.elapsed().as_secs_f64();
            for (x, v) in xs.iter_mut().zip(&vs) {
                let next = *x + *v;
                if env.clearance(next) >= r {
                    *x = next;
                }
            }
        }
        rows.push(ProfileRow { agents: n, mean_step_ms: total * 1e3 / a.steps as f64 });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.agents as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_step_ms).collect();
    let report = ProfileReport {
        format_version: PROFILE_FORMAT_VERSION,
        policy: label,
        blocks: ctx.grid.num_free(),
        steps: a.steps,
        grnn_infer_ms,
        grnn_infer_calls: grnn_infer_count() - calls0,
        rows,
        fit: linear_fit(&xs, &ys),
    };
    println!("hidden-field inference: {:.3} ms ({} call)", report.grnn_infer_ms, report.grnn_infer_calls);
    println!("{:>8} {:>14}", "agents", "ms/step");
    for row in &report.rows {
        println!("{:>8} {:>14.4}", row.agents, row.mean_step_ms);
    }
    if let Some(f) = &report.fit {
        println!("fit: {:.6} ms/agent + {:.4} ms, R² = {:.4}", f.slope_ms_per_agent, f.intercept_ms, f.r2);
    }
    if let Some(out) = a.out {
        let mut w = BufWriter::new(File::create(&out).map_err(io_err(&out))?);
        let body = serde_json::to_string_pretty(&report).expect("report serializes");
        writeln!(w, "{body}").map_err(io_err(&out))?;
    }
    Ok(())
}
