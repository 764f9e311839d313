//! Command-line front end: `train`, `eval`, `explain` and `inspect-rules`.
//!
//! Exit codes: 0 on success, 2 for configuration errors (reported in full
//! before any run directory is created), 3 for runtime failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assets;
use crate::checkpoint::Checkpoint;
use crate::config::{parse_override_args, RunConfig};
use crate::envs::{Env, EnvName, EnvSpec};
use crate::explain::{explain_state, DEFAULT_IG_STEPS, DEFAULT_TOP_K};
use crate::math::argmax;
use crate::policy::{sample_action, BlendPolicy, LogicPolicy, RuleProgram};
use crate::reason::{build_graph, ground_program};
use crate::train::{evaluate, EvalSummary, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(Vec<String>),
    Runtime(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        Self::Config(vec![msg.into()])
    }

    fn runtime(msg: impl std::fmt::Display) -> Self {
        Self::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(errs) => {
                writeln!(f, "configuration error{}:", if errs.len() > 1 { "s" } else { "" })?;
                for e in errs {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
            Self::Runtime(e) => writeln!(f, "error: {e}"),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "nsrl", about = "Train, evaluate and explain blended logic/neural policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent. Options: `--config FILE`, `--resume CKPT`, and any
    /// config key as `--key value` (e.g. `--total-timesteps 8192`).
    Train {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
    /// Evaluate a checkpoint over seeded episodes.
    Eval(EvalArgs),
    /// Roll a checkpoint and write per-step explanation reports.
    Explain(ExplainArgs),
    /// Print parsed and ground program statistics.
    InspectRules(InspectArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate on another environment (must share the action set).
    #[arg(long)]
    pub env: Option<EnvName>,
    /// Modification flag list; repeat for a sweep. `none` clears flags.
    #[arg(long = "mod")]
    pub mods: Vec<String>,
    /// Objectness noise rate; repeat for a sweep.
    #[arg(long)]
    pub noise: Vec<f64>,
    /// Append one JSON summary per setting to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report directory (default: `<run>/reports/explain_<global step>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_IG_STEPS)]
    pub ig_steps: usize,
    #[arg(long = "mod")]
    pub mods: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, default_value = "mini-kangaroo")]
    pub env: EnvName,
    #[arg(long)]
    pub language: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub blend_rules: Option<PathBuf>,
    #[arg(long)]
    pub valuations: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Output goes to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let mut out = std::io::stdout();
    match dispatch(cli.command, &mut out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprint!("{e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command, out: &mut dyn std::io::Write) -> Result<()> {
    match cmd {
        Command::Train { args } => cmd_train(&args, out).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a, out).map(|_| ()),
        Command::Explain(a) => cmd_explain(&a, out).map(|_| ()),
        Command::InspectRules(a) => cmd_inspect_rules(&a, out),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn checkpoint_path(dir: &Path, global_step: u64) -> PathBuf {
    dir.join(format!("ckpt_{global_step}.bin"))
}

/// Runs training and returns the run directory.
pub fn cmd_train(args: &[String], out: &mut dyn std::io::Write) -> Result<PathBuf> {
    let mut pairs = parse_override_args(args).map_err(CliError::config)?;
    let take = |pairs: &mut Vec<(String, String)>, key: &str| -> Option<String> {
        let i = pairs.iter().position(|(k, _)| k == key)?;
        Some(pairs.remove(i).1)
    };
    let config_file = take(&mut pairs, "config");
    let resume = take(&mut pairs, "resume");

    let (config, sources, mut trainer, dir) = if let Some(ckpt_path) = resume {
        let ckpt_path = PathBuf::from(ckpt_path);
        let ckpt = Checkpoint::load(&ckpt_path).map_err(|e| CliError::config(format!("{}: {e}", ckpt_path.display())))?;
        let config = ckpt.config.with_overrides(&pairs).map_err(CliError::Config)?;
        let mut errs = Vec::new();
        if let Err(e) = config.train.validate() {
            errs.push(e.to_string());
        }
        if let Err(e) = config.env_spec() {
            errs.push(e);
        }
        if !errs.is_empty() {
            return Err(CliError::Config(errs));
        }
        let mut ckpt = ckpt;
        ckpt.config = config.clone();
        let trainer = ckpt.trainer().map_err(CliError::runtime)?;
        let dir = ckpt_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| config.run_dir());
        (config, ckpt.sources, trainer, dir)
    } else {
        let base = match &config_file {
            Some(p) => RunConfig::from_file(Path::new(p)).map_err(CliError::config)?,
            None => RunConfig::default(),
        };
        let config = base.with_overrides(&pairs).map_err(CliError::Config)?;
        let resolved = config.resolve().map_err(CliError::Config)?;
        let dir = config.run_dir();
        if dir.exists() && std::fs::read_dir(&dir).map(|mut d| d.next().is_some()).unwrap_or(true) {
            return Err(CliError::config(format!(
                "run directory {} already exists; choose another --name or --resume a checkpoint",
                dir.display()
            )));
        }
        let policy = crate::policy::build_policy(&resolved.bundle, &resolved.spec, config.blender, config.train.seed)
            .map_err(CliError::runtime)?;
        let trainer = Trainer::new(config.train.clone(), policy, &resolved.spec).map_err(CliError::runtime)?;
        std::fs::create_dir_all(dir.join("reports")).map_err(|e| io_err(&dir, e))?;
        let json = serde_json::to_string_pretty(&config).expect("config serializes");
        std::fs::write(dir.join("config.json"), json + "\n").map_err(|e| io_err(&dir, e))?;
        (config, resolved.sources, trainer, dir)
    };

    let metrics_path = dir.join("metrics.jsonl");
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| io_err(&metrics_path, e))?;
    let every = config.checkpoint_every;
    let mut last_saved = None;
    let mut failure = None;
    let result = trainer.run(|tr, m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(metrics, "{line}") {
            failure = Some(io_err(&metrics_path, e));
        }
        if every > 0 && m.iteration % every == 0 {
            let p = checkpoint_path(&dir, m.global_step);
            if let Err(e) = Checkpoint::from_trainer(&config, &sources, tr).save(&p) {
                failure = Some(io_err(&p, e));
            }
            last_saved = Some(m.global_step);
        }
        Ok(())
    });
    if let Some(e) = failure {
        return Err(e);
    }
    result.map_err(CliError::runtime)?;
    let step = trainer.state.global_step;
    if last_saved != Some(step) {
        let p = checkpoint_path(&dir, step);
        Checkpoint::from_trainer(&config, &sources, &trainer)
            .save(&p)
            .map_err(|e| io_err(&p, e))?;
    }
    let _ = writeln!(out, "trained {step} steps; run directory {}", dir.display());
    Ok(dir)
}

fn load_policy(path: &Path) -> Result<(Checkpoint, BlendPolicy)> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let policy = ckpt.policy().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok((ckpt, policy))
}

fn eval_spec(ckpt: &Checkpoint, env: Option<EnvName>, mods: Option<&str>, noise: Option<f64>) -> Result<EnvSpec> {
    let mut config = ckpt.config.clone();
    if let Some(env) = env {
        config.env = env;
    }
    if let Some(m) = mods {
        config.mods = if m == "none" {
            Vec::new()
        } else {
            m.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
        };
    }
    if let Some(n) = noise {
        config.noise = n;
    }
    config.env_spec().map_err(CliError::config)
}

/// One summary row per (modification, noise) setting.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalRow {
    pub mods: Vec<String>,
    pub noise: f64,
    pub summary: EvalSummary,
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn std::io::Write) -> Result<Vec<EvalRow>> {
    let (ckpt, policy) = load_policy(&a.checkpoint)?;
    let mods: Vec<Option<&str>> = if a.mods.is_empty() {
        vec![None]
    } else {
        a.mods.iter().map(|m| Some(m.as_str())).collect()
    };
    let noises: Vec<Option<f64>> = if a.noise.is_empty() {
        vec![None]
    } else {
        a.noise.iter().map(|&n| Some(n)).collect()
    };
    let mut specs = Vec::new();
    let mut errs = Vec::new();
    for m in &mods {
        for n in &noises {
            match eval_spec(&ckpt, a.env, *m, *n) {
                Ok(s) => specs.push(s),
                Err(CliError::Config(e)) => errs.extend(e),
                Err(e) => return Err(e),
            }
        }
    }
    if let Some(s) = specs.first() {
        if s.num_actions() != policy.num_actions() || s.raw_len() != policy.raw_len() || s.name.action_names() != crate::explain::action_names(&policy.logic) {
            errs.push(format!(
                "checkpoint actions {:?} do not match environment {} actions {:?}",
                crate::explain::action_names(&policy.logic),
                s.name.as_str(),
                s.name.action_names()
            ));
        }
    }
    if !errs.is_empty() {
        return Err(CliError::Config(errs));
    }
    let mut rows = Vec::new();
    for spec in specs {
        let summary = evaluate(&policy, &spec, a.episodes, a.seed).map_err(CliError::runtime)?;
        let row = EvalRow {
            mods: spec.mods.flag_names().iter().map(|s| s.to_string()).collect(),
            noise: spec.mods.objectness_noise,
            summary,
        };
        let s = &row.summary;
        let _ = writeln!(
            out,
            "env={} mods={} noise={} episodes={} return={:.3}±{:.3} length={:.1}±{:.1} beta={:.3}",
            spec.name.as_str(),
            if row.mods.is_empty() { "none".to_string() } else { row.mods.join(",") },
            row.noise,
            s.episodes,
            s.mean_return,
            s.std_return,
            s.mean_length,
            s.std_length,
            s.beta_mean
        );
        if let Some(path) = &a.out {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| io_err(path, e))?;
            writeln!(f, "{}", serde_json::to_string(&row).expect("row serializes")).map_err(|e| io_err(path, e))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Rolls the policy for `steps` steps writing one report directory per step
/// and `timeline.csv`; returns the output directory.
pub fn cmd_explain(a: &ExplainArgs, out: &mut dyn std::io::Write) -> Result<PathBuf> {
    let (ckpt, policy) = load_policy(&a.checkpoint)?;
    let spec = eval_spec(&ckpt, None, a.mods.as_deref(), None)?.with_seed(a.seed);
    let dir = a.out.clone().unwrap_or_else(|| {
        let run = a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
        run.join("reports").join(format!("explain_{}", ckpt.state.global_step))
    });
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut env = Env::new(spec).map_err(CliError::runtime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut timeline = String::from("step,beta,max_logic_prob,max_neural_prob,action,module\n");
    let names = crate::explain::action_names(&policy.logic);
    for step in 0..a.steps {
        let obs = env.observe();
        let e = explain_state(&policy, &obs, a.k, a.ig_steps).map_err(CliError::runtime)?;
        let sub = dir.join(format!("step_{step:04}"));
        e.write_dir(&sub).map_err(|err| io_err(&sub, err))?;
        let (act, _) = sample_action(&e.dist, &mut rng);
        let max = |d: &[f64]| d[argmax(d)];
        let _ = writeln!(
            timeline,
            "{step},{},{},{},{},{}",
            e.beta,
            max(&e.logic_dist),
            max(&e.neural_dist),
            names[act],
            if e.beta >= 0.5 { "neural" } else { "logic" }
        );
        if env.step(act).map_err(CliError::runtime)?.done {
            env.reset();
        }
    }
    let path = dir.join("timeline.csv");
    std::fs::write(&path, timeline).map_err(|e| io_err(&path, e))?;
    let _ = writeln!(out, "wrote {} step reports to {}", a.steps, dir.display());
    Ok(dir)
}

pub fn cmd_inspect_rules(a: &InspectArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let config = RunConfig {
        env: a.env,
        language: a.language.clone(),
        rules: a.rules.clone(),
        blend_rules: a.blend_rules.clone(),
        valuations: a.valuations.clone(),
        ..Default::default()
    };
    let resolved = config.resolve().map_err(CliError::Config)?;
    let b = &resolved.bundle;
    let lang = b.action_rules.language();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "language: {} types, {} constants, {} predicates",
        lang.types().len(),
        lang.constants().len(),
        lang.predicates().len()
    );
    for (title, rules) in [("action rules", &b.action_rules), ("blending rules", &b.blend_rules)] {
        let gp = ground_program(rules).map_err(CliError::runtime)?;
        let g = build_graph(&gp);
        let _ = writeln!(s, "\n{title}: {} rules", rules.len());
        for line in rules.format().lines() {
            let _ = writeln!(s, "  {line}");
        }
        let _ = writeln!(
            s,
            "  ground: {} atoms, {} ground rules; graph: {} nodes, {} edges; inference steps {}",
            gp.atoms().len(),
            gp.ground_rules().len(),
            g.node_count(),
            g.edge_count(),
            crate::reason::default_steps(rules)
        );
    }
    let program = RuleProgram::new(b.action_rules.clone(), &b.valuations, &a.env.slots()).map_err(CliError::runtime)?;
    let logic = LogicPolicy::new(program, a.env.action_names()).map_err(CliError::runtime)?;
    let _ = writeln!(s, "\nactions:");
    for (i, name) in a.env.action_names().iter().enumerate() {
        let _ = writeln!(s, "  {name}: {} ground atom(s)", logic.action_atoms(i).len());
    }
    let _ = writeln!(s, "\nvaluations: {}", b.valuations.predicates().collect::<Vec<_>>().join(", "));
    let _ = write!(out, "{s}");
    Ok(())
}

/// Default asset directory of the source tree, for examples and docs.
pub fn asset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

/// Path of a shipped asset file for `env` (`kind` 0..4: language, rules,
/// blend rules, valuations).
pub fn asset_path(env: EnvName, kind: usize) -> PathBuf {
    asset_dir().join(&assets::file_names(env)[kind])
}
