//! Command-line flags and their resolution into an [`Invocation`].
//!
//! Precedence is flag, then config file, then built-in default. Commands that
//! load a checkpoint take its environment (and shaping) settings as the layer
//! between the file and the flags. The shaping scheduler horizon always
//! follows the environment horizon.

use std::path::PathBuf;

use casande_core::environment::EnvConfig;
use casande_core::shaping::ShapingConfig;
use clap::{Args, Parser, Subcommand};

use crate::commands::{
    load_matching_checkpoint, AgentKind, EvaluateRun, ExportRun, GenerateRun, InteractiveRun, Invocation, PatientSource,
    TrainRun,
};
use crate::config::{FileConfig, CONFIG_ENV_VAR};
use crate::error::{usage, CliResult};

#[derive(Debug, Parser)]
#[command(name = "casande-lab", version, about = "Train and evaluate symptom-inquiry agents on synthetic patients")]
pub struct Cli {
    /// Config file (TOML, or JSON when the extension is .json).
    #[arg(long, global = true, env = CONFIG_ENV_VAR)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a knowledge base and patient files.
    Generate(GenerateArgs),
    /// Train the inquiry agent.
    Train(TrainArgs),
    /// Evaluate agents and write the metric reports.
    Evaluate(EvaluateArgs),
    /// Run the Bayesian experimental designer over patients.
    Bed(BedArgs),
    /// Write one trajectory file per patient.
    Export(ExportArgs),
    /// Answer the agent's questions yourself.
    Interactive(InteractiveArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of runs, seeded `seed, seed + 1, ...` unless --seeds is given.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Explicit seed per run.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

impl SeedArgs {
    pub fn resolve(&self, default_seed: u64) -> CliResult<Vec<u64>> {
        if !self.seeds.is_empty() {
            if let Some(r) = self.runs {
                if r != self.seeds.len() {
                    return Err(usage(format!("--runs {r} does not match {} --seeds", self.seeds.len())));
                }
            }
            return Ok(self.seeds.clone());
        }
        let runs = self.runs.unwrap_or(1);
        if runs == 0 {
            return Err(usage("--runs must be positive"));
        }
        let base = self.seed.unwrap_or(default_seed);
        Ok((0..runs as u64).map(|i| base.wrapping_add(i)).collect())
    }
}

#[derive(Debug, Args)]
pub struct HorizonArgs {
    /// Maximum number of turns per dialogue.
    #[arg(long = "T", value_name = "TURNS")]
    pub horizon: Option<usize>,
}

impl HorizonArgs {
    fn apply(&self, env: &mut EnvConfig) -> CliResult<()> {
        if let Some(t) = self.horizon {
            env.horizon = t;
        }
        if env.horizon == 0 {
            return Err(usage("the horizon must be at least one turn"));
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct ShapingArgs {
    #[arg(long)]
    pub alpha_ex: Option<f64>,
    #[arg(long)]
    pub alpha_co: Option<f64>,
    #[arg(long)]
    pub alpha_sev: Option<f64>,
    #[arg(long)]
    pub alpha_cl: Option<f64>,
    /// Weight of the severe-pathology term in the belief quality.
    #[arg(long)]
    pub w_si: Option<f64>,
    /// Switch off every auxiliary reward.
    #[arg(long)]
    pub no_shaping: bool,
}

impl ShapingArgs {
    fn apply(&self, shaping: &mut ShapingConfig, env: &EnvConfig) {
        let pairs = [
            (self.alpha_ex, &mut shaping.alpha_ex),
            (self.alpha_co, &mut shaping.alpha_co),
            (self.alpha_sev, &mut shaping.alpha_sev),
            (self.alpha_cl, &mut shaping.alpha_cl),
            (self.w_si, &mut shaping.w_si),
        ];
        for (flag, slot) in pairs {
            if let Some(v) = flag {
                *slot = v;
            }
        }
        if self.no_shaping {
            *shaping = shaping.clone().without_shaping();
        }
        shaping.scheduler.horizon = env.horizon;
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub diseases: Option<usize>,
    #[arg(long)]
    pub evidences: Option<usize>,
    /// Number of training patients.
    #[arg(long, default_value_t = 2000)]
    pub patients: usize,
    /// Number of held-out patients; written only when positive.
    #[arg(long, default_value_t = 0)]
    pub test_patients: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Informative evidences per pathology.
    #[arg(long)]
    pub links: Option<usize>,
    #[arg(long)]
    pub severe_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub kb: PathBuf,
    /// Training patients (JSON lines).
    #[arg(long)]
    pub patients: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training iterations.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    #[command(flatten)]
    pub shaping: ShapingArgs,
}

#[derive(Debug, Args)]
pub struct PatientArgs {
    /// Patient file (JSON lines).
    #[arg(long, conflicts_with = "test_patients")]
    pub patients: Option<PathBuf>,
    /// Sample this many fresh patients per run instead.
    #[arg(long)]
    pub test_patients: Option<usize>,
}

impl PatientArgs {
    fn resolve(&self) -> CliResult<PatientSource> {
        match (&self.patients, self.test_patients) {
            (Some(p), None) => Ok(PatientSource::File(p.clone())),
            (None, Some(count)) => Ok(PatientSource::Sampled { count }),
            _ => Err(usage("give either --patients or --test-patients")),
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Differential membership threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub bed_threshold: Option<f64>,
    /// Metrics to report, e.g. DDF1,PER.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[command(flatten)]
    pub patients: PatientArgs,
    /// Agents to evaluate; defaults to all three with a checkpoint, else bed.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub agent: Vec<AgentKind>,
    /// One checkpoint, or one per run.
    #[arg(long, value_delimiter = ',')]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every trajectory.
    #[arg(long)]
    pub save_trajectories: bool,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[command(flatten)]
    pub horizon: HorizonArgs,
}

#[derive(Debug, Args)]
pub struct BedArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[command(flatten)]
    pub patients: PatientArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[command(flatten)]
    pub horizon: HorizonArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub patients: PathBuf,
    /// Defaults to dqn with a checkpoint, else bed.
    #[arg(long, value_enum)]
    pub agent: Option<AgentKind>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Export only the first N patients.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub bed_threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    #[command(flatten)]
    pub shaping: ShapingArgs,
}

#[derive(Debug, Args)]
pub struct InteractiveArgs {
    #[arg(long)]
    pub kb: PathBuf,
    /// Defaults to dqn with a checkpoint, else bed.
    #[arg(long, value_enum)]
    pub agent: Option<AgentKind>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub bed_threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub horizon: HorizonArgs,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write into this directory instead of the original one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_agent(agent: Option<AgentKind>, checkpoint: bool) -> AgentKind {
    agent.unwrap_or(if checkpoint { AgentKind::Dqn } else { AgentKind::Bed })
}

fn check_agent(agent: AgentKind, checkpoint: bool) -> CliResult<()> {
    if agent.needs_checkpoint() && !checkpoint {
        return Err(usage(format!("agent {} needs --checkpoint", agent.name())));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("{name} must be positive, got {v}")))
    }
}

fn resolve_eval(file: &FileConfig, args: &EvalArgs) -> CliResult<crate::config::EvalConfig> {
    let mut eval = file.eval.clone();
    if let Some(t) = args.threshold {
        eval.threshold = t;
    }
    if let Some(t) = args.bed_threshold {
        eval.bed_threshold = t;
    }
    if !args.metrics.is_empty() {
        eval.metrics = args.metrics.clone();
    }
    positive("--threshold", eval.threshold)?;
    positive("--bed-threshold", eval.bed_threshold)?;
    Ok(eval)
}

/// Folds flags over the config file; `None` for `rerun`.
pub fn resolve(command: &Command, file: &FileConfig) -> CliResult<Option<Invocation>> {
    Ok(Some(match command {
        Command::Generate(a) => {
            let mut generator = file.generator.clone();
            if let Some(d) = a.diseases {
                generator.num_pathologies = d;
            }
            if let Some(e) = a.evidences {
                generator.num_evidences = e;
            }
            if let Some(s) = a.seed {
                generator.seed = s;
            }
            if let Some(l) = a.links {
                generator.links_per_pathology = l;
            }
            if let Some(f) = a.severe_fraction {
                generator.severe_fraction = f;
            }
            generator.validate().map_err(usage)?;
            Invocation::Generate(GenerateRun {
                generator,
                patients: a.patients,
                test_patients: a.test_patients,
                out: a.out.clone(),
            })
        }
        Command::Train(a) => {
            let mut env = file.env.clone();
            a.horizon.apply(&mut env)?;
            let mut shaping = file.shaping.clone();
            a.shaping.apply(&mut shaping, &env);
            let mut train = file.train.clone();
            if let Some(s) = a.steps {
                train.total_steps = s;
            }
            if let Some(lr) = a.lr {
                train.learning_rate = lr;
            }
            train.validate().map_err(usage)?;
            Invocation::Train(TrainRun {
                kb: a.kb.clone(),
                patients: a.patients.clone(),
                env,
                shaping,
                seeds: a.seeds.resolve(train.seed)?,
                train,
                out: a.out.clone(),
            })
        }
        Command::Evaluate(a) => {
            let has_ckpt = !a.checkpoint.is_empty();
            let agents = if a.agent.is_empty() {
                if has_ckpt {
                    vec![AgentKind::Dqn, AgentKind::Random, AgentKind::Bed]
                } else {
                    vec![AgentKind::Bed]
                }
            } else {
                a.agent.clone()
            };
            for &agent in &agents {
                check_agent(agent, has_ckpt)?;
            }
            let mut env = file.env.clone();
            if has_ckpt {
                let kb = crate::commands::load_kb(&a.kb)?;
                env = load_matching_checkpoint(&a.checkpoint[0], &kb)?.env;
            }
            a.horizon.apply(&mut env)?;
            Invocation::Evaluate(EvaluateRun {
                kb: a.kb.clone(),
                patients: a.patients.resolve()?,
                agents,
                checkpoints: a.checkpoint.clone(),
                env,
                eval: resolve_eval(file, &a.eval)?,
                seeds: a.seeds.resolve(file.train.seed)?,
                save_trajectories: a.save_trajectories,
                out: a.out.clone(),
            })
        }
        Command::Bed(a) => {
            let mut env = file.env.clone();
            a.horizon.apply(&mut env)?;
            Invocation::Bed(EvaluateRun {
                kb: a.kb.clone(),
                patients: a.patients.resolve()?,
                agents: vec![AgentKind::Bed],
                checkpoints: Vec::new(),
                env,
                eval: resolve_eval(file, &a.eval)?,
                seeds: a.seeds.resolve(file.train.seed)?,
                save_trajectories: true,
                out: a.out.clone(),
            })
        }
        Command::Export(a) => {
            let agent = default_agent(a.agent, a.checkpoint.is_some());
            check_agent(agent, a.checkpoint.is_some())?;
            let (mut env, mut shaping) = (file.env.clone(), file.shaping.clone());
            if let Some(path) = &a.checkpoint {
                let kb = crate::commands::load_kb(&a.kb)?;
                let ckpt = load_matching_checkpoint(path, &kb)?;
                env = ckpt.env;
                shaping = ckpt.shaping;
            }
            a.horizon.apply(&mut env)?;
            a.shaping.apply(&mut shaping, &env);
            Invocation::Export(ExportRun {
                kb: a.kb.clone(),
                patients: a.patients.clone(),
                agent,
                checkpoint: a.checkpoint.clone(),
                env,
                shaping,
                bed_threshold: positive("--bed-threshold", a.bed_threshold.unwrap_or(file.eval.bed_threshold))?,
                seed: a.seed.unwrap_or(file.train.seed),
                limit: a.limit,
                out: a.out.clone(),
            })
        }
        Command::Interactive(a) => {
            let agent = default_agent(a.agent, a.checkpoint.is_some());
            check_agent(agent, a.checkpoint.is_some())?;
            let mut env = file.env.clone();
            if let Some(path) = &a.checkpoint {
                let kb = crate::commands::load_kb(&a.kb)?;
                env = load_matching_checkpoint(path, &kb)?.env;
            }
            a.horizon.apply(&mut env)?;
            Invocation::Interactive(InteractiveRun {
                kb: a.kb.clone(),
                agent,
                checkpoint: a.checkpoint.clone(),
                env,
                threshold: positive("--threshold", a.threshold.unwrap_or(file.eval.threshold))?,
                bed_threshold: positive("--bed-threshold", a.bed_threshold.unwrap_or(file.eval.bed_threshold))?,
                seed: a.seed.unwrap_or(file.train.seed),
                out: a.out.clone(),
                script: None,
            })
        }
        Command::Rerun(_) => return Ok(None),
    }))
}
