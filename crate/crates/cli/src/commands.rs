//! Fully resolved commands and their execution.
//!
//! Flags and config files are folded into an [`Invocation`] before anything
//! runs; the invocation is stored in the run manifest and is all `rerun`
//! needs.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use casande_core::agent::{
    load_checkpoint, save_checkpoint, train, write_train_log, Checkpoint, GreedyPolicy, RandomQuestionPolicy, TrainConfig,
};
use casande_core::bed::BedPolicy;
use casande_core::datagen::{generate_kb, sample_patients, DatagenError, GeneratorConfig};
use casande_core::environment::{build_layout, EnvConfig};
use casande_core::knowledge::{load_knowledge_base, load_patients, save_knowledge_base, save_patients, KnowledgeBase, PatientRecord};
use casande_core::metrics::{aggregate, parse_metric_names, report_csv, trajectory_csv, write_text, EvaluationReport};
use casande_core::rollout::{run_episodes, EpisodeContext, Policy, Trajectory};
use casande_core::seed::{derive_seed, rng_for};
use casande_core::shaping::ShapingConfig;
use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::error::{data, runtime, usage, CliError, CliResult};
use crate::repl::{run_session, SessionSetup};

/// Stream index for patients sampled at evaluation time.
const EVAL_PATIENT_STREAM: u64 = 0xE7A1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// The trained Q-network acting greedily.
    Dqn,
    /// Uniform questions, the trained classifier supplying beliefs.
    Random,
    /// The Bayesian experimental designer; needs no checkpoint.
    Bed,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Random => "random",
            AgentKind::Bed => "bed",
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        self != AgentKind::Bed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientSource {
    File(PathBuf),
    /// Freshly sampled from the knowledge base for every run seed.
    Sampled { count: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRun {
    pub generator: GeneratorConfig,
    pub patients: usize,
    pub test_patients: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRun {
    pub kb: PathBuf,
    pub patients: PathBuf,
    pub env: EnvConfig,
    pub shaping: ShapingConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateRun {
    pub kb: PathBuf,
    pub patients: PatientSource,
    pub agents: Vec<AgentKind>,
    pub checkpoints: Vec<PathBuf>,
    pub env: EnvConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub save_trajectories: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportRun {
    pub kb: PathBuf,
    pub patients: PathBuf,
    pub agent: AgentKind,
    pub checkpoint: Option<PathBuf>,
    pub env: EnvConfig,
    pub shaping: ShapingConfig,
    pub bed_threshold: f64,
    pub seed: u64,
    pub limit: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractiveRun {
    pub kb: PathBuf,
    pub agent: AgentKind,
    pub checkpoint: Option<PathBuf>,
    pub env: EnvConfig,
    pub threshold: f64,
    pub bed_threshold: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// Accepted console lines; replayed instead of reading the console.
    pub script: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Generate(GenerateRun),
    Train(TrainRun),
    Evaluate(EvaluateRun),
    Bed(EvaluateRun),
    Export(ExportRun),
    Interactive(InteractiveRun),
}

impl Invocation {
    pub fn out_dir(&self) -> &Path {
        match self {
            Invocation::Generate(r) => &r.out,
            Invocation::Train(r) => &r.out,
            Invocation::Evaluate(r) | Invocation::Bed(r) => &r.out,
            Invocation::Export(r) => &r.out,
            Invocation::Interactive(r) => &r.out,
        }
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Invocation::Generate(r) => r.out = dir,
            Invocation::Train(r) => r.out = dir,
            Invocation::Evaluate(r) | Invocation::Bed(r) => r.out = dir,
            Invocation::Export(r) => r.out = dir,
            Invocation::Interactive(r) => r.out = dir,
        }
    }
}

/// Files read and written by a finished command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Set when running changed the invocation (the recorded console script).
    pub recorded: Option<Invocation>,
}

/// Console streams for commands that talk to a person.
pub struct Console<'a> {
    pub input: &'a mut dyn BufRead,
    pub output: &'a mut dyn Write,
}

pub fn execute(inv: &Invocation, console: Console<'_>) -> CliResult<Outcome> {
    std::fs::create_dir_all(inv.out_dir()).map_err(|e| data(format!("{}: {e}", inv.out_dir().display())))?;
    match inv {
        Invocation::Generate(r) => cmd_generate(r, console.output),
        Invocation::Train(r) => cmd_train(r, console.output),
        Invocation::Evaluate(r) | Invocation::Bed(r) => cmd_evaluate(r, console.output),
        Invocation::Export(r) => cmd_export(r, console.output),
        Invocation::Interactive(r) => cmd_interactive(r, console),
    }
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> CliResult<()> {
    writeln!(out, "{}", text.as_ref()).map_err(data)
}

pub fn load_kb(path: &Path) -> CliResult<KnowledgeBase> {
    load_knowledge_base(path).map_err(data)
}

fn load_patient_file(path: &Path, kb: &KnowledgeBase) -> CliResult<Vec<PatientRecord>> {
    let patients = load_patients(path, kb).map_err(data)?;
    if patients.is_empty() {
        return Err(data(format!("{}: no patients", path.display())));
    }
    Ok(patients)
}

/// Loads a checkpoint and checks it was trained on this knowledge base's shape.
pub fn load_matching_checkpoint(path: &Path, kb: &KnowledgeBase) -> CliResult<Checkpoint> {
    let ckpt = load_checkpoint(path).map_err(data)?;
    let layout = build_layout(kb);
    let p = &ckpt.params;
    if p.input_dim() != layout.total || p.num_actions() != kb.num_evidences() + 1 || p.num_pathologies() != kb.num_pathologies() {
        return Err(data(format!(
            "{}: network shape {}x{}x{} does not fit the knowledge base ({} inputs, {} actions, {} pathologies)",
            path.display(),
            p.input_dim(),
            p.num_actions(),
            p.num_pathologies(),
            layout.total,
            kb.num_evidences() + 1,
            kb.num_pathologies()
        )));
    }
    Ok(ckpt)
}

fn generator_error(e: DatagenError) -> CliError {
    match e {
        DatagenError::Config(_) => usage(e),
        _ => runtime(e),
    }
}

fn cmd_generate(run: &GenerateRun, out: &mut dyn Write) -> CliResult<Outcome> {
    let kb = generate_kb(&run.generator).map_err(generator_error)?;
    let seed = run.generator.seed;
    let kb_path = run.out.join("kb.json");
    save_knowledge_base(&kb, &kb_path).map_err(data)?;
    let mut outputs = vec![kb_path];

    let mut files = vec![("patients.jsonl", run.patients, 1)];
    if run.test_patients > 0 {
        files.push(("test_patients.jsonl", run.test_patients, 2));
    }
    for (name, count, stream) in files {
        let patients = sample_patients(&kb, count, derive_seed(seed, stream)).map_err(generator_error)?;
        let path = run.out.join(name);
        save_patients(&patients, &path).map_err(data)?;
        outputs.push(path);
    }
    say(
        out,
        format!(
            "generated {} pathologies, {} evidences, {} patients into {}",
            kb.num_pathologies(),
            kb.num_evidences(),
            run.patients + run.test_patients,
            run.out.display()
        ),
    )?;
    Ok(Outcome {
        outputs,
        ..Outcome::default()
    })
}

/// `stem.ext` for a single seed, `stem_seed{s}.ext` for several.
pub fn per_seed_name(stem: &str, ext: &str, seed: u64, multi: bool) -> String {
    if multi {
        format!("{stem}_seed{seed}.{ext}")
    } else {
        format!("{stem}.{ext}")
    }
}

fn cmd_train(run: &TrainRun, out: &mut dyn Write) -> CliResult<Outcome> {
    let kb = load_kb(&run.kb)?;
    let patients = load_patient_file(&run.patients, &kb)?;
    let multi = run.seeds.len() > 1;
    let mut outputs = Vec::new();
    for &seed in &run.seeds {
        let cfg = TrainConfig {
            seed,
            ..run.train.clone()
        };
        cfg.validate().map_err(usage)?;
        let outcome = train(&kb, &patients, &run.env, &run.shaping, &cfg).map_err(runtime)?;
        let ckpt_path = run.out.join(per_seed_name("checkpoint", "json", seed, multi));
        let log_path = run.out.join(per_seed_name("train_log", "csv", seed, multi));
        save_checkpoint(&Checkpoint::from_outcome(&outcome, &run.env, &run.shaping, &cfg), &ckpt_path).map_err(data)?;
        write_train_log(&outcome.log, &log_path).map_err(data)?;
        let last = outcome
            .log
            .last()
            .map(|r| format!("; last q_loss {:.4}, clf_loss {:.4}", r.q_loss, r.clf_loss))
            .unwrap_or_default();
        say(out, format!("seed {seed}: {} steps{last} -> {}", outcome.steps, ckpt_path.display()))?;
        outputs.push(ckpt_path);
        outputs.push(log_path);
    }
    Ok(Outcome {
        inputs: vec![run.kb.clone(), run.patients.clone()],
        outputs,
        recorded: None,
    })
}

/// Runs one agent over `patients`; `seed` drives the random baseline.
fn rollouts(
    agent: AgentKind,
    ckpt: Option<&Checkpoint>,
    patients: &[PatientRecord],
    ctx: &EpisodeContext<'_>,
    bed_threshold: f64,
    seed: u64,
) -> CliResult<Vec<Trajectory>> {
    let params = || ckpt.map(|c| &c.params).ok_or_else(|| usage(format!("agent {} needs --checkpoint", agent.name())));
    let result = match agent {
        AgentKind::Dqn => {
            let params = params()?;
            run_episodes(patients, ctx, |_| GreedyPolicy { params })
        }
        AgentKind::Random => {
            let params = params()?;
            run_episodes(patients, ctx, |i| RandomQuestionPolicy {
                params,
                rng: rng_for(seed, i as u64),
            })
        }
        AgentKind::Bed => {
            let bed = BedPolicy::new(ctx.kb, bed_threshold).map_err(usage)?;
            run_episodes(patients, ctx, |_| bed)
        }
    };
    result.map_err(runtime)
}

fn save_trajectories(trajectories: &[Trajectory], path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(trajectories).map_err(data)? + "\n";
    std::fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn cmd_evaluate(run: &EvaluateRun, out: &mut dyn Write) -> CliResult<Outcome> {
    let metrics = parse_metric_names(&run.eval.metrics).map_err(usage)?;
    if run.agents.is_empty() {
        return Err(usage("no agent to evaluate"));
    }
    if run.seeds.is_empty() {
        return Err(usage("at least one run is required"));
    }
    let kb = load_kb(&run.kb)?;
    let mut inputs = vec![run.kb.clone()];
    let ckpts = run
        .checkpoints
        .iter()
        .map(|p| load_matching_checkpoint(p, &kb))
        .collect::<CliResult<Vec<_>>>()?;
    inputs.extend(run.checkpoints.iter().cloned());
    if ckpts.len() > 1 && ckpts.len() != run.seeds.len() {
        return Err(usage(format!(
            "{} checkpoints for {} runs; pass one checkpoint or one per run",
            ckpts.len(),
            run.seeds.len()
        )));
    }
    let fixed_patients = match &run.patients {
        PatientSource::File(path) => {
            inputs.push(path.clone());
            Some(load_patient_file(path, &kb)?)
        }
        PatientSource::Sampled { count: 0 } => return Err(usage("--test-patients must be positive")),
        PatientSource::Sampled { .. } => None,
    };
    let layout = build_layout(&kb);
    let ctx = EpisodeContext {
        kb: &kb,
        layout: &layout,
        env: &run.env,
        shaping: None,
    };
    let multi = run.seeds.len() > 1;
    let mut outputs = Vec::new();
    let mut aggregates = Vec::new();
    for &agent in &run.agents {
        let mut reports = Vec::with_capacity(run.seeds.len());
        for (r, &seed) in run.seeds.iter().enumerate() {
            let sampled;
            let patients = match (&fixed_patients, &run.patients) {
                (Some(p), _) => p,
                (None, PatientSource::Sampled { count }) => {
                    sampled = sample_patients(&kb, *count, derive_seed(seed, EVAL_PATIENT_STREAM)).map_err(generator_error)?;
                    &sampled
                }
                (None, PatientSource::File(_)) => unreachable!("file patients are loaded up front"),
            };
            let ckpt = ckpts.get(if ckpts.len() == 1 { 0 } else { r });
            let trajectories = rollouts(agent, ckpt, patients, &ctx, run.eval.bed_threshold, seed)?;
            if run.save_trajectories {
                let path = run.out.join(per_seed_name(&format!("trajectories_{}", agent.name()), "json", seed, multi));
                save_trajectories(&trajectories, &path)?;
                outputs.push(path);
            }
            reports.push(
                EvaluationReport::from_trajectories_at(agent.name(), &kb, patients, &trajectories, run.eval.threshold)
                    .map_err(runtime)?,
            );
        }
        let agg = aggregate(&reports, &metrics).map_err(runtime)?;
        let path = run.out.join(format!("trajectory_scores_{}.csv", agent.name()));
        write_text(&path, &trajectory_csv(&agg)).map_err(data)?;
        outputs.push(path);
        aggregates.push(agg);
    }
    let report = report_csv(&aggregates);
    let path = run.out.join("report.csv");
    write_text(&path, &report).map_err(data)?;
    outputs.insert(0, path);
    say(out, report.trim_end())?;
    Ok(Outcome {
        inputs,
        outputs,
        recorded: None,
    })
}

fn cmd_export(run: &ExportRun, out: &mut dyn Write) -> CliResult<Outcome> {
    let kb = load_kb(&run.kb)?;
    let mut patients = load_patient_file(&run.patients, &kb)?;
    if let Some(limit) = run.limit {
        patients.truncate(limit);
    }
    let mut inputs = vec![run.kb.clone(), run.patients.clone()];
    let ckpt = match &run.checkpoint {
        Some(path) => {
            inputs.push(path.clone());
            Some(load_matching_checkpoint(path, &kb)?)
        }
        None => None,
    };
    let layout = build_layout(&kb);
    let ctx = EpisodeContext {
        kb: &kb,
        layout: &layout,
        env: &run.env,
        shaping: Some(&run.shaping),
    };
    let trajectories = rollouts(run.agent, ckpt.as_ref(), &patients, &ctx, run.bed_threshold, run.seed)?;
    let mut outputs = Vec::with_capacity(trajectories.len());
    for (i, t) in trajectories.iter().enumerate() {
        let path = run.out.join(format!("trajectory_{i:05}.json"));
        t.save(&path).map_err(data)?;
        outputs.push(path);
    }
    say(out, format!("exported {} trajectories to {}", outputs.len(), run.out.display()))?;
    Ok(Outcome {
        inputs,
        outputs,
        recorded: None,
    })
}

fn cmd_interactive(run: &InteractiveRun, console: Console<'_>) -> CliResult<Outcome> {
    let kb = load_kb(&run.kb)?;
    let mut inputs = vec![run.kb.clone()];
    let ckpt = match &run.checkpoint {
        Some(path) => {
            inputs.push(path.clone());
            Some(load_matching_checkpoint(path, &kb)?)
        }
        None => None,
    };
    let need = || usage(format!("agent {} needs --checkpoint", run.agent.name()));
    let mut policy: Box<dyn Policy + '_> = match run.agent {
        AgentKind::Dqn => Box::new(GreedyPolicy {
            params: &ckpt.as_ref().ok_or_else(need)?.params,
        }),
        AgentKind::Random => Box::new(RandomQuestionPolicy {
            params: &ckpt.as_ref().ok_or_else(need)?.params,
            rng: rng_for(run.seed, 0),
        }),
        AgentKind::Bed => Box::new(BedPolicy::new(&kb, run.bed_threshold).map_err(usage)?),
    };
    let setup = SessionSetup {
        kb: &kb,
        env: &run.env,
        threshold: run.threshold,
    };
    let script_text = run.script.as_ref().map(|lines| lines.join("\n") + "\n");
    let mut scripted = script_text.as_deref().map(str::as_bytes);
    let mut sink = std::io::sink();
    let (input, output): (&mut dyn BufRead, &mut dyn Write) = match scripted.as_mut() {
        Some(bytes) => (bytes, &mut sink),
        None => (console.input, console.output),
    };
    let session = run_session(&setup, policy.as_mut(), input, output)?;
    let path = run.out.join("trajectory.json");
    session.trajectory.save(&path).map_err(data)?;
    let status = if session.quit { "stopped" } else { "finished" };
    say(output, format!("session {status}; dialogue saved to {}", path.display()))?;
    let recorded = InteractiveRun {
        script: Some(session.script),
        ..run.clone()
    };
    Ok(Outcome {
        inputs,
        outputs: vec![path],
        recorded: Some(Invocation::Interactive(recorded)),
    })
}
