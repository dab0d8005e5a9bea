//! The alternating training loop: a batch of environments is stepped with an
//! epsilon-greedy policy, transitions are stored with their shaped rewards,
//! and each iteration applies the Q update and then the classifier update on
//! one shared replay batch before soft-updating the target network.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    classifier_loss, epsilon_greedy, q_loss, soft_update, AgentError, ArchConfig, NetworkParams, Optimizer,
    OptimizerKind, ReplayBuffer, ReplayEntry,
};
use crate::environment::{action_mask, build_layout, reset, step, DialogueState, EnvConfig};
use crate::knowledge::{KnowledgeBase, PatientRecord};
use crate::seed::rng_for;
use crate::shaping::{ShapingComponents, ShapingConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    /// Target network soft-update rate.
    pub rho: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Linear decay length; defaults to half of `total_steps`.
    pub epsilon_decay_steps: Option<usize>,
    /// Environments stepped per iteration.
    pub env_count: usize,
    /// Training iterations.
    pub total_steps: usize,
    pub seed: u64,
    pub replay_capacity: usize,
    /// Global gradient-norm clip applied to each update; `None` disables it.
    pub max_grad_norm: Option<f64>,
    pub arch: ArchConfig,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: 64,
            rho: 0.005,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: None,
            env_count: 16,
            total_steps: 50_000,
            seed: 0,
            replay_capacity: 50_000,
            max_grad_norm: Some(10.0),
            arch: ArchConfig::default(),
            log_every: 1_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad("rho must lie in (0, 1]");
        }
        for eps in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&eps) {
                return bad("epsilon must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.env_count == 0 || self.log_every == 0 {
            return bad("batch size, env count and log interval must be positive");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay capacity must hold at least one batch");
        }
        if let Some(c) = self.max_grad_norm {
            if c.is_nan() || c <= 0.0 {
                return bad("gradient clip must be positive");
            }
        }
        Ok(())
    }

    pub fn epsilon_at(&self, step: usize) -> f64 {
        let decay = self.epsilon_decay_steps.unwrap_or(self.total_steps / 2);
        if decay == 0 || step >= decay {
            return self.epsilon_end;
        }
        let frac = step as f64 / decay as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub q_loss: f64,
    pub clf_loss: f64,
    pub epsilon: f64,
    pub mean_episode_return: f64,
    pub mean_il: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub target: NetworkParams,
    pub log: Vec<TrainLogRow>,
    pub rng: ChaCha8Rng,
    pub steps: usize,
}

struct Slot {
    patient: usize,
    state: DialogueState,
    target: Arc<[f64]>,
    episode_return: f64,
    inquiries: usize,
}

#[derive(Default)]
struct Window {
    q_loss: f64,
    clf_loss: f64,
    updates: usize,
    returns: f64,
    lengths: f64,
    episodes: usize,
}

fn clip(grads: &mut NetworkParams, max_norm: Option<f64>) {
    if let Some(c) = max_norm {
        let norm = grads.l2_norm();
        if norm > c {
            grads.scale(c / norm);
        }
    }
}

pub fn train(
    kb: &KnowledgeBase,
    patients: &[PatientRecord],
    env: &EnvConfig,
    shaping: &ShapingConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, AgentError> {
    train_with_observer(kb, patients, env, shaping, cfg, &mut |_| {})
}

/// Like [`train`], calling `observer` on every transition in insertion order.
pub fn train_with_observer(
    kb: &KnowledgeBase,
    patients: &[PatientRecord],
    env: &EnvConfig,
    shaping: &ShapingConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&ReplayEntry),
) -> Result<TrainOutcome, AgentError> {
    cfg.validate()?;
    if patients.is_empty() {
        return Err(AgentError::Config("no training patients".into()));
    }
    if env.horizon == 0 {
        return Err(AgentError::Config("horizon must be positive".into()));
    }
    let layout = build_layout(kb);
    let num_actions = layout.num_actions();
    let severe = kb.severe_set();
    let mut theta = NetworkParams::init(layout.total, num_actions, kb.num_pathologies(), &cfg.arch, cfg.seed)?;
    let mut phi = theta.clone();
    let mut rng = rng_for(cfg.seed, 1);
    if cfg.total_steps == 0 {
        return Ok(TrainOutcome {
            params: theta,
            target: phi,
            log: Vec::new(),
            rng,
            steps: 0,
        });
    }

    let mut opt_q = Optimizer::new(cfg.optimizer, cfg.learning_rate, theta.num_params());
    let mut opt_clf = Optimizer::new(cfg.optimizer, cfg.learning_rate, theta.num_params());
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let targets: Vec<Arc<[f64]>> = patients.iter().map(|p| Arc::from(p.gt_differential.as_slice())).collect();
    let new_slot = |rng: &mut ChaCha8Rng| {
        let patient = rng.gen_range(0..patients.len());
        Slot {
            patient,
            state: reset(&patients[patient], &layout, kb),
            target: targets[patient].clone(),
            episode_return: 0.0,
            inquiries: 0,
        }
    };
    let mut slots: Vec<Slot> = (0..cfg.env_count).map(|_| new_slot(&mut rng)).collect();
    let width = layout.total;
    let mut log = Vec::new();
    let mut window = Window::default();

    for it in 0..cfg.total_steps {
        let epsilon = cfg.epsilon_at(it);

        let mut states = Array2::zeros((slots.len(), width));
        for (i, s) in slots.iter().enumerate() {
            states.row_mut(i).assign(&ndarray::ArrayView1::from(&s.state.vector));
        }
        let (now, _) = theta.forward(states.view())?;

        let mut transitions = Vec::with_capacity(slots.len());
        for (i, s) in slots.iter().enumerate() {
            let mask = action_mask(&s.state);
            let action = epsilon_greedy(now.q.row(i).as_slice().unwrap(), &mask, epsilon, &mut rng)?;
            transitions.push(step(&s.state, action, &patients[s.patient], env, &layout, kb)?);
        }

        // beliefs in the next states, needed by the non-terminal shaping terms
        let live: Vec<usize> = (0..transitions.len()).filter(|&i| !transitions[i].terminal).collect();
        let next_beliefs = if live.is_empty() {
            None
        } else {
            let mut next = Array2::zeros((live.len(), width));
            for (r, &i) in live.iter().enumerate() {
                next.row_mut(r).assign(&ndarray::ArrayView1::from(&transitions[i].next_state.vector));
            }
            Some(theta.forward(next.view())?.0.beliefs)
        };

        let mut live_row = 0;
        for (i, tr) in transitions.into_iter().enumerate() {
            let slot = &mut slots[i];
            let bel_t = now.beliefs.row(i);
            let bel_t = bel_t.as_slice().unwrap();
            let bel_next = if tr.terminal {
                None
            } else {
                live_row += 1;
                Some(next_beliefs.as_ref().unwrap().row(live_row - 1).to_vec())
            };
            let comps = ShapingComponents::evaluate(
                shaping,
                tr.state.turn,
                bel_t,
                bel_next.as_deref(),
                &slot.target,
                &severe,
            );
            let shaped_reward = tr.base_reward + comps.total(shaping);
            let entry = ReplayEntry {
                state: tr.state.vector.clone(),
                turn: tr.state.turn,
                action: tr.action,
                base_reward: tr.base_reward,
                shaped_reward,
                next_mask: if tr.terminal { Vec::new() } else { action_mask(&tr.next_state) },
                next_state: if tr.terminal { None } else { Some(tr.next_state.vector.clone()) },
                target: slot.target.clone(),
            };
            observer(&entry);
            buffer.push(entry);
            slot.episode_return += shaped_reward;
            if !tr.is_exit() {
                slot.inquiries += 1;
            }
            if tr.terminal {
                window.returns += slot.episode_return;
                window.lengths += slot.inquiries as f64;
                window.episodes += 1;
                *slot = new_slot(&mut rng);
            } else {
                slot.state = tr.next_state;
            }
        }

        if buffer.len() >= cfg.batch_size {
            let batch = buffer.sample(cfg.batch_size, &mut rng);
            let mut q_out = q_loss(&batch, &theta, &phi, shaping, &severe, cfg.gamma)?;
            clip(&mut q_out.grads, cfg.max_grad_norm);
            opt_q.step(&mut theta, &q_out.grads);
            let mut clf_out = classifier_loss(&batch, &theta)?;
            clip(&mut clf_out.grads, cfg.max_grad_norm);
            opt_clf.step(&mut theta, &clf_out.grads);
            phi = soft_update(&theta, &phi, cfg.rho)?;
            window.q_loss += q_out.loss;
            window.clf_loss += clf_out.loss;
            window.updates += 1;
        }

        if (it + 1) % cfg.log_every == 0 || it + 1 == cfg.total_steps {
            let avg = |sum: f64, n: usize| if n == 0 { f64::NAN } else { sum / n as f64 };
            log.push(TrainLogRow {
                step: it + 1,
                q_loss: avg(window.q_loss, window.updates),
                clf_loss: avg(window.clf_loss, window.updates),
                epsilon,
                mean_episode_return: avg(window.returns, window.episodes),
                mean_il: avg(window.lengths, window.episodes),
            });
            window = Window::default();
        }
    }

    Ok(TrainOutcome {
        params: theta,
        target: phi,
        log,
        rng,
        steps: cfg.total_steps,
    })
}

pub fn write_train_log(rows: &[TrainLogRow], path: impl AsRef<Path>) -> Result<(), AgentError> {
    let path = path.as_ref();
    let io = |source| AgentError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::from("step,q_loss,clf_loss,epsilon,mean_episode_return,mean_IL\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.step, r.q_loss, r.clf_loss, r.epsilon, r.mean_episode_return, r.mean_il
        ));
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(out.as_bytes()).map_err(io)
}

/// Everything needed to reload a trained agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: NetworkParams,
    pub target: NetworkParams,
    pub env: EnvConfig,
    pub shaping: ShapingConfig,
    pub train: TrainConfig,
    pub rng: ChaCha8Rng,
    pub step: usize,
}

impl Checkpoint {
    pub fn from_outcome(outcome: &TrainOutcome, env: &EnvConfig, shaping: &ShapingConfig, train: &TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            params: outcome.params.clone(),
            target: outcome.target.clone(),
            env: env.clone(),
            shaping: shaping.clone(),
            train: train.clone(),
            rng: outcome.rng.clone(),
            step: outcome.steps,
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), AgentError> {
    let path = path.as_ref();
    let text = serde_json::to_string(ckpt).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| AgentError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, AgentError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| AgentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(AgentError::Checkpoint(format!("unsupported version {}", ckpt.version)));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_kb, sample_patients, GeneratorConfig};

    fn setup() -> (KnowledgeBase, Vec<PatientRecord>) {
        let kb = generate_kb(&GeneratorConfig::default()).unwrap();
        let patients = sample_patients(&kb, 50, 3).unwrap();
        (kb, patients)
    }

    fn small_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            total_steps: steps,
            batch_size: 16,
            env_count: 4,
            replay_capacity: 500,
            log_every: 10,
            arch: ArchConfig { encoder: vec![16], head: vec![8] },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (kb, patients) = setup();
        let cfg = small_cfg(0);
        let out = train(&kb, &patients, &EnvConfig::default(), &ShapingConfig::default(), &cfg).unwrap();
        let layout = build_layout(&kb);
        let init = NetworkParams::init(layout.total, layout.num_actions(), kb.num_pathologies(), &cfg.arch, cfg.seed).unwrap();
        assert_eq!(out.params, init);
        assert!(out.log.is_empty());
    }

    #[test]
    fn same_seed_same_checksum() {
        let (kb, patients) = setup();
        let env = EnvConfig { horizon: 10, ..EnvConfig::default() };
        let cfg = small_cfg(60);
        let a = train(&kb, &patients, &env, &ShapingConfig::default(), &cfg).unwrap();
        let b = train(&kb, &patients, &env, &ShapingConfig::default(), &cfg).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum());
        assert_eq!(a.log.len(), 6);
        let c = train(&kb, &patients, &env, &ShapingConfig::default(), &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.params.checksum(), c.params.checksum());
    }

    #[test]
    fn never_repeats_an_inquiry() {
        let (kb, patients) = setup();
        let env = EnvConfig { horizon: 10, ..EnvConfig::default() };
        let layout = build_layout(&kb);
        let mut ok = true;
        let mut seen = 0;
        train_with_observer(&kb, &patients, &env, &ShapingConfig::default(), &small_cfg(80), &mut |e| {
            seen += 1;
            if e.action < layout.num_evidences() {
                let slot = layout.offsets[e.action];
                // an inquired evidence always has a non-zero first slot
                ok &= e.state[slot] == 0.0;
            }
        })
        .unwrap();
        assert!(ok);
        assert_eq!(seen, 80 * 4);
    }

    #[test]
    fn rejects_bad_configs() {
        let (kb, patients) = setup();
        let env = EnvConfig::default();
        let sh = ShapingConfig::default();
        for cfg in [
            TrainConfig { rho: 0.0, ..small_cfg(1) },
            TrainConfig { rho: 1.5, ..small_cfg(1) },
            TrainConfig { epsilon_start: 1.2, ..small_cfg(1) },
            TrainConfig { batch_size: 0, ..small_cfg(1) },
        ] {
            assert!(matches!(train(&kb, &patients, &env, &sh, &cfg), Err(AgentError::Config(_))));
        }
        assert!(matches!(train(&kb, &[], &env, &sh, &small_cfg(1)), Err(AgentError::Config(_))));
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let cfg = TrainConfig { total_steps: 100, ..TrainConfig::default() };
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert!((cfg.epsilon_at(25) - 0.525).abs() < 1e-12);
        assert_eq!(cfg.epsilon_at(50), 0.05);
        assert_eq!(cfg.epsilon_at(99), 0.05);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (kb, patients) = setup();
        let env = EnvConfig { horizon: 10, ..EnvConfig::default() };
        let cfg = small_cfg(20);
        let out = train(&kb, &patients, &env, &ShapingConfig::default(), &cfg).unwrap();
        let ck = Checkpoint::from_outcome(&out, &env, &ShapingConfig::default(), &cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, out.params);
        assert_eq!(back.rng, out.rng);
    }
}
