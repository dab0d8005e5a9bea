//! Running a policy against a patient and recording the dialogue.
//!
//! Every agent (the learned one, the random baseline and the Bayesian
//! designer) produces the same [`Trajectory`], so evaluation treats them
//! uniformly. Each turn stores the belief the policy held in the state it
//! acted from; the last turn's belief is the predicted differential.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{reset, step, valid_actions, DialogueState, EncodingLayout, EnvConfig, EnvError, Respondent};
use crate::knowledge::{EvidenceKind, EvidenceValue, KnowledgeBase, PatientRecord};
use crate::shaping::{Belief, ShapingComponents, ShapingConfig};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("policy failed: {0}")]
    Policy(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trajectory: {0}")]
    Json(#[from] serde_json::Error),
}

/// What a policy does in one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Belief over pathologies in the current state.
    pub belief: Belief,
    pub action: usize,
}

pub trait Policy {
    fn decide(
        &mut self,
        state: &DialogueState,
        valid: &[usize],
        respondent: &dyn Respondent,
    ) -> Result<Decision, RolloutError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub action_id: usize,
    pub question: String,
    /// Human-readable answer; empty for the exit action.
    pub answer: String,
    pub base_reward: f64,
    pub shaped_components: Option<ShapingComponents>,
    pub belief: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    pub turns: Vec<TurnRecord>,
}

impl Trajectory {
    /// Evidences inquired by the agent, in order (the chief complaint excluded).
    pub fn inquired(&self, num_evidences: usize) -> Vec<usize> {
        self.turns
            .iter()
            .map(|t| t.action_id)
            .filter(|&a| a < num_evidences)
            .collect()
    }

    pub fn final_belief(&self) -> Option<&[f64]> {
        self.turns.last().map(|t| t.belief.as_slice())
    }

    pub fn beliefs(&self) -> impl Iterator<Item = &[f64]> {
        self.turns.iter().map(|t| t.belief.as_slice())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RolloutError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|source| RolloutError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RolloutError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RolloutError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Renders an answer the way a transcript would show it.
pub fn format_answer(kb: &KnowledgeBase, evidence: usize, value: &EvidenceValue) -> String {
    match (&kb.evidence(evidence).kind, value) {
        (_, EvidenceValue::Binary(b)) => if *b { "Y" } else { "N" }.to_string(),
        (_, EvidenceValue::Numeric(v)) => v.to_string(),
        (EvidenceKind::SymbolicCategorical { options }, EvidenceValue::Symbolic(i)) => options[*i].clone(),
        (EvidenceKind::MultiChoice { options }, EvidenceValue::Multi(set)) => {
            if set.is_empty() {
                "none".to_string()
            } else {
                set.iter().map(|&i| options[i].as_str()).collect::<Vec<_>>().join(", ")
            }
        }
        (_, other) => format!("{other:?}"),
    }
}

pub fn question_text(kb: &KnowledgeBase, action: usize) -> String {
    if action < kb.num_evidences() {
        kb.evidence(action).question.clone()
    } else {
        "<exit>".to_string()
    }
}

/// Everything an episode needs besides the policy and the patient.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeContext<'a> {
    pub kb: &'a KnowledgeBase,
    pub layout: &'a EncodingLayout,
    pub env: &'a EnvConfig,
    /// When set, each turn also records its unweighted shaping components.
    pub shaping: Option<&'a ShapingConfig>,
}

/// Plays one episode to termination.
pub fn run_episode(
    policy: &mut dyn Policy,
    patient: &PatientRecord,
    ctx: &EpisodeContext<'_>,
) -> Result<Trajectory, RolloutError> {
    let kb = ctx.kb;
    let num_evidences = kb.num_evidences();
    let severe = kb.severe_set();
    let mut state = reset(patient, ctx.layout, kb);
    let mut turns: Vec<TurnRecord> = Vec::new();
    loop {
        let valid = valid_actions(&state, num_evidences);
        let decision = policy.decide(&state, &valid, patient)?;
        if let (Some(cfg), Some(prev)) = (ctx.shaping, turns.last_mut()) {
            prev.shaped_components = Some(ShapingComponents::evaluate(
                cfg,
                prev.turn,
                &prev.belief,
                Some(decision.belief.probs()),
                &patient.gt_differential,
                &severe,
            ));
        }
        let tr = step(&state, decision.action, patient, ctx.env, ctx.layout, kb)?;
        let answer = tr
            .answer
            .as_ref()
            .map(|v| format_answer(kb, decision.action, v))
            .unwrap_or_default();
        let belief = decision.belief.into_inner();
        let shaped_components = match (ctx.shaping, tr.terminal) {
            (Some(cfg), true) => Some(ShapingComponents::evaluate(
                cfg,
                state.turn,
                &belief,
                None,
                &patient.gt_differential,
                &severe,
            )),
            _ => None,
        };
        turns.push(TurnRecord {
            turn: state.turn,
            action_id: decision.action,
            question: question_text(kb, decision.action),
            answer,
            base_reward: tr.base_reward,
            shaped_components,
            belief,
        });
        if tr.terminal {
            return Ok(Trajectory { turns });
        }
        state = tr.next_state;
    }
}

/// Runs one episode per patient in parallel; `make_policy(i)` builds the
/// policy for patient `i`. Output order follows the input.
pub fn run_episodes<P, F>(
    patients: &[PatientRecord],
    ctx: &EpisodeContext<'_>,
    make_policy: F,
) -> Result<Vec<Trajectory>, RolloutError>
where
    P: Policy,
    F: Fn(usize) -> P + Sync,
{
    patients
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut policy = make_policy(i);
            run_episode(&mut policy, p, ctx)
        })
        .collect()
}
