//! The finite-horizon evidence-acquisition MDP.
//!
//! Actions `0..E` inquire about the evidence with that id; action `E` exits.
//! A state vector holds the demographic block (`age / 100`, then a one-hot
//! `[male, female]` pair) followed by one slot block per evidence. Slots of
//! evidences not yet inquired are exactly zero.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{EvidenceKind, EvidenceValue, KnowledgeBase, PatientRecord, Sex};

/// Width of the demographic block.
pub const DEMOGRAPHIC_WIDTH: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("evidence {0} was already inquired")]
    AlreadyInquired(usize),
    #[error("invalid action {action}: {reason}")]
    InvalidAction { action: usize, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Maximum number of turns `T`.
    pub horizon: usize,
    pub inquiry_cost: f64,
    pub retrieval_reward: f64,
    pub missing_penalty: f64,
    pub gamma: f64,
    /// Also charge the inquiry cost for evidences the patient does not have.
    pub charge_cost_on_negative: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            inquiry_cost: 0.5,
            retrieval_reward: 2.0,
            missing_penalty: 0.0,
            gamma: 0.99,
            charge_cost_on_negative: false,
        }
    }
}

/// Offsets of every evidence's slots in the state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodingLayout {
    pub demographic_width: usize,
    pub widths: Vec<usize>,
    pub offsets: Vec<usize>,
    pub total: usize,
}

impl EncodingLayout {
    pub fn num_evidences(&self) -> usize {
        self.widths.len()
    }

    /// Id of the exit action.
    pub fn exit_action(&self) -> usize {
        self.widths.len()
    }

    pub fn num_actions(&self) -> usize {
        self.widths.len() + 1
    }
}

pub fn build_layout(kb: &KnowledgeBase) -> EncodingLayout {
    let widths: Vec<usize> = kb.evidences().iter().map(|e| e.kind.encoding_width()).collect();
    let mut offsets = Vec::with_capacity(widths.len());
    let mut cursor = DEMOGRAPHIC_WIDTH;
    for &w in &widths {
        offsets.push(cursor);
        cursor += w;
    }
    EncodingLayout {
        demographic_width: DEMOGRAPHIC_WIDTH,
        widths,
        offsets,
        total: cursor,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueState {
    pub vector: Vec<f64>,
    /// `inquired[e]` is set once evidence `e` has been answered.
    pub inquired: Vec<bool>,
    pub turn: usize,
    pub terminal: bool,
}

impl DialogueState {
    pub fn inquired_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.inquired.iter().enumerate().filter(|(_, &b)| b).map(|(e, _)| e)
    }

    pub fn is_inquired(&self, evidence: usize) -> bool {
        self.inquired[evidence]
    }
}

/// Source of answers to evidence questions.
pub trait Respondent {
    fn respond(&self, evidence: usize) -> EvidenceValue;
}

impl Respondent for PatientRecord {
    fn respond(&self, evidence: usize) -> EvidenceValue {
        self.assignment[evidence].clone()
    }
}

impl Respondent for HashMap<usize, EvidenceValue> {
    fn respond(&self, evidence: usize) -> EvidenceValue {
        self[&evidence].clone()
    }
}

/// Writes the answer's slots into `vector`.
fn write_slots(vector: &mut [f64], offset: usize, kind: &EvidenceKind, value: &EvidenceValue) {
    match (kind, value) {
        (EvidenceKind::Binary, EvidenceValue::Binary(b)) => {
            vector[offset] = if *b { 1.0 } else { -1.0 };
        }
        (EvidenceKind::NumericCategorical { max_value }, EvidenceValue::Numeric(v)) => {
            vector[offset] = (*v as f64 + 1.0) / (*max_value as f64 + 1.0);
        }
        (EvidenceKind::SymbolicCategorical { options }, EvidenceValue::Symbolic(i)) => {
            for j in 0..options.len() {
                vector[offset + j] = if j == *i { 1.0 } else { -1.0 };
            }
        }
        (EvidenceKind::MultiChoice { options }, EvidenceValue::Multi(set)) => {
            for j in 0..options.len() {
                vector[offset + j] = if set.contains(&j) { 1.0 } else { -1.0 };
            }
        }
        (kind, value) => panic!("answer {value:?} does not fit evidence kind {kind:?}"),
    }
}

/// Encodes one answer and marks the evidence inquired.
pub fn encode_answer(
    state: &DialogueState,
    evidence: usize,
    value: &EvidenceValue,
    layout: &EncodingLayout,
    kb: &KnowledgeBase,
) -> Result<DialogueState, EnvError> {
    if state.inquired[evidence] {
        return Err(EnvError::AlreadyInquired(evidence));
    }
    let mut next = state.clone();
    write_slots(
        &mut next.vector,
        layout.offsets[evidence],
        &kb.evidence(evidence).kind,
        value,
    );
    next.inquired[evidence] = true;
    Ok(next)
}

/// Demographic slots: `[age / 100, male, female]`.
pub fn encode_demographics(age: u32, sex: Sex) -> [f64; DEMOGRAPHIC_WIDTH] {
    let age = age as f64 / 100.0;
    match sex {
        Sex::M => [age, 1.0, 0.0],
        Sex::F => [age, 0.0, 1.0],
    }
}

/// Fresh state for a patient: demographics and the chief complaint filled in.
pub fn reset_with(
    age: u32,
    sex: Sex,
    chief_complaint: usize,
    answer: &EvidenceValue,
    layout: &EncodingLayout,
    kb: &KnowledgeBase,
) -> DialogueState {
    let mut vector = vec![0.0; layout.total];
    vector[..DEMOGRAPHIC_WIDTH].copy_from_slice(&encode_demographics(age, sex));
    let blank = DialogueState {
        vector,
        inquired: vec![false; layout.num_evidences()],
        turn: 0,
        terminal: false,
    };
    encode_answer(&blank, chief_complaint, answer, layout, kb).expect("fresh state")
}

pub fn reset(patient: &PatientRecord, layout: &EncodingLayout, kb: &KnowledgeBase) -> DialogueState {
    reset_with(
        patient.age,
        patient.sex,
        patient.chief_complaint,
        patient.answer(patient.chief_complaint),
        layout,
        kb,
    )
}

/// Available actions: un-inquired evidences plus exit; empty once terminal.
pub fn valid_actions(state: &DialogueState, num_evidences: usize) -> Vec<usize> {
    if state.terminal {
        return Vec::new();
    }
    let mut actions: Vec<usize> = (0..num_evidences).filter(|&e| !state.inquired[e]).collect();
    actions.push(num_evidences);
    actions
}

/// Validity mask over all `E + 1` actions.
pub fn action_mask(state: &DialogueState) -> Vec<bool> {
    let mut mask: Vec<bool> = state.inquired.iter().map(|&b| !b && !state.terminal).collect();
    mask.push(!state.terminal);
    mask
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: DialogueState,
    pub action: usize,
    pub base_reward: f64,
    pub next_state: DialogueState,
    pub terminal: bool,
    /// The patient's answer for acquisition actions.
    pub answer: Option<EvidenceValue>,
}

impl Transition {
    pub fn is_exit(&self) -> bool {
        self.answer.is_none()
    }
}

pub fn base_reward(experienced: bool, cfg: &EnvConfig) -> f64 {
    if experienced {
        cfg.retrieval_reward - cfg.inquiry_cost
    } else if cfg.charge_cost_on_negative {
        cfg.missing_penalty - cfg.inquiry_cost
    } else {
        cfg.missing_penalty
    }
}

/// One deterministic MDP step.
///
/// The exit action, or an acquisition taken at turn `T - 1`, leads to a terminal
/// state. On a timeout the last answer is still written into the terminal
/// state's vector, but nothing downstream observes it.
pub fn step(
    state: &DialogueState,
    action: usize,
    respondent: &dyn Respondent,
    cfg: &EnvConfig,
    layout: &EncodingLayout,
    kb: &KnowledgeBase,
) -> Result<Transition, EnvError> {
    if state.terminal {
        return Err(EnvError::InvalidAction {
            action,
            reason: "episode already terminated",
        });
    }
    let exit = layout.exit_action();
    if action > exit {
        return Err(EnvError::InvalidAction {
            action,
            reason: "no such action",
        });
    }
    if action == exit {
        let mut next_state = state.clone();
        next_state.terminal = true;
        return Ok(Transition {
            state: state.clone(),
            action,
            base_reward: 0.0,
            next_state,
            terminal: true,
            answer: None,
        });
    }
    if state.inquired[action] {
        return Err(EnvError::InvalidAction {
            action,
            reason: "evidence already inquired",
        });
    }
    let answer = respondent.respond(action);
    let mut next_state = encode_answer(state, action, &answer, layout, kb)?;
    next_state.turn = state.turn + 1;
    next_state.terminal = next_state.turn >= cfg.horizon;
    Ok(Transition {
        state: state.clone(),
        action,
        base_reward: base_reward(answer.is_experienced(), cfg),
        terminal: next_state.terminal,
        next_state,
        answer: Some(answer),
    })
}
