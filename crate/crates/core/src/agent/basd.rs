//! State simulator for the supervised baseline: a random partial dialogue
//! built from a patient's record, with the next-question and diagnosis labels.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{encode_answer, reset, DialogueState, EncodingLayout};
use crate::knowledge::{KnowledgeBase, PatientRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasdTarget {
    Stop,
    Ask(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasdSample {
    pub state: DialogueState,
    /// Number of positive evidences set (the chief complaint included).
    pub positives: usize,
    pub negatives: usize,
    pub policy_target: BasdTarget,
    pub classifier_target: usize,
}

/// Sets `p` experienced evidences (always including the chief complaint) and
/// `q < T - p` non-experienced ones. The policy target is to stop once every
/// experienced evidence is set, and otherwise one that is still missing.
pub fn basd_simulate_state<R: Rng>(
    patient: &PatientRecord,
    kb: &KnowledgeBase,
    layout: &EncodingLayout,
    horizon: usize,
    rng: &mut R,
) -> BasdSample {
    let experienced: Vec<usize> = patient.experienced().into_iter().collect();
    let n = experienced.len();
    assert!(n >= 1, "patient has no experienced evidence");
    let p = rng.gen_range(1..=n);
    let mut others: Vec<usize> = experienced
        .iter()
        .copied()
        .filter(|&e| e != patient.chief_complaint)
        .collect();
    others.shuffle(rng);
    let (chosen, rest) = others.split_at(p - 1);

    let mut absent: Vec<usize> = (0..kb.num_evidences())
        .filter(|e| !patient.assignment[*e].is_experienced())
        .collect();
    absent.shuffle(rng);
    let q = if horizon > p { rng.gen_range(0..horizon - p) } else { 0 }.min(absent.len());

    let mut state = reset(patient, layout, kb);
    for &e in chosen.iter().chain(&absent[..q]) {
        state = encode_answer(&state, e, patient.answer(e), layout, kb).expect("distinct evidences");
    }
    state.turn = (p + q).min(horizon);

    let policy_target = if rest.is_empty() {
        BasdTarget::Stop
    } else {
        BasdTarget::Ask(rest[rng.gen_range(0..rest.len())])
    };
    BasdSample {
        state,
        positives: p,
        negatives: q,
        policy_target,
        classifier_target: patient.gt_pathology,
    }
}
