//! Training-free Bayesian experimental design.
//!
//! The agent keeps the exact naive-Bayes posterior over pathologies given the
//! answers seen so far and asks the evidence with the largest expected
//! information gain, stopping once no evidence is worth at least the
//! threshold. A multi-choice evidence is scored by its most informative
//! option, and asking it reveals every option at once.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::environment::{build_layout, DialogueState, EnvConfig, Respondent};
use crate::knowledge::{EvidenceKind, EvidenceValue, KnowledgeBase, KnowledgeError, PatientRecord};
use crate::rollout::{run_episode, Decision, EpisodeContext, Policy, RolloutError, Trajectory};
use crate::shaping::{kl_divergence, Belief};

/// Default stopping threshold on the best utility.
pub const DEFAULT_BED_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum BedError {
    #[error("every pathology is excluded by the observed evidences")]
    ZeroLikelihood,
    #[error("evidence {0} is already observed")]
    AlreadyObserved(usize),
    #[error("evidence {evidence} is not {expected}")]
    WrongKind { evidence: usize, expected: &'static str },
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

/// Observed answers, keyed by evidence id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceLedger {
    observed: BTreeMap<usize, EvidenceValue>,
}

impl EvidenceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, kb: &KnowledgeBase, evidence: usize, value: EvidenceValue) -> Result<(), BedError> {
        if self.observed.contains_key(&evidence) {
            return Err(BedError::AlreadyObserved(evidence));
        }
        kb.check_value(evidence, &value)?;
        self.observed.insert(evidence, value);
        Ok(())
    }

    pub fn is_observed(&self, evidence: usize) -> bool {
        self.observed.contains_key(&evidence)
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &EvidenceValue)> {
        self.observed.iter().map(|(&e, v)| (e, v))
    }

    /// Observed evidences the patient experiences.
    pub fn positives(&self) -> impl Iterator<Item = (usize, &EvidenceValue)> {
        self.iter().filter(|(_, v)| v.is_experienced())
    }

    pub fn negatives(&self) -> impl Iterator<Item = (usize, &EvidenceValue)> {
        self.iter().filter(|(_, v)| !v.is_experienced())
    }

    /// Ledger of a dialogue state's inquired evidences, answered by `respondent`.
    pub fn from_state(state: &DialogueState, respondent: &dyn Respondent) -> Self {
        Self {
            observed: state.inquired_ids().map(|e| (e, respondent.respond(e))).collect(),
        }
    }
}

/// `p(d | observed) ∝ prior(d) · Π p(value | d)`.
pub fn posterior(kb: &KnowledgeBase, ledger: &EvidenceLedger) -> Result<Belief, BedError> {
    let mut weights = kb.prior().to_vec();
    for (e, value) in ledger.iter() {
        for (d, w) in weights.iter_mut().enumerate() {
            *w *= kb.likelihood(d, e, value);
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return Err(BedError::ZeroLikelihood);
        }
        weights.iter_mut().for_each(|w| *w /= max);
    }
    Belief::from_weights(weights).ok_or(BedError::ZeroLikelihood)
}

/// The value domain of a single-valued evidence, in table order.
fn domain(kind: &EvidenceKind) -> Option<Vec<EvidenceValue>> {
    match kind {
        EvidenceKind::Binary => Some(vec![EvidenceValue::Binary(false), EvidenceValue::Binary(true)]),
        EvidenceKind::NumericCategorical { max_value } => {
            Some((0..=*max_value).map(EvidenceValue::Numeric).collect())
        }
        EvidenceKind::SymbolicCategorical { options } => {
            Some((0..options.len()).map(EvidenceValue::Symbolic).collect())
        }
        EvidenceKind::MultiChoice { .. } => None,
    }
}

fn unobserved(ledger: &EvidenceLedger, evidence: usize) -> Result<(), BedError> {
    if ledger.is_observed(evidence) {
        Err(BedError::AlreadyObserved(evidence))
    } else {
        Ok(())
    }
}

/// `p(e = v | observed)` over the value domain of `e` (binary, numeric or
/// symbolic); for multi-choice evidences, the per-option probabilities of
/// being present.
pub fn predictive(kb: &KnowledgeBase, ledger: &EvidenceLedger, evidence: usize) -> Result<Vec<f64>, BedError> {
    unobserved(ledger, evidence)?;
    let post = posterior(kb, ledger)?;
    let kind = &kb.evidence(evidence).kind;
    let mix = |lik: &dyn Fn(usize) -> f64| -> f64 { post.probs().iter().enumerate().map(|(d, &p)| p * lik(d)).sum() };
    Ok(match domain(kind) {
        Some(values) => values
            .iter()
            .map(|v| mix(&|d| kb.likelihood(d, evidence, v)))
            .collect(),
        None => (0..kind.encoding_width())
            .map(|o| mix(&|d| kb.option_probability(d, evidence, o)))
            .collect(),
    })
}

/// `Σ_v p(v) · KL(post_v ‖ post)` where `likelihoods[v][d] = p(v | d)`.
///
/// Outcomes whose likelihood is constant over the posterior's support leave
/// the posterior unchanged and contribute exactly zero.
fn expected_information_gain(post: &[f64], likelihoods: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for row in likelihoods {
        let pv: f64 = post.iter().zip(row).map(|(p, l)| p * l).sum();
        if pv <= 0.0 {
            continue;
        }
        let mut support = post.iter().zip(row).filter(|(p, _)| **p > 0.0).map(|(_, l)| *l);
        let first = support.next();
        if support.all(|l| Some(l) == first) {
            continue;
        }
        let updated: Vec<f64> = post.iter().zip(row).map(|(p, l)| p * l / pv).collect();
        total += pv * kl_divergence(&updated, post);
    }
    total
}

fn table_rows(kb: &KnowledgeBase, evidence: usize, values: &[EvidenceValue]) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|v| (0..kb.num_pathologies()).map(|d| kb.likelihood(d, evidence, v)).collect())
        .collect()
}

pub fn utility_binary(kb: &KnowledgeBase, ledger: &EvidenceLedger, evidence: usize) -> Result<f64, BedError> {
    if kb.evidence(evidence).kind != EvidenceKind::Binary {
        return Err(BedError::WrongKind { evidence, expected: "binary" });
    }
    utility_over_domain(kb, ledger, evidence)
}

/// Expected gain over every option of a numeric or symbolic evidence.
pub fn utility_categorical(kb: &KnowledgeBase, ledger: &EvidenceLedger, evidence: usize) -> Result<f64, BedError> {
    match kb.evidence(evidence).kind {
        EvidenceKind::NumericCategorical { .. } | EvidenceKind::SymbolicCategorical { .. } => {
            utility_over_domain(kb, ledger, evidence)
        }
        _ => Err(BedError::WrongKind { evidence, expected: "categorical" }),
    }
}

fn utility_over_domain(kb: &KnowledgeBase, ledger: &EvidenceLedger, evidence: usize) -> Result<f64, BedError> {
    unobserved(ledger, evidence)?;
    let post = posterior(kb, ledger)?;
    let values = domain(&kb.evidence(evidence).kind).expect("single-valued evidence");
    Ok(expected_information_gain(post.probs(), &table_rows(kb, evidence, &values)))
}

/// Gain of observing one option of a multi-choice evidence as a binary answer.
pub fn utility_option(
    kb: &KnowledgeBase,
    ledger: &EvidenceLedger,
    evidence: usize,
    option: usize,
) -> Result<f64, BedError> {
    if !kb.evidence(evidence).kind.is_multi_choice() {
        return Err(BedError::WrongKind { evidence, expected: "multi-choice" });
    }
    unobserved(ledger, evidence)?;
    let post = posterior(kb, ledger)?;
    Ok(option_gain(kb, post.probs(), evidence, option))
}

fn option_gain(kb: &KnowledgeBase, post: &[f64], evidence: usize, option: usize) -> f64 {
    let present: Vec<f64> = (0..kb.num_pathologies())
        .map(|d| kb.option_probability(d, evidence, option))
        .collect();
    let absent = present.iter().map(|p| 1.0 - p).collect();
    expected_information_gain(post, &[absent, present])
}

/// Largest per-option binary gain.
pub fn utility_multichoice(kb: &KnowledgeBase, ledger: &EvidenceLedger, evidence: usize) -> Result<f64, BedError> {
    let kind = &kb.evidence(evidence).kind;
    if !kind.is_multi_choice() {
        return Err(BedError::WrongKind { evidence, expected: "multi-choice" });
    }
    unobserved(ledger, evidence)?;
    let post = posterior(kb, ledger)?;
    Ok((0..kind.encoding_width())
        .map(|o| option_gain(kb, post.probs(), evidence, o))
        .fold(0.0, f64::max))
}

/// Utility of any unobserved evidence.
pub fn utility(kb: &KnowledgeBase, ledger: &EvidenceLedger, evidence: usize) -> Result<f64, BedError> {
    match kb.evidence(evidence).kind {
        EvidenceKind::Binary => utility_binary(kb, ledger, evidence),
        EvidenceKind::MultiChoice { .. } => utility_multichoice(kb, ledger, evidence),
        _ => utility_categorical(kb, ledger, evidence),
    }
}

/// Best unobserved evidence and its utility; ties go to the lower id.
pub fn best_evidence(
    kb: &KnowledgeBase,
    ledger: &EvidenceLedger,
    candidates: impl IntoIterator<Item = usize>,
) -> Result<Option<(usize, f64)>, BedError> {
    let mut best: Option<(usize, f64)> = None;
    for e in candidates {
        let u = utility(kb, ledger, e)?;
        if best.is_none_or(|(be, b)| u > b || (u == b && e < be)) {
            best = Some((e, u));
        }
    }
    Ok(best)
}

/// The designer as a [`Policy`]; its ledger is rebuilt from the state.
#[derive(Debug, Clone, Copy)]
pub struct BedPolicy<'a> {
    pub kb: &'a KnowledgeBase,
    pub threshold: f64,
}

impl<'a> BedPolicy<'a> {
    pub fn new(kb: &'a KnowledgeBase, threshold: f64) -> Result<Self, BedError> {
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(BedError::Threshold(threshold));
        }
        Ok(Self { kb, threshold })
    }
}

impl Policy for BedPolicy<'_> {
    fn decide(
        &mut self,
        state: &DialogueState,
        valid: &[usize],
        respondent: &dyn Respondent,
    ) -> Result<Decision, RolloutError> {
        let err = |e: BedError| RolloutError::Policy(e.to_string());
        let exit = self.kb.num_evidences();
        let ledger = EvidenceLedger::from_state(state, respondent);
        let belief = posterior(self.kb, &ledger).map_err(err)?;
        let candidates = valid.iter().copied().filter(|&a| a < exit);
        let action = match best_evidence(self.kb, &ledger, candidates).map_err(err)? {
            Some((e, u)) if u >= self.threshold => e,
            _ => exit,
        };
        Ok(Decision { belief, action })
    }
}

/// Runs the designer on one patient for at most `horizon` inquiries.
pub fn bed_run(
    kb: &KnowledgeBase,
    patient: &PatientRecord,
    threshold: f64,
    horizon: usize,
) -> Result<Trajectory, RolloutError> {
    let mut policy = BedPolicy::new(kb, threshold).map_err(|e| RolloutError::Policy(e.to_string()))?;
    let layout = build_layout(kb);
    let env = EnvConfig { horizon, ..EnvConfig::default() };
    let ctx = EpisodeContext {
        kb,
        layout: &layout,
        env: &env,
        shaping: None,
    };
    run_episode(&mut policy, patient, &ctx)
}
