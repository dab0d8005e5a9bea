//! Synthetic knowledge bases and patients.
//!
//! Knowledge bases follow a naive-Bayes layout: each pathology is linked to a few
//! informative evidences whose conditional distribution departs strongly from a
//! shared low-prevalence baseline; every other (pathology, evidence) pair uses that
//! baseline. Patients are sampled from the same model, and their ground-truth
//! differential is the exact posterior given every answer.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{
    Conditional, EvidenceKind, EvidenceSpec, EvidenceValue, KnowledgeBase, KnowledgeError,
    PathologySpec, PatientRecord, Sex,
};
use crate::seed::{derive_seed, rng_for};
use crate::shaping::Belief;

const MAX_KB_ATTEMPTS: u64 = 64;
const MAX_PATIENT_ATTEMPTS: usize = 1000;
const MIN_INFORMATIVE_TV: f64 = 0.2;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("sampled patient experiences no evidence after {0} attempts")]
    Degenerate(usize),
    #[error("every pathology has zero likelihood for this assignment")]
    ZeroLikelihood,
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

/// Fractions of the four evidence kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindMix {
    pub binary: f64,
    pub numeric: f64,
    pub categorical: f64,
    pub multi_choice: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        Self {
            binary: 0.5,
            numeric: 0.15,
            categorical: 0.15,
            multi_choice: 0.2,
        }
    }
}

impl KindMix {
    fn as_array(&self) -> [f64; 4] {
        [self.binary, self.numeric, self.categorical, self.multi_choice]
    }

    /// Largest-remainder apportionment of `total` evidences over the four kinds.
    pub fn counts(&self, total: usize) -> [usize; 4] {
        let fractions = self.as_array();
        let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
        let mut counts: [usize; 4] = [0; 4];
        for (c, x) in counts.iter_mut().zip(&exact) {
            *c = x.floor() as usize;
        }
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let mut missing = total - counts.iter().sum::<usize>();
        for k in order.into_iter().cycle() {
            if missing == 0 {
                break;
            }
            counts[k] += 1;
            missing -= 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_pathologies: usize,
    pub num_evidences: usize,
    pub kind_mix: KindMix,
    pub severe_fraction: f64,
    /// Informative evidences per pathology, capped at `num_evidences`.
    pub links_per_pathology: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_pathologies: 6,
            num_evidences: 12,
            kind_mix: KindMix::default(),
            severe_fraction: 0.3,
            links_per_pathology: 2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::Config(m.to_string()));
        if self.num_pathologies < 2 {
            return bad("at least 2 pathologies are required");
        }
        if self.num_evidences < 2 {
            return bad("at least 2 evidences are required");
        }
        let mix = self.kind_mix.as_array();
        if mix.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return bad("kind_mix fractions must be non-negative");
        }
        if (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("kind_mix must sum to 1");
        }
        if !(0.0..=1.0).contains(&self.severe_fraction) {
            return bad("severe_fraction must lie in [0, 1]");
        }
        if self.links_per_pathology == 0 {
            return bad("links_per_pathology must be positive");
        }
        Ok(())
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Baseline (unlinked) and linked conditional for one evidence kind.
fn baseline_table(kind: &EvidenceKind, rng: &mut ChaCha8Rng) -> Conditional {
    match kind {
        EvidenceKind::Binary => {
            let p = rng.gen_range(0.02..0.1);
            Conditional::Table(vec![1.0 - p, p])
        }
        EvidenceKind::NumericCategorical { .. } | EvidenceKind::SymbolicCategorical { .. } => {
            let n = kind.table_len();
            let present = rng.gen_range(0.02..0.1);
            let mut t = vec![present / (n - 1) as f64; n];
            t[0] = 1.0 - present;
            Conditional::Table(normalized(t))
        }
        EvidenceKind::MultiChoice { options } => Conditional::Bernoulli(
            (0..options.len()).map(|_| rng.gen_range(0.02..0.08)).collect(),
        ),
    }
}

fn linked_table(kind: &EvidenceKind, base: &Conditional, rng: &mut ChaCha8Rng) -> Conditional {
    match (kind, base) {
        (EvidenceKind::Binary, _) => {
            let p = rng.gen_range(0.75..0.95);
            Conditional::Table(vec![1.0 - p, p])
        }
        (EvidenceKind::NumericCategorical { max_value }, _) => {
            let m = *max_value as usize;
            let centre = rng.gen_range(1..=m) as f64;
            let absent = rng.gen_range(0.05..0.2);
            let mut t: Vec<f64> = (0..=m)
                .map(|v| if v == 0 { 0.0 } else { (-(v as f64 - centre).abs()).exp() })
                .collect();
            let present: f64 = t.iter().sum();
            t.iter_mut().for_each(|x| *x *= (1.0 - absent) / present);
            t[0] = absent;
            Conditional::Table(normalized(t))
        }
        (EvidenceKind::SymbolicCategorical { options }, _) => {
            let n = options.len();
            let favoured = rng.gen_range(1..n);
            let absent = rng.gen_range(0.05..0.2);
            let rest = 1.0 - absent;
            let mut t = vec![0.0; n];
            t[0] = absent;
            if n == 2 {
                t[1] = rest;
            } else {
                for (i, x) in t.iter_mut().enumerate().skip(1) {
                    *x = if i == favoured {
                        0.85 * rest
                    } else {
                        0.15 * rest / (n - 2) as f64
                    };
                }
            }
            Conditional::Table(normalized(t))
        }
        (EvidenceKind::MultiChoice { options }, Conditional::Bernoulli(b)) => {
            let mut probs = b.clone();
            let hot = if options.len() > 2 { rng.gen_range(1..=2) } else { 1 };
            let mut idx: Vec<usize> = (0..options.len()).collect();
            idx.shuffle(rng);
            for &j in idx.iter().take(hot) {
                probs[j] = rng.gen_range(0.7..0.95);
            }
            Conditional::Bernoulli(probs)
        }
        _ => unreachable!("multi-choice baseline is Bernoulli"),
    }
}

/// Lower bound on the total-variation distance between two conditionals.
fn tv_lower_bound(a: &Conditional, b: &Conditional) -> f64 {
    match (a, b) {
        (Conditional::Table(x), Conditional::Table(y)) => {
            0.5 * x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>()
        }
        // per-option marginals bound the joint distance from below
        (Conditional::Bernoulli(x), Conditional::Bernoulli(y)) => x
            .iter()
            .zip(y)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max),
        _ => 0.0,
    }
}

fn marginal(kb: &KnowledgeBase, e: usize) -> Conditional {
    let prior = kb.prior();
    let mix = |d: usize| match kb.conditional(d, e) {
        Conditional::Table(t) | Conditional::Bernoulli(t) => t.clone(),
    };
    let mut acc = vec![0.0; kb.evidence(e).kind.table_len()];
    for (d, &w) in prior.iter().enumerate() {
        for (a, x) in acc.iter_mut().zip(mix(d)) {
            *a += w * x;
        }
    }
    if kb.evidence(e).kind.is_multi_choice() {
        Conditional::Bernoulli(acc)
    } else {
        Conditional::Table(acc)
    }
}

fn make_evidence(id: usize, kind_index: usize, rng: &mut ChaCha8Rng) -> EvidenceSpec {
    let (kind, name, question) = match kind_index {
        0 => (
            EvidenceKind::Binary,
            format!("symptom_{id:02}"),
            format!("Do you have symptom {id}?"),
        ),
        1 => {
            let max_value = rng.gen_range(4..=10);
            (
                EvidenceKind::NumericCategorical { max_value },
                format!("intensity_{id:02}"),
                format!("On a scale of 0 to {max_value}, how strong is sensation {id}?"),
            )
        }
        2 => {
            let n = rng.gen_range(3..=5);
            let mut options = vec!["none".to_string()];
            options.extend((1..n).map(|k| format!("type_{k}")));
            (
                EvidenceKind::SymbolicCategorical { options },
                format!("character_{id:02}"),
                format!("Which best describes finding {id}?"),
            )
        }
        _ => {
            let n = rng.gen_range(3..=5);
            let options = (1..=n).map(|k| format!("site_{k}")).collect();
            (
                EvidenceKind::MultiChoice { options },
                format!("location_{id:02}"),
                format!("Where do you feel finding {id}?"),
            )
        }
    };
    EvidenceSpec {
        id,
        name,
        kind,
        question,
    }
}

/// Whether `C(n, k) >= needed`.
fn distinct_sets_available(n: usize, k: usize, needed: usize) -> bool {
    let k = k.min(n - k) as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        // C(n, i + 1) from C(n, i); exact at every step
        c = c * (n as u128 - i) / (i + 1);
        if c >= needed as u128 {
            return true;
        }
    }
    c >= needed as u128
}

fn try_generate(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Option<KnowledgeBase>, DatagenError> {
    let d_count = cfg.num_pathologies;
    let e_count = cfg.num_evidences;

    let counts = cfg.kind_mix.counts(e_count);
    let mut kinds: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    kinds.shuffle(rng);
    let evidences: Vec<EvidenceSpec> = kinds
        .iter()
        .enumerate()
        .map(|(id, &k)| make_evidence(id, k, rng))
        .collect();

    let severe_count = if cfg.severe_fraction <= 0.0 {
        0
    } else if cfg.severe_fraction >= 1.0 {
        d_count
    } else {
        ((cfg.severe_fraction * d_count as f64).round() as usize).clamp(1, d_count - 1)
    };
    let mut order: Vec<usize> = (0..d_count).collect();
    order.shuffle(rng);
    let severe_ids: Vec<usize> = order[..severe_count].to_vec();
    let pathologies: Vec<PathologySpec> = (0..d_count)
        .map(|id| PathologySpec {
            id,
            name: format!("pathology_{id:02}"),
            severe: severe_ids.contains(&id),
        })
        .collect();
    let prior = normalized((0..d_count).map(|_| rng.gen_range(0.5..1.5)).collect());

    // least-used evidences first, random among ties
    let links_per = cfg.links_per_pathology.min(e_count);
    let mut usage = vec![0usize; e_count];
    let mut links: Vec<Vec<usize>> = Vec::with_capacity(d_count);
    for _ in 0..d_count {
        let mut candidates: Vec<usize> = (0..e_count).collect();
        candidates.shuffle(rng);
        candidates.sort_by_key(|&e| usage[e]);
        let mut chosen: Vec<usize> = candidates[..links_per].to_vec();
        chosen.sort_unstable();
        for &e in &chosen {
            usage[e] += 1;
        }
        links.push(chosen);
    }
    // distinct link sets where enough exist; linked tables are drawn
    // independently, so a shared set still yields distinct pathologies
    if distinct_sets_available(e_count, links_per, d_count) {
        for i in 0..d_count {
            if links[i + 1..].contains(&links[i]) {
                return Ok(None);
            }
        }
    }

    let baselines: Vec<Conditional> = evidences.iter().map(|e| baseline_table(&e.kind, rng)).collect();
    let conditionals: Vec<Vec<Conditional>> = links
        .iter()
        .map(|linked| {
            evidences
                .iter()
                .enumerate()
                .map(|(e, spec)| {
                    if linked.contains(&e) {
                        linked_table(&spec.kind, &baselines[e], rng)
                    } else {
                        baselines[e].clone()
                    }
                })
                .collect()
        })
        .collect();

    let kb = KnowledgeBase::new(evidences, pathologies, prior, conditionals)?;
    let marginals: Vec<Conditional> = (0..e_count).map(|e| marginal(&kb, e)).collect();
    let informative = links.iter().enumerate().all(|(d, linked)| {
        linked
            .iter()
            .any(|&e| tv_lower_bound(kb.conditional(d, e), &marginals[e]) >= MIN_INFORMATIVE_TV)
    });
    Ok(informative.then_some(kb))
}

/// Generates a knowledge base; deterministic in `cfg`.
pub fn generate_kb(cfg: &GeneratorConfig) -> Result<KnowledgeBase, DatagenError> {
    cfg.validate()?;
    for attempt in 0..MAX_KB_ATTEMPTS {
        let mut rng = rng_for(cfg.seed, attempt);
        if let Some(kb) = try_generate(cfg, &mut rng)? {
            return Ok(kb);
        }
    }
    Err(DatagenError::Config(format!(
        "could not generate an informative knowledge base in {MAX_KB_ATTEMPTS} attempts; \
         try fewer links per pathology or more evidences"
    )))
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the accumulated mass: take the last positive entry
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

fn sample_value(kb: &KnowledgeBase, d: usize, e: usize, rng: &mut ChaCha8Rng) -> EvidenceValue {
    match (&kb.evidence(e).kind, kb.conditional(d, e)) {
        (EvidenceKind::Binary, Conditional::Table(t)) => EvidenceValue::Binary(sample_index(t, rng) == 1),
        (EvidenceKind::NumericCategorical { .. }, Conditional::Table(t)) => {
            EvidenceValue::Numeric(sample_index(t, rng) as u32)
        }
        (EvidenceKind::SymbolicCategorical { .. }, Conditional::Table(t)) => {
            EvidenceValue::Symbolic(sample_index(t, rng))
        }
        (EvidenceKind::MultiChoice { .. }, Conditional::Bernoulli(b)) => EvidenceValue::Multi(
            b.iter()
                .enumerate()
                .filter(|(_, &p)| rng.gen::<f64>() < p)
                .map(|(j, _)| j)
                .collect(),
        ),
        _ => unreachable!("validated knowledge base"),
    }
}

/// Samples one patient; deterministic in `rng_seed`.
pub fn sample_patient(kb: &KnowledgeBase, rng_seed: u64) -> Result<PatientRecord, DatagenError> {
    let mut rng = rng_for(rng_seed, 0);
    for _ in 0..MAX_PATIENT_ATTEMPTS {
        let gt = sample_index(kb.prior(), &mut rng);
        let assignment: Vec<EvidenceValue> = (0..kb.num_evidences())
            .map(|e| sample_value(kb, gt, e, &mut rng))
            .collect();
        let experienced: Vec<usize> = assignment
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_experienced())
            .map(|(e, _)| e)
            .collect();
        if experienced.is_empty() {
            continue;
        }
        let chief_complaint = experienced[rng.gen_range(0..experienced.len())];
        let age = rng.gen_range(1..=90);
        let sex = if rng.gen_bool(0.5) { Sex::M } else { Sex::F };
        let gt_differential = exact_differential(kb, &assignment)?.into_inner();
        return Ok(PatientRecord {
            age,
            sex,
            chief_complaint,
            assignment,
            gt_pathology: gt,
            gt_differential,
        });
    }
    Err(DatagenError::Degenerate(MAX_PATIENT_ATTEMPTS))
}

/// Samples `n` patients with per-index derived seeds (parallel, order-stable).
pub fn sample_patients(kb: &KnowledgeBase, n: usize, seed: u64) -> Result<Vec<PatientRecord>, DatagenError> {
    (0..n)
        .into_par_iter()
        .map(|i| sample_patient(kb, derive_seed(seed, i as u64)))
        .collect()
}

/// `p(d | every evidence value)` by enumeration over pathologies.
///
/// Weights are rescaled by their maximum after every evidence so long
/// assignments do not underflow; the common factor cancels on normalization.
pub fn exact_differential(kb: &KnowledgeBase, assignment: &[EvidenceValue]) -> Result<Belief, DatagenError> {
    assert_eq!(assignment.len(), kb.num_evidences(), "assignment must cover every evidence");
    let mut weights = kb.prior().to_vec();
    for (e, value) in assignment.iter().enumerate() {
        for (d, w) in weights.iter_mut().enumerate() {
            *w *= kb.likelihood(d, e, value);
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return Err(DatagenError::ZeroLikelihood);
        }
        weights.iter_mut().for_each(|w| *w /= max);
    }
    Belief::from_weights(weights).ok_or(DatagenError::ZeroLikelihood)
}
