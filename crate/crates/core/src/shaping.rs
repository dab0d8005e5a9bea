//! Auxiliary reward shaping for the evidence-acquisition MDP.
//!
//! Four components are computed per transition `(s_t, a_t, s_{t+1})` from the
//! classifier beliefs `bel_t`, `bel_{t+1}` and the ground-truth differential `y`:
//!
//! * exploration: `w_ex(t) * JSD(bel_t, bel_{t+1})`, active early in the episode;
//! * confirmation: `-w_co(t) * (gamma * CE(bel_{t+1}, y) - CE(bel_t, y))`, a
//!   potential-based term active late in the episode;
//! * severity: `gamma * SevOut_{t+1} - SevOut_t` when the count of ruled-out
//!   severe pathologies changes;
//! * classification: the belief quality `V(s_t, y)` on the terminal transition.
//!
//! The first three vanish on transitions into the terminal state; the last one is
//! only paid there. [`combine`] weights them into the shaping term `F`.
//!
//! All logarithms are natural. Probabilities are clamped to `[PROB_FLOOR, 1]`
//! before any logarithm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{threshold_differential, PathologySet, DIFFERENTIAL_THRESHOLD};

pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the total mass of a [`Belief`].
pub const BELIEF_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ShapingError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
}

/// Probability distribution over pathologies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self, ShapingError> {
        if probs.is_empty() {
            return Err(ShapingError::InvalidBelief("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ShapingError::InvalidBelief("negative or non-finite entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > BELIEF_TOL {
            return Err(ShapingError::InvalidBelief(format!("mass {sum}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes non-negative weights; `None` when they carry no mass.
    pub fn from_weights(mut weights: Vec<f64>) -> Option<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return None;
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Some(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Belief {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0)
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

/// `KL(p || q)` in nats with clamped probabilities; terms with `p_i = 0` vanish.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "KL over distributions of different size");
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (clamp(pi).ln() - clamp(qi).ln()))
        .sum();
    kl.max(0.0)
}

/// Jensen-Shannon divergence in nats; symmetric and bounded by `ln 2`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, ShapingError> {
    if p.len() != q.len() {
        return Err(ShapingError::DimensionMismatch(p.len(), q.len()));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            total += pi * (pi.ln() - m.ln());
        }
        if qi > 0.0 {
            total += qi * (qi.ln() - m.ln());
        }
    }
    Ok((0.5 * total).clamp(0.0, std::f64::consts::LN_2))
}

/// `-sum_d y_d ln bel_d` with `bel` clamped below by [`PROB_FLOOR`].
pub fn cross_entropy(bel: &[f64], y: &[f64]) -> f64 {
    assert_eq!(bel.len(), y.len(), "cross-entropy over distributions of different size");
    -bel.iter()
        .zip(y)
        .filter(|(_, &yi)| yi != 0.0)
        .map(|(&b, &yi)| yi * clamp(b).ln())
        .sum::<f64>()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&pi| pi > 0.0).map(|&pi| pi * pi.ln()).sum::<f64>()
}

/// Time schedules for the exploration and confirmation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub delta_ex: f64,
    pub delta_co: f64,
    /// Episode horizon `T`; should match the environment's.
    pub horizon: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            x_min: -13.0,
            x_max: 13.0,
            delta_ex: 9.0,
            delta_co: 4.0,
            horizon: 30,
        }
    }
}

/// Affine map of `[0, T]` onto `[x_min, x_max]`.
pub fn trans(t: usize, sch: &SchedulerConfig) -> f64 {
    (t as f64 * (sch.x_max - sch.x_min)) / sch.horizon as f64 + sch.x_min
}

/// Exploration weight; decreasing in `t`.
pub fn w_ex(t: usize, sch: &SchedulerConfig) -> f64 {
    sigmoid(-(trans(t, sch) + sch.delta_ex))
}

/// Confirmation weight; increasing in `t`.
pub fn w_co(t: usize, sch: &SchedulerConfig) -> f64 {
    sigmoid(trans(t, sch) + sch.delta_co)
}

/// Which severe pathologies count as ruled out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SevOutRule {
    /// Excluded from both the ground-truth and the predicted differential.
    #[default]
    Neither,
    /// Not in the intersection of the two differentials.
    NotBoth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapingConfig {
    pub alpha_ex: f64,
    pub alpha_co: f64,
    pub alpha_sev: f64,
    pub alpha_cl: f64,
    pub w_si: f64,
    /// Membership threshold for SevIn / SevOut / Sev_y.
    pub tau_sev: f64,
    pub gamma: f64,
    pub sev_out_rule: SevOutRule,
    /// Value of `SevIn / Sev_y` when the ground truth has no severe pathology.
    pub vacuous_severe_ratio: f64,
    #[serde(flatten)]
    pub scheduler: SchedulerConfig,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            alpha_ex: 12.0,
            alpha_co: 1.0,
            alpha_sev: 0.75,
            alpha_cl: 1.0,
            w_si: 1.0,
            tau_sev: DIFFERENTIAL_THRESHOLD,
            gamma: 0.99,
            sev_out_rule: SevOutRule::Neither,
            vacuous_severe_ratio: 1.0,
            scheduler: SchedulerConfig::default(),
        }
    }
}

impl ShapingConfig {
    /// Same configuration with every auxiliary reward switched off.
    pub fn without_shaping(mut self) -> Self {
        self.alpha_ex = 0.0;
        self.alpha_co = 0.0;
        self.alpha_sev = 0.0;
        self.alpha_cl = 0.0;
        self
    }
}

pub fn reward_exploration(
    bel_t: &[f64],
    bel_next: &[f64],
    t: usize,
    next_terminal: bool,
    sch: &SchedulerConfig,
) -> f64 {
    if next_terminal {
        return 0.0;
    }
    w_ex(t, sch) * jsd(bel_t, bel_next).expect("beliefs over the same pathologies")
}

pub fn reward_confirmation(
    bel_t: &[f64],
    bel_next: &[f64],
    y: &[f64],
    t: usize,
    next_terminal: bool,
    sch: &SchedulerConfig,
    gamma: f64,
) -> f64 {
    if next_terminal {
        return 0.0;
    }
    -w_co(t, sch) * (gamma * cross_entropy(bel_next, y) - cross_entropy(bel_t, y))
}

/// Number of severe pathologies ruled out by both ground truth and prediction.
pub fn sev_out_count(
    bel: &[f64],
    y: &[f64],
    severe: &PathologySet,
    tau_sev: f64,
    rule: SevOutRule,
) -> usize {
    let in_gt = threshold_differential(y, tau_sev);
    let in_pred = threshold_differential(bel, tau_sev);
    severe
        .iter()
        .filter(|&p| match rule {
            SevOutRule::Neither => !in_gt.contains(p) && !in_pred.contains(p),
            SevOutRule::NotBoth => !(in_gt.contains(p) && in_pred.contains(p)),
        })
        .count()
}

#[allow(clippy::too_many_arguments)]
pub fn reward_severity(
    bel_t: &[f64],
    bel_next: &[f64],
    y: &[f64],
    severe: &PathologySet,
    tau_sev: f64,
    gamma: f64,
    next_terminal: bool,
    rule: SevOutRule,
) -> f64 {
    if next_terminal {
        return 0.0;
    }
    let before = sev_out_count(bel_t, y, severe, tau_sev, rule);
    let after = sev_out_count(bel_next, y, severe, tau_sev, rule);
    if before == after {
        return 0.0;
    }
    gamma * after as f64 - before as f64
}

/// `V = -CE(bel, y) + w_si * SevIn / Sev_y`.
pub fn belief_quality(
    bel: &[f64],
    y: &[f64],
    severe: &PathologySet,
    w_si: f64,
    tau_sev: f64,
    vacuous_ratio: f64,
) -> f64 {
    let gt_severe = threshold_differential(y, tau_sev).intersection(severe);
    let ratio = if gt_severe.is_empty() {
        vacuous_ratio
    } else {
        let pred = threshold_differential(bel, tau_sev);
        let sev_in = gt_severe.iter().filter(|&p| pred.contains(p)).count();
        sev_in as f64 / gt_severe.len() as f64
    };
    -cross_entropy(bel, y) + w_si * ratio
}

pub fn reward_classification(
    bel_t: &[f64],
    y: &[f64],
    severe: &PathologySet,
    cfg: &ShapingConfig,
    next_terminal: bool,
) -> f64 {
    if !next_terminal {
        return 0.0;
    }
    belief_quality(bel_t, y, severe, cfg.w_si, cfg.tau_sev, cfg.vacuous_severe_ratio)
}

/// The four auxiliary rewards of one transition, unweighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapingComponents {
    pub exploration: f64,
    pub confirmation: f64,
    pub severity: f64,
    pub classification: f64,
}

/// `F = a_ex R_ex + a_co R_co + a_sev R_sev + a_cl R_cl`.
pub fn combine(rex: f64, rco: f64, rsev: f64, rcl: f64, cfg: &ShapingConfig) -> f64 {
    [
        (cfg.alpha_ex, rex),
        (cfg.alpha_co, rco),
        (cfg.alpha_sev, rsev),
        (cfg.alpha_cl, rcl),
    ]
    .iter()
    .filter(|(alpha, _)| *alpha != 0.0)
    .map(|(alpha, r)| alpha * r)
    .sum()
}

impl ShapingComponents {
    /// Evaluates all components; `bel_next` is ignored when `next_terminal`.
    pub fn evaluate(
        cfg: &ShapingConfig,
        t: usize,
        bel_t: &[f64],
        bel_next: Option<&[f64]>,
        y: &[f64],
        severe: &PathologySet,
    ) -> Self {
        match bel_next {
            None => Self {
                classification: reward_classification(bel_t, y, severe, cfg, true),
                ..Self::default()
            },
            Some(next) => Self {
                exploration: reward_exploration(bel_t, next, t, false, &cfg.scheduler),
                confirmation: reward_confirmation(bel_t, next, y, t, false, &cfg.scheduler, cfg.gamma),
                severity: reward_severity(
                    bel_t,
                    next,
                    y,
                    severe,
                    cfg.tau_sev,
                    cfg.gamma,
                    false,
                    cfg.sev_out_rule,
                ),
                classification: 0.0,
            },
        }
    }

    pub fn total(&self, cfg: &ShapingConfig) -> f64 {
        combine(
            self.exploration,
            self.confirmation,
            self.severity,
            self.classification,
            cfg,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const SIGMOID_4: f64 = 0.982_013_790_037_908_4;
    const SIGMOID_M9: f64 = 1.233_945_759_862_317_3e-4;

    #[test]
    fn trans_endpoints() {
        let sch = SchedulerConfig::default();
        assert_eq!(trans(0, &sch), -13.0);
        assert_eq!(trans(30, &sch), 13.0);
        assert_eq!(trans(15, &sch), 0.0);
    }

    #[test]
    fn scheduler_values() {
        let sch = SchedulerConfig::default();
        assert_abs_diff_eq!(w_ex(0, &sch), SIGMOID_4, epsilon = 1e-15);
        assert_abs_diff_eq!(w_ex(30, &sch), 2.789_468_092_090_811_6e-10, epsilon = 1e-20);
        assert_abs_diff_eq!(w_co(0, &sch), SIGMOID_M9, epsilon = 1e-18);
        assert_abs_diff_eq!(w_co(30, &sch), 0.999_999_958_600_624_5, epsilon = 1e-15);
        for t in 0..30 {
            assert!(w_ex(t + 1, &sch) < w_ex(t, &sch));
            assert!(w_co(t + 1, &sch) > w_co(t, &sch));
        }
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(
            jsd(&[1.0], &[0.5, 0.5]),
            Err(ShapingError::DimensionMismatch(1, 2))
        );
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
        assert_abs_diff_eq!(cross_entropy(&[0.5, 0.5], &[1.0, 0.0]), std::f64::consts::LN_2, epsilon = 1e-15);
        // clamping keeps a missed one-hot finite
        assert!(cross_entropy(&[1.0, 0.0], &[0.0, 1.0]).is_finite());
    }

    #[test]
    fn exploration_examples() {
        let sch = SchedulerConfig::default();
        assert_eq!(reward_exploration(&[1.0, 0.0], &[0.0, 1.0], 0, true, &sch), 0.0);
        assert_eq!(reward_exploration(&[0.4, 0.6], &[0.4, 0.6], 3, false, &sch), 0.0);
        assert_abs_diff_eq!(
            reward_exploration(&[1.0, 0.0], &[0.0, 1.0], 0, false, &sch),
            0.680_680_089_835_762_3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn confirmation_examples() {
        let sch = SchedulerConfig::default();
        let y = [1.0, 0.0];
        assert_eq!(reward_confirmation(&[0.3, 0.7], &[0.3, 0.7], &y, 4, false, &sch, 1.0), 0.0);
        let r = reward_confirmation(&[0.5, 0.5], &[0.9, 0.1], &y, 0, false, &sch, 0.99);
        assert_abs_diff_eq!(r, w_co(0, &sch) * 0.588_840_270_058_697_3, epsilon = 1e-15);
        let away = reward_confirmation(&[0.9, 0.1], &[0.5, 0.5], &y, 20, false, &sch, 1.0);
        assert!(away < 0.0);
    }

    fn set(ids: &[usize]) -> PathologySet {
        ids.iter().copied().collect()
    }

    #[test]
    fn sev_out_examples() {
        // A=0, B=1, C=2 severe; 3 is benign
        let y = [0.5, 0.0, 0.0, 0.5];
        assert_eq!(sev_out_count(&[0.3, 0.3, 0.0, 0.4], &y, &set(&[]), 0.01, SevOutRule::Neither), 0);
        assert_eq!(sev_out_count(&[0.3, 0.3, 0.0, 0.4], &y, &set(&[0, 1, 2]), 0.01, SevOutRule::Neither), 1);
        assert_eq!(sev_out_count(&[0.6, 0.0, 0.0, 0.4], &y, &set(&[0, 1, 2]), 0.01, SevOutRule::Neither), 2);
        // not-both reading also counts A when prediction drops it
        assert_eq!(sev_out_count(&[0.0, 0.0, 0.0, 1.0], &y, &set(&[0, 1, 2]), 0.01, SevOutRule::NotBoth), 3);
    }

    #[test]
    fn severity_examples() {
        let severe = set(&[0, 1, 2]);
        let y = [0.5, 0.0, 0.0, 0.5];
        let one = [0.3, 0.3, 0.0, 0.4];
        let two = [0.6, 0.0, 0.0, 0.4];
        let r = reward_severity(&one, &two, &y, &severe, 0.01, 0.99, false, SevOutRule::Neither);
        assert_abs_diff_eq!(r, 0.98, epsilon = 1e-15);
        assert_eq!(reward_severity(&two, &two, &y, &severe, 0.01, 0.99, false, SevOutRule::Neither), 0.0);
        let r = reward_severity(&two, &one, &y, &severe, 0.01, 0.99, false, SevOutRule::Neither);
        assert_abs_diff_eq!(r, -1.01, epsilon = 1e-15);
        assert_eq!(reward_severity(&one, &two, &y, &severe, 0.01, 0.99, true, SevOutRule::Neither), 0.0);
    }

    #[test]
    fn belief_quality_examples() {
        let y = [0.0, 1.0, 0.0];
        assert_eq!(belief_quality(&y, &y, &set(&[0]), 1.0, 0.01, 1.0), 1.0);
        let y2 = [0.5, 0.5, 0.0];
        let bel = [0.98, 0.0, 0.02];
        let v = belief_quality(&bel, &y2, &set(&[0, 1]), 1.0, 0.01, 1.0);
        assert_abs_diff_eq!(v, -cross_entropy(&bel, &y2) + 0.5, epsilon = 1e-15);
        assert_eq!(belief_quality(&bel, &y2, &set(&[0, 1]), 0.0, 0.01, 1.0), -cross_entropy(&bel, &y2));
    }

    #[test]
    fn classification_examples() {
        let cfg = ShapingConfig::default();
        let y = [1.0, 0.0];
        assert_eq!(reward_classification(&[0.5, 0.5], &y, &set(&[]), &cfg, false), 0.0);
        assert_eq!(reward_classification(&y, &y, &set(&[]), &cfg, true), 1.0);
        assert_abs_diff_eq!(
            reward_classification(&[0.5, 0.5], &y, &set(&[]), &cfg, true),
            1.0 - std::f64::consts::LN_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn combine_examples() {
        let zero = ShapingConfig::default().without_shaping();
        assert_eq!(combine(1.0, 2.0, 3.0, 4.0, &zero), 0.0);
        let cfg = ShapingConfig::default();
        assert_abs_diff_eq!(combine(0.1, 0.2, 0.0, 0.0, &cfg), 1.4, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn combine_is_linear_in_weights(
            c in prop::array::uniform4(-5.0f64..5.0),
            a in prop::array::uniform4(-5.0f64..5.0),
            k in -3.0f64..3.0,
        ) {
            let mut cfg = ShapingConfig { alpha_ex: a[0], alpha_co: a[1], alpha_sev: a[2], alpha_cl: a[3], ..Default::default() };
            let base = combine(c[0], c[1], c[2], c[3], &cfg);
            cfg.alpha_ex *= k; cfg.alpha_co *= k; cfg.alpha_sev *= k; cfg.alpha_cl *= k;
            let scaled = combine(c[0], c[1], c[2], c[3], &cfg);
            prop_assert!((scaled - k * base).abs() < 1e-9);
        }

        #[test]
        fn severity_zero_when_count_unchanged(
            a in prop::collection::vec(0.0f64..1.0, 5),
            b in prop::collection::vec(0.0f64..1.0, 5),
        ) {
            let severe = set(&[0, 2, 4]);
            let y = [0.4, 0.0, 0.0, 0.6, 0.0];
            let na = Belief::from_weights(a).unwrap();
            let nb = Belief::from_weights(b).unwrap();
            let before = sev_out_count(na.probs(), &y, &severe, 0.01, SevOutRule::Neither);
            let after = sev_out_count(nb.probs(), &y, &severe, 0.01, SevOutRule::Neither);
            let r = reward_severity(na.probs(), nb.probs(), &y, &severe, 0.01, 0.99, false, SevOutRule::Neither);
            if before == after { prop_assert_eq!(r, 0.0); } else { prop_assert!(r != 0.0); }
        }

        #[test]
        fn exploration_is_non_negative(
            a in prop::collection::vec(0.0f64..1.0, 4),
            b in prop::collection::vec(0.0f64..1.0, 4),
            t in 0usize..=30,
        ) {
            let (Some(na), Some(nb)) = (Belief::from_weights(a), Belief::from_weights(b)) else { return Ok(()); };
            prop_assert!(reward_exploration(na.probs(), nb.probs(), t, false, &SchedulerConfig::default()) >= 0.0);
        }
    }
}
