//! Action selection: epsilon-greedy for training, and the two evaluation
//! policies built on a trained network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AgentError, NetworkParams};
use crate::environment::{DialogueState, Respondent};
use crate::rollout::{Decision, Policy, RolloutError};
use crate::shaping::Belief;

/// Highest-valued valid action; ties go to the lower id.
pub fn argmax_masked(q: &[f64], mask: &[bool]) -> Result<usize, AgentError> {
    let mut best: Option<usize> = None;
    for (a, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(a);
        }
    }
    best.ok_or(AgentError::EmptyMask)
}

/// With probability `epsilon` a uniform valid action, otherwise the masked argmax.
pub fn epsilon_greedy<R: Rng>(q: &[f64], mask: &[bool], epsilon: f64, rng: &mut R) -> Result<usize, AgentError> {
    let valid: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(a, _)| a).collect();
    if valid.is_empty() {
        return Err(AgentError::EmptyMask);
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(valid[rng.gen_range(0..valid.len())]);
    }
    argmax_masked(q, mask)
}

fn mask_from(valid: &[usize], num_actions: usize) -> Vec<bool> {
    let mut mask = vec![false; num_actions];
    for &a in valid {
        mask[a] = true;
    }
    mask
}

fn network_belief(params: &NetworkParams, state: &DialogueState) -> Result<(Vec<f64>, Belief), RolloutError> {
    let (q, bel) = params
        .predict(&state.vector)
        .map_err(|e| RolloutError::Policy(e.to_string()))?;
    let belief = Belief::new(bel).map_err(|e| RolloutError::Policy(e.to_string()))?;
    Ok((q, belief))
}

/// Acts greedily on the Q head.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<'a> {
    pub params: &'a NetworkParams,
}

impl Policy for GreedyPolicy<'_> {
    fn decide(
        &mut self,
        state: &DialogueState,
        valid: &[usize],
        _respondent: &dyn Respondent,
    ) -> Result<Decision, RolloutError> {
        let (q, belief) = network_belief(self.params, state)?;
        let action = argmax_masked(&q, &mask_from(valid, q.len())).map_err(|e| RolloutError::Policy(e.to_string()))?;
        Ok(Decision { belief, action })
    }
}

/// Uniform over the valid actions (exit included), with the network's
/// classifier supplying beliefs.
#[derive(Debug, Clone)]
pub struct RandomQuestionPolicy<'a> {
    pub params: &'a NetworkParams,
    pub rng: ChaCha8Rng,
}

impl Policy for RandomQuestionPolicy<'_> {
    fn decide(
        &mut self,
        state: &DialogueState,
        valid: &[usize],
        _respondent: &dyn Respondent,
    ) -> Result<Decision, RolloutError> {
        let (_, belief) = network_belief(self.params, state)?;
        if valid.is_empty() {
            return Err(RolloutError::Policy(AgentError::EmptyMask.to_string()));
        }
        let action = valid[self.rng.gen_range(0..valid.len())];
        Ok(Decision { belief, action })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    #[test]
    fn zero_epsilon_is_masked_argmax() {
        let mut rng = rng_for(0, 0);
        let q = [5.0, 1.0, 3.0, 3.0];
        let mask = [false, true, true, true];
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&q, &mask, 0.0, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn infinite_invalid_q_is_never_chosen() {
        let mut rng = rng_for(1, 0);
        let q = [f64::INFINITY, 0.0, -1.0];
        let mask = [false, true, true];
        for eps in [0.0, 0.5, 1.0] {
            for _ in 0..1000 {
                assert_ne!(epsilon_greedy(&q, &mask, eps, &mut rng).unwrap(), 0);
            }
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mut rng = rng_for(1, 0);
        assert!(matches!(
            epsilon_greedy(&[1.0, 2.0], &[false, false], 0.3, &mut rng),
            Err(AgentError::EmptyMask)
        ));
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = rng_for(2, 0);
        let q = [0.0, 9.0, 1.0, 2.0, 3.0, 4.0];
        let mask = [true, true, false, true, true, true];
        let k = 5.0;
        let draws = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            counts[epsilon_greedy(&q, &mask, 1.0, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        let p = 1.0 / k;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (a, &c) in counts.iter().enumerate() {
            if mask[a] {
                assert!((c as f64 - mean).abs() <= 3.0 * sigma, "action {a}: {c}");
            }
        }
    }
}
