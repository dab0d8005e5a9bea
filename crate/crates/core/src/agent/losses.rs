//! The Q-learning loss with its exit-value term, and the terminal-only
//! classification loss. Both return the scalar loss and exact parameter
//! gradients.

use ndarray::Array2;

use super::{AgentError, NetworkParams, ReplayEntry};
use crate::knowledge::PathologySet;
use crate::shaping::{belief_quality, ShapingConfig};

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: NetworkParams,
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>, AgentError> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != width {
            return Err(AgentError::ShapeMismatch(format!(
                "state width {} but network expects {width}",
                r.len()
            )));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, width), data).map_err(|e| AgentError::ShapeMismatch(e.to_string()))
}

/// `Q_t = r' + 1[non-terminal] * gamma * max_a Q_phi(s_{t+1}, a)`, the max
/// taken over the actions still valid in `s_{t+1}`.
pub fn q_targets(batch: &[&ReplayEntry], phi: &NetworkParams, gamma: f64) -> Result<Vec<f64>, AgentError> {
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].is_terminal()).collect();
    let mut out: Vec<f64> = batch.iter().map(|e| e.shaped_reward).collect();
    if live.is_empty() {
        return Ok(out);
    }
    let states = stack(
        live.iter().map(|&i| batch[i].next_state.as_deref().unwrap()),
        phi.input_dim(),
    )?;
    let (pred, _) = phi.forward(states.view())?;
    for (row, &i) in live.iter().enumerate() {
        let best = super::argmax_masked(pred.q.row(row).as_slice().unwrap(), &batch[i].next_mask)?;
        out[i] += gamma * pred.q[[row, best]];
    }
    Ok(out)
}

/// The exit-action regression target `V(s_t, y)`, evaluated with the online
/// classifier and treated as a constant.
pub fn exit_targets(
    batch: &[&ReplayEntry],
    theta: &NetworkParams,
    shaping: &ShapingConfig,
    severe: &PathologySet,
) -> Result<Vec<f64>, AgentError> {
    let states = stack(batch.iter().map(|e| e.state.as_slice()), theta.input_dim())?;
    let (pred, _) = theta.forward(states.view())?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, e)| {
            belief_quality(
                pred.beliefs.row(i).as_slice().unwrap(),
                &e.target,
                severe,
                shaping.w_si,
                shaping.tau_sev,
                shaping.vacuous_severe_ratio,
            )
        })
        .collect())
}

/// Mean over the batch of
/// `0.5 * [(Q_t - Q(s,a))^2 + 1[non-terminal] * (Q(s, exit) - V)^2]`
/// with both targets given.
pub fn q_loss_with_targets(
    batch: &[&ReplayEntry],
    theta: &NetworkParams,
    q_targets: &[f64],
    exit_targets: &[f64],
) -> Result<LossOutput, AgentError> {
    if batch.is_empty() {
        return Ok(LossOutput { loss: 0.0, grads: theta.zeros_like() });
    }
    if q_targets.len() != batch.len() || exit_targets.len() != batch.len() {
        return Err(AgentError::ShapeMismatch("target count differs from batch size".into()));
    }
    let states = stack(batch.iter().map(|e| e.state.as_slice()), theta.input_dim())?;
    let (pred, cache) = theta.forward(states.view())?;
    let n = batch.len() as f64;
    let exit = theta.num_actions() - 1;
    let mut d_q = Array2::zeros(pred.q.raw_dim());
    let mut loss = 0.0;
    for (i, e) in batch.iter().enumerate() {
        if e.action > exit {
            return Err(AgentError::ShapeMismatch(format!("action {} out of range", e.action)));
        }
        let r = pred.q[[i, e.action]] - q_targets[i];
        loss += 0.5 * r * r;
        d_q[[i, e.action]] += r / n;
        if !e.is_terminal() {
            let r = pred.q[[i, exit]] - exit_targets[i];
            loss += 0.5 * r * r;
            d_q[[i, exit]] += r / n;
        }
    }
    let d_logits = Array2::zeros(pred.logits.raw_dim());
    Ok(LossOutput {
        loss: loss / n,
        grads: theta.backward(&cache, d_q, d_logits),
    })
}

pub fn q_loss(
    batch: &[&ReplayEntry],
    theta: &NetworkParams,
    phi: &NetworkParams,
    shaping: &ShapingConfig,
    severe: &PathologySet,
    gamma: f64,
) -> Result<LossOutput, AgentError> {
    let qt = q_targets(batch, phi, gamma)?;
    let vt = exit_targets(batch, theta, shaping, severe)?;
    q_loss_with_targets(batch, theta, &qt, &vt)
}

/// Mean over the batch of `0.5 * 1[terminal] * CE(bel_t, y)`.
pub fn classifier_loss(batch: &[&ReplayEntry], theta: &NetworkParams) -> Result<LossOutput, AgentError> {
    if batch.is_empty() {
        return Ok(LossOutput { loss: 0.0, grads: theta.zeros_like() });
    }
    let states = stack(batch.iter().map(|e| e.state.as_slice()), theta.input_dim())?;
    let (pred, cache) = theta.forward(states.view())?;
    let n = batch.len() as f64;
    let mut d_logits = Array2::zeros(pred.logits.raw_dim());
    let mut loss = 0.0;
    for (i, e) in batch.iter().enumerate() {
        if !e.is_terminal() {
            continue;
        }
        if e.target.len() != theta.num_pathologies() {
            return Err(AgentError::ShapeMismatch("target width differs from classifier".into()));
        }
        let logits = pred.logits.row(i);
        let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let mass: f64 = e.target.iter().sum();
        for (k, &y) in e.target.iter().enumerate() {
            loss -= 0.5 * y * (logits[k] - lse);
            d_logits[[i, k]] = 0.5 * (pred.beliefs[[i, k]] * mass - y) / n;
        }
    }
    let d_q = Array2::zeros(pred.q.raw_dim());
    Ok(LossOutput {
        loss: loss / n,
        grads: theta.backward(&cache, d_q, d_logits),
    })
}
