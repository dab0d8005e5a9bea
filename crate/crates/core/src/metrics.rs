//! Evaluation metrics for differential-diagnosis dialogues.
//!
//! Set-based metrics compare thresholded differentials (pathologies with mass
//! strictly above `tau`). Per-patient metrics use the final belief of a
//! trajectory; the per-turn series reuse the same kernels on every turn's
//! belief and are resampled to 21 points for trajectory plots.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::knowledge::{threshold_differential, KnowledgeBase, PathologySet, PatientRecord, DIFFERENTIAL_THRESHOLD};
use crate::rollout::Trajectory;
use crate::shaping::kl_divergence;

/// Number of points trajectory series are resampled to.
pub const RESAMPLE_POINTS: usize = 21;

/// Names of the scalar metrics, in report order.
pub const METRIC_NAMES: [&str; 8] = ["IL", "PER", "DDF1", "DSHM", "GTPA", "GTPA@1", "GTPA@3", "GTPA@5"];

/// Columns of the trajectory-score table.
pub const SERIES_NAMES: [&str; 5] = ["exploration", "confirmation", "rule_in", "rule_out", "dshm"];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no input to aggregate")]
    EmptyInput,
    #[error("patient has no experienced evidence")]
    EmptyExperiencedSet,
    #[error("ground-truth differential is empty after thresholding")]
    EmptyGroundTruthSet,
    #[error("trajectory has no turns")]
    EmptyTrajectory,
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Mean number of agent inquiries per trajectory.
pub fn interaction_length(trajectories: &[Trajectory], num_evidences: usize) -> Result<f64, MetricsError> {
    if trajectories.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: usize = trajectories.iter().map(|t| t.inquired(num_evidences).len()).sum();
    Ok(total as f64 / trajectories.len() as f64)
}

/// Evidences known at the end of a dialogue: the chief complaint plus every inquiry.
pub fn acquired_set(patient: &PatientRecord, trajectory: &Trajectory, num_evidences: usize) -> BTreeSet<usize> {
    let mut set: BTreeSet<usize> = trajectory.inquired(num_evidences).into_iter().collect();
    set.insert(patient.chief_complaint);
    set
}

/// Fraction of the patient's experienced evidences that were acquired.
pub fn positive_evidence_recall(patient: &PatientRecord, acquired: &BTreeSet<usize>) -> Result<f64, MetricsError> {
    let experienced = patient.experienced();
    if experienced.is_empty() {
        return Err(MetricsError::EmptyExperiencedSet);
    }
    let hit = experienced.intersection(acquired).count();
    Ok(hit as f64 / experienced.len() as f64)
}

/// F1 between a predicted and a ground-truth pathology set; 0 when they do not overlap.
pub fn ddf1_sets(pred: &PathologySet, gt: &PathologySet) -> Result<f64, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruthSet);
    }
    let hit = pred.intersection(gt).len();
    // harmonic mean of hit/|gt| and hit/|pred|, reduced to one division
    Ok((2 * hit) as f64 / (gt.len() + pred.len()) as f64)
}

pub fn ddf1(pred: &[f64], gt: &[f64], tau: f64) -> Result<f64, MetricsError> {
    ddf1_sets(&threshold_differential(pred, tau), &threshold_differential(gt, tau))
}

/// Rule-in and rule-out rates; `None` marks a vacuous denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeverityRates {
    pub rule_in: Option<f64>,
    pub rule_out: Option<f64>,
    /// `(numerator, denominator)` of each defined rate.
    counts: [Option<(usize, usize)>; 2],
}

impl SeverityRates {
    pub fn from_sets(pred: &PathologySet, gt: &PathologySet, severe: &PathologySet, num_pathologies: usize) -> Self {
        let gt_severe = gt.intersection(severe);
        let rule_in = (!gt_severe.is_empty()).then(|| (pred.intersection(&gt_severe).len(), gt_severe.len()));
        let outside: Vec<usize> = (0..num_pathologies)
            .filter(|&d| severe.contains(d) && !gt.contains(d))
            .collect();
        let rule_out = (!outside.is_empty()).then(|| {
            let kept_out = outside.iter().filter(|&&d| !pred.contains(d)).count();
            (kept_out, outside.len())
        });
        let ratio = |c: Option<(usize, usize)>| c.map(|(n, d)| n as f64 / d as f64);
        Self {
            rule_in: ratio(rule_in),
            rule_out: ratio(rule_out),
            counts: [rule_in, rule_out],
        }
    }

    /// Rate with vacuous denominators counted as success.
    pub fn rule_in_or_one(&self) -> f64 {
        self.rule_in.unwrap_or(1.0)
    }

    pub fn rule_out_or_one(&self) -> f64 {
        self.rule_out.unwrap_or(1.0)
    }

    /// Harmonic mean of the defined rates; 1 when neither is defined.
    pub fn harmonic_mean(&self) -> f64 {
        match self.counts {
            // 2ab / (a + b) with a = an/ad and b = bn/bd
            [Some((an, ad)), Some((bn, bd))] => {
                let num = 2 * an * bn;
                if num == 0 {
                    0.0
                } else {
                    num as f64 / (an * bd + bn * ad) as f64
                }
            }
            [Some((n, d)), None] | [None, Some((n, d))] => n as f64 / d as f64,
            [None, None] => 1.0,
        }
    }
}

pub fn severity_rates(pred: &[f64], gt: &[f64], severe: &PathologySet, tau: f64) -> SeverityRates {
    SeverityRates::from_sets(
        &threshold_differential(pred, tau),
        &threshold_differential(gt, tau),
        severe,
        pred.len(),
    )
}

pub fn dshm(pred: &[f64], gt: &[f64], severe: &PathologySet, tau: f64) -> f64 {
    severity_rates(pred, gt, severe, tau).harmonic_mean()
}

/// 1 if the ground-truth pathology is in the thresholded prediction.
pub fn gtpa(pred: &[f64], gt_pathology: usize, tau: f64) -> f64 {
    f64::from(u8::from(pred[gt_pathology] > tau))
}

/// Pathology ids by decreasing mass, ties by lower id.
pub fn ranking(pred: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..pred.len()).collect();
    ids.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]).then(a.cmp(&b)));
    ids
}

/// 1 if the ground-truth pathology is among the `k` most probable.
pub fn gtpa_at_k(pred: &[f64], gt_pathology: usize, k: usize) -> f64 {
    f64::from(u8::from(ranking(pred).iter().take(k).any(|&d| d == gt_pathology)))
}

/// `1 - exp(-KL(bel_prev ‖ bel))`.
pub fn exploration_score(bel_prev: &[f64], bel: &[f64]) -> f64 {
    (1.0 - (-kl_divergence(bel_prev, bel)).exp()).clamp(0.0, 1.0)
}

/// `exp(-KL(y ‖ bel))`.
pub fn confirmation_score(bel: &[f64], y: &[f64]) -> f64 {
    (-kl_divergence(y, bel)).exp().clamp(0.0, 1.0)
}

/// Values at indices `round(f (L - 1))` for `f = 0, 0.05, ..., 1`.
pub fn resample_21(series: &[f64]) -> Result<[f64; RESAMPLE_POINTS], MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let last = (series.len() - 1) as f64;
    let mut out = [0.0; RESAMPLE_POINTS];
    for (i, slot) in out.iter_mut().enumerate() {
        let f = i as f64 / (RESAMPLE_POINTS - 1) as f64;
        *slot = series[(f * last).round() as usize];
    }
    Ok(out)
}

/// Metrics of one patient's dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub il: f64,
    pub per: f64,
    pub ddf1: f64,
    pub dshm: f64,
    pub gtpa: f64,
    pub gtpa_at_1: f64,
    pub gtpa_at_3: f64,
    pub gtpa_at_5: f64,
    /// Between consecutive turns; one shorter than the trajectory.
    pub exploration: Vec<f64>,
    pub confirmation: Vec<f64>,
    pub rule_in: Vec<f64>,
    pub rule_out: Vec<f64>,
    pub dshm_series: Vec<f64>,
}

impl PatientMetrics {
    pub fn value(&self, metric: &str) -> Option<f64> {
        Some(match metric {
            "IL" => self.il,
            "PER" => self.per,
            "DDF1" => self.ddf1,
            "DSHM" => self.dshm,
            "GTPA" => self.gtpa,
            "GTPA@1" => self.gtpa_at_1,
            "GTPA@3" => self.gtpa_at_3,
            "GTPA@5" => self.gtpa_at_5,
            _ => return None,
        })
    }
}

pub fn evaluate_patient(
    kb: &KnowledgeBase,
    patient: &PatientRecord,
    trajectory: &Trajectory,
    tau: f64,
) -> Result<PatientMetrics, MetricsError> {
    let num_evidences = kb.num_evidences();
    let severe = kb.severe_set();
    let final_belief = trajectory.final_belief().ok_or(MetricsError::EmptyTrajectory)?;
    let y = &patient.gt_differential;
    let beliefs: Vec<&[f64]> = trajectory.beliefs().collect();
    let rates: Vec<SeverityRates> = beliefs.iter().map(|b| severity_rates(b, y, &severe, tau)).collect();
    let final_rates = rates.last().expect("non-empty trajectory");
    Ok(PatientMetrics {
        il: trajectory.inquired(num_evidences).len() as f64,
        per: positive_evidence_recall(patient, &acquired_set(patient, trajectory, num_evidences))?,
        ddf1: ddf1(final_belief, y, tau)?,
        dshm: final_rates.harmonic_mean(),
        gtpa: gtpa(final_belief, patient.gt_pathology, tau),
        gtpa_at_1: gtpa_at_k(final_belief, patient.gt_pathology, 1),
        gtpa_at_3: gtpa_at_k(final_belief, patient.gt_pathology, 3),
        gtpa_at_5: gtpa_at_k(final_belief, patient.gt_pathology, 5),
        exploration: beliefs.windows(2).map(|w| exploration_score(w[0], w[1])).collect(),
        confirmation: beliefs.iter().map(|b| confirmation_score(b, y)).collect(),
        rule_in: rates.iter().map(SeverityRates::rule_in_or_one).collect(),
        rule_out: rates.iter().map(SeverityRates::rule_out_or_one).collect(),
        dshm_series: rates.iter().map(SeverityRates::harmonic_mean).collect(),
    })
}

/// One method's evaluation on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub patients: Vec<PatientMetrics>,
}

impl EvaluationReport {
    pub fn from_trajectories(
        method: impl Into<String>,
        kb: &KnowledgeBase,
        patients: &[PatientRecord],
        trajectories: &[Trajectory],
    ) -> Result<Self, MetricsError> {
        Self::from_trajectories_at(method, kb, patients, trajectories, DIFFERENTIAL_THRESHOLD)
    }

    /// Like [`Self::from_trajectories`] with a custom differential threshold.
    pub fn from_trajectories_at(
        method: impl Into<String>,
        kb: &KnowledgeBase,
        patients: &[PatientRecord],
        trajectories: &[Trajectory],
        tau: f64,
    ) -> Result<Self, MetricsError> {
        if patients.is_empty() || patients.len() != trajectories.len() {
            return Err(MetricsError::EmptyInput);
        }
        let patients = patients
            .iter()
            .zip(trajectories)
            .map(|(p, t)| evaluate_patient(kb, p, t, tau))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            method: method.into(),
            patients,
        })
    }

    pub fn mean(&self, metric: &str) -> Result<f64, MetricsError> {
        if self.patients.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        let mut sum = 0.0;
        for p in &self.patients {
            sum += p.value(metric).ok_or_else(|| MetricsError::UnknownMetric(metric.to_string()))?;
        }
        Ok(sum / self.patients.len() as f64)
    }

    /// Mean of each per-patient series after resampling to 21 points.
    ///
    /// Patients whose series is empty (a single-turn dialogue has no
    /// exploration step) are left out of that column.
    pub fn trajectory_scores(&self) -> [[f64; SERIES_NAMES.len()]; RESAMPLE_POINTS] {
        let mut out = [[f64::NAN; SERIES_NAMES.len()]; RESAMPLE_POINTS];
        for (col, name) in SERIES_NAMES.iter().enumerate() {
            let mut sums = [0.0; RESAMPLE_POINTS];
            let mut n = 0usize;
            for p in &self.patients {
                let series = match *name {
                    "exploration" => &p.exploration,
                    "confirmation" => &p.confirmation,
                    "rule_in" => &p.rule_in,
                    "rule_out" => &p.rule_out,
                    _ => &p.dshm_series,
                };
                if let Ok(r) = resample_21(series) {
                    for (s, v) in sums.iter_mut().zip(r) {
                        *s += v;
                    }
                    n += 1;
                }
            }
            if n > 0 {
                for (row, s) in out.iter_mut().zip(sums) {
                    row[col] = s / n as f64;
                }
            }
        }
        out
    }
}

/// One metric aggregated over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: f64,
    /// 95% t-interval; absent with a single run.
    pub ci: Option<(f64, f64)>,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub method: String,
    pub rows: Vec<AggregateRow>,
    pub trajectory_scores: Vec<[f64; SERIES_NAMES.len()]>,
}

impl AggregateReport {
    pub fn row(&self, metric: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

/// Mean and 95% t-interval of per-run values.
pub fn mean_with_ci(values: &[f64]) -> Result<(f64, Option<(f64, f64)>), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Ok((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid degrees of freedom").inverse_cdf(0.975);
    let half = t * (var / n).sqrt();
    Ok((mean, Some((mean - half, mean + half))))
}

/// Combines runs of the same method; `metrics` selects and orders the rows.
pub fn aggregate(reports: &[EvaluationReport], metrics: &[&str]) -> Result<AggregateReport, MetricsError> {
    let first = reports.first().ok_or(MetricsError::EmptyInput)?;
    let mut rows = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let per_run = reports.iter().map(|r| r.mean(metric)).collect::<Result<Vec<_>, _>>()?;
        let (mean, ci) = mean_with_ci(&per_run)?;
        rows.push(AggregateRow {
            metric: metric.to_string(),
            mean,
            ci,
            n_runs: reports.len(),
        });
    }
    let per_run: Vec<_> = reports.iter().map(EvaluationReport::trajectory_scores).collect();
    let trajectory_scores = (0..RESAMPLE_POINTS)
        .map(|i| {
            let mut row = [0.0; SERIES_NAMES.len()];
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = per_run.iter().map(|r| r[i][c]).sum::<f64>() / per_run.len() as f64;
            }
            row
        })
        .collect();
    Ok(AggregateReport {
        method: first.method.clone(),
        rows,
        trajectory_scores,
    })
}

/// Validates a metric filter, accepting names case-insensitively.
pub fn parse_metric_names(names: &[String]) -> Result<Vec<&'static str>, MetricsError> {
    names
        .iter()
        .map(|n| {
            METRIC_NAMES
                .iter()
                .copied()
                .find(|m| m.eq_ignore_ascii_case(n.trim()))
                .ok_or_else(|| MetricsError::UnknownMetric(n.clone()))
        })
        .collect()
}

fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn report_csv(reports: &[AggregateReport]) -> String {
    let mut out = String::from("method,metric,mean,ci_low,ci_high,n_runs\n");
    for r in reports {
        for row in &r.rows {
            let (lo, hi) = row
                .ci
                .map(|(lo, hi)| (fmt_num(lo), fmt_num(hi)))
                .unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{lo},{hi},{}", r.method, row.metric, fmt_num(row.mean), row.n_runs);
        }
    }
    out
}

pub fn trajectory_csv(report: &AggregateReport) -> String {
    let mut out = format!("point,{}\n", SERIES_NAMES.join(","));
    for (i, row) in report.trajectory_scores.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        let _ = writeln!(out, "{i},{}", cells.join(","));
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), MetricsError> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| MetricsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
