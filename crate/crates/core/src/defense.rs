//! Server-side robust aggregation: `Clip_τ ∘ Aggregate ∘ Filter`.
//!
//! Filters compare each client's update `Δ_i` against the gradient of the
//! server's own loss. The angle filter keeps updates whose cosine with `−∇f0`
//! is at least `α`; the loss filter ranks updates by the descent score
//! `−⟨Δ, ∇f0⟩ − ρ‖Δ‖²` and drops the lowest `floor(θ·|S|)`. Survivors are
//! combined by a smoothed Weiszfeld geometric median (or a plain mean) and the
//! combined update is norm-clipped before it is applied to `x_t`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamVector, ZERO_NORM_TOL};

/// Relative tolerance and iteration cap used by [`GeoMedMode::Reference`].
pub const REFERENCE_REL_TOL: f64 = 1e-12;
pub const REFERENCE_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterSpec {
    None,
    Angle { alpha: f64 },
    Loss { rho: f64, theta: f64 },
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterSpec::None => Ok(()),
            FilterSpec::Angle { alpha } => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::config("defense.alpha", "must lie in [0, 1]"));
                }
                Ok(())
            }
            FilterSpec::Loss { rho, theta } => {
                if !(rho >= 0.0) || !rho.is_finite() {
                    return Err(Error::config("defense.rho", "must be >= 0 and finite"));
                }
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(Error::config("defense.theta", "must lie in (0, 1)"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Average,
    Geomed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    pub weiszfeld_max_iters: usize,
    pub weiszfeld_rel_tol: f64,
    pub weiszfeld_smoothing: f64,
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        AggregatorSpec {
            kind: AggregatorKind::Geomed,
            weiszfeld_max_iters: 4,
            weiszfeld_rel_tol: 1e-6,
            weiszfeld_smoothing: 1e-8,
        }
    }
}

impl AggregatorSpec {
    pub fn average() -> Self {
        AggregatorSpec {
            kind: AggregatorKind::Average,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weiszfeld_max_iters == 0 {
            return Err(Error::config("defense.weiszfeld_max_iters", "must be >= 1"));
        }
        if !(self.weiszfeld_rel_tol > 0.0) {
            return Err(Error::config("defense.weiszfeld_rel_tol", "must be > 0"));
        }
        if !(self.weiszfeld_smoothing > 0.0) {
            return Err(Error::config("defense.weiszfeld_smoothing", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoMedMode {
    /// The configured iteration budget and tolerance.
    Online,
    /// Iterate to [`REFERENCE_REL_TOL`] (at most [`REFERENCE_MAX_ITERS`]).
    Reference,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    /// Accepted client ids, ascending.
    pub accepted: Vec<usize>,
    /// Cosines (angle filter) or descent scores (loss filter).
    pub scores: BTreeMap<usize, f64>,
    pub server_grad_norm: f64,
    /// The angle filter was undefined (vanishing server gradient) and every
    /// update was let through.
    pub degenerate_fallback: bool,
    /// No update survived the filter; the round's aggregate update is zero.
    pub empty_acceptance: bool,
}

/// `−⟨Δ, g⟩ − ρ‖Δ‖²`.
pub fn lf_score(delta: &ParamVector, server_grad: &ParamVector, rho: f64) -> Result<f64> {
    Ok(-delta.dot(server_grad)? - rho * delta.norm_sq())
}

pub fn angle_filter(
    updates: &BTreeMap<usize, ParamVector>,
    server_grad: &ParamVector,
    alpha: f64,
) -> Result<FilterReport> {
    let server_grad_norm = server_grad.norm();
    if server_grad_norm < ZERO_NORM_TOL {
        return Err(Error::DegenerateGradient {
            norm: server_grad_norm,
        });
    }
    let descent = server_grad.scale(-1.0);
    let mut report = FilterReport {
        server_grad_norm,
        ..Default::default()
    };
    for (&id, delta) in updates {
        let cos = delta.cos_sim(&descent)?;
        report.scores.insert(id, cos);
        if cos >= alpha {
            report.accepted.push(id);
        }
    }
    Ok(report)
}

/// Rejects the `floor(θ·|S|)` lowest-scoring updates; equal scores are
/// rejected lower client id first.
pub fn loss_filter(
    updates: &BTreeMap<usize, ParamVector>,
    server_grad: &ParamVector,
    rho: f64,
    theta: f64,
) -> Result<FilterReport> {
    FilterSpec::Loss { rho, theta }.validate()?;
    let mut report = FilterReport {
        server_grad_norm: server_grad.norm(),
        ..Default::default()
    };
    let mut ranked = Vec::with_capacity(updates.len());
    for (&id, delta) in updates {
        let score = lf_score(delta, server_grad, rho)?;
        report.scores.insert(id, score);
        ranked.push((score, id));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let rejected = (theta * updates.len() as f64).floor() as usize;
    report.accepted = ranked[rejected..].iter().map(|&(_, id)| id).collect();
    report.accepted.sort_unstable();
    Ok(report)
}

/// `Σ w_i·p_i / Σ w_i`, accumulated in index order.
pub fn average(points: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if points.is_empty() || points.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::config("weights", "must be nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let mut acc = ParamVector::zeros(points[0].len());
    for (p, &w) in points.iter().zip(weights) {
        acc.add_scaled(w, p)?;
    }
    for v in acc.as_mut_slice() {
        *v /= total;
    }
    Ok(acc)
}

fn mean(points: &[&ParamVector]) -> Result<ParamVector> {
    average(points, &vec![1.0; points.len()])
}

/// Huber-style smoothing of `r ↦ r` below `eps`; the Weiszfeld step with
/// weights `1/max(eps, r)` is a majorize-minimize step for this objective.
fn smoothed_norm(r: f64, eps: f64) -> f64 {
    if r >= eps {
        r
    } else {
        r * r / (2.0 * eps) + eps / 2.0
    }
}

fn distances(z: &ParamVector, points: &[&ParamVector]) -> Result<Vec<f64>> {
    points.iter().map(|p| z.distance(p)).collect()
}

/// `Σ_i ‖z − x_i‖`.
pub fn geomed_objective(z: &ParamVector, points: &[&ParamVector]) -> Result<f64> {
    Ok(distances(z, points)?.iter().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeiszfeldTrace {
    pub median: ParamVector,
    /// Smoothed objective at the initial point and after every accepted step.
    pub objectives: Vec<f64>,
}

impl WeiszfeldTrace {
    pub fn iterations(&self) -> usize {
        self.objectives.len() - 1
    }
}

pub fn geometric_median(
    points: &[&ParamVector],
    spec: &AggregatorSpec,
    mode: GeoMedMode,
) -> Result<ParamVector> {
    geometric_median_traced(points, spec, mode).map(|t| t.median)
}

/// Smoothed Weiszfeld iteration started from the coordinate-wise mean. A step
/// that would raise the smoothed objective (possible only through rounding)
/// ends the iteration at the previous iterate.
pub fn geometric_median_traced(
    points: &[&ParamVector],
    spec: &AggregatorSpec,
    mode: GeoMedMode,
) -> Result<WeiszfeldTrace> {
    spec.validate()?;
    let (max_iters, rel_tol) = match mode {
        GeoMedMode::Online => (spec.weiszfeld_max_iters, spec.weiszfeld_rel_tol),
        GeoMedMode::Reference => (REFERENCE_MAX_ITERS, REFERENCE_REL_TOL),
    };
    let eps = spec.weiszfeld_smoothing;
    let objective =
        |d: &[f64]| -> f64 { d.iter().fold(0.0, |acc, &r| acc + smoothed_norm(r, eps)) };

    let mut z = mean(points)?;
    let mut dist = distances(&z, points)?;
    let mut current = objective(&dist);
    let mut objectives = vec![current];

    for _ in 0..max_iters {
        let weights: Vec<f64> = dist.iter().map(|&r| 1.0 / r.max(eps)).collect();
        let next = average(points, &weights)?;
        let next_dist = distances(&next, points)?;
        let next_obj = objective(&next_dist);
        if next_obj > current {
            break;
        }
        let decrease = current - next_obj;
        z = next;
        dist = next_dist;
        objectives.push(next_obj);
        let converged = decrease <= rel_tol * current;
        current = next_obj;
        if converged {
            break;
        }
    }
    Ok(WeiszfeldTrace {
        median: z,
        objectives,
    })
}

/// Aggregates client models: updates are taken relative to `x_t` and passed to
/// [`robust_aggregate_updates`].
pub fn robust_aggregate(
    x_t: &ParamVector,
    client_models: &BTreeMap<usize, ParamVector>,
    server_grad: &ParamVector,
    filter: &FilterSpec,
    agg: &AggregatorSpec,
    tau: f64,
) -> Result<(ParamVector, FilterReport)> {
    let updates = client_models
        .iter()
        .map(|(&id, m)| Ok((id, m.sub(x_t)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    robust_aggregate_updates(x_t, &updates, server_grad, filter, agg, tau)
}

/// Filter, aggregate, clip, apply. Returns `x̄_t = x_t + Clip_τ(Agg(Δ_accepted))`.
pub fn robust_aggregate_updates(
    x_t: &ParamVector,
    updates: &BTreeMap<usize, ParamVector>,
    server_grad: &ParamVector,
    filter: &FilterSpec,
    agg: &AggregatorSpec,
    tau: f64,
) -> Result<(ParamVector, FilterReport)> {
    if updates.is_empty() {
        return Err(Error::config("clients", "no client updates to aggregate"));
    }
    if !(tau > 0.0) {
        return Err(Error::config("server.tau", "must be > 0"));
    }
    let pass_all = |grad_norm: f64| FilterReport {
        accepted: updates.keys().copied().collect(),
        server_grad_norm: grad_norm,
        ..Default::default()
    };
    let mut report = match *filter {
        FilterSpec::None => pass_all(server_grad.norm()),
        FilterSpec::Angle { alpha } => match angle_filter(updates, server_grad, alpha) {
            Err(Error::DegenerateGradient { norm }) => FilterReport {
                degenerate_fallback: true,
                ..pass_all(norm)
            },
            other => other?,
        },
        FilterSpec::Loss { rho, theta } => loss_filter(updates, server_grad, rho, theta)?,
    };

    if report.accepted.is_empty() {
        report.empty_acceptance = true;
        return Ok((x_t.clone(), report));
    }
    let accepted: Vec<&ParamVector> = report.accepted.iter().map(|id| &updates[id]).collect();
    let combined = match agg.kind {
        AggregatorKind::Average => mean(&accepted)?,
        AggregatorKind::Geomed => geometric_median(&accepted, agg, GeoMedMode::Online)?,
    };
    let step = combined.clip_norm(tau)?;
    Ok((x_t.add(&step)?, report))
}
