//! Local SGD, shared by honest clients, attackers and the server.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LossSpec, ModelArch};
use crate::orchestrator::ClientSpec;
use crate::params::ParamVector;
use crate::seed::SimRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdPlan {
    pub learning_rate: f64,
    pub num_steps: usize,
    pub batch_size: usize,
    /// Multiplier on the loss: 1 for clients, gamma for the server.
    pub loss_scale: f64,
}

impl SgdPlan {
    pub fn new(
        learning_rate: f64,
        num_steps: usize,
        batch_size: usize,
        loss_scale: f64,
    ) -> Result<Self> {
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be >= 0 and finite"));
        }
        if num_steps == 0 {
            return Err(Error::config("num_steps", "must be >= 1"));
        }
        if batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(loss_scale >= 0.0) || !loss_scale.is_finite() {
            return Err(Error::config("loss_scale", "must be >= 0 and finite"));
        }
        Ok(SgdPlan {
            learning_rate,
            num_steps,
            batch_size,
            loss_scale,
        })
    }

    pub fn with_learning_rate(self, learning_rate: f64) -> Result<Self> {
        SgdPlan::new(
            learning_rate,
            self.num_steps,
            self.batch_size,
            self.loss_scale,
        )
    }
}

/// What a [`local_sgd_traced`] run did besides producing a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SgdTrace {
    pub gradient_evals: usize,
    pub reshuffles: usize,
}

/// `E·ceil(n/B)`: steps equivalent to `E` passes over `n` examples.
pub fn epochs_to_steps(num_epochs: usize, shard_size: usize, batch_size: usize) -> usize {
    num_epochs * shard_size.div_ceil(batch_size)
}

pub fn local_sgd(
    arch: &ModelArch,
    spec: &LossSpec,
    x0: &ParamVector,
    data: &Dataset,
    plan: &SgdPlan,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    local_sgd_traced(arch, spec, x0, data, plan, rng).map(|(y, _)| y)
}

/// Runs exactly `plan.num_steps` steps of `y ← y − η·γ'·∇f(y; batch)` over
/// epoch-shuffled minibatches. The final batch of an epoch may be short.
pub fn local_sgd_traced(
    arch: &ModelArch,
    spec: &LossSpec,
    x0: &ParamVector,
    data: &Dataset,
    plan: &SgdPlan,
    rng: &mut SimRng,
) -> Result<(ParamVector, SgdTrace)> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let step = -(plan.learning_rate * plan.loss_scale);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cursor = 0;
    let mut trace = SgdTrace::default();
    let mut y = x0.clone();

    for _ in 0..plan.num_steps {
        if cursor >= n {
            order.shuffle(rng);
            cursor = 0;
            trace.reshuffles += 1;
        }
        let end = (cursor + plan.batch_size).min(n);
        let batch = order[cursor..end].iter().map(|&i| &data.examples[i]);
        let g = arch.gradient(spec, &y, batch)?;
        trace.gradient_evals += 1;
        y.add_scaled(step, &g)?;
        cursor = end;
    }
    Ok((y, trace))
}

/// An honest client's round: plain local SGD from the broadcast model.
pub fn honest_client_round(
    arch: &ModelArch,
    spec: &LossSpec,
    client: &ClientSpec,
    x_t: &ParamVector,
    plan: &SgdPlan,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    local_sgd(arch, spec, x_t, &client.shard, plan, rng)
}
