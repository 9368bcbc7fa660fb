//! Byzantine client behaviors: sign flipping and label flipping.
//!
//! Attackers run the same local SGD as honest clients. A sign flipper reports
//! `x_t − ν·Δ` instead of `x_t + Δ`; a label flipper trains on labels shifted
//! by one class with its learning rate scaled by `ν`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::shift_labels;
use crate::error::{Error, Result};
use crate::model::{LossSpec, ModelArch};
use crate::orchestrator::ClientSpec;
use crate::params::ParamVector;
use crate::seed::SimRng;
use crate::trainer::{honest_client_round, local_sgd, SgdPlan};

/// Default range of `ν` for sign flippers.
pub const SIGN_FLIP_NU: [f64; 2] = [0.1, 10.1];
/// Default range of `ν` for label flippers.
pub const LABEL_FLIP_NU: [f64; 2] = [0.1, 2.1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    SignFlip { nu: f64 },
    LabelFlip { nu: f64 },
}

impl Behavior {
    pub fn is_malicious(&self) -> bool {
        !matches!(self, Behavior::Honest)
    }
}

/// Marks `round(β·N)` clients, chosen uniformly without replacement, as
/// attackers; half sign flippers (the odd one out included), half label
/// flippers, each with a fixed `ν` drawn from its kind's range.
pub fn assign_attackers(
    num_clients: usize,
    beta: f64,
    sign_flip_nu: [f64; 2],
    label_flip_nu: [f64; 2],
    rng: &mut SimRng,
) -> Result<Vec<Behavior>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::config(
            "attack.beta",
            format!("must lie in [0, 1), got {beta}"),
        ));
    }
    for (key, [lo, hi]) in [
        ("attack.sign_flip_nu", sign_flip_nu),
        ("attack.label_flip_nu", label_flip_nu),
    ] {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(key, "must be a range 0 < lo <= hi"));
        }
    }

    let num_malicious = ((beta * num_clients as f64).round() as usize).min(num_clients);
    let chosen = index::sample(rng, num_clients, num_malicious).into_vec();
    let num_sign = num_malicious.div_ceil(2);

    let mut behaviors = vec![Behavior::Honest; num_clients];
    for (k, &id) in chosen.iter().enumerate() {
        behaviors[id] = if k < num_sign {
            Behavior::SignFlip {
                nu: draw(rng, sign_flip_nu),
            }
        } else {
            Behavior::LabelFlip {
                nu: draw(rng, label_flip_nu),
            }
        };
    }
    Ok(behaviors)
}

fn draw(rng: &mut SimRng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// The update `x_honest − x_t` an honest client would upload.
pub fn honest_update(
    arch: &ModelArch,
    spec: &LossSpec,
    client: &ClientSpec,
    x_t: &ParamVector,
    plan: &SgdPlan,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    honest_client_round(arch, spec, client, x_t, plan, rng)?.sub(x_t)
}

/// Trains honestly and uploads `−ν·Δ`.
pub fn sign_flip_update(
    arch: &ModelArch,
    spec: &LossSpec,
    client: &ClientSpec,
    nu: f64,
    x_t: &ParamVector,
    plan: &SgdPlan,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    Ok(honest_update(arch, spec, client, x_t, plan, rng)?.scale(-nu))
}

/// Trains on labels shifted by one class with learning rate `ν·η` and
/// uploads the resulting displacement.
pub fn label_flip_update(
    arch: &ModelArch,
    spec: &LossSpec,
    client: &ClientSpec,
    nu: f64,
    x_t: &ParamVector,
    plan: &SgdPlan,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    let poisoned = shift_labels(&client.shard, 1);
    let plan = plan.with_learning_rate(nu * plan.learning_rate)?;
    local_sgd(arch, spec, x_t, &poisoned, &plan, rng)?.sub(x_t)
}

/// The model `x_t − ν·(x_honest − x_t)` a sign flipper reports.
pub fn sign_flip_round(
    arch: &ModelArch,
    spec: &LossSpec,
    client: &ClientSpec,
    nu: f64,
    x_t: &ParamVector,
    plan: &SgdPlan,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    x_t.add(&sign_flip_update(arch, spec, client, nu, x_t, plan, rng)?)
}

/// The model a label flipper reports.
pub fn label_flip_round(
    arch: &ModelArch,
    spec: &LossSpec,
    client: &ClientSpec,
    nu: f64,
    x_t: &ParamVector,
    plan: &SgdPlan,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    let poisoned = shift_labels(&client.shard, 1);
    let plan = plan.with_learning_rate(nu * plan.learning_rate)?;
    local_sgd(arch, spec, x_t, &poisoned, &plan, rng)
}

/// The update uploaded by `client` in this round, according to its behavior.
pub fn client_update(
    arch: &ModelArch,
    spec: &LossSpec,
    client: &ClientSpec,
    x_t: &ParamVector,
    plan: &SgdPlan,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    match client.behavior {
        Behavior::Honest => honest_update(arch, spec, client, x_t, plan, rng),
        Behavior::SignFlip { nu } => sign_flip_update(arch, spec, client, nu, x_t, plan, rng),
        Behavior::LabelFlip { nu } => label_flip_update(arch, spec, client, nu, x_t, plan, rng),
    }
}
