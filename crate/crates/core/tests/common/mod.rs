//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use robustfl::config::{parse_config, ExperimentConfig};
use robustfl::data::{Dataset, LabeledExample};
use robustfl::model::{LossSpec, ModelArch};
use robustfl::orchestrator::Simulation;
use robustfl::seed::SimRng;
use robustfl::ParamVector;

/// Central finite differences of the regularized loss.
pub fn fd_gradient(
    arch: &ModelArch,
    spec: &LossSpec,
    x: &ParamVector,
    batch: &[LabeledExample],
) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let xi = x[i];
            let h = 1e-5;
            probe.as_mut_slice()[i] = xi + h;
            let up = arch.loss(spec, &probe, batch).unwrap();
            probe.as_mut_slice()[i] = xi - h;
            let down = arch.loss(spec, &probe, batch).unwrap();
            probe.as_mut_slice()[i] = xi;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

pub fn random_batch(rng: &mut SimRng, n: usize, dim: usize, classes: usize) -> Vec<LabeledExample> {
    (0..n)
        .map(|_| LabeledExample {
            features: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            label: rng.random_range(0..classes),
        })
        .collect()
}

pub fn random_params(rng: &mut SimRng, n: usize, scale: f64) -> ParamVector {
    ParamVector::new((0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

fn sum_dist(z: [f64; 2], pts: &[[f64; 2]]) -> f64 {
    pts.iter()
        .map(|p| ((z[0] - p[0]).powi(2) + (z[1] - p[1]).powi(2)).sqrt())
        .sum()
}

/// Minimum of `Σ‖z − p_i‖` over the plane by a coarse grid over the bounding
/// box, then pattern search with a shrinking step from the best grid point
/// and from every data point.
pub fn brute_geomed_2d(pts: &[[f64; 2]]) -> f64 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let n = 200;
    let mut best = (f64::INFINITY, [0.0; 2]);
    for i in 0..=n {
        for j in 0..=n {
            let z = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64,
            ];
            let f = sum_dist(z, pts);
            if f < best.0 {
                best = (f, z);
            }
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let mut starts = vec![best.1];
    starts.extend_from_slice(pts);
    starts
        .into_iter()
        .map(|start| pattern_search(start, span / n as f64, pts))
        .fold(best.0, f64::min)
}

fn pattern_search(mut z: [f64; 2], mut step: f64, pts: &[[f64; 2]]) -> f64 {
    let mut f = sum_dist(z, pts);
    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;
    let dirs = [
        [1.0, 0.0],
        [-1.0, 0.0],
        [0.0, 1.0],
        [0.0, -1.0],
        [H, H],
        [-H, H],
        [H, -H],
        [-H, -H],
    ];
    while step > 1e-15 {
        let mut moved = false;
        for d in dirs {
            let c = [z[0] + step * d[0], z[1] + step * d[1]];
            let fc = sum_dist(c, pts);
            if fc < f {
                (z, f, moved) = (c, fc, true);
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    f
}

/// Plain FedAvg written out from scratch: same sampling and per-client RNG
/// streams as the simulator, own minibatch SGD loop, unweighted mean of the
/// updates in ascending client id.
pub fn fedavg_reference(sim: &Simulation, rounds: usize) -> Vec<ParamVector> {
    let mut x = sim.initial_state().model;
    let mut out = Vec::new();
    for t in 0..rounds {
        let mut ids =
            rand::seq::index::sample(&mut sim.sampling_rng(t), sim.clients.len(), sim.sample_size)
                .into_vec();
        ids.sort_unstable();
        let mut sum = vec![0.0; x.len()];
        for &id in &ids {
            let client = &sim.clients[id];
            let plan = sim.client_plan(id);
            let mut rng = sim.client_rng(id, t);
            let n = client.shard.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut cursor = 0;
            let mut y = x.clone();
            for _ in 0..plan.num_steps {
                if cursor >= n {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let end = (cursor + plan.batch_size).min(n);
                let batch: Vec<LabeledExample> = order[cursor..end]
                    .iter()
                    .map(|&i| client.shard.examples[i].clone())
                    .collect();
                let g = sim.arch.gradient(&sim.loss, &y, &batch).unwrap();
                let lr = plan.learning_rate;
                for (yi, gi) in y.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *yi += -lr * gi;
                }
                cursor = end;
            }
            for (s, (yi, xi)) in sum.iter_mut().zip(y.as_slice().iter().zip(x.as_slice())) {
                *s += yi - xi;
            }
        }
        let k = ids.len() as f64;
        let next: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(&sum)
            .map(|(xi, s)| xi + s / k)
            .collect();
        x = ParamVector::new(next);
        out.push(x.clone());
    }
    out
}

/// A small blob experiment that runs in milliseconds.
pub const SMALL: &str = r#"
[model]
kind = "softmax-regression"

[data]
num_classes = 3
input_dim = 4
train_per_class = 60
test_per_class = 20
num_clients = 8

[server_data]
size = 30

[clients]
sample_size = 4
batch_size = 10

[server]
batch_size = 10

[run]
rounds = 6
seed = 42
repeats = 2
rolling_window = 3
"#;

pub fn small() -> ExperimentConfig {
    parse_config(SMALL).unwrap()
}

/// The scaled blob experiment with the given knobs.
pub fn scaled(beta: f64, gamma: f64, filter: &str, aggregator: &str, rho: f64) -> ExperimentConfig {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/scaled.toml"
    ))
    .unwrap();
    let mut c = parse_config(&text).unwrap();
    c.attack.beta = beta;
    c.server.gamma = gamma;
    c.defense.filter = match filter {
        "none" => robustfl::config::FilterKind::None,
        "angle" => robustfl::config::FilterKind::Angle,
        "loss" => robustfl::config::FilterKind::Loss,
        other => panic!("unknown filter {other}"),
    };
    c.defense.aggregator = match aggregator {
        "geomed" => robustfl::defense::AggregatorKind::Geomed,
        "average" => robustfl::defense::AggregatorKind::Average,
        other => panic!("unknown aggregator {other}"),
    };
    c.defense.rho = rho;
    c.validate().unwrap();
    c
}

pub fn dataset(points: &[(&[f64], usize)], classes: usize) -> Dataset {
    Dataset::new(
        points
            .iter()
            .map(|(f, l)| LabeledExample {
                features: f.to_vec(),
                label: *l,
            })
            .collect(),
        classes,
    )
    .unwrap()
}
