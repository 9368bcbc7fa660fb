//! Dataset construction.
//!
//! Synthetic Gaussian-blob classification data, CSV loading, per-class
//! Dirichlet partitioning across clients, label shifting, and a
//! distribution-shifted (and possibly class-incomplete) server dataset.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SimRng;

/// Radius of the sphere the class means are placed on.
pub const MEAN_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>, num_classes: usize) -> Result<Self> {
        if let Some(bad) = examples.iter().find(|e| e.label >= num_classes) {
            return Err(Error::config(
                "label",
                format!("label {} out of range for {num_classes} classes", bad.label),
            ));
        }
        Ok(Dataset {
            examples,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.len())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// New dataset made of the examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Loads `f0,...,f{m-1},label` CSV with a header row.
    pub fn from_csv(path: &Path, num_classes: usize) -> Result<Dataset> {
        let bad = |message: String| Error::Dataset {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let width = headers.len();
        if width < 2 || headers.get(width - 1) != Some("label") {
            return Err(bad("last header column must be `label`".into()));
        }
        for (j, h) in headers.iter().take(width - 1).enumerate() {
            if h != format!("f{j}") {
                return Err(bad(format!("expected header `f{j}`, found `{h}`")));
            }
        }
        let mut examples = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 2;
            let features = record
                .iter()
                .take(width - 1)
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("line {line}: {e}")))?;
            if features.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("line {line}: non-finite feature")));
            }
            let label: usize = record[width - 1]
                .trim()
                .parse()
                .map_err(|e| bad(format!("line {line}: label: {e}")))?;
            if label >= num_classes {
                return Err(bad(format!(
                    "line {line}: label {label} >= num_classes {num_classes}"
                )));
            }
            examples.push(LabeledExample { features, label });
        }
        Ok(Dataset {
            examples,
            num_classes,
        })
    }
}

/// Class-conditional isotropic Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobModel {
    pub means: Vec<Vec<f64>>,
    pub spread: f64,
}

impl BlobModel {
    /// Class means at distinct, deterministic points on the radius-3 sphere:
    /// `±3·e_j` for the first `2m` classes, then fixed pseudo-random
    /// directions.
    pub fn new(num_classes: usize, input_dim: usize, spread: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config("data.num_classes", "must be >= 2"));
        }
        if input_dim < 2 {
            return Err(Error::config("data.input_dim", "must be >= 2"));
        }
        if !(spread > 0.0) {
            return Err(Error::config("data.spread", "must be > 0"));
        }
        let mut extra = <SimRng as rand::SeedableRng>::seed_from_u64(0x5EED_B10B);
        let means = (0..num_classes)
            .map(|c| {
                let mut mu = vec![0.0; input_dim];
                if c < input_dim {
                    mu[c] = MEAN_RADIUS;
                } else if c < 2 * input_dim {
                    mu[c - input_dim] = -MEAN_RADIUS;
                } else {
                    let dir = random_unit(&mut extra, input_dim);
                    for (m, d) in mu.iter_mut().zip(dir) {
                        *m = MEAN_RADIUS * d;
                    }
                }
                mu
            })
            .collect();
        Ok(BlobModel { means, spread })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn input_dim(&self) -> usize {
        self.means[0].len()
    }

    fn draw(&self, mean: &[f64], label: usize, rng: &mut SimRng) -> LabeledExample {
        let features = mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.spread * z
            })
            .collect();
        LabeledExample { features, label }
    }

    /// `per_class` examples of every class, grouped by class then shuffled.
    pub fn sample(&self, per_class: usize, rng: &mut SimRng) -> Dataset {
        let mut examples = Vec::with_capacity(per_class * self.num_classes());
        for (c, mean) in self.means.iter().enumerate() {
            for _ in 0..per_class {
                examples.push(self.draw(mean, c, rng));
            }
        }
        examples.shuffle(rng);
        Dataset {
            examples,
            num_classes: self.num_classes(),
        }
    }
}

fn random_unit(rng: &mut SimRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn make_blobs(
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    spread: f64,
    rng: &mut SimRng,
) -> Result<Dataset> {
    Ok(BlobModel::new(num_classes, input_dim, spread)?.sample(per_class, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub alpha: f64,
    pub num_clients: usize,
    pub shards: Vec<Vec<usize>>,
}

fn sample_dirichlet(alpha: f64, n: usize, rng: &mut SimRng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // Every gamma draw underflowed: put the whole class on one client.
        let mut p = vec![0.0; n];
        p[rng.random_range(0..n)] = 1.0;
        p
    }
}

/// Splits `total` items according to `proportions` by largest remainder
/// (ties to the lower index).
fn largest_remainder(total: usize, proportions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-class Dirichlet split: each class's examples are divided among the
/// clients by a `Dirichlet(alpha·1_N)` draw.
pub fn dirichlet_partition(
    data: &Dataset,
    num_clients: usize,
    alpha: f64,
    rng: &mut SimRng,
) -> Result<PartitionPlan> {
    if num_clients == 0 {
        return Err(Error::config("data.num_clients", "must be >= 1"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::config(
            "data.dirichlet_alpha",
            "must be > 0 and finite",
        ));
    }
    if data.len() < num_clients {
        return Err(Error::config(
            "data.num_clients",
            format!("{} examples cannot fill {num_clients} shards", data.len()),
        ));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for (i, e) in data.examples.iter().enumerate() {
        by_class[e.label].push(i);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for mut members in by_class {
        let proportions = sample_dirichlet(alpha, num_clients, rng);
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let counts = largest_remainder(members.len(), &proportions);
        let mut cursor = 0;
        for (shard, count) in shards.iter_mut().zip(counts) {
            shard.extend_from_slice(&members[cursor..cursor + count]);
            cursor += count;
        }
    }

    // Keep every client trainable.
    while let Some(empty) = shards.iter().position(|s| s.is_empty()) {
        let donor = (0..num_clients)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("num_clients >= 1");
        let moved = shards[donor].pop().expect("donor has >= 2 examples");
        shards[empty].push(moved);
    }
    for shard in &mut shards {
        shard.sort_unstable();
    }

    Ok(PartitionPlan {
        alpha,
        num_clients,
        shards,
    })
}

/// Every label `c` becomes `(c + shift) mod C`.
pub fn shift_labels(data: &Dataset, shift: i64) -> Dataset {
    let c = data.num_classes as i64;
    Dataset {
        examples: data
            .examples
            .iter()
            .map(|e| LabeledExample {
                features: e.features.clone(),
                label: (e.label as i64 + shift).rem_euclid(c) as usize,
            })
            .collect(),
        num_classes: data.num_classes,
    }
}

/// Server dataset drawn from a shifted copy of the client blob model: every
/// class mean is translated by `mean_shift` along its own random direction
/// and the classes in `drop_classes` produce no examples. Remaining classes
/// are filled round-robin, so `n0` examples are spread as evenly as possible.
pub fn make_server_dataset(
    model: &BlobModel,
    n0: usize,
    mean_shift: f64,
    drop_classes: &[usize],
    rng: &mut SimRng,
) -> Result<Dataset> {
    if n0 == 0 {
        return Err(Error::config("server_data.size", "must be >= 1"));
    }
    if !(mean_shift >= 0.0) || !mean_shift.is_finite() {
        return Err(Error::config(
            "server_data.mean_shift",
            "must be >= 0 and finite",
        ));
    }
    let c = model.num_classes();
    if let Some(&bad) = drop_classes.iter().find(|&&k| k >= c) {
        return Err(Error::config(
            "server_data.drop_classes",
            format!("class {bad} does not exist ({c} classes)"),
        ));
    }
    let kept: Vec<usize> = (0..c).filter(|k| !drop_classes.contains(k)).collect();
    if kept.is_empty() {
        return Err(Error::config(
            "server_data.drop_classes",
            "cannot drop every class",
        ));
    }

    let dim = model.input_dim();
    let shifted: Vec<Vec<f64>> = model
        .means
        .iter()
        .map(|mu| {
            let dir = random_unit(rng, dim);
            mu.iter()
                .zip(dir)
                .map(|(m, d)| m + mean_shift * d)
                .collect()
        })
        .collect();

    let mut examples: Vec<LabeledExample> = (0..n0)
        .map(|i| {
            let class = kept[i % kept.len()];
            model.draw(&shifted[class], class, rng)
        })
        .collect();
    examples.shuffle(rng);
    Ok(Dataset {
        examples,
        num_classes: c,
    })
}
