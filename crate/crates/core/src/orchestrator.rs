//! The outer training loop: sample, collect, defend, learn at the server,
//! evaluate.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::adversary::{assign_attackers, client_update, Behavior};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{dirichlet_partition, make_server_dataset, BlobModel, Dataset};
use crate::defense::{
    robust_aggregate_updates, AggregatorKind, AggregatorSpec, FilterReport, FilterSpec,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{LossSpec, ModelArch};
use crate::params::ParamVector;
use crate::seed::{self, stream, SimRng, Stream};
use crate::trainer::{epochs_to_steps, local_sgd, SgdPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub id: usize,
    pub shard: Dataset,
    /// `n_i / n`.
    pub weight: f64,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: usize,
    pub model: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// `None` on rounds skipped by `run.eval_every`.
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub accepted_ids: Vec<usize>,
    pub num_malicious_sampled: usize,
    pub num_malicious_accepted: usize,
    pub aggregate_update_norm: f64,
    pub server_update_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub honest_objective: Option<f64>,
    pub filter_report: FilterReport,
}

/// `sample_size` distinct ids drawn uniformly without replacement.
pub fn sample_clients(
    num_clients: usize,
    sample_size: usize,
    rng: &mut SimRng,
) -> Result<Vec<usize>> {
    if sample_size == 0 || sample_size > num_clients {
        return Err(Error::config(
            "clients.sample_size",
            format!("must lie in [1, {num_clients}], got {sample_size}"),
        ));
    }
    Ok(index::sample(rng, num_clients, sample_size).into_vec())
}

/// Argmax accuracy (ties to the lowest class) and mean cross-entropy without
/// weight decay.
pub fn evaluate(arch: &ModelArch, x: &ParamVector, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut correct = 0usize;
    for e in &test.examples {
        if arch.predict(x, &e.features)? == e.label {
            correct += 1;
        }
    }
    let loss = arch.cross_entropy(x, &test.examples)?;
    Ok((correct as f64 / test.len() as f64, loss))
}

/// Everything one repeat of an experiment needs, built from the config and
/// that repeat's seed.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub arch: ModelArch,
    pub loss: LossSpec,
    pub clients: Vec<ClientSpec>,
    client_plans: Vec<SgdPlan>,
    pub server_data: Dataset,
    /// `None` when `gamma = 0`: server learning is the identity.
    server_plan: Option<SgdPlan>,
    pub test: Dataset,
    pub filter: FilterSpec,
    pub aggregator: AggregatorSpec,
    pub tau: f64,
    pub eta_g: f64,
    pub sample_size: usize,
    pub rounds: usize,
    pub eval_every: usize,
    pub log_honest_objective: bool,
    seed: u64,
    execution: Execution,
}

/// Seed of repeat `repeat` under `master_seed`.
pub fn repeat_seed(master_seed: u64, repeat: usize) -> u64 {
    seed::derive(master_seed, &[Stream::Repeat as u64, repeat as u64])
}

fn load_csv(path: &std::path::Path, num_classes: usize) -> Result<Dataset> {
    Dataset::from_csv(path, num_classes)
}

impl Simulation {
    pub fn build(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = &config.data;

        let (train, test, server_data, input_dim) = match d.source {
            DataSource::Blobs => {
                let input_dim = d.input_dim.expect("validated");
                let blobs = BlobModel::new(d.num_classes, input_dim, d.spread)?;
                let train =
                    blobs.sample(d.train_per_class, &mut stream(seed, Stream::TrainData, &[]));
                let test = blobs.sample(d.test_per_class, &mut stream(seed, Stream::TestData, &[]));
                let server = match &config.server_data.path {
                    Some(path) => load_csv(path, d.num_classes)?,
                    None => make_server_dataset(
                        &blobs,
                        config.server_data.size,
                        config.server_data.mean_shift,
                        &config.server_data.drop_classes,
                        &mut stream(seed, Stream::ServerData, &[]),
                    )?,
                };
                (train, test, server, input_dim)
            }
            DataSource::Csv => {
                let train = load_csv(d.train_path.as_ref().expect("validated"), d.num_classes)?;
                let test = load_csv(d.test_path.as_ref().expect("validated"), d.num_classes)?;
                let server = load_csv(
                    config.server_data.path.as_ref().expect("validated"),
                    d.num_classes,
                )?;
                let input_dim = train
                    .input_dim()
                    .ok_or_else(|| Error::config("data.train_path", "dataset is empty"))?;
                (train, test, server, input_dim)
            }
        };
        for (key, set) in [
            ("data.test_path", &test),
            ("server_data", &server_data),
            ("data.train_path", &train),
        ] {
            if set.is_empty() {
                return Err(Error::config(key, "dataset is empty"));
            }
            if set.input_dim() != Some(input_dim) {
                return Err(Error::config(
                    key,
                    "feature dimension differs from the training data",
                ));
            }
        }

        let arch = ModelArch::new(
            config.model.kind,
            input_dim,
            config.model.hidden_dim,
            d.num_classes,
        )?;
        let loss = LossSpec::new(config.model.weight_decay)?;

        let plan = dirichlet_partition(
            &train,
            d.num_clients,
            d.dirichlet_alpha,
            &mut stream(seed, Stream::Partition, &[]),
        )?;
        let behaviors = assign_attackers(
            d.num_clients,
            config.attack.beta,
            config.attack.sign_flip_nu,
            config.attack.label_flip_nu,
            &mut stream(seed, Stream::Attackers, &[]),
        )?;
        let total = train.len() as f64;
        let clients: Vec<ClientSpec> = plan
            .shards
            .iter()
            .zip(behaviors)
            .enumerate()
            .map(|(id, (shard, behavior))| ClientSpec {
                id,
                shard: train.subset(shard),
                weight: shard.len() as f64 / total,
                behavior,
            })
            .collect();

        let c = &config.clients;
        let client_plans = clients
            .iter()
            .map(|client| {
                let steps = c.steps.unwrap_or_else(|| {
                    epochs_to_steps(
                        c.epochs.expect("resolved"),
                        client.shard.len(),
                        c.batch_size,
                    )
                });
                SgdPlan::new(c.learning_rate, steps, c.batch_size, 1.0)
            })
            .collect::<Result<Vec<_>>>()?;

        let s = &config.server;
        let server_plan = if s.gamma > 0.0 {
            let steps = s.steps.unwrap_or_else(|| {
                epochs_to_steps(s.epochs.expect("resolved"), server_data.len(), s.batch_size)
            });
            Some(SgdPlan::new(s.learning_rate, steps, s.batch_size, s.gamma)?)
        } else {
            None
        };

        Ok(Simulation {
            arch,
            loss,
            clients,
            client_plans,
            server_data,
            server_plan,
            test,
            filter: config.defense.filter_spec(),
            aggregator: config.defense.aggregator_spec(),
            tau: s.tau,
            eta_g: s.eta_g,
            sample_size: c.sample_size,
            rounds: config.run.rounds,
            eval_every: config.run.eval_every,
            log_honest_objective: config.run.log_honest_objective,
            seed,
            execution: Execution::default(),
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn client_plan(&self, id: usize) -> &SgdPlan {
        &self.client_plans[id]
    }

    pub fn server_plan(&self) -> Option<&SgdPlan> {
        self.server_plan.as_ref()
    }

    pub fn initial_state(&self) -> RoundState {
        RoundState {
            round: 0,
            model: self
                .arch
                .init_params(&mut stream(self.seed, Stream::Init, &[])),
        }
    }

    pub fn sampling_rng(&self, round: usize) -> SimRng {
        stream(self.seed, Stream::Sampling, &[round as u64])
    }

    pub fn client_rng(&self, id: usize, round: usize) -> SimRng {
        stream(self.seed, Stream::Client, &[id as u64, round as u64])
    }

    pub fn server_rng(&self, round: usize) -> SimRng {
        stream(self.seed, Stream::Server, &[round as u64])
    }

    /// Updates uploaded by the sampled clients, keyed by id.
    pub fn collect_updates(
        &self,
        ids: &[usize],
        x_t: &ParamVector,
        round: usize,
    ) -> Result<BTreeMap<usize, ParamVector>> {
        let updates = self.execution.map(ids, |&id| {
            let mut rng = self.client_rng(id, round);
            client_update(
                &self.arch,
                &self.loss,
                &self.clients[id],
                x_t,
                &self.client_plans[id],
                &mut rng,
            )
            .map(|u| (id, u))
        });
        updates.into_iter().collect()
    }

    /// `Σ_{i honest} p_i f_i(x)` over full shards.
    pub fn honest_objective(&self, x: &ParamVector) -> Result<f64> {
        let terms = self.execution.map(&self.clients, |c| {
            if c.behavior.is_malicious() {
                Ok(0.0)
            } else {
                self.arch
                    .loss(&self.loss, x, &c.shard.examples)
                    .map(|f| c.weight * f)
            }
        });
        terms.into_iter().try_fold(0.0, |acc, t| t.map(|t| acc + t))
    }

    pub fn run_round(&self, state: &RoundState) -> Result<(RoundState, RoundRecord)> {
        let t = state.round;
        let x_t = &state.model;

        let ids = sample_clients(
            self.clients.len(),
            self.sample_size,
            &mut self.sampling_rng(t),
        )?;
        let updates = self.collect_updates(&ids, x_t, t)?;
        let server_grad = self
            .arch
            .gradient(&self.loss, x_t, &self.server_data.examples)?;

        let (x_bar, report) = if self.eta_g != 1.0 {
            // Pseudo-gradient step on the plain mean; only valid without a
            // filter and with averaging (checked by the config).
            debug_assert!(self.filter == FilterSpec::None);
            debug_assert!(self.aggregator.kind == AggregatorKind::Average);
            let refs: Vec<&ParamVector> = updates.values().collect();
            let mean = crate::defense::average(&refs, &vec![1.0; refs.len()])?;
            let step = mean.scale(self.eta_g).clip_norm(self.tau)?;
            let report = FilterReport {
                accepted: updates.keys().copied().collect(),
                server_grad_norm: server_grad.norm(),
                ..Default::default()
            };
            (x_t.add(&step)?, report)
        } else {
            robust_aggregate_updates(
                x_t,
                &updates,
                &server_grad,
                &self.filter,
                &self.aggregator,
                self.tau,
            )?
        };

        let (next, server_step_norm) = match &self.server_plan {
            Some(plan) => {
                let y = local_sgd(
                    &self.arch,
                    &self.loss,
                    &x_bar,
                    &self.server_data,
                    plan,
                    &mut self.server_rng(t),
                )?;
                let step = y.sub(&x_bar)?.clip_norm(self.tau)?;
                (x_bar.add(&step)?, step.norm())
            }
            None => (x_bar.clone(), 0.0),
        };
        if !next.is_finite() {
            return Err(Error::NonFinite { round: t });
        }

        let malicious = |id: &usize| self.clients[*id].behavior.is_malicious();
        let evaluate_now = t.is_multiple_of(self.eval_every) || t + 1 == self.rounds;
        let (test_accuracy, test_loss) = if evaluate_now {
            let (acc, loss) = evaluate(&self.arch, &next, &self.test)?;
            (Some(acc), Some(loss))
        } else {
            (None, None)
        };
        let honest_objective = if self.log_honest_objective {
            Some(self.honest_objective(&next)?)
        } else {
            None
        };

        let record = RoundRecord {
            round: t,
            test_accuracy,
            test_loss,
            accepted_ids: report.accepted.clone(),
            num_malicious_sampled: ids.iter().filter(|id| malicious(id)).count(),
            num_malicious_accepted: report.accepted.iter().filter(|id| malicious(id)).count(),
            aggregate_update_norm: x_bar.distance(x_t)?,
            server_update_norm: server_step_norm,
            honest_objective,
            filter_report: report,
        };
        Ok((
            RoundState {
                round: t + 1,
                model: next,
            },
            record,
        ))
    }

    /// Runs all configured rounds from the initial model.
    pub fn run(&self) -> Result<Vec<RoundRecord>> {
        let mut state = self.initial_state();
        let mut records = Vec::with_capacity(self.rounds);
        for _ in 0..self.rounds {
            let (next, record) = self.run_round(&state)?;
            records.push(record);
            state = next;
        }
        Ok(records)
    }
}

/// One repeat of the experiment, seeded by `repeat_seed(master, repeat)`.
pub fn run_repeat(
    config: &ExperimentConfig,
    repeat: usize,
    execution: Execution,
) -> Result<Vec<RoundRecord>> {
    Simulation::build(config, repeat_seed(config.run.seed, repeat))?
        .with_execution(execution)
        .run()
}

/// The first repeat of `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    run_repeat(config, 0, Execution::default())
}
