use robustfl::data::{dirichlet_partition, make_blobs, make_server_dataset, BlobModel, Dataset};
use robustfl::model::{LossSpec, ModelArch};
use robustfl::orchestrator::evaluate;
use robustfl::seed::{stream, Stream};
use robustfl::trainer::{local_sgd, SgdPlan};
use robustfl::ParamVector;

fn ten_class(seed: u64) -> Dataset {
    make_blobs(10, 5, 1000, 1.0, &mut stream(seed, Stream::TrainData, &[])).unwrap()
}

/// Average number of classes holding at least 5% of a shard.
fn mean_classes_per_shard(data: &Dataset, alpha: f64, seed: u64) -> f64 {
    let plan =
        dirichlet_partition(data, 50, alpha, &mut stream(seed, Stream::Partition, &[])).unwrap();
    let total: usize = plan
        .shards
        .iter()
        .map(|s| {
            let counts = data.subset(s).class_counts();
            counts
                .iter()
                .filter(|&&c| c as f64 >= 0.05 * s.len() as f64)
                .count()
        })
        .sum();
    total as f64 / plan.shards.len() as f64
}

#[test]
fn huge_alpha_gives_near_iid_shards() {
    for seed in 0..5 {
        let data = ten_class(seed);
        let global: Vec<f64> = data
            .class_counts()
            .iter()
            .map(|&c| c as f64 / data.len() as f64)
            .collect();
        let plan =
            dirichlet_partition(&data, 50, 1e6, &mut stream(seed, Stream::Partition, &[])).unwrap();
        for s in &plan.shards {
            let counts = data.subset(s).class_counts();
            for (c, &g) in counts.iter().zip(&global) {
                let share = *c as f64 / s.len() as f64;
                assert!(
                    (share - g).abs() <= 0.2 * g,
                    "seed {seed}: share {share} vs {g}"
                );
            }
        }
    }
}

#[test]
fn small_alpha_concentrates_classes() {
    for seed in 0..5 {
        let data = ten_class(seed);
        assert!(
            mean_classes_per_shard(&data, 0.1, seed) < mean_classes_per_shard(&data, 1e6, seed)
        );
    }
}

#[test]
fn partition_is_seeded() {
    let data = ten_class(0);
    let a = dirichlet_partition(&data, 50, 0.3, &mut stream(1, Stream::Partition, &[])).unwrap();
    let b = dirichlet_partition(&data, 50, 0.3, &mut stream(1, Stream::Partition, &[])).unwrap();
    let c = dirichlet_partition(&data, 50, 0.3, &mut stream(2, Stream::Partition, &[])).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn tiny_spread_blobs_are_linearly_separable() {
    let data = make_blobs(5, 4, 40, 1e-6, &mut stream(3, Stream::TrainData, &[])).unwrap();
    let arch = ModelArch::softmax_regression(4, 5).unwrap();
    let spec = LossSpec::new(0.0).unwrap();
    let plan = SgdPlan::new(0.5, 300, 20, 1.0).unwrap();
    let x = local_sgd(
        &arch,
        &spec,
        &ParamVector::zeros(arch.num_params()),
        &data,
        &plan,
        &mut stream(3, Stream::Client, &[]),
    )
    .unwrap();
    assert_eq!(evaluate(&arch, &x, &data).unwrap().0, 1.0);
}

#[test]
fn unshifted_server_data_matches_client_distribution() {
    let blobs = BlobModel::new(3, 4, 1.0).unwrap();
    let server = make_server_dataset(
        &blobs,
        3000,
        0.0,
        &[],
        &mut stream(4, Stream::ServerData, &[]),
    )
    .unwrap();
    assert_eq!(server.class_counts(), vec![1000, 1000, 1000]);
    for (c, mu) in blobs.means.iter().enumerate() {
        let members: Vec<_> = server.examples.iter().filter(|e| e.label == c).collect();
        for (j, m) in mu.iter().enumerate() {
            let mean = members.iter().map(|e| e.features[j]).sum::<f64>() / members.len() as f64;
            // Five standard errors of a unit-variance mean over 1000 draws.
            assert!((mean - m).abs() < 5.0 / 1000f64.sqrt());
        }
    }
}

#[test]
fn shifted_server_data_moves_class_means_by_delta() {
    let blobs = BlobModel::new(3, 4, 0.01).unwrap();
    let server = make_server_dataset(
        &blobs,
        3000,
        1.0,
        &[0],
        &mut stream(5, Stream::ServerData, &[]),
    )
    .unwrap();
    assert!(server.examples.iter().all(|e| e.label != 0));
    for c in [1, 2] {
        let members: Vec<_> = server.examples.iter().filter(|e| e.label == c).collect();
        let shift: f64 = (0..4)
            .map(|j| {
                let mean =
                    members.iter().map(|e| e.features[j]).sum::<f64>() / members.len() as f64;
                (mean - blobs.means[c][j]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!((shift - 1.0).abs() < 0.01);
    }
}
