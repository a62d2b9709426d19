use phygraph::models::ModelKind;
use phygraph::physics::PhysicsConfig;
use phygraph::synthgen::{generate, SynthSpec, TopologyGen};
use phygraph::temporal_graph::{load_dataset, DatasetFile, TemporalDataset};
use phygraph::trainer::{default_lambda_grid, lambda_search, train, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lwr_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        name: format!("lwr{seed}"),
        topology: TopologyGen::Ring,
        nodes: 10,
        steps: 60,
        physics: PhysicsConfig::lwr(),
        initial: None,
        noise: 0.01,
        seed,
        lags: 4,
    }
}

fn lwr_dataset(seed: u64) -> TemporalDataset {
    let out = generate(&lwr_spec(seed)).unwrap();
    TemporalDataset::from_file(out.noisy, 4, 0.8).unwrap()
}

#[test]
fn generated_files_load_as_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(&lwr_spec(1)).unwrap().write(dir.path()).unwrap();
    for path in [&manifest.clean, &manifest.noisy] {
        let ds = load_dataset(path, 4).unwrap();
        assert_eq!(ds.node_count(), 10);
        assert_eq!(ds.snapshots().len(), 56);
        assert_eq!(ds.train().len(), 44);
    }
}

#[test]
fn default_training_reduces_total_loss() {
    for seed in 0..5 {
        let ds = lwr_dataset(seed);
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::new(ModelKind::Gcn, PhysicsConfig::lwr())
        };
        let (_, report) = train(&ds, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 100);
        let (first, last) = (report.epochs[0].total, report.epochs[99].total);
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn search_prefers_no_physics_on_shuffled_targets() {
    let mut chosen = Vec::new();
    let mut scores = Vec::new();
    for seed in 0..5 {
        let mut file: DatasetFile = generate(&lwr_spec(100 + seed)).unwrap().noisy;
        file.series.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let ds = TemporalDataset::from_file(file, 4, 0.8).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::new(ModelKind::Gcn, PhysicsConfig::lwr())
        };
        let c = lambda_search(&ds, &cfg, &default_lambda_grid()).unwrap();
        scores.push(c.scores.iter().map(|s| s.validation_mse).collect::<Vec<_>>());
        chosen.push(c.lambda2);
    }
    chosen.sort_by(f64::total_cmp);
    assert_eq!(
        chosen[2], 0.0,
        "selected λ₂ (sorted): {chosen:?}; validation MSE per grid point: {scores:?}"
    );
}
