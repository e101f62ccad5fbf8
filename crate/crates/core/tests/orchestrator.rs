use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxnox::autoencoder::AutoencoderConfig;
use voxnox::dataset::{gen_cubes, random_cuboid, CUBOID_MAX, CUBOID_MIN};
use voxnox::neat::NeatParams;
use voxnox::orchestrator::{
    assemble_training_set, bootstrap, exploration_phase, load_records, load_state, resume, run, run_from_bootstrap,
    RunError, RunOptions, RunState, RunStatus, Stage,
};
use voxnox::rng::{derive_seed, stream};
use voxnox::voxel::{check_entrance, Dims};
use voxnox::{ExperimentConfig, Strategy};

/// Small enough to run a few full loops in seconds.
fn tiny(strategy: Strategy) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        iterations: 2,
        populations: 2,
        generations_per_phase: 4,
        k: 5,
        latest_set_size: 4,
        seed: 11,
        neat: NeatParams {
            population_size: 12,
            ..NeatParams::default()
        },
        autoencoder: AutoencoderConfig {
            lattice: Dims::cube(12),
            latent_dim: 16,
            encoder_channels: [4, 8, 8],
            decoder_channels: [8, 4, 4],
            epochs: 2,
            batch_size: 8,
            ..AutoencoderConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn stages_are_ordered() {
    let order = [
        Stage::Bootstrap,
        Stage::Explored(1),
        Stage::Transformed(1),
        Stage::Explored(2),
        Stage::Transformed(2),
    ];
    assert!(order.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(Stage::Transformed(2).explored(), 2);
    let json = serde_json::to_string(&Stage::Explored(3)).unwrap();
    assert_eq!(serde_json::from_str::<Stage>(&json).unwrap(), Stage::Explored(3));
}

#[test]
fn interrupted_runs_resume_bit_identical() {
    let cfg = tiny(Strategy::NoveltyArchive);
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&cfg, &a, RunOptions::default()).unwrap(), RunStatus::Complete);

    let once = RunOptions { max_stages: Some(2) };
    assert_eq!(run(&cfg, &b, once).unwrap(), RunStatus::Interrupted(Stage::Explored(1)));
    let step = RunOptions { max_stages: Some(1) };
    assert_eq!(resume(&b, step).unwrap(), RunStatus::Interrupted(Stage::Transformed(1)));
    assert_eq!(resume(&b, RunOptions::default()).unwrap(), RunStatus::Complete);
    assert_eq!(tree(&a), tree(&b));

    // Completed runs resume as a no-op.
    assert_eq!(resume(&a, RunOptions::default()).unwrap(), RunStatus::Complete);
    assert_eq!(tree(&a), tree(&b));

    // A directory holding a run is never overwritten.
    assert!(matches!(run(&cfg, &a, RunOptions::default()), Err(RunError::Occupied(_))));
}

#[test]
fn run_invariants_hold() {
    let cfg = tiny(Strategy::NoveltyArchive);
    let tmp = tempfile::tempdir().unwrap();
    run(&cfg, tmp.path(), RunOptions::default()).unwrap();
    let (_, state) = load_state(tmp.path()).unwrap();
    assert_eq!(state.stage, Stage::Transformed(2));
    assert_eq!(state.history.len(), 2);
    for snapshots in &state.history {
        for s in snapshots {
            assert_eq!(s.state.genomes.len(), cfg.neat.population_size);
            assert_eq!(s.feasible.len(), cfg.neat.population_size);
        }
    }
    let cap = cfg.archive_alpha * cfg.generations_per_phase * cfg.iterations;
    for archive in &state.archives {
        assert!(!archive.is_empty() && archive.len() <= cap, "{}", archive.len());
        for e in &archive.entries {
            assert_eq!(e.latent.len(), cfg.autoencoder.latent_dim);
        }
    }
    let records = load_records(tmp.path()).unwrap();
    assert_eq!(records, state.records);
    for phase in &records.exploration {
        assert_eq!(phase.generations.len(), cfg.generations_per_phase * cfg.populations);
        for g in &phase.generations {
            assert!(g.feasible <= cfg.neat.population_size);
            assert!(g.archive_size <= cap);
        }
    }
    let files = tree(tmp.path());
    for name in [
        "metrics/diversity.csv",
        "metrics/generations.csv",
        "metrics/seed_divergence.csv",
        "metrics/correlation.csv",
        "metrics/training.csv",
        "metrics/reconstruction.csv",
        "log.txt",
        "config.json",
        "checkpoint.json",
    ] {
        assert!(files.contains_key(name), "missing {name}");
    }
    assert!(!files.keys().any(|k| k.ends_with(".tmp")));
}

#[test]
fn static_strategy_keeps_the_bootstrap_model() {
    let tmp = tempfile::tempdir().unwrap();
    let (src, dst) = (tmp.path().join("na"), tmp.path().join("static"));
    run(&tiny(Strategy::NoveltyArchive), &src, RunOptions { max_stages: Some(1) }).unwrap();
    let cfg = tiny(Strategy::Static);
    run_from_bootstrap(&cfg, &dst, &src, RunOptions::default()).unwrap();
    let records = load_records(&dst).unwrap();
    let initial = fs::read(src.join("bootstrap/model.bin")).unwrap();
    assert_eq!(fs::read(dst.join("bootstrap/model.bin")).unwrap(), initial);
    let hashes: Vec<&str> = records.transformation.iter().map(|t| t.weights_sha256.as_str()).collect();
    assert_eq!(hashes.len(), 2);
    assert!(hashes.iter().all(|h| *h == hashes[0]));
    for n in 1..=2 {
        assert_eq!(fs::read(dst.join(format!("phase_{n:02}/model.bin"))).unwrap(), initial);
    }

    let other = ExperimentConfig { seed: 12, ..cfg };
    let err = run_from_bootstrap(&other, &tmp.path().join("x"), &src, RunOptions::default()).unwrap_err();
    assert!(matches!(err, RunError::Bootstrap { .. }), "{err}");
}

#[test]
fn training_sets_follow_the_strategy() {
    let cfg = tiny(Strategy::FullHistory);
    let mut state = bootstrap(&cfg).unwrap();
    exploration_phase(&mut state, &cfg).unwrap();
    let feasible_finals = |state: &RunState, phase: usize| -> usize {
        state.history[phase]
            .iter()
            .map(|s| s.feasible.iter().filter(|&&f| f).count().min(cfg.latest_set_size))
            .sum()
    };
    let size = |state: &RunState, s| assemble_training_set(state, &cfg, s).unwrap().0.len();
    assert_eq!(size(&state, Strategy::Static), 0);
    assert_eq!(size(&state, Strategy::Random), 0);
    assert_eq!(size(&state, Strategy::LatestSet), feasible_finals(&state, 0));
    assert_eq!(size(&state, Strategy::FullHistory), feasible_finals(&state, 0));
    let archived: usize = state.archives.iter().map(|a| a.len()).sum();
    assert_eq!(size(&state, Strategy::NoveltyArchive), archived);

    // A second phase without transformation: latest keeps one phase, full
    // history both.
    state.stage = Stage::Transformed(1);
    exploration_phase(&mut state, &cfg).unwrap();
    assert_eq!(size(&state, Strategy::LatestSet), feasible_finals(&state, 1));
    let both = feasible_finals(&state, 0) + feasible_finals(&state, 1);
    assert_eq!(size(&state, Strategy::FullHistory), both);
    for l in assemble_training_set(&state, &cfg, Strategy::FullHistory).unwrap().0 {
        assert_eq!(l.dims(), cfg.dims());
    }
}

#[test]
fn config_validation_names_the_field() {
    let ok = ExperimentConfig::smoke();
    assert_eq!(ExperimentConfig::from_json(&ok.to_json()).unwrap(), ok);
    let cases = [
        (r#"{"iterations": 0}"#, "iterations"),
        (r#"{"k": 0}"#, "k must be positive"),
        (r#"{"schema_version": 2}"#, "schema_version"),
        (r#"{"metrics": {"window": 4}}"#, "metrics.window"),
        (r#"{"strategy": "best"}"#, "strategy"),
        (r#"{"iteration": 3}"#, "iteration"),
        (r#"{"autoencoder": {"latent_dim": 0}}"#, "autoencoder"),
        (r#"{"neat": {"population_size": 0}}"#, "population_size"),
    ];
    for (json, needle) in cases {
        let err = ExperimentConfig::from_json(json).unwrap_err();
        assert!(err.contains(needle), "{json}: {err}");
    }
}

#[test]
fn strategies_parse_by_name() {
    for s in Strategy::ALL {
        assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        assert_eq!(s.to_string(), s.name());
    }
    assert_eq!("Full-History".parse::<Strategy>().unwrap(), Strategy::FullHistory);
    let err = "greedy".parse::<Strategy>().unwrap_err().to_string();
    for s in Strategy::ALL {
        assert!(err.contains(s.name()), "{err}");
    }
    assert!(Strategy::LatestSet.trains() && !Strategy::Static.trains() && !Strategy::Random.trains());
}

#[test]
fn named_streams_are_stable_and_independent() {
    use rand::RngCore;
    assert_eq!(stream(3, "population/0").next_u64(), stream(3, "population/0").next_u64());
    assert_ne!(stream(3, "population/0").next_u64(), stream(3, "population/1").next_u64());
    assert_ne!(stream(3, "population/0").next_u64(), stream(4, "population/0").next_u64());
    assert_eq!(derive_seed(3, "phase/1/model"), derive_seed(3, "phase/1/model"));
    assert_ne!(derive_seed(3, "phase/1/model"), derive_seed(3, "phase/2/model"));
}

#[test]
fn cuboids_are_grounded_feasible_and_reproducible() {
    let dims = Dims::cube(20);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let hull = random_cuboid(dims, &mut rng);
        let filled: Vec<_> = (0..dims.len()).filter(|&i| hull.cells()[i]).map(|i| dims.coords(i)).collect();
        let span = |f: fn(&(usize, usize, usize)) -> usize| {
            let lo = filled.iter().map(f).min().unwrap();
            (lo, filled.iter().map(f).max().unwrap() - lo + 1)
        };
        let ((_, w), (y0, h), (_, d)) = (span(|c| c.0), span(|c| c.1), span(|c| c.2));
        assert_eq!(y0, 0);
        assert_eq!(hull.count(), w * h * d);
        for side in [w, h, d] {
            assert!((CUBOID_MIN..=CUBOID_MAX).contains(&side), "{side}");
        }
    }
    let a = gen_cubes(30, dims, &mut ChaCha8Rng::seed_from_u64(9));
    let b = gen_cubes(30, dims, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
    for l in &a {
        assert!(check_entrance(l) && l.solid_count() > 0);
    }
}
