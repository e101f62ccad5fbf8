//! The exploration/transformation loop, its on-disk checkpoints and reports.
//!
//! Run directory:
//!
//! ```text
//! config.json          experiment configuration
//! checkpoint.json      last completed stage
//! log.txt              events (reseeds, shortfalls, stage completions)
//! bootstrap/           seed populations, initial model, record.json
//! phase_NN/            population_PP.json  final generation of population PP
//!                      archive_PP.json     archive entries added this phase
//!                      exploration.json    per-generation records
//!                      model.bin/.json     model after this phase's transformation
//!                      transformation.json
//! metrics/*.csv        reports rebuilt after every stage
//! ```
//!
//! Every file is a pure function of the configuration, so an interrupted run
//! resumed from its last checkpoint ends bit-identical to an uninterrupted one.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::{Autoencoder, AutoencoderError, LatentVector, ModelManifest};
use crate::config::{ExperimentConfig, Strategy};
use crate::cppn::{generate_hull, CppnError, CppnGenome};
use crate::metrics::{correlation_from_latents, divergence_from_seed, population_diversity, MeanStd};
use crate::neat::{next_generation, Population};
use crate::novelty::{reencode_archive, score_population, update_archive, Candidate, NoveltyArchive};
use crate::rng::{derive_seed, stream};
use crate::voxel::{repair_pipeline, structural_stats, Dims, MaterialLattice, RepairOutcome};

/// Model precision used by runs.
pub type Model = Autoencoder<f32>;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("run directory {} already holds a run", .0.display())]
    Occupied(PathBuf),
    #[error("only {0} feasible seed lattices; the initial model needs at least 2")]
    TooFewSeeds(usize),
    #[error("strategy {0} has an empty training set")]
    EmptyTrainingSet(Strategy),
    #[error("bootstrap source {}: {reason}", path.display())]
    Bootstrap { path: PathBuf, reason: String },
    #[error(transparent)]
    Model(#[from] AutoencoderError),
    #[error(transparent)]
    Cppn(#[from] CppnError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "phase", rename_all = "snake_case")]
pub enum Stage {
    Bootstrap,
    Explored(usize),
    Transformed(usize),
}

impl Stage {
    fn next(self) -> Stage {
        match self {
            Stage::Bootstrap => Stage::Explored(1),
            Stage::Explored(n) => Stage::Transformed(n),
            Stage::Transformed(n) => Stage::Explored(n + 1),
        }
    }

    /// Exploration phases completed.
    pub fn explored(self) -> usize {
        match self {
            Stage::Bootstrap => 0,
            Stage::Explored(n) | Stage::Transformed(n) => n,
        }
    }

    fn key(self) -> (usize, bool) {
        (self.explored(), !matches!(self, Stage::Explored(_)))
    }
}

impl Ord for Stage {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Stage {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// One population's final generation of a phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSnapshot {
    pub phase: usize,
    pub population: usize,
    /// The population as it enters the next phase; its genomes are the final
    /// generation.
    pub state: Population,
    pub feasible: Vec<bool>,
    /// Last novelty score of each genome (0 when infeasible).
    pub novelty: Vec<f64>,
}

impl FinalSnapshot {
    pub fn lattices(&self, dims: Dims) -> Result<Vec<MaterialLattice>, CppnError> {
        Ok(evaluate(&self.state.genomes, dims)?.into_iter().map(|o| o.lattice).collect())
    }

    pub fn feasible_lattices(&self, dims: Dims) -> Result<Vec<MaterialLattice>, CppnError> {
        Ok(self
            .lattices(dims)?
            .into_iter()
            .zip(&self.feasible)
            .filter_map(|(l, &ok)| ok.then_some(l))
            .collect())
    }

    /// Indices of the `n` most novel feasible genomes, ties by index.
    pub fn most_novel(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.feasible.len()).filter(|&i| self.feasible[i]).collect();
        idx.sort_by(|&a, &b| self.novelty[b].total_cmp(&self.novelty[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub phase: usize,
    pub generation: usize,
    pub population: usize,
    pub feasible: usize,
    /// Species after reproduction; absent for a phase's last generation.
    pub species: Option<usize>,
    pub threshold: f64,
    pub degenerate: bool,
    pub archive_size: usize,
    pub inserted: usize,
    pub mean_novelty: f64,
    pub max_novelty: f64,
    /// Mean and 95% half-width of per-individual diversity; absent below two
    /// feasible individuals.
    pub mean_kl: Option<f64>,
    pub ci95: Option<f64>,
    pub bbox: [f64; 3],
    pub symmetry: f64,
    pub instability: f64,
    pub surface_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDivergenceRecord {
    pub phase: usize,
    pub population: usize,
    pub mean_kl: Option<f64>,
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub phase: usize,
    pub population: usize,
    pub r: Option<f64>,
    pub pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationRecord {
    pub phase: usize,
    pub generations: Vec<GenerationRecord>,
    pub seed_divergence: Vec<SeedDivergenceRecord>,
    pub correlation: Vec<CorrelationRecord>,
    pub log: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRecord {
    pub phase: usize,
    pub population: usize,
    /// Error (%) of the feasible finals under the model they were explored with.
    pub before: Option<f64>,
    /// Error (%) under the model produced by the transformation.
    pub after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationRecord {
    pub phase: usize,
    pub strategy: Strategy,
    pub training_set: usize,
    pub history: Vec<f64>,
    pub weights_sha256: String,
    pub reconstruction: Vec<ReconstructionRecord>,
    pub log: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRecord {
    pub feasible: Vec<usize>,
    pub history: Vec<f64>,
    pub weights_sha256: String,
    pub log: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Records {
    pub bootstrap: Option<BootstrapRecord>,
    pub exploration: Vec<ExplorationRecord>,
    pub transformation: Vec<TransformationRecord>,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone)]
pub struct RunState {
    pub stage: Stage,
    pub populations: Vec<Population>,
    pub archives: Vec<NoveltyArchive>,
    pub model: Model,
    /// Feasible seed lattices per population.
    pub seeds: Vec<Vec<MaterialLattice>>,
    /// Final snapshots, per phase then per population.
    pub history: Vec<Vec<FinalSnapshot>>,
    pub records: Records,
}

/// Hulls and repairs every genome.
pub fn evaluate(genomes: &[CppnGenome], dims: Dims) -> Result<Vec<RepairOutcome>, CppnError> {
    genomes
        .par_iter()
        .map(|g| generate_hull(g, dims).map(|h| repair_pipeline(&h)))
        .collect()
}

fn population_label(p: usize) -> String {
    format!("population/{p}")
}

fn seed_populations(config: &ExperimentConfig) -> Vec<Population> {
    (0..config.populations)
        .map(|p| Population::seeded(&config.neat, stream(config.seed, &population_label(p))))
        .collect()
}

fn feasible_seeds(populations: &[Population], dims: Dims) -> Result<Vec<Vec<MaterialLattice>>, CppnError> {
    populations
        .iter()
        .map(|p| {
            Ok(evaluate(&p.genomes, dims)?
                .into_iter()
                .filter(|o| o.feasible)
                .map(|o| o.lattice)
                .collect())
        })
        .collect()
}

/// Seeds the populations and trains the initial model on every feasible seed
/// lattice. Independent of the strategy.
pub fn bootstrap(config: &ExperimentConfig) -> Result<RunState, RunError> {
    config.validate().map_err(RunError::Config)?;
    let populations = seed_populations(config);
    let seeds = feasible_seeds(&populations, config.dims())?;
    let training: Vec<MaterialLattice> = seeds.iter().flatten().cloned().collect();
    if training.len() < 2 {
        return Err(RunError::TooFewSeeds(training.len()));
    }
    let mut model = Model::new(config.autoencoder.clone(), derive_seed(config.seed, "bootstrap/model"));
    let ae = &config.autoencoder;
    model.train(&training, ae.epochs, ae.batch_size, &mut stream(config.seed, "bootstrap/shuffle"))?;
    let manifest = model.manifest();
    let feasible: Vec<usize> = seeds.iter().map(Vec::len).collect();
    let log = vec![format!(
        "bootstrap: {} feasible seed lattices {:?}, final loss {}",
        training.len(),
        feasible,
        manifest.history.last().map_or("n/a".into(), |l| format!("{l:.6}"))
    )];
    Ok(RunState {
        stage: Stage::Bootstrap,
        archives: vec![NoveltyArchive::default(); config.populations],
        populations,
        model,
        seeds,
        history: Vec::new(),
        records: Records {
            bootstrap: Some(BootstrapRecord {
                feasible,
                history: manifest.history,
                weights_sha256: manifest.weights_sha256,
                log,
            }),
            ..Records::default()
        },
    })
}

struct PopulationPhase {
    snapshot: FinalSnapshot,
    generations: Vec<GenerationRecord>,
    seed_divergence: SeedDivergenceRecord,
    correlation: CorrelationRecord,
    log: Vec<String>,
}

fn optional_stats(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let s = MeanStd::of(xs);
    (Some(s.mean), Some(s.ci95()))
}

fn explore_population(
    config: &ExperimentConfig,
    model: &Model,
    phase: usize,
    index: usize,
    mut pop: Population,
    archive: &mut NoveltyArchive,
    seeds: &[MaterialLattice],
) -> Result<PopulationPhase, RunError> {
    let dims = config.dims();
    let gens = config.generations_per_phase;
    let mut generations = Vec::with_capacity(gens);
    let mut log = Vec::new();
    for g in 0..gens {
        let outcomes = evaluate(&pop.genomes, dims)?;
        let feasible: Vec<bool> = outcomes.iter().map(|o| o.feasible).collect();
        let lattices: Vec<MaterialLattice> = outcomes.into_iter().map(|o| o.lattice).collect();
        let good: Vec<MaterialLattice> = lattices
            .iter()
            .zip(&feasible)
            .filter(|(_, ok)| **ok)
            .map(|(l, _)| l.clone())
            .collect();
        let mut encoded = model.encode_all(&good)?.into_iter();
        let latents: Vec<Option<LatentVector>> = feasible
            .iter()
            .map(|&ok| if ok { encoded.next() } else { None })
            .collect();
        let scores = score_population(&latents, archive, config.k).expect("one latent width per model");

        let candidates: Vec<Candidate> = (0..lattices.len())
            .filter(|&i| feasible[i])
            .map(|i| Candidate {
                lattice: lattices[i].clone(),
                latent: latents[i].clone().expect("feasible members are encoded"),
                score: scores[i],
            })
            .collect();
        let inserted = update_archive(archive, candidates, config.archive_alpha, phase as u32, g as u32);

        let feasible_scores: Vec<f64> = (0..scores.len()).filter(|&i| feasible[i]).map(|i| scores[i]).collect();
        let stats: Vec<_> = good.iter().map(structural_stats).collect();
        let n = stats.len().max(1) as f64;
        let bbox = [0, 1, 2].map(|a| {
            stats
                .iter()
                .map(|s| [s.bounding_box.0, s.bounding_box.1, s.bounding_box.2][a] as f64)
                .sum::<f64>()
                / n
        });
        let (mean_kl, ci95) = if good.len() >= 2 {
            optional_stats(&population_diversity(&good, &config.metrics).expect("window validated"))
        } else {
            (None, None)
        };
        let mut record = GenerationRecord {
            phase,
            generation: g,
            population: index,
            feasible: good.len(),
            species: None,
            threshold: pop.threshold,
            degenerate: false,
            archive_size: archive.len(),
            inserted,
            mean_novelty: feasible_scores.iter().sum::<f64>() / feasible_scores.len().max(1) as f64,
            max_novelty: feasible_scores.iter().copied().fold(0.0, f64::max),
            mean_kl,
            ci95,
            bbox,
            symmetry: stats.iter().map(|s| s.symmetry).sum::<f64>() / n,
            instability: stats.iter().map(|s| s.instability).sum::<f64>() / n,
            surface_area: stats.iter().map(|s| s.surface_area as f64).sum::<f64>() / n,
        };

        if g + 1 < gens {
            let report = next_generation(&mut pop, &scores, &feasible, &config.neat);
            record.species = Some(report.species);
            record.threshold = report.threshold;
            record.degenerate = report.degenerate;
            if report.degenerate {
                log.push(format!(
                    "phase {phase} population {index} generation {g}: no feasible genome, population reseeded"
                ));
            }
            generations.push(record);
            continue;
        }
        generations.push(record);

        let final_latents: Vec<LatentVector> = latents.iter().flatten().cloned().collect();
        let (sd_mean, sd_ci) = if good.is_empty() || seeds.is_empty() {
            (None, None)
        } else {
            optional_stats(&divergence_from_seed(&good, seeds, &config.metrics).expect("window validated"))
        };
        let correlation = if good.len() >= 3 {
            let c = correlation_from_latents(&good, &final_latents, &config.metrics).expect("window validated");
            CorrelationRecord {
                phase,
                population: index,
                r: c.r,
                pairs: c.pairs,
            }
        } else {
            CorrelationRecord {
                phase,
                population: index,
                r: None,
                pairs: 0,
            }
        };
        return Ok(PopulationPhase {
            snapshot: FinalSnapshot {
                phase,
                population: index,
                state: pop,
                feasible,
                novelty: scores,
            },
            generations,
            seed_divergence: SeedDivergenceRecord {
                phase,
                population: index,
                mean_kl: sd_mean,
                ci95: sd_ci,
            },
            correlation,
            log,
        });
    }
    unreachable!("generations_per_phase is positive")
}

/// Runs every population for one phase against the current model. Each
/// phase evaluates `generations_per_phase` generations; the last one is not
/// reproduced, so the next phase starts by re-scoring it under the new model.
pub fn exploration_phase(state: &mut RunState, config: &ExperimentConfig) -> Result<(), RunError> {
    let phase = state.stage.explored() + 1;
    assert!(
        matches!(state.stage, Stage::Bootstrap | Stage::Transformed(_)),
        "exploration follows bootstrap or a transformation"
    );
    let model = &state.model;
    let results: Vec<Result<PopulationPhase, RunError>> = state
        .populations
        .par_iter()
        .zip(state.archives.par_iter_mut())
        .zip(state.seeds.par_iter())
        .enumerate()
        .map(|(p, ((pop, archive), seeds))| explore_population(config, model, phase, p, pop.clone(), archive, seeds))
        .collect();
    let mut record = ExplorationRecord {
        phase,
        ..ExplorationRecord::default()
    };
    let mut snapshots = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        record.generations.extend(r.generations);
        record.seed_divergence.push(r.seed_divergence);
        record.correlation.push(r.correlation);
        record.log.extend(r.log);
        snapshots.push(r.snapshot);
    }
    record.log.push(format!(
        "phase {phase} explored: archive sizes {:?}",
        state.archives.iter().map(NoveltyArchive::len).collect::<Vec<_>>()
    ));
    state.populations = snapshots.iter().map(|s| s.state.clone()).collect();
    state.history.push(snapshots);
    state.records.exploration.push(record);
    state.stage = Stage::Explored(phase);
    Ok(())
}

/// The most novel feasible finals of every population for one phase; the
/// second value lists populations that fell short as `(population, taken)`.
fn latest_selection(
    snapshots: &[FinalSnapshot],
    per_population: usize,
    dims: Dims,
) -> Result<(Vec<MaterialLattice>, Vec<(usize, usize)>), CppnError> {
    let mut set = Vec::new();
    let mut short = Vec::new();
    for s in snapshots {
        let picked = s.most_novel(per_population);
        if picked.len() < per_population {
            short.push((s.population, picked.len()));
        }
        let genomes: Vec<CppnGenome> = picked.iter().map(|&i| s.state.genomes[i].clone()).collect();
        set.extend(evaluate(&genomes, dims)?.into_iter().map(|o| o.lattice));
    }
    Ok((set, short))
}

/// The lattices a strategy retrains on after the latest exploration phase.
/// Static and random strategies never train and get an empty set.
pub fn assemble_training_set(
    state: &RunState,
    config: &ExperimentConfig,
    strategy: Strategy,
) -> Result<(Vec<MaterialLattice>, Vec<String>), RunError> {
    assert!(!state.history.is_empty(), "training sets need a completed exploration phase");
    let dims = config.dims();
    let mut log = Vec::new();
    let phases: &[Vec<FinalSnapshot>] = match strategy {
        Strategy::Static | Strategy::Random => return Ok((Vec::new(), log)),
        Strategy::NoveltyArchive => {
            let set = state.archives.iter().flat_map(|a| a.lattices().cloned()).collect();
            return Ok((set, log));
        }
        Strategy::LatestSet => &state.history[state.history.len() - 1..],
        Strategy::FullHistory => &state.history,
    };
    let mut set = Vec::new();
    for (i, snapshots) in phases.iter().enumerate() {
        let (lattices, short) = latest_selection(snapshots, config.latest_set_size, dims)?;
        for (p, taken) in short {
            log.push(format!(
                "phase {} population {p}: only {taken} feasible finals for a latest set of {}",
                snapshots.first().map_or(i + 1, |s| s.phase),
                config.latest_set_size
            ));
        }
        set.extend(lattices);
    }
    Ok((set, log))
}

/// Rebuilds the model per the strategy, then re-encodes every archive.
pub fn transformation_phase(state: &mut RunState, config: &ExperimentConfig) -> Result<(), RunError> {
    let Stage::Explored(phase) = state.stage else {
        panic!("transformation follows an exploration phase");
    };
    let dims = config.dims();
    let strategy = config.strategy;
    let (training, mut log) = assemble_training_set(state, config, strategy)?;
    let finals: Vec<Vec<MaterialLattice>> = state
        .history
        .last()
        .expect("explored")
        .iter()
        .map(|s| s.feasible_lattices(dims))
        .collect::<Result<_, _>>()?;
    let errors = |model: &Model| -> Result<Vec<Option<f64>>, RunError> {
        finals
            .iter()
            .map(|f| if f.is_empty() { Ok(None) } else { model.reconstruction_error(f).map(Some) })
            .collect::<Result<_, _>>()
            .map_err(RunError::from)
    };
    let before = errors(&state.model)?;

    let ae = &config.autoencoder;
    match strategy {
        Strategy::Static => {}
        Strategy::Random => {
            state.model = Model::new(ae.clone(), derive_seed(config.seed, &format!("phase/{phase}/random")));
        }
        _ => {
            if training.is_empty() {
                return Err(RunError::EmptyTrainingSet(strategy));
            }
            let mut model = Model::new(ae.clone(), derive_seed(config.seed, &format!("phase/{phase}/model")));
            let mut rng = stream(config.seed, &format!("phase/{phase}/shuffle"));
            model.train(&training, ae.epochs, ae.batch_size, &mut rng)?;
            state.model = model;
        }
    }
    for archive in &mut state.archives {
        reencode_archive(archive, &state.model)?;
    }
    let after = errors(&state.model)?;
    let manifest = state.model.manifest();
    log.push(format!(
        "phase {phase} transformed ({strategy}): {} training lattices",
        training.len()
    ));
    state.records.transformation.push(TransformationRecord {
        phase,
        strategy,
        training_set: training.len(),
        history: if strategy.trains() { manifest.history } else { Vec::new() },
        weights_sha256: manifest.weights_sha256,
        reconstruction: before
            .into_iter()
            .zip(after)
            .enumerate()
            .map(|(p, (before, after))| ReconstructionRecord {
                phase,
                population: p,
                before,
                after,
            })
            .collect(),
        log,
    });
    state.stage = Stage::Transformed(phase);
    Ok(())
}

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), RunError> {
    let mut s = serde_json::to_string(value).expect("run artifacts serialize");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D, RunError> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(|e| RunError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn phase_dir(run: &Path, phase: usize) -> PathBuf {
    run.join(format!("phase_{phase:02}"))
}

pub fn bootstrap_dir(run: &Path) -> PathBuf {
    run.join("bootstrap")
}

fn save_model(dir: &Path, model: &Model) -> Result<(), RunError> {
    write_atomic(&dir.join("model.bin"), &model.weight_bytes())?;
    write_json(&dir.join("model.json"), &model.manifest())
}

pub fn load_model(dir: &Path) -> Result<Model, RunError> {
    let manifest: ModelManifest = read_json(&dir.join("model.json"))?;
    let path = dir.join("model.bin");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    Model::from_parts(&manifest, &bytes).map_err(|e| RunError::Corrupt {
        path,
        reason: e.to_string(),
    })
}

fn save_stage(run: &Path, state: &RunState) -> Result<(), RunError> {
    match state.stage {
        Stage::Bootstrap => {
            let dir = bootstrap_dir(run);
            for (p, pop) in state.populations.iter().enumerate() {
                write_json(&dir.join(format!("population_{p:02}.json")), pop)?;
            }
            save_model(&dir, &state.model)?;
            write_json(&dir.join("record.json"), &state.records.bootstrap)?;
        }
        Stage::Explored(n) => {
            let dir = phase_dir(run, n);
            for (p, snap) in state.history[n - 1].iter().enumerate() {
                write_json(&dir.join(format!("population_{p:02}.json")), snap)?;
            }
            for (p, archive) in state.archives.iter().enumerate() {
                let added = NoveltyArchive {
                    entries: archive.entries.iter().filter(|e| e.phase as usize == n).cloned().collect(),
                };
                write_json(&dir.join(format!("archive_{p:02}.json")), &added)?;
            }
            write_json(&dir.join("exploration.json"), &state.records.exploration[n - 1])?;
        }
        Stage::Transformed(n) => {
            let dir = phase_dir(run, n);
            save_model(&dir, &state.model)?;
            write_json(&dir.join("transformation.json"), &state.records.transformation[n - 1])?;
        }
    }
    write_reports(run, &state.records)?;
    write_json(&run.join("checkpoint.json"), &state.stage)
}

/// Rebuilds `log.txt` and every CSV under `metrics/` from the records.
pub fn write_reports(run: &Path, records: &Records) -> Result<(), RunError> {
    let mut log = String::new();
    let mut push_log = |lines: &[String]| {
        for l in lines {
            log.push_str(l);
            log.push('\n');
        }
    };
    if let Some(b) = &records.bootstrap {
        push_log(&b.log);
    }
    for n in 0..records.exploration.len() {
        push_log(&records.exploration[n].log);
        if let Some(t) = records.transformation.get(n) {
            push_log(&t.log);
        }
    }
    write_atomic(&run.join("log.txt"), log.as_bytes())?;
    for (name, csv) in reports(records) {
        write_atomic(&run.join("metrics").join(name), csv.as_bytes())?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// `(file name, contents)` of every CSV report.
pub fn reports(records: &Records) -> Vec<(&'static str, String)> {
    let mut diversity = String::from("phase,generation,population,mean_kl,ci95\n");
    let mut generations = String::from(
        "phase,generation,population,feasible,species,threshold,degenerate,archive_size,inserted,\
         mean_novelty,max_novelty,bbox_w,bbox_h,bbox_d,symmetry,instability,surface_area\n",
    );
    let mut seed = String::from("phase,population,mean_kl,ci95\n");
    let mut correlation = String::from("phase,population,r,pairs\n");
    for e in &records.exploration {
        for g in &e.generations {
            diversity.push_str(&format!(
                "{},{},{},{},{}\n",
                g.phase,
                g.generation,
                g.population,
                opt(g.mean_kl),
                opt(g.ci95)
            ));
            generations.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                g.phase,
                g.generation,
                g.population,
                g.feasible,
                g.species.map_or(String::new(), |s| s.to_string()),
                g.threshold,
                g.degenerate,
                g.archive_size,
                g.inserted,
                g.mean_novelty,
                g.max_novelty,
                g.bbox[0],
                g.bbox[1],
                g.bbox[2],
                g.symmetry,
                g.instability,
                g.surface_area
            ));
        }
        for s in &e.seed_divergence {
            seed.push_str(&format!("{},{},{},{}\n", s.phase, s.population, opt(s.mean_kl), opt(s.ci95)));
        }
        for c in &e.correlation {
            correlation.push_str(&format!("{},{},{},{}\n", c.phase, c.population, opt(c.r), c.pairs));
        }
    }
    let mut training = String::from("phase,strategy,epoch,loss\n");
    if let Some(b) = &records.bootstrap {
        for (e, l) in b.history.iter().enumerate() {
            training.push_str(&format!("0,bootstrap,{e},{l}\n"));
        }
    }
    let mut reconstruction = String::from("phase,population,before,after\n");
    for t in &records.transformation {
        for (e, l) in t.history.iter().enumerate() {
            training.push_str(&format!("{},{},{e},{l}\n", t.phase, t.strategy));
        }
        for r in &t.reconstruction {
            reconstruction.push_str(&format!("{},{},{},{}\n", r.phase, r.population, opt(r.before), opt(r.after)));
        }
    }
    vec![
        ("diversity.csv", diversity),
        ("generations.csv", generations),
        ("seed_divergence.csv", seed),
        ("correlation.csv", correlation),
        ("training.csv", training),
        ("reconstruction.csv", reconstruction),
    ]
}

/// Stops a run early after a number of newly completed stages; used to
/// exercise resumption.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub max_stages: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Complete,
    Interrupted(Stage),
}

fn final_stage(config: &ExperimentConfig) -> Stage {
    Stage::Transformed(config.iterations)
}

fn drive(run: &Path, config: &ExperimentConfig, state: &mut RunState, mut budget: Option<usize>) -> Result<RunStatus, RunError> {
    while state.stage < final_stage(config) {
        if budget == Some(0) {
            return Ok(RunStatus::Interrupted(state.stage));
        }
        match state.stage.next() {
            Stage::Explored(_) => exploration_phase(state, config)?,
            Stage::Transformed(_) => transformation_phase(state, config)?,
            Stage::Bootstrap => unreachable!(),
        }
        save_stage(run, state)?;
        budget = budget.map(|b| b - 1);
    }
    Ok(RunStatus::Complete)
}

fn prepare_dir(run: &Path, config: &ExperimentConfig) -> Result<(), RunError> {
    config.validate().map_err(RunError::Config)?;
    if run.join("config.json").exists() || run.join("checkpoint.json").exists() {
        return Err(RunError::Occupied(run.to_path_buf()));
    }
    fs::create_dir_all(run).map_err(io_err(run))?;
    write_atomic(&run.join("config.json"), format!("{}\n", config.to_json()).as_bytes())
}

/// Starts a fresh run in `run`, which must not already hold one.
pub fn run(config: &ExperimentConfig, run: &Path, options: RunOptions) -> Result<RunStatus, RunError> {
    prepare_dir(run, config)?;
    let mut budget = options.max_stages;
    if budget == Some(0) {
        return Ok(RunStatus::Interrupted(Stage::Bootstrap));
    }
    let mut state = bootstrap(config)?;
    save_stage(run, &state)?;
    budget = budget.map(|b| b - 1);
    drive(run, config, &mut state, budget)
}

/// Starts a fresh run reusing the bootstrap of another run whose
/// configuration differs at most in the strategy.
pub fn run_from_bootstrap(
    config: &ExperimentConfig,
    run: &Path,
    source: &Path,
    options: RunOptions,
) -> Result<RunStatus, RunError> {
    let other: ExperimentConfig = read_json(&source.join("config.json"))?;
    let same = ExperimentConfig {
        strategy: config.strategy,
        ..other
    };
    if &same != config {
        return Err(RunError::Bootstrap {
            path: source.to_path_buf(),
            reason: "configuration differs beyond the strategy".into(),
        });
    }
    let src = bootstrap_dir(source);
    if !source.join("checkpoint.json").exists() {
        return Err(RunError::Bootstrap {
            path: source.to_path_buf(),
            reason: "bootstrap has not completed".into(),
        });
    }
    prepare_dir(run, config)?;
    if options.max_stages == Some(0) {
        return Ok(RunStatus::Interrupted(Stage::Bootstrap));
    }
    let mut state = load_bootstrap(config, &src)?;
    save_stage(run, &state)?;
    drive(run, config, &mut state, options.max_stages.map(|b| b - 1))
}

fn load_bootstrap(config: &ExperimentConfig, dir: &Path) -> Result<RunState, RunError> {
    let populations: Vec<Population> = (0..config.populations)
        .map(|p| read_json(&dir.join(format!("population_{p:02}.json"))))
        .collect::<Result<_, _>>()?;
    let record: Option<BootstrapRecord> = read_json(&dir.join("record.json"))?;
    let seeds = feasible_seeds(&populations, config.dims())?;
    Ok(RunState {
        stage: Stage::Bootstrap,
        archives: vec![NoveltyArchive::default(); config.populations],
        populations,
        model: load_model(dir)?,
        seeds,
        history: Vec::new(),
        records: Records {
            bootstrap: record,
            ..Records::default()
        },
    })
}

pub fn load_config(run: &Path) -> Result<ExperimentConfig, RunError> {
    let path = run.join("config.json");
    let s = fs::read_to_string(&path).map_err(io_err(&path))?;
    ExperimentConfig::from_json(&s).map_err(|reason| RunError::Corrupt { path, reason })
}

/// Reloads the state at the last checkpoint of a run directory.
pub fn load_state(run: &Path) -> Result<(ExperimentConfig, RunState), RunError> {
    let config = load_config(run)?;
    let stage: Stage = read_json(&run.join("checkpoint.json"))?;
    let mut state = load_bootstrap(&config, &bootstrap_dir(run))?;
    for n in 1..=stage.explored() {
        let dir = phase_dir(run, n);
        let snapshots: Vec<FinalSnapshot> = (0..config.populations)
            .map(|p| read_json(&dir.join(format!("population_{p:02}.json"))))
            .collect::<Result<_, _>>()?;
        for (p, archive) in state.archives.iter_mut().enumerate() {
            let added: NoveltyArchive = read_json(&dir.join(format!("archive_{p:02}.json")))?;
            archive.entries.extend(added.entries);
        }
        state.populations = snapshots.iter().map(|s| s.state.clone()).collect();
        state.history.push(snapshots);
        state.records.exploration.push(read_json(&dir.join("exploration.json"))?);
        if Stage::Transformed(n) <= stage {
            state.records.transformation.push(read_json(&dir.join("transformation.json"))?);
            state.model = load_model(&dir)?;
        }
    }
    for archive in &mut state.archives {
        reencode_archive(archive, &state.model)?;
    }
    state.stage = stage;
    Ok((config, state))
}

/// Continues a run from its last checkpoint.
pub fn resume(run: &Path, options: RunOptions) -> Result<RunStatus, RunError> {
    let (config, mut state) = load_state(run)?;
    drive(run, &config, &mut state, options.max_stages)
}

/// Loads all records of a run directory without rebuilding the state.
pub fn load_records(run: &Path) -> Result<Records, RunError> {
    let stage: Stage = read_json(&run.join("checkpoint.json"))?;
    let mut records = Records {
        bootstrap: read_json(&bootstrap_dir(run).join("record.json"))?,
        ..Records::default()
    };
    for n in 1..=stage.explored() {
        let dir = phase_dir(run, n);
        records.exploration.push(read_json(&dir.join("exploration.json"))?);
        if Stage::Transformed(n) <= stage {
            records.transformation.push(read_json(&dir.join("transformation.json"))?);
        }
    }
    Ok(records)
}
