use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use voxnox::config::{ExperimentConfig, Strategy};
use voxnox::dataset::gen_cubes;
use voxnox::metrics::{all_counts, kl_matrix, reconstruction_matrix, MeanStd, PatternConfig};
use voxnox::novelty::NoveltyArchive;
use voxnox::orchestrator::{
    load_config, load_model, load_records, load_state, reports, resume, run, run_from_bootstrap,
    FinalSnapshot, Model, RunOptions, RunStatus,
};
use voxnox::rng::stream;
use voxnox::{Dims, MaterialLattice};

/// Evolve voxel buildings under latent-space novelty search.
#[derive(Parser)]
#[command(name = "voxnox", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a run in a new directory.
    Run {
        /// Experiment config JSON; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// static, random, latest_set, full_history or novelty_archive.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Reuse the bootstrap of an existing run with the same config.
        #[arg(long)]
        bootstrap: Option<PathBuf>,
        /// Stop after this many stages (bootstrap, exploration, transformation).
        #[arg(long)]
        max_stages: Option<usize>,
    },
    /// Continue a run from its last checkpoint.
    Resume {
        run: PathBuf,
        #[arg(long)]
        max_stages: Option<usize>,
    },
    /// Rebuild the CSV reports of one or more runs into a fresh directory.
    /// With several runs, also writes the cross-run reconstruction matrix.
    Metrics {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print latent vectors of lattices as JSON, one array per line.
    Encode {
        /// Directory holding model.json and model.bin.
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        lattices: Vec<PathBuf>,
    },
    /// Round-trip a lattice through a model and report the voxel error.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        lattice: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a lattice, population snapshot or archive file.
    Export {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Output file for one lattice, directory for several; stdout if omitted
        /// and the input holds one lattice.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate repaired random cuboid buildings.
    GenCubes {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        size: usize,
    },
    /// Pairwise tile-pattern KL between two lattice sets.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write every pair as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        window: usize,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    CsvVoxels,
}

type Res<T> = Result<T, String>;

fn read(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: &str) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn fresh_dir(path: &Path) -> Res<()> {
    if path.exists() && fs::read_dir(path).map_err(|e| e.to_string())?.next().is_some() {
        return Err(format!("{} exists and is not empty", path.display()));
    }
    fs::create_dir_all(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Reads a lattice in either export format.
fn read_lattice(path: &Path) -> Res<MaterialLattice> {
    let s = read(path)?;
    let parsed = if s.trim_start().starts_with('{') {
        MaterialLattice::from_json(&s)
    } else {
        MaterialLattice::from_csv_voxels(&s)
    };
    parsed.map_err(|e| format!("{}: {e}", path.display()))
}

/// A lattice file, or every `.json`/`.csv` lattice in a directory by name.
fn read_set(path: &Path) -> Res<Vec<MaterialLattice>> {
    if !path.is_dir() {
        return Ok(vec![read_lattice(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(format!("{}: no lattice files", path.display()));
    }
    files.iter().map(|f| read_lattice(f)).collect()
}

fn render(lattice: &MaterialLattice, format: Format) -> String {
    match format {
        Format::Json => lattice.to_json() + "\n",
        Format::CsvVoxels => lattice.to_csv_voxels(),
    }
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Json => "json",
        Format::CsvVoxels => "csv",
    }
}

/// Lattices held by an export input: a lattice, a population snapshot (its
/// feasible final generation) or an archive.
fn export_input(path: &Path) -> Res<Vec<MaterialLattice>> {
    let s = read(path)?;
    if let Ok(l) = MaterialLattice::from_json(&s) {
        return Ok(vec![l]);
    }
    if let Ok(a) = NoveltyArchive::from_json(&s) {
        return Ok(a.entries.into_iter().map(|e| e.lattice).collect());
    }
    if let Ok(snap) = serde_json::from_str::<FinalSnapshot>(&s) {
        let dims = path
            .parent()
            .and_then(Path::parent)
            .and_then(|run| load_config(run).ok())
            .map_or(Dims::cube(20), |c| c.dims());
        return snap.feasible_lattices(dims).map_err(|e| e.to_string());
    }
    if !s.trim_start().starts_with('{') {
        return Ok(vec![read_lattice(path)?]);
    }
    // Report the lattice parse error, which names the offending field.
    MaterialLattice::from_json(&s)
        .map(|l| vec![l])
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn report(status: RunStatus, dir: &Path) {
    match status {
        RunStatus::Complete => eprintln!("run complete: {}", dir.display()),
        RunStatus::Interrupted(stage) => eprintln!("stopped after {stage:?}: {}", dir.display()),
    }
}

fn execute(command: Command) -> Res<()> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            strategy,
            bootstrap,
            max_stages,
        } => {
            let mut cfg = match &config {
                Some(path) => {
                    ExperimentConfig::from_json(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?
                }
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            let options = RunOptions { max_stages };
            let status = match &bootstrap {
                Some(src) => run_from_bootstrap(&cfg, &out, src, options),
                None => run(&cfg, &out, options),
            }
            .map_err(|e| e.to_string())?;
            report(status, &out);
        }
        Command::Resume { run, max_stages } => {
            let status = resume(&run, RunOptions { max_stages }).map_err(|e| e.to_string())?;
            report(status, &run);
        }
        Command::Metrics { runs, out } => metrics(&runs, &out)?,
        Command::Encode { model, lattices } => {
            let model = load_model(&model).map_err(|e| e.to_string())?;
            for path in lattices {
                let l = read_lattice(&path)?;
                let z = model.encode(&l).map_err(|e| format!("{}: {e}", path.display()))?;
                println!("{}", serde_json::to_string(&z).expect("floats serialize"));
            }
        }
        Command::Reconstruct { model, lattice, out } => {
            let model = load_model(&model).map_err(|e| e.to_string())?;
            let l = read_lattice(&lattice)?;
            let r = model.reconstruct(&l).map_err(|e| e.to_string())?;
            let err = model.reconstruction_error(std::slice::from_ref(&l)).map_err(|e| e.to_string())?;
            println!("reconstruction_error_percent {err}");
            if let Some(out) = out {
                write(&out, &(r.to_json() + "\n"))?;
            }
        }
        Command::Export { input, format, out } => {
            let lattices = export_input(&input)?;
            match (lattices.as_slice(), out) {
                ([one], None) => print!("{}", render(one, format)),
                ([one], Some(out)) if !out.is_dir() => write(&out, &render(one, format))?,
                (_, None) => return Err("several lattices need --out DIR".into()),
                (many, Some(out)) => {
                    fresh_dir(&out)?;
                    for (i, l) in many.iter().enumerate() {
                        write(&out.join(format!("lattice_{i:04}.{}", extension(format))), &render(l, format))?;
                    }
                }
            }
        }
        Command::GenCubes { count, out, seed, size } => {
            fresh_dir(&out)?;
            let cubes = gen_cubes(count, Dims::cube(size), &mut stream(seed, "gen-cubes"));
            for (i, c) in cubes.iter().enumerate() {
                write(&out.join(format!("cube_{i:04}.json")), &(c.to_json() + "\n"))?;
            }
            eprintln!("{count} cuboid buildings written to {}", out.display());
        }
        Command::Compare {
            a,
            b,
            out,
            window,
            epsilon,
        } => {
            let cfg = PatternConfig { window, epsilon };
            let (sa, sb) = (read_set(&a)?, read_set(&b)?);
            let counts = all_counts(&[sa.as_slice(), sb.as_slice()].concat(), window).map_err(|e| e.to_string())?;
            let kl = kl_matrix(&counts, cfg.epsilon);
            let mut csv = String::from("a,b,kl\n");
            let mut values = Vec::new();
            for i in 0..sa.len() {
                for j in 0..sb.len() {
                    let v = kl[i][sa.len() + j];
                    csv.push_str(&format!("{i},{j},{v}\n"));
                    values.push(v);
                }
            }
            let s = MeanStd::of(&values);
            println!("pairs {} mean_kl {} std {} ci95 {}", s.n, s.mean, s.std, s.ci95());
            if let Some(out) = out {
                write(&out, &csv)?;
            }
        }
    }
    Ok(())
}

fn metrics(runs: &[PathBuf], out: &Path) -> Res<()> {
    fresh_dir(out)?;
    let single = runs.len() == 1;
    let mut models = Vec::new();
    let mut sets = Vec::new();
    for (i, dir) in runs.iter().enumerate() {
        let records = load_records(dir).map_err(|e| e.to_string())?;
        let target = if single {
            out.to_path_buf()
        } else {
            let name = dir.file_name().map_or(format!("run_{i}"), |n| n.to_string_lossy().into_owned());
            out.join(name)
        };
        for (file, csv) in reports(&records) {
            write(&target.join(file), &csv)?;
        }
        if !single {
            let (config, state) = load_state(dir).map_err(|e| e.to_string())?;
            let finals = state
                .history
                .last()
                .ok_or_else(|| format!("{}: no completed exploration phase", dir.display()))?
                .iter()
                .map(|s| s.feasible_lattices(config.dims()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let name = format!("{}:{}", target.file_name().unwrap().to_string_lossy(), config.strategy);
            sets.push((name.clone(), finals.into_iter().filter(|f| !f.is_empty()).collect::<Vec<_>>()));
            models.push((name, state.model));
        }
    }
    if !single {
        let refs: Vec<(String, &Model)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
        let matrix = reconstruction_matrix(&refs, &sets).map_err(|e| e.to_string())?;
        write(&out.join("reconstruction_matrix.csv"), &matrix.to_csv())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("VOXNOX_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .expect("thread pool configured once");
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
