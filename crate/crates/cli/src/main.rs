//! `hypernet`: synthetic scenes, spectral reduction, training and evaluation
//! of the hybrid 3D/2D CNN from the command line.
//!
//! Exit codes: 0 success, 2 usage or parameter error, 3 data or format
//! error, 4 numeric or convergence error. Failures print one line,
//! `error[<kind>]: <message>`, on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypernet::data::{load_cube, synth_cube, write_cube, Border, SynthSpec};
use hypernet::dimred::{read_basis, subspace_angle, write_basis, Method, Preprocess};
use hypernet::model::EpochRecord;
use hypernet::pipeline::{
    crossval, eval_run, explained_csv, fit_cube_basis, grid, load_run, train_run, RunManifest, BASIS_FILE,
    EXPLAINED_FILE, MANIFEST_FILE, MAP_FILE, REPORT_FILE,
};
use hypernet::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(name = "hypernet", version, about = "Hybrid 3D/2D CNN hyperspectral classification")]
struct Cli {
    /// Suppress per-epoch progress on stderr
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic cube
    Synth(SynthArgs),
    /// Train on a cube and evaluate on its test partition
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained checkpoint
    Eval {
        /// model.ckpt written by `train`; its directory must hold the run's
        /// manifest and basis
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cube to evaluate (defaults to the run's cube)
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Predict every labeled pixel with zero-padded patches and score
        /// them all
        #[arg(long)]
        full_map: bool,
    },
    /// Fit a spectral reduction on a cube's labeled pixels
    Dimred {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, default_value = "pca")]
        method: Method,
        #[arg(long, default_value_t = 15)]
        bands: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Center the data before fitting (matters for svd and grp)
        #[arg(long)]
        center: bool,
        #[arg(long)]
        standardize: bool,
        #[arg(long)]
        no_normalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Largest principal angle between two bases' subspaces
    CompareBases { first: PathBuf, second: PathBuf },
    /// Train every window × band-count pair and merge the scores
    Grid {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "9,11")]
        windows: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "15,18,21,24,27")]
        band_counts: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Five-fold cross-validation with a 95% interval on OA
    Crossval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat a run from its manifest
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    classes: usize,
    /// HEIGHTxWIDTH
    #[arg(long, default_value = "86x83")]
    size: String,
    #[arg(long, default_value_t = 204)]
    bands: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    sites: usize,
    /// Output path without extension; writes .hsij, .hsib, .hsil and
    /// .synth.json next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long, default_value = "pca")]
    dr: Method,
    #[arg(long, default_value_t = 15)]
    bands: usize,
    #[arg(long, default_value_t = 9)]
    window: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.4)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cross-validation fold in 1..=5
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value = "interior")]
    border: Border,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    standardize: bool,
}

impl RunArgs {
    fn manifest(&self) -> RunManifest {
        let mut m = RunManifest::new(&self.cube);
        m.dr = self.dr;
        m.bands = self.bands;
        m.window = self.window;
        m.border = self.border;
        m.fold = self.fold;
        m.normalize = !self.no_normalize;
        m.standardize = self.standardize;
        m.train.epochs = self.epochs;
        m.train.batch_size = self.batch;
        m.train.learning_rate = self.lr;
        m.train.dropout_rate = self.dropout;
        m.train.seed = self.seed;
        m
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Parameter(format!("size must look like 86x83, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn progress(quiet: bool, prefix: String, r: &EpochRecord) {
    if !quiet {
        eprintln!(
            "{prefix}epoch {:>3}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
}

fn summary(label: &str, oa: f64, aa: f64, kappa: f64) {
    println!("{label}oa {oa:.6} aa {aa:.6} kappa {kappa:.6}");
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("HYPERNET_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Parameter(format!("HYPERNET_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Parameter(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let quiet = cli.quiet;
    match cli.command {
        Command::Synth(a) => {
            let (height, width) = parse_size(&a.size)?;
            let spec = SynthSpec {
                classes: a.classes,
                height,
                width,
                bands: a.bands,
                noise: a.noise,
                seed: a.seed,
                sites_per_class: a.sites,
            };
            let (cube, manifest) = synth_cube(&spec)?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_cube(&a.out, &cube)?;
            fs::write(a.out.with_extension("synth.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
            println!("class counts {:?}", manifest.class_counts);
        }
        Command::Train { run, out } => {
            let manifest = run.manifest();
            let cube = load_cube(&manifest.cube)?;
            let outcome = train_run(&manifest, &cube, &mut |r| progress(quiet, String::new(), r))?;
            outcome.write(&out)?;
            let r = &outcome.report;
            summary("test ", r.oa, r.aa, r.kappa);
        }
        Command::Eval { checkpoint, cube, out, full_map } => {
            let dir = checkpoint.parent().unwrap_or(Path::new("."));
            let (manifest, _, basis) = load_run(dir)?;
            let model = hypernet::model::load_checkpoint(&checkpoint)?;
            let cube = load_cube(cube.as_deref().unwrap_or(&manifest.cube))?;
            let (report, map) = eval_run(&manifest, &model, &basis, &cube, full_map)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join(REPORT_FILE), report.to_json()?)?;
            map.write_ppm(&out.join(MAP_FILE))?;
            if out.join(MANIFEST_FILE) != dir.join(MANIFEST_FILE) {
                manifest.save(&out)?;
            }
            summary(if full_map { "labeled " } else { "test " }, report.oa, report.aa, report.kappa);
        }
        Command::Dimred { cube, method, bands, seed, center, standardize, no_normalize, out } => {
            let mut cube = load_cube(&cube)?;
            if !no_normalize {
                cube = hypernet::data::normalize(&cube);
            }
            let (basis, data) = fit_cube_basis(&cube, method, bands, seed, Preprocess { center, standardize })?;
            fs::create_dir_all(&out)?;
            write_basis(&out.join(BASIS_FILE), &basis)?;
            fs::write(out.join(EXPLAINED_FILE), explained_csv(&basis, &data)?)?;
            println!("{method} basis: {} bands -> {} components", basis.bands(), basis.retained());
        }
        Command::CompareBases { first, second } => {
            let (a, b) = (read_basis(&first)?, read_basis(&second)?);
            if a.projection.dim() != b.projection.dim() {
                return Err(Error::Dimension(format!(
                    "bases have shapes {:?} and {:?}",
                    a.projection.dim(),
                    b.projection.dim()
                )));
            }
            println!("subspace_angle {:e}", subspace_angle(&a.projection, &b.projection));
        }
        Command::Grid { run, windows, band_counts, out } => {
            let manifest = run.manifest();
            let cube = load_cube(&manifest.cube)?;
            let rows = grid(&manifest, &cube, &windows, &band_counts, &out, &mut |w, b, r| {
                progress(quiet, format!("w{w} b{b} "), r)
            })?;
            for r in rows {
                summary(&format!("w{} b{} ", r.window, r.bands), r.oa, r.aa, r.kappa);
            }
        }
        Command::Crossval { run, out } => {
            let manifest = run.manifest();
            let cube = load_cube(&manifest.cube)?;
            let report = crossval(&manifest, &cube, &out, &mut |f, r| progress(quiet, format!("fold {f} "), r))?;
            summary("mean ", report.oa_mean, report.aa_mean, report.kappa_mean);
            println!("oa ci95 [{:.6}, {:.6}]", report.ci95[0], report.ci95[1]);
        }
        Command::Rerun { manifest, out } => {
            let manifest = RunManifest::load(&manifest)?;
            if manifest.tool_version != hypernet::pipeline::TOOL_VERSION {
                eprintln!(
                    "warning: manifest written by version {}, running {}",
                    manifest.tool_version,
                    hypernet::pipeline::TOOL_VERSION
                );
            }
            let cube = manifest.load_cube()?;
            let outcome = train_run(&manifest, &cube, &mut |r| progress(quiet, String::new(), r))?;
            outcome.write(&out)?;
            let r = &outcome.report;
            summary("test ", r.oa, r.aa, r.kappa);
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Parameter => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = err.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {line}", err.kind());
            ExitCode::from(exit_code(&err))
        }
    }
}
