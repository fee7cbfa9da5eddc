//! End-to-end runs and the files they leave behind.
//!
//! A run normalizes the cube, splits the labeled patch centers, fits the
//! spectral reduction on the training centers only, reduces the whole cube,
//! extracts patches, trains, and evaluates the checkpoint-rounded model.

mod map;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    extract_patches, load_cube, normalize, patch_origins, split_labels, Border, HsiCube, PatchSet, SplitPlan,
};
use crate::dimred::{fit_with, read_basis, write_basis, Method, Preprocess, ReducedBasis, SpectralMatrix};
use crate::error::{Error, Result};
use crate::metrics::{fold_interval, EvalReport};
use crate::model::checkpoint::{load_checkpoint, rounded, save_checkpoint};
use crate::model::{
    build_model, check_architecture, mix_seed, train_with, EpochRecord, HybridModel, TrainConfig, TrainTrace,
};

pub use map::{class_color, read_ppm, ClassMap, PALETTE};

pub const MODEL_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MAP_FILE: &str = "map.ppm";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BASIS_FILE: &str = "basis.bin";
pub const EXPLAINED_FILE: &str = "explained.csv";
pub const CROSSVAL_FILE: &str = "crossval.json";
pub const GRID_FILE: &str = "grid.csv";

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const INIT_STREAM: u64 = 3;
const BASIS_STREAM: u64 = 4;

/// Everything that determines a run. Re-running from a manifest reproduces
/// its outputs bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub cube: PathBuf,
    pub dr: Method,
    pub bands: usize,
    pub window: usize,
    pub border: Border,
    pub fold: Option<usize>,
    /// Per-band min-max scaling before the reduction.
    pub normalize: bool,
    /// Fit the reduction on unit-variance bands.
    pub standardize: bool,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunManifest {
    pub fn new(cube: impl Into<PathBuf>) -> Self {
        Self {
            tool_version: TOOL_VERSION.into(),
            cube: cube.into(),
            dr: Method::Pca,
            bands: 15,
            window: 9,
            border: Border::Interior,
            fold: None,
            normalize: true,
            standardize: false,
            train: TrainConfig::default(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    fn preprocess(&self) -> Preprocess {
        Preprocess { center: false, standardize: self.standardize }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load_cube(&self) -> Result<HsiCube> {
        load_cube(&self.cube)
    }
}

/// A cube prepared for one manifest: normalized (when asked) and split over
/// its labeled patch centers.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub origins: Vec<(usize, usize)>,
    pub plan: SplitPlan,
}

impl Scene {
    pub fn new(manifest: &RunManifest, cube: &HsiCube) -> Result<Self> {
        manifest.train.validate()?;
        check_architecture(manifest.window, manifest.bands, cube.class_count())?;
        let cube = if manifest.normalize { normalize(cube) } else { cube.clone() };
        let origins = patch_origins(&cube, manifest.window, manifest.border)?;
        let labels: Vec<u16> = origins.iter().map(|&(r, c)| cube.label(r, c)).collect();
        let plan = split_labels(&labels, cube.class_count(), manifest.seed(), manifest.fold)?;
        Ok(Self { cube, origins, plan })
    }

    /// Spectra of the training centers.
    pub fn training_spectra(&self) -> Result<SpectralMatrix> {
        let width = self.cube.width();
        let pixels: Vec<usize> =
            self.plan.train.iter().map(|&i| self.origins[i].0 * width + self.origins[i].1).collect();
        self.cube.spectra(&pixels)
    }

    pub fn fit_basis(&self, manifest: &RunManifest) -> Result<ReducedBasis> {
        fit_with(
            manifest.dr,
            &self.training_spectra()?,
            manifest.bands,
            mix_seed(&[BASIS_STREAM, manifest.seed()]),
            manifest.preprocess(),
        )
    }
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Parameters as stored in the checkpoint.
    pub model: HybridModel,
    pub basis: ReducedBasis,
    pub trace: TrainTrace,
    pub report: EvalReport,
    pub map: ClassMap,
}

impl RunOutcome {
    /// Writes model, trace, report, map, manifest and basis into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_checkpoint(&dir.join(MODEL_FILE), &self.model)?;
        fs::write(dir.join(TRACE_FILE), self.trace.to_csv())?;
        fs::write(dir.join(REPORT_FILE), self.report.to_json()?)?;
        self.map.write_ppm(&dir.join(MAP_FILE))?;
        write_basis(&dir.join(BASIS_FILE), &self.basis)?;
        self.manifest.save(dir)
    }
}

/// Trains and evaluates one run on `cube`, calling `on_epoch` after each
/// epoch.
pub fn train_run(manifest: &RunManifest, cube: &HsiCube, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<RunOutcome> {
    let scene = Scene::new(manifest, cube)?;
    let basis = scene.fit_basis(manifest)?;
    let patches = extract_patches(&scene.cube.reduce(&basis)?, manifest.window, manifest.border)?;
    let mut model =
        build_model(manifest.window, manifest.bands, cube.class_count(), mix_seed(&[INIT_STREAM, manifest.seed()]))?;
    let trace = train_with(&mut model, &patches, &scene.plan, &manifest.train, on_epoch)?;
    let model = rounded(&model)?;
    let (report, map) = assess(&model, &patches, &scene.plan.test, &scene.cube)?;
    Ok(RunOutcome { manifest: manifest.clone(), model, basis, trace, report, map })
}

/// Loads the manifest, checkpoint and basis written by a training run.
pub fn load_run(dir: &Path) -> Result<(RunManifest, HybridModel, ReducedBasis)> {
    let manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
    let model = load_checkpoint(&dir.join(MODEL_FILE))?;
    let basis = read_basis(&dir.join(BASIS_FILE))?;
    Ok((manifest, model, basis))
}

/// Evaluates a trained model on `cube`.
///
/// By default metrics cover the run's test partition and the map shows every
/// patch center the run could use. With `full_map`, every labeled pixel gets
/// a zero-padded patch, is drawn on the map, and is scored.
pub fn eval_run(
    manifest: &RunManifest,
    model: &HybridModel,
    basis: &ReducedBasis,
    cube: &HsiCube,
    full_map: bool,
) -> Result<(EvalReport, ClassMap)> {
    check_topology(manifest, model, basis, cube)?;
    let scene = Scene::new(manifest, cube)?;
    let reduced = scene.cube.reduce(basis)?;
    if full_map {
        let patches = extract_patches(&reduced, manifest.window, Border::ZeroPad)?;
        let all: Vec<usize> = (0..patches.len()).collect();
        assess(model, &patches, &all, &scene.cube)
    } else {
        let patches = extract_patches(&reduced, manifest.window, manifest.border)?;
        assess(model, &patches, &scene.plan.test, &scene.cube)
    }
}

fn check_topology(manifest: &RunManifest, model: &HybridModel, basis: &ReducedBasis, cube: &HsiCube) -> Result<()> {
    let mismatch = |what: String| Err(Error::Manifest(what));
    if model.window() != manifest.window || model.bands() != manifest.bands {
        return mismatch(format!(
            "checkpoint expects {w}×{w}×{b} patches, manifest says {mw}×{mw}×{mb}",
            w = model.window(),
            b = model.bands(),
            mw = manifest.window,
            mb = manifest.bands
        ));
    }
    if basis.retained() != manifest.bands {
        return mismatch(format!("basis keeps {} components, manifest says {}", basis.retained(), manifest.bands));
    }
    if basis.bands() != cube.bands() {
        return mismatch(format!("basis was fitted on {} bands, cube has {}", basis.bands(), cube.bands()));
    }
    if model.class_count() != cube.class_count() {
        return mismatch(format!("checkpoint has {} classes, cube has {}", model.class_count(), cube.class_count()));
    }
    Ok(())
}

/// Predicts every patch, draws the map, and scores the patches in `scored`.
fn assess(model: &HybridModel, patches: &PatchSet, scored: &[usize], cube: &HsiCube) -> Result<(EvalReport, ClassMap)> {
    let predicted = model.predict(patches.values(), patches.len())?;
    let mut map = ClassMap::blank(cube.height(), cube.width());
    for (&(r, c), &p) in patches.origins().iter().zip(&predicted) {
        map.set(r, c, p);
    }
    let truth: Vec<u16> = scored.iter().map(|&i| patches.labels()[i]).collect();
    let guess: Vec<u16> = scored.iter().map(|&i| predicted[i]).collect();
    Ok((EvalReport::from_labels(&truth, &guess, cube.class_names())?, map))
}

/// Fits a reduction on every labeled pixel of `cube`, for inspection.
pub fn fit_cube_basis(
    cube: &HsiCube,
    method: Method,
    retain: usize,
    seed: u64,
    prep: Preprocess,
) -> Result<(ReducedBasis, SpectralMatrix)> {
    let pixels: Vec<usize> = (0..cube.labels().len()).filter(|&p| cube.labels()[p] != 0).collect();
    let data = cube.spectra(&pixels)?;
    Ok((fit_with(method, &data, retain, seed, prep)?, data))
}

/// `component,variance` rows: the basis's own explained variances when it
/// has them, otherwise the sample variance of each component's scores on
/// `data`.
pub fn explained_csv(basis: &ReducedBasis, data: &SpectralMatrix) -> Result<String> {
    let variances: Vec<f64> = match &basis.explained {
        Some(e) => e.to_vec(),
        None => {
            let scores = basis.transform(data)?;
            let n = (data.samples().max(2) - 1) as f64;
            scores.centered().data().columns().into_iter().map(|c| c.dot(&c) / n).collect()
        }
    };
    let mut out = String::from("component,variance\n");
    for (i, v) in variances.iter().enumerate() {
        out.push_str(&format!("{},{v}\n", i + 1));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldScore>,
    pub oa_mean: f64,
    pub aa_mean: f64,
    pub kappa_mean: f64,
    /// `mean ± 1.96·sd/√k` over the fold OAs.
    pub ci95: [f64; 2],
}

/// Runs folds 1..=5 into `out/fold<k>` and writes `crossval.json`.
pub fn crossval(
    manifest: &RunManifest,
    cube: &HsiCube,
    out: &Path,
    on_epoch: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<CrossValReport> {
    fs::create_dir_all(out)?;
    let mut folds = Vec::new();
    for fold in 1..=crate::data::FOLDS {
        let m = RunManifest { fold: Some(fold), ..manifest.clone() };
        let run = train_run(&m, cube, &mut |r| on_epoch(fold, r))?;
        run.write(&out.join(format!("fold{fold}")))?;
        folds.push(FoldScore { fold, oa: run.report.oa, aa: run.report.aa, kappa: run.report.kappa });
    }
    let mean = |f: fn(&FoldScore) -> f64| folds.iter().map(f).sum::<f64>() / folds.len() as f64;
    let oas: Vec<f64> = folds.iter().map(|f| f.oa).collect();
    let report = CrossValReport {
        oa_mean: mean(|f| f.oa),
        aa_mean: mean(|f| f.aa),
        kappa_mean: mean(|f| f.kappa),
        ci95: fold_interval(&oas)?,
        folds,
    };
    fs::write(out.join(CROSSVAL_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    RunManifest { fold: None, ..manifest.clone() }.save(out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub window: usize,
    pub bands: usize,
    pub kappa: f64,
    pub oa: f64,
    pub aa: f64,
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("window,bands,kappa,oa,aa\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.window, r.bands, r.kappa, r.oa, r.aa));
    }
    out
}

/// Trains every window × band-count pair into `out/w<W>_b<B>` and writes
/// the merged `grid.csv`.
pub fn grid(
    manifest: &RunManifest,
    cube: &HsiCube,
    windows: &[usize],
    band_counts: &[usize],
    out: &Path,
    on_epoch: &mut dyn FnMut(usize, usize, &EpochRecord),
) -> Result<Vec<GridRow>> {
    if windows.is_empty() || band_counts.is_empty() {
        return Err(Error::Parameter("grid needs at least one window and one band count".into()));
    }
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for &window in windows {
        for &bands in band_counts {
            let m = RunManifest { window, bands, ..manifest.clone() };
            let run = train_run(&m, cube, &mut |r| on_epoch(window, bands, r))?;
            run.write(&out.join(format!("w{window}_b{bands}")))?;
            rows.push(GridRow { window, bands, kappa: run.report.kappa, oa: run.report.oa, aa: run.report.aa });
        }
    }
    fs::write(out.join(GRID_FILE), grid_csv(&rows))?;
    manifest.save(out)?;
    Ok(rows)
}
