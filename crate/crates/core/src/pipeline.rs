//! File-based stages sharing one run directory. Each stage reads the
//! artifacts of the previous ones, so stages can run one at a time or
//! chained by [`run_pipeline`].

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autogeolabel::{segment, vegetation_fraction};
use crate::config::{ConfigError, RunConfig};
use crate::io::{
    load_model, parse_point_cloud, read_manifest, save_model, IoError, SceneManifest, TensorSet,
};
use crate::perturb::{batch_perturb, write_counterfactuals, PerturbError};
use crate::rasterizer::{
    compute_norm_stats, denormalize, normalize, rasterize, NormStats, RasterError, RasterStack,
};
use crate::regressor::{error_report, train_regressor, ErrorReport, RegressorModel};
use crate::report::{build_report, ExperimentRecord, Report, ReportError};
use crate::seeds::derive_seed;
use crate::synthcity::{cloud_path, generate_corpus, read_split, write_corpus, Split};
use crate::vae::{train_vae, ModelError, VaeModel};

#[derive(Debug, Error)]
pub enum StageError {
    /// Bad invocation or configuration.
    #[error("{0}")]
    Usage(String),
    /// Missing or malformed data, or a numeric failure.
    #[error("{0}")]
    Data(String),
}

impl From<ConfigError> for StageError {
    fn from(e: ConfigError) -> Self {
        StageError::Usage(e.to_string())
    }
}

impl From<IoError> for StageError {
    fn from(e: IoError) -> Self {
        StageError::Data(e.to_string())
    }
}

impl From<std::io::Error> for StageError {
    fn from(e: std::io::Error) -> Self {
        StageError::Data(e.to_string())
    }
}

impl From<RasterError> for StageError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Usage(m) => StageError::Usage(m),
            RasterError::Io(e) => e.into(),
        }
    }
}

impl From<ModelError> for StageError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Usage(m) => StageError::Usage(m),
            other => StageError::Data(other.to_string()),
        }
    }
}

impl From<PerturbError> for StageError {
    fn from(e: PerturbError) -> Self {
        match e {
            PerturbError::Usage(m) => StageError::Usage(m),
            other => StageError::Data(other.to_string()),
        }
    }
}

impl From<ReportError> for StageError {
    fn from(e: ReportError) -> Self {
        StageError::Data(e.to_string())
    }
}

/// Paths of every artifact inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.path("resolved.cfg")
    }
    pub fn manifest(&self) -> PathBuf {
        self.path("manifest.csv")
    }
    pub fn split(&self) -> PathBuf {
        self.path("split.csv")
    }
    pub fn norm(&self) -> PathBuf {
        self.path("rasters/norm.lczm")
    }
    pub fn vae(&self) -> PathBuf {
        self.path("models/vae.lczm")
    }
    pub fn vae_history(&self) -> PathBuf {
        self.path("models/vae_loss.csv")
    }
    pub fn regressor(&self) -> PathBuf {
        self.path("models/reg.lczm")
    }
    pub fn regressor_errors(&self) -> PathBuf {
        self.path("models/reg_errors.csv")
    }
    pub fn counterfactuals(&self) -> PathBuf {
        self.path("counterfactuals")
    }
    pub fn failures(&self) -> PathBuf {
        self.path("counterfactuals/failures.csv")
    }
    pub fn records(&self) -> PathBuf {
        self.path("labels/records.csv")
    }
    pub fn figure(&self) -> PathBuf {
        self.path("report/figure.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.path("report/report.txt")
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, StageError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn missing(path: &Path, stage: &str) -> StageError {
    StageError::Data(format!("{} not found; run `{stage}` first", path.display()))
}

/// Writes the fully resolved configuration into the run directory.
pub fn write_resolved_config(cfg: &RunConfig, dir: &RunDir) -> Result<(), StageError> {
    let mut w = create(&dir.resolved_config())?;
    w.write_all(cfg.to_text().as_bytes())?;
    w.flush()?;
    Ok(())
}

fn load_manifest(dir: &RunDir) -> Result<SceneManifest, StageError> {
    let path = dir.manifest();
    let f = fs::File::open(&path).map_err(|_| missing(&path, "synth"))?;
    let m = read_manifest(BufReader::new(f))?;
    m.validate()?;
    Ok(m)
}

fn load_split(dir: &RunDir, manifest: &SceneManifest) -> Result<Vec<(String, Split)>, StageError> {
    let path = dir.split();
    if path.exists() {
        read_split(&path).map_err(Into::into)
    } else {
        Ok(manifest
            .entries
            .iter()
            .map(|e| (e.scene_id.clone(), Split::Train))
            .collect())
    }
}

pub fn synth(cfg: &RunConfig, dir: &RunDir) -> Result<SceneManifest, StageError> {
    cfg.validate()?;
    let corpus = generate_corpus(&cfg.corpus()).map_err(StageError::Usage)?;
    Ok(write_corpus(&corpus, &dir.root)?)
}

/// Rasterizes every manifest scene's cloud into its stack file and stores
/// normalization constants fitted on the training split.
pub fn rasterize_stage(cfg: &RunConfig, dir: &RunDir) -> Result<NormStats, StageError> {
    cfg.validate()?;
    let grid = cfg.grid().map_err(StageError::Usage)?;
    let manifest = load_manifest(dir)?;
    let split = load_split(dir, &manifest)?;
    let mut train_stacks = Vec::new();
    for e in &manifest.entries {
        let path = dir.path(&cloud_path(&e.scene_id));
        let f = fs::File::open(&path).map_err(|_| missing(&path, "synth"))?;
        let cloud = parse_point_cloud(BufReader::new(f))?;
        let stack = rasterize(&cloud, grid)?.stack;
        save_model(&stack.to_tensors(), dir.path(&e.raster_path))?;
        if split
            .iter()
            .any(|(id, s)| id == &e.scene_id && *s == Split::Train)
        {
            train_stacks.push(stack);
        }
    }
    if train_stacks.is_empty() {
        return Err(StageError::Data("training split is empty".into()));
    }
    let stats = compute_norm_stats(&train_stacks)?;
    save_model(&stats.to_tensors(), dir.norm())?;
    Ok(stats)
}

fn load_norm(dir: &RunDir) -> Result<NormStats, StageError> {
    let path = dir.norm();
    let set = load_model(&path).map_err(|_| missing(&path, "rasterize"))?;
    Ok(NormStats::from_tensors(&set)?)
}

/// Normalized stacks of one split, in manifest order, with temperatures.
pub fn load_split_stacks(
    dir: &RunDir,
    which: Split,
) -> Result<Vec<(String, RasterStack, f64)>, StageError> {
    let manifest = load_manifest(dir)?;
    let split = load_split(dir, &manifest)?;
    let stats = load_norm(dir)?;
    let mut out = Vec::new();
    for e in &manifest.entries {
        if !split.iter().any(|(id, s)| id == &e.scene_id && *s == which) {
            continue;
        }
        let path = dir.path(&e.raster_path);
        let set = load_model(&path).map_err(|_| missing(&path, "rasterize"))?;
        let stack = RasterStack::from_tensors(&set)?;
        out.push((
            e.scene_id.clone(),
            normalize(&stack, &stats),
            e.temperature_kelvin,
        ));
    }
    Ok(out)
}

pub fn train_vae_stage(cfg: &RunConfig, dir: &RunDir) -> Result<VaeModel, StageError> {
    cfg.validate()?;
    let train: Vec<RasterStack> = load_split_stacks(dir, Split::Train)?
        .into_iter()
        .map(|s| s.1)
        .collect();
    if train.is_empty() {
        return Err(StageError::Data("training split is empty".into()));
    }
    let model_cfg = cfg.vae_config().map_err(StageError::Usage)?;
    let (model, history) = train_vae(&train, model_cfg, &cfg.vae_train())?;
    save_model(&model.to_tensors(), dir.vae())?;
    let mut w = create(&dir.vae_history())?;
    writeln!(w, "epoch,lambda,loss,recon,kld")?;
    for h in &history {
        writeln!(
            w,
            "{},{},{},{},{}",
            h.epoch, h.lambda, h.loss, h.recon, h.kld
        )?;
    }
    w.flush()?;
    Ok(model)
}

pub fn load_vae(dir: &RunDir) -> Result<VaeModel, StageError> {
    let path = dir.vae();
    let set = load_model(&path).map_err(|_| missing(&path, "train-vae"))?;
    Ok(VaeModel::from_tensors(&set)?)
}

pub fn load_regressor(dir: &RunDir) -> Result<RegressorModel, StageError> {
    let path = dir.regressor();
    let set = load_model(&path).map_err(|_| missing(&path, "train-reg"))?;
    Ok(RegressorModel::from_tensors(&set)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSummary {
    pub train: ErrorReport,
    pub test: Option<ErrorReport>,
    /// Max minus min temperature over the whole manifest.
    pub temperature_range: f64,
}

fn encode_all(
    vae: &VaeModel,
    stacks: &[(String, RasterStack, f64)],
) -> Result<Vec<Vec<f64>>, StageError> {
    stacks
        .iter()
        .map(|(_, s, _)| vae.encode_mean(s).map_err(Into::into))
        .collect()
}

pub fn train_reg_stage(cfg: &RunConfig, dir: &RunDir) -> Result<RegressorSummary, StageError> {
    cfg.validate()?;
    let vae = load_vae(dir)?;
    let train = load_split_stacks(dir, Split::Train)?;
    let codes = encode_all(&vae, &train)?;
    let temps: Vec<f64> = train.iter().map(|s| s.2).collect();
    let (model, _) = train_regressor(&codes, &temps, cfg.reg_config(), &cfg.reg_train())?;
    save_model(&model.to_tensors(), dir.regressor())?;
    // downstream stages see the stored f32 weights, so evaluate those
    let model = load_regressor(dir)?;
    let train_err = error_report(&model, &codes, &temps)?;

    let test = load_split_stacks(dir, Split::Test)?;
    let test_err = if test.is_empty() {
        None
    } else {
        let codes = encode_all(&vae, &test)?;
        let temps: Vec<f64> = test.iter().map(|s| s.2).collect();
        Some(error_report(&model, &codes, &temps)?)
    };
    let manifest = load_manifest(dir)?;
    let (lo, hi) = manifest
        .entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.temperature_kelvin), hi.max(e.temperature_kelvin))
        });
    let summary = RegressorSummary {
        train: train_err,
        test: test_err,
        temperature_range: hi - lo,
    };
    let mut w = create(&dir.regressor_errors())?;
    writeln!(w, "split,n,mae,min_signed,max_signed,temperature_range")?;
    for (name, r) in [("train", Some(train_err)), ("test", test_err)] {
        if let Some(r) = r {
            writeln!(
                w,
                "{name},{},{},{},{},{}",
                r.n, r.mae, r.min_signed, r.max_signed, summary.temperature_range
            )?;
        }
    }
    w.flush()?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSummary {
    pub scenes: Vec<String>,
    pub counterfactuals: usize,
    pub failures: usize,
}

/// Picks `perturb.n_scenes` held-out scenes by seeded shuffle and writes
/// counterfactuals for the sweep plus the zero baseline.
pub fn perturb_stage(cfg: &RunConfig, dir: &RunDir) -> Result<PerturbSummary, StageError> {
    cfg.validate()?;
    let vae = load_vae(dir)?;
    let reg = load_regressor(dir)?;
    let mut pool = load_split_stacks(dir, Split::Test)?;
    if pool.is_empty() {
        pool = load_split_stacks(dir, Split::Train)?;
    }
    if pool.is_empty() {
        return Err(StageError::Data("no scenes to perturb".into()));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed, "perturb",
    )));
    pool.truncate(cfg.perturb_n_scenes);
    pool.sort_by(|a, b| a.0.cmp(&b.0));
    let ids: Vec<String> = pool.iter().map(|s| s.0.clone()).collect();
    let stacks: Vec<RasterStack> = pool.into_iter().map(|s| s.1).collect();
    let sweep = cfg.sweep_with_baseline();
    let out = batch_perturb(&vae, &reg, &stacks, &sweep, &cfg.perturbation(0.0))?;

    let cf_dir = dir.counterfactuals();
    if cf_dir.exists() {
        fs::remove_dir_all(&cf_dir)?;
    }
    let items: Vec<(String, _)> = out
        .scenes
        .into_iter()
        .map(|(i, cf)| (ids[i].clone(), cf))
        .collect();
    write_counterfactuals(&cf_dir, &items)?;
    let mut w = create(&dir.failures())?;
    writeln!(w, "scene_id,delta_t,error")?;
    for f in &out.failures {
        writeln!(
            w,
            "{},{},{}",
            ids[f.scene],
            f.delta_t,
            f.error.to_string().replace(',', ";")
        )?;
    }
    w.flush()?;
    Ok(PerturbSummary {
        scenes: ids,
        counterfactuals: items.len(),
        failures: out.failures.len(),
    })
}

struct IndexRow {
    scene_id: String,
    delta_t: f64,
    achieved_dt: f64,
    file: String,
}

fn read_index(dir: &RunDir) -> Result<Vec<IndexRow>, StageError> {
    let path = dir.counterfactuals().join("index.csv");
    let text = fs::read_to_string(&path).map_err(|_| missing(&path, "perturb"))?;
    let bad = |line: usize| StageError::Data(format!("{}: malformed line {line}", path.display()));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 1));
            }
            Ok(IndexRow {
                scene_id: f[0].to_string(),
                delta_t: f[1].parse().map_err(|_| bad(i + 1))?,
                achieved_dt: f[2].parse().map_err(|_| bad(i + 1))?,
                file: f[4].to_string(),
            })
        })
        .collect()
}

fn count_failures(dir: &RunDir) -> usize {
    fs::read_to_string(dir.failures())
        .map(|t| t.lines().skip(1).filter(|l| !l.is_empty()).count())
        .unwrap_or(0)
}

/// Labels every counterfactual (after de-normalization) and writes
/// `labels/records.csv`.
pub fn label_stage(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<ExperimentRecord>, StageError> {
    cfg.validate()?;
    let stats = load_norm(dir)?;
    let rows = read_index(dir)?;
    let mut fractions = Vec::with_capacity(rows.len());
    for r in &rows {
        let set: TensorSet = load_model(dir.counterfactuals().join(&r.file))?;
        let stack = denormalize(&RasterStack::from_tensors(&set)?, &stats);
        let map = segment(&stack, &cfg.labels);
        let pgm = dir.path(&format!("labels/{}.pgm", r.file.trim_end_matches(".lczm")));
        let mut w = create(&pgm)?;
        map.write_pgm(&mut w)?;
        w.flush()?;
        fractions.push(vegetation_fraction(&map));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (r, &v) in rows.iter().zip(&fractions) {
        let baseline = rows
            .iter()
            .zip(&fractions)
            .find(|(b, _)| b.scene_id == r.scene_id && b.delta_t == 0.0)
            .map(|(_, &v)| v)
            .ok_or_else(|| {
                StageError::Data(format!(
                    "scene {} has no delta_t = 0 counterfactual",
                    r.scene_id
                ))
            })?;
        records.push(ExperimentRecord {
            scene_id: r.scene_id.clone(),
            delta_t: r.delta_t,
            achieved_dt: r.achieved_dt,
            v_prime: v,
            v_baseline: baseline,
        });
    }
    let mut w = create(&dir.records())?;
    writeln!(w, "scene_id,delta_t,achieved_dt,v_prime,v_baseline")?;
    for r in &records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.scene_id, r.delta_t, r.achieved_dt, r.v_prime, r.v_baseline
        )?;
    }
    w.flush()?;
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, StageError> {
    let text = fs::read_to_string(path).map_err(|_| {
        StageError::Data(format!("{} not found; run `label` first", path.display()))
    })?;
    let bad = |line: usize| StageError::Data(format!("{}: malformed line {line}", path.display()));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "scene_id,delta_t,achieved_dt,v_prime,v_baseline")) => {}
        _ => return Err(bad(1)),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 1));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1));
            Ok(ExperimentRecord {
                scene_id: f[0].to_string(),
                delta_t: num(f[1])?,
                achieved_dt: num(f[2])?,
                v_prime: num(f[3])?,
                v_baseline: num(f[4])?,
            })
        })
        .collect()
}

pub fn analyze_stage(cfg: &RunConfig, dir: &RunDir) -> Result<Report, StageError> {
    cfg.validate()?;
    let records = read_records(&dir.records())?;
    let report = build_report(&records, count_failures(dir), cfg.alpha)?;
    let mut w = create(&dir.figure())?;
    report.write_figure_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.report())?;
    w.write_all(report.text().as_bytes())?;
    w.flush()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub regressor: RegressorSummary,
    pub perturb: PerturbSummary,
    pub report: Report,
}

/// synth → rasterize → train-vae → train-reg → perturb → label → analyze.
pub fn run_pipeline(cfg: &RunConfig, dir: &RunDir) -> Result<PipelineOutcome, StageError> {
    cfg.validate()?;
    fs::create_dir_all(&dir.root)?;
    write_resolved_config(cfg, dir)?;
    synth(cfg, dir)?;
    rasterize_stage(cfg, dir)?;
    train_vae_stage(cfg, dir)?;
    let regressor = train_reg_stage(cfg, dir)?;
    let perturb = perturb_stage(cfg, dir)?;
    label_stage(cfg, dir)?;
    let report = analyze_stage(cfg, dir)?;
    Ok(PipelineOutcome {
        regressor,
        perturb,
        report,
    })
}
