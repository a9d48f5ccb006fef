//! End-to-end runs: cut → train → generate → quilt → postprocess →
//! characterize → report, all inside one output directory.
//!
//! Each stage records a fingerprint of its settings and input hashes plus the
//! hashes of what it wrote under `.stages/`. A rerun skips stages whose
//! record still matches the files on disk, so deleting any artifact and
//! rerunning rebuilds exactly that artifact and whatever depends on it.
//! Training additionally keeps a partial checkpoint every
//! `train.checkpoint_every` iterations.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use microforge_core::homog::{homogenize, EffectiveElasticity};
use microforge_core::image::{extract_patches, patch_corners, Phase};
use microforge_core::metrology::{compare_report, minkowski, Comparison, SampleStats};
use microforge_core::postproc::{threshold, PostprocError, Recipe};
use microforge_core::quilt::assemble_grid_with;
use microforge_core::stylenet::{infer_config, init_critic, init_generator, NetConfig, Variant};
use microforge_core::synth::DiskField;
use microforge_core::train::{sample_images, Checkpoint, StyleGan, TraceRow, Trainer};
use microforge_core::{BinaryMask, GrayImage, SquaresRng};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ConfigMap, Exemplar, PipelineConfig, SeedStream};
use crate::io::{self, IoError};
use crate::parallel;
use crate::tables::{self, MetricTable};

pub const TOOL: &str = concat!("microforge ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl From<crate::config::ConfigError> for PipelineError {
    fn from(e: crate::config::ConfigError) -> Self {
        Self::Validation(e.0)
    }
}

/// Tags errors with the stage they occurred in.
struct StageErr(&'static str);

impl StageErr {
    fn msg(&self, m: impl Display) -> PipelineError {
        PipelineError::Stage { stage: self.0, message: m.to_string() }
    }
}

fn in_stage(stage: &'static str) -> StageErr {
    StageErr(stage)
}

trait At<T> {
    fn at(self, s: &StageErr) -> Result<T, PipelineError>;
}

impl<T, E: Display> At<T> for Result<T, E> {
    fn at(self, s: &StageErr) -> Result<T, PipelineError> {
        self.map_err(|e| s.msg(e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, IoError> {
    Ok(sha256_hex(&io::read_bytes(path)?))
}

// ---------------------------------------------------------------------------
// Layout

pub const PATCHES: &str = "patches.mgpt";
pub const EXEMPLAR_PNG: &str = "exemplar.png";
pub const CHECKPOINT: &str = "checkpoint.mgck";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const PARTIAL_CHECKPOINT: &str = "train.partial.mgck";
pub const PARTIAL_TRACE: &str = "loss_trace.partial.csv";
pub const PARTIAL_META: &str = "train.partial.json";
pub const GENERATED_DIR: &str = "generated";
pub const REAL_DIR: &str = "real";
pub const MOSAIC_DIR: &str = "mosaics";
pub const BINARY_DIR: &str = "binary";
pub const MINKOWSKI_REAL: &str = "minkowski_real.csv";
pub const MINKOWSKI_GENERATED: &str = "minkowski_generated.csv";
pub const MINKOWSKI_JSON: &str = "minkowski.json";
pub const HISTOGRAM: &str = "histogram.csv";
pub const ELASTIC_REAL: &str = "elastic_real.csv";
pub const ELASTIC_GENERATED: &str = "elastic_generated.csv";
pub const ELASTIC_JSON: &str = "elastic.json";
pub const CONFIG_ECHO: &str = "config.txt";
pub const REPORT: &str = "report.json";
pub const TIMINGS: &str = "timings.json";
pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = "run.lock";
pub const STAGE_DIR: &str = ".stages";

/// Metrics of the elastic comparison.
pub const ELASTIC_METRICS: [&str; 4] = ["E", "nu", "E_y", "anisotropy"];

pub const STAGES: [&str; 7] = ["cut", "train", "generate", "quilt", "postprocess", "characterize", "report"];

/// Holds `run.lock` for the lifetime of a run.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Validation(format!(
                "{} exists: another run is using this directory (remove the file if that run died)",
                path.display()
            ))),
            Err(e) => Err(PipelineError::Validation(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub threads: usize,
    /// Print one line per stage to stderr.
    pub verbose: bool,
    /// Stop training with a stage error after this many iterations, leaving
    /// the partial checkpoint behind. Used to exercise resumption.
    pub interrupt_training_at: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { threads: parallel::thread_count(), verbose: false, interrupt_training_at: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    /// Contents of `report.json`.
    pub json: Value,
    pub timings: Vec<StageTiming>,
    pub minkowski: BTreeMap<String, Comparison>,
    pub elastic: Option<BTreeMap<String, Comparison>>,
}

// ---------------------------------------------------------------------------
// Stage bookkeeping

struct Run<'a> {
    cfg: &'a PipelineConfig,
    opts: &'a RunOptions,
    dir: PathBuf,
    /// Relative path → sha256 of every artifact written or verified so far.
    artifacts: BTreeMap<String, String>,
    timings: Vec<StageTiming>,
}

struct StageSpec<'s> {
    name: &'static str,
    /// Config keys equal to or starting with one of these enter the fingerprint.
    keys: &'s [&'s str],
    /// Artifact prefixes whose hashes enter the fingerprint.
    inputs: &'s [&'s str],
    /// Extra fingerprint material (external file hashes, canonical recipes).
    extra: String,
}

fn rel(path: &str, name: &str) -> String {
    format!("{path}/{name}")
}

impl Run<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn fingerprint(&self, spec: &StageSpec) -> String {
        let mut h = Sha256::new();
        h.update(spec.name.as_bytes());
        for (k, v) in self.cfg.map.echo() {
            if spec.keys.iter().any(|p| k == *p || (p.ends_with('.') && k.starts_with(p))) {
                h.update(format!("\n{k}={v}").as_bytes());
            }
        }
        for (path, hash) in &self.artifacts {
            if spec.inputs.iter().any(|p| path == p || path.starts_with(&format!("{p}/"))) {
                h.update(format!("\n{path}:{hash}").as_bytes());
            }
        }
        h.update(b"\n");
        h.update(spec.extra.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn record_path(&self, stage: &str) -> PathBuf {
        self.dir.join(STAGE_DIR).join(format!("{stage}.json"))
    }

    /// Outputs of a previous identical run of this stage, if all still match.
    fn cached(&self, stage: &str, fingerprint: &str) -> Option<BTreeMap<String, String>> {
        let bytes = fs::read(self.record_path(stage)).ok()?;
        let v: Value = serde_json::from_slice(&bytes).ok()?;
        if v.get("fingerprint")?.as_str()? != fingerprint {
            return None;
        }
        let mut outputs = BTreeMap::new();
        for (path, hash) in v.get("outputs")?.as_object()? {
            let hash = hash.as_str()?;
            if hash_file(&self.path(path)).ok()? != hash {
                return None;
            }
            outputs.insert(path.clone(), hash.to_string());
        }
        Some(outputs)
    }

    fn stage(
        &mut self,
        spec: StageSpec,
        body: impl FnOnce(&mut Self) -> Result<Vec<String>, PipelineError>,
    ) -> Result<(), PipelineError> {
        let start = Instant::now();
        let fp = self.fingerprint(&spec);
        if let Some(outputs) = self.cached(spec.name, &fp) {
            if self.opts.verbose {
                eprintln!("[{}] up to date", spec.name);
            }
            self.artifacts.extend(outputs);
            self.timings.push(StageTiming { stage: spec.name, seconds: start.elapsed().as_secs_f64(), skipped: true });
            return Ok(());
        }
        if self.opts.verbose {
            eprintln!("[{}] running", spec.name);
        }
        let _ = fs::remove_file(self.record_path(spec.name));
        let written = body(self)?;
        let err = in_stage(spec.name);
        let mut outputs = BTreeMap::new();
        for path in written {
            outputs.insert(path.clone(), hash_file(&self.path(&path)).at(&err)?);
        }
        let record = json!({ "stage": spec.name, "fingerprint": fp, "outputs": outputs });
        io::create_dir(&self.dir.join(STAGE_DIR)).at(&err)?;
        io::write_atomic(&self.record_path(spec.name), &tables::json_bytes(&record)).at(&err)?;
        self.artifacts.extend(outputs);
        let seconds = start.elapsed().as_secs_f64();
        if self.opts.verbose {
            eprintln!("[{}] done in {seconds:.2} s", spec.name);
        }
        self.timings.push(StageTiming { stage: spec.name, seconds, skipped: false });
        Ok(())
    }

    /// Empty (or create) an output directory of the current stage.
    fn fresh_dir(&self, rel: &str, stage: &'static str) -> Result<PathBuf, PipelineError> {
        let p = self.path(rel);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| in_stage(stage).msg(format!("{}: {e}", p.display())))?;
        }
        io::create_dir(&p).at(&in_stage(stage))?;
        Ok(p)
    }

    fn images_under(&self, prefix: &str) -> Vec<String> {
        self.artifacts.keys().filter(|k| k.starts_with(&format!("{prefix}/"))).cloned().collect()
    }
}

// ---------------------------------------------------------------------------
// Helpers shared with the CLI

/// Network of a checkpoint. A generator with an RGB layer at twice the
/// critic's top resolution marks the resolution-increase variant.
pub fn net_from_checkpoint(ckpt: &Checkpoint, progressive: bool) -> Result<NetConfig, String> {
    let (g, d) = ckpt.params();
    let probe = infer_config(&g, &d, Variant::Standard, progressive).map_err(|e| e.to_string())?;
    let variant = if g.contains(&format!("g.rgb{}.w", 2 * probe.target_resolution)) {
        Variant::ResolutionIncrease
    } else {
        Variant::Standard
    };
    infer_config(&g, &d, variant, progressive).map_err(|e| e.to_string())
}

/// Apply a recipe; an image with a single grey level cannot be split by
/// Otsu and is classified as a whole at mid-grey instead.
pub fn binarize(recipe: &Recipe, img: &GrayImage) -> Result<BinaryMask, PostprocError> {
    match recipe.apply(img) {
        Ok(p) => Ok(p.mask),
        Err(PostprocError::DegenerateImage) => Ok(threshold(img, 128)),
        Err(e) => Err(e),
    }
}

pub fn load_exemplar(ex: &Exemplar, seed: u64) -> Result<GrayImage, IoError> {
    match ex {
        Exemplar::Synthetic { size, fraction } => {
            Ok(DiskField { size: *size, target_fraction: *fraction, ..DiskField::default() }.render(seed))
        }
        Exemplar::File(p) => io::read_image(p),
    }
}

fn sample_name(prefix: &str, i: usize) -> String {
    format!("{prefix}_{i:04}.png")
}

fn stem(rel: &str) -> String {
    Path::new(rel).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Check everything that can be checked before work starts, and settle the
/// network (from the checkpoint when one is given).
pub fn resolve_net(cfg: &PipelineConfig) -> Result<(NetConfig, Option<Checkpoint>), PipelineError> {
    let v = |m: String| PipelineError::Validation(m);
    if let Exemplar::Synthetic { size, .. } = cfg.exemplar {
        if size < cfg.sample_size() {
            return Err(v(format!(
                "synthetic.size {size} is smaller than the {0}×{0} samples",
                cfg.sample_size()
            )));
        }
    }
    let Some(path) = &cfg.checkpoint else {
        return Ok((cfg.net.clone(), None));
    };
    let ckpt = io::read_checkpoint(path).map_err(|e| v(e.to_string()))?;
    let net = net_from_checkpoint(&ckpt, cfg.net.progressive).map_err(|e| v(format!("{}: {e}", path.display())))?;
    if net.target_resolution != cfg.patch_size || net.variant != cfg.net.variant {
        return Err(v(format!(
            "{} holds a {} network at {}, but the config asks for {} at cut.patch_size {}",
            path.display(),
            crate::config::variant_name(net.variant),
            net.target_resolution,
            crate::config::variant_name(cfg.net.variant),
            cfg.patch_size
        )));
    }
    Ok((net, Some(ckpt)))
}

// ---------------------------------------------------------------------------
// Stages

fn stage_cut(run: &mut Run) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let extra = match &cfg.exemplar {
        Exemplar::File(p) => hash_file(p).at(&in_stage("cut"))?,
        Exemplar::Synthetic { .. } => String::new(),
    };
    let spec = StageSpec {
        name: "cut",
        keys: &["exemplar", "synthetic.", "seed", "cut.", "generate.count", "net.variant"],
        inputs: &[],
        extra,
    };
    run.stage(spec, |run| {
        let err = in_stage("cut");
        let img = load_exemplar(&cfg.exemplar, cfg.stage_seed(SeedStream::Exemplar)).at(&err)?;
        let mut out = Vec::new();
        if matches!(cfg.exemplar, Exemplar::Synthetic { .. }) {
            io::write_image(&run.path(EXEMPLAR_PNG), &img).at(&err)?;
            out.push(EXEMPLAR_PNG.to_string());
        }
        let patches =
            extract_patches(&img, cfg.patch_size, cfg.patch_count, cfg.stage_seed(SeedStream::Cut)).at(&err)?;
        io::write_patches(&run.path(PATCHES), &patches).at(&err)?;
        out.push(PATCHES.to_string());

        let n = cfg.sample_size();
        let corners = patch_corners(img.width(), img.height(), n, cfg.generate_count, cfg.stage_seed(SeedStream::RealCrops))
            .at(&err)?;
        let dir = run.fresh_dir(REAL_DIR, "cut")?;
        for (i, (r, c)) in corners.into_iter().enumerate() {
            let crop = img.crop(r, c, n, n).at(&err)?;
            let name = sample_name("real", i);
            io::write_image(&dir.join(&name), &crop).at(&err)?;
            out.push(rel(REAL_DIR, &name));
        }
        Ok(out)
    })
}

fn stage_train(run: &mut Run, net: &NetConfig, ckpt: Option<&Checkpoint>) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let extra = match &cfg.checkpoint {
        Some(p) => hash_file(p).at(&in_stage("train"))?,
        None => String::new(),
    };
    let spec = StageSpec {
        name: "train",
        keys: &[
            "seed",
            "net.",
            "train.loss",
            "train.lr",
            "train.lr_boost",
            "train.lr_boost_resolution",
            "train.beta1",
            "train.beta2",
            "train.adam_eps",
            "train.batch",
            "train.k_d",
            "train.k_g",
            "train.gp_lambda",
            "train.iterations",
            "train.fade_images",
        ],
        inputs: &[PATCHES],
        extra,
    };
    let fingerprint = run.fingerprint(&spec);
    run.stage(spec, |run| {
        let err = in_stage("train");
        if let (Some(c), 0) = (ckpt, cfg.train.iterations) {
            // nothing to train: pass the given checkpoint through
            io::write_checkpoint(&run.path(CHECKPOINT), c).at(&err)?;
            io::write_atomic(&run.path(LOSS_TRACE), &tables::trace_to_csv(&[])).at(&err)?;
            return Ok(vec![CHECKPOINT.to_string(), LOSS_TRACE.to_string()]);
        }
        let patches = io::read_patches(&run.path(PATCHES)).at(&err)?;
        let model = StyleGan { net: net.clone() };
        let partial = read_partial(run, &fingerprint);
        let (mut trainer, mut trace) = match (partial, ckpt) {
            (Some((p, rows)), _) => {
                (Trainer::resume(model, cfg.train.clone(), &p, patches).at(&err)?, rows)
            }
            (None, Some(c)) => (Trainer::resume(model, cfg.train.clone(), c, patches).at(&err)?, Vec::new()),
            (None, None) => {
                let mut rng = SquaresRng::new(cfg.train.seed).split(1);
                let g = init_generator(net, &mut rng).at(&err)?;
                let d = init_critic(net, &mut rng).at(&err)?;
                (Trainer::new(model, cfg.train.clone(), g, d, patches).at(&err)?, Vec::new())
            }
        };
        let every = cfg.checkpoint_every as u64;
        while let Some(row) = trainer.step().at(&err)? {
            trace.push(row);
            let it = trainer.iteration();
            let stop = run.opts.interrupt_training_at == Some(it);
            if (every > 0 && it % every == 0 && !trainer.is_finished()) || stop {
                write_partial(run, &fingerprint, &trainer.checkpoint(), &trace).at(&err)?;
            }
            if stop {
                return Err(err.msg(format!("interrupted after iteration {it}")));
            }
        }
        io::write_checkpoint(&run.path(CHECKPOINT), &trainer.checkpoint()).at(&err)?;
        io::write_atomic(&run.path(LOSS_TRACE), &tables::trace_to_csv(&trace)).at(&err)?;
        for p in [PARTIAL_CHECKPOINT, PARTIAL_TRACE, PARTIAL_META] {
            let _ = fs::remove_file(run.path(p));
        }
        Ok(vec![CHECKPOINT.to_string(), LOSS_TRACE.to_string()])
    })
}

fn write_partial(run: &Run, fingerprint: &str, ckpt: &Checkpoint, trace: &[TraceRow]) -> Result<(), IoError> {
    io::write_checkpoint(&run.path(PARTIAL_CHECKPOINT), ckpt)?;
    io::write_atomic(&run.path(PARTIAL_TRACE), &tables::trace_to_csv(trace))?;
    let meta = json!({ "fingerprint": fingerprint, "iteration": ckpt.iteration });
    io::write_atomic(&run.path(PARTIAL_META), &tables::json_bytes(&meta))
}

/// A partial checkpoint left by an interrupted run with the same inputs,
/// with the loss trace cut back to the checkpoint's iteration.
fn read_partial(run: &Run, fingerprint: &str) -> Option<(Checkpoint, Vec<TraceRow>)> {
    let meta: Value = serde_json::from_slice(&fs::read(run.path(PARTIAL_META)).ok()?).ok()?;
    if meta.get("fingerprint")?.as_str()? != fingerprint {
        return None;
    }
    let ckpt = io::read_checkpoint(&run.path(PARTIAL_CHECKPOINT)).ok()?;
    let mut rows = tables::trace_from_csv(&fs::read(run.path(PARTIAL_TRACE)).ok()?).ok()?;
    rows.retain(|r| r.iter <= ckpt.iteration);
    (rows.len() as u64 == ckpt.iteration).then_some((ckpt, rows))
}

fn stage_generate(run: &mut Run, net: &NetConfig) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let spec = StageSpec { name: "generate", keys: &["seed", "generate."], inputs: &[CHECKPOINT], extra: String::new() };
    run.stage(spec, |run| {
        let err = in_stage("generate");
        let ckpt = io::read_checkpoint(&run.path(CHECKPOINT)).at(&err)?;
        let (g, _) = ckpt.params();
        let mut rng = SquaresRng::new(cfg.stage_seed(SeedStream::Generate));
        let images = sample_images(net, &g, cfg.generate_count, cfg.generate_batch, &mut rng).at(&err)?;
        let dir = run.fresh_dir(GENERATED_DIR, "generate")?;
        let mut out = Vec::new();
        for (i, img) in images.iter().enumerate() {
            let name = sample_name("sample", i);
            io::write_image(&dir.join(&name), img).at(&err)?;
            out.push(rel(GENERATED_DIR, &name));
        }
        Ok(out)
    })
}

fn stage_quilt(run: &mut Run) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let spec = StageSpec { name: "quilt", keys: &["seed", "quilt."], inputs: &[GENERATED_DIR], extra: String::new() };
    run.stage(spec, |run| {
        let err = in_stage("quilt");
        let samples = run
            .images_under(GENERATED_DIR)
            .iter()
            .map(|p| io::read_image(&run.path(p)))
            .collect::<Result<Vec<_>, _>>()
            .at(&err)?;
        if samples.is_empty() {
            return Err(err.msg("no generated samples"));
        }
        let dir = run.fresh_dir(MOSAIC_DIR, "quilt")?;
        let mut rng = SquaresRng::new(cfg.stage_seed(SeedStream::Quilt));
        let mut out = Vec::new();
        for k in 0..cfg.quilt_count {
            let mosaic = assemble_grid_with(cfg.quilt_rows, cfg.quilt_cols, cfg.quilt_overlap, |_, _| {
                Ok(samples[rng.below(samples.len() as u64) as usize].clone())
            })
            .at(&err)?;
            let name = format!("mosaic_{k:02}.png");
            io::write_image(&dir.join(&name), &mosaic).at(&err)?;
            out.push(rel(MOSAIC_DIR, &name));
        }
        Ok(out)
    })
}

fn stage_postprocess(run: &mut Run) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let spec = StageSpec {
        name: "postprocess",
        keys: &[],
        inputs: &[GENERATED_DIR, REAL_DIR, MOSAIC_DIR],
        extra: cfg.recipe.recipe.to_string(),
    };
    run.stage(spec, |run| {
        let err = in_stage("postprocess");
        let mut inputs = run.images_under(REAL_DIR);
        inputs.extend(run.images_under(GENERATED_DIR));
        inputs.extend(run.images_under(MOSAIC_DIR));
        let dir = run.fresh_dir(BINARY_DIR, "postprocess")?;
        let recipe = &cfg.recipe.recipe;
        let base = &run.dir;
        let names = parallel::try_map(&inputs, run.opts.threads, |src| -> Result<String, String> {
            let img = io::read_image(&base.join(src)).map_err(|e| e.to_string())?;
            let mask = binarize(recipe, &img).map_err(|e| format!("{src}: {e}"))?;
            let name = format!("{}.png", stem(src));
            io::write_mask(&dir.join(&name), &mask).map_err(|e| e.to_string())?;
            Ok(rel(BINARY_DIR, &name))
        })
        .at(&err)?;
        Ok(names)
    })
}

fn masks_with_prefix(run: &Run, prefix: &str) -> Result<(Vec<String>, Vec<BinaryMask>), IoError> {
    let paths: Vec<String> =
        run.images_under(BINARY_DIR).into_iter().filter(|p| stem(p).starts_with(prefix)).collect();
    let masks = parallel::try_map(&paths, run.opts.threads, |p| io::read_mask(&run.path(p)))?;
    Ok((paths.iter().map(|p| stem(p)).collect(), masks))
}

fn minkowski_table(ids: &[String], masks: &[BinaryMask], phase: Phase, threads: usize) -> MetricTable {
    let triples = parallel::map(masks, threads, |m| minkowski(m, phase));
    MetricTable::minkowski(ids, &triples)
}

fn stage_characterize(run: &mut Run) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let spec = StageSpec { name: "characterize", keys: &["metrology.", "homog."], inputs: &[BINARY_DIR], extra: String::new() };
    run.stage(spec, |run| {
        let err = in_stage("characterize");
        let threads = run.opts.threads;
        let (real_ids, real) = masks_with_prefix(run, "real").at(&err)?;
        let (gen_ids, generated) = masks_with_prefix(run, "sample").at(&err)?;
        let real_t = minkowski_table(&real_ids, &real, cfg.phase, threads);
        let gen_t = minkowski_table(&gen_ids, &generated, cfg.phase, threads);
        real_t.write(&run.path(MINKOWSKI_REAL)).at(&err)?;
        gen_t.write(&run.path(MINKOWSKI_GENERATED)).at(&err)?;
        let cmp = compare_tables(&real_t, &gen_t, &MINKOWSKI_NAMES, cfg.bins).at(&err)?;
        io::write_atomic(&run.path(HISTOGRAM), &tables::histograms_to_csv(&cmp)).at(&err)?;
        io::write_atomic(&run.path(MINKOWSKI_JSON), &tables::json_bytes(&tables::comparison_json(&cmp))).at(&err)?;
        let mut out: Vec<String> =
            [MINKOWSKI_REAL, MINKOWSKI_GENERATED, HISTOGRAM, MINKOWSKI_JSON].map(String::from).to_vec();

        for p in [ELASTIC_REAL, ELASTIC_GENERATED, ELASTIC_JSON] {
            let _ = fs::remove_file(run.path(p));
        }
        if let Some(h) = &cfg.homog {
            let take = |n: usize| if h.count == 0 { n } else { h.count.min(n) };
            let solve = |masks: &[BinaryMask], ids: &[String]| -> Result<MetricTable, PipelineError> {
                let n = take(masks.len());
                let res: Vec<EffectiveElasticity> =
                    parallel::try_map(&masks[..n], threads, |m| homogenize(m, &h.material, h.tol)).at(&err)?;
                Ok(MetricTable::elastic(&ids[..n], &res))
            };
            let er = solve(&real, &real_ids)?;
            let eg = solve(&generated, &gen_ids)?;
            er.write(&run.path(ELASTIC_REAL)).at(&err)?;
            eg.write(&run.path(ELASTIC_GENERATED)).at(&err)?;
            let cmp = compare_tables(&er, &eg, &ELASTIC_METRICS, cfg.bins).at(&err)?;
            io::write_atomic(&run.path(ELASTIC_JSON), &tables::json_bytes(&tables::comparison_json(&cmp)))
                .at(&err)?;
            out.extend([ELASTIC_REAL, ELASTIC_GENERATED, ELASTIC_JSON].map(String::from));
        }
        Ok(out)
    })
}

const MINKOWSKI_NAMES: [&str; 3] = microforge_core::metrology::MinkowskiTriple::NAMES;

/// Mean ± deviation comparison of the named columns of two tables.
pub fn compare_tables(
    real: &MetricTable,
    generated: &MetricTable,
    names: &[&str],
    bins: usize,
) -> Result<BTreeMap<String, Comparison>, String> {
    let stats = |t: &MetricTable| -> Result<SampleStats, String> {
        let cols = names
            .iter()
            .map(|n| t.column(n).ok_or_else(|| format!("table has no column {n}")))
            .collect::<Result<Vec<_>, _>>()?;
        let rows: Vec<Vec<f64>> = (0..t.rows.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        SampleStats::from_rows(names, &rows).map_err(|e| e.to_string())
    };
    compare_report(&stats(real)?, &stats(generated)?, bins).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Report

/// Rebuild `report.json` and `manifest.json` of a finished run directory
/// from its persisted artifacts.
pub fn rebuild_report(dir: &Path) -> Result<(Value, BTreeMap<String, Comparison>, Option<BTreeMap<String, Comparison>>), PipelineError> {
    let err = in_stage("report");
    let echo = fs::read_to_string(dir.join(CONFIG_ECHO)).map_err(|e| err.msg(format!("{CONFIG_ECHO}: {e}")))?;
    let map = ConfigMap::parse(&echo).at(&err)?;
    let bins: usize = map.get("metrology.bins").parse().map_err(|_| err.msg("metrology.bins in config echo"))?;
    let read = |name: &str| MetricTable::read(&dir.join(name)).at(&err);
    let minkowski = compare_tables(&read(MINKOWSKI_REAL)?, &read(MINKOWSKI_GENERATED)?, &MINKOWSKI_NAMES, bins).at(&err)?;
    let elastic = if dir.join(ELASTIC_REAL).is_file() {
        Some(compare_tables(&read(ELASTIC_REAL)?, &read(ELASTIC_GENERATED)?, &ELASTIC_METRICS, bins).at(&err)?)
    } else {
        None
    };
    let artifacts = collect_artifacts(dir).at(&err)?;
    let config: BTreeMap<String, String> = map.echo();
    let json = json!({
        "tool": TOOL,
        "config": config,
        "loss_trace": LOSS_TRACE,
        "timings": TIMINGS,
        "minkowski": tables::comparison_json(&minkowski),
        "elastic": elastic.as_ref().map(tables::comparison_json),
        "artifacts": artifacts.keys().collect::<Vec<_>>(),
    });
    io::write_atomic(&dir.join(MANIFEST), &tables::json_bytes(&json!(artifacts))).at(&err)?;
    io::write_atomic(&dir.join(REPORT), &tables::json_bytes(&json)).at(&err)?;
    Ok((json, minkowski, elastic))
}

/// Every file a report refers to: all run outputs except the report files,
/// the lock, stage records and partial training state.
fn collect_artifacts(dir: &Path) -> Result<BTreeMap<String, String>, IoError> {
    let skip = [REPORT, TIMINGS, MANIFEST, LOCK, PARTIAL_CHECKPOINT, PARTIAL_TRACE, PARTIAL_META];
    let mut out = BTreeMap::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(sub) = stack.pop() {
        let full = dir.join(&sub);
        let entries = fs::read_dir(&full).map_err(|source| IoError::Fs { path: full.clone(), source })?;
        for e in entries {
            let e = e.map_err(|source| IoError::Fs { path: full.clone(), source })?;
            let name = e.file_name().to_string_lossy().into_owned();
            let relp = sub.join(&name);
            let key = relp.to_string_lossy().replace('\\', "/");
            if e.path().is_dir() {
                // nested runs of an ablation are reported separately
                if sub.as_os_str().is_empty() && (name == STAGE_DIR || name == ABLATION_DIR) {
                    continue;
                }
                stack.push(relp);
            } else if !(sub.as_os_str().is_empty() && (skip.contains(&name.as_str()) || name.ends_with(".tmp")))
                && !(sub.as_os_str().is_empty() && name.starts_with("ablation."))
            {
                out.insert(key, hash_file(&e.path())?);
            }
        }
    }
    Ok(out)
}

/// Check every artifact listed in `manifest.json` against its hash.
pub fn verify_manifest(dir: &Path) -> Result<usize, String> {
    let bytes = fs::read(dir.join(MANIFEST)).map_err(|e| format!("{MANIFEST}: {e}"))?;
    let v: BTreeMap<String, String> = serde_json::from_slice(&bytes).map_err(|e| format!("{MANIFEST}: {e}"))?;
    for (path, want) in &v {
        let got = hash_file(&dir.join(path)).map_err(|e| e.to_string())?;
        if &got != want {
            return Err(format!("{path}: hash mismatch"));
        }
    }
    Ok(v.len())
}

// ---------------------------------------------------------------------------
// Entry points

pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunReport, PipelineError> {
    let (net, ckpt) = resolve_net(cfg)?;
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).map_err(|e| PipelineError::Validation(format!("{}: {e}", dir.display())))?;
    let _lock = RunLock::acquire(&dir)?;
    let mut run = Run { cfg, opts, dir: dir.clone(), artifacts: BTreeMap::new(), timings: Vec::new() };
    let echo: String = cfg.map.echo().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    io::write_atomic(&dir.join(CONFIG_ECHO), echo.as_bytes()).at(&in_stage("report"))?;

    stage_cut(&mut run)?;
    stage_train(&mut run, &net, ckpt.as_ref())?;
    stage_generate(&mut run, &net)?;
    stage_quilt(&mut run)?;
    stage_postprocess(&mut run)?;
    stage_characterize(&mut run)?;

    let start = Instant::now();
    let (json, minkowski, elastic) = rebuild_report(&dir)?;
    run.timings.push(StageTiming { stage: "report", seconds: start.elapsed().as_secs_f64(), skipped: false });
    let timings: Vec<Value> = run
        .timings
        .iter()
        .map(|t| json!({ "stage": t.stage, "seconds": t.seconds, "skipped": t.skipped }))
        .collect();
    io::write_atomic(&dir.join(TIMINGS), &tables::json_bytes(&json!(timings))).at(&in_stage("report"))?;
    Ok(RunReport { dir, json, timings: run.timings, minkowski, elastic })
}

// ---------------------------------------------------------------------------
// Ablation

pub const ABLATION_DIR: &str = "ablation";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_CSV: &str = "ablation.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    Progressive,
    SingleResolution,
    ResolutionIncrease,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [Self::Progressive, Self::SingleResolution, Self::ResolutionIncrease];

    pub fn name(self) -> &'static str {
        match self {
            Self::Progressive => "progressive",
            Self::SingleResolution => "single_resolution",
            Self::ResolutionIncrease => "resolution_increase",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Row label of the comparison table.
    pub fn label(self) -> &'static str {
        match self {
            Self::Progressive => "With progressive growing",
            Self::SingleResolution => "Without progressive growing",
            Self::ResolutionIncrease => "With resolution increase",
        }
    }

    fn overrides(self) -> [(&'static str, &'static str); 2] {
        match self {
            Self::Progressive => [("net.progressive", "true"), ("net.variant", "standard")],
            Self::SingleResolution => [("net.progressive", "false"), ("net.variant", "standard")],
            Self::ResolutionIncrease => [("net.progressive", "true"), ("net.variant", "resolution_increase")],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub label: &'static str,
    pub run_dir: PathBuf,
    pub minkowski: BTreeMap<String, Comparison>,
}

/// Train and evaluate one model per mode with the same seed and data, then
/// tabulate mean ± deviation of every metric side by side.
pub fn ablation_compare(
    cfg: &PipelineConfig,
    modes: &[AblationMode],
    opts: &RunOptions,
) -> Result<Vec<AblationRow>, PipelineError> {
    if modes.len() < 2 {
        return Err(PipelineError::Validation("an ablation needs at least two modes".into()));
    }
    let mut configs = Vec::new();
    for (i, mode) in modes.iter().enumerate() {
        let mut map = cfg.map.clone();
        for (k, v) in mode.overrides() {
            map.set(k, v)?;
        }
        let sub = cfg.out.join(ABLATION_DIR).join(format!("{i}_{}", mode.name()));
        map.set("out", &sub.to_string_lossy())?;
        configs.push((*mode, PipelineConfig::from_map(map)?));
    }
    for (_, c) in &configs {
        resolve_net(c)?;
    }
    let mut rows = Vec::new();
    for (mode, c) in configs {
        let rep = run_pipeline(&c, opts)?;
        rows.push(AblationRow { mode, label: mode.label(), run_dir: c.out.clone(), minkowski: rep.minkowski });
    }
    let err = in_stage("report");
    let base = &cfg.out;
    let json_rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "mode": r.mode.name(),
                "label": r.label,
                "run": r.run_dir.strip_prefix(base).unwrap_or(&r.run_dir).to_string_lossy().replace('\\', "/"),
                "minkowski": tables::comparison_json(&r.minkowski),
            })
        })
        .collect();
    io::write_atomic(&base.join(ABLATION_JSON), &tables::json_bytes(&json!({ "tool": TOOL, "rows": json_rows })))
        .at(&err)?;
    io::write_atomic(&base.join(ABLATION_CSV), &ablation_csv(&rows)).at(&err)?;
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "label", "metric", "real_mean", "real_std", "generated_mean", "generated_std"])
        .expect("in-memory write");
    for r in rows {
        for (metric, c) in &r.minkowski {
            w.write_record([
                r.mode.name().to_string(),
                r.label.to_string(),
                metric.clone(),
                c.real.mean.to_string(),
                c.real.std.to_string(),
                c.generated.mean.to_string(),
                c.generated.std.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}
