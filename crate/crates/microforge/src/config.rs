//! Pipeline configuration: a UTF-8 `key = value` file with dotted keys.
//!
//! Every key has a default, appears in [`KEYS`], and can be overridden on
//! the command line as `--key=value` or `--key value`. Lines starting with
//! `#` are comments. Relative paths are taken relative to the working
//! directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use microforge_core::homog::{Material2D, Plane};
use microforge_core::image::Phase;
use microforge_core::postproc::{Recipe, PRESETS};
use microforge_core::stylenet::{NetConfig, Variant};
use microforge_core::train::{LossKind, TrainConfig};
use microforge_core::SquaresRng;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Recognized keys with their defaults, in canonical order.
pub const KEYS: &[(&str, &str)] = &[
    ("exemplar", "synthetic"),
    ("synthetic.size", "256"),
    ("synthetic.fraction", "0.5"),
    ("seed", "0"),
    ("out", "run"),
    ("cut.patch_size", "128"),
    ("cut.patch_count", "1024"),
    ("net.latent_dim", "64"),
    ("net.mapping_depth", "4"),
    ("net.channels", "8:128,16:128,32:64,64:32,128:16,256:16"),
    ("net.variant", "standard"),
    ("net.progressive", "true"),
    ("train.loss", "wgan_gp"),
    ("train.lr", "0.001"),
    ("train.lr_boost", "0.0015"),
    ("train.lr_boost_resolution", "128"),
    ("train.beta1", "0"),
    ("train.beta2", "0.99"),
    ("train.adam_eps", "1e-8"),
    ("train.batch", "16"),
    ("train.k_d", "1"),
    ("train.k_g", "1"),
    ("train.gp_lambda", "10"),
    ("train.iterations", "2000"),
    ("train.fade_images", "16000"),
    ("train.checkpoint", ""),
    ("train.checkpoint_every", "500"),
    ("generate.count", "64"),
    ("generate.batch", "16"),
    ("quilt.rows", "4"),
    ("quilt.cols", "4"),
    ("quilt.overlap", "auto"),
    ("quilt.count", "2"),
    ("postproc.recipe", "digitalrock"),
    ("metrology.phase", "solid"),
    ("metrology.bins", "20"),
    ("homog.enabled", "false"),
    ("homog.e_solid", "1"),
    ("homog.nu_solid", "0.3"),
    ("homog.contrast", "1e-6"),
    ("homog.tol", "1e-8"),
    ("homog.plane", "stress"),
    ("homog.count", "0"),
];

/// Keys that locate the run rather than define it; left out of reports.
pub const LOCATION_KEYS: &[&str] = &["out"];

/// Raw key/value pairs, always holding every key of [`KEYS`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigMap(BTreeMap<String, String>);

impl Default for ConfigMap {
    fn default() -> Self {
        Self(KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }
}

impl ConfigMap {
    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = Self::default();
        let mut seen = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("line {}: expected key = value", n + 1));
            };
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), n + 1) {
                return err(format!("line {}: key {k} already set on line {prev}", n + 1));
            }
            map.set(k, v.trim())?;
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.0.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => err(format!("unknown config key {key:?}")),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or("")
    }

    /// Apply `--key=value` / `--key value` arguments.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), ConfigError> {
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let Some(body) = a.strip_prefix("--") else {
                return err(format!("unexpected argument {a:?}; overrides look like --key=value"));
            };
            match body.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let Some(v) = it.next() else {
                        return err(format!("--{body} needs a value"));
                    };
                    self.set(body, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Every key except [`LOCATION_KEYS`].
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.0.iter().filter(|(k, _)| !LOCATION_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}

impl fmt::Display for ConfigMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, _) in KEYS {
            writeln!(f, "{k} = {}", self.get(k))?;
        }
        Ok(())
    }
}

fn num<T: std::str::FromStr>(map: &ConfigMap, key: &str) -> Result<T, ConfigError> {
    let v = map.get(key);
    v.parse().or_else(|_| err(format!("{key}: cannot parse {v:?}")))
}

fn boolean(map: &ConfigMap, key: &str) -> Result<bool, ConfigError> {
    match map.get(key) {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => err(format!("{key}: expected true or false, got {v:?}")),
    }
}

fn opt_path(map: &ConfigMap, key: &str) -> Option<PathBuf> {
    let v = map.get(key);
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// `8:16,16:8` → {8: 16, 16: 8}
pub fn parse_channels(s: &str) -> Result<BTreeMap<usize, usize>, ConfigError> {
    let mut out = BTreeMap::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let parsed = item.split_once(':').and_then(|(r, c)| Some((r.trim().parse().ok()?, c.trim().parse().ok()?)));
        let Some((r, c)) = parsed else {
            return err(format!("net.channels: bad entry {item:?}; expected RES:CHANNELS"));
        };
        out.insert(r, c);
    }
    Ok(out)
}

pub fn parse_variant(s: &str) -> Result<Variant, ConfigError> {
    match s {
        "standard" => Ok(Variant::Standard),
        "resolution_increase" => Ok(Variant::ResolutionIncrease),
        _ => err(format!("net.variant: expected standard or resolution_increase, got {s:?}")),
    }
}

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Standard => "standard",
        Variant::ResolutionIncrease => "resolution_increase",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Exemplar {
    /// The bundled disk-field generator.
    Synthetic { size: usize, fraction: f64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogSettings {
    pub material: Material2D,
    pub tol: f64,
    /// Masks per set to evaluate; 0 means all.
    pub count: usize,
}

/// A recipe and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RecipeSpec {
    pub source: String,
    pub recipe: Recipe,
}

impl RecipeSpec {
    /// A preset name, or a path to a recipe file.
    pub fn load(source: &str) -> Result<Self, ConfigError> {
        let recipe = if PRESETS.contains(&source) {
            Recipe::preset(source).map_err(|e| ConfigError(e.to_string()))?
        } else {
            let text = std::fs::read_to_string(source)
                .map_err(|e| ConfigError(format!("recipe {source:?} is neither a preset ({}) nor a readable file: {e}", PRESETS.join(", "))))?;
            Recipe::parse(&text).map_err(|e| ConfigError(format!("recipe {source}: {e}")))?
        };
        Ok(Self { source: source.to_string(), recipe })
    }
}

/// Fully typed and validated pipeline settings.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub map: ConfigMap,
    pub exemplar: Exemplar,
    pub seed: u64,
    pub out: PathBuf,
    pub patch_size: usize,
    pub patch_count: usize,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub generate_count: usize,
    pub generate_batch: usize,
    pub quilt_rows: usize,
    pub quilt_cols: usize,
    pub quilt_overlap: usize,
    pub quilt_count: usize,
    pub recipe: RecipeSpec,
    pub phase: Phase,
    pub bins: usize,
    pub homog: Option<HomogSettings>,
}

/// Independent seeds for the stochastic stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Exemplar = 1,
    Cut = 2,
    Train = 3,
    Generate = 4,
    Quilt = 5,
    RealCrops = 6,
}

pub fn derive_seed(seed: u64, stream: SeedStream) -> u64 {
    SquaresRng::new(seed).split(stream as u64).next_u64()
}

pub fn net_from_map(map: &ConfigMap, target_resolution: usize) -> Result<NetConfig, ConfigError> {
    let net = NetConfig {
        target_resolution,
        latent_dim: num(map, "net.latent_dim")?,
        mapping_depth: num(map, "net.mapping_depth")?,
        channels: parse_channels(map.get("net.channels"))?,
        variant: parse_variant(map.get("net.variant"))?,
        progressive: boolean(map, "net.progressive")?,
    };
    net.validate().map_err(|e| ConfigError(format!("net: {e}")))?;
    Ok(net)
}

pub fn train_from_map(map: &ConfigMap, seed: u64) -> Result<TrainConfig, ConfigError> {
    let loss = map.get("train.loss");
    let cfg = TrainConfig {
        loss: LossKind::parse(loss).ok_or_else(|| ConfigError(format!("train.loss: unknown loss {loss:?}")))?,
        lr: num(map, "train.lr")?,
        lr_boost: num(map, "train.lr_boost")?,
        lr_boost_resolution: num(map, "train.lr_boost_resolution")?,
        beta1: num(map, "train.beta1")?,
        beta2: num(map, "train.beta2")?,
        adam_eps: num(map, "train.adam_eps")?,
        batch: num(map, "train.batch")?,
        k_d: num(map, "train.k_d")?,
        k_g: num(map, "train.k_g")?,
        gp_lambda: num(map, "train.gp_lambda")?,
        iterations: num(map, "train.iterations")?,
        fade_images: num(map, "train.fade_images")?,
        seed,
    };
    cfg.validate().map_err(|e| ConfigError(format!("train: {e}")))?;
    Ok(cfg)
}

pub fn material_from_map(map: &ConfigMap) -> Result<Material2D, ConfigError> {
    let plane = match map.get("homog.plane") {
        "stress" => Plane::Stress,
        "strain" => Plane::Strain,
        v => return err(format!("homog.plane: expected stress or strain, got {v:?}")),
    };
    let m = Material2D {
        e_solid: num(map, "homog.e_solid")?,
        nu_solid: num(map, "homog.nu_solid")?,
        contrast: num(map, "homog.contrast")?,
        plane,
    };
    m.validate().map_err(|e| ConfigError(format!("homog: {e}")))?;
    Ok(m)
}

impl PipelineConfig {
    /// Type-check every key and verify that referenced files exist.
    pub fn from_map(map: ConfigMap) -> Result<Self, ConfigError> {
        let exemplar = match map.get("exemplar") {
            "synthetic" => Exemplar::Synthetic { size: num(&map, "synthetic.size")?, fraction: num(&map, "synthetic.fraction")? },
            "" => return err("exemplar: no path given"),
            p => {
                let p = PathBuf::from(p);
                if !p.is_file() {
                    return err(format!("exemplar {} does not exist", p.display()));
                }
                Exemplar::File(p)
            }
        };
        if let Exemplar::Synthetic { size, fraction } = exemplar {
            if size == 0 || !(0.0..=1.0).contains(&fraction) {
                return err("synthetic.size must be positive and synthetic.fraction in [0, 1]");
            }
        }
        let seed: u64 = num(&map, "seed")?;
        let patch_size: usize = num(&map, "cut.patch_size")?;
        let patch_count: usize = num(&map, "cut.patch_count")?;
        if patch_count == 0 {
            return err("cut.patch_count must be positive");
        }
        let net = net_from_map(&map, patch_size)?;
        let train = train_from_map(&map, derive_seed(seed, SeedStream::Train))?;
        let checkpoint = opt_path(&map, "train.checkpoint");
        if let Some(c) = &checkpoint {
            if !c.is_file() {
                return err(format!("train.checkpoint {} does not exist", c.display()));
            }
        }
        let generate_count: usize = num(&map, "generate.count")?;
        let generate_batch: usize = num(&map, "generate.batch")?;
        if generate_count == 0 || generate_batch == 0 {
            return err("generate.count and generate.batch must be positive");
        }
        let out_size = patch_size * if net.variant == Variant::ResolutionIncrease { 2 } else { 1 };
        let quilt_overlap = match map.get("quilt.overlap") {
            "auto" => out_size / 8,
            _ => num(&map, "quilt.overlap")?,
        };
        let (quilt_rows, quilt_cols): (usize, usize) = (num(&map, "quilt.rows")?, num(&map, "quilt.cols")?);
        if quilt_rows == 0 || quilt_cols == 0 {
            return err("quilt.rows and quilt.cols must be positive");
        }
        if (quilt_rows > 1 || quilt_cols > 1) && !(1..out_size).contains(&quilt_overlap) {
            return err(format!("quilt.overlap must lie in 1..{out_size}"));
        }
        let recipe = RecipeSpec::load(map.get("postproc.recipe"))?;
        let phase_name = map.get("metrology.phase");
        let phase = Phase::parse(phase_name).ok_or_else(|| ConfigError(format!("metrology.phase: unknown phase {phase_name:?}")))?;
        let bins: usize = num(&map, "metrology.bins")?;
        if bins == 0 {
            return err("metrology.bins must be positive");
        }
        let homog = if boolean(&map, "homog.enabled")? {
            let tol: f64 = num(&map, "homog.tol")?;
            if !(tol > 0.0 && tol <= 1e-3) {
                return err("homog.tol must lie in (0, 1e-3]");
            }
            Some(HomogSettings { material: material_from_map(&map)?, tol, count: num(&map, "homog.count")? })
        } else {
            None
        };
        Ok(Self {
            exemplar,
            seed,
            out: PathBuf::from(map.get("out")),
            patch_size,
            patch_count,
            net,
            train,
            checkpoint,
            checkpoint_every: num(&map, "train.checkpoint_every")?,
            generate_count,
            generate_batch,
            quilt_rows,
            quilt_cols,
            quilt_overlap,
            quilt_count: num(&map, "quilt.count")?,
            recipe,
            phase,
            bins,
            homog,
            map,
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut map = ConfigMap::parse(&text)?;
        map.apply_overrides(overrides)?;
        Self::from_map(map)
    }

    /// Side of every generated sample.
    pub fn sample_size(&self) -> usize {
        self.patch_size * if self.net.variant == Variant::ResolutionIncrease { 2 } else { 1 }
    }

    pub fn stage_seed(&self, stream: SeedStream) -> u64 {
        derive_seed(self.seed, stream)
    }
}
