//! Style-based generator and critic with progressive growing.
//!
//! Generator: mapping network `z → w`, a learned 8×8 constant, then one
//! upsampling block per resolution doubling. Every stage is
//! `conv → + B·noise → leaky ReLU → AdaIN(A(w))`; the upsampling itself is a
//! stride-2 deconvolution. A 1×1 toRGB turns the last feature map into a
//! single gray channel.
//!
//! Critic: fromRGB (1×1 conv, two 3×3 convs) at the input resolution, one
//! downsampling block (avg-pool, pixel norm, conv, pixel norm, conv) per
//! halving down to 4×4, a batch-std feature map, a 3×3 conv, a 4×4 valid
//! conv collapsing the map and a dense score.
//!
//! Parameters are addressed by name (`g.*` and `d.*`) in a [`ParamStore`].
//! All network functions are generic over the tape scalar so the same code
//! runs in `f32` for training and `f64` for gradient checks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SquaresRng;
use crate::tensor::{Bound, ParamStore, Real, Tape, Tensor, TensorError, Var};

pub const LRELU_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-8;
const BASE: usize = 8;
const RESOLUTIONS: [usize; 6] = [8, 16, 32, 64, 128, 256];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StyleError {
    #[error("resolution {0} is not in the schedule")]
    ResolutionNotInSchedule(usize),
    #[error("critic expects {expected}x{expected} input, got {got}x{got}")]
    ResolutionMismatch { expected: usize, got: usize },
    #[error("the resolution-increase variant is disabled")]
    VariantDisabled,
    #[error("invalid network config: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Standard,
    /// The generator emits twice the critic's resolution; the critic sees
    /// every second pixel.
    ResolutionIncrease,
}

/// Shared description of generator and critic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    /// Final resolution seen by the critic.
    pub target_resolution: usize,
    pub latent_dim: usize,
    pub mapping_depth: usize,
    /// Feature channels per resolution.
    pub channels: BTreeMap<usize, usize>,
    pub variant: Variant,
    pub progressive: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            target_resolution: 128,
            latent_dim: 64,
            mapping_depth: 4,
            channels: [(8, 128), (16, 128), (32, 64), (64, 32), (128, 16), (256, 16)].into_iter().collect(),
            variant: Variant::Standard,
            progressive: true,
        }
    }
}

/// Resolutions trained in order: every power of two from `start` to
/// `target`, or only `target` without progressive growing.
pub fn schedule_resolutions(start: usize, target: usize, progressive: bool) -> Result<Vec<usize>, StyleError> {
    if !start.is_power_of_two() || start < BASE || !target.is_power_of_two() || target < start {
        return Err(StyleError::BadConfig("resolutions must be powers of two with 8 <= start <= target"));
    }
    if !progressive {
        return Ok(vec![target]);
    }
    let mut out = Vec::new();
    let mut r = start;
    while r <= target {
        out.push(r);
        r *= 2;
    }
    Ok(out)
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), StyleError> {
        if !RESOLUTIONS.contains(&self.target_resolution) {
            return Err(StyleError::BadConfig("target resolution must be one of 8, 16, 32, 64, 128, 256"));
        }
        if self.latent_dim == 0 || self.mapping_depth == 0 {
            return Err(StyleError::BadConfig("latent_dim and mapping_depth must be positive"));
        }
        for r in self.generator_resolutions() {
            if self.channels.get(&r).map_or(true, |&c| c == 0) {
                return Err(StyleError::BadConfig("channel table must cover every resolution"));
            }
        }
        Ok(())
    }

    /// Critic resolutions per training phase.
    pub fn phases(&self) -> Vec<usize> {
        schedule_resolutions(BASE, self.target_resolution, self.progressive).unwrap_or_default()
    }

    fn scale_factor(&self) -> usize {
        match self.variant {
            Variant::Standard => 1,
            Variant::ResolutionIncrease => 2,
        }
    }

    /// Resolutions of the generator's blocks, from 8 up to its output size.
    pub fn generator_resolutions(&self) -> Vec<usize> {
        let top = self.target_resolution * self.scale_factor();
        (0..).map(|i| BASE << i).take_while(|&r| r <= top).collect()
    }

    /// Resolutions the critic has a fromRGB/downsampling pair for.
    pub fn critic_resolutions(&self) -> Vec<usize> {
        (0..).map(|i| BASE << i).take_while(|&r| r <= self.target_resolution).collect()
    }

    pub fn channels_at(&self, r: usize) -> usize {
        self.channels.get(&r).copied().unwrap_or(0)
    }

    /// Generator output size when the critic runs at `resolution`.
    pub fn output_resolution(&self, resolution: usize) -> usize {
        resolution * self.scale_factor()
    }

    fn check_phase(&self, resolution: usize) -> Result<(), StyleError> {
        if resolution > self.target_resolution || !RESOLUTIONS.contains(&resolution) {
            return Err(StyleError::ResolutionNotInSchedule(resolution));
        }
        if !self.progressive && resolution != self.target_resolution {
            return Err(StyleError::ResolutionNotInSchedule(resolution));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Building blocks

/// `y = leaky_relu(x W + b)` per mapping layer; `depth` layers.
pub fn map_latent<T: Real>(tape: &mut Tape<T>, p: &Bound, depth: usize, z: Var) -> Result<Var, StyleError> {
    let mut h = z;
    for i in 0..depth {
        let w = p.get(&format!("g.map.{i}.w"))?;
        let b = p.get(&format!("g.map.{i}.b"))?;
        let y = tape.dense(h, w, b)?;
        h = tape.leaky_relu(y, LRELU_SLOPE);
    }
    Ok(h)
}

fn as_maps<T: Real>(tape: &mut Tape<T>, v: Var, like: &[usize]) -> Result<Var, TensorError> {
    let (b, c) = (like[0], like[1]);
    let r = tape.reshape(v, &[b, c, 1, 1])?;
    tape.broadcast_to(r, like)
}

/// Adaptive instance normalization: per sample and channel,
/// `γ·(x−μ)/√(σ²+ε) + β`. `gamma` and `beta` are `[b, c]`.
pub fn adain<T: Real>(tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<Var, StyleError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || tape.shape(gamma) != [s[0], s[1]] || tape.shape(beta) != [s[0], s[1]] {
        return Err(TensorError::ShapeMismatch { op: "adain", lhs: s, rhs: tape.shape(gamma).to_vec() }.into());
    }
    let stat = [s[0], s[1], 1, 1];
    let mu = tape.mean_to(x, &stat)?;
    let mu = tape.broadcast_to(mu, &s)?;
    let var = tape.variance_to(x, &stat)?;
    let var = tape.add_scalar(var, NORM_EPS);
    let inv = tape.pow(var, -0.5);
    let inv = tape.broadcast_to(inv, &s)?;
    let d = tape.sub(x, mu)?;
    let n = tape.mul(d, inv)?;
    let g = as_maps(tape, gamma, &s)?;
    let b = as_maps(tape, beta, &s)?;
    let y = tape.mul(n, g)?;
    Ok(tape.add(y, b)?)
}

/// `x + scale_c · noise` with one noise map `[b,1,h,w]` shared by all channels.
pub fn add_noise<T: Real>(tape: &mut Tape<T>, x: Var, scale: Var, noise: Var) -> Result<Var, StyleError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || tape.shape(scale) != [s[1]] || tape.shape(noise) != [s[0], 1, s[2], s[3]] {
        return Err(TensorError::ShapeMismatch { op: "add_noise", lhs: s, rhs: tape.shape(noise).to_vec() }.into());
    }
    let sc = tape.reshape(scale, &[1, s[1], 1, 1])?;
    let sc = tape.broadcast_to(sc, &s)?;
    let nz = tape.broadcast_to(noise, &s)?;
    let y = tape.mul(sc, nz)?;
    Ok(tape.add(x, y)?)
}

/// Per pixel, divide the feature vector by its root mean square.
pub fn pixel_norm<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var, StyleError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(TensorError::InvalidArgument { op: "pixel_norm", what: "expected a rank-4 tensor" }.into());
    }
    let sq = tape.mul(x, x)?;
    let m = tape.mean_to(sq, &[s[0], 1, s[2], s[3]])?;
    let m = tape.add_scalar(m, NORM_EPS);
    let inv = tape.pow(m, -0.5);
    let inv = tape.broadcast_to(inv, &s)?;
    Ok(tape.mul(x, inv)?)
}

/// Append the batch standard deviation, averaged over channels and
/// positions, as one extra constant feature map.
///
/// The deviation is evaluated as `v/√(v+ε)` with `v` the population
/// variance, which is exactly zero for identical samples yet stays
/// differentiable there.
pub fn batch_std<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var, StyleError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(TensorError::InvalidArgument { op: "batch_std", what: "expected a rank-4 tensor" }.into());
    }
    let var = tape.variance_to(x, &[1, s[1], s[2], s[3]])?;
    let ve = tape.add_scalar(var, NORM_EPS);
    let inv = tape.pow(ve, -0.5);
    let sd = tape.mul(var, inv)?;
    let m = tape.mean_all(sd)?;
    let m = tape.reshape(m, &[1, 1, 1, 1])?;
    let map = tape.broadcast_to(m, &[s[0], 1, s[2], s[3]])?;
    Ok(tape.concat_channels(x, map)?)
}

fn bias_add<T: Real>(tape: &mut Tape<T>, x: Var, b: Var) -> Result<Var, TensorError> {
    let s = tape.shape(x).to_vec();
    let r = tape.reshape(b, &[1, s[1], 1, 1])?;
    let r = tape.broadcast_to(r, &s)?;
    tape.add(x, r)
}

fn conv<T: Real>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var, StyleError> {
    let k = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    let pad = tape.shape(k)[2] / 2;
    let y = tape.conv2d(x, k, 1, pad)?;
    Ok(bias_add(tape, y, b)?)
}

// ---------------------------------------------------------------------------
// Generator

/// Per-call source of the noise maps fed to every generator stage.
///
/// Each (resolution, stage) pair draws from its own split stream, so blocks
/// shared between two phases receive identical noise.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: SquaresRng,
}

impl NoiseSource {
    pub fn new(rng: SquaresRng) -> Self {
        Self { rng }
    }

    fn draw<T: Real>(&self, r: usize, stage: usize, batch: usize) -> Tensor<T> {
        let mut rng = self.rng.split((r as u64) << 8 | stage as u64);
        let data = (0..batch * r * r).map(|_| T::from_f64(rng.normal())).collect();
        Tensor::new(&[batch, 1, r, r], data).expect("noise shape")
    }
}

fn style_stage<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    x: Var,
    w: Var,
    noise: Var,
) -> Result<Var, StyleError> {
    let s = tape.shape(x).to_vec();
    let scale = p.get(&format!("{prefix}.noise"))?;
    let h = add_noise(tape, x, scale, noise)?;
    let h = tape.leaky_relu(h, LRELU_SLOPE);
    let aw = p.get(&format!("{prefix}.style.w"))?;
    let ab = p.get(&format!("{prefix}.style.b"))?;
    let st = tape.dense(w, aw, ab)?;
    let st = tape.reshape(st, &[s[0], 2 * s[1], 1, 1])?;
    let g = tape.slice_channels(st, 0, s[1])?;
    let b = tape.slice_channels(st, s[1], s[1])?;
    let g = tape.reshape(g, &[s[0], s[1]])?;
    let b = tape.reshape(b, &[s[0], s[1]])?;
    adain(tape, h, g, b)
}

fn to_rgb<T: Real>(tape: &mut Tape<T>, p: &Bound, r: usize, h: Var) -> Result<Var, StyleError> {
    conv(tape, p, &format!("g.rgb{r}"), h)
}

/// Feature maps of every generator block up to `top`, in resolution order.
fn generator_features<T: Real>(
    tape: &mut Tape<T>,
    cfg: &NetConfig,
    p: &Bound,
    z: Var,
    top: usize,
    noise: &NoiseSource,
) -> Result<Vec<(usize, Var)>, StyleError> {
    let zs = tape.shape(z).to_vec();
    if zs.len() != 2 || zs[1] != cfg.latent_dim {
        return Err(TensorError::ShapeMismatch { op: "generate", lhs: zs, rhs: vec![0, cfg.latent_dim] }.into());
    }
    let batch = zs[0];
    let w = map_latent(tape, p, cfg.mapping_depth, z)?;
    let mut out = Vec::new();
    let mut h: Option<Var> = None;
    for r in cfg.generator_resolutions().into_iter().take_while(|&r| r <= top) {
        let first = match h {
            None => {
                let c = p.get("g.const")?;
                let shape = [batch, cfg.channels_at(BASE), BASE, BASE];
                tape.broadcast_to(c, &shape)?
            }
            Some(prev) => {
                let k = p.get(&format!("g.b{r}.up.w"))?;
                let b = p.get(&format!("g.b{r}.up.b"))?;
                let u = tape.deconv2d(prev, k, 2)?;
                let u = bias_add(tape, u, b)?;
                let u = tape.leaky_relu(u, LRELU_SLOPE);
                conv(tape, p, &format!("g.b{r}.conv0"), u)?
            }
        };
        let n0 = tape.constant(noise.draw(r, 0, batch));
        let a = style_stage(tape, p, &format!("g.b{r}.s0"), first, w, n0)?;
        let c1 = conv(tape, p, &format!("g.b{r}.conv1"), a)?;
        let n1 = tape.constant(noise.draw(r, 1, batch));
        let b = style_stage(tape, p, &format!("g.b{r}.s1"), c1, w, n1)?;
        out.push((r, b));
        h = Some(b);
    }
    Ok(out)
}

/// Generator image `[b,1,R,R]` at output resolution `out_res`. For `α < 1`
/// the newest block is blended with the nearest-upsampled image of the
/// previous resolution: `α·new + (1−α)·up(old)`.
fn generate_at<T: Real>(
    tape: &mut Tape<T>,
    cfg: &NetConfig,
    p: &Bound,
    z: Var,
    out_res: usize,
    alpha: f64,
    noise: &NoiseSource,
) -> Result<Var, StyleError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TensorError::InvalidArgument { op: "generate", what: "alpha must lie in [0, 1]" }.into());
    }
    let feats = generator_features(tape, cfg, p, z, out_res, noise)?;
    let &(r, h) = feats.last().ok_or(StyleError::ResolutionNotInSchedule(out_res))?;
    if r != out_res {
        return Err(StyleError::ResolutionNotInSchedule(out_res));
    }
    let new = to_rgb(tape, p, r, h)?;
    if alpha >= 1.0 || feats.len() < 2 {
        return Ok(new);
    }
    let (pr, ph) = feats[feats.len() - 2];
    let old = to_rgb(tape, p, pr, ph)?;
    let old = tape.upsample_nearest2(old)?;
    let a = tape.scale(new, alpha);
    let b = tape.scale(old, 1.0 - alpha);
    Ok(tape.add(a, b)?)
}

/// Generator output for the critic phase `resolution`.
///
/// With the resolution-increase variant this is the full `2R` image; use
/// [`generate_upscaled`] to also get the critic's view.
pub fn generate<T: Real>(
    tape: &mut Tape<T>,
    cfg: &NetConfig,
    p: &Bound,
    z: Var,
    resolution: usize,
    alpha: f64,
    noise: &NoiseSource,
) -> Result<Var, StyleError> {
    cfg.check_phase(resolution)?;
    generate_at(tape, cfg, p, z, cfg.output_resolution(resolution), alpha, noise)
}

/// Resolution-increase variant: the `2R` image and its stride-2 subsample.
pub fn generate_upscaled<T: Real>(
    tape: &mut Tape<T>,
    cfg: &NetConfig,
    p: &Bound,
    z: Var,
    resolution: usize,
    alpha: f64,
    noise: &NoiseSource,
) -> Result<(Var, Var), StyleError> {
    if cfg.variant != Variant::ResolutionIncrease {
        return Err(StyleError::VariantDisabled);
    }
    let full = generate(tape, cfg, p, z, resolution, alpha, noise)?;
    let view = tape.subsample(full, 2)?;
    Ok((full, view))
}

/// The image the critic sees for a generator output.
pub fn critic_view<T: Real>(tape: &mut Tape<T>, cfg: &NetConfig, img: Var) -> Result<Var, StyleError> {
    match cfg.variant {
        Variant::Standard => Ok(img),
        Variant::ResolutionIncrease => Ok(tape.subsample(img, 2)?),
    }
}

// ---------------------------------------------------------------------------
// Critic

fn from_rgb<T: Real>(tape: &mut Tape<T>, p: &Bound, r: usize, x: Var) -> Result<Var, StyleError> {
    let mut h = x;
    for i in 0..3 {
        h = conv(tape, p, &format!("d.rgb{r}.{i}"), h)?;
        h = tape.leaky_relu(h, LRELU_SLOPE);
    }
    Ok(h)
}

fn down_block<T: Real>(tape: &mut Tape<T>, p: &Bound, r: usize, x: Var) -> Result<Var, StyleError> {
    let mut h = tape.avg_pool2(x)?;
    for i in 0..2 {
        h = pixel_norm(tape, h)?;
        h = conv(tape, p, &format!("d.b{r}.conv{i}"), h)?;
        h = tape.leaky_relu(h, LRELU_SLOPE);
    }
    Ok(h)
}

/// Raw critic scores `[b,1]` for images at `resolution`.
pub fn discriminate<T: Real>(
    tape: &mut Tape<T>,
    cfg: &NetConfig,
    p: &Bound,
    x: Var,
    resolution: usize,
    alpha: f64,
) -> Result<Var, StyleError> {
    cfg.check_phase(resolution)?;
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || s[1] != 1 || s[2] != s[3] {
        return Err(TensorError::InvalidArgument { op: "discriminate", what: "expected [b,1,R,R] input" }.into());
    }
    if s[2] != resolution {
        return Err(StyleError::ResolutionMismatch { expected: resolution, got: s[2] });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TensorError::InvalidArgument { op: "discriminate", what: "alpha must lie in [0, 1]" }.into());
    }
    let mut h = from_rgb(tape, p, resolution, x)?;
    h = down_block(tape, p, resolution, h)?;
    if alpha < 1.0 && resolution > BASE && cfg.progressive {
        let pooled = tape.avg_pool2(x)?;
        let old = from_rgb(tape, p, resolution / 2, pooled)?;
        let a = tape.scale(h, alpha);
        let b = tape.scale(old, 1.0 - alpha);
        h = tape.add(a, b)?;
    }
    let mut r = resolution / 2;
    while r >= BASE {
        h = down_block(tape, p, r, h)?;
        r /= 2;
    }
    // h is [b, c8, 4, 4]
    h = batch_std(tape, h)?;
    h = conv(tape, p, "d.head.conv", h)?;
    h = tape.leaky_relu(h, LRELU_SLOPE);
    let hs = tape.shape(h).to_vec();
    let flat = tape.reshape(h, &[hs[0], hs[1] * hs[2] * hs[3]])?;
    let w4 = p.get("d.head.conv4.w")?;
    let b4 = p.get("d.head.conv4.b")?;
    let f = tape.dense(flat, w4, b4)?;
    let f = tape.leaky_relu(f, LRELU_SLOPE);
    let w = p.get("d.head.dense.w")?;
    let b = p.get("d.head.dense.b")?;
    Ok(tape.dense(f, w, b)?)
}

// ---------------------------------------------------------------------------
// Initialization

fn gaussian<T: Real>(rng: &mut SquaresRng, shape: &[usize], std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::from_f64(rng.normal() * std)).collect()).expect("init shape")
}

fn inv_sqrt(n: usize) -> f64 {
    1.0 / libm::sqrt(n as f64)
}

fn put_conv<T: Real>(ps: &mut ParamStore<T>, rng: &mut SquaresRng, name: &str, cout: usize, cin: usize, k: usize) {
    ps.insert(format!("{name}.w"), gaussian(rng, &[cout, cin, k, k], inv_sqrt(cin * k * k)));
    ps.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
}

/// Fresh generator parameters: N(0, 1/fan_in) weights, zero biases, zero
/// noise scales and style affines whose γ starts at 1.
pub fn init_generator<T: Real>(cfg: &NetConfig, rng: &mut SquaresRng) -> Result<ParamStore<T>, StyleError> {
    cfg.validate()?;
    let l = cfg.latent_dim;
    let mut ps = ParamStore::new();
    for i in 0..cfg.mapping_depth {
        ps.insert(format!("g.map.{i}.w"), gaussian(rng, &[l, l], inv_sqrt(l)));
        ps.insert(format!("g.map.{i}.b"), Tensor::zeros(&[l]));
    }
    let c8 = cfg.channels_at(BASE);
    ps.insert(String::from("g.const"), gaussian(rng, &[1, c8, BASE, BASE], 1.0));
    let mut prev = c8;
    for r in cfg.generator_resolutions() {
        let c = cfg.channels_at(r);
        if r > BASE {
            ps.insert(format!("g.b{r}.up.w"), gaussian(rng, &[prev, c, 3, 3], inv_sqrt(prev * 9)));
            ps.insert(format!("g.b{r}.up.b"), Tensor::zeros(&[c]));
            put_conv(&mut ps, rng, &format!("g.b{r}.conv0"), c, c, 3);
        }
        put_conv(&mut ps, rng, &format!("g.b{r}.conv1"), c, c, 3);
        for s in 0..2 {
            let pre = format!("g.b{r}.s{s}");
            ps.insert(format!("{pre}.noise"), Tensor::zeros(&[c]));
            ps.insert(format!("{pre}.style.w"), gaussian(rng, &[l, 2 * c], inv_sqrt(l)));
            let bias: Vec<f64> = (0..2 * c).map(|i| if i < c { 1.0 } else { 0.0 }).collect();
            ps.insert(format!("{pre}.style.b"), Tensor::from_f64(&[2 * c], &bias)?);
        }
        put_conv(&mut ps, rng, &format!("g.rgb{r}"), 1, c, 1);
        prev = c;
    }
    Ok(ps)
}

/// Fresh critic parameters.
pub fn init_critic<T: Real>(cfg: &NetConfig, rng: &mut SquaresRng) -> Result<ParamStore<T>, StyleError> {
    cfg.validate()?;
    let mut ps = ParamStore::new();
    for r in cfg.critic_resolutions() {
        let c = cfg.channels_at(r);
        let below = if r == BASE { c } else { cfg.channels_at(r / 2) };
        put_conv(&mut ps, rng, &format!("d.rgb{r}.0"), c, 1, 1);
        put_conv(&mut ps, rng, &format!("d.rgb{r}.1"), c, c, 3);
        put_conv(&mut ps, rng, &format!("d.rgb{r}.2"), c, c, 3);
        put_conv(&mut ps, rng, &format!("d.b{r}.conv0"), c, c, 3);
        put_conv(&mut ps, rng, &format!("d.b{r}.conv1"), below, c, 3);
    }
    let c = cfg.channels_at(BASE);
    put_conv(&mut ps, rng, "d.head.conv", c, c + 1, 3);
    ps.insert(String::from("d.head.conv4.w"), gaussian(rng, &[16 * c, c], inv_sqrt(16 * c)));
    ps.insert(String::from("d.head.conv4.b"), Tensor::zeros(&[c]));
    ps.insert(String::from("d.head.dense.w"), gaussian(rng, &[c, 1], inv_sqrt(c)));
    ps.insert(String::from("d.head.dense.b"), Tensor::zeros(&[1]));
    Ok(ps)
}

/// Recover a config from parameter shapes (for loading checkpoints).
pub fn infer_config<T: Real>(
    g: &ParamStore<T>,
    d: &ParamStore<T>,
    variant: Variant,
    progressive: bool,
) -> Result<NetConfig, StyleError> {
    let missing = StyleError::BadConfig("parameters do not describe a complete network");
    let map0 = g.get("g.map.0.w").ok_or(missing.clone())?;
    let latent_dim = map0.shape()[0];
    let mapping_depth = (0..).take_while(|i| g.contains(&format!("g.map.{i}.w"))).count();
    let mut channels = BTreeMap::new();
    for r in RESOLUTIONS {
        if let Some(t) = g.get(&format!("g.rgb{r}.w")) {
            channels.insert(r, t.shape()[1]);
        }
    }
    let target_resolution =
        RESOLUTIONS.iter().copied().filter(|r| d.contains(&format!("d.rgb{r}.0.w"))).max().ok_or(missing)?;
    let cfg = NetConfig { target_resolution, latent_dim, mapping_depth, channels, variant, progressive };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NetConfig {
        NetConfig {
            target_resolution: 16,
            latent_dim: 6,
            mapping_depth: 2,
            channels: [(8, 4), (16, 3), (32, 2)].into_iter().collect(),
            variant: Variant::Standard,
            progressive: true,
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(schedule_resolutions(8, 128, true).unwrap(), vec![8, 16, 32, 64, 128]);
        assert_eq!(schedule_resolutions(8, 64, true).unwrap(), vec![8, 16, 32, 64]);
        assert_eq!(schedule_resolutions(8, 8, true).unwrap(), vec![8]);
        assert_eq!(schedule_resolutions(8, 64, false).unwrap(), vec![64]);
        assert!(schedule_resolutions(8, 48, true).is_err());
        assert!(schedule_resolutions(8, 4, true).is_err());
    }

    #[test]
    fn adain_hand_example() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let g = t.leaf(Tensor::from_f64(&[1, 1], &[2.0]).unwrap());
        let b = t.leaf(Tensor::from_f64(&[1, 1], &[1.0]).unwrap());
        let y = adain(&mut t, x, g, b).unwrap();
        let want = [-1.683, 0.106, 1.894, 3.683];
        for (a, e) in t.value(y).to_f64_vec().iter().zip(want) {
            assert!((a - e).abs() < 1e-3, "{a} vs {e}");
        }
    }

    #[test]
    fn pixel_norm_examples() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64(&[1, 2, 1, 1], &[3.0, 4.0]).unwrap());
        let y = pixel_norm(&mut t, x).unwrap();
        let v = t.value(y).to_f64_vec();
        assert!((v[0] - 0.8485).abs() < 1e-4 && (v[1] - 1.1314).abs() < 1e-4);
        let z = t.leaf(Tensor::zeros(&[1, 3, 2, 2]));
        let y = pixel_norm(&mut t, z).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_std_examples() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::from_f64(&[2, 1, 2, 2], &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0]).unwrap());
        let y = batch_std(&mut t, x).unwrap();
        assert_eq!(t.shape(y), &[2, 2, 2, 2]);
        let s = t.slice_channels(y, 1, 1).unwrap();
        assert!(t.value(s).data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let same = t.leaf(Tensor::full(&[3, 2, 4, 4], 0.7));
        let y = batch_std(&mut t, same).unwrap();
        let s = t.slice_channels(y, 2, 1).unwrap();
        assert!(t.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_examples() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::full(&[2, 3, 2, 2], 0.5));
        let zero = t.leaf(Tensor::zeros(&[3]));
        let n = t.leaf(Tensor::full(&[2, 1, 2, 2], 1.0));
        let y = add_noise(&mut t, x, zero, n).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let one = t.leaf(Tensor::full(&[3], 1.0));
        let y = add_noise(&mut t, x, one, n).unwrap();
        assert_eq!(t.value(y), &Tensor::full(&[2, 3, 2, 2], 1.5));
    }

    #[test]
    fn shapes_through_the_schedule() {
        let cfg = toy();
        let mut rng = SquaresRng::new(1);
        let g: ParamStore<f32> = init_generator(&cfg, &mut rng).unwrap();
        let d: ParamStore<f32> = init_critic(&cfg, &mut rng).unwrap();
        for &r in &cfg.phases() {
            let mut t = Tape::new();
            let gp = g.bind(&mut t);
            let dp = d.bind(&mut t);
            let z = t.constant(Tensor::full(&[3, 6], 0.3));
            let img = generate(&mut t, &cfg, &gp, z, r, 0.5, &NoiseSource::new(SquaresRng::new(2))).unwrap();
            assert_eq!(t.shape(img), &[3, 1, r, r]);
            let s = discriminate(&mut t, &cfg, &dp, img, r, 0.5).unwrap();
            assert_eq!(t.shape(s), &[3, 1]);
            assert!(t.value(s).all_finite());
        }
        let mut t = Tape::new();
        let gp = g.bind(&mut t);
        let z = t.constant(Tensor::zeros(&[1, 6]));
        let noise = NoiseSource::new(SquaresRng::new(2));
        assert!(matches!(generate(&mut t, &cfg, &gp, z, 32, 1.0, &noise), Err(StyleError::ResolutionNotInSchedule(32))));
        assert!(matches!(generate_upscaled(&mut t, &cfg, &gp, z, 8, 1.0, &noise), Err(StyleError::VariantDisabled)));
    }

    #[test]
    fn config_inference_round_trip() {
        let cfg = toy();
        let mut rng = SquaresRng::new(3);
        let g: ParamStore<f32> = init_generator(&cfg, &mut rng).unwrap();
        let d: ParamStore<f32> = init_critic(&cfg, &mut rng).unwrap();
        let mut want = cfg.clone();
        want.channels.remove(&32);
        assert_eq!(infer_config(&g, &d, Variant::Standard, true).unwrap(), want);
    }
}
