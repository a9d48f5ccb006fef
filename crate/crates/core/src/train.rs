//! Adversarial training: losses, the alternating update loop, progressive
//! phases with fade-in, and the checkpoint codec.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::image::{GrayImage, PatchSet};
use crate::rng::SquaresRng;
use crate::stylenet::{self, NetConfig, NoiseSource, StyleError};
use crate::tensor::{Adam, AdamConfig, Bound, ParamStore, Real, Tape, Tensor, TensorError, Var};

pub use crate::stylenet::schedule_resolutions;

/// Floor applied to probabilities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-7;
/// Added under the square root of the penalty's gradient norm.
pub const GP_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Model(#[from] StyleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

// ---------------------------------------------------------------------------
// Losses

/// Critic outputs already squashed to (0, 1). Only the classic loss takes
/// these; the Wasserstein loss works on raw scores.
#[derive(Debug, Clone, Copy)]
pub struct Probabilities(Var);

impl Probabilities {
    pub fn from_scores<T: Real>(tape: &mut Tape<T>, raw: Var) -> Self {
        Self(tape.sigmoid(raw))
    }

    /// Wrap values that are already probabilities.
    pub fn assume<T: Real>(_tape: &Tape<T>, p: Var) -> Self {
        Self(p)
    }

    pub fn var(self) -> Var {
        self.0
    }
}

fn mean_log<T: Real>(tape: &mut Tape<T>, p: Var) -> Result<Var, TensorError> {
    let c = tape.clamp_min(p, LOG_FLOOR);
    let l = tape.ln(c);
    tape.mean_all(l)
}

/// `loss_D = −[mean log D(x) + mean log(1 − D(G(z)))]` and the
/// non-saturating `loss_G = −mean log D(G(z))`.
pub fn classic_gan_losses<T: Real>(
    tape: &mut Tape<T>,
    d_real: Probabilities,
    d_fake: Probabilities,
) -> Result<(Var, Var), TensorError> {
    let lr = mean_log(tape, d_real.0)?;
    let neg = tape.neg(d_fake.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let lf = mean_log(tape, one_minus)?;
    let s = tape.add(lr, lf)?;
    let loss_d = tape.neg(s);
    let lg = mean_log(tape, d_fake.0)?;
    let loss_g = tape.neg(lg);
    Ok((loss_d, loss_g))
}

/// `λ · mean_i (‖∇_x̂ D(x̂)_i‖ − 1)²` at `x̂ = ε·fake + (1−ε)·real`, with one
/// `ε` per sample. The gradient stays on the tape so the penalty can be
/// differentiated with respect to the critic parameters.
pub fn gradient_penalty<T, F>(
    tape: &mut Tape<T>,
    mut critic: F,
    real: Var,
    fake: Var,
    eps: &[f64],
    lambda: f64,
) -> Result<Var, TrainError>
where
    T: Real,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var, TrainError>,
{
    let shape = tape.shape(real).to_vec();
    if tape.shape(fake) != shape.as_slice() || shape.is_empty() || eps.len() != shape[0] {
        return Err(TensorError::ShapeMismatch { op: "gradient_penalty", lhs: shape, rhs: tape.shape(fake).to_vec() }.into());
    }
    let mut es = vec![1; shape.len()];
    es[0] = shape[0];
    let e = tape.constant(Tensor::from_f64(&es, eps)?);
    let e = tape.broadcast_to(e, &shape)?;
    let one_minus: Vec<f64> = eps.iter().map(|v| 1.0 - v).collect();
    let om = tape.constant(Tensor::from_f64(&es, &one_minus)?);
    let om = tape.broadcast_to(om, &shape)?;
    let a = tape.mul(e, fake)?;
    let b = tape.mul(om, real)?;
    let xhat = tape.add(a, b)?;
    let scores = critic(tape, xhat)?;
    let total = tape.sum_all(scores)?;
    let g = tape.grad(total, &[xhat])?[0];
    let g2 = tape.mul(g, g)?;
    let n2 = tape.sum_to(g2, &es)?;
    let n2 = tape.add_scalar(n2, GP_NORM_EPS);
    let norm = tape.sqrt(n2);
    let d = tape.add_scalar(norm, -1.0);
    let d2 = tape.mul(d, d)?;
    let m = tape.mean_all(d2)?;
    Ok(tape.scale(m, lambda))
}

/// `loss_D = mean D(G(z)) − mean D(x) + penalty`, `loss_G = −mean D(G(z))`
/// on raw critic scores.
pub fn wgan_gp_losses<T: Real>(
    tape: &mut Tape<T>,
    d_real: Var,
    d_fake: Var,
    penalty: Var,
) -> Result<(Var, Var), TensorError> {
    let mr = tape.mean_all(d_real)?;
    let mf = tape.mean_all(d_fake)?;
    let w = tape.sub(mf, mr)?;
    let loss_d = tape.add(w, penalty)?;
    let loss_g = tape.neg(mf);
    Ok((loss_d, loss_g))
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Classic,
    WganGp,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Classic => "classic",
            LossKind::WganGp => "wgan_gp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "classic" => Some(LossKind::Classic),
            "wgan_gp" => Some(LossKind::WganGp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub lr: f64,
    /// Learning rate for phases at or above `lr_boost_resolution`.
    pub lr_boost: f64,
    pub lr_boost_resolution: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub k_d: usize,
    pub k_g: usize,
    pub gp_lambda: f64,
    /// Outer iterations per resolution phase.
    pub iterations: usize,
    /// Real images shown while a new block fades in; 0 disables fading.
    pub fade_images: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::WganGp,
            lr: 0.001,
            lr_boost: 0.0015,
            lr_boost_resolution: 128,
            beta1: 0.0,
            beta2: 0.99,
            adam_eps: 1e-8,
            batch: 16,
            k_d: 1,
            k_g: 1,
            gp_lambda: 10.0,
            iterations: 2000,
            fade_images: 16000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::ConfigInvalid(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.k_d == 0 || self.k_g == 0 {
            return bad("k_d and k_g must be at least 1");
        }
        if !(self.gp_lambda >= 0.0) {
            return bad("gradient penalty weight must be non-negative");
        }
        if !(self.lr > 0.0 && self.lr_boost > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam moments must satisfy 0 <= beta < 1 and eps > 0");
        }
        Ok(())
    }

    pub fn lr_for(&self, resolution: usize) -> f64 {
        if resolution >= self.lr_boost_resolution {
            self.lr_boost
        } else {
            self.lr
        }
    }

    fn adam(&self, resolution: usize) -> AdamConfig {
        AdamConfig { lr: self.lr_for(resolution), beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

// ---------------------------------------------------------------------------
// Models

/// What the training loop needs from a generator/critic pair.
pub trait GanModel {
    /// Critic resolution of each phase, in order.
    fn phases(&self) -> Vec<usize>;
    fn latent(&self, rng: &mut SquaresRng, batch: usize) -> Tensor<f32>;
    /// Generated images as the critic sees them.
    fn generate(
        &self,
        tape: &mut Tape<f32>,
        g: &Bound,
        z: Var,
        resolution: usize,
        alpha: f64,
        noise: &NoiseSource,
    ) -> Result<Var, TrainError>;
    fn critic(&self, tape: &mut Tape<f32>, d: &Bound, x: Var, resolution: usize, alpha: f64) -> Result<Var, TrainError>;
}

/// The style-based generator and critic of [`stylenet`].
#[derive(Debug, Clone, PartialEq)]
pub struct StyleGan {
    pub net: NetConfig,
}

impl GanModel for StyleGan {
    fn phases(&self) -> Vec<usize> {
        self.net.phases()
    }

    fn latent(&self, rng: &mut SquaresRng, batch: usize) -> Tensor<f32> {
        let n = batch * self.net.latent_dim;
        Tensor::new(&[batch, self.net.latent_dim], (0..n).map(|_| rng.normal() as f32).collect()).expect("latent shape")
    }

    fn generate(
        &self,
        tape: &mut Tape<f32>,
        g: &Bound,
        z: Var,
        resolution: usize,
        alpha: f64,
        noise: &NoiseSource,
    ) -> Result<Var, TrainError> {
        let img = stylenet::generate(tape, &self.net, g, z, resolution, alpha, noise)?;
        Ok(stylenet::critic_view(tape, &self.net, img)?)
    }

    fn critic(&self, tape: &mut Tape<f32>, d: &Bound, x: Var, resolution: usize, alpha: f64) -> Result<Var, TrainError> {
        Ok(stylenet::discriminate(tape, &self.net, d, x, resolution, alpha)?)
    }
}

// ---------------------------------------------------------------------------
// Data

/// Average each 2×2 block.
pub fn box_downscale(img: &GrayImage) -> Result<Vec<f64>, TrainError> {
    let (w, h) = (img.width(), img.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(TrainError::ConfigInvalid(format!("cannot halve a {w}x{h} image")));
    }
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    Ok(halve(&src, w, h))
}

fn halve(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h / 4);
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            let a = src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1];
            let b = src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1];
            out.push((a + b) / 4.0);
        }
    }
    out
}

/// Every patch reduced to `resolution` by repeated 2× box filtering and
/// mapped from `[0, 255]` to `[−1, 1]`; row-major, one block per patch.
pub fn patches_at(patches: &PatchSet, resolution: usize) -> Result<Vec<f32>, TrainError> {
    let p = patches.patch_size();
    if resolution == 0 || p % resolution != 0 || !(p / resolution).is_power_of_two() {
        return Err(TrainError::ConfigInvalid(format!(
            "patch size {p} cannot be box-downscaled to {resolution}"
        )));
    }
    let mut out = Vec::with_capacity(patches.len() * resolution * resolution);
    for i in 0..patches.len() {
        let mut cur: Vec<f64> = patches.patch_pixels(i).iter().map(|&v| v as f64).collect();
        let mut s = p;
        while s > resolution {
            cur = halve(&cur, s, s);
            s /= 2;
        }
        out.extend(cur.iter().map(|&v| (v / 127.5 - 1.0) as f32));
    }
    Ok(out)
}

/// Map generator output in `[−1, 1]` back to 8-bit images.
pub fn tensor_to_images<T: Real>(t: &Tensor<T>) -> Vec<GrayImage> {
    let s = t.shape();
    let (b, h, w) = (s[0], s[s.len() - 2], s[s.len() - 1]);
    (0..b)
        .map(|i| {
            let px = &t.data()[i * h * w..(i + 1) * h * w];
            let data = px.iter().map(|v| libm::round((v.to_f64() + 1.0) * 127.5).clamp(0.0, 255.0) as u8).collect();
            GrayImage::new(w, h, data).expect("non-empty image")
        })
        .collect()
}

/// Sample `count` images from a trained style generator at its final phase.
pub fn sample_images(
    net: &NetConfig,
    g: &ParamStore<f32>,
    count: usize,
    batch: usize,
    rng: &mut SquaresRng,
) -> Result<Vec<GrayImage>, TrainError> {
    let model = StyleGan { net: net.clone() };
    let resolution = *net.phases().last().ok_or(StyleError::BadConfig("empty schedule"))?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let b = batch.max(1).min(count - out.len());
        let mut tape = Tape::new();
        let gp = g.bind(&mut tape);
        let z = tape.constant(model.latent(rng, b));
        let noise = fresh_noise(rng);
        let img = stylenet::generate(&mut tape, net, &gp, z, resolution, 1.0, &noise)?;
        out.extend(tensor_to_images(tape.value(img)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trainer

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub phase: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    /// `mean D(x) − mean D(G(z))` of the last critic update.
    pub w_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Critic,
    Generator,
}

pub struct Trainer<M: GanModel> {
    model: M,
    cfg: TrainConfig,
    gen: ParamStore<f32>,
    critic: ParamStore<f32>,
    adam_g: Adam<f32>,
    adam_d: Adam<f32>,
    rng: SquaresRng,
    phases: Vec<usize>,
    /// Real patches per phase, prepared lazily.
    reals: BTreeMap<usize, Vec<f32>>,
    patches: PatchSet,
    phase_index: usize,
    iter_in_phase: usize,
    iteration: u64,
    d_updates: u64,
    g_updates: u64,
}

impl<M: GanModel> Trainer<M> {
    pub fn new(
        model: M,
        cfg: TrainConfig,
        gen: ParamStore<f32>,
        critic: ParamStore<f32>,
        patches: PatchSet,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let phases = model.phases();
        let first = *phases.first().ok_or_else(|| TrainError::ConfigInvalid("empty phase schedule".into()))?;
        let mut t = Self {
            adam_g: Adam::new(cfg.adam(first)),
            adam_d: Adam::new(cfg.adam(first)),
            rng: SquaresRng::new(cfg.seed),
            model,
            cfg,
            gen,
            critic,
            phases,
            reals: BTreeMap::new(),
            patches,
            phase_index: 0,
            iter_in_phase: 0,
            iteration: 0,
            d_updates: 0,
            g_updates: 0,
        };
        for &r in &t.phases.clone() {
            t.reals.insert(r, patches_at(&t.patches, r)?);
        }
        t.sync_phase();
        Ok(t)
    }

    /// Continue from a checkpoint; parameters, optimizer moments and the
    /// random stream are restored, the position is derived from the
    /// iteration count.
    pub fn resume(model: M, cfg: TrainConfig, ckpt: &Checkpoint, patches: PatchSet) -> Result<Self, TrainError> {
        let (gen, critic) = ckpt.params();
        let mut t = Self::new(model, cfg, gen, critic, patches)?;
        t.rng = SquaresRng::from_state(ckpt.rng_state);
        for (prefix, adam) in [("g", &mut t.adam_g), ("d", &mut t.adam_d)] {
            if let Some(step) = ckpt.get(&format!("adam.{prefix}.t")) {
                adam.set_step_count(step.item() as u64);
            }
        }
        for (name, tensor) in &ckpt.entries {
            if let Some(rest) = name.strip_prefix("adam.m.") {
                let v = ckpt.get(&format!("adam.v.{rest}")).ok_or(CheckpointError::CorruptFile("missing moment"))?;
                let adam = if rest.starts_with("g.") { &mut t.adam_g } else { &mut t.adam_d };
                adam.set_moments(rest, tensor.clone(), v.clone());
            }
        }
        let n = t.cfg.iterations as u64;
        let phase_index = t
            .phases
            .iter()
            .position(|&r| r as u32 == ckpt.phase)
            .ok_or(CheckpointError::CorruptFile("phase not in the schedule"))?;
        t.iteration = ckpt.iteration;
        t.phase_index = phase_index;
        t.iter_in_phase = ckpt.iteration.saturating_sub(phase_index as u64 * n).min(n) as usize;
        t.d_updates = ckpt.iteration * t.cfg.k_d as u64;
        t.g_updates = ckpt.iteration * t.cfg.k_g as u64;
        t.sync_phase();
        Ok(t)
    }

    pub fn generator(&self) -> &ParamStore<f32> {
        &self.gen
    }

    pub fn critic(&self) -> &ParamStore<f32> {
        &self.critic
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// `(critic updates, generator updates)` performed so far.
    pub fn update_counts(&self) -> (u64, u64) {
        (self.d_updates, self.g_updates)
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn resolution(&self) -> usize {
        self.phases[self.phase_index]
    }

    /// Fade-in weight of the newest block.
    pub fn alpha(&self) -> f64 {
        if self.phase_index == 0 || self.cfg.fade_images == 0 {
            return 1.0;
        }
        let seen = (self.iter_in_phase * self.cfg.batch) as f64;
        (seen / self.cfg.fade_images as f64).min(1.0)
    }

    pub fn is_finished(&self) -> bool {
        self.phase_index + 1 == self.phases.len() && self.iter_in_phase >= self.cfg.iterations
    }

    fn sync_phase(&mut self) {
        while self.iter_in_phase >= self.cfg.iterations && self.phase_index + 1 < self.phases.len() {
            self.phase_index += 1;
            self.iter_in_phase = 0;
        }
        let lr = self.cfg.lr_for(self.resolution());
        self.adam_g.config.lr = lr;
        self.adam_d.config.lr = lr;
    }

    fn real_batch(&mut self) -> Tensor<f32> {
        let r = self.resolution();
        let data = &self.reals[&r];
        let n = data.len() / (r * r);
        let mut out = Vec::with_capacity(self.cfg.batch * r * r);
        for _ in 0..self.cfg.batch {
            let i = self.rng.below(n as u64) as usize;
            out.extend_from_slice(&data[i * r * r..(i + 1) * r * r]);
        }
        Tensor::new(&[self.cfg.batch, 1, r, r], out).expect("batch shape")
    }

    fn critic_update(&mut self) -> Result<(f64, f64), TrainError> {
        let (r, alpha, b) = (self.resolution(), self.alpha(), self.cfg.batch);
        let real = self.real_batch();
        let z = self.model.latent(&mut self.rng, b);
        let noise = fresh_noise(&mut self.rng);
        let eps: Vec<f64> = (0..b).map(|_| self.rng.next_f64()).collect();

        let mut tape = Tape::new();
        let dp = self.critic.bind(&mut tape);
        let gp = self.gen.bind(&mut tape);
        let zv = tape.constant(z);
        let fake = self.model.generate(&mut tape, &gp, zv, r, alpha, &noise)?;
        let rv = tape.constant(real);
        let d_real = self.model.critic(&mut tape, &dp, rv, r, alpha)?;
        let d_fake = self.model.critic(&mut tape, &dp, fake, r, alpha)?;
        let mr = tape.value(d_real).to_f64_vec();
        let mf = tape.value(d_fake).to_f64_vec();
        let w_est = mean(&mr) - mean(&mf);
        let loss = match self.cfg.loss {
            LossKind::WganGp => {
                let model = &self.model;
                let penalty = if self.cfg.gp_lambda > 0.0 {
                    gradient_penalty(&mut tape, |t, x| model.critic(t, &dp, x, r, alpha), rv, fake, &eps, self.cfg.gp_lambda)?
                } else {
                    tape.constant(Tensor::scalar(0.0))
                };
                wgan_gp_losses(&mut tape, d_real, d_fake, penalty)?.0
            }
            LossKind::Classic => {
                let pr = Probabilities::from_scores(&mut tape, d_real);
                let pf = Probabilities::from_scores(&mut tape, d_fake);
                classic_gan_losses(&mut tape, pr, pf)?.0
            }
        };
        let value = tape.value(loss).item();
        let grads = gradients(&mut tape, loss, &dp)?;
        self.adam_d.step(&mut self.critic, &grads)?;
        self.critic.bump_version();
        self.d_updates += 1;
        Ok((value, w_est))
    }

    fn generator_update(&mut self) -> Result<f64, TrainError> {
        let (r, alpha, b) = (self.resolution(), self.alpha(), self.cfg.batch);
        let z = self.model.latent(&mut self.rng, b);
        let noise = fresh_noise(&mut self.rng);

        let mut tape = Tape::new();
        let gp = self.gen.bind(&mut tape);
        let dp = self.critic.bind(&mut tape);
        let zv = tape.constant(z);
        let fake = self.model.generate(&mut tape, &gp, zv, r, alpha, &noise)?;
        let d_fake = self.model.critic(&mut tape, &dp, fake, r, alpha)?;
        let loss = match self.cfg.loss {
            LossKind::WganGp => {
                let m = tape.mean_all(d_fake)?;
                tape.neg(m)
            }
            LossKind::Classic => {
                let p = tape.sigmoid(d_fake);
                let l = mean_log(&mut tape, p)?;
                tape.neg(l)
            }
        };
        let value = tape.value(loss).item();
        let grads = gradients(&mut tape, loss, &gp)?;
        self.adam_g.step(&mut self.gen, &grads)?;
        self.gen.bump_version();
        self.g_updates += 1;
        Ok(value)
    }

    /// One outer iteration: `k_D` critic updates then `k_G` generator
    /// updates. Returns `None` once the schedule is complete.
    pub fn step(&mut self) -> Result<Option<TraceRow>, TrainError> {
        self.step_observed(|_, _, _| {})
    }

    /// Like [`Trainer::step`], calling `observe` after every single update.
    pub fn step_observed(
        &mut self,
        mut observe: impl FnMut(UpdateKind, &ParamStore<f32>, &ParamStore<f32>),
    ) -> Result<Option<TraceRow>, TrainError> {
        if self.is_finished() {
            return Ok(None);
        }
        let phase = self.resolution();
        let mut loss_d = 0.0;
        let mut w_estimate = 0.0;
        for _ in 0..self.cfg.k_d {
            (loss_d, w_estimate) = self.critic_update()?;
            observe(UpdateKind::Critic, &self.gen, &self.critic);
        }
        let mut loss_g = 0.0;
        for _ in 0..self.cfg.k_g {
            loss_g = self.generator_update()?;
            observe(UpdateKind::Generator, &self.gen, &self.critic);
        }
        self.iteration += 1;
        self.iter_in_phase += 1;
        let row = TraceRow { iter: self.iteration, phase, loss_d, loss_g, w_estimate };
        if self.iter_in_phase >= self.cfg.iterations {
            self.sync_phase();
        }
        Ok(Some(row))
    }

    /// Run to the end of the schedule.
    pub fn run(&mut self, mut on_row: impl FnMut(&TraceRow)) -> Result<(), TrainError> {
        while let Some(row) = self.step()? {
            on_row(&row);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut entries = Vec::new();
        for (n, t) in self.gen.iter().chain(self.critic.iter()) {
            entries.push((n.to_string(), t.clone()));
        }
        for (prefix, adam) in [("g", &self.adam_g), ("d", &self.adam_d)] {
            entries.push((format!("adam.{prefix}.t"), Tensor::scalar(adam.step_count() as f64)));
            for (n, m, v) in adam.moments() {
                entries.push((format!("adam.m.{n}"), m.clone()));
                entries.push((format!("adam.v.{n}"), v.clone()));
            }
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            iteration: self.iteration,
            phase: self.resolution() as u32,
            alpha: self.alpha() as f32,
            rng_state: self.rng.state(),
            entries,
        }
    }
}

fn fresh_noise(rng: &mut SquaresRng) -> NoiseSource {
    NoiseSource::new(SquaresRng::new(rng.next_u64()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn gradients(tape: &mut Tape<f32>, loss: Var, params: &Bound) -> Result<BTreeMap<String, Tensor<f32>>, TensorError> {
    let names: Vec<String> = params.names().map(String::from).collect();
    let vars = params.vars();
    let grads = tape.grad(loss, &vars)?;
    Ok(names.into_iter().zip(grads).map(|(n, g)| (n, tape.value(g).clone())).collect())
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(&'static str),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

/// Training state: named tensors plus the loop position and random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: u64,
    /// Critic resolution of the current phase.
    pub phase: u32,
    pub alpha: f32,
    pub rng_state: [u8; 16],
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Generator (`g.*`) and critic (`d.*`) parameters.
    pub fn params(&self) -> (ParamStore<f32>, ParamStore<f32>) {
        let mut g = ParamStore::new();
        let mut d = ParamStore::new();
        for (n, t) in &self.entries {
            if n.starts_with("g.") {
                g.insert(n.clone(), t.clone());
            } else if n.starts_with("d.") {
                d.insert(n.clone(), t.clone());
            }
        }
        (g, d)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.phase.to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&self.rng_state);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::CorruptFile("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let iteration = r.u64()?;
        let phase = r.u32()?;
        let alpha = f32::from_bits(r.u32()?);
        let mut rng_state = [0u8; 16];
        rng_state.copy_from_slice(r.take(16)?);
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = core::str::from_utf8(r.take(len)?).map_err(|_| CheckpointError::CorruptFile("entry name"))?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::CorruptFile("size"))?;
            let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::CorruptFile("size"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(&shape, data).map_err(|_| CheckpointError::CorruptFile("payload"))?;
            entries.push((name.to_string(), t));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::CorruptFile("trailing bytes"));
        }
        Ok(Self { version, iteration, phase, alpha, rng_state, entries })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::CorruptFile("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }
}
