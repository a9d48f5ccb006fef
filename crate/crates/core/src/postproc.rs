//! Binarization recipes: thresholds, hole filling, smoothing filters and
//! Otsu's method.
//!
//! A `true` mask entry is solid. Thresholds classify `value >= t` as solid.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::image::{BinaryMask, GrayImage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PostprocError {
    #[error("filter window must be odd, got {0}")]
    EvenKernel(usize),
    #[error("image has a single intensity; no threshold separates it")]
    DegenerateImage,
    #[error("invalid recipe: {0}")]
    BadRecipe(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

/// `img >= t` is solid.
pub fn threshold(img: &GrayImage, t: u8) -> BinaryMask {
    let data = img.data().iter().map(|&v| v >= t).collect();
    BinaryMask::new(img.width(), img.height(), data).expect("same extent as a valid image")
}

/// Turn every 4-connected pore region that does not reach the image border
/// into solid.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let pore = |i: usize| !mask.data()[i];
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if (r == 0 || c == 0 || r + 1 == h || c + 1 == w) && pore(i) && !outside[i] {
                outside[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / w, i % w);
        let mut visit = |j: usize| {
            if pore(j) && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        };
        if r > 0 {
            visit(i - w);
        }
        if r + 1 < h {
            visit(i + w);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < w {
            visit(i + 1);
        }
    }
    let data = (0..w * h).map(|i| !outside[i]).collect();
    BinaryMask::new(w, h, data).expect("same extent")
}

fn check_odd(k: usize) -> Result<(), PostprocError> {
    if k % 2 == 0 {
        return Err(PostprocError::EvenKernel(k));
    }
    Ok(())
}

/// Row-major `k×k` Gaussian weights truncated to the window and normalized
/// to sum to one.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Result<Vec<f64>, PostprocError> {
    check_odd(k)?;
    if !(sigma > 0.0) {
        return Err(PostprocError::BadRecipe(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let half = (k / 2) as f64;
    let mut w = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let (y, x) = (i as f64 - half, j as f64 - half);
            w.push(libm::exp(-(x * x + y * y) / (2.0 * sigma * sigma)));
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[inline]
fn clamped(i: usize, d: usize, half: usize, n: usize) -> usize {
    (i + d).saturating_sub(half).min(n - 1)
}

/// Gaussian smoothing with edge replication, rounded back to 8 bits.
pub fn gaussian_blur(img: &GrayImage, k: usize, sigma: f64) -> Result<GrayImage, PostprocError> {
    let kern = gaussian_kernel(k, sigma)?;
    let (w, h, half) = (img.width(), img.height(), k / 2);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for i in 0..k {
                let row = img.row(clamped(r, i, half, h));
                for j in 0..k {
                    acc += kern[i * k + j] * row[clamped(c, j, half, w)] as f64;
                }
            }
            out.push(libm::round(acc).clamp(0.0, 255.0) as u8);
        }
    }
    Ok(GrayImage::new(w, h, out).expect("same extent"))
}

/// Window median with edge replication.
pub fn median_blur(img: &GrayImage, k: usize) -> Result<GrayImage, PostprocError> {
    check_odd(k)?;
    let (w, h, half) = (img.width(), img.height(), k / 2);
    let mut window = Vec::with_capacity(k * k);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            window.clear();
            for i in 0..k {
                let row = img.row(clamped(r, i, half, h));
                window.extend((0..k).map(|j| row[clamped(c, j, half, w)]));
            }
            let mid = window.len() / 2;
            out.push(*window.select_nth_unstable(mid).1);
        }
    }
    Ok(GrayImage::new(w, h, out).expect("same extent"))
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    hist
}

/// `(hi, lo)` of the full 256-bit product.
fn widening_mul(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & MASK);
    let (b1, b0) = (b >> 64, b & MASK);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 & MASK) + (p10 & MASK);
    let lo = (p00 & MASK) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (hi, lo)
}

/// Otsu level from a histogram: the smallest `t` in `1..=255` maximizing the
/// between-class variance of `{v < t}` and `{v >= t}`. `None` when all
/// pixels share one value.
///
/// With `n0, s0` the count and intensity sum below `t` and `n1, s1` above,
/// the variance is proportional to `(s0·n1 − s1·n0)² / (n0·n1)`. Candidates
/// are compared by cross-multiplying in integers, so ties are exact.
pub fn otsu_level(hist: &[u64; 256]) -> Option<u8> {
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(v, &c)| v as u128 * c as u128).sum();
    let (mut n0, mut s0) = (0u128, 0u128);
    // best numerator and denominator
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 1..=255usize {
        n0 += hist[t - 1] as u128;
        s0 += (t - 1) as u128 * hist[t - 1] as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = s - s0;
        let a = (s0 * n1).abs_diff(s1 * n0);
        let num = a.checked_mul(a).expect("image too large for an exact Otsu comparison");
        let den = n0 * n1;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => widening_mul(num, bd) > widening_mul(bn, den),
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|b| b.0)
}

pub fn otsu_threshold(img: &GrayImage) -> Result<(u8, BinaryMask), PostprocError> {
    let t = otsu_level(&histogram(img)).ok_or(PostprocError::DegenerateImage)?;
    Ok((t, threshold(img, t)))
}

// ---------------------------------------------------------------------------
// Recipes

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Threshold(u8),
    FillHoles,
    Gaussian { k: usize, sigma: f64 },
    Median(usize),
    Otsu,
}

impl Step {
    fn binarizes(self) -> bool {
        matches!(self, Step::Threshold(_) | Step::Otsu)
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Threshold(t) => write!(f, "threshold={t}"),
            Step::FillHoles => write!(f, "fill_holes"),
            Step::Gaussian { k, sigma } => write!(f, "gaussian={k},{sigma}"),
            Step::Median(k) => write!(f, "median={k}"),
            Step::Otsu => write!(f, "otsu"),
        }
    }
}

/// An ordered list of steps ending in a binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    steps: Vec<Step>,
}

/// Mask produced by a recipe plus the levels Otsu steps chose.
#[derive(Debug, Clone, PartialEq)]
pub struct Processed {
    pub mask: BinaryMask,
    pub otsu_levels: Vec<u8>,
}

pub const PRESETS: [&str; 2] = ["alporas", "digitalrock"];

impl Recipe {
    pub fn new(steps: Vec<Step>) -> Result<Self, PostprocError> {
        let bad = |m: &str| Err(PostprocError::BadRecipe(m.to_string()));
        if !steps.last().is_some_and(|s| s.binarizes()) {
            return bad("the last step must be threshold or otsu");
        }
        let mut binary = false;
        for s in &steps {
            match *s {
                Step::FillHoles if !binary => return bad("fill_holes needs a binary image"),
                Step::Gaussian { k, sigma } => {
                    gaussian_kernel(k, sigma)?;
                }
                Step::Median(k) => check_odd(k)?,
                _ => {}
            }
            binary = s.binarizes() || (binary && *s == Step::FillHoles);
        }
        Ok(Self { steps })
    }

    /// Fixed threshold 116, hole filling, a 5×5 Gaussian with σ = 20, then
    /// Otsu.
    pub fn alporas() -> Self {
        Self::new(vec![Step::Threshold(116), Step::FillHoles, Step::Gaussian { k: 5, sigma: 20.0 }, Step::Otsu])
            .expect("valid preset")
    }

    /// 3×3 median, then Otsu.
    pub fn digitalrock() -> Self {
        Self::new(vec![Step::Median(3), Step::Otsu]).expect("valid preset")
    }

    pub fn preset(name: &str) -> Result<Self, PostprocError> {
        match name {
            "alporas" => Ok(Self::alporas()),
            "digitalrock" => Ok(Self::digitalrock()),
            _ => Err(PostprocError::UnknownPreset(name.to_string())),
        }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Parse one step per line, `name=params`; blank lines and `#` comments
    /// are skipped. Steps: `threshold=T`, `fill_holes`, `gaussian=K,SIGMA`,
    /// `median=K`, `otsu`.
    pub fn parse(text: &str) -> Result<Self, PostprocError> {
        let mut steps = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| PostprocError::BadRecipe(format!("line {}: {m}: {line:?}", no + 1));
            let (key, val) = match line.split_once('=') {
                Some((k, v)) => (k.trim(), Some(v.trim())),
                None => (line, None),
            };
            let step = match (key, val) {
                ("threshold", Some(v)) => Step::Threshold(v.parse().map_err(|_| bad("threshold must be 0..=255"))?),
                ("fill_holes", None) => Step::FillHoles,
                ("otsu", None) => Step::Otsu,
                ("gaussian", Some(v)) => {
                    let (k, s) = v.split_once(',').ok_or_else(|| bad("expected gaussian=K,SIGMA"))?;
                    Step::Gaussian {
                        k: k.trim().parse().map_err(|_| bad("bad window"))?,
                        sigma: s.trim().parse().map_err(|_| bad("bad sigma"))?,
                    }
                }
                ("median", Some(v)) => Step::Median(v.parse().map_err(|_| bad("bad window"))?),
                _ => return Err(bad("unknown step")),
            };
            steps.push(step);
        }
        Self::new(steps)
    }

    pub fn apply(&self, img: &GrayImage) -> Result<Processed, PostprocError> {
        let mut gray = img.clone();
        let mut mask: Option<BinaryMask> = None;
        let mut otsu_levels = Vec::new();
        for step in &self.steps {
            if let Some(m) = &mask {
                if !matches!(step, Step::FillHoles) {
                    gray = m.to_gray();
                }
            }
            match *step {
                Step::Threshold(t) => mask = Some(threshold(&gray, t)),
                Step::FillHoles => mask = mask.as_ref().map(fill_holes),
                Step::Gaussian { k, sigma } => {
                    gray = gaussian_blur(&gray, k, sigma)?;
                    mask = None;
                }
                Step::Median(k) => {
                    gray = median_blur(&gray, k)?;
                    mask = None;
                }
                Step::Otsu => {
                    let (t, m) = otsu_threshold(&gray)?;
                    otsu_levels.push(t);
                    mask = Some(m);
                }
            }
        }
        Ok(Processed { mask: mask.expect("recipes end in a binarization"), otsu_levels })
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, data: &[u8]) -> GrayImage {
        GrayImage::new(w, h, data.to_vec()).unwrap()
    }

    #[test]
    fn threshold_convention() {
        let m = threshold(&img(2, 1, &[116, 115]), 116);
        assert_eq!(m.data(), &[true, false]);
        assert_eq!(threshold(&img(2, 1, &[0, 9]), 0).solid_count(), 2);
        assert_eq!(threshold(&GrayImage::filled(3, 3, 254).unwrap(), 255).solid_count(), 0);
    }

    #[test]
    fn frame_hole_is_filled() {
        let m = BinaryMask::from_fn(5, 5, |r, c| !(r == 2 && c == 2)).unwrap();
        assert_eq!(fill_holes(&m).solid_count(), 25);
        let open = BinaryMask::from_fn(5, 5, |r, c| !(c == 2 && r <= 2)).unwrap();
        assert_eq!(fill_holes(&open), open);
        let solid = BinaryMask::filled(4, 4, true).unwrap();
        assert_eq!(fill_holes(&solid), solid);
    }

    #[test]
    fn diagonal_gap_does_not_open_a_hole() {
        // Pore at (1,1) touches the border pore at (0,0) only diagonally.
        let m = BinaryMask::from_fn(4, 4, |r, c| !((r, c) == (1, 1) || (r, c) == (0, 0))).unwrap();
        let f = fill_holes(&m);
        assert!(f.get(1, 1) && !f.get(0, 0));
    }

    #[test]
    fn wide_gaussian_is_near_uniform() {
        let k = gaussian_kernel(5, 20.0).unwrap();
        assert_eq!(k.len(), 25);
        // separable closed form: g(x) = exp(−x²/800), x = −2..=2
        let g: Vec<f64> = (-2i32..=2).map(|x| (-(x * x) as f64 / 800.0).exp()).collect();
        let total: f64 = g.iter().sum::<f64>().powi(2);
        for i in 0..5 {
            for j in 0..5 {
                assert!((k[i * 5 + j] - g[i] * g[j] / total).abs() < 1e-15);
            }
        }
        assert!(k.iter().all(|&w| (0.0398..=0.0403).contains(&w)));
        assert!((k[12] - 0.040200).abs() < 1e-6 && (k[0] - 0.039800).abs() < 1e-6);
        assert!(matches!(gaussian_kernel(4, 1.0), Err(PostprocError::EvenKernel(4))));
        let flat = GrayImage::filled(6, 4, 77).unwrap();
        assert_eq!(gaussian_blur(&flat, 5, 20.0).unwrap(), flat);
    }

    #[test]
    fn median_removes_salt() {
        let mut data = vec![10u8; 25];
        data[12] = 250;
        let out = median_blur(&img(5, 5, &data), 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 10));
        let noisy = img(3, 2, &[1, 2, 3, 4, 5, 6]);
        assert_eq!(median_blur(&noisy, 1).unwrap(), noisy);
        assert!(median_blur(&noisy, 2).is_err());
    }

    #[test]
    fn otsu_on_two_levels() {
        let data: Vec<u8> = (0..16).map(|i| if i < 8 { 0 } else { 255 }).collect();
        let (t, m) = otsu_threshold(&img(4, 4, &data)).unwrap();
        assert_eq!(t, 1);
        assert_eq!(m.solid_count(), 8);
        assert_eq!(otsu_threshold(&GrayImage::filled(3, 3, 7).unwrap()), Err(PostprocError::DegenerateImage));
    }

    #[test]
    fn wide_products_compare_correctly() {
        let big = u128::MAX;
        assert_eq!(widening_mul(big, 1), (0, big));
        assert_eq!(widening_mul(1 << 64, 1 << 64), (1, 0));
        assert_eq!(widening_mul(big, big), (big - 1, 1));
    }

    #[test]
    fn recipes_validate_and_round_trip() {
        let r = Recipe::alporas();
        assert_eq!(Recipe::parse(&r.to_string()).unwrap(), r);
        assert_eq!(Recipe::parse("# rock\nmedian = 3\n\notsu\n").unwrap(), Recipe::digitalrock());
        assert!(Recipe::parse("median=3").is_err());
        assert!(Recipe::parse("fill_holes\notsu").is_err());
        assert!(Recipe::parse("median=4\notsu").is_err());
        assert!(Recipe::parse("blur=3\notsu").is_err());
        assert!(Recipe::preset("nope").is_err());
    }
}
