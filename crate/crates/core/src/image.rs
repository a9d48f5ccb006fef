//! Raster types shared by every stage, and patch sampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SquaresRng;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("patch size {patch} does not fit inside a {width}x{height} image")]
    PatchTooLarge { patch: usize, width: usize, height: usize },
    #[error("patch count must be at least 1")]
    NoPatches,
    #[error("image dimensions {width}x{height} must both be even")]
    OddDimension { width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
}

/// 8-bit grayscale raster, row-major, 0 is darkest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::BufferSize { expected: width * height, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    /// Copy of the `height`×`width` window with top-left corner `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self, ImageError> {
        if row + height > self.height || col + width > self.width {
            return Err(ImageError::DimensionMismatch("crop window leaves the image"));
        }
        let mut data = Vec::with_capacity(width * height);
        for r in row..row + height {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + width]);
        }
        Self::new(width, height, data)
    }

    /// Image rotated by 90 degrees clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = vec![0u8; w * h];
        for r in 0..h {
            for c in 0..w {
                // (r, c) -> (c, h - 1 - r) in an h-wide image
                out[c * h + (h - 1 - r)] = self.data[r * w + c];
            }
        }
        Self { width: h, height: w, data: out }
    }

    pub fn transpose(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = vec![0u8; w * h];
        for r in 0..h {
            for c in 0..w {
                out[c * h + r] = self.data[r * w + c];
            }
        }
        Self { width: h, height: w, data: out }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as u64).sum::<u64>() as f64 / self.data.len() as f64
    }
}

/// Which phase of a two-phase medium a `true` mask entry denotes, or which one
/// a measurement refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Phase {
    #[default]
    Solid,
    Pore,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Solid => "solid",
            Phase::Pore => "pore",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "solid" => Some(Phase::Solid),
            "pore" | "void" => Some(Phase::Pore),
            _ => None,
        }
    }
}

/// Boolean raster, row-major, `true` = solid phase.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::BufferSize { expected: width * height, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, solid: bool) -> Result<Self, ImageError> {
        Self::new(width, height, vec![solid; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn solid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn solid_fraction(&self) -> f64 {
        self.solid_count() as f64 / self.data.len() as f64
    }

    pub fn invert(&self) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|v| !v).collect() }
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self, ImageError> {
        if row + height > self.height || col + width > self.width {
            return Err(ImageError::DimensionMismatch("crop window leaves the mask"));
        }
        Self::from_fn(width, height, |r, c| self.get(row + r, col + c))
    }

    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                out[c * h + (h - 1 - r)] = self.data[r * w + c];
            }
        }
        Self { width: h, height: w, data: out }
    }

    /// Each pixel replaced by a `factor`×`factor` block.
    pub fn replicate(&self, factor: usize) -> Self {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut data = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                data.push(self.get(r / factor, c / factor));
            }
        }
        Self { width: w, height: h, data }
    }

    /// Solid as 255, pore as 0.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        }
    }
}

/// Fixed-size square training patches cut from one exemplar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSet {
    patch_size: usize,
    count: usize,
    seed: u64,
    pixels: Vec<u8>,
}

impl PatchSet {
    pub fn from_raw(patch_size: usize, count: usize, seed: u64, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if count == 0 {
            return Err(ImageError::NoPatches);
        }
        if patch_size == 0 {
            return Err(ImageError::EmptyImage { width: 0, height: 0 });
        }
        let expected = count * patch_size * patch_size;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize { expected, actual: pixels.len() });
        }
        Ok(Self { patch_size, count, seed, pixels })
    }

    /// Bundle existing equally sized square images.
    pub fn from_images(images: &[GrayImage], seed: u64) -> Result<Self, ImageError> {
        let first = images.first().ok_or(ImageError::NoPatches)?;
        let size = first.width();
        let mut pixels = Vec::with_capacity(images.len() * size * size);
        for img in images {
            if img.width() != size || img.height() != size {
                return Err(ImageError::DimensionMismatch("patches must share one square size"));
            }
            pixels.extend_from_slice(img.data());
        }
        Self::from_raw(size, images.len(), seed, pixels)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn raw(&self) -> &[u8] {
        &self.pixels
    }

    pub fn patch_pixels(&self, index: usize) -> &[u8] {
        let n = self.patch_size * self.patch_size;
        &self.pixels[index * n..(index + 1) * n]
    }

    pub fn patch(&self, index: usize) -> GrayImage {
        GrayImage {
            width: self.patch_size,
            height: self.patch_size,
            data: self.patch_pixels(index).to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = GrayImage> + '_ {
        (0..self.count).map(|i| self.patch(i))
    }
}

/// Top-left corners used by [`extract_patches`], exposed so bounds can be
/// audited independently of the pixel copies.
pub fn patch_corners(
    width: usize,
    height: usize,
    patch_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>, ImageError> {
    if patch_size == 0 || patch_size > width.min(height) {
        return Err(ImageError::PatchTooLarge { patch: patch_size, width, height });
    }
    if count == 0 {
        return Err(ImageError::NoPatches);
    }
    let mut rng = SquaresRng::new(seed);
    let rows = (height - patch_size + 1) as u64;
    let cols = (width - patch_size + 1) as u64;
    Ok((0..count)
        .map(|_| {
            let r = rng.below(rows) as usize;
            let c = rng.below(cols) as usize;
            (r, c)
        })
        .collect())
}

/// Cut `count` random square windows (uniform corners, with replacement).
pub fn extract_patches(
    img: &GrayImage,
    patch_size: usize,
    count: usize,
    seed: u64,
) -> Result<PatchSet, ImageError> {
    let corners = patch_corners(img.width(), img.height(), patch_size, count, seed)?;
    let mut pixels = Vec::with_capacity(count * patch_size * patch_size);
    for (r, c) in corners {
        for row in r..r + patch_size {
            pixels.extend_from_slice(&img.row(row)[c..c + patch_size]);
        }
    }
    PatchSet::from_raw(patch_size, count, seed, pixels)
}

/// Keep every second pixel along both axes: `out(i, j) = in(2i, 2j)`.
pub fn subsample_stride2(img: &GrayImage) -> Result<GrayImage, ImageError> {
    let (w, h) = (img.width(), img.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(ImageError::OddDimension { width: w, height: h });
    }
    GrayImage::from_fn(w / 2, h / 2, |r, c| img.get(2 * r, 2 * c))
}
