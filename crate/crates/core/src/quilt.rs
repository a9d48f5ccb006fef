//! Minimum-error-boundary quilting.
//!
//! Two patches placed side by side with an overlap of `ω` columns are cut
//! along the 8-connected top-to-bottom path through the overlap that
//! minimizes the summed squared intensity difference. Left of the path the
//! pixels come from the left patch, on and right of it from the right patch.
//! Grids of patches are merged the same way, with an independent horizontal
//! cut against the patch above.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::{GrayImage, PatchSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QuiltError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("overlap {overlap} must satisfy 1 <= overlap < {patch}")]
    BadOverlap { overlap: usize, patch: usize },
    #[error("grid needs {needed} patches, only {available} available")]
    NotEnoughPatches { needed: usize, available: usize },
    #[error("patch source failed: {0}")]
    Source(alloc::string::String),
}

/// Per-row column index of a monotone cut through an overlap band.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeamPath {
    columns: Vec<usize>,
    band_width: usize,
}

impl SeamPath {
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn band_width(&self) -> usize {
        self.band_width
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// In-band and 8-connected.
    pub fn is_valid(&self) -> bool {
        self.columns.iter().all(|&j| j < self.band_width)
            && self.columns.windows(2).all(|w| w[0].abs_diff(w[1]) <= 1)
    }
}

/// Dynamic programming tables over an `rows`×`width` overlap band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapErrorField {
    pub rows: usize,
    pub width: usize,
    /// Squared differences.
    pub error: Vec<i64>,
    /// Cheapest accumulated error of any path ending at each cell.
    pub cumulative: Vec<i64>,
    /// Column of the predecessor in the previous row (unused in row 0).
    pub back: Vec<usize>,
}

impl OverlapErrorField {
    pub fn compute(x_band: &[u8], y_band: &[u8], rows: usize, width: usize) -> Result<Self, QuiltError> {
        if rows == 0 || width == 0 {
            return Err(QuiltError::ShapeMismatch("overlap band must be non-empty"));
        }
        if x_band.len() != rows * width || y_band.len() != rows * width {
            return Err(QuiltError::ShapeMismatch("bands must both be rows x width"));
        }
        let error: Vec<i64> = x_band
            .iter()
            .zip(y_band)
            .map(|(&a, &b)| {
                let d = a as i64 - b as i64;
                d * d
            })
            .collect();
        let mut cumulative = vec![0i64; rows * width];
        let mut back = vec![0usize; rows * width];
        cumulative[..width].copy_from_slice(&error[..width]);
        for i in 1..rows {
            let (prev_rows, cur) = cumulative.split_at_mut(i * width);
            let prev = &prev_rows[(i - 1) * width..];
            for j in 0..width {
                // candidates in increasing column order so the first minimum wins ties
                let lo = j.saturating_sub(1);
                let hi = (j + 1).min(width - 1);
                let mut best = lo;
                for k in lo + 1..=hi {
                    if prev[k] < prev[best] {
                        best = k;
                    }
                }
                cur[j] = error[i * width + j] + prev[best];
                back[i * width + j] = best;
            }
        }
        Ok(Self { rows, width, error, cumulative, back })
    }

    /// Backtrack from the smallest final entry (first one on ties).
    pub fn trace(&self) -> (SeamPath, i64) {
        let last = &self.cumulative[(self.rows - 1) * self.width..];
        let mut p = 0;
        for j in 1..self.width {
            if last[j] < last[p] {
                p = j;
            }
        }
        let total = last[p];
        let mut columns = vec![0usize; self.rows];
        for i in (0..self.rows).rev() {
            columns[i] = p;
            if i > 0 {
                p = self.back[i * self.width + p];
            }
        }
        (SeamPath { columns, band_width: self.width }, total)
    }
}

/// Minimum-error monotone path through two equally shaped bands
/// (row-major, `rows`×`width`). Returns the path and its summed error.
pub fn seam(x_band: &[u8], y_band: &[u8], rows: usize, width: usize) -> Result<(SeamPath, i64), QuiltError> {
    Ok(OverlapErrorField::compute(x_band, y_band, rows, width)?.trace())
}

fn check_overlap(overlap: usize, patch: usize) -> Result<(), QuiltError> {
    if overlap == 0 || overlap >= patch {
        return Err(QuiltError::BadOverlap { overlap, patch });
    }
    Ok(())
}

/// Merge two N×N images side by side into an N×(2N−ω) image.
pub fn quilt_pair_horizontal(x: &GrayImage, y: &GrayImage, overlap: usize) -> Result<GrayImage, QuiltError> {
    let n = x.width();
    if x.height() != n || y.width() != n || y.height() != n {
        return Err(QuiltError::ShapeMismatch("both images must be the same square size"));
    }
    check_overlap(overlap, n)?;
    let mut xb = Vec::with_capacity(n * overlap);
    let mut yb = Vec::with_capacity(n * overlap);
    for i in 0..n {
        xb.extend_from_slice(&x.row(i)[n - overlap..]);
        yb.extend_from_slice(&y.row(i)[..overlap]);
    }
    let (path, _) = seam(&xb, &yb, n, overlap)?;
    let out_w = 2 * n - overlap;
    let mut data = Vec::with_capacity(n * out_w);
    for (i, &p) in path.columns().iter().enumerate() {
        data.extend_from_slice(&x.row(i)[..n - overlap + p]);
        data.extend_from_slice(&y.row(i)[p..]);
    }
    GrayImage::new(out_w, n, data).map_err(|_| QuiltError::ShapeMismatch("output size"))
}

/// Output extent of a `count`-long run of patches of size `patch` sharing
/// `overlap` pixels pairwise.
pub fn grid_extent(count: usize, patch: usize, overlap: usize) -> usize {
    count * patch - (count - 1) * overlap
}

/// Assemble a `rows`×`cols` grid, pulling patches from `next` in raster order.
///
/// Each patch is cut against the canvas already laid down: a vertical seam
/// over its left ω columns and a horizontal seam over its top ω rows. A pixel
/// of the new patch is written when it lies on the new side of both seams.
pub fn assemble_grid_with<F>(rows: usize, cols: usize, overlap: usize, mut next: F) -> Result<GrayImage, QuiltError>
where
    F: FnMut(usize, usize) -> Result<GrayImage, QuiltError>,
{
    if rows == 0 || cols == 0 {
        return Err(QuiltError::ShapeMismatch("grid must have at least one row and column"));
    }
    let mut canvas: Option<(usize, Vec<u8>, usize, usize)> = None;
    for r in 0..rows {
        for c in 0..cols {
            let patch = next(r, c)?;
            let n = patch.width();
            if patch.height() != n {
                return Err(QuiltError::ShapeMismatch("patches must be square"));
            }
            let (size, buf, out_w, _out_h) = canvas.get_or_insert_with(|| {
                let w = grid_extent(cols, n, overlap.min(n));
                let h = grid_extent(rows, n, overlap.min(n));
                (n, vec![0u8; w * h], w, h)
            });
            if *size != n {
                return Err(QuiltError::ShapeMismatch("all patches must share one size"));
            }
            if rows > 1 || cols > 1 {
                check_overlap(overlap, n)?;
            }
            let out_w = *out_w;
            let step = n - overlap;
            let (oy, ox) = (r * step, c * step);

            let left: Vec<usize> = if c > 0 {
                let mut a = Vec::with_capacity(n * overlap);
                let mut b = Vec::with_capacity(n * overlap);
                for i in 0..n {
                    let base = (oy + i) * out_w + ox;
                    a.extend_from_slice(&buf[base..base + overlap]);
                    b.extend_from_slice(&patch.row(i)[..overlap]);
                }
                seam(&a, &b, n, overlap)?.0.columns
            } else {
                vec![0; n]
            };
            let top: Vec<usize> = if r > 0 {
                // transpose so that the cut runs left to right
                let mut a = Vec::with_capacity(n * overlap);
                let mut b = Vec::with_capacity(n * overlap);
                for j in 0..n {
                    for k in 0..overlap {
                        a.push(buf[(oy + k) * out_w + ox + j]);
                        b.push(patch.get(k, j));
                    }
                }
                seam(&a, &b, n, overlap)?.0.columns
            } else {
                vec![0; n]
            };

            for i in 0..n {
                let row = patch.row(i);
                let base = (oy + i) * out_w + ox;
                for j in left[i]..n {
                    if i >= top[j] {
                        buf[base + j] = row[j];
                    }
                }
            }
        }
    }
    let (_, buf, w, h) = canvas.expect("grid has at least one cell");
    GrayImage::new(w, h, buf).map_err(|_| QuiltError::ShapeMismatch("output size"))
}

/// Assemble a grid from the first `rows·cols` patches of a set.
pub fn assemble_grid(patches: &PatchSet, rows: usize, cols: usize, overlap: usize) -> Result<GrayImage, QuiltError> {
    let needed = rows * cols;
    if patches.len() < needed {
        return Err(QuiltError::NotEnoughPatches { needed, available: patches.len() });
    }
    assemble_grid_with(rows, cols, overlap, |r, c| Ok(patches.patch(r * cols + c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SquaresRng;

    fn random_image(n: usize, rng: &mut SquaresRng) -> GrayImage {
        GrayImage::from_fn(n, n, |_, _| rng.below(256) as u8).unwrap()
    }

    #[test]
    fn identical_bands_give_zero_path() {
        let band = [3u8, 9, 27, 5, 5, 5, 1, 2, 3];
        let (path, err) = seam(&band, &band, 3, 3).unwrap();
        assert_eq!(err, 0);
        assert_eq!(path.columns(), &[0, 0, 0]);
    }

    #[test]
    fn single_column_band() {
        let x = [10u8, 0, 255];
        let y = [7u8, 4, 0];
        let (path, err) = seam(&x, &y, 3, 1).unwrap();
        assert_eq!(path.columns(), &[0, 0, 0]);
        assert_eq!(err, 9 + 16 + 255 * 255);
    }

    #[test]
    fn shape_mismatch() {
        assert!(seam(&[1, 2], &[1, 2, 3], 1, 2).is_err());
        assert!(seam(&[], &[], 0, 2).is_err());
    }

    #[test]
    fn pair_size_law() {
        let mut rng = SquaresRng::new(1);
        let x = random_image(64, &mut rng);
        let y = random_image(64, &mut rng);
        let z = quilt_pair_horizontal(&x, &y, 8).unwrap();
        assert_eq!((z.height(), z.width()), (64, 120));
    }

    #[test]
    fn zero_error_overlap_extends_left_image() {
        // y starts with exactly the last ω columns of x, so every path costs 0
        let mut rng = SquaresRng::new(2);
        let x = random_image(16, &mut rng);
        let tail = random_image(16, &mut rng);
        let y = GrayImage::from_fn(16, 16, |r, c| if c < 5 { x.get(r, 11 + c) } else { tail.get(r, c) }).unwrap();
        let z = quilt_pair_horizontal(&x, &y, 5).unwrap();
        for i in 0..16 {
            let mut expected = x.row(i).to_vec();
            expected.extend_from_slice(&y.row(i)[5..]);
            assert_eq!(z.row(i), &expected[..]);
        }
    }

    #[test]
    fn self_pair_of_periodic_image() {
        let x = GrayImage::from_fn(12, 12, |r, c| ((c % 4) * 60 + r) as u8).unwrap();
        let z = quilt_pair_horizontal(&x, &x, 4).unwrap();
        for i in 0..12 {
            let mut expected = x.row(i).to_vec();
            expected.extend_from_slice(&x.row(i)[4..]);
            assert_eq!(z.row(i), &expected[..]);
        }
    }

    #[test]
    fn bad_overlap() {
        let x = GrayImage::filled(8, 8, 0).unwrap();
        assert!(matches!(quilt_pair_horizontal(&x, &x, 0), Err(QuiltError::BadOverlap { .. })));
        assert!(matches!(quilt_pair_horizontal(&x, &x, 8), Err(QuiltError::BadOverlap { .. })));
        let y = GrayImage::filled(7, 7, 0).unwrap();
        assert!(matches!(quilt_pair_horizontal(&x, &y, 2), Err(QuiltError::ShapeMismatch(_))));
    }

    #[test]
    fn single_cell_grid_is_the_patch() {
        let mut rng = SquaresRng::new(3);
        let p = random_image(10, &mut rng);
        let set = PatchSet::from_images(&[p.clone()], 0).unwrap();
        assert_eq!(assemble_grid(&set, 1, 1, 3).unwrap(), p);
    }

    #[test]
    fn one_by_two_grid_matches_pair() {
        let mut rng = SquaresRng::new(4);
        let a = random_image(12, &mut rng);
        let b = random_image(12, &mut rng);
        let set = PatchSet::from_images(&[a.clone(), b.clone()], 0).unwrap();
        assert_eq!(assemble_grid(&set, 1, 2, 4).unwrap(), quilt_pair_horizontal(&a, &b, 4).unwrap());
    }

    #[test]
    fn seven_by_seven_of_64_is_400() {
        let mut rng = SquaresRng::new(5);
        let imgs: Vec<GrayImage> = (0..49).map(|_| random_image(64, &mut rng)).collect();
        let set = PatchSet::from_images(&imgs, 0).unwrap();
        let out = assemble_grid(&set, 7, 7, 8).unwrap();
        assert_eq!((out.width(), out.height()), (400, 400));
    }

    #[test]
    fn not_enough_patches() {
        let set = PatchSet::from_images(&[GrayImage::filled(8, 8, 1).unwrap()], 0).unwrap();
        assert!(matches!(assemble_grid(&set, 2, 2, 2), Err(QuiltError::NotEnoughPatches { .. })));
    }

    #[test]
    fn grid_of_constant_patches_uses_only_their_values() {
        let imgs: Vec<GrayImage> = (0..6).map(|i| GrayImage::filled(9, 9, 10 * i as u8 + 5).unwrap()).collect();
        let set = PatchSet::from_images(&imgs, 0).unwrap();
        let out = assemble_grid(&set, 2, 3, 3).unwrap();
        assert_eq!((out.width(), out.height()), (21, 15));
        assert!(out.data().iter().all(|v| (v - 5) % 10 == 0 && *v <= 55));
        // non-overlap interiors keep their own patch
        assert_eq!(out.get(14, 20), 55);
        assert_eq!(out.get(0, 0), 5);
    }
}
