//! Synthetic two-phase exemplar: overlapping disks on a background.

use alloc::vec;

use crate::image::GrayImage;
use crate::rng::SquaresRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskField {
    pub size: usize,
    /// Fraction of the area covered by disks that the generator aims for.
    pub target_fraction: f64,
    pub min_radius: f64,
    pub max_radius: f64,
}

impl Default for DiskField {
    fn default() -> Self {
        Self { size: 256, target_fraction: 0.5, min_radius: 2.5, max_radius: 5.0 }
    }
}

impl DiskField {
    /// Disks are solid (255), background is pore (0). Disks wrap around the
    /// edges so the field has no boundary bias.
    pub fn render(&self, seed: u64) -> GrayImage {
        let n = self.size.max(1);
        let mut rng = SquaresRng::new(seed);
        let mut solid = vec![false; n * n];
        let mut covered = 0usize;
        let target = (self.target_fraction.clamp(0.0, 1.0) * (n * n) as f64) as usize;
        while covered < target {
            let cy = rng.next_f64() * n as f64;
            let cx = rng.next_f64() * n as f64;
            let rad = self.min_radius + (self.max_radius - self.min_radius) * rng.next_f64();
            let reach = libm::ceil(rad) as isize;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let py = libm::floor(cy) as isize + dy;
                    let px = libm::floor(cx) as isize + dx;
                    let fy = py as f64 + 0.5 - cy;
                    let fx = px as f64 + 0.5 - cx;
                    if fy * fy + fx * fx > rad * rad {
                        continue;
                    }
                    let r = py.rem_euclid(n as isize) as usize;
                    let c = px.rem_euclid(n as isize) as usize;
                    if !solid[r * n + c] {
                        solid[r * n + c] = true;
                        covered += 1;
                    }
                }
            }
        }
        GrayImage::new(n, n, solid.into_iter().map(|s| if s { 255 } else { 0 }).collect())
            .expect("size is at least one")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hits_target_fraction_and_is_binary() {
        let img = DiskField::default().render(1);
        let solid = img.data().iter().filter(|&&v| v == 255).count();
        assert!(img.data().iter().all(|&v| v == 0 || v == 255));
        let frac = solid as f64 / (256.0 * 256.0);
        assert!((0.5..0.55).contains(&frac), "{frac}");
    }

    #[test]
    fn deterministic() {
        let f = DiskField { size: 64, ..Default::default() };
        assert_eq!(f.render(3), f.render(3));
        assert_ne!(f.render(3), f.render(4));
    }
}
