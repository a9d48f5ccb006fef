//! Minkowski functionals of binary masks and mean ± deviation summaries.
//!
//! The chosen phase is treated as a union of closed unit squares, so two
//! pixels touching at a corner belong to one piece (8-connectivity) and the
//! Euler number is `V − E + F` of that cubical complex.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::image::{BinaryMask, Phase};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no samples to aggregate")]
    EmptySet,
    #[error("metric sets differ: {0}")]
    MetricMismatch(String),
    #[error("histogram needs at least one bin")]
    NoBins,
}

/// Integer measurements of one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MinkowskiCounts {
    /// Pixels of the phase.
    pub area: u64,
    /// Unit edges between the phase and its complement, frame excluded.
    pub perimeter: u64,
    pub vertices: u64,
    pub edges: u64,
    pub faces: u64,
}

impl MinkowskiCounts {
    pub fn euler(&self) -> i64 {
        self.vertices as i64 - self.edges as i64 + self.faces as i64
    }
}

/// Area, perimeter and Euler number per unit image area.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MinkowskiTriple {
    pub area_density: f64,
    pub perimeter_density: f64,
    pub euler_density: f64,
}

impl MinkowskiTriple {
    pub const NAMES: [&'static str; 3] = ["area", "perimeter", "euler"];

    pub fn values(&self) -> [f64; 3] {
        [self.area_density, self.perimeter_density, self.euler_density]
    }
}

pub fn minkowski_counts(mask: &BinaryMask, phase: Phase) -> MinkowskiCounts {
    let (w, h) = (mask.width(), mask.height());
    let target = phase == Phase::Solid;
    let inside = |r: usize, c: usize| mask.get(r, c) == target;
    let mut k = MinkowskiCounts::default();
    for r in 0..h {
        for c in 0..w {
            let here = inside(r, c);
            k.faces += here as u64;
            if c + 1 < w && here != inside(r, c + 1) {
                k.perimeter += 1;
            }
            if r + 1 < h && here != inside(r + 1, c) {
                k.perimeter += 1;
            }
        }
    }
    k.area = k.faces;
    // pixel (r, c) if it exists and is in the phase
    let at = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && inside(r as usize, c as usize);
    for vr in 0..=h as isize {
        for vc in 0..=w as isize {
            if at(vr - 1, vc - 1) || at(vr - 1, vc) || at(vr, vc - 1) || at(vr, vc) {
                k.vertices += 1;
            }
            // horizontal edge from (vr, vc) to (vr, vc+1)
            if (vc as usize) < w && (at(vr - 1, vc) || at(vr, vc)) {
                k.edges += 1;
            }
            // vertical edge from (vr, vc) to (vr+1, vc)
            if (vr as usize) < h && (at(vr, vc - 1) || at(vr, vc)) {
                k.edges += 1;
            }
        }
    }
    k
}

pub fn minkowski(mask: &BinaryMask, phase: Phase) -> MinkowskiTriple {
    let k = minkowski_counts(mask, phase);
    let s = (mask.width() * mask.height()) as f64;
    MinkowskiTriple {
        area_density: k.area as f64 / s,
        perimeter_density: k.perimeter as f64 / s,
        euler_density: k.euler() as f64 / s,
    }
}

// ---------------------------------------------------------------------------
// Aggregation

/// Mean and population standard deviation of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl Stats {
    pub fn n(&self) -> usize {
        self.values.len()
    }
}

pub fn aggregate(values: &[f64]) -> Result<Stats, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Stats { mean, std: libm::sqrt(var), values: values.to_vec() })
}

/// Named per-metric statistics of one sample set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleStats {
    pub metrics: BTreeMap<String, Stats>,
}

impl SampleStats {
    /// One entry per name; `rows[i][j]` is metric `j` of sample `i`.
    pub fn from_rows(names: &[&str], rows: &[Vec<f64>]) -> Result<Self, MetricError> {
        let mut metrics = BTreeMap::new();
        for (j, name) in names.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            metrics.insert(name.to_string(), aggregate(&col)?);
        }
        Ok(Self { metrics })
    }

    pub fn from_triples(samples: &[MinkowskiTriple]) -> Result<Self, MetricError> {
        let rows: Vec<Vec<f64>> = samples.iter().map(|t| t.values().to_vec()).collect();
        Self::from_rows(&MinkowskiTriple::NAMES, &rows)
    }

    pub fn get(&self, name: &str) -> Option<&Stats> {
        self.metrics.get(name)
    }
}

/// One histogram bin shared by two sample sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count_real: u64,
    pub count_generated: u64,
}

/// Equal-width bins over the pooled range of both sets; the last bin is
/// closed on the right. A zero-width range gets one bin of width 1 around
/// the value.
pub fn paired_histogram(real: &[f64], generated: &[f64], bins: usize) -> Result<Vec<Bin>, MetricError> {
    if bins == 0 {
        return Err(MetricError::NoBins);
    }
    let pooled = real.iter().chain(generated);
    let lo = pooled.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = pooled.cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(MetricError::EmptySet);
    }
    let (lo, hi, bins) = if hi > lo { (lo, hi, bins) } else { (lo - 0.5, lo + 0.5, 1) };
    let width = (hi - lo) / bins as f64;
    let index = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin {
            left: lo + i as f64 * width,
            right: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count_real: 0,
            count_generated: 0,
        })
        .collect();
    for &v in real {
        out[index(v)].count_real += 1;
    }
    for &v in generated {
        out[index(v)].count_generated += 1;
    }
    Ok(out)
}

/// Side-by-side statistics of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub real: Stats,
    pub generated: Stats,
    /// `generated.mean − real.mean`
    pub delta: f64,
    /// `delta / |real.mean|`, or `None` when the real mean is zero.
    pub relative_delta: Option<f64>,
    pub histogram: Vec<Bin>,
}

pub const DEFAULT_BINS: usize = 20;

pub fn compare_report(
    real: &SampleStats,
    generated: &SampleStats,
    bins: usize,
) -> Result<BTreeMap<String, Comparison>, MetricError> {
    let a: Vec<&String> = real.metrics.keys().collect();
    let b: Vec<&String> = generated.metrics.keys().collect();
    if a != b {
        return Err(MetricError::MetricMismatch(alloc::format!("{a:?} vs {b:?}")));
    }
    let mut out = BTreeMap::new();
    for (name, r) in &real.metrics {
        let g = &generated.metrics[name];
        let delta = g.mean - r.mean;
        out.insert(
            name.clone(),
            Comparison {
                real: r.clone(),
                generated: g.clone(),
                delta,
                relative_delta: (r.mean != 0.0).then(|| delta / libm::fabs(r.mean)),
                histogram: paired_histogram(&r.values, &g.values, bins)?,
            },
        );
    }
    Ok(out)
}

/// Sizes of 8-connected components of `true` pixels, in scan order.
pub fn component_sizes_8(mask: &BinaryMask) -> Vec<usize> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut n = 0;
        while let Some(i) = stack.pop() {
            n += 1;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if mask.data()[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        sizes.push(n);
    }
    sizes
}
