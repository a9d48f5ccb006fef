//! Effective elastic constants of a periodic two-phase pixel cell.
//!
//! Every pixel is a bilinear quadrilateral with an isotropic law; pores are
//! a soft solid `contrast · E_solid` with the same Poisson ratio. The
//! fluctuation field is periodic, one node is pinned, and each of the three
//! unit macroscopic strains is solved by Jacobi-preconditioned conjugate
//! gradients, deflated by the rigid-body modes of each solid island.
//! Strains use engineering shear, so `C_eff` is in Voigt form.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::image::BinaryMask;
use crate::metrology::{MetricError, SampleStats};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HomogError {
    #[error("invalid material: {0}")]
    BadMaterial(&'static str),
    #[error("tolerance must lie in (0, 1e-3], got {0}")]
    BadTolerance(f64),
    #[error("conjugate gradients broke down; the system is singular")]
    SingularSystem,
    #[error("no convergence after {0} iterations")]
    NotConverged(usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Plane {
    #[default]
    Stress,
    Strain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material2D {
    pub e_solid: f64,
    pub nu_solid: f64,
    /// Pore stiffness relative to the solid.
    pub contrast: f64,
    pub plane: Plane,
}

impl Default for Material2D {
    fn default() -> Self {
        Self { e_solid: 1.0, nu_solid: 0.3, contrast: 1e-6, plane: Plane::Stress }
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;

impl Material2D {
    pub fn validate(&self) -> Result<(), HomogError> {
        if !(self.e_solid > 0.0) || !self.e_solid.is_finite() {
            return Err(HomogError::BadMaterial("E_solid must be positive"));
        }
        if !(0.0..0.5).contains(&self.nu_solid) {
            return Err(HomogError::BadMaterial("nu_solid must lie in [0, 0.5)"));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(HomogError::BadMaterial("contrast must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Constitutive matrix of a phase with Young's modulus `e`.
    pub fn stiffness(&self, e: f64) -> [[f64; 3]; 3] {
        let nu = self.nu_solid;
        match self.plane {
            Plane::Stress => {
                let k = e / (1.0 - nu * nu);
                [[k, k * nu, 0.0], [k * nu, k, 0.0], [0.0, 0.0, k * (1.0 - nu) / 2.0]]
            }
            Plane::Strain => {
                let k = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
                [[k * (1.0 - nu), k * nu, 0.0], [k * nu, k * (1.0 - nu), 0.0], [0.0, 0.0, k * (1.0 - 2.0 * nu) / 2.0]]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveElasticity {
    pub c_eff: [[f64; 3]; 3],
    /// `1/S₁₁` with `S = C_eff⁻¹`
    pub e: f64,
    /// `−S₂₁/S₁₁`
    pub nu: f64,
    /// `1/S₂₂`, the modulus along rows of the image.
    pub e_y: f64,
    /// `C₁₁/C₂₂`
    pub anisotropy: f64,
    /// Largest final scaled relative residual over the three load cases.
    pub residual: f64,
    pub iterations: [usize; 3],
}

/// Element matrices of a unit square for one constitutive matrix: the
/// stiffness `∫BᵀDB` and the strain load `∫BᵀD`.
struct Element {
    k: [[f64; 8]; 8],
    g: [[f64; 3]; 8],
    d: [[f64; 3]; 3],
}

impl Element {
    fn new(d: [[f64; 3]; 3]) -> Self {
        let gp = [0.5 - 0.5 / libm::sqrt(3.0), 0.5 + 0.5 / libm::sqrt(3.0)];
        let mut k = [[0.0; 8]; 8];
        let mut g = [[0.0; 3]; 8];
        for &xi in &gp {
            for &eta in &gp {
                // node order (0,0), (1,0), (1,1), (0,1) in (x, y)
                let dx = [-(1.0 - eta), 1.0 - eta, eta, -eta];
                let dy = [-(1.0 - xi), -xi, xi, 1.0 - xi];
                let mut b = [[0.0; 8]; 3];
                for n in 0..4 {
                    b[0][2 * n] = dx[n];
                    b[1][2 * n + 1] = dy[n];
                    b[2][2 * n] = dy[n];
                    b[2][2 * n + 1] = dx[n];
                }
                let mut db = [[0.0; 8]; 3];
                for i in 0..3 {
                    for j in 0..8 {
                        db[i][j] = (0..3).map(|l| d[i][l] * b[l][j]).sum();
                    }
                }
                for i in 0..8 {
                    for j in 0..8 {
                        k[i][j] += 0.25 * (0..3).map(|l| b[l][i] * db[l][j]).sum::<f64>();
                    }
                    for j in 0..3 {
                        g[i][j] += 0.25 * (0..3).map(|l| b[l][i] * d[l][j]).sum::<f64>();
                    }
                }
            }
        }
        Self { k, g, d }
    }
}

/// Matrix-free periodic operator.
struct Cell<'a> {
    nx: usize,
    ny: usize,
    solid: &'a [bool],
    phases: [Element; 2],
}

impl Cell<'_> {
    fn ndof(&self) -> usize {
        2 * self.nx * self.ny
    }

    fn element(&self, e: usize) -> &Element {
        &self.phases[self.solid[e] as usize]
    }

    /// Global dofs of element `(r, c)` in local order.
    #[inline]
    fn dofs(&self, r: usize, c: usize) -> [usize; 8] {
        let r1 = if r + 1 == self.ny { 0 } else { r + 1 };
        let c1 = if c + 1 == self.nx { 0 } else { c + 1 };
        let nodes = [r * self.nx + c, r * self.nx + c1, r1 * self.nx + c1, r1 * self.nx + c];
        let mut d = [0; 8];
        for (i, n) in nodes.iter().enumerate() {
            d[2 * i] = 2 * n;
            d[2 * i + 1] = 2 * n + 1;
        }
        d
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.ny {
            for c in 0..self.nx {
                let dofs = self.dofs(r, c);
                // K is symmetric, so row j doubles as column j
                let k = &self.element(r * self.nx + c).k;
                let mut acc = [0.0; 8];
                for j in 0..8 {
                    let uj = u[dofs[j]];
                    for i in 0..8 {
                        acc[i] += k[j][i] * uj;
                    }
                }
                for i in 0..8 {
                    out[dofs[i]] += acc[i];
                }
            }
        }
        out[0] = 0.0;
        out[1] = 0.0;
    }

    /// `K v` for a sparse `v`, visiting only the elements it touches.
    fn apply_sparse(&self, v: &SparseCol) -> SparseCol {
        let (nx, ny) = (self.nx, self.ny);
        let mut dense = vec![0.0; self.ndof()];
        for &(d, x) in v {
            dense[d] = x;
        }
        let mut elements: Vec<usize> = Vec::new();
        for &(d, _) in v {
            let (r, c) = (d / 2 / nx, d / 2 % nx);
            for (rr, cc) in [(r, c), (r, (c + nx - 1) % nx), ((r + ny - 1) % ny, c), ((r + ny - 1) % ny, (c + nx - 1) % nx)] {
                elements.push(rr * nx + cc);
            }
        }
        elements.sort_unstable();
        elements.dedup();
        let mut out: BTreeMap<usize, f64> = BTreeMap::new();
        for e in elements {
            let dofs = self.dofs(e / nx, e % nx);
            let k = &self.element(e).k;
            for i in 0..8 {
                let acc: f64 = (0..8).map(|j| k[i][j] * dense[dofs[j]]).sum();
                *out.entry(dofs[i]).or_insert(0.0) += acc;
            }
        }
        out.remove(&0);
        out.remove(&1);
        out.into_iter().filter(|&(_, x)| x != 0.0).collect()
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.ndof()];
        for r in 0..self.ny {
            for c in 0..self.nx {
                let dofs = self.dofs(r, c);
                let k = &self.element(r * self.nx + c).k;
                // entries with coinciding dofs (one-pixel-wide cells) add up
                for i in 0..8 {
                    for j in 0..8 {
                        if dofs[i] == dofs[j] {
                            diag[dofs[i]] += k[i][j];
                        }
                    }
                }
            }
        }
        diag
    }

    /// Right-hand side `−Σ_e ∫BᵀD ε̄` for macroscopic strain `strain`.
    fn load(&self, strain: [f64; 3]) -> Vec<f64> {
        let mut f = vec![0.0; self.ndof()];
        for r in 0..self.ny {
            for c in 0..self.nx {
                let dofs = self.dofs(r, c);
                let g = &self.element(r * self.nx + c).g;
                for i in 0..8 {
                    f[dofs[i]] -= (0..3).map(|j| g[i][j] * strain[j]).sum::<f64>();
                }
            }
        }
        f[0] = 0.0;
        f[1] = 0.0;
        f
    }

    /// Cell average of the constitutive matrix.
    fn mean_d(&self) -> [[f64; 3]; 3] {
        let solid = self.solid.iter().filter(|&&s| s).count() as f64;
        let a = (self.nx * self.ny) as f64;
        let (d0, d1) = (&self.phases[0].d, &self.phases[1].d);
        core::array::from_fn(|i| core::array::from_fn(|j| ((a - solid) * d0[i][j] + solid * d1[i][j]) / a))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sparse vector as `(dof, value)` pairs.
type SparseCol = Vec<(usize, f64)>;

/// Coarse space spanned by the rigid-body modes of every edge-connected
/// solid island. Islands floating in the soft phase give eigenvalues of
/// order `contrast`, which Jacobi scaling cannot see and which a residual
/// test alone would accept unresolved.
struct Deflation {
    z: Vec<SparseCol>,
    kz: Vec<SparseCol>,
    /// Cholesky factor of `ZᵀKZ` in envelope storage: row `i` holds
    /// columns `first[i]..=i` at `start[i]..`.
    first: Vec<usize>,
    start: Vec<usize>,
    chol: Vec<f64>,
}

/// Largest envelope kept; beyond it the solve runs without deflation.
const MAX_ENVELOPE: usize = 1 << 24;

impl Deflation {
    fn new(cell: &Cell) -> Option<Self> {
        let z = rigid_modes(cell);
        let m = z.len();
        if m == 0 {
            return None;
        }
        let n = cell.ndof();
        let kz: Vec<SparseCol> = z.iter().map(|col| cell.apply_sparse(col)).collect();
        let mut by_dof: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, col) in z.iter().enumerate() {
            for &(d, v) in col {
                by_dof[d].push((i, v));
            }
        }
        // lower triangle of E = ZᵀKZ, row by row
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
        for (j, col) in kz.iter().enumerate() {
            for &(d, v) in col {
                for &(i, zv) in &by_dof[d] {
                    if j <= i {
                        *rows[i].entry(j).or_insert(0.0) += zv * v;
                    }
                }
            }
        }
        let first: Vec<usize> = rows.iter().enumerate().map(|(i, r)| r.keys().next().copied().unwrap_or(i)).collect();
        let mut start = Vec::with_capacity(m + 1);
        let mut total = 0;
        for i in 0..m {
            start.push(total);
            total += i - first[i] + 1;
        }
        start.push(total);
        if total > MAX_ENVELOPE {
            return None;
        }
        let mut chol = vec![0.0; total];
        for (i, row) in rows.iter().enumerate() {
            for (&j, &v) in row {
                chol[start[i] + j - first[i]] = v;
            }
        }
        let mut d = Self { z, kz, first, start, chol };
        d.factor()?;
        Some(d)
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.chol[self.start[i] + j - self.first[i]]
    }

    /// In-place envelope Cholesky; `None` when a pivot collapses, which
    /// signals dependent columns.
    fn factor(&mut self) -> Option<()> {
        for i in 0..self.first.len() {
            let fi = self.first[i];
            for j in fi..=i {
                let lo = fi.max(self.first[j]);
                let mut s = self.at(i, j);
                let (ri, rj) = (self.start[i] - fi, self.start[j] - self.first[j]);
                for k in lo..j {
                    s -= self.chol[ri + k] * self.chol[rj + k];
                }
                if j < i {
                    self.chol[ri + j] = s / self.at(j, j);
                } else {
                    let diag = self.at(i, i);
                    if !(s > 1e-10 * diag) {
                        return None;
                    }
                    self.chol[ri + i] = libm::sqrt(s);
                }
            }
        }
        Some(())
    }

    /// `E⁻¹ w` in place.
    fn coarse_solve(&self, w: &mut [f64]) {
        let m = w.len();
        for i in 0..m {
            let (fi, ri) = (self.first[i], self.start[i] - self.first[i]);
            let s: f64 = (fi..i).map(|k| self.chol[ri + k] * w[k]).sum();
            w[i] = (w[i] - s) / self.chol[ri + i];
        }
        for i in (0..m).rev() {
            let (fi, ri) = (self.first[i], self.start[i] - self.first[i]);
            w[i] /= self.chol[ri + i];
            let wi = w[i];
            for k in fi..i {
                w[k] -= self.chol[ri + k] * wi;
            }
        }
    }

    fn sparse_dots(cols: &[SparseCol], v: &[f64]) -> Vec<f64> {
        cols.iter().map(|c| c.iter().map(|&(d, x)| x * v[d]).sum()).collect()
    }

    fn add_z(&self, mu: &[f64], scale: f64, out: &mut [f64]) {
        for (col, &m) in self.z.iter().zip(mu) {
            for &(d, v) in col {
                out[d] += scale * m * v;
            }
        }
    }

    /// `Z E⁻¹ Zᵀ f`
    fn coarse_solution(&self, f: &[f64]) -> Vec<f64> {
        let mut w = Self::sparse_dots(&self.z, f);
        self.coarse_solve(&mut w);
        let mut x = vec![0.0; f.len()];
        self.add_z(&w, 1.0, &mut x);
        x
    }

    /// `v ← v − Z E⁻¹ (KZ)ᵀ v`, making `v` K-orthogonal to the coarse space.
    fn project(&self, v: &mut [f64]) {
        let mut w = Self::sparse_dots(&self.kz, v);
        self.coarse_solve(&mut w);
        self.add_z(&w, -1.0, v);
    }
}

/// Unit-norm translations, plus a rotation for islands that do not wrap
/// around the cell, of every edge-connected solid island. Small islands
/// come first in scan order and large ones last, which keeps the envelope
/// of `ZᵀKZ` narrow.
fn rigid_modes(cell: &Cell) -> Vec<SparseCol> {
    let (nx, ny) = (cell.nx, cell.ny);
    let mut island = vec![usize::MAX; nx * ny];
    let mut islands: Vec<Vec<(usize, isize, isize)>> = Vec::new();
    for start in 0..nx * ny {
        if !cell.solid[start] || island[start] != usize::MAX {
            continue;
        }
        let id = islands.len();
        island[start] = id;
        let mut members = vec![(start, (start / nx) as isize, (start % nx) as isize)];
        let mut head = 0;
        while head < members.len() {
            let (e, ur, uc) = members[head];
            head += 1;
            let (r, c) = (e / nx, e % nx);
            let steps = [
                ((r + ny - 1) % ny, c, -1, 0),
                ((r + 1) % ny, c, 1, 0),
                (r, (c + nx - 1) % nx, 0, -1),
                (r, (c + 1) % nx, 0, 1),
            ];
            for (rr, cc, dr, dc) in steps {
                let f = rr * nx + cc;
                if cell.solid[f] && island[f] == usize::MAX {
                    island[f] = id;
                    members.push((f, ur + dr, uc + dc));
                }
            }
        }
        islands.push(members);
    }
    islands.sort_by_key(|m| core::cmp::Reverse(m.len()));

    // each node moves with exactly one island, so motions of islands hinged
    // at a shared corner stay compatible
    let mut claimed = vec![false; nx * ny];
    claimed[0] = true;
    let mut coord: Vec<Option<(isize, isize)>> = vec![None; nx * ny];
    let mut keyed: Vec<((bool, isize, isize), SparseCol)> = Vec::new();
    for members in &islands {
        let mut nodes = Vec::new();
        let mut wraps = false;
        for &(e, ur, uc) in members {
            let (r, c) = (e / nx, e % nx);
            for (dr, dc) in [(0, 0), (0, 1), (1, 1), (1, 0)] {
                let node = ((r + dr) % ny) * nx + (c + dc) % nx;
                let at = (ur + dr as isize, uc + dc as isize);
                match coord[node] {
                    None => {
                        coord[node] = Some(at);
                        nodes.push(node);
                    }
                    Some(prev) => wraps |= prev != at,
                }
            }
        }
        let live: Vec<usize> = nodes.iter().copied().filter(|&n| !claimed[n]).collect();
        let want = if wraps { 2 } else { 3 };
        if live.is_empty() {
            nodes.iter().for_each(|&n| coord[n] = None);
            continue;
        }
        live.iter().for_each(|&n| claimed[n] = true);
        let (r0, r1) = members.iter().fold((isize::MAX, isize::MIN), |(a, b), m| (a.min(m.1), b.max(m.1)));
        let (c0, c1) = members.iter().fold((isize::MAX, isize::MIN), |(a, b), m| (a.min(m.2), b.max(m.2)));
        let big = wraps || (r1 - r0) as usize > ny / 4 || (c1 - c0) as usize > nx / 4;
        let key = (big, r0.rem_euclid(ny as isize), c0.rem_euclid(nx as isize));
        let mut cols = Vec::with_capacity(want);
        let w = 1.0 / libm::sqrt(live.len() as f64);
        cols.push(live.iter().map(|&n| (2 * n, w)).collect());
        cols.push(live.iter().map(|&n| (2 * n + 1, w)).collect());
        if !wraps {
            let k = live.len() as f64;
            let (mr, mc) = live.iter().fold((0.0, 0.0), |(a, b), &n| {
                let (r, c) = coord[n].unwrap();
                (a + r as f64 / k, b + c as f64 / k)
            });
            let mut rot: SparseCol = Vec::with_capacity(2 * live.len());
            for &n in &live {
                let (r, c) = coord[n].unwrap();
                rot.push((2 * n, -(r as f64 - mr)));
                rot.push((2 * n + 1, c as f64 - mc));
            }
            let norm = libm::sqrt(rot.iter().map(|(_, v)| v * v).sum::<f64>());
            if norm > 0.0 {
                rot.iter_mut().for_each(|(_, v)| *v /= norm);
                cols.push(rot);
            }
        }
        keyed.extend(cols.into_iter().map(|c| (key, c)));
        nodes.iter().for_each(|&n| coord[n] = None);
    }
    keyed.sort_by_key(|(k, _)| *k);
    keyed.into_iter().map(|(_, c)| c).collect()
}

/// Solve `K u = f` with the first node pinned by deflated Jacobi PCG.
/// Convergence is measured on the diagonally scaled system,
/// `‖D^-½ r‖ / ‖D^-½ f‖`, so the soft phase counts as much as the stiff one.
/// Returns the solution, the relative residual reached and the iteration
/// count.
fn pcg(
    cell: &Cell,
    f: &[f64],
    inv_diag: &[f64],
    defl: Option<&Deflation>,
    tol: f64,
) -> Result<(Vec<f64>, f64, usize), HomogError> {
    let n = f.len();
    let fnorm = libm::sqrt(f.iter().zip(inv_diag).map(|(a, b)| a * a * b).sum::<f64>());
    if fnorm == 0.0 {
        return Ok((vec![0.0; n], 0.0, 0));
    }
    let mut q = vec![0.0; n];
    let (mut u, mut r) = match defl {
        Some(d) => {
            let u = d.coarse_solution(f);
            cell.apply(&u, &mut q);
            let r = f.iter().zip(&q).map(|(a, b)| a - b).collect();
            (u, r)
        }
        None => (vec![0.0; n], f.to_vec()),
    };
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, b)| a * b).collect();
    let mut rz = dot(&r, &z);
    let rel = libm::sqrt(rz) / fnorm;
    if rel <= tol {
        return Ok((u, rel, 0));
    }
    let mut p = z.clone();
    if let Some(d) = defl {
        d.project(&mut p);
    }
    let max_iter = 20 * n + 1000;
    for it in 1..=max_iter {
        cell.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(HomogError::SingularSystem);
        }
        let alpha = rz / pq;
        let mut rz_new = 0.0;
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] * inv_diag[i];
            rz_new += r[i] * z[i];
        }
        let rel = libm::sqrt(rz_new) / fnorm;
        if rel <= tol {
            return Ok((u, rel, it));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        if let Some(d) = defl {
            let mut pz = z.clone();
            d.project(&mut pz);
            for i in 0..n {
                p[i] += pz[i] - z[i];
            }
        }
    }
    Err(HomogError::NotConverged(max_iter))
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |i: usize, j: usize| {
        let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
        let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
        m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(core::array::from_fn(|i| core::array::from_fn(|j| c(j, i) / det)))
}

pub fn homogenize(mask: &BinaryMask, mat: &Material2D, tol: f64) -> Result<EffectiveElasticity, HomogError> {
    mat.validate()?;
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(HomogError::BadTolerance(tol));
    }
    let cell = Cell {
        nx: mask.width(),
        ny: mask.height(),
        solid: mask.data(),
        phases: [
            Element::new(mat.stiffness(mat.e_solid * mat.contrast)),
            Element::new(mat.stiffness(mat.e_solid)),
        ],
    };
    let mut inv_diag: Vec<f64> = cell.diagonal().iter().map(|&d| 1.0 / d).collect();
    inv_diag[0] = 0.0;
    inv_diag[1] = 0.0;

    let defl = Deflation::new(&cell);

    let mut loads = Vec::with_capacity(3);
    let mut solutions = Vec::with_capacity(3);
    let mut residual: f64 = 0.0;
    let mut iterations = [0; 3];
    for j in 0..3 {
        let mut strain = [0.0; 3];
        strain[j] = 1.0;
        let f = cell.load(strain);
        let (u, rel, it) = pcg(&cell, &f, &inv_diag, defl.as_ref(), tol)?;
        residual = residual.max(rel);
        iterations[j] = it;
        loads.push(f);
        solutions.push(u);
    }
    // C_ij = <D>_ij − f_iᵀK⁻¹f_j / A, evaluated in the symmetric form whose
    // error is quadratic in the solver error
    let ku: Vec<Vec<f64>> = solutions
        .iter()
        .map(|u| {
            let mut out = vec![0.0; u.len()];
            cell.apply(u, &mut out);
            out
        })
        .collect();
    let a = (cell.nx * cell.ny) as f64;
    let mut c_eff = cell.mean_d();
    for i in 0..3 {
        for j in i..3 {
            let w = dot(&loads[i], &solutions[j]) + dot(&loads[j], &solutions[i]) - dot(&solutions[i], &ku[j]);
            c_eff[i][j] -= w / a;
            if j != i {
                c_eff[j][i] = c_eff[i][j];
            }
        }
    }
    let s = invert3(&c_eff).ok_or(HomogError::SingularSystem)?;
    Ok(EffectiveElasticity {
        c_eff,
        e: 1.0 / s[0][0],
        nu: -s[1][0] / s[0][0],
        e_y: 1.0 / s[1][1],
        anisotropy: c_eff[0][0] / c_eff[1][1],
        residual,
        iterations,
    })
}

/// `(Reuss, Voigt)` mixture bounds on Young's modulus for the mask's solid
/// fraction.
pub fn mixture_bounds(mask: &BinaryMask, mat: &Material2D) -> (f64, f64) {
    let f = mask.solid_fraction();
    let (e1, e0) = (mat.e_solid, mat.e_solid * mat.contrast);
    (1.0 / (f / e1 + (1.0 - f) / e0), f * e1 + (1.0 - f) * e0)
}

/// Statistics of `E` and `nu` over a set of masks.
pub fn evaluate_set(masks: &[BinaryMask], mat: &Material2D, tol: f64) -> Result<SampleStats, HomogError> {
    let rows = masks
        .iter()
        .map(|m| homogenize(m, mat, tol).map(|r| vec![r.e, r.nu]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampleStats::from_rows(&["E", "nu"], &rows)?)
}
