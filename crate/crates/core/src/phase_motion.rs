//! Phase differences between local spectra, phase-only correlation, phase
//! addition, and the velocity bottleneck that squeezes every cell's phase
//! difference into a 2-vector and expands it back into a plane wave.
//!
//! Sign convention: content translated by `+v` (x = columns, y = rows) has
//! phase difference `exp(-j·2π/N'·(vx·fx + vy·fy))` where `fx`, `fy` are the
//! signed bin frequencies. Slopes between adjacent bins therefore have angle
//! `-2π·v/N'`.
//!
//! Every differentiable stage has a `*_backward` companion. Complex gradients
//! follow `∂L/∂re + i·∂L/∂im`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;

use crate::error::{ensure, Result};
use crate::fft::{signed_bin, Fft2};
use crate::lft::{GridSpec, LocalSpectra};
use crate::tensor_io::TensorFile;

/// Default floor on `|X_t·X_prev|` below which a bin carries no phase.
pub const DEFAULT_ENERGY_FLOOR: f64 = 1e-6;

/// Per-cell unit phasors, same layout as [`LocalSpectra`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiffSet {
    pub grid: GridSpec,
    pub cells: Vec<Complex64>,
    /// Low-energy bins; they carry `1 + 0j`.
    pub flags: Vec<bool>,
}

impl PhaseDiffSet {
    pub fn identity(grid: GridSpec) -> Self {
        let n = grid.cells() * grid.bins();
        Self {
            grid,
            cells: vec![Complex64::new(1.0, 0.0); n],
            flags: vec![false; n],
        }
    }

    pub fn cell(&self, idx: usize) -> &[Complex64] {
        let b = self.grid.bins();
        &self.cells[idx * b..(idx + 1) * b]
    }

    pub fn cell_flags(&self, idx: usize) -> &[bool] {
        let b = self.grid.bins();
        &self.flags[idx * b..(idx + 1) * b]
    }

    /// True when every bin of cell `idx` is flagged.
    pub fn cell_is_empty(&self, idx: usize) -> bool {
        self.cell_flags(idx).iter().all(|&f| f)
    }

    pub fn to_tensor(&self) -> Result<TensorFile> {
        let g = &self.grid;
        let data: Vec<f64> = self.cells.iter().flat_map(|z| [z.re, z.im]).collect();
        TensorFile::from_f64(
            vec![g.cells() as u32, g.padded as u32, g.padded as u32, 2],
            &data,
        )
    }
}

fn check_grids(a: &GridSpec, b: &GridSpec) -> Result<()> {
    ensure!(a == b, Shape, "grid mismatch: {:?} vs {:?}", a, b);
    Ok(())
}

/// Per-bin normalized cross spectrum `X_t·conj(X_prev)/|X_t·X_prev|`.
pub fn phase_diff(x_t: &LocalSpectra, x_prev: &LocalSpectra, energy_floor: f64) -> Result<PhaseDiffSet> {
    check_grids(&x_t.grid, &x_prev.grid)?;
    let mut cells = Vec::with_capacity(x_t.cells.len());
    let mut flags = Vec::with_capacity(x_t.cells.len());
    for (a, b) in x_t.cells.iter().zip(&x_prev.cells) {
        let z = a * b.conj();
        let m = z.norm();
        if m < energy_floor {
            cells.push(Complex64::new(1.0, 0.0));
            flags.push(true);
        } else {
            cells.push(z / m);
            flags.push(false);
        }
    }
    Ok(PhaseDiffSet {
        grid: x_t.grid,
        cells,
        flags,
    })
}

/// Reverse pass of [`phase_diff`]; flagged bins pass no gradient.
pub fn phase_diff_backward(
    x_t: &LocalSpectra,
    x_prev: &LocalSpectra,
    pd: &PhaseDiffSet,
    grad_pd: &[Complex64],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = x_t.cells.len();
    let mut g_t = vec![Complex64::default(); n];
    let mut g_prev = vec![Complex64::default(); n];
    for i in 0..n {
        if pd.flags[i] {
            continue;
        }
        let (a, b) = (x_t.cells[i], x_prev.cells[i]);
        let z = a * b.conj();
        let m = z.norm();
        let u = pd.cells[i];
        let g = grad_pd[i];
        let gz = (g - u * (u.conj() * g).re) / m;
        g_t[i] = gz * b;
        g_prev[i] = gz.conj() * a;
    }
    (g_t, g_prev)
}

/// Result of phase-only correlation on one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PocPeak {
    pub d_row: i64,
    pub d_col: i64,
    pub peak: f64,
}

/// Phase-only correlation: location and height of the inverse-FFT peak.
/// Shifts are reported in `(-N'/2, N'/2]`.
pub fn poc(pd_cell: &[Complex64], n: usize) -> Result<PocPeak> {
    ensure!(
        pd_cell.len() == n * n,
        Shape,
        "phase-difference cell has {} bins, expected {}",
        pd_cell.len(),
        n * n
    );
    let mut buf = pd_cell.to_vec();
    Fft2::plan(n).inverse(&mut buf);
    let (mut best, mut best_i) = (f64::NEG_INFINITY, 0);
    for (i, z) in buf.iter().enumerate() {
        if z.re > best {
            best = z.re;
            best_i = i;
        }
    }
    let wrap = |i: usize| {
        if i > n / 2 {
            i as i64 - n as i64
        } else {
            i as i64
        }
    };
    Ok(PocPeak {
        d_row: wrap(best_i / n),
        d_col: wrap(best_i % n),
        peak: best / (n * n) as f64,
    })
}

/// Element-wise `X·pd`.
pub fn phase_add(x: &LocalSpectra, pd: &PhaseDiffSet) -> Result<LocalSpectra> {
    check_grids(&x.grid, &pd.grid)?;
    Ok(LocalSpectra {
        grid: x.grid,
        cells: x.cells.iter().zip(&pd.cells).map(|(a, b)| a * b).collect(),
    })
}

/// Reverse pass of [`phase_add`]: gradients on `X` and on `pd`.
pub fn phase_add_backward(
    x: &LocalSpectra,
    pd: &PhaseDiffSet,
    grad_out: &[Complex64],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let gx = grad_out.iter().zip(&pd.cells).map(|(g, p)| g * p.conj()).collect();
    let gp = grad_out.iter().zip(&x.cells).map(|(g, a)| g * a.conj()).collect();
    (gx, gp)
}

/// Per-cell velocities (pixels/frame) and circular dispersions, row-major
/// over the cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: GridSpec,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub var_x: Vec<f64>,
    pub var_y: Vec<f64>,
    /// Cells without usable energy.
    pub flagged: Vec<bool>,
}

impl VelocityField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::uniform(grid, 0.0, 0.0)
    }

    pub fn uniform(grid: GridSpec, vx: f64, vy: f64) -> Self {
        let l = grid.cells();
        Self {
            grid,
            vx: vec![vx; l],
            vy: vec![vy; l],
            var_x: vec![0.0; l],
            var_y: vec![0.0; l],
            flagged: vec![false; l],
        }
    }

    pub fn rows(&self) -> usize {
        self.grid.cells_u
    }

    pub fn cols(&self) -> usize {
        self.grid.cells_v
    }

    pub fn len(&self) -> usize {
        self.vx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vx.is_empty()
    }

    /// Largest velocity magnitude representable without phase wrap.
    pub fn limit(&self) -> f64 {
        self.grid.padded as f64 / 2.0
    }

    /// `[L_U, L_V, 4]` tensor with channels vx, vy, var_x, var_y.
    pub fn to_tensor(&self) -> Result<TensorFile> {
        let mut data = Vec::with_capacity(self.len() * 4);
        for i in 0..self.len() {
            data.extend_from_slice(&[self.vx[i], self.vy[i], self.var_x[i], self.var_y[i]]);
        }
        TensorFile::from_f64(vec![self.rows() as u32, self.cols() as u32, 4], &data)
    }
}

/// Slope pairs `(p, q)` of canonical bin indices along one axis, i.e. bins
/// whose centered positions are adjacent. The seam pair is excluded.
fn slope_pairs(n: usize) -> Vec<(usize, usize)> {
    let h = n / 2;
    (0..n - 1).map(|c| ((c + n - h) % n, (c + 1 + n - h) % n)).collect()
}

/// Per-axis intermediate values of one cell, kept for the reverse pass.
#[derive(Debug, Clone, Copy, Default)]
struct AxisStats {
    sum: Complex64,
    weight: f64,
}

/// Saved state of [`extract_velocity_traced`].
#[derive(Debug, Clone)]
pub struct VelocityTrace {
    stats: Vec<[AxisStats; 2]>,
}

pub fn extract_velocity(pd: &PhaseDiffSet, energies: &[f64]) -> Result<VelocityField> {
    extract_velocity_traced(pd, energies).map(|(vf, _)| vf)
}

/// Bin pair `(p, q)` along `axis` (0 = x/columns, 1 = y/rows) for the
/// 1-D pair `(a, b)` at orthogonal index `o`.
#[inline]
fn pair_bins(axis: usize, n: usize, o: usize, a: usize, b: usize) -> (usize, usize) {
    if axis == 0 {
        (o * n + a, o * n + b)
    } else {
        (a * n + o, b * n + o)
    }
}

pub fn extract_velocity_traced(pd: &PhaseDiffSet, energies: &[f64]) -> Result<(VelocityField, VelocityTrace)> {
    ensure!(
        energies.len() == pd.cells.len(),
        Shape,
        "energies have {} entries, phase differences {}",
        energies.len(),
        pd.cells.len()
    );
    ensure!(
        energies.iter().all(|e| *e >= 0.0),
        Validation,
        "energies must be nonnegative"
    );
    let grid = pd.grid;
    let n = grid.padded;
    let bins = grid.bins();
    let pairs = slope_pairs(n);
    let scale = n as f64 / (2.0 * PI);
    let mut vf = VelocityField::zeros(grid);
    let mut stats = vec![[AxisStats::default(); 2]; grid.cells()];
    for idx in 0..grid.cells() {
        let cell = pd.cell(idx);
        let flags = pd.cell_flags(idx);
        let en = &energies[idx * bins..(idx + 1) * bins];
        for axis in 0..2 {
            let mut st = AxisStats::default();
            for o in 0..n {
                for &(a, b) in &pairs {
                    let (p, q) = pair_bins(axis, n, o, a, b);
                    if flags[p] || flags[q] {
                        continue;
                    }
                    let e = (en[p] * en[q]).sqrt();
                    st.sum += cell[q] * cell[p].conj() * e;
                    st.weight += e;
                }
            }
            stats[idx][axis] = st;
        }
        let [sx, sy] = stats[idx];
        if sx.weight <= 0.0 || sy.weight <= 0.0 {
            vf.var_x[idx] = 1.0;
            vf.var_y[idx] = 1.0;
            vf.flagged[idx] = true;
            continue;
        }
        let mx = sx.sum / sx.weight;
        let my = sy.sum / sy.weight;
        vf.vx[idx] = -scale * mx.arg();
        vf.vy[idx] = -scale * my.arg();
        vf.var_x[idx] = (1.0 - mx.norm()).clamp(0.0, 1.0);
        vf.var_y[idx] = (1.0 - my.norm()).clamp(0.0, 1.0);
    }
    Ok((vf, VelocityTrace { stats }))
}

/// Reverse pass of [`extract_velocity_traced`]. Returns gradients on the
/// phase differences and on the per-bin energies.
pub fn extract_velocity_backward(
    pd: &PhaseDiffSet,
    energies: &[f64],
    trace: &VelocityTrace,
    grad: &VelocityField,
) -> (Vec<Complex64>, Vec<f64>) {
    let grid = pd.grid;
    let n = grid.padded;
    let bins = grid.bins();
    let pairs = slope_pairs(n);
    let scale = n as f64 / (2.0 * PI);
    let mut gpd = vec![Complex64::default(); pd.cells.len()];
    let mut gen = vec![0.0; energies.len()];
    for idx in 0..grid.cells() {
        let [sx, sy] = trace.stats[idx];
        if sx.weight <= 0.0 || sy.weight <= 0.0 {
            continue;
        }
        let cell = pd.cell(idx);
        let flags = pd.cell_flags(idx);
        let en = &energies[idx * bins..(idx + 1) * bins];
        let gp = &mut gpd[idx * bins..(idx + 1) * bins];
        let ge = &mut gen[idx * bins..(idx + 1) * bins];
        for (axis, st) in [(0usize, sx), (1, sy)] {
            let (gv, gvar) = if axis == 0 {
                (grad.vx[idx], grad.var_x[idx])
            } else {
                (grad.vy[idx], grad.var_y[idx])
            };
            let m = st.sum / st.weight;
            let mn = m.norm();
            if mn == 0.0 {
                continue;
            }
            // v = -scale·arg(M), var = 1 - |M|
            let mut gm = Complex64::i() * m / (mn * mn) * (-scale * gv);
            if mn < 1.0 {
                gm -= m / mn * gvar;
            }
            let gs = gm / st.weight;
            let gw = -(gm.conj() * st.sum).re / (st.weight * st.weight);
            for o in 0..n {
                for &(a, b) in &pairs {
                    let (p, q) = pair_bins(axis, n, o, a, b);
                    if flags[p] || flags[q] {
                        continue;
                    }
                    let e = (en[p] * en[q]).sqrt();
                    let d = cell[q] * cell[p].conj();
                    let gd = gs * e;
                    gp[q] += gd * cell[p];
                    gp[p] += gd.conj() * cell[q];
                    if e > 0.0 {
                        let gev = (gs.conj() * d).re + gw;
                        ge[p] += gev * e / (2.0 * en[p]);
                        ge[q] += gev * e / (2.0 * en[q]);
                    }
                }
            }
        }
        for (g, &f) in gp.iter_mut().zip(flags) {
            if f {
                *g = Complex64::default();
            }
        }
    }
    (gpd, gen)
}

/// Gradient of bin magnitudes `|X|` back onto `X`.
pub fn magnitude_backward(x: &LocalSpectra, grad_mag: &[f64]) -> Vec<Complex64> {
    x.cells
        .iter()
        .zip(grad_mag)
        .map(|(z, g)| {
            let m = z.norm();
            if m > 0.0 {
                z * (g / m)
            } else {
                Complex64::default()
            }
        })
        .collect()
}

/// Centered frequency offsets of an N'×N' grid, zero at index `N'/2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateMatrix {
    pub size: usize,
    /// Column offsets, row-major.
    pub rx: Vec<i64>,
    /// Row offsets, row-major.
    pub ry: Vec<i64>,
}

pub fn build_template_matrix(size: usize) -> Result<Arc<TemplateMatrix>> {
    ensure!(size >= 2, Validation, "template matrix needs N' >= 2, got {}", size);
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<TemplateMatrix>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("template cache poisoned");
    Ok(guard
        .entry(size)
        .or_insert_with(|| {
            let c = (size / 2) as i64;
            let mut rx = Vec::with_capacity(size * size);
            let mut ry = Vec::with_capacity(size * size);
            for i in 0..size {
                for j in 0..size {
                    rx.push(j as i64 - c);
                    ry.push(i as i64 - c);
                }
            }
            Arc::new(TemplateMatrix { size, rx, ry })
        })
        .clone())
}

impl TemplateMatrix {
    /// (rx, ry) offsets of canonical (DC-at-origin) bin `(a, b)`.
    #[inline]
    pub fn canonical(&self, a: usize, b: usize) -> (i64, i64) {
        let c = self.size / 2;
        let k = ((a + c) % self.size) * self.size + (b + c) % self.size;
        (self.rx[k], self.ry[k])
    }
}

/// Plane-wave phase differences realizing each cell's velocity. The second
/// value reports whether any velocity had to be saturated to `±N'/2`.
pub fn velocity_to_pd(vf: &VelocityField) -> (PhaseDiffSet, bool) {
    let grid = vf.grid;
    let n = grid.padded;
    let tm = build_template_matrix(n).expect("padded cell size is at least 2");
    let limit = vf.limit();
    let k = -2.0 * PI / n as f64;
    let mut pd = PhaseDiffSet::identity(grid);
    let mut saturated = false;
    for idx in 0..grid.cells() {
        let mut sat = |v: f64| {
            if v.abs() > limit {
                saturated = true;
            }
            v.clamp(-limit, limit)
        };
        let vx = sat(vf.vx[idx]);
        let vy = sat(vf.vy[idx]);
        let cell = &mut pd.cells[idx * n * n..(idx + 1) * n * n];
        for a in 0..n {
            for b in 0..n {
                let (rx, ry) = tm.canonical(a, b);
                debug_assert_eq!((rx, ry), (signed_bin(b, n), signed_bin(a, n)));
                cell[a * n + b] = Complex64::from_polar(1.0, k * (vx * rx as f64 + vy * ry as f64));
            }
        }
    }
    if saturated {
        log::warn!("velocity saturated to +/-{limit} px/frame");
    }
    (pd, saturated)
}

/// Reverse pass of [`velocity_to_pd`]: gradient on each cell's (vx, vy).
/// Saturated velocities receive zero gradient.
pub fn velocity_to_pd_backward(vf: &VelocityField, pd: &PhaseDiffSet, grad_pd: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let grid = vf.grid;
    let n = grid.padded;
    let tm = build_template_matrix(n).expect("padded cell size is at least 2");
    let limit = vf.limit();
    let k = -2.0 * PI / n as f64;
    let mut gvx = vec![0.0; grid.cells()];
    let mut gvy = vec![0.0; grid.cells()];
    for idx in 0..grid.cells() {
        let base = idx * n * n;
        let (mut sx, mut sy) = (0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                let i = base + a * n + b;
                let gphi = -(grad_pd[i].conj() * pd.cells[i]).im;
                let (rx, ry) = tm.canonical(a, b);
                sx += gphi * k * rx as f64;
                sy += gphi * k * ry as f64;
            }
        }
        if vf.vx[idx].abs() <= limit {
            gvx[idx] = sx;
        }
        if vf.vy[idx].abs() <= limit {
            gvy[idx] = sy;
        }
    }
    (gvx, gvy)
}
