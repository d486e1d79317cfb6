//! Local Fourier Transform: cell-grid planning, analysis windows, the forward
//! transform and its overlap-add inverses.
//!
//! Layout conventions:
//! * The image is zero-padded by `image_pad = N/2 + k·H` on each side. Cell
//!   `(u, v)` covers padded rows `u·H .. u·H + N` and columns `v·H .. v·H + N`,
//!   so its center sits on image pixel `((u-k)·H, (v-k)·H)`.
//! * Each windowed cell is zero-padded by `P` to `N' = N + 2P` before the FFT.
//!   Spectra keep DC at index `(0, 0)`.
//! * The modified inverse overlap-adds full `N'`×`N'` patches on a canvas that
//!   extends the padded image by a further `P` per side.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fft::Fft2;
use crate::image::Image;
use crate::phase_motion::PhaseDiffSet;

/// Overlap-add denominator floor used by both inverse transforms.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

/// Derived cell-grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Image rows (U).
    pub height: usize,
    /// Image columns (V).
    pub width: usize,
    /// Window side N.
    pub window: usize,
    /// Hop H between neighbouring cells.
    pub stride: usize,
    /// Extra cells k added on every side of the grid.
    pub extension: usize,
    /// Cells along the rows, L_U.
    pub cells_u: usize,
    /// Cells along the columns, L_V.
    pub cells_v: usize,
    pub image_pad: usize,
    /// Spectral zero padding P per cell side.
    pub spectral_pad: usize,
    /// N' = N + 2P.
    pub padded: usize,
}

pub fn plan_grid(
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
    spectral_pad: usize,
) -> Result<GridSpec> {
    ensure!(height >= 2 && width >= 2, Validation, "image must be at least 2x2, got {}x{}", height, width);
    ensure!(window >= 2, Validation, "window size N must be >= 2, got {}", window);
    ensure!(stride >= 1, Validation, "stride H must be >= 1");
    ensure!(stride <= window, Validation, "stride H = {} exceeds window size N = {}", stride, window);
    ensure!(
        (height - 1) % stride == 0,
        Validation,
        "stride H = {} must divide U - 1 = {}",
        stride,
        height - 1
    );
    ensure!(
        (width - 1) % stride == 0,
        Validation,
        "stride H = {} must divide V - 1 = {}",
        stride,
        width - 1
    );
    let half = window / 2;
    let extension = half / stride;
    let cells_u = (height - 1) / stride + 1 + 2 * extension;
    let cells_v = (width - 1) / stride + 1 + 2 * extension;
    Ok(GridSpec {
        height,
        width,
        window,
        stride,
        extension,
        cells_u,
        cells_v,
        image_pad: half + extension * stride,
        spectral_pad,
        padded: window + 2 * spectral_pad,
    })
}

impl GridSpec {
    /// One unpadded `n`×`n` cell covering the whole frame, for global
    /// (non-local) phase correlation.
    pub fn single_cell(n: usize) -> Self {
        GridSpec {
            height: n,
            width: n,
            window: n,
            stride: n,
            extension: 0,
            cells_u: 1,
            cells_v: 1,
            image_pad: 0,
            spectral_pad: 0,
            padded: n,
        }
    }

    /// Total cell count L.
    pub fn cells(&self) -> usize {
        self.cells_u * self.cells_v
    }

    /// Complex bins per cell (N'²).
    pub fn bins(&self) -> usize {
        self.padded * self.padded
    }

    pub fn padded_height(&self) -> usize {
        self.height + 2 * self.image_pad
    }

    pub fn padded_width(&self) -> usize {
        self.width + 2 * self.image_pad
    }

    /// Image-space (row, col) of the center of cell `(u, v)`; may lie outside
    /// the image for the extension cells.
    pub fn cell_center(&self, u: usize, v: usize) -> (i64, i64) {
        let k = self.extension as i64;
        let h = self.stride as i64;
        ((u as i64 - k) * h, (v as i64 - k) * h)
    }

    pub fn check_image(&self, img: &Image) -> Result<()> {
        ensure!(
            img.dims() == (self.height, self.width),
            Shape,
            "image is {}x{}, grid expects {}x{}",
            img.rows(),
            img.cols(),
            self.height,
            self.width
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    Gaussian,
    ConfinedGaussian,
}

/// Separable, symmetric, peak-normalized analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    kind: WindowKind,
    size: usize,
    sigma_t: f64,
    taps_1d: Vec<f64>,
    taps: Vec<f64>,
}

impl Window {
    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma_t(&self) -> f64 {
        self.sigma_t
    }

    pub fn taps_1d(&self) -> &[f64] {
        &self.taps_1d
    }

    /// Row-major N×N taps.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn tap(&self, n: usize, m: usize) -> f64 {
        self.taps[n * self.size + m]
    }

    /// Custom window from 1-D taps (outer product, peak-normalized).
    pub fn from_taps_1d(taps_1d: Vec<f64>) -> Result<Self> {
        ensure!(taps_1d.len() >= 2, Validation, "window needs at least 2 taps");
        ensure!(
            taps_1d.iter().all(|t| t.is_finite() && *t >= 0.0),
            Validation,
            "window taps must be finite and nonnegative"
        );
        let peak = taps_1d.iter().cloned().fold(0.0, f64::max);
        ensure!(peak > 0.0, Validation, "window taps are all zero");
        Ok(Self::from_profile(WindowKind::Rectangular, 0.0, taps_1d, peak))
    }

    fn from_profile(kind: WindowKind, sigma_t: f64, raw: Vec<f64>, peak: f64) -> Self {
        let size = raw.len();
        let taps_1d: Vec<f64> = raw.iter().map(|t| t / peak).collect();
        let mut taps = Vec::with_capacity(size * size);
        for a in &taps_1d {
            for b in &taps_1d {
                taps.push(a * b);
            }
        }
        Self {
            kind,
            size,
            sigma_t,
            taps_1d,
            taps,
        }
    }

    /// Summary for run manifests.
    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "size": self.size,
            "sigma_t": self.sigma_t,
        })
    }
}

pub fn make_window(kind: WindowKind, size: usize, sigma_t: f64) -> Result<Window> {
    ensure!(size >= 2, Validation, "window size must be >= 2, got {}", size);
    if kind != WindowKind::Rectangular {
        ensure!(
            sigma_t > 0.0 && sigma_t.is_finite(),
            Validation,
            "sigma_t must be positive, got {}",
            sigma_t
        );
    }
    let n = size as f64;
    let center = (n - 1.0) / 2.0;
    let gauss = |x: f64| (-0.5 * ((x - center) / (sigma_t * n)).powi(2)).exp();
    let raw: Vec<f64> = match kind {
        WindowKind::Rectangular => vec![1.0; size],
        WindowKind::Gaussian => (0..size).map(|i| gauss(i as f64)).collect(),
        WindowKind::ConfinedGaussian => {
            // Approximate confined Gaussian: subtract mirrored Gaussians one
            // period away so the window vanishes half a sample past each edge.
            let edge = gauss(-0.5);
            let norm = gauss(-0.5 + n) + gauss(-0.5 - n);
            (0..size)
                .map(|i| {
                    let x = i as f64;
                    gauss(x) - edge * (gauss(x + n) + gauss(x - n)) / norm
                })
                .collect()
        }
    };
    let peak = raw.iter().cloned().fold(f64::MIN, f64::max);
    ensure!(peak > 0.0, Numerical, "window peak is not positive");
    Ok(Window::from_profile(kind, sigma_t, raw, peak))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NolaReport {
    pub ok: bool,
    pub min_denominator: f64,
}

/// Evaluates the overlap-add denominator `Σ w^(a+1)[n - uH, m - vH]` over one
/// stride period of an unbounded grid and compares its minimum to `floor`.
pub fn check_nola(window: &Window, stride: usize, exponent: u32, floor: f64) -> NolaReport {
    let n = window.size();
    let mut min_d = f64::INFINITY;
    for r in 0..stride {
        for c in 0..stride {
            let mut d = 0.0;
            for i in (r..n).step_by(stride) {
                for j in (c..n).step_by(stride) {
                    d += window.tap(i, j).powi(exponent as i32 + 1);
                }
            }
            min_d = min_d.min(d);
        }
    }
    NolaReport {
        ok: min_d >= floor,
        min_denominator: min_d,
    }
}

/// Per-cell complex spectra, cell order row-major over (u, v), each cell N'×N'
/// row-major with DC at (0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSpectra {
    pub grid: GridSpec,
    pub cells: Vec<Complex64>,
}

impl LocalSpectra {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            cells: vec![Complex64::default(); grid.cells() * grid.bins()],
        }
    }

    pub fn cell(&self, idx: usize) -> &[Complex64] {
        let b = self.grid.bins();
        &self.cells[idx * b..(idx + 1) * b]
    }

    pub fn cell_mut(&mut self, idx: usize) -> &mut [Complex64] {
        let b = self.grid.bins();
        &mut self.cells[idx * b..(idx + 1) * b]
    }

    /// Bin magnitudes, used as energy weights for velocity extraction.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.cells.iter().map(|z| z.norm()).collect()
    }

    /// Flattened `[L, N', N', 2]` real/imag layout for the tensor container.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.cells.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn tensor_dims(&self) -> Vec<u32> {
        let g = &self.grid;
        vec![g.cells() as u32, g.padded as u32, g.padded as u32, 2]
    }
}

fn check_window(grid: &GridSpec, window: &Window) -> Result<()> {
    ensure!(
        window.size() == grid.window,
        Shape,
        "window has {} taps, grid expects N = {}",
        window.size(),
        grid.window
    );
    Ok(())
}

/// Plain 2-D FFT of a square frame as a single-cell spectrum set.
pub fn frame_spectrum(image: &Image) -> Result<LocalSpectra> {
    let n = image.rows();
    ensure!(n >= 1 && image.cols() == n, Shape, "frame spectrum needs a square frame, got {}x{}", n, image.cols());
    let mut cells: Vec<Complex64> = image.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Fft2::plan(n).forward(&mut cells);
    Ok(LocalSpectra {
        grid: GridSpec::single_cell(n),
        cells,
    })
}

/// Forward Local Fourier Transform.
pub fn lft(image: &Image, grid: &GridSpec, window: &Window) -> Result<LocalSpectra> {
    grid.check_image(image)?;
    check_window(grid, window)?;
    let n = grid.window;
    let np = grid.padded;
    let p = grid.spectral_pad;
    let pad = grid.image_pad as isize;
    let plan = Fft2::plan(np);
    let mut out = LocalSpectra::zeros(*grid);
    for u in 0..grid.cells_u {
        for v in 0..grid.cells_v {
            let idx = u * grid.cells_v + v;
            let buf = out.cell_mut(idx);
            let r0 = (u * grid.stride) as isize - pad;
            let c0 = (v * grid.stride) as isize - pad;
            for i in 0..n {
                for j in 0..n {
                    let x = image.get_or_zero(r0 + i as isize, c0 + j as isize);
                    buf[(p + i) * np + p + j] = Complex64::new(x * window.tap(i, j), 0.0);
                }
            }
            plan.forward(buf);
        }
    }
    Ok(out)
}

/// Adjoint of [`lft`] with respect to the image: maps a gradient on the
/// spectra (∂L/∂re + i·∂L/∂im per bin) to the gradient on the pixels.
pub fn lft_adjoint(grad: &[Complex64], grid: &GridSpec, window: &Window) -> Image {
    let n = grid.window;
    let np = grid.padded;
    let p = grid.spectral_pad;
    let pad = grid.image_pad as isize;
    let plan = Fft2::plan(np);
    let mut out = Image::zeros(grid.height, grid.width);
    let mut buf = vec![Complex64::default(); np * np];
    for u in 0..grid.cells_u {
        for v in 0..grid.cells_v {
            let idx = u * grid.cells_v + v;
            buf.copy_from_slice(&grad[idx * np * np..(idx + 1) * np * np]);
            plan.inverse(&mut buf);
            let r0 = (u * grid.stride) as isize - pad;
            let c0 = (v * grid.stride) as isize - pad;
            for i in 0..n {
                let r = r0 + i as isize;
                if r < 0 || r as usize >= grid.height {
                    continue;
                }
                for j in 0..n {
                    let c = c0 + j as isize;
                    if c < 0 || c as usize >= grid.width {
                        continue;
                    }
                    let g = buf[(p + i) * np + p + j].re * window.tap(i, j);
                    let cur = out.get(r as usize, c as usize);
                    out.set(r as usize, c as usize, cur + g);
                }
            }
        }
    }
    out
}

/// Bounding box of pixels whose denominator is below the floor.
fn nola_failure(rows: Vec<usize>, cols: Vec<usize>) -> Error {
    Error::Nola {
        floor: DENOMINATOR_FLOOR,
        rows: (*rows.iter().min().unwrap(), *rows.iter().max().unwrap()),
        cols: (*cols.iter().min().unwrap(), *cols.iter().max().unwrap()),
        count: rows.len(),
    }
}

/// Overlap-add denominator `Σ w²` of the unmodified inverse on the padded
/// image canvas.
fn ideal_denominator(grid: &GridSpec, window: &Window) -> Image {
    let n = grid.window;
    let mut den = Image::zeros(grid.padded_height(), grid.padded_width());
    for u in 0..grid.cells_u {
        for v in 0..grid.cells_v {
            let (r0, c0) = (u * grid.stride, v * grid.stride);
            for i in 0..n {
                for j in 0..n {
                    let w = window.tap(i, j);
                    let cur = den.get(r0 + i, c0 + j);
                    den.set(r0 + i, c0 + j, cur + w * w);
                }
            }
        }
    }
    den
}

/// Inverse LFT by weighted overlap-add: each cell is inverse transformed, its
/// P ring cropped, weighted by w and normalized by `Σ w²`.
pub fn ilft(spectra: &LocalSpectra, window: &Window) -> Result<Image> {
    let grid = &spectra.grid;
    check_window(grid, window)?;
    let n = grid.window;
    let np = grid.padded;
    let p = grid.spectral_pad;
    let plan = Fft2::plan(np);
    let scale = 1.0 / (np * np) as f64;
    let mut num = Image::zeros(grid.padded_height(), grid.padded_width());
    let mut buf = vec![Complex64::default(); np * np];
    for u in 0..grid.cells_u {
        for v in 0..grid.cells_v {
            buf.copy_from_slice(spectra.cell(u * grid.cells_v + v));
            plan.inverse(&mut buf);
            let (r0, c0) = (u * grid.stride, v * grid.stride);
            for i in 0..n {
                for j in 0..n {
                    let x = buf[(p + i) * np + p + j].re * scale;
                    let cur = num.get(r0 + i, c0 + j);
                    num.set(r0 + i, c0 + j, cur + x * window.tap(i, j));
                }
            }
        }
    }
    let den = ideal_denominator(grid, window);
    let pad = grid.image_pad;
    let mut out = Image::zeros(grid.height, grid.width);
    let (mut bad_r, mut bad_c) = (Vec::new(), Vec::new());
    for r in 0..grid.height {
        for c in 0..grid.width {
            let d = den.get(r + pad, c + pad);
            if d < DENOMINATOR_FLOOR {
                bad_r.push(r);
                bad_c.push(c);
                continue;
            }
            out.set(r, c, num.get(r + pad, c + pad) / d);
        }
    }
    if !bad_r.is_empty() {
        return Err(nola_failure(bad_r, bad_c));
    }
    Ok(out)
}

/// FFT of the window zero-padded to N'.
pub fn padded_window_spectrum(window: &Window, pad: usize) -> Vec<Complex64> {
    let n = window.size();
    let np = n + 2 * pad;
    let mut buf = vec![Complex64::default(); np * np];
    for i in 0..n {
        for j in 0..n {
            buf[(pad + i) * np + pad + j] = Complex64::new(window.tap(i, j), 0.0);
        }
    }
    Fft2::plan(np).forward(&mut buf);
    buf
}

/// Intermediate values of [`m_ilft`] needed for its reverse pass.
#[derive(Debug, Clone)]
pub struct MilftTrace {
    /// Real part of each cell's inverse transform, L·N'².
    pub patches: Vec<f64>,
    /// Shifted window before clamping, L·N'².
    pub raw_windows: Vec<f64>,
    /// Overlap-added numerator on the extended canvas.
    pub numerator: Image,
    /// Overlap-added denominator on the extended canvas.
    pub denominator: Image,
}

/// Modified inverse LFT with per-cell synthesis windows shifted by `pd`.
pub fn m_ilft(spectra: &LocalSpectra, window: &Window, pd: &PhaseDiffSet) -> Result<Image> {
    m_ilft_traced(spectra, window, pd).map(|(img, _)| img)
}

pub fn m_ilft_traced(
    spectra: &LocalSpectra,
    window: &Window,
    pd: &PhaseDiffSet,
) -> Result<(Image, MilftTrace)> {
    let grid = &spectra.grid;
    check_window(grid, window)?;
    ensure!(
        pd.grid == *grid,
        Shape,
        "phase-difference grid does not match spectra grid"
    );
    let np = grid.padded;
    let bins = grid.bins();
    let plan = Fft2::plan(np);
    let scale = 1.0 / bins as f64;
    let wspec = padded_window_spectrum(window, grid.spectral_pad);
    let (ch, cw) = (
        grid.padded_height() + 2 * grid.spectral_pad,
        grid.padded_width() + 2 * grid.spectral_pad,
    );
    let mut num = Image::zeros(ch, cw);
    let mut den = Image::zeros(ch, cw);
    let mut patches = vec![0.0; grid.cells() * bins];
    let mut raw_windows = vec![0.0; grid.cells() * bins];
    let mut xb = vec![Complex64::default(); bins];
    let mut wb = vec![Complex64::default(); bins];
    for u in 0..grid.cells_u {
        for v in 0..grid.cells_v {
            let idx = u * grid.cells_v + v;
            xb.copy_from_slice(spectra.cell(idx));
            plan.inverse(&mut xb);
            for ((w, s), d) in wb.iter_mut().zip(&wspec).zip(pd.cell(idx)) {
                *w = s * d;
            }
            plan.inverse(&mut wb);
            let (r0, c0) = (u * grid.stride, v * grid.stride);
            let patch = &mut patches[idx * bins..(idx + 1) * bins];
            let raww = &mut raw_windows[idx * bins..(idx + 1) * bins];
            for a in 0..np {
                for b in 0..np {
                    let k = a * np + b;
                    let x = xb[k].re * scale;
                    let wr = wb[k].re * scale;
                    patch[k] = x;
                    raww[k] = wr;
                    let w = wr.max(0.0);
                    let (r, c) = (r0 + a, c0 + b);
                    num.set(r, c, num.get(r, c) + x * w);
                    den.set(r, c, den.get(r, c) + w * w);
                }
            }
        }
    }
    let off = grid.image_pad + grid.spectral_pad;
    let ideal = ideal_denominator(grid, window);
    let mut out = Image::zeros(grid.height, grid.width);
    let (mut bad_r, mut bad_c) = (Vec::new(), Vec::new());
    for r in 0..grid.height {
        for c in 0..grid.width {
            let d = den.get(r + off, c + off);
            if d < DENOMINATOR_FLOOR {
                if ideal.get(r + grid.image_pad, c + grid.image_pad) < DENOMINATOR_FLOOR {
                    bad_r.push(r);
                    bad_c.push(c);
                }
                out.set(r, c, num.get(r + off, c + off) / DENOMINATOR_FLOOR);
            } else {
                out.set(r, c, num.get(r + off, c + off) / d);
            }
        }
    }
    if !bad_r.is_empty() {
        return Err(nola_failure(bad_r, bad_c));
    }
    Ok((
        out,
        MilftTrace {
            patches,
            raw_windows,
            numerator: num,
            denominator: den,
        },
    ))
}

/// Reverse pass of [`m_ilft`]. Returns gradients with respect to the spectra
/// and the phase differences (complex-gradient convention).
pub fn m_ilft_backward(
    trace: &MilftTrace,
    grid: &GridSpec,
    window: &Window,
    grad_out: &Image,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let np = grid.padded;
    let bins = grid.bins();
    let plan = Fft2::plan(np);
    let scale = 1.0 / bins as f64;
    let off = grid.image_pad + grid.spectral_pad;
    let (ch, cw) = trace.numerator.dims();
    let mut gnum = Image::zeros(ch, cw);
    let mut gden = Image::zeros(ch, cw);
    for r in 0..grid.height {
        for c in 0..grid.width {
            let g = grad_out.get(r, c);
            let d = trace.denominator.get(r + off, c + off);
            if d < DENOMINATOR_FLOOR {
                gnum.set(r + off, c + off, g / DENOMINATOR_FLOOR);
            } else {
                let nval = trace.numerator.get(r + off, c + off);
                gnum.set(r + off, c + off, g / d);
                gden.set(r + off, c + off, -g * nval / (d * d));
            }
        }
    }
    let wspec = padded_window_spectrum(window, grid.spectral_pad);
    let mut gspec = vec![Complex64::default(); grid.cells() * bins];
    let mut gpd = vec![Complex64::default(); grid.cells() * bins];
    let mut xb = vec![Complex64::default(); bins];
    let mut wb = vec![Complex64::default(); bins];
    for u in 0..grid.cells_u {
        for v in 0..grid.cells_v {
            let idx = u * grid.cells_v + v;
            let (r0, c0) = (u * grid.stride, v * grid.stride);
            let patch = &trace.patches[idx * bins..(idx + 1) * bins];
            let raww = &trace.raw_windows[idx * bins..(idx + 1) * bins];
            for a in 0..np {
                for b in 0..np {
                    let k = a * np + b;
                    let (r, c) = (r0 + a, c0 + b);
                    let gn = gnum.get(r, c);
                    let gd = gden.get(r, c);
                    let w = raww[k].max(0.0);
                    xb[k] = Complex64::new(gn * w, 0.0);
                    let gw = if raww[k] > 0.0 {
                        gn * patch[k] + 2.0 * gd * w
                    } else {
                        0.0
                    };
                    wb[k] = Complex64::new(gw, 0.0);
                }
            }
            // adjoint of Re(ifft(z)/n²) is fft(g)/n²
            plan.forward(&mut xb);
            plan.forward(&mut wb);
            let gs = &mut gspec[idx * bins..(idx + 1) * bins];
            let gp = &mut gpd[idx * bins..(idx + 1) * bins];
            for k in 0..bins {
                gs[k] = xb[k] * scale;
                gp[k] = wb[k] * scale * wspec[k].conj();
            }
        }
    }
    (gspec, gpd)
}
