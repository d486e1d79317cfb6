//! Frame-quality metrics and the per-run evaluation table.

use serde::Serialize;

use crate::error::{ensure, Result};
use crate::image::Image;

pub const PSNR_CAP: f64 = 99.0;
const SSIM_SIDE: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub l1: f64,
    pub mse: f64,
    pub dssim: f64,
    pub bce: f64,
    pub psnr: f64,
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    ensure!(
        a.same_dims(b),
        Shape,
        "frames differ in size: {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    );
    Ok(())
}

pub fn compute_metrics(pred: &Image, gt: &Image) -> Result<Metrics> {
    check_dims(pred, gt)?;
    let n = pred.data().len() as f64;
    let (mut l1, mut mse, mut bce) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let d = p - g;
        l1 += d.abs();
        mse += d * d;
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        bce -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
    }
    let mse = mse / n;
    Ok(Metrics {
        l1: l1 / n,
        mse,
        dssim: (1.0 - ssim(pred, gt)?) / 2.0,
        bce: bce / n,
        psnr: psnr_from_mse(mse),
    })
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

/// Normalized 2-D Gaussian of side `min(11, rows, cols)`.
fn ssim_kernel(rows: usize, cols: usize) -> (usize, Vec<f64>) {
    let side = SSIM_SIDE.min(rows).min(cols);
    let c = (side as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..side)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let mut k = Vec::with_capacity(side * side);
    for a in &g {
        for b in &g {
            k.push(a * b / (s * s));
        }
    }
    (side, k)
}

/// Valid-mode correlation with the SSIM kernel.
fn filter_valid(img: &[f64], cols: usize, rows: usize, side: usize, k: &[f64]) -> Vec<f64> {
    let (or, oc) = (rows - side + 1, cols - side + 1);
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            let mut acc = 0.0;
            for i in 0..side {
                let row = &img[(r + i) * cols + c..(r + i) * cols + c + side];
                let kr = &k[i * side..(i + 1) * side];
                acc += row.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>();
            }
            out[r * oc + c] = acc;
        }
    }
    out
}

struct SsimParts {
    side: usize,
    kernel: Vec<f64>,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    sxx: Vec<f64>,
    syy: Vec<f64>,
    sxy: Vec<f64>,
}

fn ssim_parts(x: &Image, y: &Image) -> SsimParts {
    let (rows, cols) = x.dims();
    let (side, kernel) = ssim_kernel(rows, cols);
    let f = |v: &[f64]| filter_valid(v, cols, rows, side, &kernel);
    let xx: Vec<f64> = x.data().iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data().iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| a * b).collect();
    SsimParts {
        mu_x: f(x.data()),
        mu_y: f(y.data()),
        sxx: f(&xx),
        syy: f(&yy),
        sxy: f(&xy),
        side,
        kernel,
    }
}

/// Mean SSIM over valid window positions (dynamic range 1).
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    ssim_with_grad(x, y, false).map(|(s, _)| s)
}

/// Mean SSIM and, if requested, its gradient with respect to `x`.
pub fn ssim_with_grad(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check_dims(x, y)?;
    let (rows, cols) = x.dims();
    let p = ssim_parts(x, y);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let count = p.mu_x.len();
    let mut total = 0.0;
    let mut d_mu = vec![0.0; count];
    let mut d_sxx = vec![0.0; count];
    let mut d_sxy = vec![0.0; count];
    for i in 0..count {
        let (mx, my) = (p.mu_x[i], p.mu_y[i]);
        let vx = p.sxx[i] - mx * mx;
        let vy = p.syy[i] - my * my;
        let cxy = p.sxy[i] - mx * my;
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * cxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = vx + vy + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            d_mu[i] = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2);
            d_sxx[i] = -s / b2;
            d_sxy[i] = 2.0 * s / a2;
        }
    }
    let mean = total / count as f64;
    if !want_grad {
        return Ok((mean, None));
    }
    let oc = cols - p.side + 1;
    let mut g = Image::zeros(rows, cols);
    let scale = 1.0 / count as f64;
    for r in 0..rows - p.side + 1 {
        for c in 0..oc {
            let i = r * oc + c;
            let (dm, dxx, dxy) = (d_mu[i] * scale, d_sxx[i] * scale, d_sxy[i] * scale);
            for a in 0..p.side {
                for b in 0..p.side {
                    let k = p.kernel[a * p.side + b];
                    let (rr, cc) = (r + a, c + b);
                    let v = k * (dm + 2.0 * dxx * x.get(rr, cc) + dxy * y.get(rr, cc));
                    g.set(rr, cc, g.get(rr, cc) + v);
                }
            }
        }
    }
    Ok((mean, Some(g)))
}

/// One row of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRow {
    pub t: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub mean: Metrics,
}

impl Evaluation {
    /// CSV with header `t,l1,mse,dssim,bce,psnr`; the aggregate row uses `t = mean`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,l1,mse,dssim,bce,psnr\n");
        let line = |t: String, m: &Metrics| format!("{t},{},{},{},{},{}\n", m.l1, m.mse, m.dssim, m.bce, m.psnr);
        for r in &self.rows {
            s += &line(r.t.to_string(), &r.metrics);
        }
        s += &line("mean".into(), &self.mean);
        s
    }
}

/// Scores every non-seed frame and averages.
pub fn evaluate_run(pred: &[Image], gt: &[Image], seed_count: usize) -> Result<Evaluation> {
    ensure!(
        pred.len() == gt.len(),
        Shape,
        "prediction has {} frames, ground truth {}",
        pred.len(),
        gt.len()
    );
    ensure!(
        seed_count <= gt.len(),
        Validation,
        "seed count {} exceeds sequence length {}",
        seed_count,
        gt.len()
    );
    let mut rows = Vec::new();
    for t in seed_count..gt.len() {
        rows.push(EvalRow {
            t,
            metrics: compute_metrics(&pred[t], &gt[t])?,
        });
    }
    let k = rows.len().max(1) as f64;
    let sum = |f: fn(&Metrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / k;
    let mean = Metrics {
        l1: sum(|m| m.l1),
        mse: sum(|m| m.mse),
        dssim: sum(|m| m.dssim),
        bce: sum(|m| m.bce),
        psnr: sum(|m| m.psnr),
    };
    Ok(Evaluation { rows, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, n: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(n, n, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn identical_frames() {
        let a = random(1, 20);
        let m = compute_metrics(&a, &a).unwrap();
        assert_eq!((m.l1, m.mse, m.psnr), (0.0, 0.0, PSNR_CAP));
        assert!(m.dssim.abs() < 1e-12);
    }

    #[test]
    fn half_grey_against_black() {
        let m = compute_metrics(&Image::filled(16, 16, 0.5), &Image::zeros(16, 16)).unwrap();
        assert!((m.mse - 0.25).abs() < 1e-15 && (m.l1 - 0.5).abs() < 1e-15);
        assert!((m.bce - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dssim_is_symmetric_and_bounded() {
        for s in 0..10 {
            let (a, b) = (random(s, 24), random(s + 100, 24));
            let ab = compute_metrics(&a, &b).unwrap().dssim;
            let ba = compute_metrics(&b, &a).unwrap().dssim;
            assert!((ab - ba).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = random(3, 14);
        let b = random(4, 14);
        let (_, g) = ssim_with_grad(&a, &b, true).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for &(r, c) in &[(0, 0), (5, 7), (13, 13), (6, 2)] {
            let mut hi = a.clone();
            let mut lo = a.clone();
            hi.set(r, c, a.get(r, c) + h);
            lo.set(r, c, a.get(r, c) - h);
            let fd = (ssim(&hi, &b).unwrap() - ssim(&lo, &b).unwrap()) / (2.0 * h);
            assert!((fd - g.get(r, c)).abs() < 1e-8, "({r},{c}): {fd} vs {}", g.get(r, c));
        }
    }

    #[test]
    fn evaluation_skips_seeds() {
        let frames: Vec<Image> = (0..10).map(|s| random(s, 16)).collect();
        let e = evaluate_run(&frames, &frames, 2).unwrap();
        assert_eq!(e.rows.len(), 8);
        assert_eq!(e.to_csv().lines().count(), 10);
        assert_eq!(e.mean.mse, 0.0);
        assert!(evaluate_run(&frames[..3], &frames, 2).is_err());
    }
}
