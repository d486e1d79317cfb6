//! Self-supervised motion segmentation. The scene is modeled as a foreground
//! layer over a background, mixed by an alpha mask. Each step predicts the
//! next frame by transporting foreground and alpha with a shared local
//! transform, then corrects the state with the gradient of the
//! reconstruction error.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::Image;
use crate::lft::{m_ilft, LocalSpectra};
use crate::phase_motion::{extract_velocity, phase_add, velocity_to_pd, PhaseDiffSet, VelocityField};
use crate::predictor::Predictor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub eta_fg: f64,
    pub eta_bg: f64,
    pub eta_a: f64,
    /// Weight of the new measurement when updating the local transform.
    pub eta_lt: f64,
    /// L1 weight on alpha.
    pub lambda_a: f64,
    /// Blend weight of the re-initialized state at the first corrected step.
    pub init_gain: f64,
    /// Per-step decay of that blend weight.
    pub init_decay: f64,
    /// Steps during which re-initialization blending is active.
    pub init_steps: usize,
    /// Threshold on the normalized frame difference for the initial alpha.
    pub alpha_threshold: f64,
    /// Sigmoid slope of the initial alpha.
    pub alpha_sharpness: f64,
    /// Gaussian blur of the frame difference, in pixels.
    pub blur_sigma: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            eta_fg: 0.5,
            eta_bg: 0.5,
            eta_a: 0.5,
            eta_lt: 0.7,
            lambda_a: 1e-3,
            init_gain: 1.0,
            init_decay: 0.5,
            init_steps: 3,
            alpha_threshold: 0.25,
            alpha_sharpness: 12.0,
            blur_sigma: 1.0,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_fg", self.eta_fg), ("eta_bg", self.eta_bg), ("eta_a", self.eta_a), ("lambda_a", self.lambda_a)] {
            ensure!(v >= 0.0 && v.is_finite(), Validation, "{} must be nonnegative, got {}", name, v);
        }
        ensure!((0.0..=1.0).contains(&self.eta_lt), Validation, "eta_lt must lie in [0, 1]");
        ensure!((0.0..=1.0).contains(&self.init_gain), Validation, "init_gain must lie in [0, 1]");
        ensure!((0.0..=1.0).contains(&self.init_decay), Validation, "init_decay must lie in [0, 1]");
        ensure!(self.blur_sigma >= 0.0, Validation, "blur_sigma must be nonnegative");
        Ok(())
    }
}

/// Foreground, background, alpha and the joint local transform.
#[derive(Debug, Clone)]
pub struct SegState {
    pub fg: Image,
    pub bg: Image,
    pub alpha: Image,
    pub lt: PhaseDiffSet,
}

/// `A·FG + (1 - A)·BG`.
pub fn composite(fg: &Image, bg: &Image, alpha: &Image) -> Result<Image> {
    ensure!(
        fg.same_dims(bg) && fg.same_dims(alpha),
        Shape,
        "layer sizes differ: fg {:?}, bg {:?}, alpha {:?}",
        fg.dims(),
        bg.dims(),
        alpha.dims()
    );
    let mut out = bg.clone();
    for ((o, &f), &a) in out.data_mut().iter_mut().zip(fg.data()).zip(alpha.data()) {
        *o = a * f + (1.0 - a) * *o;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SegPrediction {
    pub fg: Image,
    /// Predicted alpha after clamping to [0, 1].
    pub alpha: Image,
    pub frame: Image,
    /// Refined velocities of the shared transform.
    pub velocity: VelocityField,
    /// Alpha pixels that needed clamping.
    pub clamped: usize,
}

/// Velocities of the local transform, weighted by the alpha spectrum.
fn transform_velocity(pred: &Predictor, lt: &PhaseDiffSet, alpha_spec: &LocalSpectra) -> Result<VelocityField> {
    let raw = extract_velocity(lt, &alpha_spec.magnitudes())?;
    pred.refine(&[&raw])
}

/// Moves foreground and alpha together by the refined local transform.
pub fn seg_predict(state: &SegState, pred: &Predictor) -> Result<SegPrediction> {
    let fg_spec = pred.spectra(&state.fg)?;
    let a_spec = pred.spectra(&state.alpha)?;
    let velocity = transform_velocity(pred, &state.lt, &a_spec)?;
    let (pd, _) = velocity_to_pd(&velocity);
    let fg = m_ilft(&phase_add(&fg_spec, &pd)?, &pred.window, &pd)?.clamp01();
    let a_raw = m_ilft(&phase_add(&a_spec, &pd)?, &pred.window, &pd)?;
    let clamped = a_raw.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    if clamped > 0 {
        log::debug!("clamped {clamped} predicted alpha pixels");
    }
    let alpha = a_raw.clamp01();
    let frame = composite(&fg, &state.bg, &alpha)?;
    Ok(SegPrediction {
        fg,
        alpha,
        frame,
        velocity,
        clamped,
    })
}

/// One gradient step on `½·Σ(F̂ - F)² + λ·Σ|A|` from the predicted layers.
/// The returned state keeps the previous local transform.
pub fn seg_correct(state: &SegState, p: &SegPrediction, observed: &Image, cfg: &SegConfig) -> Result<SegState> {
    ensure!(observed.same_dims(&p.frame), Shape, "observed frame size mismatch");
    let n = observed.data().len();
    let mut fg = p.fg.clone();
    let mut bg = state.bg.clone();
    let mut alpha = p.alpha.clone();
    for i in 0..n {
        let e = p.frame.data()[i] - observed.data()[i];
        let a = p.alpha.data()[i];
        let f = p.fg.data()[i];
        let b = state.bg.data()[i];
        fg.data_mut()[i] = f - cfg.eta_fg * e * a;
        bg.data_mut()[i] = b - cfg.eta_bg * e * (1.0 - a);
        let sign = if a > 0.0 { 1.0 } else { 0.0 };
        alpha.data_mut()[i] = (a - cfg.eta_a * e * (f - b) - cfg.eta_a * cfg.lambda_a * sign).clamp(0.0, 1.0);
    }
    Ok(SegState {
        fg,
        bg,
        alpha,
        lt: state.lt.clone(),
    })
}

/// Measured joint transform between two layer estimates: the cross spectra
/// of the foregrounds and of the alphas are summed, so each source
/// contributes in proportion to its bin energy, then normalized.
pub fn measure_transform(pred: &Predictor, fg_new: &Image, a_new: &Image, fg_old: &Image, a_old: &Image) -> Result<PhaseDiffSet> {
    let f1 = pred.spectra(fg_new)?;
    let f0 = pred.spectra(fg_old)?;
    let a1 = pred.spectra(a_new)?;
    let a0 = pred.spectra(a_old)?;
    let floor = pred.config.energy_floor;
    let mut pd = PhaseDiffSet::identity(pred.grid);
    for i in 0..pd.cells.len() {
        let z = f1.cells[i] * f0.cells[i].conj() + a1.cells[i] * a0.cells[i].conj();
        let m = z.norm();
        if m < floor {
            pd.flags[i] = true;
        } else {
            pd.cells[i] = z / m;
        }
    }
    Ok(pd)
}

/// `normalize(η·measured + (1 - η)·previous)` per bin.
pub fn blend_transform(prev: &PhaseDiffSet, measured: &PhaseDiffSet, eta: f64) -> PhaseDiffSet {
    let mut out = measured.clone();
    for i in 0..out.cells.len() {
        let z = measured.cells[i] * eta + prev.cells[i] * (1.0 - eta);
        let m = z.norm();
        out.cells[i] = if m > 1e-12 { z / m } else { Complex64::new(1.0, 0.0) };
        out.flags[i] = measured.flags[i] && prev.flags[i];
    }
    out
}

pub fn seg_update_lt(
    pred: &Predictor,
    prev: &PhaseDiffSet,
    fg_new: &Image,
    a_new: &Image,
    fg_old: &Image,
    a_old: &Image,
    eta: f64,
) -> Result<PhaseDiffSet> {
    let measured = measure_transform(pred, fg_new, a_new, fg_old, a_old)?;
    Ok(blend_transform(prev, &measured, eta))
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let rad = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-rad..=rad).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let (h, w) = img.dims();
    let pass = |src: &Image, horizontal: bool| {
        Image::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let o = k as isize - rad;
                let (rr, cc) = if horizontal {
                    (r as isize, (c as isize + o).clamp(0, w as isize - 1))
                } else {
                    ((r as isize + o).clamp(0, h as isize - 1), c as isize)
                };
                acc += t * src.get(rr as usize, cc as usize);
            }
            acc / norm
        })
    };
    pass(&pass(img, true), false)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Heuristic state from observed frames (at least two): median background,
/// soft-thresholded deviation of the newest frame from it as alpha, the
/// newest frame as foreground. For two frames the deviation is half the
/// frame difference, which the normalization removes.
pub fn heuristic_init(frames: &[&Image], cfg: &SegConfig) -> Result<(Image, Image, Image)> {
    ensure!(frames.len() >= 2, Validation, "initialization needs at least 2 frames");
    let (h, w) = frames[0].dims();
    let mut buf = vec![0.0; frames.len()];
    let bg = Image::from_fn(h, w, |r, c| {
        for (b, f) in buf.iter_mut().zip(frames) {
            *b = f.get(r, c);
        }
        median(&mut buf)
    });
    let last = frames[frames.len() - 1];
    let diff = gaussian_blur(&Image::from_fn(h, w, |r, c| (last.get(r, c) - bg.get(r, c)).abs()), cfg.blur_sigma);
    let peak = diff.data().iter().cloned().fold(0.0, f64::max);
    let alpha = diff.map(|d| {
        let x = if peak > 0.0 { d / peak } else { 0.0 };
        1.0 / (1.0 + (-cfg.alpha_sharpness * (x - cfg.alpha_threshold)).exp())
    });
    Ok((last.clone(), bg, alpha))
}

fn blend(a: &Image, b: &Image, wb: f64) -> Image {
    Image::from_fn(a.rows(), a.cols(), |r, c| (1.0 - wb) * a.get(r, c) + wb * b.get(r, c))
}

/// Per-step record of a segmentation run.
#[derive(Debug, Clone)]
pub struct SegStep {
    /// Frame index this step refers to.
    pub t: usize,
    pub state: SegState,
    /// Prediction of frame `t` made before seeing it.
    pub predicted: Option<Image>,
    pub velocity: Option<VelocityField>,
    pub observed: bool,
}

/// Runs the predict/correct loop over all `observed` frames, then continues
/// open-loop for `horizon` frames. The first `seed_count` frames initialize
/// the state.
pub fn seg_run(observed: &[Image], seed_count: usize, horizon: usize, pred: &Predictor, cfg: &SegConfig) -> Result<Vec<SegStep>> {
    cfg.validate()?;
    ensure!(seed_count >= 2, Validation, "segmentation needs at least 2 seed frames, got {}", seed_count);
    ensure!(
        observed.len() >= seed_count,
        Validation,
        "{} frames given, {} seeds required",
        observed.len(),
        seed_count
    );
    let seeds: Vec<&Image> = observed[..seed_count].iter().collect();
    let (fg, bg, alpha) = heuristic_init(&seeds, cfg)?;
    // both seed frames share one alpha estimate
    let lt = measure_transform(pred, &fg, &alpha, seeds[seed_count - 2], &alpha)?;
    let mut state = SegState { fg, bg, alpha, lt };
    let mut steps = vec![SegStep {
        t: seed_count - 1,
        state: state.clone(),
        predicted: None,
        velocity: None,
        observed: true,
    }];
    let total = observed.len() + horizon;
    for t in seed_count..total {
        let p = seg_predict(&state, pred)?;
        let is_obs = t < observed.len();
        let mut next = if is_obs {
            seg_correct(&state, &p, &observed[t], cfg)?
        } else {
            SegState {
                fg: p.fg.clone(),
                bg: state.bg.clone(),
                alpha: p.alpha.clone(),
                lt: state.lt.clone(),
            }
        };
        let k = t - seed_count + 1;
        if is_obs && k <= cfg.init_steps {
            let beta = cfg.init_gain * cfg.init_decay.powi(k as i32);
            let recent: Vec<&Image> = observed[..=t].iter().collect();
            let (fg0, bg0, a0) = heuristic_init(&recent, cfg)?;
            next.fg = blend(&next.fg, &fg0, beta);
            next.bg = blend(&next.bg, &bg0, beta);
            next.alpha = blend(&next.alpha, &a0, beta);
        }
        next.lt = seg_update_lt(pred, &state.lt, &next.fg, &next.alpha, &state.fg, &state.alpha, cfg.eta_lt)?;
        steps.push(SegStep {
            t,
            state: next.clone(),
            predicted: Some(p.frame),
            velocity: Some(p.velocity),
            observed: is_obs,
        });
        state = next;
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::PredictorConfig;
    use crate::transform_model::TransformModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, n: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(n, n, |_, _| rng.gen::<f64>())
    }

    fn predictor(n: usize) -> Predictor {
        Predictor::new(PredictorConfig::default(), TransformModel::Identity, n, n).unwrap()
    }

    #[test]
    fn composite_examples() {
        let (f, b) = (random(1, 8), random(2, 8));
        assert_eq!(composite(&f, &b, &Image::filled(8, 8, 1.0)).unwrap(), f);
        assert_eq!(composite(&f, &b, &Image::zeros(8, 8)).unwrap(), b);
        let half = composite(&Image::filled(8, 8, 1.0), &Image::zeros(8, 8), &Image::filled(8, 8, 0.5)).unwrap();
        assert!(half.data().iter().all(|&v| v == 0.5));
        assert!(composite(&f, &random(3, 9), &b).is_err());
    }

    #[test]
    fn perfect_prediction_is_a_fixed_point() {
        let p = predictor(29);
        let state = SegState {
            fg: random(1, 29),
            bg: random(2, 29),
            alpha: random(3, 29),
            lt: PhaseDiffSet::identity(p.grid),
        };
        let pr = seg_predict(&state, &p).unwrap();
        let cfg = SegConfig {
            lambda_a: 0.0,
            ..SegConfig::default()
        };
        let next = seg_correct(&state, &pr, &pr.frame, &cfg).unwrap();
        assert_eq!(next.fg, pr.fg);
        assert_eq!(next.bg, state.bg);
        assert_eq!(next.alpha, pr.alpha);
    }

    #[test]
    fn identity_transform_keeps_layers() {
        let p = predictor(29);
        let state = SegState {
            fg: random(4, 29),
            bg: random(5, 29),
            alpha: random(6, 29),
            lt: PhaseDiffSet::identity(p.grid),
        };
        let pr = seg_predict(&state, &p).unwrap();
        assert!(pr.fg.max_abs_diff(&state.fg) <= 1e-3);
        assert!(pr.alpha.max_abs_diff(&state.alpha) <= 1e-3);
    }

    #[test]
    fn opaque_alpha_leaves_background() {
        let p = predictor(29);
        let state = SegState {
            fg: random(4, 29),
            bg: random(5, 29),
            alpha: Image::filled(29, 29, 1.0),
            lt: PhaseDiffSet::identity(p.grid),
        };
        let pr = seg_predict(&state, &p).unwrap();
        assert!(pr.alpha.data().iter().all(|&a| a > 1.0 - 1e-6));
        let next = seg_correct(&state, &pr, &random(7, 29), &SegConfig::default()).unwrap();
        assert!(next.bg.max_abs_diff(&state.bg) <= 1e-6);
    }

    #[test]
    fn blend_examples() {
        let p = predictor(29);
        let mut m = PhaseDiffSet::identity(p.grid);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        m.cells.iter_mut().for_each(|z| *z = Complex64::from_polar(1.0, rng.gen_range(-1.0..1.0)));
        let same = blend_transform(&m, &m, 0.3);
        assert!(same.cells.iter().zip(&m.cells).all(|(a, b)| (a - b).norm() < 1e-12));
        let full = blend_transform(&PhaseDiffSet::identity(p.grid), &m, 1.0);
        assert!(full.cells.iter().zip(&m.cells).all(|(a, b)| (a - b).norm() < 1e-12));
        assert!(full.cells.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        // static layers measure the identity and pull the transform toward it
        let f = random(2, 29);
        let a = random(3, 29);
        let lt = seg_update_lt(&p, &m, &f, &a, &f, &a, 0.7).unwrap();
        for (z, z0) in lt.cells.iter().zip(&m.cells) {
            assert!(z.arg().abs() <= z0.arg().abs() + 1e-12);
        }
    }

    fn loss(fg: &Image, bg: &Image, a: &Image, f: &Image, lambda: f64) -> f64 {
        let fh = composite(fg, bg, a).unwrap();
        let sq: f64 = fh.data().iter().zip(f.data()).map(|(x, y)| 0.5 * (x - y).powi(2)).sum();
        sq + lambda * a.data().iter().map(|v| v.abs()).sum::<f64>()
    }

    #[test]
    fn correction_matches_finite_differences() {
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fg = random(11, n);
        let bg = random(12, n);
        let a = Image::from_fn(n, n, |_, _| rng.gen_range(0.2..0.8));
        let f = random(13, n);
        let frame = composite(&fg, &bg, &a).unwrap();
        let p = predictor(29);
        let state = SegState {
            fg: fg.clone(),
            bg: bg.clone(),
            alpha: a.clone(),
            lt: PhaseDiffSet::identity(p.grid),
        };
        let pr = SegPrediction {
            fg: fg.clone(),
            alpha: a.clone(),
            frame,
            velocity: VelocityField::zeros(p.grid),
            clamped: 0,
        };
        let eta = 1e-3;
        let cfg = SegConfig {
            eta_fg: eta,
            eta_bg: eta,
            eta_a: eta,
            lambda_a: 0.05,
            ..SegConfig::default()
        };
        let next = seg_correct(&state, &pr, &f, &cfg).unwrap();
        let h = 1e-6;
        let close = |an: f64, fd: f64| (an - fd).abs() <= 1e-4 * fd.abs().max(an.abs()) + 1e-9;
        for i in 0..n * n {
            let (r, c) = (i / n, i % n);
            let bump = |img: &Image, d: f64| {
                let mut o = img.clone();
                o.set(r, c, img.get(r, c) + d);
                o
            };
            let fd_fg = (loss(&bump(&fg, h), &bg, &a, &f, 0.05) - loss(&bump(&fg, -h), &bg, &a, &f, 0.05)) / (2.0 * h);
            let fd_bg = (loss(&fg, &bump(&bg, h), &a, &f, 0.05) - loss(&fg, &bump(&bg, -h), &a, &f, 0.05)) / (2.0 * h);
            let fd_a = (loss(&fg, &bg, &bump(&a, h), &f, 0.05) - loss(&fg, &bg, &bump(&a, -h), &f, 0.05)) / (2.0 * h);
            let an_fg = (fg.get(r, c) - next.fg.get(r, c)) / eta;
            let an_bg = (bg.get(r, c) - next.bg.get(r, c)) / eta;
            let an_a = (a.get(r, c) - next.alpha.get(r, c)) / eta;
            assert!(close(an_fg, fd_fg), "fg ({r},{c}): {an_fg} vs {fd_fg}");
            assert!(close(an_bg, fd_bg), "bg ({r},{c}): {an_bg} vs {fd_bg}");
            assert!(close(an_a, fd_a), "alpha ({r},{c}): {an_a} vs {fd_a}");
        }
    }

    fn disc(n: usize, r0: f64, c0: f64, radius: f64) -> Image {
        Image::from_fn(n, n, |r, c| {
            let d = ((r as f64 - r0).powi(2) + (c as f64 - c0).powi(2)).sqrt();
            (radius + 0.5 - d).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn shared_transform_moves_sprite_and_alpha_together() {
        let p = predictor(43);
        let mask = disc(43, 21.0, 19.0, 5.0);
        let fg = mask.map(|v| 0.9 * v);
        let (lt, _) = velocity_to_pd(&VelocityField::uniform(p.grid, 2.0, 0.0));
        let state = SegState {
            fg: fg.clone(),
            bg: Image::filled(43, 43, 0.2),
            alpha: mask.clone(),
            lt,
        };
        let pr = seg_predict(&state, &p).unwrap();
        // cells without alpha energy are flagged and stay put
        let moving: Vec<_> = pr.velocity.vx.iter().zip(&pr.velocity.vy).filter(|(x, _)| **x != 0.0).collect();
        assert!(moving.len() >= 4);
        assert!(moving.iter().all(|(x, y)| (**x - 2.0).abs() < 1e-6 && y.abs() < 1e-6));
        assert!(pr.fg.max_abs_diff_interior(&fg.shifted(0, 2, 0.0), 4) <= 1e-3);
        assert!(pr.alpha.max_abs_diff_interior(&mask.shifted(0, 2, 0.0), 4) <= 1e-3);
        let expected = composite(&fg.shifted(0, 2, 0.0), &state.bg, &mask.shifted(0, 2, 0.0)).unwrap();
        assert!(pr.frame.max_abs_diff_interior(&expected, 4) <= 1e-3);
    }

    #[test]
    fn empty_scene_is_explained_by_background() {
        let p = predictor(50);
        let tex = Image::from_fn(50, 50, |r, c| 0.5 + 0.2 * (0.4 * r as f64).sin() * (0.3 * c as f64).cos());
        let frames = vec![tex.clone(); 10];
        let steps = seg_run(&frames, 2, 0, &p, &SegConfig::default()).unwrap();
        assert_eq!(steps.len(), 9);
        let first_mass: f64 = steps[0].state.alpha.data().iter().sum();
        let last_mass: f64 = steps.last().unwrap().state.alpha.data().iter().sum();
        assert!(last_mass < first_mass);
        for s in steps.iter().skip(1) {
            let pred = s.predicted.as_ref().unwrap();
            let mse = pred.data().iter().zip(tex.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / tex.data().len() as f64;
            assert!(mse <= 1e-3, "t {}: mse {mse}", s.t);
        }
    }

    #[test]
    fn run_keeps_invariants() {
        let p = predictor(50);
        let frames: Vec<Image> = (0..6)
            .map(|t| {
                let m = disc(50, 20.0, 15.0 + 1.5 * t as f64, 5.0);
                let bg = Image::filled(50, 50, 0.3);
                composite(&Image::filled(50, 50, 0.9), &bg, &m).unwrap()
            })
            .collect();
        let steps = seg_run(&frames, 2, 3, &p, &SegConfig::default()).unwrap();
        assert_eq!(steps.len(), 1 + 4 + 3);
        assert_eq!(steps.iter().filter(|s| !s.observed).count(), 3);
        for s in &steps {
            assert!(s.state.alpha.data().iter().all(|a| (0.0..=1.0).contains(a)));
            assert!(s.state.lt.cells.iter().all(|z| (z.norm() - 1.0).abs() < 1e-6));
        }
        assert!(seg_run(&frames, 1, 0, &p, &SegConfig::default()).is_err());
        assert!(seg_run(&frames[..1], 2, 0, &p, &SegConfig::default()).is_err());
    }
}
