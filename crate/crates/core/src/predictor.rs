//! Frame prediction: measure local motion between two frames, refine it with
//! the transform model, and transport the newest frame's local spectra by the
//! refined motion. Also the closed-loop rollout and its reverse pass used for
//! training.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::harness::metrics::ssim_with_grad;
use crate::image::Image;
use crate::lft::{
    check_nola, lft, lft_adjoint, m_ilft_backward, m_ilft_traced, make_window, plan_grid, GridSpec, LocalSpectra,
    MilftTrace, Window, WindowKind, DENOMINATOR_FLOOR,
};
use crate::phase_motion::{
    extract_velocity_backward, extract_velocity_traced, magnitude_backward, phase_add, phase_add_backward,
    phase_diff, phase_diff_backward, velocity_to_pd, velocity_to_pd_backward, PhaseDiffSet, VelocityField,
    VelocityTrace, DEFAULT_ENERGY_FLOOR,
};
use crate::transform_model::{assemble_input, tm_backward, tm_forward, TMCache, TMInput, TMParams, TransformModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Window side N.
    pub window: usize,
    /// Hop H.
    pub stride: usize,
    /// Spectral padding P per side.
    pub pad: usize,
    pub window_kind: WindowKind,
    pub sigma_t: f64,
    pub energy_floor: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            window: 15,
            stride: 7,
            pad: 4,
            window_kind: WindowKind::ConfinedGaussian,
            sigma_t: 0.3,
            energy_floor: DEFAULT_ENERGY_FLOOR,
        }
    }
}

/// Grid, window and transform model bound to one frame size.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub grid: GridSpec,
    pub window: Window,
    pub model: TransformModel,
}

impl Predictor {
    pub fn new(config: PredictorConfig, model: TransformModel, height: usize, width: usize) -> Result<Self> {
        let grid = plan_grid(height, width, config.window, config.stride, config.pad)?;
        let window = make_window(config.window_kind, config.window, config.sigma_t)?;
        let nola = check_nola(&window, config.stride, 1, DENOMINATOR_FLOOR);
        ensure!(
            nola.ok,
            Validation,
            "window fails the overlap-add condition at stride {} (min denominator {:e})",
            config.stride,
            nola.min_denominator
        );
        Ok(Self {
            config,
            grid,
            window,
            model,
        })
    }

    pub fn history(&self) -> usize {
        self.model.history()
    }

    pub fn spectra(&self, img: &Image) -> Result<LocalSpectra> {
        lft(img, &self.grid, &self.window)
    }

    /// Motion measured between two consecutive spectra.
    pub fn measure(&self, x_prev: &LocalSpectra, x_t: &LocalSpectra) -> Result<VelocityField> {
        let pd = phase_diff(x_t, x_prev, self.config.energy_floor)?;
        crate::phase_motion::extract_velocity(&pd, &x_t.magnitudes())
    }

    /// Refined velocities for the newest measurement `history[0]`; cells
    /// without energy are forced to zero motion.
    pub fn refine(&self, history: &[&VelocityField]) -> Result<VelocityField> {
        let newest = history[0];
        let mut out = match &self.model {
            TransformModel::Identity => newest.clone(),
            TransformModel::Learned(p) => {
                let input = assemble_input(history, p.arch.history)?;
                tm_forward(p, &input, newest)?.0
            }
        };
        zero_flagged(&mut out);
        Ok(out)
    }

    /// One prediction step. `history` holds earlier raw measurements, newest
    /// first, not including the one made here.
    pub fn predict_next_frame(&self, x_prev: &Image, x_t: &Image, history: &[VelocityField]) -> Result<Prediction> {
        let sp = self.spectra(x_prev)?;
        let st = self.spectra(x_t)?;
        self.predict_from_spectra(&sp, &st, history)
    }

    fn predict_from_spectra(&self, sp: &LocalSpectra, st: &LocalSpectra, history: &[VelocityField]) -> Result<Prediction> {
        let raw = self.measure(sp, st)?;
        let mut hist: Vec<&VelocityField> = vec![&raw];
        hist.extend(history.iter().take(self.history()));
        let refined = self.refine(&hist)?;
        let frame = self.transport(st, &refined)?;
        Ok(Prediction { frame, raw, refined })
    }

    /// Moves the content of `spectra` by `vf` and synthesizes the frame.
    pub fn transport(&self, spectra: &LocalSpectra, vf: &VelocityField) -> Result<Image> {
        let (pd, _) = velocity_to_pd(vf);
        let y = phase_add(spectra, &pd)?;
        Ok(crate::lft::m_ilft(&y, &self.window, &pd)?.clamp01())
    }

    /// Closed-loop prediction of `horizon` frames after `seeds`. Earlier seed
    /// pairs only prime the velocity history.
    pub fn rollout(&self, seeds: &[Image], horizon: usize) -> Result<Rollout> {
        ensure!(seeds.len() >= 2, Validation, "rollout needs at least 2 seed frames, got {}", seeds.len());
        let mut spectra: Vec<LocalSpectra> = seeds.iter().map(|s| self.spectra(s)).collect::<Result<_>>()?;
        let mut history: Vec<VelocityField> = Vec::new();
        for j in 1..seeds.len() - 1 {
            history.insert(0, self.measure(&spectra[j - 1], &spectra[j])?);
        }
        let mut out = Rollout::default();
        for step in 0..horizon {
            let n = spectra.len();
            let p = self.predict_from_spectra(&spectra[n - 2], &spectra[n - 1], &history)?;
            log::debug!(
                "step {step}: mean |v| measured {:.3}, refined {:.3}",
                mean_speed(&p.raw),
                mean_speed(&p.refined)
            );
            spectra.push(self.spectra(&p.frame)?);
            history.insert(0, p.raw.clone());
            history.truncate(self.history().max(1));
            out.frames.push(p.frame);
            out.raw.push(p.raw);
            out.refined.push(p.refined);
        }
        Ok(out)
    }
}

fn mean_speed(vf: &VelocityField) -> f64 {
    if vf.is_empty() {
        return 0.0;
    }
    vf.vx.iter().zip(&vf.vy).map(|(x, y)| x.hypot(*y)).sum::<f64>() / vf.len() as f64
}

fn zero_flagged(vf: &mut VelocityField) {
    for i in 0..vf.len() {
        if vf.flagged[i] {
            vf.vx[i] = 0.0;
            vf.vy[i] = 0.0;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub frame: Image,
    /// Velocities measured from the two input frames.
    pub raw: VelocityField,
    /// Velocities after the transform model, used for transport.
    pub refined: VelocityField,
}

#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub frames: Vec<Image>,
    pub raw: Vec<VelocityField>,
    pub refined: Vec<VelocityField>,
}

/// Weights of the rollout loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// DSSIM weight.
    pub alpha: f64,
    /// MSE weight.
    pub beta: f64,
    /// Per-step discount.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// Discounted mean DSSIM.
    pub dssim: f64,
    /// Discounted mean MSE.
    pub mse: f64,
}

struct Measurement {
    pd: PhaseDiffSet,
    energies: Vec<f64>,
    trace: VelocityTrace,
    raw: VelocityField,
}

struct StepTrace {
    input: Option<TMInput>,
    tm: Option<TMCache>,
    refined: VelocityField,
    pd: PhaseDiffSet,
    milft: MilftTrace,
    unclamped: Image,
}

/// Discounted rollout loss for predicting `targets` from `seeds` with the
/// learned `params`, and its gradient with respect to every parameter.
pub fn rollout_loss_and_grad(
    pred: &Predictor,
    params: &TMParams,
    seeds: &[Image],
    targets: &[Image],
    weights: LossWeights,
) -> Result<(LossParts, Vec<f64>)> {
    ensure!(seeds.len() >= 2, Validation, "training needs at least 2 seed frames");
    ensure!(!targets.is_empty(), Validation, "no target frames");
    let r = params.arch.history;
    let s = seeds.len();
    let horizon = targets.len();
    let mut frames: Vec<Image> = seeds.to_vec();
    let mut spectra: Vec<LocalSpectra> = seeds.iter().map(|f| pred.spectra(f)).collect::<Result<_>>()?;
    // meas[j] compares frames j-1 and j (meas[0] unused)
    let mut meas: Vec<Option<Measurement>> = vec![None];
    let measure = |sp: &LocalSpectra, st: &LocalSpectra| -> Result<Measurement> {
        let pd = phase_diff(st, sp, pred.config.energy_floor)?;
        let energies = st.magnitudes();
        let (raw, trace) = extract_velocity_traced(&pd, &energies)?;
        Ok(Measurement {
            pd,
            energies,
            trace,
            raw,
        })
    };
    for j in 1..s - 1 {
        meas.push(Some(measure(&spectra[j - 1], &spectra[j])?));
    }
    let hist_index = |j: usize, k: usize| j.saturating_sub(k).max(1);
    let mut steps = Vec::with_capacity(horizon);
    let mut loss = LossParts::default();
    let mut frame_grads: Vec<Image> = Vec::with_capacity(horizon);
    let t_norm = 1.0 / horizon as f64;
    for step in 0..horizon {
        let j = s - 1 + step;
        meas.push(Some(measure(&spectra[j - 1], &spectra[j])?));
        let hist: Vec<&VelocityField> = (0..=r)
            .map(|k| &meas[hist_index(j, k)].as_ref().expect("measured").raw)
            .collect();
        let newest = hist[0];
        let input = assemble_input(&hist, r)?;
        let (mut refined, cache) = tm_forward(params, &input, newest)?;
        zero_flagged(&mut refined);
        let (pd, _) = velocity_to_pd(&refined);
        let y = phase_add(&spectra[j], &pd)?;
        let (unclamped, milft) = m_ilft_traced(&y, &pred.window, &pd)?;
        let out = unclamped.clamp01();
        let target = &targets[step];
        ensure!(out.same_dims(target), Shape, "target frame size mismatch");
        let disc = weights.gamma.powi(step as i32) * t_norm;
        let (ssim_v, ssim_g) = ssim_with_grad(&out, target, weights.alpha != 0.0)?;
        let n = out.data().len() as f64;
        let mse: f64 = out.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let dssim = (1.0 - ssim_v) / 2.0;
        loss.dssim += disc * dssim;
        loss.mse += disc * mse;
        let mut g = Image::from_fn(out.rows(), out.cols(), |rr, cc| {
            weights.beta * disc * 2.0 * (out.get(rr, cc) - target.get(rr, cc)) / n
        });
        if let Some(sg) = ssim_g {
            for (gv, sv) in g.data_mut().iter_mut().zip(sg.data()) {
                *gv -= weights.alpha * disc * 0.5 * sv;
            }
        }
        frame_grads.push(g);
        spectra.push(pred.spectra(&out)?);
        frames.push(out);
        steps.push(StepTrace {
            input: Some(input),
            tm: Some(cache),
            refined,
            pd,
            milft,
            unclamped,
        });
    }
    loss.total = weights.alpha * loss.dssim + weights.beta * loss.mse;
    if !loss.total.is_finite() {
        return Err(crate::Error::Numerical("rollout loss is not finite".into()));
    }

    let bins = pred.grid.cells() * pred.grid.bins();
    let mut g_spec: Vec<Vec<Complex64>> = vec![vec![Complex64::default(); bins]; frames.len()];
    let l = pred.grid.cells();
    let mut g_meas: Vec<VelocityField> = (0..meas.len()).map(|_| VelocityField::zeros(pred.grid)).collect();
    let mut g_params = vec![0.0; params.values.len()];
    for step in (0..horizon).rev() {
        let j = s - 1 + step;
        let tr = &steps[step];
        let f = j + 1;
        let mut g_img = lft_adjoint(&g_spec[f], &pred.grid, &pred.window);
        for (gv, lv) in g_img.data_mut().iter_mut().zip(frame_grads[step].data()) {
            *gv += lv;
        }
        for (gv, &u) in g_img.data_mut().iter_mut().zip(tr.unclamped.data()) {
            if !(0.0..=1.0).contains(&u) {
                *gv = 0.0;
            }
        }
        let (gy, gpd_w) = m_ilft_backward(&tr.milft, &pred.grid, &pred.window, &g_img);
        let (gx, gpd_a) = phase_add_backward(&spectra[j], &tr.pd, &gy);
        for (a, b) in g_spec[j].iter_mut().zip(&gx) {
            *a += b;
        }
        let gpd: Vec<Complex64> = gpd_w.iter().zip(&gpd_a).map(|(a, b)| a + b).collect();
        let (mut gvx, mut gvy) = velocity_to_pd_backward(&tr.refined, &tr.pd, &gpd);
        for i in 0..l {
            if tr.refined.flagged[i] {
                gvx[i] = 0.0;
                gvy[i] = 0.0;
            }
        }
        let input = tr.input.as_ref().expect("traced input");
        let tg = tm_backward(params, input, tr.tm.as_ref().expect("traced cache"), &gvx, &gvy);
        for (a, b) in g_params.iter_mut().zip(&tg.params) {
            *a += b;
        }
        for k in 0..=r {
            let dst = &mut g_meas[hist_index(j, k)];
            let base = 4 * k * l;
            for i in 0..l {
                dst.vx[i] += tg.input[base + i];
                dst.vy[i] += tg.input[base + l + i];
                dst.var_x[i] += tg.input[base + 2 * l + i];
                dst.var_y[i] += tg.input[base + 3 * l + i];
            }
        }
        // measurement j is final now; only predicted frames carry gradient
        if j >= s {
            let m = meas[j].as_ref().expect("measured");
            let (gpd_m, g_en) = extract_velocity_backward(&m.pd, &m.energies, &m.trace, &g_meas[j]);
            let (g_t, g_p) = phase_diff_backward(&spectra[j], &spectra[j - 1], &m.pd, &gpd_m);
            let g_mag = magnitude_backward(&spectra[j], &g_en);
            for i in 0..bins {
                g_spec[j][i] += g_t[i] + g_mag[i];
                g_spec[j - 1][i] += g_p[i];
            }
        }
    }
    Ok((loss, g_params))
}

/// Loss of the same rollout without gradients.
pub fn rollout_loss(pred: &Predictor, seeds: &[Image], targets: &[Image], weights: LossWeights) -> Result<LossParts> {
    let roll = pred.rollout(seeds, targets.len())?;
    let t_norm = 1.0 / targets.len() as f64;
    let mut loss = LossParts::default();
    for (step, (out, target)) in roll.frames.iter().zip(targets).enumerate() {
        let disc = weights.gamma.powi(step as i32) * t_norm;
        let m = crate::harness::metrics::compute_metrics(out, target)?;
        loss.dssim += disc * m.dssim;
        loss.mse += disc * m.mse;
    }
    loss.total = weights.alpha * loss.dssim + weights.beta * loss.mse;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform_model::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(rows: usize, cols: usize, cy: f64, cx: f64) -> Image {
        Image::from_fn(rows, cols, |r, c| {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            (-d2 / 8.0).exp()
        })
    }

    #[test]
    fn static_scene_is_kept() {
        let p = Predictor::new(PredictorConfig::default(), TransformModel::Identity, 64, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Image::from_fn(64, 64, |_, _| rng.gen::<f64>());
        let out = p.predict_next_frame(&x, &x, &[]).unwrap();
        assert!(out.frame.max_abs_diff(&x) <= 1e-3);
        let roll = p.rollout(&[x.clone(), x.clone()], 3).unwrap();
        assert_eq!(roll.frames.len(), 3);
        assert!(roll.frames.iter().all(|f| f.max_abs_diff(&x) <= 1e-2));
        assert!(p.rollout(&[x.clone(), x.clone()], 0).unwrap().frames.is_empty());
        assert!(p.rollout(&[x], 1).is_err());
    }

    #[test]
    fn empty_cells_do_not_move() {
        let p = Predictor::new(PredictorConfig::default(), TransformModel::Identity, 64, 64).unwrap();
        let a = blob(64, 64, 20.0, 20.0);
        let b = blob(64, 64, 20.0, 22.0);
        let out = p.predict_next_frame(&a, &b, &[]).unwrap();
        let far = 11 * p.grid.cells_v + 11;
        assert!(out.raw.flagged[far]);
        assert_eq!((out.refined.vx[far], out.refined.vy[far]), (0.0, 0.0));
        assert!(out.frame.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let cfg = PredictorConfig {
            window: 9,
            stride: 8,
            pad: 2,
            ..PredictorConfig::default()
        };
        let p = Predictor::new(cfg, TransformModel::Identity, 17, 17).unwrap();
        let arch = Architecture {
            layers: 2,
            growth: 2,
            history: 1,
        };
        let mut params = TMParams::init(arch, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in params.projection_range() {
            params.values[i] = rng.gen_range(-0.05..0.05);
        }
        let frames: Vec<Image> = (0..5).map(|t| blob(17, 17, 8.0 + 0.6 * t as f64, 7.0 + 0.9 * t as f64)).collect();
        let w = LossWeights::default();
        let (_, g) = rollout_loss_and_grad(&p, &params, &frames[..2], &frames[2..], w).unwrap();
        let eval = |q: &TMParams| rollout_loss_and_grad(&p, q, &frames[..2], &frames[2..], w).unwrap().0.total;
        let h = 1e-5;
        let mut bad = 0;
        for i in 0..params.values.len() {
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi.values[i] += h;
            lo.values[i] -= h;
            let fd = (eval(&hi) - eval(&lo)) / (2.0 * h);
            if (fd - g[i]).abs() > 1e-3 * fd.abs().max(g[i].abs()) + 1e-6 {
                bad += 1;
            }
        }
        assert!(bad * 100 <= params.values.len(), "{bad} of {} disagree", params.values.len());
    }
}
