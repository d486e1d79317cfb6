//! Quick invariant checks run by `lfdtn selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::metrics::compute_metrics;
use super::scene::{gen_sequence, Background, SceneConfig};
use crate::image::Image;
use crate::lft::{frame_spectrum, ilft, lft, m_ilft, make_window, plan_grid, WindowKind};
use crate::motion_seg::{composite, seg_correct, seg_predict, SegConfig, SegState};
use crate::phase_motion::{extract_velocity, phase_add, phase_diff, poc, velocity_to_pd, PhaseDiffSet, VelocityField, DEFAULT_ENERGY_FLOOR};
use crate::predictor::{Predictor, PredictorConfig};
use crate::transform_model::TransformModel;

type Check = fn() -> std::result::Result<(), String>;

fn random(seed: u64, rows: usize, cols: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(rows, cols, |_, _| rng.gen::<f64>())
}

fn fail(msg: impl Into<String>) -> std::result::Result<(), String> {
    Err(msg.into())
}

fn round_trip() -> std::result::Result<(), String> {
    let w = make_window(WindowKind::ConfinedGaussian, 15, 0.3).map_err(|e| e.to_string())?;
    let g = plan_grid(64, 64, 15, 7, 4).map_err(|e| e.to_string())?;
    for s in 0..5 {
        let x = random(s, 64, 64);
        let y = ilft(&lft(&x, &g, &w).map_err(|e| e.to_string())?, &w).map_err(|e| e.to_string())?;
        let err = y.max_abs_diff(&x);
        if err > 1e-5 {
            return fail(format!("frame {s}: max error {err:e}"));
        }
    }
    Ok(())
}

fn linearity() -> std::result::Result<(), String> {
    let w = make_window(WindowKind::ConfinedGaussian, 15, 0.3).map_err(|e| e.to_string())?;
    let g = plan_grid(29, 29, 15, 7, 4).map_err(|e| e.to_string())?;
    let (a, b) = (random(1, 29, 29), random(2, 29, 29));
    let mix = Image::from_fn(29, 29, |r, c| 0.7 * a.get(r, c) - 1.3 * b.get(r, c));
    let (la, lb, lm) = (lft(&a, &g, &w).unwrap(), lft(&b, &g, &w).unwrap(), lft(&mix, &g, &w).unwrap());
    for i in 0..lm.cells.len() {
        if (lm.cells[i] - (la.cells[i] * 0.7 - lb.cells[i] * 1.3)).norm() > 1e-9 {
            return fail(format!("bin {i} differs"));
        }
    }
    Ok(())
}

fn unit_magnitude() -> std::result::Result<(), String> {
    let w = make_window(WindowKind::ConfinedGaussian, 15, 0.3).unwrap();
    let g = plan_grid(29, 29, 15, 7, 4).unwrap();
    let pd = phase_diff(
        &lft(&random(3, 29, 29), &g, &w).unwrap(),
        &lft(&random(4, 29, 29), &g, &w).unwrap(),
        DEFAULT_ENERGY_FLOOR,
    )
    .map_err(|e| e.to_string())?;
    match pd.cells.iter().find(|z| (z.norm() - 1.0).abs() > 1e-6) {
        Some(z) => fail(format!("|pd| = {}", z.norm())),
        None => Ok(()),
    }
}

fn poc_integer_shifts() -> std::result::Result<(), String> {
    let n = 32;
    let x = random(5, n, n);
    let base = frame_spectrum(&x).unwrap();
    for dr in -7i64..=7 {
        for dc in -7i64..=7 {
            let y = Image::from_fn(n, n, |r, c| {
                x.get((r as i64 - dr).rem_euclid(n as i64) as usize, (c as i64 - dc).rem_euclid(n as i64) as usize)
            });
            let pd = phase_diff(&frame_spectrum(&y).unwrap(), &base, DEFAULT_ENERGY_FLOOR).unwrap();
            let p = poc(&pd.cells, n).map_err(|e| e.to_string())?;
            if (p.d_row, p.d_col) != (dr, dc) {
                return fail(format!("shift ({dr},{dc}) read as ({},{})", p.d_row, p.d_col));
            }
        }
    }
    Ok(())
}

fn shift_fidelity() -> std::result::Result<(), String> {
    let w = make_window(WindowKind::ConfinedGaussian, 15, 0.3).unwrap();
    let g = plan_grid(64, 64, 15, 7, 4).unwrap();
    let x = random(6, 64, 64);
    let s = lft(&x, &g, &w).unwrap();
    for (vx, vy) in [(2.0, 1.0), (-3.0, 0.0), (4.0, -4.0)] {
        let (pd, _) = velocity_to_pd(&VelocityField::uniform(g, vx, vy));
        let y = m_ilft(&phase_add(&s, &pd).unwrap(), &w, &pd).map_err(|e| e.to_string())?;
        let err = y.max_abs_diff_interior(&x.shifted(vy as isize, vx as isize, 0.0), 8);
        if err > 1e-4 {
            return fail(format!("v ({vx},{vy}): interior error {err:e}"));
        }
    }
    Ok(())
}

fn bottleneck_round_trip() -> std::result::Result<(), String> {
    let g = plan_grid(29, 29, 15, 7, 4).unwrap();
    let limit = g.padded as f64 / 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut vf = VelocityField::zeros(g);
    for i in 0..vf.len() {
        vf.vx[i] = rng.gen_range(-limit..limit);
        vf.vy[i] = rng.gen_range(-limit..limit);
    }
    let (pd, _) = velocity_to_pd(&vf);
    let back = extract_velocity(&pd, &vec![1.0; pd.cells.len()]).map_err(|e| e.to_string())?;
    for i in 0..vf.len() {
        let err = (back.vx[i] - vf.vx[i]).abs().max((back.vy[i] - vf.vy[i]).abs());
        if err > 1e-6 {
            return fail(format!("cell {i}: error {err:e}"));
        }
    }
    Ok(())
}

fn phase_add_composition() -> std::result::Result<(), String> {
    let w = make_window(WindowKind::ConfinedGaussian, 15, 0.3).unwrap();
    let g = plan_grid(29, 29, 15, 7, 4).unwrap();
    let x = lft(&random(8, 29, 29), &g, &w).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut phasors = || {
        let mut pd = PhaseDiffSet::identity(g);
        pd.cells.iter_mut().for_each(|z| *z = Complex64::from_polar(1.0, rng.gen_range(-3.0..3.0)));
        pd
    };
    let (a, b) = (phasors(), phasors());
    let mut ab = a.clone();
    for (z, y) in ab.cells.iter_mut().zip(&b.cells) {
        *z *= y;
    }
    let lhs = phase_add(&phase_add(&x, &a).unwrap(), &b).unwrap();
    let rhs = phase_add(&x, &ab).unwrap();
    let err = lhs.cells.iter().zip(&rhs.cells).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
    if err > 1e-9 {
        return fail(format!("max difference {err:e}"));
    }
    Ok(())
}

fn metric_bounds() -> std::result::Result<(), String> {
    for s in 0..5 {
        let (a, b) = (random(s, 24, 24), random(s + 50, 24, 24));
        let (m, r) = (compute_metrics(&a, &b).unwrap(), compute_metrics(&b, &a).unwrap());
        if !(0.0..=1.0).contains(&m.dssim) || (m.dssim - r.dssim).abs() > 1e-9 {
            return fail(format!("dssim {} vs {}", m.dssim, r.dssim));
        }
        if ![m.l1, m.mse, m.bce, m.psnr].iter().all(|v| v.is_finite()) {
            return fail("non-finite metric");
        }
    }
    Ok(())
}

fn generator_determinism() -> std::result::Result<(), String> {
    let cfg = SceneConfig {
        seed: 11,
        background: Background::texture(3),
        ..SceneConfig::default()
    };
    let (a, b) = (gen_sequence(&cfg).unwrap(), gen_sequence(&cfg).unwrap());
    if a.frames != b.frames || a.truth != b.truth {
        return fail("two runs with one seed differ");
    }
    Ok(())
}

fn static_prediction() -> std::result::Result<(), String> {
    let p = Predictor::new(PredictorConfig::default(), TransformModel::Identity, 64, 64).map_err(|e| e.to_string())?;
    let x = random(12, 64, 64);
    let out = p.predict_next_frame(&x, &x, &[]).map_err(|e| e.to_string())?;
    let err = out.frame.max_abs_diff_interior(&x, 8);
    if err > 1e-3 {
        return fail(format!("interior error {err:e}"));
    }
    Ok(())
}

fn segmentation_fixed_point() -> std::result::Result<(), String> {
    let p = Predictor::new(PredictorConfig::default(), TransformModel::Identity, 36, 36).map_err(|e| e.to_string())?;
    let state = SegState {
        fg: random(13, 36, 36),
        bg: random(14, 36, 36),
        alpha: random(15, 36, 36),
        lt: PhaseDiffSet::identity(p.grid),
    };
    let pr = seg_predict(&state, &p).map_err(|e| e.to_string())?;
    let cfg = SegConfig {
        lambda_a: 0.0,
        ..SegConfig::default()
    };
    let next = seg_correct(&state, &pr, &pr.frame, &cfg).map_err(|e| e.to_string())?;
    if next.fg != pr.fg || next.bg != state.bg || next.alpha != pr.alpha {
        return fail("perfect prediction changed the state");
    }
    let f = composite(&state.fg, &state.bg, &Image::filled(36, 36, 1.0)).unwrap();
    if f != state.fg {
        return fail("opaque composite differs from the foreground");
    }
    Ok(())
}

const CHECKS: &[(&str, Check)] = &[
    ("lft_round_trip", round_trip),
    ("lft_linearity", linearity),
    ("phase_diff_unit_magnitude", unit_magnitude),
    ("poc_integer_shifts", poc_integer_shifts),
    ("phase_add_shift_fidelity", shift_fidelity),
    ("velocity_bottleneck_round_trip", bottleneck_round_trip),
    ("phase_add_composition", phase_add_composition),
    ("metric_bounds", metric_bounds),
    ("generator_determinism", generator_determinism),
    ("static_scene_prediction", static_prediction),
    ("segmentation_fixed_point", segmentation_fixed_point),
];

/// Runs every check, printing one PASS/FAIL line each. True if all pass.
pub fn run_all() -> bool {
    let mut ok = true;
    for (name, check) in CHECKS {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                ok = false;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    ok
}
