use lfdtn::harness::scene::{Background, SpriteSpec};
use lfdtn::harness::{compute_metrics, gen_sequence, SceneConfig};
use lfdtn::predictor::{Predictor, PredictorConfig};
use lfdtn::transform_model::TransformModel;
use lfdtn::Image;

fn identity() -> Predictor {
    Predictor::new(PredictorConfig::default(), TransformModel::Identity, 64, 64).unwrap()
}

fn scene(sprites: Vec<SpriteSpec>, frames: usize) -> lfdtn::harness::Scene {
    gen_sequence(&SceneConfig {
        frames,
        sprites,
        background: Background::Black,
        ..SceneConfig::default()
    })
    .unwrap()
}

fn disc(row: f64, col: f64, vx: f64, vy: f64) -> SpriteSpec {
    SpriteSpec {
        position: [row, col],
        velocity: [vx, vy],
        ..SpriteSpec::default()
    }
}

fn centroid(img: &Image) -> (f64, f64) {
    let (mut m, mut r, mut c) = (0.0, 0.0, 0.0);
    for i in 0..img.rows() {
        for j in 0..img.cols() {
            let v = img.get(i, j);
            m += v;
            r += v * i as f64;
            c += v * j as f64;
        }
    }
    (r / m, c / m)
}

#[test]
fn opposite_sprites_get_their_own_velocities() {
    let s = scene(vec![disc(20.0, 20.0, 2.0, 0.0), disc(44.0, 44.0, -2.0, 0.0)], 3);
    let p = identity();
    let out = p.predict_next_frame(&s.frames[0], &s.frames[1], &[]).unwrap();
    let labels = &s.truth.velocity[1];
    let mut checked = 0;
    for (i, &[vx, vy]) in labels.iter().enumerate() {
        if vx != 0.0 || vy != 0.0 {
            checked += 1;
            let (ex, ey) = (out.refined.vx[i] - vx, out.refined.vy[i] - vy);
            assert!(ex.abs() <= 0.3 && ey.abs() <= 0.3, "cell {i}: ({}, {}) vs ({vx}, {vy})", out.refined.vx[i], out.refined.vy[i]);
        }
    }
    assert!(checked > 0);
    let corner = p.grid.cells() - 1;
    assert!(out.raw.flagged[0] && out.raw.flagged[corner]);
}

#[test]
fn constant_velocity_sprite_rollout_stays_on_track() {
    let s = scene(vec![disc(32.0, 18.0, 1.5, 0.5)], 10);
    let roll = identity().rollout(&s.frames[..2], 8).unwrap();
    for (k, f) in roll.frames.iter().enumerate() {
        let t = k + 2;
        let truth = s.truth.poses[t][0];
        let (r, c) = centroid(f);
        let err = (r - truth.row).hypot(c - truth.col);
        let limit = if t - 1 <= 4 { 1.0 } else { 2.0 };
        assert!(err <= limit, "step {}: center off by {err:.2} px", t - 1);
    }
}

#[test]
fn rollout_error_grows_on_average() {
    let p = identity();
    let mut per_step = vec![0.0; 8];
    for seed in 0..50u64 {
        let f = gen_sequence(&SceneConfig { seed, ..SceneConfig::default() }).unwrap().frames;
        let roll = p.rollout(&f[..2], 8).unwrap();
        for (k, pred) in roll.frames.iter().enumerate() {
            per_step[k] += compute_metrics(pred, &f[k + 2]).unwrap().mse / 50.0;
        }
    }
    assert!(per_step.windows(2).all(|w| w[1] >= w[0]), "{per_step:?}");
}

#[test]
fn prediction_commutes_with_grid_aligned_shifts() {
    let s = scene(vec![disc(28.0, 26.0, 1.0, -1.0)], 2);
    let p = identity();
    let base = p.predict_next_frame(&s.frames[0], &s.frames[1], &[]).unwrap().frame;
    for (dr, dc) in [(7isize, 0isize), (0, 7), (-7, 7)] {
        let moved = p
            .predict_next_frame(&s.frames[0].shifted(dr, dc, 0.0), &s.frames[1].shifted(dr, dc, 0.0), &[])
            .unwrap()
            .frame;
        let err = moved.max_abs_diff_interior(&base.shifted(dr, dc, 0.0), p.grid.image_pad);
        assert!(err <= 1e-3, "shift ({dr},{dc}): {err:e}");
    }
}

#[test]
fn predictions_stay_in_range() {
    let p = identity();
    for seed in 0..5u64 {
        let f = gen_sequence(&SceneConfig {
            seed,
            background: Background::texture(seed),
            ..SceneConfig::default()
        })
        .unwrap()
        .frames;
        let roll = p.rollout(&f[..2], 4).unwrap();
        assert!(roll.frames.iter().all(|x| x.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}
