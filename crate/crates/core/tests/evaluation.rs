use lfdtn::harness::scene::{Background, SpriteSpec};
use lfdtn::harness::{evaluate_run, gen_sequence, SceneConfig};
use lfdtn::Image;

fn translating_scene() -> Vec<Image> {
    let cfg = SceneConfig {
        seed: 3,
        sprites: vec![SpriteSpec {
            position: [30.0, 20.0],
            velocity: [2.0, 1.0],
            ..SpriteSpec::default()
        }],
        background: Background::Black,
        ..SceneConfig::default()
    };
    gen_sequence(&cfg).unwrap().frames
}

#[test]
fn copy_last_is_worse_than_exact_shift() {
    let gt = translating_scene();
    let mut copy = gt[..2].to_vec();
    let mut shift = gt[..2].to_vec();
    for t in 2..gt.len() {
        copy.push(gt[1].clone());
        shift.push(gt[t - 1].shifted(1, 2, 0.0));
    }
    let a = evaluate_run(&copy, &gt, 2).unwrap();
    let b = evaluate_run(&shift, &gt, 2).unwrap();
    assert_eq!(a.rows.len(), 8);
    assert!(b.mean.l1 < a.mean.l1);
    assert!(b.mean.mse < a.mean.mse);
    assert!(b.mean.dssim < a.mean.dssim);
    assert!(b.mean.psnr > a.mean.psnr);
}

#[test]
fn exact_prediction_scores_zero() {
    let gt = translating_scene();
    let e = evaluate_run(&gt, &gt, 2).unwrap();
    assert_eq!((e.mean.l1, e.mean.mse, e.mean.dssim), (0.0, 0.0, 0.0));
    assert_eq!(e.to_csv().lines().count(), 1 + 8 + 1);
    assert!(evaluate_run(&gt[..5], &gt, 2).is_err());
}
