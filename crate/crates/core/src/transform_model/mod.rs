//! The transform model: a small DenseNet-style convolutional filter over the
//! cell grid that refines measured velocities.
//!
//! Input planes, newest time step first: `vx, vy, var_x, var_y` per step,
//! then two positional planes. Every hidden layer is a 3×3 same-size
//! convolution with zero padding followed by a per-channel PReLU, and sees
//! the input plus all earlier layer outputs. A 1×1 projection maps the full
//! stack to a two-channel residual that is added to the newest velocities.

pub mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::phase_motion::VelocityField;
use crate::tensor_io::{read_json, read_tensor, write_json, write_tensor, TensorFile};

pub use train::{train, TrainConfig, TrainLogRow, TrainOutcome};

const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Hidden 3×3 layers.
    pub layers: usize,
    /// Output channels per hidden layer.
    pub growth: usize,
    /// Earlier time steps fed alongside the newest one.
    pub history: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            layers: 2,
            growth: 8,
            history: 1,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (2..=4).contains(&self.layers),
            Validation,
            "transform model needs 2 to 4 layers, got {}",
            self.layers
        );
        ensure!(self.growth >= 1, Validation, "growth must be positive");
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        4 * (self.history + 1) + 2
    }

    fn layer_inputs(&self, i: usize) -> usize {
        self.input_channels() + i * self.growth
    }

    fn stack_channels(&self) -> usize {
        self.layer_inputs(self.layers)
    }

    /// Exact number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let hidden: usize = (0..self.layers)
            .map(|i| self.growth * self.layer_inputs(i) * 9 + 2 * self.growth)
            .sum();
        hidden + 2 * self.stack_channels() + 2
    }
}

/// Offsets of one hidden layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    inputs: usize,
    kernel: usize,
    bias: usize,
    slope: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    layers: [LayerSlots; 4],
    proj: usize,
    proj_bias: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut at = 0;
        let mut layers = [LayerSlots {
            inputs: 0,
            kernel: 0,
            bias: 0,
            slope: 0,
        }; 4];
        for (i, slot) in layers.iter_mut().enumerate().take(arch.layers) {
            let inputs = arch.layer_inputs(i);
            slot.inputs = inputs;
            slot.kernel = at;
            at += arch.growth * inputs * 9;
            slot.bias = at;
            at += arch.growth;
            slot.slope = at;
            at += arch.growth;
        }
        let proj = at;
        at += 2 * arch.stack_channels();
        let proj_bias = at;
        at += 2;
        Self {
            layers,
            proj,
            proj_bias,
            total: at,
        }
    }
}

/// Trainable parameters stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TMParams {
    pub arch: Architecture,
    pub values: Vec<f64>,
}

impl TMParams {
    /// He-style random hidden kernels, zero biases, PReLU slopes 0.25 and a
    /// zero final projection so the model starts as the identity.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut values = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in &layout.layers[..arch.layers] {
            let bound = (6.0 / (slot.inputs * 9) as f64).sqrt();
            for v in &mut values[slot.kernel..slot.bias] {
                *v = rng.gen_range(-bound..bound);
            }
            for v in &mut values[slot.slope..slot.slope + arch.growth] {
                *v = PRELU_INIT;
            }
        }
        Ok(Self { arch, values })
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.arch)
    }

    /// Range of the final projection weights and bias.
    pub fn projection_range(&self) -> std::ops::Range<usize> {
        let l = self.layout();
        l.proj..l.total
    }

    /// Writes `<path>` (LFDT, flat f32 values) and `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>, sidecar: serde_json::Value) -> Result<()> {
        let path = path.as_ref();
        let t = TensorFile::from_f64(vec![self.values.len() as u32], &self.values)?;
        write_tensor(&t, path)?;
        let meta = serde_json::json!({
            "architecture": self.arch,
            "param_count": self.param_count(),
            "info": sidecar,
        });
        write_json(&meta, sidecar_path(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: serde_json::Value = read_json(sidecar_path(path))?;
        let arch: Architecture = serde_json::from_value(meta["architecture"].clone())
            .map_err(|e| crate::Error::json(sidecar_path(path), e))?;
        arch.validate()?;
        let t = read_tensor(path)?;
        ensure!(
            t.data.len() == arch.param_count(),
            Shape,
            "{} holds {} values, architecture needs {}",
            path.display(),
            t.data.len(),
            arch.param_count()
        );
        Ok(Self {
            arch,
            values: t.data.iter().map(|&v| v as f64).collect(),
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Channel-major planes over the cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TMInput {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// Set when the history was shorter than requested and got padded.
    pub stale: bool,
}

impl TMInput {
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Stacks `history` (newest first) into the model input, repeating the
/// oldest field when fewer than `r + 1` are available.
pub fn assemble_input(history: &[&VelocityField], r: usize) -> Result<TMInput> {
    ensure!(!history.is_empty(), Validation, "velocity history is empty");
    let grid = history[0].grid;
    ensure!(
        history.iter().all(|v| v.grid == grid),
        Shape,
        "velocity history mixes grids"
    );
    let (rows, cols) = (grid.cells_u, grid.cells_v);
    let n = rows * cols;
    let channels = 4 * (r + 1) + 2;
    let mut data = Vec::with_capacity(channels * n);
    let stale = history.len() < r + 1;
    if stale {
        log::debug!("velocity history has {} of {} steps; repeating oldest", history.len(), r + 1);
    }
    for step in 0..=r {
        let vf = history[step.min(history.len() - 1)];
        data.extend_from_slice(&vf.vx);
        data.extend_from_slice(&vf.vy);
        data.extend_from_slice(&vf.var_x);
        data.extend_from_slice(&vf.var_y);
    }
    let norm = |i: usize, len: usize| {
        if len > 1 {
            2.0 * i as f64 / (len - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    for i in 0..rows {
        data.extend(std::iter::repeat(norm(i, rows)).take(cols));
    }
    for _ in 0..rows {
        data.extend((0..cols).map(|j| norm(j, cols)));
    }
    Ok(TMInput {
        rows,
        cols,
        channels,
        data,
        stale,
    })
}

/// Activations kept for [`tm_backward`].
#[derive(Debug, Clone)]
pub struct TMCache {
    /// Input plus every hidden layer's activated output, channel-major.
    stack: Vec<f64>,
    /// Hidden pre-activations, layer after layer.
    pre: Vec<f64>,
}

/// Refined velocities: newest input velocities plus the learned residual.
/// Dispersions and flags pass through from `newest`.
pub fn tm_forward(params: &TMParams, input: &TMInput, newest: &VelocityField) -> Result<(VelocityField, TMCache)> {
    let arch = params.arch;
    ensure!(
        input.channels == arch.input_channels(),
        Shape,
        "model expects {} input channels, got {}",
        arch.input_channels(),
        input.channels
    );
    ensure!(
        newest.rows() == input.rows && newest.cols() == input.cols,
        Shape,
        "velocity field does not match model input grid"
    );
    let (rows, cols) = (input.rows, input.cols);
    let n = rows * cols;
    let layout = params.layout();
    let w = &params.values;
    let mut stack = vec![0.0; arch.stack_channels() * n];
    stack[..input.data.len()].copy_from_slice(&input.data);
    let mut pre = vec![0.0; arch.layers * arch.growth * n];
    for (li, slot) in layout.layers[..arch.layers].iter().enumerate() {
        let out_base = slot.inputs * n;
        for o in 0..arch.growth {
            let z = &mut pre[(li * arch.growth + o) * n..(li * arch.growth + o + 1) * n];
            z.iter_mut().for_each(|v| *v = w[slot.bias + o]);
            for ci in 0..slot.inputs {
                let k = &w[slot.kernel + (o * slot.inputs + ci) * 9..][..9];
                let src = &stack[ci * n..(ci + 1) * n];
                conv3x3_acc(src, k, z, rows, cols);
            }
            let a = w[slot.slope + o];
            for p in 0..n {
                let v = z[p];
                stack[out_base + o * n + p] = if v > 0.0 { v } else { a * v };
            }
        }
    }
    let ch = arch.stack_channels();
    let mut out = newest.clone();
    for p in 0..n {
        let (mut dx, mut dy) = (w[layout.proj_bias], w[layout.proj_bias + 1]);
        for c in 0..ch {
            let f = stack[c * n + p];
            dx += w[layout.proj + c] * f;
            dy += w[layout.proj + ch + c] * f;
        }
        out.vx[p] += dx;
        out.vy[p] += dy;
    }
    Ok((out, TMCache { stack, pre }))
}

/// `dst[r, c] += Σ k[i, j]·src[r + i - 1, c + j - 1]` with zero padding.
fn conv3x3_acc(src: &[f64], k: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    for i in 0..3 {
        for j in 0..3 {
            let kv = k[i * 3 + j];
            if kv == 0.0 {
                continue;
            }
            let (r0, r1) = (1usize.saturating_sub(i), (rows + 1 - i).min(rows));
            let (c0, c1) = (1usize.saturating_sub(j), (cols + 1 - j).min(cols));
            for r in r0..r1 {
                let sr = r + i - 1;
                let d = &mut dst[r * cols..(r + 1) * cols];
                let s = &src[sr * cols..(sr + 1) * cols];
                for c in c0..c1 {
                    d[c] += kv * s[c + j - 1];
                }
            }
        }
    }
}

/// Gradients produced by [`tm_backward`].
#[derive(Debug, Clone)]
pub struct TMGrads {
    pub params: Vec<f64>,
    /// Gradient on every input plane, channel-major like [`TMInput::data`].
    pub input: Vec<f64>,
}

/// Reverse pass of [`tm_forward`] for upstream gradients on the refined
/// `vx`, `vy`. The identity path to the newest velocities is included in
/// the input gradient (channels 0 and 1).
pub fn tm_backward(params: &TMParams, input: &TMInput, cache: &TMCache, grad_vx: &[f64], grad_vy: &[f64]) -> TMGrads {
    let arch = params.arch;
    let (rows, cols) = (input.rows, input.cols);
    let n = rows * cols;
    let layout = params.layout();
    let w = &params.values;
    let ch = arch.stack_channels();
    let mut gp = vec![0.0; w.len()];
    let mut gs = vec![0.0; ch * n];
    for p in 0..n {
        let (gx, gy) = (grad_vx[p], grad_vy[p]);
        gp[layout.proj_bias] += gx;
        gp[layout.proj_bias + 1] += gy;
        for c in 0..ch {
            let f = cache.stack[c * n + p];
            gp[layout.proj + c] += gx * f;
            gp[layout.proj + ch + c] += gy * f;
            gs[c * n + p] += w[layout.proj + c] * gx + w[layout.proj + ch + c] * gy;
        }
    }
    let mut gz = vec![0.0; n];
    for li in (0..arch.layers).rev() {
        let slot = layout.layers[li];
        let out_base = slot.inputs * n;
        for o in 0..arch.growth {
            let z = &cache.pre[(li * arch.growth + o) * n..(li * arch.growth + o + 1) * n];
            let a = w[slot.slope + o];
            let mut ga = 0.0;
            for p in 0..n {
                let g = gs[out_base + o * n + p];
                if z[p] > 0.0 {
                    gz[p] = g;
                } else {
                    gz[p] = a * g;
                    ga += g * z[p];
                }
            }
            gp[slot.slope + o] += ga;
            gp[slot.bias + o] += gz.iter().sum::<f64>();
            for ci in 0..slot.inputs {
                let kofs = slot.kernel + (o * slot.inputs + ci) * 9;
                let src = &cache.stack[ci * n..(ci + 1) * n];
                for i in 0..3 {
                    for j in 0..3 {
                        let (r0, r1) = (1usize.saturating_sub(i), (rows + 1 - i).min(rows));
                        let (c0, c1) = (1usize.saturating_sub(j), (cols + 1 - j).min(cols));
                        let kv = w[kofs + i * 3 + j];
                        let mut acc = 0.0;
                        for r in r0..r1 {
                            let sr = r + i - 1;
                            for c in c0..c1 {
                                let g = gz[r * cols + c];
                                let si = sr * cols + c + j - 1;
                                acc += g * src[si];
                                gs[ci * n + si] += kv * g;
                            }
                        }
                        gp[kofs + i * 3 + j] += acc;
                    }
                }
            }
        }
    }
    let mut gin = gs[..input.channels * n].to_vec();
    for p in 0..n {
        gin[p] += grad_vx[p];
        gin[n + p] += grad_vy[p];
    }
    TMGrads { params: gp, input: gin }
}

/// Velocity filter used by the predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformModel {
    /// Passes measured velocities through unchanged.
    Identity,
    Learned(TMParams),
}

impl TransformModel {
    pub fn history(&self) -> usize {
        match self {
            TransformModel::Identity => 0,
            TransformModel::Learned(p) => p.arch.history,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lft::plan_grid;

    fn grid() -> crate::lft::GridSpec {
        plan_grid(29, 29, 15, 7, 4).unwrap()
    }

    fn random_field(seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vf = VelocityField::zeros(grid());
        for i in 0..vf.len() {
            vf.vx[i] = rng.gen_range(-2.0..2.0);
            vf.vy[i] = rng.gen_range(-2.0..2.0);
            vf.var_x[i] = rng.gen_range(0.0..1.0);
            vf.var_y[i] = rng.gen_range(0.0..1.0);
        }
        vf
    }

    #[test]
    fn channel_counts() {
        let a = random_field(1);
        let b = random_field(2);
        assert_eq!(assemble_input(&[&a], 0).unwrap().channels, 6);
        assert_eq!(assemble_input(&[&a, &b], 1).unwrap().channels, 10);
        let x = assemble_input(&[&a], 2).unwrap();
        assert_eq!(x.channels, 14);
        assert!(x.stale);
        assert_eq!(x.plane(0), x.plane(8));
        assert!(assemble_input(&[], 1).is_err());
    }

    #[test]
    fn positional_planes_are_constant() {
        let a = assemble_input(&[&random_field(1)], 0).unwrap();
        let b = assemble_input(&[&random_field(2)], 0).unwrap();
        assert_eq!(a.plane(4), b.plane(4));
        assert_eq!(a.plane(5), b.plane(5));
        assert_eq!(a.plane(4)[0], -1.0);
        assert_eq!(*a.plane(5).last().unwrap(), 1.0);
    }

    #[test]
    fn default_param_count() {
        let arch = Architecture::default();
        // 8·10·9 + 16, 8·18·9 + 16, 2·26 + 2
        assert_eq!(arch.param_count(), 736 + 1312 + 54);
        let p = TMParams::init(arch, 0).unwrap();
        assert_eq!(p.param_count(), 2102);
        for (d, g, r) in [(3, 4, 0), (4, 6, 2)] {
            let a = Architecture {
                layers: d,
                growth: g,
                history: r,
            };
            let cin = 4 * (r + 1) + 2;
            let want: usize = (0..d).map(|i| g * (cin + i * g) * 9 + 2 * g).sum::<usize>() + 2 * (cin + d * g) + 2;
            assert_eq!(TMParams::init(a, 0).unwrap().param_count(), want);
        }
    }

    #[test]
    fn zero_projection_is_identity() {
        let p = TMParams::init(Architecture::default(), 3).unwrap();
        let a = random_field(4);
        let b = random_field(5);
        let x = assemble_input(&[&a, &b], 1).unwrap();
        let (out, _) = tm_forward(&p, &x, &a).unwrap();
        assert_eq!(out, a);
        let z = VelocityField::zeros(grid());
        let (out, _) = tm_forward(&p, &assemble_input(&[&z], 1).unwrap(), &z).unwrap();
        assert!(out.vx.iter().chain(&out.vy).all(|&v| v == 0.0));
    }

    #[test]
    fn projection_bias_gradient_is_spatial_sum() {
        let p = TMParams::init(Architecture::default(), 3).unwrap();
        let a = random_field(6);
        let x = assemble_input(&[&a], 1).unwrap();
        let (_, cache) = tm_forward(&p, &x, &a).unwrap();
        let gx: Vec<f64> = (0..a.len()).map(|i| (i as f64 * 0.1).sin()).collect();
        let gy: Vec<f64> = (0..a.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let g = tm_backward(&p, &x, &cache, &gx, &gy);
        let r = p.projection_range();
        assert!((g.params[r.end - 2] - gx.iter().sum::<f64>()).abs() < 1e-12);
        assert!((g.params[r.end - 1] - gy.iter().sum::<f64>()).abs() < 1e-12);
        let zero = vec![0.0; a.len()];
        assert!(tm_backward(&p, &x, &cache, &zero, &zero).params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = Architecture {
            layers: 3,
            growth: 3,
            history: 1,
        };
        let mut p = TMParams::init(arch, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for i in p.projection_range() {
            p.values[i] = rng.gen_range(-0.5..0.5);
        }
        let a = random_field(11);
        let b = random_field(12);
        let x = assemble_input(&[&a, &b], 1).unwrap();
        let cx: Vec<f64> = (0..a.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cy: Vec<f64> = (0..a.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |p: &TMParams, x: &TMInput| {
            let mut newest = a.clone();
            newest.vx = x.plane(0).to_vec();
            newest.vy = x.plane(1).to_vec();
            let (o, _) = tm_forward(p, x, &newest).unwrap();
            o.vx.iter().zip(&cx).map(|(v, c)| v * c).sum::<f64>() + o.vy.iter().zip(&cy).map(|(v, c)| v * c).sum::<f64>()
        };
        let (_, cache) = tm_forward(&p, &x, &a).unwrap();
        let g = tm_backward(&p, &x, &cache, &cx, &cy);
        let h = 1e-3;
        let mut bad = 0;
        for i in 0..p.values.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi.values[i] += h;
            lo.values[i] -= h;
            let fd = (loss(&hi, &x) - loss(&lo, &x)) / (2.0 * h);
            if (fd - g.params[i]).abs() > 1e-3 * fd.abs().max(g.params[i].abs()) + 1e-6 {
                bad += 1;
            }
        }
        assert!(bad * 100 <= p.values.len(), "{bad} of {} parameters disagree", p.values.len());
        // input gradient on the newest velocity planes (identity path included)
        for c in [0usize, 1, 5, 9] {
            let n = x.rows * x.cols;
            let i = c * n + 17;
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi.data[i] += h;
            lo.data[i] -= h;
            let fd = (loss(&p, &hi) - loss(&p, &lo)) / (2.0 * h);
            assert!((fd - g.input[i]).abs() <= 1e-3 * fd.abs().max(1.0), "channel {c}: {fd} vs {}", g.input[i]);
        }
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lfdt");
        let mut p = TMParams::init(Architecture::default(), 1).unwrap();
        p.values.iter_mut().for_each(|v| *v = (*v as f32) as f64);
        p.save(&path, serde_json::json!({"epoch": 3})).unwrap();
        assert_eq!(TMParams::load(&path).unwrap(), p);
        assert!(dir.path().join("model.lfdt.json").exists());
    }
}
