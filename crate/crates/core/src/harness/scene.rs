//! Procedural scenes: bouncing sprites over a black or textured background,
//! rendered with bilinear sampling, with ground-truth poses, masks and
//! per-cell velocities.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::Image;
use crate::lft::{plan_grid, GridSpec};
use crate::tensor_io::{read_pgm, Frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disc { radius: f64 },
    /// Regular polygon with `vertices` corners on a circle of `radius`.
    Polygon { vertices: usize, radius: f64 },
    /// Built-in 5×7 digit scaled by `dot` pixels per font dot.
    Glyph { digit: u8, dot: f64 },
    /// Grayscale PGM used as the sprite's alpha.
    Stamp { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpriteSpec {
    pub shape: Shape,
    /// Center (row, col) in frame 0.
    pub position: [f64; 2],
    /// Pixels per frame as (vx, vy): x along columns, y along rows.
    pub velocity: [f64; 2],
    pub angle: f64,
    /// Degrees per frame.
    pub angular_velocity: f64,
    pub scale: f64,
    /// Multiplicative scale change per frame.
    pub scale_rate: f64,
    pub intensity: f64,
}

impl Default for SpriteSpec {
    fn default() -> Self {
        Self {
            shape: Shape::Disc { radius: 5.0 },
            position: [32.0, 32.0],
            velocity: [0.0, 0.0],
            angle: 0.0,
            angular_velocity: 0.0,
            scale: 1.0,
            scale_rate: 1.0,
            intensity: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Black,
    /// Sum of random low-frequency sinusoids around `base`, optionally
    /// translating by `velocity` (vx, vy) px/frame.
    Texture {
        seed: u64,
        components: usize,
        min_period: f64,
        max_period: f64,
        amplitude: f64,
        base: f64,
        velocity: [f64; 2],
    },
}

impl Background {
    pub fn texture(seed: u64) -> Self {
        Background::Texture {
            seed,
            components: 6,
            min_period: 8.0,
            max_period: 20.0,
            amplitude: 0.35,
            base: 0.5,
            velocity: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Bounce,
    Clamp,
}

/// Random sprites added when `sprites` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSprites {
    pub count: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Largest angular speed, degrees per frame.
    pub max_spin: f64,
    /// Largest relative scale change per frame.
    pub max_zoom: f64,
}

impl Default for RandomSprites {
    fn default() -> Self {
        Self {
            count: 2,
            min_size: 5.0,
            max_size: 8.0,
            min_speed: 0.5,
            max_speed: 2.5,
            max_spin: 0.0,
            max_zoom: 0.0,
        }
    }
}

/// Cell grid used to label ground-truth velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridParams {
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            window: 15,
            stride: 7,
            pad: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub seed_count: usize,
    pub seed: u64,
    pub sprites: Vec<SpriteSpec>,
    pub random: RandomSprites,
    pub background: Background,
    pub boundary: Boundary,
    pub grid: GridParams,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 10,
            seed_count: 2,
            seed: 0,
            sprites: Vec::new(),
            random: RandomSprites::default(),
            background: Background::Black,
            boundary: Boundary::Bounce,
            grid: GridParams::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.height >= 2 && self.width >= 2, Validation, "frame must be at least 2x2");
        ensure!(self.frames >= 1, Validation, "frame count must be positive");
        ensure!(
            self.seed_count >= 2 && self.seed_count <= self.frames,
            Validation,
            "seed_count must be in 2..={}, got {}",
            self.frames,
            self.seed_count
        );
        if self.sprites.is_empty() {
            let r = &self.random;
            ensure!(
                r.min_size > 0.0 && r.max_size >= r.min_size,
                Validation,
                "random sprite sizes must satisfy 0 < min_size <= max_size"
            );
            ensure!(
                r.min_speed >= 0.0 && r.max_speed >= r.min_speed,
                Validation,
                "random sprite speeds must satisfy 0 <= min_speed <= max_speed"
            );
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        plan_grid(self.height, self.width, self.grid.window, self.grid.stride, self.grid.pad)
    }
}

/// Pose of one sprite in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub row: f64,
    pub col: f64,
    pub angle: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `poses[t][k]` for sprite `k` in frame `t`.
    pub poses: Vec<Vec<Pose>>,
    /// Binary union of visible sprite pixels per frame.
    pub masks: Vec<Image>,
    pub grid: GridSpec,
    /// Per frame, per cell (vx, vy) of the dominant visible sprite, or zero.
    pub velocity: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub frames: Vec<Image>,
    pub truth: GroundTruth,
}

/// Sprite alpha raster with its center.
#[derive(Debug, Clone)]
struct Bitmap {
    alpha: Image,
    center: (f64, f64),
}

impl Bitmap {
    fn radius(&self) -> f64 {
        let (h, w) = self.alpha.dims();
        0.5 * ((h * h + w * w) as f64).sqrt()
    }

    /// Bilinear sample at raster position (r, c), zero outside.
    fn sample(&self, r: f64, c: f64) -> f64 {
        let (r0, c0) = (r.floor(), c.floor());
        let (fr, fc) = (r - r0, c - c0);
        let (ri, ci) = (r0 as isize, c0 as isize);
        let a = &self.alpha;
        let v00 = a.get_or_zero(ri, ci);
        let v01 = a.get_or_zero(ri, ci + 1);
        let v10 = a.get_or_zero(ri + 1, ci);
        let v11 = a.get_or_zero(ri + 1, ci + 1);
        (1.0 - fr) * ((1.0 - fc) * v00 + fc * v01) + fr * ((1.0 - fc) * v10 + fc * v11)
    }
}

const FONT: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

/// 4×4 supersampled coverage of `inside` over a square raster.
fn rasterize(side: usize, inside: impl Fn(f64, f64) -> bool) -> Bitmap {
    let c = (side as f64 - 1.0) / 2.0;
    let alpha = Image::from_fn(side, side, |r, col| {
        let mut hits = 0;
        for i in 0..4 {
            for j in 0..4 {
                let y = r as f64 - c + (i as f64 + 0.5) / 4.0 - 0.5;
                let x = col as f64 - c + (j as f64 + 0.5) / 4.0 - 0.5;
                if inside(y, x) {
                    hits += 1;
                }
            }
        }
        hits as f64 / 16.0
    });
    Bitmap { alpha, center: (c, c) }
}

fn bitmap(shape: &Shape) -> Result<Bitmap> {
    match shape {
        Shape::Disc { radius } => {
            ensure!(*radius > 0.0, Validation, "disc radius must be positive");
            let side = 2 * radius.ceil() as usize + 3;
            Ok(rasterize(side, |y, x| x * x + y * y <= radius * radius))
        }
        Shape::Polygon { vertices, radius } => {
            ensure!(*vertices >= 3 && *radius > 0.0, Validation, "polygon needs >= 3 vertices and a positive radius");
            let side = 2 * radius.ceil() as usize + 3;
            let k = *vertices as f64;
            let apothem = radius * (PI / k).cos();
            Ok(rasterize(side, |y, x| {
                (0..*vertices).all(|i| {
                    let th = 2.0 * PI * (i as f64 + 0.5) / k;
                    x * th.cos() + y * th.sin() <= apothem
                })
            }))
        }
        Shape::Glyph { digit, dot } => {
            ensure!(*digit <= 9 && *dot > 0.0, Validation, "glyph digit must be 0-9 with a positive dot size");
            let rows = FONT[*digit as usize];
            let side = (7.0 * dot).ceil() as usize + 3;
            let (w, h) = (5.0 * dot, 7.0 * dot);
            Ok(rasterize(side, |y, x| {
                let (fy, fx) = ((y + h / 2.0) / dot, (x + w / 2.0) / dot);
                if fy < 0.0 || fx < 0.0 || fy >= 7.0 || fx >= 5.0 {
                    return false;
                }
                rows[fy as usize] & (0x10 >> fx as usize) != 0
            }))
        }
        Shape::Stamp { path } => {
            let f = read_pgm(path)?;
            let alpha = f.to_image();
            let center = ((alpha.rows() as f64 - 1.0) / 2.0, (alpha.cols() as f64 - 1.0) / 2.0);
            Ok(Bitmap { alpha, center })
        }
    }
}

struct Texture {
    base: f64,
    waves: Vec<(f64, f64, f64, f64)>,
    velocity: [f64; 2],
}

impl Texture {
    fn new(bg: &Background) -> Option<Self> {
        match bg {
            Background::Black => None,
            Background::Texture {
                seed,
                components,
                min_period,
                max_period,
                amplitude,
                base,
                velocity,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let k = (*components).max(1);
                let waves = (0..k)
                    .map(|_| {
                        let period = rng.gen_range(*min_period..=*max_period);
                        let th = rng.gen_range(0.0..2.0 * PI);
                        let ph = rng.gen_range(0.0..2.0 * PI);
                        let f = 2.0 * PI / period;
                        (f * th.cos(), f * th.sin(), ph, amplitude / k as f64)
                    })
                    .collect();
                Some(Self {
                    base: *base,
                    waves,
                    velocity: *velocity,
                })
            }
        }
    }

    fn value(&self, t: usize, r: f64, c: f64) -> f64 {
        let x = c - self.velocity[0] * t as f64;
        let y = r - self.velocity[1] * t as f64;
        let v = self.waves.iter().map(|(fx, fy, ph, a)| a * (fx * x + fy * y + ph).cos()).sum::<f64>();
        (self.base + v).clamp(0.0, 1.0)
    }
}

fn random_sprites(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<SpriteSpec> {
    let r = &cfg.random;
    (0..r.count)
        .map(|_| {
            let size = rng.gen_range(r.min_size..=r.max_size);
            let shape = match rng.gen_range(0..3) {
                0 => Shape::Disc { radius: size },
                1 => Shape::Polygon {
                    vertices: rng.gen_range(3..=6),
                    radius: size * 1.1,
                },
                _ => Shape::Glyph {
                    digit: rng.gen_range(0..10),
                    dot: 2.0 * size / 7.0,
                },
            };
            let margin = size * 1.5 + 1.0;
            let row = rng.gen_range(margin..(cfg.height as f64 - margin).max(margin + 1e-9));
            let col = rng.gen_range(margin..(cfg.width as f64 - margin).max(margin + 1e-9));
            let speed = rng.gen_range(r.min_speed..=r.max_speed);
            let dir = rng.gen_range(0.0..2.0 * PI);
            SpriteSpec {
                shape,
                position: [row, col],
                velocity: [speed * dir.cos(), speed * dir.sin()],
                angle: 0.0,
                angular_velocity: if r.max_spin > 0.0 { rng.gen_range(-r.max_spin..r.max_spin) } else { 0.0 },
                scale: 1.0,
                scale_rate: if r.max_zoom > 0.0 { 1.0 + rng.gen_range(-r.max_zoom..r.max_zoom) } else { 1.0 },
                intensity: rng.gen_range(0.6..=1.0),
            }
        })
        .collect()
}

/// Renders the configured scene.
pub fn gen_sequence(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let grid = cfg.grid_spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sprites = if cfg.sprites.is_empty() {
        random_sprites(cfg, &mut rng)
    } else {
        cfg.sprites.clone()
    };
    let bitmaps: Vec<Bitmap> = sprites.iter().map(|s| bitmap(&s.shape)).collect::<Result<_>>()?;
    for (s, b) in sprites.iter().zip(&bitmaps) {
        let (h, w) = b.alpha.dims();
        ensure!(
            (h as f64 * s.scale) <= cfg.height as f64 && (w as f64 * s.scale) <= cfg.width as f64,
            Validation,
            "sprite of {}x{} px does not fit a {}x{} frame",
            h,
            w,
            cfg.height,
            cfg.width
        );
    }
    let texture = Texture::new(&cfg.background);
    let mut state: Vec<(Pose, [f64; 2])> = sprites
        .iter()
        .map(|s| {
            (
                Pose {
                    row: s.position[0],
                    col: s.position[1],
                    angle: s.angle,
                    scale: s.scale,
                },
                s.velocity,
            )
        })
        .collect();
    let (h, w) = (cfg.height, cfg.width);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    let mut poses = Vec::with_capacity(cfg.frames);
    let mut owners_per_frame = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let mut img = Image::from_fn(h, w, |r, c| texture.as_ref().map_or(0.0, |tx| tx.value(t, r as f64, c as f64)));
        let mut owner: Vec<Option<usize>> = vec![None; h * w];
        for (k, ((pose, _), (sprite, bm))) in state.iter().zip(sprites.iter().zip(&bitmaps)).enumerate() {
            let (sin, cos) = (-pose.angle.to_radians()).sin_cos();
            let reach = bm.radius() * pose.scale + 2.0;
            let r0 = (pose.row - reach).floor().max(0.0) as usize;
            let r1 = ((pose.row + reach).ceil() as usize).min(h - 1);
            let c0 = (pose.col - reach).floor().max(0.0) as usize;
            let c1 = ((pose.col + reach).ceil() as usize).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let (dy, dx) = (r as f64 - pose.row, c as f64 - pose.col);
                    let u = (cos * dx - sin * dy) / pose.scale;
                    let v = (sin * dx + cos * dy) / pose.scale;
                    let a = bm.sample(v + bm.center.0, u + bm.center.1);
                    if a <= 0.0 {
                        continue;
                    }
                    let i = r * w + c;
                    img.data_mut()[i] = a * sprite.intensity + (1.0 - a) * img.data()[i];
                    if a > 0.5 {
                        owner[i] = Some(k);
                    }
                }
            }
        }
        masks.push(Image::from_fn(h, w, |r, c| if owner[r * w + c].is_some() { 1.0 } else { 0.0 }));
        frames.push(img);
        owners_per_frame.push(owner);
        poses.push(state.iter().map(|(p, _)| *p).collect::<Vec<_>>());
        for ((pose, vel), (sprite, bm)) in state.iter_mut().zip(sprites.iter().zip(&bitmaps)) {
            pose.angle += sprite.angular_velocity;
            pose.scale *= sprite.scale_rate;
            let (bh, bw) = bm.alpha.dims();
            let ext = (bh.max(bw) as f64 / 2.0 - 1.0) * pose.scale;
            let step = |pos: &mut f64, v: &mut f64, lim: f64| {
                *pos += *v;
                let (lo, hi) = (ext, lim - 1.0 - ext);
                match cfg.boundary {
                    Boundary::Bounce => {
                        if *pos < lo {
                            *pos = 2.0 * lo - *pos;
                            *v = -*v;
                        } else if *pos > hi {
                            *pos = 2.0 * hi - *pos;
                            *v = -*v;
                        }
                    }
                    Boundary::Clamp => *pos = pos.clamp(lo, hi.max(lo)),
                }
            };
            step(&mut pose.col, &mut vel[0], w as f64);
            step(&mut pose.row, &mut vel[1], h as f64);
        }
    }
    let velocity = (0..cfg.frames)
        .map(|t| {
            let (a, b) = if t == 0 { (0, 1.min(cfg.frames - 1)) } else { (t - 1, t) };
            let disp: Vec<[f64; 2]> = poses[a]
                .iter()
                .zip(&poses[b])
                .map(|(p, q)| [q.col - p.col, q.row - p.row])
                .collect();
            cell_velocities(&grid, &owners_per_frame[t], w, h, &disp)
        })
        .collect();
    Ok(Scene {
        frames,
        truth: GroundTruth {
            poses,
            masks,
            grid,
            velocity,
        },
    })
}

/// Velocity of the sprite owning the most pixels in each cell's window.
fn cell_velocities(grid: &GridSpec, owner: &[Option<usize>], w: usize, h: usize, disp: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let half = (grid.window / 2) as i64;
    let mut out = Vec::with_capacity(grid.cells());
    let mut counts = vec![0usize; disp.len()];
    for u in 0..grid.cells_u {
        for v in 0..grid.cells_v {
            counts.iter_mut().for_each(|c| *c = 0);
            let (cy, cx) = grid.cell_center(u, v);
            for r in (cy - half).max(0)..(cy - half + grid.window as i64).min(h as i64) {
                for c in (cx - half).max(0)..(cx - half + grid.window as i64).min(w as i64) {
                    if let Some(k) = owner[r as usize * w + c as usize] {
                        counts[k] += 1;
                    }
                }
            }
            let best = (0..counts.len()).filter(|&k| counts[k] > 0).max_by_key(|&k| (counts[k], usize::MAX - k));
            out.push(best.map_or([0.0, 0.0], |k| disp[k]));
        }
    }
    out
}

impl Scene {
    /// Writes frames, masks, velocity tensor and poses under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut paths = Vec::new();
        for (t, f) in self.frames.iter().enumerate() {
            let p = format!("frames/{t:04}.pgm");
            crate::tensor_io::write_pgm(&Frame::from_image(f), dir.join(&p))?;
            paths.push(p);
        }
        for (t, m) in self.truth.masks.iter().enumerate() {
            let p = format!("gt/masks/{t:04}.pgm");
            crate::tensor_io::write_pgm(&Frame::from_image(m), dir.join(&p))?;
            paths.push(p);
        }
        let g = &self.truth.grid;
        let data: Vec<f64> = self.truth.velocity.iter().flatten().flat_map(|v| [v[0], v[1]]).collect();
        let t = crate::tensor_io::TensorFile::from_f64(
            vec![self.frames.len() as u32, g.cells_u as u32, g.cells_v as u32, 2],
            &data,
        )?;
        crate::tensor_io::write_tensor(&t, dir.join("gt/velocity.lfdt"))?;
        paths.push("gt/velocity.lfdt".into());
        crate::tensor_io::write_json(&self.truth.poses, dir.join("gt/poses.json"))?;
        paths.push("gt/poses.json".into());
        Ok(paths)
    }
}
