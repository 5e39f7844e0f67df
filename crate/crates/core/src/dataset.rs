//! Deterministic synthetic video: textured patches under rigid motion over
//! gradient backgrounds, with exact per-pair ground-truth flow in both
//! directions. Stands in for a natural-video corpus at desk scale.

use crate::rng::DetRng;
use crate::tensor::{Dims, Tensor};
use crate::Tensor32;

#[derive(Debug, Clone, Copy)]
pub struct DatasetConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Allow small per-frame rotation in addition to translation.
    pub rotation: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { count: 8, width: 64, height: 64, frames: 8, rotation: true }
    }
}

struct Patch {
    texture: Vec<f32>, // tex_n x tex_n x 3, row-major per channel
    tex_n: usize,
    half: f64,
    center0: (f64, f64),
    velocity: (f64, f64),
    theta0: f64,
    omega: f64,
}

impl Patch {
    fn center(&self, t: usize) -> (f64, f64) {
        (self.center0.0 + self.velocity.0 * t as f64, self.center0.1 + self.velocity.1 * t as f64)
    }

    fn theta(&self, t: usize) -> f64 {
        self.theta0 + self.omega * t as f64
    }

    /// Patch-local coordinates of image point p at time t.
    fn local(&self, t: usize, px: f64, py: f64) -> (f64, f64) {
        let (cx, cy) = self.center(t);
        let th = self.theta(t);
        let (dx, dy) = (px - cx, py - cy);
        let (s, c) = (th.sin(), th.cos());
        // rotate by -theta
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Image coordinates at time t of the patch-local point q.
    fn global(&self, t: usize, qx: f64, qy: f64) -> (f64, f64) {
        let (cx, cy) = self.center(t);
        let th = self.theta(t);
        let (s, c) = (th.sin(), th.cos());
        (cx + c * qx - s * qy, cy + s * qx + c * qy)
    }

    fn sample_texture(&self, qx: f64, qy: f64, c: usize) -> f32 {
        let u = (qx + self.half).clamp(0.0, (self.tex_n - 1) as f64);
        let v = (qy + self.half).clamp(0.0, (self.tex_n - 1) as f64);
        let (x0, y0) = (u.floor() as usize, v.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.tex_n - 1), (y0 + 1).min(self.tex_n - 1));
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let at = |y: usize, x: usize| self.texture[(c * self.tex_n + y) * self.tex_n + x] as f64;
        (at(y0, x0) * (1.0 - fy) * (1.0 - fx)
            + at(y0, x1) * (1.0 - fy) * fx
            + at(y1, x0) * fy * (1.0 - fx)
            + at(y1, x1) * fy * fx) as f32
    }

    /// Coverage in [0,1]: 1 well inside the patch, fading over one pixel.
    fn alpha(&self, qx: f64, qy: f64) -> f64 {
        let d = self.half - qx.abs().max(qy.abs());
        d.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<Tensor32>,
    /// flows_fwd[t-1] maps frame-t coordinates to frame t-1.
    pub flows_fwd: Vec<Tensor32>,
    /// flows_bwd[t-1] maps frame-(t-1) coordinates to frame t.
    pub flows_bwd: Vec<Tensor32>,
}

fn smooth_texture(data: &mut [f32], n: usize, channels: usize) {
    let src = data.to_vec();
    for c in 0..channels {
        for y in 0..n {
            for x in 0..n {
                let mut acc = 0.0f32;
                let mut cnt = 0.0f32;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let yy = y as i32 + dy;
                        let xx = x as i32 + dx;
                        if yy >= 0 && yy < n as i32 && xx >= 0 && xx < n as i32 {
                            acc += src[(c * n + yy as usize) * n + xx as usize];
                            cnt += 1.0;
                        }
                    }
                }
                data[(c * n + y) * n + x] = acc / cnt;
            }
        }
    }
}

/// One deterministic sequence; `(seed, index)` fully determine the content.
pub fn synthetic_sequence(seed: u64, index: u64, cfg: &DatasetConfig) -> SyntheticSequence {
    let mut rng = DetRng::substream(seed, index);
    let (w, h) = (cfg.width, cfg.height);

    // gradient background, static
    let mut bg = vec![0f32; 3 * h * w];
    for c in 0..3 {
        let base = rng.range_f64(0.25, 0.65);
        let gx = rng.range_f64(-0.2, 0.2);
        let gy = rng.range_f64(-0.2, 0.2);
        for y in 0..h {
            for x in 0..w {
                let v = base + gx * x as f64 / w as f64 + gy * y as f64 / h as f64;
                bg[(c * h + y) * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }

    let patch_count = 1 + rng.below(3) as usize;
    let mut patches = Vec::with_capacity(patch_count);
    for _ in 0..patch_count {
        let tex_n = 12 + 2 * rng.below(7) as usize; // 12..24
        let mut texture = vec![0f32; 3 * tex_n * tex_n];
        for v in &mut texture {
            *v = rng.range_f64(0.1, 0.9) as f32;
        }
        smooth_texture(&mut texture, tex_n, 3);
        let half = (tex_n as f64 - 2.0) / 2.0;
        let margin = half + 2.0;
        let travel = cfg.frames as f64 * 1.5;
        let center0 = (
            rng.range_f64(margin + travel, w as f64 - margin - travel),
            rng.range_f64(margin + travel, h as f64 - margin - travel),
        );
        let velocity = (rng.range_f64(-1.5, 1.5), rng.range_f64(-1.5, 1.5));
        let (theta0, omega) = if cfg.rotation && rng.below(2) == 1 {
            (rng.range_f64(-0.3, 0.3), rng.range_f64(-0.04, 0.04))
        } else {
            (0.0, 0.0)
        };
        patches.push(Patch { texture, tex_n, half, center0, velocity, theta0, omega });
    }

    let render = |t: usize| -> Tensor32 {
        let mut frame = Tensor::zeros(Dims::new(1, 3, h, w));
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64, y as f64);
                let mut col = [
                    bg[y * w + x],
                    bg[(h + y) * w + x],
                    bg[(2 * h + y) * w + x],
                ];
                for p in &patches {
                    let (qx, qy) = p.local(t, px, py);
                    let a = p.alpha(qx, qy);
                    if a > 0.0 {
                        for (c, slot) in col.iter_mut().enumerate() {
                            let tex = p.sample_texture(qx, qy, c);
                            *slot = (1.0 - a as f32) * *slot + a as f32 * tex;
                        }
                    }
                }
                for c in 0..3 {
                    frame.set(0, c, y, x, col[c]);
                }
            }
        }
        frame
    };

    // topmost patch covering p at time t, if any
    let top_patch = |t: usize, px: f64, py: f64| -> Option<usize> {
        let mut hit = None;
        for (i, p) in patches.iter().enumerate() {
            let (qx, qy) = p.local(t, px, py);
            if p.alpha(qx, qy) > 0.0 {
                hit = Some(i); // later patches render on top
            }
        }
        hit
    };

    let flow_between = |t_from: usize, t_to: usize| -> Tensor32 {
        let mut flow = Tensor::zeros(Dims::new(1, 2, h, w));
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64, y as f64);
                if let Some(i) = top_patch(t_from, px, py) {
                    let p = &patches[i];
                    let (qx, qy) = p.local(t_from, px, py);
                    let (gx, gy) = p.global(t_to, qx, qy);
                    flow.set(0, 0, y, x, (gx - px) as f32);
                    flow.set(0, 1, y, x, (gy - py) as f32);
                }
                // background is static: zero flow
            }
        }
        flow
    };

    let frames: Vec<Tensor32> = (0..cfg.frames).map(render).collect();
    let flows_fwd: Vec<Tensor32> = (1..cfg.frames).map(|t| flow_between(t, t - 1)).collect();
    let flows_bwd: Vec<Tensor32> = (1..cfg.frames).map(|t| flow_between(t - 1, t)).collect();
    SyntheticSequence { frames, flows_fwd, flows_bwd }
}

pub fn synthetic_dataset(seed: u64, cfg: &DatasetConfig) -> Vec<SyntheticSequence> {
    (0..cfg.count).map(|i| synthetic_sequence(seed, i as u64, cfg)).collect()
}
