//! Quality metrics and rate-quality curve comparison: PSNR, single-scale
//! SSIM (multi-scale behind an option), a warping-based flicker score, and
//! the Bjontegaard delta-rate between two rate-quality curves.

use crate::consistency::{
    block_matching_flow, occlusion_mask, pixel_warping_loss, DEFAULT_BLOCK, DEFAULT_FB_TAU,
    DEFAULT_RADIUS,
};
use crate::error::{CodecError, Result};
use crate::frameio::FrameSequence;
use crate::Tensor32;

/// PSNR is capped here for identical inputs so reports stay finite.
pub const PSNR_CAP: f64 = 99.0;

/// Per-frame and mean PSNR over 8-bit RGB values.
pub fn psnr(a: &FrameSequence, b: &FrameSequence) -> Result<(Vec<f64>, f64)> {
    check_pair(a, b)?;
    let mut per = Vec::with_capacity(a.count());
    for i in 0..a.count() {
        let (fa, fb) = (a.frame_bytes(i), b.frame_bytes(i));
        let mut se = 0.0f64;
        for (&x, &y) in fa.iter().zip(fb) {
            let d = x as f64 - y as f64;
            se += d * d;
        }
        let mse = se / fa.len() as f64;
        per.push(if mse <= 0.0 { PSNR_CAP } else { (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP) });
    }
    let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
    Ok((per, mean))
}

fn check_pair(a: &FrameSequence, b: &FrameSequence) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.count() != b.count() {
        return Err(CodecError::Config(format!(
            "sequence mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.count(),
            b.width(),
            b.height(),
            b.count()
        )));
    }
    if a.count() == 0 {
        return Err(CodecError::Config("empty sequences".into()));
    }
    Ok(())
}

/// BT.601 luma from interleaved 8-bit RGB.
fn luma_plane(frame: &[u8], pixels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(pixels);
    for p in 0..pixels {
        let r = frame[3 * p] as f64;
        let g = frame[3 * p + 1] as f64;
        let b = frame[3 * p + 2] as f64;
        out.push(0.299 * r + 0.587 * g + 0.114 * b);
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    const L: f64 = 255.0;
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);
    let win = 8usize.min(w).min(h);
    let norm = (win * win) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=(h - win) {
        for x0 in 0..=(w - win) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let va = a[y * w + x];
                    let vb = b[y * w + x];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let ma = sa / norm;
            let mb = sb / norm;
            let va = saa / norm - ma * ma;
            let vb = sbb / norm - mb * mb;
            let cov = sab / norm - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            windows += 1;
        }
    }
    total / windows.max(1) as f64
}

/// Mean single-scale SSIM on luma: sliding 8x8 uniform windows,
/// K1 = 0.01, K2 = 0.03, L = 255.
pub fn ssim(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    for i in 0..a.count() {
        let la = luma_plane(a.frame_bytes(i), w * h);
        let lb = luma_plane(b.frame_bytes(i), w * h);
        total += ssim_plane(&la, &lb, w, h);
    }
    Ok(total / a.count() as f64)
}

/// Five-scale SSIM with the standard scale weights; contrast-structure terms
/// at every scale, luminance at the coarsest.
pub fn ms_ssim(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    check_pair(a, b)?;
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (w, h) = (a.width(), a.height());
    if w < 128 || h < 128 {
        // five halvings need at least 8x8 at the coarsest scale
        return Err(CodecError::Config("frames too small for 5-scale ssim".into()));
    }
    let mut total = 0.0;
    for i in 0..a.count() {
        let mut la = luma_plane(a.frame_bytes(i), w * h);
        let mut lb = luma_plane(b.frame_bytes(i), w * h);
        let (mut cw, mut ch) = (w, h);
        let mut value = 1.0f64;
        for (scale, &weight) in WEIGHTS.iter().enumerate() {
            let (l_term, cs_term) = ssim_luma_cs(&la, &lb, cw, ch);
            if scale == WEIGHTS.len() - 1 {
                value *= (l_term * cs_term).max(0.0).powf(weight);
            } else {
                value *= cs_term.max(0.0).powf(weight);
                la = half(&la, cw, ch);
                lb = half(&lb, cw, ch);
                cw /= 2;
                ch /= 2;
            }
        }
        total += value;
    }
    Ok(total / a.count() as f64)
}

fn half(p: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (p[2 * y * w + 2 * x]
                    + p[2 * y * w + 2 * x + 1]
                    + p[(2 * y + 1) * w + 2 * x]
                    + p[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    out
}

fn ssim_luma_cs(a: &[f64], b: &[f64], w: usize, h: usize) -> (f64, f64) {
    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    const L: f64 = 255.0;
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);
    let win = 8usize.min(w).min(h);
    let norm = (win * win) as f64;
    let (mut lt, mut cst) = (0.0, 0.0);
    let mut windows = 0usize;
    let step = win; // non-overlapping at coarse scales keeps this cheap
    let mut y0 = 0;
    while y0 + win <= h {
        let mut x0 = 0;
        while x0 + win <= w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let va = a[y * w + x];
                    let vb = b[y * w + x];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let ma = sa / norm;
            let mb = sb / norm;
            let va = saa / norm - ma * ma;
            let vb = sbb / norm - mb * mb;
            let cov = sab / norm - ma * mb;
            lt += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            cst += (2.0 * cov + c2) / (va + vb + c2);
            windows += 1;
            x0 += step;
        }
        y0 += step;
    }
    let n = windows.max(1) as f64;
    (lt / n, cst / n)
}

/// Temporal steadiness: mean occlusion-masked warping residual between
/// consecutive frames. Flow comes from block matching unless supplied.
pub fn flicker_metric(seq: &[Tensor32], flows: Option<&[Tensor32]>) -> Result<f64> {
    if seq.len() < 2 {
        return Err(CodecError::Config("flicker metric needs at least two frames".into()));
    }
    if let Some(f) = flows {
        if f.len() != seq.len() - 1 {
            return Err(CodecError::Config(format!(
                "expected {} flow fields, got {}",
                seq.len() - 1,
                f.len()
            )));
        }
    }
    let mut total = 0.0;
    for t in 1..seq.len() {
        let fwd = match flows {
            Some(f) => f[t - 1].clone(),
            None => block_matching_flow(&seq[t], &seq[t - 1], DEFAULT_BLOCK, DEFAULT_RADIUS)?,
        };
        let bwd = match flows {
            Some(_) => {
                // supplied flows are forward-only; derive backward estimates
                block_matching_flow(&seq[t - 1], &seq[t], DEFAULT_BLOCK, DEFAULT_RADIUS)?
            }
            None => block_matching_flow(&seq[t - 1], &seq[t], DEFAULT_BLOCK, DEFAULT_RADIUS)?,
        };
        let mask = occlusion_mask(&fwd, &bwd, DEFAULT_FB_TAU)?;
        total += pixel_warping_loss(&seq[t], &seq[t - 1], &fwd, &mask)?;
    }
    Ok(total / (seq.len() - 1) as f64)
}

/// A rate-quality operating curve: strictly increasing bpp.
#[derive(Debug, Clone, PartialEq)]
pub struct RateQualityCurve {
    points: Vec<(f64, f64)>,
}

impl RateQualityCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 4 {
            return Err(CodecError::Config("curve needs at least 4 points".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CodecError::Config("bpp must be strictly increasing".into()));
            }
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite() || p.0 <= 0.0) {
            return Err(CodecError::Config("curve points must be finite, bpp positive".into()));
        }
        Ok(RateQualityCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Parse `bpp,quality` lines; `#` comments and blank lines are skipped.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (b, q) = line.split_once(',').ok_or_else(|| {
                CodecError::Config(format!("line {}: expected bpp,quality", lineno + 1))
            })?;
            let bpp: f64 = b.trim().parse().map_err(|_| {
                CodecError::Config(format!("line {}: bad bpp '{b}'", lineno + 1))
            })?;
            let quality: f64 = q.trim().parse().map_err(|_| {
                CodecError::Config(format!("line {}: bad quality '{q}'", lineno + 1))
            })?;
            points.push((bpp, quality));
        }
        Self::new(points)
    }
}

/// Bjontegaard delta outcome; curves without overlapping quality ranges
/// cannot be compared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BdRate {
    Percent(f64),
    NotAvailable,
}

impl std::fmt::Display for BdRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BdRate::Percent(p) => write!(f, "{p:.4}"),
            BdRate::NotAvailable => write!(f, "N/A"),
        }
    }
}

/// Fit log10(bpp) as a cubic polynomial of quality via least squares.
fn fit_log_rate(curve: &RateQualityCurve) -> [f64; 4] {
    let xs: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.0.log10()).collect();
    // normal equations for the degree-3 Vandermonde system
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for (&x, &y) in xs.iter().zip(&ys) {
        let row = [1.0, x, x * x, x * x * x];
        for i in 0..4 {
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * y;
        }
    }
    solve4(ata, atb)
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let mut pivot = col;
        for r in col + 1..4 {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        for r in 0..4 {
            if r == col || a[r][col] == 0.0 {
                continue;
            }
            let f = a[r][col] / p;
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for i in 0..4 {
        x[i] = b[i] / a[i][i];
    }
    x
}

/// Evaluate the antiderivative of the cubic at `x`.
fn poly_integral(c: &[f64; 4], x: f64) -> f64 {
    c[0] * x + c[1] * x * x / 2.0 + c[2] * x * x * x / 3.0 + c[3] * x * x * x * x / 4.0
}

/// Classical Bjontegaard delta-rate: cubic fits of log10(bpp) over quality,
/// integrated over the overlapping quality interval; positive means `test`
/// spends more bits than `anchor` at equal quality.
pub fn bd_rate(anchor: &RateQualityCurve, test: &RateQualityCurve) -> Result<BdRate> {
    let range = |c: &RateQualityCurve| {
        let qs: Vec<f64> = c.points.iter().map(|p| p.1).collect();
        (qs.iter().cloned().fold(f64::INFINITY, f64::min),
         qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    };
    let (a_lo, a_hi) = range(anchor);
    let (t_lo, t_hi) = range(test);
    let lo = a_lo.max(t_lo);
    let hi = a_hi.min(t_hi);
    if !(hi > lo) {
        return Ok(BdRate::NotAvailable);
    }
    let ca = fit_log_rate(anchor);
    let ct = fit_log_rate(test);
    let mean_a = (poly_integral(&ca, hi) - poly_integral(&ca, lo)) / (hi - lo);
    let mean_t = (poly_integral(&ct, hi) - poly_integral(&ct, lo)) / (hi - lo);
    Ok(BdRate::Percent(100.0 * (10f64.powf(mean_t - mean_a) - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frameio::FrameSequence;
    use crate::rng::{uniform_tensor, DetRng};
    use crate::tensor::{Dims, Tensor};

    fn seq_from(frames: Vec<Vec<u8>>, w: usize, h: usize) -> FrameSequence {
        FrameSequence::new(w, h, frames).unwrap()
    }

    fn random_seq(seed: u64, frames: usize, w: usize, h: usize) -> FrameSequence {
        let mut r = DetRng::seeded(seed);
        let data = (0..frames)
            .map(|_| (0..3 * w * h).map(|_| r.below(256) as u8).collect())
            .collect();
        seq_from(data, w, h)
    }

    #[test]
    fn psnr_basics() {
        let a = random_seq(1, 2, 8, 8);
        let (per, mean) = psnr(&a, &a).unwrap();
        assert!(per.iter().all(|&v| v == PSNR_CAP));
        assert_eq!(mean, PSNR_CAP);

        // mse exactly 1: b differs by +1 everywhere (no clipping at 255)
        let mut frames = Vec::new();
        let base = vec![100u8; 3 * 64];
        let off = vec![101u8; 3 * 64];
        frames.push(base.clone());
        let b = seq_from(vec![off], 8, 8);
        let a = seq_from(frames, 8, 8);
        let (_, mean) = psnr(&a, &b).unwrap();
        assert!((mean - 48.130803608679).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let a = random_seq(2, 1, 16, 16);
        let b = random_seq(3, 1, 16, 16);
        let (_, got) = psnr(&a, &b).unwrap();
        let fa = a.frame_bytes(0);
        let fb = b.frame_bytes(0);
        let mse = fa
            .iter()
            .zip(fb)
            .map(|(&x, &y)| ((x as f64) - (y as f64)).powi(2))
            .sum::<f64>()
            / fa.len() as f64;
        let want = 10.0 * (255.0f64 * 255.0 / mse).log10();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random_seq(4, 2, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = random_seq(5, 2, 16, 16);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
    }

    /// Independent straightforward SSIM evaluation for one window pair.
    #[test]
    fn ssim_matches_independent_implementation() {
        // constant vs constant+noise on a single 8x8 window
        let mut r = DetRng::seeded(6);
        let base = vec![128u8; 3 * 64];
        let noisy: Vec<u8> =
            base.iter().map(|&v| (v as i32 + r.below(21) as i32 - 10) as u8).collect();
        let a = seq_from(vec![base.clone()], 8, 8);
        let b = seq_from(vec![noisy.clone()], 8, 8);
        let got = ssim(&a, &b).unwrap();

        let la = luma_plane(&base, 64);
        let lb = luma_plane(&noisy, 64);
        let n = 64.0;
        let ma = la.iter().sum::<f64>() / n;
        let mb = lb.iter().sum::<f64>() / n;
        let va = la.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / n;
        let vb = lb.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / n;
        let cov = la.iter().zip(&lb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let c1 = (0.01f64 * 255.0) * (0.01 * 255.0);
        let c2 = (0.03f64 * 255.0) * (0.03 * 255.0);
        let want =
            (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn flicker_static_zero_and_noise_increases() {
        let mut r = DetRng::seeded(7);
        let frame = uniform_tensor::<f32>(Dims::new(1, 3, 32, 32), 0.2, 0.8, &mut r);
        let static_seq = vec![frame.clone(); 4];
        assert_eq!(flicker_metric(&static_seq, None).unwrap(), 0.0);

        // temporally independent noise strictly increases the metric
        let noisy: Vec<Tensor32> = static_seq
            .iter()
            .map(|f| {
                let mut g = f.clone();
                for v in g.data_mut() {
                    *v = (*v + (r.unit() as f32 - 0.5) * 0.2).clamp(0.0, 1.0);
                }
                g
            })
            .collect();
        let clean = flicker_metric(&static_seq, None).unwrap();
        let jittery = flicker_metric(&noisy, None).unwrap();
        assert!(jittery > clean, "{jittery} vs {clean}");
    }

    #[test]
    fn bd_rate_identity_and_doubling() {
        let curve = RateQualityCurve::new(vec![
            (0.05, 30.0),
            (0.1, 33.0),
            (0.2, 36.0),
            (0.4, 39.0),
        ])
        .unwrap();
        assert_eq!(bd_rate(&curve, &curve).unwrap(), BdRate::Percent(0.0));

        let doubled = RateQualityCurve::new(
            curve.points().iter().map(|&(b, q)| (2.0 * b, q)).collect(),
        )
        .unwrap();
        match bd_rate(&curve, &doubled).unwrap() {
            BdRate::Percent(p) => assert!((p - 100.0).abs() < 0.01, "{p}"),
            BdRate::NotAvailable => panic!("unexpected N/A"),
        }
    }

    #[test]
    fn bd_rate_against_numeric_integration() {
        let anchor = RateQualityCurve::new(vec![
            (0.06, 29.5),
            (0.11, 32.2),
            (0.24, 35.8),
            (0.5, 38.9),
        ])
        .unwrap();
        let test = RateQualityCurve::new(vec![
            (0.05, 30.1),
            (0.09, 32.8),
            (0.2, 36.4),
            (0.45, 40.2),
        ])
        .unwrap();
        let got = match bd_rate(&anchor, &test).unwrap() {
            BdRate::Percent(p) => p,
            BdRate::NotAvailable => panic!("unexpected N/A"),
        };
        // trapezoid integration of the same fitted cubics
        let ca = fit_log_rate(&anchor);
        let ct = fit_log_rate(&test);
        let lo = 30.1;
        let hi = 38.9;
        let eval = |c: &[f64; 4], x: f64| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
        let steps = 20_000;
        let (mut ia, mut it) = (0.0, 0.0);
        for i in 0..steps {
            let x0 = lo + (hi - lo) * i as f64 / steps as f64;
            let x1 = lo + (hi - lo) * (i + 1) as f64 / steps as f64;
            ia += 0.5 * (eval(&ca, x0) + eval(&ca, x1)) * (x1 - x0);
            it += 0.5 * (eval(&ct, x0) + eval(&ct, x1)) * (x1 - x0);
        }
        let want = 100.0 * (10f64.powf((it - ia) / (hi - lo)) - 1.0);
        assert!((got - want).abs() < 0.1, "{got} vs {want}");
    }

    #[test]
    fn bd_rate_no_overlap_is_na() {
        let a = RateQualityCurve::new(vec![
            (0.05, 10.0),
            (0.1, 12.0),
            (0.2, 14.0),
            (0.4, 16.0),
        ])
        .unwrap();
        let b = RateQualityCurve::new(vec![
            (0.05, 30.0),
            (0.1, 32.0),
            (0.2, 34.0),
            (0.4, 36.0),
        ])
        .unwrap();
        assert_eq!(bd_rate(&a, &b).unwrap(), BdRate::NotAvailable);
    }

    #[test]
    fn bd_rate_reciprocal_relation() {
        let a = RateQualityCurve::new(vec![
            (0.06, 29.5),
            (0.11, 32.2),
            (0.24, 35.8),
            (0.5, 38.9),
        ])
        .unwrap();
        let b = RateQualityCurve::new(vec![
            (0.08, 29.9),
            (0.14, 32.5),
            (0.3, 36.1),
            (0.6, 39.4),
        ])
        .unwrap();
        let ab = match bd_rate(&a, &b).unwrap() {
            BdRate::Percent(p) => p,
            _ => panic!(),
        };
        let ba = match bd_rate(&b, &a).unwrap() {
            BdRate::Percent(p) => p,
            _ => panic!(),
        };
        let predicted = -ba / (1.0 + ba / 100.0);
        assert!((ab - predicted).abs() < 0.5, "{ab} vs {predicted}");
    }

    #[test]
    fn curve_validation() {
        assert!(RateQualityCurve::new(vec![(0.1, 30.0), (0.2, 31.0), (0.3, 32.0)]).is_err());
        assert!(RateQualityCurve::new(vec![
            (0.1, 30.0),
            (0.1, 31.0),
            (0.3, 32.0),
            (0.4, 33.0)
        ])
        .is_err());
        let parsed = RateQualityCurve::parse_csv("0.1,30\n0.2,33\n0.4,35\n0.8,37\n").unwrap();
        assert_eq!(parsed.points().len(), 4);
        assert!(RateQualityCurve::parse_csv("nonsense").is_err());
    }
}
