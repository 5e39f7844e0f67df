//! Staged training: stage configurations, the five loss families, joint
//! sampling of quality index and Lagrange multiplier, hierarchical temporal
//! weights, cascaded multi-frame unrolling, and the curriculum runner.
//!
//! Stages 1-5 train the latent codec (the reconstructor stays frozen and
//! merely renders frames for the distortion terms); stage 6 trains the
//! reconstructor; stage 7 fine-tunes everything jointly. Intra frames are
//! always coded through the zero-context path; the per-stage
//! `compress_intra` flag only controls whether their rate/distortion enters
//! the loss.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::{AdamState, NodeId, Tape};
use crate::compressor::{self, QualityIndex};
use crate::config::ModelConfig;
use crate::consistency::{
    masked_warp_l1, masked_warp_l2, occlusion_mask, IccWeights, ProxyNet, DEFAULT_FB_TAU,
    PROXY_LEVELS,
};
use crate::dataset::{synthetic_dataset, DatasetConfig, SyntheticSequence};
use crate::error::{CodecError, Result};
use crate::exec::Executor;
use crate::reconstructor::{self, GraphShift};
use crate::rng::DetRng;
use crate::tensor::Tensor;
use crate::weights::WeightStore;
use crate::Tensor32;

/// Which loss family a stage optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Distortion only (lambda-weighted MSE).
    D,
    /// Rate + lambda * MSE.
    Rd,
    /// Rate + lambda * (0.5 MSE + 0.025 perc_l + 0.025 perc_d).
    Rdp,
    /// 2 MSE + perc_l + perc_d + 0.1 ICC (no rate term).
    Dpt,
    /// Rate + lambda * (0.3 MSE + 0.03 perc_l + 0.03 perc_d + 0.003 ICC).
    Rdpt,
}

/// Which parameter groups a stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainSet {
    Compressor,
    CompressorVbp,
    Reconstructor,
    All,
}

impl TrainSet {
    fn trains(&self, name: &str) -> bool {
        match self {
            TrainSet::Compressor => name.starts_with("lc.") && !name.starts_with("lc.q_"),
            TrainSet::CompressorVbp => name.starts_with("lc."),
            TrainSet::Reconstructor => name.starts_with("fr."),
            TrainSet::All => true,
        }
    }
}

/// Cyclic per-frame loss weights, indexed by display order.
#[derive(Debug, Clone)]
pub struct TemporalWeights(pub Vec<f64>);

impl Default for TemporalWeights {
    fn default() -> Self {
        TemporalWeights(vec![0.5, 1.2, 0.5, 0.9])
    }
}

impl TemporalWeights {
    pub fn at(&self, frame_index: usize) -> f64 {
        self.0[frame_index % self.0.len()]
    }
}

#[derive(Debug, Clone)]
pub struct StageConfig {
    pub stage: u8,
    pub steps: usize,
    pub batch: usize,
    pub patch_w: usize,
    pub patch_h: usize,
    pub frames: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub modules: TrainSet,
    pub loss: LossKind,
    pub use_temporal_weights: bool,
    pub cascade: bool,
    pub compress_intra: bool,
    /// Fixed quality index, or None to sample one of the 16 points per step.
    pub q_fixed: Option<u8>,
    /// Weight of the consistency term inside DPT/RDPT (ablation hook).
    pub icc_weight: f64,
}

impl StageConfig {
    /// Desk-scale defaults mirroring the seven-stage recipe.
    pub fn stage_default(stage: u8, steps: usize) -> Result<StageConfig> {
        let base = StageConfig {
            stage,
            steps,
            batch: 1,
            patch_w: 64,
            patch_h: 64,
            frames: 3,
            lr_start: 1e-4,
            lr_end: 1e-4,
            modules: TrainSet::Compressor,
            loss: LossKind::Rd,
            use_temporal_weights: false,
            cascade: false,
            compress_intra: false,
            q_fixed: Some(15),
            icc_weight: 0.1,
        };
        let cfg = match stage {
            1 => StageConfig { frames: 2, loss: LossKind::D, ..base },
            2 => base,
            3 => StageConfig {
                modules: TrainSet::CompressorVbp,
                use_temporal_weights: true,
                compress_intra: true,
                q_fixed: None,
                lr_start: 1e-4,
                lr_end: 5e-6,
                ..base
            },
            4 => StageConfig {
                modules: TrainSet::CompressorVbp,
                loss: LossKind::Rdp,
                use_temporal_weights: true,
                compress_intra: true,
                q_fixed: None,
                lr_start: 5e-5,
                lr_end: 1e-6,
                ..base
            },
            5 => StageConfig {
                modules: TrainSet::CompressorVbp,
                loss: LossKind::Rdp,
                use_temporal_weights: true,
                compress_intra: true,
                cascade: true,
                q_fixed: None,
                lr_start: 1e-5,
                lr_end: 1e-5,
                ..base
            },
            6 => StageConfig {
                modules: TrainSet::Reconstructor,
                loss: LossKind::Dpt,
                compress_intra: true,
                cascade: true,
                frames: 4,
                q_fixed: None,
                lr_start: 3e-4,
                lr_end: 1e-5,
                ..base
            },
            7 => StageConfig {
                modules: TrainSet::All,
                loss: LossKind::Rdpt,
                use_temporal_weights: true,
                compress_intra: true,
                cascade: true,
                frames: 4,
                q_fixed: None,
                lr_start: 5e-6,
                lr_end: 1e-6,
                ..base
            },
            other => {
                return Err(CodecError::Config(format!("unknown stage id {other}")));
            }
        };
        Ok(cfg)
    }
}

/// Per-frame scalar loss terms, as values of whatever executor built them.
pub struct FrameTerms<V> {
    pub frame_index: usize,
    pub bpp: V,
    pub mse: V,
    pub perc_l: V,
    pub perc_d: V,
    pub icc: V,
}

/// Evaluate a stage's loss formula over per-frame records; frames are
/// averaged (the cascaded stages' expectation over time).
pub fn compute_stage_loss<T: crate::scalar::Scalar, E: Executor<T>>(
    ex: &mut E,
    loss: LossKind,
    use_wt: bool,
    icc_weight: f64,
    lambda: f64,
    wt: &TemporalWeights,
    records: &[FrameTerms<E::V>],
) -> Result<E::V> {
    if records.is_empty() {
        return Err(CodecError::Training("stage loss over zero frames".into()));
    }
    let mut acc: Option<E::V> = None;
    for rec in records {
        let w = if use_wt { wt.at(rec.frame_index) } else { 1.0 };
        let term = match loss {
            LossKind::D => ex.mul_scalar(rec.mse, lambda * w),
            LossKind::Rd => {
                let d = ex.mul_scalar(rec.mse, lambda * w);
                ex.add(rec.bpp, d)?
            }
            LossKind::Rdp => {
                let m = ex.mul_scalar(rec.mse, 0.5);
                let pl = ex.mul_scalar(rec.perc_l, 0.025);
                let pd = ex.mul_scalar(rec.perc_d, 0.025);
                let s = ex.add(m, pl)?;
                let s = ex.add(s, pd)?;
                let s = ex.mul_scalar(s, lambda * w);
                ex.add(rec.bpp, s)?
            }
            LossKind::Dpt => {
                let m = ex.mul_scalar(rec.mse, 2.0);
                let s = ex.add(m, rec.perc_l)?;
                let s = ex.add(s, rec.perc_d)?;
                let i = ex.mul_scalar(rec.icc, icc_weight);
                ex.add(s, i)?
            }
            LossKind::Rdpt => {
                let m = ex.mul_scalar(rec.mse, 0.3);
                let pl = ex.mul_scalar(rec.perc_l, 0.03);
                let pd = ex.mul_scalar(rec.perc_d, 0.03);
                let i = ex.mul_scalar(rec.icc, 0.003 * (icc_weight / 0.1));
                let s = ex.add(m, pl)?;
                let s = ex.add(s, pd)?;
                let s = ex.add(s, i)?;
                let s = ex.mul_scalar(s, lambda * w);
                ex.add(rec.bpp, s)?
            }
        };
        acc = Some(match acc {
            Some(a) => ex.add(a, term)?,
            None => term,
        });
    }
    Ok(ex.mul_scalar(acc.unwrap(), 1.0 / records.len() as f64))
}

/// One logged training step.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub bpp: f64,
    pub mse: f64,
    pub lambda: f64,
}

pub fn write_log_csv(logs: &[StepLog], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "step,loss,bpp,mse")?;
    for l in logs {
        writeln!(w, "{},{},{},{}", l.step, l.loss, l.bpp, l.mse)?;
    }
    Ok(())
}

/// Forward one training sample (a frame chain) on the tape and return the
/// per-frame records plus the loss node.
#[allow(clippy::too_many_arguments)]
fn forward_sample(
    tape: &mut Tape<f32>,
    ws: &WeightStore,
    cfg: &ModelConfig,
    stage: &StageConfig,
    proxy: &ProxyNet,
    seq: &SyntheticSequence,
    start: usize,
    q: QualityIndex,
    wt: &TemporalWeights,
) -> Result<(NodeId, f64, f64)> {
    let lc = compressor::bind(tape, ws, cfg)?;
    let fr = reconstructor::bind(tape, ws, cfg)?;
    let mut shift = GraphShift::new(cfg.shift.p);
    let icc_w = IccWeights::default();

    let mut prev_lbar: Option<NodeId> = None;
    let mut prev_xhat: Option<NodeId> = None;
    let mut records: Vec<FrameTerms<NodeId>> = Vec::new();

    for (local_t, t) in (start..start + stage.frames).enumerate() {
        let frame = &seq.frames[t];
        let d = frame.dims();
        let pixels = (d.h * d.w) as f64;
        let gt = tape.constant(frame.clone());
        let raw = tape.pixel_unshuffle(gt, cfg.s)?;

        let intra = local_t == 0;
        let (cm, ce) = match prev_lbar {
            Some(prev) if !intra => compressor::contexts(tape, &lc, prev)?,
            _ => {
                let z = Tensor::zeros(crate::tensor::Dims::new(
                    1,
                    cfg.c_ctx,
                    d.h / cfg.s,
                    d.w / cfg.s,
                ));
                (tape.constant(z.clone()), tape.constant(z))
            }
        };

        // coding path with straight-through rounding
        let y = compressor::analyze(tape, &lc, raw, ce, q)?;
        let (mu, sigma) = compressor::entropy_params(tape, &lc, ce, cfg.c_lat)?;
        let centered = tape.sub(y, mu)?;
        let k = tape.round_ste(centered);
        let bits = tape.gaussian_bits(k, sigma)?;
        let bits_sum = tape.sum(bits);
        let bpp = tape.mul_scalar(bits_sum, 1.0 / pixels);
        let y_hat = tape.add(k, mu)?;
        let lbar = compressor::synthesize(tape, &lc, y_hat, ce, q)?;

        // rendered frame (the reconstructor may be frozen; grads still flow
        // through it into the codec)
        let lhat = reconstructor::enhance(tape, &fr, lbar, cm, &mut shift)?;
        let xhat = reconstructor::reconstruct(tape, &fr, lhat)?;

        let diff = tape.sub(xhat, gt)?;
        let sq = tape.square(diff);
        let mse = tape.mean(sq);

        let needs_perc = matches!(stage.loss, LossKind::Rdp | LossKind::Dpt | LossKind::Rdpt);
        let (perc_l, perc_d) = if needs_perc {
            let f_hat = proxy.features(tape, xhat)?;
            let f_gt = tape.constant(proxy.features_eager(frame)?);
            let fd = tape.sub(f_hat, f_gt)?;
            let l1 = tape.abs(fd);
            let l2 = tape.square(fd);
            (tape.mean(l1), tape.mean(l2))
        } else {
            let z = tape.constant(Tensor::scalar(0.0));
            (z, z)
        };

        let needs_icc = matches!(stage.loss, LossKind::Dpt | LossKind::Rdpt);
        let icc = if needs_icc && local_t > 0 {
            let flow = &seq.flows_fwd[t - 1];
            let mask = occlusion_mask(flow, &seq.flows_bwd[t - 1], DEFAULT_FB_TAU)?;
            let prev = prev_xhat.unwrap();
            let lp = masked_warp_l1(tape, xhat, prev, flow, &mask)?;
            // feature-space term on proxy features of the reconstructions
            let fp_cur = proxy.features(tape, xhat)?;
            let fp_prev = proxy.features(tape, prev)?;
            let flow_l = crate::consistency::downscale_flow(flow, PROXY_LEVELS)?;
            let mask_l = crate::consistency::downscale_mask(&mask, PROXY_LEVELS)?;
            let lf = masked_warp_l2(tape, fp_cur, fp_prev, &flow_l, &mask_l)?;
            let lp_w = tape.mul_scalar(lp, icc_w.lambda_p);
            let lf_w = tape.mul_scalar(lf, icc_w.lambda_f);
            tape.add(lp_w, lf_w)?
        } else {
            tape.constant(Tensor::scalar(0.0))
        };

        if stage.compress_intra || !intra {
            records.push(FrameTerms { frame_index: t, bpp, mse, perc_l, perc_d, icc });
        }

        prev_xhat = Some(if stage.cascade { xhat } else { tape.stop_gradient(xhat) });
        prev_lbar = Some(if stage.cascade { lbar } else { tape.stop_gradient(lbar) });
        if !stage.cascade {
            shift.detach_all(|v| tape.stop_gradient(v));
        }
    }

    // scalar diagnostics for the step log
    let count = records.len().max(1) as f64;
    let bpp_mean =
        records.iter().map(|r| tape.value(r.bpp).data()[0] as f64).sum::<f64>() / count;
    let mse_mean =
        records.iter().map(|r| tape.value(r.mse).data()[0] as f64).sum::<f64>() / count;

    let loss = compute_stage_loss(
        tape,
        stage.loss,
        stage.use_temporal_weights,
        stage.icc_weight,
        q.lambda(),
        wt,
        &records,
    )?;
    Ok((loss, bpp_mean, mse_mean))
}

fn cosine_lr(start: f64, end: f64, step: usize, steps: usize) -> f64 {
    if steps <= 1 {
        return start;
    }
    let t = step as f64 / (steps - 1) as f64;
    end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Run one stage: per step, sample sequences and a quality point, unroll the
/// frame chain, backprop, and take an Adam step over the stage's trainable
/// set. Aborts with a diagnostic if the loss goes non-finite.
pub fn train_stage(
    ws: &mut WeightStore,
    cfg: &ModelConfig,
    dataset: &[SyntheticSequence],
    stage: &StageConfig,
    seed: u64,
) -> Result<Vec<StepLog>> {
    if dataset.is_empty() {
        return Err(CodecError::Training("empty dataset".into()));
    }
    for seq in dataset {
        if seq.frames.len() < stage.frames {
            return Err(CodecError::Training(format!(
                "dataset sequences have {} frames, stage {} needs {}",
                seq.frames.len(),
                stage.stage,
                stage.frames
            )));
        }
    }
    let proxy = ProxyNet::new();
    let wt = TemporalWeights::default();
    let mut adam = AdamState::new(stage.lr_start);
    let mut rng = DetRng::substream(seed, stage.stage as u64);
    let mut logs = Vec::with_capacity(stage.steps);

    for step in 0..stage.steps {
        adam.set_lr(cosine_lr(stage.lr_start, stage.lr_end, step, stage.steps));
        let q = match stage.q_fixed {
            Some(q) => QualityIndex::new(q)?,
            None => QualityIndex::new(rng.below(16) as u8)?,
        };

        let mut tape = Tape::<f32>::new();
        let mut losses = Vec::with_capacity(stage.batch);
        let mut bpp_report = 0.0;
        let mut mse_report = 0.0;
        for _ in 0..stage.batch {
            let seq = &dataset[rng.below(dataset.len() as u32) as usize];
            let start = if seq.frames.len() == stage.frames {
                0
            } else {
                rng.below((seq.frames.len() - stage.frames) as u32 + 1) as usize
            };
            let (loss, bpp, mse) =
                forward_sample(&mut tape, ws, cfg, stage, &proxy, seq, start, q, &wt)?;
            bpp_report += bpp / stage.batch as f64;
            mse_report += mse / stage.batch as f64;
            losses.push(loss);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l)?;
        }
        let loss_node = tape.mul_scalar(total, 1.0 / losses.len() as f64);
        let loss_val = tape.value(loss_node).data()[0] as f64;
        if !loss_val.is_finite() {
            return Err(CodecError::Training(format!(
                "non-finite loss at stage {} step {step}",
                stage.stage
            )));
        }
        let grads = tape.backward(loss_node)?;
        let mut filtered = crate::autodiff::GradMap::new();
        for (name, g) in grads {
            if stage.modules.trains(&name) {
                filtered.insert(name, g);
            }
        }
        let map = ws.as_map_mut();
        adam.step(map, &filtered)?;

        logs.push(StepLog {
            step,
            loss: loss_val,
            bpp: bpp_report,
            mse: mse_report,
            lambda: q.lambda(),
        });
    }
    Ok(logs)
}

/// A full training schedule.
#[derive(Debug, Clone)]
pub struct Curriculum {
    pub stages: Vec<StageConfig>,
}

impl Curriculum {
    /// All seven stages at the given step count.
    pub fn desk_default(steps_per_stage: usize) -> Self {
        Curriculum {
            stages: (1..=7)
                .map(|s| StageConfig::stage_default(s, steps_per_stage).unwrap())
                .collect(),
        }
    }

    /// Parse the line-oriented `key=value` stage description. A `stage=<n>`
    /// line opens a new block initialized from that stage's defaults.
    pub fn parse(text: &str) -> Result<Curriculum> {
        let mut stages: Vec<StageConfig> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CodecError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "stage" {
                let id: u8 = value
                    .parse()
                    .map_err(|_| CodecError::Config(format!("bad stage id '{value}'")))?;
                stages.push(StageConfig::stage_default(id, 50)?);
                continue;
            }
            let cur = stages.last_mut().ok_or_else(|| {
                CodecError::Config(format!("line {}: '{key}' before any stage=", lineno + 1))
            })?;
            let parse_usize = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| CodecError::Config(format!("bad integer '{v}' for {key}")))
            };
            let parse_f64 = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| CodecError::Config(format!("bad float '{v}' for {key}")))
            };
            let parse_bool = |v: &str| -> Result<bool> {
                match v {
                    "1" | "true" => Ok(true),
                    "0" | "false" => Ok(false),
                    _ => Err(CodecError::Config(format!("bad flag '{v}' for {key}"))),
                }
            };
            match key {
                "steps" => cur.steps = parse_usize(value)?,
                "batch" => cur.batch = parse_usize(value)?.max(1),
                "frames" => cur.frames = parse_usize(value)?.max(1),
                "patch" => {
                    let (w, h) = value.split_once('x').ok_or_else(|| {
                        CodecError::Config(format!("bad patch '{value}', expected WxH"))
                    })?;
                    cur.patch_w = parse_usize(w)?;
                    cur.patch_h = parse_usize(h)?;
                }
                "lr_start" => cur.lr_start = parse_f64(value)?,
                "lr_end" => cur.lr_end = parse_f64(value)?,
                "modules" => {
                    cur.modules = match value {
                        "lc" => TrainSet::Compressor,
                        "lc+vbp" => TrainSet::CompressorVbp,
                        "fr" => TrainSet::Reconstructor,
                        "all" => TrainSet::All,
                        _ => {
                            return Err(CodecError::Config(format!("unknown modules '{value}'")));
                        }
                    }
                }
                "loss" => {
                    cur.loss = match value {
                        "d" => LossKind::D,
                        "rd" => LossKind::Rd,
                        "rdp" => LossKind::Rdp,
                        "dpt" => LossKind::Dpt,
                        "rdpt" => LossKind::Rdpt,
                        _ => return Err(CodecError::Config(format!("unknown loss '{value}'"))),
                    }
                }
                "wt" => cur.use_temporal_weights = parse_bool(value)?,
                "cascade" => cur.cascade = parse_bool(value)?,
                "compress_i" => cur.compress_intra = parse_bool(value)?,
                "q" => {
                    cur.q_fixed = if value == "sample" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| {
                            CodecError::Config(format!("bad quality '{value}'"))
                        })?)
                    }
                }
                "icc_weight" => cur.icc_weight = parse_f64(value)?,
                _ => return Err(CodecError::Config(format!("unknown key '{key}'"))),
            }
        }
        if stages.is_empty() {
            return Err(CodecError::Config("curriculum defines no stages".into()));
        }
        Ok(Curriculum { stages })
    }
}

/// Execute the stages in order; weights persist after each stage as
/// `stage<k>.nvcw` under `out_dir`, logs as `stage<k>_log.csv`. A stage
/// failure halts the run with earlier artifacts retained.
pub fn run_curriculum(
    curriculum: &Curriculum,
    cfg: &ModelConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(WeightStore, Vec<Vec<StepLog>>)> {
    let max_frames = curriculum.stages.iter().map(|s| s.frames).max().unwrap_or(2);
    let (pw, ph) = curriculum
        .stages
        .first()
        .map(|s| (s.patch_w, s.patch_h))
        .unwrap_or((64, 64));
    let data_cfg = DatasetConfig {
        count: 8,
        width: pw,
        height: ph,
        frames: max_frames.max(4),
        rotation: true,
    };
    let dataset = synthetic_dataset(seed ^ 0xD5, &data_cfg);

    let mut ws = WeightStore::new();
    let mut rng = DetRng::seeded(seed);
    compressor::init_weights(&mut ws, cfg, &mut rng);
    reconstructor::init_weights(&mut ws, cfg, &mut rng);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut all_logs = Vec::new();
    for stage in &curriculum.stages {
        let logs = train_stage(&mut ws, cfg, &dataset, stage, seed)?;
        if let Some(dir) = out_dir {
            ws.save(dir.join(format!("stage{}.nvcw", stage.stage)))?;
            let mut csv = Vec::new();
            write_log_csv(&logs, &mut csv)?;
            std::fs::write(dir.join(format!("stage{}_log.csv", stage.stage)), csv)?;
        }
        all_logs.push(logs);
    }
    if let Some(dir) = out_dir {
        ws.save(dir.join("final.nvcw"))?;
    }
    Ok((ws, all_logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Eager;
    use crate::precision::PrecisionMode;

    fn scalar_terms(
        ex: &mut Eager<f64>,
        idx: usize,
        bpp: f64,
        mse: f64,
    ) -> FrameTerms<crate::exec::Val> {
        FrameTerms {
            frame_index: idx,
            bpp: ex.constant(Tensor::scalar(bpp)),
            mse: ex.constant(Tensor::scalar(mse)),
            perc_l: ex.constant(Tensor::scalar(0.0)),
            perc_d: ex.constant(Tensor::scalar(0.0)),
            icc: ex.constant(Tensor::scalar(0.0)),
        }
    }

    #[test]
    fn rd_formula_arithmetic() {
        let mut ex = Eager::<f64>::new(PrecisionMode::Fp32);
        let recs = vec![scalar_terms(&mut ex, 0, 0.1, 0.01)];
        let wt = TemporalWeights::default();
        let loss = compute_stage_loss(&mut ex, LossKind::Rd, false, 0.1, 256.0, &wt, &recs)
            .unwrap();
        assert!((ex.scalar_value(loss) - 2.66).abs() < 1e-12);
    }

    #[test]
    fn d_formula_arithmetic() {
        let mut ex = Eager::<f64>::new(PrecisionMode::Fp32);
        let recs = vec![scalar_terms(&mut ex, 0, 0.0, 0.01)];
        let wt = TemporalWeights::default();
        let loss =
            compute_stage_loss(&mut ex, LossKind::D, false, 0.1, 384.0, &wt, &recs).unwrap();
        assert!((ex.scalar_value(loss) - 3.84).abs() < 1e-12);
    }

    #[test]
    fn temporal_weight_indexing() {
        let wt = TemporalWeights::default();
        assert_eq!(wt.at(0), 0.5);
        assert_eq!(wt.at(1), 1.2);
        assert_eq!(wt.at(5), 1.2); // cyclic mod 4
        let mut ex = Eager::<f64>::new(PrecisionMode::Fp32);
        let recs = vec![scalar_terms(&mut ex, 1, 0.0, 0.01)];
        let loss =
            compute_stage_loss(&mut ex, LossKind::Rd, true, 0.1, 100.0, &wt, &recs).unwrap();
        // 0 + 100 * 1.2 * 0.01 = 1.2
        assert!((ex.scalar_value(loss) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn stage_defaults_follow_recipe_progression() {
        let s: Vec<StageConfig> =
            (1..=7).map(|i| StageConfig::stage_default(i, 10).unwrap()).collect();
        assert_eq!(s[0].loss, LossKind::D);
        assert_eq!(s[1].loss, LossKind::Rd);
        assert_eq!(s[2].modules, TrainSet::CompressorVbp);
        assert_eq!(s[4].cascade, true);
        assert_eq!(s[5].modules, TrainSet::Reconstructor);
        assert_eq!(s[5].loss, LossKind::Dpt);
        assert_eq!(s[6].modules, TrainSet::All);
        assert_eq!(s[6].loss, LossKind::Rdpt);
        for st in &s[..2] {
            assert_eq!(st.q_fixed, Some(15));
        }
        for st in &s[2..] {
            assert_eq!(st.q_fixed, None);
            assert!(st.compress_intra);
        }
        assert!(StageConfig::stage_default(8, 10).is_err());
    }

    #[test]
    fn curriculum_parse_roundtrip() {
        let text = "
# smoke schedule
stage=2
steps=12
frames=2
lr_start=2e-4
lr_end=1e-5
loss=rd
q=15

stage=6
steps=5
modules=fr
icc_weight=0.0
cascade=1
";
        let cur = Curriculum::parse(text).unwrap();
        assert_eq!(cur.stages.len(), 2);
        assert_eq!(cur.stages[0].steps, 12);
        assert_eq!(cur.stages[0].frames, 2);
        assert_eq!(cur.stages[0].lr_start, 2e-4);
        assert_eq!(cur.stages[1].modules, TrainSet::Reconstructor);
        assert_eq!(cur.stages[1].icc_weight, 0.0);
        assert!(Curriculum::parse("steps=5").is_err());
        assert!(Curriculum::parse("stage=2\nbogus=1").is_err());
        assert!(Curriculum::parse("").is_err());
    }

    #[test]
    fn lambda_draws_stay_in_range() {
        let cfg = ModelConfig::tiny();
        let mut ws = WeightStore::new();
        let mut rng = DetRng::seeded(3);
        compressor::init_weights(&mut ws, &cfg, &mut rng);
        reconstructor::init_weights(&mut ws, &cfg, &mut rng);
        let data_cfg = DatasetConfig { count: 2, width: 32, height: 32, frames: 3, rotation: false };
        let dataset = synthetic_dataset(5, &data_cfg);
        let mut stage = StageConfig::stage_default(3, 6).unwrap();
        stage.frames = 2;
        stage.patch_w = 32;
        stage.patch_h = 32;
        let logs = train_stage(&mut ws, &cfg, &dataset, &stage, 11).unwrap();
        assert_eq!(logs.len(), 6);
        for l in &logs {
            assert!(l.lambda >= 16.0 && l.lambda <= 384.0);
            assert!(l.loss.is_finite());
        }
    }

    #[test]
    fn cascade_changes_gradient_flow() {
        // With the loss restricted to the second frame (compress_intra off),
        // cascading through the chain changes the gradients.
        let cfg = ModelConfig::tiny();
        let mut ws = WeightStore::new();
        let mut rng = DetRng::seeded(7);
        compressor::init_weights(&mut ws, &cfg, &mut rng);
        reconstructor::init_weights(&mut ws, &cfg, &mut rng);
        let data_cfg = DatasetConfig { count: 1, width: 32, height: 32, frames: 2, rotation: false };
        let dataset = synthetic_dataset(9, &data_cfg);
        let proxy = ProxyNet::new();
        let wt = TemporalWeights::default();
        let q = QualityIndex::new(15).unwrap();

        let grads_for = |cascade: bool| {
            let mut stage = StageConfig::stage_default(2, 1).unwrap();
            stage.frames = 2;
            stage.cascade = cascade;
            let mut tape = Tape::<f32>::new();
            let (loss, _, _) =
                forward_sample(&mut tape, &ws, &cfg, &stage, &proxy, &dataset[0], 0, q, &wt)
                    .unwrap();
            tape.backward(loss).unwrap()
        };
        let detached = grads_for(false);
        let cascaded = grads_for(true);
        let name = "lc.analysis.c0.w";
        let a = &detached[name];
        let b = &cascaded[name];
        assert_ne!(a.data(), b.data(), "cascade should alter gradient flow");
    }

    #[test]
    fn short_stage_two_run_trains() {
        let cfg = ModelConfig::tiny();
        let mut ws = WeightStore::new();
        let mut rng = DetRng::seeded(13);
        compressor::init_weights(&mut ws, &cfg, &mut rng);
        reconstructor::init_weights(&mut ws, &cfg, &mut rng);
        let data_cfg = DatasetConfig { count: 3, width: 32, height: 32, frames: 3, rotation: false };
        let dataset = synthetic_dataset(15, &data_cfg);
        let mut stage = StageConfig::stage_default(2, 20).unwrap();
        stage.frames = 2;
        stage.patch_w = 32;
        stage.patch_h = 32;
        let before = ws.get("lc.analysis.c0.w").unwrap().clone();
        let logs = train_stage(&mut ws, &cfg, &dataset, &stage, 17).unwrap();
        assert_eq!(logs.len(), 20);
        assert!(logs.iter().all(|l| l.loss.is_finite()));
        // parameters actually moved, and only compressor ones
        assert_ne!(before.data(), ws.get("lc.analysis.c0.w").unwrap().data());
        let q_enc_before = Tensor::filled(
            ws.get("lc.q_enc.07").unwrap().dims(),
            (QualityIndex::new(7).unwrap().lambda() / 16.0).sqrt() as f32,
        );
        assert_eq!(ws.get("lc.q_enc.07").unwrap().data(), q_enc_before.data());
    }
}
