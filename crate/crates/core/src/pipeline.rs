//! System layer: container format, encoder loop, synchronous reference
//! decoder, and the asynchronous batch-parallel decoder.
//!
//! The latent loop (entropy decode + context extraction) is the only
//! in-loop computation; frame reconstruction consumes its outputs and never
//! feeds anything back. The async decoder exploits this: a latent worker
//! pushes (reconstructed latent, reconstruction context) pairs through a
//! bounded FIFO while the reconstruction worker drains up to N consecutive
//! entries at a time and runs them as one batch. Emitted frames are
//! bit-identical to the synchronous decoder for every N and queue capacity;
//! batching costs N-1 frames of latency.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use crate::compressor::{
    self, decode_latent, encode_latent, extract_contexts, QualityIndex, TemporalContexts,
};
use crate::config::ModelConfig;
use crate::entropy::Bitstream;
use crate::error::{CodecError, Result};
use crate::reconstructor::{reconstruct_batch, reconstruct_frame, shift_layer_ids};
use crate::shift::{BatchCarry, ShiftState};
use crate::tensor::Tensor;
use crate::weights::WeightStore;
use crate::Tensor32;

const MAGIC: &[u8; 4] = b"DVRT";
const VERSION: u16 = 1;
/// Guard against absurd allocations when reading corrupt containers.
const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameType {
    Intra,
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_type: FrameType,
    pub payload: Vec<u8>,
}

/// Container header; all integers little-endian on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoHeader {
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub intra_period: u16,
    pub quality: u8,
    pub unshuffle: u8,
    pub shift_p: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVideo {
    pub header: VideoHeader,
    pub records: Vec<FrameRecord>,
}

impl EncodedVideo {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.header.width.to_le_bytes())?;
        w.write_all(&self.header.height.to_le_bytes())?;
        w.write_all(&self.header.frame_count.to_le_bytes())?;
        w.write_all(&self.header.intra_period.to_le_bytes())?;
        w.write_all(&[self.header.quality, self.header.unshuffle, self.header.shift_p])?;
        for rec in &self.records {
            let ty = match rec.frame_type {
                FrameType::Intra => 0u8,
                FrameType::Predicted => 1u8,
            };
            w.write_all(&[ty])?;
            w.write_all(&(rec.payload.len() as u32).to_le_bytes())?;
            w.write_all(&rec.payload)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CodecError::Format("bad magic, not an encoded video".into()));
        }
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != VERSION {
            return Err(CodecError::Format(format!("unsupported container version {version}")));
        }
        r.read_exact(&mut b4)?;
        let width = u32::from_le_bytes(b4);
        r.read_exact(&mut b4)?;
        let height = u32::from_le_bytes(b4);
        r.read_exact(&mut b4)?;
        let frame_count = u32::from_le_bytes(b4);
        r.read_exact(&mut b2)?;
        let intra_period = u16::from_le_bytes(b2);
        let mut b3 = [0u8; 3];
        r.read_exact(&mut b3)?;
        let header = VideoHeader {
            width,
            height,
            frame_count,
            intra_period,
            quality: b3[0],
            unshuffle: b3[1],
            shift_p: b3[2],
        };
        if header.intra_period == 0 {
            return Err(CodecError::Format("intra period must be >= 1".into()));
        }
        let mut records = Vec::with_capacity(frame_count as usize);
        for t in 0..frame_count {
            let mut ty = [0u8; 1];
            r.read_exact(&mut ty)?;
            let frame_type = match ty[0] {
                0 => FrameType::Intra,
                1 => FrameType::Predicted,
                other => {
                    return Err(CodecError::Format(format!("unknown frame type {other}")));
                }
            };
            let expect_intra = t % intra_period as u32 == 0;
            if expect_intra != (frame_type == FrameType::Intra) {
                return Err(CodecError::Format(format!(
                    "frame {t} type inconsistent with intra period {intra_period}"
                )));
            }
            r.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4);
            if len > MAX_PAYLOAD {
                return Err(CodecError::Format("payload length out of range".into()));
            }
            let mut payload = vec![0u8; len as usize];
            r.read_exact(&mut payload)?;
            records.push(FrameRecord { frame_type, payload });
        }
        Ok(EncodedVideo { header, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }

    pub fn total_payload_bytes(&self) -> usize {
        self.records.iter().map(|r| r.payload.len()).sum()
    }

    /// Mean bits per pixel across the sequence.
    pub fn bpp(&self) -> f64 {
        let pixels =
            self.header.width as f64 * self.header.height as f64 * self.header.frame_count as f64;
        if pixels == 0.0 {
            return 0.0;
        }
        self.total_payload_bytes() as f64 * 8.0 / pixels
    }
}

/// Encoder-side settings.
#[derive(Debug, Clone, Copy)]
pub struct EncodeConfig {
    pub intra_period: u16,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig { intra_period: 32 }
    }
}

/// Encode a frame sequence. Intra frames are the zero-context path; the
/// frame reconstructor is never invoked (it sits outside the coding loop).
pub fn encode_video(
    frames: &[Tensor32],
    q: QualityIndex,
    cfg: &ModelConfig,
    enc: &EncodeConfig,
    ws: &WeightStore,
) -> Result<EncodedVideo> {
    let first = frames.first().ok_or_else(|| CodecError::Config("no frames to encode".into()))?;
    let d = first.dims();
    if d.n != 1 || d.c != 3 {
        return Err(CodecError::Config("frames must be (1,3,H,W)".into()));
    }
    if d.h % cfg.s != 0 || d.w % cfg.s != 0 {
        return Err(CodecError::Config(format!(
            "frame dims {}x{} not divisible by unshuffle factor {}",
            d.h, d.w, cfg.s
        )));
    }
    if enc.intra_period == 0 {
        return Err(CodecError::Config("intra period must be >= 1".into()));
    }
    let (lat_h, lat_w) = (d.h / cfg.s, d.w / cfg.s);
    let mut records = Vec::with_capacity(frames.len());
    let mut prev_lbar: Option<Tensor32> = None;
    for (t, frame) in frames.iter().enumerate() {
        if frame.dims() != d {
            return Err(CodecError::Config("inconsistent frame dimensions".into()));
        }
        let intra = t % enc.intra_period as usize == 0;
        let ctx = if intra {
            TemporalContexts::zeros(cfg, lat_h, lat_w)
        } else {
            extract_contexts(ws, cfg, prev_lbar.as_ref().unwrap())?
        };
        let raw = compressor::to_latent(frame, cfg.s)?;
        let (bits, lbar) = encode_latent(ws, cfg, &raw, &ctx, q)?;
        prev_lbar = Some(lbar);
        records.push(FrameRecord {
            frame_type: if intra { FrameType::Intra } else { FrameType::Predicted },
            payload: bits.bytes().to_vec(),
        });
    }
    Ok(EncodedVideo {
        header: VideoHeader {
            width: d.w as u32,
            height: d.h as u32,
            frame_count: frames.len() as u32,
            intra_period: enc.intra_period,
            quality: q.get(),
            unshuffle: cfg.s as u8,
            shift_p: cfg.shift.p as u8,
        },
        records,
    })
}

fn check_config(ev: &EncodedVideo, cfg: &ModelConfig) -> Result<(usize, usize)> {
    if ev.header.unshuffle as usize != cfg.s {
        return Err(CodecError::Config(format!(
            "container unshuffle factor {} does not match model {}",
            ev.header.unshuffle, cfg.s
        )));
    }
    if ev.header.shift_p as usize != cfg.shift.p {
        return Err(CodecError::Config(format!(
            "container shift fraction {} does not match model {}",
            ev.header.shift_p, cfg.shift.p
        )));
    }
    Ok((ev.header.height as usize / cfg.s, ev.header.width as usize / cfg.s))
}

/// Single-threaded reference decoder. Shift buffers reset at every intra
/// frame, so each intra period is independently decodable.
pub fn decode_video_sync(
    ev: &EncodedVideo,
    ws: &WeightStore,
    cfg: &ModelConfig,
) -> Result<Vec<Tensor32>> {
    let (lat_h, lat_w) = check_config(ev, cfg)?;
    let q = QualityIndex::new(ev.header.quality)?;
    let mut state = ShiftState::new(cfg.shift, shift_layer_ids(cfg));
    let mut prev_lbar: Option<Tensor32> = None;
    let mut frames = Vec::with_capacity(ev.records.len());
    for rec in &ev.records {
        let ctx = match rec.frame_type {
            FrameType::Intra => {
                state.reset();
                TemporalContexts::zeros(cfg, lat_h, lat_w)
            }
            FrameType::Predicted => {
                let prev = prev_lbar
                    .as_ref()
                    .ok_or_else(|| CodecError::Format("P-frame without reference".into()))?;
                extract_contexts(ws, cfg, prev)?
            }
        };
        let bits = Bitstream::from_bytes(rec.payload.clone());
        let lbar = decode_latent(ws, cfg, &bits, &ctx, q)?;
        let frame = reconstruct_frame(ws, cfg, &lbar, &ctx.cm, &mut state)?;
        prev_lbar = Some(lbar);
        frames.push(frame);
    }
    Ok(frames)
}

/// Async pipeline settings. `reconstruct_delay` artificially slows the
/// reconstruction worker (used by liveness tests).
#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub parallel: usize,
    pub queue_capacity: usize,
    pub reconstruct_delay: Option<Duration>,
}

impl PipelineConfig {
    pub fn with_parallel(n: usize) -> Self {
        PipelineConfig { parallel: n, queue_capacity: 2 * n, reconstruct_delay: None }
    }

    fn validate(&self) -> Result<()> {
        if self.parallel == 0 {
            return Err(CodecError::Config("parallel batch size must be >= 1".into()));
        }
        if self.queue_capacity < self.parallel {
            return Err(CodecError::Config("queue capacity must be >= batch size".into()));
        }
        Ok(())
    }
}

/// Run log of an async decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsyncRunLog {
    pub parallel: usize,
    pub queue_capacity: usize,
    /// Frames of delay introduced by batch assembly: N - 1.
    pub latency_frames: usize,
    pub batches: usize,
}

struct LatentItem {
    index: usize,
    intra: bool,
    lbar: Tensor32,
    cm: Tensor32,
}

/// Two-worker decoder: a latent worker runs the sequential in-loop chain and
/// a reconstruction worker drains the bounded queue in batches of up to N
/// consecutive frames (never crossing an intra boundary). Output is
/// bit-identical to [`decode_video_sync`].
pub fn decode_video_async(
    ev: &EncodedVideo,
    ws: &WeightStore,
    cfg: &ModelConfig,
    pcfg: &PipelineConfig,
) -> Result<(Vec<Tensor32>, AsyncRunLog)> {
    pcfg.validate()?;
    let (lat_h, lat_w) = check_config(ev, cfg)?;
    let q = QualityIndex::new(ev.header.quality)?;
    let n = pcfg.parallel;

    let (tx, rx) = mpsc::sync_channel::<Result<LatentItem>>(pcfg.queue_capacity);
    let mut frames: Vec<Tensor32> = Vec::with_capacity(ev.records.len());
    let mut carry = BatchCarry::new(cfg.shift, shift_layer_ids(cfg));
    let mut batches = 0usize;

    std::thread::scope(|scope| -> Result<()> {
        let latent_worker = scope.spawn(move || {
            let mut prev_lbar: Option<Tensor32> = None;
            for (index, rec) in ev.records.iter().enumerate() {
                let mut step = || -> Result<LatentItem> {
                    let ctx = match rec.frame_type {
                        FrameType::Intra => TemporalContexts::zeros(cfg, lat_h, lat_w),
                        FrameType::Predicted => {
                            let prev = prev_lbar.as_ref().ok_or_else(|| {
                                CodecError::Format("P-frame without reference".into())
                            })?;
                            extract_contexts(ws, cfg, prev)?
                        }
                    };
                    let bits = Bitstream::from_bytes(rec.payload.clone());
                    let lbar = decode_latent(ws, cfg, &bits, &ctx, q)?;
                    prev_lbar = Some(lbar.clone());
                    Ok(LatentItem {
                        index,
                        intra: rec.frame_type == FrameType::Intra,
                        lbar,
                        cm: ctx.cm,
                    })
                };
                match step() {
                    Ok(item) => {
                        // receiver gone means the consumer failed; just stop
                        if tx.send(Ok(item)).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
            }
        });

        let mut pending: Vec<LatentItem> = Vec::with_capacity(n);
        let flush = |pending: &mut Vec<LatentItem>,
                         frames: &mut Vec<Tensor32>,
                         carry: &mut BatchCarry<f32>,
                         batches: &mut usize|
         -> Result<()> {
            if pending.is_empty() {
                return Ok(());
            }
            if let Some(delay) = pcfg.reconstruct_delay {
                std::thread::sleep(delay);
            }
            let lbars: Vec<Tensor32> = pending.iter().map(|i| i.lbar.clone()).collect();
            let cms: Vec<Tensor32> = pending.iter().map(|i| i.cm.clone()).collect();
            let lb = Tensor::stack(&lbars).map_err(CodecError::Tensor)?;
            let cb = Tensor::stack(&cms).map_err(CodecError::Tensor)?;
            let out = reconstruct_batch(ws, cfg, &lb, &cb, carry)?;
            for (i, item) in pending.iter().enumerate() {
                debug_assert_eq!(item.index, frames.len());
                frames.push(out.sample(i));
            }
            *batches += 1;
            pending.clear();
            Ok(())
        };

        let result = (|| -> Result<()> {
            while let Ok(msg) = rx.recv() {
                let item = msg?;
                if item.intra {
                    // never batch across a random-access point
                    flush(&mut pending, &mut frames, &mut carry, &mut batches)?;
                    carry.reset();
                }
                pending.push(item);
                if pending.len() == n {
                    flush(&mut pending, &mut frames, &mut carry, &mut batches)?;
                }
            }
            // channel closed: tail batch may be smaller than N
            flush(&mut pending, &mut frames, &mut carry, &mut batches)
        })();

        // On consumer failure the sender unblocks because rx is dropped at
        // scope exit; join the worker either way.
        result?;
        latent_worker
            .join()
            .map_err(|_| CodecError::Worker("latent worker panicked".into()))?;
        Ok(())
    })?;

    if frames.len() != ev.records.len() {
        return Err(CodecError::Worker(format!(
            "decoded {} of {} frames",
            frames.len(),
            ev.records.len()
        )));
    }
    Ok((
        frames,
        AsyncRunLog {
            parallel: n,
            queue_capacity: pcfg.queue_capacity,
            latency_frames: n - 1,
            batches,
        },
    ))
}

/// One throughput measurement row.
#[derive(Debug, Clone)]
pub struct BenchRow {
    /// None for the synchronous baseline, Some(N) for async configs.
    pub parallel: Option<usize>,
    pub fps: f64,
    pub latency_frames: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for row in &self.rows {
            match row.parallel {
                Some(n) => {
                    writeln!(f, "N={} fps={:.3} latency_frames={}", n, row.fps, row.latency_frames)?
                }
                None => writeln!(f, "sync fps={:.3} latency_frames=0", row.fps)?,
            }
        }
        Ok(())
    }
}

/// Wall-clock decode throughput: sync baseline plus one row per requested N.
/// One warm-up run per configuration, then the median of `measured` runs.
/// Numbers are machine-dependent; only the report structure is contractual.
pub fn throughput_bench(
    ev: &EncodedVideo,
    ws: &WeightStore,
    cfg: &ModelConfig,
    n_list: &[usize],
    measured: usize,
) -> Result<BenchReport> {
    let frames = ev.records.len().max(1) as f64;
    let measured = measured.max(1);
    let mut rows = Vec::new();

    let run_sync = || -> Result<f64> {
        let start = Instant::now();
        decode_video_sync(ev, ws, cfg)?;
        Ok(frames / start.elapsed().as_secs_f64())
    };
    run_sync()?; // warm-up
    let mut samples: Vec<f64> = (0..measured).map(|_| run_sync()).collect::<Result<_>>()?;
    samples.sort_by(|a, b| a.total_cmp(b));
    rows.push(BenchRow { parallel: None, fps: samples[samples.len() / 2], latency_frames: 0 });

    for &n in n_list {
        let pcfg = PipelineConfig::with_parallel(n);
        let run = || -> Result<f64> {
            let start = Instant::now();
            decode_video_async(ev, ws, cfg, &pcfg)?;
            Ok(frames / start.elapsed().as_secs_f64())
        };
        run()?; // warm-up
        let mut samples: Vec<f64> = (0..measured).map(|_| run()).collect::<Result<_>>()?;
        samples.sort_by(|a, b| a.total_cmp(b));
        rows.push(BenchRow {
            parallel: Some(n),
            fps: samples[samples.len() / 2],
            latency_frames: n - 1,
        });
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform_tensor, DetRng};
    use crate::tensor::Dims;

    fn toy_model(seed: u64) -> (WeightStore, ModelConfig) {
        let cfg = ModelConfig::tiny();
        let mut ws = WeightStore::new();
        compressor::init_weights(&mut ws, &cfg, &mut DetRng::seeded(seed));
        crate::reconstructor::init_weights(&mut ws, &cfg, &mut DetRng::seeded(seed + 1));
        (ws, cfg)
    }

    fn toy_frames(count: usize, seed: u64) -> Vec<Tensor32> {
        let mut r = DetRng::seeded(seed);
        (0..count).map(|_| uniform_tensor(Dims::new(1, 3, 32, 32), 0.0, 1.0, &mut r)).collect()
    }

    #[test]
    fn container_roundtrip_and_layout() {
        let (ws, cfg) = toy_model(1);
        let frames = toy_frames(3, 2);
        let q = QualityIndex::new(5).unwrap();
        let ev = encode_video(&frames, q, &cfg, &EncodeConfig { intra_period: 2 }, &ws).unwrap();
        let mut bytes = Vec::new();
        ev.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"DVRT");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1); // version
        assert_eq!(u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]), 32); // width
        let back = EncodedVideo::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ev);
        // frame types: I P I for intra period 2
        assert_eq!(ev.records[0].frame_type, FrameType::Intra);
        assert_eq!(ev.records[1].frame_type, FrameType::Predicted);
        assert_eq!(ev.records[2].frame_type, FrameType::Intra);
    }

    #[test]
    fn single_frame_is_one_intra_record() {
        let (ws, cfg) = toy_model(3);
        let frames = toy_frames(1, 4);
        let ev = encode_video(
            &frames,
            QualityIndex::new(0).unwrap(),
            &cfg,
            &EncodeConfig::default(),
            &ws,
        )
        .unwrap();
        assert_eq!(ev.records.len(), 1);
        assert_eq!(ev.records[0].frame_type, FrameType::Intra);
    }

    #[test]
    fn intra_period_boundary() {
        let (ws, cfg) = toy_model(5);
        let frames = toy_frames(33, 6);
        let ev = encode_video(
            &frames,
            QualityIndex::new(3).unwrap(),
            &cfg,
            &EncodeConfig { intra_period: 32 },
            &ws,
        )
        .unwrap();
        for (t, rec) in ev.records.iter().enumerate() {
            let want = if t % 32 == 0 { FrameType::Intra } else { FrameType::Predicted };
            assert_eq!(rec.frame_type, want, "frame {t}");
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let (ws, cfg) = toy_model(7);
        let frames = toy_frames(4, 8);
        let q = QualityIndex::new(9).unwrap();
        let enc = EncodeConfig { intra_period: 4 };
        let a = encode_video(&frames, q, &cfg, &enc, &ws).unwrap();
        let b = encode_video(&frames, q, &cfg, &enc, &ws).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.write_to(&mut ba).unwrap();
        b.write_to(&mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn sync_decode_shape_and_range() {
        let (ws, cfg) = toy_model(9);
        let frames = toy_frames(5, 10);
        let ev = encode_video(
            &frames,
            QualityIndex::new(15).unwrap(),
            &cfg,
            &EncodeConfig { intra_period: 3 },
            &ws,
        )
        .unwrap();
        let out = decode_video_sync(&ev, &ws, &cfg).unwrap();
        assert_eq!(out.len() as u32, ev.header.frame_count);
        for f in &out {
            assert_eq!(f.dims(), Dims::new(1, 3, 32, 32));
            assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn async_matches_sync_across_configs() {
        let (ws, cfg) = toy_model(11);
        let frames = toy_frames(9, 12);
        let ev = encode_video(
            &frames,
            QualityIndex::new(7).unwrap(),
            &cfg,
            &EncodeConfig { intra_period: 5 },
            &ws,
        )
        .unwrap();
        let sync = decode_video_sync(&ev, &ws, &cfg).unwrap();
        for n in [1usize, 2, 4, 8] {
            for q_cap in [n, 2 * n] {
                let pcfg = PipelineConfig {
                    parallel: n,
                    queue_capacity: q_cap,
                    reconstruct_delay: None,
                };
                let (got, log) = decode_video_async(&ev, &ws, &cfg, &pcfg).unwrap();
                assert_eq!(got, sync, "N={n} Q={q_cap}");
                assert_eq!(log.latency_frames, n - 1);
            }
        }
    }

    #[test]
    fn async_liveness_with_slow_reconstruction() {
        let (ws, cfg) = toy_model(13);
        let frames = toy_frames(6, 14);
        let ev = encode_video(
            &frames,
            QualityIndex::new(2).unwrap(),
            &cfg,
            &EncodeConfig { intra_period: 32 },
            &ws,
        )
        .unwrap();
        let pcfg = PipelineConfig {
            parallel: 2,
            queue_capacity: 2, // Q = N: producer must block, not deadlock
            reconstruct_delay: Some(Duration::from_millis(10)),
        };
        let sync = decode_video_sync(&ev, &ws, &cfg).unwrap();
        let (got, _) = decode_video_async(&ev, &ws, &cfg, &pcfg).unwrap();
        assert_eq!(got, sync);
    }

    #[test]
    fn bench_report_structure() {
        let (ws, cfg) = toy_model(15);
        let frames = toy_frames(3, 16);
        let ev = encode_video(
            &frames,
            QualityIndex::new(1).unwrap(),
            &cfg,
            &EncodeConfig::default(),
            &ws,
        )
        .unwrap();
        let report = throughput_bench(&ev, &ws, &cfg, &[1, 2], 1).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows[0].parallel.is_none());
        for row in &report.rows {
            assert!(row.fps.is_finite() && row.fps > 0.0);
            if let Some(n) = row.parallel {
                assert_eq!(row.latency_frames, n - 1);
            }
        }
        let text = report.to_string();
        assert!(text.contains("sync fps="));
        assert!(text.contains("N=2 fps="));
        assert!(text.contains("latency_frames=1"));
    }

    #[test]
    fn truncated_container_rejected() {
        let (ws, cfg) = toy_model(17);
        let frames = toy_frames(2, 18);
        let ev = encode_video(
            &frames,
            QualityIndex::new(0).unwrap(),
            &cfg,
            &EncodeConfig::default(),
            &ws,
        )
        .unwrap();
        let mut bytes = Vec::new();
        ev.write_to(&mut bytes).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(EncodedVideo::read_from(cut).is_err());
    }
}
