//! Frame I/O: binary PPM (P6) directories and the "NVCR" raw container.
//!
//! Frames are 8-bit interleaved RGB on disk and [0,1] floats in memory;
//! conversion divides by 255 on read and rounds half-up on write, so a
//! float produced from a byte round-trips within 1/510 per channel.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CodecError, Result};
use crate::tensor::{Dims, Tensor};
use crate::Tensor32;

const NVCR_MAGIC: &[u8; 4] = b"NVCR";

/// 8-bit RGB frame sequence with uniform dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    width: usize,
    height: usize,
    frames: Vec<Vec<u8>>,
}

impl FrameSequence {
    pub fn new(width: usize, height: usize, frames: Vec<Vec<u8>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(CodecError::Format("frame sequence must hold at least one frame".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.len() != 3 * width * height {
                return Err(CodecError::Format(format!(
                    "frame {i}: {} bytes, expected {}",
                    f.len(),
                    3 * width * height
                )));
            }
        }
        Ok(FrameSequence { width, height, frames })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn count(&self) -> usize {
        self.frames.len()
    }
    pub fn frame_bytes(&self, i: usize) -> &[u8] {
        &self.frames[i]
    }

    /// Planar [0,1] float tensor of frame `i`.
    pub fn to_tensor(&self, i: usize) -> Tensor32 {
        let (w, h) = (self.width, self.height);
        let mut t = Tensor::zeros(Dims::new(1, 3, h, w));
        let bytes = &self.frames[i];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    t.set(0, c, y, x, bytes[3 * (y * w + x) + c] as f32 / 255.0);
                }
            }
        }
        t
    }

    pub fn to_tensors(&self) -> Vec<Tensor32> {
        (0..self.count()).map(|i| self.to_tensor(i)).collect()
    }

    /// Quantize [0,1] float frames (round half up) into a sequence.
    pub fn from_tensors(frames: &[Tensor32]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| CodecError::Format("no frames to convert".into()))?;
        let d = first.dims();
        if d.n != 1 || d.c != 3 {
            return Err(CodecError::Format("expected (1,3,H,W) frames".into()));
        }
        let mut out = Vec::with_capacity(frames.len());
        for t in frames {
            if t.dims() != d {
                return Err(CodecError::Format("inconsistent frame dims".into()));
            }
            let mut bytes = vec![0u8; 3 * d.h * d.w];
            for y in 0..d.h {
                for x in 0..d.w {
                    for c in 0..3 {
                        let v = t.at(0, c, y, x).clamp(0.0, 1.0);
                        bytes[3 * (y * d.w + x) + c] = (v * 255.0 + 0.5).floor() as u8;
                    }
                }
            }
            out.push(bytes);
        }
        FrameSequence::new(d.w, d.h, out)
    }
}

fn write_ppm(frame: &[u8], w: usize, h: usize, mut out: impl Write) -> Result<()> {
    write!(out, "P6\n{w} {h}\n255\n")?;
    out.write_all(frame)?;
    Ok(())
}

fn read_ppm(mut input: impl Read) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    // header: "P6" <ws> width <ws> height <ws> maxval <single ws> data
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CodecError::Format("truncated ppm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(&bytes)?;
    if magic != "P6" {
        return Err(CodecError::Format(format!("not a binary ppm (magic '{magic}')")));
    }
    let w: usize =
        token(&bytes)?.parse().map_err(|_| CodecError::Format("bad ppm width".into()))?;
    let h: usize =
        token(&bytes)?.parse().map_err(|_| CodecError::Format("bad ppm height".into()))?;
    let maxval: usize =
        token(&bytes)?.parse().map_err(|_| CodecError::Format("bad ppm maxval".into()))?;
    if maxval != 255 {
        return Err(CodecError::Format(format!("ppm maxval {maxval}, only 255 supported")));
    }
    pos += 1; // single whitespace after maxval
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(CodecError::Format("ppm pixel data truncated".into()));
    }
    Ok((w, h, bytes[pos..pos + need].to_vec()))
}

/// Write frames as `frame_%06d.ppm` under a directory.
pub fn save_ppm_dir(seq: &FrameSequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for i in 0..seq.count() {
        let mut buf = Vec::new();
        write_ppm(seq.frame_bytes(i), seq.width(), seq.height(), &mut buf)?;
        std::fs::write(dir.join(format!("frame_{i:06}.ppm")), buf)?;
    }
    Ok(())
}

/// Read consecutive `frame_%06d.ppm` files starting at index 0.
pub fn load_ppm_dir(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let mut frames = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for i in 0.. {
        let path = dir.join(format!("frame_{i:06}.ppm"));
        if !path.exists() {
            break;
        }
        let bytes = std::fs::read(&path)?;
        let (w, h, data) = read_ppm(bytes.as_slice())?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(CodecError::Format(format!(
                    "frame {i} is {w}x{h}, expected {}x{}",
                    d.0, d.1
                )));
            }
            _ => {}
        }
        frames.push(data);
    }
    let (w, h) = dims.ok_or_else(|| {
        CodecError::Format(format!("no frame_000000.ppm under {}", dir.display()))
    })?;
    FrameSequence::new(w, h, frames)
}

/// Raw container: magic "NVCR", u32 width, u32 height, u32 count, then
/// count interleaved RGB frames.
pub fn write_nvcr(seq: &FrameSequence, mut w: impl Write) -> Result<()> {
    w.write_all(NVCR_MAGIC)?;
    w.write_all(&(seq.width() as u32).to_le_bytes())?;
    w.write_all(&(seq.height() as u32).to_le_bytes())?;
    w.write_all(&(seq.count() as u32).to_le_bytes())?;
    for i in 0..seq.count() {
        w.write_all(seq.frame_bytes(i))?;
    }
    Ok(())
}

pub fn read_nvcr(mut r: impl Read) -> Result<FrameSequence> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NVCR_MAGIC {
        return Err(CodecError::Format("bad magic, not a raw frame container".into()));
    }
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    let w = u32::from_le_bytes(b) as usize;
    r.read_exact(&mut b)?;
    let h = u32::from_le_bytes(b) as usize;
    r.read_exact(&mut b)?;
    let count = u32::from_le_bytes(b) as usize;
    if w == 0 || h == 0 || count == 0 || w > 1 << 16 || h > 1 << 16 {
        return Err(CodecError::Format("unreasonable raw container header".into()));
    }
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let mut data = vec![0u8; 3 * w * h];
        r.read_exact(&mut data)?;
        frames.push(data);
    }
    FrameSequence::new(w, h, frames)
}

/// Load one PPM file as a single-frame sequence.
pub fn load_ppm_file(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let bytes = std::fs::read(path.as_ref())?;
    let (w, h, data) = read_ppm(bytes.as_slice())?;
    FrameSequence::new(w, h, vec![data])
}

/// Load frames from either a PPM directory or an NVCR file.
pub fn load_frames(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    if path.is_dir() {
        load_ppm_dir(path)
    } else {
        let bytes = std::fs::read(path)?;
        read_nvcr(bytes.as_slice())
    }
}

/// Save frames to a PPM directory or, if the path ends in `.nvcr`, the raw
/// container.
pub fn save_frames(seq: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().map(|e| e == "nvcr").unwrap_or(false) {
        let mut buf = Vec::new();
        write_nvcr(seq, &mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    } else {
        save_ppm_dir(seq, path)
    }
}
