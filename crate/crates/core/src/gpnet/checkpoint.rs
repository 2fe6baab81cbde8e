//! Parameter files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"GPNET1"
//! u32 input mode (0 = constrained features, 1 = raw RGB)
//! u32 pathway width
//! u32 x4 fusion widths
//! f64 output smoothing sigma
//! f64 x N tensors in NetParams::tensors() order:
//!     pathway 0 layers 0..5, pathway 1, pathway 2 (weight, bias, PReLU slopes each),
//!     then fusion layers 0..5 (weight, bias)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::features::InputMode;
use super::net::{Arch, NetParams};

pub const MAGIC: &[u8; 6] = b"GPNET1";

pub fn write_params(mut w: impl Write, params: &NetParams) -> Result<()> {
    let a = &params.arch;
    w.write_all(MAGIC)?;
    let mode: u32 = match a.mode {
        InputMode::Constrained => 0,
        InputMode::Raw => 1,
    };
    w.write_all(&mode.to_le_bytes())?;
    w.write_all(&(a.pathway_width as u32).to_le_bytes())?;
    for f in a.fusion_widths {
        w.write_all(&(f as u32).to_le_bytes())?;
    }
    w.write_all(&a.sigma_out.to_le_bytes())?;
    for t in params.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn u32_at(buf: &[u8], pos: &mut usize) -> Result<u32> {
    let b = buf
        .get(*pos..*pos + 4)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    *pos += 4;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

fn f64_at(buf: &[u8], pos: &mut usize) -> Result<f64> {
    let b = buf
        .get(*pos..*pos + 8)
        .ok_or_else(|| Error::Checkpoint("truncated data".into()))?;
    *pos += 8;
    Ok(f64::from_le_bytes(b.try_into().unwrap()))
}

/// Reads a parameter file; with `expect` set, any architecture difference is an error.
pub fn read_params(mut r: impl Read, expect: Option<&Arch>) -> Result<NetParams> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.get(..MAGIC.len()) != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("missing GPNET1 magic".into()));
    }
    let mut pos = MAGIC.len();
    let mode = match u32_at(&buf, &mut pos)? {
        0 => InputMode::Constrained,
        1 => InputMode::Raw,
        m => return Err(Error::Checkpoint(format!("unknown input mode {m}"))),
    };
    let pathway_width = u32_at(&buf, &mut pos)? as usize;
    let mut fusion_widths = [0usize; 4];
    for f in &mut fusion_widths {
        *f = u32_at(&buf, &mut pos)? as usize;
    }
    let sigma_out = f64_at(&buf, &mut pos)?;
    if pathway_width == 0 || fusion_widths.contains(&0) || !(sigma_out >= 0.0) {
        return Err(Error::Checkpoint("invalid architecture header".into()));
    }
    let arch = Arch {
        mode,
        pathway_width,
        fusion_widths,
        sigma_out,
    };
    if let Some(e) = expect {
        if *e != arch {
            return Err(Error::Checkpoint(format!("architecture {arch:?} does not match expected {e:?}")));
        }
    }
    let expected_len = pos + 8 * arch.param_count();
    if buf.len() != expected_len {
        return Err(Error::Checkpoint(format!(
            "expected {expected_len} bytes for this architecture, found {}",
            buf.len()
        )));
    }
    let mut params = NetParams::zeros(arch);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64_at(&buf, &mut pos)?;
        }
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &NetParams) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(&mut f, params)?;
    f.flush()?;
    Ok(())
}

pub fn load_params(path: &Path, expect: Option<&Arch>) -> Result<NetParams> {
    read_params(std::fs::File::open(path)?, expect)
}
