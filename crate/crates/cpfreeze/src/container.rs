//! Binary container for feature maps, proposal lists and perturbations.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CPFZ" | version: u16 | kind: u16 | kind header | f32 payload
//! ```
//!
//! Feature maps carry `agent_id, timestamp: u32`, `x, y, yaw, resolution: f64`
//! and `C, H, W: u32` ahead of the `C*H*W` values. Proposal lists carry a
//! `u32` count, then per box eight `f32` (x, y, z, l, w, h, yaw, score) and
//! three `u32` (anchor, row, col). Perturbations carry `C, H, W: u32` and the
//! delta. Payload values are narrowed to `f32`.

use std::io::{self, Read, Write};

use cpfreeze_core::{FeatureMap, PoseSE2, ProposalBox, SourceIndex, Tensor3};

pub const MAGIC: [u8; 4] = *b"CPFZ";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Kind {
    FeatureMap = 1,
    Proposals = 2,
    Perturbation = 3,
}

impl Kind {
    fn from_u16(v: u16) -> Option<Self> {
        match v {
            1 => Some(Kind::FeatureMap),
            2 => Some(Kind::Proposals),
            3 => Some(Kind::Perturbation),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("not a cpfreeze container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("expected a {expected:?} container, found kind {found}")]
    Kind { expected: Kind, found: u16 },
    #[error("invalid header: {0}")]
    Header(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ContainerError>;

fn write_header(w: &mut impl Write, kind: Kind) -> io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(kind as u16).to_le_bytes())
}

fn read_header(r: &mut impl Read, expected: Kind) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let kind = read_u16(r)?;
    if Kind::from_u16(kind) != Some(expected) {
        return Err(ContainerError::Kind { expected, found: kind });
    }
    Ok(())
}

fn read_u16(r: &mut impl Read) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_tensor(w: &mut impl Write, t: &Tensor3) -> io::Result<()> {
    let (c, h, wd) = t.shape();
    for d in [c, h, wd] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.as_slice().len() * 4);
    for &v in t.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor3> {
    let (c, h, w) = (read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize);
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .filter(|&n| n > 0 && n <= (1 << 28))
        .ok_or(ContainerError::Header("tensor shape is empty or too large"))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    Tensor3::from_vec(c, h, w, data).map_err(|_| ContainerError::Header("tensor shape does not match payload"))
}

pub fn write_feature_map(w: &mut impl Write, f: &FeatureMap) -> io::Result<()> {
    write_header(w, Kind::FeatureMap)?;
    w.write_all(&f.agent_id.to_le_bytes())?;
    w.write_all(&f.timestamp.to_le_bytes())?;
    for v in [f.pose.x, f.pose.y, f.pose.yaw, f.resolution] {
        w.write_all(&v.to_le_bytes())?;
    }
    write_tensor(w, &f.data)
}

pub fn read_feature_map(r: &mut impl Read) -> Result<FeatureMap> {
    read_header(r, Kind::FeatureMap)?;
    let agent_id = read_u32(r)?;
    let timestamp = read_u32(r)?;
    let (x, y, yaw, resolution) = (read_f64(r)?, read_f64(r)?, read_f64(r)?, read_f64(r)?);
    let data = read_tensor(r)?;
    Ok(FeatureMap::new(agent_id, timestamp, PoseSE2 { x, y, yaw }, resolution, data))
}

pub fn write_proposals(w: &mut impl Write, boxes: &[ProposalBox]) -> io::Result<()> {
    write_header(w, Kind::Proposals)?;
    w.write_all(&(boxes.len() as u32).to_le_bytes())?;
    for b in boxes {
        for v in [b.x, b.y, b.z, b.length, b.width, b.height, b.yaw, b.score] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        for v in [b.source.anchor, b.source.row, b.source.col] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_proposals(r: &mut impl Read) -> Result<Vec<ProposalBox>> {
    read_header(r, Kind::Proposals)?;
    let n = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let mut v = [0f64; 8];
        for slot in v.iter_mut() {
            *slot = read_f32(r)? as f64;
        }
        let source = SourceIndex { anchor: read_u32(r)?, row: read_u32(r)?, col: read_u32(r)? };
        out.push(ProposalBox {
            x: v[0],
            y: v[1],
            z: v[2],
            length: v[3],
            width: v[4],
            height: v[5],
            yaw: v[6],
            score: v[7],
            source,
        });
    }
    Ok(out)
}

pub fn write_perturbation(w: &mut impl Write, delta: &Tensor3) -> io::Result<()> {
    write_header(w, Kind::Perturbation)?;
    write_tensor(w, delta)
}

pub fn read_perturbation(r: &mut impl Read) -> Result<Tensor3> {
    read_header(r, Kind::Perturbation)?;
    read_tensor(r)
}
