//! File formats: the "MRTF" binary tensor container (magic, version, dtype,
//! dims, little-endian payload, trailing CRC32), map/camera/matrix helpers on
//! top of it, a binary PLY writer for inspection, PGM mask export, and MoE
//! layer serialization with a JSON manifest.
//!
//! Map codecs store invalid pixels as NaN payload entries; validity masks are
//! reconstructed on load (and, for depth, positivity is required).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depthprior::{ConfidenceMask, DepthMap};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::losses::{NormalMap, PointMap};
use crate::moe::{ExpertFfn, MoeLayer, Router};
use crate::numeric::Matrix;
use crate::synth::CameraParams;

pub const TENSOR_MAGIC: [u8; 4] = *b"MRTF";
pub const TENSOR_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U8,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::U8 => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Dtype> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::U8),
            _ => Err(Error::TensorFormat(format!("unknown dtype tag {tag}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Tensor> {
        let expected: u64 = dims.iter().product();
        if expected != data.len() as u64 {
            return Err(Error::TensorFormat(format!(
                "dims {:?} give {} elements but payload has {}",
                dims,
                expected,
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::TensorFormat("rank exceeds 255".to_string()));
        }
        Ok(Tensor { dims, data })
    }

    pub fn f64_data(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            other => Err(Error::TensorFormat(format!(
                "expected f64 payload, found {:?}",
                other.dtype()
            ))),
        }
    }
}

/// Serializes to the container layout and appends the CRC32 of all preceding
/// bytes.
pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let dtype = t.data.dtype();
    let mut buf = Vec::with_capacity(8 + t.dims.len() * 8 + t.data.len() * dtype.size() + 4);
    buf.extend_from_slice(&TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.push(dtype.tag());
    buf.push(t.dims.len() as u8);
    for d in &t.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::F64(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::U8(v) => buf.extend_from_slice(v),
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 12 {
        return Err(Error::TensorFormat("file too short".to_string()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(Error::TensorFormat(format!(
            "crc mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }
    if body[0..4] != TENSOR_MAGIC {
        return Err(Error::TensorFormat("bad magic".to_string()));
    }
    let version = u16::from_le_bytes(body[4..6].try_into().expect("2 bytes"));
    if version != TENSOR_VERSION {
        return Err(Error::TensorFormat(format!(
            "unsupported version {version}"
        )));
    }
    let dtype = Dtype::from_tag(body[6])?;
    let rank = body[7] as usize;
    let header = 8 + rank * 8;
    if body.len() < header {
        return Err(Error::TensorFormat("truncated dims".to_string()));
    }
    let mut dims = Vec::with_capacity(rank);
    for r in 0..rank {
        let off = 8 + r * 8;
        dims.push(u64::from_le_bytes(
            body[off..off + 8].try_into().expect("8 bytes"),
        ));
    }
    let count: u64 = dims.iter().product();
    let payload = &body[header..];
    if payload.len() as u64 != count * dtype.size() as u64 {
        return Err(Error::TensorFormat(format!(
            "payload length {} does not match dims {:?}",
            payload.len(),
            dims
        )));
    }
    let data = match dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ),
        Dtype::U8 => TensorData::U8(payload.to_vec()),
    };
    Tensor::new(dims, data)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, tensor_to_bytes(t))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    tensor_from_bytes(&bytes)
}

// ---------------------------------------------------------------------------
// Map helpers (NaN payload = invalid pixel)
// ---------------------------------------------------------------------------

pub fn save_depth_map(path: &Path, depth: &DepthMap) -> Result<()> {
    let vals: Vec<f64> = depth
        .values()
        .iter()
        .zip(depth.valid().iter())
        .map(|(v, &ok)| if ok { *v } else { f64::NAN })
        .collect();
    let t = Tensor::new(
        vec![depth.height() as u64, depth.width() as u64],
        TensorData::F64(vals),
    )?;
    write_tensor(path, &t)
}

pub fn load_depth_map(path: &Path) -> Result<DepthMap> {
    let t = read_tensor(path)?;
    if t.dims.len() != 2 {
        return Err(Error::TensorFormat(format!(
            "depth map must be rank 2, got rank {}",
            t.dims.len()
        )));
    }
    let (h, w) = (t.dims[0] as usize, t.dims[1] as usize);
    let data = t.f64_data()?;
    let valid: Vec<bool> = data.iter().map(|v| v.is_finite() && *v > 0.0).collect();
    let values: Vec<f64> = data
        .iter()
        .zip(valid.iter())
        .map(|(v, &ok)| if ok { *v } else { 0.0 })
        .collect();
    DepthMap::new(h, w, values, valid)
}

fn save_vec3_grid(path: &Path, h: usize, w: usize, grid: &[Vec3], valid: &[bool]) -> Result<()> {
    let mut vals = Vec::with_capacity(grid.len() * 3);
    for (v, &ok) in grid.iter().zip(valid.iter()) {
        if ok {
            vals.extend_from_slice(&[v.x, v.y, v.z]);
        } else {
            vals.extend_from_slice(&[f64::NAN, f64::NAN, f64::NAN]);
        }
    }
    let t = Tensor::new(vec![h as u64, w as u64, 3], TensorData::F64(vals))?;
    write_tensor(path, &t)
}

fn load_vec3_grid(path: &Path) -> Result<(usize, usize, Vec<Vec3>, Vec<bool>)> {
    let t = read_tensor(path)?;
    if t.dims.len() != 3 || t.dims[2] != 3 {
        return Err(Error::TensorFormat(format!(
            "vector grid must be HxWx3, got {:?}",
            t.dims
        )));
    }
    let (h, w) = (t.dims[0] as usize, t.dims[1] as usize);
    let data = t.f64_data()?;
    let mut grid = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    for c in data.chunks_exact(3) {
        let v = Vec3::new(c[0], c[1], c[2]);
        if v.is_finite() {
            grid.push(v);
            valid.push(true);
        } else {
            grid.push(Vec3::ZERO);
            valid.push(false);
        }
    }
    Ok((h, w, grid, valid))
}

pub fn save_point_map(path: &Path, pm: &PointMap) -> Result<()> {
    save_vec3_grid(path, pm.height(), pm.width(), pm.points(), pm.valid())
}

pub fn load_point_map(path: &Path) -> Result<PointMap> {
    let (h, w, grid, valid) = load_vec3_grid(path)?;
    PointMap::new(h, w, grid, valid)
}

pub fn save_normal_map(path: &Path, nm: &NormalMap) -> Result<()> {
    save_vec3_grid(path, nm.height(), nm.width(), nm.normals(), nm.valid())
}

pub fn load_normal_map(path: &Path) -> Result<NormalMap> {
    let (h, w, grid, valid) = load_vec3_grid(path)?;
    NormalMap::new(h, w, grid, valid)
}

pub fn save_cameras(path: &Path, cams: &[CameraParams]) -> Result<()> {
    let mut vals = Vec::with_capacity(cams.len() * 9);
    for c in cams {
        vals.extend_from_slice(&c.to_vector9());
    }
    let t = Tensor::new(vec![cams.len() as u64, 9], TensorData::F64(vals))?;
    write_tensor(path, &t)
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraParams>> {
    let t = read_tensor(path)?;
    if t.dims.len() != 2 || t.dims[1] != 9 {
        return Err(Error::TensorFormat(format!(
            "camera file must be Nx9, got {:?}",
            t.dims
        )));
    }
    let data = t.f64_data()?;
    data.chunks_exact(9)
        .map(|c| CameraParams::from_vector9(c.try_into().expect("9 values")))
        .collect()
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let t = Tensor::new(
        vec![m.rows() as u64, m.cols() as u64],
        TensorData::F64(m.data().to_vec()),
    )?;
    write_tensor(path, &t)
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let t = read_tensor(path)?;
    if t.dims.len() != 2 {
        return Err(Error::TensorFormat(format!(
            "matrix must be rank 2, got rank {}",
            t.dims.len()
        )));
    }
    Matrix::from_vec(
        t.dims[0] as usize,
        t.dims[1] as usize,
        t.f64_data()?.to_vec(),
    )
}

// ---------------------------------------------------------------------------
// PLY / PGM export
// ---------------------------------------------------------------------------

/// Binary little-endian PLY with optional per-vertex normals.
pub fn write_ply(path: &Path, points: &[Vec3], normals: Option<&[Vec3]>) -> Result<()> {
    if let Some(ns) = normals {
        if ns.len() != points.len() {
            return Err(Error::DimensionMismatch {
                context: "ply normals",
                expected: points.len(),
                actual: ns.len(),
            });
        }
    }
    let mut f = fs::File::create(path)?;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", points.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str("end_header\n");
    f.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(points.len() * 24);
    for (i, p) in points.iter().enumerate() {
        for v in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(ns) = normals {
            for v in [ns[i].x, ns[i].y, ns[i].z] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    f.write_all(&buf)?;
    Ok(())
}

/// 8-bit binary PGM; mask-true pixels are white.
pub fn write_pgm_mask(path: &Path, mask: &ConfidenceMask) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    let bytes: Vec<u8> = mask.mask().iter().map(|&b| if b { 255 } else { 0 }).collect();
    f.write_all(&bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// MoE layer serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct MoeManifest {
    experts: usize,
    k: usize,
    dim: usize,
    hidden: usize,
    renormalize: bool,
}

/// Writes `manifest.json` plus one tensor file per parameter group into the
/// directory (created if missing).
pub fn save_moe_layer(dir: &Path, layer: &MoeLayer) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = MoeManifest {
        experts: layer.num_experts(),
        k: layer.k,
        dim: layer.dim(),
        hidden: layer.hidden(),
        renormalize: layer.renormalize,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidParameter(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), json)?;
    save_matrix(&dir.join("router_w.mrtf"), &layer.router.w)?;
    for (i, e) in layer.experts.iter().enumerate() {
        save_matrix(&dir.join(format!("expert_{i}_w1.mrtf")), &e.w1)?;
        save_matrix(&dir.join(format!("expert_{i}_w2.mrtf")), &e.w2)?;
        let b1 = Tensor::new(vec![e.b1.len() as u64], TensorData::F64(e.b1.clone()))?;
        write_tensor(&dir.join(format!("expert_{i}_b1.mrtf")), &b1)?;
        let b2 = Tensor::new(vec![e.b2.len() as u64], TensorData::F64(e.b2.clone()))?;
        write_tensor(&dir.join(format!("expert_{i}_b2.mrtf")), &b2)?;
    }
    Ok(())
}

pub fn load_moe_layer(dir: &Path) -> Result<MoeLayer> {
    let manifest: MoeManifest = serde_json::from_str(
        &fs::read_to_string(dir.join("manifest.json"))?,
    )
    .map_err(|e| Error::InvalidParameter(format!("bad manifest: {e}")))?;
    let router = Router {
        w: load_matrix(&dir.join("router_w.mrtf"))?,
    };
    let mut experts = Vec::with_capacity(manifest.experts);
    for i in 0..manifest.experts {
        let w1 = load_matrix(&dir.join(format!("expert_{i}_w1.mrtf")))?;
        let w2 = load_matrix(&dir.join(format!("expert_{i}_w2.mrtf")))?;
        let b1 = read_tensor(&dir.join(format!("expert_{i}_b1.mrtf")))?
            .f64_data()?
            .to_vec();
        let b2 = read_tensor(&dir.join(format!("expert_{i}_b2.mrtf")))?
            .f64_data()?
            .to_vec();
        experts.push(ExpertFfn {
            dim: manifest.dim,
            hidden: manifest.hidden,
            w1,
            b1,
            w2,
            b2,
        });
    }
    let mut layer = MoeLayer::new(router, experts, manifest.k)?;
    layer.renormalize = manifest.renormalize;
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_bit_exact() {
        let t = Tensor::new(
            vec![2, 3],
            TensorData::F64(vec![1.0, -2.5, 1e-300, f64::MAX, 0.0, 3.25]),
        )
        .unwrap();
        let bytes = tensor_to_bytes(&t);
        let back = tensor_from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn corrupted_byte_is_detected() {
        let t = Tensor::new(vec![4], TensorData::F32(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let mut bytes = tensor_to_bytes(&t);
        for flip in [0usize, 6, bytes.len() / 2, bytes.len() - 5] {
            let mut corrupted = bytes.clone();
            corrupted[flip] ^= 0x01;
            assert!(
                tensor_from_bytes(&corrupted).is_err(),
                "flip at {flip} must be detected"
            );
        }
        // Corrupting the CRC itself must also fail.
        let n = bytes.len();
        bytes[n - 1] ^= 0xff;
        assert!(tensor_from_bytes(&bytes).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], TensorData::U8(vec![0; 3])).is_err());
    }

    #[test]
    fn depth_map_nan_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.mrtf");
        let dm = DepthMap::new(
            2,
            3,
            vec![1.0, 2.0, 0.0, 4.0, 5.0, 6.0],
            vec![true, true, false, true, true, true],
        )
        .unwrap();
        save_depth_map(&path, &dm).unwrap();
        let back = load_depth_map(&path).unwrap();
        assert_eq!(back.valid(), dm.valid());
        for (a, b) in back.values().iter().zip(dm.values().iter()) {
            if *b > 0.0 {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn moe_layer_round_trip() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let layer = MoeLayer::seeded(4, 6, 3, 2, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_moe_layer(dir.path(), &layer).unwrap();
        let back = load_moe_layer(dir.path()).unwrap();
        assert_eq!(back.k, layer.k);
        assert_eq!(back.router.w.data(), layer.router.w.data());
        for (a, b) in back.experts.iter().zip(layer.experts.iter()) {
            assert_eq!(a.w1.data(), b.w1.data());
            assert_eq!(a.b2, b.b2);
        }
    }
}
