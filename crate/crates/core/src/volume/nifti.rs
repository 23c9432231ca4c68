//! Minimal NIfTI-1 codec for integer label volumes.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Dims, Grid, Result, Spacing, VolumeError};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

/// Decoded voxel data in file order with its voxel-to-world affine.
pub(super) struct RawNifti {
    dims: Dims,
    /// Columns of the 3x3 linear part: world direction of each voxel axis.
    axes: [[f64; 3]; 3],
    data: Vec<i64>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    le: bool,
}

impl Cursor<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.le { i16::from_le_bytes(b) } else { i16::from_be_bytes(b) }
    }

    fn f32(&self, at: usize) -> f64 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        (if self.le { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
    }
}

fn gunzip_if_needed(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| VolumeError::Header(format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<RawNifti> {
    let bytes = gunzip_if_needed(bytes)?;
    if bytes.len() < HEADER_SIZE {
        return Err(VolumeError::Header(format!("file too short ({} bytes)", bytes.len())));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32;
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32;
    if !le && !be {
        return Err(VolumeError::Header("sizeof_hdr is not 348".into()));
    }
    let c = Cursor { bytes: &bytes, le };
    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(VolumeError::Header("bad NIfTI-1 magic".into()));
    }

    let ndim = c.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(VolumeError::Header(format!("dim[0] = {ndim} out of range")));
    }
    let mut dims = [1usize; 3];
    for (a, d) in dims.iter_mut().enumerate().take(ndim.min(3) as usize) {
        let v = c.i16(42 + 2 * a);
        if v <= 0 {
            return Err(VolumeError::Header(format!("dim[{}] = {v}", a + 1)));
        }
        *d = v as usize;
    }
    for a in 3..ndim as usize {
        if c.i16(42 + 2 * a) > 1 {
            return Err(VolumeError::Header("only single-frame 3D volumes are supported".into()));
        }
    }

    let datatype = c.i16(70);
    let width = match datatype {
        2 | 256 => 1,
        4 | 512 => 2,
        8 | 768 => 4,
        1024 | 1280 => 8,
        other => return Err(VolumeError::Datatype(other)),
    };
    let slope = c.f32(112);
    let inter = c.f32(116);
    if !(slope == 0.0 || slope == 1.0) || inter != 0.0 {
        return Err(VolumeError::Header("intensity scaling is not allowed on label data".into()));
    }

    let vox_offset = c.f32(108).max(HEADER_SIZE as f64) as usize;
    let n: usize = dims.iter().product();
    let end = vox_offset + n * width;
    if bytes.len() < end {
        return Err(VolumeError::Header(format!(
            "voxel data truncated: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    let body = &bytes[vox_offset..end];
    let data: Vec<i64> = (0..n)
        .map(|i| {
            let b = &body[i * width..(i + 1) * width];
            let mut buf = [0u8; 8];
            buf[..width].copy_from_slice(b);
            if !le {
                buf[..width].reverse();
            }
            match datatype {
                2 => b[0] as i64,
                256 => b[0] as i8 as i64,
                4 => i16::from_le_bytes([buf[0], buf[1]]) as i64,
                512 => u16::from_le_bytes([buf[0], buf[1]]) as i64,
                8 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as i64,
                768 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as i64,
                1024 => i64::from_le_bytes(buf),
                _ => u64::from_le_bytes(buf).min(i64::MAX as u64) as i64,
            }
        })
        .collect();

    let pixdim = [c.f32(80), c.f32(84), c.f32(88)];
    let qform_code = c.i16(252);
    let sform_code = c.i16(254);
    let axes = if sform_code > 0 {
        let rows = [
            [c.f32(280), c.f32(284), c.f32(288)],
            [c.f32(296), c.f32(300), c.f32(304)],
            [c.f32(312), c.f32(316), c.f32(320)],
        ];
        [0, 1, 2].map(|j| [rows[0][j], rows[1][j], rows[2][j]])
    } else if qform_code > 0 {
        let (b, cc, d) = (c.f32(256), c.f32(260), c.f32(264));
        let a = (1.0 - b * b - cc * cc - d * d).max(0.0).sqrt();
        let r = [
            [a * a + b * b - cc * cc - d * d, 2.0 * (b * cc - a * d), 2.0 * (b * d + a * cc)],
            [2.0 * (b * cc + a * d), a * a + cc * cc - b * b - d * d, 2.0 * (cc * d - a * b)],
            [2.0 * (b * d - a * cc), 2.0 * (cc * d + a * b), a * a + d * d - cc * cc - b * b],
        ];
        let qfac = if c.f32(76) < 0.0 { -1.0 } else { 1.0 };
        let scale = [pixdim[0].abs(), pixdim[1].abs(), pixdim[2].abs() * qfac];
        [0, 1, 2].map(|j| [r[0][j] * scale[j], r[1][j] * scale[j], r[2][j] * scale[j]])
    } else {
        [
            [pixdim[0].abs(), 0.0, 0.0],
            [0.0, pixdim[1].abs(), 0.0],
            [0.0, 0.0, pixdim[2].abs()],
        ]
    };
    for (j, col) in axes.iter().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(VolumeError::Header(format!("degenerate affine column {j}")));
        }
    }
    Ok(RawNifti { dims, axes, data })
}

impl RawNifti {
    pub(super) fn distinct_values(&self) -> Vec<i64> {
        let mut v = self.data.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Permutes and flips voxel axes so indices increase toward R, A, S.
    pub(super) fn into_ras(self) -> (Dims, Spacing, Vec<u8>) {
        let norms = self.axes.map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt());
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        // perm[world_axis] = voxel axis pointing along it
        let perm = PERMS
            .iter()
            .copied()
            .max_by(|p, q| {
                let score = |p: &[usize; 3]| (0..3).map(|w| (self.axes[p[w]][w] / norms[p[w]]).abs()).sum::<f64>();
                score(p).total_cmp(&score(q))
            })
            .unwrap();
        let flip: [bool; 3] = [0, 1, 2].map(|w| self.axes[perm[w]][w] < 0.0);
        let dims = [0, 1, 2].map(|w| self.dims[perm[w]]);
        let spacing = [0, 1, 2].map(|w| norms[perm[w]]);
        let src = Grid::new(self.dims);
        let dst = Grid::new(dims);
        let mut labels = vec![0u8; dst.len()];
        for (i, l) in labels.iter_mut().enumerate() {
            let o = dst.coords(i);
            let mut s = [0usize; 3];
            for w in 0..3 {
                s[perm[w]] = if flip[w] { dims[w] - 1 - o[w] } else { o[w] };
            }
            *l = self.data[src.index(s[0], s[1], s[2])] as u8;
        }
        (dims, spacing, labels)
    }
}

pub(super) fn encode(dims: Dims, spacing: Spacing, labels: &[u8], gzip: bool) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, at: usize, v: i16| h[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_i32 = |h: &mut Vec<u8>, at: usize, v: i32| h[at..at + 4].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, at: usize, v: f64| h[at..at + 4].copy_from_slice(&(v as f32).to_le_bytes());

    put_i32(&mut h, 0, HEADER_SIZE as i32);
    h[38] = b'r';
    let dim = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (k, d) in dim.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * k, *d);
    }
    put_i16(&mut h, 70, 2);
    put_i16(&mut h, 72, 8);
    let pixdim = [1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0];
    for (k, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * k, *p);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f64);
    h[123] = 2; // millimeters
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    for (row, s) in spacing.iter().enumerate() {
        put_f32(&mut h, 280 + 16 * row + 4 * row, *s);
    }
    h[344..348].copy_from_slice(b"n+1\0");

    let mut out = h;
    out.extend_from_slice(labels);
    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&out).expect("in-memory gzip");
        enc.finish().expect("in-memory gzip")
    } else {
        out
    }
}
