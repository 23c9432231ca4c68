use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{default_cow_label_map, nifti, Dims, LabelVolume, Orientation, Result, Spacing, VolumeError};

/// On-disk volume formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeFormat {
    Nifti,
    Rawl,
}

impl VolumeFormat {
    /// Guesses the format from a file name (`.nii`, `.nii.gz` or `.rawl*`).
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_string_lossy().to_ascii_lowercase();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            Some(Self::Nifti)
        } else if name.ends_with(".rawl.json") || name.ends_with(".rawl.bin") || name.ends_with(".rawl") {
            Some(Self::Rawl)
        } else {
            None
        }
    }
}

/// `<name>.rawl.json` header. The body `<name>.rawl.bin` holds one byte per
/// voxel, x fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawlHeader {
    pub dims: Dims,
    pub spacing: Spacing,
    pub orientation: Orientation,
    pub dtype: String,
    pub label_map: BTreeMap<u8, String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn rawl_base(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    for suffix in [".rawl.json", ".rawl.bin", ".rawl"] {
        if let Some(stripped) = s.strip_suffix(suffix) {
            return PathBuf::from(stripped);
        }
    }
    path.to_path_buf()
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Header and body paths of a rawl volume.
pub fn rawl_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = rawl_base(path);
    (with_suffix(&base, ".rawl.json"), with_suffix(&base, ".rawl.bin"))
}

/// Sidecar label map of a NIfTI file: `<stem>.labels.json`.
pub fn nifti_sidecar(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(".nii.gz")
        .or_else(|| s.strip_suffix(".nii"))
        .unwrap_or(&s);
    PathBuf::from(format!("{stem}.labels.json"))
}

pub fn rawl_from_parts(header_json: &[u8], body: &[u8]) -> Result<LabelVolume> {
    let header: RawlHeader =
        serde_json::from_slice(header_json).map_err(|e| VolumeError::Header(e.to_string()))?;
    if header.dtype != "u8" {
        return Err(VolumeError::Header(format!("unsupported rawl dtype {:?}", header.dtype)));
    }
    let n: usize = header.dims.iter().product();
    if body.len() != n {
        return Err(VolumeError::Header(format!(
            "rawl body has {} bytes, dims {:?} require {n}",
            body.len(),
            header.dims
        )));
    }
    LabelVolume::from_parts(header.dims, header.spacing, body.to_vec(), header.label_map)
}

pub fn rawl_to_parts(v: &LabelVolume) -> (Vec<u8>, Vec<u8>) {
    let header = RawlHeader {
        dims: v.dims(),
        spacing: v.spacing(),
        orientation: v.orientation(),
        dtype: "u8".into(),
        label_map: v.label_map().clone(),
    };
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    (json, v.labels().to_vec())
}

/// Decodes NIfTI-1 bytes (plain or gzip). Labels not present in `label_map`
/// (default: the CoW map) are rejected.
pub fn nifti_from_bytes(bytes: &[u8], label_map: Option<BTreeMap<u8, String>>) -> Result<LabelVolume> {
    let raw = nifti::decode(bytes)?;
    let map = label_map.unwrap_or_else(default_cow_label_map);
    let unknown: Vec<i64> = raw
        .distinct_values()
        .into_iter()
        .filter(|&l| l != 0 && !(1..=255).contains(&l) || (1..=255).contains(&l) && !map.contains_key(&(l as u8)))
        .collect();
    if !unknown.is_empty() {
        return Err(VolumeError::UnknownLabel(unknown));
    }
    let (dims, spacing, labels) = raw.into_ras();
    LabelVolume::from_parts(dims, spacing, labels, map)
}

pub fn nifti_to_bytes(v: &LabelVolume, gzip: bool) -> Vec<u8> {
    nifti::encode(v.dims(), v.spacing(), v.labels(), gzip)
}

pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<LabelVolume> {
    match format {
        VolumeFormat::Rawl => {
            let (h, b) = rawl_paths(path);
            let header = fs::read(&h).map_err(io_err(&h))?;
            let body = fs::read(&b).map_err(io_err(&b))?;
            rawl_from_parts(&header, &body)
        }
        VolumeFormat::Nifti => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            let sidecar = nifti_sidecar(path);
            let map = if sidecar.exists() {
                let s = fs::read(&sidecar).map_err(io_err(&sidecar))?;
                Some(
                    serde_json::from_slice::<BTreeMap<u8, String>>(&s)
                        .map_err(|e| VolumeError::Header(format!("label sidecar: {e}")))?,
                )
            } else {
                None
            };
            nifti_from_bytes(&bytes, map)
        }
    }
}

pub fn save_volume(v: &LabelVolume, path: &Path, format: VolumeFormat) -> Result<()> {
    match format {
        VolumeFormat::Rawl => {
            let (h, b) = rawl_paths(path);
            let (header, body) = rawl_to_parts(v);
            fs::write(&h, header).map_err(io_err(&h))?;
            fs::write(&b, body).map_err(io_err(&b))?;
        }
        VolumeFormat::Nifti => {
            let gzip = path.to_string_lossy().to_ascii_lowercase().ends_with(".gz");
            fs::write(path, nifti_to_bytes(v, gzip)).map_err(io_err(path))?;
            let sidecar = nifti_sidecar(path);
            let map = serde_json::to_vec_pretty(v.label_map()).expect("map serializes");
            fs::write(&sidecar, map).map_err(io_err(&sidecar))?;
        }
    }
    Ok(())
}
