//! MetaImage volumes: a `.mhd` text header next to a `.raw` little-endian
//! voxel file.
//!
//! The element type follows the volume kind: HU as `MET_SHORT`, probability
//! as `MET_FLOAT`, mask as `MET_UCHAR`. Reading maps the element type back to
//! the kind.

use std::fs;
use std::path::{Path, PathBuf};

use esoseg_core::{Volume3D, VolumeKind};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Short,
    Float,
    UChar,
}

impl ElementType {
    fn name(self) -> &'static str {
        match self {
            ElementType::Short => "MET_SHORT",
            ElementType::Float => "MET_FLOAT",
            ElementType::UChar => "MET_UCHAR",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "MET_SHORT" => Some(ElementType::Short),
            "MET_FLOAT" => Some(ElementType::Float),
            "MET_UCHAR" => Some(ElementType::UChar),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            ElementType::Short => 2,
            ElementType::Float => 4,
            ElementType::UChar => 1,
        }
    }

    pub fn for_kind(kind: VolumeKind) -> Self {
        match kind {
            VolumeKind::Hu => ElementType::Short,
            VolumeKind::Probability => ElementType::Float,
            VolumeKind::Mask => ElementType::UChar,
        }
    }

    fn kind(self) -> VolumeKind {
        match self {
            ElementType::Short => VolumeKind::Hu,
            ElementType::Float => VolumeKind::Probability,
            ElementType::UChar => VolumeKind::Mask,
        }
    }
}

/// Writes `path` (the `.mhd` header) and the `.raw` file beside it.
///
/// HU values must be integers within the `i16` range; probabilities are
/// stored as `f32`.
pub fn write_volume(path: &Path, vol: &Volume3D) -> Result<(), CliError> {
    let ty = ElementType::for_kind(vol.kind());
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::format(path, "header path has no usable file name"))?;
    let mut bytes = Vec::with_capacity(vol.len() * ty.size());
    match ty {
        ElementType::Short => {
            for (i, &v) in vol.data().iter().enumerate() {
                if v.fract() != 0.0 || v < i16::MIN as f64 || v > i16::MAX as f64 {
                    return Err(CliError::format(path, format!("HU value {v} at voxel {i} is not a 16-bit integer")));
                }
                bytes.extend_from_slice(&(v as i16).to_le_bytes());
            }
        }
        ElementType::Float => {
            for &v in vol.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        ElementType::UChar => bytes.extend(vol.data().iter().map(|&v| v as u8)),
    }
    let [nx, ny, nz] = vol.dims();
    let [sx, sy, sz] = vol.spacing();
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         DimSize = {nx} {ny} {nz}\n\
         ElementSpacing = {sx} {sy} {sz}\n\
         ElementType = {}\n\
         ElementDataFile = {raw_name}\n",
        ty.name()
    );
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(&raw_path, bytes).map_err(|e| CliError::io(&raw_path, e))?;
    fs::write(path, header).map_err(|e| CliError::io(path, e))
}

struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    ty: ElementType,
    data_file: PathBuf,
}

fn parse_header(path: &Path, text: &str) -> Result<Header, CliError> {
    let bad = |msg: String| CliError::format(path, msg);
    let (mut dims, mut spacing, mut ty, mut data_file) = (None, None, None, None);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
        let numbers = |n: usize| -> Result<Vec<f64>, CliError> {
            let v: Vec<f64> = value
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(format!("{key}: expected numbers, got {value:?}")))?;
            if v.len() != n {
                return Err(bad(format!("{key}: expected {n} values, got {}", v.len())));
            }
            Ok(v)
        };
        match key {
            "NDims" if value != "3" => return Err(bad(format!("only 3D images are supported, NDims = {value}"))),
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" if value.eq_ignore_ascii_case("true") => {
                return Err(bad("big-endian data is not supported".into()))
            }
            "CompressedData" if value.eq_ignore_ascii_case("true") => {
                return Err(bad("compressed data is not supported".into()))
            }
            "ElementNumberOfChannels" if value != "1" => {
                return Err(bad(format!("{value} channels per voxel; only scalar images are supported")))
            }
            "DimSize" => {
                let v = numbers(3)?;
                if v.iter().any(|&d| d < 1.0 || d.fract() != 0.0) {
                    return Err(bad(format!("DimSize {value:?} must be positive integers")));
                }
                dims = Some([v[0] as usize, v[1] as usize, v[2] as usize]);
            }
            "ElementSpacing" | "ElementSize" => {
                let v = numbers(3)?;
                spacing = Some([v[0], v[1], v[2]]);
            }
            "ElementType" => {
                ty = Some(ElementType::parse(value).ok_or_else(|| bad(format!("unsupported element type {value}")))?)
            }
            "ElementDataFile" => {
                if value == "LOCAL" || value.starts_with("LIST") || value.contains('%') {
                    return Err(bad(format!("ElementDataFile {value} is not supported; use a single raw file")));
                }
                data_file = Some(path.parent().unwrap_or(Path::new("")).join(value));
            }
            _ => {}
        }
    }
    Ok(Header {
        dims: dims.ok_or_else(|| bad("missing DimSize".into()))?,
        spacing: spacing.unwrap_or([1.0; 3]),
        ty: ty.ok_or_else(|| bad("missing ElementType".into()))?,
        data_file: data_file.ok_or_else(|| bad("missing ElementDataFile".into()))?,
    })
}

/// Reads a volume; its kind is taken from the element type.
pub fn read_volume(path: &Path) -> Result<Volume3D, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let h = parse_header(path, &text)?;
    let bytes = fs::read(&h.data_file).map_err(|e| CliError::io(&h.data_file, e))?;
    let n = h.dims.iter().product::<usize>();
    if bytes.len() != n * h.ty.size() {
        return Err(CliError::format(
            &h.data_file,
            format!("{} bytes, expected {} for {:?} {}", bytes.len(), n * h.ty.size(), h.dims, h.ty.name()),
        ));
    }
    let data: Vec<f64> = match h.ty {
        ElementType::Short => bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        ElementType::Float => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        ElementType::UChar => bytes.iter().map(|&b| b as f64).collect(),
    };
    Volume3D::new(h.dims, h.spacing, h.ty.kind(), data).map_err(|e| CliError::format(path, e.to_string()))
}

/// Reads a volume and checks that it has the expected kind.
pub fn read_kind(path: &Path, kind: VolumeKind) -> Result<Volume3D, CliError> {
    let vol = read_volume(path)?;
    vol.expect_kind(kind).map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(vol)
}
