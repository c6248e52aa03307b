//! File formats: MetaImage volumes, rigid transform text files, landmark CSV
//! and line-delimited JSON records.
//!
//! MetaImage files are written with the pixel data embedded after the header
//! (`ElementDataFile = LOCAL`). Readers also accept a separate data file
//! named relative to the header. `TransformMatrix` stores the direction
//! cosines column by column, as ITK does.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::LandmarkSet;
use crate::transform::{ParamVector, RigidTransform};
use crate::volume::{BinaryMask, GridMeta, LabelMap, Mat3, Vec3, Volume};

/// Version tag of every JSON record this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElementType {
    Char,
    UChar,
    Short,
    UShort,
    Int,
    UInt,
    Float,
    Double,
}

impl ElementType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "MET_CHAR" => Self::Char,
            "MET_UCHAR" => Self::UChar,
            "MET_SHORT" => Self::Short,
            "MET_USHORT" => Self::UShort,
            "MET_INT" => Self::Int,
            "MET_UINT" => Self::UInt,
            "MET_FLOAT" => Self::Float,
            "MET_DOUBLE" => Self::Double,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::Char => "MET_CHAR",
            Self::UChar => "MET_UCHAR",
            Self::Short => "MET_SHORT",
            Self::UShort => "MET_USHORT",
            Self::Int => "MET_INT",
            Self::UInt => "MET_UINT",
            Self::Float => "MET_FLOAT",
            Self::Double => "MET_DOUBLE",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::Char | Self::UChar => 1,
            Self::Short | Self::UShort => 2,
            Self::Int | Self::UInt | Self::Float => 4,
            Self::Double => 8,
        }
    }

    fn decode(self, b: &[u8], msb: bool) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let arr = b.try_into().expect("element width");
                (if msb { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
            }};
        }
        match self {
            Self::Char => b[0] as i8 as f64,
            Self::UChar => b[0] as f64,
            Self::Short => num!(i16),
            Self::UShort => num!(u16),
            Self::Int => num!(i32),
            Self::UInt => num!(u32),
            Self::Float => num!(f32),
            Self::Double => num!(f64),
        }
    }
}

/// Grid and voxel values of a MetaImage file, before interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub meta: GridMeta,
    pub values: Vec<f64>,
}

impl RawImage {
    pub fn into_volume(self, path: &Path) -> Result<Volume> {
        Volume::new(self.meta, self.values).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Requires integer values in `0..=255`.
    pub fn into_label_map(self, path: &Path) -> Result<LabelMap> {
        let mut labels = Vec::with_capacity(self.values.len());
        for (n, v) in self.values.iter().enumerate() {
            if v.fract() != 0.0 || !(0.0..=255.0).contains(v) {
                return Err(Error::format(path, format!("voxel {n} holds {v}, not a label in 0..=255")));
            }
            labels.push(*v as u8);
        }
        LabelMap::new(self.meta, labels).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Nonzero voxels are set.
    pub fn into_mask(self) -> BinaryMask {
        let bits = self.values.iter().map(|&v| v != 0.0).collect();
        BinaryMask::new(self.meta, bits).expect("length matches grid")
    }
}

fn header_numbers<const N: usize>(path: &Path, key: &str, value: &str) -> Result<[f64; N]> {
    let nums: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, format!("{key}: cannot parse '{value}'")))?;
    nums.try_into().map_err(|_| Error::format(path, format!("{key}: expected {N} numbers, got '{value}'")))
}

/// Reads a 3D single-channel MetaImage (`.mha` or `.mhd`).
pub fn read_metaimage(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut dims = None;
    let mut spacing = [1.0; 3];
    let mut origin = [0.0; 3];
    let mut direction = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let mut element = None;
    let mut msb = false;
    let mut data_file = None;
    while data_file.is_none() {
        let Some(len) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(Error::format(path, "header ends without ElementDataFile"));
        };
        let line =
            std::str::from_utf8(&bytes[pos..pos + len]).map_err(|_| Error::format(path, "header is not UTF-8"))?.trim();
        pos += len + 1;
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::format(path, format!("malformed header line '{line}'")));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "NDims" if value != "3" => {
                return Err(Error::format(path, format!("NDims: only 3 is supported, got {value}")))
            }
            "DimSize" => {
                let d = header_numbers::<3>(path, key, value)?;
                if d.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                    return Err(Error::format(path, format!("DimSize: invalid '{value}'")));
                }
                dims = Some(d.map(|v| v as usize));
            }
            "ElementSpacing" | "ElementSize" => spacing = header_numbers::<3>(path, key, value)?,
            "Offset" | "Position" | "Origin" => origin = header_numbers::<3>(path, key, value)?,
            "TransformMatrix" | "Orientation" | "Rotation" => direction = header_numbers::<9>(path, key, value)?,
            "ElementType" => {
                element = Some(
                    ElementType::parse(value)
                        .ok_or_else(|| Error::format(path, format!("ElementType: unsupported '{value}'")))?,
                )
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => msb = value.eq_ignore_ascii_case("true"),
            "CompressedData" if value.eq_ignore_ascii_case("true") => {
                return Err(Error::format(path, "CompressedData: compressed pixel data is not supported"))
            }
            "ElementNumberOfChannels" if value != "1" => {
                return Err(Error::format(path, format!("ElementNumberOfChannels: only 1 is supported, got {value}")))
            }
            "ElementDataFile" => data_file = Some(value.to_string()),
            _ => {}
        }
    }
    let dims = dims.ok_or_else(|| Error::format(path, "DimSize: missing"))?;
    let element = element.ok_or_else(|| Error::format(path, "ElementType: missing"))?;
    let orientation = Mat3::from_fn(|r, c| direction[c * 3 + r]);
    let meta = GridMeta::new(dims, Vec3::from(spacing), Vec3::from(origin), orientation)
        .map_err(|e| Error::format(path, e.to_string()))?;

    let data_file = data_file.expect("loop exits with a data file");
    let external;
    let (data, data_path): (&[u8], PathBuf) = if data_file == "LOCAL" {
        (&bytes[pos..], path.to_path_buf())
    } else {
        let p = path.parent().unwrap_or(Path::new(".")).join(&data_file);
        external = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        (&external, p)
    };
    let need = meta.len() * element.size();
    if data.len() < need {
        return Err(Error::format(
            data_path,
            format!("pixel data has {} bytes, {} needed for {:?} {}", data.len(), need, dims, element.name()),
        ));
    }
    let values = data[..need].chunks_exact(element.size()).map(|b| element.decode(b, msb)).collect();
    Ok(RawImage { meta, values })
}

fn write_metaimage(path: &Path, meta: &GridMeta, element: ElementType, data: &[u8]) -> Result<()> {
    let o = meta.orientation();
    let mut header = String::new();
    let j = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
    header.push_str(
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\nCompressedData = False\n",
    );
    let tm: Vec<f64> = (0..9).map(|n| o[(n % 3, n / 3)]).collect();
    header.push_str(&format!("TransformMatrix = {}\n", j(&tm)));
    header.push_str(&format!("Offset = {}\n", j(meta.origin().as_slice())));
    header.push_str("CenterOfRotation = 0 0 0\n");
    header.push_str(&format!("ElementSpacing = {}\n", j(meta.spacing().as_slice())));
    let [nx, ny, nz] = meta.dims();
    header.push_str(&format!("DimSize = {nx} {ny} {nz}\n"));
    header.push_str(&format!("ElementType = {}\nElementDataFile = LOCAL\n", element.name()));
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(header.as_bytes())
        .and_then(|_| w.write_all(data))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes values losslessly as `MET_DOUBLE`.
pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let data: Vec<u8> = vol.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_metaimage(path, vol.meta(), ElementType::Double, &data)
}

pub fn write_label_map(path: &Path, map: &LabelMap) -> Result<()> {
    write_metaimage(path, map.meta(), ElementType::UChar, map.labels())
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data: Vec<u8> = mask.bits().iter().map(|&b| b as u8).collect();
    write_metaimage(path, mask.meta(), ElementType::UChar, &data)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    read_metaimage(path)?.into_volume(path)
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    read_metaimage(path)?.into_label_map(path)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    Ok(read_metaimage(path)?.into_mask())
}

const TRANSFORM_TAG: &str = "rigid-transform-v1";

/// Text form: a header line naming the convention and rotation center, the
/// six parameters, and the equivalent 4×4 world matrix (informational).
pub fn format_transform(t: &RigidTransform) -> String {
    let f = |v: f64| format!("{v:.16e}");
    let c = t.center;
    let mut s = format!("{TRANSFORM_TAG} euler=extrinsic-xyz center={} {} {}\n", f(c[0]), f(c[1]), f(c[2]));
    s.push_str("params");
    for v in t.params.iter() {
        s.push(' ');
        s.push_str(&f(*v));
    }
    s.push_str("\nmatrix\n");
    let m = t.to_matrix();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| f(m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_transform(path: &Path, text: &str) -> Result<RigidTransform> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::format(path, "empty transform file"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(TRANSFORM_TAG) {
        return Err(Error::format(path, format!("expected '{TRANSFORM_TAG}' header, got '{header}'")));
    }
    let mut center = None;
    let rest: Vec<&str> = fields.collect();
    let mut n = 0;
    while n < rest.len() {
        if let Some(v) = rest[n].strip_prefix("euler=") {
            if v != "extrinsic-xyz" {
                return Err(Error::format(path, format!("euler: unsupported convention '{v}'")));
            }
        } else if let Some(first) = rest[n].strip_prefix("center=") {
            let vals =
                [first, rest.get(n + 1).copied().unwrap_or(""), rest.get(n + 2).copied().unwrap_or("")].join(" ");
            center = Some(header_numbers::<3>(path, "center", &vals)?);
            n += 2;
        }
        n += 1;
    }
    let center = center.ok_or_else(|| Error::format(path, "center: missing from header"))?;
    let params_line = lines.next().ok_or_else(|| Error::format(path, "params: missing"))?;
    let values = params_line
        .strip_prefix("params")
        .ok_or_else(|| Error::format(path, format!("expected 'params' line, got '{params_line}'")))?;
    let p = header_numbers::<6>(path, "params", values)?;
    let t = RigidTransform::new(ParamVector(p), Vec3::from(center));
    if !t.is_finite() {
        return Err(Error::format(path, "params: non-finite value"));
    }
    Ok(t)
}

pub fn write_transform(path: &Path, t: &RigidTransform) -> Result<()> {
    fs::write(path, format_transform(t)).map_err(|e| Error::io(path, e))
}

pub fn read_transform(path: &Path) -> Result<RigidTransform> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_transform(path, &text)
}

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkRow {
    id: String,
    x: f64,
    y: f64,
    z: f64,
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkSet> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["id", "x", "y", "z"] {
        return Err(Error::format(
            path,
            format!("expected header id,x,y,z, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut entries = Vec::new();
    for row in reader.deserialize::<LandmarkRow>() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        entries.push((row.id, Vec3::new(row.x, row.y, row.z)));
    }
    LandmarkSet::new(entries).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_landmarks(path: &Path, set: &LandmarkSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for (id, p) in set.iter() {
        w.serialize(LandmarkRow { id: id.to_string(), x: p.x, y: p.y, z: p.z })
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&r).map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
