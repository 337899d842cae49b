//! `TUVOL1` volume files: one text header line, then a little-endian payload.
//!
//! ```text
//! TUVOL1 <D> <H> <W> <sx> <sy> <sz> <f32|u8> <K>\n<payload>
//! ```

use std::fs;
use std::path::Path;

use transunet_core::{ElementType, IntensityVolume, LabelVolume, Scalar, Spacing, Volume};

use crate::error::{Error, Result};
use crate::text::{parse_num, tokens};

pub const MAGIC: &str = "TUVOL1";
const MAX_HEADER: usize = 1024;

/// A volume of either element type, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Intensity(IntensityVolume),
    Labels(LabelVolume),
}

fn header<V>(v: &Volume<V>, tag: ElementType) -> String {
    let [d, h, w] = v.extents;
    let s = v.spacing;
    format!("{MAGIC} {d} {h} {w} {:?} {:?} {:?} {} {}\n", s.x, s.y, s.z, tag.tag(), v.classes)
}

pub fn encode_intensity(v: &IntensityVolume) -> Vec<u8> {
    let mut out = header(v, ElementType::F32).into_bytes();
    for &x in &v.voxels {
        x.write_le(&mut out);
    }
    out
}

pub fn encode_labels(v: &LabelVolume) -> Vec<u8> {
    let mut out = header(v, ElementType::U8).into_bytes();
    out.extend_from_slice(&v.voxels);
    out
}

/// Parses a whole file image; `path` only labels diagnostics.
pub fn decode(path: &Path, bytes: &[u8]) -> Result<AnyVolume> {
    let end = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, bytes.len().min(MAX_HEADER), "header line not terminated"))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|e| Error::parse(path, e.valid_up_to(), "header is not UTF-8"))?;
    let toks = tokens(line, 0);
    match toks.first() {
        Some(&(_, MAGIC)) => {}
        Some(&(o, t)) => return Err(Error::parse(path, o, format!("expected magic {MAGIC}, found '{t}'"))),
        None => return Err(Error::parse(path, 0, "empty header")),
    }
    if toks.len() != 9 {
        let offset = toks.get(9).map_or(end, |t| t.0);
        return Err(Error::parse(path, offset, format!("header has {} fields, expected 9", toks.len())));
    }
    let extents = [
        parse_num::<usize>(path, toks[1], "depth")?,
        parse_num::<usize>(path, toks[2], "height")?,
        parse_num::<usize>(path, toks[3], "width")?,
    ];
    let spacing = Spacing {
        x: parse_num(path, toks[4], "spacing x")?,
        y: parse_num(path, toks[5], "spacing y")?,
        z: parse_num(path, toks[6], "spacing z")?,
    };
    spacing.validate()?;
    let (tag_offset, tag) = toks[7];
    let element = ElementType::from_tag(tag)
        .filter(|e| *e != ElementType::F64)
        .ok_or_else(|| Error::parse(path, tag_offset, format!("unsupported element type '{tag}'")))?;
    let classes: usize = parse_num(path, toks[8], "class count")?;

    let payload = &bytes[end + 1..];
    let n = extents
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| Error::integrity(path, "extents overflow"))?;
    let expected = n * element.size_in_bytes();
    if payload.len() != expected {
        return Err(Error::integrity(
            path,
            format!("payload has {} bytes, extents {:?} need {expected}", payload.len(), extents),
        ));
    }
    Ok(match element {
        ElementType::U8 => {
            let v = Volume { extents, spacing, classes, voxels: payload.to_vec() };
            v.validate().map_err(|e| Error::integrity(path, e.to_string()))?;
            AnyVolume::Labels(v)
        }
        _ => {
            let voxels = payload.chunks_exact(4).map(f32::read_le).collect();
            AnyVolume::Intensity(Volume { extents, spacing, classes, voxels })
        }
    })
}

pub fn read(path: &Path) -> Result<AnyVolume> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(path, &bytes)
}

pub fn read_intensity(path: &Path) -> Result<IntensityVolume> {
    match read(path)? {
        AnyVolume::Intensity(v) => Ok(v),
        AnyVolume::Labels(_) => Err(Error::integrity(path, "expected an f32 intensity volume, found labels")),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    match read(path)? {
        AnyVolume::Labels(v) => Ok(v),
        AnyVolume::Intensity(_) => Err(Error::integrity(path, "expected a u8 label volume, found intensities")),
    }
}

pub fn write_intensity(path: &Path, v: &IntensityVolume) -> Result<()> {
    fs::write(path, encode_intensity(v)).map_err(Error::io(path))
}

pub fn write_labels(path: &Path, v: &LabelVolume) -> Result<()> {
    fs::write(path, encode_labels(v)).map_err(Error::io(path))
}
