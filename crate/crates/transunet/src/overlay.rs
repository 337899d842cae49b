//! Binary PPM (`P6`) slices of argmax labels tinted over intensity.

use std::fs;
use std::path::Path;

use transunet_core::{Error as CoreError, IntensityVolume, LabelVolume};

use crate::error::{Error, Result};

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];
const ALPHA: f32 = 0.45;

pub fn class_color(class_id: u8) -> [u8; 3] {
    PALETTE[(class_id as usize - 1) % PALETTE.len()]
}

/// Renders slice `z`; intensities are windowed to the volume's own range.
pub fn render_slice(image: &IntensityVolume, labels: &LabelVolume, z: usize) -> Result<Vec<u8>> {
    image.same_grid(labels)?;
    if z >= image.depth() {
        return Err(Error::Core(CoreError::Contract(format!("slice {z} outside depth {}", image.depth()))));
    }
    let (lo, hi) = image
        .voxels
        .iter()
        .filter(|v| v.is_finite())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    for (&v, &l) in image.slice(z).iter().zip(labels.slice(z)) {
        let g = if v.is_finite() { ((v - lo) / range).clamp(0.0, 1.0) * 255.0 } else { 0.0 };
        let px = if l == 0 {
            [g; 3]
        } else {
            class_color(l).map(|c| (1.0 - ALPHA) * g + ALPHA * c as f32)
        };
        out.extend(px.map(|c| c.round() as u8));
    }
    Ok(out)
}

/// Writes `slice_000.ppm`, `slice_001.ppm`, ... into `dir`.
pub fn write_overlays(dir: &Path, image: &IntensityVolume, labels: &LabelVolume) -> Result<usize> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for z in 0..image.depth() {
        let path = dir.join(format!("slice_{z:03}.ppm"));
        fs::write(&path, render_slice(image, labels, z)?).map_err(Error::io(&path))?;
    }
    Ok(image.depth())
}
