//! Synthetic multi-structure phantoms, slice augmentation and dataset splits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{config_err, contract_err, Error, Result};
use crate::volume::{IntensityVolume, LabelVolume, Spacing};

/// Smallest accepted phantom extent along any axis.
pub const MIN_EXTENT: usize = 8;
/// Redraw budget for a randomly placed structure hidden by later ones.
const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ShapeFamily {
    Ellipsoid,
    Box,
}

/// Structure geometry in voxel units, axes ordered `[z, y, x]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Placement {
    /// Radius along each axis is `fraction · extent / 2`, fraction drawn from the range.
    Random { size_range: (f64, f64) },
    Fixed { center: [f64; 3], radii: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StructureSpec {
    pub shape: ShapeFamily,
    pub placement: Placement,
    pub intensity_mean: f32,
    pub intensity_sigma: f32,
}

impl StructureSpec {
    fn contains(&self, center: [f64; 3], radii: [f64; 3], p: [f64; 3]) -> bool {
        match self.shape {
            ShapeFamily::Ellipsoid => {
                let mut s = 0.0;
                for a in 0..3 {
                    let t = (p[a] - center[a]) / radii[a];
                    s += t * t;
                }
                s <= 1.0
            }
            ShapeFamily::Box => (0..3).all(|a| libm::fabs(p[a] - center[a]) <= radii[a]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhantomSpec {
    /// `[D, H, W]`.
    pub extents: [usize; 3],
    pub spacing: Spacing,
    /// Structure `i` receives label `i + 1`; later structures overwrite earlier ones.
    pub structures: Vec<StructureSpec>,
    pub background_mean: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl PhantomSpec {
    /// `classes − 1` structures alternating ellipsoid and box with increasing brightness.
    pub fn standard(extents: [usize; 3], spacing: Spacing, classes: usize, seed: u64) -> Self {
        let structures = (1..classes.max(1))
            .map(|k| StructureSpec {
                shape: if k % 2 == 1 { ShapeFamily::Ellipsoid } else { ShapeFamily::Box },
                placement: Placement::Random { size_range: (0.3, 0.6) },
                intensity_mean: 0.2 + 0.8 * k as f32,
                intensity_sigma: 0.2,
            })
            .collect();
        Self { extents, spacing, structures, background_mean: 0.0, noise_sigma: 0.2, seed }
    }

    pub fn classes(&self) -> usize {
        self.structures.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, &n) in ["depth", "height", "width"].iter().zip(&self.extents) {
            if n < MIN_EXTENT {
                return Err(config_err!("phantom.{axis} must be at least {MIN_EXTENT}, got {n}"));
            }
        }
        self.spacing.validate()?;
        if self.structures.len() > 255 {
            return Err(config_err!("phantom.structures: at most 255 structures"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(config_err!("phantom.noise_sigma must be non-negative"));
        }
        for (i, s) in self.structures.iter().enumerate() {
            if !(s.intensity_sigma >= 0.0 && s.intensity_sigma.is_finite() && s.intensity_mean.is_finite()) {
                return Err(config_err!("phantom.structures[{i}] intensity must be finite with sigma >= 0"));
            }
            match s.placement {
                Placement::Random { size_range: (lo, hi) } => {
                    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                        return Err(config_err!("phantom.structures[{i}].size_range must satisfy 0 < lo <= hi <= 1"));
                    }
                }
                Placement::Fixed { radii, .. } => {
                    if radii.iter().any(|&r| !(r > 0.0)) {
                        return Err(config_err!("phantom.structures[{i}].radii must be positive"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn draw_geometry(rng: &mut ChaCha8Rng, extents: [usize; 3], size_range: (f64, f64)) -> ([f64; 3], [f64; 3]) {
    let mut center = [0.0; 3];
    let mut radii = [0.0; 3];
    for a in 0..3 {
        let n = extents[a] as f64;
        let frac = if size_range.0 < size_range.1 { rng.random_range(size_range.0..=size_range.1) } else { size_range.0 };
        radii[a] = (frac * n / 2.0).max(0.5);
        let room = (n - 1.0 - 2.0 * radii[a]).max(0.0);
        let lo = ((n - 1.0) / 2.0 - room / 2.0).max(0.0);
        center[a] = lo + rng.random::<f64>() * room;
    }
    (center, radii)
}

/// Labels and intensities for one phantom; identical specs give identical bytes.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(IntensityVolume, LabelVolume)> {
    spec.validate()?;
    let [d, h, w] = spec.extents;
    let mut geometry_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);

    let mut labels = vec![0u8; d * h * w];
    for (i, s) in spec.structures.iter().enumerate() {
        let label = i as u8 + 1;
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (center, radii) = match s.placement {
                Placement::Fixed { center, radii } => (center, radii),
                Placement::Random { size_range } => draw_geometry(&mut geometry_rng, spec.extents, size_range),
            };
            let mut candidate = labels.clone();
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        if s.contains(center, radii, [z as f64, y as f64, x as f64]) {
                            candidate[(z * h + y) * w + x] = label;
                        }
                    }
                }
            }
            let mut counts = vec![0usize; i + 2];
            for &l in &candidate {
                counts[l as usize] += 1;
            }
            if counts[1..].iter().all(|&c| c > 0) {
                labels = candidate;
                placed = true;
                break;
            }
            if matches!(s.placement, Placement::Fixed { .. }) {
                break;
            }
        }
        if !placed {
            return Err(config_err!("phantom.structures[{i}] could not be placed with a visible voxel"));
        }
    }

    let intensities = labels
        .iter()
        .map(|&l| {
            let (mean, sigma) = match l {
                0 => (spec.background_mean, spec.noise_sigma),
                l => {
                    let s = &spec.structures[l as usize - 1];
                    (s.intensity_mean, s.intensity_sigma)
                }
            };
            let n: f64 = noise_rng.sample(StandardNormal);
            mean + sigma * n as f32
        })
        .collect();
    Ok((
        IntensityVolume::intensities(spec.extents, spec.spacing, intensities)?,
        LabelVolume::labels(spec.extents, spec.spacing, spec.classes(), labels)?,
    ))
}

/// Largest rotation magnitude drawn by [`AugmentParams::sample`], in degrees.
pub const MAX_ROTATION_DEG: f64 = 20.0;

/// Flip flags and rotation angle; flips apply before rotation about the slice center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip_h: bool,
    pub flip_v: bool,
    pub angle_deg: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams { flip_h: false, flip_v: false, angle_deg: 0.0 };

    /// Each flip with probability 1/2, angle uniform in `[−20°, 20°]`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            angle_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
        }
    }

    /// Transforms an `h × w` slice; intensities bilinearly, labels by nearest neighbor,
    /// both filled with 0 outside the source.
    pub fn apply(&self, image: &[f32], labels: &[u8], h: usize, w: usize) -> Result<(Vec<f32>, Vec<u8>)> {
        if image.len() != h * w || labels.len() != h * w {
            return Err(contract_err!(
                "slice buffers ({}, {}) do not match {h}x{w}",
                image.len(),
                labels.len()
            ));
        }
        let src = |y: usize, x: usize| {
            let sy = if self.flip_v { h - 1 - y } else { y };
            let sx = if self.flip_h { w - 1 - x } else { x };
            sy * w + sx
        };
        let mut img: Vec<f32> = (0..h * w).map(|i| image[src(i / w, i % w)]).collect();
        let mut lab: Vec<u8> = (0..h * w).map(|i| labels[src(i / w, i % w)]).collect();
        if self.angle_deg != 0.0 {
            (img, lab) = rotate(&img, &lab, h, w, self.angle_deg);
        }
        Ok((img, lab))
    }
}

fn rotate(image: &[f32], labels: &[u8], h: usize, w: usize, angle_deg: f64) -> (Vec<f32>, Vec<u8>) {
    let theta = angle_deg.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let pixel = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            image[y as usize * w + x as usize] as f64
        }
    };
    let mut out_img = vec![0.0f32; h * w];
    let mut out_lab = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            let (x0, y0) = (libm::floor(sx), libm::floor(sy));
            let (fx, fy) = (sx - x0, sy - y0);
            let (xi, yi) = (x0 as isize, y0 as isize);
            let top = pixel(yi, xi) + fx * (pixel(yi, xi + 1) - pixel(yi, xi));
            let bottom = pixel(yi + 1, xi) + fx * (pixel(yi + 1, xi + 1) - pixel(yi + 1, xi));
            out_img[y * w + x] = (top + fy * (bottom - top)) as f32;
            let (nx, ny) = (libm::round(sx), libm::round(sy));
            if nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64 {
                out_lab[y * w + x] = labels[ny as usize * w + nx as usize];
            }
        }
    }
    (out_img, out_lab)
}

/// Random flip + rotation drawn from `seed`.
pub fn augment(image: &[f32], labels: &[u8], h: usize, w: usize, seed: u64) -> Result<(Vec<f32>, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AugmentParams::sample(&mut rng).apply(image, labels, h, w)
}

/// Disjoint case-id lists.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    /// Shuffles `ids` with `seed`, then takes `val` and `test` cases; the rest train.
    pub fn partition(ids: &[String], val: usize, test: usize, seed: u64) -> Result<Self> {
        if val + test > ids.len() {
            return Err(config_err!(
                "data.val_cases + data.test_cases ({}) exceed {} cases",
                val + test,
                ids.len()
            ));
        }
        let mut order = ids.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test_ids = order.split_off(order.len() - test);
        let val_ids = order.split_off(order.len() - val);
        let split = Self { train: order, val: val_ids, test: test_ids };
        split.validate(ids)?;
        Ok(split)
    }

    /// Checks the lists are pairwise disjoint and together cover exactly `ids`.
    pub fn validate(&self, ids: &[String]) -> Result<()> {
        let mut all: Vec<&String> = self.train.iter().chain(&self.val).chain(&self.test).collect();
        all.sort();
        if let Some(pair) = all.windows(2).find(|p| p[0] == p[1]) {
            return Err(contract_err!("case '{}' appears in more than one split", pair[0]));
        }
        let mut expected: Vec<&String> = ids.iter().collect();
        expected.sort();
        if all != expected {
            return Err(contract_err!("split does not cover the case list exactly"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub image: IntensityVolume,
    pub labels: LabelVolume,
}

/// One 2D training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub height: usize,
    pub width: usize,
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Case {
    pub fn slices(&self) -> impl Iterator<Item = Slice> + '_ {
        (0..self.image.depth()).map(move |z| Slice {
            height: self.image.height(),
            width: self.image.width(),
            image: self.image.slice(z).to_vec(),
            labels: self.labels.slice(z).to_vec(),
        })
    }
}

/// Recipe for a phantom case set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetSpec {
    pub cases: usize,
    pub depth: usize,
    /// In-plane extent (square slices).
    pub resolution: usize,
    pub classes: usize,
    pub spacing: Spacing,
    pub val_cases: usize,
    pub test_cases: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            cases: 10,
            depth: 8,
            resolution: 64,
            classes: 4,
            spacing: Spacing { x: 1.0, y: 1.0, z: 2.5 },
            val_cases: 2,
            test_cases: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cases: Vec<Case>,
    pub split: DatasetSplit,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cases == 0 {
            return Err(config_err!("data.cases must be positive"));
        }
        if !(2..=256).contains(&self.classes) {
            return Err(config_err!("data.classes must be in 2..=256, got {}", self.classes));
        }
        if self.val_cases + self.test_cases >= self.cases {
            return Err(config_err!("data.val_cases + data.test_cases must leave at least one training case"));
        }
        for (field, n) in [("depth", self.depth), ("resolution", self.resolution)] {
            if n < MIN_EXTENT {
                return Err(config_err!("data.{field} must be at least {MIN_EXTENT}, got {n}"));
            }
        }
        self.spacing.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("data.{m}")),
            e => e,
        })?;
        self.phantom(0).validate()
    }

    /// Case ids in generation order.
    pub fn case_ids(&self) -> Vec<String> {
        (0..self.cases).map(|i| format!("case{i:03}")).collect()
    }

    /// Phantom recipe for case `index`.
    pub fn phantom(&self, index: usize) -> PhantomSpec {
        let seed = self.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        PhantomSpec::standard([self.depth, self.resolution, self.resolution], self.spacing, self.classes, seed)
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let ids = self.case_ids();
        let cases = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let (image, labels) = generate_phantom(&self.phantom(i))?;
                Ok(Case { id: id.clone(), image, labels })
            })
            .collect::<Result<Vec<_>>>()?;
        let split = DatasetSplit::partition(&ids, self.val_cases, self.test_cases, self.seed)?;
        Ok(Dataset { cases, split })
    }
}

impl Dataset {
    pub fn select(&self, ids: &[String]) -> Result<Vec<Case>> {
        ids.iter()
            .map(|id| {
                self.cases
                    .iter()
                    .find(|c| &c.id == id)
                    .cloned()
                    .ok_or_else(|| contract_err!("unknown case id '{id}'"))
            })
            .collect()
    }

    pub fn train_cases(&self) -> Result<Vec<Case>> {
        self.select(&self.split.train)
    }
    pub fn val_cases(&self) -> Result<Vec<Case>> {
        self.select(&self.split.val)
    }
    pub fn test_cases(&self) -> Result<Vec<Case>> {
        self.select(&self.split.test)
    }

    pub fn train_slices(&self) -> Result<Vec<Slice>> {
        Ok(self.train_cases()?.iter().flat_map(Case::slices).collect())
    }
}
