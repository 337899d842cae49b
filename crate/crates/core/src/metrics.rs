//! Dice and Hausdorff evaluation of label volumes, slice stacking and case-set reports.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::Case;
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::volume::{LabelVolume, Spacing};

/// `2|A∩B| / (|A|+|B|)` for the masks of `class_id`; 1.0 when both are empty.
pub fn dice(pred: &LabelVolume, gt: &LabelVolume, class_id: u8) -> Result<f64> {
    pred.same_grid(gt)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.voxels.iter().zip(&gt.voxels) {
        let (ip, ig) = (p == class_id, g == class_id);
        a += ip as usize;
        b += ig as usize;
        both += (ip && ig) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Mask voxels with at least one of their six face neighbors outside the mask.
/// Neighbors beyond the grid count as outside.
pub fn boundary(mask: &[bool], extents: [usize; 3]) -> Vec<bool> {
    let [d, h, w] = extents;
    let at = |z: usize, y: usize, x: usize| mask[(z * h + y) * w + x];
    let mut out = vec![false; mask.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !at(z, y, x) {
                    continue;
                }
                let interior = z > 0
                    && z + 1 < d
                    && y > 0
                    && y + 1 < h
                    && x > 0
                    && x + 1 < w
                    && at(z - 1, y, x)
                    && at(z + 1, y, x)
                    && at(z, y - 1, x)
                    && at(z, y + 1, x)
                    && at(z, y, x - 1)
                    && at(z, y, x + 1);
                out[(z * h + y) * w + x] = !interior;
            }
        }
    }
    out
}

/// Lower envelope of parabolas `w2·(p−q)² + f(q)` over the finite entries of `f`.
fn distance_line(f: &[f64], w2: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let meet = |p: usize, q: usize| {
        let (pf, qf) = (p as f64, q as f64);
        ((f[q] + w2 * qf * qf) - (f[p] + w2 * pf * pf)) / (2.0 * w2 * (qf - pf))
    };
    for q in 0..f.len() {
        if f[q] == f64::INFINITY {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = meet(p, q);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let d = p as f64 - v[k] as f64;
        *o = w2 * d * d + f[v[k]];
    }
}

/// Squared spacing-weighted Euclidean distance from every voxel to the nearest `sites` voxel
/// (infinite when there are no sites).
pub fn squared_distance_field(sites: &[bool], extents: [usize; 3], spacing: Spacing) -> Vec<f64> {
    let [d, h, w] = extents;
    let mut field: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut line = Vec::new();
    let mut out = Vec::new();
    // (line length, element stride, squared spacing) per axis
    let passes: [(usize, usize, f64); 3] = [(w, 1, spacing.x * spacing.x), (h, w, spacing.y * spacing.y), (d, h * w, spacing.z * spacing.z)];
    for (len, stride, w2) in passes {
        if len == 0 {
            return field;
        }
        line.resize(len, 0.0);
        out.resize(len, 0.0);
        let total = field.len();
        for start in 0..total {
            // A start is the first element of its line along this axis.
            if (start / stride) % len != 0 {
                continue;
            }
            for i in 0..len {
                line[i] = field[start + i * stride];
            }
            distance_line(&line, w2, &mut out, &mut v, &mut z);
            for i in 0..len {
                field[start + i * stride] = out[i];
            }
        }
    }
    field
}

/// Length of the grid's space diagonal in mm, the penalty when exactly one mask is empty.
pub fn grid_diagonal(extents: [usize; 3], spacing: Spacing) -> f64 {
    let dz = extents[0] as f64 * spacing.z;
    let dy = extents[1] as f64 * spacing.y;
    let dx = extents[2] as f64 * spacing.x;
    libm::sqrt(dx * dx + dy * dy + dz * dz)
}

/// Symmetric boundary Hausdorff distance in mm for the masks of `class_id`.
pub fn hausdorff(pred: &LabelVolume, gt: &LabelVolume, class_id: u8, spacing: Spacing) -> Result<f64> {
    pred.same_grid(gt)?;
    spacing.validate()?;
    let ext = pred.extents;
    let a = boundary(&pred.mask(class_id), ext);
    let b = boundary(&gt.mask(class_id), ext);
    match (a.contains(&true), b.contains(&true)) {
        (false, false) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(grid_diagonal(ext, spacing)),
        _ => {}
    }
    let directed = |from: &[bool], to: &[bool]| {
        let field = squared_distance_field(to, ext, spacing);
        from.iter().zip(&field).filter(|(&f, _)| f).fold(0.0f64, |m, (_, &d)| m.max(d))
    };
    let sq = directed(&a, &b).max(directed(&b, &a));
    Ok(libm::sqrt(sq))
}

/// Per-pixel argmax of `[K, H, W]` logits (ties to the lower class), stacked in order.
pub fn stack_slices<T: Scalar>(slices: &[Tensor<T>], spacing: Spacing) -> Result<LabelVolume> {
    let first = slices.first().ok_or_else(|| contract_err!("cannot stack an empty slice list"))?;
    let &[k, h, w] = first.shape() else {
        return Err(contract_err!("slice logits must be [K, H, W], got {:?}", first.shape()));
    };
    if k == 0 || k > 256 {
        return Err(contract_err!("class count {k} outside 1..=256"));
    }
    let n = h * w;
    let mut voxels = Vec::with_capacity(slices.len() * n);
    for (i, s) in slices.iter().enumerate() {
        if s.shape() != first.shape() {
            return Err(contract_err!("slice {i} has shape {:?}, expected {:?}", s.shape(), first.shape()));
        }
        let data = s.data();
        voxels.extend((0..n).map(|p| {
            let mut best = 0;
            for c in 1..k {
                if data[c * n + p] > data[best * n + p] {
                    best = c;
                }
            }
            best as u8
        }));
    }
    LabelVolume::labels([slices.len(), h, w], spacing, k, voxels)
}

/// DSC and HD for one foreground class of one case; `hd_mm` is `None` when
/// the class is absent from both prediction and ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseClassMetric {
    pub class_id: u8,
    pub dsc: f64,
    pub hd_mm: Option<f64>,
}

/// Metrics for foreground classes `1..K` of one predicted volume.
pub fn case_metrics(pred: &LabelVolume, gt: &LabelVolume) -> Result<Vec<CaseClassMetric>> {
    pred.same_grid(gt)?;
    let k = gt.classes.max(pred.classes);
    (1..k)
        .map(|c| {
            let c = c as u8;
            let present = pred.voxels.contains(&c) || gt.voxels.contains(&c);
            Ok(CaseClassMetric {
                class_id: c,
                dsc: dice(pred, gt, c)?,
                hd_mm: if present { Some(hausdorff(pred, gt, c, gt.spacing)?) } else { None },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassMetric {
    pub class_id: u8,
    pub dsc: f64,
    pub hd_mm: f64,
}

/// Per-class and averaged scores over a case set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub cases: usize,
    pub per_class: Vec<ClassMetric>,
    pub mean_dsc: f64,
    pub mean_hd_mm: f64,
}

impl MetricReport {
    /// Averages per-case metrics class by class; HD averages skip cases where the
    /// class is absent from both volumes.
    pub fn from_cases(cases: &[Vec<CaseClassMetric>]) -> Result<Self> {
        let classes = cases.first().map_or(0, Vec::len);
        if cases.iter().any(|c| c.len() != classes) {
            return Err(contract_err!("cases report different class counts"));
        }
        let mut per_class = Vec::with_capacity(classes);
        let mut hd_classes = 0usize;
        let mut hd_total = 0.0;
        for j in 0..classes {
            let dsc = cases.iter().map(|c| c[j].dsc).sum::<f64>() / cases.len() as f64;
            let hds: Vec<f64> = cases.iter().filter_map(|c| c[j].hd_mm).collect();
            let hd_mm = if hds.is_empty() { 0.0 } else { hds.iter().sum::<f64>() / hds.len() as f64 };
            if !hds.is_empty() {
                hd_classes += 1;
                hd_total += hd_mm;
            }
            per_class.push(ClassMetric { class_id: cases[0][j].class_id, dsc, hd_mm });
        }
        let mean_dsc = if classes == 0 { 1.0 } else { per_class.iter().map(|c| c.dsc).sum::<f64>() / classes as f64 };
        let mean_hd_mm = if hd_classes == 0 { 0.0 } else { hd_total / hd_classes as f64 };
        Ok(Self { cases: cases.len(), per_class, mean_dsc, mean_hd_mm })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>8} {:>10}", "class_id", "dsc", "hd_mm")?;
        for c in &self.per_class {
            writeln!(f, "{:>8} {:>8.4} {:>10.3}", c.class_id, c.dsc, c.hd_mm)?;
        }
        write!(f, "{:>8} {:>8.4} {:>10.3}  ({} cases)", "mean", self.mean_dsc, self.mean_hd_mm, self.cases)
    }
}

/// Scores `(prediction, ground truth)` volume pairs.
pub fn evaluate_volumes(pairs: &[(LabelVolume, LabelVolume)]) -> Result<MetricReport> {
    let per_case = pairs.iter().map(|(p, g)| case_metrics(p, g)).collect::<Result<Vec<_>>>()?;
    MetricReport::from_cases(&per_case)
}

/// Predicts every case slice by slice, stacks the argmax labels and scores them.
pub fn evaluate_case_set<T, F>(cases: &[Case], mut predict: F) -> Result<MetricReport>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    let mut pairs = Vec::with_capacity(cases.len());
    for case in cases {
        let pred = predict_case(case, &mut predict)?;
        pairs.push((pred, case.labels.clone()));
    }
    evaluate_volumes(&pairs)
}

/// Slice-by-slice label volume for one case.
pub fn predict_case<T, F>(case: &Case, predict: &mut F) -> Result<LabelVolume>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    let logits = (0..case.image.depth())
        .map(|z| predict(&case.image.slice_tensor(z)))
        .collect::<Result<Vec<_>>>()?;
    let mut vol = stack_slices(&logits, case.image.spacing)?;
    if vol.classes < case.labels.classes {
        vol.classes = case.labels.classes;
    }
    Ok(vol)
}
