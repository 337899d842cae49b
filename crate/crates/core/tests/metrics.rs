//! Dice and Hausdorff against literal set-counting and all-pairs oracles.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transunet_core::data::Case;
use transunet_core::metrics::{
    dice, evaluate_case_set, evaluate_volumes, grid_diagonal, hausdorff, stack_slices, CaseClassMetric, MetricReport,
};
use transunet_core::{Error, IntensityVolume, LabelVolume, Spacing, Tensor};

const EXT: [usize; 3] = [4, 16, 16];

fn volume(voxels: Vec<u8>, spacing: Spacing, classes: usize) -> LabelVolume {
    LabelVolume::labels(EXT, spacing, classes, voxels).unwrap()
}

fn random_volume(rng: &mut ChaCha8Rng, fill: f64) -> Vec<u8> {
    (0..EXT.iter().product()).map(|_| rng.random_bool(fill) as u8).collect()
}

/// Set of voxel coordinates carrying `class_id`.
fn coords(v: &LabelVolume, class_id: u8) -> Vec<[usize; 3]> {
    let [d, h, w] = v.extents;
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if v.get(z, y, x) == class_id {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

fn dice_oracle(a: &LabelVolume, b: &LabelVolume, c: u8) -> f64 {
    let sa = coords(a, c);
    let sb = coords(b, c);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.iter().filter(|p| sb.contains(p)).count();
    2.0 * inter as f64 / (sa.len() + sb.len()) as f64
}

fn boundary_oracle(v: &LabelVolume, c: u8) -> Vec<[usize; 3]> {
    let [d, h, w] = v.extents;
    let inside = |z: isize, y: isize, x: isize| {
        z >= 0 && y >= 0 && x >= 0 && (z as usize) < d && (y as usize) < h && (x as usize) < w
            && v.get(z as usize, y as usize, x as usize) == c
    };
    coords(v, c)
        .into_iter()
        .filter(|&[z, y, x]| {
            let (z, y, x) = (z as isize, y as isize, x as isize);
            [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                .iter()
                .any(|(dz, dy, dx)| !inside(z + dz, y + dy, x + dx))
        })
        .collect()
}

fn hausdorff_oracle(a: &LabelVolume, b: &LabelVolume, c: u8, s: Spacing) -> f64 {
    let ba = boundary_oracle(a, c);
    let bb = boundary_oracle(b, c);
    match (ba.is_empty(), bb.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => {
            let [d, h, w] = a.extents;
            return ((w as f64 * s.x).powi(2) + (h as f64 * s.y).powi(2) + (d as f64 * s.z).powi(2)).sqrt();
        }
        _ => {}
    }
    let dist = |p: &[usize; 3], q: &[usize; 3]| {
        let dz = (p[0] as f64 - q[0] as f64) * s.z;
        let dy = (p[1] as f64 - q[1] as f64) * s.y;
        let dx = (p[2] as f64 - q[2] as f64) * s.x;
        (dx * dx + dy * dy + dz * dz).sqrt()
    };
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        from.iter()
            .map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(&ba, &bb).max(directed(&bb, &ba))
}

#[test]
fn fifty_random_pairs_match_oracles_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let spacings = [Spacing::UNIT, Spacing { x: 0.5, y: 0.75, z: 2.5 }, Spacing { x: 1.25, y: 1.0, z: 3.0 }];
    for i in 0..50 {
        let s = spacings[i % spacings.len()];
        let fa = rng.random_range(0.02..0.6);
        let fb = rng.random_range(0.02..0.6);
        let a = volume(random_volume(&mut rng, fa), s, 2);
        let b = volume(random_volume(&mut rng, fb), s, 2);
        assert_eq!(dice(&a, &b, 1).unwrap(), dice_oracle(&a, &b, 1), "pair {i}");
        assert_eq!(hausdorff(&a, &b, 1, s).unwrap(), hausdorff_oracle(&a, &b, 1, s), "pair {i}");
    }
}

#[test]
fn sparse_random_pairs_match_oracles_exactly() {
    // Few voxels, so distance fields span the whole grid.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = Spacing { x: 0.5, y: 1.5, z: 2.5 };
    for i in 0..50 {
        let a = volume(random_volume(&mut rng, 0.01), s, 2);
        let b = volume(random_volume(&mut rng, 0.01), s, 2);
        assert_eq!(dice(&a, &b, 1).unwrap(), dice_oracle(&a, &b, 1), "pair {i}");
        assert_eq!(hausdorff(&a, &b, 1, s).unwrap(), hausdorff_oracle(&a, &b, 1, s), "pair {i}");
    }
}

fn single(z: usize, y: usize, x: usize) -> LabelVolume {
    let mut v = vec![0u8; EXT.iter().product()];
    v[(z * EXT[1] + y) * EXT[2] + x] = 1;
    volume(v, Spacing::UNIT, 2)
}

#[test]
fn hand_geometry() {
    let a = single(1, 5, 5);
    assert_eq!(hausdorff(&a, &single(1, 5, 8), 1, Spacing::UNIT).unwrap(), 3.0);
    assert_eq!(hausdorff(&a, &single(1, 9, 5), 1, Spacing::UNIT).unwrap(), 4.0);
    assert_eq!(hausdorff(&a, &single(3, 5, 5), 1, Spacing::UNIT).unwrap(), 2.0);
    assert_eq!(hausdorff(&a, &single(1, 8, 9), 1, Spacing::UNIT).unwrap(), 5.0);
    let s = Spacing { x: 1.0, y: 1.0, z: 2.5 };
    let a2 = LabelVolume { spacing: s, ..a.clone() };
    let b2 = LabelVolume { spacing: s, ..single(3, 5, 5) };
    assert_eq!(hausdorff(&a2, &b2, 1, s).unwrap(), 5.0);

    assert_eq!(hausdorff(&a, &a, 1, Spacing::UNIT).unwrap(), 0.0);
    assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
    assert_eq!(dice(&a, &single(0, 0, 0), 1).unwrap(), 0.0);
}

#[test]
fn empty_mask_conventions() {
    let empty = volume(vec![0; EXT.iter().product()], Spacing::UNIT, 2);
    let a = single(0, 0, 0);
    assert_eq!(dice(&empty, &empty, 1).unwrap(), 1.0);
    assert_eq!(hausdorff(&empty, &empty, 1, Spacing::UNIT).unwrap(), 0.0);
    let diag = grid_diagonal(EXT, Spacing::UNIT);
    assert_eq!(diag, (16.0f64 * 16.0 * 2.0 + 16.0).sqrt());
    assert_eq!(hausdorff(&a, &empty, 1, Spacing::UNIT).unwrap(), diag);
    assert_eq!(hausdorff(&empty, &a, 1, Spacing::UNIT).unwrap(), diag);
}

#[test]
fn grid_mismatch_is_contract_error() {
    let a = single(0, 0, 0);
    let b = LabelVolume::labels([2, 16, 16], Spacing::UNIT, 2, vec![0; 512]).unwrap();
    assert!(matches!(dice(&a, &b, 1), Err(Error::Contract(_))));
    assert!(matches!(hausdorff(&a, &b, 1, Spacing::UNIT), Err(Error::Contract(_))));
}

#[test]
fn nested_masks_lose_dice_as_difference_grows() {
    // Fixed-size ground truth against predictions sharing ever fewer voxels.
    let n: usize = EXT.iter().product();
    let gt = volume((0..n).map(|i| (i < 200) as u8).collect(), Spacing::UNIT, 2);
    let mut last = f64::INFINITY;
    for shift in [0usize, 10, 40, 100, 199, 200] {
        let pred = volume((0..n).map(|i| (i >= shift && i < shift + 200) as u8).collect(), Spacing::UNIT, 2);
        let d = dice(&pred, &gt, 1).unwrap();
        assert!(d <= last);
        last = d;
    }
    assert_eq!(last, 0.0);
}

#[test]
fn stack_slices_argmax_and_ties() {
    let s = Tensor::<f32>::from_fn(&[3, 2, 2], |i| if i / 4 == 0 { 1.0 } else { 0.0 });
    let v = stack_slices(&[s], Spacing::UNIT).unwrap();
    assert_eq!(v.extents, [1, 2, 2]);
    assert!(v.voxels.iter().all(|&l| l == 0));

    // Classes 1 and 2 tie at pixel 0; class 2 wins pixel 1.
    let t = Tensor::<f32>::new(&[3, 1, 2], vec![0.0, 0.0, 5.0, 1.0, 5.0, 2.0]).unwrap();
    let v = stack_slices(&[t.clone(), t], Spacing::UNIT).unwrap();
    assert_eq!(v.extents, [2, 1, 2]);
    assert_eq!(v.voxels, [1, 2, 1, 2]);
    assert!(matches!(stack_slices::<f32>(&[], Spacing::UNIT), Err(Error::Contract(_))));
}

fn case_from(labels: &LabelVolume) -> Case {
    let image = IntensityVolume::intensities(labels.extents, labels.spacing, labels.voxels.iter().map(|&l| l as f32).collect()).unwrap();
    Case { id: "c".into(), image, labels: labels.clone() }
}

/// Predictor returning one-hot logits of the intensity (which equals the label).
fn copy_model(k: usize) -> impl FnMut(&Tensor<f32>) -> transunet_core::Result<Tensor<f32>> {
    move |x: &Tensor<f32>| {
        let n = x.numel();
        let (h, w) = (x.shape()[1], x.shape()[2]);
        Ok(Tensor::from_fn(&[k, h, w], |i| if x.data()[i % n] as usize == i / n { 1.0 } else { 0.0 }))
    }
}

#[test]
fn perfect_prediction_report() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels = volume((0..EXT.iter().product()).map(|_| rng.random_range(0..3u8)).collect(), Spacing::UNIT, 3);
    let report = evaluate_case_set(&[case_from(&labels)], copy_model(3)).unwrap();
    assert_eq!(report.cases, 1);
    assert_eq!(report.per_class.len(), 2);
    for c in &report.per_class {
        assert_eq!(c.dsc, 1.0);
        assert_eq!(c.hd_mm, 0.0);
    }
    assert_eq!(report.mean_dsc, 1.0);
    let again = evaluate_case_set(&[case_from(&labels)], copy_model(3)).unwrap();
    assert_eq!(report, again);
}

#[test]
fn case_averaging_and_absent_classes() {
    let m = |dsc, hd| CaseClassMetric { class_id: 1, dsc, hd_mm: hd };
    let r = MetricReport::from_cases(&[vec![m(0.8, Some(2.0))], vec![m(0.6, Some(4.0))]]).unwrap();
    assert!((r.mean_dsc - 0.7).abs() < 1e-15);
    assert_eq!(r.mean_hd_mm, 3.0);
    let r = MetricReport::from_cases(&[vec![m(1.0, None)], vec![m(0.5, Some(4.0))]]).unwrap();
    assert_eq!(r.per_class[0].hd_mm, 4.0);
    assert_eq!(r.per_class[0].dsc, 0.75);

    let empty = volume(vec![0; EXT.iter().product()], Spacing::UNIT, 2);
    let r = evaluate_volumes(&[(empty.clone(), empty)]).unwrap();
    assert_eq!(r.per_class[0].dsc, 1.0);
    assert_eq!(r.mean_hd_mm, 0.0);
}

#[test]
fn report_table_names_its_columns() {
    let labels = single(0, 1, 1);
    let r = evaluate_volumes(&[(labels.clone(), labels)]).unwrap();
    let text = format!("{r}");
    assert!(text.contains("class_id") && text.contains("hd_mm"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dice_and_hausdorff_are_symmetric(seed in any::<u64>(), fa in 0.0f64..0.5, fb in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Spacing { x: 0.5, y: 1.0, z: 2.0 };
        let a = volume(random_volume(&mut rng, fa), s, 2);
        let b = volume(random_volume(&mut rng, fb), s, 2);
        prop_assert_eq!(dice(&a, &b, 1).unwrap(), dice(&b, &a, 1).unwrap());
        prop_assert_eq!(hausdorff(&a, &b, 1, s).unwrap(), hausdorff(&b, &a, 1, s).unwrap());
        let d = dice(&a, &b, 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(hausdorff(&a, &b, 1, s).unwrap() >= 0.0);
    }

    #[test]
    fn stacked_depth_and_labels(depth in 1usize..5, k in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slices: Vec<Tensor<f32>> = (0..depth).map(|_| Tensor::from_fn(&[k, 3, 2], |_| rng.random_range(-1.0..1.0))).collect();
        let v = stack_slices(&slices, Spacing::UNIT).unwrap();
        prop_assert_eq!(v.depth(), depth);
        prop_assert!(v.voxels.iter().all(|&l| (l as usize) < k));
    }
}
