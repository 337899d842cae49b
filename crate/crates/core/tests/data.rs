//! Phantom generation, augmentation and splits.

use proptest::prelude::*;
use transunet_core::data::{
    augment, generate_phantom, AugmentParams, DatasetSpec, DatasetSplit, Placement, PhantomSpec, ShapeFamily,
    StructureSpec,
};
use transunet_core::{Error, Spacing};

fn fixed(shape: ShapeFamily, center: [f64; 3], radii: [f64; 3]) -> StructureSpec {
    StructureSpec { shape, placement: Placement::Fixed { center, radii }, intensity_mean: 1.0, intensity_sigma: 0.0 }
}

fn spec(structures: Vec<StructureSpec>) -> PhantomSpec {
    PhantomSpec { extents: [16, 16, 16], spacing: Spacing::UNIT, structures, background_mean: 0.0, noise_sigma: 0.1, seed: 5 }
}

#[test]
fn zero_structures_is_background_noise() {
    let (img, lab) = generate_phantom(&spec(vec![])).unwrap();
    assert!(lab.voxels.iter().all(|&l| l == 0));
    assert_eq!(lab.classes, 1);
    let mean = img.voxels.iter().map(|&v| v as f64).sum::<f64>() / img.voxels.len() as f64;
    let var = img.voxels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / img.voxels.len() as f64;
    assert!(mean.abs() < 0.01 && (var.sqrt() - 0.1).abs() < 0.01, "mean {mean} sd {}", var.sqrt());
}

#[test]
fn centered_ellipsoid_matches_inequality_oracle() {
    let c = [7.5, 7.5, 7.5];
    let r = [2.0, 2.0, 2.0];
    let (_, lab) = generate_phantom(&spec(vec![fixed(ShapeFamily::Ellipsoid, c, r)])).unwrap();
    let mut expected = 0;
    for z in 0..16 {
        for y in 0..16 {
            for x in 0..16 {
                let q = [z, y, x].iter().zip(c.iter().zip(r)).map(|(&p, (&c, r))| ((p as f64 - c) / r).powi(2)).sum::<f64>();
                let inside = q <= 1.0;
                expected += inside as usize;
                assert_eq!(lab.get(z, y, x) == 1, inside, "({z},{y},{x})");
            }
        }
    }
    assert_eq!(lab.voxels.iter().filter(|&&l| l == 1).count(), expected);
    assert_eq!(expected, 32);

    let (_, lab) = generate_phantom(&spec(vec![fixed(ShapeFamily::Ellipsoid, [8.0; 3], r)])).unwrap();
    assert_eq!(lab.voxels.iter().filter(|&&l| l == 1).count(), 33);
}

#[test]
fn box_structure_and_overwrite_order() {
    let outer = fixed(ShapeFamily::Box, [8.0; 3], [3.0; 3]);
    let inner = fixed(ShapeFamily::Box, [8.0; 3], [1.0; 3]);
    let (_, lab) = generate_phantom(&spec(vec![outer, inner])).unwrap();
    assert_eq!(lab.voxels.iter().filter(|&&l| l == 2).count(), 27);
    assert_eq!(lab.voxels.iter().filter(|&&l| l == 1).count(), 343 - 27);

    let hidden = fixed(ShapeFamily::Box, [8.0; 3], [1.0; 3]);
    let cover = fixed(ShapeFamily::Box, [8.0; 3], [3.0; 3]);
    assert!(matches!(generate_phantom(&spec(vec![hidden, cover])), Err(Error::Config(_))));
}

#[test]
fn generation_is_deterministic_and_structures_visible() {
    let s = PhantomSpec::standard([8, 32, 32], Spacing { x: 0.5, y: 0.5, z: 2.5 }, 4, 11);
    let a = generate_phantom(&s).unwrap();
    let b = generate_phantom(&s).unwrap();
    assert_eq!(a, b);
    for l in 1..4u8 {
        assert!(a.1.voxels.contains(&l));
    }
    let other = generate_phantom(&PhantomSpec { seed: 12, ..s }).unwrap();
    assert_ne!(a.1, other.1);
}

#[test]
fn degenerate_extents_rejected() {
    let mut s = spec(vec![]);
    s.extents = [4, 16, 16];
    let Err(Error::Config(msg)) = generate_phantom(&s) else { panic!() };
    assert!(msg.contains("phantom.depth"), "{msg}");
}

fn ramp(h: usize, w: usize) -> (Vec<f32>, Vec<u8>) {
    ((0..h * w).map(|i| i as f32 * 0.25).collect(), (0..h * w).map(|i| (i % 3) as u8).collect())
}

#[test]
fn identity_and_double_flip() {
    let (img, lab) = ramp(6, 5);
    let (a, b) = AugmentParams::IDENTITY.apply(&img, &lab, 6, 5).unwrap();
    assert_eq!((a, b), (img.clone(), lab.clone()));

    let flip = AugmentParams { flip_h: true, ..AugmentParams::IDENTITY };
    let (a, b) = flip.apply(&img, &lab, 6, 5).unwrap();
    assert_ne!(a, img);
    let (a2, b2) = flip.apply(&a, &b, 6, 5).unwrap();
    assert_eq!((a2, b2), (img, lab));
}

#[test]
fn rotation_fixes_the_center_pixel() {
    let (h, w) = (9, 9);
    let img: Vec<f32> = (0..h * w).map(|i| if i == 40 { 7.0 } else { 0.0 }).collect();
    let lab: Vec<u8> = (0..h * w).map(|i| (i == 40) as u8).collect();
    let p = AugmentParams { flip_h: false, flip_v: false, angle_deg: 15.0 };
    let (a, b) = p.apply(&img, &lab, h, w).unwrap();
    assert_eq!(a[40], 7.0);
    assert_eq!(b[40], 1);
}

#[test]
fn mismatched_buffers_rejected() {
    assert!(AugmentParams::IDENTITY.apply(&[0.0; 4], &[0; 3], 2, 2).is_err());
}

#[test]
fn splits_are_disjoint_and_cover() {
    let ids: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
    let s = DatasetSplit::partition(&ids, 2, 3, 9).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (5, 2, 3));
    s.validate(&ids).unwrap();
    let bad = DatasetSplit { train: vec!["c0".into()], val: vec!["c0".into()], test: vec![] };
    assert!(bad.validate(&ids[..1]).is_err());
    assert!(DatasetSplit::partition(&ids, 8, 3, 0).is_err());
}

#[test]
fn dataset_spec_generates_split_cases() {
    let spec = DatasetSpec { cases: 4, depth: 8, resolution: 16, val_cases: 1, test_cases: 1, ..Default::default() };
    let d = spec.generate().unwrap();
    assert_eq!(d.cases.len(), 4);
    assert_eq!(d.train_slices().unwrap().len(), 16);
    assert_eq!(d, spec.generate().unwrap());
    let bad = DatasetSpec { classes: 1, ..spec };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmentation_never_invents_labels(seed in any::<u64>(), h in 3usize..12, w in 3usize..12) {
        let img: Vec<f32> = (0..h * w).map(|i| (i % 5) as f32).collect();
        let lab: Vec<u8> = (0..h * w).map(|i| [0u8, 2, 3][i % 3]).collect();
        let (a, b) = augment(&img, &lab, h, w, seed).unwrap();
        prop_assert_eq!(a.len(), h * w);
        prop_assert!(b.iter().all(|l| [0u8, 2, 3].contains(l)));
        prop_assert_eq!(augment(&img, &lab, h, w, seed).unwrap(), (a, b));
    }

    #[test]
    fn sampled_angles_are_bounded(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = AugmentParams::sample(&mut rng);
        prop_assert!(p.angle_deg.abs() <= 20.0);
    }
}
