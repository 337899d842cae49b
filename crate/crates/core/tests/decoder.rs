//! Naive head and cascaded upsampler wiring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transunet_core::nn::decoder::reshape_hidden;
use transunet_core::nn::{CupBlock, Decoder, Initializer, ModelConfig, Parameters, TransUnet, Variant};
use transunet_core::{Error, Tape, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn reshape_hidden_inverts_row_major_flatten() {
    let grid = random(&[5, 3, 4], 1);
    let seq = Tensor::from_fn(&[12, 5], |i| grid.data()[(i % 5) * 12 + i / 5]);
    let mut tape = Tape::inference();
    let z = tape.constant(seq);
    let g = reshape_hidden(&mut tape, z, (3, 4)).unwrap();
    assert_eq!(tape.value(g), &grid);

    let z = tape.constant(Tensor::zeros(&[196, 768]));
    let g = reshape_hidden(&mut tape, z, (14, 14)).unwrap();
    assert_eq!(tape.shape(g), [768, 14, 14]);
    let z = tape.constant(Tensor::zeros(&[16, 8]));
    let g = reshape_hidden(&mut tape, z, (4, 4)).unwrap();
    assert_eq!(tape.shape(g), [8, 4, 4]);
    let z = tape.constant(Tensor::zeros(&[15, 8]));
    assert!(matches!(reshape_hidden(&mut tape, z, (4, 4)), Err(Error::Contract(_))));
}

fn decode(dec: &Decoder<f64>, z: &Tensor<f64>, grid: (usize, usize), out: (usize, usize), skips: Option<[Tensor<f64>; 3]>) -> Tensor<f64> {
    let mut tape = Tape::inference();
    let zv = tape.constant(z.clone());
    let sv = skips.map(|s| s.map(|t| tape.constant(t)));
    let y = dec.forward(&mut tape, zv, grid, out, sv).unwrap();
    tape.value(y).clone()
}

#[test]
fn naive_head_output_and_constant_features() {
    let cfg = ModelConfig::base().with_variant(Variant::VitNone);
    let dec = Decoder::<f64>::new(&mut Initializer::new(1), &cfg);
    let y = decode(&dec, &random(&[196, 768], 2), (14, 14), (224, 224), None);
    assert_eq!(y.shape(), [9, 224, 224]);

    let cfg = ModelConfig::tiny().with_variant(Variant::VitNone);
    let dec = Decoder::<f64>::new(&mut Initializer::new(3), &cfg);
    let row = random(&[1, cfg.hidden], 4);
    let z = Tensor::from_fn(&[16, cfg.hidden], |i| row.data()[i % cfg.hidden]);
    let y = decode(&dec, &z, (4, 4), (64, 64), None);
    for plane in y.data().chunks(64 * 64) {
        assert!(plane.iter().all(|&v| (v - plane[0]).abs() < 1e-12));
    }
}

#[test]
fn naive_head_gradient_reaches_conv() {
    let cfg = ModelConfig::tiny().with_variant(Variant::VitNone);
    let dec = Decoder::<f64>::new(&mut Initializer::new(5), &cfg);
    let Decoder::Naive { head } = &dec else { panic!("naive decoder expected") };
    let mut tape = Tape::new();
    let z = tape.constant(random(&[16, cfg.hidden], 6));
    let y = dec.forward(&mut tape, z, (4, 4), (64, 64), None).unwrap();
    let sq = tape.mul(y, y).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.param_grad(&head.weight).unwrap().iter().any(|&g| g != 0.0));
}

fn tiny_skips(cfg: &ModelConfig, seed: u64) -> [Tensor<f64>; 3] {
    let w = cfg.backbone_widths;
    let (h, ww) = (cfg.height, cfg.width);
    [
        random(&[w[0], h / 2, ww / 2], seed),
        random(&[w[1], h / 4, ww / 4], seed + 1),
        random(&[w[2], h / 8, ww / 8], seed + 2),
    ]
}

#[test]
fn cup_doubles_every_block_and_reaches_full_resolution() {
    for variant in [Variant::VitCup, Variant::HybridCup, Variant::TransUnet] {
        let cfg = ModelConfig::tiny().with_variant(variant);
        let dec = Decoder::<f64>::new(&mut Initializer::new(7), &cfg);
        let Decoder::Cup { blocks, .. } = &dec else { panic!() };
        assert_eq!(blocks.len(), 4);
        let skips = (cfg.skip_count > 0).then(|| tiny_skips(&cfg, 8));
        let mut tape = Tape::inference();
        let mut h = tape.constant(random(&[cfg.hidden, 4, 4], 9));
        let sv = skips.map(|s| s.map(|t| tape.constant(t)));
        for b in blocks {
            let prev = tape.shape(h).to_vec();
            let skip = (b.skip_channels > 0).then(|| sv.unwrap()[b.exponent as usize - 1]);
            h = b.forward(&mut tape, h, skip).unwrap();
            assert_eq!(tape.shape(h)[1..], [prev[1] * 2, prev[2] * 2]);
        }
        assert_eq!(tape.shape(h)[1..], [64, 64]);
    }
}

#[test]
fn base_scale_pipeline_shape() {
    let cfg = ModelConfig::base();
    let dec = Decoder::<f64>::new(&mut Initializer::new(10), &cfg);
    let skips = [
        Tensor::zeros(&[cfg.backbone_widths[0], 112, 112]),
        Tensor::zeros(&[cfg.backbone_widths[1], 56, 56]),
        Tensor::zeros(&[cfg.backbone_widths[2], 28, 28]),
    ];
    let y = decode(&dec, &Tensor::zeros(&[196, 768]), (14, 14), (224, 224), Some(skips));
    assert_eq!(y.shape(), [9, 224, 224]);
}

#[test]
fn one_skip_attaches_only_at_quarter_scale() {
    let mut cfg = ModelConfig::tiny();
    cfg.skip_count = 1;
    let dec = Decoder::<f64>::new(&mut Initializer::new(11), &cfg);
    let Decoder::Cup { blocks, .. } = &dec else { panic!() };
    let with_skip: Vec<u32> = blocks.iter().filter(|b| b.skip_channels > 0).map(|b| b.exponent).collect();
    assert_eq!(with_skip, [2]);
}

/// Zero skip tensors must match an architecture whose skip-path conv columns are zero.
#[test]
fn zero_skips_match_zeroed_skip_columns() {
    let cfg = ModelConfig::tiny();
    let dec = Decoder::<f64>::new(&mut Initializer::new(12), &cfg);
    let Decoder::Cup { blocks, head } = &dec else { panic!() };
    let z = random(&[16, cfg.hidden], 13);
    let zero_skips = tiny_skips(&cfg, 14).map(|t| Tensor::zeros(t.shape()));
    let a = decode(&dec, &z, (4, 4), (64, 64), Some(zero_skips));

    // Same weights with random skips, but every conv input column reading a skip channel zeroed.
    let zeroed_blocks: Vec<CupBlock<f64>> = blocks
        .iter()
        .map(|b| {
            let mut b = b.clone();
            let ws = b.conv.weight.shape().to_vec();
            let (cout, cin, k) = (ws[0], ws[1], ws[2] * ws[3]);
            let first_skip = cin - b.skip_channels;
            let data = b.conv.weight.data_mut();
            for o in 0..cout {
                for c in first_skip..cin {
                    data[(o * cin + c) * k..(o * cin + c + 1) * k].fill(0.0);
                }
            }
            b
        })
        .collect();
    let zeroed = Decoder::Cup { blocks: zeroed_blocks, head: head.clone() };
    let b = decode(&zeroed, &z, (4, 4), (64, 64), Some(tiny_skips(&cfg, 14)));
    assert_eq!(a, b);
}

#[test]
fn skips_influence_output_only_when_attached() {
    let cfg = ModelConfig::tiny();
    let dec = Decoder::<f64>::new(&mut Initializer::new(15), &cfg);
    let z = random(&[16, cfg.hidden], 16);
    let a = decode(&dec, &z, (4, 4), (64, 64), Some(tiny_skips(&cfg, 17)));
    let b = decode(&dec, &z, (4, 4), (64, 64), Some(tiny_skips(&cfg, 18)));
    assert!(a.max_abs_diff(&b) > 1e-6);

    let cfg0 = ModelConfig::tiny().with_variant(Variant::HybridCup);
    let dec0 = Decoder::<f64>::new(&mut Initializer::new(15), &cfg0);
    let a = decode(&dec0, &z, (4, 4), (64, 64), Some(tiny_skips(&cfg, 17)));
    let b = decode(&dec0, &z, (4, 4), (64, 64), None);
    assert_eq!(a, b);
}

#[test]
fn mismatched_skip_names_its_scale() {
    let cfg = ModelConfig::tiny();
    let dec = Decoder::<f64>::new(&mut Initializer::new(19), &cfg);
    let mut skips = tiny_skips(&cfg, 20);
    skips[1] = Tensor::zeros(&[cfg.backbone_widths[1], 15, 16]);
    let mut tape = Tape::inference();
    let z = tape.constant(Tensor::zeros(&[16, cfg.hidden]));
    let sv = skips.map(|t| tape.constant(t));
    let err = dec.forward(&mut tape, z, (4, 4), (64, 64), Some(sv)).unwrap_err();
    let Error::Config(msg) = err else { panic!("{err:?}") };
    assert!(msg.contains("1/4"), "{msg}");
}

#[test]
fn argmax_labelmap_matches_input_extents() {
    for variant in Variant::ALL {
        let cfg = ModelConfig::tiny().with_variant(variant);
        let model = TransUnet::<f32>::new(cfg.clone(), 21).unwrap();
        let logits = model.predict(&Tensor::zeros(&[1, 64, 64])).unwrap();
        assert_eq!(logits.shape(), [cfg.num_classes, 64, 64]);
        let vol = transunet_core::metrics::stack_slices(&[logits], Default::default()).unwrap();
        assert_eq!(vol.extents, [1, 64, 64]);
    }
}

#[test]
fn model_rejects_wrong_input_shape() {
    let model = TransUnet::<f32>::new(ModelConfig::tiny(), 22).unwrap();
    assert!(matches!(model.predict(&Tensor::zeros(&[1, 32, 64])), Err(Error::Config(_))));
    assert!(model.parameter_count() > 0);
}
