use tempfile::tempdir;
use transunet::checkpoint::{load_with_config, Checkpoint};
use transunet::error::{Category, Error};
use transunet_core::nn::{ModelConfig, Parameters, TransUnet, Variant};
use transunet_core::{Error as CoreError, Tensor};

fn small() -> ModelConfig {
    let mut c = ModelConfig::tiny();
    for (k, v) in [("resolution", "32"), ("hidden", "16"), ("mlp_dim", "32"), ("heads", "2"), ("layers", "1")] {
        c.set(k, v).unwrap();
    }
    c
}

fn probe(c: &ModelConfig) -> Tensor<f32> {
    Tensor::from_fn(&[c.in_channels, c.height, c.width], |i| ((i * 37 % 101) as f32 / 50.0) - 1.0)
}

#[test]
fn save_load_save_is_byte_identical_and_probe_logits_match() {
    let cfg = small();
    let model = TransUnet::<f32>::new(cfg.clone(), 11).unwrap();
    let dir = tempdir().unwrap();
    let path = dir.path().join("m.tuckpt");
    let first = Checkpoint::from_model(&model, 42, 11);
    first.save(&path).unwrap();

    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, first);
    assert_eq!((loaded.iteration, loaded.seed), (42, 11));
    let rebuilt: TransUnet<f32> = loaded.build_model().unwrap();
    assert_eq!(rebuilt.config, cfg);
    assert_eq!(Checkpoint::from_model(&rebuilt, 42, 11).encode(), std::fs::read(&path).unwrap());

    let x = probe(&cfg);
    let (a, b) = (model.predict(&x).unwrap(), rebuilt.predict(&x).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn every_variant_roundtrips() {
    for v in Variant::ALL {
        let cfg = small().with_variant(v);
        let model = TransUnet::<f64>::new(cfg, 3).unwrap();
        let ck = Checkpoint::from_model(&model, 0, 3);
        let back = Checkpoint::decode(std::path::Path::new("mem"), &ck.encode()).unwrap();
        let m2: TransUnet<f64> = back.build_model().unwrap();
        assert_eq!(m2.named_parameters(), model.named_parameters(), "{v}");
    }
}

#[test]
fn corrupted_manifest_is_a_parse_error() {
    let model = TransUnet::<f32>::new(small(), 1).unwrap();
    let bytes = Checkpoint::from_model(&model, 0, 1).encode();
    let text_end = bytes.windows(8).position(|w| w == b"payload ").unwrap();
    let p = std::path::Path::new("mem");

    let mut broken = bytes.clone();
    let at = bytes.windows(6).position(|w| w == b"param ").unwrap();
    broken[at..at + 5].copy_from_slice(b"parax");
    assert!(matches!(Checkpoint::decode(p, &broken), Err(Error::Parse { offset, .. }) if offset == at));

    let mut broken = bytes.clone();
    broken[3] = b'X';
    assert!(matches!(Checkpoint::decode(p, &broken), Err(Error::Parse { offset: 0, .. })));

    // A shape that disagrees with its element count.
    let text = String::from_utf8_lossy(&bytes[..text_end]).replacen(",1,", ",2,", 1);
    let mut broken = text.into_bytes();
    broken.extend_from_slice(&bytes[text_end..]);
    assert!(matches!(Checkpoint::decode(p, &broken), Err(Error::Parse { .. })));

    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 1);
    assert!(matches!(Checkpoint::decode(p, &truncated), Err(Error::Integrity { .. })));
}

#[test]
fn architecture_mismatch_is_a_compatibility_error() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("m.tuckpt");
    Checkpoint::from_model(&TransUnet::<f32>::new(small(), 1).unwrap(), 0, 1).save(&path).unwrap();
    let mut other = small();
    other.set("decoder_widths", "8,8,4,4").unwrap();
    let err = load_with_config::<f32>(&path, other).unwrap_err();
    assert_eq!(err.category(), Category::Config);
    assert!(err.to_string().contains("decoder.blocks.0"), "{err}");
    assert!(matches!(load_with_config::<f32>(&dir.path().join("absent"), small()), Err(Error::Io { .. })));
}

#[test]
fn large_checkpoint_into_base_names_first_mismatched_parameter() {
    let to_vit = |mut c: ModelConfig| {
        c.apply_variant(Variant::VitCup);
        c
    };
    let large = TransUnet::<f32>::new(to_vit(ModelConfig::large()), 0).unwrap();
    let ck = Checkpoint::from_model(&large, 0, 0);
    drop(large);
    let mut base = TransUnet::<f32>::new(to_vit(ModelConfig::base()), 0).unwrap();
    let err = ck.load_into(&mut base).unwrap_err();
    let Error::Core(CoreError::Compatibility(msg)) = &err else { panic!("{err}") };
    let first = base.named_parameters().into_iter().zip(&ck.params).find(|((n, t), e)| *n != e.name || t.shape() != e.shape);
    let ((name, _), _) = first.expect("architectures differ");
    assert!(msg.contains(&format!("'{name}'")), "{msg}");
    assert!(msg.contains("768") && msg.contains("1024"), "{msg}");
}

#[test]
fn cross_precision_load() {
    let m64 = TransUnet::<f64>::new(small(), 5).unwrap();
    let ck = Checkpoint::from_model(&m64, 0, 5);
    let m32: TransUnet<f32> = ck.build_model().unwrap();
    assert_eq!(m32, m64.cast::<f32>());
}
