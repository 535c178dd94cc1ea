mod common;

use common::*;
use hydra_core::fusion::fuse;
use hydra_core::io::{
    decode, encode_hydra, encode_model, load_hydra, load_model, read_manifest, replace_manifest,
    save_hydra, save_model, Artifact,
};
use hydra_core::pruning::Member;
use hydra_core::{Error, FormatError, Model};
use rand::Rng;

fn bits(m: &Model<f64>) -> Vec<u64> {
    m.weights
        .named()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits()))
        .collect()
}

fn format_error(r: hydra_core::Result<Artifact<f64>>) -> FormatError {
    match r {
        Err(Error::Format(e)) => e,
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn models_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(31);
    for i in 0..100 {
        let cfg = random_config(&mut r);
        let mut m = random_model(cfg, &mut r);
        // Awkward values: subnormals, signed zero, extremes.
        let slot = m.weights.slots_mut().into_iter().next().unwrap();
        slot.data_mut()[0] = f64::MIN_POSITIVE / 3.0;
        if slot.len() > 1 {
            slot.data_mut()[1] = -0.0;
        }
        let path = dir.path().join(format!("m{i}.bin"));
        save_model(&m, &path).unwrap();
        let back: Model<f64> = load_model(&path).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(encode_model(&back).unwrap(), encode_model(&m).unwrap());
    }
}

#[test]
fn hydra_models_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(32);
    for i in 0..20 {
        let cfg = random_config(&mut r);
        let base = random_model(cfg, &mut r);
        let count = r.random_range(1..=3);
        let members: Vec<Member<f64>> = (0..count)
            .map(|_| Member {
                mask: random_mask(&cfg, &mut r),
                model: base.clone(),
            })
            .collect();
        let h = fuse(&base, &members).unwrap();
        let path = dir.path().join(format!("h{i}.bin"));
        save_hydra(&h, &path).unwrap();
        let back = load_hydra::<f64>(&path).unwrap();
        assert_eq!(back, h);
        assert_eq!(encode_hydra(&back).unwrap(), encode_hydra(&h).unwrap());
    }
}

#[test]
fn single_precision_survives_the_container() {
    let mut r = rng(33);
    let cfg = random_config(&mut r);
    let m = random_model(cfg, &mut r);
    let small = Model::<f32> {
        config: cfg,
        weights: m.weights.map(|t| t.cast::<f32>()),
    };
    let bytes = encode_model(&small).unwrap();
    match decode::<f32>(&bytes).unwrap() {
        Artifact::Model(back) => assert_eq!(back, small),
        Artifact::Hydra(_) => panic!("wrong kind"),
    }
}

fn sample_bytes() -> Vec<u8> {
    let mut r = rng(34);
    let cfg = random_config(&mut r);
    encode_model(&random_model(cfg, &mut r)).unwrap()
}

#[test]
fn bad_magic_is_named() {
    let mut bytes = sample_bytes();
    bytes[0] = b'X';
    assert!(matches!(
        format_error(decode(&bytes)),
        FormatError::BadMagic { .. }
    ));
}

#[test]
fn truncated_payload_reports_both_lengths() {
    let bytes = sample_bytes();
    let e = format_error(decode(&bytes[..bytes.len() - 1]));
    match e {
        FormatError::PayloadLength { expected, actual } => assert_eq!(expected, actual + 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn overlapping_offset_names_the_tensor() {
    let bytes = sample_bytes();
    let mut manifest = read_manifest(&bytes).unwrap();
    let name = manifest.tensors[2].name.clone();
    manifest.tensors[2].offset -= 8;
    let e = format_error(decode(&replace_manifest(&bytes, &manifest).unwrap()));
    match e {
        FormatError::Overlap { tensor, .. } => assert_eq!(tensor, name),
        other => panic!("{other:?}"),
    }
}

#[test]
fn other_manifest_corruptions_are_rejected() {
    let bytes = sample_bytes();
    let base = read_manifest(&bytes).unwrap();

    let mut gap = base.clone();
    gap.tensors[1].offset += 8;
    assert!(matches!(
        format_error(decode(&replace_manifest(&bytes, &gap).unwrap())),
        FormatError::Gap { .. }
    ));

    let mut missing = base.clone();
    missing.tensors.pop();
    assert!(matches!(
        format_error(decode(&replace_manifest(&bytes, &missing).unwrap())),
        FormatError::MissingTensor(_)
    ));

    let mut count = base.clone();
    count.tensors[0].count += 1;
    assert!(matches!(
        format_error(decode(&replace_manifest(&bytes, &count).unwrap())),
        FormatError::ElementCount { .. }
    ));

    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(
        format_error(decode(&extra)),
        FormatError::PayloadLength { .. }
    ));
}

#[test]
fn loading_the_wrong_kind_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let mut r = rng(35);
    save_model(&random_model(random_config(&mut r), &mut r), &path).unwrap();
    assert!(load_hydra::<f64>(&path).is_err());
}
