use lesionkit::bundle::{list_bundles, load_bundle, save_bundle, CaseBundle, MANIFEST_FILE};
use lesionkit::{Error, Tensor};
use std::fs;

fn sample() -> CaseBundle {
    let mut b = CaseBundle::new("case_7").with_label(1);
    b.insert("image", Tensor::from_fn2(5, 4, |r, c| (r * 4 + c) as f64 / 19.0 + 1e-3).unwrap());
    b.insert("text_embedding", Tensor::vector(vec![0.1, -0.2, 0.3]).unwrap());
    b.metadata.insert("spacing_mm".into(), "0.1".into());
    b
}

fn edit_manifest(dir: &std::path::Path, from: &str, to: &str) {
    let p = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.contains(from));
    fs::write(&p, text.replacen(from, to, 1)).unwrap();
}

#[test]
fn round_trip_at_storage_precision() {
    let dir = tempfile::tempdir().unwrap();
    let b = sample();
    save_bundle(&b, dir.path().join("a")).unwrap();
    let back = load_bundle(dir.path().join("a")).unwrap();
    assert_eq!(back.case_id, b.case_id);
    assert_eq!(back.label, b.label);
    assert_eq!(back.metadata, b.metadata);
    for (name, t) in &b.tensors {
        assert_eq!(back.get(name).unwrap(), &t.to_storage_precision(), "{name}");
    }
    save_bundle(&back, dir.path().join("b")).unwrap();
    for f in ["manifest.json", "image.bin", "text_embedding.bin"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
    assert_eq!(list_bundles(dir.path()).unwrap().len(), 2);
}

#[test]
fn truncated_payload_is_a_byte_count_error() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&sample(), dir.path()).unwrap();
    let bin = dir.path().join("image.bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&bin, bytes).unwrap();
    match load_bundle(dir.path()) {
        Err(Error::ByteCount { tensor, expected, actual }) => {
            assert_eq!((tensor.as_str(), expected, actual), ("image", 80, 76));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn non_finite_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&sample(), dir.path()).unwrap();
    let bin = dir.path().join("text_embedding.bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes[4..8].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&bin, bytes).unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(Error::NonFinite { index: 1, .. })));
}

#[test]
fn unsupported_manifest_fields_are_rejected() {
    for (from, to) in [
        ("\"f32\"", "\"f64\""),
        ("\"little\"", "\"big\""),
        ("\"row-major\"", "\"col-major\""),
        ("\"image.bin\"", "\"../image.bin\""),
    ] {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&sample(), dir.path()).unwrap();
        edit_manifest(dir.path(), from, to);
        assert!(matches!(load_bundle(dir.path()), Err(Error::Manifest { .. })), "{to}");
    }
}

#[test]
fn non_finite_tensors_are_not_written() {
    let mut b = sample();
    b.insert("bad", Tensor::vector(vec![f64::INFINITY]).unwrap());
    let dir = tempfile::tempdir().unwrap();
    assert!(save_bundle(&b, dir.path()).is_err());
}
