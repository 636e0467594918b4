// SPDX-License-Identifier: Apache-2.0

use gs_bias::io::{self, ClassEmbeddingSet, GsbeFile, SampleRecord};
use gs_bias::spatial::GridShape;
use gs_bias::Error;
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO
}

fn class_set() -> impl Strategy<Value = ClassEmbeddingSet> {
    (2usize..6, 1usize..8).prop_flat_map(|(c, d)| {
        (
            prop::collection::vec(finite_f32(), c * d),
            prop::collection::hash_set("[a-z\u{e9}\u{4e2d} ]{1,12}", c),
        )
            .prop_map(move |(values, names)| {
                ClassEmbeddingSet::new(d, values, names.into_iter().collect()).unwrap()
            })
    })
}

fn sample() -> impl Strategy<Value = SampleRecord> {
    (1usize..5, 1usize..6, 1usize..4, 1usize..4, prop::option::of(0usize..1000)).prop_flat_map(
        |(n, d, w, h, label)| {
            (
                prop::collection::vec(finite_f32(), n * d),
                prop::collection::vec(finite_f32(), w * h * d),
            )
                .prop_map(move |(views, spatial)| {
                    SampleRecord::new(n, d, GridShape::new(w, h), views, spatial, label).unwrap()
                })
        },
    )
}

fn bits(values: &[f32]) -> Vec<u32> {
    values.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn class_files_round_trip_bit_exact(set in class_set()) {
        let bytes = io::encode_class_set(&set).unwrap();
        let back = io::decode_class_set(&bytes).unwrap();
        prop_assert_eq!(bits(back.embeddings()), bits(set.embeddings()));
        prop_assert_eq!(back.names(), set.names());
        prop_assert_eq!(io::encode_class_set(&back).unwrap(), bytes);
    }

    #[test]
    fn sample_files_round_trip_bit_exact(rec in sample()) {
        let bytes = io::encode_sample(&rec).unwrap();
        let back = io::decode_sample(&bytes).unwrap();
        prop_assert_eq!(bits(back.view_features()), bits(rec.view_features()));
        prop_assert_eq!(bits(back.spatial_features()), bits(rec.spatial_features()));
        prop_assert_eq!(back.label(), rec.label());
        prop_assert_eq!(back.grid(), rec.grid());
        prop_assert_eq!(io::encode_sample(&back).unwrap(), bytes);
    }

    #[test]
    fn every_prefix_is_truncated_never_a_panic(rec in sample()) {
        let bytes = io::encode_sample(&rec).unwrap();
        for cut in 0..bytes.len() {
            let err = io::decode_sample(&bytes[..cut]).unwrap_err();
            prop_assert!(matches!(err, Error::TruncatedFile { .. }), "cut {}: {:?}", cut, err);
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = io::decode_any(&bytes);
        let mut framed = b"GSBE\x01\0\0\0".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = io::decode_any(&framed);
    }
}

#[test]
fn file_round_trip_and_rewrite_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let set = ClassEmbeddingSet::new(2, vec![1.0, 0.0, 0.0, 1.0], vec!["x".into(), "y".into()]).unwrap();
    let a = dir.path().join("a.gsbe");
    let b = dir.path().join("b.gsbe");
    io::write_class_file(&set, &a).unwrap();
    io::write_class_file(&io::read_class_file(&a).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(matches!(io::read_any_file(&a).unwrap(), GsbeFile::Classes(_)));
}

#[test]
fn malformed_files_report_named_errors() {
    let dir = tempfile::tempdir().unwrap();
    let rec = SampleRecord::new(2, 2, GridShape::new(2, 1), vec![1.0; 4], vec![2.0; 4], Some(0)).unwrap();
    let good = io::encode_sample(&rec).unwrap();
    let path = dir.path().join("s.gsbe");

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    std::fs::write(&path, &bad_magic).unwrap();
    let err = io::read_sample_file(&path).unwrap_err();
    assert!(matches!(err.root(), Error::BadMagic(_)));
    assert!(err.to_string().contains("s.gsbe"));

    std::fs::write(&path, &good[..good.len() - 3]).unwrap();
    let err = io::read_sample_file(&path).unwrap_err();
    assert!(matches!(err.root(), Error::TruncatedFile { .. }));

    // header claims a 3x1 grid but only 2 spatial rows follow
    let mut wrong_grid = good.clone();
    wrong_grid[20] = 3;
    std::fs::write(&path, &wrong_grid).unwrap();
    assert!(matches!(io::read_sample_file(&path).unwrap_err().root(), Error::TruncatedFile { .. }));

    // header claims a 1x1 grid, leaving a spatial row unaccounted for
    let mut wrong_grid = good.clone();
    wrong_grid[20] = 1;
    std::fs::write(&path, &wrong_grid).unwrap();
    assert!(matches!(io::read_sample_file(&path).unwrap_err().root(), Error::InvalidRecord(_)));

    let mut bad_label = good.clone();
    bad_label[28..32].copy_from_slice(&(-7i32).to_le_bytes());
    assert!(matches!(io::decode_sample(&bad_label), Err(Error::InvalidRecord(_))));

    let missing = dir.path().join("nope.gsbe");
    let err = io::read_class_file(&missing).unwrap_err();
    assert_eq!(err.kind_name(), "IoFailure");
    assert!(err.to_string().contains("nope.gsbe"));
}

#[test]
fn zero_dimension_and_single_class_rejected() {
    let mut bytes = b"GSBE\x01\0\0\0\x01\0\0\0".to_vec();
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&1.0f32.to_le_bytes());
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.push(b'a');
    assert!(matches!(io::decode_class_set(&bytes), Err(Error::InvalidRecord(_))));
}
