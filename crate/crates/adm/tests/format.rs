use adm::format::{decode, encode, MAGIC};
use adm::Error;
use adm_core::{DescriptorSet, LabeledClass, LabeledDataset};
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = LabeledDataset> {
    (1usize..5, prop::collection::btree_set(any::<u32>(), 1..5)).prop_flat_map(|(c, ids)| {
        let ids: Vec<u32> = ids.into_iter().collect();
        let classes = ids
            .into_iter()
            .map(move |id| {
                prop::collection::vec(
                    (1usize..6).prop_flat_map(move |n| {
                        prop::collection::vec(
                            any::<f32>().prop_filter("finite", |v| v.is_finite()),
                            n * c,
                        )
                    }),
                    1..4,
                )
                .prop_map(move |imgs| LabeledClass {
                    id,
                    images: imgs
                        .into_iter()
                        .map(|v| {
                            let n = v.len() / c;
                            DescriptorSet::new(n, c, v.into_iter().map(f64::from).collect())
                                .unwrap()
                        })
                        .collect(),
                })
            })
            .collect::<Vec<_>>();
        classes.prop_map(|cl| LabeledDataset::new(cl).unwrap())
    })
}

proptest! {
    #[test]
    fn encode_decode_round_trip(ds in dataset_strategy()) {
        let bytes = encode(&ds).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn every_truncation_is_rejected(ds in dataset_strategy(), cut in 0usize..1000) {
        let bytes = encode(&ds).unwrap();
        let cut = cut % bytes.len();
        prop_assert!(matches!(decode(&bytes[..cut]), Err(Error::Format(_))));
    }
}

#[test]
fn header_layout_is_little_endian() {
    let ds = LabeledDataset::new(vec![LabeledClass {
        id: 0x0102_0304,
        images: vec![DescriptorSet::new(1, 1, vec![1.0]).unwrap()],
    }])
    .unwrap();
    let b = encode(&ds).unwrap();
    assert_eq!(&b[..4], MAGIC);
    assert_eq!(&b[4..8], &[1, 0, 0, 0]);
    assert_eq!(&b[8..12], &[1, 0, 0, 0]);
    assert_eq!(&b[12..16], &[4, 3, 2, 1]);
    for field in [16..20, 20..24, 24..28] {
        assert_eq!(&b[field], &[1, 0, 0, 0]);
    }
    assert_eq!(&b[28..], &1.0f32.to_le_bytes());
}

#[test]
fn empty_class_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("never.admd");
    let built = LabeledDataset::new(vec![LabeledClass {
        id: 0,
        images: vec![],
    }]);
    assert!(built.is_err());
    assert!(!path.exists());
}

#[test]
fn save_to_unwritable_path_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = LabeledDataset::new(vec![LabeledClass {
        id: 0,
        images: vec![DescriptorSet::new(1, 1, vec![1.0]).unwrap()],
    }])
    .unwrap();
    let err = adm::save_dataset(&ds, dir.path().join("no/such/dir/x.admd")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 3);
}
