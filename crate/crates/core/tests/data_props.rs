use lightnet::data::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, preprocess, DataError, IdxImages, Split,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn idx_images_round_trip(count in 0usize..8, rows in 1usize..10, cols in 1usize..10, seed in any::<u8>()) {
        let pixels = (0..count * rows * cols).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let images = IdxImages { count, rows, cols, pixels };
        let bytes = encode_idx_images(&images);
        prop_assert_eq!(bytes.len(), 16 + count * rows * cols);
        let parsed = parse_idx_images(&bytes).unwrap();
        prop_assert_eq!(&parsed, &images);
        prop_assert_eq!(encode_idx_images(&parsed), bytes);
    }

    #[test]
    fn idx_labels_round_trip(labels in prop::collection::vec(0u8..10, 0..50)) {
        let bytes = encode_idx_labels(&labels);
        prop_assert_eq!(parse_idx_labels(&bytes).unwrap(), labels);
    }

    #[test]
    fn any_cut_or_extension_is_rejected(labels in prop::collection::vec(0u8..10, 1..20), cut in 1usize..5) {
        let bytes = encode_idx_labels(&labels);
        let short = &bytes[..bytes.len() - cut];
        let truncated = matches!(parse_idx_labels(short), Err(DataError::Truncated { .. }));
        prop_assert!(truncated);
        let mut long = bytes.clone();
        long.extend(std::iter::repeat_n(0u8, cut));
        let trailing = matches!(parse_idx_labels(&long), Err(DataError::TrailingData { .. }));
        prop_assert!(trailing);
    }
}

#[test]
fn preprocessed_pixels_stay_in_unit_interval() {
    let images = IdxImages { count: 2, rows: 1, cols: 3, pixels: vec![0, 128, 255, 1, 2, 254] };
    let set = preprocess(&images, &[4, 9], Split::Train).unwrap();
    assert!(set.images().iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(set.images()[[0, 2]], 1.0);
    assert_eq!(set.labels(), &[4, 9]);
}
