use proptest::prelude::*;

use nluqa_models::position::relative_position_bucket;
use nluqa_models::t5::backend::{truncate_left, truncate_right};

proptest! {
    #[test]
    fn truncation_respects_the_budget(ids in prop::collection::vec(2u32..100, 0..60), max in 2usize..40) {
        let (left, cut_left) = truncate_left(&ids, max, 1);
        let (right, cut_right) = truncate_right(&ids, max, 1);
        prop_assert!(left.len() <= max && right.len() <= max);
        prop_assert_eq!(cut_left, ids.len() + 1 > max);
        prop_assert_eq!(cut_right, cut_left);
        prop_assert_eq!(left.last(), Some(&1));
        // The left cut keeps the tail, the right cut keeps the head.
        prop_assert!(ids.ends_with(&left[..left.len() - 1]));
        prop_assert!(ids.starts_with(&right[..right.len() - 1]));
    }

    #[test]
    fn buckets_are_in_range_and_sign_split(rp in -5000i64..5000, buckets in prop::sample::select(vec![8usize, 16, 32]), max_distance in prop::sample::select(vec![16usize, 128])) {
        let bi = relative_position_bucket(rp, true, buckets, max_distance);
        prop_assert!(bi < buckets);
        prop_assert_eq!(bi >= buckets / 2, rp > 0);
        let causal = relative_position_bucket(rp, false, buckets, max_distance);
        prop_assert!(causal < buckets);
        if rp >= 0 {
            prop_assert_eq!(causal, 0);
        }
    }
}
