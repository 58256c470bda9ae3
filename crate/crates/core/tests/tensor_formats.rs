mod common;

use common::formats::{worst_error, TOLERANCE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topotensor::tensor::{concatenate, cp_reconstruct, tucker_reconstruct, CpWeight, DenseTensor};

#[test]
fn low_rank_contraction_matches_dense_for_every_format() {
    for (format, name) in ["cp", "tucker", "tt"].iter().enumerate() {
        let err = worst_error(format, 100, 40 + format as u64);
        assert!(err < TOLERANCE, "{name}: relative error {err:e}");
    }
}

#[test]
fn cp_as_tucker_reconstructs_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let w = CpWeight::random(&[3, 4, 2], 3, &mut rng);
        let a = cp_reconstruct(&w);
        let b = tucker_reconstruct(&w.to_tucker());
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn concatenate_then_slice_is_identity(rows in 1usize..4, cols in 1usize..4, count in 1usize..4, pos in 0usize..3) {
        let ts: Vec<DenseTensor> = (0..count)
            .map(|k| DenseTensor::from_fn(&[rows, cols], |i| (k * 100 + i[0] * 10 + i[1]) as f64))
            .collect();
        let c = concatenate(&ts, pos).unwrap();
        for (k, t) in ts.iter().enumerate() {
            prop_assert_eq!(&c.index_axis(pos, k), t);
        }
    }
}
