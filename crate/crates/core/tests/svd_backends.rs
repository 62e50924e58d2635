//! Truncated SVD backends against the dense reference.

use mfbd_core::linalg::orthonormalize;
use mfbd_core::metrics::subspace_angles;
use mfbd_core::subspace::{svd_truncated, SvdBackend, SvdBackendChoice};
use mfbd_core::synth::{generate_sequence, SequenceSpec};
use mfbd_core::testimages::scene;
use mfbd_core::{ObservationSet, Shape2};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `200 x 500`, rank 20, singular values 100 down to 10.
fn rank_20(seed: u64) -> ObservationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = orthonormalize(DMatrix::from_fn(200, 20, |_, _| rng.random::<f64>() - 0.5));
    let v = orthonormalize(DMatrix::from_fn(500, 20, |_, _| rng.random::<f64>() - 0.5));
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(20, |i, _| 100.0 * 0.1f64.powf(i as f64 / 19.0)));
    let a = u * s * v.transpose();
    ObservationSet::from_columns(Shape2::of(10, 20), a.as_slice().to_vec()).unwrap()
}

#[test]
fn randomized_matches_dense() {
    for seed in 0..3 {
        let y = rank_20(seed);
        let dense = svd_truncated(&y, &SvdBackendChoice::new(SvdBackend::Dense, 20)).unwrap();
        let mut choice = SvdBackendChoice::new(SvdBackend::Randomized, 20);
        choice.oversampling = 10;
        choice.power_iterations = 2;
        choice.block_bytes = Some(8 * 200 * 37);
        let rand = svd_truncated(&y, &choice).unwrap();
        for (a, b) in rand.s.iter().zip(&dense.s) {
            assert!((a - b).abs() < 1e-6 * b, "singular values {a} vs {b}");
        }
        let angles = subspace_angles(&rand.v, &dense.v).unwrap();
        assert!(angles.iter().all(|&t| t < 1e-4), "angles {angles:?}");
    }
}

#[test]
fn single_pass_matches_dense_on_noise_free_sequence() {
    let psf = Shape2::of(5, 5);
    let mut spec = SequenceSpec::new(scene(Shape2::of(32, 32)), psf, 10, 400, 0.0);
    spec.seed = 5;
    let (y, _) = generate_sequence(&spec).unwrap();
    let dense = svd_truncated(&y, &SvdBackendChoice::new(SvdBackend::Dense, 10)).unwrap();
    let single = svd_truncated(&y, &SvdBackendChoice::new(SvdBackend::SinglePass, 10)).unwrap();
    let angles = subspace_angles(&single.v, &dense.v).unwrap();
    assert!(angles.iter().all(|&t| t < 1e-6), "angles {angles:?}");
}
