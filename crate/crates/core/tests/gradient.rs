//! Analytic gradient of the likelihood against central differences.

use mfbd_core::linalg::orthonormalize;
use mfbd_core::mle::{grad_phi, phi};
use mfbd_core::subspace::SignalSubspace;
use mfbd_core::{Image, Shape2};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> (Image, SignalSubspace, Shape2) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_shape = Shape2::of(8, 8);
    let psf = Shape2::of(rng.random_range(2..=3), rng.random_range(2..=3));
    let y = x_shape.valid(psf).unwrap();
    let m = rng.random_range(1..=4);
    let g = DMatrix::from_fn(y.len(), m, |_, _| rng.random::<f64>() - 0.5);
    let mut lambda: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 10.0 + 0.1).collect();
    lambda.sort_by(|a, b| b.total_cmp(a));
    let s = SignalSubspace::new(y, orthonormalize(g), lambda, m, 100).unwrap();
    let x = Image::from_fn(x_shape, |_, _| rng.random::<f64>());
    (x, s, psf)
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..20 {
        let (x, s, psf) = instance(seed);
        let g = grad_phi(&x, &s, psf).unwrap();
        let h = 1e-5;
        let mut fd = Image::zeros(x.shape());
        for i in 0..x.shape().len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let d = (phi(&xp, &s, psf).unwrap() - phi(&xm, &s, psf).unwrap()) / (2.0 * h);
            fd.data_mut()[i] = d;
        }
        let diff = Image::new(x.shape(), g.data().iter().zip(fd.data()).map(|(a, b)| a - b).collect())
            .unwrap();
        let rel = diff.norm() / g.norm().max(fd.norm());
        assert!(rel < 1e-5, "seed {seed}: relative error {rel:e}");
    }
}
