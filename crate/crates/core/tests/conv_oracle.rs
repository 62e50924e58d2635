//! FFT convolutions against direct summation.

use mfbd_core::conv::{conv_circular, conv_full, conv_valid, conv_valid_adjoint};
use mfbd_core::{Image, Shape2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, shape: Shape2) -> Image {
    Image::from_fn(shape, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn direct_full(b: &Image, a: &Image) -> Image {
    let (bs, as_) = (b.shape(), a.shape());
    let out = bs.full(as_);
    Image::from_fn(out, |i, j| {
        let mut s = 0.0;
        for p in 0..as_.rows {
            for q in 0..as_.cols {
                if i >= p && j >= q && i - p < bs.rows && j - q < bs.cols {
                    s += a.get(p, q) * b.get(i - p, j - q);
                }
            }
        }
        s
    })
}

fn direct_valid(x: &Image, a: &Image) -> Image {
    let (xs, as_) = (x.shape(), a.shape());
    let out = xs.valid(as_).unwrap();
    Image::from_fn(out, |i, j| {
        let mut s = 0.0;
        for p in 0..as_.rows {
            for q in 0..as_.cols {
                s += a.get(p, q) * x.get(i + as_.rows - 1 - p, j + as_.cols - 1 - q);
            }
        }
        s
    })
}

fn direct_circular(x: &Image, a: &Image) -> Image {
    let (xs, as_) = (x.shape(), a.shape());
    Image::from_fn(xs, |i, j| {
        let mut s = 0.0;
        for p in 0..as_.rows {
            for q in 0..as_.cols {
                let r = (i + xs.rows - p) % xs.rows;
                let c = (j + xs.cols - q) % xs.cols;
                s += a.get(p, q) * x.get(r, c);
            }
        }
        s
    })
}

fn rel_err(got: &Image, want: &Image) -> f64 {
    assert_eq!(got.shape(), want.shape());
    got.max_abs_diff(want) / want.max_abs().max(1e-300)
}

#[test]
fn fft_modes_match_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let a = Shape2::of(rng.random_range(1..=7), rng.random_range(1..=7));
        let x = Shape2::of(
            rng.random_range(a.rows + 1..=32),
            rng.random_range(a.cols + 1..=32),
        );
        let xi = random_image(&mut rng, x);
        let ai = random_image(&mut rng, a);
        worst = worst.max(rel_err(&conv_valid(&xi, &ai).unwrap(), &direct_valid(&xi, &ai)));
        worst = worst.max(rel_err(&conv_full(&xi, &ai), &direct_full(&xi, &ai)));
        worst = worst.max(rel_err(&conv_circular(&xi, &ai).unwrap(), &direct_circular(&xi, &ai)));
    }
    assert!(worst < 1e-9, "worst relative error {worst:e}");
}

#[test]
fn full_convolution_is_associative() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let mut shape = || Shape2::of(rng.random_range(1..=7), rng.random_range(1..=7));
        let (sa, sb, sc) = (shape(), shape(), shape());
        let a = random_image(&mut rng, sa);
        let b = random_image(&mut rng, sb);
        let c = random_image(&mut rng, sc);
        let left = conv_full(&conv_full(&a, &b), &c);
        let right = conv_full(&a, &conv_full(&b, &c));
        assert!(rel_err(&left, &right) < 1e-9);
    }
}

#[test]
fn valid_of_full_equals_valid_of_valid() {
    // (x * a) * d restricted to the valid part equals x * (a *_full d)
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let x = random_image(&mut rng, Shape2::of(20, 17));
        let a = random_image(&mut rng, Shape2::of(4, 3));
        let d = random_image(&mut rng, Shape2::of(2, 3));
        let left = conv_valid(&conv_valid(&x, &a).unwrap(), &d).unwrap();
        let right = conv_valid(&x, &conv_full(&a, &d)).unwrap();
        assert!(rel_err(&left, &right) < 1e-9);
    }
}

#[test]
fn valid_adjoint_matches_inner_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let xs = Shape2::of(rng.random_range(6..=20), rng.random_range(6..=20));
        let sa = Shape2::of(rng.random_range(1..=5), rng.random_range(1..=5));
        let a = random_image(&mut rng, sa);
        let x = random_image(&mut rng, xs);
        let r = random_image(&mut rng, xs.valid(a.shape()).unwrap());
        let lhs = conv_valid(&x, &a).unwrap().dot(&r);
        let rhs = x.dot(&conv_valid_adjoint(&r, &a, xs).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
