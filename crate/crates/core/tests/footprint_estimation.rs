//! Footprint estimation and the solvers on small synthetic problems.

use mfbd_core::eigsolve::{
    estimate_footprint, estimate_footprint_sectioned, post_scale, power_refine, rayleigh_solve, FootprintConfig,
    MStarOperator, PowerConfig, RayleighConfig, SectionConfig,
};
use mfbd_core::linalg::{DenseSymmetric, SymmetricOperator};
use mfbd_core::metrics::ni_rms;
use mfbd_core::subspace::{identify_subspace, DimensionStrategy, SvdBackend, SvdBackendChoice};
use mfbd_core::synth::{generate_sequence, PsfProjection, SequenceSpec};
use mfbd_core::testimages::{scene, uniform_noise};
use mfbd_core::{Footprint, Image, ObservationSet, Shape2};
use nalgebra::DMatrix;

fn angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot.abs() / (na * nb)).min(1.0).acos()
}

fn one_d_sequence() -> (Image, ObservationSet, Footprint) {
    let truth = uniform_noise(Shape2::of(1, 40), 31);
    let h = Footprint::new(Shape2::of(1, 4), vec![true, false, true, true]).unwrap();
    let mut spec = SequenceSpec::new(truth.clone(), h.shape(), 3, 30, 0.0);
    spec.footprint = Some(h.clone());
    spec.projection = PsfProjection::Clip;
    spec.seed = 2;
    (truth, generate_sequence(&spec).unwrap().0, h)
}

#[test]
fn one_dimensional_gap_is_found() {
    let (truth, y, h) = one_d_sequence();
    let s = identify_subspace(&y, &SvdBackendChoice::new(SvdBackend::Dense, 30), DimensionStrategy::default())
        .unwrap();
    assert_eq!(s.m(), 3);
    let est = estimate_footprint(&s, truth.shape(), h.shape(), &FootprintConfig::default()).unwrap();
    assert_eq!(est.footprint, h);

    // oracle: brute force over the four single-zero footprints
    let mut best = (f64::INFINITY, 0);
    for zero in 0..4 {
        let mut mask = vec![true; 4];
        mask[zero] = false;
        let op = MStarOperator::new(&s, Footprint::new(h.shape(), mask).unwrap(), truth.shape(), None).unwrap();
        let (x, _) = rayleigh_solve(&op, &RayleighConfig::default()).unwrap();
        let q = op.rayleigh_quotient(&x).unwrap();
        if q < best.0 {
            best = (q, zero);
        }
    }
    assert_eq!(best.1, 1);
}

#[test]
fn narrow_section_is_rejected() {
    let (_, y, h) = one_d_sequence();
    let cfg = SectionConfig {
        section: y.y_shape(),
        svd: SvdBackendChoice::new(SvdBackend::Dense, 30),
        dimension: DimensionStrategy::default(),
        inflate: None,
        footprint: FootprintConfig::default(),
    };
    // a 1x37 section is lower than three filter heights
    assert!(estimate_footprint_sectioned(&y, h.shape(), &cfg).is_err());
}

#[test]
fn full_section_equals_full_frame() {

    let truth = scene(Shape2::of(24, 24));
    let psf = Shape2::of(3, 3);
    let h = Footprint::new(psf, vec![false, true, true, true, true, true, true, true, false]).unwrap();
    let mut spec = SequenceSpec::new(truth.clone(), psf, 7, 40, 0.0);
    spec.footprint = Some(h.clone());
    spec.projection = PsfProjection::Clip;
    let (y, _) = generate_sequence(&spec).unwrap();
    let svd = SvdBackendChoice::new(SvdBackend::Dense, 40);
    let s = identify_subspace(&y, &svd, DimensionStrategy::default()).unwrap();
    let direct = estimate_footprint(&s, truth.shape(), psf, &FootprintConfig::default()).unwrap();
    let cfg = SectionConfig {
        section: y.y_shape(),
        svd,
        dimension: DimensionStrategy::default(),
        inflate: None,
        footprint: FootprintConfig::default(),
    };
    let sectioned = estimate_footprint_sectioned(&y, psf, &cfg).unwrap();
    assert_eq!(direct.footprint, h);
    assert_eq!(sectioned.footprint, direct.footprint);
}

#[test]
fn too_large_dimension_is_a_config_error() {
    let (truth, y, _) = one_d_sequence();
    let s = identify_subspace(&y, &SvdBackendChoice::new(SvdBackend::Dense, 30), DimensionStrategy::Known(5))
        .unwrap();
    let err = estimate_footprint(&s, truth.shape(), Shape2::of(1, 4), &FootprintConfig::default());
    assert!(matches!(err, Err(mfbd_core::MfbdError::Config(_))));
}

#[test]
fn power_refine_agrees_with_rayleigh_solve() {
    let truth = scene(Shape2::of(20, 20));
    let psf = Shape2::of(3, 3);
    let (y, _) = generate_sequence(&SequenceSpec::new(truth.clone(), psf, 9, 20, 0.0)).unwrap();
    let s = identify_subspace(&y, &SvdBackendChoice::new(SvdBackend::Dense, 20), DimensionStrategy::Known(9))
        .unwrap();
    let op = MStarOperator::new(&s, Footprint::all_ones(psf), truth.shape(), None).unwrap();
    let tight = RayleighConfig { mu_delta: 1e-10, ..RayleighConfig::default() };
    let (x, report) = rayleigh_solve(&op, &tight).unwrap();
    assert_eq!(report.mu_history.len(), report.iterations + 1);
    // start power iterations close to, but not at, the solution
    let start: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 1e-3 * ((i % 7) as f64 - 3.0) / 20.0).collect();
    let cfg = PowerConfig { mu_delta: 1e-12, max_iter: 20_000 };
    let (p, _) = power_refine(&op, &start, &cfg).unwrap();
    assert!(angle(&x, &p) < 1e-3, "angle {}", angle(&x, &p));

    let scaled = post_scale(&Image::new(truth.shape(), x).unwrap(), &y, false).unwrap();
    let e = ni_rms(&scaled.image, &truth, None).unwrap();
    assert!(e < 1e-3, "ni_rms {e}");
}

#[test]
fn shifted_operator_top_is_bottom_of_dense_matrix() {
    // 20x20 matrix with a known spectrum
    let n = 20;
    let q = mfbd_core::linalg::orthonormalize(DMatrix::from_fn(n, n, |r, c| ((r * 7 + c * 13) % 11) as f64 + (r == c) as u8 as f64 * 5.0));
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| 0.1 + i as f64 * 0.2));
    let a = &q * d * q.transpose();
    let op = DenseSymmetric(a);
    let start = vec![1.0; n];
    let (x, rep) = power_refine(&op, &start, &PowerConfig { mu_delta: 1e-14, max_iter: 100_000 }).unwrap();
    assert!(rep.converged);
    let bottom: Vec<f64> = q.column(0).iter().copied().collect();
    assert!(angle(&x, &bottom) < 1e-5, "angle {}", angle(&x, &bottom));
    let (r, _) = rayleigh_solve(&op, &RayleighConfig::default()).unwrap();
    assert!(angle(&r, &bottom) < 1e-6);
}

#[test]
fn post_scale_recovers_brightness_for_delta_psfs() {
    let truth = scene(Shape2::of(40, 40));
    let unit = truth.scaled(1.0 / truth.norm());
    let frame = truth.crop(1, 1, Shape2::of(38, 38)).unwrap();
    let y = ObservationSet::from_images(&[frame.clone(), frame]).unwrap();
    let out = post_scale(&unit, &y, false).unwrap();
    assert!(out.warning.is_none());
    assert!((out.image.mean() - truth.mean()).abs() < 0.02 * truth.mean());
    let dark = ObservationSet::from_images(&[Image::zeros(Shape2::of(38, 38))]).unwrap();
    assert!(post_scale(&unit, &dark, false).unwrap().warning.is_some());
}
