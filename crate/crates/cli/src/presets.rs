//! Named experiment configurations.

use mfbd_core::subspace::{DimensionStrategy, SvdBackend};
use mfbd_core::synth::PsfProjection;
use mfbd_core::{Footprint, MfbdError, Result, Shape2};

use crate::config::{ExperimentConfig, FootprintMode, Solver, Tolerances, TruthSource};

pub const NAMES: [&str; 7] = [
    "exact",
    "moderate-0.1",
    "moderate-1",
    "moderate-10",
    "moderate-10-no-inflate",
    "high-noise",
    "ascent",
];

/// 128x128 scene, 10x10 PSFs on the 57-entry band, n = 1000. The
/// footprint is estimated on 75x75 sections.
fn moderate(noise_var: f64) -> ExperimentConfig {
    ExperimentConfig {
        truth: TruthSource::Scene,
        image: Shape2::of(128, 128),
        psf: Shape2::of(10, 10),
        m0: 57,
        n: 1000,
        noise_var,
        // with m0 equal to the support size, clipping keeps the PSFs in
        // their 57-dimensional span and gives better conditioned spectra
        projection: PsfProjection::Clip,
        psf_footprint: Some(Footprint::diagonal_band_57()),
        svd_backend: SvdBackend::Randomized,
        svd_rank: 57,
        dimension: DimensionStrategy::Known(57),
        footprint: FootprintMode::Estimate(Shape2::of(75, 75)),
        ..Default::default()
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = match name {
        "exact" => ExperimentConfig {
            image: Shape2::of(32, 32),
            psf: Shape2::of(3, 3),
            m0: 9,
            n: 20,
            svd_backend: SvdBackend::Dense,
            svd_rank: 20,
            dimension: DimensionStrategy::Known(9),
            footprint: FootprintMode::AllOnes,
            ..Default::default()
        },
        "moderate-0.1" => moderate(0.1),
        "moderate-1" => moderate(1.0),
        "moderate-10" => ExperimentConfig {
            inflate: Some(Shape2::of(2, 2)),
            inflate_dimension: DimensionStrategy::Kink,
            footprint: FootprintMode::Estimate(Shape2::of(60, 60)),
            ..moderate(10.0)
        },
        "moderate-10-no-inflate" => moderate(10.0),
        "high-noise" => ExperimentConfig {
            image: Shape2::of(40, 40),
            psf: Shape2::of(5, 5),
            m0: 25,
            n: 5000,
            noise_var: 50.0,
            projection: PsfProjection::Clip,
            svd_backend: SvdBackend::Randomized,
            svd_rank: 25,
            dimension: DimensionStrategy::Known(25),
            footprint: FootprintMode::AllOnes,
            clamp: true,
            ..Default::default()
        },
        "ascent" => ExperimentConfig {
            image: Shape2::of(32, 32),
            psf: Shape2::of(5, 5),
            m0: 25,
            n: 1000,
            noise_var: 1.0,
            projection: PsfProjection::Clip,
            svd_backend: SvdBackend::Randomized,
            svd_rank: 25,
            dimension: DimensionStrategy::Known(25),
            footprint: FootprintMode::AllOnes,
            solver: Solver::Mle,
            tolerances: Tolerances {
                ascent_tau: 1.0,
                ascent_iterations: 20_000,
                ..Tolerances::default()
            },
            ..Default::default()
        },
        other => {
            return Err(MfbdError::Config(format!(
                "unknown preset {other:?}; available: {}",
                NAMES.join(", ")
            )))
        }
    };
    cfg.name = name.to_string();
    cfg.output_dir = format!("results/{name}").into();
    Ok(cfg)
}
