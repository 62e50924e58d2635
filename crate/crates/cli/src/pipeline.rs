//! Dataset generation and the restoration pipeline:
//! subspace, optional inflating, footprint, solve, post-scaling.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use mfbd_core::eigsolve::{
    estimate_footprint_sectioned, post_scale, rayleigh_solve, second_eigenvalue, FootprintConfig,
    MStarOperator, SectionConfig, SolveReport,
};
use mfbd_core::metrics::{metrics_csv, ni_rms, EvalMask, MetricRow};
use mfbd_core::mle::{gradient_ascent, MleState, Reference};
use mfbd_core::observations::{read_extras, write_dataset, DatasetExtras};
use mfbd_core::subspace::{identify_subspace, inflate, DimensionStrategy, SignalSubspace};
use mfbd_core::synth::{generate_sequence, SequenceSpec};
use mfbd_core::testimages::{scene, uniform_noise};
use mfbd_core::{Footprint, Image, MfbdError, ObservationSet, Psf, Result, Shape2};

use crate::config::{ExperimentConfig, FootprintMode, Solver, TruthSource};
use crate::error::{Staged, StageError};
use crate::pgm;

/// Observations plus whatever is known about how they were made.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: ObservationSet,
    pub psf_shape: Shape2,
    pub noise_var: f64,
    pub truth: Option<Image>,
    pub footprint: Option<Footprint>,
    pub psfs: Option<Vec<Psf>>,
}

impl Dataset {
    pub fn x_shape(&self) -> Shape2 {
        self.y.y_shape().full(self.psf_shape)
    }
}

pub fn load_truth(cfg: &ExperimentConfig) -> Result<Image> {
    match &cfg.truth {
        TruthSource::Scene => Ok(scene(cfg.image)),
        TruthSource::Noise(seed) => Ok(uniform_noise(cfg.image, *seed)),
        TruthSource::Pgm(path) => pgm::read_pgm(path),
    }
}

/// Synthesizes the sequence described by `cfg`.
pub fn generate(cfg: &ExperimentConfig) -> std::result::Result<Dataset, StageError> {
    cfg.validate().stage("config")?;
    let truth = load_truth(cfg).stage("ground truth")?;
    let mut spec = SequenceSpec::new(truth.clone(), cfg.psf, cfg.m0, cfg.n, cfg.noise_var);
    spec.seed = cfg.seed;
    spec.footprint = cfg.psf_footprint.clone();
    spec.projection = cfg.projection;
    let (y, psfs) = generate_sequence(&spec).stage("generate")?;
    Ok(Dataset {
        y,
        psf_shape: cfg.psf,
        noise_var: cfg.noise_var,
        truth: Some(truth),
        footprint: Some(cfg.psf_footprint.clone().unwrap_or_else(|| Footprint::all_ones(cfg.psf))),
        psfs: Some(psfs),
    })
}

pub fn save_dataset(path: &Path, data: &Dataset) -> std::result::Result<(), StageError> {
    let extras = DatasetExtras {
        noise_var: data.noise_var,
        psf_shape: Some(data.psf_shape),
        ground_truth: data.truth.clone(),
        footprint: data.footprint.clone(),
        psfs: data.psfs.clone(),
    };
    write_dataset(path, &data.y, &extras).stage("write dataset")
}

pub fn open_dataset(path: &Path) -> std::result::Result<Dataset, StageError> {
    let (y, header) = ObservationSet::open(path).stage("read dataset")?;
    let extras = read_extras(path, &header).stage("read dataset")?;
    let footprint = match (extras.footprint, &extras.psfs) {
        (Some(h), _) => Some(h),
        (None, Some(psfs)) => Some(Footprint::from_psfs(psfs.iter()).stage("read dataset")?),
        (None, None) => None,
    };
    Ok(Dataset {
        y,
        psf_shape: header.psf_shape,
        noise_var: header.noise_var,
        truth: extras.ground_truth,
        footprint,
        psfs: extras.psfs,
    })
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub name: String,
    /// Post-scaled estimate.
    pub estimate: Image,
    /// Unit-norm estimate before post-scaling.
    pub raw: Image,
    pub lambda: Vec<f64>,
    pub m: usize,
    pub m_inflated: Option<usize>,
    pub footprint: Footprint,
    /// Whether the footprint equals the generating one, when that is known.
    pub footprint_exact: Option<bool>,
    pub report: Option<SolveReport>,
    pub ascent: Option<MleState>,
    /// Smallest and second smallest eigenvalue of the final operator.
    pub spectral_gap: Option<(f64, f64)>,
    pub metrics: Vec<MetricRow>,
    pub warnings: Vec<String>,
    pub timings: Vec<(&'static str, f64)>,
}

impl RunResult {
    /// NI-RMS over the observed pixels, if ground truth was available.
    pub fn ni_rms(&self) -> Option<f64> {
        self.metrics.iter().find(|r| r.label == "observed").map(|r| r.ni_rms)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "{k},{v}");
        };
        row("name", self.name.clone());
        row("m", self.m.to_string());
        row("m_inflated", self.m_inflated.map(|m| m.to_string()).unwrap_or_default());
        row("filter", self.footprint.shape().to_string());
        row("footprint_count", self.footprint.count().to_string());
        row("footprint_exact", self.footprint_exact.map(|b| b.to_string()).unwrap_or_default());
        if let Some(r) = &self.report {
            row("mu", format!("{:?}", r.mu_history.last().copied().unwrap_or(f64::NAN)));
            row("residual", format!("{:?}", r.residual));
            row("iterations", r.iterations.to_string());
            row("converged", r.converged.to_string());
            row("fell_back", r.fell_back.to_string());
        }
        if let Some(a) = &self.ascent {
            let last = a.history.last();
            row("phi", format!("{:?}", last.map_or(f64::NAN, |r| r.phi)));
            row("grad_norm", format!("{:?}", last.map_or(f64::NAN, |r| r.grad_norm)));
            row("iterations", a.t.to_string());
            row("converged", a.converged.to_string());
            row("diverged", a.diverged.to_string());
        }
        if let Some((mu1, mu2)) = self.spectral_gap {
            row("mu2", format!("{mu2:?}"));
            row("spectral_gap", format!("{:?}", mu2 - mu1));
        }
        for m in &self.metrics {
            row(&format!("ni_rms_{}", m.label), format!("{:?}", m.ni_rms));
        }
        row("warnings", self.warnings.len().to_string());
        s
    }

    pub fn spectrum_csv(&self) -> String {
        let mut s = String::from("index,lambda\n");
        for (i, l) in self.lambda.iter().enumerate() {
            let _ = writeln!(s, "{},{l:?}", i + 1);
        }
        s
    }

    /// Writes the result bundle. Timings go to their own file so the CSVs
    /// stay byte-identical across runs.
    pub fn write_bundle(&self, cfg: &ExperimentConfig, dir: &Path) -> std::result::Result<(), StageError> {
        let io = |r: std::io::Result<()>| r.map_err(MfbdError::from).stage("write results");
        io(std::fs::create_dir_all(dir))?;
        io(std::fs::write(dir.join("config.txt"), cfg.to_text()))?;
        io(std::fs::write(dir.join("summary.csv"), self.summary_csv()))?;
        io(std::fs::write(dir.join("spectrum.csv"), self.spectrum_csv()))?;
        if !self.metrics.is_empty() {
            io(std::fs::write(dir.join("metrics.csv"), metrics_csv(&self.metrics)))?;
        }
        if let Some(r) = &self.report {
            io(std::fs::write(dir.join("solve.csv"), r.to_csv()))?;
        }
        if let Some(a) = &self.ascent {
            io(std::fs::write(dir.join("history.csv"), a.history_csv()))?;
        }
        io(std::fs::write(dir.join("footprint.txt"), self.footprint.to_text()))?;
        let h = self.footprint.to_image();
        pgm::write_pgm(&dir.join("footprint.pgm"), h.shape(), &pgm::encode_stretched(&h)).stage("write results")?;
        let x = &self.estimate;
        pgm::write_pgm(&dir.join("estimate.pgm"), x.shape(), &pgm::encode_gray(x)).stage("write results")?;
        pgm::write_pgm(&dir.join("estimate_raw.pgm"), x.shape(), &pgm::encode_signed(&self.raw))
            .stage("write results")?;
        let mut t = String::from("stage,seconds\n");
        for (stage, secs) in &self.timings {
            let _ = writeln!(t, "{stage},{secs:.6}");
        }
        let mut w = String::new();
        for msg in &self.warnings {
            let _ = writeln!(w, "{msg}");
        }
        io(std::fs::write(dir.join("timings.csv"), t))?;
        io(std::fs::write(dir.join("warnings.txt"), w))?;
        Ok(())
    }
}

struct Clock {
    at: Instant,
    laps: Vec<(&'static str, f64)>,
}

impl Clock {
    fn new() -> Self {
        Self { at: Instant::now(), laps: Vec::new() }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.laps.push((stage, (now - self.at).as_secs_f64()));
        log::info!("{stage}: {:.3} s", (now - self.at).as_secs_f64());
        self.at = now;
    }
}

fn known_footprint(cfg: &ExperimentConfig, data: &Dataset) -> Option<Footprint> {
    data.footprint.clone().or_else(|| cfg.psf_footprint.clone())
}

/// Runs the pipeline configured by `cfg` on `data`.
pub fn run(cfg: &ExperimentConfig, data: &Dataset) -> std::result::Result<RunResult, StageError> {
    let mut clock = Clock::new();
    let mut warnings = Vec::new();
    let x_shape = data.x_shape();
    if let Some(t) = &data.truth {
        if t.shape() != x_shape {
            return Err(MfbdError::Dimension(format!(
                "ground truth is {} but the frames imply {x_shape}",
                t.shape()
            )))
            .stage("config");
        }
    }
    if cfg.solver == Solver::Mle && cfg.inflate.is_some() {
        return Err(MfbdError::Config("the mle solver does not support inflating".into())).stage("config");
    }

    let s = identify_subspace(&data.y, &cfg.svd_choice(), cfg.dimension).stage("subspace")?;
    log::info!("signal subspace dimension {}", s.m());
    clock.lap("subspace");

    let inflated = match cfg.inflate {
        Some(d) => {
            let si = inflate(&s, d, cfg.inflate_dimension).stage("inflate")?;
            log::info!("inflated to filter {} with dimension {}", data.psf_shape.full(d), si.m());
            clock.lap("inflate");
            Some(si)
        }
        None => None,
    };
    let psf = cfg.inflate.map_or(data.psf_shape, |d| data.psf_shape.full(d));
    let generating = known_footprint(cfg, data).map(|h| match cfg.inflate {
        Some(d) => h.dilated(d),
        None => h,
    });

    let footprint = match cfg.footprint {
        FootprintMode::AllOnes => Footprint::all_ones(psf),
        FootprintMode::Known => generating
            .clone()
            .ok_or_else(|| MfbdError::Config("footprint = known but the data carries no footprint".into()))
            .stage("footprint")?,
        FootprintMode::Estimate(section) => {
            let sc = SectionConfig {
                section,
                svd: cfg.svd_choice(),
                // dimension rules are unreliable on small sections; reuse
                // the full-frame values
                dimension: DimensionStrategy::Known(s.m()),
                inflate: cfg.inflate.zip(inflated.as_ref()).map(|(d, si)| (d, DimensionStrategy::Known(si.m()))),
                footprint: FootprintConfig {
                    rayleigh: cfg.rayleigh(),
                    ..FootprintConfig::default()
                },
            };
            let est = estimate_footprint_sectioned(&data.y, data.psf_shape, &sc).stage("footprint")?;
            warnings.extend(est.warning);
            clock.lap("footprint");
            est.footprint
        }
    };
    let footprint_exact = generating.as_ref().map(|h| *h == footprint);
    let mask = EvalMask::from_footprint(&footprint, x_shape).stage("metrics")?;

    let final_subspace: &SignalSubspace = inflated.as_ref().unwrap_or(&s);
    let (raw, report, ascent, spectral_gap) = match cfg.solver {
        Solver::Rayleigh => {
            let op = MStarOperator::new(final_subspace, footprint.clone(), x_shape, None).stage("solve")?;
            let (x, report) = rayleigh_solve(&op, &cfg.rayleigh()).stage("solve")?;
            log::info!("solve: {}", report.summary());
            clock.lap("solve");
            let gap = if cfg.spectral_gap {
                let mu2 = second_eigenvalue(&op, &x, &cfg.rayleigh()).stage("spectral gap")?;
                clock.lap("spectral gap");
                Some((*report.mu_history.last().unwrap_or(&f64::NAN), mu2))
            } else {
                None
            };
            (Image::new(x_shape, x).stage("solve")?, Some(report), None, gap)
        }
        Solver::Mle => {
            let x0 = uniform_noise(x_shape, cfg.seed);
            let reference = data.truth.as_ref().map(|t| Reference { truth: t, mask: Some(&mask) });
            let state = gradient_ascent(&x0, &s, data.psf_shape, &cfg.ascent(), reference).stage("solve")?;
            if state.diverged {
                warnings.push(format!("gradient ascent diverged at iteration {}", state.t));
            }
            clock.lap("solve");
            let n = state.x.norm();
            (state.x.scaled(1.0 / n), None, Some(state), None)
        }
    };

    let scaled = post_scale(&raw, &data.y, cfg.clamp).stage("post-scale")?;
    warnings.extend(scaled.warning.clone());
    clock.lap("post-scale");

    let mut metrics = Vec::new();
    if let Some(t) = &data.truth {
        metrics.push(MetricRow {
            label: "observed".into(),
            ni_rms: ni_rms(&scaled.image, t, Some(&mask)).stage("metrics")?,
            observed_pixels: mask.count(),
        });
        metrics.push(MetricRow {
            label: "all".into(),
            ni_rms: ni_rms(&scaled.image, t, None).stage("metrics")?,
            observed_pixels: x_shape.len(),
        });
    }
    Ok(RunResult {
        name: cfg.name.clone(),
        estimate: scaled.image,
        raw,
        lambda: s.lambda().to_vec(),
        m: s.m(),
        m_inflated: inflated.map(|si| si.m()),
        footprint,
        footprint_exact,
        report,
        ascent,
        spectral_gap,
        metrics,
        warnings,
        timings: clock.laps,
    })
}
