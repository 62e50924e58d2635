//! Experiment configuration and its text format.
//!
//! The file is a list of `key = value` lines. Blank lines and lines whose
//! first non-blank character is `#` are ignored, as is anything after a
//! ` #` on a value line. Keys may appear in any order; missing keys keep
//! their defaults and unknown keys are an error. [`ExperimentConfig::to_text`]
//! writes every key in a fixed order with floats in their shortest
//! round-trip form, so `from_text(to_text(c)) == c` holds exactly.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use mfbd_core::eigsolve::RayleighConfig;
use mfbd_core::mle::AscentConfig;
use mfbd_core::subspace::{DimensionStrategy, SvdBackend, SvdBackendChoice};
use mfbd_core::synth::PsfProjection;
use mfbd_core::{Footprint, MfbdError, Result, Shape2};

/// Output directory override; the only environment variable read.
pub const OUTPUT_DIR_ENV: &str = "MFBD_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TruthSource {
    /// The built-in procedural scene.
    Scene,
    /// Uniform noise in `[0, 255)` with the given seed.
    Noise(u64),
    /// A PGM file; its size overrides `image`.
    Pgm(PathBuf),
}

impl FromStr for TruthSource {
    type Err = MfbdError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "scene" {
            return Ok(TruthSource::Scene);
        }
        if let Some(seed) = s.strip_prefix("noise:") {
            return seed
                .parse()
                .map(TruthSource::Noise)
                .map_err(|_| MfbdError::Config(format!("bad noise seed in {s:?}")));
        }
        if let Some(path) = s.strip_prefix("pgm:") {
            return Ok(TruthSource::Pgm(PathBuf::from(path)));
        }
        Err(MfbdError::Config(format!("unknown truth source {s:?}")))
    }
}

impl std::fmt::Display for TruthSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TruthSource::Scene => f.write_str("scene"),
            TruthSource::Noise(seed) => write!(f, "noise:{seed}"),
            TruthSource::Pgm(p) => write!(f, "pgm:{}", p.display()),
        }
    }
}

/// Where the footprint used by the solver comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FootprintMode {
    /// The footprint the data was generated with (dilated when inflating).
    Known,
    AllOnes,
    /// Estimated on a centered section of this size.
    Estimate(Shape2),
}

impl FromStr for FootprintMode {
    type Err = MfbdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known" => Ok(FootprintMode::Known),
            "all_ones" => Ok(FootprintMode::AllOnes),
            _ => match s.strip_prefix("estimate:") {
                Some(section) => Ok(FootprintMode::Estimate(section.parse()?)),
                None => Err(MfbdError::Config(format!("unknown footprint mode {s:?}"))),
            },
        }
    }
}

impl std::fmt::Display for FootprintMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FootprintMode::Known => f.write_str("known"),
            FootprintMode::AllOnes => f.write_str("all_ones"),
            FootprintMode::Estimate(s) => write!(f, "estimate:{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Rayleigh,
    /// Gradient ascent on the likelihood from a random start.
    Mle,
}

impl FromStr for Solver {
    type Err = MfbdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rayleigh" => Ok(Solver::Rayleigh),
            "mle" => Ok(Solver::Mle),
            other => Err(MfbdError::Config(format!("unknown solver {other:?}"))),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::Rayleigh => "rayleigh",
            Solver::Mle => "mle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub mu_delta: f64,
    pub max_outer: usize,
    pub ascent_tau: f64,
    pub ascent_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let r = RayleighConfig::default();
        let a = AscentConfig::default();
        Self {
            mu_delta: r.mu_delta,
            max_outer: r.max_outer,
            ascent_tau: a.tau,
            ascent_iterations: a.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub truth: TruthSource,
    pub image: Shape2,
    pub psf: Shape2,
    pub m0: usize,
    pub n: usize,
    pub noise_var: f64,
    pub projection: PsfProjection,
    /// Support of the generated PSFs; `None` is the whole filter.
    pub psf_footprint: Option<Footprint>,
    pub seed: u64,
    pub svd_backend: SvdBackend,
    pub svd_rank: usize,
    pub svd_oversampling: usize,
    pub svd_power_iterations: usize,
    pub dimension: DimensionStrategy,
    pub inflate: Option<Shape2>,
    /// Dimension rule for the inflated subspace.
    pub inflate_dimension: DimensionStrategy,
    pub footprint: FootprintMode,
    pub solver: Solver,
    pub tolerances: Tolerances,
    /// Clamp the post-scaled estimate to `[0, 255]`.
    pub clamp: bool,
    /// Also compute the second eigenvalue of the final operator.
    pub spectral_gap: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            truth: TruthSource::Scene,
            image: Shape2::of(32, 32),
            psf: Shape2::of(3, 3),
            m0: 9,
            n: 20,
            noise_var: 0.0,
            projection: PsfProjection::Shrink,
            psf_footprint: None,
            seed: 0,
            svd_backend: SvdBackend::Randomized,
            svd_rank: 9,
            svd_oversampling: 10,
            svd_power_iterations: 2,
            dimension: DimensionStrategy::default(),
            inflate: None,
            inflate_dimension: DimensionStrategy::Kink,
            footprint: FootprintMode::AllOnes,
            solver: Solver::Rayleigh,
            tolerances: Tolerances::default(),
            clamp: false,
            spectral_gap: false,
            output_dir: PathBuf::from("results"),
        }
    }
}

fn config_err(line: usize, msg: impl std::fmt::Display) -> MfbdError {
    MfbdError::Config(format!("line {line}: {msg}"))
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(line, format!("bad value {value:?} for {key}")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(line, format!("bad boolean {value:?} for {key}"))),
    }
}

impl ExperimentConfig {
    pub fn svd_choice(&self) -> SvdBackendChoice {
        let mut c = SvdBackendChoice::new(self.svd_backend, self.svd_rank);
        c.oversampling = self.svd_oversampling;
        c.power_iterations = self.svd_power_iterations;
        c.seed = self.seed;
        c
    }

    pub fn rayleigh(&self) -> RayleighConfig {
        RayleighConfig {
            mu_delta: self.tolerances.mu_delta,
            max_outer: self.tolerances.max_outer,
            seed: self.seed,
            ..RayleighConfig::default()
        }
    }

    pub fn ascent(&self) -> AscentConfig {
        AscentConfig {
            tau: self.tolerances.ascent_tau,
            max_iter: self.tolerances.ascent_iterations,
            ..AscentConfig::default()
        }
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_at(0, key, value)
    }

    fn set_at(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "name" => self.name = v.to_string(),
            "truth" => self.truth = v.parse()?,
            "image" => self.image = v.parse()?,
            "psf" => self.psf = v.parse()?,
            "m0" => self.m0 = parse(line, key, v)?,
            "n" => self.n = parse(line, key, v)?,
            "noise_var" => self.noise_var = parse(line, key, v)?,
            "projection" => self.projection = v.parse()?,
            "psf_footprint" => {
                self.psf_footprint = match v {
                    "all" => None,
                    "band57" => Some(Footprint::diagonal_band_57()),
                    _ => Some(Footprint::from_compact(v)?),
                }
            }
            "seed" => self.seed = parse(line, key, v)?,
            "svd" => self.svd_backend = v.parse()?,
            "svd_rank" => self.svd_rank = parse(line, key, v)?,
            "svd_oversampling" => self.svd_oversampling = parse(line, key, v)?,
            "svd_power_iterations" => self.svd_power_iterations = parse(line, key, v)?,
            "dimension" => self.dimension = v.parse()?,
            "inflate" => {
                self.inflate = match v {
                    "none" => None,
                    _ => Some(v.parse()?),
                }
            }
            "inflate_dimension" => self.inflate_dimension = v.parse()?,
            "footprint" => self.footprint = v.parse()?,
            "solver" => self.solver = v.parse()?,
            "mu_delta" => self.tolerances.mu_delta = parse(line, key, v)?,
            "max_outer" => self.tolerances.max_outer = parse(line, key, v)?,
            "ascent_tau" => self.tolerances.ascent_tau = parse(line, key, v)?,
            "ascent_iterations" => self.tolerances.ascent_iterations = parse(line, key, v)?,
            "clamp" => self.clamp = parse_bool(line, key, v)?,
            "spectral_gap" => self.spectral_gap = parse_bool(line, key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(config_err(line, format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a configuration file on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies the keys in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line = line.split(" #").next().unwrap_or(line);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(i + 1, format!("expected key = value, got {raw:?}")))?;
            self.set_at(i + 1, key, value)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let t = &self.tolerances;
        let footprint = self.psf_footprint.as_ref().map_or("all".to_string(), |h| h.to_compact());
        let inflate = self.inflate.map_or("none".to_string(), |d| d.to_string());
        let entries = [
            ("name", self.name.clone()),
            ("truth", self.truth.to_string()),
            ("image", self.image.to_string()),
            ("psf", self.psf.to_string()),
            ("m0", self.m0.to_string()),
            ("n", self.n.to_string()),
            ("noise_var", format!("{:?}", self.noise_var)),
            ("projection", self.projection.name().to_string()),
            ("psf_footprint", footprint),
            ("seed", self.seed.to_string()),
            ("svd", self.svd_backend.to_string()),
            ("svd_rank", self.svd_rank.to_string()),
            ("svd_oversampling", self.svd_oversampling.to_string()),
            ("svd_power_iterations", self.svd_power_iterations.to_string()),
            ("dimension", self.dimension.to_string()),
            ("inflate", inflate),
            ("inflate_dimension", self.inflate_dimension.to_string()),
            ("footprint", self.footprint.to_string()),
            ("solver", self.solver.to_string()),
            ("mu_delta", format!("{:?}", t.mu_delta)),
            ("max_outer", t.max_outer.to_string()),
            ("ascent_tau", format!("{:?}", t.ascent_tau)),
            ("ascent_iterations", t.ascent_iterations.to_string()),
            ("clamp", self.clamp.to_string()),
            ("spectral_gap", self.spectral_gap.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Rejects combinations the pipeline cannot run.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m0 == 0 {
            return Err(MfbdError::Config("n and m0 must be positive".into()));
        }
        if !self.psf.fits_smaller(self.image) {
            return Err(MfbdError::Config(format!(
                "filter {} must be smaller than the image {}",
                self.psf, self.image
            )));
        }
        if let Some(h) = &self.psf_footprint {
            if h.shape() != self.psf {
                return Err(MfbdError::Config(format!(
                    "psf_footprint is {} but psf is {}",
                    h.shape(),
                    self.psf
                )));
            }
        }
        if self.solver == Solver::Mle && self.inflate.is_some() {
            return Err(MfbdError::Config("the mle solver does not support inflating".into()));
        }
        Ok(())
    }

    /// Applies the output-directory environment override.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
        self
    }
}
