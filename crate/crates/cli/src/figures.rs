//! Data behind the figures: eigenvalue spectra and eigenvector
//! misalignment by noise level, eigenvector images, a gradient-ascent
//! history and the growth of the subspace dimension under inflating.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mfbd_core::metrics::subspace_angles;
use mfbd_core::subspace::{identify_subspace, inflate, DimensionStrategy, SvdBackend, SvdBackendChoice};
use mfbd_core::synth::{generate_sequence, PsfProjection, SequenceSpec};
use mfbd_core::testimages::{scene, uniform_noise};
use mfbd_core::{Image, MfbdError, ObservationSet, Result, Shape2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ExperimentConfig, Solver};
use crate::error::{StageError, Staged};
use crate::pgm;
use crate::pipeline::{generate, run};

/// Sequence lengths of the figure experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureSizes {
    pub spectrum_n: usize,
    pub eigenvector_n: usize,
    pub inflation_n: usize,
    pub ascent_iterations: usize,
}

impl FigureSizes {
    /// Sizes that finish in about a minute.
    pub const DESK: FigureSizes = FigureSizes {
        spectrum_n: 2000,
        eigenvector_n: 2500,
        inflation_n: 2000,
        ascent_iterations: 20_000,
    };
    pub const FULL: FigureSizes = FigureSizes {
        spectrum_n: 10_000,
        eigenvector_n: 2500,
        inflation_n: 10_000,
        ascent_iterations: 100_000,
    };
}

pub const NOISE_LEVELS: [f64; 4] = [0.0, 1.0, 10.0, 100.0];

/// `y + ε` with i.i.d. `N(0, σ²)` noise, materialized in memory.
pub fn add_noise(y: &ObservationSet, noise_var: f64, seed: u64) -> Result<ObservationSet> {
    let mut data = y.to_matrix(usize::MAX)?.as_slice().to_vec();
    if noise_var > 0.0 {
        let dist = Normal::new(0.0, noise_var.sqrt()).map_err(|e| MfbdError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        data.iter_mut().for_each(|v| *v += dist.sample(&mut rng));
    }
    ObservationSet::from_columns(y.y_shape(), data)
}

/// Eigenvalue spectra (one column per noise level) and, for each `k`, the
/// largest principal angle in degrees between the leading `k` noisy and
/// noise-free eigenvectors.
/// Random 31x49 truth, 7x10 PSFs from a 10-dimensional subspace, so
/// `|a| = 70` and `|y| = 1000`.
pub fn spectrum_and_misalignment(n: usize, levels: &[f64], seed: u64) -> Result<(String, String)> {
    let m0 = 10;
    let rank = 20;
    let truth = uniform_noise(Shape2::of(31, 49), seed);
    let mut spec = SequenceSpec::new(truth, Shape2::of(7, 10), m0, n, 0.0);
    spec.seed = seed;
    let (clean, _) = generate_sequence(&spec)?;
    let mut choice = SvdBackendChoice::new(SvdBackend::Randomized, rank);
    choice.seed = seed;
    let reference = identify_subspace(&clean, &choice, DimensionStrategy::Known(m0))?;
    let mut spectra = Vec::new();
    let mut angles = Vec::new();
    for (i, &s2) in levels.iter().enumerate() {
        let s = if s2 > 0.0 {
            identify_subspace(&add_noise(&clean, s2, seed + 1 + i as u64)?, &choice, DimensionStrategy::Known(m0))?
        } else {
            reference.clone()
        };
        let deg = (1..=m0)
            .map(|k| {
                let theta = subspace_angles(&s.u().columns(0, k).into_owned(), &reference.u().columns(0, k).into_owned())?;
                Ok(theta.iter().copied().fold(0.0, f64::max).to_degrees())
            })
            .collect::<Result<Vec<f64>>>()?;
        spectra.push(s.lambda().to_vec());
        angles.push(deg);
    }
    let header: String = levels.iter().map(|s| format!(",sigma2={s:?}")).collect();
    let mut spectrum = format!("index{header}\n");
    for k in 0..rank {
        let _ = write!(spectrum, "{}", k + 1);
        for col in &spectra {
            let _ = write!(spectrum, ",{:?}", col[k]);
        }
        spectrum.push('\n');
    }
    let mut misalignment = format!("index{header}\n");
    for k in 0..m0 {
        let _ = write!(misalignment, "{}", k + 1);
        for col in &angles {
            let _ = write!(misalignment, ",{:?}", col[k]);
        }
        misalignment.push('\n');
    }
    Ok((spectrum, misalignment))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone)]
pub struct EigenvectorImages {
    /// First observation.
    pub y1: Image,
    /// `u_1 … u_{m+1}`, `u_1` with non-negative mean.
    pub u: Vec<Image>,
    pub lambda: Vec<f64>,
    /// Pearson correlation of `u_1` with the mean observation.
    pub corr_mean: f64,
}

/// 64x64 scene, random 5x5 PSFs with `m = 25`, noise variance 10.
pub fn eigenvector_images(n: usize, seed: u64) -> Result<EigenvectorImages> {
    let m = 25;
    let mut spec = SequenceSpec::new(scene(Shape2::of(64, 64)), Shape2::of(5, 5), m, n, 10.0);
    spec.seed = seed;
    spec.projection = PsfProjection::Clip;
    let (y, _) = generate_sequence(&spec)?;
    let mut choice = SvdBackendChoice::new(SvdBackend::Randomized, m + 1);
    choice.seed = seed;
    let s = identify_subspace(&y, &choice, DimensionStrategy::Known(m))?;
    let mut u: Vec<Image> = (0..=m).map(|i| s.eigenvector_image(i)).collect::<Result<_>>()?;
    if u[0].sum() < 0.0 {
        u[0] = u[0].scaled(-1.0);
    }
    let mean = y.mean_image()?;
    Ok(EigenvectorImages {
        y1: y.observation(0)?,
        corr_mean: pearson(u[0].data(), mean.data()),
        u,
        lambda: s.lambda().to_vec(),
    })
}

impl EigenvectorImages {
    pub fn write(&self, dir: &Path) -> Result<()> {
        pgm::write_pgm(&dir.join("y01.pgm"), self.y1.shape(), &pgm::encode_gray(&self.y1))?;
        for (i, u) in self.u.iter().enumerate() {
            let px = if i == 0 { pgm::encode_stretched(u) } else { pgm::encode_signed(u) };
            pgm::write_pgm(&dir.join(format!("u{:02}.pgm", i + 1)), u.shape(), &px)?;
        }
        let mut s = String::from("index,lambda\n");
        for (i, l) in self.lambda.iter().enumerate() {
            let _ = writeln!(s, "{},{l:?}", i + 1);
        }
        std::fs::write(dir.join("eigenvectors.csv"), s)?;
        std::fs::write(dir.join("eigenvector_mean_corr.csv"), format!("corr_u1_mean\n{:?}\n", self.corr_mean))?;
        Ok(())
    }
}

/// Gradient ascent from a random start next to the eigenvector method on
/// the same data.
#[derive(Debug, Clone)]
pub struct AscentComparison {
    pub history_csv: String,
    pub ascent_ni_rms: f64,
    pub eigen_ni_rms: f64,
    pub initial_grad: f64,
    pub final_grad: f64,
    pub estimate: Image,
}

impl AscentComparison {
    /// Orders of magnitude the gradient norm fell by.
    pub fn grad_drop(&self) -> f64 {
        (self.initial_grad / self.final_grad).log10()
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "ascent_ni_rms,eigen_ni_rms,initial_grad,final_grad,grad_drop_orders\n{:?},{:?},{:?},{:?},{:?}\n",
            self.ascent_ni_rms,
            self.eigen_ni_rms,
            self.initial_grad,
            self.final_grad,
            self.grad_drop()
        )
    }
}

/// Runs `cfg` (which must use the ascent solver) and the eigenvector
/// method on one generated sequence.
pub fn ascent_comparison(cfg: &ExperimentConfig) -> std::result::Result<AscentComparison, StageError> {
    if cfg.solver != Solver::Mle {
        return Err(MfbdError::Config("ascent comparison needs solver = mle".into())).stage("config");
    }
    let data = generate(cfg)?;
    let ascent = run(cfg, &data)?;
    let eigen_cfg = ExperimentConfig { solver: Solver::Rayleigh, ..cfg.clone() };
    let eigen = run(&eigen_cfg, &data)?;
    let state = ascent.ascent.as_ref().expect("mle run records its history");
    let missing = || MfbdError::Config("ascent comparison needs ground truth".into());
    Ok(AscentComparison {
        history_csv: state.history_csv(),
        ascent_ni_rms: ascent.ni_rms().ok_or_else(missing).stage("metrics")?,
        eigen_ni_rms: eigen.ni_rms().ok_or_else(missing).stage("metrics")?,
        initial_grad: state.history[0].grad_norm,
        final_grad: state.history.last().map_or(f64::NAN, |r| r.grad_norm),
        estimate: ascent.estimate,
    })
}

/// One point of the inflation growth curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthPoint {
    pub d: usize,
    pub a_len: usize,
    pub m: usize,
}

/// Subspace dimension after inflating with `d x d` filters, `d = 1..=d_max`.
/// 32x32 scene, 5x5 PSFs from a random `m0`-dimensional subspace. With
/// noise the inflated dimension is read off the kink of the spectrum.
pub fn inflation_growth(m0: usize, n: usize, noise_var: f64, d_max: usize, seed: u64) -> Result<Vec<GrowthPoint>> {
    let psf = Shape2::of(5, 5);
    let mut spec = SequenceSpec::new(scene(Shape2::of(32, 32)), psf, m0, n, noise_var);
    spec.seed = seed;
    let (y, _) = generate_sequence(&spec)?;
    let mut choice = SvdBackendChoice::new(SvdBackend::Randomized, m0);
    choice.seed = seed;
    let s = identify_subspace(&y, &choice, DimensionStrategy::Known(m0))?;
    let strategy = if noise_var > 0.0 { DimensionStrategy::Kink } else { DimensionStrategy::default() };
    (1..=d_max)
        .map(|d| {
            let ds = Shape2::of(d, d);
            let m = if d == 1 { s.m() } else { inflate(&s, ds, strategy)?.m() };
            Ok(GrowthPoint { d, a_len: psf.full(ds).len(), m })
        })
        .collect()
}

pub fn growth_csv(rows: &[(usize, GrowthPoint)]) -> String {
    let mut s = String::from("m0,d,a_len,m\n");
    for (m0, p) in rows {
        let _ = writeln!(s, "{m0},{},{},{}", p.d, p.a_len, p.m);
    }
    s
}

/// Collects `spectrum.csv` from run bundles in `dir` (and its immediate
/// subdirectories) into one long table. `None` when there are none.
pub fn collect_spectra(dir: &Path) -> Result<Option<String>> {
    let mut bundles: Vec<PathBuf> = Vec::new();
    if dir.join("spectrum.csv").is_file() {
        bundles.push(dir.to_path_buf());
    }
    if dir.is_dir() {
        let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("spectrum.csv").is_file())
            .collect();
        subs.sort();
        bundles.extend(subs);
    }
    if bundles.is_empty() {
        return Ok(None);
    }
    let mut out = String::from("run,index,lambda\n");
    for b in bundles {
        let name = b.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
        let text = std::fs::read_to_string(b.join("spectrum.csv"))?;
        for line in text.lines().skip(1) {
            let _ = writeln!(out, "{name},{line}");
        }
    }
    Ok(Some(out))
}

/// Computes every figure's data into `dir`.
pub fn all_figures(dir: &Path, sizes: FigureSizes, seed: u64) -> std::result::Result<Vec<String>, StageError> {
    let io = |r: std::io::Result<()>| r.map_err(MfbdError::from).stage("write figures");
    io(std::fs::create_dir_all(dir))?;
    let mut notes = Vec::new();

    let (spectrum, misalignment) =
        spectrum_and_misalignment(sizes.spectrum_n, &NOISE_LEVELS, seed).stage("spectrum")?;
    io(std::fs::write(dir.join("spectrum.csv"), spectrum))?;
    io(std::fs::write(dir.join("misalignment.csv"), misalignment))?;

    let eig = eigenvector_images(sizes.eigenvector_n, seed).stage("eigenvectors")?;
    eig.write(dir).stage("write figures")?;
    notes.push(format!("corr(u1, mean observation) = {:.5}", eig.corr_mean));

    let mut cfg = crate::presets::preset("ascent").stage("config")?;
    cfg.seed = seed;
    cfg.tolerances.ascent_iterations = sizes.ascent_iterations;
    let asc = ascent_comparison(&cfg)?;
    io(std::fs::write(dir.join("ascent_history.csv"), &asc.history_csv))?;
    io(std::fs::write(dir.join("ascent_summary.csv"), asc.summary_csv()))?;
    pgm::write_pgm(&dir.join("ascent_estimate.pgm"), asc.estimate.shape(), &pgm::encode_gray(&asc.estimate))
        .stage("write figures")?;
    notes.push(format!(
        "ascent NI-RMS {:.3} vs eigenvector NI-RMS {:.3}, gradient fell {:.2} orders",
        asc.ascent_ni_rms,
        asc.eigen_ni_rms,
        asc.grad_drop()
    ));

    let mut rows = Vec::new();
    for m0 in [5, 10] {
        for p in inflation_growth(m0, sizes.inflation_n, 0.1, 5, seed).stage("inflation")? {
            rows.push((m0, p));
        }
    }
    io(std::fs::write(dir.join("inflation_growth.csv"), growth_csv(&rows)))?;
    Ok(notes)
}
