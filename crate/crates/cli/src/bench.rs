//! Timing of the SVD backends over a grid of sequence lengths and frame
//! sizes.

use std::fmt::Write as _;
use std::time::Instant;

use mfbd_core::observations::ObservationWriter;
use mfbd_core::subspace::{svd_truncated, SvdBackend, SvdBackendChoice};
use mfbd_core::{MfbdError, ObservationSet, Result, Shape2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Placeholder for cells that were not run.
pub const SKIPPED: &str = "—";

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub frame_sizes: Vec<usize>,
    pub rank: usize,
    pub backends: Vec<SvdBackend>,
    /// The dense backend refuses matrices above this many bytes.
    pub dense_budget: usize,
    /// Cells whose observation matrix exceeds this are skipped entirely.
    pub data_budget: usize,
    /// Observation matrices above this are kept in a temporary file.
    pub memory_budget: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ns: vec![500, 4000],
            frame_sizes: vec![100, 1_000, 10_000, 100_000],
            rank: 25,
            backends: SvdBackend::ALL.to_vec(),
            dense_budget: 256 << 20,
            data_budget: 1 << 30,
            memory_budget: 256 << 20,
            seed: 0,
        }
    }
}

/// Near-square frame with exactly `len` pixels.
pub fn frame_shape(len: usize) -> Result<Shape2> {
    let mut rows = (len as f64).sqrt() as usize;
    while rows > 1 && len % rows != 0 {
        rows -= 1;
    }
    Shape2::new(rows.max(1), len / rows.max(1))
}

/// Rank-`r` signal plus small white noise, written column by column.
fn synthetic(frame: Shape2, n: usize, rank: usize, memory_budget: usize, seed: u64) -> Result<ObservationSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = frame.len();
    let basis: Vec<f64> = (0..len * rank).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut w = ObservationWriter::new(frame, n, memory_budget)?;
    let mut col = vec![0.0; len];
    for _ in 0..n {
        let coef: Vec<f64> = (0..rank)
            .map(|i| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * 10.0 / (i + 1) as f64
            })
            .collect();
        for (p, v) in col.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v = 0.01 * noise + (0..rank).map(|i| basis[i * len + p] * coef[i]).sum::<f64>();
        }
        w.push(&col)?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub frame_size: usize,
    /// Seconds per backend, in the order of `BenchConfig::backends`.
    pub seconds: Vec<Option<f64>>,
}

pub fn bench(cfg: &BenchConfig, mut progress: impl FnMut(&Cell)) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for &n in &cfg.ns {
        for &len in &cfg.frame_sizes {
            let mut cell = Cell { n, frame_size: len, seconds: vec![None; cfg.backends.len()] };
            let rank = cfg.rank.min(len).min(n);
            if len * n * 8 <= cfg.data_budget {
                let y = synthetic(frame_shape(len)?, n, rank, cfg.memory_budget, cfg.seed)?;
                for (slot, &kind) in cell.seconds.iter_mut().zip(&cfg.backends) {
                    let mut choice = SvdBackendChoice::new(kind, rank);
                    choice.memory_budget = cfg.dense_budget;
                    choice.seed = cfg.seed;
                    let t = Instant::now();
                    match svd_truncated(&y, &choice) {
                        Ok(_) => *slot = Some(t.elapsed().as_secs_f64()),
                        Err(MfbdError::Infeasible(msg)) => log::info!("{kind} skipped: {msg}"),
                        Err(e) => return Err(e),
                    }
                }
            }
            progress(&cell);
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// One row per backend and one column per `(n, |y|)` cell.
pub fn bench_csv(cfg: &BenchConfig, cells: &[Cell]) -> String {
    let mut s = String::from("backend");
    for c in cells {
        let _ = write!(s, ",n={} |y|={}", c.n, c.frame_size);
    }
    s.push('\n');
    for (b, kind) in cfg.backends.iter().enumerate() {
        s.push_str(kind.name());
        for c in cells {
            match c.seconds[b] {
                Some(t) => {
                    let _ = write!(s, ",{t:.3}");
                }
                None => {
                    let _ = write!(s, ",{SKIPPED}");
                }
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_shapes_cover_the_grid() {
        assert_eq!(frame_shape(100).unwrap(), Shape2::of(10, 10));
        assert_eq!(frame_shape(1000).unwrap(), Shape2::of(25, 40));
        assert_eq!(frame_shape(100_000).unwrap(), Shape2::of(250, 400));
        assert_eq!(frame_shape(7).unwrap().len(), 7);
    }

    #[test]
    fn dense_refuses_beyond_budget() {
        let cfg = BenchConfig {
            ns: vec![60],
            frame_sizes: vec![100, 400],
            rank: 5,
            dense_budget: 100 * 60 * 8,
            ..Default::default()
        };
        let cells = bench(&cfg, |_| {}).unwrap();
        assert!(cells[0].seconds.iter().all(Option::is_some));
        assert!(cells[1].seconds[0].is_none());
        assert!(cells[1].seconds[1..].iter().all(Option::is_some));
        let csv = bench_csv(&cfg, &cells);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().ends_with(SKIPPED));
    }
}
