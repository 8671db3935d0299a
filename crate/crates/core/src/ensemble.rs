//! Seeded parallel ensembles.
//!
//! Every path owns independent random streams derived from the master seed,
//! the path index and a channel number, so a path's randomness does not
//! depend on scheduling. Results are collected in index order and reduced
//! by pairwise summation, which makes summaries bit-for-bit reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{ComplexMatrix, DensityMatrix, C64};
use crate::error::{Error, Result};

/// Random-stream channels of a single path.
pub mod channel {
    pub const DISCRETE: u64 = 0;
    pub const BROWNIAN_1: u64 = 1;
    pub const BROWNIAN_2: u64 = 2;
    pub const JUMP_1: u64 = 3;
    pub const JUMP_2: u64 = 4;
}

const CHANNELS_PER_PATH: u64 = 8;

/// Independent stream for `(seed, path, channel)`.
pub fn path_rng(seed: u64, path: usize, channel: u64) -> ChaCha8Rng {
    debug_assert!(channel < CHANNELS_PER_PATH);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64 * CHANNELS_PER_PATH + channel);
    rng
}

/// Run `paths` independent jobs in parallel and return results in index
/// order. The first failing path (by index) determines the error.
pub fn run_paths<T, F>(paths: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..paths).into_par_iter().map(|i| job(i).map_err(|e| e.on_path(i))).collect();
    results.into_iter().collect()
}

/// Sum with `O(log n)` error growth and a fixed association order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleStats {
    pub mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
}

/// Mean and standard error, two-pass.
pub fn sample_stats(xs: &[f64]) -> SampleStats {
    let n = xs.len();
    if n == 0 {
        return SampleStats { mean: f64::NAN, stderr: f64::NAN };
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return SampleStats { mean, stderr: 0.0 };
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    SampleStats {
        mean,
        stderr: (var / n as f64).sqrt(),
    }
}

/// Column-wise statistics of equally long per-path rows.
pub fn column_stats(rows: &[Vec<f64>]) -> Vec<SampleStats> {
    let width = rows.first().map_or(0, Vec::len);
    let mut column = Vec::with_capacity(rows.len());
    (0..width)
        .map(|c| {
            column.clear();
            column.extend(rows.iter().map(|r| r[c]));
            sample_stats(&column)
        })
        .collect()
}

/// Time indices at which ensemble statistics are taken.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoints {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
}

impl Checkpoints {
    /// `count` equally spaced checkpoints ending at `total_steps`.
    pub fn uniform(total_steps: usize, count: usize, dt: f64) -> Result<Self> {
        if count == 0 || count > total_steps {
            return Err(Error::invalid(format!(
                "cannot place {count} checkpoints on {total_steps} steps"
            )));
        }
        let steps: Vec<usize> = (1..=count).map(|k| (k * total_steps) / count).collect();
        let times = steps.iter().map(|&s| s as f64 * dt).collect();
        Ok(Checkpoints { steps, times })
    }

    /// Checkpoints at given times on a grid of spacing `dt`.
    pub fn at_times(times: &[f64], dt: f64) -> Result<Self> {
        let mut steps = Vec::with_capacity(times.len());
        for &t in times {
            let s = (t / dt).round();
            if s < 0.0 || ((s * dt) - t).abs() > 1e-9 * t.abs().max(1.0) {
                return Err(Error::invalid(format!("time {t} is not on the grid of step {dt}")));
            }
            steps.push(s as usize);
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("checkpoint times must be increasing"));
        }
        Ok(Checkpoints {
            steps,
            times: times.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_step(&self) -> usize {
        self.steps.last().copied().unwrap_or(0)
    }
}

/// Number of steps of size `dt` covering `horizon`; the ratio must be integral.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon > 0.0) || dt > horizon {
        return Err(Error::invalid(format!("need 0 < dt <= T, got dt={dt}, T={horizon}")));
    }
    let steps = (horizon / dt).round();
    if ((steps * dt) - horizon).abs() > 1e-9 * horizon {
        return Err(Error::invalid(format!("T={horizon} is not a multiple of dt={dt}")));
    }
    Ok(steps as usize)
}

/// Values a path contributes at one checkpoint.
pub const ROW_WIDTH: usize = 13;

/// `[ρ entries (re, im), Bloch x y z, N1, N2]` for a qubit.
pub fn checkpoint_row(rho: &ComplexMatrix, n1: u64, n2: u64, out: &mut Vec<f64>) {
    assert_eq!(rho.dim(), 2, "ensemble summaries are defined for qubits");
    for z in rho.entries() {
        out.push(z.re);
        out.push(z.im);
    }
    out.extend(crate::algebra::bloch_components(rho));
    out.push(n1 as f64);
    out.push(n2 as f64);
}

/// Collects checkpoint rows for one path.
#[derive(Clone, Debug)]
pub struct CheckpointRecorder<'a> {
    checkpoints: &'a Checkpoints,
    next: usize,
    row: Vec<f64>,
}

impl<'a> CheckpointRecorder<'a> {
    pub fn new(checkpoints: &'a Checkpoints) -> Self {
        CheckpointRecorder {
            checkpoints,
            next: 0,
            row: Vec::with_capacity(checkpoints.len() * ROW_WIDTH),
        }
    }

    #[inline]
    pub fn observe(&mut self, step: usize, rho: &ComplexMatrix, n1: u64, n2: u64) {
        while self.next < self.checkpoints.len() && self.checkpoints.steps[self.next] == step {
            checkpoint_row(rho, n1, n2, &mut self.row);
            self.next += 1;
        }
    }

    pub fn finish(self) -> Vec<f64> {
        assert_eq!(self.next, self.checkpoints.len(), "path ended before its last checkpoint");
        self.row
    }
}

/// One path's contribution: checkpoint rows plus diagnostics.
#[derive(Clone, Debug, Default)]
pub struct PathSummary {
    pub row: Vec<f64>,
    pub max_repair: f64,
    pub suppressed_jumps: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckpointSummary {
    pub t: f64,
    pub rho_mean: [[f64; 2]; 4],
    pub rho_stderr: [[f64; 2]; 4],
    pub bloch_mean: [f64; 3],
    pub bloch_stderr: [f64; 3],
    #[serde(rename = "N1")]
    pub n1: SampleStats,
    #[serde(rename = "N2")]
    pub n2: SampleStats,
}

impl CheckpointSummary {
    pub fn mean_state(&self) -> ComplexMatrix {
        ComplexMatrix::from_row_major(2, self.rho_mean.iter().map(|[re, im]| C64::new(*re, *im)).collect())
            .expect("2x2")
    }
}

/// Ensemble statistics at every checkpoint.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleSummary {
    pub paths: usize,
    pub seed: u64,
    pub checkpoints: Vec<CheckpointSummary>,
    pub max_repair: f64,
    pub suppressed_jumps: u64,
}

impl EnsembleSummary {
    pub fn from_paths(seed: u64, checkpoints: &Checkpoints, paths: &[PathSummary]) -> Self {
        let rows: Vec<Vec<f64>> = paths.iter().map(|p| p.row.clone()).collect();
        let stats = column_stats(&rows);
        let summaries = (0..checkpoints.len())
            .map(|c| {
                let s = &stats[c * ROW_WIDTH..(c + 1) * ROW_WIDTH];
                let pair = |k: usize, f: fn(&SampleStats) -> f64| [f(&s[2 * k]), f(&s[2 * k + 1])];
                CheckpointSummary {
                    t: checkpoints.times[c],
                    rho_mean: std::array::from_fn(|k| pair(k, |x| x.mean)),
                    rho_stderr: std::array::from_fn(|k| pair(k, |x| x.stderr)),
                    bloch_mean: std::array::from_fn(|k| s[8 + k].mean),
                    bloch_stderr: std::array::from_fn(|k| s[8 + k].stderr),
                    n1: s[11],
                    n2: s[12],
                }
            })
            .collect();
        EnsembleSummary {
            paths: paths.len(),
            seed,
            checkpoints: summaries,
            max_repair: paths.iter().map(|p| p.max_repair).fold(0.0, f64::max),
            suppressed_jumps: paths.iter().map(|p| p.suppressed_jumps).sum(),
        }
    }

    /// Largest Bloch-coordinate z-score against reference states at the
    /// same checkpoints.
    pub fn max_z_against(&self, reference: &[DensityMatrix]) -> f64 {
        self.checkpoints
            .iter()
            .zip(reference)
            .flat_map(|(c, r)| {
                let b = r.bloch();
                (0..3).map(move |k| z_score(c.bloch_mean[k] - b[k], c.bloch_stderr[k]))
            })
            .fold(0.0, f64::max)
    }
}

/// Gaps at or below this are rounding noise, not statistical signal.
pub const ROUNDING_GAP: f64 = 1e-12;

/// `|gap| / stderr`; a gap at rounding level counts as exact agreement
/// whatever the spread, and a larger gap with zero spread as infinite.
pub fn z_score(gap: f64, stderr: f64) -> f64 {
    if gap.abs() <= ROUNDING_GAP {
        0.0
    } else if stderr > 0.0 {
        (gap / stderr).abs()
    } else {
        f64::INFINITY
    }
}

/// Bloch-coordinate comparison of two ensembles with pooled standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleComparison {
    pub t: Vec<f64>,
    /// Per checkpoint and coordinate: `|mean_a − mean_b| / √(se_a² + se_b²)`.
    pub z: Vec<[f64; 3]>,
    pub max_z: f64,
    pub n1_z: f64,
    pub n2_z: f64,
}

pub fn compare_ensembles(a: &EnsembleSummary, b: &EnsembleSummary) -> Result<EnsembleComparison> {
    if a.checkpoints.len() != b.checkpoints.len() {
        return Err(Error::invalid("ensembles have different checkpoints"));
    }
    let mut t = Vec::new();
    let mut z = Vec::new();
    for (ca, cb) in a.checkpoints.iter().zip(&b.checkpoints) {
        if (ca.t - cb.t).abs() > 1e-9 {
            return Err(Error::invalid(format!("checkpoint times differ: {} vs {}", ca.t, cb.t)));
        }
        t.push(ca.t);
        z.push(std::array::from_fn(|k| {
            let pooled = ca.bloch_stderr[k].hypot(cb.bloch_stderr[k]);
            z_score(ca.bloch_mean[k] - cb.bloch_mean[k], pooled)
        }));
    }
    let max_z = z.iter().flat_map(|r: &[f64; 3]| r.iter().copied()).fold(0.0, f64::max);
    let last_a = a.checkpoints.last().expect("nonempty");
    let last_b = b.checkpoints.last().expect("nonempty");
    let counter_z = |x: SampleStats, y: SampleStats| z_score(x.mean - y.mean, x.stderr.hypot(y.stderr));
    Ok(EnsembleComparison {
        t,
        z,
        max_z,
        n1_z: counter_z(last_a.n1, last_b.n1),
        n2_z: counter_z(last_a.n2, last_b.n2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_of_order() {
        let a: Vec<u64> = (0..4).map(|i| path_rng(7, i, 1).random()).collect();
        let b: Vec<u64> = (0..4).rev().map(|i| path_rng(7, i, 1).random()).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
        assert_ne!(path_rng(7, 0, 1).random::<u64>(), path_rng(7, 0, 2).random::<u64>());
        assert_ne!(path_rng(7, 0, 1).random::<u64>(), path_rng(8, 0, 1).random::<u64>());
    }

    #[test]
    fn run_paths_keeps_order_and_tags_errors() {
        let out = run_paths(100, |i| Ok(i * 2)).unwrap();
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        let err = run_paths(10, |i| {
            if i >= 3 {
                Err(Error::Divergence {
                    path: None,
                    step: 5,
                    detail: "x".into(),
                })
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { path: Some(3), step: 5, .. }));
    }

    #[test]
    fn stats() {
        let s = sample_stats(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        let same = sample_stats(&[0.3; 10]);
        assert_eq!(same.stderr, 0.0);
        let xs: Vec<f64> = (0..1000).map(|k| (k as f64).sin()).collect();
        assert!((pairwise_sum(&xs) - xs.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_grids() {
        let c = Checkpoints::uniform(100, 10, 0.01).unwrap();
        assert_eq!(c.steps[0], 10);
        assert_eq!(c.last_step(), 100);
        let c = Checkpoints::at_times(&[0.5, 1.0, 2.0], 1e-3).unwrap();
        assert_eq!(c.steps, vec![500, 1000, 2000]);
        assert!(Checkpoints::at_times(&[0.00015], 1e-4).is_err());
        assert_eq!(step_count(1.0, 1e-4).unwrap(), 10_000);
        assert!(step_count(1.0, 0.3).is_err());
    }

    #[test]
    fn z_scores() {
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.0), f64::INFINITY);
        assert_eq!(z_score(-0.2, 0.1), 2.0);
        assert_eq!(z_score(3e-17, 1e-19), 0.0);
    }
}
