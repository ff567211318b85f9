//! Monte Carlo estimates and deterministic parallel path batches.
//!
//! Paths are processed in fixed-size chunks; every chunk is a pure function of
//! its index range, and chunk results are merged in index order, so results do
//! not depend on the number of worker threads.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::path_engine::{simulate_into, PathSample, ProcessSpec, TimeGrid};
use crate::rng;

/// Paths per work unit.
pub const CHUNK: usize = 4096;

/// Mean with standard error. A degenerate estimate (no information) carries
/// `se = +inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    #[serde(with = "inf_as_null")]
    pub se: f64,
    pub n: usize,
    pub seed: u64,
}

impl MCEstimate {
    pub fn new(mean: f64, se: f64, n: usize, seed: u64) -> Self {
        Self { mean, se, n, seed }
    }

    /// Exact value (zero uncertainty), e.g. a closed-form oracle.
    pub fn exact(mean: f64) -> Self {
        Self { mean, se: 0.0, n: 1, seed: 0 }
    }

    pub fn degenerate(n: usize, seed: u64) -> Self {
        Self { mean: 0.0, se: f64::INFINITY, n: n.max(1), seed }
    }

    pub fn is_degenerate(&self) -> bool {
        !self.se.is_finite()
    }

    /// Sample mean and `sd / sqrt(N)` of `samples`.
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let m = Moments::from_slice(samples);
        Self::new(m.mean(), m.se(), samples.len().max(1), seed)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { mean: self.mean * c, se: self.se * c.abs(), ..*self }
    }

    /// `|a - b| / sqrt(se_a^2 + se_b^2)` for independent estimates. Two exact
    /// and equal values score 0; exact and unequal score `+inf`.
    pub fn z_score(&self, other: &MCEstimate) -> f64 {
        z_score(self.mean - other.mean, self.se.hypot(other.se))
    }
}

/// `|diff| / se`, with `0 / 0 = 0`.
pub fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        diff.abs() / se
    }
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Streaming mean and variance (Chan et al. merge), order-sensitive only
/// through floating point and always merged in a fixed order here.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Moments::default();
        for &x in xs {
            m.push(x);
        }
        m
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance.
    pub fn var(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn se(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.var() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self, seed: u64) -> MCEstimate {
        MCEstimate::new(self.mean(), self.se(), self.n.max(1), seed)
    }
}

/// Splits `0..n` into fixed chunks, maps each in parallel and returns the
/// per-chunk results in index order.
pub fn par_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect()
}

/// Identifies an independent batch of paths: the master seed and a stream
/// number that separates batches used for different sides of an identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stream {
    pub master: u64,
    pub id: u64,
}

impl Stream {
    pub fn new(master: u64, id: u64) -> Self {
        Self { master, id }
    }

    pub fn key(&self) -> u64 {
        rng::stream_seed(self.master, self.id)
    }

    pub fn path_tag(&self, index: usize) -> u64 {
        rng::path_seed_tag(self.key(), index as u64)
    }
}

/// Simulates `n_paths` paths of `spec` from `stream` and maps each to a
/// record with `f`, preserving path order.
pub fn map_paths<R, F>(spec: &ProcessSpec, grid: TimeGrid, stream: Stream, n_paths: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&PathSample) -> Result<R> + Sync,
{
    let spec = spec.validated()?;
    let chunks = par_chunks(n_paths, |range| -> Result<Vec<R>> {
        let mut buf = PathSample::buffer(spec, grid);
        let mut out = Vec::with_capacity(range.len());
        for i in range {
            simulate_into(&spec, grid, stream.path_tag(i), &mut buf)?;
            out.push(f(&buf)?);
        }
        Ok(out)
    });
    let mut all = Vec::with_capacity(n_paths);
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

/// Like [`map_paths`] for samplers that are not one of the five processes.
pub fn map_indices<R, F>(n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync,
{
    let chunks = par_chunks(n, |range| range.map(&f).collect::<Result<Vec<R>>>());
    let mut all = Vec::with_capacity(n);
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_matches_direct() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let direct = Moments::from_slice(&xs);
        let mut merged = Moments::default();
        for c in xs.chunks(77) {
            merged.merge(&Moments::from_slice(c));
        }
        assert!((direct.mean() - merged.mean()).abs() < 1e-12);
        assert!((direct.var() - merged.var()).abs() < 1e-10);
    }

    #[test]
    fn z_scores() {
        let a = MCEstimate::new(1.0, 0.3, 10, 0);
        let b = MCEstimate::new(1.5, 0.4, 10, 0);
        assert!((a.z_score(&b) - 1.0).abs() < 1e-15);
        assert_eq!(MCEstimate::exact(0.0).z_score(&MCEstimate::exact(0.0)), 0.0);
        assert!(MCEstimate::degenerate(3, 0).is_degenerate());
    }

    #[test]
    fn batches_are_thread_independent() {
        let grid = TimeGrid::new(64).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                map_paths(&ProcessSpec::bm(), grid, Stream::new(7, 1), 9000, |p| Ok(p.values[64])).unwrap()
            })
        };
        assert_eq!(run(1), run(3));
    }
}
