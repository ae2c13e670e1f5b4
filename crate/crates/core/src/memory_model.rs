// SPDX-License-Identifier: Apache-2.0

//! Memory needed under uncertain insertion demand.
//!
//! The final size of an array is `n * f` where the factor `f` is log-normal
//! with parameters `(mu, sigma)`. A static array has to be sized up front for
//! the `1 - p` quantile of the demand if it may fail in at most a fraction `p`
//! of runs. The sharded bucket array only allocates what the realized demand
//! needs, rounded up to whole buckets in every shard.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::bucket_vector::BucketLayout;
use crate::error::{Error, Result};

/// Bytes per element in every byte figure (32-bit elements).
pub const ELEMENT_BYTES: usize = 4;

/// Sigma grid step for [`run_model`].
pub const SIGMA_STEP: f64 = 0.1;
pub const SIGMA_MAX: f64 = 2.0;

const SAMPLES_PER_STREAM: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryModelParams {
    pub mu: f64,
    pub sigma: f64,
    pub failure_prob: f64,
    /// Initial array size `n`.
    pub base_size: usize,
    /// Monte Carlo sample count.
    pub samples: usize,
    pub seed: u64,
}

impl Default for MemoryModelParams {
    fn default() -> Self {
        Self { mu: 0.0, sigma: 1.0, failure_prob: 0.01, base_size: 1_000_000, samples: 100_000, seed: 0 }
    }
}

impl MemoryModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.failure_prob > 0.0 && self.failure_prob < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "failure probability must lie in (0, 1), got {}",
                self.failure_prob
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite, got {}", self.mu)));
        }
        if self.base_size == 0 || self.samples == 0 {
            return Err(Error::InvalidParameter("base size and sample count must be positive".into()));
        }
        Ok(())
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }
}

/// Inverse of the standard normal CDF.
///
/// Rational approximation in three regions (lower tail, central, upper tail);
/// relative error below 1.2e-9 over (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] =
        [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Demand multiplier a static array must be sized for: `exp(mu + sigma * z)`
/// with `z` the `1 - p` standard normal quantile.
pub fn static_factor(params: &MemoryModelParams) -> Result<f64> {
    params.validate()?;
    Ok((params.mu + params.sigma * inverse_normal_cdf(1.0 - params.failure_prob)).exp())
}

/// Elements a static array must pre-allocate to fail at most `p` of the time.
pub fn static_requirement_elements(params: &MemoryModelParams) -> Result<f64> {
    Ok(params.base_size as f64 * static_factor(params)?)
}

/// Bytes a static array must pre-allocate to fail at most `p` of the time.
pub fn static_requirement(params: &MemoryModelParams) -> Result<f64> {
    Ok(static_requirement_elements(params)? * ELEMENT_BYTES as f64)
}

/// Capacity in elements the sharded array ends up with for `demand`
/// elements spread evenly over `shards` shards.
pub fn ggarray_capacity_elements(demand: usize, shards: usize, first_bucket: usize) -> Result<usize> {
    if shards == 0 {
        return Err(Error::InvalidParameter("shard count must be at least 1".into()));
    }
    let layout = BucketLayout::new(first_bucket)?;
    let base = demand / shards;
    let extra = demand % shards;
    let per_shard = |d: usize| layout.capacity_for_buckets(layout.buckets_for_capacity(d));
    Ok(extra * per_shard(base + 1) + (shards - extra) * per_shard(base))
}

/// [`ggarray_capacity_elements`] in bytes.
pub fn ggarray_capacity_for(demand: usize, shards: usize, first_bucket: usize) -> Result<usize> {
    Ok(ggarray_capacity_elements(demand, shards, first_bucket)? * ELEMENT_BYTES)
}

/// `samples` standard normal draws, deterministic for a seed regardless of
/// the thread count.
pub fn standard_normal_samples(samples: usize, seed: u64) -> Vec<f64> {
    let streams = samples.div_ceil(SAMPLES_PER_STREAM);
    let chunks: Vec<Vec<f64>> = (0..streams)
        .into_par_iter()
        .map(|stream| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64);
            let n = SAMPLES_PER_STREAM.min(samples - stream * SAMPLES_PER_STREAM);
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect();
    chunks.concat()
}

/// Realized demand in elements for one normal draw.
pub fn demand_for(params: &MemoryModelParams, z: f64) -> usize {
    (params.base_size as f64 * (params.mu + params.sigma * z).exp()).ceil() as usize
}

/// Empirical `1 - p` quantile of the demand factor over `params.samples` draws.
pub fn monte_carlo_static_factor(params: &MemoryModelParams) -> Result<f64> {
    params.validate()?;
    let mut z = standard_normal_samples(params.samples, params.seed);
    let rank =
        (((1.0 - params.failure_prob) * params.samples as f64).ceil() as usize).clamp(1, params.samples) - 1;
    let (_, q, _) = z.select_nth_unstable_by(rank, f64::total_cmp);
    Ok((params.mu + params.sigma * *q).exp())
}

/// Fraction of draws whose demand exceeds `capacity_elements`.
pub fn empirical_failure_rate(params: &MemoryModelParams, capacity_elements: f64) -> Result<f64> {
    params.validate()?;
    let z = standard_normal_samples(params.samples, params.seed);
    let failures = z
        .par_iter()
        .filter(|&&z| params.base_size as f64 * (params.mu + params.sigma * z).exp() > capacity_elements)
        .count();
    Ok(failures as f64 / params.samples as f64)
}

/// One sigma of the memory curves. Byte figures use [`ELEMENT_BYTES`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryRow {
    pub sigma: f64,
    /// Mean realized demand.
    pub optimal_mean: f64,
    /// Static sizing at the `1 - p` quantile.
    pub static_p99: f64,
    /// Mean sharded-array capacity.
    pub ggarray_mean: f64,
    pub static_ratio: f64,
    pub ggarray_ratio: f64,
    /// Largest per-sample capacity / demand ratio.
    pub ggarray_worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub shards: usize,
    pub first_bucket: usize,
    pub rows: Vec<MemoryRow>,
}

#[derive(Serialize)]
struct CsvRow {
    sigma: f64,
    optimal_mean: f64,
    static_p99: f64,
    ggarray_mean: f64,
    static_ratio: f64,
    ggarray_ratio: f64,
}

pub const CSV_COLUMNS: [&str; 6] =
    ["sigma", "optimal_mean", "static_p99", "ggarray_mean", "static_ratio", "ggarray_ratio"];

/// The default sigma grid, `0.0, 0.1, ..., 2.0`.
pub fn sigma_grid() -> Vec<f64> {
    let steps = (SIGMA_MAX / SIGMA_STEP).round() as usize;
    (0..=steps).map(|i| (i as f64 * SIGMA_STEP * 10.0).round() / 10.0).collect()
}

/// Evaluate the three curves for every sigma in `sigmas`. The same normal
/// draws are reused for every sigma, so the curves are smooth in sigma.
pub fn run_model(
    params: &MemoryModelParams,
    sigmas: &[f64],
    shards: usize,
    first_bucket: usize,
) -> Result<MemoryReport> {
    params.validate()?;
    BucketLayout::new(first_bucket)?;
    let z = standard_normal_samples(params.samples, params.seed);
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let p = params.with_sigma(sigma);
        p.validate()?;
        let per_sample: Vec<(f64, f64, f64)> = z
            .par_iter()
            .map(|&z| {
                let demand = demand_for(&p, z);
                let cap = ggarray_capacity_elements(demand, shards, first_bucket).expect("validated");
                let ratio = if demand == 0 { 1.0 } else { cap as f64 / demand as f64 };
                (demand as f64, cap as f64, ratio)
            })
            .collect();
        // Sequential sums keep the result independent of the thread count.
        let (mut demand_sum, mut cap_sum, mut worst) = (0.0, 0.0, 0.0f64);
        for &(d, c, r) in &per_sample {
            demand_sum += d;
            cap_sum += c;
            worst = worst.max(r);
        }
        let count = per_sample.len() as f64;
        let bytes = ELEMENT_BYTES as f64;
        let optimal_mean = demand_sum / count * bytes;
        let ggarray_mean = cap_sum / count * bytes;
        let static_p99 = static_requirement(&p)?;
        rows.push(MemoryRow {
            sigma,
            optimal_mean,
            static_p99,
            ggarray_mean,
            static_ratio: static_p99 / optimal_mean,
            ggarray_ratio: ggarray_mean / optimal_mean,
            ggarray_worst_ratio: worst,
        });
    }
    Ok(MemoryReport { shards, first_bucket, rows })
}

impl MemoryReport {
    /// CSV with the columns in [`CSV_COLUMNS`].
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(header)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        for row in &self.rows {
            writer.serialize(CsvRow {
                sigma: row.sigma,
                optimal_mean: row.optimal_mean,
                static_p99: row.static_p99,
                ggarray_mean: row.ggarray_mean,
                static_ratio: row.static_ratio,
                ggarray_ratio: row.ggarray_ratio,
            })?;
        }
        writer.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}
