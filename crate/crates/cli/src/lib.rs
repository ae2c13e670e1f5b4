// SPDX-License-Identifier: Apache-2.0

//! Desk-scale benchmark harness for the sharded array and its baselines.
//!
//! Every experiment replays the same operations on a sequential oracle and
//! refuses to report timings when the structure's contents disagree.

pub mod experiments;
pub mod oracle;
pub mod subject;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;
use shardvec_core::{BucketLayout, ReserveStrategy, StructureKind};

pub use experiments::{
    bench_grow_insert_rw, bench_insert_algos, bench_shard_sweep, bench_two_phase, run_memory_model,
    TwoPhaseOutcome, RW_PASSES,
};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] shardvec_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("oracle mismatch in {context}: {detail}")]
    Oracle { context: String, detail: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;

/// How the read/write kernel walks the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RwMode {
    /// Global index per element, directory search per element.
    Global,
    /// Global index ranges, one directory search per task.
    GlobalCached,
    /// One task per shard (or chunk).
    #[default]
    PerShard,
}

impl RwMode {
    pub const ALL: [RwMode; 3] = [RwMode::Global, RwMode::GlobalCached, RwMode::PerShard];

    pub fn as_str(&self) -> &'static str {
        match self {
            RwMode::Global => "global",
            RwMode::GlobalCached => "global_cached",
            RwMode::PerShard => "per_shard",
        }
    }
}

impl fmt::Display for RwMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RwMode {
    type Err = BenchError;

    fn from_str(s: &str) -> BenchResult<Self> {
        RwMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown rw mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub structure: StructureKind,
    /// Shard counts; single-structure experiments use the first.
    pub shards: Vec<usize>,
    pub first_bucket: usize,
    pub workers: usize,
    pub initial_size: usize,
    /// Duplication rounds.
    pub iterations: usize,
    pub algo: ReserveStrategy,
    pub rw_mode: RwMode,
    /// Consecutive indices per task in the global rw modes.
    pub rw_grain: usize,
    pub work_passes: Vec<usize>,
    /// Elements inserted per existing element in each two-phase round.
    pub insert_multiplier: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            structure: StructureKind::GgArray,
            shards: vec![shardvec_core::DEFAULT_SHARDS],
            first_bucket: shardvec_core::DEFAULT_FIRST_BUCKET,
            workers: 1,
            initial_size: 100_000,
            iterations: 10,
            algo: ReserveStrategy::Scan,
            rw_mode: RwMode::PerShard,
            rw_grain: 1024,
            work_passes: vec![1, 10, 100, 1000],
            insert_multiplier: 1,
            repetitions: 1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> BenchResult<()> {
        let positive = [
            ("iterations", self.iterations),
            ("workers", self.workers),
            ("initial size", self.initial_size),
            ("repetitions", self.repetitions),
            ("rw grain", self.rw_grain),
            ("insert multiplier", self.insert_multiplier),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(BenchError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.shards.is_empty() || self.shards.contains(&0) {
            return Err(BenchError::Config(
                "shard counts must be a non-empty list of positive values".into(),
            ));
        }
        if self.work_passes.is_empty() || self.work_passes.contains(&0) {
            return Err(BenchError::Config("work passes must be a non-empty list of positive values".into()));
        }
        BucketLayout::new(self.first_bucket)?;
        let final_size = self.final_size()?;
        if final_size > u32::MAX as usize {
            return Err(BenchError::Config(format!("final size {final_size} does not fit 32-bit tags")));
        }
        Ok(())
    }

    /// `initial_size * 2^iterations`.
    pub fn final_size(&self) -> BenchResult<usize> {
        u32::try_from(self.iterations)
            .ok()
            .and_then(|it| 1usize.checked_shl(it))
            .filter(|&f| f != 0 && self.iterations < usize::BITS as usize)
            .and_then(|f| self.initial_size.checked_mul(f))
            .ok_or_else(|| BenchError::Config("initial size * 2^iterations overflows".into()))
    }

    pub fn primary_shards(&self) -> usize {
        self.shards[0]
    }

    /// Run `f` on a pool of exactly `workers` threads.
    pub fn in_pool<R: Send>(&self, f: impl FnOnce() -> R + Send) -> BenchResult<R> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.workers).build()?;
        Ok(pool.install(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Grow,
    Insert,
    Rw,
    /// Whole-run summary row.
    Total,
}

/// One CSV row: experiment, config echo, then measurements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub experiment: &'static str,
    pub structure: &'static str,
    pub shards: usize,
    pub first_bucket: usize,
    pub workers: usize,
    pub initial_size: usize,
    pub iterations: usize,
    pub algo: &'static str,
    pub rw_mode: &'static str,
    pub rw_grain: usize,
    pub work_passes: usize,
    pub insert_multiplier: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub repetition: usize,
    pub iteration: usize,
    pub phase: Phase,
    pub elapsed_ns: u64,
    pub size_after: usize,
    pub capacity_after: usize,
    pub counter_ops: u64,
    pub elements_copied: u64,
    pub buckets_allocated: usize,
    /// Contents fingerprint, filled on the last row of each iteration.
    pub checksum: String,
    pub speedup: Option<f64>,
}

/// CSV header, in order.
pub const BENCH_COLUMNS: [&str; 25] = [
    "experiment",
    "structure",
    "shards",
    "first_bucket",
    "workers",
    "initial_size",
    "iterations",
    "algo",
    "rw_mode",
    "rw_grain",
    "work_passes",
    "insert_multiplier",
    "repetitions",
    "seed",
    "repetition",
    "iteration",
    "phase",
    "elapsed_ns",
    "size_after",
    "capacity_after",
    "counter_ops",
    "elements_copied",
    "buckets_allocated",
    "checksum",
    "speedup",
];

/// Columns that depend on wall-clock time.
pub const TIMING_COLUMNS: [&str; 2] = ["elapsed_ns", "speedup"];

impl BenchRecord {
    pub(crate) fn new(experiment: &'static str, config: &BenchConfig, structure: StructureKind) -> Self {
        Self {
            experiment,
            structure: structure.as_str(),
            shards: config.primary_shards(),
            first_bucket: config.first_bucket,
            workers: config.workers,
            initial_size: config.initial_size,
            iterations: config.iterations,
            algo: config.algo.as_str(),
            rw_mode: config.rw_mode.as_str(),
            rw_grain: config.rw_grain,
            work_passes: 0,
            insert_multiplier: config.insert_multiplier,
            repetitions: config.repetitions,
            seed: config.seed,
            repetition: 0,
            iteration: 0,
            phase: Phase::Total,
            elapsed_ns: 0,
            size_after: 0,
            capacity_after: 0,
            counter_ops: 0,
            elements_copied: 0,
            buckets_allocated: 0,
            checksum: String::new(),
            speedup: None,
        }
    }
}

pub fn write_records<W: Write>(records: &[BenchRecord], out: W, header: bool) -> BenchResult<()> {
    let mut writer =
        csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    if header {
        writer.write_record(BENCH_COLUMNS)?;
    }
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        let bad = [
            BenchConfig { iterations: 0, ..Default::default() },
            BenchConfig { workers: 0, ..Default::default() },
            BenchConfig { initial_size: 0, ..Default::default() },
            BenchConfig { shards: vec![], ..Default::default() },
            BenchConfig { first_bucket: 3, ..Default::default() },
            BenchConfig { work_passes: vec![0], ..Default::default() },
            BenchConfig { iterations: 80, ..Default::default() },
            BenchConfig { initial_size: 1 << 30, iterations: 4, ..Default::default() },
        ];
        for config in bad {
            assert!(config.validate().is_err(), "{config:?}");
        }
    }

    #[test]
    fn final_size_doubles_per_iteration() {
        let config = BenchConfig { initial_size: 100_000, iterations: 10, ..Default::default() };
        assert_eq!(config.final_size().unwrap(), 102_400_000);
    }

    #[test]
    fn header_matches_serialized_fields() {
        let record = BenchRecord::new("x", &BenchConfig::default(), StructureKind::Static);
        let mut buf = Vec::new();
        let mut writer = csv::Writer::from_writer(&mut buf);
        writer.serialize(&record).unwrap();
        drop(writer);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), BENCH_COLUMNS.join(","));
    }

    #[test]
    fn rw_mode_names_roundtrip() {
        for mode in RwMode::ALL {
            assert_eq!(mode.as_str().parse::<RwMode>().unwrap(), mode);
        }
        assert!("rows".parse::<RwMode>().is_err());
    }
}
