// SPDX-License-Identifier: Apache-2.0

//! The experiment drivers. Each returns its CSV rows after checking the
//! final contents against a sequential replay.

use std::time::Instant;

use rayon::prelude::*;
use shardvec_core::memory_model::{run_model, sigma_grid};
use shardvec_core::{
    GrowableArray, MemoryModelParams, MemoryReport, ReserveStrategy, StructureKind, StructureParams,
    DEFAULT_CHUNK_SIZE,
};

use crate::oracle::{round_values, Oracle};
use crate::subject::Subject;
use crate::{BenchConfig, BenchError, BenchRecord, BenchResult, Phase, RwMode};

/// +1 passes in one rw phase.
pub const RW_PASSES: usize = 30;

fn elapsed_ns(start: Instant) -> u64 {
    start.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

fn params_for(config: &BenchConfig, shards: usize) -> BenchResult<StructureParams> {
    Ok(StructureParams {
        static_capacity: config.final_size()?,
        initial_capacity: config.initial_size,
        shards,
        first_bucket: config.first_bucket,
        chunk_size: DEFAULT_CHUNK_SIZE,
    })
}

struct Duplication<'a> {
    config: &'a BenchConfig,
    experiment: &'static str,
    kind: StructureKind,
    shards: usize,
    algo: ReserveStrategy,
    record_grow: bool,
    rw_modes: &'a [RwMode],
}

impl Duplication<'_> {
    fn record(&self, repetition: usize, iteration: usize, phase: Phase, subject: &Subject) -> BenchRecord {
        let mut r = BenchRecord::new(self.experiment, self.config, self.kind);
        r.shards = self.shards;
        r.algo = self.algo.as_str();
        r.repetition = repetition;
        r.iteration = iteration;
        r.phase = phase;
        r.size_after = subject.len();
        r.capacity_after = subject.capacity();
        r
    }

    /// Prefill to the initial size, then double `iterations` times.
    fn run(&self, repetition: usize, out: &mut Vec<BenchRecord>) -> BenchResult<Oracle> {
        let config = self.config;
        let mut subject = Subject::new(self.kind, &params_for(config, self.shards)?)?;
        let mut oracle = Oracle::new();
        let initial = round_values(config.seed, 0, config.initial_size);
        subject.grow(initial.len())?;
        subject.insert(&initial, config.workers, self.algo)?;
        oracle.push_all(&initial);

        for iteration in 1..=config.iterations {
            let n = subject.len();
            if self.record_grow {
                let start = Instant::now();
                let stats = subject.grow(2 * n)?;
                let ns = elapsed_ns(start);
                let mut r = self.record(repetition, iteration, Phase::Grow, &subject);
                r.elapsed_ns = ns;
                r.elements_copied = stats.elements_copied;
                r.buckets_allocated = stats.allocations;
                out.push(r);
            }

            let values = round_values(config.seed, iteration as u64, n);
            let ops_before = subject.counter_ops();
            let start = Instant::now();
            subject.insert(&values, config.workers, self.algo)?;
            let ns = elapsed_ns(start);
            oracle.push_all(&values);
            let mut r = self.record(repetition, iteration, Phase::Insert, &subject);
            r.elapsed_ns = ns;
            r.counter_ops = subject.counter_ops() - ops_before;
            out.push(r);

            for &mode in self.rw_modes {
                let start = Instant::now();
                subject.rw(mode, config.rw_grain, RW_PASSES);
                let ns = elapsed_ns(start);
                oracle.add_all(RW_PASSES as u32);
                let mut r = self.record(repetition, iteration, Phase::Rw, &subject);
                r.elapsed_ns = ns;
                r.rw_mode = mode.as_str();
                out.push(r);
            }

            let context = format!("{} {} iteration {iteration}", self.experiment, self.kind);
            let fp = oracle.check(subject.to_vec(), &context)?;
            if let Some(last) = out.last_mut() {
                last.checksum = fp.to_string();
            }
        }
        Ok(oracle)
    }
}

/// Duplication rounds on the static array with each reservation strategy.
pub fn bench_insert_algos(config: &BenchConfig) -> BenchResult<Vec<BenchRecord>> {
    config.validate()?;
    config.in_pool(|| {
        let mut out = Vec::new();
        let mut finals = Vec::new();
        for algo in ReserveStrategy::ALL {
            let run = Duplication {
                config,
                experiment: "insert-algos",
                kind: StructureKind::Static,
                shards: config.primary_shards(),
                algo,
                record_grow: false,
                rw_modes: &[],
            };
            for repetition in 0..config.repetitions {
                finals.push(run.run(repetition, &mut out)?.fingerprint());
            }
        }
        if finals.windows(2).any(|w| w[0] != w[1]) {
            return Err(BenchError::Oracle {
                context: "insert-algos".into(),
                detail: "strategies ended with different contents".into(),
            });
        }
        Ok(out)
    })?
}

/// Grow, insert and every rw mode on the sharded array, for each shard count.
pub fn bench_shard_sweep(config: &BenchConfig) -> BenchResult<Vec<BenchRecord>> {
    config.validate()?;
    config.in_pool(|| {
        let mut out = Vec::new();
        for &shards in &config.shards {
            let run = Duplication {
                config,
                experiment: "shard-sweep",
                kind: StructureKind::GgArray,
                shards,
                algo: config.algo,
                record_grow: true,
                rw_modes: &RwMode::ALL,
            };
            for repetition in 0..config.repetitions {
                run.run(repetition, &mut out)?;
            }
        }
        Ok(out)
    })?
}

/// Grow, insert and rw per duplication round for the configured structure.
pub fn bench_grow_insert_rw(config: &BenchConfig) -> BenchResult<Vec<BenchRecord>> {
    config.validate()?;
    config.in_pool(|| {
        let mut out = Vec::new();
        let modes = [config.rw_mode];
        let run = Duplication {
            config,
            experiment: "grow-insert-rw",
            kind: config.structure,
            shards: config.primary_shards(),
            algo: config.algo,
            record_grow: true,
            rw_modes: &modes,
        };
        for repetition in 0..config.repetitions {
            run.run(repetition, &mut out)?;
        }
        Ok(out)
    })?
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseOutcome {
    pub records: Vec<BenchRecord>,
    /// `(work_passes, median chunk-table time / median sharded time)`.
    pub speedups: Vec<(usize, f64)>,
}

struct TwoPhaseRun {
    records: Vec<BenchRecord>,
    total_ns: u64,
}

fn two_phase_once(
    config: &BenchConfig,
    kind: StructureKind,
    work_passes: usize,
    repetition: usize,
) -> BenchResult<TwoPhaseRun> {
    let shards = config.primary_shards();
    let final_size = config.final_size()?;
    let mut subject = Subject::new(kind, &params_for(config, shards)?)?;
    let mut oracle = Oracle::new();
    let initial = round_values(config.seed, 0, config.initial_size);
    subject.grow(initial.len())?;
    subject.insert(&initial, config.workers, config.algo)?;
    oracle.push_all(&initial);

    let base = |round: usize, phase: Phase, subject: &Subject| {
        let mut r = BenchRecord::new("two-phase", config, kind);
        r.work_passes = work_passes;
        r.repetition = repetition;
        r.iteration = round;
        r.phase = phase;
        r.size_after = subject.len();
        r.capacity_after = subject.capacity();
        r
    };
    let mut records = Vec::new();
    let mut total_ns = 0;
    let mut round = 0;
    while subject.len() < final_size {
        round += 1;
        let len = subject.len();
        let add = len.saturating_mul(config.insert_multiplier).min(final_size - len);
        let values = round_values(config.seed, round as u64, add);

        let ops_before = subject.counter_ops();
        let start = Instant::now();
        let stats = subject.grow(len + add)?;
        subject.insert(&values, config.workers, config.algo)?;
        let insert_ns = elapsed_ns(start);
        oracle.push_all(&values);
        let mut r = base(round, Phase::Insert, &subject);
        r.elapsed_ns = insert_ns;
        r.counter_ops = subject.counter_ops() - ops_before;
        r.elements_copied = stats.elements_copied;
        r.buckets_allocated = stats.allocations;
        records.push(r);

        let start = Instant::now();
        match &mut subject {
            Subject::GgArray(array) => {
                let mut flat = array.flatten();
                for _ in 0..work_passes {
                    flat.par_iter_mut().for_each(|x| *x = x.wrapping_add(1));
                }
                *array = GrowableArray::from_flat(&flat, shards, config.first_bucket)?;
            }
            other => other.rw(RwMode::Global, config.rw_grain, work_passes),
        }
        let work_ns = elapsed_ns(start);
        oracle.add_all(work_passes as u32);
        let mut r = base(round, Phase::Rw, &subject);
        r.elapsed_ns = work_ns;
        records.push(r);
        total_ns += insert_ns + work_ns;
    }
    let context = format!("two-phase {kind} work_passes {work_passes}");
    let fp = oracle.check(subject.to_vec(), &context)?;
    let mut r = base(round, Phase::Total, &subject);
    r.elapsed_ns = total_ns;
    r.checksum = fp.to_string();
    records.push(r);
    Ok(TwoPhaseRun { records, total_ns })
}

fn median(values: &mut [u64]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

/// Alternating insertion and work phases. The sharded array is flattened for
/// the work phase and rebuilt afterwards; the chunk table works in place
/// through its virtual index.
pub fn bench_two_phase(config: &BenchConfig) -> BenchResult<TwoPhaseOutcome> {
    config.validate()?;
    config.in_pool(|| {
        let mut records = Vec::new();
        let mut speedups = Vec::new();
        for &work_passes in &config.work_passes {
            let mut gg_times = Vec::new();
            let mut chunk_times = Vec::new();
            for repetition in 0..config.repetitions {
                let mut gg = two_phase_once(config, StructureKind::GgArray, work_passes, repetition)?;
                let chunk = two_phase_once(config, StructureKind::ChunkTable, work_passes, repetition)?;
                if let Some(total) = gg.records.last_mut() {
                    total.speedup = Some(chunk.total_ns as f64 / gg.total_ns.max(1) as f64);
                }
                gg_times.push(gg.total_ns);
                chunk_times.push(chunk.total_ns);
                records.extend(gg.records);
                records.extend(chunk.records);
            }
            speedups.push((work_passes, median(&mut chunk_times) / median(&mut gg_times).max(1.0)));
        }
        Ok(TwoPhaseOutcome { records, speedups })
    })?
}

/// Memory curves over the default sigma grid.
pub fn run_memory_model(
    params: &MemoryModelParams,
    shards: usize,
    first_bucket: usize,
) -> BenchResult<MemoryReport> {
    Ok(run_model(params, &sigma_grid(), shards, first_bucket)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            shards: vec![4],
            first_bucket: 4,
            workers: 2,
            initial_size: 100,
            iterations: 4,
            repetitions: 2,
            work_passes: vec![1, 5],
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn insert_algos_rows_and_ops() {
        let config = small();
        let rows = bench_insert_algos(&config).unwrap();
        assert_eq!(rows.len(), 2 * config.repetitions * config.iterations);
        for row in &rows {
            assert_eq!(row.phase, Phase::Insert);
            assert_eq!(row.structure, "static");
            // n unit lanes split over two workers, well under one round each.
            let n = row.size_after / 2;
            let per_worker = [n.div_ceil(2), n / 2];
            let expected: u64 = match row.algo {
                "atomic" => n as u64,
                _ => per_worker.iter().map(|&w| w.div_ceil(32) as u64).sum(),
            };
            assert_eq!(row.counter_ops, expected, "{row:?}");
        }
        assert_eq!(rows.last().unwrap().size_after, 1600);
    }

    #[test]
    fn shard_sweep_covers_every_mode_and_count() {
        let config = BenchConfig { shards: vec![1, 3, 8], repetitions: 1, ..small() };
        let rows = bench_shard_sweep(&config).unwrap();
        assert_eq!(rows.len(), 3 * config.iterations * (2 + RwMode::ALL.len()));
        for s in [1, 3, 8] {
            assert!(rows.iter().any(|r| r.shards == s && r.rw_mode == "global_cached"));
        }
    }

    #[test]
    fn grow_insert_rw_copy_counters() {
        for kind in StructureKind::ALL {
            let config = BenchConfig { structure: kind, repetitions: 1, ..small() };
            let rows = bench_grow_insert_rw(&config).unwrap();
            let grows: Vec<_> = rows.iter().filter(|r| r.phase == Phase::Grow).collect();
            assert_eq!(grows.len(), config.iterations);
            for g in grows {
                match kind {
                    StructureKind::Doubling => assert!(g.elements_copied >= g.size_after as u64),
                    _ => assert_eq!(g.elements_copied, 0),
                }
            }
            assert_eq!(rows.last().unwrap().size_after, 1600);
        }
    }

    #[test]
    fn two_phase_final_size_ignores_multiplier() {
        for m in [1, 3, 10] {
            let config = BenchConfig { insert_multiplier: m, repetitions: 1, ..small() };
            let outcome = bench_two_phase(&config).unwrap();
            let totals: Vec<_> = outcome.records.iter().filter(|r| r.phase == Phase::Total).collect();
            assert_eq!(totals.len(), 4);
            assert!(totals.iter().all(|r| r.size_after == 1600));
            assert!(totals
                .windows(2)
                .all(|w| w[0].checksum == w[1].checksum || w[0].work_passes != w[1].work_passes));
            assert_eq!(outcome.speedups.len(), 2);
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3, 1, 2]), 2.0);
        assert_eq!(median(&mut [4, 1, 2, 3]), 2.5);
    }
}
