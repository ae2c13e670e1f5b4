// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use shardvec_cli::{
    bench_grow_insert_rw, bench_insert_algos, bench_shard_sweep, bench_two_phase, run_memory_model,
    write_records, BenchConfig, BenchResult, RwMode,
};
use shardvec_core::{MemoryModelParams, ReserveStrategy, StructureKind};

const SWEEP_SHARDS: [usize; 6] = [1, 8, 32, 128, 512, 2048];

#[derive(Parser, Debug)]
#[command(name = "shardvec", version, about = "Benchmarks for sharded growable arrays; writes CSV")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// static, doubling, chunktable or ggarray
    #[arg(long, global = true, default_value = "ggarray")]
    structure: StructureKind,
    /// Shard counts, comma separated. shard-sweep defaults to 1,8,32,128,512,2048.
    #[arg(long, global = true, value_delimiter = ',')]
    shards: Option<Vec<usize>>,
    #[arg(long, global = true, default_value_t = shardvec_core::DEFAULT_FIRST_BUCKET)]
    first_bucket: usize,
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value_t = 100_000)]
    initial_size: usize,
    /// Duplication rounds
    #[arg(long, global = true, default_value_t = 10)]
    iterations: usize,
    /// atomic or scan
    #[arg(long, global = true, default_value = "scan")]
    algo: ReserveStrategy,
    /// global, global_cached or per_shard
    #[arg(long, global = true, default_value = "per_shard")]
    rw_mode: RwMode,
    /// Consecutive indices per task in the global rw modes
    #[arg(long, global = true, default_value_t = 1024)]
    rw_grain: usize,
    #[arg(long, global = true, value_delimiter = ',', default_value = "1,10,100,1000")]
    work_passes: Vec<usize>,
    /// Two-phase: elements inserted per existing element each round
    #[arg(long, global = true, default_value_t = 1)]
    insert_multiplier: usize,
    #[arg(long, global = true, default_value_t = 1)]
    repetitions: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// CSV path [default: stdout]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = true, action = ArgAction::Set)]
    csv_header: bool,
    /// Memory model: Monte Carlo draws per sigma
    #[arg(long, global = true, default_value_t = 1_000_000)]
    samples: usize,
    /// Memory model: allowed failure probability of the static sizing
    #[arg(long, global = true, default_value_t = 0.01)]
    failure_prob: f64,
    /// Memory model: log-normal location
    #[arg(long, global = true, default_value_t = 0.0)]
    mu: f64,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Reservation strategies on the static array
    InsertAlgos,
    /// Grow, insert and rw timings across shard counts
    ShardSweep,
    /// Grow, insert and rw per duplication round for one structure
    GrowInsertRw,
    /// Insertion phases alternating with work phases, against the chunk table
    TwoPhase,
    /// Memory needed by static sizing and by the sharded array
    MemoryModel,
}

impl Cli {
    fn config(&self) -> BenchConfig {
        let default_shards = match self.command {
            Command::ShardSweep => SWEEP_SHARDS.to_vec(),
            _ => vec![shardvec_core::DEFAULT_SHARDS],
        };
        BenchConfig {
            structure: self.structure,
            shards: self.shards.clone().unwrap_or(default_shards),
            first_bucket: self.first_bucket,
            workers: self
                .workers
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            initial_size: self.initial_size,
            iterations: self.iterations,
            algo: self.algo,
            rw_mode: self.rw_mode,
            rw_grain: self.rw_grain,
            work_passes: self.work_passes.clone(),
            insert_multiplier: self.insert_multiplier,
            repetitions: self.repetitions,
            seed: self.seed,
        }
    }

    fn sink(&self) -> io::Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => Box::new(BufWriter::new(File::create(path)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

fn run(cli: &Cli) -> BenchResult<()> {
    let config = cli.config();
    let records = match cli.command {
        Command::InsertAlgos => bench_insert_algos(&config)?,
        Command::ShardSweep => bench_shard_sweep(&config)?,
        Command::GrowInsertRw => bench_grow_insert_rw(&config)?,
        Command::TwoPhase => {
            let outcome = bench_two_phase(&config)?;
            for (passes, speedup) in &outcome.speedups {
                eprintln!("work_passes={passes} median speedup={speedup:.3}");
            }
            outcome.records
        }
        Command::MemoryModel => {
            let params = MemoryModelParams {
                mu: cli.mu,
                sigma: 0.0,
                failure_prob: cli.failure_prob,
                base_size: cli.initial_size,
                samples: cli.samples,
                seed: cli.seed,
            };
            let report = run_memory_model(&params, config.primary_shards(), config.first_bucket)?;
            report.write_csv(cli.sink()?, cli.csv_header)?;
            return Ok(());
        }
    };
    write_records(&records, cli.sink()?, cli.csv_header)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
