//! Command-line front end for the demonstration programs in
//! [`gopher::demos`].
//!
//! Each subcommand runs one demo and prints its output: one value (or one
//! event) per line, closed by a `RESULT:` summary line. Exit status is 0 on
//! success and 1 with a one-line diagnostic on stderr when a demo fails or an
//! invariant it checks is violated.
//!
//! With `--deterministic` the runtime uses a single worker with FIFO
//! scheduling, so repeated runs produce byte-identical output. The
//! `bandwidth` demo always runs on a single-worker virtual clock — its
//! timeout-driven event log is only meaningful under deterministic time.

use std::io::Write;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use gopher::demos;
use gopher::{ExecutorConfig, Failure, Gopher};

#[derive(Parser)]
#[command(name = "gopher-demo", version, about = "Channel and selector demos on lightweight processes")]
struct Cli {
    #[command(subcommand)]
    demo: Demo,

    /// Single worker, FIFO scheduling: repeated runs print identical bytes.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads (default: GOPHER_WORKERS, else the CPU count).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Demo {
    /// First n primes from a sieve that filters its own input channel.
    Primes {
        /// How many primes to produce.
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
    },
    /// Fibonacci numbers produced on demand by a write-branch selector.
    Fibonacci {
        /// How many values to read before sending quit.
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..=90))]
        count: u64,
    },
    /// Every listener receives every message, in order, over a replaced bus.
    Broadcast {
        /// Number of listeners (all registered before the first message).
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
        listeners: u64,
        /// Number of messages to publish.
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        messages: u64,
    },
    /// Adaptive balancer that grows/shrinks its output under virtual time.
    Bandwidth {
        /// Number of tasks to push through the balancer.
        #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u64).range(1..))]
        tasks: u64,
        /// Virtual milliseconds each consumer spends per task.
        #[arg(long = "slow-ms", default_value_t = 60)]
        slow_ms: u64,
    },
    /// Pair two generated streams index-wise through a transputer.
    Zipper {
        /// Number of pairs to generate (0 prints only the summary).
        #[arg(long, default_value_t = 10)]
        count: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let outcome = match cli.demo {
        Demo::Bandwidth { tasks, slow_ms } => {
            if cli.workers.is_some_and(|w| w != 1) {
                return fail(&Failure::usage("bandwidth runs on a single-worker virtual clock; --workers is not available"));
            }
            demos::bandwidth(tasks, Duration::from_millis(slow_ms))
        }
        demo => match runtime(cli.deterministic, cli.workers) {
            Err(f) => return fail(&f),
            Ok(g) => match demo {
                Demo::Primes { n } => demos::primes(&g, n),
                Demo::Fibonacci { count } => demos::fibonacci(&g, count),
                Demo::Broadcast { listeners, messages } => demos::broadcast(&g, listeners, messages),
                Demo::Zipper { count } => demos::zipper(&g, count),
                Demo::Bandwidth { .. } => unreachable!("handled above"),
            },
        },
    };

    match outcome {
        Ok(lines) => {
            let mut out = std::io::stdout().lock();
            for line in lines {
                if writeln!(out, "{line}").is_err() {
                    return ExitCode::from(1);
                }
            }
            ExitCode::SUCCESS
        }
        Err(f) => fail(&f),
    }
}

fn runtime(deterministic: bool, workers: Option<usize>) -> Result<Gopher, Failure> {
    if deterministic {
        if workers.is_some_and(|w| w != 1) {
            return Err(Failure::usage("--deterministic uses exactly one worker; drop --workers or set it to 1"));
        }
        Ok(Gopher::deterministic())
    } else {
        let w = workers.unwrap_or_else(ExecutorConfig::default_workers);
        Gopher::threaded(w).map_err(|e| Failure::usage(e.to_string()))
    }
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("error: {f}");
    ExitCode::from(1)
}
