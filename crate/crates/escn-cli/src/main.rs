//! `escn` command-line harness: verification commands, benchmarks, table
//! dumps, and energy/force prediction. Reports are JSON; exit codes are
//! 0 (all checks pass), 1 (a check failed), 2 (usage or input error).

mod report;
mod xyz;

use clap::{Parser, Subcommand, ValueEnum};
use escn_core::cg::{compact_cg, h_to_htilde, htilde_to_h, real_cg_table, HTensor};
use escn_core::conv::{
    aligned_conv, fitted_cost_slope, measure_batch, naive_conv, so2_conv, ConvSpec, CostPath,
};
use escn_core::model::{
    build_graph, forward, message_equivariance_error, Activation, ModelConfig, ModelWeights,
};
use escn_core::{Direction, Error, IrrepsCoeffs, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use report::{Check, Report};
use serde_json::json;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "escn", version, about = "Equivariant SO(2)-reduced convolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ActivationArg {
    Silu,
    Identity,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Activation {
        match a {
            ActivationArg::Silu => Activation::Silu,
            ActivationArg::Identity => Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Naive,
    So2,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BasisArg {
    Real,
    Compact,
}

#[derive(Subcommand)]
enum Command {
    /// Check that the naive, aligned, and SO(2) convolution paths agree, and
    /// that the weight reparametrization round-trips.
    CheckEquivalence {
        #[arg(long, default_value_t = 6)]
        lmax: usize,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure the rotational equivariance error of a single message over
    /// uniformly sampled rotations.
    CheckEquivariance {
        /// Equiangular grid resolution (points per axis) for the nonlinearity.
        #[arg(long, default_value_t = 14)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = ActivationArg::Silu)]
        activation: ActivationArg,
        #[arg(long, default_value_t = 256)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark the convolution paths: analytic operation counts, fitted
    /// log-log slopes, and measured wall times over a random edge batch.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
        lmax_list: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 1000)]
        edges: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict energy and forces for an XYZ structure.
    Predict {
        #[arg(long)]
        input: PathBuf,
        /// JSON weight file; mutually exclusive with --seed.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Seed for random weights when no weight file is given.
        #[arg(long)]
        seed: Option<u64>,
        /// Band limit for randomly initialized weights.
        #[arg(long)]
        lmax: Option<usize>,
        /// Order cutoff for randomly initialized weights.
        #[arg(long)]
        mmax: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the real-basis coupling table (full or compact form) as JSON.
    Cgtable {
        #[arg(long, default_value_t = 6)]
        lmax: usize,
        #[arg(long, value_enum, default_value_t = BasisArg::Real)]
        basis: BasisArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    };
    std::process::exit(code);
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn finish(report: Report, out: &Option<PathBuf>) -> Result<i32> {
    let pass = report.all_pass();
    emit(&serde_json::to_string_pretty(&report)?, out)?;
    Ok(if pass { 0 } else { 1 })
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::CheckEquivalence {
            lmax,
            channels,
            trials,
            seed,
            out,
        } => cmd_check_equivalence(lmax, channels, trials, seed, &out),
        Command::CheckEquivariance {
            grid,
            activation,
            trials,
            seed,
            out,
        } => cmd_check_equivariance(grid, activation, trials, seed, &out),
        Command::Bench {
            lmax_list,
            channels,
            edges,
            mode,
            seed,
            out,
        } => cmd_bench(&lmax_list, channels, edges, mode, seed, &out),
        Command::Predict {
            input,
            weights,
            seed,
            lmax,
            mmax,
            out,
        } => cmd_predict(&input, weights.as_deref(), seed, lmax, mmax, &out),
        Command::Cgtable { lmax, basis, out } => cmd_cgtable(lmax, basis, &out),
    }
}

fn cmd_check_equivalence(
    lmax: usize,
    channels: usize,
    trials: usize,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<i32> {
    if lmax > 8 {
        return Err(Error::input("lmax must be at most 8"));
    }
    if channels == 0 || trials == 0 {
        return Err(Error::input("channels and trials must be at least 1"));
    }
    let tolerance = if lmax <= 6 { 1e-10 } else { 1e-9 };
    let mut report = Report::new(
        "check-equivalence",
        json!({"lmax": lmax, "channels": channels, "trials": trials}),
        seed,
    );
    let start = Instant::now();
    let table = real_cg_table(lmax)?;
    let compact = compact_cg(&table);
    let spec = ConvSpec::new(lmax, lmax, channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err_aligned = 0.0f64;
    let mut err_so2 = 0.0f64;
    let mut err_round_trip = 0.0f64;
    for _ in 0..trials {
        let x = IrrepsCoeffs::random(lmax, channels, &mut rng);
        let r = Direction::random(&mut rng);
        let h = HTensor::random(lmax, &mut rng);
        let ht = h_to_htilde(&h, &compact)?;
        let reference = naive_conv(&x, &r, &h, &spec)?;
        err_aligned = err_aligned.max(reference.max_abs_diff(&aligned_conv(&x, &r, &h, &spec)?));
        err_so2 = err_so2.max(reference.max_abs_diff(&so2_conv(&x, &r, &ht, &spec)?));
        err_round_trip = err_round_trip.max(h.max_abs_diff(&htilde_to_h(&ht, &compact)?));
    }
    report
        .checks
        .push(Check::upper("naive-vs-aligned", err_aligned, tolerance));
    report
        .checks
        .push(Check::upper("naive-vs-so2", err_so2, tolerance));
    report
        .checks
        .push(Check::upper("weight-round-trip", err_round_trip, 1e-10));
    report
        .timings
        .insert("total_seconds".into(), start.elapsed().as_secs_f64());
    finish(report, out)
}

fn cmd_check_equivariance(
    grid: usize,
    activation: ActivationArg,
    trials: usize,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<i32> {
    if grid < 3 {
        return Err(Error::input("grid must be at least 3"));
    }
    if trials == 0 {
        return Err(Error::input("trials must be at least 1"));
    }
    let (lmax, mmax) = (6, 2);
    let mut report = Report::new(
        "check-equivariance",
        json!({
            "grid": grid,
            "activation": format!("{activation:?}").to_lowercase(),
            "trials": trials,
            "lmax": lmax,
            "mmax": mmax,
        }),
        seed,
    );
    let start = Instant::now();
    let err = message_equivariance_error(grid, lmax, mmax, activation.into(), trials, seed)?;
    match activation {
        ActivationArg::Identity => {
            report
                .checks
                .push(Check::upper("equivariance-error", err, 1e-9));
        }
        ActivationArg::Silu => {
            // The quantitative reference band applies to the grid-14 setup;
            // other grids only claim a sane (sub-100%) error.
            report
                .checks
                .push(Check::upper("equivariance-error", err, 1.0));
            if grid == 14 {
                report
                    .checks
                    .push(Check::upper("grid14-band-upper", err, 0.03));
                report
                    .checks
                    .push(Check::lower("grid14-band-lower", err, 0.003));
            }
        }
    }
    report
        .timings
        .insert("total_seconds".into(), start.elapsed().as_secs_f64());
    finish(report, out)
}

fn cmd_bench(
    lmax_list: &[usize],
    channels: usize,
    edges: usize,
    mode: ModeArg,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<i32> {
    if lmax_list.is_empty() || channels == 0 || edges == 0 {
        return Err(Error::input("lmax-list, channels, and edges must be non-empty"));
    }
    let mut report = Report::new(
        "bench",
        json!({
            "lmax_list": lmax_list,
            "channels": channels,
            "edges": edges,
            "mode": format!("{mode:?}").to_lowercase(),
        }),
        seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths: Vec<CostPath> = match mode {
        ModeArg::Naive => vec![CostPath::Naive],
        ModeArg::So2 => vec![CostPath::So2],
        ModeArg::Both => vec![CostPath::Naive, CostPath::So2],
    };
    let mut rows = Vec::new();
    for &path in &paths {
        let label = match path {
            CostPath::Naive => "naive",
            CostPath::So2 => "so2",
        };
        for &l in lmax_list {
            let spec = ConvSpec::new(l, l, channels)?;
            let cost = measure_batch(path, &spec, edges, &mut rng)?;
            report.timings.insert(
                format!("{label}-l{l}_seconds"),
                cost.wall_time_seconds,
            );
            rows.push(json!({
                "path": label,
                "lmax": l,
                "multiplies": cost.multiplies,
                "adds": cost.adds,
                "peak_live_scalars": cost.peak_live_scalars,
                "wall_time_seconds": cost.wall_time_seconds,
            }));
        }
        if lmax_list.len() >= 2 {
            let slope = fitted_cost_slope(path, lmax_list, channels);
            match path {
                CostPath::Naive => report
                    .checks
                    .push(Check::lower("naive-multiplies-slope", slope, 5.0)),
                CostPath::So2 => report
                    .checks
                    .push(Check::upper("so2-multiplies-slope", slope, 3.5)),
            }
        }
    }
    if mode == ModeArg::Both && lmax_list.contains(&6) {
        let naive_t = report.timings["naive-l6_seconds"];
        let so2_t = report.timings["so2-l6_seconds"];
        report
            .checks
            .push(Check::lower("wall-ratio-l6", naive_t / so2_t, 5.0));
    }
    report.results = Some(json!({ "rows": rows }));
    finish(report, out)
}

fn cmd_predict(
    input: &std::path::Path,
    weights_path: Option<&std::path::Path>,
    seed: Option<u64>,
    lmax: Option<usize>,
    mmax: Option<usize>,
    out: &Option<PathBuf>,
) -> Result<i32> {
    if weights_path.is_some() && seed.is_some() {
        return Err(Error::input("--weights and --seed are mutually exclusive"));
    }
    let text = std::fs::read_to_string(input)?;
    let structure = xyz::parse_xyz(&text)?;
    let seed = seed.unwrap_or(0);
    let weights = match weights_path {
        Some(path) => {
            let w: ModelWeights = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if lmax.is_some_and(|l| l != w.config.lmax)
                || mmax.is_some_and(|m| m != w.config.mmax)
            {
                return Err(Error::input(
                    "--lmax/--mmax conflict with the loaded weight file",
                ));
            }
            w
        }
        None => {
            let defaults = ModelConfig::default();
            let config = ModelConfig {
                lmax: lmax.unwrap_or(defaults.lmax),
                mmax: mmax.unwrap_or(defaults.mmax),
                ..defaults
            };
            config.validate().map_err(|e| Error::input(e.to_string()))?;
            ModelWeights::random(&config, seed)?
        }
    };
    let mut report = Report::new(
        "predict",
        json!({
            "input": input.display().to_string(),
            "atoms": structure.numbers.len(),
            "comment": structure.comment,
            "model": serde_json::to_value(&weights.config)?,
        }),
        seed,
    );
    let start = Instant::now();
    let graph = build_graph(&structure.positions, &structure.numbers, &weights.config)?;
    let prediction = forward(&graph, &weights)?;
    report
        .timings
        .insert("total_seconds".into(), start.elapsed().as_secs_f64());
    report.results = Some(serde_json::to_value(&prediction)?);
    finish(report, out)
}

fn cmd_cgtable(lmax: usize, basis: BasisArg, out: &Option<PathBuf>) -> Result<i32> {
    if lmax > 10 {
        return Err(Error::input("lmax must be at most 10"));
    }
    let table = real_cg_table(lmax)?;
    let dump = match basis {
        BasisArg::Real => json!({
            "lmax": lmax,
            "basis": "real",
            "entries": table.to_records(),
        }),
        BasisArg::Compact => {
            let compact = compact_cg(&table);
            let entries: Vec<serde_json::Value> = compact
                .triples()
                .map(|(li, lf, lo)| {
                    let min = li.min(lo) as i64;
                    let values: Vec<f64> =
                        (-min..=min).map(|m| compact.get(li, lf, lo, m)).collect();
                    json!({"li": li, "lf": lf, "lo": lo, "values": values})
                })
                .collect();
            json!({"lmax": lmax, "basis": "compact", "entries": entries})
        }
    };
    emit(&serde_json::to_string_pretty(&dump)?, out)?;
    Ok(0)
}
