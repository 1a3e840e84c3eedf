//! Command-line entry point: setup, simulation, and the error-rate sweeps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::entities::{self, kic_setup, kic_setup_from_factors};
use crate::experiments::{
    self, discrepancy_report, find_crossover, ErrorCurveParams, SweepSpec,
};
use crate::simnet::{self, derive_rng, FaultModel, ScenarioConfig};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const KEYFILE_VERSION: &str = "format=1";

#[derive(Parser)]
#[command(name = "gridagg", about = "Masked Paillier smart-meter aggregation with error tolerance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run KIC setup and write parameter and key files
    Keygen(KeygenArgs),
    /// Run a full protocol simulation from a scenario file
    Simulate(SimulateArgs),
    /// Evaluate the analytic error rate over the (N, M) grid
    SweepFig2(SweepFig2Args),
    /// Emit the paired error-rate comparison curves
    SweepFig4(SweepFig4Args),
    /// Locate the crossover of the two error curves
    Crossover(CrossoverArgs),
    /// Run the built-in end-to-end fixture transcript and invariant checks
    Selftest(SelftestArgs),
}

#[derive(Args)]
pub struct KeygenArgs {
    #[arg(long, default_value_t = 512)]
    pub bits: u64,
    #[arg(long = "group-size", default_value_t = 10)]
    pub group_size: usize,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the prime factors (test use only)
    #[arg(long = "emit-factors", default_value_t = false)]
    pub emit_factors: bool,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the scenario's round count
    #[arg(long)]
    pub rounds: Option<u64>,
    /// Write the round stream here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepFig2Args {
    #[arg(long = "n-start", default_value_t = 4000)]
    pub n_start: u64,
    #[arg(long = "n-end", default_value_t = 10_000)]
    pub n_end: u64,
    #[arg(long = "n-step", default_value_t = 1000)]
    pub n_step: u64,
    #[arg(long = "m-start", default_value_t = 0)]
    pub m_start: u64,
    #[arg(long = "m-end", default_value_t = 200)]
    pub m_end: u64,
    #[arg(long = "m-step", default_value_t = 20)]
    pub m_step: u64,
    #[arg(long, default_value_t = 13.0)]
    pub gcal: f64,
    #[arg(long, default_value_t = 1.666)]
    pub mcal: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepFig4Args {
    #[arg(long, default_value_t = 10)]
    pub d: u32,
    #[arg(long, default_value_t = 13.0)]
    pub gcal: f64,
    #[arg(long, default_value_t = 1.666)]
    pub mcal: f64,
    /// Number of grid points on [0, 1]
    #[arg(long, default_value_t = 100)]
    pub steps: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CrossoverArgs {
    #[arg(long, default_value_t = 10)]
    pub d: u32,
    #[arg(long, default_value_t = 13.0)]
    pub gcal: f64,
    #[arg(long, default_value_t = 1.666)]
    pub mcal: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

#[derive(Args)]
pub struct SelftestArgs {
    /// Validate a previously written params file as part of the run
    #[arg(long)]
    pub params: Option<PathBuf>,
}

/// Parses argv and runs; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with code 0
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Keygen(args) => cmd_keygen(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::SweepFig2(args) => cmd_sweep_fig2(&args),
        Command::SweepFig4(args) => cmd_sweep_fig4(&args),
        Command::Crossover(args) => cmd_crossover(&args),
        Command::Selftest(args) => cmd_selftest(&args),
    };
    match result {
        Ok(code) => code,
        Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_keygen(args: &KeygenArgs) -> Result<i32> {
    if args.bits < 64 || args.bits % 2 != 0 {
        return Err(Error::Config("--bits must be even and at least 64".into()));
    }
    if args.group_size < 2 || args.groups < 1 {
        return Err(Error::Config("--group-size must be >= 2 and --groups >= 1".into()));
    }
    let mut rng = derive_rng(args.seed, "keygen", 0, 0);
    let setup = kic_setup(args.bits, args.group_size, args.groups, &mut rng);
    let p = &setup.params;

    let mut params_text = String::new();
    let _ = writeln!(params_text, "{KEYFILE_VERSION}");
    let _ = writeln!(params_text, "n={}", p.n);
    let _ = writeln!(params_text, "n_sq={}", p.n_sq);
    let _ = writeln!(params_text, "g1={}", p.g1);
    let _ = writeln!(params_text, "g2={}", p.g2);
    let _ = writeln!(params_text, "h={}", p.h);
    let _ = writeln!(params_text, "d={}", p.d);
    let _ = writeln!(params_text, "groups={}", p.num_groups);
    let _ = writeln!(params_text, "reading_cap={}", p.reading_cap);
    let _ = writeln!(params_text, "hash={}", p.hash_alg);
    write_text(&args.out.join("params.txt"), &params_text)?;

    for (g, group_keys) in setup.keys.iter().enumerate() {
        for (i, key) in group_keys.iter().enumerate() {
            let mut text = String::new();
            let _ = writeln!(text, "{KEYFILE_VERSION}");
            let _ = writeln!(text, "x={}", key.x);
            let _ = writeln!(text, "y={}", key.group);
            let _ = writeln!(text, "share={}", key.share);
            let _ = writeln!(text, "scaled_weight={}", key.scaled_weight);
            let _ = writeln!(text, "s={}", key.s);
            let _ = writeln!(text, "mask={}", key.mask);
            write_text(&args.out.join(format!("meter_g{g}_k{i}.txt")), &text)?;
        }
    }

    let mut agg_text = String::new();
    let _ = writeln!(agg_text, "{KEYFILE_VERSION}");
    let _ = writeln!(agg_text, "lambda={}", setup.aggregator.secret.lambda);
    let _ = writeln!(agg_text, "mu={}", setup.aggregator.secret.mu);
    for entry in &setup.aggregator.mask_table {
        let _ = writeln!(agg_text, "entry={}:{}:{}", entry.position, entry.s, entry.mask);
    }
    write_text(&args.out.join("aggregator.txt"), &agg_text)?;

    if args.emit_factors {
        let text = format!(
            "{KEYFILE_VERSION}\np={}\nq={}\n",
            setup.factors.p, setup.factors.q
        );
        write_text(&args.out.join("factors.txt"), &text)?;
    }
    println!(
        "wrote params.txt, aggregator.txt and {} key files to {}",
        args.groups * args.group_size,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let mut config = ScenarioConfig::from_file(&args.config)?;
    if let Some(rounds) = args.rounds {
        config.rounds = rounds;
        config.validate()?;
    }
    let summary = experiments::empirical_error(&config)?;
    let mut text = summary.run.to_csv();
    text.push_str(&summary.summary_block());
    text.push_str(&experiments::opcount_report(&summary.run).to_block());
    emit(&args.out, &text)?;
    Ok(EXIT_OK)
}

fn cmd_sweep_fig2(args: &SweepFig2Args) -> Result<i32> {
    let spec = SweepSpec {
        n_start: args.n_start,
        n_end: args.n_end,
        n_step: args.n_step,
        m_start: args.m_start,
        m_end: args.m_end,
        m_step: args.m_step,
    };
    let params = ErrorCurveParams { g_cal: args.gcal, m_cal: args.mcal, d: 10 };
    let (rows, summary) = experiments::sweep_fig2(&spec, &params)?;
    let mut text = experiments::fig2_csv(&rows);
    let _ = writeln!(text, "max={}", summary.max);
    let _ = writeln!(text, "mean={}", summary.mean);
    emit(&args.out, &text)?;
    Ok(EXIT_OK)
}

fn cmd_sweep_fig4(args: &SweepFig4Args) -> Result<i32> {
    if args.steps == 0 {
        return Err(Error::Config("--steps must be positive".into()));
    }
    let params = ErrorCurveParams { g_cal: args.gcal, m_cal: args.mcal, d: args.d };
    let xs: Vec<f64> = (0..=args.steps).map(|i| i as f64 / args.steps as f64).collect();
    let rows = experiments::sweep_fig4(&xs, &params);
    emit(&args.out, &experiments::fig4_csv(&rows))?;
    Ok(EXIT_OK)
}

fn cmd_crossover(args: &CrossoverArgs) -> Result<i32> {
    if args.tolerance <= 0.0 {
        return Err(Error::Config("--tolerance must be positive".into()));
    }
    let params = ErrorCurveParams { g_cal: args.gcal, m_cal: args.mcal, d: args.d };
    match find_crossover(&params, args.tolerance) {
        Some(x) => println!("{x:.6}"),
        None => println!("none"),
    }
    Ok(EXIT_OK)
}

fn validate_params_file(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let mut fields = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<String> {
        fields.get(k).cloned().ok_or_else(|| Error::Config(format!("params file: missing {k}")))
    };
    let big = |k: &str| -> Result<BigUint> {
        get(k)?.parse::<BigUint>().map_err(|_| Error::Config(format!("params file: bad {k}")))
    };
    if get("format")? != "1" {
        return Err(Error::Config("params file: unsupported format version".into()));
    }
    let n = big("n")?;
    let n_sq = big("n_sq")?;
    if n_sq != &n * &n {
        return Err(Error::Config("params file: n_sq is not n squared".into()));
    }
    for k in ["g1", "g2", "h"] {
        let v = big(k)?;
        if v.is_zero() || v >= n_sq || !num_integer::Integer::gcd(&v, &n).is_one() {
            return Err(Error::Config(format!("params file: {k} is not a unit mod n^2")));
        }
    }
    let d: usize = get("d")?.parse().map_err(|_| Error::Config("params file: bad d".into()))?;
    if d < 2 {
        return Err(Error::Config("params file: d must be at least 2".into()));
    }
    let cap = big("reading_cap")?;
    let groups: u64 =
        get("groups")?.parse().map_err(|_| Error::Config("params file: bad groups".into()))?;
    if BigUint::from(groups * d as u64) * &cap >= n {
        return Err(Error::Config("params file: reading cap overflows the plaintext space".into()));
    }
    Ok(())
}

fn selftest_checks() -> Result<Vec<(&'static str, bool, String)>> {
    let mut checks = Vec::new();

    // end-to-end fixture transcript: p=5, q=7, d=2, readings (3, 4)
    let mut rng = derive_rng(0, "selftest", 0, 0);
    let mut setup = kic_setup_from_factors(
        BigUint::from(5u32),
        BigUint::from(7u32),
        BigUint::from(36u32),
        2,
        2,
        &mut rng,
    )?;
    let t = 0;
    let groups: Vec<Vec<entities::MeterReport>> = vec![
        vec![
            entities::meter_report(&setup.keys[0][0], &setup.params, &BigUint::from(3u32), t, &mut rng)?,
            entities::meter_report(&setup.keys[0][1], &setup.params, &BigUint::from(4u32), t, &mut rng)?,
        ],
        vec![
            entities::meter_report(&setup.keys[1][0], &setup.params, &BigUint::from(1u32), t, &mut rng)?,
            entities::meter_report(&setup.keys[1][1], &setup.params, &BigUint::from(2u32), t, &mut rng)?,
        ],
    ];
    let outcome = setup.aggregator.process_round(&groups, t);
    let m_sum0 = outcome.aggregates.iter().find(|a| a.group == 0).map(|a| a.m_sum.clone());
    checks.push((
        "toy-fixture-aggregation",
        m_sum0 == Some(BigUint::from(7u32)) && outcome.failures.is_empty(),
        format!("toy fixture M_sum={}", m_sum0.map_or("?".into(), |m| m.to_string())),
    ));

    // substitution transcript: group 0 loses its second meter, donor reads 4
    let mut rng = derive_rng(0, "selftest", 1, 0);
    let mut setup = kic_setup_from_factors(
        BigUint::from(5u32),
        BigUint::from(7u32),
        BigUint::from(36u32),
        2,
        2,
        &mut rng,
    )?;
    setup.aggregator.prev_total = Some(BigUint::from(12u32)); // m_bar = 3
    let groups = vec![
        vec![entities::meter_report(&setup.keys[0][0], &setup.params, &BigUint::from(3u32), t, &mut rng)?],
        vec![
            entities::meter_report(&setup.keys[1][0], &setup.params, &BigUint::from(1u32), t, &mut rng)?,
            entities::meter_report(&setup.keys[1][1], &setup.params, &BigUint::from(4u32), t, &mut rng)?,
        ],
    ];
    let outcome = setup.aggregator.process_round(&groups, t);
    let m_sum0 = outcome.aggregates.iter().find(|a| a.group == 0).map(|a| a.m_sum.clone());
    checks.push((
        "toy-fixture-substitution",
        m_sum0 == Some(BigUint::from(4u32)),
        "substituted group sum 3 + (4 - 3) = 4".into(),
    ));

    // partial aggregation must not reveal the subset sum
    let partial = setup
        .aggregator
        .da_aggregate(0, t, &[(0, groups[1][0].c.clone()), (1, groups[1][1].c.clone())], vec![]);
    let full_ok = matches!(&partial, Ok(agg) if agg.m_sum == BigUint::from(5u32));
    let single = crate::paillier::decrypt(
        &setup.aggregator.secret,
        &setup.aggregator.public,
        &groups[1][0].c,
    )?;
    checks.push((
        "partial-aggregation-hides-subset",
        full_ok && single != BigUint::from(1u32),
        "one masked report does not decrypt to its reading".into(),
    ));

    // mask telescoping smoke check on a fresh 128-bit deployment
    let mut rng = derive_rng(0, "selftest", 2, 0);
    let mut setup = kic_setup(128, 3, 1, &mut rng);
    let readings = [10u32, 20, 30];
    let reports: Vec<entities::MeterReport> = setup.keys[0]
        .iter()
        .zip(readings)
        .map(|(k, m)| entities::meter_report(k, &setup.params, &BigUint::from(m), t, &mut rng))
        .collect::<Result<_>>()?;
    let outcome = setup.aggregator.process_round(&[reports], t);
    checks.push((
        "mask-telescoping-128bit",
        outcome.aggregates.len() == 1 && outcome.aggregates[0].m_sum == BigUint::from(60u32),
        "fault-free group sum is exact".into(),
    ));

    // the two analytic calibrations disagree; the report must exist
    let report = discrepancy_report();
    let default_x = find_crossover(&ErrorCurveParams::default(), 1e-6);
    let alt_x = find_crossover(&ErrorCurveParams::crossover_at_097(), 1e-6);
    let disagreement = match (default_x, alt_x) {
        (Some(a), Some(b)) => (a - 0.9985).abs() < 5e-4 && (b - 0.97).abs() < 5e-3,
        _ => false,
    };
    checks.push((
        "crossover-discrepancy-report",
        report.contains("discrepancy:") && disagreement,
        report.trim_end().to_string(),
    ));

    // deterministic simulation smoke check
    let config = ScenarioConfig {
        n_meters: 8,
        d: 2,
        rounds: 2,
        fault_model: FaultModel::FixedCount(1),
        modulus_bits: 128,
        seed: 5,
        ..ScenarioConfig::default()
    };
    let a = simnet::run_scenario(&config)?.to_csv();
    let b = simnet::run_scenario(&config)?.to_csv();
    checks.push(("simulation-replay", a == b, "same seed, same bytes".into()));

    Ok(checks)
}

fn cmd_selftest(args: &SelftestArgs) -> Result<i32> {
    let mut checks = selftest_checks()?;
    if let Some(path) = &args.params {
        let result = validate_params_file(path);
        checks.push((
            "params-file",
            result.is_ok(),
            match result {
                Ok(()) => "params file validates".into(),
                Err(e) => e.to_string(),
            },
        ));
    }
    let mut failed = None;
    for (name, ok, detail) in &checks {
        println!("{} {name}: {detail}", if *ok { "ok" } else { "FAIL" });
        if !*ok && failed.is_none() {
            failed = Some(*name);
        }
    }
    match failed {
        None => Ok(EXIT_OK),
        Some(name) => {
            eprintln!("selftest failed at check: {name}");
            Ok(EXIT_RUNTIME)
        }
    }
}
