//! `grow`: e-values for invariant tests, sequential monitoring and the
//! verification batteries.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use grow_core::eprocess::{EProcess, InvariantLr, LtModel, TTestModel};
use grow_core::finite_group::{
    joint_kl, joint_kl_minimize, kl_maximal_invariant, random_instance, FiniteInvariantPair, PriorPair,
};
use grow_core::io as formats;
use grow_core::mc::task_rng;
use grow_core::regression::log_evalue_regression;
use grow_core::ttest::TTestHypotheses;
use grow_core::verify::{counterexample_expectation, find_unit_crossings, run_suite, SuiteOptions, SUITES};
use grow_core::Error;

#[derive(Parser, Debug)]
#[command(name = "grow", version, about = "Growth-rate optimal e-values for group-invariant tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One-sample t-test on standardized effect size, one observation per line.
    Ttest(TtestArgs),
    /// Multivariate mean test under lower-triangular invariance, d values per line.
    Ltmean(LtArgs),
    /// Regression coefficient test; CSV with header y,x,z1..zd.
    Regress(RegressArgs),
    /// KL duality quantities for a finite group instance.
    Duality(DualityArgs),
    /// Stopped mean of the two-observation mixture under the magnitude-window rule.
    Counterexample(CounterexampleArgs),
    /// Run verification suites and print one JSON report per line.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Significance level in (0, 1).
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Input file; standard input when omitted or `-`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Output::Json)]
    output: Output,
}

#[derive(Args, Debug)]
struct TtestArgs {
    #[arg(long, allow_negative_numbers = true)]
    delta0: f64,
    #[arg(long, allow_negative_numbers = true)]
    delta1: f64,
    /// Print the state after every observation and stop at the first rejection.
    #[arg(long)]
    stream: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct LtArgs {
    /// Comma-separated null effect vector.
    #[arg(long, allow_hyphen_values = true)]
    delta0: String,
    /// Comma-separated alternative effect vector.
    #[arg(long, allow_hyphen_values = true)]
    delta1: String,
    #[arg(long)]
    stream: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct RegressArgs {
    #[arg(long, allow_negative_numbers = true)]
    delta0: f64,
    #[arg(long, allow_negative_numbers = true)]
    delta1: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct DualityArgs {
    /// Instance JSON; a random instance is drawn from --seed when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Convergence tolerance of the joint KL minimizer.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = Output::Json)]
    output: Output,
}

#[derive(Args, Debug)]
struct CounterexampleArgs {
    #[arg(long, default_value_t = 200.0)]
    kappa: f64,
    /// Lower window edge; with --b omitted both edges are the unit crossings of f.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Output::Json)]
    output: Output,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Suite name, or `all`.
    #[arg(long)]
    suite: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Small replication counts for a quick look.
    #[arg(long)]
    smoke: bool,
    #[arg(long, value_enum, default_value_t = Output::Json)]
    output: Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Output {
    Json,
    Csv,
}

enum Failure {
    Usage(String),
    Numeric(Error),
    ChecksFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } => Failure::Usage(format!("malformed input: {e}")),
            e => Failure::Numeric(e),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let result = match cli.command {
        Command::Ttest(a) => ttest(a, &mut out),
        Command::Ltmean(a) => ltmean(a, &mut out),
        Command::Regress(a) => regress(a, &mut out),
        Command::Duality(a) => duality(a, &mut out),
        Command::Counterexample(a) => counterexample(a, &mut out),
        Command::Verify(a) => verify(a, &mut out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::ChecksFailed) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(3)
        }
    }
}

fn check_alpha(alpha: f64) -> Outcome {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn open_input(path: &Option<PathBuf>) -> std::result::Result<Box<dyn BufRead>, Failure> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            let f = File::open(p).map_err(|e| Failure::Usage(format!("--input {}: {e}", p.display())))?;
            Ok(Box::new(BufReader::new(f)))
        }
        _ => Ok(Box::new(BufReader::new(io::stdin()))),
    }
}

fn read_all(path: &Option<PathBuf>) -> std::result::Result<String, Failure> {
    let mut s = String::new();
    open_input(path)?.read_to_string(&mut s)?;
    Ok(s)
}

fn seed_value(seed: Option<u64>) -> Value {
    seed.map_or(Value::Null, Value::from)
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn emit(out: &mut impl Write, format: Output, fields: &[(&str, Value)]) -> Outcome {
    match format {
        Output::Json => {
            let obj: serde_json::Map<String, Value> = fields.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
            writeln!(out, "{}", Value::Object(obj))?;
        }
        Output::Csv => {
            let header: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
            let row: Vec<String> = fields
                .iter()
                .map(|(_, v)| match v {
                    Value::String(s) => s.clone(),
                    Value::Null => String::new(),
                    other => other.to_string(),
                })
                .collect();
            writeln!(out, "{}", header.join(","))?;
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

fn summary_fields(command: &str, n: usize, log_e: f64, alpha: f64, seed: Option<u64>) -> Vec<(&'static str, Value)> {
    let decision = if log_e >= -alpha.ln() { "reject" } else { "continue" };
    vec![
        ("command", json!(command)),
        ("n", json!(n)),
        ("evalue", finite_or_null(log_e.exp())),
        ("log_evalue", finite_or_null(log_e)),
        ("decision", json!(decision)),
        ("alpha", json!(alpha)),
        ("seed", seed_value(seed)),
    ]
}

/// Feeds every data line of the input through the e-process. In stream mode a
/// state line is printed per observation and the run stops at the first
/// rejection; otherwise only the final summary is printed.
fn drive<M: InvariantLr>(
    command: &str,
    model: M,
    common: &Common,
    stream: bool,
    parse: impl Fn(&str, usize) -> grow_core::Result<Option<M::Obs>>,
    out: &mut impl Write,
) -> Outcome {
    check_alpha(common.alpha)?;
    if stream && common.output == Output::Csv {
        writeln!(out, "n,evalue,log_evalue,rejected,rejected_at,alpha")?;
    }
    let mut process = EProcess::new(model, common.alpha)?;
    for (i, line) in open_input(&common.input)?.lines().enumerate() {
        let Some(obs) = parse(&line?, i + 1)? else {
            continue;
        };
        let state = process.update(&obs)?;
        if stream {
            let rejected = state.rejected_at.is_some();
            match common.output {
                Output::Json => writeln!(
                    out,
                    "{}",
                    json!({
                        "n": state.n,
                        "evalue": finite_or_null(state.log_evalue.exp()),
                        "log_evalue": finite_or_null(state.log_evalue),
                        "rejected": rejected,
                        "rejected_at": state.rejected_at,
                        "alpha": state.alpha,
                    })
                )?,
                Output::Csv => writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    state.n,
                    state.log_evalue.exp(),
                    state.log_evalue,
                    rejected,
                    state.rejected_at.map_or(String::new(), |n| n.to_string()),
                    state.alpha
                )?,
            }
            out.flush()?;
            if rejected {
                return Ok(());
            }
        }
    }
    if !stream {
        let s = process.state();
        emit(out, common.output, &summary_fields(command, s.n, s.log_evalue, s.alpha, common.seed))?;
    }
    Ok(())
}

fn ttest(a: TtestArgs, out: &mut impl Write) -> Outcome {
    let hyp = TTestHypotheses::new(a.delta0, a.delta1).map_err(|e| Failure::Usage(format!("--delta0/--delta1: {e}")))?;
    drive("ttest", TTestModel { hyp }, &a.common, a.stream, formats::parse_scalar_line, out)
}

fn ltmean(a: LtArgs, out: &mut impl Write) -> Outcome {
    let d0 = formats::parse_real_list(&a.delta0).map_err(|e| Failure::Usage(format!("--delta0: {e}")))?;
    let d1 = formats::parse_real_list(&a.delta1).map_err(|e| Failure::Usage(format!("--delta1: {e}")))?;
    let model = LtModel::new(d0, d1).map_err(|e| Failure::Usage(format!("--delta0/--delta1: {e}")))?;
    let d = model.d();
    drive(
        "ltmean",
        model,
        &a.common,
        a.stream,
        move |line, no| {
            if formats::is_content(line) {
                formats::parse_vector_line(line, no, Some(d)).map(Some)
            } else {
                Ok(None)
            }
        },
        out,
    )
}

fn regress(a: RegressArgs, out: &mut impl Write) -> Outcome {
    check_alpha(a.common.alpha)?;
    if !a.delta0.is_finite() || !a.delta1.is_finite() {
        return Err(Failure::Usage("--delta0/--delta1 must be finite".into()));
    }
    let data = formats::parse_regression_csv(&read_all(&a.common.input)?)?;
    let log_e = log_evalue_regression(&data, a.delta0, a.delta1)?;
    emit(out, a.common.output, &summary_fields("regress", data.n(), log_e, a.common.alpha, a.common.seed))
}

fn duality(a: DualityArgs, out: &mut impl Write) -> Outcome {
    if !(a.tol > 0.0) {
        return Err(Failure::Usage("--tol must be positive".into()));
    }
    let pair: FiniteInvariantPair = match (&a.input, a.seed) {
        (Some(_), _) => formats::parse_instance_json(&read_all(&a.input)?)?,
        (None, Some(seed)) => random_instance(&mut task_rng(seed, 0)),
        (None, None) => return Err(Failure::Usage("duality needs --input or --seed (random instance)".into())),
    };
    let order = pair.group().order();
    let kl_m = kl_maximal_invariant(&pair);
    let uniform = joint_kl(&pair, &PriorPair::uniform(order));
    let min = joint_kl_minimize(&pair, a.tol, 100_000)?;
    emit(
        out,
        a.output,
        &[
            ("command", json!("duality")),
            ("group_order", json!(order)),
            ("space_size", json!(pair.action().space_size())),
            ("kl_invariant", json!(kl_m)),
            ("joint_kl_uniform", json!(uniform)),
            ("joint_kl_minimum", json!(min.value)),
            ("iterations", json!(min.iterations)),
            ("seed", seed_value(a.seed)),
        ],
    )
}

fn counterexample(a: CounterexampleArgs, out: &mut impl Write) -> Outcome {
    if !(a.kappa > 0.0) || !a.kappa.is_finite() {
        return Err(Failure::Usage("--kappa must be positive".into()));
    }
    let (lo, hi) = match (a.a, a.b) {
        (Some(lo), Some(hi)) => {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Failure::Usage(format!("need 0 < --a <= --b, got a = {lo}, b = {hi}")));
            }
            (lo, hi)
        }
        (None, None) => find_unit_crossings(a.kappa)?,
        _ => return Err(Failure::Usage("give both --a and --b, or neither".into())),
    };
    let estimate = counterexample_expectation(a.kappa, lo, hi)?;
    emit(
        out,
        a.output,
        &[
            ("command", json!("counterexample")),
            ("kappa", json!(a.kappa)),
            ("a", json!(lo)),
            ("b", json!(hi)),
            ("estimate", json!(estimate)),
            ("seed", seed_value(a.seed)),
        ],
    )
}

fn verify(a: VerifyArgs, out: &mut impl Write) -> Outcome {
    let names: Vec<&str> = if a.suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&a.suite.as_str()) {
        vec![a.suite.as_str()]
    } else {
        return Err(Failure::Usage(format!(
            "--suite: unknown suite '{}' (expected all or one of {})",
            a.suite,
            SUITES.join(", ")
        )));
    };
    let seed = a.seed.ok_or_else(|| Failure::Usage("--seed is required for verify".into()))?;
    let opts = SuiteOptions {
        seed,
        threads: a.threads,
        smoke: a.smoke,
    };
    if a.output == Output::Csv {
        writeln!(out, "name,estimate,std_error,target,tolerance,passed,replications,seed")?;
    }
    let mut all_passed = true;
    for name in names {
        for r in run_suite(name, &opts)? {
            all_passed &= r.passed;
            match a.output {
                Output::Json => writeln!(out, "{}", serde_json::to_string(&r).expect("reports serialize"))?,
                Output::Csv => writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.name, r.estimate, r.std_error, r.target, r.tolerance, r.passed, r.replications, r.seed
                )?,
            }
        }
        out.flush()?;
    }
    if all_passed {
        Ok(())
    } else {
        Err(Failure::ChecksFailed)
    }
}
