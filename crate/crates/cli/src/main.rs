use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lambdamin::bounds::{
    basic_floor, floor_regime, general_floor, isomorphic_floor, write_predictions_csv, BoundPrediction,
    ConstantSet, Provenance, Regime,
};
use lambdamin::distributions::{draw_samples, CovarianceBand, DistributionSpec, Family};
use lambdamin::experiments::{
    fit_from_csv, run_sweep, sample_size, verify_suite, write_summary_csv, write_sweep_csv, ConfigFile,
    VerifyBudget,
};
use lambdamin::rademacher::{
    conditional_second_moment_bound, rademacher_exact, rademacher_linear, rademacher_upper, DEFAULT_DRAWS,
};
use lambdamin::seed::{substream, substream_seed, SeedRecord};
use lambdamin::smallball::{moment_ratios_analytic, small_ball_curve};
use lambdamin::spectrum::{lambda_extremes, lambda_min_power, SampleMatrix};

#[derive(Parser)]
#[command(name = "lambdamin", version, about = "Smallest singular value laboratory")]
struct Cli {
    /// Master seed (overrides the config file's experiment seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// TOML config with optional [distribution], [experiment], [constants], [outputs].
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a normalized sample matrix and write it in binary form.
    Sample {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        size: SizeArgs,
    },
    /// Extreme singular values of a matrix file.
    Spectrum {
        #[arg(long)]
        input: PathBuf,
        /// Also run inverse iteration for the smallest Gram eigenvalue.
        #[arg(long)]
        validate: bool,
    },
    /// Small-ball curve: direction-search upper estimate and Paley-Zygmund lower bound.
    Smallball {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0])]
        u_grid: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        budget: usize,
        /// Use analytic moment ratios where the family has them.
        #[arg(long)]
        analytic_ratios: bool,
    },
    /// Rademacher complexity of the linear class on one sample.
    Rademacher {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        size: SizeArgs,
        #[arg(long, default_value_t = DEFAULT_DRAWS)]
        draws: usize,
        /// Force exhaustive sign enumeration.
        #[arg(long)]
        exact: bool,
    },
    /// Evaluate predicted floors from the given quantities.
    Bounds(BoundsArgs),
    /// Run a beta sweep described by --config.
    Sweep,
    /// Run the oracle and invariant suite; exits nonzero on any failure.
    Verify {
        /// 1 = quick, 2 = default, 3 = full.
        #[arg(long, default_value_t = 2)]
        level: u8,
        /// Replace the truncation function by a corrupted one.
        #[arg(long)]
        mutate: bool,
    },
    /// Fit the deficit exponent from a sweep or summary CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        regime: Option<Regime>,
    },
}

#[derive(Args)]
struct SpecArgs {
    /// Distribution family; falls back to the config's [distribution].
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    /// Tail constant override.
    #[arg(long = "tail-constant")]
    tail_constant: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    mixture_p: f64,
}

#[derive(Args)]
struct SizeArgs {
    /// Number of rows N.
    #[arg(long, conflicts_with = "beta")]
    rows: Option<usize>,
    /// Aspect ratio; N = ceil(n / beta).
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Evaluate only this regime.
    #[arg(long)]
    regime: Option<Regime>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long = "tail-constant", default_value_t = 1.0)]
    tail_constant: f64,
    #[arg(long)]
    beta: Option<f64>,
    /// Dimension n.
    #[arg(long)]
    n: Option<usize>,
    /// Sample size N.
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// Q(2 tau).
    #[arg(long)]
    q2tau: Option<f64>,
    /// Rademacher complexity R_N.
    #[arg(long)]
    rn: Option<f64>,
    /// Covariance band: lower a.
    #[arg(long = "band-a")]
    band_a: Option<f64>,
    /// Covariance band: upper A (also the second-moment constant of the general floor).
    #[arg(long = "band-upper")]
    band_upper: Option<f64>,
    /// Covariance band: L2/L1 constant B.
    #[arg(long = "band-b")]
    band_b: Option<f64>,
    /// Constant override, e.g. c2=0.8 (repeatable).
    #[arg(long = "constant")]
    constants: Vec<String>,
}

impl SpecArgs {
    fn resolve(&self, config: Option<&ConfigFile>) -> Result<DistributionSpec> {
        let mut spec = match (self.family, config.and_then(|c| c.distribution.clone())) {
            (Some(family), _) => {
                let n = self.n.ok_or_else(|| anyhow!("--n is required with --family"))?;
                DistributionSpec {
                    family,
                    n,
                    eta: self.eta,
                    l: self.tail_constant,
                    mixture_p: self.mixture_p,
                    seed: 0,
                }
            }
            (None, Some(spec)) => spec,
            (None, None) => bail!("give --family and --n, or a config with [distribution]"),
        };
        if self.family.is_none() {
            if let Some(n) = self.n {
                spec.n = n;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl SizeArgs {
    fn rows(&self, n: usize) -> Result<usize> {
        match (self.rows, self.beta) {
            (Some(r), _) => Ok(r),
            (None, Some(b)) => Ok(sample_size(n, b)?),
            (None, None) => bail!("give --rows or --beta"),
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_kv_csv(fields: &[(&str, String)], path: Option<&Path>) -> Result<()> {
    let mut w = output(path)?;
    writeln!(w, "{}", fields.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(","))?;
    writeln!(w, "{}", fields.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(","))?;
    w.flush()?;
    Ok(())
}

fn constants_from(config: Option<&ConfigFile>, overrides: &[String]) -> Result<ConstantSet> {
    let mut k = config.and_then(|c| c.constants).unwrap_or_default();
    for o in overrides {
        let (name, value) = o.split_once('=').ok_or_else(|| anyhow!("constant override '{o}' is not name=value"))?;
        let value: f64 = value.trim().parse().with_context(|| format!("constant {name}"))?;
        k.set(name.trim(), value, Provenance::Default)?;
    }
    Ok(k)
}

fn need<T: Copy>(v: Option<T>, flag: &str, what: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("{what} needs --{flag}"))
}

fn bounds(args: &BoundsArgs, config: Option<&ConfigFile>) -> Result<Vec<BoundPrediction>> {
    let k = constants_from(config, &args.constants)?;
    let wanted = |r: Regime| args.regime.is_none_or(|x| x == r);
    let heavy = args.regime.is_none_or(|r| r.is_heavy_tail());
    let mut out = Vec::new();
    if heavy && (args.regime.is_some() || args.beta.is_some()) {
        let eta = need(args.eta, "eta", "the heavy-tail floor")?;
        let p = floor_regime(
            eta,
            args.tail_constant,
            need(args.beta, "beta", "the heavy-tail floor")?,
            need(args.rows, "rows", "the heavy-tail floor")?,
            &k,
        )?;
        if let Some(r) = args.regime {
            if r != p.regime {
                bail!("eta={eta} selects regime {}, not {r}", p.regime);
            }
        }
        out.push(p);
    }
    let explicit = args.regime.is_some();
    if wanted(Regime::BasicSmallball) && (explicit || (args.tau.is_some() && args.q2tau.is_some() && args.rn.is_some())) {
        let what = "the basic small-ball floor";
        out.push(basic_floor(
            need(args.tau, "tau", what)?,
            need(args.q2tau, "q2tau", what)?,
            need(args.rn, "rn", what)?,
            need(args.rows, "rows", what)?,
        )?);
    }
    if wanted(Regime::Isomorphic) && (explicit || (args.band_a.is_some() && args.band_b.is_some())) {
        let what = "the isomorphic floor";
        let band = CovarianceBand::new(
            need(args.band_a, "band-a", what)?,
            need(args.band_upper, "band-upper", what)?,
            need(args.band_b, "band-b", what)?,
        )?;
        out.push(isomorphic_floor(&band, need(args.n, "n", what)?, need(args.rows, "rows", what)?, &k)?);
    }
    if wanted(Regime::GeneralSmallball)
        && (explicit || (args.tau.is_some() && args.q2tau.is_some() && args.band_upper.is_some()))
    {
        let what = "the general small-ball floor";
        out.push(general_floor(
            need(args.tau, "tau", what)?,
            need(args.q2tau, "q2tau", what)?,
            need(args.band_upper, "band-upper", what)?,
            need(args.n, "n", what)?,
            need(args.rows, "rows", what)?,
            &k,
        )?);
    }
    if out.is_empty() {
        bail!("no prediction requested: give --beta/--eta, --tau/--q2tau/--rn, or a band");
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let config = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let seed = cli.seed.or(config.as_ref().and_then(|c| c.experiment.as_ref().map(|e| e.seed))).unwrap_or(0);
    let out = cli.out.as_deref();
    let json = cli.format == Format::Json;

    match &cli.command {
        Command::Sample { spec, size } => {
            let spec = spec.resolve(config.as_ref())?;
            let rows = size.rows(spec.n)?;
            let m = SampleMatrix::assemble(&spec, rows, SeedRecord::new(seed, &[]))?;
            let path = out.ok_or_else(|| anyhow!("sample writes a binary matrix; give --out"))?;
            let mut w = BufWriter::new(File::create(path)?);
            m.write_to(&mut w)?;
            w.flush()?;
            eprintln!("wrote {}x{} matrix to {}", m.rows(), m.cols(), path.display());
        }
        Command::Spectrum { input, validate } => {
            let m = SampleMatrix::read_from(BufReader::new(File::open(input)?))?;
            let r = lambda_extremes(&m)?;
            let power = if *validate && m.rows() >= m.cols() {
                Some(lambda_min_power(&m, 0.0, 1e-12)?.max(0.0).sqrt())
            } else {
                None
            };
            if json {
                #[derive(Serialize)]
                struct Report {
                    #[serde(flatten)]
                    result: lambdamin::spectrum::SpectralResult,
                    condition_number: f64,
                    #[serde(skip_serializing_if = "Option::is_none")]
                    lambda_min_inverse_power: Option<f64>,
                    seed: Option<SeedRecord>,
                }
                write_json(
                    &Report {
                        result: r,
                        condition_number: r.condition_number(),
                        lambda_min_inverse_power: power,
                        seed: m.seed(),
                    },
                    out,
                )?;
            } else {
                let mut fields = vec![
                    ("rows", m.rows().to_string()),
                    ("cols", m.cols().to_string()),
                    ("lambda_min", r.lambda_min.to_string()),
                    ("lambda_max", r.lambda_max.to_string()),
                    ("condition_number", r.condition_number().to_string()),
                    ("residual", r.residual.to_string()),
                ];
                if let Some(p) = power {
                    fields.push(("lambda_min_inverse_power", p.to_string()));
                }
                write_kv_csv(&fields, out)?;
            }
        }
        Command::Smallball { spec, samples, u_grid, budget, analytic_ratios } => {
            let spec = spec.resolve(config.as_ref())?;
            let draws = draw_samples(&spec, *samples, &mut substream(seed, &[0x5b]))?;
            let ratios = if *analytic_ratios { Some(moment_ratios_analytic(&spec, 2.0)?) } else { None };
            let curve = small_ball_curve(&draws, u_grid, ratios, *budget, substream_seed(seed, &[0x5c]))?;
            if json {
                write_json(&curve, out)?;
            } else {
                let mut w = output(out)?;
                curve.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Command::Rademacher { spec, size, draws, exact } => {
            let spec = spec.resolve(config.as_ref())?;
            let rows = size.rows(spec.n)?;
            let s = draw_samples(&spec, rows, &mut substream(seed, &[0x7a]))?;
            let est = if *exact {
                rademacher_exact(&s)?
            } else {
                rademacher_linear(&s, *draws, substream_seed(seed, &[0x7b]))?
            };
            let upper = rademacher_upper(1.0, spec.n, rows)?;
            let conditional = conditional_second_moment_bound(&s);
            if json {
                #[derive(Serialize)]
                struct Report {
                    #[serde(flatten)]
                    estimate: lambdamin::rademacher::RademacherEstimate,
                    n: usize,
                    #[serde(rename = "N")]
                    rows: usize,
                    upper_bound: f64,
                    conditional_bound: f64,
                }
                write_json(&Report { estimate: est, n: spec.n, rows, upper_bound: upper, conditional_bound: conditional }, out)?;
            } else {
                write_kv_csv(
                    &[
                        ("family", spec.family.to_string()),
                        ("n", spec.n.to_string()),
                        ("N", rows.to_string()),
                        ("value", est.value.to_string()),
                        ("stderr", est.stderr.to_string()),
                        ("draws", est.draws.to_string()),
                        ("exact", est.exact.to_string()),
                        ("upper_bound", upper.to_string()),
                        ("conditional_bound", conditional.to_string()),
                    ],
                    out,
                )?;
            }
        }
        Command::Bounds(args) => {
            let preds = bounds(args, config.as_ref())?;
            if json {
                write_json(&preds, out)?;
            } else {
                let mut w = output(out)?;
                write_predictions_csv(&preds, &mut w)?;
                w.flush()?;
            }
        }
        Command::Sweep => {
            let mut cfg = config
                .clone()
                .ok_or_else(|| anyhow!("sweep needs --config"))?
                .into_experiment()?;
            if let Some(s) = cli.seed {
                cfg.experiment.seed = s;
            }
            let result = run_sweep(&cfg)?;
            let main_out = out.map(Path::to_path_buf).or_else(|| cfg.outputs.sweep_csv.clone());
            if json {
                write_json(&result, main_out.as_deref())?;
            } else {
                let mut w = output(main_out.as_deref())?;
                write_sweep_csv(&result, &mut w)?;
                w.flush()?;
            }
            if let Some(p) = &cfg.outputs.summary_csv {
                let mut w = output(Some(p))?;
                write_summary_csv(&result, &mut w)?;
                w.flush()?;
            }
            if let Some(p) = &cfg.outputs.json {
                write_json(&result, Some(p))?;
            }
            for s in &result.summaries {
                eprintln!(
                    "beta={:<10} N={:<6} median={:.4} p05={:.4} deficit={:.4} floor[{}]={:.4}",
                    s.beta,
                    s.big_n,
                    s.median_lmin(),
                    s.p05_lmin(),
                    s.deficit,
                    s.prediction.regime,
                    s.prediction.floor
                );
            }
            match &result.fit {
                Some(f) => eprintln!("fitted exponent {:.4} +- {:.4}", f.exponent, f.half_width),
                None => eprintln!("no exponent fit: {}", result.fit_note.as_deref().unwrap_or("")),
            }
            if result.failures > 0 {
                eprintln!("{} trials failed", result.failures);
            }
        }
        Command::Verify { level, mutate } => {
            let report = verify_suite(VerifyBudget { level: *level, mutate_phi: *mutate });
            if json {
                write_json(&report, out)?;
            } else {
                let mut w = output(out)?;
                writeln!(w, "check,status,detail")?;
                for c in &report.checks {
                    let status = serde_json::to_value(c.status)?;
                    writeln!(w, "{},{},\"{}\"", c.name, status.as_str().unwrap_or(""), c.detail.replace('"', "'"))?;
                }
                w.flush()?;
            }
            eprintln!("{} passed, {} failed, {} skipped", report.passed, report.failed, report.skipped);
            if !report.ok() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Fit { input, regime } => {
            let report = fit_from_csv(BufReader::new(File::open(input)?), *regime)?;
            if json {
                write_json(&report, out)?;
            } else {
                write_kv_csv(
                    &[
                        ("regime", report.regime.to_string()),
                        ("exponent", report.fit.exponent.to_string()),
                        ("constant", report.fit.constant.to_string()),
                        ("half_width", report.fit.half_width.to_string()),
                        ("points", report.fit.points.to_string()),
                        ("excluded", report.fit.excluded.to_string()),
                    ],
                    out,
                )?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
