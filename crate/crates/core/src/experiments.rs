//! Reproducible aspect-ratio sweeps, exponent fits and the one-command
//! verification suite.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    basic_floor, calibrate_at_anchor, fit_exponent, floor_regime, general_floor, isomorphic_floor, regime_rate,
    BoundPrediction, ConstantSet, DeficitPoint, ExponentFit, Regime,
};
use crate::distributions::{analytic_band, DistributionSpec};
use crate::error::{invalid_param, Error, Result};
use crate::numeric::{compensated_sum, median, quantile_sorted};
use crate::rademacher::{rademacher_linear, RademacherEstimate, DEFAULT_DRAWS};
use crate::seed::{substream_seed, SeedRecord};
use crate::smallball::q_inf_search;
use crate::spectrum::{lambda_extremes, SampleMatrix};

pub const SWEEP_HEADER: [&str; 9] = ["family", "eta", "n", "N", "beta", "trial", "lambda_min", "lambda_max", "seed"];
pub const SUMMARY_HEADER: [&str; 10] = [
    "family",
    "eta",
    "n",
    "beta",
    "median_lmin",
    "p05_lmin",
    "deficit",
    "floor_regime",
    "floor_value",
    "precondition_ok",
];
const DIAGNOSTICS_KEY: u64 = 0xd1a6;

fn default_tau() -> f64 {
    0.25
}
fn default_true() -> bool {
    true
}
fn default_draws() -> usize {
    DEFAULT_DRAWS
}
fn default_budget() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub beta_grid: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Small-ball level for the per-beta diagnostics.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Per-beta small-ball and Rademacher estimates on the first trial.
    #[serde(default = "default_true")]
    pub diagnostics: bool,
    #[serde(default = "default_draws")]
    pub rademacher_draws: usize,
    #[serde(default = "default_budget")]
    pub search_budget: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub distribution: DistributionSpec,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub constants: ConstantSet,
    #[serde(default)]
    pub outputs: OutputPaths,
}

impl ExperimentConfig {
    pub fn new(spec: DistributionSpec, beta_grid: Vec<f64>, trials: usize, seed: u64) -> Self {
        ExperimentConfig {
            distribution: spec,
            experiment: ExperimentSection {
                beta_grid,
                trials,
                seed,
                tau: default_tau(),
                diagnostics: true,
                rademacher_draws: DEFAULT_DRAWS,
                search_budget: default_budget(),
            },
            constants: ConstantSet::default(),
            outputs: OutputPaths::default(),
        }
    }

    pub fn without_diagnostics(mut self) -> Self {
        self.experiment.diagnostics = false;
        self
    }

    pub fn n(&self) -> usize {
        self.distribution.n
    }

    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        self.constants.validate()?;
        let e = &self.experiment;
        if e.beta_grid.is_empty() {
            return Err(Error::Config("beta_grid is empty".into()));
        }
        if let Some(b) = e.beta_grid.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return Err(Error::Config(format!("beta={b} outside (0, 1]")));
        }
        if e.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if !(e.tau > 0.0) || e.rademacher_draws == 0 || e.search_budget == 0 {
            return Err(Error::Config("tau, rademacher_draws and search_budget must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A config file where every section is optional; subcommands other than
/// `sweep` read only the sections they need.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub distribution: Option<DistributionSpec>,
    pub experiment: Option<ExperimentSection>,
    pub constants: Option<ConstantSet>,
    pub outputs: Option<OutputPaths>,
}

impl ConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(d) = &cfg.distribution {
            d.validate()?;
        }
        if let Some(k) = &cfg.constants {
            k.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn into_experiment(self) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig {
            distribution: self.distribution.ok_or_else(|| Error::Config("missing [distribution]".into()))?,
            experiment: self.experiment.ok_or_else(|| Error::Config("missing [experiment]".into()))?,
            constants: self.constants.unwrap_or_default(),
            outputs: self.outputs.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Smallest `N` with `n / N <= beta`.
pub fn sample_size(n: usize, beta: f64) -> Result<usize> {
    if !(beta > 0.0 && beta <= 1.0) || n == 0 {
        return Err(invalid_param(format!("need n >= 1 and beta in (0, 1], got n={n}, beta={beta}")));
    }
    let nf = n as f64;
    let mut big_n = (nf / beta).ceil() as usize;
    while big_n > n && nf / (big_n - 1) as f64 <= beta {
        big_n -= 1;
    }
    while nf / big_n as f64 > beta {
        big_n += 1;
    }
    Ok(big_n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub beta_index: usize,
    pub beta: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub trial: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p05: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub tau: f64,
    /// Direction-search upper estimate of `Q(2 tau)` on the first trial.
    pub q2tau_upper: f64,
    pub rademacher: RademacherEstimate,
    pub basic: BoundPrediction,
    pub general: BoundPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSummary {
    pub beta: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub trials_ok: usize,
    pub failures: usize,
    pub mean_lmin: f64,
    pub quantiles: Quantiles,
    pub median_lmax: f64,
    /// `1 - median lambda_min`.
    pub deficit: f64,
    pub prediction: BoundPrediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isomorphic: Option<BoundPrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

impl BetaSummary {
    pub fn median_lmin(&self) -> f64 {
        self.quantiles.p50
    }

    pub fn p05_lmin(&self) -> f64 {
        self.quantiles.p05
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub regime: Regime,
    #[serde(rename = "L")]
    pub tail_constant: f64,
    pub trials: Vec<TrialRow>,
    pub summaries: Vec<BetaSummary>,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<ExponentFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_note: Option<String>,
}

/// Tail exponent used for regime selection; light-tailed families count as
/// `eta = inf`.
pub fn effective_eta(spec: &DistributionSpec) -> f64 {
    match spec.eta {
        Some(eta) if spec.family.is_heavy() => eta,
        _ => f64::INFINITY,
    }
}

fn run_trial(spec: &DistributionSpec, master: u64, b: usize, beta: f64, big_n: usize, trial: usize) -> TrialRow {
    let seed = SeedRecord::new(master, &[b as u64, trial as u64]);
    let outcome = SampleMatrix::assemble(spec, big_n, seed).and_then(|m| lambda_extremes(&m));
    let (lambda_min, lambda_max, error) = match outcome {
        Ok(r) => (r.lambda_min, r.lambda_max, None),
        Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
    };
    TrialRow { beta_index: b, beta, big_n, trial, lambda_min, lambda_max, seed: seed.stream, error }
}

fn diagnostics(cfg: &ExperimentConfig, b: usize, big_n: usize) -> Result<Diagnostics> {
    let e = &cfg.experiment;
    let master = e.seed;
    let m = SampleMatrix::assemble(&cfg.distribution, big_n, SeedRecord::new(master, &[b as u64, 0]))?;
    let samples = m.raw_samples();
    let diag_seed = substream_seed(master, &[b as u64, DIAGNOSTICS_KEY]);
    let q = q_inf_search(&samples, 2.0 * e.tau, e.search_budget, diag_seed)?.value;
    let rad = rademacher_linear(&samples, e.rademacher_draws, diag_seed ^ 1)?;
    Ok(Diagnostics {
        tau: e.tau,
        q2tau_upper: q,
        rademacher: rad,
        basic: basic_floor(e.tau, q, rad.value, big_n)?,
        general: general_floor(e.tau, q, 1.0, cfg.n(), big_n, &cfg.constants)?,
    })
}

fn summarize(cfg: &ExperimentConfig, rows: &[TrialRow], b: usize, eta: f64, l: f64) -> Result<BetaSummary> {
    let beta = cfg.experiment.beta_grid[b];
    let big_n = sample_size(cfg.n(), beta)?;
    let mut mins: Vec<f64> = rows.iter().filter(|r| r.error.is_none()).map(|r| r.lambda_min).collect();
    let maxs: Vec<f64> = rows.iter().filter(|r| r.error.is_none()).map(|r| r.lambda_max).collect();
    mins.sort_by(f64::total_cmp);
    let ok = mins.len();
    let q = |p: f64| if ok == 0 { f64::NAN } else { quantile_sorted(&mins, p) };
    let quantiles = Quantiles { p05: q(0.05), p25: q(0.25), p50: q(0.5), p75: q(0.75), p95: q(0.95) };
    let prediction = floor_regime(eta, l, beta, big_n, &cfg.constants)?;
    let isomorphic = analytic_band(&cfg.distribution)
        .ok()
        .map(|band| isomorphic_floor(&band, cfg.n(), big_n, &cfg.constants))
        .transpose()?;
    let diagnostics = if cfg.experiment.diagnostics { Some(diagnostics(cfg, b, big_n)?) } else { None };
    Ok(BetaSummary {
        beta,
        big_n,
        trials_ok: ok,
        failures: rows.len() - ok,
        mean_lmin: if ok == 0 { f64::NAN } else { compensated_sum(mins.iter().copied()) / ok as f64 },
        quantiles: quantiles.clone(),
        median_lmax: if ok == 0 { f64::NAN } else { median(&maxs) },
        deficit: 1.0 - quantiles.p50,
        prediction,
        isomorphic,
        diagnostics,
    })
}

/// Every (beta, trial) matrix on its own substream, then a sequential
/// aggregation in grid order. Uses the current rayon pool.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let spec = &cfg.distribution;
    let e = &cfg.experiment;
    let sizes: Vec<usize> = e.beta_grid.iter().map(|&b| sample_size(spec.n, b)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..e.beta_grid.len()).flat_map(|b| (0..e.trials).map(move |t| (b, t))).collect();
    let trials: Vec<TrialRow> = jobs
        .par_iter()
        .map(|&(b, t)| run_trial(spec, e.seed, b, e.beta_grid[b], sizes[b], t))
        .collect();
    let eta = effective_eta(spec);
    let regime = Regime::for_eta(eta)?;
    let l = spec.tail()?.map_or(1.0, |t| t.l);
    let summaries = (0..e.beta_grid.len())
        .map(|b| summarize(cfg, &trials[b * e.trials..(b + 1) * e.trials], b, eta, l))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<DeficitPoint> =
        summaries.iter().map(|s| DeficitPoint { beta: s.beta, deficit: s.deficit }).collect();
    let (fit, fit_note) = match fit_exponent(&points, regime) {
        Ok(f) => (Some(f), None),
        Err(err) => (None, Some(err.to_string())),
    };
    Ok(SweepResult {
        config: cfg.clone(),
        regime,
        tail_constant: l,
        failures: trials.iter().filter(|r| r.error.is_some()).count(),
        trials,
        summaries,
        fit,
        fit_note,
    })
}

/// [`run_sweep`] inside a dedicated pool of `threads` workers.
pub fn run_sweep_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid_param(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep(cfg))
}

fn fmt_eta(spec: &DistributionSpec) -> String {
    spec.eta.map(|e| e.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(result: &SweepResult, w: W) -> Result<()> {
    let spec = &result.config.distribution;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in &result.trials {
        out.write_record([
            spec.family.as_str().to_string(),
            fmt_eta(spec),
            spec.n.to_string(),
            r.big_n.to_string(),
            r.beta.to_string(),
            r.trial.to_string(),
            r.lambda_min.to_string(),
            r.lambda_max.to_string(),
            r.seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(result: &SweepResult, w: W) -> Result<()> {
    let spec = &result.config.distribution;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for s in &result.summaries {
        out.write_record([
            spec.family.as_str().to_string(),
            fmt_eta(spec),
            spec.n.to_string(),
            s.beta.to_string(),
            s.median_lmin().to_string(),
            s.p05_lmin().to_string(),
            s.deficit.to_string(),
            s.prediction.regime.as_str().to_string(),
            s.prediction.floor.to_string(),
            s.prediction.precondition_ok.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub regime: Regime,
    pub fit: ExponentFit,
    pub points: Vec<DeficitPoint>,
}

/// Exponent fit from a summary CSV (`beta`, `deficit`, optional
/// `floor_regime`) or a sweep CSV (`beta`, `lambda_min`; deficits from
/// per-beta medians). An explicit `regime` wins over the file's.
pub fn fit_from_csv<R: Read>(input: R, regime: Option<Regime>) -> Result<FitReport> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let beta_col = col("beta").ok_or_else(|| Error::InvalidInput("CSV has no beta column".into()))?;
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: '{s}'")));
    let mut file_regime = None;
    let points = if let Some(d) = col("deficit") {
        let mut pts = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            pts.push(DeficitPoint { beta: parse(&rec[beta_col])?, deficit: parse(&rec[d])? });
            if let Some(rc) = col("floor_regime") {
                file_regime.get_or_insert(rec[rc].parse::<Regime>()?);
            }
        }
        pts
    } else if let Some(lm) = col("lambda_min") {
        let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
        let eta_col = col("eta");
        for rec in rdr.records() {
            let rec = rec?;
            let beta = parse(&rec[beta_col])?;
            let v = parse(&rec[lm])?;
            if v.is_finite() {
                groups.entry(beta.to_bits()).or_insert((beta, Vec::new())).1.push(v);
            }
            if let Some(ec) = eta_col {
                let eta = if rec[ec].is_empty() { f64::INFINITY } else { parse(&rec[ec])? };
                file_regime.get_or_insert(Regime::for_eta(eta)?);
            }
        }
        let mut pts: Vec<DeficitPoint> =
            groups.into_values().map(|(beta, v)| DeficitPoint { beta, deficit: 1.0 - median(&v) }).collect();
        pts.sort_by(|a, b| b.beta.total_cmp(&a.beta));
        pts
    } else {
        return Err(Error::InvalidInput("CSV needs a deficit or lambda_min column".into()));
    };
    let regime = regime.or(file_regime).unwrap_or(Regime::EtaGt2);
    Ok(FitReport { regime, fit: fit_exponent(&points, regime)?, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub beta: f64,
    pub p05_lmin: f64,
    pub floor: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub regime: Regime,
    pub anchor_beta: f64,
    pub constant: f64,
    pub rows: Vec<CoverageRow>,
    pub violations: usize,
}

/// Calibrates the regime constant so that the floor meets the 5th
/// percentile at the largest beta, then checks the 5th percentile against
/// the resulting floor at every other beta.
pub fn holdout_coverage(result: &SweepResult) -> Result<CoverageReport> {
    let eta = effective_eta(&result.config.distribution);
    let regime = result.regime;
    let anchor = result
        .summaries
        .iter()
        .max_by(|a, b| a.beta.total_cmp(&b.beta))
        .ok_or_else(|| Error::CalibrationUnavailable("empty sweep".into()))?;
    let c = calibrate_at_anchor(regime, eta, anchor.beta, 1.0 - anchor.p05_lmin())?;
    let mut rows = Vec::new();
    for s in result.summaries.iter().filter(|s| s.beta < anchor.beta) {
        let floor = 1.0 - c * regime_rate(regime, eta, s.beta)?;
        rows.push(CoverageRow { beta: s.beta, p05_lmin: s.p05_lmin(), floor, covered: s.p05_lmin() >= floor });
    }
    Ok(CoverageReport {
        regime,
        anchor_beta: anchor.beta,
        constant: c,
        violations: rows.iter().filter(|r| !r.covered).count(),
        rows,
    })
}

pub use verify::{verify_suite, CheckStatus, VerifyBudget, VerifyCheck, VerifyReport};

mod verify {
    use super::*;
    use crate::distributions::{draw_samples, Samples};
    use crate::empirical_process::{
        check_phi, corrupted_phi, random_instance, second_moment_identity, tail_integral, tiny_oracle,
        tiny_oracle_bruteforce, truncation_phi, vc_bruteforce, DyadicDecomposition, MarginalTail, SetClass,
        Verdict,
    };
    use crate::numeric::integrate;
    use crate::rademacher::{rademacher_exact, rademacher_mc};
    use crate::seed::{rng_from_seed, substream};
    use crate::smallball::{moment_ratios_analytic, paley_zygmund_lower};
    use crate::spectrum::lambda_min_power;
    use rand::Rng;

    /// How much of the suite to run: 1 runs only the cheap checks, 2 is the
    /// default, 3 adds the slower cross-checks.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    pub struct VerifyBudget {
        pub level: u8,
        /// Swap in a corrupted truncation function.
        pub mutate_phi: bool,
    }

    impl Default for VerifyBudget {
        fn default() -> Self {
            VerifyBudget { level: 2, mutate_phi: false }
        }
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "kebab-case")]
    pub enum CheckStatus {
        Passed,
        Failed,
        Skipped,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct VerifyCheck {
        pub name: String,
        pub status: CheckStatus,
        pub detail: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct VerifyReport {
        pub budget: VerifyBudget,
        pub checks: Vec<VerifyCheck>,
        pub passed: usize,
        pub failed: usize,
        pub skipped: usize,
    }

    impl VerifyReport {
        pub fn ok(&self) -> bool {
            self.failed == 0
        }
    }

    type Check = (&'static str, u8, fn(&VerifyBudget) -> Result<(bool, String)>);

    const CHECKS: [Check; 10] = [
        ("phi-sandwich-lipschitz", 1, phi_check),
        ("second-moment-identity", 1, identity_check),
        ("tail-integral-remainder", 1, tail_check),
        ("vc-line-abs-threshold", 1, vc_line_check),
        ("oracle-battery", 2, oracle_battery),
        ("spectral-cross-method", 2, spectral_check),
        ("rademacher-exact-vs-mc", 2, rademacher_check),
        ("paley-zygmund-sandwich", 2, pz_check),
        ("vc-planar-halfspaces", 2, vc_planar_check),
        ("oracle-bruteforce-agreement", 3, oracle_bruteforce_check),
    ];

    pub fn verify_suite(budget: VerifyBudget) -> VerifyReport {
        let mut checks = Vec::new();
        for (name, level, run) in CHECKS {
            let (status, detail) = if level > budget.level {
                (CheckStatus::Skipped, format!("needs budget level {level}"))
            } else {
                match run(&budget) {
                    Ok((true, d)) => (CheckStatus::Passed, d),
                    Ok((false, d)) => (CheckStatus::Failed, d),
                    Err(e) => (CheckStatus::Failed, format!("error: {e}")),
                }
            };
            checks.push(VerifyCheck { name: name.to_string(), status, detail });
        }
        let count = |s| checks.iter().filter(|c| c.status == s).count();
        VerifyReport {
            budget,
            passed: count(CheckStatus::Passed),
            failed: count(CheckStatus::Failed),
            skipped: count(CheckStatus::Skipped),
            checks,
        }
    }

    fn phi_check(b: &VerifyBudget) -> Result<(bool, String)> {
        let us: Vec<f64> = (1..=100).map(|i| i as f64 * 0.05).collect();
        let ts: Vec<f64> = (0..100).map(|i| i as f64 * 0.11).collect();
        let r = if b.mutate_phi {
            check_phi(corrupted_phi, &us, &ts)
        } else {
            check_phi(|u, t| truncation_phi(u, t).unwrap_or(f64::NAN), &us, &ts)
        };
        Ok((r.passed(), format!("{r:?}")))
    }

    fn identity_check(_: &VerifyBudget) -> Result<(bool, String)> {
        let mut rng = substream(0x1de7, &[]);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let len = rng.random_range(1..200);
            let scale = 10f64.powi(rng.random_range(-3..4));
            let v: Vec<f64> = (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let c = second_moment_identity(&v)?;
            if c.lhs > 0.0 {
                worst = worst.max(c.gap / c.lhs);
            }
        }
        Ok((worst <= 1e-12, format!("worst relative gap {worst:e}")))
    }

    fn tail_check(_: &VerifyBudget) -> Result<(bool, String)> {
        let d = DyadicDecomposition::new(1.0, 2.0, 0.05)?;
        let v = tail_integral(&MarginalTail::Pareto { l: 2.0, eta: 1.0 }, d.a_trunc)?.value;
        let rel = (v - d.remainder_bound()).abs() / v;
        Ok((rel <= 1e-8, format!("integral {v}, closed form {}", d.remainder_bound())))
    }

    fn generic_points(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..count).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn vc_line_check(_: &VerifyBudget) -> Result<(bool, String)> {
        let r = vc_bruteforce(&generic_points(12, 1, 3), SetClass::AbsThreshold)?;
        Ok((r.shattered_size == 1, format!("shattering number {}", r.shattered_size)))
    }

    fn vc_planar_check(_: &VerifyBudget) -> Result<(bool, String)> {
        let r = vc_bruteforce(&generic_points(10, 2, 4), SetClass::Halfspaces)?;
        Ok((r.shattered_size == 3, format!("shattering number {}", r.shattered_size)))
    }

    fn oracle_battery(_: &VerifyBudget) -> Result<(bool, String)> {
        let mut rng = substream(0x0a11, &[]);
        let (mut applicable, mut violated, mut chain) = (0, 0, 0);
        for _ in 0..100 {
            let (inst, tau) = random_instance(&mut rng, 4, 3, 8)?;
            let r = tiny_oracle(&inst, &tau)?;
            applicable += r.hypothesis_holds as usize;
            violated += (r.verdict == Verdict::Violated) as usize;
            chain += r.chain_violations;
        }
        Ok((
            violated == 0 && chain == 0,
            format!("100 instances, {applicable} applicable, {violated} violated, {chain} chain violations"),
        ))
    }

    fn oracle_bruteforce_check(_: &VerifyBudget) -> Result<(bool, String)> {
        let mut rng = substream(0x0b1f, &[]);
        let mut mismatches = 0;
        for _ in 0..30 {
            let (inst, tau) = random_instance(&mut rng, 3, 3, 5)?;
            let r = tiny_oracle(&inst, &tau)?;
            let (q, rn, p) = tiny_oracle_bruteforce(&inst, &tau)?;
            if r.q2tau != q.to_string() || r.r_n != rn.to_string() || r.exact_probability != p.to_string() {
                mismatches += 1;
            }
        }
        Ok((mismatches == 0, format!("30 instances, {mismatches} mismatches")))
    }

    fn spectral_check(_: &VerifyBudget) -> Result<(bool, String)> {
        let specs = [
            DistributionSpec::gaussian(8),
            DistributionSpec::heavy_radial(8, 1.0),
            DistributionSpec::rademacher(8),
            DistributionSpec::uniform_cube(8),
        ];
        let mut worst: f64 = 0.0;
        for (i, spec) in specs.iter().enumerate() {
            let m = SampleMatrix::assemble(spec, 40, SeedRecord::new(0x5bec, &[i as u64]))?;
            let sym = lambda_extremes(&m)?;
            let target = sym.lambda_min * sym.lambda_min;
            let power = lambda_min_power(&m, 0.0, 1e-12)?;
            worst = worst.max((power - target).abs() / target);
        }
        Ok((worst <= 1e-8, format!("worst relative disagreement {worst:e}")))
    }

    fn rademacher_check(_: &VerifyBudget) -> Result<(bool, String)> {
        let mut outside = 0;
        for i in 0..20u64 {
            let spec = [DistributionSpec::gaussian(4), DistributionSpec::heavy_iid(4, 3.0)][(i % 2) as usize].clone();
            let s: Samples = draw_samples(&spec, 10, &mut substream(0x4ade, &[i]))?;
            let exact = rademacher_exact(&s)?;
            let mc = rademacher_mc(&s, 2000, substream_seed(0x4ade, &[i, 1]))?;
            outside += ((mc.value - exact.value).abs() > 3.0 * mc.stderr) as usize;
        }
        // A 3-stderr band misses about 0.3% of the time; allow one.
        Ok((outside <= 1, format!("{outside} of 20 outside 3 stderr")))
    }

    fn pz_check(_: &VerifyBudget) -> Result<(bool, String)> {
        let spec = DistributionSpec::gaussian(1);
        let ratios = moment_ratios_analytic(&spec, 2.0)?;
        let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut ok = true;
        let mut detail = Vec::new();
        for u in [0.1, 0.2, 0.4] {
            let tail = 1.0 - 2.0 * integrate(density, 0.0, u, 1e-12)?;
            let pz = paley_zygmund_lower(&ratios, u)?.value;
            ok &= pz <= tail;
            detail.push(format!("u={u}: {pz:.6} <= {tail:.6}"));
        }
        Ok((ok, detail.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig::new(DistributionSpec::gaussian(4), vec![0.5, 0.25], 3, 11)
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(sample_size(100, 0.0625).unwrap(), 1600);
        assert_eq!(sample_size(3, 0.3).unwrap(), 10);
        assert_eq!(sample_size(64, 1.0 / 3.0).unwrap(), 192);
        assert_eq!(sample_size(5, 1.0).unwrap(), 5);
        assert_eq!(sample_size(7, 0.4).unwrap(), 18);
        assert!(sample_size(5, 0.0).is_err());
    }

    #[test]
    fn config_round_trip_and_rejection() {
        let cfg = small_cfg();
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let bad = text.replace("[experiment]", "[experiment]\nbogus = 1");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config(_))));
        let bad_beta = text.replace("beta_grid = [0.5, 0.25]", "beta_grid = [1.5]");
        assert!(ExperimentConfig::from_toml_str(&bad_beta).is_err());
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = small_cfg();
        let a = run_sweep_with_threads(&cfg, 1).unwrap();
        let b = run_sweep_with_threads(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 6);
        assert_eq!(a.summaries[1].big_n, 16);
        assert_eq!(a.regime, Regime::EtaGt2);
        assert!(a.fit.is_none() && a.fit_note.is_some());
        let mut csv = Vec::new();
        write_sweep_csv(&a, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("family,eta,n,N,beta,trial,lambda_min,lambda_max,seed\ngaussian-iid,,4,8,0.5,0,"));
    }

    #[test]
    fn fit_from_both_csv_kinds() {
        let cfg = ExperimentConfig::new(
            DistributionSpec::gaussian(6),
            vec![0.5, 0.25, 0.125, 0.0625],
            4,
            3,
        )
        .without_diagnostics();
        let r = run_sweep(&cfg).unwrap();
        let mut sweep = Vec::new();
        write_sweep_csv(&r, &mut sweep).unwrap();
        let mut summary = Vec::new();
        write_summary_csv(&r, &mut summary).unwrap();
        let a = fit_from_csv(sweep.as_slice(), None).unwrap();
        let b = fit_from_csv(summary.as_slice(), None).unwrap();
        assert_eq!(a.regime, Regime::EtaGt2);
        assert!((a.fit.exponent - b.fit.exponent).abs() < 1e-12);
        assert!((a.fit.exponent - r.fit.unwrap().exponent).abs() < 1e-12);
    }

    #[test]
    fn verify_mutation_and_gating() {
        let quick = verify_suite(VerifyBudget { level: 1, mutate_phi: false });
        assert!(quick.ok(), "{quick:#?}");
        assert!(quick.skipped > 0);
        let mutated = verify_suite(VerifyBudget { level: 1, mutate_phi: true });
        assert!(!mutated.ok());
        let phi = mutated.checks.iter().find(|c| c.name == "phi-sandwich-lipschitz").unwrap();
        assert_eq!(phi.status, CheckStatus::Failed);
    }
}
