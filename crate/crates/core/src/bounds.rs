//! Predicted floors and failure probabilities, with every constant named,
//! overridable and tagged as default or calibrated.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::CovarianceBand;
use crate::error::{invalid_param, Error, Result};
use crate::numeric::{compensated_sum, least_squares, LinearFit};

/// Tolerance for treating `eta` as exactly 2.
pub const ETA_TWO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    #[serde(rename = "eta-gt-2")]
    EtaGt2,
    #[serde(rename = "eta-eq-2")]
    EtaEq2,
    #[serde(rename = "eta-lt-2")]
    EtaLt2,
    BasicSmallball,
    Isomorphic,
    GeneralSmallball,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::EtaGt2,
        Regime::EtaEq2,
        Regime::EtaLt2,
        Regime::BasicSmallball,
        Regime::Isomorphic,
        Regime::GeneralSmallball,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::EtaGt2 => "eta-gt-2",
            Regime::EtaEq2 => "eta-eq-2",
            Regime::EtaLt2 => "eta-lt-2",
            Regime::BasicSmallball => "basic-smallball",
            Regime::Isomorphic => "isomorphic",
            Regime::GeneralSmallball => "general-smallball",
        }
    }

    /// Heavy-tail regime for a given tail exponent (infinite means light-tailed).
    pub fn for_eta(eta: f64) -> Result<Regime> {
        if !(eta > 0.0) {
            return Err(invalid_param(format!("eta={eta} must be > 0")));
        }
        Ok(if (eta - 2.0).abs() <= ETA_TWO_TOL {
            Regime::EtaEq2
        } else if eta > 2.0 {
            Regime::EtaGt2
        } else {
            Regime::EtaLt2
        })
    }

    pub fn is_heavy_tail(self) -> bool {
        matches!(self, Regime::EtaGt2 | Regime::EtaEq2 | Regime::EtaLt2)
    }

    /// Names of the constants this regime reads.
    pub fn constant_names(self) -> &'static [&'static str] {
        match self {
            Regime::EtaGt2 => &["c0", "c1", "c2"],
            Regime::EtaEq2 => &["c3", "c4"],
            Regime::EtaLt2 => &["c5", "c6"],
            Regime::BasicSmallball => &[],
            Regime::Isomorphic => &["iso_c0", "iso_c1", "iso_c2"],
            Regime::GeneralSmallball => &["gen_c1", "gen_c2", "gen_c3"],
        }
    }

    /// The constant multiplying the deficit rate, if any.
    pub fn floor_constant(self) -> Option<&'static str> {
        match self {
            Regime::EtaGt2 => Some("c2"),
            Regime::EtaEq2 => Some("c4"),
            Regime::EtaLt2 => Some("c6"),
            Regime::Isomorphic => Some("iso_c2"),
            Regime::GeneralSmallball => Some("gen_c2"),
            Regime::BasicSmallball => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| invalid_param(format!("unknown regime '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Default,
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constant {
    pub value: f64,
    pub provenance: Provenance,
}

impl Constant {
    pub const fn default_one() -> Self {
        Constant { value: 1.0, provenance: Provenance::Default }
    }
}

impl Default for Constant {
    fn default() -> Self {
        Constant::default_one()
    }
}

// A bare number in a config file is a user override with default provenance.
impl<'de> Deserialize<'de> for Constant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bare(f64),
            Full {
                value: f64,
                #[serde(default = "default_provenance")]
                provenance: Provenance,
            },
        }
        fn default_provenance() -> Provenance {
            Provenance::Default
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Bare(value) => Constant { value, provenance: Provenance::Default },
            Repr::Full { value, provenance } => Constant { value, provenance },
        })
    }
}

macro_rules! constant_set {
    ($($name:ident),* $(,)?) => {
        /// Named positive constants. Every one defaults to 1.
        #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct ConstantSet {
            $(pub $name: Constant,)*
        }

        impl Default for ConstantSet {
            fn default() -> Self {
                ConstantSet { $($name: Constant::default_one(),)* }
            }
        }

        impl ConstantSet {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn constant(&self, name: &str) -> Result<Constant> {
                match name {
                    $(stringify!($name) => Ok(self.$name),)*
                    _ => Err(invalid_param(format!("unknown constant '{name}'"))),
                }
            }

            fn slot(&mut self, name: &str) -> Result<&mut Constant> {
                match name {
                    $(stringify!($name) => Ok(&mut self.$name),)*
                    _ => Err(invalid_param(format!("unknown constant '{name}'"))),
                }
            }
        }
    };
}

constant_set!(
    c0, c1, c2, c3, c4, c5, c6, kappa, iso_c0, iso_c1, iso_c2, gen_c1, gen_c2, gen_c3,
);

impl ConstantSet {
    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.constant(name)?.value)
    }

    pub fn set(&mut self, name: &str, value: f64, provenance: Provenance) -> Result<()> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(invalid_param(format!("constant {name}={value} must be positive and finite")));
        }
        *self.slot(name)? = Constant { value, provenance };
        Ok(())
    }

    pub fn with(mut self, name: &str, value: f64) -> Result<Self> {
        self.set(name, value, Provenance::Default)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for name in Self::NAMES {
            let v = self.get(name)?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid_param(format!("constant {name}={v} must be positive and finite")));
            }
        }
        Ok(())
    }

    fn pick(&self, regime: Regime) -> BTreeMap<String, f64> {
        regime
            .constant_names()
            .iter()
            .map(|n| (n.to_string(), self.get(n).expect("known name")))
            .collect()
    }

    pub fn to_config_section(&self) -> String {
        let mut out = String::from("[constants]\n");
        for name in Self::NAMES {
            let c = self.constant(name).expect("known name");
            let prov = match c.provenance {
                Provenance::Default => "default",
                Provenance::Calibrated => "calibrated",
            };
            out.push_str(&format!("{name} = {{ value = {:?}, provenance = \"{prov}\" }}\n", c.value));
        }
        out
    }
}

/// A predicted lower bound on the smallest singular value and the
/// probability with which it may fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPrediction {
    pub regime: Regime,
    /// Never clamped: a value `<= 0` is reported as is and flagged vacuous.
    pub floor: f64,
    pub prob_failure: f64,
    pub constants: BTreeMap<String, f64>,
    pub precondition_ok: bool,
    pub precondition_detail: String,
    pub vacuous: bool,
    /// `beta = 1` in a regime whose rate carries `log(1/beta)`.
    pub degenerate_edge: bool,
    /// The floor bounds the squared singular value rather than the value itself.
    pub squared_scale: bool,
}

fn clamp_prob(p: f64) -> f64 {
    if p.is_nan() {
        1.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid_param(format!("beta={beta} must lie in (0, 1]")));
    }
    Ok(())
}

/// `log(1/beta)` with the exact zero at `beta = 1`.
fn log_inv(beta: f64) -> f64 {
    if beta == 1.0 {
        0.0
    } else {
        -beta.ln()
    }
}

/// Deficit exponent of the `eta < 2` regime: `eta / (2 + eta)`.
pub fn regime_exponent(eta: f64) -> f64 {
    if eta.is_infinite() {
        1.0
    } else {
        eta / (2.0 + eta)
    }
}

/// The regime's deficit rate before its constant: `sqrt(beta)`,
/// `sqrt(beta) log^{3/2}(1/beta)` or `(beta log(1/beta))^{eta/(2+eta)}`.
pub fn regime_rate(regime: Regime, eta: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let l = log_inv(beta);
    match regime {
        Regime::EtaGt2 => Ok(beta.sqrt()),
        Regime::EtaEq2 => Ok(beta.sqrt() * l.powf(1.5)),
        Regime::EtaLt2 => {
            if !(eta > 0.0) {
                return Err(invalid_param(format!("eta={eta} must be > 0")));
            }
            Ok((beta * l).powf(regime_exponent(eta)))
        }
        other => Err(invalid_param(format!("regime {other} has no beta rate"))),
    }
}

/// Abscissa used when fitting deficit exponents: `beta` for the first two
/// regimes, `beta log(1/beta)` for the third.
pub fn rate_variable(regime: Regime, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    match regime {
        Regime::EtaLt2 => Ok(beta * log_inv(beta)),
        Regime::EtaGt2 | Regime::EtaEq2 => Ok(beta),
        other => Err(invalid_param(format!("regime {other} has no beta rate"))),
    }
}

/// Heavy-tail floor for `n/N <= beta`, selected by `eta`.
pub fn floor_regime(eta: f64, l: f64, beta: f64, big_n: usize, k: &ConstantSet) -> Result<BoundPrediction> {
    check_beta(beta)?;
    if !(l >= 1.0) {
        return Err(invalid_param(format!("tail constant L={l} must be >= 1")));
    }
    if big_n == 0 {
        return Err(invalid_param("N must be >= 1"));
    }
    k.validate()?;
    let regime = Regime::for_eta(eta)?;
    let nf = big_n as f64;
    let li = log_inv(beta);
    let (c_floor, prob) = match regime {
        Regime::EtaGt2 => (
            k.c2.value,
            k.c0.value * (1.0 - beta.ln()) * (-k.c1.value * nf * beta).exp(),
        ),
        Regime::EtaEq2 => (k.c4.value, (-k.c3.value * nf * beta * li).exp()),
        _ => (k.c6.value, (-k.c5.value * nf * beta * li).exp()),
    };
    let floor = 1.0 - c_floor * regime_rate(regime, eta, beta)?;
    let degenerate_edge = beta == 1.0 && regime != Regime::EtaGt2;
    Ok(BoundPrediction {
        regime,
        floor,
        prob_failure: clamp_prob(prob),
        constants: k.pick(regime),
        precondition_ok: true,
        precondition_detail: format!("eta={eta}, L={l}, beta={beta}, N={big_n}"),
        vacuous: floor <= 0.0,
        degenerate_edge,
        squared_scale: false,
    })
}

/// Small-ball floor on `lambda_min^2`; it has no free constants.
pub fn basic_floor(tau: f64, q2tau: f64, r_n: f64, big_n: usize) -> Result<BoundPrediction> {
    if !(tau > 0.0) {
        return Err(invalid_param(format!("tau={tau} must be > 0")));
    }
    if !(0.0..=1.0).contains(&q2tau) {
        return Err(invalid_param(format!("Q(2tau)={q2tau} must lie in [0, 1]")));
    }
    if !(r_n >= 0.0) {
        return Err(invalid_param(format!("R_N={r_n} must be >= 0")));
    }
    let threshold = tau * q2tau / 16.0;
    let precondition_ok = q2tau > 0.0 && r_n <= threshold;
    let floor = tau * tau * q2tau / 2.0;
    Ok(BoundPrediction {
        regime: Regime::BasicSmallball,
        floor,
        prob_failure: clamp_prob(2.0 * (-q2tau * q2tau * big_n as f64 / 8.0).exp()),
        constants: BTreeMap::new(),
        precondition_ok,
        precondition_detail: format!("R_N={r_n} vs tau*Q(2tau)/16={threshold}"),
        vacuous: floor <= 0.0,
        degenerate_edge: false,
        squared_scale: true,
    })
}

/// Isomorphic floor `c2 a / B^2` under a covariance band.
pub fn isomorphic_floor(band: &CovarianceBand, n: usize, big_n: usize, k: &ConstantSet) -> Result<BoundPrediction> {
    CovarianceBand::new(band.a, band.upper, band.b)?;
    k.validate()?;
    let b4 = band.b.powi(4);
    let required = k.iso_c0.value * b4 * (band.upper / band.a).powi(2) * n as f64;
    let floor = k.iso_c2.value * band.a / (band.b * band.b);
    Ok(BoundPrediction {
        regime: Regime::Isomorphic,
        floor,
        prob_failure: clamp_prob((-k.iso_c1.value * big_n as f64 / b4).exp()),
        constants: k.pick(Regime::Isomorphic),
        precondition_ok: big_n as f64 >= required,
        precondition_detail: format!("N={big_n} vs required {required}"),
        vacuous: floor <= 0.0,
        degenerate_edge: false,
        squared_scale: false,
    })
}

/// Floor `c2 tau sqrt(Q(2tau))` under a second-moment bound `A sqrt(n)`.
pub fn general_floor(
    tau: f64,
    q2tau: f64,
    upper_a: f64,
    n: usize,
    big_n: usize,
    k: &ConstantSet,
) -> Result<BoundPrediction> {
    if !(tau > 0.0) {
        return Err(invalid_param(format!("tau={tau} must be > 0")));
    }
    if !(0.0..=1.0).contains(&q2tau) {
        return Err(invalid_param(format!("Q(2tau)={q2tau} must lie in [0, 1]")));
    }
    if !(upper_a > 0.0) {
        return Err(invalid_param(format!("A={upper_a} must be > 0")));
    }
    k.validate()?;
    let required = k.gen_c1.value * upper_a * n as f64 / (tau * tau * q2tau * q2tau);
    let floor = k.gen_c2.value * tau * q2tau.sqrt();
    Ok(BoundPrediction {
        regime: Regime::GeneralSmallball,
        floor,
        prob_failure: clamp_prob(2.0 * (-k.gen_c3.value * big_n as f64 * q2tau * q2tau).exp()),
        constants: k.pick(Regime::GeneralSmallball),
        precondition_ok: required.is_finite() && big_n as f64 >= required,
        precondition_detail: format!("N={big_n} vs required {required}"),
        vacuous: floor <= 0.0,
        degenerate_edge: false,
        squared_scale: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeficitPoint {
    pub beta: f64,
    pub deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub regime: Regime,
    pub constant_name: String,
    /// `exp(intercept)` of the free-slope fit of log deficit on log rate.
    pub constant: f64,
    /// Slope of that fit; 1 when the rate is exactly right.
    pub exponent: f64,
    pub half_width: f64,
    pub points: usize,
    /// Constant with the slope pinned to 1: geometric mean of deficit / rate.
    pub pinned_constant: f64,
    pub updated: ConstantSet,
}

/// Least-squares fit of `log(deficit)` against `log(rate)` for one regime.
pub fn calibrate_constant(points: &[DeficitPoint], regime: Regime, eta: f64, k: &ConstantSet) -> Result<Calibration> {
    let name = match regime {
        Regime::EtaGt2 | Regime::EtaEq2 | Regime::EtaLt2 => regime.floor_constant().expect("heavy regime"),
        other => {
            return Err(Error::CalibrationUnavailable(format!(
                "regime {other} has no beta rate to fit"
            )))
        }
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in points {
        if !(p.deficit > 0.0 && p.deficit.is_finite()) {
            continue;
        }
        let rate = regime_rate(regime, eta, p.beta)?;
        if rate > 0.0 && rate.is_finite() {
            xs.push(rate.ln());
            ys.push(p.deficit.ln());
        }
    }
    if xs.len() < 4 {
        return Err(Error::CalibrationUnavailable(format!(
            "{} usable rows in regime {regime}, need at least 4",
            xs.len()
        )));
    }
    let fit = least_squares(&xs, &ys)?;
    let pinned = (compensated_sum(ys.iter().zip(&xs).map(|(y, x)| y - x)) / xs.len() as f64).exp();
    let mut updated = *k;
    updated.set(name, pinned, Provenance::Calibrated)?;
    Ok(Calibration {
        regime,
        constant_name: name.to_string(),
        constant: fit.intercept.exp(),
        exponent: fit.slope,
        half_width: fit.slope_half_width,
        points: fit.points,
        pinned_constant: pinned,
        updated,
    })
}

/// Constant that makes the floor pass through an observed deficit at one
/// anchor `beta`: `deficit / rate(beta)`.
pub fn calibrate_at_anchor(regime: Regime, eta: f64, beta: f64, deficit: f64) -> Result<f64> {
    let rate = regime_rate(regime, eta, beta)?;
    if !(rate > 0.0) {
        return Err(Error::CalibrationUnavailable(format!("rate vanishes at beta={beta}")));
    }
    if !(deficit > 0.0 && deficit.is_finite()) {
        return Err(Error::CalibrationUnavailable(format!(
            "anchor deficit {deficit} is not positive"
        )));
    }
    Ok(deficit / rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub constant: f64,
    pub half_width: f64,
    pub points: usize,
    pub excluded: usize,
}

/// Log-log regression of deficits on the regime's rate variable. Rows with
/// a nonpositive deficit are dropped and counted.
pub fn fit_exponent(points: &[DeficitPoint], regime: Regime) -> Result<ExponentFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0;
    for p in points {
        let x = rate_variable(regime, p.beta)?;
        if p.deficit > 0.0 && p.deficit.is_finite() && x > 0.0 {
            xs.push(x.ln());
            ys.push(p.deficit.ln());
        } else {
            excluded += 1;
        }
    }
    if xs.len() < 4 {
        return Err(Error::CalibrationUnavailable(format!(
            "{} usable rows, need at least 4 ({excluded} excluded)",
            xs.len()
        )));
    }
    let LinearFit { slope, intercept, slope_half_width, points } = least_squares(&xs, &ys)?;
    Ok(ExponentFit {
        exponent: slope,
        constant: intercept.exp(),
        half_width: slope_half_width,
        points,
        excluded,
    })
}

pub fn write_predictions_csv<W: Write>(predictions: &[BoundPrediction], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "regime",
        "floor",
        "prob_failure",
        "precondition_ok",
        "vacuous",
        "degenerate_edge",
        "squared_scale",
        "constants",
        "precondition_detail",
    ])?;
    for p in predictions {
        let constants = p
            .constants
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        out.write_record([
            p.regime.as_str().to_string(),
            p.floor.to_string(),
            p.prob_failure.to_string(),
            p.precondition_ok.to_string(),
            p.vacuous.to_string(),
            p.degenerate_edge.to_string(),
            p.squared_scale.to_string(),
            constants,
            p.precondition_detail.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
