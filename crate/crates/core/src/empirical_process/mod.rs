//! Instrumentation of the empirical-process argument: the truncation
//! surrogate, layer-cake identities, dyadic level classes, the VC deviation
//! formula, a shattering brute force and an exact finite-instance oracle.

mod oracle;
mod vc;

pub use oracle::{
    exp_neg_ge, random_instance, bound_verdict, tiny_oracle, tiny_oracle_bruteforce, FiniteInstance,
    OracleReport, Verdict, ORACLE_MAX_ATOMS, ORACLE_MAX_FUNCTIONS, ORACLE_MAX_N,
};
pub use vc::{
    realizable_traces, vc_bruteforce, vc_lower_bound_sampled, SetClass, VcReport, VC_MAX_DIM, VC_MAX_POINTS,
};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::distributions::{draw_samples, theoretical_tail_along, DistributionSpec, Family, Samples};
use crate::error::{invalid_param, Error, Result};
use crate::numeric::{compensated_sum, integrate_to_infinity};
use crate::seed::substream;

/// Piecewise-linear surrogate: 0 below `u`, 1 from `2u` on, linear between.
pub fn truncation_phi(u: f64, t: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(invalid_param(format!("truncation level u={u} must be > 0")));
    }
    if !(t >= 0.0) {
        return Err(invalid_param(format!("argument t={t} must be >= 0")));
    }
    Ok(phi_unchecked(u, t))
}

fn phi_unchecked(u: f64, t: f64) -> f64 {
    if t >= 2.0 * u {
        1.0
    } else if t < u {
        0.0
    } else {
        // t - u is exact on [u, 2u], so this is the correctly rounded value.
        ((t - u) / u).min(1.0)
    }
}

/// The same function in exact rational arithmetic.
pub fn truncation_phi_exact(u: &BigRational, t: &BigRational) -> BigRational {
    let two_u = u * BigRational::from_integer(BigInt::from(2));
    if *t >= two_u {
        BigRational::one()
    } else if t < u {
        BigRational::zero()
    } else {
        (t - u) / u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiCheck {
    pub pairs: usize,
    pub sandwich_violations: usize,
    pub lipschitz_violations: usize,
    /// Float values farther than half an ulp from the exact value.
    pub rounding_violations: usize,
}

impl PhiCheck {
    pub fn passed(&self) -> bool {
        self.sandwich_violations == 0 && self.lipschitz_violations == 0 && self.rounding_violations == 0
    }
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Checks the indicator sandwich and the `1/u` Lipschitz bound of `phi` on
/// every grid point (and every pair of `t` values per `u`), in exact
/// rational arithmetic on the float inputs and outputs.
pub fn check_phi(phi: impl Fn(f64, f64) -> f64, u_grid: &[f64], t_grid: &[f64]) -> PhiCheck {
    let mut out = PhiCheck { pairs: 0, sandwich_violations: 0, lipschitz_violations: 0, rounding_violations: 0 };
    let ts: Vec<BigRational> = t_grid.iter().map(|&t| exact(t)).collect();
    for &u in u_grid {
        let uq = exact(u);
        let vals: Vec<f64> = t_grid.iter().map(|&t| phi(u, t)).collect();
        let exact_vals: Vec<BigRational> = ts.iter().map(|t| truncation_phi_exact(&uq, t)).collect();
        for (i, &t) in t_grid.iter().enumerate() {
            let v = vals[i];
            let upper = if t >= u { 1.0 } else { 0.0 };
            let lower = if t >= 2.0 * u { 1.0 } else { 0.0 };
            if !(v <= upper && v >= lower) {
                out.sandwich_violations += 1;
            }
            let ulp = f64::from_bits(v.abs().to_bits() + 1) - v.abs();
            let err = (exact(v) - &exact_vals[i]).abs();
            if err * BigRational::from_integer(2.into()) > exact(ulp) {
                out.rounding_violations += 1;
            }
            for j in 0..i {
                out.pairs += 1;
                let lhs = (&exact_vals[i] - &exact_vals[j]).abs() * &uq;
                if lhs > (&ts[i] - &ts[j]).abs() {
                    out.lipschitz_violations += 1;
                }
            }
        }
    }
    out
}

/// A deliberately wrong surrogate (ramp starts at `u/2`), used to check that
/// [`check_phi`] notices.
pub fn corrupted_phi(u: f64, t: f64) -> f64 {
    phi_unchecked(u, 2.0 * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// `P_N f^2` against `2 int_0^inf u P_N{|f| > u} du`, the latter summed
/// layer by layer over the sorted magnitudes.
pub fn second_moment_identity(values: &[f64]) -> Result<IdentityCheck> {
    if values.is_empty() {
        return Err(Error::InvalidInput("identity check needs at least one value".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("identity check needs finite values".into()));
    }
    let m = values.len();
    let lhs = compensated_sum(values.iter().map(|v| v * v)) / m as f64;
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    // On (a_(k-1), a_(k)] exactly m - k + 1 magnitudes exceed u.
    let rhs = compensated_sum((0..m).map(|k| {
        let prev = if k == 0 { 0.0 } else { mags[k - 1] };
        (m - k) as f64 * (mags[k] - prev) * (mags[k] + prev)
    })) / m as f64;
    Ok(IdentityCheck { lhs, rhs, gap: (lhs - rhs).abs() })
}

/// Marginal tail models with a known `P{|f| > u}`.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalTail {
    /// `min(1, L u^-(2+eta))`.
    Pareto { l: f64, eta: f64 },
    /// The coordinate marginal of a distribution family.
    Family(DistributionSpec),
}

impl MarginalTail {
    pub fn prob(&self, u: f64) -> Result<f64> {
        match self {
            MarginalTail::Pareto { l, eta } => Ok(if u <= 0.0 { 1.0 } else { (l * u.powf(-(2.0 + eta))).min(1.0) }),
            MarginalTail::Family(spec) => crate::distributions::theoretical_tail(spec, u),
        }
    }

    fn divergent(&self) -> bool {
        match self {
            MarginalTail::Pareto { eta, .. } => *eta <= 0.0,
            MarginalTail::Family(spec) => spec.family.is_heavy() && spec.eta.is_some_and(|e| e <= 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailIntegral {
    pub value: f64,
    pub divergent: bool,
}

pub const TAIL_INTEGRAL_REL_TOL: f64 = 1e-10;

/// `2 int_A^inf u P{|f| > u} du` by quadrature.
pub fn tail_integral(tail: &MarginalTail, a_trunc: f64) -> Result<TailIntegral> {
    if !(a_trunc >= 0.0) {
        return Err(invalid_param(format!("truncation level A={a_trunc} must be >= 0")));
    }
    if let MarginalTail::Pareto { l, eta } = tail {
        if !(*l > 0.0) || !(*eta >= 0.0) {
            return Err(invalid_param("pareto tail needs L > 0 and eta >= 0"));
        }
    }
    if tail.divergent() {
        return Ok(TailIntegral { value: f64::INFINITY, divergent: true });
    }
    let err = std::cell::RefCell::new(None);
    let value = integrate_to_infinity(
        |u| match tail.prob(u) {
            Ok(p) => 2.0 * u * p,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        a_trunc,
        TAIL_INTEGRAL_REL_TOL,
    )?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(TailIntegral { value, divergent: false })
}

/// Dyadic level structure below the truncation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicDecomposition {
    pub eta: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub delta: f64,
    /// `max{(L / (eta delta))^(1/eta), 1}`.
    pub a_trunc: f64,
    /// Smallest integer with `2^j0 >= a_trunc`.
    pub j0: i32,
    /// `L 2^(-j(2+eta))` for `j = 0..=j0`: bounds on `sigma_j^2`.
    pub sigma_bounds: Vec<f64>,
}

impl DyadicDecomposition {
    pub fn new(eta: f64, l: f64, delta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid_param(format!("eta={eta} must be positive and finite")));
        }
        if !(l > 0.0) || !(delta > 0.0) {
            return Err(invalid_param("L and delta must be > 0"));
        }
        let a_trunc = (l / (eta * delta)).powf(1.0 / eta).max(1.0);
        let mut j0 = a_trunc.log2().ceil() as i32;
        while 2f64.powi(j0) < a_trunc {
            j0 += 1;
        }
        while j0 > 0 && 2f64.powi(j0 - 1) >= a_trunc {
            j0 -= 1;
        }
        let sigma_bounds = (0..=j0).map(|j| l * 2f64.powf(-(j as f64) * (2.0 + eta))).collect();
        Ok(DyadicDecomposition { eta, l, delta, a_trunc, j0, sigma_bounds })
    }

    /// `2 int_A^inf L u^-(1+eta) du = 2 L A^-eta / eta`; equals `2 delta` when `A > 1`.
    pub fn remainder_bound(&self) -> f64 {
        2.0 * self.l * self.a_trunc.powf(-self.eta) / self.eta
    }

    /// Threshold interval `[2^j, 2^(j+1)]` of level `j`.
    pub fn level_range(j: i32) -> (f64, f64) {
        (2f64.powi(j), 2f64.powi(j + 1))
    }
}

/// `kappa (sigma sqrt(d/N log(e/sigma)) + d/N log(e/sigma) + sigma sqrt(t/N) + t/N)`.
pub fn vc_deviation_bound(sigma: f64, d: f64, big_n: f64, t: f64, kappa: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(invalid_param(format!("sigma={sigma} must lie in (0, 1]")));
    }
    if !(d >= 1.0) || !(big_n >= 1.0) || !(t >= 0.0) || !(kappa > 0.0) {
        return Err(invalid_param("need d >= 1, N >= 1, t >= 0, kappa > 0"));
    }
    let log_term = 1.0 - sigma.ln();
    let r = d / big_n;
    Ok(kappa * (sigma * (r * log_term).sqrt() + r * log_term + sigma * (t / big_n).sqrt() + t / big_n))
}

/// Source of reference probabilities `P{|<X,t>| > u}`.
#[derive(Debug, Clone)]
pub enum TailReference {
    Analytic(DistributionSpec),
    /// An independent large sample.
    Sample(Samples),
}

pub const REFERENCE_DRAWS: usize = 1_000_000;

impl TailReference {
    /// Analytic when the family has an exact marginal tail along every
    /// direction of the net and no atoms away from zero, else a
    /// `REFERENCE_DRAWS` sample on its own substream.
    pub fn auto(spec: &DistributionSpec, directions: &[Vec<f64>], seed: u64) -> Result<Self> {
        let analytic = spec.family != Family::RademacherVec
            && directions.iter().all(|t| theoretical_tail_along(spec, t, 1.0).is_ok());
        if analytic {
            Ok(TailReference::Analytic(spec.clone()))
        } else {
            let mut rng = substream(seed, &[0x7e4e_7e4e]);
            Ok(TailReference::Sample(draw_samples(spec, REFERENCE_DRAWS, &mut rng)?))
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TailReference::Analytic(_) => "analytic",
            TailReference::Sample(_) => "sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationEstimate {
    /// Max over the net and the threshold grid; a lower estimate of the
    /// supremum over the whole level class.
    pub value: f64,
    pub level: i32,
    pub direction_index: usize,
    pub threshold: f64,
    pub reference: String,
    pub lower_estimate: bool,
}

fn sorted_abs(values: Vec<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().map(f64::abs).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn frac_above(sorted: &[f64], u: f64) -> f64 {
    let below = sorted.partition_point(|&x| x <= u);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

/// `max |P_N{|<X,t>| > u} - P{|<X,t>| > u}|` over `t` in the net and
/// `u_points` thresholds evenly spaced in `[2^j, 2^(j+1)]`.
pub fn dyadic_sup_dev(
    samples: &Samples,
    level: i32,
    directions: &[Vec<f64>],
    reference: &TailReference,
    u_points: usize,
) -> Result<DeviationEstimate> {
    if samples.is_empty() || directions.is_empty() {
        return Err(Error::InvalidInput("deviation needs samples and a nonempty net".into()));
    }
    if u_points < 2 {
        return Err(invalid_param("need at least 2 threshold points"));
    }
    let (lo, hi) = DyadicDecomposition::level_range(level);
    let grid: Vec<f64> = (0..u_points).map(|i| lo + (hi - lo) * i as f64 / (u_points - 1) as f64).collect();
    let mut best = DeviationEstimate {
        value: 0.0,
        level,
        direction_index: 0,
        threshold: lo,
        reference: reference.kind().to_string(),
        lower_estimate: true,
    };
    for (k, t) in directions.iter().enumerate() {
        if t.len() != samples.dim() {
            return Err(Error::InvalidInput("direction has wrong dimension".into()));
        }
        let emp = sorted_abs(samples.project(t));
        let refs = match reference {
            TailReference::Sample(s) => Some(sorted_abs(s.project(t))),
            TailReference::Analytic(_) => None,
        };
        for &u in &grid {
            let p_ref = match (reference, &refs) {
                (TailReference::Analytic(spec), _) => theoretical_tail_along(spec, t, u)?,
                (_, Some(r)) => frac_above(r, u),
                _ => unreachable!(),
            };
            let dev = (frac_above(&emp, u) - p_ref).abs();
            if dev > best.value {
                best.value = dev;
                best.direction_index = k;
                best.threshold = u;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    #[test]
    fn phi_values() {
        assert_eq!(truncation_phi(1.0, 3.0).unwrap(), 1.0);
        assert_eq!(truncation_phi(1.0, 1.5).unwrap(), 0.5);
        assert_eq!(truncation_phi(1.0, 0.99).unwrap(), 0.0);
        assert_eq!(truncation_phi(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(truncation_phi(1.0, 1.0).unwrap(), 0.0);
        assert!(truncation_phi(0.0, 1.0).is_err());
        assert!(truncation_phi(-1.0, 1.0).is_err());
    }

    #[test]
    fn phi_grid_and_mutation() {
        let us: Vec<f64> = (1..=20).map(|i| i as f64 * 0.173).collect();
        let ts: Vec<f64> = (0..40).map(|i| i as f64 * 0.151).collect();
        let good = check_phi(phi_unchecked, &us, &ts);
        assert!(good.passed(), "{good:?}");
        let bad = check_phi(corrupted_phi, &us, &ts);
        assert!(bad.sandwich_violations > 0);
    }

    #[test]
    fn identity_examples() {
        let c = second_moment_identity(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((c.lhs, c.rhs), (1.0, 1.0));
        let c = second_moment_identity(&[0.0, 2.0]).unwrap();
        assert_eq!((c.lhs, c.rhs), (2.0, 2.0));
        let c = second_moment_identity(&[-3.0, 2.0, 2.0, 0.5]).unwrap();
        assert!(c.gap <= 1e-15 * c.lhs);
        let mut rng = rng_from_seed(4);
        let v: Vec<f64> = (0..100).map(|_| rng.random_range(-10.0..10.0)).collect();
        let c = second_moment_identity(&v).unwrap();
        assert!(c.gap <= 1e-12 * c.lhs);
    }

    #[test]
    fn tail_integral_pareto() {
        let r = tail_integral(&MarginalTail::Pareto { l: 1.0, eta: 1.0 }, 2.0).unwrap();
        assert!((r.value - 1.0).abs() < 1e-8, "{r:?}");
        let z = tail_integral(&MarginalTail::Pareto { l: 1.0, eta: 0.0 }, 2.0).unwrap();
        assert!(z.divergent);
    }

    #[test]
    fn tail_integral_matches_remainder() {
        for (eta, l, delta) in [(1.0, 1.0, 0.1), (3.0, 2.5, 0.01), (0.5, 1.0, 0.2)] {
            let d = DyadicDecomposition::new(eta, l, delta).unwrap();
            assert!(d.a_trunc > 1.0);
            let r = tail_integral(&MarginalTail::Pareto { l, eta }, d.a_trunc).unwrap();
            assert!((r.value - d.remainder_bound()).abs() <= 1e-8 * r.value);
            assert!((r.value - 2.0 * delta).abs() <= 1e-8 * r.value);
        }
    }

    #[test]
    fn tail_integral_gaussian() {
        let r = tail_integral(&MarginalTail::Family(DistributionSpec::gaussian(3)), 5.0).unwrap();
        assert!(r.value > 0.0 && r.value <= 1e-5, "{r:?}");
        // integration by parts: (1 - A^2) P{|g| >= A} + 2 A phi(A)
        let a: f64 = 5.0;
        let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let closed = (1.0 - a * a) * crate::numeric::gaussian_two_sided_tail(a) + 2.0 * a * phi;
        assert!((r.value - closed).abs() <= 1e-8 * closed, "{} vs {closed}", r.value);
    }

    #[test]
    fn dyadic_structure() {
        let d = DyadicDecomposition::new(1.0, 1.0, 0.1).unwrap();
        assert!((d.a_trunc - 10.0).abs() < 1e-12);
        assert_eq!(d.j0, 4);
        assert!(2f64.powi(d.j0) >= d.a_trunc && 2f64.powi(d.j0 - 1) < d.a_trunc);
        assert!(d.sigma_bounds.windows(2).all(|w| w[1] < w[0]));
        let flat = DyadicDecomposition::new(2.0, 1.0, 10.0).unwrap();
        assert_eq!((flat.a_trunc, flat.j0), (1.0, 0));
        let exact = DyadicDecomposition::new(1.0, 1.0, 0.125).unwrap();
        assert_eq!(exact.j0, 3);
    }

    #[test]
    fn pareto_tail_equality_at_dyadic_points() {
        let d = DyadicDecomposition::new(1.5, 3.0, 0.05).unwrap();
        let tail = MarginalTail::Pareto { l: 3.0, eta: 1.5 };
        for (j, s) in d.sigma_bounds.iter().enumerate().skip(1) {
            let p = tail.prob(2f64.powi(j as i32)).unwrap();
            assert!((p - s).abs() <= 1e-15 * s);
        }
    }

    #[test]
    fn vc_bound_examples() {
        assert_eq!(vc_deviation_bound(1.0, 10.0, 10.0, 10.0, 1.0).unwrap(), 4.0);
        let s = (-2.0f64).exp();
        let v = vc_deviation_bound(s, 5.0, 5.0, 1e-300, 1.0).unwrap();
        assert!((v - (s * 3f64.sqrt() + 3.0)).abs() < 1e-12);
        assert!(vc_deviation_bound(1.5, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(vc_deviation_bound(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn identical_reference_gives_zero() {
        let spec = DistributionSpec::heavy_iid(2, 1.0);
        let s = draw_samples(&spec, 500, &mut rng_from_seed(1)).unwrap();
        let net = vec![vec![1.0, 0.0], vec![0.6, 0.8]];
        let d = dyadic_sup_dev(&s, 0, &net, &TailReference::Sample(s.clone()), 9).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.lower_estimate);
    }

    #[test]
    fn high_level_deviation_is_reference_tail() {
        let spec = DistributionSpec::gaussian(2);
        let s = draw_samples(&spec, 200, &mut rng_from_seed(9)).unwrap();
        let net = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let reference = TailReference::auto(&spec, &net, 0).unwrap();
        assert_eq!(reference.kind(), "analytic");
        let d = dyadic_sup_dev(&s, 3, &net, &reference, 5).unwrap();
        let ref_tail = crate::numeric::gaussian_two_sided_tail(8.0);
        assert!((d.value - ref_tail).abs() < 1e-20);
        assert!(d.value <= 2f64.powi(-3 * 4));
    }
}
