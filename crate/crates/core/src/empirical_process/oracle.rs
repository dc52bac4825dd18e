//! Exact finite-instance oracle for the small-ball lower bound on
//! `inf_f P_N f^2`.
//!
//! Sample tuples are grouped by multiset (the counts `k_a` per atom) with
//! multinomial weights, and sign vectors by the number `B_a` of plus signs
//! per atom, which leaves `sum_j eps_j f(X_j) = sum_a f(a) (2 B_a - k_a)`.
//! Everything is integer or rational arithmetic.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::truncation_phi_exact;
use crate::error::{invalid_param, Error, Result};
use crate::seed::StreamRng;

pub const ORACLE_MAX_ATOMS: usize = 6;
pub const ORACLE_MAX_FUNCTIONS: usize = 4;
pub const ORACLE_MAX_N: usize = 10;
const BRUTEFORCE_MAX_WORK: u64 = 1 << 24;

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn qi(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Atoms with rational probabilities, real functions on them and a sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteInstance {
    probs: Vec<BigRational>,
    functions: Vec<Vec<BigRational>>,
    n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceDescription {
    pub probabilities: Vec<String>,
    pub functions: Vec<Vec<String>>,
    #[serde(rename = "N")]
    pub n_samples: usize,
}

impl FiniteInstance {
    pub fn new(probs: Vec<BigRational>, functions: Vec<Vec<BigRational>>, n_samples: usize) -> Result<Self> {
        let m = probs.len();
        if m == 0 || functions.is_empty() || n_samples == 0 {
            return Err(invalid_param("instance needs atoms, functions and N >= 1"));
        }
        if m > ORACLE_MAX_ATOMS || functions.len() > ORACLE_MAX_FUNCTIONS || n_samples > ORACLE_MAX_N {
            return Err(Error::BudgetExceeded(format!(
                "{m} atoms, {} functions, N={n_samples}; limits are {ORACLE_MAX_ATOMS}, {ORACLE_MAX_FUNCTIONS}, {ORACLE_MAX_N} ({} tuples requested)",
                functions.len(),
                (m as f64).powi(n_samples as i32)
            )));
        }
        if probs.iter().any(|p| !p.is_positive()) {
            return Err(invalid_param("atom probabilities must be positive"));
        }
        if probs.iter().fold(BigRational::zero(), |acc, p| acc + p) != BigRational::one() {
            return Err(invalid_param("atom probabilities must sum to exactly 1"));
        }
        if functions.iter().any(|f| f.len() != m) {
            return Err(invalid_param("every function needs one value per atom"));
        }
        Ok(FiniteInstance { probs, functions, n_samples })
    }

    /// Probabilities and values given as `(numerator, denominator)` pairs.
    pub fn from_ratios(probs: &[(i64, i64)], functions: &[Vec<(i64, i64)>], n_samples: usize) -> Result<Self> {
        if probs.iter().chain(functions.iter().flatten()).any(|&(_, d)| d == 0) {
            return Err(invalid_param("zero denominator"));
        }
        Self::new(
            probs.iter().map(|&(n, d)| q(n, d)).collect(),
            functions.iter().map(|f| f.iter().map(|&(n, d)| q(n, d)).collect()).collect(),
            n_samples,
        )
    }

    pub fn atoms(&self) -> usize {
        self.probs.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn probs(&self) -> &[BigRational] {
        &self.probs
    }

    pub fn functions(&self) -> &[Vec<BigRational>] {
        &self.functions
    }

    pub fn describe(&self) -> InstanceDescription {
        InstanceDescription {
            probabilities: self.probs.iter().map(ToString::to_string).collect(),
            functions: self.functions.iter().map(|f| f.iter().map(ToString::to_string).collect()).collect(),
            n_samples: self.n_samples,
        }
    }

    /// `min_f P{|f| >= u}`.
    pub fn small_ball(&self, u: &BigRational) -> BigRational {
        self.functions
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&self.probs)
                    .filter(|(v, _)| v.abs() >= *u)
                    .fold(BigRational::zero(), |acc, (_, p)| acc + p)
            })
            .min()
            .expect("nonempty class")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    Violated,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instance: InstanceDescription,
    pub tau: String,
    /// `Q(2 tau)` exactly, then as a float.
    pub q2tau: String,
    pub q2tau_f64: f64,
    pub r_n: String,
    pub r_n_f64: f64,
    pub hypothesis_threshold_f64: f64,
    pub hypothesis_holds: bool,
    /// `tau^2 Q(2 tau) / 2`, a floor on `inf_f P_N f^2`.
    pub floor: String,
    pub exact_probability: String,
    pub exact_probability_f64: f64,
    /// `1 - 2 exp(-Q(2 tau)^2 N / 8)`.
    pub bound: f64,
    pub verdict: Verdict,
    /// Tuples where `P_N f^2 >= tau^2 (Q(2 tau) + P_N phi_tau(|f|) - P phi_tau(|f|))`
    /// fails for some `f`. This chain holds deterministically, so any count
    /// here is a bug.
    pub chain_violations: u64,
    pub multisets: usize,
    pub tuples: f64,
    pub sign_vectors: u64,
}

/// Decides `exp(-x) >= y` exactly for rational `x >= 0`, bracketing
/// `exp(-x/k)` with `k = ceil(x)` by partial sums of its alternating series.
pub fn exp_neg_ge(x: &BigRational, y: &BigRational) -> Result<bool> {
    if x.is_negative() {
        return Err(invalid_param("exp_neg_ge needs x >= 0"));
    }
    if !y.is_positive() {
        return Ok(true);
    }
    if x.is_zero() {
        return Ok(*y <= BigRational::one());
    }
    if *y >= BigRational::one() {
        return Ok(false);
    }
    let k = x.ceil().to_integer().to_u32().ok_or_else(|| invalid_param("exponent too large"))?;
    let z = x / BigRational::from_integer(BigInt::from(k));
    let mut terms = 12;
    while terms <= 4000 {
        let mut sum = BigRational::zero();
        let mut term = BigRational::one();
        for i in 0..=terms {
            if i > 0 {
                term = -term * &z / qi(i as u64);
            }
            sum += &term;
        }
        let next = (term * &z / qi(terms as u64 + 1)).abs();
        let lo = &sum - &next;
        let hi = &sum + &next;
        if lo.is_positive() {
            if num_traits::pow(lo, k as usize) >= *y {
                return Ok(true);
            }
            if num_traits::pow(hi, k as usize) < *y {
                return Ok(false);
            }
        }
        terms *= 2;
    }
    Err(Error::NoConvergence { iterations: terms, last_change: 0.0, residual: 0.0 })
}

/// Whether the hypothesis `R_N <= tau Q / 16` holds and, if so, whether
/// `exact_prob >= 1 - 2 exp(-Q^2 N / 8)`.
pub fn bound_verdict(
    q2tau: &BigRational,
    r_n: &BigRational,
    tau: &BigRational,
    exact_prob: &BigRational,
    n_samples: usize,
) -> Result<(bool, Verdict)> {
    let holds = q2tau.is_positive() && *r_n <= tau * q2tau / qi(16);
    if !holds {
        return Ok((false, Verdict::NotApplicable));
    }
    let x = q2tau * q2tau * qi(n_samples as u64) / qi(8);
    let y = (BigRational::one() - exact_prob) / qi(2);
    let ok = exp_neg_ge(&x, &y)?;
    Ok((true, if ok { Verdict::Holds } else { Verdict::Violated }))
}

fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, parts - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

fn binomial(n: usize, k: usize) -> u64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn common_denominator<'a>(values: impl Iterator<Item = &'a BigRational>) -> BigInt {
    values.fold(BigInt::one(), |acc, v| acc.lcm(v.denom()))
}

fn scaled_integers(values: &[BigRational], denom: &BigInt) -> Vec<BigInt> {
    values.iter().map(|v| (v * BigRational::from_integer(denom.clone())).to_integer()).collect()
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

struct Partial {
    sign_mass: BigInt,
    event_mass: BigInt,
    chain_violations: u64,
}

/// Exact report for one instance and one `tau > 0`.
pub fn tiny_oracle(inst: &FiniteInstance, tau: &BigRational) -> Result<OracleReport> {
    if !tau.is_positive() {
        return Err(invalid_param("tau must be > 0"));
    }
    let m = inst.atoms();
    let n = inst.n_samples;
    let two = qi(2);
    let q2tau = inst.small_ball(&(tau * &two));
    let floor = tau * tau * &q2tau / &two;

    let prob_den = common_denominator(inst.probs.iter());
    let prob_int = scaled_integers(&inst.probs, &prob_den);
    let fun_den = common_denominator(inst.functions.iter().flatten());
    let fun_int: Vec<Vec<BigInt>> = inst.functions.iter().map(|f| scaled_integers(f, &fun_den)).collect();
    // P phi_tau(|f|) per function.
    let p_phi: Vec<BigRational> = inst
        .functions
        .iter()
        .map(|f| {
            f.iter()
                .zip(&inst.probs)
                .fold(BigRational::zero(), |acc, (v, p)| acc + p * truncation_phi_exact(tau, &v.abs()))
        })
        .collect();
    let nq = qi(n as u64);
    let n_fact = factorial(n);

    let multisets = compositions(n, m);
    let partials: Vec<Partial> = multisets
        .par_iter()
        .map(|k| {
            let mut weight = BigInt::from(n_fact / k.iter().map(|&c| factorial(c)).product::<u64>());
            for (p, &c) in prob_int.iter().zip(k) {
                weight *= num_traits::pow(p.clone(), c);
            }
            // Sign vectors grouped by plus-counts per atom.
            let mut sign_mass = BigInt::zero();
            let mut b = vec![0usize; m];
            loop {
                let count: u64 = k.iter().zip(&b).map(|(&kk, &bb)| binomial(kk, bb)).product();
                let best = fun_int
                    .iter()
                    .map(|f| {
                        f.iter()
                            .zip(k.iter().zip(&b))
                            .map(|(v, (&kk, &bb))| v * BigInt::from(2 * bb as i64 - kk as i64))
                            .sum::<BigInt>()
                            .abs()
                    })
                    .max()
                    .expect("nonempty class");
                sign_mass += best * count;
                let mut idx = 0;
                while idx < m && b[idx] == k[idx] {
                    b[idx] = 0;
                    idx += 1;
                }
                if idx == m {
                    break;
                }
                b[idx] += 1;
            }
            let mut inf_pn = None::<BigRational>;
            let mut chain_violations = 0;
            for (fi, f) in inst.functions.iter().enumerate() {
                let pn_f2 = f
                    .iter()
                    .zip(k)
                    .fold(BigRational::zero(), |acc, (v, &c)| acc + v * v * qi(c as u64))
                    / &nq;
                let pn_phi = f
                    .iter()
                    .zip(k)
                    .fold(BigRational::zero(), |acc, (v, &c)| acc + truncation_phi_exact(tau, &v.abs()) * qi(c as u64))
                    / &nq;
                if pn_f2 < tau * tau * (&q2tau + pn_phi - &p_phi[fi]) {
                    chain_violations = 1;
                }
                if inf_pn.as_ref().is_none_or(|cur| pn_f2 < *cur) {
                    inf_pn = Some(pn_f2);
                }
            }
            let event = inf_pn.expect("nonempty class") >= floor;
            Partial {
                sign_mass: &weight * sign_mass,
                event_mass: if event { weight } else { BigInt::zero() },
                chain_violations,
            }
        })
        .collect();

    let weight_den = num_traits::pow(prob_den, n);
    let mut sign_total = BigInt::zero();
    let mut event_total = BigInt::zero();
    let mut chain_violations = 0;
    for p in partials {
        sign_total += p.sign_mass;
        event_total += p.event_mass;
        chain_violations += p.chain_violations;
    }
    let r_n = BigRational::new(sign_total, &weight_den * (BigInt::one() << n) * BigInt::from(n) * fun_den);
    let exact_prob = BigRational::new(event_total, weight_den);
    let (hypothesis_holds, verdict) = bound_verdict(&q2tau, &r_n, tau, &exact_prob, n)?;
    let qf = to_f64(&q2tau);
    Ok(OracleReport {
        instance: inst.describe(),
        tau: tau.to_string(),
        q2tau: q2tau.to_string(),
        q2tau_f64: qf,
        r_n: r_n.to_string(),
        r_n_f64: to_f64(&r_n),
        hypothesis_threshold_f64: to_f64(&(tau * &q2tau / qi(16))),
        hypothesis_holds,
        floor: floor.to_string(),
        exact_probability: exact_prob.to_string(),
        exact_probability_f64: to_f64(&exact_prob),
        bound: 1.0 - 2.0 * (-qf * qf * n as f64 / 8.0).exp(),
        verdict,
        chain_violations,
        multisets: multisets.len(),
        tuples: (m as f64).powi(n as i32),
        sign_vectors: 1 << n,
    })
}

/// `(Q(2 tau), R_N, P{inf_f P_N f^2 >= tau^2 Q(2 tau) / 2})` by looping over
/// every ordered tuple and every sign vector. Independent cross-check of
/// [`tiny_oracle`] for small sizes.
pub fn tiny_oracle_bruteforce(
    inst: &FiniteInstance,
    tau: &BigRational,
) -> Result<(BigRational, BigRational, BigRational)> {
    let m = inst.atoms() as u64;
    let n = inst.n_samples;
    let work = m.checked_pow(n as u32).and_then(|t| t.checked_mul(1 << n));
    if work.is_none_or(|w| w > BRUTEFORCE_MAX_WORK) {
        return Err(Error::BudgetExceeded(format!("{m}^{n} tuples times 2^{n} signs")));
    }
    let two = qi(2);
    let q2tau = inst.small_ball(&(tau * &two));
    let floor = tau * tau * &q2tau / &two;
    let nq = qi(n as u64);
    let mut r_n = BigRational::zero();
    let mut prob = BigRational::zero();
    let mut tuple = vec![0usize; n];
    loop {
        let weight = tuple.iter().fold(BigRational::one(), |acc, &a| acc * &inst.probs[a]);
        let mut sign_sum = BigRational::zero();
        for signs in 0u32..1 << n {
            let best = inst
                .functions
                .iter()
                .map(|f| {
                    tuple
                        .iter()
                        .enumerate()
                        .fold(BigRational::zero(), |acc, (j, &a)| {
                            if signs >> j & 1 == 1 {
                                acc - &f[a]
                            } else {
                                acc + &f[a]
                            }
                        })
                        .abs()
                })
                .max()
                .expect("nonempty class");
            sign_sum += best;
        }
        r_n += &weight * sign_sum / (&nq * qi(1 << n));
        let inf = inst
            .functions
            .iter()
            .map(|f| tuple.iter().fold(BigRational::zero(), |acc, &a| acc + &f[a] * &f[a]) / &nq)
            .min()
            .expect("nonempty class");
        if inf >= floor {
            prob += weight;
        }
        let mut idx = 0;
        while idx < n && tuple[idx] + 1 == m as usize {
            tuple[idx] = 0;
            idx += 1;
        }
        if idx == n {
            break;
        }
        tuple[idx] += 1;
    }
    Ok((q2tau, r_n, prob))
}

/// Random instance within the given limits together with a `tau`.
/// Probabilities are integer weights in `1..=6` normalised; function values
/// are quarters in `[-2, 2]`; `tau` is one of `1/8, 1/4, 3/8, 1/2, 3/4, 1`.
pub fn random_instance(
    rng: &mut StreamRng,
    max_atoms: usize,
    max_functions: usize,
    max_n: usize,
) -> Result<(FiniteInstance, BigRational)> {
    if max_atoms == 0 || max_functions == 0 || max_n == 0 {
        return Err(invalid_param("limits must be >= 1"));
    }
    let m = rng.random_range(1..=max_atoms);
    let weights: Vec<i64> = (0..m).map(|_| rng.random_range(1..=6)).collect();
    let total: i64 = weights.iter().sum();
    let probs = weights.iter().map(|&w| q(w, total)).collect();
    let fcount = rng.random_range(1..=max_functions);
    let functions = (0..fcount).map(|_| (0..m).map(|_| q(rng.random_range(-8..=8), 4)).collect()).collect();
    let n = rng.random_range(1..=max_n);
    let taus = [q(1, 8), q(1, 4), q(3, 8), q(1, 2), q(3, 4), q(1, 1)];
    let tau = taus[rng.random_range(0..taus.len())].clone();
    Ok((FiniteInstance::new(probs, functions, n)?, tau))
}
