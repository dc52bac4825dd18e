//! Small-ball function of linear marginals, sandwiched between the
//! Paley-Zygmund lower bound and a direction-search upper estimate.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    dot, marginal_abs_moment, random_unit_vector, DistributionSpec, Family, Samples,
};
use crate::error::{invalid_param, Error, Result};
use crate::seed::rng_from_seed;

pub const DEFAULT_MOMENT_ORDER: f64 = 2.0;
const UNIT_NORM_TOL: f64 = 1e-10;

fn check_unit(t: &[f64]) -> Result<()> {
    let norm = dot(t, t).sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::InvalidInput(format!("direction has norm {norm}, expected 1")));
    }
    Ok(())
}

/// Fraction of draws with `|<X_i, t>| >= u`.
pub fn q_direction(samples: &Samples, t: &[f64], u: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("q_direction needs at least one sample".into()));
    }
    if t.len() != samples.dim() {
        return Err(Error::InvalidInput("direction has wrong dimension".into()));
    }
    check_unit(t)?;
    if !(u >= 0.0) {
        return Err(invalid_param(format!("threshold u={u} must be >= 0")));
    }
    Ok(count_at_least(samples, t, u) as f64 / samples.len() as f64)
}

fn count_at_least(samples: &Samples, t: &[f64], u: f64) -> usize {
    samples.rows().filter(|r| dot(r, t).abs() >= u).count()
}

/// Binomial standard error of an empirical frequency.
pub fn binomial_stderr(p: f64, m: usize) -> f64 {
    (p * (1.0 - p) / m as f64).sqrt()
}

/// Best direction found by [`search_min`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub value: f64,
    pub direction: Vec<f64>,
    /// Position of the winning candidate in evaluation order.
    pub index: usize,
    /// Every candidate evaluated, in evaluation order.
    #[serde(skip)]
    pub candidates: Vec<Vec<f64>>,
}

/// Derivative-free minimization over the unit sphere.
///
/// Candidates are, in order: `max(1, floor(0.8 budget))` uniform random
/// directions, then (when `budget >= 2`) the `2n` signed coordinate
/// directions, then `budget - random` greedy refinement steps that perturb
/// the incumbent by Gaussian noise of decaying scale. Ties keep the lowest index.
pub fn search_min<F>(dim: usize, budget: usize, seed: u64, objective: F) -> Result<SearchOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    search_min_with(dim, budget, seed, &[], objective)
}

/// As [`search_min`], with `extra` directions evaluated ahead of the random ones.
pub fn search_min_with<F>(
    dim: usize,
    budget: usize,
    seed: u64,
    extra: &[Vec<f64>],
    objective: F,
) -> Result<SearchOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if budget == 0 {
        return Err(invalid_param("direction budget must be >= 1"));
    }
    if dim == 0 {
        return Err(invalid_param("dimension must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let n_random = if budget == 1 { 1 } else { (budget * 4 / 5).max(1) };
    let mut candidates: Vec<Vec<f64>> = extra.to_vec();
    candidates.extend((0..n_random).map(|_| random_unit_vector(dim, &mut rng)));
    if budget >= 2 {
        for i in 0..dim {
            for sign in [1.0, -1.0] {
                let mut e = vec![0.0; dim];
                e[i] = sign;
                candidates.push(e);
            }
        }
    }
    let values: Vec<f64> = candidates.par_iter().map(|t| objective(t)).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let mut best_value = values[best];
    let mut best_dir = candidates[best].clone();
    let mut best_index = best;

    let mut scale = 0.5;
    for _ in 0..budget.saturating_sub(n_random) {
        let mut trial: Vec<f64> = best_dir
            .iter()
            .map(|x| x + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = dot(&trial, &trial).sqrt();
        scale *= 0.9;
        if norm < 1e-12 {
            continue;
        }
        trial.iter_mut().for_each(|x| *x /= norm);
        let v = objective(&trial);
        candidates.push(trial);
        if v < best_value {
            best_value = v;
            best_dir = candidates.last().expect("just pushed").clone();
            best_index = candidates.len() - 1;
        }
    }
    Ok(SearchOutcome {
        value: best_value,
        direction: best_dir,
        index: best_index,
        candidates,
    })
}

/// Upper estimate of `Q(u) = inf_t P{|<X,t>| >= u}` by direction search.
pub fn q_inf_search(samples: &Samples, u: f64, budget: usize, seed: u64) -> Result<SearchOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("q_inf_search needs samples".into()));
    }
    if !(u >= 0.0) {
        return Err(invalid_param(format!("threshold u={u} must be >= 0")));
    }
    let m = samples.len() as f64;
    search_min(samples.dim(), budget, seed, |t| count_at_least(samples, t, u) as f64 / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioSource {
    Analytic,
    Empirical,
}

/// `alpha = inf_t |<X,t>|_L1` and `beta_p = sup_t |<X,t>|_Lp / |<X,t>|_L1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRatios {
    pub alpha: f64,
    pub beta_p: f64,
    pub p: f64,
    pub source: RatioSource,
    /// Set when some direction has zero L1 norm.
    pub degenerate: bool,
}

impl MomentRatios {
    pub fn new(alpha: f64, beta_p: f64, p: f64) -> Result<Self> {
        if !(p > 1.0) {
            return Err(invalid_param(format!("moment order p={p} must be > 1")));
        }
        if !(alpha >= 0.0) || !(beta_p >= 1.0) {
            return Err(invalid_param(format!("need alpha >= 0 and beta_p >= 1, got {alpha}, {beta_p}")));
        }
        Ok(Self {
            alpha,
            beta_p,
            p,
            source: RatioSource::Analytic,
            degenerate: alpha == 0.0,
        })
    }

    pub fn conjugate_exponent(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

/// Sphere-wide moment ratios of a family with known marginals.
pub fn moment_ratios_analytic(spec: &DistributionSpec, p: f64) -> Result<MomentRatios> {
    if !(p > 1.0) {
        return Err(invalid_param(format!("moment order p={p} must be > 1")));
    }
    let flags = spec.analytic();
    if !flags.moment_ratios {
        return Err(Error::UnsupportedQuery(format!(
            "{} has no analytic moment ratios",
            spec.family
        )));
    }
    if spec.family == Family::RademacherVec && spec.n >= 2 {
        // |<X,t>|_L1 >= |t|/sqrt(2) with equality at (e1+e2)/sqrt(2); L2 norm is 1.
        if p != 2.0 {
            return Err(Error::UnsupportedQuery(
                "rademacher-vec moment ratios are analytic only for p = 2".into(),
            ));
        }
        return MomentRatios::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::SQRT_2, p);
    }
    let l1 = marginal_abs_moment(spec, 1.0)?;
    let lp = marginal_abs_moment(spec, p)?.powf(1.0 / p);
    MomentRatios::new(l1, lp / l1, p)
}

/// Empirical moment ratios by direction search on the sample measure.
/// `extra` directions are always part of both searches.
pub fn moment_ratios_empirical(
    samples: &Samples,
    p: f64,
    budget: usize,
    seed: u64,
    extra: &[Vec<f64>],
) -> Result<MomentRatios> {
    if !(p > 1.0) {
        return Err(invalid_param(format!("moment order p={p} must be > 1")));
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput("moment ratios need samples".into()));
    }
    let m = samples.len() as f64;
    let l1 = |t: &[f64]| samples.rows().map(|r| dot(r, t).abs()).sum::<f64>() / m;
    let alpha = search_min_with(samples.dim(), budget, seed, extra, l1)?;
    if alpha.value <= 0.0 {
        return Ok(MomentRatios {
            alpha: 0.0,
            beta_p: f64::INFINITY,
            p,
            source: RatioSource::Empirical,
            degenerate: true,
        });
    }
    let neg_ratio = |t: &[f64]| {
        let (s1, sp) = samples.rows().fold((0.0, 0.0), |(a, b), r| {
            let x = dot(r, t).abs();
            (a + x, b + x.powf(p))
        });
        if s1 == 0.0 {
            return f64::NEG_INFINITY;
        }
        -((sp / m).powf(1.0 / p) / (s1 / m))
    };
    let beta = search_min_with(samples.dim(), budget, seed ^ 0x5eed_beef, extra, neg_ratio)?;
    Ok(MomentRatios {
        alpha: alpha.value,
        beta_p: (-beta.value).max(1.0),
        p,
        source: RatioSource::Empirical,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaleyZygmund {
    pub value: f64,
    /// `u >= alpha` (or `alpha = 0`): the inequality says nothing.
    pub vacuous: bool,
}

/// `Q(u) >= (1 - u/alpha)^q (1/beta_p)^q` with `1/p + 1/q = 1`.
pub fn paley_zygmund_lower(ratios: &MomentRatios, u: f64) -> Result<PaleyZygmund> {
    if !(ratios.p > 1.0) {
        return Err(invalid_param(format!("moment order p={} must be > 1", ratios.p)));
    }
    if !(u >= 0.0) {
        return Err(invalid_param(format!("threshold u={u} must be >= 0")));
    }
    if ratios.alpha <= 0.0 || u >= ratios.alpha || !ratios.beta_p.is_finite() {
        return Ok(PaleyZygmund { value: 0.0, vacuous: true });
    }
    let q = ratios.conjugate_exponent();
    let value = ((1.0 - u / ratios.alpha) / ratios.beta_p).powf(q);
    Ok(PaleyZygmund { value, vacuous: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallCurve {
    pub u_grid: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub argmin_dirs: Vec<Vec<f64>>,
    /// Index of each argmin into the pooled direction set.
    pub dir_index: Vec<usize>,
    pub sample_size: usize,
    pub ratios: MomentRatios,
}

impl SmallBallCurve {
    pub fn stderr(&self, i: usize) -> f64 {
        binomial_stderr(self.upper[i], self.sample_size)
    }

    /// CSV with columns `u,q_upper,q_lower,dir_index,stderr`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["u", "q_upper", "q_lower", "dir_index", "stderr"])?;
        for i in 0..self.u_grid.len() {
            out.write_record([
                self.u_grid[i].to_string(),
                self.upper[i].to_string(),
                self.lower[i].to_string(),
                self.dir_index[i].to_string(),
                self.stderr(i).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Builds the sandwich over `u_grid`.
///
/// The upper curve is the minimum over the pooled set of every direction
/// visited by the per-threshold searches, so it is nonincreasing in `u`.
/// When `ratios` is `None`, empirical ratios are searched on the same
/// samples with the pooled set included, which makes the lower curve
/// dominated by the empirical frequency along every pooled direction.
pub fn small_ball_curve(
    samples: &Samples,
    u_grid: &[f64],
    ratios: Option<MomentRatios>,
    budget: usize,
    seed: u64,
) -> Result<SmallBallCurve> {
    if u_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid_param("u_grid must be ascending"));
    }
    let mut pool: Vec<Vec<f64>> = Vec::new();
    for (k, &u) in u_grid.iter().enumerate() {
        let found = q_inf_search(samples, u, budget, seed.wrapping_add(k as u64))?;
        pool.extend(found.candidates);
    }
    let ratios = match ratios {
        Some(r) => r,
        None => moment_ratios_empirical(samples, DEFAULT_MOMENT_ORDER, budget, seed ^ 0xa1fa, &pool)?,
    };
    let m = samples.len();
    let projections: Vec<Vec<f64>> = pool
        .par_iter()
        .map(|t| samples.project(t).into_iter().map(f64::abs).collect())
        .collect();
    let mut curve = SmallBallCurve {
        u_grid: u_grid.to_vec(),
        upper: Vec::with_capacity(u_grid.len()),
        lower: Vec::with_capacity(u_grid.len()),
        argmin_dirs: Vec::with_capacity(u_grid.len()),
        dir_index: Vec::with_capacity(u_grid.len()),
        sample_size: m,
        ratios,
    };
    for &u in u_grid {
        let mut best = (usize::MAX, 0usize);
        for (i, proj) in projections.iter().enumerate() {
            let c = proj.iter().filter(|x| **x >= u).count();
            if best.0 == usize::MAX || c < best.1 {
                best = (i, c);
            }
        }
        curve.upper.push(best.1 as f64 / m as f64);
        curve.argmin_dirs.push(pool[best.0].clone());
        curve.dir_index.push(best.0);
        curve.lower.push(paley_zygmund_lower(&ratios, u)?.value);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{draw_samples, theoretical_tail};
    use crate::seed::rng_from_seed;

    fn gaussian_samples(n: usize, m: usize, seed: u64) -> Samples {
        draw_samples(&DistributionSpec::gaussian(n), m, &mut rng_from_seed(seed)).unwrap()
    }

    #[test]
    fn q_at_zero_is_one() {
        let s = gaussian_samples(3, 100, 1);
        assert_eq!(q_direction(&s, &[0.0, 1.0, 0.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn q_direction_rejects_bad_inputs() {
        let s = gaussian_samples(2, 10, 1);
        assert!(q_direction(&s, &[1.0, 1.0], 0.5).is_err());
        let empty = Samples::from_flat(2, vec![]).unwrap();
        assert!(matches!(q_direction(&empty, &[1.0, 0.0], 0.5), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn gaussian_q_matches_tail() {
        let m = 1_000_000;
        let s = gaussian_samples(1, m, 2);
        let q = q_direction(&s, &[1.0], 0.2).unwrap();
        let exact = theoretical_tail(&DistributionSpec::gaussian(1), 0.2).unwrap();
        assert!((q - exact).abs() < 0.002, "{q} vs {exact}");
    }

    #[test]
    fn atomic_mixture_small_u() {
        let spec = DistributionSpec::atomic_mixture(3, 0.5);
        let s = draw_samples(&spec, 200_000, &mut rng_from_seed(3)).unwrap();
        let t = [0.6, 0.0, 0.8];
        let q = q_direction(&s, &t, 1e-6).unwrap();
        assert!((q - 0.5).abs() < 4.0 * binomial_stderr(0.5, 200_000), "{q}");
    }

    #[test]
    fn search_finds_hyperplane_normal() {
        let mut rng = rng_from_seed(4);
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal), 0.0])
            .collect();
        let s = Samples::from_rows(&rows).unwrap();
        let out = q_inf_search(&s, 0.1, 50, 9).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.direction[2].abs() > 0.999);
    }

    #[test]
    fn unit_budget_is_single_random_direction() {
        let s = gaussian_samples(4, 500, 5);
        let out = q_inf_search(&s, 0.7, 1, 77).unwrap();
        assert_eq!(out.candidates.len(), 1);
        let expect = q_direction(&s, &out.direction, 0.7).unwrap();
        assert_eq!(out.value, expect);
        let mut rng = rng_from_seed(77);
        assert_eq!(out.direction, random_unit_vector(4, &mut rng));
    }

    #[test]
    fn rotation_invariant_search_near_coordinate_value() {
        let m = 20_000;
        let s = gaussian_samples(3, m, 6);
        let u = 0.5;
        let at_e1 = q_direction(&s, &[1.0, 0.0, 0.0], u).unwrap();
        let out = q_inf_search(&s, u, 10, 1).unwrap();
        assert!(out.value <= at_e1);
        assert!(at_e1 - out.value <= 3.0 * binomial_stderr(at_e1, m));
    }

    #[test]
    fn pz_examples() {
        let ones = MomentRatios::new(1.0, 1.0, 2.0).unwrap();
        assert_eq!(paley_zygmund_lower(&ones, 0.5).unwrap().value, 0.25);
        let vac = paley_zygmund_lower(&ones, 1.0).unwrap();
        assert!(vac.vacuous && vac.value == 0.0);
        let g = moment_ratios_analytic(&DistributionSpec::gaussian(5), 2.0).unwrap();
        let near_zero = paley_zygmund_lower(&g, 1e-12).unwrap().value;
        assert!((near_zero - 1.0 / (g.beta_p * g.beta_p)).abs() < 1e-11);
        // (1 - 0.2/0.79788)^2 / 1.25331^2
        let v = paley_zygmund_lower(&g, 0.2).unwrap().value;
        let alpha = (2.0 / std::f64::consts::PI).sqrt();
        let expect = (1.0 - 0.2 / alpha).powi(2) * alpha * alpha;
        assert!((v - expect).abs() < 1e-14);
        assert!((v - 0.357).abs() < 5e-4, "{v}");
    }

    #[test]
    fn analytic_ratios() {
        let g = moment_ratios_analytic(&DistributionSpec::gaussian(2), 2.0).unwrap();
        assert!((g.alpha - 0.797_884_560_802_865_4).abs() < 1e-14);
        assert!((g.beta_p - 1.253_314_137_315_500_3).abs() < 1e-14);
        let r = moment_ratios_analytic(&DistributionSpec::rademacher(1), 2.0).unwrap();
        assert_eq!((r.alpha, r.beta_p), (1.0, 1.0));
        assert!(moment_ratios_analytic(&DistributionSpec::heavy_iid(2, 1.0), 2.0).is_err());
        assert!(moment_ratios_analytic(&DistributionSpec::gaussian(2), 1.0).is_err());
    }

    #[test]
    fn empirical_ratios_rademacher_and_degenerate() {
        let s = draw_samples(&DistributionSpec::rademacher(1), 50, &mut rng_from_seed(1)).unwrap();
        let r = moment_ratios_empirical(&s, 2.0, 8, 1, &[]).unwrap();
        assert_eq!((r.alpha, r.beta_p), (1.0, 1.0));

        let zeros = Samples::from_rows(&vec![vec![0.0, 0.0]; 10]).unwrap();
        let z = moment_ratios_empirical(&zeros, 2.0, 8, 1, &[]).unwrap();
        assert!(z.degenerate && z.alpha == 0.0);
    }

    #[test]
    fn curve_invariants() {
        let m = 5000;
        let s = gaussian_samples(3, m, 8);
        let grid = [0.0, 0.1, 0.2, 0.4, 0.8, 1.6];
        let curve = small_ball_curve(&s, &grid, None, 24, 3).unwrap();
        assert_eq!(curve.upper[0], 1.0);
        for w in curve.upper.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for i in 0..grid.len() {
            assert!((0.0..=1.0).contains(&curve.lower[i]));
            assert!(curve.lower[i] <= curve.upper[i] + 3.0 * curve.stderr(i));
            let d = &curve.argmin_dirs[i];
            assert!((dot(d, d).sqrt() - 1.0).abs() < 1e-12);
        }
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("u,q_upper,q_lower,dir_index,stderr\n"));
        assert_eq!(text.lines().count(), grid.len() + 1);
    }
}
