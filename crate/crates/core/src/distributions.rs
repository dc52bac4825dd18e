//! Isotropic random-vector families and their analytic descriptors.
//!
//! Every family is normalized so that `E<X,t>^2 = |t|^2`. The two heavy-tailed
//! families are built from the symmetric truncated-Pareto law
//! `P{|xi| > u} = min(1, (u/u0)^-(2+eta))`, with `u0` chosen for unit variance.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::numeric::{self, gaussian_abs_moment, gaussian_two_sided_tail, ln_gamma};
use crate::seed::{substream, StreamRng};

const QUAD_REL_TOL: f64 = 1e-10;
const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianIid,
    HeavyIid,
    HeavyRadial,
    RademacherVec,
    AtomicMixture,
    UniformCube,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::GaussianIid,
        Family::HeavyIid,
        Family::HeavyRadial,
        Family::RademacherVec,
        Family::AtomicMixture,
        Family::UniformCube,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::GaussianIid => "gaussian-iid",
            Family::HeavyIid => "heavy-iid",
            Family::HeavyRadial => "heavy-radial",
            Family::RademacherVec => "rademacher-vec",
            Family::AtomicMixture => "atomic-mixture",
            Family::UniformCube => "uniform-cube",
        }
    }

    pub fn is_heavy(self) -> bool {
        matches!(self, Family::HeavyIid | Family::HeavyRadial)
    }

    pub fn is_rotation_invariant(self) -> bool {
        matches!(
            self,
            Family::GaussianIid | Family::HeavyRadial | Family::AtomicMixture
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|fam| fam.as_str() == s)
            .ok_or_else(|| invalid_param(format!("unknown family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailCertification {
    /// The bound holds for every direction and every threshold by construction.
    Certified,
    /// Estimated from samples over a direction net; not a proof.
    Empirical,
    /// Supplied by the user; not checked.
    Declared,
}

/// Tail profile `P{|<X,t>| > u} <= L / u^(2+eta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProfile {
    pub eta: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub certification: TailCertification,
}

impl TailProfile {
    pub fn new(eta: f64, l: f64, certification: TailCertification) -> Result<Self> {
        if !(eta >= 0.0) {
            return Err(invalid_param(format!("tail exponent surplus eta={eta} must be >= 0")));
        }
        if !(l >= 1.0) {
            return Err(invalid_param(format!("tail constant L={l} must be >= 1")));
        }
        Ok(Self { eta, l, certification })
    }

    pub fn bound(&self, u: f64) -> f64 {
        (self.l / u.powf(2.0 + self.eta)).min(1.0)
    }
}

/// Which quantities a family exposes in closed or quadrature form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticFlags {
    /// Marginal tail along coordinate directions.
    pub marginal_tail: bool,
    /// Marginal law identical in every direction.
    pub rotation_invariant: bool,
    /// Sphere-wide alpha and beta_p.
    pub moment_ratios: bool,
    /// Sphere-wide small-ball function Q.
    pub small_ball: bool,
    /// Sphere-wide covariance band (a, A, B).
    pub band: bool,
}

/// `a <= |<X,t>|_L2 <= A` and `|<X,t>|_L2 <= B |<X,t>|_L1` for unit t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBand {
    pub a: f64,
    #[serde(rename = "A")]
    pub upper: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

impl CovarianceBand {
    pub fn new(a: f64, upper: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && upper >= a) {
            return Err(invalid_param(format!("covariance band needs 0 < a <= A, got a={a}, A={upper}")));
        }
        if !(b >= 1.0) {
            return Err(invalid_param(format!("L2/L1 constant B={b} must be >= 1")));
        }
        Ok(Self { a, upper, b })
    }
}

/// A recipe for an isotropic random vector in `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub family: Family,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Optional override of the tail constant.
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default)]
    pub mixture_p: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DistributionSpec {
    fn base(family: Family, n: usize) -> Self {
        Self {
            family,
            n,
            eta: None,
            l: None,
            mixture_p: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian(n: usize) -> Self {
        Self::base(Family::GaussianIid, n)
    }

    pub fn heavy_iid(n: usize, eta: f64) -> Self {
        Self { eta: Some(eta), ..Self::base(Family::HeavyIid, n) }
    }

    pub fn heavy_radial(n: usize, eta: f64) -> Self {
        Self { eta: Some(eta), ..Self::base(Family::HeavyRadial, n) }
    }

    pub fn rademacher(n: usize) -> Self {
        Self::base(Family::RademacherVec, n)
    }

    pub fn atomic_mixture(n: usize, p: f64) -> Self {
        Self { mixture_p: p, ..Self::base(Family::AtomicMixture, n) }
    }

    pub fn uniform_cube(n: usize) -> Self {
        Self::base(Family::UniformCube, n)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid_param("dimension n must be positive"));
        }
        if self.family.is_heavy() {
            match self.eta {
                Some(eta) if eta > 0.0 && eta.is_finite() => {}
                other => {
                    return Err(invalid_param(format!(
                        "{} needs a finite eta > 0, got {other:?}",
                        self.family
                    )))
                }
            }
        }
        if !(0.0..1.0).contains(&self.mixture_p) {
            return Err(invalid_param(format!("mixture_p={} outside [0,1)", self.mixture_p)));
        }
        if self.mixture_p != 0.0 && self.family != Family::AtomicMixture {
            return Err(invalid_param("mixture_p only applies to atomic-mixture"));
        }
        if let Some(l) = self.l {
            if !(l >= 1.0) {
                return Err(invalid_param(format!("tail constant L={l} must be >= 1")));
            }
            if self.family == Family::HeavyRadial && l < radial_tail_constant(self.n, self.eta_or_err()?)? {
                return Err(invalid_param(format!(
                    "L={l} is below the certified tail constant of heavy-radial"
                )));
            }
        }
        Ok(())
    }

    fn eta_or_err(&self) -> Result<f64> {
        self.eta
            .ok_or_else(|| invalid_param(format!("{} needs eta", self.family)))
    }

    pub fn analytic(&self) -> AnalyticFlags {
        let rot = self.family.is_rotation_invariant() || self.n == 1;
        let khintchine = self.family == Family::RademacherVec;
        AnalyticFlags {
            marginal_tail: true,
            rotation_invariant: rot,
            moment_ratios: rot || khintchine,
            small_ball: rot,
            band: rot || khintchine,
        }
    }

    /// Tail profile for the heavy families. heavy-radial carries an exact,
    /// direction-uniform constant; heavy-iid is estimated over a direction net.
    pub fn tail(&self) -> Result<Option<TailProfile>> {
        self.validate()?;
        let Some(eta) = self.eta else { return Ok(None) };
        let profile = match (self.family, self.l) {
            (Family::HeavyRadial, Some(l)) => TailProfile::new(eta, l, TailCertification::Certified)?,
            (Family::HeavyRadial, None) => {
                TailProfile::new(eta, radial_tail_constant(self.n, eta)?, TailCertification::Certified)?
            }
            (Family::HeavyIid, Some(l)) => TailProfile::new(eta, l, TailCertification::Declared)?,
            (Family::HeavyIid, None) => {
                let l = default_empirical_tail_constant(self)?;
                TailProfile::new(eta, l, TailCertification::Empirical)?
            }
            _ => return Ok(None),
        };
        Ok(Some(profile))
    }

    /// Plain-text key-value section (`[distribution]`).
    pub fn to_config_section(&self) -> String {
        let body = toml::to_string(self).expect("spec serializes");
        format!("[distribution]\n{body}")
    }

    pub fn from_config_section(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wrapper {
            distribution: DistributionSpec,
        }
        let w: Wrapper = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        w.distribution.validate()?;
        Ok(w.distribution)
    }
}

/// Scale `u0` of the unit-variance truncated-Pareto law with exponent `2 + eta`.
pub fn pareto_threshold(eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(invalid_param(format!("pareto_threshold needs eta > 0, got {eta}")));
    }
    if eta.is_infinite() {
        return Ok(1.0);
    }
    Ok((eta / (eta + 2.0)).sqrt())
}

/// `E|xi|^p` for the unit-variance truncated-Pareto law; infinite for `p >= 2 + eta`.
pub fn pareto_abs_moment(eta: f64, p: f64) -> Result<f64> {
    let u0 = pareto_threshold(eta)?;
    if p >= 2.0 + eta {
        return Ok(f64::INFINITY);
    }
    Ok(u0.powf(p) * (1.0 + p / (2.0 + eta - p)))
}

/// `E|theta_1|^p` for theta uniform on the unit sphere of `R^n`.
pub fn sphere_coordinate_abs_moment(n: usize, p: f64) -> f64 {
    let nf = n as f64;
    (ln_gamma(0.5 * nf) + ln_gamma(0.5 * (p + 1.0)) - 0.5 * PI.ln() - ln_gamma(0.5 * (nf + p))).exp()
}

/// Exact direction-uniform tail constant of heavy-radial:
/// `P{|<X,t>| > u} <= (sqrt(n) u0)^(2+eta) E|theta_1|^(2+eta) / u^(2+eta)`.
pub fn radial_tail_constant(n: usize, eta: f64) -> Result<f64> {
    let u0 = pareto_threshold(eta)?;
    let p = 2.0 + eta;
    let l = ((n as f64).sqrt() * u0).powf(p) * sphere_coordinate_abs_moment(n, p);
    Ok(l.max(1.0))
}

fn pareto_scalar(u0: f64, exponent: f64, rng: &mut StreamRng) -> f64 {
    // U in (0, 1]
    let uniform = 1.0 - rng.random::<f64>();
    u0 * uniform.powf(-1.0 / exponent)
}

/// Fill `out` with one draw of X.
pub fn sample_vector_into(spec: &DistributionSpec, rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
    debug_assert_eq!(out.len(), spec.n);
    match spec.family {
        Family::GaussianIid => {
            for x in out.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
        }
        Family::HeavyIid => {
            let eta = spec.eta_or_err()?;
            let u0 = pareto_threshold(eta)?;
            for x in out.iter_mut() {
                let mag = pareto_scalar(u0, 2.0 + eta, rng);
                *x = if rng.random::<bool>() { mag } else { -mag };
            }
        }
        Family::HeavyRadial => {
            let eta = spec.eta_or_err()?;
            let u0 = pareto_threshold(eta)?;
            let mut norm_sq = 0.0;
            loop {
                for x in out.iter_mut() {
                    *x = rng.sample(StandardNormal);
                    norm_sq += *x * *x;
                }
                if norm_sq > 0.0 {
                    break;
                }
            }
            let radius = (spec.n as f64).sqrt() * pareto_scalar(u0, 2.0 + eta, rng);
            let scale = radius / norm_sq.sqrt();
            for x in out.iter_mut() {
                *x *= scale;
            }
        }
        Family::RademacherVec => {
            for x in out.iter_mut() {
                *x = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
        }
        Family::AtomicMixture => {
            if rng.random::<f64>() < spec.mixture_p {
                out.fill(0.0);
            } else {
                let scale = 1.0 / (1.0 - spec.mixture_p).sqrt();
                for x in out.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *x = scale * g;
                }
            }
        }
        Family::UniformCube => {
            for x in out.iter_mut() {
                *x = SQRT_3 * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
    }
    Ok(())
}

pub fn sample_vector(spec: &DistributionSpec, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.n];
    sample_vector_into(spec, rng, &mut out)?;
    Ok(out)
}

/// Row-major block of `len` draws in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    dim: usize,
    data: Vec<f64>,
}

impl Samples {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidInput("samples need at least one nonempty row".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("ragged sample rows".into()));
        }
        Ok(Self { dim, data: rows.concat() })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "flat buffer of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// `<X_i, t>` for every draw.
    pub fn project(&self, t: &[f64]) -> Vec<f64> {
        self.rows().map(|r| dot(r, t)).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn draw_samples(spec: &DistributionSpec, count: usize, rng: &mut StreamRng) -> Result<Samples> {
    spec.validate()?;
    let mut data = vec![0.0; count * spec.n];
    for row in data.chunks_exact_mut(spec.n) {
        sample_vector_into(spec, rng, row)?;
    }
    Ok(Samples { dim: spec.n, data })
}

/// Exact or quadrature value of `P{|<X,e_1>| >= u}`.
pub fn theoretical_tail(spec: &DistributionSpec, u: f64) -> Result<f64> {
    spec.validate()?;
    if !(u >= 0.0) {
        return Err(invalid_param(format!("threshold u={u} must be >= 0")));
    }
    if u == 0.0 {
        return Ok(1.0);
    }
    let p = match spec.family {
        Family::GaussianIid => gaussian_two_sided_tail(u),
        Family::HeavyIid => {
            let eta = spec.eta_or_err()?;
            pareto_tail(pareto_threshold(eta)?, 2.0 + eta, u)
        }
        Family::HeavyRadial => radial_tail(spec.n, spec.eta_or_err()?, u)?,
        Family::RademacherVec => {
            if u <= 1.0 {
                1.0
            } else {
                0.0
            }
        }
        Family::AtomicMixture => {
            let keep = 1.0 - spec.mixture_p;
            keep * gaussian_two_sided_tail(u * keep.sqrt())
        }
        Family::UniformCube => (1.0 - u / SQRT_3).max(0.0),
    };
    Ok(p)
}

/// `P{|<X,t>| >= u}` along an arbitrary unit direction, where that is known.
pub fn theoretical_tail_along(spec: &DistributionSpec, t: &[f64], u: f64) -> Result<f64> {
    if t.len() != spec.n {
        return Err(Error::InvalidInput("direction has wrong dimension".into()));
    }
    if spec.analytic().rotation_invariant {
        return theoretical_tail(spec, u);
    }
    let nonzero: Vec<f64> = t.iter().copied().filter(|x| *x != 0.0).collect();
    if nonzero.len() == 1 && (nonzero[0].abs() - 1.0).abs() < 1e-12 {
        return theoretical_tail(spec, u);
    }
    Err(Error::UnsupportedQuery(format!(
        "{} has no analytic marginal tail off the coordinate axes",
        spec.family
    )))
}

fn pareto_tail(u0: f64, exponent: f64, u: f64) -> f64 {
    if u <= u0 {
        1.0
    } else {
        (u / u0).powf(-exponent)
    }
}

fn radial_tail(n: usize, eta: f64, u: f64) -> Result<f64> {
    let u0 = pareto_threshold(eta)?;
    let exponent = 2.0 + eta;
    let scale = (n as f64).sqrt() * u0;
    if n == 1 {
        return Ok(pareto_tail(scale, exponent, u));
    }
    // theta_1 = cos(phi) with density proportional to sin^(n-2)(phi); fold onto [0, pi/2].
    let weight = |phi: f64| phi.sin().powi(n as i32 - 2);
    let h = |phi: f64| {
        let c = phi.cos();
        (scale * c / u).powf(exponent).min(1.0)
    };
    let half_pi = 0.5 * PI;
    let norm = 0.5 * PI.sqrt() * (ln_gamma(0.5 * (n as f64 - 1.0)) - ln_gamma(0.5 * n as f64)).exp();
    let kink = if u < scale { (u / scale).acos() } else { 0.0 };
    let mass = numeric::integrate_pieces(|phi| weight(phi) * h(phi), &[0.0, kink, half_pi], QUAD_REL_TOL)?;
    Ok((mass / norm).min(1.0))
}

/// `E|<X,e_1>|^p`, exact or by closed form.
pub fn marginal_abs_moment(spec: &DistributionSpec, p: f64) -> Result<f64> {
    spec.validate()?;
    if !(p > 0.0) {
        return Err(invalid_param(format!("moment order p={p} must be > 0")));
    }
    let m = match spec.family {
        Family::GaussianIid => gaussian_abs_moment(p),
        Family::HeavyIid => pareto_abs_moment(spec.eta_or_err()?, p)?,
        Family::HeavyRadial => {
            let r = pareto_abs_moment(spec.eta_or_err()?, p)?;
            (spec.n as f64).powf(0.5 * p) * r * sphere_coordinate_abs_moment(spec.n, p)
        }
        Family::RademacherVec => 1.0,
        Family::AtomicMixture => {
            let keep = 1.0 - spec.mixture_p;
            keep * keep.powf(-0.5 * p) * gaussian_abs_moment(p)
        }
        Family::UniformCube => 3f64.powf(0.5 * p) / (p + 1.0),
    };
    Ok(m)
}

/// `|<X,e_1>|_L2 / |<X,e_1>|_L1`.
pub fn coordinate_norm_ratio(spec: &DistributionSpec) -> Result<f64> {
    Ok(marginal_abs_moment(spec, 2.0)?.sqrt() / marginal_abs_moment(spec, 1.0)?)
}

/// Covariance band over the whole sphere for families where it is known.
///
/// Rotation-invariant families use the coordinate marginal. For
/// rademacher-vec the sphere-wide L2/L1 constant is the sharp L1 Khintchine
/// constant `sqrt(2)` (attained at `(e_1 + e_2)/sqrt(2)`), or 1 when `n = 1`.
pub fn analytic_band(spec: &DistributionSpec) -> Result<CovarianceBand> {
    spec.validate()?;
    let flags = spec.analytic();
    if !flags.band {
        return Err(Error::UnsupportedQuery(format!(
            "{} has no analytic sphere-wide covariance band",
            spec.family
        )));
    }
    let b = match spec.family {
        Family::RademacherVec if spec.n >= 2 => SQRT_2,
        _ => coordinate_norm_ratio(spec)?,
    };
    CovarianceBand::new(1.0, 1.0, b.max(1.0))
}

/// Tail constant estimated as `max u^(2+eta) (p_hat + 3 se)` over a direction
/// net and a threshold grid.
pub fn estimate_tail_constant(samples: &Samples, eta: f64, directions: &[Vec<f64>], u_grid: &[f64]) -> f64 {
    let m = samples.len() as f64;
    let mut l: f64 = 1.0;
    for t in directions {
        let proj = samples.project(t);
        for &u in u_grid {
            let hits = proj.iter().filter(|x| x.abs() > u).count() as f64;
            let p = hits / m;
            let se = (p * (1.0 - p) / m).sqrt();
            l = l.max(u.powf(2.0 + eta) * (p + 3.0 * se));
        }
    }
    l
}

pub const TAIL_U_GRID: [f64; 7] = [1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0];
const TAIL_STREAM_KEY: u64 = 0x7a11;

/// Direction net used for empirical tail constants: coordinate axes, the
/// first diagonal pair, the all-ones diagonal and 16 random directions.
pub fn tail_direction_net(n: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    if n >= 2 {
        let mut d = vec![0.0; n];
        d[0] = 1.0 / SQRT_2;
        d[1] = 1.0 / SQRT_2;
        dirs.push(d);
        dirs.push(vec![1.0 / (n as f64).sqrt(); n]);
        for _ in 0..16 {
            dirs.push(random_unit_vector(n, rng));
        }
    }
    dirs
}

fn default_empirical_tail_constant(spec: &DistributionSpec) -> Result<f64> {
    let eta = spec.eta_or_err()?;
    let mut rng = substream(spec.seed, &[TAIL_STREAM_KEY]);
    let samples = draw_samples(spec, 20_000, &mut rng)?;
    let net = tail_direction_net(spec.n, &mut rng);
    Ok(estimate_tail_constant(&samples, eta, &net, &TAIL_U_GRID))
}

pub fn random_unit_vector(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
