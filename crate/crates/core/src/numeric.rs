//! Quadrature, compensated summation, order statistics and log-log regression.

use crate::error::{invalid_param, Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for GK_NODES[1], [3], [5], [7].
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];
const MAX_INTERVALS: usize = 4000;
const ROUNDING_FLOOR: f64 = 50.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Piece {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let finite = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let fc = finite(center);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for (i, &x) in GK_NODES[..7].iter().enumerate() {
        let pair = finite(center - half * x) + finite(center + half * x);
        kronrod += KRONROD_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    Piece {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integral of `f` over `[a, b]` to relative accuracy `rel_tol`, by globally
/// adaptive Gauss-Kronrod 7/15 bisection.
///
/// Kinks should sit on interval boundaries; split the range with
/// [`integrate_pieces`] when they don't. Integrable endpoint singularities are fine.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut pieces = vec![gauss_kronrod(&f, a, b)];
    loop {
        let total = compensated_sum(pieces.iter().map(|p| p.value));
        let error: f64 = pieces.iter().map(|p| p.error).sum();
        if error <= (rel_tol * total.abs()).max(ROUNDING_FLOOR * total.abs()) || error == 0.0 {
            return Ok(total);
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::NoConvergence {
                iterations: pieces.len(),
                last_change: error,
                residual: rel_tol * total.abs(),
            });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("nonempty");
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Interval at rounding resolution; accept what we have.
            return Ok(total);
        }
        pieces.push(gauss_kronrod(&f, p.a, mid));
        pieces.push(gauss_kronrod(&f, mid, p.b));
    }
}

/// Integral over consecutive breakpoints.
pub fn integrate_pieces(f: impl Fn(f64) -> f64, breaks: &[f64], rel_tol: f64) -> Result<f64> {
    let parts: Result<Vec<f64>> = breaks
        .windows(2)
        .map(|w| integrate(&f, w[0], w[1], rel_tol))
        .collect();
    Ok(compensated_sum(parts?))
}

/// Integral of `f` over `[a, ∞)`: `[a, c]` directly, then `[c, ∞)` through
/// `u = c / s`, which turns algebraic decay into a mild endpoint behaviour.
pub fn integrate_to_infinity(f: impl Fn(f64) -> f64, a: f64, rel_tol: f64) -> Result<f64> {
    let c = if a > 0.0 { 2.0 * a } else { a + 1.0 };
    let head = integrate(&f, a, c, rel_tol)?;
    let tail = integrate(|s: f64| f(c / s) * c / (s * s), 0.0, 1.0, rel_tol)?;
    Ok(head + tail)
}

/// P{|g| >= u} for a standard Gaussian g.
pub fn gaussian_two_sided_tail(u: f64) -> f64 {
    if u <= 0.0 {
        1.0
    } else {
        statrs::function::erf::erfc(u / std::f64::consts::SQRT_2)
    }
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// E|g|^p for a standard Gaussian g.
pub fn gaussian_abs_moment(p: f64) -> f64 {
    (0.5 * p * std::f64::consts::LN_2 + ln_gamma(0.5 * (p + 1.0))
        - 0.5 * std::f64::consts::PI.ln())
    .exp()
}

/// Linear-interpolated quantile (Hyndman-Fan type 7) of unsorted data.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, prob)
}

pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Ordinary least squares `y = intercept + slope * x` with a 95% confidence
/// half-width on the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_half_width: f64,
    pub points: usize,
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(invalid_param("regression inputs differ in length"));
    }
    let m = xs.len();
    if m < 2 {
        return Err(invalid_param("regression needs at least two points"));
    }
    let mf = m as f64;
    let x_bar = compensated_sum(xs.iter().copied()) / mf;
    let y_bar = compensated_sum(ys.iter().copied()) / mf;
    let sxx = compensated_sum(xs.iter().map(|x| (x - x_bar) * (x - x_bar)));
    if sxx <= 0.0 {
        return Err(invalid_param("regression abscissae are all equal"));
    }
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(x, y)| (x - x_bar) * (y - y_bar)));
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let slope_half_width = if m > 2 {
        let rss = compensated_sum(
            xs.iter()
                .zip(ys)
                .map(|(x, y)| (y - intercept - slope * x).powi(2)),
        );
        let dof = mf - 2.0;
        let se = (rss / dof / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| invalid_param(e.to_string()))?
            .inverse_cdf(0.975);
        t * se
    } else {
        f64::INFINITY
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_half_width,
        points: m,
    })
}
