//! Shattering numbers of halfspaces `{x : <t,x> > u}` and absolute
//! thresholds `{x : |<t,x>| > u}` (`u > 0`) on small point sets.
//!
//! For a fixed direction both classes cut out "top-k by score" sets, so the
//! traces on the points are the score-order prefixes over one direction per
//! cell of the arrangement of critical great circles. Cells are reached
//! exactly in dimensions 1 to 3; larger inputs only get a sampled lower bound.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{dot, random_unit_vector};
use crate::error::{invalid_param, Error, Result};
use crate::seed::rng_from_seed;

pub const VC_MAX_POINTS: usize = 25;
pub const VC_MAX_DIM: usize = 3;
const SAMPLED_MAX_POINTS: usize = 64;
const LEVEL_CANDIDATE_CAP: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetClass {
    Halfspaces,
    AbsThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcReport {
    pub class: SetClass,
    pub points: usize,
    pub dim: usize,
    pub shattered_size: usize,
    /// Lexicographically first shattered subset of maximal size.
    pub witness: Vec<usize>,
    pub traces: usize,
    pub directions: usize,
    /// False when directions were sampled: the size is then a lower bound.
    pub exact: bool,
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(Vec::len).ok_or_else(|| Error::InvalidInput("no points".into()))?;
    if dim == 0 || points.iter().any(|p| p.len() != dim || p.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidInput("points must be finite and share a positive dimension".into()));
    }
    Ok(dim)
}

fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = dot(v, v).sqrt();
    (norm > 1e-12).then(|| v.iter().map(|x| x / norm).collect())
}

/// Unit normals of the great circles where the score order can change,
/// one per distinct circle.
fn critical_normals(points: &[Vec<f64>], class: SetClass) -> Vec<Vec<f64>> {
    let mut raw = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if class == SetClass::AbsThreshold {
            raw.push(p.clone());
        }
        for q in &points[i + 1..] {
            raw.push(p.iter().zip(q).map(|(a, b)| a - b).collect::<Vec<_>>());
            if class == SetClass::AbsThreshold {
                raw.push(p.iter().zip(q).map(|(a, b)| a + b).collect());
            }
        }
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in raw {
        let Some(mut a) = normalize(&v) else { continue };
        let lead = a.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
        if lead < 0.0 {
            a.iter_mut().for_each(|x| *x = -*x);
        }
        if !out.iter().any(|b| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)) {
            out.push(a);
        }
    }
    out
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn sector_midpoints(mut angles: Vec<f64>) -> Vec<f64> {
    for a in angles.iter_mut() {
        *a = a.rem_euclid(TAU);
    }
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    if angles.is_empty() {
        return vec![0.0];
    }
    let m = angles.len();
    (0..m)
        .map(|i| {
            let next = if i + 1 < m { angles[i + 1] } else { angles[0] + TAU };
            0.5 * (angles[i] + next)
        })
        .collect()
}

/// One direction inside every open cell of the arrangement.
fn cell_directions(dim: usize, normals: &[Vec<f64>]) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => {
            let angles = normals
                .iter()
                .flat_map(|a| {
                    let base = a[1].atan2(a[0]);
                    [base + 0.5 * PI, base - 0.5 * PI]
                })
                .collect();
            sector_midpoints(angles).into_iter().map(|th| vec![th.cos(), th.sin()]).collect()
        }
        _ => sphere_cell_directions(normals),
    }
}

fn sphere_cell_directions(normals: &[Vec<f64>]) -> Vec<Vec<f64>> {
    match normals.len() {
        0 => return vec![vec![1.0, 0.0, 0.0]],
        1 => return vec![normals[0].clone(), normals[0].iter().map(|x| -x).collect()],
        _ => {}
    }
    let pairs: Vec<(usize, usize)> =
        (0..normals.len()).flat_map(|k| (k + 1..normals.len()).map(move |l| (k, l))).collect();
    pairs
        .par_iter()
        .flat_map_iter(|&(k, l)| {
            let mut dirs = Vec::new();
            let Some(v) = normalize(&cross(&normals[k], &normals[l])) else { return dirs };
            for sign in [1.0, -1.0] {
                let v: Vec<f64> = v.iter().map(|x| sign * x).collect();
                // Only the lowest-index pair through a vertex emits it.
                let incident: Vec<usize> =
                    (0..normals.len()).filter(|&m| dot(&normals[m], &v).abs() < 1e-10).collect();
                if incident.first() != Some(&k) || incident.get(1) != Some(&l) {
                    continue;
                }
                let eps = (0..normals.len())
                    .filter(|m| !incident.contains(m))
                    .map(|m| dot(&normals[m], &v).abs())
                    .fold(0.2f64, f64::min)
                    * 0.5;
                let helper = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                let e1 = normalize(&cross(&v, &helper)).expect("helper not parallel");
                let e2 = cross(&v, &e1);
                let angles = incident
                    .iter()
                    .flat_map(|&m| {
                        let d = cross(&normals[m], &v);
                        let th = dot(&d, &e2).atan2(dot(&d, &e1));
                        [th, th + PI]
                    })
                    .collect();
                for th in sector_midpoints(angles) {
                    let w: Vec<f64> =
                        (0..3).map(|i| v[i] + eps * (th.cos() * e1[i] + th.sin() * e2[i])).collect();
                    dirs.push(normalize(&w).expect("near unit"));
                }
            }
            dirs
        })
        .collect()
}

fn push_prefix_traces(points: &[Vec<f64>], class: SetClass, t: &[f64], out: &mut HashSet<u64>) {
    let mut scored: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = dot(p, t);
            (if class == SetClass::AbsThreshold { s.abs() } else { s }, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    out.insert(0);
    let mut mask = 0u64;
    for (pos, &(score, i)) in scored.iter().enumerate() {
        if class == SetClass::AbsThreshold && score <= 0.0 {
            break;
        }
        mask |= 1 << i;
        // Exact ties are kept together.
        if scored.get(pos + 1).is_none_or(|next| next.0 != score) {
            out.insert(mask);
        }
    }
}

fn traces_for(points: &[Vec<f64>], class: SetClass, directions: &[Vec<f64>]) -> Vec<u64> {
    let set: HashSet<u64> = directions
        .par_chunks(256)
        .map(|chunk| {
            let mut local = HashSet::new();
            for t in chunk {
                push_prefix_traces(points, class, t, &mut local);
            }
            local
        })
        .reduce(HashSet::new, |mut a, b| {
            a.extend(b);
            a
        });
    let mut v: Vec<u64> = set.into_iter().collect();
    v.sort_unstable();
    v
}

fn check_exact_size(points: &[Vec<f64>]) -> Result<usize> {
    let dim = check_points(points)?;
    if points.len() > VC_MAX_POINTS || dim > VC_MAX_DIM {
        return Err(Error::BudgetExceeded(format!(
            "{} points in dimension {dim}; exact enumeration allows at most {VC_MAX_POINTS} points in dimension <= {VC_MAX_DIM}",
            points.len()
        )));
    }
    Ok(dim)
}

/// Every trace of the class on the points, as sorted bit masks.
pub fn realizable_traces(points: &[Vec<f64>], class: SetClass) -> Result<Vec<u64>> {
    let dim = check_exact_size(points)?;
    let dirs = cell_directions(dim, &critical_normals(points, class));
    Ok(traces_for(points, class, &dirs))
}

fn shattered(traces: &[u64], subset: u64) -> bool {
    let need = 1usize << subset.count_ones();
    let mut seen = HashSet::with_capacity(need);
    for t in traces {
        seen.insert(t & subset);
        if seen.len() == need {
            return true;
        }
    }
    false
}

/// Level-wise search: a set can only be shattered if all its one-smaller
/// subsets are.
fn largest_shattered(traces: &[u64], n_points: usize) -> Result<(usize, Vec<usize>)> {
    let mut level: Vec<u64> = (0..n_points).map(|i| 1u64 << i).filter(|&s| shattered(traces, s)).collect();
    if level.is_empty() {
        return Ok((0, Vec::new()));
    }
    let mut size = 1;
    loop {
        let known: HashSet<u64> = level.iter().copied().collect();
        let mut candidates = Vec::new();
        for &s in &level {
            let top = 63 - s.leading_zeros() as usize;
            for i in top + 1..n_points {
                let c = s | 1 << i;
                let all_sub = (0..n_points).filter(|j| c >> j & 1 == 1).all(|j| known.contains(&(c & !(1 << j))));
                if all_sub {
                    candidates.push(c);
                }
            }
            if candidates.len() > LEVEL_CANDIDATE_CAP {
                return Err(Error::BudgetExceeded(format!(
                    "more than {LEVEL_CANDIDATE_CAP} candidate subsets of size {}",
                    size + 1
                )));
            }
        }
        let next: Vec<u64> = candidates.par_iter().copied().filter(|&c| shattered(traces, c)).collect();
        if next.is_empty() {
            break;
        }
        level = next;
        size += 1;
    }
    let first = *level.iter().min_by_key(|s| bits(**s)).expect("nonempty");
    Ok((size, bits(first)))
}

fn bits(s: u64) -> Vec<usize> {
    (0..64).filter(|i| s >> i & 1 == 1).collect()
}

/// Exact shattering number for at most 25 points in dimension at most 3.
pub fn vc_bruteforce(points: &[Vec<f64>], class: SetClass) -> Result<VcReport> {
    let dim = check_exact_size(points)?;
    let dirs = cell_directions(dim, &critical_normals(points, class));
    let traces = traces_for(points, class, &dirs);
    let (size, witness) = largest_shattered(&traces, points.len())?;
    Ok(VcReport {
        class,
        points: points.len(),
        dim,
        shattered_size: size,
        witness,
        traces: traces.len(),
        directions: dirs.len(),
        exact: true,
    })
}

/// Lower bound from `directions` random directions; any dimension, at most
/// 64 points.
pub fn vc_lower_bound_sampled(points: &[Vec<f64>], class: SetClass, directions: usize, seed: u64) -> Result<VcReport> {
    let dim = check_points(points)?;
    if points.len() > SAMPLED_MAX_POINTS {
        return Err(Error::BudgetExceeded(format!(
            "{} points; sampled search allows at most {SAMPLED_MAX_POINTS}",
            points.len()
        )));
    }
    if directions == 0 {
        return Err(invalid_param("need at least one direction"));
    }
    let mut rng = rng_from_seed(seed);
    let dirs: Vec<Vec<f64>> = (0..directions).map(|_| random_unit_vector(dim, &mut rng)).collect();
    let traces = traces_for(points, class, &dirs);
    let (size, witness) = largest_shattered(&traces, points.len())?;
    Ok(VcReport {
        class,
        points: points.len(),
        dim,
        shattered_size: size,
        witness,
        traces: traces.len(),
        directions: dirs.len(),
        exact: false,
    })
}
