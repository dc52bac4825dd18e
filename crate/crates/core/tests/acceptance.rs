//! Acceptance criteria, one line each. Runs as a plain binary so the
//! pass/fail lines are always printed; exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

use lambdamin::bounds::Regime;
use lambdamin::distributions::{draw_samples, DistributionSpec};
use lambdamin::empirical_process::{
    check_phi, random_instance, second_moment_identity, tiny_oracle, tiny_oracle_bruteforce, truncation_phi,
    vc_bruteforce, SetClass, Verdict,
};
use lambdamin::experiments::{
    holdout_coverage, run_sweep_with_threads, write_summary_csv, write_sweep_csv, ExperimentConfig, SweepResult,
};
use lambdamin::numeric::{integrate, integrate_to_infinity};
use lambdamin::rademacher::{rademacher_exact, rademacher_mc};
use lambdamin::seed::{substream, substream_seed};
use lambdamin::smallball::{moment_ratios_analytic, paley_zygmund_lower};
use lambdamin::Error;

type Outcome = Result<(bool, String), Error>;

const HEAVY_GRID: [f64; 6] = [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625];

fn heavy_sweep(eta: f64) -> Result<SweepResult, Error> {
    let cfg = ExperimentConfig::new(DistributionSpec::heavy_radial(64, eta), HEAVY_GRID.to_vec(), 100, 2024)
        .without_diagnostics();
    run_sweep_with_threads(&cfg, rayon::current_num_threads())
}

fn gaussian_bai_yin() -> Outcome {
    let cfg = ExperimentConfig::new(DistributionSpec::gaussian(100), vec![0.0625], 200, 7).without_diagnostics();
    let r = run_sweep_with_threads(&cfg, rayon::current_num_threads())?;
    let s = &r.summaries[0];
    let med = s.median_lmin();
    Ok((s.big_n == 1600 && (med - 0.75).abs() <= 0.05, format!("N={} median={med:.4} (target 0.75 +- 0.05)", s.big_n)))
}

fn regime_one_exponent() -> Outcome {
    let r = heavy_sweep(5.0)?;
    let fit = r.fit.as_ref().ok_or_else(|| Error::CalibrationUnavailable(r.fit_note.clone().unwrap_or_default()))?;
    Ok((
        r.regime == Regime::EtaGt2 && (0.35..=0.65).contains(&fit.exponent),
        format!("exponent {:.4} +- {:.4} over {} points", fit.exponent, fit.half_width, fit.points),
    ))
}

fn holdout() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for eta in [1.0, 2.0, 5.0] {
        let rep = holdout_coverage(&heavy_sweep(eta)?)?;
        ok &= rep.violations == 0;
        let worst = rep.rows.iter().map(|r| r.p05_lmin - r.floor).fold(f64::INFINITY, f64::min);
        parts.push(format!(
            "eta={eta}: {} c={:.4} violations={} worst margin {worst:+.4}",
            rep.regime, rep.constant, rep.violations
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn oracle_battery() -> Outcome {
    let mut rng = substream(0xacce, &[4]);
    let (mut applicable, mut violated, mut chain, mut crosschecked, mut mismatched) = (0, 0, 0u64, 0, 0);
    for _ in 0..150 {
        let (inst, tau) = random_instance(&mut rng, 4, 3, 8)?;
        let r = tiny_oracle(&inst, &tau)?;
        chain += r.chain_violations;
        if r.hypothesis_holds {
            applicable += 1;
            // Independent restatement of the verdict with a float margin.
            let q = r.q2tau_f64;
            let bound = 1.0 - 2.0 * (-q * q * inst.n_samples() as f64 / 8.0).exp();
            let float_ok = r.exact_probability_f64 >= bound - 1e-12;
            if r.verdict == Verdict::Violated || !float_ok {
                violated += 1;
            }
        }
        // Tuple-by-tuple enumeration as a second opinion where it is cheap.
        if (inst.atoms() as u64).pow(inst.n_samples() as u32) << inst.n_samples() <= 1 << 14 {
            let (q, rn, p) = tiny_oracle_bruteforce(&inst, &tau)?;
            crosschecked += 1;
            if r.q2tau != q.to_string() || r.r_n != rn.to_string() || r.exact_probability != p.to_string() {
                mismatched += 1;
            }
        }
    }
    // Khintchine gives R_N >= tau Q(2 tau) sqrt(2 / N) on every instance,
    // so the hypothesis cannot hold below N = 512.
    let note = if applicable == 0 { " (hypothesis unreachable for N <= 8)" } else { "" };
    Ok((
        violated == 0 && chain == 0 && mismatched == 0,
        format!(
            "150 instances: {applicable} applicable{note}, {violated} violated, {chain} chain violations, \
             {mismatched}/{crosschecked} brute-force mismatches"
        ),
    ))
}

fn paley_zygmund() -> Outcome {
    let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    // Moment ratios by quadrature, independently of the library's closed forms.
    let l1 = 2.0 * integrate_to_infinity(|x| x * density(x), 0.0, 1e-12)?;
    let l2 = (2.0 * integrate_to_infinity(|x| x * x * density(x), 0.0, 1e-12)?).sqrt();
    let ratios = moment_ratios_analytic(&DistributionSpec::gaussian(1), 2.0)?;
    let mut ok = (ratios.alpha - l1).abs() <= 1e-8 && (ratios.beta_p - l2 / l1).abs() <= 1e-8;
    let mut parts = Vec::new();
    for u in [0.1, 0.2, 0.4] {
        let tail = 2.0 * integrate_to_infinity(density, u, 1e-12)?;
        let tail_check = 1.0 - 2.0 * integrate(density, 0.0, u, 1e-12)?;
        let oracle = ((1.0 - u / l1) * l1 / l2).powi(2);
        let pz = paley_zygmund_lower(&ratios, u)?.value;
        ok &= (tail - tail_check).abs() <= 1e-8 && (pz - oracle).abs() <= 1e-8 && pz <= tail;
        parts.push(format!("u={u}: {pz:.6} <= {tail:.6}"));
    }
    Ok((ok, parts.join(", ")))
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn identity() -> Outcome {
    let mut rng = substream(0xacce, &[6]);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..300);
        let scale = 10f64.powi(rng.random_range(-4..5));
        let v: Vec<f64> = (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let c = second_moment_identity(&v)?;
        // Exact mean of squares of the float inputs.
        let truth = v.iter().fold(BigRational::zero(), |acc, &x| acc + exact(x) * exact(x))
            / BigRational::from_integer(BigInt::from(len));
        let t = truth.to_f64().unwrap();
        if t > 0.0 {
            worst = worst.max(c.gap / c.lhs).max((c.lhs - t).abs() / t).max((c.rhs - t).abs() / t);
        }
    }
    Ok((worst <= 1e-12, format!("1000 inputs, worst relative gap {worst:.3e}")))
}

fn rademacher() -> Outcome {
    let mut ok = true;
    // Every coordinate is +-1, so each realisation obeys the bound, not just the mean.
    let mut worst_rad: f64 = f64::NEG_INFINITY;
    for (i, (n, big_n)) in [(2, 6), (4, 10), (6, 14), (10, 14), (3, 12)].into_iter().enumerate() {
        for rep in 0..4u64 {
            let s = draw_samples(&DistributionSpec::rademacher(n), big_n, &mut substream(0xacce, &[7, i as u64, rep]))?;
            let r = rademacher_exact(&s)?;
            worst_rad = worst_rad.max(r.value - (n as f64 / big_n as f64).sqrt());
        }
    }
    ok &= worst_rad <= 0.0;
    // For other isotropic families the bound is on the expectation; average
    // exact values over independent samples.
    let mut parts = vec![format!("rademacher-vec worst excess {worst_rad:+.4}")];
    let families = [
        DistributionSpec::gaussian(5),
        DistributionSpec::uniform_cube(5),
        DistributionSpec::heavy_radial(5, 5.0),
        DistributionSpec::heavy_iid(5, 3.0),
    ];
    for (i, spec) in families.iter().enumerate() {
        let reps = 40;
        let vals: Vec<f64> = (0..reps)
            .map(|rep| {
                let s = draw_samples(spec, 12, &mut substream(0xacce, &[70, i as u64, rep]))?;
                Ok(rademacher_exact(&s)?.value)
            })
            .collect::<Result<_, Error>>()?;
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let bound = (5.0f64 / 12.0).sqrt();
        ok &= mean - 3.0 * sd / (reps as f64).sqrt() <= bound;
        parts.push(format!("{} mean {mean:.4} vs {bound:.4}", spec.family));
    }
    let mut outside = 0;
    for i in 0..20u64 {
        let spec = [DistributionSpec::gaussian(4), DistributionSpec::heavy_radial(6, 5.0)][(i % 2) as usize].clone();
        let s = draw_samples(&spec, 8 + (i as usize % 6), &mut substream(0xacce, &[71, i]))?;
        let e = rademacher_exact(&s)?;
        let mc = rademacher_mc(&s, 4000, substream_seed(0xacce, &[72, i]))?;
        outside += ((mc.value - e.value).abs() > 3.0 * mc.stderr) as usize;
    }
    ok &= outside == 0;
    parts.push(format!("MC outside 3 stderr on {outside} of 20"));
    Ok((ok, parts.join("; ")))
}

fn phi() -> Outcome {
    let us: Vec<f64> = (1..=100).map(|i| i as f64 * 0.037).collect();
    let ts: Vec<f64> = (0..100).map(|i| i as f64 * 0.081).collect();
    let r = check_phi(|u, t| truncation_phi(u, t).unwrap_or(f64::NAN), &us, &ts);
    Ok((r.passed() && r.pairs == 100 * 4950, format!("{r:?}")))
}

fn vc() -> Outcome {
    let mut rng = substream(0xacce, &[9]);
    let mut ok = true;
    let mut sizes = Vec::new();
    for count in [5, 8, 12] {
        let pts: Vec<Vec<f64>> = (0..count).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let r = vc_bruteforce(&pts, SetClass::Halfspaces)?;
        ok &= r.exact && r.shattered_size == 3;
        sizes.push(format!("plane/{count}: {}", r.shattered_size));
    }
    let line: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
    let r = vc_bruteforce(&line, SetClass::AbsThreshold)?;
    ok &= r.exact && r.shattered_size == 1;
    sizes.push(format!("line abs/15: {}", r.shattered_size));
    Ok((ok, sizes.join(", ")))
}

fn reproducibility() -> Outcome {
    let mut cfg = ExperimentConfig::new(DistributionSpec::heavy_radial(12, 1.5), vec![0.5, 0.25, 0.125, 0.0625], 25, 99);
    cfg.experiment.rademacher_draws = 200;
    cfg.experiment.search_budget = 16;
    let render = |threads| -> Result<Vec<u8>, Error> {
        let r = run_sweep_with_threads(&cfg, threads)?;
        let mut out = Vec::new();
        write_sweep_csv(&r, &mut out)?;
        write_summary_csv(&r, &mut out)?;
        Ok(out)
    };
    let one = render(1)?;
    let eight = render(8)?;
    let again = render(1)?;
    Ok((one == eight && one == again, format!("{} bytes, 1 vs 8 threads and rerun", one.len())))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("gaussian-bai-yin", Duration::from_secs(60), gaussian_bai_yin),
        ("regime-one-exponent", Duration::from_secs(300), regime_one_exponent),
        ("holdout-floor-coverage", Duration::from_secs(900), holdout),
        ("small-ball-exact-oracle", Duration::from_secs(120), oracle_battery),
        ("paley-zygmund-sandwich", Duration::from_secs(60), paley_zygmund),
        ("second-moment-identity", Duration::from_secs(60), identity),
        ("rademacher-consistency", Duration::from_secs(120), rademacher),
        ("phi-properties", Duration::from_secs(120), phi),
        ("vc-bruteforce", Duration::from_secs(10), vc),
        ("sweep-reproducibility", Duration::from_secs(120), reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (ok && took <= *limit, d),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !ok as usize;
        println!(
            "{} criterion {:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
