//! Acceptance criteria AC-1 to AC-8. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use levy_parametrix::frozen_density::{frozen_density_grid, levy_ito_reference_density, FrozenDensityRequest, LevyItoSplit};
use levy_parametrix::mc_oracle::{euler_simulate, kde, sample_stable_increment, stream, Bandwidth, SimulationPlan};
use levy_parametrix::parametrix::{
    hbar, kernel_H, parametrix_forward, parametrix_series, rho_m, stability_ratio, ParametrixConfig, StabilityRow,
};
use levy_parametrix::sde_model::{
    Coefficient, CoefficientField, DeltaTestFamily, PerturbationFamily, PerturbationKind, PerturbationSequence, SdeModel,
};
use levy_parametrix::{frozen_density::Lattice, TemperedStableSpec};

type Outcome = Result<(bool, String), String>;

fn acceptance_model() -> SdeModel<f64> {
    SdeModel::new(
        TemperedStableSpec::stable(1.5),
        CoefficientField::new(
            Coefficient::Sinusoidal { a: 0.0, b: 0.2, c: 1.0, d: PI / 2.0 },
            Coefficient::Sinusoidal { a: 1.0, b: 0.3, c: 1.0, d: 0.0 },
        ),
    )
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn bounded(v: &[f64]) -> bool {
    v.iter().cloned().fold(0.0f64, f64::max) <= 2.0 * median(v)
}

fn ks_stat(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.total_cmp(b));
    let n = sample.len() as f64;
    sample.iter().enumerate().fold(0.0f64, |d, (i, x)| {
        let f = cdf(*x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

fn ks_two(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Critical value of the KS statistic at level 0.01.
const KS_01: f64 = 1.628;

fn ac1() -> Outcome {
    let m = SdeModel::constant(TemperedStableSpec::<f64>::stable(1.0));
    let lat = Lattice { start: -10.0, step: 0.05, count: 401 };
    let out = parametrix_series(&m, 0.0, 1.0, 0.0, &lat, &ParametrixConfig::default()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (x, v) in out.density.coords.iter().zip(&out.density.values) {
        let exact = 1.0 / (PI * (1.0 + x * x));
        worst = worst.max(((v - exact) / exact).abs());
    }
    let higher = out.terms[1..].iter().fold(0.0f64, |a, t| a.max(t.sup_norm));
    Ok((worst < 1e-6 && higher == 0.0, format!("max relative error {worst:.2e} on |y-x| <= 10, higher terms {higher:.1e}")))
}

fn ac2() -> Outcome {
    let m = SdeModel::constant(TemperedStableSpec::<f64>::exponential(1.5, 1.0));
    let mut msgs = Vec::new();
    let mut ok = true;
    for span in [0.5, 1.0] {
        let req = FrozenDensityRequest::new(0.0, span, 0.0, Lattice::centered(0.0, 40.0, 8192));
        let direct = frozen_density_grid(&m, &req).map_err(|e| e.to_string())?;
        let split = LevyItoSplit::new(&m, 0.0, span, 0.0).map_err(|e| e.to_string())?;
        let reference = levy_ito_reference_density(&m, &req, &split).map_err(|e| e.to_string())?;
        let d = direct.sup_distance(&reference);
        ok &= d < 1e-4;
        msgs.push(format!("T-t={span}: sup {d:.2e}"));
    }
    Ok((ok, msgs.join(", ")))
}

fn ac3() -> Outcome {
    let m = acceptance_model();
    let lat = Lattice { start: -20.0, step: 0.1, count: 401 };
    let series = parametrix_forward(&m, 0.0, 1.0, 0.0, &lat, &ParametrixConfig::default()).map_err(|e| e.to_string())?;
    let mass = series.density.mass();
    let plan = SimulationPlan::new(m, 0.0, 1.0, 0.0, 200, 1_000_000, 20_240_601);
    let samples = euler_simulate(&plan).map_err(|e| e.to_string())?;
    let window = Lattice { start: -8.0, step: 0.1, count: 161 };
    let est = kde(&samples.samples, &window, Bandwidth::Robust).map_err(|e| e.to_string())?;
    let peak = series.density.peak();
    let (mut worst, mut at) = (0.0f64, 0.0);
    let mut ok = true;
    for (i, y) in window.nodes().iter().enumerate() {
        let j = lat.index_of(*y).ok_or("lattice mismatch")?;
        let diff = (series.density.values[j] - est.values[i]).abs();
        let band = (3.0 * est.se[i]).max(0.01 * peak);
        ok &= diff <= band;
        if diff / band > worst {
            worst = diff / band;
            at = *y;
        }
    }
    ok &= (0.98..=1.02).contains(&mass);
    Ok((
        ok,
        format!(
            "worst |p - kde|/band = {worst:.2} at y = {at:.1}, mass {mass:.4}, {} terms, bandwidth {:.3}, excluded {}",
            series.terms.len(),
            est.bandwidth,
            samples.excluded
        ),
    ))
}

fn stability_rows() -> Result<Vec<StabilityRow<f64>>, String> {
    let base = acceptance_model();
    let family = PerturbationFamily::new(PerturbationKind::Combined, 0.1);
    let tests = DeltaTestFamily::dyadic(-5.0, 5.0, vec![0.0]);
    let seq = PerturbationSequence::build(base, &family, &[2, 4, 8, 16, 32], &tests).map_err(|e| e.to_string())?;
    let lat = Lattice { start: -10.0, step: 0.1, count: 201 };
    stability_ratio(&seq, 0.0, 1.0, 0.5, &lat, &ParametrixConfig::default()).map_err(|e| e.to_string())
}

fn ac4(rows: &[StabilityRow<f64>]) -> Outcome {
    let r: Vec<f64> = rows.iter().map(|r| r.r_density.unwrap_or(f64::NAN)).collect();
    let sup: Vec<f64> = rows.iter().map(|r| r.sup_difference).collect();
    let monotone = sup.windows(2).all(|w| w[1] < w[0]);
    Ok((bounded(&r) && monotone, format!("R_n = {r:.3?}, sup|p-p_n| = {}", sci(&sup))))
}

fn ac5(rows: &[StabilityRow<f64>]) -> Outcome {
    let r: Vec<f64> = rows.iter().map(|r| r.r_frozen.unwrap_or(f64::NAN)).collect();
    Ok((bounded(&r), format!("frozen ratios {r:.3?}")))
}

fn ac6(rows: &[StabilityRow<f64>]) -> Outcome {
    let r: Vec<f64> = rows.iter().map(|r| r.r_kernel.unwrap_or(f64::NAN)).collect();
    Ok((bounded(&r), format!("kernel ratios {r:.3?} on a 21x21 grid")))
}

fn ac7() -> Outcome {
    let m = acceptance_model();
    let cfg = ParametrixConfig::default();
    let probe = cfg.probe_grid();
    let mut fitted = Vec::new();
    for span in [0.25, 1.0 / 2.0, 1.0] {
        let mut c = 0.0f64;
        for x in &probe {
            for y in &probe {
                if x != y {
                    let h = kernel_H(&m, 0.0, span, *x, *y, &cfg).map_err(|e| e.to_string())?;
                    c = c.max(h.abs() / hbar(0.0, span, *x, *y, &m, &cfg));
                }
            }
        }
        fitted.push(c);
    }
    let spread = fitted.iter().cloned().fold(0.0, f64::max) / fitted.iter().cloned().fold(f64::INFINITY, f64::min);

    let deep = ParametrixConfig { k_max: 4, tail_tol: 1e-300, ..ParametrixConfig::default() };
    let lat = Lattice { start: -10.0, step: 0.1, count: 201 };
    let y = 0.5;
    let series = parametrix_series(&m, 0.0, 1.0, y, &lat, &deep).map_err(|e| e.to_string())?;
    let weighted: Vec<f64> = series
        .terms
        .iter()
        .map(|t| {
            t.values
                .iter()
                .zip(&series.density.coords)
                .fold(0.0f64, |a, (v, x)| a.max(v.abs() / rho_m(0.0, 1.0, *x, y, t.order, &deep, &m)))
        })
        .collect();
    let c = weighted[0].max(weighted[1]).max(1.0);
    let chain = weighted.iter().enumerate().skip(2).all(|(k, w)| *w <= c.powi(k as i32));
    Ok((
        spread <= 2.0 && chain,
        format!("C_H by horizon {fitted:.3?} (spread {spread:.2}); |term_m|/rho_m = {}, C = {c:.3}", sci(&weighted)),
    ))
}

fn ac8() -> Outcome {
    let mut rng = stream(2024, 0, 0);
    let n = 100_000;
    let mut cauchy: Vec<f64> = (0..n).map(|_| sample_stable_increment(1.0f64, 1.0, 1.0, &mut rng)).collect();
    let d1 = ks_stat(&mut cauchy, |x| 0.5 + x.atan() / PI);
    let mut a: Vec<f64> = (0..n).map(|_| sample_stable_increment(1.5f64, 1.0, 0.3, &mut rng)).collect();
    let mut b: Vec<f64> = (0..n).map(|_| 0.3f64.powf(1.0 / 1.5) * sample_stable_increment(1.5f64, 1.0, 1.0, &mut rng)).collect();
    let d2 = ks_two(&mut a, &mut b);
    let draw = |seed| {
        let mut r = stream(seed, 3, 0);
        (0..1000).map(|_| sample_stable_increment(1.3f64, 1.0, 1.0, &mut r).to_bits()).collect::<Vec<u64>>()
    };
    let repro = draw(77) == draw(77);
    let (c1, c2) = (KS_01 / (n as f64).sqrt(), KS_01 * (2.0 / n as f64).sqrt());
    Ok((
        d1 < c1 && d2 < c2 && repro,
        format!("KS Cauchy {d1:.4} (crit {c1:.4}), scaling {d2:.4} (crit {c2:.4}), reproducible {repro}"),
    ))
}

fn report(name: &str, outcome: Outcome, start: Instant, failures: &mut Vec<String>) {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((true, msg)) => println!("{name} PASS ({secs:.1}s): {msg}"),
        Ok((false, msg)) => {
            println!("{name} FAIL ({secs:.1}s): {msg}");
            failures.push(name.to_string());
        }
        Err(e) => {
            println!("{name} FAIL ({secs:.1}s): error: {e}");
            failures.push(name.to_string());
        }
    }
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC-")).collect();
    let wanted = |name: &str| filter.is_empty() || filter.iter().any(|f| f == name);
    let mut failures = Vec::new();
    let singles: [(&str, fn() -> Outcome); 5] = [("AC-1", ac1), ("AC-2", ac2), ("AC-3", ac3), ("AC-7", ac7), ("AC-8", ac8)];
    for (name, f) in singles.iter().take(3) {
        if wanted(name) {
            let t = Instant::now();
            report(name, f(), t, &mut failures);
        }
    }
    if wanted("AC-4") || wanted("AC-5") || wanted("AC-6") {
        let t = Instant::now();
        match stability_rows() {
            Ok(rows) => {
                for n in &rows {
                    println!("  n = {:2}: Delta_n = {:.4e}", n.n, n.delta_n);
                }
                let checks: [(&str, fn(&[StabilityRow<f64>]) -> Outcome); 3] = [("AC-4", ac4), ("AC-5", ac5), ("AC-6", ac6)];
                for (name, f) in checks {
                    if wanted(name) {
                        report(name, f(&rows), t, &mut failures);
                    }
                }
            }
            Err(e) => {
                for name in ["AC-4", "AC-5", "AC-6"] {
                    if wanted(name) {
                        report(name, Err(e.clone()), t, &mut failures);
                    }
                }
            }
        }
    }
    for (name, f) in singles.iter().skip(3) {
        if wanted(name) {
            let t = Instant::now();
            report(name, f(), t, &mut failures);
        }
    }
    if failures.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {}", failures.join(", "));
        std::process::exit(1);
    }
}
