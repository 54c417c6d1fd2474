use std::collections::BTreeMap;

use levy_parametrix::frozen_density::{frozen_density_at, frozen_drift_shift, pbar};
use levy_parametrix::mc_oracle::{euler_simulate, kde, write_samples};
use levy_parametrix::parametrix::{hbar, kernel_H, parametrix_forward, parametrix_series, rho_m, stability_ratio};
use levy_parametrix::sde_model::{
    holder_constant, validate_assumptions, DeltaTestFamily, PerturbationSequence, ValidationLattice,
};
use levy_parametrix::{Error, ParametrixConfigF64, SdeModelF64, SeriesResultF64, Tempering};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{fmt_num, read_density_csv, Check, Pending, RunManifest, Table, TOOL, VERSION};
use crate::config::{ExperimentConfig, Fixed, Loaded, PerturbationSection};
use crate::{CliError, Command, EXIT_DELTA_MISMATCH};

/// Fewest paths for which a kernel estimate is formed.
const MIN_KDE_PATHS: usize = 1000;

struct Report {
    checks: Vec<Check>,
    constants: BTreeMap<String, serde_json::Value>,
    warnings: Vec<String>,
    files: Pending,
}

impl Report {
    fn new() -> Self {
        Self { checks: Vec::new(), constants: BTreeMap::new(), warnings: Vec::new(), files: Pending::default() }
    }

    fn constant(&mut self, key: &str, v: impl Serialize) {
        self.constants.insert(key.to_string(), serde_json::to_value(v).expect("serializable constant"));
    }

    fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, pass, detail));
    }

    fn csv(&mut self, name: &str, table: &Table, command: Command, hash: &str) {
        self.files.add(name, table.to_csv(command.name(), hash));
    }
}

/// Runs `command` and returns the manifest together with the files still to
/// be written. Nothing touches the disk here.
pub fn execute(command: Command, loaded: &Loaded) -> Result<(RunManifest, Pending), CliError> {
    let mut r = Report::new();
    match command {
        Command::Validate => validate(loaded, &mut r)?,
        Command::Density => density(loaded, &mut r)?,
        Command::Oracle => oracle(loaded, &mut r)?,
        Command::Stability => stability(loaded, &mut r)?,
        Command::Bounds => bounds(loaded, &mut r)?,
    }
    let manifest = RunManifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        command: command.name().into(),
        config_hash: loaded.hash.clone(),
        overrides: loaded.overrides.clone(),
        artifacts: r.files.names(),
        checks: r.checks,
        constants: r.constants,
        warnings: r.warnings,
    };
    Ok((manifest, r.files))
}

fn validation_lattice(cfg: &ExperimentConfig) -> ValidationLattice<f64> {
    let lat = &cfg.horizon.lattice;
    ValidationLattice::uniform(cfg.horizon.t, cfg.horizon.big_t, 5, lat.start, lat.last(), lat.count.min(257))
}

fn validate(l: &Loaded, r: &mut Report) -> Result<(), CliError> {
    let cfg = &l.config;
    let model = cfg.model();
    model.noise.validate()?;
    r.check("noise", true, format!("alpha = {}, tempering {:?}", model.alpha(), model.noise.tempering));
    r.warnings.extend(cfg.parametrix.validate(&model)?);
    r.check("parametrix_config", true, format!("k_max = {}, tail_tol = {}", cfg.parametrix.k_max, fmt_num(cfg.parametrix.tail_tol)));
    let lattice = validation_lattice(cfg);
    let rep = validate_assumptions(&model, &lattice)?;
    r.check(
        "assumptions",
        true,
        format!("sigma^2 in [{}, {}], sup|b| = {}", fmt_num(rep.sigma_sq_min), fmt_num(rep.sigma_sq_max), fmt_num(rep.drift_bound)),
    );
    r.constant("sigma_sq_min", rep.sigma_sq_min);
    r.constant("sigma_sq_max", rep.sigma_sq_max);
    r.constant("sigma_holder_ratio", rep.holder_ratio);
    r.constant("drift_bound", rep.drift_bound);
    r.constant("decay_constant", rep.decay_constant);
    r.warnings.extend(rep.warnings);
    if let Some(p) = &cfg.coefficients.perturbation {
        for &n in &p.n {
            let other = p.family.apply(&model, n);
            let rep = validate_assumptions(&other, &lattice).map_err(|e| {
                let mut err = CliError::from(e);
                err.message = format!("perturbed model n = {n}: {}", err.message);
                err
            })?;
            r.warnings.extend(rep.warnings.into_iter().map(|w| format!("n = {n}: {w}")));
        }
        r.check("perturbed_assumptions", true, format!("{} perturbed models", p.n.len()));
        let tests = delta_tests(cfg, p);
        r.constant("measure_holder_constant", holder_constant(&model, &tests)?);
    }
    if cfg.mc.is_some() {
        cfg.plan()?.validate()?;
        r.check("simulation_plan", true, "");
    }
    Ok(())
}

fn delta_tests(cfg: &ExperimentConfig, p: &PerturbationSection) -> DeltaTestFamily<f64> {
    DeltaTestFamily::dyadic(p.test_range[0], p.test_range[1], vec![cfg.horizon.t])
}

fn series(model: &SdeModelF64, cfg: &ExperimentConfig, pc: &ParametrixConfigF64) -> Result<SeriesResultF64, Error> {
    let h = &cfg.horizon;
    match cfg.fixed() {
        Fixed::Initial(x) => parametrix_forward(model, h.t, h.big_t, x, &h.lattice, pc),
        Fixed::Terminal(y) => parametrix_series(model, h.t, h.big_t, y, &h.lattice, pc),
    }
}

/// `(x, y)` of lattice point `i` given the fixed endpoint.
fn pair(fixed: Fixed, v: f64) -> (f64, f64) {
    match fixed {
        Fixed::Initial(x) => (x, v),
        Fixed::Terminal(y) => (v, y),
    }
}

fn coord_name(fixed: Fixed) -> &'static str {
    match fixed {
        Fixed::Initial(_) => "y",
        Fixed::Terminal(_) => "x",
    }
}

fn density(l: &Loaded, r: &mut Report) -> Result<(), CliError> {
    let cfg = &l.config;
    let model = cfg.model();
    let res = series(&model, cfg, &cfg.parametrix)?;
    let fixed = cfg.fixed();
    let mut table = Table::new(&[coord_name(fixed), "value", "error"]);
    for i in 0..res.density.coords.len() {
        table.push(vec![Some(res.density.coords[i]), Some(res.density.values[i]), Some(res.density.errors[i])]);
    }
    r.csv("density.csv", &table, Command::Density, &l.hash);
    r.csv("terms.csv", &terms_table(&res), Command::Density, &l.hash);
    let mass = res.density.mass();
    r.check("series", true, format!("{} terms, stop {:?}, lattice mass {mass:.6}", res.terms.len(), res.stop));
    r.constant("mass", mass);
    r.constant("peak", res.density.peak());
    r.constant("terms", res.terms.len());
    r.constant("clipped", res.density.clipped);
    r.constant("stop", res.stop);
    r.warnings.extend(res.warnings);
    if res.stop == levy_parametrix::parametrix::StopReason::MaxOrder {
        r.warnings.push(format!("series stopped at k_max = {} before reaching tail_tol", cfg.parametrix.k_max));
    }
    Ok(())
}

fn terms_table(res: &SeriesResultF64) -> Table {
    let mut table = Table::new(&["k", "sup_norm", "weighted_sup_norm", "ratio"]);
    for (k, term) in res.terms.iter().enumerate() {
        let ratio = k.checked_sub(1).map(|j| res.ratios[j]);
        table.push(vec![Some(k as f64), Some(term.sup_norm), Some(term.weighted_sup_norm), ratio]);
    }
    table
}

#[derive(Serialize)]
struct Sidecar {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    count: usize,
    excluded: usize,
    t0: f64,
    big_t: f64,
    x0: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    truncation: Option<f64>,
}

fn oracle(l: &Loaded, r: &mut Report) -> Result<(), CliError> {
    let cfg = &l.config;
    let plan = cfg.plan()?;
    let mc = cfg.mc.as_ref().expect("plan checked the section");
    let out = euler_simulate(&plan)?;
    let mut bin = Vec::new();
    write_samples(&mut bin, &out.samples)?;
    r.files.add("samples.bin", bin);
    let sidecar = Sidecar {
        tool: TOOL,
        version: VERSION,
        config_hash: l.hash.clone(),
        count: out.samples.len(),
        excluded: out.excluded,
        t0: plan.t0,
        big_t: plan.big_t,
        x0: plan.x0,
        n_steps: plan.n_steps,
        n_paths: plan.n_paths,
        seed: plan.seed,
        batch_size: plan.batch_size,
        truncation: plan.truncation,
    };
    r.files.add("samples.toml", toml::to_string(&sidecar).expect("sidecar serializes"));
    r.constant("excluded_paths", out.excluded);
    if out.samples.len() < MIN_KDE_PATHS {
        r.warnings.push(format!(
            "only {} paths; no kernel estimate below {MIN_KDE_PATHS}, comparison passes trivially",
            out.samples.len()
        ));
        r.check("oracle_band", true, "skipped: too few paths");
        return Ok(());
    }
    let lattice = cfg.horizon.lattice;
    let est = kde(&out.samples, &lattice, mc.bandwidth)?;
    let mut table = Table::new(&["y", "value", "se"]);
    for i in 0..est.coords.len() {
        table.push(vec![Some(est.coords[i]), Some(est.values[i]), Some(est.se[i])]);
    }
    r.csv("kde.csv", &table, Command::Oracle, &l.hash);
    r.constant("bandwidth", est.bandwidth);
    r.constant("kde_mass", est.mass());
    r.warnings.extend(est.warnings.iter().cloned());
    let Some(compare) = &mc.compare else {
        return Ok(());
    };
    let reference = read_density_csv(&l.resolve(compare))?;
    let peak = reference.iter().fold(0.0f64, |a, (_, v)| a.max(*v));
    let mut on_lattice = vec![None; lattice.count];
    for (x, v) in &reference {
        if let Some(i) = lattice.index_of(*x) {
            on_lattice[i] = Some(*v);
        }
    }
    let (lo, hi) = mc.window.map(|[a, b]| (a, b)).unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut cmp = Table::new(&["y", "parametrix", "kde", "se", "band", "within"]);
    let (mut worst, mut at, mut all) = (0.0f64, f64::NAN, true);
    for (i, y) in est.coords.iter().enumerate() {
        if *y < lo - 1e-9 || *y > hi + 1e-9 {
            continue;
        }
        let p = on_lattice[i]
            .ok_or_else(|| CliError::config(format!("{} has no value at y = {y}", compare.display())))?;
        let band = (mc.se_factor * est.se[i]).max(mc.peak_fraction * peak);
        let diff = (p - est.values[i]).abs();
        let within = diff <= band;
        all &= within;
        if diff / band > worst {
            worst = diff / band;
            at = *y;
        }
        cmp.push(vec![Some(*y), Some(p), Some(est.values[i]), Some(est.se[i]), Some(band), Some(within as u8 as f64)]);
    }
    if cmp.rows.is_empty() {
        return Err(CliError::config("the comparison window contains no lattice points"));
    }
    r.csv("comparison.csv", &cmp, Command::Oracle, &l.hash);
    r.constant("worst_band_ratio", worst);
    r.check("oracle_band", all, format!("worst |p - kde| / band = {worst:.3} at y = {at}"));
    Ok(())
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

/// `max ≤ 2·median`, the boundedness verdict for fitted constants.
fn bounded(v: &[f64]) -> bool {
    v.iter().cloned().fold(0.0f64, f64::max) <= 2.0 * median(v)
}

fn perturbation(cfg: &ExperimentConfig) -> Result<&PerturbationSection, CliError> {
    cfg.coefficients
        .perturbation
        .as_ref()
        .ok_or_else(|| CliError::config("the [coefficients.perturbation] section is required"))
}

fn stability(l: &Loaded, r: &mut Report) -> Result<(), CliError> {
    let cfg = &l.config;
    let p = perturbation(cfg)?;
    let Fixed::Terminal(y) = cfg.fixed() else {
        return Err(CliError::config("stability runs over initial points: set horizon.y instead of horizon.x"));
    };
    let seq = PerturbationSequence::build(cfg.model(), &p.family, &p.n, &delta_tests(cfg, p))?;
    r.warnings.extend(seq.warnings.iter().cloned());
    let h = &cfg.horizon;
    let rows = stability_ratio(&seq, h.t, h.big_t, y, &h.lattice, &cfg.parametrix).map_err(|e| match e {
        Error::Inconsistency(m) => CliError::new(EXIT_DELTA_MISMATCH, m),
        e => e.into(),
    })?;
    let mut table = Table::new(&["n", "Delta_n", "R_frozen", "R_kernel", "R_density", "sup_difference"]);
    for row in &rows {
        table.push(vec![
            Some(row.n as f64),
            Some(row.delta_n),
            row.r_frozen,
            row.r_kernel,
            row.r_density,
            Some(row.sup_difference),
        ]);
    }
    r.csv("stability.csv", &table, Command::Stability, &l.hash);
    r.constant("R_n", &rows);
    let ratios: Vec<f64> = rows.iter().filter_map(|row| row.r_density).collect();
    if ratios.is_empty() {
        r.check("stability_bounded", true, "exact match at every n");
    } else {
        let verdict = bounded(&ratios);
        r.check(
            "stability_bounded",
            verdict,
            format!("R_density max {} vs median {}", fmt_num(ratios.iter().cloned().fold(0.0, f64::max)), fmt_num(median(&ratios))),
        );
    }
    Ok(())
}

fn spread(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Frozen density and envelope on the horizon lattice for span `s`.
fn frozen_on_lattice(model: &SdeModelF64, cfg: &ExperimentConfig, s: f64) -> Result<Vec<(f64, f64)>, Error> {
    let (t, fixed) = (cfg.horizon.t, cfg.fixed());
    cfg.horizon
        .lattice
        .nodes()
        .into_iter()
        .map(|v| {
            let (x, y) = pair(fixed, v);
            Ok((frozen_density_at(model, t, t + s, x, y)?, pbar(t, t + s, x, y, &model.noise)))
        })
        .collect()
}

fn bounds(l: &Loaded, r: &mut Report) -> Result<(), CliError> {
    let cfg = &l.config;
    let model = cfg.model();
    let h = &cfg.horizon;
    let (t, span) = (h.t, h.big_t - h.t);
    let pure_stable = model.noise.tempering == Tempering::None;

    // Symmetry of the frozen density about its displaced centre.
    let y0 = match cfg.fixed() {
        Fixed::Initial(x) | Fixed::Terminal(x) => x,
    };
    let centre = y0 - frozen_drift_shift(&model, t, h.big_t, y0)?;
    let scale = span.powf(1.0 / model.alpha());
    let mut asym = 0.0f64;
    for d in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let a = frozen_density_at(&model, t, h.big_t, centre - d * scale, y0)?;
        let b = frozen_density_at(&model, t, h.big_t, centre + d * scale, y0)?;
        asym = asym.max((a - b).abs());
    }
    r.check("frozen_symmetry", asym <= 1e-10, format!("max asymmetry {}", fmt_num(asym)));

    if pure_stable && model.has_constant_coefficients() && model.drift(t, 0.0) == 0.0 {
        let f = |u: f64| frozen_density_at(&model, 0.0, 1.0, 0.0, u);
        let mut worst = 0.0f64;
        for s in [0.5f64, 2.0] {
            let k = s.powf(-1.0 / model.alpha());
            for z in [0.0, 0.3, 1.0, 2.5, 6.0] {
                let direct = frozen_density_at(&model, 0.0, s, 0.0, z)?;
                let scaled = k * f(z * k)?;
                worst = worst.max(((direct - scaled) / scaled).abs());
            }
        }
        r.check("frozen_scaling", worst <= 1e-8, format!("max relative deviation {}", fmt_num(worst)));
    } else {
        r.warnings.push("frozen_scaling skipped: needs pure stable noise with constant coefficients and no drift".into());
    }

    let horizons = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut c_pbar = Vec::new();
    for s in horizons {
        let vals = frozen_on_lattice(&model, cfg, s)?;
        c_pbar.push(vals.iter().fold(0.0f64, |a, (p, e)| a.max(p / e)));
    }
    r.constant("C_pbar", json!({ "horizons": horizons, "values": c_pbar }));
    if pure_stable {
        let s = spread(&c_pbar);
        r.check("frozen_envelope", s <= 2.0, format!("C_pbar spread {s:.3} over horizons 0.25..4"));
    } else {
        r.warnings.push("frozen_envelope constants reported only: tempering makes them horizon dependent".into());
    }

    let pc = &cfg.parametrix;
    let probe = pc.probe_grid();
    let kernel_spans: Vec<f64> = [0.25, 0.5, 1.0].iter().map(|f| f * span).collect();
    let mut c_h = Vec::new();
    for &s in &kernel_spans {
        let mut c = 0.0f64;
        for x in &probe {
            for y in &probe {
                if x != y {
                    let k = kernel_H(&model, t, t + s, *x, *y, pc)?;
                    c = c.max(k.abs() / hbar(t, t + s, *x, *y, &model, pc));
                }
            }
        }
        c_h.push(c);
    }
    r.constant("C_H", json!({ "horizons": kernel_spans, "values": c_h }));
    if c_h.iter().all(|c| *c == 0.0) {
        r.check("kernel_bound", true, "kernel vanishes");
    } else {
        let s = spread(&c_h);
        r.check("kernel_bound", s <= 2.0, format!("C_H spread {s:.3}"));
    }

    let deep = ParametrixConfigF64 { k_max: 4, tail_tol: 1e-300, ..pc.clone() };
    let res = series(&model, cfg, &deep)?;
    let fixed = cfg.fixed();
    let weighted: Vec<f64> = res
        .terms
        .iter()
        .map(|term| {
            term.values.iter().zip(&res.density.coords).fold(0.0f64, |a, (v, c)| {
                let (x, y) = pair(fixed, *c);
                a.max(v.abs() / rho_m(t, h.big_t, x, y, term.order, &deep, &model))
            })
        })
        .collect();
    let c_chain = weighted.iter().take(2).cloned().fold(1.0f64, f64::max);
    let chain = weighted.iter().enumerate().skip(2).all(|(k, w)| *w <= c_chain.powi(k as i32));
    r.constant("chain", json!({ "C": c_chain, "weighted": weighted }));
    r.check("chain", chain, format!("C = {c_chain:.4}, orders 0..{}", weighted.len() - 1));

    let base = series(&model, cfg, pc)?;
    let longer = series(&model, cfg, &ParametrixConfigF64 { k_max: pc.k_max + 1, ..pc.clone() })?;
    let diff = base.density.sup_distance(&longer.density);
    r.check("series_consistency", diff < pc.tail_tol, format!("sup change with k_max + 1: {}", fmt_num(diff)));

    if let Some(p) = &cfg.coefficients.perturbation {
        let seq = PerturbationSequence::build(model.clone(), &p.family, &p.n, &delta_tests(cfg, p))?;
        let base = frozen_on_lattice(&model, cfg, span)?;
        let mut fitted = Vec::new();
        let mut mismatch = None;
        for ((n, other), est) in seq.indices.iter().zip(&seq.perturbed).zip(&seq.measured_delta) {
            let vals = frozen_on_lattice(other, cfg, span)?;
            let (mut sup, mut ratio) = (0.0f64, 0.0f64);
            for ((p0, e), (p1, _)) in base.iter().zip(&vals) {
                sup = sup.max((p0 - p1).abs());
                ratio = ratio.max((p0 - p1).abs() / e);
            }
            if est.delta == 0.0 {
                if sup > 1e-10 {
                    mismatch = Some(*n);
                }
            } else {
                fitted.push(ratio / est.delta);
            }
        }
        r.constant("C_frozen", &fitted);
        let pass = mismatch.is_none() && (fitted.is_empty() || bounded(&fitted));
        let detail = match mismatch {
            Some(n) => format!("Delta_n = 0 at n = {n} but the frozen densities differ"),
            None => format!("fitted constants {}", fitted.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(", ")),
        };
        r.check("frozen_perturbation", pass, detail);
    }
    Ok(())
}
