//! One function per subcommand, each returning its artifacts.

use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;

use quasidyn::arithmetic::verify_condition;
use quasidyn::discrepancy::{
    choose_m, corollary_shape, dks_bound, etk_bound, exact_discrepancy, kronecker_orbit_profile, ExpSumMode,
    IndexRange,
};
use quasidyn::dynamics::{bound_eval, moment_curve, CurveOptions, SpectralMoments};
use quasidyn::green::{good_box_scan, green_direct, GoodBoxParams};
use quasidyn::spectral::{deviation_scan, lyapunov_estimate};

use crate::config::*;
use crate::output::{fmt_f64, fmt_opt, Artifact, Artifacts, Table};
use crate::CliError;

pub fn execute(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    match cfg.command {
        Command::Frequency => frequency(&parse_params(&cfg.params)?),
        Command::Discrepancy => discrepancy(&parse_params(&cfg.params)?),
        Command::Lyapunov => lyapunov(&parse_params(&cfg.params)?, cfg.seed),
        Command::Ldt => ldt(&parse_params(&cfg.params)?, cfg.seed),
        Command::Greenbox => greenbox(&parse_params(&cfg.params)?, cfg.seed),
        Command::Moments => moments(&parse_params(&cfg.params)?),
        Command::VerifyBounds => verify_bounds(&parse_params(&cfg.params)?, cfg.seed),
    }
}

fn nonempty<T>(v: &[T], field: &str) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::Config(format!("params: at `{field}`: list must not be empty")));
    }
    Ok(())
}

fn frequency(p: &FrequencyParams) -> Result<Artifacts, CliError> {
    let profile = p.frequency.resolve()?;
    let mut t = Table::new(&["k", "a_k", "p_k", "q_k", "norm_q_alpha"]);
    for (i, (pk, qk)) in profile.convergents().iter().enumerate() {
        let k = i + 1;
        t.push(vec![
            k.to_string(),
            profile.cf_coeffs()[i].to_string(),
            pk.to_string(),
            qk.to_string(),
            fmt_opt(profile.convergent_residual(k).ok().map(f64::abs)),
        ]);
    }
    let cond = p.condition.or(profile.condition);
    let margin = cond.map(|c| verify_condition(&profile, &c, p.n_max as u128)).transpose()?;
    let summary = json!({
        "alpha": profile.alpha(),
        "depth": profile.depth(),
        "tail": profile.tail(),
        "beta_estimate": profile.beta_estimate,
        "condition": cond,
        "margin": margin,
        "condition_holds": margin.map(|m| m.holds()),
    });
    Ok(Artifacts {
        files: vec![("frequency.csv".into(), Artifact::Csv(t)), ("frequency.json".into(), Artifact::Json(summary.clone()))],
        summary,
        resolved: json!({ "alpha": profile.alpha() }),
    })
}

fn discrepancy(p: &DiscrepancyParams) -> Result<Artifacts, CliError> {
    nonempty(&p.n_values, "n_values")?;
    nonempty(&p.m_values, "m_values")?;
    let profile = p.frequency.resolve()?;
    let cond = profile.condition;
    let rows: Vec<Vec<Vec<String>>> = p
        .n_values
        .par_iter()
        .map(|&n| -> Result<_, CliError> {
            let ps = kronecker_orbit_profile(p.theta, &profile, n, IndexRange::Forward)?;
            let exact = exact_discrepancy(&ps)?;
            let dks = match cond {
                Some(c) => {
                    let m = choose_m(&c, n as f64);
                    Some((m.m, dks_bound(&c, n as f64, m.m, 1, p.dks_constant)?, corollary_shape(&c, n as f64, 1)))
                }
                None => None,
            };
            p.m_values
                .iter()
                .map(|&m| {
                    let etk = etk_bound(&[profile.alpha()], n, m, ExpSumMode::Exact)?;
                    Ok(vec![
                        n.to_string(),
                        m.to_string(),
                        fmt_f64(exact),
                        fmt_f64(etk),
                        fmt_opt(dks.map(|d| d.0)),
                        fmt_opt(dks.map(|d| d.1)),
                        fmt_opt(dks.map(|d| p.dks_constant * d.2)),
                    ])
                })
                .collect()
        })
        .collect::<Result<_, CliError>>()?;
    let mut t = Table::new(&["n", "m", "exact", "etk_bound", "dks_m", "dks_bound", "corollary_bound"]);
    rows.into_iter().flatten().for_each(|r| t.push(r));
    Ok(Artifacts {
        files: vec![("discrepancy.csv".into(), Artifact::Csv(t))],
        summary: json!({ "rows": p.n_values.len() * p.m_values.len() }),
        resolved: json!({ "alpha": profile.alpha(), "condition": cond }),
    })
}

fn lyapunov(p: &LyapunovParams, seed: u64) -> Result<Artifacts, CliError> {
    nonempty(&p.energies, "energies")?;
    nonempty(&p.n_values, "n_values")?;
    let (spec, profile) = p.operator.build()?;
    let grid = p.theta_grid.grid(seed);
    let mut t = Table::new(&["energy", "eta", "n", "mean_ln", "sup_ln", "theta_samples", "grid"]);
    for &e in &p.energies {
        for &n in &p.n_values {
            let est = lyapunov_estimate(Complex64::new(e, p.eta), &spec, n, &grid)?;
            t.push(vec![
                fmt_f64(e),
                fmt_f64(p.eta),
                n.to_string(),
                fmt_f64(est.mean_ln),
                fmt_f64(est.sup_ln),
                est.theta_samples.to_string(),
                est.grid_kind.to_string(),
            ]);
        }
    }
    Ok(Artifacts {
        files: vec![("lyapunov.csv".into(), Artifact::Csv(t))],
        summary: json!({}),
        resolved: json!({ "alpha": profile.alpha(), "theta_grid": grid }),
    })
}

fn ldt(p: &LdtParams, seed: u64) -> Result<Artifacts, CliError> {
    nonempty(&p.scales, "scales")?;
    let (spec, profile) = p.operator.build()?;
    let grid = p.theta_grid.grid(seed);
    let scan = deviation_scan(Complex64::new(p.energy, p.eta), &spec, &p.scales, &grid, p.kappa)?;
    let mut t = Table::new(&["n", "n_ref", "l_ref", "mean_ln", "measured_fraction", "reference_decay"]);
    for r in &scan.reports {
        t.push(vec![
            r.n.to_string(),
            r.n_ref.to_string(),
            fmt_f64(r.l_ref),
            fmt_f64(r.mean_ln),
            fmt_f64(r.measured_fraction),
            fmt_opt(r.reference_decay),
        ]);
    }
    let summary = json!({ "fit": scan.fit, "applicable": scan.reports.iter().all(|r| r.applicable) });
    Ok(Artifacts {
        files: vec![("ldt.csv".into(), Artifact::Csv(t)), ("ldt_fit.json".into(), Artifact::Json(summary.clone()))],
        summary,
        resolved: json!({ "alpha": profile.alpha(), "theta_grid": grid }),
    })
}

fn greenbox(p: &GreenboxParams, seed: u64) -> Result<Artifacts, CliError> {
    let (spec, profile) = p.operator.build()?;
    let z_grid = p.z_grid(spec.spectrum_radius());
    let params = GoodBoxParams {
        n: p.n,
        psi: p.psi,
        c2: p.c2,
        z_grid: z_grid.clone(),
        search: p.search,
        decay: p.decay,
        log_power_floor: p.log_power_floor,
    };
    let thetas = p.thetas.grid(seed).points();
    let reports = thetas
        .iter()
        .map(|&th| good_box_scan(&spec.with_theta(th), &params))
        .collect::<quasidyn::Result<Vec<_>>>()?;
    let mut t = Table::new(&["theta", "found", "start", "end", "window", "length", "worst_margin", "candidates"]);
    for r in &reports {
        let (start, end, window) = match r.found {
            Some(b) => (b.start.to_string(), b.end.to_string(), format!("{:?}", b.window).to_lowercase()),
            None => (String::new(), String::new(), String::new()),
        };
        t.push(vec![
            fmt_f64(r.theta),
            r.found.is_some().to_string(),
            start,
            end,
            window,
            r.interval_length.to_string(),
            fmt_f64(r.worst_margin),
            r.candidates_tested.to_string(),
        ]);
    }
    let found = reports.iter().filter(|r| r.found.is_some()).count();
    let mut files = vec![
        ("greenbox.csv".into(), Artifact::Csv(t)),
        ("greenbox.json".into(), Artifact::Json(serde_json::to_value(&reports).expect("reports serialize"))),
    ];
    if p.dump_green {
        if let Some((r, b)) = reports.iter().find_map(|r| r.found.map(|b| (r, b))) {
            let boxed = spec.with_theta(r.theta).with_window((b.start, b.end))?;
            let g = green_direct(&boxed, z_grid[0])?;
            files.push(("green_heat.csv".into(), Artifact::Text(g.heat_csv())));
        }
    }
    let summary = json!({ "theta_samples": reports.len(), "found": found, "found_fraction": found as f64 / reports.len().max(1) as f64 });
    Ok(Artifacts {
        files,
        summary,
        resolved: json!({
            "alpha": profile.alpha(),
            "spectrum_radius": spec.spectrum_radius(),
            "psi_n": p.psi.eval(p.n as f64),
            "z_grid": z_grid,
        }),
    })
}

fn moments(p: &MomentsParams) -> Result<Artifacts, CliError> {
    nonempty(&p.t_grid, "t_grid")?;
    let (spec, profile) = p.operator.build_windowed()?;
    let opts = CurveOptions {
        policy: p.policy,
        parseval: p.parseval.then_some(p.energy_grid),
        bounds: p.bounds.clone(),
        fit_scale: p.fit_scale,
    };
    let curve = moment_curve(&spec, &p.phi, p.p, &p.t_grid, &opts)?;
    let mut t = Table::new(&["t", "p", "value_spectral", "value_parseval", "bound", "theorem_tag"]);
    for (i, &tt) in curve.t_grid.iter().enumerate() {
        let base = [fmt_f64(tt), fmt_f64(p.p), fmt_f64(curve.values_spectral[i]), fmt_opt(curve.values_parseval.as_ref().map(|v| v[i]))];
        if curve.bound_values.is_empty() {
            t.push(base.iter().cloned().chain([String::new(), String::new()]).collect());
        }
        for b in &curve.bound_values {
            t.push(base.iter().cloned().chain([fmt_f64(b.values[i]), b.theorem.tag().to_string()]).collect());
        }
    }
    let calibration: Vec<_> =
        curve.bound_values.iter().map(|b| json!({ "theorem": b.theorem, "constant": curve.calibration(b.theorem) })).collect();
    let summary = json!({ "fit": curve.fit, "calibration": calibration });
    Ok(Artifacts {
        files: vec![
            ("moments.csv".into(), Artifact::Csv(t)),
            ("moments.json".into(), Artifact::Json(serde_json::to_value(&curve).expect("curve serializes"))),
        ],
        summary,
        resolved: json!({ "alpha": profile.alpha(), "spectrum_radius": spec.spectrum_radius() }),
    })
}

fn verify_bounds(p: &VerifyBoundsParams, seed: u64) -> Result<Artifacts, CliError> {
    nonempty(&p.t_grid, "t_grid")?;
    let (spec, profile) = p.operator.build_windowed()?;
    let mut bound = p.bound.clone();
    bound.p = p.p;
    let bounds = p.t_grid.iter().map(|&t| bound_eval(&bound, t)).collect::<quasidyn::Result<Vec<_>>>()?;
    let thetas = p.thetas.grid(seed).points();
    let per_theta = thetas
        .par_iter()
        .map(|&th| SpectralMoments::new(&spec.with_theta(th), &p.phi, p.policy)?.moments(p.p, &p.t_grid))
        .collect::<quasidyn::Result<Vec<_>>>()?;
    let sup: Vec<f64> =
        (0..p.t_grid.len()).map(|i| per_theta.iter().map(|m| m[i].value).fold(0.0, f64::max)).collect();
    let mut t = Table::new(&["t", "moment", "bound", "ratio", "theorem_tag"]);
    let mut calibration = 0.0f64;
    for i in 0..p.t_grid.len() {
        let ratio = sup[i] / bounds[i];
        calibration = calibration.max(ratio);
        t.push(vec![fmt_f64(p.t_grid[i]), fmt_f64(sup[i]), fmt_f64(bounds[i]), fmt_f64(ratio), bound.theorem.tag().to_string()]);
    }
    let summary = json!({
        "theorem": bound.theorem,
        "theta_samples": thetas.len(),
        "calibration_constant": calibration,
        "calibration_limit": p.calibration_limit,
        "within_calibration": calibration <= p.calibration_limit,
    });
    Ok(Artifacts {
        files: vec![("verify_bounds.csv".into(), Artifact::Csv(t))],
        summary,
        resolved: json!({ "alpha": profile.alpha(), "spectrum_radius": spec.spectrum_radius(), "thetas": thetas }),
    })
}
