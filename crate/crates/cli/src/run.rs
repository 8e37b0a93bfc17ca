//! Executes a [`RunConfig`] and assembles its report.

use std::path::Path;

use betadyn::beta_map::{
    expand, mean_expanding_check, orbit_of_one, orbit_of_one_with, rational_of, OrbitPrecision,
};
use betadyn::iid_density::{bounds_from, build_phi};
use betadyn::quenched::{
    c_periodic, c_perturbative_window, c_series_window, epsilon0, equivariance_residual,
    fiber_average, functional_residual, periodic_window, phi_fiber, CMethod, CWindow, NoiseModel,
    SamplePoint,
};
use betadyn::response::{critical_p, fd_check_on, ResponseLayers};
use betadyn::verify::{simulate, stationary_vector, ulam_matrix, SimulationSettings, Source};
use betadyn::{BetaSystem, StepFunction};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, RunConfig};
use crate::exit::CliError;

/// A report and the step functions that go with it.
#[derive(Debug, Clone)]
pub struct Output {
    pub report: Value,
    /// `(name, function)`, written as `<name>.csv`.
    pub functions: Vec<(String, StepFunction)>,
}

impl Output {
    /// Writes `report.json` and one CSV per function into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let report_path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&self.report).expect("reports serialize");
        std::fs::write(&report_path, text + "\n").map_err(io(&report_path))?;
        for (name, f) in &self.functions {
            let path = dir.join(format!("{name}.csv"));
            std::fs::write(&path, f.to_csv()).map_err(io(&path))?;
        }
        Ok(())
    }
}

/// One hypothesis check as it appears in a report.
#[derive(Debug, Clone, Serialize)]
struct Check {
    name: &'static str,
    holds: bool,
    value: f64,
    requirement: String,
}

fn check(name: &'static str, holds: bool, value: f64, requirement: impl Into<String>) -> Check {
    Check {
        name,
        holds,
        value,
        requirement: requirement.into(),
    }
}

pub fn run(cfg: &RunConfig) -> Result<Output, CliError> {
    cfg.validate()?;
    let mut out = match &cfg.command {
        Command::Density { system, tol } => density(system, *tol, cfg.precision)?,
        Command::Bounds { system, tol } => bounds(system, *tol)?,
        Command::Response {
            beta0,
            beta1,
            p,
            tol,
            fd_eps,
        } => response(*beta0, *beta1, *p, *tol, *fd_eps)?,
        Command::Quenched {
            model,
            method,
            samples,
            seed,
            depth,
            equivariance,
        } => quenched(model, method, *samples, *seed, *depth, *equivariance)?,
        Command::Expand { path, x, depth } => expansion(path, *x, *depth)?,
        Command::VerifyUlam {
            system,
            bins,
            tol,
            exact_tol,
        } => verify_ulam(system, *bins, *tol, *exact_tol)?,
        Command::VerifyMc {
            system,
            model,
            orbits,
            steps,
            burn_in,
            bins,
            seed,
            exact_tol,
        } => {
            let settings = SimulationSettings {
                orbits: *orbits,
                steps: *steps,
                burn_in: *burn_in,
                bins: *bins,
                seed: *seed,
            };
            verify_mc(system.as_ref(), model.as_ref(), &settings, *exact_tol)?
        }
    };
    let obj = out.report.as_object_mut().expect("reports are objects");
    obj.insert("command".into(), json!(command_name(&cfg.command)));
    obj.insert("precision".into(), json!(cfg.precision.unwrap_or(53)));
    obj.insert(
        "files".into(),
        json!(out
            .functions
            .iter()
            .map(|(n, _)| format!("{n}.csv"))
            .collect::<Vec<_>>()),
    );
    if let Some(dir) = &cfg.out_dir {
        out.write(dir)?;
    }
    Ok(out)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Density { .. } => "density",
        Command::Bounds { .. } => "bounds",
        Command::Response { .. } => "response",
        Command::Quenched { .. } => "quenched",
        Command::Expand { .. } => "expand",
        Command::VerifyUlam { .. } => "verify-ulam",
        Command::VerifyMc { .. } => "verify-mc",
    }
}

fn system_checks(system: &BetaSystem) -> Vec<Check> {
    let m = mean_expanding_check(system);
    vec![
        check("contraction_ratio", m.r_below_one, m.r, "r = Σ p/β < 1"),
        check(
            "expanding_in_mean",
            m.log_mean_negative,
            m.log_mean,
            "Σ p log(1/β) < 0",
        ),
    ]
}

/// Largest gap between the double-precision orbit of 1 and the orbit under
/// the requested arithmetic, over the first `len` steps of every map.
fn orbit_check(system: &BetaSystem, bits: u32, len: usize) -> Result<Value, CliError> {
    let precision = OrbitPrecision::from_bits(bits);
    let mut per_map = Vec::new();
    for atom in system.atoms() {
        let beta = atom.beta;
        let double = orbit_of_one(beta, len);
        let precise = orbit_of_one_with(&rational_of(beta.value())?, len, precision)?;
        let gap = double[..=len]
            .iter()
            .zip(&precise)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        per_map.push(json!({"beta": beta.value(), "max_gap": gap}));
    }
    Ok(json!({"steps": len, "mode": precision, "maps": per_map}))
}

fn density(system: &BetaSystem, tol: f64, precision: Option<u32>) -> Result<Output, CliError> {
    let hypotheses = system_checks(system);
    let rep = build_phi(system, tol)?;
    let mut report = json!({
        "system": system,
        "tol": tol,
        "hypotheses": hypotheses,
        "depth": rep.depth,
        "terminated": rep.terminated,
        "r": rep.r,
        "series_tail_bv": rep.series_tail_bv,
        "tail_bound_bv": rep.tail_bound_bv,
        "residual_l1": rep.residual_l1,
        "integral_phi": 1.0 + rep.series_sum,
        "ess_sup_h": rep.ess_sup_h,
        "ess_inf_h": rep.ess_inf_h,
        "dropped_weight": rep.dropped_weight,
        "atoms_total": rep.atoms_total,
        "max_layer_atoms": rep.max_layer_atoms,
        "hit_zero": rep.hit_zero,
        "hit_one": rep.hit_one,
    });
    if let Some(bits) = precision.filter(|&b| b > 53) {
        report["orbit_check"] = orbit_check(system, bits, rep.depth.clamp(1, 200))?;
    }
    Ok(Output {
        report,
        functions: vec![("phi".into(), rep.phi), ("h".into(), rep.h)],
    })
}

fn bounds(system: &BetaSystem, tol: f64) -> Result<Output, CliError> {
    let hypotheses = system_checks(system);
    let rep = build_phi(system, tol)?;
    let b = bounds_from(&rep)?;
    Ok(Output {
        report: json!({
            "system": system,
            "tol": tol,
            "hypotheses": hypotheses,
            "sup": b.sup,
            "inf": b.inf,
            "formula_sup": b.formula_sup,
            "formula_inf": b.formula_inf,
            "formula_sup_applies": b.formula_sup_applies,
            "formula_inf_applies": b.formula_inf_applies,
            "series_sum": b.series_sum,
            "depth": b.depth,
            "tail_bound_bv": b.tail_bound_bv,
        }),
        functions: vec![("h".into(), rep.h)],
    })
}

fn response(
    beta0: f64,
    beta1: f64,
    p: f64,
    tol: f64,
    fd_eps: Option<f64>,
) -> Result<Output, CliError> {
    let p_c = critical_p(beta0, beta1)?;
    let layers = ResponseLayers::build(beta0, beta1, p, tol)?;
    let hypotheses = vec![
        check(
            "p_in_domain",
            p > p_c && p < 1.0,
            p,
            format!("p ∈ ({p_c}, 1)"),
        ),
        check(
            "delta_below_one",
            layers.delta < 1.0,
            layers.delta,
            "δ = p/β1 + (1−p)/β0 < 1",
        ),
    ];
    let dphi = layers.dphi_at(p);
    let dh = layers.dh_at(p);
    let mut report = json!({
        "beta0": beta0,
        "beta1": beta1,
        "p": p,
        "tol": tol,
        "p_c": p_c,
        "delta": layers.delta,
        "hypotheses": hypotheses,
        "depth": layers.depth,
        "states": layers.num_states(),
        "series_tail_bv": layers.series_tail_bv,
        "dropped_bv": layers.dropped_bv,
        "tail_bound": layers.tail_bound(),
        "norm": layers.norm_at(p),
        "dnorm_dp": layers.dnorm_at(p),
        "dh_mass": dh.integral(),
    });
    if let Some(eps) = fd_eps {
        let fd = fd_check_on(&layers, eps, tol)?;
        report["fd"] = serde_json::to_value(&fd).expect("reports serialize");
        report["fd_dnorm_dp"] = json!(fd.fd_dnorm_dp);
        report["max_l1_gap_dphi"] = json!(fd.max_l1_gap_dphi);
        report["max_l1_gap_dh"] = json!(fd.max_l1_gap_dh);
    }
    Ok(Output {
        report,
        functions: vec![("dphi_dp".into(), dphi), ("dh_dp".into(), dh)],
    })
}

struct PointResult {
    point: SamplePoint,
    window: CWindow,
    detail: Value,
}

fn quenched(
    model: &NoiseModel,
    method: &CMethod,
    samples: usize,
    seed: u64,
    depth: usize,
    equivariance: bool,
) -> Result<Output, CliError> {
    model.validate()?;
    let (lo, hi) = model.beta_range();
    let mut hypotheses = vec![check("expanding", lo > 1.0, lo, "ess inf β > 1")];
    let mut extra = json!({});
    match method {
        CMethod::Series { .. } => {
            hypotheses.push(check("strong_expansion", lo > 2.0, lo, "ess inf β > 2"));
        }
        CMethod::Periodic { .. } => {
            hypotheses.push(check(
                "periodic",
                model.period().is_some(),
                0.0,
                "periodic noise",
            ));
        }
        CMethod::Perturbative(s) => {
            let e = epsilon0(s.beta0, s.chi_depth)?;
            let dev = (s.beta0 - lo).max(hi - s.beta0);
            hypotheses.push(check(
                "inside_window",
                dev < e.eps0,
                dev,
                format!("sup |β − β0| < ε0 = {}", e.eps0),
            ));
            extra["epsilon0"] = serde_json::to_value(&e).expect("reports serialize");
        }
    }
    let points = match method {
        CMethod::Periodic { .. } => {
            let q = model.period().unwrap_or(1);
            (0..samples.min(q))
                .map(|phase| SamplePoint::Phase { phase })
                .collect()
        }
        _ => model.sample_points(samples, seed),
    };
    let periodic = match method {
        CMethod::Periodic { tol } => Some(c_periodic(model, *tol)?),
        _ => None,
    };
    let mut results = Vec::with_capacity(points.len());
    for p in &points {
        let (window, detail) = match method {
            CMethod::Series { outer, inner } => {
                let (w, r) = c_series_window(model, p, *outer, *inner, depth)?;
                (w, serde_json::to_value(&r).expect("reports serialize"))
            }
            CMethod::Periodic { .. } => {
                let sol = periodic.as_ref().expect("solved above");
                let SamplePoint::Phase { phase } = *p else {
                    unreachable!()
                };
                (
                    periodic_window(sol, phase, depth + 1),
                    json!({"residual": sol.residual, "depth": sol.depth}),
                )
            }
            CMethod::Perturbative(s) => {
                let (w, r) = c_perturbative_window(model, p, s, depth)?;
                let mut v = serde_json::to_value(&r).expect("reports serialize");
                v.as_object_mut().unwrap().remove("window");
                (w, v)
            }
        };
        results.push(PointResult {
            point: *p,
            window,
            detail,
        });
    }
    let mut rows = Vec::with_capacity(results.len());
    let mut all_within = true;
    for r in &results {
        let res = functional_residual(model, &r.point, &r.window, depth)?;
        all_within &= res.residual <= res.bound;
        let mut row = json!({
            "point": r.point,
            "c": r.window.values[0],
            "c_error": r.window.error,
            "functional_residual": res.residual,
            "functional_bound": res.bound,
            "detail": r.detail,
        });
        if equivariance {
            let e = equivariance_residual(model, &r.point, method, depth)?;
            all_within &= e.residual <= e.bound;
            row["equivariance_residual"] = json!(e.residual);
            row["equivariance_bound"] = json!(e.bound);
        }
        rows.push(row);
    }
    let mut functions = Vec::new();
    if let Some(first) = results.first() {
        functions.push((
            "phi_fiber".into(),
            phi_fiber(model, &first.point, &first.window, depth)?.phi,
        ));
    }
    let avg = fiber_average(model, &points, method, depth)?;
    functions.push(("fiber_average".into(), avg));
    let min_c = results
        .iter()
        .map(|r| r.window.values[0])
        .fold(f64::INFINITY, f64::min);
    let mut report = json!({
        "model": model,
        "method": method,
        "samples": rows,
        "depth": depth,
        "hypotheses": hypotheses,
        "min_c": min_c,
        "all_within_bounds": all_within,
    });
    if let Some(e) = extra.get("epsilon0") {
        report["epsilon0"] = e.clone();
    }
    Ok(Output { report, functions })
}

fn expansion(path: &[f64], x: f64, depth: usize) -> Result<Output, CliError> {
    let full: Vec<f64> = path.iter().copied().cycle().take(depth).collect();
    let rec = expand(&full, x, depth)?;
    let last = rec.partial_sums.last().copied().unwrap_or(0.0);
    let defect = (x - last).abs();
    let allowance = rec.remainder_bound + depth as f64 * f64::EPSILON;
    Ok(Output {
        report: json!({
            "path": path,
            "x": x,
            "depth": depth,
            "hypotheses": [check("expanding_in_mean", !rec.not_expanding_in_mean, rec.log_mean, "mean log(1/β) < 0 along the path")],
            "digits": rec.digits,
            "partial_sums": rec.partial_sums,
            "remainder": rec.remainder,
            "remainder_bound": rec.remainder_bound,
            "defect": defect,
            "identity_holds": defect <= allowance,
        }),
        functions: vec![],
    })
}

fn verify_ulam(
    system: &BetaSystem,
    bins: usize,
    tol: f64,
    exact_tol: f64,
) -> Result<Output, CliError> {
    let hypotheses = system_checks(system);
    let op = ulam_matrix(system, bins)?;
    let st = stationary_vector(&op, tol, 1_000_000)?;
    let exact = build_phi(system, exact_tol)?;
    Ok(Output {
        report: json!({
            "system": system,
            "bins": bins,
            "hypotheses": hypotheses,
            "row_sum_defect": op.max_row_sum_defect(),
            "residual": st.residual,
            "iterations": st.iterations,
            "l1_to_exact": st.density.l1_distance(&exact.h),
            "exact_depth": exact.depth,
            "exact_tail_bound_bv": exact.tail_bound_bv,
        }),
        functions: vec![("ulam".into(), st.density), ("exact_h".into(), exact.h)],
    })
}

fn verify_mc(
    system: Option<&BetaSystem>,
    model: Option<&NoiseModel>,
    settings: &SimulationSettings,
    exact_tol: f64,
) -> Result<Output, CliError> {
    let (source, annealed, hypotheses) = match (system, model) {
        (Some(s), None) => (Source::System(s), Some(s.clone()), system_checks(s)),
        (None, Some(m)) => {
            let annealed = match m {
                NoiseModel::TwoSidedIid { system, .. } => Some(system.clone()),
                _ => None,
            };
            let (lo, _) = m.beta_range();
            (
                Source::Noise(m),
                annealed,
                vec![check("expanding", lo > 1.0, lo, "ess inf β > 1")],
            )
        }
        _ => {
            return Err(CliError::Usage(
                "verify-mc needs exactly one of system and model".into(),
            ))
        }
    };
    let hist = simulate(source, settings)?;
    let mut functions = vec![("histogram".to_string(), hist.density.clone())];
    let l1 = match &annealed {
        Some(s) => {
            let exact = build_phi(s, exact_tol)?;
            let d = hist.density.l1_distance(&exact.h);
            functions.push(("exact_h".into(), exact.h));
            Some(d)
        }
        None => None,
    };
    Ok(Output {
        report: json!({
            "settings": settings,
            "hypotheses": hypotheses,
            "samples": hist.samples,
            "l1_to_exact": l1,
            "sampling_scale": 3.0 * (settings.bins as f64 / hist.samples as f64).sqrt(),
        }),
        functions,
    })
}
