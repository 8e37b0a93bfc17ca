//! The coefficient `c = (I + S)⁻¹1` and the fiber densities built from it.
//!
//! All operators are sums of weighted backward shifts,
//! `Sf(ω) = Σ_m w_m(ω) f(θ^{-m}ω)`, so they are evaluated on a window of
//! offsets `θ^{-j}ω`, `j = 0, 1, …`, along one sample path. Each application
//! of a truncated operator shortens the window by its depth.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Hypothesis, Result};
use crate::quenched::noise::{NoiseModel, SamplePoint};
use crate::quenched::perturbative::{c_perturbative_window, PerturbativeSettings};
use crate::quenched::weights::{backward_weights, BackwardTable};
use crate::stepfn::StepFunction;
use crate::transfer::pf_apply;
use crate::Beta;

/// `c(θ^{-j}ω)` for `j = 0..values.len()` with a uniform error bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CWindow {
    pub values: Vec<f64>,
    /// Bound on `|computed − exact|` at every offset.
    pub error: f64,
    /// Bound on `sup |c|`.
    pub sup: f64,
}

/// How `c` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CMethod {
    /// Alternating series; needs `ess inf β > 2`.
    Series { outer: usize, inner: usize },
    /// Exact finite linear system; periodic noise only.
    Periodic { tol: f64 },
    /// Factorized inverse around a non-simple `β₀`.
    Perturbative(PerturbativeSettings),
}

/// Result of the alternating series at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub c: f64,
    pub tail_bound: f64,
    /// `ρ^{K+1}/(1−ρ) + K γ^{-M}/(γ−1)` with `ρ = 1/(γ−1)`.
    pub a_priori_tail: f64,
    pub gamma: f64,
    /// `1/(γ−1)`.
    pub rho: f64,
    /// `min(ρ, σ + γ^{-M}/(γ−1))` with `σ` the largest inner sum `Σ_{m≤M} w_m`
    /// over the window.
    pub rho_eff: f64,
    pub outer: usize,
    pub inner: usize,
}

fn check_gamma(model: &NoiseModel) -> Result<f64> {
    let gamma = model.beta_range().0;
    if !(gamma > 2.0) {
        return Err(Hypothesis::WeakExpansion { gamma }.into());
    }
    Ok(gamma)
}

/// `Σ_{n≤K} (−S_M)ⁿ 1` on offsets `0..=extra`.
pub fn c_series_window(
    model: &NoiseModel,
    omega: &SamplePoint,
    outer: usize,
    inner: usize,
    extra: usize,
) -> Result<(CWindow, SeriesReport)> {
    if inner == 0 {
        return Err(Error::Domain {
            what: "inner depth",
            value: 0.0,
            expected: ">= 1",
        });
    }
    let gamma = check_gamma(model)?;
    let rows = outer * inner + extra + 1;
    let table = BackwardTable::build(model, omega, rows, inner)?;
    let mut s = vec![1.0; rows];
    for n in 1..=outer {
        let len = rows - n * inner;
        let next: Vec<f64> = (0..len)
            .into_par_iter()
            .map(|j| {
                let w = table.w_row(j);
                1.0 - (1..=inner).map(|m| w[m] * s[j + m]).sum::<f64>()
            })
            .collect();
        s = next;
    }
    s.truncate(extra + 1);

    let rho = 1.0 / (gamma - 1.0);
    let tau = gamma.powi(-(inner as i32)) / (gamma - 1.0);
    let sigma = table.max_row_sum();
    let rho_eff = rho.min(sigma + tau);
    let k1 = outer as i32 + 1;
    let tail_bound = rho_eff.powi(k1) / (1.0 - rho_eff) + tau / (1.0 - rho_eff).powi(2);
    let a_priori_tail = rho.powi(k1) / (1.0 - rho) + outer as f64 * tau;
    let report = SeriesReport {
        c: s[0],
        tail_bound,
        a_priori_tail,
        gamma,
        rho,
        rho_eff,
        outer,
        inner,
    };
    let window = CWindow {
        values: s,
        error: tail_bound,
        sup: 1.0 / (1.0 - rho),
    };
    Ok((window, report))
}

pub fn c_series(
    model: &NoiseModel,
    omega: &SamplePoint,
    outer: usize,
    inner: usize,
) -> Result<SeriesReport> {
    Ok(c_series_window(model, omega, outer, inner, 0)?.1)
}

/// Exact per-phase solution of a periodic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSolution {
    /// `c` at phases `0..q`.
    pub c: Vec<f64>,
    /// Inner depth used for the residue-class sums.
    pub depth: usize,
    /// `‖(I + A)c − 1‖_∞`.
    pub residual: f64,
    /// Bound on the error from truncating the inner sums, propagated
    /// through `‖(I + A)⁻¹‖_∞`.
    pub error: f64,
}

/// Solves `(I_q + A)c = 1` with `A[j][(j−m) mod q] = Σ_m w_m(phase j)`.
pub fn c_periodic(model: &NoiseModel, tol: f64) -> Result<PeriodicSolution> {
    let NoiseModel::Periodic { betas } = model else {
        return Err(Error::InvalidModel(
            "c_periodic needs a periodic model".into(),
        ));
    };
    if !(tol > 0.0) {
        return Err(Error::Domain {
            what: "tol",
            value: tol,
            expected: "> 0",
        });
    }
    let q = betas.len();
    let gamma = model.beta_range().0;
    if !(gamma > 1.0) {
        return Err(Hypothesis::NotExpanding { beta0: gamma }.into());
    }
    let mut depth = 1usize;
    while gamma.powi(-(depth as i32)) / (gamma - 1.0) > tol * 1e-3 && depth < 200_000 {
        depth += 1;
    }
    let mut a = DMatrix::<f64>::identity(q, q);
    for j in 0..q {
        let bw = backward_weights(model, &SamplePoint::Phase { phase: j }, depth)?;
        for m in 1..=depth {
            let col = (j as i64 - m as i64).rem_euclid(q as i64) as usize;
            a[(j, col)] += bw.w[m];
        }
    }
    let lu = a.clone().lu();
    let ones = DVector::from_element(q, 1.0);
    let c = lu
        .solve(&ones)
        .ok_or_else(|| Error::Singular(format!("I + A for period {q}")))?;
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("I + A for period {q}")))?;
    let inv_norm = inv
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let residual = (&a * &c - &ones).amax();
    let c_sup = c.amax();
    let trunc = gamma.powi(-(depth as i32)) / (gamma - 1.0);
    Ok(PeriodicSolution {
        c: c.iter().copied().collect(),
        depth,
        residual,
        error: inv_norm * (residual + trunc * c_sup * 1.0001),
    })
}

/// `c(θ^{-j}ω)` for `j = 0..len` from per-phase values.
pub fn periodic_window(sol: &PeriodicSolution, phase: usize, len: usize) -> CWindow {
    let q = sol.c.len() as i64;
    let values = (0..len as i64)
        .map(|j| sol.c[(phase as i64 - j).rem_euclid(q) as usize])
        .collect();
    CWindow {
        values,
        error: sol.error,
        sup: sol.c.iter().map(|x| x.abs()).fold(0.0, f64::max) + sol.error,
    }
}

/// `c` on offsets `0..=extra` at `omega` by the chosen method.
pub fn solve_c_window(
    model: &NoiseModel,
    omega: &SamplePoint,
    method: &CMethod,
    extra: usize,
) -> Result<CWindow> {
    match method {
        CMethod::Series { outer, inner } => {
            Ok(c_series_window(model, omega, *outer, *inner, extra)?.0)
        }
        CMethod::Periodic { tol } => {
            let SamplePoint::Phase { phase } = *omega else {
                return Err(Error::InvalidModel("periodic solve needs a phase".into()));
            };
            Ok(periodic_window(&c_periodic(model, *tol)?, phase, extra + 1))
        }
        CMethod::Perturbative(settings) => {
            Ok(c_perturbative_window(model, omega, settings, extra)?.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `|c(ω) − Σ_{m≤M} d_m c(θ^{-m}ω)|` as computed.
    pub residual: f64,
    /// Contribution of `m > M`.
    pub d_tail: f64,
    /// What the residual may be given the error in `c`, the `d` tail and
    /// floating-point rounding.
    pub bound: f64,
}

/// Residual of `c(ω) = Σ_m d_m(θ^{-m}ω,1)/β^{(m)} c(θ^{-m}ω)`.
pub fn functional_residual(
    model: &NoiseModel,
    omega: &SamplePoint,
    c: &CWindow,
    depth: usize,
) -> Result<ResidualReport> {
    if c.values.len() < depth + 1 {
        return Err(Error::InvalidModel(format!(
            "need c at {} offsets, have {}",
            depth + 1,
            c.values.len()
        )));
    }
    let bw = backward_weights(model, omega, depth)?;
    let sum: f64 = (1..=depth).map(|m| bw.d[m] * c.values[m]).sum();
    let dsum: f64 = bw.d[1..].iter().sum();
    let residual = (c.values[0] - sum).abs();
    let gamma = model.beta_range().0;
    // d_m/β^{(m)} ≤ τ^{m−1}/β^{(m−1)} ≤ γ^{−(m−1)}
    let d_tail = c.sup * gamma.powi(-(depth as i32)) / (1.0 - 1.0 / gamma);
    let rounding = 1e-14 * (c.values[0].abs() + dsum * c.sup);
    Ok(ResidualReport {
        residual,
        d_tail,
        bound: c.error * (1.0 + dsum) + d_tail + rounding,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberDensity {
    pub phi: StepFunction,
    pub depth: usize,
    /// L¹ bound on the omitted terms `n > depth`.
    pub tail_bound: f64,
    /// L¹ effect of the error in `c` on the kept terms.
    pub c_error_effect: f64,
}

/// `φ_ω = Σ_{n≤N} c(θ^{-n}ω)/β^{(n)}_{θ^{-n}ω} · 1_{[0, τⁿ_{θ^{-n}ω}(1)]}`.
pub fn phi_fiber(
    model: &NoiseModel,
    omega: &SamplePoint,
    c: &CWindow,
    depth: usize,
) -> Result<FiberDensity> {
    let (terms, l1_per_unit) = fiber_terms(model, omega, c, depth, 1.0)?;
    let gamma = model.beta_range().0;
    Ok(FiberDensity {
        phi: StepFunction::from_indicators(0.0, terms),
        depth,
        tail_bound: c.sup * gamma.powi(-(depth as i32)) / (gamma - 1.0),
        c_error_effect: c.error * l1_per_unit,
    })
}

/// Indicator terms of `φ_ω` and `Σ_n ‖1_{[0,τⁿ(1)]}‖₁/β^{(n)}`.
fn fiber_terms(
    model: &NoiseModel,
    omega: &SamplePoint,
    c: &CWindow,
    depth: usize,
    scale: f64,
) -> Result<(Vec<(f64, f64)>, f64)> {
    if c.values.len() < depth + 1 {
        return Err(Error::InvalidModel(format!(
            "need c at {} offsets, have {}",
            depth + 1,
            c.values.len()
        )));
    }
    let table = BackwardTable::build(model, omega, 1, depth.max(1))?;
    let (w, pt) = (table.w_row(0), table.point_row(0));
    // coefficient c(θ^{-n}ω)/β^{(n)}; w[n] carries the extra factor pt[n]
    let terms = (0..=depth)
        .filter(|&n| pt[n] > 0.0)
        .map(|n| (pt[n], scale * c.values[n] * (w[n] / pt[n])))
        .collect();
    Ok((terms, w[..=depth].iter().sum()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    /// `‖L_{β(ω)} φ_{ω,N} − φ_{θω,N}‖₁`.
    pub residual: f64,
    pub bound: f64,
}

/// Checks `L_ω φ_ω = φ_{θω}` at `omega`, solving for `c` with `method`.
pub fn equivariance_residual(
    model: &NoiseModel,
    omega: &SamplePoint,
    method: &CMethod,
    depth: usize,
) -> Result<EquivarianceReport> {
    let next = model.shift(omega, 1);
    // c(θ^{-j}θω) for j = 0..=depth+1; the window at ω is its tail
    let c_next = solve_c_window(model, &next, method, depth + 1)?;
    let c_here = CWindow {
        values: c_next.values[1..].to_vec(),
        error: c_next.error,
        sup: c_next.sup,
    };
    let phi_here = phi_fiber(model, omega, &c_here, depth)?;
    let phi_next = phi_fiber(model, &next, &c_next, depth)?;
    let beta = Beta::new(model.forward(omega, 0)?)?;
    let pushed = pf_apply(beta, &phi_here.phi);
    let residual = pushed.l1_distance(&phi_next.phi);
    let func = functional_residual(model, &next, &c_next, depth + 1)?;
    let gamma = model.beta_range().0;
    let bound = func.bound
        + c_next.sup * gamma.powi(-(depth as i32 + 1))
        + phi_here.c_error_effect
        + phi_next.c_error_effect;
    Ok(EquivarianceReport { residual, bound })
}

/// Mean of the fiber densities `φ_ω` over `points`.
pub fn fiber_average(
    model: &NoiseModel,
    points: &[SamplePoint],
    method: &CMethod,
    depth: usize,
) -> Result<StepFunction> {
    let scale = 1.0 / points.len() as f64;
    let parts: Vec<Vec<(f64, f64)>> = points
        .par_iter()
        .map(|p| {
            let c = solve_c_window(model, p, method, depth)?;
            Ok(fiber_terms(model, p, &c, depth, scale)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(StepFunction::from_indicators(
        0.0,
        parts.into_iter().flatten(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iid_density::build_phi;
    use crate::quenched::perturbative::xi_series;
    use crate::transfer::BetaSystem;
    use approx::assert_relative_eq;

    #[test]
    fn integer_slope_gives_unit_c() {
        let m = NoiseModel::periodic(vec![3.0]).unwrap();
        let r = c_series(&m, &m.origin(), 10, 20).unwrap();
        assert_eq!(r.c, 1.0);
        let sol = c_periodic(&m, 1e-12).unwrap();
        assert_eq!(sol.c, vec![1.0]);
        let w = periodic_window(&sol, 0, 30);
        let res = functional_residual(&m, &m.origin(), &w, 20).unwrap();
        assert_eq!(res.residual, 0.0);
        let f = phi_fiber(&m, &m.origin(), &w, 20).unwrap();
        assert_eq!(f.phi, StepFunction::constant(1.0));
        let e =
            equivariance_residual(&m, &m.origin(), &CMethod::Periodic { tol: 1e-12 }, 20).unwrap();
        assert_eq!(e.residual, 0.0);
    }

    #[test]
    fn weak_expansion_is_refused() {
        let m = NoiseModel::periodic(vec![1.5]).unwrap();
        let e = c_series(&m, &m.origin(), 10, 20).unwrap_err();
        assert!(matches!(
            e,
            Error::Hypothesis(Hypothesis::WeakExpansion { .. })
        ));
    }

    #[test]
    fn periodic_single_slope_is_reciprocal_of_xi() {
        let m = NoiseModel::periodic(vec![1.5]).unwrap();
        let sol = c_periodic(&m, 1e-14).unwrap();
        let xi = xi_series(1.5, 200).unwrap();
        assert_relative_eq!(sol.c[0], 1.0 / xi.eval_at_1, epsilon = 1e-13);
        assert_relative_eq!(sol.c[0], 0.5170150628158995, epsilon = 1e-13);
    }

    #[test]
    fn series_matches_periodic_for_constant_slope() {
        let m = NoiseModel::periodic(vec![2.5]).unwrap();
        let sol = c_periodic(&m, 1e-14).unwrap();
        assert_relative_eq!(sol.c[0], 0.7698728752220745, epsilon = 1e-13);
        let r = c_series(&m, &m.origin(), 40, 60).unwrap();
        assert!((r.c - sol.c[0]).abs() < 1e-10);
        assert!(r.tail_bound < 1e-10);
        let w = periodic_window(&sol, 0, 81);
        assert!(
            functional_residual(&m, &m.origin(), &w, 80)
                .unwrap()
                .residual
                < 1e-10
        );
    }

    #[test]
    fn constant_slope_fiber_is_the_iid_density() {
        let m = NoiseModel::periodic(vec![2.5]).unwrap();
        let sol = c_periodic(&m, 1e-14).unwrap();
        let f = phi_fiber(&m, &m.origin(), &periodic_window(&sol, 0, 61), 60).unwrap();
        let rep = build_phi(&BetaSystem::single(2.5).unwrap(), 1e-13).unwrap();
        assert!(f.phi.normalize().unwrap().l1_distance(&rep.h) < 1e-10);
        // (I + S)c = 1 makes every fiber density a probability density
        assert_relative_eq!(f.phi.integral(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn period_two_cross_check() {
        let m = NoiseModel::periodic(vec![2.5, 3.5]).unwrap();
        let sol = c_periodic(&m, 1e-14).unwrap();
        assert!(sol.residual < 1e-14);
        assert_ne!(sol.c[0], sol.c[1]);
        for phase in 0..2 {
            let p = SamplePoint::Phase { phase };
            let r = c_series(&m, &p, 40, 60).unwrap();
            assert!((r.c - sol.c[phase]).abs() < 1e-10);
            let e = equivariance_residual(&m, &p, &CMethod::Periodic { tol: 1e-14 }, 60).unwrap();
            assert!(e.residual <= 1e-8);
            assert!(e.residual <= e.bound);
        }
        let f0 = phi_fiber(
            &m,
            &SamplePoint::Phase { phase: 0 },
            &periodic_window(&sol, 0, 61),
            60,
        )
        .unwrap();
        let f1 = phi_fiber(
            &m,
            &SamplePoint::Phase { phase: 1 },
            &periodic_window(&sol, 1, 61),
            60,
        )
        .unwrap();
        assert!(f0.phi.l1_distance(&f1.phi) > 1e-3);
    }

    #[test]
    fn rotation_residual_within_bound() {
        let m = NoiseModel::Rotation {
            alpha: 0.6180339887,
            base: 2.6,
            amplitude: 0.3,
            profile: Default::default(),
        };
        let method = CMethod::Series {
            outer: 30,
            inner: 50,
        };
        for p in m.sample_points(8, 1) {
            let c = solve_c_window(&m, &p, &method, 60).unwrap();
            assert!(c.values[0] > c.error);
            let r = functional_residual(&m, &p, &c, 60).unwrap();
            assert!(r.residual <= r.bound, "{r:?}");
            let e = equivariance_residual(&m, &p, &method, 50).unwrap();
            assert!(e.residual <= e.bound, "{e:?}");
            let f = phi_fiber(&m, &p, &c, 60).unwrap();
            assert!(f.phi.is_nonnegative());
            assert!((f.phi.integral() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn iid_noise_gives_positive_c() {
        let m = NoiseModel::TwoSidedIid {
            system: BetaSystem::new(vec![(2.5, 0.5), (3.5, 0.5)]).unwrap(),
            seed: 17,
        };
        for p in m.sample_points(50, 0) {
            let r = c_series(&m, &p, 25, 40).unwrap();
            assert!(r.c > r.tail_bound);
        }
    }
}
