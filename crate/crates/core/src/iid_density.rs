//! Stationary density of an i.i.d. system of beta-maps.
//!
//! The density is the series `φ = 1 + Σ_n Σ_{|w|=n} (Π p/β) 1_{[0,τ_w(1)]}`.
//! Words are never enumerated: each depth is an [`AtomMeasure`] holding the
//! distinct orbit points and their aggregated weights, and the next depth is
//! obtained by pushing every atom through every map.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta_map::{split, SNAP_TOL};
use crate::error::{Error, Hypothesis, Result};
use crate::stepfn::StepFunction;
use crate::transfer::{fixed_point_residual, BetaSystem};

/// Orbit points closer than this are treated as one atom.
pub const MERGE_TOL: f64 = 1e-13;

/// Weighted points `(τ_w(1), weight)`, sorted by point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AtomMeasure {
    atoms: Vec<(f64, f64)>,
}

impl AtomMeasure {
    /// Sorts, drops zero points and zero weights, and merges close points.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(&(x, w)) = atoms
            .iter()
            .find(|(x, w)| !(0.0..=1.0).contains(x) || !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::InvalidSystem(format!("bad atom ({x}, {w})")));
        }
        Ok(Self::canonical(atoms, MERGE_TOL))
    }

    /// The depth-0 layer: a unit mass at 1.
    pub fn unit() -> Self {
        AtomMeasure {
            atoms: vec![(1.0, 1.0)],
        }
    }

    fn canonical(mut atoms: Vec<(f64, f64)>, merge_tol: f64) -> Self {
        atoms.retain(|&(x, w)| x > 0.0 && w > 0.0);
        atoms.par_sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        let mut anchor = f64::NEG_INFINITY;
        for (x, w) in atoms {
            match out.last_mut() {
                Some(last) if x - anchor <= merge_tol => last.1 += w,
                _ => {
                    anchor = x;
                    out.push((x, w));
                }
            }
        }
        AtomMeasure { atoms: out }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// `Σ w·x`, the integral of `Σ w·1_{[0,x]}`.
    pub fn first_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.0 * a.1).sum()
    }

    /// Drops the lightest atoms while their total stays within `budget`,
    /// then keeps at most `cap` atoms. Returns the dropped weight.
    fn thin(&mut self, budget: f64, cap: usize) -> f64 {
        if self.atoms.is_empty() {
            return 0.0;
        }
        let mut order: Vec<usize> = (0..self.atoms.len()).collect();
        order.par_sort_by(|&i, &j| self.atoms[i].1.total_cmp(&self.atoms[j].1).then(i.cmp(&j)));
        let mut keep = vec![true; self.atoms.len()];
        let mut dropped = 0.0;
        let mut removed = 0usize;
        let must_remove = self.atoms.len().saturating_sub(cap);
        for &i in &order {
            let w = self.atoms[i].1;
            if removed < must_remove || dropped + w <= budget {
                dropped += w;
                keep[i] = false;
                removed += 1;
            } else {
                break;
            }
        }
        if removed > 0 {
            let mut idx = 0;
            self.atoms.retain(|_| {
                idx += 1;
                keep[idx - 1]
            });
        }
        dropped
    }
}

/// Next word layer: `(v, w) ↦ (T_{βᵢ}(v), w·pᵢ/βᵢ)` for every map.
///
/// Also reports whether some child landed exactly on 0.
fn propagate_raw(system: &BetaSystem, layer: &AtomMeasure, merge_tol: f64) -> (AtomMeasure, bool) {
    let maps: Vec<(f64, f64)> = system
        .atoms()
        .iter()
        .map(|a| (a.beta.value(), a.prob / a.beta.value()))
        .collect();
    let children: Vec<(f64, f64)> = layer
        .atoms
        .par_iter()
        .flat_map_iter(|&(v, w)| {
            maps.iter()
                .map(move |&(beta, q)| (split(beta, v, SNAP_TOL).1, w * q))
        })
        .collect();
    let hit_zero = children.iter().any(|c| c.0 == 0.0);
    (AtomMeasure::canonical(children, merge_tol), hit_zero)
}

pub fn propagate(system: &BetaSystem, layer: &AtomMeasure) -> AtomMeasure {
    propagate_raw(system, layer, MERGE_TOL).0
}

/// Error-control knobs for [`build_phi_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildSettings {
    pub tol: f64,
    pub merge_tol: f64,
    /// Atoms kept per layer; lighter atoms beyond this are dropped and
    /// accounted in the tail bound.
    pub max_layer_atoms: usize,
    /// Allow dropping the lightest atoms of each layer within a budget of
    /// `r^{N+1}/(2N)` weight.
    pub thin: bool,
}

impl BuildSettings {
    pub fn new(tol: f64) -> Self {
        BuildSettings {
            tol,
            merge_tol: MERGE_TOL,
            max_layer_atoms: 1 << 20,
            thin: true,
        }
    }
}

/// Discretization info attached when the system came from a continuous law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureInfo {
    pub nodes: usize,
    /// `Σ pᵢ/βᵢ` of the discretized system.
    pub r_nodes: f64,
    /// The same quantity with twice as many nodes.
    pub r_refined: f64,
    /// Always false: there is no error theory for the discretization.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub phi: StepFunction,
    pub h: StepFunction,
    /// Index of the first empty layer, or the truncation depth `N`.
    pub depth: usize,
    pub terminated: bool,
    /// `2 r^{N+1}/(1−r)`, the BV tail of the untruncated series (0 when the
    /// series terminated).
    pub series_tail_bv: f64,
    /// `series_tail_bv` plus `2D/(1−r)` for the dropped weight `D`.
    pub tail_bound_bv: f64,
    pub r: f64,
    pub ess_sup_h: f64,
    pub ess_inf_h: f64,
    pub dropped_weight: f64,
    pub atoms_total: usize,
    pub max_layer_atoms: usize,
    /// Some orbit point was exactly 0 at some depth.
    pub hit_zero: bool,
    /// Some orbit point at depth ≥ 1 was exactly 1.
    pub hit_one: bool,
    /// `Σ_n Σ_w weight·τ_w(1) = ∫φ − 1`.
    pub series_sum: f64,
    /// `‖Lφ − φ‖₁`.
    pub residual_l1: f64,
    pub quadrature: Option<QuadratureInfo>,
}

/// Smallest `N ≥ 0` with `2 r^{N+1}/(1−r) ≤ tol`.
pub fn truncation_depth(r: f64, tol: f64) -> usize {
    let mut n = 0usize;
    let mut rp = r;
    while 2.0 * rp / (1.0 - r) > tol {
        rp *= r;
        n += 1;
    }
    n
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "tol",
            value: tol,
            expected: "> 0",
        })
    }
}

pub fn build_phi(system: &BetaSystem, tol: f64) -> Result<DensityReport> {
    build_phi_with(system, &BuildSettings::new(tol))
}

pub fn build_phi_with(system: &BetaSystem, settings: &BuildSettings) -> Result<DensityReport> {
    check_tol(settings.tol)?;
    let r = system.r();
    if r >= 1.0 {
        return Err(Hypothesis::ContractionRatio { r }.into());
    }
    let n_max = truncation_depth(r, settings.tol);
    let r_tail = r.powi(n_max as i32 + 1);
    let budget = if settings.thin && n_max > 0 {
        r_tail / (2.0 * n_max as f64)
    } else {
        0.0
    };

    let mut layer = AtomMeasure::unit();
    let mut terms: Vec<(f64, f64)> = Vec::new();
    let mut dropped = 0.0;
    let mut hit_zero = false;
    let mut hit_one = false;
    let mut series_sum = 0.0;
    let mut max_layer = 0usize;
    let mut depth = n_max;
    let mut terminated = false;
    for n in 1..=n_max {
        let (mut next, zero) = propagate_raw(system, &layer, settings.merge_tol);
        hit_zero |= zero;
        dropped += next.thin(budget, settings.max_layer_atoms);
        if next.is_empty() {
            depth = n;
            terminated = true;
            break;
        }
        hit_one |= next.atoms.last().is_some_and(|a| a.0 >= 1.0);
        max_layer = max_layer.max(next.len());
        series_sum += next.first_moment();
        terms.extend_from_slice(&next.atoms);
        layer = next;
        log::debug!("layer {n}: {} atoms", layer.len());
    }
    let atoms_total = terms.len();
    let phi = StepFunction::from_indicators(1.0, terms);
    let h = phi.normalize()?;
    let residual_l1 = fixed_point_residual(system, &phi);
    let series_tail_bv = if terminated {
        0.0
    } else {
        2.0 * r_tail / (1.0 - r)
    };
    Ok(DensityReport {
        ess_sup_h: h.ess_sup(),
        ess_inf_h: h.ess_inf(),
        phi,
        h,
        depth,
        terminated,
        series_tail_bv,
        tail_bound_bv: series_tail_bv + 2.0 * dropped / (1.0 - r),
        r,
        dropped_weight: dropped,
        atoms_total,
        max_layer_atoms: max_layer,
        hit_zero,
        hit_one,
        series_sum,
        residual_l1,
        quadrature: None,
    })
}

/// Extremes of the normalized density, computed and by closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub sup: f64,
    pub inf: f64,
    /// `1/((1−r)(1 + Σ))` with `Σ = Σ_n ∫τⁿ(1)/β^{(n)} dP`.
    pub formula_sup: f64,
    /// `1/(1 + Σ)`.
    pub formula_inf: f64,
    pub series_sum: f64,
    /// The closed forms describe the essential extremes only when no orbit
    /// point is 0 (and, for the infimum, none is 1).
    pub formula_sup_applies: bool,
    pub formula_inf_applies: bool,
    pub depth: usize,
    pub tail_bound_bv: f64,
}

pub fn bounds(system: &BetaSystem, tol: f64) -> Result<BoundsReport> {
    bounds_from(&build_phi(system, tol)?)
}

pub fn bounds_from(report: &DensityReport) -> Result<BoundsReport> {
    let formula_inf = 1.0 / (1.0 + report.series_sum);
    Ok(BoundsReport {
        sup: report.ess_sup_h,
        inf: report.ess_inf_h,
        formula_sup: formula_inf / (1.0 - report.r),
        formula_inf,
        series_sum: report.series_sum,
        formula_sup_applies: !report.hit_zero,
        formula_inf_applies: !report.hit_one,
        depth: report.depth,
        tail_bound_bv: report.tail_bound_bv,
    })
}

/// A law for the slope on an interval `(a, b)` with `a > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Uniform {
        a: f64,
        b: f64,
    },
    /// Density values on an equispaced grid over `[a, b]`, interpolated
    /// linearly; need not be normalized.
    Tabulated {
        a: f64,
        b: f64,
        density: Vec<f64>,
    },
}

impl Distribution {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Distribution::Uniform { a, b } | Distribution::Tabulated { a, b, .. } => (a, b),
        }
    }

    fn density(&self, x: f64) -> f64 {
        match self {
            Distribution::Uniform { .. } => 1.0,
            Distribution::Tabulated { a, b, density } => {
                if density.len() == 1 {
                    return density[0];
                }
                let t = ((x - a) / (b - a)).clamp(0.0, 1.0) * (density.len() - 1) as f64;
                let i = (t.floor() as usize).min(density.len() - 2);
                let f = t - i as f64;
                density[i] * (1.0 - f) + density[i + 1] * f
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.support();
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Domain {
                what: "a",
                value: a,
                expected: "> 0 (support must stay away from 0)",
            });
        }
        if !(b > a) || !b.is_finite() {
            return Err(Error::Domain {
                what: "b",
                value: b,
                expected: "finite and > a",
            });
        }
        if let Distribution::Tabulated { density, .. } = self {
            if density.is_empty()
                || density.iter().any(|d| !(*d >= 0.0) || !d.is_finite())
                || density.iter().all(|&d| d == 0.0)
            {
                return Err(Error::InvalidSystem(
                    "tabulated density must be nonnegative with positive mass".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Gauss–Legendre discretization of a continuous slope law.
pub fn quadrature_system(dist: &Distribution, nodes: usize) -> Result<BetaSystem> {
    dist.validate()?;
    let n = NonZeroUsize::new(nodes).ok_or(Error::Domain {
        what: "nodes",
        value: 0.0,
        expected: ">= 1",
    })?;
    let (a, b) = dist.support();
    let rule = GaussLegendre::new(n);
    let mut atoms: Vec<(f64, f64)> = rule
        .iter()
        .map(|&(x, w)| {
            let beta = 0.5 * ((b - a) * x + (b + a));
            (beta, w * dist.density(beta))
        })
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidSystem(
            "distribution has no mass at the nodes".into(),
        ));
    }
    for at in &mut atoms {
        at.1 /= total;
    }
    // renormalize against rounding so the sum-to-one check is tight
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    if let Some(last) = atoms.last_mut() {
        last.1 += 1.0 - total;
    }
    BetaSystem::new(atoms)
}

/// [`quadrature_system`] together with a refinement diagnostic.
pub fn quadrature_with_info(
    dist: &Distribution,
    nodes: usize,
) -> Result<(BetaSystem, QuadratureInfo)> {
    let sys = quadrature_system(dist, nodes)?;
    let refined = quadrature_system(dist, 2 * nodes)?;
    let info = QuadratureInfo {
        nodes,
        r_nodes: sys.r(),
        r_refined: refined.r(),
        certified: false,
    };
    Ok((sys, info))
}
