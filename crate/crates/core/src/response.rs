//! Linear response of the stationary density of a two-map Bernoulli system.
//!
//! Map 1 (slope `β₁`) is chosen with probability `p` and map 0 (slope `β₀`)
//! with probability `1 − p`. A word with `k` ones out of `n` letters carries
//! weight `p^k (1−p)^{n−k} / β_w`, so the series for `φ(p)` and for every
//! `p`-derivative only needs, per depth, the distinct pairs
//! `(τ_w(1), k)` and the sums of `1/β_w` over the words sharing them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta_map::{split, SNAP_TOL};
use crate::error::{Error, Hypothesis, Result};
use crate::iid_density::{build_phi_with, BuildSettings, MERGE_TOL};
use crate::stepfn::StepFunction;
use crate::transfer::BetaSystem;

/// Past this many states a layer is thinned regardless of the budget; the
/// excess is charged to the error bound.
pub const MAX_LAYER_STATES: usize = 1 << 18;

/// Words sharing an orbit point and a count of ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordState {
    pub point: f64,
    pub k: u32,
    /// `Σ 1/β_w` over the merged words.
    pub weight_base: f64,
}

/// Retained word states of depths `1..=depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLayers {
    pub beta0: f64,
    pub beta1: f64,
    /// Parameter at which truncation was certified.
    pub p: f64,
    pub layers: Vec<Vec<WordState>>,
    pub depth: usize,
    /// BV bound on the derivative series beyond `depth`.
    pub series_tail_bv: f64,
    /// BV bound on what the dropped states and their descendants contribute
    /// to `φ` or `∂φ/∂p`.
    pub dropped_bv: f64,
    pub delta: f64,
}

/// `p_c`: 0 when `β₀ ≥ 1`, otherwise the root of `p/β₁ + (1−p)/β₀ = 1`.
pub fn critical_p(beta0: f64, beta1: f64) -> Result<f64> {
    check_betas(beta0, beta1)?;
    if beta0 >= 1.0 {
        return Ok(0.0);
    }
    Ok((1.0 - 1.0 / beta0) / (1.0 / beta1 - 1.0 / beta0))
}

fn check_betas(beta0: f64, beta1: f64) -> Result<()> {
    if !(beta1 > 1.0 && beta1.is_finite()) {
        return Err(Error::Domain {
            what: "beta1",
            value: beta1,
            expected: "> 1",
        });
    }
    if !(beta0 > 0.0 && beta0 <= beta1) {
        return Err(Error::Domain {
            what: "beta0",
            value: beta0,
            expected: "in (0, beta1]",
        });
    }
    Ok(())
}

/// `p/β₁ + (1−p)/β₀`.
pub fn delta(beta0: f64, beta1: f64, p: f64) -> f64 {
    p / beta1 + (1.0 - p) / beta0
}

/// Checks `p ∈ (p_c, 1)` and `δ < 1`, returning `δ`.
pub fn check_domain(beta0: f64, beta1: f64, p: f64) -> Result<f64> {
    let p_c = critical_p(beta0, beta1)?;
    if !(p > p_c && p < 1.0) {
        return Err(Hypothesis::ResponseDomain { p, p_c }.into());
    }
    let d = delta(beta0, beta1, p);
    if d >= 1.0 {
        return Err(Hypothesis::ResponseDelta { delta: d }.into());
    }
    Ok(d)
}

/// BV bound on `Σ_{n>N}` of the derivative series: every depth-`n` layer
/// has total coefficient at most `n δ^{n−1} (1/β₀ + 1/β₁)`, and each indicator
/// has BV norm at most 2.
pub fn derivative_tail(beta0: f64, beta1: f64, delta: f64, n: usize) -> f64 {
    let c = 2.0 * (1.0 / beta0 + 1.0 / beta1);
    let nf = n as f64;
    c * delta.powi(n as i32) * (nf + 1.0 - nf * delta) / (1.0 - delta).powi(2)
}

fn pure_weight(k: u32, n: usize, p: f64) -> f64 {
    p.powi(k as i32) * (1.0 - p).powi(n as i32 - k as i32)
}

/// `∂/∂p [p^k (1−p)^{n−k}]`, with the pure words handled separately.
fn weight_derivative(k: u32, n: usize, p: f64) -> f64 {
    let (k, n) = (k as i32, n as i32);
    if k == n {
        n as f64 * p.powi(n - 1)
    } else if k == 0 {
        -(n as f64) * (1.0 - p).powi(n - 1)
    } else {
        p.powi(k - 1) * (1.0 - p).powi(n - k - 1) * (k as f64 - n as f64 * p)
    }
}

impl ResponseLayers {
    /// Builds the layers with truncation certified to `tol` (BV) at `p`.
    pub fn build(beta0: f64, beta1: f64, p: f64, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::Domain {
                what: "tol",
                value: tol,
                expected: "> 0",
            });
        }
        let d = check_domain(beta0, beta1, p)?;
        let mut n = 1;
        while derivative_tail(beta0, beta1, d, n) > 0.5 * tol {
            n += 1;
        }
        Self::build_to_depth(beta0, beta1, p, n, 0.5 * tol / n as f64)
    }

    /// Builds exactly `depth` layers; `budget` is the BV weight that may be
    /// dropped per layer (0 keeps everything).
    pub fn build_to_depth(
        beta0: f64,
        beta1: f64,
        p: f64,
        depth: usize,
        budget: f64,
    ) -> Result<Self> {
        let d = check_domain(beta0, beta1, p)?;
        Ok(Self::grow(beta0, beta1, p, d, depth, budget))
    }

    fn grow(beta0: f64, beta1: f64, p: f64, d: f64, depth: usize, budget: f64) -> Self {
        let mut layers: Vec<Vec<WordState>> = Vec::with_capacity(depth);
        let mut current = vec![WordState {
            point: 1.0,
            k: 0,
            weight_base: 1.0,
        }];
        let mut dropped_bv = 0.0;
        // Σ_j δ^j and Σ_j j δ^{j−1} bound a dropped state's descendants.
        let geo = 1.0 / (1.0 - d);
        let geo2 = geo * geo;
        let inv_sum = 1.0 / beta0 + 1.0 / beta1;
        for n in 1..=depth {
            let mut next: Vec<WordState> = current
                .par_iter()
                .flat_map_iter(|s| {
                    let (_, t1) = split(beta1, s.point, SNAP_TOL);
                    let (_, t0) = split(beta0, s.point, SNAP_TOL);
                    [
                        WordState {
                            point: t1,
                            k: s.k + 1,
                            weight_base: s.weight_base / beta1,
                        },
                        WordState {
                            point: t0,
                            k: s.k,
                            weight_base: s.weight_base / beta0,
                        },
                    ]
                })
                .filter(|s| s.point > 0.0)
                .collect();
            next.par_sort_by(|a, b| a.k.cmp(&b.k).then(a.point.total_cmp(&b.point)));
            let mut merged: Vec<WordState> = Vec::with_capacity(next.len());
            let mut anchor = f64::NEG_INFINITY;
            for s in next {
                match merged.last_mut() {
                    Some(last) if last.k == s.k && s.point - anchor <= MERGE_TOL => {
                        last.weight_base += s.weight_base;
                    }
                    _ => {
                        anchor = s.point;
                        merged.push(s);
                    }
                }
            }
            if (budget > 0.0 || merged.len() > MAX_LAYER_STATES) && !merged.is_empty() {
                let importance: Vec<f64> = merged
                    .iter()
                    .map(|s| {
                        let m = s.weight_base * pure_weight(s.k, n, p);
                        let kf = s.k as f64;
                        let rate = kf / p + (n as f64 - kf) / (1.0 - p);
                        2.0 * m * (rate * geo + inv_sum * geo2 + geo)
                    })
                    .collect();
                let mut order: Vec<usize> = (0..merged.len()).collect();
                order.par_sort_by(|&i, &j| importance[i].total_cmp(&importance[j]).then(i.cmp(&j)));
                let mut keep = vec![true; merged.len()];
                let mut spent = 0.0;
                let must_drop = merged.len().saturating_sub(MAX_LAYER_STATES);
                for (rank, &i) in order.iter().enumerate() {
                    if rank >= must_drop && spent + importance[i] > budget {
                        break;
                    }
                    spent += importance[i];
                    keep[i] = false;
                }
                dropped_bv += spent;
                let mut idx = 0;
                merged.retain(|_| {
                    idx += 1;
                    keep[idx - 1]
                });
            }
            log::debug!("response layer {n}: {} states", merged.len());
            layers.push(merged.clone());
            current = merged;
            if current.is_empty() {
                // every later layer is empty too
                layers.resize(depth, Vec::new());
                break;
            }
        }
        let series_tail_bv = if current.is_empty() {
            0.0
        } else {
            derivative_tail(beta0, beta1, d, depth)
        };
        ResponseLayers {
            beta0,
            beta1,
            p,
            layers,
            depth,
            series_tail_bv,
            dropped_bv,
            delta: d,
        }
    }

    pub fn num_states(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Certified BV error of `dphi_at(self.p)`.
    pub fn tail_bound(&self) -> f64 {
        self.series_tail_bv + self.dropped_bv
    }

    /// BV error of `phi_at(self.p)`: tail `2δ^{N+1}/(1−δ)` plus dropped weight.
    pub fn phi_tail_bound(&self) -> f64 {
        let t = if self.layers.last().is_some_and(|l| !l.is_empty()) {
            2.0 * self.delta.powi(self.depth as i32 + 1) / (1.0 - self.delta)
        } else {
            0.0
        };
        t + self.dropped_bv
    }

    fn terms(&self, f: impl Fn(u32, usize) -> f64 + Sync) -> Vec<(f64, f64)> {
        self.layers
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, layer)| {
                let f = &f;
                layer
                    .iter()
                    .map(move |s| (s.point, s.weight_base * f(s.k, i + 1)))
            })
            .collect()
    }

    /// Truncated `φ(q)` over the retained words.
    pub fn phi_at(&self, q: f64) -> StepFunction {
        StepFunction::from_indicators(1.0, self.terms(|k, n| pure_weight(k, n, q)))
    }

    /// Truncated `∂φ/∂p` at `q`.
    pub fn dphi_at(&self, q: f64) -> StepFunction {
        StepFunction::from_indicators(0.0, self.terms(|k, n| weight_derivative(k, n, q)))
    }

    /// `∫φ(q)`.
    pub fn norm_at(&self, q: f64) -> f64 {
        1.0 + self
            .terms(|k, n| pure_weight(k, n, q))
            .iter()
            .map(|(x, c)| x * c)
            .sum::<f64>()
    }

    /// `∂/∂p ∫φ` at `q`: the derivative series with each indicator replaced
    /// by its integral.
    pub fn dnorm_at(&self, q: f64) -> f64 {
        self.terms(|k, n| weight_derivative(k, n, q))
            .iter()
            .map(|(x, c)| x * c)
            .sum()
    }

    /// `(φ′∫φ − φ(∫φ)′)/(∫φ)²` at `q`.
    pub fn dh_at(&self, q: f64) -> StepFunction {
        let phi = self.phi_at(q);
        let dphi = self.dphi_at(q);
        // the integrals of the very functions being combined, so that the
        // mass of the result cancels to rounding
        let i = phi.integral();
        let di = dphi.integral();
        StepFunction::linear_combine(&[(1.0 / i, &dphi), (-di / (i * i), &phi)])
    }

    /// Sum of `|∂/∂p weight|` over the mixed words of depth `n`.
    pub fn mixed_layer_abs_coefficient(&self, n: usize) -> f64 {
        self.layers[n - 1]
            .iter()
            .filter(|s| s.k != 0 && s.k as usize != n)
            .map(|s| (s.weight_base * weight_derivative(s.k, n, self.p)).abs())
            .sum()
    }
}

pub fn dphi_dp(beta0: f64, beta1: f64, p: f64, tol: f64) -> Result<StepFunction> {
    Ok(ResponseLayers::build(beta0, beta1, p, tol)?.dphi_at(p))
}

pub fn dnorm_dp(beta0: f64, beta1: f64, p: f64, tol: f64) -> Result<f64> {
    Ok(ResponseLayers::build(beta0, beta1, p, tol)?.dnorm_at(p))
}

pub fn dh_dp(beta0: f64, beta1: f64, p: f64, tol: f64) -> Result<StepFunction> {
    Ok(ResponseLayers::build(beta0, beta1, p, tol)?.dh_at(p))
}

/// Analytic derivatives against central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub p: f64,
    pub p_c: f64,
    pub delta: f64,
    pub eps: f64,
    pub depth: usize,
    pub states: usize,
    pub tail_bound: f64,
    pub norm: f64,
    pub dnorm_dp: f64,
    /// Central difference of `∫φ` over the same retained words.
    pub fd_dnorm_dp: f64,
    /// The same difference with step `2ε`.
    pub fd2_dnorm_dp: f64,
    pub dnorm_gap: f64,
    pub max_l1_gap_dphi: f64,
    pub max_l1_gap_dh: f64,
    /// Curvature constant `A` in `FD(ε) − analytic ≈ Aε²`, from `FD(2ε) − FD(ε) ≈ 3Aε²`.
    pub richardson_a: f64,
    /// `|analytic − FD(ε)| ≤ 2|A|ε² + 2·tail + rounding`.
    pub richardson_consistent: bool,
    /// Central differences of densities built independently at `p ± ε`.
    pub independent_dnorm_gap: f64,
    pub independent_l1_gap_dphi: f64,
    pub independent_l1_gap_dh: f64,
    pub dh_mass: f64,
}

pub fn fd_check(beta0: f64, beta1: f64, p: f64, eps: f64, tol: f64) -> Result<FdReport> {
    fd_check_on(&ResponseLayers::build(beta0, beta1, p, tol)?, eps, tol)
}

/// [`fd_check`] on layers already built at their own `p`; `tol` sets the
/// independent density builds.
pub fn fd_check_on(layers: &ResponseLayers, eps: f64, tol: f64) -> Result<FdReport> {
    let (beta0, beta1, p) = (layers.beta0, layers.beta1, layers.p);
    if !(eps > 0.0 && p - 2.0 * eps > 0.0 && p + 2.0 * eps < 1.0) {
        return Err(Error::Domain {
            what: "eps",
            value: eps,
            expected: "> 0 with p ± 2eps inside (0, 1)",
        });
    }
    let p_c = critical_p(beta0, beta1)?;
    let central = |e: f64| {
        let (lo, hi) = (layers.phi_at(p - e), layers.phi_at(p + e));
        let (nlo, nhi) = (layers.norm_at(p - e), layers.norm_at(p + e));
        let dphi = StepFunction::linear_combine(&[(0.5 / e, &hi), (-0.5 / e, &lo)]);
        let dh = StepFunction::linear_combine(&[(0.5 / (e * nhi), &hi), (-0.5 / (e * nlo), &lo)]);
        ((nhi - nlo) / (2.0 * e), dphi, dh)
    };
    let (fd1, fd_dphi, fd_dh) = central(eps);
    let (fd2, _, _) = central(2.0 * eps);
    let analytic = layers.dnorm_at(p);
    let dphi = layers.dphi_at(p);
    let dh = layers.dh_at(p);
    let a = (fd2 - fd1) / (3.0 * eps * eps);
    let gap = (analytic - fd1).abs();
    let rounding = 1e-13 * (1.0 + layers.norm_at(p)) / eps;
    let richardson_consistent =
        gap <= 2.0 * a.abs() * eps * eps + 2.0 * layers.tail_bound() + rounding;

    // independent builds on each side
    let side = |q: f64| -> Result<(StepFunction, f64)> {
        let sys = BetaSystem::new(vec![(beta0, 1.0 - q), (beta1, q)])?;
        let rep = build_phi_with(&sys, &BuildSettings::new(tol))?;
        let i = 1.0 + rep.series_sum;
        Ok((rep.phi, i))
    };
    let (phi_hi, i_hi) = side(p + eps)?;
    let (phi_lo, i_lo) = side(p - eps)?;
    let ind_dphi = StepFunction::linear_combine(&[(0.5 / eps, &phi_hi), (-0.5 / eps, &phi_lo)]);
    let ind_dh = StepFunction::linear_combine(&[
        (0.5 / (eps * i_hi), &phi_hi),
        (-0.5 / (eps * i_lo), &phi_lo),
    ]);
    Ok(FdReport {
        p,
        p_c,
        delta: layers.delta,
        eps,
        depth: layers.depth,
        states: layers.num_states(),
        tail_bound: layers.tail_bound(),
        norm: layers.norm_at(p),
        dnorm_dp: analytic,
        fd_dnorm_dp: fd1,
        fd2_dnorm_dp: fd2,
        dnorm_gap: gap,
        max_l1_gap_dphi: dphi.l1_distance(&fd_dphi),
        max_l1_gap_dh: dh.l1_distance(&fd_dh),
        richardson_a: a,
        richardson_consistent,
        independent_dnorm_gap: (analytic - (i_hi - i_lo) / (2.0 * eps)).abs(),
        independent_l1_gap_dphi: dphi.l1_distance(&ind_dphi),
        independent_l1_gap_dh: dh.l1_distance(&ind_dh),
        dh_mass: dh.integral(),
    })
}
