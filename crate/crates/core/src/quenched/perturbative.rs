//! Inverting `I + S` near a fixed non-simple slope `β₀`.
//!
//! With `U f(ω) = f(θ^{-1}ω)`, write `I + S = V − E` where
//! `V = ξ(U)`, `ξ(z) = Σ_n T^n_{β₀}(1) β₀^{-n} zⁿ`, and
//! `E f(ω) = Σ_{m≥1} (ξ_m − w_m(ω)) f(θ^{-m}ω)`. Then
//! `c = V⁻¹ Σ_k (E V⁻¹)^k 1` whenever `‖E‖·‖V⁻¹‖ < 1`, and
//! `V⁻¹ = χ(U)` with `χ = 1/ξ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta_map::{orbit_of_one, split, SNAP_TOL};
use crate::error::{Error, Hypothesis, Result};
use crate::quenched::noise::{NoiseModel, SamplePoint};
use crate::quenched::series::CWindow;
use crate::quenched::weights::BackwardTable;
use crate::Beta;

/// A truncated power series `Σ_{n≤D} a_n zⁿ` with an estimate of
/// `Σ_{n>D} |a_n|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSeries {
    pub coeffs: Vec<f64>,
    /// `Σ_{n≤D} a_n`.
    pub eval_at_1: f64,
    /// `Σ_{n≤D} |a_n|`.
    pub abs_sum: f64,
    pub tail_estimate: f64,
    /// Whether `tail_estimate` is a proven bound rather than an
    /// extrapolation.
    pub tail_rigorous: bool,
    /// Fitted geometric decay rate of `|a_n|`, if any.
    pub decay_ratio: Option<f64>,
}

impl PowerSeries {
    pub fn depth(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `Σ |a_n|` including the tail estimate.
    pub fn abs_bound(&self) -> f64 {
        self.abs_sum + self.tail_estimate
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * z + a)
    }

    fn from_coeffs(
        coeffs: Vec<f64>,
        tail_estimate: f64,
        tail_rigorous: bool,
        decay_ratio: Option<f64>,
    ) -> Self {
        PowerSeries {
            eval_at_1: coeffs.iter().sum(),
            abs_sum: coeffs.iter().map(|a| a.abs()).sum(),
            coeffs,
            tail_estimate,
            tail_rigorous,
            decay_ratio,
        }
    }
}

fn check_beta0(beta0: f64) -> Result<Beta> {
    if !(beta0 > 1.0) || !beta0.is_finite() {
        return Err(Hypothesis::NotExpanding { beta0 }.into());
    }
    Beta::new(beta0)
}

/// `ξ_{β₀}` to depth `D`. Fails if `T^n_{β₀}(1) = 0` for some `n ≤ D`.
pub fn xi_series(beta0: f64, depth: usize) -> Result<PowerSeries> {
    let beta = check_beta0(beta0)?;
    let orbit = orbit_of_one(beta, depth);
    if let Some(n) = orbit[..=depth].iter().position(|&x| x == 0.0) {
        return Err(Hypothesis::SimpleNumber { beta0, depth: n }.into());
    }
    let mut scale = 1.0;
    let coeffs = orbit[..=depth]
        .iter()
        .enumerate()
        .map(|(n, &x)| {
            if n > 0 {
                scale /= beta0;
            }
            x * scale
        })
        .collect();
    let tail = beta0.powi(-(depth as i32)) / (beta0 - 1.0);
    Ok(PowerSeries::from_coeffs(
        coeffs,
        tail,
        true,
        Some(1.0 / beta0),
    ))
}

/// Coefficients of `1/ξ` to the depth of `xi`.
///
/// The tail is extrapolated from the geometric decay of the computed
/// coefficients and is not a proof.
pub fn chi_series(xi: &PowerSeries) -> PowerSeries {
    let d = xi.depth();
    let a = &xi.coeffs;
    let mut t = vec![0.0; d + 1];
    t[0] = 1.0 / a[0];
    for n in 1..=d {
        let s: f64 = (1..=n).map(|k| a[k] * t[n - k]).sum();
        t[n] = -s / a[0];
    }
    let (ratio, tail) = extrapolate_tail(&t);
    PowerSeries::from_coeffs(t, tail, false, ratio)
}

/// Fits `|a_n| ≈ C ρⁿ` to the running envelope above the rounding floor.
fn extrapolate_tail(a: &[f64]) -> (Option<f64>, f64) {
    let d = a.len() - 1;
    let mut env = vec![0.0; d + 1];
    let mut m: f64 = 0.0;
    for n in (0..=d).rev() {
        m = m.max(a[n].abs());
        env[n] = m;
    }
    let scale: f64 = a.iter().map(|x| x.abs()).sum();
    let floor = 1e-13 * scale;
    let hi = match env.iter().rposition(|&e| e > floor) {
        Some(i) => i,
        None => return (Some(0.0), 0.0),
    };
    let lo = hi / 2;
    if hi == lo || env[lo] == 0.0 {
        return (None, env[d] * d as f64);
    }
    let ratio = (env[hi] / env[lo]).powf(1.0 / (hi - lo) as f64);
    if !(ratio < 1.0) {
        return (None, f64::INFINITY);
    }
    // envelope is not below rounding noise past `hi`
    let from_d = env[d].max(env[hi] * ratio.powi((d - hi) as i32));
    (Some(ratio), from_d * ratio / (1.0 - ratio))
}

/// `min_{|z|=1} |ξ_D(z)|` on an even grid, with the bound on `|ξ − ξ_D|`.
pub fn xi_min_modulus_on_circle(xi: &PowerSeries, grid: usize) -> (f64, f64) {
    let min = (0..grid)
        .into_par_iter()
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / grid as f64;
            let (c, s) = (th.cos(), th.sin());
            let (re, im) = xi.coeffs.iter().rev().fold((0.0, 0.0), |(re, im), &a| {
                (re * c - im * s + a, re * s + im * c)
            });
            re.hypot(im)
        })
        .reduce(|| f64::INFINITY, f64::min);
    (min, xi.tail_estimate)
}

/// Radius of the admissible window around `β₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epsilon0Report {
    pub beta0: f64,
    pub eps0: f64,
    /// Largest certified `δ` keeping the first `N + 1` digits of 1.
    pub delta: f64,
    /// `½ min(frac β₀, 1 − frac β₀)`.
    pub eps1: f64,
    /// `¼ (β₀ − 1)(⌊β₀⌋ − 1 + frac β₀ / 2) / B`.
    pub eps2: f64,
    /// Least `N` with `2/(β₀^N (β₀ − 1)) < 1/(2B)`.
    pub n: usize,
    /// `Σ |χ_n|`.
    pub b: f64,
    pub b_rigorous: bool,
    pub chi_depth: usize,
    pub chi_at_1: f64,
}

/// Digits `a_n = ⌊β₀ T^{n−1}(1)⌋`, `n = 1..=len`.
fn digits_of_one(beta0: f64, len: usize) -> Vec<f64> {
    let mut x = 1.0;
    (0..len)
        .map(|_| {
            let (d, next) = split(beta0, x, SNAP_TOL);
            x = next;
            d
        })
        .collect()
}

/// Whether `P_n(β) = βP_{n−1}(β) − a_n`, `P_0 = 1`, stays in `(0, 1)` for all
/// `β ∈ [lo, hi]`, using outward-rounded interval arithmetic.
fn digits_stable(lo: f64, hi: f64, digits: &[f64]) -> bool {
    let (mut pl, mut ph) = (1.0f64, 1.0f64);
    for &a in digits {
        pl = ((lo * pl).next_down() - a).next_down();
        ph = ((hi * ph).next_up() - a).next_up();
        if !(pl > 0.0 && ph < 1.0) {
            return false;
        }
    }
    true
}

pub fn epsilon0(beta0: f64, chi_depth: usize) -> Result<Epsilon0Report> {
    let xi = xi_series(beta0, chi_depth)?;
    let chi = chi_series(&xi);
    let b = chi.abs_bound();
    if !b.is_finite() {
        return Err(Error::Precision(format!(
            "coefficients of 1/ξ do not decay within depth {chi_depth}"
        )));
    }
    let target = 1.0 / (2.0 * b);
    let mut n = 1usize;
    while 2.0 / (beta0.powi(n as i32) * (beta0 - 1.0)) >= target {
        n += 1;
    }
    let digits = digits_of_one(beta0, n + 1);
    let frac = beta0.fract();
    let span = frac.min(1.0 - frac);
    if !digits_stable(beta0, beta0, &digits) {
        return Err(Error::Precision(format!(
            "digits of 1 under β0 = {beta0} are not stable at the point itself"
        )));
    }
    let delta = if digits_stable(beta0 - span, beta0 + span, &digits) {
        span
    } else {
        let (mut ok, mut bad) = (0.0, span);
        for _ in 0..200 {
            let mid = 0.5 * (ok + bad);
            if mid == ok || mid == bad {
                break;
            }
            if digits_stable(beta0 - mid, beta0 + mid, &digits) {
                ok = mid;
            } else {
                bad = mid;
            }
        }
        ok
    };
    let eps1 = 0.5 * span;
    let eps2 = 0.25 * (beta0 - 1.0) * (beta0.floor() - 1.0 + frac / 2.0) / b;
    Ok(Epsilon0Report {
        beta0,
        eps0: delta.min(eps1).min(eps2),
        delta,
        eps1,
        eps2,
        n,
        b,
        b_rigorous: chi.tail_rigorous,
        chi_depth,
        chi_at_1: chi.eval_at_1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbativeSettings {
    pub beta0: f64,
    /// Number of `E V⁻¹` factors `K`.
    pub outer: usize,
    /// Depth `M` of `E`.
    pub inner: usize,
    /// Depth of `ξ` and `χ`.
    pub chi_depth: usize,
}

impl PerturbativeSettings {
    pub fn new(beta0: f64) -> Self {
        PerturbativeSettings {
            beta0,
            outer: 6,
            inner: 120,
            chi_depth: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbativeReport {
    pub c: f64,
    pub tail_bound: f64,
    /// `B · (sup_j Σ_{m≤M} |ξ_m − w_m| + tails)` over the window.
    pub q: f64,
    /// `B · (1/(2B) + 2ε/((β₀−1)(β₀−ε−1)))` with `ε = sup |β − β₀|`.
    pub q_a_priori: f64,
    pub e_norm: f64,
    pub b: f64,
    pub b_rigorous: bool,
    /// `‖V⁻¹ − V_D⁻¹‖` estimate.
    pub eps_v: f64,
    pub v_depth: usize,
    pub window: Epsilon0Report,
    pub outer: usize,
    pub inner: usize,
}

/// `c` on offsets `0..=extra` at `omega`.
pub fn c_perturbative_window(
    model: &NoiseModel,
    omega: &SamplePoint,
    settings: &PerturbativeSettings,
    extra: usize,
) -> Result<(CWindow, PerturbativeReport)> {
    let PerturbativeSettings {
        beta0,
        outer,
        inner,
        chi_depth,
    } = *settings;
    if inner == 0 || inner > chi_depth {
        return Err(Error::Domain {
            what: "inner depth",
            value: inner as f64,
            expected: "1..=chi depth",
        });
    }
    let eps = epsilon0(beta0, chi_depth)?;
    let xi = xi_series(beta0, chi_depth)?;
    let chi = chi_series(&xi);
    let b = eps.b;

    // trim χ where its coefficients stop mattering
    let cut = 1e-18 * b;
    let v_depth = chi
        .coeffs
        .iter()
        .rposition(|t| t.abs() > cut)
        .unwrap_or(0)
        .max(1);
    let t = &chi.coeffs[..=v_depth];
    let eps_v = chi.coeffs[v_depth + 1..]
        .iter()
        .map(|x| x.abs())
        .sum::<f64>()
        + chi.tail_estimate;

    let rows = extra + 1 + v_depth + outer * (v_depth + inner);
    let table = BackwardTable::build(model, omega, rows, inner)?;

    let (lo, hi) = model.beta_range();
    let dev = (beta0 - lo).max(hi - beta0);
    if !(dev < eps.eps0) {
        let betas = table.betas();
        let (offset, beta) = betas
            .iter()
            .enumerate()
            .find(|(_, &x)| (x - beta0).abs() >= eps.eps0)
            .map(|(i, &x)| (-(i as i64), x))
            .unwrap_or((0, if beta0 - lo > hi - beta0 { lo } else { hi }));
        return Err(Hypothesis::OutsideWindow {
            beta,
            beta0,
            eps0: eps.eps0,
            offset,
        }
        .into());
    }

    let xi_m = &xi.coeffs;
    let window_sup = (0..rows)
        .map(|j| {
            let w = table.w_row(j);
            (1..=inner).map(|m| (xi_m[m] - w[m]).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max);
    let gamma = lo;
    let tail_e =
        beta0.powi(-(inner as i32)) / (beta0 - 1.0) + gamma.powi(-(inner as i32)) / (gamma - 1.0);
    let e_norm = window_sup + tail_e;
    let q = e_norm * b;
    if !(q < 1.0) {
        return Err(Hypothesis::NoContraction { q }.into());
    }
    let q_a_priori = b * (1.0 / (2.0 * b) + 2.0 * dev / ((beta0 - 1.0) * (beta0 - dev - 1.0)));

    let v_inv = |f: &[f64]| -> Vec<f64> {
        let len = f.len() - v_depth;
        (0..len)
            .into_par_iter()
            .map(|j| (0..=v_depth).map(|n| t[n] * f[j + n]).sum())
            .collect()
    };
    let e_apply = |f: &[f64]| -> Vec<f64> {
        let len = f.len() - inner;
        (0..len)
            .into_par_iter()
            .map(|j| {
                let w = table.w_row(j);
                (1..=inner).map(|m| (xi_m[m] - w[m]) * f[j + m]).sum()
            })
            .collect()
    };

    let mut g = vec![1.0; rows];
    let mut sum = g.clone();
    for _ in 0..outer {
        g = e_apply(&v_inv(&g));
        sum.truncate(g.len());
        for (s, x) in sum.iter_mut().zip(&g) {
            *s += x;
        }
    }
    let mut c = v_inv(&sum);
    c.truncate(extra + 1);

    let eta = tail_e * b + e_norm * eps_v;
    let tail_bound =
        b * q.powi(outer as i32 + 1) / (1.0 - q) + b * eta / (1.0 - q).powi(2) + eps_v / (1.0 - q);
    let report = PerturbativeReport {
        c: c[0],
        tail_bound,
        q,
        q_a_priori,
        e_norm,
        b,
        b_rigorous: eps.b_rigorous,
        eps_v,
        v_depth,
        window: eps,
        outer,
        inner,
    };
    let window = CWindow {
        values: c,
        error: tail_bound,
        sup: b / (1.0 - q),
    };
    Ok((window, report))
}

pub fn c_perturbative(
    model: &NoiseModel,
    omega: &SamplePoint,
    settings: &PerturbativeSettings,
) -> Result<PerturbativeReport> {
    Ok(c_perturbative_window(model, omega, settings, 0)?.1)
}
