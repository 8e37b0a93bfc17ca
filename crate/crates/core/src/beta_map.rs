//! Beta-transformations `T_β(x) = βx − ⌊βx⌋` on `[0, 1]`: single steps,
//! digits, orbits of 1, compositions along words and random multiple-base
//! expansions.
//!
//! Every step goes through [`split`], which forms the product `βx` exactly
//! (as an unevaluated sum of two doubles) before flooring. Products that land
//! within a relative [`SNAP_TOL`] of an integer are snapped onto it, so that
//! orbits of simple numbers such as the golden ratio terminate at 0 instead
//! of wandering off on a rounding error.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transfer::BetaSystem;

/// Relative distance to an integer below which `βx` is treated as that integer.
pub const SNAP_TOL: f64 = 1e-12;

/// Slack allowed on the `[0, 1]` domain check before inputs are rejected.
const DOMAIN_SLACK: f64 = 1e-12;

/// Slope of a beta-transformation.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Beta(f64);

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Beta(value))
        } else {
            Err(Error::Domain {
                what: "beta",
                value,
                expected: "finite and > 0",
            })
        }
    }

    /// The golden ratio `(1 + √5) / 2`.
    pub fn golden() -> Self {
        Beta((1.0 + 5f64.sqrt()) / 2.0)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Largest digit the map can emit, `⌊β⌋`.
    pub fn max_digit(self) -> u64 {
        self.0.floor() as u64
    }
}

impl TryFrom<f64> for Beta {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Beta::new(value)
    }
}

impl From<Beta> for f64 {
    fn from(b: Beta) -> f64 {
        b.0
    }
}

/// Splits `beta * x` into `(digit, fractional part)` using the exact product.
///
/// The result satisfies `beta * x = digit + frac` up to one rounding of
/// `frac`, with `frac ∈ [0, 1)`. When the exact product is within
/// `snap_tol · max(1, βx)` of an integer `k`, returns `(k, 0)`.
#[inline]
pub fn split(beta: f64, x: f64, snap_tol: f64) -> (f64, f64) {
    let p = beta * x;
    // beta * x == p + e exactly
    let e = beta.mul_add(x, -p);
    let k = p.round();
    if ((p - k) + e).abs() <= snap_tol * p.abs().max(1.0) {
        return (k.max(0.0), 0.0);
    }
    let mut d = p.floor();
    if p == d && e < 0.0 {
        d -= 1.0;
    }
    let mut frac = (p - d) + e;
    if frac >= 1.0 {
        frac = 1.0f64.next_down();
    } else if frac < 0.0 {
        frac = 0.0;
    }
    (d, frac)
}

fn clamp_unit(what: &'static str, x: f64) -> Result<f64> {
    if (-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&x) {
        Ok(x.clamp(0.0, 1.0))
    } else {
        Err(Error::Domain {
            what,
            value: x,
            expected: "[0, 1]",
        })
    }
}

/// `T_β(x)`.
pub fn apply(beta: Beta, x: f64) -> Result<f64> {
    let x = clamp_unit("x", x)?;
    Ok(split(beta.0, x, SNAP_TOL).1)
}

/// `⌊βx⌋`, the digit emitted by one step of `T_β`.
pub fn digit(beta: Beta, x: f64) -> Result<u64> {
    let x = clamp_unit("x", x)?;
    Ok(split(beta.0, x, SNAP_TOL).0 as u64)
}

/// `T_{ω_n} ∘ … ∘ T_{ω_1}(x)`: the first slope acts first.
pub fn word_apply(betas: &[Beta], x: f64) -> Result<f64> {
    if betas.is_empty() {
        return Err(Error::InvalidSystem("empty word".into()));
    }
    let x = clamp_unit("x", x)?;
    Ok(betas.iter().fold(x, |y, b| split(b.0, y, SNAP_TOL).1))
}

fn orbit_cache() -> &'static RwLock<HashMap<u64, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<RwLock<HashMap<u64, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// `[1, T(1), …, T^n(1)]` in double precision, memoized per slope.
pub fn orbit_of_one(beta: Beta, n: usize) -> Arc<Vec<f64>> {
    let key = beta.0.to_bits();
    if let Some(hit) = orbit_cache()
        .read()
        .expect("orbit cache poisoned")
        .get(&key)
    {
        if hit.len() > n {
            return Arc::clone(hit);
        }
    }
    let mut orbit = Vec::with_capacity(n + 1);
    orbit.push(1.0);
    let mut x = 1.0;
    for _ in 0..n {
        if x != 0.0 {
            x = split(beta.0, x, SNAP_TOL).1;
        }
        orbit.push(x);
    }
    let orbit = Arc::new(orbit);
    let mut cache = orbit_cache().write().expect("orbit cache poisoned");
    let slot = cache.entry(key).or_insert_with(|| Arc::clone(&orbit));
    if slot.len() < orbit.len() {
        *slot = Arc::clone(&orbit);
    }
    orbit
}

/// Arithmetic used for orbits that are recomputed from a rational slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "bits")]
pub enum OrbitPrecision {
    /// Plain `f64` steps through [`split`].
    Double,
    /// Exact rational steps, truncated to `bits` binary fraction digits after
    /// every step.
    Fixed(u32),
    /// Exact rational arithmetic.
    Exact,
}

impl OrbitPrecision {
    /// Maps a `--precision <bits>` setting onto a mode: 53 or less is plain
    /// double precision, anything larger is fixed-point with that many bits.
    pub fn from_bits(bits: u32) -> Self {
        if bits <= 53 {
            OrbitPrecision::Double
        } else {
            OrbitPrecision::Fixed(bits)
        }
    }
}

/// Exact orbit `[1, T(1), …, T^n(1)]` of a rational slope.
pub fn orbit_of_one_exact(beta: &BigRational, n: usize) -> Vec<BigRational> {
    let mut out = Vec::with_capacity(n + 1);
    let mut x = BigRational::one();
    out.push(x.clone());
    for _ in 0..n {
        if !x.is_zero() {
            let y = beta * &x;
            x = &y - y.floor();
        }
        out.push(x.clone());
    }
    out
}

/// Orbit of 1 for a rational slope under the requested arithmetic, rounded
/// to `f64` at the end.
pub fn orbit_of_one_with(
    beta: &BigRational,
    n: usize,
    precision: OrbitPrecision,
) -> Result<Vec<f64>> {
    if beta <= &BigRational::zero() {
        return Err(Error::Domain {
            what: "beta",
            value: beta.to_f64().unwrap_or(f64::NAN),
            expected: "> 0",
        });
    }
    let to_f64 = |q: &BigRational| q.to_f64().unwrap_or(f64::NAN);
    match precision {
        OrbitPrecision::Double => {
            let b = Beta::new(to_f64(beta))?;
            Ok(orbit_of_one(b, n)[..=n].to_vec())
        }
        OrbitPrecision::Exact => Ok(orbit_of_one_exact(beta, n).iter().map(to_f64).collect()),
        OrbitPrecision::Fixed(bits) => {
            let scale = BigInt::one() << bits;
            let mut out = Vec::with_capacity(n + 1);
            let mut x = BigRational::one();
            out.push(1.0);
            for _ in 0..n {
                if !x.is_zero() {
                    let y = beta * &x;
                    let frac = &y - y.floor();
                    let scaled = (frac * BigRational::from_integer(scale.clone())).floor();
                    x = scaled / BigRational::from_integer(scale.clone());
                }
                out.push(to_f64(&x));
            }
            Ok(out)
        }
    }
}

/// Exact rational value of a double.
pub fn rational_of(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or(Error::Domain {
        what: "value",
        value: x,
        expected: "finite",
    })
}

/// Digits and partial sums of the multiple-base expansion of `x` along a
/// forward path of slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub digits: Vec<u64>,
    pub partial_sums: Vec<f64>,
    /// `β^{(n)}`, the product of the first `n` slopes.
    pub cumulative_products: Vec<f64>,
    /// `1 / β^{(N)}`.
    pub remainder_bound: f64,
    /// `τ^N(x) / β^{(N)}`, the exact remainder of the truncated expansion.
    pub remainder: f64,
    /// Birkhoff average of `log(1/β)` over the path.
    pub log_mean: f64,
    /// Set when the path is not expanding in mean (`log_mean ≥ 0`).
    pub not_expanding_in_mean: bool,
}

/// Expands `x` in the bases `path[0], path[1], …` to depth `depth`.
///
/// Logs a warning, but does not fail, when the empirical mean of `log(1/β)`
/// over the path is not negative.
pub fn expand(path: &[f64], x: f64, depth: usize) -> Result<ExpansionRecord> {
    if path.len() < depth {
        return Err(Error::InvalidSystem(format!(
            "path has {} slopes, expansion depth is {depth}",
            path.len()
        )));
    }
    let betas = path[..depth]
        .iter()
        .map(|&b| Beta::new(b))
        .collect::<Result<Vec<_>>>()?;
    let mut y = clamp_unit("x", x)?;
    let mut digits = Vec::with_capacity(depth);
    let mut partial_sums = Vec::with_capacity(depth);
    let mut cumulative_products = Vec::with_capacity(depth);
    let mut prod = 1.0;
    let mut sum = 0.0;
    for b in &betas {
        let (d, next) = split(b.0, y, SNAP_TOL);
        prod *= b.0;
        sum += d / prod;
        digits.push(d as u64);
        partial_sums.push(sum);
        cumulative_products.push(prod);
        y = next;
    }
    let log_mean = if depth == 0 {
        0.0
    } else {
        betas.iter().map(|b| -b.0.ln()).sum::<f64>() / depth as f64
    };
    let not_expanding_in_mean = depth > 0 && log_mean >= 0.0;
    if not_expanding_in_mean {
        log::warn!(
            "path is not expanding in mean (average log(1/β) = {log_mean}); \
             the expansion need not converge"
        );
    }
    Ok(ExpansionRecord {
        digits,
        partial_sums,
        cumulative_products,
        remainder_bound: 1.0 / prod,
        remainder: y / prod,
        log_mean,
        not_expanding_in_mean,
    })
}

/// Expansion conditions of an i.i.d. system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanExpansion {
    /// `Σ pᵢ log(1/βᵢ)`.
    pub log_mean: f64,
    /// `Σ pᵢ / βᵢ`.
    pub r: f64,
    pub log_mean_negative: bool,
    pub r_below_one: bool,
}

pub fn mean_expanding_check(system: &BetaSystem) -> MeanExpansion {
    let log_mean = system
        .atoms()
        .iter()
        .map(|a| -a.prob * a.beta.value().ln())
        .sum::<f64>();
    let r = system.r();
    MeanExpansion {
        log_mean,
        r,
        log_mean_negative: log_mean < 0.0,
        r_below_one: r < 1.0,
    }
}
