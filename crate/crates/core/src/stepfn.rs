//! Right-continuous step functions on `[0, 1]`.
//!
//! A [`StepFunction`] is stored canonically: breakpoints strictly increase
//! from 0 to 1, no cell is shorter than [`FUSE_TOL`], and adjacent cells
//! carry different values. Two functions equal almost everywhere therefore
//! share one representation, which is what lets densities, indicator series
//! and transfer-operator images all be compared and combined exactly.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Error, Result};

/// Breakpoints closer than this are fused.
pub const FUSE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

/// A cell `[left, right)` and the value taken on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub left: f64,
    pub right: f64,
    pub value: f64,
}

impl Cell {
    pub fn len(&self) -> f64 {
        self.right - self.left
    }
}

impl StepFunction {
    /// Builds and canonicalizes a step function from raw cells.
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::InvalidStepFunction(format!(
                "{} breakpoints for {} values",
                breaks.len(),
                values.len()
            )));
        }
        if breaks[0] != 0.0 || *breaks.last().unwrap() != 1.0 {
            return Err(Error::InvalidStepFunction(
                "breakpoints must run from 0 to 1".into(),
            ));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidStepFunction(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidStepFunction("non-finite value".into()));
        }
        Ok(Self::canonical(breaks, values))
    }

    pub fn constant(c: f64) -> Self {
        StepFunction {
            breaks: vec![0.0, 1.0],
            values: vec![c],
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `1_{[0,a]}` in its right-continuous version: 1 on `[0, a)`, 0 on `[a, 1)`.
    pub fn indicator(a: f64) -> Result<Self> {
        check_unit("a", a)?;
        Ok(Self::from_indicators(0.0, [(a, 1.0)]))
    }

    /// `constant + Σ c·1_{[0,a]}`.
    ///
    /// Points at or below 0 contribute nothing (the indicator is a.e. zero);
    /// points at or above 1 contribute a constant.
    pub fn from_indicators<I>(constant: f64, terms: I) -> Self
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut base = constant;
        let mut inner: Vec<(f64, f64)> = Vec::new();
        for (a, c) in terms {
            if a >= 1.0 {
                base += c;
            } else if a > 0.0 && c != 0.0 {
                inner.push((a, c));
            }
        }
        inner.sort_by(|x, y| x.0.total_cmp(&y.0));
        // Group equal points so each breakpoint appears once.
        let mut points: Vec<f64> = Vec::with_capacity(inner.len());
        let mut coefs: Vec<f64> = Vec::with_capacity(inner.len());
        for (a, c) in inner {
            if points.last() == Some(&a) {
                *coefs.last_mut().unwrap() += c;
            } else {
                points.push(a);
                coefs.push(c);
            }
        }
        let k = points.len();
        let mut values = vec![0.0; k + 1];
        let mut acc = base;
        values[k] = acc;
        for i in (0..k).rev() {
            acc += coefs[i];
            values[i] = acc;
        }
        let mut breaks = Vec::with_capacity(k + 2);
        breaks.push(0.0);
        breaks.extend_from_slice(&points);
        breaks.push(1.0);
        Self::canonical(breaks, values)
    }

    /// `Σ c·f`.
    pub fn linear_combine(terms: &[(f64, &StepFunction)]) -> Self {
        let mut breaks: Vec<f64> = terms
            .iter()
            .flat_map(|(_, f)| f.breaks.iter().copied())
            .collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        if breaks.len() < 2 {
            return Self::zero();
        }
        let mut cursors = vec![0usize; terms.len()];
        let mut values = Vec::with_capacity(breaks.len() - 1);
        for w in breaks.windows(2) {
            let left = w[0];
            let mut v = 0.0;
            for ((c, f), cur) in terms.iter().zip(cursors.iter_mut()) {
                while f.breaks[*cur + 1] <= left {
                    *cur += 1;
                }
                v += c * f.values[*cur];
            }
            values.push(v);
        }
        Self::canonical(breaks, values)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::canonical(
            self.breaks.clone(),
            self.values.iter().map(|v| c * v).collect(),
        )
    }

    pub fn add(&self, other: &StepFunction) -> Self {
        Self::linear_combine(&[(1.0, self), (1.0, other)])
    }

    pub fn sub(&self, other: &StepFunction) -> Self {
        Self::linear_combine(&[(1.0, self), (-1.0, other)])
    }

    fn canonical(mut breaks: Vec<f64>, mut values: Vec<f64>) -> Self {
        // Fuse cells shorter than FUSE_TOL into a neighbour, averaging by length.
        if values.len() > 1 && breaks.windows(2).any(|w| w[1] - w[0] < FUSE_TOL) {
            let mut nb = vec![0.0];
            let mut nv: Vec<f64> = Vec::with_capacity(values.len());
            let mut pending_mass = 0.0;
            let mut pending_len = 0.0;
            for i in 0..values.len() {
                let len = breaks[i + 1] - breaks[i];
                if len < FUSE_TOL {
                    if let Some(last) = nv.last_mut() {
                        let prev_len = nb[nb.len() - 1] - nb[nb.len() - 2];
                        *last = (*last * prev_len + values[i] * len) / (prev_len + len);
                        *nb.last_mut().unwrap() = breaks[i + 1];
                    } else {
                        pending_mass += values[i] * len;
                        pending_len += len;
                    }
                } else {
                    let v = if pending_len > 0.0 {
                        let v = (values[i] * len + pending_mass) / (len + pending_len);
                        pending_mass = 0.0;
                        pending_len = 0.0;
                        v
                    } else {
                        values[i]
                    };
                    nv.push(v);
                    nb.push(breaks[i + 1]);
                }
            }
            if nv.is_empty() {
                // every cell was tiny: only possible for degenerate input
                let total: f64 = values
                    .iter()
                    .zip(breaks.windows(2))
                    .map(|(v, w)| v * (w[1] - w[0]))
                    .sum();
                return Self::constant(total);
            }
            *nb.last_mut().unwrap() = 1.0;
            breaks = nb;
            values = nv;
        }
        // Merge equal neighbours.
        let mut out_b = Vec::with_capacity(breaks.len());
        let mut out_v: Vec<f64> = Vec::with_capacity(values.len());
        out_b.push(0.0);
        for (i, &v) in values.iter().enumerate() {
            if out_v.last() == Some(&v) {
                *out_b.last_mut().unwrap() = breaks[i + 1];
            } else {
                out_v.push(v);
                out_b.push(breaks[i + 1]);
            }
        }
        StepFunction {
            breaks: out_b,
            values: out_v,
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.breaks
            .windows(2)
            .zip(&self.values)
            .map(|(w, &value)| Cell {
                left: w[0],
                right: w[1],
                value,
            })
    }

    /// Value at `x`; `x = 1` returns the last cell's value.
    pub fn eval(&self, x: f64) -> Result<f64> {
        check_unit("x", x)?;
        let idx = match self.breaks.binary_search_by(|b| b.total_cmp(&x)) {
            Ok(i) => i.min(self.values.len() - 1),
            Err(i) => i - 1,
        };
        Ok(self.values[idx])
    }

    pub fn integral(&self) -> f64 {
        compensated_sum(self.cells().map(|c| c.value * c.len()))
    }

    pub fn l1_norm(&self) -> f64 {
        self.cells().map(|c| c.value.abs() * c.len()).sum()
    }

    pub fn l1_distance(&self, other: &StepFunction) -> f64 {
        let (a, b) = (&self.breaks, &other.breaks);
        let (mut i, mut j) = (0usize, 0usize);
        let mut left = 0.0;
        let mut acc = 0.0;
        while i < self.values.len() && j < other.values.len() {
            let right = a[i + 1].min(b[j + 1]);
            acc += (self.values[i] - other.values[j]).abs() * (right - left);
            left = right;
            match a[i + 1].total_cmp(&b[j + 1]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// `∫ f·g`, exact over the common refinement.
    pub fn dot(&self, other: &StepFunction) -> f64 {
        let (a, b) = (&self.breaks, &other.breaks);
        let (mut i, mut j) = (0usize, 0usize);
        let mut left = 0.0;
        let mut acc = 0.0;
        while i < self.values.len() && j < other.values.len() {
            let right = a[i + 1].min(b[j + 1]);
            acc += self.values[i] * other.values[j] * (right - left);
            left = right;
            match a[i + 1].total_cmp(&b[j + 1]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Variation over the open interval `(0, 1)`: jumps at the endpoints are
    /// not counted.
    pub fn total_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    pub fn bv_norm(&self) -> f64 {
        self.l1_norm() + self.total_variation()
    }

    pub fn ess_sup(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn ess_inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `f / ∫f`.
    pub fn normalize(&self) -> Result<Self> {
        let total = self.integral();
        if !(total > 0.0) {
            return Err(Error::Domain {
                what: "integral",
                value: total,
                expected: "> 0 for normalization",
            });
        }
        Ok(self.scale(1.0 / total))
    }

    /// Writes `f = Σ (vᵢ − vᵢ₊₁)·1_{[0,xᵢ]}` with `xᵢ` the right end of cell
    /// `i` and `v_{k+1} = 0`. The last term has `x = 1`.
    pub fn indicator_decomposition(&self) -> Vec<(f64, f64)> {
        let k = self.values.len();
        (0..k)
            .map(|i| {
                let next = if i + 1 < k { self.values[i + 1] } else { 0.0 };
                (self.breaks[i + 1], self.values[i] - next)
            })
            .collect()
    }

    /// True when the cell values never increase from left to right.
    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Rows `x_left,x_right,value`, with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_left,x_right,value\n");
        for c in self.cells() {
            let _ = writeln!(out, "{},{},{}", c.left, c.right, c.value);
        }
        out
    }

    /// Parses the output of [`StepFunction::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut breaks = vec![];
        let mut values = vec![];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("x_left")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidStepFunction(format!("line {}: {e}", lineno + 1)))
            };
            if fields.len() != 3 {
                return Err(Error::InvalidStepFunction(format!(
                    "line {}: expected 3 fields",
                    lineno + 1
                )));
            }
            let (l, r, v) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
            match breaks.last() {
                None => breaks.push(l),
                Some(&prev) if prev != l => {
                    return Err(Error::InvalidStepFunction(format!(
                        "line {}: cell does not start where the previous ended",
                        lineno + 1
                    )))
                }
                _ => {}
            }
            breaks.push(r);
            values.push(v);
        }
        Self::new(breaks, values)
    }

    pub fn to_json_view(&self) -> StepFunctionJson {
        StepFunctionJson {
            breakpoints: self.breaks.clone(),
            values: self.values.clone(),
            integral: self.integral(),
            ess_sup: self.ess_sup(),
            ess_inf: self.ess_inf(),
        }
    }
}

/// JSON form of a step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunctionJson {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub integral: f64,
    pub ess_sup: f64,
    pub ess_inf: f64,
}

impl TryFrom<StepFunctionJson> for StepFunction {
    type Error = Error;
    fn try_from(j: StepFunctionJson) -> Result<Self> {
        StepFunction::new(j.breakpoints, j.values)
    }
}

impl Serialize for StepFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json_view().serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = StepFunctionJson::deserialize(d)?;
        StepFunction::try_from(j).map_err(serde::de::Error::custom)
    }
}

/// Neumaier's compensated sum.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn indicator_examples() {
        assert_eq!(
            StepFunction::indicator(1.0).unwrap(),
            StepFunction::constant(1.0)
        );
        assert_eq!(StepFunction::indicator(0.0).unwrap(), StepFunction::zero());
        let f = StepFunction::indicator(0.25).unwrap();
        assert_eq!(f.breakpoints(), &[0.0, 0.25, 1.0]);
        assert_eq!(f.values(), &[1.0, 0.0]);
        assert!(StepFunction::indicator(1.5).is_err());
    }

    #[test]
    fn integral_of_indicators() {
        for a in [0.0, 0.3, 1.0] {
            assert_relative_eq!(StepFunction::indicator(a).unwrap().integral(), a);
        }
    }

    #[test]
    fn linear_combine_examples() {
        let one = StepFunction::indicator(1.0).unwrap();
        let half = StepFunction::indicator(0.5).unwrap();
        let f = StepFunction::linear_combine(&[(1.0, &one), (0.5, &half)]);
        assert_eq!(f.breakpoints(), &[0.0, 0.5, 1.0]);
        assert_eq!(f.values(), &[1.5, 1.0]);
        assert_eq!(StepFunction::linear_combine(&[]), StepFunction::zero());
    }

    #[test]
    fn golden_phi_and_its_extremes() {
        let b = (1.0 + 5f64.sqrt()) / 2.0;
        let one = StepFunction::indicator(1.0).unwrap();
        let ind = StepFunction::indicator(b - 1.0).unwrap();
        let phi = StepFunction::linear_combine(&[(1.0, &one), (1.0 / b, &ind)]);
        assert_eq!(phi.num_cells(), 2);
        assert_relative_eq!(phi.values()[0], 1.0 + 1.0 / b, epsilon = 1e-15);
        assert_relative_eq!(phi.values()[1], 1.0, epsilon = 1e-15);
        assert_relative_eq!(phi.integral(), 1.3819660112501051, epsilon = 1e-14);
        let h = phi.normalize().unwrap();
        assert_relative_eq!(h.ess_sup(), 1.1708203932499369, epsilon = 1e-14);
        assert_relative_eq!(h.ess_inf(), 0.7236067977499790, epsilon = 1e-14);
        // Parry's density for the golden ratio takes the values
        // β³/(1+β²) and β²/(1+β²).
        assert_relative_eq!(h.ess_sup(), b.powi(3) / (1.0 + b * b), epsilon = 1e-14);
        assert_relative_eq!(h.ess_inf(), b * b / (1.0 + b * b), epsilon = 1e-14);
    }

    #[test]
    fn normalize_rejects_nonpositive_mass() {
        assert!(StepFunction::zero().normalize().is_err());
        assert!(StepFunction::constant(-1.0).normalize().is_err());
    }

    #[test]
    fn total_variation_conventions() {
        assert_eq!(StepFunction::indicator(1.0).unwrap().total_variation(), 0.0);
        assert_eq!(StepFunction::indicator(0.4).unwrap().total_variation(), 1.0);
    }

    #[test]
    fn eval_respects_right_continuity() {
        let f = StepFunction::from_indicators(1.0, [(0.5, 2.0)]);
        assert_eq!(f.eval(0.0).unwrap(), 3.0);
        assert_eq!(f.eval(0.4999).unwrap(), 3.0);
        assert_eq!(f.eval(0.5).unwrap(), 1.0);
        assert_eq!(f.eval(1.0).unwrap(), 1.0);
    }

    #[test]
    fn tiny_cells_are_fused_with_mass_preserved() {
        let f = StepFunction::new(vec![0.0, 0.5, 0.5 + 1e-15, 1.0], vec![1.0, 7.0, 2.0]).unwrap();
        assert_eq!(f.num_cells(), 2);
        assert_relative_eq!(
            f.integral(),
            0.5 + 7e-15 + 2.0 * (0.5 - 1e-15),
            epsilon = 1e-15
        );
        let g = StepFunction::new(vec![0.0, 1e-15, 1.0], vec![5.0, 2.0]).unwrap();
        assert_eq!(g.num_cells(), 1);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let f =
            StepFunction::from_indicators(0.3, [(0.1, 1.0 / 3.0), (0.7, 2.5), (0.123456789, -0.2)]);
        assert_eq!(StepFunction::from_csv(&f.to_csv()).unwrap(), f);
        let json = serde_json::to_string(&f).unwrap();
        let back: StepFunction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn csv_rejects_gaps() {
        let text = "x_left,x_right,value\n0,0.5,1\n0.6,1,2\n";
        assert!(StepFunction::from_csv(text).is_err());
    }

    #[test]
    fn decomposition_rebuilds_function() {
        let f = StepFunction::from_indicators(0.5, [(0.2, 1.0), (0.6, -0.25)]);
        let g = StepFunction::from_indicators(0.0, f.indicator_decomposition());
        assert_eq!(f, g);
    }

    fn arb_step() -> impl Strategy<Value = StepFunction> {
        prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 0..12)
            .prop_map(|terms| StepFunction::from_indicators(0.0, terms))
    }

    proptest! {
        #[test]
        fn refinement_does_not_change_canonical_form(f in arb_step(), cut in 0.001f64..0.999) {
            // split the cell containing `cut` into two cells with equal values
            let mut breaks = f.breakpoints().to_vec();
            let mut values = f.values().to_vec();
            if let Err(i) = breaks.binary_search_by(|b| b.total_cmp(&cut)) {
                if cut - breaks[i - 1] > 1e-9 && breaks[i] - cut > 1e-9 {
                    breaks.insert(i, cut);
                    values.insert(i, values[i - 1]);
                }
            }
            let g = StepFunction::new(breaks, values).unwrap();
            prop_assert_eq!(f, g);
        }

        #[test]
        fn integral_is_linear(f in arb_step(), g in arb_step(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let h = StepFunction::linear_combine(&[(a, &f), (b, &g)]);
            let expect = a * f.integral() + b * g.integral();
            prop_assert!((h.integral() - expect).abs() <= 1e-13 * (1.0 + expect.abs()));
        }

        #[test]
        fn extremes_bracket_the_integral(f in arb_step()) {
            let i = f.integral();
            prop_assert!(f.ess_inf() <= i + 1e-15 && i <= f.ess_sup() + 1e-15);
        }

        #[test]
        fn indicator_bv_norm_at_most_two(a in 0.0f64..=1.0) {
            let f = StepFunction::indicator(a).unwrap();
            prop_assert!(f.bv_norm() <= 2.0);
            if a > 0.0 && a < 1.0 { prop_assert_eq!(f.total_variation(), 1.0); }
        }

        #[test]
        fn l1_distance_is_symmetric_and_matches_difference(f in arb_step(), g in arb_step()) {
            let d = f.l1_distance(&g);
            prop_assert!((d - g.l1_distance(&f)).abs() < 1e-14);
            prop_assert!((d - f.sub(&g).l1_norm()).abs() < 1e-12);
        }
    }
}
