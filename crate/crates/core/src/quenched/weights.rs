//! Backward-orbit weights along a sample path.
//!
//! For a base point `ω`, row `j` of a [`BackwardTable`] describes the point
//! `θ^{-j}ω`, and column `m` the block of `m` maps that ends there:
//!
//! * `w[j][m] = τ^m_{θ^{-m}ω'}(1) / β^{(m)}_{θ^{-m}ω'}` with `ω' = θ^{-j}ω`,
//! * `d[j][m] = d_m(θ^{-m}ω', 1) / β^{(m)}_{θ^{-m}ω'}`,
//! * `prev[j][m] = τ^{m−1}_{θ^{-m}ω'}(1) / β^{(m−1)}_{θ^{-m}ω'}`.
//!
//! `prev` and `w` share the starting point `θ^{-m}ω'`, so
//! `d[j][m] = prev[j][m] − w[j][m]`. Note that `prev[j][m]` is not
//! `w[j][m−1]`: the latter starts one step later.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta_map::{split, SNAP_TOL};
use crate::error::{Error, Result};
use crate::quenched::noise::{NoiseModel, SamplePoint};

#[derive(Debug, Clone)]
pub struct BackwardTable {
    rows: usize,
    depth: usize,
    /// `betas[i] = β(θ^{-i}ω)` for `i = 0..rows + depth`.
    betas: Vec<f64>,
    w: Vec<f64>,
    d: Vec<f64>,
    prev: Vec<f64>,
    point: Vec<f64>,
}

impl BackwardTable {
    /// Table for offsets `0..rows` and block lengths `1..=depth`.
    pub fn build(
        model: &NoiseModel,
        omega: &SamplePoint,
        rows: usize,
        depth: usize,
    ) -> Result<Self> {
        if rows == 0 || depth == 0 {
            return Err(Error::InvalidModel(
                "backward table needs rows ≥ 1 and depth ≥ 1".into(),
            ));
        }
        let span = rows + depth;
        let mut betas = model.path(omega, -(span as i64 - 1), 0)?;
        betas.reverse();
        Ok(Self::from_betas(betas, rows, depth))
    }

    /// Same as [`BackwardTable::build`] from explicit slopes `β(θ^{-i}ω)`.
    pub fn from_betas(betas: Vec<f64>, rows: usize, depth: usize) -> Self {
        assert!(betas.len() >= rows + depth);
        let width = depth + 1;
        // One forward orbit of 1 per starting offset s; step i of it fills
        // row s − i, column i.
        let orbits: Vec<Vec<(f64, f64, f64)>> = (1..rows + depth)
            .into_par_iter()
            .map(|s| {
                let steps = depth.min(s);
                let mut out = Vec::with_capacity(steps);
                let mut x = 1.0;
                let mut inv = 1.0;
                for i in 1..=steps {
                    let beta = betas[s - i + 1];
                    let (dig, next) = if x == 0.0 {
                        (0.0, 0.0)
                    } else {
                        split(beta, x, SNAP_TOL)
                    };
                    inv /= beta;
                    out.push((next, dig, inv));
                    x = next;
                }
                out
            })
            .collect();
        let mut w = vec![0.0; rows * width];
        let mut d = vec![0.0; rows * width];
        let mut prev = vec![0.0; rows * width];
        let mut point = vec![0.0; rows * width];
        for j in 0..rows {
            w[j * width] = 1.0;
            point[j * width] = 1.0;
        }
        for (idx, orbit) in orbits.iter().enumerate() {
            let s = idx + 1;
            let mut last_w = 1.0;
            for (k, &(x, dig, inv)) in orbit.iter().enumerate() {
                let i = k + 1;
                if s < i || s - i >= rows {
                    last_w = x * inv;
                    continue;
                }
                let cell = (s - i) * width + i;
                w[cell] = x * inv;
                d[cell] = dig * inv;
                prev[cell] = last_w;
                point[cell] = x;
                last_w = x * inv;
            }
        }
        BackwardTable {
            rows,
            depth,
            betas,
            w,
            d,
            prev,
            point,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `β(θ^{-i}ω)`.
    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    #[inline]
    fn row<'a>(&self, v: &'a [f64], j: usize) -> &'a [f64] {
        let width = self.depth + 1;
        &v[j * width..(j + 1) * width]
    }

    /// `w[j][0..=depth]`, with `w[j][0] = 1`.
    pub fn w_row(&self, j: usize) -> &[f64] {
        self.row(&self.w, j)
    }

    pub fn d_row(&self, j: usize) -> &[f64] {
        self.row(&self.d, j)
    }

    pub fn prev_row(&self, j: usize) -> &[f64] {
        self.row(&self.prev, j)
    }

    /// `τ^m_{θ^{-m}ω'}(1)`.
    pub fn point_row(&self, j: usize) -> &[f64] {
        self.row(&self.point, j)
    }

    /// `min β` over the slopes in the table.
    pub fn gamma(&self) -> f64 {
        self.betas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_beta(&self) -> f64 {
        self.betas.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sup_j Σ_{1≤m≤depth} w[j][m]` over the rows.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.rows)
            .map(|j| self.w_row(j)[1..].iter().sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Weights at the base point itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardWeights {
    pub depth: usize,
    /// `w[m]`, `m = 0..=depth`, with `w[0] = 1`.
    pub w: Vec<f64>,
    /// `d[m]`, with `d[0] = 0`.
    pub d: Vec<f64>,
    /// `τ^{m−1}/β^{(m−1)}` on the block of `w[m]`.
    pub prev: Vec<f64>,
    /// `max_m |d[m] − (prev[m] − w[m])|`.
    pub telescoping_defect: f64,
}

pub fn backward_weights(
    model: &NoiseModel,
    omega: &SamplePoint,
    depth: usize,
) -> Result<BackwardWeights> {
    let t = BackwardTable::build(model, omega, 1, depth)?;
    let (w, d, prev) = (
        t.w_row(0).to_vec(),
        t.d_row(0).to_vec(),
        t.prev_row(0).to_vec(),
    );
    let telescoping_defect = (1..=depth)
        .map(|m| (d[m] - (prev[m] - w[m])).abs())
        .fold(0.0, f64::max);
    Ok(BackwardWeights {
        depth,
        w,
        d,
        prev,
        telescoping_defect,
    })
}

/// `Σ_{m=1}^{M} d_m(ω,1)/β^{(m)}_ω + τ^M_ω(1)/β^{(M)}_ω` along the forward
/// block `betas`; it telescopes to 1.
pub fn forward_completeness(betas: &[f64]) -> f64 {
    let mut x = 1.0;
    let mut inv = 1.0;
    let mut sum = 0.0;
    for &b in betas {
        let (dig, next) = split(b, x, SNAP_TOL);
        inv /= b;
        sum += dig * inv;
        x = next;
    }
    sum + x * inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn integer_slope_weights() {
        let m = NoiseModel::periodic(vec![2.0]).unwrap();
        let bw = backward_weights(&m, &m.origin(), 5).unwrap();
        assert!(bw.w[1..].iter().all(|&x| x == 0.0));
        assert_eq!(bw.d[1], 1.0);
        assert!(bw.d[2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn three_halves_weights() {
        let m = NoiseModel::periodic(vec![1.5]).unwrap();
        let bw = backward_weights(&m, &m.origin(), 4).unwrap();
        assert_relative_eq!(bw.w[1], 1.0 / 3.0, epsilon = 1e-16);
        assert_relative_eq!(bw.w[2], 1.0 / 3.0, epsilon = 1e-16);
        assert_relative_eq!(bw.w[3], 0.125 / 3.375, epsilon = 1e-16);
        assert!(bw.telescoping_defect < 1e-13);
    }

    #[test]
    fn period_two_first_weight() {
        let m = NoiseModel::periodic(vec![2.5, 3.5]).unwrap();
        let bw = backward_weights(&m, &m.origin(), 3).unwrap();
        assert_relative_eq!(bw.w[1], 0.5 / 3.5, epsilon = 1e-16);
        // two steps: 2.5 first, then 3.5
        let x = 2.5f64.fract();
        let y = (3.5 * x).fract();
        assert_relative_eq!(bw.w[2], y / (2.5 * 3.5), epsilon = 1e-15);
    }

    #[test]
    fn table_rows_match_shifted_points() {
        let m = NoiseModel::Rotation {
            alpha: 0.6180339887,
            base: 2.6,
            amplitude: 0.3,
            profile: Default::default(),
        };
        let o = m.origin();
        let t = BackwardTable::build(&m, &o, 6, 10).unwrap();
        for j in 0..6 {
            let shifted = m.shift(&o, -(j as i64));
            let bw = backward_weights(&m, &shifted, 10).unwrap();
            for k in 0..=10 {
                assert!((t.w_row(j)[k] - bw.w[k]).abs() < 1e-12);
                assert!((t.d_row(j)[k] - bw.d[k]).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn telescoping_and_bounds(betas in prop::collection::vec(1.1f64..4.5, 40), depth in 1usize..20) {
            let t = BackwardTable::from_betas(betas, 40 - depth, depth);
            let gamma = t.gamma();
            for j in 0..t.rows() {
                let (w, d, prev) = (t.w_row(j), t.d_row(j), t.prev_row(j));
                for m in 1..=depth {
                    prop_assert!((d[m] - (prev[m] - w[m])).abs() <= 1e-13);
                    prop_assert!(w[m] >= 0.0 && w[m] <= gamma.powi(-(m as i32)) * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn completeness_along_forward_blocks(betas in prop::collection::vec(1.05f64..5.0, 1..60)) {
            prop_assert!((forward_completeness(&betas) - 1.0).abs() <= 1e-13);
        }
    }
}
