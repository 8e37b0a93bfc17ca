//! Independent numerical checks: Ulam discretization and orbit simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta_map::{mean_expanding_check, split, SNAP_TOL};
use crate::error::{Error, Result};
use crate::quenched::NoiseModel;
use crate::stepfn::StepFunction;
use crate::transfer::BetaSystem;

/// Row-stochastic Ulam matrix on `bins` equal cells, stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct UlamOperator {
    bins: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl UlamOperator {
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Nonzero entries `(j, P[i][j])` of row `i`, sorted by `j`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |k| self.rows[i][k].1)
    }

    pub fn max_row_sum_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|e| e.1).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `vP`.
    pub fn left_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bins];
        for (vi, row) in v.iter().zip(&self.rows) {
            for &(j, p) in row {
                out[j] += vi * p;
            }
        }
        out
    }
}

/// Assembles `P[i][j] = Σ_k p_k l(I_i ∩ T_k⁻¹ I_j) / l(I_i)` from the branch
/// structure: on the branch of digit `d`, `T(x) = βx − d` maps `I_i` onto
/// an interval, and the share landing in `I_j` is its overlap divided by `β`.
pub fn ulam_matrix(system: &BetaSystem, bins: usize) -> Result<UlamOperator> {
    if bins < 2 {
        return Err(Error::Domain {
            what: "bins",
            value: bins as f64,
            expected: ">= 2",
        });
    }
    let m = bins as f64;
    let rows = (0..bins)
        .into_par_iter()
        .map(|i| {
            let (a, b) = (i as f64 / m, (i + 1) as f64 / m);
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for atom in system.atoms() {
                let beta = atom.beta.value();
                let first = (beta * a).floor();
                let last = (beta * b).ceil() - 1.0;
                let mut d = first;
                while d <= last {
                    let lo = a.max(d / beta);
                    let hi = b.min((d + 1.0) / beta).min(1.0);
                    if hi > lo {
                        let (u, v) = (beta * lo - d, (beta * hi - d).min(1.0));
                        let j_lo = ((u * m).floor() as usize).min(bins - 1);
                        let j_hi = ((v * m).ceil() as usize).clamp(j_lo + 1, bins);
                        for j in j_lo..j_hi {
                            let overlap = v.min((j + 1) as f64 / m) - u.max(j as f64 / m);
                            if overlap > 0.0 {
                                acc.push((j, atom.prob * overlap * m / beta));
                            }
                        }
                    }
                    d += 1.0;
                }
            }
            acc.sort_by_key(|e| e.0);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
            for (j, p) in acc {
                match row.last_mut() {
                    Some(last) if last.0 == j => last.1 += p,
                    _ => row.push((j, p)),
                }
            }
            row
        })
        .collect();
    Ok(UlamOperator { bins, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stationary {
    pub density: StepFunction,
    /// `‖vP − v‖₁` at exit.
    pub residual: f64,
    pub iterations: usize,
}

/// Left fixed vector of `op` by power iteration from uniform, as a density.
pub fn stationary_vector(op: &UlamOperator, tol: f64, max_iter: usize) -> Result<Stationary> {
    let m = op.bins();
    let mut v = vec![1.0 / m as f64; m];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let mut next = op.left_apply(&v);
        let mass: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= mass);
        residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if residual <= tol {
            return Ok(Stationary {
                density: bins_to_density(&v),
                residual,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Probability vector on equal bins to the step density `m·v_j`.
fn bins_to_density(v: &[f64]) -> StepFunction {
    let m = v.len();
    let breaks = (0..=m).map(|j| j as f64 / m as f64).collect();
    StepFunction::new(breaks, v.iter().map(|x| x * m as f64).collect())
        .expect("equal bins form a valid partition")
}

/// `L¹(Ulam_m, h)` for each `m`, and whether the sequence is nonincreasing
/// up to `slack` (relative).
pub fn ulam_refinement(
    system: &BetaSystem,
    bins: &[usize],
    exact: &StepFunction,
    slack: f64,
) -> Result<(Vec<(usize, f64)>, bool)> {
    let mut out = Vec::with_capacity(bins.len());
    for &m in bins {
        let st = stationary_vector(&ulam_matrix(system, m)?, 1e-13, 100_000)?;
        out.push((m, st.density.l1_distance(exact)));
    }
    let monotone = out.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + slack));
    Ok((out, monotone))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub orbits: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub bins: usize,
    pub seed: u64,
}

/// What drives the orbits.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// Letters drawn i.i.d. from the system.
    System(&'a BetaSystem),
    /// Slopes read along the path of a sampled point, one fiber per orbit.
    Noise(&'a NoiseModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub density: StepFunction,
    pub samples: u64,
    pub counts: Vec<u64>,
}

// Keeps double-precision orbits from locking onto short cycles; at least
// one ulp near 1 so that it survives rounding.
const DITHER: f64 = f64::EPSILON;

/// Normalized histogram of orbit positions after burn-in.
pub fn simulate(source: Source<'_>, s: &SimulationSettings) -> Result<Histogram> {
    if s.bins == 0 || s.orbits == 0 || s.steps == 0 {
        return Err(Error::Domain {
            what: "simulation size",
            value: 0.0,
            expected: "orbits, steps and bins >= 1",
        });
    }
    let points = match source {
        Source::System(sys) => {
            let check = mean_expanding_check(sys);
            if !check.log_mean_negative {
                log::warn!(
                    "system is not expanding in mean (Σ p log(1/β) = {})",
                    check.log_mean
                );
            }
            None
        }
        Source::Noise(model) => {
            model.validate()?;
            Some(model.sample_points(s.orbits, s.seed))
        }
    };
    let total = s.burn_in + s.steps;
    let bins = s.bins;
    let counts = (0..s.orbits)
        .into_par_iter()
        .map(|o| -> Result<Vec<u64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            rng.set_stream(o as u64);
            let slopes: Option<Vec<f64>> = match (&source, &points) {
                (Source::Noise(model), Some(pts)) => {
                    Some(model.path(&pts[o], 0, total as i64 - 1)?)
                }
                _ => None,
            };
            let mut counts = vec![0u64; bins];
            let mut x: f64 = rng.random();
            for t in 0..total {
                let beta = match (&source, &slopes) {
                    (_, Some(path)) => path[t],
                    (Source::System(sys), None) => sys.atoms()[sys.pick(rng.random())].beta.value(),
                    _ => unreachable!(),
                };
                x = split(beta, x, SNAP_TOL).1 + DITHER * rng.random::<f64>();
                if x >= 1.0 {
                    x -= 1.0;
                }
                if t >= s.burn_in {
                    counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
                }
            }
            Ok(counts)
        })
        .try_reduce(
            || vec![0u64; bins],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let samples: u64 = counts.iter().sum();
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / samples as f64).collect();
    Ok(Histogram {
        density: bins_to_density(&probs),
        samples,
        counts,
    })
}
