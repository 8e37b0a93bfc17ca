//! Invertible noise processes driving the slope `β(θⁱω)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transfer::BetaSystem;

/// Shape `g` of a rotation profile `β(x) = base + amplitude·g(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `g(x) = x`.
    #[default]
    Linear,
    /// `g(x) = 2x − 1`.
    Centered,
    /// `g(x) = cos 2πx`.
    Cosine,
}

impl Profile {
    fn eval(self, x: f64) -> f64 {
        match self {
            Profile::Linear => x,
            Profile::Centered => 2.0 * x - 1.0,
            Profile::Cosine => (std::f64::consts::TAU * x).cos(),
        }
    }

    /// Range of `g` over `[0, 1)`.
    fn range(self) -> (f64, f64) {
        match self {
            Profile::Linear => (0.0, 1.0),
            Profile::Centered | Profile::Cosine => (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `β(θⁱω)` cycles through `betas`; the sample point is a phase.
    Periodic { betas: Vec<f64> },
    /// `θx = x + α mod 1` on the circle.
    Rotation {
        alpha: f64,
        base: f64,
        amplitude: f64,
        #[serde(default)]
        profile: Profile,
    },
    /// Two-sided i.i.d. sequence of slopes drawn from `system`.
    TwoSidedIid { system: BetaSystem, seed: u64 },
    /// Stationary two-sided Markov chain on `states` with row-stochastic
    /// `transition`.
    TwoSidedMarkov {
        states: Vec<f64>,
        transition: Vec<Vec<f64>>,
        seed: u64,
    },
}

/// A point `ω` of the noise space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplePoint {
    Phase {
        phase: usize,
    },
    Angle {
        x: f64,
    },
    /// Coordinate `offset` of the two-sided sequence number `id`.
    Draw {
        id: u64,
        offset: i64,
    },
}

fn zigzag(t: i64) -> u64 {
    ((t << 1) ^ (t >> 63)) as u64
}

fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

impl NoiseModel {
    pub fn periodic(betas: Vec<f64>) -> Result<Self> {
        let m = NoiseModel::Periodic { betas };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |xs: &[f64]| xs.iter().all(|&b| b > 0.0 && b.is_finite());
        match self {
            NoiseModel::Periodic { betas } => {
                if betas.is_empty() || !positive(betas) {
                    return Err(Error::InvalidModel(
                        "periodic slopes must be positive".into(),
                    ));
                }
            }
            NoiseModel::Rotation {
                alpha,
                base,
                amplitude,
                profile,
            } => {
                if !alpha.is_finite() || !base.is_finite() || !amplitude.is_finite() {
                    return Err(Error::InvalidModel(
                        "rotation parameters must be finite".into(),
                    ));
                }
                let (lo, _) = self.beta_range();
                if !(lo > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "rotation profile {profile:?} reaches slope {lo}"
                    )));
                }
            }
            NoiseModel::TwoSidedIid { .. } => {}
            NoiseModel::TwoSidedMarkov {
                states, transition, ..
            } => {
                let n = states.len();
                if n == 0 || !positive(states) {
                    return Err(Error::InvalidModel(
                        "Markov states must be positive slopes".into(),
                    ));
                }
                if transition.len() != n || transition.iter().any(|row| row.len() != n) {
                    return Err(Error::InvalidModel(
                        "transition matrix shape mismatch".into(),
                    ));
                }
                for row in transition {
                    if row.iter().any(|&p| !(p >= 0.0))
                        || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12
                    {
                        return Err(Error::InvalidModel(
                            "transition rows must be probability vectors".into(),
                        ));
                    }
                }
                let pi = stationary(transition);
                if pi.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidModel("no stationary distribution".into()));
                }
            }
        }
        Ok(())
    }

    /// Bounds on `β` over the whole noise space.
    pub fn beta_range(&self) -> (f64, f64) {
        let minmax = |xs: &mut dyn Iterator<Item = f64>| {
            xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| {
                (lo.min(b), hi.max(b))
            })
        };
        match self {
            NoiseModel::Periodic { betas } => minmax(&mut betas.iter().copied()),
            NoiseModel::Rotation {
                base,
                amplitude,
                profile,
                ..
            } => {
                let (g0, g1) = profile.range();
                let (a, b) = (base + amplitude * g0, base + amplitude * g1);
                (a.min(b), a.max(b))
            }
            NoiseModel::TwoSidedIid { system, .. } => {
                minmax(&mut system.atoms().iter().map(|a| a.beta.value()))
            }
            NoiseModel::TwoSidedMarkov {
                states, transition, ..
            } => {
                let pi = stationary(transition);
                minmax(
                    &mut states
                        .iter()
                        .zip(&pi)
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(&b, _)| b),
                )
            }
        }
    }

    pub fn period(&self) -> Option<usize> {
        match self {
            NoiseModel::Periodic { betas } => Some(betas.len()),
            _ => None,
        }
    }

    /// A canonical reference point.
    pub fn origin(&self) -> SamplePoint {
        match self {
            NoiseModel::Periodic { .. } => SamplePoint::Phase { phase: 0 },
            NoiseModel::Rotation { .. } => SamplePoint::Angle { x: 0.0 },
            _ => SamplePoint::Draw { id: 0, offset: 0 },
        }
    }

    /// `θᵏω`.
    pub fn shift(&self, point: &SamplePoint, k: i64) -> SamplePoint {
        match (*point, self) {
            (SamplePoint::Phase { phase }, NoiseModel::Periodic { betas }) => SamplePoint::Phase {
                phase: (phase as i64 + k).rem_euclid(betas.len() as i64) as usize,
            },
            (SamplePoint::Angle { x }, NoiseModel::Rotation { alpha, .. }) => SamplePoint::Angle {
                x: (x + k as f64 * alpha).rem_euclid(1.0),
            },
            (SamplePoint::Draw { id, offset }, _) => SamplePoint::Draw {
                id,
                offset: offset + k,
            },
            (p, _) => p,
        }
    }

    /// `n` reproducible sample points.
    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<SamplePoint> {
        match self {
            NoiseModel::Periodic { betas } => (0..n)
                .map(|i| SamplePoint::Phase {
                    phase: i % betas.len(),
                })
                .collect(),
            NoiseModel::Rotation { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n)
                    .map(|_| SamplePoint::Angle {
                        x: rng.random::<f64>(),
                    })
                    .collect()
            }
            _ => (0..n as u64)
                .map(|id| SamplePoint::Draw { id, offset: 0 })
                .collect(),
        }
    }

    fn check_point(&self, point: &SamplePoint) -> Result<()> {
        let ok = match (point, self) {
            (SamplePoint::Phase { phase }, NoiseModel::Periodic { betas }) => *phase < betas.len(),
            (SamplePoint::Angle { x }, NoiseModel::Rotation { .. }) => (0.0..1.0).contains(x),
            (SamplePoint::Draw { .. }, NoiseModel::TwoSidedIid { .. })
            | (SamplePoint::Draw { .. }, NoiseModel::TwoSidedMarkov { .. }) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!(
                "sample point {point:?} does not belong to this noise model"
            )))
        }
    }

    /// `[β(θ^lo ω), …, β(θ^hi ω)]`.
    pub fn path(&self, point: &SamplePoint, lo: i64, hi: i64) -> Result<Vec<f64>> {
        self.check_point(point)?;
        if hi < lo {
            return Ok(Vec::new());
        }
        let out = match (self, *point) {
            (NoiseModel::Periodic { betas }, SamplePoint::Phase { phase }) => {
                let q = betas.len() as i64;
                (lo..=hi)
                    .map(|i| betas[(phase as i64 + i).rem_euclid(q) as usize])
                    .collect()
            }
            (
                NoiseModel::Rotation {
                    alpha,
                    base,
                    amplitude,
                    profile,
                },
                SamplePoint::Angle { x },
            ) => (lo..=hi)
                .map(|i| {
                    let y = (x + i as f64 * alpha).rem_euclid(1.0);
                    base + amplitude * profile.eval(y)
                })
                .collect(),
            (NoiseModel::TwoSidedIid { system, seed }, SamplePoint::Draw { id, offset }) => {
                let cumulative: Vec<f64> = system
                    .atoms()
                    .iter()
                    .scan(0.0, |acc, a| {
                        *acc += a.prob;
                        Some(*acc)
                    })
                    .collect();
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(id);
                (lo..=hi)
                    .map(|i| {
                        rng.set_word_pos(2 * zigzag(offset + i) as u128);
                        let k = pick(&cumulative, unit_f64(rng.next_u64()));
                        system.atoms()[k].beta.value()
                    })
                    .collect()
            }
            (
                NoiseModel::TwoSidedMarkov {
                    states,
                    transition,
                    seed,
                },
                SamplePoint::Draw { id, offset },
            ) => markov_path(states, transition, *seed, id, offset + lo, offset + hi),
            _ => unreachable!("checked above"),
        };
        Ok(out)
    }

    /// `β(θ^{-i}ω)`.
    pub fn backward(&self, point: &SamplePoint, i: usize) -> Result<f64> {
        Ok(self.path(point, -(i as i64), -(i as i64))?[0])
    }

    /// `β(θⁱω)`.
    pub fn forward(&self, point: &SamplePoint, i: usize) -> Result<f64> {
        Ok(self.path(point, i as i64, i as i64)?[0])
    }
}

/// Stationary law of a row-stochastic matrix by power iteration.
fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let mut next = vec![0.0; n];
        for (i, row) in p.iter().enumerate() {
            for (j, &q) in row.iter().enumerate() {
                next[j] += pi[i] * q;
            }
        }
        // lazy averaging avoids oscillation on periodic chains
        for (a, b) in next.iter_mut().zip(&pi) {
            *a = 0.5 * (*a + b);
        }
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    pi
}

/// States of a stationary two-sided chain at absolute coordinates `lo..=hi`.
///
/// Coordinate 0 is drawn from the stationary law; the chain runs forward
/// with `P` and backward with the time reversal `P̃[x][y] = π_y P[y][x] / π_x`,
/// each direction on its own ChaCha stream, so any window is a restriction
/// of one fixed two-sided path.
fn markov_path(states: &[f64], p: &[Vec<f64>], seed: u64, id: u64, lo: i64, hi: i64) -> Vec<f64> {
    let n = states.len();
    let pi = stationary(p);
    let cum = |row: &[f64]| -> Vec<f64> {
        row.iter()
            .scan(0.0, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    };
    let fwd: Vec<Vec<f64>> = p.iter().map(|r| cum(r)).collect();
    let bwd: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let row: Vec<f64> = (0..n)
                .map(|y| {
                    if pi[x] > 0.0 {
                        pi[y] * p[y][x] / pi[x]
                    } else {
                        0.0
                    }
                })
                .collect();
            let s: f64 = row.iter().sum();
            cum(&row.iter().map(|v| v / s).collect::<Vec<_>>())
        })
        .collect();
    let mut rng0 = ChaCha8Rng::seed_from_u64(seed);
    rng0.set_stream(3 * id);
    let x0 = pick(&cum(&pi), unit_f64(rng0.next_u64()));

    let mut out = Vec::with_capacity((hi - lo + 1) as usize);
    if lo < 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3 * id + 2);
        let mut back = Vec::with_capacity((-lo) as usize);
        let mut x = x0;
        for _ in 0..(-lo) {
            x = pick(&bwd[x], unit_f64(rng.next_u64()));
            back.push(x);
        }
        // back[k] is coordinate −(k+1)
        let upper = hi.min(-1);
        for t in lo..=upper {
            out.push(states[back[(-t - 1) as usize]]);
        }
    }
    if hi >= 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3 * id + 1);
        let mut x = x0;
        for t in 0..=hi {
            if t > 0 {
                x = pick(&fwd[x], unit_f64(rng.next_u64()));
            }
            if t >= lo {
                out.push(states[x]);
            }
        }
    }
    out
}
