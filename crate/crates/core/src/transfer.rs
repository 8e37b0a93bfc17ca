//! Transfer operators of beta-maps acting on step functions.
//!
//! Everything reduces to one kernel: for `a ∈ [0, 1]`,
//! `L_β 1_{[0,a]} = (⌊βa⌋/β)·1 + (1/β)·1_{[0,T_β(a)]}`.
//! A step function is rewritten as a combination of indicators anchored at
//! 0, so the operators below are exact up to floating-point rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta_map::{split, Beta, SNAP_TOL};
use crate::error::{check_unit, Error, Result};
use crate::stepfn::StepFunction;

/// One map of an i.i.d. system and the probability of choosing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapAtom {
    pub beta: Beta,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemSpec", into = "SystemSpec")]
pub struct BetaSystem {
    atoms: Vec<MapAtom>,
    r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SystemSpec {
    maps: Vec<MapAtom>,
}

impl TryFrom<SystemSpec> for BetaSystem {
    type Error = Error;
    fn try_from(s: SystemSpec) -> Result<Self> {
        Self::from_atoms(s.maps)
    }
}

impl From<BetaSystem> for SystemSpec {
    fn from(s: BetaSystem) -> Self {
        SystemSpec { maps: s.atoms }
    }
}

impl BetaSystem {
    /// Probabilities must be positive and sum to 1 within `1e-12`.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let atoms = atoms
            .into_iter()
            .map(|(b, p)| {
                Ok(MapAtom {
                    beta: Beta::new(b)?,
                    prob: p,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_atoms(atoms)
    }

    pub fn from_atoms(atoms: Vec<MapAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidSystem("no maps".into()));
        }
        if let Some(a) = atoms.iter().find(|a| !(a.prob > 0.0 && a.prob.is_finite())) {
            return Err(Error::InvalidSystem(format!(
                "probability {} is not positive",
                a.prob
            )));
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSystem(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let r = atoms.iter().map(|a| a.prob / a.beta.value()).sum();
        Ok(BetaSystem { atoms, r })
    }

    /// A single deterministic map.
    pub fn single(beta: f64) -> Result<Self> {
        Self::new(vec![(beta, 1.0)])
    }

    pub fn atoms(&self) -> &[MapAtom] {
        &self.atoms
    }

    /// `Σ pᵢ/βᵢ`.
    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn min_beta(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.beta.value())
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the map selected by a uniform variate `u ∈ [0, 1)`.
    pub fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, a) in self.atoms.iter().enumerate() {
            acc += a.prob;
            if u < acc {
                return i;
            }
        }
        self.atoms.len() - 1
    }
}

/// The two terms `(constant, (1/β, T_β(a)))` of `L_β 1_{[0,a]}`.
#[inline]
fn kernel(beta: f64, a: f64) -> (f64, f64) {
    let (d, t) = split(beta, a, SNAP_TOL);
    (d / beta, t)
}

/// `L_β 1_{[0,a]}`.
pub fn pf_indicator(beta: Beta, a: f64) -> Result<StepFunction> {
    check_unit("a", a)?;
    let b = beta.value();
    let (c, t) = kernel(b, a);
    Ok(StepFunction::from_indicators(c, [(t, 1.0 / b)]))
}

/// Pushes the indicator decomposition of `f` through `L_β`, scaled by `weight`,
/// appending indicator terms and returning the constant part.
fn push_terms(beta: f64, weight: f64, f: &StepFunction, out: &mut Vec<(f64, f64)>) -> f64 {
    let mut constant = 0.0;
    for (x, c) in f.indicator_decomposition() {
        if c == 0.0 {
            continue;
        }
        let (k, t) = kernel(beta, x);
        constant += weight * c * k;
        out.push((t, weight * c / beta));
    }
    constant
}

/// `L_β f`.
pub fn pf_apply(beta: Beta, f: &StepFunction) -> StepFunction {
    let mut terms = Vec::with_capacity(f.num_cells());
    let constant = push_terms(beta.value(), 1.0, f, &mut terms);
    StepFunction::from_indicators(constant, terms)
}

/// `Σ pᵢ L_{βᵢ} f`.
pub fn annealed_apply(system: &BetaSystem, f: &StepFunction) -> StepFunction {
    // Per-atom work in parallel; the combine runs in atom order.
    let parts: Vec<(f64, Vec<(f64, f64)>)> = system
        .atoms()
        .par_iter()
        .map(|a| {
            let mut terms = Vec::with_capacity(f.num_cells());
            let c = push_terms(a.beta.value(), a.prob, f, &mut terms);
            (c, terms)
        })
        .collect();
    let constant = parts.iter().map(|(c, _)| c).sum();
    StepFunction::from_indicators(constant, parts.into_iter().flat_map(|(_, t)| t))
}

/// `‖L f − f‖₁` for the annealed operator of `system`.
pub fn fixed_point_residual(system: &BetaSystem, f: &StepFunction) -> f64 {
    annealed_apply(system, f).l1_distance(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn b(x: f64) -> Beta {
        Beta::new(x).unwrap()
    }

    /// `g ∘ T_β` as a step function, built from the branch structure.
    fn compose(beta: f64, g: &StepFunction) -> StepFunction {
        let digits = beta.ceil() as usize;
        let mut breaks = vec![0.0, 1.0];
        for d in 0..digits {
            for &y in g.breakpoints() {
                let x = (d as f64 + y) / beta;
                if x > 0.0 && x < 1.0 {
                    breaks.push(x);
                }
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let values = breaks
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                g.eval(split(beta, mid, 0.0).1).unwrap()
            })
            .collect();
        StepFunction::new(breaks, values).unwrap()
    }

    #[test]
    fn system_validation() {
        assert!(BetaSystem::new(vec![]).is_err());
        assert!(BetaSystem::new(vec![(2.0, 0.5), (3.0, 0.4)]).is_err());
        assert!(BetaSystem::new(vec![(2.0, 1.5), (3.0, -0.5)]).is_err());
        assert!(BetaSystem::new(vec![(-2.0, 1.0)]).is_err());
        let s = BetaSystem::new(vec![(2.0, 0.5), (3.0, 0.5)]).unwrap();
        assert_relative_eq!(s.r(), 5.0 / 12.0);
        let json = r#"{"maps":[{"beta":1.5,"prob":1.0}]}"#;
        let s: BetaSystem = serde_json::from_str(json).unwrap();
        assert_eq!(s, BetaSystem::single(1.5).unwrap());
        assert!(serde_json::from_str::<BetaSystem>(r#"{"maps":[]}"#).is_err());
    }

    #[test]
    fn pf_indicator_examples() {
        let f = pf_indicator(b(2.5), 0.9).unwrap();
        let expect = StepFunction::from_indicators(0.8, [(0.25, 0.4)]);
        assert!(f.l1_distance(&expect) < 1e-15);
        assert_relative_eq!(f.integral(), 0.9, epsilon = 1e-15);
        assert_eq!(
            pf_indicator(b(2.0), 1.0).unwrap(),
            StepFunction::constant(1.0)
        );
        let f = pf_indicator(b(0.5), 1.0).unwrap();
        assert_eq!(f, StepFunction::from_indicators(0.0, [(0.5, 2.0)]));
    }

    #[test]
    fn pf_apply_examples() {
        let one = StepFunction::constant(1.0);
        assert_eq!(pf_apply(b(2.0), &one), one);
        assert_eq!(
            pf_apply(b(1.7), &StepFunction::zero()),
            StepFunction::zero()
        );
        let g = Beta::golden().value();
        let phi = StepFunction::from_indicators(1.0, [(g - 1.0, 1.0 / g)]);
        assert!(pf_apply(Beta::golden(), &phi).l1_distance(&phi) < 1e-14);
    }

    #[test]
    fn annealed_examples() {
        let one = StepFunction::constant(1.0);
        let s = BetaSystem::new(vec![(2.0, 0.5), (3.0, 0.5)]).unwrap();
        assert_eq!(annealed_apply(&s, &one), one);
        assert_eq!(fixed_point_residual(&s, &one), 0.0);
        assert_eq!(
            annealed_apply(&s, &StepFunction::zero()),
            StepFunction::zero()
        );
        let s = BetaSystem::single(1.5).unwrap();
        let expect = StepFunction::from_indicators(1.0 / 1.5, [(0.5, 1.0 / 1.5)]);
        assert!(annealed_apply(&s, &one).l1_distance(&expect) < 1e-15);
    }

    #[test]
    fn golden_residuals() {
        let s = BetaSystem::single(Beta::golden().value()).unwrap();
        let g = Beta::golden().value();
        let phi = StepFunction::from_indicators(1.0, [(g - 1.0, 1.0 / g)]);
        assert!(fixed_point_residual(&s, &phi) < 1e-14);
        assert!(fixed_point_residual(&s, &StepFunction::constant(1.0)) > 0.1);
    }

    #[test]
    fn duality_small_case() {
        let f = StepFunction::from_indicators(0.2, [(0.3, 1.0), (0.8, 0.5)]);
        let g = StepFunction::from_indicators(0.1, [(0.45, 2.0), (0.9, -1.0)]);
        for beta in [1.3, 1.5, 2.0, 2.7] {
            let lhs = pf_apply(b(beta), &f).dot(&g);
            let rhs = f.dot(&compose(beta, &g));
            assert_relative_eq!(lhs, rhs, epsilon = 1e-13);
        }
    }

    fn arb_step() -> impl Strategy<Value = StepFunction> {
        prop::collection::vec((0.0f64..1.0, -2.0f64..2.0), 0..10)
            .prop_map(|terms| StepFunction::from_indicators(0.0, terms))
    }

    fn arb_nonneg() -> impl Strategy<Value = StepFunction> {
        (
            0.0f64..1.0,
            prop::collection::vec((0.0f64..1.0, 0.0f64..2.0), 0..10),
        )
            .prop_map(|(c, terms)| StepFunction::from_indicators(c, terms))
    }

    proptest! {
        #[test]
        fn mass_and_positivity(beta in 0.3f64..6.0, f in arb_nonneg()) {
            let g = pf_apply(b(beta), &f);
            let m = f.integral();
            prop_assert!((g.integral() - m).abs() <= 1e-13 * m.max(1.0));
            prop_assert!(g.is_nonnegative());
            prop_assert!((g.l1_norm() - f.l1_norm()).abs() <= 1e-13 * m.max(1.0));
        }

        #[test]
        fn linearity(beta in 0.3f64..6.0, f in arb_step(), g in arb_step(),
                     x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let lhs = pf_apply(b(beta), &StepFunction::linear_combine(&[(x, &f), (y, &g)]));
            let rhs = StepFunction::linear_combine(&[
                (x, &pf_apply(b(beta), &f)),
                (y, &pf_apply(b(beta), &g)),
            ]);
            prop_assert!(lhs.l1_distance(&rhs) <= 1e-12);
        }

        #[test]
        fn duality(beta in 1.05f64..4.0, f in arb_step(), g in arb_step()) {
            let lhs = pf_apply(b(beta), &f).dot(&g);
            let rhs = f.dot(&compose(beta, &g));
            prop_assert!((lhs - rhs).abs() <= 1e-11);
        }

        #[test]
        fn annealed_mass(betas in prop::collection::vec(0.5f64..5.0, 1..4), f in arb_nonneg()) {
            let n = betas.len() as f64;
            let s = BetaSystem::new(betas.into_iter().map(|x| (x, 1.0 / n)).collect()).unwrap();
            let g = annealed_apply(&s, &f);
            prop_assert!((g.integral() - f.integral()).abs() <= 1e-13 * f.integral().max(1.0));
            prop_assert!(g.is_nonnegative());
        }
    }
}
