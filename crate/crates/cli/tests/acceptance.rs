//! End-to-end acceptance checks. Each criterion prints one line; the test
//! fails if any of them does.

use std::cell::Cell;
use std::time::Instant;

use betadyn::beta_map::expand;
use betadyn::iid_density::{
    build_phi, build_phi_with, quadrature_system, BuildSettings, Distribution,
};
use betadyn::quenched::{
    c_periodic, c_perturbative_window, c_series, epsilon0, equivariance_residual,
    functional_residual, periodic_window, phi_fiber, CMethod, NoiseModel, PerturbativeSettings,
    Profile, SamplePoint,
};
use betadyn::response::{fd_check_on, ResponseLayers};
use betadyn::transfer::pf_apply;
use betadyn::verify::{simulate, stationary_vector, ulam_matrix, SimulationSettings, Source};
use betadyn::{Beta, BetaSystem, StepFunction};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn two_map() -> BetaSystem {
    BetaSystem::new(vec![(1.8, 0.3), (2.5, 0.7)]).unwrap()
}

fn integer_bases() -> Outcome {
    let systems = [
        vec![(2.0, 1.0)],
        vec![(3.0, 1.0)],
        vec![(2.0, 0.5), (3.0, 0.5)],
        vec![(2.0, 0.25), (4.0, 0.25), (7.0, 0.5)],
    ];
    let mut worst = 0.0f64;
    for atoms in systems {
        let rep = build_phi(&BetaSystem::new(atoms.clone()).map_err(err)?, 1e-10).map_err(err)?;
        if rep.h != StepFunction::constant(1.0) || rep.residual_l1 != 0.0 {
            return Err(format!(
                "{atoms:?}: h = {:?}, residual {}",
                rep.h, rep.residual_l1
            ));
        }
        worst = worst.max(rep.residual_l1);
    }
    Ok(format!("4 systems, h = 1, max residual {worst}"))
}

fn golden_ratio() -> Outcome {
    let g = Beta::golden().value();
    let rep = build_phi(&BetaSystem::single(g).map_err(err)?, 1e-12).map_err(err)?;
    let norm = 1.0 + 1.0 / (g * g);
    let expect = [(1.0 + 1.0 / g) / norm, 1.0 / norm];
    let h = &rep.h;
    if h.num_cells() != 2 {
        return Err(format!("{} cells", h.num_cells()));
    }
    let gap = (h.breakpoints()[1] - (g - 1.0))
        .abs()
        .max((h.values()[0] - expect[0]).abs())
        .max((h.values()[1] - expect[1]).abs());
    ensure(gap <= 1e-12, format!("max deviation {gap:.2e} (tol 1e-12)"))
}

fn fixed_point_certificate() -> Outcome {
    let rep = build_phi(&two_map(), 1e-10).map_err(err)?;
    let r = rep.r;
    let tail = 2.0 * r.powi(rep.depth as i32 + 1) / (1.0 - r);
    ensure(
        rep.residual_l1 <= 2.0 * tail && tail <= 1e-10,
        format!(
            "N = {}, residual {:.2e}, 2r^(N+1)/(1-r) = {tail:.2e}",
            rep.depth, rep.residual_l1
        ),
    )
}

fn ulam() -> Outcome {
    let mut details = Vec::new();
    for (name, sys) in [
        ("1.5", BetaSystem::single(1.5).unwrap()),
        ("two-map", two_map()),
    ] {
        let exact = build_phi(&sys, 1e-12).map_err(err)?.h;
        let st = stationary_vector(&ulam_matrix(&sys, 4096).map_err(err)?, 1e-13, 100_000)
            .map_err(err)?;
        let d = st.density.l1_distance(&exact);
        details.push(format!("{name}: {d:.2e}"));
        if d > 0.02 {
            return Err(details.join(", "));
        }
    }
    Ok(format!("L1 at m = 4096: {}", details.join(", ")))
}

fn monte_carlo() -> Outcome {
    let settings = SimulationSettings {
        orbits: 1000,
        steps: 1000,
        burn_in: 1000,
        bins: 256,
        seed: 20240611,
    };
    let mut details = Vec::new();
    let mut ok = true;
    for (name, sys) in [
        ("1.5", BetaSystem::single(1.5).unwrap()),
        ("two-map", two_map()),
    ] {
        let exact = build_phi(&sys, 1e-12).map_err(err)?.h;
        let hist = simulate(Source::System(&sys), &settings).map_err(err)?;
        let d = hist.density.l1_distance(&exact);
        ok &= hist.samples == 1_000_000 && d <= 0.02;
        details.push(format!("{name}: {d:.2e}"));
    }
    ensure(ok, format!("10^6 samples, L1 {}", details.join(", ")))
}

fn response() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for p in [0.3, 0.5, 0.7] {
        let layers = ResponseLayers::build(1.5, 2.5, p, 1e-6).map_err(err)?;
        let fd = fd_check_on(&layers, 1e-3, 1e-6).map_err(err)?;
        let dnorm = (fd.dnorm_dp - fd.fd_dnorm_dp).abs();
        let mass = layers.dh_at(p).integral().abs();
        ok &= dnorm <= 1e-4
            && fd.max_l1_gap_dphi <= 1e-4
            && fd.max_l1_gap_dh <= 1e-4
            && mass <= 1e-12;
        details.push(format!(
            "p={p}: dnorm {dnorm:.1e}, dphi {:.1e}, dh {:.1e}, mass {mass:.1e}",
            fd.max_l1_gap_dphi, fd.max_l1_gap_dh
        ));
    }
    ensure(ok, details.join("; "))
}

fn periodic_ground_truth() -> Outcome {
    let m = NoiseModel::periodic(vec![2.5, 3.5]).map_err(err)?;
    let sol = c_periodic(&m, 1e-14).map_err(err)?;
    let (mut dc, mut res, mut eq) = (0.0f64, 0.0f64, 0.0f64);
    for phase in 0..2 {
        let p = SamplePoint::Phase { phase };
        dc = dc.max((c_series(&m, &p, 40, 60).map_err(err)?.c - sol.c[phase]).abs());
        res = res.max(
            functional_residual(&m, &p, &periodic_window(&sol, phase, 61), 60)
                .map_err(err)?
                .residual,
        );
        eq = eq.max(
            equivariance_residual(&m, &p, &CMethod::Periodic { tol: 1e-14 }, 60)
                .map_err(err)?
                .residual,
        );
    }
    ensure(
        dc <= 1e-10 && res <= 1e-10 && eq <= 1e-8,
        format!("|c gap| {dc:.1e}, functional {res:.1e}, equivariance {eq:.1e}"),
    )
}

fn constant_path() -> Outcome {
    let m = NoiseModel::periodic(vec![2.5]).map_err(err)?;
    let sol = c_periodic(&m, 1e-14).map_err(err)?;
    let f = phi_fiber(&m, &m.origin(), &periodic_window(&sol, 0, 61), 60).map_err(err)?;
    let h = build_phi(&BetaSystem::single(2.5).map_err(err)?, 1e-13)
        .map_err(err)?
        .h;
    let d = f.phi.normalize().map_err(err)?.l1_distance(&h);
    ensure(d <= 1e-10, format!("L1 {d:.2e}"))
}

fn perturbative() -> Outcome {
    let beta0 = 1.5;
    let e = epsilon0(beta0, 400).map_err(err)?;
    if !(e.eps0 > 0.0) {
        return Err(format!("eps0 = {}", e.eps0));
    }
    let m = NoiseModel::Rotation {
        alpha: 2f64.sqrt() - 1.0,
        base: beta0,
        amplitude: e.eps0 / 2.0,
        profile: Profile::Centered,
    };
    let settings = PerturbativeSettings::new(beta0);
    let depth = 60;
    let points = m.sample_points(1000, 7);
    let fibers = points
        .par_iter()
        .map(|p| {
            let (c, rep) = c_perturbative_window(&m, p, &settings, depth)?;
            let res = functional_residual(&m, p, &c, depth)?;
            let f = phi_fiber(&m, p, &c, depth)?;
            Ok((rep.q, res.residual, res.bound, f.phi))
        })
        .collect::<betadyn::Result<Vec<_>>>()
        .map_err(err)?;
    let q = fibers.iter().map(|f| f.0).fold(0.0, f64::max);
    let within = fibers.iter().all(|f| f.1 <= f.2);
    let worst = fibers.iter().map(|f| f.1 / f.2).fold(0.0, f64::max);
    let w = 1.0 / fibers.len() as f64;
    let terms: Vec<(f64, &StepFunction)> = fibers.iter().map(|f| (w, &f.3)).collect();
    let average = StepFunction::linear_combine(&terms);
    let dist = Distribution::Uniform {
        a: beta0 - e.eps0 / 2.0,
        b: beta0 + e.eps0 / 2.0,
    };
    // eight nearby slopes branch eightfold per layer; a tighter atom cap keeps
    // the reference cheap, and the dropped weight stays far below the tolerance
    let reference = BuildSettings {
        max_layer_atoms: 1 << 16,
        ..BuildSettings::new(1e-5)
    };
    let annealed =
        build_phi_with(&quadrature_system(&dist, 8).map_err(err)?, &reference).map_err(err)?;
    let dropped = annealed.dropped_weight;
    let annealed = annealed.h;
    let d = average.l1_distance(&annealed);
    ensure(
        q < 1.0 && within && d <= 0.05,
        format!(
            "eps0 {:.3e}, max q {q:.3}, max residual/bound {worst:.2e}, L1 to annealed {d:.2e} (reference dropped weight {dropped:.1e})",
            e.eps0
        ),
    )
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn expansion_identity() -> Outcome {
    let strategy = (prop::collection::vec(1.4f64..2.6, 40), 0.0f64..1.0);
    let worst = Cell::new(0.0f64);
    let result = runner(1000).run(&strategy, |(path, x)| {
        let rec = expand(&path, x, 40).unwrap();
        let defect = (x - rec.partial_sums[39]).abs();
        let allowed = 1.0 / rec.cumulative_products[39] + 40.0 * f64::EPSILON;
        worst.set(worst.get().max(defect / allowed));
        prop_assert!(defect <= allowed, "defect {defect} > {allowed}");
        Ok(())
    });
    match result {
        Ok(()) => Ok(format!("1000 cases, max defect/allowed {:.3}", worst.get())),
        Err(e) => Err(e.to_string()),
    }
}

fn arb_step() -> impl Strategy<Value = StepFunction> {
    (
        prop::collection::vec(0.0f64..1.0, 0..8),
        prop::collection::vec(-3.0f64..3.0, 9),
    )
        .prop_map(|(mut cuts, vals)| {
            cuts.sort_by(f64::total_cmp);
            cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
            cuts.retain(|&c| c > 1e-6 && c < 1.0 - 1e-6);
            let mut breaks = vec![0.0];
            breaks.extend(cuts);
            breaks.push(1.0);
            let values = vals[..breaks.len() - 1].to_vec();
            StepFunction::new(breaks, values).unwrap()
        })
}

fn arb_nonneg() -> impl Strategy<Value = StepFunction> {
    arb_step().prop_map(|f| {
        let breaks = f.breakpoints().to_vec();
        let values = f.values().iter().map(|v| v.abs()).collect();
        StepFunction::new(breaks, values).unwrap()
    })
}

fn property_suite() -> Outcome {
    let cases = 1000;
    let mut failures = Vec::new();
    let mut note = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };

    note(
        "mass and positivity",
        runner(cases)
            .run(&(0.3f64..6.0, arb_nonneg()), |(beta, f)| {
                let g = pf_apply(Beta::new(beta).unwrap(), &f);
                let m = f.integral();
                prop_assert!((g.integral() - m).abs() <= 1e-13 * m.max(1.0));
                prop_assert!(g.is_nonnegative());
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    note(
        "linearity",
        runner(cases)
            .run(
                &(
                    0.3f64..6.0,
                    arb_step(),
                    arb_step(),
                    -2.0f64..2.0,
                    -2.0f64..2.0,
                ),
                |(beta, f, g, x, y)| {
                    let b = Beta::new(beta).unwrap();
                    let lhs = pf_apply(b, &StepFunction::linear_combine(&[(x, &f), (y, &g)]));
                    let rhs = StepFunction::linear_combine(&[
                        (x, &pf_apply(b, &f)),
                        (y, &pf_apply(b, &g)),
                    ]);
                    prop_assert!(lhs.l1_distance(&rhs) <= 1e-12);
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    note(
        "monotone phi",
        runner(cases)
            .run(
                &(prop::collection::vec(1.6f64..4.0, 1..3), 0.05f64..0.95),
                |(betas, p)| {
                    let atoms: Vec<(f64, f64)> = match betas.as_slice() {
                        [b] => vec![(*b, 1.0)],
                        [a, b] => vec![(*a, p), (*b, 1.0 - p)],
                        _ => unreachable!(),
                    };
                    let rep = build_phi(&BetaSystem::new(atoms).unwrap(), 1e-3).unwrap();
                    prop_assert!(rep.phi.is_nonincreasing());
                    prop_assert!(rep.phi.is_nonnegative());
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    note(
        "canonical uniqueness",
        runner(cases)
            .run(&(arb_step(), 0.001f64..0.999), |(f, cut)| {
                let mut breaks = f.breakpoints().to_vec();
                let mut values = f.values().to_vec();
                if let Err(i) = breaks.binary_search_by(|b| b.total_cmp(&cut)) {
                    if cut - breaks[i - 1] > 1e-9 && breaks[i] - cut > 1e-9 {
                        breaks.insert(i, cut);
                        values.insert(i, values[i - 1]);
                    }
                }
                prop_assert_eq!(&StepFunction::new(breaks, values).unwrap(), &f);
                let rebuilt = StepFunction::from_indicators(0.0, f.indicator_decomposition());
                prop_assert!(rebuilt.l1_distance(&f) <= 1e-12);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    note(
        "seed determinism",
        runner(cases)
            .run(&(any::<u64>(), 1.6f64..3.0), |(seed, beta)| {
                let sys = BetaSystem::new(vec![(beta, 0.5), (2.5, 0.5)]).unwrap();
                let s = SimulationSettings {
                    orbits: 2,
                    steps: 40,
                    burn_in: 5,
                    bins: 8,
                    seed,
                };
                let a = simulate(Source::System(&sys), &s).unwrap();
                prop_assert_eq!(&a, &simulate(Source::System(&sys), &s).unwrap());
                let m = NoiseModel::TwoSidedIid { system: sys, seed };
                let p = m.sample_points(3, seed);
                prop_assert_eq!(&p, &m.sample_points(3, seed));
                prop_assert_eq!(
                    m.path(&p[1], -20, 20).unwrap(),
                    m.path(&p[1], -20, 20).unwrap()
                );
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    if failures.is_empty() {
        Ok(format!("5 properties x {cases} cases"))
    } else {
        Err(failures.join("; "))
    }
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("integer bases", integer_bases),
        ("golden ratio", golden_ratio),
        ("fixed-point certificate", fixed_point_certificate),
        ("ulam", ulam),
        ("monte carlo", monte_carlo),
        ("linear response", response),
        ("periodic ground truth", periodic_ground_truth),
        ("constant path", constant_path),
        ("perturbative regime", perturbative),
        ("expansion identity", expansion_identity),
        ("property suite", property_suite),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match &outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                println!("[FAIL] {:>2} {name}: {detail} ({secs:.1}s)", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
