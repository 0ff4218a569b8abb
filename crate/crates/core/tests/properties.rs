use std::sync::Arc;

use proptest::prelude::*;

use mlbsde::forward::{simulate_per_timepoint_clouds, CloudGenerator, CouplingMode, ForwardModel, LevelSource};
use mlbsde::lsmdp::{proxy_driver, solve_residual, PerTimePlan};
use mlbsde::multilevel::{solve_multilevel, solve_single_level, y_responses, LevelPlan, MultilevelOptions};
use mlbsde::problems::sine_problem;
use mlbsde::regression::{
    build_bases, ols_fit, partition_fit, truncate, Basis, BasisSpec, FittedFunction, Hermite, Partition,
};
use mlbsde::rng::Domain;
use mlbsde::solution::LevelSolution;
use mlbsde::timegrid::{alpha, embedding, GridFamily};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

fn hermite(degree: usize) -> Basis {
    Basis::Hermite(Hermite::new(degree, vec![0.0], 1.0).unwrap())
}

fn fitted_values(basis: &Basis, coef: &[f64], xs: &[f64]) -> Vec<f64> {
    let f = FittedFunction::new(Arc::new(basis.clone()), coef.to_vec(), 1, f64::INFINITY).unwrap();
    xs.iter().map(|x| f.eval_scalar(&[*x])).collect()
}

fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (40usize..120).prop_flat_map(|m| {
        (
            prop::collection::vec(-2.0f64..2.0, m),
            prop::collection::vec(-5.0f64..5.0, m),
            prop::collection::vec(-5.0f64..5.0, m),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ols_is_linear((xs, r1, r2) in sample(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let basis = hermite(3);
        let c1 = ols_fit(&basis, 1, &xs, &r1, 1).unwrap();
        let c2 = ols_fit(&basis, 1, &xs, &r2, 1).unwrap();
        let mix: Vec<f64> = r1.iter().zip(&r2).map(|(u, v)| a * u + b * v).collect();
        let c = ols_fit(&basis, 1, &xs, &mix, 1).unwrap();
        let expect: Vec<f64> = c1.iter().zip(&c2).map(|(u, v)| a * u + b * v).collect();
        prop_assert!(close(&c, &expect, 1e-10), "{c:?} vs {expect:?}");
    }

    #[test]
    fn ols_contracts_and_is_idempotent((xs, r, _) in sample()) {
        let basis = hermite(3);
        let c = ols_fit(&basis, 1, &xs, &r, 1).unwrap();
        let fit = fitted_values(&basis, &c, &xs);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        prop_assert!(norm(&fit) <= norm(&r) * (1.0 + 1e-10));
        let again = ols_fit(&basis, 1, &xs, &fit, 1).unwrap();
        prop_assert!(close(&again, &c, 1e-10), "{again:?} vs {c:?}");
    }

    #[test]
    fn partition_fit_is_cell_mean((xs, r, _) in sample(), cells in 1usize..6) {
        let p = Partition::uniform_box(1, cells, -2.0, 2.0).unwrap();
        let basis = Basis::Partition(p.clone());
        let means = partition_fit(&basis, 1, &xs, &r, 1).unwrap();
        let ols = ols_fit(&basis, 1, &xs, &r, 1).unwrap();
        for c in 0..cells {
            let members: Vec<f64> = xs.iter().zip(&r).filter(|(x, _)| p.locate(&[**x]) == Some(c)).map(|(_, v)| *v).collect();
            let mean = if members.is_empty() { 0.0 } else { members.iter().sum::<f64>() / members.len() as f64 };
            prop_assert!((means[c] - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
            prop_assert!((ols[c] - mean).abs() <= 1e-10 * (1.0 + mean.abs()));
        }
    }

    #[test]
    fn truncation_clamps(v in prop::collection::vec(-1e3f64..1e3, 1..6), bound in 0.0f64..50.0) {
        let mut t = v.clone();
        truncate(&mut t, bound);
        for (a, b) in v.iter().zip(&t) {
            prop_assert!(b.abs() <= bound);
            if a.abs() <= bound {
                prop_assert_eq!(a, b);
            } else {
                prop_assert_eq!(*b, bound * a.signum());
            }
        }
    }
}

#[test]
fn grids_nest_and_alpha_is_consistent() {
    for family in [GridFamily::uniform(1.5).unwrap(), GridFamily::graded(1.0, 0.5).unwrap()] {
        for k in 1..=10 {
            let (fine, coarse) = (family.grid(k), family.grid(k - 1));
            let embed = embedding(&fine, &coarse).unwrap();
            for (j, &i) in embed.iter().enumerate() {
                assert_eq!(fine.time(i).to_bits(), coarse.time(j).to_bits());
            }
            for i in 0..=fine.steps() {
                let j = alpha(&fine, &coarse, i);
                assert!(coarse.time(j) <= fine.time(i));
                assert!(j == coarse.steps() || coarse.time(j + 1) > fine.time(i));
            }
        }
    }
}

fn sine_plans(k: usize, paths: usize, seed: u64) -> Vec<LevelPlan> {
    let (problem, _) = sine_problem().unwrap();
    let family = GridFamily::uniform(1.0).unwrap();
    (0..=k)
        .map(|j| {
            let b = build_bases(
                &BasisSpec::Hermite { degree: 4 },
                &problem.model,
                &family.grid(j),
                seed,
                CouplingMode::Exact,
            )
            .unwrap()
            .bases;
            LevelPlan { paths, bases_y: b.clone(), bases_z: b }
        })
        .collect()
}

fn coefficients(s: &LevelSolution) -> Vec<u64> {
    s.y.iter().chain(&s.z).flat_map(|f| f.coefficients().iter().map(|c| c.to_bits())).collect()
}

#[test]
fn zero_driver_residual_vanishes() {
    let (problem, _) = sine_problem().unwrap();
    let family = GridFamily::uniform(1.0).unwrap();
    let plans = sine_plans(3, 3000, 5);
    let lin = solve_multilevel(&problem, &family, &plans, 5, &MultilevelOptions::default()).unwrap().pop().unwrap();
    let grid = family.grid(3);
    let clouds = simulate_per_timepoint_clouds(&problem.model, &grid, &vec![500; grid.steps()], 5, None).unwrap();
    let plan = PerTimePlan { bases_y: plans[3].bases_y.clone(), bases_z: plans[3].bases_z.clone() };
    let residual = solve_residual(&problem, &proxy_driver(&problem, Arc::new(lin)), &clouds, &plan).unwrap();
    assert!(residual.is_zero());
}

#[test]
fn split_of_zero_driver_equals_multilevel_part() {
    use mlbsde::config::{preset, Scheme};
    use mlbsde::runner::{solve_run, Solved};
    let mut cfg = preset("sine").unwrap();
    cfg.levels = [3, 3];
    cfg.paths_override = Some(2000);
    cfg.schemes.truncate(1);
    let problem = cfg.problem().unwrap();
    let family = cfg.family(problem.horizon).unwrap();
    let plan = cfg.resolve().unwrap();
    let opts = MultilevelOptions::default();
    let run = &plan.runs[0];
    let Solved::Level(ml) = solve_run(&problem, &family, &cfg.schemes[0], run, 1, &opts).unwrap() else { panic!() };
    let mut spec = cfg.schemes[0].clone();
    spec.scheme = Scheme::SplitMl;
    let Solved::Split(split) = solve_run(&problem, &family, &spec, run, 1, &opts).unwrap() else { panic!() };
    assert!(split.residual.is_zero());
    assert_eq!(coefficients(&split.linear), coefficients(&ml));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (problem, _) = sine_problem().unwrap();
    let family = GridFamily::uniform(1.0).unwrap();
    let plans = sine_plans(4, 20_000, 9);
    let solve = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let ml = solve_multilevel(&problem, &family, &plans, 9, &MultilevelOptions::default()).unwrap();
            let sl = solve_single_level(&problem, &family, 4, &plans[4], 9, &MultilevelOptions::default()).unwrap();
            (coefficients(ml.last().unwrap()), coefficients(&sl))
        })
    };
    let one = solve(1);
    assert_eq!(one, solve(3));
    assert_eq!(one, solve(7));
}

fn generator(model: ForwardModel, k: usize, mode: CouplingMode) -> CloudGenerator {
    let family = GridFamily::graded(1.0, 0.5).unwrap();
    CloudGenerator::new(Arc::new(model), family.grid(k), Some(family.grid(k - 1)), 64, 3, Domain::Level(k as u32), mode)
        .unwrap()
}

fn gbm() -> ForwardModel {
    ForwardModel::geometric(vec![1.0, 2.0], vec![0.05, 0.02], vec![0.3, 0.2], &[vec![1.0, 0.0], vec![0.6, 0.8]])
        .unwrap()
}

#[test]
fn coarse_increments_are_sums_of_fine_ones() {
    for mode in [CouplingMode::Exact, CouplingMode::EulerSubsample, CouplingMode::EulerCoupled] {
        let gen = generator(gbm(), 5, mode);
        let layout = gen.layout().clone();
        let mut path = layout.new_path();
        for m in 0..gen.paths() {
            gen.fill(m, &mut path);
            for j in 0..layout.coarse_steps() {
                for c in 0..2 {
                    let sum = (0..layout.steps())
                        .filter(|&i| layout.alpha[i] == j)
                        .fold(0.0, |s, i| s + path.increment(i, 2)[c]);
                    assert_eq!(sum.to_bits(), path.coarse_increment(j, 2)[c].to_bits());
                }
            }
        }
    }
}

#[test]
fn subsampled_coarse_states_are_shared() {
    for mode in [CouplingMode::Exact, CouplingMode::EulerSubsample] {
        let gen = generator(gbm(), 4, mode);
        let layout = gen.layout().clone();
        let mut path = layout.new_path();
        for m in 0..gen.paths() {
            gen.fill(m, &mut path);
            for (j, &i) in layout.embed.iter().enumerate() {
                assert_eq!(path.coarse_state(j, 2), path.state(i, 2));
            }
        }
    }
}

#[test]
fn zero_control_gives_plain_responses() {
    let (problem, _) = sine_problem().unwrap();
    let family = GridFamily::uniform(1.0).unwrap();
    let plans = sine_plans(3, 500, 2);
    let mut prev =
        solve_multilevel(&problem, &family, &plans[..3], 2, &MultilevelOptions::default()).unwrap().pop().unwrap();
    prev.z = prev.z.iter().map(|_| FittedFunction::zero(1)).collect();
    let gen = CloudGenerator::new(
        problem.model.clone(),
        family.grid(3),
        Some(family.grid(2)),
        500,
        2,
        Domain::Level(3),
        CouplingMode::Exact,
    )
    .unwrap();
    for i in [0, 3, 7] {
        let controlled = y_responses(&problem, Some(&prev), &gen, i).unwrap();
        let plain = y_responses(&problem, None, &gen, i).unwrap();
        assert_eq!(
            controlled.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            plain.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
