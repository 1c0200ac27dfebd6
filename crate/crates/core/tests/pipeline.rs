//! End-to-end checks of simulation, likelihood, detection and evaluation
//! against independent oracles.

use levy_cusum::detector::{drawup, first_passage, run_rule, DetectorInput};
use levy_cusum::eval::{
    calibrate_barrier, compare, convergence_study, estimate_arl, lorden_delay, lower_bound_ratio, simulate_stops,
    Regime,
};
use levy_cusum::likelihood::{llr_increment_iid, llr_path, IncrementLaw, LlrKernel};
use levy_cusum::model::{build_change_model, JumpLaw, LevySpec};
use levy_cusum::paths::{restrict_to_grid, sample_changed_path};
use levy_cusum::stats::mean_se;
use levy_cusum::{ChangeModel, DetectorConfig, Error, Execution, RngStream, Rule, SimSettings};

fn brownian() -> ChangeModel {
    build_change_model(LevySpec::brownian(1.0, 0.0), LevySpec::brownian(1.0, 1.0)).unwrap()
}

fn intensity_only() -> ChangeModel {
    let law = JumpLaw::Exponential { rate: 1.0 };
    build_change_model(
        LevySpec::pure_compound_poisson(1.0, law),
        LevySpec::pure_compound_poisson(2.0, law),
    )
    .unwrap()
}

fn jump_diffusion() -> ChangeModel {
    let law = JumpLaw::Gaussian { mean: 0.0, sd: 1.0 };
    let post = JumpLaw::Gaussian { mean: 0.5, sd: 1.0 };
    let pre = LevySpec::jump_diffusion(1.0, 0.0, 1.0, law);
    // drift identity: b¹ = b⁰ + ∫_{|x|≤1} x(ν¹ − ν⁰) + ασ², with α = 0.3
    let tm = LevySpec::jump_diffusion(1.0, 0.0, 1.5, post).truncated_first_moment();
    build_change_model(pre, LevySpec::jump_diffusion(1.0, tm - pre.truncated_first_moment() + 0.3, 1.5, post)).unwrap()
}

fn sim(n_rep: usize, grid_dt: f64, horizon: f64, seed: u64) -> SimSettings {
    SimSettings {
        n_rep,
        grid_dt,
        horizon,
        master_seed: seed,
        execution: Execution::Parallel,
    }
}

#[test]
fn poisson_first_passage_is_first_event() {
    let m = intensity_only();
    let dt = 0.001;
    for s in 0..200 {
        let path = sample_changed_path(&m, 0.0, 20.0, dt, RngStream::new(8, s)).unwrap();
        let Some(first) = path.jumps.first() else { continue };
        let y = drawup(&llr_path(&m, &path).unwrap());
        let r = first_passage(&y, 0.6, dt, 1).unwrap();
        let expected = ((first.time / dt).floor() + 1.0) * dt;
        assert!((r.stop_time - expected).abs() < 1e-9, "stop {} first event {}", r.stop_time, first.time);
    }
}

#[test]
fn llr_slopes_match_drifts() {
    let law = JumpLaw::Gaussian { mean: 0.0, sd: 1.0 };
    let cases = [
        brownian(),
        intensity_only(),
        build_change_model(
            LevySpec::pure_compound_poisson(1.0, law),
            LevySpec::pure_compound_poisson(1.0, JumpLaw::Gaussian { mean: 1.0, sd: 1.0 }),
        )
        .unwrap(),
        jump_diffusion(),
        build_change_model(LevySpec::gamma(1.0, 1.0), LevySpec::gamma(1.0, 2.0)).unwrap(),
    ];
    for m in &cases {
        for (post, tau) in [(false, f64::INFINITY), (true, 0.0)] {
            let slopes: Vec<f64> = (0..4000)
                .map(|s| {
                    let p = sample_changed_path(m, tau, 5.0, 0.05, RngStream::new(31, s)).unwrap();
                    llr_path(m, &p).unwrap().u_values.last().unwrap() / 5.0
                })
                .collect();
            let (mean, se) = mean_se(&slopes);
            let drift = m.u_drift(post);
            assert!((mean - drift).abs() < 3.5 * se, "{:?} post={post}: {mean} ± {se} vs {drift}", m.pre.family);
            assert_eq!(drift < 0.0, !post);
        }
    }
}

#[test]
fn jump_diffusion_llr_is_additive() {
    let m = jump_diffusion();
    let kernel = LlrKernel::new(&m).unwrap();
    for s in 0..50 {
        let p = sample_changed_path(&m, 1.0, 3.0, 0.01, RngStream::new(4, s)).unwrap();
        let u = llr_path(&m, &p).unwrap();
        let (mut diffusion, mut jumps) = (0.0, 0.0);
        for i in 0..p.n_steps() {
            let inc = p.values[i + 1] - p.values[i];
            let js = p.jumps_in_step(i);
            let cont = inc - js.iter().map(|j| j.size).sum::<f64>();
            let parts = kernel.step_parts(0.01, cont, inc, js).unwrap();
            diffusion += parts.diffusion;
            jumps += parts.jumps;
        }
        assert!((u.u_values.last().unwrap() - (diffusion + jumps)).abs() < 1e-10);
    }
}

#[test]
fn iid_route_matches_path_route_for_brownian() {
    let m = brownian();
    let q0 = IncrementLaw::Gaussian { mean: 0.0, sd: 0.5f64.sqrt() };
    let q1 = IncrementLaw::Gaussian { mean: 0.5, sd: 0.5f64.sqrt() };
    for s in 0..20 {
        let p = sample_changed_path(&m, 2.0, 5.0, 0.5, RngStream::new(6, s)).unwrap();
        let u = llr_path(&m, &p).unwrap();
        let series = restrict_to_grid(&p, 0.5).unwrap();
        let mut acc = 0.0;
        for (k, x) in series.increments.iter().enumerate() {
            acc += llr_increment_iid(q0, q1, *x).unwrap();
            let direct = u.u_values[k + 1];
            assert!((acc.exp() - direct.exp()).abs() <= 1e-10 * direct.exp());
        }
    }
}

#[test]
fn cocycle_over_windows() {
    let m = jump_diffusion();
    let p = sample_changed_path(&m, 2.0, 6.0, 0.01, RngStream::new(12, 3)).unwrap();
    let full = llr_path(&m, &p).unwrap();
    for (from, to) in [(0, 600), (100, 400), (250, 251), (300, 600)] {
        let w = llr_path(&m, &p.window(from, to).unwrap()).unwrap();
        let diff = full.u_values[to] - full.u_values[from];
        assert!((w.u_values.last().unwrap() - diff).abs() < 1e-10, "[{from}, {to}]");
    }
}

#[test]
fn iid_cusum_agrees_with_grid_cusum_on_brownian() {
    let m = brownian();
    let q0 = IncrementLaw::Gaussian { mean: 0.0, sd: 0.1f64.sqrt() };
    let q1 = IncrementLaw::Gaussian { mean: 0.1, sd: 0.1f64.sqrt() };
    for s in 0..100 {
        let p = sample_changed_path(&m, 3.0, 30.0, 0.1, RngStream::new(13, s)).unwrap();
        let u = llr_path(&m, &p).unwrap();
        let series = restrict_to_grid(&p, 0.1).unwrap();
        let grid = run_rule(&DetectorConfig::new(Rule::CusumGrid { delta: 0.1 }, 2.0).unwrap(), DetectorInput::Llr(&u), 30.0).unwrap();
        let iid = run_rule(
            &DetectorConfig::new(Rule::CusumIid, 2.0).unwrap(),
            DetectorInput::Increments { series: &series, q0, q1 },
            30.0,
        )
        .unwrap();
        assert!((grid.stop_time - iid.stop_time).abs() < 1e-9);
        assert_eq!(grid.tau_hat.is_some(), iid.tau_hat.is_some());
    }
}

#[test]
fn lorden_tau_zero_matches_out_of_control_arl() {
    let m = brownian();
    let config = DetectorConfig::new(Rule::CusumGrid { delta: 0.05 }, 1.5).unwrap();
    let s = sim(5000, 0.05, 100.0, 3);
    let lorden = lorden_delay(&m, &config, &[0.0], &s).unwrap();
    let arl = estimate_arl(&m, &config, Regime::OutOfControl, &s.with_seed(99)).unwrap();
    let d = &lorden.per_tau[0];
    let se = (d.std_error.powi(2) + arl.std_error.powi(2)).sqrt();
    assert!((d.estimate - arl.estimate).abs() <= 3.0 * se);
    assert!(matches!(
        lorden_delay(&m, &config, &[0.025], &s),
        Err(Error::Alignment(_))
    ));
}

#[test]
fn lower_bound_for_one_step_rule_is_delta() {
    let m = brownian();
    let config = DetectorConfig::new(Rule::FixedTime { delta: 0.25, steps: 1 }, 0.0).unwrap();
    let lb = lower_bound_ratio(&m, &config, &sim(100, 0.25, 10.0, 1)).unwrap();
    assert_eq!(lb.ratio.estimate, 0.25);
    assert_eq!(lb.ratio.std_error, 0.0);
}

#[test]
fn lower_bound_for_two_step_rule_matches_direct_estimate() {
    // d̄ = Δ(1 + E max(S₁,1)) / (1 + E(1 − S₁)⁺) with S₁ = L₁ = e^{U_Δ}
    let m = brownian();
    let delta = 0.5;
    let config = DetectorConfig::new(Rule::FixedTime { delta, steps: 2 }, 0.0).unwrap();
    let s = sim(20_000, delta, 10.0, 77);
    let lb = lower_bound_ratio(&m, &config, &s).unwrap();
    let s1: Vec<f64> = (0..20_000)
        .map(|i| {
            let p = sample_changed_path(&m, f64::INFINITY, delta, delta, RngStream::new(77, i)).unwrap();
            llr_path(&m, &p).unwrap().u_values[1].exp()
        })
        .collect();
    let num: Vec<f64> = s1.iter().map(|s| s.max(1.0)).collect();
    let den: Vec<f64> = s1.iter().map(|s| (1.0 - s).max(0.0)).collect();
    let direct = delta * (1.0 + mean_se(&num).0) / (1.0 + mean_se(&den).0);
    assert!((lb.ratio.estimate - direct).abs() <= 3.0 * lb.ratio.std_error.max(1e-12), "{} vs {direct}", lb.ratio.estimate);
}

#[test]
fn calibration_round_trip() {
    let m = brownian();
    let rule = Rule::CusumGrid { delta: 0.1 };
    let s = sim(2000, 0.1, 400.0, 5);
    let target = estimate_arl(&m, &DetectorConfig::new(rule, 2.0).unwrap(), Regime::InControl, &s.with_reps(8000))
        .unwrap()
        .estimate;
    let cal = calibrate_barrier(&m, rule, target, 0.02, &s).unwrap();
    assert!(cal.converged, "{:?}", cal.report);
    assert!((cal.log_barrier - 2.0).abs() < 0.05, "h̄ = {}", cal.log_barrier);
    let again = estimate_arl(&m, &DetectorConfig::new(rule, cal.log_barrier).unwrap(), Regime::InControl, &s.with_reps(8000)).unwrap();
    assert!(again.relative_error(target) <= 0.02);
}

#[test]
fn comparison_single_rule_and_grid_levels() {
    let m = brownian();
    let s = sim(2000, 0.05, 400.0, 21);
    let single = compare(&m, 20.0, &[Rule::CusumGrid { delta: 0.1 }], 0.05, &[0.0, 1.0], &s).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert_eq!(single.cusum_dominates, None);

    let two = compare(&m, 20.0, &[Rule::CusumGrid { delta: 0.4 }, Rule::CusumGrid { delta: 0.05 }], 0.05, &[0.0], &s).unwrap();
    let d = |k: usize| two.rows[k].worst_delay.as_ref().unwrap().clone();
    let (coarse, fine) = (d(0), d(1));
    assert!(fine.estimate <= coarse.estimate + 3.0 * (fine.std_error.powi(2) + coarse.std_error.powi(2)).sqrt());

    let infeasible = compare(&m, 0.01, &[Rule::CusumGrid { delta: 0.1 }], 0.05, &[0.0], &s).unwrap();
    assert!(infeasible.rows[0].error.is_some());
}

#[test]
fn convergence_on_degenerate_grids_and_misalignment() {
    let m = brownian();
    let s = sim(200, 0.01, 50.0, 2);
    let table = convergence_study(&m, 1.0, 3, 0.4, Regime::OutOfControl, &s).unwrap();
    assert!(table.all_monotone());
    assert!(matches!(
        convergence_study(&m, 1.0, 3, 0.03, Regime::OutOfControl, &s),
        Err(Error::Validation(_))
    ));
}

#[test]
fn ramp_levels_hit_barrier_exactly() {
    let dt = 0.125;
    let u: Vec<f64> = (0..=64).map(|i| i as f64 * dt).collect();
    let llr = levy_cusum::LLRPath::from_values(dt, u).unwrap();
    for delta in [1.0, 0.5, 0.25, 0.125] {
        let r = run_rule(&DetectorConfig::new(Rule::CusumGrid { delta }, 2.0).unwrap(), DetectorInput::Llr(&llr), 8.0).unwrap();
        assert_eq!(r.stop_time, 2.0);
    }
}

#[test]
fn censoring_is_reported() {
    let m = brownian();
    let config = DetectorConfig::new(Rule::CusumGrid { delta: 0.1 }, 6.0).unwrap();
    let stops = simulate_stops(&m, &config, f64::INFINITY, false, &sim(50, 0.1, 5.0, 1)).unwrap();
    assert!(stops.iter().all(|s| s.censored && s.stop_time == 5.0));
    let r = estimate_arl(&m, &config, Regime::InControl, &sim(50, 0.1, 5.0, 1)).unwrap();
    assert_eq!(r.n_censored, 50);
    assert!(r.has(levy_cusum::eval::Flag::Unusable));
}

#[test]
fn inadmissible_models_are_refused_everywhere() {
    let m = build_change_model(LevySpec::brownian(1.0, 0.0), LevySpec::brownian(2.0, 1.0)).unwrap();
    let config = DetectorConfig::new(Rule::CusumContinuous, 1.0).unwrap();
    assert!(matches!(
        estimate_arl(&m, &config, Regime::InControl, &sim(10, 0.1, 1.0, 0)),
        Err(Error::Inadmissible(_))
    ));
    assert!(matches!(LlrKernel::new(&m), Err(Error::Inadmissible(_))));
}
