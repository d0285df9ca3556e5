//! Trajectory-level invariants: discretisation order, the discrete identities
//! satisfied by every run, smoothing properties and reproducibility.

use nalgebra::dvector;
use newton_flow::flow::{energetic_check, integral_residual, integrate, FlowConfig, FlowMode};
use newton_flow::operator::{graph_derivative, OperatorSpec};
use newton_flow::problem::{check_plr, eval_phi, ObjectiveSplit, Region, Subdifferential};
use newton_flow::smoothing::{mollify_phi2, moreau_grad, moreau_value, EnvelopeParams, MollifierParams};
use newton_flow::zoo::{builtin, find, ZooProblem};
use newton_flow::Vector;
use proptest::prelude::*;

fn problem(name: &str) -> ZooProblem {
    find(&builtin(), name).unwrap().clone()
}

fn endpoint(p: &ZooProblem, h: f64, t_end: f64, mode: FlowMode) -> Vector {
    let mut cfg = p.default_config.clone().with_step(h, t_end);
    cfg.mode = mode;
    integrate(&p.operator, &p.objective, &p.x0_default, &cfg)
        .unwrap()
        .last_state()
        .clone()
}

/// Largest `‖(F(x_{k+1}) − F(x_k))/h − DF(x_k)((x_{k+1} − x_k)/h)‖` along a run.
fn chain_rule_residual(p: &ZooProblem, h: f64) -> f64 {
    let cfg = p.default_config.clone().with_step(h, 1.0);
    let traj = integrate(&p.operator, &p.objective, &p.x0_default, &cfg).unwrap();
    (0..traj.len() - 1)
        .map(|k| {
            let dt = traj.times[k + 1] - traj.times[k];
            let (x, y) = (&traj.states[k], &traj.states[k + 1]);
            let quotient = (p.operator.apply(y) - p.operator.apply(x)) / dt;
            let d = graph_derivative(&p.operator, x, &((y - x) / dt), 1e-3).unwrap();
            (quotient - d.value).norm()
        })
        .fold(0.0, f64::max)
}

#[test]
fn chain_rule_residual_is_first_order() {
    let p = problem("huber_composite");
    let r: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|&h| chain_rule_residual(&p, h)).collect();
    assert!(r[0] > 0.0, "sin operator is nonlinear, residual should not vanish");
    for w in r.windows(2) {
        assert!(w[1] <= 0.6 * w[0], "residual not O(h): {r:?}");
    }
    assert!(r[2] <= 10.0 * 0.005, "{r:?}");
}

#[test]
fn explicit_scheme_is_first_order_consistent() {
    for name in ["quadratic_newton", "quadratic_precond"] {
        let p = problem(name);
        let hs = [0.04, 0.02, 0.01, 0.005];
        let ends: Vec<Vector> = hs.iter().map(|&h| endpoint(&p, h, 1.0, FlowMode::Direct)).collect();
        let gaps: Vec<f64> = ends.windows(2).map(|w| (&w[0] - &w[1]).norm()).collect();
        for (g, h) in gaps.iter().zip(hs) {
            assert!(*g <= h, "{name}: ‖x_h − x_h/2‖ = {g} at h = {h}");
        }
        for w in gaps.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.4..0.6).contains(&ratio), "{name}: gap ratio {ratio} is not first order");
        }
    }
}

#[test]
fn homotopy_agrees_with_direct_on_smooth_problem() {
    let p = problem("quadratic_newton");
    let h = 1e-3;
    let t_end = 1.0;
    let direct = endpoint(&p, h, t_end, FlowMode::Direct);
    let mut cfg = p.default_config.clone().with_step(h, t_end);
    cfg.mode = FlowMode::Homotopy { lambda_schedule: Vec::new() };
    let traj = integrate(&p.operator, &p.objective, &p.x0_default, &cfg).unwrap();
    let lambda_min = traj.stage_endpoints.last().unwrap().0;
    let gap = (traj.last_state() - &direct).norm();
    assert!(gap <= 10.0 * (h + lambda_min), "gap {gap}, h {h}, λ_min {lambda_min}");
}

#[test]
fn newton_identity_holds_exactly_for_gradient_operator() {
    // φ = ½x², F = ∇φ: the scheme is x_{k+1} = (1 − h) x_k.
    let obj = ObjectiveSplit::new(Region::cube(1, 4.0)).with_phi1(
        |x| 0.5 * x.norm_squared(),
        |x, _| Subdifferential::singleton(x.clone()),
    );
    let h = 1e-3;
    let cfg = FlowConfig::default().with_step(h, 5.0);
    let traj = integrate(&OperatorSpec::identity(1), &obj, &dvector![1.0], &cfg).unwrap();
    for (k, x) in traj.states.iter().enumerate() {
        let exact = (1.0 - h).powi(k as i32);
        assert!((x[0] - exact).abs() <= 1e-12 * exact.max(1e-300) * (1 + k) as f64, "k = {k}: {} vs {exact}", x[0]);
    }
    assert!((traj.last_state()[0] - (-5.0f64).exp()).abs() < 5e-3);
}

/// `λ ∫|z|ψ(z)dz` by a 10⁵-node midpoint rule with its own bump.
fn first_moment_oracle(lambda: f64) -> f64 {
    let n = 100_000;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let z: f64 = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
        let b = (-1.0 / (1.0 - z * z)).exp();
        num += z.abs() * b;
        den += b;
    }
    lambda * num / den
}

fn abs_phi2() -> ObjectiveSplit {
    ObjectiveSplit::new(Region::cube(1, 10.0)).with_phi2(
        |x| x[0].abs(),
        |x, tie| {
            if x[0].abs() <= tie {
                Subdifferential::from_vertices(vec![dvector![-1.0], dvector![1.0]])
            } else {
                Subdifferential::singleton(dvector![x[0].signum()])
            }
        },
        |_, _| 1.0,
    )
}

#[test]
fn mollified_abs_matches_reference_quadrature() {
    // |z| has a kink at the centre of the support, so Gauss–Legendre only
    // converges at its low-regularity rate; check the error shrinks with the rule.
    let lambda = 0.1;
    let oracle = first_moment_oracle(lambda);
    let err = |n: usize| {
        let m = MollifierParams::with_nodes(lambda, 1, n).unwrap();
        let (value, _) = mollify_phi2(&abs_phi2(), &m, &dvector![0.0], false).unwrap();
        assert!(value > 0.0);
        (value - oracle).abs() / oracle
    };
    let (e64, e256) = (err(64), err(256));
    assert!(e64 <= 1e-3, "64 nodes: relative error {e64}");
    assert!(e256 <= 1e-4, "256 nodes: relative error {e256}");
    assert!(e256 < e64 / 4.0, "{e64} → {e256}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mollified_gradient_is_bounded_by_lipschitz_constant(x in -3.0f64..3.0, k in 1i32..6) {
        let m = MollifierParams::new(0.5f64.powi(k), 1).unwrap();
        let (_, g) = mollify_phi2(&abs_phi2(), &m, &dvector![x], true).unwrap();
        prop_assert!(g.unwrap().norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn envelope_is_monotone_in_lambda(problem_idx in 0usize..7, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let zoo = builtin();
        let p = &zoo[problem_idx];
        let obj = &p.objective;
        let center = obj.domain_region.center();
        let radius = obj.domain_region.inner_radius(&center);
        // Inside the localisation ball.
        let x = Vector::from_fn(obj.dim, |i, _| center[i] + 0.7 * radius * (2.0 * [u, v][i] - 1.0));
        let mut previous = obj.phi1(&x);
        for lambda in [0.025, 0.05, 0.1, 0.2] {
            let params = EnvelopeParams::new(lambda, 1.0, center.clone(), radius).unwrap();
            let e = moreau_value(obj, &params, &x).unwrap();
            prop_assert!(e <= previous + 1e-10, "{}: e_{lambda} = {e} > {previous}", p.name);
            previous = e;
        }
    }

    #[test]
    fn direct_runs_satisfy_energy_and_integral_identities(
        problem_idx in prop::sample::select(vec![0usize, 1, 2, 5, 6]),
        u in 0.0f64..1.0,
        v in 0.0f64..1.0,
    ) {
        let zoo = builtin();
        let p = &zoo[problem_idx];
        let Region::Box { lower, upper } = &p.objective.domain_region else { unreachable!() };
        // Stay well inside the region so the run cannot leave it.
        let x0 = Vector::from_fn(p.dim(), |i, _| {
            let mid = 0.5 * (lower[i] + upper[i]);
            mid + 0.5 * ([u, v][i] - 0.5) * (upper[i] - lower[i])
        });
        prop_assume!(eval_phi(&p.objective, &x0).is_finite());
        let cfg = p.default_config.clone().with_step(1e-2, 1.0);
        let traj = integrate(&p.operator, &p.objective, &x0, &cfg).unwrap();
        let energy = energetic_check(&traj, traj.energy_rho, 1e-9);
        prop_assert!(energy.passed(), "{}: worst margin {}", p.name, energy.worst_margin);
        prop_assert!(integral_residual(&p.operator, &traj) <= 1e-10 * cfg.t_end);
        prop_assert!(traj.phi_values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn moreau_gradient_of_abs_is_clipped_ramp() {
    // For φ₁ = |x|, ∇e_λ(x) = clamp(x/λ, −1, 1).
    let p = problem("abs_value");
    let params = EnvelopeParams::new(0.2, 1.0, dvector![0.0], 2.0).unwrap();
    for x in [-1.0, -0.1, 0.0, 0.05, 0.7] {
        let g = moreau_grad(&p.objective, &params, &dvector![x]).unwrap();
        let expected = (x / 0.2f64).clamp(-1.0, 1.0);
        assert!((g[0] - expected).abs() < 1e-7, "x = {x}: {} vs {expected}", g[0]);
    }
}

#[test]
fn plr_constant_of_concave_quadratic_matches_pair_grid() {
    // φ₁ = −½x²: ζ = −x, so the required constant for a pair is 1/(1+|x₁|+|x₂|).
    let obj = ObjectiveSplit::new(Region::cube(1, 2.0)).with_phi1(
        |x| -0.5 * x.norm_squared(),
        |x, _| Subdifferential::singleton(-x.clone()),
    );
    let cert = check_plr(&obj, &dvector![0.0], 1.0, 20_000).unwrap();
    let grid: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 / 100.0).collect();
    let mut brute: f64 = 0.0;
    for &a in &grid {
        for &b in &grid {
            if a != b {
                let required = (b - a) * (b - a) / ((1.0 + a.abs() + b.abs()) * (a - b) * (a - b));
                brute = brute.max(required);
            }
        }
    }
    assert!(cert.c_estimate <= 1.0 + 1e-12, "{}", cert.c_estimate);
    assert!((cert.c_estimate - brute).abs() <= 0.02, "{} vs grid {brute}", cert.c_estimate);
}

#[test]
fn identical_runs_write_identical_csv() {
    for name in ["huber_composite", "nonunique_min", "constrained_box"] {
        let p = problem(name);
        let cfg = p.default_config.clone().with_step(1e-2, 1.0);
        let csv = || {
            let traj = integrate(&p.operator, &p.objective, &p.x0_default, &cfg).unwrap();
            let mut buf = Vec::new();
            traj.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(csv(), csv(), "{name}");
    }
}
