use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transnet::oracle::{adaptive_simpson, rk4_char, OdeConfig};
use transnet::relu_net::Aabb;
use transnet::transport_core::*;

fn cosine(amp: f64, freq: f64) -> Profile {
    Profile::Cosine { amp, freq: vec![freq], phase: 0.0, time_freq: 0.0, time_phase: 0.0 }
}

fn affine(omega: Vec<f64>, comps: Vec<Profile>) -> Convection {
    Convection::Affine(AffineConvection::from_catalog(omega, comps.into_iter().map(|p| vec![p]).collect()).unwrap())
}

fn unit_problem(conv: Convection, t_hat: f64) -> TransportProblem {
    TransportProblem::characteristics(conv, t_hat, Aabb::cube(1, 0.0, 1.0)).unwrap()
}

#[test]
fn macro_grid_examples() {
    let g = macro_grid(1.0, 1.0).unwrap();
    assert_eq!(g.k, 2);
    assert!((g.slab_max - 0.5).abs() < 1e-15);
    assert_eq!(macro_grid(2.0, 3.0).unwrap().k, 12);
    assert_eq!(macro_grid(0.5, 1.0).unwrap().k, 1);
    assert!(macro_grid(0.0, 1.0).is_err());
    assert!(macro_grid(1.0, 0.5).is_err());
}

#[test]
fn schedule_formulas() {
    let eta = eta_for(0.1, 2);
    assert!((eta - 0.02387).abs() < 1e-5, "{eta}");
    assert_eq!(mu_for(0.125), 2);
    let tau = tau_for(eta);
    assert!((tau - 0.01448).abs() < 1e-5, "{tau}");
    assert_eq!(q_affine(1.0, 0.5, tau), 70);
}

#[test]
fn schedule_refuses_beyond_ceiling() {
    let p = unit_problem(affine(vec![1.0], vec![cosine(1.0, 1.0)]), 1.0);
    let g = macro_grid(1.0, p.convection.norm()).unwrap();
    let err = schedule(1e-6, &g, &p, &Limits::default()).unwrap_err();
    assert!(matches!(err, TransportError::ResourceCeiling { .. }), "{err}");
}

#[test]
fn picard_constant_field_is_exact_after_one_iterate() {
    let conv = affine(vec![1.0], vec![Profile::Constant { value: 0.7 }]);
    let tr = picard_numeric(conv.field(), 1.0, 0.0, 0.5, &[0.2], &[0.5], 1, 16).unwrap();
    for (t, v) in tr.times.iter().zip(&tr.values) {
        assert!((v[0] - (0.2 + 0.35 * t)).abs() < 1e-14);
    }
    let id = picard_numeric(conv.field(), 1.0, 0.0, 0.5, &[0.2], &[0.5], 0, 16).unwrap();
    assert!(id.values.iter().all(|v| v[0] == 0.2));
    assert!(matches!(picard_numeric(conv.field(), 2.0, 0.0, 0.5, &[0.2], &[0.5], 1, 16), Err(TransportError::Contraction(_))));
}

#[test]
fn picard_contracts_on_cosine_field() {
    let conv = affine(vec![1.0], vec![cosine(1.0, 1.0)]);
    let field = conv.field();
    for &(x, y) in &[(0.3, 1.0), (-0.7, -0.9), (1.1, 0.4)] {
        let z: Vec<f64> = (0..=20)
            .map(|i| rk4_char(field, 0.0, 0.025 * i as f64, &[x], &[y], OdeConfig::Tolerance { tol: 1e-11 }).unwrap().z[0])
            .collect();
        for k in 1..=6 {
            let tr = picard_numeric(field, 1.0, 0.0, 0.5, &[x], &[y], k, 2000).unwrap();
            let err = (0..=20).map(|i| (tr.at(0.025 * i as f64)[0] - z[i]).abs()).fold(0.0, f64::max);
            assert!(err <= 0.5f64.powi(k as i32 + 1), "k={k} err={err}");
        }
    }
}

#[test]
fn quadrature_bounds_hold() {
    let g = |s: f64| (3.0 * s).sin();
    let q = 7;
    for &t in &[0.0, 0.1, 0.33, 0.5] {
        let exact = adaptive_simpson(g, 0.0, t, 1e-13);
        assert!((rho_sum(g, 0.0, 0.5, q, t) - exact).abs() <= quad_bound_lip(0.5, 3.0, q) + 1e-13);
        let avg = |a: f64, b: f64| adaptive_simpson(g, a, b, 1e-13) / (b - a);
        assert!((rho_sum_avg(avg, 0.0, 0.5, q, t) - exact).abs() <= quad_bound_avg(0.5, 1.0, q) + 1e-13);
    }
    let t = 0.5;
    let avg = |a: f64, b: f64| adaptive_simpson(g, a, b, 1e-13) / (b - a);
    assert!((rho_sum_avg(avg, 0.0, 0.5, q, t) - adaptive_simpson(g, 0.0, 0.5, 1e-13)).abs() < 1e-12);
}

#[test]
fn slab_zero_field_is_identity() {
    let p = unit_problem(affine(vec![1.0], vec![Profile::Constant { value: 0.0 }]), 1.0);
    let bx = p.reach_box(0.1);
    let s = build_slab_net(&p, 0.0, 0.5, 0.01, &bx).unwrap();
    let net = s.one_step_network().unwrap();
    for &(t, x, y) in &[(0.0, 0.3, 0.9), (0.25, -0.5, -1.0), (0.5, 1.7, 0.1)] {
        assert_eq!(net.eval(&[t, x, y]).unwrap(), vec![x]);
    }
}

#[test]
fn slab_constant_field_error_is_implantation_only() {
    let omega = vec![0.6, 0.4];
    let p = unit_problem(affine(omega, vec![Profile::Constant { value: 0.8 }, Profile::Constant { value: -0.5 }]), 1.0);
    let bx = p.reach_box(0.1);
    let tau = 0.01;
    let s = build_slab_net(&p, 0.0, 0.5, tau, &bx).unwrap();
    let net = s.one_step_network().unwrap();
    let delta = delta_affine(tau, 0.5, 1.0);
    for i in 0..50 {
        let t = 0.01 * i as f64;
        let (x, y) = (0.37, [0.9 - 0.03 * i as f64, -0.4]);
        let exact = x + t * (0.6 * 0.8 * y[0] - 0.4 * 0.5 * y[1]);
        let got = net.eval(&[t, x, y[0], y[1]]).unwrap()[0];
        assert!((got - exact).abs() <= 0.5 * delta + 1e-12, "t={t} err={}", (got - exact).abs());
    }
}

#[test]
fn slab_cosine_one_step_error() {
    let p = unit_problem(affine(vec![1.0], vec![cosine(1.0, 1.0)]), 1.0);
    let bx = p.reach_box(0.1);
    let s = build_slab_net(&p, 0.0, 0.5, 0.01, &bx).unwrap();
    let net = s.one_step_network().unwrap();
    let field = p.convection.field();
    let sb = Aabb::new(vec![0.0, 0.0, -1.0], vec![0.5, 1.0, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = sb.sample(&mut rng);
        let exact = q[1] + adaptive_simpson(|s| field.eval(s, &[q[1]], &[q[2]])[0], 0.0, q[0], 1e-12);
        worst = worst.max((net.eval(&q).unwrap()[0] - exact).abs());
    }
    assert!(worst <= 0.01, "{worst}");
}

#[test]
fn char_net_constant_field() {
    let p = unit_problem(affine(vec![1.0], vec![Profile::Constant { value: 1.0 }]), 1.0);
    let net = build_char_net(&p, 0.05, Direction::Forward, &Limits::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = net.in_box();
    for _ in 0..500 {
        let s = b.sample(&mut rng);
        let z = net.eval(s[0], &s[1..2], &s[2..]);
        assert!((z[0] - (s[1] + s[0] * s[2])).abs() <= 0.05);
    }
    let cert = certify_char(&net, &p, 300, 2).unwrap();
    assert!(cert.pass, "{cert:?}");
}

#[test]
fn char_net_junctions_and_compiled_eval() {
    let p = unit_problem(affine(vec![1.0], vec![cosine(0.5, 1.0)]), 1.2);
    let net = build_char_net(&p, 0.1, Direction::Forward, &Limits::default()).unwrap();
    assert!(net.slabs.len() >= 2);
    for &(x, y) in &[(0.2, 0.9), (0.8, -1.0)] {
        for g in net.junction_gaps(&[x], &[y]) {
            assert!(g <= 1e-12, "{g}");
        }
        for i in 0..=12 {
            let t = 0.1 * i as f64;
            let (a, b) = (net.eval(t, &[x], &[y]), net.eval_exact(t, &[x], &[y]));
            assert!((a[0] - b[0]).abs() <= 1e-10);
        }
    }
    let cert = certify_char(&net, &p, 400, 5).unwrap();
    assert!(cert.pass, "{cert:?}");
    for (e, b) in cert.per_slab.iter().zip(&cert.budgets) {
        assert!(*e <= *b, "{e} > {b}");
    }
}

#[test]
fn char_net_backward_matches_backward_characteristic() {
    let p = unit_problem(affine(vec![1.0], vec![cosine(1.0, 2.0)]), 1.0);
    let net = build_char_net(&p, 0.1, Direction::Backward, &Limits::default()).unwrap();
    let cert = certify_char(&net, &p, 300, 9).unwrap();
    assert!(cert.pass, "{cert:?}");
}

#[test]
fn predicted_complexity_examples() {
    // A = T̂ = 1 and Λ = 0, so L = 1
    let conv = |dy: usize| affine(vec![1.0 / dy as f64; dy], vec![Profile::Constant { value: 1.0 }; dy]);
    let p4 = unit_problem(conv(4), 1.0);
    let v = predicted_complexity(&p4, 0.1, Kind::Char, 1.0).unwrap();
    assert!((v / 6.70e4 - 1.0).abs() < 0.01, "{v}");
    let p8 = unit_problem(conv(8), 1.0);
    let w = predicted_complexity(&p8, 0.1, Kind::Char, 1.0).unwrap();
    assert!((w / v - 2.0).abs() < 1e-12);
    assert_eq!(beta(1, 2.0), 1.0);
    assert_eq!(beta(3, 2.0), 2.0);
}

#[test]
fn solution_constant_field_no_source() {
    let conv = affine(vec![0.5, 0.5], vec![Profile::Constant { value: 1.0 }, Profile::Constant { value: -0.6 }]);
    let u0 = Datum::Profile { profile: Profile::Bump { center: vec![0.5], radius: 0.5, height: 1.0 } };
    let p = TransportProblem::new(conv, u0, Datum::Zero, 1.0, Aabb::cube(1, 0.0, 1.0)).unwrap();
    let sol = build_solution_net(&p, 0.1, &SolutionOptions::default()).unwrap();
    let cert = certify_solution(&sol, &p, 200, 4).unwrap();
    assert!(cert.pass, "{cert:?}");
    assert_eq!(cert.sup_err, cert.sup_err_minus);
}

#[test]
fn solution_unit_source_gives_time() {
    let conv = affine(vec![1.0], vec![cosine(0.3, 1.0)]);
    let p = TransportProblem::new(conv, Datum::Zero, Datum::Constant { value: 1.0 }, 0.5, Aabb::cube(1, 0.0, 1.0)).unwrap();
    let sol = build_solution_net(&p, 0.1, &SolutionOptions::default()).unwrap();
    for i in 0..=10 {
        let t = 0.05 * i as f64;
        assert!((sol.eval(t, &[0.4], &[0.3]) - t).abs() <= 1e-12);
    }
    let minus = build_solution_net(&p, 0.1, &SolutionOptions { minus_sign: true, ..Default::default() }).unwrap();
    assert!((minus.eval(0.4, &[0.4], &[0.3]) + 0.4).abs() <= 1e-12);
}

#[test]
fn solution_rejects_time_dependent_field() {
    let prof = Profile::Cosine { amp: 1.0, freq: vec![1.0], phase: 0.0, time_freq: 1.0, time_phase: 0.0 };
    let p = TransportProblem::new(affine(vec![1.0], vec![prof]), Datum::Zero, Datum::Zero, 1.0, Aabb::cube(1, 0.0, 1.0))
        .unwrap();
    assert!(matches!(build_solution_net(&p, 0.1, &SolutionOptions::default()), Err(TransportError::Unsupported(_))));
}

#[test]
fn lipschitz_zero_field() {
    let p = unit_problem(affine(vec![1.0], vec![Profile::Constant { value: 0.0 }]), 1.0);
    let net = build_char_net(&p, 0.1, Direction::Forward, &Limits::default()).unwrap();
    let r = lipschitz_certificate(&net, 200, 1);
    assert!((r.lip_xy - 1.0).abs() < 1e-9, "{r:?}");
    assert_eq!(r.lip_t, 0.0);
    assert!(r.pass);
}

#[test]
fn lipschitz_affine_field_within_threshold() {
    let p = unit_problem(affine(vec![1.0], vec![cosine(1.0, 1.0)]), 1.0);
    let coarse = build_char_net(&p, 0.1, Direction::Forward, &Limits::default()).unwrap();
    let fine = build_char_net(&p, 0.05, Direction::Forward, &Limits::default()).unwrap();
    let r = lipschitz_certificate(&coarse, 400, 2);
    assert!(r.pass, "{r:?}");
    assert!(!r.pessimistic);
    let (b1, _) = coarse.lip_bounds();
    let (b2, _) = fine.lip_bounds();
    assert!(b2 <= b1 * (1.0 + 1e-12));
}
