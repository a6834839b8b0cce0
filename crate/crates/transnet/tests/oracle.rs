use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transnet::oracle::*;
use transnet::relu_net::Aabb;

fn const_y() -> FnField<impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync> {
    FnField { m: 1, dy: 1, f: |_t: f64, _x: &[f64], y: &[f64], o: &mut [f64]| o[0] = y[0] }
}

fn ycosx() -> FnField<impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync> {
    FnField { m: 1, dy: 1, f: |t: f64, x: &[f64], y: &[f64], o: &mut [f64]| o[0] = y[0] * x[0].cos() * (1.0 + 0.3 * t) }
}

fn hat(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

#[test]
fn constant_field_exact() {
    let f = FnField { m: 2, dy: 0, f: |_t: f64, _x: &[f64], _y: &[f64], o: &mut [f64]| {
        o[0] = 0.7;
        o[1] = -1.3;
    } };
    let s = rk4_char(&f, 0.2, 1.7, &[1.0, 2.0], &[], OdeConfig::Steps { n: 4, richardson: false }).unwrap();
    assert!((s.z[0] - (1.0 + 1.5 * 0.7)).abs() < 1e-14);
    assert!((s.z[1] - (2.0 - 1.5 * 1.3)).abs() < 1e-14);
}

#[test]
fn drift_by_parameter() {
    let s = rk4_char(&const_y(), 0.0, 1.0, &[0.0], &[0.3], OdeConfig::Steps { n: 4, richardson: true }).unwrap();
    assert!((s.z[0] - 0.3).abs() < 1e-15);
}

#[test]
fn linear_growth_matches_exponential() {
    let f = FnField { m: 1, dy: 1, f: |_t: f64, x: &[f64], y: &[f64], o: &mut [f64]| o[0] = y[0] * x[0] };
    for (x, y, t0, t1) in [(1.0, 0.7, 0.0, 1.0), (-0.4, -1.0, 0.5, 2.0), (2.0, 0.3, 1.0, -1.0)] {
        let s = rk4_char(&f, t0, t1, &[x], &[y], OdeConfig::Steps { n: 256, richardson: false }).unwrap();
        let want = x * (y * (t1 - t0)).exp();
        assert!((s.z[0] - want).abs() < 1e-9, "{} vs {want}", s.z[0]);
    }
}

#[test]
fn tolerance_mode_reaches_tolerance() {
    let f = ycosx();
    let s = rk4_char(&f, 0.0, 1.0, &[0.4], &[0.9], OdeConfig::Tolerance { tol: 1e-11 }).unwrap();
    let reference = rk4_char(&f, 0.0, 1.0, &[0.4], &[0.9], OdeConfig::Steps { n: 1 << 14, richardson: false }).unwrap();
    assert!(s.err_estimate <= 1e-11);
    assert!((s.z[0] - reference.z[0]).abs() < 1e-10);
}

#[test]
fn config_rules_enforced() {
    assert!(rk4_char(&const_y(), 0.0, 1.0, &[0.0], &[0.1], OdeConfig::Steps { n: 3, richardson: false }).is_err());
    assert!(OdeConfig::Tolerance { tol: 1e-3 }.check_against(1e-3).is_err());
    assert!(OdeConfig::for_certificate(0.05).check_against(0.05).is_ok());
    assert!(rk4_char(&const_y(), 0.0, 1.0, &[0.0, 1.0], &[0.1], OdeConfig::for_certificate(1.0)).is_err());
}

#[test]
fn semigroup_and_inversion() {
    let f = ycosx();
    let cfg = OdeConfig::Tolerance { tol: 1e-12 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x = rng.gen_range(-1.0..1.0);
        let y = rng.gen_range(-1.0..1.0);
        let tau = rng.gen_range(0.1..0.9);
        let whole = rk4_char(&f, 0.0, 1.0, &[x], &[y], cfg).unwrap().z;
        let half = rk4_char(&f, 0.0, tau, &[x], &[y], cfg).unwrap().z;
        let joined = rk4_char(&f, tau, 1.0, &half, &[y], cfg).unwrap().z;
        assert!((whole[0] - joined[0]).abs() < 1e-9);
        let back = rk4_char(&f, 1.0, 0.0, &whole, &[y], cfg).unwrap().z;
        assert!((back[0] - x).abs() < 1e-8);
        let rev = Reversed { inner: &f, t_ref: 1.0 };
        let via_rev = rk4_char(&rev, 0.0, 1.0, &whole, &[y], cfg).unwrap().z;
        assert!((via_rev[0] - back[0]).abs() < 1e-9);
    }
}

#[test]
fn exact_const_values_and_agreement() {
    let f = const_y();
    let ex = ExactConst::new(&f, 2.0, &Aabb::cube(1, -2.0, 2.0), &[vec![0.3], vec![-0.7]], 50).unwrap();
    assert!((ex.z(0.5, &[1.0], &[-0.4])[0] - 0.8).abs() < 1e-15);
    let u0 = |x: &[f64], _y: &[f64]| hat(x[0]);
    assert!((ex.u(&u0, 1.0, &[0.25], &[0.25]) - 1.0).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let (x, y, t) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
        let r = rk4_char(&f, 0.0, t, &[x], &[y], OdeConfig::Steps { n: 4, richardson: false }).unwrap();
        assert!((r.z[0] - ex.z(t, &[x], &[y])[0]).abs() < 1e-12);
    }
    assert!(matches!(
        ExactConst::new(&ycosx(), 1.0, &Aabb::cube(1, -1.0, 1.0), &[vec![0.5]], 20),
        Err(OracleError::NotConstant(_))
    ));
}

#[test]
fn solution_oracle_closed_forms() {
    let f = const_y();
    let cfg = OdeConfig::for_certificate(1e-6);
    let u0 = |x: &[f64], _y: &[f64]| hat(x[0]);
    let v = solution_oracle(&f, &u0, None, None, 0.6, &[0.1], &[0.5], cfg).unwrap();
    assert!((v.value - hat(0.1 - 0.3)).abs() < 1e-12);

    let zero = |_x: &[f64], _y: &[f64]| 0.0;
    let one = |_t: f64, _x: &[f64], _y: &[f64]| 1.0;
    let v = solution_oracle(&f, &zero, Some(&one), None, 0.8, &[0.1], &[0.5], cfg).unwrap();
    assert!((v.value - 0.8).abs() < 1e-10);

    let support = Aabb::cube(1, -1.0, 1.0);
    let v = solution_oracle(&f, &u0, None, Some(&support), 1.0, &[-0.5], &[1.0], cfg).unwrap();
    assert!(v.out_of_support);
    assert_eq!(v.value, 0.0);
}

#[test]
fn manufactured_polynomial_solution() {
    // u = p(x - t y) + t^2 solves u_t + y u_x = 2t
    let p = |s: f64| 0.5 + s - 0.3 * s * s + 0.1 * s.powi(3);
    let f = const_y();
    let u0 = move |x: &[f64], _y: &[f64]| p(x[0]);
    let src = |t: f64, _x: &[f64], _y: &[f64]| 2.0 * t;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let (x, y, t) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
        let v = solution_oracle(&f, &u0, Some(&src), None, t, &[x], &[y], OdeConfig::for_certificate(1e-8)).unwrap();
        assert!((v.value - (p(x - t * y) + t * t)).abs() < 1e-8);
    }
}

#[test]
fn oracle_along_curved_characteristics() {
    // u0 = 0, f = cos-profile: compare with an augmented-ODE integral
    let f = ycosx();
    let src = |s: f64, x: &[f64], _y: &[f64]| 0.5 + 0.5 * (x[0] + s).cos();
    let zero = |_x: &[f64], _y: &[f64]| 0.0;
    let (t, x, y) = (0.9, 0.3, -0.8);
    let v = solution_oracle(&f, &zero, Some(&src), None, t, &[x], &[y], OdeConfig::for_certificate(1e-8)).unwrap();
    let aug = FnField { m: 2, dy: 1, f: |s: f64, z: &[f64], y: &[f64], o: &mut [f64]| {
        o[0] = y[0] * z[0].cos() * (1.0 + 0.3 * s);
        o[1] = 0.5 + 0.5 * (z[0] + s).cos();
    } };
    let r = rk4_char(&aug, t, 0.0, &[x, 0.0], &[y], OdeConfig::Steps { n: 4096, richardson: false }).unwrap();
    assert!((v.value + r.z[1]).abs() < 1e-9, "{} vs {}", v.value, -r.z[1]);
}

#[test]
fn simpson_tolerance_on_kink() {
    let v = adaptive_simpson(|x| (x - 0.3).abs(), -1.0, 1.0, 1e-10);
    assert!((v - (1.3 * 1.3 / 2.0 + 0.7 * 0.7 / 2.0)).abs() < 1e-9);
}
