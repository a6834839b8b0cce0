use std::sync::Arc;

use proptest::prelude::*;
use transnet::comp_calculus::*;
use transnet::relu_net::Aabb;

fn lin(in_dim: usize, w: f64) -> Factor {
    Factor::linear(in_dim, (0..in_dim).map(|i| vec![(i, w)]).collect(), vec![0.0; in_dim])
}

fn cos_field(m: usize, dy: usize, lam: f64, omega: &[f64]) -> CompRep {
    let comps: Vec<ScalarFn> = (0..m * dy)
        .map(|k| {
            let ph = 0.3 * k as f64;
            Arc::new(move |x: &[f64]| (lam * x.iter().sum::<f64>() / x.len() as f64 + ph).cos()) as ScalarFn
        })
        .collect();
    let a_bound = omega.iter().sum::<f64>();
    affine_field_rep(&Aabb::cube(m, -1.0, 1.0), omega, comps, 1.0, lam, a_bound).unwrap()
}

#[test]
fn affine_rep_complexity_m1() {
    let rep = cos_field(1, 3, 0.1, &[1.0 / 3.0; 3]);
    assert_eq!(complexity(&rep), 7);
    assert_eq!(s_infinity(&rep), 1);
}

#[test]
fn affine_rep_sparsity_m2() {
    let rep = cos_field(2, 2, 0.1, &[0.5, 0.5]);
    assert_eq!(s_infinity(&rep), 2);
}

#[test]
fn complexity_adds_under_composition() {
    // 5 components of weight 1, then 8
    let a = CompRep::new(vec![lin(5, 1.0)]).unwrap();
    let b = CompRep::new(vec![lin(5, 0.5), Factor::linear(5, (0..3).map(|i| vec![(i, 1.0)]).collect(), vec![0.0; 3])]).unwrap();
    assert_eq!(complexity(&a), 5);
    assert_eq!(complexity(&b), 8);
    let c = compose_reps(&b, &a).unwrap();
    assert_eq!(complexity(&c), 13);
}

#[test]
fn complexity_adds_under_sum() {
    let a = cos_field(1, 2, 0.1, &[0.5, 0.5]);
    let b = CompRep::new(vec![Factor::linear(3, vec![vec![(0, 1.0), (2, 1.0)]], vec![0.5])]).unwrap();
    let s = sum_reps(&a, &b).unwrap();
    assert_eq!(complexity(&s), complexity(&a) + complexity(&b));
    for x in [[0.2, -0.5, 0.7], [-1.0, 1.0, 0.0]] {
        let want = a.eval(&x)[0] + b.eval(&x)[0];
        assert!((s.eval(&x)[0] - want).abs() < 1e-14);
    }
}

#[test]
fn identity_rep_is_trivial() {
    let rep = CompRep::new(vec![Factor::identity(4)]).unwrap();
    assert_eq!(complexity(&rep), 0);
    assert_eq!(s_infinity(&rep), 0);
}

#[test]
fn last_factor_must_be_finitely_parametrized() {
    let f = Factor::generic(1, vec![Component::function(vec![0], |x| x[0].sin(), 1.0, 1.0, Aabb::unit(1))], 1.0);
    assert!(matches!(CompRep::new(vec![f]), Err(CompError::Invalid(_))));
}

#[test]
fn single_affine_factor_norm() {
    let rep = CompRep::new(vec![Factor::linear(1, vec![vec![(0, 2.0)]], vec![0.0])]).unwrap();
    let iv = comp_norm_interval(&rep, Regularizer::LipFull, &Aabb::cube(1, -1.0, 1.0), 500, 1).unwrap();
    assert_eq!(iv.upper, 2.0);
    assert!((iv.lower - 2.0).abs() < 1e-9);
}

#[test]
fn two_contractions() {
    let rep = CompRep::new(vec![lin(2, 0.5), lin(2, 0.5)]).unwrap();
    let iv = comp_norm_interval(&rep, Regularizer::LipFull, &Aabb::cube(2, -1.0, 1.0), 2000, 3).unwrap();
    let full = iv.partials.iter().find(|p| p.k == 1).unwrap();
    assert_eq!(full.upper, 0.25);
    assert!(full.lower <= 0.25 && full.lower > 0.2499);
    assert!(iv.lower <= iv.upper);
}

#[test]
fn affine_rep_norm_is_l() {
    let (a, lam, omega) = (1.0, 0.1, [0.25; 4]);
    let rep = cos_field(1, 4, lam, &omega);
    let bbox = Aabb::cube(5, -1.0, 1.0);
    let iv = comp_norm_interval(&rep, Regularizer::LipFull, &bbox, 20_000, 7).unwrap();
    assert!((iv.upper - (a + lam * 1.0)).abs() < 1e-12);
    assert!(iv.lower <= iv.upper);
    let weak = comp_norm_interval(&rep, Regularizer::LipFactors, &bbox, 2000, 7).unwrap();
    assert!(weak.upper <= iv.upper);
}

#[test]
fn understated_constant_is_reported() {
    let rep = CompRep::new(vec![Factor::linear(1, vec![vec![(0, 3.0)]], vec![0.0]), lin(1, 1.0)]).unwrap();
    let bad = match rep.factors()[0].clone() {
        Factor::Components { in_dim, comps, norm, .. } => Factor::Components { in_dim, comps, lip: 1.0, norm },
        f => f,
    };
    let rep = CompRep::new(vec![bad, lin(1, 1.0)]).unwrap();
    assert!(matches!(
        comp_norm_interval(&rep, Regularizer::LipFull, &Aabb::unit(1), 100, 0),
        Err(CompError::LipschitzViolation { factor: 1, .. })
    ));
}

#[test]
fn gamma_inverse_spec_values() {
    assert!((gamma_inverse(&GrowthFunction::Alg { c: 1.0, alpha: 2.0 }, 9.0).unwrap() - 3.0).abs() < 1e-12);
    assert!((gamma_inverse(&GrowthFunction::Exp { c: 1.0, alpha: 1.0 }, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-12);
    assert!((gamma_inverse(&GrowthFunction::Alg { c: 2.0, alpha: 0.5 }, 8.0).unwrap() - 16.0).abs() < 1e-9);
}

#[test]
fn near_inverse_round_trip() {
    let ni = near_inverse(1.0, 1.0, 1.0, 1.0).unwrap();
    for k in 4..=20 {
        let r = 2f64.powi(k);
        let ratio = ni.phi(ni.eval(r)) / r;
        assert!((0.25..=4.0).contains(&ratio), "r = 2^{k}: ratio {ratio}");
    }
    assert!(near_inverse(0.0, 1.0, 1.0, 1.0).is_err());
}

#[test]
fn near_inverse_matches_cnn_rate_shape() {
    // zeta = 2, beta = 2, b1 = b2 = 1: r^{1/2} |log2 r|^{-1} up to 2^{beta/zeta}
    let ni = near_inverse(1.0, 1.0, 2.0, 2.0).unwrap();
    for r in [16.0f64, 256.0, 4096.0] {
        let shape = r.sqrt() / r.log2();
        assert!((ni.eval(r) / shape - 2.0).abs() < 1e-12);
    }
}

#[test]
fn implant_exact_for_linear_and_multilinear() {
    let f1 = Factor::linear(2, vec![vec![(0, 1.0)], vec![(0, 0.5), (1, -1.0)]], vec![0.0, 0.25]);
    let f2 = Factor::multilinear(2, vec![vec![(2.0, vec![0, 1]), (1.0, vec![0])]], 4.0);
    let rep = CompRep::new(vec![f1, f2]).unwrap();
    let imp = implant(&rep, &[0.1, 0.1]).unwrap();
    assert_eq!(imp.error_bound, 0.0);
    for x in [[0.3, -0.2], [1.0, 1.0], [-0.7, 0.4]] {
        assert!((imp.net.eval(&x).unwrap()[0] - rep.eval(&x)[0]).abs() < 1e-12);
    }
}

#[test]
fn implant_two_factor_bound() {
    let bx = Aabb::cube(1, -1.0, 1.0);
    let g1 = Factor::generic(1, vec![Component::function(vec![0], |x| x[0].sin(), 1.0, 1.0, bx)], 1.0);
    let g2 = Factor::net(Arc::new(transnet::relu_net::identity(1)), 1.0);
    let rep = CompRep::new(vec![g1, g2]).unwrap();
    let imp = implant(&rep, &[0.01, 0.01]).unwrap();
    assert!((imp.error_bound - 0.01).abs() < 1e-15);

    let g1 = Factor::generic(1, vec![Component::function(vec![0], |x| x[0].sin(), 1.0, 1.0, Aabb::cube(1, -1.0, 1.0))], 1.0);
    let g2 = Factor::generic(1, vec![Component::function(vec![0], |x| x[0].cos(), 1.0, 1.0, Aabb::cube(1, -1.0, 1.0))], 1.0);
    let rep = CompRep::new(vec![g1, g2, lin(1, 1.0)]).unwrap();
    let imp = implant(&rep, &[0.01, 0.01, 0.0]).unwrap();
    assert!((imp.error_bound - 0.02).abs() < 1e-15);
    let err = (0..=2000)
        .map(|i| -1.0 + i as f64 / 1000.0)
        .map(|x| (imp.net.eval(&[x]).unwrap()[0] - x.sin().cos()).abs())
        .fold(0.0, f64::max);
    assert!(err <= imp.error_bound, "{err}");
}

#[test]
fn implant_affine_field_within_bound() {
    use rand::{Rng, SeedableRng};
    let rep = cos_field(1, 3, 0.5, &[1.0 / 3.0; 3]);
    let imp = implant(&rep, &[0.02, 0.0]).unwrap();
    assert!(imp.error_bound > 0.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut err = 0.0f64;
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        err = err.max((imp.net.eval(&x).unwrap()[0] - rep.eval(&x)[0]).abs());
    }
    assert!(err <= imp.error_bound, "{err} > {}", imp.error_bound);
    // first-factor outputs read at most s_∞ = 1 variable
    let supports = imp.factor_nets[0].output_supports();
    assert!(supports.iter().all(|s| s.len() <= s_infinity(&rep)));
}

#[test]
fn implant_for_accuracy_lipschitz_1d() {
    let eps = 0.05;
    let family = |_n: usize| {
        let g = Factor::generic(1, vec![Component::function(vec![0], |x| (3.0 * x[0]).sin() / 3.0, 1.0, 1.0 / 3.0, Aabb::unit(1))], 1.0);
        CompRep::new(vec![g, lin(1, 1.0)])
    };
    let b = implant_for_accuracy(&family, &GrowthFunction::Alg { c: 1.0, alpha: 1.0 }, 1.0, 1.0, eps).unwrap();
    assert_eq!(b.n_eps, 40);
    let err = (0..=4000)
        .map(|i| i as f64 / 4000.0)
        .map(|x| (b.net.eval(&[x]).unwrap()[0] - (3.0 * x).sin() / 3.0).abs())
        .fold(0.0, f64::max);
    assert!(err <= eps, "{err}");
    assert!(b.implant_bound <= eps / 2.0);
}

#[test]
fn seminorm_upper_examples() {
    let gf = GrowthFunction::Exp { c: 1.0, alpha: 0.5 };
    assert_eq!(aclass_seminorm_upper(&[(1, 0.0, 1.0)], &gf).unwrap(), 1.0);
    let samples: Vec<_> = (1..10).map(|n| (n, 1.0 / gf.eval(n as f64), 1.0)).collect();
    assert!((aclass_seminorm_upper(&samples, &gf).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn descriptor_serializes() {
    let rep = cos_field(1, 2, 0.1, &[0.5, 0.5]);
    let doc: RepDoc = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(doc.complexity, 5);
    assert_eq!(doc.factors.len(), 2);
    assert_eq!(doc.factors[1].kind, FactorKind::Multilinear);
}

proptest! {
    #[test]
    fn factor_norm_ordering(l1 in 0.1f64..3.0, l2 in 0.1f64..3.0, l3 in 0.1f64..3.0) {
        let rep = CompRep::new(vec![lin(1, l1), lin(1, l2), lin(1, l3)]).unwrap();
        let bx = Aabb::unit(1);
        let full = comp_norm_interval(&rep, Regularizer::LipFull, &bx, 64, 5).unwrap();
        let weak = comp_norm_interval(&rep, Regularizer::LipFactors, &bx, 64, 5).unwrap();
        prop_assert!(weak.upper <= full.upper);
        prop_assert!(full.upper <= weak.upper.powi(3).max(1.0).max(weak.upper));
        prop_assert!(full.lower <= full.upper * (1.0 + 1e-12));
    }

    #[test]
    fn composition_rule_on_upper_bounds(l1 in 0.1f64..3.0, l2 in 0.1f64..3.0) {
        let a = CompRep::new(vec![lin(1, l1)]).unwrap();
        let b = CompRep::new(vec![lin(1, l2)]).unwrap();
        let bx = Aabb::unit(1);
        let ra = comp_norm_interval(&a, Regularizer::LipFull, &bx, 16, 1).unwrap().upper;
        let rb = comp_norm_interval(&b, Regularizer::LipFull, &bx, 16, 1).unwrap().upper;
        let c = compose_reps(&b, &a).unwrap();
        let rc = comp_norm_interval(&c, Regularizer::LipFull, &bx, 16, 1).unwrap().upper;
        prop_assert!(rc <= ra.max(rb).max(ra * rb) * (1.0 + 1e-12));
    }

    #[test]
    fn n_epsilon_covers_target(c in 0.5f64..4.0, alpha in 0.5f64..3.0, v in 0.1f64..10.0, eps in 0.001f64..1.0) {
        let gf = GrowthFunction::Alg { c, alpha };
        let n = n_epsilon(&gf, v, eps).unwrap();
        prop_assert!(v / gf.eval(n as f64) <= eps * (1.0 + 1e-8));
    }
}
