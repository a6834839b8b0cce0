use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transnet::harness::{
    algebra_suite, contraction_suite, fit_rate, interp_suite, quadrature_suite, rho_suite, run_convergence,
    run_properties, Check, ExperimentConfig, RunOptions,
};
use transnet::relu_net::Aabb;
use transnet::transport_core::{
    build_char_net, build_solution_net, certify_char, certify_solution, lipschitz_certificate, AffineConvection,
    Convection, Datum, Direction, Limits, Profile, SolutionOptions, TransportProblem,
};

struct Log {
    lines: Vec<(String, bool, String)>,
}

impl Log {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("{id:<4} {}  {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id.into(), pass, detail));
    }

    fn checks(&mut self, id: &str, checks: &[Check], secs: f64, limit: f64) {
        let bad: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        let ok = bad.is_empty() && !checks.is_empty() && secs < limit;
        self.record(id, ok, format!("{} checks, failed {bad:?}, {secs:.1} s < {limit} s", checks.len()));
    }
}

fn cosine(amp: f64, freq: f64, phase: f64) -> Profile {
    Profile::Cosine { amp, freq: vec![freq], phase, time_freq: 0.0, time_phase: 0.0 }
}

fn affine(omega: Vec<f64>, comps: Vec<Profile>) -> Convection {
    Convection::Affine(AffineConvection::from_catalog(omega, comps.into_iter().map(|p| vec![p]).collect()).unwrap())
}

/// `ω_j = 1/d_y`, components `cos(0.1 x + 0.7 j)`.
fn char_problem(dy: usize) -> TransportProblem {
    let comps = (0..dy).map(|j| cosine(1.0, 0.1, 0.7 * j as f64)).collect();
    TransportProblem::characteristics(affine(vec![1.0 / dy as f64; dy], comps), 1.0, Aabb::cube(1, 0.0, 1.0)).unwrap()
}

fn sup_vs<F: Fn(f64, &[f64], &[f64]) -> f64, G: Fn(f64, &[f64], &[f64]) -> f64>(
    p: &TransportProblem,
    net: F,
    exact: G,
    n: usize,
    seed: u64,
) -> f64 {
    let bbox = p.sample_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup = 0.0f64;
    for _ in 0..n {
        let q: Vec<f64> = bbox.lo.iter().zip(&bbox.hi).map(|(l, h)| rng.gen_range(*l..=*h)).collect();
        sup = sup.max((net(q[0], &q[1..2], &q[2..]) - exact(q[0], &q[1..2], &q[2..])).abs());
    }
    sup
}

#[test]
fn acceptance() {
    let seed = 1;
    let mut log = Log { lines: Vec::new() };

    let t = Instant::now();
    let c1 = contraction_suite(1000, seed).unwrap();
    log.checks("C1", &c1, t.elapsed().as_secs_f64(), 5.0);

    let t = Instant::now();
    let mut c2 = quadrature_suite(100, seed);
    c2.extend(rho_suite(200, seed));
    log.checks("C2", &c2, t.elapsed().as_secs_f64(), 5.0);

    let t = Instant::now();
    let c3 = interp_suite(&[1e-2, 1e-3], 10_000, seed).unwrap();
    log.checks("C3", &c3, t.elapsed().as_secs_f64(), 60.0);

    let t = Instant::now();
    let c4 = algebra_suite(50, 20, seed).unwrap();
    log.checks("C4", &c4, t.elapsed().as_secs_f64(), 30.0);

    // characteristic ladder at d_y = 4
    let t = Instant::now();
    let p4 = char_problem(4);
    let limits = Limits::default();
    let mut pts = Vec::new();
    let (mut c5_ok, mut c8_ok) = (true, true);
    let mut size_dy4 = 0;
    for eps in [0.1, 0.05, 0.025] {
        let net = build_char_net(&p4, eps, Direction::Forward, &limits).unwrap();
        let cert = certify_char(&net, &p4, 10_000, seed).unwrap();
        c5_ok &= cert.pass && cert.sup_err <= eps;
        log.record("C5", cert.pass, format!("eps={eps} sup_err={:.3e} <= {eps} size={}", cert.sup_err, net.size()));
        let lip = lipschitz_certificate(&net, 200, seed + 1);
        c8_ok &= lip.pass;
        log.record(
            "C8",
            lip.pass,
            format!(
                "eps={eps} lip_xy={:.4} <= {:.4} lip_t={:.4} <= {:.4}",
                lip.lip_xy, lip.bound_xy, lip.lip_t, lip.bound_t
            ),
        );
        pts.push((eps, net.size() as f64));
        if eps == 0.05 {
            size_dy4 = net.size();
        }
    }
    let secs = t.elapsed().as_secs_f64();
    log.record("C5", c5_ok && secs < 300.0, format!("ladder total {secs:.1} s < 300 s"));
    log.record("C8", c8_ok, "zero violations across the ladder".into());

    let slope = fit_rate(&pts).unwrap().slope;
    log.record("C6", (1.5..=3.5).contains(&slope), format!("slope={slope:.4} in [1.5, 3.5]"));

    let sizes: Vec<u64> = [2, 8]
        .iter()
        .map(|&dy| build_char_net(&char_problem(dy), 0.05, Direction::Forward, &limits).unwrap().size())
        .collect();
    for (a, b, label) in [(sizes[0], size_dy4, "2->4"), (size_dy4, sizes[1], "4->8")] {
        let r = b as f64 / a as f64;
        log.record("C7", (1.6..=2.5).contains(&r), format!("d_y {label} ratio={r:.4} in [1.6, 2.5]"));
    }

    // solution networks
    let t = Instant::now();
    let unit = Aabb::cube(1, 0.0, 1.0);
    let shift = [1.0, -0.6];
    let conv_a = affine(vec![0.5, 0.5], shift.iter().map(|&v| Profile::Constant { value: v }).collect());
    let bump = Profile::Bump { center: vec![0.5], radius: 0.5, height: 1.0 };
    let u0 = Datum::Profile { profile: bump.clone() };
    let pa = TransportProblem::new(conv_a, u0, Datum::Zero, 1.0, unit.clone()).unwrap();
    let sa = build_solution_net(&pa, 0.1, &SolutionOptions::default()).unwrap();
    let ea = sup_vs(
        &pa,
        |t, x, y| sa.eval(t, x, y),
        |t, x, y| {
            let v: f64 = y.iter().zip(shift).map(|(yj, c)| 0.5 * yj * c).sum();
            bump.eval(0.0, &[x[0] - t * v])
        },
        1000,
        seed,
    );
    log.record("C9", ea <= 0.1, format!("(a) closed form sup_err={ea:.3e} <= 0.1"));

    let conv_b = affine(vec![1.0], vec![cosine(0.3, 1.0, 0.0)]);
    let pb = TransportProblem::new(conv_b, Datum::Zero, Datum::Constant { value: 1.0 }, 0.5, unit.clone()).unwrap();
    let sb = build_solution_net(&pb, 0.1, &SolutionOptions::default()).unwrap();
    let eb = sup_vs(&pb, |t, x, y| sb.eval(t, x, y), |t, _, _| t, 1000, seed);
    log.record("C9", eb <= 0.1, format!("(b) u=t sup_err={eb:.3e} <= 0.1"));

    let conv_c = affine(vec![0.5, 0.5], vec![cosine(1.0, 0.1, 0.0), cosine(1.0, 0.07, 0.5)]);
    let u0c = Datum::Profile { profile: Profile::Bump { center: vec![0.5], radius: 1.0, height: 0.5 } };
    let fc = Datum::Profile { profile: cosine(1.0, 0.5, 0.0) };
    let pc = TransportProblem::new(conv_c, u0c, fc, 1.0, unit).unwrap();
    let sc = build_solution_net(&pc, 0.1, &SolutionOptions::default()).unwrap();
    let cc = certify_solution(&sc, &pc, 200, seed).unwrap();
    log.record("C9", cc.pass, format!("(c) oracle sup_err={:.3e} <= 0.1", cc.sup_err));
    let secs = t.elapsed().as_secs_f64();
    log.record("C9", secs < 300.0, format!("solution cases {secs:.1} s < 300 s"));

    let c10 = cc.sup_err <= 0.1 && cc.sup_err_minus > 1.0;
    log.record(
        "C10",
        c10,
        format!("plus sup_err={:.3e} <= 0.1, minus sup_err={:.3e} > 1.0", cc.sup_err, cc.sup_err_minus),
    );

    // determinism
    let smoke: ExperimentConfig =
        ExperimentConfig::from_path(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json"))
            .unwrap();
    let opts = RunOptions::default();
    let (a, b) = (run_convergence(&smoke, &opts).unwrap().csv(), run_convergence(&smoke, &opts).unwrap().csv());
    log.record("C11", a == b, format!("convergence csv {} bytes identical", a.len()));
    let (a, b) = (run_properties(seed).unwrap().csv(), run_properties(seed).unwrap().csv());
    log.record("C11", a == b, format!("properties csv {} bytes identical", a.len()));

    let failed: Vec<String> = log.lines.iter().filter(|l| !l.1).map(|l| format!("{} {}", l.0, l.2)).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
