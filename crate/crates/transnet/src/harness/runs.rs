use std::time::Instant;

use serde_json::json;

use super::{fit_rate, svg_loglog, CalibrateConfig, Check, ExperimentConfig, Report, Result, Row, RunOptions, Status};
use crate::lip_interp::{self, Calibration};
use crate::transport_core::{
    beta, build_char_net, build_solution_net, certify_char, certify_solution, lipschitz_certificate,
    predicted_complexity, Certifiable, Kind, SolutionOptions, TransportError, TransportProblem,
};

/// Built network of either kind.
enum Built {
    Char(crate::transport_core::CharNetwork),
    Solution(Box<crate::transport_core::SolutionNetwork>),
}

impl Built {
    fn certifiable(&self) -> &dyn Certifiable {
        match self {
            Built::Char(n) => n,
            Built::Solution(s) => s.as_ref(),
        }
    }

    fn size(&self) -> u64 {
        match self {
            Built::Char(n) => n.size(),
            Built::Solution(s) => s.size(),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Built::Char(n) => n.depth(),
            Built::Solution(s) => s.depth(),
        }
    }
}

/// `Ok(Err(reason))` when the build is refused by the resource ceiling.
fn build(
    problem: &TransportProblem,
    eps: f64,
    kind: Kind,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<std::result::Result<Built, String>> {
    let r = match kind {
        Kind::Char => build_char_net(problem, eps, opts.direction(cfg), &cfg.limits).map(Built::Char),
        Kind::Solution => {
            let so = SolutionOptions { minus_sign: false, limits: cfg.limits };
            build_solution_net(problem, eps, &so).map(|s| Built::Solution(Box::new(s)))
        }
    };
    match r {
        Ok(b) => Ok(Ok(b)),
        Err(e @ TransportError::ResourceCeiling { .. }) => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn skip_row(eps: f64, seed: u64, predicted: f64, note: String) -> Row {
    Row {
        label: format!("eps={eps}"),
        eps: Some(eps),
        predicted: Some(predicted),
        status: Some(Status::Skip),
        seed,
        note: Some(note),
        ..Default::default()
    }
}

fn target_exponent(problem: &TransportProblem, kind: Kind) -> f64 {
    let m = problem.convection.m();
    match kind {
        Kind::Char => m as f64 + 1.0,
        Kind::Solution => m as f64 + 1.0 + beta(m, problem.alpha),
    }
}

/// Builds and certifies one network per rung of the ladder; refused
/// builds give SKIP rows. With at least 3 certified rungs the size rate is
/// fitted and checked against the configured band.
pub fn run_convergence(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let problem = cfg.problem()?.build()?;
    let (seed, kind) = (opts.seed(cfg), opts.kind(cfg));
    let mut rows = Vec::new();
    for &eps in &cfg.eps {
        let predicted = predicted_complexity(&problem, eps, kind, 1.0)?;
        let start = Instant::now();
        let built = match build(&problem, eps, kind, cfg, opts)? {
            Ok(b) => b,
            Err(note) => {
                rows.push(skip_row(eps, seed, predicted, note));
                continue;
            }
        };
        let (err, ok, extra) = match &built {
            Built::Char(net) => {
                let c = certify_char(net, &problem, cfg.samples, seed)?;
                let extra = json!({
                    "direction": net.direction,
                    "slabs": net.slabs,
                    "per_slab_err": c.per_slab,
                    "mean_err": c.mean_err,
                    "oracle_tol": c.oracle_tol,
                    "q": net.schedule.q,
                    "hat_q": net.schedule.hat_q,
                    "delta": net.schedule.delta,
                    "lip_hat": net.lip_hat,
                });
                (c.sup_err, c.pass, extra)
            }
            Built::Solution(sol) => {
                let c = certify_solution(sol, &problem, cfg.samples, seed)?;
                let extra = json!({
                    "eps_tilde": sol.eps_tilde,
                    "data_norm": sol.data_norm,
                    "q": sol.q,
                    "char_size": sol.char_net.size(),
                    "sup_err_minus": c.sup_err_minus,
                });
                (c.sup_err, c.pass, extra)
            }
        };
        let lip = lipschitz_certificate(built.certifiable(), cfg.lip_samples, seed.wrapping_add(1));
        let mut extra = extra;
        extra["lip"] = json!(lip);
        extra["wall_time_s"] = json!(start.elapsed().as_secs_f64());
        rows.push(Row {
            label: format!("eps={eps}"),
            eps: Some(eps),
            measured_err: Some(err),
            size: Some(built.size()),
            depth: Some(built.depth()),
            predicted: Some(predicted),
            lip_xy: Some(lip.lip_xy),
            lip_t: Some(lip.lip_t),
            status: Some(Status::from_bool(ok && lip.pass)),
            seed,
            note: None,
            extra,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.status != Some(Status::Skip))
        .filter_map(|r| Some((r.eps?, r.size? as f64)))
        .collect();
    let mut checks = Vec::new();
    let mut svg = None;
    if pts.len() >= 3 {
        let fit = fit_rate(&pts)?;
        let t = target_exponent(&problem, kind);
        let band = cfg.rate_band.unwrap_or(match kind {
            Kind::Char => [0.75 * t, 1.75 * t],
            Kind::Solution => [2.3 / 3.0 * t, 1.5 * t],
        });
        checks.push(Check::within("rate_slope", fit.slope, band[0], band[1]).with_target(t));
        svg = Some(svg_loglog(&pts, Some(&fit), &format!("size vs 1/eps ({kind:?})")));
    }
    Ok(Report {
        command: "convergence".into(),
        config_hash: cfg.hash(seed),
        seed,
        rows,
        checks,
        svg,
    })
}

/// Characteristic builds at `dy_eps` for every `d_y` in the list; checks
/// the size ratio per doubling among `d_y ≥ 2` and the relative residual
/// of a line through the origin.
pub fn run_dy_scaling(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let pc = cfg.problem()?;
    let seed = opts.seed(cfg);
    let eps = cfg.dy_eps;
    let mut rows = Vec::new();
    let mut sizes = Vec::new();
    for &dy in &cfg.dy {
        let problem = pc.with_dy(dy)?;
        let predicted = predicted_complexity(&problem, eps, Kind::Char, 1.0)?;
        let net = match build(&problem, eps, Kind::Char, cfg, opts)? {
            Ok(Built::Char(n)) => n,
            Ok(Built::Solution(_)) => unreachable!("char build requested"),
            Err(note) => {
                let mut r = skip_row(eps, seed, predicted, note);
                r.label = format!("dy={dy}");
                r.extra = json!({ "dy": dy });
                rows.push(r);
                continue;
            }
        };
        let c = certify_char(&net, &problem, cfg.samples, seed)?;
        sizes.push((dy, net.size()));
        rows.push(Row {
            label: format!("dy={dy}"),
            eps: Some(eps),
            measured_err: Some(c.sup_err),
            size: Some(net.size()),
            depth: Some(net.depth()),
            predicted: Some(predicted),
            status: Some(Status::from_bool(c.pass)),
            seed,
            extra: json!({ "dy": dy, "q": net.schedule.q, "hat_q": net.schedule.hat_q }),
            ..Default::default()
        });
    }
    let band = cfg.dy_band.unwrap_or([1.6, 2.5]);
    let mut checks = Vec::new();
    for w in sizes.windows(2) {
        let ((d0, s0), (d1, s1)) = (w[0], w[1]);
        if d0 >= 2 && d1 == 2 * d0 {
            checks.push(Check::within(&format!("ratio_dy{d0}_to_dy{d1}"), s1 as f64 / s0 as f64, band[0], band[1]));
        }
    }
    let fit: Vec<(f64, f64)> = sizes.iter().filter(|(d, _)| *d >= 2).map(|(d, s)| (*d as f64, *s as f64)).collect();
    if fit.len() >= 2 {
        let c = fit.iter().map(|(d, s)| d * s).sum::<f64>() / fit.iter().map(|(d, _)| d * d).sum::<f64>();
        let res = fit.iter().map(|(d, s)| ((s - c * d) / s).abs()).fold(0.0, f64::max);
        checks.push(Check::within("linear_fit_relative_residual", res, 0.0, 0.25));
    }
    Ok(Report { command: "dy-scaling".into(), config_hash: cfg.hash(seed), seed, rows, checks, svg: None })
}

/// Sampled Lipschitz certificates across the ladder; also checks that the
/// thresholds do not grow as `eps` shrinks.
pub fn run_lipschitz(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let problem = cfg.problem()?.build()?;
    let (seed, kind) = (opts.seed(cfg), opts.kind(cfg));
    let mut rows = Vec::new();
    let mut bounds = Vec::new();
    for &eps in &cfg.eps {
        let predicted = predicted_complexity(&problem, eps, kind, 1.0)?;
        let built = match build(&problem, eps, kind, cfg, opts)? {
            Ok(b) => b,
            Err(note) => {
                rows.push(skip_row(eps, seed, predicted, note));
                continue;
            }
        };
        let lip = lipschitz_certificate(built.certifiable(), cfg.lip_samples, seed);
        bounds.push((lip.bound_xy, lip.bound_t));
        rows.push(Row {
            label: format!("eps={eps}"),
            eps: Some(eps),
            size: Some(built.size()),
            depth: Some(built.depth()),
            predicted: Some(predicted),
            lip_xy: Some(lip.lip_xy),
            lip_t: Some(lip.lip_t),
            status: Some(Status::from_bool(lip.pass)),
            seed,
            extra: json!(lip),
            ..Default::default()
        });
    }
    let mut checks = Vec::new();
    if bounds.len() >= 2 {
        let grows = bounds.windows(2).map(|w| (w[1].0 / w[0].0).max(w[1].1 / w[0].1)).fold(0.0, f64::max);
        checks.push(Check::within("threshold_growth_as_eps_shrinks", grows, 0.0, 1.0 + 1e-12));
    }
    Ok(Report { command: "lipschitz".into(), config_hash: cfg.hash(seed), seed, rows, checks, svg: None })
}

/// Interpolation constants over a delta ladder. Rows carry the measured
/// error against `delta`; checks compare the fitted constants with the
/// defaults used by the thresholds.
pub fn run_calibrate(cal: &CalibrateConfig, seed: u64) -> Result<Report> {
    let rep = lip_interp::calibrate(&cal.deltas, &cal.dims, seed)?;
    let rows = rep
        .evidence
        .iter()
        .map(|p| {
            let s = p.s as i32;
            let model = rep.c1 * p.lip_data.powi(s) * p.delta.powi(-s) * (1.0 / p.delta).log2();
            Row {
                label: format!("s={},delta={}", p.s, p.delta),
                eps: Some(p.delta),
                measured_err: Some(p.sup_error),
                size: Some(p.size as u64),
                depth: Some(p.depth),
                predicted: Some(model),
                lip_xy: Some(p.lip_measured),
                status: Some(Status::from_bool(p.sup_error <= p.delta)),
                seed,
                extra: json!({ "s": p.s, "q": p.q }),
                ..Default::default()
            }
        })
        .collect();
    let d = Calibration::default();
    let checks = vec![
        Check::within("c1_fitted_le_default", rep.c1, 0.0, d.c1),
        Check::within("c2_fitted_le_default", rep.c2, 0.0, d.c2),
        Check::within("c3_fitted_le_default", rep.c3, 0.0, d.c3),
    ];
    Ok(Report { command: "calibrate".into(), config_hash: super::hash_with_seed(cal, seed), seed, rows, checks, svg: None })
}
