//! `invert`: synthetic recovery under the artificial boundary.

use serde::Serialize;

use super::Context;
use crate::error::{ExitStatus, Result};
use crate::output::f;
use crate::recovery::{self, DepthError, NullResult, Scenario};

#[derive(Debug, Serialize)]
struct LadderRow {
    mu: f64,
    relative_residual: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    unknowns: Vec<&'static str>,
    waves: Vec<&'static str>,
    rays: usize,
    rows: usize,
    empty_rays: usize,
    coefficients: usize,
    nodes: usize,
    mu: f64,
    iterations: usize,
    relative_residual: f64,
    noise_level: f64,
    ladder: Vec<LadderRow>,
    relative_error: Vec<f64>,
    max_error: f64,
    error_by_depth: Vec<Vec<DepthError>>,
    null_test: Option<NullResult>,
    null_threshold: f64,
    pass: bool,
}

pub fn run(ctx: &Context) -> Result<ExitStatus> {
    let cfg = &ctx.config.invert;
    let s = Scenario::from_config(cfg, "invert")?;
    let o = recovery::run(&s, cfg.null_test)?;
    let params = s.pair.unknowns.params();
    let nn = s.grid.n_nodes();

    let mut rows = Vec::with_capacity(o.estimate.len());
    for (u, p) in params.iter().enumerate() {
        for n in 0..nn {
            let z = s.grid.node_point(n).map_err(crate::error::TisoError::numerical)?;
            let q = s.grid.node_coords(n);
            let k = u * nn + n;
            let mut row = vec![p.name().to_string(), n.to_string()];
            row.extend(q.iter().chain(z.0.iter()).map(|v| f(*v)));
            row.push(f(o.estimate[k]));
            row.push(f(o.truth[k]));
            rows.push(row);
        }
    }
    ctx.out.write_csv("estimate.csv", &["unknown", "node", "a", "b", "x", "z1", "z2", "z3", "estimate", "truth"], rows)?;
    let depth_rows = params.iter().zip(&o.depth).flat_map(|(p, d)| {
        d.iter().map(move |e| vec![p.name().to_string(), f(e.x), f(e.relative_error), f(e.truth_norm)])
    });
    ctx.out.write_csv("error_vs_depth.csv", &["unknown", "x", "relative_error", "truth_norm"], depth_rows)?;
    ctx.out.write_csv(
        "residuals.csv",
        &["iteration", "residual"],
        o.recovery.residual_history.iter().enumerate().map(|(k, r)| vec![k.to_string(), f(*r)]),
    )?;

    let null_ok = o.null.as_ref().is_none_or(|n| n.relative_size <= cfg.null_threshold);
    let pass = o.errors.iter().all(|e| *e < cfg.max_error) && null_ok;
    let r = &o.recovery;
    let diag = Diagnostics {
        unknowns: params.iter().map(|p| p.name()).collect(),
        waves: s.waves.iter().map(|w| w.name()).collect(),
        rays: o.rays,
        rows: o.rows,
        empty_rays: o.empty_rays,
        coefficients: r.coefficients.len(),
        nodes: nn,
        mu: r.mu,
        iterations: r.iterations,
        relative_residual: r.relative_residual,
        noise_level: r.noise_level,
        ladder: r
            .ladder
            .iter()
            .map(|l| LadderRow { mu: l.mu, relative_residual: l.relative_residual, iterations: l.iterations, converged: l.converged })
            .collect(),
        relative_error: o.errors.clone(),
        max_error: cfg.max_error,
        error_by_depth: o.depth.clone(),
        null_test: o.null.clone(),
        null_threshold: cfg.null_threshold,
        pass,
    };
    ctx.out.write_json("diagnostics.json", &diag)?;
    Ok(ExitStatus::from_pass(pass))
}
