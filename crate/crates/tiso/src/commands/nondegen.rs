//! `nondegen`: invertibility of the Hamilton map over tangent fans.

use serde::Serialize;
use tiso_core::raytrace::{self, NondegeneracyReport};
use tiso_core::Vec3;

use super::Context;
use crate::error::{ExitStatus, Result, TisoError};
use crate::model::v3;
use crate::output::f;
use crate::par;

#[derive(Debug, Serialize)]
struct PointSummary {
    wave: &'static str,
    point: usize,
    x: [f64; 3],
    directions: usize,
    branches: usize,
    flagged: usize,
    /// Covector directions where the Hessian determinant changes sign.
    triplication_directions: usize,
    pass: bool,
}

pub fn run(ctx: &Context) -> Result<ExitStatus> {
    let cfg = &ctx.config.nondegen;
    let m = ctx.material()?;
    let fol = cfg.foliation.to_field("nondegen.foliation")?;
    if cfg.points.is_empty() || cfg.directions == 0 {
        return Err(TisoError::config("nondegen.points", "need at least one point and one direction"));
    }
    if !(cfg.det_tol >= 0.0) {
        return Err(TisoError::config("nondegen.det_tol", "must be nonnegative"));
    }
    let points: Vec<Vec3> = cfg.points.iter().map(|p| v3(*p)).collect();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for w in ctx.waves()? {
        let reports: Vec<(NondegeneracyReport, usize)> = par::install(|| {
            par::map(&points, |_, &x| {
                let fan = raytrace::tangent_fan(&fol, x, cfg.directions);
                let rep = raytrace::nondegeneracy_probe(&m, w, x, &fan, cfg.det_tol);
                (rep, raytrace::triplication_detect(&m, w, x, 180, 8).len())
            })
        })?;
        for (pid, (rep, trip)) in reports.iter().enumerate() {
            let mut branches = 0;
            for (di, e) in rep.entries.iter().enumerate() {
                for (bi, b) in e.branches.iter().enumerate() {
                    branches += 1;
                    let mut row = vec![w.name().to_string(), pid.to_string(), di.to_string(), bi.to_string()];
                    row.extend(e.v.0.iter().chain(b.xi.0.iter()).map(|v| f(*v)));
                    row.extend([f(b.det_rel), f(b.min_eigenvalue), b.positive_definite.to_string(), b.nondegenerate.to_string()]);
                    rows.push(row);
                }
            }
            summaries.push(PointSummary {
                wave: w.name(),
                point: pid,
                x: points[pid].0,
                directions: rep.entries.len(),
                branches,
                flagged: rep.flagged.len(),
                triplication_directions: *trip,
                pass: rep.pass,
            });
        }
    }
    ctx.out.write_csv(
        "nondegen.csv",
        &["wave", "point", "direction", "branch", "v1", "v2", "v3", "xi1", "xi2", "xi3", "det_rel", "min_eigenvalue", "positive_definite", "nondegenerate"],
        rows,
    )?;
    let pass = summaries.iter().all(|s| s.pass);
    ctx.out.write_json("nondegen.json", &serde_json::json!({ "points": summaries, "det_tol": cfg.det_tol, "pass": pass }))?;
    Ok(ExitStatus::from_pass(pass))
}
