//! `convexity`: tangency probes of the foliation along rays of each wave.

use serde::Serialize;
use tiso_core::raytrace::{self, ConvexityReport};
use tiso_core::Vec3;

use super::Context;
use crate::error::{ExitStatus, Result, TisoError};
use crate::model::v3;
use crate::output::f;
use crate::par;

#[derive(Debug, Serialize)]
struct WaveSummary {
    wave: &'static str,
    samples: usize,
    failures: usize,
    min_normalized: Option<f64>,
    pass: bool,
}

pub fn run(ctx: &Context) -> Result<ExitStatus> {
    let cfg = &ctx.config.convexity;
    let m = ctx.material()?;
    let fol = cfg.foliation.to_field("convexity.foliation")?;
    if cfg.points.is_empty() || cfg.directions == 0 {
        return Err(TisoError::config("convexity.points", "need at least one point and one direction"));
    }
    let points: Vec<Vec3> = cfg.points.iter().map(|p| v3(*p)).collect();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for w in ctx.waves()? {
        let reports: Vec<ConvexityReport> = par::install(|| {
            par::map(&points, |_, &x| {
                let probes: Vec<(Vec3, Vec3)> = raytrace::tangent_fan(&fol, x, cfg.directions).into_iter().map(|d| (x, d)).collect();
                raytrace::convexity_scan(&m, w, &fol, &probes, cfg.tol)
            })
        })?;
        let mut s = WaveSummary { wave: w.name(), samples: 0, failures: 0, min_normalized: None, pass: true };
        for (pid, rep) in reports.iter().enumerate() {
            s.samples += rep.samples.len();
            s.failures += rep.failures.len();
            s.pass &= rep.pass;
            if !rep.samples.is_empty() {
                s.min_normalized = Some(s.min_normalized.map_or(rep.min_normalized, |v: f64| v.min(rep.min_normalized)));
            }
            for smp in &rep.samples {
                let mut row = vec![w.name().to_string(), pid.to_string()];
                row.extend(smp.x.0.iter().chain(smp.xi.0.iter()).chain(smp.velocity.0.iter()).map(|v| f(*v)));
                row.extend([f(smp.second_derivative), f(smp.normalized), "ok".into()]);
                rows.push(row);
            }
            for (x, _) in &rep.failures {
                let mut row = vec![w.name().to_string(), pid.to_string()];
                row.extend(x.0.iter().map(|v| f(*v)));
                row.extend((0..8).map(|_| String::new()));
                row.push("no tangent covector".into());
                rows.push(row);
            }
        }
        summaries.push(s);
    }
    ctx.out.write_csv(
        "convexity.csv",
        &["wave", "point", "x1", "x2", "x3", "xi1", "xi2", "xi3", "v1", "v2", "v3", "second_derivative", "normalized", "status"],
        rows,
    )?;
    let pass = summaries.iter().all(|s| s.pass);
    ctx.out.write_json("convexity.json", &serde_json::json!({ "waves": summaries, "tol": cfg.tol, "pass": pass }))?;
    Ok(ExitStatus::from_pass(pass))
}
