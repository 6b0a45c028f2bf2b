//! `audit`: symbol reports, degeneracy scans and vanishing-rate fits.

use serde::Serialize;

use super::Context;
use crate::audit::{run_audit, AuditSetup, SymbolAudit};
use crate::error::{ExitStatus, Result};
use crate::output::{f, OutputDir};
use crate::par;

#[derive(Debug, Serialize)]
pub struct AuditReport<'a> {
    pub cutoff_half_width: f64,
    pub digamma: f64,
    pub tol: f64,
    pub radius_deg: f64,
    pub entries: &'a [SymbolAudit],
    pub pass: bool,
}

pub const SUMMARY_HEADER: [&str; 17] = [
    "point", "boundary", "z1", "z2", "z3", "x", "wave", "param", "claim", "grid_max", "min_value", "max_value", "margin",
    "degenerate", "max_angle_deg", "min_fit_exponent", "pass",
];

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

pub fn summary_rows(entries: &[SymbolAudit]) -> Vec<Vec<String>> {
    entries
        .iter()
        .map(|e| {
            let claim = serde_json::to_value(e.claim).ok().and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(String::from)).unwrap_or_default();
            let min_fit = e.fits.iter().filter_map(|x| x.exponent).reduce(f64::min);
            vec![
                e.point.to_string(),
                e.boundary.to_string(),
                f(e.z[0]),
                f(e.z[1]),
                f(e.z[2]),
                f(e.x),
                e.wave.to_string(),
                e.param.to_string(),
                claim,
                f(e.grid_max),
                f(e.min_value),
                f(e.max_value),
                opt(e.margin),
                e.degenerate.to_string(),
                opt(e.max_angle_deg),
                opt(min_fit),
                e.pass.to_string(),
            ]
        })
        .collect()
}

/// Write `audit.json`, `audit.csv` and the full value table of one point.
pub fn write_report(out: &OutputDir, report: &AuditReport, grid: &[tiso_core::symbol::ScatteringCovector], values_point: Option<usize>) -> Result<()> {
    out.write_json("audit.json", report)?;
    out.write_csv("audit.csv", &SUMMARY_HEADER, summary_rows(report.entries))?;
    let mut rows = Vec::new();
    if let Some(p) = values_point {
        for e in report.entries.iter().filter(|e| e.point == p) {
            for (k, (z, v)) in grid.iter().zip(&e.values).enumerate() {
                rows.push(vec![
                    e.point.to_string(),
                    e.wave.to_string(),
                    e.param.to_string(),
                    k.to_string(),
                    f(z.zeta3),
                    f(z.zeta_y[0]),
                    f(z.zeta_y[1]),
                    f(*v),
                    f(if e.grid_max > 0.0 { v / e.grid_max } else { 0.0 }),
                ]);
            }
        }
    }
    out.write_csv("symbol_values.csv", &SYMBOL_VALUES_HEADER, rows)?;
    Ok(())
}

pub const SYMBOL_VALUES_HEADER: [&str; 9] = ["point", "wave", "param", "direction", "zeta3", "zeta_y1", "zeta_y2", "value", "relative"];

pub fn run(ctx: &Context) -> Result<ExitStatus> {
    let cfg = &ctx.config.audit;
    let m = ctx.material()?;
    let setup = AuditSetup::from_config(cfg, "audit")?;
    let entries = par::install(|| run_audit(&m, cfg, &setup))??;
    let pass = entries.iter().all(|e| e.pass);
    let report = AuditReport {
        cutoff_half_width: setup.cutoff.half_width,
        digamma: setup.cutoff.digamma,
        tol: setup.tol,
        radius_deg: setup.radius_deg,
        entries: &entries,
        pass,
    };
    write_report(&ctx.out, &report, &setup.grid, cfg.values_point)?;
    Ok(ExitStatus::from_pass(pass))
}
