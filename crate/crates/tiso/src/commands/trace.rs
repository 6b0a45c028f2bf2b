//! `trace`: shoot a ray fan and archive the lens relation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tiso_core::raytrace::{self, Bicharacteristic, LensRecord, RayError, TraceOptions};
use tiso_core::{PhasePoint, Vec3};

use super::Context;
use crate::config::{FanConfig, TraceConfig};
use crate::error::{ExitStatus, Result, TisoError};
use crate::model::{self, v3};
use crate::output::f;
use crate::par;

fn unit(a: [f64; 3], path: &str) -> Result<Vec3> {
    v3(a).normalized().ok_or_else(|| TisoError::config(path, "vector must be nonzero"))
}

fn span(r: [f64; 2], n: usize, k: usize) -> f64 {
    if n == 1 {
        0.5 * (r[0] + r[1])
    } else {
        r[0] + (r[1] - r[0]) * k as f64 / (n - 1) as f64
    }
}

/// Entry points and (unnormalized) covector directions of a fan.
pub fn fan_entries(fan: &FanConfig, seed: u64, path: &str) -> Result<Vec<(Vec3, Vec3)>> {
    let mut out = Vec::new();
    match fan {
        FanConfig::Explicit { entries } => {
            for (k, e) in entries.iter().enumerate() {
                out.push((v3(e.x), unit(e.xi, &format!("{path}.entries[{k}].xi"))?));
            }
        }
        FanConfig::Lattice { origin, e1, e2, u, v, n_u, n_v, directions } => {
            if *n_u == 0 || *n_v == 0 {
                return Err(TisoError::config(format!("{path}.n_u"), "lattice sizes must be positive"));
            }
            let dirs = directions
                .iter()
                .enumerate()
                .map(|(k, d)| unit(*d, &format!("{path}.directions[{k}]")))
                .collect::<Result<Vec<_>>>()?;
            for j in 0..*n_v {
                for i in 0..*n_u {
                    let x = v3(*origin) + v3(*e1) * span(*u, *n_u, i) + v3(*e2) * span(*v, *n_v, j);
                    for d in &dirs {
                        out.push((x, *d));
                    }
                }
            }
        }
        FanConfig::Random { origin, e1, e2, u, v, count, direction, cone_deg } => {
            let axis = unit(*direction, &format!("{path}.direction"))?;
            if !(*cone_deg >= 0.0 && *cone_deg <= 180.0) {
                return Err(TisoError::config(format!("{path}.cone_deg"), "must be in [0, 180]"));
            }
            let helper = if axis[0].abs() < 0.9 { Vec3::axis(0) } else { Vec3::axis(1) };
            let b1 = (helper - axis * helper.dot(axis)).normalized().expect("helper is transversal");
            let b2 = axis.cross(b1);
            let cmin = cone_deg.to_radians().cos();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..*count {
                let x = v3(*origin) + v3(*e1) * rng.gen_range(u[0]..=u[1]) + v3(*e2) * rng.gen_range(v[0]..=v[1]);
                let c = rng.gen_range(cmin..=1.0);
                let s = (1.0 - c * c).max(0.0).sqrt();
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                out.push((x, axis * c + b1 * (s * phi.cos()) + b2 * (s * phi.sin())));
            }
        }
    }
    if out.is_empty() {
        return Err(TisoError::config(path, "fan is empty"));
    }
    Ok(out)
}

pub fn trace_options(cfg: &TraceConfig, path: &str) -> Result<TraceOptions> {
    if !(cfg.max_time > 0.0) {
        return Err(TisoError::config(format!("{path}.max_time"), "must be positive"));
    }
    Ok(TraceOptions {
        ode: cfg.ode.options(&format!("{path}.ode"))?,
        max_time: cfg.max_time,
        drift_tol: cfg.drift_tol,
        ..TraceOptions::default()
    })
}

#[derive(Debug, Serialize)]
struct TraceSummary {
    rays: usize,
    ok: usize,
    failed: usize,
    max_drift: f64,
    min_tau: Option<f64>,
    max_tau: Option<f64>,
}

pub const LENS_HEADER: [&str; 17] = [
    "ray_id", "wave", "entry_x1", "entry_x2", "entry_x3", "entry_xi1", "entry_xi2", "entry_xi3", "exit_x1", "exit_x2",
    "exit_x3", "exit_xi1", "exit_xi2", "exit_xi3", "tau", "exit_surface", "status",
];

/// One lens archive row; failed rays keep their entry and leave the exit empty.
pub fn lens_row(id: usize, wave: &str, entry: Option<PhasePoint>, rec: &std::result::Result<LensRecord, RayError>) -> Vec<String> {
    let mut row = vec![id.to_string(), wave.to_string()];
    let e = rec.as_ref().map(|r| r.entry).ok().or(entry);
    match e {
        Some(e) => row.extend(e.x.0.iter().chain(e.xi.0.iter()).map(|v| f(*v))),
        None => row.extend((0..6).map(|_| String::new())),
    }
    match rec {
        Ok(r) => {
            row.extend(r.exit.x.0.iter().chain(r.exit.xi.0.iter()).map(|v| f(*v)));
            row.push(f(r.tau));
            row.push(r.exit_surface.to_string());
            row.push("ok".into());
        }
        Err(err) => {
            row.extend((0..8).map(|_| String::new()));
            row.push(err.to_string());
        }
    }
    row
}

pub fn run(ctx: &Context) -> Result<ExitStatus> {
    let cfg = &ctx.config.trace;
    let m = ctx.material()?;
    let waves = ctx.waves()?;
    let stops = model::stops(&cfg.stops, &m, "trace.stops")?;
    let opts = trace_options(cfg, "trace")?;
    let fan = fan_entries(&cfg.fan, ctx.config.seed, "trace.fan")?;
    let jobs: Vec<(tiso_core::Wave, Vec3, Vec3)> =
        waves.iter().flat_map(|&w| fan.iter().map(move |&(x, d)| (w, x, d))).collect();
    type Traced = (Option<PhasePoint>, std::result::Result<Bicharacteristic, RayError>);
    let results: Vec<Traced> = par::install(|| {
        par::map(&jobs, |_, &(w, x, d)| match raytrace::normalize_covector(&m, w, PhasePoint::new(x, d)) {
            Ok(entry) => (Some(entry), raytrace::integrate_flow(&m, w, entry, &stops, &opts)),
            Err(e) => (None, Err(e)),
        })
    })?;
    let mut rows = Vec::with_capacity(jobs.len());
    let mut paths = Vec::new();
    let mut summary = TraceSummary { rays: jobs.len(), ok: 0, failed: 0, max_drift: 0.0, min_tau: None, max_tau: None };
    for (id, ((w, _, _), (entry, ray))) in jobs.iter().zip(&results).enumerate() {
        let rec = ray.as_ref().map_err(|e| *e).map(|r| LensRecord { entry: r.start(), exit: r.end(), tau: r.duration(), exit_surface: r.exit_surface.unwrap_or(usize::MAX) });
        if let Ok(r) = ray {
            summary.ok += 1;
            summary.max_drift = summary.max_drift.max(r.drift);
            let tau = r.duration();
            summary.min_tau = Some(summary.min_tau.map_or(tau, |t: f64| t.min(tau)));
            summary.max_tau = Some(summary.max_tau.map_or(tau, |t: f64| t.max(tau)));
            if cfg.write_paths {
                for k in 0..r.len() {
                    let mut row = vec![id.to_string(), w.name().to_string(), k.to_string(), f(r.t[k])];
                    row.extend(r.x[k].0.iter().chain(r.xi[k].0.iter()).map(|v| f(*v)));
                    paths.push(row);
                }
            }
        } else {
            summary.failed += 1;
        }
        rows.push(lens_row(id, w.name(), *entry, &rec));
    }
    ctx.out.write_csv("lens.csv", &LENS_HEADER, rows)?;
    if cfg.write_paths {
        ctx.out.write_csv("rays.csv", &["ray_id", "wave", "sample", "t", "x1", "x2", "x3", "xi1", "xi2", "xi3"], paths)?;
    }
    ctx.out.write_json("trace_summary.json", &summary)?;
    Ok(if summary.failed > 0 && !cfg.allow_failures { ExitStatus::NumericalFailure } else { ExitStatus::Pass })
}
