//! `plot`: CSV bundles for slowness sections, degeneracy polar plots and
//! flattened audit reports.

use serde_json::Value;
use tiso_core::symbol::{self, LocalFrame, ScatteringCovector};
use tiso_core::{MaterialField, Param, Vec3, Wave};

use super::Context;
use crate::audit::orthonormal_pair;
use crate::error::{ExitStatus, Result, TisoError};
use crate::model::v3;
use crate::output::f;

pub const SECTION_HEADER: [&str; 6] = ["wave", "theta_deg", "xi_perp", "xi_axial", "phase_velocity", "slowness"];
pub const POLAR_HEADER: [&str; 6] = ["angle_deg", "zeta3", "zeta_y1", "zeta_y2", "value", "relative"];
pub const DIRECTION_HEADER: [&str; 9] =
    ["point", "wave", "param", "kind", "zeta3", "zeta_y1", "zeta_y2", "exponent", "pass"];

/// Phase velocity and slowness of each wave against the angle from the axis,
/// for the moduli at `x`. With a unit covector `p = 2v²`.
pub fn slowness_sections(m: &MaterialField, x: Vec3, samples: usize) -> Result<Vec<Vec<String>>> {
    let mo = m.moduli(x);
    let mut rows = Vec::new();
    for w in Wave::ALL {
        for k in 0..samples {
            let th = if samples == 1 { 0.0 } else { 180.0 * k as f64 / (samples - 1) as f64 };
            let (s, c) = th.to_radians().sin_cos();
            let p = mo.hamiltonian(w, s * s, c * c).map_err(|e| TisoError::numerical(format!("{} at {th} deg: {e}", w.name())))?;
            let v = (0.5 * p).sqrt();
            rows.push(vec![w.name().to_string(), f(th), f(s), f(c), f(v), f(1.0 / v)]);
        }
    }
    Ok(rows)
}

/// Symbol of one parameter along the great circle of scattering covectors
/// through the expected degenerate direction.
pub fn degeneracy_polar(
    m: &MaterialField,
    wave: Wave,
    param: Param,
    frame: &LocalFrame,
    cutoff: &symbol::Cutoff,
    circle_nodes: usize,
    samples: usize,
) -> Result<Vec<Vec<String>>> {
    let base = frame
        .covector_direction(m.layer.gradient(frame.z))
        .ok_or_else(|| TisoError::numerical("no expected direction at the polar point"))?
        .as_vec();
    let (t, _) = orthonormal_pair(base);
    let zetas: Vec<(f64, ScatteringCovector)> = (0..samples)
        .map(|k| {
            let a = 360.0 * k as f64 / samples as f64;
            let (s, c) = a.to_radians().sin_cos();
            (a, ScatteringCovector::from_vec(base * c + t * s))
        })
        .collect();
    let vals = crate::par::map(&zetas, |_, (_, z)| symbol::standard_symbol_all(m, wave, frame, z, cutoff, circle_nodes));
    let vals = vals.into_iter().map(|v| v.map(|a| a[param.index()])).collect::<std::result::Result<Vec<_>, _>>().map_err(TisoError::numerical)?;
    let vmax = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(zetas
        .iter()
        .zip(&vals)
        .map(|((a, z), v)| {
            vec![f(*a), f(z.zeta3), f(z.zeta_y[0]), f(z.zeta_y[1]), f(*v), f(if vmax > 0.0 { v / vmax } else { 0.0 })]
        })
        .collect())
}

/// Flatten an `audit.json` document: one row per degenerate direction and
/// one per vanishing-rate fit. A report without entries gives no rows.
pub fn flatten_report(report: &Value) -> Result<Vec<Vec<String>>> {
    let entries = report
        .get("entries")
        .and_then(Value::as_array)
        .ok_or_else(|| TisoError::config("plot.audit_report", "not an audit report (no `entries` array)"))?;
    let s = |v: &Value| match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    let mut rows = Vec::new();
    for e in entries {
        let head = [s(&e["point"]), s(&e["wave"]), s(&e["param"])];
        for d in e["degenerate_directions"].as_array().into_iter().flatten() {
            let mut r = head.to_vec();
            r.push("degenerate".into());
            r.extend((0..3).map(|i| s(&d[i])));
            r.push(String::new());
            r.push(String::new());
            rows.push(r);
        }
        for fit in e["fits"].as_array().into_iter().flatten() {
            let mut r = head.to_vec();
            r.push("fit".into());
            r.extend((0..3).map(|i| s(&fit["transversal"][i])));
            r.push(s(&fit["exponent"]));
            r.push(s(&fit["pass"]));
            rows.push(r);
        }
    }
    Ok(rows)
}

pub fn run(ctx: &Context) -> Result<ExitStatus> {
    let cfg = &ctx.config.plot;
    let m = ctx.material()?;
    let x = v3(cfg.polar_point);
    ctx.out.write_csv("slowness_sections.csv", &SECTION_HEADER, slowness_sections(&m, x, cfg.section_samples)?)?;

    let audit = &ctx.config.audit;
    let foliation = audit.foliation.to_field("audit.foliation")?;
    let frame = LocalFrame::new(&foliation, x).map_err(|e| TisoError::config("plot.polar_point", e.to_string()))?;
    let cutoff = audit.cutoff.cutoff("audit.cutoff")?;
    let polar = crate::par::install(|| {
        degeneracy_polar(&m, cfg.polar_wave.into(), cfg.polar_param.into(), &frame, &cutoff, audit.circle_nodes, cfg.polar_samples)
    })??;
    ctx.out.write_csv("degeneracy_polar.csv", &POLAR_HEADER, polar)?;

    let rows = match &cfg.audit_report {
        Some(p) => {
            let full = if p.is_absolute() { p.clone() } else { ctx.base_dir.join(p) };
            let text = std::fs::read_to_string(&full)
                .map_err(|e| TisoError::config("plot.audit_report", format!("cannot read {}: {e}", full.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| TisoError::config("plot.audit_report", format!("{}: {e}", full.display())))?;
            flatten_report(&v)?
        }
        None => Vec::new(),
    };
    ctx.out.write_csv("symbol_vs_direction.csv", &DIRECTION_HEADER, rows)?;
    Ok(ExitStatus::Pass)
}
