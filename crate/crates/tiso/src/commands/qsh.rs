//! `qsh-extract`: recover `α`, `β` and the axis from assembled qSH metrics
//! and build coordinates adapted to the layer foliation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tiso_core::qsh::{self, FlowMetric, RankOneMetric, SeedPatch};
use tiso_core::{MaterialField, Vec3};

use super::Context;
use crate::config::{FlowMetricName, QshConfig};
use crate::error::{ExitStatus, Result, TisoError};
use crate::model::v3;
use crate::output::f;

#[derive(Debug, Clone, Serialize)]
pub struct RoundTrip {
    pub samples: usize,
    /// Largest relative error in `α` and `β`.
    pub max_coefficient_error: f64,
    /// Largest `|w_est − w|` with both axes of unit dual length and sign fixed.
    pub max_axis_error: f64,
    pub pass: bool,
}

/// Assemble the metric at seeded random points of the domain and extract it again.
pub fn round_trip(m: &MaterialField, samples: usize, tol: f64, seed: u64) -> Result<RoundTrip> {
    let rm = RankOneMetric::from_material(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ce, mut ae) = (0.0_f64, 0.0_f64);
    for _ in 0..samples {
        let x = Vec3([0, 1, 2].map(|i| rng.gen_range(m.domain.min[i]..=m.domain.max[i])));
        let g = qsh::assemble_metric(&rm, x).map_err(TisoError::numerical)?;
        let e = qsh::extract_parameters(&g, &m.g0).map_err(|err| TisoError::numerical(format!("at {:?}: {err}", x.0)))?;
        let (a, b) = rm.alpha_beta(x);
        ce = ce.max(((e.alpha - a) / a).abs()).max(((e.beta - b) / b).abs());
        // the extracted axis carries a sign convention; compare up to sign
        let w = rm.axis_form(x).map_err(TisoError::numerical)?;
        ae = ae.max((e.axis - w).norm().min((e.axis + w).norm()));
    }
    Ok(RoundTrip { samples, max_coefficient_error: ce, max_axis_error: ae, pass: ce <= tol && ae <= tol })
}

pub fn seed_patch(cfg: &QshConfig) -> Result<SeedPatch> {
    if cfg.n_u == 0 || cfg.n_v == 0 {
        return Err(TisoError::config("qsh.n_u", "lattice sizes must be positive"));
    }
    if v3(cfg.e1).cross(v3(cfg.e2)).norm() == 0.0 {
        return Err(TisoError::config("qsh.e2", "must not be parallel to e1"));
    }
    Ok(SeedPatch {
        origin: v3(cfg.origin),
        e1: v3(cfg.e1),
        e2: v3(cfg.e2),
        u: (cfg.u[0], cfg.u[1]),
        v: (cfg.v[0], cfg.v[1]),
        n_u: cfg.n_u,
        n_v: cfg.n_v,
    })
}

#[derive(Debug, Serialize)]
struct QshReport {
    round_trip: RoundTrip,
    identity_tol: f64,
    chart_samples: usize,
    max_residual: f64,
    residual_tol: f64,
    pass: bool,
}

pub fn run(ctx: &Context) -> Result<ExitStatus> {
    let cfg = &ctx.config.qsh;
    let m = ctx.material()?;
    let rt = round_trip(&m, cfg.samples, cfg.identity_tol, ctx.config.seed)?;
    let rm = RankOneMetric::from_material(&m);
    let kind = match cfg.flow {
        FlowMetricName::Background => FlowMetric::Background,
        FlowMetricName::Qsh => FlowMetric::Qsh,
    };
    let chart = qsh::build_adapted_coordinates(&rm, &seed_patch(cfg)?, &cfg.levels, kind, &cfg.ode.options("qsh.ode")?)
        .map_err(TisoError::numerical)?;
    let rows = chart.samples.iter().map(|s| {
        s.y.0.iter().chain(s.x.0.iter()).chain(s.residual.iter()).map(|v| f(*v)).collect::<Vec<_>>()
    });
    ctx.out.write_csv("chart.csv", &["y1", "y2", "y3", "x1", "x2", "x3", "res1", "res2"], rows)?;
    let pass = rt.pass && chart.max_residual <= cfg.residual_tol;
    let report = QshReport {
        round_trip: rt,
        identity_tol: cfg.identity_tol,
        chart_samples: chart.samples.len(),
        max_residual: chart.max_residual,
        residual_tol: cfg.residual_tol,
        pass,
    };
    ctx.out.write_json("qsh.json", &report)?;
    Ok(ExitStatus::from_pass(pass))
}
