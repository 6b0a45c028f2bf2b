//! Synthetic recovery experiments: a reference medium, a bumped truth, a ray
//! fan turning inside a slab under the artificial boundary, and the
//! regularized solve.

use serde::Serialize;
use tiso_core::inversion::{
    self, AssemblyOptions, Basis, Conjugation, FanSpec, LinearSystem, RayDatum, RaySeed, Recovery, RecoveryError,
    RecoveryGrid, Regularizer, RowBlock, ScenarioPair, SolverOptions, Unknowns,
};
use tiso_core::raytrace::{StopSurface, TraceOptions};
use tiso_core::{MaterialField, Param, ScalarField, Vec3, Wave};

use crate::config::{BasisName, InvertConfig, RegularizerName, UnknownsConfig};
use crate::error::{Result, TisoError};
use crate::model::v3;
use crate::par;

/// Everything needed to synthesize data and recover from them.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub pair: ScenarioPair,
    pub grid: RecoveryGrid,
    pub seeds: Vec<RaySeed>,
    pub stops: Vec<StopSurface>,
    pub waves: Vec<Wave>,
    pub trace: TraceOptions,
    pub assembly: AssemblyOptions,
    pub conj: Conjugation,
    pub solver: SolverOptions,
    /// Slab width `x_max`.
    pub width: f64,
}

fn positive(v: f64, path: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(TisoError::config(path, "must be positive"))
    }
}

impl Scenario {
    pub fn from_config(cfg: &InvertConfig, path: &str) -> Result<Self> {
        let nu_tilde = cfg.reference.build(&format!("{path}.reference"))?;
        let bump = cfg.bump.to_field(&format!("{path}.bump"))?;
        let (nu, unknowns) = truth(&nu_tilde, &bump, cfg.unknowns, path)?;
        crate::model::validate_medium(&nu, &format!("{path}.bump"))?;

        positive(cfg.radius, &format!("{path}.radius"))?;
        if !(cfg.boundary_radius > 0.0 && cfg.boundary_radius < cfg.radius) {
            return Err(TisoError::config(format!("{path}.boundary_radius"), "must lie strictly between 0 and radius"));
        }
        let c = v3(cfg.center);
        for s in [-1.0, 1.0] {
            for i in 0..3 {
                let mut p = c;
                p.0[i] += s * cfg.radius;
                if !nu_tilde.domain.contains(p, 0.0) {
                    return Err(TisoError::config(format!("{path}.reference.domain"), "must contain the ball"));
                }
            }
        }
        positive(cfg.half_lateral, &format!("{path}.half_lateral"))?;
        positive(cfg.lateral_spacing, &format!("{path}.lateral_spacing"))?;
        if cfg.depth_nodes < 2 {
            return Err(TisoError::config(format!("{path}.depth_nodes"), "need at least 2 depth nodes"));
        }
        let width = cfg.radius - cfg.boundary_radius;
        let foliation = ScalarField::Radial { center: c, sign: 1.0, offset: -cfg.boundary_radius };
        let nl = (2.0 * cfg.half_lateral / cfg.lateral_spacing).round() as usize + 1;
        let r = (-cfg.half_lateral, cfg.half_lateral);
        let grid = RecoveryGrid::new(
            c + Vec3::axis(2) * cfg.boundary_radius,
            Vec3::axis(0),
            Vec3::axis(1),
            foliation,
            r,
            r,
            width,
            [nl, nl, cfg.depth_nodes],
        )
        .with_basis(match cfg.basis {
            BasisName::Trilinear => Basis::Trilinear,
            BasisName::CubicBSpline => Basis::CubicBSpline,
        });

        if cfg.fan_lateral == 0 || cfg.fan_depths == 0 || cfg.fan_directions == 0 || cfg.lambda_hat.is_empty() {
            return Err(TisoError::config(format!("{path}.fan_lateral"), "fan sizes must be positive"));
        }
        let spec = FanSpec {
            a: r,
            b: r,
            n_a: cfg.fan_lateral,
            n_b: cfg.fan_lateral,
            depths: (0..cfg.fan_depths).map(|k| width * (k as f64 + 0.5) / cfg.fan_depths as f64).collect(),
            n_dir: cfg.fan_directions,
            lambda_hat: cfg.lambda_hat.clone(),
        };
        let seeds = inversion::fan_seeds(&grid, &spec).map_err(TisoError::numerical)?;
        let stops = vec![StopSurface::Level {
            field: ScalarField::Radial { center: c, sign: 1.0, offset: 0.0 },
            level: cfg.radius,
            sign: -1.0,
        }];

        let waves: Vec<Wave> = if cfg.waves.is_empty() {
            match unknowns {
                Unknowns::Functional { .. } => vec![Wave::QP, Wave::QSV],
                _ => vec![Wave::QP],
            }
        } else {
            cfg.waves.iter().map(|&w| w.into()).collect()
        };
        if !(cfg.tau > 1.0) {
            return Err(TisoError::config(format!("{path}.tau"), "must exceed 1"));
        }
        positive(cfg.digamma, &format!("{path}.digamma"))?;
        if cfg.gl_order == 0 {
            return Err(TisoError::config(format!("{path}.gl_order"), "must be positive"));
        }
        positive(cfg.panels_per_cell, &format!("{path}.panels_per_cell"))?;
        Ok(Scenario {
            pair: ScenarioPair { nu, nu_tilde, unknowns },
            conj: Conjugation::for_slab(cfg.digamma, width, grid.h[2]),
            grid,
            seeds,
            stops,
            waves,
            trace: TraceOptions { ode: cfg.ode.options(&format!("{path}.ode"))?, ..TraceOptions::default() },
            assembly: AssemblyOptions { gl_order: cfg.gl_order, panels_per_cell: cfg.panels_per_cell },
            solver: SolverOptions {
                max_iter: cfg.max_iter,
                tol: cfg.tol,
                noise_floor: cfg.noise_floor,
                tau: cfg.tau,
                ladder: cfg.ladder,
                plateau: cfg.plateau,
                regularizer: match cfg.regularizer {
                    RegularizerName::Identity => Regularizer::Identity,
                    RegularizerName::Gradient => Regularizer::Gradient,
                },
            },
            width,
        })
    }
}

/// The true medium and the unknowns for a configured bump.
fn truth(nu_tilde: &MaterialField, bump: &ScalarField, u: UnknownsConfig, path: &str) -> Result<(MaterialField, Unknowns)> {
    Ok(match u {
        UnknownsConfig::Single { param } => (nu_tilde.perturbed(param.into(), bump.clone()), Unknowns::Single(param.into())),
        UnknownsConfig::Pair { first, second, ratio } => {
            if first == second {
                return Err(TisoError::config(format!("{path}.unknowns.second"), "must differ from `first`"));
            }
            let (p, q): (Param, Param) = (first.into(), second.into());
            (nu_tilde.perturbed(p, bump.clone()).perturbed(q, bump.scaled(ratio)), Unknowns::Pair(p, q))
        }
        UnknownsConfig::Functional { f_prime, h_prime } => {
            if !(f_prime >= 0.0) {
                return Err(TisoError::config(format!("{path}.unknowns.f_prime"), "F' must be nonnegative"));
            }
            let nu = nu_tilde
                .perturbed(Param::A11, bump.clone())
                .perturbed(Param::A33, bump.scaled(f_prime))
                .perturbed(Param::E2, bump.scaled(h_prime));
            (nu, Unknowns::Functional { f_prime, h_prime })
        }
    })
}

/// Data and row blocks of every (wave, seed) ray, in that order.
pub fn synthesize_and_assemble(s: &Scenario) -> Result<(Vec<RayDatum>, Vec<RowBlock>)> {
    let jobs: Vec<(Wave, RaySeed)> = s.waves.iter().flat_map(|&w| s.seeds.iter().map(move |r| (w, *r))).collect();
    let out = par::install(|| {
        par::map(&jobs, |_, (w, seed)| -> std::result::Result<(RayDatum, RowBlock), RecoveryError> {
            let entry = inversion::entry_for_seed(&s.pair.nu_tilde, *w, seed, &s.stops, &s.trace)?;
            let d = inversion::synthesize_datum(&s.pair, *w, entry, seed.x_turn, &s.stops, &s.trace)?;
            let b = inversion::assemble_ray(&s.grid, &s.pair.nu_tilde, &s.pair.unknowns, &d, &s.assembly, &s.trace.ode)?;
            Ok((d, b))
        })
    })?;
    let mut data = Vec::with_capacity(out.len());
    let mut blocks = Vec::with_capacity(out.len());
    for (k, r) in out.into_iter().enumerate() {
        let (d, b) = r.map_err(|e| TisoError::numerical(format!("ray {k}: {e}")))?;
        data.push(d);
        blocks.push(b);
    }
    Ok((data, blocks))
}

#[derive(Debug, Clone, Serialize)]
pub struct DepthError {
    pub x: f64,
    pub relative_error: f64,
    pub truth_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NullResult {
    /// `‖estimate‖ / ‖truth‖` with data of two identical media.
    pub relative_size: f64,
    pub max_abs_data: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub recovery: Recovery,
    /// Nodal estimate and truth, one block of nodes per unknown.
    pub estimate: Vec<f64>,
    pub truth: Vec<f64>,
    /// Relative L² error over the slab, one per unknown.
    pub errors: Vec<f64>,
    pub depth: Vec<Vec<DepthError>>,
    pub rays: usize,
    pub rows: usize,
    pub empty_rays: usize,
    pub null: Option<NullResult>,
}

fn norm(v: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt()
}

/// Synthesize, assemble, recover, and optionally repeat with identical media.
pub fn run(s: &Scenario, null_test: bool) -> Result<Outcome> {
    let (data, blocks) = synthesize_and_assemble(s)?;
    let sys = LinearSystem::from_blocks(&s.grid, &s.pair.unknowns, &data, &blocks, &s.conj);
    let recovery = inversion::recover(&sys, &s.solver).map_err(TisoError::numerical)?;
    let estimate = recovery.nodal(&s.grid);
    let truth = inversion::truth_vector(&s.grid, &s.pair).map_err(TisoError::numerical)?;
    let nn = s.grid.n_nodes();
    let slab = s.grid.nodes_in_slab(0.0, s.width);
    let shift = |idx: &[usize], u: usize| idx.iter().map(|i| i + u * nn).collect::<Vec<_>>();
    let mut errors = Vec::new();
    let mut depth = Vec::new();
    for u in 0..s.pair.unknowns.len() {
        errors.push(inversion::relative_l2_error(&estimate, &truth, &shift(&slab, u)));
        depth.push(
            (0..s.grid.dims[2])
                .map(|k| {
                    let x = s.grid.h[2] * k as f64;
                    let idx = shift(&s.grid.nodes_in_slab(x, x), u);
                    DepthError { x, relative_error: inversion::relative_l2_error(&estimate, &truth, &idx), truth_norm: norm(&truth, &idx) }
                })
                .collect(),
        );
    }

    let null = if null_test {
        let same = ScenarioPair { nu: s.pair.nu_tilde.clone(), ..s.pair.clone() };
        let jobs: Vec<&RayDatum> = data.iter().collect();
        let zero = par::install(|| {
            par::map(&jobs, |_, d| inversion::synthesize_datum(&same, d.wave, d.entry, d.x_turn, &s.stops, &s.trace))
        })?
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(TisoError::numerical)?;
        let max_abs_data = zero.iter().flat_map(|d| d.mismatch.0).fold(0.0_f64, |m, v| m.max(v.abs()));
        let sys0 = LinearSystem::from_blocks(&s.grid, &s.pair.unknowns, &zero, &blocks, &s.conj);
        let rec0 = inversion::recover(&sys0, &s.solver).map_err(TisoError::numerical)?;
        let est0 = rec0.nodal(&s.grid);
        let all: Vec<usize> = (0..est0.len()).collect();
        let tn = norm(&truth, &all);
        Some(NullResult { relative_size: norm(&est0, &all) / if tn > 0.0 { tn } else { 1.0 }, max_abs_data })
    } else {
        None
    };
    Ok(Outcome {
        recovery,
        estimate,
        truth,
        errors,
        depth,
        rays: data.len(),
        rows: sys.n_rows(),
        empty_rays: sys.empty_rays.len(),
        null,
    })
}
