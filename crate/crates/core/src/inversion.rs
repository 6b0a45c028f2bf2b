//! Linearized recovery of parameter differences from lens-data mismatches.
//!
//! Data for one ray of the true medium `ν` entering at `(x₀, ξ₀)` is the
//! covector mismatch `Ξ(T) − Ξ̃(T)` at its exit time `T`, which the
//! pseudolinearization identity writes as a linear transform of `ν − ν̃`.
//! Linearizing the weights at `ν̃` and discretizing `f_l = ν_l − ν̃_l` in a
//! trilinear basis gives three rows per ray,
//!
//! ```text
//! d_i = Σ_k u_k ∫₀ᵀ Σ_j A_ij(t) ∂_j φ_k(X̃(t)) Σ_l c_l E^l(t) dt
//! ```
//!
//! with `A = −∂Ξ̃/∂ξ` and `E^l = ∂p̃/∂ν_l`. Rows and columns are conjugated
//! by `e^{∓ϝ/x}` and the system is solved by CGLS with a Tikhonov term
//! whose weight follows the discrepancy principle.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::field::ScalarField;
use crate::linalg::{Mat3, Vec3};
use crate::material::{self, MaterialError, MaterialField, Param, PhasePoint, Wave};
use crate::ode::OdeOptions;
use crate::pseudolin;
use crate::quadrature::GaussLegendre;
use crate::raytrace::{self, RayError, StopSurface, TraceOptions};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum RecoveryError {
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("no covector over the fan direction {v:?}")]
    BranchFailure { v: Vec3 },
    #[error("grid point with coordinates {q:?} is not reachable")]
    Grid { q: [f64; 3] },
    #[error("linear system has no rows")]
    EmptySystem,
    #[error("functional recovery needs Unknowns::Functional with F' >= 0")]
    NotFunctional,
    #[error("CGLS did not converge (relative residual {residual})")]
    NoConvergence { residual: f64 },
}

/// Which parameter differences are unknown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unknowns {
    Single(Param),
    Pair(Param, Param),
    /// `a33 = F(a11)`, `E² = H(a11)` with the slopes taken at the reference.
    Functional { f_prime: f64, h_prime: f64 },
}

impl Unknowns {
    /// Coefficients `c_l` of each unknown in `Σ_l c_l E^l`.
    pub fn columns(&self) -> Vec<[f64; 5]> {
        let unit = |p: Param| {
            let mut c = [0.0; 5];
            c[p.index()] = 1.0;
            c
        };
        match *self {
            Unknowns::Single(p) => vec![unit(p)],
            Unknowns::Pair(p, q) => vec![unit(p), unit(q)],
            Unknowns::Functional { f_prime, h_prime } => {
                let mut c = unit(Param::A11);
                c[Param::A33.index()] = f_prime;
                c[Param::E2.index()] = h_prime;
                vec![c]
            }
        }
    }

    /// Parameter whose difference each unknown stands for.
    pub fn params(&self) -> Vec<Param> {
        match *self {
            Unknowns::Single(p) => vec![p],
            Unknowns::Pair(p, q) => vec![p, q],
            Unknowns::Functional { .. } => vec![Param::A11],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Unknowns::Pair(..) => 2,
            _ => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A known reference medium, a held-out true medium and the unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPair {
    pub nu: MaterialField,
    pub nu_tilde: MaterialField,
    pub unknowns: Unknowns,
}

/// Shape functions attached to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Basis {
    /// Hat functions; one coefficient per node and piecewise-constant gradients.
    #[default]
    Trilinear,
    /// Uniform cubic B-splines with one ghost layer of coefficients on each
    /// side, so gradients along rays are accurate to third order.
    CubicBSpline,
}

/// A grid in coordinates `q = (e₁·(z−o), e₂·(z−o), x(z))`, where `x` is the
/// convex foliation. Estimates are reported at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryGrid {
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub foliation: ScalarField,
    pub lo: [f64; 3],
    pub h: [f64; 3],
    pub dims: [usize; 3],
    pub basis: Basis,
}

/// A basis function value and gradient at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisSample {
    pub coeff: usize,
    pub value: f64,
    pub gradient: Vec3,
}

fn bspline(t: f64) -> ([f64; 4], [f64; 4]) {
    let u = 1.0 - t;
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [u * u * u / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0],
        [-0.5 * u * u, 1.5 * t2 - 2.0 * t, -1.5 * t2 + t + 0.5, 0.5 * t2],
    )
}

impl RecoveryGrid {
    /// Grid over `[a0,a1]×[b0,b1]×[0,x_max]` with the given node counts.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        origin: Vec3,
        e1: Vec3,
        e2: Vec3,
        foliation: ScalarField,
        a: (f64, f64),
        b: (f64, f64),
        x_max: f64,
        dims: [usize; 3],
    ) -> Self {
        let span = [a.1 - a.0, b.1 - b.0, x_max];
        let h = [0, 1, 2].map(|i| span[i] / (dims[i].max(2) - 1) as f64);
        RecoveryGrid {
            origin,
            e1,
            e2,
            foliation,
            lo: [a.0, b.0, 0.0],
            h,
            dims: dims.map(|d| d.max(2)),
            basis: Basis::Trilinear,
        }
    }

    pub fn with_basis(mut self, basis: Basis) -> Self {
        self.basis = basis;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn coeff_dims(&self) -> [usize; 3] {
        match self.basis {
            Basis::Trilinear => self.dims,
            Basis::CubicBSpline => self.dims.map(|d| d + 2),
        }
    }

    /// Unknowns per active parameter.
    pub fn n_coeffs(&self) -> usize {
        let d = self.coeff_dims();
        d[0] * d[1] * d[2]
    }

    /// Foliation level of the centre of a coefficient's support.
    pub fn coeff_level(&self, c: usize) -> f64 {
        let d = self.coeff_dims();
        let k = (c / (d[0] * d[1])) as f64;
        match self.basis {
            Basis::Trilinear => self.lo[2] + self.h[2] * k,
            Basis::CubicBSpline => self.lo[2] + self.h[2] * (k - 1.0),
        }
    }

    pub fn normal(&self) -> Vec3 {
        self.e1.cross(self.e2)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn unindex(&self, n: usize) -> [usize; 3] {
        let i = n % self.dims[0];
        let j = (n / self.dims[0]) % self.dims[1];
        [i, j, n / (self.dims[0] * self.dims[1])]
    }

    pub fn node_coords(&self, n: usize) -> [f64; 3] {
        let ijk = self.unindex(n);
        [0, 1, 2].map(|d| self.lo[d] + self.h[d] * ijk[d] as f64)
    }

    pub fn coords(&self, z: Vec3) -> [f64; 3] {
        let r = z - self.origin;
        [self.e1.dot(r), self.e2.dot(r), self.foliation.value(z)]
    }

    /// Ambient point with coordinates `q`, by Newton along the grid normal
    /// starting from the grid origin's level.
    pub fn point(&self, q: [f64; 3]) -> Result<Vec3, RecoveryError> {
        let base = self.origin + self.e1 * q[0] + self.e2 * q[1];
        let n = self.normal();
        let mut s = 0.0;
        for _ in 0..60 {
            let z = base + n * s;
            let r = self.foliation.value(z) - q[2];
            if r.abs() < 1e-14 * (1.0 + q[2].abs()) {
                return Ok(z);
            }
            let d = self.foliation.gradient(z).dot(n);
            if !(d.abs() > 1e-12) {
                break;
            }
            s -= r / d;
        }
        let z = base + n * s;
        if (self.foliation.value(z) - q[2]).abs() < 1e-10 {
            Ok(z)
        } else {
            Err(RecoveryError::Grid { q })
        }
    }

    pub fn node_point(&self, n: usize) -> Result<Vec3, RecoveryError> {
        self.point(self.node_coords(n))
    }

    /// Cell and local offset along each axis; `None` outside the grid box.
    fn locate(&self, q: [f64; 3]) -> Option<([usize; 3], [f64; 3])> {
        let mut cell = [0usize; 3];
        let mut t = [0.0; 3];
        for d in 0..3 {
            let s = (q[d] - self.lo[d]) / self.h[d];
            let top = (self.dims[d] - 1) as f64;
            if !(s >= -1e-12 && s <= top + 1e-12) {
                return None;
            }
            let s = s.clamp(0.0, top);
            let c = (s.floor() as usize).min(self.dims[d] - 2);
            cell[d] = c;
            t[d] = s - c as f64;
        }
        Some((cell, t))
    }

    /// Nonzero shape functions at the grid coordinates `q`, with gradients
    /// with respect to `q`.
    fn shape(&self, q: [f64; 3], out: &mut Vec<(usize, f64, [f64; 3])>) {
        out.clear();
        let Some((cell, t)) = self.locate(q) else { return };
        let cd = self.coeff_dims();
        match self.basis {
            Basis::Trilinear => {
                for corner in 0..8 {
                    let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                    let w = [0, 1, 2].map(|d| if o[d] == 1 { t[d] } else { 1.0 - t[d] });
                    let dw = [0, 1, 2].map(|d| if o[d] == 1 { 1.0 / self.h[d] } else { -1.0 / self.h[d] });
                    let idx = self.index(cell[0] + o[0], cell[1] + o[1], cell[2] + o[2]);
                    out.push((idx, w[0] * w[1] * w[2], [dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2]]));
                }
            }
            Basis::CubicBSpline => {
                let bs = [0, 1, 2].map(|d| bspline(t[d]));
                for k in 0..4 {
                    for j in 0..4 {
                        for i in 0..4 {
                            let (w0, w1, w2) = (bs[0].0[i], bs[1].0[j], bs[2].0[k]);
                            let (d0, d1, d2) = (bs[0].1[i] / self.h[0], bs[1].1[j] / self.h[1], bs[2].1[k] / self.h[2]);
                            let idx = (cell[0] + i) + cd[0] * ((cell[1] + j) + cd[1] * (cell[2] + k));
                            out.push((idx, w0 * w1 * w2, [d0 * w1 * w2, w0 * d1 * w2, w0 * w1 * d2]));
                        }
                    }
                }
            }
        }
    }

    /// Nonzero basis functions at `z` with ambient gradients.
    pub fn basis_at(&self, z: Vec3, out: &mut Vec<BasisSample>) {
        out.clear();
        let mut local = Vec::with_capacity(64);
        self.shape(self.coords(z), &mut local);
        if local.is_empty() {
            return;
        }
        let gx = self.foliation.gradient(z);
        for (coeff, value, dq) in local {
            out.push(BasisSample { coeff, value, gradient: self.e1 * dq[0] + self.e2 * dq[1] + gx * dq[2] });
        }
    }

    /// Values at the nodes of the field with the given coefficients.
    pub fn nodal_values(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut local = Vec::with_capacity(64);
        (0..self.n_nodes())
            .map(|n| {
                self.shape(self.node_coords(n), &mut local);
                local.iter().map(|(c, v, _)| coeffs[*c] * v).sum()
            })
            .collect()
    }

    /// Nodes with `x` in `[x0, x1]`.
    pub fn nodes_in_slab(&self, x0: f64, x1: f64) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&n| {
                let x = self.node_coords(n)[2];
                x >= x0 - 1e-12 && x <= x1 + 1e-12
            })
            .collect()
    }

    /// Field sampled at the nodes.
    pub fn sample(&self, f: impl Fn(Vec3) -> f64) -> Result<Vec<f64>, RecoveryError> {
        (0..self.n_nodes()).map(|n| Ok(f(self.node_point(n)?))).collect()
    }
}

/// Turning points on a lattice in `(a, b, x)` times tangent directions.
#[derive(Debug, Clone, PartialEq)]
pub struct FanSpec {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub n_a: usize,
    pub n_b: usize,
    /// Foliation levels of the turning points.
    pub depths: Vec<f64>,
    /// Directions per turning point, evenly spread over a half circle.
    pub n_dir: usize,
    /// Normal tilts `λ̂`; the tangent is `x λ̂ ∂ₓ + ω·∂_y`.
    pub lambda_hat: Vec<f64>,
}

/// A ray of the fan before it is traced to the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySeed {
    pub turning: Vec3,
    pub x_turn: f64,
    pub tangent: Vec3,
}

fn lattice(r: (f64, f64), n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if n == 1 { 0.5 * (r.0 + r.1) } else { r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64 })
}

/// Fan seeds in a fixed order (depth, b, a, direction, tilt).
pub fn fan_seeds(grid: &RecoveryGrid, spec: &FanSpec) -> Result<Vec<RaySeed>, RecoveryError> {
    let mut out = Vec::new();
    for &x in &spec.depths {
        for b in lattice(spec.b, spec.n_b) {
            for a in lattice(spec.a, spec.n_a) {
                let z = grid.point([a, b, x])?;
                let g = grid.foliation.gradient(z);
                let n = g.normalized().ok_or(RecoveryError::Grid { q: [a, b, x] })?;
                let helper = if n[0].abs() < 0.9 { Vec3::axis(0) } else { Vec3::axis(1) };
                let t1 = (helper - n * helper.dot(n)).normalized().ok_or(RecoveryError::Grid { q: [a, b, x] })?;
                let t2 = n.cross(t1);
                let dx = n * (1.0 / g.norm());
                for k in 0..spec.n_dir {
                    let th = core::f64::consts::PI * (k as f64 + 0.5) / spec.n_dir as f64;
                    let om = t1 * th.cos() + t2 * th.sin();
                    for &l in &spec.lambda_hat {
                        out.push(RaySeed { turning: z, x_turn: x, tangent: om + dx * (x * l) });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Boundary entry of the reference ray through a seed: the seed's covector
/// (with `p̃ = 1`) flowed backwards in `ν̃` to the stop surfaces.
pub fn entry_for_seed(
    nu_tilde: &MaterialField,
    wave: Wave,
    seed: &RaySeed,
    stops: &[StopSurface],
    opts: &TraceOptions,
) -> Result<PhasePoint, RecoveryError> {
    let xi = raytrace::invert_hamilton_map(nu_tilde, wave, seed.turning, seed.tangent, nu_tilde.g0.mul_vec(seed.tangent))
        .ok()
        .or_else(|| raytrace::invert_all(nu_tilde, wave, seed.turning, seed.tangent).into_iter().next())
        .ok_or(RecoveryError::BranchFailure { v: seed.tangent })?;
    let pt = raytrace::normalize_covector(nu_tilde, wave, PhasePoint::new(seed.turning, xi))?;
    let back = raytrace::integrate_flow(nu_tilde, wave, PhasePoint::new(pt.x, -pt.xi), stops, opts)?;
    let e = back.end();
    Ok(PhasePoint::new(e.x, -e.xi))
}

/// One ray's lens-data mismatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayDatum {
    pub wave: Wave,
    pub entry: PhasePoint,
    /// Foliation level of the turning point, used for conjugation.
    pub x_turn: f64,
    /// Exit time of the true ray.
    pub tau: f64,
    /// `Ξ(T) − Ξ̃(T)`.
    pub mismatch: Vec3,
}

/// Trace the true ray from `entry` and compare with the reference flow.
pub fn synthesize_datum(
    pair: &ScenarioPair,
    wave: Wave,
    entry: PhasePoint,
    x_turn: f64,
    stops: &[StopSurface],
    opts: &TraceOptions,
) -> Result<RayDatum, RecoveryError> {
    let ray = raytrace::integrate_flow(&pair.nu, wave, entry, stops, opts)?;
    let tau = ray.duration();
    let reference = raytrace::flow_for_time(&pair.nu_tilde, wave, entry, tau, &opts.ode)?;
    Ok(RayDatum { wave, entry, x_turn, tau, mismatch: ray.end().xi - reference.xi })
}

/// Quadrature settings for row assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    /// Gauss–Legendre order per panel.
    pub gl_order: usize,
    /// Panels per smallest grid spacing.
    pub panels_per_cell: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { gl_order: 4, panels_per_cell: 2.0 }
    }
}

/// Conjugation `e^{−ϝ/x̂} · e^{ϝ/x̂}` of the transform, with `x̂ = max(x, x_floor)/x_scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conjugation {
    pub digamma: f64,
    /// Length unit of `x` in the conjugation factor.
    pub x_scale: f64,
    /// Smallest `x` used in the conjugation factor.
    pub x_floor: f64,
}

impl Conjugation {
    /// Default for a slab of the given width: `x` is measured in units of an
    /// eighth of the slab and floored at half the grid spacing `h_x`.
    pub fn for_slab(digamma: f64, width: f64, h_x: f64) -> Self {
        Conjugation { digamma, x_scale: width / 8.0, x_floor: 0.5 * h_x }
    }

    /// Exponent `ϝ/x̂` at level `x`.
    pub fn exponent(&self, x: f64) -> f64 {
        self.digamma / (x.max(self.x_floor) / self.x_scale)
    }
}

/// Sparse entries of the three rows of one ray, sorted by column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowBlock {
    pub cols: Vec<usize>,
    pub vals: Vec<[f64; 3]>,
}

impl RowBlock {
    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }
}

/// `(t, weight, Z̃(t))` on composite Gauss–Legendre panels of `[0, T]`.
fn reference_samples(
    nu_tilde: &MaterialField,
    wave: Wave,
    entry: PhasePoint,
    tau: f64,
    dt_panel: f64,
    gl: &GaussLegendre,
    opts: &OdeOptions,
) -> Result<Vec<(f64, f64, PhasePoint)>, RecoveryError> {
    let panels = ((tau / dt_panel).ceil() as usize).max(1);
    let h = tau / panels as f64;
    let mut out = Vec::with_capacity(panels * gl.len());
    if nu_tilde.is_homogeneous() {
        let v = raytrace::hamilton_map(nu_tilde, wave, entry.x, entry.xi)?;
        for p in 0..panels {
            for (t, w) in gl.on_interval(h * p as f64, h * (p + 1) as f64) {
                out.push((t, w, PhasePoint::new(entry.x + v * t, entry.xi)));
            }
        }
        return Ok(out);
    }
    let mut start = entry;
    for p in 0..panels {
        let a = h * p as f64;
        for (t, w) in gl.on_interval(a, a + h) {
            out.push((t, w, raytrace::flow_for_time(nu_tilde, wave, start, t - a, opts)?));
        }
        start = raytrace::flow_for_time(nu_tilde, wave, start, h, opts)?;
    }
    Ok(out)
}

/// Unconjugated rows of one ray for every unknown; columns are
/// `unknown · n_coeffs + coeff`.
pub fn assemble_ray(
    grid: &RecoveryGrid,
    nu_tilde: &MaterialField,
    unknowns: &Unknowns,
    datum: &RayDatum,
    opts: &AssemblyOptions,
    flow: &OdeOptions,
) -> Result<RowBlock, RecoveryError> {
    let hmin = grid.h.iter().cloned().fold(f64::INFINITY, f64::min);
    let speed = raytrace::hamilton_map(nu_tilde, datum.wave, datum.entry.x, datum.entry.xi)?.norm();
    let dt_panel = hmin / speed / opts.panels_per_cell;
    let gl = GaussLegendre::new(opts.gl_order);
    let samples = reference_samples(nu_tilde, datum.wave, datum.entry, datum.tau, dt_panel, &gl, flow)?;
    let columns = unknowns.columns();
    let nn = grid.n_coeffs();
    let mut acc: BTreeMap<usize, [f64; 3]> = BTreeMap::new();
    let mut basis = Vec::with_capacity(8);
    for (t, w, z) in samples {
        grid.basis_at(z.x, &mut basis);
        if basis.is_empty() {
            continue;
        }
        let (_, ax) = pseudolin::covector_jacobian(nu_tilde, datum.wave, z, datum.tau - t, flow)?;
        let a: Mat3 = ax.scale(-1.0);
        let sens = material::material_sensitivities(nu_tilde, datum.wave, &z)?;
        let e: [f64; 5] = Param::ALL.map(|p| sens.get(p));
        for (u, c) in columns.iter().enumerate() {
            let weight: f64 = c.iter().zip(&e).map(|(ci, ei)| ci * ei).sum();
            if weight == 0.0 {
                continue;
            }
            for s in &basis {
                let g = a.mul_vec(s.gradient) * (w * weight);
                let slot = acc.entry(u * nn + s.coeff).or_insert([0.0; 3]);
                for i in 0..3 {
                    slot[i] += g[i];
                }
            }
        }
    }
    let mut block = RowBlock::default();
    for (col, v) in acc {
        block.cols.push(col);
        block.vals.push(v);
    }
    Ok(block)
}

/// Lens-data mismatches for every seed and wave, wave-major.
pub fn synthesize_data(
    pair: &ScenarioPair,
    waves: &[Wave],
    seeds: &[RaySeed],
    stops: &[StopSurface],
    opts: &TraceOptions,
) -> Result<Vec<RayDatum>, RecoveryError> {
    let mut out = Vec::with_capacity(waves.len() * seeds.len());
    for &wave in waves {
        for s in seeds {
            let entry = entry_for_seed(&pair.nu_tilde, wave, s, stops, opts)?;
            out.push(synthesize_datum(pair, wave, entry, s.x_turn, stops, opts)?);
        }
    }
    Ok(out)
}

/// Assemble and conjugate the rows of every datum.
pub fn assemble_system(
    grid: &RecoveryGrid,
    nu_tilde: &MaterialField,
    unknowns: &Unknowns,
    data: &[RayDatum],
    assembly: &AssemblyOptions,
    conj: &Conjugation,
    flow: &OdeOptions,
) -> Result<LinearSystem, RecoveryError> {
    let blocks = data
        .iter()
        .map(|d| assemble_ray(grid, nu_tilde, unknowns, d, assembly, flow))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LinearSystem::from_blocks(grid, unknowns, data, &blocks, conj))
}

/// Conjugated sparse least-squares system in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Ray index of each row.
    pub row_ray: Vec<usize>,
    /// `f_k = col_scale_k · u_k`.
    pub col_scale: Vec<f64>,
    /// Rays that touch no basis function.
    pub empty_rays: Vec<usize>,
    /// Coefficient lattice of one unknown, for the smoothness penalty.
    pub coeff_dims: [usize; 3],
    pub spacing: [f64; 3],
}

/// Penalty operator `R` in `‖Au − b‖² + μ‖Ru‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regularizer {
    /// `‖f‖²`.
    Identity,
    /// Forward differences of `f = Du` along the three grid axes, divided by
    /// the spacing, with `f = 0` imposed beyond the lateral faces and the
    /// outer (`x = x_max`) face. Without those terms a constant over the grid
    /// box would be invisible both to the data and to the penalty.
    #[default]
    Gradient,
}

impl LinearSystem {
    /// Stack ray blocks in ray order and conjugate them.
    ///
    /// Entries are multiplied by `e^{−ϝ(1/x̂_r − 1/x̂_k)}` with `x_r` the
    /// ray's turning level and `x_k` the coefficient level, and the
    /// right-hand side is `e^{−ϝ/x̂_r}` times the mismatch.
    pub fn from_blocks(
        grid: &RecoveryGrid,
        unknowns: &Unknowns,
        data: &[RayDatum],
        blocks: &[RowBlock],
        conj: &Conjugation,
    ) -> Self {
        let nn = grid.n_coeffs();
        let n_cols = nn * unknowns.len();
        let mut sys = LinearSystem {
            n_cols,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            rhs: Vec::new(),
            row_ray: Vec::new(),
            col_scale: (0..n_cols).map(|c| conj.exponent(grid.coeff_level(c % nn)).exp()).collect(),
            empty_rays: Vec::new(),
            coeff_dims: grid.coeff_dims(),
            spacing: grid.h,
        };
        for (r, (d, b)) in data.iter().zip(blocks).enumerate() {
            if b.is_empty() {
                sys.empty_rays.push(r);
                continue;
            }
            let er = conj.exponent(d.x_turn);
            let scale = (-er).exp();
            for i in 0..3 {
                for (c, v) in b.cols.iter().zip(&b.vals) {
                    if v[i] != 0.0 {
                        sys.cols.push(*c);
                        sys.vals.push(v[i] * (sys.col_scale[*c] * scale));
                    }
                }
                sys.row_ptr.push(sys.cols.len());
                sys.rhs.push(d.mismatch[i] * scale);
                sys.row_ray.push(r);
            }
        }
        sys
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.n_rows() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            out[r] = s;
        }
    }

    pub fn mul_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.n_rows() {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.cols[k]] += self.vals[k] * yr;
            }
        }
    }

    /// Estimate `‖A‖₂²` by power iteration on `AᵀA`.
    pub fn norm_sq_estimate(&self, iterations: usize) -> f64 {
        let mut x = vec![1.0; self.n_cols];
        let mut y = vec![0.0; self.n_rows()];
        let mut lam = 0.0;
        for _ in 0..iterations {
            let n = norm(&x);
            if n == 0.0 {
                return 0.0;
            }
            x.iter_mut().for_each(|v| *v /= n);
            self.mul(&x, &mut y);
            self.mul_transpose(&y, &mut x);
            lam = norm(&x);
        }
        lam
    }

    /// Estimate `‖R‖₂²` by power iteration on `RᵀR`.
    pub fn penalty_norm_sq_estimate(&self, reg: Regularizer, iterations: usize) -> f64 {
        let mut x: Vec<f64> = (0..self.n_cols).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut y = vec![0.0; self.penalty_len(reg)];
        let mut lam = 0.0;
        for _ in 0..iterations {
            let n = norm(&x);
            if n == 0.0 {
                return 0.0;
            }
            x.iter_mut().for_each(|v| *v /= n);
            self.penalty(reg, &x, &mut y);
            self.penalty_transpose(reg, &y, &mut x);
            lam = norm(&x);
        }
        lam
    }

    /// Length of `Ru`.
    pub fn penalty_len(&self, reg: Regularizer) -> usize {
        match reg {
            Regularizer::Identity => self.n_cols,
            Regularizer::Gradient => 5 * self.n_cols,
        }
    }

    pub fn penalty(&self, reg: Regularizer, u: &[f64], out: &mut [f64]) {
        match reg {
            Regularizer::Identity => out.copy_from_slice(u),
            Regularizer::Gradient => {
                out.iter_mut().for_each(|v| *v = 0.0);
                self.for_each_difference(|row, c, n, h| {
                    let fn_ = n.map_or(0.0, |n| self.col_scale[n] * u[n]);
                    out[row] = (fn_ - self.col_scale[c] * u[c]) / h;
                });
            }
        }
    }

    pub fn penalty_transpose(&self, reg: Regularizer, y: &[f64], out: &mut [f64]) {
        match reg {
            Regularizer::Identity => out.copy_from_slice(y),
            Regularizer::Gradient => {
                out.iter_mut().for_each(|v| *v = 0.0);
                self.for_each_difference(|row, c, n, h| {
                    let v = y[row] / h;
                    if let Some(n) = n {
                        out[n] += self.col_scale[n] * v;
                    }
                    out[c] -= self.col_scale[c] * v;
                });
            }
        }
    }

    /// Visit the difference rows `(f_n − f_c)/h` of the gradient penalty;
    /// `n = None` stands for the zero value beyond a clamped face.
    fn for_each_difference(&self, mut visit: impl FnMut(usize, usize, Option<usize>, f64)) {
        let d = self.coeff_dims;
        let block = d[0] * d[1] * d[2];
        let stride = [1, d[0], d[0] * d[1]];
        for c in 0..self.n_cols {
            let local = c % block;
            let ijk = [local % d[0], (local / d[0]) % d[1], local / (d[0] * d[1])];
            for a in 0..3 {
                let next = if ijk[a] + 1 < d[a] { Some(c + stride[a]) } else { None };
                visit(5 * c + a, c, next, self.spacing[a]);
            }
            for a in 0..2 {
                if ijk[a] == 0 {
                    visit(5 * c + 3 + a, c, None, self.spacing[a]);
                }
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of one regularized CGLS solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CglsResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖Ax − b‖` after each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// CGLS for `min ‖Ax − b‖² + μ‖Rx‖²`, started from `x0`; stops when the
/// normal-equation residual falls below `tol · ‖Aᵀb‖`.
pub fn cgls(sys: &LinearSystem, reg: Regularizer, mu: f64, x0: &[f64], max_iter: usize, tol: f64) -> CglsResult {
    let n = sys.n_cols;
    let m = sys.n_rows();
    let k = sys.penalty_len(reg);
    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    sys.mul(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
        *ri = bi - *ri;
    }
    let mut rx = vec![0.0; k];
    sys.penalty(reg, &x, &mut rx);
    let mut s = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let gradient = |r: &[f64], rx: &[f64], s: &mut [f64], tmp: &mut [f64]| {
        sys.mul_transpose(r, s);
        sys.penalty_transpose(reg, rx, tmp);
        for (si, ti) in s.iter_mut().zip(tmp.iter()) {
            *si -= mu * ti;
        }
    };
    gradient(&r, &rx, &mut s, &mut tmp);
    let mut atb = vec![0.0; n];
    sys.mul_transpose(&sys.rhs, &mut atb);
    let target = tol * norm(&atb).max(1e-300);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut q = vec![0.0; m];
    let mut qx = vec![0.0; k];
    let mut residuals = Vec::new();
    let mut converged = gamma.sqrt() <= target;
    let mut it = 0;
    while !converged && it < max_iter {
        sys.mul(&p, &mut q);
        sys.penalty(reg, &p, &mut qx);
        let delta = dot(&q, &q) + mu * dot(&qx, &qx);
        if !(delta > 0.0) {
            break;
        }
        let alpha = gamma / delta;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        for (ri, qi) in rx.iter_mut().zip(&qx) {
            *ri += alpha * qi;
        }
        gradient(&r, &rx, &mut s, &mut tmp);
        let g_new = dot(&s, &s);
        let beta = g_new / gamma;
        gamma = g_new;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        it += 1;
        residuals.push(norm(&r));
        converged = gamma.sqrt() <= target;
    }
    CglsResult { x, iterations: it, residuals, converged }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// CGLS iterations per regularization weight.
    pub max_iter: usize,
    /// CGLS stops when the normal-equation residual is below `tol·‖Aᵀb‖`.
    pub tol: f64,
    /// Smallest relative noise level `δ/‖b‖` assumed for the data.
    pub noise_floor: f64,
    /// Safety factor `τ > 1` of the discrepancy principle.
    pub tau: f64,
    /// Largest number of regularization weights tried, decreasing by `10^{1/2}`.
    pub ladder: usize,
    /// Once the data are at least half explained, the ladder stops when the
    /// residual drops by less than this fraction between consecutive weights.
    pub plateau: f64,
    pub regularizer: Regularizer,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 600,
            tol: 1e-6,
            noise_floor: 1e-6,
            tau: 1.2,
            ladder: 16,
            plateau: 0.01,
            regularizer: Regularizer::Gradient,
        }
    }
}

/// One step of the regularization ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderStep {
    pub mu: f64,
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// Basis coefficients of the estimated `f`, one block per unknown.
    pub coefficients: Vec<f64>,
    pub mu: f64,
    pub iterations: usize,
    /// `‖Au − b‖` after every CGLS iteration of every ladder step.
    pub residual_history: Vec<f64>,
    pub ladder: Vec<LadderStep>,
    /// `‖Au − b‖ / ‖b‖` at the selected weight.
    pub relative_residual: f64,
    /// Estimated relative noise level `δ/‖b‖`.
    pub noise_level: f64,
}

/// Tikhonov-regularized solve with the weight chosen by the discrepancy
/// principle.
///
/// Weights `μ₀·10^{-j/2}` are tried from large to small, each solve warm
/// started from the previous one, until the residual levels off. The data
/// noise `δ` is the larger of the configured floor and that plateau, which
/// is the part of the data the discretized model cannot explain. The result
/// is the largest weight with residual within `τ·δ`.
///
/// CGLS runs in the unconjugated unknowns `f`; the column conjugation is a
/// change of variables that leaves the minimizer unchanged, while the row
/// conjugation weights the residual.
pub fn recover(sys: &LinearSystem, opts: &SolverOptions) -> Result<Recovery, RecoveryError> {
    if sys.n_rows() == 0 {
        return Err(RecoveryError::EmptySystem);
    }
    let bnorm = norm(&sys.rhs);
    if bnorm == 0.0 {
        return Ok(Recovery {
            coefficients: vec![0.0; sys.n_cols],
            mu: 0.0,
            iterations: 0,
            residual_history: Vec::new(),
            ladder: Vec::new(),
            relative_residual: 0.0,
            noise_level: opts.noise_floor,
        });
    }
    let mut work = sys.clone();
    for (v, c) in work.vals.iter_mut().zip(&work.cols) {
        *v /= sys.col_scale[*c];
    }
    work.col_scale.iter_mut().for_each(|s| *s = 1.0);

    let mu0 = work.norm_sq_estimate(30) / work.penalty_norm_sq_estimate(opts.regularizer, 30).max(1e-300);
    let mut x = vec![0.0; work.n_cols];
    let mut history = Vec::new();
    let mut ladder = Vec::new();
    let mut solutions = Vec::new();
    let mut r = vec![0.0; work.n_rows()];
    for j in 0..opts.ladder.max(1) {
        let mu = mu0 * 10f64.powf(-0.5 * j as f64);
        let res = cgls(&work, opts.regularizer, mu, &x, opts.max_iter, opts.tol);
        history.extend_from_slice(&res.residuals);
        work.mul(&res.x, &mut r);
        let rel = r.iter().zip(&work.rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / bnorm;
        x = res.x;
        ladder.push(LadderStep { mu, relative_residual: rel, iterations: res.iterations, converged: res.converged });
        solutions.push(x.clone());
        if rel <= opts.tau * opts.noise_floor {
            break;
        }
        if j > 0 && rel < 0.5 {
            let prev = ladder[j - 1].relative_residual;
            if prev - rel < opts.plateau * prev {
                break;
            }
        }
    }
    let floor = ladder.iter().map(|s| s.relative_residual).fold(f64::INFINITY, f64::min);
    let noise_level = opts.noise_floor.max(floor);
    let pick = ladder.iter().position(|s| s.relative_residual <= opts.tau * noise_level).unwrap_or(ladder.len() - 1);
    let step = ladder[pick];
    if !step.converged && step.relative_residual > opts.tau * noise_level {
        return Err(RecoveryError::NoConvergence { residual: step.relative_residual });
    }
    Ok(Recovery {
        coefficients: solutions.swap_remove(pick),
        mu: step.mu,
        iterations: ladder.iter().map(|s| s.iterations).sum(),
        residual_history: history,
        ladder,
        relative_residual: step.relative_residual,
        noise_level,
    })
}

/// Recover `a11` under `a33 = F(a11)`, `E² = H(a11)` from qP and qSV data.
///
/// The summed rows carry the coefficient `E^{a11} + F′E^{a33} + H′E^{E²}`
/// of both waves. `F′ < 0` is rejected because the summed coefficient is
/// then no longer positive.
#[allow(clippy::too_many_arguments)]
pub fn recover_functional(
    pair: &ScenarioPair,
    grid: &RecoveryGrid,
    seeds: &[RaySeed],
    stops: &[StopSurface],
    trace: &TraceOptions,
    assembly: &AssemblyOptions,
    conj: &Conjugation,
    solver: &SolverOptions,
) -> Result<Recovery, RecoveryError> {
    let Unknowns::Functional { f_prime, .. } = pair.unknowns else {
        return Err(RecoveryError::NotFunctional);
    };
    if !(f_prime >= 0.0) {
        return Err(RecoveryError::NotFunctional);
    }
    let data = synthesize_data(pair, &[Wave::QP, Wave::QSV], seeds, stops, trace)?;
    let sys = assemble_system(grid, &pair.nu_tilde, &pair.unknowns, &data, assembly, conj, &trace.ode)?;
    recover(&sys, solver)
}

impl Recovery {
    /// Estimates at the grid nodes, one block of `n_nodes` per unknown.
    pub fn nodal(&self, grid: &RecoveryGrid) -> Vec<f64> {
        self.coefficients.chunks(grid.n_coeffs()).flat_map(|c| grid.nodal_values(c)).collect()
    }
}

/// `‖est − truth‖ / ‖truth‖` over the listed entries.
pub fn relative_l2_error(estimate: &[f64], truth: &[f64], entries: &[usize]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &k in entries {
        num += (estimate[k] - truth[k]).powi(2);
        den += truth[k] * truth[k];
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Nodal values of `ν_l − ν̃_l` for each unknown, in column order.
pub fn truth_vector(grid: &RecoveryGrid, pair: &ScenarioPair) -> Result<Vec<f64>, RecoveryError> {
    let mut out = Vec::with_capacity(grid.n_nodes() * pair.unknowns.len());
    for p in pair.unknowns.params() {
        out.extend(grid.sample(|z| pseudolin::param_diff(&pair.nu, &pair.nu_tilde, p, z))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Box3;
    use crate::material::ElasticParams;

    const M0: ElasticParams = ElasticParams::new(14.0, 2.0, 12.0, 4.0, 5.0);

    fn shell_grid(dims: [usize; 3]) -> RecoveryGrid {
        let fol = ScalarField::Radial { center: Vec3::ZERO, sign: 1.0, offset: -0.9 };
        RecoveryGrid::new(Vec3::new(0.0, 0.0, 0.9), Vec3::axis(0), Vec3::axis(1), fol, (-0.2, 0.2), (-0.2, 0.2), 0.1, dims)
    }

    fn reference() -> MaterialField {
        let d = Box3::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        MaterialField::homogeneous(d, M0, Vec3::new(0.4, 0.1, 1.0)).with_e2_coupling().unwrap()
    }

    fn stops() -> Vec<StopSurface> {
        vec![StopSurface::Level { field: ScalarField::Radial { center: Vec3::ZERO, sign: 1.0, offset: 0.0 }, level: 1.0, sign: -1.0 }]
    }

    #[test]
    fn grid_points_round_trip() {
        let g = shell_grid([5, 5, 3]);
        for n in 0..g.n_nodes() {
            let z = g.node_point(n).unwrap();
            let q = g.coords(z);
            let want = g.node_coords(n);
            for d in 0..3 {
                assert!((q[d] - want[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn basis_is_a_partition_of_unity_with_consistent_gradients() {
        for (basis, count) in [(Basis::Trilinear, 8), (Basis::CubicBSpline, 64)] {
            let g = shell_grid([5, 4, 3]).with_basis(basis);
            let mut b = Vec::new();
            let z = g.point([0.013, -0.071, 0.042]).unwrap();
            g.basis_at(z, &mut b);
            assert_eq!(b.len(), count);
            assert!((b.iter().map(|s| s.value).sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(b.iter().map(|s| s.gradient).fold(Vec3::ZERO, |a, v| a + v).norm() < 1e-9);
            let mut bp = Vec::new();
            let dir = Vec3::new(0.3, -0.2, 0.5);
            let h = 1e-6;
            g.basis_at(z + dir * h, &mut bp);
            let mut bm = Vec::new();
            g.basis_at(z - dir * h, &mut bm);
            for ((s, p), m) in b.iter().zip(&bp).zip(&bm) {
                assert_eq!(s.coeff, p.coeff);
                let fd = (p.value - m.value) / (2.0 * h);
                assert!((fd - s.gradient.dot(dir)).abs() < 1e-6, "{fd} {}", s.gradient.dot(dir));
            }
            g.basis_at(Vec3::new(0.0, 0.0, 2.0), &mut b);
            assert!(b.is_empty());
        }
    }

    #[test]
    fn cubic_splines_reproduce_linear_functions_in_grid_coordinates() {
        let g = shell_grid([5, 4, 3]).with_basis(Basis::CubicBSpline);
        let cd = g.coeff_dims();
        // coefficients of a linear function are its values at the knots
        let lin = |q: [f64; 3]| 1.0 + 2.0 * q[0] - 3.0 * q[1] + 5.0 * q[2];
        let coeffs: Vec<f64> = (0..g.n_coeffs())
            .map(|c| {
                let ijk = [c % cd[0], (c / cd[0]) % cd[1], c / (cd[0] * cd[1])];
                lin([0, 1, 2].map(|d| g.lo[d] + g.h[d] * (ijk[d] as f64 - 1.0)))
            })
            .collect();
        let vals = g.nodal_values(&coeffs);
        for n in 0..g.n_nodes() {
            assert!((vals[n] - lin(g.node_coords(n))).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_media_give_zero_data_and_zero_estimate() {
        let nu = reference();
        let pair = ScenarioPair { nu: nu.clone(), nu_tilde: nu, unknowns: Unknowns::Single(Param::A11) };
        let g = shell_grid([5, 5, 3]);
        let spec = FanSpec { a: (-0.1, 0.1), b: (-0.1, 0.1), n_a: 2, n_b: 2, depths: vec![0.03, 0.06], n_dir: 3, lambda_hat: vec![0.0] };
        let opts = TraceOptions::default();
        let aopts = AssemblyOptions::default();
        let conj = Conjugation::for_slab(1.0, 0.1, g.h[2]);
        let mut data = Vec::new();
        let mut blocks = Vec::new();
        for s in fan_seeds(&g, &spec).unwrap() {
            let e = entry_for_seed(&pair.nu_tilde, Wave::QP, &s, &stops(), &opts).unwrap();
            let d = synthesize_datum(&pair, Wave::QP, e, s.x_turn, &stops(), &opts).unwrap();
            assert!(d.mismatch.norm() < 1e-13);
            blocks.push(assemble_ray(&g, &pair.nu_tilde, &pair.unknowns, &d, &aopts, &opts.ode).unwrap());
            data.push(d);
        }
        let sys = LinearSystem::from_blocks(&g, &pair.unknowns, &data, &blocks, &conj);
        let rec = recover(&sys, &SolverOptions::default()).unwrap();
        assert!(rec.coefficients.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_voxel_row_is_the_segment_quadrature() {
        // one cell, homogeneous reference: row_i = −E ∫ ∂_i φ dt
        let nu = reference();
        let g = shell_grid([2, 2, 2]);
        let z = g.point([0.0, 0.0, 0.05]).unwrap();
        let xi = raytrace::normalize_covector(&nu, Wave::QP, PhasePoint::new(z, Vec3::new(1.0, 0.2, 0.0))).unwrap();
        let ray = raytrace::integrate_flow(&nu, Wave::QP, PhasePoint::new(xi.x, -xi.xi), &stops(), &TraceOptions::default()).unwrap();
        let entry = PhasePoint::new(ray.end().x, -ray.end().xi);
        let fwd = raytrace::integrate_flow(&nu, Wave::QP, entry, &stops(), &TraceOptions::default()).unwrap();
        let d = RayDatum { wave: Wave::QP, entry, x_turn: 0.05, tau: fwd.duration(), mismatch: Vec3::ZERO };
        let aopts = AssemblyOptions { gl_order: 8, panels_per_cell: 64.0 };
        let block = assemble_ray(&g, &nu, &Unknowns::Single(Param::A11), &d, &aopts, &OdeOptions::default()).unwrap();
        let e = material::material_sensitivities(&nu, Wave::QP, &entry).unwrap().da11;
        let v = raytrace::hamilton_map(&nu, Wave::QP, entry.x, entry.xi).unwrap();
        let mut b = Vec::new();
        for (c, val) in block.cols.iter().zip(&block.vals) {
            let mut want = Vec3::ZERO;
            let n = 40000;
            for k in 0..n {
                let t = d.tau * (k as f64 + 0.5) / n as f64;
                g.basis_at(entry.x + v * t, &mut b);
                if let Some(s) = b.iter().find(|s| s.coeff == *c) {
                    want += s.gradient * (-e * d.tau / n as f64);
                }
            }
            for i in 0..3 {
                assert!((val[i] - want[i]).abs() < 2e-3 * want.norm().max(1e-3), "{c} {i} {val:?} {want:?}");
            }
        }
        assert_eq!(block.cols.len(), 8);
    }

    fn bump(amplitude: f64) -> ScalarField {
        ScalarField::Gaussian { amplitude, center: Vec3::new(0.0, 0.0, 0.94), widths: Vec3::new(0.1, 0.1, 0.03) }
    }

    fn few_seeds(g: &RecoveryGrid) -> Vec<RaySeed> {
        let spec = FanSpec { a: (-0.1, 0.1), b: (0.0, 0.0), n_a: 3, n_b: 1, depths: vec![0.03, 0.05], n_dir: 2, lambda_hat: vec![0.0] };
        fan_seeds(g, &spec).unwrap()
    }

    #[test]
    fn mismatch_scales_linearly_with_bump_amplitude() {
        let nt = reference();
        let g = shell_grid([3, 3, 3]);
        let seeds = few_seeds(&g);
        let run = |amp: f64| {
            let pair = ScenarioPair { nu: nt.perturbed(Param::A11, bump(amp)), nu_tilde: nt.clone(), unknowns: Unknowns::Single(Param::A11) };
            synthesize_data(&pair, &[Wave::QP], &seeds, &stops(), &TraceOptions::default()).unwrap()
        };
        let full = run(0.1);
        let half = run(0.05);
        for (a, b) in full.iter().zip(&half) {
            assert!(a.mismatch.norm() > 1e-6);
            let ratio = a.mismatch.norm() / b.mismatch.norm();
            assert!((ratio - 2.0).abs() < 0.04, "{ratio}");
        }
    }

    #[test]
    fn functional_scenario_moves_both_waves() {
        let nt = reference();
        let b = bump(0.1);
        let nu = nt.perturbed(Param::A11, b.clone()).perturbed(Param::A33, b.scaled(0.5)).perturbed(Param::E2, b.scaled(-2.0));
        let pair = ScenarioPair { nu, nu_tilde: nt, unknowns: Unknowns::Functional { f_prime: 0.5, h_prime: -2.0 } };
        let g = shell_grid([3, 3, 3]);
        let data = synthesize_data(&pair, &[Wave::QP, Wave::QSV], &few_seeds(&g), &stops(), &TraceOptions::default()).unwrap();
        for wave in [Wave::QP, Wave::QSV] {
            let m = data.iter().filter(|d| d.wave == wave).map(|d| d.mismatch.norm()).fold(0.0, f64::max);
            assert!(m > 1e-5, "{wave:?} {m}");
        }
    }

    #[test]
    fn conjugation_scales_rows_and_columns() {
        let g = shell_grid([2, 2, 2]);
        let d = RayDatum { wave: Wave::QP, entry: PhasePoint::new(Vec3::ZERO, Vec3::axis(0)), x_turn: 0.05, tau: 1.0, mismatch: Vec3::new(1.0, 2.0, 3.0) };
        let block = RowBlock { cols: vec![0, 7], vals: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]] };
        let conj = Conjugation { digamma: 1.0, x_scale: 0.1, x_floor: 0.01 };
        let sys = LinearSystem::from_blocks(&g, &Unknowns::Single(Param::A11), &[d], &[block], &conj);
        assert_eq!(sys.n_rows(), 3);
        // node 0 sits at x = 0 (floored to 0.01), node 7 at x = 0.1
        let er = (-1.0f64 / 0.5).exp();
        assert!((sys.vals[0] - er * (1.0f64 / 0.1).exp()).abs() < 1e-9 * sys.vals[0]);
        assert!((sys.vals[1] - er * 1f64.exp()).abs() < 1e-12);
        assert!((sys.rhs[2] - 3.0 * er).abs() < 1e-15);
        assert!((sys.col_scale[7] - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn cgls_solves_a_small_consistent_system() {
        // 3×2 system with a known solution
        let sys = LinearSystem {
            n_cols: 2,
            row_ptr: vec![0, 2, 4, 5],
            cols: vec![0, 1, 0, 1, 1],
            vals: vec![1.0, 2.0, 3.0, -1.0, 0.5],
            rhs: vec![1.0 + 2.0 * -2.0, 3.0 + 2.0, -1.0],
            row_ray: vec![0, 0, 0],
            col_scale: vec![1.0, 1.0],
            empty_rays: vec![],
            coeff_dims: [2, 1, 1],
            spacing: [1.0; 3],
        };
        let r = cgls(&sys, Regularizer::Identity, 0.0, &[0.0, 0.0], 50, 1e-14);
        assert!((r.x[0] - 1.0).abs() < 1e-12 && (r.x[1] + 2.0).abs() < 1e-12, "{:?}", r.x);
        let rec = recover(&sys, &SolverOptions { noise_floor: 1e-12, ..SolverOptions::default() }).unwrap();
        assert!((rec.coefficients[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unknown_columns() {
        let f = Unknowns::Functional { f_prime: 1.0, h_prime: 0.5 };
        let c = f.columns();
        assert_eq!(c[0][Param::A11.index()], 1.0);
        assert_eq!(c[0][Param::A33.index()], 1.0);
        assert_eq!(c[0][Param::E2.index()], 0.5);
        assert_eq!(Unknowns::Pair(Param::E2, Param::A11).columns().len(), 2);
    }
}
