//! Principal symbols of the conjugated, localized normal operator.
//!
//! Near a point `z` with convex-foliation value `x`, tangent vectors are
//! written `x·λ̂·∂ₓ + ω·∂_y` with `ω ∈ S¹` in an orthonormal frame of the
//! level set, and scattering covectors as `ζ₃ dx/x² + ζ′·dy/x`.
//!
//! * The standard symbol integrates `∂p/∂ν_l` at `H_z⁻¹(x λ̂, ω)` against the
//!   cutoff `χ(λ̂)` over the critical set `ζ₃λ̂ + ζ′·ω = 0`, with the density
//!   left behind by two-variable stationary phase.
//! * The boundary symbol at finite `ζ` replaces `χ` by a Gaussian and
//!   integrates over the whole circle of boundary tangent directions.
//!
//! All symbols are reported up to a positive overall factor; signs and
//! zeros are what matter. The weight sign is `+∂p/∂ν_l`, so `a11` from qP
//! data is positive and `E²` negative.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use crate::field::ScalarField;
use crate::linalg::{fit_line, Vec3};
use crate::material::{self, MaterialError, MaterialField, Param, PhasePoint, Wave};
use crate::ode::OdeOptions;
use crate::quadrature::GaussLegendre;
use crate::raytrace::{self, RayError};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SymbolError {
    #[error("scattering covector is zero")]
    ZeroCovector,
    #[error("invalid cutoff: {0}")]
    InvalidCutoff(&'static str),
    #[error("foliation gradient vanishes at {x:?}")]
    DegenerateFoliation { x: Vec3 },
    #[error("no covector branch over tangent vector {v:?}")]
    BranchFailure { v: Vec3 },
    #[error("ray curvature {alpha} is not positive at boundary direction θ={theta}")]
    NonpositiveNu { theta: f64, alpha: f64 },
    #[error("quadratic fit failed: {0}")]
    FitFailure(&'static str),
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// `ζ₃ dx/x² + ζ′·dy/x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringCovector {
    pub zeta3: f64,
    pub zeta_y: [f64; 2],
}

impl ScatteringCovector {
    pub const fn new(zeta3: f64, zeta_y: [f64; 2]) -> Self {
        ScatteringCovector { zeta3, zeta_y }
    }

    /// Components `(ζ₃, ζ′₁, ζ′₂)` as a vector.
    pub fn as_vec(&self) -> Vec3 {
        Vec3([self.zeta3, self.zeta_y[0], self.zeta_y[1]])
    }

    pub fn from_vec(v: Vec3) -> Self {
        ScatteringCovector { zeta3: v[0], zeta_y: [v[1], v[2]] }
    }

    pub fn norm(&self) -> f64 {
        self.as_vec().norm()
    }

    pub fn tangential_norm(&self) -> f64 {
        self.zeta_y[0].hypot(self.zeta_y[1])
    }

    /// Angle in degrees to the line spanned by `other`.
    pub fn line_angle_deg(&self, other: &ScatteringCovector) -> f64 {
        let (a, b) = (self.as_vec(), other.as_vec());
        let c = (a.dot(b).abs() / (a.norm() * b.norm())).min(1.0);
        c.acos().to_degrees()
    }
}

/// Shape of the even cutoff `χ` on `[−Λ, Λ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffShape {
    /// `exp(1 − 1/(1 − u²))`.
    Bump,
    /// `exp(1 − 1/(1 − u⁴))`, flatter near the centre.
    FlatBump,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub shape: CutoffShape,
    /// Support half-width `Λ`.
    pub half_width: f64,
    /// Conjugation weight `ϝ`.
    pub digamma: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff { shape: CutoffShape::Bump, half_width: 0.5, digamma: 1.0 }
    }
}

impl Cutoff {
    pub fn validate(&self) -> Result<(), SymbolError> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(SymbolError::InvalidCutoff("half width must be positive"));
        }
        if !(self.digamma > 0.0 && self.digamma.is_finite()) {
            return Err(SymbolError::InvalidCutoff("conjugation weight must be positive"));
        }
        Ok(())
    }

    /// `χ(λ̂)`; one at the origin, zero outside `(−Λ, Λ)`.
    pub fn chi(&self, lambda_hat: f64) -> f64 {
        let u = lambda_hat / self.half_width;
        let t = match self.shape {
            CutoffShape::Bump => u * u,
            CutoffShape::FlatBump => u * u * u * u,
        };
        if t >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - t)).exp()
        }
    }
}

/// Linear frame at `z` adapted to the convex foliation `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub z: Vec3,
    /// Foliation value at `z` (zero on the artificial boundary).
    pub x: f64,
    /// `∂ₓ`: the vector with `dx(∂ₓ) = 1` normal to the level set.
    pub dx_vec: Vec3,
    /// Orthonormal basis `∂_{y₁}, ∂_{y₂}` of the level set's tangent plane.
    pub e1: Vec3,
    pub e2: Vec3,
}

impl LocalFrame {
    pub fn new(foliation: &ScalarField, z: Vec3) -> Result<Self, SymbolError> {
        let g = foliation.gradient(z);
        let gn = g.norm();
        let n = g.normalized().ok_or(SymbolError::DegenerateFoliation { x: z })?;
        let helper = if n[0].abs() < 0.9 { Vec3::axis(0) } else { Vec3::axis(1) };
        let e1 = (helper - n * helper.dot(n)).normalized().ok_or(SymbolError::DegenerateFoliation { x: z })?;
        let e2 = n.cross(e1);
        Ok(LocalFrame { z, x: foliation.value(z), dx_vec: n * (1.0 / gn), e1, e2 })
    }

    /// `ω(θ) = (cos θ, sin θ)`.
    pub fn omega(theta: f64) -> [f64; 2] {
        [theta.cos(), theta.sin()]
    }

    /// The tangent vector `x λ̂ ∂ₓ + ω·∂_y`.
    pub fn tangent(&self, lambda_hat: f64, omega: [f64; 2]) -> Vec3 {
        self.dx_vec * (self.x * lambda_hat) + self.e1 * omega[0] + self.e2 * omega[1]
    }

    /// Unit scattering covector along the span of the one-form `w`, i.e.
    /// `(x·w(∂ₓ), w(∂_y))` normalized.
    pub fn covector_direction(&self, w: Vec3) -> Option<ScatteringCovector> {
        let v = Vec3([self.x * w.dot(self.dx_vec), w.dot(self.e1), w.dot(self.e2)]);
        v.normalized().map(ScatteringCovector::from_vec)
    }
}

/// Which variables parameterize the critical set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    /// `ω ∈ S¹` free, `λ̂ = −ζ′·ω/ζ₃`.
    Omega,
    /// `λ̂` free, `ω` one of the two roots of `ζ′·ω = −ζ₃λ̂`.
    Lambda,
}

/// A quadrature node on the critical set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub lambda_hat: f64,
    pub theta: f64,
    /// Quadrature weight times the stationary-phase density.
    pub weight: f64,
    /// Root index in the [`Chart::Lambda`] parameterization (0 or 1).
    pub root: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSet {
    pub chart: Chart,
    pub points: Vec<CriticalPoint>,
}

/// Nodes of the critical set `{ζ₃λ̂ + ζ′·ω = 0, |λ̂| < Λ}`.
///
/// The density is `ds / |det ∂²Φ|^{1/2}` for the phase
/// `(ζ₃ + iϝ)(λ̂t̂ + αt̂²) + ζ′·ω t̂` in the two normal variables; it does not
/// depend on `α`. `n` is the node count on the circle (Omega chart) or
/// twice the `λ̂` node count (Lambda chart).
pub fn critical_set(zeta: &ScatteringCovector, cutoff: &Cutoff, n: usize) -> Result<CriticalSet, SymbolError> {
    let zt = zeta.tangential_norm();
    let z3 = zeta.zeta3;
    if zeta.norm() == 0.0 || !zeta.norm().is_finite() {
        return Err(SymbolError::ZeroCovector);
    }
    let lam = cutoff.half_width;
    let dg2 = cutoff.digamma * cutoff.digamma;
    let density = |q: f64| {
        let r = z3 * z3 + q * q;
        r / (r * r + dg2 * z3 * z3).sqrt()
    };
    let theta0 = zeta.zeta_y[1].atan2(zeta.zeta_y[0]);
    let mut points = Vec::new();
    if zt > 2.0 * lam * z3.abs() {
        let panels = (n / 16).max(1);
        let gl = GaussLegendre::new(8);
        let h = 2.0 * lam / panels as f64;
        for p in 0..panels {
            let a = -lam + h * p as f64;
            for (l, w) in gl.on_interval(a, a + h) {
                let c = -z3 * l / zt;
                let s = (1.0 - c * c).sqrt();
                let q = zt * s;
                let d = density(q) / q;
                let phi = c.acos();
                for (root, th) in [theta0 + phi, theta0 - phi].into_iter().enumerate() {
                    points.push(CriticalPoint { lambda_hat: l, theta: th, weight: w * d, root });
                }
            }
        }
        Ok(CriticalSet { chart: Chart::Lambda, points })
    } else {
        let h = 2.0 * PI / n as f64;
        for k in 0..n {
            let th = h * k as f64;
            let om = LocalFrame::omega(th);
            let l = -(zeta.zeta_y[0] * om[0] + zeta.zeta_y[1] * om[1]) / z3;
            if l.abs() >= lam {
                continue;
            }
            let q = -zeta.zeta_y[0] * om[1] + zeta.zeta_y[1] * om[0];
            points.push(CriticalPoint { lambda_hat: l, theta: th, weight: h * density(q) / z3.abs(), root: 0 });
        }
        Ok(CriticalSet { chart: Chart::Omega, points })
    }
}

/// Covector over `v` on the branch reached from `seed`, falling back to the
/// isotropic guess `G0·v` and then to the multi-start stencil.
pub fn covector_over(m: &MaterialField, wave: Wave, x: Vec3, v: Vec3, seed: Option<Vec3>) -> Result<Vec3, SymbolError> {
    if let Some(s) = seed {
        if let Ok(xi) = raytrace::invert_hamilton_map(m, wave, x, v, s) {
            return Ok(xi);
        }
    }
    if let Ok(xi) = raytrace::invert_hamilton_map(m, wave, x, v, m.g0.mul_vec(v)) {
        return Ok(xi);
    }
    raytrace::invert_all(m, wave, x, v).into_iter().next().ok_or(SymbolError::BranchFailure { v })
}

fn sens_array(m: &MaterialField, wave: Wave, pt: &PhasePoint) -> Result<[f64; 5], SymbolError> {
    let s = material::material_sensitivities(m, wave, pt)?;
    let mut out = [0.0; 5];
    for p in Param::ALL {
        out[p.index()] = s.get(p);
    }
    Ok(out)
}

/// `∂p/∂ν` for all parameters at `H_z⁻¹(xλ̂∂ₓ + ω·∂_y)`, plus the covector.
pub fn weights_at(
    m: &MaterialField,
    wave: Wave,
    frame: &LocalFrame,
    lambda_hat: f64,
    theta: f64,
    seed: Option<Vec3>,
) -> Result<([f64; 5], Vec3), SymbolError> {
    let v = frame.tangent(lambda_hat, LocalFrame::omega(theta));
    let xi = covector_over(m, wave, frame.z, v, seed)?;
    Ok((sens_array(m, wave, &PhasePoint::new(frame.z, xi))?, xi))
}

fn accumulate(set: &CriticalSet, cutoff: &Cutoff, mut w: impl FnMut(&CriticalPoint) -> Result<[f64; 5], SymbolError>) -> Result<[f64; 5], SymbolError> {
    let mut acc = [0.0; 5];
    for cp in &set.points {
        let chi = cutoff.chi(cp.lambda_hat);
        if chi == 0.0 {
            continue;
        }
        let s = w(cp)?;
        for l in 0..5 {
            acc[l] += cp.weight * chi * s[l];
        }
    }
    Ok(acc)
}

/// Default node count on critical sets and circles.
pub const CIRCLE_NODES: usize = 512;

/// Standard symbols for all five parameters by direct Hamilton-map inversion
/// at every critical node, indexed by [`Param::index`].
pub fn standard_symbol_all(
    m: &MaterialField,
    wave: Wave,
    frame: &LocalFrame,
    zeta: &ScatteringCovector,
    cutoff: &Cutoff,
    n: usize,
) -> Result<[f64; 5], SymbolError> {
    cutoff.validate()?;
    let set = critical_set(zeta, cutoff, n)?;
    let mut seeds: [Option<Vec3>; 2] = [None, None];
    accumulate(&set, cutoff, |cp| {
        let (s, xi) = weights_at(m, wave, frame, cp.lambda_hat, cp.theta, seeds[cp.root])?;
        seeds[cp.root] = Some(xi);
        Ok(s)
    })
}

/// Standard symbol for parameter `l`; see [`standard_symbol_all`].
pub fn standard_symbol(
    m: &MaterialField,
    wave: Wave,
    l: Param,
    frame: &LocalFrame,
    zeta: &ScatteringCovector,
    cutoff: &Cutoff,
) -> Result<f64, SymbolError> {
    Ok(standard_symbol_all(m, wave, frame, zeta, cutoff, CIRCLE_NODES)?[l.index()])
}

/// Weights tabulated on a `(λ̂, θ)` grid for fast symbol sweeps.
///
/// `λ̂` is uniform on `[−Λ, Λ]` (a single row on the artificial boundary,
/// where the tangent vector does not depend on `λ̂`), `θ` periodic.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub frame: LocalFrame,
    pub wave: Wave,
    pub half_width: f64,
    pub n_lambda: usize,
    pub n_theta: usize,
    values: Vec<[f64; 5]>,
}

impl WeightTable {
    pub fn build(
        m: &MaterialField,
        wave: Wave,
        frame: LocalFrame,
        half_width: f64,
        n_lambda: usize,
        n_theta: usize,
    ) -> Result<Self, SymbolError> {
        let n_lambda = if frame.x == 0.0 { 1 } else { n_lambda.max(4) };
        let mut values = Vec::with_capacity(n_lambda * n_theta);
        let mut row_seed = None;
        for i in 0..n_lambda {
            let l = Self::lambda_node(half_width, n_lambda, i);
            let mut seed = row_seed;
            for k in 0..n_theta {
                let th = 2.0 * PI * k as f64 / n_theta as f64;
                let (s, xi) = weights_at(m, wave, &frame, l, th, seed)?;
                if k == 0 {
                    row_seed = Some(xi);
                }
                seed = Some(xi);
                values.push(s);
            }
        }
        Ok(WeightTable { frame, wave, half_width, n_lambda, n_theta, values })
    }

    fn lambda_node(half_width: f64, n_lambda: usize, i: usize) -> f64 {
        if n_lambda == 1 {
            0.0
        } else {
            -half_width + 2.0 * half_width * i as f64 / (n_lambda - 1) as f64
        }
    }

    fn at(&self, i: usize, k: usize) -> &[f64; 5] {
        &self.values[i * self.n_theta + k % self.n_theta]
    }

    /// Catmull–Rom interpolation, periodic in `θ`, clamped in `λ̂`.
    pub fn interpolate(&self, lambda_hat: f64, theta: f64) -> [f64; 5] {
        let ht = 2.0 * PI / self.n_theta as f64;
        let tt = theta.rem_euclid(2.0 * PI) / ht;
        let k0 = tt.floor() as isize;
        let ft = tt - k0 as f64;
        let wt = catmull_rom(ft);
        let theta_row = |i: usize| {
            let mut out = [0.0; 5];
            for (j, w) in wt.iter().enumerate() {
                let k = (k0 - 1 + j as isize).rem_euclid(self.n_theta as isize) as usize;
                let v = self.at(i, k);
                for l in 0..5 {
                    out[l] += w * v[l];
                }
            }
            out
        };
        if self.n_lambda == 1 {
            return theta_row(0);
        }
        let hl = 2.0 * self.half_width / (self.n_lambda - 1) as f64;
        let tl = ((lambda_hat + self.half_width) / hl).clamp(0.0, (self.n_lambda - 1) as f64);
        let i0 = (tl.floor() as usize).min(self.n_lambda - 2);
        let fl = tl - i0 as f64;
        let wl = catmull_rom(fl);
        let mut out = [0.0; 5];
        for (j, w) in wl.iter().enumerate() {
            let i = (i0 as isize - 1 + j as isize).clamp(0, self.n_lambda as isize - 1) as usize;
            let r = theta_row(i);
            for l in 0..5 {
                out[l] += w * r[l];
            }
        }
        out
    }

    /// Standard symbols for all parameters from the table.
    pub fn standard_symbol(&self, zeta: &ScatteringCovector, cutoff: &Cutoff, n: usize) -> Result<[f64; 5], SymbolError> {
        let set = critical_set(zeta, cutoff, n)?;
        accumulate(&set, cutoff, |cp| Ok(self.interpolate(cp.lambda_hat, cp.theta)))
    }
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Boundary tangent directions with their covectors, ray curvatures and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCircle {
    pub frame: LocalFrame,
    pub wave: Wave,
    pub theta: Vec<f64>,
    pub xi: Vec<Vec3>,
    /// `α` in `x(γ(t)) = λt + αt² + …` for the ray tangent to the boundary.
    pub alpha: Vec<f64>,
    pub weights: Vec<[f64; 5]>,
}

/// Curvatures below this fraction of the squared ray speed count as zero.
pub const NU_FLOOR: f64 = 1e-8;

/// Step of the ray-curvature fit used for [`BoundaryCircle`].
pub const CURVATURE_DT: f64 = 5e-4;

impl BoundaryCircle {
    /// Sample `n` boundary directions `Ŷ` at a point of the artificial boundary.
    pub fn build(
        m: &MaterialField,
        wave: Wave,
        foliation: &ScalarField,
        frame: LocalFrame,
        n: usize,
        opts: &OdeOptions,
    ) -> Result<Self, SymbolError> {
        let mut out = BoundaryCircle { frame, wave, theta: Vec::new(), xi: Vec::new(), alpha: Vec::new(), weights: Vec::new() };
        let mut seed = None;
        for k in 0..n {
            let th = 2.0 * PI * k as f64 / n as f64;
            let (s, xi) = weights_at(m, wave, &frame, 0.0, th, seed)?;
            seed = Some(xi);
            let pt = PhasePoint::new(frame.z, xi);
            let (_, alpha) = raytrace::ray_curvature_fit(m, wave, foliation, &pt, CURVATURE_DT, opts)?;
            let speed_sq = raytrace::hamilton_map(m, wave, frame.z, xi)?.norm_sq();
            if !(alpha > NU_FLOOR * speed_sq) {
                return Err(SymbolError::NonpositiveNu { theta: th, alpha });
            }
            out.theta.push(th);
            out.xi.push(xi);
            out.alpha.push(alpha);
            out.weights.push(s);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Positive Gaussian weight of node `k` at finite `ζ`:
    /// `(ζ₃² + ϝ²)^{-1/2} ν^{-1/2} exp(−(Ŷ·ζ′)²/(2ν(ζ₃² + ϝ²)))` with `ν = α/ϝ`.
    pub fn gaussian_weight(&self, k: usize, zeta: &ScatteringCovector, digamma: f64) -> f64 {
        let r = zeta.zeta3 * zeta.zeta3 + digamma * digamma;
        let nu = self.alpha[k] / digamma;
        let om = LocalFrame::omega(self.theta[k]);
        let y = om[0] * zeta.zeta_y[0] + om[1] * zeta.zeta_y[1];
        (2.0 * PI / self.len() as f64) * (-y * y / (2.0 * nu * r)).exp() / (r * nu).sqrt()
    }

    /// Boundary symbols for all parameters at finite `ζ`.
    pub fn symbol(&self, zeta: &ScatteringCovector, digamma: f64) -> [f64; 5] {
        let mut acc = [0.0; 5];
        for k in 0..self.len() {
            let g = self.gaussian_weight(k, zeta, digamma);
            for l in 0..5 {
                acc[l] += g * self.weights[k][l];
            }
        }
        acc
    }
}

/// Boundary symbol of parameter `l` at a point of the artificial boundary.
#[allow(clippy::too_many_arguments)]
pub fn boundary_symbol_finite(
    m: &MaterialField,
    wave: Wave,
    l: Param,
    foliation: &ScalarField,
    point: Vec3,
    zeta: &ScatteringCovector,
    digamma: f64,
    opts: &OdeOptions,
) -> Result<f64, SymbolError> {
    if !(digamma > 0.0) {
        return Err(SymbolError::InvalidCutoff("conjugation weight must be positive"));
    }
    let frame = LocalFrame::new(foliation, point)?;
    let circle = BoundaryCircle::build(m, wave, foliation, frame, CIRCLE_NODES, opts)?;
    Ok(circle.symbol(zeta, digamma)[l.index()])
}

/// `n` nearly uniform unit scattering covectors (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<ScatteringCovector> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            ScatteringCovector::new(z, [r * phi.cos(), r * phi.sin()])
        })
        .collect()
}

/// Lattice size with mean spacing of about one degree.
pub const ONE_DEGREE_GRID: usize = 41_253;

#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyReport {
    pub grid_max: f64,
    pub tol: f64,
    /// Grid indices with `|value| < tol · grid_max`.
    pub degenerate: Vec<usize>,
    /// Direction the degeneracy should concentrate on, if any.
    pub expected: Option<ScatteringCovector>,
    /// Largest angle (degrees) from `±expected` over the degenerate list.
    pub max_angle_deg: f64,
    /// Smallest `|value| / grid_max` outside the allowed radius.
    pub margin: f64,
    /// Values whose sign differs from the dominant sign by more than the tolerance.
    pub sign_violations: usize,
    pub pass: bool,
}

/// Locate sub-tolerance symbol values on a direction grid.
///
/// Passes iff every degenerate direction lies within `radius_deg` of
/// `±expected` (an empty list when `expected` is `None`) and the values
/// carry a single sign.
pub fn degeneracy_scan(
    grid: &[ScatteringCovector],
    values: &[f64],
    expected: Option<ScatteringCovector>,
    tol: f64,
    radius_deg: f64,
) -> DegeneracyReport {
    let grid_max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let pos = values.iter().filter(|v| **v > 0.0).count();
    let sign = if 2 * pos >= values.len() { 1.0 } else { -1.0 };
    let mut rep = DegeneracyReport {
        grid_max,
        tol,
        degenerate: Vec::new(),
        expected,
        max_angle_deg: 0.0,
        margin: f64::INFINITY,
        sign_violations: 0,
        pass: true,
    };
    for (k, (z, v)) in grid.iter().zip(values).enumerate() {
        let rel = if grid_max > 0.0 { v.abs() / grid_max } else { 0.0 };
        let angle = expected.map(|e| z.line_angle_deg(&e));
        if sign * v < -tol * grid_max {
            rep.sign_violations += 1;
        }
        if rel < tol {
            rep.degenerate.push(k);
            rep.max_angle_deg = rep.max_angle_deg.max(angle.unwrap_or(180.0));
        }
        if angle.is_none_or(|a| a > radius_deg) {
            rep.margin = rep.margin.min(rel);
        }
    }
    rep.pass = rep.sign_violations == 0 && grid_max > 0.0 && match expected {
        None => rep.degenerate.is_empty(),
        Some(_) => rep.max_angle_deg <= radius_deg,
    };
    rep
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFit {
    pub exponent: f64,
    pub coefficient: f64,
    /// Largest residual of the log-log line fit.
    pub residual: f64,
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
}

/// Largest log-residual accepted by [`quadratic_fit`].
pub const FIT_RESIDUAL_MAX: f64 = 0.05;

/// The ladder `ε = 2^{-k}` for `k` in `from..=to`.
pub fn eps_ladder(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 2f64.powi(-k)).collect()
}

/// Fit `|σ(ζ_ε)| ≈ c ε^q` along `ζ_ε = base + ε ν̂`, with `ν̂` the part of
/// `transversal` orthogonal to `base`, normalized.
pub fn quadratic_fit(
    mut symbol: impl FnMut(&ScatteringCovector) -> Result<f64, SymbolError>,
    base: ScatteringCovector,
    transversal: Vec3,
    ladder: &[f64],
) -> Result<QuadraticFit, SymbolError> {
    let b = base.as_vec().normalized().ok_or(SymbolError::ZeroCovector)?;
    let t = transversal - b * transversal.dot(b);
    if t.norm() < 1e-6 * transversal.norm().max(1e-300) {
        return Err(SymbolError::FitFailure("direction is not transversal"));
    }
    let nu = t * (1.0 / t.norm());
    let mut values = Vec::with_capacity(ladder.len());
    for &e in ladder {
        values.push(symbol(&ScatteringCovector::from_vec(b + nu * e))?);
    }
    if values.iter().any(|v| !(v.abs() > 0.0) || !v.is_finite()) {
        return Err(SymbolError::FitFailure("symbol vanishes on the ladder"));
    }
    let xs: Vec<f64> = ladder.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let (a, q, residual) = fit_line(&xs, &ys).ok_or(SymbolError::FitFailure("degenerate ladder"))?;
    if residual > FIT_RESIDUAL_MAX {
        return Err(SymbolError::FitFailure("log-log residual too large"));
    }
    Ok(QuadraticFit { exponent: q, coefficient: a.exp(), residual, eps: ladder.to_vec(), values })
}

/// A column of the two-parameter sensitivity matrix: `Σ_k c_k ∂p/∂ν_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityColumn(pub [f64; 5]);

impl SensitivityColumn {
    pub fn param(p: Param) -> Self {
        let mut c = [0.0; 5];
        c[p.index()] = 1.0;
        SensitivityColumn(c)
    }

    /// `∂p/∂a11 + φ′ ∂p/∂a33` for `a33 = φ(a11)`.
    pub fn a11_with_a33_slope(phi_prime: f64) -> Self {
        let mut c = [0.0; 5];
        c[Param::A11.index()] = 1.0;
        c[Param::A33.index()] = phi_prime;
        SensitivityColumn(c)
    }

    pub fn apply(&self, w: &[f64; 5]) -> f64 {
        self.0.iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixSymbol {
    pub matrix: [[f64; 2]; 2],
    pub min_sym_eigenvalue: f64,
    /// Circle nodes where the 2×2 sensitivity matrix is numerically singular.
    pub rank_deficient_nodes: usize,
    /// Singular at every node.
    pub rank_deficient: bool,
}

/// `∫ C S` over the boundary circle with `C = Sᵀ`, rows of `S` from the qP
/// and qSV circles (same frame and node count), columns `μ1`, `μ2`.
pub fn two_param_matrix_symbol(
    qp: &BoundaryCircle,
    qsv: &BoundaryCircle,
    mu1: SensitivityColumn,
    mu2: SensitivityColumn,
    zeta: &ScatteringCovector,
    digamma: f64,
    rank_tol: f64,
) -> MatrixSymbol {
    let n = qp.len().min(qsv.len());
    let mut m = [[0.0; 2]; 2];
    let mut deficient = 0;
    for k in 0..n {
        let s = [
            [mu1.apply(&qp.weights[k]), mu2.apply(&qp.weights[k])],
            [mu1.apply(&qsv.weights[k]), mu2.apply(&qsv.weights[k])],
        ];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let scale = s.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        if det.abs() <= rank_tol * scale * scale {
            deficient += 1;
        }
        let g = [qp.gaussian_weight(k, zeta, digamma), qsv.gaussian_weight(k, zeta, digamma)];
        for i in 0..2 {
            for j in 0..2 {
                // (SᵀGS)_{ij} = Σ_w S_{wi} g_w S_{wj}
                m[i][j] += s[0][i] * g[0] * s[0][j] + s[1][i] * g[1] * s[1][j];
            }
        }
    }
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let min_eig = 0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt();
    MatrixSymbol { matrix: m, min_sym_eigenvalue: min_eig, rank_deficient_nodes: deficient, rank_deficient: n > 0 && deficient == n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Box3;
    use crate::material::ElasticParams;

    const M0: ElasticParams = ElasticParams::new(14.0, 2.0, 12.0, 4.0, 5.0);

    fn foliation() -> ScalarField {
        ScalarField::Radial { center: Vec3::new(0.0, 0.0, -5.0), sign: 1.0, offset: -5.0 }
    }

    fn medium(axis: Vec3) -> MaterialField {
        let d = Box3::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        MaterialField::homogeneous(d, M0, axis)
    }

    fn tilted() -> MaterialField {
        medium(Vec3::new(0.6, 0.2, 1.0))
    }

    #[test]
    fn critical_set_examples() {
        let c = Cutoff::default();
        let s = critical_set(&ScatteringCovector::new(0.0, [1.0, 0.0]), &c, 64).unwrap();
        assert_eq!(s.chart, Chart::Lambda);
        for p in &s.points {
            assert!(p.theta.cos().abs() < 1e-14 && p.lambda_hat.abs() < 0.5);
        }
        let s = critical_set(&ScatteringCovector::new(1.0, [0.0, 0.0]), &c, 64).unwrap();
        assert_eq!(s.chart, Chart::Omega);
        assert_eq!(s.points.len(), 64);
        assert!(s.points.iter().all(|p| p.lambda_hat == 0.0));
        let s = critical_set(&ScatteringCovector::new(1.0, [1.0, 0.0]), &c, 360).unwrap();
        for p in &s.points {
            assert!((p.lambda_hat + p.theta.cos()).abs() < 1e-14 && p.theta.cos().abs() < 0.5);
        }
        assert_eq!(critical_set(&ScatteringCovector::new(0.0, [0.0, 0.0]), &c, 8), Err(SymbolError::ZeroCovector));
    }

    #[test]
    fn density_integrates_the_delta_measure() {
        // ∫∫ δ(ζ₃λ̂ + ζ′·ω) dλ̂ dθ over |λ̂| < Λ, checked against a brute-force
        // smoothing with ϝ = 0 and a constant integrand.
        let c = Cutoff { digamma: 1e-12, half_width: 0.5, shape: CutoffShape::Bump };
        let flat = |z: ScatteringCovector| {
            let set = critical_set(&z, &c, 4096).unwrap();
            set.points.iter().map(|p| p.weight).sum::<f64>()
        };
        for z in [ScatteringCovector::new(0.3, [1.0, 0.2]), ScatteringCovector::new(1.0, [0.2, 0.1])] {
            let eps = 1e-3;
            let gl = GaussLegendre::new(16);
            let mut brute = 0.0;
            for i in 0..2000 {
                let th = 2.0 * PI * (i as f64 + 0.5) / 2000.0;
                let g0 = z.zeta_y[0] * th.cos() + z.zeta_y[1] * th.sin();
                // integrate a narrow Gaussian in λ̂ analytically over the support
                let l0 = -g0 / z.zeta3;
                let s = eps / z.zeta3.abs();
                if l0.abs() < 0.5 - 6.0 * s {
                    brute += 2.0 * PI / 2000.0 / z.zeta3.abs();
                } else if l0.abs() < 0.5 + 6.0 * s {
                    let part = gl.integrate(-0.5, 0.5, |l| (-(l - l0).powi(2) / (2.0 * s * s)).exp()) / (s * (2.0 * PI).sqrt());
                    brute += 2.0 * PI / 2000.0 / z.zeta3.abs() * part;
                }
            }
            assert!((flat(z) - brute).abs() < 2e-2 * brute, "{z:?} {} {brute}", flat(z));
        }
    }

    #[test]
    fn cutoffs_are_admissible() {
        for shape in [CutoffShape::Bump, CutoffShape::FlatBump] {
            let c = Cutoff { shape, ..Cutoff::default() };
            assert_eq!(c.chi(0.0), 1.0);
            assert_eq!(c.chi(0.5), 0.0);
            assert_eq!(c.chi(0.2), c.chi(-0.2));
            assert!(c.chi(0.49) > 0.0);
        }
        assert!(Cutoff { digamma: 0.0, ..Cutoff::default() }.validate().is_err());
    }

    #[test]
    fn a11_qp_is_positive_and_e2_negative() {
        let m = tilted();
        let frame = LocalFrame::new(&foliation(), Vec3::new(0.1, 0.0, 0.05)).unwrap();
        assert!(frame.x > 0.0);
        for z in fibonacci_sphere(40) {
            let s = standard_symbol_all(&m, Wave::QP, &frame, &z, &Cutoff::default(), 256).unwrap();
            assert!(s[Param::A11.index()] > 0.0, "{z:?}");
            assert!(s[Param::E2.index()] <= 0.0, "{z:?}");
        }
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let m = tilted();
        let c = Cutoff::default();
        for z0 in [Vec3::new(0.1, 0.0, 0.05), Vec3::ZERO] {
            let frame = LocalFrame::new(&foliation(), z0).unwrap();
            let table = WeightTable::build(&m, Wave::QSV, frame, c.half_width, 33, 256).unwrap();
            for z in fibonacci_sphere(25) {
                let d = standard_symbol_all(&m, Wave::QSV, &frame, &z, &c, 512).unwrap();
                let t = table.standard_symbol(&z, &c, 512).unwrap();
                let scale = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                for l in 0..5 {
                    assert!((d[l] - t[l]).abs() < 1e-6 * scale, "{z:?} {l} {} {}", d[l], t[l]);
                }
            }
        }
    }

    #[test]
    fn a33_vanishes_along_df() {
        let m = tilted();
        for z0 in [Vec3::new(0.1, 0.0, 0.05), Vec3::ZERO] {
            let frame = LocalFrame::new(&foliation(), z0).unwrap();
            let df = m.layer.gradient(z0);
            let zdf = frame.covector_direction(df).unwrap();
            let s = standard_symbol_all(&m, Wave::QP, &frame, &zdf, &Cutoff::default(), 512).unwrap();
            let off = standard_symbol_all(&m, Wave::QP, &frame, &ScatteringCovector::new(0.3, [0.5, 0.8]), &Cutoff::default(), 512).unwrap();
            for l in [Param::A33, Param::E2] {
                assert!(s[l.index()].abs() < 1e-10 * off[l.index()].abs(), "{l} {:?} {:?}", s, off);
            }
            assert!(s[Param::A11.index()] > 0.0);
        }
    }

    #[test]
    fn quadratic_vanishing_exponent() {
        let m = tilted();
        let frame = LocalFrame::new(&foliation(), Vec3::new(0.1, 0.0, 0.05)).unwrap();
        let zdf = frame.covector_direction(m.layer.gradient(frame.z)).unwrap();
        let c = Cutoff::default();
        // qSV's a33 weight is −2E²|ξ̃′|²ξ̃₃⁴/D² + O(ξ̃₃⁶), hence quartic
        for (wave, l, q) in [(Wave::QP, Param::E2, 2.0), (Wave::QP, Param::A33, 2.0), (Wave::QSV, Param::E2, 2.0), (Wave::QSV, Param::A33, 4.0)] {
            let fit = quadratic_fit(
                |z| Ok(standard_symbol_all(&m, wave, &frame, z, &c, 512)?[l.index()]),
                zdf,
                Vec3::new(0.2, 1.0, -0.4),
                &eps_ladder(4, 9),
            )
            .unwrap();
            assert!((fit.exponent - q).abs() < 0.1 && fit.coefficient > 0.0, "{wave} {l} {fit:?}");
        }
        let err = quadratic_fit(|_| Ok(1.0), zdf, zdf.as_vec() * 2.0, &eps_ladder(4, 9));
        assert!(matches!(err, Err(SymbolError::FitFailure(_))));
    }

    #[test]
    fn boundary_symbol_signs() {
        let m = tilted();
        let f = foliation();
        let frame = LocalFrame::new(&f, Vec3::ZERO).unwrap();
        let opts = OdeOptions::default();
        let qp = BoundaryCircle::build(&m, Wave::QP, &f, frame, 128, &opts).unwrap();
        // straight rays tangent to a sphere of radius 5 at unit speed... up to the ray speed
        for k in 0..qp.len() {
            let v = raytrace::hamilton_map(&m, Wave::QP, frame.z, qp.xi[k]).unwrap();
            assert!((qp.alpha[k] - v.norm_sq() / 10.0).abs() < 1e-6, "{} {}", qp.alpha[k], v.norm_sq() / 10.0);
        }
        for z in fibonacci_sphere(50) {
            for dg in [0.5, 1.0, 2.0, 4.0] {
                let s = qp.symbol(&z, dg);
                assert!(s[Param::A11.index()] > 0.0 && s[Param::A33.index()] > 0.0 && s[Param::E2.index()] < 0.0);
            }
        }
    }

    #[test]
    fn normal_axis_degenerates_a33_on_the_boundary() {
        let m = medium(Vec3::new(0.0, 0.0, 1.0));
        let f = foliation();
        let frame = LocalFrame::new(&f, Vec3::ZERO).unwrap();
        let qp = BoundaryCircle::build(&m, Wave::QP, &f, frame, 64, &OdeOptions::default()).unwrap();
        let s = qp.symbol(&ScatteringCovector::new(0.4, [0.3, 0.2]), 1.0);
        assert!(s[Param::A33.index()].abs() < 1e-12 * s[Param::A11.index()]);
    }

    #[test]
    fn flat_foliation_has_no_boundary_curvature() {
        let m = tilted();
        let f = ScalarField::Linear { coef: Vec3::new(0.0, 0.0, 1.0), offset: 0.0 };
        let frame = LocalFrame::new(&f, Vec3::ZERO).unwrap();
        let err = BoundaryCircle::build(&m, Wave::QP, &f, frame, 8, &OdeOptions::default());
        assert!(matches!(err, Err(SymbolError::NonpositiveNu { .. })), "{err:?}");
    }

    #[test]
    fn degeneracy_scan_localizes() {
        let grid = fibonacci_sphere(2000);
        let e = ScatteringCovector::new(0.0, [1.0, 0.0]);
        let vals: Vec<f64> = grid.iter().map(|z| z.line_angle_deg(&e).to_radians().sin().powi(2)).collect();
        let rep = degeneracy_scan(&grid, &vals, Some(e), 1e-3, 3.0);
        assert!(rep.pass && !rep.degenerate.is_empty() && rep.max_angle_deg < 3.0, "{rep:?}");
        let rep = degeneracy_scan(&grid, &vals, None, 1e-3, 3.0);
        assert!(!rep.pass);
        let mut bad = vals.clone();
        bad[7] = -0.5;
        assert_eq!(degeneracy_scan(&grid, &bad, Some(e), 1e-3, 3.0).sign_violations, 1);
    }

    #[test]
    fn fibonacci_grid_is_unit_and_spread() {
        let g = fibonacci_sphere(1000);
        assert!(g.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let mean: Vec3 = g.iter().fold(Vec3::ZERO, |a, z| a + z.as_vec()) * (1.0 / 1000.0);
        assert!(mean.norm() < 1e-3);
    }

    #[test]
    fn matrix_symbol_rank() {
        let m = tilted();
        let f = foliation();
        let frame = LocalFrame::new(&f, Vec3::ZERO).unwrap();
        let opts = OdeOptions::default();
        let qp = BoundaryCircle::build(&m, Wave::QP, &f, frame, 128, &opts).unwrap();
        let qsv = BoundaryCircle::build(&m, Wave::QSV, &f, frame, 128, &opts).unwrap();
        let z = ScatteringCovector::new(0.5, [0.2, -0.6]);
        let e2 = SensitivityColumn::param(Param::E2);
        let ms = two_param_matrix_symbol(&qp, &qsv, e2, SensitivityColumn::param(Param::A11), &z, 1.0, 1e-10);
        assert!(ms.min_sym_eigenvalue > 0.0 && !ms.rank_deficient, "{ms:?}");
        let ms = two_param_matrix_symbol(&qp, &qsv, e2, SensitivityColumn::a11_with_a33_slope(0.5), &z, 1.0, 1e-10);
        assert!(ms.min_sym_eigenvalue > 0.0 && !ms.rank_deficient);
        // axis along the boundary normal: every boundary covector has ξ̃₃ = 0
        let n = medium(Vec3::new(0.0, 0.0, 1.0));
        let qp = BoundaryCircle::build(&n, Wave::QP, &f, frame, 32, &opts).unwrap();
        let qsv = BoundaryCircle::build(&n, Wave::QSV, &f, frame, 32, &opts).unwrap();
        let ms = two_param_matrix_symbol(&qp, &qsv, SensitivityColumn::param(Param::A11), SensitivityColumn::param(Param::A33), &z, 1.0, 1e-10);
        assert!(ms.rank_deficient, "{ms:?}");
    }
}
