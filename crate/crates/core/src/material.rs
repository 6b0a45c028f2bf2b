//! Pointwise transversely isotropic algebra.
//!
//! All moduli are stiffness over density (velocity squared). In a frame
//! orthonormal for the background metric with the third axis along the TI
//! axis, write `s = |ξ̃′|²` and `c = ξ̃₃²`. The three Hamiltonians are
//!
//! ```text
//! qSH:     p = a66·s + a55·c
//! qP/qSV:  p = (a11+a55)·s + (a33+a55)·c ± √(D² − 4E²·s·c),
//!          D = (a11−a55)·s + (a33−a55)·c,
//!          E² = (a11−a55)(a33−a55) − (a13+a55)²
//! ```
//!
//! Every quantity here is computed from the jet of `p` in `(s, c)`; the
//! ambient-coordinate derivatives follow by the chain rule through the axis
//! field `m(x) = G0⁻¹∇f / |∇f|_{G0}`.


#[allow(unused_imports)]
use num_traits::Float;
use crate::field::{Box3, ScalarField};
use crate::linalg::{Mat3, Vec3};

/// Relative floor below which the qP/qSV discriminant counts as a branch point.
pub const DISCRIMINANT_FLOOR: f64 = 1e-12;
/// Gradient magnitude below which the axis is undefined.
pub const ZERO_GRADIENT_TOL: f64 = 1e-12;

/// The five TI moduli at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticParams {
    pub a11: f64,
    pub a13: f64,
    pub a33: f64,
    pub a55: f64,
    pub a66: f64,
}

impl ElasticParams {
    pub const fn new(a11: f64, a13: f64, a33: f64, a55: f64, a66: f64) -> Self {
        ElasticParams { a11, a13, a33, a55, a66 }
    }

    /// Isotropic medium with Lamé parameters over density.
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        ElasticParams::new(lambda + 2.0 * mu, lambda, lambda + 2.0 * mu, mu, mu)
    }

    pub fn e_squared(&self) -> f64 {
        e_squared(self)
    }

    pub fn is_admissible(&self) -> bool {
        check_admissible(self)
    }

    pub fn moduli(&self) -> TiModuli {
        TiModuli { a11: self.a11, a33: self.a33, a55: self.a55, a66: self.a66, e2: self.e_squared() }
    }
}

/// Positivity, `max(a55, a66) < min(a11, a33)` and `a11 > a55`.
pub fn check_admissible(p: &ElasticParams) -> bool {
    p.moduli().is_admissible()
}

/// Anellipticity `(a11−a55)(a33−a55) − (a13+a55)²`; may be negative.
pub fn e_squared(p: &ElasticParams) -> f64 {
    (p.a11 - p.a55) * (p.a33 - p.a55) - (p.a13 + p.a55).powi(2)
}

/// Parameterization used by the Hamiltonians: `a13` is replaced by `E²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiModuli {
    pub a11: f64,
    pub a33: f64,
    pub a55: f64,
    pub a66: f64,
    pub e2: f64,
}

impl TiModuli {
    pub fn is_admissible(&self) -> bool {
        let all = [self.a11, self.a33, self.a55, self.a66];
        all.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.e2.is_finite()
            && self.a55.max(self.a66) < self.a11.min(self.a33)
            && self.a11 > self.a55
    }

    /// Recover `a13` taking the root with `a13 + a55 ≥ 0`; `None` when
    /// `E²` exceeds `(a11−a55)(a33−a55)`.
    pub fn a13(&self) -> Option<f64> {
        let r = (self.a11 - self.a55) * (self.a33 - self.a55) - self.e2;
        (r >= 0.0).then(|| r.sqrt() - self.a55)
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::E2 => self.e2,
            Param::A11 => self.a11,
            Param::A33 => self.a33,
            Param::A55 => self.a55,
            Param::A66 => self.a66,
        }
    }

    pub fn set(&mut self, p: Param, v: f64) {
        match p {
            Param::E2 => self.e2 = v,
            Param::A11 => self.a11 = v,
            Param::A33 => self.a33 = v,
            Param::A55 => self.a55 = v,
            Param::A66 => self.a66 = v,
        }
    }

    /// `s·self + (1−s)·other` componentwise.
    pub fn lerp(&self, other: &TiModuli, s: f64) -> TiModuli {
        let mut out = *other;
        for p in Param::ALL {
            out.set(p, s * self.get(p) + (1.0 - s) * other.get(p));
        }
        out
    }

    /// `p(s, c)` for a wave; see the module docs.
    pub fn hamiltonian(&self, wave: Wave, perp_sq: f64, axial_sq: f64) -> Result<f64, JetError> {
        Ok(jet(self, wave, perp_sq, axial_sq, Order::Value)?.p)
    }

    /// `(∂p/∂E², ∂p/∂a11, ∂p/∂a33)` at `(s, c)`.
    pub fn sensitivities(&self, wave: Wave, perp_sq: f64, axial_sq: f64) -> Result<Sensitivities, JetError> {
        let j = jet(self, wave, perp_sq, axial_sq, Order::First)?;
        Ok(Sensitivities::from_array(j.dparam))
    }
}

/// Wave family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Wave {
    QP,
    QSV,
    QSH,
}

impl Wave {
    pub const ALL: [Wave; 3] = [Wave::QP, Wave::QSV, Wave::QSH];

    pub fn name(self) -> &'static str {
        match self {
            Wave::QP => "qP",
            Wave::QSV => "qSV",
            Wave::QSH => "qSH",
        }
    }

    fn sign(self) -> f64 {
        match self {
            Wave::QP => 1.0,
            Wave::QSV => -1.0,
            Wave::QSH => 0.0,
        }
    }
}

impl core::fmt::Display for Wave {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Material parameter in the Hamiltonian parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    E2,
    A11,
    A33,
    A55,
    A66,
}

impl Param {
    pub const ALL: [Param; 5] = [Param::E2, Param::A11, Param::A33, Param::A55, Param::A66];
    /// Parameters left undetermined by qSH data.
    pub const ACTIVE: [Param; 3] = [Param::E2, Param::A11, Param::A33];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::E2 => "E2",
            Param::A11 => "a11",
            Param::A33 => "a33",
            Param::A55 => "a55",
            Param::A66 => "a66",
        }
    }
}

impl core::fmt::Display for Param {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Partial derivatives of a Hamiltonian with respect to the active parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sensitivities {
    pub de2: f64,
    pub da11: f64,
    pub da33: f64,
    pub da55: f64,
    pub da66: f64,
}

impl Sensitivities {
    fn from_array(a: [f64; 5]) -> Self {
        Sensitivities { de2: a[0], da11: a[1], da33: a[2], da55: a[3], da66: a[4] }
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::E2 => self.de2,
            Param::A11 => self.da11,
            Param::A33 => self.da33,
            Param::A55 => self.da55,
            Param::A66 => self.da66,
        }
    }
}

/// A point of phase space: position and covector (ambient components).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhasePoint {
    pub x: Vec3,
    pub xi: Vec3,
}

impl PhasePoint {
    pub fn new(x: Vec3, xi: Vec3) -> Self {
        PhasePoint { x, xi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum MaterialError {
    #[error("layer-function gradient vanishes at {x:?}")]
    ZeroGradient { x: Vec3 },
    #[error("negative discriminant {disc:e} at x={x:?}, xi={xi:?}: parameters outside validity")]
    NegativeDiscriminant { x: Vec3, xi: Vec3, disc: f64 },
    #[error("discriminant {disc:e} below branch-point floor at x={x:?}, xi={xi:?}")]
    DiscriminantTooSmall { x: Vec3, xi: Vec3, disc: f64 },
    #[error("inadmissible parameters at {x:?}")]
    Inadmissible { x: Vec3 },
}

/// Failure of the `(s, c)` jet, without positional context.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum JetError {
    #[error("negative discriminant {0:e}")]
    Negative(f64),
    #[error("discriminant {0:e} below branch-point floor")]
    TooSmall(f64),
}

impl JetError {
    fn at(self, pt: &PhasePoint) -> MaterialError {
        match self {
            JetError::Negative(disc) => MaterialError::NegativeDiscriminant { x: pt.x, xi: pt.xi, disc },
            JetError::TooSmall(disc) => MaterialError::DiscriminantTooSmall { x: pt.x, xi: pt.xi, disc },
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Order {
    Value,
    First,
    Second,
}

/// Derivatives of `p` in `(s, c)` and in the parameters.
#[derive(Debug, Clone, Copy, Default)]
struct Jet {
    p: f64,
    ps: f64,
    pc: f64,
    pss: f64,
    psc: f64,
    pcc: f64,
    dparam: [f64; 5],
}

fn jet(mo: &TiModuli, wave: Wave, s: f64, c: f64, order: Order) -> Result<Jet, JetError> {
    if wave == Wave::QSH {
        let mut dparam = [0.0; 5];
        dparam[Param::A55.index()] = c;
        dparam[Param::A66.index()] = s;
        return Ok(Jet { p: mo.a66 * s + mo.a55 * c, ps: mo.a66, pc: mo.a55, dparam, ..Jet::default() });
    }
    let sg = wave.sign();
    let d1 = mo.a11 - mo.a55;
    let d3 = mo.a33 - mo.a55;
    let dd = d1 * s + d3 * c;
    let disc = dd * dd - 4.0 * mo.e2 * s * c;
    if disc < 0.0 || !disc.is_finite() {
        return Err(JetError::Negative(disc));
    }
    let r = disc.sqrt();
    let base = (mo.a11 + mo.a55) * s + (mo.a33 + mo.a55) * c;
    let mut j = Jet { p: base + sg * r, ..Jet::default() };
    if order == Order::Value {
        return Ok(j);
    }
    let scale = (mo.a11 + mo.a33) * (s + c);
    if disc < DISCRIMINANT_FLOOR * scale * scale || r == 0.0 {
        return Err(JetError::TooSmall(disc));
    }
    let rs = (dd * d1 - 2.0 * mo.e2 * c) / r;
    let rc = (dd * d3 - 2.0 * mo.e2 * s) / r;
    j.ps = mo.a11 + mo.a55 + sg * rs;
    j.pc = mo.a33 + mo.a55 + sg * rc;
    let ratio = dd / r;
    j.dparam[Param::E2.index()] = -sg * 2.0 * s * c / r;
    j.dparam[Param::A11.index()] = s * (1.0 + sg * ratio);
    j.dparam[Param::A33.index()] = c * (1.0 + sg * ratio);
    j.dparam[Param::A55.index()] = (s + c) * (1.0 - sg * ratio);
    if order == Order::Second {
        j.pss = sg * (d1 * d1 - rs * rs) / r;
        j.pcc = sg * (d3 * d3 - rc * rc) / r;
        j.psc = sg * (d1 * d3 - 2.0 * mo.e2 - rs * rc) / r;
    }
    Ok(j)
}

/// Hessian in ξ of `p` given its `(s, c)` jet, for `s = ξᵀGξ − q²`, `q = m·ξ`.
/// `u = Gξ − q m`.
fn xi_hessian_from_jet(j: &Jet, g_inv: &Mat3, m: Vec3, u: Vec3, q: f64) -> Mat3 {
    let psq = 2.0 * q * j.psc;
    let pqq = 2.0 * j.pc + 4.0 * q * q * j.pcc;
    let grad_s = u * 2.0;
    let mut h = grad_s.outer(grad_s).scale(j.pss);
    h = h.add(&grad_s.outer(m).add(&m.outer(grad_s)).scale(psq));
    h = h.add(&m.outer(m).scale(pqq));
    h.add(&g_inv.sub(&m.outer(m)).scale(2.0 * j.ps))
}

/// Coupling between `a11, a33, a55` and the remaining degree of freedom.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    A13(ScalarField),
    E2(ScalarField),
}

/// Orthonormal frame adapted to the TI axis at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltFrame {
    /// `ẽ1, ẽ2, ẽ3` as vectors; `ẽ3` is the unit axis.
    pub e: [Vec3; 3],
}

impl TiltFrame {
    /// Tilted covector components `ξ̃_k = ξ(ẽ_k)`.
    pub fn covector_to_tilted(&self, xi: Vec3) -> Vec3 {
        Vec3([xi.dot(self.e[0]), xi.dot(self.e[1]), xi.dot(self.e[2])])
    }

    /// Inverse of [`TiltFrame::covector_to_tilted`].
    pub fn covector_from_tilted(&self, xt: Vec3) -> Vec3 {
        let e = Mat3::from_cols(self.e[0], self.e[1], self.e[2]);
        e.transpose()
            .solve(xt, 1e-14)
            .expect("tilt frame is non-degenerate by construction")
    }

    /// Ambient components of a vector given in the frame.
    pub fn vector_from_tilted(&self, vt: Vec3) -> Vec3 {
        self.e[0] * vt[0] + self.e[1] * vt[1] + self.e[2] * vt[2]
    }
}

/// Axis data at a point: `m = G0⁻¹∇f/N`, `N = |∇f|_{G0}`, and `∇²f`.
#[derive(Debug, Clone, Copy)]
struct AxisJet {
    m: Vec3,
    norm: f64,
    hess: Option<Mat3>,
}

/// TI parameter fields, layer function and background metric over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    pub domain: Box3,
    pub a11: ScalarField,
    pub a33: ScalarField,
    pub a55: ScalarField,
    pub a66: ScalarField,
    pub coupling: Coupling,
    /// Layer function `f`; the axis one-form is proportional to `df`.
    pub layer: ScalarField,
    /// Constant background metric `g0`.
    pub g0: Mat3,
    g0_inv: Mat3,
}

impl MaterialField {
    pub fn new(
        domain: Box3,
        a11: ScalarField,
        a33: ScalarField,
        a55: ScalarField,
        a66: ScalarField,
        coupling: Coupling,
        layer: ScalarField,
    ) -> Self {
        MaterialField {
            domain,
            a11,
            a33,
            a55,
            a66,
            coupling,
            layer,
            g0: Mat3::IDENTITY,
            g0_inv: Mat3::IDENTITY,
        }
    }

    /// Constant parameters with planar layers normal to `axis`.
    pub fn homogeneous(domain: Box3, params: ElasticParams, axis: Vec3) -> Self {
        MaterialField::new(
            domain,
            ScalarField::Constant(params.a11),
            ScalarField::Constant(params.a33),
            ScalarField::Constant(params.a55),
            ScalarField::Constant(params.a66),
            Coupling::A13(ScalarField::Constant(params.a13)),
            ScalarField::Linear { coef: axis, offset: 0.0 },
        )
    }

    /// Replace the background metric; `None` unless `g0` is symmetric positive definite.
    pub fn with_background_metric(mut self, g0: Mat3) -> Option<Self> {
        if g0.sub(&g0.transpose()).max_abs() > 1e-12 * g0.max_abs() {
            return None;
        }
        g0.cholesky()?;
        self.g0_inv = g0.inverse(1e-14)?;
        self.g0 = g0;
        Some(self)
    }

    pub fn g0_inv(&self) -> &Mat3 {
        &self.g0_inv
    }

    /// Add a perturbation to one parameter, expressed in the E² parameterization.
    ///
    /// Perturbing `a11`, `a33` or `a55` keeps `E²` fixed, so a medium given
    /// with an `a13` field is first converted to an `E²` field on the fly.
    pub fn perturbed(&self, param: Param, delta: ScalarField) -> MaterialField {
        let mut out = self.clone();
        if matches!(param, Param::A11 | Param::A33 | Param::A55 | Param::E2) {
            if let Coupling::A13(_) = &self.coupling {
                out.coupling = Coupling::E2(ScalarField::Grid(alloc::boxed::Box::new(self.e2_grid())));
            }
        }
        match param {
            Param::A11 => out.a11 = out.a11.clone().plus(delta),
            Param::A33 => out.a33 = out.a33.clone().plus(delta),
            Param::A55 => out.a55 = out.a55.clone().plus(delta),
            Param::A66 => out.a66 = out.a66.clone().plus(delta),
            Param::E2 => {
                if let Coupling::E2(f) = &out.coupling {
                    out.coupling = Coupling::E2(f.clone().plus(delta));
                }
            }
        }
        out
    }

    /// `E²` field sampled on a grid over the domain. Exact (no grid) when
    /// every input field is constant.
    fn e2_grid(&self) -> crate::field::Grid3 {
        let ext = self.domain.extent();
        let dims = [33usize, 33, 33];
        let spacing = Vec3([ext[0] / 32.0, ext[1] / 32.0, ext[2] / 32.0]);
        let sampler = |x: Vec3| self.moduli(x).e2;
        let mut values = alloc::vec::Vec::with_capacity(33 * 33 * 33);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let x = self.domain.min + Vec3([spacing[0] * i as f64, spacing[1] * j as f64, spacing[2] * k as f64]);
                    values.push(sampler(x));
                }
            }
        }
        crate::field::Grid3 { origin: self.domain.min, spacing, dims, values }
    }

    /// Constant E² parameterization of a constant medium, so perturbations stay analytic.
    pub fn with_e2_coupling(&self) -> Option<MaterialField> {
        match &self.coupling {
            Coupling::E2(_) => Some(self.clone()),
            Coupling::A13(a13) => {
                if [&self.a11, &self.a33, &self.a55, a13].iter().all(|f| f.is_constant()) {
                    let e2 = self.moduli(self.domain.center()).e2;
                    let mut out = self.clone();
                    out.coupling = Coupling::E2(ScalarField::Constant(e2));
                    Some(out)
                } else {
                    None
                }
            }
        }
    }

    /// Constant parameters and planar layers: rays are straight lines and
    /// covectors are conserved.
    pub fn is_homogeneous(&self) -> bool {
        let coupling = match &self.coupling {
            Coupling::A13(f) | Coupling::E2(f) => f,
        };
        [&self.a11, &self.a33, &self.a55, &self.a66, coupling].iter().all(|f| f.is_constant())
            && matches!(self.layer, ScalarField::Linear { .. })
    }

    pub fn moduli(&self, x: Vec3) -> TiModuli {
        let a11 = self.a11.value(x);
        let a33 = self.a33.value(x);
        let a55 = self.a55.value(x);
        let a66 = self.a66.value(x);
        let e2 = match &self.coupling {
            Coupling::E2(f) => f.value(x),
            Coupling::A13(f) => (a11 - a55) * (a33 - a55) - (f.value(x) + a55).powi(2),
        };
        TiModuli { a11, a33, a55, a66, e2 }
    }

    /// Spatial gradients of the Hamiltonian parameters, indexed by [`Param::index`].
    pub fn moduli_gradients(&self, x: Vec3) -> [Vec3; 5] {
        let g11 = self.a11.gradient(x);
        let g33 = self.a33.gradient(x);
        let g55 = self.a55.gradient(x);
        let g66 = self.a66.gradient(x);
        let ge2 = match &self.coupling {
            Coupling::E2(f) => f.gradient(x),
            Coupling::A13(f) => {
                let a11 = self.a11.value(x);
                let a33 = self.a33.value(x);
                let a55 = self.a55.value(x);
                let a13 = f.value(x);
                g11 * (a33 - a55) + g33 * (a11 - a55) - g55 * ((a33 - a55) + (a11 - a55))
                    - (f.gradient(x) + g55) * (2.0 * (a13 + a55))
            }
        };
        [ge2, g11, g33, g55, g66]
    }

    pub fn params(&self, x: Vec3) -> Option<ElasticParams> {
        let mo = self.moduli(x);
        let a13 = match &self.coupling {
            Coupling::A13(f) => f.value(x),
            Coupling::E2(_) => mo.a13()?,
        };
        Some(ElasticParams { a11: mo.a11, a13, a33: mo.a33, a55: mo.a55, a66: mo.a66 })
    }

    fn axis(&self, x: Vec3, with_hessian: bool) -> Result<AxisJet, MaterialError> {
        let g = self.layer.gradient(x);
        let gi = self.g0_inv.mul_vec(g);
        let n2 = g.dot(gi);
        if !(n2.sqrt() > ZERO_GRADIENT_TOL) {
            return Err(MaterialError::ZeroGradient { x });
        }
        let norm = n2.sqrt();
        let hess = if with_hessian {
            let h = self.layer.hessian(x);
            (h.max_abs() > 0.0).then_some(h)
        } else {
            None
        };
        Ok(AxisJet { m: gi * (1.0 / norm), norm, hess })
    }

    /// Unit axis vector `ẽ3 = ∇^{g0} f / |∇^{g0} f|`.
    pub fn axis_vector(&self, x: Vec3) -> Result<Vec3, MaterialError> {
        Ok(self.axis(x, false)?.m)
    }

    /// Frame with `ẽ3` along the axis; `ẽ1, ẽ2` by Gram–Schmidt of the
    /// ambient axes, skipping an axis within 1e-6 of `ẽ3`.
    pub fn tilt_frame(&self, x: Vec3) -> Result<TiltFrame, MaterialError> {
        let e3 = self.axis(x, false)?.m;
        let ip = |a: Vec3, b: Vec3| a.dot(self.g0.mul_vec(b));
        let mut basis = [Vec3::ZERO; 3];
        basis[2] = e3;
        let mut filled = 0;
        for k in 0..3 {
            if filled == 2 {
                break;
            }
            let ek = Vec3::axis(k);
            let nk = ip(ek, ek).sqrt();
            if (ip(ek, e3) / nk).abs() > 1.0 - 1e-6 {
                continue;
            }
            let mut w = ek - e3 * ip(ek, e3);
            for b in basis.iter().take(filled) {
                w -= *b * ip(w, *b);
            }
            let n = ip(w, w).sqrt();
            if n < 1e-8 {
                continue;
            }
            basis[filled] = w * (1.0 / n);
            filled += 1;
        }
        debug_assert_eq!(filled, 2);
        Ok(TiltFrame { e: basis })
    }

    fn tilted_parts(&self, ax: &AxisJet, xi: Vec3) -> (f64, f64, Vec3) {
        let q = ax.m.dot(xi);
        let gxi = self.g0_inv.mul_vec(xi);
        let s = (xi.dot(gxi) - q * q).max(0.0);
        (s, q, gxi - ax.m * q)
    }

    fn moduli_checked(&self, x: Vec3) -> TiModuli {
        self.moduli(x)
    }
}

/// `(|ξ̃′|², ξ̃₃)` at a phase point.
pub fn to_tilted(m: &MaterialField, pt: &PhasePoint) -> Result<(f64, f64), MaterialError> {
    let ax = m.axis(pt.x, false)?;
    let (s, q, _) = m.tilted_parts(&ax, pt.xi);
    Ok((s, q))
}

pub fn hamiltonian(m: &MaterialField, wave: Wave, pt: &PhasePoint) -> Result<f64, MaterialError> {
    let ax = m.axis(pt.x, false)?;
    let (s, q, _) = m.tilted_parts(&ax, pt.xi);
    let mo = m.moduli_checked(pt.x);
    jet(&mo, wave, s, q * q, Order::Value).map(|j| j.p).map_err(|e| e.at(pt))
}

/// `(∂p/∂x, ∂p/∂ξ)` in ambient coordinates.
pub fn hamiltonian_derivs(m: &MaterialField, wave: Wave, pt: &PhasePoint) -> Result<(Vec3, Vec3), MaterialError> {
    let ax = m.axis(pt.x, true)?;
    let (s, q, u) = m.tilted_parts(&ax, pt.xi);
    let mo = m.moduli_checked(pt.x);
    let j = jet(&mo, wave, s, q * q, Order::First).map_err(|e| e.at(pt))?;
    let dxi = u * (2.0 * j.ps) + ax.m * (2.0 * q * j.pc);
    let grads = m.moduli_gradients(pt.x);
    let mut dx = Vec3::ZERO;
    for (k, g) in grads.iter().enumerate() {
        if j.dparam[k] != 0.0 {
            dx += *g * j.dparam[k];
        }
    }
    if let Some(h) = ax.hess {
        // ∇ₓq = ∇²f·u / N and ∇ₓs = −2q∇ₓq.
        let dq = h.mul_vec(u) * (1.0 / ax.norm);
        dx += dq * (2.0 * q * j.pc - 2.0 * q * j.ps);
    }
    Ok((dx, dxi))
}

/// Half the ξ-Hessian of `p`, in the tilted frame.
pub fn xi_hessian(m: &MaterialField, wave: Wave, pt: &PhasePoint) -> Result<Mat3, MaterialError> {
    let frame = m.tilt_frame(pt.x)?;
    let xt = frame.covector_to_tilted(pt.xi);
    let mo = m.moduli_checked(pt.x);
    tilted_half_hessian(&mo, wave, xt).map_err(|e| e.at(pt))
}

/// Half the ξ-Hessian for tilted covector components `ξ̃`.
pub fn tilted_half_hessian(mo: &TiModuli, wave: Wave, xt: Vec3) -> Result<Mat3, JetError> {
    let s = xt[0] * xt[0] + xt[1] * xt[1];
    let q = xt[2];
    let j = jet(mo, wave, s, q * q, Order::Second)?;
    let u = Vec3([xt[0], xt[1], 0.0]);
    Ok(xi_hessian_from_jet(&j, &Mat3::IDENTITY, Vec3::axis(2), u, q).scale(0.5))
}

/// Full ξ-Hessian of `p` in ambient coordinates; the differential of the Hamilton map.
pub fn ambient_xi_hessian(m: &MaterialField, wave: Wave, pt: &PhasePoint) -> Result<Mat3, MaterialError> {
    let ax = m.axis(pt.x, false)?;
    let (s, q, u) = m.tilted_parts(&ax, pt.xi);
    let mo = m.moduli_checked(pt.x);
    let j = jet(&mo, wave, s, q * q, Order::Second).map_err(|e| e.at(pt))?;
    Ok(xi_hessian_from_jet(&j, &m.g0_inv, ax.m, u, q))
}

/// `∂p/∂ξ` together with the full ξ-Hessian; one jet evaluation.
pub fn hamilton_map_jet(m: &MaterialField, wave: Wave, pt: &PhasePoint) -> Result<(Vec3, Mat3), MaterialError> {
    let ax = m.axis(pt.x, false)?;
    let (s, q, u) = m.tilted_parts(&ax, pt.xi);
    let mo = m.moduli_checked(pt.x);
    let j = jet(&mo, wave, s, q * q, Order::Second).map_err(|e| e.at(pt))?;
    let v = u * (2.0 * j.ps) + ax.m * (2.0 * q * j.pc);
    Ok((v, xi_hessian_from_jet(&j, &m.g0_inv, ax.m, u, q)))
}

/// `∂p/∂ν` for all five parameters at a phase point.
pub fn material_sensitivities(m: &MaterialField, wave: Wave, pt: &PhasePoint) -> Result<Sensitivities, MaterialError> {
    let ax = m.axis(pt.x, false)?;
    let (s, q, _) = m.tilted_parts(&ax, pt.xi);
    let mo = m.moduli_checked(pt.x);
    mo.sensitivities(wave, s, q * q).map_err(|e| e.at(pt))
}

/// Sensitivities evaluated with replacement moduli at the same phase point.
pub fn sensitivities_with(m: &MaterialField, mo: &TiModuli, wave: Wave, pt: &PhasePoint) -> Result<Sensitivities, MaterialError> {
    let ax = m.axis(pt.x, false)?;
    let (s, q, _) = m.tilted_parts(&ax, pt.xi);
    mo.sensitivities(wave, s, q * q).map_err(|e| e.at(pt))
}

/// Hamiltonian with replacement moduli at the same phase point.
pub fn hamiltonian_with(m: &MaterialField, mo: &TiModuli, wave: Wave, pt: &PhasePoint) -> Result<f64, MaterialError> {
    let ax = m.axis(pt.x, false)?;
    let (s, q, _) = m.tilted_parts(&ax, pt.xi);
    jet(mo, wave, s, q * q, Order::Value).map(|j| j.p).map_err(|e| e.at(pt))
}

/// Summed qP + qSV sensitivity to `a11` under `a33 = F(a11)`, `E² = H(a11)`.
pub fn functional_a11_coefficient(
    mo: &TiModuli,
    perp_sq: f64,
    axial_sq: f64,
    f_prime: f64,
    h_prime: f64,
) -> Result<f64, JetError> {
    let mut total = 0.0;
    for wave in [Wave::QP, Wave::QSV] {
        let sens = mo.sensitivities(wave, perp_sq, axial_sq)?;
        total += sens.da11 + f_prime * sens.da33 + h_prime * sens.de2;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const M0: ElasticParams = ElasticParams::new(14.0, 2.0, 12.0, 4.0, 5.0);

    fn unit_box() -> Box3 {
        Box3::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0))
    }

    fn m0_field(axis: Vec3) -> MaterialField {
        MaterialField::homogeneous(unit_box(), M0, axis)
    }

    #[test]
    fn admissibility_examples() {
        assert!(check_admissible(&M0));
        assert!(check_admissible(&ElasticParams::new(4.0, 2.0, 4.0, 1.0, 1.0)));
        assert!(!check_admissible(&ElasticParams::new(4.0, 2.0, 12.0, 5.0, 5.0)));
        assert!(!check_admissible(&ElasticParams::new(14.0, 2.0, 12.0, -4.0, 5.0)));
        assert!(!check_admissible(&ElasticParams::new(14.0, 2.0, 12.0, 4.0, 13.0)));
    }

    #[test]
    fn e_squared_examples() {
        assert_eq!(e_squared(&M0), 44.0);
        assert_eq!(e_squared(&ElasticParams::isotropic(2.0, 1.0)), 0.0);
        assert_eq!(e_squared(&ElasticParams::new(14.0, 8.0, 12.0, 4.0, 5.0)), -64.0);
    }

    #[test]
    fn a13_round_trips_through_e2() {
        let mo = M0.moduli();
        assert!((mo.a13().unwrap() - 2.0).abs() < 1e-14);
        let bad = TiModuli { e2: 1e3, ..mo };
        assert!(bad.a13().is_none());
    }

    #[test]
    fn tilted_components() {
        let m = m0_field(Vec3::new(0.0, 0.0, 1.0));
        let (s, q) = to_tilted(&m, &PhasePoint::new(Vec3::ZERO, Vec3::new(3.0, 4.0, 5.0))).unwrap();
        assert_eq!((s, q), (25.0, 5.0));
        let m = m0_field(Vec3::new(1.0, 0.0, 0.0));
        let (s, q) = to_tilted(&m, &PhasePoint::new(Vec3::ZERO, Vec3::new(3.0, 4.0, 0.0))).unwrap();
        assert_eq!((s, q), (16.0, 3.0));
        let m = m0_field(Vec3::new(1.0, 1.0, 0.0));
        let (s, q) = to_tilted(&m, &PhasePoint::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0))).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
        assert!((q - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_reported() {
        let m = m0_field(Vec3::ZERO);
        let pt = PhasePoint::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0));
        assert!(matches!(to_tilted(&m, &pt), Err(MaterialError::ZeroGradient { .. })));
        assert!(matches!(hamiltonian(&m, Wave::QP, &pt), Err(MaterialError::ZeroGradient { .. })));
    }

    #[test]
    fn hamiltonian_examples() {
        let m = m0_field(Vec3::axis(2));
        let at = |xi: Vec3, w: Wave| hamiltonian(&m, w, &PhasePoint::new(Vec3::ZERO, xi)).unwrap();
        assert!((at(Vec3::axis(0), Wave::QP) - 28.0).abs() < 1e-12);
        assert!((at(Vec3::axis(0), Wave::QSV) - 8.0).abs() < 1e-12);
        assert!((at(Vec3::axis(2), Wave::QP) - 24.0).abs() < 1e-12);
        assert!((at(Vec3::axis(2), Wave::QSV) - 8.0).abs() < 1e-12);
        let iso = MaterialField::homogeneous(unit_box(), ElasticParams::isotropic(2.0, 1.0), Vec3::new(0.3, 0.1, 1.0));
        let xi = Vec3::new(0.48, -0.6, 0.64);
        let pt = PhasePoint::new(Vec3::ZERO, xi);
        assert!((hamiltonian(&iso, Wave::QP, &pt).unwrap() - 8.0).abs() < 1e-12);
        assert!((hamiltonian(&iso, Wave::QSV, &pt).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_discriminant_is_reported() {
        let mut m = m0_field(Vec3::axis(2));
        m.coupling = Coupling::E2(ScalarField::Constant(500.0));
        let pt = PhasePoint::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 1.0));
        assert!(matches!(hamiltonian(&m, Wave::QP, &pt), Err(MaterialError::NegativeDiscriminant { .. })));
    }

    #[test]
    fn hessian_closed_forms_at_zero_axial_component() {
        let mo = M0.moduli();
        let hp = tilted_half_hessian(&mo, Wave::QP, Vec3::axis(0)).unwrap();
        let hs = tilted_half_hessian(&mo, Wave::QSV, Vec3::axis(0)).unwrap();
        let ep = Mat3::diag([28.0, 28.0, 15.2]);
        let es = Mat3::diag([8.0, 8.0, 16.8]);
        assert!(hp.sub(&ep).max_abs() < 1e-12, "{hp:?}");
        assert!(hs.sub(&es).max_abs() < 1e-12, "{hs:?}");
        // general closed form from the (s,c) formulas
        let q = 2.0 * a55_plus(&M0);
        assert!((hp[(2, 2)] - q).abs() < 1e-12);
    }

    fn a55_plus(p: &ElasticParams) -> f64 {
        p.a55 + (p.a13 + p.a55).powi(2) / (p.a11 - p.a55)
    }

    #[test]
    fn isotropic_hessian_is_scalar() {
        let mo = ElasticParams::isotropic(2.0, 1.0).moduli();
        for xt in [Vec3::new(0.3, -0.4, 0.8), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.1, 0.2, -0.9)] {
            let h = tilted_half_hessian(&mo, Wave::QP, xt).unwrap();
            // 2(λ+2μ) = 8
            assert!(h.sub(&Mat3::IDENTITY.scale(8.0)).max_abs() < 1e-12, "{h:?}");
        }
    }

    #[test]
    fn sensitivity_examples() {
        let mo = M0.moduli();
        let p = mo.sensitivities(Wave::QP, 1.0, 1.0).unwrap();
        let s = mo.sensitivities(Wave::QSV, 1.0, 1.0).unwrap();
        // closed forms at s = c = 1: D = 18, R = √148
        let r = 148f64.sqrt();
        assert!((p.de2 + 2.0 / r).abs() < 1e-14);
        assert!((p.da11 - (1.0 + 18.0 / r)).abs() < 1e-14);
        assert!((s.da33 - (1.0 - 18.0 / r)).abs() < 1e-14);
        // the published figures carry about five significant digits
        assert!((p.de2 + 0.164_398).abs() < 2e-6);
        assert!((p.da11 - 2.479_600).abs() < 1e-5);
        assert!((p.da33 - 2.479_600).abs() < 1e-5);
        assert!((s.de2 - 0.164_398).abs() < 2e-6);
        assert!((s.da11 + 0.479_600).abs() < 1e-5);
        assert!((s.da33 + 0.479_600).abs() < 1e-5);
        for w in [Wave::QP, Wave::QSV] {
            let z = mo.sensitivities(w, 2.3, 0.0).unwrap();
            assert_eq!(z.de2, 0.0);
            assert_eq!(z.da33, 0.0);
        }
    }

    #[test]
    fn isotropic_shear_waves_ignore_lambda() {
        let mo = ElasticParams::isotropic(3.0, 1.5).moduli();
        for (s, c) in [(1.0, 0.0), (0.3, 0.7), (0.0, 2.0), (1.7, 0.2)] {
            let sv = mo.sensitivities(Wave::QSV, s, c).unwrap();
            assert!(sv.da11.abs() < 1e-14 && sv.da33.abs() < 1e-14);
        }
    }

    #[test]
    fn homogeneous_qsh_has_no_spatial_gradient() {
        let m = m0_field(Vec3::new(0.2, 0.1, 1.0));
        let pt = PhasePoint::new(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.4, -0.2, 0.7));
        let (dx, _) = hamiltonian_derivs(&m, Wave::QSH, &pt).unwrap();
        assert_eq!(dx, Vec3::ZERO);
    }

    #[test]
    fn qp_gradient_at_horizontal_covector() {
        let m = m0_field(Vec3::axis(2));
        let (_, dxi) = hamiltonian_derivs(&m, Wave::QP, &PhasePoint::new(Vec3::ZERO, Vec3::axis(0))).unwrap();
        // p = 28|ξ′|² there, so ∂p/∂ξ = (56, 0, 0) and ξ·∂p/∂ξ = 2p
        assert!((dxi - Vec3::new(56.0, 0.0, 0.0)).max_abs() < 1e-12);
    }

    #[test]
    fn corollary_coefficient_cancels_branch_terms() {
        let mo = M0.moduli();
        let got = functional_a11_coefficient(&mo, 0.7, 0.4, 0.6, -3.0).unwrap();
        assert!((got - (2.0 * 0.7 + 2.0 * 0.6 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn general_background_metric_changes_tilted_norms() {
        let g0 = Mat3::diag([4.0, 1.0, 1.0]);
        let m = m0_field(Vec3::axis(2)).with_background_metric(g0).unwrap();
        // G0 = diag(1/4, 1, 1): |ξ|² = 1/4 for ξ = e1
        let (s, q) = to_tilted(&m, &PhasePoint::new(Vec3::ZERO, Vec3::axis(0))).unwrap();
        assert!((s - 0.25).abs() < 1e-15 && q == 0.0);
        let f = m.tilt_frame(Vec3::ZERO).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let ip = f.e[i].dot(g0.mul_vec(f.e[j]));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-14);
            }
        }
        assert!(m0_field(Vec3::axis(2)).with_background_metric(Mat3::diag([1.0, -1.0, 1.0])).is_none());
    }
}
