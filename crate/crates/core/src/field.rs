//! Smooth scalar fields over R³ with analytic gradients and Hessians.
//!
//! Material parameters, the layer function of the TI axis and the convex
//! foliation are all represented by [`ScalarField`]. Closed-form variants
//! carry exact derivatives; gridded data are trilinearly interpolated and
//! differentiated by central differences on the grid.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::linalg::{Mat3, Vec3};

/// Axis-aligned box `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub min: Vec3,
    pub max: Vec3,
}

impl Box3 {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Box3 { min, max }
    }

    pub fn contains(&self, x: Vec3, tol: f64) -> bool {
        (0..3).all(|i| x[i] >= self.min[i] - tol && x[i] <= self.max[i] + tol)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Signed distance-like margin: positive inside, negative outside
    /// (the smallest per-face margin).
    pub fn margin(&self, x: Vec3) -> f64 {
        (0..3)
            .map(|i| (x[i] - self.min[i]).min(self.max[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// One term `coef · x^i y^j z^k` of a polynomial field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub powers: [u32; 3],
}

/// Regular grid of samples, trilinearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub dims: [usize; 3],
    /// Values in x-fastest order: `values[i + nx*(j + ny*k)]`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum GridError {
    #[error("grid dims must all be at least 2")]
    TooSmall,
    #[error("grid has {got} values, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("grid spacing must be positive")]
    BadSpacing,
}

impl Grid3 {
    pub fn new(origin: Vec3, spacing: Vec3, dims: [usize; 3], values: Vec<f64>) -> Result<Self, GridError> {
        if dims.iter().any(|&d| d < 2) {
            return Err(GridError::TooSmall);
        }
        if (0..3).any(|i| !(spacing[i] > 0.0)) {
            return Err(GridError::BadSpacing);
        }
        let expected = dims[0] * dims[1] * dims[2];
        if values.len() != expected {
            return Err(GridError::LengthMismatch { expected, got: values.len() });
        }
        Ok(Grid3 { origin, spacing, dims, values })
    }

    /// Sample a field on the grid nodes.
    pub fn sample(origin: Vec3, spacing: Vec3, dims: [usize; 3], f: &ScalarField) -> Self {
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values.push(f.value(node(origin, spacing, [i, j, k])));
                }
            }
        }
        Grid3 { origin, spacing, dims, values }
    }

    pub fn node(&self, idx: [usize; 3]) -> Vec3 {
        node(self.origin, self.spacing, idx)
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Central-difference derivative at a node along `axis` (one-sided at edges).
    fn node_diff(&self, idx: [usize; 3], axis: usize) -> f64 {
        let n = self.dims[axis];
        let get = |m: usize| {
            let mut id = idx;
            id[axis] = m;
            self.at(id[0], id[1], id[2])
        };
        let h = self.spacing[axis];
        let i = idx[axis];
        if i == 0 {
            (get(1) - get(0)) / h
        } else if i == n - 1 {
            (get(n - 1) - get(n - 2)) / h
        } else {
            (get(i + 1) - get(i - 1)) / (2.0 * h)
        }
    }

    fn locate(&self, x: Vec3) -> ([usize; 3], [f64; 3]) {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = ((x[a] - self.origin[a]) / self.spacing[a]).clamp(0.0, (self.dims[a] - 1) as f64);
            let i = (u.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        (base, frac)
    }

    fn interp_with<F: Fn([usize; 3]) -> f64>(&self, x: Vec3, f: F) -> f64 {
        let (b, t) = self.locate(x);
        let mut acc = 0.0;
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    let w = (if di == 1 { t[0] } else { 1.0 - t[0] })
                        * (if dj == 1 { t[1] } else { 1.0 - t[1] })
                        * (if dk == 1 { t[2] } else { 1.0 - t[2] });
                    if w != 0.0 {
                        acc += w * f([b[0] + di, b[1] + dj, b[2] + dk]);
                    }
                }
            }
        }
        acc
    }

    pub fn value(&self, x: Vec3) -> f64 {
        self.interp_with(x, |n| self.at(n[0], n[1], n[2]))
    }

    /// Trilinear interpolation of nodal central-difference gradients.
    pub fn gradient(&self, x: Vec3) -> Vec3 {
        Vec3([
            self.interp_with(x, |n| self.node_diff(n, 0)),
            self.interp_with(x, |n| self.node_diff(n, 1)),
            self.interp_with(x, |n| self.node_diff(n, 2)),
        ])
    }

    /// Central differences of [`Grid3::gradient`] with half-cell steps.
    pub fn hessian(&self, x: Vec3) -> Mat3 {
        let mut h = Mat3::ZERO;
        for j in 0..3 {
            let d = 0.5 * self.spacing[j];
            let mut xp = x;
            xp[j] += d;
            let mut xm = x;
            xm[j] -= d;
            let gp = self.gradient(xp);
            let gm = self.gradient(xm);
            for i in 0..3 {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * d);
            }
        }
        h.symmetrized()
    }
}

fn node(origin: Vec3, spacing: Vec3, idx: [usize; 3]) -> Vec3 {
    Vec3([
        origin[0] + spacing[0] * idx[0] as f64,
        origin[1] + spacing[1] * idx[1] as f64,
        origin[2] + spacing[2] * idx[2] as f64,
    ])
}

/// A scalar function on R³.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Constant(f64),
    /// `coef · x + offset`.
    Linear { coef: Vec3, offset: f64 },
    /// `sign · |x − center| + offset`.
    Radial { center: Vec3, sign: f64, offset: f64 },
    Polynomial(Vec<Monomial>),
    /// `amplitude · exp(−½ Σ ((x_i − c_i)/w_i)²)`.
    Gaussian { amplitude: f64, center: Vec3, widths: Vec3 },
    Grid(Box<Grid3>),
    Sum(Vec<ScalarField>),
}

fn ipow(x: f64, n: u32) -> f64 {
    x.powi(n as i32)
}

impl ScalarField {
    pub fn constant(v: f64) -> Self {
        ScalarField::Constant(v)
    }

    /// `self + other`, flattening nested sums.
    pub fn plus(self, other: ScalarField) -> ScalarField {
        let mut terms = Vec::new();
        for f in [self, other] {
            match f {
                ScalarField::Sum(v) => terms.extend(v),
                f => terms.push(f),
            }
        }
        ScalarField::Sum(terms)
    }

    /// Multiply the field by a constant.
    pub fn scaled(&self, s: f64) -> ScalarField {
        match self {
            ScalarField::Constant(c) => ScalarField::Constant(c * s),
            ScalarField::Linear { coef, offset } => ScalarField::Linear { coef: *coef * s, offset: offset * s },
            ScalarField::Radial { center, sign, offset } => {
                ScalarField::Radial { center: *center, sign: sign * s, offset: offset * s }
            }
            ScalarField::Polynomial(terms) => ScalarField::Polynomial(
                terms.iter().map(|m| Monomial { coef: m.coef * s, powers: m.powers }).collect(),
            ),
            ScalarField::Gaussian { amplitude, center, widths } => {
                ScalarField::Gaussian { amplitude: amplitude * s, center: *center, widths: *widths }
            }
            ScalarField::Grid(g) => {
                let mut g = (**g).clone();
                g.values.iter_mut().for_each(|v| *v *= s);
                ScalarField::Grid(Box::new(g))
            }
            ScalarField::Sum(v) => ScalarField::Sum(v.iter().map(|f| f.scaled(s)).collect()),
        }
    }

    pub fn value(&self, x: Vec3) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Linear { coef, offset } => coef.dot(x) + offset,
            ScalarField::Radial { center, sign, offset } => sign * (x - *center).norm() + offset,
            ScalarField::Polynomial(terms) => terms
                .iter()
                .map(|m| m.coef * ipow(x[0], m.powers[0]) * ipow(x[1], m.powers[1]) * ipow(x[2], m.powers[2]))
                .sum(),
            ScalarField::Gaussian { amplitude, center, widths } => amplitude * gauss_exp(x, *center, *widths),
            ScalarField::Grid(g) => g.value(x),
            ScalarField::Sum(v) => v.iter().map(|f| f.value(x)).sum(),
        }
    }

    pub fn gradient(&self, x: Vec3) -> Vec3 {
        match self {
            ScalarField::Constant(_) => Vec3::ZERO,
            ScalarField::Linear { coef, .. } => *coef,
            ScalarField::Radial { center, sign, .. } => {
                let d = x - *center;
                let r = d.norm();
                if r > 0.0 {
                    d * (sign / r)
                } else {
                    Vec3::ZERO
                }
            }
            ScalarField::Polynomial(terms) => {
                let mut g = Vec3::ZERO;
                for m in terms {
                    for a in 0..3 {
                        let pa = m.powers[a];
                        if pa == 0 {
                            continue;
                        }
                        let mut t = m.coef * pa as f64;
                        for b in 0..3 {
                            let p = if a == b { pa - 1 } else { m.powers[b] };
                            t *= ipow(x[b], p);
                        }
                        g[a] += t;
                    }
                }
                g
            }
            ScalarField::Gaussian { amplitude, center, widths } => {
                let e = amplitude * gauss_exp(x, *center, *widths);
                Vec3([
                    -e * (x[0] - center[0]) / (widths[0] * widths[0]),
                    -e * (x[1] - center[1]) / (widths[1] * widths[1]),
                    -e * (x[2] - center[2]) / (widths[2] * widths[2]),
                ])
            }
            ScalarField::Grid(g) => g.gradient(x),
            ScalarField::Sum(v) => v.iter().fold(Vec3::ZERO, |acc, f| acc + f.gradient(x)),
        }
    }

    pub fn hessian(&self, x: Vec3) -> Mat3 {
        match self {
            ScalarField::Constant(_) | ScalarField::Linear { .. } => Mat3::ZERO,
            ScalarField::Radial { center, sign, .. } => {
                let d = x - *center;
                let r = d.norm();
                if r > 0.0 {
                    let u = d * (1.0 / r);
                    Mat3::IDENTITY.sub(&u.outer(u)).scale(sign / r)
                } else {
                    Mat3::ZERO
                }
            }
            ScalarField::Polynomial(terms) => {
                let mut h = Mat3::ZERO;
                for m in terms {
                    for a in 0..3 {
                        for b in 0..3 {
                            let mut p = m.powers;
                            let mut c = m.coef;
                            if p[a] == 0 {
                                continue;
                            }
                            c *= p[a] as f64;
                            p[a] -= 1;
                            if p[b] == 0 {
                                continue;
                            }
                            c *= p[b] as f64;
                            p[b] -= 1;
                            h[(a, b)] += c * ipow(x[0], p[0]) * ipow(x[1], p[1]) * ipow(x[2], p[2]);
                        }
                    }
                }
                h
            }
            ScalarField::Gaussian { amplitude, center, widths } => {
                let e = amplitude * gauss_exp(x, *center, *widths);
                let mut h = Mat3::ZERO;
                let q = |i: usize| (x[i] - center[i]) / (widths[i] * widths[i]);
                for i in 0..3 {
                    for j in 0..3 {
                        let delta = if i == j { 1.0 / (widths[i] * widths[i]) } else { 0.0 };
                        h[(i, j)] = e * (q(i) * q(j) - delta);
                    }
                }
                h
            }
            ScalarField::Grid(g) => g.hessian(x),
            ScalarField::Sum(v) => v.iter().fold(Mat3::ZERO, |acc, f| acc.add(&f.hessian(x))),
        }
    }

    /// True when the field is constant in space.
    pub fn is_constant(&self) -> bool {
        match self {
            ScalarField::Constant(_) => true,
            ScalarField::Linear { coef, .. } => coef.max_abs() == 0.0,
            ScalarField::Sum(v) => v.iter().all(|f| f.is_constant()),
            ScalarField::Gaussian { amplitude, .. } => *amplitude == 0.0,
            ScalarField::Polynomial(t) => t.iter().all(|m| m.powers == [0, 0, 0] || m.coef == 0.0),
            _ => false,
        }
    }
}

fn gauss_exp(x: Vec3, c: Vec3, w: Vec3) -> f64 {
    let q: f64 = (0..3).map(|i| ((x[i] - c[i]) / w[i]).powi(2)).sum();
    (-0.5 * q).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(f: &ScalarField, x: Vec3, h: f64) -> Vec3 {
        let mut g = Vec3::ZERO;
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            g[i] = (f.value(xp) - f.value(xm)) / (2.0 * h);
        }
        g
    }

    fn fd_hessian(f: &ScalarField, x: Vec3, h: f64) -> Mat3 {
        let mut m = Mat3::ZERO;
        for j in 0..3 {
            let mut xp = x;
            xp[j] += h;
            let mut xm = x;
            xm[j] -= h;
            let d = (f.gradient(xp) - f.gradient(xm)) * (0.5 / h);
            for i in 0..3 {
                m[(i, j)] = d[i];
            }
        }
        m
    }

    fn sample_fields() -> Vec<ScalarField> {
        alloc::vec![
            ScalarField::Linear { coef: Vec3::new(0.1, -0.2, 1.0), offset: 0.3 },
            ScalarField::Radial { center: Vec3::new(0.2, -0.1, -5.0), sign: 1.0, offset: -5.0 },
            ScalarField::Polynomial(alloc::vec![
                Monomial { coef: 2.0, powers: [2, 1, 0] },
                Monomial { coef: -0.5, powers: [0, 0, 3] },
                Monomial { coef: 1.5, powers: [1, 1, 1] },
            ]),
            ScalarField::Gaussian {
                amplitude: 0.3,
                center: Vec3::new(0.1, 0.2, 0.3),
                widths: Vec3::new(0.4, 0.5, 0.2)
            },
            ScalarField::Constant(3.0).plus(ScalarField::Gaussian {
                amplitude: -1.0,
                center: Vec3::ZERO,
                widths: Vec3::new(1.0, 1.0, 1.0)
            }),
        ]
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let x = Vec3::new(0.31, -0.17, 0.42);
        for f in sample_fields() {
            let g = f.gradient(x);
            let gf = fd_gradient(&f, x, 1e-6);
            assert!((g - gf).max_abs() < 1e-7 * (1.0 + g.max_abs()), "{f:?}");
            let h = f.hessian(x);
            let hf = fd_hessian(&f, x, 1e-6);
            assert!(h.sub(&hf).max_abs() < 1e-6 * (1.0 + h.max_abs()), "{f:?}");
        }
    }

    #[test]
    fn grid_reproduces_linear_fields_exactly() {
        let lin = ScalarField::Linear { coef: Vec3::new(0.5, -1.0, 2.0), offset: 1.0 };
        let g = Grid3::sample(Vec3::ZERO, Vec3::new(0.1, 0.2, 0.25), [6, 5, 5], &lin);
        let x = Vec3::new(0.23, 0.51, 0.77);
        assert!((g.value(x) - lin.value(x)).abs() < 1e-13);
        assert!((g.gradient(x) - lin.gradient(x)).max_abs() < 1e-12);
        assert!(g.hessian(x).max_abs() < 1e-10);
    }

    #[test]
    fn grid_constructor_validates() {
        assert_eq!(
            Grid3::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0), [2, 2, 2], alloc::vec![0.0; 7]),
            Err(GridError::LengthMismatch { expected: 8, got: 7 })
        );
        assert_eq!(
            Grid3::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0), [1, 2, 2], alloc::vec![0.0; 4]),
            Err(GridError::TooSmall)
        );
    }
}
