//! Small fixed-size linear algebra used throughout the crate.
//!
//! Everything here is 3-dimensional except for a few helpers on flat
//! row-major slices; nothing allocates.

#[allow(unused_imports)]
use num_traits::Float;
use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub const fn axis(i: usize) -> Self {
        let mut v = [0.0; 3];
        v[i] = 1.0;
        Vec3(v)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a0, a1, a2] = self.0;
        let [b0, b1, b2] = o.0;
        Vec3([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Unit vector in the same direction; `None` for (numerically) zero input.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(self * (1.0 / n))
        } else {
            None
        }
    }

    pub fn outer(self, o: Vec3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = self.0[i] * o.0[j];
            }
        }
        Mat3(m)
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vec3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3(a)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diag(d: [f64; 3]) -> Mat3 {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3([
            [c0[0], c1[0], c2[0]],
            [c0[1], c1[1], c2[1]],
            [c0[2], c1[2], c2[2]],
        ])
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3(self.0[i])
    }

    pub fn transpose(&self) -> Mat3 {
        let mut t = [[0.0; 3]; 3];
        for (i, row) in self.0.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                t[j][i] = *v;
            }
        }
        Mat3(t)
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3([self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v)])
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(m)
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut m = self.0;
        m.iter_mut().flatten().for_each(|e| *e *= s);
        Mat3(m)
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut m = self.0;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e += o.0[i][j];
            }
        }
        Mat3(m)
    }

    pub fn sub(&self, o: &Mat3) -> Mat3 {
        self.add(&o.scale(-1.0))
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn symmetrized(&self) -> Mat3 {
        self.add(&self.transpose()).scale(0.5)
    }

    /// Inverse by cofactors. Returns `None` when `|det|` is below
    /// `rel_tol` times the cube of the largest entry.
    pub fn inverse(&self, rel_tol: f64) -> Option<Mat3> {
        let d = self.det();
        let s = self.max_abs();
        if !(d.abs() > rel_tol * s * s * s) || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        let inv_d = 1.0 / d;
        let mut r = [[0.0; 3]; 3];
        r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_d;
        r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_d;
        r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_d;
        r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_d;
        r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_d;
        r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_d;
        r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_d;
        r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_d;
        r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_d;
        Some(Mat3(r))
    }

    /// Solve `self · x = b` with partial pivoting.
    pub fn solve(&self, b: Vec3, rel_tol: f64) -> Option<Vec3> {
        let mut a = [[0.0; 4]; 3];
        for i in 0..3 {
            a[i][..3].copy_from_slice(&self.0[i]);
            a[i][3] = b[i];
        }
        let scale = self.max_abs();
        if !(scale > 0.0) {
            return None;
        }
        for c in 0..3 {
            let p = (c..3)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap_or(c);
            if !(a[p][c].abs() > rel_tol * scale) {
                return None;
            }
            a.swap(c, p);
            for r in (c + 1)..3 {
                let f = a[r][c] / a[c][c];
                for k in c..4 {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        let mut x = [0.0; 3];
        for i in (0..3).rev() {
            let s: f64 = ((i + 1)..3).map(|k| a[i][k] * x[k]).sum();
            x[i] = (a[i][3] - s) / a[i][i];
        }
        let x = Vec3(x);
        x.is_finite().then_some(x)
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Option<Mat3> {
        let a = &self.0;
        let mut l = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let d = a[i][i] - s;
                    if !(d > 0.0) {
                        return None;
                    }
                    l[i][j] = d.sqrt();
                } else {
                    l[i][j] = (a[i][j] - s) / l[j][j];
                }
            }
        }
        Some(Mat3(l))
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Eigenvalues come back ascending; column `k` of the returned matrix is
    /// the unit eigenvector for eigenvalue `k`.
    pub fn symmetric_eigen(&self) -> ([f64; 3], Mat3) {
        let mut a = self.symmetrized().0;
        let mut v = Mat3::IDENTITY.0;
        for _sweep in 0..64 {
            let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
            let diag = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
            if off <= f64::EPSILON * 1e-3 * diag || off == 0.0 {
                break;
            }
            for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
        let vals = [a[idx[0]][idx[0]], a[idx[1]][idx[1]], a[idx[2]][idx[2]]];
        let vm = Mat3(v);
        let vecs = Mat3::from_cols(vm.col(idx[0]), vm.col(idx[1]), vm.col(idx[2]));
        (vals, vecs)
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

/// Solve a dense `n×n` system in place by Gaussian elimination with partial
/// pivoting. `a` is row-major; on success `b` holds the solution.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) {
        return None;
    }
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
            .unwrap_or(c);
        if !(a[p * n + c].abs() > 1e-300 + 1e-15 * scale) {
            return None;
        }
        if p != c {
            for k in 0..n {
                a.swap(c * n + k, p * n + k);
            }
            b.swap(c, p);
        }
        for r in (c + 1)..n {
            let f = a[r * n + c] / a[c * n + c];
            if f == 0.0 {
                continue;
            }
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
            b[r] -= f * b[c];
        }
    }
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| a[i * n + k] * b[k]).sum();
        b[i] = (b[i] - s) / a[i * n + i];
    }
    b.iter().all(|v| v.is_finite()).then_some(())
}

/// Ordinary least-squares line fit `y ≈ a + b x`; returns `(a, b, max |residual|)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let res = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - a - b * x).abs())
        .fold(0.0, f64::max);
    Some((a, b, res))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let q = Mat3::from_cols(
            Vec3::new(1.0, 1.0, 0.0) * (0.5f64).sqrt(),
            Vec3::new(-1.0, 1.0, 0.0) * (0.5f64).sqrt(),
            Vec3::new(0.0, 0.0, 1.0),
        );
        let a = q.mul_mat(&Mat3::diag([3.0, -1.0, 2.0])).mul_mat(&q.transpose());
        let (vals, vecs) = a.symmetric_eigen();
        assert!((vals[0] + 1.0).abs() < 1e-14);
        assert!((vals[1] - 2.0).abs() < 1e-14);
        assert!((vals[2] - 3.0).abs() < 1e-14);
        for k in 0..3 {
            let v = vecs.col(k);
            let r = a.mul_vec(v) - v * vals[k];
            assert!(r.norm() < 1e-13);
        }
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = Mat3([[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]]);
        let b = Vec3::new(1.0, -2.0, 0.25);
        let x = a.solve(b, 1e-14).unwrap();
        let y = a.inverse(1e-14).unwrap().mul_vec(b);
        assert!((x - y).norm() < 1e-14);
        assert!((a.mul_vec(x) - b).norm() < 1e-14);
        let l = a.cholesky().unwrap();
        assert!(l.mul_mat(&l.transpose()).sub(&a).max_abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Mat3([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]]);
        assert!(a.solve(Vec3::new(1.0, 1.0, 1.0), 1e-12).is_none());
        assert!(a.inverse(1e-12).is_none());
    }

    #[test]
    fn dense_solver_handles_pivoting() {
        let mut a = [0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 4.0, -3.0, 8.0];
        let mut b = [3.0, 4.0, 9.0];
        solve_dense(&mut a, &mut b, 3).unwrap();
        for (x, e) in b.iter().zip([1.0, 1.0, 1.0]) {
            assert!((x - e).abs() < 1e-13);
        }
    }
}
