//! Numerical kernels for travel-time recovery in transversely isotropic (TI)
//! elastic media.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It covers:
//!
//! * [`material`]: pointwise TI algebra, the qP/qSV/qSH Hamiltonians, their
//!   analytic derivatives and material sensitivities;
//! * [`qsh`]: the rank-one-perturbed qSH metric, its algebraic inversion and
//!   adapted block-diagonal coordinates;
//! * [`raytrace`]: bicharacteristic integration, lens relations, Hamilton-map
//!   inversion, convexity and non-degeneracy probes;
//! * [`pseudolin`]: flow Jacobians and the weights of the pseudolinearization
//!   identity, plus the simplified linear transform along rays;
//! * [`symbol`]: principal and boundary symbol evaluation of the localized
//!   normal operator, degeneracy scans and quadratic-vanishing fits;
//! * [`inversion`]: linearized recovery of parameter differences from lens
//!   data mismatches.
//!
//! Parallel drivers, file formats and the command-line front end live in the
//! companion `tiso` crate.
#![no_std]
// `!(a > b)` is deliberate throughout: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod field;
pub mod inversion;
pub mod linalg;
pub mod material;
pub mod ode;
pub mod pseudolin;
pub mod qsh;
pub mod quadrature;
pub mod raytrace;
pub mod symbol;

pub use field::{Box3, Grid3, ScalarField};
pub use linalg::{Mat3, Vec3};
pub use material::{
    ElasticParams, MaterialError, MaterialField, Param, PhasePoint, TiModuli, TiltFrame, Wave,
};
