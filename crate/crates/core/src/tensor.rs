//! Small-tensor aliases and contractions used throughout the element code.
//!
//! All constitutive and kinematic quantities are plain 2x2 tensors; strains
//! and stresses are stored in full symmetric form rather than Voigt vectors
//! so that double contractions like `S : dE` stay literal.

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;

/// Double contraction `a : b` of two 2x2 tensors.
#[inline]
pub fn ddot(a: &Mat2, b: &Mat2) -> f64 {
    a[(0, 0)] * b[(0, 0)] + a[(0, 1)] * b[(0, 1)] + a[(1, 0)] * b[(1, 0)] + a[(1, 1)] * b[(1, 1)]
}

/// Dyadic product `a ⊗ b`.
#[inline]
pub fn outer(a: &Vec2, b: &Vec2) -> Mat2 {
    a * b.transpose()
}

/// Symmetric part of a 2x2 tensor.
#[inline]
pub fn sym(a: &Mat2) -> Mat2 {
    0.5 * (a + a.transpose())
}

/// Frobenius norm of the antisymmetric part, used in symmetry assertions.
#[inline]
pub fn asym_norm(a: &Mat2) -> f64 {
    (a - a.transpose()).norm()
}
