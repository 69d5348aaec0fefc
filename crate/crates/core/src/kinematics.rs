//! Deformation measures at quadrature points.
//!
//! All tensors follow the usual finite-strain conventions: F is the
//! material deformation gradient, J its determinant, K = J F^{-T} the
//! cofactor, B = F^{-1} F^{-T} the Piola deformation tensor (the inverse
//! right Cauchy-Green tensor, so B (F^T F) = I) and E = (F^T F - I)/2 the
//! Green-Lagrange strain.

use crate::error::SimError;
use crate::tensor::{sym, Mat2, Vec2};

/// Deformation measures evaluated at one quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureKinematics {
    pub f: Mat2,
    pub j: f64,
    pub k: Mat2,
    pub b: Mat2,
    pub e: Mat2,
    pub f_inv: Mat2,
    pub f_inv_t: Mat2,
}

/// F = sum_i y^i (x) grad_X M^i from the nodal deformation map.
pub fn deformation_gradient(nodal_y: &[Vec2; 9], dm_dx: &[Vec2; 9]) -> Mat2 {
    let mut f = Mat2::zeros();
    for i in 0..9 {
        f += nodal_y[i] * dm_dx[i].transpose();
    }
    f
}

/// Derived measures (J, K, B, E); rejects non-positive J as element inversion.
pub fn derived_measures(f: &Mat2) -> Result<QuadratureKinematics, SimError> {
    let j = f.determinant();
    if j <= 0.0 {
        return Err(SimError::ElementInversion { j });
    }
    let f_inv = f.try_inverse().expect("nonzero determinant");
    let f_inv_t = f_inv.transpose();
    let k = j * f_inv_t;
    let b = f_inv * f_inv_t;
    let e = sym(&(0.5 * (f.transpose() * f - Mat2::identity())));
    Ok(QuadratureKinematics {
        f: *f,
        j,
        k,
        b,
        e,
        f_inv,
        f_inv_t,
    })
}

/// Discrete strain increment E_{n+1} - E_n, symmetrized storage.
pub fn strain_increment(e_next: &Mat2, e_prev: &Mat2) -> Mat2 {
    sym(&(e_next - e_prev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{shape_quadratic, LOCAL_NODE_XI};
    use crate::tensor::asym_norm;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn local_nodes() -> [Vec2; 9] {
        std::array::from_fn(|i| Vec2::new(LOCAL_NODE_XI[i][0], LOCAL_NODE_XI[i][1]))
    }

    #[test]
    fn identity_map_gives_identity_gradient() {
        // On the reference element the isoparametric and material frames
        // coincide, so nodal y = xi gives F = I.
        let nodes = local_nodes();
        let xi = Vec2::new(0.3, -0.2);
        let (_, dm) = shape_quadratic(&xi);
        let f = deformation_gradient(&nodes, &dm);
        assert!((f - Mat2::identity()).norm() < 1e-14);
    }

    #[test]
    fn affine_map_recovers_its_matrix() {
        let a = Mat2::new(2.0, 0.0, 0.0, 1.0);
        let nodes = local_nodes().map(|x| a * x);
        let (_, dm) = shape_quadratic(&Vec2::new(-0.4, 0.7));
        let f = deformation_gradient(&nodes, &dm);
        assert!((f - a).norm() < 1e-13);
    }

    #[test]
    fn gradient_matches_finite_difference_of_map() {
        let mut rng = StdRng::seed_from_u64(3);
        let nodes: [Vec2; 9] = local_nodes()
            .map(|x| x + Vec2::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)));
        let interp = |xi: &Vec2| -> Vec2 {
            let (m, _) = shape_quadratic(xi);
            (0..9).map(|i| nodes[i] * m[i]).sum()
        };
        let xi = Vec2::new(0.11, -0.37);
        let (_, dm) = shape_quadratic(&xi);
        let f = deformation_gradient(&nodes, &dm);
        let h = 1e-6;
        for d in 0..2 {
            let mut xp = xi;
            let mut xm = xi;
            xp[d] += h;
            xm[d] -= h;
            let fd = (interp(&xp) - interp(&xm)) / (2.0 * h);
            assert!((f.column(d) - fd).norm() < 1e-8);
        }
    }

    #[test]
    fn derived_measures_identity_and_diag() {
        let kin = derived_measures(&Mat2::identity()).unwrap();
        assert!((kin.j - 1.0).abs() < 1e-15);
        assert!((kin.k - Mat2::identity()).norm() < 1e-15);
        assert!((kin.b - Mat2::identity()).norm() < 1e-15);
        assert!(kin.e.norm() < 1e-15);

        let kin = derived_measures(&Mat2::new(2.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((kin.j - 2.0).abs() < 1e-14);
        assert!((kin.k - Mat2::new(1.0, 0.0, 0.0, 2.0)).norm() < 1e-14);
        assert!((kin.b - Mat2::new(0.25, 0.0, 0.0, 1.0)).norm() < 1e-14);
        assert!((kin.e - Mat2::new(1.5, 0.0, 0.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn rejects_inverted_elements() {
        assert!(matches!(
            derived_measures(&Mat2::new(-1.0, 0.0, 0.0, 1.0)),
            Err(SimError::ElementInversion { .. })
        ));
    }

    fn random_admissible_f(rng: &mut StdRng) -> Mat2 {
        loop {
            let f = Mat2::identity()
                + Mat2::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                );
            if f.determinant() > 0.1 {
                return f;
            }
        }
    }

    #[test]
    fn algebraic_identities_random_f() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..50 {
            let f = random_admissible_f(&mut rng);
            let kin = derived_measures(&f).unwrap();
            // K = J F^{-T} entrywise
            assert!((kin.k - kin.j * kin.f_inv_t).norm() < 1e-13);
            // B (F^T F) = I
            assert!((kin.b * (f.transpose() * f) - Mat2::identity()).norm() < 1e-12);
            // det K = J in 2D
            assert!((kin.k.determinant() - kin.j).abs() < 1e-12);
            assert!(asym_norm(&kin.b) < 1e-13);
            assert!(asym_norm(&kin.e) < 1e-13);
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut rng = StdRng::seed_from_u64(23);
        let nodes: [Vec2; 9] = local_nodes()
            .map(|x| x + Vec2::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)));
        let shift = Vec2::new(12.5, -3.25);
        let shifted = nodes.map(|x| x + shift);
        let (_, dm) = shape_quadratic(&Vec2::new(0.2, 0.6));
        let f0 = deformation_gradient(&nodes, &dm);
        let f1 = deformation_gradient(&shifted, &dm);
        assert!((f0 - f1).norm() < 1e-13);

        // pure rotation has E = 0
        let th = 0.83_f64;
        let r = Mat2::new(th.cos(), -th.sin(), th.sin(), th.cos());
        let kin = derived_measures(&r).unwrap();
        assert!(kin.e.norm() < 1e-13);
    }

    #[test]
    fn strain_increment_is_symmetric_difference() {
        assert!(strain_increment(&Mat2::identity(), &Mat2::identity()).norm() < 1e-15);
        let de = strain_increment(&Mat2::new(1.5, 0.0, 0.0, 0.0), &Mat2::zeros());
        assert!((de - Mat2::new(1.5, 0.0, 0.0, 0.0)).norm() < 1e-15);
        let a = Mat2::new(0.3, 0.1, 0.1, -0.2);
        let b = Mat2::new(-0.1, 0.05, 0.05, 0.4);
        assert!(asym_norm(&strain_increment(&a, &b)) < 1e-15);
    }
}
