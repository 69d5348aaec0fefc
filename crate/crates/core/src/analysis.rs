//! Run diagnostics: conserved cell number, density extremes, the linear
//! phase-separation onset condition, coalescence bridge length and periodic
//! recentering of aggregates.

use crate::assembly::{element_corner_scalar, element_corner_vec, element_y, FieldState};
use crate::constitutive::MaterialParams;
use crate::kinematics::deformation_gradient;
use crate::mesh::Mesh;
use crate::tensor::Vec2;

#[derive(Debug, Clone, Copy)]
pub struct Diagnostics {
    pub time: f64,
    pub total_cell_number: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub delta_c: f64,
    pub constraint_violation: f64,
}

/// Total cell number, the quadrature integral of J c over the material
/// domain. Exactly conserved by the discrete scheme.
pub fn total_cell_number(state: &FieldState, mesh: &Mesh) -> f64 {
    let mut total = 0.0;
    for el in 0..mesh.elements.len() {
        let ce = element_corner_scalar(mesh, el, &state.c);
        let ye = element_y(mesh, el, &state.y);
        for geo in &mesh.qp_geometry[el] {
            let c: f64 = (0..4).map(|i| geo.n_lin[i] * ce[i]).sum();
            let f = deformation_gradient(&ye, &geo.dn_quad);
            total += geo.weight * f.determinant() * c;
        }
    }
    total
}

/// Nodal min, max and spread of the cell density.
pub fn density_extremes(state: &FieldState) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &c in &state.c {
        lo = lo.min(c);
        hi = hi.max(c);
    }
    (lo, hi, hi - lo)
}

/// Linear stability onset of phase separation around a uniform density:
/// value = -(1/xi) E pi R^2/(1 - c pi R^2)^2 + c ell0 f_p k_on/(k_off xi).
/// Positive value means the uniform state is unstable (separation).
pub fn stability_onset(params: &MaterialParams, c_init: f64) -> (f64, bool) {
    let a = std::f64::consts::PI * params.r * params.r;
    let passive = params.e_mod * a / ((1.0 - c_init * a) * (1.0 - c_init * a) * params.xi);
    let active = c_init * params.ell0 * params.f_p * params.k_on / (params.k_off * params.xi);
    let value = active - passive;
    (value, value > 0.0)
}

/// L2 norm of the penalty constraint residual F^{-T} grad_X c - g over the
/// domain.
pub fn constraint_violation(state: &FieldState, mesh: &Mesh) -> f64 {
    let mut sq = 0.0;
    for el in 0..mesh.elements.len() {
        let ce = element_corner_scalar(mesh, el, &state.c);
        let ge = element_corner_vec(mesh, el, &state.g);
        let ye = element_y(mesh, el, &state.y);
        for geo in &mesh.qp_geometry[el] {
            let grad_c: Vec2 = (0..4).map(|i| geo.dn_lin[i] * ce[i]).sum();
            let g: Vec2 = (0..4).map(|i| ge[i] * geo.n_lin[i]).sum();
            let f = deformation_gradient(&ye, &geo.dn_quad);
            let Some(f_inv) = f.try_inverse() else {
                continue;
            };
            let q = f_inv.transpose() * grad_c - g;
            sq += geo.weight * q.dot(&q);
        }
    }
    sq.sqrt()
}

pub fn diagnostics(state: &FieldState, mesh: &Mesh) -> Diagnostics {
    let (c_min, c_max, delta_c) = density_extremes(state);
    Diagnostics {
        time: state.time,
        total_cell_number: total_cell_number(state, mesh),
        c_min,
        c_max,
        delta_c,
        constraint_violation: constraint_violation(state, mesh),
    }
}

/// Periodic (circular-mean) centroid of the deformed density field along
/// each axis; zero when the resultant is degenerate (e.g. uniform field).
pub fn periodic_centroid(state: &FieldState, mesh: &Mesh) -> Vec2 {
    let period = [mesh.lx, mesh.ly];
    let mut centroid = Vec2::zeros();
    let qnx = 2 * mesh.nx;
    for d in 0..2 {
        let mut cos_sum = 0.0;
        let mut sin_sum = 0.0;
        let mut weight = 0.0;
        for nd in 0..mesh.n_corner_nodes() {
            if !mesh.is_master_corner(nd) {
                continue;
            }
            // quadratic-grid node carrying this corner's deformation value
            let (ix, iy) = (nd % (mesh.nx + 1), nd / (mesh.nx + 1));
            let qnode = 2 * iy * (qnx + 1) + 2 * ix;
            let pos = state.y[mesh.quad_master[qnode]][d];
            let theta = 2.0 * std::f64::consts::PI * pos / period[d];
            let w = state.c[nd];
            cos_sum += w * theta.cos();
            sin_sum += w * theta.sin();
            weight += w;
        }
        let resultant = cos_sum.hypot(sin_sum);
        if weight <= 0.0 || resultant < 1e-9 * weight {
            centroid[d] = 0.0;
        } else {
            let mut x = sin_sum.atan2(cos_sum) / (2.0 * std::f64::consts::PI) * period[d];
            if x < 0.0 {
                x += period[d];
            }
            centroid[d] = x;
        }
    }
    centroid
}

/// Re-expresses the fields with the periodic centroid moved to the domain
/// center. The shift is rounded to whole elements so nodal values move
/// without interpolation; the deformation map is translated accordingly.
/// Returns the recentered state and the applied material shift.
pub fn recenter_periodic(state: &FieldState, mesh: &Mesh) -> (FieldState, Vec2) {
    let centroid = periodic_centroid(state, mesh);
    let target = Vec2::new(0.5 * mesh.lx, 0.5 * mesh.ly);
    let (ex, ey) = (mesh.lx / mesh.nx as f64, mesh.ly / mesh.ny as f64);
    // integer element shift moving the centroid onto the center
    let sx = ((centroid[0] - target[0]) / ex).round() as i64;
    let sy = ((centroid[1] - target[1]) / ey).round() as i64;
    if centroid == Vec2::zeros() || (sx == 0 && sy == 0) {
        return (state.clone(), Vec2::zeros());
    }
    let shift = Vec2::new(sx as f64 * ex, sy as f64 * ey);

    let mut out = state.clone();
    let wrap = |i: i64, n: i64| -> usize { (((i % n) + n) % n) as usize };

    // corner grid: value at node X comes from X + shift
    let ncx = mesh.nx as i64;
    let ncy = mesh.ny as i64;
    for iy in 0..=mesh.ny {
        for ix in 0..=mesh.nx {
            let dst = iy * (mesh.nx + 1) + ix;
            let sxx = wrap(ix as i64 + sx, ncx);
            let syy = wrap(iy as i64 + sy, ncy);
            let src = syy * (mesh.nx + 1) + sxx;
            let srcm = mesh.corner_master[src];
            out.c[dst] = state.c[srcm];
            out.p[dst] = state.p[srcm];
            out.g[dst] = state.g[srcm];
        }
    }
    // quadratic grid: shift the deformation map and subtract the
    // translation so the deformed picture moves with the density
    let (qnx, qny) = (2 * mesh.nx as i64, 2 * mesh.ny as i64);
    for iy in 0..=(qny as usize) {
        for ix in 0..=(qnx as usize) {
            let dst = iy * (qnx as usize + 1) + ix;
            let sxx = wrap(ix as i64 + 2 * sx, qnx);
            let syy = wrap(iy as i64 + 2 * sy, qny);
            let src = syy * (qnx as usize + 1) + sxx;
            let srcm = mesh.quad_master[src];
            // the source master sits at material X + shift (mod period);
            // keep the displacement field, not the absolute position
            let disp = state.y[srcm] - mesh.node_coords[srcm];
            out.y[dst] = mesh.node_coords[dst] + disp;
        }
    }
    // per-element active stress moves with its element
    let n_qp = mesh.n_qp();
    for ey_i in 0..mesh.ny {
        for ex_i in 0..mesh.nx {
            let dst = ey_i * mesh.nx + ex_i;
            let sxx = wrap(ex_i as i64 + sx, ncx);
            let syy = wrap(ey_i as i64 + sy, ncy);
            let src = syy as usize * mesh.nx + sxx;
            for q in 0..n_qp {
                out.s_a[dst * n_qp + q] = state.s_a[src * n_qp + q];
            }
        }
    }
    (out, shift)
}

/// Coalescence bridge length: deformed extent between the loci where the
/// density-gradient component along `axis` reaches 96% of its maximum
/// magnitude, with the negative-gradient locus on top. Returns (h, found).
pub fn bridge_length(state: &FieldState, mesh: &Mesh, axis: usize) -> (f64, bool) {
    assert!(axis < 2);
    let qnx = 2 * mesh.nx;
    let mut max_mag = 0.0_f64;
    for nd in 0..mesh.n_corner_nodes() {
        if mesh.is_master_corner(nd) {
            max_mag = max_mag.max(state.g[nd][axis].abs());
        }
    }
    if max_mag < 1e-12 {
        return (0.0, false);
    }
    let tau = 0.96 * max_mag;
    let (mut up_sum, mut up_n) = (0.0, 0usize);
    let (mut lo_sum, mut lo_n) = (0.0, 0usize);
    for nd in 0..mesh.n_corner_nodes() {
        if !mesh.is_master_corner(nd) {
            continue;
        }
        let ga = state.g[nd][axis];
        let (ix, iy) = (nd % (mesh.nx + 1), nd / (mesh.nx + 1));
        let qnode = 2 * iy * (qnx + 1) + 2 * ix;
        let pos = state.y[mesh.quad_master[qnode]][axis];
        if ga <= -tau {
            up_sum += pos;
            up_n += 1;
        } else if ga >= tau {
            lo_sum += pos;
            lo_n += 1;
        }
    }
    if up_n == 0 || lo_n == 0 {
        return (0.0, false);
    }
    let h = up_sum / up_n as f64 - lo_sum / lo_n as f64;
    if h <= 0.0 {
        return (0.0, false);
    }
    (h, true)
}
