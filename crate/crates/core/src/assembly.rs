//! Global residual and consistent-tangent assembly over the periodic mesh.
//!
//! The four residual blocks are
//!   R_c: Lagrangian mass balance (J c)_t plus the penalty coupling flux,
//!   R_y: substrate friction plus the divergence of the total Piola stress
//!        F S^a - phi(c) K + P_pen,
//!   R_p: bound-pili kinetics with the deformation-dependent source,
//!   R_g: weak enforcement of g = F^{-T} grad_X c.
//! The tangent is built column by column from analytic directional
//! derivatives of the same quadrature-point expressions, including the
//! implicit sensitivity of the local active-stress solve, so the global
//! Newton iteration keeps its quadratic rate.
//!
//! Elements are processed in parallel; per-element contributions are
//! scattered sequentially in element order, making the result bit-identical
//! regardless of thread count.

use rayon::prelude::*;

use crate::constitutive::{
    active_stress_delta, active_stress_update, penalty_stress, penalty_stress_delta,
    pili_formation_stress, pili_formation_stress_delta, pressure_factor, pressure_factor_deriv,
    KinematicsVariation, MaterialParams,
};
use crate::error::SimError;
use crate::kinematics::{deformation_gradient, derived_measures, strain_increment};
use crate::mesh::{DofMap, Element, Mesh, Mode};
use crate::tensor::{ddot, Mat2, Vec2};

/// Nodal fields plus the per-quadrature-point active stress history.
/// Values are stored for every grid node including periodic slaves; all
/// reads go through the master maps, and DOF-indexed writes keep slaves
/// mirrored automatically because they share their master's DOF.
#[derive(Debug, Clone)]
pub struct FieldState {
    /// Cell density per corner-grid node.
    pub c: Vec<f64>,
    /// Deformation map per quadratic-grid node.
    pub y: Vec<Vec2>,
    /// Bound-pili density per corner-grid node.
    pub p: Vec<f64>,
    /// Density-gradient field per corner-grid node.
    pub g: Vec<Vec2>,
    /// Active stress, indexed `element * n_qp + qp`.
    pub s_a: Vec<Mat2>,
    pub time: f64,
}

impl FieldState {
    /// Undeformed state with uniform density and no pili activity.
    pub fn reference(mesh: &Mesh, c0: f64) -> FieldState {
        FieldState {
            c: vec![c0; mesh.n_corner_nodes()],
            y: mesh.node_coords.clone(),
            p: vec![0.0; mesh.n_corner_nodes()],
            g: vec![Vec2::zeros(); mesh.n_corner_nodes()],
            s_a: vec![Mat2::zeros(); mesh.elements.len() * mesh.n_qp()],
            time: 0.0,
        }
    }
}

/// Adds `scale * du` (a DOF-vector increment) onto the nodal fields.
/// Slave nodes share master DOF indices, so mirroring is preserved.
pub fn apply_increment(
    state: &mut FieldState,
    du: &[f64],
    mesh: &Mesh,
    dofs: &DofMap,
    scale: f64,
) {
    for n in 0..mesh.n_quad_nodes() {
        state.y[n][0] += scale * du[dofs.y[n][0]];
        state.y[n][1] += scale * du[dofs.y[n][1]];
    }
    for n in 0..mesh.n_corner_nodes() {
        state.c[n] += scale * du[dofs.c[n]];
        if dofs.mode == Mode::Full {
            state.p[n] += scale * du[dofs.p[n]];
            state.g[n][0] += scale * du[dofs.g[n][0]];
            state.g[n][1] += scale * du[dofs.g[n][1]];
        }
    }
}

/// Assembly product: residual, tangent triplets (row, col, value) when
/// requested, and the updated active stresses consistent with `next`.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub residual: Vec<f64>,
    pub triplets: Vec<(usize, usize, f64)>,
    pub s_a_next: Vec<Mat2>,
}

// Local DOF layout per element: [c0..c3, (y_x y_y)*9, p0..p3, (g_x g_y)*4].
const C_OFF: usize = 0;
const Y_OFF: usize = 4;
const P_OFF: usize = 22;
const G_OFF: usize = 26;
const NLOC_FULL: usize = 34;
const NLOC_PASSIVE: usize = 22;

/// Element nodal deformation values; periodic slave nodes report the master
/// value shifted by the domain period so the element sees a contiguous
/// deformed patch.
pub fn element_y(mesh: &Mesh, el: usize, y: &[Vec2]) -> [Vec2; 9] {
    let elem = &mesh.elements[el];
    std::array::from_fn(|a| {
        let nd = elem.nodes[a];
        let m = mesh.quad_master[nd];
        y[m] + (mesh.node_coords[nd] - mesh.node_coords[m])
    })
}

/// Corner-node scalar values of one element, read through the master map.
pub fn element_corner_scalar(mesh: &Mesh, el: usize, v: &[f64]) -> [f64; 4] {
    let elem = &mesh.elements[el];
    std::array::from_fn(|i| v[mesh.corner_master[elem.corners[i]]])
}

/// Corner-node vector values of one element, read through the master map.
pub fn element_corner_vec(mesh: &Mesh, el: usize, v: &[Vec2]) -> [Vec2; 4] {
    let elem = &mesh.elements[el];
    std::array::from_fn(|i| v[mesh.corner_master[elem.corners[i]]])
}

struct ElementOut {
    gdofs: Vec<usize>,
    r: Vec<f64>,
    k: Vec<f64>,
    s_a: Vec<Mat2>,
}

/// Unit variation of the local fields for one tangent column.
#[derive(Default)]
struct ColumnVar {
    dc: f64,
    dgrad_c: Vec2,
    dp: f64,
    dg: Vec2,
    dgrad_g: Mat2,
    df: Mat2,
    dy_dot: Vec2,
}

fn element_dofs(elem: &Element, dofs: &DofMap, nloc: usize) -> Vec<usize> {
    let mut g = Vec::with_capacity(nloc);
    for i in 0..4 {
        g.push(dofs.c[elem.corners[i]]);
    }
    for a in 0..9 {
        g.push(dofs.y[elem.nodes[a]][0]);
        g.push(dofs.y[elem.nodes[a]][1]);
    }
    if nloc == NLOC_FULL {
        for i in 0..4 {
            g.push(dofs.p[elem.corners[i]]);
        }
        for i in 0..4 {
            g.push(dofs.g[elem.corners[i]][0]);
            g.push(dofs.g[elem.corners[i]][1]);
        }
    }
    g
}

#[allow(clippy::too_many_arguments)]
fn element_kernel(
    el_idx: usize,
    elem: &Element,
    mesh: &Mesh,
    dofs: &DofMap,
    next: &FieldState,
    prev: &FieldState,
    dt: f64,
    params: &MaterialParams,
    want_tangent: bool,
) -> Result<ElementOut, SimError> {
    let active = dofs.mode == Mode::Full;
    let nloc = if active { NLOC_FULL } else { NLOC_PASSIVE };
    let lam = if active { params.lambda_pen } else { 0.0 };
    let gamma = 0.75 * params.ell0 * params.ell0;
    let n_qp = mesh.n_qp();

    let ce = element_corner_scalar(mesh, el_idx, &next.c);
    let ce_n = element_corner_scalar(mesh, el_idx, &prev.c);
    let (pe, pe_n, ge) = if active {
        (
            element_corner_scalar(mesh, el_idx, &next.p),
            element_corner_scalar(mesh, el_idx, &prev.p),
            element_corner_vec(mesh, el_idx, &next.g),
        )
    } else {
        ([0.0; 4], [0.0; 4], [Vec2::zeros(); 4])
    };
    let ye = element_y(mesh, el_idx, &next.y);
    let ye_n = element_y(mesh, el_idx, &prev.y);

    let mut r = vec![0.0; nloc];
    let mut k = vec![0.0; if want_tangent { nloc * nloc } else { 0 }];
    let mut s_a_out = Vec::with_capacity(n_qp);

    for (q, geo) in mesh.qp_geometry[el_idx].iter().enumerate() {
        let n = &geo.n_lin;
        let dn = &geo.dn_lin;
        let m = &geo.n_quad;
        let dm = &geo.dn_quad;
        let w = geo.weight;

        let c: f64 = (0..4).map(|i| n[i] * ce[i]).sum();
        let c_prev: f64 = (0..4).map(|i| n[i] * ce_n[i]).sum();
        let grad_c: Vec2 = (0..4).map(|i| dn[i] * ce[i]).sum();
        let p: f64 = (0..4).map(|i| n[i] * pe[i]).sum();
        let p_prev: f64 = (0..4).map(|i| n[i] * pe_n[i]).sum();
        let g: Vec2 = (0..4).map(|i| ge[i] * n[i]).sum();
        let grad_g: Mat2 = (0..4).map(|i| ge[i] * dn[i].transpose()).sum();
        let y_qp: Vec2 = (0..9).map(|a| ye[a] * m[a]).sum();
        let y_qp_n: Vec2 = (0..9).map(|a| ye_n[a] * m[a]).sum();
        let y_dot = (y_qp - y_qp_n) / dt;

        let f = deformation_gradient(&ye, dm);
        let kin = derived_measures(&f)?;
        let f_n = deformation_gradient(&ye_n, dm);
        let kin_n = derived_measures(&f_n)?;
        let de = strain_increment(&kin.e, &kin_n.e);

        let phi = pressure_factor(c, params)?;
        let phi_d = pressure_factor_deriv(c, params)?;

        let (s_a, pen, src_core, tr_g, q_vec, flux);
        if active {
            let s_f = pili_formation_stress(c, &g, &grad_g, &kin, params);
            let s_a_prev = prev.s_a[el_idx * n_qp + q];
            s_a = active_stress_update(&s_a_prev, &de, &s_f, p, dt, params)?;
            pen = penalty_stress(&grad_c, &g, &kin, params);
            tr_g = ddot(&grad_g, &kin.f_inv_t);
            src_core = c * c + gamma * c * tr_g - gamma * g.dot(&g);
            q_vec = kin.f_inv_t * grad_c - g;
            flux = kin.b * grad_c - kin.f_inv * g;
        } else {
            s_a = Mat2::zeros();
            pen = Mat2::zeros();
            tr_g = 0.0;
            src_core = 0.0;
            q_vec = Vec2::zeros();
            flux = Vec2::zeros();
        }
        s_a_out.push(s_a);

        let p_total = f * s_a - phi * kin.k + pen;
        let mass_rate = (kin.j * c - kin_n.j * c_prev) / dt;
        let fric = params.xi * kin.j * c * y_dot;
        let cflux = lam * kin.j * flux;
        let psrc = (p - p_prev) / dt - kin.j * params.k_on * src_core + params.k_off * p;
        let gvec = -lam * kin.j * q_vec;

        for i in 0..4 {
            r[C_OFF + i] += w * (mass_rate * n[i] + cflux.dot(&dn[i]));
        }
        for a in 0..9 {
            let row = fric * m[a] + p_total * dm[a];
            r[Y_OFF + 2 * a] += w * row[0];
            r[Y_OFF + 2 * a + 1] += w * row[1];
        }
        if active {
            for i in 0..4 {
                r[P_OFF + i] += w * psrc * n[i];
                r[G_OFF + 2 * i] += w * gvec[0] * n[i];
                r[G_OFF + 2 * i + 1] += w * gvec[1] * n[i];
            }
        }

        if !want_tangent {
            continue;
        }

        for col in 0..nloc {
            let mut var = ColumnVar::default();
            if col < Y_OFF {
                let i = col - C_OFF;
                var.dc = n[i];
                var.dgrad_c = dn[i];
            } else if col < P_OFF {
                let a = (col - Y_OFF) / 2;
                let d = (col - Y_OFF) % 2;
                var.df[(d, 0)] = dm[a][0];
                var.df[(d, 1)] = dm[a][1];
                var.dy_dot[d] = m[a] / dt;
            } else if col < G_OFF {
                var.dp = n[col - P_OFF];
            } else {
                let i = (col - G_OFF) / 2;
                let d = (col - G_OFF) % 2;
                var.dg[d] = n[i];
                var.dgrad_g[(d, 0)] = dn[i][0];
                var.dgrad_g[(d, 1)] = dn[i][1];
            }

            let dkin = KinematicsVariation::from_df(&kin, &var.df);
            let dmass = (dkin.dj * c + kin.j * var.dc) / dt;
            let dfric = params.xi
                * (dkin.dj * c * y_dot + kin.j * var.dc * y_dot + kin.j * c * var.dy_dot);
            let dphi = phi_d * var.dc;

            let dp_total;
            let dcflux;
            let dpsrc;
            let dgvec;
            if active {
                let dsf = pili_formation_stress_delta(
                    c,
                    &g,
                    &grad_g,
                    &kin,
                    var.dc,
                    &var.dg,
                    &var.dgrad_g,
                    &dkin,
                    params,
                );
                let dsa =
                    active_stress_delta(&s_a, &de, p, dt, &dsf, &dkin.de, var.dp, params)?;
                let dpen = penalty_stress_delta(
                    &grad_c,
                    &g,
                    &kin,
                    &var.dgrad_c,
                    &var.dg,
                    &dkin,
                    params,
                );
                dp_total = var.df * s_a + f * dsa - dphi * kin.k - phi * dkin.dk + dpen;

                let dflux = dkin.db * grad_c + kin.b * var.dgrad_c
                    - dkin.df_inv * g
                    - kin.f_inv * var.dg;
                dcflux = lam * (dkin.dj * flux + kin.j * dflux);

                let dtr = ddot(&var.dgrad_g, &kin.f_inv_t) + ddot(&grad_g, &dkin.df_inv_t);
                let dsrc_core = 2.0 * c * var.dc + gamma * (var.dc * tr_g + c * dtr)
                    - 2.0 * gamma * g.dot(&var.dg);
                dpsrc = var.dp / dt
                    - params.k_on * (dkin.dj * src_core + kin.j * dsrc_core)
                    + params.k_off * var.dp;

                let dq = dkin.df_inv_t * grad_c + kin.f_inv_t * var.dgrad_c - var.dg;
                dgvec = -lam * (dkin.dj * q_vec + kin.j * dq);
            } else {
                dp_total = -dphi * kin.k - phi * dkin.dk;
                dcflux = Vec2::zeros();
                dpsrc = 0.0;
                dgvec = Vec2::zeros();
            }

            for i in 0..4 {
                k[(C_OFF + i) * nloc + col] += w * (dmass * n[i] + dcflux.dot(&dn[i]));
            }
            for a in 0..9 {
                let row = dfric * m[a] + dp_total * dm[a];
                k[(Y_OFF + 2 * a) * nloc + col] += w * row[0];
                k[(Y_OFF + 2 * a + 1) * nloc + col] += w * row[1];
            }
            if active {
                for i in 0..4 {
                    k[(P_OFF + i) * nloc + col] += w * dpsrc * n[i];
                    k[(G_OFF + 2 * i) * nloc + col] += w * dgvec[0] * n[i];
                    k[(G_OFF + 2 * i + 1) * nloc + col] += w * dgvec[1] * n[i];
                }
            }
        }
    }

    Ok(ElementOut {
        gdofs: element_dofs(elem, dofs, nloc),
        r,
        k,
        s_a: s_a_out,
    })
}

/// Assembles residual (and tangent triplets on request) for the state pair
/// `(next, prev)` over one backward-Euler step of length `dt`.
pub fn assemble(
    next: &FieldState,
    prev: &FieldState,
    dt: f64,
    mesh: &Mesh,
    dofs: &DofMap,
    params: &MaterialParams,
    want_tangent: bool,
) -> Result<Assembled, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidParameter(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let outs: Vec<ElementOut> = mesh
        .elements
        .par_iter()
        .enumerate()
        .map(|(e, elem)| {
            element_kernel(e, elem, mesh, dofs, next, prev, dt, params, want_tangent)
        })
        .collect::<Result<_, _>>()?;

    let mut residual = vec![0.0; dofs.ndof];
    let mut triplets = Vec::new();
    let mut s_a_next = Vec::with_capacity(mesh.elements.len() * mesh.n_qp());
    for out in &outs {
        let nloc = out.gdofs.len();
        for (row, &dof) in out.gdofs.iter().enumerate() {
            residual[dof] += out.r[row];
        }
        if want_tangent {
            for row in 0..nloc {
                for col in 0..nloc {
                    let v = out.k[row * nloc + col];
                    if v != 0.0 {
                        triplets.push((out.gdofs[row], out.gdofs[col], v));
                    }
                }
            }
        }
        s_a_next.extend_from_slice(&out.s_a);
    }
    Ok(Assembled {
        residual,
        triplets,
        s_a_next,
    })
}

/// Cell-balance residual per corner-grid node (slaves report their master's
/// value).
pub fn residual_cell(
    next: &FieldState,
    prev: &FieldState,
    dt: f64,
    mesh: &Mesh,
    dofs: &DofMap,
    params: &MaterialParams,
) -> Result<Vec<f64>, SimError> {
    let asm = assemble(next, prev, dt, mesh, dofs, params, false)?;
    Ok((0..mesh.n_corner_nodes())
        .map(|nd| asm.residual[dofs.c[nd]])
        .collect())
}

/// Momentum residual per quadratic-grid node.
pub fn residual_momentum(
    next: &FieldState,
    prev: &FieldState,
    dt: f64,
    mesh: &Mesh,
    dofs: &DofMap,
    params: &MaterialParams,
) -> Result<Vec<Vec2>, SimError> {
    let asm = assemble(next, prev, dt, mesh, dofs, params, false)?;
    Ok((0..mesh.n_quad_nodes())
        .map(|nd| Vec2::new(asm.residual[dofs.y[nd][0]], asm.residual[dofs.y[nd][1]]))
        .collect())
}

/// Pili-kinetics residual per corner-grid node (full mode only).
pub fn residual_pili(
    next: &FieldState,
    prev: &FieldState,
    dt: f64,
    mesh: &Mesh,
    dofs: &DofMap,
    params: &MaterialParams,
) -> Result<Vec<f64>, SimError> {
    if dofs.mode != Mode::Full {
        return Err(SimError::InvalidParameter(
            "pili residual requires the full four-field mode".into(),
        ));
    }
    let asm = assemble(next, prev, dt, mesh, dofs, params, false)?;
    Ok((0..mesh.n_corner_nodes())
        .map(|nd| asm.residual[dofs.p[nd]])
        .collect())
}

/// Gradient-constraint residual per corner-grid node (full mode only).
pub fn residual_gradient(
    next: &FieldState,
    prev: &FieldState,
    dt: f64,
    mesh: &Mesh,
    dofs: &DofMap,
    params: &MaterialParams,
) -> Result<Vec<Vec2>, SimError> {
    if dofs.mode != Mode::Full {
        return Err(SimError::InvalidParameter(
            "gradient residual requires the full four-field mode".into(),
        ));
    }
    let asm = assemble(next, prev, dt, mesh, dofs, params, false)?;
    Ok((0..mesh.n_corner_nodes())
        .map(|nd| Vec2::new(asm.residual[dofs.g[nd][0]], asm.residual[dofs.g[nd][1]]))
        .collect())
}
