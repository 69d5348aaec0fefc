//! Periodic structured quadrilateral mesh with Taylor-Hood node sets.
//!
//! Each element carries nine nodes for the biquadratic deformation-map
//! interpolation and four corner nodes for the linear fields (c, p, g).
//! The grid is built on the full `(2nx+1) x (2ny+1)` node lattice so that
//! boundary elements keep their true material coordinates; periodicity is
//! imposed purely at the DOF level through master maps that send right/top
//! boundary nodes to their left/bottom masters.
//!
//! Local node ordering of the 9-node element: corners counterclockwise,
//! then edge midpoints (bottom, right, top, left), then the center node.
//! The corner subset is exactly local nodes 0..4.

use crate::error::SimError;
use crate::tensor::{Mat2, Vec2};

/// Local isoparametric coordinates of the 9 element nodes.
pub const LOCAL_NODE_XI: [[f64; 2]; 9] = [
    [-1.0, -1.0],
    [1.0, -1.0],
    [1.0, 1.0],
    [-1.0, 1.0],
    [0.0, -1.0],
    [1.0, 0.0],
    [0.0, 1.0],
    [-1.0, 0.0],
    [0.0, 0.0],
];

/// Tensor-product Gauss-Legendre quadrature on the reference square.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre rule of the given order per direction (2 or 3).
pub fn gauss_rule(order: usize) -> Result<QuadratureRule, SimError> {
    let (pts, wts): (Vec<f64>, Vec<f64>) = match order {
        2 => {
            let a = 1.0 / 3.0_f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0 / 5.0_f64).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        n => {
            return Err(SimError::InvalidParameter(format!(
                "unsupported quadrature order {n} (expected 2 or 3)"
            )))
        }
    };
    let mut points = Vec::with_capacity(order * order);
    let mut weights = Vec::with_capacity(order * order);
    for (j, &y) in pts.iter().enumerate() {
        for (i, &x) in pts.iter().enumerate() {
            points.push(Vec2::new(x, y));
            weights.push(wts[i] * wts[j]);
        }
    }
    Ok(QuadratureRule { points, weights })
}

/// Shape-function family of the Taylor-Hood pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    /// Bilinear, 4 corner nodes: c, p and g.
    Linear,
    /// Biquadratic Lagrange, 9 nodes: the deformation map.
    Quadratic,
}

fn lagrange_quadratic_1d(x: f64) -> ([f64; 3], [f64; 3]) {
    // nodes at -1, 0, +1
    let v = [0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)];
    let d = [x - 0.5, -2.0 * x, x + 0.5];
    (v, d)
}

/// Bilinear shape values and reference gradients at `xi`.
pub fn shape_linear(xi: &Vec2) -> ([f64; 4], [Vec2; 4]) {
    let (x, y) = (xi[0], xi[1]);
    let signs = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut vals = [0.0; 4];
    let mut grads = [Vec2::zeros(); 4];
    for (i, (sx, sy)) in signs.iter().enumerate() {
        vals[i] = 0.25 * (1.0 + sx * x) * (1.0 + sy * y);
        grads[i] = Vec2::new(0.25 * sx * (1.0 + sy * y), 0.25 * sy * (1.0 + sx * x));
    }
    (vals, grads)
}

/// Biquadratic Lagrange shape values and reference gradients at `xi`.
pub fn shape_quadratic(xi: &Vec2) -> ([f64; 9], [Vec2; 9]) {
    let (lx, dlx) = lagrange_quadratic_1d(xi[0]);
    let (ly, dly) = lagrange_quadratic_1d(xi[1]);
    // 1D node index of each local node: 0 -> -1, 1 -> 0, 2 -> +1
    let idx = |x: f64| -> usize {
        if x < -0.5 {
            0
        } else if x > 0.5 {
            2
        } else {
            1
        }
    };
    let mut vals = [0.0; 9];
    let mut grads = [Vec2::zeros(); 9];
    for (i, [nx, ny]) in LOCAL_NODE_XI.iter().enumerate() {
        let (a, b) = (idx(*nx), idx(*ny));
        vals[i] = lx[a] * ly[b];
        grads[i] = Vec2::new(dlx[a] * ly[b], lx[a] * dly[b]);
    }
    (vals, grads)
}

/// Generic entry point over both families (values plus reference gradients).
pub fn shape_eval(family: ShapeFamily, xi: &Vec2) -> (Vec<f64>, Vec<Vec2>) {
    match family {
        ShapeFamily::Linear => {
            let (v, g) = shape_linear(xi);
            (v.to_vec(), g.to_vec())
        }
        ShapeFamily::Quadratic => {
            let (v, g) = shape_quadratic(xi);
            (v.to_vec(), g.to_vec())
        }
    }
}

/// One element: nine quadratic-grid node indices plus the four corner-grid
/// indices of its linear subset (same physical points as local nodes 0..4).
#[derive(Debug, Clone)]
pub struct Element {
    pub nodes: [usize; 9],
    pub corners: [usize; 4],
}

/// Per-quadrature-point geometry of one element: material shape gradients
/// and the integration weight including the isoparametric Jacobian.
#[derive(Debug, Clone)]
pub struct QpGeometry {
    pub n_lin: [f64; 4],
    pub dn_lin: [Vec2; 4],
    pub n_quad: [f64; 9],
    pub dn_quad: [Vec2; 9],
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Coordinates of the (2nx+1)(2ny+1) quadratic-grid nodes.
    pub node_coords: Vec<Vec2>,
    /// Coordinates of the (nx+1)(ny+1) corner-grid nodes.
    pub corner_coords: Vec<Vec2>,
    pub elements: Vec<Element>,
    /// Periodic master map on the quadratic grid (identity off-boundary).
    pub quad_master: Vec<usize>,
    /// Periodic master map on the corner grid.
    pub corner_master: Vec<usize>,
    pub quadrature: QuadratureRule,
    /// Geometry tables: `qp_geometry[element][qp]`.
    pub qp_geometry: Vec<Vec<QpGeometry>>,
}

impl Mesh {
    pub fn n_quad_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_corner_nodes(&self) -> usize {
        self.corner_coords.len()
    }

    pub fn n_unique_quad_nodes(&self) -> usize {
        4 * self.nx * self.ny
    }

    pub fn n_unique_corner_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_qp(&self) -> usize {
        self.quadrature.points.len()
    }

    /// True if the quadratic-grid node is its own periodic master.
    pub fn is_master_quad(&self, node: usize) -> bool {
        self.quad_master[node] == node
    }

    pub fn is_master_corner(&self, node: usize) -> bool {
        self.corner_master[node] == node
    }
}

/// Builds the periodic structured grid with 3x3 Gauss quadrature tables.
pub fn build_periodic_grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Mesh, SimError> {
    if nx < 2 || ny < 2 {
        return Err(SimError::InvalidMesh(format!(
            "periodic identification degenerates for {nx}x{ny} elements (need at least 2x2)"
        )));
    }
    if !(lx > 0.0 && ly > 0.0) {
        return Err(SimError::InvalidMesh(format!(
            "domain size must be positive, got {lx} x {ly}"
        )));
    }

    let (qnx, qny) = (2 * nx, 2 * ny);
    let (hx, hy) = (lx / qnx as f64, ly / qny as f64);

    let mut node_coords = Vec::with_capacity((qnx + 1) * (qny + 1));
    for iy in 0..=qny {
        for ix in 0..=qnx {
            node_coords.push(Vec2::new(ix as f64 * hx, iy as f64 * hy));
        }
    }
    let mut corner_coords = Vec::with_capacity((nx + 1) * (ny + 1));
    for iy in 0..=ny {
        for ix in 0..=nx {
            corner_coords.push(Vec2::new(ix as f64 * 2.0 * hx, iy as f64 * 2.0 * hy));
        }
    }

    let qid = |ix: usize, iy: usize| iy * (qnx + 1) + ix;
    let cid = |ix: usize, iy: usize| iy * (nx + 1) + ix;

    let quad_master: Vec<usize> = (0..node_coords.len())
        .map(|n| {
            let (ix, iy) = (n % (qnx + 1), n / (qnx + 1));
            qid(ix % qnx, iy % qny)
        })
        .collect();
    let corner_master: Vec<usize> = (0..corner_coords.len())
        .map(|n| {
            let (ix, iy) = (n % (nx + 1), n / (nx + 1));
            cid(ix % nx, iy % ny)
        })
        .collect();

    // Local-node lattice offsets in half-element units, matching LOCAL_NODE_XI.
    const OFFSETS: [[usize; 2]; 9] = [
        [0, 0],
        [2, 0],
        [2, 2],
        [0, 2],
        [1, 0],
        [2, 1],
        [1, 2],
        [0, 1],
        [1, 1],
    ];

    let mut elements = Vec::with_capacity(nx * ny);
    for ey in 0..ny {
        for ex in 0..nx {
            let mut nodes = [0usize; 9];
            for (k, [dx, dy]) in OFFSETS.iter().enumerate() {
                nodes[k] = qid(2 * ex + dx, 2 * ey + dy);
            }
            let corners = [
                cid(ex, ey),
                cid(ex + 1, ey),
                cid(ex + 1, ey + 1),
                cid(ex, ey + 1),
            ];
            elements.push(Element { nodes, corners });
        }
    }

    let quadrature = gauss_rule(3)?;

    let mut qp_geometry = Vec::with_capacity(elements.len());
    for elem in &elements {
        let mut per_qp = Vec::with_capacity(quadrature.points.len());
        for (q, xi) in quadrature.points.iter().enumerate() {
            let (n_lin, dn_ref_lin) = shape_linear(xi);
            let (n_quad, dn_ref_quad) = shape_quadratic(xi);
            // Isoparametric-to-material Jacobian from the bilinear geometry map.
            let mut jac = Mat2::zeros();
            for a in 0..4 {
                let x = corner_coords[elem.corners[a]];
                jac += x * dn_ref_lin[a].transpose();
            }
            let det = jac.determinant();
            if det <= 0.0 {
                return Err(SimError::InvalidMesh(format!(
                    "non-positive material Jacobian {det} at quadrature point {q}"
                )));
            }
            let jac_inv_t = jac
                .try_inverse()
                .expect("positive-determinant Jacobian is invertible")
                .transpose();
            let dn_lin = std::array::from_fn(|a| jac_inv_t * dn_ref_lin[a]);
            let dn_quad = std::array::from_fn(|a| jac_inv_t * dn_ref_quad[a]);
            per_qp.push(QpGeometry {
                n_lin,
                dn_lin,
                n_quad,
                dn_quad,
                weight: quadrature.weights[q] * det,
            });
        }
        qp_geometry.push(per_qp);
    }

    Ok(Mesh {
        nx,
        ny,
        lx,
        ly,
        node_coords,
        corner_coords,
        elements,
        quad_master,
        corner_master,
        quadrature,
        qp_geometry,
    })
}

/// Which fields carry DOFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Four-field system: c, y, p, g.
    Full,
    /// Two-field reduction: c and y only (no active physics).
    PassiveOnly,
}

pub const NO_DOF: usize = usize::MAX;

/// Global DOF numbering: one index per unique (node, field-component) pair,
/// block-by-node ordering [c, y_x, y_y, p, g_x, g_y] where present. Slave
/// boundary nodes share their master's indices.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub mode: Mode,
    pub ndof: usize,
    /// Per quadratic-grid node: [y_x, y_y].
    pub y: Vec<[usize; 2]>,
    /// Per corner-grid node.
    pub c: Vec<usize>,
    /// Per corner-grid node; `NO_DOF` in passive mode.
    pub p: Vec<usize>,
    /// Per corner-grid node; `NO_DOF` in passive mode.
    pub g: Vec<[usize; 2]>,
}

pub fn periodic_dof_numbering(mesh: &Mesh, mode: Mode) -> DofMap {
    let (qnx, qny) = (2 * mesh.nx, 2 * mesh.ny);
    let mut y = vec![[NO_DOF; 2]; mesh.n_quad_nodes()];
    let mut c = vec![NO_DOF; mesh.n_corner_nodes()];
    let mut p = vec![NO_DOF; mesh.n_corner_nodes()];
    let mut g = vec![[NO_DOF; 2]; mesh.n_corner_nodes()];

    let mut next = 0usize;
    for iy in 0..qny {
        for ix in 0..qnx {
            let node = iy * (qnx + 1) + ix;
            let corner = if ix % 2 == 0 && iy % 2 == 0 {
                Some((iy / 2) * (mesh.nx + 1) + ix / 2)
            } else {
                None
            };
            if let Some(cn) = corner {
                c[cn] = next;
                next += 1;
            }
            y[node] = [next, next + 1];
            next += 2;
            if mode == Mode::Full {
                if let Some(cn) = corner {
                    p[cn] = next;
                    g[cn] = [next + 1, next + 2];
                    next += 3;
                }
            }
        }
    }

    // Slaves inherit master indices.
    for n in 0..mesh.n_quad_nodes() {
        let m = mesh.quad_master[n];
        if m != n {
            y[n] = y[m];
        }
    }
    for n in 0..mesh.n_corner_nodes() {
        let m = mesh.corner_master[n];
        if m != n {
            c[n] = c[m];
            p[n] = p[m];
            g[n] = g[m];
        }
    }

    DofMap {
        mode,
        ndof: next,
        y,
        c,
        p,
        g,
    }
}
