//! Constitutive response: passive pressure, pili-formation stress, the
//! gradient-continuity penalty stress, the bound-pili pair kinetics closed
//! form and the implicit per-quadrature-point update of the active second
//! Piola-Kirchhoff stress.
//!
//! Everything here is a pure function of local state, so the element loop
//! can evaluate quadrature points in parallel. Directional derivatives of
//! each stress are provided alongside the stress itself; the assembly
//! module combines them into consistent tangent columns.

use crate::error::SimError;
use crate::kinematics::QuadratureKinematics;
use crate::tensor::{ddot, outer, sym, Mat2, Vec2};

/// Clamp floor for the bound-pili density inside the active-stress update.
/// Early in a run p is essentially zero and 1/p is formally singular, but
/// the active stress is then also essentially zero, so the clamped coupling
/// term is benign.
pub const P_FLOOR: f64 = 1e-12;
/// Absolute residual tolerance of the local active-stress Newton solve.
pub const TOL_LOCAL: f64 = 1e-12;
/// Iteration cap of the local active-stress Newton solve.
pub const MAX_LOCAL: usize = 20;

/// Material and interaction parameters. Internal units are micrometers,
/// seconds and piconewtons; the bulk modulus 1 N/m^2 equals 1 pN/um^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    /// Cell radius (um).
    pub r: f64,
    /// Cell bulk modulus (pN/um^2).
    pub e_mod: f64,
    /// Substrate friction coefficient.
    pub xi: f64,
    /// Pili binding rate (1/s).
    pub k_on: f64,
    /// Pili unbinding rate (1/s).
    pub k_off: f64,
    /// Average pili length (um).
    pub ell0: f64,
    /// Pili pair force (pN).
    pub f_p: f64,
    /// Penalty parameter tying g to the spatial density gradient.
    pub lambda_pen: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            r: 1.0,
            e_mod: 1.0,
            xi: 10.0,
            k_on: 0.0178,
            k_off: 0.01,
            ell0: 2.0,
            f_p: 18.0,
            lambda_pen: 1.0,
        }
    }
}

impl MaterialParams {
    /// Close-packing bound 1/(pi R^2) on the spatial cell density.
    pub fn c_max(&self) -> f64 {
        1.0 / (std::f64::consts::PI * self.r * self.r)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("R", self.r),
            ("E_mod", self.e_mod),
            ("xi", self.xi),
            ("k_on", self.k_on),
            ("k_off", self.k_off),
            ("ell0", self.ell0),
            ("f_p", self.f_p),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::InvalidParameter(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if !(self.lambda_pen >= 0.0) || !self.lambda_pen.is_finite() {
            return Err(SimError::InvalidParameter(format!(
                "lambda_pen must be nonnegative, got {}",
                self.lambda_pen
            )));
        }
        Ok(())
    }
}

/// Number of bound pili pairs between two cells at distance `l` after time
/// `t`, from the linear binding/unbinding kinetics with an exponential
/// length preference exp(-l/ell0).
pub fn pili_pair_closed_form(l: f64, t: f64, params: &MaterialParams) -> f64 {
    let rate = params.k_on * (-l / params.ell0).exp()
        / (2.0 * std::f64::consts::PI * params.ell0 * params.ell0 * params.k_off);
    rate * (1.0 - (-params.k_off * t).exp())
}

/// Pressure factor phi(c) = E pi R^2 c / (1 - pi R^2 c) of the passive
/// response; diverges at close packing.
pub fn pressure_factor(c: f64, params: &MaterialParams) -> Result<f64, SimError> {
    let a = std::f64::consts::PI * params.r * params.r;
    if c < 0.0 || c >= 1.0 / a {
        return Err(SimError::DensityOutOfRange {
            c,
            max: 1.0 / a,
        });
    }
    Ok(params.e_mod * a * c / (1.0 - a * c))
}

/// d phi / d c, needed for the tangent.
pub fn pressure_factor_deriv(c: f64, params: &MaterialParams) -> Result<f64, SimError> {
    let a = std::f64::consts::PI * params.r * params.r;
    if c < 0.0 || c >= 1.0 / a {
        return Err(SimError::DensityOutOfRange {
            c,
            max: 1.0 / a,
        });
    }
    let d = 1.0 - a * c;
    Ok(params.e_mod * a / (d * d))
}

/// Passive Piola stress P_p = -phi(c) K.
pub fn passive_piola(c: f64, k: &Mat2, params: &MaterialParams) -> Result<Mat2, SimError> {
    Ok(-pressure_factor(c, params)? * k)
}

/// Directional derivatives of the kinematic measures induced by a
/// variation dF of the deformation gradient. Carrying these around as one
/// bundle keeps the chain rules in the stress derivatives readable.
#[derive(Debug, Clone, Copy, Default)]
pub struct KinematicsVariation {
    pub dj: f64,
    pub df_inv: Mat2,
    pub df_inv_t: Mat2,
    pub db: Mat2,
    pub dk: Mat2,
    pub de: Mat2,
}

impl KinematicsVariation {
    pub fn from_df(kin: &QuadratureKinematics, df: &Mat2) -> Self {
        let dj = ddot(&kin.k, df);
        let df_inv = -kin.f_inv * df * kin.f_inv;
        let df_inv_t = df_inv.transpose();
        let db = df_inv * kin.f_inv_t + kin.f_inv * df_inv_t;
        let dk = dj * kin.f_inv_t + kin.j * df_inv_t;
        let de = sym(&(kin.f.transpose() * df));
        KinematicsVariation {
            dj,
            df_inv,
            df_inv_t,
            db,
            dk,
            de,
        }
    }
}

/// Pili-formation second Piola-Kirchhoff stress. This is the Lagrangian
/// pull-back of the active formation Cauchy stress, with the spatial
/// density gradient represented by the independent field g and the spatial
/// Hessian reconstructed from the material gradient of g.
pub fn pili_formation_stress(
    c: f64,
    g: &Vec2,
    grad_g: &Mat2,
    kin: &QuadratureKinematics,
    params: &MaterialParams,
) -> Mat2 {
    let a = 0.5 * params.f_p * params.k_on * params.ell0;
    let gamma = 0.75 * params.ell0 * params.ell0;
    let b = &kin.b;
    let t1 = c * c * b;
    let t2 = -2.0 * kin.f_inv * outer(g, g) * kin.f_inv_t;
    let t3 = -g.dot(g) * b;
    let t4 = c * ddot(grad_g, &kin.f_inv_t) * b;
    let t5 = c * (kin.f_inv * grad_g * b + b * grad_g.transpose() * kin.f_inv_t);
    a * kin.j * (t1 + gamma * (t2 + t3 + t4 + t5))
}

/// Directional derivative of `pili_formation_stress` for variations of the
/// density, the gradient field, its material gradient and the deformation.
#[allow(clippy::too_many_arguments)]
pub fn pili_formation_stress_delta(
    c: f64,
    g: &Vec2,
    grad_g: &Mat2,
    kin: &QuadratureKinematics,
    dc: f64,
    dg: &Vec2,
    dgrad_g: &Mat2,
    dkin: &KinematicsVariation,
    params: &MaterialParams,
) -> Mat2 {
    let a = 0.5 * params.f_p * params.k_on * params.ell0;
    let gamma = 0.75 * params.ell0 * params.ell0;
    let b = &kin.b;
    let fi = &kin.f_inv;
    let fit = &kin.f_inv_t;
    let gg = outer(g, g);

    let t1 = c * c * b;
    let t2 = -2.0 * fi * gg * fit;
    let t3 = -g.dot(g) * b;
    let tr = ddot(grad_g, fit);
    let t4 = c * tr * b;
    let t5 = c * (fi * grad_g * b + b * grad_g.transpose() * fit);
    let bracket = t1 + gamma * (t2 + t3 + t4 + t5);

    let dt1 = 2.0 * c * dc * b + c * c * dkin.db;
    let dgg = outer(dg, g) + outer(g, dg);
    let dt2 = -2.0 * (dkin.df_inv * gg * fit + fi * dgg * fit + fi * gg * dkin.df_inv_t);
    let dt3 = -2.0 * g.dot(dg) * b - g.dot(g) * dkin.db;
    let dtr = ddot(dgrad_g, fit) + ddot(grad_g, &dkin.df_inv_t);
    let dt4 = dc * tr * b + c * dtr * b + c * tr * dkin.db;
    let dt5 = dc * (fi * grad_g * b + b * grad_g.transpose() * fit)
        + c * (dkin.df_inv * grad_g * b
            + fi * dgrad_g * b
            + fi * grad_g * dkin.db
            + dkin.db * grad_g.transpose() * fit
            + b * dgrad_g.transpose() * fit
            + b * grad_g.transpose() * dkin.df_inv_t);
    let dbracket = dt1 + gamma * (dt2 + dt3 + dt4 + dt5);

    a * (dkin.dj * bracket + kin.j * dbracket)
}

/// Applies the Sherman-Morrison closed-form inverse of the rank-one
/// perturbed identity K = beta I + alpha C (x) D to a right-hand side.
pub fn sherman_morrison_apply(
    beta: f64,
    alpha: f64,
    c: &Mat2,
    d: &Mat2,
    rhs: &Mat2,
) -> Result<Mat2, SimError> {
    let dc = ddot(d, c);
    let denom = beta + alpha * dc;
    let scale = beta.abs().max((alpha * dc).abs()).max(1.0);
    if beta == 0.0 || denom.abs() < 1e-14 * scale {
        return Err(SimError::ShermanMorrisonSingular);
    }
    Ok(rhs / beta - (alpha * ddot(d, rhs) / (beta * denom)) * c)
}

fn active_coupling(p0: f64, dt: f64, params: &MaterialParams) -> (f64, bool) {
    let clamped = p0 <= P_FLOOR;
    let p_eff = p0.max(P_FLOOR);
    (1.0 / (params.ell0 * p_eff * params.f_p * dt), clamped)
}

/// Backward-Euler update of the active stress at one quadrature point:
/// solves R(S) = (S - S_n)/dt + kappa S (S:dE) - S_f + k_off S = 0 with
/// kappa = 1/(ell0 p0 f_p dt) by a local Newton iteration whose tangent
/// beta I + kappa S (x) dE is inverted in closed form.
pub fn active_stress_update(
    s_n: &Mat2,
    de: &Mat2,
    s_f: &Mat2,
    p0: f64,
    dt: f64,
    params: &MaterialParams,
) -> Result<Mat2, SimError> {
    let (kappa, _) = active_coupling(p0, dt, params);
    let mut s = *s_n;
    let mut res_norm = f64::INFINITY;
    for _ in 0..MAX_LOCAL {
        let coupling = kappa * ddot(&s, de);
        let r = (s - s_n) / dt + coupling * s - s_f + params.k_off * s;
        res_norm = r.norm();
        if !res_norm.is_finite() {
            break;
        }
        let beta = 1.0 / dt + params.k_off + coupling;
        match sherman_morrison_apply(beta, kappa, &s, de, &r) {
            Ok(ds) => s -= ds,
            Err(_) if res_norm < TOL_LOCAL => return Ok(sym(&s)),
            Err(e) => return Err(e),
        }
        // One extra (polishing) step after passing the tolerance leaves the
        // iterate at essentially machine accuracy, which keeps downstream
        // finite-difference verification of the tangent free of solver noise.
        if res_norm < TOL_LOCAL {
            return Ok(sym(&s));
        }
    }
    // Accept only a genuinely converged final iterate.
    let r = (s - s_n) / dt + kappa * ddot(&s, de) * s - s_f + params.k_off * s;
    if r.norm() < TOL_LOCAL {
        return Ok(sym(&s));
    }
    Err(SimError::LocalNewtonDiverged {
        iters: MAX_LOCAL,
        residual: res_norm,
    })
}

/// Sensitivity of the converged active stress to variations of its inputs,
/// by implicit differentiation of the local residual at the solution. The
/// variation of p0 contributes only when p0 is above the clamp floor.
pub fn active_stress_delta(
    s_next: &Mat2,
    de: &Mat2,
    p0: f64,
    dt: f64,
    d_sf: &Mat2,
    d_de: &Mat2,
    dp: f64,
    params: &MaterialParams,
) -> Result<Mat2, SimError> {
    let (kappa, clamped) = active_coupling(p0, dt, params);
    let coupling = kappa * ddot(s_next, de);
    let beta = 1.0 / dt + params.k_off + coupling;
    let mut rhs = d_sf - kappa * ddot(s_next, d_de) * s_next;
    if !clamped {
        // d kappa = -kappa/p0 dp
        rhs += (kappa / p0) * dp * ddot(s_next, de) * s_next;
    }
    sherman_morrison_apply(beta, kappa, s_next, de, &rhs)
}

/// Penalty Piola stress enforcing continuity between g and the spatial
/// density gradient:
/// P = lambda J [ |q|^2 F^{-T}/2 - (F^{-T} grad c) (x) (F^{-1} q) ]
/// with q = F^{-T} grad c - g.
pub fn penalty_stress(
    grad_c: &Vec2,
    g: &Vec2,
    kin: &QuadratureKinematics,
    params: &MaterialParams,
) -> Mat2 {
    let u = kin.f_inv_t * grad_c;
    let q = u - g;
    let r = kin.f_inv * q;
    params.lambda_pen * kin.j * (0.5 * q.dot(&q) * kin.f_inv_t - outer(&u, &r))
}

/// Directional derivative of `penalty_stress`.
pub fn penalty_stress_delta(
    grad_c: &Vec2,
    g: &Vec2,
    kin: &QuadratureKinematics,
    dgrad_c: &Vec2,
    dg: &Vec2,
    dkin: &KinematicsVariation,
    params: &MaterialParams,
) -> Mat2 {
    let u = kin.f_inv_t * grad_c;
    let q = u - g;
    let r = kin.f_inv * q;
    let du = dkin.df_inv_t * grad_c + kin.f_inv_t * dgrad_c;
    let dq = du - dg;
    let dr = dkin.df_inv * q + kin.f_inv * dq;
    let lam = params.lambda_pen;
    lam * dkin.dj * (0.5 * q.dot(&q) * kin.f_inv_t - outer(&u, &r))
        + lam
            * kin.j
            * (q.dot(&dq) * kin.f_inv_t + 0.5 * q.dot(&q) * dkin.df_inv_t
                - outer(&du, &r)
                - outer(&u, &dr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::derived_measures;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_sym(rng: &mut StdRng, scale: f64) -> Mat2 {
        let a = rng.gen_range(-scale..scale);
        let b = rng.gen_range(-scale..scale);
        let c = rng.gen_range(-scale..scale);
        Mat2::new(a, c, c, b)
    }

    fn random_mat(rng: &mut StdRng, scale: f64) -> Mat2 {
        Mat2::new(
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
        )
    }

    fn random_f(rng: &mut StdRng) -> Mat2 {
        loop {
            let f = Mat2::identity() + random_mat(rng, 0.3);
            if f.determinant() > 0.2 {
                return f;
            }
        }
    }

    // ---- pili pair kinetics ----

    #[test]
    fn pili_pairs_zero_at_t0() {
        let p = MaterialParams::default();
        assert_eq!(pili_pair_closed_form(1.3, 0.0, &p), 0.0);
    }

    #[test]
    fn pili_pairs_steady_state_value() {
        let p = MaterialParams {
            k_on: 0.1,
            ell0: 1.0,
            k_off: 0.005,
            ..MaterialParams::default()
        };
        let n = pili_pair_closed_form(0.0, 1e9, &p);
        // k_on/(2 pi ell0^2 k_off) = 0.1/(2 pi 0.005)
        assert!((n - 3.1831).abs() < 1e-4);
    }

    #[test]
    fn pili_pairs_match_rk4_oracle() {
        // dn/dt = k_on exp(-l/ell0)/(2 pi ell0^2) - k_off n, n(0) = 0
        let p = MaterialParams::default();
        for &l in &[0.0, 0.7, 2.0, 6.3] {
            for &t in &[0.1, 3.0, 47.0, 512.0] {
                let src = p.k_on * (-l / p.ell0).exp()
                    / (2.0 * std::f64::consts::PI * p.ell0 * p.ell0);
                let rhs = |n: f64| src - p.k_off * n;
                let steps = 1000;
                let h = t / steps as f64;
                let mut n = 0.0;
                for _ in 0..steps {
                    let k1 = rhs(n);
                    let k2 = rhs(n + 0.5 * h * k1);
                    let k3 = rhs(n + 0.5 * h * k2);
                    let k4 = rhs(n + h * k3);
                    n += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
                assert!((pili_pair_closed_form(l, t, &p) - n).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pili_pairs_monotone() {
        let p = MaterialParams::default();
        let mut prev = -1.0;
        for i in 0..50 {
            let n = pili_pair_closed_form(1.0, i as f64 * 2.0, &p);
            assert!(n >= prev);
            prev = n;
        }
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let n = pili_pair_closed_form(i as f64 * 0.2, 10.0, &p);
            assert!(n <= prev);
            prev = n;
        }
    }

    // ---- passive stress ----

    #[test]
    fn passive_zero_density() {
        let p = MaterialParams::default();
        assert_eq!(
            passive_piola(0.0, &Mat2::identity(), &p).unwrap(),
            Mat2::zeros()
        );
    }

    #[test]
    fn passive_reference_value() {
        let p = MaterialParams::default();
        let pp = passive_piola(0.079, &Mat2::identity(), &p).unwrap();
        assert!((pp[(0, 0)] + 0.3301).abs() < 5e-5);
        assert!((pp[(1, 1)] + 0.3301).abs() < 5e-5);
        assert_eq!(pp[(0, 1)], 0.0);
    }

    #[test]
    fn passive_rejects_inadmissible_density() {
        let p = MaterialParams::default();
        assert!(matches!(
            passive_piola(1.0 / std::f64::consts::PI, &Mat2::identity(), &p),
            Err(SimError::DensityOutOfRange { .. })
        ));
        assert!(matches!(
            passive_piola(-0.01, &Mat2::identity(), &p),
            Err(SimError::DensityOutOfRange { .. })
        ));
    }

    #[test]
    fn pressure_factor_strictly_increasing() {
        let p = MaterialParams::default();
        let mut prev = -1.0;
        for i in 0..100 {
            let c = i as f64 / 100.0 * 0.9 * p.c_max();
            let phi = pressure_factor(c, &p).unwrap();
            assert!(phi > prev || i == 0);
            prev = phi;
        }
    }

    #[test]
    fn pressure_factor_deriv_matches_fd() {
        let p = MaterialParams::default();
        let c = 0.13;
        let h = 1e-7;
        let fd = (pressure_factor(c + h, &p).unwrap() - pressure_factor(c - h, &p).unwrap())
            / (2.0 * h);
        assert!((pressure_factor_deriv(c, &p).unwrap() - fd).abs() < 1e-6);
    }

    // ---- pili formation stress ----

    #[test]
    fn formation_stress_uniform_state() {
        let p = MaterialParams::default();
        let kin = derived_measures(&Mat2::identity()).unwrap();
        let s = pili_formation_stress(0.079, &Vec2::zeros(), &Mat2::zeros(), &kin, &p);
        let expect = 0.5 * p.f_p * p.k_on * p.ell0 * 0.079 * 0.079;
        assert!((expect - 0.0020).abs() < 1e-5);
        assert!((s - expect * Mat2::identity()).norm() < 1e-12);
    }

    #[test]
    fn formation_stress_vanishes_without_cells() {
        let p = MaterialParams::default();
        let kin = derived_measures(&Mat2::new(1.2, 0.1, -0.05, 0.9)).unwrap();
        let s = pili_formation_stress(0.0, &Vec2::zeros(), &Mat2::zeros(), &kin, &p);
        assert_eq!(s, Mat2::zeros());
    }

    /// Push-forward oracle: assemble the Cauchy-form expression from
    /// spatial quantities reconstructed out of (c, g, grad_g, F) and pull
    /// it back with J F^{-1} sigma F^{-T}.
    fn formation_oracle(
        c: f64,
        g: &Vec2,
        grad_g: &Mat2,
        kin: &QuadratureKinematics,
        p: &MaterialParams,
    ) -> Mat2 {
        let a = 0.5 * p.f_p * p.k_on * p.ell0;
        let gamma = 0.75 * p.ell0 * p.ell0;
        let grad_g_spatial = grad_g * kin.f_inv;
        let hess = sym(&grad_g_spatial);
        let lap = grad_g_spatial.trace();
        let i = Mat2::identity();
        let sigma = a
            * (c * c * i
                + gamma * (-2.0 * outer(g, g) - g.dot(g) * i + c * lap * i + 2.0 * c * hess));
        kin.j * kin.f_inv * sigma * kin.f_inv_t
    }

    #[test]
    fn formation_stress_matches_pushforward_oracle() {
        let p = MaterialParams::default();
        let mut rng = StdRng::seed_from_u64(71);
        for _ in 0..50 {
            let f = random_f(&mut rng);
            let kin = derived_measures(&f).unwrap();
            let c = rng.gen_range(0.01..0.2);
            let g = Vec2::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            let grad_g = random_mat(&mut rng, 0.05);
            let s = pili_formation_stress(c, &g, &grad_g, &kin, &p);
            let oracle = formation_oracle(c, &g, &grad_g, &kin, &p);
            assert!((s - oracle).norm() < 1e-12 * (1.0 + oracle.norm()));
            assert!(crate::tensor::asym_norm(&s) < 1e-12);
        }
    }

    #[test]
    fn formation_stress_delta_matches_fd() {
        let p = MaterialParams::default();
        let mut rng = StdRng::seed_from_u64(101);
        for _ in 0..20 {
            let f = random_f(&mut rng);
            let c = rng.gen_range(0.02..0.2);
            let g = Vec2::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            let grad_g = random_mat(&mut rng, 0.05);
            let dc = rng.gen_range(-1.0..1.0);
            let dg = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let dgrad_g = random_mat(&mut rng, 1.0);
            let df = random_mat(&mut rng, 1.0);

            let kin = derived_measures(&f).unwrap();
            let dkin = KinematicsVariation::from_df(&kin, &df);
            let delta =
                pili_formation_stress_delta(c, &g, &grad_g, &kin, dc, &dg, &dgrad_g, &dkin, &p);

            let h = 1e-6;
            let eval = |s: f64| {
                let kin = derived_measures(&(f + s * df)).unwrap();
                pili_formation_stress(
                    c + s * dc,
                    &(g + s * dg),
                    &(grad_g + s * dgrad_g),
                    &kin,
                    &p,
                )
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((delta - fd).norm() < 1e-6 * (1.0 + delta.norm()));
        }
    }

    // ---- Sherman-Morrison ----

    #[test]
    fn sherman_morrison_identity_case() {
        let rhs = Mat2::new(1.0, 2.0, 2.0, -3.0);
        let out =
            sherman_morrison_apply(2.0, 0.0, &Mat2::identity(), &Mat2::identity(), &rhs).unwrap();
        assert!((out - rhs / 2.0).norm() < 1e-15);
    }

    #[test]
    fn sherman_morrison_hand_value() {
        let i = Mat2::identity();
        let out = sherman_morrison_apply(1.0, 1.0, &i, &i, &i).unwrap();
        assert!((out - i / 3.0).norm() < 1e-14);
    }

    #[test]
    fn sherman_morrison_matches_dense_oracle() {
        // Represent symmetric 2x2 tensors in the basis
        // [1 0;0 0], [0 0;0 1], [0 1;1 0] and invert the 3x3 operator.
        let mut rng = StdRng::seed_from_u64(5);
        let basis = [
            Mat2::new(1.0, 0.0, 0.0, 0.0),
            Mat2::new(0.0, 0.0, 0.0, 1.0),
            Mat2::new(0.0, 1.0, 1.0, 0.0),
        ];
        let coords = |m: &Mat2| nalgebra::Vector3::new(m[(0, 0)], m[(1, 1)], m[(0, 1)]);
        for _ in 0..50 {
            let beta = rng.gen_range(0.5..3.0);
            let alpha = rng.gen_range(-1.0..1.0);
            let c = random_sym(&mut rng, 1.0);
            let d = random_sym(&mut rng, 0.3);
            let rhs = random_sym(&mut rng, 1.0);
            let mut dense = nalgebra::Matrix3::zeros();
            for (col, e) in basis.iter().enumerate() {
                let ke = beta * e + alpha * ddot(&d, e) * c;
                dense.set_column(col, &coords(&ke));
            }
            let Some(inv) = dense.try_inverse() else {
                continue;
            };
            let x = inv * coords(&rhs);
            let oracle = Mat2::new(x[0], x[2], x[2], x[1]);
            let out = sherman_morrison_apply(beta, alpha, &c, &d, &rhs).unwrap();
            assert!((out - oracle).norm() < 1e-10 * (1.0 + oracle.norm()));
        }
    }

    #[test]
    fn sherman_morrison_singular_denominator() {
        let i = Mat2::identity();
        // beta + alpha (D:C) = 1 - 1 = 0
        assert!(matches!(
            sherman_morrison_apply(1.0, -0.5, &i, &i, &i),
            Err(SimError::ShermanMorrisonSingular)
        ));
    }

    // ---- active stress update ----

    #[test]
    fn active_update_trivial_fixed_point() {
        let p = MaterialParams::default();
        let s = active_stress_update(
            &Mat2::zeros(),
            &Mat2::zeros(),
            &Mat2::zeros(),
            0.05,
            0.5,
            &p,
        )
        .unwrap();
        assert_eq!(s, Mat2::zeros());
    }

    #[test]
    fn active_update_linear_closed_form() {
        // With dE = 0 the residual is linear:
        // S = S_f dt/(1 + k_off dt) = 0.002*0.5/1.005
        let p = MaterialParams::default();
        let s_f = 0.002 * Mat2::identity();
        let s = active_stress_update(&Mat2::zeros(), &Mat2::zeros(), &s_f, 0.05, 0.5, &p).unwrap();
        assert!((s[(0, 0)] - 9.950e-4).abs() < 1e-6);
        assert!((s - s[(0, 0)] * Mat2::identity()).norm() < 1e-15);
    }

    /// RK4 integration of dS/dt = -(S:Edot) S/(ell0 p f_p) + S_f - k_off S
    /// with Edot = dE/dt held constant over the step.
    fn active_rk4_oracle(
        s_n: &Mat2,
        de: &Mat2,
        s_f: &Mat2,
        p0: f64,
        dt: f64,
        p: &MaterialParams,
    ) -> Mat2 {
        let edot = de / dt;
        let rhs = |s: &Mat2| -> Mat2 {
            -ddot(s, &edot) / (p.ell0 * p0 * p.f_p) * s + s_f - p.k_off * s
        };
        let steps = 1000;
        let h = dt / steps as f64;
        let mut s = *s_n;
        for _ in 0..steps {
            let k1 = rhs(&s);
            let k2 = rhs(&(s + 0.5 * h * k1));
            let k3 = rhs(&(s + 0.5 * h * k2));
            let k4 = rhs(&(s + h * k3));
            s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        s
    }

    #[test]
    fn active_update_matches_rk4_oracle() {
        let p = MaterialParams::default();
        let mut rng = StdRng::seed_from_u64(33);
        for _ in 0..100 {
            let dt = 10f64.powf(rng.gen_range(-4.0..-2.0));
            let p0 = rng.gen_range(0.01..0.1);
            let s_n = random_sym(&mut rng, 0.01);
            let s_f = random_sym(&mut rng, 0.01);
            let de = random_sym(&mut rng, 0.001);
            let s = active_stress_update(&s_n, &de, &s_f, p0, dt, &p).unwrap();
            let oracle = active_rk4_oracle(&s_n, &de, &s_f, p0, dt, &p);
            assert!((s - oracle).norm() < 1e-6 * (oracle.norm() + 1e-9));
        }
    }

    #[test]
    fn active_update_stays_symmetric() {
        let p = MaterialParams::default();
        let mut rng = StdRng::seed_from_u64(91);
        let mut s = Mat2::zeros();
        for _ in 0..200 {
            let de = random_sym(&mut rng, 0.01);
            let s_f = random_sym(&mut rng, 0.005).abs() * 0.5;
            s = active_stress_update(&s, &de, &s_f, 0.05, 0.5, &p).unwrap();
            assert!(crate::tensor::asym_norm(&s) < 1e-12);
        }
    }

    #[test]
    fn active_update_first_order_consistent() {
        // (S_next - S_n)/dt must converge to the continuous rate at S_n.
        let p = MaterialParams::default();
        let s_n = Mat2::new(0.01, 0.002, 0.002, -0.005);
        let s_f = Mat2::new(0.002, 0.0, 0.0, 0.002);
        let edot = Mat2::new(0.001, 0.0002, 0.0002, -0.0004);
        let p0 = 0.05;
        let rate0 =
            -ddot(&s_n, &edot) / (p.ell0 * p0 * p.f_p) * s_n + s_f - p.k_off * s_n;
        let err = |dt: f64| -> f64 {
            let de = edot * dt;
            let s = active_stress_update(&s_n, &de, &s_f, p0, dt, &p).unwrap();
            ((s - s_n) / dt - rate0).norm()
        };
        let e1 = err(1e-2);
        let e2 = err(5e-3);
        let e3 = err(2.5e-3);
        assert!(e2 / e1 > 0.3 && e2 / e1 < 0.7);
        assert!(e3 / e2 > 0.3 && e3 / e2 < 0.7);
    }

    #[test]
    fn active_update_clamps_vanishing_pili_density() {
        let p = MaterialParams::default();
        let s_f = 0.002 * Mat2::identity();
        let de = Mat2::new(1e-3, 0.0, 0.0, 1e-3);
        // p0 = 0 with S_n = 0: the coupling term stays finite and small.
        let s = active_stress_update(&Mat2::zeros(), &de, &s_f, 0.0, 0.5, &p).unwrap();
        assert!(s.norm().is_finite());
        assert!(s.norm() < 0.01);
    }

    #[test]
    fn active_delta_matches_fd() {
        let p = MaterialParams::default();
        let mut rng = StdRng::seed_from_u64(55);
        for _ in 0..20 {
            let dt = 0.3;
            let p0 = rng.gen_range(0.02..0.1);
            let s_n = random_sym(&mut rng, 0.01);
            let s_f = random_sym(&mut rng, 0.01);
            let de = random_sym(&mut rng, 0.005);
            let d_sf = random_sym(&mut rng, 1.0);
            let d_de = random_sym(&mut rng, 1.0);
            let dp = rng.gen_range(-1.0..1.0);

            let s = active_stress_update(&s_n, &de, &s_f, p0, dt, &p).unwrap();
            let delta = active_stress_delta(&s, &de, p0, dt, &d_sf, &d_de, dp, &p).unwrap();

            let h = 1e-7;
            let eval = |t: f64| {
                active_stress_update(
                    &s_n,
                    &(de + t * d_de),
                    &(s_f + t * d_sf),
                    p0 + t * dp,
                    dt,
                    &p,
                )
                .unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((delta - fd).norm() < 1e-5 * (1.0 + delta.norm()));
        }
    }

    // ---- penalty stress ----

    #[test]
    fn penalty_vanishes_when_constraint_satisfied() {
        let p = MaterialParams::default();
        let f = Mat2::new(1.3, 0.2, -0.1, 0.8);
        let kin = derived_measures(&f).unwrap();
        let grad_c = Vec2::new(0.03, -0.07);
        let g = kin.f_inv_t * grad_c;
        let s = penalty_stress(&grad_c, &g, &kin, &p);
        assert!(s.norm() < 1e-15);
    }

    #[test]
    fn penalty_vanishes_without_penalty() {
        let p = MaterialParams {
            lambda_pen: 0.0,
            ..MaterialParams::default()
        };
        let kin = derived_measures(&Mat2::new(1.1, 0.0, 0.0, 0.9)).unwrap();
        let s = penalty_stress(&Vec2::new(0.1, 0.2), &Vec2::new(-0.3, 0.05), &kin, &p);
        assert_eq!(s, Mat2::zeros());
    }

    #[test]
    fn penalty_matches_fd_of_energy() {
        // P must be the derivative of psi(F) = lambda J |F^{-T} grad c - g|^2 / 2
        // with respect to F.
        let p = MaterialParams::default();
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..30 {
            let f = random_f(&mut rng);
            let grad_c = Vec2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let g = Vec2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let kin = derived_measures(&f).unwrap();
            let stress = penalty_stress(&grad_c, &g, &kin, &p);
            let psi = |f: &Mat2| -> f64 {
                let kin = derived_measures(f).unwrap();
                let q = kin.f_inv_t * grad_c - g;
                0.5 * p.lambda_pen * kin.j * q.dot(&q)
            };
            let h = 1e-6;
            for i in 0..2 {
                for j in 0..2 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(i, j)] += h;
                    fm[(i, j)] -= h;
                    let fd = (psi(&fp) - psi(&fm)) / (2.0 * h);
                    assert!((stress[(i, j)] - fd).abs() < 1e-6 * (1.0 + stress.norm()));
                }
            }
        }
    }

    #[test]
    fn penalty_delta_matches_fd() {
        let p = MaterialParams::default();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let f = random_f(&mut rng);
            let grad_c = Vec2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let g = Vec2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let dgrad_c = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let dg = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let df = random_mat(&mut rng, 1.0);
            let kin = derived_measures(&f).unwrap();
            let dkin = KinematicsVariation::from_df(&kin, &df);
            let delta = penalty_stress_delta(&grad_c, &g, &kin, &dgrad_c, &dg, &dkin, &p);
            let h = 1e-6;
            let eval = |t: f64| {
                let kin = derived_measures(&(f + t * df)).unwrap();
                penalty_stress(&(grad_c + t * dgrad_c), &(g + t * dg), &kin, &p)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((delta - fd).norm() < 1e-6 * (1.0 + delta.norm()));
        }
    }

    #[test]
    fn kinematics_variation_matches_fd() {
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..20 {
            let f = random_f(&mut rng);
            let df = random_mat(&mut rng, 1.0);
            let kin = derived_measures(&f).unwrap();
            let dkin = KinematicsVariation::from_df(&kin, &df);
            let h = 1e-6;
            let kp = derived_measures(&(f + h * df)).unwrap();
            let km = derived_measures(&(f - h * df)).unwrap();
            assert!(((kp.j - km.j) / (2.0 * h) - dkin.dj).abs() < 1e-7);
            assert!(((kp.f_inv - km.f_inv) / (2.0 * h) - dkin.df_inv).norm() < 1e-6);
            assert!(((kp.b - km.b) / (2.0 * h) - dkin.db).norm() < 1e-6);
            assert!(((kp.k - km.k) / (2.0 * h) - dkin.dk).norm() < 1e-6);
            assert!(((kp.e - km.e) / (2.0 * h) - dkin.de).norm() < 1e-7);
        }
    }

    #[test]
    fn params_validation() {
        assert!(MaterialParams::default().validate().is_ok());
        let bad = MaterialParams {
            k_off: 0.0,
            ..MaterialParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = MaterialParams {
            lambda_pen: -1.0,
            ..MaterialParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
