//! Time integration: backward Euler with adaptive step control, a global
//! Newton-Raphson iteration per step, and a sparse direct linear solver.
//!
//! Step acceptance is driven purely by Newton convergence: a step that
//! fails to converge (or walks into an inadmissible state, e.g. element
//! inversion or density beyond close packing) is rejected and retried with
//! a smaller dt; steps converging in very few iterations let dt grow.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assembly::{apply_increment, assemble, FieldState};
use crate::constitutive::MaterialParams;
use crate::error::SimError;
use crate::mesh::{DofMap, Mesh, Mode};
use crate::tensor::Vec2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt_init: f64,
    pub dt_growth: f64,
    pub dt_shrink: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub newton_tol_abs: f64,
    pub newton_tol_rel: f64,
    pub newton_max_iter: usize,
    /// Steps converging within this many iterations enlarge dt.
    pub fast_iter_threshold: usize,
    pub t_end: f64,
    /// Use per-field RMS norms instead of the plain Euclidean DOF norm.
    pub scaled_norm: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt_init: 0.5,
            dt_growth: 1.2,
            dt_shrink: 0.5,
            dt_min: 1e-6,
            dt_max: 20.0,
            newton_tol_abs: 1e-9,
            newton_tol_rel: 1e-12,
            newton_max_iter: 12,
            fast_iter_threshold: 4,
            t_end: 100.0,
            scaled_norm: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt_shrink > 0.0 && self.dt_shrink < 1.0 && self.dt_growth > 1.0) {
            return Err(SimError::ConfigValidation(format!(
                "need 0 < dt_shrink < 1 < dt_growth, got {} and {}",
                self.dt_shrink, self.dt_growth
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(SimError::ConfigValidation(format!(
                "need 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            )));
        }
        if !(self.newton_tol_abs > 0.0 && self.newton_tol_rel > 0.0) {
            return Err(SimError::ConfigValidation(
                "Newton tolerances must be positive".into(),
            ));
        }
        if self.newton_max_iter == 0 {
            return Err(SimError::ConfigValidation(
                "newton_max_iter must be at least 1".into(),
            ));
        }
        if !(self.t_end >= 0.0) {
            return Err(SimError::ConfigValidation("t_end must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub accepted: bool,
    pub newton_iters: usize,
    pub residual_history: Vec<f64>,
    pub dt_used: f64,
}

/// Result of one attempted implicit step.
pub enum NewtonOutcome {
    Converged(FieldState, StepReport),
    Failed(StepReport),
}

/// Errors that mean "this step is bad, retry smaller" rather than "the
/// problem setup is broken".
fn is_retryable(e: &SimError) -> bool {
    matches!(
        e,
        SimError::ElementInversion { .. }
            | SimError::DensityOutOfRange { .. }
            | SimError::LocalNewtonDiverged { .. }
            | SimError::ShermanMorrisonSingular
            | SimError::NewtonDiverged { .. }
            | SimError::LinearSolve(_)
    )
}

/// Residual norm, either plain Euclidean or per-field RMS (maximum over
/// field blocks), over the unique DOFs.
fn residual_norm(res: &[f64], mesh: &Mesh, dofs: &DofMap, scaled: bool) -> f64 {
    if !scaled {
        return res.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); 4];
    for nd in 0..mesh.n_corner_nodes() {
        if mesh.is_master_corner(nd) {
            blocks[0].push(dofs.c[nd]);
            if dofs.mode == Mode::Full {
                blocks[2].push(dofs.p[nd]);
                blocks[3].push(dofs.g[nd][0]);
                blocks[3].push(dofs.g[nd][1]);
            }
        }
    }
    for nd in 0..mesh.n_quad_nodes() {
        if mesh.is_master_quad(nd) {
            blocks[1].push(dofs.y[nd][0]);
            blocks[1].push(dofs.y[nd][1]);
        }
    }
    blocks
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| {
            (b.iter().map(|&i| res[i] * res[i]).sum::<f64>() / b.len() as f64).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Nodal admissibility of a candidate accepted state.
fn check_admissible(state: &FieldState, params: &MaterialParams) -> Result<(), SimError> {
    let c_max = params.c_max();
    for &c in &state.c {
        if !(c > 0.0 && c < c_max) {
            return Err(SimError::DensityOutOfRange { c, max: c_max });
        }
    }
    Ok(())
}

/// Direct sparse solve of `K x = rhs` with an a-posteriori residual check.
pub fn linear_solve(
    ndof: usize,
    triplets: &[(usize, usize, f64)],
    rhs: &[f64],
) -> Result<Vec<f64>, SimError> {
    use faer::prelude::SpSolver;
    use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
    use faer::sparse::SparseColMat;

    // Merge duplicate entries deterministically before handing to faer.
    let mut merged: Vec<(usize, usize, f64)> = triplets.to_vec();
    merged.sort_unstable_by_key(|&(r, c, _)| (c, r));
    merged.dedup_by(|a, b| {
        if a.0 == b.0 && a.1 == b.1 {
            b.2 += a.2;
            true
        } else {
            false
        }
    });

    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(ndof, ndof, &merged)
        .map_err(|e| SimError::LinearSolve(format!("matrix construction: {e:?}")))?;
    let symbolic = SymbolicLu::try_new(mat.symbolic())
        .map_err(|e| SimError::LinearSolve(format!("symbolic factorization: {e:?}")))?;
    let lu = Lu::try_new_with_symbolic(symbolic, mat.as_ref())
        .map_err(|e| SimError::LinearSolve(format!("numeric factorization: {e:?}")))?;
    let b = faer::Mat::from_fn(ndof, 1, |i, _| rhs[i]);
    let x = lu.solve(b.as_ref());
    let x: Vec<f64> = (0..ndof).map(|i| x[(i, 0)]).collect();

    // Verify against the original triplets; a silent bad factorization of a
    // near-singular matrix must surface as a rejection, not a wrong update.
    let mut check = rhs.to_vec();
    for &(r, c, v) in &merged {
        check[r] -= v * x[c];
    }
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let res_norm = check.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !res_norm.is_finite() || res_norm > 1e-10 * rhs_norm.max(1e-300) {
        return Err(SimError::LinearSolve(format!(
            "solution residual {res_norm:.3e} exceeds 1e-10 * {rhs_norm:.3e}"
        )));
    }
    Ok(x)
}

/// One backward-Euler step by Newton-Raphson from the predictor `guess`.
pub fn newton_solve(
    guess: &FieldState,
    prev: &FieldState,
    dt: f64,
    mesh: &Mesh,
    dofs: &DofMap,
    params: &MaterialParams,
    config: &SolverConfig,
) -> Result<NewtonOutcome, SimError> {
    let mut state = guess.clone();
    let mut history = Vec::new();
    let fail = |history: Vec<f64>, iters: usize| {
        Ok(NewtonOutcome::Failed(StepReport {
            accepted: false,
            newton_iters: iters,
            residual_history: history,
            dt_used: dt,
        }))
    };

    for it in 0..=config.newton_max_iter {
        let asm = match assemble(&state, prev, dt, mesh, dofs, params, true) {
            Ok(a) => a,
            Err(e) if is_retryable(&e) => return fail(history, it),
            Err(e) => return Err(e),
        };
        let norm = residual_norm(&asm.residual, mesh, dofs, config.scaled_norm);
        if !norm.is_finite() {
            return fail(history, it);
        }
        history.push(norm);
        let tol = config
            .newton_tol_abs
            .max(config.newton_tol_rel * history[0]);
        if norm < tol {
            if let Err(e) = check_admissible(&state, params) {
                if is_retryable(&e) {
                    return fail(history, it);
                }
                return Err(e);
            }
            state.s_a = asm.s_a_next;
            state.time = prev.time + dt;
            return Ok(NewtonOutcome::Converged(
                state,
                StepReport {
                    accepted: true,
                    newton_iters: it,
                    residual_history: history,
                    dt_used: dt,
                },
            ));
        }
        if it == config.newton_max_iter {
            break;
        }
        let du = match linear_solve(dofs.ndof, &asm.triplets, &asm.residual) {
            Ok(x) => x,
            Err(e) if is_retryable(&e) => return fail(history, it),
            Err(e) => return Err(e),
        };
        apply_increment(&mut state, &du, mesh, dofs, -1.0);
    }
    fail(history, config.newton_max_iter)
}

/// Accepted trajectory of an adaptive backward-Euler run.
pub struct Trajectory {
    pub states: Vec<FieldState>,
    pub reports: Vec<StepReport>,
}

/// Advances from `state0` to `t_end` with adaptive time stepping. The
/// callback sees every accepted state as it is produced.
pub fn advance(
    state0: FieldState,
    mesh: &Mesh,
    dofs: &DofMap,
    params: &MaterialParams,
    config: &SolverConfig,
    mut callback: impl FnMut(&FieldState, &StepReport),
) -> Result<Trajectory, SimError> {
    config.validate()?;
    params.validate()?;
    let mut states = vec![state0];
    let mut reports = Vec::new();
    let mut dt = config.dt_init;
    let t_end = states[0].time + config.t_end;

    while states.last().unwrap().time < t_end * (1.0 - 1e-14) - 1e-300 {
        let prev = states.last().unwrap();
        let dt_step = dt.min(t_end - prev.time);
        match newton_solve(prev, prev, dt_step, mesh, dofs, params, config)? {
            NewtonOutcome::Converged(next, report) => {
                callback(&next, &report);
                if report.newton_iters <= config.fast_iter_threshold {
                    dt = (dt * config.dt_growth).min(config.dt_max);
                }
                states.push(next);
                reports.push(report);
            }
            NewtonOutcome::Failed(report) => {
                if dt_step <= config.dt_min * (1.0 + 1e-12) {
                    return Err(SimError::TimeStepUnderflow {
                        t: prev.time,
                        dt_min: config.dt_min,
                    });
                }
                dt = (dt_step * config.dt_shrink).max(config.dt_min);
                reports.push(report);
            }
        }
    }
    Ok(Trajectory { states, reports })
}

/// Random initial condition around a uniform density.
#[derive(Debug, Clone, Copy)]
pub struct InitialCondition {
    pub base: f64,
    pub amp: f64,
    pub seed: u64,
}

/// Uniform density with a seeded relative perturbation per unique corner
/// node; undeformed map, no bound pili, zero gradient field and stress.
pub fn initialize_state(
    mesh: &Mesh,
    params: &MaterialParams,
    ic: &InitialCondition,
) -> Result<FieldState, SimError> {
    if !(ic.base > 0.0 && ic.base < params.c_max()) {
        return Err(SimError::DensityOutOfRange {
            c: ic.base,
            max: params.c_max(),
        });
    }
    if !(0.0..1.0).contains(&ic.amp) {
        return Err(SimError::InvalidParameter(format!(
            "perturbation amplitude must lie in [0, 1), got {}",
            ic.amp
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ic.seed);
    let mut state = FieldState::reference(mesh, ic.base);
    for nd in 0..mesh.n_corner_nodes() {
        if mesh.is_master_corner(nd) {
            let factor = if ic.amp > 0.0 {
                1.0 + rng.gen_range(-ic.amp..ic.amp)
            } else {
                1.0
            };
            state.c[nd] = ic.base * factor;
        }
    }
    for nd in 0..mesh.n_corner_nodes() {
        state.c[nd] = state.c[mesh.corner_master[nd]];
    }
    check_admissible(&state, params)?;
    Ok(state)
}

/// Initial condition from an explicit density function of the material
/// position (used by scenario presets); other fields as in
/// `initialize_state`.
pub fn initialize_with_density(
    mesh: &Mesh,
    params: &MaterialParams,
    density: impl Fn(Vec2) -> f64,
) -> Result<FieldState, SimError> {
    let mut state = FieldState::reference(mesh, 0.0);
    for nd in 0..mesh.n_corner_nodes() {
        let m = mesh.corner_master[nd];
        state.c[nd] = density(mesh.corner_coords[m]);
    }
    check_admissible(&state, params)?;
    Ok(state)
}
