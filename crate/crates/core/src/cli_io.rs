//! Configuration files, scenario presets, snapshot and diagnostics output.
//!
//! The config format is line-oriented `key = value` with `[section]`
//! headers and `#` comments. Unknown keys are rejected with the offending
//! line number; missing keys fall back to the documented defaults.
//! Snapshots are plain text with round-trip-exact float formatting, so a
//! written state can be reloaded as an initial condition bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::{bridge_length, diagnostics, Diagnostics};
use crate::assembly::FieldState;
use crate::constitutive::MaterialParams;
use crate::error::SimError;
use crate::mesh::{build_periodic_grid, periodic_dof_numbering, Mesh, Mode};
use crate::solver::{
    advance, initialize_state, initialize_with_density, InitialCondition, SolverConfig,
    StepReport, Trajectory,
};
use crate::tensor::Vec2;

/// Initial-condition selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IcSpec {
    /// Uniform density with a seeded relative perturbation.
    Uniform { base: f64, amp: f64, seed: u64 },
    /// Two Gaussian colonies on a uniform background, centered on the
    /// horizontal midline and separated along x.
    TwoColony {
        base: f64,
        bump_amp: f64,
        bump_sigma: f64,
        separation: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: MaterialParams,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub solver: SolverConfig,
    pub ic: IcSpec,
    pub mode: Mode,
    /// Simulated-time interval between snapshots; 0 disables intermediate
    /// snapshots (initial and final states are always written).
    pub snapshot_interval: f64,
    /// Simulated-time interval between diagnostics rows; 0 = every step.
    pub diagnostics_interval: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: MaterialParams::default(),
            nx: 20,
            ny: 20,
            lx: 80.0,
            ly: 80.0,
            solver: SolverConfig::default(),
            ic: IcSpec::Uniform {
                base: 0.079,
                amp: 0.001,
                seed: 0,
            },
            mode: Mode::Full,
            snapshot_interval: 0.0,
            diagnostics_interval: 0.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize) -> Result<T, SimError> {
    value.trim().parse().map_err(|_| SimError::ConfigParse {
        line,
        msg: format!("cannot parse value `{value}`"),
    })
}

fn parse_bool(value: &str, line: usize) -> Result<bool, SimError> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(SimError::ConfigParse {
            line,
            msg: format!("expected a boolean, got `{other}`"),
        }),
    }
}

/// Mutable view of the IC fields as flat keys, materializing the requested
/// variant on first touch of a variant-specific key.
fn set_ic_key(cfg: &mut RunConfig, key: &str, value: &str, line: usize) -> Result<(), SimError> {
    match key {
        "kind" => {
            cfg.ic = match value.trim() {
                "uniform" => IcSpec::Uniform {
                    base: 0.079,
                    amp: 0.001,
                    seed: 0,
                },
                "two_colony" => IcSpec::TwoColony {
                    base: 0.02,
                    bump_amp: 0.12,
                    bump_sigma: 8.0,
                    separation: 24.0,
                },
                other => {
                    return Err(SimError::ConfigParse {
                        line,
                        msg: format!("unknown ic kind `{other}`"),
                    })
                }
            };
            Ok(())
        }
        "base" => {
            let v = parse_num(value, line)?;
            match &mut cfg.ic {
                IcSpec::Uniform { base, .. } | IcSpec::TwoColony { base, .. } => *base = v,
            }
            Ok(())
        }
        "amp" => match &mut cfg.ic {
            IcSpec::Uniform { amp, .. } => {
                *amp = parse_num(value, line)?;
                Ok(())
            }
            _ => Err(SimError::ConfigParse {
                line,
                msg: "`amp` applies to the uniform ic only".into(),
            }),
        },
        "seed" => match &mut cfg.ic {
            IcSpec::Uniform { seed, .. } => {
                *seed = parse_num(value, line)?;
                Ok(())
            }
            _ => Err(SimError::ConfigParse {
                line,
                msg: "`seed` applies to the uniform ic only".into(),
            }),
        },
        "bump_amp" | "bump_sigma" | "separation" => match &mut cfg.ic {
            IcSpec::TwoColony {
                bump_amp,
                bump_sigma,
                separation,
                ..
            } => {
                let v = parse_num(value, line)?;
                match key {
                    "bump_amp" => *bump_amp = v,
                    "bump_sigma" => *bump_sigma = v,
                    _ => *separation = v,
                }
                Ok(())
            }
            _ => Err(SimError::ConfigParse {
                line,
                msg: format!("`{key}` applies to the two_colony ic only"),
            }),
        },
        other => Err(SimError::ConfigParse {
            line,
            msg: format!("unknown key `{other}` in [ic]"),
        }),
    }
}

/// Applies one `section.key = value` assignment.
fn set_key(
    cfg: &mut RunConfig,
    section: &str,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), SimError> {
    match (section, key) {
        ("material", "R") => cfg.params.r = parse_num(value, line)?,
        ("material", "E_mod") => cfg.params.e_mod = parse_num(value, line)?,
        ("material", "xi") => cfg.params.xi = parse_num(value, line)?,
        ("material", "k_on") => cfg.params.k_on = parse_num(value, line)?,
        ("material", "k_off") => cfg.params.k_off = parse_num(value, line)?,
        ("material", "ell0") => cfg.params.ell0 = parse_num(value, line)?,
        ("material", "f_p") => cfg.params.f_p = parse_num(value, line)?,
        ("material", "lambda") => cfg.params.lambda_pen = parse_num(value, line)?,
        ("mesh", "nx") => cfg.nx = parse_num(value, line)?,
        ("mesh", "ny") => cfg.ny = parse_num(value, line)?,
        ("mesh", "lx") => cfg.lx = parse_num(value, line)?,
        ("mesh", "ly") => cfg.ly = parse_num(value, line)?,
        ("solver", "dt_init") => cfg.solver.dt_init = parse_num(value, line)?,
        ("solver", "dt_growth") => cfg.solver.dt_growth = parse_num(value, line)?,
        ("solver", "dt_shrink") => cfg.solver.dt_shrink = parse_num(value, line)?,
        ("solver", "dt_min") => cfg.solver.dt_min = parse_num(value, line)?,
        ("solver", "dt_max") => cfg.solver.dt_max = parse_num(value, line)?,
        ("solver", "newton_tol_abs") => cfg.solver.newton_tol_abs = parse_num(value, line)?,
        ("solver", "newton_tol_rel") => cfg.solver.newton_tol_rel = parse_num(value, line)?,
        ("solver", "newton_max_iter") => cfg.solver.newton_max_iter = parse_num(value, line)?,
        ("solver", "fast_iter_threshold") => {
            cfg.solver.fast_iter_threshold = parse_num(value, line)?
        }
        ("solver", "t_end") => cfg.solver.t_end = parse_num(value, line)?,
        ("solver", "scaled_norm") => cfg.solver.scaled_norm = parse_bool(value, line)?,
        ("ic", k) => set_ic_key(cfg, k, value, line)?,
        ("run", "mode") => {
            cfg.mode = match value.trim() {
                "full" => Mode::Full,
                "passive_only" => Mode::PassiveOnly,
                other => {
                    return Err(SimError::ConfigParse {
                        line,
                        msg: format!("unknown mode `{other}`"),
                    })
                }
            }
        }
        ("run", "snapshot_interval") => cfg.snapshot_interval = parse_num(value, line)?,
        ("run", "diagnostics_interval") => cfg.diagnostics_interval = parse_num(value, line)?,
        (s, k) => {
            return Err(SimError::ConfigParse {
                line,
                msg: format!("unknown key `{k}` in [{s}]"),
            })
        }
    }
    Ok(())
}

fn validate_config(cfg: &RunConfig) -> Result<(), SimError> {
    cfg.params
        .validate()
        .map_err(|e| SimError::ConfigValidation(e.to_string()))?;
    cfg.solver.validate()?;
    if cfg.nx < 2 || cfg.ny < 2 || !(cfg.lx > 0.0 && cfg.ly > 0.0) {
        return Err(SimError::ConfigValidation(format!(
            "mesh must be at least 2x2 on a positive domain, got {}x{} on {} x {}",
            cfg.nx, cfg.ny, cfg.lx, cfg.ly
        )));
    }
    let c_max = cfg.params.c_max();
    let base_ok = |b: f64| b > 0.0 && b < c_max;
    match cfg.ic {
        IcSpec::Uniform { base, amp, .. } => {
            if !base_ok(base) || !(0.0..1.0).contains(&amp) {
                return Err(SimError::ConfigValidation(format!(
                    "uniform ic needs base in (0, {c_max:.4}) and amp in [0, 1)"
                )));
            }
        }
        IcSpec::TwoColony {
            base,
            bump_amp,
            bump_sigma,
            separation,
        } => {
            if !base_ok(base) || !base_ok(base + 2.0 * bump_amp.max(0.0)) {
                return Err(SimError::ConfigValidation(format!(
                    "two_colony ic peaks must stay in (0, {c_max:.4})"
                )));
            }
            if !(bump_sigma > 0.0 && separation > 0.0 && bump_amp > 0.0) {
                return Err(SimError::ConfigValidation(
                    "two_colony ic needs positive bump_amp, bump_sigma, separation".into(),
                ));
            }
        }
    }
    if cfg.snapshot_interval < 0.0 || cfg.diagnostics_interval < 0.0 {
        return Err(SimError::ConfigValidation(
            "output intervals must be nonnegative".into(),
        ));
    }
    Ok(())
}

/// Parses a config file; returns the config and any advisory warnings.
pub fn parse_config(text: &str) -> Result<(RunConfig, Vec<String>), SimError> {
    let mut cfg = RunConfig::default();
    let mut section = String::from("run");
    let mut active_keys_set: Vec<String> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !["material", "mesh", "solver", "ic", "run"].contains(&name) {
                return Err(SimError::ConfigParse {
                    line: line_no,
                    msg: format!("unknown section `[{name}]`"),
                });
            }
            section = name.to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SimError::ConfigParse {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim();
        set_key(&mut cfg, &section, key, value, line_no)?;
        if section == "material" && ["f_p", "k_on", "lambda"].contains(&key) {
            active_keys_set.push(key.to_string());
        }
    }

    validate_config(&cfg)?;
    let mut warnings = Vec::new();
    if cfg.mode == Mode::PassiveOnly {
        for k in active_keys_set {
            warnings.push(format!(
                "`{k}` has no effect in passive_only mode and is ignored"
            ));
        }
    }
    Ok((cfg, warnings))
}

/// Serializes a config in the same format `parse_config` reads.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let p = &cfg.params;
    let _ = writeln!(s, "[material]");
    let _ = writeln!(s, "R = {}", p.r);
    let _ = writeln!(s, "E_mod = {}", p.e_mod);
    let _ = writeln!(s, "xi = {}", p.xi);
    let _ = writeln!(s, "k_on = {}", p.k_on);
    let _ = writeln!(s, "k_off = {}", p.k_off);
    let _ = writeln!(s, "ell0 = {}", p.ell0);
    let _ = writeln!(s, "f_p = {}", p.f_p);
    let _ = writeln!(s, "lambda = {}", p.lambda_pen);
    let _ = writeln!(s, "\n[mesh]");
    let _ = writeln!(s, "nx = {}\nny = {}\nlx = {}\nly = {}", cfg.nx, cfg.ny, cfg.lx, cfg.ly);
    let v = &cfg.solver;
    let _ = writeln!(s, "\n[solver]");
    let _ = writeln!(s, "dt_init = {}", v.dt_init);
    let _ = writeln!(s, "dt_growth = {}", v.dt_growth);
    let _ = writeln!(s, "dt_shrink = {}", v.dt_shrink);
    let _ = writeln!(s, "dt_min = {}", v.dt_min);
    let _ = writeln!(s, "dt_max = {}", v.dt_max);
    let _ = writeln!(s, "newton_tol_abs = {}", v.newton_tol_abs);
    let _ = writeln!(s, "newton_tol_rel = {}", v.newton_tol_rel);
    let _ = writeln!(s, "newton_max_iter = {}", v.newton_max_iter);
    let _ = writeln!(s, "fast_iter_threshold = {}", v.fast_iter_threshold);
    let _ = writeln!(s, "t_end = {}", v.t_end);
    let _ = writeln!(s, "scaled_norm = {}", v.scaled_norm);
    let _ = writeln!(s, "\n[ic]");
    match cfg.ic {
        IcSpec::Uniform { base, amp, seed } => {
            let _ = writeln!(s, "kind = uniform\nbase = {base}\namp = {amp}\nseed = {seed}");
        }
        IcSpec::TwoColony {
            base,
            bump_amp,
            bump_sigma,
            separation,
        } => {
            let _ = writeln!(
                s,
                "kind = two_colony\nbase = {base}\nbump_amp = {bump_amp}\nbump_sigma = {bump_sigma}\nseparation = {separation}"
            );
        }
    }
    let _ = writeln!(s, "\n[run]");
    let mode = match cfg.mode {
        Mode::Full => "full",
        Mode::PassiveOnly => "passive_only",
    };
    let _ = writeln!(s, "mode = {mode}");
    let _ = writeln!(s, "snapshot_interval = {}", cfg.snapshot_interval);
    let _ = writeln!(s, "diagnostics_interval = {}", cfg.diagnostics_interval);
    s
}

/// Builds the initial state described by the config.
pub fn build_initial_state(
    cfg: &RunConfig,
    mesh: &Mesh,
) -> Result<FieldState, SimError> {
    match cfg.ic {
        IcSpec::Uniform { base, amp, seed } => {
            initialize_state(mesh, &cfg.params, &InitialCondition { base, amp, seed })
        }
        IcSpec::TwoColony {
            base,
            bump_amp,
            bump_sigma,
            separation,
        } => {
            let centers = [
                Vec2::new(0.5 * mesh.lx - 0.5 * separation, 0.5 * mesh.ly),
                Vec2::new(0.5 * mesh.lx + 0.5 * separation, 0.5 * mesh.ly),
            ];
            let c_cap = 0.999 / (std::f64::consts::PI * cfg.params.r * cfg.params.r);
            initialize_with_density(mesh, &cfg.params, |x| {
                let mut c = base;
                for ctr in centers {
                    let mut d2 = 0.0;
                    for (d, period) in [(0, mesh.lx), (1, mesh.ly)] {
                        let mut dx = (x[d] - ctr[d]).abs() % period;
                        if dx > 0.5 * period {
                            dx = period - dx;
                        }
                        d2 += dx * dx;
                    }
                    c += bump_amp * (-d2 / (2.0 * bump_sigma * bump_sigma)).exp();
                }
                c.min(c_cap)
            })
        }
    }
}

fn fmt_f64(v: f64) -> String {
    // 17 significant digits round-trips every finite f64
    format!("{v:.16e}")
}

/// Writes a plain-text snapshot. Corner fields at midside and center nodes
/// are interpolated for visualization; only corner records are read back.
pub fn write_snapshot(
    state: &FieldState,
    mesh: &Mesh,
    mode: Mode,
    step: usize,
    path: &Path,
) -> Result<(), SimError> {
    let mut s = String::new();
    let mode_str = match mode {
        Mode::Full => "full",
        Mode::PassiveOnly => "passive_only",
    };
    let _ = writeln!(s, "# aggresim snapshot");
    let _ = writeln!(s, "# time {}", fmt_f64(state.time));
    let _ = writeln!(s, "# step {step}");
    let _ = writeln!(
        s,
        "# mesh {} {} {} {}",
        mesh.nx,
        mesh.ny,
        fmt_f64(mesh.lx),
        fmt_f64(mesh.ly)
    );
    let _ = writeln!(s, "# mode {mode_str}");
    let _ = writeln!(s, "# columns X Y x y c p g_x g_y");
    let _ = writeln!(s, "# nodes {}", mesh.n_quad_nodes());

    let (qnx, _qny) = (2 * mesh.nx, 2 * mesh.ny);
    let corner_of = |qnode: usize| -> Option<usize> {
        let (ix, iy) = (qnode % (qnx + 1), qnode / (qnx + 1));
        (ix % 2 == 0 && iy % 2 == 0).then(|| (iy / 2) * (mesh.nx + 1) + ix / 2)
    };
    // bilinear interpolation of corner fields onto the quadratic grid
    let interp = |qnode: usize, f: &dyn Fn(usize) -> f64| -> f64 {
        let (ix, iy) = (qnode % (qnx + 1), qnode / (qnx + 1));
        let (cx0, cy0) = (ix / 2, iy / 2);
        let (fx, fy) = ((ix % 2) as f64 * 0.5, (iy % 2) as f64 * 0.5);
        let cid = |x: usize, y: usize| f(y * (mesh.nx + 1) + x);
        let (x1, y1) = ((cx0 + 1).min(mesh.nx), (cy0 + 1).min(mesh.ny));
        cid(cx0, cy0) * (1.0 - fx) * (1.0 - fy)
            + cid(x1, cy0) * fx * (1.0 - fy)
            + cid(cx0, y1) * (1.0 - fx) * fy
            + cid(x1, y1) * fx * fy
    };

    for nd in 0..mesh.n_quad_nodes() {
        let xm = mesh.node_coords[nd];
        let master = mesh.quad_master[nd];
        let y = state.y[master] + (xm - mesh.node_coords[master]);
        let (c, p, g) = if let Some(cn) = corner_of(nd) {
            let m = mesh.corner_master[cn];
            (state.c[m], state.p[m], state.g[m])
        } else {
            let c = interp(nd, &|i| state.c[mesh.corner_master[i]]);
            let p = interp(nd, &|i| state.p[mesh.corner_master[i]]);
            let gx = interp(nd, &|i| state.g[mesh.corner_master[i]][0]);
            let gy = interp(nd, &|i| state.g[mesh.corner_master[i]][1]);
            (c, p, Vec2::new(gx, gy))
        };
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            fmt_f64(xm[0]),
            fmt_f64(xm[1]),
            fmt_f64(y[0]),
            fmt_f64(y[1]),
            fmt_f64(c),
            fmt_f64(p),
            fmt_f64(g[0]),
            fmt_f64(g[1])
        );
    }
    let _ = writeln!(s, "# connectivity {}", mesh.elements.len());
    for elem in &mesh.elements {
        let ids: Vec<String> = elem.nodes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "{}", ids.join(" "));
    }
    fs::write(path, s).map_err(|e| SimError::io(path.display().to_string(), e))
}

/// Reads a snapshot back into a state (active stress restarts at zero; it
/// is deliberately not serialized). Returns the state, a mesh rebuilt from
/// the header, and the recorded mode.
pub fn read_snapshot(path: &Path) -> Result<(FieldState, Mesh, Mode), SimError> {
    let text =
        fs::read_to_string(path).map_err(|e| SimError::io(path.display().to_string(), e))?;
    let mut time = 0.0;
    let mut dims: Option<(usize, usize, f64, f64)> = None;
    let mut mode = Mode::Full;
    let mut records: Vec<[f64; 8]> = Vec::new();

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            match it.next() {
                Some("time") => {
                    time = it
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| SimError::SnapshotFormat("bad time header".into()))?
                }
                Some("mesh") => {
                    let vals: Vec<&str> = it.collect();
                    if vals.len() != 4 {
                        return Err(SimError::SnapshotFormat("bad mesh header".into()));
                    }
                    dims = Some((
                        vals[0]
                            .parse()
                            .map_err(|_| SimError::SnapshotFormat("bad nx".into()))?,
                        vals[1]
                            .parse()
                            .map_err(|_| SimError::SnapshotFormat("bad ny".into()))?,
                        vals[2]
                            .parse()
                            .map_err(|_| SimError::SnapshotFormat("bad lx".into()))?,
                        vals[3]
                            .parse()
                            .map_err(|_| SimError::SnapshotFormat("bad ly".into()))?,
                    ));
                }
                Some("mode") => {
                    mode = match it.next() {
                        Some("full") => Mode::Full,
                        Some("passive_only") => Mode::PassiveOnly,
                        other => {
                            return Err(SimError::SnapshotFormat(format!(
                                "unknown mode {other:?}"
                            )))
                        }
                    }
                }
                _ => {}
            }
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(|v| v.parse()).collect();
        if let Ok(vals) = vals {
            if vals.len() == 8 {
                records.push(std::array::from_fn(|i| vals[i]));
                continue;
            }
            if vals.len() == 9 && vals.iter().all(|v| v.fract() == 0.0) {
                continue; // connectivity row
            }
        }
        return Err(SimError::SnapshotFormat(format!(
            "unparseable record line: `{line}`"
        )));
    }

    let (nx, ny, lx, ly) =
        dims.ok_or_else(|| SimError::SnapshotFormat("missing mesh header".into()))?;
    let mesh = build_periodic_grid(nx, ny, lx, ly)?;
    if records.len() != mesh.n_quad_nodes() {
        return Err(SimError::SnapshotFormat(format!(
            "expected {} node records, found {}",
            mesh.n_quad_nodes(),
            records.len()
        )));
    }
    let mut state = FieldState::reference(&mesh, 0.0);
    state.time = time;
    let qnx = 2 * nx;
    for (nd, rec) in records.iter().enumerate() {
        if !rec.iter().all(|v| v.is_finite()) {
            return Err(SimError::SnapshotFormat(format!(
                "non-finite value in record {nd}"
            )));
        }
        let master = mesh.quad_master[nd];
        if master == nd {
            // stored deformed coords include the period offset for slaves;
            // masters carry the canonical value
            state.y[nd] = Vec2::new(rec[2], rec[3]);
        }
        let (ix, iy) = (nd % (qnx + 1), nd / (qnx + 1));
        if ix % 2 == 0 && iy % 2 == 0 {
            let cn = (iy / 2) * (nx + 1) + ix / 2;
            if mesh.corner_master[cn] == cn {
                state.c[cn] = rec[4];
                state.p[cn] = rec[5];
                state.g[cn] = Vec2::new(rec[6], rec[7]);
            }
        }
    }
    // mirror slaves
    for nd in 0..mesh.n_quad_nodes() {
        state.y[nd] = state.y[mesh.quad_master[nd]];
    }
    for nd in 0..mesh.n_corner_nodes() {
        let m = mesh.corner_master[nd];
        state.c[nd] = state.c[m];
        state.p[nd] = state.p[m];
        state.g[nd] = state.g[m];
    }
    Ok((state, mesh, mode))
}

/// Streaming CSV writer for per-step diagnostics.
pub struct DiagnosticsWriter<W: std::io::Write> {
    out: W,
    header_written: bool,
}

impl<W: std::io::Write> DiagnosticsWriter<W> {
    pub fn new(out: W) -> Self {
        DiagnosticsWriter {
            out,
            header_written: false,
        }
    }

    pub fn write_row(
        &mut self,
        diag: &Diagnostics,
        dt: f64,
        newton_iters: usize,
    ) -> Result<(), SimError> {
        let io_err = |e| SimError::io("<diagnostics stream>", e);
        if !self.header_written {
            writeln!(
                self.out,
                "time,total_cell_number,c_min,c_max,delta_c,constraint_violation,dt,newton_iters"
            )
            .map_err(io_err)?;
            self.header_written = true;
        }
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{}",
            diag.time,
            diag.total_cell_number,
            diag.c_min,
            diag.c_max,
            diag.delta_c,
            diag.constraint_violation,
            dt,
            newton_iters
        )
        .map_err(io_err)
    }
}

/// Applies AGGRESIM_THREADS (0 or unset = automatic) to the global rayon
/// pool. Call once at startup.
pub fn configure_threads() -> Result<(), SimError> {
    if let Ok(v) = std::env::var("AGGRESIM_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| {
            SimError::InvalidParameter(format!("AGGRESIM_THREADS must be an integer, got `{v}`"))
        })?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| SimError::InvalidParameter(format!("thread pool: {e}")))?;
        }
    }
    Ok(())
}

/// Runs a configured simulation, writing snapshots, diagnostics and (for
/// two-colony scenarios) a bridge-length series into `out_dir`.
pub fn run_simulation(cfg: &RunConfig, out_dir: &Path) -> Result<Trajectory, SimError> {
    fs::create_dir_all(out_dir).map_err(|e| SimError::io(out_dir.display().to_string(), e))?;
    let mesh = build_periodic_grid(cfg.nx, cfg.ny, cfg.lx, cfg.ly)?;
    let dofs = periodic_dof_numbering(&mesh, cfg.mode);
    let state0 = build_initial_state(cfg, &mesh)?;

    let diag_path = out_dir.join("diagnostics.csv");
    let diag_file =
        fs::File::create(&diag_path).map_err(|e| SimError::io(diag_path.display().to_string(), e))?;
    let mut diag_writer = DiagnosticsWriter::new(std::io::BufWriter::new(diag_file));

    let two_colony = matches!(cfg.ic, IcSpec::TwoColony { .. });
    let bridge_path = out_dir.join("bridge.csv");
    let mut bridge_file = if two_colony {
        let f = fs::File::create(&bridge_path)
            .map_err(|e| SimError::io(bridge_path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "time,h,detected").map_err(|e| SimError::io("bridge.csv", e))?;
        Some(w)
    } else {
        None
    };

    let snapshot_path = |step: usize| out_dir.join(format!("snapshot_{step:06}.txt"));
    write_snapshot(&state0, &mesh, cfg.mode, 0, &snapshot_path(0))?;
    diag_writer.write_row(&diagnostics(&state0, &mesh), 0.0, 0)?;

    let mut step_count = 0usize;
    let mut last_snapshot_time = state0.time;
    let mut last_diag_time = state0.time;
    let mut callback_err: Option<SimError> = None;
    let traj = advance(
        state0,
        &mesh,
        &dofs,
        &cfg.params,
        &cfg.solver,
        |state: &FieldState, report: &StepReport| {
            if callback_err.is_some() {
                return;
            }
            step_count += 1;
            let mut work = || -> Result<(), SimError> {
                if cfg.diagnostics_interval == 0.0
                    || state.time - last_diag_time >= cfg.diagnostics_interval - 1e-12
                {
                    diag_writer.write_row(
                        &diagnostics(state, &mesh),
                        report.dt_used,
                        report.newton_iters,
                    )?;
                    last_diag_time = state.time;
                }
                if let Some(w) = bridge_file.as_mut() {
                    let (h, found) = bridge_length(state, &mesh, 1);
                    writeln!(w, "{},{},{}", state.time, h, found)
                        .map_err(|e| SimError::io("bridge.csv", e))?;
                }
                if cfg.snapshot_interval > 0.0
                    && state.time - last_snapshot_time >= cfg.snapshot_interval - 1e-12
                {
                    write_snapshot(state, &mesh, cfg.mode, step_count, &snapshot_path(step_count))?;
                    last_snapshot_time = state.time;
                }
                Ok(())
            };
            if let Err(e) = work() {
                callback_err = Some(e);
            }
        },
    )?;
    if let Some(e) = callback_err {
        return Err(e);
    }
    let final_state = traj.states.last().expect("trajectory has initial state");
    write_snapshot(
        final_state,
        &mesh,
        cfg.mode,
        traj.states.len() - 1,
        &out_dir.join("snapshot_final.txt"),
    )?;
    Ok(traj)
}

/// Lists snapshot files in a directory in name order.
pub fn snapshot_files(dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SimError::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("snapshot_") && n.ends_with(".txt"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}
