//! Method-of-lines solver for forced viscous Burgers on the periodic unit
//! interval: `u_t + u u_x − ν u_xx = h(x, t)`.
//!
//! Space: fourth-order central differences on `M = (nx − 1)·r` points.
//! Time: classical RK4 with a step that divides each output interval exactly.

use crate::error::{Error, Result};

// Spectral radii of the 4th-order stencils (times dx and dx² respectively) and
// the RK4 stability interval along the imaginary and negative real axes.
const D1_RADIUS: f64 = 1.372_279_6;
const D2_RADIUS: f64 = 16.0 / 3.0;
const RK4_IMAG: f64 = 2.828;
const RK4_REAL: f64 = 2.785;
const SAFETY: f64 = 0.8;

/// `A sin(ω t + k x + φ)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceMode {
    pub amplitude: f64,
    pub omega: f64,
    pub wavenumber: f64,
    pub phase: f64,
}

#[derive(Clone, Debug)]
pub struct PeriodicSetup {
    pub viscosity: f64,
    pub horizon: f64,
    /// Output grid including both endpoints `x = 0` and `x = 1`.
    pub nx: usize,
    pub nt: usize,
    pub modes: Vec<SourceMode>,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub refinement: usize,
    /// Fixed step; checked against the stability limit instead of chosen from it.
    pub dt: Option<f64>,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            refinement: 8,
            dt: None,
            max_steps: 50_000_000,
        }
    }
}

struct Source {
    amp: Vec<f64>,
    omega: Vec<f64>,
    phase: Vec<f64>,
    cos_kx: Vec<Vec<f64>>,
    sin_kx: Vec<Vec<f64>>,
}

/// `f` on the grid, with the seam node `x = 0 ≡ 1` taking the mean of both
/// one-sided values so a source that is not 1-periodic jumps symmetrically.
fn seam_table(xs: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut v: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    v[0] = 0.5 * (f(0.0) + f(1.0));
    v
}

impl Source {
    fn new(modes: &[SourceMode], xs: &[f64]) -> Self {
        Self {
            amp: modes.iter().map(|m| m.amplitude).collect(),
            omega: modes.iter().map(|m| m.omega).collect(),
            phase: modes.iter().map(|m| m.phase).collect(),
            cos_kx: modes.iter().map(|m| seam_table(xs, |x| (m.wavenumber * x).cos())).collect(),
            sin_kx: modes.iter().map(|m| seam_table(xs, |x| (m.wavenumber * x).sin())).collect(),
        }
    }

    /// `out[j] += h(x_j, t)`
    fn add_to(&self, t: f64, out: &mut [f64]) {
        for m in 0..self.amp.len() {
            let arg = self.omega[m] * t + self.phase[m];
            let s = self.amp[m] * arg.sin();
            let c = self.amp[m] * arg.cos();
            for ((o, &ck), &sk) in out.iter_mut().zip(&self.cos_kx[m]).zip(&self.sin_kx[m]) {
                *o += s * ck + c * sk;
            }
        }
    }

    fn bound(&self) -> f64 {
        self.amp.iter().map(|a| a.abs()).sum()
    }
}

fn rhs(u: &[f64], t: f64, nu: f64, dx: f64, src: &Source, out: &mut [f64]) {
    let m = u.len();
    let c1 = 1.0 / (12.0 * dx);
    let c2 = nu / (12.0 * dx * dx);
    for j in 0..m {
        let um2 = u[(j + m - 2) % m];
        let um1 = u[(j + m - 1) % m];
        let up1 = u[(j + 1) % m];
        let up2 = u[(j + 2) % m];
        let ux = (-up2 + 8.0 * up1 - 8.0 * um1 + um2) * c1;
        let uxx = (-up2 + 16.0 * up1 - 30.0 * u[j] + 16.0 * um1 - um2) * c2;
        out[j] = -u[j] * ux + uxx;
    }
    src.add_to(t, out);
}

/// Largest stable RK4 step for the current state.
pub fn stable_step(max_speed: f64, viscosity: f64, dx: f64) -> f64 {
    let rate = max_speed * D1_RADIUS / (RK4_IMAG * dx) + viscosity * D2_RADIUS / (RK4_REAL * dx * dx);
    if rate == 0.0 {
        f64::INFINITY
    } else {
        SAFETY / rate
    }
}

/// Solves on the refined grid and returns the `nt × nx` output grid
/// (row-major, time slow). The `t = 0` row is `u0` as given; later rows copy
/// the `x = 0` value into the `x = 1` column. Data that is not 1-periodic
/// (source or `u0`) is averaged across the seam node.
pub fn solve<F: Fn(f64) -> f64>(setup: &PeriodicSetup, u0: F, opts: &SolverOptions) -> Result<Vec<f64>> {
    if setup.nx < 2 || setup.nt < 2 || opts.refinement == 0 {
        return Err(Error::InvalidArgument("periodic solver needs nx, nt >= 2 and refinement >= 1".into()));
    }
    if !(setup.viscosity >= 0.0) || !(setup.horizon > 0.0) {
        return Err(Error::InvalidArgument("periodic solver needs viscosity >= 0 and horizon > 0".into()));
    }
    let m = (setup.nx - 1) * opts.refinement;
    if m < 5 {
        return Err(Error::InvalidArgument(format!("refined grid of {m} points is too coarse for the stencil")));
    }
    let dx = 1.0 / m as f64;
    let xs: Vec<f64> = (0..m).map(|j| j as f64 * dx).collect();
    let src = Source::new(&setup.modes, &xs);
    let interval = setup.horizon / (setup.nt - 1) as f64;

    let mut u = seam_table(&xs, &u0);
    let mut out = vec![0.0; setup.nt * setup.nx];
    let emit = |u: &[f64], k: usize, out: &mut [f64]| {
        for i in 0..setup.nx {
            out[k * setup.nx + i] = u[(i * opts.refinement) % m];
        }
    };
    for i in 0..setup.nx {
        out[i] = u0(i as f64 / (setup.nx - 1) as f64);
    }

    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut stage = vec![0.0; m];
    let mut steps = 0usize;
    for k in 1..setup.nt {
        let t0 = (k - 1) as f64 * interval;
        let speed = u.iter().fold(0.0f64, |a, v| a.max(v.abs())) + 2.0 * src.bound() * interval;
        let limit = stable_step(speed, setup.viscosity, dx);
        let n_sub = match opts.dt {
            Some(dt) => {
                if dt > limit {
                    return Err(Error::CflViolation { dt, limit });
                }
                (interval / dt).round().max(1.0) as usize
            }
            None => (interval / limit).ceil().max(1.0) as usize,
        };
        steps += n_sub;
        if steps > opts.max_steps {
            return Err(Error::CflViolation {
                dt: interval / n_sub as f64,
                limit,
            });
        }
        let dt = interval / n_sub as f64;
        for s in 0..n_sub {
            let t = t0 + s as f64 * dt;
            rhs(&u, t, setup.viscosity, dx, &src, &mut k1);
            for j in 0..m {
                stage[j] = u[j] + 0.5 * dt * k1[j];
            }
            rhs(&stage, t + 0.5 * dt, setup.viscosity, dx, &src, &mut k2);
            for j in 0..m {
                stage[j] = u[j] + 0.5 * dt * k2[j];
            }
            rhs(&stage, t + 0.5 * dt, setup.viscosity, dx, &src, &mut k3);
            for j in 0..m {
                stage[j] = u[j] + dt * k3[j];
            }
            rhs(&stage, t + dt, setup.viscosity, dx, &src, &mut k4);
            for j in 0..m {
                u[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("periodic solver state at t={}", k as f64 * interval)));
        }
        emit(&u, k, &mut out);
    }
    Ok(out)
}

/// Doubles the refinement starting from `opts.refinement` until two
/// successive output grids differ by at most `tol` in relative L2, or
/// `max_refinement` is exceeded (then the finest pair's change is returned).
/// Returns `(grid, refinement used, change)`.
pub fn solve_converged<F: Fn(f64) -> f64>(
    setup: &PeriodicSetup,
    u0: F,
    opts: &SolverOptions,
    tol: f64,
    max_refinement: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let mut r = opts.refinement;
    let mut prev = solve(setup, &u0, opts)?;
    loop {
        let r2 = r * 2;
        let next = solve(setup, &u0, &SolverOptions { refinement: r2, ..opts.clone() })?;
        let change = relative_change(&next, &prev);
        if change <= tol || r2 * 2 > max_refinement {
            return Ok((next, r2, change));
        }
        r = r2;
        prev = next;
    }
}

fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
