//! Benchmark PDE families: task sampling, operators, grids, collocation sets
//! and reference solutions.
//!
//! | problem          | domain              | grid    | operator                     |
//! |------------------|---------------------|---------|------------------------------|
//! | `poisson`        | x ∈ [−10, 10]       | 201     | u_xx = h                     |
//! | `helmholtz`      | (x, y) ∈ [−1, 1]²   | 64 × 64 | u_xx + u_yy + u = h          |
//! | `burgers-sine`   | [−1, 1] × [0, 1]    | 129×51  | u_t + u u_x − γ u_xx = 0     |
//! | `burgers-family` | [0, 1] × [0, 0.5]   | 51 × 26 | u_t + u u_x − γ u_xx = h     |
//!
//! Grid points are ordered with the first coordinate fastest:
//! `index = i_t · n_x + i_x`.

pub mod cole_hopf;
pub mod io;
pub mod periodic;
mod quadrature;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{JetComp, JetSpec};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Poisson,
    Helmholtz,
    BurgersSine,
    BurgersFamily,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [
        ProblemKind::Poisson,
        ProblemKind::Helmholtz,
        ProblemKind::BurgersSine,
        ProblemKind::BurgersFamily,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Poisson => "poisson",
            ProblemKind::Helmholtz => "helmholtz",
            ProblemKind::BurgersSine => "burgers-sine",
            ProblemKind::BurgersFamily => "burgers-family",
        }
    }

    pub fn spec(self) -> ProblemSpec {
        match self {
            ProblemKind::Poisson => ProblemSpec {
                kind: self,
                bounds: vec![(-10.0, 10.0)],
                shape: vec![201],
                bc: BcKind::Dirichlet,
                linear: true,
                time_dependent: false,
                task_bounds: vec![(0.0, 1.0), (0.0, 2.0)],
                default_count: 100,
                picard_iters: 1,
            },
            ProblemKind::Helmholtz => ProblemSpec {
                kind: self,
                bounds: vec![(-1.0, 1.0), (-1.0, 1.0)],
                shape: vec![64, 64],
                bc: BcKind::Dirichlet,
                linear: true,
                time_dependent: false,
                task_bounds: vec![(0.0, 6.0), (0.0, 6.0)],
                default_count: 100,
                picard_iters: 1,
            },
            ProblemKind::BurgersSine => ProblemSpec {
                kind: self,
                bounds: vec![(-1.0, 1.0), (0.0, 1.0)],
                shape: vec![129, 51],
                bc: BcKind::Dirichlet,
                linear: false,
                time_dependent: true,
                task_bounds: vec![(GAMMA_MIN, GAMMA_MAX)],
                default_count: 50,
                picard_iters: 4,
            },
            ProblemKind::BurgersFamily => {
                let mut task_bounds = Vec::with_capacity(FAMILY_THETA_LEN);
                task_bounds.extend([(-0.8, 0.8); FAMILY_MODES]);
                task_bounds.extend([(-2.0, 2.0); FAMILY_MODES]);
                task_bounds.extend([(0.0, 4.0); FAMILY_MODES]);
                task_bounds.extend([(-PI, PI); FAMILY_MODES]);
                task_bounds.push((0.0, MAX_PERTURBATION));
                task_bounds.push((0.0, 3.0));
                ProblemSpec {
                    kind: self,
                    bounds: vec![(0.0, 1.0), (0.0, 0.5)],
                    shape: vec![51, 26],
                    bc: BcKind::Periodic,
                    linear: false,
                    time_dependent: true,
                    task_bounds,
                    default_count: 480,
                    picard_iters: 8,
                }
            }
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown problem '{s}'")))
    }
}

const GAMMA_MIN: f64 = 0.001;
const GAMMA_MAX: f64 = 0.05;
pub const FAMILY_VISCOSITY: f64 = 0.005;
pub const FAMILY_MODES: usize = 5;
pub const FAMILY_THETA_LEN: usize = 4 * FAMILY_MODES + 2;
pub const MAX_PERTURBATION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcKind {
    Dirichlet,
    Periodic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub bounds: Vec<(f64, f64)>,
    pub shape: Vec<usize>,
    pub bc: BcKind,
    pub linear: bool,
    /// Second coordinate is time: the `t = 0` row carries the initial condition.
    pub time_dependent: bool,
    pub task_bounds: Vec<(f64, f64)>,
    pub default_count: usize,
    pub picard_iters: usize,
}

impl ProblemSpec {
    pub fn coord_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn task_dim(&self) -> usize {
        self.task_bounds.len()
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.bounds.clone(), self.shape.clone()).expect("problem grids are valid")
    }

    /// Derivatives the operator and boundary rows consume.
    pub fn jet_spec(&self) -> JetSpec {
        let r = match self.kind {
            ProblemKind::Poisson => JetSpec::new(1, vec![0], vec![(0, 0)]),
            ProblemKind::Helmholtz => JetSpec::new(2, vec![0, 1], vec![(0, 0), (1, 1)]),
            ProblemKind::BurgersSine | ProblemKind::BurgersFamily => JetSpec::new(2, vec![0, 1], vec![(0, 0)]),
        };
        r.expect("problem jet specs are valid")
    }

    /// Collocation on the grid, keeping every `stride`-th index along each
    /// axis (always including both ends).
    pub fn collocation(&self, stride: usize) -> Collocation {
        let grid = self.grid();
        let keep: Vec<Vec<usize>> = self.shape.iter().map(|&n| strided(n, stride)).collect();
        let nx = self.shape[0];
        let mut pde = Vec::new();
        let mut bc = Vec::new();
        let mut ic = Vec::new();
        match self.kind {
            ProblemKind::Poisson => {
                pde.extend(keep[0][1..keep[0].len() - 1].iter().copied());
                bc.push(BcRow::dirichlet(0));
                bc.push(BcRow::dirichlet(nx - 1));
            }
            ProblemKind::Helmholtz => {
                let ny = self.shape[1];
                for &iy in &keep[1] {
                    for &ix in &keep[0] {
                        let p = grid.flat(&[ix, iy]);
                        if ix == 0 || ix == nx - 1 || iy == 0 || iy == ny - 1 {
                            bc.push(BcRow::dirichlet(p));
                        } else {
                            pde.push(p);
                        }
                    }
                }
            }
            ProblemKind::BurgersSine | ProblemKind::BurgersFamily => {
                for &it in &keep[1] {
                    if it == 0 {
                        ic.extend(keep[0].iter().map(|&ix| grid.flat(&[ix, 0])));
                        continue;
                    }
                    for &ix in &keep[0] {
                        if ix != 0 && ix != nx - 1 {
                            pde.push(grid.flat(&[ix, it]));
                        }
                    }
                    let left = grid.flat(&[0, it]);
                    let right = grid.flat(&[nx - 1, it]);
                    match self.bc {
                        BcKind::Dirichlet => {
                            bc.push(BcRow::dirichlet(left));
                            bc.push(BcRow::dirichlet(right));
                        }
                        BcKind::Periodic => {
                            bc.push(BcRow::periodic(left, right, JetComp::Value));
                            bc.push(BcRow::periodic(left, right, JetComp::D(0)));
                        }
                    }
                }
            }
        }
        Collocation { pde, bc, ic }
    }
}

fn strided(n: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut v: Vec<usize> = (0..n).step_by(stride).collect();
    if *v.last().unwrap() != n - 1 {
        v.push(n - 1);
    }
    v
}

/// Tensor-product uniform grid including the end points of every axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    bounds: Vec<(f64, f64)>,
    shape: Vec<usize>,
}

impl Grid {
    pub fn new(bounds: Vec<(f64, f64)>, shape: Vec<usize>) -> Result<Self> {
        if bounds.len() != shape.len() || bounds.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} bounds and {} axis sizes",
                bounds.len(),
                shape.len()
            )));
        }
        if shape.iter().any(|&n| n < 2) || bounds.iter().any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidArgument("grid axes need at least 2 points and a < b".into()));
        }
        Ok(Self { bounds, shape })
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let (a, b) = self.bounds[axis];
        (b - a) / (self.shape[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let (a, b) = self.bounds[axis];
        let n = self.shape[axis] - 1;
        if i == n {
            b
        } else {
            a + (b - a) * i as f64 / n as f64
        }
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for axis in (0..self.dim()).rev() {
            flat = flat * self.shape[axis] + idx[axis];
        }
        flat
    }

    pub fn unflat(&self, mut flat: usize) -> Vec<usize> {
        self.shape
            .iter()
            .map(|&n| {
                let i = flat % n;
                flat /= n;
                i
            })
            .collect()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.unflat(flat).iter().enumerate().map(|(a, &i)| self.coord(a, i)).collect()
    }

    /// All points as rows, in flat order.
    pub fn points(&self) -> DenseMatrix {
        self.select(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn select(&self, flat: &[usize]) -> DenseMatrix {
        let d = self.dim();
        let mut m = DenseMatrix::zeros(flat.len(), d);
        for (r, &f) in flat.iter().enumerate() {
            m.row_mut(r).copy_from_slice(&self.point(f));
        }
        m
    }
}

/// `Σ coef · ℬ-component(u)(point)` over the terms; the target is evaluated at `anchor`.
#[derive(Clone, Debug, PartialEq)]
pub struct BcRow {
    pub anchor: usize,
    pub terms: Vec<(usize, JetComp, f64)>,
}

impl BcRow {
    pub fn dirichlet(point: usize) -> Self {
        Self {
            anchor: point,
            terms: vec![(point, JetComp::Value, 1.0)],
        }
    }

    pub fn periodic(left: usize, right: usize, comp: JetComp) -> Self {
        Self {
            anchor: left,
            terms: vec![(left, comp, 1.0), (right, comp, -1.0)],
        }
    }
}

/// Constraint locations as flat grid indices.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Collocation {
    pub pde: Vec<usize>,
    pub bc: Vec<BcRow>,
    pub ic: Vec<usize>,
}

impl Collocation {
    pub fn n_rows(&self) -> usize {
        self.pde.len() + self.bc.len() + self.ic.len()
    }

    /// Sorted, deduplicated list of every grid point a row touches.
    pub fn points(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.pde.clone();
        v.extend(self.bc.iter().flat_map(|r| r.terms.iter().map(|t| t.0)));
        v.extend(self.ic.iter().copied());
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Rewrites indices through `map` (grid index → new index).
    pub fn remap(&self, map: impl Fn(usize) -> usize) -> Collocation {
        Collocation {
            pde: self.pde.iter().map(|&p| map(p)).collect(),
            bc: self
                .bc
                .iter()
                .map(|r| BcRow {
                    anchor: map(r.anchor),
                    terms: r.terms.iter().map(|&(p, c, w)| (map(p), c, w)).collect(),
                })
                .collect(),
            ic: self.ic.iter().map(|&p| map(p)).collect(),
        }
    }
}

/// `𝒩[u] = Σ coef · component(u) + advection_coef · u · u_x`
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    pub terms: Vec<(JetComp, f64)>,
    pub advection: Option<(JetComp, f64)>,
}

impl Operator {
    pub fn is_linear(&self) -> bool {
        self.advection.is_none()
    }

    /// Applies the full (nonlinear) operator given a lookup of `u`'s components.
    pub fn apply(&self, comp: impl Fn(JetComp) -> f64) -> f64 {
        let mut r: f64 = self.terms.iter().map(|&(c, w)| w * comp(c)).sum();
        if let Some((d, w)) = self.advection {
            r += w * comp(JetComp::Value) * comp(d);
        }
        r
    }

    /// Same operator with the advection coefficient replaced.
    pub fn with_advection_coef(&self, coef: f64) -> Operator {
        Operator {
            terms: self.terms.clone(),
            advection: self.advection.map(|(d, _)| (d, coef)),
        }
    }
}

/// One PDE task: its parameters and everything adaptation may see. The
/// reference solution lives in [`LabeledInstance`].
#[derive(Clone, Debug, PartialEq)]
pub struct PdeInstance {
    pub id: usize,
    pub kind: ProblemKind,
    pub theta: Vec<f64>,
}

impl PdeInstance {
    pub fn new(id: usize, kind: ProblemKind, theta: Vec<f64>) -> Result<Self> {
        let want = kind.spec().task_dim();
        if theta.len() != want {
            return Err(Error::DimensionMismatch(format!(
                "{kind} takes {want} task parameters, got {}",
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{kind} task parameters")));
        }
        Ok(Self { id, kind, theta })
    }

    pub fn spec(&self) -> ProblemSpec {
        self.kind.spec()
    }

    pub fn viscosity(&self) -> Option<f64> {
        match self.kind {
            ProblemKind::BurgersSine => Some(self.theta[0]),
            ProblemKind::BurgersFamily => Some(FAMILY_VISCOSITY),
            _ => None,
        }
    }

    pub fn operator(&self) -> Operator {
        match self.kind {
            ProblemKind::Poisson => Operator {
                terms: vec![(JetComp::DD(0), 1.0)],
                advection: None,
            },
            ProblemKind::Helmholtz => Operator {
                terms: vec![(JetComp::DD(0), 1.0), (JetComp::DD(1), 1.0), (JetComp::Value, 1.0)],
                advection: None,
            },
            ProblemKind::BurgersSine | ProblemKind::BurgersFamily => Operator {
                terms: vec![(JetComp::D(1), 1.0), (JetComp::DD(0), -self.viscosity().unwrap())],
                advection: Some((JetComp::D(0), 1.0)),
            },
        }
    }

    /// Right-hand side `h`.
    pub fn source(&self, p: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Poisson => {
                let (w1, w2) = (self.theta[0], self.theta[1]);
                -w1 * w1 * (w1 * p[0]).sin() - w2 * w2 * (w2 * p[0]).sin()
            }
            ProblemKind::Helmholtz => {
                let (a1, a2) = (self.theta[0] * PI, self.theta[1] * PI);
                (1.0 - a1 * a1 - a2 * a2) * (a1 * p[0]).sin() * (a2 * p[1]).sin()
            }
            ProblemKind::BurgersSine => 0.0,
            ProblemKind::BurgersFamily => self
                .family_modes()
                .iter()
                .map(|m| m.amplitude * (m.omega * p[1] + m.wavenumber * p[0] + m.phase).sin())
                .sum(),
        }
    }

    /// Boundary target `g` at a boundary point (the left point for periodic pairs).
    pub fn boundary_target(&self, p: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Poisson | ProblemKind::Helmholtz => self.exact(p).unwrap(),
            ProblemKind::BurgersSine | ProblemKind::BurgersFamily => 0.0,
        }
    }

    /// Initial condition `u₀(x)`; zero for stationary problems.
    pub fn initial(&self, x: f64) -> f64 {
        match self.kind {
            ProblemKind::BurgersSine => -(PI * x).sin(),
            ProblemKind::BurgersFamily => {
                let (eps, k) = (self.theta[4 * FAMILY_MODES], self.theta[4 * FAMILY_MODES + 1]);
                self.source(&[x, 0.0]) + eps * (2.0 * PI * k * x).sin()
            }
            _ => 0.0,
        }
    }

    /// Closed-form solution where one exists.
    pub fn exact(&self, p: &[f64]) -> Option<f64> {
        match self.kind {
            ProblemKind::Poisson => {
                let x = p[0];
                Some((self.theta[0] * x).sin() + (self.theta[1] * x).sin() - 0.1 * x)
            }
            ProblemKind::Helmholtz => {
                Some((self.theta[0] * PI * p[0]).sin() * (self.theta[1] * PI * p[1]).sin())
            }
            _ => None,
        }
    }

    /// Source modes `A sin(ω t + 2π l x / 6 + φ)` of the forced family.
    pub fn family_modes(&self) -> Vec<periodic::SourceMode> {
        if self.kind != ProblemKind::BurgersFamily {
            return Vec::new();
        }
        let th = &self.theta;
        (0..FAMILY_MODES)
            .map(|j| periodic::SourceMode {
                amplitude: th[j],
                omega: th[FAMILY_MODES + j],
                wavenumber: 2.0 * PI * th[2 * FAMILY_MODES + j] / 6.0,
                phase: th[3 * FAMILY_MODES + j],
            })
            .collect()
    }

    /// Targets for every row of `colloc` (grid-indexed), in PDE, BC, IC order.
    pub fn targets(&self, grid: &Grid, colloc: &Collocation) -> Targets {
        Targets {
            pde: colloc.pde.iter().map(|&p| self.source(&grid.point(p))).collect(),
            bc: colloc.bc.iter().map(|r| self.boundary_target(&grid.point(r.anchor))).collect(),
            ic: colloc.ic.iter().map(|&p| self.initial(grid.point(p)[0])).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Targets {
    pub pde: Vec<f64>,
    pub bc: Vec<f64>,
    pub ic: Vec<f64>,
}

/// An instance together with its reference solution on the problem grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledInstance {
    pub instance: PdeInstance,
    pub reference: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub count: usize,
    pub seed: u64,
    /// Maximum amplitude of the optional `ε sin(2πkx)` family IC perturbation.
    pub ic_perturbation: Option<f64>,
    pub quadrature_tol: f64,
    pub solver_start_refinement: usize,
    pub solver_max_refinement: usize,
    pub solver_tol: f64,
}

impl GenOptions {
    pub fn new(kind: ProblemKind, seed: u64) -> Self {
        Self {
            count: kind.spec().default_count,
            seed,
            ic_perturbation: None,
            quadrature_tol: 1e-8,
            solver_start_refinement: 4,
            solver_max_refinement: 64,
            solver_tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: ProblemKind,
    pub options: GenOptions,
    pub instances: Vec<LabeledInstance>,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
}

impl Dataset {
    pub fn grid(&self) -> Grid {
        self.kind.spec().grid()
    }

    /// Deterministic split: the first `k` entries of a seeded permutation are seen.
    pub fn split(&mut self, k: usize, seed: u64) -> Result<()> {
        let n = self.instances.len();
        if k > n {
            return Err(Error::InvalidArgument(format!("cannot mark {k} of {n} instances as seen")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut seen = order[..k].to_vec();
        let mut unseen = order[k..].to_vec();
        seen.sort_unstable();
        unseen.sort_unstable();
        self.seen = seen;
        self.unseen = unseen;
        Ok(())
    }

    pub fn seen_instances(&self) -> Vec<&LabeledInstance> {
        self.seen.iter().map(|&i| &self.instances[i]).collect()
    }

    pub fn unseen_instances(&self) -> Vec<&LabeledInstance> {
        self.unseen.iter().map(|&i| &self.instances[i]).collect()
    }

    pub fn check_split(&self) -> Result<()> {
        let n = self.instances.len();
        let mut all: Vec<usize> = self.seen.iter().chain(&self.unseen).copied().collect();
        all.sort_unstable();
        if all != (0..n).collect::<Vec<_>>() {
            return Err(Error::Format("seen/unseen split must be disjoint and cover every instance".into()));
        }
        Ok(())
    }
}

/// RNG stream for instance `i` derived from the root seed.
pub fn instance_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Uniform on the half-open interval `(0, hi]`.
fn uniform_open_closed<R: Rng>(rng: &mut R, hi: f64) -> f64 {
    hi * (1.0 - rng.gen::<f64>())
}

pub fn sample_theta<R: Rng>(kind: ProblemKind, rng: &mut R, ic_perturbation: Option<f64>) -> Vec<f64> {
    match kind {
        ProblemKind::Poisson => vec![uniform_open_closed(rng, 1.0), uniform_open_closed(rng, 2.0)],
        ProblemKind::Helmholtz => vec![uniform_open_closed(rng, 6.0), uniform_open_closed(rng, 6.0)],
        ProblemKind::BurgersSine => vec![rng.gen_range(GAMMA_MIN..=GAMMA_MAX)],
        ProblemKind::BurgersFamily => {
            let mut th = Vec::with_capacity(FAMILY_THETA_LEN);
            th.extend((0..FAMILY_MODES).map(|_| rng.gen_range(-0.8..=0.8)));
            th.extend((0..FAMILY_MODES).map(|_| rng.gen_range(-2.0..=2.0)));
            th.extend((0..FAMILY_MODES).map(|_| rng.gen_range(0..=4u32) as f64));
            th.extend((0..FAMILY_MODES).map(|_| rng.gen_range(-PI..=PI)));
            match ic_perturbation {
                Some(eps) => {
                    th.push(rng.gen_range(0.0..=eps.min(MAX_PERTURBATION)));
                    th.push(rng.gen_range(1..=3u32) as f64);
                }
                None => th.extend([0.0, 0.0]),
            }
            th
        }
    }
}

/// Reference solution on the problem grid.
pub fn reference_solution(instance: &PdeInstance, opts: &GenOptions) -> Result<Vec<f64>> {
    let spec = instance.spec();
    let grid = spec.grid();
    match instance.kind {
        ProblemKind::Poisson | ProblemKind::Helmholtz => {
            Ok((0..grid.len()).map(|p| instance.exact(&grid.point(p)).unwrap()).collect())
        }
        ProblemKind::BurgersSine => {
            let ch = cole_hopf::sine_initial(1.0, 1.0, instance.theta[0], opts.quadrature_tol);
            let (nx, nt) = (spec.shape[0], spec.shape[1]);
            let mut out = vec![0.0; grid.len()];
            for it in 0..nt {
                let t = grid.coord(1, it);
                for ix in 0..nx {
                    let x = grid.coord(0, ix);
                    out[it * nx + ix] = if it == 0 {
                        instance.initial(x)
                    } else if ix == 0 || ix == nx - 1 {
                        0.0
                    } else {
                        ch.eval(x, t)?
                    };
                }
            }
            Ok(out)
        }
        ProblemKind::BurgersFamily => {
            let (grid_out, _, _) = reference_solve_family(instance, opts)?;
            Ok(grid_out)
        }
    }
}

/// Periodic method-of-lines reference for the forced family, refined until
/// successive doublings agree to `opts.solver_tol`. Returns the grid, the
/// refinement used and the last self-convergence change.
pub fn reference_solve_family(instance: &PdeInstance, opts: &GenOptions) -> Result<(Vec<f64>, usize, f64)> {
    if instance.kind != ProblemKind::BurgersFamily {
        return Err(Error::InvalidArgument(format!("{} is not a periodic problem", instance.kind)));
    }
    let spec = instance.spec();
    let setup = periodic::PeriodicSetup {
        viscosity: FAMILY_VISCOSITY,
        horizon: spec.bounds[1].1,
        nx: spec.shape[0],
        nt: spec.shape[1],
        modes: instance.family_modes(),
    };
    let solver = periodic::SolverOptions {
        refinement: opts.solver_start_refinement,
        ..Default::default()
    };
    periodic::solve_converged(&setup, |x| instance.initial(x), &solver, opts.solver_tol, opts.solver_max_refinement)
}

/// Samples and solves `opts.count` instances. Each instance draws from its
/// own RNG stream, so the result does not depend on the thread count.
pub fn generate(kind: ProblemKind, opts: &GenOptions) -> Result<Dataset> {
    if opts.count < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 instances, got {}", opts.count)));
    }
    if let Some(eps) = opts.ic_perturbation {
        if !(0.0..=MAX_PERTURBATION).contains(&eps) {
            return Err(Error::InvalidArgument(format!("IC perturbation must lie in [0, {MAX_PERTURBATION}]")));
        }
    }
    let instances = (0..opts.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(opts.seed, i);
            let theta = sample_theta(kind, &mut rng, opts.ic_perturbation);
            let instance = PdeInstance::new(i, kind, theta)?;
            let reference = reference_solution(&instance, opts)?;
            Ok(LabeledInstance { instance, reference })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        kind,
        options: opts.clone(),
        seen: Vec::new(),
        unseen: (0..instances.len()).collect(),
        instances,
    })
}

pub fn poisson_make(count: usize, seed: u64) -> Result<Dataset> {
    generate(ProblemKind::Poisson, &GenOptions { count, ..GenOptions::new(ProblemKind::Poisson, seed) })
}

pub fn helmholtz_make(count: usize, seed: u64) -> Result<Dataset> {
    generate(ProblemKind::Helmholtz, &GenOptions { count, ..GenOptions::new(ProblemKind::Helmholtz, seed) })
}

pub fn burgers_sine_make(count: usize, seed: u64) -> Result<Dataset> {
    generate(ProblemKind::BurgersSine, &GenOptions { count, ..GenOptions::new(ProblemKind::BurgersSine, seed) })
}

pub fn burgers_family_make(count: usize, seed: u64) -> Result<Dataset> {
    generate(ProblemKind::BurgersFamily, &GenOptions { count, ..GenOptions::new(ProblemKind::BurgersFamily, seed) })
}

/// `‖pred − reference‖₂ / ‖reference‖₂`
pub fn rel_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} values, reference {}",
            pred.len(),
            reference.len()
        )));
    }
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok((num / den).sqrt())
}
