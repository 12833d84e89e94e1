//! Closed-form head adaptation.
//!
//! With a frozen feature map `φ(x)`, a prediction `u(x) = φ(x)ᵀ w` satisfies
//! every linear constraint row-wise, so PDE, boundary and initial conditions
//! stack into one system `X w = y`:
//!
//! ```text
//! PDE  λ_PDE · 𝒩[φ](x_p)  w = λ_PDE · h(x_p)
//! BC   λ_BC  · ℬ[φ](x_b)  w = λ_BC  · g(x_b)
//! IC   λ_IC  ·   φ(x_i)   w = λ_IC  · u₀(x_i)
//! ```
//!
//! solved as `(λ_PI I + XᵀX) w = Xᵀy`. The advection term `u u_x` is frozen
//! at the previous iterate (Picard), so each iteration is again linear.

use serde::{Deserialize, Serialize};

use crate::autodiff::{JetComp, JetSpec, JetTable, RowEntry, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{ridge_factor_solve, Cholesky, DenseMatrix, DenseVector};
use crate::network::{embed_jet_batch, NetConfig, NetParams};
use crate::problems::{Collocation, Grid, Operator, PdeInstance, ProblemSpec, Targets};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PicardInit {
    Zero,
    /// `u⁽⁰⁾(x, t) = u₀(x)`
    IcExtension,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub lambda_pde: f64,
    pub lambda_bc: f64,
    pub lambda_ic: f64,
    pub lambda_pi: f64,
    pub picard_iters: usize,
    pub picard_init: PicardInit,
}

impl AdaptConfig {
    pub fn new(lambda_pde: f64, lambda_pi: f64) -> Self {
        Self {
            lambda_pde,
            lambda_bc: 1.0,
            lambda_ic: 1.0,
            lambda_pi,
            picard_iters: 1,
            picard_init: PicardInit::IcExtension,
        }
    }

    pub fn for_problem(spec: &ProblemSpec, lambda_pde: f64, lambda_pi: f64) -> Self {
        Self {
            picard_iters: spec.picard_iters,
            ..Self::new(lambda_pde, lambda_pi)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_pde", self.lambda_pde),
            ("lambda_bc", self.lambda_bc),
            ("lambda_ic", self.lambda_ic),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_pi >= 0.0 && self.lambda_pi.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda_pi must be >= 0, got {}", self.lambda_pi)));
        }
        if self.picard_iters == 0 {
            return Err(Error::InvalidArgument("picard_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowTag {
    Pde,
    Bc,
    Ic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssembledSystem {
    pub x: DenseMatrix,
    pub y: DenseVector,
    pub row_tags: Vec<RowTag>,
}

impl AssembledSystem {
    pub fn rows_tagged(&self, tag: RowTag) -> Vec<usize> {
        (0..self.row_tags.len()).filter(|&i| self.row_tags[i] == tag).collect()
    }

    /// `‖X w − y‖₂`
    pub fn residual(&self, w: &[f64]) -> f64 {
        let r = self.x.matvec(w).expect("head width");
        r.iter().zip(self.y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Unweighted L2 norms of each constraint family.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ResidualNorms {
    pub pde: f64,
    pub bc: f64,
    pub ic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedHead {
    pub weights: DenseVector,
    pub residual_norms: ResidualNorms,
    /// `‖w⁽ᵏ⁾ − w⁽ᵏ⁻¹⁾‖₂` per iteration, with `w⁽⁰⁾ = 0`.
    pub picard_history: Vec<f64>,
    /// Smallest `min pivot / max pivot` of the Cholesky factorizations used.
    pub pivot_ratio: f64,
}

/// `min pivot / max pivot` of a factorization.
pub fn pivot_ratio(f: &Cholesky) -> f64 {
    let p = f.pivots();
    let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().copied().fold(0.0, f64::max);
    lo / hi
}

/// Anything that supplies features and their input derivatives at points.
pub trait FeatureMap {
    fn width(&self) -> usize;
    /// Jets over the coordinate columns of `points`; `task` is the instance's θ.
    fn jets(&self, points: &DenseMatrix, spec: &JetSpec, task: &[f64]) -> Result<JetTable>;
}

/// A trained trunk. Task-conditioned trunks receive θ as extra inputs, with
/// derivatives taken along the coordinate directions only.
#[derive(Clone, Copy, Debug)]
pub struct Trunk<'a> {
    pub config: &'a NetConfig,
    pub params: &'a NetParams,
}

impl<'a> Trunk<'a> {
    pub fn new(config: &'a NetConfig, params: &'a NetParams) -> Self {
        Self { config, params }
    }
}

/// Appends `task` to every row of `points`.
pub fn with_task(points: &DenseMatrix, task: &[f64]) -> DenseMatrix {
    let d = points.cols();
    DenseMatrix::from_fn(points.rows(), d + task.len(), |r, c| {
        if c < d {
            points[(r, c)]
        } else {
            task[c - d]
        }
    })
}

impl FeatureMap for Trunk<'_> {
    fn width(&self) -> usize {
        self.config.embedding_width()
    }

    fn jets(&self, points: &DenseMatrix, spec: &JetSpec, task: &[f64]) -> Result<JetTable> {
        let td = self.config.task_dim();
        if points.cols() != self.config.coord_dim {
            return Err(Error::DimensionMismatch(format!(
                "trunk takes {} coordinates, points have {}",
                self.config.coord_dim,
                points.cols()
            )));
        }
        if td == 0 {
            return embed_jet_batch(self.params, self.config, points, spec);
        }
        if task.len() != td {
            return Err(Error::DimensionMismatch(format!("trunk takes {td} task inputs, got {}", task.len())));
        }
        let spec = spec.with_input_dim(self.config.input_dim)?;
        let table = embed_jet_batch(self.params, self.config, &with_task(points, task), &spec)?;
        let coord_spec = JetSpec::new(points.cols(), spec.first_dirs().to_vec(), spec.second_dirs().to_vec())?;
        JetTable::new(coord_spec, table.into_components())
    }
}

/// The points adaptation touches and the constraint rows over them.
///
/// `colloc` indexes rows of `points`; `grid_index` maps those rows back to
/// the problem grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub grid: Grid,
    pub grid_index: Vec<usize>,
    pub points: DenseMatrix,
    pub colloc: Collocation,
}

impl Layout {
    /// Every grid point; rows coincide with flat grid order.
    pub fn full(spec: &ProblemSpec) -> Self {
        let grid = spec.grid();
        Self {
            grid_index: (0..grid.len()).collect(),
            points: grid.points(),
            colloc: spec.collocation(1),
            grid,
        }
    }

    /// Collocation thinned by `stride` along each axis; only touched points are kept.
    pub fn strided(spec: &ProblemSpec, stride: usize) -> Self {
        if stride <= 1 {
            return Self::full(spec);
        }
        let grid = spec.grid();
        let colloc = spec.collocation(stride);
        let grid_index = colloc.points();
        let mut local = vec![usize::MAX; grid.len()];
        for (i, &g) in grid_index.iter().enumerate() {
            local[g] = i;
        }
        Self {
            points: grid.select(&grid_index),
            colloc: colloc.remap(|g| local[g]),
            grid_index,
            grid,
        }
    }

    pub fn n_points(&self) -> usize {
        self.grid_index.len()
    }

    /// Row targets for `instance` at this layout's constraint points.
    pub fn targets(&self, instance: &PdeInstance) -> Targets {
        let gi = &self.grid_index;
        let global = self.colloc.remap(|l| gi[l]);
        instance.targets(&self.grid, &global)
    }

    /// `u₀(x)` at every PDE point.
    pub fn ic_extension(&self, instance: &PdeInstance) -> Vec<f64> {
        self.colloc.pde.iter().map(|&p| instance.initial(self.points[(p, 0)])).collect()
    }

    /// Selects `values` (one per grid point) at this layout's rows.
    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        self.grid_index.iter().map(|&g| values[g]).collect()
    }
}

/// Everything about an instance that adaptation consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceData {
    pub operator: Operator,
    pub targets: Targets,
    pub ic_extension: Vec<f64>,
    pub task: Vec<f64>,
}

impl InstanceData {
    pub fn new(instance: &PdeInstance, layout: &Layout) -> Self {
        Self {
            operator: instance.operator(),
            targets: layout.targets(instance),
            ic_extension: layout.ic_extension(instance),
            task: instance.theta.clone(),
        }
    }
}

fn op_is_linear(op: &Operator) -> bool {
    match op.advection {
        None => true,
        Some((_, c)) => c == 0.0,
    }
}

/// Features evaluated once over a layout, reused for every solve.
pub struct Adapter {
    layout: Layout,
    table: JetTable,
}

impl Adapter {
    pub fn new(features: &dyn FeatureMap, layout: &Layout, spec: &JetSpec, task: &[f64]) -> Result<Self> {
        let table = features.jets(&layout.points, spec, task)?;
        Self::from_table(layout, table)
    }

    pub fn from_table(layout: &Layout, table: JetTable) -> Result<Self> {
        if table.n_points() != layout.n_points() {
            return Err(Error::DimensionMismatch(format!(
                "jet table has {} points, layout {}",
                table.n_points(),
                layout.n_points()
            )));
        }
        if table.components().iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        Ok(Self {
            layout: layout.clone(),
            table,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn table(&self) -> &JetTable {
        &self.table
    }

    pub fn width(&self) -> usize {
        self.table.width()
    }

    fn comp(&self, c: JetComp) -> Result<&DenseMatrix> {
        self.table
            .get(c)
            .ok_or_else(|| Error::InvalidArgument(format!("operator needs {c:?}, which the jet spec does not carry")))
    }

    pub fn assemble(&self, data: &InstanceData, cfg: &AdaptConfig, current_u: Option<&[f64]>) -> Result<AssembledSystem> {
        let op = &data.operator;
        let colloc = &self.layout.colloc;
        let (np, nb, ni) = (colloc.pde.len(), colloc.bc.len(), colloc.ic.len());
        if np + nb + ni == 0 {
            return Err(Error::InvalidArgument("no collocation rows".into()));
        }
        if data.targets.pde.len() != np || data.targets.bc.len() != nb || data.targets.ic.len() != ni {
            return Err(Error::DimensionMismatch("targets do not match collocation sizes".into()));
        }
        let advection = match op.advection {
            Some((d, c)) if !op_is_linear(op) => {
                let u = current_u.ok_or(Error::MissingLinearization)?;
                if u.len() != np {
                    return Err(Error::DimensionMismatch(format!("current_u has {} values for {np} PDE points", u.len())));
                }
                Some((self.comp(d)?, c, u))
            }
            _ => None,
        };
        let terms: Vec<(&DenseMatrix, f64)> = op
            .terms
            .iter()
            .map(|&(c, w)| Ok((self.comp(c)?, w)))
            .collect::<Result<_>>()?;

        let width = self.width();
        let mut x = DenseMatrix::zeros(np + nb + ni, width);
        let mut y = Vec::with_capacity(np + nb + ni);
        let mut tags = Vec::with_capacity(np + nb + ni);
        for (r, &p) in colloc.pde.iter().enumerate() {
            let row = x.row_mut(r);
            for &(m, w) in &terms {
                axpy_row(row, cfg.lambda_pde * w, m.row(p));
            }
            if let Some((m, c, u)) = advection {
                axpy_row(row, cfg.lambda_pde * c * u[r], m.row(p));
            }
            y.push(cfg.lambda_pde * data.targets.pde[r]);
            tags.push(RowTag::Pde);
        }
        for (k, bc) in colloc.bc.iter().enumerate() {
            let row = x.row_mut(np + k);
            for &(p, c, w) in &bc.terms {
                axpy_row(row, cfg.lambda_bc * w, self.comp(c)?.row(p));
            }
            y.push(cfg.lambda_bc * data.targets.bc[k]);
            tags.push(RowTag::Bc);
        }
        let value = self.table.value();
        for (k, &p) in colloc.ic.iter().enumerate() {
            axpy_row(x.row_mut(np + nb + k), cfg.lambda_ic, value.row(p));
            y.push(cfg.lambda_ic * data.targets.ic[k]);
            tags.push(RowTag::Ic);
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("assembled system".into()));
        }
        Ok(AssembledSystem {
            x,
            y: DenseVector(y),
            row_tags: tags,
        })
    }

    pub fn adapt_linear(&self, data: &InstanceData, cfg: &AdaptConfig) -> Result<AdaptedHead> {
        cfg.validate()?;
        if !op_is_linear(&data.operator) {
            return Err(Error::InvalidArgument("operator is nonlinear; use Picard adaptation".into()));
        }
        let sys = self.assemble(data, cfg, None)?;
        let sol = ridge_factor_solve(&sys.x, &sys.y, cfg.lambda_pi)?;
        let history = vec![sol.weights.norm()];
        self.finish(data, sol.weights, history, pivot_ratio(&sol.factor))
    }

    pub fn adapt_nonlinear(&self, data: &InstanceData, cfg: &AdaptConfig) -> Result<AdaptedHead> {
        cfg.validate()?;
        let np = self.layout.colloc.pde.len();
        let mut u = match cfg.picard_init {
            PicardInit::Zero => vec![0.0; np],
            PicardInit::IcExtension => {
                if data.ic_extension.len() != np {
                    return Err(Error::DimensionMismatch("ic_extension length".into()));
                }
                data.ic_extension.clone()
            }
        };
        let mut w_prev = DenseVector::zeros(self.width());
        let mut history = Vec::with_capacity(cfg.picard_iters);
        let mut ratio = f64::INFINITY;
        for k in 1..=cfg.picard_iters {
            let sys = self.assemble(data, cfg, Some(&u))?;
            let sol = ridge_factor_solve(&sys.x, &sys.y, cfg.lambda_pi)?;
            ratio = ratio.min(pivot_ratio(&sol.factor));
            let w = sol.weights;
            let change = w.iter().zip(w_prev.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            history.push(change);
            u = self.values_at(&self.layout.colloc.pde, &w);
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteIteration(k));
            }
            w_prev = w;
        }
        self.finish(data, w_prev, history, ratio)
    }

    /// Linear or Picard adaptation depending on the operator.
    pub fn adapt(&self, data: &InstanceData, cfg: &AdaptConfig) -> Result<AdaptedHead> {
        if op_is_linear(&data.operator) {
            self.adapt_linear(data, cfg)
        } else {
            self.adapt_nonlinear(data, cfg)
        }
    }

    fn finish(&self, data: &InstanceData, weights: DenseVector, history: Vec<f64>, pivot_ratio: f64) -> Result<AdaptedHead> {
        let residual_norms = self.residual_report(data, &weights)?;
        Ok(AdaptedHead {
            weights,
            residual_norms,
            picard_history: history,
            pivot_ratio,
        })
    }

    fn values_at(&self, points: &[usize], w: &[f64]) -> Vec<f64> {
        let v = self.table.value();
        points.iter().map(|&p| crate::linalg::dot(v.row(p), w)).collect()
    }

    /// `φ(x)ᵀ w` at every layout point.
    pub fn predict(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.table.value().matvec(w)?.into_inner())
    }

    /// Unweighted violations of the full (nonlinear) constraints by `u = φᵀw`.
    pub fn residual_report(&self, data: &InstanceData, w: &[f64]) -> Result<ResidualNorms> {
        if w.len() != self.width() {
            return Err(Error::DimensionMismatch(format!("head of length {} for width {}", w.len(), self.width())));
        }
        let colloc = &self.layout.colloc;
        let at = |c: JetComp, p: usize| -> Result<f64> { Ok(crate::linalg::dot(self.comp(c)?.row(p), w)) };
        let mut pde = 0.0;
        for (r, &p) in colloc.pde.iter().enumerate() {
            let mut lhs: f64 = 0.0;
            for &(c, coef) in &data.operator.terms {
                lhs += coef * at(c, p)?;
            }
            if let Some((d, coef)) = data.operator.advection {
                lhs += coef * at(JetComp::Value, p)? * at(d, p)?;
            }
            pde += (lhs - data.targets.pde[r]).powi(2);
        }
        let mut bc = 0.0;
        for (k, row) in colloc.bc.iter().enumerate() {
            let mut lhs = 0.0;
            for &(p, c, coef) in &row.terms {
                lhs += coef * at(c, p)?;
            }
            bc += (lhs - data.targets.bc[k]).powi(2);
        }
        let mut ic = 0.0;
        for (k, &p) in colloc.ic.iter().enumerate() {
            ic += (at(JetComp::Value, p)? - data.targets.ic[k]).powi(2);
        }
        Ok(ResidualNorms {
            pde: pde.sqrt(),
            bc: bc.sqrt(),
            ic: ic.sqrt(),
        })
    }
}

fn axpy_row(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

pub fn assemble(
    instance: &PdeInstance,
    features: &dyn FeatureMap,
    layout: &Layout,
    cfg: &AdaptConfig,
    current_u: Option<&[f64]>,
) -> Result<AssembledSystem> {
    let adapter = Adapter::new(features, layout, &instance.spec().jet_spec(), &instance.theta)?;
    adapter.assemble(&InstanceData::new(instance, layout), cfg, current_u)
}

pub fn adapt_linear(instance: &PdeInstance, features: &dyn FeatureMap, layout: &Layout, cfg: &AdaptConfig) -> Result<AdaptedHead> {
    let adapter = Adapter::new(features, layout, &instance.spec().jet_spec(), &instance.theta)?;
    adapter.adapt_linear(&InstanceData::new(instance, layout), cfg)
}

pub fn adapt_nonlinear(instance: &PdeInstance, features: &dyn FeatureMap, layout: &Layout, cfg: &AdaptConfig) -> Result<AdaptedHead> {
    let adapter = Adapter::new(features, layout, &instance.spec().jet_spec(), &instance.theta)?;
    adapter.adapt_nonlinear(&InstanceData::new(instance, layout), cfg)
}

pub fn residual_report(
    head: &AdaptedHead,
    instance: &PdeInstance,
    features: &dyn FeatureMap,
    layout: &Layout,
) -> Result<ResidualNorms> {
    let adapter = Adapter::new(features, layout, &instance.spec().jet_spec(), &instance.theta)?;
    adapter.residual_report(&InstanceData::new(instance, layout), &head.weights)
}

/// Differentiable adaptation on a tape.
///
/// `comps` are the jet components over `layout.points` in `spec` order;
/// `lambda_pde` and `lambda_pi` are `1 × 1` nodes. λ_BC, λ_IC, the Picard
/// count and its initial guess come from `cfg`. Returns the head as a
/// `width × 1` node; gradients flow through every Picard iteration.
pub fn tape_adapt(
    tape: &mut Tape,
    comps: &[Var],
    spec: &JetSpec,
    layout: &Layout,
    data: &InstanceData,
    lambda_pde: Var,
    lambda_pi: Var,
    cfg: &AdaptConfig,
) -> Result<Var> {
    let colloc = &layout.colloc;
    let (np, nb, ni) = (colloc.pde.len(), colloc.bc.len(), colloc.ic.len());
    let idx = |c: JetComp| {
        spec.index_of(c)
            .ok_or_else(|| Error::InvalidArgument(format!("operator needs {c:?}, which the jet spec does not carry")))
    };
    let nonlinear = !op_is_linear(&data.operator);

    let mut blocks_fixed: Vec<Var> = Vec::new();
    let mut rhs_fixed: Vec<f64> = Vec::new();
    if nb > 0 {
        let mut entries = Vec::new();
        for (k, row) in colloc.bc.iter().enumerate() {
            for &(p, c, w) in &row.terms {
                entries.push(RowEntry {
                    out: k,
                    input: idx(c)?,
                    row: p,
                    coef: cfg.lambda_bc * w,
                });
            }
        }
        blocks_fixed.push(tape.row_combine(comps, nb, entries));
        rhs_fixed.extend(data.targets.bc.iter().map(|v| cfg.lambda_bc * v));
    }
    if ni > 0 {
        let sel = tape.select_rows(comps[0], &colloc.ic);
        blocks_fixed.push(tape.scale(sel, cfg.lambda_ic));
        rhs_fixed.extend(data.targets.ic.iter().map(|v| cfg.lambda_ic * v));
    }

    let mut lin = None;
    let mut adv_rows = None;
    let mut pde_values = None;
    let h = tape.constant(DenseMatrix::from_vec(np, 1, data.targets.pde.clone())?);
    let y_pde = tape.scale_by(h, lambda_pde);
    if np > 0 {
        let mut entries = Vec::new();
        for (r, &p) in colloc.pde.iter().enumerate() {
            for &(c, w) in &data.operator.terms {
                entries.push(RowEntry {
                    out: r,
                    input: idx(c)?,
                    row: p,
                    coef: w,
                });
            }
        }
        lin = Some(tape.row_combine(comps, np, entries));
        if nonlinear {
            let (d, c) = data.operator.advection.unwrap();
            let sel = tape.select_rows(comps[idx(d)?], &colloc.pde);
            adv_rows = Some((tape.scale(sel, c), c));
            pde_values = Some(tape.select_rows(comps[0], &colloc.pde));
        }
    }
    let rhs_rest = tape.constant(DenseMatrix::from_vec(rhs_fixed.len(), 1, rhs_fixed)?);
    let y = if nb + ni > 0 && np > 0 {
        tape.vstack(&[y_pde, rhs_rest])
    } else if np > 0 {
        y_pde
    } else {
        rhs_rest
    };

    let iters = if nonlinear { cfg.picard_iters.max(1) } else { 1 };
    let mut u = if nonlinear {
        let init = match cfg.picard_init {
            PicardInit::Zero => vec![0.0; np],
            PicardInit::IcExtension => data.ic_extension.clone(),
        };
        Some(tape.constant(DenseMatrix::from_vec(np, 1, init)?))
    } else {
        None
    };
    let mut w = None;
    for k in 1..=iters {
        let mut parts = Vec::with_capacity(1 + blocks_fixed.len());
        if let Some(l) = lin {
            let pde = match (adv_rows, u) {
                (Some((a, _)), Some(uc)) => {
                    let scaled = tape.row_scale(a, uc);
                    tape.add(l, scaled)
                }
                _ => l,
            };
            parts.push(tape.scale_by(pde, lambda_pde));
        }
        parts.extend(blocks_fixed.iter().copied());
        let x = if parts.len() == 1 { parts[0] } else { tape.vstack(&parts) };
        let wk = tape.ridge_solve(x, y, lambda_pi)?;
        if let Some(vals) = pde_values {
            let next = tape.matmul(vals, wk);
            if !tape.value(next).is_finite() {
                return Err(Error::NonFiniteIteration(k));
            }
            u = Some(next);
        }
        w = Some(wk);
    }
    Ok(w.unwrap())
}
