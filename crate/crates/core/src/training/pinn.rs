//! Single-instance PINN baseline trained by gradient descent on the
//! physics residual.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{finite_loss, heads_from_matrix, init_heads, Adam, ModelKind, ParamSet, TraceRow, TrainConfig, TrainedModel};
use crate::autodiff::{grad_params, JetComp, JetSpec, RowEntry, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::network::{embed_batch, tape_jets, NetConfig, NetParams};
use crate::pinv::{AdaptConfig, Adapter, InstanceData, Layout};
use crate::problems::{rel_l2, PdeInstance};

/// Stop as soon as the full-grid prediction reaches `rel_l2` against
/// `reference`, checked every `check_every` steps.
#[derive(Clone, Debug)]
pub struct PinnTarget {
    pub reference: Vec<f64>,
    pub rel_l2: f64,
    pub check_every: usize,
}

/// Sum of per-family weighted mean squared violations of `u = φᵀ head`:
///
/// ```text
/// λ_PDE² ‖𝒩[u] − h‖² / n_PDE + λ_BC² ‖ℬ[u] − g‖² / n_BC + λ_IC² ‖u − u₀‖² / n_IC
/// ```
///
/// with the full nonlinear operator. `comps` are jet components over the
/// layout points in `spec` order.
pub fn physics_loss(
    tape: &mut Tape,
    comps: &[Var],
    spec: &JetSpec,
    layout: &Layout,
    data: &InstanceData,
    cfg: &AdaptConfig,
    head: Var,
) -> Result<Var> {
    let colloc = &layout.colloc;
    let idx = |c: JetComp| {
        spec.index_of(c)
            .ok_or_else(|| Error::InvalidArgument(format!("operator needs {c:?}, which the jet spec does not carry")))
    };
    let mut parts = Vec::new();
    let np = colloc.pde.len();
    if np > 0 {
        let mut entries = Vec::new();
        for (r, &p) in colloc.pde.iter().enumerate() {
            for &(c, w) in &data.operator.terms {
                entries.push(RowEntry {
                    out: r,
                    input: idx(c)?,
                    row: p,
                    coef: cfg.lambda_pde * w,
                });
            }
        }
        let lin = tape.row_combine(comps, np, entries);
        let mut pde = tape.matmul(lin, head);
        if let Some((d, c)) = data.operator.advection {
            if c != 0.0 {
                let vsel = tape.select_rows(comps[0], &colloc.pde);
                let dsel = tape.select_rows(comps[idx(d)?], &colloc.pde);
                let u = tape.matmul(vsel, head);
                let ud = tape.matmul(dsel, head);
                let prod = tape.mul(u, ud);
                let adv = tape.scale(prod, cfg.lambda_pde * c);
                pde = tape.add(pde, adv);
            }
        }
        let t = data.targets.pde.iter().map(|v| cfg.lambda_pde * v).collect();
        parts.push(family_mse(tape, pde, t)?);
    }
    if !colloc.bc.is_empty() {
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
        let b = tape.row_combine(comps, colloc.bc.len(), entries);
        let lhs = tape.matmul(b, head);
        let t = data.targets.bc.iter().map(|v| cfg.lambda_bc * v).collect();
        parts.push(family_mse(tape, lhs, t)?);
    }
    if !colloc.ic.is_empty() {
        let sel = tape.select_rows(comps[0], &colloc.ic);
        let scaled = tape.scale(sel, cfg.lambda_ic);
        let lhs = tape.matmul(scaled, head);
        let t = data.targets.ic.iter().map(|v| cfg.lambda_ic * v).collect();
        parts.push(family_mse(tape, lhs, t)?);
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p);
    }
    Ok(total)
}

fn family_mse(tape: &mut Tape, lhs: Var, targets: Vec<f64>) -> Result<Var> {
    let n = targets.len();
    let t = tape.constant(DenseMatrix::from_vec(n, 1, targets)?);
    let d = tape.sub(lhs, t);
    let sq = tape.square(d);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / n as f64))
}

/// Trains a fresh trunk and head on one instance's physics loss.
/// Returns the model and the step at which `target` was met, if any.
pub fn train_single_pinn(
    instance: &PdeInstance,
    net: &NetConfig,
    adapt: &AdaptConfig,
    cfg: &TrainConfig,
    target: Option<&PinnTarget>,
) -> Result<(TrainedModel, Option<usize>)> {
    cfg.validate()?;
    net.validate()?;
    let spec = instance.spec();
    if net.task_dim() != 0 || net.coord_dim != spec.coord_dim() {
        return Err(Error::InvalidArgument("single PINN trunk takes coordinates only".into()));
    }
    let start = Instant::now();
    let layout = Layout::strided(&spec, cfg.collocation_stride);
    let data = InstanceData::new(instance, &layout);
    let jet_spec = spec.jet_spec();
    let grid_points = spec.grid().points();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetParams::init(net)?;
    let mut set = ParamSet {
        blocks: params.trunk_blocks(),
    };
    set.blocks.push(init_heads(&mut rng, net.embedding_width(), 1));
    let mut flat = set.flatten();
    let mut opt = Adam::new(flat.len(), cfg);
    let nt = 2 * net.hidden_layers;
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut reached = None;

    for step in 0..cfg.steps {
        if let Some(tg) = target {
            if tg.check_every > 0 && step % tg.check_every == 0 {
                params.set_trunk_blocks(&set.blocks[..nt])?;
                let e = embed_batch(&params, net, &grid_points)?;
                let pred = e.matvec(set.blocks[nt].as_slice())?;
                if rel_l2(&pred, &tg.reference)? <= tg.rel_l2 {
                    reached = Some(step);
                    break;
                }
            }
        }
        let report = grad_params(&set.blocks, |tape, vars| {
            let comps = tape_jets(tape, net, &vars[..nt], &layout.points, &jet_spec)?;
            physics_loss(tape, &comps, &jet_spec, &layout, &data, adapt, vars[nt])
        })?;
        finite_loss(report.loss)?;
        trace.push(TraceRow {
            step,
            loss: report.loss,
            lambda_pde: None,
            lambda_pi: None,
        });
        opt.step(&mut flat, &report.gradient);
        set.assign(&flat);
    }
    params.set_trunk_blocks(&set.blocks[..nt])?;
    params.heads = heads_from_matrix(&set.blocks[nt]);
    Ok((
        TrainedModel {
            kind: ModelKind::SinglePinn,
            problem: instance.kind,
            config: net.clone(),
            params,
            lambdas: None,
            seen_ids: vec![instance.id],
            trace,
            train_seconds: start.elapsed().as_secs_f64(),
        },
        reached,
    ))
}

/// Gradient descent on the head alone over fixed features.
pub fn train_head_frozen(
    adapter: &Adapter,
    data: &InstanceData,
    adapt: &AdaptConfig,
    cfg: &TrainConfig,
) -> Result<(DenseVector, Vec<TraceRow>)> {
    cfg.validate()?;
    let table = adapter.table();
    let mut head = vec![DenseMatrix::zeros(adapter.width(), 1)];
    let mut flat = head[0].as_slice().to_vec();
    let mut opt = Adam::new(flat.len(), cfg);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let report = grad_params(&head, |tape, vars| {
            let comps: Vec<Var> = table.components().iter().map(|m| tape.constant(m.clone())).collect();
            physics_loss(tape, &comps, table.spec(), adapter.layout(), data, adapt, vars[0])
        })?;
        finite_loss(report.loss)?;
        trace.push(TraceRow {
            step,
            loss: report.loss,
            lambda_pde: None,
            lambda_pi: None,
        });
        opt.step(&mut flat, &report.gradient);
        head[0].as_mut_slice().copy_from_slice(&flat);
    }
    Ok((DenseVector(flat), trace))
}
