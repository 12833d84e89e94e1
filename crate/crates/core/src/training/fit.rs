//! Supervised fits to seen reference grids.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_seen, finite_loss, heads_from_matrix, init_heads, Adam, ModelKind, ParamSet, TraceRow, TrainConfig, TrainedModel};
use crate::autodiff::{grad_params, GradReport, JetSpec};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::network::{tape_jets, NetConfig, NetParams, Variant};
use crate::pinv::with_task;
use crate::problems::LabeledInstance;

fn sample_points(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    if batch == 0 || batch >= n {
        (0..n).collect()
    } else {
        (0..batch).map(|_| rng.gen_range(0..n)).collect()
    }
}

/// Plain MLP on `(coordinates, θ) → u` over every seen grid sample.
pub fn train_mlp(seen: &[&LabeledInstance], net: &NetConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    net.validate()?;
    let kind = seen.first().map(|l| l.instance.kind).ok_or_else(|| Error::InvalidArgument("no seen instances".into()))?;
    check_seen(seen, kind)?;
    let spec = kind.spec();
    if net.variant != Variant::PlainMlp || net.coord_dim != spec.coord_dim() || net.task_dim() != spec.task_dim() {
        return Err(Error::InvalidArgument(
            "MLP trainer needs a plain_mlp config taking coordinates and task parameters".into(),
        ));
    }
    let start = Instant::now();
    let grid = spec.grid();
    let coords = grid.points();
    let inputs: Vec<DenseMatrix> = seen.iter().map(|li| with_task(&coords, &li.instance.theta)).collect();
    let n_grid = grid.len();
    let total = n_grid * seen.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetParams::init(net)?;
    let mut set = ParamSet {
        blocks: params.trunk_blocks(),
    };
    set.blocks.push(init_heads(&mut rng, net.embedding_width(), 1));
    let mut flat = set.flatten();
    let mut opt = Adam::new(flat.len(), cfg);
    let value_spec = JetSpec::value_only(net.input_dim);
    let mut trace = Vec::with_capacity(cfg.steps);
    let nt = 2 * net.hidden_layers;

    for step in 0..cfg.steps {
        let batch = sample_points(&mut rng, total, cfg.batch_points);
        let mut pts = DenseMatrix::zeros(batch.len(), net.input_dim);
        let mut target = DenseMatrix::zeros(batch.len(), 1);
        for (r, &s) in batch.iter().enumerate() {
            let (k, p) = (s / n_grid, s % n_grid);
            pts.row_mut(r).copy_from_slice(inputs[k].row(p));
            target.as_mut_slice()[r] = seen[k].reference[p];
        }
        let inv = 1.0 / batch.len() as f64;
        let report = grad_params(&set.blocks, |tape, vars| {
            let comps = tape_jets(tape, net, &vars[..nt], &pts, &value_spec)?;
            let pred = tape.matmul(comps[0], vars[nt]);
            let t = tape.constant(target.clone());
            let d = tape.sub(pred, t);
            let sq = tape.square(d);
            let s = tape.sum(sq);
            Ok(tape.scale(s, inv))
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
    Ok(TrainedModel {
        kind: ModelKind::Mlp,
        problem: kind,
        config: net.clone(),
        params,
        lambdas: None,
        seen_ids: seen.iter().map(|l| l.instance.id).collect(),
        trace,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Loss `Σ (Φ H − T)² / (rows · K)` and its gradient. `blocks` are the trunk
/// blocks followed by the `width × K` head matrix; column `k` of `targets`
/// belongs to head `k`.
pub fn hydra_gradient(net: &NetConfig, blocks: &[DenseMatrix], points: &DenseMatrix, targets: &DenseMatrix) -> Result<GradReport> {
    let nt = 2 * net.hidden_layers;
    if blocks.len() != nt + 1 || blocks[nt].cols() != targets.cols() || points.rows() != targets.rows() {
        return Err(Error::DimensionMismatch("HYDRA blocks, points and targets disagree".into()));
    }
    let value_spec = JetSpec::value_only(net.input_dim);
    let inv = 1.0 / (targets.rows() * targets.cols()) as f64;
    grad_params(blocks, |tape, vars| {
        let comps = tape_jets(tape, net, &vars[..nt], points, &value_spec)?;
        let pred = tape.matmul(comps[0], vars[nt]);
        let t = tape.constant(targets.clone());
        let d = tape.sub(pred, t);
        let sq = tape.square(d);
        let s = tape.sum(sq);
        Ok(tape.scale(s, inv))
    })
}

/// Shared trunk with one linear head per seen instance; the loss is the
/// mean over instances of each head's MSE.
pub fn train_hydra(seen: &[&LabeledInstance], net: &NetConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    net.validate()?;
    let kind = seen.first().map(|l| l.instance.kind).ok_or_else(|| Error::InvalidArgument("no seen instances".into()))?;
    check_seen(seen, kind)?;
    let spec = kind.spec();
    if net.task_dim() != 0 || net.coord_dim != spec.coord_dim() {
        return Err(Error::InvalidArgument("HYDRA trunk takes coordinates only".into()));
    }
    let start = Instant::now();
    let grid = spec.grid();
    let coords = grid.points();
    let k = seen.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetParams::init(net)?;
    let mut set = ParamSet {
        blocks: params.trunk_blocks(),
    };
    set.blocks.push(init_heads(&mut rng, net.embedding_width(), k));
    let mut flat = set.flatten();
    let mut opt = Adam::new(flat.len(), cfg);
    let nt = 2 * net.hidden_layers;
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch = sample_points(&mut rng, grid.len(), cfg.batch_points);
        let pts = DenseMatrix::from_fn(batch.len(), coords.cols(), |r, c| coords[(batch[r], c)]);
        let target = DenseMatrix::from_fn(batch.len(), k, |r, j| seen[j].reference[batch[r]]);
        let report = hydra_gradient(net, &set.blocks, &pts, &target)?;
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
    Ok(TrainedModel {
        kind: ModelKind::Hydra,
        problem: kind,
        config: net.clone(),
        params,
        lambdas: None,
        seen_ids: seen.iter().map(|l| l.instance.id).collect(),
        trace,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}
