//! Training the trunk through the pseudoinverse adaptation itself.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_seen, finite_loss, Adam, LearnableWeights, ModelKind, ParamSet, TraceRow, TrainConfig, TrainedModel};
use crate::autodiff::{grad_params, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::network::{tape_jets, NetConfig, NetParams};
use crate::pinv::{tape_adapt, AdaptConfig, Adapter, InstanceData, Layout, Trunk};
use crate::problems::LabeledInstance;

/// `Σ (pred − ref)² / Σ ref²` over the layout points.
fn rel_mse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / den)
}

/// Mean relative MSE of adapted predictions, computed without the tape.
pub fn pil_loss(
    net: &NetConfig,
    params: &NetParams,
    lambdas: &LearnableWeights,
    instances: &[&LabeledInstance],
    layout: &Layout,
    adapt: &AdaptConfig,
) -> Result<f64> {
    let trunk = Trunk::new(net, params);
    let cfg = AdaptConfig {
        lambda_pde: lambdas.lambda_pde(),
        lambda_pi: lambdas.lambda_pi(),
        ..adapt.clone()
    };
    let mut total = 0.0;
    for li in instances {
        let spec = li.instance.spec().jet_spec();
        let adapter = Adapter::new(&trunk, layout, &spec, &li.instance.theta)?;
        let head = adapter.adapt(&InstanceData::new(&li.instance, layout), &cfg)?;
        let pred = adapter.predict(&head.weights)?;
        total += rel_mse(&pred, &layout.gather(&li.reference))?;
    }
    Ok(total / instances.len() as f64)
}

/// Builds the batch loss on `tape`. `vars` are the trunk blocks followed by
/// `ρ_PDE` and `ρ_PI`.
fn tape_loss(
    tape: &mut Tape,
    vars: &[Var],
    net: &NetConfig,
    layout: &Layout,
    batch: &[&LabeledInstance],
    adapt: &AdaptConfig,
) -> Result<Var> {
    let nt = 2 * net.hidden_layers;
    let spec = batch[0].instance.spec().jet_spec();
    let comps = tape_jets(tape, net, &vars[..nt], &layout.points, &spec)?;
    let lambda_pde = tape.softplus(vars[nt]);
    let lambda_pi = tape.softplus(vars[nt + 1]);
    let mut total: Option<Var> = None;
    for li in batch {
        let data = InstanceData::new(&li.instance, layout);
        let w = tape_adapt(tape, &comps, &spec, layout, &data, lambda_pde, lambda_pi, adapt)?;
        let pred = tape.matmul(comps[0], w);
        let reference = layout.gather(&li.reference);
        let den: f64 = reference.iter().map(|r| r * r).sum();
        if den == 0.0 {
            return Err(Error::ZeroReference);
        }
        let r = tape.constant(DenseMatrix::from_vec(reference.len(), 1, reference)?);
        let d = tape.sub(pred, r);
        let sq = tape.square(d);
        let s = tape.sum(sq);
        let term = tape.scale(s, 1.0 / (den * batch.len() as f64));
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    Ok(total.unwrap())
}

/// Gradient of the batch loss. `blocks` are the trunk blocks followed by
/// `ρ_PDE` and `ρ_PI` as `1 × 1` matrices.
pub fn pil_gradient(
    net: &NetConfig,
    blocks: &[DenseMatrix],
    layout: &Layout,
    batch: &[&LabeledInstance],
    adapt: &AdaptConfig,
) -> Result<crate::autodiff::GradReport> {
    grad_params(blocks, |tape, vars| tape_loss(tape, vars, net, layout, batch, adapt))
}

/// PiL training: every step adapts a random minibatch of seen instances with
/// the current trunk and λ, and descends the mean relative MSE of the
/// adapted predictions. λ_BC, λ_IC and the Picard settings come from `adapt`.
pub fn train_pil(seen: &[&LabeledInstance], net: &NetConfig, adapt: &AdaptConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    net.validate()?;
    adapt.validate()?;
    let kind = seen.first().map(|l| l.instance.kind).ok_or_else(|| Error::InvalidArgument("no seen instances".into()))?;
    check_seen(seen, kind)?;
    let spec = kind.spec();
    if net.task_dim() != 0 || net.coord_dim != spec.coord_dim() {
        return Err(Error::InvalidArgument("PiL trunk takes coordinates only".into()));
    }
    let start = Instant::now();
    let layout = Layout::strided(&spec, cfg.collocation_stride);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetParams::init(net)?;
    let init = LearnableWeights::default();
    let mut set = ParamSet {
        blocks: params.trunk_blocks(),
    };
    set.blocks.push(DenseMatrix::scalar(init.rho_pde));
    set.blocks.push(DenseMatrix::scalar(init.rho_pi));
    let mut flat = set.flatten();
    let mut opt = Adam::new(flat.len(), cfg);
    let nt = 2 * net.hidden_layers;
    let mut order: Vec<usize> = (0..seen.len()).collect();
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        order.shuffle(&mut rng);
        let batch: Vec<&LabeledInstance> = order.iter().take(cfg.batch_instances).map(|&i| seen[i]).collect();
        let report = pil_gradient(net, &set.blocks, &layout, &batch, adapt)?;
        finite_loss(report.loss)?;
        let lambdas = LearnableWeights {
            rho_pde: set.blocks[nt][(0, 0)],
            rho_pi: set.blocks[nt + 1][(0, 0)],
        };
        trace.push(TraceRow {
            step,
            loss: report.loss,
            lambda_pde: Some(lambdas.lambda_pde()),
            lambda_pi: Some(lambdas.lambda_pi()),
        });
        opt.step(&mut flat, &report.gradient);
        set.assign(&flat);
    }
    params.set_trunk_blocks(&set.blocks[..nt])?;
    params.heads.clear();
    Ok(TrainedModel {
        kind: ModelKind::Pil,
        problem: kind,
        config: net.clone(),
        params,
        lambdas: Some(LearnableWeights {
            rho_pde: set.blocks[nt][(0, 0)],
            rho_pi: set.blocks[nt + 1][(0, 0)],
        }),
        seen_ids: seen.iter().map(|l| l.instance.id).collect(),
        trace,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}
