//! Zero-shot evaluation and λ selection.

use std::time::Instant;

use rayon::prelude::*;

use super::{ModelKind, TrainedModel};
use crate::error::{Error, Result};
use crate::linalg::{gram, Cholesky, DenseMatrix, DenseVector};
use crate::network::embed_batch;
use crate::autodiff::JetSpec;
use crate::pinv::{pivot_ratio, with_task, AdaptConfig, Adapter, FeatureMap, InstanceData, Layout, RowTag, Trunk};
use crate::problems::{rel_l2, LabeledInstance, PdeInstance};

pub const DEFAULT_PDE_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];
/// Cells whose normal matrix factors with a smaller `min/max` pivot ratio
/// on any seen instance score `+∞`.
pub const MIN_PIVOT_RATIO: f64 = 1e-13;
pub const DEFAULT_PI_GRID: [f64; 10] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// The stored head, no adaptation.
    Mlp,
    /// Pseudoinverse adaptation on the plain MLP's last hidden layer.
    MlpPi2,
    HydraPi2,
    Pil,
    /// The single-instance baseline's own head.
    SinglePinn,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Mlp, Method::MlpPi2, Method::HydraPi2, Method::Pil, Method::SinglePinn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mlp => "mlp",
            Method::MlpPi2 => "mlp_pi2",
            Method::HydraPi2 => "hydra_pi2",
            Method::Pil => "pil",
            Method::SinglePinn => "single_pinn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }

    /// Model kind this method evaluates. The head-only methods also accept
    /// HYDRA models, whose seen instances keep their own heads.
    pub fn model_kind(self) -> ModelKind {
        match self {
            Method::Mlp | Method::MlpPi2 => ModelKind::Mlp,
            Method::HydraPi2 => ModelKind::Hydra,
            Method::Pil => ModelKind::Pil,
            Method::SinglePinn => ModelKind::SinglePinn,
        }
    }

    pub fn adapts(self) -> bool {
        matches!(self, Method::MlpPi2 | Method::HydraPi2 | Method::Pil)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub instance_id: usize,
    pub seen: bool,
    pub rel_l2: f64,
    pub adapt_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub cfg: AdaptConfig,
    /// `(λ_PDE, λ_PI, mean seen rel-L2)` per cell; failures score `+∞`.
    pub table: Vec<(f64, f64, f64)>,
}

fn check_method(model: &TrainedModel, method: Method) -> Result<()> {
    let ok = if method.adapts() {
        model.kind == method.model_kind()
    } else {
        model.kind != ModelKind::Pil
    };
    if !ok {
        return Err(Error::InvalidArgument(format!(
            "method {} needs a {} model, got {}",
            method.name(),
            method.model_kind().name(),
            model.kind.name()
        )));
    }
    Ok(())
}

/// Embedding of every grid point, with θ appended for task-conditioned trunks.
fn grid_features(model: &TrainedModel, instance: &PdeInstance) -> Result<DenseMatrix> {
    let pts = instance.spec().grid().points();
    if model.config.task_dim() > 0 {
        embed_batch(&model.params, &model.config, &with_task(&pts, &instance.theta))
    } else {
        embed_batch(&model.params, &model.config, &pts)
    }
}

fn stored_head<'a>(model: &'a TrainedModel, instance: &PdeInstance) -> Result<&'a DenseVector> {
    let k = match model.kind {
        ModelKind::Hydra => model
            .seen_ids
            .iter()
            .position(|&i| i == instance.id)
            .ok_or_else(|| Error::InvalidArgument(format!("instance {} has no HYDRA head", instance.id)))?,
        _ => 0,
    };
    model
        .params
        .heads
        .get(k)
        .ok_or_else(|| Error::InvalidArgument(format!("{} model has no head {k}", model.kind.name())))
}

/// Prediction on the full problem grid and the wall time in milliseconds
/// spent on feature evaluation, assembly, solve and prediction.
pub fn adapt_predict(
    model: &TrainedModel,
    instance: &PdeInstance,
    layout: &Layout,
    cfg: &AdaptConfig,
    method: Method,
) -> Result<(Vec<f64>, f64)> {
    check_method(model, method)?;
    if instance.kind != model.problem {
        return Err(Error::InvalidArgument(format!(
            "model trained on {}, instance is {}",
            model.problem, instance.kind
        )));
    }
    let start = Instant::now();
    let w = if method.adapts() {
        let trunk = Trunk::new(&model.config, &model.params);
        let adapter = Adapter::new(&trunk, layout, &instance.spec().jet_spec(), &instance.theta)?;
        adapter.adapt(&InstanceData::new(instance, layout), cfg)?.weights
    } else {
        stored_head(model, instance)?.clone()
    };
    let pred = grid_features(model, instance)?.matvec(&w)?.into_inner();
    Ok((pred, start.elapsed().as_secs_f64() * 1e3))
}

/// Adapts to each instance without its reference and scores the prediction
/// against it afterwards.
pub fn adapt_and_eval(
    model: &TrainedModel,
    instances: &[&LabeledInstance],
    layout: &Layout,
    cfg: &AdaptConfig,
    method: Method,
) -> Result<Vec<EvalRow>> {
    instances
        .par_iter()
        .map(|li| {
            let (pred, ms) = adapt_predict(model, &li.instance, layout, cfg, method)?;
            Ok(EvalRow {
                instance_id: li.instance.id,
                seen: model.seen_ids.contains(&li.instance.id),
                rel_l2: rel_l2(&pred, &li.reference)?,
                adapt_ms: ms,
            })
        })
        .collect()
}

/// Per-instance state reused across grid cells.
struct Cached<'a> {
    li: &'a LabeledInstance,
    adapter: Adapter,
    data: InstanceData,
    grid: DenseMatrix,
    /// Gram blocks `(Xᵀ X, Xᵀ y)` of the PDE rows and of the rest at λ_PDE = 1.
    split: Option<[(DenseMatrix, DenseVector); 2]>,
}

impl Cached<'_> {
    fn score(&self, cfg: &AdaptConfig) -> f64 {
        let w = match &self.split {
            Some([(gp, bp), (gr, br)]) => {
                let l2 = cfg.lambda_pde * cfg.lambda_pde;
                let n = gp.rows();
                let a = DenseMatrix::from_fn(n, n, |i, j| {
                    l2 * gp[(i, j)] + gr[(i, j)] + if i == j { cfg.lambda_pi } else { 0.0 }
                });
                let b: Vec<f64> = bp.iter().zip(br.iter()).map(|(p, r)| l2 * p + r).collect();
                Cholesky::factor(&a).and_then(|f| Ok((f.solve(&b)?, pivot_ratio(&f))))
            }
            None => self.adapter.adapt(&self.data, cfg).map(|h| (h.weights, h.pivot_ratio)),
        };
        let w = w.and_then(|(w, r)| {
            if r < MIN_PIVOT_RATIO {
                Err(Error::NonFinite("ill-conditioned normal matrix".into()))
            } else {
                Ok(w)
            }
        });
        w.and_then(|w| rel_l2(&self.grid.matvec(&w)?, &self.li.reference))
            .ok()
            .filter(|e| e.is_finite())
            .unwrap_or(f64::INFINITY)
    }
}

fn gram_rows(x: &DenseMatrix, y: &DenseVector, rows: &[usize]) -> Result<(DenseMatrix, DenseVector)> {
    let sub = DenseMatrix::from_fn(rows.len(), x.cols(), |r, c| x[(rows[r], c)]);
    let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    Ok((gram(&sub), sub.tr_matvec(&ys)?))
}

/// Picks `(λ_PDE, λ_PI)` minimizing mean rel-L2 of adaptation on seen
/// instances. Other fields of `base` are kept; ties go to the larger λ_PI.
/// For a trained model pass `Trunk::new(&model.config, &model.params)`.
pub fn grid_search(
    features: &(dyn FeatureMap + Sync),
    seen: &[&LabeledInstance],
    layout: &Layout,
    base: &AdaptConfig,
    pde_grid: &[f64],
    pi_grid: &[f64],
) -> Result<GridSearchResult> {
    if seen.is_empty() || pde_grid.is_empty() || pi_grid.is_empty() {
        return Err(Error::InvalidArgument("grid search needs seen instances and non-empty grids".into()));
    }
    let cache: Vec<Cached> = seen
        .par_iter()
        .map(|li| {
            let inst = &li.instance;
            let spec = inst.spec();
            let adapter = Adapter::new(features, layout, &spec.jet_spec(), &inst.theta)?;
            let data = InstanceData::new(inst, layout);
            let split = if data.operator.is_linear() {
                let unit = AdaptConfig {
                    lambda_pde: 1.0,
                    ..base.clone()
                };
                let sys = adapter.assemble(&data, &unit, None)?;
                let pde = sys.rows_tagged(RowTag::Pde);
                let rest: Vec<usize> = (0..sys.row_tags.len()).filter(|&r| sys.row_tags[r] != RowTag::Pde).collect();
                Some([gram_rows(&sys.x, &sys.y, &pde)?, gram_rows(&sys.x, &sys.y, &rest)?])
            } else {
                None
            };
            let grid = features
                .jets(&spec.grid().points(), &JetSpec::value_only(spec.coord_dim()), &inst.theta)?
                .value()
                .clone();
            Ok(Cached {
                li,
                grid,
                adapter,
                data,
                split,
            })
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(f64, f64)> = pde_grid.iter().flat_map(|&p| pi_grid.iter().map(move |&q| (p, q))).collect();
    let table: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .map(|&(p, q)| {
            let cfg = AdaptConfig {
                lambda_pde: p,
                lambda_pi: q,
                ..base.clone()
            };
            let mean = cache.iter().map(|c| c.score(&cfg)).sum::<f64>() / cache.len() as f64;
            (p, q, if mean.is_nan() { f64::INFINITY } else { mean })
        })
        .collect();

    let mut best = 0;
    for (i, &(_, q, e)) in table.iter().enumerate() {
        let (_, bq, be) = table[best];
        if e < be || (e == be && q > bq) {
            best = i;
        }
    }
    Ok(GridSearchResult {
        cfg: AdaptConfig {
            lambda_pde: table[best].0,
            lambda_pi: table[best].1,
            ..base.clone()
        },
        table,
    })
}
