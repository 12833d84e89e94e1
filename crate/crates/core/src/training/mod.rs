//! Model-building procedures: data-fit MLP, multi-head HYDRA, PiL training
//! through the pseudoinverse, a single-instance PINN baseline, plus λ grid
//! search and zero-shot evaluation.

mod eval;
mod fit;
mod pil;
mod pinn;

pub use eval::{adapt_and_eval, adapt_predict, grid_search, EvalRow, GridSearchResult, Method, DEFAULT_PDE_GRID, DEFAULT_PI_GRID, MIN_PIVOT_RATIO};
pub use fit::{hydra_gradient, train_hydra, train_mlp};
pub use pil::{pil_gradient, pil_loss, train_pil};
pub use pinn::{physics_loss, train_head_frozen, train_single_pinn, PinnTarget};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{softplus, softplus_inverse};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::network::{read_model, write_model, NetConfig, NetParams};
use crate::problems::{LabeledInstance, ProblemKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Hydra,
    Pil,
    SinglePinn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Hydra => "hydra",
            ModelKind::Pil => "pil",
            ModelKind::SinglePinn => "single_pinn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [ModelKind::Mlp, ModelKind::Hydra, ModelKind::Pil, ModelKind::SinglePinn]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Instances per PiL step.
    pub batch_instances: usize,
    /// Sampled points per MLP/HYDRA step; 0 means the whole grid.
    pub batch_points: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Keep every n-th grid index per axis for physics-informed losses.
    pub collocation_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 1000,
            batch_instances: 4,
            batch_points: 0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            collocation_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.steps == 0 || self.batch_instances == 0 || self.collocation_stride == 0 {
            return bad("steps, batch_instances and collocation_stride must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("beta1, beta2 must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// Adaptive-moment gradient descent over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Raw scalars behind `λ = softplus(ρ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnableWeights {
    pub rho_pde: f64,
    pub rho_pi: f64,
}

impl LearnableWeights {
    pub fn from_lambdas(lambda_pde: f64, lambda_pi: f64) -> Self {
        Self {
            rho_pde: softplus_inverse(lambda_pde),
            rho_pi: softplus_inverse(lambda_pi),
        }
    }

    pub fn lambda_pde(&self) -> f64 {
        softplus(self.rho_pde)
    }

    pub fn lambda_pi(&self) -> f64 {
        softplus(self.rho_pi)
    }
}

impl Default for LearnableWeights {
    fn default() -> Self {
        Self::from_lambdas(1.0, 1e-6)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub lambda_pde: Option<f64>,
    pub lambda_pi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub problem: ProblemKind,
    pub config: NetConfig,
    /// Trunk plus heads: one for MLP and single PINN, K for HYDRA, none for PiL.
    pub params: NetParams,
    pub lambdas: Option<LearnableWeights>,
    pub seen_ids: Vec<usize>,
    pub trace: Vec<TraceRow>,
    /// Wall-clock training time; not persisted with the model.
    pub train_seconds: f64,
}

impl TrainedModel {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.loss)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), self.kind.name().to_string());
        meta.insert("problem".to_string(), self.problem.name().to_string());
        meta.insert(
            "seen_ids".to_string(),
            self.seen_ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
        );
        if let Some(l) = self.lambdas {
            meta.insert("rho_pde".to_string(), format!("{:016x}", l.rho_pde.to_bits()));
            meta.insert("rho_pi".to_string(), format!("{:016x}", l.rho_pi.to_bits()));
        }
        write_model(w, &self.config, &self.params, &meta)
    }

    /// Restores a saved model; the trace and timing are not part of the file.
    pub fn load<R: Read>(r: R) -> Result<Self> {
        let (config, params, meta) = read_model(r)?;
        let get = |k: &str| meta.get(k).ok_or_else(|| Error::Format(format!("model file lacks '{k}'")));
        let bits = |k: &str| -> Result<f64> {
            u64::from_str_radix(get(k)?, 16)
                .map(f64::from_bits)
                .map_err(|e| Error::Format(format!("{k}: {e}")))
        };
        let kind = ModelKind::parse(get("kind")?)?;
        let problem: ProblemKind = get("problem")?.parse()?;
        let seen_ids = get("seen_ids")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::Format(format!("seen_ids: {e}"))))
            .collect::<Result<_>>()?;
        let lambdas = if meta.contains_key("rho_pde") {
            Some(LearnableWeights {
                rho_pde: bits("rho_pde")?,
                rho_pi: bits("rho_pi")?,
            })
        } else {
            None
        };
        Ok(Self {
            kind,
            problem,
            config,
            params,
            lambdas,
            seen_ids,
            trace: Vec::new(),
            train_seconds: 0.0,
        })
    }
}

/// Parameter blocks flattened for the optimizer.
pub(crate) struct ParamSet {
    pub blocks: Vec<DenseMatrix>,
}

impl ParamSet {
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.as_slice().iter().copied()).collect()
    }

    pub fn assign(&mut self, flat: &[f64]) {
        let mut off = 0;
        for b in &mut self.blocks {
            let n = b.as_slice().len();
            b.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

/// Uniform head initialization in `±sqrt(6 / (width + 1))`.
pub(crate) fn init_heads(rng: &mut ChaCha8Rng, width: usize, count: usize) -> DenseMatrix {
    let a = (6.0 / (width + 1) as f64).sqrt();
    DenseMatrix::from_fn(width, count, |_, _| rng.gen_range(-a..a))
}

pub(crate) fn heads_from_matrix(m: &DenseMatrix) -> Vec<DenseVector> {
    (0..m.cols()).map(|k| DenseVector((0..m.rows()).map(|r| m[(r, k)]).collect())).collect()
}

pub(crate) fn check_seen(seen: &[&LabeledInstance], kind: ProblemKind) -> Result<()> {
    if seen.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one seen instance".into()));
    }
    if seen.iter().any(|li| li.instance.kind != kind) {
        return Err(Error::InvalidArgument("seen instances mix problem kinds".into()));
    }
    Ok(())
}

pub(crate) fn finite_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss(loss))
    }
}
