//! Experiment configuration (TOML, `format_version = 1`).

use serde::{Deserialize, Serialize};
use tpinn::network::NetConfig;
use tpinn::pinv::{AdaptConfig, PicardInit};
use tpinn::problems::{GenOptions, ProblemKind};
use tpinn::training::{Method, TrainConfig, DEFAULT_PDE_GRID, DEFAULT_PI_GRID};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub problem: ProblemKind,
    pub seed: u64,
    /// Seen-instance counts, one experiment cell each.
    pub k: Vec<usize>,
    pub methods: Vec<String>,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub trunk: TrunkSection,
    #[serde(default)]
    pub mlp: MlpSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub adapt: AdaptSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Instances to generate; the problem default when absent.
    pub count: Option<usize>,
    pub ic_perturbation: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrunkSection {
    pub hidden_layers: usize,
    pub nodes: usize,
    pub freq_factor: f64,
}

impl Default for TrunkSection {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            nodes: 32,
            freq_factor: 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSection {
    pub hidden_layers: usize,
    pub nodes: usize,
}

impl Default for MlpSection {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            nodes: 64,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mlp: TrainConfig,
    pub hydra: TrainConfig,
    pub pil: TrainConfig,
    pub single_pinn: TrainConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub lambda_pde: f64,
    pub lambda_pi: f64,
    pub lambda_bc: f64,
    pub lambda_ic: f64,
    /// Problem default when absent.
    pub picard_iters: Option<usize>,
    pub picard_init: PicardInit,
    /// Select λ_PDE, λ_PI on the seen instances instead of using the values above.
    pub grid_search: bool,
    /// PiL models adapt with their learned λ instead.
    pub pil_learned: bool,
    pub pde_grid: Vec<f64>,
    pub pi_grid: Vec<f64>,
    /// Collocation stride during the grid search.
    pub search_stride: usize,
    /// Collocation stride during evaluation. When absent each method adapts
    /// at the stride its λ came from: the PiL training stride for learned λ,
    /// `search_stride` for searched λ, the full grid for fixed λ.
    pub eval_stride: Option<usize>,
}

impl Default for AdaptSection {
    fn default() -> Self {
        Self {
            lambda_pde: 1.0,
            lambda_pi: 1e-6,
            lambda_bc: 1.0,
            lambda_ic: 1.0,
            picard_iters: None,
            picard_init: PicardInit::IcExtension,
            grid_search: true,
            pil_learned: true,
            pde_grid: DEFAULT_PDE_GRID.to_vec(),
            pi_grid: DEFAULT_PI_GRID.to_vec(),
            search_stride: 1,
            eval_stride: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Which K cell's models to time; the largest configured when absent.
    pub k: Option<usize>,
    pub repeats: usize,
    /// Single-PINN step budget and evaluation interval.
    pub pinn_max_steps: usize,
    pub pinn_check_every: usize,
    /// Target rel-L2 for the single PINN; the plain MLP's error on the
    /// benchmark instance when absent.
    pub target_rel_l2: Option<f64>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            k: None,
            repeats: 5,
            pinn_max_steps: 20000,
            pinn_check_every: 50,
            target_rel_l2: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn count(&self) -> usize {
        self.data.count.unwrap_or(self.problem.spec().default_count)
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.iter().map(|m| Method::parse(m).expect("validated")).collect()
    }

    /// Every problem listed, with its field path, in one message.
    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if self.format_version != FORMAT_VERSION {
            errs.push(format!("format_version: expected {FORMAT_VERSION}, got {}", self.format_version));
        }
        let count = self.count();
        if count == 0 {
            errs.push("data.count: must be positive".into());
        }
        if self.k.is_empty() {
            errs.push("k: at least one value required".into());
        }
        for (i, &k) in self.k.iter().enumerate() {
            if k == 0 || k >= count {
                errs.push(format!("k[{i}]: {k} must lie in 1..{count} so unseen instances remain"));
            }
        }
        if self.methods.is_empty() {
            errs.push("methods: at least one method required".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if Method::parse(m).is_err() {
                errs.push(format!(
                    "methods[{i}]: unknown method '{m}' (expected one of mlp, mlp_pi2, hydra_pi2, pil, single_pinn)"
                ));
            }
        }
        if let Some(b) = self.bench.k {
            if !self.k.contains(&b) {
                errs.push(format!("bench.k: {b} is not one of k"));
            }
        }
        if self.bench.repeats == 0 || self.bench.pinn_max_steps == 0 {
            errs.push("bench.repeats, bench.pinn_max_steps: must be positive".into());
        }
        if self.trunk.hidden_layers == 0 || self.trunk.nodes == 0 || !(self.trunk.freq_factor > 0.0) {
            errs.push("trunk: hidden_layers, nodes and freq_factor must be positive".into());
        }
        if self.mlp.hidden_layers == 0 || self.mlp.nodes == 0 {
            errs.push("mlp: hidden_layers and nodes must be positive".into());
        }
        for (name, t) in [
            ("mlp", &self.train.mlp),
            ("hydra", &self.train.hydra),
            ("pil", &self.train.pil),
            ("single_pinn", &self.train.single_pinn),
        ] {
            if let Err(e) = t.validate() {
                errs.push(format!("train.{name}: {e}"));
            }
        }
        if let Err(e) = self.base_adapt().validate() {
            errs.push(format!("adapt: {e}"));
        }
        if self.adapt.search_stride == 0 || self.adapt.eval_stride == Some(0) {
            errs.push("adapt.search_stride, adapt.eval_stride: must be positive".into());
        }
        if self.adapt.grid_search && (self.adapt.pde_grid.is_empty() || self.adapt.pi_grid.is_empty()) {
            errs.push("adapt.pde_grid, adapt.pi_grid: must be non-empty for grid search".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("\n"))
        }
    }

    /// Collocation stride `method` adapts at during eval and bench.
    pub fn adapt_stride(&self, method: Method) -> usize {
        let a = &self.adapt;
        match a.eval_stride {
            Some(s) => s,
            None if method == Method::Pil && a.pil_learned => self.train.pil.collocation_stride,
            None if a.grid_search && method.adapts() => a.search_stride,
            None => 1,
        }
    }

    pub fn base_adapt(&self) -> AdaptConfig {
        let spec = self.problem.spec();
        AdaptConfig {
            lambda_pde: self.adapt.lambda_pde,
            lambda_pi: self.adapt.lambda_pi,
            lambda_bc: self.adapt.lambda_bc,
            lambda_ic: self.adapt.lambda_ic,
            picard_iters: self.adapt.picard_iters.unwrap_or(spec.picard_iters),
            picard_init: self.adapt.picard_init,
        }
    }

    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            count: self.count(),
            ic_perturbation: self.data.ic_perturbation,
            ..GenOptions::new(self.problem, self.seed)
        }
    }

    pub fn trunk_net(&self) -> NetConfig {
        let spec = self.problem.spec();
        NetConfig::concat_skip(spec.bounds, self.trunk.hidden_layers, self.trunk.nodes, self.trunk.freq_factor, self.seed)
    }

    pub fn mlp_net(&self) -> NetConfig {
        let spec = self.problem.spec();
        NetConfig::plain_mlp(spec.bounds, spec.task_bounds, self.mlp.hidden_layers, self.mlp.nodes, self.seed)
    }

    /// Training settings for a model kind, seeded from the experiment seed.
    pub fn train_for(&self, t: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..t.clone()
        }
    }
}
