use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use tpinn::pinv::{AdaptConfig, Layout, Trunk};
use tpinn::problems::{generate, io, rel_l2, Dataset, GenOptions, LabeledInstance, ProblemKind};
use tpinn::training::{
    adapt_and_eval, adapt_predict, grid_search, train_hydra, train_mlp, train_pil, train_single_pinn, Method,
    ModelKind, PinnTarget, TrainedModel,
};

use crate::config::ExperimentConfig;
use crate::output::{write_grid_table, write_rows, write_trace, BenchRow, ResultRow};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

impl From<tpinn::Error> for CliError {
    fn from(e: tpinn::Error) -> Self {
        use tpinn::Error as E;
        match e {
            E::InvalidArgument(_) | E::DimensionMismatch(_) | E::UnsupportedOperator(_) => CliError::Config(e.to_string()),
            E::Format(_) | E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn score(pred: &[f64], reference: &[f64]) -> f64 {
    rel_l2(pred, reference).unwrap_or(f64::INFINITY)
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Context {
    /// Reads and validates the config, applies overrides and records the
    /// effective config in the output directory.
    pub fn load(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>, root: &Path) -> Result<Self, CliError> {
        let path = config.ok_or_else(|| CliError::Config("--config is required".into()))?;
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::parse(&text).map_err(|e| CliError::Config(format!("{}:\n{e}", path.display())))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let out = match (out, &cfg.out) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => PathBuf::from(o),
            (None, None) => root.join(path.file_stem().unwrap_or_default()),
        };
        fs::create_dir_all(&out)?;
        fs::write(out.join("config.toml"), cfg.to_toml())?;
        Ok(Self { cfg, out })
    }

    fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    fn model_path(&self, kind: ModelKind, k: usize) -> PathBuf {
        self.out.join("models").join(format!("{}_K{k}.model", kind.name()))
    }

    fn timing_path(&self, kind: ModelKind, k: usize) -> PathBuf {
        self.out.join("models").join(format!("{}_K{k}.timing.toml", kind.name()))
    }

    fn search_path(&self, method: Method, k: usize, ext: &str) -> PathBuf {
        self.out.join("gridsearch").join(format!("{}_K{k}.{ext}", method.name()))
    }

    /// The dataset, split for `k`.
    fn dataset(&self, k: usize) -> Result<Dataset, CliError> {
        let dir = self.data_dir();
        if !dir.join(io::MANIFEST).exists() {
            return Err(CliError::Io(format!("no dataset at {}; run `tpinn gen` with this config first", dir.display())));
        }
        let mut ds = io::load_dataset(&dir)?;
        if ds.kind != self.cfg.problem || ds.instances.len() != self.cfg.count() || ds.options.seed != self.cfg.seed {
            return Err(CliError::Config(format!(
                "dataset at {} ({} x{}, seed {}) does not match the config",
                dir.display(),
                ds.kind,
                ds.instances.len(),
                ds.options.seed
            )));
        }
        ds.split(k, self.cfg.seed)?;
        Ok(ds)
    }

    fn load_model(&self, kind: ModelKind, k: usize) -> Result<(TrainedModel, f64), CliError> {
        let path = self.model_path(kind, k);
        let file = fs::File::open(&path)
            .map_err(|e| CliError::Io(format!("{}: {e}; run `tpinn train` first", path.display())))?;
        let model = TrainedModel::load(std::io::BufReader::new(file))?;
        let secs = fs::read_to_string(self.timing_path(kind, k))
            .ok()
            .and_then(|t| t.parse::<toml::Table>().ok())
            .and_then(|t| t.get("train_seconds").and_then(|v| v.as_float()))
            .unwrap_or(f64::NAN);
        Ok((model, secs))
    }

    fn layout(&self, stride: usize) -> Layout {
        Layout::strided(&self.cfg.problem.spec(), stride)
    }

    /// λ settings a method adapts with in cell `k`.
    fn adapt_config(&self, method: Method, k: usize, model: &TrainedModel, ds: &Dataset) -> Result<AdaptConfig, CliError> {
        let base = self.cfg.base_adapt();
        if method == Method::Pil && self.cfg.adapt.pil_learned {
            if let Some(l) = model.lambdas {
                return Ok(AdaptConfig {
                    lambda_pde: l.lambda_pde(),
                    lambda_pi: l.lambda_pi(),
                    ..base
                });
            }
        }
        if !self.cfg.adapt.grid_search || !method.adapts() {
            return Ok(base);
        }
        let path = self.search_path(method, k, "toml");
        if !path.exists() {
            self.search_cell(method, k, model, ds)?;
        }
        let text = fs::read_to_string(&path)?;
        toml::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    fn search_cell(&self, method: Method, k: usize, model: &TrainedModel, ds: &Dataset) -> Result<AdaptConfig, CliError> {
        let a = &self.cfg.adapt;
        let trunk = Trunk::new(&model.config, &model.params);
        let r = grid_search(
            &trunk,
            &ds.seen_instances(),
            &self.layout(a.search_stride),
            &self.cfg.base_adapt(),
            &a.pde_grid,
            &a.pi_grid,
        )?;
        write_grid_table(&self.search_path(method, k, "csv"), &r.table)?;
        fs::write(self.search_path(method, k, "toml"), toml::to_string(&r.cfg).expect("adapt config serializes"))?;
        let best = r.table.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        println!(
            "gridsearch {} K={k}: lambda_pde={} lambda_pi={} seen rel_l2={best:.4e}",
            method.name(),
            r.cfg.lambda_pde,
            r.cfg.lambda_pi
        );
        Ok(r.cfg)
    }
}

fn save_gen(ds: &Dataset, dir: &Path) -> Result<(), CliError> {
    io::save_dataset(ds, dir)?;
    println!("wrote {} {} instances to {}", ds.instances.len(), ds.kind, dir.display());
    Ok(())
}

pub fn gen(ctx: &Context) -> Result<(), CliError> {
    let mut ds = generate(ctx.cfg.problem, &ctx.cfg.gen_options())?;
    ds.split(ctx.cfg.k[0], ctx.cfg.seed)?;
    save_gen(&ds, &ctx.data_dir())
}

pub fn gen_direct(problem: &str, count: Option<usize>, seed: u64, out: Option<&Path>, root: &Path) -> Result<(), CliError> {
    let kind: ProblemKind = problem.parse().map_err(|e: tpinn::Error| CliError::Config(format!("--problem: {e}")))?;
    let count = match count {
        Some(c) if c > 0 => c,
        _ => return Err(CliError::Config("--count must be a positive integer".into())),
    };
    let opts = GenOptions {
        count,
        ..GenOptions::new(kind, seed)
    };
    let ds = generate(kind, &opts)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| root.join(format!("{kind}-{count}-seed{seed}")));
    save_gen(&ds, &dir)
}

fn needed_models(methods: &[Method]) -> Vec<ModelKind> {
    let mut kinds = Vec::new();
    for m in methods {
        if *m != Method::SinglePinn && !kinds.contains(&m.model_kind()) {
            kinds.push(m.model_kind());
        }
    }
    kinds
}

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    for &k in &cfg.k {
        let ds = ctx.dataset(k)?;
        let seen = ds.seen_instances();
        for kind in needed_models(&cfg.methods()) {
            let model = match kind {
                ModelKind::Mlp => train_mlp(&seen, &cfg.mlp_net(), &cfg.train_for(&cfg.train.mlp))?,
                ModelKind::Hydra => train_hydra(&seen, &cfg.trunk_net(), &cfg.train_for(&cfg.train.hydra))?,
                ModelKind::Pil => train_pil(&seen, &cfg.trunk_net(), &cfg.base_adapt(), &cfg.train_for(&cfg.train.pil))?,
                ModelKind::SinglePinn => unreachable!(),
            };
            let path = ctx.model_path(kind, k);
            fs::create_dir_all(path.parent().unwrap())?;
            model.save(std::io::BufWriter::new(fs::File::create(&path)?))?;
            fs::write(ctx.timing_path(kind, k), format!("train_seconds = {:?}\n", model.train_seconds))?;
            write_trace(&ctx.out.join("traces").join(format!("{}_K{k}.csv", kind.name())), &model.trace)?;
            print!("train {} K={k}: final loss {:.6e}", kind.name(), model.final_loss().unwrap_or(f64::NAN));
            if let Some(l) = model.lambdas {
                print!(" lambda_pde={:.6e} lambda_pi={:.6e}", l.lambda_pde(), l.lambda_pi());
            }
            println!(" ({:.1} s)", model.train_seconds);
        }
    }
    Ok(())
}

pub fn gridsearch(ctx: &Context) -> Result<(), CliError> {
    for &k in &ctx.cfg.k {
        let ds = ctx.dataset(k)?;
        for method in ctx.cfg.methods() {
            if !method.adapts() || (method == Method::Pil && ctx.cfg.adapt.pil_learned) {
                continue;
            }
            let (model, _) = ctx.load_model(method.model_kind(), k)?;
            ctx.search_cell(method, k, &model, &ds)?;
        }
    }
    Ok(())
}

fn split_name(ds: &Dataset, idx: usize) -> &'static str {
    if ds.seen.contains(&idx) {
        "seen"
    } else {
        "unseen"
    }
}

pub fn eval(ctx: &Context, emit_grids: bool) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let mut rows = Vec::new();
    for &k in &cfg.k {
        let ds = ctx.dataset(k)?;
        let all: Vec<&LabeledInstance> = ds.instances.iter().collect();
        for method in cfg.methods() {
            let layout = ctx.layout(cfg.adapt_stride(method));
            let grid_dir = ctx.out.join("predictions").join(format!("{}_K{k}", method.name()));
            if emit_grids {
                fs::create_dir_all(&grid_dir)?;
            }
            let before = rows.len();
            if method == Method::SinglePinn {
                for (idx, li) in all.iter().enumerate() {
                    let (model, _) = train_single_pinn(
                        &li.instance,
                        &cfg.trunk_net(),
                        &cfg.base_adapt(),
                        &cfg.train_for(&cfg.train.single_pinn),
                        None,
                    )?;
                    let (pred, ms) = adapt_predict(&model, &li.instance, &layout, &cfg.base_adapt(), method)?;
                    if emit_grids {
                        io::write_f64s(&grid_dir.join(format!("{:05}.f64", li.instance.id)), &pred)?;
                    }
                    rows.push(ResultRow {
                        problem: cfg.problem.to_string(),
                        method: method.name().into(),
                        k,
                        instance_id: li.instance.id,
                        split: split_name(&ds, idx),
                        rel_l2: score(&pred, &li.reference),
                        adapt_ms: ms,
                        train_s: model.train_seconds,
                    });
                }
            } else {
                let (model, train_s) = ctx.load_model(method.model_kind(), k)?;
                let acfg = ctx.adapt_config(method, k, &model, &ds)?;
                let evals = adapt_and_eval(&model, &all, &layout, &acfg, method)?;
                for (idx, (li, e)) in all.iter().zip(&evals).enumerate() {
                    if emit_grids {
                        let (pred, _) = adapt_predict(&model, &li.instance, &layout, &acfg, method)?;
                        io::write_f64s(&grid_dir.join(format!("{:05}.f64", li.instance.id)), &pred)?;
                    }
                    rows.push(ResultRow {
                        problem: cfg.problem.to_string(),
                        method: method.name().into(),
                        k,
                        instance_id: e.instance_id,
                        split: split_name(&ds, idx),
                        rel_l2: e.rel_l2,
                        adapt_ms: e.adapt_ms,
                        train_s,
                    });
                }
            }
            let unseen: Vec<f64> = rows[before..].iter().filter(|r| r.split == "unseen").map(|r| r.rel_l2).collect();
            println!(
                "eval {} K={k}: mean unseen rel_l2 {:.4e} over {} instances",
                method.name(),
                unseen.iter().sum::<f64>() / unseen.len() as f64,
                unseen.len()
            );
        }
    }
    write_rows(&ctx.out.join("results.csv"), rows)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn bench(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let b = &cfg.bench;
    let k = b.k.unwrap_or_else(|| *cfg.k.iter().max().unwrap());
    let ds = ctx.dataset(k)?;
    let idx = ds.unseen[0];
    let li = &ds.instances[idx];
    let methods = cfg.methods();
    let mut rows = Vec::new();

    let mlp_level = if methods.iter().any(|m| m.model_kind() == ModelKind::Mlp) {
        let (mlp, _) = ctx.load_model(ModelKind::Mlp, k)?;
        let layout = ctx.layout(1);
        let (pred, _) = adapt_predict(&mlp, &li.instance, &layout, &cfg.base_adapt(), Method::Mlp)?;
        Some(score(&pred, &li.reference))
    } else {
        None
    };
    let target = b.target_rel_l2.or(mlp_level).ok_or_else(|| {
        CliError::Config("bench.target_rel_l2: required when no mlp method is configured".into())
    })?;

    for &method in methods.iter().filter(|m| m.adapts()) {
        let (model, _) = ctx.load_model(method.model_kind(), k)?;
        let acfg = ctx.adapt_config(method, k, &model, &ds)?;
        let layout = ctx.layout(cfg.adapt_stride(method));
        let mut times = Vec::with_capacity(b.repeats);
        let mut err = f64::NAN;
        for _ in 0..b.repeats {
            let (pred, ms) = adapt_predict(&model, &li.instance, &layout, &acfg, method)?;
            err = score(&pred, &li.reference);
            times.push(ms);
        }
        rows.push(BenchRow {
            method: method.name().into(),
            k,
            instance_id: li.instance.id,
            wall_ms: median(times),
            rel_l2: err,
            reached_target: Some(err <= target),
            speedup: None,
        });
    }

    let pinn_cfg = tpinn::training::TrainConfig {
        steps: b.pinn_max_steps,
        ..cfg.train_for(&cfg.train.single_pinn)
    };
    let goal = PinnTarget {
        reference: li.reference.clone(),
        rel_l2: target,
        check_every: b.pinn_check_every,
    };
    let (pinn, reached) = train_single_pinn(&li.instance, &cfg.trunk_net(), &cfg.base_adapt(), &pinn_cfg, Some(&goal))?;
    let (pred, _) = adapt_predict(&pinn, &li.instance, &ctx.layout(1), &cfg.base_adapt(), Method::SinglePinn)?;
    let pinn_ms = pinn.train_seconds * 1e3;
    for r in &mut rows {
        r.speedup = Some(pinn_ms / r.wall_ms);
    }
    println!(
        "bench {} K={k} instance {}: target rel_l2 {target:.4e}; single PINN {} after {} steps in {:.1} s (rel_l2 {:.4e})",
        cfg.problem,
        li.instance.id,
        if reached.is_some() { "reached" } else { "did not reach" },
        reached.unwrap_or(pinn.trace.len()),
        pinn.train_seconds,
        score(&pred, &li.reference)
    );
    for r in &rows {
        println!(
            "bench {}: median {:.2} ms over {} runs, rel_l2 {:.4e}, speedup {}{:.0}x",
            r.method,
            r.wall_ms,
            b.repeats,
            r.rel_l2,
            if reached.is_some() { "" } else { ">=" },
            r.speedup.unwrap()
        );
    }
    rows.push(BenchRow {
        method: Method::SinglePinn.name().into(),
        k,
        instance_id: li.instance.id,
        wall_ms: pinn_ms,
        rel_l2: score(&pred, &li.reference),
        reached_target: Some(reached.is_some()),
        speedup: None,
    });
    write_rows(&ctx.out.join("bench.csv"), rows)
}
