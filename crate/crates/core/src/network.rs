//! Trunk networks producing the feature embedding, plus the linear head.
//!
//! Two variants share one parameter layout:
//!
//! * `ConcatSkip`: sine layers whose first pre-activation is multiplied by
//!   `F·π`; the embedding concatenates every hidden layer's output, deepest
//!   first, so `H` layers of `n` nodes give `H·n` features.
//! * `PlainMlp`: the conventional baseline; the embedding is the last hidden
//!   layer only.
//!
//! Coordinates are mapped affinely onto `[-1, 1]` before the first layer.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    propagate_jets_batch, Activation, Architecture, Jet, JetSpec, JetTable, Layer, Tape, Var,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix, DenseVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ConcatSkip,
    PlainMlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub variant: Variant,
    /// Total inputs: coordinates followed by task parameters.
    pub input_dim: usize,
    /// Leading inputs that are space/time coordinates.
    pub coord_dim: usize,
    /// Per-input `(lo, hi)` mapped onto `[-1, 1]`; a degenerate range maps to 0.
    pub input_bounds: Vec<(f64, f64)>,
    pub hidden_layers: usize,
    pub nodes: usize,
    pub freq_factor: f64,
    pub activation: Activation,
    pub init_seed: u64,
}

impl NetConfig {
    /// Sine trunk with concatenated hidden layers over the given coordinate box.
    pub fn concat_skip(coord_bounds: Vec<(f64, f64)>, hidden_layers: usize, nodes: usize, freq_factor: f64, seed: u64) -> Self {
        Self {
            variant: Variant::ConcatSkip,
            input_dim: coord_bounds.len(),
            coord_dim: coord_bounds.len(),
            input_bounds: coord_bounds,
            hidden_layers,
            nodes,
            freq_factor,
            activation: Activation::Sine,
            init_seed: seed,
        }
    }

    /// Tanh MLP taking coordinates followed by task parameters.
    pub fn plain_mlp(
        coord_bounds: Vec<(f64, f64)>,
        task_bounds: Vec<(f64, f64)>,
        hidden_layers: usize,
        nodes: usize,
        seed: u64,
    ) -> Self {
        let coord_dim = coord_bounds.len();
        let mut input_bounds = coord_bounds;
        input_bounds.extend(task_bounds);
        Self {
            variant: Variant::PlainMlp,
            input_dim: input_bounds.len(),
            coord_dim,
            input_bounds,
            hidden_layers,
            nodes,
            freq_factor: 1.0,
            activation: Activation::Tanh,
            init_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden_layers < 2 {
            return bad(format!("hidden_layers must be >= 2, got {}", self.hidden_layers));
        }
        if self.nodes == 0 {
            return bad("nodes must be >= 1".into());
        }
        if !(self.freq_factor > 0.0 && self.freq_factor.is_finite()) {
            return bad(format!("freq_factor must be positive, got {}", self.freq_factor));
        }
        if self.input_bounds.len() != self.input_dim || self.coord_dim > self.input_dim || self.input_dim == 0 {
            return bad(format!(
                "input_dim {} inconsistent with {} bounds and coord_dim {}",
                self.input_dim,
                self.input_bounds.len(),
                self.coord_dim
            ));
        }
        if self.input_bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite()) || hi < lo) {
            return bad("input bounds must be finite with lo <= hi".into());
        }
        Ok(())
    }

    pub fn task_dim(&self) -> usize {
        self.input_dim - self.coord_dim
    }

    pub fn embedding_width(&self) -> usize {
        match self.variant {
            Variant::ConcatSkip => self.hidden_layers * self.nodes,
            Variant::PlainMlp => self.nodes,
        }
    }

    /// Multiplier applied to the first pre-activation.
    pub fn first_layer_scale(&self) -> f64 {
        match self.variant {
            Variant::ConcatSkip => self.freq_factor * PI,
            Variant::PlainMlp => 1.0,
        }
    }

    /// Layer indices concatenated into the embedding, deepest first.
    pub fn output_layers(&self) -> Vec<usize> {
        match self.variant {
            Variant::ConcatSkip => (0..self.hidden_layers).rev().collect(),
            Variant::PlainMlp => vec![self.hidden_layers - 1],
        }
    }

    pub fn input_map(&self) -> (Vec<f64>, Vec<f64>) {
        self.input_bounds
            .iter()
            .map(|&(lo, hi)| {
                if hi > lo {
                    (2.0 / (hi - lo), -(hi + lo) / (hi - lo))
                } else {
                    (0.0, 0.0)
                }
            })
            .unzip()
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.hidden_layers)
            .map(|l| (self.nodes, if l == 0 { self.input_dim } else { self.nodes }))
            .collect()
    }
}

/// Trunk weights `W_l` (`out × in`), biases `b_l`, and any number of heads.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<DenseVector>,
    pub heads: Vec<DenseVector>,
}

impl NetParams {
    /// Fan-in uniform weights, zero biases, no heads; seeded from `config.init_seed`.
    pub fn init(config: &NetConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        Self::init_with(config, &mut rng)
    }

    pub fn init_with<R: Rng>(config: &NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut weights = Vec::with_capacity(config.hidden_layers);
        let mut biases = Vec::with_capacity(config.hidden_layers);
        for (out, inp) in config.layer_shapes() {
            let limit = (6.0 / inp as f64).sqrt();
            weights.push(DenseMatrix::from_fn(out, inp, |_, _| rng.gen_range(-limit..limit)));
            biases.push(DenseVector::zeros(out));
        }
        Ok(Self {
            weights,
            biases,
            heads: Vec::new(),
        })
    }

    pub fn check(&self, config: &NetConfig) -> Result<()> {
        let shapes = config.layer_shapes();
        if self.weights.len() != shapes.len() || self.biases.len() != shapes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight blocks for {} layers",
                self.weights.len(),
                shapes.len()
            )));
        }
        for (l, &(out, inp)) in shapes.iter().enumerate() {
            if self.weights[l].shape() != (out, inp) || self.biases[l].len() != out {
                return Err(Error::DimensionMismatch(format!("layer {l} shape")));
            }
        }
        let width = config.embedding_width();
        if let Some(h) = self.heads.iter().find(|h| h.len() != width) {
            return Err(Error::DimensionMismatch(format!(
                "head of length {} for embedding width {width}",
                h.len()
            )));
        }
        Ok(())
    }

    /// Trunk parameters as matrices in canonical order `W₁, b₁, …, W_H, b_H`
    /// (biases as `1 × n` rows).
    pub fn trunk_blocks(&self) -> Vec<DenseMatrix> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.clone());
            out.push(DenseMatrix::from_vec(1, b.len(), b.0.clone()).unwrap());
        }
        out
    }

    pub fn set_trunk_blocks(&mut self, blocks: &[DenseMatrix]) -> Result<()> {
        if blocks.len() != 2 * self.weights.len() {
            return Err(Error::DimensionMismatch("trunk block count".into()));
        }
        for (l, pair) in blocks.chunks(2).enumerate() {
            if pair[0].shape() != self.weights[l].shape() || pair[1].cols() != self.biases[l].len() {
                return Err(Error::DimensionMismatch(format!("trunk block {l}")));
            }
            self.weights[l] = pair[0].clone();
            self.biases[l] = DenseVector(pair[1].as_slice().to_vec());
        }
        Ok(())
    }

    /// Every parameter in canonical order: trunk blocks, then heads.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        for h in &self.heads {
            out.extend_from_slice(h);
        }
        out
    }

    pub fn architecture<'a>(&'a self, config: &NetConfig) -> Architecture<'a> {
        let (input_scale, input_shift) = config.input_map();
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .enumerate()
            .map(|(l, (w, b))| Layer {
                weight: w,
                bias: b,
                pre_scale: if l == 0 { config.first_layer_scale() } else { 1.0 },
                activation: config.activation,
            })
            .collect();
        Architecture {
            input_scale,
            input_shift,
            layers,
            outputs: config.output_layers(),
        }
    }
}

/// Embedding at one point.
pub fn embed(params: &NetParams, config: &NetConfig, point: &[f64]) -> Result<DenseVector> {
    let points = DenseMatrix::from_vec(1, point.len(), point.to_vec())?;
    Ok(DenseVector(embed_batch(params, config, &points)?.into_vec()))
}

/// Embeddings of every row of `points` (`points × width`).
pub fn embed_batch(params: &NetParams, config: &NetConfig, points: &DenseMatrix) -> Result<DenseMatrix> {
    let spec = JetSpec::value_only(config.input_dim);
    let table = embed_jet_batch(params, config, points, &spec)?;
    Ok(table.into_components().swap_remove(0))
}

pub fn embed_jet(params: &NetParams, config: &NetConfig, point: &[f64], spec: &JetSpec) -> Result<Vec<Jet>> {
    let points = DenseMatrix::from_vec(1, point.len(), point.to_vec())?;
    Ok(embed_jet_batch(params, config, &points, spec)?.jets_at(0))
}

pub fn embed_jet_batch(
    params: &NetParams,
    config: &NetConfig,
    points: &DenseMatrix,
    spec: &JetSpec,
) -> Result<JetTable> {
    params.check(config)?;
    propagate_jets_batch(&params.architecture(config), points, spec)
}

/// Selects the head used by [`predict`].
#[derive(Clone, Copy, Debug)]
pub enum Head<'a> {
    Index(usize),
    Vector(&'a [f64]),
}

/// `headᵀ · embed(point)`
pub fn predict(params: &NetParams, head: Head<'_>, config: &NetConfig, point: &[f64]) -> Result<f64> {
    let h: &[f64] = match head {
        Head::Index(k) => params
            .heads
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("no head {k}")))?,
        Head::Vector(v) => v,
    };
    let e = embed(params, config, point)?;
    if h.len() != e.len() {
        return Err(Error::DimensionMismatch(format!(
            "head of length {} for embedding width {}",
            h.len(),
            e.len()
        )));
    }
    Ok(dot(h, &e))
}

/// Differentiable counterpart of [`embed_jet_batch`].
///
/// `trunk` holds tape variables for the canonical blocks `W₁, b₁, …`; the
/// returned variables are the jet components (`points × width` each) in
/// [`JetSpec::components`] order.
pub fn tape_jets(
    tape: &mut Tape,
    config: &NetConfig,
    trunk: &[Var],
    points: &DenseMatrix,
    spec: &JetSpec,
) -> Result<Vec<Var>> {
    if trunk.len() != 2 * config.hidden_layers {
        return Err(Error::DimensionMismatch("trunk variable count".into()));
    }
    if points.cols() != config.input_dim || spec.input_dim() != config.input_dim {
        return Err(Error::DimensionMismatch("points or jet spec width".into()));
    }
    if spec.has_second() && config.activation.max_order() < 2 {
        return Err(Error::UnsupportedOperator(config.activation.name().into()));
    }
    let n = points.rows();
    let d = config.input_dim;
    let (scale, shift) = config.input_map();
    let nf = spec.first_dirs().len();
    let second_src: Vec<usize> = spec
        .second_dirs()
        .iter()
        .map(|&(dir, _)| 1 + spec.first_dirs().iter().position(|&x| x == dir).unwrap())
        .collect();

    let mut comps = Vec::with_capacity(spec.n_components());
    comps.push(tape.constant(DenseMatrix::from_fn(n, d, |r, c| scale[c] * points[(r, c)] + shift[c])));
    for &dir in spec.first_dirs() {
        comps.push(tape.constant(DenseMatrix::from_fn(n, d, |_, c| if c == dir { scale[dir] } else { 0.0 })));
    }
    // Second-derivative seeds are zero; layer 0 is handled below without them.
    let mut have_second = false;

    let outputs = config.output_layers();
    let mut emitted: BTreeMap<usize, Vec<Var>> = BTreeMap::new();
    for l in 0..config.hidden_layers {
        let (w, b) = (trunk[2 * l], trunk[2 * l + 1]);
        let pre = if l == 0 { config.first_layer_scale() } else { 1.0 };
        let mut z = Vec::with_capacity(spec.n_components());
        for (k, &a) in comps.iter().enumerate() {
            let mut zk = tape.matmul_tr(a, w);
            if k == 0 {
                zk = tape.add_row(zk, b);
            }
            if pre != 1.0 {
                zk = tape.scale(zk, pre);
            }
            z.push(zk);
        }
        let mut next = Vec::with_capacity(spec.n_components());
        match config.activation {
            Activation::Sine => {
                let s = tape.sin(z[0]);
                let c = tape.cos(z[0]);
                next.push(s);
                for k in 0..nf {
                    next.push(tape.mul(c, z[1 + k]));
                }
                for (si, &src) in second_src.iter().enumerate() {
                    let sq = tape.square(z[src]);
                    let curv = tape.mul(s, sq);
                    let v = if have_second {
                        let lin = tape.mul(c, z[1 + nf + si]);
                        tape.sub(lin, curv)
                    } else {
                        tape.scale(curv, -1.0)
                    };
                    next.push(v);
                }
            }
            Activation::Tanh => {
                let t = tape.tanh(z[0]);
                let t2 = tape.square(t);
                let neg = tape.scale(t2, -1.0);
                let d1 = tape.add_const(neg, 1.0);
                next.push(t);
                for k in 0..nf {
                    next.push(tape.mul(d1, z[1 + k]));
                }
                if !second_src.is_empty() {
                    let td = tape.mul(t, d1);
                    let d2 = tape.scale(td, -2.0);
                    for (si, &src) in second_src.iter().enumerate() {
                        let sq = tape.square(z[src]);
                        let curv = tape.mul(d2, sq);
                        let v = if have_second {
                            let lin = tape.mul(d1, z[1 + nf + si]);
                            tape.add(lin, curv)
                        } else {
                            curv
                        };
                        next.push(v);
                    }
                }
            }
            Activation::Identity => {
                next.extend(z.iter().copied());
                if !have_second {
                    for _ in 0..second_src.len() {
                        let zero = tape.constant(DenseMatrix::zeros(n, config.nodes));
                        next.push(zero);
                    }
                }
            }
            Activation::Relu => {
                return Err(Error::UnsupportedOperator(Activation::Relu.name().into()));
            }
        }
        have_second = true;
        if outputs.contains(&l) {
            emitted.insert(l, next.clone());
        }
        comps = next;
    }

    let mut out = Vec::with_capacity(spec.n_components());
    for k in 0..spec.n_components() {
        let parts: Vec<Var> = outputs.iter().map(|l| emitted[l][k]).collect();
        out.push(if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts) });
    }
    Ok(out)
}

const MODEL_MAGIC: &[u8; 8] = b"TPNNMODL";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: NetConfig,
    heads: usize,
    param_count: usize,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Writes a model file: magic `TPNNMODL`, `u32` version, `u64` header length,
/// a TOML header with the configuration, then every parameter as a
/// little-endian `f64` in [`NetParams::flatten`] order.
pub fn write_model<W: Write>(
    mut w: W,
    config: &NetConfig,
    params: &NetParams,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    params.check(config)?;
    let flat = params.flatten();
    let header = ModelHeader {
        config: config.clone(),
        heads: params.heads.len(),
        param_count: flat.len(),
        meta: meta.clone(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    let mut buf = Vec::with_capacity(8 * flat.len());
    for v in flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<(NetConfig, NetParams, BTreeMap<String, String>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|e| Error::Format(e.to_string()))?;
    let header: ModelHeader = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let config = header.config;
    config.validate()?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != 8 * header.param_count {
        return Err(Error::Format(format!(
            "expected {} parameters, found {} bytes",
            header.param_count,
            raw.len()
        )));
    }
    let mut vals = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (out, inp) in config.layer_shapes() {
        weights.push(DenseMatrix::from_vec(out, inp, take(out * inp))?);
        biases.push(DenseVector(take(out)));
    }
    let width = config.embedding_width();
    let heads = (0..header.heads).map(|_| DenseVector(take(width))).collect();
    let params = NetParams {
        weights,
        biases,
        heads,
    };
    params.check(&config)?;
    if params.flatten().len() != header.param_count {
        return Err(Error::Format("parameter count mismatch".into()));
    }
    Ok((config, params, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::JetComp;

    fn small_concat(f: f64) -> NetConfig {
        NetConfig::concat_skip(vec![(-1.0, 1.0), (0.0, 1.0)], 3, 5, f, 42)
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = small_concat(2.0);
        assert_eq!(NetParams::init(&cfg).unwrap(), NetParams::init(&cfg).unwrap());
        let p = NetParams::init(&cfg).unwrap();
        let limit = (6.0f64 / 2.0).sqrt();
        assert!(p.weights[0].as_slice().iter().all(|w| w.abs() <= limit));
        assert!(p.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn embedding_widths() {
        let c = NetConfig::concat_skip(vec![(0.0, 1.0), (0.0, 1.0)], 4, 50, 1.0, 0);
        assert_eq!(c.embedding_width(), 200);
        let p = NetParams::init(&c).unwrap();
        assert_eq!(embed(&p, &c, &[0.3, 0.2]).unwrap().len(), 200);
        let m = NetConfig::plain_mlp(vec![(0.0, 1.0), (0.0, 1.0)], vec![(0.0, 1.0)], 4, 50, 0);
        assert_eq!(m.embedding_width(), 50);
        let p = NetParams::init(&m).unwrap();
        assert_eq!(embed(&p, &m, &[0.3, 0.2, 0.5]).unwrap().len(), 50);
    }

    #[test]
    fn config_validation() {
        let mut c = small_concat(1.0);
        c.hidden_layers = 1;
        assert!(c.validate().is_err());
        let mut c = small_concat(1.0);
        c.freq_factor = 0.0;
        assert!(c.validate().is_err());
        let mut c = small_concat(1.0);
        c.nodes = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_network_embeds_to_zero() {
        let cfg = small_concat(2.0);
        let mut p = NetParams::init(&cfg).unwrap();
        p.weights.iter_mut().for_each(|w| w.scale_in_place(0.0));
        let e = embed(&p, &cfg, &[0.4, 0.9]).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
        let spec = JetSpec::new(2, vec![0, 1], vec![(0, 0)]).unwrap();
        for jet in embed_jet(&p, &cfg, &[0.4, 0.9], &spec).unwrap() {
            assert_eq!(jet.value, 0.0);
            assert!(jet.first.iter().chain(&jet.second).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn freq_factor_scales_first_preactivation() {
        // With one identity-activated first layer, the first-layer outputs
        // are the pre-activations themselves.
        let mut c1 = small_concat(1.0);
        c1.activation = Activation::Identity;
        let mut c2 = c1.clone();
        c2.freq_factor = 2.0;
        let p = NetParams::init(&c1).unwrap();
        let e1 = embed(&p, &c1, &[0.3, 0.7]).unwrap();
        let e2 = embed(&p, &c2, &[0.3, 0.7]).unwrap();
        // First layer block is last in the concatenation.
        let n = c1.nodes;
        let w = c1.embedding_width();
        for j in (w - n)..w {
            assert_eq!(e2[j], 2.0 * e1[j]);
        }
    }

    #[test]
    fn concat_order_deepest_first() {
        let cfg = small_concat(1.5);
        let p = NetParams::init(&cfg).unwrap();
        let point = [0.2, 0.6];
        let e = embed(&p, &cfg, &point).unwrap();
        // Plain forward pass by hand.
        let (scale, shift) = cfg.input_map();
        let mut a: Vec<f64> = point.iter().zip(&scale).zip(&shift).map(|((x, s), c)| s * x + c).collect();
        let mut layers = Vec::new();
        for l in 0..cfg.hidden_layers {
            let pre = if l == 0 { cfg.freq_factor * PI } else { 1.0 };
            a = (0..cfg.nodes)
                .map(|i| (pre * (dot(p.weights[l].row(i), &a) + p.biases[l][i])).sin())
                .collect();
            layers.push(a.clone());
        }
        let n = cfg.nodes;
        for (block, layer) in layers.iter().rev().enumerate() {
            for i in 0..n {
                assert!((e[block * n + i] - layer[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn frequency_factor_folds_into_first_layer() {
        let cfg = small_concat(3.0);
        let mut p = NetParams::init(&cfg).unwrap();
        p.biases[0] = DenseVector((0..cfg.nodes).map(|i| 0.1 * i as f64).collect());
        let mut folded_cfg = cfg.clone();
        folded_cfg.freq_factor = 1.0;
        let mut folded = p.clone();
        folded.weights[0].scale_in_place(3.0);
        folded.biases[0].iter_mut().for_each(|b| *b *= 3.0);
        for point in [[0.1, 0.2], [-0.7, 0.9]] {
            let a = embed(&p, &cfg, &point).unwrap();
            let b = embed(&folded, &folded_cfg, &point).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn predict_head_properties() {
        let cfg = small_concat(1.0);
        let mut p = NetParams::init(&cfg).unwrap();
        let w = cfg.embedding_width();
        let point = [0.3, 0.4];
        assert_eq!(predict(&p, Head::Vector(&vec![0.0; w]), &cfg, &point).unwrap(), 0.0);
        let e = embed(&p, &cfg, &point).unwrap();
        let mut unit = vec![0.0; w];
        unit[3] = 1.0;
        assert_eq!(predict(&p, Head::Vector(&unit), &cfg, &point).unwrap(), e[3]);
        let h1: Vec<f64> = (0..w).map(|i| (i as f64).sin()).collect();
        let h2: Vec<f64> = (0..w).map(|i| (i as f64 * 0.3).cos()).collect();
        let mix: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let lhs = predict(&p, Head::Vector(&mix), &cfg, &point).unwrap();
        let rhs = 2.0 * predict(&p, Head::Vector(&h1), &cfg, &point).unwrap()
            - 0.5 * predict(&p, Head::Vector(&h2), &cfg, &point).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12);
        assert!(predict(&p, Head::Vector(&[1.0]), &cfg, &point).is_err());
        p.heads.push(DenseVector(unit));
        assert_eq!(predict(&p, Head::Index(0), &cfg, &point).unwrap(), e[3]);
    }

    #[test]
    fn tape_jets_match_forward_mode() {
        for cfg in [
            small_concat(2.0),
            NetConfig::plain_mlp(vec![(-1.0, 1.0), (0.0, 1.0)], vec![(0.0, 2.0)], 3, 4, 9),
        ] {
            let p = NetParams::init(&cfg).unwrap();
            let points = DenseMatrix::from_fn(6, cfg.input_dim, |r, c| 0.1 * r as f64 - 0.05 * c as f64);
            let spec = JetSpec::new(cfg.input_dim, vec![0, 1], vec![(0, 0), (1, 1)]).unwrap();
            let table = embed_jet_batch(&p, &cfg, &points, &spec).unwrap();
            let mut tape = Tape::new();
            let vars: Vec<Var> = p.trunk_blocks().into_iter().map(|b| tape.param(b)).collect();
            let comps = tape_jets(&mut tape, &cfg, &vars, &points, &spec).unwrap();
            for (k, comp) in spec.components().into_iter().enumerate() {
                let a = table.get(comp).unwrap();
                let b = tape.value(comps[k]);
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    assert!((x - y).abs() <= 1e-12, "{comp:?}: {x} vs {y}");
                }
            }
            assert_eq!(spec.index_of(JetComp::DD(1)), Some(4));
        }
    }

    #[test]
    fn model_file_roundtrip_is_bit_exact() {
        let cfg = small_concat(2.0);
        let mut p = NetParams::init(&cfg).unwrap();
        p.heads.push(DenseVector((0..cfg.embedding_width()).map(|i| 1.0 / (i as f64 + 3.0)).collect()));
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), "hydra".to_string());
        let mut buf = Vec::new();
        write_model(&mut buf, &cfg, &p, &meta).unwrap();
        let (c2, p2, m2) = read_model(&buf[..]).unwrap();
        assert_eq!(c2, cfg);
        assert_eq!(m2, meta);
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(p2.flatten()), bits(p.flatten()));
        let mut again = Vec::new();
        write_model(&mut again, &c2, &p2, &m2).unwrap();
        assert_eq!(again, buf);
        assert!(read_model(&buf[..20]).is_err());
    }
}
