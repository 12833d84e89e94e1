//! Forward-mode propagation of input derivatives through a feed-forward trunk.
//!
//! Each feature is carried together with first derivatives along the
//! requested input directions and diagonal second derivatives along a subset
//! of them. Linear layers act on every component alike; activations apply the
//! chain rule
//!
//! ```text
//! a    = f(z)
//! a_i  = f'(z) z_i
//! a_ii = f'(z) z_ii + f''(z) z_i²
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, DenseMatrix, Trans};

/// One slot of a jet: the value, a first derivative or a diagonal second derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JetComp {
    Value,
    D(usize),
    DD(usize),
}

/// Which input derivatives a jet carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JetSpec {
    input_dim: usize,
    first_dirs: Vec<usize>,
    second_dirs: Vec<(usize, usize)>,
}

impl JetSpec {
    /// Only diagonal second directions are supported, and each needs the
    /// matching first direction.
    pub fn new(
        input_dim: usize,
        first_dirs: Vec<usize>,
        second_dirs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        for (k, &d) in first_dirs.iter().enumerate() {
            if d >= input_dim {
                return Err(Error::InvalidArgument(format!(
                    "direction {d} out of range for input dimension {input_dim}"
                )));
            }
            if first_dirs[..k].contains(&d) {
                return Err(Error::InvalidArgument(format!("duplicate direction {d}")));
            }
        }
        for (k, &(i, j)) in second_dirs.iter().enumerate() {
            if i != j {
                return Err(Error::InvalidArgument(format!(
                    "mixed second derivative ({i},{j}) is not supported"
                )));
            }
            if !first_dirs.contains(&i) {
                return Err(Error::InvalidArgument(format!(
                    "second direction ({i},{i}) requires first direction {i}"
                )));
            }
            if second_dirs[..k].contains(&(i, j)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate second direction ({i},{j})"
                )));
            }
        }
        Ok(Self {
            input_dim,
            first_dirs,
            second_dirs,
        })
    }

    pub fn value_only(input_dim: usize) -> Self {
        Self {
            input_dim,
            first_dirs: Vec::new(),
            second_dirs: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn first_dirs(&self) -> &[usize] {
        &self.first_dirs
    }

    pub fn second_dirs(&self) -> &[(usize, usize)] {
        &self.second_dirs
    }

    pub fn has_second(&self) -> bool {
        !self.second_dirs.is_empty()
    }

    pub fn n_components(&self) -> usize {
        1 + self.first_dirs.len() + self.second_dirs.len()
    }

    /// Components in storage order: value, first derivatives, second derivatives.
    pub fn components(&self) -> Vec<JetComp> {
        let mut out = vec![JetComp::Value];
        out.extend(self.first_dirs.iter().map(|&d| JetComp::D(d)));
        out.extend(self.second_dirs.iter().map(|&(d, _)| JetComp::DD(d)));
        out
    }

    pub fn index_of(&self, comp: JetComp) -> Option<usize> {
        match comp {
            JetComp::Value => Some(0),
            JetComp::D(d) => self.first_dirs.iter().position(|&x| x == d).map(|k| 1 + k),
            JetComp::DD(d) => self
                .second_dirs
                .iter()
                .position(|&(x, _)| x == d)
                .map(|k| 1 + self.first_dirs.len() + k),
        }
    }

    /// Same spec restricted to a different input width, keeping the directions.
    pub fn with_input_dim(&self, input_dim: usize) -> Result<Self> {
        Self::new(input_dim, self.first_dirs.clone(), self.second_dirs.clone())
    }
}

/// A feature value bundled with its requested input derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    /// Aligned with [`JetSpec::first_dirs`].
    pub first: Vec<f64>,
    /// Aligned with [`JetSpec::second_dirs`].
    pub second: Vec<f64>,
}

impl Jet {
    pub fn get(&self, spec: &JetSpec, comp: JetComp) -> Option<f64> {
        let k = spec.index_of(comp)?;
        let nf = spec.first_dirs.len();
        Some(match k {
            0 => self.value,
            k if k <= nf => self.first[k - 1],
            k => self.second[k - 1 - nf],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sine,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Sine => "sine",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sine => z.sin(),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Highest derivative order with a registered rule.
    pub fn max_order(self) -> usize {
        match self {
            Activation::Relu => 1,
            _ => 2,
        }
    }

    /// `(f(z), f'(z), f''(z))`; the second derivative is only meaningful when
    /// `max_order() >= 2`.
    #[inline]
    fn derivatives(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Sine => {
                let (s, c) = z.sin_cos();
                (s, c, -s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            Activation::Identity => (z, 1.0, 0.0),
        }
    }
}

/// One dense layer `a = f(s·(W x + b))`, with `W` stored as `out × in`.
#[derive(Clone, Copy, Debug)]
pub struct Layer<'a> {
    pub weight: &'a DenseMatrix,
    pub bias: &'a [f64],
    pub pre_scale: f64,
    pub activation: Activation,
}

/// A feed-forward computation: an affine input map, a stack of layers, and
/// the list of layer outputs (by layer index) concatenated into the features.
#[derive(Clone, Debug)]
pub struct Architecture<'a> {
    pub input_scale: Vec<f64>,
    pub input_shift: Vec<f64>,
    pub layers: Vec<Layer<'a>>,
    pub outputs: Vec<usize>,
}

impl Architecture<'_> {
    pub fn input_dim(&self) -> usize {
        self.input_scale.len()
    }

    pub fn width(&self) -> usize {
        self.outputs
            .iter()
            .map(|&l| self.layers[l].weight.rows())
            .sum()
    }

    fn check(&self, spec: &JetSpec) -> Result<()> {
        if spec.input_dim != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "jet spec for {} inputs applied to a {}-input network",
                spec.input_dim,
                self.input_dim()
            )));
        }
        let order = if spec.has_second() {
            2
        } else if spec.first_dirs.is_empty() {
            0
        } else {
            1
        };
        for layer in &self.layers {
            if layer.activation.max_order() < order {
                return Err(Error::UnsupportedOperator(layer.activation.name().into()));
            }
        }
        Ok(())
    }
}

/// Jets for a batch of points, one `points × features` matrix per component.
#[derive(Clone, Debug)]
pub struct JetTable {
    spec: JetSpec,
    comps: Vec<DenseMatrix>,
}

impl JetTable {
    pub fn new(spec: JetSpec, comps: Vec<DenseMatrix>) -> Result<Self> {
        if comps.len() != spec.n_components() {
            return Err(Error::DimensionMismatch(format!(
                "{} component matrices for a spec with {}",
                comps.len(),
                spec.n_components()
            )));
        }
        let shape = comps[0].shape();
        if comps.iter().any(|c| c.shape() != shape) {
            return Err(Error::DimensionMismatch("jet component shapes differ".into()));
        }
        Ok(Self { spec, comps })
    }

    pub fn spec(&self) -> &JetSpec {
        &self.spec
    }

    pub fn n_points(&self) -> usize {
        self.comps[0].rows()
    }

    pub fn width(&self) -> usize {
        self.comps[0].cols()
    }

    pub fn value(&self) -> &DenseMatrix {
        &self.comps[0]
    }

    pub fn get(&self, comp: JetComp) -> Option<&DenseMatrix> {
        self.spec.index_of(comp).map(|k| &self.comps[k])
    }

    pub fn component(&self, k: usize) -> &DenseMatrix {
        &self.comps[k]
    }

    pub fn components(&self) -> &[DenseMatrix] {
        &self.comps
    }

    pub fn into_components(self) -> Vec<DenseMatrix> {
        self.comps
    }

    /// Jets of one point.
    pub fn jets_at(&self, point: usize) -> Vec<Jet> {
        let nf = self.spec.first_dirs.len();
        (0..self.width())
            .map(|j| Jet {
                value: self.comps[0][(point, j)],
                first: (0..nf).map(|k| self.comps[1 + k][(point, j)]).collect(),
                second: (0..self.spec.second_dirs.len())
                    .map(|k| self.comps[1 + nf + k][(point, j)])
                    .collect(),
            })
            .collect()
    }
}

/// Jets of every feature at a single point.
pub fn propagate_jets(arch: &Architecture<'_>, point: &[f64], spec: &JetSpec) -> Result<Vec<Jet>> {
    if point.len() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "point of length {} for a {}-input jet spec",
            point.len(),
            spec.input_dim
        )));
    }
    let points = DenseMatrix::from_vec(1, point.len(), point.to_vec())?;
    Ok(propagate_jets_batch(arch, &points, spec)?.jets_at(0))
}

/// Jets of every feature at each row of `points`.
pub fn propagate_jets_batch(
    arch: &Architecture<'_>,
    points: &DenseMatrix,
    spec: &JetSpec,
) -> Result<JetTable> {
    arch.check(spec)?;
    if points.cols() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "points with {} columns for a {}-input network",
            points.cols(),
            spec.input_dim
        )));
    }
    let n = points.rows();
    let nf = spec.first_dirs.len();
    let ns = spec.second_dirs.len();

    // Normalized inputs and their seeds.
    let mut comps: Vec<DenseMatrix> = Vec::with_capacity(spec.n_components());
    comps.push(DenseMatrix::from_fn(n, spec.input_dim, |r, c| {
        arch.input_scale[c] * points[(r, c)] + arch.input_shift[c]
    }));
    for &d in &spec.first_dirs {
        let mut seed = DenseMatrix::zeros(n, spec.input_dim);
        for r in 0..n {
            seed[(r, d)] = arch.input_scale[d];
        }
        comps.push(seed);
    }
    for _ in 0..ns {
        comps.push(DenseMatrix::zeros(n, spec.input_dim));
    }
    let second_src: Vec<usize> = spec
        .second_dirs
        .iter()
        .map(|&(d, _)| 1 + spec.first_dirs.iter().position(|&x| x == d).unwrap())
        .collect();

    let mut emitted: Vec<Option<Vec<DenseMatrix>>> = vec![None; arch.layers.len()];
    for (li, layer) in arch.layers.iter().enumerate() {
        let out = layer.weight.rows();
        if layer.weight.cols() != comps[0].cols() || layer.bias.len() != out {
            return Err(Error::DimensionMismatch(format!("layer {li} shape")));
        }
        let mut z: Vec<DenseMatrix> = Vec::with_capacity(comps.len());
        for (k, a) in comps.iter().enumerate() {
            let mut zk = if k == 0 {
                let mut m = DenseMatrix::zeros(n, out);
                for r in 0..n {
                    m.row_mut(r).copy_from_slice(layer.bias);
                }
                m
            } else {
                DenseMatrix::zeros(n, out)
            };
            gemm(
                1.0,
                a,
                Trans::No,
                layer.weight,
                Trans::Yes,
                if k == 0 { 1.0 } else { 0.0 },
                &mut zk,
            );
            if layer.pre_scale != 1.0 {
                zk.scale_in_place(layer.pre_scale);
            }
            z.push(zk);
        }
        let mut next: Vec<DenseMatrix> = (0..z.len()).map(|_| DenseMatrix::zeros(n, out)).collect();
        let len = n * out;
        for e in 0..len {
            let (f0, f1, f2) = layer.activation.derivatives(z[0].as_slice()[e]);
            next[0].as_mut_slice()[e] = f0;
            for k in 0..nf {
                next[1 + k].as_mut_slice()[e] = f1 * z[1 + k].as_slice()[e];
            }
            for (s, &src) in second_src.iter().enumerate() {
                let k = 1 + nf + s;
                let zi = z[src].as_slice()[e];
                next[k].as_mut_slice()[e] = f1 * z[k].as_slice()[e] + f2 * zi * zi;
            }
        }
        if arch.outputs.contains(&li) {
            emitted[li] = Some(next.clone());
        }
        comps = next;
    }

    let width = arch.width();
    let mut table: Vec<DenseMatrix> = (0..spec.n_components())
        .map(|_| DenseMatrix::zeros(n, width))
        .collect();
    let mut offset = 0;
    for &li in &arch.outputs {
        let block = emitted[li]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("output layer {li} out of range")))?;
        let w = block[0].cols();
        for (dst, src) in table.iter_mut().zip(block) {
            for r in 0..n {
                dst.row_mut(r)[offset..offset + w].copy_from_slice(src.row(r));
            }
        }
        offset += w;
    }
    JetTable::new(spec.clone(), table)
}
