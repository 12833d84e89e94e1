//! Derivative services: forward-mode input jets for assembling constraint
//! rows, and a reverse-mode tape for parameter gradients of losses that
//! include those jets, the ridge solve and unrolled Picard iterations.

pub mod jet;
pub mod ridge;
pub mod tape;

pub use jet::{
    propagate_jets, propagate_jets_batch, Activation, Architecture, Jet, JetComp, JetSpec,
    JetTable, Layer,
};
pub use ridge::{adjoint_ridge_solve, RidgeCotangents};
pub use tape::{Gradients, RowEntry, Tape, Var};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Loss value and its gradient, flattened in the order the parameters were given.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

impl GradReport {
    pub fn norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Splits the flat gradient back into blocks shaped like `params`.
    pub fn unflatten(&self, params: &[DenseMatrix]) -> Vec<DenseMatrix> {
        let mut off = 0;
        params
            .iter()
            .map(|p| {
                let len = p.rows() * p.cols();
                let m = DenseMatrix::from_vec(p.rows(), p.cols(), self.gradient[off..off + len].to_vec())
                    .expect("gradient block");
                off += len;
                m
            })
            .collect()
    }

    /// Adds another report, in place.
    pub fn accumulate(&mut self, other: &GradReport) {
        self.loss += other.loss;
        for (a, b) in self.gradient.iter_mut().zip(&other.gradient) {
            *a += b;
        }
    }
}

/// Evaluates `program` on a fresh tape with `params` as differentiable leaves
/// and returns the gradient of its scalar output.
pub fn grad_params<F>(params: &[DenseMatrix], program: F) -> Result<GradReport>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = program(&mut tape, &vars)?;
    let loss = tape.scalar(out);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(loss));
    }
    let mut grads = tape.backward(out)?;
    let mut gradient = Vec::with_capacity(params.iter().map(|p| p.rows() * p.cols()).sum());
    for (p, v) in params.iter().zip(&vars) {
        match grads.take(*v) {
            Some(g) => gradient.extend_from_slice(g.as_slice()),
            None => gradient.extend(std::iter::repeat(0.0).take(p.rows() * p.cols())),
        }
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    Ok(GradReport { loss, gradient })
}
