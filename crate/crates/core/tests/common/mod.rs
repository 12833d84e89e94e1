#![allow(dead_code)]

use tpinn::autodiff::{JetComp, JetSpec, JetTable};
use tpinn::linalg::DenseMatrix;
use tpinn::pinv::FeatureMap;
use tpinn::Result;

/// `{sin(ω₁x), sin(ω₂x), x, 1}` with exact derivatives: spans the Poisson
/// solution for one `(ω₁, ω₂)`.
pub struct PoissonBasis {
    pub w1: f64,
    pub w2: f64,
}

impl FeatureMap for PoissonBasis {
    fn width(&self) -> usize {
        4
    }

    fn jets(&self, points: &DenseMatrix, spec: &JetSpec, _task: &[f64]) -> Result<JetTable> {
        let n = points.rows();
        let comps = spec
            .components()
            .into_iter()
            .map(|c| {
                DenseMatrix::from_fn(n, 4, |r, k| {
                    let x = points[(r, 0)];
                    let w = [self.w1, self.w2][k.min(1)];
                    match (c, k) {
                        (JetComp::Value, 0 | 1) => (w * x).sin(),
                        (JetComp::Value, 2) => x,
                        (JetComp::Value, _) => 1.0,
                        (JetComp::D(_), 0 | 1) => w * (w * x).cos(),
                        (JetComp::D(_), 2) => 1.0,
                        (JetComp::D(_), _) => 0.0,
                        (JetComp::DD(_), 0 | 1) => -w * w * (w * x).sin(),
                        (JetComp::DD(_), _) => 0.0,
                    }
                })
            })
            .collect();
        JetTable::new(spec.clone(), comps)
    }
}

/// Worst `|g − fd| / max(rel·|fd|, floor)` over every parameter, with
/// central differences of `loss`.
pub fn fd_worst(blocks: &[DenseMatrix], grad: &[f64], rel: f64, floor: f64, loss: impl Fn(&[DenseMatrix]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut i = 0;
    for b in 0..blocks.len() {
        for e in 0..blocks[b].as_slice().len() {
            let p = blocks[b].as_slice()[e];
            let h = 1e-5 * p.abs().max(1.0);
            let mut bl = blocks.to_vec();
            bl[b].as_mut_slice()[e] = p + h;
            let fp = loss(&bl);
            bl[b].as_mut_slice()[e] = p - h;
            let fm = loss(&bl);
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((grad[i] - fd).abs() / (rel * fd.abs()).max(floor));
            i += 1;
        }
    }
    assert_eq!(i, grad.len());
    worst
}
