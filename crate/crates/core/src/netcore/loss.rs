use alloc::vec;
use alloc::vec::Vec;

/// Per-sample loss `ℓ(prediction, target)`.
///
/// Squared error is `‖ŷ − y‖²` (no ½). Softmax cross-entropy treats the
/// prediction as logits and the target as a (possibly unnormalized)
/// probability vector: `−Σ y_j log softmax(ŷ)_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum LossKind {
    SquaredError,
    SoftmaxCrossEntropy,
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| libm::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl LossKind {
    pub fn value(self, pred: &[f64], target: &[f64]) -> f64 {
        match self {
            LossKind::SquaredError => pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum(),
            LossKind::SoftmaxCrossEntropy => {
                let m = pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + libm::log(pred.iter().map(|v| libm::exp(v - m)).sum::<f64>());
                target.iter().zip(pred).map(|(y, z)| y * (lse - z)).sum::<f64>()
            }
        }
    }

    pub fn gradient(self, pred: &[f64], target: &[f64]) -> Vec<f64> {
        match self {
            LossKind::SquaredError => pred.iter().zip(target).map(|(p, y)| 2.0 * (p - y)).collect(),
            LossKind::SoftmaxCrossEntropy => {
                let total: f64 = target.iter().sum();
                softmax(pred).iter().zip(target).map(|(p, y)| total * p - y).collect()
            }
        }
    }

    /// `∇²ℓ · v` with respect to the prediction.
    pub fn hessian_vec(self, pred: &[f64], target: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            LossKind::SquaredError => v.iter().map(|x| 2.0 * x).collect(),
            LossKind::SoftmaxCrossEntropy => {
                let total: f64 = target.iter().sum();
                let p = softmax(pred);
                let pv: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
                let mut out = vec![0.0; v.len()];
                for ((o, pi), vi) in out.iter_mut().zip(&p).zip(v) {
                    *o = total * pi * (vi - pv);
                }
                out
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared-error",
            LossKind::SoftmaxCrossEntropy => "softmax-cross-entropy",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_error_zero_iff_exact() {
        assert_eq!(LossKind::SquaredError.value(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(LossKind::SquaredError.value(&[1.0, 2.0], &[0.0, 2.0]), 1.0);
    }

    #[test]
    fn cross_entropy_nonnegative_and_differentiable() {
        let z = [0.3, -1.2, 2.0];
        let y = [0.0, 0.0, 1.0];
        let l = LossKind::SoftmaxCrossEntropy;
        assert!(l.value(&z, &y) >= 0.0);
        let g = l.gradient(&z, &y);
        let h = 1e-6;
        for i in 0..3 {
            let mut zp = z;
            zp[i] += h;
            let mut zm = z;
            zm[i] -= h;
            let fd = (l.value(&zp, &y) - l.value(&zm, &y)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
        let v = [1.0, 0.5, -0.25];
        let hv = l.hessian_vec(&z, &y, &v);
        let zp: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let zm: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        for i in 0..3 {
            let fd = (l.gradient(&zp, &y)[i] - l.gradient(&zm, &y)[i]) / (2.0 * h);
            assert!((fd - hv[i]).abs() < 1e-8);
        }
    }
}
