use serde::{Deserialize, Serialize};

use super::{ClassifierError, FeatureVector};

/// Parameters of the potential kernel `1 / (1 + alpha * R^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub alpha: f64,
}

impl KernelParams {
    pub fn new(alpha: f64) -> Result<Self, ClassifierError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ClassifierError::InvalidParam(format!(
                "kernel alpha must be a positive finite number, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    /// Kernel value for an already computed squared distance.
    #[inline]
    pub fn eval_sq(&self, sq_dist: f64) -> f64 {
        1.0 / (1.0 + self.alpha * sq_dist)
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

/// Squared Euclidean distance. Callers guarantee equal lengths.
#[inline]
pub(crate) fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = y - x;
            d * d
        })
        .sum()
}

/// Potential between two states: `1 / (1 + alpha * |x_j - x_q|^2)`, always in `(0, 1]`.
pub fn potential(
    x_q: &FeatureVector,
    x_j: &FeatureVector,
    kernel: &KernelParams,
) -> Result<f64, ClassifierError> {
    if x_q.dim() != x_j.dim() {
        return Err(ClassifierError::DimensionMismatch {
            expected: x_q.dim(),
            got: x_j.dim(),
        });
    }
    if !(kernel.alpha.is_finite() && kernel.alpha > 0.0) {
        return Err(ClassifierError::InvalidParam(format!(
            "kernel alpha must be a positive finite number, got {}",
            kernel.alpha
        )));
    }
    let sq = sq_distance(x_q.values(), x_j.values());
    if !sq.is_finite() {
        return Err(ClassifierError::NonFinite);
    }
    Ok(kernel.eval_sq(sq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identity_is_one() {
        let x = fv(&[0.7, 0.2]);
        assert_eq!(potential(&x, &x, &KernelParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn three_four_five() {
        let p = potential(&fv(&[0.0, 0.0]), &fv(&[3.0, 4.0]), &KernelParams::default()).unwrap();
        assert_eq!(p, 1.0 / 26.0);
    }

    #[test]
    fn half_alpha() {
        let k = KernelParams::new(0.5).unwrap();
        let p = potential(&fv(&[1.0, 1.0, 1.0]), &fv(&[2.0, 2.0, 2.0]), &k).unwrap();
        assert!((p - 0.4).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let err = potential(&fv(&[1.0]), &fv(&[1.0, 2.0]), &KernelParams::default()).unwrap_err();
        assert!(matches!(err, ClassifierError::DimensionMismatch { expected: 1, got: 2 }));
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(KernelParams::new(0.0).is_err());
        assert!(KernelParams::new(-1.0).is_err());
        assert!(KernelParams::new(f64::NAN).is_err());
        let bad = KernelParams { alpha: -2.0 };
        assert!(potential(&fv(&[1.0]), &fv(&[1.0]), &bad).is_err());
    }

    #[test]
    fn overflowing_distance_is_an_error() {
        let err = potential(&fv(&[-1e200]), &fv(&[1e200]), &KernelParams::default()).unwrap_err();
        assert!(matches!(err, ClassifierError::NonFinite));
    }
}
