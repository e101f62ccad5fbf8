//! Central finite-difference gradient checking.

use crate::{Scalar, Tensor};

/// Denominator floor for relative errors, so entries whose true gradient is
/// ~0 are judged on absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` (the claimed gradient of `loss` at `point`) against
/// central differences with the given `step`, returning the maximum
/// relative error over all entries.
pub fn grad_check<T: Scalar>(point: &Tensor<T>, analytic: &Tensor<T>, step: f64, mut loss: impl FnMut(&Tensor<T>) -> f64) -> f64 {
    assert_eq!(point.shape(), analytic.shape(), "gradient shape must match point");
    let h = T::from_f64_lossy(step);
    let mut probe = point.clone();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - h;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[i].to_f64().unwrap();
        worst = worst.max(relative_error(a, numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_cubic_passes() {
        let x = Tensor::<f64>::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let g = x.map(|v| 3.0 * v * v);
        let err = grad_check(&x, &g, 1e-3, |p| p.data().iter().map(|v| v * v * v).sum());
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let g = x.map(|v| v);
        assert!(grad_check(&x, &g, 1e-3, |p| p.data().iter().map(|v| v * v).sum()) > 0.4);
    }
}
