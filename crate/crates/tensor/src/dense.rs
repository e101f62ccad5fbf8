use crate::tensor::expect_shape;
use crate::{Result, Scalar, Tensor};

fn check<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [batch, fan_in] = input.dims2("dense input")?;
    let [fan_out, w_in] = weights.dims2("dense weights")?;
    expect_shape("dense weights", &[fan_out, fan_in], &[fan_out, w_in])?;
    Ok((batch, fan_in, fan_out))
}

/// `y = x W^T + b` with `x: [B, in]`, `W: [out, in]`, `b: [out]`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, fan_in, fan_out) = check(input, weights)?;
    expect_shape("dense bias", &[fan_out], bias.shape())?;
    let mut out = Tensor::zeros(&[batch, fan_out]);
    for row in out.data_mut().chunks_mut(fan_out) {
        row.copy_from_slice(bias.data());
    }
    T::gemm(
        batch,
        fan_in,
        fan_out,
        T::one(),
        input.data(),
        fan_in,
        1,
        weights.data(),
        1,
        fan_in,
        T::one(),
        out.data_mut(),
        fan_out,
        1,
    );
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, grad_output: &Tensor<T>) -> Result<DenseGrads<T>> {
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[weights.shape()[0]]);
    let gx = dense_backward_accumulate(input, weights, grad_output, gw.data_mut(), gb.data_mut())?;
    Ok(DenseGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// Adds parameter gradients into caller buffers and returns the input gradient.
pub fn dense_backward_accumulate<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
    grad_weights: &mut [T],
    grad_bias: &mut [T],
) -> Result<Tensor<T>> {
    let (batch, fan_in, fan_out) = check(input, weights)?;
    expect_shape("dense grad_output", &[batch, fan_out], grad_output.shape())?;
    assert_eq!(grad_weights.len(), weights.len());
    assert_eq!(grad_bias.len(), fan_out);
    // dW += dY^T X
    T::gemm(
        fan_out,
        batch,
        fan_in,
        T::one(),
        grad_output.data(),
        1,
        fan_out,
        input.data(),
        fan_in,
        1,
        T::one(),
        grad_weights,
        fan_in,
        1,
    );
    for row in grad_output.data().chunks(fan_out) {
        for (b, &g) in grad_bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut gx = Tensor::zeros(&[batch, fan_in]);
    T::gemm(
        batch,
        fan_out,
        fan_in,
        T::one(),
        grad_output.data(),
        fan_out,
        1,
        weights.data(),
        fan_in,
        1,
        T::zero(),
        gx.data_mut(),
        fan_in,
        1,
    );
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_zero_bias_is_identity() {
        let mut w = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let w = Tensor::<f32>::filled(&[2, 4], 0.3);
        let b = Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap();
        let y = dense_forward(&Tensor::zeros(&[3, 4]), &w, &b).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn mismatched_weights_error() {
        let w = Tensor::<f32>::zeros(&[2, 5]);
        assert!(dense_forward(&Tensor::zeros(&[1, 4]), &w, &Tensor::zeros(&[2])).is_err());
    }
}
