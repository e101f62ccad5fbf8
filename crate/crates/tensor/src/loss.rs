use crate::tensor::expect_shape;
use crate::{Result, Scalar, Tensor, TensorError};

fn layout<T: Scalar>(logits: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    if logits.rank() < 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            got: logits.rank(),
        });
    }
    let batch = logits.shape()[0];
    let classes = logits.shape()[1];
    let voxels = logits.shape()[2..].iter().product::<usize>();
    Ok((batch, classes, voxels))
}

/// Softmax over the channel axis (axis 1) for every sample and voxel.
pub fn softmax_channels<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, classes, voxels) = layout(logits, "softmax_channels")?;
    let mut out = logits.clone();
    let y = out.data_mut();
    for b in 0..batch {
        let base = b * classes * voxels;
        for v in 0..voxels {
            let at = |c: usize| base + c * voxels + v;
            let max = (0..classes).map(|c| y[at(c)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for c in 0..classes {
                let e = (y[at(c)] - max).exp();
                y[at(c)] = e;
                sum += e;
            }
            for c in 0..classes {
                y[at(c)] /= sum;
            }
        }
    }
    Ok(out)
}

/// Categorical cross-entropy of softmax(logits) against a one-hot target,
/// averaged over batch and voxels. Returns the loss and `d loss / d logits`.
pub fn softmax_ce_loss<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let (batch, _, voxels) = layout(logits, "softmax_ce_loss")?;
    let (sum, grad) = softmax_ce_loss_scaled(logits, target, batch * voxels)?;
    Ok((sum / (batch * voxels).max(1) as f64, grad))
}

/// Summed (not averaged) loss, with the gradient divided by `normalizer`.
/// Lets a minibatch be processed in pieces that share one normalizer.
pub fn softmax_ce_loss_scaled<T: Scalar>(
    logits: &Tensor<T>,
    target: &Tensor<T>,
    normalizer: usize,
) -> Result<(f64, Tensor<T>)> {
    expect_shape("softmax_ce_loss target", logits.shape(), target.shape())?;
    let (batch, classes, voxels) = layout(logits, "softmax_ce_loss")?;
    let t = target.data();
    let mut grad = softmax_channels(logits)?;
    let x = logits.data();
    let scale = T::one() / T::from_usize(normalizer.max(1)).expect("normalizer fits");
    let mut total = 0.0f64;
    let g = grad.data_mut();
    for b in 0..batch {
        let base = b * classes * voxels;
        for v in 0..voxels {
            let at = |c: usize| base + c * voxels + v;
            let mut hot = None;
            for c in 0..classes {
                let tv = t[at(c)];
                if tv == T::one() && hot.is_none() {
                    hot = Some(c);
                } else if tv != T::zero() {
                    return Err(TensorError::NotOneHot { sample: b, voxel: v });
                }
            }
            let hot = hot.ok_or(TensorError::NotOneHot { sample: b, voxel: v })?;
            let max = (0..classes).map(|c| x[at(c)].to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + (0..classes)
                    .map(|c| (x[at(c)].to_f64().unwrap() - max).exp())
                    .sum::<f64>()
                    .ln();
            total += lse - x[at(hot)].to_f64().unwrap();
            for c in 0..classes {
                g[at(c)] = (g[at(c)] - t[at(c)]) * scale;
            }
        }
    }
    Ok((total, grad))
}
