use crate::tensor::expect_shape;
use crate::{Result, Scalar, Tensor, TensorError};

/// Nearest-neighbour upsampling: every voxel becomes a `factor`^3 block.
pub fn upsample_nearest<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [b, c, d0, d1, d2] = input.dims5("upsample_nearest")?;
    let (u0, u1, u2) = (d0 * factor, d1 * factor, d2 * factor);
    let mut out = Tensor::zeros(&[b, c, u0, u1, u2]);
    let x = input.data();
    let y = out.data_mut();
    for bc in 0..b * c {
        let xs = &x[bc * d0 * d1 * d2..][..d0 * d1 * d2];
        let ys = &mut y[bc * u0 * u1 * u2..][..u0 * u1 * u2];
        for o0 in 0..u0 {
            for o1 in 0..u1 {
                let src = &xs[((o0 / factor) * d1 + o1 / factor) * d2..][..d2];
                let dst = &mut ys[(o0 * u1 + o1) * u2..][..u2];
                for (o2, v) in dst.iter_mut().enumerate() {
                    *v = src[o2 / factor];
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`upsample_nearest`]: sums each replicated block.
pub fn upsample_nearest_backward<T: Scalar>(grad_output: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [b, c, u0, u1, u2] = grad_output.dims5("upsample_nearest_backward")?;
    if u0 % factor != 0 || u1 % factor != 0 || u2 % factor != 0 {
        return Err(TensorError::ShapeMismatch {
            op: "upsample_nearest_backward",
            expected: vec![b, c, u0 / factor * factor, u1 / factor * factor, u2 / factor * factor],
            got: grad_output.shape().to_vec(),
        });
    }
    let (d0, d1, d2) = (u0 / factor, u1 / factor, u2 / factor);
    let mut gx = Tensor::zeros(&[b, c, d0, d1, d2]);
    let g = grad_output.data();
    let x = gx.data_mut();
    for bc in 0..b * c {
        let gs = &g[bc * u0 * u1 * u2..][..u0 * u1 * u2];
        let xs = &mut x[bc * d0 * d1 * d2..][..d0 * d1 * d2];
        for o0 in 0..u0 {
            for o1 in 0..u1 {
                let dst = &mut xs[((o0 / factor) * d1 + o1 / factor) * d2..][..d2];
                for (o2, &v) in gs[(o0 * u1 + o1) * u2..][..u2].iter().enumerate() {
                    dst[o2 / factor] += v;
                }
            }
        }
    }
    Ok(gx)
}

fn crop_offsets(from: [usize; 3], to: [usize; 3]) -> Result<[usize; 3]> {
    if (0..3).any(|i| to[i] > from[i]) {
        return Err(TensorError::ShapeMismatch {
            op: "center_crop",
            expected: to.to_vec(),
            got: from.to_vec(),
        });
    }
    Ok([(from[0] - to[0]) / 2, (from[1] - to[1]) / 2, (from[2] - to[2]) / 2])
}

/// Crops the spatial axes to `target`, centred (extra odd voxel dropped at the end).
pub fn center_crop<T: Scalar>(input: &Tensor<T>, target: [usize; 3]) -> Result<Tensor<T>> {
    let [b, c, d0, d1, d2] = input.dims5("center_crop")?;
    let off = crop_offsets([d0, d1, d2], target)?;
    let [t0, t1, t2] = target;
    let mut out = Tensor::zeros(&[b, c, t0, t1, t2]);
    let x = input.data();
    let y = out.data_mut();
    for bc in 0..b * c {
        for o0 in 0..t0 {
            for o1 in 0..t1 {
                let src = (((bc * d0) + o0 + off[0]) * d1 + o1 + off[1]) * d2 + off[2];
                let dst = ((bc * t0 + o0) * t1 + o1) * t2;
                y[dst..dst + t2].copy_from_slice(&x[src..src + t2]);
            }
        }
    }
    Ok(out)
}

/// Gradient of [`center_crop`]: zero-pads back to `input_shape`.
pub fn center_crop_backward<T: Scalar>(grad_output: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let [b, c, t0, t1, t2] = grad_output.dims5("center_crop_backward")?;
    let &[ib, ic, d0, d1, d2] = input_shape else {
        return Err(TensorError::Rank {
            op: "center_crop_backward",
            expected: 5,
            got: input_shape.len(),
        });
    };
    expect_shape("center_crop_backward", &[b, c], &[ib, ic])?;
    let off = crop_offsets([d0, d1, d2], [t0, t1, t2])?;
    let mut gx = Tensor::zeros(input_shape);
    let g = grad_output.data();
    let x = gx.data_mut();
    for bc in 0..b * c {
        for o0 in 0..t0 {
            for o1 in 0..t1 {
                let dst = (((bc * d0) + o0 + off[0]) * d1 + o1 + off[1]) * d2 + off[2];
                let src = ((bc * t0 + o0) * t1 + o1) * t2;
                x[dst..dst + t2].copy_from_slice(&g[src..src + t2]);
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maxpool3d;

    #[test]
    fn single_voxel_replicates() {
        let x = Tensor::<f32>::filled(&[1, 1, 1, 1, 1], 4.0);
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn chain_three_six_twelve_twentyfour() {
        let mut x = Tensor::<f32>::zeros(&[1, 2, 3, 3, 3]);
        for expect in [6, 12, 24] {
            x = upsample_nearest(&x, 2).unwrap();
            assert_eq!(&x.shape()[2..], &[expect; 3]);
        }
    }

    #[test]
    fn pool_after_upsample_of_constant_is_identity() {
        let x = Tensor::<f64>::filled(&[1, 1, 3, 2, 3], -0.75);
        let (y, _) = maxpool3d(&upsample_nearest(&x, 2).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn crop_is_centred_and_backward_pads() {
        let data: Vec<f64> = (0..64).map(|v| v as f64).collect();
        let x = Tensor::from_vec(&[1, 1, 4, 4, 4], data).unwrap();
        let y = center_crop(&x, [2, 2, 2]).unwrap();
        assert_eq!(y.data(), &[21.0, 22.0, 25.0, 26.0, 37.0, 38.0, 41.0, 42.0]);
        let g = center_crop_backward(&y, x.shape()).unwrap();
        assert_eq!(g.data().iter().sum::<f64>(), y.data().iter().sum::<f64>());
        assert_eq!(g.data()[21], 21.0);
        assert_eq!(g.data()[0], 0.0);
    }
}
