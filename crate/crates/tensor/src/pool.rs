use crate::tensor::expect_shape;
use crate::{Result, Scalar, Tensor};

/// Output length of a ceil-mode 2x2x2 / stride 2 pooling axis.
pub fn pooled_dim(d: usize) -> usize {
    d.div_ceil(2)
}

/// 2x2x2 max pooling with stride 2 in ceil mode: a trailing odd slice forms
/// a partial window. Returns the pooled tensor and, per output element, the
/// flat input index of the winning element (first maximum in scan order).
pub fn maxpool3d<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, d0, d1, d2] = input.dims5("maxpool3d")?;
    let (p0, p1, p2) = (pooled_dim(d0), pooled_dim(d1), pooled_dim(d2));
    let mut out = Tensor::zeros(&[b, c, p0, p1, p2]);
    let mut argmax = Vec::with_capacity(out.len());
    let x = input.data();
    let y = out.data_mut();
    let mut o = 0;
    for bc in 0..b * c {
        let base = bc * d0 * d1 * d2;
        for i0 in 0..p0 {
            for i1 in 0..p1 {
                for i2 in 0..p2 {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    for a in 2 * i0..(2 * i0 + 2).min(d0) {
                        for bb in 2 * i1..(2 * i1 + 2).min(d1) {
                            for cc in 2 * i2..(2 * i2 + 2).min(d2) {
                                let idx = base + (a * d1 + bb) * d2 + cc;
                                if best == usize::MAX || x[idx] > best_v {
                                    best = idx;
                                    best_v = x[idx];
                                }
                            }
                        }
                    }
                    y[o] = best_v;
                    argmax.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each pooled gradient to the input element that won its window.
pub fn maxpool3d_backward<T: Scalar>(
    grad_output: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    expect_shape("maxpool3d_backward argmax", &[grad_output.len()], &[argmax.len()])?;
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_output.data()) {
        gxd[idx] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_gives_constant_output() {
        let x = Tensor::<f32>::filled(&[2, 3, 5, 4, 3], 1.5);
        let (y, _) = maxpool3d(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn spatial_chain_twenty_ten_five_three() {
        let mut x = Tensor::<f32>::zeros(&[1, 1, 20, 20, 20]);
        let mut seen = vec![];
        for _ in 0..3 {
            x = maxpool3d(&x).unwrap().0;
            seen.push(x.shape()[2]);
        }
        assert_eq!(seen, vec![10, 5, 3]);
        assert_eq!(x.shape(), &[1, 1, 3, 3, 3]);
    }

    #[test]
    fn backward_routes_only_to_argmax() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2, 2], vec![0.0, 3.0, 1.0, 2.0, -1.0, 0.5, 0.25, 2.5]).unwrap();
        let (y, arg) = maxpool3d(&x).unwrap();
        assert_eq!(y.data(), &[3.0]);
        let g = maxpool3d_backward(&Tensor::filled(&[1, 1, 1, 1, 1], 2.0), &arg, x.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
