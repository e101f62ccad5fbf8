//! 3D convolution with zero "same" padding.
//!
//! The input is copied once into a zero-padded volume. In the flattened
//! padded layout every kernel tap is a constant offset, so the convolution is
//! a sum of `k^3` GEMMs that read the padded volume in place. Outputs are
//! computed over the contiguous flat range spanning all interior positions;
//! the border positions inside that range are discarded.

use crate::tensor::expect_shape;
use crate::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    cout: usize,
    k: usize,
    dims: [usize; 3],
}

impl Geometry {
    fn new(input: &[usize; 5], weights: &[usize]) -> Result<Self> {
        let [_, cin, d0, d1, d2] = *input;
        let &[cout, wcin, k0, k1, k2] = weights else {
            return Err(TensorError::Rank {
                op: "conv3d weights",
                expected: 5,
                got: weights.len(),
            });
        };
        expect_shape("conv3d weights", &[cout, cin, k0, k0, k0], &[cout, wcin, k0, k1, k2])?;
        if k0 % 2 == 0 {
            return Err(TensorError::EvenKernel(k0));
        }
        Ok(Self {
            cin,
            cout,
            k: k0,
            dims: [d0, d1, d2],
        })
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    fn taps(&self) -> usize {
        self.k * self.k * self.k
    }

    fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    fn padded(&self) -> [usize; 3] {
        self.dims.map(|d| d + 2 * self.pad())
    }

    fn padded_voxels(&self) -> usize {
        self.padded().iter().product()
    }

    /// Flat padded index of interior position `(o0, o1, o2)`.
    fn padded_index(&self, o0: usize, o1: usize, o2: usize) -> usize {
        let [_, p1, p2] = self.padded();
        let q = self.pad();
        ((o0 + q) * p1 + o1 + q) * p2 + o2 + q
    }

    /// Flat padded range covering every interior position.
    fn span(&self) -> (usize, usize) {
        let [d0, d1, d2] = self.dims;
        if d0 == 0 || d1 == 0 || d2 == 0 {
            return (0, 0);
        }
        let start = self.padded_index(0, 0, 0);
        (start, self.padded_index(d0 - 1, d1 - 1, d2 - 1) + 1 - start)
    }

    /// Offset of tap `(a, b, c)` relative to the span start.
    fn tap_offset(&self, t: usize) -> usize {
        let [_, p1, p2] = self.padded();
        let (a, b, c) = (t / (self.k * self.k), (t / self.k) % self.k, t % self.k);
        (a * p1 + b) * p2 + c
    }

    /// Visits each interior row as (flat unpadded start, padded span offset).
    fn rows(&self, mut visit: impl FnMut(usize, usize)) {
        let [d0, d1, d2] = self.dims;
        let (start, _) = self.span();
        for o0 in 0..d0 {
            for o1 in 0..d1 {
                visit((o0 * d1 + o1) * d2, self.padded_index(o0, o1, 0) - start);
            }
        }
    }
}

/// Copies one sample's channels into a zeroed padded buffer.
fn pad_into<T: Scalar>(g: &Geometry, channels: usize, x: &[T], out: &mut [T]) {
    let (pv, v, d2) = (g.padded_voxels(), g.voxels(), g.dims[2]);
    let (start, _) = g.span();
    out.fill(T::zero());
    for c in 0..channels {
        g.rows(|src, dst| {
            let at = c * pv + start + dst;
            out[at..at + d2].copy_from_slice(&x[c * v + src..][..d2]);
        });
    }
}

/// Per-tap `[cout, cin]` matrices of a `[cout, cin, k, k, k]` kernel.
fn split_taps<T: Scalar>(g: &Geometry, weights: &[T]) -> Vec<T> {
    let (taps, n) = (g.taps(), g.cout * g.cin);
    let mut out = vec![T::zero(); taps * n];
    for (oi, w) in weights.chunks(taps).enumerate() {
        for (t, &v) in w.iter().enumerate() {
            out[t * n + oi] = v;
        }
    }
    out
}

/// `y = W * x` for one padded sample, written to the span buffer `ys`.
fn convolve_padded<T: Scalar>(g: &Geometry, xp: &[T], tap_weights: &[T], ys: &mut [T]) {
    let (_, n) = g.span();
    let pv = g.padded_voxels();
    let per_tap = g.cout * g.cin;
    for t in 0..g.taps() {
        T::gemm(
            g.cout,
            g.cin,
            n,
            T::one(),
            &tap_weights[t * per_tap..(t + 1) * per_tap],
            g.cin,
            1,
            &xp[g.tap_offset(t)..],
            pv,
            1,
            if t == 0 { T::zero() } else { T::one() },
            ys,
            n,
            1,
        );
    }
}

/// Scratch buffers reused across the samples of a batch.
struct Work<T> {
    padded: Vec<T>,
    span: Vec<T>,
}

impl<T: Scalar> Work<T> {
    fn new(g: &Geometry) -> Self {
        Self {
            padded: vec![T::zero(); g.cin * g.padded_voxels()],
            span: vec![T::zero(); g.cout * g.span().1],
        }
    }
}

/// `y = W * x` (no bias) for one unpadded sample.
fn convolve_sample<T: Scalar>(g: &Geometry, x: &[T], tap_weights: &[T], y: &mut [T], work: &mut Work<T>) {
    let (_, n) = g.span();
    let (v, d2) = (g.voxels(), g.dims[2]);
    if n == 0 {
        return;
    }
    pad_into(g, g.cin, x, &mut work.padded);
    convolve_padded(g, &work.padded, tap_weights, &mut work.span);
    for co in 0..g.cout {
        g.rows(|dst, src| {
            y[co * v + dst..][..d2].copy_from_slice(&work.span[co * n + src..][..d2]);
        });
    }
}

/// Same-padded 3D convolution.
///
/// `input` is `[B, Cin, D0, D1, D2]`, `weights` `[Cout, Cin, k, k, k]` with odd
/// `k`, `bias` `[Cout]`. The output keeps the input's spatial shape.
pub fn conv3d_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let dims = input.dims5("conv3d input")?;
    let g = Geometry::new(&dims, weights.shape())?;
    expect_shape("conv3d bias", &[g.cout], bias.shape())?;
    let batch = dims[0];
    let voxels = g.voxels();
    let mut out = Tensor::zeros(&[batch, g.cout, g.dims[0], g.dims[1], g.dims[2]]);
    let taps = split_taps(&g, weights.data());
    let mut work = Work::new(&g);
    let in_len = g.cin * voxels;
    let out_len = g.cout * voxels;
    for s in 0..batch {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let y = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
        convolve_sample(&g, x, &taps, y, &mut work);
        for (co, chunk) in y.chunks_mut(voxels.max(1)).enumerate() {
            let b = bias.data()[co];
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Conv3dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv3d_forward`] given the upstream gradient.
///
/// The input gradient is skipped when `need_input` is false (first layer).
pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
    need_input: bool,
) -> Result<Conv3dGrads<T>> {
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[weights.shape()[0]]);
    let mut gx = need_input.then(|| Tensor::zeros(input.shape()));
    conv3d_backward_accumulate(input, weights, grad_output, gw.data_mut(), gb.data_mut(), gx.as_mut())?;
    Ok(Conv3dGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// Like [`conv3d_backward`] but adds into caller-owned parameter gradients.
/// `grad_input`, when given, is overwritten.
pub fn conv3d_backward_accumulate<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
    grad_weights: &mut [T],
    grad_bias: &mut [T],
    mut grad_input: Option<&mut Tensor<T>>,
) -> Result<()> {
    let dims = input.dims5("conv3d input")?;
    let g = Geometry::new(&dims, weights.shape())?;
    let batch = dims[0];
    expect_shape(
        "conv3d grad_output",
        &[batch, g.cout, g.dims[0], g.dims[1], g.dims[2]],
        grad_output.shape(),
    )?;
    assert_eq!(grad_weights.len(), weights.len());
    assert_eq!(grad_bias.len(), g.cout);
    if let Some(gx) = grad_input.as_deref() {
        expect_shape("conv3d grad_input", input.shape(), gx.shape())?;
    }
    let voxels = g.voxels();
    let (_, n) = g.span();
    let (pv, d2, k3) = (g.padded_voxels(), g.dims[2], g.taps());
    let mut work = Work::new(&g);
    // Output gradient laid out over the span, zero at discarded positions.
    let mut gy_span = vec![T::zero(); g.cout * n];
    let mut tap_grad = vec![T::zero(); g.cout * g.cin];
    // The input gradient is the same-padded convolution of the output
    // gradient with the adjoint kernel: channels swapped, taps mirrored.
    let adjoint = Geometry {
        cin: g.cout,
        cout: g.cin,
        ..g
    };
    let (adjoint_taps, mut adjoint_work) = match grad_input {
        Some(_) => {
            let mut flipped = vec![T::zero(); weights.len()];
            for co in 0..g.cout {
                for ci in 0..g.cin {
                    let src = &weights.data()[(co * g.cin + ci) * k3..][..k3];
                    let dst = &mut flipped[(ci * g.cout + co) * k3..][..k3];
                    for t in 0..k3 {
                        dst[k3 - 1 - t] = src[t];
                    }
                }
            }
            (split_taps(&adjoint, &flipped), Some(Work::new(&adjoint)))
        }
        None => (Vec::new(), None),
    };
    let in_len = g.cin * voxels;
    let out_len = g.cout * voxels;
    for s in 0..batch {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let gy = &grad_output.data()[s * out_len..(s + 1) * out_len];
        if n > 0 {
            pad_into(&g, g.cin, x, &mut work.padded);
            gy_span.fill(T::zero());
            for co in 0..g.cout {
                g.rows(|src, dst| {
                    gy_span[co * n + dst..][..d2].copy_from_slice(&gy[co * voxels + src..][..d2]);
                });
            }
            for t in 0..k3 {
                // dW_t[co, ci] = sum_j gy[co, j] * x_pad[ci, offset_t + j]
                T::gemm(
                    g.cout,
                    n,
                    g.cin,
                    T::one(),
                    &gy_span,
                    n,
                    1,
                    &work.padded[g.tap_offset(t)..],
                    1,
                    pv,
                    T::zero(),
                    &mut tap_grad,
                    g.cin,
                    1,
                );
                for (oi, &v) in tap_grad.iter().enumerate() {
                    grad_weights[oi * k3 + t] += v;
                }
            }
        }
        if let (Some(gx), Some(aw)) = (grad_input.as_deref_mut(), adjoint_work.as_mut()) {
            let gx = &mut gx.data_mut()[s * in_len..(s + 1) * in_len];
            convolve_sample(&adjoint, gy, &adjoint_taps, gx, aw);
        }
        for (co, chunk) in gy.chunks(voxels.max(1)).enumerate().take(g.cout) {
            grad_bias[co] += chunk.iter().copied().sum::<T>();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_kernel(c: usize) -> Tensor<f64> {
        let mut w = Tensor::zeros(&[c, c, 3, 3, 3]);
        for i in 0..c {
            w.data_mut()[(i * c + i) * 27 + 13] = 1.0;
        }
        w
    }

    #[test]
    fn identity_kernel_is_identity() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 5 * 2).map(|v| (v as f64).sin()).collect();
        let x = Tensor::from_vec(&[2, 3, 4, 5, 2], data).unwrap();
        let y = conv3d_forward(&x, &identity_kernel(3), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_broadcast_bias() {
        let x = Tensor::<f32>::zeros(&[1, 2, 3, 3, 3]);
        let w = Tensor::filled(&[4, 2, 3, 3, 3], 0.7);
        let b = Tensor::from_vec(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let y = conv3d_forward(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[1, 4, 3, 3, 3]);
        for (co, chunk) in y.data().chunks(27).enumerate() {
            assert!(chunk.iter().all(|&v| v == b.data()[co]));
        }
    }

    #[test]
    fn same_padding_preserves_spatial_shape() {
        for dims in [[1, 1, 1], [2, 7, 3], [5, 5, 5], [20, 1, 4]] {
            let x = Tensor::<f32>::zeros(&[1, 2, dims[0], dims[1], dims[2]]);
            let w = Tensor::zeros(&[3, 2, 3, 3, 3]);
            let y = conv3d_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
            assert_eq!(&y.shape()[2..], &dims);
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let x = Tensor::<f32>::zeros(&[1, 2, 3, 3, 3]);
        let w = Tensor::zeros(&[3, 4, 3, 3, 3]);
        assert!(matches!(
            conv3d_forward(&x, &w, &Tensor::zeros(&[3])),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let w = Tensor::zeros(&[3, 2, 2, 2, 2]);
        assert!(matches!(
            conv3d_forward(&x, &w, &Tensor::zeros(&[3])),
            Err(TensorError::EvenKernel(2))
        ));
        let flat = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(
            conv3d_forward(&flat, &Tensor::zeros(&[3, 2, 3, 3, 3]), &Tensor::zeros(&[3])),
            Err(TensorError::Rank { .. })
        ));
    }
}
