//! Kernels checked against direct nested-loop reference implementations and
//! central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxnox_tensor::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor64 {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct convolution: 7 nested loops plus the bias.
fn conv_oracle(x: &Tensor64, w: &Tensor64, b: &Tensor64) -> Tensor64 {
    let s = x.shape();
    let (bn, cin, d0, d1, d2) = (s[0], s[1], s[2], s[3], s[4]);
    let cout = w.shape()[0];
    let k = w.shape()[2] as isize;
    let pad = k / 2;
    let mut y = Tensor::zeros(&[bn, cout, d0, d1, d2]);
    let xi = |n, c, i: isize, j: isize, l: isize| -> f64 {
        if i < 0 || j < 0 || l < 0 || i >= d0 as isize || j >= d1 as isize || l >= d2 as isize {
            0.0
        } else {
            x.data()[(((n * cin + c) * d0 + i as usize) * d1 + j as usize) * d2 + l as usize]
        }
    };
    for n in 0..bn {
        for co in 0..cout {
            for i in 0..d0 {
                for j in 0..d1 {
                    for l in 0..d2 {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            for a in 0..k {
                                for bb in 0..k {
                                    for c in 0..k {
                                        let wv = w.data()[(((co * cin + ci) * k as usize + a as usize) * k as usize + bb as usize) * k as usize + c as usize];
                                        acc += wv * xi(n, ci, i as isize + a - pad, j as isize + bb - pad, l as isize + c - pad);
                                    }
                                }
                            }
                        }
                        y.data_mut()[(((n * cout + co) * d0 + i) * d1 + j) * d2 + l] = acc;
                    }
                }
            }
        }
    }
    y
}

fn weighted_sum(t: &Tensor64, r: &Tensor64) -> f64 {
    t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn conv3d_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[1, 2, 4, 4, 4], &mut rng);
    let w = random(&[3, 2, 3, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let fast = conv3d_forward(&x, &w, &b).unwrap();
    let slow = conv_oracle(&x, &w, &b);
    for (a, e) in fast.data().iter().zip(slow.data()) {
        assert!((a - e).abs() < 1e-10);
    }
    // Larger volume forces multiple column blocks.
    let x = random(&[2, 16, 20, 20, 20], &mut rng);
    let w = random(&[2, 16, 3, 3, 3], &mut rng);
    let b = random(&[2], &mut rng);
    let fast = conv3d_forward(&x, &w, &b).unwrap();
    let slow = conv_oracle(&x, &w, &b);
    let worst = fast.data().iter().zip(slow.data()).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn pointwise_conv_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[2, 3, 3, 2, 5], &mut rng);
    let w = random(&[5, 3, 1, 1, 1], &mut rng);
    let b = random(&[5], &mut rng);
    let fast = conv3d_forward(&x, &w, &b).unwrap();
    let slow = conv_oracle(&x, &w, &b);
    for (a, e) in fast.data().iter().zip(slow.data()) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn maxpool_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[2, 3, 5, 4, 3], &mut rng);
    let (y, _) = maxpool3d(&x).unwrap();
    let s = x.shape();
    for n in 0..2 {
        for c in 0..3 {
            for i in 0..3 {
                for j in 0..2 {
                    for l in 0..2 {
                        let mut m = f64::NEG_INFINITY;
                        for a in 2 * i..(2 * i + 2).min(s[2]) {
                            for b in 2 * j..(2 * j + 2).min(s[3]) {
                                for d in 2 * l..(2 * l + 2).min(s[4]) {
                                    m = m.max(x.data()[(((n * 3 + c) * s[2] + a) * s[3] + b) * s[4] + d]);
                                }
                            }
                        }
                        assert_eq!(y.data()[(((n * 3 + c) * 3 + i) * 2 + j) * 2 + l], m);
                    }
                }
            }
        }
    }
}

#[test]
fn conv3d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&[2, 2, 3, 4, 3], &mut rng);
    let w = random(&[3, 2, 3, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let r = random(&[2, 3, 3, 4, 3], &mut rng);
    let grads = conv3d_backward(&x, &w, &r, true).unwrap();
    let e_in = grad_check(&x, grads.input.as_ref().unwrap(), 1e-3, |p| weighted_sum(&conv3d_forward(p, &w, &b).unwrap(), &r));
    let e_w = grad_check(&w, &grads.weights, 1e-3, |p| weighted_sum(&conv3d_forward(&x, p, &b).unwrap(), &r));
    let e_b = grad_check(&b, &grads.bias, 1e-3, |p| weighted_sum(&conv3d_forward(&x, &w, p).unwrap(), &r));
    assert!(e_in < 1e-4 && e_w < 1e-4 && e_b < 1e-4, "{e_in} {e_w} {e_b}");
}

#[test]
fn upsample_gradient_is_block_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[1, 2, 2, 3, 2], &mut rng);
    let r = random(&[1, 2, 4, 6, 4], &mut rng);
    let g = upsample_nearest_backward(&r, 2).unwrap();
    let err = grad_check(&x, &g, 1e-3, |p| weighted_sum(&upsample_nearest(p, 2).unwrap(), &r));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[3, 7], &mut rng);
    let w = random(&[4, 7], &mut rng);
    let b = random(&[4], &mut rng);
    let r = random(&[3, 4], &mut rng);
    let g = dense_backward(&x, &w, &r).unwrap();
    let e_in = grad_check(&x, &g.input, 1e-3, |p| weighted_sum(&dense_forward(p, &w, &b).unwrap(), &r));
    let e_w = grad_check(&w, &g.weights, 1e-3, |p| weighted_sum(&dense_forward(&x, p, &b).unwrap(), &r));
    let e_b = grad_check(&b, &g.bias, 1e-3, |p| weighted_sum(&dense_forward(&x, &w, p).unwrap(), &r));
    assert!(e_in < 1e-4 && e_w < 1e-4 && e_b < 1e-4);
}

#[test]
fn softmax_ce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let logits = random(&[2, 5, 2, 3, 2], &mut rng).map(|v| 3.0 * v);
    let mut target = Tensor::zeros(logits.shape());
    for n in 0..2 {
        for v in 0..12 {
            let c = rng.random_range(0..5);
            target.data_mut()[(n * 5 + c) * 12 + v] = 1.0;
        }
    }
    let (_, g) = softmax_ce_loss(&logits, &target).unwrap();
    let err = grad_check(&logits, &g, 1e-3, |p| softmax_ce_loss(p, &target).unwrap().0);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn f32_and_f64_conv_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&[1, 3, 5, 5, 5], &mut rng);
    let w = random(&[4, 3, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    let y64 = conv3d_forward(&x, &w, &b).unwrap();
    let y32 = conv3d_forward(&x.cast::<f32>(), &w.cast(), &b.cast()).unwrap();
    for (a, e) in y32.data().iter().zip(y64.data()) {
        assert!((*a as f64 - e).abs() < 1e-4);
    }
}

#[test]
fn conv3d_oracle_on_degenerate_and_wide_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (shape, k) in [([2, 3, 1, 7, 2], 3), ([1, 2, 3, 1, 1], 3), ([1, 1, 6, 5, 4], 5), ([1, 2, 2, 2, 2], 5)] {
        let x = random(&shape, &mut rng);
        let w = random(&[3, shape[1], k, k, k], &mut rng);
        let b = random(&[3], &mut rng);
        let fast = conv3d_forward(&x, &w, &b).unwrap();
        let slow = conv_oracle(&x, &w, &b);
        let err = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{shape:?} k={k}: {err}");
        let r = random(fast.shape(), &mut rng);
        let grads = conv3d_backward(&x, &w, &r, true).unwrap();
        let e_in = grad_check(&x, grads.input.as_ref().unwrap(), 1e-3, |p| weighted_sum(&conv3d_forward(p, &w, &b).unwrap(), &r));
        let e_w = grad_check(&w, &grads.weights, 1e-3, |p| weighted_sum(&conv3d_forward(&x, p, &b).unwrap(), &r));
        assert!(e_in < 1e-4 && e_w < 1e-4, "{shape:?} k={k}: {e_in} {e_w}");
    }
}
