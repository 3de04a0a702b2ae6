//! Finite-difference checks for every differentiable primitive.
//!
//! Each check contracts the op's output with a fixed random weighting so
//! that no gradient cancels by symmetry (a plain `sum` of a softmax has zero
//! gradient everywhere). Inputs have at most 64 elements, and are redrawn
//! when they land within reach of a non-smooth point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GradCheck, GradCheckReport};
use crate::error::Result;
use crate::ops::conv::Conv2dOptions;
use crate::tensor::Tensor;

/// Relative-error threshold for a single primitive.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;

/// A named finite-difference check parameterized by RNG seed.
#[derive(Clone, Copy)]
pub struct OpCheck {
    pub name: &'static str,
    pub run: fn(u64) -> Result<GradCheckReport>,
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape).expect("valid shape")
}

/// `sum(y ⊙ r)` for a fixed random `r` shaped like `y`.
fn contract(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let r = uniform(&mut rng, y.shape(), 0.5, 1.5);
    Ok(y.mul(&r)?.sum())
}

fn check(seed: u64, inputs: Vec<Tensor<f64>>, f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>) -> Result<GradCheckReport> {
    GradCheck::default().run(|v| contract(&f(v)?, seed), &inputs)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_vec(v, shape).expect("valid shape")
}

/// Input whose pooling windows have a unique maximum by a clear margin.
fn distinct_windows(rng: &mut ChaCha8Rng, shape: &[usize], k: usize) -> Tensor<f64> {
    let (h, w) = (shape[2], shape[3]);
    loop {
        let t = uniform(rng, shape, -1.0, 1.0);
        let x = t.data();
        let ok = (0..shape[0] * shape[1]).all(|p| {
            (0..h / k).all(|oy| {
                (0..w / k).all(|ox| {
                    let mut vals: Vec<f64> = (0..k * k)
                        .map(|i| x[p * h * w + (oy * k + i / k) * w + ox * k + i % k])
                        .collect();
                    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    vals[0] - vals[1] > 1e-2
                })
            })
        });
        if ok {
            return t;
        }
    }
}

/// Grid whose taps stay clear of pixel-cell boundaries.
fn smooth_grid(rng: &mut ChaCha8Rng, n: usize, oh: usize, ow: usize, h: usize, w: usize) -> Tensor<f64> {
    let mut v = Vec::with_capacity(n * oh * ow * 2);
    for i in 0..n * oh * ow * 2 {
        let size = if i % 2 == 0 { w } else { h };
        loop {
            let g: f64 = rng.random_range(-1.15..1.15);
            let px = (g + 1.0) * 0.5 * (size - 1) as f64;
            let frac = px - px.floor();
            if frac > 0.02 && frac < 0.98 {
                v.push(g);
                break;
            }
        }
    }
    Tensor::from_vec(v, &[n, oh, ow, 2]).expect("valid shape")
}

pub fn primitive_checks() -> Vec<OpCheck> {
    vec![
        OpCheck {
            name: "add",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[3, 4], -1.0, 1.0), uniform(&mut r, &[3, 4], -1.0, 1.0)], |v| v[0].add(&v[1]))
            },
        },
        OpCheck {
            name: "sub",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[3, 4], -1.0, 1.0), uniform(&mut r, &[3, 4], -1.0, 1.0)], |v| v[0].sub(&v[1]))
            },
        },
        OpCheck {
            name: "mul",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[3, 4], -1.0, 1.0), uniform(&mut r, &[3, 4], -1.0, 1.0)], |v| v[0].mul(&v[1]))
            },
        },
        OpCheck {
            name: "div",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[3, 4], -1.0, 1.0), uniform(&mut r, &[3, 4], 0.5, 2.0)], |v| v[0].div(&v[1]))
            },
        },
        OpCheck {
            name: "scalar_ops",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[10], -1.0, 1.0)], |v| v[0].mul_scalar(-2.5)?.add_scalar(0.75))
            },
        },
        OpCheck {
            name: "square",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[10], -2.0, 2.0)], |v| v[0].square())
            },
        },
        OpCheck {
            name: "exp",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[10], -2.0, 2.0)], |v| v[0].exp())
            },
        },
        OpCheck {
            name: "ln",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[10], 0.2, 3.0)], |v| v[0].ln())
            },
        },
        OpCheck {
            name: "matmul",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[3, 5], -1.0, 1.0), uniform(&mut r, &[5, 4], -1.0, 1.0)], |v| v[0].matmul(&v[1]))
            },
        },
        OpCheck {
            name: "matmul_batched",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[2, 3, 4], -1.0, 1.0), uniform(&mut r, &[2, 4, 3], -1.0, 1.0)], |v| v[0].matmul(&v[1]))
            },
        },
        OpCheck {
            name: "linear",
            run: |s| {
                let mut r = rng(s);
                let inputs = vec![
                    uniform(&mut r, &[2, 3, 4], -1.0, 1.0),
                    uniform(&mut r, &[5, 4], -1.0, 1.0),
                    uniform(&mut r, &[5], -1.0, 1.0),
                ];
                check(s, inputs, |v| v[0].linear(&v[1], Some(&v[2])))
            },
        },
        OpCheck {
            name: "sum",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[4, 4], -1.0, 1.0)], |v| Ok(v[0].sum()))
            },
        },
        OpCheck {
            name: "mean",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[4, 4], -1.0, 1.0)], |v| Ok(v[0].mean()))
            },
        },
        OpCheck {
            name: "sum_axis",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[2, 3, 4], -1.0, 1.0)], |v| v[0].sum_axis(1, false))
            },
        },
        OpCheck {
            name: "mean_axis",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[2, 3, 4], -1.0, 1.0)], |v| v[0].mean_axis(-1, true))
            },
        },
        OpCheck {
            name: "reshape",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[2, 6], -1.0, 1.0)], |v| v[0].reshape(&[3, 4]))
            },
        },
        OpCheck {
            name: "permute",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[2, 3, 4], -1.0, 1.0)], |v| v[0].permute(&[2, 0, 1]))
            },
        },
        OpCheck {
            name: "broadcast_to",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[2, 1, 3], -1.0, 1.0)], |v| v[0].broadcast_to(&[2, 4, 3]))
            },
        },
        OpCheck {
            name: "concat",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[2, 2, 3], -1.0, 1.0), uniform(&mut r, &[2, 3, 3], -1.0, 1.0)], |v| {
                    Tensor::concat(v, 1)
                })
            },
        },
        OpCheck {
            name: "relu",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![away_from_zero(&mut r, &[16])], |v| v[0].relu())
            },
        },
        OpCheck {
            name: "gelu",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[16], -3.0, 3.0)], |v| v[0].gelu())
            },
        },
        OpCheck {
            name: "sigmoid",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[16], -4.0, 4.0)], |v| v[0].sigmoid())
            },
        },
        OpCheck {
            name: "softmax",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[3, 5], -2.0, 2.0)], |v| v[0].softmax(-1))
            },
        },
        OpCheck {
            name: "log_softmax",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[3, 5], -2.0, 2.0)], |v| v[0].log_softmax(1))
            },
        },
        OpCheck {
            name: "layer_norm",
            run: |s| {
                let mut r = rng(s);
                let inputs = vec![
                    uniform(&mut r, &[2, 4, 3], -1.0, 1.0),
                    uniform(&mut r, &[4], 0.5, 1.5),
                    uniform(&mut r, &[4], -0.5, 0.5),
                ];
                check(s, inputs, |v| v[0].layer_norm(1, &v[1], &v[2], 1e-6))
            },
        },
        OpCheck {
            name: "conv2d",
            run: |s| {
                let mut r = rng(s);
                let inputs = vec![
                    uniform(&mut r, &[1, 2, 5, 5], -1.0, 1.0),
                    uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0),
                    uniform(&mut r, &[3], -1.0, 1.0),
                ];
                check(s, inputs, |v| v[0].conv2d(&v[1], Some(&v[2]), Conv2dOptions::default().padding(1).stride(2)))
            },
        },
        OpCheck {
            name: "conv2d_depthwise",
            run: |s| {
                let mut r = rng(s);
                let inputs = vec![
                    uniform(&mut r, &[1, 3, 4, 4], -1.0, 1.0),
                    uniform(&mut r, &[3, 1, 3, 3], -1.0, 1.0),
                    uniform(&mut r, &[3], -1.0, 1.0),
                ];
                check(s, inputs, |v| v[0].conv2d(&v[1], Some(&v[2]), Conv2dOptions::default().padding(1).groups(3)))
            },
        },
        OpCheck {
            name: "conv2d_grouped",
            run: |s| {
                let mut r = rng(s);
                let inputs = vec![
                    uniform(&mut r, &[2, 4, 4, 4], -1.0, 1.0),
                    uniform(&mut r, &[2, 2, 2, 2], -1.0, 1.0),
                ];
                check(s, inputs, |v| v[0].conv2d(&v[1], None, Conv2dOptions::default().stride(2).groups(2)))
            },
        },
        OpCheck {
            name: "max_pool2d",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![distinct_windows(&mut r, &[1, 2, 4, 6], 2)], |v| v[0].max_pool2d(2))
            },
        },
        OpCheck {
            name: "global_avg_pool",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[2, 3, 3, 3], -1.0, 1.0)], |v| v[0].global_avg_pool())
            },
        },
        OpCheck {
            name: "grid_sample_bilinear",
            run: |s| {
                let mut r = rng(s);
                let inputs = vec![uniform(&mut r, &[1, 2, 4, 5], -1.0, 1.0), smooth_grid(&mut r, 1, 3, 3, 4, 5)];
                check(s, inputs, |v| v[0].grid_sample_bilinear(&v[1]))
            },
        },
        OpCheck {
            name: "affine_grid",
            run: |s| {
                let mut r = rng(s);
                check(s, vec![uniform(&mut r, &[2, 2, 3], -1.0, 1.0)], |v| v[0].affine_grid(3, 4))
            },
        },
    ]
}
