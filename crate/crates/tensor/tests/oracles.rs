use emonext_tensor::{Conv2dOptions, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(&v, shape).unwrap()
}

/// Direct sliding-window convolution, written independently of the kernel.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    wt: &[f64],
    [oc, cg, kh, kw]: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let ocg = oc / groups;
    let mut out = vec![0.0; n * oc * oh * ow];
    for b in 0..n {
        for o in 0..oc {
            let g = o / ocg;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = bias.map_or(0.0, |b| b[o]);
                    for ci in 0..cg {
                        let cin = g * cg + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += wt[((o * cg + ci) * kh + ky) * kw + kx]
                                    * x[((b * c + cin) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((b * oc + o) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    out
}

#[test]
fn conv_hand_case_matches_oracle() {
    let data: Vec<f64> = (1..=9).map(f64::from).collect();
    let x = Tensor::<f64>::from_f64(&data, &[1, 1, 3, 3]).unwrap();
    let w = Tensor::<f64>::ones(&[1, 1, 2, 2]);
    let y = x.conv2d(&w, None, Conv2dOptions::default()).unwrap();
    let oracle = conv_oracle(&data, [1, 1, 3, 3], &[1.0; 4], [1, 1, 2, 2], None, 1, 0, 1);
    assert_eq!(oracle, vec![12.0, 16.0, 24.0, 28.0]);
    assert_eq!(y.to_vec(), oracle);
}

#[test]
fn conv_matches_oracle_across_configs() {
    // (n, c, h, w, oc, k, stride, pad, groups)
    let cases = [
        (2, 3, 7, 6, 4, 3, 1, 1, 1),
        (1, 4, 9, 9, 4, 7, 1, 3, 4),
        (2, 6, 8, 8, 4, 2, 2, 0, 2),
        (1, 1, 12, 12, 3, 4, 4, 0, 1),
        (1, 2, 10, 10, 8, 5, 1, 0, 1),
    ];
    for (seed, &(n, c, h, w, oc, k, s, p, g)) in cases.iter().enumerate() {
        let x = random(&[n, c, h, w], seed as u64);
        let wt = random(&[oc, c / g, k, k], 100 + seed as u64);
        let b = random(&[oc], 200 + seed as u64);
        let opts = Conv2dOptions::default().stride(s).padding(p).groups(g);
        let y = x.conv2d(&wt, Some(&b), opts).unwrap();
        let want = conv_oracle(x.data(), [n, c, h, w], wt.data(), [oc, c / g, k, k], Some(b.data()), s, p, g);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "case {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn depthwise_equals_independent_single_channel_convs() {
    let c = 5;
    let x = random(&[1, c, 3, 3], 11);
    let w = random(&[c, 1, 3, 3], 12);
    let opts = Conv2dOptions::default().padding(1);
    let y = x.conv2d(&w, None, opts.groups(c)).unwrap();
    for ch in 0..c {
        let xc = Tensor::from_vec(x.data()[ch * 9..(ch + 1) * 9].to_vec(), &[1, 1, 3, 3]).unwrap();
        let wc = Tensor::from_vec(w.data()[ch * 9..(ch + 1) * 9].to_vec(), &[1, 1, 3, 3]).unwrap();
        let yc = xc.conv2d(&wc, None, opts).unwrap();
        assert_eq!(&y.data()[ch * 9..(ch + 1) * 9], yc.data());
    }
}

/// erf from its Maclaurin series; converges quickly for |z| ≤ 3.
fn erf_series(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = z; // z^(2n+1) (-1)^n / n!
    for n in 0..60 {
        sum += term / (2 * n + 1) as f64;
        term *= -z * z / (n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

#[test]
fn gelu_matches_series_erf_oracle() {
    let xs = [1.0, -0.5, 0.25, 2.0, -2.5];
    let y = Tensor::<f64>::from_f64(&xs, &[5]).unwrap().gelu().unwrap();
    for (&x, &g) in xs.iter().zip(y.data()) {
        let want = x * 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        assert!((g - want).abs() < 1e-14, "gelu({x}) = {g}, oracle {want}");
    }
    // Φ(1)
    assert!((y.data()[0] - 0.841_344_746_068_542_9).abs() < 1e-15);
}

#[test]
fn layer_norm_statistics() {
    let x = random(&[6, 32], 3).mul_scalar(10.0).unwrap();
    let g = Tensor::<f64>::ones(&[32]);
    let b = Tensor::<f64>::zeros(&[32]);
    let y = x.layer_norm(-1, &g, &b, 1e-6).unwrap();
    for row in y.data().chunks(32) {
        let mean: f64 = row.iter().sum::<f64>() / 32.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn forward_and_backward_independent_of_thread_count() {
    let run = || {
        let x = random(&[2, 16, 20, 20], 5).with_requires_grad(true);
        let w = random(&[16, 1, 7, 7], 6).with_requires_grad(true);
        let pw = random(&[32, 16], 7).with_requires_grad(true);
        let y = x
            .conv2d(&w, None, Conv2dOptions::default().padding(3).groups(16))
            .unwrap()
            .permute(&[0, 2, 3, 1])
            .unwrap()
            .linear(&pw, None)
            .unwrap();
        y.square().unwrap().sum().backward().unwrap();
        (y.to_vec(), x.grad().unwrap(), w.grad().unwrap(), pw.grad().unwrap())
    };
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
    assert!(single == multi, "results differ between 1 and 4 worker threads");
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(v in proptest::collection::vec(-1e4f64..1e4, 1..16)) {
        let n = v.len();
        let y = Tensor::<f64>::from_f64(&v, &[1, n]).unwrap().softmax(-1).unwrap();
        let s: f64 = y.data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        prop_assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn sigmoid_is_antisymmetric(x in -30.0f64..30.0) {
        let y = Tensor::<f64>::from_f64(&[x, -x], &[2]).unwrap().sigmoid().unwrap();
        prop_assert!((y.data()[0] + y.data()[1] - 1.0).abs() < 1e-12);
    }
}
