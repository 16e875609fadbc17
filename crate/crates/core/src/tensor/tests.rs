use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

/// Uniform values in [0.2, 1.0] with random sign: away from the relu kink.
fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Direct nested-loop same-padded cross-correlation.
fn conv2d_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let p = (k / 2) as i64;
    let mut out = vec![0.0; n * co * h * wd];
    for bn in 0..n {
        for o in 0..co {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for u in 0..k {
                            for v in 0..k {
                                let (ii, jj) = (i as i64 + u as i64 - p, j as i64 + v as i64 - p);
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                    acc += w.data()[((o * ci + c) * k + u) * k + v]
                                        * x.data()[((bn * ci + c) * h + ii as usize) * wd + jj as usize];
                                }
                            }
                        }
                    }
                    out[((bn * co + o) * h + i) * wd + j] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_identity_and_zero() {
    let x = rand_t(&[2, 3, 4, 5], 1);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut eye = Tensor::zeros([3, 3, 1, 1]);
    for c in 0..3 {
        eye.data_mut()[c * 3 + c] = 1.0;
    }
    let w = g.constant(eye);
    let b = g.constant(Tensor::zeros([3]));
    let y = g.conv2d(xv, w, b).unwrap();
    assert_eq!(g.value(y), &x);

    let w0 = g.constant(Tensor::zeros([2, 3, 3, 3]));
    let b0 = g.constant(Tensor::zeros([2]));
    let y0 = g.conv2d(xv, w0, b0).unwrap();
    assert!(g.value(y0).data().iter().all(|v| *v == 0.0));
    assert_eq!(g.shape(y0), [2, 2, 4, 5]);
}

#[test]
fn conv2d_ramp_matches_loop_oracle() {
    let ramp: Vec<f64> = (0..16).map(f64::from).collect();
    let x = t(&[1, 1, 4, 4], &ramp);
    let w = Tensor::full([1, 1, 3, 3], 1.0);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(Tensor::zeros([1])));
    let y = g.conv2d(xv, wv, bv).unwrap();
    let expected = conv2d_oracle(&x, &w, &[0.0]);
    assert_eq!(g.value(y).data(), expected.as_slice());
    // corner 0+1+4+5, interior 0+1+2+4+5+6+8+9+10
    assert_eq!(expected[0], 10.0);
    assert_eq!(expected[5], 45.0);
    assert_eq!(
        expected,
        vec![10.0, 18.0, 24.0, 18.0, 27.0, 45.0, 54.0, 39.0, 51.0, 81.0, 90.0, 63.0, 42.0, 66.0, 72.0, 50.0]
    );
}

#[test]
fn conv2d_random_matches_loop_oracle() {
    let x = rand_t(&[2, 3, 5, 4], 7);
    let w = rand_t(&[4, 3, 3, 3], 8);
    let b = [0.1, -0.2, 0.3, 0.0];
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(t(&[4], &b)));
    let y = g.conv2d(xv, wv, bv).unwrap();
    let expected = conv2d_oracle(&x, &w, &b);
    for (a, e) in g.value(y).data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn conv2d_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros([1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros([1, 2, 2, 2]));
    let b = g.constant(Tensor::zeros([1]));
    assert_eq!(g.conv2d(x, w, b), Err(TensorError::UnsupportedKernel(2)));
    let w = g.constant(Tensor::zeros([1, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, w, b), Err(TensorError::Shape { .. })));
}

#[test]
fn tconv_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
    let shift = g.constant(t(&[1, 3], &[1.0, 0.0, 0.0]));
    let y = g.tconv1d_dw(x, shift).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 1.0, 2.0]);

    let xr = rand_t(&[2, 3, 5], 3);
    let xv = g.constant(xr.clone());
    let delta = g.constant(t(&[3, 3], &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]));
    let y = g.tconv1d_dw(xv, delta).unwrap();
    assert_eq!(g.value(y), &xr);

    // a single frame only sees the center tap
    let x1 = g.constant(t(&[1, 2, 1], &[2.0, -3.0]));
    let w = g.constant(t(&[2, 3], &[5.0, 0.5, 7.0, 9.0, 2.0, 11.0]));
    let y = g.tconv1d_dw(x1, w).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, -6.0]);
}

#[test]
fn tconv_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros([1, 2, 1]));
    let w = g.constant(Tensor::zeros([2, 5]));
    assert_eq!(g.tconv1d_dw(x, w), Err(TensorError::KernelTooLong { kernel: 5, frames: 1 }));
    let w = g.constant(Tensor::zeros([2, 2]));
    assert_eq!(g.tconv1d_dw(x, w), Err(TensorError::UnsupportedKernel(2)));
}

#[test]
fn batchnorm_examples() {
    let mut g = Graph::new();
    let eps = 1e-5;
    let ones = g.constant(Tensor::full([1], 1.0));
    let zeros = g.constant(Tensor::zeros([1]));

    let c = g.constant(Tensor::full([2, 1, 2, 2], 3.5));
    let (y, stats) = g.batchnorm2d(c, ones, zeros, BnMode::Train, eps).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    assert_eq!(stats.unwrap().mean, vec![3.5]);

    // {1, 3}: mean 2, biased var 1
    let two = g.constant(t(&[2, 1, 1, 1], &[1.0, 3.0]));
    let (y, stats) = g.batchnorm2d(two, ones, zeros, BnMode::Train, eps).unwrap();
    let k = 1.0 / (1.0f64 + eps).sqrt();
    assert!((g.value(y).data()[0] + k).abs() < 1e-15);
    assert!((g.value(y).data()[1] - k).abs() < 1e-15);
    let stats = stats.unwrap();
    assert_eq!(stats.var, vec![2.0]);
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    stats.update_running(&mut rm, &mut rv, 0.1);
    assert!((rm[0] - 0.2).abs() < 1e-15 && (rv[0] - 1.1).abs() < 1e-15);

    let x = rand_t(&[2, 1, 3, 3], 5);
    let xv = g.constant(x.clone());
    let (y, stats) = g
        .batchnorm2d(xv, ones, zeros, BnMode::Eval { mean: &[0.0], var: &[1.0] }, 0.0)
        .unwrap();
    assert!(stats.is_none());
    assert_eq!(g.value(y), &x);

    let single = g.constant(Tensor::zeros([1, 1, 1, 1]));
    assert_eq!(
        g.batchnorm2d(single, ones, zeros, BnMode::Train, eps).unwrap_err(),
        TensorError::DegenerateBatch
    );
}

#[test]
fn backward_basics() {
    let mut g = Graph::new();
    let x = g.param(rand_t(&[2, 3], 1));
    let s = g.sum_all(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    // second call accumulates
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0; 6]);
    g.zero_grad();
    assert!(g.grad(x).is_none());

    let mut g = Graph::new();
    let a = g.param(Tensor::scalar(3.0));
    let b = g.param(Tensor::scalar(-2.0));
    let c = g.constant(Tensor::scalar(5.0));
    let ab = g.mul(a, b).unwrap();
    let l = g.mul(ab, c).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[-10.0]);
    assert_eq!(g.grad(b).unwrap(), &[15.0]);
    assert!(g.grad(c).is_none());

    let v = g.param(Tensor::zeros([2]));
    assert_eq!(g.backward(v), Err(TensorError::NonScalarLoss(vec![2])));
}

#[test]
fn softmax_and_l2_normalize_invariants() {
    let mut g = Graph::new();
    let x = g.constant(rand_t(&[3, 4, 5], 9));
    for axis in 0..3 {
        let s = g.softmax(x, axis).unwrap();
        let sums = g.mean(s, axis).unwrap();
        let dim = g.shape(x)[axis] as f64;
        assert!(g.value(sums).data().iter().all(|m| (m * dim - 1.0).abs() < 1e-9));

        let n = g.l2_normalize(x, axis).unwrap();
        let sq = g.mul(n, n).unwrap();
        let ms = g.mean(sq, axis).unwrap();
        assert!(g.value(ms).data().iter().all(|m| ((m * dim).sqrt() - 1.0).abs() < 1e-9));
    }
}

#[test]
fn permute_and_concat_layouts() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
    let xt = g.transpose(x).unwrap();
    assert_eq!(g.value(xt).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    let c0 = g.concat(&[x, x], 0).unwrap();
    assert_eq!(g.shape(c0), [4, 3]);
    let c1 = g.concat(&[x, x], 1).unwrap();
    assert_eq!(g.value(c1).data(), &[0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 3.0, 4.0, 5.0]);
    let s = g.slice(c1, 1, 2, 4).unwrap();
    assert_eq!(g.value(s).data(), &[2.0, 0.0, 5.0, 3.0]);
    let cube = g.constant(Tensor::new([2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
    let p = g.permute(cube, &[2, 0, 1]).unwrap();
    assert_eq!(g.shape(p), [4, 2, 3]);
    // out[k, i, j] = in[i, j, k]
    assert_eq!(g.value(p).data()[1 * 6 + 1 * 3 + 2], 1.0 * 12.0 + 2.0 * 4.0 + 1.0);
}

#[test]
fn tape_replay_is_deterministic() {
    let x = rand_t(&[3, 4], 2);
    let w = rand_t(&[4, 4], 3);
    let run = || {
        let mut g = Graph::new();
        let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
        let h = g.matmul(xv, wv).unwrap();
        let h = g.gelu(h);
        let h = g.softmax(h, 1).unwrap();
        let l = g.sum_all(h);
        let before = g.value(h).clone();
        g.backward(l).unwrap();
        g.zero_grad();
        (before, g.value(l).item())
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la.to_bits(), lb.to_bits());
}

fn check(name: &str, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>, inputs: &[Tensor<f64>], tol: f64) {
    let cfg = GradcheckConfig {
        tol,
        ..Default::default()
    };
    let r = gradcheck(f, inputs, &cfg).unwrap();
    assert!(r.pass, "{name}: max rel err {} at {:?}", r.max_rel_err, r.worst);
}

#[test]
fn gradcheck_linear_family() {
    check("matmul", |g, v| g.matmul(v[0], v[1]), &[rand_t(&[3, 4], 1), rand_t(&[4, 2], 2)], 1e-6);
    check(
        "linear",
        |g, v| g.linear(v[0], v[1], v[2]),
        &[rand_t(&[3, 4], 3), rand_t(&[4, 5], 4), rand_t(&[5], 5)],
        1e-6,
    );
    check("add", |g, v| g.add(v[0], v[1]), &[rand_t(&[2, 3, 4], 1), rand_t(&[3, 4], 2)], 1e-6);
    check("mul", |g, v| g.mul(v[0], v[1]), &[rand_t(&[2, 3, 4], 1), rand_t(&[4], 2)], 1e-6);
    check("concat", |g, v| g.concat(&[v[0], v[1]], 1), &[rand_t(&[2, 3], 1), rand_t(&[2, 2], 2)], 1e-6);
    check("slice", |g, v| g.slice(v[0], 1, 1, 3), &[rand_t(&[2, 4, 2], 1)], 1e-6);
    check("mean", |g, v| g.mean(v[0], 1), &[rand_t(&[2, 4, 3], 1)], 1e-6);
    check("permute", |g, v| g.permute(v[0], &[2, 0, 1]), &[rand_t(&[2, 3, 4], 1)], 1e-6);
}

#[test]
fn gradcheck_nonlinear_primitives() {
    check("relu", |g, v| Ok(g.relu(v[0])), &[rand_t(&[3, 5], 1)], 1e-4);
    let mut with_zero = rand_t(&[2, 4], 2);
    with_zero.data_mut()[0] = 0.0;
    check("gelu", |g, v| Ok(g.gelu(v[0])), &[with_zero], 1e-4);
    check("softmax", |g, v| g.softmax(v[0], 1), &[rand_t(&[3, 4], 3)], 1e-4);
    check("softmax0", |g, v| g.softmax(v[0], 0), &[rand_t(&[3, 4], 3)], 1e-4);
    check("log_softmax", |g, v| g.log_softmax(v[0], 1), &[rand_t(&[3, 4], 4)], 1e-4);
    check(
        "layernorm",
        |g, v| g.layernorm(v[0], v[1], v[2], 1e-5),
        &[rand_t(&[3, 6], 5), rand_t(&[6], 6), rand_t(&[6], 7)],
        1e-4,
    );
    check("l2_normalize", |g, v| g.l2_normalize(v[0], 1), &[rand_t(&[3, 5], 8)], 1e-4);
}

#[test]
fn gradcheck_structured_primitives() {
    check(
        "conv2d",
        |g, v| g.conv2d(v[0], v[1], v[2]),
        &[rand_t(&[2, 2, 3, 3], 1), rand_t(&[3, 2, 3, 3], 2), rand_t(&[3], 3)],
        1e-4,
    );
    check(
        "tconv1d_dw",
        |g, v| g.tconv1d_dw(v[0], v[1]),
        &[rand_t(&[2, 3, 4], 4), rand_t(&[3, 3], 5)],
        1e-4,
    );
    check(
        "batchnorm2d train",
        |g, v| Ok(g.batchnorm2d(v[0], v[1], v[2], BnMode::Train, 1e-5)?.0),
        &[rand_t(&[2, 3, 2, 2], 6), rand_t(&[3], 7), rand_t(&[3], 8)],
        1e-4,
    );
    check(
        "batchnorm2d eval",
        |g, v| {
            Ok(g.batchnorm2d(v[0], v[1], v[2], BnMode::Eval { mean: &[0.1, -0.2], var: &[0.5, 2.0] }, 1e-5)?.0)
        },
        &[rand_t(&[2, 2, 2, 3], 6), rand_t(&[2], 7), rand_t(&[2], 8)],
        1e-4,
    );
}

#[test]
fn gradcheck_reports_instability() {
    let err = gradcheck(
        |g, v| {
            let s = g.scale(v[0], f64::MAX);
            Ok(g.scale(s, 10.0))
        },
        &[rand_t(&[2], 1)],
        &GradcheckConfig::default(),
    )
    .unwrap_err();
    assert_eq!(err, TensorError::Instability { op: "scale".into() });
}

#[test]
fn gradcheck_subsamples_large_inputs() {
    let cfg = GradcheckConfig {
        max_coords: 50,
        ..Default::default()
    };
    let r = gradcheck(|g, v| Ok(g.sum_all(v[0])), &[rand_t(&[20, 20], 1)], &cfg).unwrap();
    assert_eq!(r.checked, 50);
    assert!(r.pass);
}

#[test]
fn f32_graph_runs() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::from_f64([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.softmax(x, 1).unwrap();
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|v| v.abs() < 1e-6));
}
