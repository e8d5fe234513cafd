use agri_autograd::gradcheck::{central_difference, relative_error};
use agri_autograd::{array, Array, Conv2dGeometry, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut impl Rng) -> Array {
    let n = shape.iter().product();
    array(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Compare the analytic gradient of `sum(f(x) * w)` with finite differences.
fn check(name: &str, x: Array, f: impl Fn(&Var) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let probe_shape = f(&Var::constant(x.clone())).shape().to_vec();
    let w = Var::constant(random(&probe_shape, &mut rng));
    let leaf = Var::leaf(x.clone());
    let analytic = leaf_grad(&leaf, &f(&leaf).mul(&w).sum_all());
    let numeric = central_difference(|v| f(&Var::constant(v.clone())).mul(&w).sum_all().item(), &x, 1e-6);
    let err = relative_error(&analytic, &numeric, 1e-8);
    assert!(err < 1e-6, "{name}: relative error {err}");
}

fn leaf_grad(leaf: &Var, out: &Var) -> Array {
    out.backward().get_or_zeros(leaf)
}

#[test]
fn elementwise_and_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let other = Var::constant(random(&[1, 4], &mut rng).mapv(|v| v + 2.0));
    check("mul-broadcast", random(&[3, 4], &mut rng), |x| x.mul(&other));
    check("div-broadcast", random(&[3, 4], &mut rng), |x| x.div(&other));
    check("div-denominator", random(&[1, 4], &mut rng).mapv(|v| v + 3.0), |x| other.div(x));
    check("exp", random(&[5], &mut rng), |x| x.exp());
    check("ln", random(&[5], &mut rng).mapv(|v| v + 2.0), |x| x.ln());
    check("sqrt", random(&[5], &mut rng).mapv(|v| v + 2.0), |x| x.sqrt());
    check("powf", random(&[5], &mut rng).mapv(|v| v.abs() + 0.1), |x| x.powf(2.5));
    check("gelu", random(&[6], &mut rng), |x| x.gelu());
    check("tanh", random(&[6], &mut rng), |x| x.tanh());
    check("sum_axes", random(&[2, 3, 4], &mut rng), |x| x.sum_axes(&[0, 2], false));
    check("mean_axes_keep", random(&[2, 3, 4], &mut rng), |x| x.mean_axes(&[1], true));
    check("permute", random(&[2, 3, 4], &mut rng), |x| x.permute(&[2, 0, 1]));
    check("narrow", random(&[2, 5], &mut rng), |x| x.narrow(1, 1, 3));
    check("roll", random(&[2, 5], &mut rng), |x| x.roll(1, 2));
    check("index_select", random(&[4, 3], &mut rng), |x| x.index_select(&[3, 0, 3]));
    check("gather_cols", random(&[3, 4], &mut rng), |x| x.gather_cols(&[1, 3, 0]));
    check("broadcast_to", random(&[1, 3], &mut rng), |x| x.broadcast_to(&[4, 3]));
    check("cat", random(&[2, 3], &mut rng), |x| Var::cat(&[x.clone(), x.scale(2.0)], 1));
}

#[test]
fn linear_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = Var::constant(random(&[4, 5], &mut rng));
    check("matmul-lhs", random(&[3, 4], &mut rng), |x| x.matmul(&b));
    let a = Var::constant(random(&[3, 4], &mut rng));
    check("matmul-rhs", random(&[4, 5], &mut rng), |x| a.matmul(x));
    let bb = Var::constant(random(&[2, 4, 3], &mut rng));
    check("bmm", random(&[2, 3, 4], &mut rng), |x| x.bmm(&bb));
}

#[test]
fn spatial_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = Var::constant(random(&[4, 3, 3, 3], &mut rng));
    for stride in [1, 2] {
        check("conv-input", random(&[2, 3, 5, 6], &mut rng), |x| {
            x.conv2d(&w, Conv2dGeometry { stride, padding: 1 })
        });
    }
    let x = Var::constant(random(&[2, 3, 5, 6], &mut rng));
    check("conv-weight", random(&[4, 3, 3, 3], &mut rng), |wt| {
        x.conv2d(wt, Conv2dGeometry { stride: 2, padding: 1 })
    });
    let w1 = Var::constant(random(&[2, 3, 1, 1], &mut rng));
    check("conv-pointwise", random(&[2, 3, 4, 4], &mut rng), |x| {
        x.conv2d(&w1, Conv2dGeometry { stride: 1, padding: 0 })
    });
    check("upsample", random(&[1, 2, 3, 2], &mut rng), |x| x.upsample_nearest(2));
    // distinct values so the argmax is stable under the probe step
    let distinct = array(&[1, 1, 4, 4], (0..16).map(|i| (i * 7 % 16) as f64 * 0.1).collect());
    check("max_pool", distinct, |x| x.max_pool2d(3, 2, 1));
}

#[test]
fn normalisation_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check("softmax", random(&[3, 5], &mut rng), |x| x.softmax_last());
    check("log_softmax", random(&[3, 5], &mut rng), |x| x.log_softmax_last());
    check("l2_normalize", random(&[3, 5], &mut rng), |x| x.l2_normalize_last(1e-12));
    check("layer_norm", random(&[3, 5], &mut rng), |x| x.layer_norm_last(1e-5));
    let gamma = Var::constant(random(&[3], &mut rng));
    let beta = Var::constant(random(&[3], &mut rng));
    check("batch_norm-x", random(&[4, 3, 2, 2], &mut rng), |x| x.batch_norm_train(&gamma, &beta, 1e-5).0);
    let x = Var::constant(random(&[4, 3, 2, 2], &mut rng));
    check("batch_norm-gamma", random(&[3], &mut rng), |g| x.batch_norm_train(g, &beta, 1e-5).0);
}
