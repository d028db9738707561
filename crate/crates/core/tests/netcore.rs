use peftlab_core::netcore::{self, Activation, DenseNet, LossKind, Sample, GELU_LIPSCHITZ};
use peftlab_core::numerics::{finite_diff_gradient, relative_error};
use peftlab_core::rng::{self, Rng};
use proptest::prelude::*;

const ACTS: [Activation; 4] = [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::GeluApprox];

fn smooth_instance(r: &mut Rng, loss: LossKind) -> (DenseNet, Vec<Sample>) {
    let depth = rng::uniform_usize(r, 1, 3);
    let mut widths = vec![rng::uniform_usize(r, 1, 5)];
    for _ in 0..depth {
        widths.push(rng::uniform_usize(r, 1, 5));
    }
    let mut acts: Vec<Activation> = (1..depth).map(|i| if i % 2 == 0 { Activation::Tanh } else { Activation::GeluApprox }).collect();
    acts.push(Activation::Identity);
    let bias = rng::uniform(r, 0.0, 1.0) < 0.5;
    let net = DenseNet::random(&widths, &acts, bias, r).unwrap();
    let out = *widths.last().unwrap();
    let batch = (0..4)
        .map(|_| {
            let x = rng::gaussian_vec(r, widths[0]);
            let y = match loss {
                LossKind::SquaredError => rng::gaussian_vec(r, out),
                LossKind::SoftmaxCrossEntropy => netcore::softmax(&rng::gaussian_vec(r, out)),
            };
            Sample::new(x, y)
        })
        .collect();
    (net, batch)
}

#[test]
fn activation_lipschitz_on_random_pairs() {
    let mut r = rng::from_seed(1);
    for act in ACTS {
        let l = act.lipschitz_constant();
        for _ in 0..100_000 {
            let u = rng::uniform(&mut r, -8.0, 8.0);
            let v = rng::uniform(&mut r, -8.0, 8.0);
            assert!((act.apply(u) - act.apply(v)).abs() <= l * (u - v).abs() + 1e-15);
        }
    }
    assert!(GELU_LIPSCHITZ > 1.0);
}

#[test]
fn gradients_match_finite_differences_on_200_instances() {
    let mut r = rng::from_seed(200);
    for t in 0..200 {
        let loss = if t % 2 == 0 { LossKind::SquaredError } else { LossKind::SoftmaxCrossEntropy };
        let (net, batch) = smooth_instance(&mut r, loss);
        let theta = net.params();
        let g = netcore::gradient(&net, loss, &batch).unwrap();
        let fd = finite_diff_gradient(|th| netcore::loss(&net.with_params(th).unwrap(), loss, &batch).unwrap(), &theta, 1e-5).unwrap();
        let err = relative_error(&g, &fd);
        assert!(err < 1e-5, "trial {t}: {err}");
    }
}

#[test]
fn hessians_symmetric_and_match_gradient_differences() {
    let mut r = rng::from_seed(300);
    for t in 0..40 {
        let loss = if t % 2 == 0 { LossKind::SquaredError } else { LossKind::SoftmaxCrossEntropy };
        let (net, batch) = smooth_instance(&mut r, loss);
        let h = netcore::hessian_matrix(&net, loss, &batch).unwrap();
        assert!(h.symmetry_error() <= 1e-9 * h.frobenius_norm().max(1.0));
        let theta = net.params();
        let d = theta.len();
        let step = 1e-5;
        let mut fd = Vec::with_capacity(d * d);
        for j in 0..d {
            let mut p = theta.clone();
            p[j] += step;
            let gp = netcore::gradient(&net.with_params(&p).unwrap(), loss, &batch).unwrap();
            p[j] -= 2.0 * step;
            let gm = netcore::gradient(&net.with_params(&p).unwrap(), loss, &batch).unwrap();
            fd.extend(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * step)));
        }
        // fd is column-major; the Hessian is symmetric so compare directly.
        let err = relative_error(h.as_slice(), &fd);
        assert!(err < 1e-5, "trial {t}: {err}");
    }
}

proptest! {
    #[test]
    fn flatten_round_trips(seed in any::<u64>(), w0 in 1usize..6, w1 in 1usize..6, w2 in 1usize..6, bias in any::<bool>()) {
        let mut r = rng::from_seed(seed);
        let net = DenseNet::random(&[w0, w1, w2], &[Activation::Relu, Activation::Tanh], bias, &mut r).unwrap();
        let theta = net.params();
        let expected = w0 * w1 + w1 * w2 + if bias { w1 + w2 } else { 0 };
        prop_assert_eq!(theta.len(), expected);
        prop_assert_eq!(net.param_count(), expected);
        let back = net.with_params(&theta).unwrap();
        prop_assert_eq!(&back, &net);
    }

    #[test]
    fn squared_error_nonnegative(pred in proptest::collection::vec(-5.0f64..5.0, 1..6), seed in any::<u64>()) {
        let mut r = rng::from_seed(seed);
        let target = rng::gaussian_vec(&mut r, pred.len());
        prop_assert!(LossKind::SquaredError.value(&pred, &target) >= 0.0);
        prop_assert_eq!(LossKind::SquaredError.value(&pred, &pred), 0.0);
    }

    #[test]
    fn cross_entropy_nonnegative_on_one_hot(logits in proptest::collection::vec(-5.0f64..5.0, 2..6), class in 0usize..2) {
        let mut y = vec![0.0; logits.len()];
        y[class] = 1.0;
        prop_assert!(LossKind::SoftmaxCrossEntropy.value(&logits, &y) >= 0.0);
    }
}

#[test]
fn forward_examples() {
    use peftlab_core::numerics::Matrix;
    use peftlab_core::Layer;
    let id = DenseNet::new(vec![Layer::new(Matrix::identity(2), None, Activation::Identity).unwrap()]).unwrap();
    assert_eq!(id.forward(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
    let relu = DenseNet::new(vec![Layer::new(Matrix::identity(2).scale(2.0), None, Activation::Relu).unwrap()]).unwrap();
    assert_eq!(relu.forward(&[1.0, -1.0]).unwrap(), vec![2.0, 0.0]);
    assert!(relu.forward(&[1.0]).is_err());
}
