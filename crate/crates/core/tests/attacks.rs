//! Attack-level behavioral tests backed by independent oracles: brute-force
//! projections, hand-computed FGSM steps, and saturation/equivalence
//! identities on linear models.

use redlab_core::attack::{
    attack_batch, project_lp, single_attack, square, zoo_attack, AttackMethod, AttackSpec, LpNorm,
    QueryOracle,
};
use redlab_core::diffnet::{instantiate, ActKind, LayerSpec};
use redlab_core::rng::stream_rng;
use redlab_core::tensor::{Real, Tensor};
use redlab_core::victim::{argmax, ArchFamily, ModelAttributes};
use rand::Rng;

fn attrs() -> ModelAttributes {
    ModelAttributes {
        at: ArchFamily::Resnet9,
        ks: 3,
        af: ActKind::Relu,
        ws: 0.0,
        robust: false,
    }
}

/// A deterministic linear classifier on [C,H,W] inputs: flatten + dense with
/// hand-set weights so gradients and decision boundaries are known exactly.
fn linear_net(
    shape: [usize; 3],
    classes: usize,
    weight: impl Fn(usize, usize) -> Real,
) -> redlab_core::diffnet::Network<Real> {
    let dim = shape[0] * shape[1] * shape[2];
    let mut net = instantiate(
        &[
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_dim: dim,
                out_dim: classes,
            },
        ],
        &shape,
        0,
    )
    .unwrap();
    let w = net.layers[1].params[0].data_mut();
    for o in 0..classes {
        for i in 0..dim {
            w[o * dim + i] = weight(o, i);
        }
    }
    for b in net.layers[1].params[1].data_mut() {
        *b = 0.0;
    }
    net
}

// brute-force oracle: the projection of v onto the eps-ball is the feasible
// point closest to v; no random feasible candidate may beat it
#[test]
fn projection_beats_random_feasible_points() {
    let mut rng = stream_rng(42, 0);
    for norm in [LpNorm::Linf, LpNorm::L2] {
        for trial in 0..200 {
            let eps = 0.5;
            let v: Tensor<f64> = Tensor::new(vec![3], (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let p = project_lp(&v, norm, eps);
            let dist = p.sub(&v).norm_l2();
            for _ in 0..50 {
                let cand: Tensor<f64> =
                    Tensor::new(vec![3], (0..3).map(|_| rng.gen_range(-eps..eps)).collect());
                let cand = project_lp(&cand, norm, eps);
                assert!(
                    cand.sub(&v).norm_l2() >= dist - 1e-3,
                    "trial {trial}: random feasible point beat the projection"
                );
            }
            // idempotence
            let pp = project_lp(&p, norm, eps);
            assert!(pp.sub(&p).norm_linf() < 1e-12);
        }
    }
}

// hand case: linear logits z = W x, CE gradient at a 2-class problem has a
// known sign pattern, so FGSM moves each pixel by exactly +-eps
#[test]
fn fgsm_matches_hand_computation() {
    // class-0 weight row +1 everywhere, class-1 row -1: picking y=0 means
    // d(CE)/dx = (p1 - p0) * (w0 - w1) direction; gradient of CE wrt x is
    // negative along w0, so FGSM (ascending CE) subtracts eps everywhere.
    let net = linear_net([1, 2, 2], 2, |o, _| if o == 0 { 1.0 } else { -1.0 });
    let x = Tensor::full(vec![1, 2, 2], 0.5);
    let eps = 8.0 / 255.0;
    let out = redlab_core::attack::fgsm(&net, &x, 0, eps).unwrap();
    for &v in out.x_adv.sub(&x).data() {
        assert!((v - (-eps as Real)).abs() < 1e-6, "pixel moved by {v}");
    }
    // attacking the other class moves the opposite way
    let out = redlab_core::attack::fgsm(&net, &x, 1, eps).unwrap();
    for &v in out.x_adv.sub(&x).data() {
        assert!((v - eps as Real).abs() < 1e-6);
    }
}

// on a linear model the CE gradient direction never changes, so PGD with
// enough steps saturates every coordinate at the l-inf boundary
#[test]
fn pgd_saturates_linear_model() {
    let net = linear_net([1, 2, 2], 2, |o, i| {
        let s = if o == 0 { 1.0 } else { -1.0 };
        s * (1.0 + i as Real)
    });
    let x = Tensor::full(vec![1, 2, 2], 0.5);
    let eps = 8.0 / 255.0;
    let mut spec = AttackSpec::defaults(AttackMethod::PgdLinf, eps, 3);
    spec.random_init = false;
    spec.steps = 20;
    spec.alpha = eps / 4.0;
    let out = redlab_core::attack::pgd(&net, &x, 0, &spec, 11).unwrap();
    let delta = out.x_adv.sub(&x);
    assert!((delta.norm_linf() as f64 - eps).abs() < 1e-6);
    for &v in delta.data() {
        assert!((v.abs() as f64 - eps).abs() < 1e-6, "unsaturated pixel {v}");
    }
}

// single-step PGD without random init and alpha = eps is exactly FGSM
#[test]
fn pgd_one_step_equals_fgsm() {
    let net = linear_net([1, 3, 3], 3, |o, i| ((o * 7 + i * 3) % 5) as Real / 5.0 - 0.4);
    let x: Tensor<Real> = Tensor::new(vec![1, 3, 3], (0..9).map(|i| 0.1 + 0.08 * i as Real).collect());
    let eps = 4.0 / 255.0;
    let mut spec = AttackSpec::defaults(AttackMethod::PgdLinf, eps, 5);
    spec.random_init = false;
    spec.steps = 1;
    spec.alpha = eps;
    let a = redlab_core::attack::pgd(&net, &x, 1, &spec, 0).unwrap();
    let b = redlab_core::attack::fgsm(&net, &x, 1, eps).unwrap();
    assert!(a.x_adv.sub(&b.x_adv).norm_linf() < 1e-7);
}

#[test]
fn cw_on_misclassified_input_returns_zero_delta() {
    let net = linear_net([1, 2, 2], 2, |o, _| if o == 0 { 1.0 } else { -1.0 });
    let x = Tensor::full(vec![1, 2, 2], 0.5);
    // true label 1 but the model already predicts 0: best delta is 0
    let spec = AttackSpec::defaults(AttackMethod::CwL2, 0.0, 0);
    let out = redlab_core::attack::cw(&net, &x, 1, &spec).unwrap();
    assert!(out.success);
    assert!(out.x_adv.sub(&x).norm_l2() < 1e-9);
}

#[test]
fn cw_finds_small_perturbation_on_linear_model() {
    // mixed-sign weights: clean margin 0.125, worst-case swing 0.425, so a
    // boundary crossing exists inside the [0,1] box
    let w0 = [0.05, 0.3, -0.3, 0.2];
    let net = linear_net([1, 2, 2], 2, move |o, i| if o == 0 { w0[i] } else { 0.0 });
    let x = Tensor::full(vec![1, 2, 2], 0.5);
    let mut spec = AttackSpec::defaults(AttackMethod::CwL2, 0.0, 0);
    spec.c = 10.0;
    spec.steps = 300;
    spec.lr = 0.01;
    let out = redlab_core::attack::cw(&net, &x, 0, &spec).unwrap();
    assert!(out.success, "CW failed to cross a linear boundary");
    let flipped = argmax(&net.predict(&out.x_adv.clone().reshape(vec![1, 1, 2, 2])).unwrap().into_data());
    assert_ne!(flipped, 0);
}

#[test]
fn square_respects_budget_and_ball() {
    let net = linear_net([1, 4, 4], 2, |o, i| if o == 0 { 0.3 } else { -0.3 + 0.01 * i as Real });
    let x = Tensor::full(vec![1, 4, 4], 0.5);
    for method in [AttackMethod::SquareLinf, AttackMethod::SquareL2] {
        let eps = if method.is_linf() { 8.0 / 255.0 } else { 0.5 };
        let mut spec = AttackSpec::defaults(method, eps, 5);
        spec.max_queries = 200;
        let oracle = QueryOracle::new(&net);
        let out = square(&oracle, &x, 0, &spec, 17).unwrap();
        assert!(out.queries <= spec.max_queries + 1);
        let delta = out.x_adv.sub(&x);
        if method.is_linf() {
            assert!(delta.norm_linf() as f64 <= eps + 1e-5);
        } else {
            assert!(delta.norm_l2() as f64 <= eps + 1e-4);
        }
        // the margin of the accepted iterate never exceeds the clean margin
        let clean: Vec<Real> = net.predict(&x.clone().reshape(vec![1, 1, 4, 4])).unwrap().into_data();
        let adv: Vec<Real> = net
            .predict(&out.x_adv.clone().reshape(vec![1, 1, 4, 4]))
            .unwrap()
            .into_data();
        let m = |z: &[Real]| z[0] - z[1];
        assert!(m(&adv) <= m(&clean) + 1e-5, "acceptance was not monotone");
    }
}

#[test]
fn zoo_attacks_fool_a_weak_linear_model() {
    // alternating weights cancel at x = 0.5, leaving margin 0.025 against an
    // eps * sum|w| swing of ~0.25: a couple of sign steps suffice
    let w0: [Real; 9] = [0.05, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5];
    let net = linear_net([1, 3, 3], 2, move |o, i| if o == 0 { w0[i] } else { 0.0 });
    let x = Tensor::full(vec![1, 3, 3], 0.5);
    for method in [AttackMethod::Nes, AttackMethod::ZoSignsgd] {
        let mut spec = AttackSpec::defaults(method, 16.0 / 255.0, 9);
        spec.max_iters = 100;
        spec.lr = 0.01;
        let oracle = QueryOracle::new(&net);
        let out = zoo_attack(&oracle, &x, 0, &spec, 23).unwrap();
        assert!(out.success, "{} failed on a weak linear model", method.name());
        assert!(out.x_adv.sub(&x).norm_linf() as f64 <= spec.eps + 1e-5);
        // pinned query accounting
        let expected = if method == AttackMethod::Nes {
            // success probes are uncounted: exactly 2q per estimate
            2 * spec.q * out.steps
        } else {
            // q+1 per estimate plus the counted base query that detected
            // success on the final visit
            (spec.q + 1) * out.steps + 1
        };
        assert_eq!(out.queries, expected, "{} query accounting", method.name());
    }
}

#[test]
fn batch_results_do_not_depend_on_thread_count() {
    let net = linear_net([1, 4, 4], 3, |o, i| ((o * 13 + i * 7) % 11) as Real / 11.0 - 0.5);
    let images: Vec<Tensor<Real>> = (0..6)
        .map(|k| Tensor::full(vec![1, 4, 4], 0.1 + 0.12 * k as Real))
        .collect();
    let labels = vec![0, 1, 2, 0, 1, 2];
    let spec = AttackSpec::defaults(AttackMethod::PgdLinf, 8.0 / 255.0, 77);

    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| attack_batch(&net, &images, &labels, attrs(), &spec).unwrap())
    };
    let serial = run(1);
    let parallel = run(4);
    assert_eq!(serial.len(), parallel.len());
    for (a, b) in serial.iter().zip(parallel.iter()) {
        assert_eq!(a.x_adv.data(), b.x_adv.data());
        assert_eq!(a.success, b.success);
    }
}

#[test]
fn single_attack_dispatches_every_method() {
    let net = linear_net([1, 4, 4], 3, |o, i| ((o + i) % 3) as Real * 0.2 - 0.2);
    let x = Tensor::full(vec![1, 4, 4], 0.5);
    for method in AttackMethod::ALL {
        let eps = if method.is_linf() { 8.0 / 255.0 } else { 0.5 };
        let mut spec = AttackSpec::defaults(method, eps, 5);
        spec.max_queries = 60;
        spec.max_iters = 5;
        spec.steps = spec.steps.min(10);
        let out = single_attack(&net, &x, 0, &spec, 31).unwrap();
        assert!(out.x_adv.all_finite());
        for &v in out.x_adv.data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
