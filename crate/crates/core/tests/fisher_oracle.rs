mod common;

use std::sync::Arc;

use common::*;
use ewc_core::continual::{
    fisher_values, sample_score, AnchorParams, FisherDiagonal, FisherMode, FisherProvenance,
    LogProbModel, RegularizerConfig,
};
use ewc_core::synthtasks::LabeledPatch;
use ewc_core::{ewc_penalty, estimate_fisher, total_loss, Graph, NetworkSpec, NodeId, ParamStore, SegNet, Tensor};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn estimate_matches_brute_force_in_both_modes() {
    let started = std::time::Instant::now();
    let worst = fisher_oracle_worst();
    assert!(worst < 1e-12, "relative error {worst:e}");
    for seed in 0..2 {
        let net = small_net(seed);
        let data = dataset(100 + seed, 32, 7, 4, net.spec().margin());
        for mode in [FisherMode::Empirical, FisherMode::Sampled] {
            let f = estimate_fisher(&net, &data, "taskA", mode, 99 + seed, "train_a").unwrap();
            assert!(f.values().iter().all(|&v| v >= 0.0));
            assert_eq!(f.provenance().mode, mode);
            assert_eq!(f.provenance().samples, 32);
        }
    }
    assert!(started.elapsed().as_secs() < 10);
}

#[test]
fn sampled_mode_is_seed_determined() {
    let net = small_net(1);
    let data = dataset(5, 8, 7, 4, net.spec().margin());
    let a = estimate_fisher(&net, &data, "taskA", FisherMode::Sampled, 3, "x").unwrap();
    let b = estimate_fisher(&net, &data, "taskA", FisherMode::Sampled, 3, "x").unwrap();
    let c = estimate_fisher(&net, &data, "taskA", FisherMode::Sampled, 4, "x").unwrap();
    assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.values() != c.values());
}

/// `p(y=1) = σ(θ·x)` as a two-class model with logits `[0, θx]`.
struct Logistic {
    params: ParamStore,
}

impl LogProbModel for Logistic {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn log_probs(&self, g: &mut Graph, input: &Tensor) -> ewc_core::Result<NodeId> {
        let theta = g.param("theta", self.params.get("theta").unwrap());
        let basis = g.constant(Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap());
        let col = g.matmul(basis, theta)?;
        let x = g.constant(input.clone().reshape(vec![1, 1])?);
        let logits = g.matmul(col, x)?;
        g.log_softmax(logits)
    }
}

#[test]
fn logistic_unit_example() {
    let mut params = ParamStore::new();
    params.push("theta", Tensor::new(vec![1, 1], vec![0.0]).unwrap()).unwrap();
    params.push("unused", Tensor::vector(vec![0.3, -2.0]).unwrap()).unwrap();
    let model = Logistic { params };
    let sample = LabeledPatch {
        input: Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap(),
        labels: vec![1],
    };
    let g = sample_score(&model, &sample, FisherMode::Empirical, &mut rng(0)).unwrap();
    assert_eq!(g[0], 0.5);
    let f = fisher_values(&model, &[sample], FisherMode::Empirical, 0).unwrap();
    assert_eq!(f[0], 0.25);
    // a parameter the output never reads
    assert_eq!(&f[1..], &[0.0, 0.0]);
}

#[test]
fn parameters_of_other_heads_get_zero_fisher() {
    let spec = NetworkSpec {
        in_channels: 2,
        trunk: vec![3],
        heads: vec![("taskA".into(), 4), ("taskB".into(), 2)],
    };
    let net = random_net(&mut rng(2), &spec);
    let data = dataset(8, 6, 5, 4, 1);
    let f = estimate_fisher(&net, &data, "taskA", FisherMode::Empirical, 0, "x").unwrap();
    for name in ["head.taskB.weights", "head.taskB.bias"] {
        let v = f.entry_values(name).unwrap();
        assert!(v.iter().all(|&x| x == 0.0), "{name}");
    }
    assert!(f.values().iter().any(|&x| x > 0.0));
}

#[test]
fn sampled_score_has_zero_mean() {
    let started = std::time::Instant::now();
    let m = score_moments(4000);
    assert!(m.components > 0);
    assert_eq!(m.biased_constant, 0);
    assert!(m.worst_ratio < 3.0, "|mean| reached {:.2} standard errors", m.worst_ratio);
    assert!(started.elapsed().as_secs() < 30);
}

fn penalty_setup(seed: u64) -> (ParamStore, AnchorParams, FisherDiagonal, f64) {
    let net = small_net(seed);
    let anchor = AnchorParams::snapshot(net.params());
    let mut r = rng(seed + 50);
    let k = net.params().num_params();
    let fisher_vals: Vec<f64> = normal_vec(&mut r, k, 1.0).iter().map(|v| v.abs()).collect();
    let fisher = FisherDiagonal::new(
        net.params().layout(),
        fisher_vals,
        FisherProvenance {
            dataset: "x".into(),
            head: "taskA".into(),
            mode: FisherMode::Empirical,
            samples: 1,
        },
    )
    .unwrap();
    let (spec, mut params) = net.into_parts();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let v = params.values_mut(name).unwrap();
        let shift = normal_vec(&mut r, v.len(), 0.2);
        v.iter_mut().zip(shift).for_each(|(a, d)| *a += d);
    }
    let mut net = SegNet::from_parts(spec, params).unwrap();
    net.attach_head("taskB", 2, seed).unwrap();
    let lambda = r.random_range(0.01..100.0);
    (net.params().clone(), anchor, fisher, lambda)
}

#[test]
fn penalty_gradient_is_exact_and_new_head_is_excluded() {
    for seed in 0..3 {
        let (params, anchor, fisher, lambda) = penalty_setup(seed);
        let mut g = Graph::new();
        let p = ewc_penalty(&mut g, &params, &anchor, &fisher, lambda).unwrap();
        let grads = g.backward(p).unwrap();
        let theta = params.flatten();
        let flat = grads.to_flat(&params);
        let mut expected_value = 0.0;
        for i in 0..anchor.len() {
            let d = theta[i] - anchor.values()[i];
            let expect = 2.0 * lambda * fisher.get(i) * d;
            assert!((flat[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0), "index {i}");
            expected_value += fisher.get(i) * d * d;
        }
        let value = g.value(p).item().unwrap();
        assert!((value - lambda * expected_value).abs() <= 1e-12 * value.abs());
        for name in ["head.taskB.weights", "head.taskB.bias"] {
            if let Some(gt) = grads.get(name) {
                assert!(gt.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        assert!(flat[anchor.len()..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn l2_equals_ewc_with_unit_fisher_bitwise() {
    let (params, anchor, _, lambda) = penalty_setup(4);
    let anchor = Arc::new(anchor);
    let ones = Arc::new(FisherDiagonal::ones(anchor.layout().to_vec()));
    let l2 = RegularizerConfig::l2(lambda, Arc::clone(&anchor)).unwrap();
    let ewc = RegularizerConfig::ewc(lambda, anchor, ones).unwrap();
    let run = |reg: &RegularizerConfig| {
        let mut g = Graph::new();
        let task = {
            let t = g.param("head.taskB.bias", params.get("head.taskB.bias").unwrap());
            g.sum(t)
        };
        let nodes = total_loss(&mut g, task, reg, &params).unwrap();
        let total = g.value(nodes.total).item().unwrap();
        (total.to_bits(), g.backward(nodes.total).unwrap().to_flat(&params))
    };
    let (a, ga) = run(&l2);
    let (b, gb) = run(&ewc);
    assert_eq!(a, b);
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn penalty_matches_closed_form(
        entries in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.0f64..10.0), 1..20),
        lambda in 0.0f64..50.0,
    ) {
        let n = entries.len();
        let theta: Vec<f64> = entries.iter().map(|e| e.0).collect();
        let star: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let f: Vec<f64> = entries.iter().map(|e| e.2).collect();
        let mut params = ParamStore::new();
        params.push("w", Tensor::vector(theta.clone()).unwrap()).unwrap();
        let mut anchor_store = ParamStore::new();
        anchor_store.push("w", Tensor::vector(star.clone()).unwrap()).unwrap();
        let anchor = AnchorParams::snapshot(&anchor_store);
        let fisher = FisherDiagonal::new(
            params.layout(),
            f.clone(),
            FisherProvenance { dataset: "x".into(), head: "h".into(), mode: FisherMode::Empirical, samples: 1 },
        ).unwrap();
        let mut g = Graph::new();
        let p = ewc_penalty(&mut g, &params, &anchor, &fisher, lambda).unwrap();
        let grad = g.backward(p).unwrap().to_flat(&params);
        let mut value = 0.0;
        for i in 0..n {
            let d = theta[i] - star[i];
            value += f[i] * d * d;
            let expect = 2.0 * lambda * f[i] * d;
            prop_assert!((grad[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
        let got = g.value(p).item().unwrap();
        prop_assert!((got - lambda * value).abs() <= 1e-12 * (lambda * value).abs().max(1.0));
        prop_assert!(got >= 0.0);
    }
}
