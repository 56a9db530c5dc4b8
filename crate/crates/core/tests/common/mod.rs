#![allow(dead_code)]

//! Hand-written reference implementation of the segmentation network, used
//! as an oracle independent of the autodiff graph.

use ewc_core::network::{head_bias, head_weights, trunk_bias, trunk_kernels};
use ewc_core::continual::{sample_score, HeadModel};
use ewc_core::synthtasks::LabeledPatch;
use ewc_core::{
    estimate_fisher, finite_diff_grad, init_network, FisherMode, Graph, NetworkSpec, ParamStore, SegNet, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Forward {
    /// Layer inputs: `acts[0]` is the patch, `acts[l+1] = relu(pre[l])`.
    pub acts: Vec<(usize, usize, usize, Vec<f64>)>,
    pub pre: Vec<Vec<f64>>,
    /// `[K×N]` log-probabilities.
    pub log_probs: Vec<f64>,
    pub classes: usize,
    pub pixels: usize,
}

fn conv(c: usize, h: usize, w: usize, x: &[f64], k: &[f64], b: &[f64], o: usize) -> Vec<f64> {
    let (oh, ow) = (h - 2, w - 2);
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = b[oc];
                for ic in 0..c {
                    for i in 0..3 {
                        for j in 0..3 {
                            s += k[((oc * c + ic) * 3 + i) * 3 + j] * x[(ic * h + y + i) * w + xx + j];
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

pub fn forward(net: &SegNet, input: &Tensor, head: &str) -> Forward {
    let p = net.params();
    let spec = net.spec();
    let s = input.shape();
    let mut acts = vec![(s[0], s[1], s[2], input.data().to_vec())];
    let mut pre = Vec::new();
    for (l, &width) in spec.trunk.iter().enumerate() {
        let (c, h, w, x) = acts.last().unwrap().clone();
        let z = conv(c, h, w, &x, p.get(&trunk_kernels(l)).unwrap().data(), p.get(&trunk_bias(l)).unwrap().data(), width);
        let a: Vec<f64> = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        pre.push(z);
        acts.push((width, h - 2, w - 2, a));
    }
    let (f, h, w, feat) = acts.last().unwrap().clone();
    let n = h * w;
    let wt = p.get(&head_weights(head)).unwrap().data();
    let bt = p.get(&head_bias(head)).unwrap().data();
    let k = bt.len();
    let mut logits = vec![0.0; k * n];
    for c in 0..k {
        for px in 0..n {
            let mut s = bt[c];
            for fi in 0..f {
                s += wt[c * f + fi] * feat[fi * n + px];
            }
            logits[c * n + px] = s;
        }
    }
    let mut log_probs = vec![0.0; k * n];
    for px in 0..n {
        let m = (0..k).map(|c| logits[c * n + px]).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..k).map(|c| (logits[c * n + px] - m).exp()).sum::<f64>().ln();
        for c in 0..k {
            log_probs[c * n + px] = logits[c * n + px] - lse;
        }
    }
    Forward {
        acts,
        pre,
        log_probs,
        classes: k,
        pixels: n,
    }
}

/// Gradient of the mean per-pixel log-likelihood of `labels`, flattened in
/// parameter-store order (entries the head does not read are zero).
pub fn loglik_grad(net: &SegNet, input: &Tensor, labels: &[u8], head: &str) -> (f64, Vec<f64>) {
    let fw = forward(net, input, head);
    let p = net.params();
    let (k, n) = (fw.classes, fw.pixels);
    let loglik = labels
        .iter()
        .enumerate()
        .map(|(px, &y)| fw.log_probs[y as usize * n + px])
        .sum::<f64>()
        / n as f64;

    let mut grads: Vec<(String, Vec<f64>)> = p
        .entries()
        .iter()
        .map(|e| (e.name().to_string(), vec![0.0; e.tensor().len()]))
        .collect();
    let names: Vec<String> = grads.iter().map(|(n, _)| n.clone()).collect();
    let slot = |name: &str| names.iter().position(|g| g == name).unwrap();

    // d loglik / d logits
    let mut dl = vec![0.0; k * n];
    for px in 0..n {
        for c in 0..k {
            let ind = if labels[px] as usize == c { 1.0 } else { 0.0 };
            dl[c * n + px] = (ind - fw.log_probs[c * n + px].exp()) / n as f64;
        }
    }
    let (f, _, _, feat) = fw.acts.last().unwrap().clone();
    let wt = p.get(&head_weights(head)).unwrap().data().to_vec();
    let iw = slot(&head_weights(head));
    let ib = slot(&head_bias(head));
    let mut da = vec![0.0; f * n];
    for c in 0..k {
        for px in 0..n {
            let d = dl[c * n + px];
            grads[ib].1[c] += d;
            for fi in 0..f {
                grads[iw].1[c * f + fi] += d * feat[fi * n + px];
                da[fi * n + px] += wt[c * f + fi] * d;
            }
        }
    }
    for l in (0..fw.pre.len()).rev() {
        let (c, h, w, ref x) = fw.acts[l];
        let (o, oh, ow) = (fw.acts[l + 1].0, h - 2, w - 2);
        let dz: Vec<f64> = da
            .iter()
            .zip(&fw.pre[l])
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        let kern = p.get(&trunk_kernels(l)).unwrap().data().to_vec();
        let ik = slot(&trunk_kernels(l));
        let ibias = slot(&trunk_bias(l));
        let mut dx = vec![0.0; c * h * w];
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let d = dz[(oc * oh + y) * ow + xx];
                    grads[ibias].1[oc] += d;
                    for ic in 0..c {
                        for i in 0..3 {
                            for j in 0..3 {
                                let kidx = ((oc * c + ic) * 3 + i) * 3 + j;
                                let xidx = (ic * h + y + i) * w + xx + j;
                                grads[ik].1[kidx] += d * x[xidx];
                                dx[xidx] += kern[kidx] * d;
                            }
                        }
                    }
                }
            }
        }
        da = dx;
    }
    (loglik, grads.into_iter().flat_map(|(_, g)| g).collect())
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// A random network with non-zero biases.
pub fn random_net(rng: &mut ChaCha8Rng, spec: &NetworkSpec) -> SegNet {
    let net = init_network(spec, rng.random()).unwrap();
    let (spec, mut params) = net.into_parts();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        if name.ends_with("bias") {
            let v = params.values_mut(&name).unwrap();
            let noise = normal_vec(rng, v.len(), 0.3);
            v.copy_from_slice(&noise);
        }
    }
    SegNet::from_parts(spec, params).unwrap()
}

pub fn random_input(rng: &mut ChaCha8Rng, c: usize, side: usize) -> Tensor {
    Tensor::new(vec![c, side, side], normal_vec(rng, c * side * side, 1.0)).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..classes) as u8).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smallest |pre-activation| over all trunk layers.
pub fn min_abs_preactivation(net: &SegNet, input: &Tensor, head: &str) -> f64 {
    forward(net, input, head)
        .pre
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, &z| m.min(z.abs()))
}

pub fn store_of(net: &SegNet) -> ParamStore {
    net.params().clone()
}

/// Mean NLL of every head, summed, plus a small weighted quadratic so the
/// fused penalty op is covered too.
pub fn loss(net: &SegNet, g: &mut Graph, input: &Tensor, labels: &[Vec<u8>], anchor: &[f64], w: &[f64]) -> ewc_core::NodeId {
    let x = g.constant(input.clone());
    let feats = net.trunk_node(g, x).unwrap();
    let mut total = None;
    for ((head, _), y) in net.spec().heads.iter().zip(labels) {
        let logits = net.head_node(g, feats, head).unwrap();
        let lp = g.log_softmax(logits).unwrap();
        let l = g.nll_loss(lp, y, None).unwrap();
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l).unwrap(),
        });
    }
    let k0 = ewc_core::network::trunk_kernels(0);
    let kp = g.param(&k0, net.params().get(&k0).unwrap());
    let q = g.weighted_sq_dist(kp, anchor, w).unwrap();
    let q = g.scale(q, 0.01);
    g.add(total.unwrap(), q).unwrap()
}

/// `max_i |a_i − n_i| / max(|a_i|, |n_i|, floor)`.
pub fn max_rel_err(a: &[f64], n: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(n)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub struct Case {
    pub net: SegNet,
    pub input: Tensor,
    pub labels: Vec<Vec<u8>>,
    pub anchor: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Random architecture; resampled while any pre-activation sits within
/// 1e-3 of a ReLU kink, where central differences are not meaningful.
pub fn random_case(seed: u64) -> Case {
    let mut r = rng(seed);
    loop {
        let in_c = r.random_range(1..=2);
        let depth = r.random_range(1..=3);
        let trunk: Vec<usize> = (0..depth).map(|_| r.random_range(2..=14)).collect();
        let heads: Vec<(String, usize)> = (0..r.random_range(1..=2))
            .map(|h| (format!("h{h}"), r.random_range(2..=4)))
            .collect();
        let spec = NetworkSpec {
            in_channels: in_c,
            trunk,
            heads,
        };
        let net = random_net(&mut r, &spec);
        let side = 2 * depth + r.random_range(1..=4);
        let input = random_input(&mut r, in_c, side);
        let out = side - 2 * depth;
        let labels = spec
            .heads
            .iter()
            .map(|(_, k)| random_labels(&mut r, out * out, *k))
            .collect();
        let numel = net.params().get(&ewc_core::network::trunk_kernels(0)).unwrap().len();
        let anchor = normal_vec(&mut r, numel, 0.5);
        let weights = normal_vec(&mut r, numel, 1.0).iter().map(|v| v.abs()).collect();
        if net.params().num_params() <= 5000 && min_abs_preactivation(&net, &input, &spec.heads[0].0) > 1e-3 {
            return Case {
                net,
                input,
                labels,
                anchor,
                weights,
            };
        }
    }
}

/// Worst relative error between backward and central differences over
/// `nets` random architectures.
pub fn gradient_check_worst(nets: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..nets {
        let c = random_case(1000 + seed);
        let mut g = Graph::new();
        let l = loss(&c.net, &mut g, &c.input, &c.labels, &c.anchor, &c.weights);
        let analytic = g.backward(l).unwrap().to_flat(c.net.params());
        let spec = c.net.spec().clone();
        let numeric = finite_diff_grad(
            |p: &ParamStore| {
                let net = SegNet::from_parts(spec.clone(), p.clone()).unwrap();
                let mut g = Graph::new();
                let l = loss(&net, &mut g, &c.input, &c.labels, &c.anchor, &c.weights);
                g.value(l).item().unwrap()
            },
            c.net.params(),
            1e-5,
        )
        .to_flat(c.net.params());
        worst = worst.max(max_rel_err(&analytic, &numeric, 1e-12));
    }
    worst
}

pub fn small_net(seed: u64) -> SegNet {
    let spec = NetworkSpec {
        in_channels: 2,
        trunk: vec![4, 3],
        heads: vec![("taskA".into(), 4)],
    };
    let net = random_net(&mut rng(seed), &spec);
    assert!(net.params().num_params() <= 500);
    net
}

pub fn dataset(seed: u64, m: usize, side: usize, classes: usize, margin: usize) -> Vec<LabeledPatch> {
    let mut r = rng(seed);
    let out = side - 2 * margin;
    (0..m)
        .map(|_| LabeledPatch {
            input: random_input(&mut r, 2, side),
            labels: random_labels(&mut r, out * out, classes),
        })
        .collect()
}

/// Independent per-sample loop: hand-written gradients, squared, averaged.
/// Sampled labels follow the documented procedure: one `ChaCha8Rng`, one
/// uniform per pixel in sample then pixel order, first class whose
/// cumulative probability exceeds the draw.
pub fn brute_force_fisher(net: &SegNet, data: &[LabeledPatch], mode: FisherMode, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let k = net.params().num_params();
    let mut acc = vec![0.0; k];
    for s in data {
        let labels = match mode {
            FisherMode::Empirical => s.labels.clone(),
            FisherMode::Sampled => {
                let fw = forward(net, &s.input, "taskA");
                (0..fw.pixels)
                    .map(|px| {
                        let u: f64 = r.random();
                        let mut cum = 0.0;
                        for c in 0..fw.classes {
                            cum += fw.log_probs[c * fw.pixels + px].exp();
                            if u < cum {
                                return c as u8;
                            }
                        }
                        (fw.classes - 1) as u8
                    })
                    .collect()
            }
        };
        let (_, g) = loglik_grad(net, &s.input, &labels, "taskA");
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v * v;
        }
    }
    acc.iter().map(|v| v / data.len() as f64).collect()
}

/// Worst relative disagreement between `estimate_fisher` and the brute-force
/// loop, over a few nets in both modes.
pub fn fisher_oracle_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let net = small_net(seed);
        let data = dataset(100 + seed, 32, 7, 4, net.spec().margin());
        for mode in [FisherMode::Empirical, FisherMode::Sampled] {
            let f = estimate_fisher(&net, &data, "taskA", mode, 99 + seed, "train_a").unwrap();
            let oracle = brute_force_fisher(&net, &data, mode, 99 + seed);
            assert_eq!(f.values().len(), oracle.len());
            for (&x, &y) in f.values().iter().zip(&oracle) {
                let scale = x.abs().max(y.abs());
                if scale > 0.0 {
                    worst = worst.max((x - y).abs() / scale);
                }
            }
        }
    }
    worst
}

pub struct ScoreMoments {
    /// Largest `|mean| / standard error` over components with spread.
    pub worst_ratio: f64,
    pub components: usize,
    /// Components with zero spread whose mean is not exactly 0.
    pub biased_constant: usize,
}

/// Mean of `draws` sampled-label scores on a one-pixel net.
pub fn score_moments(draws: usize) -> ScoreMoments {
    let spec = NetworkSpec {
        in_channels: 1,
        trunk: vec![2],
        heads: vec![("taskA".into(), 3)],
    };
    let net = random_net(&mut rng(11), &spec);
    let model = HeadModel::new(&net, "taskA").unwrap();
    let sample = LabeledPatch {
        input: random_input(&mut rng(12), 1, 3),
        labels: vec![0],
    };
    let mut r = ChaCha8Rng::seed_from_u64(13);
    let k = net.params().num_params();
    let (mut sum, mut sq) = (vec![0.0; k], vec![0.0; k]);
    for _ in 0..draws {
        let g = sample_score(&model, &sample, FisherMode::Sampled, &mut r).unwrap();
        for i in 0..k {
            sum[i] += g[i];
            sq[i] += g[i] * g[i];
        }
    }
    let mut out = ScoreMoments {
        worst_ratio: 0.0,
        components: 0,
        biased_constant: 0,
    };
    for i in 0..k {
        let mean = sum[i] / draws as f64;
        let var = (sq[i] / draws as f64 - mean * mean).max(0.0);
        if var == 0.0 {
            out.biased_constant += (mean != 0.0) as usize;
        } else {
            out.components += 1;
            let se = (var / draws as f64).sqrt();
            out.worst_ratio = out.worst_ratio.max(mean.abs() / se);
        }
    }
    out
}
