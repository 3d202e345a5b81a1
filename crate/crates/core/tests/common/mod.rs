//! Finite-difference oracle and random test networks shared by the integration tests.

#![allow(dead_code)]

use metaqa::autodiff::{BoundParams, Graph, LossFn, NodeId, ParamSet};
use metaqa::encoder::{Encoder, EncoderConfig, TokenizerConfig};
use metaqa::rng::{rng_from, Rng};
use metaqa::{Result, Tensor};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn loss_at(params: &ParamSet, loss_fn: &impl LossFn) -> f64 {
    let mut g = Graph::new();
    let bound = params.bind_constant(&mut g);
    let loss = loss_fn(&mut g, &bound).expect("loss builds");
    g.value(loss).item().expect("scalar loss")
}

fn with_entry(params: &ParamSet, name: &str, index: usize, delta: f64) -> ParamSet {
    let t = params.get(name).unwrap();
    let mut data = t.to_vec();
    data[index] += delta;
    let mut out = params.clone();
    out.insert(name, Tensor::new(t.shape().to_vec(), data).unwrap());
    out
}

/// Central differences `(f(x+h) - f(x-h)) / 2h` for every entry of every tensor.
pub fn fd_gradient(params: &ParamSet, f: impl Fn(&ParamSet) -> f64, h: f64) -> ParamSet {
    params
        .iter()
        .map(|(name, t)| {
            let data = (0..t.len())
                .map(|i| (f(&with_entry(params, name, i, h)) - f(&with_entry(params, name, i, -h))) / (2.0 * h))
                .collect();
            (name.to_string(), Tensor::new(t.shape().to_vec(), data).unwrap())
        })
        .collect()
}

/// Largest entrywise `|a - b| / max(|a|, |b|, floor)`; the floor keeps
/// entries that are zero up to rounding from dominating.
pub fn max_rel_err(a: &ParamSet, b: &ParamSet, floor: f64) -> f64 {
    a.iter()
        .flat_map(|(name, ta)| {
            let tb = b.get(name).expect("same names");
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

pub fn normal_tensor(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A small network description: either the real encoder on token sequences
/// or a tanh MLP with softmax cross-entropy on dense inputs.
pub enum TestNet {
    Encoder { encoder: Encoder, seqs: Vec<Vec<usize>>, targets: Vec<usize>, classes: usize },
    Mlp { inputs: Tensor, targets: Vec<usize> },
}

pub struct Sampled {
    pub net: TestNet,
    pub params: ParamSet,
}

pub fn random_encoder_net(rng: &mut Rng) -> Sampled {
    let buckets = rng.random_range(6..12);
    let config = EncoderConfig {
        tokenizer: TokenizerConfig { buckets, ..Default::default() },
        dim: rng.random_range(2..5),
        hidden: rng.random_range(2..5),
        embedding_std: 0.7,
    };
    let encoder = Encoder::new(config).unwrap();
    let classes = rng.random_range(2..4);
    let batch = rng.random_range(1..4);
    let seqs: Vec<Vec<usize>> = (0..batch)
        .map(|_| {
            let len = rng.random_range(2..6);
            let mut s = vec![0];
            s.extend((0..len).map(|_| rng.random_range(0..buckets)));
            s
        })
        .collect();
    let targets = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let mut init_rng = rng_from(rng.random());
    let params = encoder.init_params(classes, &mut init_rng);
    // Non-zero head so every parameter receives gradient.
    let params = encoder.random_head(&params, classes, &mut init_rng);
    Sampled { net: TestNet::Encoder { encoder, seqs, targets, classes }, params }
}

pub fn random_mlp_net(rng: &mut Rng) -> Sampled {
    let batch = rng.random_range(2..5);
    let input = rng.random_range(2..5);
    let hidden = rng.random_range(2..6);
    let classes = rng.random_range(2..5);
    let mut params = ParamSet::new();
    params.insert("w1", normal_tensor(rng, &[input, hidden], 0.8));
    params.insert("b1", normal_tensor(rng, &[hidden], 0.3));
    params.insert("w2", normal_tensor(rng, &[hidden, classes], 0.8));
    params.insert("b2", normal_tensor(rng, &[classes], 0.3));
    let inputs = normal_tensor(rng, &[batch, input], 1.0);
    let targets = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    Sampled { net: TestNet::Mlp { inputs, targets }, params }
}

impl TestNet {
    pub fn loss(&self, g: &mut Graph, p: &BoundParams) -> Result<NodeId> {
        match self {
            TestNet::Encoder { encoder, seqs, targets, classes } => {
                let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
                let enc = encoder.encode_batch(g, p, &refs)?;
                let logits = encoder.head(g, p, enc.pooled)?;
                debug_assert_eq!(g.shape(logits)[1], *classes);
                g.cross_entropy(logits, targets)
            }
            TestNet::Mlp { inputs, targets } => {
                let x = g.constant(inputs.clone());
                let h = g.matmul(x, p.get("w1")?)?;
                let h = g.add_bias(h, p.get("b1")?)?;
                let h = g.tanh(h)?;
                let o = g.matmul(h, p.get("w2")?)?;
                let o = g.add_bias(o, p.get("b2")?)?;
                // softmax followed by a squared error exercises the softmax node directly
                let probs = g.softmax(o)?;
                let sq = g.mul(probs, probs)?;
                let reg = g.sum(sq)?;
                let ce = g.cross_entropy(o, targets)?;
                let reg = g.scale(reg, 0.1)?;
                g.add(ce, reg)
            }
        }
    }
}
