//! Central-difference verification of recorded gradients.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::micrograd::graph::{Graph, NodeId};
use crate::micrograd::params::ParameterSet;
use crate::tensor::Tensor;

/// Denominator floor of the relative error. Central-difference roundoff at
/// `h = 1e-5` is around 1e-11 absolute, so gradients much below this floor
/// cannot be resolved relatively.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares the analytic gradient of `f` with central differences.
///
/// `f` records a scalar loss for the given parameters. Up to `samples`
/// coordinates are drawn (deterministically from `seed`); when `samples`
/// covers all of them every coordinate is checked. The relative error of a
/// coordinate is `|a − n| / max(GRAD_FLOOR, |a| + |n|)`.
pub fn grad_check<F>(f: F, params: &ParameterSet, h: f64, samples: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<NodeId>,
{
    let mut analytic = params.clone();
    analytic.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    g.backward(loss)?;
    g.accumulate_into(&mut analytic)?;

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, p)| (0..p.value.len()).map(move |i| (name.to_string(), i)))
        .collect();
    let chosen: Vec<usize> = if samples >= coords.len() {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, coords.len(), samples).into_vec();
        idx.sort_unstable();
        idx
    };

    let eval = |p: &ParameterSet| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, p)?;
        Ok(g.value(loss).item())
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: chosen.len(),
    };
    for &k in &chosen {
        let (name, i) = &coords[k];
        let orig = probe.get(name).expect("coordinate from params").data()[*i];
        probe.value_mut(name).unwrap().data_mut()[*i] = orig + h;
        let up = eval(&probe)?;
        probe.value_mut(name).unwrap().data_mut()[*i] = orig - h;
        let down = eval(&probe)?;
        probe.value_mut(name).unwrap().data_mut()[*i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.grad(name).unwrap().data()[*i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_FLOOR);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((name.clone(), *i));
        }
    }
    Ok(report)
}

type LossFn = Box<dyn Fn(&mut Graph, &ParameterSet) -> Result<NodeId>>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

/// Reduces a node to a scalar with fixed pseudo-random weights.
fn probe(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let n = g.value(x).len();
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let w = uniform(&mut rng, &[n]);
    g.dot_const(x, w)
}

/// Every layer kind, glue op and loss of the graph, each checked on all
/// coordinates of small random inputs (inputs are parameters too, so input
/// gradients are covered).
pub fn layer_suite(h: f64, seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(&'static str, ParameterSet, LossFn)> = Vec::new();
    let set = |rng: &mut ChaCha8Rng, specs: &[(&str, &[usize])]| -> Result<ParameterSet> {
        let mut p = ParameterSet::new();
        for (name, shape) in specs {
            p.insert(*name, uniform(rng, shape))?;
        }
        Ok(p)
    };

    let p = set(&mut rng, &[("x", &[2, 5, 5]), ("w", &[3, 2, 3, 3]), ("b", &[3])])?;
    cases.push(("conv2d", p, Box::new(|g, p| {
        let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
        let y = g.conv2d(x, w, b, 1, 1)?;
        probe(g, y)
    })));
    let p = set(&mut rng, &[("x", &[2, 7, 7]), ("w", &[2, 2, 3, 3]), ("b", &[2])])?;
    cases.push(("conv2d_stride2", p, Box::new(|g, p| {
        let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
        let y = g.conv2d(x, w, b, 2, 0)?;
        probe(g, y)
    })));
    let p = set(&mut rng, &[("x", &[3, 4, 4])])?;
    cases.push(("relu", p, Box::new(|g, p| {
        let x = g.param(p, "x")?;
        let y = g.relu(x)?;
        probe(g, y)
    })));
    let p = set(&mut rng, &[("x", &[2, 4, 4])])?;
    cases.push(("maxpool", p, Box::new(|g, p| {
        let x = g.param(p, "x")?;
        let (y, _) = g.maxpool(x, 2)?;
        probe(g, y)
    })));
    let p = set(&mut rng, &[("x", &[2, 4, 4]), ("k", &[2, 2, 2])])?;
    cases.push(("maxunpool", p, Box::new(|g, p| {
        let x = g.param(p, "x")?;
        let k = g.param(p, "k")?;
        let (y, idx) = g.maxpool(x, 2)?;
        let y = g.add(y, k)?;
        let u = g.maxunpool(y, &idx)?;
        probe(g, u)
    })));
    let p = set(&mut rng, &[("x", &[6]), ("w", &[4, 6]), ("b", &[4])])?;
    cases.push(("fc", p, Box::new(|g, p| {
        let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
        let y = g.fc(x, w, b)?;
        probe(g, y)
    })));
    let p = set(&mut rng, &[("x", &[4, 2, 3])])?;
    cases.push(("softmax", p, Box::new(|g, p| {
        let x = g.param(p, "x")?;
        let y = g.softmax(x)?;
        probe(g, y)
    })));
    let p = set(&mut rng, &[("t", &[5, 3])])?;
    cases.push(("embed", p, Box::new(|g, p| {
        let t = g.param(p, "t")?;
        let a = g.embed(t, 2)?;
        let b = g.embed(t, 2)?;
        let c = g.embed(t, 4)?;
        let y = g.concat(&[a, b, c])?;
        probe(g, y)
    })));
    let p = set(&mut rng, &[("x", &[3]), ("h", &[4]), ("c", &[4]), ("w", &[16, 7]), ("b", &[16])])?;
    cases.push(("lstm_step", p, Box::new(|g, p| {
        let (x, h, c) = (g.param(p, "x")?, g.param(p, "h")?, g.param(p, "c")?);
        let (w, b) = (g.param(p, "w")?, g.param(p, "b")?);
        let (h1, c1) = g.lstm_step(x, h, c, w, b)?;
        let (h2, c2) = g.lstm_step(x, h1, c1, w, b)?;
        let y = g.concat(&[h2, c2])?;
        probe(g, y)
    })));
    let p = set(&mut rng, &[("x", &[2, 4, 4]), ("m", &[4, 4]), ("v", &[8])])?;
    cases.push(("glue_ops", p, Box::new(|g, p| {
        let (x, m, v) = (g.param(p, "x")?, g.param(p, "m")?, g.param(p, "v")?);
        let xm = g.mask_mul(m, x)?;
        let pooled = g.avgpool(xm, 2)?;
        let flat = g.reshape(pooled, &[8])?;
        let sum = g.add(flat, v)?;
        let scaled = g.scale(sum, -1.5)?;
        let shifted = g.shift(scaled, 0.25)?;
        let head = g.slice(shifted, 2, &[4])?;
        let tail = g.slice(v, 4, &[4])?;
        let avg = g.mean(&[head, tail])?;
        let picked = g.gather(x, Arc::new(vec![0, 5, 5, 31, 17]), &[5])?;
        let y = g.concat(&[avg, picked])?;
        probe(g, y)
    })));
    let p = set(&mut rng, &[("x", &[5])])?;
    cases.push(("cls_loss", p, Box::new(|g, p| {
        let x = g.param(p, "x")?;
        let y = g.softmax(x)?;
        g.cls_loss(y, 3)
    })));
    let p = set(&mut rng, &[("x", &[2, 3, 3])])?;
    cases.push(("seg_loss", p, Box::new(|g, p| {
        let x = g.param(p, "x")?;
        let y = g.softmax(x)?;
        g.seg_loss(y, Arc::new(vec![0, 1, 1, 0, 0, 1, 0, 0, 1]))
    })));
    let p = set(&mut rng, &[("x", &[4, 5])])?;
    cases.push(("seq_nll", p, Box::new(|g, p| {
        let x = g.param(p, "x")?;
        g.seq_nll(x, &[3, 1, 2, 0], 0)
    })));

    cases
        .into_iter()
        .map(|(name, p, f)| Ok((name, grad_check(f, &p, h, usize::MAX, 0)?)))
        .collect()
}
