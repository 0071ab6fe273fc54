use super::forward::{split_edge_weight, EdgeCache, ForwardCache};
use super::loss::softmax_rows;
use super::{Affine, Mat, Network, Params};
use crate::phantom::BoneLabel;

fn affine_grads(input: &Mat, d_pre: &Mat) -> Affine {
    Affine {
        weight: input.t_matmul(d_pre),
        bias: d_pre.column_sums(),
    }
}

/// Returns (parameter gradient, gradient w.r.t. the layer input).
fn edge_backward(net: &Network, layer: &Affine, cache: &EdgeCache, d_out: &Mat) -> (Affine, Mat) {
    let (n, d_out_w) = (d_out.rows, d_out.cols);
    let mut d_centre = Mat::zeros(n, d_out_w);
    let mut d_neighbour = Mat::zeros(n, d_out_w);
    for i in 0..n {
        for c in 0..d_out_w {
            let idx = i * d_out_w + c;
            let g = d_out.data[idx] * net.leaky_grad(cache.zmax.data[idx]);
            d_centre.data[idx] = g;
            d_neighbour.data[cache.argmax[idx] * d_out_w + c] += g;
        }
    }
    let x = &cache.input;
    let d_self = x.t_matmul(&d_centre);
    let mut d_diff = x.t_matmul(&d_neighbour);
    d_diff.data.iter_mut().zip(&d_self.data).for_each(|(a, b)| *a -= b);
    let mut weight = d_self;
    weight.rows += d_diff.rows;
    weight.data.extend_from_slice(&d_diff.data);

    let (w_self, w_diff) = split_edge_weight(layer);
    let mut d_x = d_centre.matmul_t(&w_self.sub(&w_diff));
    d_x.add_assign(&d_neighbour.matmul_t(&w_diff));
    (
        Affine {
            weight,
            bias: d_centre.column_sums(),
        },
        d_x,
    )
}

/// Gradients of the mean cross-entropy w.r.t. every parameter.
///
/// Neighbor graphs are held fixed; each max routes its gradient to the
/// single edge (or point, for the global maximum) recorded in the cache.
pub fn backward(net: &Network, cache: &ForwardCache, labels: &[BoneLabel]) -> Params {
    let n = cache.logits.rows;
    assert_eq!(labels.len(), n, "labels/logits length mismatch");
    let mut d_logits = softmax_rows(&cache.logits);
    for (i, l) in labels.iter().enumerate() {
        d_logits.data[i * d_logits.cols + l.index()] -= 1.0;
    }
    d_logits.data.iter_mut().for_each(|g| *g /= n as f64);

    let output = affine_grads(&cache.hidden_act, &d_logits);
    let d_act = d_logits.matmul_t(&net.params.output.weight);
    let d_pre = Mat::from_vec(
        n,
        d_act.cols,
        d_act
            .data
            .iter()
            .zip(&cache.hidden_pre.data)
            .map(|(g, &z)| g * net.leaky_grad(z))
            .collect(),
    );
    let hidden = affine_grads(&cache.head_input, &d_pre);
    let d_head = d_pre.matmul_t(&net.params.hidden.weight);

    // Scatter the head-input gradient back onto each layer's output.
    let mut d_outputs: Vec<Mat> = cache.edges.iter().map(|e| Mat::zeros(n, e.output.cols)).collect();
    let last_w = cache.edges.last().map(|e| e.output.cols).unwrap_or(0);
    let global_off = d_head.cols - last_w;
    for i in 0..n {
        let row = d_head.row(i);
        let mut off = 0;
        for d in d_outputs.iter_mut() {
            let w = d.cols;
            d.row_mut(i).copy_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    let d_global: Vec<f64> = (0..last_w)
        .map(|c| (0..n).map(|i| d_head.get(i, global_off + c)).sum())
        .collect();
    if let Some(last) = d_outputs.last_mut() {
        for (c, g) in d_global.iter().enumerate() {
            last.data[cache.global_argmax[c] * last_w + c] += g;
        }
    }

    let mut edge = vec![None; cache.edges.len()];
    for l in (0..cache.edges.len()).rev() {
        let (grad, d_x) = edge_backward(net, &net.params.edge[l], &cache.edges[l], &d_outputs[l]);
        edge[l] = Some(grad);
        if l > 0 {
            d_outputs[l - 1].add_assign(&d_x);
        }
    }
    Params {
        edge: edge.into_iter().map(|g| g.expect("every layer visited")).collect(),
        hidden,
        output,
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Parameter index with the largest error.
    pub worst: usize,
    pub checked: usize,
    /// Parameters whose ±h evaluations crossed a kink (graph, max or
    /// rectifier switch); central differences are meaningless there.
    pub skipped: usize,
}

fn same_regime(a: &ForwardCache, b: &ForwardCache) -> bool {
    let sign = |m: &Mat| m.data.iter().map(|&z| z > 0.0).collect::<Vec<_>>();
    a.global_argmax == b.global_argmax
        && sign(&a.hidden_pre) == sign(&b.hidden_pre)
        && a.edges.iter().zip(&b.edges).all(|(x, y)| {
            x.graph == y.graph && x.argmax == y.argmax && sign(&x.zmax) == sign(&y.zmax)
        })
}

/// Central-difference check of [`backward`] over every parameter. Relative
/// error is `|a − f| / max(|a|, |f|, 1e-6)`.
pub fn finite_difference_check(
    net: &Network,
    coords: &[[f64; 3]],
    labels: &[BoneLabel],
    h: f64,
) -> crate::error::Result<GradCheck> {
    use super::{forward, loss_ce};
    let (_, base) = forward(net, coords)?;
    let analytic = backward(net, &base, labels).flatten();
    let theta = net.params.flatten();
    let mut probe = net.clone();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: 0,
        checked: 0,
        skipped: 0,
    };
    let eval = |probe: &mut Network, flat: &[f64]| -> crate::error::Result<(f64, ForwardCache)> {
        probe.params.load_flat(flat);
        let (logits, cache) = forward(probe, coords)?;
        Ok((loss_ce(&logits, labels), cache))
    };
    let mut flat = theta.clone();
    for p in 0..theta.len() {
        flat[p] = theta[p] + h;
        let (lp, cp) = eval(&mut probe, &flat)?;
        flat[p] = theta[p] - h;
        let (lm, cm) = eval(&mut probe, &flat)?;
        flat[p] = theta[p];
        if !same_regime(&base, &cp) || !same_regime(&base, &cm) {
            out.skipped += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * h);
        let a = analytic[p];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        if rel > out.max_rel_err {
            out.max_rel_err = rel;
            out.worst = p;
        }
        out.checked += 1;
    }
    Ok(out)
}
