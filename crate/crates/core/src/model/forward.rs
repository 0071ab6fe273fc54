use super::{Affine, Mat, Network};
use crate::error::{Error, Result};
use crate::graph::{feature_knn, knn_graph, KnnGraph};

/// Activations of one EdgeConv layer kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EdgeCache {
    pub input: Mat,
    pub graph: KnnGraph,
    /// Maximum edge pre-activation per (point, channel).
    pub zmax: Mat,
    /// Neighbor index attaining `zmax` (lowest edge position on ties).
    pub argmax: Vec<usize>,
    pub output: Mat,
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub edges: Vec<EdgeCache>,
    /// Point attaining the batch maximum of each last-layer channel.
    pub global_argmax: Vec<usize>,
    pub head_input: Mat,
    pub hidden_pre: Mat,
    pub hidden_act: Mat,
    pub logits: Mat,
}

/// Splits an EdgeConv weight into the `x_i` block and the `x_j − x_i` block.
pub(super) fn split_edge_weight(a: &Affine) -> (Mat, Mat) {
    let d_in = a.weight.rows / 2;
    (a.weight.row_block(0, d_in), a.weight.row_block(d_in, 2 * d_in))
}

fn edge_layer(net: &Network, layer: &Affine, input: Mat, graph: KnnGraph) -> EdgeCache {
    // W·(x_i, x_j − x_i) + b = x_i·(W_self − W_diff) + b + x_j·W_diff
    let (w_self, w_diff) = split_edge_weight(layer);
    let mut centre = input.matmul(&w_self.sub(&w_diff));
    centre.add_row_vector(&layer.bias);
    let neighbour = input.matmul(&w_diff);

    let (n, d_out) = (input.rows, layer.bias.len());
    let mut zmax = Mat::zeros(n, d_out);
    let mut argmax = vec![0usize; n * d_out];
    for i in 0..n {
        let c_row = centre.row(i);
        let best = &mut zmax.data[i * d_out..(i + 1) * d_out];
        let arg = &mut argmax[i * d_out..(i + 1) * d_out];
        for (e, &j) in graph.row(i).iter().enumerate() {
            let q_row = neighbour.row(j);
            for c in 0..d_out {
                let z = c_row[c] + q_row[c];
                if e == 0 || z > best[c] {
                    best[c] = z;
                    arg[c] = j;
                }
            }
        }
    }
    let output = Mat::from_vec(n, d_out, zmax.data.iter().map(|&z| net.leaky(z)).collect());
    EdgeCache {
        input,
        graph,
        zmax,
        argmax,
        output,
    }
}

/// Runs the network on normalized coordinates.
pub fn forward(net: &Network, coords: &[[f64; 3]]) -> Result<(Mat, ForwardCache)> {
    forward_with_graph(net, coords, None)
}

/// As [`forward`], reusing a precomputed coordinate graph for the first layer
/// when it was built with the network's `k`.
pub fn forward_with_graph(net: &Network, coords: &[[f64; 3]], graph: Option<&KnnGraph>) -> Result<(Mat, ForwardCache)> {
    let cfg = &net.config;
    if cfg.input_dim != 3 {
        return Err(Error::InvalidInput(format!("network expects {}-d input", cfg.input_dim)));
    }
    let n = coords.len();
    if n <= cfg.k {
        return Err(Error::InsufficientPoints { n, k: cfg.k });
    }
    let mut edges: Vec<EdgeCache> = Vec::with_capacity(cfg.widths.len());
    for (l, layer) in net.params.edge.iter().enumerate() {
        let (input, graph) = match edges.last() {
            None => {
                let g = match graph {
                    Some(g) if g.k() == cfg.k && g.n() == n => g.clone(),
                    _ => knn_graph(coords, cfg.k)?,
                };
                (Mat::from_rows(coords), g)
            }
            Some(prev) => {
                let x = prev.output.clone();
                let g = feature_knn(&x.data, x.cols, cfg.k)?;
                (x, g)
            }
        };
        debug_assert_eq!(input.cols * 2, layer.weight.rows, "layer {l} width");
        edges.push(edge_layer(net, layer, input, graph));
    }

    let last = &edges.last().expect("at least one edge layer").output;
    let mut global = vec![f64::NEG_INFINITY; last.cols];
    let mut global_argmax = vec![0usize; last.cols];
    for i in 0..n {
        for (c, &v) in last.row(i).iter().enumerate() {
            if v > global[c] {
                global[c] = v;
                global_argmax[c] = i;
            }
        }
    }

    let width = cfg.head_input();
    let mut head_input = Mat::zeros(n, width);
    for i in 0..n {
        let row = head_input.row_mut(i);
        let mut off = 0;
        for e in &edges {
            row[off..off + e.output.cols].copy_from_slice(e.output.row(i));
            off += e.output.cols;
        }
        row[off..].copy_from_slice(&global);
    }

    let mut hidden_pre = head_input.matmul(&net.params.hidden.weight);
    hidden_pre.add_row_vector(&net.params.hidden.bias);
    let hidden_act = Mat::from_vec(n, hidden_pre.cols, hidden_pre.data.iter().map(|&z| net.leaky(z)).collect());
    let mut logits = hidden_act.matmul(&net.params.output.weight);
    logits.add_row_vector(&net.params.output.bias);

    let cache = ForwardCache {
        edges,
        global_argmax,
        head_input,
        hidden_pre,
        hidden_act,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Edge feature tensor `(x_i, x_j − x_i)` for every point and neighbor,
/// shape n × k × 2d, flattened row-major.
pub fn edge_features(x: &Mat, graph: &KnnGraph) -> Vec<f64> {
    let d = x.cols;
    let mut out = Vec::with_capacity(x.rows * graph.k() * 2 * d);
    for i in 0..x.rows {
        let xi = x.row(i);
        for &j in graph.row(i) {
            out.extend_from_slice(xi);
            out.extend(x.row(j).iter().zip(xi).map(|(a, b)| a - b));
        }
    }
    out
}
