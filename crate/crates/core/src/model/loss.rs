use super::{forward, Mat, Network};
use crate::error::Result;
use crate::phantom::BoneLabel;

pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for r in out.data.chunks_exact_mut(logits.cols) {
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        r.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean softmax cross-entropy with log-sum-exp stabilization.
pub fn loss_ce(logits: &Mat, labels: &[BoneLabel]) -> f64 {
    assert_eq!(logits.rows, labels.len(), "labels/logits length mismatch");
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let r = logits.row(i);
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - r[l.index()]
        })
        .sum();
    total / labels.len() as f64
}

/// Class decisions (argmax, lowest code on ties) and class probabilities.
pub fn predict(net: &Network, coords: &[[f64; 3]]) -> Result<(Vec<BoneLabel>, Mat)> {
    let (logits, _) = forward(net, coords)?;
    let probs = softmax_rows(&logits);
    Ok((argmax_labels(&logits), probs))
}

/// Per-row argmax, lowest class code on ties.
pub fn argmax_labels(logits: &Mat) -> Vec<BoneLabel> {
    (0..logits.rows)
        .map(|i| {
            let r = logits.row(i);
            let mut best = 0;
            for c in 1..r.len() {
                if r[c] > r[best] {
                    best = c;
                }
            }
            BoneLabel::from_code(best as u8).expect("three logits per point")
        })
        .collect()
}
