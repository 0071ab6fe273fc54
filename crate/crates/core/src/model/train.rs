use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::argmax_labels;
use super::{adam_step, backward, evaluate_metrics, forward_with_graph, loss_ce, AdamConfig, AdamState};
use super::{ClassMetrics, Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::graph::{knn_graph, KnnGraph};
use crate::phantom::BoneLabel;
use crate::rng::{self, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
            max_epochs: 100,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.patience < 1 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// A normalized batch with its labels, tagged by source (e.g. knee position)
/// so the validation split can be stratified.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    pub coords: Vec<[f64; 3]>,
    pub labels: Vec<BoneLabel>,
    pub group: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub accuracy: f64,
    pub per_class: [ClassMetrics; 3],
    pub macro_avg: ClassMetrics,
}

impl EpochMetrics {
    pub fn csv_header() -> String {
        let mut cols = vec!["epoch", "train_loss", "val_loss", "accuracy"].into_iter().map(String::from).collect::<Vec<_>>();
        for scope in BoneLabel::ALL.iter().map(|l| l.name()).chain(["macro"]) {
            for m in ["precision", "recall", "f1", "iou"] {
                cols.push(format!("{scope}_{m}"));
            }
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.epoch.to_string(),
            self.train_loss.to_string(),
            self.val_loss.to_string(),
            self.accuracy.to_string(),
        ];
        for m in self.per_class.iter().chain([&self.macro_avg]) {
            cols.extend([m.precision, m.recall, m.f1, m.iou].map(|v| v.to_string()));
        }
        cols.join(",")
    }
}

/// Patience counter on a monitored loss. Only strict decreases count as
/// improvements.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `loss` for 1-based `epoch`. Returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub network: Network,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_batches: Vec<usize>,
    pub val_batches: Vec<usize>,
}

/// Seeded per-group split; every group with at least two batches contributes
/// to validation, and the split always leaves both sides non-empty.
fn split(batches: &[TrainingBatch], cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut groups: Vec<&str> = batches.iter().map(|b| b.group.as_str()).collect();
    groups.sort_unstable();
    groups.dedup();
    let mut rng = rng::stream_rng(cfg.seed, streams::SPLIT);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for g in groups {
        let mut members: Vec<usize> = (0..batches.len()).filter(|&i| batches[i].group == g).collect();
        members.shuffle(&mut rng);
        let n_val = ((members.len() as f64 * cfg.val_fraction).round() as usize).min(members.len() - 1);
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    if val.is_empty() {
        val.push(train.pop().expect("at least two batches"));
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Early-stopping driver. `run_epoch(e)` trains epoch `e` and returns its
/// validation loss; `snapshot` is taken whenever that loss is a new best.
/// Returns the best epoch and whether patience ran out.
pub fn fit_loop<S>(
    max_epochs: usize,
    patience: usize,
    mut run_epoch: impl FnMut(usize) -> Result<f64>,
    mut snapshot: impl FnMut() -> S,
) -> Result<(usize, bool, Option<S>)> {
    let mut stopper = EarlyStopping::new(patience);
    let mut best = None;
    for epoch in 1..=max_epochs {
        let val_loss = run_epoch(epoch)?;
        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved_at(epoch) {
            best = Some(snapshot());
        }
        if stop {
            log::info!("early stop after epoch {epoch}; best epoch {}", stopper.best_epoch());
            return Ok((stopper.best_epoch(), true, best));
        }
    }
    Ok((stopper.best_epoch(), false, best))
}

/// Trains a fresh network with one Adam step per batch and restores the
/// parameters of the best validation epoch. `on_epoch` sees every epoch's
/// metrics as soon as they are computed.
pub fn train(
    batches: &[TrainingBatch],
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if batches.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "training needs at least 2 batches for a validation split, got {}",
            batches.len()
        )));
    }
    if let Some(b) = batches.iter().find(|b| b.coords.len() != b.labels.len()) {
        return Err(Error::InvalidInput(format!(
            "batch of group {} has {} points but {} labels",
            b.group,
            b.coords.len(),
            b.labels.len()
        )));
    }
    let mut net = Network::init(net_cfg.clone(), cfg.seed)?;
    let (train_idx, val_idx) = split(batches, cfg);
    let graphs: Vec<KnnGraph> = batches
        .par_iter()
        .map(|b| knn_graph(&b.coords, net_cfg.k))
        .collect::<Result<_>>()?;

    let adam = cfg.adam();
    let mut state = AdamState::new(net.params.len());
    let mut step = 0u64;
    let mut metrics = Vec::new();

    let net_cell = std::cell::RefCell::new(&mut net);
    let (best_epoch, stopped_early, best) = fit_loop(
        cfg.max_epochs,
        cfg.patience,
        |epoch| {
            let mut net = net_cell.borrow_mut();
            let mut order = train_idx.clone();
            order.shuffle(&mut rng::stream_rng(cfg.seed, streams::SHUFFLE_BASE + epoch as u64));
            let mut train_loss = 0.0;
            for &b in &order {
                let batch = &batches[b];
                let (logits, cache) = forward_with_graph(&net, &batch.coords, Some(&graphs[b]))?;
                train_loss += loss_ce(&logits, &batch.labels);
                let grads = backward(&net, &cache, &batch.labels).flatten();
                let mut flat = net.params.flatten();
                step += 1;
                adam_step(&mut flat, &grads, &mut state, &adam, step);
                net.params.load_flat(&flat);
            }
            train_loss /= order.len() as f64;

            let frozen: &Network = &net;
            let evals: Vec<(f64, Vec<BoneLabel>)> = val_idx
                .par_iter()
                .map(|&b| {
                    let (logits, _) = forward_with_graph(frozen, &batches[b].coords, Some(&graphs[b]))?;
                    Ok((loss_ce(&logits, &batches[b].labels), argmax_labels(&logits)))
                })
                .collect::<Result<_>>()?;
            let val_loss = evals.iter().map(|(l, _)| l).sum::<f64>() / evals.len() as f64;
            let predicted: Vec<BoneLabel> = evals.iter().flat_map(|(_, p)| p.iter().copied()).collect();
            let truth: Vec<BoneLabel> = val_idx.iter().flat_map(|&b| batches[b].labels.iter().copied()).collect();
            let m = evaluate_metrics(&predicted, &truth);
            let row = EpochMetrics {
                epoch,
                train_loss,
                val_loss,
                accuracy: m.accuracy,
                per_class: m.per_class,
                macro_avg: m.macro_avg,
            };
            log::info!(
                "epoch {epoch}: train_loss {:.5} val_loss {:.5} accuracy {:.4}",
                row.train_loss,
                row.val_loss,
                row.accuracy
            );
            on_epoch(&row);
            metrics.push(row);
            Ok(val_loss)
        },
        || net_cell.borrow().params.clone(),
    )?;
    if let Some(best) = best {
        net.params = best;
    }
    Ok(TrainOutcome {
        network: net,
        metrics,
        best_epoch,
        stopped_early,
        train_batches: train_idx,
        val_batches: val_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn replay(losses: &[f64], patience: usize) -> (usize, bool, usize, Option<usize>) {
        let ran = std::cell::Cell::new(0);
        let (best, stopped, snap) = fit_loop(
            losses.len(),
            patience,
            |e| {
                ran.set(e);
                Ok(losses[e - 1])
            },
            || ran.get(),
        )
        .unwrap();
        (best, stopped, ran.get(), snap)
    }

    #[test]
    fn patience_window_counts_equal_losses_as_stale() {
        let losses = [3.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let (best, stopped, ran, snap) = replay(&losses, 10);
        assert_eq!((best, stopped, ran, snap), (2, true, 12, Some(2)));
    }

    #[test]
    fn decreasing_losses_run_to_the_end() {
        let losses: Vec<f64> = (0..15).map(|i| 10.0 - i as f64).collect();
        let (best, stopped, ran, snap) = replay(&losses, 10);
        assert_eq!((best, stopped, ran, snap), (15, false, 15, Some(15)));
    }

    #[test]
    fn csv_header_matches_row_width() {
        let m = EpochMetrics {
            epoch: 1,
            train_loss: 1.0,
            val_loss: 1.0,
            accuracy: 0.5,
            per_class: [ClassMetrics::default(); 3],
            macro_avg: ClassMetrics::default(),
        };
        assert_eq!(EpochMetrics::csv_header().split(',').count(), m.csv_row().split(',').count());
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let mk = |g: &str| TrainingBatch { coords: vec![], labels: vec![], group: g.into() };
        let batches: Vec<_> = (0..10).map(|i| mk(if i < 5 { "P0" } else { "P1" })).collect();
        let cfg = TrainConfig { seed: 4, ..Default::default() };
        let (train, val) = split(&batches, &cfg);
        assert_eq!(val.len(), 2);
        assert_eq!(val.iter().filter(|&&i| i < 5).count(), 1);
        assert_eq!(train.len() + val.len(), 10);
        assert_eq!(split(&batches, &cfg), (train, val));
        let two = vec![mk("a"), mk("a")];
        let (t, v) = split(&two, &cfg);
        assert_eq!((t.len(), v.len()), (1, 1));
    }
}
