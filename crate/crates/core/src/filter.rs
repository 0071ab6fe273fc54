//! Inter-bone consistency filter.
//!
//! Each Monte Carlo batch is classified by the network, and a point is
//! flagged in that batch when any of its `k` spatial neighbors received a
//! different predicted class. Flags from all batches a point appeared in are
//! combined by a vote rule into one keep/delete verdict per point. Points no
//! batch happened to draw are covered by a residual pass.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{knn_graph, sq_dist, KnnGraph};
use crate::model::{argmax_labels, forward, Network};
use crate::phantom::{BoneLabel, LabeledCloud};
use crate::sampling::{sample_batches, BatchSample, SampleConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteRule {
    /// Delete when flagged in at least one batch.
    Any,
    /// Delete when flagged in more than half of the point's appearances.
    #[default]
    Majority,
}

impl VoteRule {
    pub fn deletes(self, flags: u32, appearances: u32) -> bool {
        match self {
            VoteRule::Any => flags >= 1,
            VoteRule::Majority => 2 * flags > appearances,
        }
    }
}

impl FromStr for VoteRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "any" => Ok(VoteRule::Any),
            "majority" => Ok(VoteRule::Majority),
            _ => Err(Error::InvalidInput(format!("unknown vote rule '{s}' (any|majority)"))),
        }
    }
}

impl fmt::Display for VoteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VoteRule::Any => "any",
            VoteRule::Majority => "majority",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Neighbors inspected per point when flagging.
    pub k: usize,
    pub vote_rule: VoteRule,
    pub include_residual_pass: bool,
    /// Batch count and size; the defaults match the training protocol.
    pub n_clouds: usize,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            k: 20,
            vote_rule: VoteRule::Majority,
            include_residual_pass: true,
            n_clouds: 500,
            n_points: 1024,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            n_clouds: self.n_clouds,
            n_points: self.n_points,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("filter k must be >= 1".into()));
        }
        if self.n_points <= self.k {
            return Err(Error::InvalidConfig(format!(
                "n_points ({}) must exceed k ({})",
                self.n_points, self.k
            )));
        }
        self.sample_config().validate()
    }
}

/// Per-batch evidence, enough to recompute every flag from the cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    /// Sequential id; residual chunks continue after the sampled batches.
    pub batch_index: usize,
    pub residual: bool,
    pub indices: Vec<usize>,
    /// Only the first `scored` positions vote; the rest is padding.
    pub scored: usize,
    /// Predicted class code per position, one digit each.
    pub predicted: String,
    /// `1` where the position was flagged, else `0`.
    pub flags: String,
}

impl BatchRecord {
    fn new(batch_index: usize, residual: bool, indices: Vec<usize>, scored: usize, pred: &[BoneLabel], flags: &[bool]) -> Self {
        Self {
            batch_index,
            residual,
            indices,
            scored,
            predicted: pred.iter().map(|l| char::from(b'0' + l.code())).collect(),
            flags: flags.iter().map(|&f| if f { '1' } else { '0' }).collect(),
        }
    }

    pub fn predicted_labels(&self) -> Result<Vec<BoneLabel>> {
        self.predicted
            .bytes()
            .map(|b| {
                b.checked_sub(b'0')
                    .and_then(BoneLabel::from_code)
                    .ok_or_else(|| Error::Corruption(format!("batch {}: bad label digit {:?}", self.batch_index, b as char)))
            })
            .collect()
    }

    pub fn flag_values(&self) -> Result<Vec<bool>> {
        self.flags
            .bytes()
            .map(|b| match b {
                b'0' => Ok(false),
                b'1' => Ok(true),
                _ => Err(Error::Corruption(format!("batch {}: bad flag digit {:?}", self.batch_index, b as char))),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointVerdict {
    pub point_index: usize,
    pub appearances: u32,
    pub flags: u32,
    pub label_votes: [u32; 3],
    /// Plurality of `label_votes`, lowest code on ties; absent without votes.
    pub final_label: Option<BoneLabel>,
    pub deleted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub scan_id: String,
    pub config: FilterConfig,
    pub n_points: usize,
    pub retained: Vec<usize>,
    pub deleted: Vec<usize>,
    /// Deleted points per provenance frame index.
    pub frame_deletions: BTreeMap<u32, usize>,
    pub verdicts: Vec<PointVerdict>,
    pub batches: Vec<BatchRecord>,
}

impl FilterReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line() as u64,
            msg: e.to_string(),
        })
    }

    /// Checks that the report partitions a cloud of `n` points.
    pub fn check_consistent(&self, n: usize) -> Result<()> {
        if self.n_points != n || self.verdicts.len() != n || self.retained.len() + self.deleted.len() != n {
            return Err(Error::Corruption(format!(
                "report for {} points does not match cloud of {n}",
                self.n_points
            )));
        }
        let mut seen = vec![false; n];
        for &i in self.retained.iter().chain(&self.deleted) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Corruption(format!("point index {i} repeated or out of range")));
            }
        }
        Ok(())
    }
}

/// Flags every point with at least one neighbor of a different predicted class.
pub fn flag_batch(pred: &[BoneLabel], graph: &KnnGraph) -> Result<Vec<bool>> {
    if pred.len() != graph.n() {
        return Err(Error::InvalidInput(format!(
            "{} labels for a graph over {} points",
            pred.len(),
            graph.n()
        )));
    }
    Ok(graph
        .rows()
        .zip(pred)
        .map(|(row, &own)| row.iter().any(|&j| pred[j] != own))
        .collect())
}

/// Tallies every scored occurrence of every point. Points never scored keep
/// `appearances == 0`, no label and `deleted == false`.
pub fn aggregate_verdicts(records: &[BatchRecord], cloud_size: usize, rule: VoteRule) -> Result<Vec<PointVerdict>> {
    let mut v: Vec<PointVerdict> = (0..cloud_size)
        .map(|i| PointVerdict {
            point_index: i,
            appearances: 0,
            flags: 0,
            label_votes: [0; 3],
            final_label: None,
            deleted: false,
        })
        .collect();
    for r in records {
        let pred = r.predicted_labels()?;
        let flags = r.flag_values()?;
        if pred.len() != r.indices.len() || flags.len() != r.indices.len() || r.scored > r.indices.len() {
            return Err(Error::Corruption(format!("batch {}: inconsistent record lengths", r.batch_index)));
        }
        for pos in 0..r.scored {
            let i = r.indices[pos];
            let p = v.get_mut(i).ok_or_else(|| {
                Error::Corruption(format!("batch {}: point index {i} outside cloud of {cloud_size}", r.batch_index))
            })?;
            p.appearances += 1;
            p.flags += u32::from(flags[pos]);
            p.label_votes[pred[pos].index()] += 1;
        }
    }
    for p in &mut v {
        if p.appearances > 0 {
            let best = (1..3).fold(0, |b, c| if p.label_votes[c] > p.label_votes[b] { c } else { b });
            p.final_label = Some(BoneLabel::ALL[best]);
            p.deleted = rule.deletes(p.flags, p.appearances);
        }
    }
    Ok(v)
}

/// Class decisions for one batch: cloud indices plus their normalized coordinates.
pub type Predictor<'a> = dyn Fn(&[usize], &[[f64; 3]]) -> Result<Vec<BoneLabel>> + Sync + 'a;

/// Predictor backed by a trained network.
pub fn network_predictor(net: &Network) -> impl Fn(&[usize], &[[f64; 3]]) -> Result<Vec<BoneLabel>> + Sync + '_ {
    move |_, coords| {
        let (logits, _) = forward(net, coords)?;
        Ok(argmax_labels(&logits))
    }
}

/// Flags one batch of cloud indices (normalized internally).
fn classify(cloud: &LabeledCloud, predictor: &Predictor<'_>, k: usize, indices: &[usize]) -> Result<(Vec<BoneLabel>, Vec<bool>)> {
    let coords = BatchSample::from_indices(cloud, 0, indices.to_vec()).coords(cloud);
    let pred = predictor(indices, &coords)?;
    let graph = knn_graph(&coords, k)?;
    let flags = flag_batch(&pred, &graph)?;
    Ok((pred, flags))
}

/// Covers never-sampled points: they are split in ascending index order into
/// chunks of `n_points`, and a short last chunk is padded with the sampled
/// points nearest to it. Padding is recorded but never scored.
pub fn residual_pass(
    cloud: &LabeledCloud,
    predictor: &Predictor<'_>,
    undecided: &[usize],
    sampled: &[usize],
    cfg: &FilterConfig,
    first_batch_index: usize,
) -> Result<Vec<BatchRecord>> {
    let mut todo = undecided.to_vec();
    todo.sort_unstable();
    todo.dedup();
    let chunks: Vec<Vec<usize>> = todo.chunks(cfg.n_points).map(<[usize]>::to_vec).collect();
    chunks
        .into_par_iter()
        .enumerate()
        .map(|(c, chunk)| {
            let scored = chunk.len();
            let mut indices = chunk;
            let missing = cfg.n_points - scored;
            if missing > 0 {
                indices.extend(nearest_padding(cloud, &indices, sampled, missing));
            }
            if indices.len() <= cfg.k {
                return Err(Error::InsufficientPoints { n: indices.len(), k: cfg.k });
            }
            let (pred, flags) = classify(cloud, predictor, cfg.k, &indices)?;
            Ok(BatchRecord::new(first_batch_index + c, true, indices, scored, &pred, &flags))
        })
        .collect()
}

/// The `count` candidates closest to any point of `chunk`, ties by index.
fn nearest_padding(cloud: &LabeledCloud, chunk: &[usize], candidates: &[usize], count: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .par_iter()
        .map(|&c| {
            let x = &cloud.points[c].xyz;
            let d = chunk
                .iter()
                .map(|&i| sq_dist(x, &cloud.points[i].xyz))
                .fold(f64::INFINITY, f64::min);
            (d, c)
        })
        .collect();
    let take = count.min(scored.len());
    if take < scored.len() {
        scored.select_nth_unstable_by(take, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(take);
    }
    scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, c)| c).collect()
}

/// Copies the points at `indices` (in the given order) into a new cloud.
pub fn select(cloud: &LabeledCloud, indices: &[usize]) -> LabeledCloud {
    LabeledCloud {
        source: cloud.source.clone(),
        points: indices.iter().map(|&i| cloud.points[i].clone()).collect(),
    }
}

/// Runs the full filter and returns the retained points in original order.
pub fn filter_cloud(cloud: &LabeledCloud, net: &Network, cfg: &FilterConfig) -> Result<(LabeledCloud, FilterReport)> {
    filter_cloud_with(cloud, &network_predictor(net), cfg)
}

/// As [`filter_cloud`] with an arbitrary predictor, e.g. ground-truth labels.
pub fn filter_cloud_with(cloud: &LabeledCloud, predictor: &Predictor<'_>, cfg: &FilterConfig) -> Result<(LabeledCloud, FilterReport)> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyInput(format!("cloud {} is empty", cloud.source)));
    }
    if cloud.len() <= cfg.k {
        return Err(Error::InsufficientPoints { n: cloud.len(), k: cfg.k });
    }
    let samples = sample_batches(cloud, &cfg.sample_config())?;
    let mut records: Vec<BatchRecord> = samples
        .into_par_iter()
        .map(|b| {
            let (pred, flags) = classify(cloud, predictor, cfg.k, &b.indices)?;
            let scored = b.indices.len();
            Ok(BatchRecord::new(b.batch_index, false, b.indices, scored, &pred, &flags))
        })
        .collect::<Result<_>>()?;

    let mut verdicts = aggregate_verdicts(&records, cloud.len(), cfg.vote_rule)?;
    if cfg.include_residual_pass {
        let (undecided, sampled): (Vec<usize>, Vec<usize>) =
            (0..cloud.len()).partition(|&i| verdicts[i].appearances == 0);
        if !undecided.is_empty() {
            log::info!("residual pass over {} unsampled points", undecided.len());
            let extra = residual_pass(cloud, predictor, &undecided, &sampled, cfg, records.len())?;
            records.extend(extra);
            verdicts = aggregate_verdicts(&records, cloud.len(), cfg.vote_rule)?;
        }
    }

    let (deleted, retained): (Vec<usize>, Vec<usize>) = (0..cloud.len()).partition(|&i| verdicts[i].deleted);
    let mut frame_deletions = BTreeMap::new();
    for &i in &deleted {
        *frame_deletions.entry(cloud.points[i].provenance.frame_index).or_insert(0) += 1;
    }
    log::info!(
        "{}: deleted {} of {} points ({} rule)",
        cloud.source,
        deleted.len(),
        cloud.len(),
        cfg.vote_rule
    );
    let report = FilterReport {
        scan_id: cloud.source.clone(),
        config: cfg.clone(),
        n_points: cloud.len(),
        retained,
        deleted,
        frame_deletions,
        verdicts,
        batches: records,
    };
    Ok((select(cloud, &report.retained), report))
}

/// Recomputes every batch's flags from the cloud and the recorded
/// predictions; returns the number of disagreeing positions.
pub fn audit_report(cloud: &LabeledCloud, report: &FilterReport) -> Result<usize> {
    report.check_consistent(cloud.len())?;
    let mut mismatches = 0;
    for r in &report.batches {
        if let Some(&bad) = r.indices.iter().find(|&&i| i >= cloud.len()) {
            return Err(Error::Corruption(format!("batch {}: point index {bad} out of range", r.batch_index)));
        }
        let coords = BatchSample::from_indices(cloud, 0, r.indices.clone()).coords(cloud);
        let graph = knn_graph(&coords, report.config.k)?;
        let flags = flag_batch(&r.predicted_labels()?, &graph)?;
        mismatches += flags.iter().zip(r.flag_values()?).filter(|(a, b)| **a != *b).count();
    }
    Ok(mismatches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::knn_graph_bruteforce;
    use crate::model::NetworkConfig;
    use crate::phantom::{Provenance, WorldPoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(xyz: [f64; 3], label: BoneLabel, frame: u32) -> WorldPoint {
        WorldPoint {
            xyz,
            label,
            provenance: Provenance {
                scan_id: "t".into(),
                frame_index: frame,
                u: xyz[0],
                v: xyz[1],
            },
            is_artifact: false,
            synthetic: false,
        }
    }

    fn record(indices: Vec<usize>, pred: &[BoneLabel], flags: &[bool]) -> BatchRecord {
        let n = indices.len();
        BatchRecord::new(0, false, indices, n, pred, flags)
    }

    #[test]
    fn unanimous_labels_raise_no_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 3]> = (0..50).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let g = knn_graph(&pts, 20).unwrap();
        assert!(flag_batch(&[BoneLabel::Tibia; 50], &g).unwrap().iter().all(|f| !f));
    }

    #[test]
    fn separated_clusters_with_k1_raise_no_flags() {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, l) in [(0.0, BoneLabel::Femur), (100.0, BoneLabel::Patella)] {
            for i in 0..10 {
                pts.push([c + i as f64 * 0.1, 0.0, 0.0]);
                labels.push(l);
            }
        }
        let g = knn_graph(&pts, 1).unwrap();
        assert!(flag_batch(&labels, &g).unwrap().iter().all(|f| !f));
    }

    #[test]
    fn abutting_clusters_match_bruteforce_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<[f64; 3]> = (0..200)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let labels: Vec<_> = pts
            .iter()
            .map(|p| if p[0] < 0.0 { BoneLabel::Femur } else { BoneLabel::Tibia })
            .collect();
        let flags = flag_batch(&labels, &knn_graph(&pts, 20).unwrap()).unwrap();
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let oracle = knn_graph_bruteforce(&flat, 3, 20).unwrap();
        let mut shell = 0.0f64;
        for i in 0..200 {
            let expect = oracle.row(i).iter().any(|&j| labels[j] != labels[i]);
            assert_eq!(flags[i], expect);
            let r = oracle.row(i).iter().map(|&j| sq_dist(&pts[i], &pts[j]).sqrt()).fold(0.0, f64::max);
            if flags[i] {
                assert!(pts[i][0].abs() <= r);
            }
            shell = shell.max(r);
        }
        assert!(flags.iter().any(|&f| f) && shell > 0.0);
    }

    #[test]
    fn flag_size_mismatch_is_rejected() {
        let pts = [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let g = knn_graph(&pts, 1).unwrap();
        assert!(matches!(flag_batch(&[BoneLabel::Femur; 2], &g), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn vote_rule_arithmetic() {
        let once = [record(vec![0], &[BoneLabel::Femur], &[true])];
        for rule in [VoteRule::Any, VoteRule::Majority] {
            assert!(aggregate_verdicts(&once, 1, rule).unwrap()[0].deleted);
        }
        let four = [record(vec![0, 0, 0, 0], &[BoneLabel::Femur; 4], &[true, true, false, false])];
        assert!(!aggregate_verdicts(&four, 1, VoteRule::Majority).unwrap()[0].deleted);
        assert!(aggregate_verdicts(&four, 1, VoteRule::Any).unwrap()[0].deleted);
    }

    #[test]
    fn aggregation_matches_independent_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let records: Vec<BatchRecord> = (0..12)
            .map(|_| {
                let idx: Vec<usize> = (0..30).map(|_| rng.random_range(0..n)).collect();
                let pred: Vec<_> = (0..30).map(|_| BoneLabel::ALL[rng.random_range(0..3)]).collect();
                let flags: Vec<bool> = (0..30).map(|_| rng.random_bool(0.3)).collect();
                record(idx, &pred, &flags)
            })
            .collect();
        let got = aggregate_verdicts(&records, n, VoteRule::Majority).unwrap();
        let mut app = vec![0u32; n];
        let mut fl = vec![0u32; n];
        let mut votes = vec![[0u32; 3]; n];
        for r in &records {
            for (pos, &i) in r.indices.iter().enumerate() {
                app[i] += 1;
                fl[i] += (r.flags.as_bytes()[pos] == b'1') as u32;
                votes[i][(r.predicted.as_bytes()[pos] - b'0') as usize] += 1;
            }
        }
        for i in 0..n {
            assert_eq!((got[i].appearances, got[i].flags, got[i].label_votes), (app[i], fl[i], votes[i]));
            assert_eq!(got[i].deleted, app[i] > 0 && fl[i] * 2 > app[i]);
            assert!(got[i].flags <= got[i].appearances);
            if app[i] > 0 {
                let m = *votes[i].iter().max().unwrap();
                let first = votes[i].iter().position(|&v| v == m).unwrap();
                assert_eq!(got[i].final_label.unwrap().index(), first);
            }
        }
        let any = aggregate_verdicts(&records, n, VoteRule::Any).unwrap();
        assert!(got.iter().zip(&any).all(|(m, a)| !m.deleted || a.deleted));
    }

    #[test]
    fn out_of_range_index_is_corruption() {
        let r = [record(vec![5], &[BoneLabel::Femur], &[false])];
        assert!(matches!(aggregate_verdicts(&r, 3, VoteRule::Any), Err(Error::Corruption(_))));
    }

    fn tiny_net() -> Network {
        let cfg = NetworkConfig {
            widths: vec![4, 4, 4],
            head_hidden: 4,
            k: 4,
            ..Default::default()
        };
        Network::init(cfg, 0).unwrap()
    }

    fn grid_cloud(n: usize) -> LabeledCloud {
        LabeledCloud {
            source: "t".into(),
            points: (0..n)
                .map(|i| point([(i % 10) as f64, (i / 10) as f64, (i * 7 % 5) as f64 * 0.1], BoneLabel::Femur, (i % 3) as u32))
                .collect(),
        }
    }

    fn small_cfg() -> FilterConfig {
        FilterConfig {
            k: 4,
            n_clouds: 3,
            n_points: 16,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn residual_pass_covers_everything_and_excludes_padding() {
        let cloud = grid_cloud(60);
        let (_, report) = filter_cloud(&cloud, &tiny_net(), &small_cfg()).unwrap();
        assert!(report.verdicts.iter().all(|v| v.appearances >= 1));
        let residual: Vec<_> = report.batches.iter().filter(|b| b.residual).collect();
        assert!(!residual.is_empty());
        let sampled: std::collections::BTreeSet<usize> = report
            .batches
            .iter()
            .filter(|b| !b.residual)
            .flat_map(|b| b.indices.iter().copied())
            .collect();
        for b in &residual {
            assert_eq!(b.indices.len(), 16);
            for &i in &b.indices[..b.scored] {
                assert!(!sampled.contains(&i));
                assert_eq!(report.verdicts[i].appearances, 1);
            }
            for &i in &b.indices[b.scored..] {
                assert!(sampled.contains(&i));
            }
        }
        let scored: usize = report.batches.iter().map(|b| b.scored).sum();
        let total: u32 = report.verdicts.iter().map(|v| v.appearances).sum();
        assert_eq!(scored, total as usize);
    }

    #[test]
    fn empty_residual_set_is_a_noop() {
        let cloud = grid_cloud(20);
        let net = tiny_net();
        let out = residual_pass(&cloud, &network_predictor(&net), &[], &[0, 1], &small_cfg(), 0).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn filtering_partitions_and_is_deterministic() {
        let cloud = grid_cloud(80);
        let net = tiny_net();
        let (kept, a) = filter_cloud(&cloud, &net, &small_cfg()).unwrap();
        let (_, b) = filter_cloud(&cloud, &net, &small_cfg()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        a.check_consistent(80).unwrap();
        assert_eq!(kept.len(), a.retained.len());
        assert!(kept.points.iter().zip(&a.retained).all(|(p, &i)| *p == cloud.points[i]));
        assert_eq!(a.frame_deletions.values().sum::<usize>(), a.deleted.len());
        assert_eq!(audit_report(&cloud, &a).unwrap(), 0);
        assert_eq!(FilterReport::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn unanimous_network_deletes_nothing() {
        let mut net = tiny_net();
        net.params.output.weight.data.iter_mut().for_each(|w| *w = 0.0);
        net.params.output.bias = vec![0.0, 0.0, 5.0];
        let mut cloud = grid_cloud(70);
        for (i, p) in cloud.points.iter_mut().enumerate() {
            p.label = BoneLabel::ALL[i % 3];
        }
        for rule in [VoteRule::Any, VoteRule::Majority] {
            let cfg = FilterConfig { vote_rule: rule, ..small_cfg() };
            let (kept, report) = filter_cloud(&cloud, &net, &cfg).unwrap();
            assert!(report.deleted.is_empty());
            assert_eq!(kept, cloud);
        }
    }

    #[test]
    fn tiny_cloud_is_insufficient() {
        let cloud = grid_cloud(4);
        assert!(matches!(
            filter_cloud(&cloud, &tiny_net(), &small_cfg()),
            Err(Error::InsufficientPoints { n: 4, k: 4 })
        ));
    }

    #[test]
    fn vote_rule_parses() {
        assert_eq!("Majority".parse::<VoteRule>().unwrap(), VoteRule::Majority);
        assert_eq!(VoteRule::Any.to_string().parse::<VoteRule>().unwrap(), VoteRule::Any);
        assert!("most".parse::<VoteRule>().is_err());
    }
}
