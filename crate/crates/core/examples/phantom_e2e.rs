//! Trains on thorough phantom scans of every position and filters unseen
//! partial scans, reporting floater removal and bone retention.
//!
//! Usage: phantom_e2e [seed] [max_epochs] [batches] [points] [filter_points]

use std::time::Instant;

use dgfilter::filter::{filter_cloud, FilterConfig, VoteRule};
use dgfilter::model::{train, NetworkConfig, TrainConfig};
use dgfilter::phantom::{build_cloud, gen_phantom, PhantomConfig, PhantomGeometry, Position, ScanKind};
use dgfilter::pipeline::{training_batches, TrainingSetConfig};
use dgfilter::sampling::SampleConfig;

fn main() -> dgfilter::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (seed, max_epochs) = (arg(0, 7), arg(1, 30) as usize);
    let (n_clouds, n_points) = (arg(2, 50) as usize, arg(3, 256) as usize);
    let filter_points = arg(4, n_points as u64) as usize;
    let t0 = Instant::now();

    let mut clouds = Vec::new();
    for position in Position::ALL {
        let scan = gen_phantom(&PhantomConfig { position, ..Default::default() }, seed)?;
        clouds.push((position.to_string(), build_cloud(&scan)?));
    }
    let set = TrainingSetConfig { sample: SampleConfig { n_clouds, n_points, seed }, ..Default::default() };
    let batches = training_batches(&clouds, &set)?;
    let tc = TrainConfig { max_epochs, seed, ..Default::default() };
    let outcome = train(&batches, &NetworkConfig::default(), &tc, &mut |m| {
        eprintln!(
            "epoch {:>3} train {:.4} val {:.4} acc {:.4} patella f1 {:.3} [{:.0?}]",
            m.epoch,
            m.train_loss,
            m.val_loss,
            m.accuracy,
            m.per_class[1].f1,
            t0.elapsed()
        )
    })?;
    println!("best epoch {} (stopped early: {})", outcome.best_epoch, outcome.stopped_early);

    let (mut fl, mut fl_del, mut bone, mut bone_kept) = (0, 0, 0, 0);
    for position in [Position::P1, Position::P2, Position::P3] {
        let pcfg = PhantomConfig { position, scan_kind: ScanKind::Partial, ..Default::default() };
        let scan = gen_phantom(&pcfg, seed)?;
        let geom = PhantomGeometry::new(position, pcfg.gap_mm, pcfg.noise_mm);
        let floater: Vec<bool> = scan
            .frames
            .iter()
            .flat_map(|f| f.points.iter().map(|p| geom.is_floater(&f.transform, p)))
            .collect();
        let cloud = build_cloud(&scan)?;
        let cfg = FilterConfig { n_clouds, n_points: filter_points, seed, ..Default::default() };
        let (_, report) = filter_cloud(&cloud, &outcome.network, &cfg)?;
        let any = filter_cloud(&cloud, &outcome.network, &FilterConfig { vote_rule: VoteRule::Any, ..cfg })?.1;
        let violations = report.deleted.iter().filter(|i| any.deleted.binary_search(i).is_err()).count();
        let (mut f, mut fd, mut b, mut bk, mut lost) = (0, 0, 0, 0, [0usize; 3]);
        for (i, p) in cloud.points.iter().enumerate() {
            let del = report.verdicts[i].deleted;
            if floater[i] {
                f += 1;
                fd += usize::from(del);
            } else if !p.is_artifact {
                b += 1;
                bk += usize::from(!del);
                lost[p.label.index()] += usize::from(del);
            }
        }
        println!(
            "{position}: floaters {fd}/{f}  bone kept {bk}/{b} ({:.4})  lost {lost:?}  any-rule violations {violations}",
            bk as f64 / b as f64
        );
        (fl, fl_del, bone, bone_kept) = (fl + f, fl_del + fd, bone + b, bone_kept + bk);
    }
    println!(
        "pooled: floater removal {:.4}  bone retention {:.4}  [{:.1?}]",
        fl_del as f64 / fl as f64,
        bone_kept as f64 / bone as f64,
        t0.elapsed()
    );
    Ok(())
}
