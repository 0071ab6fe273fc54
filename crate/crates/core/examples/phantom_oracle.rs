//! Filters partial phantom scans with ground-truth labels standing in for
//! the network, to show what the neighborhood rule alone can achieve.
//!
//! Usage: phantom_oracle [n_clouds] [n_points] [k] [gap_mm] [seed] [line_keep]

use dgfilter::filter::{filter_cloud_with, FilterConfig, VoteRule};
use dgfilter::phantom::{build_cloud, gen_phantom, PhantomConfig, PhantomGeometry, Position, ScanKind};

fn main() -> dgfilter::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (n_clouds, n_points, k) = (arg(0, 50.0) as usize, arg(1, 256.0) as usize, arg(2, 20.0) as usize);
    let gap = arg(3, PhantomConfig::default().gap_mm);
    let seed = arg(4, 7.0) as u64;
    let line_keep = arg(5, PhantomConfig::default().partial_line_keep);

    println!("position rule     points floaters removed  bone retained  jitter retained");
    for position in [Position::P1, Position::P2, Position::P3] {
        let pcfg = PhantomConfig { position, scan_kind: ScanKind::Partial, gap_mm: gap, partial_line_keep: line_keep, ..Default::default() };
        let scan = gen_phantom(&pcfg, seed)?;
        let geom = PhantomGeometry::new(position, pcfg.gap_mm, pcfg.noise_mm);
        let floater: Vec<bool> = scan
            .frames
            .iter()
            .flat_map(|f| f.points.iter().map(|p| geom.is_floater(&f.transform, p)))
            .collect();
        let cloud = build_cloud(&scan)?;
        let truth = |idx: &[usize], _: &[[f64; 3]]| Ok(idx.iter().map(|&i| cloud.points[i].label).collect());
        for rule in [VoteRule::Majority, VoteRule::Any] {
            let cfg = FilterConfig { k, vote_rule: rule, n_clouds, n_points, seed, ..Default::default() };
            let (_, report) = filter_cloud_with(&cloud, &truth, &cfg)?;
            let mut lost = [0usize; 3];
            let (mut fl, mut fl_del, mut bone, mut bone_kept, mut jit, mut jit_kept) = (0, 0, 0, 0, 0, 0);
            for (i, p) in cloud.points.iter().enumerate() {
                let del = report.verdicts[i].deleted;
                if floater[i] {
                    fl += 1;
                    fl_del += usize::from(del);
                } else if p.is_artifact {
                    jit += 1;
                    jit_kept += usize::from(!del);
                } else {
                    bone += 1;
                    bone_kept += usize::from(!del);
                    lost[p.label.index()] += usize::from(del);
                }
            }
            println!(
                "{:<8} {:<9} {:>6} {fl:>8} {:>8.3} {:>14.4} {:>16.3}  lost by bone {:?}",
                position.to_string(),
                rule.to_string(),
                cloud.len(),
                fl_del as f64 / fl.max(1) as f64,
                bone_kept as f64 / bone.max(1) as f64,
                jit_kept as f64 / jit.max(1) as f64,
                lost,
            );
        }
    }
    Ok(())
}
