//! Trains a random tabletop scene, extracts its scene graph and scores it
//! against the generator's annotations.
//!
//! cargo run --release --example scene_graph -- [seed] [steps] [out_dir] [eps,eps,...]

use std::time::Instant;

use rfield::data::{CameraRing, Dataset, DatasetConfig, RandomSceneParams, SceneSpec};
use rfield::graph::{assignment_tolerance, extract_graph, ground_truth_ids, sample_points, topk_recall, GraphOptions, GraphVocab, NodeMatching, PointSource, RecallMode, SamplingOptions};
use rfield::train::{train, TrainConfig};

fn main() -> rfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let out = args.next().filter(|s| s != "-");
    let sweep: Vec<f64> = args.next().map(|s| s.split(',').filter_map(|x| x.parse().ok()).collect()).unwrap_or_default();

    let scene = SceneSpec::random(&RandomSceneParams::default(), seed)?;
    let config = DatasetConfig {
        cameras: CameraRing::wide(),
        ..Default::default()
    };
    let ds = Dataset::generate(&scene, &config, seed)?;
    println!("{} objects, {} ground-truth edges", ds.graph.nodes.len(), ds.graph.edges.len());
    let t0 = Instant::now();
    let cfg = TrainConfig {
        steps,
        warmup: 200.min(steps / 2),
        ..Default::default()
    };
    let field = train(&ds, &cfg, |_| {})?.field;
    println!("trained in {:.0}s", t0.elapsed().as_secs_f64());

    let source = PointSource::Surfaces {
        cameras: ds.cameras.iter().step_by(3).cloned().collect(),
        stride: 2,
    };
    let points = sample_points(&field, &source, &SamplingOptions::default())?;
    let positions: Vec<_> = points.iter().map(|p| p.position).collect();
    let gt_ids = ground_truth_ids(&scene, &positions, assignment_tolerance(&field));
    let vocab = GraphVocab::new(&ds.object_vocab, &ds.relation_vocab)?;
    let defaults = GraphOptions::default();
    let eps_values = if sweep.is_empty() { vec![defaults.eps] } else { sweep };
    for eps in eps_values {
        let opts = GraphOptions { eps, ..defaults };
        let graph = extract_graph(&field, &points, &vocab, &opts)?;
        let m = NodeMatching::greedy(&graph, &gt_ids);
        let min_iou = ds.graph.nodes.iter().map(|n| m.iou_for(n.id)).fold(1.0, f64::min);
        let obj = topk_recall(&graph, &ds.graph, &m, 1, RecallMode::Object)?;
        let rel = topk_recall(&graph, &ds.graph, &m, 1, RecallMode::Relationship).unwrap_or(f64::NAN);
        println!(
            "eps {eps:.2}: {} points, {} nodes (gt {}), min IoU {min_iou:.3}, {} edges, object R@1 {obj:.3}, triplet R@1 {rel:.3}",
            points.len(),
            graph.nodes.len(),
            ds.graph.nodes.len(),
            graph.edges.len()
        );
        if let Some(dir) = &out {
            graph.export(dir.as_ref())?;
        }
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
    Ok(())
}
