//! Builds the bundled duplicate-object benchmark, then compares the
//! relationship-filtered pipeline with the object-only ablation.
//!
//! cargo run --release --example relseg_bench -- [out_dir] [steps]

use std::path::PathBuf;
use std::time::Instant;

use rfield::graph::{GraphOptions, SamplingOptions};
use rfield::relseg::{evaluate, load_scenes, prepare_bundled, read_bench, RelsegOptions};
use rfield::train::TrainConfig;

fn main() -> rfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "relseg_bench".into()));
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let t0 = Instant::now();
    let bench_path = root.join("bench.json");
    let bench = if bench_path.exists() {
        read_bench(&bench_path)?
    } else {
        let cfg = TrainConfig {
            steps,
            warmup: 200.min(steps / 2),
            ..Default::default()
        };
        prepare_bundled(&root, &cfg, 7, |name| println!("training {name} ({:.0}s)", t0.elapsed().as_secs_f64()))?
    };
    let scenes = load_scenes(&bench, &root, &GraphOptions::default(), &SamplingOptions::default())?;
    for (name, ctx) in &scenes {
        let labels: Vec<String> = ctx.nodes.iter().map(|n| n.labels[0].label.clone()).collect();
        println!("{name}: {} nodes {:?}", ctx.nodes.len(), labels);
    }
    for filter in [true, false] {
        let report = evaluate(&bench, &scenes, &RelsegOptions { filter, ..Default::default() })?;
        println!("\n{} accuracy {:.3}  mIoU {:.3}", if filter { "full" } else { "object-only" }, report.accuracy, report.mean_iou);
        for q in &report.queries {
            println!("  {:<12} {:<36} gt {}  node {:?}  IoU {:.2}", q.scene, q.query, q.gt_instance_id, q.predicted_node, q.iou);
        }
        let name = if filter { "report.json" } else { "report_object_only.json" };
        rfield::io::write_json(&root.join(name), &report)?;
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
    Ok(())
}
