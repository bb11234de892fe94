//! Trains the sphere-on-box demo and reports held-out PSNR and the mean
//! relation cosine over supervision pairs.
//!
//! cargo run --release --example train_demo -- [steps] [out_dir]

use std::time::Instant;

use rfield::data::{Dataset, DatasetConfig, SceneSpec};
use rfield::relation::RelationStore;
use rfield::train::{relation_cosine, train, view_psnr, write_training_outputs, TrainConfig};

fn main() -> rfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3000);
    let out = args.next();
    let ds = Dataset::generate(&SceneSpec::demo(), &DatasetConfig::default(), 42)?;
    let cfg = TrainConfig {
        steps,
        warmup: 200.min(steps / 2),
        ..Default::default()
    };
    let t0 = Instant::now();
    let outcome = train(&ds, &cfg, |row| {
        if let Some(p) = row.psnr {
            println!(
                "step {:5}  loss {:.4}  rgb {:.5}  sem {:.4}  inst {:.4}  rel {:.4}  psnr {:.2}  ({:.0}s)",
                row.step,
                row.terms.total,
                row.terms.rgb,
                row.terms.semantic,
                row.terms.instance,
                row.terms.relation,
                p,
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    let field = &outcome.field;
    let heldout = ds.heldout_cameras(4);
    let mut sum = 0.0;
    for cam in &heldout {
        sum += view_psnr(field, &ds, cam, cfg.loss.samples)?;
    }
    let store = RelationStore::from_dataset(&ds, cfg.unrelated)?;
    let cos = relation_cosine(field, &ds, &store, &cfg.loss, 2000, 7)?;
    println!("held-out PSNR {:.2} dB, relation cosine {:.4}, {:.0}s", sum / heldout.len() as f64, cos, t0.elapsed().as_secs_f64());
    if let Some(out) = out {
        write_training_outputs(out.as_ref(), &cfg, &outcome)?;
        ds.save(&std::path::Path::new(&out).join("dataset"))?;
    }
    Ok(())
}
