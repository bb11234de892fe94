//! Click an object in a trained demo checkpoint and query a relationship;
//! reports region means, the top-50% mask IoU and writes heatmaps.
//!
//! cargo run --release --example query_relation -- <run_dir> [text] [out_dir]
//!
//! `run_dir` holds `checkpoint.rfld` and `dataset/` as written by `train_demo`.

use std::path::Path;

use rfield::data::raytrace::render_view;
use rfield::data::Dataset;
use rfield::field::load_checkpoint;
use rfield::query::{click_to_query, mask_iou, pick_pixel, query_relation, region_means, top_fraction_mask, Direction, Domain, QueryOptions, QueryVector, RelevancyConfig};

fn main() -> rfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let run = args.next().unwrap_or_else(|| "demo_run".into());
    let text = args.next().unwrap_or_else(|| "supporting".into());
    let out = args.next();
    let run = Path::new(&run);
    let field = load_checkpoint(&run.join("checkpoint.rfld"))?;
    let ds = Dataset::load(&run.join("dataset"))?;
    let scene = ds.scene.as_ref().expect("demo dataset carries its scene");
    let canon = RelevancyConfig::canonical(&ds.relation_vocab)?;
    let q = QueryVector::from_text(&ds.relation_vocab, &text)?;
    let opts = QueryOptions::default();
    let cam = &ds.cameras[0];
    let gt = render_view(scene, cam);
    for (click_id, dir) in [(1, Direction::Subject), (1, Direction::Object), (2, Direction::Object), (2, Direction::Subject)] {
        let px = pick_pixel(&gt.instance, cam.width, click_id).expect("instance visible");
        let click = click_to_query(&field, cam, px, &opts)?;
        let res = query_relation(&field, &click, &q, &canon, Domain::Frame(cam), dir, &opts)?;
        let means = region_means(&res.scores, &gt.instance);
        let mask = top_fraction_mask(&res.scores, Some(&res.valid), 0.5)?;
        let ious: Vec<String> = [1u16, 2]
            .iter()
            .map(|id| {
                let g: Vec<bool> = gt.instance.iter().map(|v| v == id).collect();
                format!("{}:{:.3}", ds.class_of(*id).unwrap_or("?"), mask_iou(&mask, &g))
            })
            .collect();
        println!(
            "click {} {:?} '{text}': mean rho bg {:.3} box {:.3} sphere {:.3}  IoU {}",
            ds.class_of(click_id).unwrap_or("?"),
            dir,
            means.get(&0).unwrap_or(&0.0),
            means.get(&1).unwrap_or(&0.0),
            means.get(&2).unwrap_or(&0.0),
            ious.join(" ")
        );
        if let Some(out) = &out {
            res.write(Path::new(out), &format!("click{click_id}_{dir:?}").to_lowercase())?;
        }
    }
    Ok(())
}
