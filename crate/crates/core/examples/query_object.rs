//! Open-vocabulary object query on every camera of a trained run; prints the
//! mean relevancy inside each ground-truth instance.
//!
//! cargo run --release --example query_object -- <run_dir> [text]

use std::path::Path;

use rfield::data::raytrace::render_view;
use rfield::data::Dataset;
use rfield::field::load_checkpoint;
use rfield::query::{query_object, region_means, Domain, QueryOptions, QueryVector};

fn main() -> rfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let run = args.next().unwrap_or_else(|| "demo_run".into());
    let text = args.next().unwrap_or_else(|| "sphere".into());
    let run = Path::new(&run);
    let field = load_checkpoint(&run.join("checkpoint.rfld"))?;
    let ds = Dataset::load(&run.join("dataset"))?;
    let scene = ds.scene.as_ref().expect("synthetic dataset");
    let q = QueryVector::from_text(&ds.object_vocab, &text)?;
    for cam in ds.cameras.iter().step_by(5) {
        let r = query_object(&field, &q, Domain::Frame(cam), &QueryOptions::default())?;
        let means = region_means(&r.scores, &render_view(scene, cam).instance);
        let row: Vec<String> = means
            .iter()
            .map(|(id, m)| format!("{}={m:.3}", if *id == 0 { "background" } else { ds.class_of(*id).unwrap_or("?") }))
            .collect();
        println!("camera {:2}  '{text}'  {}", cam.id, row.join("  "));
    }
    Ok(())
}
