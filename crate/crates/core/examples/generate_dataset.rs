//! Renders the demo scene from a camera ring and writes a dataset directory.
//!
//! cargo run --example generate_dataset -- /tmp/demo_ds

use rfield::data::{Dataset, DatasetConfig, SceneSpec};

fn main() -> rfield::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "demo_dataset".into());
    let ds = Dataset::generate(&SceneSpec::demo(), &DatasetConfig::default(), 42)?;
    let manifest = ds.save(out.as_ref())?;
    println!("{} images, {} files -> {out}", ds.images.len(), manifest.files.len());
    for e in &ds.graph.edges {
        println!(
            "  {} {} {}",
            ds.class_of(e.subject).unwrap_or("?"),
            e.predicate,
            ds.class_of(e.object).unwrap_or("?")
        );
    }
    Ok(())
}
