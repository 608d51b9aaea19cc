//! Full pipeline on the bedroom fixture: file layout, placement, cascaded
//! stylization and renders, then the same cascade with references stripped
//! for comparison.
//!
//! `cargo run --release --example cascade_scene -- [out_dir]`

use std::path::{Path, PathBuf};

use scenestyle::pipeline::{run_pipeline, style_consistency_proxy, PipelineConfig};
use scenestyle::synth::ProceduralBackend;
use scenestyle::texturing::{cascade_stylize, CascadeOptions, NoObserver, ReferenceMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cascade_scene"));
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/bedroom");
    let mut config = PipelineConfig::load(base.join("config.json"))?;
    config.output_dir = out.to_string_lossy().into_owned();

    let outcome = run_pipeline(&config, &base)?;
    println!("cascade order: {:?}", outcome.cascade.order);
    for (id, refs) in &outcome.scene.project.provenance.references {
        println!("  {id} conditioned on {refs:?}");
    }
    let with_refs = style_consistency_proxy(&outcome.scene);

    let mut stripped = outcome.scene.clone();
    let options = CascadeOptions { views: config.views.to_config(), references: ReferenceMode::None, ..Default::default() };
    cascade_stylize(&mut stripped, &ProceduralBackend::default(), &config.style_prompt, config.seed, &options, &mut NoObserver)?;
    let without = style_consistency_proxy(&stripped);

    println!("style-consistency proxy (lower is better): with references {with_refs:.4}, stripped {without:.4}");
    for r in &outcome.renders {
        println!("render {}", r.display());
    }
    Ok(())
}
