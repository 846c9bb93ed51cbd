//! Runs the full pipeline on generated handwriting and prints the report.
//!
//! `cargo run --release -p writerid --example synthetic_benchmark [out_dir]`

use std::time::Instant;

use writerid::pipeline::{Pipeline, PipelineConfig, Stage};
use writerid::synth::{corpus, write_dataset, PageLayout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keep = std::env::args().nth(1).map(std::path::PathBuf::from);
    let tmp = tempfile::tempdir()?;
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    let layout = PageLayout::default();

    let t0 = Instant::now();
    let train = write_dataset(&root.join("background"), &corpus(20, 4, 100, &layout, 7)?)?;
    let test = write_dataset(&root.join("eval"), &corpus(20, 4, 0, &layout, 7)?)?;
    println!("generated documents in {:.1?}", t0.elapsed());

    let text = format!(
        r#"
seed = 1
out_dir = "{out}"
[dataset]
train_manifest = "{train}"
test_manifest = "{test}"
[patches]
stride = 2
max_patches = 200
[cnn]
c1_filters = 8
c2_filters = 24
hidden_nodes = 32
[gmm]
components = 16
"#,
        out = root.join("out").display(),
        train = train.display(),
        test = test.display(),
    );
    let overrides: Vec<String> = std::env::var("OVERRIDES")
        .map(|s| s.split_whitespace().map(String::from).collect())
        .unwrap_or_default();
    let config = PipelineConfig::from_toml_str(&text, &overrides, std::path::Path::new(""))?;
    let pipeline = Pipeline::new(config)?;
    for stage in Stage::ALL {
        let t = Instant::now();
        pipeline.run(stage)?;
        println!("{stage:>10}: {:.1?}", t.elapsed());
    }
    print!("{}", std::fs::read_to_string(pipeline.report_path())?);
    Ok(())
}
