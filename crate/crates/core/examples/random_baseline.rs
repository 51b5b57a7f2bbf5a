//! Score a uniform random guesser on balanced 4-option items.
//!
//! `cargo run --release --example random_baseline [n_items]`

use traffic_rag::backend::UniformRandomMock;
use traffic_rag::eval::{render_markdown, run_eval, EvalOptions, PipelineMode};
use traffic_rag::fixtures::balanced_mcq_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(10_000);
    let items = balanced_mcq_dataset(n, 4, 1);
    let backend = UniformRandomMock::new(7, 4)?;
    let report = run_eval(&items, PipelineMode::base(), None, &backend, &EvalOptions::default())?;
    print!("{}", render_markdown(std::slice::from_ref(&report)));
    println!(
        "\n{} / {} correct, {} unparseable; chance is 25%",
        report.overall.correct, report.overall.total, report.unparseable_count
    );
    Ok(())
}
