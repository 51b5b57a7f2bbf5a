//! Run Base, +CoT and +RAG on a fixture where each answer sits in exactly one
//! corpus chunk, using a mock model that answers correctly only when it sees
//! that chunk.
//!
//! `cargo run --example planted_fact_ablation`

use std::sync::Arc;

use traffic_rag::embedding::HashEmbedder;
use traffic_rag::eval::{run_ablation, EvalOptions};
use traffic_rag::fixtures::planted_fact_fixture;
use traffic_rag::retrieval::Retriever;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = planted_fact_fixture(60, 3);
    println!(
        "corpus: {} chunks; dataset: {} items",
        fx.corpus.len(),
        fx.dataset.len()
    );
    println!("sample item: {}", fx.dataset[0].question);
    println!("its fact:    {}\n", fx.facts[0].fact);

    let retriever = Retriever::build(fx.corpus.clone(), Arc::new(HashEmbedder::with_seed(0, 768)?))?;
    let top = retriever.retrieve(&fx.dataset[0].question, 1)?;
    println!(
        "top hit for the sample: {:?}\n",
        retriever.corpus().get(top.ranked[0].chunk_id).map(|c| &c.text)
    );

    let report = run_ablation(
        &fx.dataset,
        &retriever,
        &fx.knowledge_mock(),
        5,
        &EvalOptions::default(),
    )?;
    print!("{}", report.to_markdown());
    Ok(())
}
