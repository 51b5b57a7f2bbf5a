//! Embed a small corpus with the deterministic embedder and rank it.
//!
//! `cargo run --example retrieval_top_k -- "who has priority at a four-way stop"`

use std::sync::Arc;

use traffic_rag::corpus::{Category, CorpusBuilder};
use traffic_rag::embedding::HashEmbedder;
use traffic_rag::retrieval::Retriever;

const DOCS: [(&str, Category, &str); 3] = [
    (
        "priority",
        Category::Regulation,
        "At a four-way stop the vehicle that arrived first proceeds first.\n\n\
         Vehicles already on a roundabout have priority over those entering it.\n\n\
         Pedestrians on a zebra crossing have priority over turning vehicles.",
    ),
    (
        "signals",
        Category::Regulation,
        "A red signal means stop and wait behind the line.\n\n\
         A green arrow permits movement only in the direction shown.",
    ),
    (
        "guidance",
        Category::ManagementGuideline,
        "Officers directing traffic override signals and signs.\n\n\
         Temporary signals at road works must be obeyed like permanent ones.",
    ),
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "who has priority on a roundabout".into());

    let mut builder = CorpusBuilder::new();
    for (name, category, text) in DOCS {
        builder.add_document(text, name, category, 1000)?;
    }
    let retriever = Retriever::build(builder.build()?, Arc::new(HashEmbedder::with_seed(0, 768)?))?;

    println!("query: {query}");
    for hit in retriever.retrieve(&query, 3)?.ranked {
        let chunk = retriever.corpus().get(hit.chunk_id).expect("hits come from the corpus");
        println!(
            "  {:.4}  #{} [{}] {}",
            hit.score, hit.chunk_id, chunk.source_doc, chunk.text
        );
    }
    Ok(())
}
