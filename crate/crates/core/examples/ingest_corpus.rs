//! Chunk two documents into a corpus and write it as JSONL.
//!
//! `cargo run --example ingest_corpus [out.jsonl]`

use traffic_rag::corpus::{load_corpus, save_corpus, Category, CorpusBuilder};

const HANDBOOK: &str = "\
A solid white line may not be crossed. A broken white line may be crossed when it is safe to do so.

At a four-way stop, the vehicle that arrived first proceeds first. If two vehicles arrive together, \
the one on the right has priority. Emergency vehicles with sirens always have priority!

Speed limits near schools apply on weekdays between 7:00 and 17:00. The limit is 30 km/h unless signed otherwise.";

const INCIDENTS: &str = "\
Cyclist struck by a turning lorry at the junction of Mill Road. The lorry failed to check its nearside mirror.

Car reversed out of a driveway into the path of a scooter. Visibility was limited by a parked van.";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("traffic-corpus.jsonl").display().to_string());

    let mut builder = CorpusBuilder::new();
    builder.add_document(HANDBOOK, "handbook", Category::Regulation, 120)?;
    builder.add_document(INCIDENTS, "incidents", Category::AbnormalEvent, 120)?;
    let corpus = builder.build()?;

    println!(
        "{} chunks from {} documents (budget 120 chars):",
        corpus.len(),
        corpus.doc_count()
    );
    for c in corpus.chunks() {
        println!(
            "  #{:<2} {:<10} {:>3}..{:<3} {:>3} chars  {}",
            c.chunk_id,
            c.source_doc,
            c.char_span.start,
            c.char_span.end,
            c.text.chars().count(),
            c.text
        );
    }

    save_corpus(&corpus, &out)?;
    assert_eq!(load_corpus(&out)?, corpus);
    println!("wrote {out} and reloaded it unchanged");
    Ok(())
}
