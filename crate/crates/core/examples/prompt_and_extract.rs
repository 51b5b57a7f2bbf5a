//! Render the three prompt layouts for one question and parse some replies.
//!
//! `cargo run --example prompt_and_extract`

use std::collections::HashMap;

use traffic_rag::prompting::assemble_prompt_with;
use traffic_rag::prompting::{assemble_prompt, extract_answer, letter_for, PromptTemplate};
use traffic_rag::vector_index::{RetrievalResult, ScoredChunk};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let question = "The light turns amber as you approach the line. What should you do?";
    let options: Vec<String> = ["Accelerate through", "Stop if it is safe to do so", "Sound the horn"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let texts: HashMap<u64, String> = HashMap::from([
        (
            4,
            "Amber means stop unless you have crossed the line or stopping could cause a collision.".to_string(),
        ),
        (
            9,
            "Red and amber together mean stop; do not proceed until green shows.".to_string(),
        ),
    ]);
    let hits = RetrievalResult {
        ranked: vec![
            ScoredChunk {
                chunk_id: 4,
                score: 0.71,
            },
            ScoredChunk {
                chunk_id: 9,
                score: 0.42,
            },
        ],
    };

    for (label, cot, rag) in [("Base", false, false), ("+ CoT", true, false), ("+ RAG", true, true)] {
        let bundle = assemble_prompt(question, &options, &hits, &texts, cot, rag)?;
        println!("===== {label} =====\n{}\n", bundle.rendered);
    }

    let template = PromptTemplate::custom("Q: {question}\n{options}\n{answer_format}")?;
    let bundle = assemble_prompt_with(&template, question, &options, &hits, &texts, false, false)?;
    println!("===== custom template =====\n{}\n", bundle.rendered);

    for reply in [
        "Amber means stop if safe. Answer: B",
        "I think A... no. answer: b? Final Answer: B",
        "Between A and C, C seems wrong, so B.",
        "It depends on the situation.",
    ] {
        match extract_answer(reply, &options) {
            Ok(a) => println!(
                "{reply:?}\n  -> {} via {:?}, bytes {:?}",
                letter_for(a.choice_index).unwrap(),
                a.method,
                a.matched_span
            ),
            Err(e) => println!("{reply:?}\n  -> {e}"),
        }
    }
    Ok(())
}
