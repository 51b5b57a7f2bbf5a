//! Write a binary index, read it back and show how damaged files are reported.
//!
//! `cargo run --example index_roundtrip`

use traffic_rag::embedding::EmbeddingVector;
use traffic_rag::vector_index::{decode_index, encode_index, load_index, save_index, VectorDatabase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut db = VectorDatabase::new(3)?;
    db.insert(7, EmbeddingVector::new(vec![1.0, 0.0, 0.0])?)?;
    db.insert(2, EmbeddingVector::new(vec![0.6, 0.8, 0.0])?)?;
    db.insert(40, EmbeddingVector::new(vec![0.0, -1.0, 0.25])?)?;

    let bytes = encode_index(&db);
    println!("{} records of dim {} -> {} bytes", db.len(), db.dim(), bytes.len());
    println!("header: {:02x?}", &bytes[..18]);

    let path = std::env::temp_dir().join("traffic-rag-example.idx");
    save_index(&db, &path)?;
    assert_eq!(load_index(&path)?, db);
    println!("reloaded {} unchanged", path.display());

    let damaged: [(&str, Vec<u8>); 4] = [
        ("truncated", bytes[..bytes.len() - 5].to_vec()),
        ("wrong magic", [b"XXXX", &bytes[4..]].concat()),
        ("version 9", [&bytes[..4], &9u16.to_le_bytes(), &bytes[6..]].concat()),
        ("trailing bytes", [&bytes[..], &[0u8; 3]].concat()),
    ];
    for (label, b) in damaged {
        println!("{label:>15}: {}", decode_index(&b).unwrap_err());
    }
    Ok(())
}
