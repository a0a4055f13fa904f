//! Scores candidate embeddings against seed images and keeps the ones that
//! look like a building facade.
//!
//! Run with `cargo run --example similarity_filter [t_sim]`.

use geosift::embedding::{read_embeddings, write_embeddings, EmbeddingMatrix};
use geosift::simfilter::filter_by_similarity;

fn main() -> geosift::Result<()> {
    let t_sim: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.7);

    let seeds = EmbeddingMatrix::from_rows([
        ("facade-a", vec![0.9, 0.1, 0.0, 0.2]),
        ("facade-b", vec![0.7, 0.3, 0.1, 0.0]),
    ])?;
    let candidates = EmbeddingMatrix::from_rows([
        ("street-front", vec![0.8, 0.2, 0.05, 0.1]),
        ("food-closeup", vec![0.0, 0.1, 0.9, 0.3]),
        ("selfie", vec![0.1, 0.9, 0.2, 0.0]),
        ("shop-window", vec![0.6, 0.4, 0.3, 0.1]),
    ])?;

    // embeddings travel between tools in the EMB1 binary format
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("candidates.emb");
    write_embeddings(&candidates, &path)?;
    let candidates = read_embeddings(&path)?;

    for (id, out) in candidates.row_ids().iter().zip(filter_by_similarity(&candidates, &seeds, t_sim)?) {
        let verdict = if out.pass { "keep" } else { "drop" };
        println!("{id:<14} p_sim {:.3}  {verdict}", out.p_sim);
    }
    Ok(())
}
