//! Round-trips an embedding matrix through both supported file formats:
//! the whitespace text format (`token v1 v2 ...` with a `vocab dim`
//! header) and the packed little-endian binary format.
//!
//!     cargo run --example word_vector_io

use kmcnn::embed::{load_word_vectors, VectorFormat};

fn main() -> anyhow::Result<()> {
    let tokens = ["anemia", "aspirin", "brca1", "insulin", "melanoma"];
    let matrix = kmcnn::demo::random_word_vectors(tokens.iter().copied(), 6, 42);
    println!("built {} vectors of dimension {}", matrix.vocab_size(), matrix.dim());

    let dir = tempfile::tempdir()?;
    let text_path = dir.path().join("vectors.txt");
    let bin_path = dir.path().join("vectors.bin");
    matrix.save_text(&text_path)?;
    matrix.save_binary(&bin_path)?;

    let text_size = std::fs::metadata(&text_path)?.len();
    let bin_size = std::fs::metadata(&bin_path)?.len();
    println!("text format: {text_size} bytes, binary format: {bin_size} bytes");

    let from_text = load_word_vectors(&text_path, VectorFormat::Text)?;
    let from_bin = load_word_vectors(&bin_path, VectorFormat::Binary)?;

    for token in tokens {
        let original = matrix.get(token).expect("token was inserted");
        let t = from_text.get(token).expect("text reload has token");
        let b = from_bin.get(token).expect("binary reload has token");
        // Binary stores the exact f32 bits. Text goes through decimal
        // printing, so compare with a small tolerance.
        assert_eq!(original, b, "binary reload must be bit-exact");
        for (x, y) in original.iter().zip(t) {
            assert!((x - y).abs() < 1e-5, "{token}: {x} vs {y}");
        }
    }
    println!("both formats reload correctly (binary bit-exact, text to 1e-5)");

    let preview = std::fs::read_to_string(&text_path)?;
    println!("\ntext file starts with:");
    for line in preview.lines().take(3) {
        let short: String = line.chars().take(60).collect();
        println!("  {short}...");
    }
    Ok(())
}
