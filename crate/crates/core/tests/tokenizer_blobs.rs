use std::collections::HashMap;

use irgen::identifiers::random_identifiers;
use irgen::io::{make_synthetic, SynthConfig};
use irgen::tokenizer::{train_tokenizer, TokenizerConfig};
use irgen::Identifier;

/// Share of rows whose first token's majority class matches their own.
fn first_level_purity(ids: &[Identifier], labels: &[u32]) -> f64 {
    let mut counts: HashMap<u32, HashMap<u32, usize>> = HashMap::new();
    for (id, &l) in ids.iter().zip(labels) {
        *counts.entry(id.tokens()[0]).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts.values().map(|m| m.values().copied().max().unwrap()).sum();
    majority as f64 / ids.len() as f64
}

#[test]
fn first_level_tokens_follow_classes() {
    let ds = make_synthetic(&SynthConfig::default()).unwrap();
    let cfg = TokenizerConfig {
        levels: 4,
        codebook_size: 16,
        ..Default::default()
    };
    let tok = train_tokenizer(&ds, &cfg).unwrap().tokenizer;
    let ids = tok.identifiers(ds.embeddings()).unwrap();
    let semantic = first_level_purity(&ids, ds.labels());
    let random = first_level_purity(&random_identifiers(ids.len(), 4, 16, 0), ds.labels());
    // 16 first-level tokens for 20 classes caps purity at 0.8.
    assert!(semantic >= 0.7, "semantic purity {semantic}");
    assert!(semantic > random + 0.4, "semantic {semantic} vs random {random}");
}
