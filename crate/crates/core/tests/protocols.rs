use irgen::dataset::{LabeledDataset, Split};
use irgen::eval::{fresh_data_protocol, holdout_rows, run_ablation, throughput_bench, Engine, EngineConfig, EvalConfig};
use irgen::identifiers::{HkmConfig, IdScheme, IdentifiersConfig};
use irgen::io::{make_synthetic, SynthConfig};
use irgen::search::SearchConfig;
use irgen::seqmodel::ArConfig;
use irgen::tokenizer::TokenizerConfig;

fn small() -> (LabeledDataset, EngineConfig, SearchConfig, EvalConfig) {
    let ds = make_synthetic(&SynthConfig {
        classes: 4,
        per_class: 20,
        dim: 8,
        spread: 0.1,
        seed: 3,
    })
    .unwrap();
    let cfg = EngineConfig {
        tokenizer: TokenizerConfig {
            levels: 2,
            codebook_size: 4,
            epochs: 3,
            ..Default::default()
        },
        identifiers: IdentifiersConfig {
            hkm: HkmConfig {
                branching: 2,
                depth: 2,
                ..Default::default()
            },
            ..Default::default()
        },
        ar: ArConfig {
            hidden: 16,
            blocks: 1,
            heads: 2,
            epochs: 3,
            ..Default::default()
        },
    };
    let search = SearchConfig {
        beam_width: 5,
        k: 5,
        ..Default::default()
    };
    let eval = EvalConfig {
        ks: vec![1, 5],
        bench_queries: 4,
        bench_repeats: 1,
        ..Default::default()
    };
    (ds, cfg, search, eval)
}

#[test]
fn zero_holdout_reproduces_the_standard_engine() {
    let (ds, cfg, search, eval) = small();
    let eval = EvalConfig {
        holdout_fraction: 0.0,
        ..eval
    };
    let r = fresh_data_protocol(&ds, &cfg, &search, &eval, None).unwrap();
    assert_eq!(r.heldout_rows, 0);
    assert_eq!(r.fresh, r.full);
    assert_eq!(r.trie_ids_after, r.trie_ids_before);
}

#[test]
fn fresh_data_bookkeeping() {
    let (ds, cfg, search, eval) = small();
    let held = holdout_rows(&ds, 0.5, 0);
    // Four gallery rows per class, half withheld.
    assert_eq!(held.len(), 8);
    assert!(held.iter().all(|&r| ds.splits()[r] == Split::Gallery));
    let r = fresh_data_protocol(&ds, &cfg, &search, &eval, None).unwrap();
    assert_eq!(r.heldout_rows, 8);
    assert_eq!(r.trie_ids_after, r.trie_ids_before + r.new_ids);
    assert!(r.new_ids <= 8);
}

#[test]
fn ablation_grid_shape() {
    let (ds, cfg, search, eval) = small();
    let eval = EvalConfig {
        lengths: vec![1, 2],
        ..eval
    };
    let report = run_ablation(&ds, &cfg, &search, &eval).unwrap();
    let plan: Vec<(IdScheme, usize)> = report.rows.iter().map(|r| (r.scheme, r.length)).collect();
    assert_eq!(
        plan,
        [(IdScheme::Semantic, 2), (IdScheme::Random, 2), (IdScheme::Hkm, 2), (IdScheme::Semantic, 1)]
    );
    for r in &report.rows {
        assert_eq!(r.metrics.precision.len(), 2);
        assert_eq!(r.metrics.queries, ds.indices(Split::Query).len());
    }
    let mut tsv = Vec::new();
    report.write_tsv(&mut tsv).unwrap();
    assert_eq!(String::from_utf8(tsv).unwrap().lines().count(), 5);
}

#[test]
fn inserted_rows_are_retrievable_and_bench_has_one_row_per_width() {
    let (ds, cfg, search, eval) = small();
    let mut engine = Engine::train(&ds, &cfg, IdScheme::Semantic).unwrap();
    let extra = ds.indices(Split::Query);
    engine.insert(&extra).unwrap();
    for &q in &extra {
        let id = engine.tokenizer.stack.encode(engine.features.row(q)).unwrap().id;
        assert!(engine.trie.contains(&id));
    }
    let rows = throughput_bench(&engine, &extra[..eval.bench_queries], &eval.bench_beams, search.k, 1).unwrap();
    assert_eq!(rows.iter().map(|r| r.beam_width).collect::<Vec<_>>(), eval.bench_beams);

    let mut random = Engine::train(&ds, &cfg, IdScheme::Random).unwrap();
    assert!(random.insert(&extra).is_err());
}
