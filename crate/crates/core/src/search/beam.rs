use std::cmp::Ordering;

use super::{Hit, RetrievalResult};
use crate::error::{Error, Result};
use crate::seqmodel::{ArScorer, Context, DecodeState};
use crate::trie::{IdTrie, Identifier, NodeId};

struct Entry {
    prefix: Vec<u32>,
    node: NodeId,
    score: f64,
    state: DecodeState,
}

fn rank(a_score: f64, a_prefix: &[u32], b_score: f64, b_prefix: &[u32]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_prefix.cmp(b_prefix))
}

/// Identifiers surviving a width-`beam_width` search, best first, with their
/// summed level-masked log-probabilities.
pub fn beam_search_ids(
    scorer: &ArScorer,
    ctx: &Context,
    trie: &IdTrie,
    beam_width: usize,
) -> Result<Vec<(Identifier, f64)>> {
    if beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    if trie.vocab() != scorer.vocab() {
        return Err(Error::Shape(format!(
            "trie vocabulary {:?} does not match scorer vocabulary {:?}",
            trie.vocab(),
            scorer.vocab()
        )));
    }
    let mut beam = vec![Entry {
        prefix: Vec::new(),
        node: IdTrie::ROOT,
        score: 0.0,
        state: scorer.start(),
    }];
    for _ in 0..trie.depth() {
        // (parent, token, child, score)
        let mut cand: Vec<(usize, u32, NodeId, f64)> = Vec::new();
        for (pi, e) in beam.iter_mut().enumerate() {
            let prev = e.prefix.last().copied();
            let lp = scorer.advance_log_probs(ctx, &mut e.state, prev)?;
            for &(tok, child) in trie.children(e.node) {
                cand.push((pi, tok, child, e.score + lp[tok as usize]));
            }
        }
        let key = |c: &(usize, u32, NodeId, f64)| {
            let mut p = beam[c.0].prefix.clone();
            p.push(c.1);
            p
        };
        let mut keyed: Vec<(Vec<u32>, usize, NodeId, f64)> =
            cand.iter().map(|c| (key(c), c.0, c.2, c.3)).collect();
        keyed.sort_by(|a, b| rank(a.3, &a.0, b.3, &b.0));
        keyed.truncate(beam_width);
        beam = keyed
            .into_iter()
            .map(|(prefix, parent, node, score)| Entry {
                prefix,
                node,
                score,
                state: beam[parent].state.clone(),
            })
            .collect();
    }
    Ok(beam.into_iter().map(|e| (Identifier::new(e.prefix), e.score)).collect())
}

/// Trie-constrained beam search. Surviving identifiers expand to their owner
/// rows (ascending) and the first `k` rows are returned.
pub fn beam_search(
    scorer: &ArScorer,
    ctx: &Context,
    trie: &IdTrie,
    beam_width: usize,
    k: usize,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let ids = beam_search_ids(scorer, ctx, trie, beam_width)?;
    let mut hits = Vec::with_capacity(k);
    'outer: for (id, score) in &ids {
        let owners = trie.owners(id).expect("beam paths end at stored identifiers");
        for &row in owners {
            if hits.len() == k {
                break 'outer;
            }
            hits.push(Hit { row, score: *score });
        }
    }
    let truncated = hits.len() < k;
    Ok(RetrievalResult { hits, truncated })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::seqmodel::ArShape;
    use crate::trie::TokenVocabulary;

    fn scorer(levels: usize, size: usize, seed: u64) -> ArScorer {
        ArScorer::new(
            ArShape {
                levels,
                codebook_size: size,
                input_dim: 6,
                hidden: 16,
                blocks: 2,
                heads: 4,
            },
            seed,
        )
        .unwrap()
    }

    fn random_ids(n: usize, levels: usize, size: u32, rng: &mut ChaCha8Rng) -> Vec<Identifier> {
        (0..n)
            .map(|_| Identifier::new((0..levels).map(|_| rng.random_range(0..size)).collect()))
            .collect()
    }

    #[test]
    fn single_identifier_always_returned() {
        let s = scorer(3, 4, 1);
        let id = Identifier::new(vec![2, 0, 3]);
        let trie = IdTrie::build(s.vocab(), &[id], &[7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for w in [1, 3, 10] {
            let x: Vec<f32> = (0..6).map(|_| rng.random()).collect();
            let ctx = s.condition(&x).unwrap();
            let r = beam_search(&s, &ctx, &trie, w, 1).unwrap();
            assert_eq!(r.rows(), vec![7]);
            assert!(!r.truncated);
        }
    }

    #[test]
    fn full_width_matches_exhaustive_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = scorer(3, 8, 6);
        let ids = random_ids(120, 3, 8, &mut rng);
        let owners: Vec<usize> = (0..ids.len()).collect();
        let trie = IdTrie::build(s.vocab(), &ids, &owners).unwrap();
        let x: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ctx = s.condition(&x).unwrap();
        let got = beam_search_ids(&s, &ctx, &trie, 256).unwrap();
        let mut expect: Vec<(Identifier, f64)> = trie
            .leaves()
            .into_iter()
            .map(|(id, _)| {
                let nll = s.sequence_nll(&ctx, &id).unwrap();
                (id, -nll)
            })
            .collect();
        expect.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(got, expect);
    }

    #[test]
    fn width_one_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = scorer(3, 5, 9);
        let ids = random_ids(40, 3, 5, &mut rng);
        let owners: Vec<usize> = (0..ids.len()).collect();
        let trie = IdTrie::build(s.vocab(), &ids, &owners).unwrap();
        let x: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ctx = s.condition(&x).unwrap();
        let mut prefix = Vec::new();
        for m in 0..3 {
            let logits = s.step_logits(&ctx, &prefix).unwrap();
            let lp = crate::seqmodel::level_log_probs(&logits, s.vocab(), m);
            let best = trie
                .allowed(&prefix)
                .unwrap()
                .into_iter()
                .max_by(|&a, &b| lp[a as usize].total_cmp(&lp[b as usize]).then(b.cmp(&a)))
                .unwrap();
            prefix.push(best);
        }
        let got = beam_search_ids(&s, &ctx, &trie, 1).unwrap();
        assert_eq!(got[0].0.tokens(), &prefix[..]);
    }

    #[test]
    fn duplicates_expand_in_row_order_and_truncate() {
        let s = scorer(2, 3, 2);
        let ids = vec![Identifier::new(vec![1, 1]); 3];
        let trie = IdTrie::build(s.vocab(), &ids, &[9, 4, 6]).unwrap();
        let ctx = s.condition(&[0.1; 6]).unwrap();
        let r = beam_search(&s, &ctx, &trie, 4, 5).unwrap();
        assert_eq!(r.rows(), vec![4, 6, 9]);
        assert!(r.truncated);
        assert!(r.hits.iter().all(|h| h.score == r.hits[0].score));
    }

    #[test]
    fn outputs_are_stored_identifiers() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = scorer(3, 6, 13);
        let ids = random_ids(60, 3, 6, &mut rng);
        let owners: Vec<usize> = (0..ids.len()).collect();
        let trie = IdTrie::build(s.vocab(), &ids, &owners).unwrap();
        for _ in 0..20 {
            let x: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ctx = s.condition(&x).unwrap();
            for (id, _) in beam_search_ids(&s, &ctx, &trie, 5).unwrap() {
                assert!(ids.contains(&id));
            }
        }
    }

    #[test]
    fn rejects_mismatched_vocabulary() {
        let s = scorer(2, 3, 2);
        let trie = IdTrie::build(TokenVocabulary::new(2, 4).unwrap(), &[Identifier::new(vec![0, 0])], &[0]).unwrap();
        let ctx = s.condition(&[0.0; 6]).unwrap();
        assert!(beam_search(&s, &ctx, &trie, 2, 1).is_err());
        let ok = IdTrie::build(s.vocab(), &[Identifier::new(vec![0, 0])], &[0]).unwrap();
        assert!(beam_search(&s, &ctx, &ok, 0, 1).is_err());
        assert!(beam_search(&s, &ctx, &ok, 1, 0).is_err());
    }
}
