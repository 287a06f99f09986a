use super::ArScorer;
use crate::error::Result;
use crate::real::{relative_error, Precision, Real};
use crate::trie::Identifier;

/// Maximum relative error between the analytic gradient of
/// [`ArScorer::sequence_nll`] and central finite differences over every
/// parameter, evaluated in the requested precision.
pub fn grad_check(scorer: &ArScorer<f32>, context: &[f32], target: &Identifier, precision: Precision) -> Result<f64> {
    // validates the context shape and target once
    scorer.sequence_nll(&scorer.condition(context)?, target)?;
    match precision {
        Precision::F32 => check::<f32>(scorer, context, target, precision),
        Precision::F64 => check::<f64>(scorer, context, target, precision),
    }
}

fn check<G: Real>(scorer: &ArScorer<f32>, context: &[f32], target: &Identifier, precision: Precision) -> Result<f64> {
    let mut s: ArScorer<G> = scorer.cast();
    let input: Vec<G> = context.iter().map(|&v| G::of(v as f64)).collect();
    let (_, grad) = s.nll_and_grad(&s.condition_raw(input.clone()), target)?;
    let h = G::of(precision.fd_step());
    let mut worst = 0f64;
    for i in 0..s.num_params() {
        let orig = s.params()[i];
        s.params_mut()[i] = orig + h;
        let up = s.params()[i];
        let lp = s.sequence_nll(&s.condition_raw(input.clone()), target)?;
        s.params_mut()[i] = orig - h;
        let down = s.params()[i];
        let lm = s.sequence_nll(&s.condition_raw(input.clone()), target)?;
        s.params_mut()[i] = orig;
        let numeric = (lp - lm) / (up - down).f64();
        worst = worst.max(relative_error(grad[i].f64(), numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::seqmodel::ArShape;

    fn tiny(seed: u64, blocks: usize) -> (ArScorer, Vec<f32>, Identifier) {
        let shape = ArShape {
            levels: 3,
            codebook_size: 4,
            input_dim: 5,
            hidden: 8,
            blocks,
            heads: 2,
        };
        let s = ArScorer::new(shape, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let ctx: Vec<f32> = (0..10).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let id = Identifier::new((0..3).map(|_| rng.random_range(0..4)).collect());
        (s, ctx, id)
    }

    #[test]
    fn gradient_matches_differences_in_f64() {
        for seed in 0..3 {
            let (s, ctx, id) = tiny(seed, 2);
            let err = grad_check(&s, &ctx, &id, Precision::F64).unwrap();
            assert!(err <= 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn gradient_matches_differences_in_f32() {
        for seed in 0..3 {
            let (s, ctx, id) = tiny(seed, 1);
            let err = grad_check(&s, &ctx, &id, Precision::F32).unwrap();
            assert!(err <= 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn dead_unit_bias_has_zero_gradient() {
        let (mut s, ctx, id) = tiny(4, 1);
        let hidden = s.shape().hidden;
        let w2 = s.tensor("block0.ff2.weight").unwrap().range();
        let b1 = s.tensor("block0.ff1.bias").unwrap().range();
        let unit = 5;
        for r in 0..hidden {
            s.params_mut()[w2.start + r * 4 * hidden + unit] = 0.0;
        }
        let c = s.condition(&ctx).unwrap();
        let (_, grad) = s.cast::<f64>().nll_and_grad(&s.cast::<f64>().condition(&ctx).unwrap(), &id).unwrap();
        assert_eq!(grad[b1.start + unit], 0.0);
        let base = s.sequence_nll(&c, &id).unwrap();
        s.params_mut()[b1.start + unit] += 0.5;
        let moved = s.sequence_nll(&s.condition(&ctx).unwrap(), &id).unwrap();
        assert_eq!(base, moved);
    }
}
