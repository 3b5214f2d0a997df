// SPDX-License-Identifier: Apache-2.0

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tabular softmax policy over `contexts x vocab` logits, temperature 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy<T> {
    contexts: usize,
    vocab: usize,
    logits: Vec<T>,
}

impl<T: Scalar> ToyPolicy<T> {
    /// Uniform policy (all logits zero).
    pub fn uniform(contexts: usize, vocab: usize) -> Self {
        Self {
            contexts,
            vocab,
            logits: vec![T::zero(); contexts * vocab],
        }
    }

    pub fn from_logits(contexts: usize, vocab: usize, logits: Vec<T>) -> Result<Self> {
        if contexts == 0 || vocab == 0 {
            return Err(Error::InvalidArgument("policy needs at least one context and token".into()));
        }
        if logits.len() != contexts * vocab {
            return Err(Error::InvalidArgument(format!(
                "expected {} logits, got {}",
                contexts * vocab,
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("policy logits"));
        }
        Ok(Self { contexts, vocab, logits })
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(contexts: usize, vocab: usize, scale: f64, rng: &mut R) -> Self {
        let logits = (0..contexts * vocab)
            .map(|_| T::lit(rng.random_range(-scale..=scale)))
            .collect();
        Self { contexts, vocab, logits }
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [T] {
        &mut self.logits
    }

    pub fn index(&self, ctx: usize, token: usize) -> usize {
        ctx * self.vocab + token
    }

    fn row(&self, ctx: usize) -> &[T] {
        &self.logits[ctx * self.vocab..(ctx + 1) * self.vocab]
    }

    /// Log-probabilities at `ctx`, via a max-shifted log-sum-exp.
    pub fn log_probs(&self, ctx: usize) -> Vec<T> {
        let row = self.row(ctx);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&z| (z - m).exp()).fold(T::zero(), |a, b| a + b).ln();
        row.iter().map(|&z| z - lse).collect()
    }

    pub fn probs(&self, ctx: usize) -> Vec<T> {
        self.log_probs(ctx).into_iter().map(T::exp).collect()
    }

    pub fn log_prob(&self, ctx: usize, token: usize) -> T {
        self.log_probs(ctx)[token]
    }

    pub fn sample<R: Rng + ?Sized>(&self, ctx: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let p = self.probs(ctx);
        for (k, pk) in p.iter().enumerate() {
            acc += pk.as_f64();
            if u < acc {
                return k;
            }
        }
        self.vocab - 1
    }

    /// `KL(self || other)` at `ctx`, exact over the vocabulary.
    pub fn kl(&self, other: &Self, ctx: usize) -> T {
        let lp = self.log_probs(ctx);
        let lq = other.log_probs(ctx);
        lp.iter()
            .zip(&lq)
            .map(|(&a, &b)| a.exp() * (a - b))
            .fold(T::zero(), |x, y| x + y)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.contexts == other.contexts && self.vocab == other.vocab
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rows_normalise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = ToyPolicy::<f64>::random(5, 10, 20.0, &mut rng);
        for c in 0..5 {
            let s: f64 = p.probs(c).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_with_itself_is_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let p = ToyPolicy::<f64>::random(2, 4, 1.0, &mut rng);
        let q = ToyPolicy::<f64>::random(2, 4, 1.0, &mut rng);
        assert_eq!(p.kl(&p, 0), 0.0);
        assert!(p.kl(&q, 1) > 0.0);
    }

    #[test]
    fn shape_checked() {
        assert!(ToyPolicy::<f64>::from_logits(2, 3, vec![0.0; 5]).is_err());
        assert!(ToyPolicy::<f64>::from_logits(1, 2, vec![0.0, f64::NAN]).is_err());
    }
}
