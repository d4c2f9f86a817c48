//! Seeded Markov-chain text for tests, benchmarks and scaled-down
//! experiments. Each word prefers a few successors, so n-gram models trained
//! on the output have a clear preferred order.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::Rng;

use crate::rng_from_seed;

#[derive(Debug, Clone)]
pub struct MarkovSource {
    words: Vec<String>,
    /// Row 0 is the start state; row `i + 1` follows word `i`.
    transitions: Vec<WeightedIndex<f64>>,
}

impl MarkovSource {
    /// `vocab_size` words; every state puts most of its mass on `branching`
    /// random successors and spreads `leak` uniformly over all words.
    pub fn new(vocab_size: usize, branching: usize, leak: f64, seed: u64) -> Self {
        assert!(vocab_size > 0 && branching > 0 && (0.0..=1.0).contains(&leak));
        let mut rng = rng_from_seed(seed);
        let words: Vec<String> = (0..vocab_size).map(|i| format!("w{i}")).collect();
        let transitions = (0..=vocab_size)
            .map(|_| {
                let mut weights = vec![leak / vocab_size as f64; vocab_size];
                let succ = index::sample(&mut rng, vocab_size, branching.min(vocab_size));
                let raw: Vec<f64> = succ.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                let total: f64 = raw.iter().sum();
                for (s, r) in succ.iter().zip(&raw) {
                    weights[s] += (1.0 - leak) * r / total;
                }
                WeightedIndex::new(weights).expect("weights are positive")
            })
            .collect();
        MarkovSource { words, transitions }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Word indices of a `len`-word walk from the start state.
    pub fn walk<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut state = 0;
        (0..len)
            .map(|_| {
                let w = self.transitions[state].sample(rng);
                state = w + 1;
                w
            })
            .collect()
    }

    pub fn sentence<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> String {
        self.walk(len, rng).into_iter().map(|w| self.words[w].as_str()).collect::<Vec<_>>().join(" ")
    }

    /// `lines` sentences with lengths uniform in `min_len..=max_len`.
    pub fn corpus<R: Rng + ?Sized>(&self, lines: usize, min_len: usize, max_len: usize, rng: &mut R) -> Vec<String> {
        (0..lines)
            .map(|_| {
                let len = rng.gen_range(min_len..=max_len);
                self.sentence(len, rng)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_sized() {
        let a = MarkovSource::new(20, 3, 0.05, 7);
        let b = MarkovSource::new(20, 3, 0.05, 7);
        let ca = a.corpus(10, 4, 8, &mut rng_from_seed(1));
        let cb = b.corpus(10, 4, 8, &mut rng_from_seed(1));
        assert_eq!(ca, cb);
        assert!(ca.iter().all(|l| (4..=8).contains(&l.split(' ').count())));
    }
}
