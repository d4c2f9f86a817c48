#![allow(dead_code)]

use ibis_core::synthetic::MarkovSource;
use ibis_core::tokenize::{tokenize, Mode};
use ibis_core::{rng_from_seed, Bag, NGramModel, Smoothing, Vocab, WordUnit, WordUnitSeq};
use rand::Rng;

pub struct Toy {
    pub source: MarkovSource,
    pub vocab: Vocab,
    pub corpus: Vec<String>,
}

/// A 30-word Markov source and a 3000-sentence training corpus drawn from it.
pub fn toy() -> Toy {
    let source = MarkovSource::new(30, 3, 0.05, 11);
    let corpus = source.corpus(3000, 5, 15, &mut rng_from_seed(12));
    let vocab = Vocab::from_corpus(&corpus, false);
    Toy { source, vocab, corpus }
}

impl Toy {
    pub fn model(&self, order: usize) -> NGramModel {
        NGramModel::train_on_text(&self.corpus, self.vocab.clone(), order, Smoothing::AddK(0.01)).unwrap()
    }

    pub fn seq(&self, text: &str) -> WordUnitSeq {
        tokenize(text, Mode::WordAtomic, &self.vocab, false).unwrap()
    }

    /// Bag of a fresh `n`-word sentence from the source.
    pub fn bag<R: Rng>(&self, n: usize, rng: &mut R) -> Bag {
        let s = self.source.sentence(n, rng);
        Bag::from_units(self.seq(&s).units)
    }

    /// `n` words drawn uniformly from the vocabulary.
    pub fn uniform_bag<R: Rng>(&self, n: usize, rng: &mut R) -> Bag {
        let words = self.source.words();
        Bag::from_units((0..n).map(|_| WordUnit::single(self.vocab.get(&words[rng.gen_range(0..words.len())]).unwrap())))
    }
}
