use ibis_core::tokenize::{bag_of, detokenize, normalize_whitespace, random_order, tokenize, Mode};
use ibis_core::{Bag, Vocab};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;

const WORDS: [&str; 8] = ["the", "cat", "down", "##curved", "bills", ",", ".", "sat"];

fn vocab() -> Vocab {
    Vocab::from_surfaces(WORDS)
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["the", "cat", "downcurved", "bills", ",", ".", "sat", "down"]).prop_map(str::to_owned)
}

proptest! {
    #[test]
    fn detokenize_inverts_tokenize(words in prop::collection::vec(word(), 1..20), glue in prop::collection::vec(prop::bool::ANY, 20)) {
        // Punctuation may or may not be attached to the preceding word.
        let mut text = String::new();
        for (i, w) in words.iter().enumerate() {
            if i > 0 && !(glue[i] && (w == "," || w == ".")) {
                text.push(' ');
            }
            text.push_str(w);
        }
        let v = vocab();
        let seq = tokenize(&text, Mode::WordAtomic, &v, false).unwrap();
        prop_assert_eq!(seq.len(), words.len());
        prop_assert_eq!(detokenize(&seq, &v), normalize_whitespace(&text));
        let sub = tokenize(&text, Mode::Subtoken, &v, false).unwrap();
        prop_assert_eq!(sub.flatten(), seq.flatten());
    }

    #[test]
    fn shuffles_conserve_the_bag(words in prop::collection::vec(word(), 1..20), seed in any::<u64>()) {
        let v = vocab();
        let seq = tokenize(&words.join(" "), Mode::WordAtomic, &v, false).unwrap();
        let bag = bag_of(&seq);
        prop_assert_eq!(bag_of(&random_order(&bag, seed)), bag);
    }
}

#[test]
fn split_words_stay_atomic() {
    let v = vocab();
    let seq = tokenize("downcurved bills", Mode::WordAtomic, &v, false).unwrap();
    assert_eq!(seq.len(), 2);
    assert_eq!(seq.units[0].len(), 2);
    assert_eq!(tokenize("downcurved bills", Mode::Subtoken, &v, false).unwrap().len(), 3);
}

#[test]
fn bags_count_duplicates() {
    let v = vocab();
    let bag = bag_of(&tokenize("the cat the", Mode::WordAtomic, &v, false).unwrap());
    let the = tokenize("the", Mode::WordAtomic, &v, false).unwrap().units[0].clone();
    assert_eq!(bag.count(&the), 2);
    assert_eq!(bag.len(), 3);
    assert_eq!(bag.distinct_len(), 2);
}

#[test]
fn shuffle_is_uniform() {
    let v = vocab();
    let bag = bag_of(&tokenize("the cat sat", Mode::WordAtomic, &v, false).unwrap());
    let single = bag_of(&tokenize("cat", Mode::WordAtomic, &v, false).unwrap());
    assert_eq!(random_order(&single, 5).units, single.expand());

    let draws = 6000;
    let mut counts: HashMap<Vec<_>, usize> = HashMap::new();
    for seed in 0..draws {
        *counts.entry(random_order(&bag, seed).units).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    let expected = draws as f64 / 6.0;
    let stat: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(5.0).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat}, p = {p}");
    assert_eq!(random_order(&bag, 17), random_order(&bag, 17));
    assert_eq!(Bag::from_units(random_order(&bag, 3).units), bag);
}
