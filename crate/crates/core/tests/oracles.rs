mod common;

use ibis_core::oracle::{exhaustive_argmax, held_karp_bigram, DEFAULT_N_MAX};
use ibis_core::search::moves::next_permutation;
use ibis_core::search::AuxGraph;
use ibis_core::{rng_from_seed, Bag, NGramModel, Smoothing, Vocab, WordUnitSeq};
use rand::Rng;

fn brute_force(graph: &AuxGraph) -> f64 {
    let mut perm: Vec<usize> = (0..graph.len()).collect();
    let mut best = f64::INFINITY;
    loop {
        best = best.min(graph.tour_weight(&perm));
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}

#[test]
fn held_karp_matches_enumeration() {
    let mut rng = rng_from_seed(1);
    for _ in 0..5 {
        let w: Vec<Vec<f64>> = (0..9).map(|_| (0..9).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let graph = AuxGraph::from_weights(w).unwrap();
        let (tour, weight) = held_karp_bigram(&graph).unwrap();
        let mut sorted = tour.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        assert!((graph.tour_weight(&tour) - weight).abs() < 1e-9);
        assert!((weight - brute_force(&graph)).abs() < 1e-9);
    }
}

#[test]
fn symmetric_tours_reverse() {
    // With equal start and end costs, a symmetric matrix gives every tour
    // the weight of its reversal.
    let mut rng = rng_from_seed(2);
    let n = 7;
    let mut w = vec![vec![0.0; n + 1]; n + 1];
    let edge: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
    for p in 0..n {
        w[0][p] = edge[p];
        w[p + 1][n] = edge[p];
        for q in 0..p {
            let x = rng.gen_range(0.0..5.0);
            w[p + 1][q] = x;
            w[q + 1][p] = x;
        }
    }
    let graph = AuxGraph::from_weights(w).unwrap();
    let (tour, weight) = held_karp_bigram(&graph).unwrap();
    let reversed: Vec<usize> = tour.iter().rev().copied().collect();
    assert!((graph.tour_weight(&reversed) - weight).abs() < 1e-9);
}

#[test]
fn single_unit_tour() {
    let lines = ["a b", "a c"];
    let vocab = Vocab::from_corpus(&lines, false);
    let lm = NGramModel::train_on_text(&lines, vocab.clone(), 2, Smoothing::AddK(1.0)).unwrap();
    let a = vocab.get("a").unwrap();
    let seq = WordUnitSeq::new(vec![ibis_core::WordUnit::single(a)]);
    let (tour, weight) = held_karp_bigram(&AuxGraph::build(&lm, &seq).unwrap()).unwrap();
    assert_eq!(tour, vec![0]);
    let expected = -lm.prob(&[lm.bos()], a).unwrap().ln() - lm.prob(&[lm.bos(), a], lm.eos()).unwrap().ln();
    assert!((weight - expected).abs() < 1e-12);
}

#[test]
fn oracles_agree_on_toy_bags() {
    let t = common::toy();
    let lm = t.model(2);
    let mut rng = rng_from_seed(3);
    for n in [3, 3, 4, 5, 7] {
        let bag: Bag = t.bag(n, &mut rng);
        let (order, nll) = exhaustive_argmax(&bag, &[], &lm, DEFAULT_N_MAX).unwrap();
        let start = WordUnitSeq::new(bag.expand());
        let (tour, weight) = held_karp_bigram(&AuxGraph::build(&lm, &start).unwrap()).unwrap();
        assert!((nll - weight).abs() < 1e-9);
        let hk_order = WordUnitSeq::new(tour.iter().map(|&p| start.units[p].clone()).collect());
        assert!((lm.seq_nll(&hk_order).unwrap() - lm.seq_nll(&order).unwrap()).abs() < 1e-9);
    }
}
