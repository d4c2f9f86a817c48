//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.
//!
//! Run with `cargo test --release --test acceptance`.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use ibis_core::beam::beam_order;
use ibis_core::constrained::{constrained_search, replace_word_step, GenConstraints};
use ibis_core::eval::{bleu, perplexity_ratio};
use ibis_core::latent::{eval_latent_schemes, eval_positions, LatentPredictions, Scheme};
use ibis_core::oracle::{exhaustive_argmax, held_karp_bigram, DEFAULT_N_MAX};
use ibis_core::search::moves::next_permutation;
use ibis_core::search::{
    ibis_step, random_kopt_step, search_from_order, Algorithm, AuxGraph, SearchConfig, SearchState, StepRecord,
};
use ibis_core::tokenize::{bag_of, shuffle_bag, TokenId};
use ibis_core::{ibis_search, random_kopt_search, rng_from_seed, Bag, WordUnit, WordUnitSeq};
use rand::Rng;

use common::{toy, Toy};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn criterion(name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let passed = v.passed && in_time;
    println!(
        "{} {name}: {} [{:.1}s of {}s budget{}]",
        if passed { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", over budget" }
    );
    passed
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn tsp_exactness(t: &Toy) -> Verdict {
    let lm = t.model(2);
    let mut rng = rng_from_seed(100);
    let (mut orders_checked, mut worst_tour, mut worst_hk) = (0usize, 0.0f64, 0.0f64);
    for i in 0..200 {
        let n = 1 + i % 8;
        let bag = t.uniform_bag(n, &mut rng);
        let seq = WordUnitSeq::new(shuffle_bag(&bag, &mut rng));
        let graph = AuxGraph::build(&lm, &seq).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            let order: Vec<WordUnit> = perm.iter().map(|&p| seq.units[p].clone()).collect();
            let nll = lm.seq_nll(&WordUnitSeq::new(order)).unwrap();
            worst_tour = worst_tour.max((graph.tour_weight(&perm) - nll).abs());
            orders_checked += 1;
            if !next_permutation(&mut perm) {
                break;
            }
        }
        let (tour, hk) = held_karp_bigram(&graph).unwrap();
        let (_, exact) = exhaustive_argmax(&bag, &[], &lm, DEFAULT_N_MAX).unwrap();
        let tour_nll = lm
            .seq_nll(&WordUnitSeq::new(tour.iter().map(|&p| seq.units[p].clone()).collect()))
            .unwrap();
        worst_hk = worst_hk.max((hk - exact).abs()).max((tour_nll - exact).abs());
    }
    verdict(
        worst_tour <= 1e-9 && worst_hk <= 1e-9,
        format!(
            "{orders_checked} orders over 200 bags, max |tour - nll| = {worst_tour:.2e}, max |held-karp - exhaustive| = {worst_hk:.2e}"
        ),
    )
}

fn ibis_optimality(t: &Toy) -> Verdict {
    let lm = t.model(2);
    let mut rng = rng_from_seed(200);
    let mut hits = 0;
    for i in 0..100 {
        let bag = t.bag(6, &mut rng);
        let (_, opt) = exhaustive_argmax(&bag, &[], &lm, DEFAULT_N_MAX).unwrap();
        let config = SearchConfig { seed: i, ..Default::default() };
        let s = ibis_search(&bag, &[], &lm, &config).unwrap();
        if s.best_nll <= opt + 1e-9 {
            hits += 1;
        }
    }
    verdict(hits >= 90, format!("{hits}/100 bags reach the exhaustive optimum (need 90)"))
}

/// Batch-scoring calls (and those plus matrix calls) until the trace first
/// comes within `target` total NLL.
fn calls_to_reach(trace: &[StepRecord], target: f64) -> (Option<usize>, Option<usize>) {
    let hit = trace.iter().find(|r| r.nll <= target);
    (hit.map(|r| r.scorer_calls), hit.map(|r| r.scorer_calls + r.matrix_calls))
}

fn median(mut xs: Vec<Option<usize>>) -> f64 {
    let key = |x: &Option<usize>| x.map_or(f64::INFINITY, |v| v as f64);
    xs.sort_by(|a, b| key(a).total_cmp(&key(b)));
    let n = xs.len();
    (key(&xs[(n - 1) / 2]) + key(&xs[n / 2])) / 2.0
}

fn heuristic_superiority(t: &Toy) -> Verdict {
    let tri = t.model(3);
    let bi = t.model(2);
    let mut rng = rng_from_seed(300);
    let (mut ibis_calls, mut random_calls) = (Vec::new(), Vec::new());
    let (mut ibis_all, mut random_all) = (Vec::new(), Vec::new());
    for i in 0..50u64 {
        let bag = t.bag(15, &mut rng);
        let config = SearchConfig { seed: i, ..Default::default() };
        let ibis = ibis_search(&bag, &[], &tri, &config).unwrap();
        let random = random_kopt_search(&bag, &[], &tri, &config).unwrap();

        let start = WordUnitSeq::new(bag.expand());
        let (tour, _) = held_karp_bigram(&AuxGraph::build(&bi, &start).unwrap()).unwrap();
        let hk_order = WordUnitSeq::new(tour.iter().map(|&p| start.units[p].clone()).collect());
        let polished = search_from_order(hk_order, &tri, &config, Algorithm::Ibis, &mut rng_from_seed(i)).unwrap();

        let best = ibis.best_nll.min(random.best_nll).min(polished.best_nll);
        let target = best + 0.01 * bag.token_count() as f64;
        let ((a, a_all), (r, r_all)) = (calls_to_reach(&ibis.trace, target), calls_to_reach(&random.trace, target));
        ibis_calls.push(a);
        random_calls.push(r);
        ibis_all.push(a_all);
        random_all.push(r_all);
    }
    let reached = |v: &[Option<usize>]| v.iter().filter(|x| x.is_some()).count();
    let (mi, mr) = (median(ibis_calls.clone()), median(random_calls.clone()));
    verdict(
        mi < mr,
        format!(
            "median scorer calls ibis {mi} vs random k-opt {mr} (ratio {:.2}); with graph matrices counted too {} vs {}; reached best: ibis {}/50, random {}/50",
            mr / mi,
            median(ibis_all),
            median(random_all),
            reached(&ibis_calls),
            reached(&random_calls)
        ),
    )
}

fn beam_checks(t: &Toy) -> Verdict {
    let lm = t.model(3);
    let mut rng = rng_from_seed(400);
    let widths = [1, 2, 4, 16, 120];
    let (mut exact, mut monotone) = (0, 0);
    let mut violations = Vec::new();
    for i in 0..20 {
        let bag = t.bag(5, &mut rng);
        let (opt, opt_nll) = exhaustive_argmax(&bag, &[], &lm, DEFAULT_N_MAX).unwrap();
        let nlls: Vec<f64> = widths.iter().map(|&w| beam_order(&bag, &[], &lm, w, None).unwrap().nll).collect();
        let wide = beam_order(&bag, &[], &lm, 120, None).unwrap();
        if wide.order == opt && (wide.nll - opt_nll).abs() <= 1e-9 {
            exact += 1;
        }
        if nlls.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        } else {
            violations.push(format!("bag {i}: {nlls:.4?}"));
        }
    }
    verdict(
        exact == 20 && monotone == 20,
        format!(
            "width 120 exact on {exact}/20, monotone in width on {monotone}/20{}",
            if violations.is_empty() { String::new() } else { format!(" ({})", violations.join("; ")) }
        ),
    )
}

fn latent_checks(t: &Toy) -> Verdict {
    let tri = t.model(3);
    let uni = t.model(1);
    let mut rng = rng_from_seed(500);
    let corpus: Vec<Vec<TokenId>> =
        (0..50).map(|_| t.seq(&t.source.sentence(60, &mut rng)).flatten()).collect();
    let positions = eval_positions(&corpus, 50, 500);
    let outcomes = tri.outcome_ids();

    let max_gap = |lm: &ibis_core::NGramModel, n: usize, count: usize| -> f64 {
        let mut worst = 0.0f64;
        for &(s, p) in positions.iter().take(count) {
            let window = &corpus[s][p - 50..p];
            let bag = Bag::from_units(window[50 - n..].iter().map(|&w| WordUnit::single(w)));
            let preds = LatentPredictions::compute(lm, &window[..50 - n], &bag, &outcomes).unwrap();
            let dists: Vec<Vec<f64>> = Scheme::ALL.iter().map(|&s| preds.predict(s)).collect();
            for d in &dists[1..] {
                for (a, b) in d.iter().zip(&dists[0]) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    };
    let n1_gap = max_gap(&tri, 1, 500);
    let uni_gap = (1..=5).map(|n| max_gap(&uni, n, 40)).fold(0.0, f64::max);

    let rows = eval_latent_schemes(&tri, &corpus, &[2, 3, 4, 5], 50, 500, &outcomes).unwrap();
    let mut dominance = Vec::new();
    let mut dominated = true;
    for n in 2..=5 {
        let ppl = |s: Scheme| rows.iter().find(|r| r.n == n && r.scheme == s).unwrap().perplexity;
        let (l, r) = (ppl(Scheme::Latent), ppl(Scheme::Random));
        dominated &= l <= r;
        dominance.push(format!("n={n} latent {l:.3} random {r:.3}"));
    }
    verdict(
        n1_gap <= 1e-12 && uni_gap <= 1e-12 && dominated,
        format!(
            "n=1 max gap {n1_gap:.1e}; order-1 scorer max gap {uni_gap:.1e}; {} positions: {}",
            positions.len(),
            dominance.join(", ")
        ),
    )
}

fn contains(outer: &Bag, inner: &Bag) -> bool {
    inner.distinct().all(|(u, c)| outer.count(u) >= c)
}

fn constrained_contracts(t: &Toy) -> Verdict {
    let lm = t.model(3);
    let vocab: Vec<WordUnit> = t.source.words().iter().map(|w| WordUnit::single(t.vocab.get(w).unwrap())).collect();
    let mut rng = rng_from_seed(600);
    let mut ok = 0;
    for seed in 0..100u64 {
        let words = t.seq(&t.source.sentence(8, &mut rng)).units;
        let (p, s, r) = (rng.gen_range(0..=2), rng.gen_range(0..=2), rng.gen_range(1..=4));
        let mut c = GenConstraints::new(Bag::from_units(words[p..p + r].to_vec()), p + r + s + rng.gen_range(0..=3));
        c.prefix = words[..p].to_vec();
        c.suffix = words[8 - s..].to_vec();
        c.replacement_vocab = vocab.clone();
        let config = SearchConfig { seed, ..Default::default() };
        let out = constrained_search(&c, &[], &lm, &config).unwrap().best.units;
        let n = out.len();
        let middle = Bag::from_units(out[p.min(n)..n.saturating_sub(s)].iter().cloned());
        if n == c.total_length && out[..p] == c.prefix[..] && out[n - s..] == c.suffix[..] && contains(&middle, &c.required)
        {
            ok += 1;
        }
    }
    let mut identical = 0;
    for seed in 0..20u64 {
        let bag = t.bag(3 + (seed as usize % 6), &mut rng);
        let c = GenConstraints::new(bag.clone(), bag.len());
        let config = SearchConfig { seed, ..Default::default() };
        let a = constrained_search(&c, &[], &lm, &config).unwrap();
        let b = ibis_search(&bag, &[], &lm, &config).unwrap();
        if a.trace == b.trace && a.best == b.best {
            identical += 1;
        }
    }
    verdict(
        ok == 100 && identical == 20,
        format!("{ok}/100 runs meet every constraint; {identical}/20 empty-vocabulary traces identical to plain search"),
    )
}

fn monotonicity_and_conservation(t: &Toy) -> Verdict {
    let lm = t.model(3);
    let vocab: Vec<WordUnit> = t.source.words().iter().map(|w| WordUnit::single(t.vocab.get(w).unwrap())).collect();
    let mut rng = rng_from_seed(700);
    let config = SearchConfig { batch: 32, pool_size: 128, ..Default::default() };
    let (mut steps, mut bad) = (0, 0);
    while steps < 1000 {
        let bag = t.uniform_bag(rng.gen_range(4..=14), &mut rng);
        let variant = rng.gen_range(0..3);
        let algorithm = if variant == 1 { Algorithm::RandomKopt } else { Algorithm::Ibis };
        let seq = WordUnitSeq::new(shuffle_bag(&bag, &mut rng));
        let mut state = SearchState::init(seq, &lm, algorithm).unwrap();
        if variant == 2 {
            for i in (0..state.best.len()).step_by(3) {
                state.replaceable[i] = true;
            }
        }
        let fixed = |s: &SearchState| {
            Bag::from_units((0..s.best.len()).filter(|&i| !s.replaceable[i]).map(|i| s.best.units[i].clone()))
        };
        let fixed_before = fixed(&state);
        for _ in 0..25 {
            let before = state.best_nll;
            match variant {
                0 => ibis_step(&mut state, &lm, &config, &mut rng).unwrap(),
                1 => random_kopt_step(&mut state, &lm, &config, &mut rng).unwrap(),
                _ if steps % 2 == 0 => ibis_step(&mut state, &lm, &config, &mut rng).unwrap(),
                _ => replace_word_step(&mut state, &lm, &vocab, 1.5, config.batch, &mut rng).unwrap(),
            };
            steps += 1;
            let exact = lm.seq_nll(&state.best).unwrap();
            let conserved = if variant == 2 { fixed(&state) == fixed_before && state.best.len() == bag.len() } else { bag_of(&state.best) == bag };
            if state.best_nll > before || (exact - state.best_nll).abs() > 1e-6 || !conserved {
                bad += 1;
            }
        }
    }
    let mut rng = rng_from_seed(701);
    let sentences: Vec<WordUnitSeq> = (0..50).map(|_| t.seq(&t.source.sentence(12, &mut rng))).collect();
    let self_bleu = bleu(&sentences, &sentences).unwrap();
    let prs_exact = sentences.iter().all(|s| perplexity_ratio(&lm, s, s).unwrap() == 1.0);
    verdict(
        bad == 0 && self_bleu == 100.0 && prs_exact,
        format!("{steps} steps, {bad} violations; BLEU(x,x) = {self_bleu}; PR(x,x) = 1 on all 50: {prs_exact}"),
    )
}

fn determinism(t: &Toy) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, t.corpus[..500].join("\n")).unwrap();
    let model = dir.path().join("model.lm");
    let input = dir.path().join("input.txt");
    let mut rng = rng_from_seed(800);
    let lines: Vec<String> = (0..12).map(|i| t.source.sentence(4 + i, &mut rng)).collect();
    std::fs::write(&input, lines.join("\n")).unwrap();
    let bin = env!("CARGO_BIN_EXE_ibis");
    let train = Command::new(bin)
        .args(["train-lm", corpus.to_str().unwrap(), "--out", model.to_str().unwrap(), "--order", "3"])
        .status()
        .unwrap();
    let scorer = format!("ngram:{}", model.display());
    let run = || {
        Command::new(bin)
            .args(["shuffle", input.to_str().unwrap(), "--scorer", &scorer, "--seed", "7"])
            .output()
            .unwrap()
    };
    let (a, b) = (run(), run());
    let same = a.stdout == b.stdout && !a.stdout.is_empty();
    verdict(
        train.success() && a.status.success() && b.status.success() && same,
        format!("two shuffle runs over {} lines: {} bytes each, identical: {same}", lines.len(), a.stdout.len()),
    )
}

fn main() {
    let t = toy();
    let results = [
        criterion("tsp-exactness", minutes(2), || tsp_exactness(&t)),
        criterion("ibis-optimality-rate", minutes(5), || ibis_optimality(&t)),
        criterion("heuristic-superiority", minutes(15), || heuristic_superiority(&t)),
        criterion("beam-exhaustiveness", minutes(2), || beam_checks(&t)),
        criterion("latent-collapse-and-dominance", minutes(10), || latent_checks(&t)),
        criterion("constrained-contracts", minutes(5), || constrained_contracts(&t)),
        criterion("monotonicity-and-conservation", minutes(5), || monotonicity_and_conservation(&t)),
        criterion("determinism", minutes(2), || determinism(&t)),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
