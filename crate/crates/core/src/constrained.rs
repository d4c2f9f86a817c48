//! Generation under constraints: fixed length, required units, frozen
//! prefix and suffix. Filler units are rewritten by replacement steps that
//! alternate with ordinary k-opt steps.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::oracle;
use crate::scorer::{score_complete, Scorer};
use crate::search::step::{feasible_ks, init_state, kopt_step, argmin};
use crate::search::{Algorithm, SearchConfig, SearchState, StepKind, StepOutcome, ACCEPT_EPS};
use crate::tokenize::{flatten, Bag, TokenId, WordUnit, WordUnitSeq};
use crate::{rng_from_seed, SeedRng};

pub const DEFAULT_TEMPERATURE: f64 = 1.5;
/// Size of the replacement vocabulary drawn from the scorer itself.
pub const SCORER_TOPK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConstraints {
    pub required: Bag,
    pub total_length: usize,
    pub prefix: Vec<WordUnit>,
    pub suffix: Vec<WordUnit>,
    /// Candidate fillers; duplicates are ignored.
    pub replacement_vocab: Vec<WordUnit>,
    pub temperature: f64,
}

impl GenConstraints {
    pub fn new(required: Bag, total_length: usize) -> Self {
        GenConstraints {
            required,
            total_length,
            prefix: Vec::new(),
            suffix: Vec::new(),
            replacement_vocab: Vec::new(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn fillers(&self) -> usize {
        self.total_length - self.required.len() - self.prefix.len() - self.suffix.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fixed = self.required.len() + self.prefix.len() + self.suffix.len();
        if fixed > self.total_length {
            return Err(Error::InvalidConstraints(format!(
                "{fixed} fixed units do not fit in length {}",
                self.total_length
            )));
        }
        if self.total_length == 0 {
            return Err(Error::InvalidConstraints("length must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConstraints(format!("temperature {} must be finite and positive", self.temperature)));
        }
        if fixed < self.total_length && self.replacement_vocab.is_empty() {
            return Err(Error::InvalidConstraints("filler positions need a nonempty replacement vocabulary".into()));
        }
        Ok(())
    }

    fn distinct_vocab(&self) -> Vec<WordUnit> {
        let mut v = self.replacement_vocab.clone();
        v.sort();
        v.dedup();
        v
    }
}

/// Rewrites one random replaceable unit. Proposals are drawn without
/// replacement from the scorer's next-unit distribution at that position,
/// flattened by `temperature`; the incumbent unit is never proposed. No step
/// is counted and no randomness consumed when nothing is replaceable.
pub fn replace_word_step<S: Scorer + ?Sized, R: Rng + ?Sized>(
    state: &mut SearchState,
    scorer: &S,
    vocab: &[WordUnit],
    temperature: f64,
    batch: usize,
    rng: &mut R,
) -> Result<StepOutcome> {
    let positions: Vec<usize> = (0..state.best.len()).filter(|&i| state.replaceable[i]).collect();
    if positions.is_empty() || vocab.is_empty() {
        return Ok(StepOutcome::NoOp);
    }
    let pos = positions[rng.gen_range(0..positions.len())];
    let incumbent = state.best.units[pos].clone();

    let mut ctx = state.best.context.clone();
    ctx.extend(flatten(&state.best.units[..pos]));
    let m = scorer.next_token_matrix(&ctx, &[], vocab)?;
    state.matrix_calls += 1;
    let row = m.row(0);
    let open: Vec<usize> = (0..vocab.len()).filter(|&i| vocab[i] != incumbent).collect();
    let floor = open.iter().map(|&i| row[i]).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = open.iter().map(|&i| (-(row[i] - floor) / temperature).exp()).collect();
    let live: Vec<usize> = (0..open.len()).filter(|&j| weights[j] > 0.0).collect();

    state.steps += 1;
    if live.is_empty() {
        state.steps_since_improvement += 1;
        state.record(false, 0, None, StepKind::Replace);
        return Ok(StepOutcome::Rejected);
    }
    let amount = batch.min(live.len());
    let mut picked: Vec<usize> = index::sample_weighted(rng, live.len(), |j| weights[live[j]], amount)
        .map_err(|e| Error::InvalidInput(format!("replacement sampling failed: {e}")))?
        .into_iter()
        .map(|j| open[live[j]])
        .collect();
    picked.sort_unstable();

    let orders: Vec<Vec<WordUnit>> = picked
        .iter()
        .map(|&i| {
            let mut units = state.best.units.clone();
            units[pos] = vocab[i].clone();
            units
        })
        .collect();
    let flat: Vec<Vec<TokenId>> = orders.iter().map(|o| flatten(o)).collect();
    let nlls = score_complete(scorer, &state.best.context, &flat)?;
    state.scorer_calls += 1;
    let (best_i, best_nll) = argmin(&nlls);
    if best_nll < state.best_nll - ACCEPT_EPS {
        let replaceable = state.replaceable.clone();
        let seq = WordUnitSeq::with_context(orders[best_i].clone(), state.best.context.clone());
        state.accept(seq, best_nll, replaceable);
        if state.graph.is_some() {
            state.graph = Some(crate::search::AuxGraph::build(scorer, &state.best)?);
            state.matrix_calls += 1;
        }
        state.record(true, 0, None, StepKind::Replace);
        Ok(StepOutcome::Accepted)
    } else {
        state.steps_since_improvement += 1;
        state.record(false, 0, None, StepKind::Replace);
        Ok(StepOutcome::Rejected)
    }
}

/// Searches for a likely sequence meeting `constraints`, alternating one
/// k-opt step with one replacement step until patience runs out. The frozen
/// region sizes of `config` are taken from the constraints.
pub fn constrained_search<S: Scorer + ?Sized>(
    constraints: &GenConstraints,
    context: &[TokenId],
    scorer: &S,
    config: &SearchConfig,
) -> Result<SearchState> {
    constraints.validate()?;
    let config = SearchConfig {
        frozen_prefix: constraints.prefix.len(),
        frozen_suffix: constraints.suffix.len(),
        ..config.clone()
    };
    config.validate()?;
    let vocab = constraints.distinct_vocab();
    let fillers = constraints.fillers();

    if fillers == 0 && !config.has_frozen() && constraints.required.len() <= 2 {
        let (best, nll) = oracle::exhaustive_argmax(&constraints.required, context, scorer, oracle::DEFAULT_N_MAX)?;
        return Ok(SearchState::new(best, nll, None));
    }

    let mut rng: SeedRng = rng_from_seed(config.seed);
    let mut middle: Vec<(WordUnit, bool)> = constraints.required.expand().into_iter().map(|u| (u, false)).collect();
    for _ in 0..fillers {
        middle.push((vocab[rng.gen_range(0..vocab.len())].clone(), true));
    }
    middle.shuffle(&mut rng);

    let mut units = constraints.prefix.clone();
    let mut replaceable = vec![false; units.len()];
    for (u, r) in middle {
        units.push(u);
        replaceable.push(r);
    }
    units.extend(constraints.suffix.iter().cloned());
    replaceable.resize(units.len(), false);

    let mut state = init_state(WordUnitSeq::with_context(units, context.to_vec()), scorer, Algorithm::Ibis)?;
    state.replaceable = replaceable;
    let kopt = !feasible_ks(&config, state.best.len()).is_empty();
    loop {
        if state.finished(&config) {
            break;
        }
        if kopt {
            kopt_step(&mut state, scorer, &config, Algorithm::Ibis, &mut rng)?;
            if state.finished(&config) {
                break;
            }
        }
        let outcome = replace_word_step(&mut state, scorer, &vocab, constraints.temperature, config.batch, &mut rng)?;
        if outcome == StepOutcome::NoOp && !kopt {
            break;
        }
    }
    Ok(state)
}

/// Where filler candidates come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VocabSource {
    /// A file with one unit per line.
    File(String),
    /// The scorer's most likely units around the required ones.
    ScorerTopK,
}

/// One line of a constraint file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintRecord {
    #[serde(default)]
    pub prefix: String,
    #[serde(default)]
    pub suffix: String,
    #[serde(default)]
    pub required: Vec<String>,
    pub length: usize,
    #[serde(default)]
    pub vocab: Option<String>,
}

impl ConstraintRecord {
    pub fn parse_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Format(format!("bad constraint record: {e}")))
    }

    pub fn vocab_source(&self) -> Option<VocabSource> {
        self.vocab.as_deref().map(|v| match v {
            "scorer-topk" => VocabSource::ScorerTopK,
            path => VocabSource::File(path.to_owned()),
        })
    }
}

/// The `k` outcome tokens with the highest mean probability across the
/// positions of `anchor` (the required units in canonical order), as
/// single-token units. The end token is excluded.
pub fn scorer_topk<S: Scorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    anchor: &[WordUnit],
    outcomes: &[TokenId],
    k: usize,
) -> Result<Vec<WordUnit>> {
    let end = scorer.end_token();
    let set: Vec<WordUnit> = outcomes.iter().filter(|&&t| Some(t) != end).map(|&t| WordUnit::single(t)).collect();
    let m = scorer.next_token_matrix(context, anchor, &set)?;
    let mut mean: Vec<(usize, f64)> = (0..set.len())
        .map(|c| (c, (0..m.rows()).map(|r| (-m.get(r, c)).exp()).sum::<f64>() / m.rows() as f64))
        .collect();
    mean.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(mean.into_iter().take(k).map(|(c, _)| set[c].clone()).collect())
}
