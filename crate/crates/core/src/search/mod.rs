//! Iterative k-opt local search over orders of a bag of word units.

pub mod graph;
pub mod moves;
pub(crate) mod step;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::WordUnitSeq;

pub use graph::AuxGraph;
pub use moves::{apply_move, enumerate_cut_candidates, rank_kopt_moves, CutStrategy, KOptMove, RankedMove};
pub use step::{
    ibis_search, ibis_step, random_kopt_search, random_kopt_step, search_from_order, Algorithm, StepOutcome,
};

/// Minimum improvement for a candidate to replace the incumbent.
pub const ACCEPT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k_set: Vec<usize>,
    /// Number of top-ranked moves the proposal batch is drawn from.
    pub pool_size: usize,
    /// Candidates scored per step.
    pub batch: usize,
    /// Consecutive non-improving steps before stopping.
    pub patience: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub frozen_prefix: usize,
    pub frozen_suffix: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            k_set: vec![3, 4, 5],
            pool_size: 512,
            batch: 128,
            patience: 128,
            max_steps: 4096,
            seed: 0,
            frozen_prefix: 0,
            frozen_suffix: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_set.is_empty() || self.k_set.iter().any(|k| !(moves::MIN_K..=moves::MAX_K).contains(k)) {
            return Err(Error::InvalidConfig(format!("k-set {:?} must be a nonempty subset of {{3,4,5}}", self.k_set)));
        }
        if self.batch == 0 || self.batch > self.pool_size {
            return Err(Error::InvalidConfig(format!(
                "batch size {} must lie in 1..={} (the pool size)",
                self.batch, self.pool_size
            )));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn has_frozen(&self) -> bool {
        self.frozen_prefix > 0 || self.frozen_suffix > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Init,
    KOpt,
    Replace,
}

/// One line of a search trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub nll: f64,
    pub nll_per_token: f64,
    pub accepted: bool,
    /// Cut count of a k-opt step, 0 otherwise.
    pub k: usize,
    /// Cumulative batch-scoring requests so far.
    pub scorer_calls: usize,
    /// Cumulative next-token matrix requests so far.
    pub matrix_calls: usize,
    /// Graph-predicted change of the accepted move.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_delta: Option<f64>,
    pub kind: StepKind,
}

#[derive(Debug, Clone)]
pub struct SearchState {
    pub best: WordUnitSeq,
    pub best_nll: f64,
    pub graph: Option<AuxGraph>,
    pub steps: usize,
    pub steps_since_improvement: usize,
    /// Batches of complete sequences scored.
    pub scorer_calls: usize,
    /// Next-token matrices requested, for graph builds and replacement rows.
    pub matrix_calls: usize,
    pub trace: Vec<StepRecord>,
    /// Positions of `best` that a replacement step may rewrite; moves with
    /// their units.
    pub replaceable: Vec<bool>,
    kopt_steps: usize,
    token_count: usize,
}

impl SearchState {
    pub(crate) fn new(best: WordUnitSeq, best_nll: f64, graph: Option<AuxGraph>) -> Self {
        let matrix_calls = usize::from(graph.is_some());
        let token_count = best.token_count();
        let replaceable = vec![false; best.len()];
        let mut state = SearchState {
            best,
            best_nll,
            graph,
            steps: 0,
            steps_since_improvement: 0,
            scorer_calls: 1,
            matrix_calls,
            trace: Vec::new(),
            replaceable,
            kopt_steps: 0,
            token_count,
        };
        state.record(false, 0, None, StepKind::Init);
        state
    }

    /// Scores `seq` (and builds its graph for the ranked variant) as the
    /// starting point of a search.
    pub fn init<S: crate::Scorer + ?Sized>(seq: WordUnitSeq, scorer: &S, algorithm: Algorithm) -> Result<Self> {
        step::init_state(seq, scorer, algorithm)
    }

    /// NLL per subtoken, not counting the end token.
    pub fn nll_per_token(&self) -> f64 {
        self.best_nll / self.token_count.max(1) as f64
    }

    pub(crate) fn record(&mut self, accepted: bool, k: usize, predicted_delta: Option<f64>, kind: StepKind) {
        self.trace.push(StepRecord {
            step: self.steps,
            nll: self.best_nll,
            nll_per_token: self.nll_per_token(),
            accepted,
            k,
            scorer_calls: self.scorer_calls,
            matrix_calls: self.matrix_calls,
            predicted_delta,
            kind,
        });
    }

    /// Installs a strictly better incumbent.
    pub(crate) fn accept(&mut self, best: WordUnitSeq, nll: f64, replaceable: Vec<bool>) {
        self.token_count = best.token_count();
        self.best = best;
        self.best_nll = nll;
        self.replaceable = replaceable;
        self.steps_since_improvement = 0;
    }

    pub fn finished(&self, config: &SearchConfig) -> bool {
        self.steps_since_improvement >= config.patience || self.steps >= config.max_steps
    }

    /// Trace as newline-delimited JSON records.
    pub fn trace_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}
