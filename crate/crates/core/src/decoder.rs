//! Beam search with weighted decoding.
//!
//! A candidate extending hypothesis `y<t` with word `w` scores
//! `score(y<t) + log P(w | y<t, x) + Σ_i w_i·f_i(w; y<t, x)`. Features with
//! weight `-inf` prune any candidate on which they fire, which turns the
//! repetition features into n-gram blocking.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_special, TokenId, EOS};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::features::{DecodingState, FeatureId, FeatureWeights, Features, HypothesisView};
use crate::model::{flatten_prefix, ControlSetting, NextTokenQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub min_len: usize,
    /// Number of hypotheses returned; `None` means `beam_size`.
    pub n_best: Option<usize>,
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 20,
            max_len: 40,
            min_len: 1,
            n_best: None,
            length_normalize: false,
        }
    }
}

impl BeamConfig {
    pub fn n_best(&self) -> usize {
        self.n_best.unwrap_or(self.beam_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 0 < max_len and min_len <= max_len".into()));
        }
        let n = self.n_best();
        if n == 0 || n > self.beam_size {
            return Err(Error::Config("n_best must lie in 1..=beam_size".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; ends with the end marker iff `finished`.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub feature_score: f64,
    pub total: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens without the end marker.
    pub fn words(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    fn key(&self, normalize: bool) -> f64 {
        if normalize && !self.tokens.is_empty() {
            self.total / self.tokens.len() as f64
        } else {
            self.total
        }
    }
}

fn rank(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

struct Candidate {
    parent: usize,
    token: TokenId,
    log_prob: f64,
    feature: f64,
    total: f64,
}

/// Runs beam search and returns up to `n_best` hypotheses, best first.
/// Ties are broken by the lexicographically smaller token-id sequence.
pub fn beam_search(
    engine: &Engine,
    state: &DecodingState,
    weights: &FeatureWeights,
    controls: &[ControlSetting],
    config: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    config.validate()?;
    let model = engine.model();
    model.check_controls(controls)?;
    let features = engine.features(state);
    let base = flatten_prefix(&state.context_tokens(), state.own_speaker);
    let vocab_size = model.vocab_size() as TokenId;
    let candidates_ids: Vec<TokenId> = (0..vocab_size)
        .filter(|&t| t == EOS || !is_special(t))
        .collect();
    let active_weights: Vec<_> = weights.active().collect();
    // the search may stop early only if no step can raise a score
    let can_stop_early = weights.max_step_gain() <= 0.0;
    let n_best = config.n_best();

    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        feature_score: 0.0,
        total: 0.0,
        finished: false,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    let mut prefix = base.clone();

    for step in 0..config.max_len {
        let mut candidates: Vec<Candidate> = Vec::new();
        let mut pruned_by: BTreeSet<FeatureId> = BTreeSet::new();
        for (pi, hyp) in active.iter().enumerate() {
            prefix.truncate(base.len());
            prefix.extend_from_slice(&hyp.tokens);
            let dist = model.next_token_distribution(&NextTokenQuery {
                prefix: &prefix,
                controls,
            })?;
            let view = HypothesisView::new(&hyp.tokens);
            'words: for &w in &candidates_ids {
                if w == EOS && step < config.min_len {
                    continue;
                }
                let mut feature = 0.0;
                for &(id, weight) in &active_weights {
                    match weight.apply(features.value(id, w, &view)) {
                        Some(s) => feature += s,
                        None => {
                            pruned_by.insert(id);
                            continue 'words;
                        }
                    }
                }
                let log_prob = dist[w as usize].ln();
                candidates.push(Candidate {
                    parent: pi,
                    token: w,
                    log_prob,
                    feature,
                    total: hyp.total + log_prob + feature,
                });
            }
        }
        if candidates.is_empty() {
            if pool.is_empty() {
                return Err(Error::BeamExhausted {
                    step,
                    features: pruned_by.into_iter().collect(),
                });
            }
            active.clear();
            break;
        }
        candidates.sort_by(|a, b| {
            b.total.total_cmp(&a.total).then_with(|| {
                active[a.parent]
                    .tokens
                    .cmp(&active[b.parent].tokens)
                    .then(a.token.cmp(&b.token))
            })
        });

        let mut next = Vec::with_capacity(config.beam_size);
        for (r, c) in candidates.iter().enumerate() {
            if r >= config.beam_size && next.len() >= config.beam_size {
                break;
            }
            let parent = &active[c.parent];
            let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
            tokens.extend_from_slice(&parent.tokens);
            tokens.push(c.token);
            let hyp = Hypothesis {
                tokens,
                log_prob: parent.log_prob + c.log_prob,
                feature_score: parent.feature_score + c.feature,
                total: c.total,
                finished: c.token == EOS,
            };
            if hyp.finished {
                if r < config.beam_size {
                    pool.push(hyp);
                }
            } else if next.len() < config.beam_size {
                next.push(hyp);
            }
        }
        active = next;
        if active.is_empty() {
            break;
        }
        if can_stop_early && !config.length_normalize && pool.len() >= n_best {
            pool.sort_by(|a, b| rank(a.total, &a.tokens, b.total, &b.tokens));
            let best_active = active
                .iter()
                .map(|h| h.total)
                .fold(f64::NEG_INFINITY, f64::max);
            if pool[n_best - 1].total >= best_active {
                active.clear();
                break;
            }
        }
    }
    // hypotheses that hit max_len without ending
    pool.extend(active);

    let normalize = config.length_normalize;
    pool.sort_by(|a, b| rank(a.key(normalize), &a.tokens, b.key(normalize), &b.tokens));
    pool.truncate(n_best);
    Ok(pool)
}

/// Rescores complete hypotheses as `total + Σ_t Σ_i w_i·f_i` over each full
/// token sequence and stable-sorts them, best first.
pub fn rerank(
    hypotheses: Vec<Hypothesis>,
    rerank_weights: &FeatureWeights,
    features: &Features<'_>,
) -> Vec<Hypothesis> {
    if rerank_weights.is_empty() {
        return hypotheses;
    }
    let mut scored: Vec<(f64, Hypothesis)> = hypotheses
        .into_iter()
        .map(|h| {
            let s = h.total + features.sequence_score(rerank_weights, &h.tokens);
            (s, h)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().map(|(_, h)| h).collect()
}

/// Controls, weights and beam settings for one agent. Controls stay fixed
/// for a whole dialogue unless an interactive caller changes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub name: String,
    pub controls: Vec<ControlSetting>,
    pub weights: FeatureWeights,
    pub rerank_weights: FeatureWeights,
    pub beam: BeamConfig,
    pub persona: Vec<String>,
}

impl AgentConfig {
    pub fn plain(name: &str) -> Self {
        AgentConfig {
            name: name.to_string(),
            controls: Vec::new(),
            weights: FeatureWeights::new(),
            rerank_weights: FeatureWeights::new(),
            beam: BeamConfig::default(),
            persona: Vec::new(),
        }
    }
}

/// Beam search, optional reranking, and the best hypothesis's words.
pub fn decode_utterance(
    engine: &Engine,
    agent: &AgentConfig,
    state: &DecodingState,
) -> Result<Vec<TokenId>> {
    let hyps = beam_search(engine, state, &agent.weights, &agent.controls, &agent.beam)?;
    let hyps = rerank(hyps, &agent.rerank_weights, &engine.features(state));
    Ok(hyps
        .first()
        .map(|h| h.words().to_vec())
        .unwrap_or_default())
}
