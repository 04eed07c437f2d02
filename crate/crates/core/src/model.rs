//! Interpolated n-gram language model with per-bucket conditional tables.
//!
//! The base distribution for a prefix is built bottom-up:
//! `P_k = λ·f_k + (1−λ)·P_{k−1}`, grounded at the uniform distribution,
//! where `f_k` is the relative frequency of successors of the last `k−1`
//! prefix tokens (levels whose context was never seen are skipped). A control
//! setting `z` mixes in the bucket table: `μ·P_bucket + (1−μ)·P_global`.
//! Several controls combine as a renormalized product of their mixtures.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, ControlSpec, Speaker, TokenId, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_LAMBDA: f64 = 0.4;
pub const DEFAULT_MU: f64 = 0.7;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextCounts {
    pub total: u64,
    pub successors: HashMap<TokenId, u64>,
}

/// Successor counts keyed by context, for every context length below `order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CountsRepr", into = "CountsRepr")]
pub struct NgramCounts {
    order: usize,
    levels: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

type LevelRepr = Vec<(Vec<TokenId>, Vec<(TokenId, u64)>)>;

#[derive(Serialize, Deserialize)]
struct CountsRepr {
    order: usize,
    levels: Vec<LevelRepr>,
}

impl From<NgramCounts> for CountsRepr {
    fn from(c: NgramCounts) -> Self {
        let levels = c
            .levels
            .into_iter()
            .map(|level| {
                let sorted: BTreeMap<_, _> = level.into_iter().collect();
                sorted
                    .into_iter()
                    .map(|(ctx, cc)| {
                        let succ: BTreeMap<_, _> = cc.successors.into_iter().collect();
                        (ctx, succ.into_iter().collect())
                    })
                    .collect()
            })
            .collect();
        CountsRepr {
            order: c.order,
            levels,
        }
    }
}

impl TryFrom<CountsRepr> for NgramCounts {
    type Error = String;

    fn try_from(r: CountsRepr) -> std::result::Result<Self, String> {
        if r.order == 0 || r.levels.len() != r.order {
            return Err("n-gram table order does not match its levels".into());
        }
        let mut levels = Vec::with_capacity(r.order);
        for (k, level) in r.levels.into_iter().enumerate() {
            let mut map = HashMap::with_capacity(level.len());
            for (ctx, succ) in level {
                if ctx.len() != k {
                    return Err(format!("context of length {} stored at level {k}", ctx.len()));
                }
                let mut cc = ContextCounts::default();
                for (t, c) in succ {
                    if c == 0 {
                        return Err("zero count stored".into());
                    }
                    cc.total += c;
                    cc.successors.insert(t, c);
                }
                map.insert(ctx, cc);
            }
            levels.push(map);
        }
        Ok(NgramCounts {
            order: r.order,
            levels,
        })
    }
}

impl NgramCounts {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        NgramCounts {
            order,
            levels: vec![HashMap::new(); order],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Records `next` following `history` at every context length available.
    pub fn add_event(&mut self, history: &[TokenId], next: TokenId) {
        for k in 0..self.order {
            if history.len() < k {
                break;
            }
            let ctx = history[history.len() - k..].to_vec();
            let cc = self.levels[k].entry(ctx).or_default();
            cc.total += 1;
            *cc.successors.entry(next).or_default() += 1;
        }
    }

    /// Counts for the context of length `len` ending the prefix.
    pub fn context(&self, prefix: &[TokenId], len: usize) -> Option<&ContextCounts> {
        if len >= self.order || prefix.len() < len {
            return None;
        }
        self.levels[len].get(&prefix[prefix.len() - len..])
    }

    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.levels
            .get(context.len())
            .and_then(|l| l.get(context))
            .and_then(|cc| cc.successors.get(&next))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.levels[0].is_empty()
    }

    /// Every stored event as `(context, next, count)`; handy for comparisons.
    pub fn events(&self) -> BTreeMap<(Vec<TokenId>, TokenId), u64> {
        let mut out = BTreeMap::new();
        for level in &self.levels {
            for (ctx, cc) in level {
                for (&t, &c) in &cc.successors {
                    out.insert((ctx.clone(), t), c);
                }
            }
        }
        out
    }

    /// Interpolated distribution over a vocabulary of `vocab_size` ids.
    pub fn distribution(&self, prefix: &[TokenId], lambda: f64, vocab_size: usize) -> Vec<f64> {
        let mut p = vec![1.0 / vocab_size as f64; vocab_size];
        for k in 0..self.order {
            if let Some(cc) = self.context(prefix, k) {
                for x in p.iter_mut() {
                    *x *= 1.0 - lambda;
                }
                let scale = lambda / cc.total as f64;
                for (&t, &c) in &cc.successors {
                    p[t as usize] += scale * c as f64;
                }
            }
        }
        p
    }
}

/// A chosen bucket for one controlled attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ControlSetting {
    pub control: String,
    pub z: u8,
}

impl ControlSetting {
    pub fn new(control: impl Into<String>, z: u8) -> Self {
        ControlSetting {
            control: control.into(),
            z,
        }
    }
}

/// Flattened prefix plus optional control settings.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenQuery<'a> {
    pub prefix: &'a [TokenId],
    pub controls: &'a [ControlSetting],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub order: usize,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            order: DEFAULT_ORDER,
            lambda: DEFAULT_LAMBDA,
            mu: DEFAULT_MU,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("order must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config("lambda must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::Config("mu must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// P(y | x, z) over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalNgramModel {
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub global: NgramCounts,
    pub controls: Vec<ControlSpec>,
    pub per_bucket: BTreeMap<(String, u8), NgramCounts>,
}

/// Flattened token stream the model is conditioned on for a response.
pub fn flatten_prefix(context: &[TokenId], speaker: Speaker) -> Vec<TokenId> {
    let mut prefix = Vec::with_capacity(context.len() + 2);
    prefix.push(BOS);
    prefix.extend_from_slice(context);
    prefix.push(speaker.marker());
    prefix
}

fn add_example(counts: &mut NgramCounts, ex: &AnnotatedExample) {
    let mut stream = flatten_prefix(&ex.context_tokens, ex.speaker);
    for &t in ex.response_tokens.iter().chain(std::iter::once(&EOS)) {
        counts.add_event(&stream, t);
        stream.push(t);
    }
}

/// Relative-frequency estimation of the global table and of one table per
/// `(control, bucket)`; `assignments[c][i]` is example `i`'s bucket under
/// control `c`. Only response tokens (and the end marker) are counted as
/// events; context tokens serve as history.
pub fn train(
    examples: &[AnnotatedExample],
    vocab: Vocabulary,
    params: ModelParams,
    controls: Vec<ControlSpec>,
    assignments: &[Vec<Option<u8>>],
) -> Result<ConditionalNgramModel> {
    params.validate()?;
    if controls.len() != assignments.len() {
        return Err(Error::Config(
            "one bucket assignment list is required per control".into(),
        ));
    }
    let mut global = NgramCounts::new(params.order);
    for ex in examples {
        add_example(&mut global, ex);
    }
    let mut per_bucket = BTreeMap::new();
    for (spec, assign) in controls.iter().zip(assignments) {
        if assign.len() != examples.len() {
            return Err(Error::Config(format!(
                "assignment for `{}` covers {} of {} examples",
                spec.name,
                assign.len(),
                examples.len()
            )));
        }
        let mut tables: Vec<NgramCounts> = (0..spec.num_buckets)
            .map(|_| NgramCounts::new(params.order))
            .collect();
        for (ex, b) in examples.iter().zip(assign) {
            if let Some(b) = b {
                let table = tables.get_mut(*b as usize).ok_or_else(|| Error::UnknownBucket {
                    control: spec.name.clone(),
                    bucket: *b,
                })?;
                add_example(table, ex);
            }
        }
        for (b, table) in tables.into_iter().enumerate() {
            if table.is_empty() {
                return Err(Error::EmptyBucket {
                    control: spec.name.clone(),
                    bucket: b as u8,
                });
            }
            per_bucket.insert((spec.name.clone(), b as u8), table);
        }
    }
    Ok(ConditionalNgramModel {
        vocab,
        params,
        global,
        controls,
        per_bucket,
    })
}

impl ConditionalNgramModel {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn control(&self, name: &str) -> Option<&ControlSpec> {
        self.controls.iter().find(|c| c.name == name)
    }

    pub fn check_controls(&self, controls: &[ControlSetting]) -> Result<()> {
        for c in controls {
            let spec = self
                .control(&c.control)
                .ok_or_else(|| Error::UnknownControl(c.control.clone()))?;
            if c.z >= spec.num_buckets {
                return Err(Error::UnknownBucket {
                    control: c.control.clone(),
                    bucket: c.z,
                });
            }
        }
        Ok(())
    }

    pub fn next_token_distribution(&self, query: &NextTokenQuery<'_>) -> Result<Vec<f64>> {
        self.check_controls(query.controls)?;
        let v = self.vocab_size();
        let lambda = self.params.lambda;
        let global = self.global.distribution(query.prefix, lambda, v);
        if query.controls.is_empty() {
            return Ok(global);
        }
        let mu = self.params.mu;
        let mut combined: Option<Vec<f64>> = None;
        for c in query.controls {
            let table = &self.per_bucket[&(c.control.clone(), c.z)];
            let bucket = table.distribution(query.prefix, lambda, v);
            let mix: Vec<f64> = bucket
                .iter()
                .zip(&global)
                .map(|(b, g)| mu * b + (1.0 - mu) * g)
                .collect();
            combined = Some(match combined {
                None => mix,
                Some(acc) => acc.iter().zip(&mix).map(|(a, b)| a * b).collect(),
            });
        }
        let mut p = combined.expect("at least one control");
        if query.controls.len() > 1 {
            let total: f64 = p.iter().sum();
            for x in &mut p {
                *x /= total;
            }
        }
        Ok(p)
    }

    /// Token-level log probability of a response (plus the end marker).
    pub fn response_log_prob(
        &self,
        context: &[TokenId],
        speaker: Speaker,
        response: &[TokenId],
        controls: &[ControlSetting],
    ) -> Result<(f64, usize)> {
        let mut prefix = flatten_prefix(context, speaker);
        let mut total = 0.0;
        for &t in response.iter().chain(std::iter::once(&EOS)) {
            let p = self.next_token_distribution(&NextTokenQuery {
                prefix: &prefix,
                controls,
            })?;
            total += p[t as usize].ln();
            prefix.push(t);
        }
        Ok((total, response.len() + 1))
    }

    /// `exp` of the mean negative log-likelihood of the response tokens,
    /// end marker included.
    pub fn perplexity(&self, examples: &[AnnotatedExample], controls: &[ControlSetting]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::Validation("perplexity needs at least one example".into()));
        }
        let mut nll = 0.0;
        let mut tokens = 0usize;
        for ex in examples {
            let (lp, n) =
                self.response_log_prob(&ex.context_tokens, ex.speaker, &ex.response_tokens, controls)?;
            nll -= lp;
            tokens += n;
        }
        Ok((nll / tokens as f64).exp())
    }

    /// Ancestral sample of a response (without the end marker).
    pub fn sample_response<R: Rng + ?Sized>(
        &self,
        context: &[TokenId],
        speaker: Speaker,
        controls: &[ControlSetting],
        max_len: usize,
        rng: &mut R,
    ) -> Result<Vec<TokenId>> {
        let mut prefix = flatten_prefix(context, speaker);
        let start = prefix.len();
        for _ in 0..max_len {
            let p = self.next_token_distribution(&NextTokenQuery {
                prefix: &prefix,
                controls,
            })?;
            let mut u: f64 = rng.random();
            let mut pick = p.len() - 1;
            for (i, &x) in p.iter().enumerate() {
                if u < x {
                    pick = i;
                    break;
                }
                u -= x;
            }
            if pick as TokenId == EOS {
                break;
            }
            prefix.push(pick as TokenId);
        }
        Ok(prefix[start..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, PERSONA};

    fn vocab(words: &str) -> Vocabulary {
        let toks = tokenize(words);
        Vocabulary::build([toks.as_slice()], 1)
    }

    fn example(v: &Vocabulary, resp: &str) -> AnnotatedExample {
        AnnotatedExample {
            speaker: Speaker::First,
            context_tokens: vec![PERSONA],
            response_tokens: v.encode_text(resp),
            partner_last_utterance_tokens: vec![],
            has_question: false,
            mean_nidf: 0.0,
            resp_cos_sim: 0.0,
        }
    }

    fn params(order: usize, lambda: f64) -> ModelParams {
        ModelParams {
            order,
            lambda,
            mu: DEFAULT_MU,
        }
    }

    #[test]
    fn bigram_counts_single_example() {
        let v = vocab("a b");
        let m = train(&[example(&v, "a b")], v.clone(), params(2, 0.4), vec![], &[]).unwrap();
        let (a, b) = (v.id("a"), v.id("b"));
        assert_eq!(m.global.count(&[a], b), 1);
        assert_eq!(m.global.count(&[b], EOS), 1);
        assert_eq!(m.global.count(&[], a), 1);
    }

    #[test]
    fn empty_counts_give_uniform() {
        let v = vocab("a b c");
        let counts = NgramCounts::new(3);
        let p = counts.distribution(&[BOS, 7], 0.4, v.len());
        assert!(p.iter().all(|&x| (x - 1.0 / v.len() as f64).abs() < 1e-15));
    }

    #[test]
    fn hand_probabilities_order_one() {
        // vocab: 6 specials + a + b = 8; unigram events a, a, b, EOS
        let v = vocab("a a b");
        let m = train(&[example(&v, "a a b")], v.clone(), params(1, 0.5), vec![], &[]).unwrap();
        let p = m
            .next_token_distribution(&NextTokenQuery {
                prefix: &[BOS],
                controls: &[],
            })
            .unwrap();
        let uni = 0.5 / 8.0;
        assert!((p[v.id("a") as usize] - (uni + 0.5 * 2.0 / 4.0)).abs() < 1e-15);
        assert!((p[v.id("b") as usize] - (uni + 0.5 / 4.0)).abs() < 1e-15);
        assert!((p[EOS as usize] - (uni + 0.5 / 4.0)).abs() < 1e-15);
        assert!((p[PERSONA as usize] - uni).abs() < 1e-15);
    }

    #[test]
    fn perplexity_closed_forms() {
        let v = vocab("a b c");
        let ex = vec![example(&v, "a b c")];
        // deterministic corpus, λ = 1: every step has probability one
        let m = train(&ex, v.clone(), params(3, 1.0), vec![], &[]).unwrap();
        assert!((m.perplexity(&ex, &[]).unwrap() - 1.0).abs() < 1e-12);
        // no counts: uniform over V
        let mut u = m.clone();
        u.global = NgramCounts::new(3);
        assert!((u.perplexity(&ex, &[]).unwrap() - v.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn perplexity_order_one_mixture() {
        let v = vocab("a a b");
        let ex = vec![example(&v, "a a b")];
        let m = train(&ex, v.clone(), params(1, 0.5), vec![], &[]).unwrap();
        let uni: f64 = 0.5 / 8.0;
        let pa = uni + 0.25;
        let pb = uni + 0.125;
        let pe = uni + 0.125;
        let expected = (-(2.0 * pa.ln() + pb.ln() + pe.ln()) / 4.0).exp();
        assert!((m.perplexity(&ex, &[]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn unknown_control_rejected() {
        let v = vocab("a");
        let m = train(&[example(&v, "a")], v, params(2, 0.4), vec![], &[]).unwrap();
        let err = m
            .next_token_distribution(&NextTokenQuery {
                prefix: &[BOS],
                controls: &[ControlSetting::new("question", 1)],
            })
            .unwrap_err();
        assert!(matches!(err, Error::UnknownControl(_)));
    }

    #[test]
    fn empty_bucket_is_error() {
        let v = vocab("a b");
        let ex = vec![example(&v, "a"), example(&v, "b")];
        let spec = ControlSpec::continuous("specificity", vec![0.5]);
        let err = train(&ex, v, params(2, 0.4), vec![spec], &[vec![Some(0), Some(0)]]).unwrap_err();
        assert!(matches!(err, Error::EmptyBucket { bucket: 1, .. }));
    }

    #[test]
    fn disjoint_buckets_sum_to_global() {
        let v = vocab("a b c d");
        let ex = vec![example(&v, "a b"), example(&v, "c d"), example(&v, "a c")];
        let spec = ControlSpec::continuous("specificity", vec![0.5]);
        let m = train(
            &ex,
            v,
            params(3, 0.4),
            vec![spec],
            &[vec![Some(0), Some(1), Some(0)]],
        )
        .unwrap();
        let b0 = m.per_bucket[&("specificity".to_string(), 0)].events();
        let b1 = m.per_bucket[&("specificity".to_string(), 1)].events();
        let mut summed = b0.clone();
        for (k, c) in &b1 {
            *summed.entry(k.clone()).or_default() += c;
        }
        assert_eq!(summed, m.global.events());
    }

    #[test]
    fn mu_zero_matches_global() {
        let v = vocab("a b c d");
        let ex = vec![example(&v, "a b"), example(&v, "c d")];
        let spec = ControlSpec::continuous("specificity", vec![0.5]);
        let mut p = params(3, 0.4);
        p.mu = 0.0;
        let m = train(&ex, v, p, vec![spec], &[vec![Some(0), Some(1)]]).unwrap();
        let prefix = flatten_prefix(&[PERSONA], Speaker::First);
        let g = m
            .next_token_distribution(&NextTokenQuery { prefix: &prefix, controls: &[] })
            .unwrap();
        for z in 0..2 {
            let c = [ControlSetting::new("specificity", z)];
            let q = m
                .next_token_distribution(&NextTokenQuery { prefix: &prefix, controls: &c })
                .unwrap();
            assert_eq!(q, g);
        }
    }
}
