//! Word-level decoding features and their weights.
//!
//! Every feature scores a candidate next word `w` given the partial
//! hypothesis and the dialogue so far. The five repetition features are
//! binary; `nidf` and `resp_rel` are continuous.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::corpus::{Speaker, TokenId, Vocabulary, EOS, PERSONA};
use crate::embeddings::{cos_sim, nidf, norm, sent_embedding, IdfTable, SifParams, WordVectors};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureId {
    ExtrepBigram,
    ExtrepUnigram,
    IntrepBigram,
    IntrepUnigram,
    PartnerrepBigram,
    Nidf,
    RespRel,
    IsQnWord,
}

impl FeatureId {
    pub const ALL: [FeatureId; 8] = [
        FeatureId::ExtrepBigram,
        FeatureId::ExtrepUnigram,
        FeatureId::IntrepBigram,
        FeatureId::IntrepUnigram,
        FeatureId::PartnerrepBigram,
        FeatureId::Nidf,
        FeatureId::RespRel,
        FeatureId::IsQnWord,
    ];

    pub const REPETITION: [FeatureId; 5] = [
        FeatureId::ExtrepBigram,
        FeatureId::ExtrepUnigram,
        FeatureId::IntrepBigram,
        FeatureId::IntrepUnigram,
        FeatureId::PartnerrepBigram,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureId::ExtrepBigram => "extrep_bigram",
            FeatureId::ExtrepUnigram => "extrep_unigram",
            FeatureId::IntrepBigram => "intrep_bigram",
            FeatureId::IntrepUnigram => "intrep_unigram",
            FeatureId::PartnerrepBigram => "partnerrep_bigram",
            FeatureId::Nidf => "nidf",
            FeatureId::RespRel => "resp_rel",
            FeatureId::IsQnWord => "is_qn_word",
        }
    }

    /// Closed range of values the feature can take.
    pub fn range(self) -> (f64, f64) {
        match self {
            FeatureId::RespRel => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureId::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature id `{s}`")))
    }
}

/// A feature weight: finite, or negative infinity for hard blocking.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Weight(f64);

impl Weight {
    pub const NEG_INF: Weight = Weight(f64::NEG_INFINITY);

    pub fn new(v: f64) -> Result<Self> {
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::Config(format!("feature weight must be finite or -inf, got {v}")));
        }
        Ok(Weight(v))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_blocking(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// Contribution `weight * value`, or `None` when the candidate is pruned.
    pub fn apply(self, value: f64) -> Option<f64> {
        if self.is_blocking() {
            if value > 0.0 {
                None
            } else {
                Some(0.0)
            }
        } else {
            Some(self.0 * value)
        }
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_blocking() {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Weight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "-inf" | "-infinity" | "−inf" | "-∞" => Ok(Weight::NEG_INF),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid weight `{other}`")))
                .and_then(Weight::new),
        }
    }
}

impl Serialize for Weight {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_blocking() {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Weight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let w = match Raw::deserialize(d)? {
            Raw::Num(v) => Weight::new(v),
            Raw::Str(s) => s.parse(),
        };
        w.map_err(serde::de::Error::custom)
    }
}

/// Weights keyed by feature id; absent features have weight zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureWeights(BTreeMap<FeatureId, Weight>);

impl FeatureWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, id: FeatureId, w: f64) -> Self {
        self.set(id, Weight::new(w).expect("valid weight"));
        self
    }

    pub fn set(&mut self, id: FeatureId, w: Weight) {
        self.0.insert(id, w);
    }

    pub fn remove(&mut self, id: FeatureId) -> Option<Weight> {
        self.0.remove(&id)
    }

    pub fn get(&self, id: FeatureId) -> Option<Weight> {
        self.0.get(&id).copied()
    }

    /// Features with a non-zero weight.
    pub fn active(&self) -> impl Iterator<Item = (FeatureId, Weight)> + '_ {
        self.0
            .iter()
            .filter(|(_, w)| w.value() != 0.0)
            .map(|(id, w)| (*id, *w))
    }

    pub fn is_empty(&self) -> bool {
        self.active().next().is_none()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, Weight)> + '_ {
        self.0.iter().map(|(id, w)| (*id, *w))
    }

    /// Largest per-step contribution any candidate could receive.
    pub fn max_step_gain(&self) -> f64 {
        self.active()
            .map(|(id, w)| {
                let (lo, hi) = id.range();
                if w.is_blocking() {
                    0.0
                } else {
                    (w.value() * lo).max(w.value() * hi)
                }
            })
            .sum()
    }
}

pub const INTERROGATIVES: [&str; 10] = [
    "how", "what", "when", "where", "which", "who", "whom", "whose", "why", "?",
];

/// Membership in the fixed interrogative word list.
pub fn is_qn_word(word: &str) -> bool {
    INTERROGATIVES.contains(&word)
}

const BUILTIN_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    pub fn builtin() -> Self {
        Self::from_text(BUILTIN_STOPWORDS)
    }

    pub fn from_text(text: &str) -> Self {
        Stopwords {
            words: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    /// Sorted word list, as stored in model archives.
    pub fn to_sorted(&self) -> Vec<String> {
        let mut v: Vec<String> = self.words.iter().cloned().collect();
        v.sort();
        v
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        for w in self.to_sorted() {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        format!("{:x}", h.finalize())
    }
}

/// Per-token lookup tables shared by every decode against one model.
#[derive(Debug, Clone)]
pub struct FeatureTables {
    pub nidf: Vec<f64>,
    pub stopword: Vec<bool>,
    pub interrogative: Vec<bool>,
    /// Unit-normalized word vectors; `None` when the token has no vector.
    pub unit_vectors: Vec<Option<Vec<f64>>>,
}

impl FeatureTables {
    pub fn build(
        vocab: &Vocabulary,
        idf: &IdfTable,
        vectors: &WordVectors,
        stopwords: &Stopwords,
    ) -> Result<Self> {
        let mut t = FeatureTables {
            nidf: Vec::with_capacity(vocab.len()),
            stopword: Vec::with_capacity(vocab.len()),
            interrogative: Vec::with_capacity(vocab.len()),
            unit_vectors: Vec::with_capacity(vocab.len()),
        };
        for id in vocab.ids() {
            let tok = vocab.token(id);
            let special = crate::corpus::is_special(id);
            t.nidf.push(if special { 0.0 } else { nidf(tok, idf)? });
            t.stopword.push(special || stopwords.contains(tok));
            t.interrogative.push(!special && is_qn_word(tok));
            t.unit_vectors.push(match vectors.get(tok) {
                Some(v) if !special && norm(v) > 0.0 => {
                    let n = norm(v);
                    Some(v.iter().map(|x| x / n).collect())
                }
                _ => None,
            });
        }
        Ok(t)
    }
}

/// Sentence-embedding resources; absent when the model was trained without
/// word vectors.
#[derive(Debug, Clone, Copy)]
pub struct Embedder<'a> {
    pub vocab: &'a Vocabulary,
    pub vectors: &'a WordVectors,
    pub sif: Option<&'a SifParams>,
}

impl Embedder<'_> {
    pub fn embed(&self, ids: &[TokenId]) -> Vec<f64> {
        match self.sif {
            Some(sif) => {
                let toks: Vec<&str> = ids.iter().map(|&i| self.vocab.token(i)).collect();
                sent_embedding(&toks, self.vectors, sif)
            }
            None => vec![0.0; self.vectors.dim()],
        }
    }

    pub fn similarity(&self, a: &[TokenId], b: &[TokenId]) -> f64 {
        cos_sim(&self.embed(a), &self.embed(b))
    }
}

type Successors = HashMap<TokenId, HashSet<TokenId>>;

fn bigram_index<'a>(utterances: impl Iterator<Item = &'a [TokenId]>) -> Successors {
    let mut out: Successors = HashMap::new();
    for u in utterances {
        for pair in u.windows(2) {
            out.entry(pair[0]).or_default().insert(pair[1]);
        }
    }
    out
}

/// The dialogue as seen by the agent about to speak.
#[derive(Debug, Clone)]
pub struct DecodingState {
    pub own_speaker: Speaker,
    pub persona: Vec<TokenId>,
    pub history: Vec<(Speaker, Vec<TokenId>)>,
    pub partner_last_embedding: Vec<f64>,
    model_bigrams: Successors,
    model_words: HashSet<TokenId>,
    partner_bigrams: Successors,
    resp_rel: Vec<f64>,
}

impl DecodingState {
    pub fn new(
        own_speaker: Speaker,
        persona: Vec<TokenId>,
        history: Vec<(Speaker, Vec<TokenId>)>,
        embedder: &Embedder<'_>,
        tables: &FeatureTables,
    ) -> Self {
        let own: Vec<&[TokenId]> = history
            .iter()
            .filter(|(s, _)| *s == own_speaker)
            .map(|(_, u)| u.as_slice())
            .collect();
        let partner: Vec<&[TokenId]> = history
            .iter()
            .filter(|(s, _)| *s != own_speaker)
            .map(|(_, u)| u.as_slice())
            .collect();
        let model_bigrams = bigram_index(own.iter().copied());
        let partner_bigrams = bigram_index(partner.iter().copied());
        let model_words = own.iter().flat_map(|u| u.iter().copied()).collect();
        let partner_last_embedding = embedder.embed(partner.last().copied().unwrap_or(&[]));
        let pn = norm(&partner_last_embedding);
        let resp_rel = tables
            .unit_vectors
            .iter()
            .map(|uv| match uv {
                Some(uv) if pn > 0.0 => {
                    let d: f64 = uv.iter().zip(&partner_last_embedding).map(|(a, b)| a * b).sum();
                    (d / pn).clamp(-1.0, 1.0)
                }
                _ => 0.0,
            })
            .collect();
        DecodingState {
            own_speaker,
            persona,
            history,
            partner_last_embedding,
            model_bigrams,
            model_words,
            partner_bigrams,
            resp_rel,
        }
    }

    pub fn model_prev_utterances(&self) -> impl Iterator<Item = &[TokenId]> {
        self.history
            .iter()
            .filter(move |(s, _)| *s == self.own_speaker)
            .map(|(_, u)| u.as_slice())
    }

    pub fn partner_prev_utterances(&self) -> impl Iterator<Item = &[TokenId]> {
        self.history
            .iter()
            .filter(move |(s, _)| *s != self.own_speaker)
            .map(|(_, u)| u.as_slice())
    }

    /// The partner's most recent utterance, empty before the partner spoke.
    pub fn partner_last_utterance(&self) -> &[TokenId] {
        self.partner_prev_utterances().last().unwrap_or(&[])
    }

    pub fn has_partner_utterance(&self) -> bool {
        self.history.iter().any(|(s, _)| *s != self.own_speaker)
    }

    /// Persona marker, persona, then speaker-marked history.
    pub fn context_tokens(&self) -> Vec<TokenId> {
        let mut ctx = vec![PERSONA];
        ctx.extend(&self.persona);
        for (s, u) in &self.history {
            ctx.push(s.marker());
            ctx.extend(u);
        }
        ctx
    }

    /// Cosine of each vocabulary word's vector with the partner embedding.
    pub fn resp_rel_values(&self) -> &[f64] {
        &self.resp_rel
    }
}

/// Summary of a partial hypothesis used to evaluate internal repetition.
#[derive(Debug, Clone, Default)]
pub struct HypothesisView {
    last: Option<TokenId>,
    followers_of_last: HashSet<TokenId>,
    words: HashSet<TokenId>,
}

impl HypothesisView {
    pub fn new(hyp: &[TokenId]) -> Self {
        let last = hyp.last().copied();
        let followers_of_last = match last {
            Some(l) => hyp
                .windows(2)
                .filter(|p| p[0] == l)
                .map(|p| p[1])
                .collect(),
            None => HashSet::new(),
        };
        HypothesisView {
            last,
            followers_of_last,
            words: hyp.iter().copied().collect(),
        }
    }

    pub fn last(&self) -> Option<TokenId> {
        self.last
    }
}

fn as_value(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Evaluates features for one state against one model's tables.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub tables: &'a FeatureTables,
    pub state: &'a DecodingState,
}

impl<'a> Features<'a> {
    pub fn new(tables: &'a FeatureTables, state: &'a DecodingState) -> Self {
        Features { tables, state }
    }

    /// `(last(y<t), w)` occurs as an adjacent pair in a previous model utterance.
    pub fn extrep_bigram(&self, w: TokenId, hyp: &HypothesisView) -> f64 {
        as_value(follows(&self.state.model_bigrams, hyp.last, w))
    }

    /// `w` is a non-stopword found in a previous model utterance.
    pub fn extrep_unigram(&self, w: TokenId, _hyp: &HypothesisView) -> f64 {
        as_value(!self.stop(w) && self.state.model_words.contains(&w))
    }

    /// `(last(y<t), w)` already occurs in `y<t`.
    pub fn intrep_bigram(&self, w: TokenId, hyp: &HypothesisView) -> f64 {
        as_value(hyp.followers_of_last.contains(&w))
    }

    /// `w` is a non-stopword already in `y<t`.
    pub fn intrep_unigram(&self, w: TokenId, hyp: &HypothesisView) -> f64 {
        as_value(!self.stop(w) && hyp.words.contains(&w))
    }

    /// `(last(y<t), w)` occurs in a previous partner utterance.
    pub fn partnerrep_bigram(&self, w: TokenId, hyp: &HypothesisView) -> f64 {
        as_value(follows(&self.state.partner_bigrams, hyp.last, w))
    }

    pub fn nidf(&self, w: TokenId) -> f64 {
        self.tables.nidf[w as usize]
    }

    pub fn resp_rel(&self, w: TokenId) -> f64 {
        self.state.resp_rel[w as usize]
    }

    pub fn is_qn_word(&self, w: TokenId) -> f64 {
        as_value(self.tables.interrogative[w as usize])
    }

    pub fn value(&self, id: FeatureId, w: TokenId, hyp: &HypothesisView) -> f64 {
        if w == EOS {
            return 0.0;
        }
        match id {
            FeatureId::ExtrepBigram => self.extrep_bigram(w, hyp),
            FeatureId::ExtrepUnigram => self.extrep_unigram(w, hyp),
            FeatureId::IntrepBigram => self.intrep_bigram(w, hyp),
            FeatureId::IntrepUnigram => self.intrep_unigram(w, hyp),
            FeatureId::PartnerrepBigram => self.partnerrep_bigram(w, hyp),
            FeatureId::Nidf => self.nidf(w),
            FeatureId::RespRel => self.resp_rel(w),
            FeatureId::IsQnWord => self.is_qn_word(w),
        }
    }

    /// Weighted feature score for appending `w`, or the first blocking
    /// feature that prunes it.
    pub fn score(
        &self,
        weights: &FeatureWeights,
        w: TokenId,
        hyp: &HypothesisView,
    ) -> std::result::Result<f64, FeatureId> {
        let mut total = 0.0;
        for (id, weight) in weights.active() {
            match weight.apply(self.value(id, w, hyp)) {
                Some(s) => total += s,
                None => return Err(id),
            }
        }
        Ok(total)
    }

    /// Sum over every step of a complete token sequence (end marker
    /// included when present); `-inf` if a blocking feature fires.
    pub fn sequence_score(&self, weights: &FeatureWeights, tokens: &[TokenId]) -> f64 {
        let mut total = 0.0;
        for t in 0..tokens.len() {
            let view = HypothesisView::new(&tokens[..t]);
            match self.score(weights, tokens[t], &view) {
                Ok(s) => total += s,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        total
    }

    fn stop(&self, w: TokenId) -> bool {
        self.tables.stopword[w as usize]
    }
}

fn follows(index: &Successors, last: Option<TokenId>, w: TokenId) -> bool {
    last.and_then(|l| index.get(&l))
        .is_some_and(|set| set.contains(&w))
}
