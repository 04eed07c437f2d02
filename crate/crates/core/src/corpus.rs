//! Dialogue ingestion: the line-oriented corpus format, tokenization, the
//! vocabulary, training-example extraction and control bucketing.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
pub const SPEAKER0: TokenId = 3;
pub const SPEAKER1: TokenId = 4;
pub const PERSONA: TokenId = 5;

const SPECIAL_NAMES: [&str; 6] = [
    "__start__",
    "__end__",
    "__unk__",
    "__speaker0__",
    "__speaker1__",
    "__persona__",
];

pub const NUM_SPECIALS: usize = SPECIAL_NAMES.len();

/// Punctuation characters that always become tokens of their own.
pub const PUNCTUATION: [char; 8] = ['.', ',', '!', '?', ';', ':', '\'', '"'];

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// One of the two participants of a dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Speaker {
    First,
    Second,
}

impl Speaker {
    pub fn index(self) -> usize {
        match self {
            Speaker::First => 0,
            Speaker::Second => 1,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(Speaker::First),
            1 => Some(Speaker::Second),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Speaker::First => Speaker::Second,
            Speaker::Second => Speaker::First,
        }
    }

    /// The special token that introduces this speaker's turns.
    pub fn marker(self) -> TokenId {
        match self {
            Speaker::First => SPEAKER0,
            Speaker::Second => SPEAKER1,
        }
    }
}

impl Serialize for Speaker {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index() as u8)
    }
}

impl<'de> Deserialize<'de> for Speaker {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = u8::deserialize(d)?;
        Speaker::from_index(raw)
            .ok_or_else(|| serde::de::Error::custom(format!("speaker must be 0 or 1, got {raw}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub personas: Vec<Vec<String>>,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| {
            Err(Error::InvalidDialogue {
                id: self.id.clone(),
                message: message.to_string(),
            })
        };
        if self.personas.len() != 2 {
            return fail("expected exactly two personas");
        }
        if self.personas.iter().any(|p| p.is_empty()) {
            return fail("missing persona");
        }
        if self.turns.is_empty() {
            return fail("no turns");
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Speaker::First
            } else {
                Speaker::Second
            };
            if turn.speaker != expected {
                return fail(&format!("turn {i} breaks speaker alternation"));
            }
        }
        Ok(())
    }

    pub fn persona(&self, side: Speaker) -> &[String] {
        &self.personas[side.index()]
    }
}

/// Reads a corpus file with one JSON dialogue record per line. Blank lines
/// are skipped; line numbers in errors are 1-based.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let dialogue: Dialogue =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        dialogue.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(dialogue);
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, dialogues: &[Dialogue]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::new();
    for d in dialogues {
        buf.push_str(&serde_json::to_string(d)?);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Lowercases, splits on whitespace and splits every punctuation mark in
/// [`PUNCTUATION`] into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if PUNCTUATION.contains(&c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Tokens consisting only of punctuation marks.
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| PUNCTUATION.contains(&c))
}

/// Dense token-id mapping. Ids `0..NUM_SPECIALS` are the reserved specials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = String;

    fn try_from(r: VocabularyRepr) -> std::result::Result<Self, String> {
        if r.tokens.len() != r.counts.len() {
            return Err("vocabulary tokens and counts differ in length".into());
        }
        if r.tokens.len() < NUM_SPECIALS
            || r.tokens[..NUM_SPECIALS].iter().zip(SPECIAL_NAMES).any(|(a, b)| a != b)
        {
            return Err("vocabulary does not start with the reserved specials".into());
        }
        let mut index = HashMap::with_capacity(r.tokens.len());
        for (i, t) in r.tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(format!("duplicate vocabulary token `{t}`"));
            }
        }
        Ok(Vocabulary {
            tokens: r.tokens,
            counts: r.counts,
            index,
        })
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            counts: v.counts,
        }
    }
}

impl Vocabulary {
    pub const DEFAULT_MIN_COUNT: u64 = 2;

    /// Builds a vocabulary from tokenized text. Tokens are ordered by
    /// descending count, then lexicographically.
    pub fn build<'a, I, S>(token_lists: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for list in token_lists {
            for t in list {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !SPECIAL_NAMES.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut token_counts = vec![0; NUM_SPECIALS];
        for (t, c) in kept {
            tokens.push(t.to_string());
            token_counts.push(c);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocabulary {
            tokens,
            counts: token_counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts[id as usize]
    }

    /// Id for a token produced by [`tokenize`]. Unknown words and text that
    /// happens to spell a special's name map to [`UNK`].
    pub fn id(&self, token: &str) -> TokenId {
        match self.index.get(token) {
            Some(&id) if !is_special(id) => id,
            _ => UNK,
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        self.encode(&tokenize(text))
    }

    /// Space-joined token strings; `tokenize` of the result gives back the
    /// same tokens for any sequence of non-special ids.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> {
        0..self.tokens.len() as TokenId
    }
}

/// A (context, response) training pair annotated with controllable
/// attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub speaker: Speaker,
    /// Persona marker, own persona, then speaker-marked history.
    pub context_tokens: Vec<TokenId>,
    pub response_tokens: Vec<TokenId>,
    pub partner_last_utterance_tokens: Vec<TokenId>,
    pub has_question: bool,
    pub mean_nidf: f64,
    pub resp_cos_sim: f64,
}

pub fn contains_question(vocab: &Vocabulary, tokens: &[TokenId]) -> bool {
    let qm = vocab.id("?");
    qm != UNK && tokens.contains(&qm)
}

/// One example per turn spoken by `side`. `mean_nidf` and `resp_cos_sim`
/// are left at zero; see [`crate::pipeline::annotate`].
pub fn extract_examples(
    dialogue: &Dialogue,
    side: Speaker,
    vocab: &Vocabulary,
) -> Vec<AnnotatedExample> {
    let mut persona = vec![PERSONA];
    for sentence in dialogue.persona(side) {
        persona.extend(vocab.encode_text(sentence));
    }
    let mut context = persona;
    let mut partner_last: Vec<TokenId> = Vec::new();
    let mut out = Vec::new();
    for turn in &dialogue.turns {
        let tokens = vocab.encode_text(&turn.text);
        if turn.speaker == side && !tokens.is_empty() {
            out.push(AnnotatedExample {
                speaker: side,
                context_tokens: context.clone(),
                has_question: contains_question(vocab, &tokens),
                response_tokens: tokens.clone(),
                partner_last_utterance_tokens: partner_last.clone(),
                mean_nidf: 0.0,
                resp_cos_sim: 0.0,
            });
        }
        if turn.speaker != side {
            partner_last = tokens.clone();
        }
        context.push(turn.speaker.marker());
        context.extend(tokens);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    ContinuousBucketed,
    QuestionDistributional,
}

/// A controllable attribute and how its values map to discrete buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub name: String,
    pub kind: ControlKind,
    pub num_buckets: u8,
    #[serde(default)]
    pub boundaries: Vec<f64>,
}

impl ControlSpec {
    pub const QUESTION: &'static str = "question";
    pub const SPECIFICITY: &'static str = "specificity";
    pub const RESPONSE_RELATEDNESS: &'static str = "response_relatedness";

    pub fn continuous(name: &str, boundaries: Vec<f64>) -> Self {
        ControlSpec {
            name: name.to_string(),
            kind: ControlKind::ContinuousBucketed,
            num_buckets: (boundaries.len() + 1) as u8,
            boundaries,
        }
    }

    pub fn question(num_buckets: u8) -> Self {
        ControlSpec {
            name: Self::QUESTION.to_string(),
            kind: ControlKind::QuestionDistributional,
            num_buckets,
            boundaries: Vec::new(),
        }
    }

    /// Bucket of a value; a value equal to a boundary falls in the lower
    /// bucket.
    pub fn bucket_of(&self, value: f64) -> u8 {
        bucket_for(&self.boundaries, value)
    }
}

pub fn bucket_for(boundaries: &[f64], value: f64) -> u8 {
    boundaries.iter().filter(|&&b| value > b).count() as u8
}

/// Boundaries splitting `values` into `n` buckets whose populations differ
/// by at most one when the values are distinct. With ties the boundaries
/// are nudged so each bucket still receives at least one value.
pub fn compute_equal_buckets(values: &[f64], n: usize) -> Result<Vec<f64>> {
    if values.is_empty() || n == 0 {
        return Err(Error::DegenerateBucketing(
            "need at least one value and one bucket".into(),
        ));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateBucketing("NaN value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if n > distinct.len() {
        return Err(Error::DegenerateBucketing(format!(
            "{n} buckets requested but only {} distinct values",
            distinct.len()
        )));
    }
    let total = sorted.len();
    let mut idx: Vec<usize> = (1..n)
        .map(|i| {
            let cut = i * total / n;
            let b = sorted[cut - 1];
            distinct.partition_point(|&d| d < b)
        })
        .collect();
    let last_allowed = distinct.len() - 2;
    for i in 0..idx.len() {
        if i > 0 && idx[i] <= idx[i - 1] {
            idx[i] = idx[i - 1] + 1;
        }
    }
    for i in (0..idx.len()).rev() {
        let cap = if i + 1 == idx.len() {
            last_allowed
        } else {
            idx[i + 1] - 1
        };
        idx[i] = idx[i].min(cap);
    }
    Ok(idx.into_iter().map(|i| distinct[i]).collect())
}

/// Result of distributing examples over question-rate buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionAssignment {
    pub bucket_size: usize,
    /// Bucket per input example; `None` means global model only.
    pub buckets: Vec<Option<u8>>,
}

/// Assigns examples so bucket `i` of `n` holds `m * i / (n - 1)` questions
/// and every bucket holds `m` examples, `m` being the largest multiple of
/// `n - 1` the question and non-question pools can support.
pub fn assign_question_buckets<R: Rng + ?Sized>(
    examples: &[AnnotatedExample],
    num_buckets: u8,
    rng: &mut R,
) -> Result<QuestionAssignment> {
    if num_buckets < 2 {
        return Err(Error::DegenerateBucketing(
            "question control needs at least two buckets".into(),
        ));
    }
    let n = num_buckets as usize;
    let steps = n - 1;
    let mut questions: Vec<usize> = Vec::new();
    let mut statements: Vec<usize> = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        if ex.has_question {
            questions.push(i);
        } else {
            statements.push(i);
        }
    }
    let scarce = questions.len().min(statements.len());
    // Each pool must supply m * n / 2 examples over all buckets.
    let m = (2 * scarce / n) / steps * steps;
    if m == 0 {
        return Err(Error::DegenerateBucketing(format!(
            "{} questions and {} non-questions cannot fill {n} buckets",
            questions.len(),
            statements.len()
        )));
    }
    questions.shuffle(rng);
    statements.shuffle(rng);
    let mut buckets = vec![None; examples.len()];
    let (mut qi, mut si) = (0, 0);
    for b in 0..n {
        let nq = m * b / steps;
        for &ex in &questions[qi..qi + nq] {
            buckets[ex] = Some(b as u8);
        }
        qi += nq;
        for &ex in &statements[si..si + (m - nq)] {
            buckets[ex] = Some(b as u8);
        }
        si += m - nq;
    }
    Ok(QuestionAssignment {
        bucket_size: m,
        buckets,
    })
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn dialogue(turns: &[&str]) -> Dialogue {
        Dialogue {
            id: "d".into(),
            personas: vec![
                vec!["i like dogs .".into()],
                vec!["i play piano .".into()],
            ],
            turns: turns
                .iter()
                .enumerate()
                .map(|(i, t)| Turn {
                    speaker: Speaker::from_index((i % 2) as u8).unwrap(),
                    text: t.to_string(),
                })
                .collect(),
        }
    }

    fn vocab_for(d: &Dialogue) -> Vocabulary {
        let mut lists: Vec<Vec<String>> = d.turns.iter().map(|t| tokenize(&t.text)).collect();
        for p in &d.personas {
            for s in p {
                lists.push(tokenize(s));
            }
        }
        Vocabulary::build(lists.iter().map(|l| l.as_slice()), 1)
    }

    #[test]
    fn tokenize_declared_rule() {
        assert_eq!(
            tokenize("Do you go get coffee often"),
            ["do", "you", "go", "get", "coffee", "often"]
        );
        assert_eq!(
            tokenize("What???????"),
            ["what", "?", "?", "?", "?", "?", "?", "?"]
        );
        assert_eq!(tokenize("I'm left handed"), ["i", "'", "m", "left", "handed"]);
        assert!(tokenize("   ").is_empty());
        assert_eq!(tokenize("\"Hi,\" she said."), ["\"", "hi", ",", "\"", "she", "said", "."]);
    }

    #[test]
    fn parse_two_lines_and_empty() {
        let d = dialogue(&["hi", "hello"]);
        let line = serde_json::to_string(&d).unwrap();
        let text = format!("{line}\n{line}\n");
        assert_eq!(parse_corpus(&text, Path::new("x")).unwrap().len(), 2);
        assert!(parse_corpus("", Path::new("x")).unwrap().is_empty());
    }

    #[test]
    fn missing_turns_is_error_at_line_one() {
        let err = parse_corpus(r#"{"id":"a","personas":[["x"],["y"]]}"#, Path::new("c"))
            .unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("turns"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_persona_is_error() {
        let text = r#"{"id":"a","personas":[["x"],[]],"turns":[{"speaker":0,"text":"hi"}]}"#;
        assert!(parse_corpus(text, Path::new("c")).is_err());
        let text = r#"{"id":"a","personas":[["x"]],"turns":[{"speaker":0,"text":"hi"}]}"#;
        assert!(parse_corpus(text, Path::new("c")).is_err());
    }

    #[test]
    fn alternation_enforced() {
        let mut d = dialogue(&["a", "b"]);
        d.turns[1].speaker = Speaker::First;
        assert!(d.validate().is_err());
    }

    #[test]
    fn vocabulary_min_count_and_specials() {
        let lists = vec![
            tokenize("a a b c"),
            tokenize("a b __unk__ __unk__"),
        ];
        let v = Vocabulary::build(lists.iter().map(|l| l.as_slice()), 2);
        assert_eq!(v.len(), NUM_SPECIALS + 2);
        assert_eq!(v.token(NUM_SPECIALS as TokenId), "a");
        assert_eq!(v.id("c"), UNK);
        assert_eq!(v.id("__end__"), UNK);
        assert_eq!(v.id("__unk__"), UNK);
        for id in v.ids().skip(NUM_SPECIALS) {
            assert!(v.count(id) >= 2);
        }
    }

    #[test]
    fn extract_four_turns_side_one() {
        let d = dialogue(&["hi there", "hello", "how are you ?", "fine"]);
        let v = vocab_for(&d);
        let ex = extract_examples(&d, Speaker::Second, &v);
        assert_eq!(ex.len(), 2);
        assert!(ex[0].context_tokens.len() < ex[1].context_tokens.len());
        assert_eq!(ex[1].partner_last_utterance_tokens, v.encode_text("how are you ?"));
    }

    #[test]
    fn first_turn_has_empty_partner() {
        let d = dialogue(&["hi there", "hello"]);
        let v = vocab_for(&d);
        let ex = extract_examples(&d, Speaker::First, &v);
        assert_eq!(ex.len(), 1);
        assert!(ex[0].partner_last_utterance_tokens.is_empty());
    }

    #[test]
    fn six_turn_context_layout() {
        let d = dialogue(&["a b", "c", "d e ?", "f", "g", "h i"]);
        let v = vocab_for(&d);
        let ex = extract_examples(&d, Speaker::Second, &v);
        assert_eq!(ex.len(), 3);
        let e = |s: &str| v.encode_text(s);
        let mut expected = vec![PERSONA];
        expected.extend(e("i play piano ."));
        expected.push(SPEAKER0);
        expected.extend(e("a b"));
        expected.push(SPEAKER1);
        expected.extend(e("c"));
        expected.push(SPEAKER0);
        expected.extend(e("d e ?"));
        expected.push(SPEAKER1);
        expected.extend(e("f"));
        expected.push(SPEAKER0);
        expected.extend(e("g"));
        assert_eq!(ex[2].context_tokens, expected);
        assert_eq!(ex[2].response_tokens, e("h i"));
        assert_eq!(ex[2].partner_last_utterance_tokens, e("g"));
        assert!(!ex[2].has_question);
    }

    #[test]
    fn history_segments_round_trip() {
        let d = dialogue(&["Hi, I'm Bob!", "Do you like dogs?", "yes", "Cool."]);
        let v = vocab_for(&d);
        let ex = extract_examples(&d, Speaker::Second, &v);
        let last = ex.last().unwrap();
        let mut full = last.context_tokens.clone();
        full.push(SPEAKER1);
        full.extend(&last.response_tokens);
        // split on speaker markers after the persona
        let start = full.iter().position(|&t| t == SPEAKER0).unwrap();
        let mut segments: Vec<Vec<TokenId>> = Vec::new();
        for &t in &full[start..] {
            if t == SPEAKER0 || t == SPEAKER1 {
                segments.push(Vec::new());
            } else {
                segments.last_mut().unwrap().push(t);
            }
        }
        let texts: Vec<String> = segments.iter().map(|s| v.decode(s)).collect();
        for (seg, turn) in texts.iter().zip(&d.turns) {
            assert_eq!(tokenize(seg), tokenize(&turn.text));
        }
    }

    #[test]
    fn equal_buckets_one_per_value() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        let b = compute_equal_buckets(&values, 10).unwrap();
        let mut pops = [0usize; 10];
        for v in &values {
            pops[bucket_for(&b, *v) as usize] += 1;
        }
        assert_eq!(pops, [1; 10]);
        assert!(compute_equal_buckets(&values, 11).is_err());
    }

    #[test]
    fn equal_buckets_thousand_values() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut values: Vec<f64> = (0..1000).map(|i| i as f64 * 0.37).collect();
        values.shuffle(&mut rng);
        let b = compute_equal_buckets(&values, 10).unwrap();
        // sort-and-slice oracle
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        for (k, chunk) in sorted.chunks(100).enumerate() {
            for v in chunk {
                assert_eq!(bucket_for(&b, *v) as usize, k);
            }
        }
    }

    #[test]
    fn equal_buckets_with_ties_keep_every_bucket() {
        let mut values = vec![0.0; 50];
        values.extend((1..=20).map(f64::from));
        let b = compute_equal_buckets(&values, 10).unwrap();
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        let mut pops = [0usize; 10];
        for v in &values {
            pops[bucket_for(&b, *v) as usize] += 1;
        }
        assert!(pops.iter().all(|&p| p > 0), "{pops:?}");
    }

    fn fake_examples(q: usize, nq: usize) -> Vec<AnnotatedExample> {
        (0..q + nq)
            .map(|i| AnnotatedExample {
                speaker: Speaker::First,
                context_tokens: vec![PERSONA],
                response_tokens: vec![7],
                partner_last_utterance_tokens: vec![],
                has_question: i < q,
                mean_nidf: 0.0,
                resp_cos_sim: 0.0,
            })
            .collect()
    }

    #[test]
    fn question_buckets_balanced() {
        let ex = fake_examples(550, 550);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = assign_question_buckets(&ex, 11, &mut rng).unwrap();
        assert_eq!(a.bucket_size, 100);
        let mut q = [0usize; 11];
        let mut total = [0usize; 11];
        for (e, b) in ex.iter().zip(&a.buckets) {
            if let Some(b) = b {
                total[*b as usize] += 1;
                q[*b as usize] += e.has_question as usize;
            }
        }
        assert_eq!(total, [100; 11]);
        assert_eq!(q[7], 70);
        assert_eq!(q[0], 0);
        assert_eq!(q[10], 100);
    }

    #[test]
    fn question_buckets_limited_by_questions() {
        // 28.8% questions out of 10_000 examples
        let ex = fake_examples(2880, 7120);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let a = assign_question_buckets(&ex, 11, &mut rng).unwrap();
        // counting oracle: largest multiple of 10 with 5.5 * m <= 2880
        let oracle = (0..=10_000).step_by(10).filter(|m| m * 11 <= 2880 * 2).max().unwrap();
        assert_eq!(a.bucket_size, oracle);
        assert_eq!(a.bucket_size, 520);
    }

    #[test]
    fn question_buckets_too_small() {
        let ex = fake_examples(3, 100);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(assign_question_buckets(&ex, 11, &mut rng).is_err());
    }
}
