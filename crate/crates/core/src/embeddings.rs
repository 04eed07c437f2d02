//! Word vectors, inverse document frequency and SIF sentence embeddings.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::is_punctuation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "VectorsRepr", into = "VectorsRepr")]
pub struct WordVectors {
    dim: usize,
    map: HashMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct VectorsRepr {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl From<VectorsRepr> for WordVectors {
    fn from(r: VectorsRepr) -> Self {
        WordVectors {
            dim: r.dim,
            map: r.vectors.into_iter().collect(),
        }
    }
}

impl From<WordVectors> for VectorsRepr {
    fn from(v: WordVectors) -> Self {
        VectorsRepr {
            dim: v.dim,
            vectors: v.map.into_iter().collect(),
        }
    }
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            map: HashMap::new(),
        }
    }

    /// Inserts or replaces a vector; returns `false` on a dimension mismatch.
    pub fn insert(&mut self, token: impl Into<String>, v: Vec<f64>) -> bool {
        if v.len() != self.dim {
            return false;
        }
        self.map.insert(token.into(), v);
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.map.get(token).map(Vec::as_slice)
    }

    /// Copy holding only the listed tokens.
    pub fn restrict<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> WordVectors {
        let mut out = WordVectors::new(self.dim);
        for t in tokens {
            if let Some(v) = self.map.get(t) {
                out.map.insert(t.to_string(), v.clone());
            }
        }
        out
    }

    /// Writes the whitespace-separated text format read by [`load_vectors`].
    pub fn to_text(&self) -> String {
        let sorted: BTreeMap<_, _> = self.map.iter().collect();
        let mut out = String::new();
        for (t, v) in sorted {
            out.push_str(t);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<WordVectors> {
    let (vectors, warnings) = load_vectors_with_warnings(path)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(vectors)
}

/// Like [`load_vectors`] but returns warnings (duplicate tokens) instead of
/// logging them.
pub fn load_vectors_with_warnings(path: impl AsRef<Path>) -> Result<(WordVectors, Vec<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vectors(&text, path)
}

pub fn parse_vectors(text: &str, path: &Path) -> Result<(WordVectors, Vec<String>)> {
    let mut vectors: Option<WordVectors> = None;
    let mut warnings = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line");
        let values = parts
            .map(|p| p.parse::<f64>().map_err(|_| err(format!("non-numeric component `{p}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(err(format!("token `{token}` has no components")));
        }
        let wv = vectors.get_or_insert_with(|| WordVectors::new(values.len()));
        if values.len() != wv.dim {
            return Err(err(format!(
                "dimension mismatch: expected {}, found {}",
                wv.dim,
                values.len()
            )));
        }
        if wv.map.insert(token.to_string(), values).is_some() {
            warnings.push(format!(
                "{}:{}: duplicate token `{token}`, keeping last occurrence",
                path.display(),
                i + 1
            ));
        }
    }
    let vectors = vectors.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "empty vectors file".into(),
    })?;
    Ok((vectors, warnings))
}

/// Per-word response counts for IDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IdfRepr", into = "IdfRepr")]
pub struct IdfTable {
    num_responses: u64,
    counts: HashMap<String, u64>,
    min_idf: f64,
    max_idf: f64,
}

#[derive(Serialize, Deserialize)]
struct IdfRepr {
    num_responses: u64,
    counts: BTreeMap<String, u64>,
}

impl TryFrom<IdfRepr> for IdfTable {
    type Error = String;

    fn try_from(r: IdfRepr) -> std::result::Result<Self, String> {
        if r.counts.values().any(|&c| c == 0 || c > r.num_responses) {
            return Err("idf counts must lie in 1..=num_responses".into());
        }
        Ok(IdfTable::from_counts(r.num_responses, r.counts.into_iter().collect()))
    }
}

impl From<IdfTable> for IdfRepr {
    fn from(t: IdfTable) -> Self {
        IdfRepr {
            num_responses: t.num_responses,
            counts: t.counts.into_iter().collect(),
        }
    }
}

impl IdfTable {
    fn from_counts(num_responses: u64, counts: HashMap<String, u64>) -> Self {
        let r = num_responses as f64;
        let mut min_idf = f64::INFINITY;
        let mut max_idf = f64::NEG_INFINITY;
        for &c in counts.values() {
            let idf = (r / c as f64).ln();
            min_idf = min_idf.min(idf);
            max_idf = max_idf.max(idf);
        }
        if counts.is_empty() {
            min_idf = 0.0;
            max_idf = 0.0;
        }
        IdfTable {
            num_responses,
            counts,
            min_idf,
            max_idf,
        }
    }

    pub fn num_responses(&self) -> u64 {
        self.num_responses
    }

    pub fn response_count(&self, word: &str) -> Option<u64> {
        self.counts.get(word).copied()
    }

    pub fn min_idf(&self) -> f64 {
        self.min_idf
    }

    pub fn max_idf(&self) -> f64 {
        self.max_idf
    }

    pub fn idf(&self, word: &str) -> Option<f64> {
        self.counts
            .get(word)
            .map(|&c| (self.num_responses as f64 / c as f64).ln())
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Counts, for every word, the number of responses containing it at least
/// once.
pub fn compute_idf<S: AsRef<str>>(responses: &[Vec<S>]) -> IdfTable {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for r in responses {
        let unique: HashSet<&str> = r.iter().map(AsRef::as_ref).collect();
        for w in unique {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    IdfTable::from_counts(responses.len() as u64, counts)
}

/// IDF min-max normalized to `[0, 1]`. Words missing from the table are
/// maximally rare.
pub fn nidf(word: &str, table: &IdfTable) -> Result<f64> {
    let span = table.max_idf - table.min_idf;
    if !(span > 0.0) {
        return Err(Error::DegenerateIdf);
    }
    Ok(match table.idf(word) {
        Some(idf) => ((idf - table.min_idf) / span).clamp(0.0, 1.0),
        None => 1.0,
    })
}

/// Whether a token takes part in mean-NIDF averages.
pub fn counts_for_specificity(token: &str) -> bool {
    !is_punctuation(token) && !(token.starts_with("__") && token.ends_with("__"))
}

/// Mean NIDF over the utterance's words, skipping punctuation and special
/// tokens. Zero eligible words gives 0.0.
pub fn mean_nidf<S: AsRef<str>>(utterance: &[S], table: &IdfTable) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for w in utterance {
        let w = w.as_ref();
        if counts_for_specificity(w) {
            sum += nidf(w, table)?;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Smooth-inverse-frequency embedding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SifParams {
    pub a: f64,
    pub word_probs: BTreeMap<String, f64>,
    pub first_principal_component: Vec<f64>,
}

pub const DEFAULT_SIF_A: f64 = 1e-3;
const POWER_MAX_ITERS: usize = 200;
const POWER_TOL: f64 = 1e-9;

impl SifParams {
    fn weight(&self, word: &str) -> f64 {
        let p = self.word_probs.get(word).copied().unwrap_or(0.0);
        if self.a.is_infinite() {
            1.0
        } else {
            self.a / (self.a + p)
        }
    }

    /// Weighted mean of in-vocabulary word vectors, before PC removal.
    pub fn raw_embedding<S: AsRef<str>>(&self, utterance: &[S], vectors: &WordVectors) -> Vec<f64> {
        let mut acc = vec![0.0; vectors.dim()];
        let mut n = 0usize;
        for w in utterance {
            let w = w.as_ref();
            if let Some(v) = vectors.get(w) {
                let weight = self.weight(w);
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += weight * x;
                }
                n += 1;
            }
        }
        if n > 0 {
            for a in &mut acc {
                *a /= n as f64;
            }
        }
        acc
    }
}

/// Fits unigram probabilities and the first principal component of the
/// raw response embeddings.
pub fn fit_sif<S: AsRef<str>>(responses: &[Vec<S>], vectors: &WordVectors, a: f64) -> Result<SifParams> {
    if responses.is_empty() {
        return Err(Error::Sif("no responses".into()));
    }
    if !(a > 0.0) {
        return Err(Error::Sif("smoothing must be positive".into()));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for r in responses {
        for w in r {
            *counts.entry(w.as_ref().to_string()).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Sif("responses contain no tokens".into()));
    }
    let word_probs: BTreeMap<String, f64> = counts
        .into_iter()
        .map(|(w, c)| (w, c as f64 / total as f64))
        .collect();
    let mut params = SifParams {
        a,
        word_probs,
        first_principal_component: vec![0.0; vectors.dim()],
    };
    let rows: Vec<Vec<f64>> = responses
        .iter()
        .map(|r| params.raw_embedding(r, vectors))
        .collect();
    params.first_principal_component = principal_direction(&rows)
        .ok_or_else(|| Error::Sif("all responses embed to the zero vector".into()))?;
    Ok(params)
}

/// Top right-singular direction of the row matrix, by power iteration on
/// the Gram matrix. The Gram matrix is squared alongside every step so the
/// effective power doubles per iteration. Sign fixed so the largest-magnitude
/// component is positive.
pub fn principal_direction(rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let dim = rows.first()?.len();
    let mut gram = vec![vec![0.0; dim]; dim];
    for r in rows {
        for i in 0..dim {
            if r[i] == 0.0 {
                continue;
            }
            for j in 0..dim {
                gram[i][j] += r[i] * r[j];
            }
        }
    }
    if normalize_matrix(&mut gram) == 0.0 {
        return None;
    }
    // start from the heaviest row, which lies in the row space
    let start = rows
        .iter()
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))
        .expect("non-empty");
    let mut v = start.clone();
    scale_to_unit(&mut v)?;
    for _ in 0..POWER_MAX_ITERS {
        let mut next = mat_vec(&gram, &v);
        if scale_to_unit(&mut next).is_none() {
            break;
        }
        align_sign(&mut next);
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = next;
        if change < POWER_TOL {
            break;
        }
        gram = mat_mul(&gram, &gram);
        if normalize_matrix(&mut gram) == 0.0 {
            break;
        }
    }
    align_sign(&mut v);
    Some(v)
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn normalize_matrix(m: &mut [Vec<f64>]) -> f64 {
    let max = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    if max > 0.0 && max.is_finite() {
        for r in m.iter_mut() {
            for x in r.iter_mut() {
                *x /= max;
            }
        }
    }
    max
}

fn scale_to_unit(v: &mut [f64]) -> Option<()> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Some(())
}

fn align_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    if pivot < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// SIF sentence embedding with the first principal component projected out.
/// Empty or all-OOV utterances give the zero vector.
pub fn sent_embedding<S: AsRef<str>>(utterance: &[S], vectors: &WordVectors, sif: &SifParams) -> Vec<f64> {
    let mut e = sif.raw_embedding(utterance, vectors);
    let pc = &sif.first_principal_component;
    if pc.len() == e.len() {
        let proj = dot(&e, pc);
        for (x, p) in e.iter_mut().zip(pc) {
            *x -= proj * p;
        }
    }
    e
}

/// Cosine similarity; 0.0 when either vector has zero norm.
pub fn cos_sim(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn vectors_load_and_errors() {
        let p = Path::new("v.txt");
        let (v, w) = parse_vectors("a 1 2 3 4\nb 0 0 0 1\nc 1 1 1 1\n", p).unwrap();
        assert_eq!((v.len(), v.dim()), (3, 4));
        assert!(w.is_empty());

        let err = parse_vectors("a 1 2 3 4\nb 1 2 3\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        assert!(parse_vectors("", p).is_err());
        assert!(parse_vectors("a 1 x\n", p).is_err());

        let (v, w) = parse_vectors("a 1 2\nb 3 4\na 5 6\n", p).unwrap();
        assert_eq!(v.get("a").unwrap(), &[5.0, 6.0]);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("duplicate"));
    }

    #[test]
    fn idf_hand_counts() {
        let responses = vec![toks("a b"), toks("a c"), toks("a d"), toks("b c")];
        let t = compute_idf(&responses);
        let close = |x: f64, y: f64| (x - y).abs() < 1e-12;
        assert!(close(t.idf("a").unwrap(), (4.0f64 / 3.0).ln()));
        assert!(close(t.idf("b").unwrap(), 2.0f64.ln()));
        assert!(close(t.idf("c").unwrap(), 2.0f64.ln()));
        assert!(close(t.idf("d").unwrap(), 4.0f64.ln()));
        assert!(close(nidf("a", &t).unwrap(), 0.0));
        assert!(close(nidf("d", &t).unwrap(), 1.0));
        let expected_b = (2.0f64.ln() - (4.0f64 / 3.0).ln()) / (4.0f64.ln() - (4.0f64 / 3.0).ln());
        assert!(close(nidf("b", &t).unwrap(), expected_b));
        assert_eq!(nidf("zzz", &t).unwrap(), 1.0);
    }

    #[test]
    fn idf_identity_and_extremes() {
        let responses = vec![toks("x y"), toks("x z"), toks("x")];
        let t = compute_idf(&responses);
        assert_eq!(t.idf("x").unwrap(), 0.0);
        assert_eq!(t.idf("y").unwrap(), 3.0f64.ln());
        assert_eq!(t.max_idf(), 3.0f64.ln());
    }

    #[test]
    fn idf_ignores_multiplicity() {
        let a = compute_idf(&[toks("a a a b"), toks("b")]);
        let b = compute_idf(&[toks("a b"), toks("b b")]);
        assert_eq!(a, b);
    }

    #[test]
    fn nidf_degenerate() {
        let t = compute_idf(&[toks("a"), toks("a")]);
        assert!(matches!(nidf("a", &t), Err(Error::DegenerateIdf)));
    }

    #[test]
    fn mean_nidf_cases() {
        let t = compute_idf(&[toks("a b"), toks("a c"), toks("a d"), toks("b c")]);
        assert_eq!(mean_nidf(&toks("d"), &t).unwrap(), 1.0);
        assert_eq!(mean_nidf(&toks("a d"), &t).unwrap(), 0.5);
        assert_eq!(mean_nidf(&toks("a d ? ."), &t).unwrap(), 0.5);
        assert_eq!(mean_nidf(&toks(". ?"), &t).unwrap(), 0.0);
    }

    fn vecs(entries: &[(&str, &[f64])]) -> WordVectors {
        let mut v = WordVectors::new(entries[0].1.len());
        for (t, x) in entries {
            v.insert(*t, x.to_vec());
        }
        v
    }

    #[test]
    fn rank_one_pc_parallel_to_word() {
        let v = vecs(&[("cat", &[3.0, 4.0])]);
        let sif = fit_sif(&vec![toks("cat"); 5], &v, DEFAULT_SIF_A).unwrap();
        let pc = &sif.first_principal_component;
        assert!((pc[0] - 0.6).abs() < 1e-12 && (pc[1] - 0.8).abs() < 1e-12);
        let e = sent_embedding(&toks("cat"), &v, &sif);
        assert!(norm(&e) < 1e-12);
    }

    #[test]
    fn large_a_gives_unweighted_mean() {
        let v = vecs(&[("a", &[1.0, 0.0]), ("b", &[0.0, 2.0])]);
        let sif = SifParams {
            a: 1e12,
            word_probs: [("a".to_string(), 0.9), ("b".to_string(), 0.1)].into(),
            first_principal_component: vec![0.0, 0.0],
        };
        let e = sif.raw_embedding(&toks("a b"), &v);
        assert!((e[0] - 0.5).abs() < 1e-9 && (e[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hand_2d_embedding() {
        // p(a) = 0.75, p(b) = 0.25, a = 0.25 -> weights 0.25 and 0.5
        let v = vecs(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let sif = SifParams {
            a: 0.25,
            word_probs: [("a".to_string(), 0.75), ("b".to_string(), 0.25)].into(),
            first_principal_component: vec![1.0, 0.0],
        };
        // raw = (0.25*[1,0] + 0.5*[0,1]) / 2 = [0.125, 0.25]; minus x-projection
        let e = sent_embedding(&toks("a b oov"), &v, &sif);
        assert_eq!(e, vec![0.0, 0.25]);
        assert_eq!(sent_embedding(&toks("oov"), &v, &sif), vec![0.0, 0.0]);
        assert_eq!(sent_embedding::<String>(&[], &v, &sif), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_embeddings_error() {
        let v = vecs(&[("a", &[1.0, 0.0])]);
        assert!(fit_sif(&[toks("zz")], &v, DEFAULT_SIF_A).is_err());
    }

    #[test]
    fn cosine_conventions() {
        assert!((cos_sim(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cos_sim(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cos_sim(&[0.0, 0.0], &[1.0, 3.0]), 0.0);
        assert!((cos_sim(&[1.0, 1.0], &[-2.0, -2.0]) + 1.0).abs() < 1e-15);
    }
}
