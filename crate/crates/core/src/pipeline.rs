//! Corpus to model archive: vocabulary, annotation, bucketing, training.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::archive::{ArchiveMeta, ModelArchive, FORMAT_VERSION};
use crate::corpus::{
    assign_question_buckets, bucket_for, compute_equal_buckets, extract_examples, is_special,
    tokenize, AnnotatedExample, ControlSpec, Dialogue, Speaker, TokenId, Vocabulary,
};
use crate::embeddings::{
    compute_idf, cos_sim, fit_sif, mean_nidf, sent_embedding, IdfTable, SifParams, WordVectors,
    DEFAULT_SIF_A,
};
use crate::error::{Error, Result};
use crate::features::Stopwords;
use crate::model::{train, ModelParams};

pub const QUESTION_BUCKETS: u8 = 11;
pub const CONTINUOUS_BUCKETS: usize = 10;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub params: ModelParams,
    pub min_count: u64,
    pub seed: u64,
    pub sif_a: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            params: ModelParams::default(),
            min_count: Vocabulary::DEFAULT_MIN_COUNT,
            seed: 0,
            sif_a: DEFAULT_SIF_A,
        }
    }
}

/// Word vectors together with a description of their origin.
#[derive(Debug, Clone)]
pub struct VectorSource<'a> {
    pub vectors: &'a WordVectors,
    pub source: String,
    pub sha256: String,
}

pub fn build_vocabulary(dialogues: &[Dialogue], min_count: u64) -> Vocabulary {
    let mut lists: Vec<Vec<String>> = Vec::new();
    for d in dialogues {
        for p in &d.personas {
            lists.extend(p.iter().map(|s| tokenize(s)));
        }
        lists.extend(d.turns.iter().map(|t| tokenize(&t.text)));
    }
    Vocabulary::build(lists.iter().map(Vec::as_slice), min_count)
}

/// Non-special token strings of an id sequence.
pub fn word_strings<'a>(vocab: &'a Vocabulary, ids: &[TokenId]) -> Vec<&'a str> {
    ids.iter()
        .filter(|&&i| !is_special(i))
        .map(|&i| vocab.token(i))
        .collect()
}

/// Fills `mean_nidf` and `resp_cos_sim`.
pub fn annotate(
    examples: &mut [AnnotatedExample],
    vocab: &Vocabulary,
    idf: &IdfTable,
    embedding: Option<(&WordVectors, &SifParams)>,
) -> Result<()> {
    for ex in examples.iter_mut() {
        let words = word_strings(vocab, &ex.response_tokens);
        ex.mean_nidf = match mean_nidf(&words, idf) {
            Ok(v) => v,
            Err(Error::DegenerateIdf) => 0.0,
            Err(e) => return Err(e),
        };
        ex.resp_cos_sim = match embedding {
            Some((vectors, sif)) if !ex.partner_last_utterance_tokens.is_empty() => {
                let partner = word_strings(vocab, &ex.partner_last_utterance_tokens);
                cos_sim(
                    &sent_embedding(&words, vectors, sif),
                    &sent_embedding(&partner, vectors, sif),
                )
            }
            _ => 0.0,
        };
    }
    Ok(())
}

pub fn extract_all(dialogues: &[Dialogue], vocab: &Vocabulary) -> Vec<AnnotatedExample> {
    let mut out = Vec::new();
    for d in dialogues {
        for side in [Speaker::First, Speaker::Second] {
            out.extend(extract_examples(d, side, vocab));
        }
    }
    out
}

fn continuous_control(
    name: &str,
    values: &[f64],
) -> Result<Option<(ControlSpec, Vec<Option<u8>>)>> {
    match compute_equal_buckets(values, CONTINUOUS_BUCKETS) {
        Ok(boundaries) => {
            let assign = values
                .iter()
                .map(|&v| Some(bucket_for(&boundaries, v)))
                .collect();
            Ok(Some((ControlSpec::continuous(name, boundaries), assign)))
        }
        Err(Error::DegenerateBucketing(why)) => {
            log::warn!("skipping control `{name}`: {why}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Vocabulary, annotated examples and the statistics they were scored
/// with.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub examples: Vec<AnnotatedExample>,
    pub idf: IdfTable,
    pub sif: Option<SifParams>,
    /// Word vectors restricted to `vocab`.
    pub vectors: WordVectors,
}

/// Builds the vocabulary, extracts examples and annotates them.
pub fn prepare(
    dialogues: &[Dialogue],
    vectors: Option<&WordVectors>,
    config: &TrainConfig,
) -> Result<Prepared> {
    if dialogues.is_empty() {
        return Err(Error::Validation("corpus is empty".into()));
    }
    for d in dialogues {
        d.validate()?;
    }
    let vocab = build_vocabulary(dialogues, config.min_count);
    let mut examples = extract_all(dialogues, &vocab);
    if examples.is_empty() {
        return Err(Error::Validation("corpus yields no training examples".into()));
    }
    let responses: Vec<Vec<&str>> = examples
        .iter()
        .map(|e| word_strings(&vocab, &e.response_tokens))
        .collect();
    let idf = compute_idf(&responses);

    let restricted = match vectors {
        Some(v) => v.restrict(vocab.ids().map(|i| vocab.token(i))),
        None => WordVectors::default(),
    };
    let sif = if restricted.is_empty() {
        None
    } else {
        Some(fit_sif(&responses, &restricted, config.sif_a)?)
    };
    annotate(&mut examples, &vocab, &idf, sif.as_ref().map(|s| (&restricted, s)))?;
    Ok(Prepared {
        vocab,
        examples,
        idf,
        sif,
        vectors: restricted,
    })
}

/// Trains a full archive from dialogues. Controls whose bucketing is
/// infeasible on this corpus are skipped with a warning.
pub fn train_archive(
    dialogues: &[Dialogue],
    vectors: Option<VectorSource<'_>>,
    config: &TrainConfig,
) -> Result<ModelArchive> {
    let Prepared {
        vocab,
        examples,
        idf,
        sif,
        vectors: restricted,
    } = prepare(dialogues, vectors.as_ref().map(|v| v.vectors), config)?;

    let mut controls = Vec::new();
    let mut assignments = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    match assign_question_buckets(&examples, QUESTION_BUCKETS, &mut rng) {
        Ok(a) => {
            controls.push(ControlSpec::question(QUESTION_BUCKETS));
            assignments.push(a.buckets);
        }
        Err(Error::DegenerateBucketing(why)) => {
            log::warn!("skipping control `question`: {why}");
        }
        Err(e) => return Err(e),
    }
    let nidf_values: Vec<f64> = examples.iter().map(|e| e.mean_nidf).collect();
    if let Some((spec, assign)) = continuous_control(ControlSpec::SPECIFICITY, &nidf_values)? {
        controls.push(spec);
        assignments.push(assign);
    }
    if sif.is_some() {
        let cos_values: Vec<f64> = examples.iter().map(|e| e.resp_cos_sim).collect();
        if let Some((spec, assign)) =
            continuous_control(ControlSpec::RESPONSE_RELATEDNESS, &cos_values)?
        {
            controls.push(spec);
            assignments.push(assign);
        }
    }

    let model = train(&examples, vocab, config.params.clone(), controls, &assignments)?;

    let mut personas: Vec<Vec<String>> = Vec::new();
    for d in dialogues {
        for p in &d.personas {
            if !personas.contains(p) {
                personas.push(p.clone());
            }
        }
    }
    let stopwords = Stopwords::builtin();
    let (vectors_source, vectors_sha256) = match &vectors {
        Some(v) => (Some(v.source.clone()), Some(v.sha256.clone())),
        None => (None, None),
    };
    Ok(ModelArchive {
        meta: ArchiveMeta {
            format_version: FORMAT_VERSION,
            seed: config.seed,
            min_count: config.min_count,
            sif_a: config.sif_a,
            vectors_source,
            vectors_sha256,
            stopwords_sha256: stopwords.sha256(),
        },
        model,
        idf,
        sif,
        vectors: restricted,
        stopwords: stopwords.to_sorted(),
        personas,
    })
}
