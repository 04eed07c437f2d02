use std::path::Path;

use crate::archive::ModelArchive;
use crate::corpus::{Speaker, TokenId, Vocabulary};
use crate::error::Result;
use crate::features::{DecodingState, Embedder, FeatureTables, Features, Stopwords};
use crate::model::ConditionalNgramModel;

/// A loaded archive plus the per-token tables derived from it. Immutable;
/// share it across threads behind an `Arc`.
#[derive(Debug, Clone)]
pub struct Engine {
    pub archive: ModelArchive,
    pub tables: FeatureTables,
    pub stopwords: Stopwords,
}

impl Engine {
    pub fn new(archive: ModelArchive) -> Result<Self> {
        let stopwords = archive.stopword_set();
        let tables = FeatureTables::build(
            &archive.model.vocab,
            &archive.idf,
            &archive.vectors,
            &stopwords,
        )?;
        Ok(Engine {
            archive,
            tables,
            stopwords,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(ModelArchive::load(path)?)
    }

    pub fn model(&self) -> &ConditionalNgramModel {
        &self.archive.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.archive.model.vocab
    }

    pub fn embedder(&self) -> Embedder<'_> {
        Embedder {
            vocab: self.vocab(),
            vectors: &self.archive.vectors,
            sif: self.archive.sif.as_ref(),
        }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.vocab().encode_text(text)
    }

    pub fn encode_persona(&self, persona: &[String]) -> Vec<TokenId> {
        persona.iter().flat_map(|s| self.encode(s)).collect()
    }

    pub fn state(
        &self,
        own: Speaker,
        persona: &[String],
        history: Vec<(Speaker, Vec<TokenId>)>,
    ) -> DecodingState {
        DecodingState::new(
            own,
            self.encode_persona(persona),
            history,
            &self.embedder(),
            &self.tables,
        )
    }

    pub fn features<'a>(&'a self, state: &'a DecodingState) -> Features<'a> {
        Features::new(&self.tables, state)
    }
}
