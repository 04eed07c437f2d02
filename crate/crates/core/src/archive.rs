//! Single-file model archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "CVCT"
//! version    u32
//! sections   u32      number of sections
//! repeated:
//!   name_len u16, name (UTF-8)
//!   len      u64, payload (UTF-8 JSON)
//! checksum   32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Sections, in order: `meta`, `params`, `vocab`, `controls`, `global`,
//! `buckets`, `idf`, `sif`, `vectors`, `stopwords`, `personas`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ControlSpec, Vocabulary};
use crate::embeddings::{IdfTable, SifParams, WordVectors};
use crate::error::{Error, Result};
use crate::features::Stopwords;
use crate::model::{ConditionalNgramModel, ModelParams, NgramCounts};

pub const MAGIC: &[u8; 4] = b"CVCT";
pub const FORMAT_VERSION: u32 = 1;

const SECTIONS: [&str; 11] = [
    "meta", "params", "vocab", "controls", "global", "buckets", "idf", "sif", "vectors",
    "stopwords", "personas",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub format_version: u32,
    pub seed: u64,
    pub min_count: u64,
    pub sif_a: f64,
    /// Where the word vectors came from, and the SHA-256 of that file.
    pub vectors_source: Option<String>,
    pub vectors_sha256: Option<String>,
    pub stopwords_sha256: String,
}

/// Everything a trained agent needs at decode time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub meta: ArchiveMeta,
    pub model: ConditionalNgramModel,
    pub idf: IdfTable,
    pub sif: Option<SifParams>,
    /// Word vectors restricted to the model vocabulary.
    pub vectors: WordVectors,
    pub stopwords: Vec<String>,
    /// Persona pool seen in training, in corpus order.
    pub personas: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct BucketEntry {
    control: String,
    bucket: u8,
    counts: NgramCounts,
}

fn put_section(buf: &mut Vec<u8>, name: &str, payload: &[u8]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(payload);
}

impl ModelArchive {
    pub fn stopword_set(&self) -> Stopwords {
        Stopwords::from_text(&self.stopwords.join("\n"))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let buckets: Vec<BucketEntry> = m
            .per_bucket
            .iter()
            .map(|((c, b), counts)| BucketEntry {
                control: c.clone(),
                bucket: *b,
                counts: counts.clone(),
            })
            .collect();
        let payloads: [Vec<u8>; 11] = [
            serde_json::to_vec(&self.meta)?,
            serde_json::to_vec(&m.params)?,
            serde_json::to_vec(&m.vocab)?,
            serde_json::to_vec(&m.controls)?,
            serde_json::to_vec(&m.global)?,
            serde_json::to_vec(&buckets)?,
            serde_json::to_vec(&self.idf)?,
            serde_json::to_vec(&self.sif)?,
            serde_json::to_vec(&self.vectors)?,
            serde_json::to_vec(&self.stopwords)?,
            serde_json::to_vec(&self.personas)?,
        ];
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(SECTIONS.len() as u32).to_le_bytes());
        for (name, payload) in SECTIONS.iter().zip(&payloads) {
            put_section(&mut buf, name, payload);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Checksum);
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Archive("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 8 + 4 + 32 {
            return Err(Error::Checksum);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }

        let mut reader = Reader { buf: body, pos: 8 };
        let count = u32::from_le_bytes(reader.take(4)?.try_into().expect("4 bytes"));
        let mut sections: BTreeMap<String, &[u8]> = BTreeMap::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(reader.take(2)?.try_into().expect("2 bytes"));
            let name = std::str::from_utf8(reader.take(name_len as usize)?)
                .map_err(|_| Error::Archive("section name is not UTF-8".into()))?
                .to_string();
            let len = u64::from_le_bytes(reader.take(8)?.try_into().expect("8 bytes"));
            let payload = reader.take(len as usize)?;
            sections.insert(name, payload);
        }
        if reader.pos != body.len() {
            return Err(Error::Archive("trailing bytes after last section".into()));
        }

        fn section<T: DeserializeOwned>(s: &BTreeMap<String, &[u8]>, name: &str) -> Result<T> {
            let raw = s
                .get(name)
                .ok_or_else(|| Error::Archive(format!("missing section `{name}`")))?;
            serde_json::from_slice(raw)
                .map_err(|e| Error::Archive(format!("section `{name}`: {e}")))
        }

        let meta: ArchiveMeta = section(&sections, "meta")?;
        let params: ModelParams = section(&sections, "params")?;
        let vocab: Vocabulary = section(&sections, "vocab")?;
        let controls: Vec<ControlSpec> = section(&sections, "controls")?;
        let global: NgramCounts = section(&sections, "global")?;
        let buckets: Vec<BucketEntry> = section(&sections, "buckets")?;
        let per_bucket = buckets
            .into_iter()
            .map(|b| ((b.control, b.bucket), b.counts))
            .collect();
        let archive = ModelArchive {
            meta,
            model: ConditionalNgramModel {
                vocab,
                params,
                global,
                controls,
                per_bucket,
            },
            idf: section(&sections, "idf")?,
            sif: section(&sections, "sif")?,
            vectors: section(&sections, "vectors")?,
            stopwords: section(&sections, "stopwords")?,
            personas: section(&sections, "personas")?,
        };
        if archive.stopword_set().sha256() != archive.meta.stopwords_sha256 {
            return Err(Error::Archive("stopword list does not match its recorded hash".into()));
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Archive("section runs past end of archive".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}
