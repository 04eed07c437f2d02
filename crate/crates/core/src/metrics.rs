//! Automatic metrics over generated responses.
//!
//! Repetition rates are per-utterance fractions averaged over utterances:
//! bigram rates count the response's adjacent pairs satisfying the feature's
//! condition, unigram rates count non-stopword tokens. Utterances without
//! pairs (or without content words) contribute 0.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenId};
use crate::embeddings::mean_nidf;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::features::{DecodingState, Features, HypothesisView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "replay")]
    Replay,
    #[serde(rename = "self-chat")]
    SelfChat,
    /// Running metrics of a live session.
    #[serde(rename = "interactive")]
    Interactive,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Replay => "replay",
            Protocol::SelfChat => "self-chat",
            Protocol::Interactive => "interactive",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replay" => Ok(Protocol::Replay),
            "self-chat" | "selfchat" => Ok(Protocol::SelfChat),
            "interactive" => Ok(Protocol::Interactive),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

/// Within-utterance repeat fractions, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RepetitionFractions {
    pub extrep_bigram: f64,
    pub extrep_unigram: f64,
    pub intrep_bigram: f64,
    pub intrep_unigram: f64,
    pub partnerrep_bigram: f64,
}

/// Per-utterance values stored in chat logs and aggregated into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnDiagnostics {
    pub mean_nidf: f64,
    /// Cosine to the partner's last utterance; absent on an opening turn.
    pub cos_sim: Option<f64>,
    pub has_question: bool,
    pub repetition: RepetitionFractions,
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn repetition_fractions(features: &Features<'_>, tokens: &[TokenId]) -> RepetitionFractions {
    let mut ext_bi = 0;
    let mut int_bi = 0;
    let mut partner_bi = 0;
    let mut ext_uni = 0;
    let mut int_uni = 0;
    let mut content = 0;
    for t in 0..tokens.len() {
        let w = tokens[t];
        let view = HypothesisView::new(&tokens[..t]);
        if t > 0 {
            ext_bi += (features.extrep_bigram(w, &view) > 0.0) as usize;
            int_bi += (features.intrep_bigram(w, &view) > 0.0) as usize;
            partner_bi += (features.partnerrep_bigram(w, &view) > 0.0) as usize;
        }
        if !features.tables.stopword[w as usize] {
            content += 1;
            ext_uni += (features.extrep_unigram(w, &view) > 0.0) as usize;
            int_uni += (features.intrep_unigram(w, &view) > 0.0) as usize;
        }
    }
    let pairs = tokens.len().saturating_sub(1);
    RepetitionFractions {
        extrep_bigram: fraction(ext_bi, pairs),
        extrep_unigram: fraction(ext_uni, content),
        intrep_bigram: fraction(int_bi, pairs),
        intrep_unigram: fraction(int_uni, content),
        partnerrep_bigram: fraction(partner_bi, pairs),
    }
}

/// Diagnostics for `text` spoken under `state`. Uses only the text, the
/// state and the archive, so a stored value can always be recomputed.
pub fn diagnose(engine: &Engine, state: &DecodingState, text: &str) -> TurnDiagnostics {
    let words = tokenize(text);
    let ids = engine.vocab().encode(&words);
    let nidf = mean_nidf(&words, &engine.archive.idf).unwrap_or(0.0);
    let cos_sim = if state.has_partner_utterance() && engine.archive.sif.is_some() {
        Some(
            engine
                .embedder()
                .similarity(&ids, state.partner_last_utterance()),
        )
    } else {
        None
    };
    TurnDiagnostics {
        mean_nidf: nidf,
        cos_sim,
        has_question: words.iter().any(|w| w == "?"),
        repetition: repetition_fractions(&engine.features(state), &ids),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: String,
    pub extrep_bigram_pct: f64,
    pub extrep_unigram_pct: f64,
    pub intrep_bigram_pct: f64,
    pub intrep_unigram_pct: f64,
    pub partnerrep_bigram_pct: f64,
    pub mean_nidf: f64,
    /// 0 when no utterance had a partner utterance to compare with.
    pub mean_cos_sim: f64,
    pub question_pct: f64,
    pub n_utterances: usize,
    pub protocol: Protocol,
}

/// Averages diagnostics in order; the sum order is fixed so reports are
/// bit-stable.
pub fn aggregate(config: &str, protocol: Protocol, diags: &[TurnDiagnostics]) -> Result<MetricsReport> {
    if diags.is_empty() {
        return Err(Error::Validation(format!("no utterances to score for `{config}`")));
    }
    let n = diags.len() as f64;
    let mean = |f: &dyn Fn(&TurnDiagnostics) -> f64| diags.iter().map(f).sum::<f64>() / n;
    let cos: Vec<f64> = diags.iter().filter_map(|d| d.cos_sim).collect();
    let mean_cos_sim = if cos.is_empty() {
        0.0
    } else {
        cos.iter().sum::<f64>() / cos.len() as f64
    };
    Ok(MetricsReport {
        config: config.to_string(),
        extrep_bigram_pct: 100.0 * mean(&|d| d.repetition.extrep_bigram),
        extrep_unigram_pct: 100.0 * mean(&|d| d.repetition.extrep_unigram),
        intrep_bigram_pct: 100.0 * mean(&|d| d.repetition.intrep_bigram),
        intrep_unigram_pct: 100.0 * mean(&|d| d.repetition.intrep_unigram),
        partnerrep_bigram_pct: 100.0 * mean(&|d| d.repetition.partnerrep_bigram),
        mean_nidf: mean(&|d| d.mean_nidf),
        mean_cos_sim,
        question_pct: 100.0 * mean(&|d| if d.has_question { 1.0 } else { 0.0 }),
        n_utterances: diags.len(),
        protocol,
    })
}

const TSV_HEADER: [&str; 11] = [
    "config",
    "extrep_bigram_pct",
    "extrep_unigram_pct",
    "intrep_bigram_pct",
    "intrep_unigram_pct",
    "partnerrep_bigram_pct",
    "mean_nidf",
    "mean_cos_sim",
    "question_pct",
    "n_utterances",
    "protocol",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub text: String,
    pub tsv: String,
}

/// Aligned text plus tab-separated rows that parse back exactly.
pub fn report_table(reports: &[MetricsReport]) -> Result<Table> {
    if let Some(first) = reports.first() {
        if let Some(other) = reports.iter().find(|r| r.protocol != first.protocol) {
            return Err(Error::Validation(format!(
                "cannot tabulate mixed protocols: `{}` is {}, `{}` is {}",
                first.config, first.protocol, other.config, other.protocol
            )));
        }
    }
    let headers = [
        "Config", "Ext bigram", "Ext unigram", "Int bigram", "Int unigram", "Partner bigram",
        "NIDF", "Cos sim", "Has '?'", "N",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.config.clone(),
                format!("{:.2}%", r.extrep_bigram_pct),
                format!("{:.2}%", r.extrep_unigram_pct),
                format!("{:.2}%", r.intrep_bigram_pct),
                format!("{:.2}%", r.intrep_unigram_pct),
                format!("{:.2}%", r.partnerrep_bigram_pct),
                format!("{:.4}", r.mean_nidf),
                format!("{:.4}", r.mean_cos_sim),
                format!("{:.2}%", r.question_pct),
                r.n_utterances.to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut text = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&mut text, &headers.map(String::from));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut text, &rule);
    for row in &rows {
        line(&mut text, row);
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(text, "protocol: {}", r.protocol);
    }

    let mut tsv = TSV_HEADER.join("\t");
    tsv.push('\n');
    for r in reports {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.config,
            r.extrep_bigram_pct,
            r.extrep_unigram_pct,
            r.intrep_bigram_pct,
            r.intrep_unigram_pct,
            r.partnerrep_bigram_pct,
            r.mean_nidf,
            r.mean_cos_sim,
            r.question_pct,
            r.n_utterances,
            r.protocol
        );
    }
    Ok(Table { text, tsv })
}

pub fn parse_tsv(text: &str) -> Result<Vec<MetricsReport>> {
    let bad = |line: usize, message: String| Error::Parse {
        path: "<tsv>".into(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TSV_HEADER.join("\t") => {}
        _ => return Err(bad(1, "missing or wrong header".into())),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        if raw.is_empty() {
            continue;
        }
        let cells: Vec<&str> = raw.split('\t').collect();
        if cells.len() != TSV_HEADER.len() {
            return Err(bad(i + 1, format!("expected {} cells", TSV_HEADER.len())));
        }
        let num = |k: usize| -> Result<f64> {
            cells[k]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad number in `{}`", TSV_HEADER[k])))
        };
        out.push(MetricsReport {
            config: cells[0].to_string(),
            extrep_bigram_pct: num(1)?,
            extrep_unigram_pct: num(2)?,
            intrep_bigram_pct: num(3)?,
            intrep_unigram_pct: num(4)?,
            partnerrep_bigram_pct: num(5)?,
            mean_nidf: num(6)?,
            mean_cos_sim: num(7)?,
            question_pct: num(8)?,
            n_utterances: cells[9]
                .parse()
                .map_err(|_| bad(i + 1, "bad utterance count".into()))?,
            protocol: cells[10].parse().map_err(|e: Error| bad(i + 1, e.to_string()))?,
        });
    }
    Ok(out)
}
