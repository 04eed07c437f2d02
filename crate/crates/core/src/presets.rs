//! Named control configurations, shipped as data in `data/presets.toml`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{AgentConfig, BeamConfig};
use crate::error::{Error, Result};
use crate::features::FeatureWeights;
use crate::model::ControlSetting;

const BUILTIN: &str = include_str!("../data/presets.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub weights: FeatureWeights,
    pub rerank_weights: FeatureWeights,
    /// Bucket `z` per controlled attribute.
    pub controls: BTreeMap<String, u8>,
    pub beam: BeamConfig,
}

impl Preset {
    pub fn control_settings(&self) -> Vec<ControlSetting> {
        self.controls
            .iter()
            .map(|(c, &z)| ControlSetting::new(c.clone(), z))
            .collect()
    }

    pub fn agent(&self, persona: Vec<String>) -> AgentConfig {
        AgentConfig {
            name: self.name.clone(),
            controls: self.control_settings(),
            weights: self.weights.clone(),
            rerank_weights: self.rerank_weights.clone(),
            beam: self.beam.clone(),
            persona,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeamOverride {
    beam_size: Option<usize>,
    max_len: Option<usize>,
    min_len: Option<usize>,
    n_best: Option<usize>,
    length_normalize: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetEntry {
    name: String,
    /// Builtin preset this entry starts from.
    base: Option<String>,
    #[serde(default)]
    weights: FeatureWeights,
    #[serde(default)]
    rerank_weights: FeatureWeights,
    #[serde(default)]
    controls: BTreeMap<String, u8>,
    #[serde(default)]
    beam: BeamOverride,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    preset: Vec<PresetEntry>,
}

fn resolve(entry: PresetEntry, builtins: &[Preset]) -> Result<Preset> {
    let mut p = match &entry.base {
        Some(base) => find(builtins, base)?.clone(),
        None => Preset {
            name: String::new(),
            weights: FeatureWeights::new(),
            rerank_weights: FeatureWeights::new(),
            controls: BTreeMap::new(),
            beam: BeamConfig::default(),
        },
    };
    p.name = entry.name;
    for (id, w) in entry.weights.iter() {
        p.weights.set(id, w);
    }
    for (id, w) in entry.rerank_weights.iter() {
        p.rerank_weights.set(id, w);
    }
    p.controls.extend(entry.controls);
    let b = entry.beam;
    if let Some(v) = b.beam_size {
        p.beam.beam_size = v;
    }
    if let Some(v) = b.max_len {
        p.beam.max_len = v;
    }
    if let Some(v) = b.min_len {
        p.beam.min_len = v;
    }
    if b.n_best.is_some() {
        p.beam.n_best = b.n_best;
    }
    if let Some(v) = b.length_normalize {
        p.beam.length_normalize = v;
    }
    if p.beam.n_best.is_some_and(|n| n > p.beam.beam_size) {
        p.beam.n_best = Some(p.beam.beam_size);
    }
    p.beam
        .validate()
        .map_err(|e| Error::Config(format!("preset `{}`: {e}", p.name)))?;
    Ok(p)
}

/// Parses a preset file; entries may start from a builtin via `base`.
pub fn parse_presets(text: &str, builtins: &[Preset]) -> Result<Vec<Preset>> {
    let file: PresetFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("preset file: {e}")))?;
    file.preset
        .into_iter()
        .map(|e| resolve(e, builtins))
        .collect()
}

pub fn builtin_presets() -> Vec<Preset> {
    parse_presets(BUILTIN, &[]).expect("builtin presets are valid")
}

pub fn builtin_source() -> &'static str {
    BUILTIN
}

fn find<'a>(presets: &'a [Preset], name: &str) -> Result<&'a Preset> {
    presets
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

/// A builtin by exact name, or the first preset of a file.
pub fn load_preset(name_or_path: &str) -> Result<Preset> {
    let builtins = builtin_presets();
    if let Ok(p) = find(&builtins, name_or_path) {
        return Ok(p.clone());
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return parse_presets(&text, &builtins)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Config(format!("{}: no presets", path.display())));
    }
    Err(Error::UnknownPreset(name_or_path.to_string()))
}

/// `all`, a comma-separated list of builtin names, or a preset file.
pub fn load_preset_list(spec: &str) -> Result<Vec<Preset>> {
    let builtins = builtin_presets();
    if spec == "all" {
        return Ok(builtins);
    }
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return parse_presets(&text, &builtins);
    }
    spec.split(',')
        .map(|n| find(&builtins, n.trim()).cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureId, Weight};

    #[test]
    fn base_override() {
        let b = builtin_presets();
        let p = parse_presets(
            "[[preset]]\nname = \"small\"\nbase = \"Question-controlled CT 7\"\n[preset.beam]\nbeam_size = 5\n",
            &b,
        )
        .unwrap();
        assert_eq!(p[0].beam.beam_size, 5);
        assert_eq!(p[0].controls["question"], 7);
        assert_eq!(p[0].weights.get(FeatureId::ExtrepUnigram), Some(Weight::NEG_INF));
    }

    #[test]
    fn unknown_feature_rejected() {
        let err = parse_presets("[[preset]]\nname = \"x\"\n[preset.weights]\nextrep_trigram = -1\n", &[]);
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(parse_presets("[[preset]]\nname = \"x\"\nbase = \"nope\"\n", &[]).is_err());
        assert!(matches!(load_preset("No Such Preset"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn list_forms() {
        assert_eq!(load_preset_list("all").unwrap().len(), 28);
        let two = load_preset_list("Greedy Search, Extrep bigram WD -inf").unwrap();
        assert_eq!(two[1].weights.get(FeatureId::ExtrepBigram), Some(Weight::NEG_INF));
    }
}
