//! Multi-turn execution: self-chat, gold-context replay and interactive
//! sessions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Speaker, TokenId};
use crate::decoder::{decode_utterance, AgentConfig};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::features::FeatureWeights;
use crate::metrics::{aggregate, diagnose, MetricsReport, Protocol, TurnDiagnostics};
use crate::model::ControlSetting;
use crate::presets::Preset;

pub const DEFAULT_TURNS: usize = 6;

/// Who produced one side of a logged conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Participant {
    Agent { config: AgentConfig },
    Human,
}

/// Settings in force when a turn was decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSettings {
    pub controls: Vec<ControlSetting>,
    pub weights: FeatureWeights,
    pub rerank_weights: FeatureWeights,
}

impl TurnSettings {
    pub fn of(agent: &AgentConfig) -> Self {
        TurnSettings {
            controls: agent.controls.clone(),
            weights: agent.weights.clone(),
            rerank_weights: agent.rerank_weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedTurn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<TurnDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<TurnSettings>,
}

/// A recorded conversation. Serializes to one line of the corpus format
/// extended with `configs`, `seed` and per-turn `diagnostics`, so it loads
/// as a plain [`Dialogue`] too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatLog {
    pub id: String,
    pub configs: Vec<Participant>,
    pub seed: u64,
    pub personas: Vec<Vec<String>>,
    pub turns: Vec<LoggedTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ChatLog {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn dialogue(&self) -> Dialogue {
        Dialogue {
            id: self.id.clone(),
            personas: self.personas.clone(),
            turns: self
                .turns
                .iter()
                .map(|t| crate::corpus::Turn {
                    speaker: t.speaker,
                    text: t.text.clone(),
                })
                .collect(),
        }
    }

    /// Diagnostics recomputed from the logged text alone.
    pub fn recompute_diagnostics(&self, engine: &Engine) -> Vec<Option<TurnDiagnostics>> {
        let mut history: Vec<(Speaker, Vec<TokenId>)> = Vec::new();
        let mut out = Vec::new();
        for t in &self.turns {
            out.push(t.diagnostics.as_ref().map(|_| {
                let persona = self.personas.get(t.speaker.index()).cloned().unwrap_or_default();
                let state = engine.state(t.speaker, &persona, history.clone());
                diagnose(engine, &state, &t.text)
            }));
            history.push((t.speaker, engine.encode(&t.text)));
        }
        out
    }
}

pub fn write_chatlogs(path: impl AsRef<std::path::Path>, logs: &[ChatLog]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for log in logs {
        out.push_str(&log.to_line()?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_chatlogs(path: impl AsRef<std::path::Path>) -> Result<Vec<ChatLog>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Two agents alternate for `n_turns` each; `a` speaks first. A decode
/// failure truncates the log and records the error.
pub fn self_chat(
    engine: &Engine,
    a: &AgentConfig,
    b: &AgentConfig,
    personas: [Vec<String>; 2],
    n_turns: usize,
    id: &str,
    seed: u64,
) -> ChatLog {
    let agents = [a, b];
    let mut log = ChatLog {
        id: id.to_string(),
        configs: agents
            .iter()
            .map(|&c| Participant::Agent { config: c.clone() })
            .collect(),
        seed,
        personas: personas.to_vec(),
        turns: Vec::new(),
        error: None,
    };
    let mut history: Vec<(Speaker, Vec<TokenId>)> = Vec::new();
    for i in 0..2 * n_turns {
        let speaker = if i % 2 == 0 { Speaker::First } else { Speaker::Second };
        let agent = agents[speaker.index()];
        let state = engine.state(speaker, &personas[speaker.index()], history.clone());
        match decode_utterance(engine, agent, &state) {
            Ok(tokens) => {
                let text = engine.vocab().decode(&tokens);
                let diagnostics = diagnose(engine, &state, &text);
                history.push((speaker, engine.encode(&text)));
                log.turns.push(LoggedTurn {
                    speaker,
                    text,
                    diagnostics: Some(diagnostics),
                    settings: None,
                });
            }
            Err(e) => {
                log.error = Some(format!("turn {i}: {e}"));
                break;
            }
        }
    }
    log
}

/// One response for a single gold context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResponse {
    pub turn_index: usize,
    pub text: String,
    pub diagnostics: TurnDiagnostics,
}

/// Generates one response per gold turn of `side`, each conditioned on the
/// gold history and gold persona (never on earlier generations).
pub fn replay_chat(
    engine: &Engine,
    agent: &AgentConfig,
    dialogue: &Dialogue,
    side: Speaker,
) -> Result<Vec<ReplayResponse>> {
    replay_with(engine, dialogue, side, |state, _| {
        let tokens = decode_utterance(engine, agent, state)?;
        Ok(engine.vocab().decode(&tokens))
    })
}

/// The gold responses themselves, scored the way replay scores generations.
pub fn gold_responses(engine: &Engine, dialogue: &Dialogue, side: Speaker) -> Vec<ReplayResponse> {
    replay_with(engine, dialogue, side, |_, gold| Ok(gold.to_string()))
        .expect("gold replay cannot fail")
}

fn replay_with(
    engine: &Engine,
    dialogue: &Dialogue,
    side: Speaker,
    mut respond: impl FnMut(&crate::features::DecodingState, &str) -> Result<String>,
) -> Result<Vec<ReplayResponse>> {
    let persona = dialogue.persona(side);
    let mut history: Vec<(Speaker, Vec<TokenId>)> = Vec::new();
    let mut out = Vec::new();
    for (i, turn) in dialogue.turns.iter().enumerate() {
        let ids = engine.encode(&turn.text);
        if turn.speaker == side && !ids.is_empty() {
            let state = engine.state(side, persona, history.clone());
            let text = respond(&state, &turn.text)?;
            let diagnostics = diagnose(engine, &state, &text);
            out.push(ReplayResponse {
                turn_index: i,
                text,
                diagnostics,
            });
        }
        history.push((turn.speaker, ids));
    }
    Ok(out)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Replays both sides of every dialogue; results keep corpus order.
/// `agent = None` scores the gold responses.
pub fn replay_corpus(
    engine: &Engine,
    agent: Option<&AgentConfig>,
    dialogues: &[Dialogue],
    workers: usize,
) -> Result<Vec<TurnDiagnostics>> {
    let per_dialogue: Vec<Result<Vec<TurnDiagnostics>>> = pool(workers)?.install(|| {
        dialogues
            .par_iter()
            .map(|d| {
                let mut diags = Vec::new();
                for side in [Speaker::First, Speaker::Second] {
                    let responses = match agent {
                        Some(a) => replay_chat(engine, a, d, side)?,
                        None => gold_responses(engine, d, side),
                    };
                    diags.extend(responses.into_iter().map(|r| r.diagnostics));
                }
                Ok(diags)
            })
            .collect()
    });
    let mut out = Vec::new();
    for d in per_dialogue {
        out.extend(d?);
    }
    Ok(out)
}

/// Persona pairs drawn without replacement from `pool`; the pool is
/// reshuffled whenever it runs out.
pub fn sample_persona_pairs(
    pool: &[Vec<String>],
    count: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<[Vec<String>; 2]>> {
    if pool.len() < 2 {
        return Err(Error::Validation("persona pool needs at least two personas".into()));
    }
    let mut order: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if order.len() < 2 {
            order = (0..pool.len()).collect();
            order.shuffle(rng);
        }
        let a = order.pop().expect("non-empty");
        let b = order.pop().expect("non-empty");
        out.push([pool[a].clone(), pool[b].clone()]);
    }
    Ok(out)
}

/// `count` self-chats with both sides running `agent`, personas sampled
/// from the archive's pool with `seed`. Logs keep index order.
pub fn self_chat_batch(
    engine: &Engine,
    agent: &AgentConfig,
    count: usize,
    n_turns: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<ChatLog>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pairs = sample_persona_pairs(&engine.archive.personas, count, &mut rng)?;
    let logs = pool(workers)?.install(|| {
        pairs
            .into_par_iter()
            .enumerate()
            .map(|(i, personas)| {
                self_chat(engine, agent, agent, personas, n_turns, &format!("selfchat-{i}"), seed)
            })
            .collect()
    });
    Ok(logs)
}

/// Returned by one interactive step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub response: String,
    pub diagnostics: TurnDiagnostics,
    pub turn_index: usize,
}

/// A human (speaker 0) talking to one agent (speaker 1). Controls may be
/// changed between steps; each model turn records the settings used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub agent: AgentConfig,
    pub turns: Vec<LoggedTurn>,
}

impl Session {
    pub const HUMAN: Speaker = Speaker::First;
    pub const MODEL: Speaker = Speaker::Second;

    pub fn new(id: impl Into<String>, agent: AgentConfig) -> Self {
        Session {
            id: id.into(),
            agent,
            turns: Vec::new(),
        }
    }

    fn history(&self, engine: &Engine) -> Vec<(Speaker, Vec<TokenId>)> {
        self.turns
            .iter()
            .map(|t| (t.speaker, engine.encode(&t.text)))
            .collect()
    }

    /// Appends the user's turn, decodes a reply and appends it. On error the
    /// session is left unchanged.
    pub fn step(&mut self, engine: &Engine, user_text: &str) -> Result<StepOutput> {
        let text = user_text.trim();
        if text.is_empty() || engine.encode(text).is_empty() {
            return Err(Error::Validation("message text is empty".into()));
        }
        let mut history = self.history(engine);
        history.push((Self::HUMAN, engine.encode(text)));
        let state = engine.state(Self::MODEL, &self.agent.persona, history);
        let tokens = decode_utterance(engine, &self.agent, &state)?;
        let response = engine.vocab().decode(&tokens);
        let diagnostics = diagnose(engine, &state, &response);
        self.turns.push(LoggedTurn {
            speaker: Self::HUMAN,
            text: text.to_string(),
            diagnostics: None,
            settings: None,
        });
        self.turns.push(LoggedTurn {
            speaker: Self::MODEL,
            text: response.clone(),
            diagnostics: Some(diagnostics.clone()),
            settings: Some(TurnSettings::of(&self.agent)),
        });
        Ok(StepOutput {
            response,
            diagnostics,
            turn_index: self.turns.len() - 1,
        })
    }

    pub fn diagnostics(&self) -> Vec<TurnDiagnostics> {
        self.turns.iter().filter_map(|t| t.diagnostics.clone()).collect()
    }

    pub fn to_chatlog(&self, seed: u64) -> ChatLog {
        ChatLog {
            id: self.id.clone(),
            configs: vec![
                Participant::Human,
                Participant::Agent {
                    config: self.agent.clone(),
                },
            ],
            seed,
            personas: vec![Vec::new(), self.agent.persona.clone()],
            turns: self.turns.clone(),
            error: None,
        }
    }
}

pub const GOLD_ROW: &str = "Gold Data";

/// Diagnostics for one agent under `protocol`: replay of both sides of every
/// dialogue, or one self-chat per dialogue using its persona pair.
pub fn protocol_diagnostics(
    engine: &Engine,
    agent: &AgentConfig,
    dialogues: &[Dialogue],
    protocol: Protocol,
    n_turns: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<TurnDiagnostics>> {
    match protocol {
        Protocol::Replay => replay_corpus(engine, Some(agent), dialogues, workers),
        Protocol::SelfChat => {
            let logs: Vec<ChatLog> = pool(workers)?.install(|| {
                dialogues
                    .par_iter()
                    .map(|d| {
                        let personas = [d.personas[0].clone(), d.personas[1].clone()];
                        self_chat(engine, agent, agent, personas, n_turns, &d.id, seed)
                    })
                    .collect()
            });
            Ok(logs
                .into_iter()
                .flat_map(|l| l.turns.into_iter().filter_map(|t| t.diagnostics))
                .collect())
        }
        Protocol::Interactive => Err(Error::Validation(
            "interactive metrics come from live sessions".into(),
        )),
    }
}

/// One report per preset, preceded by the gold row under replay.
pub fn evaluate_presets(
    engine: &Engine,
    presets: &[Preset],
    dialogues: &[Dialogue],
    protocol: Protocol,
    n_turns: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<MetricsReport>> {
    let mut out = Vec::new();
    if protocol == Protocol::Replay {
        let gold = replay_corpus(engine, None, dialogues, workers)?;
        out.push(aggregate(GOLD_ROW, protocol, &gold)?);
    }
    for p in presets {
        log::info!("evaluating `{}`", p.name);
        let agent = p.agent(Vec::new());
        let diags =
            protocol_diagnostics(engine, &agent, dialogues, protocol, n_turns, seed, workers)?;
        out.push(aggregate(&p.name, protocol, &diags)?);
    }
    Ok(out)
}
