use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use convctl::corpus::{load_corpus, write_corpus, Dialogue, Speaker};
use convctl::decoder::decode_utterance;
use convctl::embeddings::{load_vectors_with_warnings, WordVectors};
use convctl::engine::Engine;
use convctl::features::{FeatureId, Weight};
use convctl::metrics::{diagnose, report_table, Protocol, TurnDiagnostics};
use convctl::model::{ControlSetting, ModelParams};
use convctl::pipeline::{prepare, train_archive, TrainConfig, VectorSource};
use convctl::presets::{builtin_presets, builtin_source, load_preset, load_preset_list, parse_presets};
use convctl::service::{serve, AppState};
use convctl::simulator::{
    self_chat, self_chat_batch, write_chatlogs, Session, DEFAULT_TURNS,
};
use convctl::{desk, Error};

#[derive(Parser)]
#[command(name = "convctl", version, about = "Controllable dialogue generation toolkit")]
struct Cli {
    /// More log output (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Replay,
    Selfchat,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Replay => Protocol::Replay,
            ProtocolArg::Selfchat => Protocol::SelfChat,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize a corpus, or generate the synthetic desk corpus
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Generate this many synthetic training dialogues instead
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file, or output directory with --synthetic
        #[arg(long)]
        out: PathBuf,
    },
    /// Write annotated training examples (question flag, NIDF, relatedness)
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model archive
    Train {
        /// Training dialogues, one JSON record per line
        #[arg(long)]
        corpus: PathBuf,
        /// Word vectors in text format; enables relatedness features
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// N-gram order
        #[arg(long, default_value_t = 4)]
        order: usize,
        /// Seed for the question-bucket shuffle
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the next turn of every dialogue in a corpus
    Decode {
        /// Model archive written by `train`
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        preset: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Let two agents talk and write the chat logs
    SelfChat {
        /// Model archive written by `train`
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        preset: String,
        /// Take persona pairs from this corpus (one chat per dialogue)
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Number of chats with personas sampled from the model's pool
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Turns per agent in each self-chat
        #[arg(long, default_value_t = DEFAULT_TURNS)]
        turns: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; output does not depend on this
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Automatic metrics table for a list of presets
    Metrics {
        /// Model archive written by `train`
        #[arg(long)]
        model: PathBuf,
        /// Evaluation dialogues (e.g. the validation split)
        #[arg(long)]
        corpus: PathBuf,
        /// `all`, comma-separated preset names, or a preset file
        #[arg(long, default_value = "all")]
        presets: String,
        #[arg(long, value_enum, default_value = "replay")]
        protocol: ProtocolArg,
        /// Turns per agent in each self-chat
        #[arg(long, default_value_t = DEFAULT_TURNS)]
        turns: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; output does not depend on this
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Also write tab-separated rows here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List presets, or validate a preset file
    Presets {
        #[arg(long)]
        presets: Option<PathBuf>,
        /// Write the builtin preset file here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chat with an agent in the terminal
    Chat {
        /// Model archive written by `train`
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "Repetition-controlled baseline")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Save the transcript as a chat log on exit
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the chat-session HTTP API
    Serve {
        /// Model archive written by `train`
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Extra preset file offered next to the builtins
        #[arg(long)]
        presets: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write all sessions here on shutdown
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match check_inputs(&cli.command).and_then(|()| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<Error>())
                .map(Error::kind)
                .or_else(|| e.chain().any(|c| c.is::<io::Error>()).then_some("io"))
                .unwrap_or("error");
            // library errors already render their source, so stop the chain there
            let mut parts = Vec::new();
            for c in e.chain() {
                parts.push(c.to_string());
                if c.downcast_ref::<Error>().is_some() {
                    break;
                }
            }
            let msg = parts.join(": ").replace('\n', " ");
            eprintln!("error[{kind}]: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn read_vectors(path: &Path) -> anyhow::Result<(WordVectors, String)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let sha = format!("{:x}", Sha256::digest(&bytes));
    let (vectors, warnings) = load_vectors_with_warnings(path)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok((vectors, sha))
}

fn write_out(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => match io::stdout().write_all(text.as_bytes()) {
            Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        },
    }
}

/// Fails before any work starts if an input file is missing.
fn check_inputs(command: &Command) -> anyhow::Result<()> {
    let inputs: Vec<&PathBuf> = match command {
        Command::Ingest { corpus, .. } => corpus.iter().collect(),
        Command::Annotate {
            corpus, embeddings, ..
        }
        | Command::Train {
            corpus, embeddings, ..
        } => std::iter::once(corpus).chain(embeddings).collect(),
        Command::Decode { model, corpus, .. } | Command::Metrics { model, corpus, .. } => {
            vec![model, corpus]
        }
        Command::SelfChat { model, corpus, .. } => std::iter::once(model).chain(corpus).collect(),
        Command::Presets { presets, .. } => presets.iter().collect(),
        Command::Chat { model, .. } => vec![model],
        Command::Serve { model, presets, .. } => std::iter::once(model).chain(presets).collect(),
    };
    for path in inputs {
        if !path.is_file() {
            return Err(Error::Io {
                path: path.clone(),
                source: io::Error::new(io::ErrorKind::NotFound, "input file not found"),
            }
            .into());
        }
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Ingest {
            corpus,
            synthetic,
            seed,
            out,
        } => match (corpus, synthetic) {
            (None, Some(n)) => {
                std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                let (train, valid) = desk::generate_splits(n, (n / 10).max(1), seed);
                write_corpus(out.join("train.jsonl"), &train)?;
                write_corpus(out.join("valid.jsonl"), &valid)?;
                let vectors = out.join("vectors.txt");
                std::fs::write(&vectors, desk::generate_vectors(seed).to_text())
                    .with_context(|| format!("writing {}", vectors.display()))?;
                eprintln!("wrote {} train and {} valid dialogues to {}", train.len(), valid.len(), out.display());
                Ok(())
            }
            (Some(path), None) => {
                let dialogues = load_corpus(&path)?;
                write_corpus(&out, &dialogues)?;
                eprintln!("{} dialogues ok", dialogues.len());
                Ok(())
            }
            _ => bail!("pass exactly one of --corpus or --synthetic"),
        },
        Command::Annotate {
            corpus,
            embeddings,
            out,
        } => {
            let dialogues = load_corpus(&corpus)?;
            let vectors = embeddings.as_deref().map(read_vectors).transpose()?;
            let p = prepare(&dialogues, vectors.as_ref().map(|v| &v.0), &TrainConfig::default())?;
            let mut text = String::new();
            for ex in &p.examples {
                let row = serde_json::json!({
                    "speaker": ex.speaker,
                    "response": p.vocab.decode(&ex.response_tokens),
                    "has_question": ex.has_question,
                    "mean_nidf": ex.mean_nidf,
                    "resp_cos_sim": ex.resp_cos_sim,
                });
                text.push_str(&row.to_string());
                text.push('\n');
            }
            write_out(Some(&out), &text)
        }
        Command::Train {
            corpus,
            embeddings,
            order,
            seed,
            out,
        } => {
            let dialogues = load_corpus(&corpus)?;
            let vectors = embeddings.as_deref().map(read_vectors).transpose()?;
            let source = match (&vectors, &embeddings) {
                (Some((v, sha)), Some(path)) => Some(VectorSource {
                    vectors: v,
                    source: path
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    sha256: sha.clone(),
                }),
                _ => None,
            };
            let config = TrainConfig {
                params: ModelParams {
                    order,
                    ..ModelParams::default()
                },
                seed,
                ..TrainConfig::default()
            };
            let archive = train_archive(&dialogues, source, &config)?;
            archive.save(&out)?;
            let names: Vec<&str> = archive.model.controls.iter().map(|c| c.name.as_str()).collect();
            eprintln!(
                "trained order-{order} model: {} tokens, controls [{}] -> {}",
                archive.model.vocab.len(),
                names.join(", "),
                out.display()
            );
            Ok(())
        }
        Command::Decode {
            model,
            preset,
            corpus,
            out,
        } => {
            let engine = Engine::load(&model)?;
            let preset = load_preset(&preset)?;
            let dialogues = load_corpus(&corpus)?;
            let mut text = String::new();
            for d in &dialogues {
                let speaker = d.turns.last().map_or(Speaker::First, |t| t.speaker.other());
                let history = d
                    .turns
                    .iter()
                    .map(|t| (t.speaker, engine.encode(&t.text)))
                    .collect();
                let state = engine.state(speaker, d.persona(speaker), history);
                let agent = preset.agent(d.persona(speaker).to_vec());
                let tokens = decode_utterance(&engine, &agent, &state)?;
                let response = engine.vocab().decode(&tokens);
                let diagnostics = diagnose(&engine, &state, &response);
                let row = serde_json::json!({
                    "id": d.id,
                    "speaker": speaker,
                    "response": response,
                    "diagnostics": diagnostics,
                });
                text.push_str(&row.to_string());
                text.push('\n');
            }
            write_out(out.as_deref(), &text)
        }
        Command::SelfChat {
            model,
            preset,
            corpus,
            count,
            turns,
            seed,
            workers,
            out,
        } => {
            let engine = Engine::load(&model)?;
            let agent = load_preset(&preset)?.agent(Vec::new());
            let logs = match corpus {
                Some(path) => {
                    let dialogues: Vec<Dialogue> = load_corpus(&path)?;
                    dialogues
                        .iter()
                        .map(|d| {
                            let personas = [d.personas[0].clone(), d.personas[1].clone()];
                            self_chat(&engine, &agent, &agent, personas, turns, &d.id, seed)
                        })
                        .collect()
                }
                None => self_chat_batch(&engine, &agent, count, turns, seed, workers)?,
            };
            for log in logs.iter().filter(|l| l.error.is_some()) {
                log::warn!("{}: {}", log.id, log.error.as_deref().unwrap_or_default());
            }
            match out {
                Some(path) => write_chatlogs(&path, &logs)?,
                None => {
                    for log in &logs {
                        println!("{}", log.to_line()?);
                    }
                }
            }
            Ok(())
        }
        Command::Metrics {
            model,
            corpus,
            presets,
            protocol,
            turns,
            seed,
            workers,
            out,
        } => {
            let engine = Engine::load(&model)?;
            let presets = load_preset_list(&presets)?;
            let dialogues = load_corpus(&corpus)?;
            let reports = convctl::simulator::evaluate_presets(
                &engine,
                &presets,
                &dialogues,
                protocol.into(),
                turns,
                seed,
                workers,
            )?;
            let table = report_table(&reports)?;
            write_out(None, &table.text)?;
            if let Some(path) = out {
                std::fs::write(&path, &table.tsv).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Presets { presets, out } => {
            let list = match presets {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    parse_presets(&text, &builtin_presets())?
                }
                None => builtin_presets(),
            };
            let mut text = String::new();
            for p in &list {
                let fmt = |w: &convctl::features::FeatureWeights| {
                    w.iter()
                        .map(|(id, v)| format!("{id}={v}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                let mut line = p.name.clone();
                if p.weights.iter().next().is_some() {
                    line += &format!("  weights[{}]", fmt(&p.weights));
                }
                if p.rerank_weights.iter().next().is_some() {
                    line += &format!("  rerank[{}]", fmt(&p.rerank_weights));
                }
                for (c, z) in &p.controls {
                    line += &format!("  {c}={z}");
                }
                line += &format!("  beam={}", p.beam.beam_size);
                text.push_str(&line);
                text.push('\n');
            }
            write_out(None, &text)?;
            if let Some(path) = out {
                std::fs::write(&path, builtin_source()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Chat {
            model,
            preset,
            seed,
            out,
        } => chat(&model, &preset, seed, out.as_deref()),
        Command::Serve {
            model,
            addr,
            presets,
            seed,
            out,
        } => {
            let engine = Arc::new(Engine::load(&model)?);
            let mut list = builtin_presets();
            if let Some(path) = presets {
                let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
                list.extend(parse_presets(&text, &builtin_presets())?);
            }
            let state = AppState::new(engine, list, seed);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("serving on http://{addr}");
            rt.block_on(serve(addr, state, out))?;
            Ok(())
        }
    }
}

fn show(d: &TurnDiagnostics) -> String {
    let r = &d.repetition;
    let mut flags = Vec::new();
    for (name, v) in [
        ("extrep_bigram", r.extrep_bigram),
        ("extrep_unigram", r.extrep_unigram),
        ("intrep_bigram", r.intrep_bigram),
        ("intrep_unigram", r.intrep_unigram),
        ("partnerrep_bigram", r.partnerrep_bigram),
    ] {
        if v > 0.0 {
            flags.push(name);
        }
    }
    format!(
        "nidf={:.3} cos={} ?={} rep=[{}]",
        d.mean_nidf,
        d.cos_sim.map_or("-".to_string(), |c| format!("{c:.3}")),
        if d.has_question { "yes" } else { "no" },
        flags.join(",")
    )
}

const CHAT_HELP: &str = "commands: /z <control> <bucket|off>, /w <feature> <weight|off>, /show, /quit";

fn chat(model: &Path, preset: &str, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let engine = Engine::load(model)?;
    let preset = load_preset(preset)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let persona = engine.archive.personas.choose(&mut rng).cloned().unwrap_or_default();
    let mut session = Session::new("chat", preset.agent(persona.clone()));
    println!("preset: {}", preset.name);
    println!("persona: {}", persona.join(" "));
    println!("{CHAT_HELP}");
    let stdin = io::stdin();
    loop {
        print!("> ");
        io::stdout().flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(cmd) = line.strip_prefix('/') {
            let parts: Vec<&str> = cmd.split_whitespace().collect();
            let agent = &mut session.agent;
            let result: anyhow::Result<()> = match parts.as_slice() {
                ["quit"] | ["q"] => break,
                ["show"] => {
                    let z: Vec<String> =
                        agent.controls.iter().map(|c| format!("{}={}", c.control, c.z)).collect();
                    println!("controls: {}", z.join(" "));
                    println!("weights: {}", serde_json::to_string(&agent.weights)?);
                    Ok(())
                }
                ["z", control, value] => {
                    let mut next = agent.controls.clone();
                    next.retain(|c| c.control != *control);
                    if *value != "off" {
                        next.push(ControlSetting::new(*control, value.parse()?));
                    }
                    next.sort();
                    engine.model().check_controls(&next)?;
                    agent.controls = next;
                    Ok(())
                }
                ["w", feature, value] => {
                    let id: FeatureId = feature.parse()?;
                    if *value == "off" {
                        agent.weights.remove(id);
                    } else {
                        agent.weights.set(id, value.parse::<Weight>()?);
                    }
                    Ok(())
                }
                _ => {
                    println!("{CHAT_HELP}");
                    Ok(())
                }
            };
            if let Err(e) = result {
                println!("! {e}");
            }
            continue;
        }
        match session.step(&engine, line) {
            Ok(step) => {
                println!("{}", step.response);
                println!("  [{}]", show(&step.diagnostics));
            }
            Err(e) => println!("! {e}"),
        }
    }
    if let Some(path) = out {
        write_chatlogs(path, &[session.to_chatlog(seed)])?;
    }
    Ok(())
}
