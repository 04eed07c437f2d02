#![allow(dead_code)]

use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use convctl::corpus::{Dialogue, Speaker, Turn};
use convctl::desk;
use convctl::embeddings::WordVectors;
use convctl::engine::Engine;
use convctl::features::DecodingState;
use convctl::pipeline::{train_archive, TrainConfig, VectorSource};

pub const DESK_TRAIN: usize = 600;
pub const DESK_VALID: usize = 30;
pub const DESK_SEED: u64 = 1;

pub struct Desk {
    pub train: Vec<Dialogue>,
    pub valid: Vec<Dialogue>,
    pub vectors: WordVectors,
    pub engine: Engine,
}

pub fn train_desk(n_train: usize, n_valid: usize, seed: u64) -> Desk {
    let (train, valid) = desk::generate_splits(n_train, n_valid, seed);
    let vectors = desk::generate_vectors(seed);
    let sha = format!("{:x}", Sha256::digest(vectors.to_text().as_bytes()));
    let archive = train_archive(
        &train,
        Some(VectorSource {
            vectors: &vectors,
            source: "desk".into(),
            sha256: sha,
        }),
        &TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    )
    .expect("desk corpus trains");
    let engine = Engine::new(archive).expect("engine");
    Desk {
        train,
        valid,
        vectors,
        engine,
    }
}

/// The standard desk model, trained once per test binary.
pub fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| train_desk(DESK_TRAIN, DESK_VALID, DESK_SEED))
}

/// A smaller model for tests that only need something trained.
pub fn small_desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| train_desk(120, 6, 7))
}

/// State for the speaker of `turns[upto]`, conditioned on the gold turns
/// before it.
pub fn gold_state(engine: &Engine, d: &Dialogue, upto: usize) -> DecodingState {
    let speaker = d.turns[upto].speaker;
    let history = d.turns[..upto]
        .iter()
        .map(|t| (t.speaker, engine.encode(&t.text)))
        .collect();
    engine.state(speaker, d.persona(speaker), history)
}

/// `n` seeded (dialogue, turn) positions drawn from `dialogues`.
pub fn sample_positions(dialogues: &[Dialogue], n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let d = rng.random_range(0..dialogues.len());
            let t = rng.random_range(0..dialogues[d].turns.len());
            (d, t)
        })
        .collect()
}

pub const TINY_WORDS: [&str; 7] = ["a", "b", "c", "d", "e", "f", "g"];

/// Dialogues over a seven-word vocabulary, so that together with the end
/// marker every step has at most eight candidates.
pub fn tiny_corpus(seed: u64) -> (Vec<Dialogue>, WordVectors) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sentence = |rng: &mut ChaCha20Rng, max: usize| {
        let n = rng.random_range(1..=max);
        (0..n)
            .map(|_| *TINY_WORDS[..].choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let dialogues = (0..12)
        .map(|i| {
            let personas = vec![vec![sentence(&mut rng, 3)], vec![sentence(&mut rng, 3)]];
            let turns = (0..rng.random_range(2..6))
                .map(|t| Turn {
                    speaker: if t % 2 == 0 { Speaker::First } else { Speaker::Second },
                    text: sentence(&mut rng, 4),
                })
                .collect();
            Dialogue {
                id: format!("tiny-{i}"),
                personas,
                turns,
            }
        })
        .collect();
    let mut vectors = WordVectors::new(4);
    for w in TINY_WORDS {
        let v = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        vectors.insert(w, v);
    }
    (dialogues, vectors)
}

pub fn tiny_engine(seed: u64) -> (Engine, Vec<Dialogue>) {
    let (dialogues, vectors) = tiny_corpus(seed);
    let archive = train_archive(
        &dialogues,
        Some(VectorSource {
            vectors: &vectors,
            source: "tiny".into(),
            sha256: String::new(),
        }),
        &TrainConfig {
            min_count: 1,
            seed,
            ..TrainConfig::default()
        },
    )
    .expect("tiny corpus trains");
    (Engine::new(archive).expect("engine"), dialogues)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}
