//! Seeded synthetic persona-chat corpus and matching word vectors.
//!
//! Dialogues mix generic chit-chat with topic talk: rare topic nouns give a
//! real spread of specificity, replies usually stay on the partner's topic,
//! and roughly 29% of utterances ask a question. Vectors cluster by topic
//! around a component shared by every word.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{tokenize, Dialogue, Speaker, Turn};
use crate::embeddings::WordVectors;

pub const VECTOR_DIM: usize = 24;

struct Topic {
    cat: &'static str,
    nouns: &'static [&'static str],
    acts: &'static [&'static str],
}

const TOPICS: &[Topic] = &[
    Topic {
        cat: "music",
        nouns: &["jazz", "rock", "metal", "blues", "opera", "reggae", "guitar", "piano", "violin", "drums", "concerts", "vinyl", "karaoke", "cello"],
        acts: &["play guitar", "sing in a choir", "go to concerts", "play the piano", "write songs"],
    },
    Topic {
        cat: "food",
        nouns: &["pizza", "sushi", "tacos", "pasta", "curry", "steak", "burgers", "salad", "pancakes", "ramen", "lasagna", "dumplings", "bagels", "chocolate"],
        acts: &["cook dinner", "bake bread", "try new restaurants", "grill outside", "make pasta"],
    },
    Topic {
        cat: "animal",
        nouns: &["dogs", "cats", "horses", "parrots", "rabbits", "hamsters", "turtles", "goldfish", "ferrets", "puppies", "kittens", "lizards", "chickens", "goats"],
        acts: &["walk my dog", "ride horses", "volunteer at the shelter", "feed the birds", "train puppies"],
    },
    Topic {
        cat: "sport",
        nouns: &["soccer", "football", "basketball", "tennis", "baseball", "hockey", "golf", "volleyball", "boxing", "swimming", "cycling", "surfing", "skiing", "rugby"],
        acts: &["play soccer", "run marathons", "lift weights", "swim laps", "coach little league"],
    },
    Topic {
        cat: "place",
        nouns: &["paris", "tokyo", "london", "mexico", "italy", "canada", "hawaii", "spain", "alaska", "greece", "iceland", "brazil", "egypt", "peru"],
        acts: &["travel abroad", "go camping", "visit museums", "take road trips", "backpack overseas"],
    },
    Topic {
        cat: "book",
        nouns: &["novels", "poetry", "mysteries", "comics", "biographies", "fantasy", "romance", "thrillers", "history", "philosophy", "magazines", "manga", "westerns", "classics"],
        acts: &["read every night", "write poems", "go to the library", "join book clubs", "write stories"],
    },
    Topic {
        cat: "movie",
        nouns: &["comedies", "horror", "documentaries", "cartoons", "westerns", "musicals", "dramas", "anime", "sitcoms", "superheroes", "zombies", "aliens", "detectives", "pirates"],
        acts: &["watch movies", "binge tv shows", "go to the cinema", "make short films", "act in plays"],
    },
    Topic {
        cat: "job",
        nouns: &["nurse", "teacher", "lawyer", "chef", "pilot", "mechanic", "dentist", "farmer", "plumber", "accountant", "firefighter", "programmer", "cashier", "architect"],
        acts: &["work long hours", "work from home", "work night shifts", "run my own business", "study for exams"],
    },
    Topic {
        cat: "hobby",
        nouns: &["painting", "knitting", "gardening", "fishing", "hiking", "photography", "chess", "pottery", "sewing", "woodworking", "dancing", "yoga", "camping", "origami"],
        acts: &["paint landscapes", "knit sweaters", "grow tomatoes", "go fishing", "take photos"],
    },
    Topic {
        cat: "color",
        nouns: &["blue", "red", "green", "purple", "yellow", "orange", "pink", "black", "white", "silver", "gold", "teal", "maroon", "turquoise"],
        acts: &["paint my room", "dye my hair", "wear bright clothes", "decorate my house", "buy new shoes"],
    },
    Topic {
        cat: "car",
        nouns: &["trucks", "jeeps", "motorcycles", "convertibles", "minivans", "tractors", "scooters", "sedans", "racecars", "buses", "vans", "bikes", "boats", "planes"],
        acts: &["fix old cars", "drive fast", "ride my bike", "restore engines", "go sailing"],
    },
    Topic {
        cat: "season",
        nouns: &["summer", "winter", "spring", "autumn", "snow", "rain", "beaches", "mountains", "sunsets", "storms", "holidays", "christmas", "halloween", "thanksgiving"],
        acts: &["build snowmen", "go to the beach", "watch the sunset", "climb mountains", "decorate for holidays"],
    },
];

const RELATIVES: &[&str] = &["mom", "dad", "sister", "brother", "friend", "husband", "wife", "son", "daughter"];

const GENERIC_STATEMENTS: &[&str] = &[
    "that is cool .",
    "i am doing well , thanks .",
    "that sounds like fun .",
    "i do not know much about that .",
    "me too !",
    "nice , i like that .",
    "yes , i do .",
    "no , not really .",
    "i am good .",
    "that is great .",
    "i see .",
    "that is awesome .",
    "i think so too .",
    "wow , that is interesting .",
    "i am just relaxing today .",
    "not much , just chilling .",
    "haha , that is funny .",
    "i have never tried that .",
];

const GENERIC_QUESTIONS: &[&str] = &[
    "how are you ?",
    "what do you do for fun ?",
    "what do you do for a living ?",
    "how about you ?",
    "where are you from ?",
    "do you have any hobbies ?",
    "what about you ?",
    "how was your day ?",
    "do you have any pets ?",
    "really ?",
];

const FOLLOW_UPS: &[&str] = &["how about you ?", "what about you ?", "and you ?", "do you ?"];

const GREETINGS: &[&str] = &["hi !", "hello !", "hey there !", "hi , how are you ?", "hello , how are you doing ?"];

fn pick<'a>(rng: &mut ChaCha20Rng, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty list")
}

fn topic_statement(rng: &mut ChaCha20Rng, t: &Topic) -> String {
    let n = pick(rng, t.nouns);
    let a = pick(rng, t.acts);
    match rng.random_range(0..9) {
        0 => format!("i love {n} ."),
        1 => format!("my favorite {} is {n} .", t.cat),
        2 => format!("i {a} on weekends ."),
        3 => format!("i really enjoy {n} , it is great ."),
        4 => {
            let m = pick(rng, t.nouns);
            format!("i like {n} and {m} .")
        }
        5 => format!("my {} and i {a} together .", pick(rng, RELATIVES)),
        6 => format!("i have been into {n} lately ."),
        7 => format!("{n} is the best {} .", t.cat),
        _ => format!("i {a} sometimes , mostly {n} ."),
    }
}

fn topic_question(rng: &mut ChaCha20Rng, t: &Topic) -> String {
    let n = pick(rng, t.nouns);
    let a = pick(rng, t.acts);
    match rng.random_range(0..5) {
        0 => format!("do you like {n} ?"),
        1 => format!("what is your favorite {} ?", t.cat),
        2 => format!("do you {a} ?"),
        3 => format!("have you tried {n} ?"),
        _ => format!("what kind of {} do you like ?", t.cat),
    }
}

fn persona(rng: &mut ChaCha20Rng) -> (Vec<String>, Vec<usize>) {
    let mut topics: Vec<usize> = Vec::new();
    while topics.len() < 3 {
        let t = rng.random_range(0..TOPICS.len());
        if !topics.contains(&t) {
            topics.push(t);
        }
    }
    let mut lines: Vec<String> = topics
        .iter()
        .map(|&t| {
            let topic = &TOPICS[t];
            match rng.random_range(0..3) {
                0 => format!("i love {} .", pick(rng, topic.nouns)),
                1 => format!("i {} on weekends .", pick(rng, topic.acts)),
                _ => format!("my favorite {} is {} .", topic.cat, pick(rng, topic.nouns)),
            }
        })
        .collect();
    lines.push(match rng.random_range(0..3) {
        0 => format!("i have {} kids .", rng.random_range(1..5)),
        1 => format!("i live with my {} .", pick(rng, RELATIVES)),
        _ => "i am a student .".to_string(),
    });
    (lines, topics)
}

/// One reply: an optional reaction and a statement, or a question, or a
/// statement with a short follow-up question. Stays on the partner's topic
/// most of the time.
fn reply(rng: &mut ChaCha20Rng, own: &[usize], partner_topic: Option<usize>) -> (String, Option<usize>) {
    let topic = match partner_topic {
        Some(t) if rng.random_bool(0.65) => Some(t),
        _ if rng.random_bool(0.75) => Some(*own.choose(rng).expect("persona topics")),
        _ => None,
    };
    let question = |rng: &mut ChaCha20Rng| match topic {
        Some(t) if rng.random_bool(0.6) => topic_question(rng, &TOPICS[t]),
        _ => pick(rng, GENERIC_QUESTIONS).to_string(),
    };
    let mut parts: Vec<String> = Vec::new();
    let roll: f64 = rng.random();
    if roll < 0.14 {
        parts.push(question(rng));
    } else {
        if rng.random_bool(0.35) {
            parts.push(pick(rng, GENERIC_STATEMENTS).to_string());
        }
        match topic {
            Some(t) => parts.push(topic_statement(rng, &TOPICS[t])),
            None if parts.is_empty() => parts.push(pick(rng, GENERIC_STATEMENTS).to_string()),
            None => {}
        }
        if roll < 0.31 {
            parts.push(if rng.random_bool(0.6) {
                pick(rng, FOLLOW_UPS).to_string()
            } else {
                question(rng)
            });
        }
    }
    (parts.join(" "), topic)
}

/// `n` dialogues of 8 to 12 turns, deterministic in `seed`.
pub fn generate_dialogues(n: usize, seed: u64, id_prefix: &str) -> Vec<Dialogue> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (p0, t0) = persona(&mut rng);
            let (p1, t1) = persona(&mut rng);
            let topics = [t0, t1];
            let n_turns = 2 * rng.random_range(4..=6);
            let mut turns = Vec::with_capacity(n_turns);
            let mut last_topic = None;
            for k in 0..n_turns {
                let speaker = if k % 2 == 0 { Speaker::First } else { Speaker::Second };
                let text = if k == 0 {
                    pick(&mut rng, GREETINGS).to_string()
                } else {
                    let (text, topic) = reply(&mut rng, &topics[speaker.index()], last_topic);
                    last_topic = topic;
                    text
                };
                turns.push(Turn { speaker, text });
            }
            Dialogue {
                id: format!("{id_prefix}-{i}"),
                personas: vec![p0, p1],
                turns,
            }
        })
        .collect()
}

/// Train and validation splits from one seed.
pub fn generate_splits(n_train: usize, n_valid: usize, seed: u64) -> (Vec<Dialogue>, Vec<Dialogue>) {
    (
        generate_dialogues(n_train, seed, "train"),
        generate_dialogues(n_valid, seed.wrapping_add(0x9e37_79b9), "valid"),
    )
}

/// Vectors for every token the generator can emit. Topic words sit near
/// their topic centroid; everything else near the origin; all share one
/// common direction.
pub fn generate_vectors(seed: u64) -> WordVectors {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_u64);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gauss = |rng: &mut ChaCha20Rng, scale: f64| -> Vec<f64> {
        (0..VECTOR_DIM).map(|_| scale * normal.sample(rng)).collect()
    };
    let common = gauss(&mut rng, 1.0);
    let mut out = WordVectors::new(VECTOR_DIM);
    let add = |out: &mut WordVectors, word: &str, centre: &[f64], noise: Vec<f64>| {
        if out.get(word).is_none() {
            let v = (0..VECTOR_DIM)
                .map(|k| 0.8 * common[k] + centre[k] + noise[k])
                .collect();
            out.insert(word, v);
        }
    };
    for t in TOPICS {
        let centre = gauss(&mut rng, 1.5);
        let mut words: Vec<String> = vec![t.cat.to_string()];
        words.extend(t.nouns.iter().map(|s| s.to_string()));
        for a in t.acts {
            words.extend(tokenize(a));
        }
        for w in words {
            let noise = gauss(&mut rng, 0.5);
            add(&mut out, &w, &centre, noise);
        }
    }
    let origin = vec![0.0; VECTOR_DIM];
    let mut rest: Vec<String> = Vec::new();
    for s in GENERIC_STATEMENTS.iter().chain(GENERIC_QUESTIONS).chain(FOLLOW_UPS).chain(GREETINGS).chain(RELATIVES) {
        rest.extend(tokenize(s));
    }
    let frames = "i love my favorite is on weekends really enjoy , it great like and together \
                  have been into lately the best sometimes mostly do you what your have tried \
                  kind of a am student live with kids 1 2 3 4 . ? !";
    rest.extend(tokenize(frames));
    for w in rest {
        let noise = gauss(&mut rng, 0.6);
        add(&mut out, &w, &origin, noise);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = generate_dialogues(20, 7, "t");
        assert_eq!(a, generate_dialogues(20, 7, "t"));
        assert_ne!(a, generate_dialogues(20, 8, "t"));
        for d in &a {
            d.validate().unwrap();
        }
        assert_eq!(generate_vectors(3), generate_vectors(3));
    }

    #[test]
    fn question_rate_is_persona_chat_like() {
        let ds = generate_dialogues(300, 1, "t");
        let (mut q, mut n) = (0, 0);
        for d in &ds {
            for t in &d.turns {
                n += 1;
                q += t.text.contains('?') as usize;
            }
        }
        let rate = q as f64 / n as f64;
        assert!((0.22..0.36).contains(&rate), "question rate {rate}");
    }

    #[test]
    fn every_emitted_word_has_a_vector() {
        let v = generate_vectors(0);
        for d in generate_dialogues(50, 2, "t") {
            for t in d.turns.iter().map(|t| &t.text).chain(d.personas.iter().flatten()) {
                for w in tokenize(t) {
                    assert!(v.get(&w).is_some(), "no vector for {w}");
                }
            }
        }
    }
}
