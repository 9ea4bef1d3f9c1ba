use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalError, Family, TaskInstance, FORMAT_VERSION};

const WORDS: &[&str] = &[
    "apple", "river", "stone", "cloud", "lamp", "garden", "pencil", "window", "tiger", "violin", "orange", "bridge",
    "candle", "forest", "mirror", "rocket", "silver", "basket", "planet", "feather", "island", "ladder", "marble",
    "needle", "pillow", "saddle", "tunnel", "wallet", "anchor", "button", "copper", "dragon", "engine", "falcon",
    "harbor", "jacket", "kettle", "lemon", "meadow", "nickel",
];
const NAMES: &[&str] = &["Mary", "John", "Sandra", "Daniel", "Alice", "Bob"];
const COLORS: &[&str] = &["red", "blue", "green", "yellow", "black", "white", "purple"];
const THINGS: &[&str] = &["car", "hat", "kite", "boat", "cup", "book", "scarf"];
const LOCATIONS: &[&str] = &["garden", "kitchen", "office", "bathroom", "hallway", "bedroom"];
const MOVE_VERBS: &[&str] = &["went to", "moved to", "travelled to", "journeyed to"];
const TAKE_VERBS: &[&str] = &["picked up", "took", "grabbed"];
const DROP_VERBS: &[&str] = &["dropped", "put down", "discarded"];
const OBJECTS: &[&str] = &["ball", "apple", "football", "milk"];
const SYMBOL_CHARS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz#$%&*@!?~^+=";

/// Filler sentences for anti-interference prompts; none of them states a fact.
pub const DISTRACTORS: &[&str] = &[
    "The weather was mild that afternoon.",
    "A bus rolled past the station.",
    "Someone was humming a quiet tune.",
    "The library opens at nine.",
    "Bread was baking somewhere nearby.",
    "A dog barked in the distance.",
    "The clock on the wall kept ticking.",
    "Leaves drifted across the road.",
];

fn instance_rng(seed: u64, i: usize) -> (u64, ChaCha8Rng) {
    let s = seed.wrapping_add(i as u64);
    (s, ChaCha8Rng::seed_from_u64(s))
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty list")
}

fn meta(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    let mut m: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    m.insert("format".into(), FORMAT_VERSION.into());
    m
}

/// `Input:`/`Output:` blocks separated by blank lines, query left open.
fn blocks(header: Option<&str>, demos: &[(String, String)], query: &str) -> String {
    let mut parts: Vec<String> = header.map(str::to_string).into_iter().collect();
    for (x, y) in demos {
        parts.push(format!("Input: {x}\nOutput: {y}"));
    }
    parts.push(format!("Input: {query}\nOutput:"));
    parts.join("\n\n")
}

fn symbol(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(3..=5);
    (0..n).map(|_| *SYMBOL_CHARS.choose(rng).expect("non-empty") as char).collect()
}

fn pair_line(rng: &mut ChaCha8Rng, entails: bool) -> String {
    let name = pick(rng, NAMES);
    let color = pick(rng, COLORS);
    let thing = pick(rng, THINGS);
    let stated = if entails {
        color
    } else {
        let others: Vec<&str> = COLORS.iter().copied().filter(|c| *c != color).collect();
        pick(rng, &others)
    };
    format!("Premise: {name} has a {color} {thing}. Hypothesis: The {thing} that {name} has is {stated}.")
}

/// Entailment-style pairs labelled with fresh random symbols; `shots`
/// demonstrations per label precede the query.
pub fn gen_symbolic_mapping(n: usize, shots: usize, seed: u64) -> Result<Vec<TaskInstance>, EvalError> {
    if n == 0 || shots == 0 {
        return Err(EvalError::InvalidArgument("symbolic mapping needs n >= 1 and shots >= 1".into()));
    }
    Ok((0..n)
        .map(|i| {
            let (s, mut rng) = instance_rng(seed, i);
            let yes = symbol(&mut rng);
            let mut no = symbol(&mut rng);
            while no == yes {
                no = symbol(&mut rng);
            }
            let mut demos: Vec<bool> = (0..shots).flat_map(|_| [true, false]).collect();
            demos.shuffle(&mut rng);
            let mut lines = vec!["Classify each pair with one of the labels shown.".to_string()];
            for d in demos {
                let label = if d { &yes } else { &no };
                lines.push(format!("{} Label: {label}", pair_line(&mut rng, d)));
            }
            let q = rng.random_bool(0.5);
            lines.push(format!("{} Label:", pair_line(&mut rng, q)));
            TaskInstance {
                family: Family::SymbolicMapping,
                shots,
                prompt: lines.join("\n"),
                gold: if q { yes.clone() } else { no.clone() },
                seed: s,
                metadata: meta(&[("label_entailment", yes), ("label_contradiction", no)]),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuleKind {
    Counting,
    ReplaceLowercase,
    ReplaceWord,
}

fn mixed_case(rng: &mut ChaCha8Rng, word: &str) -> String {
    word.chars().map(|c| if rng.random_bool(0.5) { c.to_ascii_uppercase() } else { c }).collect()
}

/// Counting (default 0-shot) and string replacement (default 4-shot).
pub fn gen_rule_understanding(kind: RuleKind, n: usize, shots: Option<usize>, seed: u64) -> Result<Vec<TaskInstance>, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidArgument("n must be at least 1".into()));
    }
    let (family, shots) = match kind {
        RuleKind::Counting => (Family::Counting, shots.unwrap_or(0)),
        RuleKind::ReplaceLowercase => (Family::ReplaceLowercase, shots.unwrap_or(4)),
        RuleKind::ReplaceWord => (Family::ReplaceWord, shots.unwrap_or(4)),
    };
    Ok((0..n)
        .map(|i| {
            let (s, mut rng) = instance_rng(seed, i);
            let (header, mut make, metadata): (String, Box<dyn FnMut(&mut ChaCha8Rng) -> (String, String)>, _) = match kind {
                RuleKind::Counting => (
                    "Count how many times the word is repeated.".to_string(),
                    Box::new(|rng: &mut ChaCha8Rng| {
                        let w = pick(rng, WORDS);
                        let k = rng.random_range(3..=15);
                        (vec![w; k].join(" "), k.to_string())
                    }),
                    meta(&[]),
                ),
                RuleKind::ReplaceLowercase => (
                    "Rewrite the text in lowercase.".to_string(),
                    Box::new(|rng: &mut ChaCha8Rng| {
                        let k = rng.random_range(2..=4);
                        let words: Vec<&str> = (0..k).map(|_| pick(rng, WORDS)).collect();
                        let text: Vec<String> = words.iter().map(|w| mixed_case(rng, w)).collect();
                        (text.join(" "), words.join(" "))
                    }),
                    meta(&[]),
                ),
                RuleKind::ReplaceWord => {
                    let from = pick(&mut rng, WORDS);
                    let to = loop {
                        let t = pick(&mut rng, WORDS);
                        if t != from {
                            break t;
                        }
                    };
                    (
                        format!("Replace every \"{from}\" with \"{to}\"."),
                        Box::new(move |rng: &mut ChaCha8Rng| {
                            let k = rng.random_range(4..=8);
                            let mut words: Vec<&str> = (0..k).map(|_| pick(rng, WORDS)).collect();
                            let at = rng.random_range(0..k);
                            words[at] = from;
                            let out: Vec<&str> = words.iter().map(|&w| if w == from { to } else { w }).collect();
                            (words.join(" "), out.join(" "))
                        }),
                        meta(&[("from", from.to_string()), ("to", to.to_string())]),
                    )
                }
            };
            let demos: Vec<(String, String)> = (0..shots).map(|_| make(&mut rng)).collect();
            let (query, gold) = make(&mut rng);
            TaskInstance { family, shots, prompt: blocks(Some(&header), &demos, &query), gold, seed: s, metadata }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternKind {
    HeadTail,
    FullRepeating,
    HeadSlicing,
}

/// Input/output demonstrations of a hidden pattern (default 5-shot).
pub fn gen_pattern_mining(kind: PatternKind, n: usize, shots: Option<usize>, seed: u64) -> Result<Vec<TaskInstance>, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidArgument("n must be at least 1".into()));
    }
    let shots = shots.unwrap_or(5);
    let family = match kind {
        PatternKind::HeadTail => Family::HeadTail,
        PatternKind::FullRepeating => Family::FullRepeating,
        PatternKind::HeadSlicing => Family::HeadSlicing,
    };
    Ok((0..n)
        .map(|i| {
            let (s, mut rng) = instance_rng(seed, i);
            let k = rng.random_range(2..=5usize);
            let make = |rng: &mut ChaCha8Rng| -> (String, String) {
                match kind {
                    PatternKind::HeadTail => {
                        let len = rng.random_range(3..=7);
                        let w: Vec<&str> = (0..len).map(|_| pick(rng, WORDS)).collect();
                        (w.join(" "), format!("{} {}", w[0], w[len - 1]))
                    }
                    PatternKind::FullRepeating => {
                        let len = rng.random_range(2..=5);
                        let x = (0..len).map(|_| pick(rng, WORDS)).collect::<Vec<_>>().join(" ");
                        (x.clone(), format!("{x} {x}"))
                    }
                    PatternKind::HeadSlicing => {
                        let len = rng.random_range(k + 1..=k + 6);
                        let x: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
                        (x.clone(), x[..k].to_string())
                    }
                }
            };
            let demos: Vec<(String, String)> = (0..shots).map(|_| make(&mut rng)).collect();
            let (query, gold) = make(&mut rng);
            let metadata = if kind == PatternKind::HeadSlicing { meta(&[("k", k.to_string())]) } else { meta(&[]) };
            TaskInstance { family, shots, prompt: blocks(None, &demos, &query), gold, seed: s, metadata }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterferenceKind {
    MultipleKeyRetrieval,
    SingleSupportingFact,
    TwoSupportingFacts,
}

/// Inserts `k` random distractors at random positions.
fn sprinkle(rng: &mut ChaCha8Rng, sentences: &mut Vec<String>, k: usize) {
    for _ in 0..k {
        let at = rng.random_range(0..=sentences.len());
        sentences.insert(at, pick(rng, DISTRACTORS).to_string());
    }
}

struct Story {
    text: String,
    question: String,
    answer: String,
    metadata: BTreeMap<String, String>,
}

fn key_story(rng: &mut ChaCha8Rng) -> Story {
    let n_keys = rng.random_range(1..=5);
    let n_distractors = rng.random_range(0..=6);
    let mut keys: Vec<String> = Vec::new();
    while keys.len() < n_keys {
        let k: String = (0..4).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let values: Vec<String> = keys.iter().map(|_| rng.random_range(100..=999).to_string()).collect();
    let mut sentences: Vec<String> =
        keys.iter().zip(&values).map(|(k, v)| format!("The value of {k} is {v}.")).collect();
    sentences.shuffle(rng);
    sprinkle(rng, &mut sentences, n_distractors);
    let q = rng.random_range(0..n_keys);
    Story {
        text: sentences.join(" "),
        question: format!("What is the value of {}?", keys[q]),
        answer: values[q].clone(),
        metadata: meta(&[("keys", n_keys.to_string()), ("distractors", n_distractors.to_string())]),
    }
}

fn single_fact_story(rng: &mut ChaCha8Rng) -> Story {
    let n_people = rng.random_range(2..=4);
    let mut people: Vec<&str> = NAMES.to_vec();
    people.shuffle(rng);
    people.truncate(n_people);
    let n_facts = rng.random_range(1..=8);
    let n_distractors = rng.random_range(0..=3);
    let mut location: BTreeMap<&str, &str> = BTreeMap::new();
    let mut sentences = Vec::new();
    for _ in 0..n_facts {
        let p = pick(rng, &people);
        let l = pick(rng, LOCATIONS);
        sentences.push(format!("{p} {} the {l}.", pick(rng, MOVE_VERBS)));
        location.insert(p, l);
    }
    sprinkle(rng, &mut sentences, n_distractors);
    let known: Vec<&str> = location.keys().copied().collect();
    let who = pick(rng, &known);
    Story {
        text: sentences.join(" "),
        question: format!("Where is {who}?"),
        answer: location[who].to_string(),
        metadata: meta(&[("facts", n_facts.to_string()), ("distractors", n_distractors.to_string())]),
    }
}

fn two_fact_story(rng: &mut ChaCha8Rng) -> Story {
    let n_people = rng.random_range(2..=3);
    let mut people: Vec<&str> = NAMES.to_vec();
    people.shuffle(rng);
    people.truncate(n_people);
    let n_objects = rng.random_range(1..=2);
    let mut objects: Vec<&str> = OBJECTS.to_vec();
    objects.shuffle(rng);
    objects.truncate(n_objects);

    let mut at: BTreeMap<&str, &str> = BTreeMap::new();
    // Object -> holder, or the room it was left in.
    let mut held: BTreeMap<&str, &str> = BTreeMap::new();
    let mut lying: BTreeMap<&str, &str> = BTreeMap::new();
    let mut touched: Vec<&str> = Vec::new();
    let mut sentences = Vec::new();
    let mut order = people.clone();
    order.shuffle(rng);
    for p in order {
        let l = pick(rng, LOCATIONS);
        sentences.push(format!("{p} {} the {l}.", pick(rng, MOVE_VERBS)));
        at.insert(p, l);
    }
    let n_events = rng.random_range(2..=6);
    for e in 0..n_events {
        let free: Vec<&str> = objects.iter().copied().filter(|o| !held.contains_key(o)).collect();
        let carried: Vec<&str> = objects.iter().copied().filter(|o| held.contains_key(o)).collect();
        // Guarantee at least one pickup.
        let choice = if e == 0 { 1 } else { rng.random_range(0..3) };
        match choice {
            1 if !free.is_empty() => {
                let o = pick(rng, &free);
                let p = pick(rng, &people);
                sentences.push(format!("{p} {} the {o}.", pick(rng, TAKE_VERBS)));
                held.insert(o, p);
                lying.remove(o);
                if !touched.contains(&o) {
                    touched.push(o);
                }
            }
            2 if !carried.is_empty() => {
                let o = pick(rng, &carried);
                let p = held.remove(o).expect("carried");
                sentences.push(format!("{p} {} the {o}.", pick(rng, DROP_VERBS)));
                lying.insert(o, at[p]);
            }
            _ => {
                let p = pick(rng, &people);
                let l = pick(rng, LOCATIONS);
                sentences.push(format!("{p} {} the {l}.", pick(rng, MOVE_VERBS)));
                at.insert(p, l);
            }
        }
    }
    let n_distractors = rng.random_range(0..=2);
    sprinkle(rng, &mut sentences, n_distractors);
    let o = pick(rng, &touched);
    let answer = match held.get(o) {
        Some(p) => at[p],
        None => lying[o],
    };
    Story {
        text: sentences.join(" "),
        question: format!("Where is the {o}?"),
        answer: answer.to_string(),
        metadata: meta(&[("events", n_events.to_string()), ("distractors", n_distractors.to_string())]),
    }
}

/// Facts hidden among distractor sentences; `shots` solved stories precede
/// the query story.
pub fn gen_anti_interference(kind: InterferenceKind, n: usize, shots: usize, seed: u64) -> Result<Vec<TaskInstance>, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidArgument("n must be at least 1".into()));
    }
    let (family, story): (Family, fn(&mut ChaCha8Rng) -> Story) = match kind {
        InterferenceKind::MultipleKeyRetrieval => (Family::MultipleKeyRetrieval, key_story),
        InterferenceKind::SingleSupportingFact => (Family::SingleSupportingFact, single_fact_story),
        InterferenceKind::TwoSupportingFacts => (Family::TwoSupportingFacts, two_fact_story),
    };
    Ok((0..n)
        .map(|i| {
            let (s, mut rng) = instance_rng(seed, i);
            let mut parts = Vec::new();
            for _ in 0..shots {
                let d = story(&mut rng);
                parts.push(format!("{}\n{}\nAnswer: {}", d.text, d.question, d.answer));
            }
            let q = story(&mut rng);
            parts.push(format!("{}\n{}\nAnswer:", q.text, q.question));
            TaskInstance { family, shots, prompt: parts.join("\n\n"), gold: q.answer, seed: s, metadata: q.metadata }
        })
        .collect())
}
