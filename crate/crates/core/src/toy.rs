//! Generator for the bundled synthetic dataset under `data/toy/`.
//!
//! Forty fictional towns each get five passages (climate, economy, history,
//! landmark, cuisine) holding two facts apiece. Conversations open with an
//! explicit question, then follow up with coreference ("its"), omission
//! ("and the …?") or an explicit switch to another town. Labels are complete
//! rewrites for explicit turns; for follow-ups the label keeps the vague surface
//! form with probability [`VAGUE_LABEL_RATE`], mimicking an imperfect annotator.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{write_labels, LabelRecord};
use crate::corpus::{expand_problems, write_conversations, Conversation, Passage, PassageCollection, Turn};
use crate::error::Result;

pub const SEED: u64 = 20_240_917;
pub const VAGUE_LABEL_RATE: f64 = 0.6;

/// Sizes of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    pub train_conversations: usize,
    pub test_conversations: usize,
    pub turns: usize,
    pub max_shifts: usize,
    pub vague_label_rate: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            train_conversations: 96,
            test_conversations: 16,
            turns: 8,
            max_shifts: 2,
            vague_label_rate: VAGUE_LABEL_RATE,
        }
    }
}

const TOWNS: [&str; 40] = [
    "veloria", "kestrel", "ortane", "brisca", "calder", "dunmore", "elvast", "fenwick", "galdor", "halvern",
    "istra", "jorvik", "kalmar", "lorne", "marden", "norvale", "olvera", "pellow", "quenby", "rosmar",
    "selby", "tarrow", "ulmen", "varna", "wexley", "yarrow", "zenda", "aldmoor", "belcast", "corvin",
    "drayton", "eskdale", "farrow", "glenmar", "hollis", "ivesta", "jessop", "kelda", "lundor", "mirrin",
];

const ADJ: [&str; 6] = ["mild", "humid", "dry", "windy", "cold", "warm"];
const WEATHER: [&str; 6] = ["foggy mornings", "sudden storms", "clear nights", "heavy snow", "warm breezes", "long droughts"];
const COUNT: [&str; 6] = ["two", "three", "four", "five", "six", "seven"];
const DRIVER: [&str; 8] = [
    "salt mining", "river trade", "wool weaving", "glass making", "fishing fleets", "timber mills", "copper smelting",
    "olive farming",
];
const EXPORT: [&str; 8] = ["copper", "wool", "glassware", "dried fish", "timber", "olive oil", "salt", "silk"];
const FOUNDER: [&str; 8] = ["ambrose", "berta", "cassian", "delphine", "edric", "fiora", "gideon", "helka"];
const ROLE: [&str; 4] = ["a sailor named", "a miller named", "a priest named", "a soldier named"];
const LANDMARK: [&str; 6] = [
    "a stone lighthouse", "a copper bridge", "a bell tower", "a sunken temple", "a marble fountain", "a hillside fort",
];
const DISH: [&str; 6] = ["lamb stew", "smoked eel", "barley bread", "honey cakes", "fish soup", "bean pie"];
const SPICE: [&str; 6] = ["saffron", "cumin", "juniper", "sumac", "fennel", "clove"];

pub const ATTRIBUTES: [&str; 5] = ["climate", "economy", "history", "landmark", "cuisine"];

/// Question forms for each fact: explicit (with `{E}`), coreference, omission.
const QUESTIONS: [[[&str; 3]; 2]; 5] = [
    [
        ["what is the climate of {E} like", "what is its climate like", "and the climate ?"],
        ["how long is the rainy season in {E}", "how long is its rainy season", "and the rainy season ?"],
    ],
    [
        ["what drives the economy of {E}", "what drives its economy", "and the economy ?"],
        ["what is the main export of {E}", "what is its main export", "and the main export ?"],
    ],
    [
        ["who founded {E}", "who founded it", "and the founder ?"],
        ["in which year was {E} founded", "in which year was it founded", "and the founding year ?"],
    ],
    [
        ["what is the famous landmark of {E}", "what is its famous landmark", "and the famous landmark ?"],
        ["how old is the landmark of {E}", "how old is its landmark", "and the age of the landmark ?"],
    ],
    [
        ["what is the signature dish of {E}", "what is its signature dish", "and the signature dish ?"],
        ["which spice is common in {E} cooking", "which spice is common in its cooking", "and the common spice ?"],
    ],
];

struct Facts {
    passages: [String; 5],
    answers: [[String; 2]; 5],
}

fn town_facts(town: &str, rng: &mut ChaCha8Rng) -> Facts {
    let pick = |xs: &[&str], rng: &mut ChaCha8Rng| xs.choose(rng).unwrap().to_string();
    let adj = pick(&ADJ, rng);
    let weather = pick(&WEATHER, rng);
    let months = pick(&COUNT[..5], rng);
    let driver = pick(&DRIVER, rng);
    let export = pick(&EXPORT, rng);
    let founder = format!("{} {}", pick(&ROLE, rng), pick(&FOUNDER, rng));
    let year = rng.random_range(1100..1890).to_string();
    let landmark = pick(&LANDMARK, rng);
    let age = pick(&COUNT, rng);
    let dish = pick(&DISH, rng);
    let spice = pick(&SPICE, rng);
    Facts {
        passages: [
            format!("The climate of {town} is {adj}, with {weather}. The rainy season in {town} lasts {months} months."),
            format!("The economy of {town} is driven by {driver}. The main export of {town} is {export}."),
            format!("The history of {town} starts with its founder, {founder}. {town} was founded in the year {year}."),
            format!("The famous landmark of {town} is {landmark}. The landmark was built {age} centuries ago."),
            format!("The signature dish of {town} is {dish}. The spice most common in {town} cooking is {spice}."),
        ],
        answers: [
            [format!("it is {adj} with {weather}"), format!("{months} months")],
            [driver.clone(), export.clone()],
            [founder.clone(), format!("in {year}")],
            [landmark.clone(), format!("about {age} centuries")],
            [dish.clone(), spice.clone()],
        ],
    }
}

pub fn passage_id(town: usize, attr: usize) -> String {
    format!("p{:03}", town * ATTRIBUTES.len() + attr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub passages: PassageCollection,
    pub train: Vec<Conversation>,
    pub test: Vec<Conversation>,
    /// Annotator fixtures for every train and test problem.
    pub labels: Vec<LabelRecord>,
}

impl ToyDataset {
    pub fn generate() -> Self {
        Self::generate_with(&ToySpec::default())
    }

    pub fn generate_with(spec: &ToySpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let facts: Vec<Facts> = TOWNS.iter().map(|t| town_facts(t, &mut rng)).collect();
        let mut passages = Vec::new();
        for (ti, (town, f)) in TOWNS.iter().zip(&facts).enumerate() {
            for (ai, text) in f.passages.iter().enumerate() {
                passages.push(Passage {
                    id: passage_id(ti, ai),
                    title: Some(format!("{town} {}", ATTRIBUTES[ai])),
                    text: text.clone(),
                });
            }
        }
        let mut labels = Vec::new();
        let mut conversations = Vec::new();
        for c in 0..spec.train_conversations + spec.test_conversations {
            let (conv, conv_labels) = conversation(c, spec, &facts, &mut rng);
            conversations.push(conv);
            labels.extend(conv_labels);
        }
        let test = conversations.split_off(spec.train_conversations);
        Self {
            passages: PassageCollection::new(passages).expect("generated ids are unique"),
            train: conversations,
            test,
            labels,
        }
    }

    /// Writes passages.jsonl, conversations_{train,test}.jsonl and labels.jsonl.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::corpus::write_passages(&dir.join("passages.jsonl"), &self.passages)?;
        write_conversations(&dir.join("conversations_train.jsonl"), &self.train)?;
        write_conversations(&dir.join("conversations_test.jsonl"), &self.test)?;
        write_labels(&dir.join("labels.jsonl"), &self.labels)?;
        Ok(())
    }

    pub fn problem_count(&self) -> (usize, usize) {
        (expand_problems(&self.train, true).len(), expand_problems(&self.test, true).len())
    }
}

fn conversation(index: usize, spec: &ToySpec, facts: &[Facts], rng: &mut ChaCha8Rng) -> (Conversation, Vec<LabelRecord>) {
    let id = format!("t{index:03}");
    let mut town = rng.random_range(0..TOWNS.len());
    let mut asked: Vec<(usize, usize, usize)> = Vec::new();
    let mut turns = Vec::new();
    let mut labels = Vec::new();
    let mut shifts = 0;
    for turn_no in 1..=spec.turns {
        let (last_attr, last_fact) = asked.last().map(|&(_, a, f)| (a, f)).unwrap_or((0, 0));
        let roll: f64 = rng.random();
        let (attr, fact, explicit) = if turn_no == 1 {
            (rng.random_range(0..5), rng.random_range(0..2), true)
        } else if shifts < spec.max_shifts && turn_no >= 3 && roll < 0.3 {
            shifts += 1;
            let mut next = rng.random_range(0..TOWNS.len() - 1);
            if next >= town {
                next += 1;
            }
            town = next;
            (rng.random_range(0..5), rng.random_range(0..2), true)
        } else if roll < 0.55 && !asked.contains(&(town, last_attr, 1 - last_fact)) {
            // the other fact of the passage just discussed
            (last_attr, 1 - last_fact, false)
        } else {
            let fresh: Vec<(usize, usize)> = (0..5)
                .flat_map(|a| [(a, 0), (a, 1)])
                .filter(|&(a, f)| a != last_attr && !asked.contains(&(town, a, f)))
                .collect();
            let &(a, f) = fresh.choose(rng).unwrap();
            (a, f, false)
        };
        asked.push((town, attr, fact));
        let forms = QUESTIONS[attr][fact];
        let full = forms[0].replace("{E}", TOWNS[town]);
        let query = if explicit {
            full.clone()
        } else if rng.random_bool(0.5) {
            forms[1].to_string()
        } else {
            forms[2].to_string()
        };
        let label = if explicit || !rng.random_bool(spec.vague_label_rate) {
            full
        } else {
            query.clone()
        };
        labels.push(LabelRecord {
            problem_id: format!("{id}_{turn_no}"),
            label,
        });
        turns.push(Turn {
            query,
            answer: facts[town].answers[attr][fact].clone(),
            gold_passage_ids: vec![passage_id(town, attr)],
        });
    }
    (Conversation { id, turns }, labels)
}
