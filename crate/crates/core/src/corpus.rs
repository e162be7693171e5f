//! Passages, conversations and the reformulation problems derived from them.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A retrievable unit of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

/// Passages in insertion order with id lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassageCollection {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl PassageCollection {
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(Error::Invalid(format!("passage `{}` has empty text", p.id)));
            }
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(p.id.clone()));
            }
        }
        Ok(Self { passages, by_id })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Passage> {
        self.passages.iter()
    }

    pub fn as_slice(&self) -> &[Passage] {
        &self.passages
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassageFormat {
    Jsonl,
    /// `id<TAB>text[<TAB>title]`
    Tsv,
}

impl PassageFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => PassageFormat::Tsv,
            _ => PassageFormat::Jsonl,
        }
    }
}

pub fn load_passages(path: &Path, format: PassageFormat) -> Result<PassageCollection> {
    let raw = fs::read_to_string(path)?;
    let mut passages = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let passage = match format {
            PassageFormat::Jsonl => parse_json_passage(path, line_no, line)?,
            PassageFormat::Tsv => {
                let mut cols = line.split('\t');
                let id = cols.next().unwrap_or_default().to_string();
                let text = cols.next().ok_or(Error::MissingField {
                    path: path.to_path_buf(),
                    line: line_no,
                    field: "text",
                })?;
                Passage {
                    id,
                    text: text.to_string(),
                    title: cols.next().map(str::to_string),
                }
            }
        };
        if passage.id.is_empty() {
            return Err(Error::MissingField {
                path: path.to_path_buf(),
                line: line_no,
                field: "id",
            });
        }
        if passage.text.trim().is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("passage `{}` has empty text", passage.id),
            });
        }
        if seen.insert(passage.id.clone(), line_no).is_some() {
            return Err(Error::DuplicateId(passage.id));
        }
        passages.push(passage);
    }
    PassageCollection::new(passages)
}

fn parse_json_passage(path: &Path, line: usize, raw: &str) -> Result<Passage> {
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    })?;
    let field = |name: &'static str| -> Result<String> {
        value
            .get(name)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or(Error::MissingField {
                path: path.to_path_buf(),
                line,
                field: name,
            })
    };
    Ok(Passage {
        id: field("id")?,
        text: field("text")?,
        title: value.get("title").and_then(|v| v.as_str()).map(str::to_string),
    })
}

pub fn write_passages(path: &Path, passages: &PassageCollection) -> Result<()> {
    write_jsonl(path, passages.iter())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub answer: String,
    #[serde(default)]
    pub gold_passage_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn turns_with_gold(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| !t.gold_passage_ids.is_empty())
            .count()
    }
}

/// Conversations as loaded, with the turn counts reported per dataset.
#[derive(Debug, Clone, Default)]
pub struct ConversationSet {
    pub conversations: Vec<Conversation>,
    pub total_turns: usize,
    pub turns_with_gold: usize,
}

impl ConversationSet {
    pub fn new(conversations: Vec<Conversation>) -> Self {
        let total_turns = conversations.iter().map(|c| c.turns.len()).sum();
        let turns_with_gold = conversations.iter().map(|c| c.turns_with_gold()).sum();
        Self {
            conversations,
            total_turns,
            turns_with_gold,
        }
    }

    /// Gold ids that do not resolve in `passages`, one message per id.
    pub fn validate_gold(&self, passages: &PassageCollection) -> Vec<String> {
        let mut warnings = Vec::new();
        for conv in &self.conversations {
            for (k, turn) in conv.turns.iter().enumerate() {
                for id in &turn.gold_passage_ids {
                    if !passages.contains(id) {
                        warnings.push(format!(
                            "conversation `{}` turn {}: gold passage `{}` not in collection",
                            conv.id,
                            k + 1,
                            id
                        ));
                    }
                }
            }
        }
        warnings
    }
}

pub fn load_conversations(path: &Path) -> Result<ConversationSet> {
    let raw = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        for field in ["id", "turns"] {
            if value.get(field).is_none() {
                return Err(Error::MissingField {
                    path: path.to_path_buf(),
                    line: line_no,
                    field,
                });
            }
        }
        let conv: Conversation =
            serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        if conv.turns.is_empty() {
            return Err(parse_err(format!("conversation `{}` has no turns", conv.id)));
        }
        if let Some(k) = conv.turns.iter().position(|t| t.query.trim().is_empty()) {
            return Err(parse_err(format!(
                "conversation `{}` turn {} has an empty query",
                conv.id,
                k + 1
            )));
        }
        out.push(conv);
    }
    Ok(ConversationSet::new(out))
}

pub fn write_conversations(path: &Path, conversations: &[Conversation]) -> Result<()> {
    write_jsonl(path, conversations.iter())
}

/// One earlier turn as seen by the reformulation model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub query: String,
    pub answer: String,
    /// Kept for topic-shift analysis; never shown to the model.
    #[serde(default)]
    pub gold_passage_ids: Vec<String>,
}

/// The current query of turn `turn_index` together with all earlier turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformulationProblem {
    pub conversation_id: String,
    /// 1-based.
    pub turn_index: usize,
    pub current_query: String,
    pub history: Vec<HistoryTurn>,
    pub gold_passage_ids: Vec<String>,
}

impl ReformulationProblem {
    /// Stable key, `<conversation>_<turn>`.
    pub fn id(&self) -> String {
        format!("{}_{}", self.conversation_id, self.turn_index)
    }
}

pub fn expand_problems(conversations: &[Conversation], require_gold: bool) -> Vec<ReformulationProblem> {
    let mut problems = Vec::new();
    for conv in conversations {
        for (k, turn) in conv.turns.iter().enumerate() {
            if require_gold && turn.gold_passage_ids.is_empty() {
                continue;
            }
            let history = conv.turns[..k]
                .iter()
                .map(|t| HistoryTurn {
                    query: t.query.clone(),
                    answer: t.answer.clone(),
                    gold_passage_ids: t.gold_passage_ids.clone(),
                })
                .collect();
            problems.push(ReformulationProblem {
                conversation_id: conv.id.clone(),
                turn_index: k + 1,
                current_query: turn.query.clone(),
                history,
                gold_passage_ids: turn.gold_passage_ids.clone(),
            });
        }
    }
    problems
}

pub(crate) fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let raw = fs::read_to_string(path)?;
    raw.lines()
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn turn(q: &str, gold: &[&str]) -> Turn {
        Turn {
            query: q.into(),
            answer: format!("answer to {q}"),
            gold_passage_ids: gold.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn loads_jsonl_passages_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.jsonl",
            "{\"id\":\"p1\",\"text\":\"one\"}\n{\"id\":\"p2\",\"title\":\"T\",\"text\":\"two\"}\n{\"id\":\"p3\",\"text\":\"three\"}\n",
        );
        let c = load_passages(&p, PassageFormat::Jsonl).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.get("p2").unwrap().text, "two");
        assert_eq!(c.get("p2").unwrap().title.as_deref(), Some("T"));
        assert_eq!(c.ordinal("p3"), Some(2));
    }

    #[test]
    fn duplicate_ids_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.jsonl", "{\"id\":\"p1\",\"text\":\"a\"}\n{\"id\":\"p1\",\"text\":\"b\"}\n");
        let err = load_passages(&p, PassageFormat::Jsonl).unwrap_err();
        assert!(matches!(&err, Error::DuplicateId(id) if id == "p1"), "{err}");
        assert!(err.to_string().contains("p1"));
    }

    #[test]
    fn empty_file_gives_empty_collection() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.jsonl", "");
        assert_eq!(load_passages(&p, PassageFormat::Jsonl).unwrap().len(), 0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.jsonl", "{\"id\":\"p1\",\"text\":\"a\"}\n{not json\n");
        match load_passages(&p, PassageFormat::Jsonl).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        let p = write(&dir, "q.jsonl", "{\"id\":\"p1\"}\n");
        assert!(matches!(
            load_passages(&p, PassageFormat::Jsonl).unwrap_err(),
            Error::MissingField { line: 1, field: "text", .. }
        ));
    }

    #[test]
    fn tsv_passages() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.tsv", "p1\tfirst text\tTitle\np2\tsecond\n");
        let c = load_passages(&p, PassageFormat::Tsv).unwrap();
        assert_eq!(c.get("p1").unwrap().title.as_deref(), Some("Title"));
        assert_eq!(c.get("p2").unwrap().text, "second");
    }

    #[test]
    fn conversation_turn_counts() {
        let dir = tempfile::tempdir().unwrap();
        let conv = Conversation {
            id: "c1".into(),
            turns: vec![turn("a", &["p1"]), turn("b", &[]), turn("c", &["p9"])],
        };
        let p = dir.path().join("c.jsonl");
        write_conversations(&p, std::slice::from_ref(&conv)).unwrap();
        let set = load_conversations(&p).unwrap();
        assert_eq!(set.total_turns, 3);
        assert_eq!(set.turns_with_gold, 2);
        assert_eq!(set.conversations[0], conv);

        let passages = PassageCollection::new(vec![Passage {
            id: "p1".into(),
            title: None,
            text: "x".into(),
        }])
        .unwrap();
        let warnings = set.validate_gold(&passages);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("p9"));
    }

    #[test]
    fn zero_turn_conversation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.jsonl", "{\"id\":\"c1\",\"turns\":[]}\n");
        assert!(matches!(load_conversations(&p).unwrap_err(), Error::Parse { line: 1, .. }));
        let p = write(&dir, "d.jsonl", "{\"id\":\"c1\"}\n");
        assert!(matches!(
            load_conversations(&p).unwrap_err(),
            Error::MissingField { field: "turns", .. }
        ));
    }

    #[test]
    fn expand_builds_history() {
        let conv = Conversation {
            id: "c".into(),
            turns: vec![turn("q1", &[]), turn("q2", &[]), turn("q3", &["p"])],
        };
        let all = expand_problems(std::slice::from_ref(&conv), false);
        assert_eq!(all.len(), 3);
        assert!(all[0].history.is_empty());
        assert_eq!(all[1].history.len(), 1);
        assert_eq!(all[1].history[0].query, "q1");
        assert_eq!(all[2].current_query, "q3");

        let gold = expand_problems(&[conv], true);
        assert_eq!(gold.len(), 1);
        assert_eq!(gold[0].turn_index, 3);
        assert_eq!(gold[0].id(), "c_3");
    }

    fn arb_conversation() -> impl Strategy<Value = Conversation> {
        let turn = (
            "[a-z]{1,6}( [a-z]{1,6}){0,3}",
            "[a-z ]{0,12}",
            proptest::collection::vec("p[0-9]{1,2}", 0..3),
        )
            .prop_map(|(query, answer, gold_passage_ids)| Turn {
                query,
                answer,
                gold_passage_ids,
            });
        ("c[0-9]{1,3}", proptest::collection::vec(turn, 1..6))
            .prop_map(|(id, turns)| Conversation { id, turns })
    }

    proptest! {
        #[test]
        fn conversations_round_trip(convs in proptest::collection::vec(arb_conversation(), 0..5)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("c.jsonl");
            write_conversations(&p, &convs).unwrap();
            let back = load_conversations(&p).unwrap();
            prop_assert_eq!(&back.conversations, &convs);

            let mut total = 0;
            for conv in &convs {
                let problems = expand_problems(std::slice::from_ref(conv), false);
                total += problems.len();
                for prob in &problems {
                    prop_assert_eq!(prob.history.len(), prob.turn_index - 1);
                    prop_assert_eq!(&prob.current_query, &conv.turns[prob.turn_index - 1].query);
                    for (j, h) in prob.history.iter().enumerate() {
                        prop_assert_eq!(&h.query, &conv.turns[j].query);
                        prop_assert_eq!(&h.answer, &conv.turns[j].answer);
                    }
                }
            }
            prop_assert_eq!(total, back.total_turns);
        }
    }
}
