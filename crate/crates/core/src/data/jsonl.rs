use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Domain, Example, Payload};
use crate::error::{AidaError, Result};
use crate::hierarchy::LabelTree;
use crate::nn::UNKNOWN_TOKEN;

pub const DEFAULT_MIN_FREQ: usize = 25;
pub const UNKNOWN_WORD: &str = "<unk>";

/// Word index built from source text only. Index 0 is the unknown word;
/// the rest follow first appearance among words meeting the frequency threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(mut words: Vec<String>) -> Self {
        if words.first().map(String::as_str) != Some(UNKNOWN_WORD) {
            words.insert(0, UNKNOWN_WORD.to_string());
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a [String]>, min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for s in sentences {
            for w in s {
                if w == UNKNOWN_WORD {
                    continue;
                }
                let c = counts.entry(w.as_str()).or_insert(0);
                if *c == 0 {
                    order.push(w.as_str());
                }
                *c += 1;
            }
        }
        let words: Vec<String> = order
            .into_iter()
            .filter(|w| counts[w] >= min_freq)
            .map(str::to_string)
            .collect();
        Vocabulary::from(words)
    }

    /// Number of indices, including the unknown word.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn word(&self, index: usize) -> &str {
        self.words.get(index).map_or(UNKNOWN_WORD, String::as_str)
    }

    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        words
            .iter()
            .map(|w| self.index.get(w).copied().unwrap_or(UNKNOWN_TOKEN))
            .collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|&t| self.word(t)).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Clone, Debug)]
pub struct JsonlOptions {
    pub min_freq: usize,
    /// Reuse an existing vocabulary instead of building one from the source lines.
    pub vocabulary: Option<Vocabulary>,
}

impl Default for JsonlOptions {
    fn default() -> Self {
        JsonlOptions {
            min_freq: DEFAULT_MIN_FREQ,
            vocabulary: None,
        }
    }
}

#[derive(Deserialize)]
struct Record {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    features: Option<Vec<f64>>,
    #[serde(default)]
    label: Option<String>,
    domain: Domain,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    domain: Domain,
}

enum Raw {
    Text(Vec<String>),
    Features(Vec<f64>),
}

/// Parses one example per line: `{"text" | "features", "label"?, "domain"}`.
/// Blank lines are skipped. Returns the vocabulary when any line carries text.
pub fn parse_jsonl(text: &str, tree: &LabelTree, options: &JsonlOptions) -> Result<(Dataset, Option<Vocabulary>)> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| AidaError::Parse {
            line: line_no,
            detail: e.to_string(),
        })?;
        let payload = match (rec.text, rec.features) {
            (Some(t), None) => Raw::Text(t.split_whitespace().map(str::to_string).collect()),
            (None, Some(f)) => Raw::Features(f),
            _ => {
                return Err(AidaError::Parse {
                    line: line_no,
                    detail: "expected exactly one of `text` or `features`".into(),
                })
            }
        };
        let label = match rec.label {
            None => None,
            Some(name) => Some(tree.leaf_index(&name).ok_or(AidaError::UnknownLabel {
                line: line_no,
                label: name,
            })?),
        };
        raw.push((line_no, payload, label, rec.domain));
    }

    let has_text = raw.iter().any(|(_, p, _, _)| matches!(p, Raw::Text(_)));
    let vocabulary = match (&options.vocabulary, has_text) {
        (Some(v), _) => Some(v.clone()),
        (None, true) => {
            let source: Vec<&[String]> = raw
                .iter()
                .filter(|(_, _, _, d)| *d == Domain::Source)
                .filter_map(|(_, p, _, _)| match p {
                    Raw::Text(w) => Some(w.as_slice()),
                    Raw::Features(_) => None,
                })
                .collect();
            Some(Vocabulary::build(source.iter().copied(), options.min_freq))
        }
        (None, false) => None,
    };

    let mut examples = Vec::with_capacity(raw.len());
    for (line_no, payload, label, domain) in raw {
        let payload = match payload {
            Raw::Text(words) => Payload::Tokens(vocabulary.as_ref().expect("vocabulary built for text").encode(&words)),
            Raw::Features(f) => Payload::Vector(f),
        };
        let example = Example { payload, label, domain };
        Dataset::new(vec![example.clone()])
            .validate(tree)
            .map_err(|e| AidaError::Parse {
                line: line_no,
                detail: e.to_string(),
            })?;
        examples.push(example);
    }
    Ok((Dataset::new(examples), vocabulary))
}

pub fn load_jsonl(path: &Path, tree: &LabelTree, options: &JsonlOptions) -> Result<(Dataset, Option<Vocabulary>)> {
    parse_jsonl(&fs::read_to_string(path)?, tree, options)
}

/// Writes a dataset in the format read by [`load_jsonl`]. Token payloads are
/// rendered through `vocabulary`, with unknown indices written as `<unk>`.
pub fn write_jsonl(path: &Path, data: &Dataset, tree: &LabelTree, vocabulary: Option<&Vocabulary>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for e in &data.examples {
        let (text, features) = match &e.payload {
            Payload::Vector(v) => (None, Some(v.as_slice())),
            Payload::Tokens(t) => {
                let v = vocabulary.ok_or_else(|| AidaError::pre("write_jsonl", "token payloads need a vocabulary"))?;
                (Some(v.decode(t)), None)
            }
        };
        let rec = OutRecord {
            text,
            features,
            label: e.label.map(|y| tree.leaf_names()[y].as_str()),
            domain: e.domain,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> LabelTree {
        LabelTree::uniform(2, 2, &[vec![true, false], vec![true, false]]).unwrap()
    }

    fn opts(min_freq: usize) -> JsonlOptions {
        JsonlOptions {
            min_freq,
            vocabulary: None,
        }
    }

    #[test]
    fn parses_text_and_builds_source_vocabulary() {
        let text = r#"{"text": "a b a", "label": "p0.c0", "domain": "source"}
{"text": "b c", "label": "p1.c1", "domain": "source"}

{"text": "a z", "domain": "target"}
"#;
        let (d, v) = parse_jsonl(text, &tree(), &opts(2)).unwrap();
        let v = v.unwrap();
        assert_eq!(d.len(), 3);
        // a and b reach the threshold, c does not, z is target-only
        assert_eq!(v.len(), 3);
        assert_eq!(d.examples[0].payload, Payload::Tokens(vec![1, 2, 1]));
        assert_eq!(d.examples[1].payload, Payload::Tokens(vec![2, 0]));
        assert_eq!(d.examples[2].payload, Payload::Tokens(vec![1, 0]));
        assert_eq!(d.examples[2].label, None);
    }

    #[test]
    fn unknown_label_reports_line() {
        let text = "{\"features\": [1.0], \"label\": \"p0.c0\", \"domain\": \"source\"}\n{\"features\": [1.0], \"label\": \"nope\", \"domain\": \"source\"}\n";
        match parse_jsonl(text, &tree(), &opts(1)) {
            Err(AidaError::UnknownLabel { line, label }) => {
                assert_eq!(line, 2);
                assert_eq!(label, "nope");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_is_a_parse_error() {
        let text = "{\"features\": [1.0], \"domain\": \"source\", \"label\": \"p0.c0\"}\nnot json\n";
        assert!(matches!(parse_jsonl(text, &tree(), &opts(1)), Err(AidaError::Parse { line: 2, .. })));
        let both = "{\"features\": [1.0], \"text\": \"a\", \"domain\": \"source\", \"label\": \"p0.c0\"}\n";
        assert!(matches!(parse_jsonl(both, &tree(), &opts(1)), Err(AidaError::Parse { line: 1, .. })));
    }

    #[test]
    fn target_with_nonshared_label_rejected() {
        let text = "{\"features\": [1.0], \"label\": \"p0.c1\", \"domain\": \"target\"}\n";
        assert!(matches!(parse_jsonl(text, &tree(), &opts(1)), Err(AidaError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_gives_empty_dataset() {
        let (d, v) = parse_jsonl("", &tree(), &opts(1)).unwrap();
        assert!(d.is_empty());
        assert!(v.is_none());
    }

    #[test]
    fn round_trip_through_file() {
        let text = r#"{"text": "a b a b", "label": "p0.c0", "domain": "source"}
{"text": "b q a", "label": "p1.c1", "domain": "source"}
{"text": "a r", "label": "p1.c0", "domain": "target"}
"#;
        let t = tree();
        let (d, v) = parse_jsonl(text, &t, &opts(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_jsonl(&path, &d, &t, v.as_ref()).unwrap();
        let (d2, v2) = load_jsonl(&path, &t, &opts(2)).unwrap();
        assert_eq!(d, d2);
        assert_eq!(v, v2);
    }

    #[test]
    fn vocabulary_serializes_as_word_list() {
        let v = Vocabulary::from(vec!["x".to_string(), "y".to_string()]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"["<unk>","x","y"]"#);
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
