use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Span, TaskInstance, Treebank};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    sentence_id: String,
    task: String,
    span_a: Span,
    span_b: Span,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trigger_type: Option<String>,
}

/// Reads a JSON-Lines instance file, validating spans against `treebank`.
pub fn load_instances(path: impl AsRef<Path>, treebank: &Treebank) -> Result<Vec<TaskInstance>> {
    let path = path.as_ref();
    parse_instances(&fs::read_to_string(path)?, treebank, &path.display().to_string())
}

pub fn parse_instances(text: &str, treebank: &Treebank, source: &str) -> Result<Vec<TaskInstance>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| Error::Instance {
            path: source.to_string(),
            line: k + 1,
            msg,
        };
        let rec: InstanceRecord = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let task = rec
            .task
            .parse()
            .map_err(|_| fail(format!("unknown task tag `{}`", rec.task)))?;
        let sentence = treebank
            .get(&rec.sentence_id)
            .ok_or_else(|| fail(format!("unknown sentence_id `{}`", rec.sentence_id)))?;
        for (name, span) in [("span_a", rec.span_a), ("span_b", rec.span_b)] {
            if span.is_empty() {
                return Err(fail(format!("{name}: empty span")));
            }
            if span.end > sentence.len() {
                return Err(fail(format!(
                    "{name}: span out of bounds: [{}, {}) for {} tokens",
                    span.begin,
                    span.end,
                    sentence.len()
                )));
            }
        }
        out.push(TaskInstance {
            sentence_id: rec.sentence_id,
            task,
            span_a: rec.span_a,
            span_b: rec.span_b,
            label: rec.label,
            trigger_type: rec.trigger_type,
        });
    }
    Ok(out)
}

/// One JSON object per line, in input order.
pub fn write_instances(instances: &[TaskInstance]) -> Result<String> {
    let mut out = String::new();
    for inst in instances {
        let rec = InstanceRecord {
            sentence_id: inst.sentence_id.clone(),
            task: inst.task.to_string(),
            span_a: inst.span_a,
            span_b: inst.span_b,
            label: inst.label.clone(),
            trigger_type: inst.trigger_type.clone(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DepSentence, Task, Token};

    fn bank() -> Treebank {
        let tok = |h| Token {
            form: "w".into(),
            upos: "NOUN".into(),
            deprel: "dep".into(),
            entity_type: "O".into(),
            head: h,
        };
        let s = DepSentence {
            id: "s1".into(),
            tokens: vec![tok(Some(1)), tok(None), tok(Some(1)), tok(Some(2))],
        };
        Treebank::new(vec![s]).unwrap()
    }

    #[test]
    fn valid_relation_instance() {
        let line = r#"{"sentence_id":"s1","task":"RE","span_a":[0,1],"span_b":[2,3],"label":"PHYS:Located"}"#;
        let got = parse_instances(line, &bank(), "t").unwrap();
        assert_eq!(got[0].task, Task::Re);
        assert_eq!(got[0].span_b, Span::new(2, 3));
        assert_eq!(
            parse_instances(&write_instances(&got).unwrap(), &bank(), "t").unwrap(),
            got
        );
    }

    #[test]
    fn invalid_instances() {
        let cases = [
            (
                r#"{"sentence_id":"s1","task":"RE","span_a":[3,3],"span_b":[2,3],"label":"x"}"#,
                "empty span",
            ),
            (
                r#"{"sentence_id":"s1","task":"RE","span_a":[0,1],"span_b":[2,9],"label":"x"}"#,
                "span out of bounds",
            ),
            (
                r#"{"sentence_id":"s9","task":"RE","span_a":[0,1],"span_b":[2,3],"label":"x"}"#,
                "unknown sentence_id",
            ),
            (
                r#"{"sentence_id":"s1","task":"NER","span_a":[0,1],"span_b":[2,3],"label":"x"}"#,
                "unknown task tag",
            ),
        ];
        for (line, want) in cases {
            let err = parse_instances(line, &bank(), "t").unwrap_err().to_string();
            assert!(err.contains(want), "{err}");
        }
    }
}
