use std::fs;
use std::path::Path;

use crate::corpus::{validate_heads, DepSentence, Token, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct ParseOptions {
    /// Longer sentences are rejected, never truncated.
    pub max_len: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

struct Pending {
    id: Option<String>,
    first_line: usize,
    lines: Vec<usize>,
    tokens: Vec<Token>,
    raw_heads: Vec<usize>,
}

impl Pending {
    fn new(line: usize) -> Self {
        Pending {
            id: None,
            first_line: line,
            lines: Vec::new(),
            tokens: Vec::new(),
            raw_heads: Vec::new(),
        }
    }
}

pub fn parse_conllu(text: &str) -> Result<Vec<DepSentence>> {
    parse_conllu_with(text, ParseOptions::default())
}

pub fn read_conllu(path: impl AsRef<Path>) -> Result<Vec<DepSentence>> {
    parse_conllu(&fs::read_to_string(path)?)
}

/// Parses CoNLL-U text. Multiword-token ranges and empty nodes are skipped;
/// the entity type comes from the `Entity=` key of MISC.
pub fn parse_conllu_with(text: &str, opts: ParseOptions) -> Result<Vec<DepSentence>> {
    let mut out = Vec::new();
    let mut cur: Option<Pending> = None;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(p) = cur.take() {
                out.push(finish(p, out.len(), opts)?);
            }
            continue;
        }
        let pending = cur.get_or_insert_with(|| Pending::new(line_no));
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    pending.id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("non-integer ID `{}`", cols[0]),
        })?;
        if id != pending.tokens.len() + 1 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("token ID {id} out of sequence"),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("non-integer HEAD `{}`", cols[6]),
        })?;
        let entity_type = cols[9]
            .split('|')
            .find_map(|kv| kv.strip_prefix("Entity="))
            .unwrap_or("O")
            .to_string();
        pending.tokens.push(Token {
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            deprel: cols[7].to_string(),
            entity_type,
            head: None,
        });
        pending.raw_heads.push(head);
        pending.lines.push(line_no);
    }
    if let Some(p) = cur.take() {
        out.push(finish(p, out.len(), opts)?);
    }
    Ok(out)
}

fn finish(mut p: Pending, index: usize, opts: ParseOptions) -> Result<DepSentence> {
    let n = p.tokens.len();
    if n == 0 {
        return Err(Error::Parse {
            line: p.first_line,
            msg: "sentence without tokens".into(),
        });
    }
    if n > opts.max_len {
        return Err(Error::Parse {
            line: p.first_line,
            msg: format!("sentence of {n} tokens exceeds max length {}", opts.max_len),
        });
    }
    let heads: Vec<Option<usize>> = p.raw_heads.iter().map(|&h| h.checked_sub(1)).collect();
    if let Err((tok, msg)) = validate_heads(&heads) {
        let line = tok.map_or(p.first_line, |t| p.lines[t]);
        return Err(Error::Parse { line, msg });
    }
    for (t, h) in p.tokens.iter_mut().zip(heads) {
        t.head = h;
    }
    Ok(DepSentence {
        id: p.id.unwrap_or_else(|| format!("s{}", index + 1)),
        tokens: p.tokens,
    })
}

/// Serializes sentences as CoNLL-U with `# sent_id` comments.
pub fn write_conllu(sentences: &[DepSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str("# sent_id = ");
        out.push_str(&s.id);
        out.push('\n');
        for (i, t) in s.tokens.iter().enumerate() {
            let head = t.head.map_or(0, |h| h + 1);
            let misc = if t.entity_type == "O" {
                "_".to_string()
            } else {
                format!("Entity={}", t.entity_type)
            };
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t{}\n",
                i + 1,
                t.form,
                t.upos,
                head,
                t.deprel,
                misc
            ));
        }
        out.push('\n');
    }
    out
}
