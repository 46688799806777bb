use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::scalar::Scalar;

/// External word vectors keyed by sentence id, one row per token.
pub type WordFeatures<T> = HashMap<String, Array<T>>;

pub fn read_word_features<T: Scalar>(path: impl AsRef<Path>, dim: usize) -> Result<WordFeatures<T>> {
    parse_word_features(&fs::read_to_string(path)?, dim)
}

/// Each line is `sentence_id<TAB>v1<TAB>...<TAB>v_dim`; a sentence's rows are
/// consecutive and in token order.
pub fn parse_word_features<T: Scalar>(text: &str, dim: usize) -> Result<WordFeatures<T>> {
    let mut rows: Vec<(String, Vec<T>)> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or_default().to_string();
        let values = cols
            .map(|c| {
                c.trim().parse::<f64>().map(T::of).map_err(|_| Error::Parse {
                    line: k + 1,
                    msg: format!("bad feature value `{c}`"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: k + 1,
                msg: format!("{} feature values, expected {dim}", values.len()),
            });
        }
        rows.push((id, values));
    }
    let mut grouped: Vec<(String, Vec<Vec<T>>)> = Vec::new();
    for (id, values) in rows {
        match grouped.last_mut() {
            Some((last, block)) if *last == id => block.push(values),
            _ => grouped.push((id, vec![values])),
        }
    }
    let mut out = HashMap::new();
    for (id, block) in grouped {
        if out.insert(id.clone(), Array::from_rows(&block)?).is_some() {
            return Err(Error::InvalidArgument(format!(
                "rows for sentence `{id}` are not contiguous"
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_rows_by_sentence() {
        let f: WordFeatures<f64> = parse_word_features("a\t1\t2\na\t3\t4\nb\t5\t6\n", 2).unwrap();
        assert_eq!(f["a"].shape(), [2, 2]);
        assert_eq!(f["b"].row(0), &[5.0, 6.0]);
        assert!(parse_word_features::<f64>("a\t1\n", 2).is_err());
        assert!(parse_word_features::<f64>("a\t1\nb\t2\na\t3\n", 1).is_err());
    }
}
