//! Prediction file: one line per instance,
//! `id, [indices], [probabilities]`, probabilities aligned with indices.

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub indices: Vec<usize>,
    pub probabilities: Vec<f64>,
}

pub fn prediction_line(p: &Prediction) -> String {
    let idx = p
        .indices
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let probs = p
        .probabilities
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    format!("{}, [{}], [{}]", p.id, idx, probs)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in predictions {
        writeln!(out, "{}", prediction_line(p))?;
    }
    out.flush()?;
    Ok(())
}

fn parse_line(line: &str, path: &str, line_no: usize) -> Result<Prediction> {
    let err = |message: String| Error::Predictions {
        path: path.to_string(),
        message: format!("line {line_no}: {message}"),
    };
    let open1 = line.find('[').ok_or_else(|| err("missing '['".into()))?;
    let id = line[..open1]
        .trim()
        .trim_end_matches(',')
        .trim()
        .to_string();
    if id.is_empty() {
        return Err(err("empty id".into()));
    }
    let close1 = line[open1..]
        .find(']')
        .map(|i| i + open1)
        .ok_or_else(|| err("unclosed index list".into()))?;
    let rest = &line[close1 + 1..];
    let open2 = rest
        .find('[')
        .map(|i| i + close1 + 1)
        .ok_or_else(|| err("missing probability list".into()))?;
    let close2 = line[open2..]
        .find(']')
        .map(|i| i + open2)
        .ok_or_else(|| err("unclosed probability list".into()))?;

    let parse_list = |body: &str, what: &str| -> Result<Vec<String>> {
        let body = body.trim();
        if body.is_empty() {
            return Ok(vec![]);
        }
        Ok(body
            .split(',')
            .map(|t| t.trim().to_string())
            .collect::<Vec<_>>())
            .and_then(|v: Vec<String>| {
                if v.iter().any(String::is_empty) {
                    Err(err(format!("empty entry in {what}")))
                } else {
                    Ok(v)
                }
            })
    };
    let indices = parse_list(&line[open1 + 1..close1], "indices")?
        .into_iter()
        .map(|t| t.parse::<usize>().map_err(|_| err(format!("bad index {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let probabilities = parse_list(&line[open2 + 1..close2], "probabilities")?
        .into_iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| err(format!("bad probability {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if indices.len() != probabilities.len() {
        return Err(err(format!(
            "{} indices but {} probabilities",
            indices.len(),
            probabilities.len()
        )));
    }
    Ok(Prediction {
        id,
        indices,
        probabilities,
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Predictions {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut predictions = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        predictions.push(parse_line(line, &path.display().to_string(), i + 1)?);
    }
    Ok(predictions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.txt");
        let preds = vec![
            Prediction {
                id: "q0".into(),
                indices: vec![0, 2],
                probabilities: vec![0.9134, 0.5521],
            },
            Prediction {
                id: "q1".into(),
                indices: vec![7],
                probabilities: vec![0.25],
            },
        ];
        write_predictions(&path, &preds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("q0, [0, 2], [0.9134, 0.5521]\n"), "{text}");
        assert_eq!(read_predictions(&path).unwrap(), preds);
    }

    #[test]
    fn mismatched_lists_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.txt");
        std::fs::write(&path, "q0, [1, 2], [0.5]\n").unwrap();
        assert!(read_predictions(&path).is_err());
    }
}
