//! Dataset records: one JSON object per line with a question, a
//! paragraph-structured document, gold evidence indices and an answer.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::tokenize;
use crate::{Error, Result};

/// On-disk record; paragraphs are lists of sentence strings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub paragraphs: Vec<Vec<String>>,
    pub evidence: Vec<usize>,
    pub answer: String,
}

/// Paragraph-structured document text.
#[derive(Debug, Clone)]
pub struct Document {
    pub paragraphs: Vec<Vec<String>>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }

    /// Total token count over all paragraphs.
    pub fn token_length(&self) -> usize {
        self.paragraphs
            .iter()
            .flat_map(|p| p.iter())
            .map(|s| tokenize(s).len())
            .sum()
    }

    /// Paragraph text with sentences joined by single spaces.
    pub fn paragraph_text(&self, index: usize) -> String {
        self.paragraphs[index].join(" ")
    }
}

/// One training/evaluation item: a question over a document with gold
/// evidence paragraph indices. The answer text is carried but unused.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: String,
    pub question: String,
    pub document: Document,
    pub evidence: BTreeSet<usize>,
    pub answer: String,
}

impl Instance {
    /// 0/1 labels for the paragraphs in `[start, end)`.
    pub fn labels(&self, start: usize, end: usize) -> Vec<f64> {
        (start..end)
            .map(|p| if self.evidence.contains(&p) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Ingestion side effects worth reporting.
#[derive(Debug, Default, Clone, Copy)]
pub struct LoadReport {
    pub instances: usize,
    pub dropped_paragraphs: usize,
    pub dropped_evidence: usize,
}

/// Build an instance from a record: empty paragraphs (no tokens at all)
/// are dropped, evidence indices are remapped around the dropped ones, and
/// out-of-range evidence is discarded. Documents left without a paragraph
/// are an error.
pub fn instance_from_record(record: DatasetRecord, report: &mut LoadReport) -> Result<Instance> {
    let mut kept = Vec::new();
    let mut remap = vec![None; record.paragraphs.len()];
    for (i, sentences) in record.paragraphs.into_iter().enumerate() {
        let non_empty: Vec<String> = sentences
            .into_iter()
            .filter(|s| !tokenize(s).is_empty())
            .collect();
        if non_empty.is_empty() {
            report.dropped_paragraphs += 1;
            continue;
        }
        remap[i] = Some(kept.len());
        kept.push(non_empty);
    }
    if kept.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut evidence = BTreeSet::new();
    for e in record.evidence {
        match remap.get(e).copied().flatten() {
            Some(new_idx) => {
                evidence.insert(new_idx);
            }
            None => report.dropped_evidence += 1,
        }
    }
    report.instances += 1;
    Ok(Instance {
        id: record.id,
        question: record.question,
        document: Document { paragraphs: kept },
        evidence,
        answer: record.answer,
    })
}

pub fn record_from_instance(instance: &Instance) -> DatasetRecord {
    DatasetRecord {
        id: instance.id.clone(),
        question: instance.question.clone(),
        paragraphs: instance.document.paragraphs.clone(),
        evidence: instance.evidence.iter().copied().collect(),
        answer: instance.answer.clone(),
    }
}

pub fn load_dataset(path: &Path) -> Result<(Vec<Instance>, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::Dataset {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut instances = Vec::new();
    let mut report = LoadReport::default();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            path: path.display().to_string(),
            message: format!("line {}: {e}", line_no + 1),
        })?;
        instances.push(instance_from_record(record, &mut report).map_err(|e| {
            Error::Dataset {
                path: path.display().to_string(),
                message: format!("line {}: {e}", line_no + 1),
            }
        })?);
    }
    if instances.is_empty() {
        return Err(Error::Dataset {
            path: path.display().to_string(),
            message: "no instances".into(),
        });
    }
    Ok((instances, report))
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(paragraphs: Vec<Vec<&str>>, evidence: Vec<usize>) -> DatasetRecord {
        DatasetRecord {
            id: "q0".into(),
            question: "which one".into(),
            paragraphs: paragraphs
                .into_iter()
                .map(|p| p.into_iter().map(str::to_string).collect())
                .collect(),
            evidence,
            answer: String::new(),
        }
    }

    #[test]
    fn empty_paragraphs_are_dropped_and_evidence_remapped() {
        let mut report = LoadReport::default();
        let inst = instance_from_record(
            record(vec![vec!["a b."], vec!["  "], vec!["c d."]], vec![2]),
            &mut report,
        )
        .unwrap();
        assert_eq!(inst.document.len(), 2);
        assert_eq!(report.dropped_paragraphs, 1);
        assert!(inst.evidence.contains(&1));
    }

    #[test]
    fn evidence_into_dropped_paragraph_is_discarded() {
        let mut report = LoadReport::default();
        let inst = instance_from_record(
            record(vec![vec!["a."], vec![""]], vec![1, 0]),
            &mut report,
        )
        .unwrap();
        assert_eq!(report.dropped_evidence, 1);
        assert_eq!(inst.evidence.iter().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn document_with_no_usable_paragraphs_is_an_error() {
        let mut report = LoadReport::default();
        assert!(matches!(
            instance_from_record(record(vec![vec!["..."], vec![" "]], vec![]), &mut report),
            Ok(_)
        ));
        // "..." tokenizes to punct tokens, so it is kept; a fully empty doc errors.
        assert!(matches!(
            instance_from_record(record(vec![vec![" "], vec![""]], vec![]), &mut report),
            Err(Error::EmptyDocument)
        ));
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![
            record(vec![vec!["a b.", "c d."], vec!["e f."]], vec![0]),
            record(vec![vec!["g h."]], vec![]),
        ];
        write_dataset(&path, &records).unwrap();
        let (instances, report) = load_dataset(&path).unwrap();
        assert_eq!(instances.len(), 2);
        assert_eq!(report.dropped_paragraphs, 0);
        let round: Vec<DatasetRecord> = instances.iter().map(record_from_instance).collect();
        assert_eq!(round, records);
    }
}
