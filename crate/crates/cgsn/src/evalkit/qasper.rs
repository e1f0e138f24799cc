//! Ingestion of the public Qasper JSON layout into the dataset format.
//!
//! Paragraphs are flattened section by section in document order; evidence
//! strings are matched to paragraph indices by exact text match and
//! unmatched ones are dropped with a count. Only the first answer
//! reference of each question is used.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::encoder::split_sentences;
use crate::pipeline::data::DatasetRecord;
use crate::{Error, Result};

#[derive(Deserialize)]
struct QasperPaper {
    #[serde(default)]
    full_text: Vec<QasperSection>,
    #[serde(default)]
    qas: Vec<QasperQa>,
}

#[derive(Deserialize)]
struct QasperSection {
    #[serde(default)]
    paragraphs: Vec<String>,
}

#[derive(Deserialize)]
struct QasperQa {
    question: String,
    #[serde(default)]
    question_id: Option<String>,
    #[serde(default)]
    answers: Vec<QasperAnswerWrapper>,
}

#[derive(Deserialize)]
struct QasperAnswerWrapper {
    answer: QasperAnswer,
}

#[derive(Deserialize, Default)]
struct QasperAnswer {
    #[serde(default)]
    unanswerable: bool,
    #[serde(default)]
    free_form_answer: String,
    #[serde(default)]
    extractive_spans: Vec<String>,
    #[serde(default)]
    yes_no: Option<bool>,
    #[serde(default)]
    highlighted_evidence: Vec<String>,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct QasperReport {
    pub papers: usize,
    pub questions: usize,
    pub unmatched_evidence: usize,
}

fn answer_text(answer: &QasperAnswer) -> String {
    if answer.unanswerable {
        return String::new();
    }
    if !answer.free_form_answer.is_empty() {
        return answer.free_form_answer.clone();
    }
    if !answer.extractive_spans.is_empty() {
        return answer.extractive_spans.join("; ");
    }
    match answer.yes_no {
        Some(true) => "yes".into(),
        Some(false) => "no".into(),
        None => String::new(),
    }
}

/// Parse a Qasper-layout JSON file into dataset records, paper ids in
/// sorted order so output is deterministic.
pub fn ingest_qasper(path: &Path) -> Result<(Vec<DatasetRecord>, QasperReport)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Dataset {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ingest_qasper_str(&text).map_err(|e| match e {
        Error::Dataset { message, .. } => Error::Dataset {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

pub fn ingest_qasper_str(text: &str) -> Result<(Vec<DatasetRecord>, QasperReport)> {
    let papers: BTreeMap<String, QasperPaper> =
        serde_json::from_str(text).map_err(|e| Error::Dataset {
            path: String::new(),
            message: format!("not a Qasper JSON map: {e}"),
        })?;
    let mut report = QasperReport::default();
    let mut records = Vec::new();
    for (paper_id, paper) in papers {
        report.papers += 1;
        let flat: Vec<String> = paper
            .full_text
            .iter()
            .flat_map(|s| s.paragraphs.iter())
            .filter(|p| !p.trim().is_empty())
            .cloned()
            .collect();
        let paragraphs: Vec<Vec<String>> = flat.iter().map(|p| split_sentences(p)).collect();
        for (q_idx, qa) in paper.qas.iter().enumerate() {
            report.questions += 1;
            let first = qa.answers.first();
            let mut evidence = Vec::new();
            if let Some(wrapper) = first {
                for ev in &wrapper.answer.highlighted_evidence {
                    match flat.iter().position(|p| p == ev) {
                        Some(idx) => evidence.push(idx),
                        None => report.unmatched_evidence += 1,
                    }
                }
            }
            evidence.sort_unstable();
            evidence.dedup();
            let id = qa
                .question_id
                .clone()
                .unwrap_or_else(|| format!("{paper_id}-q{q_idx}"));
            records.push(DatasetRecord {
                id,
                question: qa.question.clone(),
                paragraphs: paragraphs.clone(),
                evidence,
                answer: first.map(|w| answer_text(&w.answer)).unwrap_or_default(),
            });
        }
    }
    Ok((records, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> String {
        serde_json::json!({
            "paper1": {
                "title": "A Paper",
                "full_text": [
                    {"section_name": "Intro", "paragraphs": ["First para here.", "Second para."]},
                    {"section_name": "Method", "paragraphs": ["Third para. With two sentences.", "Fourth.", "Fifth and last."]},
                    {"section_name": "Empty", "paragraphs": [" "]}
                ],
                "qas": [
                    {
                        "question": "What is studied?",
                        "question_id": "q-abc",
                        "answers": [
                            {"answer": {
                                "unanswerable": false,
                                "free_form_answer": "paragraphs",
                                "extractive_spans": [],
                                "yes_no": null,
                                "highlighted_evidence": ["Second para.", "not in the paper"]
                            }},
                            {"answer": {
                                "unanswerable": false,
                                "free_form_answer": "ignored second reference",
                                "highlighted_evidence": ["Fourth."]
                            }}
                        ]
                    }
                ]
            }
        })
        .to_string()
    }

    #[test]
    fn paragraphs_flatten_in_document_order() {
        let (records, report) = ingest_qasper_str(&sample()).unwrap();
        assert_eq!(records.len(), 1);
        let record = &records[0];
        // 5 non-empty paragraphs across sections, order preserved.
        assert_eq!(record.paragraphs.len(), 5);
        assert_eq!(record.paragraphs[0], vec!["First para here."]);
        assert_eq!(
            record.paragraphs[2],
            vec!["Third para.", "With two sentences."]
        );
        assert_eq!(report.papers, 1);
        assert_eq!(report.questions, 1);
    }

    #[test]
    fn unmatched_evidence_is_dropped_and_counted() {
        let (records, report) = ingest_qasper_str(&sample()).unwrap();
        assert_eq!(records[0].evidence, vec![1]);
        assert_eq!(report.unmatched_evidence, 1);
    }

    #[test]
    fn first_reference_only() {
        let (records, _) = ingest_qasper_str(&sample()).unwrap();
        assert_eq!(records[0].answer, "paragraphs");
        assert!(!records[0].evidence.contains(&3));
    }

    #[test]
    fn malformed_file_is_an_error_with_context() {
        let err = ingest_qasper_str("[1,2,3]").unwrap_err();
        assert!(err.to_string().contains("Qasper"), "{err}");
    }

    #[test]
    fn ingest_then_reserialize_round_trips() {
        let (records, _) = ingest_qasper_str(&sample()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        crate::pipeline::data::write_dataset(&path, &records).unwrap();
        let (instances, _) = crate::pipeline::data::load_dataset(&path).unwrap();
        let again: Vec<DatasetRecord> = instances
            .iter()
            .map(crate::pipeline::data::record_from_instance)
            .collect();
        assert_eq!(again, records);
        // Second round trip is byte-identical.
        let path2 = dir.path().join("ds2.jsonl");
        crate::pipeline::data::write_dataset(&path2, &again).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }
}
