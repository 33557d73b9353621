//! Line-delimited dataset files.
//!
//! Every file starts with one header line carrying the stage tag, schema
//! version, and the generator seed, followed by one JSON object per record:
//!
//! ```text
//! {"stage":"Text1","schema":1,"seed":7}
//! {"key":"inc-000001","text":"shortness of breath ards"}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DatasetStage, IncidentRecord, VitalKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing header line")]
    MissingHeader,
    #[error("expected stage {expected}, file carries {found}")]
    StageMismatch { expected: DatasetStage, found: DatasetStage },
}

/// First line of every dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub stage: DatasetStage,
    pub schema: u32,
    pub seed: u64,
}

/// A keyed symptom-text sample (Text1, Text2, Text3, Text5, Text7, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRecord {
    pub key: String,
    pub text: String,
}

/// A keyed single-kind vitals sample (Vitals1, Vitals2, Vitals3, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsRecord {
    pub key: String,
    pub kind: VitalKind,
    pub values: Vec<f64>,
    pub unit: String,
}

/// One dataset file in memory: typed header plus records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<R> {
    pub header: DatasetHeader,
    pub records: Vec<R>,
}

impl<R: Serialize + for<'de> Deserialize<'de>> Dataset<R> {
    pub fn new(stage: DatasetStage, seed: u64, records: Vec<R>) -> Self {
        Self { header: DatasetHeader { stage, schema: SCHEMA_VERSION, seed }, records }
    }

    pub fn write_to(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.header)
            .map_err(|source| DatasetError::Parse { line: 1, source })?;
        w.write_all(b"\n")?;
        for (i, rec) in self.records.iter().enumerate() {
            serde_json::to_writer(&mut w, rec)
                .map_err(|source| DatasetError::Parse { line: i + 2, source })?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, DatasetError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header_line = lines.next().ok_or(DatasetError::MissingHeader)??;
        let header: DatasetHeader = serde_json::from_str(&header_line)
            .map_err(|source| DatasetError::Parse { line: 1, source })?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: R = serde_json::from_str(&line)
                .map_err(|source| DatasetError::Parse { line: i + 2, source })?;
            records.push(rec);
        }
        Ok(Self { header, records })
    }

    /// Like `read_from`, but rejects files carrying a different stage tag.
    pub fn read_expecting(path: &Path, stage: DatasetStage) -> Result<Self, DatasetError> {
        let ds = Self::read_from(path)?;
        if ds.header.stage != stage {
            return Err(DatasetError::StageMismatch { expected: stage, found: ds.header.stage });
        }
        Ok(ds)
    }
}

pub type TextDataset = Dataset<TextRecord>;
pub type VitalsDataset = Dataset<VitalsRecord>;
pub type IncidentDataset = Dataset<IncidentRecord>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::VitalsSeries;
    use std::collections::BTreeMap;

    #[test]
    fn text_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text1.jsonl");
        let ds = TextDataset::new(
            DatasetStage::Text1,
            7,
            vec![
                TextRecord { key: "a".into(), text: "shortness of breath ards".into() },
                TextRecord { key: "b".into(), text: "chest pain".into() },
            ],
        );
        ds.write_to(&path).unwrap();
        let back = TextDataset::read_from(&path).unwrap();
        assert_eq!(ds, back);
        assert_eq!(back.header.stage, DatasetStage::Text1);
        assert_eq!(back.header.seed, 7);
    }

    #[test]
    fn incident_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("incidents.jsonl");
        let mut vitals = BTreeMap::new();
        vitals.insert(VitalKind::HR, VitalsSeries::new(VitalKind::HR, vec![88.0, 92.5], "bpm"));
        let rec = IncidentRecord {
            key: "inc-1".into(),
            primary_symptoms: vec!["ards".into()],
            secondary_symptoms: vec![],
            vitals,
            protocol: Some(3),
            med_type: Some(1),
            med_quantity: Some(2.5),
            procedures: vec![0, 4],
        };
        let ds = IncidentDataset::new(DatasetStage::Text0, 11, vec![rec]);
        ds.write_to(&path).unwrap();
        let back = IncidentDataset::read_from(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn stage_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        let ds = VitalsDataset::new(DatasetStage::Vitals1, 7, vec![]);
        ds.write_to(&path).unwrap();
        let err = VitalsDataset::read_expecting(&path, DatasetStage::Vitals2).unwrap_err();
        assert!(matches!(err, DatasetError::StageMismatch { .. }));
    }

    #[test]
    fn serialization_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let ds = VitalsDataset::new(
            DatasetStage::Vitals1,
            3,
            vec![VitalsRecord {
                key: "k".into(),
                kind: VitalKind::HR,
                values: vec![0.347826, 0.356521],
                unit: "normalized".into(),
            }],
        );
        ds.write_to(&p1).unwrap();
        ds.write_to(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
