//! Feature extraction over whole trees and the CSV feature-matrix format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{assemble_feature_vector, relaxation_window, FeatureError, FEATURE_DIM, FEATURE_NAMES};
use crate::corpus::Corpus;
use crate::scorer::{score_candidates, ReplyScorer};
use crate::tree::{BranchInstance, ConversationTree};

/// Identifies the instance behind a feature row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceKey {
    pub conversation_id: String,
    pub k: usize,
    pub label: u8,
}

impl From<&BranchInstance> for InstanceKey {
    fn from(i: &BranchInstance) -> Self {
        Self {
            conversation_id: i.conversation_id.clone(),
            k: i.k,
            label: i.label,
        }
    }
}

/// Feature rows with their instance keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMatrix {
    pub keys: Vec<InstanceKey>,
    pub rows: Vec<[f64; FEATURE_DIM]>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.keys.iter().map(|k| k.label).collect()
    }

    pub fn push(&mut self, key: InstanceKey, row: [f64; FEATURE_DIM]) {
        self.keys.push(key);
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: FeatureMatrix) {
        self.keys.extend(other.keys);
        self.rows.extend(other.rows);
    }

    /// Header `conversation_id,k,label` followed by the 32 feature names.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["conversation_id", "k", "label"];
        header.extend(FEATURE_NAMES);
        w.write_record(&header)?;
        for (key, row) in self.keys.iter().zip(&self.rows) {
            let mut rec = vec![key.conversation_id.clone(), key.k.to_string(), key.label.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, FeatureError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let mut expected = vec!["conversation_id", "k", "label"];
        expected.extend(FEATURE_NAMES);
        if header != expected {
            return Err(FeatureError::Schema(format!(
                "expected columns {expected:?}, found {header:?}"
            )));
        }
        let mut m = FeatureMatrix::default();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| FeatureError::Schema(format!("row {}: bad {what}", line + 2));
            let key = InstanceKey {
                conversation_id: rec[0].to_string(),
                k: rec[1].parse().map_err(|_| bad("k"))?,
                label: rec[2].parse().map_err(|_| bad("label"))?,
            };
            let mut row = [0.0; FEATURE_DIM];
            for (i, v) in row.iter_mut().enumerate() {
                *v = rec[3 + i].parse().map_err(|_| bad(FEATURE_NAMES[i]))?;
            }
            m.push(key, row);
        }
        Ok(m)
    }
}

/// Feature rows for every branch instance of one tree.
///
/// `relaxation` limits scoring to the paths of the most recent leaves;
/// `None` scores the full prefix.
pub fn extract_tree_features<S: ReplyScorer + ?Sized>(
    tree: &ConversationTree,
    scorer: &mut S,
    relaxation: Option<usize>,
) -> Result<FeatureMatrix, FeatureError> {
    let mut m = FeatureMatrix::default();
    for inst in tree.enumerate_instances() {
        let prefix = tree.prefix(inst.k)?;
        let window = relaxation_window(&prefix, relaxation)?;
        let scores = score_candidates(scorer, &prefix, inst.node, &window)?;
        let new = tree.node(inst.node);
        let fv = assemble_feature_vector(&prefix, &new.author, new.timestamp, &scores, &window)?;
        m.push(InstanceKey::from(&inst), fv.to_row());
    }
    Ok(m)
}

pub fn extract_corpus_features<S: ReplyScorer + ?Sized>(
    corpus: &Corpus,
    scorer: &mut S,
    relaxation: Option<usize>,
) -> Result<FeatureMatrix, FeatureError> {
    let mut m = FeatureMatrix::default();
    for tree in &corpus.trees {
        m.extend(extract_tree_features(tree, scorer, relaxation)?);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let mut m = FeatureMatrix::default();
        let mut row = [0.0; FEATURE_DIM];
        for (i, v) in row.iter_mut().enumerate() {
            *v = (i as f64).sqrt() / 7.0;
        }
        m.push(InstanceKey { conversation_id: "c,1".into(), k: 4, label: 1 }, row);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(FeatureMatrix::read_csv(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn wrong_header_is_schema_error() {
        let csv = "conversation_id,k,label,foo\nc,2,0,1.0\n";
        assert!(matches!(FeatureMatrix::read_csv(csv.as_bytes()), Err(FeatureError::Schema(_))));
    }
}
