//! Run-log data model: manifest, JSON Lines records, per-question bundles.
//!
//! A run is a JSON manifest plus a JSON Lines file holding one
//! [`GenerationRecord`] per (question, demonstration set). Records are
//! grouped into [`QuestionBundle`]s as soon as every set of a question has
//! been seen, so a contiguous file is processed with memory bounded by one
//! question.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered candidate labels. Column order of every downstream matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSpace(Vec<String>);

impl LabelSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Manifest("label_space must not be empty".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Manifest(format!("duplicate label {l:?} in label_space")));
            }
        }
        Ok(Self(labels))
    }

    /// "A", "B", ... for up to 26 labels, then "L26", "L27", ...
    pub fn letters(n: usize) -> Self {
        Self(
            (0..n)
                .map(|i| {
                    if i < 26 {
                        char::from(b'A' + i as u8).to_string()
                    } else {
                        format!("L{i}")
                    }
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.0.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    Beam,
    Sample,
    Greedy,
}

/// Logarithm base for reported entropies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyBase {
    #[default]
    Nat,
    Bit,
}

impl EntropyBase {
    /// Divisor that converts a natural-log quantity into this base.
    pub fn ln_divisor(self) -> f64 {
        match self {
            EntropyBase::Nat => 1.0,
            EntropyBase::Bit => std::f64::consts::LN_2,
        }
    }

    /// log_base(n), the entropy of the uniform distribution on n outcomes.
    pub fn log_of(self, n: usize) -> f64 {
        (n as f64).ln() / self.ln_divisor()
    }
}

impl fmt::Display for EntropyBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropyBase::Nat => "nat",
            EntropyBase::Bit => "bit",
        })
    }
}

impl std::str::FromStr for EntropyBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "nat" => Ok(EntropyBase::Nat),
            "bit" => Ok(EntropyBase::Bit),
            other => Err(Error::UnknownStrategy {
                kind: "entropy base",
                name: other.to_string(),
                available: "nat, bit".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub dataset_id: String,
    pub model_id: String,
    pub shot_count: u64,
    pub num_sets: usize,
    pub beams_per_set: usize,
    pub label_space: LabelSpace,
    pub temperature: f64,
    pub decode_strategy: DecodeStrategy,
    #[serde(default)]
    pub entropy_base: EntropyBase,
    pub schema_version: String,
}

pub const SCHEMA_VERSION: &str = "1";

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_sets == 0 {
            return Err(Error::Manifest("num_sets must be at least 1".into()));
        }
        if self.beams_per_set == 0 {
            return Err(Error::Manifest("beams_per_set must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Manifest(format!(
                "temperature must be finite and nonnegative, got {}",
                self.temperature
            )));
        }
        // Re-run label checks: deserialization bypasses LabelSpace::new.
        LabelSpace::new(self.label_space.0.clone())?;
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.label_space.len()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: RunManifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Pretty JSON followed by a newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamEntry {
    pub beam_rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_score: Option<f64>,
    pub label_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRecord {
    pub question_id: String,
    pub set_index: usize,
    pub gold_label: usize,
    pub beams: Vec<BeamEntry>,
}

impl GenerationRecord {
    /// Checks the record against the manifest's (L, m, |Y|).
    pub fn validate(&self, manifest: &RunManifest, line: usize) -> Result<()> {
        let num_labels = manifest.num_labels();
        if self.set_index >= manifest.num_sets {
            return Err(Error::SetIndexOutOfRange {
                line,
                set_index: self.set_index,
                num_sets: manifest.num_sets,
            });
        }
        if self.gold_label >= num_labels {
            return Err(Error::InvalidRecord {
                line,
                message: format!(
                    "gold_label {} out of range for {} labels",
                    self.gold_label, num_labels
                ),
            });
        }
        if self.beams.len() != manifest.beams_per_set {
            return Err(Error::BeamCountMismatch {
                line,
                expected: manifest.beams_per_set,
                found: self.beams.len(),
            });
        }
        let mut rank_seen = vec![false; self.beams.len()];
        for beam in &self.beams {
            if beam.label_probs.len() != num_labels {
                return Err(Error::LabelCountMismatch {
                    line,
                    expected: num_labels,
                    found: beam.label_probs.len(),
                });
            }
            if beam.beam_rank >= self.beams.len() || rank_seen[beam.beam_rank] {
                return Err(Error::InvalidRecord {
                    line,
                    message: format!(
                        "beam ranks must be a permutation of 0..{}; got rank {}",
                        self.beams.len(),
                        beam.beam_rank
                    ),
                });
            }
            rank_seen[beam.beam_rank] = true;
            if let Some(p) = beam.label_probs.iter().find(|p| !p.is_finite()) {
                return Err(Error::InvalidProbability {
                    line,
                    message: format!("non-finite probability {p}"),
                });
            }
            if let Some(p) = beam.label_probs.iter().find(|p| **p < 0.0) {
                return Err(Error::InvalidProbability {
                    line,
                    message: format!("negative probability {p}"),
                });
            }
            if beam.label_probs.iter().all(|p| *p == 0.0) {
                return Err(Error::InvalidProbability {
                    line,
                    message: format!("beam {} carries no probability mass", beam.beam_rank),
                });
            }
            if let Some(s) = beam.sequence_score {
                if !s.is_finite() {
                    return Err(Error::InvalidRecord {
                        line,
                        message: format!("non-finite sequence_score {s}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// All L records of one question, with an L×m×|Y| tensor indexed by
/// (set_index, beam_rank, label).
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionBundle {
    question_id: String,
    gold_label: usize,
    num_sets: usize,
    beams_per_set: usize,
    num_labels: usize,
    tensor: Vec<f64>,
    scores: Vec<Option<f64>>,
    /// Source records ordered by set_index, beams in file order.
    records: Vec<GenerationRecord>,
}

impl QuestionBundle {
    /// Assembles a bundle from already-validated records, one per set index.
    pub fn from_records(mut records: Vec<GenerationRecord>, manifest: &RunManifest) -> Result<Self> {
        let first = records.first().ok_or(Error::Empty("question bundle"))?;
        let question_id = first.question_id.clone();
        let gold_label = first.gold_label;
        records.sort_by_key(|r| r.set_index);
        let (l, m, y) = (manifest.num_sets, manifest.beams_per_set, manifest.num_labels());
        let present: Vec<usize> = records.iter().map(|r| r.set_index).collect();
        if present != (0..l).collect::<Vec<_>>() {
            let missing = (0..l).filter(|i| !present.contains(i)).collect();
            return Err(Error::MissingSetIndex {
                question_id,
                missing,
            });
        }
        let mut tensor = vec![0.0; l * m * y];
        let mut scores = vec![None; l * m];
        for rec in &records {
            for beam in &rec.beams {
                let base = (rec.set_index * m + beam.beam_rank) * y;
                tensor[base..base + y].copy_from_slice(&beam.label_probs);
                scores[rec.set_index * m + beam.beam_rank] = beam.sequence_score;
            }
        }
        Ok(Self {
            question_id,
            gold_label,
            num_sets: l,
            beams_per_set: m,
            num_labels: y,
            tensor,
            scores,
            records,
        })
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn gold_label(&self) -> usize {
        self.gold_label
    }

    pub fn num_sets(&self) -> usize {
        self.num_sets
    }

    pub fn beams_per_set(&self) -> usize {
        self.beams_per_set
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Probability vector of beam `rank` in set `set`.
    pub fn beam(&self, set: usize, rank: usize) -> &[f64] {
        let base = (set * self.beams_per_set + rank) * self.num_labels;
        &self.tensor[base..base + self.num_labels]
    }

    pub fn sequence_score(&self, set: usize, rank: usize) -> Option<f64> {
        self.scores[set * self.beams_per_set + rank]
    }

    pub fn records(&self) -> &[GenerationRecord] {
        &self.records
    }
}

/// A parsed run: manifest plus its question bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub manifest: RunManifest,
    pub bundles: Vec<QuestionBundle>,
}

impl Run {
    /// Serializes the records file: one line per record, bundles in order.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for b in &self.bundles {
            for r in b.records() {
                out.push_str(&r.to_json_line());
                out.push('\n');
            }
        }
        out
    }

    pub fn write_records<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for b in &self.bundles {
            for r in b.records() {
                writeln!(w, "{}", r.to_json_line())?;
            }
        }
        Ok(())
    }
}

struct Pending {
    first_line: usize,
    records: Vec<GenerationRecord>,
}

/// Streaming reader that yields each question bundle once all of its sets
/// have been read.
pub struct RunReader<'m, R: BufRead> {
    manifest: &'m RunManifest,
    lines: std::io::Lines<R>,
    line_no: usize,
    pending: HashMap<String, Pending>,
    completed: HashSet<String>,
    finished: bool,
}

impl<'m, R: BufRead> RunReader<'m, R> {
    pub fn new(manifest: &'m RunManifest, reader: R) -> Self {
        Self {
            manifest,
            lines: reader.lines(),
            line_no: 0,
            pending: HashMap::new(),
            completed: HashSet::new(),
            finished: false,
        }
    }

    fn accept(&mut self, text: &str) -> Result<Option<QuestionBundle>> {
        let line = self.line_no;
        let record: GenerationRecord =
            serde_json::from_str(text).map_err(|e| Error::MalformedLine {
                line,
                message: e.to_string(),
            })?;
        record.validate(self.manifest, line)?;
        if self.completed.contains(&record.question_id) {
            return Err(Error::DuplicateSetIndex {
                line,
                question_id: record.question_id,
                set_index: record.set_index,
            });
        }
        let entry = self
            .pending
            .entry(record.question_id.clone())
            .or_insert_with(|| Pending {
                first_line: line,
                records: Vec::new(),
            });
        if let Some(prev) = entry.records.first() {
            if prev.gold_label != record.gold_label {
                return Err(Error::InvalidRecord {
                    line,
                    message: format!(
                        "gold_label {} disagrees with {} given earlier for question {:?}",
                        record.gold_label, prev.gold_label, record.question_id
                    ),
                });
            }
        }
        if entry.records.iter().any(|r| r.set_index == record.set_index) {
            return Err(Error::DuplicateSetIndex {
                line,
                question_id: record.question_id,
                set_index: record.set_index,
            });
        }
        entry.records.push(record);
        if entry.records.len() == self.manifest.num_sets {
            let qid = entry.records[0].question_id.clone();
            let done = self.pending.remove(&qid).expect("entry present");
            self.completed.insert(qid);
            return QuestionBundle::from_records(done.records, self.manifest).map(Some);
        }
        Ok(None)
    }

    fn incomplete_error(&mut self) -> Option<Error> {
        let (qid, pending) = self
            .pending
            .iter()
            .min_by_key(|(_, p)| p.first_line)?;
        let present: Vec<usize> = pending.records.iter().map(|r| r.set_index).collect();
        let missing = (0..self.manifest.num_sets)
            .filter(|i| !present.contains(i))
            .collect();
        Some(Error::MissingSetIndex {
            question_id: qid.clone(),
            missing,
        })
    }
}

impl<R: BufRead> Iterator for RunReader<'_, R> {
    type Item = Result<QuestionBundle>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        loop {
            match self.lines.next() {
                None => {
                    self.finished = true;
                    return self.incomplete_error().map(Err);
                }
                Some(Err(e)) => {
                    self.finished = true;
                    return Some(Err(Error::MalformedLine {
                        line: self.line_no + 1,
                        message: e.to_string(),
                    }));
                }
                Some(Ok(text)) => {
                    self.line_no += 1;
                    if text.trim().is_empty() {
                        continue;
                    }
                    match self.accept(&text) {
                        Ok(Some(bundle)) => return Some(Ok(bundle)),
                        Ok(None) => continue,
                        Err(e) => {
                            self.finished = true;
                            return Some(Err(e));
                        }
                    }
                }
            }
        }
    }
}

/// Parses records text against an already-loaded manifest.
pub fn parse_records<R: BufRead>(manifest: &RunManifest, reader: R) -> Result<Vec<QuestionBundle>> {
    RunReader::new(manifest, reader).collect()
}

/// Reads and validates a manifest and its records file.
pub fn parse_run(manifest_path: &Path, records_path: &Path) -> Result<Run> {
    let manifest = RunManifest::read(manifest_path)?;
    let file = File::open(records_path).map_err(|e| Error::io(records_path, e))?;
    let bundles = parse_records(&manifest, BufReader::new(file))?;
    Ok(Run { manifest, bundles })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn manifest(l: usize, m: usize, y: usize) -> RunManifest {
        RunManifest {
            dataset_id: "toy".into(),
            model_id: "none".into(),
            shot_count: 4,
            num_sets: l,
            beams_per_set: m,
            label_space: LabelSpace::letters(y),
            temperature: 0.7,
            decode_strategy: DecodeStrategy::Beam,
            entropy_base: EntropyBase::Nat,
            schema_version: SCHEMA_VERSION.into(),
        }
    }

    fn line(q: &str, set: usize, gold: usize, probs: &[f64]) -> String {
        GenerationRecord {
            question_id: q.into(),
            set_index: set,
            gold_label: gold,
            beams: vec![BeamEntry {
                beam_rank: 0,
                sequence_score: None,
                label_probs: probs.to_vec(),
                raw_output: None,
            }],
        }
        .to_json_line()
    }

    #[test]
    fn two_questions_two_sets() {
        let m = manifest(2, 1, 2);
        let text = [
            line("q1", 0, 0, &[0.8, 0.2]),
            line("q1", 1, 0, &[0.6, 0.4]),
            line("q2", 1, 1, &[0.1, 0.9]),
            line("q2", 0, 1, &[0.3, 0.7]),
        ]
        .join("\n");
        let bundles = parse_records(&m, text.as_bytes()).unwrap();
        assert_eq!(bundles.len(), 2);
        for b in &bundles {
            assert_eq!((b.num_sets(), b.beams_per_set(), b.num_labels()), (2, 1, 2));
        }
        assert_eq!(bundles[1].beam(0, 0), &[0.3, 0.7]);
        assert_eq!(bundles[1].beam(1, 0), &[0.1, 0.9]);
    }

    #[test]
    fn set_index_out_of_range() {
        let m = manifest(2, 1, 2);
        let text = line("q1", 5, 0, &[0.5, 0.5]);
        let err = parse_records(&m, text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::SetIndexOutOfRange { line: 1, set_index: 5, .. }));
        assert!(err.to_string().contains("set index out of range"));
    }

    #[test]
    fn malformed_line_reports_number() {
        let m = manifest(1, 1, 2);
        let text = format!("{}\n{{\"question_id\": \"q2\", \"set_", line("q1", 0, 0, &[1.0, 0.0]));
        let err = parse_records(&m, text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_and_missing_sets() {
        let m = manifest(3, 1, 2);
        let dup = [line("q", 0, 0, &[1.0, 0.0]), line("q", 0, 0, &[1.0, 0.0])].join("\n");
        assert!(matches!(
            parse_records(&m, dup.as_bytes()).unwrap_err(),
            Error::DuplicateSetIndex { line: 2, set_index: 0, .. }
        ));
        let missing = line("q", 1, 0, &[1.0, 0.0]);
        match parse_records(&m, missing.as_bytes()).unwrap_err() {
            Error::MissingSetIndex { missing, .. } => assert_eq!(missing, vec![0, 2]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn label_count_mismatch_names_both_sizes() {
        let m = manifest(1, 1, 3);
        let err = parse_records(&m, line("q", 0, 0, &[0.5, 0.5]).as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "{msg}");
    }

    #[test]
    fn rejects_bad_probabilities() {
        let m = manifest(1, 1, 2);
        let neg = line("q", 0, 0, &[-0.1, 0.5]);
        assert!(matches!(
            parse_records(&m, neg.as_bytes()).unwrap_err(),
            Error::InvalidProbability { .. }
        ));
        let zero = line("q", 0, 0, &[0.0, 0.0]);
        assert!(matches!(
            parse_records(&m, zero.as_bytes()).unwrap_err(),
            Error::InvalidProbability { .. }
        ));
        // JSON cannot carry NaN; overflowing literals are rejected by the parser.
        let huge = r#"{"question_id":"q","set_index":0,"gold_label":0,"beams":[{"beam_rank":0,"label_probs":[1e999,0.1]}]}"#;
        assert!(parse_records(&m, huge.as_bytes()).is_err());
    }

    #[test]
    fn beam_ranks_must_be_a_permutation() {
        let m = manifest(1, 2, 2);
        let rec = r#"{"question_id":"q","set_index":0,"gold_label":0,"beams":[{"beam_rank":0,"label_probs":[1,0]},{"beam_rank":0,"label_probs":[0,1]}]}"#;
        assert!(matches!(
            parse_records(&m, rec.as_bytes()).unwrap_err(),
            Error::InvalidRecord { .. }
        ));
    }

    #[test]
    fn manifest_rejects_unknown_fields_and_bad_sizes() {
        let mut m = manifest(1, 1, 2);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        v["extra"] = 1.into();
        assert!(RunManifest::from_json(&v.to_string()).is_err());
        m.num_sets = 0;
        assert!(RunManifest::from_json(&m.to_json()).is_err());
        let dup = r#"{"dataset_id":"d","model_id":"m","shot_count":1,"num_sets":1,"beams_per_set":1,
            "label_space":["A","A"],"temperature":0.7,"decode_strategy":"beam","schema_version":"1"}"#;
        assert!(RunManifest::from_json(dup).is_err());
    }

    #[test]
    fn entropy_base_defaults_to_nat() {
        let text = r#"{"dataset_id":"d","model_id":"m","shot_count":1,"num_sets":1,"beams_per_set":1,
            "label_space":["A","B"],"temperature":0.7,"decode_strategy":"greedy","schema_version":"1"}"#;
        assert_eq!(RunManifest::from_json(text).unwrap().entropy_base, EntropyBase::Nat);
    }

    #[test]
    fn gold_label_must_agree_across_sets() {
        let m = manifest(2, 1, 2);
        let text = [line("q", 0, 0, &[1.0, 0.0]), line("q", 1, 1, &[1.0, 0.0])].join("\n");
        assert!(parse_records(&m, text.as_bytes()).is_err());
    }
}
