//! Vocabulary projection of exported residual streams.
//!
//! Each residual vector is passed through the head's normalization and the
//! candidate slice of the unembedding matrix, giving one logit per candidate
//! label. A model with `n` layers exports `2n` streams per question: the
//! post-attention stream and the post-block stream of every layer, in that
//! order.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax, log_sum_exp, neumaier, softmax};
use crate::registry::{Named, Registry};

/// Final-stream consistency tolerance used for synthetic fixtures.
pub const FIXTURE_CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionHead {
    pub d: usize,
    pub norm_kind: String,
    pub epsilon: f64,
    pub norm_weight: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_bias: Option<Vec<f64>>,
    pub labels: Vec<String>,
    /// |Y|×d, row-major.
    pub candidate_rows: Vec<f64>,
}

impl ProjectionHead {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Dimension("head: d must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Dimension(format!("head: epsilon must be positive, got {}", self.epsilon)));
        }
        if self.norm_weight.len() != self.d {
            return Err(Error::Dimension(format!(
                "head: norm_weight has {} entries, d = {}",
                self.norm_weight.len(),
                self.d
            )));
        }
        if let Some(b) = &self.norm_bias {
            if b.len() != self.d {
                return Err(Error::Dimension(format!("head: norm_bias has {} entries, d = {}", b.len(), self.d)));
            }
        }
        if self.labels.is_empty() {
            return Err(Error::Dimension("head: labels must not be empty".into()));
        }
        if self.candidate_rows.len() != self.labels.len() * self.d {
            return Err(Error::Dimension(format!(
                "head: candidate_rows has {} entries, expected {} labels × d {} = {}",
                self.candidate_rows.len(),
                self.labels.len(),
                self.d,
                self.labels.len() * self.d
            )));
        }
        let finite = self
            .norm_weight
            .iter()
            .chain(self.norm_bias.iter().flatten())
            .chain(&self.candidate_rows)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Dimension("head: non-finite parameter".into()));
        }
        norm_registry().get(&self.norm_kind)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let head: ProjectionHead =
            serde_json::from_str(text).map_err(|e| Error::Dimension(format!("head: {e}")))?;
        head.validate()?;
        Ok(head)
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    fn candidate_row(&self, label: usize) -> &[f64] {
        &self.candidate_rows[label * self.d..(label + 1) * self.d]
    }
}

/// Normalization applied to a residual vector before unembedding.
pub trait ResidualNorm: Named + Send + Sync {
    fn normalize(&self, r: &[f64], head: &ProjectionHead) -> Vec<f64>;
}

/// `(r − mean) / sqrt(var + ε) ⊙ weight + bias`, population variance.
pub struct StandardNorm;

impl Named for StandardNorm {
    fn name(&self) -> &'static str {
        "standard"
    }
}

impl ResidualNorm for StandardNorm {
    fn normalize(&self, r: &[f64], head: &ProjectionHead) -> Vec<f64> {
        let n = r.len() as f64;
        let mean = neumaier(r) / n;
        let sq: Vec<f64> = r.iter().map(|x| (x - mean) * (x - mean)).collect();
        let inv = 1.0 / (neumaier(&sq) / n + head.epsilon).sqrt();
        r.iter()
            .enumerate()
            .map(|(i, x)| {
                let bias = head.norm_bias.as_ref().map_or(0.0, |b| b[i]);
                (x - mean) * inv * head.norm_weight[i] + bias
            })
            .collect()
    }
}

/// `r / sqrt(mean(r²) + ε) ⊙ weight`.
pub struct RmsNorm;

impl Named for RmsNorm {
    fn name(&self) -> &'static str {
        "rms"
    }
}

impl ResidualNorm for RmsNorm {
    fn normalize(&self, r: &[f64], head: &ProjectionHead) -> Vec<f64> {
        let sq: Vec<f64> = r.iter().map(|x| x * x).collect();
        let inv = 1.0 / (neumaier(&sq) / r.len() as f64 + head.epsilon).sqrt();
        r.iter()
            .zip(&head.norm_weight)
            .map(|(x, w)| x * inv * w)
            .collect()
    }
}

pub fn norm_registry() -> Registry<dyn ResidualNorm> {
    Registry::new("norm kind")
        .with(Arc::new(StandardNorm) as Arc<dyn ResidualNorm>)
        .with(Arc::new(RmsNorm) as Arc<dyn ResidualNorm>)
}

/// Candidate logits of one residual vector.
pub fn project_stream(r: &[f64], head: &ProjectionHead) -> Result<Vec<f64>> {
    if r.len() != head.d {
        return Err(Error::Dimension(format!(
            "residual has {} entries, head expects d = {}",
            r.len(),
            head.d
        )));
    }
    let normed = norm_registry().get(&head.norm_kind)?.normalize(r, head);
    Ok((0..head.num_labels())
        .map(|k| {
            let terms: Vec<f64> = head
                .candidate_row(k)
                .iter()
                .zip(&normed)
                .map(|(w, x)| w * x)
                .collect();
            neumaier(&terms)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Attn,
    Block,
}

impl StreamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Attn => "attn",
            StreamKind::Block => "block",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stream {
    pub stream_kind: StreamKind,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_partition: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualStreamDump {
    pub question_id: String,
    pub n: usize,
    pub streams: Vec<Stream>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_output_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<usize>,
}

impl ResidualStreamDump {
    /// Checks stream count (2n), canonical attn/block alternation, and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.streams.len() != 2 * self.n {
            return Err(Error::Dimension(format!(
                "question {:?}: {} streams for n = {} layers, expected {}",
                self.question_id,
                self.streams.len(),
                self.n,
                2 * self.n
            )));
        }
        for (i, s) in self.streams.iter().enumerate() {
            let expected = if i % 2 == 0 { StreamKind::Attn } else { StreamKind::Block };
            if s.stream_kind != expected {
                return Err(Error::Dimension(format!(
                    "question {:?}: stream {i} is {:?}, expected {:?}",
                    self.question_id, s.stream_kind, expected
                )));
            }
            if s.values.iter().chain(s.log_partition.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Dimension(format!(
                    "question {:?}: stream {i} has non-finite values",
                    self.question_id
                )));
            }
        }
        if let Some(p) = &self.final_output_probs {
            if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Dimension(format!(
                    "question {:?}: invalid final_output_probs",
                    self.question_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("dump serializes")
    }
}

/// Parses a JSON Lines dump file, validating every line.
pub fn parse_dumps<R: BufRead>(reader: R) -> Result<Vec<ResidualStreamDump>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let dump: ResidualStreamDump = serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        dump.validate().map_err(|e| Error::InvalidRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(dump);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMode {
    /// `p = exp(ℓ − log_partition)` against the full vocabulary.
    ExactFullVocab,
    /// Softmax over the candidate logits only.
    RenormalizedCandidates,
}

impl ProbabilityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbabilityMode::ExactFullVocab => "exact_full_vocab",
            ProbabilityMode::RenormalizedCandidates => "renormalized_candidates",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrajectory {
    pub question_id: String,
    pub gold_label: Option<usize>,
    pub kinds: Vec<StreamKind>,
    /// 2n×|Y| candidate logits.
    pub logits: Vec<Vec<f64>>,
    /// 2n×|Y| candidate probabilities.
    pub probs: Vec<Vec<f64>>,
    pub mode: ProbabilityMode,
}

impl LayerTrajectory {
    pub fn final_logits(&self) -> Option<&[f64]> {
        self.logits.last().map(Vec::as_slice)
    }
}

/// Projects every stream. Uses exact probabilities only when every stream
/// carries a `log_partition`.
pub fn trajectory(dump: &ResidualStreamDump, head: &ProjectionHead) -> Result<LayerTrajectory> {
    dump.validate()?;
    let logits = dump
        .streams
        .iter()
        .map(|s| project_stream(&s.values, head))
        .collect::<Result<Vec<_>>>()?;
    let exact = !dump.streams.is_empty() && dump.streams.iter().all(|s| s.log_partition.is_some());
    let (mode, probs) = if exact {
        let probs = logits
            .iter()
            .zip(&dump.streams)
            .map(|(l, s)| {
                let z = s.log_partition.expect("checked above");
                l.iter().map(|x| (x - z).exp()).collect()
            })
            .collect();
        (ProbabilityMode::ExactFullVocab, probs)
    } else {
        (
            ProbabilityMode::RenormalizedCandidates,
            logits.iter().map(|l| softmax(l)).collect(),
        )
    };
    Ok(LayerTrajectory {
        question_id: dump.question_id.clone(),
        gold_label: dump.gold_label,
        kinds: dump.streams.iter().map(|s| s.stream_kind).collect(),
        logits,
        probs,
        mode,
    })
}

/// Max absolute difference between the renormalized final-stream
/// probabilities and the renormalized `final_output_probs`, if present.
pub fn final_stream_consistency(traj: &LayerTrajectory, dump: &ResidualStreamDump) -> Option<f64> {
    let expected = dump.final_output_probs.as_ref()?;
    let last = traj.final_logits()?;
    if expected.len() != last.len() {
        return Some(f64::INFINITY);
    }
    let ours = softmax(last);
    let total = neumaier(expected);
    if total.is_nan() || total <= 0.0 {
        return Some(f64::INFINITY);
    }
    Some(
        ours.iter()
            .zip(expected)
            .map(|(a, b)| (a - b / total).abs())
            .fold(0.0, f64::max),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapStats {
    pub logit_diff: f64,
    pub largest_logit: f64,
    pub top1: usize,
    pub top2: usize,
}

/// Margin between the two largest logits, lowest index on ties.
pub fn gap_stats(logits: &[f64]) -> Result<GapStats> {
    if logits.len() < 2 {
        return Err(Error::Dimension(format!(
            "gap statistics need at least 2 candidates, got {}",
            logits.len()
        )));
    }
    let top1 = argmax(logits).expect("nonempty");
    let mut top2: Option<usize> = None;
    for (i, &v) in logits.iter().enumerate() {
        if i == top1 {
            continue;
        }
        match top2 {
            Some(b) if logits[b] >= v => {}
            _ => top2 = Some(i),
        }
    }
    let top2 = top2.expect("at least two entries");
    Ok(GapStats {
        logit_diff: logits[top1] - logits[top2],
        largest_logit: logits[top1],
        top1,
        top2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAverage {
    pub gold_label: usize,
    pub count: usize,
    pub kinds: Vec<StreamKind>,
    pub mean_logits: Vec<Vec<f64>>,
    pub mean_probs: Vec<Vec<f64>>,
}

/// Elementwise mean of logits and probabilities within each gold-label group.
pub fn group_average(trajectories: &[LayerTrajectory]) -> Result<BTreeMap<usize, GroupAverage>> {
    let first = trajectories.first().ok_or(Error::Empty("trajectories to average"))?;
    let streams = first.logits.len();
    let labels = first.logits.first().map_or(0, Vec::len);
    let mut groups: BTreeMap<usize, Vec<&LayerTrajectory>> = BTreeMap::new();
    for t in trajectories {
        if t.logits.len() != streams || t.logits.iter().chain(&t.probs).any(|r| r.len() != labels) {
            return Err(Error::Dimension(format!(
                "question {:?}: trajectory shape differs from {:?}",
                t.question_id, first.question_id
            )));
        }
        let gold = t.gold_label.ok_or_else(|| {
            Error::Dimension(format!("question {:?}: grouping by gold needs gold_label", t.question_id))
        })?;
        groups.entry(gold).or_default().push(t);
    }
    let mean = |members: &[&LayerTrajectory], pick: fn(&LayerTrajectory) -> &Vec<Vec<f64>>| {
        (0..streams)
            .map(|s| {
                (0..labels)
                    .map(|k| {
                        let xs: Vec<f64> = members.iter().map(|t| pick(t)[s][k]).collect();
                        neumaier(&xs) / members.len() as f64
                    })
                    .collect()
            })
            .collect()
    };
    Ok(groups
        .into_iter()
        .map(|(gold, members)| {
            let avg = GroupAverage {
                gold_label: gold,
                count: members.len(),
                kinds: members[0].kinds.clone(),
                mean_logits: mean(&members, |t| &t.logits),
                mean_probs: mean(&members, |t| &t.probs),
            };
            (gold, avg)
        })
        .collect())
}

/// Exporter-style synthetic fixture: a random head over a `vocab`-sized
/// unembedding whose first `num_labels` rows are the candidates, plus dumps
/// whose `log_partition` and `final_output_probs` are computed against the
/// full vocabulary.
pub fn toy_fixture(
    seed: u64,
    n_layers: usize,
    d: usize,
    num_labels: usize,
    vocab: usize,
    questions: usize,
) -> (ProjectionHead, Vec<ResidualStreamDump>) {
    assert!(vocab >= num_labels && num_labels >= 1 && d >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let unembed: Vec<f64> = (0..vocab * d).map(|_| normal()).collect();
    let norm_weight: Vec<f64> = (0..d).map(|_| 1.0 + 0.1 * normal()).collect();
    let norm_bias: Vec<f64> = (0..d).map(|_| 0.1 * normal()).collect();
    let head = ProjectionHead {
        d,
        norm_kind: "standard".into(),
        epsilon: 1e-5,
        norm_weight,
        norm_bias: Some(norm_bias),
        labels: crate::records::LabelSpace::letters(num_labels).labels().to_vec(),
        candidate_rows: unembed[..num_labels * d].to_vec(),
    };
    let full_head = ProjectionHead {
        labels: (0..vocab).map(|i| format!("t{i}")).collect(),
        candidate_rows: unembed,
        ..head.clone()
    };
    let dumps = (0..questions)
        .map(|q| {
            let mut streams = Vec::with_capacity(2 * n_layers);
            let mut full_last = Vec::new();
            for i in 0..2 * n_layers {
                let values: Vec<f64> = (0..d).map(|_| 2.0 * normal()).collect();
                let full = project_stream(&values, &full_head).expect("dimensions match");
                streams.push(Stream {
                    stream_kind: if i % 2 == 0 { StreamKind::Attn } else { StreamKind::Block },
                    values,
                    log_partition: Some(log_sum_exp(&full)),
                });
                full_last = full;
            }
            let full_probs = softmax(&full_last);
            ResidualStreamDump {
                question_id: format!("q{q}"),
                n: n_layers,
                streams,
                final_output_probs: Some(full_probs[..num_labels].to_vec()),
                gold_label: Some(q % num_labels),
            }
        })
        .collect();
    (head, dumps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_head(d: usize, kind: &str) -> ProjectionHead {
        let mut rows = vec![0.0; d * d];
        for i in 0..d {
            rows[i * d + i] = 1.0;
        }
        ProjectionHead {
            d,
            norm_kind: kind.into(),
            epsilon: 1e-12,
            norm_weight: vec![1.0; d],
            norm_bias: None,
            labels: crate::records::LabelSpace::letters(d).labels().to_vec(),
            candidate_rows: rows,
        }
    }

    #[test]
    fn standard_norm_hand_example() {
        let head = identity_head(2, "standard");
        let l = project_stream(&[1.0, -1.0], &head).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-9 && (l[1] + 1.0).abs() < 1e-9, "{l:?}");
    }

    #[test]
    fn constant_residual_projects_to_bias_only() {
        let mut head = identity_head(3, "standard");
        assert_eq!(project_stream(&[4.0, 4.0, 4.0], &head).unwrap(), vec![0.0, 0.0, 0.0]);
        head.norm_bias = Some(vec![0.5, -1.0, 2.0]);
        assert_eq!(project_stream(&[4.0, 4.0, 4.0], &head).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_candidate_rows_annihilate() {
        let mut head = identity_head(3, "rms");
        head.candidate_rows = vec![0.0; 9];
        assert_eq!(project_stream(&[1.0, 5.0, -2.0], &head).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rms_norm_hand_example() {
        let head = identity_head(2, "rms");
        // mean square of [3, 4] is 12.5
        let l = project_stream(&[3.0, 4.0], &head).unwrap();
        let s = 12.5f64.sqrt();
        assert!((l[0] - 3.0 / s).abs() < 1e-12 && (l[1] - 4.0 / s).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(project_stream(&[1.0], &identity_head(2, "standard")).is_err());
    }

    #[test]
    fn head_validation() {
        let mut head = identity_head(2, "standard");
        head.epsilon = 0.0;
        assert!(head.validate().is_err());
        let mut head = identity_head(2, "layer");
        assert!(head.validate().is_err());
        head.norm_kind = "rms".into();
        head.candidate_rows.pop();
        assert!(head.validate().is_err());
    }

    fn dump(values: Vec<Vec<f64>>, log_partition: Option<f64>) -> ResidualStreamDump {
        ResidualStreamDump {
            question_id: "q".into(),
            n: values.len() / 2,
            streams: values
                .into_iter()
                .enumerate()
                .map(|(i, v)| Stream {
                    stream_kind: if i % 2 == 0 { StreamKind::Attn } else { StreamKind::Block },
                    values: v,
                    log_partition,
                })
                .collect(),
            final_output_probs: None,
            gold_label: Some(0),
        }
    }

    #[test]
    fn trajectory_matches_per_stream_projection() {
        let head = identity_head(3, "standard");
        let d = dump(vec![vec![1.0, 2.0, 4.0], vec![-1.0, 0.0, 3.0]], None);
        let t = trajectory(&d, &head).unwrap();
        assert_eq!(t.logits.len(), 2);
        assert_eq!(t.logits[0], project_stream(&d.streams[0].values, &head).unwrap());
        assert_eq!(t.logits[1], project_stream(&d.streams[1].values, &head).unwrap());
        assert_eq!(t.mode, ProbabilityMode::RenormalizedCandidates);
        for row in &t.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_mode_needs_every_log_partition() {
        let head = identity_head(2, "standard");
        let mut d = dump(vec![vec![1.0, -1.0], vec![2.0, 0.0]], Some(3.0));
        let t = trajectory(&d, &head).unwrap();
        assert_eq!(t.mode, ProbabilityMode::ExactFullVocab);
        assert!((t.probs[0][0] - (t.logits[0][0] - 3.0).exp()).abs() < 1e-15);
        d.streams[1].log_partition = None;
        assert_eq!(trajectory(&d, &head).unwrap().mode, ProbabilityMode::RenormalizedCandidates);
    }

    #[test]
    fn wrong_stream_count_or_order_rejected() {
        let mut d = dump(vec![vec![1.0, 0.0], vec![0.0, 1.0]], None);
        d.n = 2;
        assert!(d.validate().is_err());
        let mut d = dump(vec![vec![1.0, 0.0], vec![0.0, 1.0]], None);
        d.streams.swap(0, 1);
        assert!(d.validate().is_err());
        let text = r#"{"question_id":"q","n":1,"streams":[{"stream_kind":"attn","values":[1,0]}]}"#;
        assert!(parse_dumps(text.as_bytes()).is_err());
    }

    #[test]
    fn gap_stats_examples() {
        let g = gap_stats(&[5.0, 3.0, 1.0]).unwrap();
        assert_eq!((g.logit_diff, g.largest_logit, g.top1, g.top2), (2.0, 5.0, 0, 1));
        let g = gap_stats(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((g.logit_diff, g.top1, g.top2), (0.0, 0, 1));
        let g = gap_stats(&[1.0, 4.0, 4.0]).unwrap();
        assert_eq!((g.top1, g.top2, g.logit_diff), (1, 2, 0.0));
        assert!(gap_stats(&[1.0]).is_err());
    }

    fn traj(logits: Vec<Vec<f64>>, gold: usize) -> LayerTrajectory {
        LayerTrajectory {
            question_id: "q".into(),
            gold_label: Some(gold),
            kinds: vec![StreamKind::Attn, StreamKind::Block],
            probs: logits.iter().map(|l| softmax(l)).collect(),
            logits,
            mode: ProbabilityMode::RenormalizedCandidates,
        }
    }

    #[test]
    fn group_average_examples() {
        let one = traj(vec![vec![1.0, 3.0], vec![0.5, 0.0]], 0);
        let g = group_average(std::slice::from_ref(&one)).unwrap();
        assert_eq!(g[&0].mean_logits, one.logits);

        let a = traj(vec![vec![1.0, 3.0], vec![1.0, 3.0]], 1);
        let b = traj(vec![vec![3.0, 7.0], vec![3.0, 7.0]], 1);
        let g = group_average(&[a, b]).unwrap();
        assert_eq!(g[&1].mean_logits, vec![vec![2.0, 5.0], vec![2.0, 5.0]]);
        assert_eq!(g[&1].count, 2);

        let x = traj(vec![vec![1.5, -2.0], vec![0.25, 4.0]], 0);
        let neg = traj(vec![vec![-1.5, 2.0], vec![-0.25, -4.0]], 0);
        let g = group_average(&[x, neg]).unwrap();
        assert!(g[&0].mean_logits.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn group_average_rejects_mixed_shapes() {
        let a = traj(vec![vec![1.0, 3.0], vec![1.0, 3.0]], 0);
        let b = traj(vec![vec![1.0, 3.0, 0.0], vec![1.0, 3.0, 0.0]], 0);
        assert!(group_average(&[a, b]).is_err());
    }

    #[test]
    fn toy_fixture_is_consistent() {
        let (head, dumps) = toy_fixture(3, 2, 8, 4, 32, 5);
        head.validate().unwrap();
        for d in &dumps {
            let t = trajectory(d, &head).unwrap();
            assert_eq!(t.mode, ProbabilityMode::ExactFullVocab);
            for row in &t.probs {
                assert!(row.iter().sum::<f64>() <= 1.0 + 1e-12);
            }
            assert!(final_stream_consistency(&t, d).unwrap() < FIXTURE_CONSISTENCY_TOL);
        }
    }
}
