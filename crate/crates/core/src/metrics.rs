//! Correctness, accuracy, AUROC of an uncertainty score, and per-question
//! uncertainty shift analysis between two shot counts.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::records::{LabelSpace, QuestionBundle};
use crate::registry::{Named, Registry};
use crate::uq::UncertaintyTriple;

/// Default ΔU threshold in nats.
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredQuestion {
    pub question_id: String,
    pub uncertainty: f64,
    pub correct: bool,
}

fn strip_wrapping(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
}

fn canonical(s: &str) -> String {
    strip_wrapping(s.trim()).to_lowercase()
}

/// Maps a generated answer to a label index by exact match.
///
/// The text is trimmed, stripped of surrounding punctuation and brackets and
/// case-folded. A label whose canonical form equals the result wins;
/// otherwise the first standalone token equal to a label is used.
pub fn canonicalize_answer(text: &str, labels: &LabelSpace) -> Option<usize> {
    let keys: Vec<String> = labels.labels().iter().map(|l| canonical(l)).collect();
    let answer = canonical(text);
    if let Some(i) = keys.iter().position(|k| !k.is_empty() && *k == answer) {
        return Some(i);
    }
    answer
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .find_map(|tok| keys.iter().position(|k| k == tok))
}

/// Picks which uncertainty value a question is scored by.
pub trait UncertaintyScore: Named + Send + Sync {
    fn score(&self, triple: &UncertaintyTriple) -> f64;
}

macro_rules! score_kind {
    ($ty:ident, $name:literal, |$t:ident| $body:expr) => {
        pub struct $ty;
        impl Named for $ty {
            fn name(&self) -> &'static str {
                $name
            }
        }
        impl UncertaintyScore for $ty {
            fn score(&self, $t: &UncertaintyTriple) -> f64 {
                $body
            }
        }
    };
}

score_kind!(TotalScore, "tu", |t| t.tu);
score_kind!(EpistemicScore, "eu", |t| t.eu);
score_kind!(AleatoricScore, "au", |t| t.au);
score_kind!(ConfidenceScore, "conf", |t| 1.0 - t.confidence);

pub fn score_registry() -> Registry<dyn UncertaintyScore> {
    Registry::new("uncertainty score")
        .with(Arc::new(TotalScore) as Arc<dyn UncertaintyScore>)
        .with(Arc::new(EpistemicScore) as Arc<dyn UncertaintyScore>)
        .with(Arc::new(AleatoricScore) as Arc<dyn UncertaintyScore>)
        .with(Arc::new(ConfidenceScore) as Arc<dyn UncertaintyScore>)
}

pub const DEFAULT_SCORE: &str = "tu";

/// Decides whether a question was answered correctly.
pub trait CorrectnessRule: Named + Send + Sync {
    fn is_correct(&self, bundle: &QuestionBundle, triple: &UncertaintyTriple, labels: &LabelSpace) -> bool;
}

/// The aggregate argmax label equals the gold label.
pub struct ArgmaxMatch;

impl Named for ArgmaxMatch {
    fn name(&self) -> &'static str {
        "argmax"
    }
}

impl CorrectnessRule for ArgmaxMatch {
    fn is_correct(&self, bundle: &QuestionBundle, triple: &UncertaintyTriple, _: &LabelSpace) -> bool {
        triple.predicted_label == bundle.gold_label()
    }
}

/// Majority vote over the canonicalized `raw_output` of every beam, lowest
/// label index on ties, compared to the gold label. Falls back to the argmax
/// rule when no beam output parses.
pub struct ExactMatch;

impl Named for ExactMatch {
    fn name(&self) -> &'static str {
        "exact_match"
    }
}

impl CorrectnessRule for ExactMatch {
    fn is_correct(&self, bundle: &QuestionBundle, triple: &UncertaintyTriple, labels: &LabelSpace) -> bool {
        let mut votes = vec![0usize; labels.len()];
        for rec in bundle.records() {
            for beam in &rec.beams {
                if let Some(i) = beam.raw_output.as_deref().and_then(|t| canonicalize_answer(t, labels)) {
                    votes[i] += 1;
                }
            }
        }
        let max = votes.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return ArgmaxMatch.is_correct(bundle, triple, labels);
        }
        votes.iter().position(|&v| v == max) == Some(bundle.gold_label())
    }
}

pub fn correctness_registry() -> Registry<dyn CorrectnessRule> {
    Registry::new("correctness rule")
        .with(Arc::new(ArgmaxMatch) as Arc<dyn CorrectnessRule>)
        .with(Arc::new(ExactMatch) as Arc<dyn CorrectnessRule>)
}

pub const DEFAULT_CORRECTNESS: &str = "argmax";

/// Percentage of correct items.
pub fn accuracy(items: &[ScoredQuestion]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("accuracy over zero questions"));
    }
    let correct = items.iter().filter(|q| q.correct).count();
    Ok(100.0 * correct as f64 / items.len() as f64)
}

/// Probability that a random correct item has strictly lower uncertainty
/// than a random incorrect one, ties counted one half.
///
/// Sorts once and walks tie groups, accumulating twice the concordant-pair
/// count in integers so the result is an exact rational.
pub fn auroc(items: &[ScoredQuestion]) -> Result<f64> {
    if let Some(q) = items.iter().find(|q| !q.uncertainty.is_finite()) {
        return Err(Error::Report(format!(
            "non-finite uncertainty {} for question {:?}",
            q.uncertainty, q.question_id
        )));
    }
    let n_correct = items.iter().filter(|q| q.correct).count();
    let n_incorrect = items.len() - n_correct;
    if n_correct == 0 || n_incorrect == 0 {
        return Err(Error::UndefinedAuroc {
            correct: n_correct,
            incorrect: n_incorrect,
        });
    }
    let mut sorted: Vec<(f64, bool)> = items.iter().map(|q| (q.uncertainty, q.correct)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut twice_concordant: u128 = 0;
    let mut correct_below: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut c, mut w) = (0u128, 0u128);
        // -0.0 and 0.0 compare equal as scores.
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                c += 1;
            } else {
                w += 1;
            }
            j += 1;
        }
        twice_concordant += 2 * w * correct_below + w * c;
        correct_below += c;
        i = j;
    }
    let pairs = 2 * n_correct as u128 * n_incorrect as u128;
    Ok(twice_concordant as f64 / pairs as f64)
}

/// Per-question observation used by [`delta_analysis`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub uncertainty: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaReport {
    pub baseline_k: u64,
    pub target_k: u64,
    pub tau: f64,
    pub n_matched: usize,
    pub pct_decreased: f64,
    pub pct_increased: f64,
    pub pct_unchanged: f64,
    pub delta_acc_decreased: f64,
    pub delta_acc_increased: f64,
    /// Set when the decreased subset is empty and its ΔAcc is a placeholder 0.
    pub decreased_empty: bool,
    pub increased_empty: bool,
}

/// Matches questions by id and compares uncertainty and subset accuracy.
///
/// ΔU = U_target − U_baseline. A question is "decreased" when ΔU < −τ and
/// "increased" when ΔU > τ. ΔAcc of a subset is accuracy of the target run on
/// it minus accuracy of the baseline run on it, in percentage points.
pub fn delta_analysis(
    baseline: &BTreeMap<String, Observation>,
    target: &BTreeMap<String, Observation>,
    tau: f64,
    baseline_k: u64,
    target_k: u64,
) -> Result<DeltaReport> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Report(format!("tau must be finite and nonnegative, got {tau}")));
    }
    let matched: Vec<(&Observation, &Observation)> = baseline
        .iter()
        .filter_map(|(id, b)| target.get(id).map(|t| (b, t)))
        .collect();
    if matched.is_empty() {
        return Err(Error::DisjointRuns);
    }
    let n = matched.len();
    let decreased: Vec<_> = matched
        .iter()
        .filter(|(b, t)| t.uncertainty - b.uncertainty < -tau)
        .collect();
    let increased: Vec<_> = matched
        .iter()
        .filter(|(b, t)| t.uncertainty - b.uncertainty > tau)
        .collect();
    let subset_delta = |subset: &[&(&Observation, &Observation)]| -> f64 {
        if subset.is_empty() {
            return 0.0;
        }
        let tc = subset.iter().filter(|(_, t)| t.correct).count() as f64;
        let bc = subset.iter().filter(|(b, _)| b.correct).count() as f64;
        100.0 * (tc - bc) / subset.len() as f64
    };
    let pct = |k: usize| 100.0 * k as f64 / n as f64;
    Ok(DeltaReport {
        baseline_k,
        target_k,
        tau,
        n_matched: n,
        pct_decreased: pct(decreased.len()),
        pct_increased: pct(increased.len()),
        pct_unchanged: pct(n - decreased.len() - increased.len()),
        delta_acc_decreased: subset_delta(&decreased),
        delta_acc_increased: subset_delta(&increased),
        decreased_empty: decreased.is_empty(),
        increased_empty: increased.is_empty(),
    })
}
