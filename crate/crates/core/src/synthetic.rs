//! Latent-concept simulator with exactly enumerable ground truth.
//!
//! Every question owns K concept distributions `p(y|β_k)` over the label
//! space. Demonstrations are assumed to be drawn from one true concept `k*`
//! (the sharpest, i.e. lowest-entropy, concept of the question; the gold
//! label is its mode). After N demonstrations the concept posterior is
//!
//! ```text
//! π_N[k] ∝ prior[k] · exp(γ · N · ll[k]),   ll[k] = Σ_y p(y|β_k*) ln p(y|β_k)
//! ```
//!
//! where `ll[k]` is the expected per-demonstration log-likelihood under
//! concept k. By Gibbs' inequality `k*` maximizes `ll`, so larger `γ·N`
//! concentrates the posterior on it.
//!
//! Ground truth follows by enumeration over the K concepts:
//! `tu* = H(Σ_k π[k] p_k)`, `eu* = Σ_k π[k] H(p_k)`, `au* = tu* − eu*`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax, neumaier, stable_sum};
use crate::records::{
    BeamEntry, DecodeStrategy, EntropyBase, GenerationRecord, LabelSpace, QuestionBundle, Run,
    RunManifest, SCHEMA_VERSION,
};
use crate::uq;

/// Protocol defaults: six demonstration sets, ten beams.
pub const DEFAULT_NUM_SETS: usize = 6;
pub const DEFAULT_BEAMS: usize = 10;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
/// Demonstration count whose posterior is frozen in repeated mode.
pub const DEFAULT_REPEATED_BASE: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub num_concepts: usize,
    pub num_labels: usize,
    /// Uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
    pub gamma: f64,
    /// Dirichlet concentration of per-beam noise; absent means noiseless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    pub seed: u64,
    /// Shared by every question when present; otherwise sampled per question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_distributions: Option<Vec<Vec<f64>>>,
}

impl SyntheticTask {
    pub fn new(num_concepts: usize, num_labels: usize, gamma: f64, kappa: Option<f64>, seed: u64) -> Self {
        Self {
            num_concepts,
            num_labels,
            prior: None,
            gamma,
            kappa,
            seed,
            concept_distributions: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let task: SyntheticTask = serde_json::from_str(text).map_err(|e| Error::Task(e.to_string()))?;
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_concepts == 0 {
            return Err(Error::Task("num_concepts must be at least 1".into()));
        }
        if self.num_labels < 2 {
            return Err(Error::Task("num_labels must be at least 2".into()));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(Error::Task(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Task(format!("kappa must be positive and finite, got {k}")));
            }
        }
        if let Some(p) = &self.prior {
            check_simplex(p, self.num_concepts, "prior")?;
        }
        if let Some(rows) = &self.concept_distributions {
            if rows.len() != self.num_concepts {
                return Err(Error::Task(format!(
                    "concept_distributions has {} rows, num_concepts = {}",
                    rows.len(),
                    self.num_concepts
                )));
            }
            for (k, row) in rows.iter().enumerate() {
                check_simplex(row, self.num_labels, &format!("concept_distributions[{k}]"))?;
            }
        }
        Ok(())
    }

    pub fn prior(&self) -> Vec<f64> {
        self.prior
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.num_concepts as f64; self.num_concepts])
    }

    /// Concept model of question `question`, deterministic in (seed, question).
    pub fn concepts(&self, question: usize) -> ConceptModel {
        let distributions = match &self.concept_distributions {
            Some(rows) => rows.clone(),
            None => {
                let mut rng = rng_for(&[self.seed, TAG_CONCEPTS, question as u64]);
                (0..self.num_concepts)
                    .map(|_| {
                        let g: Vec<f64> = (0..self.num_labels).map(|_| Exp1.sample(&mut rng)).collect();
                        let s = neumaier(&g);
                        g.iter().map(|x| x / s).collect()
                    })
                    .collect()
            }
        };
        ConceptModel::new(distributions, self.prior())
    }

    pub fn ground_truth(&self, question: usize, shots: u64) -> GroundTruth {
        let model = self.concepts(question);
        model.ground_truth(&model.posterior(self.gamma, shots))
    }
}

fn check_simplex(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(Error::Task(format!("{what} has {} entries, expected {len}", p.len())));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) || (neumaier(p) - 1.0).abs() > 1e-9 {
        return Err(Error::Task(format!("{what} is not a probability vector")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptModel {
    /// K×|Y|, rows on the simplex.
    pub distributions: Vec<Vec<f64>>,
    pub prior: Vec<f64>,
    pub true_concept: usize,
    pub gold_label: usize,
    /// Expected per-demonstration log-likelihood of each concept.
    pub log_likelihood: Vec<f64>,
}

impl ConceptModel {
    pub fn new(distributions: Vec<Vec<f64>>, prior: Vec<f64>) -> Self {
        let entropies: Vec<f64> = distributions.iter().map(|p| nat_entropy(p)).collect();
        let neg: Vec<f64> = entropies.iter().map(|h| -h).collect();
        let true_concept = argmax(&neg).expect("at least one concept");
        let truth = &distributions[true_concept];
        let gold_label = argmax(truth).expect("at least one label");
        let log_likelihood = distributions
            .iter()
            .map(|p| {
                let terms: Vec<f64> = truth
                    .iter()
                    .zip(p)
                    .filter(|(t, _)| **t > 0.0)
                    .map(|(t, q)| if *q > 0.0 { t * q.ln() } else { f64::NEG_INFINITY })
                    .collect();
                if terms.iter().any(|x| x.is_infinite()) {
                    f64::NEG_INFINITY
                } else {
                    neumaier(&terms)
                }
            })
            .collect();
        Self {
            distributions,
            prior,
            true_concept,
            gold_label,
            log_likelihood,
        }
    }

    /// Concept posterior after `shots` demonstrations at sharpening `gamma`.
    pub fn posterior(&self, gamma: f64, shots: u64) -> Vec<f64> {
        let k = self.prior.len();
        if gamma.is_infinite() && shots > 0 {
            // Limit: prior restricted to the likelihood maximizers.
            let best = self.log_likelihood.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mask: Vec<f64> = (0..k)
                .map(|i| if self.log_likelihood[i] == best { self.prior[i] } else { 0.0 })
                .collect();
            let s = neumaier(&mask);
            return mask.iter().map(|x| x / s).collect();
        }
        let scale = gamma * shots as f64;
        let logw: Vec<f64> = (0..k)
            .map(|i| {
                if self.prior[i] == 0.0 {
                    f64::NEG_INFINITY
                } else if scale == 0.0 {
                    self.prior[i].ln()
                } else {
                    self.prior[i].ln() + scale * self.log_likelihood[i]
                }
            })
            .collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|x| (x - max).exp()).collect();
        let s = neumaier(&w);
        w.iter().map(|x| x / s).collect()
    }

    /// Exact decomposition under concept weights `posterior`.
    pub fn ground_truth(&self, posterior: &[f64]) -> GroundTruth {
        ground_truth_from(&self.distributions, posterior)
    }
}

fn nat_entropy(p: &[f64]) -> f64 {
    let t: Vec<f64> = p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).collect();
    stable_sum(&t).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruth {
    pub tu_star: f64,
    pub eu_star: f64,
    pub au_star: f64,
}

/// Enumerates the mixture `Σ_k π[k] p_k` exactly.
pub fn ground_truth_from(distributions: &[Vec<f64>], posterior: &[f64]) -> GroundTruth {
    let labels = distributions[0].len();
    let mixture: Vec<f64> = (0..labels)
        .map(|y| {
            let t: Vec<f64> = distributions.iter().zip(posterior).map(|(p, w)| w * p[y]).collect();
            neumaier(&t)
        })
        .collect();
    let tu_star = nat_entropy(&mixture);
    let weighted: Vec<f64> = distributions
        .iter()
        .zip(posterior)
        .map(|(p, w)| w * nat_entropy(p))
        .collect();
    let mut eu_star = neumaier(&weighted);
    let mut au_star = tu_star - eu_star;
    if au_star < 0.0 {
        au_star = 0.0;
        eu_star = tu_star;
    }
    GroundTruth {
        tu_star,
        eu_star,
        au_star,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    /// Each set draws its own concept from π_N.
    Distinct,
    /// One concept drawn from π_{N₀} is reused by every set.
    Repeated,
}

impl SimulationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SimulationMode::Distinct => "distinct",
            SimulationMode::Repeated => "repeated",
        }
    }
}

impl std::str::FromStr for SimulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distinct" => Ok(SimulationMode::Distinct),
            "repeated" => Ok(SimulationMode::Repeated),
            other => Err(Error::UnknownStrategy {
                kind: "simulation mode",
                name: other.to_string(),
                available: "distinct, repeated".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub shots: u64,
    pub num_sets: usize,
    pub beams: usize,
    pub mode: SimulationMode,
    pub questions: usize,
    pub repeated_base: u64,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(shots: u64, num_sets: usize, beams: usize, mode: SimulationMode, seed: u64) -> Self {
        Self {
            shots,
            num_sets,
            beams,
            mode,
            questions: 1,
            repeated_base: DEFAULT_REPEATED_BASE,
            seed,
        }
    }

    /// Demonstration count whose posterior the sets are drawn from.
    pub fn effective_shots(&self) -> u64 {
        match self.mode {
            SimulationMode::Distinct => self.shots,
            SimulationMode::Repeated => self.repeated_base,
        }
    }
}

const TAG_CONCEPTS: u64 = 0xC0;
const TAG_SET: u64 = 0x5E;
const TAG_BEAM: u64 = 0xBE;
const TAG_REPEATED: u64 = 0xAE;
const TAG_SWEEP: u64 = 0x5A;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a tuple of coordinates, independent of evaluation order.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x1C10_5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

fn sample_categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn noisy_beam(p: &[f64], kappa: Option<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let Some(kappa) = kappa else {
        return p.to_vec();
    };
    let draws: Vec<f64> = p
        .iter()
        .map(|&pi| {
            if pi > 0.0 {
                Gamma::new(kappa * pi, 1.0).map(|g| g.sample(rng)).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let total = neumaier(&draws);
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|x| x / total).collect()
    } else {
        p.to_vec()
    }
}

/// Simulates one run in the records format.
pub fn simulate_run(task: &SyntheticTask, cfg: &SimulationConfig) -> Result<Run> {
    task.validate()?;
    if cfg.num_sets == 0 || cfg.beams == 0 {
        return Err(Error::Task("num_sets and beams must be at least 1".into()));
    }
    let labels = LabelSpace::letters(task.num_labels);
    let manifest = RunManifest {
        dataset_id: format!("synthetic-{}", cfg.mode.as_str()),
        model_id: "latent-concept-oracle".into(),
        shot_count: cfg.shots,
        num_sets: cfg.num_sets,
        beams_per_set: cfg.beams,
        label_space: labels.clone(),
        temperature: DEFAULT_TEMPERATURE,
        decode_strategy: DecodeStrategy::Beam,
        entropy_base: EntropyBase::Nat,
        schema_version: SCHEMA_VERSION.into(),
    };
    let bundles = (0..cfg.questions)
        .into_par_iter()
        .map(|q| {
            let records = simulate_question(task, cfg, q, &labels);
            QuestionBundle::from_records(records, &manifest)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Run { manifest, bundles })
}

fn simulate_question(task: &SyntheticTask, cfg: &SimulationConfig, q: usize, labels: &LabelSpace) -> Vec<GenerationRecord> {
    let model = task.concepts(q);
    let posterior = model.posterior(task.gamma, cfg.effective_shots());
    let qid = q as u64;
    let fixed = match cfg.mode {
        SimulationMode::Repeated => {
            let u: f64 = rng_for(&[cfg.seed, TAG_REPEATED, qid]).random();
            Some(sample_categorical(&posterior, u))
        }
        SimulationMode::Distinct => None,
    };
    (0..cfg.num_sets)
        .map(|l| {
            let concept = fixed.unwrap_or_else(|| {
                let u: f64 = rng_for(&[cfg.seed, TAG_SET, qid, l as u64]).random();
                sample_categorical(&posterior, u)
            });
            let p = &model.distributions[concept];
            let beams = (0..cfg.beams)
                .map(|b| {
                    let mut rng = rng_for(&[cfg.seed, TAG_BEAM, qid, l as u64, b as u64]);
                    let probs = noisy_beam(p, task.kappa, &mut rng);
                    let top = argmax(&probs).expect("nonempty");
                    BeamEntry {
                        beam_rank: b,
                        sequence_score: Some(probs[top].ln()),
                        raw_output: labels.get(top).map(str::to_string),
                        label_probs: probs,
                    }
                })
                .collect();
            GenerationRecord {
                question_id: format!("q{q:05}"),
                set_index: l,
                gold_label: model.gold_label,
                beams,
            }
        })
        .collect()
}

/// Mean decomposition over a run's questions (mean aggregation, nats).
pub fn estimate(run: &Run) -> Result<(f64, f64, f64)> {
    if run.bundles.is_empty() {
        return Err(Error::Empty("run has no questions"));
    }
    let triples = run
        .bundles
        .iter()
        .map(|b| uq::decompose(b, crate::aggregate::DEFAULT_MODE, EntropyBase::Nat))
        .collect::<Result<Vec<_>>>()?;
    let n = triples.len() as f64;
    let mean = |f: fn(&uq::UncertaintyTriple) -> f64| neumaier(&triples.iter().map(f).collect::<Vec<_>>()) / n;
    Ok((mean(|t| t.tu), mean(|t| t.eu), mean(|t| t.au)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub shots: u64,
    pub mode: SimulationMode,
    pub repeats: usize,
    pub tu_est: f64,
    pub eu_est: f64,
    pub au_est: f64,
    pub tu_se: f64,
    pub eu_se: f64,
    pub au_se: f64,
    pub tu_star: f64,
    pub eu_star: f64,
    pub au_star: f64,
}

impl SweepRow {
    pub fn tu_abs_err(&self) -> f64 {
        (self.tu_est - self.tu_star).abs()
    }
    pub fn eu_abs_err(&self) -> f64 {
        (self.eu_est - self.eu_star).abs()
    }
    pub fn au_abs_err(&self) -> f64 {
        (self.au_est - self.au_star).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub shots: Vec<u64>,
    pub modes: Vec<SimulationMode>,
    pub num_sets: usize,
    pub beams: usize,
    pub repeats: usize,
    pub questions: usize,
    pub repeated_base: u64,
    pub seed: u64,
}

/// Seed of repeat `r` in a sweep seeded with `seed`. Repeat 0 uses `seed`.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(&[seed, TAG_SWEEP, r as u64])
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = neumaier(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (neumaier(&sq) / (n - 1.0)).sqrt() / n.sqrt())
}

/// Runs `repeats` simulations per (N, mode) and summarizes estimate vs truth.
///
/// Repeat r uses the same seed for every N and mode, so rows are paired
/// draws with common random numbers.
pub fn convergence_sweep(task: &SyntheticTask, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.repeats == 0 || cfg.questions == 0 {
        return Err(Error::Task("repeats and questions must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        for &shots in &cfg.shots {
            let sim = |r: usize| SimulationConfig {
                shots,
                num_sets: cfg.num_sets,
                beams: cfg.beams,
                mode,
                questions: cfg.questions,
                repeated_base: cfg.repeated_base,
                seed: repeat_seed(cfg.seed, r),
            };
            let estimates = (0..cfg.repeats)
                .into_par_iter()
                .map(|r| simulate_run(task, &sim(r)).and_then(|run| estimate(&run)))
                .collect::<Result<Vec<_>>>()?;
            let effective = sim(0).effective_shots();
            let truths: Vec<GroundTruth> = (0..cfg.questions).map(|q| task.ground_truth(q, effective)).collect();
            let qn = cfg.questions as f64;
            let star = |f: fn(&GroundTruth) -> f64| neumaier(&truths.iter().map(f).collect::<Vec<_>>()) / qn;
            let (tu_est, tu_se) = mean_se(&estimates.iter().map(|e| e.0).collect::<Vec<_>>());
            let (eu_est, eu_se) = mean_se(&estimates.iter().map(|e| e.1).collect::<Vec<_>>());
            let (au_est, au_se) = mean_se(&estimates.iter().map(|e| e.2).collect::<Vec<_>>());
            rows.push(SweepRow {
                shots,
                mode,
                repeats: cfg.repeats,
                tu_est,
                eu_est,
                au_est,
                tu_se,
                eu_se,
                au_se,
                tu_star: star(|g| g.tu_star),
                eu_star: star(|g| g.eu_star),
                au_star: star(|g| g.au_star),
            });
        }
    }
    Ok(rows)
}
