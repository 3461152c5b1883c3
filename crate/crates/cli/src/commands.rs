use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use iclq_core::lens::{self, LayerTrajectory, ProjectionHead, ResidualStreamDump};
use iclq_core::metrics::{self, CorrectnessRule, Observation, ScoredQuestion, UncertaintyScore};
use iclq_core::numeric::stable_sum;
use iclq_core::records::{parse_run, Run};
use iclq_core::report::{
    histogram_counts, write_table, AurocRow, CsvRow, DeltaRow, Fixed, GapStatsRow, GapSummaryRow, HistogramRow,
    QuestionRow, ReportRow, SweepCsvRow, TrajectoryTable,
};
use iclq_core::synthetic::{self, SimulationConfig, SimulationMode, SweepConfig, SyntheticTask};
use iclq_core::{aggregate, uq, UncertaintyTriple};
use rayon::prelude::*;

use crate::output::write_atomic;
use crate::settings::Settings;

/// Bins in the TU histogram.
pub const HISTOGRAM_BINS: usize = 20;

pub struct Evaluated {
    pub question_id: String,
    pub triple: UncertaintyTriple,
    pub correct: bool,
}

fn load_run(manifest: &Path, records: &Path) -> anyhow::Result<Run> {
    parse_run(manifest, records).with_context(|| format!("reading run {} + {}", manifest.display(), records.display()))
}

fn mean(xs: &[f64]) -> f64 {
    stable_sum(xs) / xs.len() as f64
}

pub fn evaluate(run: &Run, settings: &Settings, rule: &dyn CorrectnessRule) -> anyhow::Result<Vec<Evaluated>> {
    aggregate::registry().get(&settings.mode)?;
    if run.bundles.is_empty() {
        bail!("run {}/{} has no questions", run.manifest.dataset_id, run.manifest.model_id);
    }
    let labels = &run.manifest.label_space;
    let out = run
        .bundles
        .par_iter()
        .map(|b| {
            let triple = uq::decompose(b, &settings.mode, settings.base)?;
            Ok(Evaluated {
                question_id: b.question_id().to_string(),
                correct: rule.is_correct(b, &triple, labels),
                triple,
            })
        })
        .collect::<iclq_core::Result<Vec<_>>>()?;
    Ok(out)
}

fn scored(evals: &[Evaluated], score: &dyn UncertaintyScore) -> Vec<ScoredQuestion> {
    evals
        .iter()
        .map(|e| ScoredQuestion {
            question_id: e.question_id.clone(),
            uncertainty: score.score(&e.triple),
            correct: e.correct,
        })
        .collect()
}

fn print_or_write(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn validate(manifest: &Path, records: &Path) -> anyhow::Result<()> {
    let run = load_run(manifest, records)?;
    let m = &run.manifest;
    println!(
        "ok: {} questions, {} sets x {} beams, {} labels",
        run.bundles.len(),
        m.num_sets,
        m.beams_per_set,
        m.num_labels()
    );
    Ok(())
}

pub fn uq(runs: &[PathBuf], out: &Path, correctness: &str, score: &str, settings: &Settings) -> anyhow::Result<()> {
    let rule = metrics::correctness_registry().get(correctness)?;
    let score = metrics::score_registry().get(score)?;
    let mut questions = Vec::new();
    let mut summary = Vec::new();
    let mut hist = Vec::new();
    for pair in runs.chunks(2) {
        let run = load_run(&pair[0], &pair[1])?;
        let m = &run.manifest;
        let evals = evaluate(&run, settings, rule.as_ref())?;
        for e in &evals {
            questions.push(QuestionRow {
                dataset: m.dataset_id.clone(),
                model: m.model_id.clone(),
                k: m.shot_count,
                question_id: e.question_id.clone(),
                tu: Fixed::computed(e.triple.tu),
                eu: Fixed::computed(e.triple.eu),
                au: Fixed::computed(e.triple.au),
                predicted: m.label_space.labels()[e.triple.predicted_label].clone(),
                confidence: Fixed::computed(e.triple.confidence),
                correct: e.correct,
            });
        }
        let items = scored(&evals, score.as_ref());
        let auroc = match metrics::auroc(&items) {
            Ok(a) => Some(Fixed::computed(a)),
            Err(e @ iclq_core::Error::UndefinedAuroc { .. }) => {
                eprintln!("warning: {}/{}/k={}: {e}", m.dataset_id, m.model_id, m.shot_count);
                None
            }
            Err(e) => return Err(e.into()),
        };
        let tus: Vec<f64> = evals.iter().map(|e| e.triple.tu).collect();
        let row = ReportRow {
            dataset: m.dataset_id.clone(),
            model: m.model_id.clone(),
            k: m.shot_count,
            n_questions: Some(evals.len()),
            tu: Fixed::computed(mean(&tus)),
            eu: Fixed::computed(mean(&evals.iter().map(|e| e.triple.eu).collect::<Vec<_>>())),
            au: Fixed::computed(mean(&evals.iter().map(|e| e.triple.au).collect::<Vec<_>>())),
            acc: Fixed::computed(metrics::accuracy(&items)?),
            auroc,
            tau: None,
            pct_decreased: None,
            pct_increased: None,
            delta_acc_decreased: None,
            delta_acc_increased: None,
        };
        row.validate()?;
        summary.push(row);
        let upper = settings.base.log_of(m.num_labels());
        for (bin, (lo, hi, count)) in histogram_counts(&tus, upper, HISTOGRAM_BINS).into_iter().enumerate() {
            hist.push(HistogramRow {
                dataset: m.dataset_id.clone(),
                model: m.model_id.clone(),
                k: m.shot_count,
                bin,
                lo: Fixed::computed(lo),
                hi: Fixed::computed(hi),
                count,
            });
        }
    }
    let summary_csv = write_table(&summary)?;
    write_atomic(&out.join("questions.csv"), write_table(&questions)?.as_bytes())?;
    write_atomic(&out.join("summary.csv"), summary_csv.as_bytes())?;
    write_atomic(&out.join("tu_histogram.csv"), write_table(&hist)?.as_bytes())?;
    print!("{summary_csv}");
    Ok(())
}

pub fn auroc(
    manifest: &Path,
    records: &Path,
    score_name: &str,
    correctness: &str,
    out: Option<&Path>,
    settings: &Settings,
) -> anyhow::Result<()> {
    let rule = metrics::correctness_registry().get(correctness)?;
    let score = metrics::score_registry().get(score_name)?;
    let run = load_run(manifest, records)?;
    let evals = evaluate(&run, settings, rule.as_ref())?;
    let value = metrics::auroc(&scored(&evals, score.as_ref()))?;
    let m = &run.manifest;
    let row = AurocRow {
        dataset: m.dataset_id.clone(),
        model: m.model_id.clone(),
        k: m.shot_count,
        score: score.name().to_string(),
        n_questions: Some(evals.len()),
        auroc: Fixed::computed(value),
    };
    print_or_write(&write_table(&[row])?, out)
}

fn observations(
    run: &Run,
    settings: &Settings,
    rule: &dyn CorrectnessRule,
    score: &dyn UncertaintyScore,
) -> anyhow::Result<BTreeMap<String, Observation>> {
    Ok(evaluate(run, settings, rule)?
        .into_iter()
        .map(|e| {
            let obs = Observation {
                uncertainty: score.score(&e.triple),
                correct: e.correct,
            };
            (e.question_id, obs)
        })
        .collect())
}

pub fn delta(
    baseline: &[PathBuf],
    target: &[PathBuf],
    score_name: &str,
    correctness: &str,
    out: Option<&Path>,
    settings: &Settings,
) -> anyhow::Result<()> {
    let rule = metrics::correctness_registry().get(correctness)?;
    let score = metrics::score_registry().get(score_name)?;
    let base_run = load_run(&baseline[0], &baseline[1])?;
    let target_run = load_run(&target[0], &target[1])?;
    let b = observations(&base_run, settings, rule.as_ref(), score.as_ref())?;
    let t = observations(&target_run, settings, rule.as_ref(), score.as_ref())?;
    let report = metrics::delta_analysis(
        &b,
        &t,
        settings.tau,
        base_run.manifest.shot_count,
        target_run.manifest.shot_count,
    )?;
    print_or_write(&write_table(&[DeltaRow::from_report(score.name(), &report)])?, out)
}

pub struct LensArgs<'a> {
    pub dump: &'a Path,
    pub head: &'a Path,
    pub out: &'a Path,
    pub group_by_gold: bool,
    pub dataset: &'a str,
    pub model: &'a str,
    pub k: Option<u64>,
    pub consistency_tol: f64,
}

pub fn lens(a: &LensArgs<'_>) -> anyhow::Result<()> {
    let head_text = std::fs::read_to_string(a.head).with_context(|| format!("reading {}", a.head.display()))?;
    let head = ProjectionHead::from_json(&head_text).with_context(|| format!("in {}", a.head.display()))?;
    let file = File::open(a.dump).with_context(|| format!("opening {}", a.dump.display()))?;
    let dumps = lens::parse_dumps(BufReader::new(file)).with_context(|| format!("in {}", a.dump.display()))?;
    if dumps.is_empty() {
        bail!("{} contains no dumps", a.dump.display());
    }
    let trajs = dumps
        .par_iter()
        .map(|d| lens::trajectory(d, &head))
        .collect::<iclq_core::Result<Vec<LayerTrajectory>>>()?;

    let gaps = gap_rows(&head, &dumps, &trajs, a.consistency_tol)?;
    let bad: Vec<&str> = gaps
        .iter()
        .filter(|g| g.consistent == Some(false))
        .map(|g| g.question_id.as_str())
        .collect();
    if !bad.is_empty() {
        eprintln!(
            "warning: final-stream probabilities differ from final_output_probs by more than {} for {} question(s), first {:?}",
            a.consistency_tol,
            bad.len(),
            bad[0]
        );
    }
    let summary = GapSummaryRow {
        dataset: a.dataset.to_string(),
        model: a.model.to_string(),
        k: a.k,
        n_questions: Some(gaps.len()),
        logit_diff: Fixed::computed(mean(&gaps.iter().map(|g| g.logit_diff.value).collect::<Vec<_>>())),
        largest_logit: Fixed::computed(mean(&gaps.iter().map(|g| g.largest_logit.value).collect::<Vec<_>>())),
    };

    let table = TrajectoryTable::from_trajectories(&head.labels, &trajs);
    write_atomic(&a.out.join("trajectory.csv"), table.to_csv()?.as_bytes())?;
    write_atomic(&a.out.join("gaps.csv"), write_table(&gaps)?.as_bytes())?;
    write_atomic(&a.out.join("gap_summary.csv"), write_table(std::slice::from_ref(&summary))?.as_bytes())?;
    if a.group_by_gold {
        for (gold, g) in lens::group_average(&trajs)? {
            let modes: Vec<&str> = trajs
                .iter()
                .filter(|t| t.gold_label == Some(gold))
                .map(|t| t.mode.as_str())
                .collect();
            let mode = if modes.iter().all(|m| *m == modes[0]) { modes[0] } else { "mixed" };
            let table = TrajectoryTable::from_group(&head.labels, mode, &g);
            write_atomic(&a.out.join(format!("group_{gold}.csv")), table.to_csv()?.as_bytes())?;
        }
    }
    println!("{}", summary.display());
    Ok(())
}

fn gap_rows(
    head: &ProjectionHead,
    dumps: &[ResidualStreamDump],
    trajs: &[LayerTrajectory],
    tol: f64,
) -> anyhow::Result<Vec<GapStatsRow>> {
    dumps
        .iter()
        .zip(trajs)
        .map(|(d, t)| {
            let last = t.final_logits().context("dump has no streams")?;
            let g = lens::gap_stats(last)?;
            let gold = d.gold_label.and_then(|i| head.labels.get(i)).map(String::as_str);
            let consistency = lens::final_stream_consistency(t, d).map(|e| (e, tol));
            Ok(GapStatsRow::new(&d.question_id, gold, &head.labels, &g, consistency))
        })
        .collect()
}

pub struct SimulateArgs<'a> {
    pub task: &'a Path,
    pub shots: &'a [u64],
    pub num_sets: usize,
    pub beams: usize,
    pub mode: SimulationMode,
    pub repeats: usize,
    pub questions: usize,
    pub repeated_base: u64,
    pub seed: u64,
    pub out: &'a Path,
}

pub fn simulate(a: &SimulateArgs<'_>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(a.task).with_context(|| format!("reading {}", a.task.display()))?;
    let task = SyntheticTask::from_json(&text).with_context(|| format!("in {}", a.task.display()))?;
    if a.shots.is_empty() {
        bail!("--N needs at least one shot count");
    }
    for &shots in a.shots {
        let cfg = SimulationConfig {
            shots,
            num_sets: a.num_sets,
            beams: a.beams,
            mode: a.mode,
            questions: a.questions,
            repeated_base: a.repeated_base,
            seed: a.seed,
        };
        let run = synthetic::simulate_run(&task, &cfg)?;
        let dir = a.out.join(format!("n{shots}"));
        write_atomic(&dir.join("manifest.json"), run.manifest.to_json().as_bytes())?;
        write_atomic(&dir.join("records.jsonl"), run.records_jsonl().as_bytes())?;
    }
    let sweep = synthetic::convergence_sweep(
        &task,
        &SweepConfig {
            shots: a.shots.to_vec(),
            modes: vec![a.mode],
            num_sets: a.num_sets,
            beams: a.beams,
            repeats: a.repeats,
            questions: a.questions,
            repeated_base: a.repeated_base,
            seed: a.seed,
        },
    )?;
    let rows: Vec<SweepCsvRow> = sweep.iter().map(SweepCsvRow::from).collect();
    let csv = write_table(&rows)?;
    write_atomic(&a.out.join("sweep.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn reemit<R: CsvRow>(text: &str) -> anyhow::Result<String> {
    let rows = iclq_core::report::read_table::<R>(text)?;
    Ok(write_table(&rows)?)
}

/// Parses any table this tool writes and prints it back in canonical form.
pub fn report(input: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let first = text.lines().next().unwrap_or_default();
    let is = |h: Vec<String>| first == h.join(",");
    let canonical = if is(ReportRow::header()) {
        reemit::<ReportRow>(&text)
    } else if is(QuestionRow::header()) {
        reemit::<QuestionRow>(&text)
    } else if is(AurocRow::header()) {
        reemit::<AurocRow>(&text)
    } else if is(DeltaRow::header()) {
        reemit::<DeltaRow>(&text)
    } else if is(GapSummaryRow::header()) {
        reemit::<GapSummaryRow>(&text)
    } else if is(GapStatsRow::header()) {
        reemit::<GapStatsRow>(&text)
    } else if is(HistogramRow::header()) {
        reemit::<HistogramRow>(&text)
    } else if is(SweepCsvRow::header()) {
        reemit::<SweepCsvRow>(&text)
    } else if first.starts_with("question_id,stream_index,") || first.starts_with("gold_label,count,stream_index,") {
        Ok(TrajectoryTable::from_csv(&text)?.to_csv()?)
    } else {
        bail!("{}: unrecognized table header {first:?}", input.display())
    }
    .with_context(|| format!("in {}", input.display()))?;
    print_or_write(&canonical, out)
}
