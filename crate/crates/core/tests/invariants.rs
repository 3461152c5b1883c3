use iclq_core::aggregate::{aggregate_beams, ProbMatrix};
use iclq_core::metrics::{auroc, ScoredQuestion};
use iclq_core::records::{parse_records, Run};
use iclq_core::{
    BeamEntry, DecodeStrategy, EntropyBase, GenerationRecord, LabelSpace, QuestionBundle, RunManifest,
    UncertaintyTriple,
};
use proptest::prelude::*;

fn manifest(l: usize, m: usize, y: usize) -> RunManifest {
    RunManifest {
        dataset_id: "prop".into(),
        model_id: "prop".into(),
        shot_count: 4,
        num_sets: l,
        beams_per_set: m,
        label_space: LabelSpace::letters(y),
        temperature: 0.7,
        decode_strategy: DecodeStrategy::Beam,
        entropy_base: EntropyBase::Nat,
        schema_version: "1".into(),
    }
}

/// L×m×|Y| beam tensor with occasional exact zeros; no beam is all zero.
fn tensor() -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    (1usize..=16, 1usize..=12, 2usize..=8).prop_flat_map(|(l, m, y)| {
        let cell = prop_oneof![1 => Just(0.0), 6 => 1e-6f64..1.0];
        let beam = proptest::collection::vec(cell, y).prop_map(|mut v| {
            if v.iter().all(|&x| x == 0.0) {
                v[0] = 1.0;
            }
            v
        });
        proptest::collection::vec(proptest::collection::vec(beam, m), l)
    })
}

fn records(t: &[Vec<Vec<f64>>], qid: &str) -> Vec<GenerationRecord> {
    t.iter()
        .enumerate()
        .map(|(set, beams)| GenerationRecord {
            question_id: qid.into(),
            set_index: set,
            gold_label: 0,
            beams: beams
                .iter()
                .enumerate()
                .map(|(rank, p)| BeamEntry {
                    beam_rank: rank,
                    sequence_score: Some(-(rank as f64)),
                    label_probs: p.clone(),
                    raw_output: None,
                })
                .collect(),
        })
        .collect()
}

fn bundle(t: &[Vec<Vec<f64>>]) -> QuestionBundle {
    let m = manifest(t.len(), t[0].len(), t[0][0].len());
    QuestionBundle::from_records(records(t, "q"), &m).unwrap()
}

fn decompose(t: &[Vec<Vec<f64>>]) -> UncertaintyTriple {
    iclq_core::uq::decompose(&bundle(t), "mean", EntropyBase::Nat).unwrap()
}

fn triple_of(rows: &[Vec<f64>]) -> UncertaintyTriple {
    UncertaintyTriple::from_matrix(&ProbMatrix::from_rows(rows).unwrap(), EntropyBase::Nat).unwrap()
}

fn rows_of(t: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    aggregate_beams(&bundle(t), "mean").unwrap().to_rows()
}

fn close(a: &UncertaintyTriple, b: &UncertaintyTriple, tol: f64) -> bool {
    (a.tu - b.tu).abs() <= tol && (a.eu - b.eu).abs() <= tol && (a.au - b.au).abs() <= tol
}

fn rotate<T: Clone>(v: &[T], by: usize) -> Vec<T> {
    let mut v = v.to_vec();
    let n = v.len();
    v.rotate_left(by % n);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn identity_and_bounds(t in tensor()) {
        let y = t[0][0].len();
        let u = decompose(&t);
        prop_assert_eq!(u.tu - u.eu - u.au, 0.0);
        prop_assert!(u.au >= -1e-12);
        prop_assert!(u.eu >= 0.0);
        prop_assert!(u.eu <= u.tu);
        prop_assert!(u.tu <= (y as f64).ln() + 1e-12);
    }

    #[test]
    fn set_order_is_irrelevant(t in tensor(), by in 0usize..16) {
        prop_assert_eq!(decompose(&t), decompose(&rotate(&t, by)));
    }

    #[test]
    fn beam_order_is_irrelevant(t in tensor(), by in 0usize..12) {
        let shuffled: Vec<_> = t.iter().map(|set| rotate(set, by)).collect();
        prop_assert_eq!(decompose(&t), decompose(&shuffled));
    }

    #[test]
    fn label_permutation_is_equivariant(t in tensor(), by in 1usize..8) {
        let rows = rows_of(&t);
        let y = rows[0].len();
        let perm: Vec<Vec<f64>> = rows.iter().map(|r| rotate(r, by)).collect();
        let a = triple_of(&rows);
        let b = triple_of(&perm);
        prop_assert_eq!((a.tu, a.eu, a.au), (b.tu, b.eu, b.au));
        // column j of `perm` is column (j + by) mod y of `rows`
        let mapped = (b.predicted_label + by) % y;
        let agg = iclq_core::uq::aggregate_distribution(&ProbMatrix::from_rows(&rows).unwrap()).unwrap();
        prop_assert_eq!(agg[mapped], agg[a.predicted_label]);
        let ties = agg.iter().filter(|&&p| p == agg[a.predicted_label]).count();
        if ties == 1 {
            prop_assert_eq!(mapped, a.predicted_label);
        }
    }

    #[test]
    fn single_row_scale_leaves_eu(t in tensor(), row in 0usize..16, c in 1e-3f64..1e3) {
        let rows = rows_of(&t);
        let mut scaled = rows.clone();
        let i = row % rows.len();
        scaled[i].iter_mut().for_each(|x| *x *= c);
        let (a, b) = (triple_of(&rows).eu, triple_of(&scaled).eu);
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn global_scale_leaves_everything(t in tensor(), c in 1e-3f64..1e3, k in -20i32..20) {
        let rows = rows_of(&t);
        let base = triple_of(&rows);
        let scale = |f: f64| rows.iter().map(|r| r.iter().map(|x| x * f).collect()).collect::<Vec<Vec<f64>>>();
        prop_assert!(close(&base, &triple_of(&scale(c)), 1e-12));
        // powers of two scale without rounding
        prop_assert_eq!(base, triple_of(&scale(2f64.powi(k))));
    }

    #[test]
    fn records_round_trip(t in tensor()) {
        let m = manifest(t.len(), t[0].len(), t[0][0].len());
        let mut recs = records(&t, "q1");
        recs.extend(records(&t, "q0"));
        let text: String = recs.iter().map(|r| r.to_json_line() + "\n").collect();
        let bundles = parse_records(&m, text.as_bytes()).unwrap();
        let run = Run { manifest: m.clone(), bundles };
        prop_assert_eq!(run.records_jsonl(), text);
        let m2 = RunManifest::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(m2, m);
    }

    #[test]
    fn auroc_transform_and_negation(
        items in proptest::collection::vec((0u8..20, any::<bool>()), 2..120),
    ) {
        let qs = |f: &dyn Fn(f64) -> f64| -> Vec<ScoredQuestion> {
            items.iter().enumerate().map(|(i, &(u, c))| ScoredQuestion {
                question_id: i.to_string(),
                uncertainty: f(u as f64),
                correct: c,
            }).collect()
        };
        let base = auroc(&qs(&|u| u));
        let both = items.iter().any(|x| x.1) && items.iter().any(|x| !x.1);
        prop_assert_eq!(base.is_ok(), both);
        if let Ok(a) = base {
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(auroc(&qs(&|u| (u * 0.3).exp() + 7.0)).unwrap(), a);
            prop_assert_eq!(auroc(&qs(&|u| u.powi(3))).unwrap(), a);
            prop_assert!((auroc(&qs(&|u| -u)).unwrap() - (1.0 - a)).abs() <= 1e-15);
        }
    }
}

#[test]
fn hand_matrix() {
    let u = triple_of(&[vec![0.8, 0.2], vec![0.6, 0.4]]);
    assert!((u.tu - 0.610_864_302_054_893_5).abs() < 1e-12);
    assert!((u.eu - 0.586_707_045_273_722_2).abs() < 1e-12);
    assert!((u.au - 0.024_157_256_781_171_31).abs() < 1e-12);
    assert_eq!(u.predicted_label, 0);
    let bits = UncertaintyTriple::from_matrix(
        &ProbMatrix::from_rows(&[vec![0.8, 0.2], vec![0.6, 0.4]]).unwrap(),
        EntropyBase::Bit,
    )
    .unwrap();
    assert!((bits.tu - 0.610_864_302_054_893_5 / std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn uniform_rows_hit_the_upper_bound() {
    let u = triple_of(&[vec![0.25; 4], vec![1.0; 4]]);
    assert!((u.tu - 4f64.ln()).abs() < 1e-15);
    assert_eq!(u.au, 0.0);
}
