//! Entropy-based total / epistemic / aleatoric decomposition over the
//! aggregated L×|Y| matrix.
//!
//! With `σ` the normalization to the simplex and `H` Shannon entropy:
//!
//! * `TU = H(σ(Σ_l σ(A[l,:])))`
//! * `EU = (1/L) Σ_l H(σ(A[l,:]))`, the mean per-set entropy
//! * `AU = TU − EU`, the plug-in mutual information between the label and
//!   the demonstration-set index
//!
//! Rows are normalized before they are summed, so every set carries equal
//! weight whatever its raw label mass. Without that, AU can be genuinely
//! negative when sets put different total mass on the label space.
//!
//! Note the naming: the mean conditional entropy is reported as EU and the
//! mutual information as AU. [`UncertaintyTriple::mean_set_entropy`] and
//! [`UncertaintyTriple::between_set_mi`] expose the same numbers under
//! convention-neutral names.

use serde::Serialize;

use crate::aggregate::{self, ProbMatrix};
use crate::error::{Error, Result};
use crate::numeric::{argmax, stable_sum};
use crate::records::{EntropyBase, QuestionBundle};

/// Tolerance on Σp = 1 accepted by [`entropy`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Divides `v` by its sum.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    normalize_in(v, "vector")
}

fn normalize_in(v: &[f64], context: &str) -> Result<Vec<f64>> {
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::DegenerateDistribution {
            context: context.to_string(),
            message: format!("non-finite entry {x}"),
        });
    }
    if let Some(x) = v.iter().find(|x| **x < 0.0) {
        return Err(Error::DegenerateDistribution {
            context: context.to_string(),
            message: format!("negative entry {x}"),
        });
    }
    let sum = stable_sum(v);
    if sum.is_nan() || sum <= 0.0 || sum.is_infinite() {
        return Err(Error::DegenerateDistribution {
            context: context.to_string(),
            message: format!("total mass {sum}"),
        });
    }
    Ok(v.iter().map(|x| x / sum).collect())
}

/// Shannon entropy `−Σ p ln p` in the requested base, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64], base: EntropyBase) -> Result<f64> {
    let sum = stable_sum(p);
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::OffSimplex { sum });
    }
    Ok(entropy_unchecked(p) / base.ln_divisor())
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    let terms: Vec<f64> = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .collect();
    stable_sum(&terms).max(0.0)
}

fn normalized_rows(a: &ProbMatrix) -> Result<Vec<Vec<f64>>> {
    a.iter_rows()
        .enumerate()
        .map(|(l, row)| normalize_in(row, &format!("row {l} of A")))
        .collect()
}

/// Aggregate distribution σ(Σ σ(rows)).
pub fn aggregate_distribution(a: &ProbMatrix) -> Result<Vec<f64>> {
    let rows = ProbMatrix::from_rows(&normalized_rows(a)?)?;
    normalize_in(&rows.column_sums(), "column sum of A")
}

pub fn total_uncertainty(a: &ProbMatrix, base: EntropyBase) -> Result<f64> {
    Ok(entropy_unchecked(&aggregate_distribution(a)?) / base.ln_divisor())
}

pub fn epistemic_uncertainty(a: &ProbMatrix, base: EntropyBase) -> Result<f64> {
    let per_row: Vec<f64> = normalized_rows(a)?.iter().map(|r| entropy_unchecked(r)).collect();
    Ok(stable_sum(&per_row) / a.rows() as f64 / base.ln_divisor())
}

/// TU − EU, unclamped.
pub fn aleatoric_uncertainty(a: &ProbMatrix, base: EntropyBase) -> Result<f64> {
    Ok(total_uncertainty(a, base)? - epistemic_uncertainty(a, base)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncertaintyTriple {
    pub tu: f64,
    pub eu: f64,
    pub au: f64,
    pub predicted_label: usize,
    pub confidence: f64,
}

impl UncertaintyTriple {
    /// Decomposes an aggregated matrix.
    ///
    /// `au` is computed as `tu − eu`. When rounding drives it below zero it
    /// is clamped to 0 and `eu` is set to `tu`, so `tu − eu − au == 0` holds
    /// exactly and `eu ≤ tu` on every output.
    pub fn from_matrix(a: &ProbMatrix, base: EntropyBase) -> Result<Self> {
        let aggregate = aggregate_distribution(a)?;
        let tu = entropy_unchecked(&aggregate) / base.ln_divisor();
        let mut eu = epistemic_uncertainty(a, base)?;
        let mut au = tu - eu;
        if au < 0.0 {
            au = 0.0;
            eu = tu;
        }
        let predicted_label = argmax(&aggregate).expect("nonempty distribution");
        Ok(Self {
            tu,
            eu,
            au,
            predicted_label,
            confidence: aggregate[predicted_label],
        })
    }

    /// Alias for `eu`: the mean of the per-set entropies.
    pub fn mean_set_entropy(&self) -> f64 {
        self.eu
    }

    /// Alias for `au`: mutual information between label and set index.
    pub fn between_set_mi(&self) -> f64 {
        self.au
    }
}

/// Aggregates the bundle's beams with `mode` and decomposes the result.
pub fn decompose(bundle: &QuestionBundle, mode: &str, base: EntropyBase) -> Result<UncertaintyTriple> {
    let a = aggregate::aggregate_beams(bundle, mode)?;
    UncertaintyTriple::from_matrix(&a, base).map_err(|e| match e {
        Error::DegenerateDistribution { context, message } => Error::DegenerateDistribution {
            context: format!("question {:?}, {context}", bundle.question_id()),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::EntropyBase::{Bit, Nat};

    // Reference values evaluated with 40-digit arithmetic.
    const H_07_03: f64 = 0.610_864_302_054_893_5;
    const EU_HAND: f64 = 0.586_707_045_273_722_2;
    const AU_HAND: f64 = 0.024_157_256_781_171_305;

    fn m(rows: &[&[f64]]) -> ProbMatrix {
        ProbMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[0.2, 0.2]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(normalize(&[3.0, 1.0, 0.0]).unwrap(), vec![0.75, 0.25, 0.0]);
        assert!(matches!(
            normalize(&[0.0, 0.0]).unwrap_err(),
            Error::DegenerateDistribution { .. }
        ));
        assert!(normalize(&[f64::NAN, 1.0]).is_err());
        assert!(normalize(&[f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0, 0.0], Nat).unwrap(), 0.0);
        assert!((entropy(&[0.25; 4], Nat).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.7, 0.3], Nat).unwrap() - H_07_03).abs() < 1e-15);
        assert!((entropy(&[0.25; 4], Bit).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(entropy(&[0.7, 0.4], Nat).unwrap_err(), Error::OffSimplex { .. }));
    }

    #[test]
    fn hand_matrix() {
        let a = m(&[&[0.8, 0.2], &[0.6, 0.4]]);
        assert!((total_uncertainty(&a, Nat).unwrap() - H_07_03).abs() < 1e-12);
        assert!((epistemic_uncertainty(&a, Nat).unwrap() - EU_HAND).abs() < 1e-12);
        assert!((aleatoric_uncertainty(&a, Nat).unwrap() - AU_HAND).abs() < 1e-12);
        let t = UncertaintyTriple::from_matrix(&a, Nat).unwrap();
        assert_eq!(t.predicted_label, 0);
        assert!((t.confidence - 0.7).abs() < 1e-15);
        assert_eq!(t.tu - t.eu - t.au, 0.0);
        assert_eq!(t.mean_set_entropy(), t.eu);
        assert_eq!(t.between_set_mi(), t.au);
    }

    #[test]
    fn identical_rows() {
        let a = m(&[&[0.1, 0.6, 0.3], &[0.1, 0.6, 0.3], &[0.1, 0.6, 0.3]]);
        let h = entropy(&[0.1, 0.6, 0.3], Nat).unwrap();
        let t = UncertaintyTriple::from_matrix(&a, Nat).unwrap();
        assert!((t.tu - h).abs() < 1e-15);
        assert!(t.au.abs() < 1e-15);
    }

    #[test]
    fn maximal_disagreement() {
        let a = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = UncertaintyTriple::from_matrix(&a, Nat).unwrap();
        assert!((t.tu - 2f64.ln()).abs() < 1e-15);
        assert_eq!(t.eu, 0.0);
        assert!((t.au - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_set_collapses() {
        let a = m(&[&[0.2, 0.5, 0.3]]);
        let t = UncertaintyTriple::from_matrix(&a, Nat).unwrap();
        assert_eq!(t.eu, t.tu);
        assert_eq!(t.au, 0.0);
    }

    #[test]
    fn deterministic_single_row() {
        let t = UncertaintyTriple::from_matrix(&m(&[&[0.0, 0.0, 1.0]]), Nat).unwrap();
        assert_eq!((t.tu, t.eu, t.au, t.predicted_label, t.confidence), (0.0, 0.0, 0.0, 2, 1.0));
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let t = UncertaintyTriple::from_matrix(&m(&[&[0.5, 0.5]]), Nat).unwrap();
        assert_eq!(t.predicted_label, 0);
    }

    #[test]
    fn degenerate_row_names_it() {
        let err = epistemic_uncertainty(&m(&[&[0.5, 0.5], &[0.0, 0.0]]), Nat).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn sets_weigh_equally_regardless_of_mass() {
        let raw = UncertaintyTriple::from_matrix(&m(&[&[0.4, 0.1], &[0.6, 0.4]]), Nat).unwrap();
        let unit = UncertaintyTriple::from_matrix(&m(&[&[0.8, 0.2], &[0.6, 0.4]]), Nat).unwrap();
        assert!((raw.tu - unit.tu).abs() < 1e-15 && (raw.eu - unit.eu).abs() < 1e-15);
        assert!(raw.au > 0.0);
    }
}
