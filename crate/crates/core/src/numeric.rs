//! Order-independent floating point helpers.

/// Neumaier-compensated sum of `values` taken in ascending order.
///
/// Sorting first makes the result a function of the multiset of inputs, so
/// any permutation of `values` yields the bitwise-identical sum.
pub fn stable_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    neumaier(&sorted)
}

/// Neumaier-compensated sum in the given order.
pub fn neumaier(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Index of the largest entry, lowest index on ties. `None` for empty input.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// log(Σ exp(x_i)), computed around the maximum.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + neumaier(&shifted).ln()
}

/// Softmax over the whole vector.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_sum_ignores_order() {
        let a = [1e16, 1.0, -1e16, 3.5, 0.1];
        let b = [0.1, -1e16, 3.5, 1.0, 1e16];
        assert_eq!(stable_sum(&a).to_bits(), stable_sum(&b).to_bits());
        assert!((stable_sum(&a) - 4.6).abs() < 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), Some(0));
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn softmax_of_two_one_zero() {
        let p = softmax(&[2.0, 1.0, 0.0]);
        let expected = [0.665_240_955_774_821_9, 0.244_728_471_054_797_6, 0.090_030_573_170_380_46];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
