//! Small numeric helpers used across modules.

/// Neumaier-compensated sum; makes reductions insensitive to ordering at the
/// 1e-15 level, which keeps parallel and sequential results in agreement.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Trapezoid-rule running integral of `values` sampled at `times`.
pub fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    assert_eq!(times.len(), values.len());
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for i in 0..times.len() {
        if i > 0 {
            acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        }
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn trapezoid_is_exact_for_linear_integrands() {
        let t = [0.0, 0.5, 1.5, 2.0];
        let f: Vec<f64> = t.iter().map(|x| 3.0 * x + 1.0).collect();
        let acc = cumulative_trapezoid(&t, &f);
        assert!((acc[3] - (1.5 * 4.0 + 2.0)).abs() < 1e-14);
        assert_eq!(acc[0], 0.0);
    }
}
