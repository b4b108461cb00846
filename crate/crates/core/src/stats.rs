//! Small statistics helpers used by the harness and the acceptance checks.

/// Median of a slice (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Upper tail `P[X ≥ k]` for `X ∼ Binomial(n, 1/2)`.
pub fn binomial_half_upper_tail(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let mut log_c = 0.0f64;
    let mut total = 0.0;
    // log C(n, i) accumulated incrementally from i = 0.
    for i in 0..=n {
        if i > 0 {
            log_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            total += (log_c - n as f64 * std::f64::consts::LN_2).exp();
        }
    }
    total.min(1.0)
}

/// Result of a paired one-sided sign test.
#[derive(Clone, Debug, PartialEq)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// `P[X ≥ positive]` under the null, `X ∼ Bin(positive + negative, 1/2)`.
    pub p_value: f64,
}

/// One-sided sign test for `a > b` over paired observations; ties dropped.
pub fn sign_test_greater(a: &[f64], b: &[f64]) -> SignTest {
    let (mut pos, mut neg, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        if x > y {
            pos += 1;
        } else if x < y {
            neg += 1;
        } else {
            ties += 1;
        }
    }
    SignTest {
        positive: pos,
        negative: neg,
        ties,
        p_value: binomial_half_upper_tail(pos, pos + neg),
    }
}
