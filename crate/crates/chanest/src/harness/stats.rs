//! Small statistics helpers for aggregate tables and ordering tests.

/// Arithmetic mean; 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// 95% confidence half-width under the normal approximation,
/// `1.96 * s / sqrt(n)` with the sample standard deviation `s`.
pub fn mean_ci_half_width(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    1.96 * (var / n as f64).sqrt()
}

/// Outcome of a one-sided paired sign test.
#[derive(Debug, Clone, Copy)]
pub struct SignTest {
    /// Pairs with `a < b`.
    pub wins: usize,
    /// Pairs with `a > b`.
    pub losses: usize,
    /// Exactly equal pairs (dropped from the test).
    pub ties: usize,
    /// One-sided p-value for H1: a < b (P of at least `wins` successes in
    /// `wins + losses` fair coin flips).
    pub p_value: f64,
}

impl SignTest {
    /// True when the ordering holds at the 95% level.
    pub fn significant(&self) -> bool {
        self.p_value < 0.05
    }
}

/// Paired one-sided sign test of H1: `a[i] < b[i]` on average. Ties are
/// discarded, as usual for sign tests.
pub fn paired_sign_test_less(a: &[f64], b: &[f64]) -> SignTest {
    assert_eq!(a.len(), b.len(), "sign test needs paired samples");
    let mut wins = 0usize;
    let mut losses = 0usize;
    let mut ties = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            wins += 1;
        } else if x > y {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    SignTest {
        wins,
        losses,
        ties,
        p_value: binomial_tail_ge(wins + losses, wins),
    }
}

/// P(X >= k) for X ~ Binomial(n, 1/2), evaluated in log space so that
/// hundreds of trials do not overflow the binomial coefficients.
pub fn binomial_tail_ge(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln2 = core::f64::consts::LN_2;
    let nf = n as f64;
    let ln_choose =
        |j: f64| libm::lgamma(nf + 1.0) - libm::lgamma(j + 1.0) - libm::lgamma(nf - j + 1.0);
    let mut p = 0.0;
    for j in k..=n {
        p += libm::exp(ln_choose(j as f64) - nf * ln2);
    }
    p.min(1.0)
}
