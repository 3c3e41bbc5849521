//! Monte-Carlo comparison helpers shared by the verification suites and the
//! `verify-bounds` command.

/// Outcome of comparing an empirical count against an analytic probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub name: String,
    pub analytic: f64,
    pub empirical: f64,
    pub sigma: f64,
    pub pass: bool,
}

/// Binomial standard deviation of an empirical rate over `trials` draws.
pub fn mc_sigma(p: f64, trials: u64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Checks `|successes/trials - p| <= 3 sigma`, with a one-count continuity
/// slack so near-zero probabilities do not fail on a single stray event.
pub fn within_three_sigma(name: &str, successes: u64, trials: u64, analytic: f64) -> BoundCheck {
    let empirical = successes as f64 / trials as f64;
    let sigma = mc_sigma(analytic, trials);
    let slack = 3.0 * sigma + 3.0 / trials as f64;
    BoundCheck {
        name: name.to_string(),
        analytic,
        empirical,
        sigma,
        pass: (empirical - analytic).abs() <= slack,
    }
}

/// One-sided variant: the empirical rate must not exceed `bound` by more
/// than the Monte-Carlo margin.
pub fn below_bound(name: &str, successes: u64, trials: u64, bound: f64) -> BoundCheck {
    let empirical = successes as f64 / trials as f64;
    let sigma = mc_sigma(bound, trials);
    BoundCheck {
        name: name.to_string(),
        analytic: bound,
        empirical,
        sigma,
        pass: empirical <= bound + 3.0 * sigma + 3.0 / trials as f64,
    }
}

/// Exact binomial tail `P[X >= k]` for `X ~ Binomial(n, p)`; used as an
/// oracle for small cases.
pub fn binomial_tail_ge(n: u64, p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    // log-space product to stay stable for the sizes used here.
    for i in k..=n {
        let mut log_term = 0.0;
        for j in 0..i {
            log_term += ((n - j) as f64).ln() - ((i - j) as f64).ln();
        }
        log_term += i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln();
        total += log_term.exp();
    }
    total.min(1.0)
}

impl BoundCheck {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{:.9},{:.9},{}",
            self.name,
            self.analytic,
            self.empirical,
            self.sigma,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}
