//! Gauss-Legendre panels mapped to the unit interval.

use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

/// Node/weight pairs on `[0, 1]`, nodes ascending.
pub(crate) struct UnitRule {
    pairs: Vec<(f64, f64)>,
}

impl UnitRule {
    fn new(degree: usize) -> Self {
        let rule = GaussLegendre::new(degree).expect("degree >= 2");
        let mut pairs: Vec<(f64, f64)> = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // enforce exact mirror symmetry so reflected panels evaluate at identical points
        let n = pairs.len();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (pairs[i].0 + (1.0 - pairs[j].0));
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (x, w);
            pairs[j] = (1.0 - x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.5;
        }
        Self { pairs }
    }

    pub(crate) fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    /// Integrates `f` over `[a, b]`.
    pub(crate) fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let len = b - a;
        self.pairs
            .iter()
            .map(|&(x, w)| w * f(a + len * x))
            .sum::<f64>()
            * len
    }
}

pub(crate) fn gauss4() -> &'static UnitRule {
    static RULE: OnceLock<UnitRule> = OnceLock::new();
    RULE.get_or_init(|| UnitRule::new(4))
}

pub(crate) fn gauss8() -> &'static UnitRule {
    static RULE: OnceLock<UnitRule> = OnceLock::new();
    RULE.get_or_init(|| UnitRule::new(8))
}

pub(crate) fn gauss16() -> &'static UnitRule {
    static RULE: OnceLock<UnitRule> = OnceLock::new();
    RULE.get_or_init(|| UnitRule::new(16))
}
