//! Causal ordering by repeated sink elimination.
//!
//! A sink's noise is independent of every other variable, so among the
//! remaining nodes the one whose regression residuals look least dependent
//! on the others (smallest HSIC) is taken as the last node of the ordering,
//! removed, and the search repeats on the rest.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{compute_ranks, expand_basis, BasisSpec, CausalOrdering, Dag, Dataset};
use crate::error::{FitError, OrderError};
use crate::hsic::{hsic_statistic, HsicConfig};
use crate::optim::AscentOptions;
use crate::rank_gauss::fit_rank_gauss;
use crate::rank_general::{fit_rank_smoothed, RankSConfig, DEFAULT_LAMBDA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rankg", alias = "RankG")]
    RankG,
    #[serde(rename = "ranks", alias = "RankS")]
    RankS,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::RankG => "RankG",
            Method::RankS => "RankS",
        })
    }
}

/// Anchor `y₀` for the smoothed transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Y0Policy {
    Zero,
    Median,
    Explicit(f64),
}

impl Y0Policy {
    pub fn resolve(&self, y: &[f64]) -> f64 {
        match *self {
            Y0Policy::Zero => 0.0,
            Y0Policy::Explicit(v) => v,
            Y0Policy::Median => {
                let mut v = y.to_vec();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n == 0 {
                    0.0
                } else if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            }
        }
    }
}

/// Everything the ordering search needs besides the data. `lambda`,
/// `y0_policy` and `recenter` only affect [`Method::RankS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderConfig {
    pub method: Method,
    pub basis: BasisSpec,
    pub hsic: HsicConfig,
    pub lambda: f64,
    pub y0_policy: Y0Policy,
    #[serde(default)]
    pub recenter: bool,
}

impl Default for OrderConfig {
    fn default() -> Self {
        Self {
            method: Method::RankG,
            basis: BasisSpec::new(2).expect("degree 2"),
            hsic: HsicConfig::median(),
            lambda: DEFAULT_LAMBDA,
            y0_policy: Y0Policy::Zero,
            recenter: false,
        }
    }
}

/// One elimination round.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkStep {
    pub remaining: Vec<usize>,
    /// `t_k` aligned with `remaining`; `+∞` marks a failed regression.
    pub t_values: Vec<f64>,
    pub chosen: usize,
    /// Failed regressions as `(node, reason)`.
    pub failures: Vec<(usize, String)>,
}

impl Serialize for SinkStep {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        struct TMap<'a>(&'a SinkStep);
        impl Serialize for TMap<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                let mut map = serializer.serialize_map(Some(self.0.remaining.len()))?;
                for (k, t) in self.0.remaining.iter().zip(&self.0.t_values) {
                    map.serialize_entry(&k.to_string(), &t.is_finite().then_some(*t))?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(None)?;
        map.serialize_entry("remaining", &self.remaining)?;
        map.serialize_entry("t", &TMap(self))?;
        map.serialize_entry("chosen", &self.chosen)?;
        if !self.failures.is_empty() {
            let f: BTreeMap<String, &str> = self
                .failures
                .iter()
                .map(|(k, r)| (k.to_string(), r.as_str()))
                .collect();
            map.serialize_entry("failures", &f)?;
        }
        map.end()
    }
}

/// Residuals of `target` regressed on the basis-expanded `predictors`.
pub fn node_residuals(
    data: &Dataset,
    target: usize,
    predictors: &[usize],
    cfg: &OrderConfig,
) -> Result<Vec<f64>, OrderError> {
    if predictors.is_empty() {
        return Err(OrderError::Invalid("predictor set is empty".into()));
    }
    if predictors.contains(&target) {
        return Err(OrderError::Invalid(format!("target {target} is among its predictors")));
    }
    if target >= data.m() || predictors.iter().any(|&k| k >= data.m()) {
        return Err(OrderError::Invalid("node index out of range".into()));
    }
    let unavailable = |e: &dyn std::fmt::Display| OrderError::ResidualsUnavailable {
        target,
        reason: e.to_string(),
    };
    let y = data.column(target).to_vec();
    let ranks = compute_ranks(&y).map_err(|e| unavailable(&e))?;
    let x = expand_basis(data.select_columns(predictors).view(), cfg.basis);
    let fit = match cfg.method {
        Method::RankG => fit_rank_gauss(x.view(), &y, &ranks, &AscentOptions::default()),
        Method::RankS => fit_rank_smoothed(
            x.view(),
            &y,
            &ranks,
            &RankSConfig {
                lambda: cfg.lambda,
                y0: cfg.y0_policy.resolve(&y),
                recenter: cfg.recenter,
                ..RankSConfig::default()
            },
        ),
    };
    fit.map(|f| f.residuals).map_err(|e: FitError| unavailable(&e))
}

/// Computes `t_k` for every remaining node and picks the smallest, lowest
/// node id first on ties. Nodes whose regression fails score `+∞`.
pub fn sink_scores(
    data: &Dataset,
    remaining: &[usize],
    cfg: &OrderConfig,
) -> Result<SinkStep, OrderError> {
    if remaining.len() < 2 {
        return Err(OrderError::Invalid("need at least 2 remaining nodes".into()));
    }
    let scored: Vec<Result<f64, String>> = remaining
        .par_iter()
        .map(|&k| {
            let others: Vec<usize> = remaining.iter().copied().filter(|&j| j != k).collect();
            let e = node_residuals(data, k, &others, cfg).map_err(|e| e.to_string())?;
            let raw = data.select_columns(&others);
            hsic_statistic(raw.view(), &e, &cfg.hsic).map_err(|e| e.to_string())
        })
        .collect();
    let mut t_values = Vec::with_capacity(remaining.len());
    let mut failures = Vec::new();
    for (&k, s) in remaining.iter().zip(scored) {
        match s {
            Ok(t) if t.is_finite() => t_values.push(t),
            Ok(t) => {
                failures.push((k, format!("non-finite statistic {t}")));
                t_values.push(f64::INFINITY);
            }
            Err(reason) => {
                failures.push((k, reason));
                t_values.push(f64::INFINITY);
            }
        }
    }
    let mut best: Option<usize> = None;
    for (pos, &t) in t_values.iter().enumerate() {
        if !t.is_finite() {
            continue;
        }
        best = match best {
            Some(b) if t_values[b] < t || (t_values[b] == t && remaining[b] < remaining[pos]) => Some(b),
            _ => Some(pos),
        };
    }
    let Some(pos) = best else {
        return Err(OrderError::OrderingFailed(remaining.to_vec()));
    };
    Ok(SinkStep {
        remaining: remaining.to_vec(),
        t_values,
        chosen: remaining[pos],
        failures,
    })
}

/// Eliminates sinks until one node is left; that node comes first.
pub fn estimate_ordering(data: &Dataset, cfg: &OrderConfig) -> Result<CausalOrdering, OrderError> {
    let (n, m) = (data.n(), data.m());
    if m < 2 {
        return Err(OrderError::Invalid(format!("need at least 2 variables, got {m}")));
    }
    let dim = cfg.basis.expanded_dim(m - 1);
    if n <= dim {
        return Err(OrderError::InsufficientSamples { n, dim });
    }
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut reversed = Vec::with_capacity(m);
    let mut steps = Vec::with_capacity(m - 1);
    while remaining.len() > 1 {
        let step = sink_scores(data, &remaining, cfg)?;
        reversed.push(step.chosen);
        remaining.retain(|&k| k != step.chosen);
        steps.push(step);
    }
    reversed.push(remaining[0]);
    reversed.reverse();
    Ok(CausalOrdering::new(reversed, steps)?)
}

/// Number of true edges that point from a later to an earlier position.
pub fn ordering_error(ordering: &CausalOrdering, truth: &Dag) -> Result<usize, OrderError> {
    if ordering.m() != truth.m() {
        return Err(OrderError::DimensionMismatch {
            ordering: ordering.m(),
            graph: truth.m(),
        });
    }
    let mut pos = vec![0; ordering.m()];
    for (i, &k) in ordering.order().iter().enumerate() {
        pos[k] = i;
    }
    Ok(truth.edges().filter(|&(a, b)| pos[a] > pos[b]).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn chain(seed: u64, n: usize) -> (Dataset, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Array2::zeros((n, 2));
        let mut eps = Vec::with_capacity(n);
        for i in 0..n {
            let x1: f64 = rng.sample::<f64, _>(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            v[[i, 0]] = x1;
            v[[i, 1]] = (3.0 * x1 + e).cbrt();
            eps.push(e);
        }
        (Dataset::with_default_names(v).unwrap(), eps)
    }

    fn linear() -> OrderConfig {
        OrderConfig {
            basis: BasisSpec::linear(),
            ..OrderConfig::default()
        }
    }

    fn ordering(order: Vec<usize>) -> CausalOrdering {
        CausalOrdering::new(order, Vec::new()).unwrap()
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn residuals_track_true_noise() {
        let (d, eps) = chain(1, 500);
        let e = node_residuals(&d, 1, &[0], &linear()).unwrap();
        assert!(corr(&e, &eps) >= 0.95, "{}", corr(&e, &eps));
    }

    #[test]
    fn pure_noise_predictor_gives_normal_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = Array2::from_shape_fn((300, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let d = Dataset::with_default_names(v).unwrap();
        let e = node_residuals(&d, 1, &[0], &linear()).unwrap();
        let r = compute_ranks(&d.column(1).to_vec()).unwrap();
        let scores: Vec<f64> = r
            .ranks()
            .iter()
            .map(|&k| crate::normal::quantile(k as f64 / 301.0))
            .collect();
        assert!(corr(&e, &scores) > 0.99);
    }

    #[test]
    fn invalid_requests() {
        let (d, _) = chain(3, 20);
        assert!(matches!(node_residuals(&d, 0, &[], &linear()), Err(OrderError::Invalid(_))));
        assert!(matches!(node_residuals(&d, 0, &[0], &linear()), Err(OrderError::Invalid(_))));
        let small = Dataset::with_default_names(Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64 * 0.37 + (j as f64).sin())).unwrap();
        match estimate_ordering(&small, &OrderConfig::default()) {
            Err(e @ OrderError::InsufficientSamples { n: 4, dim: 6 }) => {
                assert!(e.to_string().contains("n > expanded dimension required"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_node_steps_are_reproducible() {
        let (d, _) = chain(4, 200);
        let a = sink_scores(&d, &[0, 1], &linear()).unwrap();
        let b = sink_scores(&d, &[0, 1], &linear()).unwrap();
        assert!(a.t_values.iter().all(|t| t.is_finite()));
        assert_eq!(a, b);
        assert_eq!(a.t_values.iter().map(|t| t.to_bits()).collect::<Vec<_>>(),
                   b.t_values.iter().map(|t| t.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn chain_direction_is_recovered() {
        let mut hits = 0;
        for seed in 0..50 {
            let (d, _) = chain(100 + seed, 500);
            let o = estimate_ordering(&d, &linear()).unwrap();
            if o.order() == [0, 1] {
                hits += 1;
            }
        }
        assert!(hits >= 45, "{hits}/50");
    }

    #[test]
    fn empty_graph_has_no_preferred_sink() {
        let mut wins = [0usize; 3];
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let v = Array2::from_shape_fn((100, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let d = Dataset::with_default_names(v).unwrap();
            let s = sink_scores(&d, &[0, 1, 2], &linear()).unwrap();
            wins[s.chosen] += 1;
        }
        assert!(wins.iter().all(|&w| w <= 60), "{wins:?}");
    }

    #[test]
    fn empty_graph_orderings_are_always_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = Array2::from_shape_fn((60, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let d = Dataset::with_default_names(v).unwrap();
        let o = estimate_ordering(&d, &OrderConfig::default()).unwrap();
        assert_eq!(o.steps().len(), 3);
        assert_eq!(ordering_error(&o, &Dag::empty(4)).unwrap(), 0);
        let json = serde_json::to_value(&o).unwrap();
        assert_eq!(json["steps"][0]["remaining"], serde_json::json!([0, 1, 2, 3]));
        assert!(json["steps"][0]["t"]["0"].is_number());
    }

    #[test]
    fn failures_score_infinity_and_all_failing_errors() {
        // a tied column cannot be ranked
        let mut v = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 13) % 31) as f64 + j as f64 * 0.1);
        v[[1, 2]] = v[[0, 2]];
        let d = Dataset::with_default_names(v).unwrap();
        let s = sink_scores(&d, &[0, 1, 2], &linear()).unwrap();
        assert_eq!(s.t_values[2], f64::INFINITY);
        assert_ne!(s.chosen, 2);
        assert_eq!(s.failures.len(), 1);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["t"]["2"].is_null());
        let mut w = Array2::from_shape_fn((10, 2), |(i, j)| (i + j) as f64);
        w[[1, 0]] = w[[0, 0]];
        w[[1, 1]] = w[[0, 1]];
        let d = Dataset::with_default_names(w).unwrap();
        assert!(matches!(sink_scores(&d, &[0, 1], &linear()), Err(OrderError::OrderingFailed(_))));
    }

    #[test]
    fn ordering_error_examples() {
        let g = Dag::new(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(ordering_error(&ordering(vec![0, 1, 2]), &g).unwrap(), 0);
        assert_eq!(ordering_error(&ordering(vec![2, 1, 0]), &g).unwrap(), 2);
        assert!(matches!(
            ordering_error(&ordering(vec![0, 1]), &g),
            Err(OrderError::DimensionMismatch { .. })
        ));
    }

    fn random_dag(rng: &mut ChaCha8Rng, m: usize) -> Dag {
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(rng);
        let mut edges = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                if rng.random_bool(0.5) {
                    edges.push((perm[a], perm[b]));
                }
            }
        }
        Dag::new(m, edges).unwrap()
    }

    #[test]
    fn ordering_error_matches_pair_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let g = random_dag(&mut rng, 7);
            let mut perm: Vec<usize> = (0..7).collect();
            perm.shuffle(&mut rng);
            let mut count = 0;
            for i in 0..7 {
                for j in 0..i {
                    if g.has_edge(perm[i], perm[j]) {
                        count += 1;
                    }
                }
            }
            assert_eq!(ordering_error(&ordering(perm), &g).unwrap(), count);
        }
    }

    fn permutations(m: usize) -> Vec<Vec<usize>> {
        if m == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(m - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, m - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn zero_error_iff_induced_complete_dag_contains_truth() {
        for m in 1..=5usize {
            let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).filter(|(a, b)| a != b).collect();
            let perms = permutations(m);
            let graphs: Vec<Dag> = (0u32..1 << pairs.len())
                .filter_map(|mask| {
                    Dag::new(m, pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e)).ok()
                })
                .collect();
            for g in &graphs {
                for p in &perms {
                    let mut pos = vec![0; m];
                    for (i, &k) in p.iter().enumerate() {
                        pos[k] = i;
                    }
                    let superset = g.edges().all(|(a, b)| pos[a] < pos[b]);
                    let err = ordering_error(&ordering(p.clone()), g).unwrap();
                    assert_eq!(err == 0, superset);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn output_is_a_permutation(seed in any::<u64>(), m in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = Array2::from_shape_fn((40, m), |_| rng.sample::<f64, _>(StandardNormal));
            let d = Dataset::with_default_names(v).unwrap();
            let o = estimate_ordering(&d, &linear()).unwrap();
            let mut sorted = o.order().to_vec();
            sorted.sort();
            prop_assert_eq!(sorted, (0..m).collect::<Vec<_>>());
            for (s, step) in o.steps().iter().enumerate() {
                prop_assert_eq!(step.remaining.len(), m - s);
                prop_assert!(step.remaining.contains(&step.chosen));
            }
        }
    }
}
