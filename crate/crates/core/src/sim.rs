//! Synthetic post-nonlinear SEMs and the replication harness.
//!
//! Data follow `X_k = cbrt(Σ_{j ∈ pa(k)} Σ_{d=1}^{D} β_{dj} X_j^d + ε_k)` on
//! an Erdős–Rényi DAG, with the real (signed) cube root.
//!
//! # Seeds
//!
//! Replication `r` of an experiment with base seed `b` uses the `r`-th
//! output of a SplitMix64 generator started at `b` (see [`replication_seed`]).
//! That seed keys a ChaCha8 generator whose independent streams feed, in
//! order of [`STREAM_DAG`], [`STREAM_COEFFICIENTS`], [`STREAM_NOISE`] and
//! [`STREAM_COVARIATES`], so the graph and coefficients of a replication do
//! not depend on the sample size.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{compute_ranks, Dag, Dataset};
use crate::error::{FitError, SimError};
use crate::optim::AscentOptions;
use crate::order::{estimate_ordering, ordering_error, Method, OrderConfig};
use crate::rank_gauss::{estimate_h_gauss, fit_prl, residuals_from};
use crate::rank_general::{estimate_h_smoothed, fit_smoothed, SmoothedOptions, DEFAULT_LAMBDA};

pub const STREAM_DAG: u64 = 0;
pub const STREAM_COEFFICIENTS: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_COVARIATES: u64 = 3;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer applied to `state + γ`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `r`-th output (from 0) of SplitMix64 seeded with `base`.
pub fn replication_seed(base: u64, r: u64) -> u64 {
    splitmix64(base.wrapping_add(r.wrapping_mul(GOLDEN_GAMMA)))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on the open interval `(0, 1)`.
fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    Gaussian,
    Gumbel,
    Logistic,
}

impl NoiseDistribution {
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseDistribution::Gaussian => rng.sample(StandardNormal),
            NoiseDistribution::Gumbel => -(-open_unit(rng).ln()).ln(),
            NoiseDistribution::Logistic => {
                let u = open_unit(rng);
                (u / (1.0 - u)).ln()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            NoiseDistribution::Gaussian => crate::normal::cdf(x),
            NoiseDistribution::Gumbel => (-(-x).exp()).exp(),
            NoiseDistribution::Logistic => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

impl std::str::FromStr for NoiseDistribution {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "gumbel" => Ok(Self::Gumbel),
            "logistic" => Ok(Self::Logistic),
            other => Err(format!("unknown noise law `{other}`")),
        }
    }
}

/// Coefficient regime: `U(−10, 10)` or `U(−100, 100)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Snr {
    Low,
    High,
}

impl Snr {
    pub fn coef_range(self) -> (f64, f64) {
        match self {
            Snr::Low => (-10.0, 10.0),
            Snr::High => (-100.0, 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemSpec {
    pub m: usize,
    pub edge_prob: f64,
    pub inner_degree: usize,
    pub coef_range: (f64, f64),
    pub noise: NoiseDistribution,
    pub seed: u64,
}

impl SemSpec {
    /// Default edge probability `2/(m−1)`, capped at 1.
    pub fn new(m: usize, snr: Snr, inner_degree: usize, noise: NoiseDistribution, seed: u64) -> Self {
        Self {
            m,
            edge_prob: default_edge_prob(m),
            inner_degree,
            coef_range: snr.coef_range(),
            noise,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.m < 2 {
            return Err(SimError::Invalid(format!("need m >= 2, got {}", self.m)));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob <= 1.0) {
            return Err(SimError::Invalid(format!("edge_prob must be in (0, 1], got {}", self.edge_prob)));
        }
        let (lo, hi) = self.coef_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SimError::Invalid(format!("coefficient range needs lo < hi, got ({lo}, {hi})")));
        }
        if self.inner_degree == 0 {
            return Err(SimError::Invalid("inner degree must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn default_edge_prob(m: usize) -> f64 {
    if m < 2 {
        1.0
    } else {
        (2.0 / (m - 1) as f64).min(1.0)
    }
}

/// Random node order, then every forward pair independently with
/// probability `edge_prob`.
pub fn sample_dag(m: usize, edge_prob: f64, seed: u64) -> Result<Dag, SimError> {
    if m < 2 {
        return Err(SimError::Invalid(format!("need m >= 2, got {m}")));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(SimError::Invalid(format!("edge_prob must be in (0, 1], got {edge_prob}")));
    }
    let mut rng = stream_rng(seed, STREAM_DAG);
    let mut perm: Vec<usize> = (0..m).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let mut edges = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if open_unit(&mut rng) < edge_prob {
                edges.push((perm[a], perm[b]));
            }
        }
    }
    Ok(Dag::new(m, edges)?)
}

/// Inner-polynomial coefficients `β_1..β_D` of one edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCoefficients {
    pub parent: usize,
    pub child: usize,
    pub beta: Vec<f64>,
}

/// Draws coefficients child by child, parents ascending, degrees ascending.
pub fn draw_coefficients(dag: &Dag, spec: &SemSpec) -> Vec<EdgeCoefficients> {
    let mut rng = stream_rng(spec.seed, STREAM_COEFFICIENTS);
    let (lo, hi) = spec.coef_range;
    let mut out = Vec::with_capacity(dag.edge_count());
    for child in 0..dag.m() {
        for parent in dag.parents(child) {
            let beta = (0..spec.inner_degree)
                .map(|_| lo + (hi - lo) * open_unit(&mut rng))
                .collect();
            out.push(EdgeCoefficients { parent, child, beta });
        }
    }
    out
}

/// Evaluates the SEM in topological order for given coefficients and noise
/// (`n × m`).
pub fn evaluate_sem(
    dag: &Dag,
    coefficients: &[EdgeCoefficients],
    noise: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, SimError> {
    let (n, m) = noise.dim();
    if m != dag.m() {
        return Err(SimError::Invalid(format!("noise has {m} columns, graph has {} nodes", dag.m())));
    }
    for c in coefficients {
        if !dag.has_edge(c.parent, c.child) {
            return Err(SimError::Invalid(format!(
                "coefficients given for non-edge ({}, {})",
                c.parent, c.child
            )));
        }
    }
    let order = dag.topological_order().expect("validated DAG");
    let mut x = Array2::zeros((n, m));
    for &k in &order {
        let incoming: Vec<&EdgeCoefficients> = coefficients.iter().filter(|c| c.child == k).collect();
        for i in 0..n {
            let mut u = noise[[i, k]];
            for c in &incoming {
                let xj = x[[i, c.parent]];
                let mut pw = 1.0;
                for b in &c.beta {
                    pw *= xj;
                    u += b * pw;
                }
            }
            x[[i, k]] = u.cbrt();
        }
    }
    Ok(x)
}

/// One simulated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SemSample {
    pub dag: Dag,
    pub coefficients: Vec<EdgeCoefficients>,
    pub data: Dataset,
    /// True `ε`, `n × m`.
    pub noise: Array2<f64>,
}

/// Ground-truth sidecar for a simulated dataset.
#[derive(Debug, Clone, Serialize)]
pub struct SemTruth<'a> {
    pub m: usize,
    pub edges: Vec<(usize, usize)>,
    pub coefficients: &'a [EdgeCoefficients],
    pub seed: u64,
    pub noise: NoiseDistribution,
    pub coef_range: (f64, f64),
    pub inner_degree: usize,
}

impl SemSample {
    pub fn truth<'a>(&'a self, spec: &SemSpec) -> SemTruth<'a> {
        SemTruth {
            m: self.dag.m(),
            edges: self.dag.edges().collect(),
            coefficients: &self.coefficients,
            seed: spec.seed,
            noise: spec.noise,
            coef_range: spec.coef_range,
            inner_degree: spec.inner_degree,
        }
    }
}

pub fn draw_noise(spec: &SemSpec, n: usize) -> Array2<f64> {
    let mut rng = stream_rng(spec.seed, STREAM_NOISE);
    let mut e = Array2::zeros((n, spec.m));
    for k in 0..spec.m {
        for i in 0..n {
            e[[i, k]] = spec.noise.sample(&mut rng);
        }
    }
    e
}

/// Draws coefficients and noise for a fixed graph.
pub fn generate_sem_data(dag: &Dag, spec: &SemSpec, n: usize) -> Result<SemSample, SimError> {
    spec.validate()?;
    if spec.m != dag.m() {
        return Err(SimError::Invalid(format!("spec has m = {}, graph has {}", spec.m, dag.m())));
    }
    if n < 2 {
        return Err(SimError::Invalid(format!("need n >= 2, got {n}")));
    }
    let coefficients = draw_coefficients(dag, spec);
    let noise = draw_noise(spec, n);
    let x = evaluate_sem(dag, &coefficients, noise.view())?;
    Ok(SemSample {
        dag: dag.clone(),
        coefficients,
        data: Dataset::with_default_names(x)?,
        noise,
    })
}

/// Graph, coefficients and data, all from `spec.seed`.
pub fn simulate(spec: &SemSpec, n: usize) -> Result<SemSample, SimError> {
    spec.validate()?;
    let dag = sample_dag(spec.m, spec.edge_prob, spec.seed)?;
    generate_sem_data(&dag, spec, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub sem: SemSpec,
    pub n_values: Vec<usize>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub order_cfg: OrderConfig,
    pub base_seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        self.sem.validate()?;
        if self.replications == 0 {
            return Err(SimError::Invalid("replications must be >= 1".into()));
        }
        if self.n_values.is_empty() || self.n_values[0] < 2 || self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::Invalid("n_values must be increasing and >= 2".into()));
        }
        if self.methods.is_empty() {
            return Err(SimError::Invalid("at least one method required".into()));
        }
        Ok(())
    }
}

/// Outcome of one `(method, n, replication)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub method: Method,
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub true_edges: usize,
    pub order: Option<Vec<usize>>,
    pub error: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (divisor `count − 1`).
    pub sd: Option<f64>,
    pub count: usize,
    pub failures: usize,
    /// More than 10% of replications failed.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellSummary>,
    pub replications: Vec<ReplicationRecord>,
}

fn run_one(spec: &ExperimentSpec, method: Method, n: usize, r: usize) -> ReplicationRecord {
    let seed = replication_seed(spec.base_seed, r as u64);
    let sem = SemSpec { seed, ..spec.sem.clone() };
    let cfg = OrderConfig { method, ..spec.order_cfg };
    let mut rec = ReplicationRecord {
        method,
        n,
        replication: r,
        seed,
        true_edges: 0,
        order: None,
        error: None,
        failure: None,
    };
    let sample = match simulate(&sem, n) {
        Ok(s) => s,
        Err(e) => {
            rec.failure = Some(e.to_string());
            return rec;
        }
    };
    rec.true_edges = sample.dag.edge_count();
    match estimate_ordering(&sample.data, &cfg).and_then(|o| Ok((ordering_error(&o, &sample.dag)?, o))) {
        Ok((err, o)) => {
            rec.error = Some(err);
            rec.order = Some(o.order().to_vec());
        }
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec
}

pub fn summarize(method: Method, n: usize, records: &[&ReplicationRecord]) -> CellSummary {
    let errs: Vec<f64> = records.iter().filter_map(|r| r.error.map(|e| e as f64)).collect();
    let count = errs.len();
    let failures = records.len() - count;
    let mean = (count > 0).then(|| errs.iter().sum::<f64>() / count as f64);
    let sd = mean.filter(|_| count > 1).map(|mu| {
        (errs.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    });
    CellSummary {
        method,
        n,
        mean,
        sd,
        count,
        failures,
        flagged: failures * 10 > records.len(),
    }
}

/// Runs every `(method, n, replication)` cell. Replication `r` shares its
/// seed across methods and sample sizes.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, SimError> {
    spec.validate()?;
    let jobs: Vec<(Method, usize, usize)> = spec
        .methods
        .iter()
        .flat_map(|&m| spec.n_values.iter().flat_map(move |&n| (0..spec.replications).map(move |r| (m, n, r))))
        .collect();
    let records: Vec<ReplicationRecord> = jobs.par_iter().map(|&(m, n, r)| run_one(spec, m, n, r)).collect();
    let mut cells = Vec::new();
    for &m in &spec.methods {
        for &n in &spec.n_values {
            let rs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == m && r.n == n).collect();
            cells.push(summarize(m, n, &rs));
        }
    }
    Ok(ExperimentResult {
        spec: spec.clone(),
        cells,
        replications: records,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

impl ExperimentResult {
    /// One line per cell: `method,n,mean,sd,count,failures,flagged`.
    pub fn cells_csv(&self) -> String {
        let mut s = String::from("method,n,mean,sd,count,failures,flagged\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.method,
                c.n,
                opt(c.mean),
                opt(c.sd),
                c.count,
                c.failures,
                c.flagged
            ));
        }
        s
    }

    /// Rows by `n`, one `mean ± sd` column per method.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("n");
        for m in &self.spec.methods {
            s.push_str(&format!(",{m}"));
        }
        s.push('\n');
        for &n in &self.spec.n_values {
            s.push_str(&n.to_string());
            for &m in &self.spec.methods {
                let c = self.cells.iter().find(|c| c.method == m && c.n == n).expect("cell");
                let cell = match (c.mean, c.sd) {
                    (Some(mu), Some(sd)) => format!("{mu:.2} ± {sd:.2}"),
                    (Some(mu), None) => format!("{mu:.2}"),
                    _ => "NA".into(),
                };
                s.push_str(&format!(",{cell}"));
            }
            s.push('\n');
        }
        s
    }

    /// One line per replication:
    /// `method,n,replication,seed,true_edges,order,error,failure`, with the
    /// order written as space-separated node ids.
    pub fn replications_csv(&self) -> String {
        let mut s = String::from("method,n,replication,seed,true_edges,order,error,failure\n");
        for r in &self.replications {
            let order = r
                .order
                .as_ref()
                .map(|o| o.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "))
                .unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.method,
                r.n,
                r.replication,
                r.seed,
                r.true_edges,
                order,
                r.error.map_or_else(String::new, |e| e.to_string()),
                csv_text(r.failure.as_deref().unwrap_or(""))
            ));
        }
        s
    }

    pub fn cell(&self, method: Method, n: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }
}

const PRESET_SOURCES: [&str; 24] = [
    include_str!("../presets/table1.json"),
    include_str!("../presets/table2.json"),
    include_str!("../presets/table3.json"),
    include_str!("../presets/table4.json"),
    include_str!("../presets/table5.json"),
    include_str!("../presets/table6.json"),
    include_str!("../presets/table7.json"),
    include_str!("../presets/table8.json"),
    include_str!("../presets/table9.json"),
    include_str!("../presets/table10.json"),
    include_str!("../presets/table11.json"),
    include_str!("../presets/table12.json"),
    include_str!("../presets/table13.json"),
    include_str!("../presets/table14.json"),
    include_str!("../presets/table15.json"),
    include_str!("../presets/table16.json"),
    include_str!("../presets/table17.json"),
    include_str!("../presets/table18.json"),
    include_str!("../presets/table19.json"),
    include_str!("../presets/table20.json"),
    include_str!("../presets/table21.json"),
    include_str!("../presets/table22.json"),
    include_str!("../presets/table23.json"),
    include_str!("../presets/table24.json"),
];

pub fn preset_names() -> Vec<String> {
    (1..=PRESET_SOURCES.len()).map(|k| format!("table{k}")).collect()
}

/// Built-in experiment `table1` .. `table24`.
pub fn preset(name: &str) -> Option<ExperimentSpec> {
    let k: usize = name.strip_prefix("table")?.parse().ok()?;
    let src = PRESET_SOURCES.get(k.checked_sub(1)?)?;
    Some(serde_json::from_str(src).expect("embedded preset parses"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub beta0: Vec<f64>,
    pub noise: NoiseDistribution,
    pub n: usize,
    pub replications: usize,
    pub method: Method,
    pub base_seed: u64,
    /// Also estimate `h` and residuals, not only `β`.
    pub estimate_transform: bool,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReplication {
    pub replication: usize,
    pub seed: u64,
    pub beta_hat: Option<Vec<f64>>,
    pub converged: bool,
    /// `(y_i, ĥ(y_i))` sorted by `y`; empty unless requested.
    pub h_points: Vec<(f64, f64)>,
    pub residuals: Vec<f64>,
    pub true_noise: Vec<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub spec: StudySpec,
    pub covariate_law: String,
    pub replications: Vec<StudyReplication>,
}

/// Covariates and responses for one study replication:
/// `X ~ N(0, I)`, `Y = cbrt(Xᵀβ₀ + ε)`.
pub fn study_data(spec: &StudySpec, seed: u64) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let p = spec.beta0.len();
    let mut xr = stream_rng(seed, STREAM_COVARIATES);
    let x = Array2::from_shape_fn((spec.n, p), |_| xr.sample::<f64, _>(StandardNormal));
    let mut er = stream_rng(seed, STREAM_NOISE);
    let eps: Vec<f64> = (0..spec.n).map(|_| spec.noise.sample(&mut er)).collect();
    let y = (0..spec.n)
        .map(|i| {
            let lin: f64 = (0..p).map(|k| x[[i, k]] * spec.beta0[k]).sum();
            (lin + eps[i]).cbrt()
        })
        .collect();
    (x, y, eps)
}

fn study_one(spec: &StudySpec, r: usize) -> StudyReplication {
    let seed = replication_seed(spec.base_seed, r as u64);
    let (x, y, eps) = study_data(spec, seed);
    let mut rec = StudyReplication {
        replication: r,
        seed,
        beta_hat: None,
        converged: false,
        h_points: Vec::new(),
        residuals: Vec::new(),
        true_noise: eps,
        failure: None,
    };
    let run = || -> Result<(Vec<f64>, Vec<(f64, f64)>, Vec<f64>), FitError> {
        let ranks = compute_ranks(&y)?;
        let opts = AscentOptions::default();
        match spec.method {
            Method::RankG => {
                let fit = fit_prl(x.view(), &ranks, &opts)?;
                if !spec.estimate_transform {
                    return Ok((fit.beta, Vec::new(), Vec::new()));
                }
                let h = estimate_h_gauss(&y, &ranks, x.view(), &fit.beta)?;
                let e = residuals_from(&h.values, x.view(), &fit.beta);
                Ok((fit.beta, h.points, e))
            }
            Method::RankS => {
                let pivot = x.ncols() - 1;
                let fit = fit_smoothed(x.view(), &ranks, pivot, &SmoothedOptions::default())?;
                if !spec.estimate_transform {
                    return Ok((fit.beta, Vec::new(), Vec::new()));
                }
                let h = estimate_h_smoothed(&y, &fit.beta, x.view(), &y, 0.0, spec.lambda)?;
                let e = crate::rank_general::residuals_smoothed(&y, x.view(), &fit, &h)?;
                Ok((fit.beta, h.points, e))
            }
        }
    };
    match run() {
        Ok((beta, h, e)) => {
            rec.beta_hat = Some(beta);
            rec.converged = true;
            rec.h_points = h;
            rec.residuals = e;
        }
        Err(FitError::DidNotConverge { best_beta, .. }) => {
            rec.beta_hat = Some(best_beta);
            rec.failure = Some("did not converge".into());
        }
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec
}

impl StudyResult {
    /// `replication,seed,converged,beta_1..beta_p,failure`.
    pub fn beta_csv(&self) -> String {
        let p = self.spec.beta0.len();
        let mut s = String::from("replication,seed,converged");
        for k in 1..=p {
            s.push_str(&format!(",beta_{k}"));
        }
        s.push_str(",failure\n");
        for r in &self.replications {
            s.push_str(&format!("{},{},{}", r.replication, r.seed, r.converged));
            for k in 0..p {
                s.push(',');
                if let Some(b) = &r.beta_hat {
                    s.push_str(&format!("{:?}", b[k]));
                }
            }
            s.push_str(&format!(",{}\n", csv_text(r.failure.as_deref().unwrap_or(""))));
        }
        s
    }

    /// `replication,y,h` for every estimated transform point, in
    /// increasing `y` within each replication.
    pub fn transform_csv(&self) -> String {
        let mut s = String::from("replication,y,h\n");
        for r in &self.replications {
            for (y, h) in &r.h_points {
                s.push_str(&format!("{},{y:?},{h:?}\n", r.replication));
            }
        }
        s
    }
}

/// Quotes a free-text CSV field when it needs it.
fn csv_text(t: &str) -> String {
    if t.contains([',', '"', '\n']) {
        format!("\"{}\"", t.replace('"', "\"\""))
    } else {
        t.to_string()
    }
}

/// Repeated single-regression fits on `Y = cbrt(Xᵀβ₀ + ε)`.
pub fn run_regression_study(spec: &StudySpec) -> Result<StudyResult, SimError> {
    if spec.replications == 0 || spec.n < 2 || spec.beta0.is_empty() {
        return Err(SimError::Invalid("study needs replications >= 1, n >= 2, nonempty beta0".into()));
    }
    if spec.method == Method::RankS && spec.beta0.len() < 2 {
        return Err(SimError::Invalid("the smoothed estimator needs at least 2 covariates".into()));
    }
    let replications = (0..spec.replications).into_par_iter().map(|r| study_one(spec, r)).collect();
    Ok(StudyResult {
        spec: spec.clone(),
        covariate_law: "independent standard normal".into(),
        replications,
    })
}
