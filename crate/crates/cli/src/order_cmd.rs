use std::fmt::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use pnlrank::data::{compute_ranks, jitter_ties, read_csv, BasisSpec, CausalOrdering, Dataset};
use pnlrank::error::OrderError;
use pnlrank::hsic::{Bandwidth, HsicConfig};
use pnlrank::order::{estimate_ordering, Method, OrderConfig, Y0Policy};
use pnlrank::rank_general::DEFAULT_LAMBDA;
use serde::{Deserialize, Serialize};

use crate::config::{merge_flags, MethodArg, Y0Arg};
use crate::manifest::{RunManifest, MANIFEST_NAME};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BwMode {
    /// Median squared pairwise distance of each input.
    Median,
    /// Bandwidth 1 on both sides.
    Unit,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderArgs {
    /// Input CSV with a header row; every column is a node.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Regression estimator [default: rankg].
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Per-predictor monomial degree [default: 2].
    #[arg(long)]
    pub basis_degree: Option<usize>,
    /// HSIC kernel bandwidth rule [default: median].
    #[arg(long, value_enum)]
    pub hsic_bw_mode: Option<BwMode>,
    /// Fixed bandwidth for the predictor kernel; overrides the mode.
    #[arg(long)]
    pub hsic_bw_x: Option<f64>,
    /// Fixed bandwidth for the residual kernel; overrides the mode.
    #[arg(long)]
    pub hsic_bw_e: Option<f64>,
    /// Smoothing scale of the transform estimate (ranks only).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Transform anchor: zero, median, or a number (ranks only) [default: median].
    #[arg(long)]
    pub y0: Option<Y0Arg>,
    /// Shift each transform estimate to mean zero (ranks only).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub recenter: Option<bool>,
    /// Break exact ties within each column with seeded jitter.
    #[arg(long)]
    pub jitter_seed: Option<u64>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with defaults for any of the flags above.
    #[arg(long)]
    #[serde(skip)]
    pub spec: Option<PathBuf>,
}

#[derive(Serialize)]
struct OrderingOutput<'a> {
    manifest: &'a str,
    method: Method,
    columns: &'a [String],
    /// Cause-to-effect order by column name.
    order: Vec<&'a str>,
    order_indices: &'a [usize],
    steps: &'a [pnlrank::order::SinkStep],
}

fn fmt_t(t: f64) -> String {
    if t.is_finite() {
        format!("{t:.6e}")
    } else {
        "failed".into()
    }
}

/// One block per elimination round, listing every `t` value.
pub fn step_log(ordering: &CausalOrdering, names: &[String]) -> String {
    let mut s = String::new();
    for (i, step) in ordering.steps().iter().enumerate() {
        let remaining: Vec<&str> = step.remaining.iter().map(|&k| names[k].as_str()).collect();
        let _ = writeln!(s, "step {}: remaining [{}]", i + 1, remaining.join(", "));
        for (&k, &t) in step.remaining.iter().zip(&step.t_values) {
            let mark = if k == step.chosen { "  <- sink" } else { "" };
            let _ = writeln!(s, "  t[{}] = {}{mark}", names[k], fmt_t(t));
        }
        for (k, reason) in &step.failures {
            let _ = writeln!(s, "  failed {}: {reason}", names[*k]);
        }
    }
    let order: Vec<&str> = ordering.order().iter().map(|&k| names[k].as_str()).collect();
    let _ = writeln!(s, "order: {}", order.join(" -> "));
    s
}

fn jittered(data: &Dataset, seed: u64) -> Result<Dataset, CliError> {
    let mut values = data.values().to_owned();
    for (j, mut col) in values.columns_mut().into_iter().enumerate() {
        let fixed = jitter_ties(&col.to_vec(), seed.wrapping_add(j as u64));
        col.iter_mut().zip(fixed).for_each(|(v, f)| *v = f);
    }
    Dataset::new(values, data.column_names().to_vec()).map_err(CliError::validation)
}

pub fn run(flags: &OrderArgs, man: &mut RunManifest) -> Result<(), CliError> {
    let a = merge_flags(flags, flags.spec.as_deref())?;
    man.use_dir(&a.out.clone().unwrap_or_else(|| PathBuf::from(".")))?;
    let data_path = a.data.clone().ok_or_else(|| CliError::Validation("--data is required".into()))?;
    let method: Method = a.method.unwrap_or(MethodArg::Rankg).into();
    let basis = BasisSpec::new(a.basis_degree.unwrap_or(2)).map_err(CliError::validation)?;
    let base = match a.hsic_bw_mode.unwrap_or(BwMode::Median) {
        BwMode::Median => Bandwidth::Median,
        BwMode::Unit => Bandwidth::Fixed(1.0),
    };
    let side = |v: Option<f64>, flag: &str| match v {
        None => Ok(base),
        Some(v) if v > 0.0 && v.is_finite() => Ok(Bandwidth::Fixed(v)),
        Some(v) => Err(CliError::Validation(format!("{flag} must be positive, got {v}"))),
    };
    let hsic = HsicConfig {
        bandwidth_x: side(a.hsic_bw_x, "--hsic-bw-x")?,
        bandwidth_e: side(a.hsic_bw_e, "--hsic-bw-e")?,
    };
    if method == Method::RankG && (a.lambda.is_some() || a.y0.is_some() || a.recenter.is_some()) {
        return Err(CliError::Validation("--lambda, --y0 and --recenter apply to --method ranks only".into()));
    }
    let lambda = a.lambda.unwrap_or(DEFAULT_LAMBDA);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CliError::Validation(format!("--lambda must be positive, got {lambda}")));
    }
    let y0_policy = a.y0.clone().map_or(Ok(Y0Policy::Median), |v| v.policy())?;

    let mut data = read_csv(&data_path).map_err(CliError::validation)?;
    if let Some(seed) = a.jitter_seed {
        data = jittered(&data, seed)?;
    }
    for j in 0..data.m() {
        compute_ranks(&data.column(j).to_vec())
            .map_err(|e| CliError::Validation(format!("column `{}`: {e}", data.column_names()[j])))?;
    }
    let cfg = OrderConfig {
        method,
        basis,
        hsic,
        lambda,
        y0_policy,
        recenter: a.recenter.unwrap_or(false),
    };
    man.set_config(&serde_json::json!({
        "data": data_path,
        "order_config": cfg,
        "jitter_seed": a.jitter_seed,
    }));
    man.seed = a.jitter_seed;

    let ordering = estimate_ordering(&data, &cfg).map_err(|e| match e {
        OrderError::OrderingFailed(_) | OrderError::ResidualsUnavailable { .. } => CliError::Ordering(e.to_string()),
        other => CliError::validation(other),
    })?;
    let names = data.column_names();
    let out = OrderingOutput {
        manifest: MANIFEST_NAME,
        method,
        columns: names,
        order: ordering.order().iter().map(|&k| names[k].as_str()).collect(),
        order_indices: ordering.order(),
        steps: ordering.steps(),
    };
    man.write("ordering.json", &(serde_json::to_string_pretty(&out).expect("ordering serializes") + "\n"))?;
    man.write("steps.log", &step_log(&ordering, names))?;
    Ok(())
}
