use std::path::PathBuf;

use clap::Args;
use ndarray::ArrayView2;
use pnlrank::data::{compute_ranks, expand_basis, jitter_ties, read_csv, BasisSpec};
use pnlrank::error::FitError;
use pnlrank::optim::AscentOptions;
use pnlrank::order::{Method, Y0Policy};
use pnlrank::rank_gauss::{estimate_h_gauss, fit_rank_gauss, linear_predictor, FitResult};
use pnlrank::rank_general::{estimate_h_smoothed, fit_rank_smoothed, RankSConfig, DEFAULT_LAMBDA};
use serde::{Deserialize, Serialize};

use crate::config::{merge_flags, MethodArg, Y0Arg};
use crate::manifest::{RunManifest, MANIFEST_NAME};
use crate::CliError;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column; every other column is a predictor.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Per-predictor monomial degree [default: 1].
    #[arg(long)]
    pub basis_degree: Option<usize>,
    /// Smoothing scale of the transform estimate (ranks only).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Anchor with `h(y0) = 0`: zero, median, or a number (ranks only) [default: median].
    #[arg(long)]
    pub y0: Option<Y0Arg>,
    /// Predictor whose coefficient is fixed to ±1 (ranks only).
    #[arg(long)]
    pub pivot: Option<String>,
    /// Shift the transform estimate to mean zero (ranks only).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub recenter: Option<bool>,
    /// Iteration cap of the coefficient optimizer [default: 500].
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Break exact ties in the response with seeded jitter.
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

#[derive(Debug, Serialize)]
struct Resolved {
    data: PathBuf,
    target: String,
    method: Method,
    basis_degree: usize,
    predictors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pivot: Option<String>,
    recenter: bool,
    max_iter: usize,
    jitter_seed: Option<u64>,
}

#[derive(Serialize)]
struct FitOutput<'a> {
    manifest: &'a str,
    target: &'a str,
    method: Method,
    predictors: &'a [String],
    result: &'a FitResult,
}

/// `ĥ` and residuals for a coefficient vector that did not reach the
/// convergence target, so the artifacts can still be written.
fn unconverged(
    method: Method,
    xv: ArrayView2<'_, f64>,
    y: &[f64],
    beta: Vec<f64>,
    objective: f64,
    lambda: f64,
    y0: f64,
) -> Result<FitResult, FitError> {
    let ranks = compute_ranks(y)?;
    let (h_points, h_values, lambda, y0) = match method {
        Method::RankG => {
            let h = estimate_h_gauss(y, &ranks, xv, &beta)?;
            (h.points, h.values, None, None)
        }
        Method::RankS => {
            let h = estimate_h_smoothed(y, &beta, xv, y, y0, lambda)?;
            let values = y
                .iter()
                .map(|&v| h.get(v).ok_or(FitError::MissingTransformPoint(v)))
                .collect::<Result<Vec<_>, _>>()?;
            (h.points, values, Some(lambda), Some(y0))
        }
    };
    let lin = linear_predictor(xv, &beta);
    Ok(FitResult {
        residuals: h_values.iter().zip(&lin).map(|(h, l)| h - l).collect(),
        beta,
        objective,
        converged: false,
        h_points,
        pivot_index: None,
        lambda,
        y0,
    })
}

pub fn run(flags: &FitArgs, man: &mut RunManifest) -> Result<(), CliError> {
    let a = merge_flags(flags, flags.spec.as_deref())?;
    man.use_dir(&a.out.clone().unwrap_or_else(|| PathBuf::from(".")))?;
    let data_path = a.data.clone().ok_or_else(|| CliError::Validation("--data is required".into()))?;
    let target = a.target.clone().ok_or_else(|| CliError::Validation("--target is required".into()))?;
    let method: Method = a.method.ok_or_else(|| CliError::Validation("--method is required".into()))?.into();
    let basis = BasisSpec::new(a.basis_degree.unwrap_or(1)).map_err(CliError::validation)?;
    let d = basis.degree();
    if method == Method::RankG && (a.lambda.is_some() || a.y0.is_some() || a.pivot.is_some() || a.recenter.is_some()) {
        return Err(CliError::Validation("--lambda, --y0, --pivot and --recenter apply to --method ranks only".into()));
    }

    let data = read_csv(&data_path).map_err(CliError::validation)?;
    let t = data.column_index(&target).map_err(CliError::validation)?;
    let preds: Vec<usize> = (0..data.m()).filter(|&j| j != t).collect();
    if preds.is_empty() {
        return Err(CliError::Validation("need at least one predictor column besides the target".into()));
    }
    let names = data.column_names();
    let expanded_names: Vec<String> = preds
        .iter()
        .flat_map(|&j| (1..=d).map(move |k| if k == 1 { names[j].clone() } else { format!("{}^{k}", names[j]) }))
        .collect();
    let x = expand_basis(data.select_columns(&preds).view(), basis);
    let mut y = data.column(t).to_vec();
    if let Some(seed) = a.jitter_seed {
        y = jitter_ties(&y, seed);
    }
    let ranks = compute_ranks(&y).map_err(CliError::validation)?;

    let lambda = a.lambda.unwrap_or(DEFAULT_LAMBDA);
    let y0 = a.y0.clone().map_or(Ok(Y0Policy::Median), |v| v.policy())?.resolve(&y);
    let pivot = match &a.pivot {
        Some(name) => {
            let j = data.column_index(name).map_err(CliError::validation)?;
            let pos = preds
                .iter()
                .position(|&k| k == j)
                .ok_or_else(|| CliError::Validation(format!("pivot `{name}` is the target, not a predictor")))?;
            Some(pos * d)
        }
        None => None,
    };
    let ascent = AscentOptions {
        max_iter: a.max_iter.unwrap_or(AscentOptions::default().max_iter),
        ..AscentOptions::default()
    };
    if ascent.max_iter == 0 {
        return Err(CliError::Validation("--max-iter must be at least 1".into()));
    }
    let resolved = Resolved {
        data: data_path,
        target: target.clone(),
        method,
        basis_degree: d,
        predictors: expanded_names.clone(),
        lambda: (method == Method::RankS).then_some(lambda),
        y0: (method == Method::RankS).then_some(y0),
        pivot: a.pivot.clone(),
        recenter: a.recenter.unwrap_or(false),
        max_iter: ascent.max_iter,
        jitter_seed: a.jitter_seed,
    };
    man.set_config(&resolved);
    man.seed = a.jitter_seed;

    let outcome = match method {
        Method::RankG => fit_rank_gauss(x.view(), &y, &ranks, &ascent),
        Method::RankS => fit_rank_smoothed(
            x.view(),
            &y,
            &ranks,
            &RankSConfig {
                ascent,
                pivot,
                lambda,
                y0,
                recenter: resolved.recenter,
                ..RankSConfig::default()
            },
        ),
    };
    let (result, failure) = match outcome {
        Ok(r) => (r, None),
        Err(FitError::DidNotConverge {
            iterations,
            gradient_norm,
            best_beta,
            best_objective,
        }) => {
            let r = unconverged(method, x.view(), &y, best_beta, best_objective, lambda, y0).map_err(CliError::validation)?;
            let msg = format!("optimizer did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})");
            (r, Some(CliError::Convergence(msg)))
        }
        Err(e) => return Err(CliError::validation(e)),
    };

    let out = FitOutput {
        manifest: MANIFEST_NAME,
        target: &target,
        method,
        predictors: &expanded_names,
        result: &result,
    };
    man.write("fit.json", &(serde_json::to_string_pretty(&out).expect("fit serializes") + "\n"))?;
    let lin = linear_predictor(x.view(), &result.beta);
    let mut csv = String::from("row,y,linear_predictor,h,residual\n");
    for (i, (e, l)) in result.residuals.iter().zip(&lin).enumerate() {
        csv.push_str(&format!("{i},{:?},{l:?},{:?},{e:?}\n", y[i], l + e));
    }
    man.write("residuals.csv", &csv)?;
    failure.map_or(Ok(()), Err)
}
