use std::path::PathBuf;

use clap::Args;
use pnlrank::data::write_csv_to;
use pnlrank::sim::{simulate, NoiseDistribution, SemSpec, Snr};
use serde::{Deserialize, Serialize};

use crate::config::merge_flags;
use crate::manifest::{RunManifest, MANIFEST_NAME};
use crate::CliError;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimArgs {
    /// Number of variables [default: 4].
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// gaussian, gumbel or logistic [default: gaussian].
    #[arg(long)]
    pub noise: Option<NoiseDistribution>,
    /// Coefficient range: low = U(-10, 10), high = U(-100, 100) [default: low].
    #[arg(long, value_parser = parse_snr)]
    pub snr: Option<Snr>,
    /// Degree of the polynomial in each parent, 2 or 4 [default: 2].
    #[arg(long)]
    pub degree: Option<usize>,
    /// Edge probability [default: 2/(nodes - 1), capped at 1].
    #[arg(long)]
    pub edge_prob: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset CSV path; the ground truth goes next to it as `<stem>.truth.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with defaults for any of the flags above.
    #[arg(long)]
    #[serde(skip)]
    pub spec: Option<PathBuf>,
}

fn parse_snr(s: &str) -> Result<Snr, String> {
    match s {
        "low" => Ok(Snr::Low),
        "high" => Ok(Snr::High),
        other => Err(format!("expected low or high, got `{other}`")),
    }
}

pub fn run(flags: &SimArgs, man: &mut RunManifest) -> Result<(), CliError> {
    let a = merge_flags(flags, flags.spec.as_deref())?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("simulated.csv"));
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), PathBuf::from);
    man.use_dir(&dir)?;
    let file = out
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| CliError::Validation(format!("--out {} is not a file path", out.display())))?
        .to_string();
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("simulated").to_string();

    let n = a.n.ok_or_else(|| CliError::Validation("--n is required".into()))?;
    let degree = a.degree.unwrap_or(2);
    if degree != 2 && degree != 4 {
        return Err(CliError::Validation(format!("--degree must be 2 or 4, got {degree}")));
    }
    let mut spec = SemSpec::new(
        a.nodes.unwrap_or(4),
        a.snr.unwrap_or(Snr::Low),
        degree,
        a.noise.unwrap_or(NoiseDistribution::Gaussian),
        a.seed.unwrap_or(0),
    );
    if let Some(p) = a.edge_prob {
        spec.edge_prob = p;
    }
    man.set_config(&serde_json::json!({ "sem": spec, "n": n, "out": out }));
    man.seed = Some(spec.seed);

    let sample = simulate(&spec, n).map_err(CliError::validation)?;
    let mut csv = Vec::new();
    write_csv_to(&sample.data, &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    man.write(&file, &String::from_utf8(csv).expect("csv is utf-8"))?;
    let mut truth = serde_json::to_value(sample.truth(&spec)).expect("truth serializes");
    truth["manifest"] = MANIFEST_NAME.into();
    truth["columns"] = serde_json::to_value(sample.data.column_names()).expect("names serialize");
    man.write(&format!("{stem}.truth.json"), &(serde_json::to_string_pretty(&truth).expect("json") + "\n"))?;
    Ok(())
}
