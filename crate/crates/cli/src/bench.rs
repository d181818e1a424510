use std::path::PathBuf;

use clap::Args;
use pnlrank::order::Method;
use pnlrank::sim::{preset, run_experiment, ExperimentSpec};
use serde_json::Value;

use crate::config::{overlay, read_json, MethodArg};
use crate::manifest::{CellStatus, RunManifest, MANIFEST_NAME};
use crate::svg::error_plot;
use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// `table1` .. `table24`, or `custom` together with --spec.
    #[arg(long)]
    pub preset: String,
    /// Experiment spec JSON. With a named preset it only needs the fields
    /// to change; with `custom` it must be complete.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Replications per cell.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Drop sample sizes above this value.
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Base seed for the replication seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Methods to compare, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodArg>>,
    /// Output directory.
    #[arg(long, default_value = "bench-out")]
    pub out: PathBuf,
}

/// Preset, then spec file, then flags.
pub fn resolve_spec(a: &BenchArgs) -> Result<ExperimentSpec, CliError> {
    let mut base = if a.preset == "custom" {
        if a.spec.is_none() {
            return Err(CliError::Validation("--preset custom needs --spec".into()));
        }
        Value::Object(Default::default())
    } else {
        let p = preset(&a.preset).ok_or_else(|| {
            CliError::Validation(format!("unknown preset `{}`; expected table1..table24 or custom", a.preset))
        })?;
        serde_json::to_value(p).expect("preset serializes")
    };
    if let Some(path) = &a.spec {
        overlay(&mut base, read_json(path)?);
    }
    let mut spec: ExperimentSpec =
        serde_json::from_value(base).map_err(|e| CliError::Validation(format!("experiment spec: {e}")))?;
    if spec.name.is_empty() {
        spec.name = a.preset.clone();
    }
    if let Some(r) = a.reps {
        spec.replications = r;
    }
    if let Some(s) = a.seed {
        spec.base_seed = s;
    }
    if let Some(ms) = &a.methods {
        spec.methods = ms.iter().map(|&m| Method::from(m)).collect();
        spec.methods.dedup();
    }
    if let Some(nmax) = a.nmax {
        spec.n_values.retain(|&n| n <= nmax);
        if spec.n_values.is_empty() {
            return Err(CliError::Validation(format!("no sample size <= --nmax {nmax}")));
        }
    }
    spec.validate().map_err(CliError::validation)?;
    if !spec.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') || spec.name.is_empty() {
        return Err(CliError::Validation(format!("experiment name `{}` is not usable as a file name", spec.name)));
    }
    Ok(spec)
}

pub fn run(a: &BenchArgs, man: &mut RunManifest) -> Result<(), CliError> {
    man.use_dir(&a.out)?;
    let spec = resolve_spec(a)?;
    man.set_config(&spec);
    man.seed = Some(spec.base_seed);
    let result = run_experiment(&spec).map_err(CliError::validation)?;
    man.cells = result.cells.iter().map(CellStatus::from).collect();

    let name = &spec.name;
    man.write(&format!("{name}.csv"), &result.table_csv())?;
    man.write(&format!("{name}_cells.csv"), &result.cells_csv())?;
    man.write(&format!("{name}_replications.csv"), &result.replications_csv())?;
    let json = serde_json::json!({ "manifest": MANIFEST_NAME, "result": result });
    man.write(&format!("{name}.json"), &(serde_json::to_string_pretty(&json).expect("result serializes") + "\n"))?;
    man.write(&format!("{name}.svg"), &error_plot(&result, MANIFEST_NAME))?;
    for c in result.cells.iter().filter(|c| c.flagged) {
        eprintln!("warning: {} at n = {}: {} of {} replications failed", c.method, c.n, c.failures, c.count + c.failures);
    }
    Ok(())
}
