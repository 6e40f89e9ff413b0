//! File formats and the command runner behind the `modelcal` binary.
//!
//! - Samples are CSV with covariate columns, `y`, `weight` and optionally `pi`.
//! - Summary statistics are JSON objects `{"alpha": [...], "V": [[...]], "n": 123}`.
//! - Scenarios are TOML (see [`crate::sim::Scenario`]).
//! - Reports, pooled benchmarks and error records are JSON; their schemas live
//!   in the crate's `schemas/` directory.
//!
//! Floating-point output uses 17 significant digits so that files round-trip.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::calibration::{self, CalibrationProblem};
use crate::domain::{self, Design, EstimatingSpec, Family, SummaryStatistic, SurveySample, UnitRecord};
use crate::error::{Error, Result};
use crate::fusion::{self, PooledBenchmark};
use crate::inference::{self, EstimateReport};
use crate::propensity::{self, FeatureSelector};
use crate::sim::{self, svg, Scenario};

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Read a sample CSV. Units carrying `pi` make a Poisson sample, otherwise the
/// design is unknown; pass `design` to override.
pub fn parse_sample_csv(path: &Path, design: Option<Design>) -> Result<SurveySample> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_sample_csv(file, design, &path.display().to_string())
}

pub fn read_sample_csv<R: Read>(reader: R, design: Option<Design>, label: &str) -> Result<SurveySample> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::MalformedHeader(format!("column {} has an empty name", i + 1)));
        }
        if names[..i].contains(n) {
            return Err(Error::MalformedHeader(format!("duplicate column {n}")));
        }
    }
    let find = |c: &str| names.iter().position(|n| n == c);
    let y_col = find("y").ok_or_else(|| Error::MalformedHeader("missing column y".into()))?;
    let w_col = find("weight").ok_or_else(|| Error::MalformedHeader("missing column weight".into()))?;
    let pi_col = find("pi");
    let cov_cols: Vec<usize> = (0..names.len())
        .filter(|&i| i != y_col && i != w_col && Some(i) != pi_col)
        .collect();
    if cov_cols.is_empty() {
        return Err(Error::MalformedHeader("no covariate columns".into()));
    }

    let mut units = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| Error::MalformedHeader(format!("row {row}: {e}")))?;
        if rec.len() != names.len() {
            return Err(Error::MalformedHeader(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                names.len()
            )));
        }
        let cell = |c: usize| -> Result<f64> {
            rec[c]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell {
                    row,
                    column: names[c].clone(),
                })
        };
        let covs = cov_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?;
        let y = cell(y_col)?;
        let w = cell(w_col)?;
        if w <= 0.0 {
            return Err(Error::WeightNonPositive { row });
        }
        let pi = match pi_col {
            Some(c) if !rec[c].is_empty() => {
                let p = cell(c)?;
                if !(p > 0.0 && p <= 1.0) || (w - 1.0 / p).abs() > 1e-9 * w {
                    return Err(Error::InclusionMismatch {
                        row,
                        weight: w,
                        expected: 1.0 / p,
                    });
                }
                Some(p)
            }
            _ => None,
        };
        units.push(UnitRecord::new(covs, y, w, pi)?);
    }
    if units.is_empty() {
        return Err(Error::InvalidSample("no data rows".into()));
    }
    let design = design.unwrap_or_else(|| {
        if units.iter().all(|u| u.inclusion_prob().is_some()) {
            Design::Poisson
        } else {
            Design::Unknown
        }
    });
    let cov_names = cov_cols.iter().map(|&c| names[c].clone()).collect();
    SurveySample::with_names(units, design, label, cov_names)
}

pub fn sample_to_csv(sample: &SurveySample) -> String {
    let with_pi = sample.units().iter().all(|u| u.inclusion_prob().is_some());
    let mut out = sample.covariate_names().join(",");
    out.push_str(",y,weight");
    if with_pi {
        out.push_str(",pi");
    }
    out.push('\n');
    for u in sample.units() {
        let mut fields: Vec<String> = u.covariates().iter().map(|&v| fmt_f(v)).collect();
        fields.push(fmt_f(u.response()));
        fields.push(fmt_f(u.design_weight()));
        if let Some(p) = u.inclusion_prob().filter(|_| with_pi) {
            fields.push(fmt_f(p));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_sample_csv(sample: &SurveySample, path: &Path) -> Result<()> {
    write_output(Some(path), &sample_to_csv(sample))
}

fn schema_err(msg: impl Into<String>) -> Error {
    Error::SchemaError(msg.into())
}

fn number_array(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| schema_err(format!("{what} must be an array")))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| schema_err(format!("{what} must contain numbers"))))
        .collect()
}

pub fn summary_from_json(text: &str) -> Result<SummaryStatistic> {
    let v: Value = serde_json::from_str(text).map_err(|e| schema_err(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| schema_err("summary must be a JSON object"))?;
    let alpha = number_array(obj.get("alpha").ok_or_else(|| schema_err("missing alpha"))?, "alpha")?;
    let q = alpha.len();
    if q == 0 {
        return Err(schema_err("alpha is empty"));
    }
    let rows = obj
        .get("V")
        .ok_or_else(|| schema_err("missing V"))?
        .as_array()
        .ok_or_else(|| schema_err("V must be an array of rows"))?;
    if rows.len() != q {
        return Err(schema_err(format!("V has {} rows, alpha has length {q}", rows.len())));
    }
    let mut data = Vec::with_capacity(q * q);
    for (i, r) in rows.iter().enumerate() {
        let r = number_array(r, "V rows")?;
        if r.len() != q {
            return Err(schema_err(format!("V row {i} has {} entries, expected {q}", r.len())));
        }
        data.extend(r);
    }
    let n = match obj.get("n") {
        None | Some(Value::Null) => None,
        Some(n) => Some(
            n.as_u64()
                .filter(|&n| n > 0)
                .ok_or_else(|| schema_err("n must be a positive integer"))?,
        ),
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "alpha" | "V" | "n") {
            return Err(schema_err(format!("unexpected key {key}")));
        }
    }
    SummaryStatistic::new(DVector::from_vec(alpha), DMatrix::from_row_slice(q, q, &data), n)
}

pub fn parse_summary_json(path: &Path) -> Result<SummaryStatistic> {
    summary_from_json(&read_to_string(path)?)
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|r| Value::Array(r.iter().map(|&v| json!(v)).collect()))
            .collect(),
    )
}

fn vector_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| json!(x)).collect())
}

pub fn summary_to_json(s: &SummaryStatistic) -> Value {
    let mut v = json!({ "alpha": vector_json(s.alpha()), "V": matrix_json(s.covariance()) });
    if let Some(n) = s.n_source() {
        v["n"] = json!(n);
    }
    v
}

pub fn pooled_to_json(p: &PooledBenchmark) -> Value {
    json!({
        "alpha_star": vector_json(&p.alpha_star),
        "V_star": matrix_json(&p.v_star),
        "W": matrix_json(&p.w),
        "external_only": p.external_only,
        "internal": p.internal.as_ref().map(summary_to_json),
        "external": summary_to_json(&p.external),
    })
}

pub fn report_to_json(r: &EstimateReport, names: &[String]) -> Value {
    let mut v = serde_json::to_value(r).expect("report serializes");
    v["coefficients"] = json!(names);
    v
}

pub fn report_to_csv(r: &EstimateReport, names: &[String]) -> String {
    let mut out = String::from("coefficient,estimate,std_error,ci_lower,ci_upper\n");
    for j in 0..r.beta_hat.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            names[j],
            fmt_f(r.beta_hat[j]),
            fmt_f(r.std_errors[j]),
            fmt_f(r.ci_lower[j]),
            fmt_f(r.ci_upper[j])
        ));
    }
    out
}

/// Machine-readable error record written to stderr by the binary.
pub fn error_record(e: &Error) -> Value {
    json!({ "error": { "module": e.module(), "code": e.code(), "message": e.to_string() } })
}

/// Parse `srs[:N]`, `poisson` or `unknown`. A bare `srs` takes `N = Σ d_i`
/// from the sample when it is read.
pub fn parse_design(text: &str) -> Result<DesignArg> {
    let t = text.trim().to_ascii_lowercase();
    match t.as_str() {
        "poisson" => Ok(DesignArg::Fixed(Design::Poisson)),
        "unknown" => Ok(DesignArg::Fixed(Design::Unknown)),
        "srs" => Ok(DesignArg::SrsFromWeights),
        _ => match t.strip_prefix("srs:").map(str::parse::<f64>) {
            Some(Ok(n)) if n > 0.0 => Ok(DesignArg::Fixed(Design::SrsWithoutReplacement { population_size: n })),
            _ => Err(Error::InvalidSpec(format!("unknown design {text}"))),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignArg {
    Fixed(Design),
    SrsFromWeights,
}

fn load_sample(path: &Path, design: Option<DesignArg>) -> Result<SurveySample> {
    match design {
        None => parse_sample_csv(path, None),
        Some(DesignArg::Fixed(d)) => parse_sample_csv(path, Some(d)),
        Some(DesignArg::SrsFromWeights) => {
            let s = parse_sample_csv(path, Some(Design::Unknown))?;
            let n = s.population_size_hat().round();
            SurveySample::with_names(
                s.units().to_vec(),
                Design::SrsWithoutReplacement { population_size: n },
                s.label(),
                s.covariate_names().to_vec(),
            )
        }
    }
}

pub fn parse_family(text: &str) -> Result<Family> {
    match text.trim().to_ascii_lowercase().as_str() {
        "linear" => Ok(Family::Linear),
        "logistic" => Ok(Family::Logistic),
        other => Err(Error::InvalidSpec(format!("unknown family {other}"))),
    }
}

fn spec_for(sample: &SurveySample, family: Family, full: &[String], reduced: &[String]) -> Result<EstimatingSpec> {
    let full: Vec<&str> = if full.is_empty() {
        sample.covariate_names().iter().map(String::as_str).collect()
    } else {
        full.iter().map(String::as_str).collect()
    };
    let reduced: Vec<&str> = reduced.iter().map(String::as_str).collect();
    EstimatingSpec::from_names(family, sample.covariate_names(), &full, &reduced)
}

fn coefficient_names(sample: &SurveySample, spec: &EstimatingSpec) -> Vec<String> {
    let mut names = Vec::new();
    if spec.intercept() {
        names.push("intercept".to_string());
    }
    names.extend(
        sample
            .covariate_names()
            .iter()
            .zip(spec.mask(domain::Which::Full))
            .filter(|(_, &m)| m)
            .map(|(n, _)| n.clone()),
    );
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Simulate {
        config: PathBuf,
        out: PathBuf,
        svg: Option<PathBuf>,
        replications_log: Option<PathBuf>,
        threads: Option<usize>,
        full_scale: bool,
    },
    Estimate {
        internal: PathBuf,
        summary: PathBuf,
        full: Vec<String>,
        reduced: Vec<String>,
        family: Family,
        design: Option<DesignArg>,
        external_only: bool,
        level: f64,
    },
    Calibrate {
        internal: PathBuf,
        summary: PathBuf,
        reduced: Vec<String>,
        family: Family,
        design: Option<DesignArg>,
    },
    Propensity {
        big: PathBuf,
        internal: PathBuf,
        reduced: Vec<String>,
        family: Family,
        design: Option<DesignArg>,
    },
    Pool {
        internal_summary: PathBuf,
        external_summary: PathBuf,
        external_only: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// Destination of the main artifact; stdout when absent. `Simulate`
    /// carries its own path.
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl RunConfig {
    /// Check that every input file exists before doing any work.
    pub fn validate(&self) -> Result<()> {
        let inputs: Vec<&PathBuf> = match &self.command {
            Command::Simulate { config, .. } => vec![config],
            Command::Estimate { internal, summary, .. } | Command::Calibrate { internal, summary, .. } => {
                vec![internal, summary]
            }
            Command::Propensity { big, internal, .. } => vec![big, internal],
            Command::Pool {
                internal_summary,
                external_summary,
                ..
            } => vec![internal_summary, external_summary],
        };
        for p in inputs {
            if !p.exists() {
                return Err(Error::Io(format!("{}: no such file", p.display())));
            }
        }
        if let Command::Estimate { level, .. } = &self.command {
            if !(*level > 0.0 && *level < 1.0) {
                return Err(Error::InvalidSpec(format!("confidence level {level} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

pub fn run_command(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let out = config.out.as_deref();
    match &config.command {
        Command::Simulate {
            config: path,
            out,
            svg: svg_path,
            replications_log,
            threads,
            full_scale,
        } => {
            let mut scenario = Scenario::from_toml(&read_to_string(path)?)?;
            if *full_scale {
                scenario = scenario.full_scale();
            }
            let table = sim::run_monte_carlo_with_threads(&scenario, threads.or_else(sim::threads_from_env))?;
            log::info!(
                "{}: {} replications in {:.1}s",
                scenario.label(),
                table.replications,
                table.wall_clock_secs
            );
            if table.replications != scenario.replications {
                return Err(Error::InvalidScenario("replication count mismatch".into()));
            }
            write_output(Some(out), &table.to_csv())?;
            if let Some(p) = replications_log {
                write_output(Some(p), &table.replications_csv())?;
            }
            if let Some(p) = svg_path {
                write_output(Some(p), &svg::render(&table, svg::Chart::Bias))?;
                let cov = p.with_extension("coverage.svg");
                write_output(Some(&cov), &svg::render(&table, svg::Chart::Coverage))?;
            }
            Ok(())
        }
        Command::Estimate {
            internal,
            summary,
            full,
            reduced,
            family,
            design,
            external_only,
            level,
        } => {
            let sample = load_sample(internal, *design)?;
            let ext = parse_summary_json(summary)?;
            let spec = spec_for(&sample, *family, full, reduced)?;
            let fit = inference::fit_with_summary(&sample, &spec, &ext, *external_only, *level)?;
            let names = coefficient_names(&sample, &spec);
            let text = match config.format {
                OutputFormat::Json => pretty(&report_to_json(&fit.report, &names)),
                OutputFormat::Csv => report_to_csv(&fit.report, &names),
            };
            write_output(out, &text)
        }
        Command::Calibrate {
            internal,
            summary,
            reduced,
            family,
            design,
        } => {
            let sample = load_sample(internal, *design)?;
            let bench = parse_summary_json(summary)?;
            let spec = spec_for(&sample, *family, &[], reduced)?;
            let u2 = calibration::reduced_score_matrix(&sample, &spec, bench.alpha())?;
            let problem = CalibrationProblem::new(domain::normalized_weights(&sample), u2)?;
            let result = calibration::solve_dual_lambda(&problem)?;
            let w = result.population_scale(sample.population_size_hat());
            log::info!(
                "calibrated in {} iterations, residual {:e}",
                result.iterations,
                result.max_constraint_residual
            );
            let mut text = String::from("unit_id,d,w\n");
            for (i, u) in sample.units().iter().enumerate() {
                text.push_str(&format!("{},{},{}\n", i + 1, fmt_f(u.design_weight()), fmt_f(w[i])));
            }
            write_output(out, &text)
        }
        Command::Propensity {
            big,
            internal,
            reduced,
            family,
            design,
        } => {
            let internal = load_sample(internal, *design)?;
            let big = parse_sample_csv(big, Some(Design::Unknown))?;
            if big.covariate_names() != internal.covariate_names() {
                return Err(Error::DimensionMismatch(
                    "big and internal samples have different covariate columns".into(),
                ));
            }
            let spec = spec_for(&internal, *family, &[], reduced)?;
            let model = propensity::solve_density_ratio(&big, &internal, &FeatureSelector::from_spec(&spec))?;
            log::info!("density ratio fitted in {} iterations, phi = {:?}", model.iterations, model.phi.as_slice());
            let stat = propensity::debiased_alpha2(&big, &spec, &model)?;
            write_output(out, &pretty(&summary_to_json(&stat)))
        }
        Command::Pool {
            internal_summary,
            external_summary,
            external_only,
        } => {
            let a = parse_summary_json(internal_summary)?;
            let b = parse_summary_json(external_summary)?;
            let pooled = if *external_only {
                PooledBenchmark::external_only(Some(a), b)?
            } else {
                fusion::gls_pool(&a, &b)?
            };
            write_output(out, &pretty(&pooled_to_json(&pooled)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<SurveySample> {
        read_sample_csv(text.as_bytes(), None, "t")
    }

    #[test]
    fn three_valid_rows() {
        let s = read("x1,x2,y,weight\n1,2,3,4\n2,3,4,5\n3,4,5,6\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.covariate_names(), ["x1", "x2"]);
        assert_eq!(s.design(), Design::Unknown);
    }

    #[test]
    fn zero_weight_rejected() {
        assert_eq!(
            read("x1,y,weight\n1,2,3\n1,2,0\n").unwrap_err(),
            Error::WeightNonPositive { row: 2 }
        );
    }

    #[test]
    fn pi_mismatch_names_row() {
        let err = read("x1,y,weight,pi\n1,2,4,0.25\n1,2,4,0.5\n").unwrap_err();
        assert!(matches!(err, Error::InclusionMismatch { row: 2, .. }));
    }

    #[test]
    fn non_numeric_cell_located() {
        assert_eq!(
            read("x1,y,weight\n1,abc,3\n").unwrap_err(),
            Error::NonNumericCell {
                row: 1,
                column: "y".into()
            }
        );
    }

    #[test]
    fn missing_weight_column() {
        assert!(matches!(read("x1,y\n1,2\n"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn summary_examples() {
        assert!(summary_from_json(r#"{"alpha":[1,2],"V":[[1,0],[0,1]]}"#).is_ok());
        assert!(matches!(
            summary_from_json(r#"{"alpha":[1,2],"V":[[1,0,0],[0,1,0]]}"#),
            Err(Error::SchemaError(_))
        ));
        assert!(matches!(
            summary_from_json(r#"{"alpha":[1,2],"V":[[1,0.5],[0.4,1]]}"#),
            Err(Error::AsymmetricCovariance(_))
        ));
    }

    #[test]
    fn design_arguments() {
        assert_eq!(parse_design("poisson").unwrap(), DesignArg::Fixed(Design::Poisson));
        assert_eq!(
            parse_design("srs:100").unwrap(),
            DesignArg::Fixed(Design::SrsWithoutReplacement { population_size: 100.0 })
        );
        assert_eq!(parse_design("SRS").unwrap(), DesignArg::SrsFromWeights);
        assert!(parse_design("cluster").is_err());
    }
}
