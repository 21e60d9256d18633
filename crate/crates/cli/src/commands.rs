use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::sync::Arc;

use serde::Serialize;

use logrange_gp::diagnostics::{diagnose, KpssConfig};
use logrange_gp::family::{FamilyRegistry, UserWeightFamily};
use logrange_gp::fit::{compare_models, fit_by_name, Anchor, FitOptions};
use logrange_gp::gaussian::{cholesky_with_jitter, sample};
use logrange_gp::kernels::build_cov_matrix;
use logrange_gp::predict::{predict_held_out, ErrorMetric, PredictMethod, PredictOptions};
use logrange_gp::{Error, KernelModel, TimeGrid, WeightFunction};

use crate::input::{self, DataInfo};
use crate::{
    AnchorArg, CliError, Command, CompareArgs, DiagnoseArgs, FitArgs, FitControl, MetricArg, ModelArgs, PredictArgs,
    SimulateArgs,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    #[serde(flatten)]
    body: T,
}

fn open_out(path: &str) -> Result<Box<dyn Write>, CliError> {
    if path == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        let f = File::create(path).map_err(|e| Error::Data(format!("cannot create {path}: {e}")))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

fn write_json<T: Serialize>(path: &str, command: &str, body: T) -> Result<(), CliError> {
    let mut w = open_out(path)?;
    serde_json::to_writer_pretty(
        &mut w,
        &Envelope {
            schema_version: SCHEMA_VERSION,
            command,
            body,
        },
    )?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Compare(a) => compare(a),
        Command::Predict(a) => predict(a),
        Command::Diagnose(a) => diagnose_cmd(a),
    }
}

fn registry(weight: Option<&str>, singularity: Option<f64>) -> Result<FamilyRegistry, CliError> {
    let mut reg = FamilyRegistry::standard();
    if let Some(text) = weight {
        reg.register(Arc::new(UserWeightFamily {
            weight: WeightFunction::parse(text, singularity)?,
        }));
    } else if singularity.is_some() {
        return Err(CliError::Usage("--singularity needs --weight".into()));
    }
    Ok(reg)
}

fn family_name(m: &ModelArgs) -> String {
    match (&m.model, &m.weight) {
        (Some(name), _) => name.clone(),
        (None, Some(_)) => "weighted_log".to_string(),
        (None, None) => "weighted_log_exp".to_string(),
    }
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    if a.model.model.is_none() && a.model.weight.is_none() {
        return Err(CliError::Usage("simulate needs --model or --weight".into()));
    }
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if a.paths == 0 {
        return Err(CliError::Usage("--paths must be at least 1".into()));
    }
    let reg = registry(a.model.weight.as_deref(), a.model.singularity)?;
    let family = reg.get(&family_name(&a.model))?;
    let given: BTreeMap<&str, f64> = [("sigma", a.sigma), ("beta", a.beta), ("hurst", a.hurst), ("alpha", a.alpha)]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect();
    let scale = given.get(family.scale_name()).copied().unwrap_or(1.0);
    let mut shape = Vec::new();
    for p in family.shape_params() {
        match given.get(p.name.as_str()) {
            Some(v) => shape.push(*v),
            None => {
                return Err(CliError::Usage(format!("{} needs --{}", family.name(), p.name)));
            }
        }
    }
    let model = family.build(scale, &shape)?;
    model.validate()?;
    let grid = TimeGrid::uniform(a.horizon, a.n)?;
    let k = build_cov_matrix(&model, &grid)?;
    let factor = cholesky_with_jitter(&k)?;
    eprintln!(
        "{model}: jitter {:e} ({:e} of mean diagonal)",
        factor.jitter_applied,
        factor.relative_jitter()
    );
    let paths = sample(&factor, a.seed, a.paths)?;

    let mut w = csv::Writer::from_writer(open_out(&a.out)?);
    let mut header = vec!["time".to_string()];
    header.extend((1..=a.paths).map(|p| format!("path_{p}")));
    w.write_record(&header).map_err(Error::from)?;
    for (i, t) in grid.points().iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(paths.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn fit_options(c: &FitControl) -> Result<FitOptions, CliError> {
    let mut bounds = BTreeMap::new();
    for spec in &c.bounds {
        let parsed = spec.split_once('=').and_then(|(name, range)| {
            let (lo, hi) = range.split_once(':')?;
            Some((name.trim().to_string(), lo.trim().parse::<f64>().ok()?, hi.trim().parse::<f64>().ok()?))
        });
        match parsed {
            Some((name, lo, hi)) => {
                bounds.insert(name, (lo, hi));
            }
            None => return Err(CliError::Usage(format!("bad --bound `{spec}`, expected NAME=LO:HI"))),
        }
    }
    Ok(FitOptions {
        anchor: match c.anchor {
            AnchorArg::First => Anchor::FirstObservation,
            AnchorArg::Origin => Anchor::Origin,
        },
        level: c.level,
        bounds,
        rel_tol: c.rel_tol,
        max_iter: c.max_iter,
        flat_epsilon: c.flat_epsilon,
        confidence_intervals: !c.no_ci,
        ..FitOptions::default()
    })
}

#[derive(Serialize)]
struct FitOutput<'a> {
    data: &'a DataInfo,
    fit: &'a logrange_gp::FitResult,
}

fn fit(a: FitArgs) -> Result<(), CliError> {
    let (traj, info) = input::load(&a.input)?;
    let reg = registry(a.model.weight.as_deref(), a.model.singularity)?;
    let opts = fit_options(&a.control)?;
    let r = fit_by_name(&reg, &family_name(&a.model), &traj, &opts)?;
    log::info!("{}: log-lik {:.4}, AIC {:.4}", r.model, r.log_lik, r.aic);
    write_json(&a.out, "fit", FitOutput { data: &info, fit: &r })
}

#[derive(Serialize)]
struct CompareOutput<'a> {
    data: &'a DataInfo,
    comparison: &'a logrange_gp::fit::Comparison,
}

fn compare(a: CompareArgs) -> Result<(), CliError> {
    let (traj, info) = input::load(&a.input)?;
    let reg = registry(a.weight.as_deref(), a.singularity)?;
    let opts = fit_options(&a.control)?;
    let names: Vec<&str> = a.models.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    let c = compare_models(&reg, &traj, &names, &opts)?;
    if c.winner.is_none() {
        return Err(Error::Optimization("every family failed to fit".into()).into());
    }
    if let Some(path) = &a.table {
        let mut w = csv::Writer::from_writer(open_out(path)?);
        w.write_record(["rank", "family", "aic", "log_lik", "sigma_hat", "theta_hat", "boundary_beta_zero", "beta_star", "error"])
            .map_err(Error::from)?;
        for (i, row) in c.rows.iter().enumerate() {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let theta: Vec<String> = row.theta_hat.iter().map(|(k, v)| format!("{k}={v}")).collect();
            w.write_record([
                (i + 1).to_string(),
                row.family.clone(),
                opt(row.aic),
                opt(row.log_lik),
                opt(row.sigma_hat),
                theta.join(";"),
                row.flags.boundary_beta_zero.to_string(),
                opt(row.flags.flat_profile_beta_star),
                row.error.clone().unwrap_or_default(),
            ])
            .map_err(Error::from)?;
        }
        w.flush()?;
    }
    write_json(
        &a.out,
        "compare",
        CompareOutput {
            data: &info,
            comparison: &c,
        },
    )
}

#[derive(Serialize)]
struct PredictReport<'a> {
    data: &'a DataInfo,
    model: &'a KernelModel,
    n_train: usize,
    n_test: usize,
    metric: ErrorMetric,
    error: Option<f64>,
    level: f64,
    jitter: f64,
}

fn model_from_fit_json(path: &std::path::Path) -> Result<KernelModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let model = v
        .pointer("/fit/model")
        .or_else(|| v.get("model"))
        .ok_or_else(|| Error::Data(format!("{} has no fitted model", path.display())))?;
    Ok(serde_json::from_value(model.clone())?)
}

fn predict(a: PredictArgs) -> Result<(), CliError> {
    let (traj, info) = input::load(&a.input)?;
    let (train, test) = traj.split(a.train_fraction)?;
    let opts = fit_options(&a.control)?;
    let model = match &a.fit {
        Some(path) => model_from_fit_json(path)?,
        None => {
            let reg = registry(a.model.weight.as_deref(), a.model.singularity)?;
            let quick = FitOptions {
                confidence_intervals: false,
                ..opts.clone()
            };
            fit_by_name(&reg, &family_name(&a.model), &train, &quick)?.model
        }
    };
    let popts = PredictOptions {
        anchor: opts.anchor,
        method: if a.mc_paths == 0 {
            PredictMethod::Exact
        } else {
            PredictMethod::MonteCarlo {
                paths: a.mc_paths,
                seed: a.seed,
            }
        },
        level: a.control.level,
        metric: match a.metric {
            MetricArg::Pointwise => ErrorMetric::Pointwise,
            MetricArg::SdScaled => ErrorMetric::SdScaled,
        },
    };
    let p = predict_held_out(&model, &train, &test, &popts)?;
    if let Some(e) = p.error {
        eprintln!("{model}: prediction error ({:?}) over {} points: {e:.6}", popts.metric, test.len());
    }
    p.write_csv(open_out(&a.out)?)?;
    if let Some(path) = &a.report {
        write_json(
            path,
            "predict",
            PredictReport {
                data: &info,
                model: &model,
                n_train: train.len(),
                n_test: test.len(),
                metric: popts.metric,
                error: p.error,
                level: p.level,
                jitter: p.jitter,
            },
        )?;
    }
    Ok(())
}

fn diagnose_cmd(a: DiagnoseArgs) -> Result<(), CliError> {
    let (traj, info) = input::load(&a.input)?;
    let cfg = KpssConfig {
        critical_value: a.critical_value,
        bandwidth: a.bandwidth,
    };
    let report = diagnose(&traj.values, a.window, a.max_lag, &cfg)?;
    eprintln!("note: the ADF unit-root test is not included; use a standard package (e.g. statsmodels adfuller) alongside this report");
    if let Some(dir) = &a.csv_dir {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("rolling.csv")).map_err(Error::from)?;
        w.write_record(["time", "mean", "variance"]).map_err(Error::from)?;
        // each window is reported at its last time point
        for (i, (m, v)) in report.rolling.means.iter().zip(&report.rolling.variances).enumerate() {
            let t = traj.times()[i + a.window - 1];
            w.write_record([t.to_string(), m.to_string(), v.to_string()]).map_err(Error::from)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("acf.csv")).map_err(Error::from)?;
        w.write_record(["lag", "acf", "acf_differenced", "bound"]).map_err(Error::from)?;
        for (k, r) in report.acf.values.iter().enumerate() {
            let d = report
                .differenced_acf
                .as_ref()
                .and_then(|a| a.values.get(k))
                .map(|v| v.to_string())
                .unwrap_or_default();
            w.write_record([k.to_string(), r.to_string(), d, report.acf.bound.to_string()])
                .map_err(Error::from)?;
        }
        w.flush()?;
    }
    #[derive(Serialize)]
    struct Out<'a> {
        data: &'a DataInfo,
        report: &'a logrange_gp::diagnostics::DiagnosticsReport,
    }
    write_json(&a.out, "diagnose", Out { data: &info, report: &report })
}
