use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use amdft_core::bnn::train_head_model;
use amdft_core::data::{
    encode, fit_scaler, generate_synthetic, read_csv, ColumnKind, DataSchema, DesignMatrix, RecordTable,
};
use amdft_core::gpr::fit_gpr;
use amdft_core::harness::{
    dual_mc_split, fraction_sweep, run_evaluation, uq_run, uq_trend_study, write_comparison_csv, write_iterations_csv,
    write_sweep_csv, write_uq_trend_csv, EvalReport, NoObserver, RunConfig, SplitFractions,
};
use amdft_core::metrics::{parity_table, rmse, ParityTable, ProbabilisticRegressor};
use amdft_core::{Error, Result};

use crate::manifest::{now, sha256_hex, OutputDir, RunManifest, Versions};
use crate::{Cli, Command};

pub struct LoadedData {
    pub table: RecordTable,
    pub matrix: DesignMatrix,
    pub description: String,
    pub sha256: String,
}

struct Context {
    config: RunConfig,
    config_path: Option<String>,
    config_sha256: Option<String>,
}

fn load_config(cli: &Cli) -> Result<Context> {
    let (mut config, config_path, config_sha256) = match &cli.config {
        Some(p) => {
            let bytes = std::fs::read(p)?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let cfg = RunConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            (cfg, Some(p.display().to_string()), Some(sha256_hex(&bytes)))
        }
        None => (RunConfig::default(), None, None),
    };
    if let Some(p) = cli.preset {
        config.preset = Some(p.into());
    }
    config = config.resolved();
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    Ok(Context {
        config,
        config_path,
        config_sha256,
    })
}

pub fn load_data(cli: &Cli, config: &RunConfig) -> Result<LoadedData> {
    let schema_path = cli.schema.as_ref().or(config.data.schema.as_ref());
    let schema = match schema_path {
        Some(p) => DataSchema::from_file(p)?,
        None => DataSchema::default_schema(),
    };
    let table = if let Some(path) = cli.data.as_ref().or(config.data.path.as_ref()) {
        let bytes = std::fs::read(path)?;
        let table = read_csv(&bytes[..], &schema)?;
        return finish_load(table, path.display().to_string(), sha256_hex(&bytes));
    } else if let Some(s) = &config.data.synthetic {
        generate_synthetic(s.n, s.noise_sigma, s.seed)?
    } else {
        return Err(Error::Schema(
            "no data source: pass --data or set [data] in the config".into(),
        ));
    };
    let s = config.data.synthetic.as_ref().expect("synthetic branch");
    let description = format!("synthetic(n={}, noise_sigma={}, seed={})", s.n, s.noise_sigma, s.seed);
    let sha = sha256_hex(description.as_bytes());
    finish_load(table, description, sha)
}

fn finish_load(table: RecordTable, description: String, sha256: String) -> Result<LoadedData> {
    let matrix = encode(&table)?;
    Ok(LoadedData {
        table,
        matrix,
        description,
        sha256,
    })
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let started_at = now();
    let ctx = load_config(cli)?;
    let data = load_data(cli, &ctx.config)?;
    let mut out = OutputDir::create(&cli.out)?;
    let result = match &cli.command {
        Command::Ingest => ingest(&data, &mut out),
        Command::Evaluate => evaluate(&ctx.config, &data, &mut out),
        Command::Sweep => sweep(&ctx.config, &data, &mut out),
        Command::Uq { draws } => uq(&ctx.config, *draws, &data, &mut out),
    };
    // the manifest is written even when the command failed part-way
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        config_path: ctx.config_path,
        config_sha256: ctx.config_sha256,
        resolved_seed: ctx.config.protocol.seed,
        versions: Versions::default(),
        input: data.description,
        input_sha256: data.sha256,
        outputs: Vec::new(),
        started_at,
        finished_at: String::new(),
    };
    out.finish(manifest)?;
    result
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    rows: usize,
    width: usize,
    column_labels: Vec<String>,
    levels: BTreeMap<String, Vec<String>>,
    target_mean_mm: f64,
    target_std_mm: f64,
}

fn ingest(data: &LoadedData, out: &mut OutputDir) -> Result<()> {
    let m = &data.matrix;
    let schema = data.table.schema();
    let levels = schema
        .selected_columns()
        .filter(|c| matches!(c.kind, ColumnKind::Categorical))
        .map(|c| {
            let seen: BTreeSet<String> = (0..data.table.len())
                .map(|r| {
                    data.table
                        .value_text(r, schema.column_index(&c.name).expect("selected column"))
                })
                .collect();
            let mut lv = c.levels.clone();
            lv.extend(seen.into_iter().filter(|s| !c.levels.contains(s)));
            (c.name.clone(), lv)
        })
        .collect();
    let y = m.targets();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let summary = IngestSummary {
        rows: m.n_rows(),
        width: m.width(),
        column_labels: m.column_labels(),
        levels,
        target_mean_mm: mean,
        target_std_mm: std,
    };
    out.write_with("encoded.csv", |buf| m.write_csv(buf))?;
    out.write_json("summary.json", &summary)?;
    println!("{} rows, width {}", summary.rows, summary.width);
    Ok(())
}

fn check_families(config: &RunConfig) -> Result<()> {
    if config.models.is_empty() {
        return Err(Error::Config("no [[models]] entries in the config".into()));
    }
    let mut seen = BTreeSet::new();
    for g in &config.models {
        if !seen.insert(g.family) {
            return Err(Error::Config(format!("family `{}` is listed twice", g.family)));
        }
    }
    Ok(())
}

fn write_parity(out: &mut OutputDir, name: &str, table: &ParityTable) -> Result<()> {
    out.write_with(name, |buf| table.write_csv(buf))
}

fn um(mm: f64) -> String {
    format!("{:.2} μm", mm * 1000.0)
}

#[derive(Serialize)]
struct Failure<'a> {
    family: String,
    error: &'a str,
}

fn evaluate(config: &RunConfig, data: &LoadedData, out: &mut OutputDir) -> Result<()> {
    check_families(config)?;
    config.protocol.validate()?;
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut first_error = None;
    let mut summary = String::new();
    for grid in &config.models {
        let fam = grid.family.name();
        match run_evaluation(grid, &data.matrix, &config.protocol, &NoObserver) {
            Ok(r) => {
                out.write_json(&format!("eval_{fam}.json"), &r)?;
                out.write_with(&format!("eval_{fam}_iterations.csv"), |b| write_iterations_csv(b, &r))?;
                if let Some(p) = &r.best_parity {
                    write_parity(out, &format!("parity_{fam}.csv"), p)?;
                }
                summary.push_str(&format!(
                    "{fam}: average test RMSE {} (max {}, min {}, range {}), {} of {} iterations failed\n",
                    um(r.test.average),
                    um(r.test.maximum),
                    um(r.test.minimum),
                    um(r.test.prediction_range),
                    r.failed,
                    r.iterations.len()
                ));
                reports.push(r);
            }
            Err(e) => {
                let msg = e.to_string();
                out.write_json(
                    &format!("eval_{fam}.failed.json"),
                    &Failure {
                        family: fam.into(),
                        error: &msg,
                    },
                )?;
                summary.push_str(&format!("{fam}: FAILED: {msg}\n"));
                first_error.get_or_insert(e);
            }
        }
    }
    out.write_with("comparison.csv", |b| write_comparison_csv(b, &reports))?;
    out.write_bytes("summary.txt", summary.as_bytes())?;
    print!("{summary}");
    first_error.map_or(Ok(()), Err)
}

fn sweep(config: &RunConfig, data: &LoadedData, out: &mut OutputDir) -> Result<()> {
    check_families(config)?;
    config.protocol.validate()?;
    let mut first_error = None;
    for grid in &config.models {
        let fam = grid.family.name();
        match fraction_sweep(
            grid,
            &data.matrix,
            &config.sweep.fractions,
            &config.protocol,
            &NoObserver,
        ) {
            Ok(r) => {
                out.write_json(&format!("sweep_{fam}.json"), &r)?;
                out.write_with(&format!("sweep_{fam}.csv"), |b| write_sweep_csv(b, &r))?;
                for (row, parity) in r.rows.iter().zip(&r.parity) {
                    if let Some(p) = parity {
                        let pct = (row.fraction * 100.0).round() as u32;
                        write_parity(out, &format!("sweep_{fam}_parity_{pct:02}.csv"), p)?;
                    }
                }
                for row in &r.rows {
                    println!(
                        "{fam} @ {:.0}%: test RMSE {} ± {}",
                        row.fraction * 100.0,
                        um(row.test_mean),
                        um(row.test_std)
                    );
                }
            }
            Err(e) => {
                let msg = e.to_string();
                out.write_json(
                    &format!("sweep_{fam}.failed.json"),
                    &Failure {
                        family: fam.into(),
                        error: &msg,
                    },
                )?;
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

#[derive(Debug, Serialize)]
struct ModelSummary {
    model: String,
    train_fraction: f64,
    seed: u64,
    test_rmse_mm: f64,
    aleatoric_mm: f64,
    epistemic_mm: Option<f64>,
}

/// Scaled train/test matrices for the single parity runs.
fn parity_split(
    data: &DesignMatrix,
    fraction: f64,
    seed: u64,
    scaler: amdft_core::data::ScalerMethod,
) -> Result<(DesignMatrix, DesignMatrix)> {
    let plan = dual_mc_split(
        data.n_rows(),
        SplitFractions::new(fraction, 1.0 - fraction, 0.0)?,
        seed,
        0,
    )?;
    if plan.test.is_empty() {
        return Err(Error::Config(format!(
            "training fraction {fraction} leaves no test rows"
        )));
    }
    let train = data.select_rows(&plan.train);
    let s = fit_scaler(&train, scaler)?;
    Ok((s.apply(&train)?, s.apply(&data.select_rows(&plan.test))?))
}

fn dist_summary(
    name: &str,
    model: &dyn ProbabilisticRegressor,
    test: &DesignMatrix,
    fraction: f64,
    seed: u64,
    out: &mut OutputDir,
) -> Result<ModelSummary> {
    let dist = model.predict_dist(test.features())?;
    let table = parity_table(test.targets(), &dist.means, Some(&dist.stddevs), None)?;
    write_parity(out, &format!("uq_{name}_parity.csv"), &table)?;
    Ok(ModelSummary {
        model: name.into(),
        train_fraction: fraction,
        seed,
        test_rmse_mm: rmse(&dist.means, test.targets())?,
        aleatoric_mm: dist.stddevs.iter().sum::<f64>() / dist.len() as f64,
        epistemic_mm: None,
    })
}

fn uq(config: &RunConfig, draws: Option<usize>, data: &LoadedData, out: &mut OutputDir) -> Result<()> {
    let spec = &config.uq;
    let mut study = spec.study.clone();
    if let Some(d) = draws {
        study.draws = d;
    }
    study.validate()?;
    let fraction = spec.parity_fraction;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "parity_fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let seed = spec.ensemble.seed;

    let trend = uq_trend_study(&spec.ensemble, &data.matrix, &study)?;
    out.write_json("uq_trend.json", &trend)?;
    out.write_with("uq_trend.csv", |b| write_uq_trend_csv(b, &trend))?;

    let mut summaries = Vec::new();
    let run = uq_run(&spec.ensemble, &data.matrix, fraction, seed, study.draws, study.scaler)?;
    write_parity(out, "uq_ensemble_parity.csv", &run.parity)?;
    summaries.push(ModelSummary {
        model: "ensemble".into(),
        train_fraction: fraction,
        seed,
        test_rmse_mm: run.replicate.rmse,
        aleatoric_mm: run.replicate.aleatoric,
        epistemic_mm: Some(run.replicate.epistemic),
    });

    if spec.gpr.is_some() || spec.head.is_some() {
        let (train, test) = parity_split(&data.matrix, fraction, seed, study.scaler)?;
        if let Some(g) = &spec.gpr {
            let model = fit_gpr(&train, g)?;
            summaries.push(dist_summary("gpr", &model, &test, fraction, seed, out)?);
        }
        if let Some(h) = &spec.head {
            let model = train_head_model(&train, h)?;
            summaries.push(dist_summary("head", &model, &test, fraction, seed, out)?);
        }
    }
    out.write_json("uq_summary.json", &summaries)?;
    for row in &trend.rows {
        println!(
            "train {:.0}%: aleatoric {}, epistemic {}, RMSE {}",
            row.fraction * 100.0,
            um(row.aleatoric_mean),
            um(row.epistemic_mean),
            um(row.rmse_mean)
        );
    }
    for s in &summaries {
        println!(
            "{} @ {:.0}%: RMSE {}, aleatoric {}",
            s.model,
            s.train_fraction * 100.0,
            um(s.test_rmse_mm),
            um(s.aleatoric_mm)
        );
    }
    Ok(())
}
