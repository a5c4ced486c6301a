use crate::config::{scenario_splits, seed_offset, seed_override, RunConfig};
use crate::{CliError, Mode};
use fairweight::data::{load_csv, load_csv_auto, write_csv, CsvSchema};
use fairweight::model::{load_checkpoint, save_checkpoint};
use fairweight::pipeline::{
    extreme_weights, fairif_train, table_row, train_stage_one, validation_size_sweep, SplitReports, SweepEntry,
    REPORT_SCHEMA,
};
use fairweight::reweight::WeightFile;
use fairweight::{FairnessReport, RunReport};
use serde::Serialize;
use std::path::Path;

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn generate(scenario: &Path, out: &Path) -> Result<(), CliError> {
    let splits = scenario_splits(scenario)?;
    create_dir(out)?;
    for (name, data) in ["train", "val", "test"].iter().zip(&splits) {
        let path = out.join(format!("{name}.csv"));
        write_csv(data, &path)?;
        println!("{name}: {} rows -> {}", data.len(), path.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ErmReport {
    schema: u32,
    mode: &'static str,
    erm: SplitReports,
    converged: bool,
    epochs_run: usize,
    final_grad_norm: f64,
}

#[derive(Debug, Serialize)]
struct FairIfReport<'a> {
    mode: &'static str,
    #[serde(flatten)]
    report: &'a RunReport,
}

pub fn train(config: &Path, mode: Mode) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, seed_override()?)?;
    let fcfg = cfg.fairif_config()?;
    fcfg.validate()?;
    let (train, val, test) = cfg.load_data()?;
    let out = &cfg.output_dir;
    create_dir(out)?;

    println!("{}", RunReport::TABLE_HEADER);
    match mode {
        Mode::Erm => {
            let stage1 = train_stage_one(&train, &fcfg).map_err(|e| fairweight::Error::Stage {
                stage: "stage one",
                source: Box::new(e),
            })?;
            let reports = SplitReports::evaluate(&stage1.model, &train, &val, test.as_ref())?;
            save_checkpoint(&stage1.model, out.join("erm_model.ckpt"))?;
            println!("{}", table_row("erm", reports.headline()));
            write_json(
                &ErmReport {
                    schema: REPORT_SCHEMA,
                    mode: "erm",
                    erm: reports,
                    converged: stage1.converged,
                    epochs_run: stage1.epochs_run,
                    final_grad_norm: stage1.final_grad_norm,
                },
                &out.join("run_report.json"),
            )?;
        }
        Mode::Fairif => {
            let outcome = fairif_train(&train, &val, test.as_ref(), &fcfg)?;
            save_checkpoint(&outcome.erm_model, out.join("erm_model.ckpt"))?;
            save_checkpoint(&outcome.fair_model, out.join("fair_model.ckpt"))?;
            WeightFile::new(&outcome.epsilon, &outcome.weights).write(out.join("weights.csv"))?;
            outcome.coefficients.write_csv(out.join("influence.csv"))?;
            for row in outcome.report.table_rows() {
                println!("{row}");
            }
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            write_json(
                &FairIfReport {
                    mode: "fairif",
                    report: &outcome.report,
                },
                &out.join("run_report.json"),
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluateOutput {
    schema: u32,
    #[serde(flatten)]
    report: FairnessReport,
}

pub fn evaluate(checkpoint: &Path, data: &Path) -> Result<(), CliError> {
    let model = load_checkpoint(checkpoint)?;
    let data = load_csv(data, &CsvSchema::default())?;
    let report = FairnessReport::evaluate(&model, &data)?;
    let out = EvaluateOutput {
        schema: REPORT_SCHEMA,
        report,
    };
    let text = serde_json::to_string_pretty(&out).map_err(|e| CliError::Input(e.to_string()))?;
    println!("{text}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepOutput<'a> {
    schema: u32,
    subsample_seed: u64,
    entries: &'a [SweepEntry],
}

const SWEEP_HEADER: &str = "fraction,val_size,status,accuracy,acc_group0,acc_group1,ad,aod,eod,tpr0,tpr1,tnr0,tnr1";

fn sweep_row(e: &SweepEntry) -> String {
    match &e.report {
        Some(r) => {
            let row = table_row("ok", r.fairif.headline());
            format!("{},{},{row}", e.fraction, e.val_size)
        }
        None => format!("{},{},skipped,,,,,,,,,,", e.fraction, e.val_size),
    }
}

pub fn sweep(config: &Path, fractions: &[f64], jobs: Option<usize>) -> Result<(), CliError> {
    if jobs == Some(0) {
        return Err(CliError::Config("--jobs must be positive".into()));
    }
    let cfg = RunConfig::load(config, seed_override()?)?;
    let fcfg = cfg.fairif_config()?;
    let (train, val, test) = cfg.load_data()?;
    let subsample_seed = cfg.derived_seed(seed_offset::SUBSAMPLE);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let entries =
        pool.install(|| validation_size_sweep(&train, &val, test.as_ref(), &fcfg, fractions, subsample_seed))?;

    let out = &cfg.output_dir;
    create_dir(out)?;
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for e in &entries {
        csv += &sweep_row(e);
        csv.push('\n');
        for w in &e.warnings {
            eprintln!("warning (fraction {}): {w}", e.fraction);
        }
    }
    let csv_path = out.join("sweep.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| CliError::io(&csv_path, e))?;
    write_json(
        &SweepOutput {
            schema: REPORT_SCHEMA,
            subsample_seed,
            entries: &entries,
        },
        &out.join("sweep.json"),
    )?;
    print!("{csv}");
    Ok(())
}

pub fn weights_report(weights: &Path, train: &Path, top: usize) -> Result<(), CliError> {
    let file = WeightFile::read(weights)?;
    let data = load_csv_auto(train)?;
    if data.len() != file.epsilon.len() {
        return Err(CliError::Input(format!(
            "{} has {} weights but {} has {} rows",
            weights.display(),
            file.epsilon.len(),
            train.display(),
            data.len()
        )));
    }
    let (up, down) = extreme_weights(&file.epsilon, &file.weights, top);
    println!("direction,rank,index,epsilon,weight,label,group");
    for (direction, list) in [("up", &up), ("down", &down)] {
        for (rank, s) in list.iter().enumerate() {
            let group = data.group(s.index).map(|g| g.to_string()).unwrap_or_default();
            println!(
                "{direction},{},{},{:?},{:?},{},{group}",
                rank + 1,
                s.index,
                s.epsilon,
                s.weight,
                data.sample(s.index).label
            );
        }
    }
    Ok(())
}
