//! The four subcommands. Every file in a run directory is written
//! atomically (temp file, then rename).

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use rsp_core::compress::{count_flops, count_params};
use rsp_core::data::checkpoint::{load_checkpoint, Checkpoint, CheckpointMeta};
use rsp_core::data::cifar::load_cifar10_dir;
use rsp_core::data::idx::load_mnist_dir;
use rsp_core::data::synth::synth_redundant;
use rsp_core::data::DatasetHandle;
use rsp_core::driver::{rsp_run, select_lambda, train_baseline as train_dense};
use rsp_core::nn::{ArchitectureDescriptor, ParameterSet};
use rsp_core::optim::split_accuracy;
use rsp_core::report::{join_widths, ModelMetrics, Report, RunMeta, REPORT_SCHEMA};
use rsp_core::util::write_atomic;

use crate::config::{DatasetKind, ExperimentConfig, Format};
use crate::CliError;

pub const BASELINE_FILE: &str = "baseline.rspc";
pub const PRUNED_FILE: &str = "pruned.rspc";
pub const REPORT_FILE: &str = "report.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(rsp_core::Error::from)?;
    write_file(path, text.as_bytes())
}

/// Creates the run directory and records the resolved config and seeds.
fn prepare_run_dir(c: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&c.out).map_err(io_err(&c.out))?;
    write_file(&c.out.join("config.toml"), c.to_toml().as_bytes())?;
    write_json(&c.out.join("seeds.json"), &c.seeds())
}

pub fn load_dataset(c: &ExperimentConfig) -> Result<DatasetHandle, CliError> {
    let seed = c.seeds().data;
    let dir = || c.data_dir.clone().expect("validated");
    let ds = match c.dataset {
        DatasetKind::Mnist => load_mnist_dir(dir(), seed)?,
        DatasetKind::Cifar10 => load_cifar10_dir(dir(), seed)?,
        DatasetKind::Synth => synth_redundant(
            seed,
            c.synth.samples,
            c.synth.informative_channels,
            c.synth.noise_channels,
            c.synth.classes,
        )?,
    };
    info!(
        "{}: {} train / {} validation / {} test samples",
        ds.provenance.source,
        ds.train.len(),
        ds.validation.len(),
        ds.test.len()
    );
    Ok(ds)
}

fn check_fits(arch: &ArchitectureDescriptor, ds: &DatasetHandle) -> Result<(), CliError> {
    if arch.input_shape != ds.sample_shape() {
        return Err(CliError::Config(format!(
            "checkpoint expects inputs {:?} but the dataset has {:?}",
            arch.input_shape,
            ds.sample_shape()
        )));
    }
    Ok(())
}

fn accuracy_or_none(arch: &ArchitectureDescriptor, params: &ParameterSet, split: &rsp_core::data::Split) -> Result<Option<f64>, CliError> {
    if split.is_empty() {
        return Ok(None);
    }
    Ok(Some(split_accuracy(arch, params, split)?))
}

fn metrics(arch: &ArchitectureDescriptor, params: &ParameterSet, ds: &DatasetHandle) -> Result<ModelMetrics, CliError> {
    Ok(ModelMetrics::of(
        arch,
        accuracy_or_none(arch, params, &ds.validation)?,
        accuracy_or_none(arch, params, &ds.test)?,
    )?)
}

fn print_metrics(format: Format, rows: &[(&str, &ModelMetrics)]) {
    let acc = |a: Option<f64>| a.map_or(String::new(), |a| format!("{a:.6}"));
    match format {
        Format::Table => {
            println!("{:<10} {:<24} {:>10} {:>12} {:>9} {:>9}", "model", "architecture", "params", "FLOPs", "val acc", "test acc");
            for (name, m) in rows {
                let pct = |a: Option<f64>| a.map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
                println!(
                    "{:<10} {:<24} {:>10} {:>12} {:>9} {:>9}",
                    name,
                    join_widths(&m.widths),
                    m.params,
                    m.flops,
                    pct(m.validation_accuracy),
                    pct(m.test_accuracy)
                );
            }
        }
        Format::Csv => {
            println!("model,architecture,params,flops,validation_accuracy,test_accuracy");
            for (name, m) in rows {
                println!(
                    "{name},{},{},{},{},{}",
                    join_widths(&m.widths),
                    m.params,
                    m.flops,
                    acc(m.validation_accuracy),
                    acc(m.test_accuracy)
                );
            }
        }
        Format::JsonLines => {
            for (name, m) in rows {
                println!("{}", json!({ "model": name, "metrics": m }));
            }
        }
    }
}

struct Baseline {
    arch: ArchitectureDescriptor,
    params: ParameterSet,
    metrics: ModelMetrics,
}

/// Trains the dense model and writes `baseline.rspc`, the training log
/// and `metrics.json` into the run directory.
fn fit_baseline(c: &ExperimentConfig, ds: &DatasetHandle) -> Result<Baseline, CliError> {
    let arch = c.architecture()?;
    let seeds = c.seeds();
    info!("training {} for {} epochs", arch.widths_string(), c.train.epochs);
    let out = train_dense(&arch, ds, seeds.init, c.train.epochs, &c.train_config())?;
    let mut log = String::new();
    for r in &out.records {
        log.push_str(&serde_json::to_string(r).map_err(rsp_core::Error::from)?);
        log.push('\n');
    }
    write_file(&c.out.join("training_log.jsonl"), log.as_bytes())?;
    let m = metrics(&arch, &out.params, ds)?;
    let meta = CheckpointMeta {
        seed: seeds.init,
        lambda: 0.0,
        epoch: out.records.len(),
        round: 0,
        accuracy: m.test_accuracy,
        accuracy_split: Some("test".into()),
    };
    let ckpt = Checkpoint::new(arch.clone(), out.params.clone(), meta)?;
    write_file(&c.out.join(BASELINE_FILE), &ckpt.to_bytes())?;
    write_json(&c.out.join("metrics.json"), &json!({ "baseline": m }))?;
    Ok(Baseline {
        arch,
        params: out.params,
        metrics: m,
    })
}

pub fn train_baseline(c: &ExperimentConfig) -> Result<(), CliError> {
    prepare_run_dir(c)?;
    let ds = load_dataset(c)?;
    let b = fit_baseline(c, &ds)?;
    print_metrics(c.format, &[("baseline", &b.metrics)]);
    Ok(())
}

fn load_baseline(c: &ExperimentConfig, ds: &DatasetHandle) -> Result<Baseline, CliError> {
    let path = c.baseline.clone().unwrap_or_else(|| c.out.join(BASELINE_FILE));
    if !path.exists() {
        return Err(CliError::Config(format!(
            "baseline: checkpoint {} not found (run train-baseline first or pass --from-scratch)",
            path.display()
        )));
    }
    let ckpt = load_checkpoint(&path)?;
    check_fits(&ckpt.arch, ds)?;
    let target = c.out.join(BASELINE_FILE);
    if !same_file(&path, &target) {
        write_file(&target, &ckpt.to_bytes())?;
    }
    let m = metrics(&ckpt.arch, &ckpt.params, ds)?;
    Ok(Baseline {
        arch: ckpt.arch,
        params: ckpt.params,
        metrics: m,
    })
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

pub fn compress(c: &ExperimentConfig) -> Result<(), CliError> {
    prepare_run_dir(c)?;
    let ds = load_dataset(c)?;
    let base = if c.from_scratch {
        fit_baseline(c, &ds)?
    } else {
        load_baseline(c, &ds)?
    };
    let status_path = c.out.join("status.json");
    let result = compress_from(c, &ds, &base);
    if let Err(e) = &result {
        // keep whatever the run managed to write, and say why it stopped
        warn!("compression aborted: {e}");
        write_json(&status_path, &json!({ "status": "failed", "error": e.to_string() }))?;
    }
    let report = result?;
    write_json(&status_path, &json!({ "status": "completed" }))?;
    match c.format {
        Format::Table => print!("{}", report.table()),
        Format::Csv => print!("{}", report.summary_csv()),
        Format::JsonLines => print!("{}", report.json_lines()),
    }
    Ok(())
}

fn compress_from(c: &ExperimentConfig, ds: &DatasetHandle, base: &Baseline) -> Result<Report, CliError> {
    let seeds = c.seeds();
    let (lambda0, search) = if c.rsp.lambda_grid {
        let s = select_lambda(
            &base.arch,
            &base.params,
            ds,
            &c.rsp.grid,
            c.explore_switch(),
            &c.train_config(),
            c.rsp.lambda_tolerance,
        )?;
        info!("lambda grid selected {:e}", s.selected);
        (s.selected, Some(s))
    } else {
        (c.rsp.lambda0, None)
    };
    let run = rsp_run(&c.rsp_config(lambda0), &base.arch, &base.params, ds)?;
    if let Some(stop) = run.stop {
        info!("stopped after {} rounds: {stop:?}", run.history.records.len());
    }
    let final_metrics = metrics(&run.arch, &run.params, ds)?;
    let meta = CheckpointMeta {
        seed: seeds.init,
        lambda: lambda0,
        epoch: run.finetune.best_epoch,
        round: run.history.records.len(),
        accuracy: final_metrics.test_accuracy,
        accuracy_split: Some("test".into()),
    };
    let ckpt = Checkpoint::new(run.arch.clone(), run.params.clone(), meta)?;
    write_file(&c.out.join(PRUNED_FILE), &ckpt.to_bytes())?;

    let report = Report::new(
        RunMeta {
            schema: REPORT_SCHEMA,
            config_hash: c.hash(),
            data_seed: seeds.data,
            init_seed: seeds.init,
            train_seed: seeds.train,
            version: env!("CARGO_PKG_VERSION").to_string(),
            dataset: ds.provenance.source.clone(),
        },
        base.arch.clone(),
        run.arch.clone(),
        base.metrics.clone(),
        final_metrics.clone(),
        lambda0,
        search,
        run.history,
    );
    report.check_consistency()?;
    write_file(&c.out.join(REPORT_FILE), report.to_json().as_bytes())?;
    write_file(&c.out.join("history.csv"), report.history_csv().as_bytes())?;
    write_file(&c.out.join("summary.csv"), report.summary_csv().as_bytes())?;
    write_json(
        &c.out.join("metrics.json"),
        &json!({ "baseline": base.metrics, "pruned": final_metrics, "compression_ratio": report.compression_ratio, "flops_speedup": report.flops_speedup }),
    )?;
    Ok(report)
}

pub fn evaluate(c: &ExperimentConfig, checkpoint: &Path) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let ds = load_dataset(c)?;
    check_fits(&ckpt.arch, &ds)?;
    let m = metrics(&ckpt.arch, &ckpt.params, &ds)?;
    debug_assert_eq!(m.flops, count_flops(&ckpt.arch)?);
    debug_assert_eq!(m.params, count_params(&ckpt.arch)?);
    if let (Some(saved), Some(split)) = (ckpt.meta.accuracy, ckpt.meta.accuracy_split.as_deref()) {
        info!("accuracy recorded at save time on {split}: {saved:.6}");
    }
    print_metrics(c.format, &[("model", &m)]);
    Ok(())
}

pub fn report(path: &Path, format: Format) -> Result<(), CliError> {
    let file: PathBuf = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
    let report = Report::from_json(&text)?;
    report.check_consistency()?;
    match format {
        Format::Table => print!("{}", report.table()),
        Format::Csv => print!("{}\n{}", report.history_csv(), report.summary_csv()),
        Format::JsonLines => print!("{}", report.json_lines()),
    }
    Ok(())
}
