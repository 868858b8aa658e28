use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;
use sglanet::checkpoint;
use sglanet::config::Config;
use sglanet::training::{load_dataset, DatasetIndex, LoadedSplit, MetricRecord, Split, Trainer};
use sglanet::verify::{self, Scope};

use crate::failure::{Context, ExitCode, Failure};
use crate::{emit, ConfigArgs};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.sgla";

pub fn epoch_checkpoint(epoch: usize) -> String {
    format!("epoch-{epoch}.sgla")
}

/// Loads `--config`, else the `config.toml` beside `checkpoint`, else the bare preset,
/// then applies the flag overrides.
pub fn resolve_config(args: &ConfigArgs, checkpoint: Option<&Path>) -> Result<Config, Failure> {
    let beside = checkpoint.and_then(Path::parent).map(|d| d.join(CONFIG_FILE)).filter(|p| p.is_file());
    let mut config = match args.config.clone().or(beside) {
        Some(path) => Config::load(&path, args.preset).or_exit(ExitCode::Config)?,
        None => Config::preset(args.preset),
    };
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(g) = args.gamma1 {
        config.train.gamma1 = g;
    }
    if let Some(g) = args.gamma2 {
        config.train.gamma2 = g;
    }
    config.validate().or_exit(ExitCode::Config)?;
    Ok(config)
}

/// A trainer whose parameters come from `path`.
pub fn load_model(config: Config, path: &Path) -> Result<Trainer, Failure> {
    let mut trainer = Trainer::new(config).or_exit(ExitCode::Config)?;
    checkpoint::load(&mut trainer.store, path).or_exit(ExitCode::Checkpoint)?;
    Ok(trainer)
}

fn index(config: &Config, data: &Path) -> Result<DatasetIndex, Failure> {
    if !data.is_dir() {
        return Err(Failure::new(ExitCode::Data, format!("data root {} is not a directory", data.display())));
    }
    let index = load_dataset(data, config.train.split, config.train.seed).or_exit(ExitCode::Data)?;
    if index.skipped > 0 {
        eprintln!("warning: skipped {} unreadable image files", index.skipped);
    }
    if index.classes.len() != config.model.classes {
        return Err(Failure::new(
            ExitCode::Config,
            format!("dataset has {} classes, configuration expects {}", index.classes.len(), config.model.classes),
        ));
    }
    Ok(index)
}

fn load_split(config: &Config, index: &DatasetIndex, split: Split) -> Result<LoadedSplit, Failure> {
    let norm = sglanet::training::Normalization { mean: config.train.mean, std: config.train.std };
    LoadedSplit::load(index.split(split), config.model.resolution, &norm).or_exit(ExitCode::Data)
}

fn io(code: ExitCode, path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(code, format!("{}: {e}", path.display()))
}

fn save(trainer: &Trainer, path: &Path) -> Result<(), Failure> {
    checkpoint::save(&trainer.store, path).or_exit(ExitCode::Checkpoint)
}

pub fn train(args: &ConfigArgs, data: &Path, out: &Path) -> Result<(), Failure> {
    let config = resolve_config(args, None)?;
    let index = index(&config, data)?;
    let train = load_split(&config, &index, Split::Train)?;
    if train.is_empty() {
        return Err(Failure::new(ExitCode::Data, "training split is empty"));
    }
    let val = load_split(&config, &index, Split::Val)?;
    fs::create_dir_all(out).map_err(io(ExitCode::Data, out))?;
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, config.to_toml()).map_err(io(ExitCode::Data, &config_path))?;
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(io(ExitCode::Data, &metrics_path))?);

    let mut trainer = Trainer::new(config).or_exit(ExitCode::Config)?;
    let mut best: Option<f64> = None;
    for epoch in 0..trainer.config.train.epochs {
        let summary = trainer.train_epoch(&train, epoch).or_exit(ExitCode::Data)?;
        let mut records = vec![MetricRecord::new(epoch, Split::Train, &summary.running, &summary.losses, summary.lr)];
        let mut score = summary.running.top1;
        if !val.is_empty() {
            let (report, losses) = trainer.evaluate(&val).or_exit(ExitCode::Data)?;
            records.push(MetricRecord::new(epoch, Split::Val, &report, &losses, summary.lr));
            score = report.top1;
        }
        for record in &records {
            let line = serde_json::to_string(record).expect("metric records serialize");
            emit(&line);
            writeln!(metrics, "{line}").map_err(io(ExitCode::Data, &metrics_path))?;
        }
        metrics.flush().map_err(io(ExitCode::Data, &metrics_path))?;
        save(&trainer, &out.join(epoch_checkpoint(epoch)))?;
        if best.map_or(true, |b| score >= b) {
            best = Some(score);
            save(&trainer, &out.join(BEST_CHECKPOINT))?;
        }
    }
    if best.is_none() {
        save(&trainer, &out.join(BEST_CHECKPOINT))?;
    }
    Ok(())
}

pub fn eval(path: &Path, args: &ConfigArgs, data: &Path, split: Split) -> Result<(), Failure> {
    let config = resolve_config(args, Some(path))?;
    let trainer = load_model(config, path)?;
    let index = index(&trainer.config, data)?;
    let loaded = load_split(&trainer.config, &index, split)?;
    if loaded.is_empty() {
        return Err(Failure::new(ExitCode::Data, format!("split {split} of {} is empty", data.display())));
    }
    let (report, _) = trainer.evaluate(&loaded).or_exit(ExitCode::Data)?;
    emit(json!({ "top1": report.top1, "top5": report.top5, "n": report.n }));
    Ok(())
}

pub fn gradcheck(scope: Scope) -> Result<(), Failure> {
    let outcomes = verify::run_suite(scope).or_exit(ExitCode::Verification)?;
    let mut failed = Vec::new();
    for o in &outcomes {
        let line = json!({
            "scope": o.scope.to_string(),
            "op": o.name,
            "max_rel_error": o.max_rel_error,
            "probed": o.probed,
            "refined": o.refined,
            "passed": o.passed(),
        });
        emit(&line);
        if !o.passed() {
            failed.push(format!("{} ({:.3e})", o.name, o.max_rel_error));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(ExitCode::Verification, format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn inspect(path: &Path) -> Result<(), Failure> {
    let entries = checkpoint::read(path).or_exit(ExitCode::Checkpoint)?;
    for e in &entries {
        let data = e.tensor.data();
        let mean = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
        let line = json!({
            "name": e.name,
            "shape": e.tensor.shape(),
            "numel": data.len(),
            "min": e.tensor.min_value(),
            "max": e.tensor.max_value(),
            "mean": mean,
        });
        emit(&line);
    }
    Ok(())
}

/// `out/<name>`, creating `out` first.
pub fn output_path(out: &Path, name: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(out).map_err(io(ExitCode::Data, out))?;
    Ok(out.join(name))
}
