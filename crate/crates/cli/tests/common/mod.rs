#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sglanet::checkpoint;
use sglanet::config::{Config, Preset};
use sglanet::training::Trainer;

pub fn sgla() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sgla"))
}

pub fn run(args: &[&str]) -> Output {
    sgla().args(args).output().expect("sgla runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn json_lines(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).expect("line is JSON")).collect()
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes `text` as a config file under `dir`.
pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Saves the freshly initialized parameters of `config` to `dir/file`, with its config beside it.
pub fn untrained_checkpoint(config: Config, dir: &Path, file: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("config.toml"), config.to_toml()).unwrap();
    let trainer = Trainer::new(config).unwrap();
    let p = dir.join(file);
    checkpoint::save(&trainer.store, &p).unwrap();
    p
}

pub fn desk() -> Config {
    Config::preset(Preset::Desk)
}
