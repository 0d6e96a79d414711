//! Helpers for command tests: tiny corpora and checkpoints built
//! through the public command surface itself.

use std::path::{Path, PathBuf};

use super::run;

pub fn synth_corpus(dir: &Path, stays: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("corpus-{seed}"));
    let code = run([
        "evseq",
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--n-stays",
        &stays.to_string(),
        "--n-features",
        "5",
        "--horizon-hours",
        "8",
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(code, 0, "synth failed");
    out
}

pub fn tiny_model_conf(dir: &Path) -> PathBuf {
    let conf = dir.join("tiny-model.conf");
    std::fs::write(&conf, "model.d=16\nmodel.h=2\nmodel.p=8\nmodel.layers=1\n").unwrap();
    conf
}

pub fn pretrain_ckpt(dir: &Path, corpus: &Path, objective: &str, seed: u64) -> PathBuf {
    let conf = tiny_model_conf(dir);
    let ckpt = dir.join(format!("{objective}-{seed}.ckpt"));
    let code = run([
        "evseq",
        "pretrain",
        "--data",
        corpus.to_str().unwrap(),
        "--objective",
        objective,
        "--out",
        ckpt.to_str().unwrap(),
        "--config",
        conf.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(code, 0, "pretrain failed");
    ckpt
}
