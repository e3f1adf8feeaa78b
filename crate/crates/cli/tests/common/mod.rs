#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use lightnet::data::{encode_idx_images, encode_idx_labels, IdxImages};

/// Writes a 4x4-pixel, 10-class IDX dataset where class `c` lights up pixel `c`.
pub fn write_fixture(dir: &Path, n_train: usize, n_test: usize) {
    let make = |n: usize, offset: usize| {
        let mut pixels = Vec::with_capacity(n * 16);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i * 7 + offset) % 10;
            for p in 0..16 {
                let noise = ((i * 31 + p * 17 + offset) % 60) as u8;
                pixels.push(if p == label { 200 + noise / 2 } else { noise });
            }
            labels.push(label as u8);
        }
        (IdxImages { count: n, rows: 4, cols: 4, pixels }, labels)
    };
    std::fs::create_dir_all(dir).unwrap();
    for (prefix, n, offset) in [("train", n_train, 0), ("t10k", n_test, 3)] {
        let (images, labels) = make(n, offset);
        std::fs::write(dir.join(format!("{prefix}-images")), encode_idx_images(&images)).unwrap();
        std::fs::write(dir.join(format!("{prefix}-labels")), encode_idx_labels(&labels)).unwrap();
    }
}

/// Config header for a 16-8-10 net on the fixture in `idx_dir`.
pub fn base_config(idx_dir: &Path, out: &Path, repeats: usize, epochs: usize) -> String {
    format!(
        r#"name = "fixture"
architecture = [16, 8, 10]
repeats = {repeats}
seed = 11
output_dir = "{out}"

[data]
idx_dir = "{idx}"

[[initializers]]
kind = "glorot_uniform"

[training]
learning_rate = 0.05
batch_size = 10
epochs = {epochs}
"#,
        out = out.display(),
        idx = idx_dir.display()
    )
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

pub fn lightnet(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_lightnet")).args(args).output().unwrap()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}
