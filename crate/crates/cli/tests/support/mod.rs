//! Synthetic PGM corpus and helpers for driving the `cbir` binary.
#![allow(dead_code)]

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbir_core::image::Image;
use cbir_core::io::write_pnm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 64;

/// Smooth periodic pattern; the class fixes the orientation.
pub fn class_image(class: u32, phase: f64, amp: f64) -> Image<f64> {
    let s = (SIDE - 1) as f64;
    Image::from_fn(SIDE, SIDE, 1, |y, x, _| {
        let (x, y) = (x as f64 / s, y as f64 / s);
        let v = match class % 4 {
            0 => (TAU * (x + phase)).sin(),
            1 => (TAU * (y + phase)).sin(),
            2 => (TAU * 1.5 * ((x - 0.5).hypot(y - 0.5)) + phase).cos(),
            _ => (TAU * 0.7 * (x + y) + phase).sin(),
        };
        0.5 + amp * v
    })
}

pub fn noise_image(seed: u64) -> Image<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(SIDE, SIDE, 1, |_, _, _| r.random_range(0.0..1.0))
}

pub struct Corpus {
    pub dataset: PathBuf,
    pub duplicate: PathBuf,
    pub duplicate_of: String,
    pub noise: PathBuf,
}

/// `n` labelled images in `root/data`, a copy of one of them and a noise
/// image outside it.
pub fn write_corpus(root: &Path, n: usize, seed: u64) -> Corpus {
    let dataset = root.join("data");
    std::fs::create_dir_all(&dataset).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = String::from("id,label\n");
    for i in 0..n {
        let class = (i % 4) as u32;
        let img = class_image(class, r.random_range(0.0..1.0), r.random_range(0.15..0.25));
        write_pnm(&img, dataset.join(format!("img{i:02}.pgm"))).unwrap();
        labels.push_str(&format!("img{i:02},{class}\n"));
    }
    std::fs::write(dataset.join("labels.csv"), labels).unwrap();
    let duplicate_of = format!("img{:02}", n / 3);
    let duplicate = root.join("duplicate.pgm");
    std::fs::copy(dataset.join(format!("{duplicate_of}.pgm")), &duplicate).unwrap();
    let noise = root.join("noise.pgm");
    write_pnm(&noise_image(seed + 1), &noise).unwrap();
    Corpus {
        dataset,
        duplicate,
        duplicate_of,
        noise,
    }
}

/// Runs `cbir` with the gallery, index and calibration placed under `root`.
pub fn cbir(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbir"))
        .current_dir(root)
        .env_remove("ACIR_CONFIG")
        .env("RUST_LOG", "warn")
        .args([
            "--gallery",
            "gallery",
            "--index",
            "index.acir",
            "--calibration",
            "cal.txt",
        ])
        .args(args)
        .output()
        .expect("cbir runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Parsed `rank id hamming similarity` rows.
pub fn parse_hits(text: &str) -> Vec<(usize, String, u32, f64)> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rank\tid\thamming\tsimilarity"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (
                f[0].parse().unwrap(),
                f[1].to_owned(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

/// ingest, index build, calibrate; panics on any failure.
pub fn build_pipeline(root: &Path, corpus: &Corpus, bits: &str) {
    for args in [
        vec!["--bits", bits, "ingest", corpus.dataset.to_str().unwrap()],
        vec!["index", "build"],
        vec!["calibrate"],
    ] {
        let o = cbir(root, &args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
}
