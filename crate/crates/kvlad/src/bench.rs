//! Encoder timing driven by a key-value config file.
//!
//! Each encoder yields one row. Explicit encoders are timed per set; kVLAD has
//! no explicit code, so it is timed per pair of sets.

use std::hint::black_box;
use std::path::PathBuf;
use std::time::Instant;

use serde_json::{json, Value};

use kvlad_core::encode::kvlad_inner;
use kvlad_core::pipeline::{EncoderKind, TrainedEncoder};

use crate::cli::{
    check_encoder_geometry, load_encoder, parse_encoder, parse_norm, read_sets, CliError,
};
use crate::config::Config;

pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_REPS: usize = 20;
pub const DEFAULT_MAX_SETS: usize = 10;

const KNOWN_KEYS: &[&str] = &[
    "in",
    "encoders",
    "codebook",
    "vlad-codebook",
    "le-vlad-codebook",
    "kernel-codebook",
    "kvlad-codebook",
    "svlad-codebook",
    "svlad-map",
    "nvlad-codebook",
    "nvlad-map",
    "fvlad-codebook",
    "fvlad-map",
    "r",
    "norm",
    "normalized",
    "warmup",
    "reps",
    "sets",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub encoder: EncoderKind,
    pub geometry: String,
    pub unit: &'static str,
    pub reps: usize,
    pub warmup: usize,
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl BenchRow {
    pub fn to_json(&self) -> Value {
        json!({
            "encoder": self.encoder.name(),
            "geometry": self.geometry,
            "unit": self.unit,
            "reps": self.reps,
            "warmup": self.warmup,
            "samples": self.samples,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
        })
    }
}

/// Mean, median and nearest-rank 95th percentile of `samples`.
pub fn summarize(samples: &mut [f64]) -> (f64, f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    (mean, median, samples[rank - 1])
}

fn codebook_path(cfg: &Config, e: EncoderKind) -> Result<PathBuf, CliError> {
    let mut keys = vec![format!("{}-codebook", e.name())];
    if matches!(e, EncoderKind::KVlad | EncoderKind::SVlad) {
        keys.push("kernel-codebook".into());
    }
    keys.push("codebook".into());
    keys.iter()
        .find_map(|k| cfg.raw(k))
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage(format!("bench: no codebook for {e} (set `{}`)", keys[0])))
}

fn time_ms(f: impl FnOnce() -> Result<(), CliError>) -> Result<f64, CliError> {
    let start = Instant::now();
    f()?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

pub fn run(cfg: &Config) -> Result<Vec<BenchRow>, CliError> {
    let unknown = cfg.unknown_keys(KNOWN_KEYS);
    if !unknown.is_empty() {
        return Err(CliError::Usage(format!(
            "bench: unknown config keys: {}",
            unknown.join(", ")
        )));
    }
    let get = |k: &str| cfg.raw(k).map(str::to_owned);
    let num = |k: &str, default: usize| -> Result<usize, CliError> {
        Ok(cfg.get(k).map_err(CliError::Usage)?.unwrap_or(default))
    };
    let input = PathBuf::from(
        get("in").ok_or_else(|| CliError::Usage("bench: missing config key `in`".into()))?,
    );
    let encoders = get("encoders")
        .ok_or_else(|| CliError::Usage("bench: missing config key `encoders`".into()))?
        .split(',')
        .map(|s| parse_encoder(s.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let norm = parse_norm(&get("norm").unwrap_or_else(|| "none".into()))?;
    let normalized: bool = cfg
        .get("normalized")
        .map_err(CliError::Usage)?
        .unwrap_or(false);
    let r: Option<usize> = cfg.get("r").map_err(CliError::Usage)?;
    let warmup = num("warmup", DEFAULT_WARMUP)?;
    let reps = num("reps", DEFAULT_REPS)?;
    if reps == 0 {
        return Err(CliError::Usage("bench: reps must be at least 1".into()));
    }
    let data = read_sets(&input)?;
    let max_sets = num("sets", DEFAULT_MAX_SETS)?.max(1);
    let sets = &data.sets[..data.sets.len().min(max_sets)];
    let geometry = data.geometry.to_string();

    let mut rows = Vec::with_capacity(encoders.len());
    for &e in &encoders {
        check_encoder_geometry(e, data.geometry)?;
        let map = get(&format!("{}-map", e.name())).map(PathBuf::from);
        let fitted = load_encoder(e, &codebook_path(cfg, e)?, map, r)?;
        let mut samples = Vec::with_capacity(reps * sets.len());
        let unit = match &fitted {
            TrainedEncoder::KVlad(cb) => {
                if sets.len() < 2 {
                    return Err(CliError::Data(
                        "bench: kvlad timing needs at least two sets".into(),
                    ));
                }
                for rep in 0..warmup + reps {
                    for i in 0..sets.len() {
                        let (x, y) = (&sets[i], &sets[(i + 1) % sets.len()]);
                        let t = time_ms(|| {
                            black_box(kvlad_inner(x, y, cb, normalized)?);
                            Ok(())
                        })?;
                        if rep >= warmup {
                            samples.push(t);
                        }
                    }
                }
                "per-pair"
            }
            _ => {
                for rep in 0..warmup + reps {
                    for s in sets {
                        let t = time_ms(|| {
                            black_box(fitted.encode(s, norm)?);
                            Ok(())
                        })?;
                        if rep >= warmup {
                            samples.push(t);
                        }
                    }
                }
                "per-set"
            }
        };
        let (mean_ms, median_ms, p95_ms) = summarize(&mut samples);
        log::info!(
            "{e}: median {median_ms:.3} ms {unit} over {} samples",
            samples.len()
        );
        rows.push(BenchRow {
            encoder: e,
            geometry: geometry.clone(),
            unit,
            reps,
            warmup,
            samples: samples.len(),
            mean_ms,
            median_ms,
            p95_ms,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let mut s: Vec<f64> = (1..=20).rev().map(f64::from).collect();
        let (mean, median, p95) = summarize(&mut s);
        assert_eq!(mean, 10.5);
        assert_eq!(median, 10.5);
        assert_eq!(p95, 19.0);
        assert_eq!(summarize(&mut [3.0]), (3.0, 3.0, 3.0));
    }
}
