use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Version of the manifest layout.
pub const MANIFEST_VERSION: u32 = 1;

/// Mean and 95% confidence half-width from the t-distribution with `n - 1`
/// degrees of freedom; a single score has no half-width.
pub fn mean_ci95(scores: &[f64]) -> (f64, Option<f64>) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    if scores.len() < 2 {
        return (mean, None);
    }
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom").inverse_cdf(0.975);
    (mean, Some(t * (var / n).sqrt()))
}

pub fn write_manifest<T: Serialize>(path: &Path, manifest: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).context("serialising the manifest")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// `98.12%`.
pub fn percent(score: f64) -> String {
    format!("{:.2}%", 100.0 * score)
}
