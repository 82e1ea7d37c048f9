//! Parallel enhancement of every image in a directory.
//!
//! Each file is processed with its own seed, `seed ^ fnv1a64(file name)`, so
//! results do not depend on the worker count or on which other files are
//! present.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::image::{load_image, save_image};
use crate::pipeline::{enhance, list_images, Exemplars};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 7] = [
    "file",
    "iters",
    "total_loss",
    "mean_brightness_before",
    "mean_brightness_after",
    "seconds",
    "status",
];

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn file_seed(seed: u64, file_name: &str) -> u64 {
    seed ^ fnv1a64(file_name.as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Processed {
    pub iters: usize,
    pub total_loss: f64,
    pub mean_brightness_before: f64,
    pub mean_brightness_after: f64,
}

#[derive(Clone, Debug)]
pub struct BatchRow {
    pub file: String,
    pub seconds: f64,
    /// The error message when this file failed.
    pub outcome: Result<Processed, String>,
}

#[derive(Clone, Debug)]
pub struct BatchReport {
    /// Sorted by file name.
    pub rows: Vec<BatchRow>,
}

impl BatchReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = "writing to memory cannot fail";
        w.write_record(SUMMARY_HEADER).expect(io);
        for row in &self.rows {
            let seconds = format!("{:.3}", row.seconds);
            let record = match &row.outcome {
                Ok(p) => [
                    row.file.clone(),
                    p.iters.to_string(),
                    p.total_loss.to_string(),
                    p.mean_brightness_before.to_string(),
                    p.mean_brightness_after.to_string(),
                    seconds,
                    "ok".into(),
                ],
                Err(msg) => [
                    row.file.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    seconds,
                    format!("error: {msg}"),
                ],
            };
            w.write_record(&record).expect(io);
        }
        String::from_utf8(w.into_inner().expect(io)).expect("csv output is UTF-8")
    }
}

/// Output path for one input: `<output_dir>/<stem>.png`.
pub fn output_path(output_dir: &Path, input: &Path) -> PathBuf {
    let stem = input.file_stem().unwrap_or_default();
    output_dir.join(stem).with_extension("png")
}

/// Enhances every image in `input_dir`, writing results and `summary.csv` to
/// `output_dir`. A file that fails is recorded in its row and the rest of the
/// batch continues.
pub fn run_batch(input_dir: &Path, output_dir: &Path, cfg: &Config, exemplars: &Exemplars) -> Result<BatchReport> {
    cfg.validate()?;
    let inputs = list_images(input_dir)?;
    if inputs.is_empty() {
        return Err(Error::NoImages(input_dir.to_path_buf()));
    }
    std::fs::create_dir_all(output_dir).map_err(|source| Error::Io {
        path: output_dir.to_path_buf(),
        source,
    })?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let rows = pool.install(|| {
        inputs
            .par_iter()
            .map(|path| process_one(path, output_dir, cfg, exemplars))
            .collect::<Vec<_>>()
    });
    let report = BatchReport { rows };

    let summary = output_dir.join(SUMMARY_FILE);
    std::fs::write(&summary, report.to_csv()).map_err(|source| Error::Io { path: summary, source })?;
    Ok(report)
}

fn process_one(path: &Path, output_dir: &Path, cfg: &Config, exemplars: &Exemplars) -> BatchRow {
    let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let start = Instant::now();
    let outcome = (|| -> Result<Processed> {
        let low = load_image(path)?;
        let result = enhance(&low, exemplars, cfg, file_seed(cfg.seed, &file))?;
        save_image(&result.image, output_path(output_dir, path))?;
        Ok(Processed {
            iters: result.updates(),
            total_loss: result.trace.last().expect("trace starts with the initial loss").total,
            mean_brightness_before: low.mean_brightness(),
            mean_brightness_after: result.image.mean_brightness(),
        })
    })();
    BatchRow {
        file,
        seconds: start.elapsed().as_secs_f64(),
        outcome: outcome.map_err(|e| e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn seeds_depend_on_name_only() {
        assert_eq!(file_seed(7, "x.png"), file_seed(7, "x.png"));
        assert_ne!(file_seed(7, "x.png"), file_seed(7, "y.png"));
        assert_eq!(file_seed(0, "a"), fnv1a64(b"a"));
    }

    #[test]
    fn failed_rows_are_quoted() {
        let report = BatchReport {
            rows: vec![BatchRow {
                file: "bad.png".into(),
                seconds: 0.0,
                outcome: Err("corrupt image data in bad.png: eof, truncated".into()),
            }],
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SUMMARY_HEADER.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "bad.png,,,,,0.000,\"error: corrupt image data in bad.png: eof, truncated\""
        );
    }

    #[test]
    fn output_names_use_the_stem() {
        assert_eq!(
            output_path(Path::new("out"), Path::new("in/photo.jpg")),
            Path::new("out/photo.png")
        );
    }
}
