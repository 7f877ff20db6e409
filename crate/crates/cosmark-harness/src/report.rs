//! On-disk experiment directories.
//!
//! A run is written as one directory: the config snapshot, a summary JSON,
//! one ranking CSV per key, the key files, and — when the run's models are
//! supplied — model checkpoints plus the extraction periodogram of every
//! positive student on its own key. All writers are deterministic, so a
//! re-run of the same config into a fresh directory produces byte-identical
//! files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use cosmark::io::{write_key, write_model, write_periodogram_csv};
use cosmark::spectrum::extract_signal;

use crate::error::{Error, Result};
use crate::experiment::{
    ExperimentConfig, ExperimentModels, MultiWatermarkReport, SingleWatermarkReport,
};
use crate::ranking::RankingTask;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes one ranking task as CSV. Scores use Rust's shortest-roundtrip
/// float formatting; an infinite score (zero noise floor) appears as `inf`.
fn write_ranking_csv(path: &Path, task: &RankingTask) -> Result<()> {
    let mut out = String::from("student_id,is_positive,p_snr\n");
    for entry in &task.entries {
        out.push_str(&format!("{},{},{}\n", entry.student_id, entry.is_positive, entry.p_snr));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Pieces shared by the single- and multi-watermark directory layouts.
struct DirPieces<'a> {
    keys: &'a [cosmark::WatermarkKey],
    rankings: &'a [RankingTask],
}

fn write_dir_impl<C: Serialize, S: Serialize>(
    dir: &Path,
    config_snapshot: &C,
    summary: &S,
    pieces: DirPieces<'_>,
    extraction: &cosmark::spectrum::ExtractionConfig,
    models: Option<&ExperimentModels>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), config_snapshot)?;
    write_json(&dir.join("summary.json"), summary)?;

    let key_dir = dir.join("keys");
    fs::create_dir_all(&key_dir)?;
    for (k, key) in pieces.keys.iter().enumerate() {
        write_key(&key_dir.join(format!("key{k}.json")), key)?;
    }
    for task in pieces.rankings {
        write_ranking_csv(&dir.join(format!("ranking_key{}.csv", task.key_index)), task)?;
    }

    let Some(models) = models else { return Ok(()) };

    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    for (job, model) in models.teachers.iter().chain(&models.students) {
        write_model(&ckpt_dir.join(format!("{job}.json")), model)?;
    }

    // One periodogram per positive (student, own key) pair: the spectral
    // evidence behind each positive score.
    let pg_dir = dir.join("periodograms");
    fs::create_dir_all(&pg_dir)?;
    for task in pieces.rankings {
        let key = &pieces.keys[task.key_index];
        for entry in task.entries.iter().filter(|e| e.is_positive) {
            let (_, model) = models
                .students
                .iter()
                .find(|(job, _)| *job == entry.student_id)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "ranking entry `{}` has no matching model checkpoint",
                        entry.student_id
                    ))
                })?;
            let outputs = model.predict_batch(&models.queries)?;
            let extraction = extract_signal(&models.queries, &outputs, key, extraction)?;
            write_periodogram_csv(
                &pg_dir.join(format!("key{}-{}.csv", task.key_index, entry.student_id)),
                &extraction.periodogram,
            )?;
        }
    }
    Ok(())
}

/// Writes a single-watermark run as an experiment directory.
///
/// Layout: `config.json`, `summary.json`, `ranking_key{k}.csv` per key,
/// `keys/key{k}.json`, and with `models` also `checkpoints/{job}.json` and
/// `periodograms/key{k}-{student}.csv` for every positive pair.
pub fn write_single_experiment_dir(
    dir: &Path,
    config: &ExperimentConfig,
    report: &SingleWatermarkReport,
    models: Option<&ExperimentModels>,
) -> Result<()> {
    write_dir_impl(
        dir,
        config,
        report,
        DirPieces { keys: &report.keys, rankings: &report.rankings },
        &config.extraction,
        models,
    )
}

/// Writes a multi-watermark run as an experiment directory (same layout as
/// [`write_single_experiment_dir`]).
pub fn write_multi_experiment_dir(
    dir: &Path,
    config: &ExperimentConfig,
    report: &MultiWatermarkReport,
    models: Option<&ExperimentModels>,
) -> Result<()> {
    write_dir_impl(
        dir,
        config,
        report,
        DirPieces { keys: &report.keys, rankings: &report.rankings },
        &config.extraction,
        models,
    )
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::path::PathBuf;

    use cosmark::io::read_key;

    use super::*;
    use crate::experiment::run_single_watermark_experiment_full;

    /// All files under `dir`, relative path → bytes, sorted by path.
    fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
            for entry in fs::read_dir(dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    walk(root, &path, out);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_path_buf();
                    out.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(dir, dir, &mut out);
        out
    }

    #[test]
    fn experiment_directory_is_byte_deterministic() {
        let cfg = crate::experiment::tests::tiny_config();
        let tmp = tempfile::tempdir().unwrap();

        let (report_a, models_a) = run_single_watermark_experiment_full(&cfg).unwrap();
        let dir_a = tmp.path().join("a");
        write_single_experiment_dir(&dir_a, &cfg, &report_a, Some(&models_a)).unwrap();

        let (report_b, models_b) = run_single_watermark_experiment_full(&cfg).unwrap();
        let dir_b = tmp.path().join("b");
        write_single_experiment_dir(&dir_b, &cfg, &report_b, Some(&models_b)).unwrap();

        let snap_a = snapshot(&dir_a);
        let snap_b = snapshot(&dir_b);
        assert_eq!(
            snap_a.keys().collect::<Vec<_>>(),
            snap_b.keys().collect::<Vec<_>>(),
            "both runs must write the same file set"
        );
        for (path, bytes) in &snap_a {
            assert_eq!(
                bytes,
                &snap_b[path],
                "file {} must be byte-identical across re-runs",
                path.display()
            );
        }
    }

    #[test]
    fn directory_contains_every_contracted_artifact() {
        let cfg = crate::experiment::tests::tiny_config();
        let tmp = tempfile::tempdir().unwrap();
        let (report, models) = run_single_watermark_experiment_full(&cfg).unwrap();
        let dir = tmp.path().join("run");
        write_single_experiment_dir(&dir, &cfg, &report, Some(&models)).unwrap();

        assert!(dir.join("config.json").is_file(), "config snapshot missing");
        assert!(dir.join("summary.json").is_file(), "summary missing");
        for k in 0..report.keys.len() {
            let csv = fs::read_to_string(dir.join(format!("ranking_key{k}.csv"))).unwrap();
            let lines: Vec<&str> = csv.lines().collect();
            assert_eq!(lines[0], "student_id,is_positive,p_snr", "CSV header");
            assert_eq!(
                lines.len(),
                1 + report.rankings[k].entries.len(),
                "one CSV row per scored student"
            );
            let read_back = read_key(&dir.join(format!("keys/key{k}.json"))).unwrap();
            assert_eq!(read_back, report.keys[k], "key file must round-trip");
        }
        let checkpoints = fs::read_dir(dir.join("checkpoints")).unwrap().count();
        assert_eq!(
            checkpoints,
            models.teachers.len() + models.students.len(),
            "one checkpoint per trained model"
        );
        let positives: usize = report
            .rankings
            .iter()
            .flat_map(|r| &r.entries)
            .filter(|e| e.is_positive)
            .count();
        let periodograms = fs::read_dir(dir.join("periodograms")).unwrap().count();
        assert_eq!(periodograms, positives, "one periodogram per positive pair");

        // The config snapshot must round-trip losslessly.
        let text = fs::read_to_string(dir.join("config.json")).unwrap();
        let parsed: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, cfg, "config snapshot must round-trip");
    }

    #[test]
    fn summary_only_directory_skips_model_artifacts() {
        let cfg = crate::experiment::tests::tiny_config();
        let tmp = tempfile::tempdir().unwrap();
        let (report, _) = run_single_watermark_experiment_full(&cfg).unwrap();
        let dir = tmp.path().join("light");
        write_single_experiment_dir(&dir, &cfg, &report, None).unwrap();
        assert!(dir.join("summary.json").is_file());
        assert!(!dir.join("checkpoints").exists(), "no checkpoints without models");
        assert!(!dir.join("periodograms").exists(), "no periodograms without models");
    }
}
