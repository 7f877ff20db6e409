//! On-disk formats: watermark keys (JSON), model checkpoints (versioned
//! text), datasets (CSV plus a JSON sidecar), periodograms (CSV), and
//! extraction reports (JSON).
//!
//! Every float is written with 17 significant digits (`{:.16e}`), enough to
//! round-trip an IEEE double exactly, so save → load reproduces values bit
//! for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::nnet::{Architecture, Model};
use crate::spectrum::{Periodogram, SnrReport};
use crate::watermark::{WatermarkConfig, WatermarkKey};

const MODEL_HEADER: &str = "cosmark-model v1";

fn fmt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), message: message.into() }
}

// ---------------------------------------------------------------------------
// Watermark keys
// ---------------------------------------------------------------------------

/// Writes a key as JSON. The layout is hand-rolled so float formatting stays
/// pinned to `{:.16e}` regardless of serializer defaults.
pub fn write_key(path: &Path, key: &WatermarkKey) -> Result<()> {
    key.validate()?;
    let mut out = String::from("{\n");
    let _ = writeln!(out, "  \"target_class\": {},", key.target_class);
    let _ = writeln!(out, "  \"frequency\": {:.16e},", key.frequency);
    let proj: Vec<String> = key.projection.iter().map(|v| format!("{v:.16e}")).collect();
    let _ = writeln!(out, "  \"projection\": [{}]", proj.join(", "));
    out.push_str("}\n");
    fs::write(path, out)?;
    Ok(())
}

/// Reads and validates a key written by [`write_key`] (or any JSON with the
/// same fields).
pub fn read_key(path: &Path) -> Result<WatermarkKey> {
    let text = fs::read_to_string(path)?;
    let key: WatermarkKey =
        serde_json::from_str(&text).map_err(|e| fmt_err(path, e.to_string()))?;
    key.validate()?;
    Ok(key)
}

// ---------------------------------------------------------------------------
// Model checkpoints
// ---------------------------------------------------------------------------

/// Writes a line-oriented versioned checkpoint:
///
/// ```text
/// cosmark-model v1
/// arch mlp 64          (or: arch softmax_regression | arch sine_mlp 64 <scale>)
/// dims <input_dim> <class_count>
/// watermark <target> <frequency> <epsilon>     (only when watermarked)
/// projection <v0> <v1> ...                     (only when watermarked)
/// params <count>
/// <one parameter per line>
/// ```
pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    let mut out = String::new();
    out.push_str(MODEL_HEADER);
    out.push('\n');
    match model.architecture() {
        Architecture::SoftmaxRegression => out.push_str("arch softmax_regression\n"),
        Architecture::Mlp { hidden_size } => {
            let _ = writeln!(out, "arch mlp {hidden_size}");
        }
        Architecture::SineMlp { hidden_size, frequency_scale } => {
            let _ = writeln!(out, "arch sine_mlp {hidden_size} {frequency_scale:.16e}");
        }
    }
    let _ = writeln!(out, "dims {} {}", model.input_dim(), model.class_count());
    if let Some(wm) = &model.watermark {
        let _ = writeln!(
            out,
            "watermark {} {:.16e} {:.16e}",
            wm.key.target_class, wm.key.frequency, wm.epsilon
        );
        let proj: Vec<String> = wm.key.projection.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "projection {}", proj.join(" "));
    }
    let _ = writeln!(out, "params {}", model.params().len());
    for p in model.params() {
        let _ = writeln!(out, "{p:.16e}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint written by [`write_model`]. Round-trips are bit-exact.
pub fn read_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, &str)> {
        lines
            .next()
            .map(|(i, line)| (i + 1, line))
            .ok_or_else(|| fmt_err(path, format!("unexpected end of file, expected {what}")))
    };

    let (n1, header) = next("header")?;
    if header.trim() != MODEL_HEADER {
        return Err(fmt_err(path, format!("line {n1}: unsupported header {header:?}")));
    }

    let (n2, arch_line) = next("architecture")?;
    let mut arch_parts = arch_line.split_whitespace();
    if arch_parts.next() != Some("arch") {
        return Err(fmt_err(path, format!("line {n2}: expected an arch line")));
    }
    let architecture = match arch_parts.next() {
        Some("softmax_regression") => Architecture::SoftmaxRegression,
        Some("mlp") => {
            let hidden: usize = arch_parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| fmt_err(path, format!("line {n2}: mlp needs a hidden size")))?;
            Architecture::Mlp { hidden_size: hidden }
        }
        Some("sine_mlp") => {
            let hidden: usize = arch_parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| fmt_err(path, format!("line {n2}: sine_mlp needs a hidden size")))?;
            let scale: f64 = arch_parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| {
                fmt_err(path, format!("line {n2}: sine_mlp needs a frequency scale"))
            })?;
            Architecture::SineMlp { hidden_size: hidden, frequency_scale: scale }
        }
        other => {
            return Err(fmt_err(path, format!("line {n2}: unknown architecture {other:?}")));
        }
    };

    let (n3, dims_line) = next("dims")?;
    let dims: Vec<usize> = dims_line
        .strip_prefix("dims ")
        .map(|rest| rest.split_whitespace().filter_map(|t| t.parse().ok()).collect())
        .unwrap_or_default();
    let [input_dim, class_count] = dims[..] else {
        return Err(fmt_err(path, format!("line {n3}: expected `dims <n> <m>`")));
    };

    let (n4, mut line) = next("watermark or params")?;
    let mut watermark = None;
    if let Some(rest) = line.strip_prefix("watermark ") {
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let [target, freq, eps] = fields[..] else {
            return Err(fmt_err(
                path,
                format!("line {n4}: expected `watermark <target> <frequency> <epsilon>`"),
            ));
        };
        let target: usize = target
            .parse()
            .map_err(|_| fmt_err(path, format!("line {n4}: bad target class {target:?}")))?;
        let frequency: f64 = freq
            .parse()
            .map_err(|_| fmt_err(path, format!("line {n4}: bad frequency {freq:?}")))?;
        let epsilon: f64 = eps
            .parse()
            .map_err(|_| fmt_err(path, format!("line {n4}: bad amplitude {eps:?}")))?;

        let (n5, proj_line) = next("projection")?;
        let projection: Vec<f64> = proj_line
            .strip_prefix("projection ")
            .ok_or_else(|| fmt_err(path, format!("line {n5}: expected a projection line")))?
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| fmt_err(path, format!("line {n5}: bad projection value {t:?}")))
            })
            .collect::<Result<_>>()?;
        let key = WatermarkKey::new(target, frequency, projection)?;
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(fmt_err(path, format!("line {n4}: bad amplitude {epsilon}")));
        }
        // The amplitude was validated against a cap when the model was
        // built; loading restores it as stored.
        watermark = Some(WatermarkConfig { key, epsilon });
        let (_, after) = next("params")?;
        line = after;
    }

    let count: usize = line
        .strip_prefix("params ")
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| fmt_err(path, format!("expected `params <count>`, got {line:?}")))?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, value_line) = next("a parameter value")?;
        let value: f64 = value_line
            .trim()
            .parse()
            .map_err(|_| fmt_err(path, format!("line {n}: bad parameter {value_line:?}")))?;
        params.push(value);
    }
    if let Some((n, extra)) = lines.next() {
        if !extra.trim().is_empty() {
            return Err(fmt_err(path, format!("line {}: trailing content {extra:?}", n + 1)));
        }
    }

    Model::from_parts(architecture, input_dim, class_count, params, watermark)
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Sidecar metadata stored next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Number of classes `m`.
    pub classes: usize,
    /// Feature dimension `n`.
    pub dims: usize,
    /// Seed the generator ran with.
    pub seed: u64,
    /// Per-coordinate noise scale σ of the generator.
    pub spread: f64,
    /// Which experiment split this file holds.
    pub split_tag: SplitTag,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("meta.json")
}

/// Writes a dataset as CSV (`f0,…,f{n−1},label`; the label cell is empty for
/// unlabeled data) plus a `.meta.json` sidecar carrying generator
/// provenance.
pub fn write_dataset(path: &Path, data: &Dataset, seed: u64, spread: f64) -> Result<()> {
    data.validate()?;
    let n = data.dim();
    let mut out = String::new();
    for j in 0..n {
        let _ = write!(out, "f{j},");
    }
    out.push_str("label\n");
    for (i, row) in data.features.iter().enumerate() {
        for value in row {
            let _ = write!(out, "{value:.16e},");
        }
        match &data.labels {
            Some(labels) => {
                let _ = writeln!(out, "{}", labels[i]);
            }
            None => out.push('\n'),
        }
    }
    fs::write(path, out)?;

    let meta = DatasetMeta {
        classes: data.class_count,
        dims: n,
        seed,
        spread,
        split_tag: data.split_tag,
    };
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| fmt_err(path, format!("sidecar: {e}")))?;
    fs::write(sidecar_path(path), text + "\n")?;
    Ok(())
}

/// Reads a dataset and its sidecar written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<(Dataset, DatasetMeta)> {
    let sidecar = sidecar_path(path);
    let meta_text = fs::read_to_string(&sidecar)?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_text).map_err(|e| fmt_err(&sidecar, e.to_string()))?;

    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| fmt_err(path, "empty dataset file".to_string()))?;
    let columns = header.split(',').count();
    if columns != meta.dims + 1 {
        return Err(fmt_err(
            path,
            format!("header has {columns} columns, sidecar says {} features", meta.dims),
        ));
    }

    let mut features = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut unlabeled = 0usize;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns {
            return Err(fmt_err(
                path,
                format!("line {n}: {} cells, expected {columns}", cells.len()),
            ));
        }
        let row: Vec<f64> = cells[..columns - 1]
            .iter()
            .map(|c| {
                c.parse()
                    .map_err(|_| fmt_err(path, format!("line {n}: bad feature value {c:?}")))
            })
            .collect::<Result<_>>()?;
        features.push(row);
        let label_cell = cells[columns - 1].trim();
        if label_cell.is_empty() {
            unlabeled += 1;
        } else {
            let label: usize = label_cell
                .parse()
                .map_err(|_| fmt_err(path, format!("line {n}: bad label {label_cell:?}")))?;
            labels.push(label);
        }
    }
    let labels = if unlabeled == 0 && !labels.is_empty() {
        Some(labels)
    } else if unlabeled == features.len() {
        None
    } else {
        return Err(fmt_err(
            path,
            format!("{unlabeled} of {} rows lack labels; all or none must", features.len()),
        ));
    };

    let data = Dataset {
        features,
        labels,
        split_tag: meta.split_tag,
        class_count: meta.classes,
    };
    data.validate()?;
    Ok((data, meta))
}

// ---------------------------------------------------------------------------
// Periodograms and extraction reports
// ---------------------------------------------------------------------------

/// Writes a `frequency,power` CSV with a header row.
pub fn write_periodogram_csv(path: &Path, periodogram: &Periodogram) -> Result<()> {
    let mut out = String::from("frequency,power\n");
    for (f, p) in periodogram.frequencies.iter().zip(&periodogram.powers) {
        let _ = writeln!(out, "{f:.16e},{p:.16e}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads the `(frequency, power)` rows of a periodogram CSV.
pub fn read_periodogram_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "frequency,power" => {}
        other => {
            return Err(fmt_err(
                path,
                format!("expected a `frequency,power` header, got {:?}", other.map(|(_, l)| l)),
            ));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let (f, p) = line
            .split_once(',')
            .ok_or_else(|| fmt_err(path, format!("line {n}: expected two cells")))?;
        let f: f64 = f
            .trim()
            .parse()
            .map_err(|_| fmt_err(path, format!("line {n}: bad frequency {f:?}")))?;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| fmt_err(path, format!("line {n}: bad power {p:?}")))?;
        rows.push((f, p));
    }
    Ok(rows)
}

/// Writes an extraction report as pretty JSON (the infinite-SNR sentinel
/// becomes `null`).
pub fn write_snr_report(path: &Path, report: &SnrReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| fmt_err(path, e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Reads a report written by [`write_snr_report`].
pub fn read_snr_report(path: &Path) -> Result<SnrReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| fmt_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_blobs, BlobParams};
    use crate::nnet::{train_teacher, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn sample_key(seed: u64) -> WatermarkKey {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WatermarkKey::sample(2, 31.7, 6, &mut rng).unwrap()
    }

    // -- keys ---------------------------------------------------------------

    #[test]
    fn key_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("key.json");
        let key = sample_key(1);
        write_key(&path, &key).unwrap();
        let loaded = read_key(&path).unwrap();
        assert_eq!(loaded.target_class, key.target_class);
        assert_eq!(loaded.frequency.to_bits(), key.frequency.to_bits());
        for (a, b) in loaded.projection.iter().zip(&key.projection) {
            assert_eq!(a.to_bits(), b.to_bits(), "projection components must round-trip exactly");
        }
    }

    #[test]
    fn key_reader_rejects_invalid_keys() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("key.json");
        fs::write(
            &path,
            "{\"target_class\": 0, \"frequency\": 5.0, \"projection\": [3.0, 4.0]}",
        )
        .unwrap();
        assert!(read_key(&path).is_err(), "non-unit projection must be rejected");

        fs::write(&path, "not json").unwrap();
        assert!(matches!(read_key(&path), Err(Error::Format { .. })));
    }

    // -- checkpoints ----------------------------------------------------------

    #[test]
    fn plain_model_checkpoint_round_trips_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let data = make_blobs(&BlobParams {
            classes: 3,
            dims: 6,
            per_class: 60,
            spread: 0.1,
            seed: 5,
        })
        .unwrap();
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let model = train_teacher(&data, Architecture::SoftmaxRegression, &cfg, None).unwrap();
        write_model(&path, &model).unwrap();
        let loaded = read_model(&path).unwrap();
        assert_eq!(loaded, model, "checkpoint round-trip must be bit-exact");
    }

    #[test]
    fn watermarked_mlp_checkpoint_round_trips_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let data = make_blobs(&BlobParams {
            classes: 3,
            dims: 6,
            per_class: 60,
            spread: 0.1,
            seed: 6,
        })
        .unwrap();
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let wm = WatermarkConfig::new(sample_key(9), 0.1).unwrap();
        let model = train_teacher(
            &data,
            Architecture::Mlp { hidden_size: 10 },
            &cfg,
            Some(wm.clone()),
        )
        .unwrap();
        write_model(&path, &model).unwrap();
        let loaded = read_model(&path).unwrap();
        assert_eq!(loaded, model);
        let stored = loaded.watermark.expect("watermark must survive the round trip");
        assert_eq!(stored.epsilon.to_bits(), wm.epsilon.to_bits());
        assert_eq!(stored.key.frequency.to_bits(), wm.key.frequency.to_bits());
    }

    #[test]
    fn checkpoint_reader_rejects_malformed_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        fs::write(&path, "something-else v1\n").unwrap();
        assert!(matches!(read_model(&path), Err(Error::Format { .. })));

        fs::write(
            &path,
            "cosmark-model v1\narch softmax_regression\ndims 2 2\nparams 6\n1.0\n2.0\n",
        )
        .unwrap();
        assert!(read_model(&path).is_err(), "truncated parameter list must fail");

        fs::write(
            &path,
            "cosmark-model v1\narch softmax_regression\ndims 2 2\nparams 5\n1\n2\n3\n4\n5\n",
        )
        .unwrap();
        assert!(read_model(&path).is_err(), "wrong parameter count must fail");

        fs::write(
            &path,
            "cosmark-model v1\narch mlp\ndims 2 2\nparams 6\n1\n2\n3\n4\n5\n6\n",
        )
        .unwrap();
        assert!(read_model(&path).is_err(), "mlp without hidden size must fail");
    }

    // -- datasets -------------------------------------------------------------

    #[test]
    fn labeled_dataset_round_trips_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = make_blobs(&BlobParams {
            classes: 4,
            dims: 5,
            per_class: 30,
            spread: 0.07,
            seed: 11,
        })
        .unwrap();
        write_dataset(&path, &data, 11, 0.07).unwrap();
        let (loaded, meta) = read_dataset(&path).unwrap();
        assert_eq!(loaded.labels, data.labels);
        assert_eq!(loaded.class_count, 4);
        assert_eq!(meta.seed, 11);
        assert_eq!(meta.split_tag, SplitTag::Full);
        for (a, b) in loaded.features.iter().flatten().zip(data.features.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits(), "features must round-trip exactly");
        }
    }

    #[test]
    fn unlabeled_dataset_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = make_blobs(&BlobParams {
            classes: 3,
            dims: 4,
            per_class: 20,
            spread: 0.05,
            seed: 13,
        })
        .unwrap()
        .without_labels();
        write_dataset(&path, &data, 13, 0.05).unwrap();
        let (loaded, _) = read_dataset(&path).unwrap();
        assert!(loaded.labels.is_none(), "unlabeled data must stay unlabeled");
        assert_eq!(loaded.len(), data.len());
    }

    #[test]
    fn dataset_reader_rejects_mixed_labels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        fs::write(&path, "f0,f1,label\n0.1,0.2,1\n0.3,0.4,\n").unwrap();
        fs::write(
            sidecar_path(&path),
            serde_json::to_string(&DatasetMeta {
                classes: 2,
                dims: 2,
                seed: 0,
                spread: 0.0,
                split_tag: SplitTag::Full,
            })
            .unwrap(),
        )
        .unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
    }

    // -- periodograms and reports ----------------------------------------------

    #[test]
    fn periodogram_csv_round_trips() {
        use crate::spectrum::{even_grid, periodogram, PairedSeries};
        let dir = tempdir().unwrap();
        let path = dir.path().join("spectrum.csv");
        let series = PairedSeries::new(
            (0..64).map(|i| (i as f64 * 0.05, (3.0 * i as f64 * 0.05).cos())).collect(),
        )
        .unwrap();
        let grid = even_grid(6.0, 32).unwrap();
        let pg = periodogram(&series, &grid).unwrap();
        write_periodogram_csv(&path, &pg).unwrap();
        let rows = read_periodogram_csv(&path).unwrap();
        assert_eq!(rows.len(), 32);
        for ((f, p), (gf, gp)) in rows.iter().zip(pg.frequencies.iter().zip(&pg.powers)) {
            assert_eq!(f.to_bits(), gf.to_bits());
            assert_eq!(p.to_bits(), gp.to_bits());
        }
    }

    #[test]
    fn snr_report_json_round_trips_including_the_infinity_sentinel() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = SnrReport {
            p_signal: 12.5,
            p_noise: 0.0,
            p_snr: f64::INFINITY,
            window_center: 30.0,
            window_width: 0.5859375,
            max_frequency: 60.0,
            survivors: 420,
            noise_floor_zero: true,
        };
        write_snr_report(&path, &report).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"p_snr\": null"), "infinite SNR must serialize as null");
        assert!(text.contains("\"f_w\""), "report must use the documented field names");
        let loaded = read_snr_report(&path).unwrap();
        assert_eq!(loaded, report);

        let finite = SnrReport { p_snr: 7.25, p_noise: 1.0, noise_floor_zero: false, ..report };
        write_snr_report(&path, &finite).unwrap();
        assert_eq!(read_snr_report(&path).unwrap(), finite);
    }
}
