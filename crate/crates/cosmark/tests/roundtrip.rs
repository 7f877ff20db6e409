//! Property tests: every on-disk format loads back to exactly the value
//! that was saved, for arbitrary valid instances.

use proptest::prelude::*;
use tempfile::tempdir;

use cosmark::datagen::{Dataset, SplitTag};
use cosmark::io::{
    read_dataset, read_key, read_model, read_snr_report, write_dataset, write_key, write_model,
    write_snr_report,
};
use cosmark::nnet::{Architecture, Model};
use cosmark::spectrum::SnrReport;
use cosmark::{WatermarkConfig, WatermarkKey};

fn arb_key() -> impl Strategy<Value = WatermarkKey> {
    (
        0usize..8,
        1e-3f64..1e6,
        proptest::collection::vec(-1.0f64..1.0, 1..12),
    )
        .prop_filter_map("projection must have nonzero norm", |(target, freq, raw)| {
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-6 {
                return None;
            }
            let projection: Vec<f64> = raw.iter().map(|v| v / norm).collect();
            WatermarkKey::new(target, freq, projection).ok()
        })
}

fn arb_architecture() -> impl Strategy<Value = Architecture> {
    prop_oneof![
        Just(Architecture::SoftmaxRegression),
        (1usize..24).prop_map(|hidden_size| Architecture::Mlp { hidden_size }),
        ((1usize..24), (1e-3f64..1e4)).prop_map(|(hidden_size, frequency_scale)| {
            Architecture::SineMlp { hidden_size, frequency_scale }
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn key_files_round_trip_bit_exact(key in arb_key()) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("key.json");
        write_key(&path, &key).unwrap();
        let loaded = read_key(&path).unwrap();
        prop_assert_eq!(loaded.target_class, key.target_class);
        prop_assert_eq!(loaded.frequency.to_bits(), key.frequency.to_bits());
        prop_assert_eq!(loaded.projection.len(), key.projection.len());
        for (a, b) in loaded.projection.iter().zip(&key.projection) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn model_checkpoints_round_trip_bit_exact(
        architecture in arb_architecture(),
        input_dim in 1usize..10,
        class_count in 2usize..8,
        seed in proptest::num::u64::ANY,
        watermarked in proptest::bool::ANY,
        epsilon in 0.0f64..0.4,
    ) {
        let count = architecture.param_count(input_dim, class_count);
        // Deterministic but irregular parameter values exercise the float
        // formatting; derive them from the seed.
        let params: Vec<f64> = (0..count)
            .map(|i| {
                let raw = seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64);
                ((raw >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 6.0
            })
            .collect();
        let watermark = if watermarked {
            let mut projection = vec![0.0; input_dim];
            projection[0] = 1.0;
            let key = WatermarkKey::new(class_count - 1, 30.0, projection).unwrap();
            Some(WatermarkConfig::new(key, epsilon).unwrap())
        } else {
            None
        };
        let model =
            Model::from_parts(architecture, input_dim, class_count, params, watermark).unwrap();

        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_model(&path, &model).unwrap();
        let loaded = read_model(&path).unwrap();
        prop_assert_eq!(loaded, model);
    }

    #[test]
    fn dataset_files_round_trip_bit_exact(
        rows in proptest::collection::vec(
            proptest::collection::vec(0.0f64..=1.0, 3),
            1..40,
        ),
        labeled in proptest::bool::ANY,
        seed in proptest::num::u64::ANY,
    ) {
        let class_count = 4usize;
        let labels = labeled.then(|| {
            rows.iter().enumerate().map(|(i, _)| i % class_count).collect::<Vec<_>>()
        });
        let data = Dataset {
            features: rows,
            labels,
            split_tag: SplitTag::Student,
            class_count,
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset(&path, &data, seed, 0.12).unwrap();
        let (loaded, meta) = read_dataset(&path).unwrap();
        prop_assert_eq!(&loaded.labels, &data.labels);
        prop_assert_eq!(loaded.split_tag, SplitTag::Student);
        prop_assert_eq!(meta.seed, seed);
        prop_assert_eq!(loaded.features.len(), data.features.len());
        for (a, b) in loaded.features.iter().flatten().zip(data.features.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn snr_reports_round_trip(
        p_signal in 0.0f64..1e4,
        p_noise in 0.0f64..1e3,
        survivors in 3usize..10_000,
    ) {
        let noise_floor_zero = p_noise == 0.0;
        let report = SnrReport {
            p_signal,
            p_noise,
            p_snr: if noise_floor_zero { f64::INFINITY } else { p_signal / p_noise },
            window_center: 30.0,
            window_width: 0.5859375,
            max_frequency: 60.0,
            survivors,
            noise_floor_zero,
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_snr_report(&path, &report).unwrap();
        prop_assert_eq!(read_snr_report(&path).unwrap(), report);
    }
}
