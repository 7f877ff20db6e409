//! Temporary calibration probe (not part of the deliverable).

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cosmark::datagen::{make_blobs, sample_queries, split, BlobParams, Dataset};
use cosmark::nnet::{
    accuracy, distill, train_teacher, Architecture, DistillLoss, Ensemble, Model, TrainConfig,
};
use cosmark::spectrum::{extract_signal, quantile, ExtractionConfig, FilterDirection, FilterPolicy};
use cosmark::{WatermarkConfig, WatermarkKey};

const M: usize = 5;
const N_DIMS: usize = 3;
const SPREAD: f64 = 0.04;
const MIN_SEP: f64 = 0.3;
const PERIODS: f64 = 6.0;
const MIN_RANGE: f64 = 0.72;
const MAX_KEY_DOT: f64 = 0.5;

fn auto_frequency(features: &[Vec<f64>], projection: &[f64], periods: f64) -> f64 {
    let key_stub = WatermarkKey::new(0, 1.0, projection.to_vec()).unwrap();
    let ps: Vec<f64> =
        features.iter().map(|x| cosmark::watermark::project(x, &key_stub).unwrap()).collect();
    let lo = quantile(&ps, 0.025).unwrap();
    let hi = quantile(&ps, 0.975).unwrap();
    2.0 * std::f64::consts::PI * periods / (hi - lo)
}

fn class_centers(data: &Dataset) -> Vec<Vec<f64>> {
    let labels = data.labels.as_ref().unwrap();
    let mut sums = vec![vec![0.0; data.dim()]; data.class_count];
    let mut counts = vec![0usize; data.class_count];
    for (x, &c) in data.features.iter().zip(labels) {
        for (s, v) in sums[c].iter_mut().zip(x) {
            *s += v;
        }
        counts[c] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= c.max(1) as f64;
        }
    }
    sums
}

fn min_center_distance(data: &Dataset) -> f64 {
    let centers = class_centers(data);
    let mut best = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d: f64 = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Regenerates until all class centers are pairwise separated.
fn curated_blobs(seed_base: u64) -> (Dataset, u64, u32) {
    for attempt in 0..64u32 {
        let seed = seed_base.wrapping_add(u64::from(attempt) * 0x9e37);
        let data = make_blobs(&BlobParams {
            classes: M,
            dims: N_DIMS,
            per_class: 2000,
            spread: SPREAD,
            seed,
        })
        .unwrap();
        if min_center_distance(&data) >= MIN_SEP {
            return (data, seed, attempt);
        }
    }
    panic!("no separated layout in 64 attempts");
}

fn separated_key(
    rng: &mut ChaCha8Rng,
    features: &[Vec<f64>],
    avoid: &[Vec<f64>],
    target: usize,
) -> WatermarkKey {
    loop {
        let proto = WatermarkKey::sample(target, 1.0, N_DIMS, rng).unwrap();
        let clash = avoid.iter().any(|v| {
            let dot: f64 = v.iter().zip(&proto.projection).map(|(a, b)| a * b).sum();
            dot.abs() > MAX_KEY_DOT
        });
        if clash {
            continue;
        }
        let stub = WatermarkKey::new(0, 1.0, proto.projection.clone()).unwrap();
        let ps: Vec<f64> =
            features.iter().map(|x| cosmark::watermark::project(x, &stub).unwrap()).collect();
        let range = quantile(&ps, 0.975).unwrap() - quantile(&ps, 0.025).unwrap();
        if range < MIN_RANGE {
            continue;
        }
        let f = 2.0 * std::f64::consts::PI * PERIODS / range;
        return WatermarkKey::new(target, f, proto.projection).unwrap();
    }
}

/// Classes ranked most-isolated first (distance to the nearest other center).
fn isolation_order(data: &Dataset) -> Vec<usize> {
    let centers = class_centers(data);
    let mut iso: Vec<(usize, f64)> = (0..centers.len())
        .map(|i| {
            let nearest = (0..centers.len())
                .filter(|&j| j != i)
                .map(|j| {
                    centers[i]
                        .iter()
                        .zip(&centers[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            (i, nearest)
        })
        .collect();
    iso.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    iso.into_iter().map(|(i, _)| i).collect()
}

fn snr(model: &Model, queries: &[Vec<f64>], key: &WatermarkKey, cfg: &ExtractionConfig) -> f64 {
    let outputs = model.predict_batch(queries).unwrap();
    match extract_signal(queries, &outputs, key, cfg) {
        Ok(e) => e.report.p_snr,
        Err(_) => f64::NAN,
    }
}

fn main() {
    let t0 = Instant::now();
    let cfg = ExtractionConfig {
        filter: FilterPolicy::Absolute(0.2),
        direction: FilterDirection::KeepBelow,
        ..ExtractionConfig::default()
    };
    let scfg = |seed: u64, f_w: f64, hidden: usize, epochs: usize| {
        (
            Architecture::SineMlp { hidden_size: hidden, frequency_scale: 1.3 * f_w },
            TrainConfig { epochs, learning_rate: 0.3, seed, ..TrainConfig::default() },
        )
    };

    println!("=== key-0 diagnosis: per-key frequency + teacher SNR + heavy student ===");
    if std::env::var("PROBE_DIAG").is_ok() {
        let (data, _, _) = curated_blobs(31000);
        let (teach, stud, _t2) = split(&data, (0.4, 0.5, 0.1), 0xb1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let mut keys: Vec<WatermarkKey> = Vec::new();
        for k in 0..4usize {
            let avoid: Vec<Vec<f64>> = keys.iter().map(|k| k.projection.clone()).collect();
            keys.push(separated_key(&mut rng, &teach.features, &avoid, k % M));
        }
        let queries = sample_queries(&data, 4000, 0xb2).unwrap().features;
        for (k, key) in keys.iter().enumerate() {
            let marked = train_teacher(
                &teach,
                Architecture::SoftmaxRegression,
                &TrainConfig { seed: 600 + k as u64, ..TrainConfig::default() },
                Some(WatermarkConfig::new(key.clone(), 0.1).unwrap()),
            )
            .unwrap();
            println!(
                "key {k}: f {:.1} | teacher SNR {:.1}",
                key.frequency,
                snr(&marked, &queries, key, &cfg)
            );
        }
        // heavy student on key 0's ensemble only
        let plains: Vec<Model> = (0..3u64)
            .map(|i| {
                train_teacher(
                    &teach,
                    Architecture::SoftmaxRegression,
                    &TrainConfig { seed: 500 + i, ..TrainConfig::default() },
                    None,
                )
                .unwrap()
            })
            .collect();
        let marked0 = train_teacher(
            &teach,
            Architecture::SoftmaxRegression,
            &TrainConfig { seed: 600, ..TrainConfig::default() },
            Some(WatermarkConfig::new(keys[0].clone(), 0.1).unwrap()),
        )
        .unwrap();
        let mut members = vec![marked0];
        members.extend(plains.iter().cloned());
        let ens = Ensemble::new(members).unwrap();
        for (h, ep) in [(192usize, 240usize)] {
            let (arch, tc) = scfg(700, keys[0].frequency, h, ep);
            let student =
                distill(&ens, &stud.without_labels(), arch, &tc, DistillLoss::Kl).unwrap();
            println!(
                "key 0 student h={h} e={ep}: {:.2}",
                snr(&student, &queries, &keys[0], &cfg)
            );
        }
        // (a) same projection, target class 4; (b) fresh projection, class 0
        let variants = [
            ("same v, class 4", WatermarkKey::new(4, keys[0].frequency, keys[0].projection.clone()).unwrap()),
            ("fresh v, class 0", {
                let mut r2 = ChaCha8Rng::seed_from_u64(670);
                separated_key(&mut r2, &teach.features, &[], 0)
            }),
        ];
        for (tag, vkey) in variants {
            let marked = train_teacher(
                &teach,
                Architecture::SoftmaxRegression,
                &TrainConfig { seed: 600, ..TrainConfig::default() },
                Some(WatermarkConfig::new(vkey.clone(), 0.1).unwrap()),
            )
            .unwrap();
            let mut mem = vec![marked.clone()];
            mem.extend(plains.iter().cloned());
            let vens = Ensemble::new(mem).unwrap();
            let (arch, tc) = scfg(700, vkey.frequency, 192, 240);
            let student =
                distill(&vens, &stud.without_labels(), arch, &tc, DistillLoss::Kl).unwrap();
            println!(
                "{tag}: f {:.1} teacher {:.1} student {:.2}",
                vkey.frequency,
                snr(&marked, &queries, &vkey, &cfg),
                snr(&student, &queries, &vkey, &cfg)
            );
        }
        let centers = class_centers(&data);
        for i in 0..M {
            let mut ds: Vec<f64> = (0..M)
                .filter(|&j| j != i)
                .map(|j| {
                    centers[i]
                        .iter()
                        .zip(&centers[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!("class {i}: nearest centers {:.2} {:.2}", ds[0], ds[1]);
        }
    }
    println!("=== mini criterion-6 at N=4, eps 0.1: 4 keys, 4 students each ===");
    if std::env::var("PROBE_C6").is_ok() {
        let t = Instant::now();
        let (data, _, _) = curated_blobs(31000);
        let (teach, stud, test) = split(&data, (0.4, 0.5, 0.1), 0xb1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let order = isolation_order(&data);
        println!("isolation order: {order:?}");
        let mut keys: Vec<WatermarkKey> = Vec::new();
        for k in 0..4usize {
            let avoid: Vec<Vec<f64>> = keys.iter().map(|k| k.projection.clone()).collect();
            keys.push(separated_key(&mut rng, &teach.features, &avoid, order[k]));
        }
        let queries = sample_queries(&data, 4000, 0xb2).unwrap().features;
        let plains: Vec<Model> = (0..3u64)
            .map(|i| {
                train_teacher(
                    &teach,
                    Architecture::SoftmaxRegression,
                    &TrainConfig { seed: 500 + i, ..TrainConfig::default() },
                    None,
                )
                .unwrap()
            })
            .collect();
        let f_cover = keys.iter().map(|k| k.frequency).fold(0.0f64, f64::max);
        let (h, ep) = (192usize, 240usize);
        let mut scores: Vec<(usize, bool, usize, f64)> = Vec::new(); // (key, is_pos, id, snr)
        let mut sid = 0usize;
        for (k, key) in keys.iter().enumerate() {
            let marked = train_teacher(
                &teach,
                Architecture::SoftmaxRegression,
                &TrainConfig { seed: 600 + k as u64, ..TrainConfig::default() },
                Some(WatermarkConfig::new(key.clone(), 0.1).unwrap()),
            )
            .unwrap();
            let mut members = vec![marked];
            members.extend(plains.iter().cloned());
            let ens = Ensemble::new(members).unwrap();
            for s in 0..4u64 {
                let (arch, tc) = scfg(700 + 10 * k as u64 + s, f_cover, h, ep);
                let student =
                    distill(&ens, &stud.without_labels(), arch, &tc, DistillLoss::Kl).unwrap();
                for (j, kj) in keys.iter().enumerate() {
                    scores.push((j, j == k, sid, snr(&student, &queries, kj, &cfg)));
                }
                sid += 1;
            }
        }
        // plain-ensemble students + ground-truth independents as extra negatives
        let plain_ens = Ensemble::new(plains.clone()).unwrap();
        for s in 0..4u64 {
            let (arch, tc) = scfg(900 + s, f_cover, h, ep);
            let student =
                distill(&plain_ens, &stud.without_labels(), arch, &tc, DistillLoss::Kl).unwrap();
            for (j, kj) in keys.iter().enumerate() {
                scores.push((j, false, sid, snr(&student, &queries, kj, &cfg)));
            }
            sid += 1;
        }
        for s in 0..4u64 {
            let (arch, tc) = scfg(950 + s, f_cover, h, ep);
            let indep = train_teacher(&stud, arch, &tc, None).unwrap();
            for (j, kj) in keys.iter().enumerate() {
                scores.push((j, false, sid, snr(&indep, &queries, kj, &cfg)));
            }
            sid += 1;
        }
        let _ = accuracy(&plains[0], &test);
        let mut aps = Vec::new();
        for k in 0..4usize {
            let mut entries: Vec<(bool, f64)> =
                scores.iter().filter(|e| e.0 == k).map(|e| (e.1, e.3)).collect();
            entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let (mut hits, mut sum) = (0usize, 0.0f64);
            for (rank, (pos, _)) in entries.iter().enumerate() {
                if *pos {
                    hits += 1;
                    sum += hits as f64 / (rank + 1) as f64;
                }
            }
            let ap = sum / hits as f64;
            let pos: Vec<f64> =
                scores.iter().filter(|e| e.0 == k && e.1).map(|e| e.3).collect();
            let neg_max = scores
                .iter()
                .filter(|e| e.0 == k && !e.1)
                .map(|e| e.3)
                .fold(0.0f64, f64::max);
            println!(
                "key {k}: AP {ap:.3} | positives {:?} | max negative {neg_max:.2}",
                pos.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
            );
            aps.push(ap);
        }
        println!(
            "mAP {:.3} | elapsed {:?}",
            aps.iter().sum::<f64>() / aps.len() as f64,
            t.elapsed()
        );
    }

    println!("=== frequency sweep anchors: periods 2 and 6.7, students N=1/N=4 ===");
    if std::env::var("PROBE_FREQ").is_ok() {
        let (data, _, _) = curated_blobs(21000);
        let (teach, stud, _t) = split(&data, (0.4, 0.5, 0.1), 0xa1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let base = WatermarkKey::sample(0, 1.0, N_DIMS, &mut rng).unwrap();
        let queries = sample_queries(&data, 2500, 0xa2).unwrap().features;
        let plains: Vec<Model> = (0..3u64)
            .map(|i| {
                train_teacher(
                    &teach,
                    Architecture::SoftmaxRegression,
                    &TrainConfig { seed: 400 + i, ..TrainConfig::default() },
                    None,
                )
                .unwrap()
            })
            .collect();
        for periods in [0.067, 2.0, 6.7, 20.0] {
            let f = auto_frequency(&teach.features, &base.projection, periods);
            let key = WatermarkKey::new(0, f, base.projection.clone()).unwrap();
            let marked = train_teacher(
                &teach,
                Architecture::SoftmaxRegression,
                &TrainConfig { seed: 10, ..TrainConfig::default() },
                Some(WatermarkConfig::new(key.clone(), 0.1).unwrap()),
            )
            .unwrap();
            for n in [1usize, 4] {
                let mut members = vec![marked.clone()];
                members.extend(plains.iter().take(n - 1).cloned());
                let ens = Ensemble::new(members).unwrap();
                let (arch, tc) = scfg(61, f, 160, 200);
                let student =
                    distill(&ens, &stud.without_labels(), arch, &tc, DistillLoss::Kl).unwrap();
                println!(
                    "periods {periods} (f {f:.1}) N={n}: student {:.2}",
                    snr(&student, &queries, &key, &cfg)
                );
            }
        }
    }

    println!("total {:?}", t0.elapsed());
    if std::env::var("PROBE_FULL").is_err() {
        return;
    }

    println!("=== 5 curated seeds, eps 0.05, N=1 (criterion-5 shape) ===");
    for seed in 1..=5u64 {
        let (data, used_seed, attempts) = curated_blobs(seed * 1000);
        let (teach, stud, test) = split(&data, (0.4, 0.5, 0.1), seed ^ 0xabc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let order = isolation_order(&data);
        let key = separated_key(&mut rng, &teach.features, &[], order[0]);
        let wrong =
            separated_key(&mut rng, &teach.features, &[key.projection.clone()], order[0]);
        let wm = WatermarkConfig::new(key.clone(), 0.05).unwrap();
        let marked = train_teacher(
            &teach,
            Architecture::SoftmaxRegression,
            &TrainConfig { seed: 100 + seed, ..TrainConfig::default() },
            Some(wm),
        )
        .unwrap();
        let plain = train_teacher(
            &teach,
            Architecture::SoftmaxRegression,
            &TrainConfig { seed: 100 + seed, ..TrainConfig::default() },
            None,
        )
        .unwrap();
        let queries = sample_queries(&data, 2500, seed ^ 0x9).unwrap().features;
        let (arch, tc) = scfg(200 + seed, key.frequency, 144, 200);
        let student = distill(
            &Ensemble::new(vec![marked.clone()]).unwrap(),
            &stud.without_labels(),
            arch,
            &tc,
            DistillLoss::Kl,
        )
        .unwrap();
        let plain_student = distill(
            &Ensemble::new(vec![plain.clone()]).unwrap(),
            &stud.without_labels(),
            arch,
            &tc,
            DistillLoss::Kl,
        )
        .unwrap();
        println!(
            "seed {seed} (attempt {attempts}, data seed {used_seed}): acc m {:.3} p {:.3} | student matched {:.2} wrong {:.2} plain {:.2}",
            accuracy(&marked, &test).unwrap(),
            accuracy(&plain, &test).unwrap(),
            snr(&student, &queries, &key, &cfg),
            snr(&student, &queries, &wrong, &cfg),
            snr(&plain_student, &queries, &key, &cfg),
        );
    }

    println!("=== N=8: eps 0.05 vs 0.2 (criterion-6 monotonicity shape) ===");
    {
        let (data, _, _) = curated_blobs(9000);
        let (teach, stud, _test) = split(&data, (0.4, 0.5, 0.1), 0xf00).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let order = isolation_order(&data);
        let key = separated_key(&mut rng, &teach.features, &[], order[0]);
        let mut plains = Vec::new();
        for i in 0..7u64 {
            plains.push(
                train_teacher(
                    &teach,
                    Architecture::SoftmaxRegression,
                    &TrainConfig { seed: 300 + i, ..TrainConfig::default() },
                    None,
                )
                .unwrap(),
            );
        }
        let queries = sample_queries(&data, 3000, 0x77).unwrap().features;
        for eps in [0.05, 0.2] {
            let wm = WatermarkConfig::new(key.clone(), eps).unwrap();
            let marked = train_teacher(
                &teach,
                Architecture::SoftmaxRegression,
                &TrainConfig { seed: 11, ..TrainConfig::default() },
                Some(wm),
            )
            .unwrap();
            let mut members = vec![marked];
            members.extend(plains.iter().cloned());
            let ens = Ensemble::new(members).unwrap();
            for sseed in [21u64, 22] {
                let (arch, tc) = scfg(sseed, key.frequency, 160, 200);
                let student =
                    distill(&ens, &stud.without_labels(), arch, &tc, DistillLoss::Kl).unwrap();
                println!(
                    "N=8 eps {eps} sseed {sseed}: student matched {:.2}",
                    snr(&student, &queries, &key, &cfg)
                );
            }
        }
    }

    println!("=== multi-watermark N=2 (criterion-7 shape) ===");
    {
        let (data, _, _) = curated_blobs(12000);
        let (teach, stud, _test) = split(&data, (0.4, 0.5, 0.1), 0xf11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let order = isolation_order(&data);
        let key_a = separated_key(&mut rng, &teach.features, &[], order[0]);
        let key_b =
            separated_key(&mut rng, &teach.features, &[key_a.projection.clone()], order[1]);
        let mk = |key: &WatermarkKey, seed: u64| {
            train_teacher(
                &teach,
                Architecture::SoftmaxRegression,
                &TrainConfig { seed, ..TrainConfig::default() },
                Some(WatermarkConfig::new(key.clone(), 0.1).unwrap()),
            )
            .unwrap()
        };
        let ta = mk(&key_a, 31);
        let tb = mk(&key_b, 32);
        let ens = Ensemble::new(vec![ta, tb]).unwrap();
        let queries = sample_queries(&data, 3000, 0x88).unwrap().features;
        let f_cover = key_a.frequency.max(key_b.frequency);
        for sseed in [41u64, 42, 43] {
            let (arch, tc) = scfg(sseed, f_cover, 224, 240);
            let student =
                distill(&ens, &stud.without_labels(), arch, &tc, DistillLoss::Kl).unwrap();
            println!(
                "both-marked N=2 student sseed {sseed}: key A {:.2} | key B {:.2}",
                snr(&student, &queries, &key_a, &cfg),
                snr(&student, &queries, &key_b, &cfg),
            );
        }
    }

    println!("total {:?}", t0.elapsed());
}
