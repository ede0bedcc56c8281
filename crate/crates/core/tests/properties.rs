use damage_core::cnn::{build_paper_cnn, PaperCnnConfig};
use damage_core::data::augment::rotate;
use damage_core::data::{
    augment_one, stratified_split, AugmentSpec, DatasetManifest, LabeledImage, ManifestEntry, Split, NUM_CLASSES,
};
use damage_core::eval::{argmax, confusion, metrics, ConfusionMatrix};
use damage_core::geom::Rect;
use damage_core::localize::{sliding_window_map, threshold_regions, CropClassifier, Heatmap, LocalizeConfig};
use damage_core::tensor::{conv2d, matmul, maxpool2d, Padding};
use damage_core::transfer::{ensemble_predict, normalize_weights, separable_features, train_softmax_head, HeadHyper, LinearHead};
use damage_core::{Prng, Result, Tensor};
use proptest::prelude::*;

mod common;
use common::naive_conv;

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Prng::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn conv_matches_naive(
        h in 1usize..=16, w in 1usize..=16, c in 1usize..=4, f in 1usize..=4,
        k in 1usize..=5, stride in 1usize..=3, same in any::<bool>(), seed in any::<u64>(),
    ) {
        let padding = if same { Padding::Same } else { Padding::Valid };
        prop_assume!(same || (k <= h && k <= w));
        let x = tensor(&[h, w, c], seed);
        let kern = tensor(&[k, k, c, f], seed ^ 1);
        let bias = tensor(&[f], seed ^ 2).into_data();
        let fast = conv2d(&x, &kern, Some(&bias), stride, padding);
        prop_assume!(fast.is_ok());
        let fast = fast.unwrap();
        let slow = naive_conv(&x, &kern, &bias, stride, padding);
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-10);
    }

    #[test]
    fn matmul_identity_and_transpose(m in 1usize..8, n in 1usize..8, p in 1usize..8, seed in any::<u64>()) {
        let a = tensor(&[m, n], seed);
        let b = tensor(&[n, p], seed ^ 7);
        prop_assert_eq!(matmul(&a, &Tensor::identity(n)).unwrap(), a.clone());
        prop_assert_eq!(matmul(&Tensor::identity(m), &a).unwrap(), a.clone());
        let left = matmul(&a, &b).unwrap().transpose().unwrap();
        let right = matmul(&b.transpose().unwrap(), &a.transpose().unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) <= 1e-10);
    }

    #[test]
    fn maxpool_outputs_come_from_their_window(
        h in 2usize..12, w in 2usize..12, c in 1usize..4, win in 1usize..4, stride in 1usize..4, seed in any::<u64>(),
    ) {
        prop_assume!(win <= h && win <= w);
        let x = tensor(&[h, w, c], seed);
        let (y, _) = maxpool2d(&x, win, stride).unwrap();
        let (oh, ow) = (y.shape()[0], y.shape()[1]);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let v = y.get(&[oy, ox, ch]);
                    let found = (0..win).any(|dy| (0..win).any(|dx| {
                        x.get(&[oy * stride + dy, ox * stride + dx, ch]) == v
                    }));
                    prop_assert!(found);
                }
            }
        }
    }

    #[test]
    fn paper_cnn_parameter_formula(
        hb in 1usize..5, wb in 1usize..5, c in 1usize..4, filters in 1usize..6,
        kernel in 1usize..6, hidden in 1usize..20, classes in 2usize..9,
    ) {
        let cfg = PaperCnnConfig {
            input: [16 * hb, 16 * wb, c],
            filters,
            kernel,
            fc_hidden: hidden,
            classes,
            ..PaperCnnConfig::with_input(16, 16, 1)
        };
        let net = build_paper_cnn(&cfg).unwrap();
        let k2 = kernel * kernel;
        let formula = filters * (k2 * c + 1)
            + 3 * filters * (k2 * filters + 1)
            + (16 * hb * 16 * wb / 256) * filters * hidden + hidden
            + hidden * classes + classes;
        let registry: usize = net.params().map(|(_, p)| p.value.len()).sum();
        prop_assert_eq!(net.param_count(), formula);
        prop_assert_eq!(registry, formula);
        prop_assert_eq!(cfg.param_count(), formula);
    }

    #[test]
    fn ensemble_properties(members in 1usize..6, classes in 2usize..9, scale in 0.01f64..100.0, seed in any::<u64>()) {
        let mut rng = Prng::new(seed);
        let rows: Vec<Vec<f64>> = (0..members)
            .map(|_| normalize_weights(&(0..classes).map(|_| rng.next_f64() + 1e-6).collect::<Vec<_>>()).unwrap())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let raw: Vec<f64> = (0..members).map(|_| rng.next_f64() + 1e-3).collect();
        let w = normalize_weights(&raw).unwrap();
        let p = ensemble_predict(&w, &refs).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        let scaled: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        let p2 = ensemble_predict(&normalize_weights(&scaled).unwrap(), &refs).unwrap();
        prop_assert_eq!(argmax(&p), argmax(&p2));

        let same = vec![rows[0].as_slice(); members];
        prop_assert_eq!(ensemble_predict(&w, &same).unwrap(), rows[0].clone());
    }

    #[test]
    fn zero_weight_constant_column_keeps_predictions(constant in -5.0f64..5.0, seed in 0u64..1000) {
        let fs = separable_features(6, 5, 4, 1.0, 0.4, seed).unwrap();
        let head = train_softmax_head(&fs, &HeadHyper { epochs: 5, ..Default::default() }).unwrap();
        let mut weights = head.weights.clone();
        weights.extend(std::iter::repeat_n(0.0, head.classes));
        let wider = LinearHead { dim: head.dim + 1, weights, ..head.clone() };
        for row in fs.rows() {
            let mut x = row.to_vec();
            x.push(constant);
            prop_assert_eq!(wider.predict(&x), head.predict(row));
        }
    }

    #[test]
    fn augmentation_keeps_label_and_shape(h in 3usize..20, w in 3usize..20, c in 1usize..4, label in 0usize..8, seed in any::<u64>()) {
        let img = LabeledImage::new(tensor(&[h, w, c], seed).map(|v| 0.5 + 0.5 * v), label, "src").unwrap();
        let mut rng = Prng::new(seed);
        for _ in 0..5 {
            let out = augment_one(&img, &AugmentSpec::default(), &mut rng);
            prop_assert_eq!(out.label, label);
            prop_assert_eq!(out.pixels.shape(), img.pixels.shape());
        }
    }

    #[test]
    fn rotating_a_centered_disk_barely_changes_it(degrees in -180.0f64..180.0) {
        // Disk of radius 20 with a 3-pixel linear edge, centred on the rotation centre.
        let n = 64;
        let centre = (n as f64 - 1.0) / 2.0;
        let data: Vec<f64> = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64 - centre, (i % n) as f64 - centre);
                ((21.5 - (x * x + y * y).sqrt()) / 3.0).clamp(0.0, 1.0)
            })
            .collect();
        let disk = Tensor::new(vec![n, n, 1], data).unwrap();
        let rotated = rotate(&disk, degrees);
        let mse = disk.data().iter().zip(rotated.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (n * n) as f64;
        prop_assert!(mse.sqrt() < 0.02, "rms {}", mse.sqrt());
    }

    #[test]
    fn split_is_a_partition(counts in proptest::collection::vec(2usize..30, NUM_CLASSES), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let entries: Vec<ManifestEntry> = counts
            .iter()
            .enumerate()
            .flat_map(|(class, &n)| (0..n).map(move |i| ManifestEntry {
                id: format!("c{class}_{i}"),
                class,
                split: Split::Unassigned,
            }))
            .collect();
        let manifest = DatasetManifest::new(entries.clone());
        let split = stratified_split(&manifest, frac, seed).unwrap();
        prop_assert_eq!(split.entries.len(), entries.len());
        let mut ids: Vec<&str> = split.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        let mut want: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
        want.sort_unstable();
        prop_assert_eq!(ids, want);
        prop_assert!(split.entries.iter().all(|e| e.split == Split::Train || e.split == Split::Test));
        let train = split.counts(Some(Split::Train));
        let test = split.counts(Some(Split::Test));
        for c in 0..NUM_CLASSES {
            prop_assert_eq!(train[c] + test[c], counts[c]);
        }
    }

    #[test]
    fn metrics_identities(
        labels in proptest::collection::vec(0usize..5, 1..60),
        noise in proptest::collection::vec(0usize..5, 60),
        perm_seed in any::<u64>(),
    ) {
        let k = 5;
        let preds: Vec<usize> = labels.iter().zip(&noise).map(|(&l, &n)| if n < 2 { n } else { l }).collect();
        let cm = confusion(&preds, &labels, k).unwrap();
        let m = metrics(&cm).unwrap();
        for v in [m.accuracy, m.precision, m.recall] {
            prop_assert!((0.0..=100.0).contains(&v));
        }

        let mut perm: Vec<usize> = (0..k).collect();
        Prng::new(perm_seed).shuffle(&mut perm);
        let mut permuted = ConfusionMatrix::zeros(k);
        for i in 0..k {
            for j in 0..k {
                permuted.counts[perm[i]][perm[j]] = cm.counts[i][j];
            }
        }
        prop_assert_eq!(metrics(&permuted).unwrap().accuracy, m.accuracy);

        let total = labels.len() as f64;
        let weighted: f64 = (0..k)
            .map(|i| {
                let n_i: u64 = cm.counts[i].iter().sum();
                if n_i == 0 { 0.0 } else { (n_i as f64 / total) * (cm.counts[i][i] as f64 / n_i as f64) }
            })
            .sum::<f64>() * 100.0;
        prop_assert!((weighted - m.accuracy).abs() < 1e-9);
    }
}

/// Deterministic pseudo-probabilities from the crop's position and a digest
/// of its pixels.
struct PositionClassifier {
    size: usize,
}

impl CropClassifier for PositionClassifier {
    fn classes(&self) -> usize {
        NUM_CLASSES
    }

    fn input_size(&self) -> usize {
        self.size
    }

    fn classify(&self, crop: &Tensor, window: Rect) -> Result<Vec<f64>> {
        let digest: f64 = crop.data().iter().sum();
        let mut rng = Prng::new((window.x * 1009 + window.y) as u64 ^ digest.to_bits());
        let raw: Vec<f64> = (0..NUM_CLASSES).map(|_| rng.next_f64() + 1e-3).collect();
        Ok(normalize_weights(&raw).unwrap())
    }
}

fn scene(seed: u64) -> Tensor {
    tensor(&[40, 36, 3], seed).map(|v| 0.5 + 0.5 * v)
}

fn loc(stride: usize, threshold: f64) -> LocalizeConfig {
    LocalizeConfig {
        window: 12,
        resize_to: 8,
        stride,
        threshold,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn heatmap_cells_are_classifier_outputs(seed in any::<u64>(), stride in 1usize..8) {
        let image = scene(seed);
        let clf = PositionClassifier { size: 8 };
        let hm: Heatmap = sliding_window_map(&image, &clf, &loc(stride, 0.5)).unwrap();
        let mut rng = Prng::new(seed);
        for _ in 0..10 {
            let (gy, gx) = (rng.below(hm.grid_height), rng.below(hm.grid_width));
            let r = hm.cell_window(gy, gx);
            let crop = damage_core::localize::crop_resized(&image, r, 8).unwrap();
            let direct = clf.classify(&crop, r).unwrap();
            for (c, p) in direct.iter().enumerate() {
                prop_assert_eq!(hm.get(c, gy, gx), *p);
            }
        }
    }

    #[test]
    fn lower_threshold_never_loses_cells(seed in any::<u64>(), t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let hm = sliding_window_map(&scene(seed), &PositionClassifier { size: 8 }, &loc(4, 0.5)).unwrap();
        let cells = |t: f64| hm.values[..NUM_CLASSES - 1].iter().flatten().filter(|&&v| v >= t).count();
        prop_assert!(cells(lo) >= cells(hi));
        let area = |t: f64| threshold_regions(&hm, &loc(4, t)).len();
        // A region set can split or merge, but it is only empty when no cell passes.
        prop_assert_eq!(area(hi) == 0, cells(hi) == 0);
    }

    #[test]
    fn strides_agree_on_shared_points(seed in any::<u64>(), k in 2usize..7) {
        let image = scene(seed);
        let clf = PositionClassifier { size: 8 };
        let fine = sliding_window_map(&image, &clf, &loc(1, 0.5)).unwrap();
        let coarse = sliding_window_map(&image, &clf, &loc(k, 0.5)).unwrap();
        for gy in 0..coarse.grid_height {
            for gx in 0..coarse.grid_width {
                for c in 0..NUM_CLASSES {
                    prop_assert_eq!(coarse.get(c, gy, gx), fine.get(c, gy * k, gx * k));
                }
            }
        }
    }
}
