//! Randomized cross-module invariants: storage round-trips, feature
//! indexing, resampling balance, split bookkeeping, and curve identities
//! that must hold for every input, not just the worked examples.

use proptest::prelude::*;

use porovox_core::eval;
use porovox_core::features::{self, SplitSpec};
use porovox_core::grid::{
    load_voxel_csv, store_voxel_csv, Dims3, LabelGrid, ThermalFeatureGrid, VoxelGrid3, VoxelState,
};
use porovox_core::matrix::Matrix;
use porovox_core::resample::{borderline_smote, SmoteConfig};

fn arb_state() -> impl Strategy<Value = VoxelState> {
    prop_oneof![
        3 => Just(VoxelState::Normal),
        1 => Just(VoxelState::Defective),
        1 => Just(VoxelState::Excluded),
    ]
}

type Volume = (Dims3, [f64; 3], Vec<f64>, Vec<f64>, Vec<bool>, Vec<VoxelState>);

fn arb_volume(max_side: usize) -> impl Strategy<Value = Volume> {
    (2..=max_side, 2..=max_side, 2..=max_side).prop_flat_map(|(nx, ny, nz)| {
        let n = nx * ny * nz;
        (
            Just(Dims3::new(nx, ny, nz).unwrap()),
            prop::array::uniform3(1.0f64..500.0),
            // Dwell times must be non-negative wherever the mask is set.
            prop::collection::vec(0.0f64..1e6, n),
            prop::collection::vec(-1e6f64..1e6, n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(arb_state(), n),
        )
    })
}

fn build_grids(v: &Volume) -> (ThermalFeatureGrid, LabelGrid) {
    let (dims, spacing, tau, tmax, mask, states) = v;
    let tau = VoxelGrid3::new(*dims, *spacing, tau.clone()).unwrap();
    let tmax = VoxelGrid3::new(*dims, *spacing, tmax.clone()).unwrap();
    let thermal = ThermalFeatureGrid::new(tau, tmax, mask.clone()).unwrap();
    let labels = LabelGrid::new(*dims, *spacing, states.clone()).unwrap();
    (thermal, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Store → load returns bit-identical grids, labels included.
    #[test]
    fn voxel_csv_round_trips(volume in arb_volume(4)) {
        let (thermal, labels) = build_grids(&volume);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("volume.csv");
        store_voxel_csv(&path, &thermal, Some(&labels)).unwrap();
        let (thermal_back, labels_back) = load_voxel_csv(&path).unwrap();
        prop_assert_eq!(thermal_back.dims(), thermal.dims());
        prop_assert_eq!(thermal_back.spacing_um(), thermal.spacing_um());
        prop_assert_eq!(thermal_back.tau().values(), thermal.tau().values());
        prop_assert_eq!(thermal_back.tmax().values(), thermal.tmax().values());
        prop_assert_eq!(thermal_back.mask(), thermal.mask());
        let labels_back = labels_back.unwrap();
        prop_assert_eq!(labels_back.states(), labels.states());
    }

    /// Column metadata is a bijection: every feature index reconstructs
    /// from its (kind, offset) description, with dz slowest and dx fastest.
    #[test]
    fn feature_meta_is_a_bijection(k in prop::sample::select(vec![1usize, 3, 5, 7])) {
        let half = (k as i64 - 1) / 2;
        let cube = k * k * k;
        for i in 0..2 * cube {
            let (kind, (dx, dy, dz)) = features::feature_index_meta(i, k).unwrap();
            prop_assert!(dx.abs() <= half && dy.abs() <= half && dz.abs() <= half);
            let kind_base = match kind {
                features::FeatureKind::Tau => 0,
                features::FeatureKind::Tmax => cube,
            };
            let rebuilt = kind_base
                + (((dz + half) as usize * k) + (dy + half) as usize) * k
                + (dx + half) as usize;
            prop_assert_eq!(rebuilt, i);
        }
        prop_assert!(features::feature_index_meta(2 * cube, k).is_err());
    }

    /// Every extracted row equals a direct neighborhood lookup, and rows
    /// cover exactly the voxels with full in-mask neighborhoods and
    /// non-excluded labels.
    #[test]
    fn extraction_matches_direct_lookup(
        volume in arb_volume(6),
        k in prop::sample::select(vec![1usize, 3]),
    ) {
        let (thermal, labels) = build_grids(&volume);
        let half = (k as i64 - 1) / 2;
        let (fm, y) = features::extract_kernel(&thermal, &labels, k).unwrap();
        prop_assert_eq!(fm.n_cols(), 2 * k * k * k);
        prop_assert_eq!(fm.n_rows(), y.len());
        let dims = thermal.dims();
        let mut expected_rows = 0usize;
        for z in 0..dims.nz {
            for yy in 0..dims.ny {
                for x in 0..dims.nx {
                    let full = (-half..=half).all(|dz| {
                        (-half..=half).all(|dy| {
                            (-half..=half).all(|dx| {
                                let (xx, yv, zz) =
                                    (x as i64 + dx, yy as i64 + dy, z as i64 + dz);
                                dims.contains_signed(xx, yv, zz)
                                    && thermal.mask_at(xx as usize, yv as usize, zz as usize)
                            })
                        })
                    });
                    if full && labels.state_at(x, yy, z) != VoxelState::Excluded {
                        expected_rows += 1;
                    }
                }
            }
        }
        prop_assert_eq!(fm.n_rows(), expected_rows);
        for (row_idx, &(x, yy, z)) in fm.row_coords().iter().enumerate() {
            prop_assert_eq!(
                y[row_idx] == 1,
                labels.state_at(x, yy, z) == VoxelState::Defective
            );
            for col in 0..fm.n_cols() {
                let (kind, (dx, dy, dz)) = features::feature_index_meta(col, k).unwrap();
                let (xx, yv, zz) = (
                    (x as i64 + dx) as usize,
                    (yy as i64 + dy) as usize,
                    (z as i64 + dz) as usize,
                );
                let want = match kind {
                    features::FeatureKind::Tau => thermal.tau().at(xx, yv, zz),
                    features::FeatureKind::Tmax => thermal.tmax().at(xx, yv, zz),
                };
                prop_assert_eq!(fm.data().get(row_idx, col), want);
            }
        }
    }

    /// Rebalancing always reaches an exact 1:1 class ratio, keeps the
    /// originals untouched up front, and every synthetic row replays from
    /// its logged (p, q, r) triple.
    #[test]
    fn smote_balances_and_replays(
        rows in prop::collection::vec(
            prop::array::uniform3(0.0f64..1.0),
            16..48,
        ),
        n_minority in 5usize..8,
        seed in any::<u64>(),
    ) {
        let n = rows.len();
        // Keep the two classes in separate subcubes so at least one
        // minority row always has minority neighbors to synthesize from.
        let shaped: Vec<Vec<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let offset = if i < n_minority { 0.0 } else { 0.55 };
                r.iter().map(|v| 0.45 * v + offset).collect()
            })
            .collect();
        let x = Matrix::from_rows(&shaped).unwrap();
        let y: Vec<u8> = (0..n).map(|i| u8::from(i < n_minority)).collect();
        let cfg = SmoteConfig { m: 5, k_syn: 3, seed };
        let out = borderline_smote(&x, &y, &cfg).unwrap();
        let pos = out.y.iter().filter(|&&v| v == 1).count();
        let neg = out.y.len() - pos;
        prop_assert_eq!(pos, neg);
        for i in 0..n {
            prop_assert_eq!(out.x.row(i), x.row(i));
            prop_assert_eq!(out.y[i], y[i]);
        }
        prop_assert_eq!(out.log.len(), out.y.len() - n);
        for (s, rec) in out.log.iter().enumerate() {
            prop_assert!(rec.r > 0.0 && rec.r < 1.0);
            prop_assert_eq!(y[rec.p], 1);
            prop_assert_eq!(y[rec.q], 1);
            let made = out.x.row(n + s);
            for c in 0..x.n_cols() {
                let want = x.get(rec.p, c) + rec.r * (x.get(rec.q, c) - x.get(rec.p, c));
                prop_assert!((made[c] - want).abs() < 1e-9);
            }
        }
    }

    /// Train/test splits partition the row indices exactly.
    #[test]
    fn split_partitions_the_rows(
        n in 4usize..200,
        test_fraction in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let n_test_expected = (n as f64 * test_fraction).round() as usize;
        prop_assume!(n_test_expected > 0 && n_test_expected < n);
        let (train, test) = features::split(n, SplitSpec { test_fraction, seed }).unwrap();
        prop_assert_eq!(test.len(), n_test_expected);
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert!(train.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(test.windows(2).all(|w| w[0] < w[1]));
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    /// Min-max scaling maps the matrix it was fitted on into [0, 1].
    #[test]
    fn minmax_scaling_lands_in_the_unit_interval(
        rows in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 2..32),
    ) {
        let x = Matrix::from_rows(
            &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        ).unwrap();
        let scale = features::fit_minmax(&x).unwrap();
        let scaled = features::apply_minmax(&x, &scale).unwrap();
        for row in scaled.rows() {
            for &v in row {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "value {v}");
            }
        }
    }

    /// Trapezoidal ROC area equals pairwise concordance with half credit
    /// for ties, for any score pattern.
    #[test]
    fn auc_is_concordance(
        labeled in prop::collection::vec((any::<bool>(), 0u8..5), 2..48),
    ) {
        let y: Vec<u8> = labeled.iter().map(|&(l, _)| u8::from(l)).collect();
        // Coarse score levels force plenty of exact ties.
        let scores: Vec<f64> = labeled.iter().map(|&(_, s)| f64::from(s) / 4.0).collect();
        let n_pos = y.iter().filter(|&&v| v == 1).count();
        prop_assume!(n_pos > 0 && n_pos < y.len());
        let (_, auc) = eval::roc_auc(&y, &scores).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        prop_assert!((auc - num / den).abs() < 1e-12);
    }

    /// Every precision-recall vertex agrees with a confusion matrix built
    /// at that threshold, and recall never decreases along the curve.
    #[test]
    fn pr_curve_is_a_threshold_sweep(
        labeled in prop::collection::vec((any::<bool>(), 0u8..6), 2..48),
    ) {
        let y: Vec<u8> = labeled.iter().map(|&(l, _)| u8::from(l)).collect();
        let scores: Vec<f64> = labeled.iter().map(|&(_, s)| f64::from(s) / 5.0).collect();
        prop_assume!(y.iter().any(|&v| v == 1));
        let points = eval::pr_curve(&y, &scores).unwrap();
        prop_assert!(points.windows(2).all(|w| w[0].0 <= w[1].0));
        let prevalence =
            y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64;
        let last = *points.last().unwrap();
        prop_assert!((last.0 - 1.0).abs() < 1e-12);
        prop_assert!((last.1 - prevalence).abs() < 1e-12);
        let mut thresholds = scores.clone();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        prop_assert_eq!(points.len(), thresholds.len());
        for (point, &t) in points.iter().zip(&thresholds) {
            let preds: Vec<u8> = scores.iter().map(|&v| u8::from(v >= t)).collect();
            let cm = eval::confusion(&y, &preds).unwrap();
            let m = eval::classification_metrics(&cm);
            prop_assert!((point.0 - m.recall).abs() < 1e-12);
            prop_assert!((point.1 - m.precision).abs() < 1e-12);
        }
    }

    /// Report counts always satisfy their defining identities.
    #[test]
    fn report_counts_are_consistent(
        labeled in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 4..64),
        threshold in 0.0f64..1.0,
    ) {
        let y: Vec<u8> = labeled.iter().map(|&(l, _)| u8::from(l)).collect();
        let scores: Vec<f64> = labeled.iter().map(|&(_, s)| s).collect();
        let n_pos = y.iter().filter(|&&v| v == 1).count();
        prop_assume!(n_pos > 0 && n_pos < y.len());
        let report = eval::evaluate(&y, &scores, threshold).unwrap();
        let cm = report.confusion;
        prop_assert_eq!(cm.total(), y.len());
        prop_assert_eq!(report.predicted_positive_count, cm.true_pos + cm.false_pos);
        prop_assert_eq!(report.ground_truth_positive_count, cm.true_pos + cm.false_neg);
        prop_assert_eq!(report.ground_truth_positive_count, n_pos);
    }
}
