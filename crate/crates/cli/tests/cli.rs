//! End-to-end tests of the `porovox` binary: exit codes, the printed
//! default config, internal consistency of the `run` bundle, and a CT
//! ingestion round trip with a planted rigid shift.

use std::path::Path;
use std::process::{Command, Output};

use porovox_core::grid::{self, Dims3, VoxelState};
use porovox_core::synth::{self, SynthConfig};

fn porovox(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_porovox"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn porovox")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Data rows of a CSV file (header skipped), split into fields.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    read(path)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn printed_defaults_are_a_working_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = porovox(&["--print-defaults"], dir.path());
    assert!(out.status.success());
    let config_path = dir.path().join("defaults.toml");
    std::fs::write(&config_path, &out.stdout).unwrap();

    let out = porovox(
        &["synth", "--config", "defaults.toml", "--out", "bundle"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "synth under the printed defaults failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let volume = read(&dir.path().join("bundle/volume.csv"));
    assert!(volume.starts_with("# dims 24 24 60\n"));
    assert!(dir.path().join("bundle/ground_truth.json").exists());
}

#[test]
fn usage_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // No subcommand.
    assert_eq!(porovox(&[], dir.path()).status.code(), Some(2));
    // Unknown flag (clap's own usage handling).
    assert_eq!(porovox(&["--bogus"], dir.path()).status.code(), Some(2));
    // Config file that does not exist.
    let out = porovox(&["run", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    // Empty model list.
    std::fs::write(
        dir.path().join("empty.toml"),
        "[experiment]\nmodels = []\n",
    )
    .unwrap();
    let out = porovox(&["run", "--config", "empty.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    // Unknown model code.
    std::fs::write(
        dir.path().join("svm.toml"),
        "[experiment]\nmodels = [\"svm\"]\n",
    )
    .unwrap();
    let out = porovox(&["run", "--config", "svm.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_seed_deterministic_and_reports_write_failures() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let out = porovox(&["synth", "--seed", "11", "--out", out], dir.path());
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(dir.path().join("a/volume.csv")).unwrap(),
        std::fs::read(dir.path().join("b/volume.csv")).unwrap()
    );

    // An output path blocked by an existing file fails with a diagnostic.
    std::fs::write(dir.path().join("blocked"), "").unwrap();
    let out = porovox(&["synth", "--out", "blocked"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unreadable_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        "[input]\nthermal_csv = \"nope.csv\"\n",
    )
    .unwrap();
    let out = porovox(&["run", "--config", "cfg.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3));

    // A present but truncated file is also a data error.
    std::fs::write(dir.path().join("nope.csv"), "# dims 2 2\n").unwrap();
    let out = porovox(&["run", "--config", "cfg.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_bundle_is_internally_consistent() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        "seed = 4\n\
         [synth]\n\
         nz = 14\n\
         diameter = 12\n\
         [experiment]\n\
         kernels = [3]\n\
         holdouts = [0.3]\n\
         models = [\"dt\", \"lr\"]\n",
    )
    .unwrap();
    let out = porovox(&["run", "--config", "cfg.toml", "--out", "bundle"], dir.path());
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let bundle = dir.path().join("bundle");

    // table2.csv's F1 column must be the harmonic mean of its own
    // precision and recall columns.
    let table2 = csv_rows(&bundle.join("table2.csv"));
    assert_eq!(table2.len(), 2);
    for row in &table2 {
        let (p, r, f1): (f64, f64, f64) = (
            row[3].parse().unwrap(),
            row[4].parse().unwrap(),
            row[5].parse().unwrap(),
        );
        let expect = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        assert!((f1 - expect).abs() <= 1e-9, "F1 {f1} vs recomputed {expect}");
    }

    for row in csv_rows(&bundle.join("table1.csv")) {
        let auc: f64 = row[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&auc), "AUC {auc} out of range");
    }

    for stem in ["dt_k3_h0.3", "lr_k3_h0.3"] {
        let report: serde_json::Value =
            serde_json::from_str(&read(&bundle.join(format!("cells/{stem}.json")))).unwrap();
        let count = |key: &str| report[key].as_u64().unwrap();
        let (tp, fp, fnn, tn) = (count("tp"), count("fp"), count("fn"), count("tn"));

        // The map holds exactly the held-out voxels, in layer-major order,
        // and its truth/prediction tallies match the confusion matrix.
        let map = csv_rows(&bundle.join(format!("maps/{stem}.csv")));
        assert_eq!(map.len() as u64, tp + fp + fnn + tn);
        let coords: Vec<(u64, u64, u64)> = map
            .iter()
            .map(|r| {
                (
                    r[2].parse().unwrap(),
                    r[1].parse().unwrap(),
                    r[0].parse().unwrap(),
                )
            })
            .collect();
        let mut sorted = coords.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(coords, sorted, "map rows out of order or duplicated");
        let truth_ones = map.iter().filter(|r| r[3] == "1").count() as u64;
        let pred_ones = map.iter().filter(|r| r[4] == "1").count() as u64;
        assert_eq!(truth_ones, tp + fnn);
        assert_eq!(truth_ones, count("ground_truth_positive_count"));
        assert_eq!(pred_ones, tp + fp);
        assert_eq!(pred_ones, count("predicted_positive_count"));

        let roc = csv_rows(&bundle.join(format!("curves/{stem}_roc.csv")));
        assert_eq!(
            roc.len() as u64,
            report["roc_points"].as_array().unwrap().len() as u64
        );
    }
}

#[test]
fn ingest_recovers_a_planted_shift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        nz: 10,
        diameter: 12,
        seed: 3,
        ..SynthConfig::default()
    };
    let (thermal, _, _) = synth::generate(&cfg).unwrap();
    let dims = thermal.dims();
    grid::store_voxel_csv(&dir.path().join("thermal.csv"), &thermal, None).unwrap();

    // Fine CT grid at half the spacing: each coarse voxel owns a 2x2x2
    // block of fine voxels. Its grayscale copies the thermal peak field,
    // with the content shifted by (px, py) whole coarse voxels.
    let (px, py) = (2i64, -1i64);
    let threshold = 1380.0;
    let background = 1.0e4; // out-of-range fill, far above any pore level
    let fdims = Dims3::new(2 * dims.nx, 2 * dims.ny, 2 * dims.nz).unwrap();
    let mut gray = vec![0.0f64; fdims.n_voxels()];
    for z in 0..fdims.nz {
        for y in 0..fdims.ny {
            for x in 0..fdims.nx {
                let sx = (x / 2) as i64 - px;
                let sy = (y / 2) as i64 - py;
                gray[fdims.linear_index(x, y, z).unwrap()] =
                    if dims.contains_signed(sx, sy, (z / 2) as i64) {
                        thermal.tmax().at(sx as usize, sy as usize, z / 2)
                    } else {
                        background
                    };
            }
        }
    }
    let ct = porovox_core::ctproc::CtVolume::new(
        fdims,
        [50.0, 50.0, 25.0],
        gray,
        Some(vec![false; fdims.n_voxels()]),
    )
    .unwrap();
    ct.store_csv(&dir.path().join("ct.csv")).unwrap();

    std::fs::write(
        dir.path().join("cfg.toml"),
        format!(
            "[input]\n\
             thermal_csv = \"thermal.csv\"\n\
             ct_csv = \"ct.csv\"\n\
             [ingest]\n\
             gray_threshold = {threshold}\n\
             window = [3, 3]\n"
        ),
    )
    .unwrap();
    let out = porovox(&["ingest", "--config", "cfg.toml", "--out", "aligned"], dir.path());
    assert!(
        out.status.success(),
        "ingest failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let reg: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("aligned/registration.json"))).unwrap();
    assert_eq!(reg["translation"]["dx"].as_i64(), Some(-px));
    assert_eq!(reg["translation"]["dy"].as_i64(), Some(-py));
    assert_eq!(reg["translation"]["dz"].as_i64(), Some(0));

    // After alignment every voxel whose shifted source exists must carry
    // the label the pore rule dictates at its own thermal value; sources
    // pushed off the grid must be excluded.
    let (back, labels) = grid::load_voxel_csv(&dir.path().join("aligned/labeled.csv")).unwrap();
    assert_eq!(back.dims(), dims);
    let labels = labels.expect("ingest must write labels");
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let sourced = dims.contains_signed(x as i64 + px, y as i64 + py, z as i64);
                let state = labels.state_at(x, y, z);
                if !sourced {
                    assert_eq!(state, VoxelState::Excluded, "at ({x}, {y}, {z})");
                } else if thermal.tmax().at(x, y, z) < threshold {
                    assert_eq!(state, VoxelState::Defective, "at ({x}, {y}, {z})");
                } else {
                    assert_eq!(state, VoxelState::Normal, "at ({x}, {y}, {z})");
                }
            }
        }
    }
}
