//! Subcommand implementations. Each command resolves its inputs, runs the
//! core pipeline stages with per-stage wall-time reporting on stderr, and
//! writes its outputs atomically (temp file + rename) under `out_dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use porovox_core::ctproc::{self, CtVolume};
use porovox_core::eval::{self, ExperimentCell, StudyConfig, TableConfig};
use porovox_core::features::{feature_index_meta, FeatureKind};
use porovox_core::grid::{self, LabelGrid, ThermalFeatureGrid};
use porovox_core::synth;

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Runs one named stage and reports its wall time.
fn stage<T>(name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    let start = Instant::now();
    let out = f()?;
    log::info!("{name}: {:.2}s", start.elapsed().as_secs_f64());
    Ok(out)
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn commit(tmp: &Path, path: &Path) -> Result<(), CliError> {
    fs::rename(tmp, path)
        .map_err(|e| CliError::Pipeline(format!("finalize {}: {e}", path.display())))
}

/// Writes text to `path` atomically, creating parent directories as needed.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Pipeline(format!("create {}: {e}", dir.display())))?;
    }
    let tmp = tmp_sibling(path);
    fs::write(&tmp, contents)
        .map_err(|e| CliError::Pipeline(format!("write {}: {e}", path.display())))?;
    commit(&tmp, path)
}

fn write_voxel_csv_atomic(
    path: &Path,
    thermal: &ThermalFeatureGrid,
    labels: Option<&LabelGrid>,
) -> Result<(), CliError> {
    let tmp = tmp_sibling(path);
    grid::store_voxel_csv(&tmp, thermal, labels)
        .map_err(|e| CliError::Pipeline(format!("write {}: {e}", path.display())))?;
    commit(&tmp, path)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Pipeline(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, &text)
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Pipeline(format!("create {}: {e}", cfg.out_dir.display())))
}

/// Loads the configured labeled volume, or synthesizes one when no input
/// CSV is configured. `run` and `importance` both start here.
fn labeled_input(cfg: &ExperimentConfig) -> Result<(ThermalFeatureGrid, LabelGrid), CliError> {
    match &cfg.input.thermal_csv {
        Some(path) => {
            let (thermal, labels) = stage("load volume", || {
                grid::load_voxel_csv(path)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
            })?;
            let labels = labels.ok_or_else(|| {
                CliError::Data(format!(
                    "{}: no label column; run `ingest` first or use a synthetic volume",
                    path.display()
                ))
            })?;
            Ok((thermal, labels))
        }
        None => {
            let (thermal, labels, truth) = stage("synthesize volume", || {
                synth::generate(&cfg.synth).map_err(|e| CliError::Pipeline(e.to_string()))
            })?;
            log::info!(
                "no input volume configured; synthesized one (seed {}, expected prevalence {:.4})",
                cfg.seed,
                truth.expected_prevalence
            );
            Ok((thermal, labels))
        }
    }
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    let (thermal, labels, truth) = stage("generate", || {
        synth::generate(&cfg.synth).map_err(|e| CliError::Pipeline(e.to_string()))
    })?;
    let d = thermal.dims();
    log::info!(
        "generated {}x{}x{} volume, {} in-mask voxels, expected prevalence {:.4}, attainable AUC {:.4}",
        d.nx,
        d.ny,
        d.nz,
        thermal.n_masked(),
        truth.expected_prevalence,
        truth.bayes_auc
    );
    stage("write outputs", || {
        write_voxel_csv_atomic(&cfg.out_dir.join("volume.csv"), &thermal, Some(&labels))?;
        write_json(&cfg.out_dir.join("ground_truth.json"), &truth)
    })?;
    log::info!("wrote {}", cfg.out_dir.join("volume.csv").display());
    Ok(())
}

pub fn cmd_ingest(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let thermal_path = cfg.input.thermal_csv.as_ref().ok_or_else(|| {
        CliError::Usage("ingest needs input.thermal_csv (the reference grid)".to_string())
    })?;
    let ct_path = cfg
        .input
        .ct_csv
        .as_ref()
        .ok_or_else(|| CliError::Usage("ingest needs input.ct_csv".to_string()))?;
    ensure_out_dir(cfg)?;

    let (thermal, _) = stage("load thermal volume", || {
        grid::load_voxel_csv(thermal_path)
            .map_err(|e| CliError::Data(format!("{}: {e}", thermal_path.display())))
    })?;
    let ct = stage("load CT volume", || {
        CtVolume::load_csv(ct_path)
            .map_err(|e| CliError::Data(format!("{}: {e}", ct_path.display())))
    })?;

    let ing = &cfg.ingest;
    let binary = stage("segment pores", || {
        ctproc::binarize_ct(&ct, ing.gray_threshold, ing.pore_polarity)
            .map_err(|e| CliError::Pipeline(e.to_string()))
    })?;
    let down = stage("down-sample", || {
        ctproc::downsample_ct(&binary, thermal.spacing_um(), ing.pore_fraction_threshold)
            .map_err(|e| CliError::Pipeline(e.to_string()))
    })?;
    let reg = stage("register", || {
        ctproc::register_xy(
            &down.grayscale,
            &thermal,
            ing.dz,
            (ing.window[0], ing.window[1]),
            ing.register_against,
            ing.bins,
        )
        .map_err(|e| CliError::Pipeline(e.to_string()))
    })?;
    let t = reg.translation;
    log::info!(
        "registered at (dx, dy, dz) = ({}, {}, {}), MI {:.4} over {} voxels",
        t.dx,
        t.dy,
        t.dz,
        reg.mi_score,
        reg.n_overlap
    );

    let aligned = ctproc::apply_translation(&down.labels, t, thermal.dims());
    let (n_normal, n_defective, n_excluded) = aligned.state_counts();
    log::info!(
        "labels on thermal grid: {n_normal} normal, {n_defective} defective, {n_excluded} excluded"
    );
    stage("write outputs", || {
        write_voxel_csv_atomic(&cfg.out_dir.join("labeled.csv"), &thermal, Some(&aligned))?;
        write_json(&cfg.out_dir.join("registration.json"), &reg)
    })?;
    log::info!("wrote {}", cfg.out_dir.join("labeled.csv").display());
    Ok(())
}

/// File stem for one experiment cell, e.g. `rf_k5_h0.3`.
fn cell_stem(cell: &ExperimentCell) -> String {
    format!("{}_k{}_h{}", cell.model.code(), cell.kernel_k, cell.holdout)
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let models = cfg.models()?;
    if models.is_empty() {
        return Err(CliError::Usage("experiment.models is empty".to_string()));
    }
    ensure_out_dir(cfg)?;
    let (thermal, labels) = labeled_input(cfg)?;

    let table_cfg = TableConfig {
        kernels: cfg.experiment.kernels.clone(),
        holdouts: cfg.experiment.holdouts.clone(),
        models,
        hp: cfg.hp.clone(),
        smote: cfg.smote,
        scale_fit: cfg.experiment.scale_fit,
        threshold: cfg.experiment.threshold,
        seed: cfg.seed,
    };
    let cells = stage("experiment grid", || {
        eval::experiment_table(&thermal, &labels, &table_cfg)
            .map_err(|e| CliError::Pipeline(e.to_string()))
    })?;

    stage("write outputs", || {
        let mut table1 =
            String::from("model,kernel,holdout,auc,predicted_positive_count,ground_truth_positive_count\n");
        let mut table2 = String::from("model,kernel,holdout,precision,recall,f1,accuracy\n");
        for cell in &cells {
            let r = &cell.report;
            let _ = writeln!(
                table1,
                "{},{},{},{},{},{}",
                cell.model.code(),
                cell.kernel_k,
                cell.holdout,
                r.auc,
                r.predicted_positive_count,
                r.ground_truth_positive_count
            );
            let _ = writeln!(
                table2,
                "{},{},{},{},{},{},{}",
                cell.model.code(),
                cell.kernel_k,
                cell.holdout,
                r.precision,
                r.recall,
                r.f1,
                r.accuracy
            );

            let stem = cell_stem(cell);
            write_json(&cfg.out_dir.join("cells").join(format!("{stem}.json")), r)?;
            let curves = cfg.out_dir.join("curves");
            write_atomic(
                &curves.join(format!("{stem}_roc.csv")),
                &eval::points_csv("fpr", "tpr", &r.roc_points),
            )?;
            write_atomic(
                &curves.join(format!("{stem}_pr.csv")),
                &eval::points_csv("recall", "precision", &r.pr_points),
            )?;

            // Spatial error map over the held-out voxels, in layer order so
            // consumers can replay it slice by slice.
            let mut rows: Vec<(usize, usize, usize, u8, u8)> = cell
                .test_coords
                .iter()
                .zip(cell.truth.iter().zip(cell.predictions.iter()))
                .map(|(&(x, y, z), (&t, &p))| (x, y, z, t, p))
                .collect();
            rows.sort_by_key(|&(x, y, z, _, _)| (z, y, x));
            let mut map = String::from("x,y,z,truth,prediction\n");
            for (x, y, z, t, p) in rows {
                let _ = writeln!(map, "{x},{y},{z},{t},{p}");
            }
            write_atomic(&cfg.out_dir.join("maps").join(format!("{stem}.csv")), &map)?;
        }
        write_atomic(&cfg.out_dir.join("table1.csv"), &table1)?;
        write_atomic(&cfg.out_dir.join("table2.csv"), &table2)
    })?;
    log::info!(
        "wrote {} cells under {}",
        cells.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn cmd_importance(cfg: &ExperimentConfig) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    let (thermal, labels) = labeled_input(cfg)?;

    let study = StudyConfig {
        n_splits: cfg.importance.n_splits,
        train_fraction: cfg.importance.train_fraction,
        forest: cfg.hp.forest.clone(),
        smote: cfg.smote,
        seed: cfg.seed,
    };
    let report = stage("importance study", || {
        eval::importance_study(&thermal, &labels, cfg.importance.kernel, &study)
            .map_err(|e| CliError::Pipeline(e.to_string()))
    })?;
    if report.low_replication {
        log::warn!(
            "only {} split(s); the averaged importances may be noisy",
            report.n_splits
        );
    }
    log::info!(
        "mean importance by field: tau {:.6}, tmax {:.6}",
        report.per_kind.tau_mean,
        report.per_kind.tmax_mean
    );

    stage("write outputs", || {
        let k = report.kernel_k;
        let mut means = String::from("feature_index,kind,dx,dy,dz,mean_score\n");
        for (i, &score) in report.mean_score.iter().enumerate() {
            let (kind, (dx, dy, dz)) = feature_index_meta(i, k)
                .map_err(|e| CliError::Pipeline(format!("feature {i}: {e}")))?;
            let kind = match kind {
                FeatureKind::Tau => "tau",
                FeatureKind::Tmax => "tmax",
            };
            let _ = writeln!(means, "{i},{kind},{dx},{dy},{dz},{score}");
        }
        write_atomic(&cfg.out_dir.join("importance_mean.csv"), &means)?;

        let mut layers = String::from("dz,mean_score\n");
        for (dz, score) in &report.per_layer {
            let _ = writeln!(layers, "{dz},{score}");
        }
        write_atomic(&cfg.out_dir.join("per_layer.csv"), &layers)?;
        write_json(&cfg.out_dir.join("importance_report.json"), &report)
    })?;
    log::info!("wrote {}", cfg.out_dir.join("importance_report.json").display());
    Ok(())
}
