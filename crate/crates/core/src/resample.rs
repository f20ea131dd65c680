//! Borderline-SMOTE oversampling: synthesize minority-class rows near the
//! class boundary until training labels are balanced exactly 1:1.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// Borderline-SMOTE parameters (the Borderline-1 variant: synthesis pulls
/// only toward minority neighbors).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteConfig {
    /// Neighbors consulted when deciding whether a minority row sits on the
    /// class border.
    pub m: usize,
    /// Minority neighbors a border row may interpolate toward.
    pub k_syn: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            m: 10,
            k_syn: 5,
            seed: 0,
        }
    }
}

/// Border classification of one minority row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MinorityTag {
    /// Most neighbors are minority; no synthesis needed here.
    Safe,
    /// Half or more (but not all) neighbors are majority: a border row,
    /// eligible as a synthesis origin.
    Danger,
    /// Every neighbor is majority; treated as noise and never synthesized
    /// from.
    Noise,
}

/// One synthetic row's provenance: s = row(p) + r·(row(q) − row(p)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoteRecord {
    pub p: usize,
    pub q: usize,
    pub r: f64,
}

/// Oversampling result: original rows first, synthetic rows appended, plus
/// the generation log that lets every synthetic row be replayed.
#[derive(Debug, Clone)]
pub struct SmoteOutput {
    pub x: Matrix,
    pub y: Vec<u8>,
    pub log: Vec<SmoteRecord>,
    /// True when no minority row was border-tagged and synthesis fell back
    /// to plain SMOTE over all minority rows.
    pub fallback_plain: bool,
}

fn class_split(y: &[u8]) -> Result<(u8, Vec<usize>, Vec<usize>)> {
    let ones: Vec<usize> = y.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect();
    let zeros: Vec<usize> = y.iter().enumerate().filter(|(_, &v)| v == 0).map(|(i, _)| i).collect();
    if ones.is_empty() || zeros.is_empty() {
        return Err(Error::InvalidArgument(
            "both classes must be present to oversample".into(),
        ));
    }
    // The minority class is the rarer one; a tie defaults to class 1, which
    // is the defective (positive) class throughout the pipeline.
    if zeros.len() < ones.len() {
        Ok((0, zeros, ones))
    } else {
        Ok((1, ones, zeros))
    }
}

/// Indices of the `count` nearest rows to `from` among `pool` (self
/// excluded), nearest first; distance ties go to the lower row index.
fn nearest_in_pool(x: &Matrix, from: usize, pool: &[usize], count: usize) -> Vec<usize> {
    let mut dists: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&i| i != from)
        .map(|&i| (squared_distance(x.row(from), x.row(i)), i))
        .collect();
    let count = count.min(dists.len());
    let total_order =
        |a: &(f64, usize), b: &(f64, usize)| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1));
    if count < dists.len() {
        dists.select_nth_unstable_by(count, total_order);
        dists.truncate(count);
    }
    dists.sort_unstable_by(total_order);
    dists.into_iter().map(|(_, i)| i).collect()
}

/// Tags every minority row as safe, danger, or noise by the composition of
/// its `m` nearest neighbors in the full training set: with m′ majority
/// neighbors, noise iff m′ == m, danger iff m/2 ≤ m′ < m, safe otherwise.
/// Returns (row index, tag) pairs in row order.
pub fn classify_minority(x: &Matrix, y: &[u8], m: usize) -> Result<Vec<(usize, MinorityTag)>> {
    if y.len() != x.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} rows",
            y.len(),
            x.n_rows()
        )));
    }
    if m == 0 || m >= x.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "neighbor count m={m} must be in 1..{} (rows minus self)",
            x.n_rows()
        )));
    }
    let (minority_label, minority, _) = class_split(y)?;
    let all: Vec<usize> = (0..x.n_rows()).collect();
    let tags: Vec<(usize, MinorityTag)> = minority
        .par_iter()
        .map(|&p| {
            let neighbors = nearest_in_pool(x, p, &all, m);
            let m_majority = neighbors.iter().filter(|&&i| y[i] != minority_label).count();
            let tag = if m_majority == m {
                MinorityTag::Noise
            } else if 2 * m_majority >= m {
                MinorityTag::Danger
            } else {
                MinorityTag::Safe
            };
            (p, tag)
        })
        .collect();
    Ok(tags)
}

/// Balances classes exactly 1:1 by Borderline-SMOTE (Borderline-1).
///
/// Synthesis origins are the danger-tagged minority rows; each synthetic row
/// interpolates from an origin p toward one of p's `k_syn` nearest minority
/// neighbors q as s = p + r·(q − p), r uniform in (0, 1), cycling round-robin
/// over the origins until the minority count equals the majority count. When
/// no row is danger-tagged the origins fall back to every non-noise minority
/// row (plain SMOTE) with a logged warning; noise-tagged rows never originate
/// synthesis, so a minority class that is entirely noise is an error.
/// Already-balanced input passes through unchanged. Deterministic for a
/// given seed.
pub fn borderline_smote(x: &Matrix, y: &[u8], cfg: &SmoteConfig) -> Result<SmoteOutput> {
    if cfg.k_syn == 0 {
        return Err(Error::InvalidArgument("k_syn must be at least 1".into()));
    }
    let (minority_label, minority, majority) = class_split(y)?;
    if minority.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 minority rows to interpolate, got {}",
            minority.len()
        )));
    }
    let deficit = majority.len() - minority.len();
    if deficit == 0 {
        return Ok(SmoteOutput {
            x: x.clone(),
            y: y.to_vec(),
            log: Vec::new(),
            fallback_plain: false,
        });
    }

    let tags = classify_minority(x, y, cfg.m)?;
    let mut origins: Vec<usize> = tags
        .iter()
        .filter(|(_, tag)| *tag == MinorityTag::Danger)
        .map(|(i, _)| *i)
        .collect();
    let fallback_plain = origins.is_empty();
    if fallback_plain {
        origins = tags
            .iter()
            .filter(|(_, tag)| *tag != MinorityTag::Noise)
            .map(|(i, _)| *i)
            .collect();
        if origins.is_empty() {
            return Err(Error::InvalidArgument(
                "every minority row is noise-tagged; refusing to synthesize from noise".into(),
            ));
        }
        log::warn!(
            "no danger-tagged minority rows; falling back to plain SMOTE over {} non-noise minority rows",
            origins.len()
        );
    }

    // Each origin's candidate partners: its k_syn nearest minority neighbors.
    let partners: Vec<Vec<usize>> = origins
        .par_iter()
        .map(|&p| nearest_in_pool(x, p, &minority, cfg.k_syn))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out_x = x.clone();
    let mut out_y = y.to_vec();
    let mut log = Vec::with_capacity(deficit);
    let mut synthetic = vec![0.0f64; x.n_cols()];
    for round in 0..deficit {
        let origin_slot = round % origins.len();
        let p = origins[origin_slot];
        let candidates = &partners[origin_slot];
        let q = candidates[rng.random_range(0..candidates.len())];
        let r = loop {
            let r = rng.random::<f64>();
            if r > 0.0 {
                break r;
            }
        };
        let p_row = x.row(p);
        let q_row = x.row(q);
        for (slot, (&pv, &qv)) in synthetic.iter_mut().zip(p_row.iter().zip(q_row)) {
            *slot = pv + r * (qv - pv);
        }
        out_x.push_row(&synthetic);
        out_y.push(minority_label);
        log.push(SmoteRecord { p, q, r });
    }

    Ok(SmoteOutput {
        x: out_x,
        y: out_y,
        log,
        fallback_plain,
    })
}

/// Writes a generation log as CSV (`p,q,r` per synthetic row), the replay
/// record for audits.
pub fn store_smote_log(path: &Path, log: &[SmoteRecord]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "p,q,r")?;
    let mut line = String::new();
    for rec in log {
        line.clear();
        write!(line, "{},{},{}", rec.p, rec.q, rec.r).expect("write to String");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
