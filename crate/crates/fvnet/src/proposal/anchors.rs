//! Anchor prior clustering and the anchors text format.
//!
//! Ground-truth (width, height) pairs from the upscaled map are clustered
//! with seeded k-means (k-means++ initialization, squared Euclidean
//! distance). Centroids sort by area ascending and split evenly across the
//! output scales: the smallest third maps to the finest stride.

use super::{AnchorPrior, N_SCALES};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

#[derive(Debug, PartialEq)]
pub enum ClusterError {
    TooFewBoxes { have: usize, need: usize },
    ZeroClusters,
}

impl fmt::Display for ClusterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterError::TooFewBoxes { have, need } => {
                write!(f, "need at least {need} boxes to form {need} clusters, have {have}")
            }
            ClusterError::ZeroClusters => write!(f, "cluster count must be positive"),
        }
    }
}

impl std::error::Error for ClusterError {}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dw = a.0 - b.0;
    let dh = a.1 - b.1;
    dw * dw + dh * dh
}

/// Cluster (w, h) boxes into `k` anchor priors, deterministic per seed.
pub fn cluster_anchors(
    boxes: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> Result<Vec<AnchorPrior>, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if boxes.len() < k {
        return Err(ClusterError::TooFewBoxes {
            have: boxes.len(),
            need: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding: first center uniform, the rest weighted by squared
    // distance to the nearest chosen center. When every remaining point
    // coincides with a center, fall back to the first unchosen index so the
    // exact-fit case (k = n with duplicates) stays total.
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(k);
    let mut chosen = vec![false; boxes.len()];
    let first = rng.random_range(0..boxes.len());
    centers.push(boxes[first]);
    chosen[first] = true;
    while centers.len() < k {
        let weights: Vec<f64> = boxes
            .iter()
            .map(|&b| {
                centers
                    .iter()
                    .map(|&c| dist2(b, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = boxes.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        centers.push(boxes[pick]);
        chosen[pick] = true;
    }

    // Lloyd iterations; ties go to the lower center index, empty clusters
    // keep their previous centroid.
    let mut assignment = vec![usize::MAX; boxes.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, &b) in boxes.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (ci, &c) in centers.iter().enumerate() {
                let d = dist2(b, c);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (i, &b) in boxes.iter().enumerate() {
            let s = &mut sums[assignment[i]];
            s.0 += b.0;
            s.1 += b.1;
            s.2 += 1;
        }
        for (ci, &(sw, sh, n)) in sums.iter().enumerate() {
            if n > 0 {
                centers[ci] = (sw / n as f64, sh / n as f64);
            }
        }
    }

    // Area-ascending order, proportional split across scales.
    centers.sort_by(|a, b| {
        (a.0 * a.1)
            .partial_cmp(&(b.0 * b.1))
            .unwrap()
            .then(a.0.partial_cmp(&b.0).unwrap())
            .then(a.1.partial_cmp(&b.1).unwrap())
    });
    Ok(centers
        .into_iter()
        .enumerate()
        .map(|(i, (p_w, p_h))| AnchorPrior {
            p_w,
            p_h,
            scale_index: i * N_SCALES / k,
        })
        .collect())
}

#[derive(Debug)]
pub enum AnchorIoError {
    Io(io::Error),
    Parse { line: usize },
    BadScale { line: usize, scale: usize },
}

impl fmt::Display for AnchorIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnchorIoError::Io(e) => write!(f, "anchors io: {e}"),
            AnchorIoError::Parse { line } => write!(f, "anchors file: bad line {line}"),
            AnchorIoError::BadScale { line, scale } => {
                write!(f, "anchors file line {line}: scale index {scale} out of range")
            }
        }
    }
}

impl std::error::Error for AnchorIoError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            AnchorIoError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for AnchorIoError {
    fn from(e: io::Error) -> Self {
        AnchorIoError::Io(e)
    }
}

/// One `p_w p_h scale_index` line per prior. Floats print in shortest
/// round-trip form, so save/load is exact.
pub fn save_anchors(priors: &[AnchorPrior], path: &Path) -> Result<(), AnchorIoError> {
    let mut text = String::new();
    for p in priors {
        text.push_str(&format!("{} {} {}\n", p.p_w, p.p_h, p.scale_index));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_anchors(path: &Path) -> Result<Vec<AnchorPrior>, AnchorIoError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(AnchorIoError::Parse { line: ln + 1 });
        }
        let p_w: f64 = fields[0].parse().map_err(|_| AnchorIoError::Parse { line: ln + 1 })?;
        let p_h: f64 = fields[1].parse().map_err(|_| AnchorIoError::Parse { line: ln + 1 })?;
        let scale_index: usize =
            fields[2].parse().map_err(|_| AnchorIoError::Parse { line: ln + 1 })?;
        if scale_index >= N_SCALES {
            return Err(AnchorIoError::BadScale {
                line: ln + 1,
                scale: scale_index,
            });
        }
        out.push(AnchorPrior {
            p_w,
            p_h,
            scale_index,
        });
    }
    Ok(out)
}
