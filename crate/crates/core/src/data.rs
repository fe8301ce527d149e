//! Ground-truth mixture, noisy training corpus and preference-pair
//! construction.
//!
//! The toy task: K Gaussian modes on a ring, one per conditioning class. The
//! training corpus is a jittered, partially relabeled draw from the mixture;
//! preference pairs combine a winner from class c with a loser drawn for the
//! neighboring class c⁻. The unpaired variant borrows another class's
//! positive sample as the loser instead of drawing one.

use crate::error::{Error, Result};
use crate::point::Point2;
use crate::rng::{derive_seed, salt, standard_normal_point, stream_rng};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub centers: Vec<Point2>,
    pub std: f64,
}

impl MixtureSpec {
    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub x0: Point2,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToyDataset {
    pub records: Vec<DataRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    Paired,
    Unpaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub x0_w: Point2,
    pub x0_l: Point2,
    pub class_id: usize,
    pub neg_class_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePairSet {
    pub pairs: Vec<PreferencePair>,
    pub mode: PairMode,
}

/// K isotropic modes at angle 2πk/K on a circle.
pub fn build_ring_mixture(num_classes: usize, radius: f64, std: f64) -> Result<MixtureSpec> {
    if num_classes < 2 {
        return Err(Error::InvalidConfig("need at least 2 classes".into()));
    }
    if radius <= 0.0 || !radius.is_finite() || std <= 0.0 || !std.is_finite() {
        return Err(Error::InvalidConfig("radius and std must be positive".into()));
    }
    let centers = (0..num_classes)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / num_classes as f64;
            Point2::new(radius * angle.cos(), radius * angle.sin())
        })
        .collect();
    Ok(MixtureSpec { centers, std })
}

/// Default toy geometry: 6 classes, radius 2, std 0.18.
pub fn toy_default_mixture() -> MixtureSpec {
    build_ring_mixture(6, 2.0, 0.18).expect("valid default mixture")
}

fn normal_point(rng: &mut ChaCha8Rng, std: f64) -> Point2 {
    standard_normal_point(rng).scale(std)
}

/// Draw one sample of the given class.
pub fn sample_class(spec: &MixtureSpec, class_id: usize, rng: &mut ChaCha8Rng) -> Point2 {
    spec.centers[class_id] + normal_point(rng, spec.std)
}

/// `n_per_class` isotropic draws around each center, grouped by class.
pub fn sample_clean(spec: &MixtureSpec, n_per_class: usize, rng_seed: u64) -> ToyDataset {
    let mut rng = stream_rng(derive_seed(rng_seed, salt::DATA_CLEAN), 0);
    let mut records = Vec::with_capacity(spec.num_classes() * n_per_class);
    for class_id in 0..spec.num_classes() {
        for _ in 0..n_per_class {
            records.push(DataRecord {
                x0: sample_class(spec, class_id, &mut rng),
                class_id,
            });
        }
    }
    ToyDataset { records }
}

/// Add N(0, extra_std²I) jitter to every point and, independently with
/// probability `contamination_rate`, relabel it to a uniformly random other
/// class (coordinates kept).
pub fn corrupt_dataset(
    ds: &ToyDataset,
    spec: &MixtureSpec,
    extra_std: f64,
    contamination_rate: f64,
    rng_seed: u64,
) -> Result<ToyDataset> {
    if !(0.0..=1.0).contains(&contamination_rate) || extra_std < 0.0 {
        return Err(Error::InvalidConfig(
            "contamination_rate must be in [0,1] and extra_std >= 0".into(),
        ));
    }
    let k = spec.num_classes();
    let mut rng = stream_rng(derive_seed(rng_seed, salt::DATA_CORRUPT), 0);
    let records = ds
        .records
        .iter()
        .map(|rec| {
            let jitter = if extra_std > 0.0 {
                normal_point(&mut rng, extra_std)
            } else {
                Point2::ZERO
            };
            let mut class_id = rec.class_id;
            if contamination_rate > 0.0 && rng.random::<f64>() < contamination_rate {
                let other = rng.random_range(0..k - 1);
                class_id = if other >= rec.class_id { other + 1 } else { other };
            }
            DataRecord {
                x0: rec.x0 + jitter,
                class_id,
            }
        })
        .collect();
    Ok(ToyDataset { records })
}

/// Build paired preference data: for each class k, `n_pairs_per_class`
/// tuples with c = k, c⁻ = (k + offset) mod K, winners drawn by `gen_w` for
/// k and losers by `gen_l` for c⁻.
pub fn build_preference_pairs(
    mut gen_w: impl FnMut(usize, &mut ChaCha8Rng) -> Point2,
    mut gen_l: impl FnMut(usize, &mut ChaCha8Rng) -> Point2,
    num_classes: usize,
    n_pairs_per_class: usize,
    neighbor_offset: usize,
    rng_seed: u64,
) -> Result<PreferencePairSet> {
    if num_classes < 2 {
        return Err(Error::InvalidConfig("need at least 2 classes".into()));
    }
    if neighbor_offset == 0 || neighbor_offset >= num_classes {
        return Err(Error::InvalidConfig(format!(
            "neighbor_offset must be in [1, {num_classes}), got {neighbor_offset}"
        )));
    }
    if n_pairs_per_class == 0 {
        return Err(Error::InvalidConfig("n_pairs_per_class must be >= 1".into()));
    }
    let mut rng = stream_rng(derive_seed(rng_seed, salt::PAIRS), 0);
    let mut pairs = Vec::with_capacity(num_classes * n_pairs_per_class);
    for class_id in 0..num_classes {
        let neg_class_id = (class_id + neighbor_offset) % num_classes;
        for _ in 0..n_pairs_per_class {
            let x0_w = gen_w(class_id, &mut rng);
            let x0_l = gen_l(neg_class_id, &mut rng);
            pairs.push(PreferencePair {
                x0_w,
                x0_l,
                class_id,
                neg_class_id,
            });
        }
    }
    Ok(PreferencePairSet {
        pairs,
        mode: PairMode::Paired,
    })
}

/// Efficient variant: no dispreferred samples are drawn. Each positive
/// record borrows a uniformly chosen positive of a *different* class as its
/// surrogate loser; the perturbed condition is still the neighboring class.
pub fn build_unpaired_negatives(
    positives: &[(Point2, usize)],
    neighbor_offset: usize,
    rng_seed: u64,
) -> Result<PreferencePairSet> {
    let num_classes = positives
        .iter()
        .map(|&(_, c)| c + 1)
        .max()
        .unwrap_or(0);
    let distinct = {
        let mut seen = vec![false; num_classes];
        for &(_, c) in positives {
            seen[c] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::InvalidInput(
            "unpaired negatives need positives from at least 2 distinct classes".into(),
        ));
    }
    if neighbor_offset == 0 || neighbor_offset >= num_classes {
        return Err(Error::InvalidConfig(format!(
            "neighbor_offset must be in [1, {num_classes}), got {neighbor_offset}"
        )));
    }
    let mut rng = stream_rng(derive_seed(rng_seed, salt::PAIRS), 1);
    let pairs = positives
        .iter()
        .map(|&(x0_w, class_id)| {
            let candidates: Vec<usize> = (0..positives.len())
                .filter(|&j| positives[j].1 != class_id)
                .collect();
            let pick = candidates[rng.random_range(0..candidates.len())];
            PreferencePair {
                x0_w,
                x0_l: positives[pick].0,
                class_id,
                neg_class_id: (class_id + neighbor_offset) % num_classes,
            }
        })
        .collect();
    Ok(PreferencePairSet {
        pairs,
        mode: PairMode::Unpaired,
    })
}

// ---------------------------------------------------------------------------
// CSV IO
// ---------------------------------------------------------------------------

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, line: u64) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        detail: format!("bad float {s:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            line,
            detail: format!("non-finite float {s:?}"),
        });
    }
    Ok(v)
}

fn parse_usize(s: &str, line: u64) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        detail: format!("bad integer {s:?}"),
    })
}

pub const PAIRS_CSV_HEADER: &str = "x0w_x,x0w_y,x0l_x,x0l_y,c,c_neg,mode";
pub const DATASET_CSV_HEADER: &str = "x,y,c";

pub fn save_pairs_csv(pairs: &PreferencePairSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(PAIRS_CSV_HEADER);
    out.push('\n');
    let mode = match pairs.mode {
        PairMode::Paired => "paired",
        PairMode::Unpaired => "unpaired",
    };
    for p in &pairs.pairs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(p.x0_w.x),
            fmt_f64(p.x0_w.y),
            fmt_f64(p.x0_l.x),
            fmt_f64(p.x0_l.y),
            p.class_id,
            p.neg_class_id,
            mode
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_pairs_csv(path: &Path, num_classes: usize) -> Result<PreferencePairSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pairs = Vec::new();
    let mut mode: Option<PairMode> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let lineno = idx as u64 + 1;
        if idx == 0 {
            if line.trim() != PAIRS_CSV_HEADER {
                return Err(Error::MalformedRow {
                    line: 1,
                    detail: format!("expected header {PAIRS_CSV_HEADER:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::MalformedRow {
                line: lineno,
                detail: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let class_id = parse_usize(fields[4], lineno)?;
        let neg_class_id = parse_usize(fields[5], lineno)?;
        if class_id >= num_classes || neg_class_id >= num_classes {
            return Err(Error::MalformedRow {
                line: lineno,
                detail: format!(
                    "class ids ({class_id}, {neg_class_id}) out of range for {num_classes} classes"
                ),
            });
        }
        let row_mode = match fields[6].trim() {
            "paired" => PairMode::Paired,
            "unpaired" => PairMode::Unpaired,
            other => {
                return Err(Error::MalformedRow {
                    line: lineno,
                    detail: format!("unknown mode {other:?}"),
                })
            }
        };
        if let Some(m) = mode {
            if m != row_mode {
                return Err(Error::MalformedRow {
                    line: lineno,
                    detail: "mixed pair modes in one file".into(),
                });
            }
        } else {
            mode = Some(row_mode);
        }
        if row_mode == PairMode::Paired && class_id == neg_class_id {
            return Err(Error::MalformedRow {
                line: lineno,
                detail: "paired mode requires c != c_neg".into(),
            });
        }
        pairs.push(PreferencePair {
            x0_w: Point2::new(parse_f64(fields[0], lineno)?, parse_f64(fields[1], lineno)?),
            x0_l: Point2::new(parse_f64(fields[2], lineno)?, parse_f64(fields[3], lineno)?),
            class_id,
            neg_class_id,
        });
    }
    Ok(PreferencePairSet {
        pairs,
        mode: mode.unwrap_or(PairMode::Paired),
    })
}

pub fn save_dataset_csv(ds: &ToyDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(DATASET_CSV_HEADER);
    out.push('\n');
    for rec in &ds.records {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(rec.x0.x),
            fmt_f64(rec.x0.y),
            rec.class_id
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_dataset_csv(path: &Path, num_classes: usize) -> Result<ToyDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let lineno = idx as u64 + 1;
        if idx == 0 {
            if line.trim() != DATASET_CSV_HEADER {
                return Err(Error::MalformedRow {
                    line: 1,
                    detail: format!("expected header {DATASET_CSV_HEADER:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedRow {
                line: lineno,
                detail: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let class_id = parse_usize(fields[2], lineno)?;
        if class_id >= num_classes {
            return Err(Error::MalformedRow {
                line: lineno,
                detail: format!("class id {class_id} out of range for {num_classes} classes"),
            });
        }
        records.push(DataRecord {
            x0: Point2::new(parse_f64(fields[0], lineno)?, parse_f64(fields[1], lineno)?),
            class_id,
        });
    }
    Ok(ToyDataset { records })
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}
