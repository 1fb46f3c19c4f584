//! Pair sampling, angular-error scoring and report emission.
//!
//! Errors are geodesic distances in degrees. A prediction counts as accurate
//! at threshold `t` when its error is strictly below `t`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotations::{geodesic_distance, inplane_omitted_distance, EulerAngles, Rotation};

/// Thresholds reported as `Acc@t`, in degrees.
pub const ACC_THRESHOLDS: [f64; 4] = [5.0, 10.0, 15.0, 30.0];

/// Default histogram edges in degrees.
pub const DEFAULT_BINS: [f64; 8] = [0.0, 5.0, 10.0, 15.0, 30.0, 60.0, 90.0, 180.0];

/// Pairs whose in-plane-omitted distance reaches this are dropped.
pub const DEFAULT_MAX_OVERLAP_DEG: f64 = 90.0;

/// One reference/query pair and, once estimated, its prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub reference: String,
    pub query: String,
    ground_truth: Option<Rotation>,
    prediction: Option<Rotation>,
    error_deg: Option<f64>,
}

impl PairRecord {
    pub fn new(reference: impl Into<String>, query: impl Into<String>, ground_truth: Option<Rotation>) -> Self {
        Self {
            reference: reference.into(),
            query: query.into(),
            ground_truth,
            prediction: None,
            error_deg: None,
        }
    }

    pub fn ground_truth(&self) -> Option<&Rotation> {
        self.ground_truth.as_ref()
    }

    pub fn prediction(&self) -> Option<&Rotation> {
        self.prediction.as_ref()
    }

    /// Present exactly when both rotations are.
    pub fn error_deg(&self) -> Option<f64> {
        self.error_deg
    }

    pub fn set_prediction(&mut self, prediction: Rotation) {
        self.error_deg = self
            .ground_truth
            .as_ref()
            .map(|gt| geodesic_distance(gt, &prediction).to_degrees());
        self.prediction = Some(prediction);
    }

    pub fn with_prediction(mut self, prediction: Rotation) -> Self {
        self.set_prediction(prediction);
        self
    }

    /// `reference->query`, used to name records in messages.
    pub fn id(&self) -> String {
        format!("{}->{}", self.reference, self.query)
    }
}

/// How a pair set was drawn from its qualifying pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    WithoutReplacement,
    WithReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<PairRecord>,
    pub mode: SamplingMode,
    /// Ordered pairs that passed the overlap filter.
    pub pool: usize,
}

/// Samples `count` ordered pairs of distinct frames whose in-plane-omitted
/// distance is below `max_overlap_deg`.
///
/// Every qualifying ordered pair is enumerated first. When there are at
/// least `count` of them they are drawn without replacement, otherwise with
/// replacement. The generator is ChaCha8 seeded with `seed`, so the result
/// is the same on every platform. Each record's ground truth is the
/// relative rotation `R_query * R_reference^T`.
pub fn generate_pairs(poses: &[(String, Rotation)], count: usize, seed: u64, max_overlap_deg: f64) -> Result<PairSet> {
    generate_pairs_where(poses, count, seed, max_overlap_deg, |_, _| true)
}

/// [`generate_pairs`] restricted to ordered pairs `(i, j)` accepted by
/// `eligible`, e.g. to skip reference frames without depth.
pub fn generate_pairs_where(
    poses: &[(String, Rotation)],
    count: usize,
    seed: u64,
    max_overlap_deg: f64,
    eligible: impl Fn(usize, usize) -> bool,
) -> Result<PairSet> {
    if poses.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 poses, got {}", poses.len())));
    }
    if !(max_overlap_deg > 0.0) {
        return Err(Error::invalid("overlap threshold must be positive"));
    }
    let stripped: Vec<Rotation> = poses
        .iter()
        .map(|(_, r)| {
            let e = EulerAngles::from_rotation(r);
            EulerAngles::new(e.alpha, e.beta, 0.0).to_rotation()
        })
        .collect();
    let limit = max_overlap_deg.to_radians();
    let mut pool = Vec::new();
    for i in 0..poses.len() {
        for j in 0..poses.len() {
            if i != j && eligible(i, j) && geodesic_distance(&stripped[i], &stripped[j]) < limit {
                pool.push((i, j));
            }
        }
    }
    let attempts = poses.len() * (poses.len() - 1);
    if pool.is_empty() && count > 0 {
        return Err(Error::SamplingExhausted {
            requested: count,
            found: 0,
            attempts,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (picked, mode): (Vec<usize>, _) = if pool.len() >= count {
        (index::sample(&mut rng, pool.len(), count).into_vec(), SamplingMode::WithoutReplacement)
    } else {
        (
            (0..count).map(|_| rng.gen_range(0..pool.len())).collect(),
            SamplingMode::WithReplacement,
        )
    };
    let pairs = picked
        .into_iter()
        .map(|k| {
            let (i, j) = pool[k];
            let gt = poses[j].1.compose(&poses[i].1.inverse());
            PairRecord::new(poses[i].0.clone(), poses[j].0.clone(), Some(gt))
        })
        .collect();
    Ok(PairSet {
        pairs,
        mode,
        pool: pool.len(),
    })
}

/// Whether a pair passes the overlap filter.
pub fn pair_qualifies(reference: &Rotation, query: &Rotation, max_overlap_deg: f64) -> bool {
    inplane_omitted_distance(reference, query).to_degrees() < max_overlap_deg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub threshold_deg: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges; bin `i` is `[edges[i], edges[i + 1])` and the last bin
    /// also holds its upper edge.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(edges: &[f64], values: impl IntoIterator<Item = f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("histogram edges must be strictly increasing, at least two"));
        }
        let mut counts = vec![0; edges.len() - 1];
        let last = edges.len() - 2;
        for v in values {
            if v < edges[0] || v > edges[last + 1] {
                continue;
            }
            // first edge strictly above v, minus one
            let bin = edges.partition_point(|e| *e <= v).saturating_sub(1).min(last);
            counts[bin] += 1;
        }
        Ok(Self {
            edges: edges.to_vec(),
            counts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub records: Vec<PairRecord>,
    pub mean_error_deg: f64,
    pub accuracy: Vec<Accuracy>,
    pub histogram: Histogram,
}

impl EvaluationReport {
    /// `100 * |{error < t}| / N`.
    pub fn accuracy_at(&self, threshold_deg: f64) -> f64 {
        let hits = self
            .records
            .iter()
            .filter(|r| r.error_deg.is_some_and(|e| e < threshold_deg))
            .count();
        100.0 * hits as f64 / self.records.len() as f64
    }

    pub fn median_error_deg(&self) -> f64 {
        let mut e: Vec<f64> = self.records.iter().filter_map(|r| r.error_deg).collect();
        e.sort_by(f64::total_cmp);
        let n = e.len();
        if n % 2 == 1 {
            e[n / 2]
        } else {
            0.5 * (e[n / 2 - 1] + e[n / 2])
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    /// One row per pair: ids, ground-truth and predicted quaternions
    /// (w, x, y, z), error in degrees.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::invalid(e.to_string());
        w.write_record([
            "reference", "query", "gt_qw", "gt_qx", "gt_qy", "gt_qz", "pred_qw", "pred_qx", "pred_qy", "pred_qz",
            "error_deg",
        ])
        .map_err(io)?;
        for r in &self.records {
            let mut row = vec![r.reference.clone(), r.query.clone()];
            for rot in [&r.ground_truth, &r.prediction] {
                match rot {
                    Some(q) => row.extend(q.quaternion().iter().map(|v| v.to_string())),
                    None => row.extend(std::iter::repeat(String::new()).take(4)),
                }
            }
            row.push(r.error_deg.map(|e| e.to_string()).unwrap_or_default());
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    /// Mean error and the four accuracy columns as a small text table.
    pub fn summary_table(&self) -> String {
        let mut head = format!("{:>8} {:>10}", "pairs", "mean(deg)");
        let mut row = format!("{:>8} {:>10.2}", self.records.len(), self.mean_error_deg);
        for a in &self.accuracy {
            head.push_str(&format!(" {:>8}", format!("Acc@{}", a.threshold_deg)));
            row.push_str(&format!(" {:>8.2}", a.percent));
        }
        format!("{head}\n{row}\n")
    }
}

/// Scores records with the default histogram bins.
pub fn score(records: &[PairRecord]) -> Result<EvaluationReport> {
    score_with_bins(records, &DEFAULT_BINS)
}

pub fn score_with_bins(records: &[PairRecord], bins: &[f64]) -> Result<EvaluationReport> {
    let missing: Vec<String> = records.iter().filter(|r| r.error_deg.is_none()).map(PairRecord::id).collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteRecords(missing));
    }
    if records.is_empty() {
        return Err(Error::invalid("no records to score"));
    }
    let errors: Vec<f64> = records.iter().filter_map(|r| r.error_deg).collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut report = EvaluationReport {
        records: records.to_vec(),
        mean_error_deg: mean,
        accuracy: Vec::new(),
        histogram: Histogram::new(bins, errors.iter().copied())?,
    };
    report.accuracy = ACC_THRESHOLDS
        .iter()
        .map(|&t| Accuracy {
            threshold_deg: t,
            percent: report.accuracy_at(t),
        })
        .collect();
    Ok(report)
}
