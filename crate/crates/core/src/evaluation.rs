//! Point-cloud distance metrics (accuracy, completeness, precision/recall
//! and f-score at thresholds) and depth-map validation metrics.

use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::PointCloud;
use crate::imaging::{is_valid_depth, DepthMap};

/// Distance from every query point to its nearest reference point.
pub fn nearest_distances(query: &[Point3<f64>], reference: &[Point3<f64>]) -> Result<Vec<f64>> {
    if reference.is_empty() {
        return Err(Error::EmptyCloud("reference"));
    }
    let mut tree = KdTree::with_capacity(3, reference.len());
    for (i, p) in reference.iter().enumerate() {
        tree.add([p.x, p.y, p.z], i)
            .map_err(|e| Error::InvalidConfig(format!("cannot index point {i}: {e:?}")))?;
    }
    query
        .par_iter()
        .map(|p| {
            let hit = tree
                .nearest(&[p.x, p.y, p.z], 1, &squared_euclidean)
                .map_err(|e| Error::InvalidConfig(format!("nearest-neighbour query failed: {e:?}")))?;
            Ok(hit.first().map_or(f64::INFINITY, |(d2, _)| d2.sqrt()))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Share of `distances` strictly below `t`, in percent.
fn percent_below(distances: &[f64], t: f64) -> f64 {
    100.0 * distances.iter().filter(|&&d| d < t).count() as f64 / distances.len() as f64
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    /// Percent of reconstructed points closer than the threshold to the reference.
    pub precision: f64,
    /// Percent of reference points closer than the threshold to the reconstruction.
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudMetrics {
    pub accuracy_mean: f64,
    pub accuracy_median: f64,
    pub completeness_mean: f64,
    pub completeness_median: f64,
    pub overall: f64,
    pub thresholds: Vec<ThresholdMetrics>,
}

impl CloudMetrics {
    pub fn report(&self) -> String {
        let mut out = format!(
            "accuracy_mean = {}\naccuracy_median = {}\ncompleteness_mean = {}\ncompleteness_median = {}\noverall = {}\n",
            self.accuracy_mean, self.accuracy_median, self.completeness_mean, self.completeness_median, self.overall
        );
        for t in &self.thresholds {
            out.push_str(&format!(
                "precision@{0} = {1}\nrecall@{0} = {2}\nf_score@{0} = {3}\n",
                t.threshold, t.precision, t.recall, t.f_score
            ));
        }
        out
    }
}

/// Accuracy (reconstruction to reference) and completeness (reference to
/// reconstruction) distances, with precision, recall and f-score per threshold.
pub fn cloud_distance_metrics(reconstruction: &PointCloud, reference: &PointCloud, thresholds: &[f64]) -> Result<CloudMetrics> {
    if reconstruction.is_empty() {
        return Err(Error::EmptyCloud("reconstruction"));
    }
    if reference.is_empty() {
        return Err(Error::EmptyCloud("reference"));
    }
    let acc = nearest_distances(&reconstruction.points, &reference.points)?;
    let comp = nearest_distances(&reference.points, &reconstruction.points)?;
    let (accuracy_mean, completeness_mean) = (mean(&acc), mean(&comp));
    Ok(CloudMetrics {
        accuracy_mean,
        accuracy_median: median(&acc),
        completeness_mean,
        completeness_median: median(&comp),
        overall: 0.5 * (accuracy_mean + completeness_mean),
        thresholds: thresholds
            .iter()
            .map(|&t| {
                let (precision, recall) = (percent_below(&acc, t), percent_below(&comp, t));
                ThresholdMetrics {
                    threshold: t,
                    precision,
                    recall,
                    f_score: f_score(precision, recall),
                }
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMetrics {
    /// Mean absolute error over pixels valid in both maps; `None` if there are none.
    pub l1: Option<f64>,
    /// Percentages over every pixel with valid truth; missing predictions count as misses.
    pub within_1: f64,
    pub within_3: f64,
    pub within_3_percent: f64,
    pub evaluated: usize,
    pub missing: usize,
}

impl DepthMetrics {
    pub fn report(&self) -> String {
        format!(
            "l1 = {}\nwithin_1 = {}\nwithin_3 = {}\nwithin_3_percent = {}\nevaluated = {}\nmissing = {}\n",
            self.l1.map_or("nan".to_string(), |v| v.to_string()),
            self.within_1,
            self.within_3,
            self.within_3_percent,
            self.evaluated,
            self.missing
        )
    }
}

/// Depth accuracy of `predicted` against `truth` over the valid truth pixels.
pub fn depth_validation_metrics(predicted: &DepthMap, truth: &DepthMap) -> Result<DepthMetrics> {
    if predicted.width() != truth.width() || predicted.height() != truth.height() {
        return Err(Error::ShapeMismatch("predicted and true depth differ in size".into()));
    }
    let (mut n, mut missing, mut both) = (0usize, 0usize, 0usize);
    let (mut l1, mut w1, mut w3, mut w3p) = (0.0, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.data().iter().zip(truth.data()) {
        if !is_valid_depth(t) {
            continue;
        }
        n += 1;
        if !is_valid_depth(p) {
            missing += 1;
            continue;
        }
        both += 1;
        let e = (p - t).abs();
        l1 += e;
        w1 += usize::from(e < 1.0);
        w3 += usize::from(e < 3.0);
        w3p += usize::from(e / t < 0.03);
    }
    if n == 0 {
        return Err(Error::NoValidPixels("ground-truth depth has no valid pixel".into()));
    }
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok(DepthMetrics {
        l1: (both > 0).then(|| l1 / both as f64),
        within_1: pct(w1),
        within_3: pct(w3),
        within_3_percent: pct(w3p),
        evaluated: n,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_count_averages() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn f_score_zero_when_both_zero() {
        assert_eq!(f_score(0.0, 0.0), 0.0);
        assert_eq!(f_score(100.0, 0.0), 0.0);
        assert_eq!(f_score(50.0, 50.0), 50.0);
    }

    #[test]
    fn duplicate_points_are_indexed() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0); 500];
        let d = nearest_distances(&[Point3::new(1.0, 2.0, 4.0)], &pts).unwrap();
        assert_eq!(d, vec![1.0]);
    }

    #[test]
    fn empty_sides_are_named() {
        let one = PointCloud::from_points(vec![Point3::origin()]);
        let err = cloud_distance_metrics(&PointCloud::default(), &one, &[1.0]).unwrap_err();
        assert!(err.to_string().contains("reconstruction"));
        let err = cloud_distance_metrics(&one, &PointCloud::default(), &[1.0]).unwrap_err();
        assert!(err.to_string().contains("reference"));
    }

    #[test]
    fn offset_depths() {
        let t = DepthMap::filled(4, 4, 10.0);
        let p = DepthMap::filled(4, 4, 12.0);
        let m = depth_validation_metrics(&p, &t).unwrap();
        assert_eq!((m.within_1, m.within_3, m.l1), (0.0, 100.0, Some(2.0)));
        assert!(depth_validation_metrics(&p, &DepthMap::filled(4, 4, 0.0)).is_err());
    }
}
