//! Image and geometry metrics, and the report files written by evaluation.
//!
//! Chamfer-L1 is the symmetric mean with a one-half factor:
//! `0.5 * (mean_a min_b |a - b| + mean_b min_a |a - b|)`, Euclidean distances.

use std::num::NonZero;
use std::path::Path;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::image::Image;
use crate::par;
use crate::ssim::ssim_plane;

pub const PSNR_CAP: f64 = 100.0;

/// Fraction of the reference bounding-box diagonal used as the default F-score threshold.
pub const F_SCORE_TAU_FRACTION: f64 = 0.01;

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::usage("psnr inputs differ in shape"));
    }
    if a.data.is_empty() {
        return Err(Error::usage("psnr of empty images"));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// SSIM of the luma planes (11x11 Gaussian window, sigma 1.5, dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::usage("ssim inputs differ in shape"));
    }
    let (a, b) = match a.channels {
        1 => (a.clone(), b.clone()),
        3 => (a.luma(), b.luma()),
        c => return Err(Error::usage(format!("ssim needs 1 or 3 channels, got {c}"))),
    };
    Ok(ssim_plane(&a, &b, false)?.0)
}

/// Nearest-neighbor index over a fixed point set.
pub struct PointIndex {
    points: Vec<Vector3<f64>>,
    tree: ImmutableKdTree<f64, 3>,
}

impl PointIndex {
    pub fn new(points: &[Vector3<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::usage("cannot index an empty point set"));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::usage("point set contains non-finite coordinates"));
        }
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Ok(Self { points: points.to_vec(), tree: ImmutableKdTree::new_from_slice(&raw) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and Euclidean distance of the closest stored point.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let nn = self.tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
        let i = nn.item as usize;
        (i, (self.points[i] - q).norm())
    }

    /// Distances from every query to its nearest stored point, in query order.
    pub fn distances(&self, queries: &[Vector3<f64>]) -> Vec<f64> {
        par::map_chunks(queries.len(), 1024, |r| r.map(|i| self.nearest(&queries[i]).1).collect::<Vec<_>>()).concat()
    }

    /// Squared distances to the `k` nearest stored points other than index `skip`.
    pub fn k_nearest_sq(&self, q: &Vector3<f64>, k: usize, skip: Option<usize>) -> Vec<f64> {
        let want = NonZero::new(k + skip.is_some() as usize).unwrap_or(NonZero::<usize>::MIN);
        self.tree
            .nearest_n::<SquaredEuclidean>(&[q.x, q.y, q.z], want)
            .into_iter()
            .filter(|n| Some(n.item as usize) != skip)
            .take(k)
            .map(|n| (self.points[n.item as usize] - q).norm_squared())
            .collect()
    }
}

fn check_sets(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage("point sets must be non-empty"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn chamfer_l1(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    check_sets(a, b)?;
    let ab = PointIndex::new(b)?.distances(a);
    let ba = PointIndex::new(a)?.distances(b);
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub tau: f64,
}

/// Precision of `pred` against `gt` and recall of `gt` against `pred` at threshold `tau`.
pub fn f_score(pred: &[Vector3<f64>], gt: &[Vector3<f64>], tau: f64) -> Result<FScore> {
    check_sets(pred, gt)?;
    if !(tau > 0.0) {
        return Err(Error::usage(format!("f-score threshold {tau} must be positive")));
    }
    let within = |d: Vec<f64>| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let precision = within(PointIndex::new(gt)?.distances(pred));
    let recall = within(PointIndex::new(pred)?.distances(gt));
    let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(FScore { precision, recall, f, tau })
}

/// [`F_SCORE_TAU_FRACTION`] of the bounding-box diagonal of `points`.
pub fn default_tau(points: &[Vector3<f64>]) -> Result<f64> {
    let first = points.first().ok_or_else(|| Error::usage("empty point set"))?;
    let (mut lo, mut hi) = (*first, *first);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Ok(F_SCORE_TAU_FRACTION * (hi - lo).norm())
}

/// Mean squared distance of each point to its `k` nearest other points.
pub fn knn_mean_sq_distance(points: &[Vector3<f64>], k: usize) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Ok(vec![0.0; points.len()]);
    }
    let index = PointIndex::new(points)?;
    let k = k.min(points.len() - 1).max(1);
    Ok(par::map_chunks(points.len(), 512, |r| {
        r.map(|i| mean(&index.k_nearest_sq(&points[i], k, Some(i)))).collect::<Vec<_>>()
    })
    .concat())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub chamfer_l1: Option<f64>,
    pub f_score: Option<FScore>,
    pub gaussians: Option<usize>,
}

impl EvalReport {
    /// Fill the image averages from `views`.
    pub fn summarize_views(&mut self) {
        if self.views.is_empty() {
            return;
        }
        let n = self.views.len() as f64;
        self.psnr = Some(self.views.iter().map(|v| v.psnr).sum::<f64>() / n);
        self.ssim = Some(self.views.iter().map(|v| v.ssim).sum::<f64>() / n);
    }

    /// `metric,value` rows; per-view rows are named `psnr_view_<i>` and `ssim_view_<i>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let mut row = |k: &str, v: f64| s.push_str(&format!("{k},{v}\n"));
        if let Some(v) = self.psnr {
            row("psnr", v);
        }
        if let Some(v) = self.ssim {
            row("ssim", v);
        }
        if let Some(v) = self.chamfer_l1 {
            row("chamfer_l1", v);
        }
        if let Some(f) = self.f_score {
            row("f_score", f.f);
            row("precision", f.precision);
            row("recall", f.recall);
            row("f_score_tau", f.tau);
        }
        if let Some(g) = self.gaussians {
            row("gaussians", g as f64);
        }
        for v in &self.views {
            row(&format!("psnr_view_{}", v.view), v.psnr);
            row(&format!("ssim_view_{}", v.view), v.ssim);
        }
        s
    }

    /// Write `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::usage(format!("report encoding: {e}")))?;
        write_atomic(&dir.join(format!("{stem}.json")), json.as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())
    }
}
