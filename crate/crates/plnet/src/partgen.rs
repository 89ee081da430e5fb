//! Unsupervised part generation from feature maps.
//!
//! Each channel of a feature map votes with the location of its maximum
//! activation. The vertical coordinates of those votes are clustered with 1-D
//! k-means; averaging the channels of a cluster and max-min normalizing the
//! result gives a per-cluster saliency map, which is thresholded and boxed by
//! its foreground's minimum enclosing rectangle. One box per cluster, ordered
//! top-to-bottom by cluster center.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Spatial side of the pooled part tensor.
pub const ROI_OUT: usize = 4;

/// Default foreground threshold applied to normalized saliency.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Location of the maximum activation of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArgmaxLocation {
    pub channel: usize,
    pub row: usize,
    pub col: usize,
}

/// Axis-aligned rectangle in feature-map grid coordinates, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartBox {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PartBox {
    pub fn full(h: usize, w: usize) -> Self {
        PartBox {
            top: 0,
            bottom: h - 1,
            left: 0,
            right: w - 1,
        }
    }
}

/// Result of clustering channels by the vertical coordinate of their argmax.
/// Cluster ids are relabeled so centers ascend (topmost cluster is 0).
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centers: Vec<f64>,
}

/// Per-channel argmax location; ties go to the first cell in row-major order.
pub fn argmax_locations(x: &Tensor) -> Vec<ArgmaxLocation> {
    let shape = x.shape();
    assert_eq!(shape.len(), 3, "argmax_locations expects [Z, H, W]");
    let (z, h, w) = (shape[0], shape[1], shape[2]);
    let xd = x.data();
    let mut out = Vec::with_capacity(z);
    for ch in 0..z {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        let mut best = f64::NEG_INFINITY;
        let mut best_off = 0;
        for (off, &v) in plane.iter().enumerate() {
            if v > best {
                best = v;
                best_off = off;
            }
        }
        out.push(ArgmaxLocation {
            channel: ch,
            row: best_off / w,
            col: best_off % w,
        });
    }
    out
}

/// Exact 1-D k-means over the vertical coordinates of the argmax locations.
///
/// In one dimension the optimal clusters are contiguous runs of the sorted
/// heights, so the global optimum is found by dynamic programming over
/// interval boundaries. Deterministic: equal-cost splits prefer the earliest
/// boundary, and equal heights keep their channel order. Clusters come back
/// relabeled by ascending center, topmost first.
pub fn cluster_vertical(locations: &[ArgmaxLocation], k: usize) -> Result<ClusterAssignment> {
    let n = locations.len();
    if k == 0 {
        return Err(Error::Config("cluster count K must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Degenerate(format!(
            "cannot form {} clusters from {} channels; use a smaller K",
            k, n
        )));
    }
    // sort channels by height, stable so equal heights keep channel order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        locations[a]
            .row
            .cmp(&locations[b].row)
            .then(a.cmp(&b))
    });
    let sorted: Vec<f64> = order.iter().map(|&i| locations[i].row as f64).collect();

    // prefix sums for O(1) interval SSE
    let mut pre = vec![0.0f64];
    let mut pre2 = vec![0.0f64];
    for &h in &sorted {
        pre.push(pre.last().unwrap() + h);
        pre2.push(pre2.last().unwrap() + h * h);
    }
    // SSE of sorted[i..j]
    let sse = |i: usize, j: usize| -> f64 {
        let m = (j - i) as f64;
        let s = pre[j] - pre[i];
        let s2 = pre2[j] - pre2[i];
        (s2 - s * s / m).max(0.0)
    };

    // dp[c][j]: best cost splitting sorted[0..j] into c+1 intervals
    let mut dp = vec![vec![f64::INFINITY; n + 1]; k];
    let mut split = vec![vec![0usize; n + 1]; k];
    for j in 1..=n {
        dp[0][j] = sse(0, j);
    }
    for c in 1..k {
        for j in (c + 1)..=n {
            for i in c..j {
                let cost = dp[c - 1][i] + sse(i, j);
                if cost < dp[c][j] {
                    dp[c][j] = cost;
                    split[c][j] = i;
                }
            }
        }
    }

    // recover interval boundaries
    let mut bounds = vec![n];
    let mut j = n;
    for c in (1..k).rev() {
        j = split[c][j];
        bounds.push(j);
    }
    bounds.push(0);
    bounds.reverse();

    let mut labels = vec![0usize; n];
    let mut centers = vec![0.0f64; k];
    for c in 0..k {
        let (i, j) = (bounds[c], bounds[c + 1]);
        centers[c] = (pre[j] - pre[i]) / (j - i) as f64;
        for &chan in &order[i..j] {
            labels[chan] = c;
        }
    }
    Ok(ClusterAssignment { labels, centers })
}

/// Mean of the cluster's channels followed by max-min normalization.
/// A constant mean normalizes to all zeros.
pub fn cluster_saliency(x: &Tensor, assignment: &ClusterAssignment, cluster: usize) -> Tensor {
    let shape = x.shape();
    let (z, h, w) = (shape[0], shape[1], shape[2]);
    let members: Vec<usize> = (0..z)
        .filter(|&ch| assignment.labels[ch] == cluster)
        .collect();
    assert!(!members.is_empty(), "cluster {} is empty", cluster);
    let xd = x.data();
    let mut mean = vec![0.0f64; h * w];
    for &ch in &members {
        for (off, v) in mean.iter_mut().enumerate() {
            *v += xd[ch * h * w + off];
        }
    }
    let inv = 1.0 / members.len() as f64;
    for v in &mut mean {
        *v *= inv;
    }
    let lo = mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        let span = hi - lo;
        for v in &mut mean {
            *v = (*v - lo) / span;
        }
    } else {
        mean.fill(0.0);
    }
    Tensor::from_vec(&[h, w], mean).expect("length h*w")
}

/// Minimum enclosing rectangle of the cells strictly above `threshold`.
/// An empty foreground falls back to the full map.
pub fn binarize_and_box(saliency: &Tensor, threshold: f64) -> PartBox {
    let shape = saliency.shape();
    let (h, w) = (shape[0], shape[1]);
    let sd = saliency.data();
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for r in 0..h {
        for c in 0..w {
            if sd[r * w + c] > threshold {
                bounds = Some(match bounds {
                    None => (r, r, c, c),
                    Some((t, b, l, rg)) => (t.min(r), b.max(r), l.min(c), rg.max(c)),
                });
            }
        }
    }
    match bounds {
        Some((top, bottom, left, right)) => PartBox {
            top,
            bottom,
            left,
            right,
        },
        None => PartBox::full(h, w),
    }
}

/// Full pipeline: argmax votes, vertical clustering, per-cluster saliency,
/// threshold and box. Boxes come back ordered top-to-bottom.
pub fn generate_parts(x: &Tensor, k: usize, threshold: f64) -> Result<Vec<PartBox>> {
    let locations = argmax_locations(x);
    let assignment = cluster_vertical(&locations, k)?;
    let boxes = (0..k)
        .map(|c| binarize_and_box(&cluster_saliency(x, &assignment, c), threshold))
        .collect();
    Ok(boxes)
}

/// Comparison mode: K equal horizontal stripes spanning the full width.
pub fn grid_parts(h: usize, w: usize, k: usize) -> Result<Vec<PartBox>> {
    if k == 0 || k > h {
        return Err(Error::Config(format!(
            "grid parts need 1 <= K <= H, got K={} H={}",
            k, h
        )));
    }
    Ok(crate::graph::bin_ranges(h, k)
        .into_iter()
        .map(|(top, end)| PartBox {
            top,
            bottom: end - 1,
            left: 0,
            right: w - 1,
        })
        .collect())
}

/// Differentiable RoI max pooling of `x` restricted to `part` into a
/// `ROI_OUT` x `ROI_OUT` grid per channel.
pub fn roi_pool(graph: &mut Graph, x: NodeId, part: &PartBox) -> Result<NodeId> {
    graph.roi_pool_max(x, part, ROI_OUT, ROI_OUT)
}

/// Non-differentiable RoI pooling on a plain tensor, for descriptor
/// extraction. Same bin rule as the graph op.
pub fn roi_pool_value(x: &Tensor, part: &PartBox, out_h: usize, out_w: usize) -> Tensor {
    let shape = x.shape();
    let (z, h, w) = (shape[0], shape[1], shape[2]);
    assert!(part.bottom < h && part.right < w, "box exceeds feature map");
    let row_bins = crate::graph::bin_ranges(part.bottom - part.top + 1, out_h);
    let col_bins = crate::graph::bin_ranges(part.right - part.left + 1, out_w);
    let xd = x.data();
    let mut out = Tensor::zeros(&[z, out_h, out_w]);
    let od = out.data_mut();
    for ch in 0..z {
        for (by, &(r0, r1)) in row_bins.iter().enumerate() {
            for (bx, &(c0, c1)) in col_bins.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for r in r0..r1 {
                    for cc in c0..c1 {
                        best = best.max(xd[(ch * h + part.top + r) * w + part.left + cc]);
                    }
                }
                od[(ch * out_h + by) * out_w + bx] = best;
            }
        }
    }
    out
}
