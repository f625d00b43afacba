//! Network observables on the support of an exposure matrix.
//!
//! An edge `i -> j` exists when `alpha_ij > 0`: bank `i` holds a claim on
//! bank `j`. Edges are unweighted for all mixing statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BankSet, ExposureMatrix};

pub const DEFAULT_BINS: usize = 10;

/// Scalar node property used for mixing statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeProperty {
    /// `A_i / E_i`
    Leverage,
    /// `L_i / E_i`
    LiabilityLeverage,
    Equity,
    Assets,
    Liabilities,
}

impl NodeProperty {
    pub fn values(self, bs: &BankSet) -> Vec<f64> {
        match self {
            NodeProperty::Leverage => bs.leverage(),
            NodeProperty::LiabilityLeverage => bs.liability_leverage(),
            NodeProperty::Equity => bs.equity().to_vec(),
            NodeProperty::Assets => bs.assets().to_vec(),
            NodeProperty::Liabilities => bs.liabilities().to_vec(),
        }
    }
}

impl std::str::FromStr for NodeProperty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leverage" => Ok(Self::Leverage),
            "liability_leverage" => Ok(Self::LiabilityLeverage),
            "equity" => Ok(Self::Equity),
            "assets" => Ok(Self::Assets),
            "liabilities" => Ok(Self::Liabilities),
            other => Err(Error::InvalidConfig(format!("unknown node property '{other}'"))),
        }
    }
}

/// Directed support edges `(i, j)` with `alpha_ij > 0`, row-major order.
pub fn support_edges(m: &ExposureMatrix) -> Vec<(usize, usize)> {
    let n = m.n();
    let alpha = m.alpha();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if alpha[(i, j)] > 0.0 {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn edge_count(m: &ExposureMatrix) -> usize {
    m.alpha().iter().filter(|&&x| x > 0.0).count()
}

/// `k = sum_ij Theta(alpha_ij) / N`
pub fn mean_degree(m: &ExposureMatrix) -> f64 {
    edge_count(m) as f64 / m.n() as f64
}

/// `sum_ij alpha_ij alpha_ji / sum_ij alpha_ij^2`: 0 without reciprocal
/// edges, 1 for a symmetric matrix, 0 for the empty matrix.
pub fn symmetry_ratio(m: &ExposureMatrix) -> f64 {
    let alpha = m.alpha();
    let squares: f64 = alpha.iter().map(|x| x * x).sum();
    if squares == 0.0 {
        return 0.0;
    }
    let cross = alpha.component_mul(&alpha.transpose()).sum();
    cross / squares
}

/// Pairs `i < j` with edges in both directions.
pub fn reciprocal_pairs(m: &ExposureMatrix) -> usize {
    let alpha = m.alpha();
    let n = m.n();
    let mut count = 0;
    for i in 0..n {
        for j in i + 1..n {
            if alpha[(i, j)] > 0.0 && alpha[(j, i)] > 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// Pearson correlation; `None` if either sample has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssortativityResult {
    pub r: f64,
    /// Leave-one-edge-out jackknife variance of `r`.
    pub variance: f64,
    pub n_bins: usize,
    pub n_edges: usize,
    pub source_property: NodeProperty,
    pub target_property: NodeProperty,
}

/// Equal-width binning of `values` over their range; returns bin midpoints
/// per node, or `None` if all values coincide.
fn bin_midpoints(values: &[f64], n_bins: usize) -> Option<Vec<f64>> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / n_bins as f64;
    Some(
        values
            .iter()
            .map(|&v| {
                let k = (((v - lo) / width).floor() as usize).min(n_bins - 1);
                lo + (k as f64 + 0.5) * width
            })
            .collect(),
    )
}

/// Scalar assortativity
/// `r = sum_xy x y (e_xy - a_x b_y) / (sigma_a sigma_b)` with node types
/// given by `n_bins` equal-width intervals of each property (labelled by
/// their midpoints) and `e_xy` the fraction of edges from type `x` to `y`.
///
/// This is the Pearson correlation of the binned source and target labels
/// over edges, which is how it is evaluated here.
pub fn scalar_assortativity(
    m: &ExposureMatrix,
    source: NodeProperty,
    target: NodeProperty,
    n_bins: usize,
) -> Result<AssortativityResult> {
    if n_bins < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 bins, got {n_bins}"
        )));
    }
    let edges = support_edges(m);
    if edges.len() < 2 {
        return Err(Error::DegenerateProperty(format!(
            "need at least 2 edges, network has {}",
            edges.len()
        )));
    }
    let bs = m.banks();
    let degenerate = |p: NodeProperty| {
        Error::DegenerateProperty(format!("{p:?} takes a single value on all nodes"))
    };
    let src = bin_midpoints(&source.values(bs), n_bins).ok_or_else(|| degenerate(source))?;
    let dst = bin_midpoints(&target.values(bs), n_bins).ok_or_else(|| degenerate(target))?;
    let xs: Vec<f64> = edges.iter().map(|&(i, _)| src[i]).collect();
    let ys: Vec<f64> = edges.iter().map(|&(_, j)| dst[j]).collect();
    let (r, variance) = correlation_with_jackknife(&xs, &ys).ok_or_else(|| {
        Error::DegenerateProperty("all edge endpoints fall into a single bin".into())
    })?;
    Ok(AssortativityResult {
        r,
        variance,
        n_bins,
        n_edges: edges.len(),
        source_property: source,
        target_property: target,
    })
}

/// `r` alone, `NaN` when undefined; used for per-sweep tracing.
pub fn leverage_assortativity(m: &ExposureMatrix, n_bins: usize) -> f64 {
    scalar_assortativity(m, NodeProperty::Leverage, NodeProperty::Leverage, n_bins)
        .map(|a| a.r)
        .unwrap_or(f64::NAN)
}

fn correlation_with_jackknife(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let r = pearson(xs, ys)?;
    let n = xs.len();
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    // centered sums; leave-one-out moments follow in O(1) each
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sx += dx;
        sy += dy;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let m = nf - 1.0;
    let mut loo = Vec::with_capacity(n);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        let (px, py) = (sx - dx, sy - dy);
        let cxx = (sxx - dx * dx) - px * px / m;
        let cyy = (syy - dy * dy) - py * py / m;
        let cxy = (sxy - dx * dy) - px * py / m;
        if cxx <= 0.0 || cyy <= 0.0 {
            loo.push(f64::NAN);
        } else {
            loo.push(cxy / (cxx.sqrt() * cyy.sqrt()));
        }
    }
    let mean = loo.iter().sum::<f64>() / nf;
    let variance = (nf - 1.0) / nf * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Some((r, variance))
}

/// Binning-free variant: correlation of raw source and target properties
/// across support edges.
pub fn edge_correlation(
    m: &ExposureMatrix,
    source: NodeProperty,
    target: NodeProperty,
) -> Result<f64> {
    let bs = m.banks();
    let src = source.values(bs);
    let dst = target.values(bs);
    let edges = support_edges(m);
    let xs: Vec<f64> = edges.iter().map(|&(i, _)| src[i]).collect();
    let ys: Vec<f64> = edges.iter().map(|&(_, j)| dst[j]).collect();
    pearson(&xs, &ys)
        .ok_or_else(|| Error::DegenerateProperty("edge endpoint properties have no spread".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkSummary {
    pub n_banks: usize,
    pub n_edges: usize,
    pub mean_degree: f64,
    pub reciprocal_pairs: usize,
    /// Pearson correlation of `A_i` and `L_i` across banks (`NaN` if undefined).
    pub assets_liabilities_correlation: f64,
    pub total_assets: f64,
    pub total_liabilities: f64,
    pub max_assets: f64,
    pub max_liabilities: f64,
    pub symmetry_ratio: f64,
}

pub fn network_summary(m: &ExposureMatrix) -> NetworkSummary {
    let bs = m.banks();
    let n_edges = edge_count(m);
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    NetworkSummary {
        n_banks: m.n(),
        n_edges,
        mean_degree: n_edges as f64 / m.n() as f64,
        reciprocal_pairs: reciprocal_pairs(m),
        assets_liabilities_correlation: pearson(bs.assets(), bs.liabilities())
            .unwrap_or(f64::NAN),
        total_assets: bs.assets().iter().sum(),
        total_liabilities: bs.liabilities().iter().sum(),
        max_assets: max(bs.assets()),
        max_liabilities: max(bs.liabilities()),
        symmetry_ratio: symmetry_ratio(m),
    }
}
