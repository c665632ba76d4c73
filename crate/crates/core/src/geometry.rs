//! Boxes, affine support bands, the support recursion and partitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned box with nonempty interior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct AxisBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for AxisBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        AxisBox::new(raw.lower, raw.upper)
    }
}

impl From<AxisBox> for RawBox {
    fn from(b: AxisBox) -> Self {
        RawBox {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::invalid("box must have at least one dimension"));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "box axis {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(AxisBox { lower, upper })
    }

    /// One-dimensional box `[lo, hi]`.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        AxisBox::new(vec![lo], vec![hi])
    }

    /// The unit cube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        AxisBox {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    // Callers guarantee lower < upper componentwise.
    pub(crate) fn from_bounds_unchecked(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert!(lower.iter().zip(&upper).all(|(l, u)| l < u));
        AxisBox { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).product()
    }

    /// Euclidean length of the main diagonal.
    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k).powi(2)).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Closed-set membership.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *l <= *x && *x <= *u)
    }

    pub fn is_subset_of(&self, other: &AxisBox) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|k| other.lower[k] <= self.lower[k] && self.upper[k] <= other.upper[k])
    }

    /// Intersection with nonempty interior, if any.
    pub fn intersection(&self, other: &AxisBox) -> Option<AxisBox> {
        if self.dim() != other.dim() {
            return None;
        }
        let lower: Vec<f64> = (0..self.dim()).map(|k| self.lower[k].max(other.lower[k])).collect();
        let upper: Vec<f64> = (0..self.dim()).map(|k| self.upper[k].min(other.upper[k])).collect();
        if lower.iter().zip(&upper).all(|(l, u)| l < u) {
            Some(AxisBox { lower, upper })
        } else {
            None
        }
    }

    pub fn hull(&self, other: &AxisBox) -> AxisBox {
        assert_eq!(self.dim(), other.dim(), "hull of boxes of different dimension");
        AxisBox {
            lower: (0..self.dim()).map(|k| self.lower[k].min(other.lower[k])).collect(),
            upper: (0..self.dim()).map(|k| self.upper[k].max(other.upper[k])).collect(),
        }
    }

    /// Cartesian product `self × other`, coordinates of `self` first.
    pub fn product(&self, other: &AxisBox) -> AxisBox {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        AxisBox { lower, upper }
    }

    /// Bisects the box along its longest axis (first one on ties).
    pub fn bisect(&self) -> (AxisBox, AxisBox) {
        let mut axis = 0;
        for k in 1..self.dim() {
            if self.width(k) > self.width(axis) {
                axis = k;
            }
        }
        let mid = 0.5 * (self.lower[axis] + self.upper[axis]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[axis] = mid;
        right.lower[axis] = mid;
        (left, right)
    }
}

/// Affine support band `Γ = {(s, s̄) : |s̄ - (F s + g)| <= w}` (componentwise).
///
/// `Ξ(s) = [F s + g - w, F s + g + w]`; the image of a box under `Ξ` is the
/// box hull of `F·box + g` widened by `w`, which is exact for diagonal `F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandMap {
    /// Row-major `d × d` matrix `F`.
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl BandMap {
    pub fn new(matrix: Vec<Vec<f64>>, offset: Vec<f64>, half_width: Vec<f64>) -> Result<Self> {
        let band = BandMap {
            matrix,
            offset,
            half_width,
        };
        band.validate()?;
        Ok(band)
    }

    pub fn scalar(gain: f64, offset: f64, half_width: f64) -> Result<Self> {
        BandMap::new(vec![vec![gain]], vec![offset], vec![half_width])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.offset.len();
        if d == 0 {
            return Err(Error::invalid("band must have at least one dimension"));
        }
        if self.matrix.len() != d || self.matrix.iter().any(|row| row.len() != d) {
            return Err(Error::invalid("band matrix must be d × d"));
        }
        if self.half_width.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.half_width.len(),
            });
        }
        if self.half_width.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("band half widths must be finite and >= 0"));
        }
        if self.matrix.iter().flatten().chain(&self.offset).any(|v| !v.is_finite()) {
            return Err(Error::invalid("band map entries must be finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// `Ξ(s)` as a closed box (degenerate when the half width is zero).
    pub fn section(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let center: Vec<f64> = self
            .matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, g)| row.iter().zip(s).map(|(f, x)| f * x).sum::<f64>() + g)
            .collect();
        let lo = center.iter().zip(&self.half_width).map(|(c, w)| c - w).collect();
        let hi = center.iter().zip(&self.half_width).map(|(c, w)| c + w).collect();
        (lo, hi)
    }

    /// `∪_{s ∈ region} Ξ(s)`, as lower/upper bounds.
    fn image_bounds(&self, lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![0.0; d];
        let mut hi = vec![0.0; d];
        for k in 0..d {
            let mut a = self.offset[k];
            let mut b = self.offset[k];
            for j in 0..lower.len() {
                let f = self.matrix[k][j];
                let (p, q) = (f * lower[j], f * upper[j]);
                a += p.min(q);
                b += p.max(q);
            }
            lo[k] = a - self.half_width[k];
            hi[k] = b + self.half_width[k];
        }
        (lo, hi)
    }
}

/// Support sets `Λ_0 … Λ_N` of the truncated densities.
///
/// `Λ_{t+1} = ∪_{s ∈ Λ_t} Ξ(s)`, represented by its box hull.
pub fn support_recursion(band: &BandMap, initial: &AxisBox, horizon: usize) -> Result<Vec<AxisBox>> {
    band.validate()?;
    if band.dim() != initial.dim() {
        return Err(Error::DimensionMismatch {
            expected: band.dim(),
            got: initial.dim(),
        });
    }
    let mut sets = Vec::with_capacity(horizon + 1);
    sets.push(initial.clone());
    for _ in 0..horizon {
        let last = sets.last().expect("nonempty");
        let (lo, hi) = band.image_bounds(last.lower(), last.upper());
        // A zero-width band over a zero-gain axis collapses the set to a point.
        let next = AxisBox::new(lo, hi)
            .map_err(|_| Error::Unsupported("support set collapsed to a lower-dimensional set".into()))?;
        sets.push(next);
    }
    Ok(sets)
}

/// Smallest box containing every support set.
pub fn truncated_domain(supports: &[AxisBox]) -> Result<AxisBox> {
    let (first, rest) = supports
        .split_first()
        .ok_or_else(|| Error::invalid("truncated_domain needs at least one support set"))?;
    Ok(rest.iter().fold(first.clone(), |acc, b| acc.hull(b)))
}

/// Rectilinear partition of a box into `n` cells plus the implicit sink.
///
/// Cells are products of per-axis intervals, numbered row-major with the last
/// axis varying fastest. Cells are half-open on their upper faces except on
/// the domain's upper boundary, so every point of the domain lies in exactly
/// one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    domain: AxisBox,
    breaks: Vec<Vec<f64>>,
    strides: Vec<usize>,
    delta: f64,
}

impl Partition {
    /// Partition from explicit per-axis breakpoints (strictly increasing,
    /// at least two per axis).
    pub fn from_breakpoints(breaks: Vec<Vec<f64>>) -> Result<Self> {
        if breaks.is_empty() {
            return Err(Error::invalid("partition needs at least one axis"));
        }
        for (k, b) in breaks.iter().enumerate() {
            if b.len() < 2 {
                return Err(Error::invalid(format!("axis {k} needs at least two breakpoints")));
            }
            if b.windows(2)
                .any(|w| w[0] >= w[1] || !w[1].is_finite() || !w[0].is_finite())
            {
                return Err(Error::invalid(format!(
                    "axis {k} breakpoints must be finite and strictly increasing"
                )));
            }
        }
        let domain = AxisBox::new(
            breaks.iter().map(|b| b[0]).collect(),
            breaks.iter().map(|b| *b.last().expect("len >= 2")).collect(),
        )?;
        let d = breaks.len();
        let mut strides = vec![1; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * (breaks[k + 1].len() - 1);
        }
        let delta = breaks
            .iter()
            .map(|b| b.windows(2).map(|w| w[1] - w[0]).fold(0.0_f64, f64::max).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(Partition {
            domain,
            breaks,
            strides,
            delta,
        })
    }

    /// Regular grid with the given number of cells per axis.
    pub fn uniform_counts(domain: &AxisBox, counts: &[usize]) -> Result<Self> {
        if counts.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: counts.len(),
            });
        }
        if counts.contains(&0) {
            return Err(Error::invalid("cell counts must be >= 1"));
        }
        let breaks = counts
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let (lo, hi) = (domain.lower()[k], domain.upper()[k]);
                let w = (hi - lo) / c as f64;
                let mut b: Vec<f64> = (0..c).map(|i| lo + i as f64 * w).collect();
                b.push(hi);
                b
            })
            .collect();
        Partition::from_breakpoints(breaks)
    }

    /// Regular grid whose cell diagonal does not exceed `target_delta`.
    ///
    /// Each axis gets cells of width at most `target_delta / sqrt(d)`.
    pub fn uniform_delta(domain: &AxisBox, target_delta: f64) -> Result<Self> {
        if !(target_delta.is_finite() && target_delta > 0.0) {
            return Err(Error::invalid("target delta must be positive"));
        }
        if target_delta >= domain.diameter() {
            log::warn!(
                "target delta {target_delta} exceeds the domain diameter {}; using a single cell",
                domain.diameter()
            );
            return Partition::uniform_counts(domain, &vec![1; domain.dim()]);
        }
        let axis_width = target_delta / (domain.dim() as f64).sqrt();
        let counts: Vec<usize> = (0..domain.dim())
            .map(|k| cells_for(domain.width(k), axis_width))
            .collect();
        Partition::uniform_counts(domain, &counts)
    }

    /// Regular grid with cell width `target_delta / sqrt(d)` per axis whose
    /// grid lines pass through `anchor`; the domain is enlarged outward to
    /// the nearest grid lines.
    ///
    /// Used to keep the faces of the initial support on cell boundaries.
    pub fn uniform_aligned(domain: &AxisBox, target_delta: f64, anchor: &[f64]) -> Result<Self> {
        if !(target_delta.is_finite() && target_delta > 0.0) {
            return Err(Error::invalid("target delta must be positive"));
        }
        if anchor.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: anchor.len(),
            });
        }
        let w = target_delta / (domain.dim() as f64).sqrt();
        let breaks = (0..domain.dim())
            .map(|k| {
                let lo = snap_down((domain.lower()[k] - anchor[k]) / w);
                let hi = snap_up((domain.upper()[k] - anchor[k]) / w);
                let hi = hi.max(lo + 1);
                (lo..=hi).map(|i| anchor[k] + i as f64 * w).collect()
            })
            .collect();
        Partition::from_breakpoints(breaks)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &AxisBox {
        &self.domain
    }

    /// Per-axis breakpoints.
    pub fn breakpoints(&self) -> &[Vec<f64>] {
        &self.breaks
    }

    pub fn counts(&self) -> Vec<usize> {
        self.breaks.iter().map(|b| b.len() - 1).collect()
    }

    /// Number of cells `n`, excluding the sink.
    pub fn len(&self) -> usize {
        self.breaks.iter().map(|b| b.len() - 1).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the sink state `S \ Υ` (equal to `len()`).
    pub fn sink_index(&self) -> usize {
        self.len()
    }

    /// Maximum cell diameter.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Per-axis interval indices of cell `i`.
    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let q = i / s;
                i %= s;
                q
            })
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(m, s)| m * s).sum()
    }

    pub fn cell(&self, i: usize) -> AxisBox {
        assert!(i < self.len(), "cell index {i} out of range");
        let m = self.multi_index(i);
        AxisBox::from_bounds_unchecked(
            m.iter().enumerate().map(|(k, &j)| self.breaks[k][j]).collect(),
            m.iter().enumerate().map(|(k, &j)| self.breaks[k][j + 1]).collect(),
        )
    }

    pub fn cells(&self) -> impl Iterator<Item = AxisBox> + '_ {
        (0..self.len()).map(move |i| self.cell(i))
    }

    pub fn cell_volume(&self, i: usize) -> f64 {
        self.cell(i).volume()
    }

    /// Cell containing `point`, or `None` when it lies outside the domain
    /// (i.e. in the sink).
    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim() {
            return None;
        }
        let mut idx = 0;
        for (k, &x) in point.iter().enumerate() {
            let b = &self.breaks[k];
            let last = b.len() - 1;
            if !(x >= b[0] && x <= b[last]) {
                return None;
            }
            // number of breakpoints <= x, minus one; upper domain face closed
            let j = b.partition_point(|&v| v <= x).saturating_sub(1).min(last - 1);
            idx += j * self.strides[k];
        }
        Some(idx)
    }
}

fn cells_for(length: f64, max_width: f64) -> usize {
    let ratio = length / max_width;
    let c = snap_up(ratio);
    c.max(1) as usize
}

// Rounding that ignores floating-point noise in ratios such as 1 / 0.05.
fn snap_up(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as i64
    } else {
        x.ceil() as i64
    }
}

fn snap_down(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as i64
    } else {
        x.floor() as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn box_rejects_empty_interior() {
        assert!(AxisBox::interval(1.0, 1.0).is_err());
        assert!(AxisBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(AxisBox::interval(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn box_measures() {
        let b = AxisBox::new(vec![0.0, 1.0], vec![3.0, 5.0]).unwrap();
        assert_eq!(b.volume(), 12.0);
        assert_eq!(b.diameter(), 5.0);
        assert_eq!(b.center(), vec![1.5, 3.0]);
        let (l, r) = b.bisect();
        assert_eq!(l.upper(), &[3.0, 3.0]);
        assert_eq!(r.lower(), &[0.0, 3.0]);
    }

    #[test]
    fn uniform_four_cells() {
        let p = Partition::uniform_counts(&AxisBox::unit(1), &[4]).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.sink_index(), 4);
        assert_eq!(p.delta(), 0.25);
        assert_eq!(p.cell(1).lower(), &[0.25]);
        assert_eq!(p.locate(&[0.25]), Some(1));
        assert_eq!(p.locate(&[0.2499]), Some(0));
        assert_eq!(p.locate(&[1.0]), Some(3));
        assert_eq!(p.locate(&[1.0001]), None);
        assert_eq!(p.locate(&[-0.1]), None);
    }

    #[test]
    fn uniform_square_grid() {
        let p = Partition::uniform_counts(&AxisBox::unit(2), &[2, 2]).unwrap();
        assert_eq!(p.len(), 4);
        assert_abs_diff_eq!(p.delta(), 2f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_eq!(p.cell(1).lower(), &[0.0, 0.5]);
        assert_eq!(p.locate(&[0.75, 0.25]), Some(2));
    }

    #[test]
    fn uniform_from_target_delta() {
        let p = Partition::uniform_delta(&AxisBox::unit(1), 0.3).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.delta(), 0.25);
        // 1 / 0.05 is not exactly 20 in floating point
        let p = Partition::uniform_delta(&AxisBox::unit(1), 0.05).unwrap();
        assert_eq!(p.len(), 20);
        let p = Partition::uniform_delta(&AxisBox::unit(2), 0.5).unwrap();
        assert!(p.delta() <= 0.5 + 1e-15);
    }

    #[test]
    fn oversized_delta_gives_single_cell() {
        let p = Partition::uniform_delta(&AxisBox::unit(1), 5.0).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn aligned_partition_keeps_anchor_on_grid() {
        let dom = AxisBox::interval(-0.1786, 2.6669).unwrap();
        let p = Partition::uniform_aligned(&dom, 0.05, &[0.0]).unwrap();
        assert!(dom.is_subset_of(p.domain()));
        let b = &p.breakpoints()[0];
        assert!(b.iter().any(|&x| x.abs() < 1e-12));
        assert!(b.iter().any(|&x| (x - 1.0).abs() < 1e-12));
        assert_abs_diff_eq!(p.delta(), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn affine_band_closed_form() {
        // β_{t+1} = a β_t + b - ασ, γ_{t+1} = a γ_t + b + ασ
        let (a, sigma, alpha) = (1.2, 0.1, 2.4);
        let band = BandMap::scalar(a, 0.0, alpha * sigma).unwrap();
        let sets = support_recursion(&band, &AxisBox::unit(1), 5).unwrap();
        let (mut beta, mut gamma) = (0.0, 1.0);
        for set in &sets[1..] {
            beta = a * beta - alpha * sigma;
            gamma = a * gamma + alpha * sigma;
            assert_abs_diff_eq!(set.lower()[0], beta, epsilon = 1e-12);
            assert_abs_diff_eq!(set.upper()[0], gamma, epsilon = 1e-12);
        }
        let dom = truncated_domain(&sets).unwrap();
        // β_5 = -ασ κ(5, a), γ_5 = a^5 + ασ κ(5, a)
        assert_abs_diff_eq!(dom.lower()[0], -0.74416 * 2.4, epsilon = 1e-9);
        assert_abs_diff_eq!(dom.upper()[0], 2.48832 + 0.74416 * 2.4, epsilon = 1e-9);
    }

    #[test]
    fn identity_band_is_fixed_point() {
        let band = BandMap::scalar(1.0, 0.0, 0.0).unwrap();
        let sets = support_recursion(&band, &AxisBox::unit(1), 4).unwrap();
        assert!(sets.iter().all(|s| s == &AxisBox::unit(1)));
    }

    #[test]
    fn hull_of_supports() {
        let a = AxisBox::interval(0.0, 1.0).unwrap();
        let b = AxisBox::interval(-1.0, 2.0).unwrap();
        assert_eq!(truncated_domain(&[a.clone(), b.clone()]).unwrap(), b);
        assert_eq!(truncated_domain(std::slice::from_ref(&a)).unwrap(), a);
        assert!(truncated_domain(&[]).is_err());
    }

    #[test]
    fn negative_gain_band() {
        let band = BandMap::scalar(-2.0, 1.0, 0.5).unwrap();
        let sets = support_recursion(&band, &AxisBox::unit(1), 1).unwrap();
        assert_eq!(sets[1].lower(), &[-1.5]);
        assert_eq!(sets[1].upper(), &[1.5]);
    }

    fn arb_band() -> impl Strategy<Value = BandMap> {
        (-1.8f64..1.8, -1.0f64..1.0, 0.0f64..0.5)
            .prop_map(|(a, b, w)| BandMap::scalar(if a.abs() < 0.05 { 0.5 } else { a }, b, w).unwrap())
    }

    fn arb_interval() -> impl Strategy<Value = AxisBox> {
        (-2.0f64..2.0, 0.01f64..2.0).prop_map(|(lo, w)| AxisBox::interval(lo, lo + w).unwrap())
    }

    proptest! {
        #[test]
        fn partition_tiles_domain(
            lo in proptest::collection::vec(-3.0f64..3.0, 1..4),
            counts in proptest::collection::vec(1usize..6, 3),
            x in proptest::collection::vec(0.0f64..=1.0, 3),
        ) {
            let d = lo.len();
            let dom = AxisBox::new(lo.clone(), lo.iter().enumerate().map(|(k, l)| l + 0.5 + k as f64).collect()).unwrap();
            let p = Partition::uniform_counts(&dom, &counts[..d]).unwrap();
            let total: f64 = p.cells().map(|c| c.volume()).sum();
            prop_assert!((total - dom.volume()).abs() <= 1e-12 * dom.volume());
            let point: Vec<f64> = (0..d).map(|k| dom.lower()[k] + x[k] * dom.width(k)).collect();
            let hits: Vec<usize> = (0..p.len()).filter(|&i| {
                // half-open membership, closed on the domain's upper faces
                let c = p.cell(i);
                (0..d).all(|k| {
                    let at_top = c.upper()[k] == dom.upper()[k];
                    c.lower()[k] <= point[k] && (point[k] < c.upper()[k] || (at_top && point[k] <= c.upper()[k]))
                })
            }).collect();
            prop_assert_eq!(hits.len(), 1);
            prop_assert_eq!(p.locate(&point), Some(hits[0]));
            for i in 0..p.len() {
                prop_assert!(p.cell(i).diameter() <= p.delta() + 1e-12);
            }
        }

        #[test]
        fn support_recursion_is_monotone(band in arb_band(), small in arb_interval(), grow in (0.0f64..1.0, 0.0f64..1.0)) {
            let big = AxisBox::interval(small.lower()[0] - grow.0, small.upper()[0] + grow.1).unwrap();
            let a = support_recursion(&band, &small, 6);
            let b = support_recursion(&band, &big, 6);
            if let (Ok(a), Ok(b)) = (a, b) {
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!(x.lower()[0] >= y.lower()[0] - 1e-9 && x.upper()[0] <= y.upper()[0] + 1e-9);
                }
            }
        }

        #[test]
        fn support_trichotomy_persists(band in arb_band(), init in arb_interval()) {
            let Ok(sets) = support_recursion(&band, &init, 12) else { return Ok(()); };
            let tol = 1e-9;
            let sub = |x: &AxisBox, y: &AxisBox| x.lower()[0] >= y.lower()[0] - tol && x.upper()[0] <= y.upper()[0] + tol;
            for t0 in 0..sets.len() - 1 {
                if sub(&sets[t0], &sets[t0 + 1]) {
                    for t in t0..sets.len() - 1 {
                        prop_assert!(sub(&sets[t], &sets[t + 1]));
                    }
                }
                if sub(&sets[t0 + 1], &sets[t0]) {
                    for t in t0..sets.len() - 1 {
                        prop_assert!(sub(&sets[t + 1], &sets[t]));
                    }
                }
            }
        }
    }
}
