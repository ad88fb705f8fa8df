//! Tensor grids over the bounding box of Ḡ and functions sampled on them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::scalar::{dist, Real};

/// Grid resolution: number of nodes per axis of the bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
}

impl GridSpec {
    pub fn new(points: usize) -> Self {
        Self { points }
    }

    /// Resolution whose spacing along the widest axis is at most `h`.
    pub fn from_spacing<T: Real>(domain: &DomainSpec<T>, h: T) -> Self {
        let (lo, hi) = domain.bounding_box();
        let width = lo
            .iter()
            .zip(&hi)
            .map(|(&a, &b)| b - a)
            .fold(T::zero(), T::max);
        let n = (width / h).round().to_usize().unwrap_or(2) + 1;
        Self { points: n.max(3) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    /// All neighbours (including diagonal ones in 2-d) lie in Ḡ.
    Interior,
    /// In Ḡ with at least one neighbour outside, or on the box edge.
    Boundary,
    Outside,
}

/// Uniform tensor grid over the bounding box, in dimension 1 or 2.
/// Node `(i, j)` has index `i + j·n` (axis 0 fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Grid<T> {
    dim: usize,
    n: usize,
    lo: Vec<T>,
    hi: Vec<T>,
    spacing: Vec<T>,
    kinds: Vec<NodeKind>,
    reference: usize,
}

impl<T: Real> Grid<T> {
    pub fn new(domain: &DomainSpec<T>, spec: GridSpec) -> Result<Self> {
        let dim = domain.dim();
        if dim > 2 {
            return Err(Error::UnsupportedDimension {
                dim,
                what: "grid solvers",
            });
        }
        let n = spec.points;
        if n < 3 {
            return Err(Error::InvalidArgument("grid needs at least 3 points per axis".into()));
        }
        let (lo, hi) = domain.bounding_box();
        let spacing: Vec<T> = (0..dim)
            .map(|k| (hi[k] - lo[k]) / T::from_usize_lossy(n - 1))
            .collect();
        let mut g = Self {
            dim,
            n,
            lo,
            hi,
            spacing,
            kinds: Vec::new(),
            reference: 0,
        };
        let total = g.len();
        let active: Vec<bool> = (0..total).map(|i| domain.contains(&g.point(i))).collect();
        g.kinds = (0..total)
            .map(|i| {
                if !active[i] {
                    NodeKind::Outside
                } else if g.all_neighbours(i).iter().all(|nb| nb.is_some_and(|j| active[j])) {
                    NodeKind::Interior
                } else {
                    NodeKind::Boundary
                }
            })
            .collect();
        let c = domain.centroid();
        g.reference = (0..total)
            .filter(|&i| active[i])
            .min_by(|&a, &b| {
                dist(&g.point(a), &c)
                    .partial_cmp(&dist(&g.point(b), &c))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .ok_or_else(|| Error::InvalidArgument("grid has no node inside the domain".into()))?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> &[T] {
        &self.spacing
    }

    /// Smallest spacing over the axes.
    pub fn h_min(&self) -> T {
        self.spacing.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.kinds[i] != NodeKind::Outside
    }

    /// Active node nearest to the centroid; the normalization point.
    pub fn reference(&self) -> usize {
        self.reference
    }

    /// Per-axis integer coordinates of node `i`.
    pub fn coords(&self, i: usize) -> [usize; 2] {
        if self.dim == 1 {
            [i, 0]
        } else {
            [i % self.n, i / self.n]
        }
    }

    pub fn index(&self, c: [usize; 2]) -> usize {
        if self.dim == 1 {
            c[0]
        } else {
            c[0] + c[1] * self.n
        }
    }

    pub fn point(&self, i: usize) -> Vec<T> {
        let c = self.coords(i);
        (0..self.dim)
            .map(|k| {
                if c[k] == self.n - 1 {
                    self.hi[k]
                } else {
                    self.lo[k] + self.spacing[k] * T::from_usize_lossy(c[k])
                }
            })
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<T>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Neighbour of `i` shifted by `step` (±1, ±2) along `axis`.
    pub fn neighbour(&self, i: usize, axis: usize, step: isize) -> Option<usize> {
        let mut c = self.coords(i);
        let v = c[axis] as isize + step;
        if v < 0 || v >= self.n as isize {
            return None;
        }
        c[axis] = v as usize;
        Some(self.index(c))
    }

    /// Diagonal neighbour `(i + s0 e0 + s1 e1)` in 2-d.
    pub fn diagonal(&self, i: usize, s0: isize, s1: isize) -> Option<usize> {
        self.neighbour(i, 0, s0).and_then(|j| self.neighbour(j, 1, s1))
    }

    fn all_neighbours(&self, i: usize) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(8);
        for axis in 0..self.dim {
            out.push(self.neighbour(i, axis, -1));
            out.push(self.neighbour(i, axis, 1));
        }
        if self.dim == 2 {
            for (a, b) in [(-1, -1), (-1, 1), (1, -1), (1, 1)] {
                out.push(self.diagonal(i, a, b));
            }
        }
        out
    }

    /// Active neighbour along `axis` in direction `step`, if any.
    pub fn active_neighbour(&self, i: usize, axis: usize, step: isize) -> Option<usize> {
        self.neighbour(i, axis, step).filter(|&j| self.is_active(j))
    }

    /// Band half-width of the 9-point stencil.
    pub fn bandwidth(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.n + 1
        }
    }

    /// Cell containing `x` (lower corner coordinates) and local offsets in [0, 1].
    fn locate(&self, x: &[T]) -> ([usize; 2], [T; 2]) {
        let mut c = [0usize; 2];
        let mut t = [T::zero(); 2];
        for k in 0..self.dim {
            let s = ((x[k] - self.lo[k]) / self.spacing[k]).max(T::zero());
            let cell = s.floor().to_usize().unwrap_or(0).min(self.n - 2);
            c[k] = cell;
            t[k] = (s - T::from_usize_lossy(cell)).min(T::one()).max(T::zero());
        }
        (c, t)
    }

    /// Interpolation weights `(node, weight)` for `x`: linear in 1-d,
    /// bilinear in 2-d restricted to active corners, nearest active node
    /// as a last resort.
    pub fn interpolation_weights(&self, x: &[T]) -> Vec<(usize, T)> {
        let (c, t) = self.locate(x);
        let mut out = Vec::with_capacity(4);
        if self.dim == 1 {
            out.push((c[0], T::one() - t[0]));
            out.push((c[0] + 1, t[0]));
            return out;
        }
        let mut total = T::zero();
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let j = self.index([c[0] + dx, c[1] + dy]);
            if !self.is_active(j) {
                continue;
            }
            let wx = if dx == 1 { t[0] } else { T::one() - t[0] };
            let wy = if dy == 1 { t[1] } else { T::one() - t[1] };
            let w = wx * wy;
            out.push((j, w));
            total = total + w;
        }
        if total > T::lit(1e-12) {
            for e in out.iter_mut() {
                e.1 = e.1 / total;
            }
            return out;
        }
        let nearest = (0..self.len())
            .filter(|&j| self.is_active(j))
            .min_by(|&a, &b| {
                dist(&self.point(a), x)
                    .partial_cmp(&dist(&self.point(b), x))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(self.reference);
        vec![(nearest, T::one())]
    }
}

/// Something that can be evaluated with its gradient at arbitrary points.
pub trait ValueGradient<T: Real>: Send + Sync {
    fn value(&self, x: &[T]) -> T;
    fn gradient(&self, x: &[T]) -> Vec<T>;
}

/// Closed-form value/gradient pair.
pub struct ExactField<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<T, F, G> ValueGradient<T> for ExactField<F, G>
where
    T: Real,
    F: Fn(&[T]) -> T + Send + Sync,
    G: Fn(&[T]) -> Vec<T> + Send + Sync,
{
    fn value(&self, x: &[T]) -> T {
        (self.value)(x)
    }
    fn gradient(&self, x: &[T]) -> Vec<T> {
        (self.gradient)(x)
    }
}

/// Values and gradients on the nodes of a [`Grid`]. Outside nodes carry 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GridFunction<T> {
    pub grid: Grid<T>,
    pub values: Vec<T>,
    pub gradient: Vec<Vec<T>>,
}

impl<T: Real> GridFunction<T> {
    /// Samples `f` on the active nodes, gradients by [`Self::difference_gradient`].
    pub fn from_fn(grid: Grid<T>, f: impl Fn(&[T]) -> T) -> Self {
        let values = (0..grid.len())
            .map(|i| if grid.is_active(i) { f(&grid.point(i)) } else { T::zero() })
            .collect();
        let mut out = Self {
            gradient: Vec::new(),
            grid,
            values,
        };
        out.gradient = out.difference_gradient();
        out
    }

    /// Centred differences where both neighbours are active, one-sided otherwise.
    pub fn difference_gradient(&self) -> Vec<Vec<T>> {
        let g = &self.grid;
        let d = g.dim();
        (0..g.len())
            .map(|i| {
                if !g.is_active(i) {
                    return vec![T::zero(); d];
                }
                (0..d)
                    .map(|k| {
                        let h = g.spacing()[k];
                        match (g.active_neighbour(i, k, -1), g.active_neighbour(i, k, 1)) {
                            (Some(m), Some(p)) => (self.values[p] - self.values[m]) / (h + h),
                            (None, Some(p)) => match g.active_neighbour(p, k, 1) {
                                Some(pp) => {
                                    (T::lit(-3.0) * self.values[i] + T::lit(4.0) * self.values[p] - self.values[pp])
                                        / (h + h)
                                }
                                None => (self.values[p] - self.values[i]) / h,
                            },
                            (Some(m), None) => match g.active_neighbour(m, k, -1) {
                                Some(mm) => {
                                    (T::lit(3.0) * self.values[i] - T::lit(4.0) * self.values[m] + self.values[mm])
                                        / (h + h)
                                }
                                None => (self.values[i] - self.values[m]) / h,
                            },
                            (None, None) => T::zero(),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn value_at_node(&self, i: usize) -> T {
        self.values[i]
    }

    /// Max of `|v|` over active nodes.
    pub fn max_abs(&self) -> T {
        self.active_values().map(T::abs).fold(T::zero(), T::max)
    }

    pub fn active_values(&self) -> impl Iterator<Item = T> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.is_active(*i))
            .map(|(_, &v)| v)
    }

    /// Max over active nodes of `|self - other|`; grids must coincide.
    pub fn max_distance(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .filter(|(i, _)| self.grid.is_active(*i))
            .map(|(_, (&a, &b))| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Adds a constant on active nodes.
    pub fn shift(&mut self, c: T) {
        for i in 0..self.values.len() {
            if self.grid.is_active(i) {
                self.values[i] = self.values[i] + c;
            }
        }
    }

    /// `a·self + b·other`, values and gradients.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        let gradient = self
            .gradient
            .iter()
            .zip(&other.gradient)
            .map(|(gu, gv)| gu.iter().zip(gv).map(|(&u, &v)| a * u + b * v).collect())
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
            gradient,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.grid.dim();
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        header.push("kind".into());
        header.push("value".into());
        header.extend((0..d).map(|k| format!("dv{k}")));
        wr.write_record(&header)?;
        for i in 0..self.grid.len() {
            let kind = self.grid.kind(i);
            if kind == NodeKind::Outside {
                continue;
            }
            let mut rec: Vec<String> = self.grid.point(i).iter().map(|v| v.to_string()).collect();
            rec.push(format!("{kind:?}").to_lowercase());
            rec.push(self.values[i].to_string());
            rec.extend(self.gradient[i].iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

impl<T: Real> ValueGradient<T> for GridFunction<T> {
    fn value(&self, x: &[T]) -> T {
        self.grid
            .interpolation_weights(x)
            .into_iter()
            .map(|(j, w)| w * self.values[j])
            .sum()
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        let d = self.grid.dim();
        let mut g = vec![T::zero(); d];
        for (j, w) in self.grid.interpolation_weights(x) {
            for k in 0..d {
                g[k] = g[k] + w * self.gradient[j][k];
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_grid_layout() {
        let g = Grid::new(&DomainSpec::interval(1.0f64), GridSpec::new(5)).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.kind(0), NodeKind::Boundary);
        assert_eq!(g.kind(2), NodeKind::Interior);
        assert_eq!(g.kind(4), NodeKind::Boundary);
        assert_eq!(g.reference(), 2);
        assert_eq!(g.point(4), vec![1.0]);
        assert!((g.spacing()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn from_spacing_hits_requested_step() {
        let s = GridSpec::from_spacing(&DomainSpec::interval(1.0f64), 1e-3);
        assert_eq!(s.points, 2001);
    }

    #[test]
    fn disc_grid_classifies_nodes() {
        let g = Grid::new(&DomainSpec::ball(1.0f64, 2), GridSpec::new(21)).unwrap();
        let centre = g.index([10, 10]);
        assert_eq!(g.kind(centre), NodeKind::Interior);
        assert_eq!(g.reference(), centre);
        assert_eq!(g.kind(g.index([0, 0])), NodeKind::Outside);
        // (1, 0) lies on the circle and on the box edge
        assert_eq!(g.kind(g.index([20, 10])), NodeKind::Boundary);
        let interior = g.kinds().iter().filter(|k| **k == NodeKind::Interior).count();
        assert!(interior > 200);
    }

    #[test]
    fn linear_functions_interpolate_exactly() {
        let g = Grid::new(&DomainSpec::ball(1.0f64, 2), GridSpec::new(17)).unwrap();
        let f = GridFunction::from_fn(g, |x| 1.0 + 2.0 * x[0] - x[1]);
        let p = [0.13, -0.31];
        assert!((f.value(&p) - (1.0 + 0.26 + 0.31)).abs() < 1e-12);
        let gr = f.gradient(&p);
        assert!((gr[0] - 2.0).abs() < 1e-12 && (gr[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_sided_gradient_is_second_order() {
        let g = Grid::new(&DomainSpec::interval(1.0f64), GridSpec::new(101)).unwrap();
        let f = GridFunction::from_fn(g, |x| x[0] * x[0]);
        assert!((f.gradient[100][0] - 2.0).abs() < 1e-10);
        assert!((f.gradient[0][0] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn csv_has_one_row_per_active_node() {
        let g = Grid::new(&DomainSpec::interval(1.0f64), GridSpec::new(4)).unwrap();
        let f = GridFunction::from_fn(g, |x| x[0]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 5);
        assert!(s.starts_with("x0,kind,value,dv0"));
    }

    #[test]
    fn three_d_is_rejected() {
        let e = Grid::new(&DomainSpec::ball(1.0f64, 3), GridSpec::new(5)).unwrap_err();
        assert!(matches!(e, Error::UnsupportedDimension { dim: 3, .. }));
    }
}
