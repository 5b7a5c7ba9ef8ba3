use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, RowDVector};

use super::{hull, GeomError, GeomResult};
use crate::numkernel::{find_feasible_point, solve_lp, NumError};

/// Convex polyhedron `{x : A x ≤ b}`.
///
/// Values are immutable. An empty set is representable and carries an
/// explicit flag; operations propagate it. Vertices are computed lazily (for
/// dimension ≤ 3) and cached.
#[derive(Clone)]
pub struct HPolytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
    empty: bool,
    canonical: bool,
    vertices: Arc<OnceLock<Result<Vec<DVector<f64>>, GeomError>>>,
}

impl std::fmt::Debug for HPolytope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HPolytope")
            .field("dim", &self.dim())
            .field("rows", &self.a.nrows())
            .field("empty", &self.empty)
            .field("a", &self.a)
            .field("b", &self.b)
            .finish()
    }
}

impl PartialEq for HPolytope {
    fn eq(&self, other: &Self) -> bool {
        self.empty == other.empty && self.a == other.a && self.b == other.b
    }
}

/// Row normals closer than this are treated as the same direction.
const SAME_NORMAL_TOL: f64 = 1e-12;
/// Offset slack below which a row is reported strictly redundant.
const REDUNDANT_TOL: f64 = 1e-9;

impl HPolytope {
    /// Builds `{x : A x ≤ b}` without canonicalizing. Emptiness is detected.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> GeomResult<Self> {
        if a.ncols() == 0 {
            return Err(GeomError::InvalidInput("polytope dimension must be at least 1".into()));
        }
        if a.nrows() == 0 {
            return Err(GeomError::InvalidInput("polytope needs at least one constraint row".into()));
        }
        if a.nrows() != b.len() {
            return Err(GeomError::DimensionMismatch(format!("{} rows but {} offsets", a.nrows(), b.len())));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(GeomError::InvalidInput("non-finite polytope data".into()));
        }
        let empty = find_feasible_point(&a, &b)?.is_none();
        Ok(Self::raw(a, b, empty, false))
    }

    pub(crate) fn raw(a: DMatrix<f64>, b: DVector<f64>, empty: bool, canonical: bool) -> Self {
        Self { a, b, empty, canonical, vertices: Arc::new(OnceLock::new()) }
    }

    pub(crate) fn with_vertices(mut self, vertices: Vec<DVector<f64>>) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(Ok(vertices));
        self.vertices = Arc::new(cell);
        self
    }

    /// Flagged empty set of the given dimension.
    pub fn empty(dim: usize) -> Self {
        let mut a = DMatrix::zeros(1, dim.max(1));
        a[(0, 0)] = 0.0;
        let b = DVector::from_element(1, -1.0);
        Self::raw(a, b, true, true).with_vertices(Vec::new())
    }

    /// Axis-aligned box `[lower, upper]`.
    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> GeomResult<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(GeomError::DimensionMismatch(format!("bounds of length {} and {}", lower.len(), upper.len())));
        }
        let n = lower.len();
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = upper[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lower[i];
        }
        if !b.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidInput("non-finite bounds".into()));
        }
        let empty = lower.iter().zip(upper).any(|(l, u)| l > u);
        Ok(Self::raw(a, b, empty, false))
    }

    /// Axis-aligned box `center ± radius` (the ∞-norm ball).
    pub fn box_set(center: &DVector<f64>, radius: f64) -> GeomResult<Self> {
        if !(radius >= 0.0) {
            return Err(GeomError::InvalidInput(format!("box radius must be non-negative, got {radius}")));
        }
        let lower: Vec<f64> = center.iter().map(|c| c - radius).collect();
        let upper: Vec<f64> = center.iter().map(|c| c + radius).collect();
        Self::from_bounds(&lower, &upper)
    }

    /// The singleton `{0}`.
    pub fn origin(dim: usize) -> Self {
        Self::box_set(&DVector::zeros(dim), 0.0).expect("zero box is valid").with_vertices(vec![DVector::zeros(dim)])
    }

    /// Convex hull of a finite point set (dimension ≤ 3).
    pub fn from_points(points: &[DVector<f64>]) -> GeomResult<Self> {
        hull::hull(points)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if self.empty || x.len() != self.dim() {
            return false;
        }
        (&self.a * x - &self.b).iter().all(|&v| v <= tol)
    }

    /// Largest constraint violation at `x` (negative when strictly inside).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).max()
    }

    /// Vertices of a bounded polytope of dimension ≤ 3.
    pub fn vertices(&self) -> GeomResult<&[DVector<f64>]> {
        let cell = self.vertices.get_or_init(|| {
            if self.empty {
                Ok(Vec::new())
            } else {
                hull::enumerate_vertices(&self.a, &self.b)
            }
        });
        match cell {
            Ok(v) => Ok(v.as_slice()),
            Err(e) => Err(e.clone()),
        }
    }

    /// Vertices if they have already been computed; never enumerates.
    pub(crate) fn cached_vertices(&self) -> Option<&[DVector<f64>]> {
        match self.vertices.get() {
            Some(Ok(v)) if !self.empty => Some(v.as_slice()),
            _ => None,
        }
    }

    /// Unit-norm rows, duplicates merged, strictly redundant rows removed
    /// (one LP per row; rows that only touch the set are kept).
    pub fn canonicalize(&self) -> GeomResult<Self> {
        if self.canonical {
            return Ok(self.clone());
        }
        let n = self.dim();
        let mut rows: Vec<(RowDVector<f64>, f64)> = Vec::with_capacity(self.a.nrows());
        let mut contradiction = false;
        for i in 0..self.a.nrows() {
            let r = self.a.row(i).into_owned();
            let norm = r.norm();
            if norm <= 1e-14 {
                if self.b[i] < -1e-12 {
                    contradiction = true;
                }
                continue;
            }
            let (r, bi) = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON { (r, self.b[i]) } else { (r / norm, self.b[i] / norm) };
            match rows.iter_mut().find(|(q, _)| (q - &r).amax() <= SAME_NORMAL_TOL) {
                Some((_, bq)) => *bq = bq.min(bi),
                None => rows.push((r, bi)),
            }
        }
        if contradiction {
            return Ok(Self::empty(n));
        }
        if rows.is_empty() {
            return Err(GeomError::Unbounded);
        }
        let (a, b) = stack(&rows, n);
        if self.empty || (self.cached_vertices().is_none() && find_feasible_point(&a, &b)?.is_none()) {
            return Ok(Self::raw(a, b, true, true).with_vertices(Vec::new()));
        }

        let mut keep = vec![true; rows.len()];
        for i in 0..rows.len() {
            let others: Vec<usize> = (0..rows.len()).filter(|&j| j != i && keep[j]).collect();
            if others.is_empty() {
                continue;
            }
            let mut sa = DMatrix::zeros(others.len(), n);
            let mut sb = DVector::zeros(others.len());
            for (r, &j) in others.iter().enumerate() {
                sa.set_row(r, &rows[j].0);
                sb[r] = rows[j].1;
            }
            let c = rows[i].0.transpose();
            match solve_lp(&c, &sa, &sb) {
                Ok(sol) => {
                    if sol.value < rows[i].1 - REDUNDANT_TOL * (1.0 + rows[i].1.abs()) {
                        keep[i] = false;
                    }
                }
                Err(NumError::Unbounded) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let kept: Vec<(RowDVector<f64>, f64)> = rows.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r).collect();
        let (a, b) = stack(&kept, n);
        let mut out = Self::raw(a, b, false, true);
        if let Some(Ok(v)) = self.vertices.get() {
            out = out.with_vertices(v.clone());
        }
        Ok(out)
    }

    /// Intersection; the result is canonical.
    pub fn intersect(&self, other: &Self) -> GeomResult<Self> {
        if self.dim() != other.dim() {
            return Err(GeomError::DimensionMismatch(format!("intersect {}-D with {}-D", self.dim(), other.dim())));
        }
        if self.empty || other.empty {
            return Ok(Self::empty(self.dim()));
        }
        let mut a = DMatrix::zeros(self.num_rows() + other.num_rows(), self.dim());
        a.rows_mut(0, self.num_rows()).copy_from(&self.a);
        a.rows_mut(self.num_rows(), other.num_rows()).copy_from(&other.a);
        let b = DVector::from_iterator(self.b.len() + other.b.len(), self.b.iter().chain(other.b.iter()).copied());
        Self::raw(a, b, false, false).canonicalize()
    }

    /// `{s·x : x ∈ P}` for `s > 0`.
    pub fn scale(&self, s: f64) -> GeomResult<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(GeomError::InvalidInput(format!("scale factor must be positive, got {s}")));
        }
        let mut out = Self::raw(self.a.clone(), &self.b * s, self.empty, self.canonical);
        if let Some(Ok(v)) = self.vertices.get() {
            out = out.with_vertices(v.iter().map(|p| p * s).collect());
        }
        Ok(out)
    }

    /// Point reflection `{−x : x ∈ P}`.
    pub fn negate(&self) -> Self {
        let mut out = Self::raw(-&self.a, self.b.clone(), self.empty, self.canonical);
        if let Some(Ok(v)) = self.vertices.get() {
            out = out.with_vertices(v.iter().map(|p| -p).collect());
        }
        out
    }

    /// Cartesian product `P × Q`.
    pub fn product(&self, other: &Self) -> Self {
        let (m1, n1) = self.a.shape();
        let (m2, n2) = other.a.shape();
        let mut a = DMatrix::zeros(m1 + m2, n1 + n2);
        a.view_mut((0, 0), (m1, n1)).copy_from(&self.a);
        a.view_mut((m1, n1), (m2, n2)).copy_from(&other.a);
        let b = DVector::from_iterator(m1 + m2, self.b.iter().chain(other.b.iter()).copied());
        Self::raw(a, b, self.empty || other.empty, false)
    }

    /// Constraint rows on `x` induced by `M x ∈ P`: `{x : A M x ≤ b}`.
    pub fn preimage(&self, m: &DMatrix<f64>) -> GeomResult<Self> {
        if m.nrows() != self.dim() {
            return Err(GeomError::DimensionMismatch(format!("preimage through {:?} of a {}-D set", m.shape(), self.dim())));
        }
        Ok(Self::raw(&self.a * m, self.b.clone(), false, false))
    }

    /// Plain-text block: a `dim m` header followed by `m` lines `a_1 … a_n b`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.dim(), self.num_rows());
        for i in 0..self.num_rows() {
            let mut line = String::new();
            for j in 0..self.dim() {
                let _ = write!(line, "{:e} ", self.a[(i, j)]);
            }
            let _ = write!(line, "{:e}", self.b[i]);
            s.push_str(&line);
            s.push('\n');
        }
        s
    }

    /// Parses one block written by [`HPolytope::to_text`]. Returns the polytope
    /// and the unconsumed remainder of the input lines.
    pub fn from_text_lines<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> GeomResult<Self> {
        let header = next_nonblank(lines).ok_or_else(|| GeomError::InvalidInput("missing polytope header".into()))?;
        let mut it = header.split_whitespace();
        let parse_usize = |tok: Option<&str>| -> GeomResult<usize> {
            tok.ok_or_else(|| GeomError::InvalidInput(format!("bad polytope header '{header}'")))?
                .parse::<usize>()
                .map_err(|e| GeomError::InvalidInput(format!("bad polytope header '{header}': {e}")))
        };
        let n = parse_usize(it.next())?;
        let m = parse_usize(it.next())?;
        if it.next().is_some() {
            return Err(GeomError::InvalidInput(format!("bad polytope header '{header}'")));
        }
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for i in 0..m {
            let line = next_nonblank(lines).ok_or_else(|| GeomError::InvalidInput(format!("polytope truncated at row {i}")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| GeomError::InvalidInput(format!("bad number '{t}': {e}"))))
                .collect::<GeomResult<_>>()?;
            if vals.len() != n + 1 {
                return Err(GeomError::InvalidInput(format!("row {i} has {} numbers, expected {}", vals.len(), n + 1)));
            }
            for j in 0..n {
                a[(i, j)] = vals[j];
            }
            b[i] = vals[n];
        }
        Self::new(a, b)
    }

    pub fn from_text(text: &str) -> GeomResult<Self> {
        let mut lines = text.lines();
        let p = Self::from_text_lines(&mut lines)?;
        if next_nonblank(&mut lines).is_some() {
            return Err(GeomError::InvalidInput("trailing data after polytope block".into()));
        }
        Ok(p)
    }
}

fn next_nonblank<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> Option<&'a str> {
    lines.by_ref().map(str::trim).find(|l| !l.is_empty())
}

fn stack(rows: &[(RowDVector<f64>, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(rows.len(), n);
    let mut b = DVector::zeros(rows.len());
    for (i, (r, bi)) in rows.iter().enumerate() {
        a.set_row(i, r);
        b[i] = *bi;
    }
    (a, b)
}
