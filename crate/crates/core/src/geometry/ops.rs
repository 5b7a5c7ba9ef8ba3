use nalgebra::{DMatrix, DVector};

use super::{GeomError, GeomResult, HPolytope, MAX_EXACT_DIM};
use crate::numkernel::{solve_lp, NumError};

fn same_dim(p: &HPolytope, q: &HPolytope, what: &str) -> GeomResult<()> {
    if p.dim() != q.dim() {
        return Err(GeomError::DimensionMismatch(format!("{what}: {}-D and {}-D", p.dim(), q.dim())));
    }
    Ok(())
}

/// `max { dᵀx : x ∈ P }`.
pub fn support(p: &HPolytope, d: &DVector<f64>) -> GeomResult<f64> {
    if d.len() != p.dim() {
        return Err(GeomError::DimensionMismatch(format!("direction of length {} for a {}-D set", d.len(), p.dim())));
    }
    if p.is_empty() {
        return Err(GeomError::EmptySet);
    }
    if !d.iter().all(|v| v.is_finite()) {
        return Err(GeomError::InvalidInput("non-finite direction".into()));
    }
    if d.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    if let Some(v) = p.cached_vertices() {
        return Ok(v.iter().map(|x| d.dot(x)).fold(f64::NEG_INFINITY, f64::max));
    }
    match solve_lp(d, p.a(), p.b()) {
        Ok(s) => Ok(s.value),
        Err(NumError::Unbounded) => Err(GeomError::Unbounded),
        Err(NumError::Infeasible) => Err(GeomError::EmptySet),
        Err(e) => Err(e.into()),
    }
}

/// Exact `P ⊕ Q` (dimension ≤ 3).
pub fn minkowski_sum(p: &HPolytope, q: &HPolytope) -> GeomResult<HPolytope> {
    same_dim(p, q, "Minkowski sum")?;
    if p.is_empty() || q.is_empty() {
        return Err(GeomError::EmptySet);
    }
    if p.dim() > MAX_EXACT_DIM {
        return Err(GeomError::Unsupported(format!("Minkowski sum in dimension {}", p.dim())));
    }
    let vp = p.vertices()?;
    let vq = q.vertices()?;
    if p.dim() == 2 && (vp.len() > 1 || vq.len() > 1) {
        return sum_polygons(&[p, q]);
    }
    let mut pts = Vec::with_capacity(vp.len() * vq.len());
    for x in vp {
        for y in vq {
            pts.push(x + y);
        }
    }
    HPolytope::from_points(&pts)
}

/// Counter-clockwise order around the centroid, starting at the lowest
/// (then leftmost) vertex.
fn ccw_from_bottom(v: &[DVector<f64>]) -> Vec<&DVector<f64>> {
    let k = v.len() as f64;
    let (cx, cy) = (v.iter().map(|p| p[0]).sum::<f64>() / k, v.iter().map(|p| p[1]).sum::<f64>() / k);
    let mut order: Vec<&DVector<f64>> = v.iter().collect();
    order.sort_by(|a, b| (a[1] - cy).atan2(a[0] - cx).total_cmp(&(b[1] - cy).atan2(b[0] - cx)));
    let start = (0..order.len())
        .min_by(|&i, &j| order[i][1].total_cmp(&order[j][1]).then(order[i][0].total_cmp(&order[j][0])))
        .unwrap_or(0);
    order.rotate_left(start);
    order
}

/// Edge vectors of a closed polygon with their polar angles in `[0, 2π)`,
/// measured so they increase along a convex counter-clockwise walk from the
/// bottom vertex.
fn edges(poly: &[&DVector<f64>]) -> Vec<(f64, DVector<f64>)> {
    let k = poly.len();
    (0..k)
        .map(|i| {
            let e = poly[(i + 1) % k] - poly[i];
            let mut t = e[1].atan2(e[0]);
            if t < 0.0 {
                t += 2.0 * std::f64::consts::PI;
            }
            (t, e)
        })
        .collect()
}

/// Sum of many polygons in one pass: all boundary edges sorted by angle and
/// walked from the sum of the bottom vertices.
fn sum_polygons(sets: &[&HPolytope]) -> GeomResult<HPolytope> {
    let mut start = DVector::zeros(2);
    let mut all: Vec<(f64, DVector<f64>)> = Vec::new();
    for s in sets {
        if s.dim() != 2 {
            return Err(GeomError::DimensionMismatch(format!("Minkowski sum: {}-D and 2-D", s.dim())));
        }
        if s.is_empty() {
            return Err(GeomError::EmptySet);
        }
        let v = s.vertices()?;
        let poly = ccw_from_bottom(v);
        start += poly[0];
        if poly.len() > 1 {
            all.extend(edges(&poly));
        }
    }
    // stable: equal angles keep set order, so the walk is reproducible
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    polygon_from_walk(start, &all)
}

const PARALLEL_TOL: f64 = 1e-12;

/// Polygon traced counter-clockwise from `start` by edges sorted by angle.
/// The walk is convex by construction, so facets come straight from the
/// edges (parallel ones merged); a flat walk goes through the hull instead.
fn polygon_from_walk(start: DVector<f64>, sorted: &[(f64, DVector<f64>)]) -> GeomResult<HPolytope> {
    let scale = sorted.iter().map(|(_, e)| e.amax()).fold(start.amax(), f64::max).max(1.0);
    let mut merged: Vec<(f64, DVector<f64>)> = Vec::with_capacity(sorted.len());
    for (t, e) in sorted {
        if e.amax() <= 1e-14 * scale {
            continue;
        }
        match merged.last_mut() {
            Some((t0, e0)) if t - *t0 <= PARALLEL_TOL => *e0 += e,
            _ => merged.push((*t, e.clone())),
        }
    }
    let mut start = start;
    if merged.len() > 1 && merged[0].0 + 2.0 * std::f64::consts::PI - merged[merged.len() - 1].0 <= PARALLEL_TOL {
        let (_, last) = merged.pop().expect("non-empty");
        start -= &last;
        merged[0].1 += last;
    }
    let mut verts = Vec::with_capacity(merged.len() + 1);
    verts.push(start);
    for (_, e) in &merged {
        let next = verts[verts.len() - 1].clone() + e;
        verts.push(next);
    }
    if merged.len() < 3 {
        return HPolytope::from_points(&verts);
    }
    verts.pop();
    let k = merged.len();
    let mut a = DMatrix::zeros(k, 2);
    let mut b = DVector::zeros(k);
    for (j, (_, e)) in merged.iter().enumerate() {
        let len = e.norm();
        let (nx, ny) = (e[1] / len, -e[0] / len);
        a[(j, 0)] = nx;
        a[(j, 1)] = ny;
        let (p, q) = (&verts[j], &verts[(j + 1) % k]);
        b[j] = (nx * p[0] + ny * p[1]).max(nx * q[0] + ny * q[1]);
    }
    Ok(HPolytope::raw(a, b, false, true).with_vertices(verts))
}

/// `⊕` over a list; the empty sum is `{0}` in dimension `dim`.
pub fn minkowski_sum_all(sets: &[HPolytope], dim: usize) -> GeomResult<HPolytope> {
    if dim == 2 && sets.len() > 1 {
        return sum_polygons(&sets.iter().collect::<Vec<_>>());
    }
    let mut acc = HPolytope::origin(dim);
    for s in sets {
        acc = minkowski_sum(&acc, s)?;
    }
    Ok(acc)
}

/// `P ⊖ Q = {x : x + Q ⊆ P}` by shrinking each row offset of `P` by the
/// support of `Q`. The result is canonical and flagged empty if infeasible.
pub fn pontryagin_diff(p: &HPolytope, q: &HPolytope) -> GeomResult<HPolytope> {
    same_dim(p, q, "Pontryagin difference")?;
    if p.is_empty() {
        return Ok(HPolytope::empty(p.dim()));
    }
    if q.is_empty() {
        return Err(GeomError::EmptySet);
    }
    let mut b = p.b().clone();
    for i in 0..p.num_rows() {
        let a = p.a().row(i).transpose();
        b[i] -= support(q, &a)?;
    }
    HPolytope::raw(p.a().clone(), b, false, false).canonicalize()
}

/// Exact image `M·P` (dimension of the image ≤ 3).
pub fn linear_map(m: &DMatrix<f64>, p: &HPolytope) -> GeomResult<HPolytope> {
    if m.ncols() != p.dim() {
        return Err(GeomError::DimensionMismatch(format!("map {:?} applied to a {}-D set", m.shape(), p.dim())));
    }
    if p.is_empty() {
        return Ok(HPolytope::empty(m.nrows()));
    }
    if m.nrows() > MAX_EXACT_DIM {
        return Err(GeomError::Unsupported(format!("linear image in dimension {}", m.nrows())));
    }
    let pts: Vec<DVector<f64>> = p.vertices()?.iter().map(|v| m * v).collect();
    HPolytope::from_points(&pts)
}

/// Smallest slack `min_i (β_i − h_P(a_i))` over the canonical rows of `Q`.
/// Positive means `P` lies strictly inside `Q`.
pub fn inclusion_margin(p: &HPolytope, q: &HPolytope) -> GeomResult<f64> {
    same_dim(p, q, "inclusion test")?;
    if p.is_empty() {
        return Ok(f64::INFINITY);
    }
    let qc = q.canonicalize()?;
    if qc.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let mut margin = f64::INFINITY;
    for i in 0..qc.num_rows() {
        let a = qc.a().row(i).transpose();
        let h = match support(p, &a) {
            Ok(h) => h,
            Err(GeomError::Unbounded) => return Ok(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        };
        margin = margin.min(qc.b()[i] - h);
    }
    Ok(margin)
}

/// `P ⊆ Q` with every canonical row of `Q` tightened by `margin`.
/// A negative margin loosens the test.
pub fn is_subset(p: &HPolytope, q: &HPolytope, margin: f64) -> GeomResult<bool> {
    same_dim(p, q, "inclusion test")?;
    if p.is_empty() {
        return Ok(true);
    }
    let qc = q.canonicalize()?;
    if qc.is_empty() {
        return Ok(false);
    }
    for i in 0..qc.num_rows() {
        let a = qc.a().row(i).transpose();
        let beta = qc.b()[i];
        let h = match support(p, &a) {
            Ok(h) => h,
            Err(GeomError::Unbounded) => return Ok(false),
            Err(e) => return Err(e),
        };
        if h > beta - margin + 1e-12 * (1.0 + beta.abs()) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn unit_box() -> HPolytope {
        HPolytope::box_set(&dvector![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn support_examples() {
        let p = unit_box();
        assert!((support(&p, &dvector![1.0, 1.0]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(support(&p, &dvector![0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(support(&HPolytope::empty(2), &dvector![1.0, 0.0]).unwrap_err(), GeomError::EmptySet);
        let half = HPolytope::new(dmatrix![1.0, 0.0], dvector![1.0]).unwrap();
        assert_eq!(support(&half, &dvector![0.0, 1.0]).unwrap_err(), GeomError::Unbounded);
    }

    #[test]
    fn box_sums() {
        let s = minkowski_sum(&unit_box(), &unit_box()).unwrap();
        let expect = HPolytope::box_set(&dvector![0.0, 0.0], 2.0).unwrap();
        assert!(is_subset(&s, &expect, -1e-12).unwrap() && is_subset(&expect, &s, -1e-12).unwrap());
        let c = dvector![0.5, -3.0];
        let shifted = minkowski_sum(&HPolytope::box_set(&c, 0.25).unwrap(), &HPolytope::box_set(&dvector![0.0, 0.0], 0.5).unwrap()).unwrap();
        let expect = HPolytope::box_set(&c, 0.75).unwrap();
        assert!(is_subset(&shifted, &expect, -1e-12).unwrap() && is_subset(&expect, &shifted, -1e-12).unwrap());
    }

    #[test]
    fn pontryagin_interval() {
        let p = HPolytope::from_bounds(&[-2.0], &[2.0]).unwrap();
        let q = HPolytope::from_bounds(&[-0.5], &[0.5]).unwrap();
        let d = pontryagin_diff(&p, &q).unwrap();
        assert!((support(&d, &dvector![1.0]).unwrap() - 1.5).abs() < 1e-12);
        assert!((support(&d, &dvector![-1.0]).unwrap() - 1.5).abs() < 1e-12);
        let big = HPolytope::from_bounds(&[-3.0], &[3.0]).unwrap();
        assert!(pontryagin_diff(&p, &big).unwrap().is_empty());
    }

    #[test]
    fn rank_deficient_map() {
        let row = dmatrix![1.0, 2.0];
        let img = linear_map(&row, &unit_box()).unwrap();
        assert_eq!(img.dim(), 1);
        assert!((support(&img, &dvector![1.0]).unwrap() - 3.0).abs() < 1e-12);
        let col = dmatrix![1.0; -1.0];
        let seg = linear_map(&col, &HPolytope::from_bounds(&[-1.0], &[2.0]).unwrap()).unwrap();
        assert!(seg.contains(&dvector![1.0, -1.0], 1e-12));
        assert!(!seg.contains(&dvector![1.0, -0.9], 1e-9));
        assert!((support(&seg, &dvector![1.0, 0.0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn subset_reflexive() {
        let p = unit_box();
        assert!(is_subset(&p, &p, 0.0).unwrap());
        assert!(!is_subset(&p, &p, 1e-3).unwrap());
        assert!(is_subset(&p, &HPolytope::box_set(&dvector![0.0, 0.0], 2.0).unwrap(), 0.5).unwrap());
        assert!((inclusion_margin(&p, &HPolytope::box_set(&dvector![0.0, 0.0], 2.0).unwrap()).unwrap() - 1.0).abs() < 1e-12);
    }
}
