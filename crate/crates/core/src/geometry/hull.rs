//! Conversions between vertex and half-space descriptions for dimensions ≤ 3.

use nalgebra::{DMatrix, DVector, Matrix3, RowDVector, Vector3};

use super::{GeomError, GeomResult, HPolytope, MAX_EXACT_DIM};
use crate::numkernel::{solve_lp, NumError};

fn scale_of(points: &[DVector<f64>]) -> f64 {
    points.iter().map(|p| p.amax()).fold(0.0, f64::max).max(1.0)
}

/// Convex hull of a point cloud as a canonical H-polytope.
///
/// The points are first reduced to their affine hull; missing directions are
/// encoded as thin slabs bounded by the extreme projections.
pub(crate) fn hull(points: &[DVector<f64>]) -> GeomResult<HPolytope> {
    let first = points.first().ok_or(GeomError::EmptySet)?;
    let n = first.len();
    if n == 0 {
        return Err(GeomError::InvalidInput("zero-dimensional points".into()));
    }
    if n > MAX_EXACT_DIM {
        return Err(GeomError::Unsupported(format!("convex hull in dimension {n}")));
    }
    if points.iter().any(|p| p.len() != n) {
        return Err(GeomError::DimensionMismatch("points of mixed dimension".into()));
    }
    if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(GeomError::InvalidInput("non-finite point".into()));
    }
    let scale = scale_of(points);
    let dedup_tol = 1e-12 * scale;
    let pts = dedup(points, dedup_tol);

    let k = pts.len();
    let centroid = pts.iter().fold(DVector::zeros(n), |acc, p| acc + p) / k as f64;
    let mut dev = DMatrix::zeros(k, n);
    for (r, p) in pts.iter().enumerate() {
        dev.set_row(r, &(p - &centroid).transpose());
    }
    let svd = dev.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let rank_tol = 1e-10 * scale * (k as f64).sqrt();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > rank_tol).count();
    // orthonormal basis of R^n: first `rank` rows span the affine hull
    let mut basis: Vec<RowDVector<f64>> = order.iter().map(|&i| vt.row(i).into_owned()).collect();
    complete_basis(&mut basis, n);

    let mut rows: Vec<(RowDVector<f64>, f64)> = Vec::new();
    for dir in &basis[rank..] {
        let proj: Vec<f64> = pts.iter().map(|p| (dir * p)[0]).collect();
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push((dir.clone(), hi));
        rows.push((-dir, -lo));
    }

    let reduced: Vec<DVector<f64>> = pts
        .iter()
        .map(|p| DVector::from_iterator(rank, basis[..rank].iter().map(|d| (d * (p - &centroid))[0])))
        .collect();
    let (facets, extreme): (Vec<RowDVector<f64>>, Vec<usize>) = match rank {
        0 => (Vec::new(), vec![0]),
        1 => hull_1d(&reduced),
        2 => hull_2d(&reduced),
        _ => hull_3d(&reduced, scale),
    };
    for g in facets {
        // lift g·y ≤ h back to x: y = Bᵀ(x − c)
        let mut a = RowDVector::zeros(n);
        for (gi, d) in g.iter().zip(&basis[..rank]) {
            a += d * *gi;
        }
        let norm = a.norm();
        let a = a / norm;
        let offset = pts.iter().map(|p| (&a * p)[0]).fold(f64::NEG_INFINITY, f64::max);
        rows.push((a, offset));
    }

    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (i, (r, o)) in rows.into_iter().enumerate() {
        a.set_row(i, &r);
        b[i] = o;
    }
    // facets of a hull are irredundant by construction
    let out = HPolytope::raw(a, b, false, true);
    if rank == 3 {
        return Ok(out);
    }
    let verts = extreme.into_iter().map(|i| pts[i].clone()).collect();
    Ok(out.with_vertices(verts))
}

/// Drops points within `tol` (∞-norm) of an earlier kept point. Sweeps in
/// first-coordinate order so only a narrow window is compared; the kept
/// points keep their input order.
fn dedup(points: &[DVector<f64>], tol: f64) -> Vec<DVector<f64>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&x, &y| points[x][0].total_cmp(&points[y][0]).then(x.cmp(&y)));
    let mut keep = vec![false; points.len()];
    let mut window: Vec<usize> = Vec::new();
    for &i in &order {
        let p = &points[i];
        window.retain(|&j| points[j][0] >= p[0] - tol);
        let dup = window.iter().any(|&j| points[j].iter().zip(p.iter()).all(|(a, b)| (a - b).abs() <= tol));
        if !dup {
            keep[i] = true;
            window.push(i);
        }
    }
    points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p.clone()).collect()
}

/// Extends an orthonormal list of row vectors to a basis of R^n.
fn complete_basis(basis: &mut Vec<RowDVector<f64>>, n: usize) {
    basis.truncate(n);
    for e in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = RowDVector::zeros(n);
        v[e] = 1.0;
        for d in basis.iter() {
            let c = (d * v.transpose())[0];
            v -= d * c;
        }
        let nv = v.norm();
        if nv > 1e-6 {
            basis.push(v / nv);
        }
    }
}

fn hull_1d(pts: &[DVector<f64>]) -> (Vec<RowDVector<f64>>, Vec<usize>) {
    let (mut lo, mut hi) = (0, 0);
    for (i, p) in pts.iter().enumerate() {
        if p[0] < pts[lo][0] {
            lo = i;
        }
        if p[0] > pts[hi][0] {
            hi = i;
        }
    }
    let facets = vec![RowDVector::from_element(1, 1.0), RowDVector::from_element(1, -1.0)];
    (facets, vec![lo, hi])
}

fn cross(o: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Whether `o → a → b` fails to turn left by more than a relative angle of
/// about 1e-12 radians.
fn not_left_turn(o: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> bool {
    let lengths = (a - o).norm() * (b - o).norm();
    cross(o, a, b) <= SINE_TOL * lengths
}

const SINE_TOL: f64 = 1e-12;

/// Andrew's monotone chain; returns outward edge normals and the
/// counter-clockwise hull vertex indices.
fn hull_2d(pts: &[DVector<f64>]) -> (Vec<RowDVector<f64>>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&i, &j| pts[i][0].total_cmp(&pts[j][0]).then(pts[i][1].total_cmp(&pts[j][1])));
    let mut chain: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = chain.len();
        let seq: Box<dyn Iterator<Item = &usize>> = if pass == 0 { Box::new(idx.iter()) } else { Box::new(idx.iter().rev()) };
        for &i in seq {
            while chain.len() >= start + 2 && not_left_turn(&pts[chain[chain.len() - 2]], &pts[chain[chain.len() - 1]], &pts[i]) {
                chain.pop();
            }
            chain.push(i);
        }
        chain.pop();
    }
    if chain.len() < 3 {
        // numerically flat: bounding box in the reduced coordinates
        let (_, e) = hull_1d(&pts.iter().map(|p| DVector::from_element(1, p[0])).collect::<Vec<_>>());
        let axes = vec![
            RowDVector::from_row_slice(&[1.0, 0.0]),
            RowDVector::from_row_slice(&[-1.0, 0.0]),
            RowDVector::from_row_slice(&[0.0, 1.0]),
            RowDVector::from_row_slice(&[0.0, -1.0]),
        ];
        return (axes, e);
    }
    let mut facets = Vec::with_capacity(chain.len());
    for w in 0..chain.len() {
        let p = &pts[chain[w]];
        let q = &pts[chain[(w + 1) % chain.len()]];
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let len = (dx * dx + dy * dy).sqrt();
        facets.push(RowDVector::from_row_slice(&[dy / len, -dx / len]));
    }
    (facets, chain)
}

/// Brute-force facet search over point triples.
fn hull_3d(pts: &[DVector<f64>], scale: f64) -> (Vec<RowDVector<f64>>, Vec<usize>) {
    let v: Vec<Vector3<f64>> = pts.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
    let tol = 1e-11 * scale;
    let mut facets: Vec<Vector3<f64>> = Vec::new();
    let k = v.len();
    for i in 0..k {
        for j in (i + 1)..k {
            for l in (j + 1)..k {
                let nrm = (v[j] - v[i]).cross(&(v[l] - v[i]));
                let len = nrm.norm();
                if len <= 1e-12 * scale * scale {
                    continue;
                }
                let nrm = nrm / len;
                let h = nrm.dot(&v[i]);
                let (mut above, mut below) = (false, false);
                for p in &v {
                    let s = nrm.dot(p) - h;
                    above |= s > tol;
                    below |= s < -tol;
                    if above && below {
                        break;
                    }
                }
                let outward = match (above, below) {
                    (false, _) => nrm,
                    (true, false) => -nrm,
                    (true, true) => continue,
                };
                if !facets.iter().any(|f| (f - outward).amax() <= 1e-9) {
                    facets.push(outward);
                }
            }
        }
    }
    let rows = facets.into_iter().map(|f| RowDVector::from_row_slice(f.as_slice())).collect();
    (rows, Vec::new())
}

/// Vertices of a bounded `{x : A x ≤ b}` with dimension ≤ 3.
pub(crate) fn enumerate_vertices(a: &DMatrix<f64>, b: &DVector<f64>) -> GeomResult<Vec<DVector<f64>>> {
    let n = a.ncols();
    if n > MAX_EXACT_DIM {
        return Err(GeomError::Unsupported(format!("vertex enumeration in dimension {n}")));
    }
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        hi[j] = axis_support(a, b, &e)?;
        e[j] = -1.0;
        lo[j] = -axis_support(a, b, &e)?;
    }
    let scale = hi.amax().max(lo.amax()).max(1.0);
    let tol = 1e-10 * scale;
    let raw = match n {
        1 => vec![lo.clone(), hi.clone()],
        2 => clip_polygon(a, b, &lo, &hi),
        _ => triple_vertices(a, b, tol),
    };
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(raw.len());
    for p in raw {
        if !out.iter().any(|q| (q - &p).amax() <= tol) {
            out.push(p);
        }
    }
    if n == 2 && out.len() >= 3 {
        out = strip_collinear(out);
    }
    if out.is_empty() {
        return Err(GeomError::EmptySet);
    }
    Ok(out)
}

fn axis_support(a: &DMatrix<f64>, b: &DVector<f64>, d: &DVector<f64>) -> GeomResult<f64> {
    match solve_lp(d, a, b) {
        Ok(s) => Ok(s.value),
        Err(NumError::Unbounded) => Err(GeomError::Unbounded),
        Err(NumError::Infeasible) => Err(GeomError::EmptySet),
        Err(e) => Err(e.into()),
    }
}

/// Sutherland–Hodgman clipping of the bounding box by every half-plane.
fn clip_polygon(a: &DMatrix<f64>, b: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut poly = vec![
        DVector::from_row_slice(&[lo[0], lo[1]]),
        DVector::from_row_slice(&[hi[0], lo[1]]),
        DVector::from_row_slice(&[hi[0], hi[1]]),
        DVector::from_row_slice(&[lo[0], hi[1]]),
    ];
    for i in 0..a.nrows() {
        let (ax, ay, bi) = (a[(i, 0)], a[(i, 1)], b[i]);
        if ax == 0.0 && ay == 0.0 {
            continue;
        }
        let f = |p: &DVector<f64>| ax * p[0] + ay * p[1] - bi;
        let mut next = Vec::with_capacity(poly.len() + 1);
        for k in 0..poly.len() {
            let p = &poly[k];
            let q = &poly[(k + 1) % poly.len()];
            let (fp, fq) = (f(p), f(q));
            if fp <= 0.0 {
                next.push(p.clone());
            }
            if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
                let t = fp / (fp - fq);
                next.push(p + (q - p) * t);
            }
        }
        if next.is_empty() {
            // numerically touching: keep the closest point of the previous polygon
            let best = poly.iter().min_by(|p, q| f(p).total_cmp(&f(q))).cloned();
            return best.into_iter().collect();
        }
        poly = next;
    }
    poly
}

fn strip_collinear(poly: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let k = poly.len();
    let keep: Vec<bool> = (0..k)
        .map(|i| {
            let prev = &poly[(i + k - 1) % k];
            let next = &poly[(i + 1) % k];
            let lengths = (&poly[i] - prev).norm() * (next - prev).norm();
            cross(prev, &poly[i], next).abs() > SINE_TOL * lengths
        })
        .collect();
    let out: Vec<DVector<f64>> = poly.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p.clone()).collect();
    if out.len() >= 2 {
        out
    } else {
        poly
    }
}

fn triple_vertices(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Vec<DVector<f64>> {
    let m = a.nrows();
    let mut out = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            for l in (j + 1)..m {
                let mat = Matrix3::from_rows(&[
                    a.row(i).fixed_columns::<3>(0).into_owned(),
                    a.row(j).fixed_columns::<3>(0).into_owned(),
                    a.row(l).fixed_columns::<3>(0).into_owned(),
                ]);
                if mat.determinant().abs() < 1e-10 {
                    continue;
                }
                let Some(x) = mat.lu().solve(&Vector3::new(b[i], b[j], b[l])) else { continue };
                let x = DVector::from_row_slice(x.as_slice());
                if (a * &x - b).max() <= tol {
                    out.push(x);
                }
            }
        }
    }
    out
}
