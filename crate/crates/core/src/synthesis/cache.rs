//! Plain-text design cache. Sets use the polytope block format, matrices a
//! `rows cols` header and row-major values, scalars one `name value` line;
//! the validation report closes the file.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{SubsystemDesign, TubeDesign, ValidationReport};
use crate::geometry::HPolytope;

const MAGIC: &str = "chaintube-design 1";

#[derive(Debug, Clone, PartialEq, Error)]
#[error("design cache: {0}")]
pub struct CacheError(pub String);

/// Hex SHA-256 of the concatenated parts, each prefixed by its length so that
/// different splits never collide.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn write_set(out: &mut String, name: &str, p: &HPolytope) {
    let _ = writeln!(out, "set {name}{}", if p.is_empty() { " empty" } else { "" });
    out.push_str(&p.to_text());
}

impl TubeDesign {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "subsystems {}", self.len());
        let _ = writeln!(out, "eps {:e}", self.eps);
        let _ = writeln!(out, "inner_scale {:e}", self.inner_scale);
        for s in &self.subsystems {
            let _ = writeln!(out, "subsystem {}", s.index + 1);
            for (name, m) in [("k_t", &s.k_t), ("k_hat", &s.k_hat), ("q", &s.q), ("r", &s.r), ("p", &s.p)] {
                write_matrix(&mut out, name, m);
            }
            for (name, p) in s.sets() {
                write_set(&mut out, name, p);
            }
            let _ = writeln!(out, "delta {:e}", s.delta);
        }
        let _ = writeln!(out, "report {}", self.report.checks.len());
        out.push_str(&self.report.to_text());
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CacheError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| CacheError(format!("truncated before {what}")));
        if next("header")? != MAGIC {
            return Err(CacheError("not a design cache file".into()));
        }
        let count: usize = keyed(next("subsystem count")?, "subsystems")?;
        let eps: f64 = keyed(next("eps")?, "eps")?;
        let inner_scale: f64 = keyed(next("inner_scale")?, "inner_scale")?;
        drop(next);
        let mut rest: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).skip(4).collect();
        rest.reverse();
        let mut subsystems = Vec::with_capacity(count);
        for i in 0..count {
            let idx: usize = keyed(pop(&mut rest, "subsystem")?, "subsystem")?;
            if idx != i + 1 {
                return Err(CacheError(format!("expected subsystem {}, found {idx}", i + 1)));
            }
            let k_t = read_matrix(&mut rest, "k_t")?;
            let k_hat = read_matrix(&mut rest, "k_hat")?;
            let q = read_matrix(&mut rest, "q")?;
            let r = read_matrix(&mut rest, "r")?;
            let p = read_matrix(&mut rest, "p")?;
            let mut sets = Vec::with_capacity(SET_NAMES.len());
            for name in SET_NAMES {
                sets.push(read_set(&mut rest, name)?);
            }
            let delta: f64 = keyed(pop(&mut rest, "delta")?, "delta")?;
            let mut it = sets.into_iter();
            let mut take = || it.next().expect("one set per name");
            subsystems.push(SubsystemDesign {
                index: i,
                k_t,
                k_hat,
                w: take(),
                z: take(),
                l: take(),
                v: take(),
                s: take(),
                h: take(),
                d: take(),
                x_hat: take(),
                u_hat: take(),
                x_hathat: take(),
                u_hathat: take(),
                xf_hat: take(),
                xf_hathat: take(),
                q,
                r,
                p,
                delta,
            });
        }
        let n: usize = keyed(pop(&mut rest, "report")?, "report")?;
        rest.reverse();
        if rest.len() != n {
            return Err(CacheError(format!("report announces {n} checks, found {}", rest.len())));
        }
        let report = ValidationReport::from_text(&rest.join("\n")).map_err(CacheError)?;
        Ok(TubeDesign { subsystems, eps, inner_scale, report })
    }
}

const SET_NAMES: [&str; 13] =
    ["w", "z", "l", "v", "s", "h", "d", "x_hat", "u_hat", "x_hathat", "u_hathat", "xf_hat", "xf_hathat"];

impl SubsystemDesign {
    /// Every set with its cache name, in file order.
    pub fn sets(&self) -> [(&'static str, &HPolytope); 13] {
        [
            ("w", &self.w),
            ("z", &self.z),
            ("l", &self.l),
            ("v", &self.v),
            ("s", &self.s),
            ("h", &self.h),
            ("d", &self.d),
            ("x_hat", &self.x_hat),
            ("u_hat", &self.u_hat),
            ("x_hathat", &self.x_hathat),
            ("u_hathat", &self.u_hathat),
            ("xf_hat", &self.xf_hat),
            ("xf_hathat", &self.xf_hathat),
        ]
    }
}

fn pop<'a>(rest: &mut Vec<&'a str>, what: &str) -> Result<&'a str, CacheError> {
    rest.pop().ok_or_else(|| CacheError(format!("truncated before {what}")))
}

fn keyed<T: std::str::FromStr>(line: &str, key: &str) -> Result<T, CacheError>
where
    T::Err: std::fmt::Display,
{
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(CacheError(format!("expected '{key}', found '{line}'")));
    }
    let v = it.next().ok_or_else(|| CacheError(format!("missing value for '{key}'")))?;
    if it.next().is_some() {
        return Err(CacheError(format!("trailing data after '{key}'")));
    }
    v.parse().map_err(|e| CacheError(format!("bad value for '{key}': {e}")))
}

fn read_matrix(rest: &mut Vec<&str>, name: &str) -> Result<DMatrix<f64>, CacheError> {
    let header = pop(rest, name)?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "matrix" || toks[1] != name {
        return Err(CacheError(format!("expected matrix {name}, found '{header}'")));
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|e| CacheError(format!("bad matrix size '{t}': {e}")));
    let (r, c) = (parse(toks[2])?, parse(toks[3])?);
    let mut m = DMatrix::zeros(r, c);
    for i in 0..r {
        let line = pop(rest, name)?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| CacheError(format!("bad number '{t}': {e}"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != c {
            return Err(CacheError(format!("matrix {name} row {i} has {} values, expected {c}", vals.len())));
        }
        for (j, v) in vals.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn read_set(rest: &mut Vec<&str>, name: &str) -> Result<HPolytope, CacheError> {
    let header = pop(rest, name)?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let empty = match toks.as_slice() {
        ["set", n] if *n == name => false,
        ["set", n, "empty"] if *n == name => true,
        _ => return Err(CacheError(format!("expected set {name}, found '{header}'"))),
    };
    let rows: usize = {
        let dims = rest.last().ok_or_else(|| CacheError(format!("truncated set {name}")))?;
        dims.split_whitespace().nth(1).and_then(|t| t.parse().ok()).ok_or_else(|| CacheError(format!("bad header of set {name}")))?
    };
    let block: Vec<&str> = (0..=rows).map(|_| pop(rest, name)).collect::<Result<_, _>>()?;
    let p = HPolytope::from_text(&block.join("\n")).map_err(|e| CacheError(format!("set {name}: {e}")))?;
    if p.is_empty() != empty {
        return Err(CacheError(format!("set {name}: emptiness flag does not match its rows")));
    }
    Ok(p)
}
