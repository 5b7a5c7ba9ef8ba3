//! Coupled LTI plant, its non-overlapping decomposition into subsystems, and
//! the truck-chain benchmark builder.

mod trucks;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{linear_map, minkowski_sum, minkowski_sum_all, support, GeomError, HPolytope};
use crate::numkernel::{dlqr, NumError};

pub use trucks::{build_four_trucks, build_truck_chain, truck_chain_continuous, Bounds, TruckChainParams};

/// A block is treated as zero when every entry is at most this in magnitude.
pub const ZERO_BLOCK_TOL: f64 = 1e-12;
/// Off-topology blocks above this magnitude are added to the disturbance sets.
pub const RESIDUAL_TOL: f64 = 1e-9;
const INTERIOR_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Numerical(#[from] NumError),
}

pub type ModelResult<T> = Result<T, ModelError>;

/// Pair `(A_ij, B_ij)` through which subsystem `j` drives subsystem `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Coupling {
    pub fn magnitude(&self) -> f64 {
        self.a.amax().max(self.b.amax())
    }
}

#[derive(Debug, Clone)]
pub struct SubsystemModel {
    pub index: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Dynamic neighbours `N_i` and their coupling blocks.
    pub couplings: BTreeMap<usize, Coupling>,
    /// Nonzero blocks outside the declared topology (e.g. discretization
    /// fill-in). Part of the true plant, never broadcast over.
    pub residual: BTreeMap<usize, Coupling>,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
}

impl SubsystemModel {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn neighbors(&self) -> impl Iterator<Item = usize> + '_ {
        self.couplings.keys().copied()
    }

    /// Residual blocks large enough to be treated as disturbance.
    pub fn significant_residual(&self) -> impl Iterator<Item = (usize, &Coupling)> + '_ {
        self.residual.iter().filter(|(_, c)| c.magnitude() > RESIDUAL_TOL).map(|(j, c)| (*j, c))
    }
}

#[derive(Debug, Clone)]
pub struct CoupledSystem {
    pub subsystems: Vec<SubsystemModel>,
    pub state_offsets: Vec<usize>,
    pub input_offsets: Vec<usize>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

fn block(m: &DMatrix<f64>, r0: usize, r1: usize, c0: usize, c1: usize) -> DMatrix<f64> {
    m.view((r0, c0), (r1 - r0, c1 - c0)).into_owned()
}

/// Splits `(A, B)` into subsystems. A block pair enters `N_i` when any entry
/// exceeds [`ZERO_BLOCK_TOL`]; with `topology` given, only the listed
/// neighbours are couplings. Every other block with a nonzero entry is kept
/// as residual so that reassembly is exact.
pub fn decompose(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    state_sizes: &[usize],
    input_sizes: &[usize],
    constraints: Vec<(HPolytope, HPolytope)>,
    topology: Option<&[Vec<usize>]>,
) -> ModelResult<CoupledSystem> {
    let m = state_sizes.len();
    let (n, nu) = (state_sizes.iter().sum::<usize>(), input_sizes.iter().sum::<usize>());
    if m == 0 || input_sizes.len() != m || constraints.len() != m {
        return Err(ModelError::SizeMismatch(format!(
            "{} state blocks, {} input blocks, {} constraint pairs",
            m,
            input_sizes.len(),
            constraints.len()
        )));
    }
    if a.shape() != (n, n) || b.shape() != (n, nu) {
        return Err(ModelError::SizeMismatch(format!("A {:?}, B {:?} for sizes {n}/{nu}", a.shape(), b.shape())));
    }
    if state_sizes.contains(&0) {
        return Err(ModelError::SizeMismatch("empty state block".into()));
    }
    if let Some(t) = topology {
        if t.len() != m || t.iter().enumerate().any(|(i, nb)| nb.iter().any(|&j| j >= m || j == i)) {
            return Err(ModelError::SizeMismatch("topology does not match the partition".into()));
        }
    }
    let so = offsets(state_sizes);
    let io = offsets(input_sizes);
    let mut subsystems = Vec::with_capacity(m);
    for (i, (x_set, u_set)) in constraints.into_iter().enumerate() {
        if x_set.dim() != state_sizes[i] || u_set.dim() != input_sizes[i] {
            return Err(ModelError::SizeMismatch(format!("constraint sets of subsystem {} have wrong dimension", i + 1)));
        }
        let mut couplings = BTreeMap::new();
        let mut residual = BTreeMap::new();
        for j in 0..m {
            if j == i {
                continue;
            }
            let c = Coupling {
                a: block(a, so[i], so[i + 1], so[j], so[j + 1]),
                b: block(b, so[i], so[i + 1], io[j], io[j + 1]),
            };
            let nonzero = c.magnitude() > ZERO_BLOCK_TOL;
            let listed = topology.map_or(nonzero, |t| t[i].contains(&j));
            if listed {
                couplings.insert(j, c);
            } else if c.magnitude() > 0.0 {
                // kept so that reassembly is exact
                residual.insert(j, c);
            }
        }
        subsystems.push(SubsystemModel {
            index: i,
            a: block(a, so[i], so[i + 1], so[i], so[i + 1]),
            b: block(b, so[i], so[i + 1], io[i], io[i + 1]),
            couplings,
            residual,
            x_set,
            u_set,
        });
    }
    Ok(CoupledSystem { subsystems, state_offsets: so, input_offsets: io, a: a.clone(), b: b.clone() })
}

impl CoupledSystem {
    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn nx(&self) -> usize {
        *self.state_offsets.last().unwrap_or(&0)
    }

    pub fn nu(&self) -> usize {
        *self.input_offsets.last().unwrap_or(&0)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Reassembles the global pair from the stored blocks.
    pub fn assemble(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut a = DMatrix::zeros(self.nx(), self.nx());
        let mut b = DMatrix::zeros(self.nx(), self.nu());
        let so = &self.state_offsets;
        let io = &self.input_offsets;
        for s in &self.subsystems {
            let i = s.index;
            a.view_mut((so[i], so[i]), (s.nx(), s.nx())).copy_from(&s.a);
            b.view_mut((so[i], io[i]), (s.nx(), s.nu())).copy_from(&s.b);
            for (j, c) in s.couplings.iter().chain(s.residual.iter()) {
                a.view_mut((so[i], so[*j]), c.a.shape()).copy_from(&c.a);
                b.view_mut((so[i], io[*j]), c.b.shape()).copy_from(&c.b);
            }
        }
        (a, b)
    }

    pub fn local_state(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows(self.state_offsets[i], self.state_offsets[i + 1] - self.state_offsets[i]).into_owned()
    }

    pub fn local_input(&self, u: &DVector<f64>, i: usize) -> DVector<f64> {
        u.rows(self.input_offsets[i], self.input_offsets[i + 1] - self.input_offsets[i]).into_owned()
    }

    /// Checks the local and global standing assumptions: stabilizable pairs,
    /// compact constraint sets with the origin strictly inside, nonzero
    /// coupling blocks and a consistent neighbour relation.
    pub fn validate(&self) -> ModelResult<()> {
        for s in &self.subsystems {
            let id = s.index + 1;
            let q = DMatrix::identity(s.nx(), s.nx());
            let r = DMatrix::identity(s.nu(), s.nu());
            dlqr(&s.a, &s.b, &q, &r).map_err(|e| ModelError::Assumption(format!("(A_{id}{id}, B_{id}{id}) not stabilizable: {e}")))?;
            for (name, set) in [("X", &s.x_set), ("U", &s.u_set)] {
                check_compact_with_origin(set).map_err(|why| ModelError::Assumption(format!("{name}_{id} {why}")))?;
            }
            for (j, c) in &s.couplings {
                if c.magnitude() <= ZERO_BLOCK_TOL {
                    return Err(ModelError::Assumption(format!("coupling ({id},{}) is zero", j + 1)));
                }
            }
        }
        let (a, b) = self.assemble();
        if a != self.a || b != self.b {
            return Err(ModelError::Assumption("block assembly does not reproduce (A, B)".into()));
        }
        let q = DMatrix::identity(self.nx(), self.nx());
        let r = DMatrix::identity(self.nu(), self.nu());
        dlqr(&self.a, &self.b, &q, &r).map_err(|e| ModelError::Assumption(format!("global (A, B) not stabilizable: {e}")))?;
        Ok(())
    }
}

fn check_compact_with_origin(set: &HPolytope) -> Result<(), String> {
    if set.is_empty() {
        return Err("is empty".into());
    }
    let c = set.canonicalize().map_err(|e| e.to_string())?;
    if c.b().min() <= INTERIOR_MARGIN {
        return Err("does not contain the origin in its interior".into());
    }
    for j in 0..c.dim() {
        for s in [1.0, -1.0] {
            let mut d = DVector::zeros(c.dim());
            d[j] = s;
            match support(&c, &d) {
                Ok(_) => {}
                Err(GeomError::Unbounded) => return Err("is unbounded".into()),
                Err(e) => return Err(e.to_string()),
            }
        }
    }
    Ok(())
}

/// Image `A_ij S_j ⊕ B_ij T_j` of a pair of neighbour sets.
pub(crate) fn coupling_image(c: &Coupling, states: &HPolytope, inputs: &HPolytope) -> ModelResult<HPolytope> {
    Ok(minkowski_sum(&linear_map(&c.a, states)?, &linear_map(&c.b, inputs)?)?)
}

/// `W_i = ⊕_{j ∈ N_i} (A_ij X_j ⊕ B_ij U_j)`, plus the significant residual
/// blocks. The empty sum is `{0}`.
pub fn coupling_disturbance_set(sys: &CoupledSystem, i: usize) -> ModelResult<HPolytope> {
    let s = sys.subsystems.get(i).ok_or_else(|| ModelError::SizeMismatch(format!("no subsystem {}", i + 1)))?;
    let mut parts = Vec::new();
    for (j, c) in s.couplings.iter().map(|(j, c)| (*j, c)).chain(s.significant_residual()) {
        let nb = &sys.subsystems[j];
        parts.push(coupling_image(c, &nb.x_set, &nb.u_set)?);
    }
    Ok(minkowski_sum_all(&parts, s.nx())?)
}

/// `x⁺ = A x + B u` on the full global model.
pub fn step_true_plant(sys: &CoupledSystem, x: &DVector<f64>, u: &DVector<f64>) -> ModelResult<DVector<f64>> {
    if x.len() != sys.nx() || u.len() != sys.nu() {
        return Err(ModelError::SizeMismatch(format!("state {} / input {} for a {}/{} plant", x.len(), u.len(), sys.nx(), sys.nu())));
    }
    Ok(&sys.a * x + &sys.b * u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn boxes(n: usize, m: usize) -> (HPolytope, HPolytope) {
        (HPolytope::box_set(&DVector::zeros(n), 1.0).unwrap(), HPolytope::box_set(&DVector::zeros(m), 1.0).unwrap())
    }

    #[test]
    fn block_diagonal_has_no_neighbors() {
        let a = dmatrix![0.5, 0.0; 0.0, 0.9];
        let b = dmatrix![1.0, 0.0; 0.0, 1.0];
        let sys = decompose(&a, &b, &[1, 1], &[1, 1], vec![boxes(1, 1), boxes(1, 1)], None).unwrap();
        assert!(sys.subsystems.iter().all(|s| s.couplings.is_empty()));
        let w = coupling_disturbance_set(&sys, 0).unwrap();
        assert!(w.contains(&DVector::zeros(1), 0.0));
        assert!(support(&w, &DVector::from_element(1, 1.0)).unwrap().abs() < 1e-15);
        sys.validate().unwrap();
    }

    #[test]
    fn threshold_and_topology() {
        let a = dmatrix![0.5, 1e-13, 2e-6; 0.1, 0.4, 0.0; 0.0, 0.3, 0.2];
        let b = DMatrix::identity(3, 3);
        let sys = decompose(&a, &b, &[1, 1, 1], &[1, 1, 1], vec![boxes(1, 1), boxes(1, 1), boxes(1, 1)], None).unwrap();
        assert_eq!(sys.subsystems[0].neighbors().collect::<Vec<_>>(), vec![2]);
        let topo = vec![vec![], vec![0], vec![1]];
        let sys = decompose(&a, &b, &[1, 1, 1], &[1, 1, 1], vec![boxes(1, 1), boxes(1, 1), boxes(1, 1)], Some(&topo)).unwrap();
        assert!(sys.subsystems[0].couplings.is_empty());
        assert_eq!(sys.subsystems[0].residual.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(sys.subsystems[0].significant_residual().count(), 1);
        let (ra, rb) = sys.assemble();
        assert_eq!(ra, a);
        assert_eq!(rb, b);
    }

    #[test]
    fn rejects_bad_sizes() {
        let a = DMatrix::identity(3, 3);
        let b = DMatrix::identity(3, 1);
        let err = decompose(&a, &b, &[1, 1], &[1, 0], vec![boxes(1, 1), boxes(1, 1)], None).unwrap_err();
        assert!(matches!(err, ModelError::SizeMismatch(_)));
    }
}
