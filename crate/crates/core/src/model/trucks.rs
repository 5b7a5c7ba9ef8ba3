use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{decompose, CoupledSystem, ModelError, ModelResult};
use crate::geometry::HPolytope;
use crate::numkernel::zoh_discretize;

/// A bound shared by every truck or given per truck.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bounds {
    Uniform(f64),
    PerTruck(Vec<f64>),
}

impl Bounds {
    fn get(&self, i: usize) -> f64 {
        match self {
            Bounds::Uniform(v) => *v,
            Bounds::PerTruck(v) => v[i],
        }
    }

    fn check(&self, name: &str, count: usize) -> ModelResult<()> {
        let ok = match self {
            Bounds::Uniform(v) => v.is_finite() && *v > 0.0,
            Bounds::PerTruck(v) => v.len() == count && v.iter().all(|x| x.is_finite() && *x > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(format!("{name} must be positive (one value or one per truck)")))
        }
    }
}

/// Mass-spring-damper chain. Each truck has state (position, velocity)
/// relative to equilibrium and a horizontal force input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruckChainParams {
    /// Sampling time in seconds.
    pub ts: f64,
    pub masses: Vec<f64>,
    /// Spring constant between truck `i` and `i + 1`.
    pub springs: Vec<f64>,
    /// Damper coefficient between truck `i` and `i + 1`.
    pub dampers: Vec<f64>,
    pub position_bound: Bounds,
    pub velocity_bound: Bounds,
    pub force_bound: Bounds,
}

impl Default for TruckChainParams {
    fn default() -> Self {
        Self {
            ts: 0.1,
            masses: vec![3.0, 2.0, 3.0, 6.0],
            springs: vec![7.5, 0.75, 1.0],
            dampers: vec![4.0, 0.25, 0.3],
            position_bound: Bounds::Uniform(2.0),
            velocity_bound: Bounds::Uniform(8.0),
            force_bound: Bounds::Uniform(4.0),
        }
    }
}

impl TruckChainParams {
    pub fn trucks(&self) -> usize {
        self.masses.len()
    }

    pub fn validate(&self) -> ModelResult<()> {
        let n = self.masses.len();
        if n == 0 {
            return Err(ModelError::InvalidParameter("at least one truck is required".into()));
        }
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return Err(ModelError::InvalidParameter(format!("sampling time must be positive, got {}", self.ts)));
        }
        if let Some(m) = self.masses.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("masses must be positive, got {m}")));
        }
        if self.springs.len() + 1 != n || self.dampers.len() + 1 != n {
            return Err(ModelError::InvalidParameter(format!(
                "{n} trucks need {} springs and dampers, got {} and {}",
                n - 1,
                self.springs.len(),
                self.dampers.len()
            )));
        }
        if self.springs.iter().chain(&self.dampers).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(ModelError::InvalidParameter("spring and damper coefficients must be non-negative".into()));
        }
        self.position_bound.check("position_bound", n)?;
        self.velocity_bound.check("velocity_bound", n)?;
        self.force_bound.check("force_bound", n)?;
        Ok(())
    }
}

/// Continuous-time `(A_c, B_c)` of the chain, states ordered
/// `(p_1, v_1, p_2, v_2, …)`.
pub fn truck_chain_continuous(p: &TruckChainParams) -> ModelResult<(DMatrix<f64>, DMatrix<f64>)> {
    p.validate()?;
    let n = p.trucks();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        let (pi, vi) = (2 * i, 2 * i + 1);
        a[(pi, vi)] = 1.0;
        b[(vi, i)] = 1.0 / p.masses[i];
        for (j, link) in [(i.wrapping_sub(1), i.wrapping_sub(1)), (i + 1, i)] {
            if j >= n {
                continue;
            }
            let (k, c) = (p.springs[link], p.dampers[link]);
            let m = p.masses[i];
            a[(vi, pi)] -= k / m;
            a[(vi, vi)] -= c / m;
            a[(vi, 2 * j)] += k / m;
            a[(vi, 2 * j + 1)] += c / m;
        }
    }
    Ok((a, b))
}

/// Discretized chain decomposed per truck with the nearest-neighbour
/// topology; discretization fill-in beyond it is kept as residual coupling.
pub fn build_truck_chain(p: &TruckChainParams) -> ModelResult<CoupledSystem> {
    let (ac, bc) = truck_chain_continuous(p)?;
    let (a, b) = zoh_discretize(&ac, &bc, p.ts)?;
    let n = p.trucks();
    let mut constraints = Vec::with_capacity(n);
    for i in 0..n {
        let (pb, vb, fb) = (p.position_bound.get(i), p.velocity_bound.get(i), p.force_bound.get(i));
        constraints.push((HPolytope::from_bounds(&[-pb, -vb], &[pb, vb])?, HPolytope::from_bounds(&[-fb], &[fb])?));
    }
    let topology: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut nb = Vec::new();
            if i > 0 && (p.springs[i - 1] != 0.0 || p.dampers[i - 1] != 0.0) {
                nb.push(i - 1);
            }
            if i + 1 < n && (p.springs[i] != 0.0 || p.dampers[i] != 0.0) {
                nb.push(i + 1);
            }
            nb
        })
        .collect();
    decompose(&a, &b, &vec![2; n], &vec![1; n], constraints, Some(&topology))
}

/// The four-truck benchmark at sampling time `ts`.
pub fn build_four_trucks(ts: f64) -> ModelResult<CoupledSystem> {
    build_truck_chain(&TruckChainParams { ts, ..TruckChainParams::default() })
}
