//! Markdown comparison table in the layout of the paper's cost table.

use std::fmt::Write;

use chaintube::runtime::{ControllerKind, SimLog};

/// Row order of the table.
pub const ROWS: [ControllerKind; 4] = [ControllerKind::Tmpc, ControllerKind::Dempc, ControllerKind::Chain, ControllerKind::Cmpc];

/// Largest relative spread of the truck-3 costs that counts as equal.
pub const TRUCK3_SPREAD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub logs: Vec<SimLog>,
}

impl Comparison {
    pub fn log(&self, k: ControllerKind) -> &SimLog {
        self.logs.iter().find(|l| l.controller == k).expect("every controller was run")
    }

    fn cost(&self, k: ControllerKind) -> Option<f64> {
        let l = self.log(k);
        l.completed().then(|| l.total_cost())
    }

    /// `J_CMPC ≤ J_Alg1 ≤ J_DeMPC ≤ J_TMPC`; `None` if a run failed.
    pub fn ordering(&self) -> Option<bool> {
        let c = [ControllerKind::Cmpc, ControllerKind::Chain, ControllerKind::Dempc, ControllerKind::Tmpc].map(|k| self.cost(k));
        let c: Option<Vec<f64>> = c.into_iter().collect();
        c.map(|c| c.windows(2).all(|w| w[0] <= w[1]))
    }

    /// `J_TMPC − J_Alg1`.
    pub fn chain_gain(&self) -> Option<f64> {
        Some(self.cost(ControllerKind::Tmpc)? - self.cost(ControllerKind::Chain)?)
    }

    /// `(max − min) / max` of the truck-3 costs.
    pub fn truck3_spread(&self) -> Option<f64> {
        let mut v = Vec::new();
        for k in ROWS {
            let l = self.log(k);
            if !l.completed() || l.final_state.len() < 6 {
                return None;
            }
            v.push(l.subsystem_cost(2));
        }
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(if max > 0.0 { (max - min) / max } else { 0.0 })
    }

    pub fn render(&self, config_hash: &str, x0: &[f64]) -> String {
        let first = &self.logs[0];
        let steps = self.logs.iter().map(|l| l.records.len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "# Controller comparison\n");
        let _ = writeln!(out, "- config hash: `{config_hash}`");
        let _ = writeln!(out, "- horizon N = {}, inner period T = {}", first.horizon, first.period);
        let x0: Vec<String> = x0.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "- x0 = ({})\n", x0.join(", "));
        let _ = writeln!(
            out,
            "Cost convention: J = Σ_t Σ_i (x_iᵀ Q_i x_i + u_iᵀ R_i u_i) over the closed-loop trajectory of the true plant for \
             t = 0..{}, without a terminal term. A truck column holds the same sum restricted to that truck.\n",
            steps.saturating_sub(1)
        );
        let _ = writeln!(out, "| Controller | Global plant | Truck i=1 | Truck i=3 | Notes |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for k in ROWS {
            let l = self.log(k);
            let truck = |i: usize| if l.final_state.len() > 2 * i { format!("{:.4}", l.subsystem_cost(i)) } else { "-".into() };
            match &l.failure {
                None => {
                    let sat = l.saturations();
                    let note = if sat > 0 { format!("{sat} saturated inputs") } else { String::new() };
                    let _ = writeln!(out, "| {} | {:.4} | {} | {} | {note} |", k.label(), l.total_cost(), truck(0), truck(2));
                }
                Some(f) => {
                    let _ = writeln!(out, "| {} | - | - | - | failed: {f} |", k.label());
                }
            }
        }
        let _ = writeln!(out);
        let verdict = |b: Option<bool>| match b {
            Some(true) => "holds",
            Some(false) => "does not hold",
            None => "not evaluated (a run failed)",
        };
        let exact: Vec<String> =
            ROWS.iter().filter_map(|&k| self.cost(k).map(|c| format!("{} {c:.12e}", k.label()))).collect();
        let _ = writeln!(out, "- global costs at full precision: {}", exact.join(", "));
        let _ = writeln!(out, "- ordering J_CMPC ≤ J_Alg1 ≤ J_DeMPC ≤ J_TMPC: {}", verdict(self.ordering()));
        match self.chain_gain() {
            Some(g) => {
                let _ = writeln!(out, "- J_TMPC − J_Alg1 = {g:.6e} ({})", if g > 0.0 { "positive" } else { "not positive" });
            }
            None => {
                let _ = writeln!(out, "- J_TMPC − J_Alg1: not evaluated (a run failed)");
            }
        }
        match self.truck3_spread() {
            Some(s) => {
                let ok = if s <= TRUCK3_SPREAD { "within" } else { "outside" };
                let _ = writeln!(out, "- truck 3 relative spread: {:.4}% ({ok} {}%)", 100.0 * s, 100.0 * TRUCK3_SPREAD);
            }
            None => {
                let _ = writeln!(out, "- truck 3 relative spread: not evaluated");
            }
        }
        out
    }
}
