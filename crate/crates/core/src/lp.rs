//! Thin dense front end over `minilp`.
//!
//! Rows are kept as dense coefficient vectors; every problem solved by this
//! crate has at most a few hundred variables.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct LinearProgram {
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<(usize, f64)>, Cmp, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { values: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            LpOutcome::Optimal { values, .. } => Some(values),
            _ => None,
        }
    }
}

impl Default for LinearProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl LinearProgram {
    /// A minimisation problem with no variables.
    pub fn new() -> Self {
        LinearProgram { objective: Vec::new(), bounds: Vec::new(), rows: Vec::new() }
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.bounds.push((lower, upper));
        self.objective.len() - 1
    }

    pub fn add_cost(&mut self, var: usize, cost: f64) {
        self.objective[var] += cost;
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.objective[var] = cost;
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, terms: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.rows.push((terms, cmp, rhs));
    }

    pub fn solve(&self) -> LpOutcome {
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = self
            .objective
            .iter()
            .zip(&self.bounds)
            .map(|(&c, &b)| problem.add_var(c, b))
            .collect();
        for (terms, cmp, rhs) in &self.rows {
            let expr: Vec<_> = terms.iter().map(|&(i, c)| (vars[i], c)).collect();
            let op = match cmp {
                Cmp::Le => ComparisonOp::Le,
                Cmp::Ge => ComparisonOp::Ge,
                Cmp::Eq => ComparisonOp::Eq,
            };
            problem.add_constraint(&expr[..], op, *rhs);
        }
        match problem.solve() {
            Ok(sol) => LpOutcome::Optimal {
                values: vars.iter().map(|v| *sol.var_value(*v)).collect(),
                objective: sol.objective(),
            },
            Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
            Err(minilp::Error::Unbounded) => LpOutcome::Unbounded,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp() {
        // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, 0 <= x, y
        let mut lp = LinearProgram::new();
        let x = lp.add_var(-1.0, 0.0, f64::INFINITY);
        let y = lp.add_var(-1.0, 0.0, f64::INFINITY);
        lp.add_row(vec![(x, 1.0), (y, 2.0)], Cmp::Le, 4.0);
        lp.add_row(vec![(x, 3.0), (y, 1.0)], Cmp::Le, 6.0);
        let LpOutcome::Optimal { values, objective } = lp.solve() else { panic!() };
        assert!((values[0] - 1.6).abs() < 1e-9);
        assert!((values[1] - 1.2).abs() < 1e-9);
        assert!((objective + 2.8).abs() < 1e-9);
    }

    #[test]
    fn infeasible_box() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, 0.0, 0.0);
        lp.add_row(vec![(x, 1.0)], Cmp::Ge, 1.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);
    }
}
