//! Dense two-phase tableau simplex with Bland's rule.
//!
//! Solves `max cᵀx  s.t.  A·x ≤ b,  lᵢ ≤ xᵢ ≤ uᵢ` for small dense problems.
//! Bland's rule keeps the highly degenerate dataset-mixing programs from
//! cycling.

use super::OptimizeError;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    /// Objective coefficients, maximised.
    pub objective: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    /// `(lower, upper)` per variable; lower bounds must be finite.
    pub bounds: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Largest violation of any constraint or bound at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, b) in self.a_ub.iter().zip(&self.b_ub) {
            let lhs: f64 = row.iter().zip(x).map(|(a, xi)| a * xi).sum();
            worst = worst.max(lhs - b);
        }
        for (xi, (lo, hi)) in x.iter().zip(&self.bounds) {
            worst = worst.max(lo - xi);
            if let Some(hi) = hi {
                worst = worst.max(xi - hi);
            }
        }
        worst
    }

    fn validate(&self) -> Result<(), OptimizeError> {
        let n = self.num_vars();
        if self.bounds.len() != n
            || self.a_ub.len() != self.b_ub.len()
            || self.a_ub.iter().any(|r| r.len() != n)
        {
            return Err(OptimizeError::DimensionMismatch);
        }
        if self.bounds.iter().any(|(lo, _)| !lo.is_finite()) {
            return Err(OptimizeError::InvalidConfig(
                "lower bounds must be finite".into(),
            ));
        }
        Ok(())
    }
}

pub fn lp_solve(lp: &LinearProgram) -> Result<LpSolution, OptimizeError> {
    lp.validate()?;
    let n = lp.num_vars();
    let lower: Vec<f64> = lp.bounds.iter().map(|b| b.0).collect();

    // Shift x = lower + y so every variable is y ≥ 0, and turn finite upper
    // bounds into rows.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (row, b) in lp.a_ub.iter().zip(&lp.b_ub) {
        let shift: f64 = row.iter().zip(&lower).map(|(a, l)| a * l).sum();
        rows.push(row.clone());
        rhs.push(b - shift);
    }
    for (i, (lo, hi)) in lp.bounds.iter().enumerate() {
        if let Some(hi) = hi {
            if hi < lo {
                return Err(OptimizeError::Infeasible);
            }
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            rows.push(row);
            rhs.push(hi - lo);
        }
    }

    let m = rows.len();
    let artificial_rows: Vec<usize> = (0..m).filter(|&i| rhs[i] < 0.0).collect();
    let k = artificial_rows.len();
    let cols = n + m + k;
    let mut tab = Tableau {
        rows: vec![vec![0.0; cols + 1]; m],
        obj: vec![0.0; cols + 1],
        basis: vec![0; m],
        blocked: vec![false; cols],
    };
    let mut art = 0;
    for i in 0..m {
        let sign = if rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            tab.rows[i][j] = sign * rows[i][j];
        }
        tab.rows[i][n + i] = sign;
        tab.rows[i][cols] = sign * rhs[i];
        if sign < 0.0 {
            tab.rows[i][n + m + art] = 1.0;
            tab.basis[i] = n + m + art;
            art += 1;
        } else {
            tab.basis[i] = n + i;
        }
    }

    if k > 0 {
        // Phase 1: maximise −Σ artificials.
        let mut phase1 = vec![0.0; cols];
        for j in n + m..cols {
            phase1[j] = -1.0;
        }
        tab.set_objective(&phase1);
        tab.run()?;
        if -tab.obj[cols] < -EPS * (1.0 + rhs.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            return Err(OptimizeError::Infeasible);
        }
        // Drive remaining (zero-valued) artificials out of the basis.
        for i in 0..m {
            if tab.basis[i] >= n + m {
                if let Some(j) = (0..n + m).find(|&j| tab.rows[i][j].abs() > EPS) {
                    tab.pivot(i, j);
                }
            }
        }
        for j in n + m..cols {
            tab.blocked[j] = true;
        }
    }

    let mut c = vec![0.0; cols];
    c[..n].copy_from_slice(&lp.objective);
    tab.set_objective(&c);
    tab.run()?;

    let mut y = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            y[b] = tab.rows[i][cols];
        }
    }
    let x: Vec<f64> = y.iter().zip(&lower).map(|(yi, l)| yi + l).collect();
    let objective = x.iter().zip(&lp.objective).map(|(xi, ci)| xi * ci).sum();
    Ok(LpSolution { x, objective })
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    /// Reduced costs; the last entry holds `−z`.
    obj: Vec<f64>,
    basis: Vec<usize>,
    blocked: Vec<bool>,
}

impl Tableau {
    fn width(&self) -> usize {
        self.obj.len() - 1
    }

    fn set_objective(&mut self, c: &[f64]) {
        let w = self.width();
        self.obj = c.to_vec();
        self.obj.push(0.0);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = self.obj[b];
            if cb != 0.0 {
                for j in 0..=w {
                    self.obj[j] -= cb * self.rows[i][j];
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width();
        let p = self.rows[r][c];
        for j in 0..=w {
            self.rows[r][j] /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[c];
                if f != 0.0 {
                    for j in 0..=w {
                        row[j] -= f * pivot_row[j];
                    }
                }
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for j in 0..=w {
                self.obj[j] -= f * pivot_row[j];
            }
        }
        self.basis[r] = c;
    }

    fn run(&mut self) -> Result<(), OptimizeError> {
        let w = self.width();
        for _ in 0..100_000 {
            let Some(enter) = (0..w).find(|&j| !self.blocked[j] && self.obj[j] > EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[enter];
                if a > EPS {
                    let ratio = row[w] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - EPS
                                || ((ratio - lr).abs() <= EPS && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(OptimizeError::Unbounded);
            };
            self.pivot(r, enter);
        }
        Err(OptimizeError::IterationLimit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box() {
        let lp = LinearProgram {
            objective: vec![1.0, 1.0],
            a_ub: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            b_ub: vec![1.0, 1.0],
            bounds: vec![(0.0, None); 2],
        };
        let s = lp_solve(&lp).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!((s.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_point_feasible_region() {
        let lp = LinearProgram {
            objective: vec![1.0],
            a_ub: vec![vec![1.0], vec![-1.0]],
            b_ub: vec![0.0, 0.0],
            bounds: vec![(0.0, None)],
        };
        let s = lp_solve(&lp).unwrap();
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let infeasible = LinearProgram {
            objective: vec![1.0],
            a_ub: vec![vec![1.0], vec![-1.0]],
            b_ub: vec![1.0, -2.0],
            bounds: vec![(0.0, None)],
        };
        assert_eq!(lp_solve(&infeasible), Err(OptimizeError::Infeasible));
        let unbounded = LinearProgram {
            objective: vec![1.0, 0.0],
            a_ub: vec![vec![0.0, 1.0]],
            b_ub: vec![1.0],
            bounds: vec![(0.0, None); 2],
        };
        assert_eq!(lp_solve(&unbounded), Err(OptimizeError::Unbounded));
    }

    #[test]
    fn negative_rhs_needs_phase_one() {
        // x ≥ 2 written as −x ≤ −2, x ≤ 5
        let lp = LinearProgram {
            objective: vec![-1.0],
            a_ub: vec![vec![-1.0], vec![1.0]],
            b_ub: vec![-2.0, 5.0],
            bounds: vec![(0.0, None)],
        };
        let s = lp_solve(&lp).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_lower_bounds() {
        let lp = LinearProgram {
            objective: vec![1.0, -1.0],
            a_ub: vec![vec![1.0, 1.0]],
            b_ub: vec![10.0],
            bounds: vec![(-3.0, Some(4.0)), (1.0, Some(2.0))],
        };
        let s = lp_solve(&lp).unwrap();
        assert!((s.x[0] - 4.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!(lp.max_violation(&s.x) <= 1e-12);
    }

    /// Best objective over all basic feasible solutions, found by solving
    /// every n-subset of constraints (bounds included) as equalities.
    fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
        use nalgebra::{DMatrix, DVector};
        let n = lp.num_vars();
        let mut rows: Vec<(Vec<f64>, f64)> = lp
            .a_ub
            .iter()
            .cloned()
            .zip(lp.b_ub.iter().cloned())
            .collect();
        for (i, (lo, hi)) in lp.bounds.iter().enumerate() {
            let mut e = vec![0.0; n];
            e[i] = -1.0;
            rows.push((e.clone(), -lo));
            if let Some(hi) = hi {
                e[i] = 1.0;
                rows.push((e, *hi));
            }
        }
        let mut best: Option<f64> = None;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let a = DMatrix::from_fn(n, n, |r, c| rows[idx[r]].0[c]);
            let b = DVector::from_fn(n, |r, _| rows[idx[r]].1);
            if let Some(x) = a.lu().solve(&b) {
                if x.iter().all(|v| v.is_finite()) && lp.max_violation(x.as_slice()) <= 1e-9 {
                    let obj: f64 = x.iter().zip(&lp.objective).map(|(xi, ci)| xi * ci).sum();
                    best = Some(best.map_or(obj, |b: f64| b.max(obj)));
                }
            }
            // next combination
            let mut k = n;
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                if idx[k] < rows.len() - n + k {
                    break;
                }
            }
            idx[k] += 1;
            for j in k + 1..n {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn matches_vertex_enumeration(
            c in proptest::collection::vec(-5.0f64..5.0, 6),
            a in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 6), 4),
            b in proptest::collection::vec(-2.0f64..10.0, 4),
            upper in proptest::collection::vec(0.5f64..6.0, 6),
        ) {
            let lp = LinearProgram {
                objective: c,
                a_ub: a,
                b_ub: b,
                bounds: upper.iter().map(|u| (0.0, Some(*u))).collect(),
            };
            match (lp_solve(&lp), vertex_enumeration(&lp)) {
                (Ok(s), Some(best)) => {
                    proptest::prop_assert!(lp.max_violation(&s.x) <= 1e-7);
                    proptest::prop_assert!((s.objective - best).abs() <= 1e-7 * (1.0 + best.abs()), "{} vs {}", s.objective, best);
                }
                (Err(OptimizeError::Infeasible), None) => {}
                (got, want) => proptest::prop_assert!(false, "solver {:?}, oracle {:?}", got, want),
            }
        }
    }
}
