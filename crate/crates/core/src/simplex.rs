//! Self-contained dense two-phase simplex with Bland's anti-cycling rule.
//!
//! All hedging programs at desk scale are small, so a dense tableau is fine
//! and keeps results bit-reproducible across platforms.

/// Row comparison operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub status: LpStatus,
    /// Values of the user variables (empty unless `Optimal`).
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct VarDef {
    obj: f64,
    free: bool,
}

struct RowDef {
    coeffs: Vec<(usize, f64)>,
    cmp: Cmp,
    rhs: f64,
}

/// Incremental model builder. Variables are nonnegative unless declared
/// free; free variables are split internally.
pub(crate) struct LpBuilder {
    minimize: bool,
    vars: Vec<VarDef>,
    rows: Vec<RowDef>,
}

const EPS_RC: f64 = 1e-9;
const EPS_PIVOT: f64 = 1e-10;
const MAX_PIVOTS: usize = 200_000;

impl LpBuilder {
    pub fn minimize() -> Self {
        Self { minimize: true, vars: Vec::new(), rows: Vec::new() }
    }

    pub fn maximize() -> Self {
        Self { minimize: false, vars: Vec::new(), rows: Vec::new() }
    }

    pub fn add_var(&mut self, obj: f64, free: bool) -> usize {
        self.vars.push(VarDef { obj, free });
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.rows.push(RowDef { coeffs, cmp, rhs });
    }

    pub fn solve(&self) -> LpSolution {
        Tableau::build(self).solve(self)
    }
}

struct Tableau {
    /// Constraint matrix including slack columns; row-major.
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    /// Pristine copy of the current-phase system, used to refactorize the
    /// tableau from the basis and kill accumulated elimination drift.
    a0: Vec<Vec<f64>>,
    b0: Vec<f64>,
    /// Structural column count (split user vars + slacks); artificials sit
    /// after this range during phase 1.
    n_struct: usize,
    /// Basis: for each row, the column index of its basic variable.
    basis: Vec<usize>,
    /// Map user var -> (plus column, optional minus column).
    var_cols: Vec<(usize, Option<usize>)>,
    iterations: usize,
    pivots_since_refactor: usize,
}

impl Tableau {
    fn build(builder: &LpBuilder) -> Self {
        let mut var_cols = Vec::with_capacity(builder.vars.len());
        let mut n = 0usize;
        for v in &builder.vars {
            if v.free {
                var_cols.push((n, Some(n + 1)));
                n += 2;
            } else {
                var_cols.push((n, None));
                n += 1;
            }
        }
        let m = builder.rows.len();
        let mut a = vec![vec![0.0; n + m]; m]; // reserve one slack slot per row
        let mut b = vec![0.0; m];
        let mut n_cols = n;
        let mut slack_col: Vec<Option<usize>> = vec![None; m];
        for (i, row) in builder.rows.iter().enumerate() {
            for &(var, c) in &row.coeffs {
                let (p, minus) = var_cols[var];
                a[i][p] += c;
                if let Some(mcol) = minus {
                    a[i][mcol] -= c;
                }
            }
            b[i] = row.rhs;
            // Equilibrate: scale the structural part to unit magnitude so
            // pivot tolerances mean the same thing on every row.
            let tau = a[i][..n].iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
            if tau > 0.0 {
                for v in a[i][..n].iter_mut() {
                    *v /= tau;
                }
                b[i] /= tau;
            }
            match row.cmp {
                Cmp::Le => {
                    a[i][n_cols] = 1.0;
                    slack_col[i] = Some(n_cols);
                    n_cols += 1;
                }
                Cmp::Ge => {
                    a[i][n_cols] = -1.0;
                    slack_col[i] = Some(n_cols);
                    n_cols += 1;
                }
                Cmp::Eq => {}
            }
        }
        for row in a.iter_mut() {
            row.truncate(n_cols);
        }
        // Normalize to b >= 0.
        for i in 0..m {
            if b[i] < 0.0 {
                b[i] = -b[i];
                for v in a[i].iter_mut() {
                    *v = -*v;
                }
            }
        }
        // Initial basis: slack columns with +1 entry, otherwise artificials.
        let mut basis = vec![usize::MAX; m];
        for i in 0..m {
            if let Some(s) = slack_col[i] {
                if a[i][s] > 0.5 {
                    basis[i] = s;
                }
            }
        }
        let n_struct = n_cols;
        for i in 0..m {
            if basis[i] == usize::MAX {
                for row in a.iter_mut() {
                    row.push(0.0);
                }
                a[i][n_cols] = 1.0;
                basis[i] = n_cols;
                n_cols += 1;
            }
        }
        let a0 = a.clone();
        let b0 = b.clone();
        Tableau { a, b, a0, b0, n_struct, basis, var_cols, iterations: 0, pivots_since_refactor: 0 }
    }

    fn n_cols(&self) -> usize {
        if self.a.is_empty() { self.n_struct } else { self.a[0].len() }
    }

    /// Reduced-cost row for cost vector `c` (length = columns) under the
    /// current basis, plus the current objective value.
    fn reduced_costs(&self, c: &[f64]) -> (Vec<f64>, f64) {
        let m = self.a.len();
        let mut rc = c.to_vec();
        let mut obj = 0.0;
        for i in 0..m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                obj += cb * self.b[i];
                for j in 0..rc.len() {
                    rc[j] -= cb * self.a[i][j];
                }
            }
        }
        (rc, obj)
    }

    /// Runs simplex iterations for cost vector `c`. `allowed` masks the
    /// columns permitted to enter. Returns false on unboundedness.
    fn iterate(&mut self, c: &[f64], allowed: &dyn Fn(usize) -> bool) -> bool {
        let m = self.a.len();
        loop {
            self.iterations += 1;
            if self.iterations > MAX_PIVOTS {
                // Bland's rule precludes cycling; this is a pure safety net.
                return true;
            }
            if self.pivots_since_refactor >= 40 {
                self.refactorize();
            }
            let (rc, _) = self.reduced_costs(c);
            // Bland: smallest-index column with negative reduced cost.
            let mut enter = None;
            for (j, &r) in rc.iter().enumerate() {
                if allowed(j) && r < -EPS_RC {
                    enter = Some(j);
                    break;
                }
            }
            let Some(j) = enter else { return true };
            // Ratio test; Bland tie-break on smallest basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if self.a[i][j] > EPS_PIVOT {
                    let ratio = self.b[i].max(0.0) / self.a[i][j];
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12
                                || (ratio < lr + 1e-12 && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else {
                // Rebuild the tableau from the pristine system before
                // trusting an unbounded verdict: elimination drift can zero
                // out a column that still carries a stale reduced cost.
                if self.pivots_since_refactor > 0 {
                    self.refactorize();
                    continue;
                }
                return false;
            };
            self.pivot(r, j);
        }
    }

    /// Recomputes the tableau as basis^-1 applied to the pristine system.
    fn refactorize(&mut self) {
        let m = self.a.len();
        if m == 0 {
            return;
        }
        let n = self.a0[0].len();
        let mut aug: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut row = Vec::with_capacity(m + n + 1);
                for k in 0..m {
                    row.push(self.a0[i][self.basis[k]]);
                }
                row.extend_from_slice(&self.a0[i]);
                row.push(self.b0[i]);
                row
            })
            .collect();
        // Gauss-Jordan on the basis block, keeping the identity in basis
        // order so row k stays paired with basis[k].
        for col in 0..m {
            let p = (col..m)
                .max_by(|&x, &y| aug[x][col].abs().partial_cmp(&aug[y][col].abs()).unwrap())
                .unwrap();
            if aug[p][col].abs() < 1e-13 {
                return; // singular within tolerance; keep the current state
            }
            aug.swap(col, p);
            let inv = 1.0 / aug[col][col];
            for v in aug[col].iter_mut() {
                *v *= inv;
            }
            for i in 0..m {
                if i != col {
                    let f = aug[i][col];
                    if f != 0.0 {
                        let (head, tail) = if i < col {
                            let (h, t) = aug.split_at_mut(col);
                            (&mut h[i], &t[0])
                        } else {
                            let (h, t) = aug.split_at_mut(i);
                            (&mut t[0], &h[col])
                        };
                        for (hv, tv) in head.iter_mut().zip(tail.iter()) {
                            *hv -= f * tv;
                        }
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..n {
                self.a[i][j] = aug[i][m + j];
            }
            self.b[i] = aug[i][m + n];
            if self.b[i] < 0.0 && self.b[i] > -1e-9 {
                self.b[i] = 0.0;
            }
        }
        self.pivots_since_refactor = 0;
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let m = self.a.len();
        let piv = self.a[row][col];
        let inv = 1.0 / piv;
        for v in self.a[row].iter_mut() {
            *v *= inv;
        }
        self.b[row] *= inv;
        self.a[row][col] = 1.0; // exact
        for i in 0..m {
            if i != row {
                let f = self.a[i][col];
                if f != 0.0 {
                    let (head, tail) = if i < row {
                        let (h, t) = self.a.split_at_mut(row);
                        (&mut h[i], &t[0])
                    } else {
                        let (h, t) = self.a.split_at_mut(i);
                        (&mut t[0], &h[row])
                    };
                    for (hv, tv) in head.iter_mut().zip(tail.iter()) {
                        *hv -= f * tv;
                    }
                    head[col] = 0.0; // exact
                    self.b[i] -= f * self.b[row];
                }
            }
        }
        if self.b[row] < 0.0 && self.b[row] > -1e-11 {
            self.b[row] = 0.0;
        }
        self.basis[row] = col;
        self.pivots_since_refactor += 1;
    }

    fn solve(mut self, builder: &LpBuilder) -> LpSolution {
        let m = self.a.len();
        let n_all = self.n_cols();
        // Phase 1: minimize the sum of artificials, if any.
        if n_all > self.n_struct {
            let mut c1 = vec![0.0; n_all];
            for cv in c1.iter_mut().skip(self.n_struct) {
                *cv = 1.0;
            }
            self.iterate(&c1, &|_| true);
            let (_, obj) = self.reduced_costs(&c1);
            let scale = 1.0 + self.b.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            if obj > 1e-8 * scale {
                return LpSolution {
                    status: LpStatus::Infeasible,
                    x: Vec::new(),
                    objective: f64::NAN,
                    iterations: self.iterations,
                };
            }
            // Drive remaining artificials out of the basis, pivoting on the
            // largest eligible entry.
            let mut drop_rows = Vec::new();
            for i in 0..m {
                if self.basis[i] >= self.n_struct {
                    let piv = (0..self.n_struct)
                        .max_by(|&x, &y| {
                            self.a[i][x].abs().partial_cmp(&self.a[i][y].abs()).unwrap()
                        })
                        .filter(|&j| self.a[i][j].abs() > 1e-7);
                    match piv {
                        Some(j) => self.pivot(i, j),
                        None => drop_rows.push(i), // redundant constraint
                    }
                }
            }
            for &i in drop_rows.iter().rev() {
                self.a.remove(i);
                self.b.remove(i);
                self.a0.remove(i);
                self.b0.remove(i);
                self.basis.remove(i);
            }
            let keep = self.n_struct;
            for row in self.a.iter_mut() {
                row.truncate(keep);
            }
            for row in self.a0.iter_mut() {
                row.truncate(keep);
            }
            self.pivots_since_refactor = 1; // force a clean phase-2 start
            self.refactorize();
        }
        // Phase 2.
        let mut c2 = vec![0.0; self.n_struct];
        let sign = if builder.minimize { 1.0 } else { -1.0 };
        for (v, &(p, minus)) in builder.vars.iter().zip(self.var_cols.iter()) {
            c2[p] += sign * v.obj;
            if let Some(mc) = minus {
                c2[mc] -= sign * v.obj;
            }
        }
        let bounded = self.iterate(&c2, &|_| true);
        if !bounded {
            return LpSolution {
                status: LpStatus::Unbounded,
                x: Vec::new(),
                objective: if builder.minimize { f64::NEG_INFINITY } else { f64::INFINITY },
                iterations: self.iterations,
            };
        }
        // Extract user variables.
        let mut col_val = vec![0.0; self.n_struct];
        for (i, &bcol) in self.basis.iter().enumerate() {
            if bcol < self.n_struct {
                col_val[bcol] = self.b[i];
            }
        }
        let x: Vec<f64> = self
            .var_cols
            .iter()
            .map(|&(p, minus)| col_val[p] - minus.map_or(0.0, |mc| col_val[mc]))
            .collect();
        let objective: f64 = builder.vars.iter().zip(x.iter()).map(|(v, &xv)| v.obj * xv).sum();
        LpSolution { status: LpStatus::Optimal, x, objective, iterations: self.iterations }
    }
}
