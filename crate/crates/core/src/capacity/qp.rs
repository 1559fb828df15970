use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use super::bmatrix::ConstraintMap;
use super::validate::ValidationReport;
use super::ACTIVE_RTOL;
use crate::error::{FlexError, Result};
use crate::spectra::{eval_basis, same_grid, BasisSet, SpectralDensity};

/// Every solve must reach this KKT residual on the normalized problem.
pub const KKT_TOLERANCE: f64 = 1e-6;

/// `f(theta) = theta^T A theta - 2 c_lin^T theta + constant`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Objective {
    pub a: Vec<Vec<f64>>,
    pub c_lin: Vec<f64>,
    pub constant: f64,
}

impl Objective {
    pub fn value(&self, theta: &[f64]) -> f64 {
        let quad: f64 = self
            .a
            .iter()
            .zip(theta)
            .map(|(row, ti)| ti * row.iter().zip(theta).map(|(a, tk)| a * tk).sum::<f64>())
            .sum();
        let lin: f64 = self.c_lin.iter().zip(theta).map(|(c, t)| c * t).sum();
        quad - 2.0 * lin + self.constant
    }
}

/// Grid quadrature of `(1/2pi) integral (Psi^T theta - S_BA)^2`, split into
/// its quadratic, linear and constant parts.
pub fn assemble_objective(basis: &BasisSet, sba: &SpectralDensity) -> Result<Objective> {
    same_grid(basis.grid(), sba.grid())?;
    let n = basis.grid().n_freq() as f64;
    let d = basis.len();
    let s = sba.values();
    let mut a = vec![vec![0.0; d]; d];
    let mut c_lin = vec![0.0; d];
    // bands are disjoint, so A is diagonal
    for i in 0..d {
        a[i][i] = basis.members(i).len() as f64 / n;
        c_lin[i] = basis.members(i).iter().map(|&j| s[j]).sum::<f64>() / n;
    }
    let constant = s.iter().map(|v| v * v).sum::<f64>() / n;
    Ok(Objective { a, c_lin, constant })
}

/// `min f(theta)` over `theta >= 0`, `B theta <= b`.
#[derive(Debug, Clone)]
pub struct QPProblem {
    pub basis: BasisSet,
    pub objective: Objective,
    pub constraints: ConstraintMap,
    pub b: Vec<f64>,
}

impl QPProblem {
    pub fn new(
        basis: BasisSet,
        objective: Objective,
        constraints: ConstraintMap,
        b: Vec<f64>,
    ) -> Result<Self> {
        let d = basis.len();
        if objective.a.len() != d
            || objective.a.iter().any(|r| r.len() != d)
            || objective.c_lin.len() != d
        {
            return Err(FlexError::input(format!(
                "objective dimensions do not match the basis size {d}"
            )));
        }
        for i in 0..d {
            for k in 0..i {
                let (x, y) = (objective.a[i][k], objective.a[k][i]);
                if (x - y).abs() > 1e-12 * (x.abs() + y.abs()).max(f64::MIN_POSITIVE) {
                    return Err(FlexError::input(format!("A is not symmetric at ({i}, {k})")));
                }
            }
            if objective.a[i][i] < 0.0 {
                return Err(FlexError::input(format!("A has a negative diagonal at {i}")));
            }
        }
        constraints.check(d)?;
        if b.len() != constraints.rows() {
            return Err(FlexError::input(format!(
                "{} bounds for {} constraint rows",
                b.len(),
                constraints.rows()
            )));
        }
        if let Some(v) = b.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(FlexError::input(format!("constraint bounds must be positive, got {v}")));
        }
        Ok(Self {
            basis,
            objective,
            constraints,
            b,
        })
    }

    /// The same problem without the `B theta <= b` rows.
    pub fn unconstrained(&self) -> Self {
        Self {
            basis: self.basis.clone(),
            objective: self.objective.clone(),
            constraints: ConstraintMap {
                b: Vec::new(),
                provenance: Vec::new(),
                stderr: None,
            },
            b: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 1000 }
    }
}

fn serialize_sd<S: Serializer>(sd: &SpectralDensity, s: S) -> std::result::Result<S::Ok, S::Error> {
    sd.to_json().serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityResult {
    pub theta_star: Vec<f64>,
    #[serde(serialize_with = "serialize_sd")]
    pub capacity_sd: SpectralDensity,
    pub objective_value: f64,
    pub active_constraints: Vec<usize>,
    pub kkt_residual: f64,
    /// Multipliers of `B theta <= b` for `f` as stated.
    pub multipliers: Vec<f64>,
    /// `B theta*`.
    pub constraint_values: Vec<f64>,
    pub bounds: Vec<f64>,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
}

pub fn solve_qp(p: &QPProblem) -> Result<CapacityResult> {
    solve_qp_with(p, SolverOptions::default())
}

/// Primal active-set method on a rescaled copy of the problem.
///
/// Rows are divided by their bounds, each variable is scaled so its largest
/// constraint coefficient is one, and the objective is divided by its
/// largest coefficient. Each iteration solves the equality-constrained
/// subproblem of the working set exactly (LU on the KKT matrix) and steps to
/// the first blocking constraint.
pub fn solve_qp_with(p: &QPProblem, opts: SolverOptions) -> Result<CapacityResult> {
    let d = p.basis.len();
    let keep: Vec<usize> = (0..d).filter(|&i| p.objective.a[i][i] > 0.0).collect();
    let k = keep.len();
    let rows: Vec<usize> = (0..p.constraints.rows())
        .filter(|&l| keep.iter().any(|&i| p.constraints.b[l][i] > 0.0))
        .collect();
    let m = rows.len();

    let g_raw: Vec<Vec<f64>> = rows
        .iter()
        .map(|&l| keep.iter().map(|&i| p.constraints.b[l][i] / p.b[l]).collect())
        .collect();
    let scale: Vec<f64> = (0..k)
        .map(|c| {
            let s = g_raw.iter().map(|r| r[c]).fold(0.0, f64::max);
            if s > 0.0 {
                1.0 / s
            } else {
                1.0 / (2.0 * p.objective.a[keep[c]][keep[c]]).sqrt()
            }
        })
        .collect();
    let mut q = DMatrix::from_fn(k, k, |r, c| {
        2.0 * p.objective.a[keep[r]][keep[c]] * scale[r] * scale[c]
    });
    let mut g = DVector::from_fn(k, |r, _| -2.0 * p.objective.c_lin[keep[r]] * scale[r]);
    let sigma = q
        .diagonal()
        .iter()
        .chain(g.iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    q /= sigma;
    g /= sigma;
    let gm = DMatrix::from_fn(m, k, |r, c| g_raw[r][c] * scale[c]);

    let mut solver = ActiveSet::new(q, g, gm);
    let outcome = solver.run(opts.max_iterations);

    let mut theta = vec![0.0; d];
    for (c, &i) in keep.iter().enumerate() {
        theta[i] = (solver.y[c] * scale[c]).max(0.0);
    }
    let residual = solver.kkt_residual();
    if !outcome || !(residual <= KKT_TOLERANCE) {
        return Err(FlexError::Solver {
            iterations: solver.iterations,
            kkt_residual: residual,
            best_theta: theta,
        });
    }

    let mut multipliers = vec![0.0; p.constraints.rows()];
    for (r, &l) in rows.iter().enumerate() {
        multipliers[l] = solver.lambda[r] * sigma / p.b[l];
    }
    let constraint_values = p.constraints.apply(&theta);
    let active_constraints = constraint_values
        .iter()
        .zip(&p.b)
        .enumerate()
        .filter(|(_, (v, b))| (*b - *v) / *b <= ACTIVE_RTOL)
        .map(|(l, _)| l)
        .collect();
    Ok(CapacityResult {
        capacity_sd: eval_basis(&p.basis, &theta)?,
        objective_value: p.objective.value(&theta),
        theta_star: theta,
        active_constraints,
        kkt_residual: residual,
        multipliers,
        constraint_values,
        bounds: p.b.clone(),
        iterations: solver.iterations,
        validation: None,
    })
}

/// `min 1/2 y^T Q y + g^T y` s.t. `y >= 0`, `G y <= 1`.
struct ActiveSet {
    q: DMatrix<f64>,
    g: DVector<f64>,
    gm: DMatrix<f64>,
    y: DVector<f64>,
    at_bound: Vec<bool>,
    working_rows: Vec<usize>,
    lambda: DVector<f64>,
    iterations: usize,
}

const STEP_TOL: f64 = 1e-13;
const DUAL_TOL: f64 = 1e-11;

impl ActiveSet {
    fn new(q: DMatrix<f64>, g: DVector<f64>, gm: DMatrix<f64>) -> Self {
        let k = q.nrows();
        let m = gm.nrows();
        Self {
            q,
            g,
            gm,
            y: DVector::zeros(k),
            at_bound: vec![true; k],
            working_rows: Vec::new(),
            lambda: DVector::zeros(m),
            iterations: 0,
        }
    }

    /// Minimizer on the working set and the row multipliers.
    fn subproblem(&self) -> (DVector<f64>, Vec<f64>) {
        let free: Vec<usize> = (0..self.y.len()).filter(|&i| !self.at_bound[i]).collect();
        let nf = free.len();
        let nw = self.working_rows.len();
        let mut kkt = DMatrix::zeros(nf + nw, nf + nw);
        let mut rhs = DVector::zeros(nf + nw);
        for (r, &i) in free.iter().enumerate() {
            for (c, &j) in free.iter().enumerate() {
                kkt[(r, c)] = self.q[(i, j)];
            }
            rhs[r] = -self.g[i];
            for (w, &l) in self.working_rows.iter().enumerate() {
                kkt[(r, nf + w)] = self.gm[(l, i)];
                kkt[(nf + w, r)] = self.gm[(l, i)];
            }
        }
        for w in 0..nw {
            rhs[nf + w] = 1.0;
        }
        if nf + nw == 0 {
            return (DVector::zeros(self.y.len()), Vec::new());
        }
        let sol = kkt
            .clone()
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .unwrap_or_else(|| {
                let ridge = 1e-12 * kkt.diagonal().amax().max(1.0);
                for r in 0..nf {
                    kkt[(r, r)] += ridge;
                }
                for w in 0..nw {
                    kkt[(nf + w, nf + w)] -= ridge;
                }
                kkt.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(nf + nw))
            });
        let mut target = DVector::zeros(self.y.len());
        for (r, &i) in free.iter().enumerate() {
            target[i] = sol[r];
        }
        let lam = (0..nw).map(|w| sol[nf + w]).collect();
        (target, lam)
    }

    fn run(&mut self, max_iterations: usize) -> bool {
        let k = self.y.len();
        if k == 0 {
            return true;
        }
        while self.iterations < max_iterations {
            self.iterations += 1;
            let (target, lam) = self.subproblem();
            let step = &target - &self.y;
            let size = self.y.amax().max(1.0);
            if step.amax() <= STEP_TOL * size {
                self.set_lambda(&lam);
                let bound_mu = self.bound_multipliers();
                let worst_row = lam
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v < -DUAL_TOL)
                    .min_by(|a, b| a.1.total_cmp(b.1));
                let worst_bound = bound_mu
                    .iter()
                    .enumerate()
                    .filter(|(i, v)| self.at_bound[*i] && **v < -DUAL_TOL)
                    .min_by(|a, b| a.1.total_cmp(b.1));
                match (worst_row, worst_bound) {
                    (None, None) => return true,
                    (Some((w, lv)), Some((_, bv))) if lv <= bv => {
                        self.working_rows.remove(w);
                    }
                    (Some((w, _)), None) => {
                        self.working_rows.remove(w);
                    }
                    (_, Some((i, _))) => self.at_bound[i] = false,
                }
                continue;
            }
            let mut alpha = 1.0;
            let mut blocking: Option<Block> = None;
            for i in 0..k {
                if !self.at_bound[i] && step[i] < 0.0 {
                    let a = (-self.y[i] / step[i]).max(0.0);
                    if a < alpha {
                        alpha = a;
                        blocking = Some(Block::Bound(i));
                    }
                }
            }
            for l in 0..self.gm.nrows() {
                if self.working_rows.contains(&l) {
                    continue;
                }
                let row = self.gm.row(l);
                let slope = row.dot(&step.transpose());
                if slope > 0.0 {
                    let a = ((1.0 - row.dot(&self.y.transpose())) / slope).max(0.0);
                    if a < alpha {
                        alpha = a;
                        blocking = Some(Block::Row(l));
                    }
                }
            }
            self.y += alpha * &step;
            match blocking {
                Some(Block::Bound(i)) => {
                    self.at_bound[i] = true;
                    self.y[i] = 0.0;
                }
                Some(Block::Row(l)) => self.working_rows.push(l),
                None => {}
            }
            for i in 0..k {
                if self.at_bound[i] {
                    self.y[i] = 0.0;
                }
            }
        }
        false
    }

    fn set_lambda(&mut self, lam: &[f64]) {
        self.lambda.fill(0.0);
        for (w, &l) in self.working_rows.iter().enumerate() {
            self.lambda[l] = lam[w];
        }
    }

    /// `Q y + g + G^T lambda`, the multipliers of `y >= 0` at bound variables.
    fn bound_multipliers(&self) -> DVector<f64> {
        &self.q * &self.y + &self.g + self.gm.transpose() * &self.lambda
    }

    fn kkt_residual(&self) -> f64 {
        let r = self.bound_multipliers();
        let slack: DVector<f64> = DVector::from_element(self.gm.nrows(), 1.0) - &self.gm * &self.y;
        let mut res = 0.0_f64;
        for i in 0..self.y.len() {
            if self.at_bound[i] {
                res = res.max(-r[i]).max((r[i] * self.y[i]).abs());
            } else {
                res = res.max(r[i].abs());
            }
            res = res.max(-self.y[i]);
        }
        for l in 0..self.gm.nrows() {
            res = res
                .max(-slack[l])
                .max(-self.lambda[l])
                .max((self.lambda[l] * slack[l]).abs());
        }
        res
    }
}

enum Block {
    Bound(usize),
    Row(usize),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::Provenance;
    use crate::spectra::{integrate_sd, FrequencyGrid};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn basis(d: usize) -> BasisSet {
        let g = FrequencyGrid::new(512, 60.0).unwrap();
        BasisSet::uniform(&g, d, 0.1, PI).unwrap()
    }

    fn cmap(rows: Vec<Vec<f64>>) -> ConstraintMap {
        let n = rows.len();
        ConstraintMap {
            b: rows,
            provenance: vec![Provenance::Model; n],
            stderr: None,
        }
    }

    #[test]
    fn zero_reference_gives_zero() {
        let bs = basis(5);
        let obj = assemble_objective(&bs, &SpectralDensity::zeros(*bs.grid())).unwrap();
        assert!(obj.c_lin.iter().all(|&c| c == 0.0));
        assert_eq!(obj.constant, 0.0);
        let p = QPProblem::new(bs, obj, cmap(vec![vec![1.0; 5]]), vec![1.0]).unwrap();
        let r = solve_qp(&p).unwrap();
        assert!(r.theta_star.iter().all(|&t| t == 0.0));
        assert!(r.kkt_residual <= KKT_TOLERANCE);
    }

    #[test]
    fn representable_reference_is_recovered() {
        let bs = basis(6);
        let sba = bs.psi(2);
        let obj = assemble_objective(&bs, &sba).unwrap();
        let p = QPProblem::new(bs, obj, cmap(vec![vec![1e-3; 6]]), vec![1.0]).unwrap();
        let r = solve_qp(&p).unwrap();
        for (i, t) in r.theta_star.iter().enumerate() {
            assert_relative_eq!(*t, if i == 2 { 1.0 } else { 0.0 }, epsilon = 1e-12);
        }
        assert!(r.objective_value.abs() < 1e-12);
        assert!(r.active_constraints.is_empty());
    }

    #[test]
    fn objective_matches_direct_quadrature() {
        let bs = basis(4);
        let g = *bs.grid();
        let sba = SpectralDensity::from_fn(g, |w| 1.0 / (1.0 + w * w)).unwrap();
        let obj = assemble_objective(&bs, &sba).unwrap();
        let theta = [0.3, 0.7, 0.1, 2.0];
        let fit = eval_basis(&bs, &theta).unwrap();
        let diff: Vec<f64> = fit
            .values()
            .iter()
            .zip(sba.values())
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        let direct = integrate_sd(&SpectralDensity::new(g, diff).unwrap());
        assert_relative_eq!(obj.value(&theta), direct, max_relative = 1e-12);
        for i in 0..4 {
            assert_relative_eq!(obj.a[i][i], bs.two_sided_width(i) / (2.0 * PI), max_relative = 1e-12);
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let g = FrequencyGrid::new(256, 60.0).unwrap();
        let bs = BasisSet::uniform(&g, 1, 0.5, 2.0).unwrap();
        for (level, bound) in [(3.0, 0.01), (3.0, 100.0), (0.5, 0.2)] {
            let sba = bs.psi(0).scaled(level).unwrap();
            let obj = assemble_objective(&bs, &sba).unwrap();
            let b11 = 0.7;
            let expect = (obj.c_lin[0] / obj.a[0][0]).min(bound / b11);
            let p = QPProblem::new(bs.clone(), obj, cmap(vec![vec![b11]]), vec![bound]).unwrap();
            let r = solve_qp(&p).unwrap();
            assert!((r.theta_star[0] - expect).abs() <= 1e-8 * expect.max(1.0));
        }
    }

    #[test]
    fn loose_bounds_give_clamped_projection() {
        let bs = basis(8);
        let g = *bs.grid();
        let sba = SpectralDensity::from_fn(g, |w| (3.0 - w).max(0.0)).unwrap();
        let obj = assemble_objective(&bs, &sba).unwrap();
        let expect: Vec<f64> = (0..8).map(|i| (obj.c_lin[i] / obj.a[i][i]).max(0.0)).collect();
        let p = QPProblem::new(bs, obj, cmap(vec![vec![1.0; 8]]), vec![1e9]).unwrap();
        let r = solve_qp(&p).unwrap();
        for (t, e) in r.theta_star.iter().zip(&expect) {
            assert_relative_eq!(t, e, max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn binding_constraints_are_reported() {
        let bs = basis(6);
        let g = *bs.grid();
        let sba = SpectralDensity::constant(g, 10.0).unwrap();
        let obj = assemble_objective(&bs, &sba).unwrap();
        let rows = vec![vec![1.0, 2.0, 3.0, 1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0, 5.0, 1.0, 0.0]];
        let p = QPProblem::new(bs, obj, cmap(rows), vec![4.0, 2.0]).unwrap();
        let r = solve_qp(&p).unwrap();
        assert!(r.kkt_residual <= KKT_TOLERANCE);
        for (v, b) in r.constraint_values.iter().zip(&r.bounds) {
            assert!(*v <= b + 1e-6);
        }
        assert_eq!(r.active_constraints, vec![0, 1]);
        assert!(r.multipliers.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn empty_bands_are_pruned() {
        let g = FrequencyGrid::new(64, 60.0).unwrap();
        let h = g.spacing();
        let bs = crate::spectra::make_basis(&g, &[1.1 * h, 1.2 * h, PI]).unwrap();
        let sba = SpectralDensity::constant(g, 1.0).unwrap();
        let obj = assemble_objective(&bs, &sba).unwrap();
        let p = QPProblem::new(bs, obj, cmap(vec![vec![0.0, 1.0]]), vec![0.1]).unwrap();
        let r = solve_qp(&p).unwrap();
        assert_eq!(r.theta_star[0], 0.0);
        assert_relative_eq!(r.theta_star[1], 0.1, max_relative = 1e-12);
    }

    #[test]
    fn bad_inputs_rejected() {
        let bs = basis(2);
        let obj = assemble_objective(&bs, &SpectralDensity::zeros(*bs.grid())).unwrap();
        assert!(QPProblem::new(bs.clone(), obj.clone(), cmap(vec![vec![1.0, 1.0]]), vec![0.0]).is_err());
        assert!(QPProblem::new(bs.clone(), obj.clone(), cmap(vec![vec![1.0]]), vec![1.0]).is_err());
        let other = FrequencyGrid::new(128, 60.0).unwrap();
        assert!(assemble_objective(&bs, &SpectralDensity::zeros(other)).is_err());
    }
}
