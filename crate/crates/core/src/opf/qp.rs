//! Dense convex QP solver: Mehrotra predictor-corrector interior point
//! followed by an active-set polish that makes complementarity exact.
//!
//! Problem form:
//! ```text
//! min ½ xᵀQx + cᵀx   s.t.  A x = b,  G x ≤ h
//! ```
//! with Lagrangian `f + yᵀ(Ax − b) + zᵀ(Gx − h)`, `z ≥ 0`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Max-norm of stationarity, primal and complementarity residuals.
    pub residual: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub max_iter: usize,
    /// Target for the complementarity products and scaled residuals.
    pub tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings { max_iter: 100, tol: 1e-8 }
    }
}

struct Residuals {
    dual: DVector<f64>,
    prim_eq: DVector<f64>,
    prim_in: DVector<f64>,
}

impl QpProblem {
    fn residuals(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, s: &DVector<f64>) -> Residuals {
        Residuals {
            dual: &self.q * x + &self.c + self.a.tr_mul(y) + self.g.tr_mul(z),
            prim_eq: &self.a * x - &self.b,
            prim_in: &self.g * x + s - &self.h,
        }
    }

    /// Residual of a candidate primal/dual point in the original problem.
    pub fn kkt_residual(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let stat = (&self.q * x + &self.c + self.a.tr_mul(y) + self.g.tr_mul(z)).amax();
        let eq = (&self.a * x - &self.b).amax();
        let slack = &self.h - &self.g * x;
        let infeas = slack.iter().fold(0.0f64, |m, v| m.max(-v));
        let comp = slack.iter().zip(z.iter()).fold(0.0f64, |m, (s, z)| m.max((s * z).abs()));
        let neg_dual = z.iter().fold(0.0f64, |m, v| m.max(-v));
        stat.max(eq).max(infeas).max(comp).max(neg_dual)
    }
}

/// Newton direction for the reduced system, given the complementarity rhs.
#[allow(clippy::too_many_arguments)]
fn direction(
    p: &QpProblem,
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: &Residuals,
    s: &DVector<f64>,
    z: &DVector<f64>,
    r_sz: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = p.q.nrows();
    let me = p.a.nrows();
    // dz = S⁻¹(−r_sz + Z r_in + Z G dx)
    let t = DVector::from_fn(s.len(), |i, _| (-r_sz[i] + z[i] * r.prim_in[i]) / s[i]);
    let mut rhs = DVector::zeros(n + me);
    rhs.rows_mut(0, n).copy_from(&(-&r.dual - p.g.tr_mul(&t)));
    rhs.rows_mut(n, me).copy_from(&(-&r.prim_eq));
    let sol = lu.solve(&rhs)?;
    let dx = sol.rows(0, n).into_owned();
    let dy = sol.rows(n, me).into_owned();
    let gdx = &p.g * &dx;
    let dz = DVector::from_fn(s.len(), |i, _| t[i] + z[i] * gdx[i] / s[i]);
    let ds = -&r.prim_in - gdx;
    Some((dx, dy, dz, ds))
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(1.0, f64::min)
}

pub fn solve_qp(p: &QpProblem, settings: QpSettings) -> QpSolution {
    let n = p.q.nrows();
    let me = p.a.nrows();
    let mi = p.g.nrows();
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(me);
    let mut s = DVector::from_fn(mi, |i, _| (p.h[i] - (&p.g.row(i) * &x)[0]).max(1.0));
    let mut z = DVector::from_element(mi, 1.0);
    let scale = 1.0 + p.c.amax().max(p.q.amax());
    let mut iterations = 0;
    let mut status = QpStatus::MaxIterations;

    for it in 0..settings.max_iter {
        iterations = it + 1;
        let r = p.residuals(&x, &y, &z, &s);
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };
        let comp_max = s.iter().zip(z.iter()).fold(0.0f64, |m, (a, b)| m.max(a * b));
        if r.dual.amax() <= settings.tol * scale
            && r.prim_eq.amax() <= settings.tol
            && r.prim_in.amax() <= settings.tol
            && comp_max <= settings.tol
        {
            status = QpStatus::Optimal;
            break;
        }
        if z.amax() > 1e14 * scale {
            status = QpStatus::Infeasible;
            break;
        }
        let mut m = p.q.clone();
        for i in 0..mi {
            let w = z[i] / s[i];
            let row = p.g.row(i);
            m.ger(w, &row.transpose(), &row.transpose(), 1.0);
        }
        let mut kkt = DMatrix::zeros(n + me, n + me);
        kkt.view_mut((0, 0), (n, n)).copy_from(&m);
        kkt.view_mut((0, n), (n, me)).copy_from(&p.a.transpose());
        kkt.view_mut((n, 0), (me, n)).copy_from(&p.a);
        let lu = kkt.lu();

        let r_aff = s.component_mul(&z);
        let Some((_, _, dza, dsa)) = direction(p, &lu, &r, &s, &z, &r_aff) else {
            break;
        };
        let alpha_aff = max_step(&s, &dsa).min(max_step(&z, &dza));
        let mu_aff = if mi > 0 {
            (&s + &dsa * alpha_aff).dot(&(&z + &dza * alpha_aff)) / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };
        let r_cor = DVector::from_fn(mi, |i, _| s[i] * z[i] + dsa[i] * dza[i] - sigma * mu);
        let Some((dx, dy, dz, ds)) = direction(p, &lu, &r, &s, &z, &r_cor) else {
            break;
        };
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
    }

    let mut sol = QpSolution {
        residual: p.kkt_residual(&x, &y, &z),
        x,
        y,
        z,
        status,
        iterations,
        polished: false,
    };
    if sol.status != QpStatus::Infeasible {
        if let Some(polished) = polish(p, &sol, &s) {
            sol = polished;
        }
    }
    sol
}

/// Solve the equality-constrained QP on the active set guessed by the
/// interior point, then fix the guess by dropping negative multipliers and
/// adding violated rows. Kept only if it beats the interior-point residual.
fn polish(p: &QpProblem, ipm: &QpSolution, s: &DVector<f64>) -> Option<QpSolution> {
    let mut candidates: Vec<usize> = (0..p.g.nrows()).filter(|&i| ipm.z[i] > s[i]).collect();
    candidates.sort_by(|&i, &j| ipm.z[j].total_cmp(&ipm.z[i]).then(i.cmp(&j)));
    let mut active = independent_rows(p, &candidates);
    let scale = 1.0 + p.c.amax();
    for _ in 0..20 {
        let (x, y, za) = solve_active(p, &active)?;
        if let Some((j, _)) = za.iter().enumerate().filter(|(_, v)| **v < -1e-12 * scale).min_by(|a, b| a.1.total_cmp(b.1)) {
            active.remove(j);
            continue;
        }
        let viol = &p.g * &x - &p.h;
        let worst = (0..p.g.nrows())
            .filter(|i| !active.contains(i))
            .filter(|&i| viol[i] > 1e-12 * (1.0 + p.h[i].abs()))
            .max_by(|&i, &j| viol[i].total_cmp(&viol[j]));
        if let Some(i) = worst {
            let mut grown = active.clone();
            grown.push(i);
            let grown = independent_rows(p, &grown);
            if grown.len() == active.len() {
                return None;
            }
            active = grown;
            continue;
        }
        let mut z = DVector::zeros(p.g.nrows());
        for (j, &i) in active.iter().enumerate() {
            z[i] = za[j].max(0.0);
        }
        let residual = p.kkt_residual(&x, &y, &z);
        if residual > ipm.residual.max(1e-6) {
            return None;
        }
        return Some(QpSolution { x, y, z, status: QpStatus::Optimal, iterations: ipm.iterations, residual, polished: true });
    }
    None
}

/// Greedy subset of `rows` (in order) whose constraint normals, together
/// with the equality rows, stay linearly independent.
fn independent_rows(p: &QpProblem, rows: &[usize]) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut push = |v: DVector<f64>| -> bool {
        let mut r = v.clone();
        for b in &basis {
            r -= b * b.dot(&r);
        }
        let norm = r.norm();
        if norm > 1e-9 * (1.0 + v.norm()) {
            basis.push(r / norm);
            true
        } else {
            false
        }
    };
    for e in 0..p.a.nrows() {
        push(p.a.row(e).transpose());
    }
    rows.iter().copied().filter(|&i| push(p.g.row(i).transpose())).collect()
}

fn solve_active(p: &QpProblem, active: &[usize]) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = p.q.nrows();
    let me = p.a.nrows();
    let dim = n + me + active.len();
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.q);
    kkt.view_mut((0, n), (n, me)).copy_from(&p.a.transpose());
    kkt.view_mut((n, 0), (me, n)).copy_from(&p.a);
    rhs.rows_mut(0, n).copy_from(&(-&p.c));
    rhs.rows_mut(n, me).copy_from(&p.b);
    for (j, &i) in active.iter().enumerate() {
        let row = p.g.row(i);
        kkt.view_mut((n + me + j, 0), (1, n)).copy_from(&row);
        kkt.view_mut((0, n + me + j), (n, 1)).copy_from(&row.transpose());
        rhs[n + me + j] = p.h[i];
    }
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, me).into_owned(), sol.rows(n + me, active.len()).into_owned()))
}
