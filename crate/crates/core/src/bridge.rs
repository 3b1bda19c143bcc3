//! Entropic optimal transport between two discrete measures (a discrete
//! Schrödinger bridge).
//!
//! For `μ = Σ p_i δ_{x_i}`, `ν = Σ q_j δ_{y_j}` and cost `c(x,y) = ½‖x−y‖²/scale`
//! the bridge value is
//!
//! ```text
//! T_τ(μ,ν) = min_{γ ∈ Π(μ,ν)} ⟨c, γ⟩ + τ H(γ | μ⊗ν) = Σ u_i p_i + Σ v_j q_j
//! ```
//!
//! The dual potentials `(u, v)` are computed by alternating log-domain
//! updates
//!
//! ```text
//! u_i ← −τ log Σ_j exp((v_j − c_ij)/τ) q_j
//! v_j ← −τ log Σ_i exp((u_i − c_ij)/τ) p_i
//! ```
//!
//! and the optimal plan is `γ_ij = p_i q_j exp((u_i + v_j − c_ij)/τ)`.
//!
//! The unbalanced variant replaces the marginal constraints by KL penalties
//! of weight `ρ`; each update is then multiplied by `ρ/(ρ+τ)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::points::{sq_dist, Points, WeightedPoints};
use crate::types::{GrowthPrior, Rho};

/// Below this many cost entries the row/column updates run sequentially.
const PAR_THRESHOLD: usize = 2048;

/// Half squared Euclidean cost `c(x,y) = ½‖y−x‖² / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub scale: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl CostSpec {
    pub fn with_scale(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "cost scale must be positive, got {scale}"
            )));
        }
        Ok(Self { scale })
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * sq_dist(x, y) / self.scale
    }

    /// Writes `∇_x c(x,y) = (x − y)/scale` into `out`.
    #[inline]
    pub fn grad_x(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            out[k] = (x[k] - y[k]) / self.scale;
        }
    }

    /// Dense row-major `n×k` cost matrix.
    pub fn matrix(&self, source: &Points, target: &Points) -> Result<Vec<f64>> {
        let k = target.len();
        let mut c = vec![0.0; source.len() * k];
        for (i, x) in source.rows().enumerate() {
            for (j, y) in target.rows().enumerate() {
                c[i * k + j] = self.eval(x, y);
            }
        }
        if let Some(pos) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite cost entry at ({}, {})",
                pos / k,
                pos % k
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Stopping tolerance: L1 marginal violation (balanced) or largest dual
    /// update (unbalanced).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Dual potentials on the support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Result of one bridge solve. Owns copies of both measures so that the
/// potentials can be extended to arbitrary query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSolution {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub tau: f64,
    pub rho: Rho,
    pub cost: CostSpec,
    pub source: WeightedPoints,
    pub target: WeightedPoints,
    pub converged: bool,
    pub iterations: usize,
    /// `‖γ𝟙 − p‖₁ + ‖γᵀ𝟙 − q‖₁` of the returned plan.
    pub marginal_violation: f64,
}

/// Dense transport plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries `γ_ij`.
    pub data: Vec<f64>,
    /// False when the bridge it came from did not converge.
    pub converged: bool,
}

impl Coupling {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.data.chunks_exact(self.cols) {
            for (o, g) in out.iter_mut().zip(r) {
                *o += g;
            }
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `⟨c, γ⟩ + τ H(γ | p⊗q)` evaluated directly on the plan.
    pub fn entropic_cost(&self, cost: &[f64], tau: f64, p: &[f64], q: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let g = self.get(i, j);
                if g > 0.0 {
                    total += g * cost[i * self.cols + j] + tau * g * (g / (p[i] * q[j])).ln();
                }
            }
        }
        total
    }
}

/// Mass-corrected KL divergence `Σ a log(a/b) − Σ a + Σ b` between
/// nonnegative vectors.
pub fn kl_mass(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if x > 0.0 {
            s += x * (x / y).ln();
        }
        s += y - x;
    }
    s
}

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| x.ln()).collect()
}

fn check_measure(m: &WeightedPoints, name: &str) -> Result<()> {
    if m.is_empty() {
        return Err(Error::Config(format!("{name} measure is empty")));
    }
    if m.weights.len() != m.len() {
        return Err(Error::Config(format!("{name} weights do not match points")));
    }
    if m.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Input(format!("{name} weights must be finite and nonnegative")));
    }
    Ok(())
}

/// Cost matrix plus its transpose, so both half-steps read contiguous memory.
struct Kernel {
    n: usize,
    k: usize,
    c: Vec<f64>,
    ct: Vec<f64>,
    tau: f64,
}

impl Kernel {
    fn new(c: Vec<f64>, n: usize, k: usize, tau: f64) -> Self {
        let mut ct = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                ct[j * n + i] = c[i * k + j];
            }
        }
        Self { n, k, c, ct, tau }
    }

    /// `out_a = −scale·τ log Σ_b exp((pot_b − m_ab)/τ + logw_b)` for every row `a` of `m`.
    fn soft_min(
        m: &[f64],
        rows: usize,
        cols: usize,
        pot: &[f64],
        logw: &[f64],
        tau: f64,
        scale: f64,
        out: &mut [f64],
    ) {
        let inv_tau = 1.0 / tau;
        let row = |a: usize| -> f64 {
            let r = &m[a * cols..(a + 1) * cols];
            let mut t = vec![0.0; cols];
            let mut mx = f64::NEG_INFINITY;
            for b in 0..cols {
                t[b] = (pot[b] - r[b]) * inv_tau + logw[b];
                mx = mx.max(t[b]);
            }
            if mx == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            let s: f64 = t.iter().map(|x| (x - mx).exp()).sum();
            -scale * tau * (mx + s.ln())
        };
        if rows * cols >= PAR_THRESHOLD {
            let vals = par::map_range(rows, row);
            out.copy_from_slice(&vals);
        } else {
            for (a, o) in out.iter_mut().enumerate() {
                *o = row(a);
            }
        }
    }

    fn update_u(&self, v: &[f64], logq: &[f64], damp: f64, u: &mut [f64]) {
        Self::soft_min(&self.c, self.n, self.k, v, logq, self.tau, damp, u);
    }

    fn update_v(&self, u: &[f64], logp: &[f64], damp: f64, v: &mut [f64]) {
        Self::soft_min(&self.ct, self.k, self.n, u, logp, self.tau, damp, v);
    }

    fn plan(&self, u: &[f64], v: &[f64], p: &[f64], q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n * self.k];
        for i in 0..self.n {
            for j in 0..self.k {
                g[i * self.k + j] =
                    p[i] * q[j] * ((u[i] + v[j] - self.c[i * self.k + j]) / self.tau).exp();
            }
        }
        g
    }
}

fn violation(plan: &[f64], n: usize, k: usize, p: &[f64], q: &[f64]) -> f64 {
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            let g = plan[i * k + j];
            rows[i] += g;
            cols[j] += g;
        }
    }
    rows.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>()
        + cols.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn warm_duals(warm: Option<&DualPair>, n: usize, k: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let w = warm?;
    let usable = w.u.len() == n
        && w.v.len() == k
        && w.u.iter().chain(&w.v).all(|x| x.is_finite());
    usable.then(|| (w.u.clone(), w.v.clone()))
}

/// Balanced bridge between probability vectors.
///
/// Stops when the L1 violation of the plan's marginals is at most
/// `opts.tol`. Hitting `max_iter` is not an error: the solution comes back
/// with `converged = false`. Duals are gauge-fixed so that `Σ u p = Σ v q`.
pub fn sinkhorn_balanced(
    source: &WeightedPoints,
    target: &WeightedPoints,
    cost: CostSpec,
    tau: f64,
    opts: &SinkhornOptions,
    warm_start: Option<&DualPair>,
) -> Result<BridgeSolution> {
    check_measure(source, "source")?;
    check_measure(target, "target")?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("bridge temperature must be positive, got {tau}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Config("sinkhorn tolerance must be positive".into()));
    }
    let (n, k) = (source.len(), target.len());
    let kern = Kernel::new(cost.matrix(&source.points, &target.points)?, n, k, tau);
    let (p, q) = (&source.weights, &target.weights);
    let (logp, logq) = (log_weights(p), log_weights(q));

    let (mut u, mut v) = warm_duals(warm_start, n, k).unwrap_or((vec![0.0; n], vec![0.0; k]));
    let mut next_u = vec![0.0; n];
    kern.update_u(&v, &logq, 1.0, &mut next_u);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        std::mem::swap(&mut u, &mut next_u);
        kern.update_v(&u, &logp, 1.0, &mut v);
        // The columns of (u, v) are exact; the next u-update measures the rows.
        kern.update_u(&v, &logq, 1.0, &mut next_u);
        let row_violation: f64 = (0..n)
            .map(|i| p[i] * (((u[i] - next_u[i]) / tau).exp() - 1.0).abs())
            .sum();
        if row_violation <= opts.tol {
            converged = true;
            break;
        }
    }

    gauge_fix(&mut u, &mut v, p, q);
    let plan = kern.plan(&u, &v, p, q);
    let marginal_violation = violation(&plan, n, k, p, q);
    Ok(BridgeSolution {
        u,
        v,
        tau,
        rho: Rho::INFINITE,
        cost,
        source: source.clone(),
        target: target.clone(),
        converged,
        iterations,
        marginal_violation,
    })
}

/// Shifts `(u, v) → (u + κ, v − κ)` so that `Σ u_i p_i = Σ v_j q_j`.
pub fn gauge_fix(u: &mut [f64], v: &mut [f64], p: &[f64], q: &[f64]) {
    let su: f64 = u.iter().zip(p).map(|(a, b)| a * b).sum();
    let sv: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
    let kappa = (sv - su) / 2.0;
    u.iter_mut().for_each(|x| *x += kappa);
    v.iter_mut().for_each(|x| *x -= kappa);
}

/// Unbalanced bridge with KL marginal penalties of weight `rho`.
///
/// `rho = ∞` dispatches to [`sinkhorn_balanced`]. For finite `rho` the
/// iteration stops once the largest change of either dual is at most
/// `opts.tol`.
pub fn sinkhorn_unbalanced(
    source: &WeightedPoints,
    target: &WeightedPoints,
    cost: CostSpec,
    tau: f64,
    rho: Rho,
    opts: &SinkhornOptions,
    warm_start: Option<&DualPair>,
) -> Result<BridgeSolution> {
    if !(rho.0 > 0.0) {
        return Err(Error::Config(format!("rho must be positive, got {}", rho.0)));
    }
    if rho.is_infinite() {
        return sinkhorn_balanced(source, target, cost, tau, opts, warm_start);
    }
    check_measure(source, "source")?;
    check_measure(target, "target")?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("bridge temperature must be positive, got {tau}")));
    }
    let (n, k) = (source.len(), target.len());
    let kern = Kernel::new(cost.matrix(&source.points, &target.points)?, n, k, tau);
    let (p, q) = (&source.weights, &target.weights);
    let (logp, logq) = (log_weights(p), log_weights(q));
    let damp = rho.0 / (rho.0 + tau);

    let (mut u, mut v) = warm_duals(warm_start, n, k).unwrap_or((vec![0.0; n], vec![0.0; k]));
    let mut new_u = vec![0.0; n];
    let mut new_v = vec![0.0; k];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        kern.update_u(&v, &logq, damp, &mut new_u);
        kern.update_v(&new_u, &logp, damp, &mut new_v);
        let du = new_u
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dv = new_v
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut u, &mut new_u);
        std::mem::swap(&mut v, &mut new_v);
        if du.max(dv) <= opts.tol {
            converged = true;
            break;
        }
    }
    let plan = kern.plan(&u, &v, p, q);
    let marginal_violation = violation(&plan, n, k, p, q);
    Ok(BridgeSolution {
        u,
        v,
        tau,
        rho,
        cost,
        source: source.clone(),
        target: target.clone(),
        converged,
        iterations,
        marginal_violation,
    })
}

/// Reweights the endpoints of a bridge by a growth prior:
/// source weights by `exp(−g(t_src, x)·dt/2)`, target weights by
/// `exp(+g(t_tgt, y)·dt/2)`, each renormalized to sum one.
pub fn tilt_marginals(
    mu: &WeightedPoints,
    nu: &WeightedPoints,
    growth: &GrowthPrior,
    t_src: f64,
    t_tgt: f64,
    dt: f64,
) -> Result<(WeightedPoints, WeightedPoints)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("tilt interval must be positive, got {dt}")));
    }
    let tilt = |m: &WeightedPoints, t: f64, sign: f64| -> Result<WeightedPoints> {
        let mut logs = Vec::with_capacity(m.len());
        for (x, w) in m.points.rows().zip(&m.weights) {
            let e = sign * growth.rate(t, x) * dt / 2.0;
            if !e.is_finite() || e.abs() > 700.0 {
                return Err(Error::Input(format!(
                    "growth tilt exponent {e} overflows; rescale the growth rate or time units"
                )));
            }
            logs.push(w.ln() + e);
        }
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
        WeightedPoints::normalized(m.points.clone(), w)
    };
    Ok((tilt(mu, t_src, -1.0)?, tilt(nu, t_tgt, 1.0)?))
}

impl BridgeSolution {
    pub fn duals(&self) -> DualPair {
        DualPair {
            u: self.u.clone(),
            v: self.v.clone(),
        }
    }

    /// Multiplier on the soft-min: `ρ/(ρ+τ)`, or 1 when balanced.
    fn damping(&self) -> f64 {
        if self.rho.is_infinite() {
            1.0
        } else {
            self.rho.0 / (self.rho.0 + self.tau)
        }
    }

    /// Softmax weights `∝ exp((pot_b − c(x, z_b))/τ) w_b` over the other side.
    fn conditional_weights(&self, x: &[f64], other: &WeightedPoints, pot: &[f64], out: &mut [f64]) -> f64 {
        let mut mx = f64::NEG_INFINITY;
        for (b, z) in other.points.rows().enumerate() {
            let t = (pot[b] - self.cost.eval(x, z)) / self.tau + other.weights[b].ln();
            out[b] = t;
            if t > mx {
                mx = t;
            }
        }
        let mut s = 0.0;
        for o in out.iter_mut() {
            *o = (*o - mx).exp();
            s += *o;
        }
        for o in out.iter_mut() {
            *o /= s;
        }
        mx + s.ln()
    }

    fn extend(&self, queries: &Points, other: &WeightedPoints, pot: &[f64]) -> Vec<f64> {
        let damp = self.damping();
        par::map_range(queries.len(), |a| {
            let mut w = vec![0.0; other.len()];
            -damp * self.tau * self.conditional_weights(queries.row(a), other, pot, &mut w)
        })
    }

    fn gradient(&self, queries: &Points, other: &WeightedPoints, pot: &[f64]) -> Points {
        let d = queries.dim();
        let damp = self.damping();
        let mut out = Points::zeros(queries.len(), d);
        par::for_each_chunk_mut(out.as_mut_slice(), d, |a, g| {
            let x = queries.row(a);
            let mut w = vec![0.0; other.len()];
            self.conditional_weights(x, other, pot, &mut w);
            for (b, z) in other.points.rows().enumerate() {
                for k in 0..d {
                    g[k] += w[b] * (x[k] - z[k]);
                }
            }
            for gk in g.iter_mut() {
                *gk *= damp / self.cost.scale;
            }
        });
        out
    }

    /// Source-side potential `φ(x) = −τ log Σ_j exp((v_j − c(x,y_j))/τ) q_j`.
    pub fn extend_source_potential(&self, queries: &Points) -> Vec<f64> {
        self.extend(queries, &self.target, &self.v)
    }

    /// Target-side potential `ψ(y) = −τ log Σ_i exp((u_i − c(x_i,y))/τ) p_i`.
    pub fn extend_target_potential(&self, queries: &Points) -> Vec<f64> {
        self.extend(queries, &self.source, &self.u)
    }

    /// `∇φ(x) = E[∇_x c(X,Y) | X = x]` under the plan's conditional law.
    pub fn source_potential_gradient(&self, queries: &Points) -> Points {
        self.gradient(queries, &self.target, &self.v)
    }

    /// `∇ψ(y) = E[∇_y c(X,Y) | Y = y]`.
    pub fn target_potential_gradient(&self, queries: &Points) -> Points {
        self.gradient(queries, &self.source, &self.u)
    }

    pub fn cost_matrix(&self) -> Vec<f64> {
        self.cost
            .matrix(&self.source.points, &self.target.points)
            .expect("cost was finite when the bridge was solved")
    }

    pub fn coupling(&self) -> Coupling {
        let (n, k) = (self.source.len(), self.target.len());
        let kern = Kernel::new(self.cost_matrix(), n, k, self.tau);
        if !self.converged {
            log::warn!(
                "coupling recovered from an unconverged bridge (violation {:.3e})",
                self.marginal_violation
            );
        }
        Coupling {
            rows: n,
            cols: k,
            data: kern.plan(&self.u, &self.v, &self.source.weights, &self.target.weights),
            converged: self.converged,
        }
    }

    /// Optimal value. Balanced: `Σ u p + Σ v q`. Unbalanced: the penalized
    /// primal objective evaluated on the plan.
    pub fn primal_value(&self) -> f64 {
        let (p, q) = (&self.source.weights, &self.target.weights);
        if self.rho.is_infinite() {
            self.u.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()
                + self.v.iter().zip(q).map(|(a, b)| a * b).sum::<f64>()
        } else {
            let plan = self.coupling();
            let c = self.cost_matrix();
            let mut linear = 0.0;
            let mut ent = 0.0;
            for i in 0..plan.rows {
                for j in 0..plan.cols {
                    let g = plan.get(i, j);
                    linear += g * c[i * plan.cols + j];
                    ent += if g > 0.0 { g * (g / (p[i] * q[j])).ln() } else { 0.0 } - g + p[i] * q[j];
                }
            }
            linear
                + self.rho.0 * kl_mass(&plan.row_marginal(), p)
                + self.rho.0 * kl_mass(&plan.col_marginal(), q)
                + self.tau * ent
        }
    }

    /// Writes `kind,i,j,value` rows for `u`, `v` and the plan entries.
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "kind,i,j,value")?;
        for (i, x) in self.u.iter().enumerate() {
            writeln!(w, "u,{i},,{x}")?;
        }
        for (j, x) in self.v.iter().enumerate() {
            writeln!(w, "v,,{j},{x}")?;
        }
        let plan = self.coupling();
        for i in 0..plan.rows {
            for j in 0..plan.cols {
                writeln!(w, "gamma,{i},{j},{}", plan.get(i, j))?;
            }
        }
        Ok(())
    }
}
