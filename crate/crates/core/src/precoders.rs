//! Linear downlink precoders: conventional MMSE and the robust MMSE family.
//!
//! The robust precoder minimizes `E‖s − f⁻¹y‖² + E‖Δ‖²` subject to
//! `tr(PP^H) = P_t`, where `Δ` is the part of the received signal caused
//! by the estimation error. Its stationary point is
//!
//! ```text
//! P  = f_τ · (Ĝ*Ĝ^T + (1 + f²)Θ + λ f_τ² I)⁻¹ Ĝ*,     f_τ = f·τ
//! f  = (1/τ) √(P_t / tr(P̄P̄^H))
//! λ  = tr(R_n)/(f² P_t) − tr(P^H Θ P)/(τ² P_t)
//! ```
//!
//! with `Θ = E[G̃*G̃^T]`. `P` and `λ` depend on each other, so they are
//! found by alternating updates started from the conventional MMSE precoder.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::LargeScaleMatrix;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{frobenius, frobenius_sq, inner_gram, outer_gram, solve_hermitian, CMatrix};
use crate::selection::{reduced_estimate, ClusterPlan, SparseChannel};

/// How `E[G̃*G̃^T]` is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    /// `σe²·I`. Only on the right scale when the channel is normalized so
    /// that `ζ ≈ 1`; with physical path loss it swamps `Ĝ*Ĝ^T`.
    IdentityScaled,
    /// `diag(σe²·Σ_k ζ_{n,k})`, the exact expectation under the channel model.
    #[default]
    ExactDiagonal,
}

/// Error covariance `Θ`. Both modes produce a diagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCovariance {
    pub mode: ThetaMode,
    diag: DVector<f64>,
    /// `σe²·ζ`, kept so the covariance can be restricted to a user subset.
    per_user: Option<DMatrix<f64>>,
    sigma_e2: f64,
}

pub fn error_covariance(
    zeta: &LargeScaleMatrix,
    sigma_e: f64,
    mode: ThetaMode,
) -> Result<ErrorCovariance> {
    if !(sigma_e >= 0.0 && sigma_e.is_finite()) {
        return Err(Error::domain(format!(
            "sigma_e must be nonnegative, got {sigma_e}"
        )));
    }
    let sigma_e2 = sigma_e * sigma_e;
    let n = zeta.n_aps();
    Ok(match mode {
        ThetaMode::IdentityScaled => ErrorCovariance {
            mode,
            diag: DVector::from_element(n, sigma_e2),
            per_user: None,
            sigma_e2,
        },
        ThetaMode::ExactDiagonal => {
            let per_user = zeta.matrix() * sigma_e2;
            let diag = DVector::from_fn(n, |i, _| per_user.row(i).sum());
            ErrorCovariance {
                mode,
                diag,
                per_user: Some(per_user),
                sigma_e2,
            }
        }
    })
}

impl ErrorCovariance {
    pub fn n_aps(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn matrix(&self) -> CMatrix {
        CMatrix::from_diagonal(&self.diag.map(|d| Complex64::new(d, 0.0)))
    }

    /// `Some(θ)` when `Θ = θ·I`.
    pub fn scalar(&self) -> Option<f64> {
        let first = self.diag[0];
        self.diag.iter().all(|&d| d == first).then_some(first)
    }

    /// `E[G̃_U*G̃_U^T]` for the users in `users`.
    pub fn restricted(&self, users: &[usize]) -> ErrorCovariance {
        match &self.per_user {
            None => self.clone(),
            Some(per_user) => {
                let diag = DVector::from_fn(per_user.nrows(), |i, _| {
                    users.iter().map(|&k| per_user[(i, k)]).sum()
                });
                ErrorCovariance {
                    mode: self.mode,
                    diag,
                    per_user: Some(per_user.select_columns(users)),
                    sigma_e2: self.sigma_e2,
                }
            }
        }
    }

    /// `tr(P^H Θ P)`.
    pub fn quadratic_trace(&self, p: &CMatrix) -> f64 {
        p.row_iter()
            .zip(self.diag.iter())
            .map(|(row, d)| d * row.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustSolveSettings {
    pub max_iterations: usize,
    pub convergence_tol: f64,
    /// Relative diagonal shift (times `tr(Ĝ*Ĝ^T)/N`) used when a factorization fails.
    pub jitter: f64,
}

impl Default for RobustSolveSettings {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            convergence_tol: 1e-8,
            jitter: 1e-10,
        }
    }
}

impl RobustSolveSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::domain("solver.max_iterations must be at least 1"));
        }
        if !(self.convergence_tol > 0.0) || !(self.jitter > 0.0) {
            return Err(Error::domain("solver tolerances must be positive"));
        }
        Ok(())
    }
}

/// Per-iteration record of the alternating updates. Entry 0 is the initializer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub lambda: Vec<f64>,
    pub f: Vec<f64>,
    /// `‖P[i] − P[i−1]‖ / ‖P[i−1]‖`, starting at iteration 1.
    pub change: Vec<f64>,
}

/// Summary of one per-cluster solve of the reduced-dimension precoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSolve {
    pub user: usize,
    pub size: usize,
    pub budget: f64,
    pub f: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct PrecoderMatrix {
    /// `N×K`, column `k` serves user `k`.
    pub p: CMatrix,
    /// Receive gain factor `f`. For the clustered precoder, the mean over clusters.
    pub f: f64,
    /// Loading term `λ`. For the clustered precoder, the mean over clusters.
    pub lambda: f64,
    pub total_power: f64,
    pub iterations_run: usize,
    /// Relative stationarity residual of the returned `(P, f, λ)`; for the
    /// clustered precoder, the worst cluster.
    pub residual: f64,
    pub jittered: bool,
    pub trace: SolveTrace,
    pub clusters: Vec<ClusterSolve>,
    /// Factor applied to the assembled clustered precoder to reach `P_t` (1 otherwise).
    pub rescale: f64,
}

impl PrecoderMatrix {
    pub fn power(&self) -> f64 {
        frobenius_sq(&self.p)
    }
}

/// The data a robust solve needs: channel, `Θ`, power budget, `tr(R_n)` and `τ`.
struct Problem<'a> {
    g: &'a CMatrix,
    theta: &'a ErrorCovariance,
    budget: f64,
    noise_trace: f64,
    tau: f64,
}

impl Problem<'_> {
    fn check(&self) -> Result<()> {
        if self.g.nrows() != self.theta.n_aps() {
            return Err(Error::domain(format!(
                "channel has {} APs but error covariance has {}",
                self.g.nrows(),
                self.theta.n_aps()
            )));
        }
        if self.g.ncols() == 0 {
            return Err(Error::domain("channel has no users"));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::domain(format!(
                "power budget must be positive, got {}",
                self.budget
            )));
        }
        if !(self.noise_trace > 0.0) {
            return Err(Error::domain("noise variance must be positive"));
        }
        if !(self.tau >= 1.0) {
            return Err(Error::domain(format!(
                "tau must be at least 1, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    fn jitter(&self, relative: f64) -> f64 {
        let scale = frobenius_sq(self.g) / self.g.nrows() as f64;
        relative * if scale > 0.0 { scale } else { 1.0 }
    }

    /// `(Ĝ*Ĝ^T + diag(loading))⁻¹ Ĝ*`.
    fn regularized_solve(&self, loading: &DVector<f64>, jitter: f64) -> Result<(CMatrix, bool)> {
        let (n, k) = self.g.shape();
        let mu = loading[0];
        if k < n && mu > 0.0 && loading.iter().all(|&d| d == mu) {
            return solve_dual(self.g, mu, jitter);
        }
        let mut a = outer_gram(self.g);
        for (i, d) in loading.iter().enumerate() {
            a[(i, i)].re += d;
        }
        let sol = solve_hermitian(a, &self.g.conjugate(), jitter)?;
        Ok((sol.x, sol.jitter > 0.0))
    }

    /// Diagonal of `(1 + f²)Θ + λ f_τ² I` with `λ` given by its update rule
    /// for the iterate `p`:
    ///
    /// ```text
    /// Θ + (τ² tr(R_n)/P_t) I + f² (Θ − (tr(P^H Θ P)/tr(PP^H)) I)
    /// ```
    ///
    /// The last term is formed from differences `θ_n − θ_m`, so it is exactly
    /// zero when `Θ` is a multiple of the identity. Evaluating the two large
    /// terms separately loses all precision once `f²` is large, which happens
    /// whenever `Θ` dominates `Ĝ*Ĝ^T`.
    fn loading(&self, p: &CMatrix, f: f64) -> DVector<f64> {
        let theta = self.theta.diagonal();
        let base = self.tau * self.tau * self.noise_trace / self.budget;
        let weights: Vec<f64> = p
            .row_iter()
            .map(|r| r.iter().map(|z| z.norm_sqr()).sum())
            .collect();
        let total: f64 = weights.iter().sum();
        DVector::from_fn(theta.len(), |n, _| {
            let spread: f64 = weights
                .iter()
                .zip(theta.iter())
                .map(|(w, tm)| w * (theta[n] - tm))
                .sum::<f64>()
                / total;
            theta[n] + base + f * f * spread
        })
    }

    /// `‖(Ĝ*Ĝ^T + (1+f²)Θ + λ f_τ² I)P − f_τĜ*‖ / ‖f_τĜ*‖` with `λ` eliminated
    /// through its update rule (see [`Problem::loading`]).
    fn stationarity_residual(&self, p: &CMatrix, f: f64) -> f64 {
        let f_tau = f * self.tau;
        let gc = self.g.conjugate();
        let mut lhs = &gc * (self.g.transpose() * p);
        for ((mut row, prow), d) in lhs
            .row_iter_mut()
            .zip(p.row_iter())
            .zip(self.loading(p, f).iter())
        {
            row += prow * Complex64::new(*d, 0.0);
        }
        let target = &gc * Complex64::new(f_tau, 0.0);
        frobenius(&(lhs - &target)) / frobenius(&target)
    }
}

/// `Ĝ*(Ĝ^TĜ* + μI)⁻¹`, equal to `(Ĝ*Ĝ^T + μI)⁻¹Ĝ*` and cheaper when `K < N`.
fn solve_dual(g: &CMatrix, mu: f64, jitter: f64) -> Result<(CMatrix, bool)> {
    let mut m = inner_gram(g);
    for i in 0..m.nrows() {
        m[(i, i)].re += mu;
    }
    let sol = solve_hermitian(m, &g.transpose(), jitter)?;
    Ok((sol.x.adjoint(), sol.jitter > 0.0))
}

/// `(1/τ)·√(P_t / tr(P̄P̄^H))`.
pub fn scale_factor(p_bar: &CMatrix, p_t: f64, tau: f64) -> Result<f64> {
    let tr = frobenius_sq(p_bar);
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::domain("precoder is identically zero"));
    }
    if !(p_t > 0.0) {
        return Err(Error::domain("power budget must be positive"));
    }
    Ok((p_t / tr).sqrt() / tau)
}

/// `λ = tr(R_n)/(f² P_t) − tr(P^H Θ P)/(τ² P_t)`.
pub fn update_lambda(
    p: &CMatrix,
    f: f64,
    noise_trace: f64,
    theta: &ErrorCovariance,
    tau: f64,
    p_t: f64,
) -> Result<f64> {
    if !(p_t > 0.0) || !(f > 0.0) {
        return Err(Error::domain("update_lambda needs positive P_t and f"));
    }
    Ok(noise_trace / (f * f * p_t) - theta.quadratic_trace(p) / (tau * tau * p_t))
}

fn conventional(problem: &Problem<'_>, jitter: f64) -> Result<(CMatrix, f64, bool)> {
    let load = problem.noise_trace / problem.budget;
    let loading = DVector::from_element(problem.g.nrows(), load);
    let (p_bar, jittered) = problem.regularized_solve(&loading, jitter)?;
    let f = scale_factor(&p_bar, problem.budget, 1.0)?;
    Ok((p_bar * Complex64::new(f, 0.0), f, jittered))
}

/// Conventional MMSE: `(Ĝ*Ĝ^T + (Kσn²/P_t)I)⁻¹Ĝ*`, scaled to `tr(PP^H) = P_t`.
pub fn mmse_conventional(g_hat: &CMatrix, p_t: f64, sigma_n2: f64) -> Result<PrecoderMatrix> {
    let k = g_hat.ncols();
    let zero = ErrorCovariance {
        mode: ThetaMode::IdentityScaled,
        diag: DVector::zeros(g_hat.nrows()),
        per_user: None,
        sigma_e2: 0.0,
    };
    let problem = Problem {
        g: g_hat,
        theta: &zero,
        budget: p_t,
        noise_trace: k as f64 * sigma_n2,
        tau: 1.0,
    };
    problem.check()?;
    let (p, f, _) = conventional(&problem, 0.0)?;
    let lambda = problem.noise_trace / (f * f * p_t);
    let residual = problem.stationarity_residual(&p, f);
    Ok(PrecoderMatrix {
        total_power: frobenius_sq(&p),
        p,
        f,
        lambda,
        iterations_run: 0,
        residual,
        jittered: false,
        trace: SolveTrace {
            lambda: vec![lambda],
            f: vec![f],
            change: Vec::new(),
        },
        clusters: Vec::new(),
        rescale: 1.0,
    })
}

fn solve_robust(problem: &Problem<'_>, settings: &RobustSolveSettings) -> Result<PrecoderMatrix> {
    problem.check()?;
    settings.validate()?;
    let jitter = problem.jitter(settings.jitter);
    let (budget, tau) = (problem.budget, problem.tau);

    let (mut p, mut f, mut jittered) = conventional(problem, jitter)?;
    let mut lambda = update_lambda(&p, f, problem.noise_trace, problem.theta, tau, budget)?;
    let mut trace = SolveTrace {
        lambda: vec![lambda],
        f: vec![f],
        change: Vec::new(),
    };

    let mut iterations = 0;
    for _ in 0..settings.max_iterations {
        iterations += 1;
        let (p_bar, j) = problem.regularized_solve(&problem.loading(&p, f), jitter)?;
        jittered |= j;
        f = scale_factor(&p_bar, budget, tau)?;
        let next = p_bar * Complex64::new(f * tau, 0.0);
        lambda = update_lambda(&next, f, problem.noise_trace, problem.theta, tau, budget)?;
        let change = frobenius(&(&next - &p)) / frobenius(&p);
        p = next;
        trace.lambda.push(lambda);
        trace.f.push(f);
        trace.change.push(change);
        if !change.is_finite() {
            return Err(Error::Numerical("robust MMSE iteration diverged".into()));
        }
        if change < settings.convergence_tol {
            break;
        }
    }

    let residual = problem.stationarity_residual(&p, f);
    Ok(PrecoderMatrix {
        total_power: frobenius_sq(&p),
        p,
        f,
        lambda,
        iterations_run: iterations,
        residual,
        jittered,
        trace,
        clusters: Vec::new(),
        rescale: 1.0,
    })
}

/// Network-wide robust MMSE by alternating `P`/`λ` updates.
pub fn robust_mmse(
    g_hat: &CMatrix,
    theta: &ErrorCovariance,
    p_t: f64,
    sigma_n2: f64,
    tau: f64,
    settings: &RobustSolveSettings,
) -> Result<PrecoderMatrix> {
    let problem = Problem {
        g: g_hat,
        theta,
        budget: p_t,
        noise_trace: g_hat.ncols() as f64 * sigma_n2,
        tau,
    };
    solve_robust(&problem, settings)
}

/// Robust MMSE on the AP-selected sparse channel `Ḡ`.
pub fn robust_mmse_sparse(
    sparse: &SparseChannel,
    theta: &ErrorCovariance,
    p_t: f64,
    sigma_n2: f64,
    tau: f64,
    settings: &RobustSolveSettings,
) -> Result<PrecoderMatrix> {
    robust_mmse(&sparse.g_bar, theta, p_t, sigma_n2, tau, settings)
}

/// Reduced-dimension robust MMSE: one robust solve per user cluster with
/// budget `|U_k|·P_t/K`, keeping only the column that serves user `k`.
pub fn robust_mmse_clustered(
    g_hat: &CMatrix,
    plan: &ClusterPlan,
    theta: &ErrorCovariance,
    p_t: f64,
    sigma_n2: f64,
    tau: f64,
    settings: &RobustSolveSettings,
) -> Result<PrecoderMatrix> {
    robust_mmse_clustered_with(
        g_hat,
        plan,
        theta,
        p_t,
        sigma_n2,
        tau,
        settings,
        Execution::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn robust_mmse_clustered_with(
    g_hat: &CMatrix,
    plan: &ClusterPlan,
    theta: &ErrorCovariance,
    p_t: f64,
    sigma_n2: f64,
    tau: f64,
    settings: &RobustSolveSettings,
    exec: Execution,
) -> Result<PrecoderMatrix> {
    let (n, k_users) = g_hat.shape();
    if plan.n_users() != k_users {
        return Err(Error::domain(format!(
            "cluster plan has {} users, channel has {k_users}",
            plan.n_users()
        )));
    }
    let solves = exec.map(
        0..k_users,
        |k| -> Result<(Vec<Complex64>, ClusterSolve, bool)> {
            let users = &plan.user_sets[k];
            let g_k = reduced_estimate(g_hat, plan, k)?;
            let theta_k = theta.restricted(users);
            let size = users.len();
            let problem = Problem {
                g: &g_k,
                theta: &theta_k,
                budget: size as f64 * p_t / k_users as f64,
                noise_trace: size as f64 * sigma_n2,
                tau,
            };
            let sol = solve_robust(&problem, settings)
                .map_err(|e| Error::Numerical(format!("cluster of user {k}: {e}")))?;
            let column = sol.p.column(plan.index_map[k]).iter().copied().collect();
            let record = ClusterSolve {
                user: k,
                size,
                budget: problem.budget,
                f: sol.f,
                lambda: sol.lambda,
                iterations: sol.iterations_run,
                residual: sol.residual,
            };
            Ok((column, record, sol.jittered))
        },
    );

    let mut p = CMatrix::zeros(n, k_users);
    let mut clusters = Vec::with_capacity(k_users);
    let mut jittered = false;
    for (k, solve) in solves.into_iter().enumerate() {
        let (column, record, j) = solve?;
        p.set_column(k, &nalgebra::DVector::from_vec(column));
        clusters.push(record);
        jittered |= j;
    }

    let assembled = frobenius_sq(&p);
    if !(assembled > 0.0) {
        return Err(Error::Numerical(
            "assembled clustered precoder is zero".into(),
        ));
    }
    let rescale = (p_t / assembled).sqrt();
    p *= Complex64::new(rescale, 0.0);

    let kf = k_users as f64;
    Ok(PrecoderMatrix {
        total_power: frobenius_sq(&p),
        p,
        f: clusters.iter().map(|c| c.f).sum::<f64>() / kf,
        lambda: clusters.iter().map(|c| c.lambda).sum::<f64>() / kf,
        iterations_run: clusters.iter().map(|c| c.iterations).max().unwrap_or(0),
        residual: clusters.iter().map(|c| c.residual).fold(0.0, f64::max),
        jittered,
        trace: SolveTrace::default(),
        clusters,
        rescale,
    })
}
