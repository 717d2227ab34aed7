//! The estimating equation `F_n(theta) = 0`, its solver, rate matrices,
//! plug-in asymptotic covariance and confidence intervals.
//!
//! `F_n(theta) = (1/n) sum_(i < floor(n/2)) [ f(rho_i) - P_n f(X_(2i dn), theta) ]`
//!
//! with `rho_i` the normalised symmetrized increment. The normalisation
//! `1/n` over `floor(n/2)` terms is kept verbatim; the matching factors 1/2
//! inside the limit matrices Sigma and W then cancel identically (locked by
//! the det W identity test).
//!
//! Root finding: the raw Newton basin is small because the (delta, alpha)
//! pair is near-unidentified (the rate matrix is non-diagonal for exactly
//! this reason), so the solver first profiles alpha - for each alpha on a
//! scan grid it solves the two-parameter system in (sigma^2, delta) (the
//! known-alpha problem, which is effectively monotone) and tracks the scaled
//! third residual g(alpha); a bracketed root of g is then refined and handed
//! to a damped Newton polish on the full system. `converged` means the
//! polished root satisfies `|A_n F_n|_inf < tol`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, FourierKernelTable};
use crate::linalg::{self, Mat3, Vec3};
use crate::moment_engine::{grad_pn_f1, pn_f1, Theta, ThetaWorkspace, TuningConfig};
use crate::quad;
use crate::sde_sim::{ModelParams, PathSample};
use crate::stable_levy::c_alpha;

/// Asymptotic regime of the observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// n delta_n = T fixed; limit matrices use I(alpha, X) over the window
    FixedWindow,
    /// n delta_n -> infinity with b > 0; I is replaced by the stationary
    /// moment estimated by the path average
    Ergodic,
}

/// Solver box: Theta shrunk away from its boundary. The alpha side reuses
/// the stable-law guard so every plug-in quantity stays evaluable at
/// theta-hat.
const SIGMA_SQ_BOX: (f64, f64) = (1e-3, 1e9);
const DELTA_BOX: (f64, f64) = (1e-3, 1e9);
const ALPHA_BOX: (f64, f64) = (1.01, 1.99);

/// Normalised symmetrized increments
/// `rho_i = (u_n/sqrt(dn)) (X_((2i+2)dn) - 2 X_((2i+1)dn) + X_(2i dn)) / sqrt(X_(2i dn))`
/// paired with their base states.
#[derive(Debug, Clone)]
pub struct SymmetrizedIncrements {
    pub rho: Vec<f64>,
    pub x_base: Vec<f64>,
    /// full sample count n (the estimating-function normalisation)
    pub n: usize,
}

pub fn symmetrized_increments(
    path: &PathSample,
    tuning: &TuningConfig,
) -> Result<SymmetrizedIncrements> {
    path.validate()?;
    if path.observations.len() < 3 {
        return Err(Error::Config("need at least 3 observations".into()));
    }
    if path.n != tuning.n {
        return Err(Error::Config(format!(
            "tuning n = {} does not match path n = {}",
            tuning.n, path.n
        )));
    }
    let scale = tuning.u_over_sqrt_dn();
    let m = path.n / 2;
    let mut rho = Vec::with_capacity(m);
    let mut x_base = Vec::with_capacity(m);
    let obs = &path.observations;
    for i in 0..m {
        let base = obs[2 * i];
        if !(base > 0.0) {
            return Err(Error::Positivity(format!(
                "base state {base} at index {}",
                2 * i
            )));
        }
        rho.push(scale * (obs[2 * i + 2] - 2.0 * obs[2 * i + 1] + obs[2 * i]) / base.sqrt());
        x_base.push(base);
    }
    Ok(SymmetrizedIncrements {
        rho,
        x_base,
        n: path.n,
    })
}

/// The data side of the estimating equation plus everything needed to
/// evaluate it at arbitrary theta. Synthetic data moments (exact-root
/// fixtures) plug in through [`EstimationProblem::with_moments`].
pub struct EstimationProblem {
    pub x_base: Vec<f64>,
    pub data_moments: [f64; 3],
    pub tuning: TuningConfig,
}

struct FnEval {
    f: Vec3,
    jac: Mat3,
}

impl EstimationProblem {
    pub fn from_increments(incr: &SymmetrizedIncrements, tuning: &TuningConfig) -> Self {
        let n = incr.n as f64;
        let mut dm = [0.0f64; 3];
        for &r in &incr.rho {
            dm[0] += r.cos();
            dm[1] += kernels::kernel_value(kernels::KernelId::F2Trunc, r);
            dm[2] += kernels::kernel_value(kernels::KernelId::F3TruncHalfScale, r);
        }
        for d in &mut dm {
            *d /= n;
        }
        Self {
            x_base: incr.x_base.clone(),
            data_moments: dm,
            tuning: *tuning,
        }
    }

    /// Synthetic centering: data moments equal to the averaged centering
    /// terms at some theta*, making `F_n(theta*) = 0` identically.
    pub fn with_moments(x_base: Vec<f64>, data_moments: [f64; 3], tuning: &TuningConfig) -> Self {
        Self {
            x_base,
            data_moments,
            tuning: *tuning,
        }
    }

    /// `F_n(theta)` and its Jacobian `grad F_n = -(1/n) sum grad P_n f`;
    /// the truncation-kernel sums go through the batched Chebyshev path.
    fn eval(&self, theta: &Theta, want_grad: bool) -> Result<FnEval> {
        let ws = ThetaWorkspace::new(FourierKernelTable::shared(), *theta, self.tuning)?;
        let n = self.tuning.n as f64;
        let mut pn_sum = [0.0f64; 3];
        let mut grad_sum = [[0.0f64; 3]; 3];
        let entries = ws.eval_batch(&self.x_base)?;
        for (&x, ev) in self.x_base.iter().zip(&entries) {
            pn_sum[0] += pn_f1(x, theta, &self.tuning)?;
            pn_sum[1] += ev.pn_f2;
            pn_sum[2] += ev.pn_f3;
            if want_grad {
                let g1 = grad_pn_f1(x, theta, &self.tuning)?;
                for k in 0..3 {
                    grad_sum[0][k] += g1[k];
                    grad_sum[1][k] += ev.grad_f2[k];
                    grad_sum[2][k] += ev.grad_f3[k];
                }
            }
        }
        let mut f = [0.0f64; 3];
        let mut jac = [[0.0f64; 3]; 3];
        for r in 0..3 {
            f[r] = self.data_moments[r] - pn_sum[r] / n;
            for c in 0..3 {
                jac[r][c] = -grad_sum[r][c] / n;
            }
        }
        Ok(FnEval { f, jac })
    }
}

/// Public operation: `F_n(theta)` on a set of increments.
pub fn estimating_function(
    theta: &Theta,
    incr: &SymmetrizedIncrements,
    tuning: &TuningConfig,
) -> Result<Vec3> {
    if incr.x_base.is_empty() {
        return Ok([0.0; 3]);
    }
    let prob = EstimationProblem::from_increments(incr, tuning);
    Ok(prob.eval(theta, false)?.f)
}

/// Public operation: `grad_theta F_n(theta)`.
pub fn jacobian(
    theta: &Theta,
    incr: &SymmetrizedIncrements,
    tuning: &TuningConfig,
) -> Result<Mat3> {
    if incr.x_base.is_empty() {
        return Ok([[0.0; 3]; 3]);
    }
    let prob = EstimationProblem::from_increments(incr, tuning);
    Ok(prob.eval(theta, true)?.jac)
}

/// Non-diagonal rate matrix: the (delta, alpha) block is coupled by
/// `-delta ln(u_n/sqrt(dn))`.
pub fn rate_matrix_lambda(theta: &Theta, tuning: &TuningConfig) -> Mat3 {
    let inv_sqrt_n = 1.0 / (tuning.n as f64).sqrt();
    let v =
        1.0 / (tuning.u_n.powf(theta.alpha / 2.0) * tuning.delta_n.powf(0.5 - theta.alpha / 4.0));
    let coupling = -theta.delta * tuning.ln_u_over_sqrt_dn() * v;
    [
        [inv_sqrt_n, 0.0, 0.0],
        [0.0, inv_sqrt_n * v, inv_sqrt_n * coupling],
        [0.0, 0.0, inv_sqrt_n * v],
    ]
}

/// Diagonal scaling of the estimating function,
/// `A_n = sqrt(n) diag(1/u^2, v, v)`.
pub fn rate_matrix_a(theta: &Theta, tuning: &TuningConfig) -> Mat3 {
    let sqrt_n = (tuning.n as f64).sqrt();
    let v =
        1.0 / (tuning.u_n.powf(theta.alpha / 2.0) * tuning.delta_n.powf(0.5 - theta.alpha / 4.0));
    [
        [sqrt_n / (tuning.u_n * tuning.u_n), 0.0, 0.0],
        [0.0, sqrt_n * v, 0.0],
        [0.0, 0.0, sqrt_n * v],
    ]
}

fn a_diag(theta: &Theta, tuning: &TuningConfig) -> Vec3 {
    let a = rate_matrix_a(theta, tuning);
    [a[0][0], a[1][1], a[2][2]]
}

fn scaled_inf_norm(w: &Vec3, f: &Vec3) -> f64 {
    (0..3).map(|k| (w[k] * f[k]).abs()).fold(0.0, f64::max)
}

/// Plug-in `I(alpha, X)` and its alpha-derivative.
///
/// FixedWindow: the full-grid Riemann sum `dn * sum_(i<n) X_i^(1-a/2)` for
/// the window integral (the estimating function's even-indexed `(1/n) sum`
/// converges to half of it; the verbatim normalisation of Sigma and W
/// absorbs that half). Ergodic: the path average estimating the stationary
/// moment.
pub fn plugin_i(alpha: f64, path: &PathSample, regime: Regime) -> Result<(f64, f64)> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (1,2)")));
    }
    let n = path.n;
    let mut s = 0.0;
    let mut ds = 0.0;
    for (i, &x) in path.observations.iter().take(n).enumerate() {
        if !(x > 0.0) {
            return Err(Error::Positivity(format!("observation {i} = {x}")));
        }
        let w = x.powf(1.0 - alpha / 2.0);
        s += w;
        ds -= w * x.sqrt().ln();
    }
    let scale = match regime {
        Regime::FixedWindow => path.delta_n,
        Regime::Ergodic => 1.0 / n as f64,
    };
    Ok((scale * s, scale * ds))
}

/// Asymptotic covariance of `A_n F_n`:
/// `Sigma = (1/2) [2 s^4, 0, 0; 0, c_a d I ti(f2^2), c_a d I ti(f2 f3); ...]`.
pub fn sigma_matrix(theta: &Theta, i_hat: f64) -> Result<Mat3> {
    theta.validate()?;
    if !(i_hat > 0.0) {
        return Err(Error::Domain(format!("i_hat = {i_hat} must be positive")));
    }
    let factor = c_alpha(theta.alpha)? * theta.delta * i_hat;
    let f2 = |v: f64| kernels::kernel_value(kernels::KernelId::F2Trunc, v);
    let f3 = |v: f64| kernels::kernel_value(kernels::KernelId::F3TruncHalfScale, v);
    let t22 = kernels::tail_integral(|v| f2(v) * f2(v), theta.alpha)?;
    let t23 = kernels::tail_integral(|v| f2(v) * f3(v), theta.alpha)?;
    let t33 = kernels::tail_integral(|v| f3(v) * f3(v), theta.alpha)?;
    let s4 = theta.sigma_sq * theta.sigma_sq;
    Ok([
        [s4, 0.0, 0.0],
        [0.0, 0.5 * factor * t22, 0.5 * factor * t23],
        [0.0, 0.5 * factor * t23, 0.5 * factor * t33],
    ])
}

/// Limit Jacobian
/// `W = (1/2) [1, 0, 0; 0, -psi I, -d (psi I)'; 0, -2^a psi I, -d (2^a psi I)']`
/// with the f3 row carrying `2^a psi` and the alpha-derivatives expanded as
/// `psi' I + psi I'`.
pub fn w_matrix(theta: &Theta, i_hat: f64, di_hat: f64) -> Result<Mat3> {
    theta.validate()?;
    if !(i_hat > 0.0) {
        return Err(Error::Domain(format!("i_hat = {i_hat} must be positive")));
    }
    let psi = kernels::psi(theta.alpha)?;
    let dpsi = kernels::dpsi_dalpha(theta.alpha)?;
    let d_psi_i = dpsi * i_hat + psi * di_hat;
    let p2a = 2.0f64.powf(theta.alpha);
    let ln2 = 2.0f64.ln();
    let w = [
        [0.5, 0.0, 0.0],
        [0.0, -0.5 * psi * i_hat, -0.5 * theta.delta * d_psi_i],
        [
            0.0,
            -0.5 * p2a * psi * i_hat,
            -0.5 * theta.delta * (p2a * ln2 * psi * i_hat + p2a * d_psi_i),
        ],
    ];
    let det = linalg::det3(&w);
    if !det.is_finite() || det.abs() < 1e-14 {
        return Err(Error::Singular(format!("det W = {det:.3e}")));
    }
    Ok(w)
}

/// Laplace transform of the stationary law in the ergodic regime (b > 0):
/// `exp(-int_0^lambda a x / R(x) dx)` with the branching mechanism
/// `R(x) = (s^2/2) x^2 + (dbar^a / a) x^a + b x`, `dbar^a = d a / |cos(pi a/2)|`.
pub fn stationary_laplace(lambda: f64, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    if !(params.b > 0.0) {
        return Err(Error::Config(format!(
            "ergodic regime requires b > 0, got b = {}",
            params.b
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be >= 0")));
    }
    if lambda == 0.0 {
        return Ok(1.0);
    }
    let dbar_a =
        params.delta * params.alpha / (std::f64::consts::PI * params.alpha / 2.0).cos().abs();
    let half_s2 = 0.5 * params.sigma_sq;
    let (a, b, alpha) = (params.a, params.b, params.alpha);
    // a x / R(x) = a / ((s^2/2) x + (dbar^a/a) x^(a-1) + b), continuous at 0
    let integrand = move |x: f64| a / (half_s2 * x + (dbar_a / alpha) * x.powf(alpha - 1.0) + b);
    let integral = quad::integrate(integrand, 0.0, lambda, 1e-10)?;
    Ok((-integral.value).exp())
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveOptions {
    /// convergence threshold on |A_n(theta) F_n(theta)|_inf
    pub tol: f64,
    /// cap on damped Newton iterations in the polish stage
    pub max_iter: usize,
    /// alpha scan grid (lo, hi, points) for the profile stage
    pub alpha_scan: (f64, f64, usize),
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            alpha_scan: (1.05, 1.95, 10),
        }
    }
}

/// Root theta-hat with diagnostics, plug-in matrices and intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: Theta,
    pub converged: bool,
    pub iterations: usize,
    /// |A_n F_n|_inf at theta_hat
    pub residual_norm: f64,
    pub lambda_n: Mat3,
    pub sigma_hat: Mat3,
    pub w_hat: Mat3,
    /// covariance of the limit of Lambda_n^-1 (theta_hat - theta_0):
    /// W^-1 Sigma W^-T
    pub asy_cov: Mat3,
    /// 95% plug-in intervals for (sigma^2, delta, alpha)
    pub ci_95: [[f64; 2]; 3],
    pub i_hat: f64,
    pub di_hat: f64,
}

impl EstimationResult {
    pub fn csv_header() -> &'static str {
        "sigma_sq,delta,alpha,converged,iterations,residual_norm,i_hat,di_hat,\
         ci_sigma_sq_lo,ci_sigma_sq_hi,ci_delta_lo,ci_delta_hi,ci_alpha_lo,ci_alpha_hi"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.theta_hat.sigma_sq,
            self.theta_hat.delta,
            self.theta_hat.alpha,
            self.converged,
            self.iterations,
            self.residual_norm,
            self.i_hat,
            self.di_hat,
            self.ci_95[0][0],
            self.ci_95[0][1],
            self.ci_95[1][0],
            self.ci_95[1][1],
            self.ci_95[2][0],
            self.ci_95[2][1],
        )
    }
}

fn project(theta: Theta) -> Theta {
    Theta::new(
        theta.sigma_sq.clamp(SIGMA_SQ_BOX.0, SIGMA_SQ_BOX.1),
        theta.delta.clamp(DELTA_BOX.0, DELTA_BOX.1),
        theta.alpha.clamp(ALPHA_BOX.0, ALPHA_BOX.1),
    )
}

/// Bare solver output, before plug-in assembly.
#[derive(Debug, Clone, Copy)]
pub struct CoreSolve {
    pub theta_hat: Theta,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    /// grad F_n at theta_hat (feeds the observed-Jacobian sandwich)
    pub jacobian: Mat3,
}

/// Two-parameter Newton in (ln sigma^2, ln delta) at fixed alpha; rows f1,
/// f2. The log parametrisation makes the steps scale-free and the system is
/// effectively monotone, so convergence is broad. Returns the iterate, the
/// full residual vector, the met/missed tolerance flag and the iteration
/// count.
fn solve_two_param(
    prob: &EstimationProblem,
    alpha: f64,
    start: (f64, f64),
    tol2: f64,
    max_iter: usize,
) -> Result<(Theta, Vec3, bool, usize)> {
    let tuning = &prob.tuning;
    let sqrt_n = (tuning.n as f64).sqrt();
    let w1 = sqrt_n / (tuning.u_n * tuning.u_n);
    let w2 = sqrt_n / tuning.jump_scale(alpha);
    let mut phi = [start.0.max(1e-6).ln(), start.1.max(1e-6).ln()];
    let mut theta = Theta::new(phi[0].exp(), phi[1].exp(), alpha);
    let mut ev = prob.eval(&theta, true)?;
    let mut res2 = (w1 * ev.f[0]).abs().max((w2 * ev.f[1]).abs());
    let mut iters = 0;
    while res2 >= tol2 && iters < max_iter {
        iters += 1;
        // chain rule to log coordinates
        let j = [
            [ev.jac[0][0] * theta.sigma_sq, ev.jac[0][1] * theta.delta],
            [ev.jac[1][0] * theta.sigma_sq, ev.jac[1][1] * theta.delta],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !det.is_finite() || det.abs() < 1e-300 {
            break;
        }
        let mut step = [
            (-ev.f[0] * j[1][1] + ev.f[1] * j[0][1]) / det,
            (-ev.f[1] * j[0][0] + ev.f[0] * j[1][0]) / det,
        ];
        for s in &mut step {
            *s = s.clamp(-1.0, 1.0);
        }
        let mut lam = 1.0;
        let mut accepted = false;
        while lam >= 2.0f64.powi(-10) {
            let cand_phi = [
                (phi[0] + lam * step[0]).clamp(-13.8, 13.8),
                (phi[1] + lam * step[1]).clamp(-13.8, 13.8),
            ];
            let cand = Theta::new(cand_phi[0].exp(), cand_phi[1].exp(), alpha);
            let cev = prob.eval(&cand, true)?;
            let cres = (w1 * cev.f[0]).abs().max((w2 * cev.f[1]).abs());
            if cres < res2 {
                phi = cand_phi;
                theta = cand;
                ev = cev;
                res2 = cres;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            break; // stalled line search: no descent direction left
        }
    }
    Ok((theta, ev.f, res2 < tol2, iters))
}

/// Crude moment-matched pilot for (sigma^2, delta) used when no initial
/// value is supplied: sigma^2 inverts the f1 moment at delta = 0, delta
/// inverts the f2 moment through the first-order expansion at alpha = 3/2.
fn pilot_start(prob: &EstimationProblem) -> (f64, f64) {
    let tuning = &prob.tuning;
    let m1 = prob.data_moments[0].clamp(1e-12, 1.0 - 1e-12);
    let sigma_sq = (-m1.ln() / (tuning.u_n * tuning.u_n)).clamp(1e-3, 1e3);
    let alpha = 1.5;
    let m = prob.x_base.len().max(1);
    let mean_x = prob
        .x_base
        .iter()
        .map(|&x| x.powf(1.0 - alpha / 2.0))
        .sum::<f64>()
        / m as f64;
    let ti_f2 = 0.74; // tail integral of f2 at alpha = 3/2, to pilot accuracy
    let scale = tuning.jump_scale(alpha)
        * c_alpha(alpha).unwrap_or(0.6)
        * mean_x
        * ti_f2
        * (m as f64 / tuning.n as f64);
    let delta = if scale > 0.0 {
        (prob.data_moments[1] / scale).clamp(1e-2, 1e2)
    } else {
        1.0
    };
    (sigma_sq, delta)
}

/// Full solve on an estimation problem: alpha profile, bracketed root of the
/// scaled third residual, then damped Newton with box projection.
pub fn solve_core(
    initial: Option<Theta>,
    prob: &EstimationProblem,
    options: &SolveOptions,
) -> Result<CoreSolve> {
    solve_core_with_profile(initial, prob, prob, options)
}

/// As [`solve_core`], scanning alpha on `profile_prob` (typically a strided
/// subsample: the scan only needs bracket-level resolution) and refining and
/// polishing on the full problem.
fn solve_core_with_profile(
    initial: Option<Theta>,
    profile_prob: &EstimationProblem,
    prob: &EstimationProblem,
    options: &SolveOptions,
) -> Result<CoreSolve> {
    if let Some(th) = initial {
        th.validate_interior()?;
    }
    let tuning = &prob.tuning;
    let mut iterations = 0usize;

    let (s0, d0) = match initial {
        Some(th) => (th.sigma_sq, th.delta),
        None => pilot_start(prob),
    };

    // stage 1: alpha scan on the profile problem
    let (lo, hi, points) = options.alpha_scan;
    let g_at = |p: &EstimationProblem,
                alpha: f64,
                start: (f64, f64),
                iters: &mut usize|
     -> Result<(Theta, f64)> {
        let (th, f, _ok, it) = solve_two_param(p, alpha, start, 1e-9, 30)?;
        *iters += it;
        let w3 = a_diag(&th, &p.tuning)[2];
        Ok((th, w3 * f[2]))
    };

    let mut scan: Vec<(f64, Theta, f64)> = Vec::with_capacity(points);
    let mut warm = (s0, d0);
    for k in 0..points {
        let alpha = lo + (hi - lo) * k as f64 / (points - 1).max(1) as f64;
        let (th, g) = g_at(profile_prob, alpha, warm, &mut iterations)?;
        warm = (th.sigma_sq.max(2e-3), th.delta.max(2e-3));
        scan.push((alpha, th, g));
    }

    // prefer the bracket closest to the requested initial alpha
    let a_center = initial.map(|t| t.alpha).unwrap_or(1.5);
    let mut bracket: Option<usize> = None;
    let mut best_dist = f64::INFINITY;
    for k in 0..scan.len() - 1 {
        if scan[k].2 * scan[k + 1].2 <= 0.0 {
            let mid = 0.5 * (scan[k].0 + scan[k + 1].0);
            let dist = (mid - a_center).abs();
            if dist < best_dist {
                best_dist = dist;
                bracket = Some(k);
            }
        }
    }

    // re-anchor the bracket endpoints on the full problem
    let full_bracket = match bracket {
        Some(k) => {
            let w = (scan[k].1.sigma_sq.max(2e-3), scan[k].1.delta.max(2e-3));
            let (th_lo, g_lo) = g_at(prob, scan[k].0, w, &mut iterations)?;
            let (th_hi, g_hi) = g_at(
                prob,
                scan[k + 1].0,
                (th_lo.sigma_sq.max(2e-3), th_lo.delta.max(2e-3)),
                &mut iterations,
            )?;
            if g_lo * g_hi <= 0.0 {
                Some((scan[k].0, th_lo, g_lo, scan[k + 1].0, th_hi, g_hi))
            } else {
                // subsample noise moved the crossing; try one step outward
                let lo_k = k.saturating_sub(1);
                let hi_k = (k + 2).min(scan.len() - 1);
                let (th_l2, g_l2) = g_at(
                    prob,
                    scan[lo_k].0,
                    (th_lo.sigma_sq.max(2e-3), th_lo.delta.max(2e-3)),
                    &mut iterations,
                )?;
                if g_l2 * g_lo <= 0.0 {
                    Some((scan[lo_k].0, th_l2, g_l2, scan[k].0, th_lo, g_lo))
                } else {
                    let (th_h2, g_h2) = g_at(
                        prob,
                        scan[hi_k].0,
                        (th_hi.sigma_sq.max(2e-3), th_hi.delta.max(2e-3)),
                        &mut iterations,
                    )?;
                    (g_hi * g_h2 <= 0.0)
                        .then_some((scan[k + 1].0, th_hi, g_hi, scan[hi_k].0, th_h2, g_h2))
                }
            }
        }
        None => None,
    };

    let start_theta = match full_bracket {
        Some((mut a_lo, th_lo, mut g_lo, mut a_hi, _th_hi, mut g_hi)) => {
            // Illinois false position on g(alpha) over the full problem;
            // bracket-level alpha resolution suffices before the polish
            let mut th = th_lo;
            let mut warm = (th.sigma_sq.max(2e-3), th.delta.max(2e-3));
            for _ in 0..30 {
                if (a_hi - a_lo).abs() < 1e-4 {
                    break;
                }
                let mut mid = if g_hi != g_lo {
                    a_lo - g_lo * (a_hi - a_lo) / (g_hi - g_lo)
                } else {
                    0.5 * (a_lo + a_hi)
                };
                mid = mid.clamp(a_lo + 0.05 * (a_hi - a_lo), a_hi - 0.05 * (a_hi - a_lo));
                let (tm, gm) = g_at(prob, mid, warm, &mut iterations)?;
                warm = (tm.sigma_sq.max(2e-3), tm.delta.max(2e-3));
                th = tm;
                if gm.abs() < 1e-9 {
                    break;
                }
                if gm * g_lo <= 0.0 {
                    a_hi = mid;
                    g_hi = gm;
                    g_lo *= 0.5; // Illinois damping against one-sided stalls
                } else {
                    a_lo = mid;
                    g_lo = gm;
                    g_hi *= 0.5;
                }
            }
            th
        }
        None => {
            // no sign change anywhere: hand the minimiser of |g| to the polish
            scan.iter()
                .min_by(|x, y| x.2.abs().total_cmp(&y.2.abs()))
                .map(|(_, th, _)| *th)
                .unwrap()
        }
    };

    // stage 2: damped Newton on the full system
    let mut theta = project(start_theta);
    let mut ev = prob.eval(&theta, true)?;
    let mut res = scaled_inf_norm(&a_diag(&theta, tuning), &ev.f);
    let mut polish_iters = 0usize;
    while res >= options.tol && polish_iters < options.max_iter {
        polish_iters += 1;
        let step = match linalg::solve3(&ev.jac, &[-ev.f[0], -ev.f[1], -ev.f[2]]) {
            Ok(s) => s,
            Err(_) => break,
        };
        // freeze the merit weights during the line search so a step cannot
        // look better merely by drifting alpha (A_n depends on alpha)
        let w = a_diag(&theta, tuning);
        let m_cur = scaled_inf_norm(&w, &ev.f);
        let mut lam = 1.0;
        let mut accepted = false;
        while lam >= 2.0f64.powi(-24) {
            let cand = project(Theta::new(
                theta.sigma_sq + lam * step[0],
                theta.delta + lam * step[1],
                theta.alpha + lam * step[2],
            ));
            let cev = prob.eval(&cand, true)?;
            if scaled_inf_norm(&w, &cev.f) < m_cur {
                theta = cand;
                ev = cev;
                res = scaled_inf_norm(&a_diag(&theta, tuning), &ev.f);
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    iterations += polish_iters;

    Ok(CoreSolve {
        theta_hat: theta,
        converged: res < options.tol,
        iterations,
        residual_norm: res,
        jacobian: ev.jac,
    })
}

/// Solve the estimating equation on a path and assemble the rate matrices,
/// plug-in covariance and 95% confidence intervals at theta-hat.
pub fn solve(
    initial: Option<Theta>,
    path: &PathSample,
    tuning: &TuningConfig,
    regime: Regime,
    options: &SolveOptions,
) -> Result<EstimationResult> {
    let incr = symmetrized_increments(path, tuning)?;
    let prob = EstimationProblem::from_increments(&incr, tuning);
    // alpha scan on a strided subsample: bracket-level resolution is enough
    let stride = (incr.rho.len() / 2048).max(1);
    let core = if stride > 1 {
        let sub = SymmetrizedIncrements {
            rho: incr.rho.iter().step_by(stride).copied().collect(),
            x_base: incr.x_base.iter().step_by(stride).copied().collect(),
            n: incr.n / stride,
        };
        let sub_tuning = TuningConfig {
            n: sub.n,
            ..*tuning
        };
        let sub_prob = EstimationProblem::from_increments(&sub, &sub_tuning);
        solve_core_with_profile(initial, &sub_prob, &prob, options)?
    } else {
        solve_core(initial, &prob, options)?
    };
    assemble_result(core, path, tuning, regime)
}

fn assemble_result(
    core: CoreSolve,
    path: &PathSample,
    tuning: &TuningConfig,
    regime: Regime,
) -> Result<EstimationResult> {
    let theta = core.theta_hat;
    let (i_hat, di_hat) = plugin_i(theta.alpha, path, regime)?;
    let sigma_hat = sigma_matrix(&theta, i_hat)?;
    let w_hat = w_matrix(&theta, i_hat, di_hat)?;
    let lambda_n = rate_matrix_lambda(&theta, tuning);
    // Observed-Jacobian sandwich: at desk-scale n the normalised Jacobian
    // A_n grad F_n Lambda_n still carries a large (sigma^2, delta) coupling
    // that the limit W lacks (it decays only logarithmically), so
    // studentising against the limit W understates the sigma^2 spread
    // badly. The observed version keeps the intervals honest.
    let a_n = rate_matrix_a(&theta, tuning);
    let w_n = linalg::mat_mul(&linalg::mat_mul(&a_n, &core.jacobian), &lambda_n);
    let w_n_inv = linalg::inv3(&w_n, 1e-14)?;
    let asy_cov = linalg::mat_mul(
        &linalg::mat_mul(&w_n_inv, &sigma_hat),
        &linalg::transpose(&w_n_inv),
    );
    // cov(theta_hat) ~ Lambda_n asy_cov Lambda_n^T
    let cov_theta = linalg::mat_mul(
        &linalg::mat_mul(&lambda_n, &asy_cov),
        &linalg::transpose(&lambda_n),
    );
    let mut ci = [[0.0f64; 2]; 3];
    let point = theta.as_array();
    for k in 0..3 {
        let s = cov_theta[k][k].max(0.0).sqrt();
        ci[k] = [point[k] - 1.96 * s, point[k] + 1.96 * s];
    }
    Ok(EstimationResult {
        theta_hat: theta,
        converged: core.converged,
        iterations: core.iterations,
        residual_norm: core.residual_norm,
        lambda_n,
        sigma_hat,
        w_hat,
        asy_cov,
        ci_95: ci,
        i_hat,
        di_hat,
    })
}

/// Result of the known-alpha two-parameter estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnownAlphaResult {
    pub sigma_sq: f64,
    pub delta: f64,
    pub alpha0: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    /// `A~_n grad_beta F_n` at the solution; its limit is
    /// diag(1/2, -(1/2) psi(a0) I)
    pub normalized_jacobian: [[f64; 2]; 2],
}

/// Solve `F_n(sigma^2, delta, alpha_0) = 0` in the first two coordinates
/// with alpha frozen.
pub fn solve_known_alpha(
    initial: (f64, f64),
    alpha0: f64,
    path: &PathSample,
    tuning: &TuningConfig,
    options: &SolveOptions,
) -> Result<KnownAlphaResult> {
    if !(alpha0 > 1.0 && alpha0 < 2.0) {
        return Err(Error::Domain(format!("alpha0 = {alpha0} outside (1,2)")));
    }
    let incr = symmetrized_increments(path, tuning)?;
    let prob = EstimationProblem::from_increments(&incr, tuning);
    let (theta, f, met, iters) = solve_two_param(
        &prob,
        alpha0,
        initial,
        options.tol.min(1e-8),
        options.max_iter,
    )?;
    let sqrt_n = (tuning.n as f64).sqrt();
    let w1 = sqrt_n / (tuning.u_n * tuning.u_n);
    let w2 = sqrt_n / tuning.jump_scale(alpha0);
    let res = (w1 * f[0]).abs().max((w2 * f[1]).abs());
    let ev = prob.eval(&theta, true)?;
    let nj = [
        [w1 / sqrt_n * ev.jac[0][0], w1 / sqrt_n * ev.jac[0][1]],
        [w2 / sqrt_n * ev.jac[1][0], w2 / sqrt_n * ev.jac[1][1]],
    ];
    Ok(KnownAlphaResult {
        sigma_sq: theta.sigma_sq,
        delta: theta.delta,
        alpha0,
        converged: met,
        iterations: iters,
        residual_norm: res,
        normalized_jacobian: nj,
    })
}
