//! Discretely observed trajectories of the stable CIR equation
//! `dX = (a - b X) dt + sigma sqrt(X) dB + delta^(1/a) X^(1/a) dL`,
//! simulated by fine-grid Euler with exact stable increments.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stable_levy::{Skew, StableSpec};

/// Full SDE parameterization; the ground truth for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// drift level (per unit time, > 0)
    pub a: f64,
    /// mean-reversion rate
    pub b: f64,
    /// diffusion coefficient sigma^2 (>= 0; 0 gives the pure-jump model)
    pub sigma_sq: f64,
    /// jump scale (>= 0; 0 gives the diffusion CIR)
    pub delta: f64,
    /// jump activity in (1,2)
    pub alpha: f64,
    /// initial state (> 0)
    pub x0: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::Config(format!("a = {} must be positive", self.a)));
        }
        if !self.b.is_finite() {
            return Err(Error::Config("b must be finite".into()));
        }
        if !(self.sigma_sq >= 0.0) {
            return Err(Error::Config(format!(
                "sigma_sq = {} must be nonnegative",
                self.sigma_sq
            )));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Config(format!(
                "delta = {} must be nonnegative",
                self.delta
            )));
        }
        if self.delta > 0.0 {
            StableSpec::new(self.alpha, Skew::SpectrallyPositive)?;
        }
        if !(self.x0 > 0.0) {
            return Err(Error::Config(format!("x0 = {} must be positive", self.x0)));
        }
        Ok(())
    }
}

/// Classification of a parameter set against the positivity condition
/// `2a >= sigma^2` and the stronger standing assumption `a > sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumptionH {
    /// a > sigma^2: all moment and estimation results apply
    HoldsH,
    /// 2a >= sigma^2 but a <= sigma^2: the path stays positive, nothing more
    HoldsPositivityOnly,
    /// 2a < sigma^2: the state can hit zero
    Fails,
}

pub fn check_assumption_h(params: &ModelParams) -> AssumptionH {
    if 2.0 * params.a < params.sigma_sq {
        AssumptionH::Fails
    } else if params.a > params.sigma_sq {
        AssumptionH::HoldsH
    } else {
        AssumptionH::HoldsPositivityOnly
    }
}

/// How a substep that would leave (0, inf) is pushed back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositivityRule {
    /// evaluate coefficients at max(X, 0), floor the post-step state
    FullTruncation,
    /// reflect the post-step state to |X|
    Reflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScheme {
    /// Euler substeps per observation interval
    pub substeps: usize,
    pub positivity_rule: PositivityRule,
    /// lower floor applied by FullTruncation and inside x^(1/a)
    pub eps_floor: f64,
}

impl Default for SimScheme {
    fn default() -> Self {
        Self {
            substeps: 32,
            positivity_rule: PositivityRule::FullTruncation,
            eps_floor: 1e-12,
        }
    }
}

impl SimScheme {
    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be >= 1".into()));
        }
        if !(self.eps_floor > 0.0) {
            return Err(Error::Config("eps_floor must be positive".into()));
        }
        Ok(())
    }
}

/// A discretely observed trajectory (X_0, X_dn, ..., X_(n dn)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub observations: Vec<f64>,
    pub delta_n: f64,
    pub n: usize,
    /// provenance of the generating model, when known
    pub params_tag: Option<ModelParams>,
}

impl PathSample {
    pub fn validate(&self) -> Result<()> {
        if self.observations.len() != self.n + 1 {
            return Err(Error::Config(format!(
                "path length {} != n+1 = {}",
                self.observations.len(),
                self.n + 1
            )));
        }
        if !(self.delta_n > 0.0) {
            return Err(Error::Config("delta_n must be positive".into()));
        }
        for (i, &x) in self.observations.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("observation {i} is {x}")));
            }
            if x <= 0.0 {
                return Err(Error::Positivity(format!("observation {i} = {x}")));
            }
        }
        Ok(())
    }

    /// Observation time of index i (exact grid bookkeeping).
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.delta_n
    }

    /// CSV with header `t,x`; `{}` formatting of f64 round-trips exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(16 * self.observations.len());
        out.push_str("t,x\n");
        for (i, &x) in self.observations.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.time(i), x));
        }
        out
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut lines = s.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))?;
        if header.trim() != "t,x" {
            return Err(Error::Parse(format!("expected header 't,x', got '{header}'")));
        }
        let mut ts = Vec::new();
        let mut xs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (t, x) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: missing comma", lineno + 2)))?;
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: bad t: {e}", lineno + 2)))?;
            let x: f64 = x
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: bad x: {e}", lineno + 2)))?;
            ts.push(t);
            xs.push(x);
        }
        if xs.len() < 2 {
            return Err(Error::Parse("need at least two observations".into()));
        }
        let delta_n = ts[1] - ts[0];
        if !(delta_n > 0.0) {
            return Err(Error::Parse("time grid must be increasing".into()));
        }
        let n = xs.len() - 1;
        let path = PathSample {
            observations: xs,
            delta_n,
            n,
            params_tag: None,
        };
        path.validate()?;
        Ok(path)
    }
}

/// JSON sidecar stored next to each path CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathMeta {
    pub delta_n: f64,
    pub n: usize,
    pub seed: u64,
    pub scheme: SimScheme,
    pub params: ModelParams,
}

/// x^(1/a) through exp(ln(x)/a) with the floor guard.
#[inline]
fn pow_inv_alpha(x: f64, inv_alpha: f64, eps_floor: f64) -> f64 {
    (x.max(eps_floor).ln() * inv_alpha).exp()
}

/// Euler-Maruyama on the fine grid of step delta_n / substeps; every
/// `substeps`-th state is recorded. Jump increments are exact stable draws
/// scaled by h^(1/a) (strict stability), so the driver's marginal law carries
/// no small-jump truncation bias.
pub fn simulate_path<R: Rng + ?Sized>(
    params: &ModelParams,
    delta_n: f64,
    n: usize,
    scheme: &SimScheme,
    rng: &mut R,
) -> Result<PathSample> {
    params.validate()?;
    scheme.validate()?;
    if check_assumption_h(params) == AssumptionH::Fails {
        return Err(Error::Config(format!(
            "positivity requires 2a >= sigma^2 (a = {}, sigma^2 = {})",
            params.a, params.sigma_sq
        )));
    }
    if !(delta_n > 0.0) {
        return Err(Error::Config(format!("delta_n = {delta_n} must be positive")));
    }
    if n < 2 {
        return Err(Error::Config(format!("n = {n} must be >= 2")));
    }

    let m = scheme.substeps;
    let h = delta_n / m as f64;
    let sqrt_h = h.sqrt();
    let sigma = params.sigma_sq.sqrt();
    let inv_alpha = 1.0 / params.alpha;
    let jump_on = params.delta > 0.0;
    let jump_scale = if jump_on {
        params.delta.powf(inv_alpha) * h.powf(inv_alpha)
    } else {
        0.0
    };
    let stable = if jump_on {
        Some(StableSpec::new(params.alpha, Skew::SpectrallyPositive)?)
    } else {
        None
    };

    let mut observations = Vec::with_capacity(n + 1);
    observations.push(params.x0);
    let mut x = params.x0;
    for i in 0..n {
        for _ in 0..m {
            let xe = x.max(0.0);
            let mut next = x + (params.a - params.b * x) * h;
            if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                next += sigma * xe.sqrt() * sqrt_h * z;
            }
            if let Some(spec) = &stable {
                let s = spec.sample(rng);
                next += jump_scale * pow_inv_alpha(xe, inv_alpha, scheme.eps_floor) * s;
            }
            if !next.is_finite() {
                return Err(Error::NonFinite(format!(
                    "state diverged in observation interval {i}"
                )));
            }
            x = match scheme.positivity_rule {
                PositivityRule::FullTruncation => next.max(scheme.eps_floor),
                PositivityRule::Reflection => next.abs().max(scheme.eps_floor),
            };
        }
        observations.push(x);
    }
    Ok(PathSample {
        observations,
        delta_n,
        n,
        params_tag: Some(*params),
    })
}

/// `(1/(n+1)) sum X_i^(-p)`; a stability diagnostic for the inverse-moment
/// condition `p < 2a / sigma^2`.
pub fn empirical_inverse_moment(path: &PathSample, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::Domain(format!("p = {p} must be positive")));
    }
    let mut acc = 0.0;
    for (i, &x) in path.observations.iter().enumerate() {
        if !(x > 0.0) {
            return Err(Error::Positivity(format!("observation {i} = {x}")));
        }
        acc += x.powf(-p);
    }
    Ok(acc / path.observations.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base_params() -> ModelParams {
        ModelParams {
            a: 2.0,
            b: 0.0,
            sigma_sq: 1.0,
            delta: 1.0,
            alpha: 1.5,
            x0: 1.0,
        }
    }

    #[test]
    fn assumption_h_classification() {
        let mut p = base_params();
        p.a = 2.0;
        p.sigma_sq = 1.0;
        assert_eq!(check_assumption_h(&p), AssumptionH::HoldsH);
        p.a = 0.6;
        assert_eq!(check_assumption_h(&p), AssumptionH::HoldsPositivityOnly);
        p.a = 0.4;
        assert_eq!(check_assumption_h(&p), AssumptionH::Fails);
    }

    #[test]
    fn simulate_rejects_bad_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = base_params();
        p.a = 0.4;
        assert!(simulate_path(&p, 0.01, 10, &SimScheme::default(), &mut rng).is_err());
        let p = base_params();
        assert!(simulate_path(&p, 0.0, 10, &SimScheme::default(), &mut rng).is_err());
        assert!(simulate_path(&p, 0.01, 1, &SimScheme::default(), &mut rng).is_err());
        let bad = SimScheme {
            substeps: 0,
            ..SimScheme::default()
        };
        assert!(simulate_path(&p, 0.01, 10, &bad, &mut rng).is_err());
    }

    #[test]
    fn deterministic_ode_limit() {
        // sigma^2 = 0, delta = 0, b = 0: X_t = x0 + a t up to scheme error
        let p = ModelParams {
            a: 2.0,
            b: 0.0,
            sigma_sq: 0.0,
            delta: 0.0,
            alpha: 1.5,
            x0: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dn = 0.01;
        let path = simulate_path(&p, dn, 100, &SimScheme::default(), &mut rng).unwrap();
        for i in 0..=100 {
            let want = 1.0 + 2.0 * path.time(i);
            // b=0 makes Euler exact for the linear drift
            assert!((path.observations[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ergodic_mean_approaches_a_over_b() {
        // long horizon with b > 0: path average of X approaches a/b
        let p = ModelParams {
            a: 2.0,
            b: 1.0,
            sigma_sq: 1.0,
            delta: 1.0,
            alpha: 1.5,
            x0: 2.0,
        };
        let scheme = SimScheme {
            substeps: 8,
            ..SimScheme::default()
        };
        // the stationary law has a heavy tail (index alpha), so pool a few
        // long paths to tame the running-mean fluctuations
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in [42u64, 43, 44, 45] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let path = simulate_path(&p, 0.05, 20_000, &scheme, &mut rng).unwrap();
            total += path.observations.iter().sum::<f64>();
            count += path.observations.len();
        }
        let mean = total / count as f64;
        let want = p.a / p.b;
        assert!(
            (mean - want).abs() / want < 0.05,
            "pooled path mean {mean} vs a/b = {want}"
        );
    }

    #[test]
    fn positivity_and_finiteness() {
        let p = base_params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let path = simulate_path(&p, 1.0 / 4096.0, 4096, &SimScheme::default(), &mut rng).unwrap();
        path.validate().unwrap();
        assert!(path.observations.iter().all(|&x| x > 0.0 && x.is_finite()));
    }

    #[test]
    fn fixed_seed_reproduces_bytes() {
        let p = base_params();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            simulate_path(&p, 0.001, 500, &SimScheme::default(), &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn refinement_consistency_ks() {
        // doubling substeps changes the terminal-state law by less than
        // KS 0.02 (weak-convergence check at desk scale)
        let p = base_params();
        let terminal = |m: usize, seed: u64| -> Vec<f64> {
            let scheme = SimScheme {
                substeps: m,
                ..SimScheme::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // the 0.02 tolerance needs enough paths for the two-sample KS
            // noise floor (1.36 sqrt(2/N)) to sit below it
            (0..12_000)
                .map(|_| {
                    simulate_path(&p, 0.25, 4, &scheme, &mut rng)
                        .unwrap()
                        .observations[4]
                })
                .collect()
        };
        let a = terminal(64, 1);
        let b = terminal(128, 2);
        let d = ks(&a, &b);
        assert!(d < 0.02, "KS {d}");
    }

    #[test]
    fn pure_diffusion_limit_matches_cir() {
        // delta -> 0 path statistics match the CIR reference from the same
        // scheme (KS on terminal values)
        let mut p = base_params();
        p.delta = 1e-8;
        let mut q = base_params();
        q.delta = 0.0;
        let terminal = |pp: &ModelParams, seed: u64| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scheme = SimScheme {
                substeps: 16,
                ..SimScheme::default()
            };
            (0..12_000)
                .map(|_| {
                    simulate_path(pp, 0.25, 4, &scheme, &mut rng)
                        .unwrap()
                        .observations[4]
                })
                .collect()
        };
        let d = ks(&terminal(&p, 5), &terminal(&q, 6));
        assert!(d < 0.02, "KS {d}");
    }

    #[test]
    fn inverse_moment_examples() {
        let constant = |x: f64| PathSample {
            observations: vec![x; 11],
            delta_n: 0.1,
            n: 10,
            params_tag: None,
        };
        assert!((empirical_inverse_moment(&constant(2.0), 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((empirical_inverse_moment(&constant(1.0), 2.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_moment_stability() {
        // a = 2, sigma^2 = 1, p = 1 < 2a/sigma^2: stable across sample sizes
        let p = base_params();
        let run = |n: usize, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scheme = SimScheme {
                substeps: 4,
                ..SimScheme::default()
            };
            let path = simulate_path(&p, 1.0 / n as f64, n, &scheme, &mut rng).unwrap();
            empirical_inverse_moment(&path, 1.0).unwrap()
        };
        let v1 = run(10_000, 3);
        let v2 = run(100_000, 4);
        let ratio = v1 / v2;
        assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn csv_round_trip() {
        let p = base_params();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let path = simulate_path(&p, 0.01, 50, &SimScheme::default(), &mut rng).unwrap();
        let csv = path.to_csv();
        let back = PathSample::from_csv(&csv).unwrap();
        assert_eq!(back.observations, path.observations);
        assert_eq!(back.n, path.n);
        assert_eq!(back.delta_n, path.delta_n);
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(PathSample::from_csv("").is_err());
        assert!(PathSample::from_csv("a,b\n1,2\n").is_err());
        assert!(PathSample::from_csv("t,x\n0,1\n").is_err());
        assert!(PathSample::from_csv("t,x\n0,1\n0.1,zzz\n").is_err());
        assert!(PathSample::from_csv("t,x\n0,1\n0.1,-3\n0.2,1\n").is_err());
    }

    fn ks(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / na - j as f64 / nb).abs());
        }
        d
    }
}
