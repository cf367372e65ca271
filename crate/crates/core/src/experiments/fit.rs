//! Learning curve `f(x) = θ₄ / (θ₃ + exp(θ₁x + θ₂)) + x_min`, fitted by
//! multi-start Nelder–Mead.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XMin {
    /// Minimum of the observations.
    Observed,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: u64,
    pub x_min: XMin,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 200,
            seed: 0,
            max_iters: 4000,
            x_min: XMin::Observed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveFit {
    pub theta: [f64; 4],
    pub x_min: f64,
    /// Residual sum of squares.
    pub rss: f64,
    /// Limit as x → ∞ (for θ₁ < 0): x_min + θ₄/θ₃.
    pub plateau: f64,
    pub restarts: usize,
    pub failed_restarts: usize,
    /// Best residual after each restart.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub best_trace: Vec<f64>,
}

pub fn learning_curve(theta: &[f64; 4], x_min: f64, x: f64) -> f64 {
    theta[3] / (theta[2] + (x * theta[0] + theta[1]).exp()) + x_min
}

impl LearningCurveFit {
    pub fn eval(&self, x: f64) -> f64 {
        learning_curve(&self.theta, self.x_min, x)
    }
}

/// Parameters are searched as (θ₁, θ₂, ln θ₃, θ₄) so θ₃ stays positive.
struct Problem<'a> {
    y: &'a [f64],
    x_min: f64,
}

fn unpack(p: &[f64]) -> [f64; 4] {
    [p[0], p[1], p[2].exp(), p[3]]
}

impl Problem<'_> {
    fn rss(&self, theta: &[f64; 4]) -> f64 {
        self.y
            .iter()
            .enumerate()
            .map(|(i, y)| (y - learning_curve(theta, self.x_min, (i + 1) as f64)).powi(2))
            .sum()
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let c = self.rss(&unpack(p));
        Ok(if c.is_finite() { c } else { f64::MAX })
    }
}

/// Fit performance observations `y` for trials 1..=T (T ≥ 5).
pub fn fit_learning_curve(y: &[f64], opts: &FitOptions) -> Result<LearningCurveFit> {
    if y.len() < 5 {
        return Err(Error::InsufficientData(format!("need >= 5 trials, got {}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("observations must be finite".into()));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x_min = match opts.x_min {
        XMin::Observed => lo,
        XMin::Fixed(v) => v,
    };
    let problem = Problem { y, x_min };
    let scale = (hi - x_min).abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<([f64; 4], f64)> = None;
    let mut trace = Vec::with_capacity(opts.restarts);
    let mut failed = 0;
    for _ in 0..opts.restarts {
        let ln3: f64 = rng.gen_range(-3.0..1.5);
        let start = vec![
            rng.gen_range(-3.0..-0.1),
            rng.gen_range(-2.0..8.0),
            ln3,
            rng.gen_range(0.0..3.0) * scale * ln3.exp(),
        ];
        let step = [0.5, 1.0, 0.5, 0.5 * scale.max(start[3].abs())];
        let mut simplex = vec![start.clone()];
        for (k, s) in step.iter().enumerate() {
            let mut v = start.clone();
            v[k] += s;
            simplex.push(v);
        }
        let outcome = NelderMead::new(simplex)
            .with_sd_tolerance(1e-14)
            .map_err(|e| Error::FitFailure(e.to_string()))
            .and_then(|solver| {
                Executor::new(Problem { y, x_min }, solver)
                    .configure(|s| s.max_iters(opts.max_iters))
                    .run()
                    .map_err(|e| Error::FitFailure(e.to_string()))
            });
        match outcome {
            Ok(res) => {
                let state = res.state();
                let Some(p) = state.get_best_param() else {
                    failed += 1;
                    continue;
                };
                let theta = unpack(p);
                let rss = problem.rss(&theta);
                if !rss.is_finite() || theta.iter().any(|v| !v.is_finite()) {
                    failed += 1;
                } else if best.map_or(true, |b| rss < b.1) {
                    best = Some((theta, rss));
                }
            }
            Err(e) => {
                log::debug!("restart failed: {e}");
                failed += 1;
            }
        }
        trace.push(best.map_or(f64::INFINITY, |b| b.1));
    }
    let (theta, rss) = best.ok_or_else(|| {
        Error::FitFailure(format!("all {} restarts diverged", opts.restarts))
    })?;
    Ok(LearningCurveFit {
        theta,
        x_min,
        rss,
        plateau: x_min + theta[3] / theta[2],
        restarts: opts.restarts,
        failed_restarts: failed,
        best_trace: trace,
    })
}
