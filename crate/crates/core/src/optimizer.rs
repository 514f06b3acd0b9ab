//! Evolution-strategies optimizer with antithetic orthogonal perturbations,
//! elite filtering and fitness-std normalisation, plus a running observation
//! normaliser.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("perturbation dimension must be positive")]
    EmptyDimension,
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("fitness diverged at iteration {iteration}")]
    Diverged { iteration: usize, checkpoint: Vec<f64> },
    #[error("unknown optimizer preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsConfig {
    pub step_size: f64,
    pub perturbation_std: f64,
    pub num_perturbations: usize,
    pub rollouts_per_perturbation: usize,
    pub keep_fraction: f64,
    pub max_env_steps: usize,
    pub orthogonal: bool,
    pub normalize_obs: bool,
    /// Divide the gradient estimate by `2 sigma` as well as by the fitness
    /// std. Off by default: with the std normalisation already in place the
    /// extra factor turns every update into a fixed-length step of about
    /// `step_size / sigma`.
    pub sigma_scaled_gradient: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self::simulation()
    }
}

impl EsConfig {
    pub fn simulation() -> Self {
        Self {
            step_size: 0.00375,
            perturbation_std: 0.025,
            num_perturbations: 200,
            rollouts_per_perturbation: 15,
            keep_fraction: 0.30,
            max_env_steps: 200,
            orthogonal: true,
            normalize_obs: true,
            sigma_scaled_gradient: false,
        }
    }

    /// Small-budget preset for fine-tuning adapters.
    pub fn adapter() -> Self {
        Self {
            step_size: 0.00125,
            perturbation_std: 0.025,
            num_perturbations: 5,
            rollouts_per_perturbation: 3,
            keep_fraction: 0.60,
            max_env_steps: 200,
            orthogonal: true,
            normalize_obs: true,
            sigma_scaled_gradient: false,
        }
    }

    /// Small budget for the linear policy skill on one core.
    pub fn desk() -> Self {
        Self {
            step_size: 0.02,
            perturbation_std: 0.03,
            num_perturbations: 6,
            rollouts_per_perturbation: 1,
            keep_fraction: 0.5,
            ..Self::simulation()
        }
    }

    pub fn preset(name: &str) -> Result<Self, OptimizerError> {
        match name {
            "simulation" => Ok(Self::simulation()),
            "adapter" => Ok(Self::adapter()),
            "desk" => Ok(Self::desk()),
            other => Err(OptimizerError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.num_perturbations == 0 || self.rollouts_per_perturbation == 0 {
            return Err(OptimizerError::InvalidConfig("perturbation and rollout counts must be positive".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(OptimizerError::InvalidConfig("keep_fraction must lie in (0, 1]".into()));
        }
        if !(self.perturbation_std > 0.0) {
            return Err(OptimizerError::InvalidConfig("perturbation_std must be positive".into()));
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.keep_fraction * self.num_perturbations as f64).round() as usize).clamp(1, self.num_perturbations)
    }
}

fn gaussian_row<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean length of a standard Gaussian vector in `dim` dimensions.
pub fn expected_chi(dim: usize) -> f64 {
    // r_d = Gamma((d + 1) / 2) / Gamma(d / 2), with r_{d+1} = (d / 2) / r_d.
    let mut r = 1.0 / std::f64::consts::PI.sqrt();
    for d in 1..dim {
        r = 0.5 * d as f64 / r;
    }
    std::f64::consts::SQRT_2 * r
}

/// `count` Gaussian directions, orthogonalised in blocks of at most `dim`
/// rows and rescaled to the expected Gaussian row length.
pub fn orthogonal_perturbations<R: Rng + ?Sized>(
    count: usize,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, OptimizerError> {
    if dim == 0 {
        return Err(OptimizerError::EmptyDimension);
    }
    let scale = expected_chi(dim);
    let mut rows = Vec::with_capacity(count);
    let mut start = 0;
    while start < count {
        let block = (count - start).min(dim);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(block);
        while basis.len() < block {
            let g = gaussian_row(dim, rng);
            let norm = dot(&g, &g).sqrt();
            let mut u = g.clone();
            // Modified Gram-Schmidt, twice for numerical safety.
            for _ in 0..2 {
                for b in &basis {
                    let p = dot(&u, b);
                    for (ui, bi) in u.iter_mut().zip(b) {
                        *ui -= p * bi;
                    }
                }
            }
            let un = dot(&u, &u).sqrt();
            if un < 1e-10 * norm.max(1.0) {
                continue;
            }
            for ui in u.iter_mut() {
                *ui /= un;
            }
            basis.push(u);
            let last = basis.last().unwrap();
            rows.push(last.iter().map(|x| x * scale).collect());
        }
        start += block;
    }
    Ok(rows)
}

fn perturbations<R: Rng + ?Sized>(cfg: &EsConfig, dim: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, OptimizerError> {
    if cfg.orthogonal {
        orthogonal_perturbations(cfg.num_perturbations, dim, rng)
    } else {
        if dim == 0 {
            return Err(OptimizerError::EmptyDimension);
        }
        Ok((0..cfg.num_perturbations).map(|_| gaussian_row(dim, rng)).collect())
    }
}

/// Fitness of each antithetic pair, averaged over the rollouts. Plus and
/// minus share the rollout seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFitness {
    pub plus: f64,
    pub minus: f64,
}

/// One finished update, with the statistics for a training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EsStep {
    pub params: Vec<f64>,
    pub mean_fitness: f64,
    pub best_fitness: f64,
    pub fitness_std: f64,
    /// `params - previous params`.
    pub update: Vec<f64>,
    pub elites: Vec<usize>,
}

fn evaluate_pairs<F, R>(
    params: &[f64],
    eps: &[Vec<f64>],
    evaluate: &mut F,
    cfg: &EsConfig,
    rng: &mut R,
) -> Vec<PairFitness>
where
    F: FnMut(&[f64], u64) -> f64,
    R: Rng + ?Sized,
{
    let sigma = cfg.perturbation_std;
    let k = cfg.rollouts_per_perturbation;
    let mut buf = vec![0.0; params.len()];
    eps.iter()
        .map(|e| {
            let seeds: Vec<u64> = (0..k).map(|_| rng.random()).collect();
            let mut run = |sign: f64| {
                for ((b, p), ei) in buf.iter_mut().zip(params).zip(e) {
                    *b = p + sign * sigma * ei;
                }
                seeds.iter().map(|&s| evaluate(&buf, s)).sum::<f64>() / k as f64
            };
            let plus = run(1.0);
            let minus = run(-1.0);
            PairFitness { plus, minus }
        })
        .collect()
}

fn fitness_stats(pairs: &[PairFitness], idx: &[usize]) -> (f64, f64) {
    let n = 2.0 * idx.len() as f64;
    let mean = idx.iter().map(|&i| pairs[i].plus + pairs[i].minus).sum::<f64>() / n;
    let var = idx
        .iter()
        .map(|&i| (pairs[i].plus - mean).powi(2) + (pairs[i].minus - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

impl EsConfig {
    fn gradient_denominator(&self, n: usize, std: f64) -> f64 {
        let base = n as f64 * std;
        if self.sigma_scaled_gradient {
            2.0 * self.perturbation_std * base
        } else {
            base
        }
    }
}

// Folds the selected pairs in index order into `step_size * g`.
fn update_vector(dim: usize, eps: &[Vec<f64>], pairs: &[PairFitness], idx: &[usize], std: f64, cfg: &EsConfig) -> Vec<f64> {
    let mut g = vec![0.0; dim];
    if !(std > 0.0) {
        return g;
    }
    for &i in idx {
        let w = pairs[i].plus - pairs[i].minus;
        for (gj, ej) in g.iter_mut().zip(&eps[i]) {
            *gj += w * ej;
        }
    }
    let denom = cfg.gradient_denominator(idx.len(), std);
    for gj in g.iter_mut() {
        *gj = cfg.step_size * *gj / denom;
    }
    g
}

/// Indices of the elite pairs, ranked by the larger deviation of either side
/// from the mean fitness, returned in ascending index order.
pub fn elite_indices(pairs: &[PairFitness], keep: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..pairs.len()).collect();
    let (mean, _) = fitness_stats(pairs, &all);
    let score = |p: &PairFitness| (p.plus - mean).abs().max((p.minus - mean).abs());
    let mut order = all;
    order.sort_by(|&a, &b| score(&pairs[b]).total_cmp(&score(&pairs[a])).then(a.cmp(&b)));
    let mut elite: Vec<usize> = order.into_iter().take(keep).collect();
    elite.sort_unstable();
    elite
}

/// One elite-filtered antithetic update. `evaluate` receives candidate
/// parameters and a rollout seed.
pub fn es_step<F, R>(params: &[f64], mut evaluate: F, cfg: &EsConfig, rng: &mut R) -> Result<EsStep, OptimizerError>
where
    F: FnMut(&[f64], u64) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let eps = perturbations(cfg, params.len(), rng)?;
    let pairs = evaluate_pairs(params, &eps, &mut evaluate, cfg, rng);
    if pairs.iter().any(|p| !p.plus.is_finite() || !p.minus.is_finite()) {
        return Err(OptimizerError::Diverged { iteration: 0, checkpoint: params.to_vec() });
    }
    let elites = elite_indices(&pairs, cfg.elite_count());
    let (_, std) = fitness_stats(&pairs, &elites);
    let update = update_vector(params.len(), &eps, &pairs, &elites, std, cfg);
    let params_out = params.iter().zip(&update).map(|(p, u)| p + u).collect();
    let all: Vec<usize> = (0..pairs.len()).collect();
    let (mean, _) = fitness_stats(&pairs, &all);
    let best = pairs.iter().flat_map(|p| [p.plus, p.minus]).fold(f64::NEG_INFINITY, f64::max);
    Ok(EsStep { params: params_out, mean_fitness: mean, best_fitness: best, fitness_std: std, update, elites })
}

/// Plain antithetic ES without elite filtering. Matches [`es_step`] with
/// `keep_fraction = 1`.
pub fn vanilla_es_step<F, R>(params: &[f64], mut evaluate: F, cfg: &EsConfig, rng: &mut R) -> Result<Vec<f64>, OptimizerError>
where
    F: FnMut(&[f64], u64) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let eps = perturbations(cfg, params.len(), rng)?;
    let pairs = evaluate_pairs(params, &eps, &mut evaluate, cfg, rng);
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.plus + p.minus).sum::<f64>() / (2.0 * n);
    let var = pairs.iter().map(|p| (p.plus - mean).powi(2) + (p.minus - mean).powi(2)).sum::<f64>() / (2.0 * n);
    let std = var.sqrt();
    if !(std > 0.0) {
        return Ok(params.to_vec());
    }
    let mut g = vec![0.0; params.len()];
    for (p, e) in pairs.iter().zip(&eps) {
        for (gj, ej) in g.iter_mut().zip(e) {
            *gj += (p.plus - p.minus) * ej;
        }
    }
    let denom = cfg.gradient_denominator(pairs.len(), std);
    Ok(params.iter().zip(&g).map(|(p, gj)| p + cfg.step_size * gj / denom).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub mean_fitness: f64,
    pub best_fitness: f64,
}

/// Runs `iterations` ES updates. On non-finite fitness, returns the
/// parameters from before the failing update as the checkpoint.
pub fn train<F, R>(
    mut params: Vec<f64>,
    mut evaluate: F,
    cfg: &EsConfig,
    iterations: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<CurveRow>), OptimizerError>
where
    F: FnMut(&[f64], u64) -> f64,
    R: Rng + ?Sized,
{
    let mut curve = Vec::with_capacity(iterations);
    for iteration in 0..iterations {
        let step = match es_step(&params, &mut evaluate, cfg, rng) {
            Ok(s) => s,
            Err(OptimizerError::Diverged { checkpoint, .. }) => {
                return Err(OptimizerError::Diverged { iteration, checkpoint })
            }
            Err(e) => return Err(e),
        };
        curve.push(CurveRow { iteration, mean_fitness: step.mean_fitness, best_fitness: step.best_fitness });
        params = step.params;
    }
    Ok((params, curve))
}

pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("iteration,mean_fitness,best_fitness\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.iteration, r.mean_fitness, r.best_fitness));
    }
    s
}

/// Per-dimension running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub count: u64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Population variance per dimension.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|m| (m / self.count as f64).max(0.0)).collect()
    }

    pub fn update(&mut self, obs: &[f64]) -> Result<(), OptimizerError> {
        self.check(obs)?;
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(obs) {
            let d = x - *m;
            *m += d / n;
            *m2 += d * (x - *m);
        }
        Ok(())
    }

    fn check(&self, obs: &[f64]) -> Result<(), OptimizerError> {
        if obs.len() != self.dim() {
            return Err(OptimizerError::DimensionMismatch { expected: self.dim(), got: obs.len() });
        }
        Ok(())
    }

    /// `(obs - mean) / sqrt(var + 1e-8)`, folding `obs` in first when
    /// `update` is set.
    pub fn normalize(&mut self, obs: &[f64], update: bool) -> Result<Vec<f64>, OptimizerError> {
        if update {
            self.update(obs)?;
        }
        self.apply(obs)
    }

    pub fn apply(&self, obs: &[f64]) -> Result<Vec<f64>, OptimizerError> {
        self.check(obs)?;
        let var = self.variance();
        Ok(obs.iter().zip(&self.mean).zip(&var).map(|((x, m), v)| (x - m) / (v + 1e-8).sqrt()).collect())
    }

    pub fn apply_into(&self, obs: &[f64], out: &mut [f64]) {
        let n = self.count.max(1) as f64;
        for (((o, x), m), m2) in out.iter_mut().zip(obs).zip(&self.mean).zip(&self.m2) {
            let v = if self.count == 0 { 0.0 } else { (m2 / n).max(0.0) };
            *o = (x - m) / (v + 1e-8).sqrt();
        }
    }
}
