//! Base-point selection for integrated gradients.
//!
//! Besides the usual heuristics (zero, farthest data point, uniform noise,
//! Gaussian perturbation of the input) this module finds base-points whose
//! IG attribution lies in the tangent space of the data manifold. With
//! `A(α) = IG(x, α)` and `π^⊥` the normal projection at `x`,
//!
//! ```text
//! H(α) = π^⊥ A(α)        E(α) = ½ ‖H(α)‖²
//! ```
//!
//! `A(α)` is tangent exactly when `E(α) = 0`, so a tangentially aligned
//! base-point is a global minimizer of `E`. The search runs projected
//! gradient descent on `E` with central-difference gradients, keeping `α`
//! inside the data box and at least `δ` away from `x` (`α = x` makes the
//! attribution vanish and is excluded).
//!
//! At a minimizer the residuals `⟨H(α), ∂H/∂α_i⟩ = ∂E/∂α_i` vanish, and a
//! Hessian of `E` with a dominant positive diagonal certifies a strict local
//! minimum via Gershgorin's theorem.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{integrated_gradients, DEFAULT_STEPS};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::manifold::{ManifoldProvider, TangentBasis};
use crate::nn::Model;
use crate::numerics::{tolerances, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PNorm {
    L1,
    L2,
}

/// Heuristic base-point choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineSpec {
    Zero,
    /// The dataset point farthest from `x` in the given norm.
    MaxDistance { p: PNorm },
    /// Independent uniform draws per feature within `bounds`, or the
    /// dataset's feature bounds when `bounds` is absent.
    Uniform {
        #[serde(default)]
        bounds: Option<Vec<(f64, f64)>>,
    },
    /// `x + σ v` with `v ~ N(0, I)`, clipped to the dataset's feature bounds.
    Gaussian { sigma: f64 },
}

impl BaselineSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::Zero => "zero",
            BaselineSpec::MaxDistance { .. } => "max_distance",
            BaselineSpec::Uniform { .. } => "uniform",
            BaselineSpec::Gaussian { .. } => "gaussian",
        }
    }
}

pub fn baseline_basepoint(
    spec: &BaselineSpec,
    x: &Vector,
    data: &Dataset,
    rng: &mut impl Rng,
) -> Result<Vector> {
    let d = x.len();
    match spec {
        BaselineSpec::Zero => Ok(Vector::zeros(d)),
        BaselineSpec::MaxDistance { p } => {
            if data.is_empty() {
                return Err(Error::EmptyDataset);
            }
            check_dim(data.dim(), d)?;
            let dist = |y: &Vector| {
                let diff = x - y;
                match p {
                    PNorm::L1 => diff.norm_l1(),
                    PNorm::L2 => diff.norm(),
                }
            };
            let mut best = 0;
            let mut best_dist = dist(data.point(0));
            for (i, y) in data.points().iter().enumerate().skip(1) {
                let dy = dist(y);
                // Strict comparison keeps the lowest index on ties.
                if dy > best_dist {
                    best = i;
                    best_dist = dy;
                }
            }
            Ok(data.point(best).clone())
        }
        BaselineSpec::Uniform { bounds } => {
            let bounds = bounds.as_deref().unwrap_or(data.bounds());
            check_dim(d, bounds.len())?;
            bounds
                .iter()
                .enumerate()
                .map(|(i, &(lo, hi))| {
                    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(Error::InvalidBounds {
                            feature: i,
                            min: lo,
                            max: hi,
                        });
                    }
                    Ok(if lo == hi { lo } else { rng.random_range(lo..=hi) })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Vector::from)
        }
        BaselineSpec::Gaussian { sigma } => {
            if !(*sigma >= 0.0) {
                return Err(Error::InvalidArgument("gaussian sigma must be >= 0".into()));
            }
            check_dim(d, data.bounds().len())?;
            if *sigma == 0.0 {
                return Ok(x.clone());
            }
            Ok(x.iter()
                .zip(data.bounds())
                .map(|(xi, (lo, hi))| {
                    let v: f64 = StandardNormal.sample(rng);
                    (xi + sigma * v).clamp(*lo, *hi)
                })
                .collect())
        }
    }
}

/// The alignment energy `E(α)` of integrated gradients at a fixed input,
/// model output and tangent space.
pub struct AlignmentObjective<'a, M: ?Sized> {
    model: &'a M,
    x: &'a Vector,
    tangent: &'a TangentBasis,
    steps: usize,
    target: usize,
}

/// Energy and tangent fraction of the attribution at one base-point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEval {
    pub energy: f64,
    /// `None` when the attribution is exactly zero.
    pub mu: Option<f64>,
}

impl<'a, M: Model + Sync + ?Sized> AlignmentObjective<'a, M> {
    pub fn new(model: &'a M, x: &'a Vector, tangent: &'a TangentBasis, steps: usize, target: usize) -> Result<Self> {
        check_dim(model.input_dim(), x.len())?;
        check_dim(tangent.ambient_dim(), x.len())?;
        if steps == 0 {
            return Err(Error::InvalidArgument("quadrature needs at least one step".into()));
        }
        if target >= model.output_dim() {
            return Err(Error::InvalidArgument(format!("target {target} out of range")));
        }
        Ok(AlignmentObjective {
            model,
            x,
            tangent,
            steps,
            target,
        })
    }

    pub fn input(&self) -> &Vector {
        self.x
    }

    pub fn tangent(&self) -> &TangentBasis {
        self.tangent
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `IG(x, α)`.
    pub fn attribution(&self, alpha: &Vector) -> Result<Vector> {
        Ok(integrated_gradients(self.model, self.x, alpha, self.steps, self.target)?.values)
    }

    /// `H(α) = π^⊥ IG(x, α)`.
    pub fn normal_component(&self, alpha: &Vector) -> Result<Vector> {
        self.tangent.project_normal(&self.attribution(alpha)?)
    }

    pub fn energy(&self, alpha: &Vector) -> Result<f64> {
        Ok(self.evaluate(alpha)?.energy)
    }

    pub fn evaluate(&self, alpha: &Vector) -> Result<EnergyEval> {
        let a = self.attribution(alpha)?;
        let h = self.tangent.project_normal(&a)?;
        let energy = 0.5 * h.norm_squared();
        if !energy.is_finite() {
            return Err(Error::NonFiniteEnergy);
        }
        let mu = self.tangent.tangent_fraction(&a).ok();
        Ok(EnergyEval { energy, mu })
    }

    fn shifted(alpha: &Vector, i: usize, delta: f64) -> Vector {
        let mut a = alpha.clone();
        a[i] += delta;
        a
    }

    /// Central differences of `E`: `[E(α + h e_i) − E(α − h e_i)] / 2h`.
    pub fn energy_gradient(&self, alpha: &Vector, h: f64) -> Result<Vector> {
        check_step(h)?;
        check_dim(self.dim(), alpha.len())?;
        let grad = (0..self.dim())
            .into_par_iter()
            .map(|i| {
                let plus = self.energy(&Self::shifted(alpha, i, h))?;
                let minus = self.energy(&Self::shifted(alpha, i, -h))?;
                Ok((plus - minus) / (2.0 * h))
            })
            .collect::<Result<Vec<f64>>>()?;
        let grad = Vector::from(grad);
        if !grad.is_finite() {
            return Err(Error::NonFiniteEnergy);
        }
        Ok(grad)
    }

    /// `⟨H(α), ∂H/∂α_i⟩` with `∂H/∂α_i` by central differences. Vanishes at
    /// every tangentially aligned base-point and equals `∂E/∂α_i`.
    pub fn necessary_condition_residuals(&self, alpha: &Vector, h: f64) -> Result<Vector> {
        check_step(h)?;
        check_dim(self.dim(), alpha.len())?;
        let h0 = self.normal_component(alpha)?;
        if !h0.is_finite() {
            return Err(Error::NonFiniteEnergy);
        }
        let res = (0..self.dim())
            .into_par_iter()
            .map(|i| {
                let plus = self.normal_component(&Self::shifted(alpha, i, h))?;
                let minus = self.normal_component(&Self::shifted(alpha, i, -h))?;
                let dh = (&plus - &minus).scaled(1.0 / (2.0 * h));
                Ok(h0.dot(&dh))
            })
            .collect::<Result<Vec<f64>>>()?;
        let res = Vector::from(res);
        if !res.is_finite() {
            return Err(Error::NonFiniteEnergy);
        }
        Ok(res)
    }

    /// Symmetrized central-difference Hessian of `E`. Needs `O(d²)` energy
    /// evaluations, so dimensions above `cap` are refused.
    pub fn hessian_fd(&self, alpha: &Vector, h: f64, cap: usize) -> Result<Matrix> {
        check_step(h)?;
        let d = self.dim();
        check_dim(d, alpha.len())?;
        if d > cap {
            return Err(Error::DimensionCapExceeded { dim: d, cap });
        }
        let e0 = self.energy(alpha)?;
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
        let values = pairs
            .par_iter()
            .map(|&(i, j)| {
                if i == j {
                    let plus = self.energy(&Self::shifted(alpha, i, h))?;
                    let minus = self.energy(&Self::shifted(alpha, i, -h))?;
                    Ok((plus - 2.0 * e0 + minus) / (h * h))
                } else {
                    let at = |si: f64, sj: f64| {
                        let mut a = alpha.clone();
                        a[i] += si * h;
                        a[j] += sj * h;
                        self.energy(&a)
                    };
                    let v = at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?;
                    Ok(v / (4.0 * h * h))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut hess = Matrix::zeros(d, d);
        for (&(i, j), v) in pairs.iter().zip(values) {
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
        if !hess.is_finite() {
            return Err(Error::NonFiniteEnergy);
        }
        Ok(hess.symmetrized())
    }

    /// Energy, first-order residuals and (for `d ≤ hessian_cap`) the
    /// Gershgorin verdict on the Hessian at `alpha`.
    pub fn diagnostics(&self, alpha: &Vector, h: f64, hessian_cap: usize) -> Result<AlignmentDiagnostics> {
        let eval = self.evaluate(alpha)?;
        let residuals = self.necessary_condition_residuals(alpha, h)?;
        let verdict = if self.dim() <= hessian_cap {
            Some(gershgorin_check(&self.hessian_fd(alpha, h, hessian_cap)?)?)
        } else {
            None
        };
        Ok(AlignmentDiagnostics {
            energy: eval.energy,
            mu: eval.mu,
            separation: alpha.distance(self.x),
            residual_max_abs: residuals.max_abs(),
            necessary_residuals: residuals,
            hessian_available: verdict.is_some(),
            gershgorin_verdict: verdict,
        })
    }
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {h}")))
    }
}

/// Default cap on the dimension for finite-difference Hessians.
pub const DEFAULT_HESSIAN_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GershgorinVerdict {
    /// Every diagonal entry exceeds its off-diagonal absolute row sum.
    PositiveDefinite,
    /// The disks reach zero or below; definiteness is undecided.
    Inconclusive,
}

impl fmt::Display for GershgorinVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GershgorinVerdict::PositiveDefinite => "positive_definite",
            GershgorinVerdict::Inconclusive => "inconclusive",
        })
    }
}

/// Off-diagonal absolute row sums `R_i = Σ_{j≠i} |m_ij|`.
pub fn gershgorin_radii(m: &Matrix) -> Vec<f64> {
    (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v.abs())
                .sum()
        })
        .collect()
}

/// Sufficient test for positive definiteness of a symmetric matrix:
/// `m_ii > R_i` for every row.
pub fn gershgorin_check(m: &Matrix) -> Result<GershgorinVerdict> {
    if m.rows() != m.cols() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let asym = m.asymmetry();
    if asym > tolerances::SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let dominant = gershgorin_radii(m)
        .iter()
        .enumerate()
        .all(|(i, r)| m[(i, i)] > *r);
    Ok(if dominant {
        GershgorinVerdict::PositiveDefinite
    } else {
        GershgorinVerdict::Inconclusive
    })
}

/// Structured report on a candidate base-point.
///
/// Serialized as JSON with keys `energy`, `mu`, `separation`,
/// `residual_max_abs`, `necessary_residuals`, `hessian_available` and
/// `gershgorin_verdict` (`"positive_definite"`, `"inconclusive"` or `null`).
/// A positive-definite verdict certifies a strict local minimum of the
/// energy, not that the energy is zero; read `energy` for that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDiagnostics {
    pub energy: f64,
    pub mu: Option<f64>,
    pub separation: f64,
    pub residual_max_abs: f64,
    pub necessary_residuals: Vector,
    pub hessian_available: bool,
    pub gershgorin_verdict: Option<GershgorinVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Central-difference step for the energy gradient.
    pub fd_step: f64,
    /// Lower bound `δ` on `‖α − x‖₂`; `None` means `1e-3 · √d`.
    pub min_separation: Option<f64>,
    /// Per-feature clip box; `None` leaves `α` unconstrained.
    #[serde(skip)]
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Set by the caller; experiments use their own `quadrature_steps`.
    #[serde(skip)]
    pub quadrature_steps: usize,
    /// Stop once `E < tolerance`.
    pub tolerance: f64,
    /// Step halvings tried per iteration before giving up.
    pub max_halvings: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.1,
            max_iters: 200,
            fd_step: 1e-4,
            min_separation: None,
            bounds: None,
            quadrature_steps: DEFAULT_STEPS,
            tolerance: 1e-8,
            max_halvings: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn separation_for(&self, d: usize) -> f64 {
        self.min_separation.unwrap_or(1e-3 * (d as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.fd_step > 0.0
            && self.min_separation.is_none_or(|s| s > 0.0)
            && self.quadrature_steps > 0
            && self.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "optimizer needs learning_rate, fd_step, min_separation > 0 and max_iters, quadrature_steps >= 1".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub separation: f64,
    /// Tangent fraction of the attribution; `None` if it is exactly zero.
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerStatus {
    /// Energy fell below the tolerance.
    Converged,
    /// Iteration budget exhausted.
    MaxIters,
    /// No step reduced the energy while pinned at the minimum separation.
    SeparationFloor,
    /// No step reduced the energy away from the separation floor.
    Stalled,
}

impl fmt::Display for OptimizerStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerStatus::Converged => "converged",
            OptimizerStatus::MaxIters => "max_iters",
            OptimizerStatus::SeparationFloor => "separation_floor",
            OptimizerStatus::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub records: Vec<TraceRecord>,
    pub status: OptimizerStatus,
}

impl OptimizerTrace {
    pub fn final_record(&self) -> &TraceRecord {
        self.records.last().expect("a trace always holds the initial iterate")
    }

    /// CSV with header `iter,E,grad_norm,separation,mu`.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "iter,E,grad_norm,separation,mu")?;
        for r in &self.records {
            let mu = r.mu.map(|m| m.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", r.iter, r.energy, r.grad_norm, r.separation, mu)?;
        }
        Ok(())
    }
}

fn clip(v: &mut Vector, bounds: Option<&[(f64, f64)]>) {
    if let Some(b) = bounds {
        for (a, (lo, hi)) in v.iter_mut().zip(b) {
            *a = a.clamp(*lo, *hi);
        }
    }
}

/// Pushes `cand` radially away from `x` until it is at least `delta` away.
/// `fallback` supplies the direction when `cand == x`.
fn enforce_separation(x: &Vector, cand: Vector, fallback: &Vector, delta: f64) -> Vector {
    let diff = &cand - x;
    let r = diff.norm();
    if r >= delta {
        return cand;
    }
    let dir = if r > 0.0 {
        diff.scaled(1.0 / r)
    } else {
        let f = fallback - x;
        f.scaled(1.0 / f.norm())
    };
    // Aim a hair outside the floor so rounding cannot land inside it.
    let mut out = x.clone();
    out.axpy(delta * (1.0 + 1e-12), &dir);
    out
}

impl<M: Model + Sync + ?Sized> AlignmentObjective<'_, M> {
    /// Projected gradient descent on `E` from `init`.
    ///
    /// Each iteration tries `α − lr·∇E`, clipped to the bounds and pushed
    /// out to the separation floor, halving the step until the energy does
    /// not increase. The accepted energies are therefore non-increasing and
    /// the last iterate is the best one.
    pub fn minimize(&self, cfg: &OptimizerConfig, init: &Vector) -> Result<(Vector, OptimizerTrace)> {
        cfg.validate()?;
        let x = self.x;
        check_dim(self.dim(), init.len())?;
        let bounds = cfg.bounds.as_deref();
        if let Some(b) = bounds {
            check_dim(self.dim(), b.len())?;
            if let Some(feature) = init.iter().zip(b).position(|(a, (lo, hi))| a < lo || a > hi) {
                return Err(Error::InitOutOfBounds { feature });
            }
        }
        let delta = cfg.separation_for(self.dim());
        let distance = init.distance(x);
        if distance < delta {
            return Err(Error::InitTooCloseToInput {
                distance,
                min_separation: delta,
            });
        }
        let mut alpha = init.clone();
        let mut current = self.evaluate(&alpha)?;
        let mut records = Vec::new();
        let status = loop {
            let grad = self.energy_gradient(&alpha, cfg.fd_step)?;
            let separation = alpha.distance(x);
            records.push(TraceRecord {
                iter: records.len(),
                energy: current.energy,
                grad_norm: grad.norm(),
                separation,
                mu: current.mu,
            });
            if current.energy < cfg.tolerance {
                break OptimizerStatus::Converged;
            }
            if records.len() >= cfg.max_iters {
                break OptimizerStatus::MaxIters;
            }
            let mut step = cfg.learning_rate;
            let mut accepted = None;
            for _ in 0..=cfg.max_halvings {
                let mut cand = alpha.clone();
                cand.axpy(-step, &grad);
                clip(&mut cand, bounds);
                let mut cand = enforce_separation(x, cand, &alpha, delta);
                clip(&mut cand, bounds);
                if cand.distance(x) >= delta && cand != alpha {
                    let eval = self.evaluate(&cand)?;
                    if eval.energy <= current.energy {
                        accepted = Some((cand, eval));
                        break;
                    }
                }
                step *= 0.5;
            }
            match accepted {
                Some((cand, eval)) => {
                    alpha = cand;
                    current = eval;
                }
                None => {
                    let on_floor = separation <= delta * (1.0 + 1e-9);
                    break if on_floor {
                        OptimizerStatus::SeparationFloor
                    } else {
                        OptimizerStatus::Stalled
                    };
                }
            }
        };
        Ok((alpha, OptimizerTrace { records, status }))
    }
}

/// Searches for a tangentially aligned base-point for `x`, using the
/// tangent space the provider reports at `x`.
pub fn optimize_basepoint<M: Model + Sync + ?Sized>(
    x: &Vector,
    model: &M,
    provider: &ManifoldProvider,
    target: usize,
    cfg: &OptimizerConfig,
    init: &Vector,
) -> Result<(Vector, OptimizerTrace)> {
    let tangent = provider.tangent_basis_at(x)?;
    AlignmentObjective::new(model, x, &tangent, cfg.quadrature_steps, target)?.minimize(cfg, init)
}
