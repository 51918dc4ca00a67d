//! Gradient attributions: integrated gradients, general path methods, and
//! the base-point-free explainers (plain gradient, SmoothGrad,
//! input × gradient).
//!
//! Integrated gradients for input `x` and base-point `x'` is
//!
//! ```text
//! IG(x, x') = (x − x') ⊙ ∫₀¹ ∇F(x' + t (x − x')) dt
//! ```
//!
//! The integral is estimated with the midpoint rule on `m` equal
//! subintervals, so ∇F is never evaluated exactly at `x` or `x'`.

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::manifold::TangentBasis;
use crate::nn::Model;
use crate::numerics::{OrthonormalBasis, Vector};

/// Default number of midpoint quadrature steps.
pub const DEFAULT_STEPS: usize = 64;
/// SmoothGrad noise level and sample count used in the comparisons.
pub const SMOOTHGRAD_SIGMA: f64 = 0.02;
pub const SMOOTHGRAD_SAMPLES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    IntegratedGradients,
    PathIntegral,
    Gradient,
    SmoothGrad,
    InputTimesGradient,
}

impl Method {
    /// Whether the method takes a base-point.
    pub fn uses_base_point(self) -> bool {
        matches!(self, Method::IntegratedGradients | Method::PathIntegral)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::IntegratedGradients => "integrated_gradients",
            Method::PathIntegral => "path_integral",
            Method::Gradient => "gradient",
            Method::SmoothGrad => "smoothgrad",
            Method::InputTimesGradient => "input_times_gradient",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A feature attribution for one input and one model output.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub values: Vector,
    pub method: Method,
    pub target: usize,
    /// Present exactly for base-point methods.
    pub base_point: Option<Vector>,
    /// Quadrature steps (path methods) or noise samples (SmoothGrad); 0 otherwise.
    pub quadrature_steps: usize,
}

impl Attribution {
    fn new(values: Vector, method: Method, target: usize, base_point: Option<Vector>, steps: usize) -> Result<Self> {
        debug_assert_eq!(base_point.is_some(), method.uses_base_point());
        if !values.is_finite() {
            return Err(Error::NonFiniteAttribution(method.to_string()));
        }
        Ok(Attribution {
            values,
            method,
            target,
            base_point,
            quadrature_steps: steps,
        })
    }

    /// Sum of the attribution values; for path methods this approximates
    /// `F(x) − F(x')`.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Samples `γ(t_0), …, γ(t_m)` of a path from base-point to input.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    samples: Vec<Vector>,
}

impl PathSpec {
    pub fn new(samples: Vec<Vector>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument("a path needs at least two samples".into()));
        }
        let d = samples[0].len();
        for s in &samples {
            check_dim(d, s.len())?;
        }
        if samples.iter().all(|s| s == &samples[0]) {
            return Err(Error::DegeneratePath);
        }
        Ok(PathSpec { samples })
    }

    /// `segments + 1` equally spaced samples on the segment `base → x`.
    pub fn straight_line(base: &Vector, x: &Vector, segments: usize) -> Result<Self> {
        check_dim(base.len(), x.len())?;
        if segments == 0 {
            return Err(Error::InvalidArgument("need at least one segment".into()));
        }
        let dir = x - base;
        let samples = (0..=segments)
            .map(|k| {
                let mut p = base.clone();
                p.axpy(k as f64 / segments as f64, &dir);
                p
            })
            .collect();
        PathSpec::new(samples)
    }

    pub fn samples(&self) -> &[Vector] {
        &self.samples
    }

    pub fn start(&self) -> &Vector {
        &self.samples[0]
    }

    pub fn end(&self) -> &Vector {
        &self.samples[self.samples.len() - 1]
    }
}

/// Midpoint estimate of `∫₀¹ ∇F(base + t (x − base)) dt`.
pub fn path_average_gradient<M: Model + ?Sized>(
    model: &M,
    x: &Vector,
    base: &Vector,
    steps: usize,
    target: usize,
) -> Result<Vector> {
    check_dim(model.input_dim(), x.len())?;
    check_dim(model.input_dim(), base.len())?;
    if steps == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one step".into()));
    }
    let dir = x - base;
    let mut acc = Vector::zeros(x.len());
    for k in 0..steps {
        let t = (k as f64 + 0.5) / steps as f64;
        let mut p = base.clone();
        p.axpy(t, &dir);
        acc.axpy(1.0, &model.input_gradient(&p, target)?);
    }
    Ok(acc.scaled(1.0 / steps as f64))
}

pub fn integrated_gradients<M: Model + ?Sized>(
    model: &M,
    x: &Vector,
    base: &Vector,
    steps: usize,
    target: usize,
) -> Result<Attribution> {
    let avg = path_average_gradient(model, x, base, steps, target)?;
    let values = (x - base).hadamard(&avg);
    Attribution::new(values, Method::IntegratedGradients, target, Some(base.clone()), steps)
}

/// Integrated gradients expressed in an arbitrary orthonormal frame
/// `v_1..v_d`: `Σ_i ⟨x − x', v_i⟩ ⟨Ī, v_i⟩ v_i`, where `Ī` is the averaged
/// path gradient. In the standard frame this is the usual Hadamard form.
pub fn integrated_gradients_in_frame<M: Model + ?Sized>(
    model: &M,
    x: &Vector,
    base: &Vector,
    steps: usize,
    target: usize,
    frame: &OrthonormalBasis,
) -> Result<Vector> {
    if frame.count() != frame.ambient_dim() {
        return Err(Error::NotABasis(format!(
            "frame has {} vectors in R^{}",
            frame.count(),
            frame.ambient_dim()
        )));
    }
    let avg = path_average_gradient(model, x, base, steps, target)?;
    let delta = x - base;
    let mut out = Vector::zeros(x.len());
    for v in frame.vectors() {
        out.axpy(delta.dot(v) * avg.dot(v), v);
    }
    Ok(out)
}

/// Largest absolute difference between [`integrated_gradients_in_frame`] and
/// the standard-basis form. Zero for the standard frame and its
/// permutations; in general the frame form is not rotation invariant.
pub fn frame_invariance_check<M: Model + ?Sized>(
    model: &M,
    x: &Vector,
    base: &Vector,
    steps: usize,
    target: usize,
    frame: &OrthonormalBasis,
) -> Result<f64> {
    let in_frame = integrated_gradients_in_frame(model, x, base, steps, target, frame)?;
    let standard = integrated_gradients(model, x, base, steps, target)?.values;
    Ok(in_frame.max_abs_diff(&standard))
}

/// Discretized path integral `Σ_k ∂F/∂x_i(mid_k) Δγ_{i,k}` per coordinate,
/// with gradients taken at the midpoint of each segment.
pub fn path_attribution<M: Model + ?Sized>(model: &M, path: &PathSpec, target: usize) -> Result<Attribution> {
    check_dim(model.input_dim(), path.start().len())?;
    let samples = path.samples();
    let d = samples[0].len();
    let mut values = Vector::zeros(d);
    for seg in samples.windows(2) {
        let step = &seg[1] - &seg[0];
        let mut mid = seg[0].clone();
        mid.axpy(0.5, &step);
        let g = model.input_gradient(&mid, target)?;
        for i in 0..d {
            values[i] += g[i] * step[i];
        }
    }
    Attribution::new(
        values,
        Method::PathIntegral,
        target,
        Some(path.start().clone()),
        samples.len() - 1,
    )
}

pub fn gradient_explainer<M: Model + ?Sized>(model: &M, x: &Vector, target: usize) -> Result<Attribution> {
    let g = model.input_gradient(x, target)?;
    Attribution::new(g, Method::Gradient, target, None, 0)
}

/// Mean gradient over `samples` Gaussian perturbations `x + a`,
/// `a ~ N(0, σ² I)`, drawn from a generator seeded with `seed`.
pub fn smoothgrad<M: Model + ?Sized>(
    model: &M,
    x: &Vector,
    target: usize,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<Attribution> {
    check_dim(model.input_dim(), x.len())?;
    if !(sigma >= 0.0) || samples == 0 {
        return Err(Error::InvalidArgument("smoothgrad needs sigma >= 0 and samples >= 1".into()));
    }
    if sigma == 0.0 {
        let g = model.input_gradient(x, target)?;
        return Attribution::new(g, Method::SmoothGrad, target, None, samples);
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Vector::zeros(x.len());
    for _ in 0..samples {
        let p: Vector = x.iter().map(|v| v + noise.sample(&mut rng)).collect();
        acc.axpy(1.0, &model.input_gradient(&p, target)?);
    }
    Attribution::new(acc.scaled(1.0 / samples as f64), Method::SmoothGrad, target, None, samples)
}

pub fn input_times_gradient<M: Model + ?Sized>(model: &M, x: &Vector, target: usize) -> Result<Attribution> {
    let g = model.input_gradient(x, target)?;
    Attribution::new(x.hadamard(&g), Method::InputTimesGradient, target, None, 0)
}

/// One row of the attribution export.
#[derive(Debug, Clone)]
pub struct AttributionRow<'a> {
    pub point_id: usize,
    /// Method label, e.g. `ig_zero`.
    pub label: &'a str,
    pub target: usize,
    pub values: &'a Vector,
}

/// Writes attributions as CSV with columns
/// `point_id,method,target,mu,norm_fraction,v0,…,v{d-1}`.
///
/// `mu` and `norm_fraction` are measured against the tangent basis at the
/// row's point, and left empty for an all-zero attribution.
pub fn write_attribution_csv<'a, W: Write>(
    out: &mut W,
    rows: impl IntoIterator<Item = (AttributionRow<'a>, &'a TangentBasis)>,
    dim: usize,
) -> std::io::Result<()> {
    write!(out, "point_id,method,target,mu,norm_fraction")?;
    for i in 0..dim {
        write!(out, ",v{i}")?;
    }
    writeln!(out)?;
    for (row, tb) in rows {
        let (mu, nf) = match tb.tangent_fraction(row.values) {
            Ok(mu) => (mu.to_string(), mu.sqrt().to_string()),
            Err(_) => (String::new(), String::new()),
        };
        write!(out, "{},{},{},{},{}", row.point_id, row.label, row.target, mu, nf)?;
        for v in row.values.iter() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_models {
    use super::*;

    /// `F(x) = Σ c_i x_i²`, with gradient `2 c ⊙ x`.
    pub struct Quadratic(pub Vector);

    impl Model for Quadratic {
        fn input_dim(&self) -> usize {
            self.0.len()
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn forward(&self, x: &Vector) -> Result<Vector> {
            Ok(Vector::from([x.iter().zip(self.0.iter()).map(|(x, c)| c * x * x).sum::<f64>()]))
        }
        fn input_gradient(&self, x: &Vector, _target: usize) -> Result<Vector> {
            Ok(x.iter().zip(self.0.iter()).map(|(x, c)| 2.0 * c * x).collect())
        }
    }
}
