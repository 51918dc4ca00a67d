use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tangent_ig::attribution::integrated_gradients;
use tangent_ig::basepoint::{AlignmentObjective, OptimizerConfig};
use tangent_ig::data::{generate_synthetic, SyntheticKind, SyntheticSpec};
use tangent_ig::manifold::TangentBasis;
use tangent_ig::nn::{train_classifier, Activation, DenseNetwork, TrainConfig};
use tangent_ig::numerics::orthonormalize;
use tangent_ig::{Matrix, OrthonormalBasis, Vector};

struct Setup {
    net: DenseNetwork,
    x: Vector,
    tangent: TangentBasis,
}

fn setup(seed: u64, d: usize, n: usize) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = DenseNetwork::random(&[d, 6, 2], Activation::Softplus, Activation::Identity, &mut rng).unwrap();
    let x: Vector = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cols: Vec<Vector> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let basis = orthonormalize(&Matrix::from_columns(&cols).unwrap()).unwrap();
    let tangent = TangentBasis::new(x.clone(), basis).unwrap();
    Setup { net, x, tangent }
}

/// Base-point whose IG is tangent up to a controlled normal leak: start from
/// a random α and pull x − α towards the tangent space.
fn near_aligned_base(s: &Setup, rng: &mut impl Rng, leak: f64) -> Vector {
    let d = s.x.len();
    let offset: Vector = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut delta = s.tangent.project_tangent(&offset).unwrap();
    delta.axpy(leak, &s.tangent.project_normal(&offset).unwrap());
    &s.x - &delta
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alignment_threshold_equivalence(seed in any::<u64>(), d in 3usize..7, leak_exp in -8.0f64..0.0) {
        const EPS: f64 = 1e-6;
        let n = 1 + (seed as usize) % (d - 1);
        let s = setup(seed, d, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let alpha = near_aligned_base(&s, &mut rng, 10f64.powf(leak_exp));
        let objective = AlignmentObjective::new(&s.net, &s.x, &s.tangent, 16, 0).unwrap();
        let ig = integrated_gradients(&s.net, &s.x, &alpha, 16, 0).unwrap().values;
        prop_assume!(ig.norm() > 1e-6);
        let mu = s.tangent.tangent_fraction(&ig).unwrap();
        let energy = objective.energy(&alpha).unwrap();
        let threshold = EPS * 0.5 * ig.norm_squared();
        // Skip draws sitting on the boundary to within rounding.
        prop_assume!((energy - threshold).abs() > 1e-12 * threshold);
        prop_assert!(energy >= 0.0);
        prop_assert_eq!(mu >= 1.0 - EPS, energy <= threshold);
    }

    #[test]
    fn energy_is_nonnegative_and_zero_when_aligned(seed in any::<u64>(), d in 2usize..7) {
        let n = 1 + (seed as usize) % (d - 1);
        let s = setup(seed, d, n);
        let objective = AlignmentObjective::new(&s.net, &s.x, &s.tangent, 8, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha: Vector = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        prop_assert!(objective.energy(&alpha).unwrap() >= 0.0);
        prop_assert_eq!(objective.energy(&s.x).unwrap(), 0.0);
    }

    #[test]
    fn tangent_fraction_is_scale_invariant(seed in any::<u64>(), d in 2usize..10, scale in prop_oneof![-1e6f64..-1e-6, 1e-6f64..1e6]) {
        let n = 1 + (seed as usize) % (d - 1);
        let s = setup(seed, d, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vector = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu = s.tangent.tangent_fraction(&v).unwrap();
        prop_assert!((s.tangent.tangent_fraction(&v.scaled(scale)).unwrap() - mu).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&mu));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn optimizer_keeps_separation_and_never_increases_energy(seed in any::<u64>(), d in 2usize..5, min_sep in 0.05f64..0.5) {
        let n = 1 + (seed as usize) % (d - 1);
        let s = setup(seed, d, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let init: Vector = s.x.iter().map(|v| v + rng.random_range(0.6..1.0)).collect();
        let cfg = OptimizerConfig {
            max_iters: 25,
            quadrature_steps: 8,
            min_separation: Some(min_sep),
            learning_rate: 0.5,
            ..OptimizerConfig::default()
        };
        let objective = AlignmentObjective::new(&s.net, &s.x, &s.tangent, 8, 0).unwrap();
        let (alpha, trace) = objective.minimize(&cfg, &init).unwrap();
        prop_assert!(alpha.distance(&s.x) >= min_sep);
        prop_assert!(trace.records.len() <= cfg.max_iters + 1);
        for pair in trace.records.windows(2) {
            prop_assert!(pair[1].energy <= pair[0].energy);
            prop_assert!(pair[1].separation >= min_sep);
        }
        prop_assert!(trace.records.iter().all(|r| r.energy.is_finite()));
    }
}

#[test]
fn training_is_bit_reproducible() {
    let spec = SyntheticSpec {
        kind: SyntheticKind::GaussianBlobs { classes: 3 },
        dim: 4,
        intrinsic: 2,
        count: 60,
        noise: 0.1,
        seed: 9,
    };
    let ds = generate_synthetic(&spec).unwrap();
    let labels = ds.labels().unwrap().to_vec();
    let cfg = TrainConfig {
        epochs: 5,
        hidden: vec![8],
        ..TrainConfig::default()
    };
    let a = train_classifier(&ds, &labels, &cfg).unwrap();
    let b = train_classifier(&ds, &labels, &cfg).unwrap();
    for (la, lb) in a.layers().iter().zip(b.layers()) {
        assert_eq!(la.weights(), lb.weights());
        assert_eq!(la.bias(), lb.bias());
    }
}

#[test]
fn aligned_subspace_base_point_has_unit_fraction() {
    let d = 6;
    let basis = OrthonormalBasis::axes(d, &[1, 4]).unwrap();
    let x = Vector::from([0.3, -0.2, 0.9, 0.1, 0.5, -0.7]);
    let tangent = TangentBasis::new(x.clone(), basis).unwrap();
    let net = DenseNetwork::linear(
        Matrix::from_rows(&[vec![1.0, 2.0, -1.0, 0.5, 0.25, 3.0]]).unwrap(),
        Vector::zeros(1),
    )
    .unwrap();
    let mut alpha = x.clone();
    alpha[1] -= 1.0;
    alpha[4] += 2.0;
    let objective = AlignmentObjective::new(&net, &x, &tangent, 4, 0).unwrap();
    let eval = objective.evaluate(&alpha).unwrap();
    assert_eq!(eval.energy, 0.0);
    assert_eq!(eval.mu, Some(1.0));
}
