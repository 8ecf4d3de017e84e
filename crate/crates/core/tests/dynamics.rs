use thinned_mfld::dynamics::{mfld_step, run_mfld, run_mfld_scheduled, Init, MfldConfig, ParticleState, Schedule};
use thinned_mfld::kernels::KernelSpec;
use thinned_mfld::objectives::{DriftModel, GaussianMixture, MmdModel, MmdTarget};
use thinned_mfld::points::PointSet;
use thinned_mfld::rng::StreamRng;
use thinned_mfld::thinning::{InteractionStrategy, KtParams};
use thinned_mfld::{Error, Result, Scalar};

/// No interaction at all: the update is a discretized Ornstein-Uhlenbeck process.
struct Free {
    dim: usize,
}

impl<T: Scalar> DriftModel<T> for Free {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _: &PointSet<T>, _: &[usize], _: usize, _: &mut StreamRng, out: &mut [T]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = T::zero());
        Ok(())
    }

    fn objective(&self, _: &PointSet<T>) -> Result<T> {
        Ok(T::zero())
    }
}

fn quantize<T: Scalar>(strategy: InteractionStrategy<T>, n: usize, iterations: u64, seed: u64) -> MfldConfig<T> {
    MfldConfig {
        step_size: T::one(),
        noise: T::lit(1e-4),
        confinement: T::lit(1e-4),
        n,
        iterations,
        strategy,
        seed,
        init: Init::standard_normal(),
    }
}

fn corners<T: Scalar>() -> MmdModel<T> {
    MmdModel::new(
        KernelSpec::gaussian(T::one()).unwrap(),
        MmdTarget::Mixture(GaussianMixture::four_corners()),
    )
    .unwrap()
}

fn final_mmd(trace: &thinned_mfld::dynamics::RunTrace<f64>) -> f64 {
    trace.rows.last().unwrap().metrics[0].1
}

#[test]
fn free_particles_reach_the_discrete_stationary_variance() {
    let (gamma, zeta, lambda) = (0.1, 1.0, 0.5);
    let cfg = MfldConfig {
        step_size: gamma,
        noise: lambda,
        confinement: zeta,
        n: 4096,
        iterations: 200,
        strategy: InteractionStrategy::UniformRandom { g: 0 },
        seed: 3,
        init: Init::Gaussian { mean: 5.0, variance: 0.0 },
    };
    let trace = run_mfld(&cfg, &mut Free { dim: 2 }, 200).unwrap();
    let x = trace.state.positions.as_slice();
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let a: f64 = 1.0 - gamma * zeta;
    let want = 2.0 * lambda * gamma / (1.0 - a * a);
    // 8192 coordinates: the sample variance has relative spread near 1.6%.
    assert!((var - want).abs() < 0.06 * want, "variance {var} vs {want}");
    assert!(mean.abs() < 0.05, "mean {mean}");
}

#[test]
fn quantization_lowers_the_mmd_for_every_strategy() {
    let k = KernelSpec::gaussian(1.0).unwrap();
    for strategy in [
        InteractionStrategy::Full,
        InteractionStrategy::KtSplitCompress(KtParams::new(0, k)),
        InteractionStrategy::KtCompress(KtParams::new(1, k)),
        InteractionStrategy::UniformRandom { g: 0 },
        InteractionStrategy::RandomBatch { p: 8 },
    ] {
        let cfg = quantize(strategy, 64, 60, 0);
        let trace = run_mfld(&cfg, &mut corners(), 60).unwrap();
        let first = trace.rows[0].metrics[0].1;
        let last = final_mmd(&trace);
        assert!(last < 0.5 * first, "{strategy:?}: {first} -> {last}");
    }
}

#[test]
fn runs_are_reproducible_and_seeds_differ() {
    let k = KernelSpec::gaussian(1.0).unwrap();
    let strategy = InteractionStrategy::KtCompress(KtParams::new(1, k));
    let a = run_mfld(&quantize(strategy, 64, 10, 1), &mut corners(), 1).unwrap();
    let b = run_mfld(&quantize(strategy, 64, 10, 1), &mut corners(), 1).unwrap();
    let c = run_mfld(&quantize(strategy, 64, 10, 2), &mut corners(), 1).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.state.positions, c.state.positions);
}

#[test]
fn single_precision_runs_track_double_precision() {
    let k64 = KernelSpec::gaussian(1.0).unwrap();
    let k32 = KernelSpec::gaussian(1.0f32).unwrap();
    let d = run_mfld(&quantize(InteractionStrategy::KtSplitCompress(KtParams::new(0, k64)), 64, 40, 0), &mut corners(), 40)
        .unwrap();
    let s = run_mfld(&quantize(InteractionStrategy::KtSplitCompress(KtParams::new(0, k32)), 64, 40, 0), &mut corners(), 40)
        .unwrap();
    assert!(s.state.positions.all_finite());
    let mmd32 = s.rows.last().unwrap().metrics[0].1 as f64;
    let first = d.rows[0].metrics[0].1;
    assert!(mmd32 < 0.5 * first, "f32 run did not descend: {mmd32}");
    assert!((mmd32 - final_mmd(&d)).abs() < 0.5 * final_mmd(&d) + 1e-3);
}

#[test]
fn schedules_and_pair_totals_are_consistent() {
    let cfg: MfldConfig<f64> = quantize(InteractionStrategy::UniformRandom { g: 0 }, 64, 10, 0);
    let mut seen = Vec::new();
    let trace = run_mfld_scheduled(&cfg, &mut corners(), &Schedule::At(vec![3, 7, 50]), |r| seen.push(r.iteration))
        .unwrap();
    assert_eq!(seen, vec![0, 3, 7, 10]);
    let per_step = (64 * 8) as u64;
    for row in &trace.rows {
        assert_eq!(row.cumulative_pairs, row.iteration * per_step);
    }
    assert_eq!(trace.state.iteration, 10);
}

#[test]
fn a_step_rejects_mismatched_dimensions_and_divergence() {
    let cfg: MfldConfig<f64> = quantize(InteractionStrategy::Full, 16, 1, 0);
    let mut state = ParticleState {
        positions: PointSet::<f64>::zeros(16, 3),
        iteration: 0,
    };
    assert!(matches!(
        mfld_step(&mut state, &mut corners(), &cfg),
        Err(Error::DimensionMismatch { .. })
    ));

    let mut wild: MfldConfig<f64> = quantize(InteractionStrategy::Full, 16, 5, 0);
    wild.step_size = 1e13;
    let err = run_mfld(&wild, &mut corners(), 1).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
}
