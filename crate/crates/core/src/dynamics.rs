//! Discrete-time mean-field Langevin dynamics.
//!
//! One step freezes the current positions, selects a single coreset for the
//! iteration (or a random batch partition), evaluates every particle's drift
//! against it in parallel and applies
//! `x <- x - gamma (drift + zeta x) + sqrt(2 sigma gamma) xi`.
//! All randomness comes from counter-based streams, so the next state is a
//! function of `(seed, iteration)` only.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objectives::DriftModel;
use crate::points::PointSet;
use crate::rng::{fill_std_normal, std_normal, stream, Purpose};
use crate::scalar::Scalar;
use crate::thinning::{rbm_partition, select_coreset, InteractionStrategy};

/// Coordinates beyond this magnitude abort the run.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Initial particle distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Init<T> {
    /// i.i.d. `N(mean, variance)` per coordinate.
    Gaussian { mean: T, variance: T },
    /// Equal-weight mixture with means evenly spaced on a circle in the
    /// first two coordinates and isotropic within-component noise.
    CircleMixture { components: usize, radius: T, std: T },
    /// Explicit positions.
    Points(PointSet<T>),
}

impl<T: Scalar> Init<T> {
    pub fn standard_normal() -> Self {
        Init::Gaussian {
            mean: T::zero(),
            variance: T::one(),
        }
    }

    /// Draws `n` particles in R^dim. Particle `i` uses its own stream, so
    /// the sample does not depend on `n` beyond truncation.
    pub fn sample(&self, n: usize, dim: usize, seed: u64) -> Result<PointSet<T>> {
        match self {
            Init::Points(p) => {
                if p.len() != n || p.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: n * dim,
                        got: p.len() * p.dim(),
                    });
                }
                Ok(p.clone())
            }
            Init::Gaussian { mean, variance } => {
                if *variance < T::zero() {
                    return Err(Error::InvalidConfig("init variance must be nonnegative".into()));
                }
                let sd = variance.sqrt();
                let mut out = PointSet::zeros(n, dim);
                for i in 0..n {
                    let mut rng = stream(seed, Purpose::Init, 0, i as u64);
                    let row = out.row_mut(i);
                    fill_std_normal(&mut rng, row);
                    row.iter_mut().for_each(|v| *v = *mean + sd * *v);
                }
                Ok(out)
            }
            Init::CircleMixture { components, radius, std } => {
                if *components == 0 || dim < 2 {
                    return Err(Error::InvalidConfig(
                        "circle mixture needs at least one component and dimension >= 2".into(),
                    ));
                }
                let mut out = PointSet::zeros(n, dim);
                for i in 0..n {
                    let mut rng = stream(seed, Purpose::Init, 0, i as u64);
                    let c = rand::Rng::random_range(&mut rng, 0..*components);
                    let angle = T::lit(std::f64::consts::TAU * c as f64 / *components as f64);
                    let row = out.row_mut(i);
                    for (j, v) in row.iter_mut().enumerate() {
                        let centre = match j {
                            0 => *radius * angle.cos(),
                            1 => *radius * angle.sin(),
                            _ => T::zero(),
                        };
                        *v = centre + *std * std_normal::<T, _>(&mut rng);
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfldConfig<T> {
    pub step_size: T,
    pub noise: T,
    pub confinement: T,
    pub n: usize,
    pub iterations: u64,
    pub strategy: InteractionStrategy<T>,
    pub seed: u64,
    pub init: Init<T>,
}

impl<T: Scalar> MfldConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > T::zero()) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.noise < T::zero() || self.confinement < T::zero() {
            return Err(Error::InvalidConfig("noise and confinement must be nonnegative".into()));
        }
        self.strategy.validate(self.n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState<T> {
    pub positions: PointSet<T>,
    pub iteration: u64,
}

/// Work done by one step, in kernel (or neuron) pair evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    pub coreset_size: usize,
    /// Particle-coreset pairs in the drift phase.
    pub drift_pairs: u64,
    /// Kernel evaluations in the kt-split walks.
    pub walk_evals: u64,
    /// Kernel evaluations in the swap refinement.
    pub swap_evals: u64,
}

impl StepReport {
    /// Interaction pairs charged to the step: drift plus swap refinement.
    pub fn interaction_pairs(&self) -> u64 {
        self.drift_pairs + self.swap_evals
    }
}

/// Per-particle coresets for one iteration.
enum Interaction {
    Shared(Vec<usize>),
    Batches { batches: Vec<Vec<usize>>, owner: Vec<usize> },
}

impl Interaction {
    fn for_particle(&self, i: usize) -> &[usize] {
        match self {
            Interaction::Shared(c) => c,
            Interaction::Batches { batches, owner } => &batches[owner[i]],
        }
    }
}

fn select_interaction<T: Scalar>(
    strategy: &InteractionStrategy<T>,
    positions: &PointSet<T>,
    seed: u64,
    iteration: u64,
) -> Result<(Interaction, StepReport)> {
    let n = positions.len();
    let mut rng = stream(seed, Purpose::Thin, iteration, 0);
    match strategy {
        InteractionStrategy::RandomBatch { p } => {
            strategy.validate(n)?;
            let part = rbm_partition(n, *p, &mut rng)?;
            let owner = part.owners(n);
            let pairs = part.batches.iter().map(|b| (b.len() * b.len()) as u64).sum();
            let report = StepReport {
                coreset_size: *p,
                drift_pairs: pairs,
                ..StepReport::default()
            };
            Ok((
                Interaction::Batches {
                    batches: part.batches,
                    owner,
                },
                report,
            ))
        }
        _ => {
            let cs = select_coreset(strategy, positions, &mut rng)?;
            let report = StepReport {
                coreset_size: cs.len(),
                drift_pairs: (n * cs.len()) as u64,
                walk_evals: cs.cost.walk,
                swap_evals: cs.cost.swap,
            };
            Ok((Interaction::Shared(cs.indices), report))
        }
    }
}

/// Advances `state` by one iteration.
pub fn mfld_step<T: Scalar, M: DriftModel<T> + ?Sized>(
    state: &mut ParticleState<T>,
    model: &mut M,
    cfg: &MfldConfig<T>,
) -> Result<StepReport> {
    let n = state.positions.len();
    let d = state.positions.dim();
    if d != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: d,
        });
    }
    let t = state.iteration;
    model.prepare(&state.positions)?;
    let (interaction, report) = select_interaction(&cfg.strategy, &state.positions, cfg.seed, t)?;

    let gamma = cfg.step_size;
    let zeta = cfg.confinement;
    let scale = (T::lit(2.0) * cfg.noise * gamma).sqrt();
    let bound = T::lit(DIVERGENCE_BOUND);
    let old = &state.positions;
    let model = &*model;
    let mut next = vec![T::zero(); n * d];
    next.par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            let mut batch_rng = stream(cfg.seed, Purpose::Batch, t, i as u64);
            model.drift(old, interaction.for_particle(i), i, &mut batch_rng, row)?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteDrift { particle: i, iteration: t });
            }
            let x = old.row(i);
            if cfg.noise > T::zero() {
                let mut noise_rng = stream(cfg.seed, Purpose::Noise, t, i as u64);
                for (r, &xj) in row.iter_mut().zip(x) {
                    let xi: T = std_normal(&mut noise_rng);
                    *r = xj - gamma * (*r + zeta * xj) + scale * xi;
                }
            } else {
                for (r, &xj) in row.iter_mut().zip(x) {
                    *r = xj - gamma * (*r + zeta * xj);
                }
            }
            if row.iter().any(|v| !(v.abs() <= bound)) {
                return Err(Error::Diverged { particle: i, iteration: t });
            }
            Ok(())
        })?;
    state.positions = PointSet::new(next, d)?;
    state.iteration += 1;
    Ok(report)
}

/// Which iterations to record.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Every `k` iterations, plus the final one.
    Every(u64),
    /// The listed iterations (those beyond the horizon are ignored) plus the
    /// initial and final ones.
    At(Vec<u64>),
}

impl Schedule {
    fn records(&self, t: u64, last: u64) -> bool {
        if t == 0 || t == last {
            return true;
        }
        match self {
            Schedule::Every(k) => *k > 0 && t.is_multiple_of(*k),
            Schedule::At(list) => list.contains(&t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<T> {
    pub iteration: u64,
    /// Interaction pairs spent so far.
    pub cumulative_pairs: u64,
    /// The last step's report (all zeros on the initial row).
    pub last_step: StepReport,
    pub metrics: Vec<(&'static str, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<T> {
    pub rows: Vec<TraceRow<T>>,
    pub state: ParticleState<T>,
}

/// Initializes particles from `cfg.init`, runs `cfg.iterations` steps and
/// records metrics every `record_every` iterations.
pub fn run_mfld<T: Scalar, M: DriftModel<T> + ?Sized>(
    cfg: &MfldConfig<T>,
    model: &mut M,
    record_every: u64,
) -> Result<RunTrace<T>> {
    run_mfld_scheduled(cfg, model, &Schedule::Every(record_every), |_| {})
}

/// [`run_mfld`] with an explicit schedule and a callback per recorded row.
pub fn run_mfld_scheduled<T: Scalar, M: DriftModel<T> + ?Sized>(
    cfg: &MfldConfig<T>,
    model: &mut M,
    schedule: &Schedule,
    mut on_row: impl FnMut(&TraceRow<T>),
) -> Result<RunTrace<T>> {
    cfg.validate()?;
    let positions = cfg.init.sample(cfg.n, model.dim(), cfg.seed)?;
    let mut state = ParticleState { positions, iteration: 0 };
    let mut rows = Vec::new();
    let mut cumulative = 0u64;
    let mut last = StepReport::default();
    loop {
        let t = state.iteration;
        if schedule.records(t, cfg.iterations) {
            let row = TraceRow {
                iteration: t,
                cumulative_pairs: cumulative,
                last_step: last,
                metrics: model.metrics(&state.positions)?,
            };
            on_row(&row);
            rows.push(row);
        }
        if t >= cfg.iterations {
            break;
        }
        last = mfld_step(&mut state, model, cfg)?;
        cumulative += last.interaction_pairs();
    }
    Ok(RunTrace { rows, state })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy<T> {
    pub mean_sq: T,
    pub per_probe: Vec<T>,
}

/// Mean over probes (the points themselves) and `reps` coreset draws of
/// `|drift_full(x) - drift_coreset(x)|^2`.
pub fn drift_discrepancy<T: Scalar, M: DriftModel<T> + ?Sized>(
    points: &PointSet<T>,
    model: &mut M,
    strategy: &InteractionStrategy<T>,
    seed: u64,
    reps: u64,
) -> Result<Discrepancy<T>> {
    let n = points.len();
    let d = points.dim();
    model.prepare(points)?;
    let model = &*model;
    let all: Vec<usize> = (0..n).collect();
    let drifts = |interaction: &Interaction| -> Result<Vec<T>> {
        let mut out = vec![T::zero(); n * d];
        out.par_chunks_mut(d).enumerate().try_for_each(|(i, row)| {
            let mut rng = stream(seed, Purpose::Batch, 0, i as u64);
            model.drift(points, interaction.for_particle(i), i, &mut rng, row)
        })?;
        Ok(out)
    };
    let full = drifts(&Interaction::Shared(all))?;
    let mut per_probe = vec![T::zero(); n];
    for r in 0..reps {
        let (interaction, _) = select_interaction(strategy, points, seed, r)?;
        let thin = drifts(&interaction)?;
        for i in 0..n {
            let e = (0..d)
                .map(|j| (full[i * d + j] - thin[i * d + j]).powi(2))
                .fold(T::zero(), |a, b| a + b);
            per_probe[i] = per_probe[i] + e;
        }
    }
    let reps_t = T::from_usize_lossy(reps.max(1) as usize);
    per_probe.iter_mut().for_each(|v| *v = *v / reps_t);
    let mean_sq = per_probe.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    Ok(Discrepancy { mean_sq, per_probe })
}
