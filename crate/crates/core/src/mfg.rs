//! First-order mean-field game solved along characteristics.
//!
//! Agents move with velocity `-p` where `p = grad phi` is the adjoint of the
//! value function. Along characteristics `dp/dt = -grad_1 int K(x, y) rho_t(dy)`
//! with `p(T) = grad psi = 2c (z(T) - x*)`. The solver alternates a backward
//! sweep for the adjoints, with the interaction averaged over a per-time-step
//! coreset, and a forward sweep that transports the particles.

use rayon::prelude::*;

use crate::dynamics::{Init, DIVERGENCE_BOUND};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::points::PointSet;
use crate::rng::{stream, Purpose};
use crate::scalar::{sq_dist, Scalar};
use crate::thinning::{select_coreset, InteractionStrategy};

/// How the terminal condition `p_K = 2c (z_K - x*)` is coupled to the
/// forward sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalCoupling {
    /// Evaluate it at the current forward trajectory's endpoint. The
    /// alternation then multiplies endpoint errors by `-2cT` per sweep and
    /// diverges for `2cT > 1` unless heavily damped.
    Explicit,
    /// Choose the endpoint that the following forward sweep will reach,
    /// given this sweep's interaction forces. This solves the linear
    /// terminal equation per particle and leaves the interaction coupling
    /// as plain alternation.
    Implicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfgConfig<T> {
    pub n: usize,
    pub dim: usize,
    pub dt: T,
    pub horizon: T,
    /// `c` in `psi(x) = c |x - x*|^2`.
    pub terminal_weight: T,
    pub target: Vec<T>,
    /// `None` switches the interaction off (`K = 0`).
    pub interaction: Option<KernelSpec<T>>,
    pub init: Init<T>,
    pub sweeps: usize,
    pub strategy: InteractionStrategy<T>,
    pub risk_subset: usize,
    /// Evaluate the risk every this many sweeps (the final sweep is always
    /// evaluated).
    pub risk_every: usize,
    pub seed: u64,
    /// Relaxation weight on the new adjoints, in `(0, 1]`.
    pub damping: T,
    pub terminal: TerminalCoupling,
}

impl<T: Scalar> Default for MfgConfig<T> {
    fn default() -> Self {
        Self {
            n: 4096,
            dim: 2,
            dt: T::lit(0.01),
            horizon: T::one(),
            terminal_weight: T::lit(10.0),
            target: vec![T::zero(); 2],
            interaction: Some(KernelSpec::Gaussian { lengthscale: T::one() }),
            init: Init::CircleMixture {
                components: 8,
                radius: T::lit(2.0),
                std: T::lit(0.1),
            },
            sweeps: 100,
            strategy: InteractionStrategy::Full,
            risk_subset: 512,
            risk_every: 1,
            seed: 0,
            damping: T::one(),
            terminal: TerminalCoupling::Implicit,
        }
    }
}

impl<T: Scalar> MfgConfig<T> {
    /// Number of time steps `K = horizon / dt`.
    pub fn steps(&self) -> Result<usize> {
        let k = (self.horizon / self.dt).round();
        if !(self.dt > T::zero()) || !(k >= T::one()) || (k * self.dt - self.horizon).abs() > T::lit(1e-9) * self.horizon.max(T::one()) {
            return Err(Error::InvalidConfig(format!(
                "horizon {} must be a positive integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(k.to_usize().unwrap_or(0))
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if self.target.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.target.len(),
            });
        }
        if !(self.damping > T::zero() && self.damping <= T::one()) {
            return Err(Error::InvalidConfig(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.terminal_weight < T::zero() {
            return Err(Error::InvalidConfig("terminal weight must be nonnegative".into()));
        }
        if matches!(self.strategy, InteractionStrategy::RandomBatch { .. }) {
            return Err(Error::InvalidConfig(
                "random batches do not apply: the sweeps are not an interacting particle system".into(),
            ));
        }
        self.strategy.validate(self.n)
    }
}

/// Positions or adjoints at every time slice `0..=K`.
pub type Slices<T> = Vec<PointSet<T>>;

/// `p_K = 2c (z_K - x*)` and `p_k = p_{k+1} + dt * g_k`, where `g_k` averages
/// `grad_1 K(z_k^i, zbar_k^j)` over a fresh coreset of the time-`k` slice.
///
/// Returns the adjoints and the number of interaction pairs evaluated.
pub fn backward_sweep<T: Scalar>(z: &[PointSet<T>], cfg: &MfgConfig<T>, sweep: u64) -> Result<(Slices<T>, u64)> {
    let k_steps = z.len() - 1;
    let n = z[0].len();
    let d = z[0].dim();
    let mut forces = Vec::with_capacity(k_steps);
    let mut pairs = 0u64;
    for (k, slice) in z.iter().enumerate().take(k_steps) {
        let (g, used) = interaction_force(slice, cfg, sweep, k as u64)?;
        pairs += used;
        forces.push(g);
    }
    let dt = cfg.dt;
    let two_c = T::lit(2.0) * cfg.terminal_weight;
    // accumulated[k] = dt * sum_{l >= k} g_l
    let mut accumulated = vec![PointSet::zeros(n, d); k_steps + 1];
    for k in (0..k_steps).rev() {
        let (head, tail) = accumulated.split_at_mut(k + 1);
        let next = &tail[0];
        for ((a, &b), &f) in head[k].as_mut_slice().iter_mut().zip(next.as_slice()).zip(forces[k].as_slice()) {
            *a = b + dt * f;
        }
    }
    let terminal = match cfg.terminal {
        TerminalCoupling::Explicit => {
            let mut p = z[k_steps].clone();
            for i in 0..n {
                for (v, &t) in p.row_mut(i).iter_mut().zip(&cfg.target) {
                    *v = two_c * (*v - t);
                }
            }
            p
        }
        TerminalCoupling::Implicit => {
            let horizon = dt * T::from_usize_lossy(k_steps);
            let denom = T::one() + two_c * horizon;
            let mut p = PointSet::zeros(n, d);
            for i in 0..n {
                let z0 = z[0].row(i);
                for (j, (&z0j, &target)) in z0.iter().zip(&cfg.target).enumerate() {
                    let s = (0..k_steps).fold(T::zero(), |acc, k| acc + accumulated[k].row(i)[j]);
                    let zk = (z0j + two_c * horizon * target - dt * s) / denom;
                    p.row_mut(i)[j] = two_c * (zk - target);
                }
            }
            p
        }
    };
    let mut p = Vec::with_capacity(k_steps + 1);
    for acc in accumulated.iter() {
        let mut slice = terminal.clone();
        for (v, &a) in slice.as_mut_slice().iter_mut().zip(acc.as_slice()) {
            *v = *v + a;
        }
        p.push(slice);
    }
    Ok((p, pairs))
}

/// `(1/M) sum_j grad_1 K(z^i, zbar^j)` for every particle of one slice.
fn interaction_force<T: Scalar>(slice: &PointSet<T>, cfg: &MfgConfig<T>, sweep: u64, k: u64) -> Result<(PointSet<T>, u64)> {
    let n = slice.len();
    let d = slice.dim();
    let Some(kernel) = cfg.interaction else {
        return Ok((PointSet::zeros(n, d), 0));
    };
    let mut rng = stream(cfg.seed, Purpose::Thin, sweep, k);
    let coreset = select_coreset(&cfg.strategy, slice, &mut rng)?;
    let m = coreset.len();
    let w = T::one() / T::from_usize_lossy(m);
    let mut out = vec![T::zero(); n * d];
    out.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let x = slice.row(i);
        let mut g = vec![T::zero(); d];
        for &j in &coreset.indices {
            kernel.grad1_into(x, slice.row(j), &mut g);
            for (r, &gj) in row.iter_mut().zip(&g) {
                *r = *r + w * gj;
            }
        }
    });
    let pairs = (n * m) as u64 + coreset.cost.swap;
    Ok((PointSet::new(out, d)?, pairs))
}

/// `z_{k+1} = z_k - dt p_k` from the fixed initial slice.
pub fn forward_sweep<T: Scalar>(z0: &PointSet<T>, p: &[PointSet<T>], cfg: &MfgConfig<T>) -> Slices<T> {
    let k_steps = p.len() - 1;
    let mut z = Vec::with_capacity(k_steps + 1);
    z.push(z0.clone());
    for k in 0..k_steps {
        let mut next = z[k].clone();
        for (v, &pk) in next.as_mut_slice().iter_mut().zip(p[k].as_slice()) {
            *v = *v - cfg.dt * pk;
        }
        z.push(next);
    }
    z
}

/// The seed-determined interaction subsample used by [`mfg_risk`].
pub fn risk_subset<T: Scalar>(cfg: &MfgConfig<T>) -> Vec<usize> {
    let size = cfg.risk_subset.min(cfg.n);
    let mut rng = stream(cfg.seed, Purpose::RiskSubset, 0, 0);
    rand::seq::index::sample(&mut rng, cfg.n, size).into_vec()
}

/// Mean over particles of
/// `sum_k dt [ |dz/dt|^2 / 2 - (1/|S|) sum_{y in S} K(z_k, y_k) ] + c |z_K - x*|^2`.
pub fn mfg_risk<T: Scalar>(z: &[PointSet<T>], cfg: &MfgConfig<T>, subset: &[usize]) -> T {
    let k_steps = z.len() - 1;
    let n = z[0].len();
    let dt = cfg.dt;
    let half = T::lit(0.5);
    let inv_s = T::one() / T::from_usize_lossy(subset.len().max(1));
    let per_particle: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = T::zero();
            for k in 0..k_steps {
                let a = z[k].row(i);
                let b = z[k + 1].row(i);
                let kinetic = sq_dist(a, b) / (dt * dt);
                let mut inter = T::zero();
                if let Some(kernel) = cfg.interaction {
                    for &j in subset {
                        inter = inter + kernel.eval(a, z[k].row(j));
                    }
                }
                acc = acc + dt * (half * kinetic - inter * inv_s);
            }
            acc + cfg.terminal_weight * sq_dist(z[k_steps].row(i), &cfg.target)
        })
        .collect();
    per_particle.into_iter().sum::<T>() / T::from_usize_lossy(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfgSolution<T> {
    pub z: Slices<T>,
    pub p: Slices<T>,
    /// `(sweep, risk)`, starting with sweep 0 (the constant trajectories).
    pub risk_history: Vec<(usize, T)>,
    /// Interaction pairs evaluated by each backward sweep.
    pub pairs_per_sweep: Vec<u64>,
}

/// Samples `z_0` once, starts from constant trajectories and alternates
/// backward and forward sweeps `cfg.sweeps` times.
pub fn mfg_solve<T: Scalar>(cfg: &MfgConfig<T>) -> Result<MfgSolution<T>> {
    mfg_solve_observed(cfg, |_, _| {})
}

/// [`mfg_solve`] with a callback for each risk evaluation.
pub fn mfg_solve_observed<T: Scalar>(cfg: &MfgConfig<T>, mut on_risk: impl FnMut(usize, T)) -> Result<MfgSolution<T>> {
    cfg.validate()?;
    let k_steps = cfg.steps()?;
    let z0 = cfg.init.sample(cfg.n, cfg.dim, cfg.seed)?;
    let subset = risk_subset(cfg);
    let mut z: Slices<T> = vec![z0.clone(); k_steps + 1];
    let mut p: Slices<T> = vec![PointSet::zeros(cfg.n, cfg.dim); k_steps + 1];
    let mut history = Vec::new();
    let mut pairs_per_sweep = Vec::with_capacity(cfg.sweeps);
    let r0 = mfg_risk(&z, cfg, &subset);
    on_risk(0, r0);
    history.push((0, r0));
    for sweep in 1..=cfg.sweeps {
        let (fresh, pairs) = backward_sweep(&z, cfg, sweep as u64)?;
        pairs_per_sweep.push(pairs);
        if sweep == 1 || cfg.damping == T::one() {
            p = fresh;
        } else {
            let w = cfg.damping;
            for (old, new) in p.iter_mut().zip(&fresh) {
                for (o, &v) in old.as_mut_slice().iter_mut().zip(new.as_slice()) {
                    *o = (T::one() - w) * *o + w * v;
                }
            }
        }
        z = forward_sweep(&z0, &p, cfg);
        let bound = T::lit(DIVERGENCE_BOUND);
        if let Some(i) = (0..cfg.n).find(|&i| !(z[k_steps].row(i).iter().all(|v| v.abs() <= bound))) {
            return Err(Error::Diverged {
                particle: i,
                iteration: sweep as u64,
            });
        }
        if sweep == cfg.sweeps || (cfg.risk_every > 0 && sweep % cfg.risk_every == 0) {
            let r = mfg_risk(&z, cfg, &subset);
            on_risk(sweep, r);
            history.push((sweep, r));
        }
    }
    Ok(MfgSolution {
        z,
        p,
        risk_history: history,
        pairs_per_sweep,
    })
}
