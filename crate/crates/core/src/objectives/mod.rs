//! Objective functionals driven by the particle engine.
//!
//! Each model exposes the first-variation gradient of its functional,
//! evaluated against whichever coreset the interaction strategy selected,
//! plus diagnostics that always use the full particle set.

pub mod mmd;
pub mod net;
pub mod pro;

pub use mmd::{GaussianMixture, MmdModel, MmdTarget};
pub use net::{Covariates, NetConfig, NetModel, Teacher};
pub use pro::{ProModel, TrajectoryCache};

use crate::error::Result;
use crate::points::PointSet;
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// A functional `F_0` whose first-variation gradient drives the particles.
pub trait DriftModel<T: Scalar>: Sync {
    /// Particle dimension.
    fn dim(&self) -> usize;

    /// Called once per iteration before the parallel drift phase, with the
    /// frozen pre-update positions.
    fn prepare(&mut self, _positions: &PointSet<T>) -> Result<()> {
        Ok(())
    }

    /// Drift of particle `i` against the coreset `coreset` (indices into
    /// `positions`, uniform weights), written into `out`.
    ///
    /// `rng` is the particle's own stream for this iteration; models that
    /// need fresh data (the online network) draw from it.
    fn drift(
        &self,
        positions: &PointSet<T>,
        coreset: &[usize],
        i: usize,
        rng: &mut StreamRng,
        out: &mut [T],
    ) -> Result<()>;

    /// `F_0` of the full empirical measure.
    fn objective(&self, positions: &PointSet<T>) -> Result<T>;

    /// Named task metrics of the full empirical measure.
    fn metrics(&self, positions: &PointSet<T>) -> Result<Vec<(&'static str, T)>> {
        Ok(vec![("objective", self.objective(positions)?)])
    }
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference<T: Scalar>(x: &[T], h: T, mut f: impl FnMut(&[T]) -> T) -> Vec<T> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (T::lit(2.0) * h)
        })
        .collect()
}
