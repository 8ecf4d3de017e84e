use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::points::PointSet;
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// Halves `subset` (indices into `points`) with the kt-split self-balancing
/// walk, keeping exactly one point of each consecutive pair.
///
/// Returns the kept indices, in pair order.
pub fn kt_split_halve<T: Scalar>(
    points: &PointSet<T>,
    subset: &[usize],
    kernel: &KernelSpec<T>,
    delta_halve: T,
    rng: &mut StreamRng,
) -> Result<Vec<usize>> {
    let mut evals = 0;
    halve_counted(points, subset, kernel, delta_halve, rng, &mut evals)
}

pub(crate) fn halve_counted<T: Scalar>(
    points: &PointSet<T>,
    subset: &[usize],
    kernel: &KernelSpec<T>,
    delta_halve: T,
    rng: &mut StreamRng,
    evals: &mut u64,
) -> Result<Vec<usize>> {
    let n = subset.len();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::Precondition(format!(
            "kt-split halving needs an even number of points >= 2, got {n}"
        )));
    }
    if !(delta_halve > T::zero() && delta_halve < T::one()) {
        return Err(Error::Precondition(format!(
            "halving failure probability must lie in (0, 1), got {delta_halve}"
        )));
    }
    let rounds = n / 2;
    let delta_round = delta_halve / T::from_usize_lossy(rounds);
    let log_mult = (T::lit(2.0) * (T::lit(2.0) / delta_round).ln()).sqrt();

    let k = |a: usize, b: usize| kernel.eval(points.row(a), points.row(b));

    // The running signed function is f = sum_r k(discarded_r, .) - k(kept_r, .).
    let mut kept: Vec<usize> = Vec::with_capacity(rounds);
    let mut discarded: Vec<usize> = Vec::with_capacity(rounds);
    let mut sig_sq = T::zero();

    for pair in subset.chunks_exact(2) {
        let (x, y) = (pair[0], pair[1]);
        let kxx = k(x, x);
        let kyy = k(y, y);
        let kxy = k(x, y);
        *evals += 3;
        let b_sq = (kxx + kyy - T::lit(2.0) * kxy).max(T::zero());
        let b = b_sq.sqrt();

        let a = (b * sig_sq.sqrt() * log_mult).max(b_sq);
        if a > T::zero() {
            let growth = T::one() + (b_sq - T::lit(2.0) * a) * sig_sq / (a * a);
            sig_sq = sig_sq + b_sq * growth.max(T::zero());
        }

        let mut theta = T::zero();
        for (&d, &kp) in discarded.iter().zip(&kept) {
            theta = theta + k(d, x) - k(kp, x) - k(d, y) + k(kp, y);
        }
        *evals += 4 * kept.len() as u64;

        let prob_keep_y = if a > T::zero() {
            let theta = theta.max(-a).min(a);
            (T::lit(0.5) * (T::one() - theta / a)).to_f64_lossy()
        } else {
            0.5
        };
        let u: f64 = rng.random();
        if u < prob_keep_y {
            kept.push(y);
            discarded.push(x);
        } else {
            kept.push(x);
            discarded.push(y);
        }
    }
    Ok(kept)
}
