use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::points::PointSet;
use crate::rng::StreamRng;
use crate::scalar::Scalar;

use super::halve::halve_counted;
use super::{is_power_of_four, Coreset};

pub struct CompressOutput {
    pub coreset: Coreset,
    /// The `2M` inputs of the final halving (the coreset itself when the
    /// recursion bottoms out immediately).
    pub pool: Vec<usize>,
}

/// Compress(g) over all points of `points`: coreset of size `2^g sqrt(n)`.
pub fn compress<T: Scalar>(
    points: &PointSet<T>,
    kernel: &KernelSpec<T>,
    g: u32,
    delta: T,
    rng: &mut StreamRng,
) -> Result<Coreset> {
    Ok(compress_with_pool(points, kernel, g, delta, rng)?.coreset)
}

pub fn compress_with_pool<T: Scalar>(
    points: &PointSet<T>,
    kernel: &KernelSpec<T>,
    g: u32,
    delta: T,
    rng: &mut StreamRng,
) -> Result<CompressOutput> {
    let n = points.len();
    if !is_power_of_four(n) {
        return Err(Error::NotPowerOfFour { n });
    }
    let depth = n.trailing_zeros() / 2;
    if depth < g {
        return Err(Error::Precondition(format!(
            "Compress(g = {g}) needs n >= 4^g, got n = {n}"
        )));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::Precondition(format!(
            "failure probability must lie in (0, 1), got {delta}"
        )));
    }
    let indices: Vec<usize> = (0..n).collect();
    let levels = depth - g;
    // Number of halving calls in the recursion tree: (4^levels - 1) / 3.
    let halves = ((1u64 << (2 * levels)) - 1) / 3;
    if halves == 0 {
        return Ok(CompressOutput {
            coreset: Coreset::from_indices(indices.clone()),
            pool: indices,
        });
    }
    let delta_halve = delta / T::lit(halves as f64);
    let mut ctx = Ctx {
        points,
        kernel,
        base: 1usize << (2 * g),
        delta_halve,
        evals: 0,
    };
    let pool: Vec<usize> = indices
        .chunks_exact(n / 4)
        .map(|block| ctx.recurse(block, rng))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let kept = halve_counted(points, &pool, kernel, delta_halve, rng, &mut ctx.evals)?;
    let mut coreset = Coreset::from_indices(kept);
    coreset.cost.walk = ctx.evals;
    Ok(CompressOutput { coreset, pool })
}

struct Ctx<'a, T> {
    points: &'a PointSet<T>,
    kernel: &'a KernelSpec<T>,
    base: usize,
    delta_halve: T,
    evals: u64,
}

impl<T: Scalar> Ctx<'_, T> {
    fn recurse(&mut self, block: &[usize], rng: &mut StreamRng) -> Result<Vec<usize>> {
        if block.len() <= self.base {
            return Ok(block.to_vec());
        }
        let quarter = block.len() / 4;
        let mut merged = Vec::new();
        for sub in block.chunks_exact(quarter) {
            merged.extend(self.recurse(sub, rng)?);
        }
        halve_counted(
            self.points,
            &merged,
            self.kernel,
            self.delta_halve,
            rng,
            &mut self.evals,
        )
    }
}
