//! Coreset selection for the interaction term.
//!
//! `compress` + `kt_split_halve` produce a kernel-thinned coreset of size
//! `2^g sqrt(N)` in near-linear time; `kt_swap_refine` greedily lowers the
//! coreset's MMD to the full set. The random baselines (i.i.d. subsampling
//! with replacement and random batches) live in [`random`].

mod compress;
mod halve;
pub mod random;
mod swap;

pub use compress::{compress, compress_with_pool, CompressOutput};
pub use halve::kt_split_halve;
pub use random::{rbm_partition, uniform_subsample, BatchPartition};
pub use swap::{kt_swap_refine, mmd_sq};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::points::PointSet;
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// Failure probability handed to the Compress recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FailureProb<T> {
    Fixed(T),
    /// `(log2 N)^3 / N`, the choice used by the convergence analysis.
    LogCubedOverN,
}

impl<T: Scalar> FailureProb<T> {
    pub fn resolve(self, n: usize) -> Result<T> {
        let delta = match self {
            FailureProb::Fixed(d) => d,
            FailureProb::LogCubedOverN => {
                let l = (n as f64).log2();
                T::lit(l * l * l / n as f64)
            }
        };
        if !(delta > T::zero() && delta < T::one()) {
            return Err(Error::InvalidConfig(format!(
                "thinning failure probability must lie in (0, 1), got {delta} for N = {n}"
            )));
        }
        Ok(delta)
    }
}

impl<T: Scalar> Default for FailureProb<T> {
    fn default() -> Self {
        FailureProb::Fixed(T::lit(0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KtParams<T> {
    pub g: u32,
    pub delta: FailureProb<T>,
    pub kernel: KernelSpec<T>,
}

impl<T: Scalar> KtParams<T> {
    pub fn new(g: u32, kernel: KernelSpec<T>) -> Self {
        Self {
            g,
            delta: FailureProb::default(),
            kernel,
        }
    }
}

/// How each particle's interaction term is formed in one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InteractionStrategy<T> {
    Full,
    /// kt-split halving inside Compress(g), no swap stage.
    KtSplitCompress(KtParams<T>),
    /// Same recursion followed by a greedy swap refinement of the output.
    KtCompress(KtParams<T>),
    /// `2^g ceil(sqrt N)` indices drawn i.i.d. with replacement.
    UniformRandom { g: u32 },
    /// Disjoint random batches of size `p`; each particle sees only its batch.
    RandomBatch { p: usize },
}

impl<T: Scalar> InteractionStrategy<T> {
    /// Coreset size this strategy produces for `n` particles
    /// (the batch size for random batches).
    pub fn target_size(&self, n: usize) -> usize {
        let thinned = |g: u32| {
            let m = (1usize << g).saturating_mul(ceil_sqrt(n));
            if m > n {
                n
            } else {
                m
            }
        };
        match *self {
            InteractionStrategy::Full => n,
            InteractionStrategy::KtSplitCompress(p) | InteractionStrategy::KtCompress(p) => {
                thinned(p.g)
            }
            InteractionStrategy::UniformRandom { g } => thinned(g),
            InteractionStrategy::RandomBatch { p } => p.min(n),
        }
    }

    /// Checks that `n` particles are admissible for this strategy.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidConfig("need at least one particle".into()));
        }
        match self {
            InteractionStrategy::KtSplitCompress(p) | InteractionStrategy::KtCompress(p) => {
                if !is_power_of_four(n) {
                    return Err(Error::NotPowerOfFour { n });
                }
                p.delta.resolve(n)?;
            }
            InteractionStrategy::RandomBatch { p } if *p == 0 || *p > n => {
                return Err(Error::InvalidConfig(format!(
                    "random batch size must lie in [1, N = {n}], got {p}"
                )));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_thinned(&self) -> bool {
        !matches!(self, InteractionStrategy::Full)
    }
}

/// Kernel evaluations spent by the selection stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ThinCost {
    /// Evaluations inside the kt-split walks.
    pub walk: u64,
    /// Evaluations inside the swap refinement.
    pub swap: u64,
}

/// Indices into the particle array with uniform weights `1/M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coreset {
    pub indices: Vec<usize>,
    pub cost: ThinCost,
}

impl Coreset {
    pub fn full(n: usize) -> Self {
        Self::from_indices((0..n).collect())
    }

    pub fn from_indices(indices: Vec<usize>) -> Self {
        Self {
            indices,
            cost: ThinCost::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn is_power_of_four(n: usize) -> bool {
    n.is_power_of_two() && n.trailing_zeros().is_multiple_of(2)
}

pub fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r < n {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r
}

/// Selects this iteration's coreset. Random batches are produced by
/// [`rbm_partition`] instead.
pub fn select_coreset<T: Scalar>(
    strategy: &InteractionStrategy<T>,
    points: &PointSet<T>,
    rng: &mut StreamRng,
) -> Result<Coreset> {
    let n = points.len();
    strategy.validate(n)?;
    let m = strategy.target_size(n);
    match strategy {
        InteractionStrategy::Full => Ok(Coreset::full(n)),
        InteractionStrategy::KtSplitCompress(p) => {
            if m >= n {
                return Ok(Coreset::full(n));
            }
            compress(points, &p.kernel, p.g, p.delta.resolve(n)?, rng)
        }
        InteractionStrategy::KtCompress(p) => {
            if m >= n {
                return Ok(Coreset::full(n));
            }
            let out = compress_with_pool(points, &p.kernel, p.g, p.delta.resolve(n)?, rng)?;
            let walk = out.coreset.cost.walk;
            let mut refined = kt_swap_refine(points, &out.pool, out.coreset, &p.kernel)?;
            refined.cost.walk = walk;
            Ok(refined)
        }
        InteractionStrategy::UniformRandom { .. } => {
            if m >= n {
                return Ok(Coreset::full(n));
            }
            Ok(Coreset::from_indices(uniform_subsample(n, m, rng)))
        }
        InteractionStrategy::RandomBatch { .. } => Err(Error::Precondition(
            "random batches are drawn with rbm_partition, not select_coreset".into(),
        )),
    }
}

/// `|mean of all values - mean of the coreset's values (with multiplicity)|`.
pub fn integration_error<T: Scalar>(values: &[T], coreset: &Coreset) -> T {
    let full = values.iter().copied().sum::<T>() / T::from_usize_lossy(values.len());
    let sub = coreset.indices.iter().map(|&i| values[i]).sum::<T>()
        / T::from_usize_lossy(coreset.len());
    (full - sub).abs()
}
