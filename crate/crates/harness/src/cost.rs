//! Interaction methods and their closed-form cost.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thinned_mfld::kernels::KernelSpec;
use thinned_mfld::thinning::{ceil_sqrt, FailureProb, InteractionStrategy, KtParams};

use crate::error::HarnessError;

/// The interaction strategies compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Full pairwise interaction.
    Mfld,
    /// kt-split halving inside Compress.
    Kt1,
    /// Compress followed by the swap refinement.
    Kt2,
    /// Uniform subsampling with replacement.
    Random,
    /// Random disjoint batches.
    Rbm,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Mfld, Method::Kt1, Method::Kt2, Method::Random, Method::Rbm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mfld => "mfld",
            Method::Kt1 => "kt1",
            Method::Kt2 => "kt2",
            Method::Random => "random",
            Method::Rbm => "rbm",
        }
    }

    pub fn is_kernel_thinning(self) -> bool {
        matches!(self, Method::Kt1 | Method::Kt2)
    }

    /// The oversampling exponent that enters the cost: random batches have
    /// no coreset, so their `g` is always zero.
    pub fn effective_g(self, g: u32) -> u32 {
        match self {
            Method::Mfld | Method::Rbm => 0,
            Method::Kt1 | Method::Kt2 | Method::Random => g,
        }
    }

    /// Builds the engine strategy for `n` particles. Random batches use
    /// `rbm_batch` if given and `ceil(sqrt n)` otherwise.
    pub fn strategy(
        self,
        n: usize,
        g: u32,
        kernel: KernelSpec<f64>,
        delta: FailureProb<f64>,
        rbm_batch: Option<usize>,
    ) -> InteractionStrategy<f64> {
        let kt = KtParams { g, delta, kernel };
        match self {
            Method::Mfld => InteractionStrategy::Full,
            Method::Kt1 => InteractionStrategy::KtSplitCompress(kt),
            Method::Kt2 => InteractionStrategy::KtCompress(kt),
            Method::Random => InteractionStrategy::UniformRandom { g },
            Method::Rbm => InteractionStrategy::RandomBatch {
                p: rbm_batch.unwrap_or_else(|| ceil_sqrt(n)),
            },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}; expected one of mfld, kt1, kt2, random, rbm")))
    }
}

/// Cost of `t` iterations with `n` particles: `n^2 t` for full interaction
/// and `2^g n^{3/2} t` for every thinned or batched method.
pub fn cost(n: usize, t: u64, method: Method, g: u32) -> f64 {
    let n = n as f64;
    let t = t as f64;
    match method {
        Method::Mfld => n * n * t,
        _ => f64::from(1u32 << method.effective_g(g).min(31)) * n * n.sqrt() * t,
    }
}
