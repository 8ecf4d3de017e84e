//! Particle quantization by squared-MMD minimization.
//!
//! `F_0(mu) = MMD^2(mu, nu)` under a kernel `k`. The interaction part is
//! `q_2 = 2k` against the particles; the target enters as a linear term
//! whose gradient is available in closed form for Gaussian mixtures under
//! a Gaussian kernel.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::points::PointSet;
use crate::rng::StreamRng;
use crate::scalar::{sq_dist, Scalar};

use super::DriftModel;

/// Isotropic Gaussian mixture `sum_c w_c N(m_c, s_c^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T> {
    pub weights: Vec<T>,
    pub means: PointSet<T>,
    pub stds: Vec<T>,
}

impl<T: Scalar> GaussianMixture<T> {
    pub fn new(weights: Vec<T>, means: PointSet<T>, stds: Vec<T>) -> Result<Self> {
        let c = weights.len();
        if c == 0 {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        if means.len() != c || stds.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                got: if means.len() != c { means.len() } else { stds.len() },
            });
        }
        if weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::InvalidConfig("mixture weights must be positive".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::InvalidConfig(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        if stds.iter().any(|&s| !(s >= T::zero()) || !s.is_finite()) {
            return Err(Error::InvalidConfig("mixture stds must be finite and nonnegative".into()));
        }
        if !means.all_finite() {
            return Err(Error::NonFinite("mixture means"));
        }
        Ok(Self { weights, means, stds })
    }

    /// Four equally weighted components at `(+-2, +-2)` with std 0.5.
    pub fn four_corners() -> Self {
        let two = T::lit(2.0);
        let means = PointSet::from_rows(&[[two, two], [two, -two], [-two, two], [-two, -two]])
            .expect("static mixture layout");
        Self::new(vec![T::lit(0.25); 4], means, vec![T::lit(0.5); 4])
            .expect("static mixture is valid")
    }

    /// A single component `N(mean, std^2 I)`.
    pub fn single(mean: &[T], std: T) -> Result<Self> {
        Self::new(vec![T::one()], PointSet::new(mean.to_vec(), mean.len())?, vec![std])
    }

    pub fn dim(&self) -> usize {
        self.means.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MmdTarget<T> {
    Mixture(GaussianMixture<T>),
    /// Uniform empirical measure on the given samples.
    Samples(PointSet<T>),
}

impl<T: Scalar> MmdTarget<T> {
    pub fn dim(&self) -> usize {
        match self {
            MmdTarget::Mixture(m) => m.dim(),
            MmdTarget::Samples(s) => s.dim(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmdModel<T> {
    kernel: KernelSpec<T>,
    target: MmdTarget<T>,
    /// `E_{y, y' ~ nu} k(y, y')`, computed once.
    target_self: T,
}

impl<T: Scalar> MmdModel<T> {
    pub fn new(kernel: KernelSpec<T>, target: MmdTarget<T>) -> Result<Self> {
        if let MmdTarget::Mixture(_) = target {
            if !matches!(kernel, KernelSpec::Gaussian { .. }) {
                return Err(Error::InvalidConfig(
                    "closed-form mixture expectations need a Gaussian kernel".into(),
                ));
            }
        }
        if let MmdTarget::Samples(s) = &target {
            if s.is_empty() {
                return Err(Error::InvalidConfig("sample target is empty".into()));
            }
        }
        let mut model = Self {
            kernel,
            target,
            target_self: T::zero(),
        };
        model.target_self = model.target_double_expectation();
        Ok(model)
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    pub fn target(&self) -> &MmdTarget<T> {
        &self.target
    }

    fn lengthscale_sq(&self) -> T {
        match self.kernel {
            KernelSpec::Gaussian { lengthscale } => lengthscale * lengthscale,
            KernelSpec::SobolevSum { .. } => unreachable!("mixture targets require a Gaussian kernel"),
        }
    }

    /// `E_{y ~ nu} k(x, y)`.
    pub fn target_expectation(&self, x: &[T]) -> T {
        match &self.target {
            MmdTarget::Mixture(mix) => {
                let l2 = self.lengthscale_sq();
                let half_d = T::lit(0.5 * x.len() as f64);
                let mut acc = T::zero();
                for c in 0..mix.len() {
                    let v = l2 + mix.stds[c] * mix.stds[c];
                    let r2 = sq_dist(x, mix.means.row(c));
                    acc = acc + mix.weights[c] * (l2 / v).powf(half_d) * (-r2 / (T::lit(2.0) * v)).exp();
                }
                acc
            }
            MmdTarget::Samples(s) => {
                s.rows().map(|y| self.kernel.eval(x, y)).sum::<T>() / T::from_usize_lossy(s.len())
            }
        }
    }

    /// `A(x) = E_{y ~ nu} grad_1 k(x, y)`, added into `out` with factor `alpha`.
    fn add_target_gradient(&self, x: &[T], alpha: T, out: &mut [T]) {
        match &self.target {
            MmdTarget::Mixture(mix) => {
                let l2 = self.lengthscale_sq();
                let half_d = T::lit(0.5 * x.len() as f64);
                for c in 0..mix.len() {
                    let v = l2 + mix.stds[c] * mix.stds[c];
                    let m = mix.means.row(c);
                    let r2 = sq_dist(x, m);
                    let scale = mix.weights[c] * (l2 / v).powf(half_d) * (-r2 / (T::lit(2.0) * v)).exp() / v;
                    for j in 0..x.len() {
                        out[j] = out[j] + alpha * scale * (m[j] - x[j]);
                    }
                }
            }
            MmdTarget::Samples(s) => {
                let mut g = vec![T::zero(); x.len()];
                let w = alpha / T::from_usize_lossy(s.len());
                for y in s.rows() {
                    self.kernel.grad1_into(x, y, &mut g);
                    for j in 0..x.len() {
                        out[j] = out[j] + w * g[j];
                    }
                }
            }
        }
    }

    fn target_double_expectation(&self) -> T {
        match &self.target {
            MmdTarget::Mixture(mix) => {
                let l2 = self.lengthscale_sq();
                let half_d = T::lit(0.5 * mix.dim() as f64);
                let mut acc = T::zero();
                for a in 0..mix.len() {
                    for b in 0..mix.len() {
                        let v = l2 + mix.stds[a] * mix.stds[a] + mix.stds[b] * mix.stds[b];
                        let r2 = sq_dist(mix.means.row(a), mix.means.row(b));
                        acc = acc
                            + mix.weights[a]
                                * mix.weights[b]
                                * (l2 / v).powf(half_d)
                                * (-r2 / (T::lit(2.0) * v)).exp();
                    }
                }
                acc
            }
            MmdTarget::Samples(s) => mean_gram(&self.kernel, s),
        }
    }

    /// `2 [ (1/M) sum_j grad_1 k(x, xbar_j) - A(x) ]`.
    pub fn drift_at(&self, coreset_positions: &PointSet<T>, x: &[T]) -> Result<Vec<T>> {
        if coreset_positions.is_empty() {
            return Err(Error::Precondition("empty coreset".into()));
        }
        let mut out = vec![T::zero(); x.len()];
        self.accumulate_drift(coreset_positions.rows(), coreset_positions.len(), x, &mut out);
        Ok(out)
    }

    fn accumulate_drift<'a>(
        &self,
        rows: impl Iterator<Item = &'a [T]>,
        m: usize,
        x: &[T],
        out: &mut [T],
    ) {
        out.iter_mut().for_each(|o| *o = T::zero());
        let mut g = vec![T::zero(); x.len()];
        let w = T::lit(2.0) / T::from_usize_lossy(m);
        for y in rows {
            self.kernel.grad1_into(x, y, &mut g);
            for j in 0..x.len() {
                out[j] = out[j] + w * g[j];
            }
        }
        self.add_target_gradient(x, -T::lit(2.0), out);
    }

    /// Squared MMD between the empirical measure of `positions` and the target.
    pub fn mmd_sq(&self, positions: &PointSet<T>) -> T {
        let n = T::from_usize_lossy(positions.len());
        let cross = positions.rows().map(|x| self.target_expectation(x)).sum::<T>() / n;
        mean_gram(&self.kernel, positions) - T::lit(2.0) * cross + self.target_self
    }
}

/// `(1/n^2) sum_{i,j} k(x_i, x_j)`, using symmetry.
fn mean_gram<T: Scalar>(kernel: &KernelSpec<T>, points: &PointSet<T>) -> T {
    let n = points.len();
    let mut off = T::zero();
    let mut diag = T::zero();
    for i in 0..n {
        let xi = points.row(i);
        diag = diag + kernel.eval(xi, xi);
        for j in (i + 1)..n {
            off = off + kernel.eval(xi, points.row(j));
        }
    }
    let nn = T::from_usize_lossy(n);
    (diag + T::lit(2.0) * off) / (nn * nn)
}

impl<T: Scalar> DriftModel<T> for MmdModel<T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn drift(
        &self,
        positions: &PointSet<T>,
        coreset: &[usize],
        i: usize,
        _rng: &mut StreamRng,
        out: &mut [T],
    ) -> Result<()> {
        if coreset.is_empty() {
            return Err(Error::Precondition("empty coreset".into()));
        }
        let rows = coreset.iter().map(|&j| positions.row(j));
        self.accumulate_drift(rows, coreset.len(), positions.row(i), out);
        Ok(())
    }

    fn objective(&self, positions: &PointSet<T>) -> Result<T> {
        Ok(self.mmd_sq(positions))
    }

    fn metrics(&self, positions: &PointSet<T>) -> Result<Vec<(&'static str, T)>> {
        Ok(vec![("mmd2", self.mmd_sq(positions))])
    }
}
