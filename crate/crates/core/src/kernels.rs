//! Kernel families used for particle interaction and for thinning.
//!
//! Two families are supported: the Gaussian (RBF) kernel and a sum of
//! periodic Sobolev (Korobov) kernels built from even Bernoulli polynomials.
//! Both expose values, first-argument gradients and a diagonal bound.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::{sq_dist, Scalar};

/// Subset of the Sobolev smoothness orders {1, 2, 3}, stored as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SobolevOrders(u8);

impl SobolevOrders {
    pub const ALL: SobolevOrders = SobolevOrders(0b111);

    pub fn new(orders: &[u8]) -> Result<Self> {
        let mut mask = 0u8;
        for &s in orders {
            if !(1..=3).contains(&s) {
                return Err(Error::InvalidConfig(format!(
                    "Sobolev order {s} not in {{1, 2, 3}}"
                )));
            }
            mask |= 1 << (s - 1);
        }
        if mask == 0 {
            return Err(Error::InvalidConfig("Sobolev orders must be nonempty".into()));
        }
        Ok(Self(mask))
    }

    pub fn contains(self, s: u8) -> bool {
        (1..=3).contains(&s) && self.0 & (1 << (s - 1)) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = u8> {
        (1..=3u8).filter(move |&s| self.contains(s))
    }
}

impl Default for SobolevOrders {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec<T> {
    /// `exp(-|x - y|^2 / (2 l^2))`.
    Gaussian { lengthscale: T },
    /// `sum_s [ -1 + prod_j (1 + c_s B_{2s}({x_j - y_j})) ]` over the chosen orders.
    SobolevSum { orders: SobolevOrders },
}

/// `(-1)^{s-1} (2 pi)^{2s} / (2s)!`
fn sobolev_coeff(s: u8) -> f64 {
    match s {
        1 => 2.0 * PI.powi(2),
        2 => -2.0 * PI.powi(4) / 3.0,
        3 => 4.0 * PI.powi(6) / 45.0,
        _ => unreachable!("orders are validated"),
    }
}

/// Even Bernoulli polynomial `B_{2s}(t)` and its derivative.
#[inline]
fn bernoulli_even<T: Scalar>(s: u8, t: T) -> (T, T) {
    let l = T::lit;
    let t2 = t * t;
    match s {
        1 => (t2 - t + l(1.0 / 6.0), l(2.0) * t - T::one()),
        2 => {
            let value = t2 * t2 - l(2.0) * t2 * t + t2 - l(1.0 / 30.0);
            let deriv = l(4.0) * t2 * t - l(6.0) * t2 + l(2.0) * t;
            (value, deriv)
        }
        3 => {
            let t3 = t2 * t;
            let value = t3 * t3 - l(3.0) * t3 * t2 + l(2.5) * t2 * t2 - l(0.5) * t2 + l(1.0 / 42.0);
            let deriv = l(6.0) * t3 * t2 - l(15.0) * t2 * t2 + l(10.0) * t3 - t;
            (value, deriv)
        }
        _ => unreachable!("orders are validated"),
    }
}

/// Fractional part on the torus: `{t} = t - floor(t)`, so `{-0.3} = 0.7`.
#[inline]
pub fn frac<T: Scalar>(t: T) -> T {
    let f = t - t.floor();
    // t - floor(t) can round up to exactly 1 for tiny negative t.
    if f >= T::one() {
        T::zero()
    } else {
        f
    }
}

impl<T: Scalar> KernelSpec<T> {
    pub fn gaussian(lengthscale: T) -> Result<Self> {
        if !(lengthscale > T::zero()) || !lengthscale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "Gaussian lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        Ok(Self::Gaussian { lengthscale })
    }

    pub fn sobolev(orders: &[u8]) -> Result<Self> {
        Ok(Self::SobolevSum {
            orders: SobolevOrders::new(orders)?,
        })
    }

    /// Kernel value without argument checks. Hot path.
    #[inline]
    pub fn eval(&self, x: &[T], y: &[T]) -> T {
        debug_assert_eq!(x.len(), y.len());
        match *self {
            KernelSpec::Gaussian { lengthscale } => {
                let r2 = sq_dist(x, y);
                (-r2 / (T::lit(2.0) * lengthscale * lengthscale)).exp()
            }
            KernelSpec::SobolevSum { orders } => {
                let mut total = T::zero();
                for s in orders.iter() {
                    let c = T::lit(sobolev_coeff(s));
                    let mut prod = T::one();
                    for (&a, &b) in x.iter().zip(y) {
                        let (bv, _) = bernoulli_even(s, frac((a - b).abs()));
                        prod = prod * (T::one() + c * bv);
                    }
                    total = total + prod - T::one();
                }
                total
            }
        }
    }

    /// Gradient in the first argument, written into `out`.
    ///
    /// For the Sobolev family the fractional part is differentiated from the
    /// right at integer differences.
    ///
    /// Since `B_{2s}(1 - t) = B_{2s}(t)`, the periodic family is evaluated at
    /// `{|x_j - y_j|}`, which makes it bitwise symmetric.
    pub fn grad1_into(&self, x: &[T], y: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), y.len());
        debug_assert_eq!(x.len(), out.len());
        match *self {
            KernelSpec::Gaussian { lengthscale } => {
                let l2 = lengthscale * lengthscale;
                let k = (-sq_dist(x, y) / (T::lit(2.0) * l2)).exp();
                for ((o, &a), &b) in out.iter_mut().zip(x).zip(y) {
                    *o = -(a - b) / l2 * k;
                }
            }
            KernelSpec::SobolevSum { orders } => {
                let d = x.len();
                out.iter_mut().for_each(|o| *o = T::zero());
                let mut factors = vec![T::zero(); d];
                let mut derivs = vec![T::zero(); d];
                let mut suffix = vec![T::one(); d + 1];
                for s in orders.iter() {
                    let c = T::lit(sobolev_coeff(s));
                    for j in 0..d {
                        let diff = x[j] - y[j];
                        let (bv, bd) = bernoulli_even(s, frac(diff.abs()));
                        factors[j] = T::one() + c * bv;
                        derivs[j] = if diff < T::zero() { -c * bd } else { c * bd };
                    }
                    suffix[d] = T::one();
                    for j in (0..d).rev() {
                        suffix[j] = suffix[j + 1] * factors[j];
                    }
                    let mut prefix = T::one();
                    for j in 0..d {
                        out[j] = out[j] + derivs[j] * prefix * suffix[j + 1];
                        prefix = prefix * factors[j];
                    }
                }
            }
        }
    }

    pub fn grad1(&self, x: &[T], y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.grad1_into(x, y, &mut out);
        out
    }

    pub fn try_eval(&self, x: &[T], y: &[T]) -> Result<T> {
        check_args(x, y)?;
        Ok(self.eval(x, y))
    }

    pub fn try_grad1(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        check_args(x, y)?;
        Ok(self.grad1(x, y))
    }

    /// A finite `kappa` with `k(x, x) <= kappa` for every `x` in R^dim.
    pub fn sup_bound(&self, dim: usize) -> T {
        match *self {
            KernelSpec::Gaussian { .. } => T::one(),
            KernelSpec::SobolevSum { .. } => {
                let zero = vec![T::zero(); dim.max(1)];
                self.eval(&zero, &zero)
            }
        }
    }
}

fn check_args<T: Scalar>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Precondition("kernel arguments must have dimension >= 1".into()));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("kernel evaluation"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gaussian_values() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert_eq!(k.eval(&[0.3, -1.2], &[0.3, -1.2]), 1.0);
        assert!(close(k.eval(&[0.0], &[1.0]), (-0.5f64).exp(), 1e-15));
        assert!(close(k.eval(&[0.0], &[1.0]), 0.606531, 1e-6));
        assert_eq!(k.grad1(&[0.5, 0.5], &[0.5, 0.5]), vec![0.0, 0.0]);
        let g = k.grad1(&[1.0, 0.0], &[0.0, 0.0]);
        assert!(close(g[0], -0.606531, 1e-6) && g[1] == 0.0);
        assert_eq!(KernelSpec::gaussian(2.0).unwrap().sup_bound(3), 1.0);
    }

    #[test]
    fn bernoulli_values_match_symbolic() {
        // B2(0) = 1/6, B4(0) = -1/30, B6(0) = 1/42, B2(1/2) = -1/12.
        assert!(close(bernoulli_even(1, 0.0f64).0, 1.0 / 6.0, 1e-16));
        assert!(close(bernoulli_even(2, 0.0f64).0, -1.0 / 30.0, 1e-16));
        assert!(close(bernoulli_even(3, 0.0f64).0, 1.0 / 42.0, 1e-16));
        assert!(close(bernoulli_even(1, 0.5f64).0, -1.0 / 12.0, 1e-16));
        // B4(1/2) = 7/240, B6(1/2) = -31/1344.
        assert!(close(bernoulli_even(2, 0.5f64).0, 7.0 / 240.0, 1e-15));
        assert!(close(bernoulli_even(3, 0.5f64).0, -31.0 / 1344.0, 1e-15));
    }

    #[test]
    fn sobolev_values() {
        let k1 = KernelSpec::<f64>::sobolev(&[1]).unwrap();
        assert!(close(k1.eval(&[0.75], &[0.25]), -PI * PI / 6.0, 1e-12));
        assert!(close(k1.eval(&[0.75], &[0.25]), -1.644934, 1e-6));
        let g = k1.grad1(&[0.5], &[0.25]);
        assert!(close(g[0], -PI * PI, 1e-12));

        let k = KernelSpec::<f64>::sobolev(&[1, 2, 3]).unwrap();
        let diag = PI.powi(2) / 3.0 + PI.powi(4) / 45.0 + PI.powi(6) / 945.0 * 2.0;
        assert!(close(k.eval(&[0.1], &[0.1]), diag, 1e-12));
        // pi^2/3 + pi^4/45 + 2 pi^6/945 = 7.4892007...
        assert!(close(diag, 7.489201, 1e-6));
        assert!(close(k.sup_bound(1), diag, 1e-12));

        let expected = (1.0 + PI * PI / 3.0).powi(2) - 1.0;
        assert!(close(k1.sup_bound(2), expected, 1e-12));
        assert!(close(k1.sup_bound(2), 17.402, 2e-3));
    }

    #[test]
    fn negative_fractional_part_wraps() {
        assert!(close(frac(-0.3f64), 0.7, 1e-15));
        assert_eq!(frac(-1e-300f64), 0.0);
        let k = KernelSpec::<f64>::sobolev(&[1, 2]).unwrap();
        assert!(close(k.eval(&[-0.3], &[0.0]), k.eval(&[0.7], &[0.0]), 1e-12));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::gaussian(0.0f64).is_err());
        assert!(KernelSpec::gaussian(-1.0f64).is_err());
        assert!(KernelSpec::<f64>::sobolev(&[]).is_err());
        assert!(KernelSpec::<f64>::sobolev(&[4]).is_err());
        let k = KernelSpec::gaussian(1.0f64).unwrap();
        assert!(matches!(
            k.try_eval(&[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(k.try_eval(&[f64::NAN], &[0.0]), Err(Error::NonFinite(_))));
        assert!(k.try_grad1(&[f64::INFINITY], &[0.0]).is_err());
    }

    fn kernels() -> Vec<KernelSpec<f64>> {
        vec![
            KernelSpec::gaussian(1.0).unwrap(),
            KernelSpec::gaussian(0.4).unwrap(),
            KernelSpec::sobolev(&[1, 2, 3]).unwrap(),
            KernelSpec::sobolev(&[1]).unwrap(),
            KernelSpec::sobolev(&[2, 3]).unwrap(),
        ]
    }

    #[test]
    fn symmetry_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in kernels() {
            for _ in 0..1000 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                assert_eq!(k.eval(&x, &y), k.eval(&y, &x), "{k:?}");
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-5;
        for k in kernels() {
            let mut checked = 0;
            while checked < 200 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
                // Keep clear of the fractional-part seam for the periodic family.
                if matches!(k, KernelSpec::SobolevSum { .. })
                    && x.iter().zip(&y).any(|(a, b)| {
                        let f = frac(a - b);
                        !(1e-3..=1.0 - 1e-3).contains(&f)
                    })
                {
                    continue;
                }
                let g = k.grad1(&x, &y);
                for j in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (k.eval(&xp, &y) - k.eval(&xm, &y)) / (2.0 * h);
                    let scale = fd.abs().max(g[j].abs()).max(1e-3);
                    assert!(
                        (fd - g[j]).abs() / scale < 1e-4,
                        "{k:?} x={x:?} y={y:?} j={j} fd={fd} g={}",
                        g[j]
                    );
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in kernels() {
            let kappa = k.sup_bound(2);
            for _ in 0..20 {
                let pts: Vec<Vec<f64>> = (0..10)
                    .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect();
                let gram = nalgebra::DMatrix::from_fn(10, 10, |i, j| k.eval(&pts[i], &pts[j]));
                let eig = gram.symmetric_eigenvalues();
                let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(min >= -1e-8 * kappa, "{k:?}: min eigenvalue {min}");
            }
        }
    }

    #[test]
    fn values_bounded_by_kappa() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in kernels() {
            let kappa = k.sup_bound(3);
            for _ in 0..500 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
                let y: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
                assert!(k.eval(&x, &y).abs() <= kappa * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn single_precision_agrees() {
        let k32 = KernelSpec::<f32>::sobolev(&[1, 2, 3]).unwrap();
        let k64 = KernelSpec::<f64>::sobolev(&[1, 2, 3]).unwrap();
        let v32 = k32.eval(&[0.2, 0.9], &[0.7, 0.1]) as f64;
        let v64 = k64.eval(&[0.2, 0.9], &[0.7, 0.1]);
        assert!((v32 - v64).abs() < 1e-4 * v64.abs().max(1.0));
    }

    proptest! {
        #[test]
        fn sobolev_is_periodic(
            x in prop::collection::vec(-4.0f64..4.0, 2),
            y in prop::collection::vec(-4.0f64..4.0, 2),
            m in prop::collection::vec(-3i32..3, 2),
        ) {
            let k = KernelSpec::<f64>::sobolev(&[1, 2, 3]).unwrap();
            let shifted: Vec<f64> = x.iter().zip(&m).map(|(a, &s)| a + s as f64).collect();
            prop_assert!((k.eval(&shifted, &y) - k.eval(&x, &y)).abs() <= 1e-12);
        }
    }
}
