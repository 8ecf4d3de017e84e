//! Lotka-Volterra predator-prey simulators.
//!
//! `du1 = (a u1 - b u1 u2) dt + eps1 dB`, `du2 = (c u1 u2 - d u2) dt + eps2 dB`.
//! The deterministic model is integrated with classical RK4; the stochastic
//! data generator uses a Heun predictor-corrector with one shared Brownian
//! increment per step.

use crate::error::{Error, Result};
use crate::rng::{std_normal, stream, Purpose, StreamRng};
use crate::scalar::Scalar;

pub type State<T> = [T; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvParams<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub xi: State<T>,
    pub dtau: T,
    pub horizon: T,
    pub eps: State<T>,
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Parameter transform for inference: `a = sigmoid(x1)`, `b = a sigmoid(x2)`.
pub fn param_map<T: Scalar>(x: &[T]) -> (T, T) {
    let a = sigmoid(x[0]);
    (a, a * sigmoid(x[1]))
}

impl<T: Scalar> LvParams<T> {
    /// Ground truth used to generate the observations.
    pub fn data_generating() -> Self {
        Self {
            a: sigmoid(T::lit(-2.0)),
            b: sigmoid(T::lit(-4.0)),
            ..Self::model(T::zero(), T::zero())
        }
        .with_noise(T::lit(0.4))
    }

    /// Deterministic model with the given prey growth and predation rates
    /// and the fixed predator coefficients.
    pub fn model(a: T, b: T) -> Self {
        Self {
            a,
            b,
            c: T::lit(0.4),
            d: T::lit(0.02),
            xi: [T::lit(10.0), T::lit(10.0)],
            dtau: T::lit(0.01),
            horizon: T::lit(60.0),
            eps: [T::zero(), T::zero()],
        }
    }

    pub fn with_noise(mut self, eps: T) -> Self {
        self.eps = [eps, eps];
        self
    }

    #[inline]
    pub fn rhs(&self, u: State<T>) -> State<T> {
        [
            self.a * u[0] - self.b * u[0] * u[1],
            self.c * u[0] * u[1] - self.d * u[1],
        ]
    }

    fn steps(&self, tau: T) -> Result<usize> {
        let k = (tau / self.dtau).round();
        let off = (k * self.dtau - tau).abs();
        if tau < T::zero() || off > T::lit(1e-6) * self.dtau || !k.is_finite() {
            return Err(self.ode_error(format!("time {tau} is not on the step grid {}", self.dtau)));
        }
        Ok(k.to_usize().unwrap_or(0))
    }

    fn ode_error(&self, reason: String) -> Error {
        Error::Ode {
            a: self.a.to_f64_lossy(),
            b: self.b.to_f64_lossy(),
            reason,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.dtau > T::zero()) {
            return Err(self.ode_error("step must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
fn rk4_step<T: Scalar>(p: &LvParams<T>, u: State<T>, h: T) -> State<T> {
    let half = T::lit(0.5) * h;
    let k1 = p.rhs(u);
    let k2 = p.rhs([u[0] + half * k1[0], u[1] + half * k1[1]]);
    let k3 = p.rhs([u[0] + half * k2[0], u[1] + half * k2[1]]);
    let k4 = p.rhs([u[0] + h * k3[0], u[1] + h * k3[1]]);
    let sixth = h / T::lit(6.0);
    [
        u[0] + sixth * (k1[0] + T::lit(2.0) * k2[0] + T::lit(2.0) * k3[0] + k4[0]),
        u[1] + sixth * (k1[1] + T::lit(2.0) * k2[1] + T::lit(2.0) * k3[1] + k4[1]),
    ]
}

/// Deterministic RK4 solution sampled at `obs_times` (ascending, on the
/// step grid). Fails if the state stops being finite and positive.
pub fn lv_ode<T: Scalar>(p: &LvParams<T>, obs_times: &[T]) -> Result<Vec<State<T>>> {
    p.check()?;
    let mut out = Vec::with_capacity(obs_times.len());
    let mut u = p.xi;
    let mut k = 0usize;
    for &tau in obs_times {
        let target = p.steps(tau)?;
        if target < k {
            return Err(p.ode_error("observation times must be ascending".into()));
        }
        while k < target {
            u = rk4_step(p, u, p.dtau);
            k += 1;
            if !(u[0] > T::zero() && u[1] > T::zero() && u[0].is_finite() && u[1].is_finite()) {
                return Err(p.ode_error(format!("state ({}, {}) at step {k}", u[0], u[1])));
            }
        }
        out.push(u);
    }
    Ok(out)
}

/// Heun predictor-corrector path over the whole step grid `0..=horizon`.
///
/// With `rng = None` the noise is switched off. Populations are clamped
/// below at `1e-6`.
pub fn lv_heun<T: Scalar>(p: &LvParams<T>, mut rng: Option<&mut StreamRng>) -> Result<Vec<State<T>>> {
    p.check()?;
    let steps = p.steps(p.horizon)?;
    let floor = T::lit(1e-6);
    let sqrt_h = p.dtau.sqrt();
    let mut u = p.xi;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(u);
    for _ in 0..steps {
        let dw = match rng.as_deref_mut() {
            Some(r) => {
                let z: T = std_normal(r);
                sqrt_h * z
            }
            None => T::zero(),
        };
        let noise = [p.eps[0] * dw, p.eps[1] * dw];
        let f0 = p.rhs(u);
        let pred = [
            (u[0] + p.dtau * f0[0] + noise[0]).max(floor),
            (u[1] + p.dtau * f0[1] + noise[1]).max(floor),
        ];
        let f1 = p.rhs(pred);
        let half = T::lit(0.5) * p.dtau;
        u = [
            (u[0] + half * (f0[0] + f1[0]) + noise[0]).max(floor),
            (u[1] + half * (f0[1] + f1[1]) + noise[1]).max(floor),
        ];
        path.push(u);
    }
    Ok(path)
}

/// One stochastic trajectory on the full grid.
pub fn lv_sde_generate<T: Scalar>(p: &LvParams<T>, rng: &mut StreamRng) -> Result<Vec<State<T>>> {
    lv_heun(p, Some(rng))
}

/// Observations `(tau_i, y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub tau: Vec<T>,
    pub y: Vec<State<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetOptions {
    /// Use the stochastic dynamics (otherwise the noise-free Heun path).
    pub intrinsic_noise: bool,
    /// Add unit-variance Gaussian measurement noise.
    pub measurement_noise: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            intrinsic_noise: true,
            measurement_noise: true,
        }
    }
}

/// Integer observation times `0, 1, ..., 60`.
pub fn observation_times<T: Scalar>() -> Vec<T> {
    (0..=60).map(|t| T::lit(t as f64)).collect()
}

/// Observations at integer times from one stochastic path at the
/// data-generating parameters.
pub fn make_dataset<T: Scalar>(seed: u64) -> Result<Dataset<T>> {
    make_dataset_with(seed, &LvParams::data_generating(), DatasetOptions::default())
}

pub fn make_dataset_with<T: Scalar>(seed: u64, p: &LvParams<T>, opts: DatasetOptions) -> Result<Dataset<T>> {
    let mut path_rng = stream(seed, Purpose::Data, 0, 0);
    let path = if opts.intrinsic_noise {
        lv_heun(p, Some(&mut path_rng))?
    } else {
        lv_heun(p, None)?
    };
    let mut obs_rng = stream(seed, Purpose::Data, 1, 0);
    let tau = observation_times::<T>();
    let mut y = Vec::with_capacity(tau.len());
    for &t in &tau {
        let u = path[p.steps(t)?];
        if opts.measurement_noise {
            let n1: T = std_normal(&mut obs_rng);
            let n2: T = std_normal(&mut obs_rng);
            y.push([u[0] + n1, u[1] + n2]);
        } else {
            y.push(u);
        }
    }
    Ok(Dataset { tau, y })
}
