//! Predictively oriented posterior for the Lotka-Volterra model under the
//! kernel scoring rule.
//!
//! A particle `x in R^2` maps to rates `(a, b)` via [`param_map`]; its model
//! `P_x` is the RK4 trajectory at the observation times plus unit Gaussian
//! noise. Under a product of Gaussian kernels over time points all the
//! expectations in the squared MMD are Gaussian convolutions, so
//! `q_2(x, x')` and the linear term `q_3(x)` are closed-form products,
//! accumulated in log space.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lv::{lv_ode, param_map, Dataset, LvParams, State};
use crate::points::PointSet;
use crate::rng::StreamRng;
use crate::scalar::Scalar;

use super::DriftModel;

/// `d u(tau_i) / d x`, indexed `[component][parameter]`.
pub type Sensitivity<T> = [[T; 2]; 2];

/// A trajectory with its sensitivities, one entry per observation time.
pub type TrajectoryWithSensitivity<T> = (Vec<State<T>>, Vec<Sensitivity<T>>);

/// Trajectories and their parameter sensitivities for every particle of
/// the current iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCache<T> {
    pub traj: Vec<Vec<State<T>>>,
    pub jac: Vec<Vec<Sensitivity<T>>>,
}

#[derive(Debug, Clone)]
pub struct ProModel<T> {
    data: Dataset<T>,
    /// Template for the deterministic model; `a` and `b` are overwritten.
    base: LvParams<T>,
    lengthscale: T,
    obs_variance: T,
    fd_step: T,
    cache: Option<TrajectoryCache<T>>,
}

impl<T: Scalar> ProModel<T> {
    pub fn new(data: Dataset<T>) -> Result<Self> {
        Self::with_base(data, LvParams::model(T::zero(), T::zero()))
    }

    pub fn with_base(data: Dataset<T>, base: LvParams<T>) -> Result<Self> {
        if data.is_empty() || data.tau.len() != data.y.len() {
            return Err(Error::InvalidConfig("PrO dataset must be nonempty and aligned".into()));
        }
        Ok(Self {
            data,
            base: base.with_noise(T::zero()),
            lengthscale: T::one(),
            obs_variance: T::one(),
            fd_step: T::lit(1e-4),
            cache: None,
        })
    }

    pub fn data(&self) -> &Dataset<T> {
        &self.data
    }

    pub fn cache(&self) -> Option<&TrajectoryCache<T>> {
        self.cache.as_ref()
    }

    fn params(&self, x: &[T]) -> LvParams<T> {
        let (a, b) = param_map(x);
        LvParams { a, b, ..self.base }
    }

    /// Model trajectory `u_x` at the observation times.
    pub fn trajectory(&self, x: &[T]) -> Result<Vec<State<T>>> {
        lv_ode(&self.params(x), &self.data.tau)
    }

    /// Trajectory plus central finite-difference sensitivities.
    pub fn trajectory_with_sensitivity(&self, x: &[T]) -> Result<TrajectoryWithSensitivity<T>> {
        let traj = self.trajectory(x)?;
        let h = self.fd_step;
        let mut jac = vec![[[T::zero(); 2]; 2]; traj.len()];
        for k in 0..2 {
            let mut up = [x[0], x[1]];
            let mut down = up;
            up[k] = up[k] + h;
            down[k] = down[k] - h;
            let tu = self.trajectory(&up)?;
            let td = self.trajectory(&down)?;
            for t in 0..traj.len() {
                for c in 0..2 {
                    jac[t][c][k] = (tu[t][c] - td[t][c]) / (T::lit(2.0) * h);
                }
            }
        }
        Ok((traj, jac))
    }

    /// Convolution variance of the pair term, `l^2 + 2 s^2`.
    fn pair_var(&self) -> T {
        self.lengthscale * self.lengthscale + T::lit(2.0) * self.obs_variance
    }

    /// Convolution variance of the data term, `l^2 + s^2`.
    fn data_var(&self) -> T {
        self.lengthscale * self.lengthscale + self.obs_variance
    }

    fn log_factor(&self, v: T) -> T {
        // observations live in R^2, so the normalizing power is (l^2 / v)^{2/2}
        (self.lengthscale * self.lengthscale / v).ln()
    }

    /// `q_2(x, x') = prod_i (l^2/(l^2+2)) exp(-|u_x - u_x'|^2 / (2 (l^2+2)))`.
    pub fn pair_kernel(&self, ta: &[State<T>], tb: &[State<T>]) -> T {
        let v = self.pair_var();
        let lf = self.log_factor(v);
        let mut log = T::zero();
        for (ua, ub) in ta.iter().zip(tb) {
            let r2 = sq2(ua, ub);
            log = log + lf - r2 / (T::lit(2.0) * v);
        }
        log.exp()
    }

    /// `q_3(x) = -2 prod_i (l^2/(l^2+1)) exp(-|u_x - y_i|^2 / (2 (l^2+1)))`.
    pub fn linear_term(&self, traj: &[State<T>]) -> T {
        let v = self.data_var();
        let lf = self.log_factor(v);
        let mut log = T::zero();
        for (u, y) in traj.iter().zip(&self.data.y) {
            log = log + lf - sq2(u, y) / (T::lit(2.0) * v);
        }
        -T::lit(2.0) * log.exp()
    }

    /// Builds the cache for `positions`.
    pub fn build_cache(&self, positions: &PointSet<T>) -> Result<TrajectoryCache<T>> {
        let results: Vec<_> = (0..positions.len())
            .into_par_iter()
            .map(|i| {
                self.trajectory_with_sensitivity(positions.row(i))
                    .map_err(|e| name_particle(e, i))
            })
            .collect();
        let mut traj = Vec::with_capacity(results.len());
        let mut jac = Vec::with_capacity(results.len());
        for r in results {
            let (t, j) = r?;
            traj.push(t);
            jac.push(j);
        }
        Ok(TrajectoryCache { traj, jac })
    }

    /// `2 (1/M) sum_j grad_x q_2(x_i, xbar_j) + grad_x q_3(x_i)` from cached
    /// trajectories.
    pub fn drift_cached(&self, cache: &TrajectoryCache<T>, coreset: &[usize], i: usize) -> [T; 2] {
        let ti = &cache.traj[i];
        let ji = &cache.jac[i];
        let mut out = [T::zero(); 2];
        let v2 = self.pair_var();
        let w = T::lit(2.0) / T::from_usize_lossy(coreset.len());
        for &j in coreset {
            let tj = &cache.traj[j];
            let q = self.pair_kernel(ti, tj);
            let g = chain(ti, tj, ji, v2);
            out[0] = out[0] + w * q * g[0];
            out[1] = out[1] + w * q * g[1];
        }
        let q3 = self.linear_term(ti);
        let g3 = chain(ti, &self.data.y, ji, self.data_var());
        out[0] = out[0] + q3 * g3[0];
        out[1] = out[1] + q3 * g3[1];
        out
    }

    /// Squared MMD `(1/N^2) sum q_2 + (1/N) sum q_3 + 1`.
    pub fn objective_from(&self, trajs: &[Vec<State<T>>]) -> T {
        self.variable_terms_from(trajs) + T::one()
    }

    /// The objective without its constant `1`. Over many observation times
    /// the trajectory terms are exponentially small, so adding the constant
    /// rounds their variation away; finite differences need this form.
    pub fn variable_terms(&self, positions: &PointSet<T>) -> Result<T> {
        Ok(self.variable_terms_from(&self.trajectories(positions)?))
    }

    fn variable_terms_from(&self, trajs: &[Vec<State<T>>]) -> T {
        let n = trajs.len();
        let mut off = T::zero();
        let mut diag = T::zero();
        let mut lin = T::zero();
        for a in 0..n {
            diag = diag + self.pair_kernel(&trajs[a], &trajs[a]);
            lin = lin + self.linear_term(&trajs[a]);
            for b in (a + 1)..n {
                off = off + self.pair_kernel(&trajs[a], &trajs[b]);
            }
        }
        let nn = T::from_usize_lossy(n);
        (diag + T::lit(2.0) * off) / (nn * nn) + lin / nn
    }

    fn trajectories(&self, positions: &PointSet<T>) -> Result<Vec<Vec<State<T>>>> {
        (0..positions.len())
            .into_par_iter()
            .map(|i| self.trajectory(positions.row(i)).map_err(|e| name_particle(e, i)))
            .collect()
    }

    /// Root mean square error of the particle rates against `(a*, b*)`.
    pub fn param_rmse(positions: &PointSet<T>, truth: (T, T)) -> T {
        let n = T::from_usize_lossy(positions.len());
        let ss = positions
            .rows()
            .map(|x| {
                let (a, b) = param_map(x);
                (a - truth.0).powi(2) + (b - truth.1).powi(2)
            })
            .sum::<T>();
        (ss / (T::lit(2.0) * n)).sqrt()
    }
}

#[inline]
fn sq2<T: Scalar>(a: &State<T>, b: &State<T>) -> T {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    d0 * d0 + d1 * d1
}

/// `sum_i (-1/v) (u_i - w_i)^T J_i`.
fn chain<T: Scalar>(u: &[State<T>], w: &[State<T>], jac: &[Sensitivity<T>], v: T) -> [T; 2] {
    let mut g = [T::zero(); 2];
    for ((ui, wi), ji) in u.iter().zip(w).zip(jac) {
        let d = [ui[0] - wi[0], ui[1] - wi[1]];
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = *gk - (d[0] * ji[0][k] + d[1] * ji[1][k]) / v;
        }
    }
    g
}

fn name_particle(e: Error, i: usize) -> Error {
    match e {
        Error::Ode { a, b, reason } => Error::Ode {
            a,
            b,
            reason: format!("particle {i}: {reason}"),
        },
        other => other,
    }
}

impl<T: Scalar> DriftModel<T> for ProModel<T> {
    fn dim(&self) -> usize {
        2
    }

    fn prepare(&mut self, positions: &PointSet<T>) -> Result<()> {
        self.cache = Some(self.build_cache(positions)?);
        Ok(())
    }

    fn drift(
        &self,
        positions: &PointSet<T>,
        coreset: &[usize],
        i: usize,
        _rng: &mut StreamRng,
        out: &mut [T],
    ) -> Result<()> {
        let cache = self
            .cache
            .as_ref()
            .filter(|c| c.traj.len() == positions.len())
            .ok_or_else(|| Error::Precondition("trajectory cache not prepared for these particles".into()))?;
        if coreset.is_empty() {
            return Err(Error::Precondition("empty coreset".into()));
        }
        let d = self.drift_cached(cache, coreset, i);
        out.copy_from_slice(&d);
        Ok(())
    }

    fn objective(&self, positions: &PointSet<T>) -> Result<T> {
        Ok(self.objective_from(&self.trajectories(positions)?))
    }

    fn metrics(&self, positions: &PointSet<T>) -> Result<Vec<(&'static str, T)>> {
        let truth = LvParams::<T>::data_generating();
        Ok(vec![
            ("objective", self.objective(positions)?),
            ("param_rmse", Self::param_rmse(positions, (truth.a, truth.b))),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lv::{make_dataset, sigmoid};
    use crate::objectives::finite_difference;
    use crate::rng::{stream, Purpose};

    fn single_point_data(y: State<f64>) -> Dataset<f64> {
        Dataset { tau: vec![0.0], y: vec![y] }
    }

    #[test]
    fn pair_kernel_identical_trajectories() {
        let m = ProModel::new(single_point_data([10.0, 10.0])).unwrap();
        let t1 = vec![[1.0, 2.0]];
        assert!((m.pair_kernel(&t1, &t1) - 1.0 / 3.0).abs() < 1e-15);
        let t2 = vec![[1.0, 2.0], [3.0, 4.0]];
        assert!((m.pair_kernel(&t2, &t2) - 1.0 / 9.0).abs() < 1e-15);
        let t61 = vec![[5.0, 5.0]; 61];
        let v = m.pair_kernel(&t61, &t61);
        assert!(v > 0.0 && v.is_finite());
        assert!((v / 3f64.powi(-61) - 1.0).abs() < 1e-12);
        assert!((v - 7.863e-30).abs() < 1e-33);
    }

    #[test]
    fn pair_kernel_decreases_with_distance() {
        let m = ProModel::new(single_point_data([0.0, 0.0])).unwrap();
        let a = vec![[0.0, 0.0]; 3];
        let mut last = f64::INFINITY;
        for r in [0.0, 0.5, 1.0, 4.0, 30.0] {
            let b = vec![[r, 0.0], [0.0, 0.0], [0.0, 0.0]];
            let v = m.pair_kernel(&a, &b);
            assert!(v > 0.0 && v < last);
            last = v;
        }
    }

    #[test]
    fn linear_term_values() {
        let m = ProModel::new(single_point_data([3.0, 4.0])).unwrap();
        assert!((m.linear_term(&[[3.0, 4.0]]) + 1.0).abs() < 1e-15);
        let far = m.linear_term(&[[3e3, 4e3]]);
        assert!(far <= 0.0 && far > -1e-300);
    }

    #[test]
    fn single_particle_objective_at_the_data() {
        let m = ProModel::new(single_point_data([10.0, 10.0])).unwrap();
        let traj = vec![vec![[10.0, 10.0]]];
        assert!((m.objective_from(&traj) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn objective_nonnegative_and_permutation_invariant() {
        let data = make_dataset::<f64>(1).unwrap();
        let m = ProModel::new(data).unwrap();
        let pts = PointSet::from_rows(&[[-2.0, -2.0], [-1.5, -2.5], [-2.2, -1.8], [-1.0, -3.0]]).unwrap();
        let v = m.objective(&pts).unwrap();
        assert!(v >= 0.0);
        let p2 = pts.select(&[2, 0, 3, 1]);
        assert!((m.objective(&p2).unwrap() - v).abs() < 1e-15);
    }

    #[test]
    fn zero_drift_when_data_equals_trajectory() {
        let template = ProModel::new(single_point_data([0.0, 0.0])).unwrap();
        let x = [-2.0, -1.5];
        let tau: Vec<f64> = (0..=20).map(|t| t as f64).collect();
        let exact = lv_ode(&template.params(&x), &tau).unwrap();
        let mut m = ProModel::new(Dataset { tau, y: exact }).unwrap();
        let pts = PointSet::from_rows(&[x]).unwrap();
        m.prepare(&pts).unwrap();
        let mut out = [1.0; 2];
        let mut rng = stream(0, Purpose::Probe, 0, 0);
        m.drift(&pts, &[0], 0, &mut rng, &mut out).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12), "{out:?}");
    }

    #[test]
    fn drift_matches_scaled_objective_gradient() {
        // Eight observation times keep the objective smooth enough for
        // central differences.
        let mut data = make_dataset::<f64>(2).unwrap();
        data.tau.truncate(8);
        data.y.truncate(8);
        let mut m = ProModel::new(data).unwrap();
        let pts = PointSet::from_rows(&[[-2.0, -2.1], [-2.01, -2.09], [-1.99, -2.11]]).unwrap();
        m.prepare(&pts).unwrap();
        let n = pts.len();
        let all: Vec<usize> = (0..n).collect();
        let mut rng = stream(0, Purpose::Probe, 0, 0);
        for i in 0..n {
            let mut d = [0.0; 2];
            m.drift(&pts, &all, i, &mut rng, &mut d).unwrap();
            let fd = finite_difference(pts.row(i), 1e-5, |xi| {
                let mut p = pts.clone();
                p.row_mut(i).copy_from_slice(xi);
                m.variable_terms(&p).unwrap()
            });
            for k in 0..2 {
                let want = n as f64 * fd[k];
                assert!(
                    want != 0.0 && (d[k] - want).abs() <= 1e-3 * want.abs(),
                    "particle {i} param {k}: {} vs {want}",
                    d[k]
                );
            }
        }
    }

    #[test]
    fn sensitivity_matches_exponential_growth() {
        let mut base = LvParams::model(0.0, 0.0);
        base.c = 0.0;
        base.d = 0.0;
        let tau: Vec<f64> = (0..=5).map(|t| t as f64).collect();
        let m = ProModel::with_base(Dataset { tau: tau.clone(), y: vec![[0.0; 2]; 6] }, base).unwrap();
        let x = [-2.0, -40.0];
        let (_, jac) = m.trajectory_with_sensitivity(&x).unwrap();
        let a = sigmoid(-2.0);
        let ds = a * (1.0 - a);
        for (t, j) in tau.iter().zip(&jac).skip(1) {
            let want = 10.0 * (a * t).exp() * ds * t;
            assert!((j[0][0] - want).abs() <= 1e-4 * want, "{} vs {want}", j[0][0]);
        }
    }

    #[test]
    fn drift_requires_prepared_cache() {
        let m = ProModel::new(make_dataset::<f64>(0).unwrap()).unwrap();
        let pts = PointSet::from_rows(&[[0.0, 0.0]]).unwrap();
        let mut out = [0.0; 2];
        let mut rng = stream(0, Purpose::Probe, 0, 0);
        assert!(matches!(m.drift(&pts, &[0], 0, &mut rng, &mut out), Err(Error::Precondition(_))));
    }

    #[test]
    fn gaussian_convolutions_match_monte_carlo() {
        use crate::rng::std_normal;
        let m = ProModel::new(single_point_data([0.4, -0.3])).unwrap();
        let u = [[0.0, 0.0]];
        let mut rng = stream(4, Purpose::Probe, 0, 0);
        let n = 100_000;
        let (mut s2, mut ss2, mut s3, mut ss3) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let y: [f64; 2] = [std_normal(&mut rng), std_normal(&mut rng)];
            let yp: [f64; 2] = [std_normal(&mut rng), std_normal(&mut rng)];
            let k2 = (-sq2(&y, &yp) / 2.0).exp();
            let k3 = -2.0 * (-sq2(&y, &[0.4, -0.3]) / 2.0).exp();
            s2 += k2;
            ss2 += k2 * k2;
            s3 += k3;
            ss3 += k3 * k3;
        }
        let nf = n as f64;
        for (s, ss, want) in [(s2, ss2, m.pair_kernel(&u, &u)), (s3, ss3, m.linear_term(&u))] {
            let mean = s / nf;
            let se = ((ss / nf - mean * mean) / nf).sqrt();
            assert!((mean - want).abs() < 3.0 * se, "{mean} vs {want} (se {se})");
        }
    }
}
