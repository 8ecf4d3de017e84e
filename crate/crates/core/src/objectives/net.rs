//! Mean-field two-layer network in an online student-teacher setting.
//!
//! A particle is one hidden neuron `x = (w1, b1, w2)` with
//! `Psi(z, x) = w2 * relu(w1 . z + b1)`, smoothly clipped to `c tanh(Psi / c)`.
//! The network output is the average over neurons. Every particle update
//! draws its own fresh batch from the teacher, so the per-iteration cost is
//! `N * M * B` neuron evaluations.

use crate::error::{Error, Result};
use crate::points::PointSet;
use crate::rng::{fill_std_normal, std_normal, stream, Purpose, StreamRng};
use crate::scalar::{sq_norm, Scalar};

use super::DriftModel;

/// Covariate distribution for teacher data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Covariates<T> {
    /// Uniform on the unit sphere of R^{d_z}.
    Sphere,
    /// Isotropic Gaussian with the given per-coordinate variance.
    Gaussian { variance: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig<T> {
    /// Covariate dimension; the particle dimension is `d_z + 2`.
    pub d_z: usize,
    pub n_teacher: usize,
    pub n_modes: usize,
    /// Per-coordinate variance of the teacher mode centres.
    pub mode_variance: T,
    /// Per-coordinate variance of each teacher neuron around its centre.
    pub neuron_variance: T,
    /// Common factor applied to the teacher's first- and second-layer weights.
    pub weight_scale: T,
    pub clip: T,
    pub batch: usize,
    pub label_noise_variance: T,
    pub covariates: Covariates<T>,
    pub n_test: usize,
}

impl<T: Scalar> Default for NetConfig<T> {
    fn default() -> Self {
        Self {
            d_z: 10,
            n_teacher: 100,
            n_modes: 10,
            mode_variance: T::lit(4.0),
            neuron_variance: T::lit(0.2),
            weight_scale: T::lit(0.8),
            clip: T::lit(1e3),
            batch: 32,
            label_noise_variance: T::lit(1e-4),
            covariates: Covariates::Sphere,
            n_test: 1000,
        }
    }
}

impl<T: Scalar> NetConfig<T> {
    pub fn dim(&self) -> usize {
        self.d_z + 2
    }

    fn validate(&self) -> Result<()> {
        if self.d_z == 0 || self.n_teacher == 0 || self.n_modes == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig(
                "network sizes (d_z, teacher neurons, modes, batch) must be positive".into(),
            ));
        }
        if !(self.clip > T::zero()) {
            return Err(Error::InvalidConfig("clip level must be positive".into()));
        }
        if self.label_noise_variance < T::zero() || self.mode_variance < T::zero() || self.neuron_variance < T::zero() {
            return Err(Error::InvalidConfig("variances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `tanh(v)`, by its odd Taylor series when `|v| < 1/32`. The first
/// omitted term is below `1e-17 |v|` there, so the series is exact in double
/// precision; with the default clip level almost every argument takes this
/// path.
#[inline]
fn small_tanh<T: Scalar>(v: T) -> T {
    if v.abs() < T::lit(0.03125) {
        let v2 = v * v;
        let poly = T::one()
            + v2 * (T::lit(-1.0 / 3.0)
                + v2 * (T::lit(2.0 / 15.0)
                    + v2 * (T::lit(-17.0 / 315.0) + v2 * T::lit(62.0 / 2835.0))));
        v * poly
    } else {
        v.tanh()
    }
}

/// Clipped neuron output `c tanh(w2 relu(w1 . z + b1) / c)`.
#[inline]
pub fn neuron<T: Scalar>(z: &[T], x: &[T], clip: T) -> T {
    let dz = z.len();
    let pre = dot(&x[..dz], z) + x[dz];
    if pre <= T::zero() {
        return T::zero();
    }
    clip * small_tanh(x[dz + 1] * pre / clip)
}

/// Gradient of [`neuron`] in the parameters `x`, written into `out`.
pub fn neuron_grad<T: Scalar>(z: &[T], x: &[T], clip: T, out: &mut [T]) {
    let dz = z.len();
    let pre = dot(&x[..dz], z) + x[dz];
    let w2 = x[dz + 1];
    let act = pre.max(T::zero());
    let th = small_tanh(w2 * act / clip);
    let outer = T::one() - th * th;
    let gate = if pre > T::zero() { w2 * outer } else { T::zero() };
    for j in 0..dz {
        out[j] = gate * z[j];
    }
    out[dz] = gate;
    out[dz + 1] = act * outer;
}

/// Inner product with two interleaved accumulators, which roughly halves the
/// dependent-add latency on the short vectors used here.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (mut even, mut odd) = (T::zero(), T::zero());
    let mut j = 0;
    while j + 1 < n {
        even = even + a[j] * b[j];
        odd = odd + a[j + 1] * b[j + 1];
        j += 2;
    }
    if j < n {
        even = even + a[j] * b[j];
    }
    even + odd
}

/// Network output: average of clipped neurons over `rows`.
pub fn net_forward<'a, T: Scalar>(rows: impl ExactSizeIterator<Item = &'a [T]>, z: &[T], clip: T) -> T {
    let m = rows.len();
    let s = rows.fold(T::zero(), |acc, x| acc + neuron(z, x, clip));
    s / T::from_usize_lossy(m)
}

/// A set of neurons with first-layer weights stored column-major (`d_z`
/// columns, one entry per neuron) so the pre-activations of all neurons
/// accumulate in one vectorizable pass.
#[derive(Debug, Clone, PartialEq)]
struct Layer<T> {
    w1_columns: Vec<T>,
    b1: Vec<T>,
    w2: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn new<'a>(neurons: impl ExactSizeIterator<Item = &'a [T]> + Clone, dz: usize) -> Self {
        let n = neurons.len();
        let mut w1_columns = vec![T::zero(); dz * n];
        for (k, row) in neurons.clone().enumerate() {
            for j in 0..dz {
                w1_columns[j * n + k] = row[j];
            }
        }
        let b1 = neurons.clone().map(|row| row[dz]).collect();
        let w2 = neurons.map(|row| row[dz + 1]).collect();
        Self { w1_columns, b1, w2 }
    }

    /// Mean neuron output at `z`, using `pre` as scratch.
    fn mean_output(&self, z: &[T], clip: T, pre: &mut Vec<T>) -> T {
        let n = self.b1.len();
        pre.clear();
        pre.extend_from_slice(&self.b1);
        for (column, &zj) in self.w1_columns.chunks_exact(n).zip(z) {
            for (p, &w) in pre.iter_mut().zip(column) {
                *p = *p + w * zj;
            }
        }
        let total = pre
            .iter()
            .zip(&self.w2)
            .filter(|(&p, _)| p > T::zero())
            .fold(T::zero(), |acc, (&p, &w2)| acc + clip * small_tanh(w2 * p / clip));
        total / T::from_usize_lossy(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Teacher<T> {
    neurons: PointSet<T>,
    layer: Layer<T>,
}

impl<T: Scalar> Teacher<T> {
    /// Mixture-of-modes teacher drawn from the teacher stream of `seed`.
    pub fn sample(cfg: &NetConfig<T>, seed: u64) -> Self {
        let d = cfg.dim();
        let mut rng = stream(seed, Purpose::Teacher, 0, 0);
        let mode_sd = cfg.mode_variance.sqrt();
        let neuron_sd = cfg.neuron_variance.sqrt();
        let mut centres = vec![T::zero(); cfg.n_modes * d];
        fill_std_normal(&mut rng, &mut centres);
        centres.iter_mut().for_each(|c| *c = *c * mode_sd);
        let mut data = Vec::with_capacity(cfg.n_teacher * d);
        for j in 0..cfg.n_teacher {
            let mode = j % cfg.n_modes;
            for k in 0..d {
                let v = centres[mode * d + k] + neuron_sd * std_normal::<T, _>(&mut rng);
                let scaled = if k == cfg.d_z { v } else { v * cfg.weight_scale };
                data.push(scaled);
            }
        }
        Self::new(PointSet::new(data, d).expect("teacher layout"))
    }

    /// Teacher with the given neuron parameters, one `(w1, b1, w2)` per row.
    pub fn new(neurons: PointSet<T>) -> Self {
        let layer = Layer::new(neurons.rows(), neurons.dim().saturating_sub(2));
        Self { neurons, layer }
    }

    pub fn neurons(&self) -> &PointSet<T> {
        &self.neurons
    }

    /// Teacher network output at `z`; equal to [`net_forward`] over
    /// [`Teacher::neurons`] up to summation order.
    pub fn output(&self, z: &[T], clip: T) -> T {
        self.layer.mean_output(z, clip, &mut Vec::with_capacity(self.layer.b1.len()))
    }
}

/// A batch of covariates with their noisy labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub z: PointSet<T>,
    pub y: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct NetModel<T> {
    cfg: NetConfig<T>,
    teacher: Teacher<T>,
    test: Batch<T>,
}

impl<T: Scalar> NetModel<T> {
    /// Builds the teacher and the fixed test set from `seed`.
    pub fn new(cfg: NetConfig<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let teacher = Teacher::sample(&cfg, seed);
        Self::with_teacher(cfg, teacher, seed)
    }

    pub fn with_teacher(cfg: NetConfig<T>, teacher: Teacher<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if teacher.neurons.dim() != cfg.dim() {
            return Err(Error::DimensionMismatch {
                expected: cfg.dim(),
                got: teacher.neurons.dim(),
            });
        }
        let mut model = Self {
            test: Batch {
                z: PointSet::zeros(0, cfg.d_z),
                y: Vec::new(),
            },
            cfg,
            teacher,
        };
        let mut rng = stream(seed, Purpose::TestSet, 0, 0);
        model.test = model.sample_batch(model.cfg.n_test, &mut rng);
        Ok(model)
    }

    pub fn config(&self) -> &NetConfig<T> {
        &self.cfg
    }

    pub fn teacher(&self) -> &Teacher<T> {
        &self.teacher
    }

    pub fn test_set(&self) -> &Batch<T> {
        &self.test
    }

    fn sample_covariate(&self, rng: &mut StreamRng, out: &mut [T]) {
        fill_std_normal(rng, out);
        match self.cfg.covariates {
            Covariates::Sphere => {
                let norm = sq_norm(out).sqrt();
                if norm > T::zero() {
                    out.iter_mut().for_each(|v| *v = *v / norm);
                } else {
                    out[0] = T::one();
                }
            }
            Covariates::Gaussian { variance } => {
                let sd = variance.sqrt();
                out.iter_mut().for_each(|v| *v = *v * sd);
            }
        }
    }

    /// Draws `size` teacher samples `(z, teacher(z) + noise)`.
    pub fn sample_batch(&self, size: usize, rng: &mut StreamRng) -> Batch<T> {
        let dz = self.cfg.d_z;
        let noise_sd = self.cfg.label_noise_variance.sqrt();
        let mut z = vec![T::zero(); size * dz];
        let mut y = Vec::with_capacity(size);
        let mut pre = Vec::new();
        for s in 0..size {
            let row = &mut z[s * dz..(s + 1) * dz];
            self.sample_covariate(rng, row);
            let clean = self.teacher.layer.mean_output(row, self.cfg.clip, &mut pre);
            let label = clean + noise_sd * std_normal::<T, _>(rng);
            y.push(label);
        }
        Batch {
            z: PointSet::new(z, dz).expect("batch layout"),
            y,
        }
    }

    /// `(1/B) sum_s (hbar(z_s) - y_s) grad_x Psi~(z_s, x)` with `hbar` the
    /// coreset network.
    pub fn drift_with_batch<'a>(
        &self,
        coreset: impl Iterator<Item = &'a [T]> + Clone,
        m: usize,
        x: &[T],
        batch: &Batch<T>,
        out: &mut [T],
    ) {
        out.iter_mut().for_each(|o| *o = T::zero());
        let mut g = vec![T::zero(); x.len()];
        let layer = Layer::new(coreset.take(m).collect::<Vec<_>>().into_iter(), self.cfg.d_z);
        let mut pre = Vec::with_capacity(m);
        let inv_b = T::one() / T::from_usize_lossy(batch.y.len());
        for (z, &y) in batch.z.rows().zip(&batch.y) {
            let h = layer.mean_output(z, self.cfg.clip, &mut pre);
            neuron_grad(z, x, self.cfg.clip, &mut g);
            let r = (h - y) * inv_b;
            for (o, &gj) in out.iter_mut().zip(&g) {
                *o = *o + r * gj;
            }
        }
    }

    /// `(1/n) sum_s 1/2 (h(z_s) - y_s)^2` over a batch, with the full network.
    pub fn batch_loss(&self, positions: &PointSet<T>, batch: &Batch<T>) -> T {
        let n = T::from_usize_lossy(batch.y.len());
        batch
            .z
            .rows()
            .zip(&batch.y)
            .map(|(z, &y)| {
                let r = net_forward(positions.rows(), z, self.cfg.clip) - y;
                T::lit(0.5) * r * r
            })
            .sum::<T>()
            / n
    }

    pub fn test_loss(&self, positions: &PointSet<T>) -> T {
        self.batch_loss(positions, &self.test)
    }
}

impl<T: Scalar> DriftModel<T> for NetModel<T> {
    fn dim(&self) -> usize {
        self.cfg.dim()
    }

    fn drift(
        &self,
        positions: &PointSet<T>,
        coreset: &[usize],
        i: usize,
        rng: &mut StreamRng,
        out: &mut [T],
    ) -> Result<()> {
        if coreset.is_empty() {
            return Err(Error::Precondition("empty coreset".into()));
        }
        let batch = self.sample_batch(self.cfg.batch, rng);
        let rows = coreset.iter().map(|&j| positions.row(j));
        self.drift_with_batch(rows, coreset.len(), positions.row(i), &batch, out);
        Ok(())
    }

    fn objective(&self, positions: &PointSet<T>) -> Result<T> {
        Ok(self.test_loss(positions))
    }

    fn metrics(&self, positions: &PointSet<T>) -> Result<Vec<(&'static str, T)>> {
        Ok(vec![("test_loss", self.test_loss(positions))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::finite_difference;

    fn small_cfg() -> NetConfig<f64> {
        NetConfig {
            n_test: 200,
            ..NetConfig::default()
        }
    }

    #[test]
    fn dimension_layout() {
        let cfg = NetConfig::<f64>::default();
        assert_eq!(cfg.dim(), 12);
        let model = NetModel::new(small_cfg(), 0).unwrap();
        assert_eq!(model.teacher().neurons.len(), 100);
        assert_eq!(model.teacher().neurons.dim(), 12);
    }

    #[test]
    fn zero_output_weights_give_zero_output() {
        let z = [1.0, 0.0, 0.0];
        let xs = PointSet::from_rows(&[[0.3, -1.0, 2.0, 0.5, 0.0], [1.0, 1.0, 1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(net_forward(xs.rows(), &z, 1e3), 0.0);
    }

    #[test]
    fn clipped_output_is_bounded() {
        let z = [1.0f64];
        for w2 in [1e2, 1e5, 1e9, -1e9] {
            let x: [f64; 3] = [10.0, 10.0, w2];
            assert!(neuron(&z, &x, 1e3).abs() <= 1e3);
        }
    }

    #[test]
    fn single_neuron_value() {
        let mut x = vec![0.0; 12];
        x[10] = 1.0;
        x[11] = 2.0;
        let z = {
            let mut z = vec![0.0; 10];
            z[0] = 1.0;
            z
        };
        let v = neuron(&z, &x, 1e3);
        assert!((v - 1000.0 * (0.002f64).tanh()).abs() < 1e-12);
        assert!((v - 1.9999973).abs() < 1e-6);
    }

    #[test]
    fn neuron_gradient_matches_finite_differences() {
        let mut rng = stream(5, Purpose::Probe, 0, 0);
        let clip = 3.0;
        let mut checked = 0;
        for _ in 0..200 {
            let mut z = vec![0.0f64; 4];
            let mut x = vec![0.0f64; 6];
            fill_std_normal(&mut rng, &mut z);
            fill_std_normal(&mut rng, &mut x);
            x[5] *= 3.0;
            let pre = dot(&x[..4], &z) + x[4];
            if pre.abs() < 1e-2 {
                continue;
            }
            let mut g = vec![0.0; 6];
            neuron_grad(&z, &x, clip, &mut g);
            let fd = finite_difference(&x, 1e-6, |p| neuron(&z, p, clip));
            for j in 0..6 {
                assert!((g[j] - fd[j]).abs() <= 1e-4 * fd[j].abs().max(1e-4), "{g:?} vs {fd:?}");
            }
            checked += 1;
        }
        assert!(checked > 150);
    }

    #[test]
    fn teacher_output_agrees_with_row_forward_pass() {
        let cfg = small_cfg();
        let model = NetModel::new(cfg.clone(), 3).unwrap();
        let mut rng = stream(3, Purpose::Probe, 0, 0);
        let mut z = vec![0.0; cfg.d_z];
        for _ in 0..50 {
            model.sample_covariate(&mut rng, &mut z);
            let fast = model.teacher().output(&z, cfg.clip);
            let rows = net_forward(model.teacher().neurons().rows(), &z, cfg.clip);
            assert!((fast - rows).abs() <= 1e-13 * (1.0 + rows.abs()), "{fast} vs {rows}");
        }
    }

    #[test]
    fn small_tanh_matches_tanh() {
        for k in -400..=400 {
            let v = k as f64 * 1e-4;
            assert!((small_tanh(v) - v.tanh()).abs() <= 1e-17 + 2.0 * f64::EPSILON * v.abs());
        }
    }

    #[test]
    fn zero_teacher_and_zero_student_give_zero_drift() {
        let mut cfg = small_cfg();
        cfg.label_noise_variance = 0.0;
        let teacher = Teacher::new(PointSet::zeros(100, 12));
        let model = NetModel::with_teacher(cfg, teacher, 1).unwrap();
        let mut student = PointSet::zeros(4, 12);
        for i in 0..4 {
            student.row_mut(i)[0] = 0.5 * i as f64;
            student.row_mut(i)[10] = 1.0;
        }
        let mut rng = stream(1, Purpose::Batch, 0, 0);
        let mut out = vec![1.0; 12];
        model.drift(&student, &[0, 1, 2, 3], 2, &mut rng, &mut out).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_sample_drift_is_negative_neuron_gradient() {
        let model = NetModel::new(small_cfg(), 2).unwrap();
        let mut rng = stream(2, Purpose::Probe, 0, 0);
        let mut z = vec![0.0; 10];
        fill_std_normal(&mut rng, &mut z);
        let batch = Batch {
            z: PointSet::new(z.clone(), 10).unwrap(),
            y: vec![1.0],
        };
        let mut cs = vec![0.0; 12];
        fill_std_normal(&mut rng, &mut cs);
        cs[11] = 0.0;
        let mut x = vec![0.0; 12];
        fill_std_normal(&mut rng, &mut x);
        x[10] = 5.0;
        let mut out = vec![0.0; 12];
        model.drift_with_batch(std::iter::once(cs.as_slice()), 1, &x, &batch, &mut out);
        let mut g = vec![0.0; 12];
        neuron_grad(&z, &x, 1e3, &mut g);
        for j in 0..12 {
            assert!((out[j] + g[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn student_equal_to_teacher_has_zero_test_loss() {
        let mut cfg = small_cfg();
        cfg.label_noise_variance = 0.0;
        let model = NetModel::new(cfg, 3).unwrap();
        let student = model.teacher().neurons.clone();
        assert!(model.test_loss(&student) < 1e-6);
    }

    #[test]
    fn zero_student_loss_is_half_mean_square_label() {
        let model = NetModel::new(small_cfg(), 4).unwrap();
        let student = PointSet::zeros(8, 12);
        let want = model.test_set().y.iter().map(|y| 0.5 * y * y).sum::<f64>() / 200.0;
        assert!((model.test_loss(&student) - want).abs() < 1e-14);
    }

    #[test]
    fn test_loss_is_permutation_invariant() {
        let model = NetModel::new(small_cfg(), 5).unwrap();
        let mut rng = stream(5, Purpose::Init, 0, 0);
        let mut data = vec![0.0; 6 * 12];
        fill_std_normal(&mut rng, &mut data);
        let a = PointSet::new(data, 12).unwrap();
        let b = a.select(&[3, 1, 5, 0, 2, 4]);
        assert!((model.test_loss(&a) - model.test_loss(&b)).abs() < 1e-12);
    }

    #[test]
    fn covariates_lie_on_sphere() {
        let model = NetModel::new(small_cfg(), 6).unwrap();
        for z in model.test_set().z.rows() {
            assert!((sq_norm(z) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn drift_matches_scaled_batch_loss_gradient() {
        let mut cfg = small_cfg();
        cfg.clip = 2.0;
        let model = NetModel::new(cfg, 7).unwrap();
        let mut rng = stream(7, Purpose::Init, 0, 0);
        let n = 6;
        let mut data = vec![0.0; n * 12];
        fill_std_normal(&mut rng, &mut data);
        let pts = PointSet::new(data, 12).unwrap();
        let batch = model.sample_batch(16, &mut rng);
        for i in 0..n {
            let mut d = vec![0.0; 12];
            model.drift_with_batch(pts.rows(), n, pts.row(i), &batch, &mut d);
            let fd = finite_difference(pts.row(i), 1e-6, |xi| {
                let mut p = pts.clone();
                p.row_mut(i).copy_from_slice(xi);
                model.batch_loss(&p, &batch)
            });
            for j in 0..12 {
                let want = n as f64 * fd[j];
                assert!((d[j] - want).abs() <= 1e-4 * want.abs().max(1e-3), "{i} {j}: {} vs {want}", d[j]);
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = NetModel::new(small_cfg(), 9).unwrap();
        let b = NetModel::new(small_cfg(), 9).unwrap();
        assert_eq!(a.teacher(), b.teacher());
        assert_eq!(a.test_set(), b.test_set());
    }
}
