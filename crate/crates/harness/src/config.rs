//! Experiment configuration.
//!
//! A config file is TOML: top-level keys for the run grid and dotted
//! sections (`[strategy]`, `[kernel]`, `[mfld]`, `[objective.net]`, ...) for
//! the rest. Every key is optional; missing keys take the per-experiment
//! defaults from [`ExperimentConfig::defaults`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thinned_mfld::dynamics::Init;
use thinned_mfld::kernels::KernelSpec;
use thinned_mfld::mfg::{MfgConfig, TerminalCoupling};
use thinned_mfld::objectives::{Covariates, GaussianMixture, NetConfig};
use thinned_mfld::points::PointSet;
use thinned_mfld::thinning::{is_power_of_four, FailureProb};

use crate::cost::Method;
use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Quantize,
    Teach,
    Pro,
    Mfg,
    ThinBench,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Quantize,
        Experiment::Teach,
        Experiment::Pro,
        Experiment::Mfg,
        Experiment::ThinBench,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Quantize => "quantize",
            Experiment::Teach => "teach",
            Experiment::Pro => "pro",
            Experiment::Mfg => "mfg",
            Experiment::ThinBench => "thin-bench",
        }
    }

    /// The objective each experiment optimizes, as named under `objective.name`.
    fn objective_name(self) -> Option<&'static str> {
        match self {
            Experiment::Quantize | Experiment::ThinBench => Some("mmd"),
            Experiment::Teach => Some("net"),
            Experiment::Pro => Some("pro"),
            Experiment::Mfg => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment {s:?}")))
    }
}

/// What a thin-bench row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMetric {
    /// `|mean f - coreset mean f|` for `f = k(0, .)` on standard-normal points.
    IntegrationError,
    /// Mean squared gap between the full and thinned MMD drift, averaged
    /// over `reps` coreset draws.
    DriftDiscrepancy,
}

impl BenchMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMetric::IntegrationError => "integration_error",
            BenchMetric::DriftDiscrepancy => "drift_mean_sq",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub ns: Vec<usize>,
    /// Dimension of the benchmark point clouds.
    pub dim: usize,
    pub methods: Vec<Method>,
    pub metric: BenchMetric,
    pub reps: u64,
}

/// Dataset used by the PrO experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProOptions {
    /// Seed for the synthetic observations, shared by every run seed.
    pub data_seed: u64,
    pub intrinsic_noise: bool,
    pub measurement_noise: bool,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub method: Method,
    pub n: usize,
    /// MFLD iterations, or sweeps for the MFG experiment.
    pub iterations: u64,
    pub g: u32,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Extra recording every this many iterations (0: cost checkpoints only).
    pub record_every: u64,
    /// Resolution of the geometric grid of cost checkpoints.
    pub checkpoints_per_octave: u32,
    pub delta: FailureProb<f64>,
    pub rbm_batch: Option<usize>,
    /// Kernel used by the thinning stage.
    pub kernel: KernelSpec<f64>,
    pub step_size: f64,
    pub noise: f64,
    pub confinement: f64,
    pub init: Init<f64>,
    pub mmd_target: GaussianMixture<f64>,
    pub net: NetConfig<f64>,
    pub pro: ProOptions,
    /// Template whose `n`, `strategy`, `sweeps` and `seed` are filled per run.
    pub mfg: MfgConfig<f64>,
    pub bench: BenchOptions,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let gaussian = KernelSpec::Gaussian { lengthscale: 1.0 };
        let sobolev = KernelSpec::sobolev(&[1, 2, 3]).expect("orders 1..=3 are valid");
        let mut cfg = Self {
            experiment,
            method: Method::Kt1,
            n: 1024,
            iterations: 200,
            g: 0,
            seeds: (0..20).collect(),
            out: None,
            record_every: 0,
            checkpoints_per_octave: 1,
            delta: FailureProb::Fixed(0.5),
            rbm_batch: None,
            kernel: gaussian,
            step_size: 1.0,
            noise: 1e-3,
            confinement: 1e-4,
            init: Init::standard_normal(),
            mmd_target: GaussianMixture::four_corners(),
            net: NetConfig::default(),
            pro: ProOptions {
                data_seed: 0,
                intrinsic_noise: true,
                measurement_noise: true,
            },
            mfg: MfgConfig {
                n: 1024,
                ..MfgConfig::default()
            },
            bench: BenchOptions {
                ns: vec![1024, 4096],
                dim: 2,
                methods: vec![Method::Kt1, Method::Random],
                metric: BenchMetric::IntegrationError,
                reps: 50,
            },
        };
        match experiment {
            Experiment::Quantize | Experiment::ThinBench => {}
            Experiment::Teach => {
                cfg.iterations = 800;
                cfg.step_size = 0.01;
                cfg.kernel = sobolev;
                cfg.init = Init::Gaussian { mean: 0.0, variance: 0.05 };
            }
            Experiment::Pro => {
                cfg.n = 256;
                cfg.iterations = 100;
                cfg.step_size = 0.1;
                cfg.confinement = 0.1;
                cfg.kernel = sobolev;
                cfg.init = Init::Gaussian { mean: 0.0, variance: 0.1 };
            }
            Experiment::Mfg => {
                cfg.iterations = cfg.mfg.sweeps as u64;
            }
        }
        if experiment == Experiment::ThinBench {
            cfg.seeds = (0..50).collect();
        }
        cfg
    }

    /// Reads a config file. The experiment comes from the file's
    /// `experiment` key unless `experiment` is given, in which case the two
    /// must agree.
    pub fn from_path(path: &Path, experiment: Option<Experiment>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let file: ConfigFile = toml::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            source: Box::new(e),
        })?;
        Self::from_file(file, experiment)
    }

    pub fn from_toml_str(text: &str, experiment: Option<Experiment>) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: PathBuf::from("<inline>"),
            source: Box::new(e),
        })?;
        Self::from_file(file, experiment)
    }

    fn from_file(file: ConfigFile, experiment: Option<Experiment>) -> Result<Self> {
        let experiment = match (file.experiment, experiment) {
            (Some(a), Some(b)) if a != b => {
                return Err(HarnessError::Config(format!(
                    "config is for experiment {a} but {b} was requested"
                )))
            }
            (Some(e), _) | (None, Some(e)) => e,
            (None, None) => return Err(HarnessError::Config("no experiment given".into())),
        };
        let mut cfg = Self::defaults(experiment);
        cfg.apply(file)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, file: ConfigFile) -> Result<()> {
        if let Some(n) = file.n {
            self.n = n;
            self.mfg.n = n;
        }
        if let Some(seeds) = file.seeds {
            self.seeds = seeds.resolve()?;
        }
        self.out = file.out.or(self.out.take());
        set(&mut self.record_every, file.record_every);
        set(&mut self.checkpoints_per_octave, file.checkpoints_per_octave);

        let s = file.strategy;
        set(&mut self.method, s.variant);
        set(&mut self.g, s.g);
        if let Some(d) = s.delta {
            self.delta = d.resolve()?;
        }
        self.rbm_batch = s.p.or(self.rbm_batch);

        if let Some(k) = file.kernel.resolve()? {
            self.kernel = k;
        }

        let m = file.mfld;
        set(&mut self.step_size, m.step_size);
        set(&mut self.noise, m.noise);
        set(&mut self.confinement, m.confinement);
        if let Some(init) = m.init {
            self.init = init.resolve()?;
        }

        let o = file.objective;
        if let Some(name) = &o.name {
            if Some(name.as_str()) != self.experiment.objective_name() {
                return Err(HarnessError::Config(format!(
                    "objective {name:?} does not belong to experiment {}",
                    self.experiment
                )));
            }
        }
        if let Some(t) = o.mmd.resolve()? {
            self.mmd_target = t;
        }
        o.net.apply(&mut self.net)?;
        let p = o.pro;
        set(&mut self.pro.data_seed, p.data_seed);
        set(&mut self.pro.intrinsic_noise, p.intrinsic_noise);
        set(&mut self.pro.measurement_noise, p.measurement_noise);

        file.mfg.apply(&mut self.mfg)?;
        if self.experiment == Experiment::Mfg {
            self.iterations = self.mfg.sweeps as u64;
        }
        set(&mut self.iterations, file.iterations);

        let b = file.bench;
        if let Some(ns) = b.ns {
            self.bench.ns = ns;
        }
        if let Some(ms) = b.methods {
            self.bench.methods = ms;
        }
        set(&mut self.bench.dim, b.dim);
        set(&mut self.bench.metric, b.metric);
        set(&mut self.bench.reps, b.reps);
        Ok(())
    }

    /// Applies command-line overrides and revalidates.
    pub fn override_with(&mut self, o: &Overrides) -> Result<()> {
        if let Some(n) = o.n {
            self.n = n;
            self.mfg.n = n;
            if self.experiment == Experiment::ThinBench {
                self.bench.ns = vec![n];
            }
        }
        if let Some(m) = o.method {
            self.method = m;
            if self.experiment == Experiment::ThinBench {
                self.bench.methods = vec![m];
            }
        }
        set(&mut self.g, o.g);
        set(&mut self.iterations, o.iterations);
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        self.validate()
    }

    /// Methods this config runs: the bench list for thin-bench, else the
    /// single configured method.
    pub fn methods(&self) -> Vec<Method> {
        match self.experiment {
            Experiment::ThinBench => self.bench.methods.clone(),
            _ => vec![self.method],
        }
    }

    fn particle_counts(&self) -> Vec<usize> {
        match self.experiment {
            Experiment::ThinBench => self.bench.ns.clone(),
            _ => vec![self.n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.checkpoints_per_octave == 0 {
            return bad("checkpoints_per_octave must be positive".into());
        }
        let methods = self.methods();
        if methods.is_empty() {
            return bad("no methods to run".into());
        }
        for &n in &self.particle_counts() {
            if n == 0 {
                return bad("N must be positive".into());
            }
            for &m in &methods {
                if m.is_kernel_thinning() && !is_power_of_four(n) {
                    return bad(format!("method {m} needs N to be a power of 4, got N = {n}"));
                }
                m.strategy(n, self.g, self.kernel, self.delta, self.rbm_batch)
                    .validate(n)?;
            }
        }
        match self.experiment {
            Experiment::Mfg => {
                if self.method == Method::Rbm {
                    return bad("random batches are not defined for the MFG experiment".into());
                }
                let mut probe = self.mfg.clone();
                probe.n = self.n;
                probe.validate()?;
            }
            Experiment::Teach | Experiment::Pro | Experiment::Quantize => {
                if self.step_size.is_nan() || self.step_size <= 0.0 || self.noise < 0.0 || self.confinement < 0.0 {
                    return bad("step size must be positive and noise/confinement nonnegative".into());
                }
            }
            Experiment::ThinBench => {
                if self.bench.dim == 0 {
                    return bad("bench.dim must be positive".into());
                }
                match self.bench.metric {
                    BenchMetric::DriftDiscrepancy if self.bench.reps == 0 => {
                        return bad("drift discrepancy needs at least one repetition".into());
                    }
                    BenchMetric::IntegrationError if methods.contains(&Method::Rbm) => {
                        return bad("random batches select no coreset, so they have no integration error".into());
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Command-line overrides of a config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub n: Option<usize>,
    pub method: Option<Method>,
    pub g: Option<u32>,
    pub iterations: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
}

/// Parses `a..b` (end exclusive), `a..=b`, a comma-separated list or a
/// single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || HarnessError::Config(format!("cannot parse seeds {s:?}; use a..b, a..=b or a,b,c"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(HarnessError::Config(format!("seed range {s:?} is empty")));
    }
    Ok(seeds)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    experiment: Option<Experiment>,
    n: Option<usize>,
    iterations: Option<u64>,
    seeds: Option<SeedsValue>,
    out: Option<PathBuf>,
    record_every: Option<u64>,
    checkpoints_per_octave: Option<u32>,
    strategy: StrategySection,
    kernel: KernelSection,
    mfld: MfldSection,
    objective: ObjectiveSection,
    mfg: MfgSection,
    bench: BenchSection,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SeedsValue {
    Range(String),
    List(Vec<u64>),
}

impl SeedsValue {
    fn resolve(self) -> Result<Vec<u64>> {
        match self {
            SeedsValue::Range(s) => parse_seeds(&s),
            SeedsValue::List(v) if v.is_empty() => Err(HarnessError::Config("seed list is empty".into())),
            SeedsValue::List(v) => Ok(v),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DeltaValue {
    Fixed(f64),
    Named(String),
}

impl DeltaValue {
    fn resolve(self) -> Result<FailureProb<f64>> {
        match self {
            DeltaValue::Fixed(d) if d > 0.0 && d < 1.0 => Ok(FailureProb::Fixed(d)),
            DeltaValue::Fixed(d) => Err(HarnessError::Config(format!("strategy.delta must lie in (0, 1), got {d}"))),
            DeltaValue::Named(s) if s == "log-cubed" => Ok(FailureProb::LogCubedOverN),
            DeltaValue::Named(s) => Err(HarnessError::Config(format!(
                "strategy.delta must be a number or \"log-cubed\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StrategySection {
    variant: Option<Method>,
    g: Option<u32>,
    delta: Option<DeltaValue>,
    p: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct KernelSection {
    variant: Option<String>,
    lengthscale: Option<f64>,
    orders: Option<Vec<u8>>,
}

impl KernelSection {
    fn resolve(self) -> Result<Option<KernelSpec<f64>>> {
        let variant = match (&self.variant, self.lengthscale, &self.orders) {
            (None, None, None) => return Ok(None),
            (Some(v), _, _) => v.as_str(),
            (None, Some(_), _) => "gaussian",
            (None, None, Some(_)) => "sobolev",
        };
        let k = match variant {
            "gaussian" => KernelSpec::gaussian(self.lengthscale.unwrap_or(1.0))?,
            "sobolev" => KernelSpec::sobolev(self.orders.as_deref().unwrap_or(&[1, 2, 3]))?,
            other => {
                return Err(HarnessError::Config(format!(
                    "kernel.variant must be gaussian or sobolev, got {other:?}"
                )))
            }
        };
        Ok(Some(k))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InitSection {
    variant: Option<String>,
    mean: Option<f64>,
    variance: Option<f64>,
    components: Option<usize>,
    radius: Option<f64>,
    std: Option<f64>,
}

impl InitSection {
    fn resolve(self) -> Result<Init<f64>> {
        match self.variant.as_deref().unwrap_or("gaussian") {
            "gaussian" => Ok(Init::Gaussian {
                mean: self.mean.unwrap_or(0.0),
                variance: self.variance.unwrap_or(1.0),
            }),
            "circle" => Ok(Init::CircleMixture {
                components: self.components.unwrap_or(8),
                radius: self.radius.unwrap_or(2.0),
                std: self.std.unwrap_or(0.1),
            }),
            other => Err(HarnessError::Config(format!("init.variant must be gaussian or circle, got {other:?}"))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MfldSection {
    step_size: Option<f64>,
    noise: Option<f64>,
    confinement: Option<f64>,
    init: Option<InitSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ObjectiveSection {
    name: Option<String>,
    mmd: MmdSection,
    net: NetSection,
    pro: ProSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MmdSection {
    weights: Option<Vec<f64>>,
    means: Option<Vec<Vec<f64>>>,
    stds: Option<Vec<f64>>,
}

impl MmdSection {
    fn resolve(self) -> Result<Option<GaussianMixture<f64>>> {
        match (self.weights, self.means, self.stds) {
            (None, None, None) => Ok(None),
            (w, Some(means), Some(stds)) => {
                let k = means.len();
                let weights = w.unwrap_or_else(|| vec![1.0 / k as f64; k]);
                let means = PointSet::from_rows(&means)?;
                Ok(Some(GaussianMixture::new(weights, means, stds)?))
            }
            _ => Err(HarnessError::Config(
                "objective.mmd needs both means and stds (weights default to uniform)".into(),
            )),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct NetSection {
    d_z: Option<usize>,
    n_teacher: Option<usize>,
    n_modes: Option<usize>,
    mode_variance: Option<f64>,
    neuron_variance: Option<f64>,
    weight_scale: Option<f64>,
    clip: Option<f64>,
    batch: Option<usize>,
    label_noise_variance: Option<f64>,
    /// `"sphere"` or a positive variance for Gaussian covariates.
    covariates: Option<CovariatesValue>,
    n_test: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CovariatesValue {
    Named(String),
    Variance(f64),
}

impl NetSection {
    fn apply(self, net: &mut NetConfig<f64>) -> Result<()> {
        set(&mut net.d_z, self.d_z);
        set(&mut net.n_teacher, self.n_teacher);
        set(&mut net.n_modes, self.n_modes);
        set(&mut net.mode_variance, self.mode_variance);
        set(&mut net.neuron_variance, self.neuron_variance);
        set(&mut net.weight_scale, self.weight_scale);
        set(&mut net.clip, self.clip);
        set(&mut net.batch, self.batch);
        set(&mut net.label_noise_variance, self.label_noise_variance);
        set(&mut net.n_test, self.n_test);
        match self.covariates {
            None => {}
            Some(CovariatesValue::Named(s)) if s == "sphere" => net.covariates = Covariates::Sphere,
            Some(CovariatesValue::Variance(v)) if v > 0.0 => net.covariates = Covariates::Gaussian { variance: v },
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "objective.net.covariates must be \"sphere\" or a positive variance, got {other:?}"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProSection {
    data_seed: Option<u64>,
    intrinsic_noise: Option<bool>,
    measurement_noise: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MfgSection {
    dim: Option<usize>,
    dt: Option<f64>,
    horizon: Option<f64>,
    terminal_weight: Option<f64>,
    target: Option<Vec<f64>>,
    /// `"gaussian"` (with `lengthscale`) or `"none"`.
    interaction: Option<String>,
    lengthscale: Option<f64>,
    sweeps: Option<usize>,
    risk_subset: Option<usize>,
    risk_every: Option<usize>,
    damping: Option<f64>,
    /// `"implicit"` or `"explicit"`.
    terminal: Option<String>,
    init: Option<InitSection>,
}

impl MfgSection {
    fn apply(self, m: &mut MfgConfig<f64>) -> Result<()> {
        if let Some(d) = self.dim {
            m.dim = d;
            if self.target.is_none() {
                m.target = vec![0.0; d];
            }
        }
        set(&mut m.dt, self.dt);
        set(&mut m.horizon, self.horizon);
        set(&mut m.terminal_weight, self.terminal_weight);
        set(&mut m.target, self.target);
        match self.interaction.as_deref() {
            None => {
                if let Some(l) = self.lengthscale {
                    m.interaction = Some(KernelSpec::gaussian(l)?);
                }
            }
            Some("gaussian") => m.interaction = Some(KernelSpec::gaussian(self.lengthscale.unwrap_or(1.0))?),
            Some("none") => m.interaction = None,
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "mfg.interaction must be gaussian or none, got {other:?}"
                )))
            }
        }
        set(&mut m.sweeps, self.sweeps);
        set(&mut m.risk_subset, self.risk_subset);
        set(&mut m.risk_every, self.risk_every);
        set(&mut m.damping, self.damping);
        match self.terminal.as_deref() {
            None => {}
            Some("implicit") => m.terminal = TerminalCoupling::Implicit,
            Some("explicit") => m.terminal = TerminalCoupling::Explicit,
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "mfg.terminal must be implicit or explicit, got {other:?}"
                )))
            }
        }
        if let Some(init) = self.init {
            m.init = init.resolve()?;
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchSection {
    ns: Option<Vec<usize>>,
    dim: Option<usize>,
    methods: Option<Vec<Method>>,
    metric: Option<BenchMetric>,
    reps: Option<u64>,
}
