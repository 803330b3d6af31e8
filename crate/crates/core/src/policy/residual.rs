//! Residual policies on top of a frozen base, trained by dual-teacher
//! distillation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{batch_from_rows, Adam, NnError, PolicyNet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DistillError {
    #[error("sample {0} carries no regime tag")]
    UntaggedSample(usize),
    #[error("sample {0} has no recorded teacher label")]
    MissingLabel(usize),
    #[error("invalid distillation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Which data regime a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Interface (teleoperation) data.
    Adapt,
    /// The general motion bank.
    General,
}

/// Who drives the environment while distillation data is collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutSource {
    #[default]
    Student,
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub w_adapt: f64,
    pub w_general: f64,
    pub batch_size: usize,
    /// Fraction of each batch drawn from adaptation data.
    pub adapt_fraction: f64,
    pub hidden: Vec<usize>,
    pub output_gain: f64,
    pub learning_rate: f64,
    pub rollout: RolloutSource,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            w_adapt: 1.0,
            w_general: 1.0,
            batch_size: 256,
            adapt_fraction: 0.5,
            hidden: vec![64, 32, 16],
            output_gain: 0.01,
            learning_rate: 1e-3,
            rollout: RolloutSource::Student,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        let bad = |m: &str| Err(DistillError::InvalidConfig(m.into()));
        if self.w_adapt < 0.0 || self.w_general < 0.0 || !(self.w_adapt + self.w_general > 0.0) {
            return bad("regime weights must be non-negative and not both zero");
        }
        if !(0.0..=1.0).contains(&self.adapt_fraction) {
            return bad("adapt_fraction must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    pub fn weight(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Adapt => self.w_adapt,
            Regime::General => self.w_general,
        }
    }
}

/// Residual network: standard hidden weights, output weights Xavier-uniform
/// scaled by `gain`, every bias exactly zero.
pub fn init_residual<R: Rng + ?Sized>(widths: &[usize], gain: f64, rng: &mut R) -> Result<PolicyNet<f64>, NnError> {
    let mut net = PolicyNet::init(widths, false, 1.0, rng)?;
    let last = net.layers() - 1;
    net.init_xavier_layer(last, gain, rng);
    for l in 0..last {
        let (_, b) = net.layer_ranges(l);
        net.params_mut()[b].iter_mut().for_each(|x| *x = 0.0);
    }
    Ok(net)
}

/// `base(obs) + residual(obs)`.
pub fn compose(base: &PolicyNet<f64>, residual: &PolicyNet<f64>, obs: &[f64]) -> Result<Vec<f64>, NnError> {
    if base.output_dim() != residual.output_dim() {
        return Err(NnError::DimensionMismatch { what: "residual action width", expected: base.output_dim(), found: residual.output_dim() });
    }
    let mut a = base.forward(obs)?;
    for (x, r) in a.iter_mut().zip(residual.forward(obs)?) {
        *x += r;
    }
    Ok(a)
}

/// One observation for distillation. `label` holds an action recorded from
/// a teacher at collection time (for teachers that see more than `obs`).
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSample {
    pub obs: Vec<f64>,
    pub regime: Option<Regime>,
    pub label: Option<Vec<f64>>,
}

pub trait Teacher {
    fn teach(&self, sample: &DistillSample, index: usize) -> Result<Vec<f64>, DistillError>;
}

impl Teacher for PolicyNet<f64> {
    fn teach(&self, s: &DistillSample, _: usize) -> Result<Vec<f64>, DistillError> {
        Ok(self.forward(&s.obs)?)
    }
}

/// Teacher whose actions were recorded into each sample's `label`.
pub struct RecordedTeacher;

impl Teacher for RecordedTeacher {
    fn teach(&self, s: &DistillSample, index: usize) -> Result<Vec<f64>, DistillError> {
        s.label.clone().ok_or(DistillError::MissingLabel(index))
    }
}

pub struct Teachers<'a> {
    pub adapt: &'a dyn Teacher,
    pub general: &'a dyn Teacher,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutput {
    pub loss: f64,
    /// Per-regime mean squared error, `[adapt, general]`.
    pub regime_mse: [f64; 2],
    /// Gradient with respect to the residual parameters only.
    pub grads: Vec<f64>,
}

/// `L = sum_k w_k E_k[|base + residual - teacher_k|^2]` and its gradient
/// with respect to the residual. The base is only read.
pub fn distill_step(
    base: &PolicyNet<f64>,
    residual: &PolicyNet<f64>,
    teachers: &Teachers<'_>,
    batch: &[DistillSample],
    cfg: &DistillConfig,
) -> Result<DistillOutput, DistillError> {
    let mut counts = [0usize; 2];
    let mut targets = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        let regime = s.regime.ok_or(DistillError::UntaggedSample(i))?;
        let t = match regime {
            Regime::Adapt => teachers.adapt.teach(s, i)?,
            Regime::General => teachers.general.teach(s, i)?,
        };
        counts[regime as usize] += 1;
        targets.push((regime, t));
    }
    let obs = batch_from_rows(&batch.iter().map(|s| s.obs.clone()).collect::<Vec<_>>());
    let base_out = base.forward_batch(&obs)?.output().clone();
    let cache = residual.forward_batch(&obs)?;
    let res_out = cache.output();
    if base_out.nrows() != res_out.nrows() {
        return Err(NnError::DimensionMismatch { what: "residual action width", expected: base_out.nrows(), found: res_out.nrows() }.into());
    }
    let mut dout = res_out.clone() * 0.0;
    let mut sse = [0.0; 2];
    for (c, (regime, t)) in targets.iter().enumerate() {
        let k = *regime as usize;
        let scale = cfg.weight(*regime) / counts[k] as f64;
        if t.len() != base_out.nrows() {
            return Err(NnError::DimensionMismatch { what: "teacher action width", expected: base_out.nrows(), found: t.len() }.into());
        }
        for j in 0..t.len() {
            let e = base_out[(j, c)] + res_out[(j, c)] - t[j];
            sse[k] += e * e;
            dout[(j, c)] = 2.0 * scale * e;
        }
    }
    let mse = [0, 1].map(|k| if counts[k] > 0 { sse[k] / counts[k] as f64 } else { 0.0 });
    let loss = cfg.w_adapt * mse[0] + cfg.w_general * mse[1];
    let grads = residual.backward(&cache, &dout)?;
    Ok(DistillOutput { loss, regime_mse: mse, grads })
}

/// Residual with its optimizer.
#[derive(Debug, Clone)]
pub struct Distiller {
    pub residual: PolicyNet<f64>,
    pub cfg: DistillConfig,
    opt: Adam<f64>,
}

impl Distiller {
    pub fn new<R: Rng + ?Sized>(input: usize, actions: usize, cfg: DistillConfig, rng: &mut R) -> Result<Self, DistillError> {
        cfg.validate()?;
        let mut widths = vec![input];
        widths.extend_from_slice(&cfg.hidden);
        widths.push(actions);
        let residual = init_residual(&widths, cfg.output_gain, rng)?;
        Ok(Self { opt: Adam::new(residual.num_params(), cfg.learning_rate), residual, cfg })
    }

    pub fn from_residual(residual: PolicyNet<f64>, cfg: DistillConfig) -> Result<Self, DistillError> {
        cfg.validate()?;
        Ok(Self { opt: Adam::new(residual.num_params(), cfg.learning_rate), residual, cfg })
    }

    pub fn step(&mut self, base: &PolicyNet<f64>, teachers: &Teachers<'_>, batch: &[DistillSample]) -> Result<f64, DistillError> {
        let out = distill_step(base, &self.residual, teachers, batch, &self.cfg)?;
        self.opt.lr = self.cfg.learning_rate;
        self.opt.step(self.residual.params_mut(), &out.grads);
        Ok(out.loss)
    }
}
