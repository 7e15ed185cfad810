//! Binary classifiers over feature vectors and the evaluation protocols.

mod svm;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

pub use svm::{scale_gamma, Kernel, SvmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    MaxMarginRbf,
    MaxMarginLinear,
    NearestCentroid,
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::MaxMarginRbf => "max_margin_rbf",
            ClassifierKind::MaxMarginLinear => "max_margin_linear",
            ClassifierKind::NearestCentroid => "nearest_centroid",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_margin_rbf" | "rbf" => Ok(ClassifierKind::MaxMarginRbf),
            "max_margin_linear" | "linear" => Ok(ClassifierKind::MaxMarginLinear),
            "nearest_centroid" | "centroid" => Ok(ClassifierKind::NearestCentroid),
            other => Err(Error::InvalidConfig(format!(
                "unknown classifier kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub regularization: f64,
    /// Carried into reports. Every bundled classifier trains deterministically.
    pub rng_seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            kind: ClassifierKind::MaxMarginRbf,
            regularization: 1.0,
            rng_seed: 0,
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization > 0.0 && self.regularization.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "regularization must be positive, got {}",
                self.regularization
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Svm(SvmModel),
    Centroid { hc: Vec<f64>, ad: Vec<f64> },
}

impl Model {
    /// Positive values lean AD, negative lean HC.
    pub fn decision(&self, x: &[f64]) -> f64 {
        match self {
            Model::Svm(m) => m.decision(x),
            Model::Centroid { hc, ad } => sq_dist(x, hc) - sq_dist(x, ad),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Svm(m) => m.support.first().map_or(0, Vec::len),
            Model::Centroid { hc, .. } => hc.len(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(if self.decision(x) > 0.0 {
            Label::Ad
        } else {
            Label::Hc
        })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn centroid(rows: &[&[f64]]) -> Vec<f64> {
    let mut c = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in c.iter_mut().zip(*r) {
            *a += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= rows.len() as f64);
    c
}

pub fn train(features: &[(Vec<f64>, Label)], spec: &ClassifierSpec) -> Result<Model> {
    spec.validate()?;
    let dim = features.first().map_or(0, |(v, _)| v.len());
    if let Some((v, _)) = features.iter().find(|(v, _)| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    let has = |l: Label| features.iter().any(|(_, x)| *x == l);
    if !has(Label::Hc) || !has(Label::Ad) {
        return Err(Error::SingleClass);
    }
    match spec.kind {
        ClassifierKind::NearestCentroid => {
            let rows = |l: Label| {
                features
                    .iter()
                    .filter(|(_, x)| *x == l)
                    .map(|(v, _)| v.as_slice())
                    .collect::<Vec<_>>()
            };
            Ok(Model::Centroid {
                hc: centroid(&rows(Label::Hc)),
                ad: centroid(&rows(Label::Ad)),
            })
        }
        kind => {
            let x: Vec<Vec<f64>> = features.iter().map(|(v, _)| v.clone()).collect();
            let y: Vec<f64> = features.iter().map(|(_, l)| l.sign()).collect();
            let kernel = match kind {
                ClassifierKind::MaxMarginLinear => Kernel::Linear,
                _ => Kernel::Rbf {
                    gamma: scale_gamma(&x),
                },
            };
            Ok(Model::Svm(svm::train_svm(
                &x,
                &y,
                spec.regularization,
                kernel,
            )))
        }
    }
}

pub fn accuracy(model: &Model, features: &[(Vec<f64>, Label)]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptySet("evaluation set"));
    }
    let mut correct = 0usize;
    for (v, l) in features {
        if model.predict(v)? == *l {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub k: usize,
    pub test_per_class: usize,
    pub rounds: usize,
    pub rng_seed: u64,
}

impl FewShotConfig {
    pub fn new(k: usize) -> Self {
        FewShotConfig {
            k,
            test_per_class: 15,
            rounds: 600,
            rng_seed: 0,
        }
    }

    pub fn check_feasible(&self, labels: &[Label]) -> Result<()> {
        if self.k == 0 || self.test_per_class == 0 || self.rounds == 0 {
            return Err(Error::InfeasibleConfig(format!(
                "k, test_per_class and rounds must be positive (k={}, test={}, rounds={})",
                self.k, self.test_per_class, self.rounds
            )));
        }
        for label in Label::ALL {
            let n = labels.iter().filter(|l| **l == label).count();
            if n < self.k + self.test_per_class {
                return Err(Error::InfeasibleConfig(format!(
                    "{} has {n} samples, need {} train + {} test",
                    label.as_str(),
                    self.k,
                    self.test_per_class
                )));
            }
        }
        Ok(())
    }
}

/// One round of the few-shot protocol, as indices into the feature list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Episode {
    pub round: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws round `round`. Each round has its own stream of the master seed, so
/// rounds can be drawn in any order.
pub fn sample_episode(labels: &[Label], config: &FewShotConfig, round: usize) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(round as u64);
    let mut train = Vec::with_capacity(2 * config.k);
    let mut test = Vec::with_capacity(2 * config.test_per_class);
    for label in Label::ALL {
        let pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        let picked =
            rand::seq::index::sample(&mut rng, pool.len(), config.k + config.test_per_class);
        for (n, p) in picked.iter().enumerate() {
            if n < config.k {
                train.push(pool[p]);
            } else {
                test.push(pool[p]);
            }
        }
    }
    Episode { round, train, test }
}

pub fn sample_episodes(labels: &[Label], config: &FewShotConfig) -> Result<Vec<Episode>> {
    config.check_feasible(labels)?;
    Ok((0..config.rounds)
        .map(|r| sample_episode(labels, config, r))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_round_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub config: FewShotConfig,
    pub pipeline_id: String,
}

impl EvalReport {
    pub fn from_rounds(
        per_round_accuracy: Vec<f64>,
        config: FewShotConfig,
        pipeline_id: &str,
    ) -> Self {
        let (mean, std) = mean_std(&per_round_accuracy);
        EvalReport {
            per_round_accuracy,
            mean,
            std,
            config,
            pipeline_id: pipeline_id.to_string(),
        }
    }

    /// Percent mean and std joined by an underscore, e.g. `79.91_7.05`.
    pub fn mean_std_cell(&self) -> String {
        format!("{:.2}_{:.2}", self.mean * 100.0, self.std * 100.0)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn pick(features: &[Vec<f64>], labels: &[Label], idx: &[usize]) -> Vec<(Vec<f64>, Label)> {
    idx.iter()
        .map(|&i| (features[i].clone(), labels[i]))
        .collect()
}

pub fn few_shot_evaluate(
    features: &[Vec<f64>],
    labels: &[Label],
    config: &FewShotConfig,
    spec: &ClassifierSpec,
    pipeline_id: &str,
) -> Result<EvalReport> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: features.len(),
        });
    }
    few_shot_evaluate_with(labels, config, spec, pipeline_id, |_| Ok(features.to_vec()))
}

/// Like [`few_shot_evaluate`], but features are rebuilt for every episode, so
/// a pipeline can fit its own parameters on the training ids only.
pub fn few_shot_evaluate_with<F>(
    labels: &[Label],
    config: &FewShotConfig,
    spec: &ClassifierSpec,
    pipeline_id: &str,
    features_for: F,
) -> Result<EvalReport>
where
    F: Fn(&Episode) -> Result<Vec<Vec<f64>>> + Sync,
{
    spec.validate()?;
    config.check_feasible(labels)?;
    let accs = (0..config.rounds)
        .into_par_iter()
        .map(|r| {
            let ep = sample_episode(labels, config, r);
            let features = features_for(&ep)?;
            let model = train(&pick(&features, labels, &ep.train), spec)?;
            accuracy(&model, &pick(&features, labels, &ep.test))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalReport::from_rounds(accs, *config, pipeline_id))
}

pub fn fixed_split_evaluate(
    train_set: &[(Vec<f64>, Label)],
    test_set: &[(Vec<f64>, Label)],
    spec: &ClassifierSpec,
) -> Result<f64> {
    if train_set.is_empty() {
        return Err(Error::EmptySet("training split"));
    }
    if test_set.is_empty() {
        return Err(Error::EmptySet("test split"));
    }
    let model = train(train_set, spec)?;
    accuracy(&model, test_set)
}

/// Welch's two-sample t-test. Returns the statistic and the two-sided p-value.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::EmptySet("t-test sample (need two values)"));
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (
            m,
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64,
        )
    };
    let ((ma, va), (mb, vb)) = (var(a), var(b));
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se = (sa + sb).sqrt();
    if se == 0.0 {
        let p = if ma == mb { 1.0 } else { 0.0 };
        return Ok((
            if ma == mb {
                0.0
            } else {
                f64::INFINITY.copysign(ma - mb)
            },
            p,
        ));
    }
    let t = (ma - mb) / se;
    let df = (sa + sb).powi(2) / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidConfig(format!("t distribution: {e}")))?;
    Ok((t, 2.0 * (1.0 - dist.cdf(t.abs()))))
}
