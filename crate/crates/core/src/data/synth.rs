//! Synthetic bag generator.
//!
//! Each bag draws a latent location `mu ~ U(0,1)` and spread `s ~ U(0.5,1.5)`.
//! Every feature of every instance is `N(mu, s)` plus independent `N(0, noise)`.
//! The label is either `mu` or `s`; in the latter case the bag mean carries no
//! information about the label.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    LatentMean,
    LatentStddev,
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelRule::LatentMean => "latent-mean",
            LabelRule::LatentStddev => "latent-stddev",
        })
    }
}

impl FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent-mean" => Ok(LabelRule::LatentMean),
            "latent-stddev" => Ok(LabelRule::LatentStddev),
            other => Err(Error::Config(format!(
                "unknown label rule `{other}` (expected latent-mean or latent-stddev)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub bags: usize,
    pub instances: usize,
    pub features: usize,
    pub rule: LabelRule,
    pub noise: f64,
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    if spec.bags == 0 || spec.instances == 0 || spec.features == 0 {
        return Err(Error::Config(format!(
            "synthetic spec needs positive bags, instances and features, got {}x{}x{}",
            spec.bags, spec.instances, spec.features
        )));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!(
            "noise must be >= 0, got {}",
            spec.noise
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.bags.to_string().len();
    let mut bags = Vec::with_capacity(spec.bags);
    for i in 0..spec.bags {
        let mu: f64 = rng.random_range(0.0..1.0);
        let s: f64 = rng.random_range(0.5..1.5);
        let n = spec.instances * spec.features;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + s * z + spec.noise * e);
        }
        let label = match spec.rule {
            LabelRule::LatentMean => mu,
            LabelRule::LatentStddev => s,
        };
        let instances = Tensor::matrix(spec.instances, spec.features, data)?;
        bags.push(Bag::new(format!("bag{i:0width$}"), label, instances)?);
    }
    Dataset::new(format!("synthetic-{}", spec.rule), spec.features, bags)
}
