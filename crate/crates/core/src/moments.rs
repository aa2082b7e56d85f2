//! Raw sample moments `(1/L) sum_l x^k` per feature, and dataset augmentation
//! with them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Highest supported order; estimates beyond it need far more instances
/// than real bags carry.
pub const MAX_MOMENT_ORDER: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttachMode {
    /// The bag becomes a single instance holding its moment vector.
    ReplaceBag,
    /// Every instance gets the bag's moment vector appended.
    AppendPerInstance,
}

impl fmt::Display for AttachMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttachMode::ReplaceBag => "replace-bag",
            AttachMode::AppendPerInstance => "append-per-instance",
        })
    }
}

impl FromStr for AttachMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replace-bag" | "replace" => Ok(AttachMode::ReplaceBag),
            "append-per-instance" | "append" => Ok(AttachMode::AppendPerInstance),
            other => Err(Error::Config(format!(
                "unknown attach mode `{other}` (expected replace-bag or append-per-instance)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub max_order: usize,
    pub attach_mode: AttachMode,
}

impl MomentConfig {
    pub fn new(max_order: usize, attach_mode: AttachMode) -> Result<Self> {
        if max_order > MAX_MOMENT_ORDER {
            return Err(Error::Config(format!(
                "moment order {max_order} exceeds the supported maximum {MAX_MOMENT_ORDER}"
            )));
        }
        Ok(Self {
            max_order,
            attach_mode,
        })
    }

    pub fn none() -> Self {
        Self {
            max_order: 0,
            attach_mode: AttachMode::AppendPerInstance,
        }
    }
}

/// Moments of orders `1..=m` for every feature, feature-major:
/// entry `j * m + (k - 1)` is the order-`k` moment of feature `j`.
pub fn raw_moments(bag: &Bag, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Config("moment order must be at least 1".into()));
    }
    let d = bag.feature_count();
    let mut sums = vec![0.0; d * m];
    for row in bag.instances().row_iter() {
        for (j, &x) in row.iter().enumerate() {
            let mut p = 1.0;
            for slot in &mut sums[j * m..(j + 1) * m] {
                p *= x;
                *slot += p;
            }
        }
    }
    let n = bag.len() as f64;
    sums.iter_mut().for_each(|s| *s /= n);
    Ok(sums)
}

pub fn augment_dataset(ds: &Dataset, cfg: &MomentConfig) -> Result<Dataset> {
    if cfg.max_order > MAX_MOMENT_ORDER {
        return Err(Error::Config(format!(
            "moment order {} exceeds {MAX_MOMENT_ORDER}",
            cfg.max_order
        )));
    }
    if cfg.max_order == 0 {
        return Ok(ds.clone());
    }
    let m = cfg.max_order;
    ds.map_bags(|bag| augment_bag(bag, m, cfg.attach_mode))
}

/// Per-instance feature count after [`augment_dataset`] on `d` raw features.
pub fn augmented_feature_count(d: usize, cfg: &MomentConfig) -> usize {
    match (cfg.max_order, cfg.attach_mode) {
        (0, _) => d,
        (m, AttachMode::ReplaceBag) => d * m,
        (m, AttachMode::AppendPerInstance) => d * (1 + m),
    }
}

fn augment_bag(bag: &Bag, m: usize, mode: AttachMode) -> Result<Bag> {
    let moments = raw_moments(bag, m)?;
    match mode {
        AttachMode::ReplaceBag => bag.with_instances(Tensor::matrix(1, moments.len(), moments)?),
        AttachMode::AppendPerInstance => {
            let width = bag.feature_count() + moments.len();
            let mut data = Vec::with_capacity(bag.len() * width);
            for row in bag.instances().row_iter() {
                data.extend_from_slice(row);
                data.extend_from_slice(&moments);
            }
            bag.with_instances(Tensor::matrix(bag.len(), width, data)?)
        }
    }
}
