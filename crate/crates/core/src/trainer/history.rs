//! Loss traces written as `epoch,step,loss_name,value` CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_name: String,
    pub value: f64,
}

/// Ordered loss records of one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, epoch: usize, step: usize, name: &str, value: f64) {
        self.records.push(LossRecord {
            epoch,
            step,
            loss_name: name.to_string(),
            value,
        });
    }

    pub fn records(&self) -> &[LossRecord] {
        &self.records
    }

    /// Values of `name` in recording order.
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.records.iter().filter(|r| r.loss_name == name).map(|r| r.value).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.records.iter().all(|r| r.value.is_finite())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<LossRecord>, _>>()?;
        Ok(LossHistory { records })
    }
}
