//! Run manifest: the plan, derived seeds, versions, and a log of which
//! data subset each step touched.

use std::path::Path;

use serde::{Deserialize, Serialize};

use flowrecon_core::SensorLayout;

use crate::experiment::{ExperimentPlan, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEntry {
    pub cell: String,
    pub subset: Subset,
    pub purpose: String,
}

impl AccessEntry {
    pub fn new(cell: &str, subset: Subset, purpose: &str) -> Self {
        Self { cell: cell.into(), subset, purpose: purpose.into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSeed {
    pub cell: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub plan: ExperimentPlan,
    pub seeds: Vec<CellSeed>,
    pub layouts: Vec<Vec<(usize, usize)>>,
    pub access: Vec<AccessEntry>,
}

impl Manifest {
    pub fn new(plan: &ExperimentPlan, rows: &[MetricsRow], layouts: &[SensorLayout], access: &[AccessEntry]) -> Self {
        Self {
            tool: "flowrecon".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            plan: plan.clone(),
            seeds: rows.iter().map(|r| CellSeed { cell: r.cell.clone(), seed: r.seed }).collect(),
            layouts: layouts.iter().map(|l| l.locations().to_vec()).collect(),
            access: access.to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Test data may only ever be read for evaluation.
    pub fn test_access_is_evaluation_only(&self) -> bool {
        self.access.iter().filter(|a| a.subset == Subset::Test).all(|a| a.purpose == "evaluation")
    }
}
