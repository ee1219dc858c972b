//! Run directory layout and reloading.
//!
//! ```text
//! config.json  examples.json  models/mN.json  stats.json
//! transcripts/NNNN-<kind>-mN-iI.json  arms.json  mds_trace.json
//! report.json  augmented.csv
//! ```
//!
//! Examples store row ids instead of rows; reloading recomputes the split
//! from `config.json` and picks the rows back out of the training part.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::discovery::{DiscoveryResult, DiscoveryStats};
use crate::error::{Error, Result};
use crate::generation::{ArmCandidate, GenerationStats, Transcript};
use crate::pipeline::{ModelTrace, RunConfig, RunReport};
use crate::rules::{Dgr, Example};
use crate::table::{write_csv, RowId, Table};
use crate::tree::{ModelId, TreeModel};

fn dir_err(path: &Path, message: impl Into<String>) -> Error {
    Error::RunDir { path: path.to_path_buf(), message: message.into() }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| dir_err(path, e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| dir_err(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| dir_err(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ExampleRecord {
    model_id: ModelId,
    rho: f64,
    rule_text: String,
    rule: Dgr,
    ind: f64,
    representative: bool,
    rows: Vec<RowId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StatsDoc {
    wall_time_ms: f64,
    #[serde(flatten)]
    stats: DiscoveryStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArmsDoc {
    stats: GenerationStats,
    arms: Vec<ArmCandidate>,
}

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory tree. Existing files are overwritten as stages
    /// write them.
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for sub in ["models", "transcripts"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| dir_err(&p, e.to_string()))?;
        }
        Ok(Self { root })
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if !root.join("config.json").is_file() {
            return Err(dir_err(&root, "not a run directory (config.json is missing)"));
        }
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        write_json(&self.root.join("config.json"), cfg)
    }

    pub fn read_config(&self) -> Result<RunConfig> {
        read_json(&self.root.join("config.json"))
    }

    pub fn write_discovery(&self, d: &DiscoveryResult) -> Result<()> {
        let models = self.root.join("models");
        fs::create_dir_all(&models).map_err(|e| dir_err(&models, e.to_string()))?;
        for m in &d.models {
            write_json(&models.join(format!("m{}.json", m.id.0)), m)?;
        }
        let examples: Vec<ExampleRecord> = d
            .examples
            .iter()
            .map(|e| ExampleRecord {
                model_id: e.model_id,
                rho: e.rho,
                rule_text: e.rule.to_string(),
                rule: e.rule.clone(),
                ind: e.ind,
                representative: e.representative,
                rows: e.data.ids().to_vec(),
            })
            .collect();
        write_json(&self.root.join("examples.json"), &examples)?;
        write_json(&self.root.join("stats.json"), &StatsDoc { wall_time_ms: d.wall_time_ms, stats: d.stats.clone() })
    }

    /// Rebuilds a discovery result, taking example rows from `train`.
    pub fn read_discovery(&self, train: &Table) -> Result<DiscoveryResult> {
        let records: Vec<ExampleRecord> = read_json(&self.root.join("examples.json"))?;
        let StatsDoc { wall_time_ms, stats } = read_json(&self.root.join("stats.json"))?;
        let pos: HashMap<RowId, usize> = train.ids().iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut examples = Vec::with_capacity(records.len());
        let mut model_ids: Vec<ModelId> = Vec::new();
        for r in records {
            let idx = r
                .rows
                .iter()
                .map(|id| {
                    pos.get(id).copied().ok_or_else(|| {
                        dir_err(&self.root, format!("example row {} is not in the training split", id.0))
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            let mut e = Example::new(r.model_id, r.rho, r.rule, train.select(&idx))?;
            e.ind = r.ind;
            e.representative = r.representative;
            if !model_ids.contains(&r.model_id) {
                model_ids.push(r.model_id);
            }
            examples.push(e);
        }
        let mut models: Vec<TreeModel> = Vec::new();
        let dir = self.root.join("models");
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| dir_err(&dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for p in entries {
            models.push(read_json(&p)?);
        }
        models.sort_by_key(|m| m.id);
        if let Some(id) = model_ids.iter().find(|id| !models.iter().any(|m| m.id == **id)) {
            return Err(dir_err(&dir, format!("model {id} is referenced by examples but missing")));
        }
        Ok(DiscoveryResult { examples, models, stats, wall_time_ms })
    }

    pub fn write_transcripts(&self, ts: &[Transcript]) -> Result<()> {
        let dir = self.root.join("transcripts");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| dir_err(&dir, e.to_string()))?;
        }
        fs::create_dir_all(&dir).map_err(|e| dir_err(&dir, e.to_string()))?;
        for (i, t) in ts.iter().enumerate() {
            let kind = match t.kind {
                crate::generation::CallKind::Generate => "generate",
                crate::generation::CallKind::Refine => "refine",
            };
            write_json(&dir.join(format!("{i:04}-{kind}-m{}-i{}.json", t.model_id.0, t.iteration)), t)?;
        }
        Ok(())
    }

    /// Transcripts in recording order.
    pub fn read_transcripts(&self) -> Result<Vec<Transcript>> {
        let dir = self.root.join("transcripts");
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| dir_err(&dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files.iter().map(|p| read_json(p)).collect()
    }

    pub fn write_arms(&self, arms: &[ArmCandidate], stats: &GenerationStats) -> Result<()> {
        write_json(&self.root.join("arms.json"), &ArmsDoc { stats: stats.clone(), arms: arms.to_vec() })
    }

    pub fn read_arms(&self) -> Result<(Vec<ArmCandidate>, GenerationStats)> {
        let doc: ArmsDoc = read_json(&self.root.join("arms.json"))?;
        Ok((doc.arms, doc.stats))
    }

    pub fn write_traces(&self, traces: &[ModelTrace]) -> Result<()> {
        write_json(&self.root.join("mds_trace.json"), traces)
    }

    pub fn read_traces(&self) -> Result<Vec<ModelTrace>> {
        read_json(&self.root.join("mds_trace.json"))
    }

    pub fn write_report(&self, r: &RunReport) -> Result<()> {
        write_json(&self.root.join("report.json"), r)
    }

    pub fn read_report(&self) -> Result<RunReport> {
        read_json(&self.root.join("report.json"))
    }

    pub fn write_augmented(&self, t: &Table) -> Result<()> {
        write_csv(t, self.root.join("augmented.csv"))
    }
}
