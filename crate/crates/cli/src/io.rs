use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context as _, Result};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wfh::fock::StateSpec;
use wfh::optics::PartitionSpec;
use wfh::povm::{CounterConfig, MeasurementContext, Setting};
use wfh::twirl::twirled_closed_form;
use wfh::BlockOperatorF64;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

/// Writes `value` as pretty JSON through a temporary file in the target
/// directory, renamed into place once complete.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write into {}", dir.display()))?;
    serde_json::to_writer_pretty(&mut tmp, value)?;
    tmp.write_all(b"\n")?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| anyhow!("cannot write {}: {}", path.display(), e.error))?;
    Ok(())
}

/// Measurement context file: a partition, a photon cutoff and either an
/// explicit list of settings or a probe list sharing one counter config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextFile {
    Settings {
        partition: PartitionSpec,
        #[serde(rename = "N")]
        n: usize,
        settings: Vec<Setting>,
    },
    Uniform {
        partition: PartitionSpec,
        #[serde(rename = "N")]
        n: usize,
        #[serde(with = "wfh::serde_complex::vec")]
        gammas: Vec<Complex64>,
        config: CounterConfig,
    },
}

impl ContextFile {
    pub fn build(&self) -> wfh::Result<MeasurementContext<f64>> {
        match self {
            ContextFile::Settings { partition, n, settings } => MeasurementContext::build(partition, *n, settings.clone()),
            ContextFile::Uniform { partition, n, gammas, config } => {
                MeasurementContext::uniform(partition, *n, gammas, config)
            }
        }
    }
}

/// A state given as a block operator, as a reconstruction report carrying an
/// estimate, or as a closed-form family.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum StateFile {
    Block(BlockOperatorF64),
    Report { estimate: BlockOperatorF64 },
    Spec(StateSpec),
}

impl StateFile {
    /// The twirled state on `partition`.
    pub fn twirled(&self, partition: &PartitionSpec) -> wfh::Result<BlockOperatorF64> {
        match self {
            StateFile::Block(b) | StateFile::Report { estimate: b } => Ok(b.clone()),
            StateFile::Spec(s) => twirled_closed_form(s, partition),
        }
    }
}

/// Splits `total` samples as evenly as possible over `settings`.
pub fn split_samples(total: u64, settings: usize) -> Vec<u64> {
    let s = settings as u64;
    (0..s).map(|i| total / s + u64::from(i < total % s)).collect()
}

/// Applies `key=value` overrides to a JSON object; values parse as JSON
/// where possible and fall back to strings.
pub fn apply_overrides(mut base: serde_json::Value, overrides: &[String]) -> Result<serde_json::Value> {
    let obj = base.as_object_mut().ok_or_else(|| anyhow!("overrides need a JSON object"))?;
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("override {o:?} is not key=value"))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
        obj.insert(k.trim().to_string(), value);
    }
    Ok(base)
}
