use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Errors, Outcome, StepResult};
use crate::error::{Error, Result};
use crate::kinematics::JointVector;

/// One line of the JSON-lines episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub q: JointVector,
    pub qdot: JointVector,
    pub action: [f64; 6],
    pub reward: f64,
    pub errors: Errors,
    pub outcome: Outcome,
}

impl StepRecord {
    pub fn from_step(episode: usize, step: usize, r: &StepResult) -> Self {
        Self {
            episode,
            step,
            q: r.observation.q,
            qdot: r.observation.qdot,
            action: r.action,
            reward: r.reward,
            errors: r.errors,
            outcome: r.outcome,
        }
    }
}

pub struct EpisodeLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EpisodeLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write(&mut self, record: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
