//! Corpus directory: `manifest.json` plus one `trial_NNN.ndjson` per trial.

use std::fs;
use std::path::Path;

use kinact_core::act::LabeledSequence;
use kinact_core::biomech::JointAngleFrame;
use kinact_core::synth::{CorpusConfig, Split, TrialScript};
use serde::{Deserialize, Serialize};

use super::{read_json, read_ndjson, write_json, write_ndjson};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

/// One frame of a trial file. `base` is carried along so joint centers can be
/// rebuilt from the file alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub lo: u8,
    pub up: u8,
    #[serde(default)]
    pub base: [f64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub file: String,
    pub seed: u64,
    pub script: TrialScript,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorpusConfig,
    pub split_seed: u64,
    pub split: Split,
    pub trials: Vec<TrialEntry>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: Manifest,
    pub trials: Vec<LabeledSequence>,
}

impl Corpus {
    pub fn select(&self, idx: &[usize]) -> Vec<&LabeledSequence> {
        idx.iter().map(|&i| &self.trials[i]).collect()
    }
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, seq) in corpus.manifest.trials.iter().zip(&corpus.trials) {
        let records = seq.frames.iter().zip(seq.lower.iter().zip(&seq.upper)).map(|(f, (&lo, &up))| FrameRecord {
            t: f.t,
            q: f.q.clone(),
            lo,
            up,
            base: f.base,
        });
        write_ndjson(&dir.join(&entry.file), records)?;
    }
    write_json(&dir.join(MANIFEST), &corpus.manifest)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = read_json(&manifest_path)?;
    let n = manifest.trials.len();
    let s = &manifest.split;
    let mut seen = vec![false; n];
    for &i in s.train.iter().chain(&s.val).chain(&s.test) {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::format(&manifest_path, format!("split entry {i} is out of range or repeated")));
        }
    }
    let mut trials = Vec::with_capacity(n);
    for entry in &manifest.trials {
        let path = dir.join(&entry.file);
        let records: Vec<FrameRecord> = read_ndjson(&path)?;
        if records.is_empty() {
            return Err(Error::format(&path, "empty trial"));
        }
        let mut seq = LabeledSequence {
            frames: Vec::with_capacity(records.len()),
            lower: Vec::with_capacity(records.len()),
            upper: Vec::with_capacity(records.len()),
        };
        for r in records {
            seq.frames.push(JointAngleFrame { t: r.t, q: r.q, base: r.base });
            seq.lower.push(r.lo);
            seq.upper.push(r.up);
        }
        seq.validate().map_err(|e| Error::format(&path, e.to_string()))?;
        let width = seq.frames[0].q.len();
        if seq.frames.iter().any(|f| f.q.len() != width) {
            return Err(Error::format(&path, "joint-angle rows differ in length"));
        }
        trials.push(seq);
    }
    Ok(Corpus { manifest, trials })
}
