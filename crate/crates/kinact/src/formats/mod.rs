//! On-disk formats: JSON calibration and model files, newline-delimited JSON
//! streams, binary weight files and the synthetic corpus directory.

mod binary;
mod corpus;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use kinact_core::biomech::{BiomechModel, JointAngleFrame, MarkerFrame};
use kinact_core::camgeo::{CameraParams, JointCenters3D, Keypoints2D, N_KEYPOINTS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use binary::{
    decode_kadc, decode_kalw, encode_kadc, encode_kalw, load_checkpoint, read_kadc, read_kalw, save_checkpoint, sidecar_path, write_kadc, write_kalw, Checkpoint, KADC_MAGIC,
    KALW_MAGIC,
};
pub use corpus::{read_corpus, write_corpus, Corpus, FrameRecord, Manifest, TrialEntry, MANIFEST};

const DEFAULT_MODEL: &str = include_str!("../../assets/default_model.json");

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| {
        let line = e.line();
        Error::json(path, line, e)
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, 0, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// One record per non-blank line.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, i + 1, e))?);
    }
    Ok(out)
}

pub fn write_ndjson<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::json(path, 0, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fixed<T: Copy + Default, const N: usize>(path: &Path, what: &str, v: &[T]) -> Result<[T; N]> {
    if v.len() != N {
        return Err(Error::format(path, format!("{what}: expected {N} entries, got {}", v.len())));
    }
    let mut out = [T::default(); N];
    out.copy_from_slice(v);
    Ok(out)
}

/// Calibration entry as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub dist: [f64; 5],
}

impl From<&CameraParams> for CameraRecord {
    fn from(c: &CameraParams) -> Self {
        Self {
            id: c.id.clone(),
            k: c.k,
            r: c.r,
            t: c.t,
            dist: c.dist,
        }
    }
}

/// Read a calibration file (a JSON array with one object per camera).
pub fn load_calibration(path: &Path) -> Result<Vec<CameraParams>> {
    let records: Vec<CameraRecord> = read_json(path)?;
    if records.is_empty() {
        return Err(Error::format(path, "no cameras"));
    }
    records
        .into_iter()
        .map(|r| CameraParams::new(r.id, r.k, r.r, r.t, r.dist).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

pub fn save_calibration(path: &Path, cams: &[CameraParams]) -> Result<()> {
    let records: Vec<CameraRecord> = cams.iter().map(CameraRecord::from).collect();
    write_json(path, &records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointRecord {
    pub cam: String,
    pub t: f64,
    pub kp: Vec<[f64; 3]>,
}

impl From<&Keypoints2D> for KeypointRecord {
    fn from(k: &Keypoints2D) -> Self {
        Self {
            cam: k.camera_id.clone(),
            t: k.t,
            kp: k.points.to_vec(),
        }
    }
}

pub fn read_keypoints(path: &Path) -> Result<Vec<Keypoints2D>> {
    read_ndjson::<KeypointRecord>(path)?
        .into_iter()
        .map(|r| {
            let k = Keypoints2D {
                camera_id: r.cam,
                t: r.t,
                points: fixed::<_, N_KEYPOINTS>(path, "kp", &r.kp)?,
            };
            k.validate().map_err(|e| Error::format(path, e.to_string()))?;
            Ok(k)
        })
        .collect()
}

pub fn write_keypoints(path: &Path, frames: &[Keypoints2D]) -> Result<()> {
    write_ndjson(path, frames.iter().map(KeypointRecord::from))
}

/// Triangulated joint centers, one line per instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JcpRecord {
    pub t: f64,
    pub p: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
    #[serde(default)]
    pub err: Vec<f64>,
    #[serde(default)]
    pub filled: Vec<bool>,
}

impl From<&JointCenters3D> for JcpRecord {
    fn from(j: &JointCenters3D) -> Self {
        Self {
            t: j.t,
            p: j.points.to_vec(),
            valid: j.valid.to_vec(),
            err: j.reproj_error.to_vec(),
            filled: j.filled.to_vec(),
        }
    }
}

pub fn read_jcps(path: &Path) -> Result<Vec<JointCenters3D>> {
    read_ndjson::<JcpRecord>(path)?
        .into_iter()
        .map(|r| {
            let err = if r.err.is_empty() { vec![0.0; N_KEYPOINTS] } else { r.err };
            let filled = if r.filled.is_empty() { vec![false; N_KEYPOINTS] } else { r.filled };
            Ok(JointCenters3D {
                t: r.t,
                points: fixed(path, "p", &r.p)?,
                reproj_error: fixed(path, "err", &err)?,
                valid: fixed(path, "valid", &r.valid)?,
                filled: fixed(path, "filled", &filled)?,
            })
        })
        .collect()
}

pub fn write_jcps(path: &Path, frames: &[JointCenters3D]) -> Result<()> {
    write_ndjson(path, frames.iter().map(JcpRecord::from))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub t: f64,
    pub m: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

pub fn read_markers(path: &Path, n_markers: usize) -> Result<Vec<MarkerFrame>> {
    read_ndjson::<MarkerRecord>(path)?
        .into_iter()
        .map(|r| {
            if r.m.len() != n_markers || r.valid.len() != n_markers {
                return Err(Error::format(path, format!("expected {n_markers} markers, got {} ({} flags)", r.m.len(), r.valid.len())));
            }
            Ok(MarkerFrame {
                t: r.t,
                markers: r.m,
                valid: r.valid,
            })
        })
        .collect()
}

pub fn write_markers(path: &Path, frames: &[MarkerFrame]) -> Result<()> {
    write_ndjson(
        path,
        frames.iter().map(|f| MarkerRecord {
            t: f.t,
            m: f.markers.clone(),
            valid: f.valid.clone(),
        }),
    )
}

/// Joint angles with the floating base and, for IK output, the marker RMS residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub base: [f64; 6],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub res: Option<f64>,
}

impl AngleRecord {
    pub fn frame(&self) -> JointAngleFrame {
        JointAngleFrame {
            t: self.t,
            q: self.q.clone(),
            base: self.base,
        }
    }
}

pub fn read_angles(path: &Path, n_dof: usize) -> Result<Vec<JointAngleFrame>> {
    read_ndjson::<AngleRecord>(path)?
        .into_iter()
        .map(|r| {
            if r.q.len() != n_dof {
                return Err(Error::format(path, format!("expected {n_dof} joint angles, got {}", r.q.len())));
            }
            Ok(r.frame())
        })
        .collect()
}

pub fn write_angles(path: &Path, frames: &[JointAngleFrame], residuals: Option<&[f64]>) -> Result<()> {
    write_ndjson(
        path,
        frames.iter().enumerate().map(|(i, f)| AngleRecord {
            t: f.t,
            q: f.q.clone(),
            base: f.base,
            res: residuals.map(|r| r[i]),
        }),
    )
}

/// The bundled 22-DoF, 29-marker template.
pub fn default_model() -> BiomechModel {
    serde_json::from_str(DEFAULT_MODEL).expect("bundled model is valid")
}

pub fn load_model(path: &Path) -> Result<BiomechModel> {
    read_json(path)
}

/// `path` if given, the bundled template otherwise.
pub fn model_or_default(path: Option<&Path>) -> Result<BiomechModel> {
    path.map_or_else(|| Ok(default_model()), load_model)
}
