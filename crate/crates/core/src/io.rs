//! File formats.
//!
//! Frame files are JSON Lines: a header line `{"schema_version", "kind", ...}`
//! followed by one frame per line. Appearance vectors are base64 strings of
//! little-endian `f32`. Checkpoints are a binary container: the magic
//! `STIFCKPT`, a little-endian `u32` header length, a JSON header, then raw
//! little-endian `f64` payloads (weights, then optimizer moments).
//!
//! Readers accept any version with the same major number and report errors
//! with the file and 1-based line.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{Box2D, Box3D};
use crate::net::NetConfig;
use crate::scene::{
    Attribute, Category, Detection, DetectionFrame, GroundTruthFrame, GroundTruthObject, TrackFrame, TrackedObject,
};
use crate::train::{AdamState, Checkpoint, RngState};

/// Version written into every file.
pub const SCHEMA_VERSION: &str = "1.0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STIFCKPT";

fn schema_major(v: &str) -> Option<u64> {
    v.split('.').next()?.parse().ok()
}

/// Rejects versions whose major number differs from ours.
pub fn check_schema(version: &str) -> Result<()> {
    let ours = schema_major(SCHEMA_VERSION).expect("own schema version parses");
    match schema_major(version) {
        Some(m) if m == ours => Ok(()),
        _ => Err(Error::Schema(format!(
            "schema_version '{version}' is not supported (expected major {ours})"
        ))),
    }
}

/// What a frame file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Detections,
    GroundTruth,
    Tracks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHeader {
    pub schema_version: String,
    pub kind: FrameKind,
    /// Free-form provenance (generator config, checkpoint step, ...).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

/// One object on a frame line. Which optional fields are present depends on
/// the file kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_id: Option<u64>,
    pub box3d: [f64; 7],
    pub box2d: [f64; 4],
    pub category: Category,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<Attribute>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub frame_index: usize,
    pub objects: Vec<ObjectRecord>,
}

/// Base64 of the little-endian `f32` bytes. Values are rounded to `f32`.
pub fn encode_appearance(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| (*x as f32).to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_appearance(s: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = B64.decode(s).map_err(|e| format!("appearance is not valid base64: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err(format!("appearance has {} bytes, not a multiple of 4", bytes.len()));
    }
    let v: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err("appearance contains a non-finite value".into());
    }
    Ok(v)
}

fn boxes(r: &ObjectRecord) -> std::result::Result<(Box3D, Box2D), String> {
    let b3 = Box3D::from_array(r.box3d).map_err(|e| e.to_string())?;
    let [cx, cy, w, h] = r.box2d;
    let b2 = Box2D::new(cx, cy, w, h).map_err(|e| e.to_string())?;
    Ok((b3, b2))
}

fn check_confidence(c: f64) -> std::result::Result<(), String> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(format!("confidence {c} outside [0, 1]"))
    }
}

fn check_time(f: &FrameRecord) -> std::result::Result<(), String> {
    if f.timestamp.is_finite() {
        Ok(())
    } else {
        Err("timestamp is not finite".into())
    }
}

impl From<&DetectionFrame> for FrameRecord {
    fn from(f: &DetectionFrame) -> Self {
        FrameRecord {
            timestamp: f.timestamp,
            frame_index: f.frame_index,
            objects: f
                .detections
                .iter()
                .map(|d| ObjectRecord {
                    track_id: None,
                    gt_id: d.gt_id,
                    box3d: d.box3d.to_array(),
                    box2d: d.box2d.to_array(),
                    category: d.category,
                    confidence: d.confidence,
                    velocity: None,
                    attribute: None,
                    appearance: Some(encode_appearance(&d.appearance)),
                })
                .collect(),
        }
    }
}

impl From<&GroundTruthFrame> for FrameRecord {
    fn from(f: &GroundTruthFrame) -> Self {
        FrameRecord {
            timestamp: f.timestamp,
            frame_index: f.frame_index,
            objects: f
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    track_id: None,
                    gt_id: Some(o.id),
                    box3d: o.box3d.to_array(),
                    box2d: o.box2d.to_array(),
                    category: o.category,
                    confidence: 1.0,
                    velocity: Some(o.velocity),
                    attribute: Some(o.attribute),
                    appearance: None,
                })
                .collect(),
        }
    }
}

impl From<&TrackFrame> for FrameRecord {
    fn from(f: &TrackFrame) -> Self {
        FrameRecord {
            timestamp: f.timestamp,
            frame_index: f.frame_index,
            objects: f
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    track_id: Some(o.track_id),
                    gt_id: None,
                    box3d: o.box3d.to_array(),
                    box2d: o.box2d.to_array(),
                    category: o.category,
                    confidence: o.confidence,
                    velocity: Some(o.velocity),
                    attribute: Some(o.attribute),
                    appearance: None,
                })
                .collect(),
        }
    }
}

fn detection_frame(f: FrameRecord) -> std::result::Result<DetectionFrame, String> {
    check_time(&f)?;
    let detections = f
        .objects
        .into_iter()
        .map(|r| {
            let (box3d, box2d) = boxes(&r)?;
            check_confidence(r.confidence)?;
            let appearance = decode_appearance(r.appearance.as_deref().ok_or("detection without appearance")?)?;
            Ok(Detection {
                box2d,
                box3d,
                category: r.category,
                confidence: r.confidence,
                appearance,
                gt_id: r.gt_id,
            })
        })
        .collect::<std::result::Result<_, String>>()?;
    Ok(DetectionFrame {
        frame_index: f.frame_index,
        timestamp: f.timestamp,
        detections,
    })
}

fn ground_truth_frame(f: FrameRecord) -> std::result::Result<GroundTruthFrame, String> {
    check_time(&f)?;
    let objects = f
        .objects
        .into_iter()
        .map(|r| {
            let (box3d, box2d) = boxes(&r)?;
            let velocity = r.velocity.ok_or("ground-truth object without velocity")?;
            if velocity.iter().any(|v| !v.is_finite()) {
                return Err("velocity is not finite".to_string());
            }
            Ok(GroundTruthObject {
                id: r.gt_id.ok_or("ground-truth object without gt_id")?,
                box3d,
                box2d,
                velocity,
                attribute: r.attribute.ok_or("ground-truth object without attribute")?,
                category: r.category,
            })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let mut ids: Vec<u64> = objects.iter().map(|o| o.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err("duplicate gt_id within a frame".into());
    }
    Ok(GroundTruthFrame {
        frame_index: f.frame_index,
        timestamp: f.timestamp,
        objects,
    })
}

fn track_frame(f: FrameRecord) -> std::result::Result<TrackFrame, String> {
    check_time(&f)?;
    let objects = f
        .objects
        .into_iter()
        .map(|r| {
            let (box3d, box2d) = boxes(&r)?;
            check_confidence(r.confidence)?;
            Ok(TrackedObject {
                track_id: r.track_id.ok_or("track object without track_id")?,
                box3d,
                box2d,
                category: r.category,
                confidence: r.confidence,
                velocity: r.velocity.unwrap_or([0.0; 3]),
                attribute: r.attribute.unwrap_or(Attribute::Moving),
            })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let mut ids: Vec<u64> = objects.iter().map(|o| o.track_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err("duplicate track_id within a frame".into());
    }
    Ok(TrackFrame {
        frame_index: f.frame_index,
        timestamp: f.timestamp,
        objects,
    })
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn write_frames(path: &Path, kind: FrameKind, meta: serde_json::Value, frames: &[FrameRecord]) -> Result<()> {
    let mut out = Vec::new();
    let header = FileHeader {
        schema_version: SCHEMA_VERSION.to_string(),
        kind,
        meta,
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::invalid(e.to_string()))?;
    out.push(b'\n');
    for f in frames {
        serde_json::to_writer(&mut out, f).map_err(|e| Error::invalid(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a frame file of the expected kind. Frames must have strictly
/// increasing timestamps.
fn read_frames<T>(
    path: &Path,
    kind: FrameKind,
    convert: impl Fn(FrameRecord) -> std::result::Result<T, String>,
) -> Result<(FileHeader, Vec<T>)> {
    let file = fs::File::open(path)?;
    let mut header: Option<FileHeader> = None;
    let mut frames = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: FileHeader = serde_json::from_str(&line).map_err(|e| parse_error(path, n, e.to_string()))?;
                check_schema(&h.schema_version).map_err(|e| parse_error(path, n, e.to_string()))?;
                if h.kind != kind {
                    return Err(parse_error(path, n, format!("expected a {kind:?} file, found {:?}", h.kind)));
                }
                header = Some(h);
            }
            Some(_) => {
                let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| parse_error(path, n, e.to_string()))?;
                if rec.timestamp <= last_t {
                    return Err(parse_error(path, n, "timestamps must increase strictly"));
                }
                last_t = rec.timestamp;
                frames.push(convert(rec).map_err(|m| parse_error(path, n, m))?);
            }
        }
    }
    let header = header.ok_or_else(|| parse_error(path, 1, "missing header line"))?;
    Ok((header, frames))
}

pub fn write_detections(path: &Path, frames: &[DetectionFrame], meta: serde_json::Value) -> Result<()> {
    let recs: Vec<FrameRecord> = frames.iter().map(FrameRecord::from).collect();
    write_frames(path, FrameKind::Detections, meta, &recs)
}

pub fn write_ground_truth(path: &Path, frames: &[GroundTruthFrame], meta: serde_json::Value) -> Result<()> {
    let recs: Vec<FrameRecord> = frames.iter().map(FrameRecord::from).collect();
    write_frames(path, FrameKind::GroundTruth, meta, &recs)
}

pub fn write_tracks(path: &Path, frames: &[TrackFrame], meta: serde_json::Value) -> Result<()> {
    let recs: Vec<FrameRecord> = frames.iter().map(FrameRecord::from).collect();
    write_frames(path, FrameKind::Tracks, meta, &recs)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionFrame>> {
    Ok(read_frames(path, FrameKind::Detections, detection_frame)?.1)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthFrame>> {
    Ok(read_frames(path, FrameKind::GroundTruth, ground_truth_frame)?.1)
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackFrame>> {
    Ok(read_frames(path, FrameKind::Tracks, track_frame)?.1)
}

/// Header of any frame file.
pub fn read_header(path: &Path) -> Result<FileHeader> {
    let file = fs::File::open(path)?;
    let line = BufReader::new(file)
        .lines()
        .next()
        .transpose()?
        .ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let h: FileHeader = serde_json::from_str(&line).map_err(|e| parse_error(path, 1, e.to_string()))?;
    check_schema(&h.schema_version).map_err(|e| parse_error(path, 1, e.to_string()))?;
    Ok(h)
}

/// Parses a JSON document, reporting the offending line on error.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| parse_error(path, e.line().max(1), e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    parse_json(path, &text)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    schema_version: String,
    net_config: NetConfig,
    step: u64,
    epoch: usize,
    rng: RngState,
    tensors: Vec<TensorEntry>,
    /// Optimizer step count; the moment payloads follow the weights when present.
    adam_t: Option<u64>,
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        schema_version: SCHEMA_VERSION.to_string(),
        net_config: ck.net_config.clone(),
        step: ck.step,
        epoch: ck.epoch,
        rng: ck.rng,
        tensors: ck
            .weights
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        adam_t: ck.adam.as_ref().map(|a| a.t),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::invalid("checkpoint header too large"))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &ck.weights {
        push_tensor(&mut out, t);
    }
    if let Some(a) = &ck.adam {
        for t in a.m.iter().chain(&a.v) {
            push_tensor(&mut out, t);
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Schema(format!("checkpoint: {m}"));
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing STIFCKPT magic"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < len {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..len]).map_err(|e| bad(&format!("header: {e}")))?;
    check_schema(&header.schema_version)?;
    let mut payload = &body[len..];
    let mut take = |shape: &[usize]| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if payload.len() < n * 8 {
            return Err(bad("truncated payload"));
        }
        let data = payload[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        payload = &payload[n * 8..];
        Tensor::new(shape.to_vec(), data)
    };
    let mut weights = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        weights.push((e.name.clone(), take(&e.shape)?));
    }
    let adam = match header.adam_t {
        Some(t) => {
            let m = header.tensors.iter().map(|e| take(&e.shape)).collect::<Result<Vec<_>>>()?;
            let v = header.tensors.iter().map(|e| take(&e.shape)).collect::<Result<Vec<_>>>()?;
            Some(AdamState { t, m, v })
        }
        None => None,
    };
    if !payload.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    let ck = Checkpoint {
        net_config: header.net_config,
        weights,
        step: header.step,
        epoch: header.epoch,
        rng: header.rng,
        adam,
    };
    // Validates names and shapes against the configuration.
    ck.to_net()?;
    Ok(ck)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = checkpoint_to_bytes(ck)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}
