//! Ingestion of detector/OCR output and reconstruction of the table inventory.
//!
//! The upstream vision stage publishes one JSON document per frame: the camera
//! model it used, and one record per detected object with its class, the OCR
//! text read off the label and a pixel bounding box. Each box center is cast as
//! a ray through the pinhole model and intersected with the table plane `z = 0`.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::normalize_text;

const ORTHONORMAL_TOL: f64 = 1e-6;
const PARALLEL_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("malformed detection document: {0}")]
    MalformedJson(String),
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
    #[error("detection {index}: {source}")]
    Unprojectable { index: usize, source: BackprojectError },
}

impl PerceptionError {
    fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        PerceptionError::SchemaViolation { path: path.into(), reason: reason.into() }
    }

    /// Last component of the offending field path, e.g. `bbox` for `detections[2].bbox`.
    pub fn field(&self) -> Option<&str> {
        match self {
            PerceptionError::SchemaViolation { path, .. } => path.rsplit('.').next(),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum BackprojectError {
    #[error("pixel ray is parallel to the table plane")]
    RayParallelToPlane,
    #[error("table plane intersection lies behind the camera")]
    IntersectionBehindCamera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    #[serde(default)]
    pub text: String,
    /// `[u_min, v_min, u_max, v_max]` in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
}

impl Detection {
    pub fn center(&self) -> (f64, f64) {
        let [u0, v0, u1, v1] = self.bbox;
        ((u0 + u1) / 2.0, (v0 + v1) / 2.0)
    }
}

#[derive(Serialize, Deserialize)]
struct CameraDoc {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [f64; 9],
    translation: [f64; 3],
}

/// Pinhole intrinsics plus the camera-to-world rigid transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CameraDoc", into = "CameraDoc")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Columns are the camera axes expressed in world coordinates.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates, meters.
    pub translation: Vector3<f64>,
}

impl From<CameraDoc> for CameraModel {
    fn from(d: CameraDoc) -> Self {
        CameraModel {
            fx: d.fx,
            fy: d.fy,
            cx: d.cx,
            cy: d.cy,
            rotation: Matrix3::from_row_slice(&d.rotation),
            translation: Vector3::from(d.translation),
        }
    }
}

impl From<CameraModel> for CameraDoc {
    fn from(c: CameraModel) -> Self {
        let r = c.rotation;
        CameraDoc {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl CameraModel {
    /// Camera at `height` meters above the world origin, optical axis pointing
    /// straight down, image x along world x and image y along world -y.
    pub fn looking_down(height: f64, f: f64, cx: f64, cy: f64) -> Self {
        CameraModel {
            fx: f,
            fy: f,
            cx,
            cy,
            rotation: Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            translation: Vector3::new(0.0, 0.0, height),
        }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        for (name, v) in [("fx", self.fx), ("fy", self.fy)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PerceptionError::schema(format!("camera.{name}"), "focal length must be positive"));
            }
        }
        if !self.cx.is_finite() || !self.cy.is_finite() || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(PerceptionError::schema("camera", "non-finite value"));
        }
        let r = &self.rotation;
        let gram = r.transpose() * r;
        if (gram - Matrix3::identity()).abs().max() > ORTHONORMAL_TOL || (r.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(PerceptionError::schema("camera.rotation", "rotation must be orthonormal with determinant +1"));
        }
        Ok(())
    }

    /// World point to pixel; `None` when the point is not in front of the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(f64, f64)> {
        let cam = self.rotation.transpose() * (world - self.translation);
        if cam.z <= 0.0 {
            return None;
        }
        Some((self.fx * cam.x / cam.z + self.cx, self.fy * cam.y / cam.z + self.cy))
    }
}

/// Intersects the ray through pixel `(u, v)` with the table plane `z = 0`.
pub fn backproject(u: f64, v: f64, cam: &CameraModel) -> Result<Vector3<f64>, BackprojectError> {
    let ray_cam = Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    let d = cam.rotation * ray_cam;
    if d.z.abs() < PARALLEL_EPS {
        return Err(BackprojectError::RayParallelToPlane);
    }
    let origin = cam.translation;
    let t = -origin.z / d.z;
    if t <= 0.0 {
        return Err(BackprojectError::IntersectionBehindCamera);
    }
    let p = origin + d * t;
    Ok(Vector3::new(p.x, p.y, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDocument {
    pub timestamp: String,
    pub camera: CameraModel,
    pub detections: Vec<Detection>,
}

impl DetectionDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }
}

/// Parses and validates a whole detection document.
pub fn parse_document(document: &[u8]) -> Result<DetectionDocument, PerceptionError> {
    let mut de = serde_json::Deserializer::from_slice(document);
    let doc: DetectionDocument = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => PerceptionError::schema(path, inner.to_string()),
            _ => PerceptionError::MalformedJson(inner.to_string()),
        }
    })?;
    de.end().map_err(|e| PerceptionError::MalformedJson(e.to_string()))?;

    if chrono::DateTime::parse_from_rfc3339(&doc.timestamp).is_err() {
        return Err(PerceptionError::schema("timestamp", "expected an RFC 3339 timestamp"));
    }
    doc.camera.validate()?;
    for (i, det) in doc.detections.iter().enumerate() {
        validate_detection(i, det)?;
    }
    Ok(doc)
}

pub fn parse_detections(document: &[u8]) -> Result<Vec<Detection>, PerceptionError> {
    parse_document(document).map(|doc| doc.detections)
}

fn validate_detection(index: usize, det: &Detection) -> Result<(), PerceptionError> {
    let at = |field: &str| format!("detections[{index}].{field}");
    let [u0, v0, u1, v1] = det.bbox;
    if !det.bbox.iter().all(|v| v.is_finite()) || u0 >= u1 || v0 >= v1 {
        return Err(PerceptionError::schema(at("bbox"), "bbox must satisfy u_min < u_max and v_min < v_max"));
    }
    if !(0.0..=1.0).contains(&det.confidence) {
        return Err(PerceptionError::schema(at("confidence"), "confidence must lie in [0, 1]"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub item_id: String,
    pub label: String,
    pub pose_world: [f64; 3],
    pub available_ml: f64,
    pub readable: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InventorySnapshot {
    pub timestamp: String,
    pub items: Vec<InventoryItem>,
}

impl InventorySnapshot {
    pub fn item(&self, item_id: &str) -> Option<&InventoryItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub confidence_threshold: f64,
    pub default_volume_ml: f64,
    /// Per-label overrides of the volume assumed on hand, keyed by normalized label.
    pub volumes: BTreeMap<String, f64>,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig { confidence_threshold: 0.5, default_volume_ml: 700.0, volumes: BTreeMap::new() }
    }
}

impl PerceptionConfig {
    pub fn volume_for(&self, label: &str) -> f64 {
        self.volumes
            .iter()
            .find(|(k, _)| normalize_text(k) == label)
            .map(|(_, v)| *v)
            .unwrap_or(self.default_volume_ml)
            .max(0.0)
    }
}

/// One item per detection at or above the confidence threshold. Item ids are
/// derived from the detection's position in the document.
pub fn build_snapshot(
    timestamp: &str,
    detections: &[Detection],
    cam: &CameraModel,
    config: &PerceptionConfig,
) -> Result<InventorySnapshot, PerceptionError> {
    let mut items = Vec::new();
    for (index, det) in detections.iter().enumerate() {
        if det.confidence < config.confidence_threshold {
            continue;
        }
        let text = normalize_text(&det.text);
        let readable = !text.is_empty();
        let label = if readable { text } else { normalize_text(&det.label) };
        let (u, v) = det.center();
        let p = backproject(u, v, cam).map_err(|source| PerceptionError::Unprojectable { index, source })?;
        items.push(InventoryItem {
            item_id: format!("item-{index:03}"),
            available_ml: config.volume_for(&label),
            label,
            pose_world: [p.x, p.y, p.z],
            readable,
        });
    }
    Ok(InventorySnapshot { timestamp: timestamp.to_string(), items })
}

pub fn snapshot_from_document(doc: &DetectionDocument, config: &PerceptionConfig) -> Result<InventorySnapshot, PerceptionError> {
    build_snapshot(&doc.timestamp, &doc.detections, &doc.camera, config)
}

/// Current inventory; readers always get one complete snapshot.
#[derive(Debug, Clone, Default)]
pub struct SnapshotCell(Arc<RwLock<Arc<InventorySnapshot>>>);

impl SnapshotCell {
    pub fn new(snapshot: InventorySnapshot) -> Self {
        SnapshotCell(Arc::new(RwLock::new(Arc::new(snapshot))))
    }

    pub fn load(&self) -> Arc<InventorySnapshot> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Replaces the previous snapshot wholesale.
    pub fn store(&self, snapshot: InventorySnapshot) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(snapshot);
    }

    /// Read-modify-write under the lock.
    pub fn update(&self, f: impl FnOnce(&mut InventorySnapshot)) {
        let mut guard = self.0.write().unwrap_or_else(|e| e.into_inner());
        let mut next = InventorySnapshot::clone(&guard);
        f(&mut next);
        *guard = Arc::new(next);
    }
}
