//! Bundled demo table and scripted orders.

use nalgebra::Vector3;

use crate::perception::{CameraModel, Detection, DetectionDocument, PerceptionConfig};
use crate::reconcile::ABORT;

/// Camera 1 m above the table center looking straight down, 1280x720 image.
pub fn demo_camera() -> CameraModel {
    CameraModel::looking_down(1.0, 600.0, 640.0, 360.0)
}

/// Bottles on the demo table: OCR text and table position in meters.
const BOTTLES: &[(&str, [f64; 2])] = &[
    ("White Rum", [-0.45, 0.20]),
    ("Lime Juice", [-0.30, 0.20]),
    ("Honey", [-0.15, 0.20]),
    ("Soda Water", [0.00, 0.20]),
    ("Tequila", [0.15, 0.20]),
    ("Triple Sec", [0.30, 0.20]),
    ("Vodka", [0.45, 0.20]),
    ("Orange Juice", [-0.45, 0.00]),
    ("Cachaca", [-0.30, 0.00]),
    ("Gin", [-0.15, 0.00]),
    ("Tonic Water", [0.15, 0.00]),
    ("Cranberry Juice", [0.30, 0.00]),
    ("Cola", [0.45, 0.00]),
    ("Ginger Beer", [-0.45, -0.20]),
    ("Grenadine", [-0.30, -0.20]),
];

fn detection(label: &str, text: &str, at: [f64; 2], confidence: f64) -> Detection {
    let cam = demo_camera();
    let (u, v) = cam.project(&Vector3::new(at[0], at[1], 0.0)).expect("demo bottles are in view");
    Detection { label: label.into(), text: text.into(), bbox: [u - 25.0, v - 60.0, u + 25.0, v + 60.0], confidence }
}

/// Detector output for the demo table. Sugar is deliberately absent; one bottle
/// has an unreadable label and one detection is below the confidence threshold.
pub fn demo_detections() -> DetectionDocument {
    let mut detections: Vec<Detection> =
        BOTTLES.iter().enumerate().map(|(i, (text, at))| detection("bottle", text, *at, 0.95 - 0.01 * i as f64)).collect();
    detections.push(detection("bottle", "", [0.0, -0.20], 0.81));
    detections.push(detection("bottle", "Absinthe", [0.30, -0.20], 0.22));
    DetectionDocument { timestamp: "2026-10-18T18:30:00Z".into(), camera: demo_camera(), detections }
}

/// Honey comes in a small jar.
pub fn demo_perception_config() -> PerceptionConfig {
    let mut config = PerceptionConfig::default();
    config.volumes.insert("honey".into(), 200.0);
    config
}

/// One scripted order: the text, then the answer given to each prompt in turn.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedOrder {
    pub text: &'static str,
    pub answers: &'static [&'static str],
}

pub const DEMO_SCRIPT: &[ScriptedOrder] = &[
    ScriptedOrder { text: "Make me a Mojito", answers: &["honey"] },
    ScriptedOrder { text: "make me a margarita", answers: &[] },
    ScriptedOrder { text: "Make a screwdriver", answers: &[] },
    ScriptedOrder { text: "Make me a Caipirinha", answers: &["honey"] },
    ScriptedOrder { text: "make me a gin and tonic", answers: &[] },
    ScriptedOrder { text: "Make me a Cosmopolitan", answers: &[] },
    ScriptedOrder { text: "make me a daiquiri", answers: &["honey"] },
    ScriptedOrder { text: "Make a Cuba Libre", answers: &[] },
    ScriptedOrder { text: "make me a moscow mule", answers: &[] },
    ScriptedOrder { text: "Make me a Tequila Sunrise!", answers: &[] },
];

pub fn is_abort(answer: &str) -> bool {
    answer == ABORT
}
