//! Millimeter EMA frames to a 2D midsagittal avatar pose.
//!
//! The lower incisor drives a hinge: its vertical displacement from rest maps
//! linearly to a jaw angle θ about `pivot`. The lower lip rides on the jaw at
//! radius `r` from the pivot, then the streamed lip offset is added on top:
//!
//! ```text
//! base = pivot + r·(cos(θ_rest + θ), sin(θ_rest + θ))
//! LL   = base + (LL_ema − LL_rest)
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ema::{Channel, EmaFrame, NormSpec, Space, EMA_DIM};

pub const DEFAULT_JAW_GAIN: f64 = 0.02;
pub const DEFAULT_THETA_MAX: f64 = 0.45;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("invalid rig: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigConfig {
    pivot: [f64; 2],
    rest: [[f64; 2]; 6],
    jaw_gain: f64,
    theta_max: f64,
    theta_rest_ll: f64,
    r: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RigFile {
    pivot: [f64; 2],
    jaw_gain: Option<f64>,
    theta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_rest_ll: Option<f64>,
    rest: HashMap<String, [f64; 2]>,
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Rotates `p` about `center` by `angle` radians (counter-clockwise).
pub fn rotate_about(p: [f64; 2], center: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    let [dx, dy] = sub(p, center);
    [center[0] + c * dx - s * dy, center[1] + s * dx + c * dy]
}

impl RigConfig {
    /// `r` and the lower lip's rest angle are derived from the rest geometry,
    /// so they can never go stale.
    pub fn new(
        pivot: [f64; 2],
        rest: [[f64; 2]; 6],
        jaw_gain: f64,
        theta_max: f64,
    ) -> Result<Self, RigError> {
        let all_finite = pivot.iter().chain(rest.iter().flatten()).all(|v| v.is_finite());
        if !all_finite {
            return Err(RigError::Invalid("non-finite coordinate".into()));
        }
        if !jaw_gain.is_finite() {
            return Err(RigError::Invalid("jaw_gain must be finite".into()));
        }
        if !(theta_max.is_finite() && theta_max >= 0.0) {
            return Err(RigError::Invalid("theta_max must be a finite angle ≥ 0".into()));
        }
        let arm = sub(rest[Channel::LowerLip.index()], pivot);
        let r = norm(arm);
        if !(r > 0.0) {
            return Err(RigError::Invalid("lower lip rest coincides with the pivot".into()));
        }
        Ok(Self {
            pivot,
            rest,
            jaw_gain,
            theta_max,
            theta_rest_ll: arm[1].atan2(arm[0]),
            r,
        })
    }

    /// Default rig on the bundled placeholder geometry: rest positions are the
    /// midpoints of the placeholder ranges.
    pub fn placeholder() -> Self {
        Self::from_json_str(include_str!("../assets/rig_default.json"))
            .expect("bundled rig is valid")
    }

    /// Rig whose rest pose is the normalized-zero frame of `spec`.
    pub fn centered_on(spec: &NormSpec, pivot: [f64; 2]) -> Result<Self, RigError> {
        let mid = EmaFrame::new(0, [0.0; EMA_DIM], Space::Normalized, false);
        let rest = spec
            .denormalize(&mid)
            .expect("zero frame is in range")
            .points();
        Self::new(pivot, rest, DEFAULT_JAW_GAIN, DEFAULT_THETA_MAX)
    }

    pub fn from_json_str(s: &str) -> Result<Self, RigError> {
        let file: RigFile = serde_json::from_str(s)?;
        let mut rest = [[0.0; 2]; 6];
        for c in Channel::ALL {
            rest[c.index()] = *file
                .rest
                .get(c.abbrev())
                .ok_or_else(|| RigError::Invalid(format!("rest pose lacks {c}")))?;
        }
        if let Some(extra) = file.rest.keys().find(|k| Channel::from_abbrev(k).is_none()) {
            return Err(RigError::Invalid(format!("unknown channel {extra:?} in rest pose")));
        }
        let rig = Self::new(
            file.pivot,
            rest,
            file.jaw_gain.unwrap_or(DEFAULT_JAW_GAIN),
            file.theta_max.unwrap_or(DEFAULT_THETA_MAX),
        )?;
        if let Some(a) = file.theta_rest_ll {
            let diff = (a - rig.theta_rest_ll).sin().abs() + ((a - rig.theta_rest_ll).cos() - 1.0).abs();
            if diff > 1e-9 {
                return Err(RigError::Invalid(format!(
                    "theta_rest_ll {a} disagrees with rest geometry ({})",
                    rig.theta_rest_ll
                )));
            }
        }
        Ok(rig)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RigError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = RigFile {
            pivot: self.pivot,
            jaw_gain: Some(self.jaw_gain),
            theta_max: Some(self.theta_max),
            theta_rest_ll: Some(self.theta_rest_ll),
            rest: Channel::ALL
                .iter()
                .map(|c| (c.abbrev().to_string(), self.rest[c.index()]))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("plain struct serializes")
    }

    pub fn pivot(&self) -> [f64; 2] {
        self.pivot
    }

    pub fn rest(&self, c: Channel) -> [f64; 2] {
        self.rest[c.index()]
    }

    pub fn jaw_gain(&self) -> f64 {
        self.jaw_gain
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn theta_rest_ll(&self) -> f64 {
        self.theta_rest_ll
    }

    /// Distance from the pivot to the lower lip's rest position.
    pub fn r(&self) -> f64 {
        self.r
    }

    /// Rest pose as a millimeter frame.
    pub fn rest_frame(&self, seq: u64) -> EmaFrame {
        EmaFrame::from_points(seq, self.rest, Space::Millimeters, false)
    }
}

/// Jaw rotation from the lower incisor's vertical displacement, clamped to
/// `±theta_max`.
pub fn jaw_theta(frame: &EmaFrame, rig: &RigConfig) -> f64 {
    debug_assert_eq!(frame.space, Space::Millimeters);
    let dy = frame.values[Channel::LowerIncisor.y()] - rig.rest(Channel::LowerIncisor)[1];
    (rig.jaw_gain * dy).clamp(-rig.theta_max, rig.theta_max)
}

/// Point on the jaw arc at angle `theta` from rest, i.e.
/// `pivot + r·(cos(θ_rest + θ), sin(θ_rest + θ))`. Computed by rotating the
/// rest arm so that θ = 0 reproduces the rest position without trig error.
pub fn lower_lip_base(rig: &RigConfig, theta: f64) -> [f64; 2] {
    rotate_about(rig.rest(Channel::LowerLip), rig.pivot, theta)
}

pub fn lower_lip_position(frame: &EmaFrame, rig: &RigConfig) -> [f64; 2] {
    let base = lower_lip_base(rig, jaw_theta(frame, rig));
    let offset = sub(frame.point(Channel::LowerLip), rig.rest(Channel::LowerLip));
    [base[0] + offset[0], base[1] + offset[1]]
}

/// Render state for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvatarPose {
    pub seq: u64,
    pub speech: bool,
    /// Canonical channel order.
    pub points: [[f64; 2]; 6],
    pub theta: f64,
}

impl AvatarPose {
    pub fn point(&self, c: Channel) -> [f64; 2] {
        self.points[c.index()]
    }
}

pub fn pose_from_frame(frame: &EmaFrame, rig: &RigConfig) -> AvatarPose {
    let theta = jaw_theta(frame, rig);
    let mut points = frame.points();
    points[Channel::LowerIncisor.index()] =
        rotate_about(rig.rest(Channel::LowerIncisor), rig.pivot, theta);
    points[Channel::LowerLip.index()] = lower_lip_position(frame, rig);
    AvatarPose {
        seq: frame.seq,
        speech: frame.speech,
        points,
        theta,
    }
}
