//! EMA data model: articulator channels, frames and the normalization spec.
//!
//! Every binary and text format in the crate flattens a frame in the same
//! twelve-dimension order:
//!
//! ```text
//! TTx TTy TBx TBy TDx TDy ULx ULy LLx LLy LIx LIy
//! ```

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of flattened EMA dimensions (6 articulators × x,y).
pub const EMA_DIM: usize = 12;

/// EMA frames per second of audio.
pub const FRAME_RATE: u32 = 100;

/// Audio samples covered by one EMA frame at 16 kHz.
pub const SAMPLES_PER_FRAME: usize = 160;

/// Slack allowed when checking range invariants.
pub const RANGE_TOLERANCE: f64 = 1e-6;

/// Canonical dimension names, in flattening order.
pub const DIM_NAMES: [&str; EMA_DIM] = [
    "TTx", "TTy", "TBx", "TBy", "TDx", "TDy", "ULx", "ULy", "LLx", "LLy", "LIx", "LIy",
];

#[derive(Debug, Error)]
pub enum EmaError {
    #[error("dimension {dim} value {value} outside [{lo}, {hi}]")]
    ValueOutOfRange {
        dim: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("expected a frame in {expected} space, got {got}")]
    WrongSpace { expected: Space, got: Space },
    #[error("invalid normalization spec: {0}")]
    BadNormSpec(String),
    #[error("invalid trajectory file: {0}")]
    BadTrajectory(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// The six midsagittal articulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "TT")]
    TongueTip,
    #[serde(rename = "TB")]
    TongueBody,
    #[serde(rename = "TD")]
    TongueDorsum,
    #[serde(rename = "UL")]
    UpperLip,
    #[serde(rename = "LL")]
    LowerLip,
    #[serde(rename = "LI")]
    LowerIncisor,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::TongueTip,
        Channel::TongueBody,
        Channel::TongueDorsum,
        Channel::UpperLip,
        Channel::LowerLip,
        Channel::LowerIncisor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Flattened index of the x coordinate; y follows at `+1`.
    pub fn x(self) -> usize {
        2 * self.index()
    }

    pub fn y(self) -> usize {
        2 * self.index() + 1
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Channel::TongueTip => "TT",
            Channel::TongueBody => "TB",
            Channel::TongueDorsum => "TD",
            Channel::UpperLip => "UL",
            Channel::LowerLip => "LL",
            Channel::LowerIncisor => "LI",
        }
    }

    pub fn from_abbrev(s: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.abbrev() == s)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

/// Coordinate space a frame's values live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    /// Each dimension independently scaled to `[-1, 1]`.
    Normalized,
    Millimeters,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Normalized => f.write_str("normalized"),
            Space::Millimeters => f.write_str("millimeter"),
        }
    }
}

/// One 100 fps sample of all twelve articulator coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaFrame {
    pub seq: u64,
    pub values: [f64; EMA_DIM],
    pub space: Space,
    /// `false` when the frame is a silence hold.
    pub speech: bool,
}

impl EmaFrame {
    pub fn new(seq: u64, values: [f64; EMA_DIM], space: Space, speech: bool) -> Self {
        Self {
            seq,
            values,
            space,
            speech,
        }
    }

    pub fn zeros(seq: u64, space: Space) -> Self {
        Self::new(seq, [0.0; EMA_DIM], space, false)
    }

    pub fn point(&self, channel: Channel) -> [f64; 2] {
        [self.values[channel.x()], self.values[channel.y()]]
    }

    pub fn set_point(&mut self, channel: Channel, p: [f64; 2]) {
        self.values[channel.x()] = p[0];
        self.values[channel.y()] = p[1];
    }

    /// Per-channel view of the flattened values.
    pub fn points(&self) -> [[f64; 2]; 6] {
        Channel::ALL.map(|c| self.point(c))
    }

    pub fn from_points(seq: u64, points: [[f64; 2]; 6], space: Space, speech: bool) -> Self {
        let mut values = [0.0; EMA_DIM];
        for (i, p) in points.iter().enumerate() {
            values[2 * i] = p[0];
            values[2 * i + 1] = p[1];
        }
        Self::new(seq, values, space, speech)
    }

    /// Checks the `[-1, 1]` invariant of normalized frames.
    pub fn check_normalized(&self) -> Result<(), EmaError> {
        if self.space != Space::Normalized {
            return Err(EmaError::WrongSpace {
                expected: Space::Normalized,
                got: self.space,
            });
        }
        for (d, &v) in self.values.iter().enumerate() {
            if !(v >= -1.0 - RANGE_TOLERANCE && v <= 1.0 + RANGE_TOLERANCE) {
                return Err(EmaError::ValueOutOfRange {
                    dim: DIM_NAMES[d],
                    value: v,
                    lo: -1.0,
                    hi: 1.0,
                });
            }
        }
        Ok(())
    }
}

/// Per-dimension physical extremes used to map `[-1, 1]` to millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct NormSpec {
    pub speaker: String,
    pub min_mm: [f64; EMA_DIM],
    pub max_mm: [f64; EMA_DIM],
}

#[derive(Serialize, Deserialize)]
struct NormSpecFile {
    speaker: String,
    dims: Vec<NormSpecDim>,
}

#[derive(Serialize, Deserialize)]
struct NormSpecDim {
    name: String,
    min: f64,
    max: f64,
}

impl NormSpec {
    pub fn new(
        speaker: impl Into<String>,
        min_mm: [f64; EMA_DIM],
        max_mm: [f64; EMA_DIM],
    ) -> Result<Self, EmaError> {
        for d in 0..EMA_DIM {
            if !(min_mm[d].is_finite() && max_mm[d].is_finite() && min_mm[d] < max_mm[d]) {
                return Err(EmaError::BadNormSpec(format!(
                    "{}: min {} must be < max {}",
                    DIM_NAMES[d], min_mm[d], max_mm[d]
                )));
            }
        }
        Ok(Self {
            speaker: speaker.into(),
            min_mm,
            max_mm,
        })
    }

    /// Synthetic ranges with plausible midsagittal geometry, not measured
    /// from any speaker. See `assets/normspec_placeholder.json`.
    pub fn placeholder() -> Self {
        Self::from_json_str(include_str!("../assets/normspec_placeholder.json"))
            .expect("bundled placeholder spec is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self, EmaError> {
        let file: NormSpecFile = serde_json::from_str(s)?;
        if file.dims.len() != EMA_DIM {
            return Err(EmaError::BadNormSpec(format!(
                "expected {EMA_DIM} dims, found {}",
                file.dims.len()
            )));
        }
        let mut min_mm = [0.0; EMA_DIM];
        let mut max_mm = [0.0; EMA_DIM];
        for (d, dim) in file.dims.iter().enumerate() {
            if dim.name != DIM_NAMES[d] {
                return Err(EmaError::BadNormSpec(format!(
                    "dim {d} is named {:?}, expected {:?}",
                    dim.name, DIM_NAMES[d]
                )));
            }
            min_mm[d] = dim.min;
            max_mm[d] = dim.max;
        }
        Self::new(file.speaker, min_mm, max_mm)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmaError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = NormSpecFile {
            speaker: self.speaker.clone(),
            dims: (0..EMA_DIM)
                .map(|d| NormSpecDim {
                    name: DIM_NAMES[d].to_string(),
                    min: self.min_mm[d],
                    max: self.max_mm[d],
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("plain struct serializes")
    }

    pub fn denormalize_value(&self, d: usize, v: f64) -> f64 {
        (v + 1.0) / 2.0 * (self.max_mm[d] - self.min_mm[d]) + self.min_mm[d]
    }

    pub fn normalize_value(&self, d: usize, mm: f64) -> f64 {
        2.0 * (mm - self.min_mm[d]) / (self.max_mm[d] - self.min_mm[d]) - 1.0
    }

    /// Maps a normalized frame into millimeters. Out-of-range inputs mean the
    /// inversion backend is misbehaving and are rejected.
    pub fn denormalize(&self, frame: &EmaFrame) -> Result<EmaFrame, EmaError> {
        frame.check_normalized()?;
        let mut values = [0.0; EMA_DIM];
        for (d, out) in values.iter_mut().enumerate() {
            *out = self.denormalize_value(d, frame.values[d]);
        }
        Ok(EmaFrame {
            values,
            space: Space::Millimeters,
            ..*frame
        })
    }

    pub fn normalize(&self, frame: &EmaFrame) -> Result<EmaFrame, EmaError> {
        if frame.space != Space::Millimeters {
            return Err(EmaError::WrongSpace {
                expected: Space::Millimeters,
                got: frame.space,
            });
        }
        let mut values = [0.0; EMA_DIM];
        for (d, out) in values.iter_mut().enumerate() {
            let mm = frame.values[d];
            let (lo, hi) = (self.min_mm[d], self.max_mm[d]);
            if !(mm >= lo - RANGE_TOLERANCE && mm <= hi + RANGE_TOLERANCE) {
                return Err(EmaError::ValueOutOfRange {
                    dim: DIM_NAMES[d],
                    value: mm,
                    lo,
                    hi,
                });
            }
            *out = self.normalize_value(d, mm).clamp(-1.0, 1.0);
        }
        Ok(EmaFrame {
            values,
            space: Space::Normalized,
            ..*frame
        })
    }
}

/// CSV header of EMA trajectory files.
pub fn trajectory_header() -> Vec<&'static str> {
    let mut h = vec!["seq"];
    h.extend(DIM_NAMES);
    h
}

/// Writes frames as `seq,TTx,...,LIy` rows.
pub fn write_trajectory<W: Write>(out: W, frames: &[EmaFrame]) -> Result<(), EmaError> {
    let mut w = TrajectoryWriter::new(out)?;
    for f in frames {
        w.write(f)?;
    }
    w.flush()
}

/// Incremental trajectory CSV writer, used for recording a live stream.
pub struct TrajectoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> Result<Self, EmaError> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(trajectory_header())?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, frame: &EmaFrame) -> Result<(), EmaError> {
        let mut row = Vec::with_capacity(EMA_DIM + 1);
        row.push(frame.seq.to_string());
        row.extend(frame.values.iter().map(|v| v.to_string()));
        self.inner.write_record(&row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), EmaError> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads a trajectory CSV. Rows must be numbered `0, 1, 2, ...`; the frames
/// are tagged with `space` since the file itself carries no unit.
pub fn read_trajectory<R: Read>(input: R, space: Space) -> Result<Vec<EmaFrame>, EmaError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let expected = trajectory_header();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a.trim() != *b)
    {
        return Err(EmaError::BadTrajectory(format!(
            "header must be {}",
            expected.join(",")
        )));
    }
    let mut frames = Vec::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let seq: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| EmaError::BadTrajectory(format!("row {row_idx}: bad seq {:?}", &rec[0])))?;
        if seq != row_idx as u64 {
            return Err(EmaError::BadTrajectory(format!(
                "row {row_idx} has seq {seq}; frames must be contiguous from 0"
            )));
        }
        let mut values = [0.0; EMA_DIM];
        for (d, v) in values.iter_mut().enumerate() {
            *v = rec[d + 1].trim().parse().map_err(|_| {
                EmaError::BadTrajectory(format!("row {row_idx}: bad {} value", DIM_NAMES[d]))
            })?;
        }
        frames.push(EmaFrame::new(seq, values, space, true));
    }
    Ok(frames)
}

pub fn load_trajectory(path: impl AsRef<Path>, space: Space) -> Result<Vec<EmaFrame>, EmaError> {
    read_trajectory(std::fs::File::open(path)?, space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec_uniform(min: f64, max: f64) -> NormSpec {
        NormSpec::new("test", [min; EMA_DIM], [max; EMA_DIM]).unwrap()
    }

    fn norm_frame(v: f64) -> EmaFrame {
        EmaFrame::new(7, [v; EMA_DIM], Space::Normalized, true)
    }

    #[test]
    fn channel_order_is_canonical() {
        let names: Vec<String> = Channel::ALL
            .iter()
            .flat_map(|c| [format!("{c}x"), format!("{c}y")])
            .collect();
        assert_eq!(names, DIM_NAMES);
        assert_eq!(Channel::LowerIncisor.y(), 11);
    }

    #[test]
    fn denormalize_bounds_and_midpoint() {
        let s = spec_uniform(-10.0, 10.0);
        assert_eq!(s.denormalize(&norm_frame(-1.0)).unwrap().values[0], -10.0);
        assert_eq!(s.denormalize(&norm_frame(1.0)).unwrap().values[0], 10.0);
        let s = spec_uniform(2.0, 8.0);
        let out = s.denormalize(&norm_frame(0.0)).unwrap();
        assert_eq!(out.values[5], 5.0);
        assert_eq!(out.seq, 7);
        assert!(out.speech);
        assert_eq!(out.space, Space::Millimeters);
    }

    #[test]
    fn normalize_examples() {
        let s = spec_uniform(2.0, 8.0);
        let mm = EmaFrame::new(0, [5.0; EMA_DIM], Space::Millimeters, true);
        assert_eq!(s.normalize(&mm).unwrap().values[3], 0.0);
        let s = spec_uniform(-10.0, 10.0);
        let mm = EmaFrame::new(0, [-10.0; EMA_DIM], Space::Millimeters, true);
        assert_eq!(s.normalize(&mm).unwrap().values[0], -1.0);
    }

    #[test]
    fn round_trip_listed_values() {
        let s = spec_uniform(-3.5, 12.25);
        for x in [-1.0, -0.37, 0.0, 0.9, 1.0] {
            let back = s.normalize(&s.denormalize(&norm_frame(x)).unwrap()).unwrap();
            for v in back.values {
                assert!((v - x).abs() <= 1e-9, "{v} vs {x}");
            }
        }
    }

    #[test]
    fn out_of_range_is_rejected() {
        let s = spec_uniform(-10.0, 10.0);
        assert!(matches!(
            s.denormalize(&norm_frame(1.01)),
            Err(EmaError::ValueOutOfRange { .. })
        ));
        // within tolerance is accepted
        assert!(s.denormalize(&norm_frame(1.0 + 5e-7)).is_ok());
        let mm = EmaFrame::new(0, [10.5; EMA_DIM], Space::Millimeters, true);
        assert!(matches!(
            s.normalize(&mm),
            Err(EmaError::ValueOutOfRange { .. })
        ));
        assert!(matches!(
            s.normalize(&norm_frame(0.0)),
            Err(EmaError::WrongSpace { .. })
        ));
    }

    #[test]
    fn norm_spec_json_validation() {
        let ok = NormSpec::placeholder();
        assert_eq!(NormSpec::from_json_str(&ok.to_json_string()).unwrap(), ok);

        let eleven = r#"{"speaker":"x","dims":[{"name":"TTx","min":0,"max":1}]}"#;
        assert!(matches!(
            NormSpec::from_json_str(eleven),
            Err(EmaError::BadNormSpec(_))
        ));

        let mut v: serde_json::Value = serde_json::from_str(&ok.to_json_string()).unwrap();
        v["dims"][0]["name"] = "TTy".into();
        v["dims"][1]["name"] = "TTx".into();
        assert!(NormSpec::from_json_str(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&ok.to_json_string()).unwrap();
        v["dims"][4]["min"] = 100.0.into();
        assert!(NormSpec::from_json_str(&v.to_string()).is_err());
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let frames: Vec<EmaFrame> = (0..5)
            .map(|i| {
                let mut f = EmaFrame::zeros(i, Space::Millimeters);
                f.values[3] = i as f64 * 0.1 + 1.0 / 3.0;
                f.speech = true;
                f
            })
            .collect();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &frames).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("seq,TTx,TTy,TBx,TBy,TDx,TDy,ULx,ULy,LLx,LLy,LIx,LIy\n"));
        let back = read_trajectory(&buf[..], Space::Millimeters).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn trajectory_rejects_gaps_and_bad_header() {
        let gap = "seq,TTx,TTy,TBx,TBy,TDx,TDy,ULx,ULy,LLx,LLy,LIx,LIy\n0,0,0,0,0,0,0,0,0,0,0,0,0\n2,0,0,0,0,0,0,0,0,0,0,0,0\n";
        assert!(read_trajectory(gap.as_bytes(), Space::Millimeters).is_err());
        let bad = "seq,a\n0,1\n";
        assert!(read_trajectory(bad.as_bytes(), Space::Millimeters).is_err());
    }

    fn arb_spec() -> impl Strategy<Value = NormSpec> {
        (
            prop::array::uniform12(-100.0f64..100.0),
            prop::array::uniform12(0.01f64..80.0),
        )
            .prop_map(|(min, width)| {
                let mut max = [0.0; EMA_DIM];
                for d in 0..EMA_DIM {
                    max[d] = min[d] + width[d];
                }
                NormSpec::new("prop", min, max).unwrap()
            })
    }

    proptest! {
        #[test]
        fn denormalize_then_normalize_is_identity(
            spec in arb_spec(),
            unit in prop::array::uniform12(0.0f64..=1.0),
        ) {
            let mut mm = [0.0; EMA_DIM];
            for d in 0..EMA_DIM {
                mm[d] = spec.min_mm[d] + unit[d] * (spec.max_mm[d] - spec.min_mm[d]);
            }
            let frame = EmaFrame::new(3, mm, Space::Millimeters, false);
            let back = spec.denormalize(&spec.normalize(&frame).unwrap()).unwrap();
            for d in 0..EMA_DIM {
                prop_assert!((back.values[d] - mm[d]).abs() <= 1e-9 * (1.0 + mm[d].abs()));
            }
        }

        #[test]
        fn denormalize_is_strictly_monotone(
            spec in arb_spec(),
            a in -1.0f64..1.0,
            b in -1.0f64..1.0,
        ) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for d in 0..EMA_DIM {
                prop_assert!(spec.denormalize_value(d, lo) < spec.denormalize_value(d, hi));
            }
        }

        #[test]
        fn points_flatten_bijection(values in prop::array::uniform12(-1e3f64..1e3)) {
            let f = EmaFrame::new(9, values, Space::Millimeters, true);
            let g = EmaFrame::from_points(9, f.points(), Space::Millimeters, true);
            prop_assert_eq!(f, g);
        }
    }
}
