use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BankError;
use crate::quat::UNIT_TOLERANCE;

pub const CONTAINER_MAGIC: &[u8; 4] = b"MOSB";

/// Payload order inside a container, also the order of [`MotionClip`] fields.
pub const FIELD_NAMES: [&str; 6] = [
    "joint_pos",
    "joint_vel",
    "body_pos_w",
    "body_quat_w",
    "body_lin_vel_w",
    "body_ang_vel_w",
];

/// Where a clip came from. Adaptation clips form the interface regime during
/// residual distillation; everything else is general data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceId {
    OpticalMocap,
    InertialMocap,
    Public,
    Generated,
    Adaptation,
    #[default]
    Synthetic,
}

impl SourceId {
    pub fn is_adaptation(self) -> bool {
        matches!(self, SourceId::Adaptation)
    }
}

/// One motion clip in robot space. Per-frame arrays are flattened row-major;
/// quaternions are scalar-first (w, x, y, z).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub fps: f32,
    pub dof: usize,
    pub bodies: usize,
    pub joint_pos: Vec<f32>,
    pub joint_vel: Vec<f32>,
    pub body_pos_w: Vec<f32>,
    pub body_quat_w: Vec<f32>,
    pub body_lin_vel_w: Vec<f32>,
    pub body_ang_vel_w: Vec<f32>,
    pub label: String,
    pub source_id: SourceId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionHeader {
    pub fps: f32,
    pub dof: usize,
    pub bodies: usize,
    pub frames: usize,
    pub fields: Vec<FieldSpec>,
    pub label: String,
    pub source_id: SourceId,
    #[serde(default = "default_quat_order")]
    pub quat_order: String,
}

fn default_quat_order() -> String {
    "wxyz".to_string()
}

impl MotionClip {
    pub fn frames(&self) -> usize {
        if self.dof == 0 {
            0
        } else {
            self.joint_pos.len() / self.dof
        }
    }

    /// Per-frame width of each field, in `FIELD_NAMES` order.
    pub fn field_widths(&self) -> [usize; 6] {
        let b = self.bodies;
        [self.dof, self.dof, 3 * b, 4 * b, 3 * b, 3 * b]
    }

    pub fn fields(&self) -> [&[f32]; 6] {
        [
            &self.joint_pos,
            &self.joint_vel,
            &self.body_pos_w,
            &self.body_quat_w,
            &self.body_lin_vel_w,
            &self.body_ang_vel_w,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Vec<f32>; 6] {
        [
            &mut self.joint_pos,
            &mut self.joint_vel,
            &mut self.body_pos_w,
            &mut self.body_quat_w,
            &mut self.body_lin_vel_w,
            &mut self.body_ang_vel_w,
        ]
    }

    pub fn joint_pos_at(&self, frame: usize) -> &[f32] {
        &self.joint_pos[frame * self.dof..(frame + 1) * self.dof]
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.fps as f64
    }

    /// Checks every clip invariant: shared frame count >= 2, unit quaternions, fps > 0.
    pub fn validate(&self) -> Result<(), BankError> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(BankError::BadRate(self.fps as f64));
        }
        if self.dof == 0 {
            return Err(BankError::MalformedFile("dof must be positive".into()));
        }
        let frames = self.joint_pos.len() / self.dof;
        for ((name, width), data) in FIELD_NAMES.iter().zip(self.field_widths()).zip(self.fields()) {
            if data.len() != frames * width {
                return Err(BankError::MalformedFile(format!(
                    "field {name} holds {} values, expected {frames} x {width}",
                    data.len()
                )));
            }
        }
        if frames < 2 {
            return Err(BankError::MalformedFile(format!("clip has {frames} frames, need >= 2")));
        }
        for (i, q) in self.body_quat_w.chunks_exact(4).enumerate() {
            let norm = q.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE || !norm.is_finite() {
                return Err(BankError::NonUnitQuaternion {
                    frame: i / self.bodies,
                    body: i % self.bodies,
                    norm,
                });
            }
        }
        Ok(())
    }

    pub fn header(&self) -> MotionHeader {
        let frames = self.frames();
        let b = self.bodies;
        let shapes: [Vec<usize>; 6] = [
            vec![frames, self.dof],
            vec![frames, self.dof],
            vec![frames, b, 3],
            vec![frames, b, 4],
            vec![frames, b, 3],
            vec![frames, b, 3],
        ];
        MotionHeader {
            fps: self.fps,
            dof: self.dof,
            bodies: b,
            frames,
            fields: FIELD_NAMES
                .iter()
                .zip(shapes)
                .map(|(n, shape)| FieldSpec { name: n.to_string(), shape })
                .collect(),
            label: self.label.clone(),
            source_id: self.source_id,
            quat_order: default_quat_order(),
        }
    }
}

/// Serializes a clip: magic, u32 LE header length, JSON header, then each
/// field as little-endian f32 in header order.
pub fn write_clip<W: Write>(clip: &MotionClip, mut out: W) -> std::io::Result<()> {
    let header = serde_json::to_vec(&clip.header()).map_err(std::io::Error::other)?;
    out.write_all(CONTAINER_MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::new();
    for field in clip.fields() {
        buf.clear();
        buf.reserve(field.len() * 4);
        for v in field {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

/// Parses and validates a container from a reader.
pub fn read_clip<R: Read>(mut input: R) -> Result<MotionClip, BankError> {
    let malformed = |m: String| BankError::MalformedFile(m);
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| malformed(format!("read failed: {e}")))?;
    if bytes.len() < 8 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(malformed("missing MOSB magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < header_len {
        return Err(malformed("truncated header".into()));
    }
    let header: MotionHeader = serde_json::from_slice(&body[..header_len])
        .map_err(|e| malformed(format!("header: {e}")))?;
    if header.quat_order != "wxyz" {
        return Err(malformed(format!("unsupported quaternion order {}", header.quat_order)));
    }
    if !(header.fps > 0.0) {
        return Err(BankError::BadRate(header.fps as f64));
    }

    let mut clip = MotionClip {
        fps: header.fps,
        dof: header.dof,
        bodies: header.bodies,
        joint_pos: Vec::new(),
        joint_vel: Vec::new(),
        body_pos_w: Vec::new(),
        body_quat_w: Vec::new(),
        body_lin_vel_w: Vec::new(),
        body_ang_vel_w: Vec::new(),
        label: header.label.clone(),
        source_id: header.source_id,
    };
    if header.fields.len() != FIELD_NAMES.len() {
        return Err(malformed(format!("expected {} fields, found {}", FIELD_NAMES.len(), header.fields.len())));
    }
    let widths = clip.field_widths();
    let mut payload = &body[header_len..];
    for (i, spec) in header.fields.iter().enumerate() {
        if spec.name != FIELD_NAMES[i] {
            return Err(malformed(format!("field {i} is {}, expected {}", spec.name, FIELD_NAMES[i])));
        }
        let rows = *spec.shape.first().ok_or_else(|| malformed(format!("{}: empty shape", spec.name)))?;
        let width: usize = spec.shape[1..].iter().product();
        if rows != header.frames {
            return Err(malformed(format!("{} has {rows} rows but header declares {} frames", spec.name, header.frames)));
        }
        if width != widths[i] {
            return Err(malformed(format!("{} row width {width}, expected {}", spec.name, widths[i])));
        }
        let n = rows * width;
        if payload.len() < n * 4 {
            return Err(malformed(format!("{}: payload truncated", spec.name)));
        }
        let (chunk, rest) = payload.split_at(n * 4);
        *clip.fields_mut()[i] = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        payload = rest;
    }
    if !payload.is_empty() {
        return Err(malformed(format!("{} trailing bytes", payload.len())));
    }
    clip.validate()?;
    Ok(clip)
}

pub fn ingest_clip(path: &Path) -> Result<MotionClip, BankError> {
    let file = std::fs::File::open(path).map_err(|source| BankError::Io { path: path.to_path_buf(), source })?;
    read_clip(std::io::BufReader::new(file))
}

impl MotionClip {
    pub fn save(&self, path: &Path) -> Result<(), BankError> {
        let io = |source| BankError::Io { path: path.to_path_buf(), source };
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        write_clip(self, &mut w).map_err(io)?;
        w.flush().map_err(io)
    }
}
