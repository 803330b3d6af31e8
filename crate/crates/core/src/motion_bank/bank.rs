use super::{BankError, MotionClip, SourceId};

/// Which per-frame fields a [`ReferenceWindow`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSet {
    /// Joint positions followed by joint velocities.
    #[default]
    Joints,
    /// Joint fields followed by every world-frame body field.
    JointsAndBodies,
}

/// All clips concatenated field by field. Immutable once built.
#[derive(Debug, Clone)]
pub struct MotionBank {
    fps: f32,
    dof: usize,
    bodies: usize,
    lengths: Vec<usize>,
    offsets: Vec<usize>,
    labels: Vec<String>,
    sources: Vec<SourceId>,
    joint_pos: Vec<f32>,
    joint_vel: Vec<f32>,
    body_pos_w: Vec<f32>,
    body_quat_w: Vec<f32>,
    body_lin_vel_w: Vec<f32>,
    body_ang_vel_w: Vec<f32>,
}

/// Flattened `E x (H * D)` reference windows, frame-major then feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceWindow {
    pub envs: usize,
    pub horizon: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ReferenceWindow {
    pub fn env(&self, e: usize) -> &[f32] {
        let stride = self.horizon * self.width;
        &self.data[e * stride..(e + 1) * stride]
    }
}

impl MotionBank {
    pub fn build(clips: &[MotionClip]) -> Result<Self, BankError> {
        let first = clips.first().ok_or(BankError::EmptyBank)?;
        let total: usize = clips.iter().map(MotionClip::frames).sum();
        let mut bank = MotionBank {
            fps: first.fps,
            dof: first.dof,
            bodies: first.bodies,
            lengths: Vec::with_capacity(clips.len()),
            offsets: Vec::with_capacity(clips.len()),
            labels: Vec::with_capacity(clips.len()),
            sources: Vec::with_capacity(clips.len()),
            joint_pos: Vec::with_capacity(total * first.dof),
            joint_vel: Vec::with_capacity(total * first.dof),
            body_pos_w: Vec::with_capacity(total * first.bodies * 3),
            body_quat_w: Vec::with_capacity(total * first.bodies * 4),
            body_lin_vel_w: Vec::with_capacity(total * first.bodies * 3),
            body_ang_vel_w: Vec::with_capacity(total * first.bodies * 3),
        };
        let mut offset = 0;
        for clip in clips {
            let mismatch = |what, a: String, b: String| BankError::HeterogeneousSchema { what, expected: a, found: b };
            if clip.dof != bank.dof {
                return Err(mismatch("dof", bank.dof.to_string(), clip.dof.to_string()));
            }
            if clip.bodies != bank.bodies {
                return Err(mismatch("body count", bank.bodies.to_string(), clip.bodies.to_string()));
            }
            if clip.fps != bank.fps {
                return Err(mismatch("fps", bank.fps.to_string(), clip.fps.to_string()));
            }
            clip.validate()?;
            bank.offsets.push(offset);
            bank.lengths.push(clip.frames());
            bank.labels.push(clip.label.clone());
            bank.sources.push(clip.source_id);
            offset += clip.frames();
            bank.joint_pos.extend_from_slice(&clip.joint_pos);
            bank.joint_vel.extend_from_slice(&clip.joint_vel);
            bank.body_pos_w.extend_from_slice(&clip.body_pos_w);
            bank.body_quat_w.extend_from_slice(&clip.body_quat_w);
            bank.body_lin_vel_w.extend_from_slice(&clip.body_lin_vel_w);
            bank.body_ang_vel_w.extend_from_slice(&clip.body_ang_vel_w);
        }
        Ok(bank)
    }

    pub fn motion_count(&self) -> usize {
        self.lengths.len()
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn body_count(&self) -> usize {
        self.bodies
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total_frames(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.lengths.last().unwrap())
    }

    pub fn label(&self, m: usize) -> &str {
        &self.labels[m]
    }

    pub fn source(&self, m: usize) -> SourceId {
        self.sources[m]
    }

    pub fn length(&self, m: usize) -> Result<usize, BankError> {
        self.lengths
            .get(m)
            .copied()
            .ok_or(BankError::MotionOutOfRange { motion: m, count: self.motion_count() })
    }

    /// `g(m, t) = O_m + min(t, L_m - 1)`.
    pub fn global_index(&self, m: usize, t: usize) -> Result<usize, BankError> {
        let len = self.length(m)?;
        Ok(self.offsets[m] + t.min(len - 1))
    }

    pub fn feature_width(&self, features: FeatureSet) -> usize {
        match features {
            FeatureSet::Joints => 2 * self.dof,
            FeatureSet::JointsAndBodies => 2 * self.dof + 13 * self.bodies,
        }
    }

    /// Gathers frames `t_e .. t_e + H - 1` (clamped per motion) for every env.
    pub fn gather_window(
        &self,
        assignments: &[usize],
        times: &[usize],
        horizon: usize,
        features: FeatureSet,
    ) -> Result<ReferenceWindow, BankError> {
        assert_eq!(assignments.len(), times.len(), "one time per assignment");
        assert!(horizon >= 1, "horizon must be at least one frame");
        let width = self.feature_width(features);
        let mut data = Vec::with_capacity(assignments.len() * horizon * width);
        for (&m, &t) in assignments.iter().zip(times) {
            for k in 0..horizon {
                let row = self.global_index(m, t.saturating_add(k))?;
                self.push_row(row, features, &mut data);
            }
        }
        Ok(ReferenceWindow { envs: assignments.len(), horizon, width, data })
    }

    fn push_row(&self, row: usize, features: FeatureSet, out: &mut Vec<f32>) {
        let d = self.dof;
        out.extend_from_slice(&self.joint_pos[row * d..(row + 1) * d]);
        out.extend_from_slice(&self.joint_vel[row * d..(row + 1) * d]);
        if features == FeatureSet::JointsAndBodies {
            let b = self.bodies;
            out.extend_from_slice(&self.body_pos_w[row * 3 * b..(row + 1) * 3 * b]);
            out.extend_from_slice(&self.body_quat_w[row * 4 * b..(row + 1) * 4 * b]);
            out.extend_from_slice(&self.body_lin_vel_w[row * 3 * b..(row + 1) * 3 * b]);
            out.extend_from_slice(&self.body_ang_vel_w[row * 3 * b..(row + 1) * 3 * b]);
        }
    }

    /// Borrowed view of one global row, for callers that want typed access.
    pub fn row(&self, m: usize, t: usize) -> Result<FrameRef<'_>, BankError> {
        let row = self.global_index(m, t)?;
        let (d, b) = (self.dof, self.bodies);
        Ok(FrameRef {
            joint_pos: &self.joint_pos[row * d..(row + 1) * d],
            joint_vel: &self.joint_vel[row * d..(row + 1) * d],
            body_pos_w: &self.body_pos_w[row * 3 * b..(row + 1) * 3 * b],
            body_quat_w: &self.body_quat_w[row * 4 * b..(row + 1) * 4 * b],
            body_lin_vel_w: &self.body_lin_vel_w[row * 3 * b..(row + 1) * 3 * b],
            body_ang_vel_w: &self.body_ang_vel_w[row * 3 * b..(row + 1) * 3 * b],
        })
    }

    /// Copies motion `m` back out as a standalone clip.
    pub fn clip(&self, m: usize) -> Result<MotionClip, BankError> {
        let len = self.length(m)?;
        let (o, d, b) = (self.offsets[m], self.dof, self.bodies);
        Ok(MotionClip {
            fps: self.fps,
            dof: d,
            bodies: b,
            joint_pos: self.joint_pos[o * d..(o + len) * d].to_vec(),
            joint_vel: self.joint_vel[o * d..(o + len) * d].to_vec(),
            body_pos_w: self.body_pos_w[o * 3 * b..(o + len) * 3 * b].to_vec(),
            body_quat_w: self.body_quat_w[o * 4 * b..(o + len) * 4 * b].to_vec(),
            body_lin_vel_w: self.body_lin_vel_w[o * 3 * b..(o + len) * 3 * b].to_vec(),
            body_ang_vel_w: self.body_ang_vel_w[o * 3 * b..(o + len) * 3 * b].to_vec(),
            label: self.labels[m].clone(),
            source_id: self.sources[m],
        })
    }
}

/// One bank row, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a> {
    pub joint_pos: &'a [f32],
    pub joint_vel: &'a [f32],
    pub body_pos_w: &'a [f32],
    pub body_quat_w: &'a [f32],
    pub body_lin_vel_w: &'a [f32],
    pub body_ang_vel_w: &'a [f32],
}
