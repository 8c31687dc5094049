//! Procedural stylized skeletal motion in a root-velocity representation.
//!
//! Eight joints, 54 features per frame:
//!
//! ```text
//! [0]      root angular velocity (rad/frame, about vertical)
//! [1..3]   root linear velocity x/z (m/frame, in the root's local frame)
//! [3]      root (pelvis) height (m)
//! [4..28]  local joint positions, 8 joints * xyz, in the heading-aligned
//!          ground-projected root frame (y is height above ground)
//! [28..52] joint velocities = per-channel finite difference of positions
//! [52..54] foot contact flags (left, right), 1 when foot height < 0.05 m
//! ```
//!
//! Content (walk / run / hop / circle walk) sets trajectory and limb phase
//! pattern; style modulates it through a fixed [`StyleParams`] vector per
//! style word. Feet follow a pinned-stance gait: during stance the foot's
//! world position is held (its local position drifts back at exactly the
//! root speed), so honest foot-skate numbers are low by construction.

use crate::tensor::Tensor;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const NUM_JOINTS: usize = 8;
pub const FEATURE_DIM: usize = 4 + 3 * NUM_JOINTS + 3 * NUM_JOINTS + 2; // 54
pub const FPS: u32 = 20;
pub const MIN_FRAMES: usize = 40;
pub const MAX_FRAMES: usize = 200;

/// Foot height below which a foot counts as grounded (m).
pub const CONTACT_HEIGHT: f64 = 0.05;
/// Horizontal foot speed above which a grounded foot counts as skating
/// (m/frame).
pub const SKATE_SPEED: f64 = 0.01;

// Channel offsets into a frame row.
pub const CH_ANGVEL: usize = 0;
pub const CH_LINVEL_X: usize = 1;
pub const CH_LINVEL_Z: usize = 2;
pub const CH_HEIGHT: usize = 3;
pub const CH_POS: usize = 4;
pub const CH_VEL: usize = CH_POS + 3 * NUM_JOINTS; // 28
pub const CH_CONTACT: usize = CH_VEL + 3 * NUM_JOINTS; // 52

// Joint indices.
pub const J_ROOT: usize = 0;
pub const J_PELVIS: usize = 1;
pub const J_SPINE: usize = 2;
pub const J_HEAD: usize = 3;
pub const J_LHAND: usize = 4;
pub const J_RHAND: usize = 5;
pub const J_LFOOT: usize = 6;
pub const J_RFOOT: usize = 7;

/// One joint of the rest skeleton.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: &'static str,
    pub parent: Option<usize>,
    /// Rest offset from the parent, meters.
    pub offset: [f64; 3],
}

/// Fixed 8-joint skeleton used by the whole pipeline.
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
}

impl Skeleton {
    pub fn standard() -> Self {
        let joints = vec![
            Joint { name: "root", parent: None, offset: [0.0, 0.0, 0.0] },
            Joint { name: "pelvis", parent: Some(J_ROOT), offset: [0.0, 0.90, 0.0] },
            Joint { name: "spine", parent: Some(J_PELVIS), offset: [0.0, 0.35, 0.0] },
            Joint { name: "head", parent: Some(J_SPINE), offset: [0.0, 0.30, 0.0] },
            Joint { name: "left_hand", parent: Some(J_SPINE), offset: [-0.35, -0.05, 0.0] },
            Joint { name: "right_hand", parent: Some(J_SPINE), offset: [0.35, -0.05, 0.0] },
            Joint { name: "left_foot", parent: Some(J_PELVIS), offset: [-0.10, -0.90, 0.0] },
            Joint { name: "right_foot", parent: Some(J_PELVIS), offset: [0.10, -0.90, 0.0] },
        ];
        Self { joints }
    }

    /// Rest-pose joint positions (offsets accumulated down the tree).
    pub fn rest_positions(&self) -> Vec<[f64; 3]> {
        let mut pos = vec![[0.0; 3]; self.joints.len()];
        for (i, j) in self.joints.iter().enumerate() {
            let base = j.parent.map(|p| pos[p]).unwrap_or([0.0; 3]);
            pos[i] = [base[0] + j.offset[0], base[1] + j.offset[1], base[2] + j.offset[2]];
        }
        pos
    }
}

/// The four content classes, conditioned via full sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContentLabel {
    Walk,
    Run,
    Hop,
    CircleWalk,
}

impl ContentLabel {
    pub const ALL: [ContentLabel; 4] =
        [ContentLabel::Walk, ContentLabel::Run, ContentLabel::Hop, ContentLabel::CircleWalk];

    pub fn word(&self) -> &'static str {
        match self {
            ContentLabel::Walk => "walk",
            ContentLabel::Run => "run",
            ContentLabel::Hop => "hop",
            ContentLabel::CircleWalk => "circle_walk",
        }
    }

    /// The sentence used as the diffusion text condition.
    pub fn text(&self) -> &'static str {
        match self {
            ContentLabel::Walk => "a person is walking",
            ContentLabel::Run => "a person is running",
            ContentLabel::Hop => "a person is hopping",
            ContentLabel::CircleWalk => "a person is walking in a circle",
        }
    }

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).unwrap()
    }

    pub fn from_word(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.word() == s)
            .ok_or_else(|| Error::Vocabulary(format!("unknown content word '{s}'")))
    }

    pub fn from_text(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.text() == s)
            .ok_or_else(|| Error::Vocabulary(format!("unknown content sentence '{s}'")))
    }
}

/// The eight style classes, referenced by single words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StyleLabel {
    Neutral,
    Old,
    Proud,
    Crouched,
    Fast,
    Tiptoe,
    Wide,
    PhoneLeft,
}

impl StyleLabel {
    pub const ALL: [StyleLabel; 8] = [
        StyleLabel::Neutral,
        StyleLabel::Old,
        StyleLabel::Proud,
        StyleLabel::Crouched,
        StyleLabel::Fast,
        StyleLabel::Tiptoe,
        StyleLabel::Wide,
        StyleLabel::PhoneLeft,
    ];

    pub fn word(&self) -> &'static str {
        match self {
            StyleLabel::Neutral => "neutral",
            StyleLabel::Old => "old",
            StyleLabel::Proud => "proud",
            StyleLabel::Crouched => "crouched",
            StyleLabel::Fast => "fast",
            StyleLabel::Tiptoe => "tiptoe",
            StyleLabel::Wide => "wide",
            StyleLabel::PhoneLeft => "phone_left",
        }
    }

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|s| s == self).unwrap()
    }

    pub fn from_word(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.word() == s)
            .ok_or_else(|| Error::Vocabulary(format!("unknown style word '{s}'")))
    }

    pub fn params(&self) -> StyleParams {
        match self {
            StyleLabel::Neutral => StyleParams {
                speed_scale: 1.00,
                stride_amplitude: 1.00,
                posture_pitch_offset: 0.00,
                arm_swing_asymmetry: 0.0,
                step_height: 0.12,
                torso_sway: 0.10,
            },
            StyleLabel::Old => StyleParams {
                speed_scale: 0.55,
                stride_amplitude: 0.55,
                posture_pitch_offset: 0.45,
                arm_swing_asymmetry: 0.1,
                step_height: 0.06,
                torso_sway: 0.05,
            },
            StyleLabel::Proud => StyleParams {
                speed_scale: 0.95,
                stride_amplitude: 1.15,
                posture_pitch_offset: -0.20,
                arm_swing_asymmetry: 0.0,
                step_height: 0.15,
                torso_sway: 0.30,
            },
            StyleLabel::Crouched => StyleParams {
                speed_scale: 0.80,
                stride_amplitude: 0.70,
                posture_pitch_offset: 0.80,
                arm_swing_asymmetry: 0.0,
                step_height: 0.08,
                torso_sway: 0.10,
            },
            StyleLabel::Fast => StyleParams {
                speed_scale: 1.80,
                stride_amplitude: 1.30,
                posture_pitch_offset: 0.10,
                arm_swing_asymmetry: 0.0,
                step_height: 0.14,
                torso_sway: 0.15,
            },
            StyleLabel::Tiptoe => StyleParams {
                speed_scale: 0.85,
                stride_amplitude: 0.80,
                posture_pitch_offset: 0.05,
                arm_swing_asymmetry: 0.0,
                step_height: 0.20,
                torso_sway: 0.08,
            },
            StyleLabel::Wide => StyleParams {
                speed_scale: 0.90,
                stride_amplitude: 1.05,
                posture_pitch_offset: 0.00,
                arm_swing_asymmetry: 0.0,
                step_height: 0.12,
                torso_sway: 0.95,
            },
            StyleLabel::PhoneLeft => StyleParams {
                speed_scale: 0.90,
                stride_amplitude: 0.90,
                posture_pitch_offset: 0.05,
                arm_swing_asymmetry: 1.0,
                step_height: 0.11,
                torso_sway: 0.12,
            },
        }
    }
}

/// Scalar knobs a style applies on top of a content's base gait.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleParams {
    /// Gait speed multiplier (0.5..2.0).
    pub speed_scale: f64,
    /// Stride/arm-swing length multiplier (0.5..1.5).
    pub stride_amplitude: f64,
    /// Forward torso lean, radians; negative leans back (-0.3..0.9).
    pub posture_pitch_offset: f64,
    /// 0 = symmetric arm swing, 1 = left arm pinned to the ear (0..1).
    pub arm_swing_asymmetry: f64,
    /// Peak swing-foot lift, meters (0.05..0.25).
    pub step_height: f64,
    /// Lateral torso bob amplitude factor; also widens stance (0..1).
    pub torso_sway: f64,
}

impl StyleParams {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.speed_scale,
            self.stride_amplitude,
            self.posture_pitch_offset,
            self.arm_swing_asymmetry,
            self.step_height,
            self.torso_sway,
        ]
    }
}

/// A fixed-rate motion clip with content/style labels attached.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: u32,
    /// Content sentence, e.g. "a person is walking".
    pub content: String,
    /// Style word, e.g. "tiptoe".
    pub style: String,
    num_frames: usize,
    frames: Vec<f64>,
}

impl MotionSequence {
    pub fn new(frames: Vec<f64>, content: String, style: String, fps: u32) -> Result<Self> {
        if frames.len() % FEATURE_DIM != 0 || frames.is_empty() {
            return Err(Error::Dimension(format!(
                "frame buffer length {} not a positive multiple of {FEATURE_DIM}",
                frames.len()
            )));
        }
        let num_frames = frames.len() / FEATURE_DIM;
        Ok(Self { fps, content, style, num_frames, frames })
    }

    /// Rebuild a sequence from raw per-frame features (e.g. a decoder
    /// output): velocity channels are recomputed from the position
    /// channels and contact flags are thresholded to exact {0,1}, so the
    /// type's invariants hold for arbitrary raw input.
    pub fn from_raw_features(raw: &Tensor, content: String, style: String, fps: u32) -> Result<Self> {
        if raw.cols() != FEATURE_DIM {
            return Err(Error::Dimension(format!(
                "raw features have {} columns, want {FEATURE_DIM}",
                raw.cols()
            )));
        }
        let f = raw.rows();
        let mut frames = raw.data().to_vec();
        for t in 0..f {
            for ch in 0..3 * NUM_JOINTS {
                let v = if t == 0 {
                    0.0
                } else {
                    frames[t * FEATURE_DIM + CH_POS + ch]
                        - frames[(t - 1) * FEATURE_DIM + CH_POS + ch]
                };
                frames[t * FEATURE_DIM + CH_VEL + ch] = v;
            }
            for c in 0..2 {
                let idx = t * FEATURE_DIM + CH_CONTACT + c;
                frames[idx] = if frames[idx] >= 0.5 { 1.0 } else { 0.0 };
            }
        }
        Self::new(frames, content, style, fps)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * FEATURE_DIM..(t + 1) * FEATURE_DIM]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.frames[t * FEATURE_DIM..(t + 1) * FEATURE_DIM]
    }

    pub fn raw(&self) -> &[f64] {
        &self.frames
    }

    /// Frames as an F x 54 tensor.
    pub fn feature_matrix(&self) -> Tensor {
        Tensor::new(self.num_frames, FEATURE_DIM, self.frames.clone())
    }

    /// Per-channel mean over frames (54 values) — the cheap summary used by
    /// the separability check and baseline classifiers.
    pub fn mean_features(&self) -> Vec<f64> {
        let mut out = vec![0.0; FEATURE_DIM];
        for t in 0..self.num_frames {
            for (o, v) in out.iter_mut().zip(self.frame(t)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= self.num_frames as f64;
        }
        out
    }

    /// Mean root speed in m/frame.
    pub fn mean_root_speed(&self) -> f64 {
        let mut s = 0.0;
        for t in 0..self.num_frames {
            let f = self.frame(t);
            s += (f[CH_LINVEL_X] * f[CH_LINVEL_X] + f[CH_LINVEL_Z] * f[CH_LINVEL_Z]).sqrt();
        }
        s / self.num_frames as f64
    }

    /// Check the representation invariants: finite values, binary contact
    /// flags, velocity channels equal to position differences within 1e-5.
    pub fn validate(&self) -> Result<()> {
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite value in motion".into()));
        }
        for t in 0..self.num_frames {
            let f = self.frame(t);
            for c in 0..2 {
                let v = f[CH_CONTACT + c];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Contract(format!(
                        "contact flag {v} at frame {t} is not binary"
                    )));
                }
            }
            for ch in 0..3 * NUM_JOINTS {
                let want = if t == 0 {
                    0.0
                } else {
                    f[CH_POS + ch] - self.frame(t - 1)[CH_POS + ch]
                };
                if (f[CH_VEL + ch] - want).abs() > 1e-5 {
                    return Err(Error::Contract(format!(
                        "velocity channel {ch} inconsistent at frame {t}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Integrated world-space root positions (x, z), one per frame, plus
    /// the per-frame heading. Frame 0 sits at the origin with heading 0.
    pub fn root_trajectory(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.num_frames);
        let (mut x, mut z, mut heading) = (0.0, 0.0, 0.0);
        out.push((0.0, 0.0, 0.0));
        for t in 1..self.num_frames {
            let f = self.frame(t);
            heading += f[CH_ANGVEL];
            let (s, c) = heading.sin_cos();
            x += c * f[CH_LINVEL_X] + s * f[CH_LINVEL_Z];
            z += -s * f[CH_LINVEL_X] + c * f[CH_LINVEL_Z];
            out.push((x, z, heading));
        }
        out
    }

    /// World-space (x, z, height) of one foot joint at every frame.
    pub fn foot_world(&self, joint: usize) -> Vec<(f64, f64, f64)> {
        assert!(joint == J_LFOOT || joint == J_RFOOT, "foot_world expects a foot joint");
        let traj = self.root_trajectory();
        let mut out = Vec::with_capacity(self.num_frames);
        for t in 0..self.num_frames {
            let f = self.frame(t);
            let lx = f[CH_POS + 3 * joint];
            let ly = f[CH_POS + 3 * joint + 1];
            let lz = f[CH_POS + 3 * joint + 2];
            let (rx, rz, heading) = traj[t];
            let (s, c) = heading.sin_cos();
            out.push((rx + c * lx + s * lz, rz + (-s * lx + c * lz), ly));
        }
        out
    }
}

/// Fraction of frames (off the first, which has no speed) where either foot
/// is below `h_eps` while moving horizontally faster than `v_eps` in world
/// space.
pub fn foot_skate_frames(m: &MotionSequence, h_eps: f64, v_eps: f64) -> f64 {
    if m.num_frames() < 2 {
        return 0.0;
    }
    let left = m.foot_world(J_LFOOT);
    let right = m.foot_world(J_RFOOT);
    let mut count = 0usize;
    for t in 1..m.num_frames() {
        let skate = |w: &Vec<(f64, f64, f64)>| {
            let (x1, z1, h) = w[t];
            let (x0, z0, _) = w[t - 1];
            let speed = ((x1 - x0).powi(2) + (z1 - z0).powi(2)).sqrt();
            h < h_eps && speed > v_eps
        };
        if skate(&left) || skate(&right) {
            count += 1;
        }
    }
    count as f64 / (m.num_frames() - 1) as f64
}

fn smoothstep(w: f64) -> f64 {
    let w = w.clamp(0.0, 1.0);
    w * w * (3.0 - 2.0 * w)
}

/// Swing-foot lift profile: rises fast off the ground, clears the contact
/// threshold for nearly the whole swing, peaks at 1.
fn lift_profile(w: f64) -> f64 {
    (2.2 * (std::f64::consts::PI * w).sin()).clamp(0.0, 1.0).powf(0.7)
}

/// Horizontal swing travel: completes by 85% of the swing so the foot
/// descends vertically onto its hold and the landing frame carries no
/// horizontal displacement.
fn swing_travel(w: f64) -> f64 {
    smoothstep(w / 0.85)
}

struct Gait {
    /// Step cycles per frame (before speed scaling).
    freq: f64,
    /// Root speed, m/frame (before speed scaling).
    speed: f64,
    /// Extra pelvis bounce amplitude, m.
    bounce: f64,
    /// Both feet move in phase (hop) instead of alternating.
    in_phase: bool,
}

fn gait_for(content: ContentLabel) -> Gait {
    match content {
        ContentLabel::Walk => Gait { freq: 0.050, speed: 0.060, bounce: 0.015, in_phase: false },
        ContentLabel::Run => Gait { freq: 0.085, speed: 0.110, bounce: 0.035, in_phase: false },
        ContentLabel::Hop => Gait { freq: 0.065, speed: 0.045, bounce: 0.090, in_phase: true },
        ContentLabel::CircleWalk => {
            Gait { freq: 0.050, speed: 0.050, bounce: 0.015, in_phase: false }
        }
    }
}

/// Discrete world-space root states (x, z, heading), integrated with the
/// same recurrence the skate metric uses, extended `extra` frames past the
/// clip so stance holds can be anchored slightly beyond the end.
fn root_states(num_frames: usize, extra: usize, speed: f64, omega: f64) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(num_frames + extra);
    let (mut x, mut z, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    out.push((x, z, heading));
    for _ in 1..num_frames + extra {
        heading += omega;
        let (s, c) = heading.sin_cos();
        x += s * speed;
        z += c * speed;
        out.push((x, z, heading));
    }
    out
}

/// World position of a foot driven by stance holds: grounded phases pin the
/// foot at a fixed world point (mid-stance root pose plus lateral offset);
/// swing phases interpolate to the next hold.
struct FootTrack {
    holds: Vec<(f64, f64)>,
    offset_cycles: f64,
    stance_frac: f64,
    freq: f64,
}

impl FootTrack {
    fn new(
        roots: &[(f64, f64, f64)],
        num_frames: usize,
        freq: f64,
        stance_frac: f64,
        offset_cycles: f64,
        lateral: f64,
    ) -> Self {
        let cycles_total = freq * num_frames as f64 + offset_cycles;
        let max_k = cycles_total.ceil() as usize + 1;
        let mut holds = Vec::with_capacity(max_k + 1);
        for k in 0..=max_k {
            // Frame at the middle of stance k for this foot.
            let t_mid = ((k as f64 + 0.5 * stance_frac - offset_cycles) / freq).max(0.0);
            let ti = (t_mid.round() as usize).min(roots.len() - 1);
            let (rx, rz, heading) = roots[ti];
            let (s, c) = heading.sin_cos();
            holds.push((rx + c * lateral, rz + (-s) * lateral));
        }
        Self { holds, offset_cycles, stance_frac, freq }
    }

    /// (world x, world z, lift in [0,1]) at frame t.
    fn at(&self, t: usize) -> (f64, f64, f64) {
        let c = self.freq * t as f64 + self.offset_cycles;
        let k = c.floor() as usize;
        let u = c.fract();
        let (cur, next) = (self.holds[k], self.holds[(k + 1).min(self.holds.len() - 1)]);
        if u < self.stance_frac {
            (cur.0, cur.1, 0.0)
        } else {
            let w = (u - self.stance_frac) / (1.0 - self.stance_frac);
            let s = swing_travel(w);
            (cur.0 + (next.0 - cur.0) * s, cur.1 + (next.1 - cur.1) * s, lift_profile(w))
        }
    }
}

/// Generate one labeled motion clip. Deterministic in all arguments.
pub fn generate_motion(
    content: ContentLabel,
    style: StyleLabel,
    seed: u64,
    num_frames: usize,
) -> Result<MotionSequence> {
    if !(MIN_FRAMES..=MAX_FRAMES).contains(&num_frames) {
        return Err(Error::Contract(format!(
            "num_frames {num_frames} outside [{MIN_FRAMES}, {MAX_FRAMES}]"
        )));
    }
    let p = style.params();
    let g = gait_for(content);
    let mut rng =
        ChaCha8Rng::seed_from_u64(crate::mix_seed(&[content.index() as u64, style.index() as u64, seed]));

    let freq = g.freq * p.speed_scale;
    let speed = g.speed * p.speed_scale;
    let omega = if content == ContentLabel::CircleWalk {
        2.0 * std::f64::consts::PI / num_frames as f64
    } else {
        0.0
    };
    let stance_frac = (0.5 * p.stride_amplitude).clamp(0.2, 0.8);
    let stance_x = 0.10 + 0.25 * p.torso_sway;
    let foot_base = 0.6 * (p.step_height - 0.10).max(0.0);
    let pitch = p.posture_pitch_offset;
    let pelvis_base = 0.90 * (1.0 - 0.22 * pitch.max(0.0)) + foot_base;
    let lat_amp = 0.06 * p.torso_sway;
    let swing_amp = 0.16 * p.stride_amplitude * p.speed_scale.sqrt();

    // Feet are driven in world space from stance holds anchored on the same
    // discrete root integration the skate metric replays.
    let extra = (1.0 / freq).ceil() as usize + 4;
    let roots = root_states(num_frames, extra, speed, omega);
    let right_off = if g.in_phase { 0.0 } else { 0.5 };
    let lfoot = FootTrack::new(&roots, num_frames, freq, stance_frac, 0.0, -stance_x);
    let rfoot = FootTrack::new(&roots, num_frames, freq, stance_frac, right_off, stance_x);

    let mut frames = vec![0.0; num_frames * FEATURE_DIM];
    let noise = |rng: &mut ChaCha8Rng| 0.002 * crate::tensor::sample_standard_normal(rng);

    for t in 0..num_frames {
        let phi = 2.0 * std::f64::consts::PI * freq * t as f64;

        let bounce = g.bounce * phi.sin().max(0.0);
        let pelvis_h = pelvis_base + bounce;
        let pelvis_x = lat_amp * (phi + std::f64::consts::FRAC_PI_2).sin();

        // Joint positions in the root frame (root itself is the origin).
        let mut pos = [[0.0f64; 3]; NUM_JOINTS];
        pos[J_PELVIS] = [pelvis_x, pelvis_h, 0.0];
        pos[J_SPINE] = [pelvis_x * 0.8, pelvis_h + 0.35 * pitch.cos(), 0.35 * pitch.sin()];
        let head_pitch = 1.3 * pitch;
        pos[J_HEAD] = [
            pelvis_x * 0.4,
            pos[J_SPINE][1] + 0.30 * head_pitch.cos(),
            pos[J_SPINE][2] + 0.30 * head_pitch.sin(),
        ];

        let swing_l = swing_amp * (phi + std::f64::consts::PI).sin();
        let swing_r = if g.in_phase {
            swing_l
        } else {
            swing_amp * phi.sin()
        };
        let lhand_walk = [
            pos[J_SPINE][0] - 0.35,
            pos[J_SPINE][1] - 0.05,
            pos[J_SPINE][2] + swing_l,
        ];
        let lhand_phone = [
            pos[J_SPINE][0] - 0.10,
            pos[J_SPINE][1] + 0.28,
            pos[J_SPINE][2] + 0.06,
        ];
        let a = p.arm_swing_asymmetry;
        pos[J_LHAND] = [
            lhand_walk[0] * (1.0 - a) + lhand_phone[0] * a,
            lhand_walk[1] * (1.0 - a) + lhand_phone[1] * a,
            lhand_walk[2] * (1.0 - a) + lhand_phone[2] * a,
        ];
        pos[J_RHAND] =
            [pos[J_SPINE][0] + 0.35, pos[J_SPINE][1] - 0.05, pos[J_SPINE][2] + swing_r];

        // Feet: world-space track converted into the root's local frame.
        let (rx, rz, heading) = roots[t];
        let (sh, ch) = heading.sin_cos();
        let place = |track: &FootTrack| {
            let (wx, wz, lift) = track.at(t);
            let (dx, dz) = (wx - rx, wz - rz);
            let lx = ch * dx - sh * dz;
            let lz = sh * dx + ch * dz;
            [lx, foot_base + p.step_height * lift, lz]
        };
        pos[J_LFOOT] = place(&lfoot);
        pos[J_RFOOT] = place(&rfoot);

        // Seeded observation noise on every non-root joint coordinate; root
        // channels stay clean so trajectory integration is exact.
        for joint in pos.iter_mut().skip(1) {
            for c in joint.iter_mut() {
                *c += noise(&mut rng);
            }
        }

        let row = &mut frames[t * FEATURE_DIM..(t + 1) * FEATURE_DIM];
        row[CH_ANGVEL] = if t == 0 { 0.0 } else { omega };
        row[CH_LINVEL_X] = 0.0;
        row[CH_LINVEL_Z] = if t == 0 { 0.0 } else { speed };
        row[CH_HEIGHT] = pos[J_PELVIS][1];
        for (j, pj) in pos.iter().enumerate() {
            row[CH_POS + 3 * j] = pj[0];
            row[CH_POS + 3 * j + 1] = pj[1];
            row[CH_POS + 3 * j + 2] = pj[2];
        }
        row[CH_CONTACT] = if pos[J_LFOOT][1] < CONTACT_HEIGHT { 1.0 } else { 0.0 };
        row[CH_CONTACT + 1] = if pos[J_RFOOT][1] < CONTACT_HEIGHT { 1.0 } else { 0.0 };
    }

    // Velocity channels from position differences (frame 0 gets zeros).
    for t in 1..num_frames {
        for ch in 0..3 * NUM_JOINTS {
            let cur = frames[t * FEATURE_DIM + CH_POS + ch];
            let prev = frames[(t - 1) * FEATURE_DIM + CH_POS + ch];
            frames[t * FEATURE_DIM + CH_VEL + ch] = cur - prev;
        }
    }

    MotionSequence::new(frames, content.text().to_string(), style.word().to_string(), FPS)
}

/// String-label front door for the CLI; unknown labels are vocabulary
/// errors.
pub fn generate_motion_str(
    content_word: &str,
    style_word: &str,
    seed: u64,
    num_frames: usize,
) -> Result<MotionSequence> {
    let content = ContentLabel::from_word(content_word)?;
    let style = StyleLabel::from_word(style_word)?;
    generate_motion(content, style, seed, num_frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_is_a_tree_with_grounded_feet() {
        let sk = Skeleton::standard();
        assert_eq!(sk.joints.len(), NUM_JOINTS);
        assert!(sk.joints[0].parent.is_none());
        for (i, j) in sk.joints.iter().enumerate().skip(1) {
            assert!(j.parent.unwrap() < i, "parent index must precede child");
        }
        let rest = sk.rest_positions();
        assert!((rest[J_LFOOT][1]).abs() < 1e-9, "rest left foot on the ground");
        assert!((rest[J_RFOOT][1]).abs() < 1e-9, "rest right foot on the ground");
        assert!((rest[J_HEAD][1] - 1.55).abs() < 1e-9);
    }

    #[test]
    fn labels_roundtrip_and_reject_unknown() {
        for c in ContentLabel::ALL {
            assert_eq!(ContentLabel::from_word(c.word()).unwrap(), c);
            assert_eq!(ContentLabel::from_text(c.text()).unwrap(), c);
        }
        for s in StyleLabel::ALL {
            assert_eq!(StyleLabel::from_word(s.word()).unwrap(), s);
        }
        assert!(matches!(
            ContentLabel::from_word("moonwalk"),
            Err(crate::Error::Vocabulary(_))
        ));
        assert!(matches!(StyleLabel::from_word("zombie"), Err(crate::Error::Vocabulary(_))));
    }

    #[test]
    fn style_params_differ_in_at_least_two_fields() {
        for a in StyleLabel::ALL {
            for b in StyleLabel::ALL {
                if a == b {
                    continue;
                }
                let pa = a.params().as_array();
                let pb = b.params().as_array();
                let diffs = pa.iter().zip(&pb).filter(|(x, y)| (**x - **y).abs() > 1e-9).count();
                assert!(diffs >= 2, "{:?} vs {:?} differ in only {diffs} params", a, b);
            }
        }
    }

    #[test]
    fn generated_motion_shape_and_invariants() {
        let m = generate_motion(ContentLabel::Walk, StyleLabel::Neutral, 0, 80).unwrap();
        assert_eq!(m.num_frames(), 80);
        assert_eq!(m.frame(0).len(), FEATURE_DIM);
        m.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_motion(ContentLabel::Hop, StyleLabel::Proud, 42, 60).unwrap();
        let b = generate_motion(ContentLabel::Hop, StyleLabel::Proud, 42, 60).unwrap();
        assert_eq!(a.raw(), b.raw());
        let c = generate_motion(ContentLabel::Hop, StyleLabel::Proud, 43, 60).unwrap();
        assert_ne!(a.raw(), c.raw());
    }

    #[test]
    fn frame_bounds_are_enforced() {
        assert!(matches!(
            generate_motion(ContentLabel::Walk, StyleLabel::Neutral, 0, 39),
            Err(crate::Error::Contract(_))
        ));
        assert!(matches!(
            generate_motion(ContentLabel::Walk, StyleLabel::Neutral, 0, 201),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn circle_walk_returns_near_start() {
        let m = generate_motion(ContentLabel::CircleWalk, StyleLabel::Neutral, 7, 120).unwrap();
        let traj = m.root_trajectory();
        let (x, z, _) = *traj.last().unwrap();
        let dist = (x * x + z * z).sqrt();
        assert!(dist < 0.5, "circle endpoint {dist} m from start");
        // And it actually went somewhere: max radius sensibly positive.
        let max_r = traj.iter().map(|(x, z, _)| (x * x + z * z).sqrt()).fold(0.0, f64::max);
        assert!(max_r > 0.3, "circle radius {max_r}");
    }

    #[test]
    fn straight_walk_goes_straight() {
        let m = generate_motion(ContentLabel::Walk, StyleLabel::Neutral, 3, 100).unwrap();
        let traj = m.root_trajectory();
        let (x, z, _) = *traj.last().unwrap();
        assert!(x.abs() < 1e-9, "no lateral drift, got {x}");
        assert!(z > 3.0, "walked forward {z} m");
    }

    #[test]
    fn old_is_slower_than_fast() {
        let old = generate_motion(ContentLabel::Walk, StyleLabel::Old, 1, 80).unwrap();
        let fast = generate_motion(ContentLabel::Walk, StyleLabel::Fast, 1, 80).unwrap();
        assert!(old.mean_root_speed() < fast.mean_root_speed());
    }

    #[test]
    fn crouched_lowers_the_pelvis() {
        let neutral = generate_motion(ContentLabel::Walk, StyleLabel::Neutral, 1, 80).unwrap();
        let crouched = generate_motion(ContentLabel::Walk, StyleLabel::Crouched, 1, 80).unwrap();
        let mean_h = |m: &MotionSequence| {
            (0..m.num_frames()).map(|t| m.frame(t)[CH_HEIGHT]).sum::<f64>() / m.num_frames() as f64
        };
        assert!(mean_h(&crouched) < mean_h(&neutral) - 0.05);
    }

    #[test]
    fn tiptoe_feet_stay_off_the_ground() {
        let m = generate_motion(ContentLabel::Walk, StyleLabel::Tiptoe, 5, 80).unwrap();
        for t in 0..m.num_frames() {
            let f = m.frame(t);
            assert_eq!(f[CH_CONTACT], 0.0);
            assert_eq!(f[CH_CONTACT + 1], 0.0);
        }
    }

    #[test]
    fn walk_has_alternating_contacts() {
        let m = generate_motion(ContentLabel::Walk, StyleLabel::Neutral, 2, 100).unwrap();
        let mut l = 0;
        let mut r = 0;
        for t in 0..m.num_frames() {
            let f = m.frame(t);
            l += f[CH_CONTACT] as usize;
            r += f[CH_CONTACT + 1] as usize;
        }
        assert!(l > 20 && r > 20, "both feet ground regularly (l={l}, r={r})");
    }

    #[test]
    fn static_pose_has_zero_foot_skate() {
        // A constant pose: positions fixed, velocities zero.
        let mut frames = vec![0.0; 50 * FEATURE_DIM];
        for t in 0..50 {
            let row = &mut frames[t * FEATURE_DIM..(t + 1) * FEATURE_DIM];
            row[CH_HEIGHT] = 0.9;
            row[CH_POS + 3 * J_LFOOT] = -0.1; // feet on the ground
            row[CH_POS + 3 * J_RFOOT] = 0.1;
            row[CH_CONTACT] = 1.0;
            row[CH_CONTACT + 1] = 1.0;
        }
        let m = MotionSequence::new(frames, "static".into(), "none".into(), FPS).unwrap();
        assert_eq!(foot_skate_frames(&m, CONTACT_HEIGHT, SKATE_SPEED), 0.0);
    }

    #[test]
    fn pinned_feet_translating_root_is_full_skate() {
        // Feet glued at local positions while the root translates every
        // frame: every scored frame skates.
        let mut frames = vec![0.0; 40 * FEATURE_DIM];
        for t in 0..40 {
            let row = &mut frames[t * FEATURE_DIM..(t + 1) * FEATURE_DIM];
            row[CH_LINVEL_Z] = if t == 0 { 0.0 } else { 0.05 };
            row[CH_HEIGHT] = 0.9;
            row[CH_POS + 3 * J_LFOOT] = -0.1;
            row[CH_POS + 3 * J_RFOOT] = 0.1;
            row[CH_CONTACT] = 1.0;
            row[CH_CONTACT + 1] = 1.0;
        }
        let m = MotionSequence::new(frames, "drag".into(), "none".into(), FPS).unwrap();
        assert_eq!(foot_skate_frames(&m, CONTACT_HEIGHT, SKATE_SPEED), 1.0);
    }

    #[test]
    fn foot_skate_matches_independent_oracle() {
        // Re-derive the metric with a standalone loop (own trajectory
        // integration, own foot placement) and demand an exact match.
        let m = generate_motion(ContentLabel::Walk, StyleLabel::Neutral, 11, 90).unwrap();
        let mut heading = 0.0;
        let (mut rx, mut rz) = (0.0, 0.0);
        let mut world: Vec<[(f64, f64, f64); 2]> = Vec::new();
        for t in 0..m.num_frames() {
            let f = m.frame(t);
            if t > 0 {
                heading += f[CH_ANGVEL];
                let (s, c) = (heading.sin(), heading.cos());
                rx += c * f[CH_LINVEL_X] + s * f[CH_LINVEL_Z];
                rz += -s * f[CH_LINVEL_X] + c * f[CH_LINVEL_Z];
            }
            let mut feet = [(0.0, 0.0, 0.0); 2];
            for (k, j) in [J_LFOOT, J_RFOOT].iter().enumerate() {
                let (s, c) = (heading.sin(), heading.cos());
                let lx = f[CH_POS + 3 * j];
                let ly = f[CH_POS + 3 * j + 1];
                let lz = f[CH_POS + 3 * j + 2];
                feet[k] = (rx + c * lx + s * lz, rz + (-s * lx + c * lz), ly);
            }
            world.push(feet);
        }
        let mut count = 0;
        for t in 1..m.num_frames() {
            let mut skate = false;
            for k in 0..2 {
                let (x1, z1, h) = world[t][k];
                let (x0, z0, _) = world[t - 1][k];
                let sp = ((x1 - x0).powi(2) + (z1 - z0).powi(2)).sqrt();
                skate |= h < CONTACT_HEIGHT && sp > SKATE_SPEED;
            }
            if skate {
                count += 1;
            }
        }
        let oracle = count as f64 / (m.num_frames() - 1) as f64;
        assert_eq!(foot_skate_frames(&m, CONTACT_HEIGHT, SKATE_SPEED), oracle);
    }

    #[test]
    fn generated_walk_skates_rarely() {
        // The pinned-stance construction should keep honest foot skate low.
        let m = generate_motion(ContentLabel::Walk, StyleLabel::Neutral, 13, 120).unwrap();
        let r = foot_skate_frames(&m, CONTACT_HEIGHT, SKATE_SPEED);
        assert!(r < 0.15, "neutral walk skate ratio {r}");
    }

    #[test]
    fn from_raw_features_restores_invariants() {
        let m = generate_motion(ContentLabel::Run, StyleLabel::Wide, 9, 50).unwrap();
        let mut raw = m.feature_matrix();
        // Corrupt velocities and blur contacts, as a decoder output would.
        for t in 0..raw.rows() {
            raw.set(t, CH_VEL + 3, 123.0);
            raw.set(t, CH_CONTACT, 0.7);
            raw.set(t, CH_CONTACT + 1, 0.2);
        }
        let fixed =
            MotionSequence::from_raw_features(&raw, m.content.clone(), m.style.clone(), FPS)
                .unwrap();
        fixed.validate().unwrap();
        assert_eq!(fixed.frame(10)[CH_CONTACT], 1.0);
        assert_eq!(fixed.frame(10)[CH_CONTACT + 1], 0.0);
    }

    #[test]
    fn phone_left_pins_the_left_hand_up() {
        let m = generate_motion(ContentLabel::Walk, StyleLabel::PhoneLeft, 3, 80).unwrap();
        let n = generate_motion(ContentLabel::Walk, StyleLabel::Neutral, 3, 80).unwrap();
        let mean_y = |m: &MotionSequence| {
            (0..m.num_frames()).map(|t| m.frame(t)[CH_POS + 3 * J_LHAND + 1]).sum::<f64>()
                / m.num_frames() as f64
        };
        // Phone hand rides near the head, well above a swinging hand.
        assert!(mean_y(&m) > mean_y(&n) + 0.2);
    }
}
