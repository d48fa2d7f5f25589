//! Synthetic sparse human point clouds.
//!
//! A stick figure (sphere head, box torso, tube arms and legs) walks along
//! +x. Arms and legs swing sinusoidally in the sagittal plane, left and right
//! in antiphase, and each arm swings opposite to the leg on its side. Every
//! frame samples a fixed number of points on the part surfaces in
//! proportion to surface area, adds Gaussian noise, and omits parts that are
//! currently dropped. Dropout follows a two-state Markov chain per part whose
//! stationary drop rate is `part_dropout_prob`, so parts vanish for runs of
//! consecutive frames. The torso never drops, so no frame is empty.
//!
//! Coordinates: x forward, y to the subject's left, z up, meters.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{FineLabel, Frame, LabeledPoint, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_frames: usize,
    pub points_per_frame: usize,
    pub gait_period_frames: f64,
    /// Standard deviation of per-coordinate noise, meters.
    pub noise_sigma: f64,
    /// Long-run fraction of frames in which a non-torso part is missing.
    pub part_dropout_prob: f64,
    /// Mean length of a dropout run, frames.
    pub dropout_run_frames: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_frames: 100,
            points_per_frame: 64,
            gait_period_frames: 20.0,
            noise_sigma: 0.02,
            part_dropout_prob: 0.15,
            dropout_run_frames: 3.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_frames == 0 {
            return fail("n_frames must be at least 1".into());
        }
        if self.points_per_frame < 6 {
            return fail(format!(
                "points_per_frame must be at least 6, got {}",
                self.points_per_frame
            ));
        }
        if !(self.gait_period_frames > 0.0 && self.gait_period_frames.is_finite()) {
            return fail("gait_period_frames must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.part_dropout_prob) {
            return fail(format!(
                "part_dropout_prob must lie in [0, 1], got {}",
                self.part_dropout_prob
            ));
        }
        if !(self.dropout_run_frames >= 1.0 && self.dropout_run_frames.is_finite()) {
            return fail("dropout_run_frames must be at least 1".into());
        }
        Ok(())
    }
}

/// Surface of one rigid body part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PartShape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        min: [f64; 3],
        max: [f64; 3],
    },
    /// Open cylinder around the segment `start → end`.
    Tube {
        start: [f64; 3],
        end: [f64; 3],
        radius: f64,
    },
}

impl PartShape {
    pub fn area(&self) -> f64 {
        match *self {
            PartShape::Sphere { radius, .. } => 2.0 * TAU * radius * radius,
            PartShape::Box { min, max } => {
                let [a, b, c] = std::array::from_fn::<f64, 3, _>(|k| max[k] - min[k]);
                2.0 * (a * b + b * c + a * c)
            }
            PartShape::Tube { start, end, radius } => TAU * radius * dist(start, end),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        match *self {
            PartShape::Sphere { center, radius } => loop {
                let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                let norm = dist(v, [0.0; 3]);
                if norm > 1e-12 {
                    break std::array::from_fn(|k| center[k] + radius * v[k] / norm);
                }
            },
            PartShape::Box { min, max } => {
                let e: [f64; 3] = std::array::from_fn(|k| max[k] - min[k]);
                // Faces normal to x, y, z, each appearing twice.
                let areas = [e[1] * e[2], e[0] * e[2], e[0] * e[1]];
                let total: f64 = 2.0 * areas.iter().sum::<f64>();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (k, a) in areas.iter().enumerate() {
                    if pick < 2.0 * a {
                        axis = k;
                        break;
                    }
                    pick -= 2.0 * a;
                }
                let high = rng.random::<bool>();
                std::array::from_fn(|k| {
                    if k == axis {
                        if high {
                            max[k]
                        } else {
                            min[k]
                        }
                    } else {
                        min[k] + rng.random::<f64>() * e[k]
                    }
                })
            }
            PartShape::Tube { start, end, radius } => {
                let len = dist(start, end);
                let axis: [f64; 3] = std::array::from_fn(|k| (end[k] - start[k]) / len);
                let (u, v) = orthonormal_pair(axis);
                let t = rng.random::<f64>() * len;
                let phi = rng.random::<f64>() * TAU;
                let (s, c) = phi.sin_cos();
                std::array::from_fn(|k| start[k] + t * axis[k] + radius * (c * u[k] + s * v[k]))
            }
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Two unit vectors orthogonal to unit `axis` and to each other.
fn orthonormal_pair(axis: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if axis[1].abs() < 0.9 {
        [0.0, 1.0, 0.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let u = cross(axis, helper);
    let n = dist(u, [0.0; 3]);
    let u = u.map(|x| x / n);
    (u, cross(axis, u))
}

/// Subject proportions, meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Body {
    pub leg_length: f64,
    pub leg_radius: f64,
    pub hip_offset: f64,
    pub torso_gap: f64,
    pub torso_height: f64,
    pub torso_half_width: f64,
    pub torso_half_depth: f64,
    pub shoulder_offset: f64,
    pub shoulder_drop: f64,
    pub arm_length: f64,
    pub arm_radius: f64,
    pub head_radius: f64,
    pub neck: f64,
    pub arm_swing: f64,
    pub leg_swing: f64,
    pub stride_per_frame: f64,
}

impl Body {
    pub fn nominal() -> Self {
        Self {
            leg_length: 0.85,
            leg_radius: 0.065,
            hip_offset: 0.1,
            torso_gap: 0.05,
            torso_height: 0.55,
            torso_half_width: 0.18,
            torso_half_depth: 0.1,
            shoulder_offset: 0.25,
            shoulder_drop: 0.03,
            arm_length: 0.6,
            arm_radius: 0.045,
            head_radius: 0.11,
            neck: 0.03,
            arm_swing: 0.35,
            leg_swing: 0.4,
            stride_per_frame: 0.06,
        }
    }

    /// Nominal body with an overall scale in [0.9, 1.1] and independent limb
    /// length factors in [0.95, 1.05].
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = Self::nominal();
        let s = rng.random_range(0.9..=1.1);
        let arm = rng.random_range(0.95..=1.05);
        let leg = rng.random_range(0.95..=1.05);
        Self {
            leg_length: n.leg_length * s * leg,
            leg_radius: n.leg_radius * s,
            hip_offset: n.hip_offset * s,
            torso_gap: n.torso_gap * s,
            torso_height: n.torso_height * s,
            torso_half_width: n.torso_half_width * s,
            torso_half_depth: n.torso_half_depth * s,
            shoulder_offset: n.shoulder_offset * s,
            shoulder_drop: n.shoulder_drop * s,
            arm_length: n.arm_length * s * arm,
            arm_radius: n.arm_radius * s,
            head_radius: n.head_radius * s,
            neck: n.neck * s,
            arm_swing: n.arm_swing,
            leg_swing: n.leg_swing,
            stride_per_frame: n.stride_per_frame * s,
        }
    }
}

/// Part geometry for one frame, indexed by [`FineLabel::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonPose {
    /// Gait phase in `[0, 2π)`.
    pub phase: f64,
    pub parts: [PartShape; 6],
}

impl SkeletonPose {
    pub fn new(body: &Body, forward: f64, phase: f64) -> Self {
        let b = body;
        let hip_z = b.leg_length;
        let torso_bottom = hip_z + b.torso_gap;
        let torso_top = torso_bottom + b.torso_height;
        let shoulder_z = torso_top - b.shoulder_drop;
        let swing = phase.sin();

        let limb = |joint: [f64; 3], angle: f64, length: f64, radius: f64| {
            let dir = [angle.sin(), 0.0, -angle.cos()];
            PartShape::Tube {
                start: joint,
                end: std::array::from_fn(|k| joint[k] + length * dir[k]),
                radius,
            }
        };

        let head = PartShape::Sphere {
            center: [forward, 0.0, torso_top + b.neck + b.head_radius],
            radius: b.head_radius,
        };
        let torso = PartShape::Box {
            min: [
                forward - b.torso_half_depth,
                -b.torso_half_width,
                torso_bottom,
            ],
            max: [forward + b.torso_half_depth, b.torso_half_width, torso_top],
        };
        let left_arm = limb(
            [forward, b.shoulder_offset, shoulder_z],
            b.arm_swing * swing,
            b.arm_length,
            b.arm_radius,
        );
        let right_arm = limb(
            [forward, -b.shoulder_offset, shoulder_z],
            -b.arm_swing * swing,
            b.arm_length,
            b.arm_radius,
        );
        let left_leg = limb(
            [forward, b.hip_offset, hip_z],
            -b.leg_swing * swing,
            b.leg_length,
            b.leg_radius,
        );
        let right_leg = limb(
            [forward, -b.hip_offset, hip_z],
            b.leg_swing * swing,
            b.leg_length,
            b.leg_radius,
        );
        Self {
            phase,
            parts: [head, torso, left_arm, right_arm, left_leg, right_leg],
        }
    }
}

/// Points per part: one each, the rest by largest remainder of area share.
fn allocate(parts: &[PartShape; 6], total: usize) -> [usize; 6] {
    let areas = parts.map(|p| p.area());
    let area_sum: f64 = areas.iter().sum();
    let spare = total - parts.len();
    let quotas = areas.map(|a| a / area_sum * spare as f64);
    let mut counts = quotas.map(|q| 1 + q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor()))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Markov dropout state per part. The torso slot is never dropped.
struct Dropout {
    drop: f64,
    recover: f64,
    dropped: [bool; 6],
}

impl Dropout {
    fn new(cfg: &GenConfig, rng: &mut impl Rng) -> Self {
        let p = cfg.part_dropout_prob;
        let mut recover = 1.0 / cfg.dropout_run_frames;
        let mut drop = p * recover / (1.0 - p);
        if drop > 1.0 {
            drop = 1.0;
            recover = (1.0 - p) / p;
        }
        let mut dropped = [false; 6];
        for (i, d) in dropped.iter_mut().enumerate() {
            let r = rng.random::<f64>();
            *d = i != FineLabel::Chest.index() && r < p;
        }
        Self {
            drop,
            recover,
            dropped,
        }
    }

    fn advance(&mut self, rng: &mut impl Rng) {
        for (i, d) in self.dropped.iter_mut().enumerate() {
            let r = rng.random::<f64>();
            if i == FineLabel::Chest.index() {
                continue;
            }
            *d = if *d { r >= self.recover } else { r < self.drop };
        }
    }
}

/// Generated sequence together with the per-frame poses and dropout masks.
#[derive(Clone, Debug)]
pub struct Generated {
    pub sequence: Sequence,
    pub body: Body,
    pub poses: Vec<SkeletonPose>,
    /// `dropped[k][part]` for frame `k`.
    pub dropped: Vec<[bool; 6]>,
}

pub fn generate(cfg: &GenConfig) -> Result<Sequence> {
    Ok(generate_detailed(cfg, "subject-0000")?.sequence)
}

pub fn generate_detailed(cfg: &GenConfig, subject_id: &str) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let body = Body::random(&mut rng);
    let phase0 = rng.random::<f64>() * TAU;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut dropout = Dropout::new(cfg, &mut rng);

    let counts = allocate(
        &SkeletonPose::new(&body, 0.0, 0.0).parts,
        cfg.points_per_frame,
    );
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut poses = Vec::with_capacity(cfg.n_frames);
    let mut masks = Vec::with_capacity(cfg.n_frames);
    for k in 0..cfg.n_frames {
        if k > 0 {
            dropout.advance(&mut rng);
        }
        let phase = (phase0 + TAU * k as f64 / cfg.gait_period_frames).rem_euclid(TAU);
        let pose = SkeletonPose::new(&body, body.stride_per_frame * k as f64, phase);
        let mut points = Vec::with_capacity(cfg.points_per_frame);
        for (part, shape) in pose.parts.iter().enumerate() {
            for _ in 0..counts[part] {
                let mut p = shape.sample(&mut rng);
                if cfg.noise_sigma > 0.0 {
                    for c in &mut p {
                        *c += noise.sample(&mut rng);
                    }
                }
                if !dropout.dropped[part] {
                    let label = FineLabel::from_index(part).expect("six parts");
                    points.push(LabeledPoint::new(p, label));
                }
            }
        }
        points.shuffle(&mut rng);
        frames.push(Frame::new(k as u64, points)?);
        poses.push(pose);
        masks.push(dropout.dropped);
    }
    Ok(Generated {
        sequence: Sequence::new(subject_id, frames)?,
        body,
        poses,
        dropped: masks,
    })
}

/// Seed for subject `index` of a dataset generated from `seed`.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 finalizer.
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn subject_id(index: usize) -> String {
    format!("subject-{index:04}")
}

/// `n_subjects` sequences with independent derived seeds and body proportions.
pub fn generate_dataset(cfg: &GenConfig, n_subjects: usize) -> Result<Vec<Sequence>> {
    if n_subjects == 0 {
        return Err(Error::Config("n_subjects must be at least 1".into()));
    }
    (0..n_subjects)
        .map(|i| {
            let sub = GenConfig {
                seed: derive_seed(cfg.seed, i),
                ..cfg.clone()
            };
            Ok(generate_detailed(&sub, &subject_id(i))?.sequence)
        })
        .collect()
}
