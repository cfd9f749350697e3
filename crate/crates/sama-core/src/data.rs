//! Synthetic pose sequences, dataset files and batching.
//!
//! Sequences are generated by forward kinematics over the preset skeleton:
//! every joint swings by a sinusoidal angle around its own axis, so bone
//! lengths are preserved exactly. Per-joint amplitudes follow a profile
//! where limb extremities move far more than the trunk; 2-D inputs are a
//! perspective projection (focal 1.0, 4 m depth offset) plus Gaussian
//! noise. Everything is deterministic per seed.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SamaError;
use crate::graph::JointGraph;
use crate::pose::PoseSeq;
use crate::rng::Rng;

pub const FOCAL: f64 = 1.0;
pub const DEPTH_OFFSET_MM: f64 = 4000.0;

/// Perspective projection of one 3-D point (mm) to normalized image
/// coordinates: `u = f * X / (Z + offset)`, same for `v`.
pub fn project_point(p: [f64; 3], focal: f64, depth_offset: f64) -> [f64; 2] {
    let z = p[2] + depth_offset;
    [focal * p[0] / z, focal * p[1] / z]
}

/// Rest-pose offsets (child minus parent, mm) of the 17-joint preset,
/// upright figure, y up, camera looking along +z.
fn h36m_rest_offsets() -> Vec<[f64; 3]> {
    vec![
        [0.0, 0.0, 0.0],      // 0 pelvis (root)
        [-120.0, 0.0, 0.0],   // 1 right hip
        [0.0, -450.0, 0.0],   // 2 right knee
        [0.0, -450.0, 0.0],   // 3 right ankle
        [120.0, 0.0, 0.0],    // 4 left hip
        [0.0, -450.0, 0.0],   // 5 left knee
        [0.0, -450.0, 0.0],   // 6 left ankle
        [0.0, 250.0, 0.0],    // 7 spine
        [0.0, 250.0, 0.0],    // 8 thorax
        [0.0, 100.0, 0.0],    // 9 neck
        [0.0, 120.0, 0.0],    // 10 head
        [170.0, 0.0, 0.0],    // 11 left shoulder
        [280.0, 0.0, 0.0],    // 12 left elbow
        [270.0, 0.0, 0.0],    // 13 left wrist
        [-170.0, 0.0, 0.0],   // 14 right shoulder
        [-280.0, 0.0, 0.0],   // 15 right elbow
        [-270.0, 0.0, 0.0],   // 16 right wrist
    ]
}

/// Default per-joint total-motion targets (mm): strictly increasing
/// outward along every chain with ~30% separation between neighboring
/// ranks, limb extremities far above the trunk.
pub fn default_amplitudes_mm() -> Vec<f64> {
    vec![
        0.0,   // pelvis
        17.6,  // right hip
        65.3,  // right knee
        110.0, // right ankle
        29.7,  // left hip
        84.9,  // left knee
        143.0, // left ankle
        8.0,   // spine
        10.4,  // thorax
        13.5,  // neck
        22.9,  // head
        38.6,  // left shoulder
        186.0, // left elbow
        315.0, // left wrist
        50.2,  // right shoulder
        242.0, // right elbow
        409.0, // right wrist
    ]
}

/// Default per-joint frequencies (Hz), staggered by tree depth so the
/// velocity cross-terms between a joint's own swing and its inherited
/// parent motion average out instead of interfering coherently.
pub fn default_frequencies_hz() -> Vec<f64> {
    vec![
        1.0, // pelvis (no own swing)
        0.9, 1.4, 1.9, // right leg
        0.9, 1.4, 1.9, // left leg
        0.9, 1.4, 1.9, 2.4, // spine to head
        1.9, 2.4, 2.9, // left arm
        1.9, 2.4, 2.9, // right arm
    ]
}

/// Generation recipe for one synthetic dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_sequences: usize,
    pub frames: usize,
    pub fps: f64,
    pub skeleton: String,
    /// Per-joint total motion target, mm. A joint inherits its parent's
    /// positional motion, so the own swing is sized to the quadratic
    /// difference against the parent target; profiles should not decrease
    /// from parent to child.
    pub amplitude_mm: Vec<f64>,
    /// Per-joint swing frequency, Hz. Swing amplitudes are scaled by the
    /// 1 Hz reference over the frequency, so measured motion intensity
    /// tracks `amplitude_mm` regardless of the frequency profile.
    pub frequency_hz: Vec<f64>,
    /// Gaussian noise added to the 2-D input, normalized units.
    pub noise_std_2d: f64,
    /// Amplitude of the slow root drift, mm.
    pub root_translation_mm: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_sequences: 16,
            frames: 64,
            fps: 50.0,
            skeleton: "h36m_17".into(),
            amplitude_mm: default_amplitudes_mm(),
            frequency_hz: default_frequencies_hz(),
            noise_std_2d: 0.004,
            root_translation_mm: 40.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SamaError> {
        if self.skeleton != "h36m_17" {
            return Err(SamaError::Config(format!(
                "unknown skeleton preset {:?}",
                self.skeleton
            )));
        }
        if self.n_sequences == 0 || self.frames == 0 {
            return Err(SamaError::Config(
                "need at least one sequence and one frame".into(),
            ));
        }
        if self.fps <= 0.0 {
            return Err(SamaError::Config("fps must be positive".into()));
        }
        if self.amplitude_mm.len() != 17 || self.frequency_hz.len() != 17 {
            return Err(SamaError::Config(
                "amplitude and frequency profiles need one entry per joint".into(),
            ));
        }
        if self.amplitude_mm.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            return Err(SamaError::Config("amplitudes must be non-negative".into()));
        }
        if self.noise_std_2d < 0.0 {
            return Err(SamaError::Config("noise std must be non-negative".into()));
        }
        Ok(())
    }
}

/// One dataset entry: 2-D input plus optional 3-D ground truth.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub id: String,
    pub skeleton: String,
    pub fps: f64,
    pub pose2d: PoseSeq,
    pub pose3d: Option<PoseSeq>,
}

fn axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}


fn mat_mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn mat_vec(a: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Generates `(ground truth 3-D, noisy 2-D input)` sequence pairs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Sequence>, SamaError> {
    spec.validate()?;
    let graph = JointGraph::h36m_17();
    let parents = graph.parents();
    let offsets = h36m_rest_offsets();
    let n = graph.n_joints;
    let mut out = Vec::with_capacity(spec.n_sequences);
    for s in 0..spec.n_sequences {
        let mut rng = Rng::derive(spec.seed, &format!("synthetic.seq.{s}"));
        // each joint swings around two axes at incommensurate rates, so
        // its trajectory is a non-planar spherical curve: depth is not an
        // affine function of the image position
        let mut phase = |_: usize| rng.uniform_in(0.0, std::f64::consts::TAU);
        let phases: Vec<[f64; 4]> = (0..n)
            .map(|j| [phase(j), phase(j), phase(j), phase(j)])
            .collect();
        // a camera-axis component keeps motion visible in 2-D, the
        // in-plane components give every joint real depth variation
        let mut axis = |_: usize| {
            normalize([
                rng.uniform_in(-0.9, 0.9),
                rng.uniform_in(-0.9, 0.9),
                1.0,
            ])
        };
        let axes: Vec<([f64; 3], [f64; 3])> = (0..n).map(|j| (axis(j), axis(j))).collect();
        let root_phase = rng.uniform_in(0.0, std::f64::consts::TAU);
        let mut noise_rng = Rng::derive(spec.seed, &format!("synthetic.noise.{s}"));

        // own swing per joint: a child inherits the parent's positional
        // motion, so the target decomposes as own^2 + parent_target^2
        let own_amp: Vec<f64> = (0..n)
            .map(|j| {
                if j == 0 {
                    0.0
                } else {
                    let a = spec.amplitude_mm[j];
                    let p = spec.amplitude_mm[parents[j]];
                    (a * a - p * p).max(0.0).sqrt()
                }
            })
            .collect();

        let mut gt = PoseSeq::zeros(spec.frames, n, 3);
        let mut input = PoseSeq::zeros(spec.frames, n, 2);
        for f in 0..spec.frames {
            let t_sec = f as f64 / spec.fps;
            let mut pos = vec![[0.0f64; 3]; n];
            let tau = std::f64::consts::TAU;
            for j in 0..n {
                if j == 0 {
                    let drift = spec.root_translation_mm;
                    pos[0] = [
                        drift * (0.31 * tau * t_sec + root_phase).sin(),
                        0.3 * drift * (0.17 * tau * t_sec + root_phase).cos(),
                        drift * (0.23 * tau * t_sec + 2.0 * root_phase).sin(),
                    ];
                    continue;
                }
                // two swing components at incommensurate rates, each a base
                // sinusoid plus a weaker second harmonic; amplitudes are
                // converted to radians through the bone length and divided
                // by the frequency so amplitude_mm stays the velocity-
                // intensity target
                const SECOND_AXIS_RATE: f64 = 1.61;
                let bone = {
                    let o = offsets[j];
                    (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt().max(100.0)
                };
                let split = own_amp[j] / (bone * std::f64::consts::SQRT_2);
                let f1 = spec.frequency_hz[j];
                let f2 = SECOND_AXIS_RATE * f1;
                let (w1, w2) = (tau * f1, tau * f2);
                let [p0, p1, p2, p3] = phases[j];
                let angle1 = split / f1
                    * ((w1 * t_sec + p0).sin() + 0.35 * (2.3 * w1 * t_sec + p1).sin());
                let angle2 = split / f2
                    * ((w2 * t_sec + p2).sin() + 0.35 * (2.3 * w2 * t_sec + p3).sin());
                let local = mat_mul3(
                    &axis_angle(axes[j].0, angle1),
                    &axis_angle(axes[j].1, angle2),
                );
                let step = mat_vec(&local, offsets[j]);
                pos[j] = [
                    pos[parents[j]][0] + step[0],
                    pos[parents[j]][1] + step[1],
                    pos[parents[j]][2] + step[2],
                ];
            }
            for j in 0..n {
                for c in 0..3 {
                    gt.set(f, j, c, pos[j][c]);
                }
                let p2 = project_point(pos[j], FOCAL, DEPTH_OFFSET_MM);
                input.set(f, j, 0, p2[0] + spec.noise_std_2d * noise_rng.normal());
                input.set(f, j, 1, p2[1] + spec.noise_std_2d * noise_rng.normal());
            }
        }
        out.push(Sequence {
            id: format!("synthetic-{s:04}"),
            skeleton: spec.skeleton.clone(),
            fps: spec.fps,
            pose2d: input,
            pose3d: Some(gt),
        });
    }
    Ok(out)
}

/// Mean frame-to-frame displacement per joint (root-centered when the
/// sequence is 3-D with `center = true`).
pub fn motion_intensity(seq: &PoseSeq, center_root: bool) -> Vec<f64> {
    let p = if center_root && seq.dim == 3 {
        seq.root_centered(0)
    } else {
        seq.clone()
    };
    let mut out = vec![0.0; p.joints];
    if p.frames < 2 {
        return out;
    }
    for j in 0..p.joints {
        let mut acc = 0.0;
        for t in 0..p.frames - 1 {
            let mut sq = 0.0;
            for c in 0..p.dim {
                let d = p.at(t + 1, j, c) - p.at(t, j, c);
                sq += d * d;
            }
            acc += sq.sqrt();
        }
        out[j] = acc / (p.frames - 1) as f64;
    }
    out
}

/// Spearman rank correlation of two equal-length slices.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let rank = |xs: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
        let mut r = vec![0.0; xs.len()];
        let mut i = 0;
        while i < idx.len() {
            // average ranks over ties
            let mut j = i;
            while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    };
    let ra = rank(a);
    let rb = rank(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

// ---- dataset files ----

#[derive(Serialize, Deserialize)]
struct SeqRecord {
    id: String,
    skeleton: String,
    fps: f64,
    pose2d: Vec<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pose3d: Option<Vec<Vec<Vec<f64>>>>,
}

fn pose_to_nested(p: &PoseSeq) -> Vec<Vec<Vec<f64>>> {
    (0..p.frames)
        .map(|t| {
            (0..p.joints)
                .map(|j| (0..p.dim).map(|c| p.at(t, j, c)).collect())
                .collect()
        })
        .collect()
}

fn nested_to_pose(v: &[Vec<Vec<f64>>], dim: usize) -> Result<PoseSeq, SamaError> {
    let frames = v.len();
    let joints = v.first().map(|f| f.len()).unwrap_or(0);
    let mut data = Vec::with_capacity(frames * joints * dim);
    for frame in v {
        if frame.len() != joints {
            return Err(SamaError::Shape("ragged joint dimension".into()));
        }
        for joint in frame {
            if joint.len() != dim {
                return Err(SamaError::Shape(format!(
                    "expected {dim} coordinates per joint, got {}",
                    joint.len()
                )));
            }
            data.extend_from_slice(joint);
        }
    }
    PoseSeq::new(frames, joints, dim, data)
}

/// Writes one JSON object per line.
pub fn save_dataset<P: AsRef<Path>>(path: P, data: &[Sequence]) -> Result<(), SamaError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for seq in data {
        let rec = SeqRecord {
            id: seq.id.clone(),
            skeleton: seq.skeleton.clone(),
            fps: seq.fps,
            pose2d: pose_to_nested(&seq.pose2d),
            pose3d: seq.pose3d.as_ref().map(pose_to_nested),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSON-lines dataset; errors name the offending line.
pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Vec<Sequence>, SamaError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SeqRecord = serde_json::from_str(&line).map_err(|e| SamaError::DatasetLine {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let pose2d = nested_to_pose(&rec.pose2d, 2).map_err(|e| SamaError::DatasetLine {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let pose3d = match &rec.pose3d {
            Some(p) => Some(nested_to_pose(p, 3).map_err(|e| SamaError::DatasetLine {
                line: i + 1,
                msg: e.to_string(),
            })?),
            None => None,
        };
        if let Some(p3) = &pose3d {
            if p3.frames != pose2d.frames || p3.joints != pose2d.joints {
                return Err(SamaError::DatasetLine {
                    line: i + 1,
                    msg: "2-D and 3-D shapes disagree".into(),
                });
            }
        }
        out.push(Sequence {
            id: rec.id,
            skeleton: rec.skeleton,
            fps: rec.fps,
            pose2d,
            pose3d,
        });
    }
    Ok(out)
}

// ---- batching ----

/// A clip reference: (sequence index, start frame).
pub type Clip = (usize, usize);

/// Uniform random clip starts, `count` of them, deterministic per rng.
pub fn random_clips(
    dataset: &[Sequence],
    clip_len: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Clip>, SamaError> {
    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset[i].pose2d.frames >= clip_len)
        .collect();
    if eligible.is_empty() {
        return Err(SamaError::Data(format!(
            "no sequence is at least {clip_len} frames long"
        )));
    }
    Ok((0..count)
        .map(|_| {
            let s = eligible[rng.below(eligible.len())];
            let span = dataset[s].pose2d.frames - clip_len;
            let start = if span == 0 { 0 } else { rng.below(span + 1) };
            (s, start)
        })
        .collect())
}

/// Deterministic strided clips covering every sequence (evaluation order).
pub fn strided_clips(dataset: &[Sequence], clip_len: usize, stride: usize) -> Vec<Clip> {
    assert!(stride > 0);
    let mut out = Vec::new();
    for (s, seq) in dataset.iter().enumerate() {
        let mut start = 0;
        while start + clip_len <= seq.pose2d.frames {
            out.push((s, start));
            start += stride;
        }
    }
    out
}

/// Materializes clips: 2-D inputs and root-centered 3-D targets.
pub fn take_clip(dataset: &[Sequence], clip: Clip, clip_len: usize) -> (PoseSeq, Option<PoseSeq>) {
    let (s, start) = clip;
    let seq = &dataset[s];
    let n = seq.pose2d.joints;
    let mut input = PoseSeq::zeros(clip_len, n, 2);
    for t in 0..clip_len {
        for j in 0..n {
            for c in 0..2 {
                input.set(t, j, c, seq.pose2d.at(start + t, j, c));
            }
        }
    }
    let target = seq.pose3d.as_ref().map(|p3| {
        let mut tgt = PoseSeq::zeros(clip_len, n, 3);
        for t in 0..clip_len {
            for j in 0..n {
                for c in 0..3 {
                    tgt.set(t, j, c, p3.at(start + t, j, c));
                }
            }
        }
        tgt.root_centered(0)
    });
    (input, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinhole_projection_hand_value() {
        // a point 500 mm right, 200 up, at the reference depth plane
        let p = project_point([500.0, 200.0, 0.0], FOCAL, DEPTH_OFFSET_MM);
        assert!((p[0] - 500.0 / 4000.0).abs() < 1e-15);
        assert!((p[1] - 200.0 / 4000.0).abs() < 1e-15);
        // moving the point deeper shrinks the image
        let q = project_point([500.0, 200.0, 1000.0], FOCAL, DEPTH_OFFSET_MM);
        assert!(q[0] < p[0]);
    }

    #[test]
    fn zero_amplitudes_give_static_pose() {
        let spec = SyntheticSpec {
            n_sequences: 1,
            frames: 10,
            amplitude_mm: vec![0.0; 17],
            root_translation_mm: 0.0,
            noise_std_2d: 0.0,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let gt = data[0].pose3d.as_ref().unwrap();
        for t in 1..10 {
            for j in 0..17 {
                for c in 0..3 {
                    assert!((gt.at(t, j, c) - gt.at(0, j, c)).abs() < 1e-9);
                }
            }
        }
        let p2 = &data[0].pose2d;
        for t in 1..10 {
            for j in 0..17 {
                assert_eq!(p2.at(t, j, 0), p2.at(0, j, 0));
            }
        }
    }

    #[test]
    fn bone_lengths_invariant_over_time() {
        let spec = SyntheticSpec {
            n_sequences: 2,
            frames: 25,
            ..Default::default()
        };
        let graph = JointGraph::h36m_17();
        let parents = graph.parents();
        for seq in generate_synthetic(&spec).unwrap() {
            let gt = seq.pose3d.unwrap();
            for j in 1..17 {
                let mut len0 = 0.0;
                for t in 0..gt.frames {
                    let mut sq = 0.0;
                    for c in 0..3 {
                        let d = gt.at(t, j, c) - gt.at(t, parents[j], c);
                        sq += d * d;
                    }
                    let len = sq.sqrt();
                    if t == 0 {
                        len0 = len;
                    } else {
                        assert!((len - len0).abs() < 1e-9, "joint {j} frame {t}");
                    }
                }
                assert!(len0 > 0.0);
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = SyntheticSpec {
            n_sequences: 2,
            frames: 8,
            seed: 77,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pose2d.data(), y.pose2d.data());
            assert_eq!(
                x.pose3d.as_ref().unwrap().data(),
                y.pose3d.as_ref().unwrap().data()
            );
        }
    }

    #[test]
    fn motion_intensity_orders_like_amplitudes() {
        // noise-free: Spearman rank correlation must be exactly 1
        for seed in 0..6 {
            let spec = SyntheticSpec {
                n_sequences: 3,
                frames: 100,
                noise_std_2d: 0.0,
                root_translation_mm: 0.0,
                seed,
                ..Default::default()
            };
            let data = generate_synthetic(&spec).unwrap();
            let mut intensity = vec![0.0; 17];
            for seq in &data {
                let m = motion_intensity(seq.pose3d.as_ref().unwrap(), true);
                for j in 0..17 {
                    intensity[j] += m[j];
                }
            }
            let rho = spearman(&intensity, &spec.amplitude_mm);
            assert!(
                (rho - 1.0).abs() < 1e-12,
                "seed {seed}: rho = {rho}, intensity = {intensity:?}"
            );
        }
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let spec = SyntheticSpec {
            n_sequences: 2,
            frames: 6,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_dataset(&path, &data).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in data.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.pose2d.data(), b.pose2d.data());
            assert_eq!(
                a.pose3d.as_ref().unwrap().data(),
                b.pose3d.as_ref().unwrap().data()
            );
        }
    }

    #[test]
    fn missing_pose3d_loads_as_inference_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"a","skeleton":"h36m_17","fps":50.0,"pose2d":[[[0.1,0.2]]]}"#,
        )
        .unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert!(loaded[0].pose3d.is_none());
        assert_eq!(loaded[0].pose2d.frames, 1);
    }

    #[test]
    fn truncated_line_names_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"skeleton\":\"h36m_17\",\"fps\":50.0,\"pose2d\":[[[0.1,0.2]]]}\n{\"id\":\"b\",\"pose2d\":[[[0.1,",
        )
        .unwrap();
        match load_dataset(&path) {
            Err(SamaError::DatasetLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a line error, got {other:?}"),
        }
    }

    #[test]
    fn clips_are_deterministic_and_root_centered() {
        let spec = SyntheticSpec {
            n_sequences: 3,
            frames: 20,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let mut r1 = Rng::seed_from(5);
        let mut r2 = Rng::seed_from(5);
        let c1 = random_clips(&data, 8, 10, &mut r1).unwrap();
        let c2 = random_clips(&data, 8, 10, &mut r2).unwrap();
        assert_eq!(c1, c2);
        let (_, tgt) = take_clip(&data, c1[0], 8);
        let tgt = tgt.unwrap();
        for t in 0..8 {
            for c in 0..3 {
                assert_eq!(tgt.at(t, 0, c), 0.0);
            }
        }
    }

    #[test]
    fn strided_eval_clips_cover_sequences() {
        // stride = clip length and sequences of twice that length: 2 clips each
        let spec = SyntheticSpec {
            n_sequences: 2,
            frames: 16,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let clips = strided_clips(&data, 8, 8);
        assert_eq!(clips.len(), 4);
        assert_eq!(clips[0], (0, 0));
        assert_eq!(clips[1], (0, 8));
        assert_eq!(clips[2], (1, 0));
        assert_eq!(clips[3], (1, 8));
    }

    #[test]
    fn spearman_handles_perfect_and_inverse_order() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 30.0, 40.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }
}
