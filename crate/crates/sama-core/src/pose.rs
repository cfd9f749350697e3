//! Pose sequences: `[T][N][k]` keypoint arrays.

use crate::error::SamaError;

/// A sequence of poses, row-major `[T][N][k]`.
///
/// `k = 2` for normalized 2-D image coordinates, `k = 3` for root-relative
/// millimeter coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSeq {
    pub frames: usize,
    pub joints: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl PoseSeq {
    pub fn new(frames: usize, joints: usize, dim: usize, data: Vec<f64>) -> Result<Self, SamaError> {
        if frames == 0 || joints == 0 {
            return Err(SamaError::Shape(
                "pose sequence needs at least one frame and one joint".into(),
            ));
        }
        if dim != 2 && dim != 3 {
            return Err(SamaError::Shape(format!(
                "coordinate dimension must be 2 or 3, got {dim}"
            )));
        }
        if data.len() != frames * joints * dim {
            return Err(SamaError::Shape(format!(
                "expected {} values for [{}][{}][{}], got {}",
                frames * joints * dim,
                frames,
                joints,
                dim,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SamaError::NonFinite("pose sequence".into()));
        }
        Ok(PoseSeq {
            frames,
            joints,
            dim,
            data,
        })
    }

    pub fn zeros(frames: usize, joints: usize, dim: usize) -> Self {
        PoseSeq::new(frames, joints, dim, vec![0.0; frames * joints * dim])
            .expect("zero sequence is valid")
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, t: usize, j: usize, c: usize) -> f64 {
        self.data[(t * self.joints + j) * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, t: usize, j: usize, c: usize, v: f64) {
        self.data[(t * self.joints + j) * self.dim + c] = v;
    }

    /// Joint `j` coordinates at frame `t`.
    pub fn joint(&self, t: usize, j: usize) -> &[f64] {
        let base = (t * self.joints + j) * self.dim;
        &self.data[base..base + self.dim]
    }

    /// Subtracts joint `root` from every joint, per frame.
    pub fn root_centered(&self, root: usize) -> PoseSeq {
        let mut out = self.clone();
        for t in 0..self.frames {
            let r: Vec<f64> = self.joint(t, root).to_vec();
            for j in 0..self.joints {
                for c in 0..self.dim {
                    let v = out.at(t, j, c) - r[c];
                    out.set(t, j, c, v);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dim() {
        assert!(PoseSeq::new(1, 1, 4, vec![0.0; 4]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(PoseSeq::new(1, 1, 2, vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn rejects_zero_frames() {
        assert!(PoseSeq::new(0, 1, 2, vec![]).is_err());
    }

    #[test]
    fn root_centering_zeroes_root() {
        let mut p = PoseSeq::zeros(2, 3, 3);
        p.set(0, 0, 0, 5.0);
        p.set(0, 1, 0, 7.0);
        p.set(1, 0, 2, -1.0);
        let c = p.root_centered(0);
        for t in 0..2 {
            for ch in 0..3 {
                assert_eq!(c.at(t, 0, ch), 0.0);
            }
        }
        assert_eq!(c.at(0, 1, 0), 2.0);
    }
}
