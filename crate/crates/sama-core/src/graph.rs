//! Skeleton topology: joints, edges, base adjacency and degrees.

use crate::error::SamaError;

/// Undirected joint graph of a skeleton.
///
/// `m_o` is the binary adjacency (zero diagonal), `degree[a]` counts the
/// neighbors of `a` plus the self loop added during normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGraph {
    pub n_joints: usize,
    pub edges: Vec<(usize, usize)>,
    pub m_o: Vec<f64>,
    pub degree: Vec<usize>,
}

/// Edge list of the 17-joint Human3.6M kinematic tree, root-outward order.
pub const H36M_EDGES: [(usize, usize); 16] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
];

pub const H36M_JOINTS: usize = 17;

impl JointGraph {
    pub fn new(n_joints: usize, edges: &[(usize, usize)]) -> Result<Self, SamaError> {
        if n_joints == 0 {
            return Err(SamaError::Graph("graph needs at least one joint".into()));
        }
        let mut m_o = vec![0.0; n_joints * n_joints];
        for &(a, b) in edges {
            if a >= n_joints || b >= n_joints {
                return Err(SamaError::Graph(format!(
                    "edge ({a},{b}) out of range for {n_joints} joints"
                )));
            }
            if a == b {
                return Err(SamaError::Graph(format!("self loop ({a},{a}) not allowed")));
            }
            m_o[a * n_joints + b] = 1.0;
            m_o[b * n_joints + a] = 1.0;
        }
        // degree of (M_o + I): neighbor count plus the self loop.
        let degree: Vec<usize> = (0..n_joints)
            .map(|a| {
                1 + (0..n_joints)
                    .filter(|&b| m_o[a * n_joints + b] != 0.0)
                    .count()
            })
            .collect();
        let g = JointGraph {
            n_joints,
            edges: edges.to_vec(),
            m_o,
            degree,
        };
        if !g.is_connected() {
            return Err(SamaError::Graph("graph is not connected".into()));
        }
        Ok(g)
    }

    /// The 17-joint Human3.6M preset.
    pub fn h36m_17() -> Self {
        JointGraph::new(H36M_JOINTS, &H36M_EDGES).expect("preset skeleton is valid")
    }

    /// Parent of each joint when the tree is rooted at joint 0.
    /// Parent of the root is itself.
    pub fn parents(&self) -> Vec<usize> {
        let n = self.n_joints;
        let mut parent = vec![usize::MAX; n];
        parent[0] = 0;
        let mut stack = vec![0usize];
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if self.m_o[a * n + b] != 0.0 && parent[b] == usize::MAX {
                    parent[b] = a;
                    stack.push(b);
                }
            }
        }
        parent
    }

    fn is_connected(&self) -> bool {
        let n = self.n_joints;
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if self.m_o[a * n + b] != 0.0 && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h36m_preset_shape() {
        let g = JointGraph::h36m_17();
        assert_eq!(g.n_joints, 17);
        assert_eq!(g.edges.len(), 16);
        // symmetric, zero diagonal
        for a in 0..17 {
            assert_eq!(g.m_o[a * 17 + a], 0.0);
            for b in 0..17 {
                assert_eq!(g.m_o[a * 17 + b], g.m_o[b * 17 + a]);
            }
        }
        // pelvis connects to both hips and the spine
        assert_eq!(g.degree[0], 4);
        // leaf joints have a single neighbor
        assert_eq!(g.degree[3], 2);
        assert_eq!(g.degree[16], 2);
    }

    #[test]
    fn degree_counts_self_loop() {
        // chain 0-1-2
        let g = JointGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(g.degree, vec![2, 3, 2]);
    }

    #[test]
    fn disconnected_graph_rejected() {
        assert!(JointGraph::new(4, &[(0, 1), (2, 3)]).is_err());
    }

    #[test]
    fn lone_joint_is_valid() {
        let g = JointGraph::new(1, &[]).unwrap();
        assert_eq!(g.degree, vec![1]);
    }

    #[test]
    fn parents_follow_tree() {
        let g = JointGraph::h36m_17();
        let p = g.parents();
        assert_eq!(p[0], 0);
        assert_eq!(p[3], 2);
        assert_eq!(p[16], 15);
        assert_eq!(p[11], 8);
    }
}
