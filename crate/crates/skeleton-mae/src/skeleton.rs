//! The COCO-17 skeleton: joint order, body-part regions, bone edges, and
//! the two adjacency forms used by the graph layers (raw binary A and the
//! symmetric normalization D^(-1/2)(A+I)D^(-1/2)).

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, TensorId};

pub const JOINT_COUNT: usize = 17;

/// Joint order, index = position: nose, eyes, ears, shoulders, elbows,
/// wrists, hips, knees, ankles — left before right within each pair.
pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Six disjoint body-part regions covering all joints.
pub const REGIONS: [&[usize]; 6] = [
    &[0, 1, 2, 3, 4],  // head
    &[5, 6, 11, 12],   // torso
    &[7, 9],           // left arm
    &[8, 10],          // right arm
    &[13, 15],         // left leg
    &[14, 16],         // right leg
];

pub const REGION_NAMES: [&str; 6] = [
    "head",
    "torso",
    "left_arm",
    "right_arm",
    "left_leg",
    "right_leg",
];

/// Bone list: standard COCO rendering topology plus the shoulder-shoulder
/// link, so the torso is connected.
pub const EDGES: [(usize, usize); 18] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
    (5, 6),
];

/// A joint layout: how many joints, which disjoint regions partition them,
/// and which pairs are connected by bones.
#[derive(Clone, Debug)]
pub struct SkeletonLayout {
    joint_count: usize,
    regions: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl SkeletonLayout {
    /// The fixed 17-joint COCO layout.
    pub fn coco17() -> Self {
        SkeletonLayout {
            joint_count: JOINT_COUNT,
            regions: REGIONS.iter().map(|r| r.to_vec()).collect(),
            edges: EDGES.to_vec(),
        }
    }

    /// A custom layout for small test graphs. Regions must partition
    /// `0..joint_count`; edges must be in range without self-loops.
    pub fn custom(
        joint_count: usize,
        regions: Vec<Vec<usize>>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::Config("layout needs at least one joint".into()));
        }
        let mut seen = vec![false; joint_count];
        for r in &regions {
            for &j in r {
                if j >= joint_count {
                    return Err(Error::Config(format!(
                        "region joint {j} out of range for {joint_count} joints"
                    )));
                }
                if seen[j] {
                    return Err(Error::Config(format!("joint {j} appears in two regions")));
                }
                seen[j] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Config("regions must cover every joint".into()));
        }
        for &(u, v) in &edges {
            if u >= joint_count || v >= joint_count || u == v {
                return Err(Error::Config(format!("bad edge ({u},{v})")));
            }
        }
        Ok(SkeletonLayout {
            joint_count,
            regions,
            edges,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn region(&self, id: usize) -> &[usize] {
        &self.regions[id]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Binary symmetric adjacency from the bone list (no self-loops).
    pub fn raw_adjacency(&self) -> Adjacency {
        let n = self.joint_count;
        let mut m = vec![0.0; n * n];
        for &(u, v) in &self.edges {
            m[u * n + v] = 1.0;
            m[v * n + u] = 1.0;
        }
        Adjacency {
            matrix: m,
            n,
            normalized: false,
        }
    }
}

/// Square joint-connectivity matrix, either raw binary or normalized.
#[derive(Clone, Debug)]
pub struct Adjacency {
    /// Row-major n×n values, kept in f64 and narrowed at tensor creation.
    pub matrix: Vec<f64>,
    pub n: usize,
    pub normalized: bool,
}

impl Adjacency {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    /// Places the matrix on a tape as a non-differentiable constant.
    pub fn to_tensor<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<TensorId> {
        tape.constant_f64(&self.matrix, &[self.n, self.n])
    }
}

/// Symmetric normalization with self-loops: Ã = D^(-1/2)(A+I)D^(-1/2),
/// where D is the degree matrix of A+I. Requires a raw binary symmetric
/// input; the self-loop guarantees every degree is at least 1.
pub fn normalize_adjacency(a: &Adjacency) -> Result<Adjacency> {
    if a.normalized {
        return Err(Error::Config(
            "adjacency is already normalized; normalization expects the raw form".into(),
        ));
    }
    let n = a.n;
    for i in 0..n {
        for j in 0..n {
            let v = a.at(i, j);
            if v != 0.0 && v != 1.0 {
                return Err(Error::Config(format!(
                    "raw adjacency entry ({i},{j}) = {v}; expected 0 or 1"
                )));
            }
            if v != a.at(j, i) {
                return Err(Error::Config(format!(
                    "adjacency is asymmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut with_loops = a.matrix.clone();
    for i in 0..n {
        with_loops[i * n + i] = 1.0;
    }
    let deg: Vec<f64> = (0..n)
        .map(|i| with_loops[i * n..(i + 1) * n].iter().sum())
        .collect();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            // d_i^(-1/2) * a_ij * d_j^(-1/2), with the sqrt taken once on
            // the product so integer-degree pairs stay exact.
            m[i * n + j] = with_loops[i * n + j] / (deg[i] * deg[j]).sqrt();
        }
    }
    Ok(Adjacency {
        matrix: m,
        n,
        normalized: true,
    })
}
