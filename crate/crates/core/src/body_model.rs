//! Shape-parameterized 22-joint skeleton and its forward kinematics.
//!
//! Joint rest offsets are linear in the 16 shape coefficients, mirroring how
//! SMPL joint locations depend on shape through its joint regressor. Joint
//! order follows the SMPL convention for the first 22 joints.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{matrix_to_rot6d, rot6d_to_matrix, rot6d_to_matrix_with_jacobian, Rot6D, RotationMatrix};

pub const NUM_JOINTS: usize = 22;
pub const NUM_SHAPE: usize = 16;
pub const SHAPE_CLAMP: f64 = 5.0;

pub const SKELETON_FORMAT: &str = "sparsepose-skeleton";
pub const SKELETON_VERSION: u32 = 1;

pub const HEAD_JOINT: usize = 15;
pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;
pub const PELVIS: usize = 0;
pub const LEFT_KNEE: usize = 4;
pub const RIGHT_KNEE: usize = 5;

const DEFAULT_SKELETON: &str = include_str!("../assets/default_skeleton.json");

/// On-disk skeleton document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonAsset {
    pub format: String,
    pub version: u32,
    pub joint_names: Vec<String>,
    /// `-1` marks the root.
    pub parents: Vec<i64>,
    pub base_offsets: Vec<[f64; 3]>,
    /// `[joint][axis][coefficient]`.
    pub shape_blend: Vec<Vec<Vec<f64>>>,
    pub joint_sets: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Skeleton {
    parents: [Option<usize>; NUM_JOINTS],
    base_offsets: [Vector3<f64>; NUM_JOINTS],
    shape_blend: [[[f64; NUM_SHAPE]; 3]; NUM_JOINTS],
    joint_names: Vec<String>,
    joint_sets: BTreeMap<String, Vec<usize>>,
    // ancestors[j] has bit k set iff k is a strict ancestor of j
    ancestors: [u32; NUM_JOINTS],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShapeParams(pub [f64; NUM_SHAPE]);

impl ShapeParams {
    pub fn zero() -> Self {
        ShapeParams([0.0; NUM_SHAPE])
    }

    pub fn clamped(&self) -> [f64; NUM_SHAPE] {
        self.0.map(|b| b.clamp(-SHAPE_CLAMP, SHAPE_CLAMP))
    }
}

/// Local joint rotations, root first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPose(pub [Rot6D; NUM_JOINTS]);

impl LocalPose {
    pub fn identity() -> Self {
        LocalPose([Rot6D::IDENTITY; NUM_JOINTS])
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != NUM_JOINTS * 6 {
            return Err(Error::Dimension {
                what: "local pose".into(),
                expected: NUM_JOINTS * 6,
                got: v.len(),
            });
        }
        let mut out = [Rot6D::IDENTITY; NUM_JOINTS];
        for (j, r) in out.iter_mut().enumerate() {
            r.0.copy_from_slice(&v[6 * j..6 * j + 6]);
        }
        Ok(LocalPose(out))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|r| r.0).collect()
    }

    pub fn from_rotations(r: &[RotationMatrix; NUM_JOINTS]) -> Self {
        LocalPose(r.map(|m| matrix_to_rot6d(&m)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyState {
    pub global_rot: [RotationMatrix; NUM_JOINTS],
    pub joint_pos: [Vector3<f64>; NUM_JOINTS],
    pub root_translation: Vector3<f64>,
}

impl Skeleton {
    /// The bundled surrogate skeleton.
    pub fn default_skeleton() -> Self {
        Self::from_json(DEFAULT_SKELETON).expect("bundled skeleton asset is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let asset: SkeletonAsset = serde_json::from_str(text)?;
        Self::from_asset(asset)
    }

    pub fn from_asset(asset: SkeletonAsset) -> Result<Self> {
        if asset.format != SKELETON_FORMAT {
            return Err(Error::Parse(format!("unexpected format tag `{}`", asset.format)));
        }
        if asset.version != SKELETON_VERSION {
            return Err(Error::VersionMismatch {
                found: asset.version,
                expected: SKELETON_VERSION,
            });
        }
        let dim = |what: &str, got: usize| -> Result<()> {
            if got != NUM_JOINTS {
                return Err(Error::Dimension {
                    what: what.into(),
                    expected: NUM_JOINTS,
                    got,
                });
            }
            Ok(())
        };
        dim("parents", asset.parents.len())?;
        dim("joint_names", asset.joint_names.len())?;
        dim("base_offsets", asset.base_offsets.len())?;
        dim("shape_blend", asset.shape_blend.len())?;

        let mut parents = [None; NUM_JOINTS];
        for (j, &p) in asset.parents.iter().enumerate() {
            if j == 0 {
                if p != -1 {
                    return Err(Error::Parse("joint 0 must be the root (parent -1)".into()));
                }
                continue;
            }
            if p < 0 || p as usize >= j {
                return Err(Error::Topology {
                    joint: j,
                    parent: p.max(0) as usize,
                });
            }
            parents[j] = Some(p as usize);
        }

        let mut base_offsets = [Vector3::zeros(); NUM_JOINTS];
        for (dst, src) in base_offsets.iter_mut().zip(&asset.base_offsets) {
            *dst = Vector3::from(*src);
        }

        let mut shape_blend = [[[0.0; NUM_SHAPE]; 3]; NUM_JOINTS];
        for (j, rows) in asset.shape_blend.iter().enumerate() {
            if rows.len() != 3 {
                return Err(Error::Dimension {
                    what: format!("shape_blend[{j}] axes"),
                    expected: 3,
                    got: rows.len(),
                });
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != NUM_SHAPE {
                    return Err(Error::Dimension {
                        what: format!("shape_blend[{j}][{a}] coefficients"),
                        expected: NUM_SHAPE,
                        got: row.len(),
                    });
                }
                shape_blend[j][a].copy_from_slice(row);
            }
        }

        let finite = base_offsets.iter().all(|o| o.iter().all(|v| v.is_finite()))
            && shape_blend.iter().flatten().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parse("non-finite skeleton parameter".into()));
        }
        for (name, set) in &asset.joint_sets {
            if let Some(&bad) = set.iter().find(|&&j| j >= NUM_JOINTS) {
                return Err(Error::Parse(format!("joint set `{name}` references joint {bad}")));
            }
        }

        let mut ancestors = [0u32; NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            let p = parents[j].unwrap();
            ancestors[j] = ancestors[p] | (1 << p);
        }

        Ok(Skeleton {
            parents,
            base_offsets,
            shape_blend,
            joint_names: asset.joint_names,
            joint_sets: asset.joint_sets,
            ancestors,
        })
    }

    pub fn to_asset(&self) -> SkeletonAsset {
        SkeletonAsset {
            format: SKELETON_FORMAT.into(),
            version: SKELETON_VERSION,
            joint_names: self.joint_names.clone(),
            parents: self
                .parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            base_offsets: self.base_offsets.iter().map(|o| [o.x, o.y, o.z]).collect(),
            shape_blend: self
                .shape_blend
                .iter()
                .map(|j| j.iter().map(|a| a.to_vec()).collect())
                .collect(),
            joint_sets: self.joint_sets.clone(),
        }
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_set(&self, name: &str) -> Option<&[usize]> {
        self.joint_sets.get(name).map(Vec::as_slice)
    }

    pub fn base_offsets(&self) -> &[Vector3<f64>; NUM_JOINTS] {
        &self.base_offsets
    }

    /// Column `k` of joint `j`'s shape blend.
    pub fn blend_column(&self, j: usize, k: usize) -> Vector3<f64> {
        let b = &self.shape_blend[j];
        Vector3::new(b[0][k], b[1][k], b[2][k])
    }

    /// True iff `k` is a strict ancestor of `j`.
    pub fn is_ancestor(&self, k: usize, j: usize) -> bool {
        self.ancestors[j] & (1 << k) != 0
    }

    /// Joint whose position is pinned to the headset.
    pub fn head_joint(&self) -> usize {
        self.joint_set("head")
            .and_then(|s| s.first().copied())
            .unwrap_or(HEAD_JOINT)
    }

    pub fn joint_offsets(&self, beta: &ShapeParams) -> [Vector3<f64>; NUM_JOINTS] {
        let b = beta.clamped();
        let mut out = self.base_offsets;
        for (j, o) in out.iter_mut().enumerate() {
            for a in 0..3 {
                let blend = &self.shape_blend[j][a];
                o[a] += blend.iter().zip(&b).map(|(s, v)| s * v).sum::<f64>();
            }
        }
        out
    }

    pub fn forward_kinematics(
        &self,
        beta: &ShapeParams,
        theta: &LocalPose,
        root_translation: &Vector3<f64>,
    ) -> Result<BodyState> {
        let mut local = [RotationMatrix::identity(); NUM_JOINTS];
        for (dst, v) in local.iter_mut().zip(&theta.0) {
            *dst = rot6d_to_matrix(v)?;
        }
        Ok(self.fk_from_local(beta, &local, root_translation))
    }

    /// FK from already-decoded local rotations.
    pub fn fk_from_local(
        &self,
        beta: &ShapeParams,
        local: &[RotationMatrix; NUM_JOINTS],
        root_translation: &Vector3<f64>,
    ) -> BodyState {
        let offsets = self.joint_offsets(beta);
        let mut global_rot = [RotationMatrix::identity(); NUM_JOINTS];
        let mut joint_pos = [Vector3::zeros(); NUM_JOINTS];
        global_rot[0] = local[0];
        joint_pos[0] = *root_translation;
        for j in 1..NUM_JOINTS {
            let p = self.parents[j].unwrap();
            global_rot[j] = global_rot[p].mul(&local[j]);
            joint_pos[j] = joint_pos[p] + global_rot[p].rotate(&offsets[j]);
        }
        BodyState {
            global_rot,
            joint_pos,
            root_translation: *root_translation,
        }
    }

    /// Root translation that puts the head joint at `head_pos`.
    pub fn anchor_root_from_head(
        &self,
        beta: &ShapeParams,
        theta: &LocalPose,
        head_pos: &Vector3<f64>,
    ) -> Result<Vector3<f64>> {
        let body = self.forward_kinematics(beta, theta, &Vector3::zeros())?;
        Ok(head_pos - body.joint_pos[self.head_joint()])
    }

    /// FK with the root placed so that the head joint lands on `head_pos`.
    pub fn forward_kinematics_anchored(
        &self,
        beta: &ShapeParams,
        theta: &LocalPose,
        head_pos: &Vector3<f64>,
    ) -> Result<BodyState> {
        let mut local = [RotationMatrix::identity(); NUM_JOINTS];
        for (dst, v) in local.iter_mut().zip(&theta.0) {
            *dst = rot6d_to_matrix(v)?;
        }
        let zero = self.fk_from_local(beta, &local, &Vector3::zeros());
        let t = head_pos - zero.joint_pos[self.head_joint()];
        Ok(self.fk_from_local(beta, &local, &t))
    }

    /// Linearization of FK around `(β, θ)` at zero root translation.
    pub fn linearize(&self, beta: &ShapeParams, theta: &LocalPose) -> Result<FkLinearization> {
        let mut local = [RotationMatrix::identity(); NUM_JOINTS];
        let mut d_local = [[Matrix3::zeros(); 6]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let (r, d) = rot6d_to_matrix_with_jacobian(&theta.0[j])?;
            local[j] = r;
            d_local[j] = d;
        }
        let body = self.fk_from_local(beta, &local, &Vector3::zeros());
        // Perturbing θ_k[b] changes every global frame in k's subtree by the
        // same world-frame matrix: dG_j = A_kb G_j with
        // A_kb = G_parent(k) (∂L_k/∂θ_k[b]) L_kᵀ G_parent(k)ᵀ.
        let mut generators = [[Matrix3::zeros(); 6]; NUM_JOINTS];
        for k in 0..NUM_JOINTS {
            let gp = match self.parents[k] {
                Some(p) => *body.global_rot[p].matrix(),
                None => Matrix3::identity(),
            };
            for b in 0..6 {
                generators[k][b] = gp * d_local[k][b] * local[k].matrix().transpose() * gp.transpose();
            }
        }
        let beta_active = beta.0.map(|v| v.abs() <= SHAPE_CLAMP);
        Ok(FkLinearization {
            body,
            generators,
            beta_active,
        })
    }

    /// `∂ joint_pos[j][a] / ∂ θ[k][b]` at zero root translation, 66 × 132.
    pub fn position_jacobian(&self, beta: &ShapeParams, theta: &LocalPose) -> Result<DMatrix<f64>> {
        Ok(self.linearize(beta, theta)?.position_jacobian(self))
    }

    /// `∂ joint_pos[j][a] / ∂ β[k]`, 66 × 16. Zero for clamped coefficients.
    pub fn shape_jacobian(&self, beta: &ShapeParams, theta: &LocalPose) -> Result<DMatrix<f64>> {
        Ok(self.linearize(beta, theta)?.shape_jacobian(self))
    }
}

/// FK state plus the per-parameter world-frame generators needed for Jacobians.
#[derive(Debug, Clone)]
pub struct FkLinearization {
    pub body: BodyState,
    generators: [[Matrix3<f64>; 6]; NUM_JOINTS],
    beta_active: [bool; NUM_SHAPE],
}

impl FkLinearization {
    pub fn generator(&self, k: usize, b: usize) -> &Matrix3<f64> {
        &self.generators[k][b]
    }

    pub fn position_jacobian(&self, skel: &Skeleton) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(3 * NUM_JOINTS, 6 * NUM_JOINTS);
        let pos = &self.body.joint_pos;
        for j in 0..NUM_JOINTS {
            for k in 0..NUM_JOINTS {
                if !skel.is_ancestor(k, j) {
                    continue;
                }
                let lever = pos[j] - pos[k];
                for b in 0..6 {
                    let d = self.generators[k][b] * lever;
                    for a in 0..3 {
                        jac[(3 * j + a, 6 * k + b)] = d[a];
                    }
                }
            }
        }
        jac
    }

    pub fn shape_jacobian(&self, skel: &Skeleton) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(3 * NUM_JOINTS, NUM_SHAPE);
        for j in 1..NUM_JOINTS {
            // Offset i contributes G_parent(i) · blend_i to every joint in i's subtree.
            let mut i = j;
            while let Some(p) = skel.parent(i) {
                let g = self.body.global_rot[p].matrix();
                for k in 0..NUM_SHAPE {
                    if !self.beta_active[k] {
                        continue;
                    }
                    let d = g * skel.blend_column(i, k);
                    for a in 0..3 {
                        jac[(3 * j + a, k)] += d[a];
                    }
                }
                i = p;
            }
        }
        jac
    }

    /// `∂ 6D(global_rot[j])[c] / ∂ θ[k][b]`, 132 × 132.
    pub fn global_rot6d_jacobian(&self, skel: &Skeleton) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(6 * NUM_JOINTS, 6 * NUM_JOINTS);
        for j in 0..NUM_JOINTS {
            let g = self.body.global_rot[j].matrix();
            for k in 0..NUM_JOINTS {
                if k != j && !skel.is_ancestor(k, j) {
                    continue;
                }
                for b in 0..6 {
                    let d = self.generators[k][b] * g;
                    for c in 0..6 {
                        jac[(6 * j + c, 6 * k + b)] = d[(c % 3, c / 3)];
                    }
                }
            }
        }
        jac
    }
}
