//! Labeled slice-dataset generation from a canonical volume.
//!
//! Sampling normals come from a Fibonacci sphere lattice; per normal a stack
//! of parallel planes is rotated about the origin while the volume stays
//! static. Each extracted slice carries its ground-truth pose in all three
//! label encodings plus its intensity variance, and low-content slices are
//! pruned against a variance threshold computed over the whole set.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::UnitSphere;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};
use crate::geometry::{
    anchors_from_pose, rotation_about_axis, rotation_from_z_to, rotation_to_euler,
    rotation_to_quat, AnchorTriplet, EulerPose, QuaternionPose, RigidPose,
};
use crate::volume::{sample_trilinear, Volume3D};

/// Golden ratio, the longitude increment base of the Fibonacci lattice.
pub const GOLDEN_RATIO: f64 = 1.618033988749894848;

/// Square 2D scalar image, row-major with x (column) fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    size: usize,
    data: Vec<f32>,
}

impl SliceImage {
    pub fn from_raw(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != size * size {
            return Err(SvrError::ShapeMismatch(format!(
                "expected {} pixels, got {}",
                size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn zeros(size: usize) -> Self {
        Self { size, data: vec![0.0; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, u: usize, w: usize) -> f32 {
        self.data[w * self.size + u]
    }

    #[inline]
    pub fn pixel_mut(&mut self, u: usize, w: usize) -> &mut f32 {
        &mut self.data[w * self.size + u]
    }

    /// Population variance `1/N * sum |x - mean|^2`.
    pub fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        self.data
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n
    }

    /// Image mirrored along the row axis (w -> size-1-w).
    pub fn flipped_rows(&self) -> SliceImage {
        let mut out = SliceImage::zeros(self.size);
        for w in 0..self.size {
            for u in 0..self.size {
                *out.pixel_mut(u, w) = self.pixel(u, self.size - 1 - w);
            }
        }
        out
    }
}

/// Configuration for dataset generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Number of sampling-plane normals on the (hemi)sphere.
    pub n_normals: usize,
    /// Planes per stack, spread symmetrically about the origin.
    pub plane_count: usize,
    /// Spacing between neighbouring planes in a stack, mm.
    pub plane_spacing_mm: f64,
    /// Slice side length in pixels.
    pub slice_size: usize,
    /// Variance pruning factor `K`; threshold is `K * max variance`.
    pub prune_k: f64,
    /// Sample only the upper hemisphere (mirror symmetry covers the rest).
    pub hemisphere_only: bool,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_normals: 20,
            plane_count: 8,
            plane_spacing_mm: 4.0,
            slice_size: 64,
            prune_k: 0.2,
            hemisphere_only: true,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_normals == 0 {
            return Err(SvrError::InvalidArgument("n_normals must be >= 1".into()));
        }
        if self.plane_count == 0 {
            return Err(SvrError::InvalidArgument("plane_count must be >= 1".into()));
        }
        if self.slice_size == 0 {
            return Err(SvrError::InvalidArgument("slice_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.prune_k) {
            return Err(SvrError::InvalidArgument(format!(
                "prune_k {} outside [0, 1]",
                self.prune_k
            )));
        }
        if self.plane_spacing_mm <= 0.0 {
            return Err(SvrError::InvalidArgument("plane_spacing_mm must be > 0".into()));
        }
        Ok(())
    }
}

/// One extracted slice with its ground-truth labels.
#[derive(Debug, Clone)]
pub struct SliceSample {
    pub image: SliceImage,
    /// Ground-truth plane pose; the label encodings below derive from it.
    pub pose: RigidPose,
    pub anchors: AnchorTriplet,
    pub euler: EulerPose,
    pub quat: QuaternionPose,
    /// Simulated acquisition pose after motion corruption, if any.
    pub motion_pose: Option<RigidPose>,
    pub source_id: String,
    pub normal_index: usize,
    pub plane_index: usize,
    pub variance: f64,
}

/// Fibonacci sphere lattice of sampling-plane normals.
///
/// Full-sphere points are `(sin t cos p, sin t sin p, cos t)` with
/// `t = acos(1 - (2i+1)/n)` and `p = 2 pi i / golden_ratio`. The hemisphere
/// variant generates `2n` full-sphere points and keeps the `n` with `z > 0`,
/// preserving the lattice spacing on the kept half.
pub fn fibonacci_normals(n: usize, hemisphere_only: bool) -> Result<Vec<Vector3<f64>>> {
    if n == 0 {
        return Err(SvrError::InvalidArgument("need at least one normal".into()));
    }
    let full_count = if hemisphere_only { 2 * n } else { n };
    let mut out = Vec::with_capacity(n);
    for i in 0..full_count {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / full_count as f64;
        if hemisphere_only && z <= 0.0 {
            continue;
        }
        let phi = 2.0 * std::f64::consts::PI * i as f64 / GOLDEN_RATIO;
        let sin_theta = (1.0 - z * z).max(0.0).sqrt();
        out.push(Vector3::new(sin_theta * phi.cos(), sin_theta * phi.sin(), z));
    }
    debug_assert_eq!(out.len(), n);
    Ok(out)
}

/// Stack of parallel plane poses sharing one rotation.
///
/// The rotation takes `(0,0,1)` to the normal (shortest arc on the upper
/// hemisphere, x-flip composition below); offsets are centred on zero at
/// `plane_spacing_mm` increments.
pub fn build_stack(normal: &Vector3<f64>, cfg: &SamplingConfig) -> Result<Vec<RigidPose>> {
    let rotation = rotation_from_z_to(normal)?;
    let half = (cfg.plane_count as f64 - 1.0) / 2.0;
    Ok((0..cfg.plane_count)
        .map(|k| RigidPose::from_stack(rotation, (k as f64 - half) * cfg.plane_spacing_mm))
        .collect())
}

/// Extracts a square slice through the volume at a plane pose.
///
/// Pixel `(u, w)` samples the world point
/// `R * ((u - c) s, (w - c) s, 0) + t` with `c = (size-1)/2`, trilinearly
/// interpolated and 0 outside the volume.
pub fn extract_slice(
    v: &Volume3D,
    pose: &RigidPose,
    size: usize,
    pixel_spacing_mm: f64,
) -> SliceImage {
    let c = (size as f64 - 1.0) / 2.0;
    let mut img = SliceImage::zeros(size);
    for w in 0..size {
        let wy = (w as f64 - c) * pixel_spacing_mm;
        for u in 0..size {
            let ux = (u as f64 - c) * pixel_spacing_mm;
            let p = pose.plane_point(ux, wy);
            *img.pixel_mut(u, w) = sample_trilinear(v, &p) as f32;
        }
    }
    img
}

/// Splits samples into (kept, pruned) against `t = k * max variance`.
///
/// Samples with variance strictly below `t` are pruned; `k = 0` keeps
/// everything. Returns the threshold used alongside the partition.
pub fn prune_by_variance(
    samples: Vec<SliceSample>,
    k: f64,
) -> Result<(Vec<SliceSample>, Vec<SliceSample>, f64)> {
    if samples.is_empty() {
        return Err(SvrError::EmptyInput("no samples to prune".into()));
    }
    let max_var = samples.iter().map(|s| s.variance).fold(0.0_f64, f64::max);
    let threshold = k * max_var;
    let (kept, pruned) = samples.into_iter().partition(|s| s.variance >= threshold);
    Ok((kept, pruned, threshold))
}

/// A planned slice before extraction: stack indices plus the plane pose.
#[derive(Debug, Clone)]
pub struct PlannedSlice {
    pub normal_index: usize,
    pub plane_index: usize,
    pub pose: RigidPose,
}

/// Enumerates every (normal, plane) pose of a configuration in
/// deterministic `(normal_index, plane_index)` order.
pub fn dataset_poses(cfg: &SamplingConfig) -> Result<Vec<PlannedSlice>> {
    cfg.validate()?;
    let normals = fibonacci_normals(cfg.n_normals, cfg.hemisphere_only)?;
    let mut out = Vec::with_capacity(cfg.n_normals * cfg.plane_count);
    for (normal_index, normal) in normals.iter().enumerate() {
        for (plane_index, pose) in build_stack(normal, cfg)?.into_iter().enumerate() {
            out.push(PlannedSlice { normal_index, plane_index, pose });
        }
    }
    Ok(out)
}

/// Counts and threshold echoed into the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source_id: String,
    pub config: SamplingConfig,
    pub pre_prune_count: usize,
    pub kept_count: usize,
    pub pruned_count: usize,
    pub variance_threshold: f64,
    pub max_variance: f64,
}

/// A generated, pruned dataset plus its summary.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub samples: Vec<SliceSample>,
    pub summary: DatasetSummary,
}

/// Generates the full labeled dataset for one volume.
///
/// Extraction is parallel over planned slices; output order is always
/// `(normal_index, plane_index)` regardless of worker count.
pub fn generate_dataset(
    v: &Volume3D,
    cfg: &SamplingConfig,
    source_id: &str,
) -> Result<GeneratedDataset> {
    let planned = dataset_poses(cfg)?;
    let pre_prune_count = planned.len();
    let l_mm = cfg.slice_size as f64 * v.spacing_mm();

    let samples: Vec<SliceSample> = planned
        .into_par_iter()
        .map(|plan| {
            let image = extract_slice(v, &plan.pose, cfg.slice_size, v.spacing_mm());
            let variance = image.variance();
            SliceSample {
                image,
                pose: plan.pose,
                anchors: anchors_from_pose(&plan.pose, l_mm),
                euler: rotation_to_euler(&plan.pose),
                quat: rotation_to_quat(&plan.pose),
                motion_pose: None,
                source_id: source_id.to_string(),
                normal_index: plan.normal_index,
                plane_index: plan.plane_index,
                variance,
            }
        })
        .collect();

    let max_variance = samples.iter().map(|s| s.variance).fold(0.0_f64, f64::max);
    let (kept, pruned, variance_threshold) = prune_by_variance(samples, cfg.prune_k)?;
    let summary = DatasetSummary {
        source_id: source_id.to_string(),
        config: *cfg,
        pre_prune_count,
        kept_count: kept.len(),
        pruned_count: pruned.len(),
        variance_threshold,
        max_variance,
    };
    Ok(GeneratedDataset { samples: kept, summary })
}

/// Simulates inter-slice motion by perturbing each sample's recorded pose.
///
/// The perturbation composes a rotation about a uniformly random axis with
/// angle uniform in `[0, max_rot_deg]` and a translation with components
/// uniform in `[-max_trans_mm, max_trans_mm]`. Images and ground-truth
/// labels are unchanged; the corrupted pose lands in `motion_pose`.
pub fn corrupt_motion(
    samples: &[SliceSample],
    max_rot_deg: f64,
    max_trans_mm: f64,
    seed: u64,
) -> Result<Vec<SliceSample>> {
    if max_rot_deg < 0.0 || max_trans_mm < 0.0 {
        return Err(SvrError::InvalidArgument("motion bounds must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(samples
        .iter()
        .map(|s| {
            let axis: [f64; 3] = rng.sample(UnitSphere);
            let angle = rng.gen_range(0.0..=max_rot_deg).to_radians();
            let d_rot = rotation_about_axis(&Vector3::from(axis), angle);
            let d_t = Vector3::new(
                rng.gen_range(-max_trans_mm..=max_trans_mm),
                rng.gen_range(-max_trans_mm..=max_trans_mm),
                rng.gen_range(-max_trans_mm..=max_trans_mm),
            );
            let mut out = s.clone();
            out.motion_pose = Some(s.pose.perturbed(&d_rot, &d_t));
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_error_decomposed, rotation_angle};
    use crate::volume::{generate_phantom, PhantomKind, PhantomSpec};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    #[test]
    fn fibonacci_single_point_full_sphere() {
        let pts = fibonacci_normals(1, false).unwrap();
        assert_eq!(pts.len(), 1);
        assert_relative_eq!(pts[0], Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn fibonacci_two_points_z_values() {
        let pts = fibonacci_normals(2, false).unwrap();
        assert_relative_eq!(pts[0].z, 0.5, epsilon = 1e-12);
        assert_relative_eq!(pts[1].z, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn fibonacci_hemisphere_count_and_norms() {
        let pts = fibonacci_normals(500, true).unwrap();
        assert_eq!(pts.len(), 500);
        for p in &pts {
            assert!(p.z > 0.0);
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fibonacci_nearest_neighbor_uniformity() {
        let pts = fibonacci_normals(500, false).unwrap();
        let mut min_d = f64::INFINITY;
        let mut max_d: f64 = 0.0;
        for (i, a) in pts.iter().enumerate() {
            let mut nn = f64::INFINITY;
            for (j, b) in pts.iter().enumerate() {
                if i != j {
                    nn = nn.min(a.dot(b).clamp(-1.0, 1.0).acos());
                }
            }
            min_d = min_d.min(nn);
            max_d = max_d.max(nn);
        }
        assert!(
            max_d / min_d < 2.0,
            "nearest-neighbour ratio {} too large",
            max_d / min_d
        );
    }

    #[test]
    fn stack_identity_normal() {
        let cfg = SamplingConfig { plane_count: 3, plane_spacing_mm: 4.0, ..Default::default() };
        let stack = build_stack(&Vector3::z(), &cfg).unwrap();
        assert_eq!(stack.len(), 3);
        for (pose, z) in stack.iter().zip([-4.0, 0.0, 4.0]) {
            assert_relative_eq!(pose.rotation, Matrix3::identity(), epsilon = 1e-12);
            assert_eq!(pose.z_offset_mm, z);
        }
    }

    #[test]
    fn stack_antipodal_normal_has_no_nan() {
        let cfg = SamplingConfig::default();
        let stack = build_stack(&Vector3::new(0.0, 0.0, -1.0), &cfg).unwrap();
        for pose in &stack {
            assert!(pose.rotation.iter().all(|v| v.is_finite()));
            pose.validate().unwrap();
            assert_relative_eq!(rotation_angle(&pose.rotation, &Matrix3::identity()), std::f64::consts::PI, epsilon = 1e-12);
        }
    }

    #[test]
    fn stack_normal_is_plane_normal() {
        let cfg = SamplingConfig { plane_count: 1, ..Default::default() };
        let normal = Vector3::new(1.0, 0.0, 0.0);
        let stack = build_stack(&normal, &cfg).unwrap();
        assert_relative_eq!(stack[0].normal(), normal, epsilon = 1e-12);
    }

    #[test]
    fn stack_offsets_for_large_stack() {
        let cfg = SamplingConfig {
            plane_count: 64,
            plane_spacing_mm: 4.0,
            ..Default::default()
        };
        let stack = build_stack(&Vector3::z(), &cfg).unwrap();
        assert_eq!(stack[0].z_offset_mm, -126.0);
        assert_eq!(stack[63].z_offset_mm, 126.0);
    }

    #[test]
    fn extract_constant_volume_gives_constant_image() {
        let vol = Volume3D::from_raw(16, 1.0, vec![0.25; 16 * 16 * 16]).unwrap();
        let pose = RigidPose::from_stack(
            rotation_from_z_to(&Vector3::new(0.4, -0.3, 0.86).normalize()).unwrap(),
            2.0,
        );
        let img = extract_slice(&vol, &pose, 8, 1.0);
        assert!(img.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn extract_identity_matches_central_plane() {
        // Odd side: the z = 0 plane is exactly the central voxel layer.
        let spec = PhantomSpec { kind: PhantomKind::AsymmetricBlobs, seed: 3, count: 4, contrast: (0.3, 1.0) };
        let vol = generate_phantom(&spec, 33).unwrap();
        let img = extract_slice(&vol, &RigidPose::identity(), 33, 1.0);
        for w in 0..33 {
            for u in 0..33 {
                assert!((img.pixel(u, w) - vol.voxel(u, w, 16)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn extract_in_plane_180_rotation_reverses_indices() {
        let spec = PhantomSpec { kind: PhantomKind::AsymmetricBlobs, seed: 5, count: 4, contrast: (0.3, 1.0) };
        let vol = generate_phantom(&spec, 32).unwrap();
        let base = RigidPose::from_stack(
            rotation_from_z_to(&Vector3::new(0.2, 0.5, 0.84).normalize()).unwrap(),
            3.0,
        );
        let half_turn = rotation_about_axis(&Vector3::z(), std::f64::consts::PI);
        let rotated = RigidPose {
            rotation: base.rotation * half_turn,
            translation: base.translation,
            z_offset_mm: base.z_offset_mm,
        };
        let img_a = extract_slice(&vol, &base, 16, 1.0);
        let img_b = extract_slice(&vol, &rotated, 16, 1.0);
        for w in 0..16 {
            for u in 0..16 {
                assert!(
                    (img_b.pixel(u, w) - img_a.pixel(15 - u, 15 - w)).abs() < 1e-5,
                    "mismatch at ({u}, {w})"
                );
            }
        }
    }

    #[test]
    fn prune_threshold_cases() {
        let make = |variance: f64| SliceSample {
            image: SliceImage::zeros(2),
            pose: RigidPose::identity(),
            anchors: anchors_from_pose(&RigidPose::identity(), 2.0),
            euler: rotation_to_euler(&RigidPose::identity()),
            quat: rotation_to_quat(&RigidPose::identity()),
            motion_pose: None,
            source_id: "t".into(),
            normal_index: 0,
            plane_index: 0,
            variance,
        };
        let samples = vec![make(0.0), make(10.0), make(100.0)];
        let (kept, pruned, t) = prune_by_variance(samples, 0.2).unwrap();
        assert_eq!(t, 20.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(pruned.len(), 2);

        let samples = vec![make(0.0), make(10.0)];
        let (kept, pruned, t) = prune_by_variance(samples, 0.0).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(kept.len(), 2);
        assert!(pruned.is_empty());

        let samples = vec![make(5.0), make(5.0), make(5.0)];
        let (kept, pruned, _) = prune_by_variance(samples, 0.2).unwrap();
        assert_eq!(kept.len(), 3);
        assert!(pruned.is_empty());

        assert!(prune_by_variance(Vec::new(), 0.2).is_err());
    }

    #[test]
    fn dataset_counts_and_label_consistency() {
        let spec = PhantomSpec { kind: PhantomKind::AsymmetricBlobs, seed: 11, count: 5, contrast: (0.3, 1.0) };
        let vol = generate_phantom(&spec, 32).unwrap();
        let cfg = SamplingConfig {
            n_normals: 5,
            plane_count: 4,
            plane_spacing_mm: 4.0,
            slice_size: 32,
            prune_k: 0.2,
            hemisphere_only: true,
            seed: 0,
        };
        let ds = generate_dataset(&vol, &cfg, "phantom-11").unwrap();
        assert_eq!(ds.summary.pre_prune_count, 20);
        assert_eq!(ds.summary.kept_count + ds.summary.pruned_count, 20);
        assert_eq!(ds.samples.len(), ds.summary.kept_count);

        for s in &ds.samples {
            // All three encodings describe the same rotation.
            let from_euler = crate::geometry::euler_to_rotation(&s.euler);
            let from_quat = crate::geometry::quat_to_rotation(&s.quat).unwrap();
            assert!(rotation_angle(&s.pose.rotation, &from_euler.rotation) < 1e-6);
            assert!(rotation_angle(&s.pose.rotation, &from_quat.rotation) < 1e-6);
            assert_relative_eq!(s.variance, s.image.variance(), epsilon = 1e-12);
        }
    }

    #[test]
    fn dataset_order_is_deterministic() {
        let spec = PhantomSpec { kind: PhantomKind::AsymmetricBlobs, seed: 13, count: 4, contrast: (0.3, 1.0) };
        let vol = generate_phantom(&spec, 32).unwrap();
        let cfg = SamplingConfig {
            n_normals: 4,
            plane_count: 3,
            slice_size: 16,
            ..Default::default()
        };
        let a = generate_dataset(&vol, &cfg, "p").unwrap();
        let b = generate_dataset(&vol, &cfg, "p").unwrap();
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x.image.data(), y.image.data());
            assert_eq!(x.normal_index, y.normal_index);
            assert_eq!(x.plane_index, y.plane_index);
        }
        let mut sorted = a.samples.clone();
        sorted.sort_by_key(|s| (s.normal_index, s.plane_index));
        for (x, y) in a.samples.iter().zip(sorted.iter()) {
            assert_eq!((x.normal_index, x.plane_index), (y.normal_index, y.plane_index));
        }
    }

    #[test]
    fn zero_volume_keeps_all_slices_with_zero_threshold() {
        let vol = Volume3D::zeros(32, 1.0).unwrap();
        let cfg = SamplingConfig {
            n_normals: 3,
            plane_count: 2,
            slice_size: 16,
            ..Default::default()
        };
        let ds = generate_dataset(&vol, &cfg, "empty").unwrap();
        assert_eq!(ds.summary.variance_threshold, 0.0);
        assert_eq!(ds.summary.kept_count, 6);
        assert_eq!(ds.summary.pruned_count, 0);
    }

    #[test]
    fn hemisphere_mirror_property() {
        // A stack with normal -d reproduces the +d stack's slices exactly,
        // mirrored along the row axis and in reversed plane order.
        let spec = PhantomSpec { kind: PhantomKind::AsymmetricBlobs, seed: 17, count: 5, contrast: (0.3, 1.0) };
        let vol = generate_phantom(&spec, 32).unwrap();
        let cfg = SamplingConfig { plane_count: 4, plane_spacing_mm: 3.0, ..Default::default() };
        for d in [
            Vector3::new(0.3, -0.6, 0.74).normalize(),
            Vector3::new(-0.8, 0.1, 0.59).normalize(),
            Vector3::new(0.0, 0.0, 1.0),
        ] {
            let up = build_stack(&d, &cfg).unwrap();
            let down = build_stack(&-d, &cfg).unwrap();
            for k in 0..cfg.plane_count {
                let img_down = extract_slice(&vol, &down[k], 16, 1.0);
                let img_up = extract_slice(&vol, &up[cfg.plane_count - 1 - k], 16, 1.0);
                let mirrored = img_up.flipped_rows();
                for (a, b) in img_down.data().iter().zip(mirrored.data().iter()) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn corrupt_motion_bounds_and_determinism() {
        let spec = PhantomSpec { kind: PhantomKind::AsymmetricBlobs, seed: 19, count: 4, contrast: (0.3, 1.0) };
        let vol = generate_phantom(&spec, 32).unwrap();
        let cfg = SamplingConfig {
            n_normals: 4,
            plane_count: 2,
            slice_size: 16,
            ..Default::default()
        };
        let ds = generate_dataset(&vol, &cfg, "p").unwrap();

        let unchanged = corrupt_motion(&ds.samples, 0.0, 0.0, 1).unwrap();
        for (a, b) in ds.samples.iter().zip(unchanged.iter()) {
            assert_eq!(b.motion_pose.as_ref().unwrap().rotation, a.pose.rotation);
            assert_eq!(b.motion_pose.as_ref().unwrap().translation, a.pose.translation);
        }

        let moved = corrupt_motion(&ds.samples, 10.0, 5.0, 2).unwrap();
        for (orig, c) in ds.samples.iter().zip(moved.iter()) {
            let m = c.motion_pose.as_ref().unwrap();
            let (t, r) = pose_error_decomposed(&orig.pose, m);
            assert!(r <= 10.0 + 1e-9);
            assert!(t <= 5.0 * 3.0_f64.sqrt() + 1e-9);
            assert_eq!(c.image.data(), orig.image.data());
            assert_eq!(c.pose, orig.pose);
        }

        let again = corrupt_motion(&ds.samples, 10.0, 5.0, 2).unwrap();
        for (a, b) in moved.iter().zip(again.iter()) {
            assert_eq!(a.motion_pose.unwrap(), b.motion_pose.unwrap());
        }
    }
}
