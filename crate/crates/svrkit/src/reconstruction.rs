//! Motion-compensated volume reconstruction from posed slices.
//!
//! Reconstruction starts from a PSF-weighted splat of all slices at their
//! current poses, then alternates per-slice intensity registration against
//! the current volume (normalized cross-correlation maximized by gradient
//! ascent over a three-level Gaussian pyramid) with robust exclusion of
//! slices whose post-registration NCC stays below a threshold.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};
use crate::geometry::{euler_to_rotation, EulerPose, RigidPose};
use crate::sampling::SliceImage;
use crate::volume::Volume3D;

/// Reconstruction and registration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Output volume side in voxels.
    pub output_side: usize,
    pub output_spacing_mm: f64,
    /// In-plane PSF sigma in mm (in-plane pixel spacing / 2.355 matches a
    /// FWHM of one pixel).
    pub psf_sigma_mm: f64,
    /// Through-plane PSF sigma in mm; slice spacing / 2.355 by default.
    pub psf_through_sigma_mm: f64,
    pub svr_iterations: usize,
    /// Gaussian pyramid depth used by slice registration.
    pub pyramid_levels: usize,
    /// Initial ascent step in probe-step units.
    pub gd_step: f64,
    /// Gradient-ascent iterations per pyramid level.
    pub gd_max_iters: usize,
    /// Slices whose post-registration NCC falls below this are excluded.
    pub robust_ncc_threshold: f64,
    /// Blend weight for filling uncovered voxels from covered neighbours;
    /// 0 disables the smoothness fill.
    pub regularization_lambda: f64,
    /// Allow previously excluded slices back when their NCC recovers.
    pub readmit_excluded: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            output_side: 64,
            output_spacing_mm: 1.0,
            psf_sigma_mm: 1.0 / 2.355,
            psf_through_sigma_mm: 4.0 / 2.355,
            svr_iterations: 4,
            pyramid_levels: 3,
            gd_step: 2.0,
            gd_max_iters: 120,
            robust_ncc_threshold: 0.5,
            regularization_lambda: 0.5,
            readmit_excluded: false,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_side == 0 {
            return Err(SvrError::InvalidArgument("output_side must be >= 1".into()));
        }
        for (name, v) in [
            ("output_spacing_mm", self.output_spacing_mm),
            ("psf_sigma_mm", self.psf_sigma_mm),
            ("psf_through_sigma_mm", self.psf_through_sigma_mm),
            ("gd_step", self.gd_step),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(SvrError::InvalidArgument(format!("{name} must be > 0")));
            }
        }
        if self.pyramid_levels == 0 {
            return Err(SvrError::InvalidArgument("pyramid_levels must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.robust_ncc_threshold) {
            return Err(SvrError::InvalidArgument(
                "robust_ncc_threshold outside [-1, 1]".into(),
            ));
        }
        if self.regularization_lambda < 0.0 {
            return Err(SvrError::InvalidArgument(
                "regularization_lambda must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// A slice with its (current) pose and pixel pitch.
#[derive(Debug, Clone)]
pub struct PosedSlice {
    pub image: SliceImage,
    pub pose: RigidPose,
    pub pixel_spacing_mm: f64,
}

/// PSF-weighted splat of the slices into the output grid.
///
/// Every pixel deposits its value into nearby voxels weighted by an
/// anisotropic Gaussian oriented with the slice plane (in-plane
/// `psf_sigma_mm`, through-plane `psf_through_sigma_mm`, truncated at three
/// sigma). Covered voxels become `sum(w v) / sum(w)`; uncovered voxels are 0
/// or, with `regularization_lambda > 0`, blended from covered neighbours.
/// Accumulation order is fixed, so the result is thread-count independent.
pub fn splat_reconstruct(slices: &[PosedSlice], cfg: &ReconConfig) -> Result<Volume3D> {
    cfg.validate()?;
    if slices.is_empty() {
        return Err(SvrError::EmptyInput("no included slices to splat".into()));
    }
    let side = cfg.output_side;
    let spacing = cfg.output_spacing_mm;
    let mut num = vec![0.0f64; side * side * side];
    let mut den = vec![0.0f64; side * side * side];
    let mut out = Volume3D::zeros(side, spacing)?;

    let sip = cfg.psf_sigma_mm;
    let stp = cfg.psf_through_sigma_mm;
    let half_inv_ip = 1.0 / (2.0 * sip * sip);
    let half_inv_tp = 1.0 / (2.0 * stp * stp);
    let reach_ip = 3.0 * sip;
    let reach_tp = 3.0 * stp;

    for slice in slices {
        let size = slice.image.size();
        let c = (size as f64 - 1.0) / 2.0;
        let r = &slice.pose.rotation;
        // Per-world-axis half extent of the truncated, rotated kernel.
        let extent = Vector3::new(
            ((reach_ip * r[(0, 0)]).powi(2)
                + (reach_ip * r[(0, 1)]).powi(2)
                + (reach_tp * r[(0, 2)]).powi(2))
            .sqrt(),
            ((reach_ip * r[(1, 0)]).powi(2)
                + (reach_ip * r[(1, 1)]).powi(2)
                + (reach_tp * r[(1, 2)]).powi(2))
            .sqrt(),
            ((reach_ip * r[(2, 0)]).powi(2)
                + (reach_ip * r[(2, 1)]).powi(2)
                + (reach_tp * r[(2, 2)]).powi(2))
            .sqrt(),
        );
        for w in 0..size {
            let wy = (w as f64 - c) * slice.pixel_spacing_mm;
            for u in 0..size {
                let ux = (u as f64 - c) * slice.pixel_spacing_mm;
                let value = slice.image.pixel(u, w) as f64;
                let p = slice.pose.plane_point(ux, wy);
                let g = out.world_to_grid(&p);
                let lo = |gc: f64, e: f64| ((gc - e / spacing).ceil().max(0.0)) as usize;
                let hi = |gc: f64, e: f64| {
                    ((gc + e / spacing).floor().min((side - 1) as f64)).max(-1.0) as isize
                };
                let (i0, i1) = (lo(g.x, extent.x), hi(g.x, extent.x));
                let (j0, j1) = (lo(g.y, extent.y), hi(g.y, extent.y));
                let (k0, k1) = (lo(g.z, extent.z), hi(g.z, extent.z));
                if i1 < i0 as isize || j1 < j0 as isize || k1 < k0 as isize {
                    continue;
                }
                for k in k0..=k1 as usize {
                    for j in j0..=j1 as usize {
                        for i in i0..=i1 as usize {
                            let d = out.voxel_center(i, j, k) - p;
                            // Offset in the slice frame.
                            let local = r.transpose() * d;
                            if local.x.abs() > reach_ip
                                || local.y.abs() > reach_ip
                                || local.z.abs() > reach_tp
                            {
                                continue;
                            }
                            let wgt = (-(local.x * local.x + local.y * local.y) * half_inv_ip
                                - local.z * local.z * half_inv_tp)
                                .exp();
                            let idx = (k * side + j) * side + i;
                            num[idx] += wgt * value;
                            den[idx] += wgt;
                        }
                    }
                }
            }
        }
    }

    let covered: Vec<bool> = den.iter().map(|&d| d > 1e-12).collect();
    {
        let data = out.data_mut();
        for idx in 0..num.len() {
            data[idx] = if covered[idx] { (num[idx] / den[idx]) as f32 } else { 0.0 };
        }
    }

    if cfg.regularization_lambda > 0.0 {
        fill_uncovered(&mut out, &covered, cfg.regularization_lambda);
    }
    Ok(out)
}

/// Jacobi smoothness fill: uncovered voxels take `lambda` times the mean of
/// their already-defined 6-neighbours, growing inward over a fixed number
/// of passes.
fn fill_uncovered(vol: &mut Volume3D, covered: &[bool], lambda: f64) {
    const PASSES: usize = 8;
    let side = vol.side();
    let mut defined = covered.to_vec();
    for _ in 0..PASSES {
        let snapshot = vol.data().to_vec();
        let defined_snapshot = defined.clone();
        let mut changed = false;
        for k in 0..side {
            for j in 0..side {
                for i in 0..side {
                    let idx = (k * side + j) * side + i;
                    if defined_snapshot[idx] {
                        continue;
                    }
                    let mut sum = 0.0f64;
                    let mut count = 0usize;
                    let mut visit = |ii: isize, jj: isize, kk: isize| {
                        if ii < 0 || jj < 0 || kk < 0 {
                            return;
                        }
                        let (ii, jj, kk) = (ii as usize, jj as usize, kk as usize);
                        if ii >= side || jj >= side || kk >= side {
                            return;
                        }
                        let n = (kk * side + jj) * side + ii;
                        if defined_snapshot[n] {
                            sum += snapshot[n] as f64;
                            count += 1;
                        }
                    };
                    let (i, j, k) = (i as isize, j as isize, k as isize);
                    visit(i - 1, j, k);
                    visit(i + 1, j, k);
                    visit(i, j - 1, k);
                    visit(i, j + 1, k);
                    visit(i, j, k - 1);
                    visit(i, j, k + 1);
                    if count > 0 {
                        *vol.voxel_mut(i as usize, j as usize, k as usize) =
                            (lambda * sum / count as f64) as f32;
                        defined[idx] = true;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Normalized cross-correlation outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccResult {
    pub value: f64,
    /// Set when the joint support is too small or either side is constant.
    pub degenerate: bool,
}

/// Normalized cross-correlation over the joint support (elements nonzero in
/// both inputs).
///
/// Returns value 0 with the degenerate flag when fewer than two joint
/// samples exist or either side is constant over them.
pub fn ncc(a: &[f32], b: &[f32]) -> Result<NccResult> {
    if a.len() != b.len() {
        return Err(SvrError::ShapeMismatch(format!(
            "ncc inputs of length {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut n = 0usize;
    let mut sum_a = 0.0f64;
    let mut sum_b = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        if x != 0.0 && y != 0.0 {
            n += 1;
            sum_a += x as f64;
            sum_b += y as f64;
        }
    }
    if n < 2 {
        return Ok(NccResult { value: 0.0, degenerate: true });
    }
    let mean_a = sum_a / n as f64;
    let mean_b = sum_b / n as f64;
    let mut cov = 0.0f64;
    let mut var_a = 0.0f64;
    let mut var_b = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        if x != 0.0 && y != 0.0 {
            let da = x as f64 - mean_a;
            let db = y as f64 - mean_b;
            cov += da * db;
            var_a += da * da;
            var_b += db * db;
        }
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(NccResult { value: 0.0, degenerate: true });
    }
    Ok(NccResult {
        value: (cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Separable Gaussian blur of a square image (sigma 1 px, clamped edges).
fn blur_image(img: &SliceImage) -> SliceImage {
    let kernel = gaussian_kernel_sigma1();
    let size = img.size();
    let mut tmp = SliceImage::zeros(size);
    for w in 0..size {
        for u in 0..size {
            let mut acc = 0.0f64;
            for (t, &kv) in kernel.iter().enumerate() {
                let uu = (u as isize + t as isize - 2).clamp(0, size as isize - 1) as usize;
                acc += kv * img.pixel(uu, w) as f64;
            }
            *tmp.pixel_mut(u, w) = acc as f32;
        }
    }
    let mut out = SliceImage::zeros(size);
    for w in 0..size {
        for u in 0..size {
            let mut acc = 0.0f64;
            for (t, &kv) in kernel.iter().enumerate() {
                let ww = (w as isize + t as isize - 2).clamp(0, size as isize - 1) as usize;
                acc += kv * tmp.pixel(u, ww) as f64;
            }
            *out.pixel_mut(u, w) = acc as f32;
        }
    }
    out
}

fn gaussian_kernel_sigma1() -> [f64; 5] {
    let raw = [(-2i32), -1, 0, 1, 2].map(|x| (-(x * x) as f64 / 2.0).exp());
    let sum: f64 = raw.iter().sum();
    raw.map(|v| v / sum)
}

/// Blur plus 2x2 block-mean decimation; halves the size, doubles the pixel
/// spacing, and keeps the grid centred on the origin.
fn downsample_image(img: &SliceImage) -> SliceImage {
    let blurred = blur_image(img);
    let half = img.size() / 2;
    let mut out = SliceImage::zeros(half);
    for w in 0..half {
        for u in 0..half {
            let s = blurred.pixel(2 * u, 2 * w) as f64
                + blurred.pixel(2 * u + 1, 2 * w) as f64
                + blurred.pixel(2 * u, 2 * w + 1) as f64
                + blurred.pixel(2 * u + 1, 2 * w + 1) as f64;
            *out.pixel_mut(u, w) = (s / 4.0) as f32;
        }
    }
    out
}

fn blur_volume(v: &Volume3D) -> Volume3D {
    let kernel = gaussian_kernel_sigma1();
    let side = v.side();
    let clamp = |x: isize| x.clamp(0, side as isize - 1) as usize;
    let mut a = v.clone();
    let mut b = Volume3D::zeros(side, v.spacing_mm()).unwrap();
    // x, then y, then z.
    for axis in 0..3 {
        for k in 0..side {
            for j in 0..side {
                for i in 0..side {
                    let mut acc = 0.0f64;
                    for (t, &kv) in kernel.iter().enumerate() {
                        let o = t as isize - 2;
                        let (ii, jj, kk) = match axis {
                            0 => (clamp(i as isize + o), j, k),
                            1 => (i, clamp(j as isize + o), k),
                            _ => (i, j, clamp(k as isize + o)),
                        };
                        acc += kv * a.voxel(ii, jj, kk) as f64;
                    }
                    *b.voxel_mut(i, j, k) = acc as f32;
                }
            }
        }
        std::mem::swap(&mut a, &mut b);
    }
    a
}

/// Blur plus 2x2x2 block-mean decimation of a volume.
fn downsample_volume(v: &Volume3D) -> Volume3D {
    let blurred = blur_volume(v);
    let half = v.side() / 2;
    let mut out = Volume3D::zeros(half, v.spacing_mm() * 2.0).unwrap();
    for k in 0..half {
        for j in 0..half {
            for i in 0..half {
                let mut s = 0.0f64;
                for (dz, dy, dx) in
                    [(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1), (1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1)]
                {
                    s += blurred.voxel(2 * i + dx, 2 * j + dy, 2 * k + dz) as f64;
                }
                *out.voxel_mut(i, j, k) = (s / 8.0) as f32;
            }
        }
    }
    out
}

/// Gaussian pyramid of a volume, `levels` deep (index 0 is the original).
/// Stops early when a level can no longer halve evenly.
pub fn volume_pyramid(v: &Volume3D, levels: usize) -> Vec<Volume3D> {
    let mut out = vec![v.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.side() % 2 != 0 || last.side() < 16 {
            break;
        }
        out.push(downsample_volume(last));
    }
    out
}

fn image_pyramid(img: &SliceImage, levels: usize) -> Vec<SliceImage> {
    let mut out = vec![img.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.size() % 2 != 0 || last.size() < 8 {
            break;
        }
        out.push(downsample_image(last));
    }
    out
}

/// Outcome of one slice-to-volume registration.
#[derive(Debug, Clone)]
pub struct RegisterResult {
    pub pose: RigidPose,
    /// NCC at the returned pose against the full-resolution volume.
    pub ncc: f64,
    /// Constant slice or empty overlap; the initial pose was returned.
    pub degenerate: bool,
}

fn candidate_pose(pose0: &RigidPose, delta: &[f64; 6]) -> RigidPose {
    let d_rot = euler_to_rotation(&EulerPose {
        rx: delta[0],
        ry: delta[1],
        rz: delta[2],
        tx: 0.0,
        ty: 0.0,
        tz: 0.0,
    });
    pose0.perturbed(&d_rot.rotation, &Vector3::new(delta[3], delta[4], delta[5]))
}

/// Simulates slice acquisition from a volume: a through-plane Gaussian
/// average over five taps at `+-2, +-1, 0` sigma around the plane.
///
/// Matching simulated against acquired slices keeps the NCC optimum at the
/// true pose even though the splat volume is blurrier than the slices.
pub fn simulate_slice(
    volume: &Volume3D,
    pose: &RigidPose,
    size: usize,
    pixel_spacing_mm: f64,
    through_sigma_mm: f64,
) -> SliceImage {
    let taps: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let raw = taps.map(|t| (-0.5 * t * t).exp());
    let norm: f64 = raw.iter().sum();
    let c = (size as f64 - 1.0) / 2.0;
    let mut img = SliceImage::zeros(size);
    for w in 0..size {
        let wy = (w as f64 - c) * pixel_spacing_mm;
        for u in 0..size {
            let ux = (u as f64 - c) * pixel_spacing_mm;
            let mut acc = 0.0;
            for (t, &wgt) in taps.iter().zip(raw.iter()) {
                let p = pose.rotation
                    * nalgebra::Vector3::new(ux, wy, t * through_sigma_mm)
                    + pose.translation;
                acc += wgt * crate::volume::sample_trilinear(volume, &p);
            }
            *img.pixel_mut(u, w) = (acc / norm) as f32;
        }
    }
    img
}

fn ncc_at(
    slice: &SliceImage,
    volume: &Volume3D,
    pose: &RigidPose,
    pixel_spacing_mm: f64,
    through_sigma_mm: f64,
) -> f64 {
    let simulated = if through_sigma_mm > 0.0 {
        simulate_slice(volume, pose, slice.size(), pixel_spacing_mm, through_sigma_mm)
    } else {
        crate::sampling::extract_slice(volume, pose, slice.size(), pixel_spacing_mm)
    };
    match ncc(slice.data(), simulated.data()) {
        Ok(r) if !r.degenerate => r.value,
        _ => 0.0,
    }
}

/// Registers one slice against a prebuilt volume pyramid.
///
/// `level_floor` limits how fine the pass schedule goes (0 = full depth);
/// SVR iterations anneal it so early rounds align coarse structure against
/// a still-blurry consensus volume.
fn register_slice_pyramid(
    slice: &SliceImage,
    pose0: &RigidPose,
    pyramid: &[Volume3D],
    pixel_spacing_mm: f64,
    cfg: &ReconConfig,
    level_floor: usize,
) -> RegisterResult {
    if slice.variance() == 0.0 {
        return RegisterResult { pose: *pose0, ncc: 0.0, degenerate: true };
    }
    let slices = image_pyramid(slice, pyramid.len());
    let levels = slices.len().min(pyramid.len());
    let floor = level_floor.min(levels - 1);
    let floor_spacing = pixel_spacing_mm * (1usize << floor) as f64;
    // The improve-or-fall-back decision runs at the floor level (the
    // resolution that was actually optimized); the reported NCC is always
    // measured at full resolution.
    let base_floor_ncc = ncc_at(
        &slices[floor],
        &pyramid[floor],
        pose0,
        floor_spacing,
        cfg.psf_through_sigma_mm,
    );

    let mut delta = [0.0f64; 6];
    // Coarse-to-fine passes down to the floor, then a polish pass at the
    // floor level with quarter-size probe steps.
    let mut passes: Vec<(usize, f64)> = (floor..levels).rev().map(|l| (l, 1.0)).collect();
    passes.push((floor, 0.25));
    for (level, probe_scale) in passes {
        let scale = (1usize << level) as f64 * probe_scale;
        let slice_l = &slices[level];
        let vol_l = &pyramid[level];
        let spacing_l = pixel_spacing_mm * (1usize << level) as f64;
        // Probe steps: half a degree and half a millimetre, scaled per level.
        let probe: [f64; 6] = [
            0.5f64.to_radians() * scale,
            0.5f64.to_radians() * scale,
            0.5f64.to_radians() * scale,
            0.5 * scale,
            0.5 * scale,
            0.5 * scale,
        ];
        let cost = |d: &[f64; 6]| {
            ncc_at(slice_l, vol_l, &candidate_pose(pose0, d), spacing_l, cfg.psf_through_sigma_mm)
        };

        // Conjugate-gradient ascent on the finite-difference gradient with
        // an expanding line search; plain steepest ascent zigzags far too
        // slowly along the narrow curved valleys of the NCC landscape.
        // Gains below 1e-6 NCC are plateau noise; accepting them lets
        // poses wander along flat ridges.
        let mut current = cost(&delta);
        let mut step = cfg.gd_step;
        let mut prev_grad = [0.0f64; 6];
        let mut prev_dir = [0.0f64; 6];
        let mut have_prev = false;
        for _ in 0..cfg.gd_max_iters {
            let mut grad = [0.0f64; 6];
            let mut g_dot_g = 0.0;
            let mut g_dot_diff = 0.0;
            for i in 0..6 {
                let mut plus = delta;
                plus[i] += probe[i];
                let mut minus = delta;
                minus[i] -= probe[i];
                grad[i] = (cost(&plus) - cost(&minus)) / 2.0;
                g_dot_g += grad[i] * grad[i];
                g_dot_diff += grad[i] * (grad[i] - prev_grad[i]);
            }
            if g_dot_g.sqrt() < 1e-12 {
                break;
            }
            // Polak-Ribiere direction mixing, reset when it stops ascending.
            let mut dir = grad;
            if have_prev {
                let prev_norm_sq: f64 = prev_grad.iter().map(|g| g * g).sum();
                let beta = (g_dot_diff / prev_norm_sq.max(1e-30)).max(0.0);
                let mut d_dot_g = 0.0;
                for i in 0..6 {
                    dir[i] = grad[i] + beta * prev_dir[i];
                    d_dot_g += dir[i] * grad[i];
                }
                if d_dot_g <= 0.0 {
                    dir = grad;
                }
            }
            let dir_norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();

            // Line search: shrink until the first accepted move, then keep
            // expanding while the cost keeps climbing.
            let mut t = step;
            let mut improved = false;
            for _ in 0..24 {
                let mut candidate = delta;
                for i in 0..6 {
                    candidate[i] += t * probe[i] * dir[i] / dir_norm;
                }
                let c = cost(&candidate);
                if c > current + 1e-7 {
                    delta = candidate;
                    current = c;
                    improved = true;
                    t *= 1.6;
                } else if improved {
                    break;
                } else {
                    t *= 0.5;
                    if t < 0.05 {
                        break;
                    }
                }
            }
            if improved {
                step = (t / 1.6).max(0.1);
                prev_grad = grad;
                prev_dir = dir;
                have_prev = true;
            } else {
                if have_prev {
                    // Retry from a fresh steepest-ascent direction once.
                    have_prev = false;
                    continue;
                }
                break;
            }
        }
    }

    let refined = candidate_pose(pose0, &delta);
    let refined_floor_ncc = ncc_at(
        &slices[floor],
        &pyramid[floor],
        &refined,
        floor_spacing,
        cfg.psf_through_sigma_mm,
    );
    // Never worsen: fall back to the initialization.
    let pose = if refined_floor_ncc >= base_floor_ncc { refined } else { *pose0 };
    let full_ncc = ncc_at(slice, &pyramid[0], &pose, pixel_spacing_mm, cfg.psf_through_sigma_mm);
    RegisterResult { pose, ncc: full_ncc, degenerate: false }
}

/// Refines one slice pose by maximizing NCC against the target volume.
///
/// Coarse-to-fine over a Gaussian pyramid with numerically estimated
/// gradients; the returned pose never has lower full-resolution NCC than
/// the initialization. Constant slices come back unchanged and flagged.
pub fn register_slice(
    slice: &SliceImage,
    pose0: &RigidPose,
    target: &Volume3D,
    pixel_spacing_mm: f64,
    cfg: &ReconConfig,
) -> RegisterResult {
    let pyramid = volume_pyramid(target, cfg.pyramid_levels);
    register_slice_pyramid(slice, pose0, &pyramid, pixel_spacing_mm, cfg, 0)
}

/// Accumulating reconstruction state across SVR iterations.
#[derive(Debug, Clone)]
pub struct ReconState {
    pub volume: Volume3D,
    pub poses: Vec<RigidPose>,
    /// Robust weights: `true` = included (weight 1), `false` = excluded.
    pub included: Vec<bool>,
    /// Last registration NCC per slice.
    pub slice_ncc: Vec<f64>,
    pub log: Vec<IterationStats>,
}

/// Per-iteration log entry of [`svr_iterate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Mean registration NCC over the slices included after filtering.
    pub mean_ncc: f64,
    /// PSNR against the reference volume, when one was supplied.
    pub psnr_db: Option<f64>,
    pub excluded_slice_ids: Vec<usize>,
}

/// Applies the robust NCC gate to the current weights.
///
/// Weights only drop (1 to 0) unless `readmit_excluded` re-admits slices
/// whose NCC climbed back over the threshold.
pub fn robust_filter(state: &mut ReconState, cfg: &ReconConfig) {
    for i in 0..state.included.len() {
        let pass = state.slice_ncc[i] >= cfg.robust_ncc_threshold;
        if state.included[i] {
            state.included[i] = pass;
        } else if cfg.readmit_excluded {
            state.included[i] = pass;
        }
    }
}

/// Iterative slice-to-volume refinement.
///
/// Each iteration splats the currently included slices at their current
/// poses, re-registers every included slice to that volume in parallel
/// (per-slice work is independent, so results do not depend on the worker
/// count), then applies the robust NCC gate. With zero iterations the
/// result is the plain splat of the initial poses.
pub fn svr_iterate(
    slices: &[PosedSlice],
    cfg: &ReconConfig,
    reference: Option<&Volume3D>,
) -> Result<ReconState> {
    cfg.validate()?;
    if slices.is_empty() {
        return Err(SvrError::EmptyInput("no slices".into()));
    }
    if let Some(r) = reference {
        if r.side() != cfg.output_side {
            return Err(SvrError::ShapeMismatch(format!(
                "reference side {} vs output {}",
                r.side(),
                cfg.output_side
            )));
        }
    }

    let mut state = ReconState {
        volume: Volume3D::zeros(cfg.output_side, cfg.output_spacing_mm)?,
        poses: slices.iter().map(|s| s.pose).collect(),
        included: vec![true; slices.len()],
        slice_ncc: vec![0.0; slices.len()],
        log: Vec::new(),
    };

    for iteration in 0..cfg.svr_iterations {
        let current: Vec<PosedSlice> = slices
            .iter()
            .zip(state.poses.iter())
            .zip(state.included.iter())
            .filter(|(_, &inc)| inc)
            .map(|((s, pose), _)| PosedSlice {
                image: s.image.clone(),
                pose: *pose,
                pixel_spacing_mm: s.pixel_spacing_mm,
            })
            .collect();
        if current.is_empty() {
            return Err(SvrError::AllSlicesExcluded(format!(
                "iteration {iteration}: robust filtering removed every slice"
            )));
        }
        // Register against the data-supported splat only: the smoothness
        // fill is cosmetic and would bias the NCC optimum.
        let registration_cfg = ReconConfig { regularization_lambda: 0.0, ..*cfg };
        let volume = splat_reconstruct(&current, &registration_cfg)?;
        let pyramid = volume_pyramid(&volume, cfg.pyramid_levels);

        let level_floor = 0;
        let results: Vec<Option<RegisterResult>> = slices
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                if state.included[i] {
                    Some(register_slice_pyramid(
                        &s.image,
                        &state.poses[i],
                        &pyramid,
                        s.pixel_spacing_mm,
                        cfg,
                        level_floor,
                    ))
                } else {
                    None
                }
            })
            .collect();
        for (i, r) in results.into_iter().enumerate() {
            if let Some(r) = r {
                state.poses[i] = r.pose;
                state.slice_ncc[i] = r.ncc;
            }
        }

        robust_filter(&mut state, cfg);
        let included_ncc: Vec<f64> = state
            .slice_ncc
            .iter()
            .zip(state.included.iter())
            .filter(|(_, &inc)| inc)
            .map(|(&v, _)| v)
            .collect();
        if included_ncc.is_empty() {
            return Err(SvrError::AllSlicesExcluded(format!(
                "iteration {iteration}: no slice passed the NCC gate"
            )));
        }
        let mean_ncc = included_ncc.iter().sum::<f64>() / included_ncc.len() as f64;

        let final_slices: Vec<PosedSlice> = slices
            .iter()
            .zip(state.poses.iter())
            .zip(state.included.iter())
            .filter(|(_, &inc)| inc)
            .map(|((s, pose), _)| PosedSlice {
                image: s.image.clone(),
                pose: *pose,
                pixel_spacing_mm: s.pixel_spacing_mm,
            })
            .collect();
        state.volume = splat_reconstruct(&final_slices, cfg)?;
        let psnr_db = reference.map(|r| psnr(&state.volume, r)).transpose()?;
        state.log.push(IterationStats {
            iteration,
            mean_ncc,
            psnr_db,
            excluded_slice_ids: state
                .included
                .iter()
                .enumerate()
                .filter(|(_, &inc)| !inc)
                .map(|(i, _)| i)
                .collect(),
        });
    }

    if cfg.svr_iterations == 0 {
        let all: Vec<PosedSlice> = slices.to_vec();
        state.volume = splat_reconstruct(&all, cfg)?;
    }
    Ok(state)
}

/// Peak signal-to-noise ratio in dB: `10 log10(MAX^2 / MSE)` with `MAX`
/// the reference maximum and the MSE over all voxels.
///
/// Identical volumes report `f64::INFINITY`.
pub fn psnr(recon: &Volume3D, reference: &Volume3D) -> Result<f64> {
    if recon.side() != reference.side() {
        return Err(SvrError::ShapeMismatch(format!(
            "psnr dims {} vs {}",
            recon.side(),
            reference.side()
        )));
    }
    let (min, max) = reference.min_max();
    if min == max {
        return Err(SvrError::InvalidArgument("constant reference volume".into()));
    }
    let mut mse = 0.0f64;
    for (&a, &b) in recon.data().iter().zip(reference.data().iter()) {
        let d = a as f64 - b as f64;
        mse += d * d;
    }
    mse /= recon.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * ((max as f64) * (max as f64) / mse).log10())
}
