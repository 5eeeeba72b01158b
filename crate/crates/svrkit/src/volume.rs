//! Canonical cubic volumes, resampling, interpolation and synthetic phantoms.
//!
//! All volumes live in an origin-centred atlas space: voxel `(i, j, k)` sits
//! at world position `((i, j, k) - (L-1)/2) * spacing` millimetres, with `i`
//! along x (fastest varying in memory) and `k` along z (slowest). Sampling
//! outside the grid support returns 0, matching segmented scans with a black
//! background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};
use crate::geometry::random_rotation;
use nalgebra::{Matrix3, Vector3};

/// Cubic scalar field with isotropic spacing, centred at the world origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    side: usize,
    spacing_mm: f64,
    data: Vec<f32>,
}

/// Borrowed view of an arbitrary-dimension centred grid, the input to
/// [`resample_to_atlas`].
#[derive(Debug, Clone, Copy)]
pub struct SourceGrid<'a> {
    /// Grid size along (x, y, z).
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    /// Row-major zyx: x fastest, z slowest.
    pub data: &'a [f32],
}

impl Volume3D {
    /// Wraps raw intensities; `data.len()` must equal `side^3`.
    pub fn from_raw(side: usize, spacing_mm: f64, data: Vec<f32>) -> Result<Self> {
        if side == 0 {
            return Err(SvrError::EmptyInput("volume side is 0".into()));
        }
        if spacing_mm <= 0.0 || !spacing_mm.is_finite() {
            return Err(SvrError::InvalidArgument(format!(
                "non-positive spacing {spacing_mm}"
            )));
        }
        if data.len() != side * side * side {
            return Err(SvrError::ShapeMismatch(format!(
                "expected {} voxels for side {side}, got {}",
                side * side * side,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SvrError::InvalidArgument("non-finite intensity".into()));
        }
        Ok(Self { side, spacing_mm, data })
    }

    pub fn zeros(side: usize, spacing_mm: f64) -> Result<Self> {
        Self::from_raw(side, spacing_mm, vec![0.0; side * side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Physical extent of the voxel lattice along one axis, in mm.
    pub fn extent_mm(&self) -> f64 {
        self.side as f64 * self.spacing_mm
    }

    #[inline]
    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[(k * self.side + j) * self.side + i]
    }

    #[inline]
    pub fn voxel_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f32 {
        &mut self.data[(k * self.side + j) * self.side + i]
    }

    /// World coordinate of a voxel centre.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let c = (self.side as f64 - 1.0) / 2.0;
        Vector3::new(
            (i as f64 - c) * self.spacing_mm,
            (j as f64 - c) * self.spacing_mm,
            (k as f64 - c) * self.spacing_mm,
        )
    }

    /// Continuous grid coordinate of a world point.
    #[inline]
    pub fn world_to_grid(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let c = (self.side as f64 - 1.0) / 2.0;
        Vector3::new(
            p.x / self.spacing_mm + c,
            p.y / self.spacing_mm + c,
            p.z / self.spacing_mm + c,
        )
    }

    pub fn as_source(&self) -> SourceGrid<'_> {
        SourceGrid {
            dims: [self.side; 3],
            spacing_mm: self.spacing_mm,
            data: &self.data,
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        for &v in &self.data {
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    }
}

#[inline]
fn trilinear_on_grid(
    dims: [usize; 3],
    fetch: impl Fn(usize, usize, usize) -> f64,
    g: Vector3<f64>,
) -> f64 {
    let [nx, ny, nz] = dims;
    if g.x < 0.0
        || g.y < 0.0
        || g.z < 0.0
        || g.x > (nx - 1) as f64
        || g.y > (ny - 1) as f64
        || g.z > (nz - 1) as f64
    {
        return 0.0;
    }
    let x0 = (g.x.floor() as usize).min(nx - 1);
    let y0 = (g.y.floor() as usize).min(ny - 1);
    let z0 = (g.z.floor() as usize).min(nz - 1);
    let fx = g.x - x0 as f64;
    let fy = g.y - y0 as f64;
    let fz = g.z - z0 as f64;
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let z1 = (z0 + 1).min(nz - 1);

    let c000 = fetch(x0, y0, z0);
    let c100 = fetch(x1, y0, z0);
    let c010 = fetch(x0, y1, z0);
    let c110 = fetch(x1, y1, z0);
    let c001 = fetch(x0, y0, z1);
    let c101 = fetch(x1, y0, z1);
    let c011 = fetch(x0, y1, z1);
    let c111 = fetch(x1, y1, z1);

    let c00 = c000 * (1.0 - fx) + c100 * fx;
    let c10 = c010 * (1.0 - fx) + c110 * fx;
    let c01 = c001 * (1.0 - fx) + c101 * fx;
    let c11 = c011 * (1.0 - fx) + c111 * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Trilinear interpolation at a world point, 0 outside the grid support.
pub fn sample_trilinear(v: &Volume3D, p: &Vector3<f64>) -> f64 {
    let side = v.side;
    trilinear_on_grid(
        [side; 3],
        |i, j, k| v.data[(k * side + j) * side + i] as f64,
        v.world_to_grid(p),
    )
}

/// Resamples an arbitrary centred grid into the cubic atlas space.
///
/// Output voxels map through world space into the source grid and are
/// trilinearly interpolated; points outside the source support become 0.
/// Resampling an already-cubic grid at its own side and spacing is the
/// bit-exact identity.
pub fn resample_to_atlas(input: &SourceGrid<'_>, side: usize, spacing_mm: f64) -> Result<Volume3D> {
    let [nx, ny, nz] = input.dims;
    if nx == 0 || ny == 0 || nz == 0 || input.data.is_empty() {
        return Err(SvrError::EmptyInput("empty source grid".into()));
    }
    if input.data.len() != nx * ny * nz {
        return Err(SvrError::ShapeMismatch(format!(
            "source data length {} does not match dims {:?}",
            input.data.len(),
            input.dims
        )));
    }
    if side < 8 {
        return Err(SvrError::InvalidArgument(format!(
            "atlas side {side} < 8"
        )));
    }
    if spacing_mm <= 0.0 || input.spacing_mm <= 0.0 {
        return Err(SvrError::InvalidArgument("non-positive spacing".into()));
    }

    let ratio = spacing_mm / input.spacing_mm;
    let c_out = (side as f64 - 1.0) / 2.0;
    let centers = [
        (nx as f64 - 1.0) / 2.0,
        (ny as f64 - 1.0) / 2.0,
        (nz as f64 - 1.0) / 2.0,
    ];
    let fetch = |i: usize, j: usize, k: usize| input.data[(k * ny + j) * nx + i] as f64;

    let mut data = vec![0.0f32; side * side * side];
    let mut idx = 0;
    for k in 0..side {
        let gz = (k as f64 - c_out) * ratio + centers[2];
        for j in 0..side {
            let gy = (j as f64 - c_out) * ratio + centers[1];
            for i in 0..side {
                let gx = (i as f64 - c_out) * ratio + centers[0];
                data[idx] =
                    trilinear_on_grid([nx, ny, nz], fetch, Vector3::new(gx, gy, gz)) as f32;
                idx += 1;
            }
        }
    }
    Volume3D::from_raw(side, spacing_mm, data)
}

/// Affine rescale so the minimum maps to 0 and the maximum to 1.
///
/// A constant volume maps to all zeros.
pub fn normalize_intensity(v: &Volume3D) -> Volume3D {
    let (min, max) = v.min_max();
    let range = (max - min) as f64;
    let data = if range == 0.0 {
        vec![0.0; v.data.len()]
    } else {
        v.data
            .iter()
            .map(|&x| ((x - min) as f64 / range) as f32)
            .collect()
    };
    Volume3D { side: v.side, spacing_mm: v.spacing_mm, data }
}

/// Synthetic phantom family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Nested, rotated, off-centre ellipsoids with distinct intensity
    /// plateaus; hard edges, exactly `count` histogram plateaus.
    NestedEllipsoids,
    /// Sum of anisotropic Gaussian blobs, smooth everywhere.
    AsymmetricBlobs,
}

/// Reproducible description of a synthetic phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub seed: u64,
    /// Number of primitives (ellipsoids or blobs).
    pub count: usize,
    /// Intensity range of the primitives before background (0) is added.
    pub contrast: (f64, f64),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            kind: PhantomKind::AsymmetricBlobs,
            seed: 0,
            count: 6,
            contrast: (0.3, 1.0),
        }
    }
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(SvrError::InvalidArgument("phantom count is 0".into()));
        }
        if self.kind == PhantomKind::NestedEllipsoids && self.count > 6 {
            return Err(SvrError::InvalidArgument(
                "nested-ellipsoids supports at most 6 levels".into(),
            ));
        }
        let (lo, hi) = self.contrast;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(SvrError::InvalidArgument(format!(
                "contrast range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        Ok(())
    }
}

struct Ellipsoid {
    center: Vector3<f64>,
    inv_rot: Matrix3<f64>,
    semi_axes: Vector3<f64>,
    value: f64,
}

impl Ellipsoid {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        let q = self.inv_rot * (p - self.center);
        let r = q.component_div(&self.semi_axes);
        r.norm_squared() <= 1.0
    }
}

/// Deterministic synthetic phantom in the atlas space (spacing 1 mm).
///
/// The produced volume is intensity-normalized to `[0, 1]`, has no
/// rotational symmetry about any axis, and its support covers well over 30%
/// of the central sphere of radius `L/2`.
pub fn generate_phantom(spec: &PhantomSpec, side: usize) -> Result<Volume3D> {
    spec.validate()?;
    if side < 16 {
        return Err(SvrError::InvalidArgument(format!(
            "phantom side {side} < 16"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        PhantomKind::NestedEllipsoids => nested_ellipsoids(spec, side, &mut rng),
        PhantomKind::AsymmetricBlobs => asymmetric_blobs(spec, side, &mut rng),
    }
}

fn level_values(spec: &PhantomSpec) -> Vec<f64> {
    let (lo, hi) = spec.contrast;
    if spec.count == 1 {
        return vec![hi];
    }
    (0..spec.count)
        .map(|m| lo + (hi - lo) * m as f64 / (spec.count - 1) as f64)
        .collect()
}

fn nested_ellipsoids(spec: &PhantomSpec, side: usize, rng: &mut ChaCha8Rng) -> Result<Volume3D> {
    let l = side as f64;
    let values = level_values(spec);
    let mut ellipsoids = Vec::with_capacity(spec.count);

    // Outermost level: distinct semi-axes keep rotational symmetry away,
    // sized so the support stays over 30% of the central L/2 sphere.
    let mut semi = Vector3::new(
        rng.gen_range(0.42..0.46) * l,
        rng.gen_range(0.36..0.40) * l,
        rng.gen_range(0.30..0.34) * l,
    );
    let mut center = Vector3::new(
        rng.gen_range(-0.02..0.02) * l,
        rng.gen_range(-0.02..0.02) * l,
        rng.gen_range(-0.02..0.02) * l,
    );
    for m in 0..spec.count {
        let rot = random_rotation(rng);
        ellipsoids.push(Ellipsoid {
            center,
            inv_rot: rot.transpose(),
            semi_axes: semi,
            value: values[m],
        });
        // Keep the next level's bounding sphere inside this level's
        // inscribed sphere so membership is strictly nested.
        let inner_max = semi.min() * 0.62;
        let budget = semi.min() - inner_max;
        center += Vector3::new(
            rng.gen_range(-0.4..0.4) * budget,
            rng.gen_range(-0.4..0.4) * budget,
            rng.gen_range(-0.4..0.4) * budget,
        );
        let aniso = Vector3::new(
            1.0,
            rng.gen_range(0.82..0.92),
            rng.gen_range(0.68..0.78),
        );
        semi = aniso * inner_max;
    }

    let mut vol = Volume3D::zeros(side, 1.0)?;
    for k in 0..side {
        for j in 0..side {
            for i in 0..side {
                let p = vol.voxel_center(i, j, k);
                // Deepest containing level wins; nesting makes membership
                // monotone so the last hit is the deepest.
                let mut value = 0.0;
                for e in &ellipsoids {
                    if e.contains(&p) {
                        value = e.value;
                    } else {
                        break;
                    }
                }
                *vol.voxel_mut(i, j, k) = value as f32;
            }
        }
    }
    Ok(normalize_if_needed(vol, spec))
}

fn asymmetric_blobs(spec: &PhantomSpec, side: usize, rng: &mut ChaCha8Rng) -> Result<Volume3D> {
    let l = side as f64;
    struct Blob {
        center: Vector3<f64>,
        inv_rot: Matrix3<f64>,
        inv_two_sigma_sq: Vector3<f64>,
        amplitude: f64,
        // Internal sinusoidal stripes; a bare Gaussian envelope leaves
        // slice poses nearly unconstrained under intensity registration.
        waves: [(Vector3<f64>, f64, f64); 4],
    }
    let (lo, hi) = spec.contrast;
    let blobs: Vec<Blob> = (0..spec.count)
        .map(|_| {
            let dir: Vector3<f64> = Vector3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            // Centres pushed off the origin and compact sigmas keep the
            // blob cloud asymmetric under rotation.
            let radius = rng.gen_range(0.10..0.33) * l;
            let center = if dir.norm() > 0.0 {
                dir.normalize() * radius
            } else {
                Vector3::zeros()
            };
            let sigma = Vector3::new(
                rng.gen_range(0.07..0.16) * l,
                rng.gen_range(0.07..0.16) * l,
                rng.gen_range(0.07..0.16) * l,
            );
            // Three stripe octaves per blob: long waves keep the pull
            // unambiguous under large misalignment (half a wavelength above
            // the motion amplitude), shorter ones take over as the residual
            // shrinks, the way broadband anatomy behaves.
            let base_wavelength = rng.gen_range(0.30..0.45) * l;
            let octaves: [(f64, f64); 4] = [(1.0, 0.35), (3.0, 0.22), (8.0, 0.16), (20.0, 0.10)];
            let waves = octaves.map(|(freq_mul, amp)| {
                let dir: Vector3<f64> = Vector3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                let k = 2.0 * std::f64::consts::PI * freq_mul / base_wavelength;
                let wave = if dir.norm() > 0.0 { dir.normalize() * k } else { Vector3::zeros() };
                (wave, amp, rng.gen_range(0.0..std::f64::consts::TAU))
            });
            Blob {
                center,
                inv_rot: random_rotation(rng).transpose(),
                inv_two_sigma_sq: sigma.map(|s| 1.0 / (2.0 * s * s)),
                amplitude: rng.gen_range(lo..=hi),
                waves,
            }
        })
        .collect();

    let mut vol = Volume3D::zeros(side, 1.0)?;
    for k in 0..side {
        for j in 0..side {
            for i in 0..side {
                let p = vol.voxel_center(i, j, k);
                let mut acc = 0.0;
                for b in &blobs {
                    let d = p - b.center;
                    let q = b.inv_rot * d;
                    let e = q.x * q.x * b.inv_two_sigma_sq.x
                        + q.y * q.y * b.inv_two_sigma_sq.y
                        + q.z * q.z * b.inv_two_sigma_sq.z;
                    let mut stripes = 1.0;
                    for (wave, amp, phase) in &b.waves {
                        stripes += amp * (wave.dot(&d) + phase).cos();
                    }
                    acc += b.amplitude * (-e).exp() * stripes;
                }
                *vol.voxel_mut(i, j, k) = acc as f32;
            }
        }
    }
    Ok(normalize_intensity(&vol))
}

fn normalize_if_needed(vol: Volume3D, spec: &PhantomSpec) -> Volume3D {
    // Plateau values already lie in (0, 1]; only rescale if the peak is not 1.
    let (_, max) = vol.min_max();
    if (max - spec.contrast.1 as f32).abs() > f32::EPSILON && max > 0.0 {
        normalize_intensity(&vol)
    } else {
        vol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    fn ramp_volume(side: usize, f: impl Fn(f64, f64, f64) -> f64) -> Volume3D {
        let mut vol = Volume3D::zeros(side, 1.0).unwrap();
        for k in 0..side {
            for j in 0..side {
                for i in 0..side {
                    let p = vol.voxel_center(i, j, k);
                    *vol.voxel_mut(i, j, k) = f(p.x, p.y, p.z) as f32;
                }
            }
        }
        vol
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let vol = ramp_volume(16, |x, y, z| 0.1 * x + 0.03 * y * z + 0.5);
        let out = resample_to_atlas(&vol.as_source(), 16, 1.0).unwrap();
        assert_eq!(vol.data(), out.data());
    }

    #[test]
    fn resample_constant_identity() {
        let vol = Volume3D::from_raw(64, 1.0, vec![0.7; 64 * 64 * 64]).unwrap();
        let out = resample_to_atlas(&vol.as_source(), 64, 1.0).unwrap();
        assert_eq!(vol.data(), out.data());
    }

    #[test]
    fn resample_upsample_zero_fills_corners() {
        let vol = Volume3D::from_raw(32, 1.0, vec![1.0; 32 * 32 * 32]).unwrap();
        let out = resample_to_atlas(&vol.as_source(), 64, 1.0).unwrap();
        // A corner voxel sits far outside the 32-voxel source support.
        assert_eq!(out.voxel(0, 0, 0), 0.0);
        assert_eq!(out.voxel(63, 63, 63), 0.0);
        // The centre is still inside.
        assert_eq!(out.voxel(32, 32, 32), 1.0);
    }

    #[test]
    fn resample_preserves_linear_ramp() {
        let vol = ramp_volume(33, |x, _, _| x);
        let out = resample_to_atlas(&vol.as_source(), 17, 2.0).unwrap();
        // Interior points of a trilinear field are reproduced exactly.
        for k in 2..15 {
            for j in 2..15 {
                for i in 2..15 {
                    let p = out.voxel_center(i, j, k);
                    assert!(
                        (out.voxel(i, j, k) as f64 - p.x).abs() < 1e-6,
                        "ramp broken at {:?}",
                        (i, j, k)
                    );
                }
            }
        }
    }

    #[test]
    fn trilinear_reproduces_trilinear_polynomial() {
        let f = |x: f64, y: f64, z: f64| {
            0.2 + 0.3 * x - 0.11 * y + 0.07 * z + 0.013 * x * y - 0.009 * y * z
                + 0.004 * x * z
                + 0.0017 * x * y * z
        };
        let vol = ramp_volume(21, f);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let p = Vector3::new(
                rng.gen_range(-8.0..8.0),
                rng.gen_range(-8.0..8.0),
                rng.gen_range(-8.0..8.0),
            );
            let got = sample_trilinear(&vol, &p);
            assert!((got - f(p.x, p.y, p.z)).abs() < 1e-6);
        }
    }

    #[test]
    fn trilinear_voxel_center_and_midpoint() {
        let mut vol = Volume3D::zeros(16, 1.0).unwrap();
        *vol.voxel_mut(4, 5, 6) = 2.0;
        *vol.voxel_mut(5, 5, 6) = 4.0;
        let center = vol.voxel_center(4, 5, 6);
        assert_eq!(sample_trilinear(&vol, &center), 2.0);
        let mid = center + Vector3::new(0.5, 0.0, 0.0);
        assert_eq!(sample_trilinear(&vol, &mid), 3.0);
    }

    #[test]
    fn trilinear_out_of_bounds_is_zero() {
        let vol = Volume3D::from_raw(16, 1.0, vec![1.0; 16 * 16 * 16]).unwrap();
        assert_eq!(sample_trilinear(&vol, &Vector3::new(100.0, 0.0, 0.0)), 0.0);
        assert_eq!(sample_trilinear(&vol, &Vector3::new(0.0, -100.0, 0.0)), 0.0);
    }

    #[test]
    fn normalize_rescales_and_is_idempotent() {
        let vol = Volume3D::from_raw(16, 1.0, {
            let mut d = vec![2.0f32; 16 * 16 * 16];
            d[0] = 4.0;
            d[1] = 6.0;
            d
        })
        .unwrap();
        let n = normalize_intensity(&vol);
        assert_eq!(n.data()[0], 0.5);
        assert_eq!(n.data()[1], 1.0);
        assert_eq!(n.data()[2], 0.0);
        let n2 = normalize_intensity(&n);
        assert_eq!(n.data(), n2.data());
    }

    #[test]
    fn normalize_constant_maps_to_zero() {
        let vol = Volume3D::from_raw(16, 1.0, vec![5.0; 16 * 16 * 16]).unwrap();
        let n = normalize_intensity(&vol);
        assert!(n.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_negative_values() {
        let mut data = vec![0.0f32; 16 * 16 * 16];
        data[0] = -1.0;
        data[1] = 3.0;
        let vol = Volume3D::from_raw(16, 1.0, data).unwrap();
        let n = normalize_intensity(&vol);
        assert_eq!(n.data()[0], 0.0);
        assert_eq!(n.data()[1], 1.0);
        assert_relative_eq!(n.data()[2] as f64, 0.25, epsilon = 1e-7);
    }

    #[test]
    fn phantom_deterministic() {
        let spec = PhantomSpec::default();
        let a = generate_phantom(&spec, 32).unwrap();
        let b = generate_phantom(&spec, 32).unwrap();
        assert_eq!(a.data(), b.data());
        let c = generate_phantom(&PhantomSpec { seed: 1, ..spec }, 32).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn nested_ellipsoids_have_count_plateaus() {
        let spec = PhantomSpec {
            kind: PhantomKind::NestedEllipsoids,
            seed: 42,
            count: 3,
            contrast: (0.3, 1.0),
        };
        let vol = generate_phantom(&spec, 64).unwrap();
        let levels: BTreeSet<u32> = vol.data().iter().map(|v| v.to_bits()).collect();
        // Background plus exactly `count` plateau values.
        assert_eq!(levels.len(), 4);
        assert!(levels.contains(&0.0f32.to_bits()));
    }

    #[test]
    fn phantom_support_covers_central_sphere() {
        for kind in [PhantomKind::NestedEllipsoids, PhantomKind::AsymmetricBlobs] {
            let spec = PhantomSpec { kind, seed: 7, count: 3, contrast: (0.3, 1.0) };
            let vol = generate_phantom(&spec, 64).unwrap();
            let radius = 32.0;
            let (mut inside, mut nonzero) = (0usize, 0usize);
            for k in 0..64 {
                for j in 0..64 {
                    for i in 0..64 {
                        let p = vol.voxel_center(i, j, k);
                        if p.norm() <= radius {
                            inside += 1;
                            if vol.voxel(i, j, k) > 1e-4 {
                                nonzero += 1;
                            }
                        }
                    }
                }
            }
            let frac = nonzero as f64 / inside as f64;
            assert!(frac >= 0.30, "{kind:?} support fraction {frac}");
        }
    }

    #[test]
    fn phantom_has_no_rotational_symmetry() {
        for kind in [PhantomKind::NestedEllipsoids, PhantomKind::AsymmetricBlobs] {
            for seed in 0..4 {
                let spec = PhantomSpec { kind, seed, count: 4, contrast: (0.3, 1.0) };
                let vol = generate_phantom(&spec, 48).unwrap();
                let side = vol.side();
                // Pearson correlation with the volume's own 90 degree
                // z-rotation (an exact index permutation).
                let mut xs = Vec::with_capacity(side * side * side);
                let mut ys = Vec::with_capacity(side * side * side);
                for k in 0..side {
                    for j in 0..side {
                        for i in 0..side {
                            xs.push(vol.voxel(i, j, k) as f64);
                            ys.push(vol.voxel(j, side - 1 - i, k) as f64);
                        }
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let mut num = 0.0;
                let mut dx = 0.0;
                let mut dy = 0.0;
                for (x, y) in xs.iter().zip(ys.iter()) {
                    num += (x - mx) * (y - my);
                    dx += (x - mx) * (x - mx);
                    dy += (y - my) * (y - my);
                }
                let ncc = num / (dx * dy).sqrt();
                assert!(ncc < 0.95, "{kind:?} seed {seed}: ncc {ncc}");
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_phantom(&PhantomSpec { count: 0, ..Default::default() }, 32).is_err());
        assert!(
            generate_phantom(
                &PhantomSpec { contrast: (0.0, 1.0), ..Default::default() },
                32
            )
            .is_err()
        );
        assert!(generate_phantom(&PhantomSpec::default(), 8).is_err());
    }
}
