//! Procedural synthetic dataset: CSG composites of analytic primitives,
//! camera sampling, ray-cast rendering, ground-truth surface clouds and
//! occupancy grids. Everything is a pure function of its seed.

mod render;

pub use render::{render, RenderedView};

use crate::geometry::{voxelize_points, CameraModel, DepthGrid, PointCloud};
use crate::rng::SeededRng;

pub const SCENE_STREAM: u64 = 0x5ce1;
pub const CAMERA_STREAM: u64 = 0xca3a;
pub const SURFACE_STREAM: u64 = 0x5f5f;

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box.
    Cuboid { min: [f64; 3], max: [f64; 3] },
    /// Axis-aligned capped cylinder; `axis` is 0, 1 or 2.
    Cylinder { center: [f64; 3], axis: usize, radius: f64, half_height: f64 },
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsgRole {
    Union,
    Subtract,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub primitives: Vec<(Primitive, CsgRole)>,
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub min_primitives: usize,
    pub max_primitives: usize,
    pub allow_subtraction: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec { min_primitives: 2, max_primitives: 4, allow_subtraction: true }
    }
}

#[derive(Debug, Clone)]
pub struct CameraConfig {
    pub image: usize,
    pub focal: f64,
    pub radius: (f64, f64),
}

impl Default for CameraConfig {
    fn default() -> Self {
        // focal chosen so nearly all of [-1,1]^3 stays in frustum for the
        // pinned radius shell while the silhouette still covers the image.
        CameraConfig { image: 64, focal: 20.0, radius: (1.8, 2.6) }
    }
}

impl CameraConfig {
    /// Wide-angle variant under which the whole canonical box is guaranteed
    /// in-frame for every pose the sampler can produce.
    pub fn wide() -> Self {
        CameraConfig { image: 64, focal: 8.5, radius: (1.8, 2.6) }
    }
}

fn vsub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn vdot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn vlen(a: [f64; 3]) -> f64 {
    vdot(a, a).sqrt()
}

impl Primitive {
    /// Signed distance (negative inside). Exact for sphere/box/capsule,
    /// exact-at-surface for the capped cylinder.
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => vlen(vsub(p, center)) - radius,
            Primitive::Cuboid { min, max } => {
                let c = [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0, (min[2] + max[2]) / 2.0];
                let h = [(max[0] - min[0]) / 2.0, (max[1] - min[1]) / 2.0, (max[2] - min[2]) / 2.0];
                let q = [
                    (p[0] - c[0]).abs() - h[0],
                    (p[1] - c[1]).abs() - h[1],
                    (p[2] - c[2]).abs() - h[2],
                ];
                let outside = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
                vlen(outside) + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Primitive::Cylinder { center, axis, radius, half_height } => {
                let d = vsub(p, center);
                let axial = d[axis].abs() - half_height;
                let (i, j) = perp_axes(axis);
                let radial = (d[i] * d[i] + d[j] * d[j]).sqrt() - radius;
                let outside = (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt();
                outside + radial.max(axial).min(0.0)
            }
            Primitive::Capsule { a, b, radius } => {
                let ab = vsub(b, a);
                let ap = vsub(p, a);
                let t = (vdot(ap, ab) / vdot(ab, ab)).clamp(0.0, 1.0);
                let closest = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
                vlen(vsub(p, closest)) - radius
            }
        }
    }

    /// Outward surface normal at a point assumed on the surface.
    pub fn normal(&self, p: [f64; 3]) -> [f64; 3] {
        match *self {
            Primitive::Sphere { center, .. } => normalize(vsub(p, center)),
            Primitive::Cuboid { min, max } => {
                // face with the smallest distance to the point
                let mut best = (f64::INFINITY, [1.0, 0.0, 0.0]);
                for ax in 0..3 {
                    let mut n = [0.0; 3];
                    n[ax] = -1.0;
                    let d = (p[ax] - min[ax]).abs();
                    if d < best.0 {
                        best = (d, n);
                    }
                    let mut n = [0.0; 3];
                    n[ax] = 1.0;
                    let d = (p[ax] - max[ax]).abs();
                    if d < best.0 {
                        best = (d, n);
                    }
                }
                best.1
            }
            Primitive::Cylinder { center, axis, half_height, .. } => {
                let d = vsub(p, center);
                let (i, j) = perp_axes(axis);
                // closest feature: cap or side
                if half_height - d[axis].abs() < 1e-9 {
                    let mut n = [0.0; 3];
                    n[axis] = d[axis].signum();
                    n
                } else {
                    let mut n = [0.0; 3];
                    n[i] = d[i];
                    n[j] = d[j];
                    normalize(n)
                }
            }
            Primitive::Capsule { a, b, .. } => {
                let ab = vsub(b, a);
                let t = (vdot(vsub(p, a), ab) / vdot(ab, ab)).clamp(0.0, 1.0);
                let closest = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
                normalize(vsub(p, closest))
            }
        }
    }

    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Primitive::Sphere { center, radius } => (
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
            Primitive::Cuboid { min, max } => (min, max),
            Primitive::Cylinder { center, axis, radius, half_height } => {
                let mut lo = [0.0; 3];
                let mut hi = [0.0; 3];
                for ax in 0..3 {
                    let r = if ax == axis { half_height } else { radius };
                    lo[ax] = center[ax] - r;
                    hi[ax] = center[ax] + r;
                }
                (lo, hi)
            }
            Primitive::Capsule { a, b, radius } => {
                let mut lo = [0.0; 3];
                let mut hi = [0.0; 3];
                for ax in 0..3 {
                    lo[ax] = a[ax].min(b[ax]) - radius;
                    hi[ax] = a[ax].max(b[ax]) + radius;
                }
                (lo, hi)
            }
        }
    }

    pub fn surface_area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::Cuboid { min, max } => {
                let e = vsub(max, min);
                2.0 * (e[0] * e[1] + e[1] * e[2] + e[2] * e[0])
            }
            Primitive::Cylinder { radius, half_height, .. } => {
                2.0 * PI * radius * (2.0 * half_height) + 2.0 * PI * radius * radius
            }
            Primitive::Capsule { a, b, radius } => {
                2.0 * PI * radius * vlen(vsub(b, a)) + 4.0 * PI * radius * radius
            }
        }
    }

    /// Uniform sample on the full primitive surface.
    pub fn sample_surface_point(&self, rng: &mut SeededRng) -> [f64; 3] {
        use std::f64::consts::PI;
        match *self {
            Primitive::Sphere { center, radius } => {
                let d = rng.unit_vector();
                [center[0] + radius * d[0], center[1] + radius * d[1], center[2] + radius * d[2]]
            }
            Primitive::Cuboid { min, max } => {
                let e = vsub(max, min);
                let areas = [e[1] * e[2], e[0] * e[2], e[0] * e[1]];
                let total = 2.0 * (areas[0] + areas[1] + areas[2]);
                let mut pick = rng.uniform(0.0, total);
                for ax in 0..3 {
                    for side in 0..2 {
                        if pick < areas[ax] {
                            let mut p = [0.0; 3];
                            p[ax] = if side == 0 { min[ax] } else { max[ax] };
                            let (i, j) = perp_axes(ax);
                            p[i] = rng.uniform(min[i], max[i]);
                            p[j] = rng.uniform(min[j], max[j]);
                            return p;
                        }
                        pick -= areas[ax];
                    }
                }
                // fp rounding fell off the end; take a corner face point
                [min[0], min[1], min[2]]
            }
            Primitive::Cylinder { center, axis, radius, half_height } => {
                let side = 2.0 * PI * radius * 2.0 * half_height;
                let cap = PI * radius * radius;
                let pick = rng.uniform(0.0, side + 2.0 * cap);
                let (i, j) = perp_axes(axis);
                let mut p = center;
                if pick < side {
                    let th = rng.uniform(0.0, 2.0 * PI);
                    p[i] += radius * th.cos();
                    p[j] += radius * th.sin();
                    p[axis] += rng.uniform(-half_height, half_height);
                } else {
                    let th = rng.uniform(0.0, 2.0 * PI);
                    let r = radius * rng.uniform01().sqrt();
                    p[i] += r * th.cos();
                    p[j] += r * th.sin();
                    p[axis] += if pick < side + cap { half_height } else { -half_height };
                }
                p
            }
            Primitive::Capsule { a, b, radius } => {
                let len = vlen(vsub(b, a));
                let side = 2.0 * PI * radius * len;
                let caps = 4.0 * PI * radius * radius;
                if rng.uniform(0.0, side + caps) < side {
                    // frame around the axis
                    let axis = normalize(vsub(b, a));
                    let (u, v) = orthonormal_frame(axis);
                    let t = rng.uniform01();
                    let th = rng.uniform(0.0, 2.0 * PI);
                    let c = [
                        a[0] + t * (b[0] - a[0]),
                        a[1] + t * (b[1] - a[1]),
                        a[2] + t * (b[2] - a[2]),
                    ];
                    [
                        c[0] + radius * (th.cos() * u[0] + th.sin() * v[0]),
                        c[1] + radius * (th.cos() * u[1] + th.sin() * v[1]),
                        c[2] + radius * (th.cos() * u[2] + th.sin() * v[2]),
                    ]
                } else {
                    let axis = normalize(vsub(b, a));
                    let d = rng.unit_vector();
                    let along = vdot(d, axis);
                    let end = if along >= 0.0 { b } else { a };
                    [end[0] + radius * d[0], end[1] + radius * d[1], end[2] + radius * d[2]]
                }
            }
        }
    }

    fn scaled(&self, scale: f64, shift: [f64; 3]) -> Primitive {
        let m = |p: [f64; 3]| {
            [p[0] * scale + shift[0], p[1] * scale + shift[1], p[2] * scale + shift[2]]
        };
        match *self {
            Primitive::Sphere { center, radius } => {
                Primitive::Sphere { center: m(center), radius: radius * scale }
            }
            Primitive::Cuboid { min, max } => Primitive::Cuboid { min: m(min), max: m(max) },
            Primitive::Cylinder { center, axis, radius, half_height } => Primitive::Cylinder {
                center: m(center),
                axis,
                radius: radius * scale,
                half_height: half_height * scale,
            },
            Primitive::Capsule { a, b, radius } => {
                Primitive::Capsule { a: m(a), b: m(b), radius: radius * scale }
            }
        }
    }
}

pub(crate) fn perp_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

pub(crate) fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = vlen(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

fn orthonormal_frame(axis: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = normalize([
        axis[1] * helper[2] - axis[2] * helper[1],
        axis[2] * helper[0] - axis[0] * helper[2],
        axis[0] * helper[1] - axis[1] * helper[0],
    ]);
    let v = [
        axis[1] * u[2] - axis[2] * u[1],
        axis[2] * u[0] - axis[0] * u[2],
        axis[0] * u[1] - axis[1] * u[0],
    ];
    (u, v)
}

impl Scene {
    /// CSG composite value at a point: union is `min`, subtraction `max(d,-d_s)`,
    /// applied in primitive order. Zero on the exposed surface, negative inside.
    pub fn implicit(&self, p: [f64; 3]) -> f64 {
        let mut d = f64::INFINITY;
        for (prim, role) in &self.primitives {
            let s = prim.sdf(p);
            d = match role {
                CsgRole::Union => d.min(s),
                CsgRole::Subtract => d.max(-s),
            };
        }
        d
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.implicit(p) < 0.0
    }
}

/// Whether a point on the surface of primitive `idx` is part of the exposed
/// composite surface.
fn surface_point_exposed(scene: &Scene, idx: usize, p: [f64; 3]) -> bool {
    const EPS: f64 = 1e-9;
    let role = scene.primitives[idx].1;
    match role {
        CsgRole::Union => {
            for (j, (prim, r)) in scene.primitives.iter().enumerate() {
                if j == idx {
                    continue;
                }
                match r {
                    CsgRole::Union => {
                        if prim.sdf(p) < -EPS {
                            return false; // buried inside another solid
                        }
                    }
                    CsgRole::Subtract => {
                        if prim.sdf(p) < EPS {
                            return false; // carved away
                        }
                    }
                }
            }
            true
        }
        CsgRole::Subtract => {
            // the cut face exists only where the cutter passes through solid
            let mut in_solid = false;
            for (j, (prim, r)) in scene.primitives.iter().enumerate() {
                if j == idx {
                    continue;
                }
                match r {
                    CsgRole::Union => {
                        if prim.sdf(p) < -EPS {
                            in_solid = true;
                        }
                    }
                    CsgRole::Subtract => {
                        if prim.sdf(p) < -EPS {
                            return false;
                        }
                    }
                }
            }
            in_solid
        }
    }
}

fn random_primitive(rng: &mut SeededRng) -> Primitive {
    let c = [rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)];
    match rng.range(0, 4) {
        0 => Primitive::Sphere { center: c, radius: rng.uniform(0.25, 0.6) },
        1 => {
            let h = [rng.uniform(0.2, 0.55), rng.uniform(0.2, 0.55), rng.uniform(0.2, 0.55)];
            Primitive::Cuboid {
                min: [c[0] - h[0], c[1] - h[1], c[2] - h[2]],
                max: [c[0] + h[0], c[1] + h[1], c[2] + h[2]],
            }
        }
        2 => Primitive::Cylinder {
            center: c,
            axis: rng.range(0, 3),
            radius: rng.uniform(0.15, 0.4),
            half_height: rng.uniform(0.25, 0.55),
        },
        _ => {
            let d = rng.unit_vector();
            let l = rng.uniform(0.3, 0.7);
            Primitive::Capsule {
                a: [c[0] - d[0] * l, c[1] - d[1] * l, c[2] - d[2] * l],
                b: [c[0] + d[0] * l, c[1] + d[1] * l, c[2] + d[2] * l],
                radius: rng.uniform(0.12, 0.3),
            }
        }
    }
}

/// Deterministic CSG composite rescaled so its bounding box fits `[-1,1]^3`.
pub fn sample_scene(seed: u64, spec: &SceneSpec) -> Scene {
    for attempt in 0..16u64 {
        let mut rng = SeededRng::derive(seed, SCENE_STREAM.wrapping_add(attempt << 32));
        let n = rng.range(spec.min_primitives, spec.max_primitives + 1);
        let mut prims: Vec<(Primitive, CsgRole)> =
            (0..n).map(|_| (random_primitive(&mut rng), CsgRole::Union)).collect();
        if spec.allow_subtraction && n >= 2 && rng.uniform01() < 0.5 {
            // carve with a small primitive near an existing surface
            let (base, _) = &prims[rng.range(0, n)];
            let anchor = base.sample_surface_point(&mut rng);
            let cutter = Primitive::Sphere {
                center: anchor,
                radius: rng.uniform(0.15, 0.35),
            };
            prims.push((cutter, CsgRole::Subtract));
        }
        let scene = rescale_to_canonical(Scene { seed, primitives: prims });
        if scene_is_usable(&scene) {
            return scene;
        }
    }
    // fall back to a plain sphere; practically unreachable
    Scene {
        seed,
        primitives: vec![(
            Primitive::Sphere { center: [0.0; 3], radius: 1.0 },
            CsgRole::Union,
        )],
    }
}

fn rescale_to_canonical(scene: Scene) -> Scene {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (prim, role) in &scene.primitives {
        if *role == CsgRole::Union {
            let (a, b) = prim.aabb();
            for ax in 0..3 {
                lo[ax] = lo[ax].min(a[ax]);
                hi[ax] = hi[ax].max(b[ax]);
            }
        }
    }
    let extent = (0..3).map(|ax| hi[ax] - lo[ax]).fold(0.0f64, f64::max);
    let scale = 2.0 / extent;
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    let shift = [-center[0] * scale, -center[1] * scale, -center[2] * scale];
    let primitives = scene
        .primitives
        .iter()
        .map(|(p, r)| (p.scaled(scale, shift), *r))
        .collect();
    Scene { seed: scene.seed, primitives }
}

fn scene_is_usable(scene: &Scene) -> bool {
    // enough exposed surface for the rejection sampler to make progress
    let mut rng = SeededRng::derive(scene.seed, 0xdead);
    let mut accepted = 0;
    for _ in 0..200 {
        let idx = rng.range(0, scene.primitives.len());
        let p = scene.primitives[idx].0.sample_surface_point(&mut rng);
        if surface_point_exposed(scene, idx, p) {
            accepted += 1;
        }
    }
    accepted >= 60
}

/// Area-weighted sample of the exposed composite surface.
pub fn sample_surface(scene: &Scene, n: usize, seed: u64) -> PointCloud {
    let mut rng = SeededRng::derive(seed, SURFACE_STREAM);
    let areas: Vec<f64> = scene.primitives.iter().map(|(p, _)| p.surface_area()).collect();
    let total: f64 = areas.iter().sum();
    let mut points = Vec::with_capacity(n);
    let max_attempts = n.saturating_mul(1000).max(100_000);
    let mut attempts = 0;
    while points.len() < n && attempts < max_attempts {
        attempts += 1;
        let mut pick = rng.uniform(0.0, total);
        let mut idx = 0;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                idx = i;
                break;
            }
            pick -= a;
        }
        let p = scene.primitives[idx].0.sample_surface_point(&mut rng);
        if surface_point_exposed(scene, idx, p) {
            points.push(p);
        }
    }
    PointCloud::new(points)
}

/// Surface occupancy defined by a dense-sampling oracle (1e5 points).
pub fn gt_occupancy(scene: &Scene, n: usize) -> DepthGrid {
    let cloud = sample_surface(scene, 100_000, scene.seed ^ 0x6f6f);
    voxelize_points(&cloud, n)
}

/// Pose uniform on a spherical shell, look-at the origin with a jittered up
/// vector, fixed intrinsics.
pub fn sample_camera(seed: u64, config: &CameraConfig) -> CameraModel {
    let mut rng = SeededRng::derive(seed, CAMERA_STREAM);
    let dir = rng.unit_vector();
    let radius = rng.uniform(config.radius.0, config.radius.1);
    let pos = [dir[0] * radius, dir[1] * radius, dir[2] * radius];
    // forward = toward origin
    let fwd = [-dir[0], -dir[1], -dir[2]];
    let mut up = [
        rng.uniform(-0.2, 0.2),
        1.0 + rng.uniform(-0.2, 0.2),
        rng.uniform(-0.2, 0.2),
    ];
    // keep the frame well conditioned when fwd is nearly vertical
    if vdot(normalize(up), fwd).abs() > 0.98 {
        up = [1.0, 0.0, 0.0];
    }
    let right = normalize([
        up[1] * fwd[2] - up[2] * fwd[1],
        up[2] * fwd[0] - up[0] * fwd[2],
        up[0] * fwd[1] - up[1] * fwd[0],
    ]);
    let down = [
        fwd[1] * right[2] - fwd[2] * right[1],
        fwd[2] * right[0] - fwd[0] * right[2],
        fwd[0] * right[1] - fwd[1] * right[0],
    ];
    let rotation = [right, down, fwd];
    let translation = [
        -(rotation[0][0] * pos[0] + rotation[0][1] * pos[1] + rotation[0][2] * pos[2]),
        -(rotation[1][0] * pos[0] + rotation[1][1] * pos[1] + rotation[1][2] * pos[2]),
        -(rotation[2][0] * pos[0] + rotation[2][1] * pos[1] + rotation[2][2] * pos[2]),
    ];
    let half = (config.image / 2) as f64;
    CameraModel {
        rotation,
        translation,
        focal: config.focal,
        principal: (half, half),
        extent: (config.image, config.image),
    }
}

/// Camera seed for view `view` of scene `scene_seed`.
pub fn view_seed(scene_seed: u64, view: u32) -> u64 {
    scene_seed.wrapping_mul(0x0100_0000_01b3) ^ (view as u64)
}
