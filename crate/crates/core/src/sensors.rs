//! Virtual LiDAR, virtual depth camera and the ground-truth contact skin.
//!
//! Objects are vertical extrusions of their footprint from the ground plane
//! (`z = 0` in the robot frame) up to their height. The ground plane itself is
//! the only other obstacle; the robot body is not rendered.

use std::f64::consts::FRAC_PI_4;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Transform3;
use crate::world::{classify_contact, contact_manifold, ContactState, Shape, WorldSpecs, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Lidar,
    Camera,
    Robot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub frame: Frame,
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(frame: Frame, points: Vec<Vector3<f64>>) -> Self {
        Self { frame, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Re-expresses the cloud through `mount` (sensor frame → robot frame).
    pub fn to_robot(&self, mount: &Transform3) -> PointCloud {
        PointCloud::new(Frame::Robot, crate::geometry::transform_points(mount, &self.points))
    }
}

/// Single planar ring LiDAR with uniformly spaced beams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarConfig {
    pub mount: Transform3,
    /// Beams span `[-half_fov, half_fov]` radians in the sensor frame.
    pub half_fov: f64,
    pub beams: usize,
    pub range_max: f64,
    pub noise_sigma: f64,
    pub rate_hz: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            mount: Transform3::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.3))
                .expect("identity mount"),
            half_fov: FRAC_PI_4,
            beams: 128,
            range_max: 10.0,
            noise_sigma: 0.005,
            rate_hz: 10.0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beams < 2 || !(self.half_fov > 0.0) || !(self.range_max > 0.0) {
            return Err(Error::Config(
                "lidar: need beams >= 2, half_fov > 0 and range_max > 0".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !(self.rate_hz > 0.0) {
            return Err(Error::Config("lidar: noise_sigma >= 0 and rate_hz > 0".into()));
        }
        Ok(())
    }

    /// Strictly increasing beam azimuths.
    pub fn azimuths(&self) -> Vec<f64> {
        let step = 2.0 * self.half_fov / (self.beams - 1) as f64;
        (0..self.beams)
            .map(|i| -self.half_fov + step * i as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Pinhole projection of a camera-frame point to `(u, v, z)`.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        )
    }

    /// Camera-frame point seen at pixel `(u, v)` with depth `z`.
    pub fn deproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new(z * (u - self.cx) / self.fx, z * (v - self.cy) / self.fy, z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    /// Optical frame (x right, y down, z forward) expressed in the robot frame.
    pub mount: Transform3,
    pub intrinsics: Intrinsics,
    pub depth_noise_sigma: f64,
    pub rate_hz: f64,
}

/// Optical-frame rotation for a camera looking along robot +x, pitched down by `pitch`.
pub fn forward_camera_rotation(pitch: f64) -> Matrix3<f64> {
    let (s, c) = pitch.sin_cos();
    Matrix3::from_columns(&[
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(-s, 0.0, -c),
        Vector3::new(c, 0.0, -s),
    ])
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            mount: Transform3::new(
                forward_camera_rotation(60f64.to_radians()),
                Vector3::new(0.0, 0.0, 1.1),
            )
            .expect("camera rotation is orthonormal"),
            intrinsics: Intrinsics {
                fx: 80.0,
                fy: 80.0,
                cx: 64.0,
                cy: 48.0,
                width: 128,
                height: 96,
            },
            depth_noise_sigma: 0.01,
            rate_hz: 10.0,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        let ok = k.fx > 0.0
            && k.fy > 0.0
            && k.cx > 0.0
            && k.cx < k.width as f64
            && k.cy > 0.0
            && k.cy < k.height as f64
            && self.depth_noise_sigma >= 0.0
            && self.rate_hz > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("camera intrinsics/noise invalid: {self:?}")))
        }
    }
}

/// Depth image plus ground-truth silhouette of the pushed object.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedDepthFrame {
    pub intrinsics: Intrinsics,
    /// Row-major, meters; 0 where the ray hit nothing.
    pub depth: Vec<f64>,
    /// Row-major; true where the first hit is the object.
    pub mask: Vec<bool>,
}

impl SegmentedDepthFrame {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.intrinsics.width + u
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depth[self.index(u, v)]
    }

    pub fn mask_at(&self, u: usize, v: usize) -> bool {
        self.mask[self.index(u, v)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitKind {
    Object,
    Ground,
}

/// The pushed object placed in the robot frame, ready for ray queries.
pub struct Scene {
    /// Robot frame → object frame, planar part.
    rot: nalgebra::Matrix2<f64>,
    origin: Vector2<f64>,
    shape: Shape,
    height: f64,
}

impl Scene {
    pub fn new(state: &WorldState, specs: &WorldSpecs) -> Self {
        let rel = state.robot.relative(&state.object);
        Self {
            rot: rel.rotation().transpose(),
            origin: rel.position(),
            shape: specs.object.shape.clone(),
            height: specs.object.height,
        }
    }

    /// First intersection of the ray `origin + t·dir` (robot frame, t > 0).
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, HitKind)> {
        let mut best: Option<(f64, HitKind)> = None;
        let mut take = |t: f64, kind: HitKind| {
            if t > 1e-12 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, kind));
            }
        };
        if dir.z < 0.0 {
            take(-origin.z / dir.z, HitKind::Ground);
        }
        if let Some(t) = self.object_hit(origin, dir) {
            take(t, HitKind::Object);
        }
        best
    }

    fn object_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let o = self.rot * (Vector2::new(origin.x, origin.y) - self.origin);
        let d = self.rot * Vector2::new(dir.x, dir.y);
        let (oz, dz, h) = (origin.z, dir.z, self.height);
        let z_ok = |t: f64| {
            let z = oz + dz * t;
            (0.0..=h).contains(&z)
        };
        let mut best = f64::INFINITY;
        match &self.shape {
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                for i in 0..n {
                    let a = Vector2::from(vertices[i]);
                    let b = Vector2::from(vertices[(i + 1) % n]);
                    if let Some(t) = ray_segment(o, d, a, b) {
                        if t < best && z_ok(t) {
                            best = t;
                        }
                    }
                }
                if dz != 0.0 {
                    let t = (h - oz) / dz;
                    if t > 0.0 && t < best {
                        let p = o + d * t;
                        if point_in_polygon(p, vertices) {
                            best = t;
                        }
                    }
                }
            }
            Shape::Circle { radius } => {
                let a = d.dot(&d);
                if a > 0.0 {
                    let b = 2.0 * o.dot(&d);
                    let c = o.dot(&o) - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                            if t > 0.0 && t < best && z_ok(t) {
                                best = t;
                                break;
                            }
                        }
                    }
                }
                if dz != 0.0 {
                    let t = (h - oz) / dz;
                    if t > 0.0 && t < best && (o + d * t).norm() <= *radius {
                        best = t;
                    }
                }
            }
        }
        best.is_finite().then_some(best)
    }
}

/// Parameter `t > 0` where the 2D ray `o + t·d` crosses segment `ab`.
fn ray_segment(o: Vector2<f64>, d: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> Option<f64> {
    let e = b - a;
    let denom = d.x * e.y - d.y * e.x;
    if denom == 0.0 {
        return None;
    }
    let w = a - o;
    let t = (w.x * e.y - w.y * e.x) / denom;
    let s = (w.x * d.y - w.y * d.x) / denom;
    (t > 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

fn point_in_polygon(p: Vector2<f64>, vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[j]);
        if (a[1] > p.y) != (b[1] > p.y) && p.x < (b[0] - a[0]) * (p.y - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// One LiDAR sweep, returned in the sensor frame. Misses and returns beyond
/// `range_max` are omitted.
pub fn lidar_scan<R: Rng + ?Sized>(
    state: &WorldState,
    cfg: &LidarConfig,
    specs: &WorldSpecs,
    rng: &mut R,
) -> PointCloud {
    let scene = Scene::new(state, specs);
    let origin = *cfg.mount.translation();
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("sigma > 0"));
    let mut points = Vec::with_capacity(cfg.beams);
    for az in cfg.azimuths() {
        let dir_l = Vector3::new(az.cos(), az.sin(), 0.0);
        let dir_r = cfg.mount.apply_vector(&dir_l);
        let Some((t, _)) = scene.raycast(&origin, &dir_r) else {
            continue;
        };
        if t > cfg.range_max {
            continue;
        }
        let range = match &noise {
            Some(n) => t + n.sample(rng),
            None => t,
        };
        if range > 0.0 {
            points.push(dir_l * range);
        }
    }
    PointCloud::new(Frame::Lidar, points)
}

/// Per-pixel ray cast producing depth (optical-axis z) and the object mask.
pub fn depth_render<R: Rng + ?Sized>(
    state: &WorldState,
    cfg: &CameraConfig,
    specs: &WorldSpecs,
    rng: &mut R,
) -> SegmentedDepthFrame {
    let scene = Scene::new(state, specs);
    let k = cfg.intrinsics;
    let origin = *cfg.mount.translation();
    let noise = (cfg.depth_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg.depth_noise_sigma).expect("sigma > 0"));
    let mut depth = vec![0.0; k.width * k.height];
    let mut mask = vec![false; k.width * k.height];
    for v in 0..k.height {
        for u in 0..k.width {
            // unit-z direction so that the ray parameter equals optical depth
            let dir_c = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let dir_r = cfg.mount.apply_vector(&dir_c);
            if let Some((t, kind)) = scene.raycast(&origin, &dir_r) {
                let z = match &noise {
                    Some(n) => (t + n.sample(rng)).max(1e-6),
                    None => t,
                };
                let i = v * k.width + u;
                depth[i] = z;
                mask[i] = kind == HitKind::Object;
            }
        }
    }
    SegmentedDepthFrame {
        intrinsics: k,
        depth,
        mask,
    }
}

/// Mask pixels with at least one 4-neighbour outside the mask; the image
/// border counts as outside. Row-major order.
pub fn extract_mask_boundary(frame: &SegmentedDepthFrame) -> Vec<(usize, usize)> {
    let (w, h) = (frame.width(), frame.height());
    let inside = |u: isize, v: isize| {
        u >= 0 && v >= 0 && (u as usize) < w && (v as usize) < h && frame.mask_at(u as usize, v as usize)
    };
    let mut out = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if !frame.mask_at(u, v) {
                continue;
            }
            let (ui, vi) = (u as isize, v as isize);
            if !(inside(ui - 1, vi) && inside(ui + 1, vi) && inside(ui, vi - 1) && inside(ui, vi + 1)) {
                out.push((u, v));
            }
        }
    }
    out
}

/// Camera-frame points for `pixels`; pixels without depth are skipped and
/// counted in the returned tally.
pub fn deproject(frame: &SegmentedDepthFrame, pixels: &[(usize, usize)]) -> (PointCloud, usize) {
    let mut dropped = 0;
    let mut points = Vec::with_capacity(pixels.len());
    for &(u, v) in pixels {
        let z = frame.depth_at(u, v);
        if z > 0.0 {
            points.push(frame.intrinsics.deproject(u as f64, v as f64, z));
        } else {
            dropped += 1;
        }
    }
    (PointCloud::new(Frame::Camera, points), dropped)
}

/// Contact skin: the labeled ground-truth manifold.
pub fn contact_skin_read(state: &WorldState, specs: &WorldSpecs) -> ContactState {
    classify_contact(&contact_manifold(state, specs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use crate::world::{place_object, ContactType, ObjectSpec, RobotSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn specs(object: ObjectSpec) -> WorldSpecs {
        WorldSpecs {
            robot: RobotSpec::default(),
            object,
        }
    }

    fn circle(r: f64) -> ObjectSpec {
        ObjectSpec {
            name: "cyl".into(),
            shape: Shape::Circle { radius: r },
            mass: 25.0,
            height: 0.7,
            support_radius: 0.15,
            cop_offset: [0.0; 2],
            mu_ground: 0.3,
            mu_robot: 0.35,
        }
    }

    fn boxy() -> ObjectSpec {
        ObjectSpec {
            name: "box".into(),
            shape: Shape::rectangle(0.4, 0.4),
            mass: 20.0,
            height: 0.8,
            support_radius: 0.153,
            cop_offset: [0.0; 2],
            mu_ground: 0.3,
            mu_robot: 0.35,
        }
    }

    fn noiseless_lidar() -> LidarConfig {
        LidarConfig {
            noise_sigma: 0.0,
            ..LidarConfig::default()
        }
    }

    fn state_at(object: Pose2) -> WorldState {
        WorldState {
            robot: Pose2::default(),
            object,
            t: 0.0,
            rng_seed: 0,
        }
    }

    #[test]
    fn lidar_empty_scene() {
        let sp = specs(circle(0.2));
        let s = state_at(Pose2::new(50.0, 0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(lidar_scan(&s, &noiseless_lidar(), &sp, &mut rng).is_empty());
    }

    #[test]
    fn lidar_boresight_on_circle() {
        let sp = specs(circle(0.2));
        let s = state_at(Pose2::new(1.0, 0.0, 0.0));
        let cfg = LidarConfig {
            beams: 129,
            ..noiseless_lidar()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = lidar_scan(&s, &cfg, &sp, &mut rng);
        let bore = cloud.points.iter().find(|p| p.y == 0.0).expect("boresight return");
        assert!((bore.x - 0.8).abs() < 1e-12);
    }

    #[test]
    fn lidar_noise_is_seeded() {
        let sp = specs(boxy());
        let s = place_object(Pose2::default(), 0.0, 0.1, 0.0, &sp).unwrap();
        let cfg = LidarConfig::default();
        let a = lidar_scan(&s, &cfg, &sp, &mut ChaCha8Rng::seed_from_u64(9));
        let b = lidar_scan(&s, &cfg, &sp, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let clean = lidar_scan(&s, &noiseless_lidar(), &sp, &mut ChaCha8Rng::seed_from_u64(9));
        assert_ne!(a, clean);
    }

    fn fronto_parallel_camera() -> CameraConfig {
        // camera at 1 m behind a wall-like box face, looking along +x
        CameraConfig {
            mount: Transform3::new(forward_camera_rotation(0.0), Vector3::new(0.0, 0.0, 0.4)).unwrap(),
            depth_noise_sigma: 0.0,
            ..CameraConfig::default()
        }
    }

    #[test]
    fn depth_object_outside_frustum() {
        let sp = specs(boxy());
        let s = state_at(Pose2::new(-5.0, 0.0, 0.0));
        let f = depth_render(&s, &fronto_parallel_camera(), &sp, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(f.mask.iter().all(|m| !m));
    }

    #[test]
    fn depth_fronto_parallel_face() {
        let sp = specs(boxy());
        // near face at x = 1.0
        let s = state_at(Pose2::new(1.2, 0.0, 0.0));
        let f = depth_render(&s, &fronto_parallel_camera(), &sp, &mut ChaCha8Rng::seed_from_u64(0));
        let n = f.mask.iter().filter(|m| **m).count();
        assert!(n > 100);
        for (d, m) in f.depth.iter().zip(&f.mask) {
            if *m {
                assert!((d - 1.0).abs() < 1e-12, "{d}");
            }
        }
    }

    fn frame_from_mask(w: usize, h: usize, on: impl Fn(usize, usize) -> bool) -> SegmentedDepthFrame {
        let mut mask = vec![false; w * h];
        let mut depth = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                if on(u, v) {
                    mask[v * w + u] = true;
                    depth[v * w + u] = 1.0;
                }
            }
        }
        SegmentedDepthFrame {
            intrinsics: Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
                width: w,
                height: h,
            },
            depth,
            mask,
        }
    }

    #[test]
    fn boundary_examples() {
        let empty = frame_from_mask(20, 20, |_, _| false);
        assert!(extract_mask_boundary(&empty).is_empty());

        let single = frame_from_mask(20, 20, |u, v| u == 4 && v == 7);
        assert_eq!(extract_mask_boundary(&single), vec![(4, 7)]);

        let square = frame_from_mask(20, 20, |u, v| (5..15).contains(&u) && (5..15).contains(&v));
        assert_eq!(extract_mask_boundary(&square).len(), 36);

        // image border counts as outside
        let full = frame_from_mask(4, 3, |_, _| true);
        assert_eq!(extract_mask_boundary(&full).len(), 10);
    }

    #[test]
    fn deproject_examples() {
        let mut f = frame_from_mask(100, 100, |_, _| true);
        f.intrinsics.cx = 50.0;
        f.intrinsics.cy = 50.0;
        for d in f.depth.iter_mut() {
            *d = 2.0;
        }
        let zero = f.index(10, 10);
        f.depth[zero] = 0.0;
        let (cloud, dropped) = deproject(&f, &[(50, 50), (60, 50), (10, 10)]);
        assert_eq!(dropped, 1);
        assert_eq!(cloud.points[0], Vector3::new(0.0, 0.0, 2.0));
        assert!((cloud.points[1] - Vector3::new(0.2, 0.0, 2.0)).norm() < 1e-15);
        assert_eq!(cloud.frame, Frame::Camera);
    }

    #[test]
    fn skin_examples() {
        let sp = specs(boxy());
        let far = place_object(Pose2::default(), 0.0, 0.0, 0.5, &sp).unwrap();
        assert_eq!(contact_skin_read(&far, &sp), ContactState::NONE);

        let flush = place_object(Pose2::default(), 0.0, 0.0, 0.0, &sp).unwrap();
        let c = contact_skin_read(&flush, &sp);
        assert_eq!(c.contact_type, ContactType::Line);
        assert!(c.l.unwrap().abs() < 1e-12);

        let sp = specs(circle(0.25));
        let tangent = place_object(Pose2::default(), 0.1, 0.0, 0.0, &sp).unwrap();
        let c = contact_skin_read(&tangent, &sp);
        assert_eq!(c.contact_type, ContactType::Point);
        assert!((c.l.unwrap() - 0.1).abs() < 1e-12);
    }
}
