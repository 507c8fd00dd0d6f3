//! Quasi-static planar pushing of one rigid object by the flat front face of
//! an omnidirectional base, plus ground-truth contact extraction and labeling.
//!
//! Ground friction is an ellipsoidal limit surface centred on the object's
//! centre of pressure: a contact wrench `(fx, fy, τ)` produces the twist
//! `(fx, fy, τ / ρ²)` up to a positive scale, with `ρ` the support radius.
//! The robot–object interface is a Coulomb cone with `mu_robot`. Each physics
//! step solves the resulting complementarity problem by enumerating contact
//! modes at up to three face points: the extremes of the region within a small
//! margin of the face and the point nearest to it. Each point's clearance
//! enters its non-penetration row, so a face closing on the object during the
//! step pushes it rather than passing through.

use nalgebra::{Matrix6, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::rps::ControlCommand;

/// Gravity, used only to report the limit-surface force and moment bounds.
pub const GRAVITY: f64 = 9.81;

/// Distance at which the object boundary counts as touching the face.
pub const CONTACT_TOLERANCE: f64 = 1e-4;

/// Depth behind the face still treated as the face's contact region.
const FACE_STRIP: f64 = 0.05;

/// Contact candidates closer than this collapse to a single contact point.
const MIN_CONTACT_SPAN: f64 = 1e-3;

/// Reach ahead of the face within which object points enter the contact
/// problem.
const CONTACT_MARGIN: f64 = 5e-3;

/// Span at or above which a contact region is a line contact.
pub const LINE_CONTACT_SPAN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Counter-clockwise vertices in the object frame, meters.
    Polygon { vertices: Vec<[f64; 2]> },
    Circle { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: Shape,
    pub mass: f64,
    /// Height of the extruded body, used by the ray casters.
    pub height: f64,
    /// Ratio of the maximum friction moment to the maximum friction force.
    pub support_radius: f64,
    /// Centre of pressure in the object frame.
    #[serde(default)]
    pub cop_offset: [f64; 2],
    #[serde(default = "default_mu_ground")]
    pub mu_ground: f64,
    #[serde(default = "default_mu_robot")]
    pub mu_robot: f64,
}

fn default_mu_ground() -> f64 {
    0.3
}

fn default_mu_robot() -> f64 {
    0.35
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("object '{}': {m}", self.name)));
        if !(self.mass > 0.0) {
            return bad(format!("mass must be > 0, got {}", self.mass));
        }
        if !(self.support_radius > 0.0) {
            return bad(format!("support_radius must be > 0, got {}", self.support_radius));
        }
        if !(self.height > 0.0) {
            return bad(format!("height must be > 0, got {}", self.height));
        }
        if !(self.mu_ground >= 0.0) || !(self.mu_robot >= 0.0) {
            return bad("friction coefficients must be >= 0".into());
        }
        match &self.shape {
            Shape::Circle { radius } if !(*radius > 0.0) => {
                return bad(format!("radius must be > 0, got {radius}"))
            }
            Shape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return bad("polygon needs at least 3 vertices".into());
                }
                if signed_area(vertices) <= 0.0 {
                    return bad("polygon vertices must be counter-clockwise".into());
                }
                if polygon_self_intersects(vertices) {
                    return bad("polygon must be simple".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Limit-surface bounds `(f_max, m_max)` in newtons and newton-meters.
    pub fn limit_surface(&self) -> (f64, f64) {
        let f_max = self.mu_ground * self.mass * GRAVITY;
        (f_max, f_max * self.support_radius)
    }

    pub fn with_friction(&self, mu_ground: f64, mu_robot: f64) -> ObjectSpec {
        ObjectSpec {
            mu_ground,
            mu_robot,
            ..self.clone()
        }
    }

}

impl Shape {
    /// Axis-aligned rectangle centred on the object origin.
    pub fn rectangle(depth: f64, width: f64) -> Shape {
        let (hx, hy) = (depth / 2.0, width / 2.0);
        Shape::Polygon {
            vertices: vec![[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]],
        }
    }
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn polygon_self_intersects(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    for i in 0..n {
        for j in (i + 1)..n {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (a, b) = (v[i], v[(i + 1) % n]);
            let (c, d) = (v[j], v[(j + 1) % n]);
            let d1 = cross(a, b, c);
            let d2 = cross(a, b, d);
            let d3 = cross(c, d, a);
            let d4 = cross(c, d, b);
            if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// The front face spans `y ∈ [-half_width, half_width]` in the robot frame.
    pub half_width: f64,
    /// x-coordinate of the pushing face in the robot frame.
    pub front_x: f64,
    pub base_height: f64,
    pub max_lin_speed: f64,
    pub max_ang_speed: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            half_width: 0.3,
            front_x: 0.33,
            base_height: 0.3,
            max_lin_speed: 0.5,
            max_ang_speed: 0.5,
        }
    }
}

impl RobotSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.half_width > 0.0
            && self.front_x > 0.0
            && self.base_height > 0.0
            && self.max_lin_speed > 0.0
            && self.max_ang_speed > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("robot spec has non-positive fields: {self:?}")))
        }
    }

    pub fn clamp(&self, cmd: &ControlCommand) -> ControlCommand {
        let speed = cmd.v_x.hypot(cmd.v_y);
        let scale = if speed > self.max_lin_speed {
            self.max_lin_speed / speed
        } else {
            1.0
        };
        ControlCommand {
            v_x: cmd.v_x * scale,
            v_y: cmd.v_y * scale,
            omega: cmd.omega.clamp(-self.max_ang_speed, self.max_ang_speed),
        }
    }
}

/// Everything the physics step needs besides the state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpecs {
    pub robot: RobotSpec,
    pub object: ObjectSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub robot: Pose2,
    pub object: Pose2,
    pub t: f64,
    pub rng_seed: u64,
}

/// Contact intervals on the front face, in robot-frame y. Sorted and disjoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactManifold {
    pub segments: Vec<[f64; 2]>,
}

impl ContactManifold {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Builds a manifold from arbitrary intervals: clips, sorts and merges.
    pub fn from_intervals(mut raw: Vec<[f64; 2]>, half_width: f64) -> Self {
        raw.retain_mut(|iv| {
            iv[0] = iv[0].max(-half_width);
            iv[1] = iv[1].min(half_width);
            iv[0] <= iv[1]
        });
        raw.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let mut segments: Vec<[f64; 2]> = Vec::with_capacity(raw.len());
        for iv in raw {
            match segments.last_mut() {
                Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
                _ => segments.push(iv),
            }
        }
        Self { segments }
    }

    /// Lowest and highest contact position, if any.
    pub fn extremes(&self) -> Option<(f64, f64)> {
        Some((self.segments.first()?[0], self.segments.last()?[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ContactType {
    NoContact = 0,
    Point = 1,
    Line = 2,
}

impl ContactType {
    pub const ALL: [ContactType; 3] = [ContactType::NoContact, ContactType::Point, ContactType::Line];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Contact type plus lateral offset `l` of the contact from the robot centre.
/// `l` is `None` exactly when there is no contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub contact_type: ContactType,
    pub l: Option<f64>,
}

impl ContactState {
    pub const NONE: ContactState = ContactState {
        contact_type: ContactType::NoContact,
        l: None,
    };

    pub fn point(l: f64) -> Self {
        Self {
            contact_type: ContactType::Point,
            l: Some(l),
        }
    }

    pub fn line(l: f64) -> Self {
        Self {
            contact_type: ContactType::Line,
            l: Some(l),
        }
    }

    pub fn in_contact(&self) -> bool {
        self.contact_type != ContactType::NoContact
    }

    /// Contact point `p_C^R = (front_x, l)` in the robot frame.
    pub fn p_c_r(&self, front_x: f64) -> Option<Vector2<f64>> {
        self.l.map(|l| Vector2::new(front_x, l))
    }
}

/// Labels a manifold: point contact when all contact lies within a span
/// narrower than 5 cm (position = centroid), otherwise line contact with the
/// position at the midpoint of the two extremes.
pub fn classify_contact(m: &ContactManifold) -> ContactState {
    let Some((lo, hi)) = m.extremes() else {
        return ContactState::NONE;
    };
    let span = hi - lo;
    let max_gap = m
        .segments
        .windows(2)
        .map(|w| w[1][0] - w[0][1])
        .fold(0.0, f64::max);
    if span < LINE_CONTACT_SPAN && max_gap <= LINE_CONTACT_SPAN {
        let total: f64 = m.segments.iter().map(|s| s[1] - s[0]).sum();
        let l = if total > 0.0 {
            m.segments
                .iter()
                .map(|s| (s[1] - s[0]) * (s[0] + s[1]) / 2.0)
                .sum::<f64>()
                / total
        } else {
            m.segments.iter().map(|s| (s[0] + s[1]) / 2.0).sum::<f64>() / m.segments.len() as f64
        };
        ContactState::point(l)
    } else {
        ContactState::line((lo + hi) / 2.0)
    }
}

/// Object geometry expressed in the robot frame for one query.
enum LocalShape {
    Polygon(Vec<Vector2<f64>>),
    Circle { center: Vector2<f64>, radius: f64 },
}

fn local_shape(state: &WorldState, object: &ObjectSpec) -> LocalShape {
    let rel = state.robot.relative(&state.object);
    match &object.shape {
        Shape::Polygon { vertices } => LocalShape::Polygon(
            vertices
                .iter()
                .map(|v| rel.to_parent(Vector2::new(v[0], v[1])))
                .collect(),
        ),
        Shape::Circle { radius } => LocalShape::Circle {
            center: rel.position(),
            radius: *radius,
        },
    }
}

/// Clips segment `a→b` to `lo ≤ coord ≤ hi` along `axis` (0 = x, 1 = y).
fn clip_segment(
    a: Vector2<f64>,
    b: Vector2<f64>,
    axis: usize,
    lo: f64,
    hi: f64,
) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let (pa, pb) = (a[axis], b[axis]);
    let d = pb - pa;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    if d == 0.0 {
        if pa < lo || pa > hi {
            return None;
        }
    } else {
        let (ta, tb) = ((lo - pa) / d, (hi - pa) / d);
        let (ta, tb) = if ta < tb { (ta, tb) } else { (tb, ta) };
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    let p = |t: f64| {
        if t == 0.0 {
            a
        } else if t == 1.0 {
            b
        } else {
            a + (b - a) * t
        }
    };
    Some((p(t0), p(t1)))
}

/// y-extents of the polygon's cross-sections with the vertical line `x = x0`.
fn polygon_line_intervals(poly: &[Vector2<f64>], x0: f64) -> Vec<[f64; 2]> {
    let n = poly.len();
    let mut ys: Vec<f64> = (0..n)
        .filter_map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let crosses = (a.x <= x0 && x0 < b.x) || (b.x <= x0 && x0 < a.x);
            crosses.then(|| a.y + (b.y - a.y) * (x0 - a.x) / (b.x - a.x))
        })
        .collect();
    ys.sort_by(f64::total_cmp);
    ys.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// Ground-truth contact intervals between the object and the front face.
pub fn contact_manifold(state: &WorldState, specs: &WorldSpecs) -> ContactManifold {
    face_intervals(&local_shape(state, &specs.object), &specs.robot, CONTACT_TOLERANCE)
}

/// Face intervals where the object lies no further than `reach` ahead of it.
fn face_intervals(shape: &LocalShape, robot: &RobotSpec, reach: f64) -> ContactManifold {
    let (x_lo, x_hi) = (robot.front_x - FACE_STRIP, robot.front_x + reach);
    let raw = match shape {
        LocalShape::Polygon(poly) => {
            // Projection onto y of (polygon ∩ strip) = projection of its boundary.
            let n = poly.len();
            let mut raw: Vec<[f64; 2]> = (0..n)
                .filter_map(|i| {
                    let (a, b) = clip_segment(poly[i], poly[(i + 1) % n], 0, x_lo, x_hi)?;
                    Some([a.y.min(b.y), a.y.max(b.y)])
                })
                .collect();
            raw.extend(polygon_line_intervals(poly, x_lo));
            raw.extend(polygon_line_intervals(poly, x_hi));
            raw
        }
        &LocalShape::Circle { center, radius } => {
            let near = center.x - radius;
            if near > x_hi || center.x + radius < x_lo {
                Vec::new()
            } else if near >= robot.front_x {
                vec![[center.y, center.y]]
            } else {
                let dx = robot.front_x - center.x;
                let h = if dx.abs() < radius {
                    (radius * radius - dx * dx).sqrt()
                } else {
                    radius
                };
                vec![[center.y - h, center.y + h]]
            }
        }
    };
    ContactManifold::from_intervals(raw, robot.half_width)
}

/// Point of the object with the smallest robot-frame x within the face band,
/// if any part of the object lies in the band ahead of the face strip.
fn nearest_point_in_band(shape: &LocalShape, robot: &RobotSpec) -> Option<Vector2<f64>> {
    let hw = robot.half_width;
    let x_floor = robot.front_x - FACE_STRIP;
    match shape {
        LocalShape::Polygon(poly) => {
            let n = poly.len();
            (0..n)
                .filter_map(|i| {
                    let (a, b) = clip_segment(poly[i], poly[(i + 1) % n], 1, -hw, hw)?;
                    let (a, b) = clip_segment(a, b, 0, x_floor, f64::INFINITY)?;
                    Some(if a.x <= b.x { a } else { b })
                })
                .reduce(|p, q| if q.x < p.x { q } else { p })
        }
        &LocalShape::Circle { center, radius } => {
            let off = (center.y.abs() - hw).max(0.0);
            if off >= radius {
                return None;
            }
            let y = center.y.clamp(-hw, hw);
            let x = center.x - (radius * radius - off * off).sqrt();
            (center.x + radius >= x_floor).then(|| Vector2::new(x.max(x_floor), y))
        }
    }
}

fn nearest_x_in_band(state: &WorldState, specs: &WorldSpecs) -> Option<f64> {
    nearest_point_in_band(&local_shape(state, &specs.object), &specs.robot).map(|p| p.x)
}

/// Smallest robot-frame x of the object boundary on the line `y = y0`.
fn boundary_x_at(shape: &LocalShape, y0: f64) -> Option<f64> {
    match shape {
        LocalShape::Polygon(poly) => {
            let n = poly.len();
            (0..n)
                .filter_map(|i| {
                    let (a, b) = (poly[i], poly[(i + 1) % n]);
                    if a.y == b.y {
                        return (a.y == y0).then(|| a.x.min(b.x));
                    }
                    let t = (y0 - a.y) / (b.y - a.y);
                    (0.0..=1.0).contains(&t).then(|| a.x + (b.x - a.x) * t)
                })
                .reduce(f64::min)
        }
        &LocalShape::Circle { center, radius } => {
            let dy = y0 - center.y;
            (dy.abs() <= radius).then(|| center.x - (radius * radius - dy * dy).sqrt())
        }
    }
}

/// Face points taking part in the contact problem, as robot-frame points with
/// their clearance ahead of the face.
fn contact_candidates(state: &WorldState, specs: &WorldSpecs) -> Vec<(Vector2<f64>, f64)> {
    let robot = &specs.robot;
    let shape = local_shape(state, &specs.object);
    let Some(nearest) = nearest_point_in_band(&shape, robot) else {
        return Vec::new();
    };
    if nearest.x > robot.front_x + CONTACT_MARGIN {
        return Vec::new();
    }
    let mut ys = vec![nearest.y];
    if let Some((lo, hi)) = face_intervals(&shape, robot, CONTACT_MARGIN).extremes() {
        ys.extend([lo, hi]);
    }
    ys.sort_by(f64::total_cmp);
    ys.dedup_by(|b, a| *b - *a < MIN_CONTACT_SPAN);
    ys.into_iter()
        .map(|y| {
            let x = if (y - nearest.y).abs() < MIN_CONTACT_SPAN {
                nearest.x
            } else {
                boundary_x_at(&shape, y).unwrap_or(robot.front_x + CONTACT_MARGIN)
            };
            (Vector2::new(robot.front_x, y), (x - robot.front_x).clamp(0.0, CONTACT_MARGIN))
        })
        .collect()
}

/// Depth by which the object currently intrudes behind the front face.
pub fn penetration_depth(state: &WorldState, specs: &WorldSpecs) -> f64 {
    nearest_x_in_band(state, specs)
        .map(|x| (specs.robot.front_x - x).max(0.0))
        .unwrap_or(0.0)
}

/// Clearance between the face and the object within the face band.
pub fn face_gap(state: &WorldState, specs: &WorldSpecs) -> Option<f64> {
    nearest_x_in_band(state, specs).map(|x| x - specs.robot.front_x)
}

/// Places the object so that, seen from the robot, its nearest point within
/// the face band is `gap` meters ahead of the face. `lateral` and `yaw` are the
/// object's offset and heading relative to the robot.
pub fn place_object(
    robot: Pose2,
    lateral: f64,
    yaw: f64,
    gap: f64,
    specs: &WorldSpecs,
) -> Result<WorldState> {
    let far = specs.robot.front_x + 10.0;
    let probe = WorldState {
        robot,
        object: robot.compose(&Pose2::new(far, lateral, yaw)),
        t: 0.0,
        rng_seed: 0,
    };
    let current = face_gap(&probe, specs).ok_or_else(|| {
        Error::invalid(format!(
            "object '{}' at lateral offset {lateral} does not overlap the face",
            specs.object.name
        ))
    })?;
    let x = far - (current - gap);
    Ok(WorldState {
        object: robot.compose(&Pose2::new(x, lateral, yaw)),
        ..probe
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Separate,
    Stick,
    SlidePos,
    SlideNeg,
}

const MODES: [Mode; 4] = [Mode::Stick, Mode::SlidePos, Mode::SlideNeg, Mode::Separate];

/// Object twist in robot-frame axes: velocity of the centre of pressure and
/// angular rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectTwist {
    pub v: Vector2<f64>,
    pub omega: f64,
}

/// Solves the quasi-static push for face points `points` (robot frame) with
/// clearances `gaps` over a step of `dt`.
fn solve_push(
    points: &[Vector2<f64>],
    gaps: &[f64],
    cop: Vector2<f64>,
    rho: f64,
    mu: f64,
    cmd: &ControlCommand,
    dt: f64,
) -> ObjectTwist {
    let k = points.len();
    debug_assert!((1..=3).contains(&k) && gaps.len() == k);
    let n = 2 * k;
    let inv_rho2 = 1.0 / (rho * rho);

    let twist_of = |lambda: &[f64]| {
        let (mut fx, mut fy, mut tau) = (0.0, 0.0, 0.0);
        for (i, p) in points.iter().enumerate() {
            let (ln, lt) = (lambda[2 * i], lambda[2 * i + 1]);
            let r = p - cop;
            fx += ln;
            fy += lt;
            tau += r.x * lt - r.y * ln;
        }
        ObjectTwist {
            v: Vector2::new(fx, fy),
            omega: tau * inv_rho2,
        }
    };
    let relative_velocity = |tw: &ObjectTwist, j: usize| {
        let p = points[j];
        let r = p - cop;
        let obj = Vector2::new(tw.v.x - tw.omega * r.y, tw.v.y + tw.omega * r.x);
        let rob = Vector2::new(cmd.v_x - cmd.omega * p.y, cmd.v_y + cmd.omega * p.x);
        obj - rob
    };

    // g = A λ + b with g = (g_n, g_t) per point.
    let mut a = Matrix6::<f64>::zeros();
    let mut b = Vector6::<f64>::zeros();
    let zero = [0.0; 6];
    let rest = twist_of(&zero[..n]);
    for j in 0..k {
        let g = relative_velocity(&rest, j);
        b[2 * j] = g.x;
        b[2 * j + 1] = g.y;
    }
    for col in 0..n {
        let mut unit = [0.0; 6];
        unit[col] = 1.0;
        let tw = twist_of(&unit[..n]);
        for j in 0..k {
            let g = relative_velocity(&tw, j);
            a[(2 * j, col)] = g.x - b[2 * j];
            a[(2 * j + 1, col)] = g.y - b[2 * j + 1];
        }
    }
    // Normal rows constrain the clearance at the end of the step.
    for (j, gap) in gaps.iter().enumerate() {
        b[2 * j] += gap / dt;
    }
    let scale = b.iter().take(n).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return ObjectTwist {
            v: Vector2::zeros(),
            omega: 0.0,
        };
    }

    // Enumerate mode combinations, fewest active contacts first, sticking
    // preferred over sliding.
    let mut combos: Vec<Vec<Mode>> = vec![Vec::new()];
    for _ in 0..k {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                MODES.iter().map(move |m| {
                    let mut c = c.clone();
                    c.push(*m);
                    c
                })
            })
            .collect();
    }
    combos.sort_by_key(|c| c.iter().filter(|m| **m != Mode::Separate).count());

    for tol in [1e-9, 1e-6] {
        let eps = tol * scale;
        for combo in &combos {
            let mut m = Matrix6::<f64>::identity();
            let mut rhs = Vector6::<f64>::zeros();
            for (j, mode) in combo.iter().enumerate() {
                let (rn, rt) = (2 * j, 2 * j + 1);
                m.row_mut(rn).fill(0.0);
                m.row_mut(rt).fill(0.0);
                match mode {
                    Mode::Separate => {
                        m[(rn, rn)] = 1.0;
                        m[(rt, rt)] = 1.0;
                    }
                    Mode::Stick => {
                        for c in 0..n {
                            m[(rn, c)] = a[(rn, c)];
                            m[(rt, c)] = a[(rt, c)];
                        }
                        rhs[rn] = -b[rn];
                        rhs[rt] = -b[rt];
                    }
                    Mode::SlidePos | Mode::SlideNeg => {
                        for c in 0..n {
                            m[(rn, c)] = a[(rn, c)];
                        }
                        rhs[rn] = -b[rn];
                        m[(rt, rt)] = 1.0;
                        m[(rt, rn)] = if *mode == Mode::SlidePos { mu } else { -mu };
                    }
                }
            }
            let Some(lambda) = m.lu().solve(&rhs) else {
                continue;
            };
            if lambda.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let g = a * lambda + b;
            let lam_eps = eps + tol * lambda.iter().take(n).fold(0.0f64, |m, v| m.max(v.abs()));
            let feasible = combo.iter().enumerate().all(|(j, mode)| {
                let (ln, lt) = (lambda[2 * j], lambda[2 * j + 1]);
                let (gn, gt) = (g[2 * j], g[2 * j + 1]);
                match mode {
                    Mode::Separate => gn >= -eps,
                    Mode::Stick => ln >= -lam_eps && lt.abs() <= mu * ln + lam_eps,
                    Mode::SlidePos => ln >= -lam_eps && gt >= -eps,
                    Mode::SlideNeg => ln >= -lam_eps && gt <= eps,
                }
            });
            if feasible {
                let lam: Vec<f64> = lambda.iter().take(n).copied().collect();
                return twist_of(&lam);
            }
        }
    }
    // No consistent mode: leave the object and let penetration resolution act.
    ObjectTwist {
        v: Vector2::zeros(),
        omega: 0.0,
    }
}

/// Moves `pose` rigidly under the constant velocity field
/// `v(p) = v_ref + ω × (p - reference)` for `dt` seconds (world frame).
fn integrate_twist(pose: Pose2, reference: Vector2<f64>, v: Vector2<f64>, omega: f64, dt: f64) -> Pose2 {
    let angle = omega * dt;
    if angle.abs() < 1e-12 {
        let d = v * dt;
        return Pose2 {
            x: pose.x + d.x,
            y: pose.y + d.y,
            theta: pose.theta,
        };
    }
    let icr = reference + Vector2::new(-v.y / omega, v.x / omega);
    let (s, c) = angle.sin_cos();
    let r = pose.position() - icr;
    let p = icr + Vector2::new(c * r.x - s * r.y, s * r.x + c * r.y);
    Pose2::new(p.x, p.y, pose.theta + angle)
}

/// Object twist (robot-frame axes) the face produces under `cmd` over `dt`.
pub fn object_twist(state: &WorldState, cmd: &ControlCommand, dt: f64, specs: &WorldSpecs) -> ObjectTwist {
    let candidates = contact_candidates(state, specs);
    if candidates.is_empty() {
        return ObjectTwist {
            v: Vector2::zeros(),
            omega: 0.0,
        };
    }
    let points: Vec<Vector2<f64>> = candidates.iter().map(|c| c.0).collect();
    let gaps: Vec<f64> = candidates.iter().map(|c| c.1).collect();
    let rel = state.robot.relative(&state.object);
    let cop = rel.to_parent(Vector2::from(specs.object.cop_offset));
    solve_push(
        &points,
        &gaps,
        cop,
        specs.object.support_radius,
        specs.object.mu_robot,
        cmd,
        dt,
    )
}

/// Advances the world by `dt` under body-frame command `cmd`.
pub fn step(
    state: &WorldState,
    cmd: &ControlCommand,
    dt: f64,
    specs: &WorldSpecs,
) -> Result<WorldState> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::invalid(format!("dt must lie in (0, 0.1], got {dt}")));
    }
    if !cmd.is_finite() {
        return Err(Error::invalid(format!("non-finite command {cmd:?}")));
    }
    let cmd = specs.robot.clamp(cmd);
    let twist = object_twist(state, &cmd, dt, specs);

    let robot_v = state.robot.rotate_to_parent(Vector2::new(cmd.v_x, cmd.v_y));
    let robot = integrate_twist(state.robot, state.robot.position(), robot_v, cmd.omega, dt);

    let rel = state.robot.relative(&state.object);
    let cop_world = state
        .robot
        .to_parent(rel.to_parent(Vector2::from(specs.object.cop_offset)));
    let obj_v = state.robot.rotate_to_parent(twist.v);
    let object = integrate_twist(state.object, cop_world, obj_v, twist.omega, dt);

    let mut next = WorldState {
        robot,
        object,
        t: state.t + dt,
        rng_seed: state.rng_seed,
    };
    let depth = penetration_depth(&next, specs);
    if depth > 0.0 {
        let push = robot.rotate_to_parent(Vector2::new(depth, 0.0));
        next.object.x += push.x;
        next.object.y += push.y;
    }
    Ok(next)
}
