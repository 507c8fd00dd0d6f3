//! Proximity vector field: the modality-agnostic descriptor fed to the CPM.
//!
//! A cloud in the robot frame is cropped to the region of interest, flattened
//! onto the plane `z = h_b`, and grouped into `M × S` cells (rows along x,
//! columns along y). Each column yields one vector from the centre of its
//! first cell to the nearest occupied x, and the descriptor is the column of
//! norms.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Transform3;
use crate::sensors::{deproject, extract_mask_boundary, Frame, PointCloud, SegmentedDepthFrame};

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiConfig {
    pub eps_x_min: f64,
    pub eps_x_max: f64,
    pub eps_y_min: f64,
    pub eps_y_max: f64,
    pub eps_z_min: f64,
    pub eps_z_max: f64,
    pub g_x: f64,
    pub g_y: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            eps_x_min: 0.3,
            eps_x_max: 0.62,
            eps_y_min: -0.3,
            eps_y_max: 0.3,
            eps_z_min: -0.4,
            eps_z_max: 0.5,
            g_x: 0.02,
            g_y: 0.05,
        }
    }
}

fn cell_count(lo: f64, hi: f64, g: f64) -> Option<usize> {
    let n = (hi - lo) / g;
    let r = n.round();
    ((n - r).abs() <= GRID_TOL * n.max(1.0) && r >= 1.0).then_some(r as usize)
}

fn lerp_edge(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    (lo * (n - i) as f64 + hi * i as f64) / n as f64
}

/// Index `i` with `edge(i) ≤ v < edge(i + 1)`, starting from a floor guess.
fn half_open_index(v: f64, lo: f64, g: f64, n: usize, edge: impl Fn(usize) -> f64) -> Option<usize> {
    if !(v >= edge(0) && v < edge(n)) {
        return None;
    }
    let mut i = (((v - lo) / g).floor().max(0.0) as usize).min(n - 1);
    while i > 0 && v < edge(i) {
        i -= 1;
    }
    while i + 1 < n && v >= edge(i + 1) {
        i += 1;
    }
    Some(i)
}

impl RoiConfig {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("x", self.eps_x_min, self.eps_x_max),
            ("y", self.eps_y_min, self.eps_y_max),
            ("z", self.eps_z_min, self.eps_z_max),
        ];
        for (name, lo, hi) in axes {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("roi {name}: need finite min < max")));
            }
        }
        if !(self.g_x > 0.0 && self.g_y > 0.0) {
            return Err(Error::Config("roi: cell sizes must be positive".into()));
        }
        if cell_count(self.eps_x_min, self.eps_x_max, self.g_x).is_none() {
            return Err(Error::Config("roi: x span is not a multiple of g_x".into()));
        }
        if cell_count(self.eps_y_min, self.eps_y_max, self.g_y).is_none() {
            return Err(Error::Config("roi: y span is not a multiple of g_y".into()));
        }
        Ok(())
    }

    /// Rows along x. Panics on an unvalidated config.
    pub fn m(&self) -> usize {
        cell_count(self.eps_x_min, self.eps_x_max, self.g_x).expect("validated roi")
    }

    /// Columns along y, the descriptor length.
    pub fn s(&self) -> usize {
        cell_count(self.eps_y_min, self.eps_y_max, self.g_y).expect("validated roi")
    }

    /// Lower x edge of row `m`; `a(0)` and `a(M)` are the exact bounds.
    pub fn a(&self, m: usize) -> f64 {
        lerp_edge(self.eps_x_min, self.eps_x_max, m, self.m())
    }

    /// Lower y edge of column `s`; a symmetric span puts `b(S/2)` at exactly 0.
    pub fn b(&self, s: usize) -> f64 {
        lerp_edge(self.eps_y_min, self.eps_y_max, s, self.s())
    }

    pub fn row_of(&self, x: f64) -> Option<usize> {
        half_open_index(x, self.eps_x_min, self.g_x, self.m(), |i| self.a(i))
    }

    pub fn column_of(&self, y: f64) -> Option<usize> {
        half_open_index(y, self.eps_y_min, self.g_y, self.s(), |i| self.b(i))
    }

    pub fn start_x(&self) -> f64 {
        self.eps_x_min + self.g_x / 2.0
    }

    /// Norm of a column with nothing in it.
    pub fn empty_norm(&self) -> f64 {
        self.eps_x_max - self.start_x()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.eps_x_min < p.x
            && p.x < self.eps_x_max
            && self.eps_y_min < p.y
            && p.y < self.eps_y_max
            && self.eps_z_min < p.z
            && p.z < self.eps_z_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub m: usize,
    pub s: usize,
    /// Row-major `m × s`.
    pub cells: Vec<Vec<Vector3<f64>>>,
}

impl VoxelGrid {
    pub fn cell(&self, m: usize, s: usize) -> &[Vector3<f64>] {
        &self.cells[m * self.s + s]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityField {
    pub starts: Vec<Vector3<f64>>,
    pub ends: Vec<Vector3<f64>>,
    pub norms: Vec<f64>,
}

impl ProximityField {
    fn from_end_x(cfg: &RoiConfig, h_b: f64, end_x: impl Fn(usize) -> Option<f64>) -> Self {
        let s_count = cfg.s();
        let mut starts = Vec::with_capacity(s_count);
        let mut ends = Vec::with_capacity(s_count);
        let mut norms = Vec::with_capacity(s_count);
        for s in 0..s_count {
            let start = Vector3::new(cfg.start_x(), cfg.b(s) + cfg.g_y / 2.0, h_b);
            let x = end_x(s).unwrap_or(cfg.eps_x_max);
            let end = Vector3::new(x, start.y, start.z);
            norms.push((end - start).norm());
            starts.push(start);
            ends.push(end);
        }
        Self { starts, ends, norms }
    }
}

/// Keeps points strictly inside all six bounds.
pub fn roi_filter(cloud: &PointCloud, cfg: &RoiConfig) -> PointCloud {
    PointCloud::new(
        cloud.frame,
        cloud.points.iter().filter(|p| cfg.contains(p)).copied().collect(),
    )
}

pub fn bev_project(cloud: &PointCloud, h_b: f64) -> PointCloud {
    PointCloud::new(
        cloud.frame,
        cloud.points.iter().map(|p| Vector3::new(p.x, p.y, h_b)).collect(),
    )
}

/// Half-open cell assignment. Points outside the grid are a contract
/// violation: `roi_filter` must run first.
pub fn voxelize(cloud: &PointCloud, cfg: &RoiConfig) -> Result<VoxelGrid> {
    let (m, s) = (cfg.m(), cfg.s());
    let mut cells = vec![Vec::new(); m * s];
    for p in &cloud.points {
        match (cfg.row_of(p.x), cfg.column_of(p.y)) {
            (Some(i), Some(j)) => cells[i * s + j].push(*p),
            _ => {
                return Err(Error::ContractViolation(format!(
                    "point ({}, {}) lies outside the voxel grid",
                    p.x, p.y
                )))
            }
        }
    }
    Ok(VoxelGrid { m, s, cells })
}

/// Per column, the mean x of the nearest occupied cell.
pub fn proximity_from_grid(grid: &VoxelGrid, cfg: &RoiConfig, h_b: f64) -> ProximityField {
    ProximityField::from_end_x(cfg, h_b, |s| {
        (0..grid.m).find_map(|m| {
            let cell = grid.cell(m, s);
            (!cell.is_empty()).then(|| cell.iter().map(|p| p.x).sum::<f64>() / cell.len() as f64)
        })
    })
}

/// Groups edge points by column with the same half-open y edges as the grid.
pub fn bin_edge_points(edges: &PointCloud, cfg: &RoiConfig) -> Result<Vec<Vec<Vector3<f64>>>> {
    let mut bins = vec![Vec::new(); cfg.s()];
    for p in &edges.points {
        let s = cfg.column_of(p.y).ok_or_else(|| {
            Error::ContractViolation(format!("edge point y = {} lies outside the bins", p.y))
        })?;
        bins[s].push(*p);
    }
    Ok(bins)
}

/// Per column, the minimum x over the bin.
pub fn proximity_from_edges(bins: &[Vec<Vector3<f64>>], cfg: &RoiConfig, h_b: f64) -> ProximityField {
    ProximityField::from_end_x(cfg, h_b, |s| {
        bins[s].iter().map(|p| p.x).min_by(f64::total_cmp)
    })
}

/// Raw sensor output accepted by [`descriptor_pipeline`].
#[derive(Debug, Clone, Copy)]
pub enum SensorInput<'a> {
    Lidar(&'a PointCloud),
    Depth(&'a SegmentedDepthFrame),
}

/// Sensor output to norm vector. `mount` maps the sensor frame into the robot
/// frame; `h_b` is the BEV plane height.
pub fn descriptor_pipeline(
    input: SensorInput<'_>,
    mount: &Transform3,
    cfg: &RoiConfig,
    h_b: f64,
) -> Result<Vec<f64>> {
    match input {
        SensorInput::Lidar(cloud) => {
            expect_frame(cloud, Frame::Lidar)?;
            let robot = cloud.to_robot(mount);
            let flat = bev_project(&roi_filter(&robot, cfg), h_b);
            let grid = voxelize(&flat, cfg)?;
            Ok(proximity_from_grid(&grid, cfg, h_b).norms)
        }
        SensorInput::Depth(frame) => {
            let boundary = extract_mask_boundary(frame);
            let (cloud, _) = deproject(frame, &boundary);
            let robot = cloud.to_robot(mount);
            let flat = bev_project(&roi_filter(&robot, cfg), h_b);
            let bins = bin_edge_points(&flat, cfg)?;
            Ok(proximity_from_edges(&bins, cfg, h_b).norms)
        }
    }
}

fn expect_frame(cloud: &PointCloud, frame: Frame) -> Result<()> {
    if cloud.frame == frame {
        Ok(())
    } else {
        Err(Error::invalid(format!("expected a {frame:?} cloud, got {:?}", cloud.frame)))
    }
}
