//! Workbench configuration: one TOML document with a complete default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cpm::TrainConfig;
use crate::descriptor::RoiConfig;
use crate::error::{Error, Result};
use crate::rps::RpsParams;
use crate::sensors::{CameraConfig, LidarConfig};
use crate::world::{ObjectSpec, RobotSpec, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionSet {
    pub name: String,
    pub mu_ground: f64,
    pub mu_robot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub robot: RobotSpec,
    pub objects: Vec<ObjectSpec>,
    pub friction_sets: Vec<FrictionSet>,
}

pub fn default_objects() -> Vec<ObjectSpec> {
    vec![
        ObjectSpec {
            name: "box".into(),
            shape: Shape::rectangle(0.4, 0.4),
            mass: 20.0,
            height: 0.8,
            support_radius: 0.153,
            cop_offset: [0.0, 0.0],
            mu_ground: 0.3,
            mu_robot: 0.35,
        },
        ObjectSpec {
            name: "cylinder".into(),
            shape: Shape::Circle { radius: 0.25 },
            mass: 25.0,
            height: 0.7,
            support_radius: 0.167,
            cop_offset: [0.0, 0.0],
            mu_ground: 0.3,
            mu_robot: 0.35,
        },
        // 5 kg box with a 10 kg weight in its rear left corner
        ObjectSpec {
            name: "nonuniform_box".into(),
            shape: Shape::rectangle(0.45, 0.45),
            mass: 15.0,
            height: 0.6,
            support_radius: 0.16,
            cop_offset: [0.083, 0.083],
            mu_ground: 0.3,
            mu_robot: 0.35,
        },
    ]
}

pub fn default_friction_sets() -> Vec<FrictionSet> {
    vec![
        FrictionSet {
            name: "S_mu1".into(),
            mu_ground: 0.3,
            mu_robot: 0.35,
        },
        FrictionSet {
            name: "S_mu2".into(),
            mu_ground: 0.2,
            mu_robot: 0.5,
        },
    ]
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            robot: RobotSpec::default(),
            objects: default_objects(),
            friction_sets: default_friction_sets(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorsConfig {
    pub lidar: LidarConfig,
    pub camera: CameraConfig,
}

/// Regular target grid: every `(i·step, j·step)` with `|i|, |j| ≤ extent`,
/// optionally only the outer ring, origin always excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    Square { half_extent: i32, step: f64 },
    Points { points: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Success radius around the target, m.
    pub d_succ: f64,
    pub t_max: f64,
    /// Cumulative time without ground-truth contact before a trial is aborted, s.
    pub contact_loss_max: f64,
    pub control_hz: f64,
    pub physics_substeps: usize,
    /// Uniform jitter of the initial object offset, m.
    pub lateral_jitter: f64,
    /// Uniform jitter of the initial object yaw, degrees.
    pub yaw_jitter_deg: f64,
    pub no_contact_trials: usize,
    pub no_contact_duration: f64,
    /// Initial clearance in no-contact trials, m.
    pub no_contact_gap: f64,
    pub retreat_speed: f64,
    /// Keep every n-th training window.
    pub window_stride: usize,
    pub train_grid: GridSpec,
    pub val_grid: GridSpec,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            d_succ: 0.05,
            t_max: 300.0,
            contact_loss_max: 150.0,
            control_hz: 10.0,
            physics_substeps: 10,
            lateral_jitter: 0.02,
            yaw_jitter_deg: 3.0,
            no_contact_trials: 12,
            no_contact_duration: 30.0,
            no_contact_gap: 0.02,
            retreat_speed: 0.02,
            window_stride: 1,
            train_grid: GridSpec::Square {
                half_extent: 2,
                step: 1.0,
            },
            val_grid: GridSpec::Points {
                points: vec![[3.0, 3.0], [3.0, -3.0], [-3.0, 3.0], [-3.0, -3.0], [0.0, 3.0], [0.0, -3.0]],
            },
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.d_succ,
            self.t_max,
            self.contact_loss_max,
            self.control_hz,
            self.no_contact_duration,
            self.retreat_speed,
        ];
        if pos.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!("protocol: durations, rates and radii must be > 0: {self:?}")));
        }
        if self.physics_substeps == 0 || self.window_stride == 0 {
            return Err(Error::Config("protocol: physics_substeps and window_stride must be >= 1".into()));
        }
        if self.lateral_jitter < 0.0 || self.yaw_jitter_deg < 0.0 || self.no_contact_gap < 0.0 {
            return Err(Error::Config("protocol: jitters and gaps must be >= 0".into()));
        }
        let dt = 1.0 / (self.control_hz * self.physics_substeps as f64);
        if dt > 0.1 {
            return Err(Error::Config(format!("protocol: physics step {dt} s exceeds 0.1 s")));
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn physics_dt(&self) -> f64 {
        self.control_dt() / self.physics_substeps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkbenchConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub world: WorldConfig,
    pub sensors: SensorsConfig,
    pub descriptor: RoiConfig,
    pub rps: RpsParams,
    pub train: TrainConfig,
    pub protocol: ProtocolConfig,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            world: WorldConfig::default(),
            sensors: SensorsConfig::default(),
            descriptor: RoiConfig::default(),
            rps: RpsParams::default(),
            train: TrainConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

impl WorkbenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.robot.validate()?;
        if self.world.objects.is_empty() || self.world.friction_sets.is_empty() {
            return Err(Error::Config("world needs at least one object and one friction set".into()));
        }
        for o in &self.world.objects {
            o.validate()?;
        }
        let mut names: Vec<&str> = self.world.objects.iter().map(|o| o.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.world.objects.len() {
            return Err(Error::Config("object names must be unique".into()));
        }
        for f in &self.world.friction_sets {
            if !(f.mu_ground >= 0.0 && f.mu_robot >= 0.0) {
                return Err(Error::Config(format!("friction set '{}' has negative coefficients", f.name)));
            }
        }
        self.sensors.lidar.validate()?;
        self.sensors.camera.validate()?;
        self.descriptor.validate()?;
        self.rps.validate(self.world.robot.half_width)?;
        self.train.validate()?;
        self.protocol.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering. The output directory is left
    /// out so the same experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn object(&self, name: &str) -> Result<&ObjectSpec> {
        self.world
            .objects
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::Config(format!("unknown object '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = WorkbenchConfig::default();
        cfg.validate().unwrap();
        let back = WorkbenchConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = WorkbenchConfig::from_toml("seed = 7\n[rps]\nk_v = 0.2\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.rps.k_v, 0.2);
        assert_eq!(cfg.rps.eta, 3.0);
        assert_ne!(cfg.hash(), WorkbenchConfig::default().hash());
        let moved = WorkbenchConfig {
            output_dir: "elsewhere".into(),
            ..cfg.clone()
        };
        assert_eq!(moved.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(WorkbenchConfig::from_toml("sede = 1\n").is_err());
        assert!(WorkbenchConfig::from_toml("[rps]\nkv = 1.0\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(WorkbenchConfig::from_toml("[descriptor]\ng_x = 0.03\n").is_err());
        assert!(WorkbenchConfig::from_toml("[protocol]\nd_succ = 0.0\n").is_err());
    }
}
