//! Simulation workbench for substituting a contact skin with learned contact
//! estimates from LiDAR or depth-camera data in reactive planar pushing.

pub mod config;
pub mod cpm;
pub mod descriptor;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod rps;
pub mod sensors;
pub mod world;

pub use error::{Error, Result};
pub use geometry::{angle_diff, transform_points, wrap_angle, Pose2, Transform2, Transform3};
pub use rps::{ControlCommand, RpsMode, RpsParams, RpsPhase};
pub use world::{
    classify_contact, contact_manifold, step, ContactManifold, ContactState, ContactType,
    ObjectSpec, RobotSpec, Shape, WorldSpecs, WorldState,
};
pub use config::{FrictionSet, GridSpec, ProtocolConfig, SensorsConfig, WorkbenchConfig, WorldConfig};
pub use cpm::{load_model, save_model, Cpm, LstmModel, ModelKind, NormHistory, TrainConfig, SEQ_LEN};
pub use descriptor::{descriptor_pipeline, ProximityField, RoiConfig, SensorInput};
pub use metrics::{angle_swept_rate, wilcoxon_signed_rank, MeanSe, Normalized, WilcoxonResult};
pub use pipeline::{
    ContactEstimator, GroundTruth, SensingMode, SwapPointLine, TickRecord, TrialConfig, TrialKind, TrialLog,
    TrialSummary,
};
pub use sensors::{CameraConfig, LidarConfig, PointCloud};
