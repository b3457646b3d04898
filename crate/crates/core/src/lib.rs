pub mod annf;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod map;
pub mod pipeline;
pub mod registration;
pub mod robust;
pub mod study;

pub use annf::{build_annf, DistanceField, NearestNeighbourField, NearestNeighbourLookup};
pub use config::VoConfig;
pub use dataset::{AssociatedFrame, SyntheticScene, TrajectoryEntry, TumDataset};
pub use error::{Error, Result};
pub use eval::{compute_rpe, RpeReport};
pub use geometry::{compose, CameraIntrinsics, Pose, PoseDelta};
pub use image::{DepthImage, ExtractorConfig, ExtractorVariant, GrayImage, SemiDenseRegion};
pub use map::{KeyframeMap, MapConfig, MapPoint};
pub use pipeline::{Pipeline, RunOutput, TrackingStatus, VelocityState};
pub use registration::{RegistrationConfig, RegistrationResult};
pub use robust::{RobustConfig, WeightFunction, WeightKind};
