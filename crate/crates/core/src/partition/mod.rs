//! Point cloud partitioner: mask memory, odometry-driven mask propagation,
//! IoU reconciliation, and scan splitting into contactable and
//! contact-intolerant point sets at scan rate.

mod filter;
mod mask;
mod memory;
mod scan;

pub use filter::{
    AllFixedFilter, CandidateSet, CorruptedFilter, FilterError, GroundTruthFilter,
    MovabilityFilter, RemoteFilter,
};
pub use mask::{iou, warp_mask, Mask, PixelBox};
pub use memory::{
    reconcile, reconcile_matched_only, refresh_memory, should_refresh, warp_masks, MaskMemory,
};
pub use scan::{
    partition_metrics, partition_scan, refine_partition, PartitionError, PartitionMetrics,
    PartitionedScan,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("partition config field {0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("sigma_iou must lie in (0, 1], got {0}")]
    BadSigma(f64),
}

/// Thresholds for refresh scheduling, reconciliation, and clustering.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Moving distance since the refresh pose that triggers a new filter run.
    pub d_thres: f64,
    /// Elapsed time since the refresh that triggers a new filter run.
    pub t_thres: f64,
    /// IoU acceptance threshold for mask reconciliation.
    pub sigma_iou: f64,
    /// Euclidean clustering radius (meters).
    pub eps_cluster: f64,
    /// Minimum cluster size kept as movable.
    pub n_min: usize,
    /// Movability-filter latency in control steps between the refresh
    /// trigger and the memory update.
    pub refresh_latency_steps: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            d_thres: 0.25,
            t_thres: 0.4,
            sigma_iou: 0.35,
            eps_cluster: 0.1,
            n_min: 4,
            refresh_latency_steps: 5,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d_thres <= 0.0 {
            return Err(ConfigError::NonPositive("d_thres"));
        }
        if self.t_thres <= 0.0 {
            return Err(ConfigError::NonPositive("t_thres"));
        }
        if self.eps_cluster <= 0.0 {
            return Err(ConfigError::NonPositive("eps_cluster"));
        }
        if self.n_min == 0 {
            return Err(ConfigError::NonPositive("n_min"));
        }
        if self.sigma_iou <= 0.0 || self.sigma_iou > 1.0 {
            return Err(ConfigError::BadSigma(self.sigma_iou));
        }
        Ok(())
    }
}
