//! Mapping thresholds shared across the pipeline stages.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("theta_m ({theta_m}) must be >= theta_n ({theta_n})")]
    ThresholdOrder { theta_m: f64, theta_n: f64 },
    #[error("{name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("{name} = {value} must be positive")]
    NotPositive { name: &'static str, value: f64 },
}

/// All thresholds of the mapping pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapParams {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    /// Stuff-proportion bound: a voxel counts as thing while the stuff
    /// share of its semantic histogram stays below this.
    pub theta_st: f64,
    /// Back-projection budget: instances covering the top `theta_b`
    /// share of a voxel's instance mass are projected for matching.
    pub theta_b: f64,
    /// Minimum IoU for accepting a match.
    pub theta_m: f64,
    /// Maximum IoU under which a new instance is created.
    pub theta_n: f64,
    /// Minimum semantic score for a semantic-histogram update.
    pub theta_l: f64,
    /// Minimum panoptic score for an instance-histogram update.
    pub theta_z: f64,
    /// Minimum instance/semantic observation ratio for propagating
    /// thing information.
    pub theta_o: f64,
    /// Maximum mapping distance in meters.
    pub max_depth: f64,
    /// Confidence-ellipse radius used when back-projecting voxels.
    pub k_sigma: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            theta_st: 0.9,
            theta_b: 0.8,
            theta_m: 0.2,
            theta_n: 0.1,
            theta_l: 0.7,
            theta_z: 0.1,
            theta_o: 0.25,
            max_depth: 20.0,
            k_sigma: 2.0,
        }
    }
}

impl MapParams {
    /// Stricter matching thresholds for live deployments.
    pub fn application_profile() -> Self {
        Self {
            theta_m: 0.3,
            theta_n: 0.2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        for (name, value) in [
            ("theta_st", self.theta_st),
            ("theta_b", self.theta_b),
            ("theta_m", self.theta_m),
            ("theta_n", self.theta_n),
            ("theta_l", self.theta_l),
            ("theta_z", self.theta_z),
            ("theta_o", self.theta_o),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamError::OutOfRange { name, value });
            }
        }
        for (name, value) in [
            ("voxel_size", self.voxel_size),
            ("max_depth", self.max_depth),
            ("k_sigma", self.k_sigma),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ParamError::NotPositive { name, value });
            }
        }
        if self.theta_m < self.theta_n {
            return Err(ParamError::ThresholdOrder {
                theta_m: self.theta_m,
                theta_n: self.theta_n,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(MapParams::default().validate().is_ok());
        assert!(MapParams::application_profile().validate().is_ok());
    }

    #[test]
    fn rejects_threshold_inversion() {
        let p = MapParams {
            theta_m: 0.05,
            theta_n: 0.1,
            ..Default::default()
        };
        assert_eq!(
            p.validate(),
            Err(ParamError::ThresholdOrder {
                theta_m: 0.05,
                theta_n: 0.1
            })
        );
    }

    #[test]
    fn rejects_out_of_range() {
        let p = MapParams {
            theta_l: 1.5,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(ParamError::OutOfRange { .. })));
        let p = MapParams {
            voxel_size: 0.0,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(ParamError::NotPositive { .. })));
    }
}
