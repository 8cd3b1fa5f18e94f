//! Target-zone bounds, crop coefficient from growing degree days, the
//! trapezoidal water-stress factor and seasonal yield prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Moisture band the scheduler tries to keep the root zone in.
///
/// The upper bound is field capacity; the lower bound (the irrigation
/// threshold) sits `mad` of the plant-available water below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetZone {
    pub lower: f64,
    pub upper: f64,
    pub theta_fc: f64,
    pub theta_pwp: f64,
    pub mad: f64,
}

impl TargetZone {
    pub fn new(theta_fc: f64, theta_pwp: f64, mad: f64) -> Result<Self> {
        target_bounds(theta_fc, theta_pwp, mad)
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.lower && theta <= self.upper
    }
}

pub fn target_bounds(theta_fc: f64, theta_pwp: f64, mad: f64) -> Result<TargetZone> {
    if !(theta_pwp < theta_fc) || !theta_pwp.is_finite() || !theta_fc.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "wilting point {theta_pwp} must lie below field capacity {theta_fc}"
        )));
    }
    if !(mad > 0.0 && mad <= 1.0) {
        return Err(Error::InvalidParameter(format!("management allowable depletion {mad} outside (0, 1]")));
    }
    Ok(TargetZone { lower: theta_fc - mad * (theta_fc - theta_pwp), upper: theta_fc, theta_fc, theta_pwp, mad })
}

/// Daily growing degree days, clamped at zero on cold days.
pub fn gdd(t_avg: f64, t_base: f64) -> f64 {
    (t_avg - t_base).max(0.0)
}

/// Crop parameters for the yield response and the crop-coefficient curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    /// Maximum potential yield (Mg/ha).
    pub y_max: f64,
    /// Yield response factor.
    pub k_y: f64,
    /// Base temperature (°C).
    pub t_base: f64,
    /// Coefficients of the quartic Kc(g), constant term first.
    pub kc_poly: [f64; 5],
}

impl Default for CropParams {
    /// Soft spring wheat calibrated for southern Alberta.
    fn default() -> Self {
        Self { y_max: 8.8, k_y: 1.15, t_base: 5.0, kc_poly: [-0.0207, 0.00266, 4.7e-8, -2.0e-9, 2.70e-13] }
    }
}

impl CropParams {
    /// Unclamped polynomial value.
    pub fn kc_raw(&self, g: f64) -> f64 {
        self.kc_poly.iter().rev().fold(0.0, |acc, c| acc * g + c)
    }

    /// Crop coefficient for cumulative growing degree days `g`.
    pub fn kc(&self, g: f64) -> f64 {
        self.kc_raw(g).max(0.0)
    }
}

/// Crop coefficient of the default crop.
pub fn kc(g: f64) -> f64 {
    CropParams::default().kc(g)
}

/// Breakpoints of the trapezoidal stress curve: wilting point, lower and
/// upper optimum, anaerobic point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressThresholds {
    pub wilting: f64,
    pub optimum_low: f64,
    pub optimum_high: f64,
    pub anaerobic: f64,
}

impl StressThresholds {
    pub fn new(tz: &TargetZone, theta_v1: f64) -> Result<Self> {
        let s = Self { wilting: tz.theta_pwp, optimum_low: tz.lower, optimum_high: tz.upper, anaerobic: theta_v1 };
        if s.wilting < s.optimum_low && s.optimum_low <= s.optimum_high && s.optimum_high < s.anaerobic {
            Ok(s)
        } else {
            Err(Error::InvalidParameter(format!(
                "stress breakpoints must satisfy pwp < lower <= upper < anaerobic, got {:?}",
                s
            )))
        }
    }

    pub fn factor(&self, theta: f64) -> f64 {
        if theta <= self.wilting || theta >= self.anaerobic {
            0.0
        } else if theta < self.optimum_low {
            (theta - self.wilting) / (self.optimum_low - self.wilting)
        } else if theta <= self.optimum_high {
            1.0
        } else {
            (self.anaerobic - theta) / (self.anaerobic - self.optimum_high)
        }
    }

    /// d(factor)/d(theta), taking the right-hand derivative at kinks.
    pub fn factor_slope(&self, theta: f64) -> f64 {
        if theta < self.wilting || theta >= self.anaerobic {
            0.0
        } else if theta < self.optimum_low {
            1.0 / (self.optimum_low - self.wilting)
        } else if theta < self.optimum_high {
            0.0
        } else {
            -1.0 / (self.anaerobic - self.optimum_high)
        }
    }
}

pub fn stress_factor(theta_v: f64, tz: &TargetZone, theta_v1: f64) -> Result<f64> {
    Ok(StressThresholds::new(tz, theta_v1)?.factor(theta_v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldOutcome {
    /// Predicted yield (Mg/ha), clamped at zero.
    pub actual: f64,
    /// Seasonal actual crop evapotranspiration (mm).
    pub et_c: f64,
    /// Seasonal maximum crop evapotranspiration (mm).
    pub et_m: f64,
}

/// Seasonal yield from daily root-zone moisture and daily `kc * et0` (mm).
/// Stress is applied day by day before summing.
pub fn seasonal_yield(
    daily_theta_rz: &[f64],
    daily_kc_et0: &[f64],
    crop: &CropParams,
    tz: &TargetZone,
    theta_v1: f64,
) -> Result<YieldOutcome> {
    if daily_theta_rz.len() != daily_kc_et0.len() {
        return Err(Error::InvalidParameter(format!(
            "moisture series has {} days, demand series {}",
            daily_theta_rz.len(),
            daily_kc_et0.len()
        )));
    }
    let stress = StressThresholds::new(tz, theta_v1)?;
    let et_m: f64 = daily_kc_et0.iter().sum();
    if et_m <= 0.0 {
        return Err(Error::InvalidParameter("maximum seasonal evapotranspiration is zero".into()));
    }
    let et_c: f64 =
        daily_theta_rz.iter().zip(daily_kc_et0).map(|(&theta, &demand)| stress.factor(theta) * demand).sum();
    let actual = crop.y_max * (1.0 - crop.k_y + crop.k_y * et_c / et_m);
    Ok(YieldOutcome { actual: actual.max(0.0), et_c, et_m })
}
