use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Proposed,
    Triggered,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "triggered" => Ok(Self::Triggered),
            _ => Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Proposed => "proposed",
            Self::Triggered => "triggered",
        })
    }
}

/// One zone-day of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub date: chrono::NaiveDate,
    pub zone: usize,
    /// Morning root-zone moisture.
    pub theta_rz: f64,
    pub theta_rz_end: f64,
    pub lower: f64,
    pub upper: f64,
    pub c: u8,
    /// Applied irrigation (mm).
    pub u: f64,
    pub rain: f64,
    pub et0: f64,
    pub kc: f64,
    pub z_r: f64,
}

/// Realized costs. The quadratic violation terms use the MPC weights; the
/// linear ones are the reward's penalty, logged for reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeasonCosts {
    pub upper_violation: f64,
    pub lower_violation: f64,
    pub upper_violation_linear: f64,
    pub lower_violation_linear: f64,
    pub water: f64,
    pub fixed: f64,
}

impl SeasonCosts {
    pub fn overall(&self) -> f64 {
        self.upper_violation + self.lower_violation + self.water + self.fixed
    }

    pub fn add(&mut self, other: &SeasonCosts) {
        self.upper_violation += other.upper_violation;
        self.lower_violation += other.lower_violation;
        self.upper_violation_linear += other.upper_violation_linear;
        self.lower_violation_linear += other.lower_violation_linear;
        self.water += other.water;
        self.fixed += other.fixed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSummary {
    pub name: String,
    pub irrigation_mm: f64,
    /// Days with a nonzero rate in this zone.
    pub irrigation_days: usize,
    /// Violation and water costs only; the fixed cost is field-wide.
    pub costs: SeasonCosts,
    pub yield_mg_ha: f64,
    pub et_c_mm: f64,
    pub et_m_mm: f64,
}

/// Post-hoc checks on every MPC solve of the run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MpcAudit {
    pub solves: usize,
    /// Solves whose plan cost exceeded the repaired guess's cost by more
    /// than 1e-9 (relative to the guess cost, floored at 1).
    pub improvement_failures: usize,
    /// Plans breaking the decision/rate coupling or bounds.
    pub coupling_failures: usize,
    /// Days on which zone plans did not share one decision sequence.
    pub mismatched_days: usize,
    pub max_kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonReport {
    pub method: Method,
    pub mad: f64,
    pub days: usize,
    /// Applied water summed over zones (mm).
    pub prescribed_irrigation_mm: f64,
    /// Days on which any zone received water.
    pub pivot_rotations: usize,
    pub costs: SeasonCosts,
    pub overall_cost: f64,
    /// Mean predicted yield over zones (Mg/ha).
    pub predicted_yield_mg_ha: f64,
    pub zones: Vec<ZoneSummary>,
    pub audit: MpcAudit,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub traces: Vec<TraceRow>,
}

impl SeasonReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_traces_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.traces {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Down,
    Up,
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub proposed: f64,
    pub triggered: f64,
    /// Magnitude of the change relative to triggered (%).
    pub percent: f64,
    pub direction: Direction,
}

impl MetricDelta {
    pub fn new(metric: &str, proposed: f64, triggered: f64) -> Self {
        let change = if triggered != 0.0 {
            (proposed - triggered) / triggered.abs() * 100.0
        } else if proposed == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(proposed)
        };
        let direction = if change < 0.0 {
            Direction::Down
        } else if change > 0.0 {
            Direction::Up
        } else {
            Direction::Same
        };
        Self { metric: metric.into(), proposed, triggered, percent: change.abs(), direction }
    }

    pub fn arrow(&self) -> &'static str {
        match self.direction {
            Direction::Down => "↓",
            Direction::Up => "↑",
            Direction::Same => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mad: f64,
    pub rows: Vec<MetricDelta>,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<28}{:>14}{:>14}{:>10}\n", "metric", "proposed", "triggered", "change");
        for r in &self.rows {
            s += &format!(
                "{:<28}{:>14.2}{:>14.2}{:>10}\n",
                r.metric,
                r.proposed,
                r.triggered,
                format!("{} {:.1}", r.arrow(), r.percent)
            );
        }
        s
    }
}

/// Percentage changes of the proposed run relative to the triggered one.
pub fn compare(proposed: &SeasonReport, triggered: &SeasonReport) -> Result<Comparison> {
    if proposed.mad != triggered.mad || proposed.days != triggered.days {
        return Err(Error::InvalidParameter("reports come from different configurations".into()));
    }
    let row = MetricDelta::new;
    Ok(Comparison {
        mad: proposed.mad,
        rows: vec![
            row("prescribed irrigation (mm)", proposed.prescribed_irrigation_mm, triggered.prescribed_irrigation_mm),
            row("pivot rotations", proposed.pivot_rotations as f64, triggered.pivot_rotations as f64),
            row("cost of violating fc", proposed.costs.upper_violation, triggered.costs.upper_violation),
            row("cost of violating threshold", proposed.costs.lower_violation, triggered.costs.lower_violation),
            row("overall cost", proposed.overall_cost, triggered.overall_cost),
            row("predicted yield (Mg/ha)", proposed.predicted_yield_mg_ha, triggered.predicted_yield_mg_ha),
        ],
    })
}
