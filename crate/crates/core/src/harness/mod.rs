//! Season-long closed-loop evaluation against the Richards "truth" models.

mod config;
mod pipeline;
mod report;
mod season;
mod weather;

pub use config::{CostWeights, RootSchedule, SeasonConfig, ZoneConfig};
pub use pipeline::{assemble_zone_model, train_zone_agent, train_zone_surrogate, SurrogateOutcome, TrainingPlan};
pub use report::{
    compare, Comparison, Direction, Method, MetricDelta, MpcAudit, SeasonCosts, SeasonReport, TraceRow, ZoneSummary,
};
pub use season::{init_states, run_season, SPIN_UP_DAYS};
pub use weather::{
    load_weather, parse_weather, perturb_forecast, rescale_rain, stand_in_season, synthetic_weather, write_weather,
    ForecastNoise, WeatherPreset, WeatherRecord,
};
