use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use irrsched_core::field::{synthetic_quadrant, ZoneSpec};
use irrsched_core::harness::{
    assemble_zone_model, compare, load_weather, run_season, stand_in_season, synthetic_weather, train_zone_agent,
    train_zone_surrogate, write_weather, Method, SeasonConfig, SeasonReport, TrainingPlan, WeatherPreset,
};
use irrsched_core::rl_agent::{write_reward_curve_csv, Agent};
use irrsched_core::surrogate::SurrogateModel;
use irrsched_core::zones::{
    delineate_with, map_to_pivot, read_cells, write_zone_map, AttributeGrid, DelineationOptions, Geometry,
};

#[derive(Parser)]
#[command(name = "irrsched", version, about = "Multi-zone center-pivot irrigation scheduler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate simulator data and train a zone's LSTM surrogate.
    TrainSurrogate {
        #[arg(long)]
        zone: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        units: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a zone's PPO agent for one MAD.
    TrainAgent {
        #[arg(long)]
        zone: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.65)]
        mad: f64,
        #[arg(long, default_value_t = 5000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster field cells into management zones.
    Delineate {
        /// Cell attribute CSV; omit to use the synthetic quadrant.
        #[arg(long)]
        cells: Option<PathBuf>,
        /// Polar layout of the cells, RxA.
        #[arg(long, default_value = "24x90")]
        geometry: String,
        /// Optional coarser polar layout to vote the zones onto.
        #[arg(long)]
        pivot: Option<String>,
        #[arg(long, default_value_t = 8)]
        k_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a weather CSV: a synthetic preset or a study-year stand-in.
    GenerateWeather {
        #[arg(long, default_value = "dry")]
        preset: String,
        #[arg(long, default_value = "2015-05-01")]
        start: String,
        #[arg(long, default_value_t = 130)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// 2015 or 2022; overrides the preset options.
        #[arg(long)]
        stand_in: Option<i32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one closed-loop season and write the JSON report and CSV traces.
    RunSeason {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        weather: PathBuf,
        #[arg(long, default_value = "proposed")]
        method: String,
        #[arg(long)]
        mad: Option<f64>,
        /// Directory with surrogate_<zone>.json and agent_<zone>.json.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Percentage changes of a proposed report relative to a triggered one.
    Compare { proposed: PathBuf, triggered: PathBuf },
}

fn season_config(path: Option<&Path>) -> Result<SeasonConfig> {
    match path {
        Some(p) => Ok(SeasonConfig::load(p)?),
        None => Ok(SeasonConfig::default()),
    }
}

fn zone_spec(config: Option<&Path>, name: &str) -> Result<ZoneSpec> {
    let cfg = season_config(config)?;
    match cfg.zones.into_iter().find(|z| z.spec.name == name) {
        Some(z) => Ok(z.spec),
        None => bail!("no zone named {name}"),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::TrainSurrogate { zone, config, episodes, epochs, units, seed, out } => {
            let spec = zone_spec(config.as_deref(), &zone)?;
            let mut plan = TrainingPlan { episodes, seed, ..TrainingPlan::default() };
            plan.surrogate.epochs = epochs;
            plan.surrogate.units = units;
            std::fs::create_dir_all(&out)?;
            let outcome = train_zone_surrogate(&spec, &plan)?;
            outcome.model.save(&out.join(format!("surrogate_{zone}.json")))?;
            write_json(&out.join(format!("surrogate_{zone}_report.json")), &(&outcome.report, &outcome.rollout))?;
            log::info!(
                "{zone}: {}-day rollout RMSE {:.4}, R² {:.3}",
                plan.rollout_horizon,
                outcome.rollout.rmse,
                outcome.rollout.r2
            );
        }
        Command::TrainAgent { zone, config, mad, episodes, seed, out } => {
            let spec = zone_spec(config.as_deref(), &zone)?;
            let mut plan = TrainingPlan { seed, ..TrainingPlan::default() };
            plan.ppo.episodes = episodes;
            std::fs::create_dir_all(&out)?;
            let (agent, curve) = train_zone_agent(&spec, mad, &plan)?;
            agent.save(&out.join(format!("agent_{zone}.json")))?;
            write_reward_curve_csv(&out.join(format!("reward_curve_{zone}.csv")), &curve, 100)?;
            log::info!(
                "{zone}: mean episode reward {:.4e} over the first 10%, {:.4e} over the last 10%",
                curve.head_mean(0.1),
                curve.tail_mean(0.1)
            );
        }
        Command::Delineate { cells, geometry, pivot, k_max, seed, out } => {
            let geometry = Geometry::parse_polar(&geometry)?;
            let grid = match cells {
                Some(path) => AttributeGrid { cells: read_cells(&path)?, geometry },
                None => {
                    let (r, a) = geometry.dims();
                    synthetic_quadrant(r, a, seed).0
                }
            };
            let opts = DelineationOptions { k_max, seed, ..DelineationOptions::default() };
            let mut zmap = delineate_with(&grid, &opts)?;
            if let Some(p) = pivot {
                zmap = map_to_pivot(&zmap, &grid.geometry, &Geometry::parse_polar(&p)?)?;
            }
            write_zone_map(&out, &zmap)?;
            log::info!("{} zones over {} cells", zmap.k, zmap.assignments.len());
        }
        Command::GenerateWeather { preset, start, days, seed, stand_in, out } => {
            let records = match stand_in {
                Some(year) => stand_in_season(year)?,
                None => {
                    let start = chrono::NaiveDate::parse_from_str(&start, "%Y-%m-%d")?;
                    synthetic_weather(preset.parse::<WeatherPreset>()?, start, days, seed)
                }
            };
            write_weather(&out, &records)?;
        }
        Command::RunSeason { config, weather, method, mad, models, out } => {
            let mut cfg = season_config(config.as_deref())?;
            if let Some(m) = mad {
                cfg.mad = m;
                cfg.validate()?;
            }
            let method: Method = method.parse()?;
            let weather = load_weather(&weather)?;
            let zone_models = match (method, models) {
                (Method::Triggered, _) => None,
                (Method::Proposed, None) => bail!("--models is required for the proposed method"),
                (Method::Proposed, Some(dir)) => Some(
                    cfg.zones
                        .iter()
                        .map(|z| {
                            let name = &z.spec.name;
                            let agent = Agent::load(&dir.join(format!("agent_{name}.json")))?;
                            let surrogate = SurrogateModel::load(&dir.join(format!("surrogate_{name}.json")))?;
                            Ok(assemble_zone_model(&z.spec, cfg.mad, agent, surrogate, cfg.process_noise_std)?)
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
            };
            let report = run_season(&cfg, &weather, method, zone_models.as_deref())?;
            std::fs::create_dir_all(&out)?;
            report.save_json(&out.join(format!("report_{method}.json")))?;
            report.write_traces_csv(&out.join(format!("traces_{method}.csv")))?;
            println!(
                "{method}: {:.1} mm, {} rotations, overall cost {:.4e}, yield {:.3} Mg/ha",
                report.prescribed_irrigation_mm,
                report.pivot_rotations,
                report.overall_cost,
                report.predicted_yield_mg_ha
            );
        }
        Command::Compare { proposed, triggered } => {
            let p = SeasonReport::load_json(&proposed)?;
            let t = SeasonReport::load_json(&triggered)?;
            print!("{}", compare(&p, &t)?.to_table());
        }
    }
    Ok(())
}
