//! Daily weather records: CSV ingestion, a seeded synthetic generator and
//! forecast perturbation.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub date: NaiveDate,
    pub rain_mm: f64,
    pub et0_mm: f64,
    pub tavg_c: f64,
}

const HEADER: [&str; 4] = ["date", "rain_mm", "et0_mm", "tavg_c"];

/// Reads `date,rain_mm,et0_mm,tavg_c` rows. Dates must be consecutive days.
pub fn load_weather(path: &Path) -> Result<Vec<WeatherRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_weather(&text)
}

pub fn parse_weather(text: &str) -> Result<Vec<WeatherRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", HEADER.join(",")) });
    }
    let mut out: Vec<WeatherRecord> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if row.len() != 4 {
            return Err(Error::Parse { line, message: format!("expected 4 fields, found {}", row.len()) });
        }
        let bad = |m: String| Error::Parse { line, message: m };
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|e| bad(format!("date: {e}")))?;
        let num = |k: usize| -> Result<f64> {
            let v: f64 = row[k].parse().map_err(|e| bad(format!("{}: {e}", HEADER[k])))?;
            if !v.is_finite() {
                return Err(bad(format!("{} is not finite", HEADER[k])));
            }
            Ok(v)
        };
        let rec = WeatherRecord { date, rain_mm: num(1)?, et0_mm: num(2)?, tavg_c: num(3)? };
        if rec.rain_mm < 0.0 || rec.et0_mm < 0.0 {
            return Err(bad("rain and et0 must be non-negative".into()));
        }
        if let Some(prev) = out.last() {
            let expected = prev.date + Duration::days(1);
            if rec.date != expected {
                if rec.date > expected {
                    return Err(Error::WeatherGap { missing: expected, previous: prev.date });
                }
                return Err(bad(format!("date {} does not follow {}", rec.date, prev.date)));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_weather(path: &Path, records: &[WeatherRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in records {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            format!("{:.1}", r.rain_mm),
            format!("{:.2}", r.et0_mm),
            format!("{:.1}", r.tavg_c),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherPreset {
    Dry,
    Wet,
}

impl std::str::FromStr for WeatherPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dry" => Ok(Self::Dry),
            "wet" => Ok(Self::Wet),
            _ => Err(Error::InvalidParameter(format!("unknown weather preset {s:?}"))),
        }
    }
}

/// Semi-arid summer: et0 and temperature follow a seasonal cosine peaking
/// in mid July; rain days are Bernoulli with exponential depths.
pub fn synthetic_weather(preset: WeatherPreset, start: NaiveDate, days: usize, seed: u64) -> Vec<WeatherRecord> {
    let (rain_p, rain_mean, et0_peak) = match preset {
        WeatherPreset::Dry => (0.10, 5.0, 6.0),
        WeatherPreset::Wet => (0.30, 8.0, 4.8),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rain: Exp<f64> = Exp::new(1.0 / rain_mean).expect("positive rate");
    let et0_noise = Normal::new(0.0, 0.8).expect("positive spread");
    let t_noise = Normal::new(0.0, 2.5).expect("positive spread");
    (0..days)
        .map(|i| {
            let date = start + Duration::days(i as i64);
            let phase = 2.0 * std::f64::consts::PI * (date.ordinal() as f64 - 196.0) / 365.0;
            let wet_day = rng.gen_bool(rain_p);
            let depth = if wet_day { (rain.sample(&mut rng) * 10.0).round() / 10.0 } else { 0.0 };
            let mut et0 = et0_peak * (0.55 + 0.45 * phase.cos()) + et0_noise.sample(&mut rng);
            if wet_day {
                et0 *= 0.6;
            }
            WeatherRecord {
                date,
                rain_mm: depth,
                et0_mm: (et0.max(0.3) * 100.0).round() / 100.0,
                tavg_c: ((13.0 + 7.0 * phase.cos() + t_noise.sample(&mut rng)) * 10.0).round() / 10.0,
            }
        })
        .collect()
}

/// Rescales rain so the series totals `target_mm`, keeping one decimal.
/// The rounding residue lands on the wettest day.
pub fn rescale_rain(records: &mut [WeatherRecord], target_mm: f64) -> Result<()> {
    let total: f64 = records.iter().map(|r| r.rain_mm).sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter("cannot rescale a rainless series".into()));
    }
    let target_tenths = (target_mm * 10.0).round() as i64;
    let mut tenths: Vec<i64> = records.iter().map(|r| (r.rain_mm * target_mm / total * 10.0).round() as i64).collect();
    let wettest = (0..tenths.len()).max_by_key(|&i| (tenths[i], std::cmp::Reverse(i))).expect("non-empty");
    tenths[wettest] += target_tenths - tenths.iter().sum::<i64>();
    if tenths[wettest] < 0 {
        return Err(Error::InvalidParameter("rain rescaling produced a negative depth".into()));
    }
    for (r, t) in records.iter_mut().zip(tenths) {
        r.rain_mm = t as f64 / 10.0;
    }
    Ok(())
}

/// Stand-in 5 May to 4 September series for a study year: a dry season
/// for 2015 and a wet one for 2022, scaled to the recorded rain totals.
pub fn stand_in_season(year: i32) -> Result<Vec<WeatherRecord>> {
    let (preset, total, seed) = match year {
        2015 => (WeatherPreset::Dry, 141.7, 2015),
        2022 => (WeatherPreset::Wet, 230.9, 2022),
        _ => return Err(Error::InvalidParameter(format!("no stand-in series for {year}"))),
    };
    let start = NaiveDate::from_ymd_opt(year, 5, 5).expect("valid date");
    let mut records = synthetic_weather(preset, start, 123, seed);
    rescale_rain(&mut records, total)?;
    Ok(records)
}

/// Forecast error schedule: day `k` of the horizon (1-based) gets standard
/// deviation `sigma * (1 + (k - 1) / growth_days)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastNoise {
    pub sigma_rain: f64,
    pub sigma_et0: f64,
    pub growth_days: f64,
}

impl Default for ForecastNoise {
    fn default() -> Self {
        Self { sigma_rain: 1.0, sigma_et0: 0.5, growth_days: 7.0 }
    }
}

impl ForecastNoise {
    pub fn none() -> Self {
        Self { sigma_rain: 0.0, sigma_et0: 0.0, ..Self::default() }
    }

    pub fn scale(&self, k: usize) -> f64 {
        1.0 + (k.max(1) - 1) as f64 / self.growth_days
    }
}

/// Perturbs true rain and et0 for horizon days `1..=truth.len()` with
/// zero-mean Gaussian errors, clamped at zero.
pub fn perturb_forecast<R: Rng + ?Sized>(
    truth: &[WeatherRecord],
    noise: &ForecastNoise,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut rain = Vec::with_capacity(truth.len());
    let mut et0 = Vec::with_capacity(truth.len());
    for (i, r) in truth.iter().enumerate() {
        let s = noise.scale(i + 1);
        let e_rain: f64 = rng.sample(rand_distr::StandardNormal);
        let e_et0: f64 = rng.sample(rand_distr::StandardNormal);
        rain.push((r.rain_mm + noise.sigma_rain * s * e_rain).max(0.0));
        et0.push((r.et0_mm + noise.sigma_et0 * s * e_et0).max(0.0));
    }
    (rain, et0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_carry_lines() {
        let ok = "date,rain_mm,et0_mm,tavg_c\n2015-05-05,0.0,3.1,12.0\n2015-05-06,1.5,2.0,10.0\n";
        assert_eq!(parse_weather(ok).unwrap().len(), 2);
        let neg = "date,rain_mm,et0_mm,tavg_c\n2015-05-05,0.0,3.1,12.0\n2015-05-06,-1.5,2.0,10.0\n";
        assert!(matches!(parse_weather(neg), Err(Error::Parse { line: 3, .. })));
        let gap = "date,rain_mm,et0_mm,tavg_c\n2015-05-05,0.0,3.1,12.0\n2015-05-07,1.5,2.0,10.0\n";
        assert!(matches!(parse_weather(gap), Err(Error::WeatherGap { .. })));
        assert!(matches!(parse_weather("a,b\n"), Err(Error::Parse { line: 1, .. })));
        let junk = "date,rain_mm,et0_mm,tavg_c\n2015-05-05,x,3.1,12.0\n";
        assert!(matches!(parse_weather(junk), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn noise_schedule() {
        let n = ForecastNoise::default();
        assert_eq!(n.scale(1), 1.0);
        assert_eq!(n.scale(8), 2.0);
    }

    #[test]
    fn zero_noise_returns_truth() {
        let truth = synthetic_weather(WeatherPreset::Wet, NaiveDate::from_ymd_opt(2020, 6, 1).unwrap(), 14, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (rain, et0) = perturb_forecast(&truth, &ForecastNoise::none(), &mut rng);
        assert!(truth.iter().zip(&rain).all(|(t, r)| t.rain_mm == *r));
        assert!(truth.iter().zip(&et0).all(|(t, e)| t.et0_mm == *e));
    }
}
