//! Ingestion of Johns Hopkins CSSE global time-series CSVs.
//!
//! The file layout is one row per province or country: `Province/State`,
//! `Country/Region`, `Lat`, `Long`, then one column per day of cumulative
//! confirmed counts. Countries split across provinces are summed before
//! differencing, so a negative-increment clip acts on the national series.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use chrono::NaiveDate;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::CountMatrix;

const DATE_COLS_START: usize = 4;
const HEADER_DATE_FORMAT: &str = "%m/%d/%y";
const SMOOTH_HALF_WIDTH: usize = 3;

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub input: PathBuf,
    pub countries: Vec<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Replace negative daily increments (reporting corrections) with zero.
    pub clip_negative: bool,
    /// Apply a centered 7-day moving average to the daily series.
    pub smooth: bool,
}

impl IngestConfig {
    pub fn new(
        input: PathBuf,
        countries: Vec<String>,
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<Self> {
        let cfg = Self {
            input,
            countries,
            start,
            end,
            clip_negative: true,
            smooth: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.countries.is_empty() {
            return Err(Error::InvalidParameter(
                "territory selection must not be empty".into(),
            ));
        }
        if self.start > self.end {
            return Err(Error::InvalidParameter(format!(
                "start {} is after end {}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// Read the file, aggregate provinces per selected country, difference the
/// cumulative series to daily incidence, and restrict to the date window.
pub fn ingest_jhu(cfg: &IngestConfig) -> Result<CountMatrix> {
    cfg.validate()?;
    let (dates, totals, available) = read_country_totals(cfg)?;
    if dates.len() < 2 {
        return Err(Error::DateRange(
            "file holds fewer than two days; daily incidence needs a difference".into(),
        ));
    }

    let mut missing = Vec::new();
    for name in &cfg.countries {
        if !totals.contains_key(name.as_str()) {
            missing.push(name.clone());
        }
    }
    if let Some(name) = missing.into_iter().next() {
        let list: Vec<&str> = available.iter().map(String::as_str).collect();
        return Err(Error::UnknownTerritory {
            name,
            available: list.join(", "),
        });
    }

    // Incidence on day t is the cumulative change from day t-1, so the first
    // header date has no incidence value.
    let daily_dates = &dates[1..];
    let first = daily_dates[0];
    let last = *daily_dates.last().unwrap();
    if cfg.start < first || cfg.end > last {
        return Err(Error::DateRange(format!(
            "requested {}..{} but incidence covers {}..{}",
            cfg.start, cfg.end, first, last
        )));
    }
    let start_idx = (cfg.start - first).num_days() as usize;
    let end_idx = (cfg.end - first).num_days() as usize;

    let t_out = end_idx - start_idx + 1;
    let c_out = cfg.countries.len();
    let mut out = Array2::zeros((c_out, t_out));
    for (i, name) in cfg.countries.iter().enumerate() {
        let cumulative = &totals[name.as_str()];
        let mut daily: Vec<f64> = cumulative.windows(2).map(|w| w[1] - w[0]).collect();
        if cfg.clip_negative {
            for v in &mut daily {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        if cfg.smooth {
            daily = centered_moving_average(&daily, SMOOTH_HALF_WIDTH);
        }
        for (j, &v) in daily[start_idx..=end_idx].iter().enumerate() {
            out[[i, j]] = v;
        }
    }

    let out_dates = (start_idx..=end_idx)
        .map(|k| daily_dates[k].format("%Y-%m-%d").to_string())
        .collect();
    CountMatrix::new(out, cfg.countries.clone(), out_dates)
}

/// Window shrinks near the ends so every output is an average of the
/// values actually present.
fn centered_moving_average(x: &[f64], half_width: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width).min(n - 1);
            let window = &x[lo..=hi];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

type CountryTotals = (Vec<NaiveDate>, HashMap<String, Vec<f64>>, BTreeSet<String>);

fn read_country_totals(cfg: &IngestConfig) -> Result<CountryTotals> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(&cfg.input)
        .map_err(|e| Error::Csv {
            line: 0,
            message: format!("{}: {}", cfg.input.display(), e),
        })?;
    let mut records = reader.records().enumerate();

    let (_, header) = records.next().ok_or_else(|| Error::Csv {
        line: 1,
        message: "empty file".into(),
    })?;
    let header = header.map_err(|e| Error::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    if header.len() <= DATE_COLS_START || header.get(1) != Some("Country/Region") {
        return Err(Error::Csv {
            line: 1,
            message: "expected Province/State, Country/Region, Lat, Long, then date columns"
                .into(),
        });
    }
    let mut dates = Vec::with_capacity(header.len() - DATE_COLS_START);
    for field in header.iter().skip(DATE_COLS_START) {
        let d = NaiveDate::parse_from_str(field, HEADER_DATE_FORMAT).map_err(|e| Error::Csv {
            line: 1,
            message: format!("bad date column '{field}': {e}"),
        })?;
        dates.push(d);
    }
    for w in dates.windows(2) {
        if (w[1] - w[0]).num_days() != 1 {
            return Err(Error::Csv {
                line: 1,
                message: format!("date columns not consecutive days: {} then {}", w[0], w[1]),
            });
        }
    }

    let wanted: BTreeSet<&str> = cfg.countries.iter().map(String::as_str).collect();
    let mut totals: HashMap<String, Vec<f64>> = HashMap::new();
    let mut available = BTreeSet::new();
    for (idx, record) in records {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Csv {
            line,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Csv {
                line,
                message: format!(
                    "expected {} fields, found {}",
                    header.len(),
                    record.len()
                ),
            });
        }
        let country = record.get(1).unwrap_or("").to_string();
        available.insert(country.clone());
        if !wanted.contains(country.as_str()) {
            continue;
        }
        let acc = totals
            .entry(country)
            .or_insert_with(|| vec![0.0; dates.len()]);
        for (k, field) in record.iter().skip(DATE_COLS_START).enumerate() {
            let v: f64 = field.trim().parse().map_err(|e| Error::Csv {
                line,
                message: format!("bad count '{field}': {e}"),
            })?;
            acc[k] += v;
        }
    }
    Ok((dates, totals, available))
}
