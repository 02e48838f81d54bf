//! `forecasts.csv`: one row per series, creation time, horizon and quantile.

use std::collections::HashMap;
use std::path::Path;

use spade::data::{Horizon, SeriesRecord};
use spade::evaluation::EvalSet;
use spade::model::{ForecastGrid, SeriesForecast};
use spade::{Error, Result};

const HEADER: [&str; 7] = [
    "series_id",
    "creation_time",
    "timestamp",
    "lead",
    "span",
    "quantile",
    "value",
];

pub fn write(path: &Path, grid: &ForecastGrid, records: &[SeriesRecord]) -> Result<()> {
    let by_id: HashMap<&str, &SeriesRecord> = records.iter().map(|r| (r.series_id.as_str(), r)).collect();
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(HEADER)?;
    for (si, s) in grid.series.iter().enumerate() {
        let record = by_id.get(s.series_id.as_str());
        for (ti, &t) in s.creation_times.iter().enumerate() {
            let stamp = record
                .and_then(|r| r.timestamps.get(t))
                .map(|d| d.to_string())
                .unwrap_or_default();
            for (h, hz) in grid.horizons.iter().enumerate() {
                for (qi, q) in grid.quantiles.iter().enumerate() {
                    w.write_record([
                        s.series_id.clone(),
                        t.to_string(),
                        stamp.clone(),
                        hz.lead.to_string(),
                        hz.span.to_string(),
                        q.to_string(),
                        grid.value(si, ti, h, qi).to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

type Key = (String, usize, usize, usize);

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Data(format!("forecasts line {line}: `{field}` is not a valid {what}")))
}

fn parse_usize(field: &str, what: &str, line: usize) -> Result<usize> {
    field
        .parse()
        .map_err(|_| Error::Data(format!("forecasts line {line}: `{field}` is not a valid {what}")))
}

/// Reads forecasts for the triples of `set`; every scored triple must be
/// present for every quantile.
pub fn read_for(path: &Path, set: &EvalSet, quantiles: &[f64]) -> Result<ForecastGrid> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
                path: path.to_path_buf(),
            })
    };
    let idx: Vec<usize> = HEADER
        .iter()
        .filter(|&&h| h != "timestamp")
        .map(|h| col(h))
        .collect::<Result<_>>()?;
    let h_index: HashMap<Horizon, usize> = set.horizons.iter().enumerate().map(|(i, h)| (*h, i)).collect();
    let mut values: HashMap<Key, f64> = HashMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let line = line + 2;
        let lead = parse_usize(&row[idx[2]], "lead", line)?;
        let span = parse_usize(&row[idx[3]], "span", line)?;
        let Some(&h) = h_index.get(&Horizon { lead, span }) else {
            continue;
        };
        let q = parse_f64(&row[idx[4]], "quantile", line)?;
        let Some(qi) = quantiles.iter().position(|&x| (x - q).abs() < 1e-12) else {
            continue;
        };
        let t = parse_usize(&row[idx[1]], "creation time", line)?;
        let v = parse_f64(&row[idx[5]], "value", line)?;
        values.insert((row[idx[0]].to_string(), t, h, qi), v);
    }
    let (h_len, q_len) = (set.horizons.len(), quantiles.len());
    let series = set
        .series
        .iter()
        .map(|s| {
            let mut out = Vec::with_capacity(s.creation_times.len() * h_len * q_len);
            for (i, &t) in s.creation_times.iter().enumerate() {
                for h in 0..h_len {
                    for qi in 0..q_len {
                        if s.targets[i * h_len + h].is_none() {
                            // never scored
                            out.push(0.0);
                            continue;
                        }
                        let key = (s.series_id.clone(), t, h, qi);
                        let v = values.get(&key).copied().ok_or_else(|| {
                            Error::Data(format!(
                                "forecasts miss series `{}`, creation time {t}, horizon {h}, quantile {}",
                                s.series_id, quantiles[qi]
                            ))
                        })?;
                        out.push(v);
                    }
                }
            }
            Ok(SeriesForecast {
                series_id: s.series_id.clone(),
                creation_times: s.creation_times.clone(),
                values: out,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForecastGrid {
        quantiles: quantiles.to_vec(),
        horizons: set.horizons.clone(),
        series,
    })
}

/// Every row of a forecasts file for one series and horizon, as
/// `(creation time, quantile, value)`.
pub fn read_series(path: &Path, series_id: &str, horizon: Horizon) -> Result<Vec<(usize, f64, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
                path: path.to_path_buf(),
            })
    };
    let (c_id, c_t, c_lead, c_span, c_q, c_v) = (
        col("series_id")?,
        col("creation_time")?,
        col("lead")?,
        col("span")?,
        col("quantile")?,
        col("value")?,
    );
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let line = line + 2;
        if &row[c_id] != series_id
            || parse_usize(&row[c_lead], "lead", line)? != horizon.lead
            || parse_usize(&row[c_span], "span", line)? != horizon.span
        {
            continue;
        }
        out.push((
            parse_usize(&row[c_t], "creation time", line)?,
            parse_f64(&row[c_q], "quantile", line)?,
            parse_f64(&row[c_v], "value", line)?,
        ));
    }
    Ok(out)
}
