//! Telemetry input: CSV loading, time binning and trajectory handling.
//!
//! Times are carried in minutes throughout. Fitted rates are per minute, so
//! switching the time unit rescales every rate estimate.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Names of the time, longitude and latitude columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub time: String,
    pub lon: String,
    pub lat: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            time: "timestamp".into(),
            lon: "location-long".into(),
            lat: "location-lat".into(),
        }
    }
}

/// One fix; `time_min` is minutes since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub time_min: f64,
    pub lon: f64,
    pub lat: f64,
}

/// Rows that could not be parsed, as (line number, reason).
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<Record>,
    pub skipped: Vec<(usize, String)>,
    pub duplicates_merged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Lon,
    Lat,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Lon => "longitude",
            Axis::Lat => "latitude",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lon" | "long" | "longitude" => Ok(Axis::Lon),
            "lat" | "latitude" => Ok(Axis::Lat),
            _ => Err(Error::InvalidParameter(format!("unknown axis `{s}` (expected lat or lon)"))),
        }
    }
}

/// Minutes since the Unix epoch for an ISO-8601 timestamp or a number of
/// epoch seconds.
pub fn parse_timestamp(text: &str) -> Option<f64> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<f64>() {
        return secs.is_finite().then_some(secs / 60.0);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp_micros() as f64 / 60e6);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt.and_utc().timestamp_micros() as f64 / 60e6);
        }
    }
    None
}

pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Vec<Record>> {
    Ok(load_csv_report(std::fs::File::open(path)?, columns)?.records)
}

/// Parse telemetry from any reader. Up to 1% of the data rows may be
/// malformed; they are skipped with a warning.
pub fn load_csv_report<R: Read>(reader: R, columns: &ColumnMap) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (it, ilon, ilat) = (find(&columns.time)?, find(&columns.lon)?, find(&columns.lat)?);
    let mut report = LoadReport::default();
    let mut rows = 0usize;
    for (k, row) in rdr.records().enumerate() {
        rows += 1;
        // header is line 1
        let line = k + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.skipped.push((line, e.to_string()));
                continue;
            }
        };
        let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let time = parse_timestamp(field(it));
        let lon = field(ilon).parse::<f64>().ok().filter(|v| v.is_finite());
        let lat = field(ilat).parse::<f64>().ok().filter(|v| v.is_finite());
        match (time, lon, lat) {
            (Some(time_min), Some(lon), Some(lat)) => report.records.push(Record { time_min, lon, lat }),
            _ => report.skipped.push((
                line,
                format!("cannot parse ({}, {}, {})", field(it), field(ilon), field(ilat)),
            )),
        }
    }
    if report.skipped.len() * 100 > rows {
        let (line, why) = &report.skipped[0];
        return Err(Error::Data(format!(
            "{} of {rows} rows are malformed (first at line {line}: {why})",
            report.skipped.len()
        )));
    }
    for (line, why) in &report.skipped {
        log::warn!("skipping line {line}: {why}");
    }
    let before = report.records.len();
    report.records = merge_duplicates(report.records);
    report.duplicates_merged = before - report.records.len();
    Ok(report)
}

/// Sort by time and average records that share a timestamp.
pub fn merge_duplicates(mut records: Vec<Record>) -> Vec<Record> {
    records.sort_by(|a, b| a.time_min.total_cmp(&b.time_min));
    let mut out: Vec<Record> = Vec::with_capacity(records.len());
    let mut count = 0usize;
    for r in records {
        match out.last_mut() {
            Some(last) if last.time_min == r.time_min => {
                count += 1;
                let c = count as f64;
                last.lon += (r.lon - last.lon) / c;
                last.lat += (r.lat - last.lat) / c;
            }
            _ => {
                out.push(r);
                count = 1;
            }
        }
    }
    out
}

/// Values of one coordinate on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub axis_label: String,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, values: Vec<f64>, axis_label: impl Into<String>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("value {i} is not finite")));
        }
        Ok(Trajectory {
            grid,
            values,
            axis_label: axis_label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        self.grid.points()
    }

    /// Chronological split at `⌊fraction · n⌋`.
    pub fn split(&self, train_fraction: f64) -> Result<(Trajectory, Trajectory)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        let n = self.len();
        let cut = (train_fraction * n as f64).floor() as usize;
        if cut == 0 || cut == n {
            return Err(Error::Degenerate(format!(
                "splitting {n} points at fraction {train_fraction} leaves one side empty"
            )));
        }
        let part = |range: std::ops::Range<usize>| -> Result<Trajectory> {
            let idx: Vec<usize> = range.collect();
            Trajectory::new(
                self.grid.select(&idx)?,
                idx.iter().map(|&i| self.values[i]).collect(),
                self.axis_label.clone(),
            )
        };
        Ok((part(0..cut)?, part(cut..n)?))
    }

    /// Append `other`, which must start after the end of `self`.
    pub fn concat(&self, other: &Trajectory) -> Result<Trajectory> {
        let mut pts = self.times().to_vec();
        pts.extend_from_slice(other.times());
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Trajectory::new(
            TimeGrid::with_offset(pts, self.grid.origin_offset)?,
            values,
            self.axis_label.clone(),
        )
    }

    /// Multiply all values by `c`.
    pub fn scaled(&self, c: f64) -> Trajectory {
        Trajectory {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// `time_min,value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_min", "value"])?;
        for (t, v) in self.times().iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Read a `time,value…` table (the CLI's own output format). The value
/// column is picked by name, or the first column after time by default.
pub fn read_series_csv<R: Read>(reader: R, column: Option<&str>, label: &str) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Data("series file needs a time column and a value column".into()));
    }
    let col = match column {
        Some(name) => headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?,
        None => 1,
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        let parse = |i: usize| {
            row.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Data(format!("line {}: cannot parse column {i}", k + 2)))
        };
        times.push(parse(0)?);
        values.push(parse(col)?);
    }
    Trajectory::new(TimeGrid::new(times)?, values, label)
}

/// Both coordinates binned onto the same windows.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedTrack {
    pub lon: Trajectory,
    pub lat: Trajectory,
}

impl BinnedTrack {
    pub fn axis(&self, axis: Axis) -> &Trajectory {
        match axis {
            Axis::Lon => &self.lon,
            Axis::Lat => &self.lat,
        }
    }
}

/// Average records over windows of width `delta` minutes.
///
/// Windows are `[kΔ, (k+1)Δ)` on the absolute time axis, so the first
/// window is the one containing the first record. Each non-empty window
/// yields one point at its midpoint; times are reported relative to the
/// start of the first window (kept in `origin_offset`).
pub fn bin_average(records: &[Record], delta: f64) -> Result<BinnedTrack> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("bin width must be positive, got {delta}")));
    }
    let first = records
        .iter()
        .map(|r| r.time_min)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::Data("no records to bin".into()))?;
    let origin = (first / delta).floor() * delta;
    let mut bins: BTreeMap<i64, (usize, f64, f64)> = BTreeMap::new();
    for r in records {
        let k = ((r.time_min - origin) / delta).floor() as i64;
        let e = bins.entry(k).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += r.lon;
        e.2 += r.lat;
    }
    let times: Vec<f64> = bins.keys().map(|&k| (k as f64 + 0.5) * delta).collect();
    let grid = TimeGrid::with_offset(times, origin)?;
    let lon = bins.values().map(|(c, s, _)| s / *c as f64).collect();
    let lat = bins.values().map(|(c, _, s)| s / *c as f64).collect();
    Ok(BinnedTrack {
        lon: Trajectory::new(grid.clone(), lon, Axis::Lon.label())?,
        lat: Trajectory::new(grid, lat, Axis::Lat.label())?,
    })
}

/// Records at the absolute times of a binned track.
pub fn to_records(track: &BinnedTrack) -> Vec<Record> {
    let offset = track.lon.grid.origin_offset;
    track
        .lon
        .times()
        .iter()
        .zip(track.lon.values.iter().zip(&track.lat.values))
        .map(|(t, (lon, lat))| Record {
            time_min: offset + t,
            lon: *lon,
            lat: *lat,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, v: f64) -> Record {
        Record {
            time_min: t,
            lon: v,
            lat: -v,
        }
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("120"), Some(2.0));
        let a = parse_timestamp("2014-06-01 03:21:00.000").unwrap();
        let b = parse_timestamp("2014-06-01T03:21:30Z").unwrap();
        assert!((b - a - 0.5).abs() < 1e-9);
        assert!(parse_timestamp("yesterday").is_none());
    }

    #[test]
    fn load_sorted() {
        let text = "timestamp,location-long,location-lat\n\
                    2014-06-01 00:02:00,1.0,2.0\n\
                    2014-06-01 00:00:00,3.0,4.0\n\
                    2014-06-01 00:01:00,5.0,6.0\n";
        let r = load_csv_report(text.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(r.records.len(), 3);
        assert!(r.records.windows(2).all(|w| w[0].time_min < w[1].time_min));
        assert_eq!(r.records[0].lon, 3.0);
    }

    #[test]
    fn malformed_rows() {
        let mut text = String::from("timestamp,location-long,location-lat\n");
        for i in 0..1000 {
            if i == 500 {
                text.push_str("garbage,x,y\n");
            } else {
                text.push_str(&format!("{},{},{}\n", i * 60, i, i));
            }
        }
        let r = load_csv_report(text.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(r.records.len(), 999);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].0, 502);

        let text = "timestamp,location-long,location-lat\n0,1,1\nbad,1,1\n";
        assert!(matches!(load_csv_report(text.as_bytes(), &ColumnMap::default()), Err(Error::Data(_))));
    }

    #[test]
    fn missing_column_named() {
        let text = "timestamp,location-long\n0,1\n";
        match load_csv_report(text.as_bytes(), &ColumnMap::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "location-lat"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicates_are_averaged() {
        let text = "timestamp,location-long,location-lat\n0,1,10\n0,3,20\n60,5,5\n";
        let r = load_csv_report(text.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(r.records.len(), 2);
        assert_eq!(r.records[0].lon, 2.0);
        assert_eq!(r.records[0].lat, 15.0);
        assert_eq!(r.duplicates_merged, 1);
    }

    #[test]
    fn binning_examples() {
        let b = bin_average(&[rec(0.0, 1.0), rec(0.2, 2.0), rec(0.4, 3.0)], 0.5).unwrap();
        assert_eq!(b.lon.values, vec![2.0]);
        assert_eq!(b.lat.values, vec![-2.0]);
        assert_eq!(b.lon.times(), &[0.25]);
        let b = bin_average(&[rec(0.0, 1.0), rec(0.6, 2.0)], 0.5).unwrap();
        assert_eq!(b.lon.times(), &[0.25, 0.75]);
        let b = bin_average(&[rec(0.0, 1.0), rec(2.6, 2.0)], 0.5).unwrap();
        assert_eq!(b.lon.times(), &[0.25, 2.75]);
        assert!(bin_average(&[], 0.5).is_err());
    }

    #[test]
    fn binning_is_idempotent() {
        let recs: Vec<Record> = (0..200)
            .map(|i| rec(2.9e7 + 0.137 * i as f64, (i as f64 * 0.3).sin()))
            .collect();
        let once = bin_average(&recs, 0.5).unwrap();
        let twice = bin_average(&to_records(&once), 0.5).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn split_examples() {
        let make = |n: usize| {
            let g = TimeGrid::uniform(n as f64, n).unwrap();
            Trajectory::new(g, (0..n).map(|i| i as f64).collect(), "x").unwrap()
        };
        let t = make(400);
        let (a, b) = t.split(0.9).unwrap();
        assert_eq!((a.len(), b.len()), (360, 40));
        assert_eq!(a.concat(&b).unwrap(), t);
        let (a, b) = make(10).split(0.5).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        assert!(make(1).split(0.9).is_err());
    }

    #[test]
    fn series_round_trip() {
        let g = TimeGrid::new(vec![0.5, 1.0, 1.5]).unwrap();
        let t = Trajectory::new(g, vec![0.1, -0.25, 3.0], "latitude").unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = read_series_csv(buf.as_slice(), None, "latitude").unwrap();
        assert_eq!(back, t);
        let back = read_series_csv(buf.as_slice(), Some("value"), "latitude").unwrap();
        assert_eq!(back.values, t.values);
    }
}
