use std::fs;

use logrange_gp::telemetry::{bin_average, load_csv_report, read_series_csv, Axis, ColumnMap};
use logrange_gp::{Error, Trajectory};
use serde::Serialize;

use crate::{AxisArg, CliError, InputArgs};

/// Where a trajectory came from, echoed into JSON outputs.
#[derive(Debug, Clone, Serialize)]
pub struct DataInfo {
    pub source: String,
    pub kind: &'static str,
    pub label: String,
    pub n: usize,
    pub origin_offset: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_minutes: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_records: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped_rows: Option<usize>,
}

pub fn load(args: &InputArgs) -> Result<(Trajectory, DataInfo), CliError> {
    let bytes = fs::read(&args.input).map_err(|e| {
        Error::Data(format!("cannot read {}: {e}", args.input.display()))
    })?;
    let headers = csv::Reader::from_reader(bytes.as_slice())
        .headers()
        .map_err(Error::from)?
        .clone();
    let source = args.input.display().to_string();
    if headers.iter().any(|h| h.trim() == args.time_col) {
        if !(args.delta > 0.0) {
            return Err(CliError::Usage(format!("--delta must be positive, got {}", args.delta)));
        }
        let columns = ColumnMap {
            time: args.time_col.clone(),
            lon: args.lon_col.clone(),
            lat: args.lat_col.clone(),
        };
        let report = load_csv_report(bytes.as_slice(), &columns)?;
        let track = bin_average(&report.records, args.delta)?;
        let axis = match args.axis {
            AxisArg::Lat => Axis::Lat,
            AxisArg::Lon => Axis::Lon,
        };
        let traj = track.axis(axis).clone();
        log::info!(
            "{source}: {} fixes binned to {} points of {} min",
            report.records.len(),
            traj.len(),
            args.delta
        );
        let info = DataInfo {
            source,
            kind: "telemetry",
            label: traj.axis_label.clone(),
            n: traj.len(),
            origin_offset: traj.grid.origin_offset,
            bin_minutes: Some(args.delta),
            raw_records: Some(report.records.len()),
            skipped_rows: Some(report.skipped.len()),
        };
        Ok((traj, info))
    } else {
        let label = args.column.clone().unwrap_or_else(|| headers.get(1).unwrap_or("value").to_string());
        let traj = read_series_csv(bytes.as_slice(), args.column.as_deref(), &label)?;
        let info = DataInfo {
            source,
            kind: "series",
            label,
            n: traj.len(),
            origin_offset: traj.grid.origin_offset,
            bin_minutes: None,
            raw_records: None,
            skipped_rows: None,
        };
        Ok((traj, info))
    }
}
