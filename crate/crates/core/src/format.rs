//! CSV readers and writers for every pipeline artifact.
//!
//! All files are UTF-8 with a header row and `.` decimals. Floats are
//! written with Rust's shortest round-trip formatting, so identical data
//! always produces identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::lhs::LhsDesign;
use crate::model::TrainLogRow;
use crate::score::{BootstrapResult, ScoreRow};
use crate::series::{RealizationMeta, SeriesKind, SurveillanceSeries};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("series id {0:?} contains a comma")]
    BadId(String),
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

fn open_writer(path: &Path) -> Result<BufWriter<File>, FormatError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn check_id(id: &str) -> Result<(), FormatError> {
    if id.contains(',') || id.contains('\n') {
        return Err(FormatError::BadId(id.to_string()));
    }
    Ok(())
}

const SIM_HEADER: &str = "series_id,kind,variant_id,week,value";
const AUG_HEADER: &str = "series_id,kind,variant_id,week,value,realization_id,noised,outliered";

/// Long-form series CSV. Augmented series (with realization metadata) get
/// the three extra provenance columns.
pub fn write_series_csv(
    path: &Path,
    series: &[&SurveillanceSeries],
    augmented: bool,
) -> Result<(), FormatError> {
    let mut w = open_writer(path)?;
    let header = if augmented { AUG_HEADER } else { SIM_HEADER };
    writeln!(w, "{header}").map_err(|e| io_err(path, e))?;
    for s in series {
        check_id(&s.id)?;
        let variant = s.variant_id.map(|v| v.to_string()).unwrap_or_default();
        for (week, &value) in s.values.iter().enumerate() {
            if augmented {
                let meta = s.realization.unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    s.id,
                    s.kind.as_str(),
                    variant,
                    week,
                    value,
                    meta.realization_id,
                    meta.noised as u8,
                    meta.outliered as u8
                )
                .map_err(|e| io_err(path, e))?;
            } else {
                writeln!(w, "{},{},{},{},{}", s.id, s.kind.as_str(), variant, week, value)
                    .map_err(|e| io_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads either series CSV layout; series come back sorted by id with
/// weeks in order.
pub fn read_series_csv(path: &Path) -> Result<Vec<SurveillanceSeries>, FormatError> {
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))
        .and_then(|(i, r)| r.map(|l| (i, l)).map_err(|e| io_err(path, e)))?;
    let augmented = match header.trim_end() {
        SIM_HEADER => false,
        AUG_HEADER => true,
        other => return Err(parse_err(path, 1, format!("unrecognized header {other:?}"))),
    };

    let mut by_id: std::collections::BTreeMap<String, SurveillanceSeries> =
        std::collections::BTreeMap::new();
    let mut rows: std::collections::BTreeMap<String, Vec<(usize, f64)>> =
        std::collections::BTreeMap::new();
    for (i, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        let expect = if augmented { 8 } else { 5 };
        if fields.len() != expect {
            return Err(parse_err(path, lineno, format!("expected {expect} fields, got {}", fields.len())));
        }
        let id = fields[0].to_string();
        let kind = match fields[1] {
            "tc" => SeriesKind::Tc,
            "vac" => SeriesKind::Vac,
            other => return Err(parse_err(path, lineno, format!("unknown kind {other:?}"))),
        };
        let variant_id = if fields[2].is_empty() {
            None
        } else {
            Some(fields[2].parse::<u32>().map_err(|e| parse_err(path, lineno, e.to_string()))?)
        };
        let week: usize =
            fields[3].parse().map_err(|e: std::num::ParseIntError| parse_err(path, lineno, e.to_string()))?;
        let value: f64 =
            fields[4].parse().map_err(|e: std::num::ParseFloatError| parse_err(path, lineno, e.to_string()))?;
        let realization = if augmented {
            Some(RealizationMeta {
                realization_id: fields[5]
                    .parse()
                    .map_err(|e: std::num::ParseIntError| parse_err(path, lineno, e.to_string()))?,
                noised: fields[6] == "1",
                outliered: fields[7] == "1",
            })
        } else {
            None
        };
        by_id.entry(id.clone()).or_insert_with(|| SurveillanceSeries {
            id: id.clone(),
            kind,
            variant_id,
            values: Vec::new(),
            realization,
        });
        rows.entry(id).or_default().push((week, value));
    }

    let mut out = Vec::with_capacity(by_id.len());
    for (id, mut weeks) in rows {
        weeks.sort_by_key(|&(w, _)| w);
        let mut s = by_id.remove(&id).expect("populated together");
        for (k, &(week, value)) in weeks.iter().enumerate() {
            if week != k {
                return Err(parse_err(path, 0, format!("series {id}: weeks not contiguous at {week}")));
            }
            s.values.push(value);
        }
        out.push(s);
    }
    Ok(out)
}

/// Design matrix: one row per sample, named parameter columns.
pub fn write_design_csv(path: &Path, design: &LhsDesign) -> Result<(), FormatError> {
    let mut w = open_writer(path)?;
    let names: Vec<&str> = design.dims.iter().map(|d| d.name.as_str()).collect();
    writeln!(w, "sample,{}", names.join(",")).map_err(|e| io_err(path, e))?;
    for (i, point) in design.points.iter().enumerate() {
        let vals: Vec<String> = point.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", i, vals.join(",")).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// One row of the hub-style forecast CSV. `level == None` marks the point
/// forecast row (duplicated from the median).
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRow {
    pub location: String,
    pub date: u32,
    pub horizon: u32,
    pub level: Option<f64>,
    pub value: f64,
}

const FORECAST_HEADER: &str = "location,forecast_date,target,quantile_level,value";

pub fn write_forecast_csv(path: &Path, rows: &[ForecastRow]) -> Result<(), FormatError> {
    let mut w = open_writer(path)?;
    writeln!(w, "{FORECAST_HEADER}").map_err(|e| io_err(path, e))?;
    for r in rows {
        check_id(&r.location)?;
        let level = r.level.map(|l| l.to_string()).unwrap_or_else(|| "point".to_string());
        writeln!(w, "{},{},{} wk ahead cases,{},{}", r.location, r.date, r.horizon, level, r.value)
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_forecast_csv(path: &Path) -> Result<Vec<ForecastRow>, FormatError> {
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim_end() != FORECAST_HEADER {
                return Err(parse_err(path, 1, "unrecognized forecast header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(path, lineno, "expected 5 fields"));
        }
        let horizon = fields[2]
            .strip_suffix(" wk ahead cases")
            .and_then(|h| h.parse::<u32>().ok())
            .ok_or_else(|| parse_err(path, lineno, format!("bad target {:?}", fields[2])))?;
        let level = if fields[3] == "point" {
            None
        } else {
            Some(fields[3].parse::<f64>().map_err(|e| parse_err(path, lineno, e.to_string()))?)
        };
        out.push(ForecastRow {
            location: fields[0].to_string(),
            date: fields[1].parse().map_err(|e: std::num::ParseIntError| parse_err(path, lineno, e.to_string()))?,
            horizon,
            level,
            value: fields[4].parse().map_err(|e: std::num::ParseFloatError| parse_err(path, lineno, e.to_string()))?,
        });
    }
    Ok(out)
}

const TRUTH_HEADER: &str = "location,week,value";

pub fn write_truth_csv(path: &Path, rows: &[(String, u32, f64)]) -> Result<(), FormatError> {
    let mut w = open_writer(path)?;
    writeln!(w, "{TRUTH_HEADER}").map_err(|e| io_err(path, e))?;
    for (location, week, value) in rows {
        check_id(location)?;
        writeln!(w, "{location},{week},{value}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<(String, u32, f64)>, FormatError> {
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim_end() != TRUTH_HEADER {
                return Err(parse_err(path, 1, "unrecognized truth header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(path, lineno, "expected 3 fields"));
        }
        out.push((
            fields[0].to_string(),
            fields[1].parse().map_err(|e: std::num::ParseIntError| parse_err(path, lineno, e.to_string()))?,
            fields[2].parse().map_err(|e: std::num::ParseFloatError| parse_err(path, lineno, e.to_string()))?,
        ));
    }
    Ok(out)
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<(), FormatError> {
    let mut w = open_writer(path)?;
    writeln!(w, "model,horizon,metric,value").map_err(|e| io_err(path, e))?;
    for r in rows {
        check_id(&r.model)?;
        let horizon = r.horizon.map(|h| h.to_string()).unwrap_or_else(|| "all".to_string());
        writeln!(w, "{},{},{},{}", r.model, horizon, r.metric, r.value).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Replicate-level bootstrap values, one row per (mode, model, metric,
/// replicate).
pub fn write_bootstrap_csv(path: &Path, results: &[&BootstrapResult]) -> Result<(), FormatError> {
    let mut w = open_writer(path)?;
    writeln!(w, "mode,model,metric,replicate,value").map_err(|e| io_err(path, e))?;
    for res in results {
        for (model, d) in &res.draws {
            for (metric, values) in
                [("mae", &d.mae), ("wis", &d.wis), ("rmae", &d.rmae), ("rwis", &d.rwis)]
            {
                for (rep, v) in values.iter().enumerate() {
                    writeln!(w, "{},{},{},{},{}", res.mode.as_str(), model, metric, rep, v)
                        .map_err(|e| io_err(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Bootstrap percentile intervals, one row per (mode, model, metric).
pub fn write_bootstrap_ci_csv(path: &Path, results: &[&BootstrapResult]) -> Result<(), FormatError> {
    let mut w = open_writer(path)?;
    writeln!(w, "mode,model,metric,ci_lower,ci_upper").map_err(|e| io_err(path, e))?;
    for res in results {
        for ((model, metric), (lo, hi)) in &res.cis {
            writeln!(w, "{},{},{},{},{}", res.mode.as_str(), model, metric, lo, hi)
                .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_training_log_csv(path: &Path, rows: &[TrainLogRow]) -> Result<(), FormatError> {
    let mut w = open_writer(path)?;
    writeln!(w, "update,lr,train_loss,val_loss,ema_val_loss").map_err(|e| io_err(path, e))?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.update, r.lr, r.train_loss, opt(r.val_loss), opt(r.ema_val_loss))
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Per-series window counts, for reproducibility audits.
pub fn write_corpus_manifest_csv(path: &Path, counts: &[(&str, usize)]) -> Result<(), FormatError> {
    let mut w = open_writer(path)?;
    writeln!(w, "series_id,windows").map_err(|e| io_err(path, e))?;
    for (id, n) in counts {
        check_id(id)?;
        writeln!(w, "{id},{n}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::SeriesKind;

    #[test]
    fn series_csv_round_trip_both_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let tc = SurveillanceSeries::new_tc("run_tc", vec![0.0, 1.5, 22.25]);
        let mut vac = SurveillanceSeries::new_vac("run_v3", 3, vec![0.125, 1.0, 2.0]);
        let path = dir.path().join("sim.csv");
        write_series_csv(&path, &[&tc, &vac], false).unwrap();
        let back = read_series_csv(&path).unwrap();
        assert_eq!(back, vec![tc.clone(), vac.clone()]);

        vac.realization = Some(RealizationMeta { realization_id: 7, noised: true, outliered: false });
        let path = dir.path().join("aug.csv");
        write_series_csv(&path, &[&vac], true).unwrap();
        let back = read_series_csv(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], vac);
        assert_eq!(back[0].kind, SeriesKind::Vac);
    }

    #[test]
    fn forecast_csv_round_trip_with_point_rows() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ForecastRow { location: "p0001r00".into(), date: 30, horizon: 1, level: Some(0.025), value: 1.25 },
            ForecastRow { location: "p0001r00".into(), date: 30, horizon: 1, level: Some(0.5), value: 4.0 },
            ForecastRow { location: "p0001r00".into(), date: 30, horizon: 1, level: None, value: 4.0 },
        ];
        let path = dir.path().join("forecast.csv");
        write_forecast_csv(&path, &rows).unwrap();
        assert_eq!(read_forecast_csv(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("1 wk ahead cases"));
        assert!(text.contains(",point,"));
    }

    #[test]
    fn truth_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![("a".to_string(), 0u32, 1.0), ("a".to_string(), 1, 2.5)];
        let path = dir.path().join("truth.csv");
        write_truth_csv(&path, &rows).unwrap();
        assert_eq!(read_truth_csv(&path).unwrap(), rows);
    }

    #[test]
    fn malformed_rows_produce_located_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "series_id,kind,variant_id,week,value\nx,tc,,0,notanumber\n").unwrap();
        let err = read_series_csv(&path).unwrap_err();
        assert!(matches!(err, FormatError::Parse { line: 2, .. }), "{err}");

        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(read_series_csv(&path).is_err());
    }

    #[test]
    fn float_formatting_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let values = vec![0.1 + 0.2, 1.0 / 3.0, 1e-12, 123456789.123456];
        let s = SurveillanceSeries::new_tc("t", values.clone());
        let path = dir.path().join("f.csv");
        write_series_csv(&path, &[&s], false).unwrap();
        let back = read_series_csv(&path).unwrap();
        assert_eq!(back[0].values, values);
    }
}
