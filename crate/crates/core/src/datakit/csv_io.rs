//! CSV layout for readings.
//!
//! The header is `timestamp,node_0,node_1,...` for one feature per node, or
//! `timestamp,node_0_f0,node_0_f1,...,node_1_f0,...` (node-major) for
//! several. Each following row is one timestep. Cells are plain decimal or
//! scientific numbers, comma separated, unquoted. Missing or non-numeric
//! cells are errors; nothing is imputed.

use std::fmt::Write as _;
use std::path::Path;

use super::TimeSeriesDataset;
use crate::error::{Error, Result};

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

/// Parses a header column into `(node, feature)`.
fn parse_column(name: &str) -> Option<(usize, Option<usize>)> {
    let rest = name.strip_prefix("node_")?;
    match rest.split_once("_f") {
        Some((node, feat)) => Some((node.parse().ok()?, Some(feat.parse().ok()?))),
        None => Some((rest.parse().ok()?, None)),
    }
}

/// Works out `(nodes, features)` from header columns after `timestamp`.
fn parse_header(columns: &[&str]) -> Result<(usize, usize)> {
    let loc = "line 1";
    if columns.first().map(|c| c.trim()) != Some("timestamp") {
        return Err(parse_err(loc, "first column must be `timestamp`"));
    }
    let cols = &columns[1..];
    if cols.is_empty() {
        return Err(parse_err(loc, "no node columns"));
    }
    let parsed: Vec<(usize, Option<usize>)> = cols
        .iter()
        .map(|c| parse_column(c.trim()).ok_or_else(|| parse_err(loc, format!("bad column name `{c}`"))))
        .collect::<Result<_>>()?;
    let multi = parsed[0].1.is_some();
    let features = if multi {
        parsed.iter().take_while(|(n, _)| *n == 0).count()
    } else {
        1
    };
    if cols.len() % features != 0 {
        return Err(parse_err(loc, "node columns do not form a node × feature grid"));
    }
    let nodes = cols.len() / features;
    for (k, (node, feat)) in parsed.iter().enumerate() {
        let want_feat = multi.then_some(k % features);
        if *node != k / features || *feat != want_feat {
            let want = match want_feat {
                Some(f) => format!("node_{}_f{f}", k / features),
                None => format!("node_{}", k / features),
            };
            return Err(parse_err(
                loc,
                format!("column {} is `{}`, expected `{want}`", k + 2, cols[k]),
            ));
        }
    }
    Ok((nodes, features))
}

/// Parses CSV text in the layout described at the module level.
pub fn parse_csv(text: &str) -> Result<TimeSeriesDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .quoting(false)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err("line 1", e.to_string()))?
        .clone();
    let columns: Vec<&str> = header.iter().collect();
    let (nodes, features) = parse_header(&columns)?;

    let mut values = Vec::new();
    let mut timestamps = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    format!("row has {len} cells, header has {expected_len}")
                }
                other => format!("{other:?}"),
            };
            parse_err(format!("line {line}"), message)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        timestamps.push(record[0].trim().to_string());
        for (col, cell) in record.iter().enumerate().skip(1) {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(
                    format!("line {line}, column {}", col + 1),
                    if cell.is_empty() {
                        "missing cell".to_string()
                    } else {
                        format!("non-numeric cell `{cell}`")
                    },
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    format!("line {line}, column {}", col + 1),
                    format!("non-finite cell `{cell}`"),
                ));
            }
            values.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(parse_err("data", "no timesteps"));
    }
    TimeSeriesDataset::new(timestamps.len(), nodes, features, values, timestamps)
}

pub fn load_csv(path: &Path) -> Result<TimeSeriesDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

/// Serializes with shortest round-trip float formatting.
pub fn to_csv_string(ds: &TimeSeriesDataset) -> String {
    let mut out = String::from("timestamp");
    for i in 0..ds.nodes() {
        for f in 0..ds.features() {
            if ds.features() == 1 {
                write!(out, ",node_{i}").expect("string write");
            } else {
                write!(out, ",node_{i}_f{f}").expect("string write");
            }
        }
    }
    out.push('\n');
    for t in 0..ds.steps() {
        out.push_str(&ds.timestamps()[t]);
        for v in ds.step(t) {
            write!(out, ",{v:?}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, ds: &TimeSeriesDataset) -> Result<()> {
    std::fs::write(path, to_csv_string(ds)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_file() {
        let ds = parse_csv("timestamp,node_0,node_1\n0,1.5,2\n300,3,4e-1\n600,-5,6\n").unwrap();
        assert_eq!((ds.steps(), ds.nodes(), ds.features()), (3, 2, 1));
        assert_eq!(ds.values(), &[1.5, 2.0, 3.0, 0.4, -5.0, 6.0]);
        assert_eq!(ds.interval, Some(300.0));
    }

    #[test]
    fn parses_multi_feature_header() {
        let ds = parse_csv("timestamp,node_0_f0,node_0_f1,node_1_f0,node_1_f1\nt,1,2,3,4\n").unwrap();
        assert_eq!((ds.nodes(), ds.features()), (2, 2));
        assert_eq!(ds.value(0, 1, 0), 3.0);
    }

    #[test]
    fn empty_data_section() {
        let err = parse_csv("timestamp,node_0\n").unwrap_err();
        assert!(err.to_string().contains("no timesteps"), "{err}");
    }

    #[test]
    fn reports_locations() {
        let err = parse_csv("timestamp,node_0,node_1\n0,1,2\n1,3\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_csv("timestamp,node_0,node_1\n0,1,2\n1,3,abc\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("column 3") && msg.contains("abc"), "{msg}");
        let err = parse_csv("timestamp,node_0\n0,\n").unwrap_err();
        assert!(err.to_string().contains("missing cell"), "{err}");
        let err = parse_csv("timestamp,node_0\n0,NaN\n").unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn rejects_malformed_header() {
        for text in [
            "time,node_0\n0,1\n",
            "timestamp,node_1\n0,1\n",
            "timestamp,node_0,sensor\n0,1,2\n",
            "timestamp\n0\n",
        ] {
            let err = parse_csv(text).unwrap_err();
            assert!(err.to_string().contains("line 1"), "{text}: {err}");
        }
    }

    #[test]
    fn wide_header() {
        let mut text = String::from("timestamp");
        for i in 0..307 {
            text.push_str(&format!(",node_{i}"));
        }
        text.push_str("\n0");
        for i in 0..307 {
            text.push_str(&format!(",{i}"));
        }
        text.push('\n');
        assert_eq!(parse_csv(&text).unwrap().nodes(), 307);
    }
}
