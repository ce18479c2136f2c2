//! Minute-indexed raw feature table and CSV ingestion.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::schema::{FeatureSchema, Resolution};
use crate::error::{Error, Result};

/// Longest run of missing minutes that is forward-filled.
pub const DEFAULT_MAX_FILL: usize = 3;

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub max_fill: usize,
    /// Missing runs longer than this abort ingestion.
    pub max_gap: usize,
    /// Columns that may be empty for part of the series (features with a
    /// limited history). Their missing cells are kept as NaN.
    pub sparse_columns: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            max_fill: DEFAULT_MAX_FILL,
            max_gap: 24 * 60,
            sparse_columns: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows: usize,
    pub filled_minutes: usize,
    pub broken_minutes: usize,
    pub dropped_leading: usize,
}

/// Raw values, one column per CSV column, one row per minute.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    /// Minutes since the Unix epoch of row 0. Always a quarter-hour start.
    pub start_minute: i64,
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub filled: Vec<bool>,
    pub broken: Vec<bool>,
}

impl RawTable {
    pub fn new(start_minute: i64, columns: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let len = values.first().map_or(0, Vec::len);
        if values.iter().any(|v| v.len() != len) || values.len() != columns.len() {
            return Err(Error::Format("ragged table".into()));
        }
        if start_minute.rem_euclid(15) != 0 {
            return Err(Error::Format("table must start on a quarter-hour".into()));
        }
        Ok(RawTable {
            start_minute,
            columns,
            values,
            filled: vec![false; len],
            broken: vec![false; len],
        })
    }

    pub fn len(&self) -> usize {
        self.filled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(&mut self.values[i])
    }

    /// Every column a schema needs is present, target included.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        for col in schema.required_columns() {
            if self.column(&col).is_none() {
                return Err(Error::Schema(format!("missing column `{col}`")));
            }
        }
        Ok(())
    }

    /// Quarter-hour columns must hold one value per quarter-hour.
    pub fn validate_quarter_hours(&self, schema: &FeatureSchema) -> Result<()> {
        for (ci, name) in self.columns.iter().enumerate() {
            if schema.column_resolution(name) != Some(Resolution::QuarterHour) {
                continue;
            }
            let col = &self.values[ci];
            for (q, chunk) in col.chunks(15).enumerate() {
                let mut first: Option<f64> = None;
                for (j, &v) in chunk.iter().enumerate() {
                    let row = q * 15 + j;
                    if self.broken[row] || v.is_nan() {
                        continue;
                    }
                    match first {
                        None => first = Some(v),
                        Some(f) if f != v => {
                            return Err(Error::Validation(format!(
                                "quarter-hour column `{name}` changes within the quarter-hour at {}",
                                format_minute(self.start_minute + row as i64)
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().cloned());
        out.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for row in 0..self.len() {
            record.clear();
            record.push(format_minute(self.start_minute + row as i64));
            for col in &self.values {
                let v = col[row];
                record.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, schema: &FeatureSchema, opts: &IngestOptions) -> Result<(Self, IngestReport)> {
        let file = std::fs::File::open(path)?;
        Self::read_from(file, schema, opts)
    }

    pub fn read_from<R: std::io::Read>(
        reader: R,
        schema: &FeatureSchema,
        opts: &IngestOptions,
    ) -> Result<(Self, IngestReport)> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0).map(str::trim) != Some("timestamp") {
            return Err(Error::Format("first column must be `timestamp`".into()));
        }
        let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let wanted = schema.required_columns();
        let mut positions = Vec::with_capacity(wanted.len());
        for col in &wanted {
            let pos = index
                .get(col.as_str())
                .ok_or_else(|| Error::Schema(format!("missing column `{col}`")))?;
            positions.push(*pos);
        }

        let mut stamps: Vec<i64> = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let ts = parse_minute(rec.get(0).unwrap_or(""))
                .map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))?;
            if let Some(&prev) = stamps.last() {
                if ts <= prev {
                    return Err(Error::Format(format!(
                        "row {}: timestamps not strictly increasing ({} after {})",
                        line + 2,
                        format_minute(ts),
                        format_minute(prev)
                    )));
                }
                let missing = (ts - prev - 1) as usize;
                if missing > opts.max_gap {
                    return Err(Error::Ingest(format!(
                        "gap of {missing} minutes before {} exceeds the limit of {}",
                        format_minute(ts),
                        opts.max_gap
                    )));
                }
                for col in values.iter_mut() {
                    col.extend(std::iter::repeat_n(f64::NAN, missing));
                }
                stamps.extend((prev + 1)..ts);
            }
            stamps.push(ts);
            for (col, &pos) in values.iter_mut().zip(&positions) {
                let cell = rec.get(pos).unwrap_or("").trim();
                let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                    f64::NAN
                } else {
                    cell.parse::<f64>().map_err(|_| {
                        Error::Format(format!("row {}: `{cell}` is not a number", line + 2))
                    })?
                };
                col.push(v);
            }
        }
        if stamps.is_empty() {
            return Err(Error::Ingest("no data rows".into()));
        }

        // Start on a quarter-hour boundary.
        let skip = ((15 - stamps[0].rem_euclid(15)) % 15) as usize;
        let skip = skip.min(stamps.len());
        let start = stamps[0] + skip as i64;
        for col in values.iter_mut() {
            col.drain(..skip);
        }
        let len = stamps.len() - skip;

        let mut table = RawTable {
            start_minute: start,
            columns: wanted,
            values,
            filled: vec![false; len],
            broken: vec![false; len],
        };
        let mut report = IngestReport {
            rows: len,
            dropped_leading: skip,
            ..IngestReport::default()
        };
        table.repair_gaps(opts);
        report.filled_minutes = table.filled.iter().filter(|&&f| f).count();
        report.broken_minutes = table.broken.iter().filter(|&&b| b).count();
        table.validate_quarter_hours(schema)?;
        Ok((table, report))
    }

    /// Forward-fill short runs of missing cells, mark longer runs broken.
    pub fn repair_gaps(&mut self, opts: &IngestOptions) {
        for (ci, name) in self.columns.iter().enumerate() {
            if opts.sparse_columns.iter().any(|c| c == name) {
                continue;
            }
            let col = &mut self.values[ci];
            let mut i = 0;
            while i < col.len() {
                if !col[i].is_nan() {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < col.len() && col[i].is_nan() {
                    i += 1;
                }
                let run = i - start;
                if start > 0 && run <= opts.max_fill {
                    let v = col[start - 1];
                    for r in start..i {
                        col[r] = v;
                        self.filled[r] = true;
                    }
                } else {
                    self.broken[start..i].iter_mut().for_each(|b| *b = true);
                }
            }
        }
    }
}

pub fn parse_minute(text: &str) -> std::result::Result<i64, String> {
    let t = text.trim();
    let dt = if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        dt.naive_utc()
    } else {
        let t = t.strip_suffix('Z').unwrap_or(t);
        ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"]
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(t, f).ok())
            .ok_or_else(|| format!("cannot parse timestamp `{text}`"))?
    };
    let secs = dt.and_utc().timestamp();
    if secs.rem_euclid(60) != 0 {
        return Err(format!("timestamp `{text}` is not on a whole minute"));
    }
    Ok(secs.div_euclid(60))
}

pub fn format_minute(minute: i64) -> String {
    DateTime::from_timestamp(minute * 60, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M").to_string())
        .unwrap_or_else(|| minute.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{FeatureGroup, FeatureSpec, Horizon};

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            "si",
            vec![FeatureSpec::new("x", FeatureGroup::Other, Resolution::Minute, Horizon::Past, true)],
        )
        .unwrap()
    }

    fn csv_of(rows: &[(i64, f64, f64)]) -> String {
        let mut s = String::from("timestamp,si,x\n");
        for (m, si, x) in rows {
            s.push_str(&format!("{},{si},{x}\n", format_minute(*m)));
        }
        s
    }

    #[test]
    fn thirty_minutes_two_features() {
        let rows: Vec<_> = (0..30).map(|m| (m, (m / 15) as f64, m as f64)).collect();
        let (t, rep) = RawTable::read_from(csv_of(&rows).as_bytes(), &schema(), &IngestOptions::default()).unwrap();
        assert_eq!(t.len(), 30);
        assert_eq!(rep.filled_minutes + rep.broken_minutes, 0);
        assert_eq!(t.column("x").unwrap()[29], 29.0);
    }

    #[test]
    fn shuffled_rows_are_a_format_error() {
        let rows = [(1, 0.0, 0.0), (0, 0.0, 0.0), (2, 0.0, 0.0)];
        let err = RawTable::read_from(csv_of(&rows).as_bytes(), &schema(), &IngestOptions::default());
        assert!(matches!(err, Err(Error::Format(_))));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let text = "timestamp,si\n1970-01-01T00:00,1\n";
        let err = RawTable::read_from(text.as_bytes(), &schema(), &IngestOptions::default());
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn qh_value_changing_mid_quarter_hour_is_rejected() {
        let rows: Vec<_> = (0..15).map(|m| (m, if m < 7 { 1.0 } else { 2.0 }, 0.0)).collect();
        let err = RawTable::read_from(csv_of(&rows).as_bytes(), &schema(), &IngestOptions::default());
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn short_gaps_fill_long_gaps_break_and_huge_gaps_fail() {
        let mut rows: Vec<_> = (0..60).map(|m| (m, 0.0, m as f64)).collect();
        rows.retain(|r| !(10..13).contains(&r.0) && !(30..40).contains(&r.0));
        let (t, rep) = RawTable::read_from(csv_of(&rows).as_bytes(), &schema(), &IngestOptions::default()).unwrap();
        assert_eq!(t.len(), 60);
        assert_eq!(rep.filled_minutes, 3);
        assert_eq!(rep.broken_minutes, 10);
        assert_eq!(t.column("x").unwrap()[11], 9.0);
        assert!(t.broken[35] && !t.broken[40]);

        let opts = IngestOptions { max_gap: 5, ..IngestOptions::default() };
        let err = RawTable::read_from(csv_of(&rows).as_bytes(), &schema(), &opts);
        assert!(matches!(err, Err(Error::Ingest(_))));
    }

    #[test]
    fn leading_partial_quarter_hour_is_dropped() {
        let rows: Vec<_> = (7..40).map(|m| (m, (m / 15) as f64, 0.0)).collect();
        let (t, rep) = RawTable::read_from(csv_of(&rows).as_bytes(), &schema(), &IngestOptions::default()).unwrap();
        assert_eq!(rep.dropped_leading, 8);
        assert_eq!(t.start_minute, 15);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let vals: Vec<f64> = (0..45).map(|i| (i as f64 * 0.1).sin() * 123.456).collect();
        let si: Vec<f64> = (0..45).map(|i| (i / 15) as f64 * 1.5).collect();
        let t = RawTable::new(0, vec!["si".into(), "x".into()], vec![si, vals]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let (back, _) = RawTable::read_from(buf.as_slice(), &schema(), &IngestOptions::default()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn timestamp_formats() {
        assert_eq!(parse_minute("1970-01-01T00:01").unwrap(), 1);
        assert_eq!(parse_minute("1970-01-01T01:00:00Z").unwrap(), 60);
        assert_eq!(parse_minute("1970-01-01 00:02:00").unwrap(), 2);
        assert!(parse_minute("1970-01-01T00:00:30").is_err());
    }
}
