use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::schema::is_timestamp_column;
use super::{DatasetSchema, RawTable};
use crate::error::{Error, Result};

const NAIVE_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
];

/// Epoch seconds from an ISO-8601 string or a plain number.
pub fn parse_timestamp(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp_millis() as f64 / 1000.0);
    }
    for fmt in NAIVE_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp_millis() as f64 / 1000.0);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp() as f64)
}

fn date_part_key(day: f64, month: f64, year: f64) -> Option<f64> {
    let whole = |v: f64| (v.fract() == 0.0).then_some(v);
    let date = NaiveDate::from_ymd_opt(
        whole(year)? as i32,
        whole(month)? as u32,
        whole(day)? as u32,
    )?;
    Some(date.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64)
}

/// Reads a headered CSV into schema column order, sorted by time.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let positions: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut order = std::iter::once(&schema.target_name).chain(&schema.feature_names);
    if let Some(missing) = order.find(|f| !positions.contains_key(f.as_str())) {
        return Err(Error::MissingColumn(missing.clone()));
    }
    let source: Vec<usize> = schema
        .feature_names
        .iter()
        .map(|f| positions[f.as_str()])
        .collect();

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(source.len());
        for (name, &col) in schema.feature_names.iter().zip(&source) {
            let cell = record.get(col).unwrap_or("");
            let value = if is_timestamp_column(name) {
                parse_timestamp(cell)
            } else {
                cell.parse::<f64>().ok().filter(|v| v.is_finite())
            };
            row.push(value.ok_or_else(|| Error::ParseCell {
                row: r + 1,
                column: name.clone(),
                value: cell.to_string(),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }

    let table = RawTable {
        columns: schema.feature_names.clone(),
        rows,
    };
    sort_by_time(table)
}

fn sort_by_time(mut table: RawTable) -> Result<RawTable> {
    let stamp = table.columns.iter().position(|c| is_timestamp_column(c));
    let parts = ["Day", "Month", "Year"].map(|p| table.column_index(p));
    let keys: Vec<f64> = if let Some(i) = stamp {
        table.rows.iter().map(|r| r[i]).collect()
    } else if let [Some(d), Some(m), Some(y)] = parts {
        table
            .rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                date_part_key(row[d], row[m], row[y]).ok_or_else(|| Error::ParseCell {
                    row: r + 1,
                    column: "Day/Month/Year".into(),
                    value: format!("{}/{}/{}", row[d], row[m], row[y]),
                })
            })
            .collect::<Result<_>>()?
    } else {
        return Ok(table);
    };
    let mut idx: Vec<usize> = (0..table.rows.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    let mut rows = std::mem::take(&mut table.rows);
    table.rows = idx
        .into_iter()
        .map(|i| std::mem::take(&mut rows[i]))
        .collect();
    Ok(table)
}

/// Writes a table in the format [`load_csv`] reads. Timestamps are written
/// as epoch seconds.
pub fn write_csv(table: &RawTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema() -> DatasetSchema {
        DatasetSchema::new("t", &["DateTime", "a", "b"], "b", 1).unwrap()
    }

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn permuted_header_reordered_and_sorted() {
        let f = file("b,extra,DateTime,a\n3,x,2024-01-01T02:00:00Z,30\n1,y,2024-01-01 00:00:00,10\n2,z,1704070800,20\n");
        let t = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(t.columns, vec!["DateTime", "a", "b"]);
        assert_eq!(t.len(), 3);
        assert_eq!(t.column("a").unwrap(), vec![10.0, 20.0, 30.0]);
        assert_eq!(
            t.column("DateTime").unwrap(),
            vec![1704067200.0, 1704070800.0, 1704074400.0]
        );
    }

    #[test]
    fn missing_target_named() {
        let f = file("DateTime,a\n0,1\n");
        match load_csv(f.path(), &schema()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_cell_reports_location() {
        let f = file("DateTime,a,b\n0,1,2\n1,oops,3\n");
        match load_csv(f.path(), &schema()) {
            Err(Error::ParseCell { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "a", "oops"))
            }
            other => panic!("{other:?}"),
        }
        let f = file("DateTime,a,b\n0,NaN,2\n");
        assert!(matches!(
            load_csv(f.path(), &schema()),
            Err(Error::ParseCell { .. })
        ));
    }

    #[test]
    fn empty_files() {
        assert!(matches!(
            load_csv(file("").path(), &schema()),
            Err(Error::EmptyFile(_))
        ));
        assert!(matches!(
            load_csv(file("DateTime,a,b\n").path(), &schema()),
            Err(Error::EmptyFile(_))
        ));
    }

    #[test]
    fn day_month_year_ordering() {
        let s = DatasetSchema::new("d", &["Day", "Month", "Year", "v"], "v", 1).unwrap();
        let f = file("Day,Month,Year,v\n1,2,2020,3\n31,1,2020,2\n15,6,2019,1\n");
        let t = load_csv(f.path(), &s).unwrap();
        assert_eq!(t.column("v").unwrap(), vec![1.0, 2.0, 3.0]);
        let bad = file("Day,Month,Year,v\n31,2,2020,3\n");
        assert!(load_csv(bad.path(), &s).is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let t = RawTable {
            columns: vec!["DateTime".into(), "a".into(), "b".into()],
            rows: vec![vec![0.0, 0.1, 1.0 / 3.0], vec![3600.0, -2.5e-9, 7.0]],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&t, &p).unwrap();
        assert_eq!(load_csv(&p, &schema()).unwrap(), t);
    }

    #[test]
    fn timestamp_formats() {
        assert_eq!(parse_timestamp("1970-01-02"), Some(86400.0));
        assert_eq!(parse_timestamp("1970-01-01T00:01"), Some(60.0));
        assert_eq!(parse_timestamp("1970-01-01T01:00:00+01:00"), Some(0.0));
        assert_eq!(parse_timestamp("12.5"), Some(12.5));
        assert_eq!(parse_timestamp("yesterday"), None);
    }
}
