//! CSV time series: ingestion with located errors, and export.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Which columns hold the series. With no `value_columns`, every column
/// except the time column is used, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvSchema {
    pub time_column: Option<String>,
    pub value_columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub names: Vec<String>,
    pub times: Option<Vec<String>>,
    pub values: Vec<DVector<f64>>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

fn data_err(row: Option<usize>, column: Option<usize>, message: impl Into<String>) -> Error {
    Error::Data {
        row,
        column,
        message: message.into(),
    }
}

/// Reads a header-plus-rows CSV. Rows and columns in errors are 1-based and
/// count the header as row 1. Nothing is imputed.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Series> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| data_err(Some(1), None, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(data_err(None, None, "empty file"));
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(Some(1), None, format!("no column named `{name}`")))
    };
    let time_idx = schema.time_column.as_deref().map(find).transpose()?;
    let value_idx: Vec<usize> = match &schema.value_columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&i| Some(i) != time_idx).collect(),
    };
    if value_idx.is_empty() {
        return Err(data_err(Some(1), None, "no value columns"));
    }

    let mut values = Vec::new();
    let mut times = time_idx.map(|_| Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| data_err(Some(row), None, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(data_err(
                Some(row),
                None,
                format!("{} fields, header has {}", rec.len(), header.len()),
            ));
        }
        let mut v = DVector::zeros(value_idx.len());
        for (j, &c) in value_idx.iter().enumerate() {
            let cell = &rec[c];
            if cell.is_empty() {
                return Err(data_err(Some(row), Some(c + 1), "missing value"));
            }
            v[j] = cell
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| data_err(Some(row), Some(c + 1), format!("not a finite number: `{cell}`")))?;
        }
        if let (Some(ts), Some(i)) = (times.as_mut(), time_idx) {
            ts.push(rec[i].to_string());
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(data_err(None, None, "no data rows"));
    }
    Ok(Series {
        names: value_idx.iter().map(|&i| header[i].clone()).collect(),
        times,
        values,
    })
}

/// Writes `t` plus one column per name. Floats use the shortest decimal that
/// reads back to the same value.
pub fn export_csv(path: &Path, names: &[String], values: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for (t, v) in values.iter().enumerate() {
        if v.len() != names.len() {
            return Err(Error::dim(format!("row {} has {} values for {} names", t + 1, v.len(), names.len())));
        }
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    write_atomic(path, &bytes)
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, schema: &CsvSchema) -> Result<Series> {
        read_csv(text.as_bytes(), schema)
    }

    #[test]
    fn three_rows_in_file_order() {
        let s = read("a,b\n1,2\n3,4\n5,6.5\n", &CsvSchema::default()).unwrap();
        assert_eq!(s.names, vec!["a", "b"]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.values[2], DVector::from_vec(vec![5.0, 6.5]));
        assert!(s.times.is_none());
    }

    #[test]
    fn time_and_selected_columns() {
        let schema = CsvSchema {
            time_column: Some("q".into()),
            value_columns: Some(vec!["y".into()]),
        };
        let s = read("q,x,y\n1947Q1,1,2\n1947Q2,3,4\n", &schema).unwrap();
        assert_eq!(s.times.unwrap(), vec!["1947Q1", "1947Q2"]);
        assert_eq!(s.values[1], DVector::from_vec(vec![4.0]));
    }

    #[test]
    fn errors_carry_row_and_column() {
        let d = CsvSchema::default();
        match read("a,b\n1,2\n3,\n", &d) {
            Err(Error::Data { row, column, .. }) => assert_eq!((row, column), (Some(3), Some(2))),
            other => panic!("{other:?}"),
        }
        match read("a,b\n1,x\n", &d) {
            Err(Error::Data { row, column, .. }) => assert_eq!((row, column), (Some(2), Some(2))),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read("a,b\n1,2,3\n", &d), Err(Error::Data { row: Some(2), .. })));
        assert!(matches!(read("", &d), Err(Error::Data { .. })));
        assert!(matches!(read("a,b\n", &d), Err(Error::Data { .. })));
        let e = read("a,b\n1,2\n", &CsvSchema {
            time_column: Some("t".into()),
            value_columns: None,
        })
        .unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn export_round_trips_bit_for_bit() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let values: Vec<DVector<f64>> = (0..50)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1e3..1e3) * rng.random::<f64>().powi(7)))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let names = vec!["y1".to_string(), "y2".to_string()];
        export_csv(&path, &names, &values).unwrap();
        let schema = CsvSchema {
            time_column: Some("t".into()),
            value_columns: None,
        };
        let s = ingest_csv(&path, &schema).unwrap();
        assert_eq!(s.names, names);
        for (a, b) in s.values.iter().zip(&values) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
