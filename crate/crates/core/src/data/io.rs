use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{DataError, Dataset};

/// Leading bytes of the raw matrix format: magic, rows (u32 LE), cols (u32 LE),
/// then `rows * cols` f64 LE values in row-major order.
pub const MATRIX_MAGIC: &[u8; 4] = b"CDMX";

#[derive(Debug, Clone, PartialEq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

fn parse_cell(cell: &str, line: u64, column: usize) -> Result<f64, DataError> {
    cell.trim().parse::<f64>().map_err(|_| DataError::NonNumeric {
        line,
        column,
        value: cell.to_string(),
    })
}

/// Reads a rectangular numeric CSV. A first row containing any non-numeric
/// cell is taken as a header. With `num_classes` unset the class count is
/// `max(label) + 1` (at least 2).
pub fn load_csv(path: &Path, label_column: Option<LabelColumn>, num_classes: Option<usize>) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(File::open(path)?));
    let mut records = reader.records();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header: Option<Vec<String>> = None;
    let mut first_line = 1;
    if let Some(first) = records.next() {
        let first = first.map_err(csv_error)?;
        let cells: Vec<String> = first.iter().map(str::to_string).collect();
        if cells.iter().any(|c| c.trim().parse::<f64>().is_err()) {
            header = Some(cells.iter().map(|c| c.trim().to_string()).collect());
            first_line = 2;
        } else {
            rows.push(cells);
        }
    }
    for record in records {
        rows.push(record.map_err(csv_error)?.iter().map(str::to_string).collect());
    }

    let width = header.as_ref().map(Vec::len).or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    let label_idx = match &label_column {
        None => None,
        Some(LabelColumn::Index(i)) if *i < width => Some(*i),
        Some(LabelColumn::Index(i)) => return Err(DataError::MissingColumn(i.to_string())),
        Some(LabelColumn::Name(name)) => Some(
            header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| DataError::MissingColumn(name.clone()))?,
        ),
    };

    let dim = width - usize::from(label_idx.is_some());
    let mut features = Array2::zeros((rows.len(), dim));
    let mut labels = Vec::with_capacity(rows.len());
    for (r, cells) in rows.iter().enumerate() {
        let line = first_line + r as u64;
        if cells.len() != width {
            return Err(DataError::Ragged {
                line,
                expected: width,
                found: cells.len(),
            });
        }
        let mut col = 0;
        for (c, cell) in cells.iter().enumerate() {
            let v = parse_cell(cell, line, c)?;
            if Some(c) == label_idx {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(DataError::Csv {
                        line,
                        message: format!("label {cell:?} is not a non-negative integer"),
                    });
                }
                labels.push(v as usize);
            } else {
                features[[r, col]] = v;
                col += 1;
            }
        }
    }
    let labels = label_idx.map(|_| labels);
    let classes = num_classes.unwrap_or_else(|| labels.as_ref().and_then(|l| l.iter().max()).map_or(2, |&m| (m + 1).max(2)));
    let domain = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv").to_string();
    Dataset::new(features, labels, classes, domain)
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::Csv {
        line,
        message: e.to_string(),
    }
}

/// Writes `x0..x{d-1}[,label]` with a header row.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("x{j}")).collect();
    if dataset.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_error)?;
    for (i, row) in dataset.features().rows().into_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(labels) = dataset.labels() {
            cells.push(labels[i].to_string());
        }
        w.write_record(&cells).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix(matrix: &Array2<f64>, path: &Path) -> Result<(), DataError> {
    let to_u32 = |n: usize| u32::try_from(n).map_err(|_| DataError::BadMatrix(format!("dimension {n} exceeds u32")));
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&to_u32(matrix.nrows())?.to_le_bytes())?;
    w.write_all(&to_u32(matrix.ncols())?.to_le_bytes())?;
    for v in matrix.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>, DataError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != MATRIX_MAGIC {
        return Err(DataError::BadMatrix("missing CDMX header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[12..];
    if payload.len() != rows * cols * 8 {
        return Err(DataError::BadMatrix(format!(
            "{rows}x{cols} needs {} payload bytes, found {}",
            rows * cols * 8,
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| DataError::BadMatrix(e.to_string()))
}

/// Raw matrix file as a dataset; `label_column` names the column holding
/// integer labels, if any.
pub fn load_binary(path: &Path, label_column: Option<usize>, num_classes: Option<usize>) -> Result<Dataset, DataError> {
    let m = read_matrix(path)?;
    let domain = path.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix").to_string();
    let Some(lc) = label_column else {
        return Dataset::new(m, None, num_classes.unwrap_or(2), domain);
    };
    if lc >= m.ncols() {
        return Err(DataError::MissingColumn(lc.to_string()));
    }
    let keep: Vec<usize> = (0..m.ncols()).filter(|&c| c != lc).collect();
    let mut labels = Vec::with_capacity(m.nrows());
    for (r, &v) in m.column(lc).iter().enumerate() {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(DataError::Csv {
                line: r as u64,
                message: format!("label {v} is not a non-negative integer"),
            });
        }
        labels.push(v as usize);
    }
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |&m| (m + 1).max(2)));
    Dataset::new(m.select(ndarray::Axis(1), &keep), Some(labels), classes, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_moons_shift, TwoMoonsParams};

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_rows_with_named_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "f1,f2,y\n0.5,1,0\n2,3.25,1\n-1,0,2\n");
        let d = load_csv(&p, Some(LabelColumn::Name("y".into())), None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.num_classes(), 3);
        assert_eq!(d.labels().unwrap(), &[0, 1, 2]);
        assert_eq!(d.features()[[1, 1]], 3.25);
    }

    #[test]
    fn headerless_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "b.csv", "1,2\n3,4\n");
        let d = load_csv(&p, None, None).unwrap();
        assert_eq!((d.len(), d.dim()), (2, 2));
        assert!(d.labels().is_none());
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.csv", "a,b\n1,2\n");
        let err = load_csv(&p, Some(LabelColumn::Name("label".into())), None).unwrap_err();
        assert!(err.to_string().contains("\"label\""), "{err}");

        let p = write(&dir, "d.csv", "1,2\n3\n");
        assert!(matches!(load_csv(&p, None, None), Err(DataError::Ragged { line: 2, .. })));

        let p = write(&dir, "e.csv", "x,y\n1,2\n3,abc\n");
        assert!(matches!(
            load_csv(&p, None, None),
            Err(DataError::NonNumeric { line: 3, column: 1, .. })
        ));

        let p = write(&dir, "f.csv", "1,0\n2,5\n");
        assert!(matches!(
            load_csv(&p, Some(LabelColumn::Index(1)), Some(3)),
            Err(DataError::LabelOutOfRange { row: 1, .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = TwoMoonsParams {
            n_source: 50,
            n_target: 50,
            ..Default::default()
        };
        let (src, _) = gen_two_moons_shift(&p, 3).unwrap();
        let path = dir.path().join("src.csv");
        write_csv(&src, &path).unwrap();
        let back = load_csv(&path, Some(LabelColumn::Name("label".into())), Some(2)).unwrap();
        assert_eq!(back.labels(), src.labels());
        for (a, b) in back.features().iter().zip(src.features()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn matrix_round_trip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let m = ndarray::array![[1.5, -2.0, 1.0], [0.25, 1e-300, 0.0]];
        let p = dir.path().join("m.bin");
        write_matrix(&m, &p).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
        let d = load_binary(&p, Some(2), None).unwrap();
        assert_eq!(d.labels().unwrap(), &[1, 0]);
        assert_eq!(d.dim(), 2);
        let bad = write(&dir, "bad.bin", "nope nope nope");
        assert!(matches!(read_matrix(&bad), Err(DataError::BadMatrix(_))));
    }
}
