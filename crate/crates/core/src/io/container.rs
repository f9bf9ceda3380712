//! Binary matrix container.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `CDZM`                       |
//! | 4      | 2    | version (u16, currently 1)         |
//! | 6      | 4    | rows (u32)                         |
//! | 10     | 4    | cols (u32)                         |
//! | 14     | 1    | dtype tag (u8, 0 = f64 LE)         |
//! | 15     | 8·rows·cols | payload, row-major          |
//!
//! Files ending in `.csv` are read and written as CSV instead: a first line
//! `rows,cols` followed by one comma-separated line per matrix row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DataError;
use crate::linalg::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"CDZM";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 0;
pub const HEADER_LEN: usize = 15;

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a matrix, choosing the format by file extension.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix, DataError> {
    let path = path.as_ref();
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        parse_csv(&text, path)
    } else {
        let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
        decode(&bytes, path)
    }
}

/// Writes a matrix, choosing the format by file extension.
pub fn write_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<(), DataError> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        to_csv(m).into_bytes()
    } else {
        encode(m, path)?
    };
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn encode(m: &DenseMatrix, path: &Path) -> Result<Vec<u8>, DataError> {
    let overflow = || DataError::DimensionOverflow {
        path: path.to_path_buf(),
        rows: m.nrows() as u64,
        cols: m.ncols() as u64,
    };
    let rows = u32::try_from(m.nrows()).map_err(|_| overflow())?;
    let cols = u32::try_from(m.ncols()).map_err(|_| overflow())?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.push(DTYPE_F64);
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<DenseMatrix, DataError> {
    let path_buf = || path.to_path_buf();
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(DataError::BadMagic { path: path_buf() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::TruncatedPayload {
            path: path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(DataError::UnsupportedVersion {
            path: path_buf(),
            version,
        });
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as u64;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as u64;
    let tag = bytes[14];
    if tag != DTYPE_F64 {
        return Err(DataError::UnsupportedDtype {
            path: path_buf(),
            tag,
        });
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .filter(|n| usize::try_from(*n).is_ok())
        .ok_or(DataError::DimensionOverflow {
            path: path_buf(),
            rows,
            cols,
        })?;
    let payload = &bytes[HEADER_LEN..];
    let found = payload.len() as u64;
    if found < expected {
        return Err(DataError::TruncatedPayload {
            path: path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(DataError::TrailingBytes {
            path: path_buf(),
            extra: found - expected,
        });
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let mut values = Vec::with_capacity(rows * cols);
    for (k, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(DataError::NonFiniteValue {
                path: path_buf(),
                row: k / cols,
                col: k % cols,
            });
        }
        values.push(v);
    }
    Ok(DenseMatrix::from_shape_vec((rows, cols), values).expect("length checked above"))
}

pub fn to_csv(m: &DenseMatrix) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{},{}", m.nrows(), m.ncols());
    for row in m.rows() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                s.push(',');
            }
            first = false;
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str, path: &Path) -> Result<DenseMatrix, DataError> {
    let parse_err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing `rows,cols` header".into()))?;
    let dims: Vec<&str> = header.split(',').map(str::trim).collect();
    if dims.len() != 2 {
        return Err(parse_err(hline, format!("expected `rows,cols`, got `{header}`")));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(hline, format!("bad dimension `{s}`")))
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    let total = rows.checked_mul(cols).ok_or(DataError::DimensionOverflow {
        path: path.to_path_buf(),
        rows: rows as u64,
        cols: cols as u64,
    })?;
    if cols == 0 {
        if let Some((lineno, _)) = lines.next() {
            return Err(parse_err(lineno, "rows of a zero-column matrix must be empty".into()));
        }
        return Ok(DenseMatrix::zeros((rows, 0)));
    }
    let mut values = Vec::with_capacity(total);
    let mut row = 0;
    for (lineno, line) in lines {
        if row == rows {
            return Err(parse_err(lineno, format!("more than the declared {rows} rows")));
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols {
            return Err(parse_err(
                lineno,
                format!("expected {cols} values, found {}", fields.len()),
            ));
        }
        for (col, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad number `{f}`")))?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue {
                    path: path.to_path_buf(),
                    row,
                    col,
                });
            }
            values.push(v);
        }
        row += 1;
    }
    if row != rows {
        return Err(parse_err(
            text.lines().count(),
            format!("declared {rows} rows but found {row}"),
        ));
    }
    Ok(DenseMatrix::from_shape_vec((rows, cols), values).expect("length checked above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cdzm");
        let m = seeded_matrix(7, 3, 1);
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.dim(), (7, 3));
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(fs::metadata(&path).unwrap().len(), 15 + 7 * 3 * 8);
    }

    #[test]
    fn header_layout() {
        let m = array![[1.0, 2.0]];
        let bytes = encode(&m, Path::new("x")).unwrap();
        assert_eq!(&bytes[..4], b"CDZM");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[1, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[2, 0, 0, 0]);
        assert_eq!(bytes[14], 0);
        assert_eq!(&bytes[15..23], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let m = seeded_matrix(4, 4, 2);
        let bytes = encode(&m, Path::new("x")).unwrap();
        let err = decode(&bytes[..bytes.len() - 3], Path::new("t.cdzm")).unwrap_err();
        assert!(matches!(err, DataError::TruncatedPayload { expected: 128, found: 125, .. }));
        let err = decode(&bytes[..9], Path::new("t.cdzm")).unwrap_err();
        assert!(matches!(err, DataError::TruncatedPayload { .. }));
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        assert!(matches!(
            decode(b"NOPE\x01\x00", Path::new("x")),
            Err(DataError::BadMagic { .. })
        ));
        let mut bytes = encode(&array![[1.0]], Path::new("x")).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode(&bytes, Path::new("x")),
            Err(DataError::TrailingBytes { extra: 1, .. })
        ));
    }

    #[test]
    fn oversized_dimensions_overflow() {
        let mut bytes = encode(&array![[1.0]], Path::new("x")).unwrap();
        bytes[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        let err = decode(&bytes, Path::new("x")).unwrap_err();
        // u32::MAX² · 8 still fits a u64 on 64-bit hosts, in which case the
        // payload is reported as truncated instead.
        assert!(matches!(
            err,
            DataError::DimensionOverflow { .. } | DataError::TruncatedPayload { .. }
        ));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = encode(&array![[1.0, 2.0], [3.0, 4.0]], Path::new("x")).unwrap();
        bytes[15 + 3 * 8..15 + 4 * 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            decode(&bytes, Path::new("x")),
            Err(DataError::NonFiniteValue { row: 1, col: 1, .. })
        ));
    }

    #[test]
    fn csv_nan_names_position() {
        let err = parse_csv("2,2\n1,2\n3,NaN\n", Path::new("a.csv")).unwrap_err();
        assert!(matches!(err, DataError::NonFiniteValue { row: 1, col: 1, .. }));
        assert!(err.to_string().contains("row 1, column 1"));
    }

    #[test]
    fn csv_shape_errors() {
        assert!(parse_csv("2,2\n1,2\n", Path::new("a.csv")).is_err());
        assert!(parse_csv("1,2\n1,2,3\n", Path::new("a.csv")).is_err());
        assert!(parse_csv("1,2\n1,x\n", Path::new("a.csv")).is_err());
        assert!(parse_csv("", Path::new("a.csv")).is_err());
    }

    #[test]
    fn csv_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = seeded_matrix(5, 2, 3);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
        assert!(fs::read_to_string(&path).unwrap().starts_with("5,2\n"));
    }

    proptest! {
        #[test]
        fn container_round_trip(rows in 0usize..9, cols in 0usize..9, seed in any::<u64>()) {
            let m = seeded_matrix(rows, cols, seed);
            let bytes = encode(&m, Path::new("p")).unwrap();
            let back = decode(&bytes, Path::new("p")).unwrap();
            prop_assert_eq!(back.dim(), m.dim());
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            let csv = parse_csv(&to_csv(&m), Path::new("p.csv")).unwrap();
            prop_assert_eq!(csv, m);
        }
    }
}
