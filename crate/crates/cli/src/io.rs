use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tempfile::NamedTempFile;
use trdre::SampleMatrix64;

/// Reads a numeric CSV. Lines starting with `#` are skipped and a first row
/// whose leading token is not a number is taken as a header.
pub fn read_samples(path: &Path) -> Result<SampleMatrix64> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        if k == 0 && record.get(0).map_or(false, |t| t.parse::<f64>().is_err()) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, tok)| {
                tok.parse::<f64>().with_context(|| {
                    format!("{}:{line}: column {}: cannot parse {tok:?} as a number", path.display(), col + 1)
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                bail!(
                    "{}:{line}: expected {} columns, found {}",
                    path.display(),
                    first.len(),
                    row.len()
                );
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    SampleMatrix64::from_rows(&rows).with_context(|| format!("{}: invalid sample matrix", path.display()))
}

/// Collects the bytes of an output file before it is written atomically.
pub struct CsvOut {
    text: String,
}

impl CsvOut {
    /// Starts with a `# config: {...}` comment holding the resolved config.
    pub fn new<C: Serialize>(config: &C, header: &[&str]) -> Result<Self> {
        let mut text = format!("# config: {}\n", serde_json::to_string(config)?);
        if !header.is_empty() {
            text.push_str(&header.join(","));
            text.push('\n');
        }
        Ok(Self { text })
    }

    pub fn row<I, V>(&mut self, values: I)
    where
        I: IntoIterator<Item = V>,
        V: std::fmt::Display,
    {
        let mut first = true;
        for v in values {
            if !first {
                self.text.push(',');
            }
            first = false;
            write!(self.text, "{v}").expect("writing to a String");
        }
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("cannot create a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub fn write_samples<C: Serialize>(path: &Path, config: &C, x: &SampleMatrix64) -> Result<()> {
    let mut out = CsvOut::new(config, &[])?;
    for row in x.view().rows() {
        out.row(row.iter());
    }
    out.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "# made by hand\nx1,x2\n1,2\n3.5, -4\n").unwrap();
        let x = read_samples(&path).unwrap();
        assert_eq!((x.n(), x.d()), (2, 2));
        assert_eq!(x.row(1).to_vec(), vec![3.5, -4.0]);
    }

    #[test]
    fn bad_token_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "1,2\n3,abc\n").unwrap();
        let err = format!("{:#}", read_samples(&path).unwrap_err());
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn round_trip_through_writer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let x = SampleMatrix64::from_rows(&[vec![0.1, -2.0], vec![1e-17, 3.0]]).unwrap();
        write_samples(&path, &serde_json::json!({"seed": 1}), &x).unwrap();
        assert_eq!(read_samples(&path).unwrap(), x);
    }
}
