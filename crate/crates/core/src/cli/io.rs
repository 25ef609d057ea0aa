//! On-disk formats. Floats are written with 17 significant digits so every
//! file round-trips bit-exactly; JSON and JSONL documents carry `schema` and
//! `schema_version` fields, CSV files open with a `# <schema> v<version>`
//! comment line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PreferenceDataset, PreferencePair};

pub const FORMAT_VERSION: u32 = 1;

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{}", fmt_f64(value))
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// A versioned JSON document wrapping `data`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document<T> {
    pub schema: String,
    pub schema_version: u32,
    pub data: T,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a bare serializable value that already carries its own schema fields.
pub fn write_json_raw<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json_raw<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_document<T: Serialize>(path: &Path, schema: &str, data: &T) -> Result<()> {
    write_json_raw(
        path,
        &Document {
            schema: schema.to_string(),
            schema_version: FORMAT_VERSION,
            data,
        },
    )
}

pub fn read_document<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<T> {
    let doc: Document<T> = read_json_raw(path)?;
    check_schema(path, schema, &doc.schema, doc.schema_version)?;
    Ok(doc.data)
}

fn check_schema(path: &Path, want: &str, got: &str, version: u32) -> Result<()> {
    if got != want || version != FORMAT_VERSION {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("expected schema {want} v{FORMAT_VERSION}, found {got} v{version}"),
        });
    }
    Ok(())
}

pub const DATASET_SCHEMA: &str = "moalign.dataset";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    schema: String,
    schema_version: u32,
    objective: usize,
    pairs: usize,
}

/// One header line, then one pair per line.
pub fn write_dataset(path: &Path, dataset: &PreferenceDataset) -> Result<()> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = DatasetHeader {
        schema: DATASET_SCHEMA.into(),
        schema_version: FORMAT_VERSION,
        objective: dataset.objective(),
        pairs: dataset.len(),
    };
    let mut emit = |line: String| writeln!(out, "{line}").map_err(|e| Error::io(path, e));
    emit(to_json(&header)?)?;
    for p in dataset.pairs() {
        emit(to_json(p)?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<PreferenceDataset> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| malformed("missing header line".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| malformed(format!("header: {e}")))?;
    check_schema(path, DATASET_SCHEMA, &header.schema, header.schema_version)?;
    let mut pairs = Vec::with_capacity(header.pairs);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair = serde_json::from_str(&line).map_err(|e| malformed(format!("line {}: {e}", i + 2)))?;
        pairs.push(pair);
    }
    if pairs.len() != header.pairs {
        return Err(malformed(format!("header declares {} pairs, found {}", header.pairs, pairs.len())));
    }
    PreferenceDataset::new(header.objective, pairs).map_err(|e| malformed(e.to_string()))
}

pub fn write_csv(path: &Path, schema: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    ensure_parent(path)?;
    let mut buf = format!("# {schema} v{FORMAT_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// A parsed CSV file: header and rows as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn read_csv(path: &Path, schema: &str) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let expected = format!("# {schema} v{FORMAT_VERSION}");
    let first = text.lines().next().unwrap_or_default();
    if first.trim_end() != expected {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("expected first line {expected:?}, found {first:?}"),
        });
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table { header, rows })
}
