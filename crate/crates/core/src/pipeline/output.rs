use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Usage(format!("unknown output format {other:?}"))),
        }
    }
}

/// Writes `records` to `<dir>/<name>.<ext>` and returns the path.
pub fn write_records<T: Serialize>(dir: &Path, name: &str, format: OutputFormat, records: &[T]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.{}", format.extension()));
    let file = BufWriter::new(File::create(&path)?);
    match format {
        OutputFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(file);
            for r in records {
                wtr.serialize(r)?;
            }
            wtr.flush()?;
        }
        OutputFormat::Json => write_json_to(file, records)?,
    }
    Ok(path)
}

/// Writes one JSON document to `<dir>/<name>.json`.
pub fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.json"));
    write_json_to(BufWriter::new(File::create(&path)?), value)?;
    Ok(path)
}

fn write_json_to<W: Write, T: Serialize + ?Sized>(mut sink: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, value)?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}
