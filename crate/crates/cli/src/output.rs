use serde::Serialize;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

pub const SCHEMA: u32 = 1;

/// Shortest round-trip decimal; `-inf` marks the maximum of an empty measure.
pub fn num(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else {
        format!("{x:?}")
    }
}

pub fn open(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// CSV writer that starts with the schema line and the resolved config.
pub struct Csv {
    out: Box<dyn Write>,
}

impl Csv {
    pub fn new<C: Serialize>(mut out: Box<dyn Write>, config: &C, columns: &[&str]) -> io::Result<Self> {
        writeln!(out, "# schema={SCHEMA}")?;
        writeln!(
            out,
            "# config={}",
            serde_json::to_string(config).map_err(io::Error::other)?
        )?;
        writeln!(out, "{}", columns.join(","))?;
        Ok(Self { out })
    }

    pub fn row(&mut self, fields: &[String]) -> io::Result<()> {
        writeln!(self.out, "{}", fields.join(","))
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}
