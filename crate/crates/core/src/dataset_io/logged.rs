use std::io::{Read, Write};
use std::path::Path;

use super::{csv_error, format_float, parse_cell};
use crate::data::{LoggedDataset, LoggedRow};
use crate::error::{Error, Result};

fn header(context_dim: usize) -> Vec<String> {
    (0..context_dim)
        .map(|k| format!("context_{k}"))
        .chain(["action_id", "reward", "propensity"].map(String::from))
        .collect()
}

/// Writes `context_0..k, action_id, reward, propensity`. Cached marginals are
/// not serialized.
pub fn write_logged_to<W: Write>(data: &LoggedDataset, out: W, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(data.context_dim))
        .map_err(|e| csv_error(path, e))?;
    for row in &data.rows {
        let record = row.context.iter().map(|&v| format_float(v)).chain([
            row.action.to_string(),
            format_float(row.reward),
            format_float(row.propensity),
        ]);
        w.write_record(record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_logged_csv(data: &LoggedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_logged_to(data, std::io::BufWriter::new(file), path)
}

/// `path` only labels error messages.
pub fn read_logged_from<R: Read>(input: R, path: &Path) -> Result<LoggedDataset> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let names: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if names.len() < 3 {
        return Err(Error::parse(
            path,
            1,
            "header needs action_id, reward and propensity columns",
        ));
    }
    let context_dim = names.len() - 3;
    let expected = header(context_dim);
    if let Some((k, (got, want))) = names.iter().zip(&expected).enumerate().find(|(_, (g, w))| g != w) {
        return Err(Error::parse(
            path,
            1,
            format!("column {k} is `{got}`, expected `{want}`"),
        ));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cell = |k: usize| &record[k];
        let context = (0..context_dim)
            .map(|k| parse_cell(path, line, &expected[k], cell(k)))
            .collect::<Result<Vec<f64>>>()?;
        let propensity: f64 = parse_cell(path, line, "propensity", cell(context_dim + 2))?;
        if !(propensity > 0.0 && propensity <= 1.0) {
            return Err(Error::parse(
                path,
                line,
                format!("propensity {propensity} must lie in (0, 1]"),
            ));
        }
        rows.push(LoggedRow {
            context,
            action: parse_cell(path, line, "action_id", cell(context_dim))?,
            reward: parse_cell(path, line, "reward", cell(context_dim + 1))?,
            propensity,
            marginals: None,
        });
    }
    LoggedDataset::new(context_dim, rows)
}

pub fn read_logged_csv(path: impl AsRef<Path>) -> Result<LoggedDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_logged_from(std::io::BufReader::new(file), path)
}
