//! File formats: logged bandit feedback, real interaction data in a
//! users/items/rewards layout, and the semi-synthetic environment built on it.

mod fixture;
mod logged;
mod real;
mod semi_synth;

pub use fixture::{write_fixture, FIXTURE_ITEMS, FIXTURE_USERS};
pub use logged::{read_logged_csv, read_logged_from, write_logged_csv, write_logged_to};
pub use real::{load_real, RealDataPaths, RealDatasetSpec, RealLoadOptions};
pub use semi_synth::{build_semi_synth_env, SemiSynthConfig, SemiSynthEnv};

use std::path::Path;

use crate::error::Error;

/// Float text with 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::parse(path, line, format!("{kind:?}")),
    }
}

pub(crate) fn reader(path: &Path) -> crate::error::Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

pub(crate) fn parse_cell<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    column: &str,
    cell: &str,
) -> crate::error::Result<T> {
    cell.parse()
        .map_err(|_| Error::parse(path, line, format!("column `{column}`: cannot parse `{cell}`")))
}
