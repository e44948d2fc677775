//! CSV helpers. Floats are written in shortest round-trip form, so equal
//! values always give equal bytes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

pub fn write<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    crate::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// `l:h` pairs joined by `;`.
pub fn heads_field(heads: &[(usize, usize)]) -> String {
    heads.iter().map(|(l, h)| format!("{l}:{h}")).collect::<Vec<_>>().join(";")
}
