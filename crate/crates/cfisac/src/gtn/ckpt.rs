//! Text tensor archive.
//!
//! ```text
//! cfisac-tensors v1
//! <count>
//! <name> <rows> <cols>
//! <row-major values, space separated>
//! ```
//! Values use the shortest representation that round-trips.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::model::ParamStore;
use super::tape::Tensor;

pub const HEADER: &str = "cfisac-tensors v1";

pub fn to_string(store: &ParamStore) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER}\n{}", store.len());
    for (name, t) in store.iter() {
        let _ = writeln!(s, "{name} {} {}", t.nrows(), t.ncols());
        let vals: Vec<String> = (0..t.nrows()).flat_map(|r| (0..t.ncols()).map(move |c| (r, c))).map(|(r, c)| format!("{:e}", t[(r, c)])).collect();
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    s
}

pub fn from_str(text: &str) -> Result<ParamStore> {
    let bad = |m: &str| Error::Config(format!("checkpoint: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad("missing or unsupported header"));
    }
    let count: usize = lines.next().and_then(|l| l.trim().parse().ok()).ok_or_else(|| bad("missing tensor count"))?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let head = lines.next().ok_or_else(|| bad("truncated"))?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        let [name, r, c] = parts[..] else { return Err(bad("malformed tensor header")) };
        let (r, c): (usize, usize) = (r.parse().map_err(|_| bad("rows"))?, c.parse().map_err(|_| bad("cols"))?);
        let body = lines.next().ok_or_else(|| bad("truncated"))?;
        let vals: Vec<f64> = body.split_whitespace().map(|v| v.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("value"))?;
        if vals.len() != r * c {
            return Err(bad(&format!("{name}: expected {} values, found {}", r * c, vals.len())));
        }
        store.push(name, Tensor::from_row_slice(r, c, &vals));
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    from_str(&std::fs::read_to_string(path)?)
}
