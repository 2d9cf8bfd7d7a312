//! Atomic file output and lossless grid-function persistence.
//!
//! Grid functions are saved as a JSON header line (geometry + mask hash)
//! followed by CSV rows `i,j,k,value` covering every lattice node in index
//! order. Values print through the shortest round-trip `f64` formatting, so a
//! save/load cycle is bit-exact, including signed zeros and subnormals.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::{GridDomain, GridFunction};
use crate::error::AnisopError;
use crate::Result;

/// Write `bytes` to `path` via a sibling temp file and rename, so readers
/// never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| AnisopError::argument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct GridHeader {
    dim: usize,
    shape: [usize; 3],
    h: f64,
    origin: [f64; 3],
    mask_hash: String,
}

impl GridHeader {
    fn of(dom: &GridDomain) -> Self {
        GridHeader {
            dim: dom.dim(),
            shape: dom.shape(),
            h: dom.spacing(),
            origin: dom.origin(),
            mask_hash: format!("{:016x}", dom.mask_hash()),
        }
    }
}

/// Serialize a grid function (header + all-node CSV).
pub fn grid_function_to_string(f: &GridFunction) -> String {
    let dom = f.domain();
    let header = serde_json::to_string(&GridHeader::of(dom)).expect("header serializes");
    let mut out = String::with_capacity(header.len() + f.values().len() * 24);
    out.push_str(&header);
    out.push('\n');
    out.push_str("i,j,k,v\n");
    for (idx, v) in f.values().iter().enumerate() {
        let (i, j, k) = dom.unflatten(idx);
        writeln!(out, "{i},{j},{k},{v}").expect("string write");
    }
    out
}

/// Parse a grid function saved by [`grid_function_to_string`]; the header must
/// match `dom` exactly (geometry and mask hash).
pub fn grid_function_from_str(dom: &std::sync::Arc<GridDomain>, text: &str) -> Result<GridFunction> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| AnisopError::Mismatch("empty grid-function file".into()))?;
    let header: GridHeader = serde_json::from_str(header_line)?;
    let expect = GridHeader::of(dom);
    if header != expect {
        return Err(AnisopError::Mismatch(format!(
            "grid header mismatch: file has {header:?}, domain expects {expect:?}"
        )));
    }
    match lines.next() {
        Some("i,j,k,v") => {}
        other => {
            return Err(AnisopError::Mismatch(format!(
                "expected CSV header `i,j,k,v`, found {other:?}"
            )))
        }
    }
    let mut values = vec![0.0f64; dom.node_count()];
    let mut filled = vec![false; dom.node_count()];
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let mut next_usize = || -> Result<usize> {
            cols.next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| AnisopError::Mismatch(format!("bad CSV row {}", lineno + 3)))
        };
        let (i, j, k) = (next_usize()?, next_usize()?, next_usize()?);
        let v: f64 = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| AnisopError::Mismatch(format!("bad value on CSV row {}", lineno + 3)))?;
        if cols.next().is_some() {
            return Err(AnisopError::Mismatch(format!("extra column on CSV row {}", lineno + 3)));
        }
        let shape = dom.shape();
        if i >= shape[0] || j >= shape[1] || k >= shape[2] {
            return Err(AnisopError::Mismatch(format!("index out of range on CSV row {}", lineno + 3)));
        }
        let idx = dom.flatten(i, j, k);
        if filled[idx] {
            return Err(AnisopError::Mismatch(format!("duplicate node on CSV row {}", lineno + 3)));
        }
        filled[idx] = true;
        values[idx] = v;
    }
    if filled.iter().any(|f| !f) {
        return Err(AnisopError::Mismatch("grid-function file misses nodes".into()));
    }
    GridFunction::from_values(dom.clone(), values)
}

/// Save a grid function atomically.
pub fn save_grid_function(path: &Path, f: &GridFunction) -> Result<()> {
    atomic_write(path, grid_function_to_string(f).as_bytes())
}

/// Load a grid function, validating the header against `dom`.
pub fn load_grid_function(path: &Path, dom: &std::sync::Arc<GridDomain>) -> Result<GridFunction> {
    let text = fs::read_to_string(path)?;
    grid_function_from_str(dom, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::GridDomain;

    #[test]
    fn round_trip_is_bit_exact() {
        let dom = GridDomain::unit_box(2, 6).unwrap();
        let mut f = GridFunction::from_fn(dom.clone(), |x| (x[0] * 17.3).sin() * 1e-308);
        // exercise signed zero, subnormal, and large values
        f.values_mut()[0] = -0.0;
        f.values_mut()[1] = f64::MIN_POSITIVE / 8.0;
        f.values_mut()[2] = 1.797e308;
        let text = grid_function_to_string(&f);
        let g = grid_function_from_str(&dom, &text).unwrap();
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // serialization itself is reproducible
        assert_eq!(text, grid_function_to_string(&g));
    }

    #[test]
    fn header_mismatch_rejected() {
        let dom = GridDomain::unit_box(2, 6).unwrap();
        let other = GridDomain::unit_box(2, 8).unwrap();
        let f = GridFunction::from_fn_gated(dom, |x| x[0]);
        let text = grid_function_to_string(&f);
        let err = grid_function_from_str(&other, &text).unwrap_err();
        assert!(matches!(err, AnisopError::Mismatch(_)));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("out.txt");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        // no temp file left behind
        let names: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
