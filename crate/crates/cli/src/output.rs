//! CSV rendering and atomic file writes.
//!
//! Floats use Rust's shortest round-trip formatting (`{:?}`), so identical
//! runs produce identical bytes and re-parsing recovers the exact values.
//! Channel, token and attention indices are 1-based.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use s6_dynamics::dynamics::TrajectoryRecord;

use crate::CliError;

/// `t,x_1,...,x_L` for one channel; for several channels, one block per
/// channel under the header `t,ch,x_1,...,x_L`.
pub fn trajectory_csv(record: &TrajectoryRecord) -> String {
    let first = &record.states[0];
    let (channels, len) = (first.channels(), first.len());
    let mut out = String::from("t");
    if channels > 1 {
        out.push_str(",ch");
    }
    for l in 1..=len {
        write!(out, ",x_{l}").unwrap();
    }
    out.push('\n');
    for d in 0..channels {
        for (t, state) in record.times.iter().zip(&record.states) {
            write!(out, "{t:?}").unwrap();
            if channels > 1 {
                write!(out, ",{}", d + 1).unwrap();
            }
            for v in state.channel(d) {
                write!(out, ",{v:?}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// `t,ch,l,j,P` for every lower-triangular entry at every snapshot.
pub fn attention_csv(record: &TrajectoryRecord) -> Option<String> {
    let attention = record.attention.as_ref()?;
    let mut out = String::from("t,ch,l,j,P\n");
    for (t, p) in record.times.iter().zip(attention) {
        for d in 0..p.channels() {
            for l in 0..p.len() {
                for j in 0..=l {
                    writeln!(out, "{t:?},{},{},{},{:?}", d + 1, l + 1, j + 1, p.get(d, l, j))
                        .unwrap();
                }
            }
        }
    }
    Some(out)
}

/// Writes `contents` to `dir/name` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Output(format!("writing {name}: {e}"));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(dir.join(name)).map_err(|e| io(e.error))?;
    Ok(())
}
