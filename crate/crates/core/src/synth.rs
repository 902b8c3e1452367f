//! Synthetic degradation tables and the table file format.
//!
//! Generated tables stand in for a full pairwise profiling campaign. Each entry
//! combines a baseline contention floor that grows with both workloads' sizes,
//! a cache penalty when the pair alone overflows the LLC, and seeded noise. A
//! final per-axis cumulative maximum makes every table monotone along the grid.
//!
//! Users with measured data skip the generator and load a table file instead:
//!
//! ```text
//! llc_size=6291456,rs_grid=1024;2048;...,fs_grid=1024;...,entries=52900
//! 1024,1024,1024,1024,0.008000
//! ...
//! ```
//!
//! One record per ordered pair `(rs_i, fs_i, rs_j, fs_j, d)` with sizes in bytes,
//! sorted by the four keys, where `d` is the degradation workload i causes on j.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::CLAMP_CEILING;
use crate::error::{Error, Result};
use crate::model::{
    fs_grid, rs_grid, DegradationTable, GridPoint, ServerProfile, FS_GRID_LEN, GRID_POINTS,
    RS_GRID_LEN, TABLE_AXES, TABLE_ENTRIES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub seed: u64,
    /// Degradation per co-runner at the largest grid sizes.
    pub baseline_coefficient: f64,
    /// Added when the pair's combined competing data exceeds the LLC.
    pub cache_penalty: f64,
    /// Upper bound of the uniform noise term; must stay below the baseline.
    pub noise_amplitude: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            seed: 0,
            baseline_coefficient: 0.08,
            cache_penalty: 0.26,
            noise_amplitude: 0.01,
        }
    }
}

impl GeneratorParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.baseline_coefficient >= 0.0
            && self.cache_penalty >= 0.0
            && self.noise_amplitude >= 0.0
            && (self.noise_amplitude < self.baseline_coefficient || self.noise_amplitude == 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "generator parameters out of range: {self:?}"
            )))
        }
    }
}

/// Relative size of a grid point in [0, 1], growing with both rs and fs.
fn size_weight(p: GridPoint) -> f64 {
    let rs = p.rs_index() as f64 / (RS_GRID_LEN - 1) as f64;
    let fs = p.fs_index() as f64 / (FS_GRID_LEN - 1) as f64;
    (rs + fs) / 2.0
}

fn point_competing_bytes(p: GridPoint, llc_size: u64) -> u64 {
    let fs = p.file_size();
    p.request_size() + if fs <= llc_size { fs } else { 0 }
}

/// Whether the pair on its own brings more competing data than the LLC holds.
pub fn pair_overflows_cache(i: GridPoint, j: GridPoint, llc_size: u64) -> bool {
    point_competing_bytes(i, llc_size) + point_competing_bytes(j, llc_size) > llc_size
}

pub fn generate_table(
    profile: &ServerProfile,
    params: &GeneratorParams,
) -> Result<DegradationTable> {
    params.check()?;
    let llc = profile.llc_size;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut entries = Vec::with_capacity(TABLE_ENTRIES);
    for from in GridPoint::all() {
        for on in GridPoint::all() {
            let spread = (size_weight(from) + size_weight(on)) / 2.0;
            let mut d = params.baseline_coefficient * (0.1 + 0.9 * spread);
            if pair_overflows_cache(from, on, llc) {
                d += params.cache_penalty;
            }
            d += rng.gen::<f64>() * params.noise_amplitude;
            entries.push(d);
        }
    }
    enforce_monotone(&mut entries);
    for d in &mut entries {
        *d = d.min(CLAMP_CEILING);
    }
    DegradationTable::new(llc, entries)
}

/// Cumulative maximum along each of the four grid axes.
fn enforce_monotone(entries: &mut [f64]) {
    for (stride, len) in TABLE_AXES {
        for k in 0..entries.len() {
            if (k / stride) % len > 0 {
                entries[k] = entries[k].max(entries[k - stride]);
            }
        }
    }
}

fn format_fraction(d: f64) -> String {
    let mut text = format!("{d}");
    let decimals = match text.find('.') {
        Some(dot) => text.len() - dot - 1,
        None => {
            text.push('.');
            0
        }
    };
    for _ in decimals..6 {
        text.push('0');
    }
    text
}

fn join(values: &[u64]) -> String {
    values
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_table<W: Write>(table: &DegradationTable, writer: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    out.write_record([
        format!("llc_size={}", table.llc_size()),
        format!("rs_grid={}", join(&rs_grid())),
        format!("fs_grid={}", join(&fs_grid())),
        format!("entries={TABLE_ENTRIES}"),
    ])?;
    for (k, &d) in table.entries().iter().enumerate() {
        let from = GridPoint::from_index(k / GRID_POINTS);
        let on = GridPoint::from_index(k % GRID_POINTS);
        out.write_record([
            from.request_size().to_string(),
            from.file_size().to_string(),
            on.request_size().to_string(),
            on.file_size().to_string(),
            format_fraction(d),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_table(table: &DegradationTable, path: impl AsRef<Path>) -> Result<()> {
    write_table(table, BufWriter::new(File::create(path)?))
}

fn header_value<'a>(field: Option<&'a str>, key: &str) -> Result<&'a str> {
    field
        .and_then(|f| f.strip_prefix(key))
        .and_then(|f| f.strip_prefix('='))
        .ok_or_else(|| Error::MalformedTable(format!("header is missing `{key}=`")))
}

fn parse_grid(text: &str, expected: &[u64], name: &str) -> Result<()> {
    let values = text
        .split(';')
        .map(|v| v.trim().parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::MalformedTable(format!("unparsable {name}")))?;
    if values != expected {
        return Err(Error::GridMismatch(format!(
            "{name} is {values:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

pub fn read_table<R: Read>(reader: R) -> Result<DegradationTable> {
    let mut input = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = input.records();
    let header = records
        .next()
        .ok_or_else(|| Error::MalformedTable("empty file".into()))??;
    let llc_size: u64 = header_value(header.get(0), "llc_size")?
        .parse()
        .map_err(|_| Error::MalformedTable("unparsable llc_size".into()))?;
    parse_grid(
        header_value(header.get(1), "rs_grid")?,
        &rs_grid(),
        "rs_grid",
    )?;
    parse_grid(
        header_value(header.get(2), "fs_grid")?,
        &fs_grid(),
        "fs_grid",
    )?;
    let declared: usize = header_value(header.get(3), "entries")?
        .parse()
        .map_err(|_| Error::MalformedTable("unparsable entry count".into()))?;
    if declared != TABLE_ENTRIES {
        return Err(Error::MalformedTable(format!(
            "header declares {declared} entries, expected {TABLE_ENTRIES}"
        )));
    }

    let mut entries = Vec::with_capacity(TABLE_ENTRIES);
    for (k, record) in records.enumerate() {
        let record = record?;
        let line = k + 2;
        if k >= TABLE_ENTRIES {
            return Err(Error::MalformedTable(format!(
                "more than {TABLE_ENTRIES} records"
            )));
        }
        if record.len() != 5 {
            return Err(Error::MalformedTable(format!(
                "line {line}: expected 5 fields, found {}",
                record.len()
            )));
        }
        let from = GridPoint::from_index(k / GRID_POINTS);
        let on = GridPoint::from_index(k % GRID_POINTS);
        let expected = [
            from.request_size(),
            from.file_size(),
            on.request_size(),
            on.file_size(),
        ];
        for (field, want) in record.iter().zip(expected) {
            if field.trim().parse::<u64>().ok() != Some(want) {
                return Err(Error::MalformedTable(format!(
                    "line {line}: keys out of order or off grid"
                )));
            }
        }
        let d: f64 = record[4]
            .trim()
            .parse()
            .map_err(|_| Error::MalformedTable(format!("line {line}: unparsable degradation")))?;
        if !(0.0..1.0).contains(&d) {
            return Err(Error::MalformedTable(format!(
                "line {line}: degradation {d} outside [0, 1)"
            )));
        }
        entries.push(d);
    }
    if entries.len() != TABLE_ENTRIES {
        return Err(Error::MalformedTable(format!(
            "found {} records, expected {TABLE_ENTRIES}",
            entries.len()
        )));
    }
    DegradationTable::new(llc_size, entries)
}

pub fn load_table(path: impl AsRef<Path>) -> Result<DegradationTable> {
    read_table(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KIB, MIB};

    fn m1_table() -> DegradationTable {
        generate_table(
            &ServerProfile::m1("M1"),
            &GeneratorParams::default().with_seed(7),
        )
        .unwrap()
    }

    fn point(rs: u64, fs: u64) -> GridPoint {
        GridPoint::from_sizes(rs, fs).unwrap()
    }

    #[test]
    fn minimal_corner_is_smallest() {
        let t = m1_table();
        let corner = point(KIB, KIB);
        assert_eq!(t.lookup(corner, corner), t.min_entry());
        assert!(t.min_entry() < 0.05);
    }

    #[test]
    fn maximal_corner_is_largest() {
        let t = m1_table();
        let corner = GridPoint::from_index(GRID_POINTS - 1);
        assert_eq!(t.lookup(corner, corner), t.max_entry());
    }

    #[test]
    fn penalty_straddles_the_cache_size() {
        let t = m1_table();
        let llc = 6 * MIB;
        let params = GeneratorParams::default();
        // 4MB+1KB and 2MB+1KB together overflow the 6MB cache by 2KB
        let (a, b) = (point(KIB, 4 * MIB), point(KIB, 2 * MIB));
        assert!(pair_overflows_cache(a, b, llc));
        assert!(t.lookup(a, b) >= params.cache_penalty);
        // one file-size step smaller fits: 4MB+1KB and 1MB+1KB
        let smaller = point(KIB, MIB);
        assert!(!pair_overflows_cache(a, smaller, llc));
        assert!(t.lookup(a, smaller) < params.cache_penalty);
    }

    #[test]
    fn same_seed_same_table() {
        assert_eq!(m1_table(), m1_table());
        let other = generate_table(
            &ServerProfile::m1("M1"),
            &GeneratorParams::default().with_seed(8),
        )
        .unwrap();
        assert_ne!(m1_table(), other);
    }

    #[test]
    fn rejects_noise_above_baseline() {
        let params = GeneratorParams {
            noise_amplitude: 0.2,
            ..GeneratorParams::default()
        };
        assert!(generate_table(&ServerProfile::m1("M1"), &params).is_err());
    }

    #[test]
    fn fraction_formatting_keeps_six_digits() {
        assert_eq!(format_fraction(0.0), "0.000000");
        assert_eq!(format_fraction(0.3), "0.300000");
        assert_eq!(format_fraction(0.12345678), "0.12345678");
    }

    #[test]
    fn round_trip() {
        let t = m1_table();
        let mut buf = Vec::new();
        write_table(&t, &mut buf).unwrap();
        assert_eq!(read_table(buf.as_slice()).unwrap(), t);
    }

    fn written(t: &DegradationTable) -> String {
        let mut buf = Vec::new();
        write_table(t, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn missing_record_is_malformed() {
        let text = written(&DegradationTable::uniform(6 * MIB, 0.1).unwrap());
        let truncated: String = text
            .lines()
            .take(TABLE_ENTRIES)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            read_table(truncated.as_bytes()),
            Err(Error::MalformedTable(_))
        ));
    }

    #[test]
    fn out_of_range_entry_is_malformed() {
        let text = written(&DegradationTable::uniform(6 * MIB, 0.1).unwrap());
        let broken = text.replacen("1024,1024,1024,1024,0.100000", "1024,1024,1024,1024,1.2", 1);
        assert_ne!(broken, text);
        assert!(matches!(
            read_table(broken.as_bytes()),
            Err(Error::MalformedTable(_))
        ));
    }

    #[test]
    fn foreign_grid_is_a_mismatch() {
        let text = written(&DegradationTable::uniform(6 * MIB, 0.1).unwrap());
        let broken = text.replacen("rs_grid=1024;", "rs_grid=512;", 1);
        assert!(matches!(
            read_table(broken.as_bytes()),
            Err(Error::GridMismatch(_))
        ));
    }
}
