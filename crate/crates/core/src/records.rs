//! Delimited text records for critical points and sweep paths.

use num_complex::Complex64;

use crate::continuation::SweepPath;
use crate::critical::CriticalPoint;
use crate::error::{Error, Result};
use crate::model::OccupationMap;

pub const CRITICAL_HEADER: [&str; 10] =
    ["level", "g_c", "m_k", "energy", "e_noncluster", "chi", "origin_noncluster", "members", "origin", "occupation"];

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

fn complex_text(z: &Complex64) -> String {
    format!("{}:{}", z.re, z.im)
}

fn bad(row: usize, field: &str, text: &str) -> Error {
    Error::Record(format!("row {row}: cannot parse {field} from `{text}`"))
}

fn split<T>(text: &str, row: usize, field: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(';').map(|t| f(t.trim()).ok_or_else(|| bad(row, field, t))).collect()
}

fn parse_complex(text: &str) -> Option<Complex64> {
    let (re, im) = text.split_once(':')?;
    Some(Complex64::new(re.parse().ok()?, im.parse().ok()?))
}

/// Critical points as CSV with full round-trip precision; `level` is 1-based.
pub fn write_critical_records(points: &[CriticalPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Record(e.to_string());
    w.write_record(CRITICAL_HEADER).map_err(io)?;
    for p in points {
        w.write_record([
            (p.k + 1).to_string(),
            p.g_c.to_string(),
            p.m_k.to_string(),
            p.energy.to_string(),
            join(&p.e_noncluster, complex_text),
            join(&p.chi, f64::to_string),
            join(&p.origin_noncluster, usize::to_string),
            join(&p.members, usize::to_string),
            join(&p.origin, usize::to_string),
            p.occupation_label.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Record(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Record(e.to_string()))
}

/// Inverse of [`write_critical_records`].
pub fn read_critical_records(text: &str) -> Result<Vec<CriticalPoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Record(e.to_string()))?.clone();
    if header.iter().ne(CRITICAL_HEADER) {
        return Err(Error::Record("unexpected critical record header".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Record(e.to_string()))?;
        let f = |j: usize| rec.get(j).unwrap_or("").trim();
        let level: usize = f(0).parse().map_err(|_| bad(row, "level", f(0)))?;
        if level == 0 {
            return Err(bad(row, "level", f(0)));
        }
        let point = CriticalPoint {
            k: level - 1,
            g_c: f(1).parse().map_err(|_| bad(row, "g_c", f(1)))?,
            m_k: f(2).parse().map_err(|_| bad(row, "m_k", f(2)))?,
            energy: f(3).parse().map_err(|_| bad(row, "energy", f(3)))?,
            e_noncluster: split(f(4), row, "e_noncluster", parse_complex)?,
            chi: split(f(5), row, "chi", |t| t.parse().ok())?,
            origin_noncluster: split(f(6), row, "origin_noncluster", |t| t.parse().ok())?,
            members: split(f(7), row, "members", |t| t.parse().ok())?,
            origin: split(f(8), row, "origin", |t| t.parse().ok())?,
            occupation_label: f(9).parse::<OccupationMap>().map_err(|_| bad(row, "occupation", f(9)))?,
        };
        if point.origin.len() != point.num_pairs() || point.origin_noncluster.len() != point.e_noncluster.len() {
            return Err(Error::Record(format!("row {row}: inconsistent slot counts")));
        }
        out.push(point);
    }
    Ok(out)
}

/// Short stable hash of an occupation (FNV-1a, 32 bit, hex).
pub fn branch_hash(branch: &OccupationMap) -> String {
    let mut h: u32 = 0x811c_9dc5;
    for byte in branch.to_string().bytes() {
        h ^= u32::from(byte);
        h = h.wrapping_mul(0x0100_0193);
    }
    format!("{h:08x}")
}

/// `<label>_<branch-hash>_<sign>.csv`, sign being `neg` or `pos`.
pub fn path_file_name(label: &str, branch: &OccupationMap, g_target: f64) -> String {
    let sign = if g_target < 0.0 { "neg" } else { "pos" };
    format!("{label}_{}_{sign}.csv", branch_hash(branch))
}

/// Path samples as CSV: `g`, `E`, then real and imaginary parts per slot.
pub fn write_path_csv(path: &SweepPath) -> Result<String> {
    let n = path.samples.first().map_or(0, |s| s.state.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Record(e.to_string());
    let mut header = vec!["g".to_string(), "E".to_string()];
    for a in 1..=n {
        header.push(format!("re_e{a}"));
        header.push(format!("im_e{a}"));
    }
    w.write_record(&header).map_err(io)?;
    for s in &path.samples {
        let mut row = vec![s.g.to_string(), s.energy.to_string()];
        for z in &s.state.values {
            row.push(z.re.to_string());
            row.push(z.im.to_string());
        }
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Record(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Record(e.to_string()))
}

/// Header plus numeric rows as CSV.
pub fn write_table_csv(header: &[String], rows: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Record(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Record(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Record(e.to_string()))
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e3f64..1e3, proptest::num::f64::NORMAL | proptest::num::f64::ZERO]
    }

    fn point() -> impl Strategy<Value = CriticalPoint> {
        (0usize..9, 1usize..5, 0usize..5)
            .prop_flat_map(|(k, m_k, n_nc)| {
                (
                    Just((k, m_k)),
                    finite(),
                    finite(),
                    proptest::collection::vec((finite(), finite()), n_nc),
                    proptest::collection::vec(finite(), m_k),
                    proptest::collection::vec(0usize..9, n_nc),
                    proptest::collection::vec(0usize..9, m_k),
                    proptest::collection::vec(0usize..9, m_k + n_nc),
                    proptest::collection::vec(0usize..20, 1..10),
                )
            })
            .prop_map(|((k, m_k), g_c, energy, e, chi, origin_nc, members, origin, occ)| CriticalPoint {
                g_c,
                k,
                m_k,
                e_noncluster: e.into_iter().map(|(re, im)| Complex64::new(re, im)).collect(),
                origin_noncluster: origin_nc,
                members,
                origin,
                chi,
                energy,
                occupation_label: OccupationMap::new(occ),
            })
    }

    proptest! {
        #[test]
        fn critical_records_roundtrip(points in proptest::collection::vec(point(), 0..5)) {
            let text = write_critical_records(&points).unwrap();
            prop_assert_eq!(read_critical_records(&text).unwrap(), points);
        }
    }
}
