//! CSV ingestion.
//!
//! Tick files: `t_ms,leg_id,mid[,bid,ask,half_spread,depth_200bps,volume]`.
//! `leg_id` may be omitted, in which case the file stem names the leg.
//! Resolutions: `leg_id,tau_ms,outcome`. NegRisk groups: `group_id,leg_id`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::model::{
    LegId, LegSeries, MarketData, NegRiskGroup, Outcome, ProbabilityPoint, ResolutionRecord, TimeMs,
};

use super::IoError;

pub const RESOLUTIONS_FILE: &str = "resolutions.csv";
pub const NEGRISK_FILE: &str = "negrisk.csv";

const TICK_COLUMNS: [&str; 8] = [
    "t_ms",
    "leg_id",
    "mid",
    "bid",
    "ask",
    "half_spread",
    "depth_200bps",
    "volume",
];

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_err(path: &Path, row: usize, e: csv::Error) -> IoError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::io(path, source),
        _ => IoError::SchemaMismatch {
            path: path.to_path_buf(),
            row,
            column: "*".into(),
        },
    }
}

fn header_index(
    path: &Path,
    headers: &csv::StringRecord,
    allowed: &[&str],
) -> Result<BTreeMap<String, usize>, IoError> {
    let mut idx = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if !allowed.contains(&h) || idx.insert(h.to_string(), i).is_some() {
            return Err(IoError::SchemaMismatch {
                path: path.to_path_buf(),
                row: 0,
                column: h.to_string(),
            });
        }
    }
    Ok(idx)
}

fn require_column(path: &Path, idx: &BTreeMap<String, usize>, name: &str) -> Result<usize, IoError> {
    idx.get(name).copied().ok_or_else(|| IoError::SchemaMismatch {
        path: path.to_path_buf(),
        row: 0,
        column: name.to_string(),
    })
}

fn field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    row: usize,
    col: usize,
    name: &str,
) -> Result<T, IoError> {
    rec.get(col)
        .and_then(|s| s.parse::<T>().ok())
        .ok_or_else(|| IoError::SchemaMismatch {
            path: path.to_path_buf(),
            row,
            column: name.to_string(),
        })
}

#[derive(Default)]
struct Builder {
    points: Vec<ProbabilityPoint>,
    optional: [Option<Vec<f64>>; 3],
}

/// Loads every leg of one tick file. Timestamps must increase strictly per
/// leg; probabilities must lie in `[0, 1]`.
pub fn load_leg_series(path: impl AsRef<Path>) -> Result<Vec<LegSeries>, IoError> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, 0, e))?.clone();
    let idx = header_index(path, &headers, &TICK_COLUMNS)?;
    let t_col = require_column(path, &idx, "t_ms")?;
    let mid_col = require_column(path, &idx, "mid")?;
    let leg_col = idx.get("leg_id").copied();
    let opt_cols: Vec<(usize, Option<usize>)> = ["half_spread", "depth_200bps", "volume"]
        .iter()
        .enumerate()
        .map(|(k, n)| (k, idx.get(*n).copied()))
        .collect();
    let bid_ask = match (idx.get("bid"), idx.get("ask")) {
        (Some(&b), Some(&a)) => Some((b, a)),
        (None, None) => None,
        (b, _) => {
            return Err(IoError::SchemaMismatch {
                path: path.to_path_buf(),
                row: 0,
                column: if b.is_none() { "bid" } else { "ask" }.into(),
            })
        }
    };
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut legs: BTreeMap<String, Builder> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| csv_err(path, row, e))?;
        let leg = match leg_col {
            Some(c) => {
                let s = rec.get(c).unwrap_or("");
                if s.is_empty() {
                    return Err(IoError::SchemaMismatch {
                        path: path.to_path_buf(),
                        row,
                        column: "leg_id".into(),
                    });
                }
                s.to_string()
            }
            None => stem.clone(),
        };
        let t: TimeMs = field(path, &rec, row, t_col, "t_ms")?;
        let mid: f64 = field(path, &rec, row, mid_col, "mid")?;
        if !(0.0..=1.0).contains(&mid) {
            return Err(IoError::BoundViolation {
                path: path.to_path_buf(),
                row,
                value: mid,
            });
        }
        let b = legs.entry(leg).or_default();
        if b.points.last().is_some_and(|p| p.time >= t) {
            return Err(IoError::SchemaMismatch {
                path: path.to_path_buf(),
                row,
                column: "t_ms".into(),
            });
        }
        b.points.push(ProbabilityPoint::new(t, mid));
        for &(slot, col) in &opt_cols {
            let value = match (col, slot, bid_ask) {
                (Some(c), _, _) => Some(field::<f64>(path, &rec, row, c, TICK_NAMES[slot])?),
                (None, 0, Some((bc, ac))) => {
                    let bid: f64 = field(path, &rec, row, bc, "bid")?;
                    let ask: f64 = field(path, &rec, row, ac, "ask")?;
                    Some((ask - bid) / 2.0)
                }
                _ => None,
            };
            if let Some(v) = value {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(IoError::SchemaMismatch {
                        path: path.to_path_buf(),
                        row,
                        column: TICK_NAMES[slot].into(),
                    });
                }
                b.optional[slot].get_or_insert_with(Vec::new).push(v);
            }
        }
    }
    Ok(legs
        .into_iter()
        .map(|(id, b)| {
            let [half_spread, depth_200bps, volume] = b.optional;
            LegSeries {
                half_spread,
                depth_200bps,
                volume,
                ..LegSeries::new(id, b.points)
            }
        })
        .collect())
}

const TICK_NAMES: [&str; 3] = ["half_spread", "depth_200bps", "volume"];

/// One resolution record per leg.
pub fn load_resolutions(path: impl AsRef<Path>) -> Result<BTreeMap<LegId, ResolutionRecord>, IoError> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, 0, e))?.clone();
    let idx = header_index(path, &headers, &["leg_id", "tau_ms", "outcome"])?;
    let (lc, tc, oc) = (
        require_column(path, &idx, "leg_id")?,
        require_column(path, &idx, "tau_ms")?,
        require_column(path, &idx, "outcome")?,
    );
    let mut out = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| csv_err(path, row, e))?;
        let leg: String = field(path, &rec, row, lc, "leg_id")?;
        if leg.is_empty() {
            return Err(IoError::SchemaMismatch {
                path: path.to_path_buf(),
                row,
                column: "leg_id".into(),
            });
        }
        let tau: TimeMs = field(path, &rec, row, tc, "tau_ms")?;
        let raw = rec.get(oc).unwrap_or("");
        let outcome = match raw.parse::<f64>() {
            Ok(0.0) => Outcome::No,
            Ok(1.0) => Outcome::Yes,
            _ => {
                return Err(IoError::OutcomeNotBinary {
                    path: path.to_path_buf(),
                    row,
                    value: raw.to_string(),
                })
            }
        };
        if out
            .insert(LegId::new(leg.clone()), ResolutionRecord { tau, outcome })
            .is_some()
        {
            return Err(IoError::DuplicateLeg {
                path: path.to_path_buf(),
                leg,
            });
        }
    }
    Ok(out)
}

/// NegRisk groups, ordered by group id; members keep file order.
pub fn load_negrisk(path: impl AsRef<Path>) -> Result<Vec<NegRiskGroup>, IoError> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, 0, e))?.clone();
    let idx = header_index(path, &headers, &["group_id", "leg_id"])?;
    let (gc, lc) = (
        require_column(path, &idx, "group_id")?,
        require_column(path, &idx, "leg_id")?,
    );
    let mut groups: BTreeMap<String, Vec<LegId>> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| csv_err(path, row, e))?;
        let g: String = field(path, &rec, row, gc, "group_id")?;
        let l: String = field(path, &rec, row, lc, "leg_id")?;
        let members = groups.entry(g).or_default();
        let leg = LegId::new(l.clone());
        if members.contains(&leg) {
            return Err(IoError::DuplicateLeg {
                path: path.to_path_buf(),
                leg: l,
            });
        }
        members.push(leg);
    }
    Ok(groups
        .into_iter()
        .map(|(group_id, members)| NegRiskGroup { group_id, members })
        .collect())
}

/// Loads a data directory: every `*.csv` tick file, plus the optional
/// resolutions and negRisk files.
pub fn load_data_dir(dir: impl AsRef<Path>) -> Result<MarketData, IoError> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| IoError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| IoError::io(dir, err)))
        .collect::<Result<_, _>>()?;
    files.sort();
    let mut legs: BTreeMap<LegId, LegSeries> = BTreeMap::new();
    for f in &files {
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if f.extension().is_none_or(|e| e != "csv") || name == RESOLUTIONS_FILE || name == NEGRISK_FILE {
            continue;
        }
        for s in load_leg_series(f)? {
            if legs.contains_key(&s.leg_id) {
                return Err(IoError::DuplicateLeg {
                    path: f.clone(),
                    leg: s.leg_id.to_string(),
                });
            }
            legs.insert(s.leg_id.clone(), s);
        }
    }
    let res_path = dir.join(RESOLUTIONS_FILE);
    if res_path.exists() {
        for (leg, rec) in load_resolutions(&res_path)? {
            let series = legs.get_mut(&leg).ok_or_else(|| IoError::Config {
                path: res_path.clone(),
                message: format!("resolution for unknown leg `{leg}`"),
            })?;
            series.resolution = Some(rec);
        }
    }
    let neg_path = dir.join(NEGRISK_FILE);
    let groups = if neg_path.exists() {
        load_negrisk(&neg_path)?
    } else {
        Vec::new()
    };
    Ok(MarketData {
        legs: legs.into_values().collect(),
        groups,
    })
}

/// Writes `data` in the layout [`load_data_dir`] reads: one tick file per
/// leg, plus resolution and negRisk files when there is anything to write.
pub fn write_data_dir(dir: impl AsRef<Path>, data: &MarketData) -> Result<(), IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(source) => IoError::io(&p, source),
            other => IoError::Config {
                path: p.clone(),
                message: format!("{other:?}"),
            },
        }
    };
    for leg in &data.legs {
        let path = dir.join(format!("{}.csv", leg.leg_id));
        let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
        let cols: Vec<(&str, &Vec<f64>)> = [
            ("half_spread", leg.half_spread.as_ref()),
            ("depth_200bps", leg.depth_200bps.as_ref()),
            ("volume", leg.volume.as_ref()),
        ]
        .into_iter()
        .filter_map(|(n, c)| c.map(|c| (n, c)))
        .collect();
        let mut header = vec!["t_ms", "leg_id", "mid"];
        header.extend(cols.iter().map(|(n, _)| *n));
        w.write_record(&header).map_err(io(&path))?;
        for (i, p) in leg.points.iter().enumerate() {
            let mut row = vec![p.time.to_string(), leg.leg_id.to_string(), p.value.to_string()];
            row.extend(cols.iter().map(|(_, c)| c[i].to_string()));
            w.write_record(&row).map_err(io(&path))?;
        }
        w.flush().map_err(|e| IoError::io(&path, e))?;
    }
    let resolved: Vec<&LegSeries> = data.legs.iter().filter(|l| l.resolution.is_some()).collect();
    if !resolved.is_empty() {
        let path = dir.join(RESOLUTIONS_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
        w.write_record(["leg_id", "tau_ms", "outcome"])
            .map_err(io(&path))?;
        for l in resolved {
            let r = l.resolution.expect("filtered");
            w.write_record([
                l.leg_id.to_string(),
                r.tau.to_string(),
                u8::from(r.outcome).to_string(),
            ])
            .map_err(io(&path))?;
        }
        w.flush().map_err(|e| IoError::io(&path, e))?;
    }
    if !data.groups.is_empty() {
        let path = dir.join(NEGRISK_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
        w.write_record(["group_id", "leg_id"]).map_err(io(&path))?;
        for g in &data.groups {
            for m in &g.members {
                w.write_record([g.group_id.as_str(), m.as_str()])
                    .map_err(io(&path))?;
            }
        }
        w.flush().map_err(|e| IoError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_file_uses_stem_as_leg() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "legX.csv", "t_ms,mid\n0,0.5\n1000,0.6\n");
        let legs = load_leg_series(&p).unwrap();
        assert_eq!(legs.len(), 1);
        assert_eq!(legs[0].leg_id.as_str(), "legX");
        assert_eq!(legs[0].points.len(), 2);
        assert!(legs[0].half_spread.is_none() && legs[0].volume.is_none());
    }

    #[test]
    fn bound_and_order_violations() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.csv", "t_ms,leg_id,mid\n0,a,0.5\n1000,a,1.2\n");
        assert!(matches!(
            load_leg_series(&p),
            Err(IoError::BoundViolation { row: 2, .. })
        ));
        let p = write(d.path(), "b.csv", "t_ms,leg_id,mid\n1000,b,0.5\n0,b,0.4\n");
        match load_leg_series(&p) {
            Err(IoError::SchemaMismatch { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "t_ms");
            }
            other => panic!("{other:?}"),
        }
        let p = write(d.path(), "c.csv", "t_ms,leg_id,mid,colour\n0,c,0.5,red\n");
        assert!(matches!(
            load_leg_series(&p),
            Err(IoError::SchemaMismatch { row: 0, .. })
        ));
    }

    #[test]
    fn interleaved_legs_and_bid_ask() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "t.csv",
            "t_ms,leg_id,mid,bid,ask\n0,a,0.5,0.49,0.51\n0,b,0.3,0.28,0.32\n1000,a,0.55,0.54,0.56\n",
        );
        let legs = load_leg_series(&p).unwrap();
        assert_eq!(legs.len(), 2);
        let hs = legs[1].half_spread.as_ref().unwrap();
        assert!((hs[0] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn resolution_rules() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "r.csv", "leg_id,tau_ms,outcome\nlegX,1700000000000,1\n");
        let r = load_resolutions(&p).unwrap();
        assert_eq!(
            r[&LegId::new("legX")],
            ResolutionRecord {
                tau: 1_700_000_000_000,
                outcome: Outcome::Yes
            }
        );
        let p = write(d.path(), "r2.csv", "leg_id,tau_ms,outcome\nlegX,1,0.5\n");
        assert!(matches!(
            load_resolutions(&p),
            Err(IoError::OutcomeNotBinary { .. })
        ));
        let p = write(d.path(), "r3.csv", "leg_id,tau_ms,outcome\nlegX,1,1\nlegX,2,0\n");
        assert!(matches!(load_resolutions(&p), Err(IoError::DuplicateLeg { .. })));
    }

    #[test]
    fn data_dir_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let (legs, group) = crate::replay::generate_negrisk_group(5, 3, 3_600_000, 60_000);
        let data = MarketData {
            legs,
            groups: vec![group],
        };
        write_data_dir(d.path(), &data).unwrap();
        let back = load_data_dir(d.path()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn missing_file_is_io_failure() {
        let e = load_leg_series("/nonexistent/ticks.csv").unwrap_err();
        assert!(e.is_io_failure());
    }
}
