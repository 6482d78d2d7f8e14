//! Heuristic table CSV: one row per (episode, layer).
//!
//! Columns: `episode_id, layer, fisher, rev_miou, self_iou, gram_dist,
//! reg_ratio, entropy, miou`, with `NA` for unavailable values. Floats are
//! written in shortest round-trip form so tables reload bit-exactly.

use std::io::{Read, Write};

use super::heuristics::{Heuristic, HeuristicRow, HeuristicVector};
use super::selection::EpisodeTable;
use crate::error::{Error, Result};

pub const HEADER: [&str; 9] = [
    "episode_id",
    "layer",
    "fisher",
    "rev_miou",
    "self_iou",
    "gram_dist",
    "reg_ratio",
    "entropy",
    "miou",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub episode_id: String,
    pub layer: usize,
    pub heuristics: HeuristicRow,
    pub miou: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

fn parse_cell(s: &str, line: usize) -> Result<Option<f64>> {
    let s = s.trim();
    if s == "NA" {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::BadTable(format!("line {line}: cannot parse {s:?}")))?;
    Ok(v.is_finite().then_some(v))
}

pub fn write_table<'a, W: Write>(
    rows: impl IntoIterator<Item = &'a TableRow>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        let mut rec = vec![r.episode_id.clone(), r.layer.to_string()];
        rec.extend(Heuristic::ALL.iter().map(|&h| cell(r.heuristics.get(h))));
        rec.push(cell(r.miou));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<R: Read>(input: R) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(HEADER.iter().copied()) {
        return Err(Error::BadTable(format!(
            "expected header {:?}, found {:?}",
            HEADER,
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let layer = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::BadTable(format!("line {line}: bad layer {:?}", &rec[1])))?;
        let mut heuristics = HeuristicRow::default();
        for (k, &h) in Heuristic::ALL.iter().enumerate() {
            heuristics.set(h, parse_cell(&rec[2 + k], line)?);
        }
        rows.push(TableRow {
            episode_id: rec[0].to_string(),
            layer,
            heuristics,
            miou: parse_cell(&rec[8], line)?,
        });
    }
    Ok(rows)
}

/// Groups rows by episode (first-appearance order) into search tables.
///
/// Every episode must list layers `1..=L` exactly once, each with an mIoU.
pub fn episode_tables(rows: &[TableRow]) -> Result<Vec<(String, EpisodeTable)>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<&TableRow>> = Default::default();
    for r in rows {
        let g = groups.entry(r.episode_id.as_str()).or_default();
        if g.is_empty() {
            order.push(r.episode_id.clone());
        }
        g.push(r);
    }
    if order.is_empty() {
        return Err(Error::BadTable("table has no rows".into()));
    }
    order
        .into_iter()
        .map(|id| {
            let mut g = groups.remove(id.as_str()).unwrap_or_default();
            g.sort_by_key(|r| r.layer);
            for (i, r) in g.iter().enumerate() {
                if r.layer != i + 1 {
                    return Err(Error::BadTable(format!(
                        "episode {id}: layers must run 1..=L without gaps"
                    )));
                }
            }
            let miou = g
                .iter()
                .map(|r| {
                    r.miou.ok_or_else(|| {
                        Error::BadTable(format!("episode {id} layer {}: missing miou", r.layer))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let heuristics = HeuristicVector {
                rows: g.iter().map(|r| r.heuristics).collect(),
            };
            Ok((id, EpisodeTable { heuristics, miou }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_values_and_na() {
        let mut h = HeuristicRow::default();
        h.set(Heuristic::Fisher, Some(0.1 + 0.2));
        h.set(Heuristic::Entropy, Some(1e-17));
        let rows = vec![
            TableRow {
                episode_id: "ep0".into(),
                layer: 1,
                heuristics: h,
                miou: Some(0.75),
            },
            TableRow {
                episode_id: "ep0".into(),
                layer: 2,
                heuristics: HeuristicRow::default(),
                miou: Some(0.5),
            },
        ];
        let mut buf = Vec::new();
        write_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "episode_id,layer,fisher,rev_miou,self_iou,gram_dist,reg_ratio,entropy,miou\n"
        ));
        assert!(text.contains("ep0,2,NA,NA,NA,NA,NA,NA,0.5"));
        let back = read_table(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let tables = episode_tables(&back).unwrap();
        assert_eq!(tables.len(), 1);
        assert_eq!(tables[0].1.miou, vec![0.75, 0.5]);
    }

    #[test]
    fn empty_table_is_an_error() {
        let text = HEADER.join(",") + "\n";
        let rows = read_table(text.as_bytes()).unwrap();
        assert!(episode_tables(&rows).is_err());
    }

    #[test]
    fn layer_gaps_are_rejected() {
        let text = HEADER.join(",") + "\ne,1,NA,NA,NA,NA,NA,NA,0.1\ne,3,NA,NA,NA,NA,NA,NA,0.2\n";
        let rows = read_table(text.as_bytes()).unwrap();
        assert!(episode_tables(&rows).is_err());
    }
}
