//! On-disk formats: edge lists, id maps, graph cache, checkpoints,
//! recommendation lists, metric reports and training logs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use pane_gnn_core::data::IdMap;
use pane_gnn_core::graph::{Sign, SignedBipartiteGraph, SignedEdge};
use pane_gnn_core::matrix::Matrix;
use pane_gnn_core::model::{ModelParams, ParamTensor};
use pane_gnn_core::rank::{MetricsAtK, MetricsReport, RankedList};
use pane_gnn_core::train::EpochRecord;

use crate::error::{CliError, Result};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

// edge lists

pub fn write_edges(path: &Path, edges: &[SignedEdge]) -> Result<()> {
    let mut w = create(path)?;
    for e in edges {
        writeln!(w, "{}\t{}\t{}", e.user, e.item, e.sign.as_i8()).map_err(|err| CliError::io(path, err))?;
    }
    finish(w, path)
}

pub fn parse_edges(reader: impl Read, path: &Path) -> Result<Vec<SignedEdge>> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let n = k + 1;
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(CliError::parse(path, n, format!("expected 3 tab-separated fields, found {}", f.len())));
        }
        let idx = |s: &str, what: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| CliError::parse(path, n, format!("bad {what} index `{s}`")))
        };
        let sign = match f[2].trim() {
            "1" => Sign::Positive,
            "-1" => Sign::Negative,
            s => return Err(CliError::parse(path, n, format!("sign must be 1 or -1, found `{s}`"))),
        };
        out.push(SignedEdge {
            user: idx(f[0], "user")?,
            item: idx(f[1], "item")?,
            sign,
        });
    }
    Ok(out)
}

pub fn read_edges(path: &Path) -> Result<Vec<SignedEdge>> {
    parse_edges(open(path)?, path)
}

// id maps

pub fn write_id_map(path: &Path, map: &IdMap<String>) -> Result<()> {
    let mut w = create(path)?;
    for (raw, dense) in map.iter() {
        writeln!(w, "{raw}\t{dense}").map_err(|e| CliError::io(path, e))?;
    }
    finish(w, path)
}

pub fn read_id_map(path: &Path) -> Result<IdMap<String>> {
    let mut map = IdMap::new();
    for (k, line) in open(path)?.lines().enumerate() {
        let n = k + 1;
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (raw, dense) = line
            .rsplit_once('\t')
            .ok_or_else(|| CliError::parse(path, n, "expected `raw<TAB>dense`"))?;
        let dense: u32 = dense
            .parse()
            .map_err(|_| CliError::parse(path, n, format!("bad dense index `{dense}`")))?;
        if map.intern(&raw.to_string()) != dense {
            return Err(CliError::parse(path, n, "dense indices must be 0, 1, 2, ... in order and raw ids unique"));
        }
    }
    Ok(map)
}

// little-endian helpers

struct LeReader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> LeReader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                CliError::format(self.path, "file is truncated")
            } else {
                CliError::io(self.path, e)
            }
        })?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        self.bytes::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.bytes::<8>().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.bytes::<4>().map(f32::from_le_bytes)
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(CliError::format(self.path, "trailing bytes after payload")),
            Err(e) => Err(CliError::io(self.path, e)),
        }
    }
}

fn header(r: &mut LeReader<'_, impl Read>, magic: &[u8; 4], version: u32) -> Result<()> {
    if &r.bytes::<4>()? != magic {
        return Err(CliError::format(
            r.path,
            format!("bad magic, expected `{}`", String::from_utf8_lossy(magic)),
        ));
    }
    let v = r.u32()?;
    if v != version {
        return Err(CliError::format(r.path, format!("unsupported version {v}, expected {version}")));
    }
    Ok(())
}

// graph cache

pub const GRAPH_MAGIC: &[u8; 4] = b"PGNN";
pub const GRAPH_VERSION: u32 = 1;

/// `PGNN`, version, user and item counts, then for the positive and the
/// negative side the user-major CSR arrays (`n_users + 1` row offsets as
/// u64, then item indices as u32).
pub fn write_graph(path: &Path, graph: &SignedBipartiteGraph) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(GRAPH_MAGIC);
    buf.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
    buf.extend_from_slice(&(graph.n_users() as u32).to_le_bytes());
    buf.extend_from_slice(&(graph.n_items() as u32).to_le_bytes());
    for adj in [graph.positive(), graph.negative()] {
        let mut offset = 0u64;
        buf.extend_from_slice(&offset.to_le_bytes());
        for u in 0..graph.n_users() as u32 {
            offset += adj.items_of(u).len() as u64;
            buf.extend_from_slice(&offset.to_le_bytes());
        }
        for u in 0..graph.n_users() as u32 {
            for &i in adj.items_of(u) {
                buf.extend_from_slice(&i.to_le_bytes());
            }
        }
    }
    let mut w = create(path)?;
    w.write_all(&buf).map_err(|e| CliError::io(path, e))?;
    finish(w, path)
}

pub fn read_graph(path: &Path) -> Result<SignedBipartiteGraph> {
    let mut r = LeReader {
        inner: open(path)?,
        path,
    };
    header(&mut r, GRAPH_MAGIC, GRAPH_VERSION)?;
    let n_users = r.u32()? as usize;
    let n_items = r.u32()? as usize;
    let mut edges = Vec::new();
    for sign in [Sign::Positive, Sign::Negative] {
        let mut ptr = Vec::with_capacity(n_users + 1);
        for _ in 0..=n_users {
            ptr.push(r.u64()?);
        }
        if ptr[0] != 0 || ptr.windows(2).any(|w| w[1] < w[0]) {
            return Err(CliError::format(path, "row offsets must start at 0 and be non-decreasing"));
        }
        for u in 0..n_users {
            for _ in ptr[u]..ptr[u + 1] {
                edges.push(SignedEdge {
                    user: u as u32,
                    item: r.u32()?,
                    sign,
                });
            }
        }
    }
    r.expect_end()?;
    Ok(SignedBipartiteGraph::build(&edges, n_users, n_items)?)
}

// checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PANE";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `PANE`, version, `N`, `H`, user count, item count (u32 each), then the six
/// tensors as row-major little-endian f32.
pub fn encode_checkpoint(params: &ModelParams<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for x in [params.n_nodes(), params.dim(), params.n_users, params.n_items] {
        buf.extend_from_slice(&(x as u32).to_le_bytes());
    }
    for t in ParamTensor::ALL {
        for v in params.tensor(t).as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn write_checkpoint(path: &Path, params: &ModelParams<f32>) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(&encode_checkpoint(params)).map_err(|e| CliError::io(path, e))?;
    finish(w, path)
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let mut r = LeReader {
        inner: open(path)?,
        path,
    };
    header(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let n = r.u32()? as usize;
    let h = r.u32()? as usize;
    let n_users = r.u32()? as usize;
    let n_items = r.u32()? as usize;
    if n != n_users + n_items || h == 0 {
        return Err(CliError::format(
            path,
            format!("inconsistent header: N={n}, H={h}, users={n_users}, items={n_items}"),
        ));
    }
    let mut params = ModelParams::<f32>::zeros(n_users, n_items, h);
    for t in ParamTensor::ALL {
        let (rows, cols) = params.tensor(t).shape();
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f32()?);
        }
        *params.tensor_mut(t) = Matrix::from_vec(rows, cols, data)?;
    }
    r.expect_end()?;
    params.validate()?;
    Ok(params)
}

// recommendations

pub fn write_recommendations(path: &Path, lists: &BTreeMap<u32, RankedList>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "user_idx\trank\titem_idx\tinterest\tdisinterest\tbackfilled").map_err(io)?;
    for list in lists.values() {
        for (rank, e) in list.items.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
                list.user,
                rank + 1,
                e.scored.item,
                e.scored.interest,
                e.scored.disinterest,
                u8::from(e.backfilled)
            )
            .map_err(io)?;
        }
    }
    finish(w, path)
}

// metrics report

pub fn format_report(report: &MetricsReport) -> String {
    let mut s = String::new();
    for name in ["precision", "recall", "ndcg"] {
        for m in &report.at {
            let v = match name {
                "precision" => m.precision,
                "recall" => m.recall,
                _ => m.ndcg,
            };
            s += &format!("{name}@{}={v:.6}\n", m.k);
        }
    }
    s += &format!("evaluated_users={}\n", report.evaluated_users);
    s += &format!("backfilled_users={}\n", report.backfilled_users);
    s
}

pub fn parse_report(text: &str, path: &Path) -> Result<MetricsReport> {
    let mut at: BTreeMap<usize, MetricsAtK> = BTreeMap::new();
    let mut report = MetricsReport::default();
    for (k, line) in text.lines().enumerate() {
        let n = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::parse(path, n, "expected key=value"))?;
        let bad = || CliError::parse(path, n, format!("bad value `{value}`"));
        match key {
            "evaluated_users" => report.evaluated_users = value.parse().map_err(|_| bad())?,
            "backfilled_users" => report.backfilled_users = value.parse().map_err(|_| bad())?,
            _ => {
                let (name, cutoff) = key
                    .split_once('@')
                    .ok_or_else(|| CliError::parse(path, n, format!("unknown key `{key}`")))?;
                let cutoff: usize = cutoff.parse().map_err(|_| bad())?;
                let v: f64 = value.parse().map_err(|_| bad())?;
                let m = at.entry(cutoff).or_insert(MetricsAtK {
                    k: cutoff,
                    precision: 0.0,
                    recall: 0.0,
                    ndcg: 0.0,
                });
                match name {
                    "precision" => m.precision = v,
                    "recall" => m.recall = v,
                    "ndcg" => m.ndcg = v,
                    _ => return Err(CliError::parse(path, n, format!("unknown metric `{name}`"))),
                }
            }
        }
    }
    report.at = at.into_values().collect();
    Ok(report)
}

// training log

pub const LOG_HEADER: &str = "epoch\tL_total\tL_DB\tL_CL\tL_Reg\twall_ms";

pub fn log_line(r: &EpochRecord, wall_ms: u128) -> String {
    format!(
        "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
        r.epoch, r.loss.total, r.loss.ranking, r.loss.contrastive, r.loss.regularization, wall_ms
    )
}

/// `(epoch, L_total)` pairs from a training log.
pub fn read_log_totals(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for (k, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if k == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || CliError::parse(path, k + 1, "malformed log line");
        if f.len() != 6 {
            return Err(bad());
        }
        out.push((f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tsv");
        let edges = vec![
            SignedEdge {
                user: 0,
                item: 3,
                sign: Sign::Positive,
            },
            SignedEdge {
                user: 2,
                item: 1,
                sign: Sign::Negative,
            },
        ];
        write_edges(&p, &edges).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "0\t3\t1\n2\t1\t-1\n");
        assert_eq!(read_edges(&p).unwrap(), edges);
        let err = parse_edges("0\t1\t1\n0\t1\t0\n".as_bytes(), Path::new("x")).unwrap_err();
        assert!(err.to_string().starts_with("x:2:"), "{err}");
    }

    #[test]
    fn id_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.tsv");
        let mut m = IdMap::new();
        for id in ["42", "7", "x y"] {
            m.intern(&id.to_string());
        }
        write_id_map(&p, &m).unwrap();
        assert_eq!(read_id_map(&p).unwrap(), m);
    }

    #[test]
    fn graph_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgnn");
        let e = |user, item, sign| SignedEdge { user, item, sign };
        let g = SignedBipartiteGraph::build(
            &[
                e(0, 1, Sign::Positive),
                e(2, 0, Sign::Negative),
                e(0, 0, Sign::Negative),
            ],
            3,
            2,
        )
        .unwrap();
        write_graph(&p, &g).unwrap();
        assert_eq!(&std::fs::read(&p).unwrap()[..4], b"PGNN");
        assert_eq!(read_graph(&p).unwrap(), g);
    }

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pane");
        let params = ModelParams::<f32>::glorot(3, 4, 5, 9).unwrap();
        write_checkpoint(&p, &params).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"PANE");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 7);
        assert_eq!(bytes.len(), 24 + 4 * (2 * 7 * 5 + 3 * 25 + 5));
        let first = f32::from_le_bytes(bytes[24..28].try_into().unwrap());
        assert_eq!(first, params.interest.get(0, 0));
        assert_eq!(read_checkpoint(&p).unwrap(), params);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pane");
        let mut bytes = encode_checkpoint(&ModelParams::<f32>::glorot(1, 1, 2, 0).unwrap());
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(CliError::Format { .. })));
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_checkpoint(&p).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn report_round_trip() {
        let report = MetricsReport {
            at: vec![
                MetricsAtK {
                    k: 5,
                    precision: 0.5,
                    recall: 0.25,
                    ndcg: 0.125,
                },
                MetricsAtK {
                    k: 10,
                    precision: 0.3,
                    recall: 0.6,
                    ndcg: 0.4,
                },
            ],
            evaluated_users: 12,
            backfilled_users: 1,
        };
        let text = format_report(&report);
        assert!(text.starts_with("precision@5=0.500000\nprecision@10=0.300000\nrecall@5="));
        assert_eq!(parse_report(&text, Path::new("r")).unwrap(), report);
    }
}
