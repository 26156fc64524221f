//! Raw rating files.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use pane_gnn_core::data::{dedup_latest, filter_min_interactions, IdMap, RatingRecord};

use crate::error::{CliError, Result};

/// Layout of a raw rating file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RatingFormat {
    /// Headerless lines split on `delimiter`, columns picked by position.
    Delimited {
        delimiter: String,
        user: usize,
        item: usize,
        value: usize,
        timestamp: Option<usize>,
    },
    /// Comma-separated with a header row; columns picked by name.
    HeaderedCsv {
        user: String,
        item: String,
        value: String,
        timestamp: Option<String>,
    },
}

impl RatingFormat {
    /// `user::item::rating::timestamp`
    pub fn movielens() -> Self {
        RatingFormat::Delimited {
            delimiter: "::".into(),
            user: 0,
            item: 1,
            value: 2,
            timestamp: Some(3),
        }
    }

    /// `user_id,video_id,...,watch_ratio` with a header.
    pub fn watch_ratio_csv() -> Self {
        RatingFormat::HeaderedCsv {
            user: "user_id".into(),
            item: "video_id".into(),
            value: "watch_ratio".into(),
            timestamp: Some("timestamp".into()),
        }
    }

    /// `movielens`, `csv`, or `delim:<sep>:<user>,<item>,<value>[,<ts>]`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "movielens" | "ml" => return Ok(Self::movielens()),
            "csv" | "watch-ratio" => return Ok(Self::watch_ratio_csv()),
            _ => {}
        }
        let bad = || CliError::Config(format!("unrecognized rating format `{spec}`"));
        let rest = spec.strip_prefix("delim:").ok_or_else(bad)?;
        let (sep, cols) = rest.rsplit_once(':').ok_or_else(bad)?;
        let cols: Vec<usize> = cols
            .split(',')
            .map(|c| c.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if sep.is_empty() || !(3..=4).contains(&cols.len()) {
            return Err(bad());
        }
        let sep = if sep == "\\t" { "\t" } else { sep };
        Ok(RatingFormat::Delimited {
            delimiter: sep.into(),
            user: cols[0],
            item: cols[1],
            value: cols[2],
            timestamp: cols.get(3).copied(),
        })
    }
}

/// Re-indexed ratings with the id maps that produced them.
#[derive(Clone, Debug, Default)]
pub struct LoadedRatings {
    pub records: Vec<RatingRecord<u32>>,
    pub users: IdMap<String>,
    pub items: IdMap<String>,
}

fn parse_value(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| CliError::parse(path, line, format!("non-numeric rating value `{field}`")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(CliError::parse(path, line, format!("rating value {v} must be finite and non-negative")));
    }
    Ok(v)
}

fn parse_timestamp(path: &Path, line: usize, field: &str) -> Result<i64> {
    let t = field.trim();
    t.parse::<i64>()
        .or_else(|_| t.parse::<f64>().map(|x| x.floor() as i64))
        .map_err(|_| CliError::parse(path, line, format!("non-numeric timestamp `{field}`")))
}

/// Parse raw records in file order. `path` labels diagnostics.
pub fn read_raw(reader: impl Read, format: &RatingFormat, path: &Path) -> Result<Vec<RatingRecord<String>>> {
    match format {
        RatingFormat::Delimited {
            delimiter,
            user,
            item,
            value,
            timestamp,
        } => {
            let needed = [*user, *item, *value, timestamp.unwrap_or(0)].into_iter().max().unwrap_or(0) + 1;
            let mut out = Vec::new();
            for (k, line) in BufReader::new(reader).lines().enumerate() {
                let n = k + 1;
                let line = line.map_err(|e| CliError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split(delimiter.as_str()).collect();
                if fields.len() < needed {
                    return Err(CliError::parse(
                        path,
                        n,
                        format!("expected at least {needed} `{delimiter}`-separated fields, found {}", fields.len()),
                    ));
                }
                out.push(RatingRecord {
                    user: fields[*user].trim().to_string(),
                    item: fields[*item].trim().to_string(),
                    value: parse_value(path, n, fields[*value])?,
                    timestamp: timestamp.map(|t| parse_timestamp(path, n, fields[t])).transpose()?,
                });
            }
            Ok(out)
        }
        RatingFormat::HeaderedCsv {
            user,
            item,
            value,
            timestamp,
        } => {
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
            let headers = match rdr.headers() {
                Ok(h) => h.clone(),
                Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => {
                    return Err(CliError::io(path, std::io::Error::other(e.to_string())))
                }
                Err(e) => return Err(CliError::parse(path, 1, e.to_string())),
            };
            if headers.is_empty() {
                return Ok(Vec::new());
            }
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h.trim() == name)
                    .ok_or_else(|| CliError::parse(path, 1, format!("header lacks column `{name}`")))
            };
            let (cu, ci, cv) = (col(user)?, col(item)?, col(value)?);
            let ct = timestamp.as_deref().and_then(|t| col(t).ok());
            let mut out = Vec::new();
            for (k, rec) in rdr.records().enumerate() {
                let n = k + 2;
                let rec = rec.map_err(|e| CliError::parse(path, n, e.to_string()))?;
                let field = |c: usize| {
                    rec.get(c)
                        .ok_or_else(|| CliError::parse(path, n, format!("missing field {}", c + 1)))
                };
                out.push(RatingRecord {
                    user: field(cu)?.trim().to_string(),
                    item: field(ci)?.trim().to_string(),
                    value: parse_value(path, n, field(cv)?)?,
                    timestamp: ct.map(|c| field(c).and_then(|f| parse_timestamp(path, n, f))).transpose()?,
                });
            }
            Ok(out)
        }
    }
}

/// Deduplicate, optionally drop sparse users and items, then re-index ids
/// densely in first-seen order.
pub fn reindex(raw: Vec<RatingRecord<String>>, min_interactions: Option<usize>) -> LoadedRatings {
    let mut records = dedup_latest(raw);
    if let Some(min) = min_interactions {
        records = filter_min_interactions(records, min);
    }
    let mut out = LoadedRatings::default();
    out.records = records
        .into_iter()
        .map(|r| RatingRecord {
            user: out.users.intern(&r.user),
            item: out.items.intern(&r.item),
            value: r.value,
            timestamp: r.timestamp,
        })
        .collect();
    out
}

pub fn load_ratings(path: &Path, format: &RatingFormat, min_interactions: Option<usize>) -> Result<LoadedRatings> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(reindex(read_raw(file, format, path)?, min_interactions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn movielens_line() {
        let recs = read_raw("1::1193::5::978300760\n".as_bytes(), &RatingFormat::movielens(), p()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].user, "1");
        assert_eq!(recs[0].item, "1193");
        assert_eq!(recs[0].value, 5.0);
        assert_eq!(recs[0].timestamp, Some(978300760));
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(read_raw("".as_bytes(), &RatingFormat::movielens(), p()).unwrap().is_empty());
        assert!(read_raw("".as_bytes(), &RatingFormat::watch_ratio_csv(), p()).unwrap().is_empty());
    }

    #[test]
    fn bad_delimiter_names_line() {
        let err = read_raw("1::2::3::4\n1,2,3,4\n".as_bytes(), &RatingFormat::movielens(), p()).unwrap_err();
        match err {
            CliError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn non_numeric_value_is_an_error() {
        let err = read_raw("1::2::x::4\n".as_bytes(), &RatingFormat::movielens(), p()).unwrap_err();
        assert!(err.to_string().contains("mem:1"), "{err}");
    }

    #[test]
    fn duplicate_keeps_latest_and_reindexes() {
        let text = "7::9::1::10\n8::9::5::5\n7::9::4::20\n";
        let loaded = reindex(read_raw(text.as_bytes(), &RatingFormat::movielens(), p()).unwrap(), None);
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.records[0].value, 4.0);
        assert_eq!(loaded.records[0].timestamp, Some(20));
        assert_eq!(loaded.users.get(&"8".to_string()), Some(1));
        assert_eq!(loaded.items.len(), 1);
    }

    #[test]
    fn watch_ratio_csv_by_header() {
        let text = "user_id,video_id,play_duration,video_duration,time,date,timestamp,watch_ratio\n\
                    14,148,4381,6067,2020-07-05,20200705,1593878903.438,0.722103\n\
                    14,183,11635,6100,2020-07-05,20200705,1593878949.229,2.5\n";
        let recs = read_raw(text.as_bytes(), &RatingFormat::watch_ratio_csv(), p()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].value, 2.5);
        assert_eq!(recs[0].timestamp, Some(1593878903));
    }

    #[test]
    fn csv_missing_column() {
        let err = read_raw("a,b\n1,2\n".as_bytes(), &RatingFormat::watch_ratio_csv(), p()).unwrap_err();
        assert!(err.to_string().contains("user_id"));
    }

    #[test]
    fn custom_format_spec() {
        let f = RatingFormat::parse("delim:\\t:1,0,2").unwrap();
        let recs = read_raw("a\tb\t3\n".as_bytes(), &f, p()).unwrap();
        assert_eq!((recs[0].user.as_str(), recs[0].item.as_str()), ("b", "a"));
        assert!(RatingFormat::parse("nonsense").is_err());
    }
}
