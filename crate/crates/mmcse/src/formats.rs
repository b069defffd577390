//! Line-oriented dataset files and the tab-separated training log.
//!
//! Every dataset file starts with a header line
//! `mmcse-data <TAB> <version> <TAB> <kind> [<TAB> shape...]` followed by one
//! record per line, fields separated by tabs, token lists by single spaces.
//!
//! | kind        | shape  | record                          |
//! |-------------|--------|---------------------------------|
//! | `sentences` |        | `cluster  tokens`               |
//! | `triplets`  |        | `src  pos  neg`                 |
//! | `sts`       |        | `gold  a  b`                    |
//! | `images`    | `H W`  | `label  3·H·W floats`           |
//! | `audio`     | `T F`  | `label  T·F floats`             |
//!
//! Floats are written in Rust's shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use mmcse_core::data::{LabeledClip, LabeledImage, Sentence, TripletRecord};
use mmcse_core::metrics::ScoredPair;
use mmcse_core::training::LogRecord;

use crate::{write_file, CliError, Result};

pub const DATA_MAGIC: &str = "mmcse-data";
pub const DATA_VERSION: u32 = 1;
pub const LOG_HEADER: &str = "# mmcse-log\t1";

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Sentences(Vec<Sentence>),
    Triplets(Vec<TripletRecord>),
    Sts(Vec<ScoredPair>),
    Images(Vec<LabeledImage>),
    Audio(Vec<LabeledClip>),
}

impl Dataset {
    pub fn kind(&self) -> &'static str {
        match self {
            Dataset::Sentences(_) => "sentences",
            Dataset::Triplets(_) => "triplets",
            Dataset::Sts(_) => "sts",
            Dataset::Images(_) => "images",
            Dataset::Audio(_) => "audio",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Sentences(v) => v.len(),
            Dataset::Triplets(v) => v.len(),
            Dataset::Sts(v) => v.len(),
            Dataset::Images(v) => v.len(),
            Dataset::Audio(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn tokens(t: &[u32]) -> String {
    let mut s = String::with_capacity(t.len() * 4);
    for (i, x) in t.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

fn floats(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 20);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

pub fn dataset_to_string(data: &Dataset) -> String {
    let mut out = String::new();
    let _ = write!(out, "{DATA_MAGIC}\t{DATA_VERSION}\t{}", data.kind());
    match data {
        Dataset::Images(v) => {
            let (h, w) = v.first().map_or((0, 0), |i| (i.height, i.width));
            let _ = write!(out, "\t{h}\t{w}");
        }
        Dataset::Audio(v) => {
            let (t, f) = v.first().map_or((0, 0), |c| (c.frames, c.bins));
            let _ = write!(out, "\t{t}\t{f}");
        }
        _ => {}
    }
    out.push('\n');
    match data {
        Dataset::Sentences(v) => v.iter().for_each(|s| {
            let _ = writeln!(out, "{}\t{}", s.cluster, tokens(&s.tokens));
        }),
        Dataset::Triplets(v) => v.iter().for_each(|t| {
            let _ = writeln!(out, "{}\t{}\t{}", tokens(&t.src), tokens(&t.pos), tokens(&t.neg));
        }),
        Dataset::Sts(v) => v.iter().for_each(|p| {
            let _ = writeln!(out, "{}\t{}\t{}", p.gold, tokens(&p.a), tokens(&p.b));
        }),
        Dataset::Images(v) => v.iter().for_each(|i| {
            let _ = writeln!(out, "{}\t{}", i.label, floats(&i.pixels));
        }),
        Dataset::Audio(v) => v.iter().for_each(|c| {
            let _ = writeln!(out, "{}\t{}", c.label, floats(&c.values));
        }),
    }
    out
}

pub fn parse_tokens(field: &str) -> Result<Vec<u32>, String> {
    field
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format!("bad token {t:?}")))
        .collect()
}

fn parse_floats(field: &str, expected: usize) -> Result<Vec<f64>, String> {
    let v = field
        .split(' ')
        .map(|t| t.parse().map_err(|_| format!("bad number {t:?}")))
        .collect::<Result<Vec<f64>, String>>()?;
    if v.len() != expected {
        return Err(format!("expected {expected} values, got {}", v.len()));
    }
    Ok(v)
}

fn parse_num<T: std::str::FromStr>(field: &str) -> Result<T, String> {
    field.parse().map_err(|_| format!("bad number {field:?}"))
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    if header.first() != Some(&DATA_MAGIC) || header.len() < 3 {
        return Err(CliError::format(path, "missing mmcse-data header"));
    }
    if header[1] != DATA_VERSION.to_string() {
        return Err(CliError::format(
            path,
            format!("dataset version {}, this build reads version {DATA_VERSION}", header[1]),
        ));
    }
    let shape = |i: usize| -> Result<usize> {
        header
            .get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::format(path, "missing shape in header"))
    };
    let kind = header[2];
    let (d0, d1) = match kind {
        "images" | "audio" => (shape(3)?, shape(4)?),
        _ => (0, 0),
    };
    let mut data = match kind {
        "sentences" => Dataset::Sentences(Vec::new()),
        "triplets" => Dataset::Triplets(Vec::new()),
        "sts" => Dataset::Sts(Vec::new()),
        "images" => Dataset::Images(Vec::new()),
        "audio" => Dataset::Audio(Vec::new()),
        other => return Err(CliError::format(path, format!("unknown dataset kind {other:?}"))),
    };
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |m: String| CliError::format(path, format!("line {}: {m}", n + 2));
        let want = |k: usize| if f.len() == k { Ok(()) } else { Err(bad(format!("expected {k} fields, got {}", f.len()))) };
        match &mut data {
            Dataset::Sentences(v) => {
                want(2)?;
                v.push(Sentence {
                    cluster: parse_num(f[0]).map_err(bad)?,
                    tokens: parse_tokens(f[1]).map_err(bad)?,
                });
            }
            Dataset::Triplets(v) => {
                want(3)?;
                v.push(TripletRecord {
                    src: parse_tokens(f[0]).map_err(bad)?,
                    pos: parse_tokens(f[1]).map_err(bad)?,
                    neg: parse_tokens(f[2]).map_err(bad)?,
                });
            }
            Dataset::Sts(v) => {
                want(3)?;
                v.push(ScoredPair {
                    gold: parse_num(f[0]).map_err(bad)?,
                    a: parse_tokens(f[1]).map_err(bad)?,
                    b: parse_tokens(f[2]).map_err(bad)?,
                });
            }
            Dataset::Images(v) => {
                want(2)?;
                v.push(LabeledImage {
                    height: d0,
                    width: d1,
                    label: parse_num(f[0]).map_err(bad)?,
                    pixels: parse_floats(f[1], 3 * d0 * d1).map_err(bad)?,
                });
            }
            Dataset::Audio(v) => {
                want(2)?;
                v.push(LabeledClip {
                    frames: d0,
                    bins: d1,
                    label: parse_num(f[0]).map_err(bad)?,
                    values: parse_floats(f[1], d0 * d1).map_err(bad)?,
                });
            }
        }
    }
    Ok(data)
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_file(path, dataset_to_string(data))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(&text, path)
}

/// `loss <TAB> step <TAB> name <TAB> value` and
/// `validation <TAB> step <TAB> spearman <TAB> selected` lines.
pub fn log_line(record: &LogRecord) -> String {
    match record {
        LogRecord::Loss { step, name, value } => format!("loss\t{step}\t{name}\t{value}"),
        LogRecord::Validation { step, spearman, selected } => {
            format!("validation\t{step}\t{spearman}\t{}", u8::from(*selected))
        }
    }
}

pub fn log_to_string(records: &[LogRecord]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in records {
        out.push_str(&log_line(r));
        out.push('\n');
    }
    out
}

/// Reads back `(step, name, value)` loss rows and `(step, spearman)`
/// validation rows.
pub fn parse_log(text: &str) -> Result<(Vec<(usize, String, f64)>, Vec<(usize, f64)>), String> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err("missing mmcse-log header".into());
    }
    let (mut losses, mut vals) = (Vec::new(), Vec::new());
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        match f.as_slice() {
            ["loss", step, name, value] => losses.push((parse_num(step)?, name.to_string(), parse_num(value)?)),
            ["validation", step, sp, _] => vals.push((parse_num(step)?, parse_num(sp)?)),
            _ => return Err(format!("bad log line {line:?}")),
        }
    }
    Ok((losses, vals))
}
