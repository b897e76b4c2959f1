//! Per-iteration metrics rows and their CSV form.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossReport;

pub const METRICS_HEADER: &str = "iter,L_s,L_t,L_u,total,lr,val_miou";

/// One CSV row. The iteration-0 evaluation row has no losses and no rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub losses: Option<LossReport>,
    pub lr: Option<f64>,
    /// Mean IoU in `[0, 1]` on evaluation rows.
    pub val_miou: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let l = self.losses.as_ref();
        format!(
            "{},{},{},{},{},{},{}",
            self.iter,
            opt(l.map(|r| r.source)),
            opt(l.map(|r| r.target)),
            opt(l.map(|r| r.unlabeled)),
            opt(l.map(|r| r.total)),
            opt(self.lr),
            opt(self.val_miou)
        )
    }

    pub fn parse_csv(line: &str, path: &Path) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::format(path, format!("expected 7 fields, got {}: {line:?}", f.len())));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::format(path, format!("bad number {s:?}")))
            }
        };
        let iter = f[0]
            .parse()
            .map_err(|_| Error::format(path, format!("bad iteration {:?}", f[0])))?;
        let terms = [num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?];
        let losses = match terms {
            [Some(source), Some(target), Some(unlabeled), Some(total)] => Some(LossReport {
                source,
                target,
                unlabeled,
                total,
                ..Default::default()
            }),
            [None, None, None, None] => None,
            _ => return Err(Error::format(path, format!("partial loss columns: {line:?}"))),
        };
        Ok(Self {
            iter,
            losses,
            lr: num(f[5])?,
            val_miou: num(f[6])?,
        })
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(path, "missing metrics header"));
    }
    lines.filter(|l| !l.is_empty()).map(|l| MetricsRow::parse_csv(l, path)).collect()
}

/// Append-only metrics file; the header is written when the file is created.
pub struct MetricsWriter {
    file: std::fs::File,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    /// Creates (truncating) the file and writes the header plus `existing` rows.
    pub fn create(path: &Path, existing: &[MetricsRow]) -> Result<Self> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(to_csv(existing).as_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv()).map_err(|e| Error::io(&self.path, e))
    }
}
