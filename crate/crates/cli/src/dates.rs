use std::path::Path;

use chrono::NaiveDate;

use crate::error::{invalid, CliResult};

/// Maps date fields to day indices. Integers pass through unchanged; ISO
/// dates count days from the epoch.
#[derive(Debug, Clone, Copy)]
pub struct DayCodec {
    epoch: Option<NaiveDate>,
}

fn parse_iso(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

impl DayCodec {
    /// Uses `--epoch` if given, else the first date field in `path`.
    pub fn for_file(path: &Path, epoch: Option<&str>) -> CliResult<Self> {
        if let Some(e) = epoch {
            let d = parse_iso(e).ok_or_else(|| invalid(format!("cannot parse epoch {e:?}")))?;
            return Ok(Self { epoch: Some(d) });
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let first = rdr
            .records()
            .next()
            .transpose()
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let epoch = first.and_then(|r| r.get(0).and_then(parse_iso));
        Ok(Self { epoch })
    }

    pub fn day(&self, s: &str) -> Option<i64> {
        let s = s.trim();
        if let Ok(d) = s.parse::<i64>() {
            return Some(d);
        }
        let date = parse_iso(s)?;
        Some((date - self.epoch?).num_days())
    }

    pub fn day_or_err(&self, s: &str) -> CliResult<i64> {
        self.day(s)
            .ok_or_else(|| invalid(format!("cannot parse day {s:?}")))
    }

    /// `A:B` with inclusive ends.
    pub fn range(&self, s: &str) -> CliResult<(i64, i64)> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("expected A:B, got {s:?}")))?;
        let (a, b) = (self.day_or_err(a)?, self.day_or_err(b)?);
        if b < a {
            return Err(invalid(format!("empty range {s:?}")));
        }
        Ok((a, b))
    }

    /// Comma list of days and inclusive `A:B` ranges.
    pub fn day_list(&self, s: &str) -> CliResult<Vec<i64>> {
        let mut out = Vec::new();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            if item.contains(':') {
                let (a, b) = self.range(item)?;
                out.extend(a..=b);
            } else {
                out.push(self.day_or_err(item)?);
            }
        }
        if out.is_empty() {
            return Err(invalid(format!("empty list {s:?}")));
        }
        Ok(out)
    }
}

pub fn float_list(s: &str) -> CliResult<Vec<f64>> {
    let out: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| invalid(format!("cannot parse number {x:?}")))
        })
        .collect::<CliResult<_>>()?;
    if out.is_empty() {
        return Err(invalid(format!("empty list {s:?}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_dates_count_from_epoch() {
        let c = DayCodec {
            epoch: parse_iso("2020-01-01"),
        };
        assert_eq!(c.day("2020-02-19"), Some(49));
        assert_eq!(c.day("19"), Some(19));
        assert_eq!(c.range("2020-01-02:2020-01-04").unwrap(), (1, 3));
        assert_eq!(c.day_list("1,3:5").unwrap(), vec![1, 3, 4, 5]);
        assert!(DayCodec { epoch: None }.day("2020-01-01").is_none());
    }
}
