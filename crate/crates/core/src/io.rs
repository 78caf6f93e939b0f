//! CSV serialization of results. Every float goes through [`fmt_f64`], so a
//! file read back reproduces the in-memory values bit for bit.

use nalgebra::DMatrix;

use crate::data::SmoothedSeries;
use crate::epimodel::Trajectory;
use crate::error::{Error, Result};
use crate::fitkit::FitResult;
use crate::format::fmt_f64;
use crate::identify::{ReproSeries, SweepResult, TransmissionCurve};
use crate::pheno::ExponentialModel;
use crate::spectral::{AgeTrajectory, StarState};

fn write_rows(
    comments: &[String],
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    out.push_str(
        &String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output"),
    );
    out
}

/// Columns of equal length under the given header.
pub fn columns_csv(header: &[&str], cols: &[&[f64]]) -> String {
    assert_eq!(header.len(), cols.len(), "one header per column");
    let n = cols.first().map_or(0, |c| c.len());
    write_rows(
        &[],
        header,
        (0..n).map(|k| cols.iter().map(|c| fmt_f64(c[k])).collect()),
    )
}

/// `t,S,I,U,CR,CI`; `U` is zero for models without an unreported compartment.
pub fn trajectory_csv(tr: &Trajectory) -> String {
    let zeros = vec![0.0; tr.grid.len()];
    let u = tr.u.as_deref().unwrap_or(&zeros);
    columns_csv(
        &["t", "S", "I", "U", "CR", "CI"],
        &[&tr.grid, &tr.s, &tr.i, u, &tr.cr, &tr.ci],
    )
}

pub fn tau_csv(c: &TransmissionCurve) -> String {
    columns_csv(&["t", "tau"], &[&c.grid, &c.tau])
}

pub fn repro_csv(r: &ReproSeries) -> String {
    columns_csv(&["t", "Re", "Re0"], &[&r.grid, &r.re, &r.re0])
}

pub fn smoothed_csv(s: &SmoothedSeries) -> String {
    columns_csv(
        &["t", "CR", "dCR", "d2CR", "d3CR"],
        &[&s.grid, &s.value, &s.d1, &s.d2, &s.d3],
    )
}

/// `parameter,estimate,lower,upper`, followed by `sse` and `mad` rows with empty bounds.
pub fn fit_table_csv(fit: &FitResult) -> String {
    let mut rows: Vec<Vec<String>> = match &fit.ci95 {
        Some(ci) => ci
            .iter()
            .map(|p| {
                vec![
                    p.name.clone(),
                    fmt_f64(p.estimate),
                    fmt_f64(p.lower),
                    fmt_f64(p.upper),
                ]
            })
            .collect(),
        None => fit
            .model
            .parameters()
            .into_iter()
            .map(|(name, v)| vec![name, fmt_f64(v), String::new(), String::new()])
            .collect(),
    };
    for (name, v) in [("sse", fit.sse), ("mad", fit.mad)] {
        rows.push(vec![name.into(), fmt_f64(v), String::new(), String::new()]);
    }
    let comments = vec![
        format!("model = {}", fit.model.name()),
        format!("window = {}:{}", fit.window.0, fit.window.1),
    ];
    write_rows(
        &comments,
        &["parameter", "estimate", "lower", "upper"],
        rows.into_iter(),
    )
}

/// Sweep records with a header carrying `MADmin`, the band and the skip count.
pub fn sweep_csv(res: &SweepResult, retained_only: bool) -> String {
    let comments = vec![
        format!("mad_min = {}", fmt_f64(res.mad_min)),
        format!("band = {}", fmt_f64(res.band)),
        format!("skipped = {}", res.skipped),
        format!("retained = {} of {}", res.retained.len(), res.records.len()),
    ];
    let records: Vec<_> = if retained_only {
        res.retained_records().collect()
    } else {
        res.records.iter().collect()
    };
    write_rows(
        &comments,
        &[
            "t1", "t2", "N", "f", "mu", "mad", "chi1", "chi2", "tau0", "I0", "U0", "CR0",
        ],
        records.into_iter().map(|r| {
            let mut row = vec![r.t1.to_string(), r.t2.to_string()];
            row.extend(
                [
                    r.n, r.f, r.mu, r.mad, r.chi1, r.chi2, r.tau0, r.i0, r.u0, r.cr0,
                ]
                .into_iter()
                .map(fmt_f64),
            );
            row
        }),
    )
}

/// Per-group exponential fits, star states and least-squares rates.
pub fn age_table_csv(
    groups: &[String],
    chi: &[ExponentialModel],
    star: &[StarState],
    tau: &[f64],
) -> String {
    write_rows(
        &[],
        &[
            "group", "chi1", "chi2", "chi3", "Istar", "Ustar", "CUstar", "tau_star",
        ],
        (0..groups.len()).map(|j| {
            let c = chi[j].to_calendar();
            let mut row = vec![groups[j].clone()];
            row.extend(
                [
                    c.chi1,
                    c.chi2,
                    c.chi3,
                    star[j].istar,
                    star[j].ustar,
                    star[j].custar,
                    tau[j],
                ]
                .into_iter()
                .map(fmt_f64),
            );
            row
        }),
    )
}

/// Long format `group,t,S,I,U,CR,CU`.
pub fn age_trajectory_csv(groups: &[String], tr: &AgeTrajectory) -> String {
    let rows = (0..groups.len()).flat_map(|j| {
        (0..tr.grid.len()).map(move |k| {
            let mut row = vec![groups[j].clone()];
            row.extend(
                [
                    tr.grid[k],
                    tr.s[j][k],
                    tr.i[j][k],
                    tr.u[j][k],
                    tr.cr[j][k],
                    tr.cu[j][k],
                ]
                .into_iter()
                .map(fmt_f64),
            );
            row
        })
    });
    write_rows(&[], &["group", "t", "S", "I", "U", "CR", "CU"], rows)
}

/// Square contact matrix: one row per receiving group, comma separated, no
/// header. Blank lines and lines starting with `#` are ignored.
pub fn parse_contact_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: k + 1,
                    msg: format!("cannot parse contact rate {:?}", v.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "empty contact matrix".into(),
        });
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::Parse {
            line: bad + 1,
            msg: format!(
                "contact matrix row {bad} has {} entries, expected {n}",
                rows[bad].len()
            ),
        });
    }
    if rows
        .iter()
        .flatten()
        .any(|v| !(*v >= 0.0) || !v.is_finite())
    {
        return Err(Error::invalid(
            "contact rates must be finite and non-negative",
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn contact_matrix_csv(phi: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..phi.nrows() {
        let row: Vec<String> = (0..phi.ncols()).map(|j| fmt_f64(phi[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads back numeric columns written by [`columns_csv`] (comment lines skipped).
pub fn read_columns(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (c, v) in rec.iter().enumerate() {
            cols[c].push(v.parse::<f64>().map_err(|_| Error::Parse {
                line: k + 2,
                msg: format!("cannot parse number {v:?}"),
            })?);
        }
    }
    Ok((header, cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_round_trip_bitwise() {
        let t = [0.0, 0.1, 1.0 / 3.0];
        let v = [1e-300, std::f64::consts::PI, -2.5e17];
        let text = columns_csv(&["t", "v"], &[&t, &v]);
        let (h, cols) = read_columns(&text).unwrap();
        assert_eq!(h, ["t", "v"]);
        for (a, b) in cols[1].iter().zip(v) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn contact_matrix_round_trip() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.5, 2.0]);
        let back = parse_contact_matrix(&contact_matrix_csv(&phi)).unwrap();
        assert_eq!(back, phi);
        assert!(parse_contact_matrix("1,2\n3\n").is_err());
        assert!(parse_contact_matrix("1,-2\n3,4\n").is_err());
    }
}
