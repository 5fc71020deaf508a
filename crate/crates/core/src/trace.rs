//! Per-iteration run records and their CSV form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub f: f64,
    pub g: Vec<f64>,
    /// `<lambda^t, g(x^t)>` (the complementarity violation is its negative).
    pub comp: f64,
    pub lam_norm: f64,
    /// `||x^{t+1} - x^t||`.
    pub step_norm: f64,
    pub inner_iters: usize,
    /// Cumulative solver time in seconds, diagnostics excluded.
    pub cpu_s: f64,
    pub moreau_sq: Option<f64>,
    pub r_alpha: f64,
}

impl TraceRow {
    pub fn max_violation(&self) -> f64 {
        self.g.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub solver: String,
    pub rows: Vec<TraceRow>,
    /// `lambda^1, ..., lambda^{T+1}`.
    pub lambdas: Vec<Vec<f64>>,
    /// Penalty parameter used at each outer iteration.
    pub sigmas: Vec<f64>,
    /// Proximal weight used for `r_alpha`.
    pub alpha: f64,
    pub x_final: Vec<f64>,
    /// Outer iterations whose inner solve did not converge cleanly.
    pub inner_failures: usize,
}

impl RunTrace {
    pub fn lambda_final(&self) -> Vector {
        Vector::from_column_slice(self.lambdas.last().map(|l| l.as_slice()).unwrap_or(&[]))
    }

    pub fn x_final(&self) -> Vector {
        Vector::from_column_slice(&self.x_final)
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.first().map_or(0, |r| r.g.len())
    }

    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    pub fn lambda_csv(&self) -> String {
        let p = self.lambdas.first().map_or(0, |l| l.len());
        let mut out = String::from("t");
        for i in 1..=p {
            let _ = write!(out, ",lambda_{i}");
        }
        out.push('\n');
        for (k, lam) in self.lambdas.iter().enumerate() {
            let _ = write!(out, "{}", k + 1);
            for v in lam {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn csv_header(p: usize) -> String {
    let mut h = String::from("t,f");
    for i in 1..=p {
        let _ = write!(h, ",g_{i}");
    }
    h.push_str(",comp,lam_norm,step_norm,inner_iters,cpu_s,moreau_sq,r_alpha");
    h
}

pub fn rows_to_csv(rows: &[TraceRow]) -> String {
    let p = rows.first().map_or(0, |r| r.g.len());
    let mut out = csv_header(p);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{}", r.t, r.f);
        for g in &r.g {
            let _ = write!(out, ",{g}");
        }
        let _ = write!(
            out,
            ",{},{},{},{},{},",
            r.comp, r.lam_norm, r.step_norm, r.inner_iters, r.cpu_s
        );
        if let Some(m) = r.moreau_sq {
            let _ = write!(out, "{m}");
        }
        let _ = writeln!(out, ",{}", r.r_alpha);
    }
    out
}

fn parse_field<T: std::str::FromStr>(tok: &str, line: usize, name: &str) -> Result<T> {
    tok.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {name} '{tok}'"),
    })
}

pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: "empty trace".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 9 || cols[0] != "t" || cols[1] != "f" {
        return Err(Error::Parse {
            line: 1,
            msg: "unexpected trace header".into(),
        });
    }
    let p = cols.len() - 9;
    if header != csv_header(p) {
        return Err(Error::Parse {
            line: 1,
            msg: "unexpected trace header".into(),
        });
    }
    let mut rows = Vec::new();
    for (k, line) in lines {
        let ln = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split(',').collect();
        if tok.len() != cols.len() {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected {} fields, got {}", cols.len(), tok.len()),
            });
        }
        let g = (0..p)
            .map(|i| parse_field(tok[2 + i], ln, "g"))
            .collect::<Result<Vec<f64>>>()?;
        let o = 2 + p;
        let moreau_sq = if tok[o + 5].trim().is_empty() {
            None
        } else {
            Some(parse_field(tok[o + 5], ln, "moreau_sq")?)
        };
        rows.push(TraceRow {
            t: parse_field(tok[0], ln, "t")?,
            f: parse_field(tok[1], ln, "f")?,
            g,
            comp: parse_field(tok[o], ln, "comp")?,
            lam_norm: parse_field(tok[o + 1], ln, "lam_norm")?,
            step_norm: parse_field(tok[o + 2], ln, "step_norm")?,
            inner_iters: parse_field(tok[o + 3], ln, "inner_iters")?,
            cpu_s: parse_field(tok[o + 4], ln, "cpu_s")?,
            moreau_sq,
            r_alpha: parse_field(tok[o + 6], ln, "r_alpha")?,
        });
    }
    Ok(rows)
}

pub fn parse_lambda_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .skip(1)
            .map(|tok| parse_field(tok, k + 1, "lambda"))
            .collect::<Result<Vec<f64>>>()?;
        out.push(vals);
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_csv(&text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
