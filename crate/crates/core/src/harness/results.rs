//! Result rows and their CSV form.

use std::fs;
use std::path::Path;

use crate::attacks::{AttackKind, Objective};
use crate::error::{Error, Result};

pub const HEADER: [&str; 11] = [
    "framework",
    "task",
    "attack",
    "objective",
    "p",
    "seed",
    "episodes",
    "mean_timesteps",
    "stderr",
    "recall",
    "precision",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub framework: String,
    pub task: String,
    pub attack: AttackKind,
    pub objective: Objective,
    pub p: f64,
    pub seed: u64,
    pub episodes: usize,
    pub mean_timesteps: f64,
    pub stderr: f64,
    /// estimator metrics, absent for undefended frameworks
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

/// Six significant digits, shortest form that round-trips at that precision.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
        // rounding can carry into a new leading digit; re-format once if so
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 6 {
            return fmt_sig(s.parse().unwrap_or(x));
        }
        s
    } else {
        format!("{x:.5e}")
    }
}

/// `x` rounded to the value its six-digit rendering parses back to.
pub fn round_sig(x: f64) -> f64 {
    fmt_sig(x).parse().unwrap_or(x)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

pub fn write_results_to<W: std::io::Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Format(format!("csv write: {e}"));
    out.write_record(HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.framework.clone(),
            r.task.clone(),
            r.attack.to_string(),
            r.objective.to_string(),
            fmt_sig(r.p),
            r.seed.to_string(),
            r.episodes.to_string(),
            fmt_sig(r.mean_timesteps),
            fmt_sig(r.stderr),
            opt(r.recall),
            opt(r.precision),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_results_to(rows, &mut buf)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_results_from(text: &str) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 1;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if i == 0 {
            if rec.iter().ne(HEADER.iter().copied()) {
                return Err(Error::Parse { line, msg: format!("expected header {}", HEADER.join(",")) });
            }
            continue;
        }
        if rec.len() != HEADER.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, got {}", HEADER.len(), rec.len()) });
        }
        let field = |k: usize| &rec[k];
        let parse = |k: usize| -> Result<f64> {
            field(k).parse().map_err(|_| Error::Parse { line, msg: format!("{}: bad number {:?}", HEADER[k], field(k)) })
        };
        let parse_opt = |k: usize| -> Result<Option<f64>> { if field(k).is_empty() { Ok(None) } else { parse(k).map(Some) } };
        let bad = |k: usize| Error::Parse { line, msg: format!("{}: bad value {:?}", HEADER[k], field(k)) };
        rows.push(ResultRow {
            framework: field(0).to_string(),
            task: field(1).to_string(),
            attack: field(2).parse().map_err(|_| bad(2))?,
            objective: field(3).parse().map_err(|_| bad(3))?,
            p: parse(4)?,
            seed: field(5).parse().map_err(|_| bad(5))?,
            episodes: field(6).parse().map_err(|_| bad(6))?,
            mean_timesteps: parse(7)?,
            stderr: parse(8)?,
            recall: parse_opt(9)?,
            precision: parse_opt(10)?,
        });
    }
    if rows.is_empty() && text.trim().is_empty() {
        return Err(Error::Parse { line: 1, msg: "empty results file".into() });
    }
    Ok(rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
    read_results_from(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(12.345678), "12.3457");
        assert_eq!(fmt_sig(0.5), "0.5");
        assert_eq!(fmt_sig(60.0), "60");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(999999.7), "1.00000e6");
        assert_eq!(fmt_sig(9.999996), "10");
        assert_eq!(fmt_sig(0.000123456789), "0.000123457");
        assert_eq!(fmt_sig(1.5e-7), "1.50000e-7");
    }

    fn row(mean: f64) -> ResultRow {
        ResultRow {
            framework: "dpn+re".into(),
            task: "predator_prey".into(),
            attack: AttackKind::Fgsm,
            objective: Objective::A,
            p: 0.3,
            seed: 4,
            episodes: 200,
            mean_timesteps: round_sig(mean),
            stderr: round_sig(0.41234567),
            recall: Some(0.8125),
            precision: None,
        }
    }

    #[test]
    fn header_is_exact() {
        let mut buf = Vec::new();
        write_results_to(&[row(1.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("framework,task,attack,objective,p,seed,episodes,mean_timesteps,stderr,recall,precision\n"));
        assert!(text.contains(",0.412346,0.8125,\n"));
    }

    #[test]
    fn malformed_rows_report_line() {
        let bad = "framework,task,attack,objective,p,seed,episodes,mean_timesteps,stderr,recall,precision\n\
                   dpn,pp,fgsm,A,0.3,1,10,5,0.1,,\n\
                   dpn,pp,fgsm,A,zero,1,10,5,0.1,,\n";
        match read_results_from(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_results_from("a,b\n"), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn round_trip(means in prop::collection::vec(1.0f64..60.0, 1..20)) {
            let rows: Vec<ResultRow> = means.iter().map(|&m| row(m)).collect();
            let mut buf = Vec::new();
            write_results_to(&rows, &mut buf).unwrap();
            let back = read_results_from(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(back, rows);
        }

        #[test]
        fn round_sig_is_idempotent(x in -1e7f64..1e7) {
            prop_assert_eq!(round_sig(round_sig(x)), round_sig(x));
        }
    }
}
