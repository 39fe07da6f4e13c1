//! Self-contained SVG line charts: mean timesteps against attack probability.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attacks::Objective;
use crate::error::Result;

use super::results::ResultRow;

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: (f64, f64, f64, f64) = (56.0, 16.0, 28.0, 44.0); // left, right, top, bottom
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One point of a series: p, mean, stderr (seeds pooled by averaging).
type Point = (f64, f64, f64);

fn group(rows: &[ResultRow]) -> BTreeMap<(String, String, String), BTreeMap<String, Vec<Point>>> {
    let mut acc: BTreeMap<(String, String, String), BTreeMap<String, BTreeMap<u64, Vec<(f64, f64)>>>> = BTreeMap::new();
    for r in rows {
        let obj = match r.objective {
            Objective::A => String::new(),
            Objective::B => "_B".into(),
        };
        acc.entry((r.task.clone(), r.attack.to_string(), obj))
            .or_default()
            .entry(r.framework.clone())
            .or_default()
            .entry(r.p.to_bits())
            .or_default()
            .push((r.mean_timesteps, r.stderr));
    }
    acc.into_iter()
        .map(|(k, series)| {
            let series = series
                .into_iter()
                .map(|(name, by_p)| {
                    let mut pts: Vec<Point> = by_p
                        .into_iter()
                        .map(|(bits, v)| {
                            let n = v.len() as f64;
                            let mean = v.iter().map(|x| x.0).sum::<f64>() / n;
                            let se = (v.iter().map(|x| x.1 * x.1).sum::<f64>()).sqrt() / n;
                            (f64::from_bits(bits), mean, se)
                        })
                        .collect();
                    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                    (name, pts)
                })
                .collect();
            (k, series)
        })
        .collect()
}

fn chart(title: &str, series: &BTreeMap<String, Vec<Point>>) -> String {
    let pts = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(p, m, s) in pts {
        x0 = x0.min(p);
        x1 = x1.max(p);
        y0 = y0.min(m - s);
        y1 = y1.max(m + s);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.05;
        x1 += 0.05;
    }
    let pad = ((y1 - y0) * 0.1).max(0.5);
    y0 = (y0 - pad).max(0.0);
    y1 += pad;
    let (l, r, t, b) = MARGIN;
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (W - l - r);
    let sy = |y: f64| H - b - (y - y0) / (y1 - y0) * (H - t - b);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{l}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, H - b, W - r, H - b);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{:.1}" stroke="black"/>"#, H - b);
    for k in 0..=4 {
        let xv = x0 + (x1 - x0) * k as f64 / 4.0;
        let yv = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#, sx(xv), H - b + 14.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.1}</text>"#, l - 4.0, sy(yv) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">attack probability p</text>"#, W / 2.0, H - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">mean timesteps</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let upper: Vec<String> = pts.iter().map(|&(p, m, e)| format!("{:.1},{:.1}", sx(p), sy(m + e))).collect();
        let lower: Vec<String> = pts.iter().rev().map(|&(p, m, e)| format!("{:.1},{:.1}", sx(p), sy(m - e))).collect();
        let _ = writeln!(s, r#"<polygon points="{} {}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        let line: Vec<String> = pts.iter().map(|&(p, m, _)| format!("{:.1},{:.1}", sx(p), sy(m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, line.join(" "));
        for &(p, m, _) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{c}"/>"#, sx(p), sy(m));
        }
        let ly = t + 12.0 + 14.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="10" height="3" fill="{c}"/>"#, W - r - 110.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, W - r - 95.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes one chart per (task, attack, objective) into `dir` and returns the
/// file paths in sorted order. Empty input writes nothing.
pub fn plot(rows: &[ResultRow], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        log::warn!("no result rows to plot");
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for ((task, attack, obj), series) in group(rows) {
        let path = dir.join(format!("{task}_{attack}{obj}.svg"));
        let title = format!("{task} / {attack}{}", if obj.is_empty() { "" } else { " (objective B)" });
        fs::write(&path, chart(&title, &series))?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackKind;

    fn row(task: &str, attack: AttackKind, fw: &str, p: f64, mean: f64) -> ResultRow {
        ResultRow {
            framework: fw.into(),
            task: task.into(),
            attack,
            objective: Objective::A,
            p,
            seed: 0,
            episodes: 10,
            mean_timesteps: mean,
            stderr: 0.5,
            recall: None,
            precision: None,
        }
    }

    #[test]
    fn one_chart_per_task_and_attack() {
        let mut rows = Vec::new();
        let attacks = [AttackKind::Random, AttackKind::Gaussian, AttackKind::Fgsm, AttackKind::Pgd];
        for task in ["food_collector", "predator_prey", "treasure_hunt"] {
            for a in attacks {
                for fw in ["dpn", "dpn+re"] {
                    for p in [0.0, 0.25, 0.5] {
                        rows.push(row(task, a, fw, p, 10.0 + 20.0 * p));
                    }
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let files = plot(&rows, dir.path()).unwrap();
        assert_eq!(files.len(), 12);
        let text = fs::read_to_string(&files[0]).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        let again = plot(&rows, dir.path()).unwrap();
        assert_eq!(fs::read(&again[0]).unwrap(), text.as_bytes());
    }

    #[test]
    fn single_point_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let files = plot(&[row("predator_prey", AttackKind::Fgsm, "dpn", 0.3, 12.0)], dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        assert!(!fs::read_to_string(&files[0]).unwrap().contains("NaN"));
        assert!(plot(&[], dir.path()).unwrap().is_empty());
    }
}
