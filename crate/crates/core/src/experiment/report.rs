use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::evaluate::{MetricReport, METRIC_COLUMNS};
use super::sweep::SweepResult;
use crate::error::{Error, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { what: "csv", location: path.display().to_string(), detail: format!("{other:?}") },
    }
}

/// Writes a header and rows. The file is rendered in memory first so a
/// failure never leaves a half-written table behind.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(AsRef::as_ref)).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `sweep.csv` (seed means), `sweep_by_seed.csv` and one SVG line
/// plot per metric under `plots/`.
pub fn emit_report(result: &SweepResult, dir: &Path) -> Result<()> {
    ensure_dir(&dir.join("plots"))?;
    let mut header = vec!["accuracy"];
    header.extend(METRIC_COLUMNS);
    let means = result.means();
    let rows: Vec<Vec<String>> = result
        .accuracies
        .iter()
        .zip(&means)
        .map(|(a, m)| std::iter::once(a.to_string()).chain(m.values().iter().map(f64::to_string)).collect())
        .collect();
    write_csv(&dir.join("sweep.csv"), &header, &rows)?;

    let mut header = vec!["seed", "accuracy"];
    header.extend(METRIC_COLUMNS);
    let mut rows = Vec::new();
    for (seed, reports) in &result.per_seed {
        for (a, m) in result.accuracies.iter().zip(reports) {
            let mut row = vec![seed.to_string(), a.to_string()];
            row.extend(m.values().iter().map(f64::to_string));
            rows.push(row);
        }
    }
    write_csv(&dir.join("sweep_by_seed.csv"), &header, &rows)?;

    for (k, metric) in METRIC_COLUMNS.iter().enumerate() {
        let mean: Vec<f64> = means.iter().map(|m| m.values()[k]).collect();
        let seeds: Vec<Vec<f64>> =
            result.per_seed.iter().map(|(_, r)| r.iter().map(|m| m.values()[k]).collect()).collect();
        let path = dir.join("plots").join(format!("{metric}.svg"));
        fs::write(&path, line_plot(metric, &result.accuracies, &mean, &seeds)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads `sweep_by_seed.csv` back into a result.
pub fn read_sweep_csv(path: &Path) -> Result<SweepResult> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let parse = |s: &str, line: usize| -> Result<f64> {
        s.parse().map_err(|_| Error::Parse {
            what: "sweep csv",
            location: format!("{}:{line}", path.display()),
            detail: format!("bad number '{s}'"),
        })
    };
    let mut accuracies: Vec<f64> = Vec::new();
    let mut per_seed: Vec<(u64, Vec<MetricReport>)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != 2 + METRIC_COLUMNS.len() {
            return Err(Error::Parse {
                what: "sweep csv",
                location: format!("{}:{}", path.display(), line + 2),
                detail: format!("expected {} columns", 2 + METRIC_COLUMNS.len()),
            });
        }
        let seed = parse(&rec[0], line + 2)? as u64;
        let acc = parse(&rec[1], line + 2)?;
        let mut v = [0.0; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = parse(&rec[2 + k], line + 2)?;
        }
        if !accuracies.contains(&acc) {
            accuracies.push(acc);
        }
        match per_seed.iter_mut().find(|(s, _)| *s == seed) {
            Some((_, reports)) => reports.push(MetricReport::from_values(v)),
            None => per_seed.push((seed, vec![MetricReport::from_values(v)])),
        }
    }
    if per_seed.is_empty() || per_seed.iter().any(|(_, r)| r.len() != accuracies.len()) {
        return Err(Error::Parse {
            what: "sweep csv",
            location: path.display().to_string(),
            detail: "every seed needs one row per accuracy".into(),
        });
    }
    Ok(SweepResult { accuracies, per_seed })
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

/// Minimal SVG: faint per-seed lines, the mean line with one marker per
/// accuracy, and labelled axes.
pub fn line_plot(metric: &str, xs: &[f64], mean: &[f64], seeds: &[Vec<f64>]) -> String {
    let all = mean.iter().chain(seeds.iter().flatten()).copied();
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let (x0, x1) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let sx = |x: f64| if x1 > x0 { PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD) } else { W / 2.0 };
    let sy = |y: f64| H - PAD - (y - lo) / (hi - lo) * (H - 2.0 * PAD);
    let points = |ys: &[f64]| {
        xs.iter().zip(ys).map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect::<Vec<_>>().join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{metric} vs node accuracy</text>"#, W / 2.0);
    for x in xs {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{x}</text>"#, sx(*x), H - PAD + 16.0);
    }
    for y in [lo, hi] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{y:.4}</text>"#, PAD - 4.0, sy(y) + 4.0);
    }
    for ys in seeds {
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#bbbbbb"/>"##, points(ys));
    }
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##, points(mean));
    for (x, y) in xs.iter().zip(mean) {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f5fa8"/>"##, sx(*x), sy(*y));
    }
    s.push_str("</svg>\n");
    s
}
