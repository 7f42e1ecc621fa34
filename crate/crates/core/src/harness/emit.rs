use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::{to_db, FamilyResult, OutputBundle};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = ["iter", "msd_emp_db", "msd_th_db", "xi_emp_db", "xi_th_db", "sigma_mean"];

fn cell(x: Option<f64>) -> String {
    match x.map(to_db) {
        Some(v) if v.is_finite() => v.to_string(),
        _ => String::new(),
    }
}

/// CSV text of one curve family.
pub fn curves_csv(fam: &FamilyResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(CSV_HEADER).map_err(ser)?;
    for r in &fam.rows {
        w.write_record([
            r.iter.to_string(),
            cell(r.msd_emp),
            cell(r.msd_th),
            cell(r.xi_emp),
            cell(r.xi_th),
            r.sigma_mean.to_string(),
        ])
        .map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn summary_json(bundle: &OutputBundle) -> Result<String> {
    serde_json::to_string_pretty(&bundle.summary).map_err(|e| Error::Serialization(e.to_string()))
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Write CSV curves, the summary document and two charts into `dir`.
pub fn emit(bundle: &OutputBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for fam in &bundle.families {
        out.push(write(dir.join(format!("curves_{}.csv", fam.spec.label)), &curves_csv(fam)?)?);
    }
    out.push(write(dir.join("summary.json"), &summary_json(bundle)?)?);
    let series = |pick: fn(&super::experiment::CurveRow) -> (Option<f64>, Option<f64>)| {
        let mut s = Vec::new();
        for fam in &bundle.families {
            let (emp, th): (Vec<_>, Vec<_>) = fam.rows.iter().map(pick).unzip();
            if emp.iter().any(Option::is_some) {
                s.push((format!("{} (sim)", fam.spec.label), emp.iter().map(|v| v.map_or(f64::NAN, to_db)).collect()));
            }
            if th.iter().any(Option::is_some) {
                s.push((format!("{} (theory)", fam.spec.label), th.iter().map(|v| v.map_or(f64::NAN, to_db)).collect()));
            }
        }
        s
    };
    let msd = series(|r| (r.msd_emp, r.msd_th));
    out.push(write(dir.join("msd.svg"), &line_chart("Network MSD", "MSD (dB)", &msd))?);
    let xi = series(|r| (r.xi_emp, r.xi_th));
    out.push(write(dir.join("privacy.svg"), &line_chart("Inference privacy", "xi (dB)", &xi))?);
    Ok(out)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal SVG line chart; non-finite points break the polyline.
pub fn line_chart(title: &str, ylabel: &str, series: &[(String, Vec<f64>)]) -> String {
    let (w, h, left, right, top, bottom) = (800.0, 500.0, 70.0, 220.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let n = series.iter().map(|s| s.1.len()).max().unwrap_or(0).max(2);
    let finite = series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let sx = |i: usize| left + pw * i as f64 / (n - 1) as f64;
    let sy = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, left - 6.0, y + 4.0);
        let i = (n - 1) * t / 4;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{i}</text>"#, sx(i), top + ph + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(ylabel)
    );
    for (j, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        let dash = if name.ends_with("(theory)") { r#" stroke-dasharray="6 3""# } else { "" };
        let mut path = String::new();
        let mut pen_down = false;
        for (i, &v) in ys.iter().enumerate() {
            if v.is_finite() {
                let _ = write!(path, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(i), sy(v));
                pen_down = true;
            } else {
                pen_down = false;
            }
        }
        if !path.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, path.trim_end());
        }
        let ly = top + 14.0 + 18.0 * j as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 24.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_skips_non_finite_points() {
        let svg = line_chart("t", "y", &[("a (sim)".into(), vec![0.0, f64::NAN, 1.0, 2.0])]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches('M').count() - svg.matches("M ").count(), 2);
    }
}
