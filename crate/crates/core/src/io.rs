//! Output helpers: atomic file writes, versioned JSON and SVG branch plots.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::SCHEMA;
use crate::error::Result;
use crate::perturb::Branch;

/// Writes `contents` to `path` through a temporary sibling and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema: u32,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with a leading `"schema": 1` field. `body` must serialize as a
/// map.
pub fn to_versioned_json<T: Serialize>(body: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Versioned { schema: SCHEMA, body })?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    write_atomic(path, to_versioned_json(body)?.as_bytes())
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Branch diagram: one polyline per tracked branch over `ε`, uncertain
/// branches dashed.
pub fn branches_svg(branches: &[Branch], title: &str) -> String {
    use std::fmt::Write as _;
    let (w, h, pad) = (640.0, 480.0, 48.0);
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for b in branches {
        for (&e, &v) in b.eps_grid.iter().zip(&b.values) {
            xs = (xs.0.min(e), xs.1.max(e));
            ys = (ys.0.min(v), ys.1.max(v));
        }
    }
    if !xs.0.is_finite() {
        xs = (-1.0, 1.0);
        ys = (0.0, 1.0);
    }
    let span = |r: (f64, f64)| if r.1 > r.0 { r.1 - r.0 } else { 1.0 };
    let px = |e: f64| pad + (e - xs.0) / span(xs) * (w - 2.0 * pad);
    let py = |v: f64| h - pad - (v - ys.0) / span(ys) * (h - 2.0 * pad);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    )
    .unwrap();
    writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(title)).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">ε ∈ [{:.3}, {:.3}]</text>"#, w / 2.0, h - 14.0, xs.0, xs.1).unwrap();
    writeln!(s, r#"<text x="8" y="{}" font-family="sans-serif" font-size="12">λ ∈ [{:.3}, {:.3}]</text>"#, pad - 8.0, ys.0, ys.1).unwrap();
    if xs.0 < 0.0 && xs.1 > 0.0 {
        let x0 = px(0.0);
        writeln!(s, r##"<line x1="{x0:.2}" y1="{pad}" x2="{x0:.2}" y2="{}" stroke="#bbb"/>"##, h - pad).unwrap();
    }
    for b in branches {
        let pts: Vec<String> =
            b.eps_grid.iter().zip(&b.values).map(|(&e, &v)| format!("{:.2},{:.2}", px(e), py(v))).collect();
        let dash = if b.uncertain { r#" stroke-dasharray="4 3""# } else { "" };
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"{dash}/>"#, pts.join(" "), color(b.origin)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn color(i: usize) -> &'static str {
    const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn versioned_json_leads_with_schema() {
        #[derive(Serialize)]
        struct Body {
            x: f64,
        }
        let s = to_versioned_json(&Body { x: 0.1 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["x"], 0.1);
        assert!(s.trim_start().starts_with("{\n  \"schema\": 1"));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-17, 123456.789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn svg_is_well_formed() {
        let s = branches_svg(&[], "empty & <nothing>");
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("&amp; &lt;nothing&gt;"));
    }
}
