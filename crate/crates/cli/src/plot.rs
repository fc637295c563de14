// Deterministic SVG charts from the CSV files the other commands write.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Reachability,
    Loss,
    Success,
}

impl PlotKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reachability" => Some(PlotKind::Reachability),
            "loss" => Some(PlotKind::Loss),
            "success" => Some(PlotKind::Success),
            _ => None,
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            PlotKind::Reachability => &["frame", "normalized_distance"],
            PlotKind::Loss => &["step", "loss"],
            PlotKind::Success => &["method", "domain", "lift_rate", "stack_rate"],
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn num(&self, row: usize, col: usize) -> Result<Option<f64>> {
        let s = &self.rows[row][col];
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .with_context(|| format!("row {}: column {} is not a number: {s:?}", row + 1, self.header[col]))
    }
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, xlab: &str, ylab: &str, x: (f64, f64), y: (f64, f64)) {
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0} {y1}V{y0}H{x1}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, esc(xlab));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylab)
    );
    for (v, px) in [(x.0, x0), (x.1, x1)] {
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 15.0, fmt(v));
    }
    for (v, py) in [(y.0, y0), (y.1, y1)] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 4.0, py + 4.0, fmt(v));
    }
}

fn fmt(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Polylines for `(name, points)` series on shared axes.
fn line_chart(title: &str, xlab: &str, ylab: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut xl, mut xh, mut yl, mut yh) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        xl = xl.min(x);
        xh = xh.max(x);
        yl = yl.min(y);
        yh = yh.max(y);
    }
    if !xl.is_finite() {
        (xl, xh, yl, yh) = (0.0, 1.0, 0.0, 1.0);
    }
    let (xl, xh) = span(xl, xh);
    let (yl, yh) = span(yl, yh);
    let mut s = header(title);
    axes(&mut s, xlab, ylab, (xl, xh), (yl, yh));
    let px = |x: f64| MARGIN + (x - xl) / (xh - xl) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - yl) / (yh - yl) * (H - 2.0 * MARGIN);
    for (i, (name, p)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let d: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, d.join(" "));
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="3" fill="{c}"/>"#, W - MARGIN - 120.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - MARGIN - 105.0, esc(name));
    }
    s.push_str("</svg>\n");
    s
}

fn reachability(t: &Table) -> Result<String> {
    let fc = t.col("frame").expect("checked");
    let dc = t.col("normalized_distance").expect("checked");
    let sc = t.col("series");
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in 0..t.rows.len() {
        let name = sc.map_or_else(|| "distance".to_string(), |c| t.rows[r][c].clone());
        let p = (t.num(r, fc)?.unwrap_or(0.0), t.num(r, dc)?.unwrap_or(0.0));
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => v.push(p),
            None => groups.push((name, vec![p])),
        }
    }
    Ok(line_chart("Reachability distance", "frame", "normalized distance", &groups))
}

fn loss(t: &Table) -> Result<String> {
    let sc = t.col("step").expect("checked");
    let mut series = Vec::new();
    for (c, name) in t.header.iter().enumerate() {
        if c == sc || !(name == "loss" || name.starts_with("loss_") || name.ends_with("_loss")) {
            continue;
        }
        let mut p = Vec::new();
        for r in 0..t.rows.len() {
            if let (Some(x), Some(y)) = (t.num(r, sc)?, t.num(r, c)?) {
                p.push((x, y));
            }
        }
        series.push((name.clone(), p));
    }
    Ok(line_chart("Training loss", "step", "loss", &series))
}

fn success(t: &Table) -> Result<String> {
    let (mc, dc) = (t.col("method").expect("checked"), t.col("domain").expect("checked"));
    let (lc, sc) = (t.col("lift_rate").expect("checked"), t.col("stack_rate").expect("checked"));
    let mut methods: Vec<String> = Vec::new();
    let mut domains: Vec<String> = Vec::new();
    let mut acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
    for r in 0..t.rows.len() {
        let m = &t.rows[r][mc];
        let d = &t.rows[r][dc];
        if !methods.contains(m) {
            methods.push(m.clone());
        }
        if !domains.contains(d) {
            domains.push(d.clone());
        }
        let key = (
            domains.iter().position(|x| x == d).expect("pushed"),
            methods.iter().position(|x| x == m).expect("pushed"),
        );
        let e = acc.entry(key).or_insert((0.0, 0.0, 0));
        e.0 += t.num(r, lc)?.unwrap_or(0.0);
        e.1 += t.num(r, sc)?.unwrap_or(0.0);
        e.2 += 1;
    }
    let mut s = header("Lifting (light) and stacking (dark) success");
    axes(&mut s, "domain", "success rate", (0.0, domains.len() as f64), (0.0, 1.0));
    let gw = (W - 2.0 * MARGIN) / domains.len().max(1) as f64;
    let bw = gw * 0.8 / methods.len().max(1) as f64;
    let py = |y: f64| H - MARGIN - y * (H - 2.0 * MARGIN);
    for (di, d) in domains.iter().enumerate() {
        let gx = MARGIN + gw * di as f64 + gw * 0.1;
        let _ = writeln!(s, r#"<g id="domain-{}">"#, esc(d));
        for (mi, _) in methods.iter().enumerate() {
            let Some(&(l, st, n)) = acc.get(&(di, mi)) else { continue };
            let (l, st) = (l / n as f64, st / n as f64);
            let x = gx + bw * mi as f64;
            let c = COLORS[mi % COLORS.len()];
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.4"/>"#,
                py(l),
                bw * 0.9,
                py(0.0) - py(l)
            );
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}"/>"#,
                py(st),
                bw * 0.9,
                py(0.0) - py(st)
            );
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, gx + gw * 0.4, H - MARGIN + 28.0, esc(d));
        s.push_str("</g>\n");
    }
    for (mi, m) in methods.iter().enumerate() {
        let ly = MARGIN + 14.0 * mi as f64;
        let c = COLORS[mi % COLORS.len()];
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="8" fill="{c}"/>"#, W - MARGIN - 60.0, ly - 8.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - MARGIN - 45.0, esc(m));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders `csv` as an SVG chart of the given kind.
pub fn plot(csv: &str, kind: PlotKind) -> Result<String> {
    let t = Table::parse(csv)?;
    for c in kind.required() {
        if t.col(c).is_none() {
            bail!("schema mismatch: missing column {c:?}");
        }
    }
    match kind {
        PlotKind::Reachability => reachability(&t),
        PlotKind::Loss => loss(&t),
        PlotKind::Success => success(&t),
    }
}

pub fn parse_kind(s: &str) -> Result<PlotKind> {
    PlotKind::parse(s).ok_or_else(|| anyhow!("unknown plot kind {s:?} (reachability, loss, success)"))
}
