//! Report output: CSV merging and self-contained SVG line plots.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, ys: &[f64]) -> Self {
        Series {
            label: label.into(),
            points: ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect(),
            dashed: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A line chart with axes, tick labels and a legend. Non-finite points are
/// skipped.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 180.0, 40.0, 50.0);
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r##"<line x1="{px:.1}" y1="{top}" x2="{px:.1}" y2="{:.1}" stroke="#ddd"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.round() {
        format!("{v:.0}")
    } else if v.abs() >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// A parsed CSV table (no quoting; fields never contain commas).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::invalid("empty CSV"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines
            .enumerate()
            .map(|(i, l)| {
                let r: Vec<String> = l.split(',').map(str::to_string).collect();
                if r.len() == header.len() {
                    Ok(r)
                } else {
                    Err(Error::invalid(format!(
                        "CSV row {} has {} fields, header has {}",
                        i + 2,
                        r.len(),
                        header.len()
                    )))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Concatenates tables with identical headers, prefixing a `source` column.
pub fn merge_tables(tables: &[(String, Table)]) -> Result<Table> {
    let first = tables.first().ok_or_else(|| Error::invalid("nothing to merge"))?;
    let mut header = vec!["source".to_string()];
    header.extend(first.1.header.iter().cloned());
    let mut rows = Vec::new();
    for (name, t) in tables {
        if t.header != first.1.header {
            return Err(Error::invalid(format!(
                "`{name}` has header {:?}, expected {:?}",
                t.header, first.1.header
            )));
        }
        for r in &t.rows {
            let mut row = vec![name.clone()];
            row.extend(r.iter().cloned());
            rows.push(row);
        }
    }
    Ok(Table { header, rows })
}

/// One line per numeric column (other than `x_col`) of a table.
pub fn plot_table(title: &str, table: &Table, x_col: &str) -> Result<String> {
    let xi = table
        .column(x_col)
        .ok_or_else(|| Error::invalid(format!("no column `{x_col}`")))?;
    let parse = |s: &str| s.parse::<f64>().ok();
    let mut series = Vec::new();
    for (ci, name) in table.header.iter().enumerate() {
        if ci == xi {
            continue;
        }
        let points: Option<Vec<(f64, f64)>> = table
            .rows
            .iter()
            .map(|r| Some((parse(&r[xi])?, parse(&r[ci])?)))
            .collect();
        if let Some(points) = points {
            series.push(Series {
                label: name.clone(),
                points,
                dashed: false,
            });
        }
    }
    if series.is_empty() {
        return Err(Error::invalid("table has no numeric columns to plot"));
    }
    Ok(line_plot_svg(title, x_col, "value", &series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let s = [
            Series::new("a<b", &[3.0, 2.0, 1.5]),
            Series::new("flat", &[1.0, 1.0, 1.0]).dashed(),
        ];
        let svg = line_plot_svg("t", "epoch", "mm", &s);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("stroke-dasharray"));
        assert_eq!(svg, line_plot_svg("t", "epoch", "mm", &s));
        let empty = line_plot_svg("t", "x", "y", &[]);
        assert!(empty.contains("</svg>"));
    }

    #[test]
    fn csv_merge_and_plot() {
        let a = Table::parse("epoch,eval\n0,3\n1,2\n").unwrap();
        let b = Table::parse("epoch,eval\n0,5\n").unwrap();
        let m = merge_tables(&[("a".into(), a.clone()), ("b".into(), b)]).unwrap();
        assert_eq!(m.to_csv(), "source,epoch,eval\na,0,3\na,1,2\nb,0,5\n");
        let bad = Table::parse("x,y\n1,2\n").unwrap();
        assert!(merge_tables(&[("a".into(), a.clone()), ("c".into(), bad)]).is_err());
        assert!(Table::parse("x,y\n1\n").is_err());
        assert!(plot_table("p", &a, "epoch").unwrap().contains("<polyline"));
        assert!(plot_table("p", &a, "nope").is_err());
    }
}
