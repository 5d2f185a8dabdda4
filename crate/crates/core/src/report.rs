//! Aggregation of evaluation rows into a models × multipliers table and a
//! learning-curve chart.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::corpus::Rung;
use crate::error::{Error, Result};
use crate::models::ModelKind;

pub const RESULTS_HEADER: &str = "model,multiplier,fold,n_test,theta,sample_f1,precision,recall";

/// One row of the evaluation CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub model: ModelKind,
    pub rung: Rung,
    pub fold: usize,
    pub n_test: usize,
    pub theta: f64,
    pub sample_f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn field<T: FromStr>(value: &str, name: &str, line: usize) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("results line {line}: invalid {name} `{value}`")))
}

/// Parses the evaluation CSV, header included.
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Validation(format!("unexpected results header `{h}`")));
        }
        None => return Err(Error::Validation("results file is empty".into())),
    }
    lines
        .map(|(i, line)| {
            let n = i + 1;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Validation(format!(
                    "results line {n}: expected 8 fields, found {}",
                    f.len()
                )));
            }
            Ok(ResultRow {
                model: f[0].parse()?,
                rung: f[1].parse()?,
                fold: field(f[2], "fold", n)?,
                n_test: field(f[3], "n_test", n)?,
                theta: field(f[4], "theta", n)?,
                sample_f1: field(f[5], "sample_f1", n)?,
                precision: field(f[6], "precision", n)?,
                recall: field(f[7], "recall", n)?,
            })
        })
        .collect()
}

/// Mean sample F1 over folds per (model, rung), in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub cells: BTreeMap<(ModelKind, Rung), (f64, usize)>,
}

impl Table {
    pub fn from_rows(rows: &[ResultRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("no evaluation rows to report".into()));
        }
        let mut sums: BTreeMap<(ModelKind, Rung), (f64, usize)> = BTreeMap::new();
        for r in rows {
            let e = sums.entry((r.model, r.rung)).or_default();
            e.0 += r.sample_f1;
            e.1 += 1;
        }
        let cells = sums
            .into_iter()
            .map(|(k, (sum, n))| (k, (sum / n as f64, n)))
            .collect();
        Ok(Table { cells })
    }

    pub fn mean(&self, model: ModelKind, rung: Rung) -> Option<f64> {
        self.cells.get(&(model, rung)).map(|c| c.0)
    }

    pub fn models(&self) -> Vec<ModelKind> {
        let mut m: Vec<ModelKind> = self.cells.keys().map(|k| k.0).collect();
        m.dedup();
        m
    }

    pub fn rungs(&self) -> Vec<Rung> {
        let mut r: Vec<Rung> = self.cells.keys().map(|k| k.1).collect();
        r.sort();
        r.dedup();
        r
    }

    /// Title rungs in ascending size.
    fn title_rungs(&self) -> Vec<Rung> {
        let mut r: Vec<Rung> = self.rungs().into_iter().filter(|r| r.is_title()).collect();
        r.sort_by_key(|r| match r {
            Rung::Titles(x) => (0, *x),
            _ => (1, 0),
        });
        r
    }

    /// `model,T1,...,Tall,full` with one row per model; missing cells empty.
    pub fn to_csv(&self) -> String {
        let mut columns = self.title_rungs();
        if self.rungs().contains(&Rung::FullText) {
            columns.push(Rung::FullText);
        }
        let mut s = String::from("model");
        for r in &columns {
            match r {
                Rung::FullText => s.push_str(",full"),
                other => {
                    let _ = write!(s, ",T{other}");
                }
            }
        }
        s.push('\n');
        for m in self.models() {
            s.push_str(m.name());
            for &r in &columns {
                match self.mean(m, r) {
                    Some(v) => {
                        let _ = write!(s, ",{v:.6}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Line chart: x = title multiplier, y = mean F1, one solid line per
    /// model and a dashed horizontal line at each model's full-text score.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 420.0;
        const LEFT: f64 = 60.0;
        const RIGHT: f64 = 150.0;
        const TOP: f64 = 30.0;
        const BOTTOM: f64 = 50.0;
        const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

        let xs = self.title_rungs();
        let values: Vec<f64> = self.cells.values().map(|c| c.0).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (y_min, y_max) = {
            let pad = ((hi - lo) * 0.1).max(0.02);
            ((lo - pad).max(0.0), (hi + pad).min(1.0))
        };
        let plot_w = W - LEFT - RIGHT;
        let plot_h = H - TOP - BOTTOM;
        let x_at = |i: usize| {
            if xs.len() <= 1 {
                LEFT + plot_w / 2.0
            } else {
                LEFT + plot_w * i as f64 / (xs.len() - 1) as f64
            }
        };
        let y_at = |v: f64| TOP + plot_h * (1.0 - (v - y_min) / (y_max - y_min));

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        // axes
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
            TOP + plot_h,
            LEFT + plot_w,
            TOP + plot_h
        );
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#,
            TOP + plot_h
        );
        for i in 0..=4 {
            let v = y_min + (y_max - y_min) * i as f64 / 4.0;
            let y = y_at(v);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
                LEFT - 6.0,
                y + 4.0
            );
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
                LEFT + plot_w
            );
        }
        for (i, r) in xs.iter().enumerate() {
            let label = match r {
                Rung::AllTitles => "T_all".to_string(),
                other => format!("T{other}"),
            };
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
                x_at(i),
                TOP + plot_h + 18.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">training set size</text>"#,
            LEFT + plot_w / 2.0,
            H - 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">sample-based F1</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0
        );

        for (mi, m) in self.models().into_iter().enumerate() {
            let color = COLORS[mi % COLORS.len()];
            let points: Vec<(f64, f64)> = xs
                .iter()
                .enumerate()
                .filter_map(|(i, &r)| self.mean(m, r).map(|v| (x_at(i), y_at(v))))
                .collect();
            if !points.is_empty() {
                let path: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    path.join(" ")
                );
                for (x, y) in &points {
                    let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#);
                }
            }
            if let Some(v) = self.mean(m, Rung::FullText) {
                let y = y_at(v);
                let _ = writeln!(
                    s,
                    r#"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="1.5" stroke-dasharray="6,4"/>"#,
                    LEFT + plot_w
                );
            }
            let ly = TOP + 16.0 * mi as f64 + 8.0;
            let lx = LEFT + plot_w + 15.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 26.0,
                ly + 4.0,
                m.name()
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(rows: &[&str]) -> String {
        let mut s = format!("{RESULTS_HEADER}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn cells_are_fold_means() {
        let rows = parse_results(&csv(&[
            "mlp,1,0,10,0.2,0.40,0.5,0.5",
            "mlp,1,1,10,0.2,0.50,0.5,0.5",
            "mlp,1,2,10,0.2,0.90,0.5,0.5",
            "cnn,2,0,10,0.2,0.30,0.5,0.5",
        ]))
        .unwrap();
        let t = Table::from_rows(&rows).unwrap();
        assert!((t.mean(ModelKind::Mlp, Rung::Titles(1)).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(t.cells[&(ModelKind::Mlp, Rung::Titles(1))].1, 3);
        assert_eq!(t.mean(ModelKind::Cnn, Rung::Titles(1)), None);
        let table = t.to_csv();
        assert_eq!(table, "model,T1,T2\nmlp,0.600000,\ncnn,,0.300000\n");
    }

    #[test]
    fn full_grid_fills_every_cell() {
        let mut rows = Vec::new();
        for m in ["base-mlp", "mlp", "cnn", "lstm"] {
            for r in ["1", "2", "4", "8", "all"] {
                rows.push(format!("{m},{r},0,5,0.2,0.5,0.5,0.5"));
            }
        }
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let t = Table::from_rows(&parse_results(&csv(&refs)).unwrap()).unwrap();
        assert_eq!(t.cells.len(), 20);
        let text = t.to_csv();
        assert_eq!(text.lines().next(), Some("model,T1,T2,T4,T8,Tall"));
        assert!(text.lines().skip(1).all(|l| !l.contains(",,") && !l.ends_with(',')));
    }

    #[test]
    fn single_point_chart_renders() {
        let rows = parse_results(&csv(&["mlp,1,0,5,0.2,0.5,0.5,0.5"])).unwrap();
        let svg = Table::from_rows(&rows).unwrap().to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<polyline"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn fulltext_scores_are_dashed() {
        let rows = parse_results(&csv(&[
            "mlp,1,0,5,0.2,0.5,0.5,0.5",
            "mlp,full,0,5,0.2,0.6,0.5,0.5",
        ]))
        .unwrap();
        let t = Table::from_rows(&rows).unwrap();
        assert!(t.to_svg().contains("stroke-dasharray"));
        assert_eq!(t.to_csv().lines().next(), Some("model,T1,full"));
    }

    #[test]
    fn empty_or_malformed_results_are_rejected() {
        assert!(parse_results("").is_err());
        assert!(Table::from_rows(&parse_results(&csv(&[])).unwrap()).is_err());
        assert!(parse_results(&csv(&["mlp,1,0"])).is_err());
        assert!(parse_results(&csv(&["gru,1,0,5,0.2,0.5,0.5,0.5"])).is_err());
        assert!(parse_results("a,b\n").is_err());
    }
}
