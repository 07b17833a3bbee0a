//! Tables (CSV and JSON) and SVG figures.
//!
//! Figures are drawn from the CSV data files written next to them, never
//! from in-memory results, so every plotted number can be looked up.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationResult;
use crate::cluster::ClusterProfile;
use crate::effects::{Cell, ContrastMatrix, Contrast};
use crate::error::{Error, Result};
use crate::pipeline::{AllocationArtifact, ClusterArtifact, EffectsArtifact, TreeArtifact, WaldArtifact};
use crate::placebo::PlaceboResult;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Exact machine-readable number.
fn num(v: f64) -> String {
    format!("{v}")
}

fn cell_text(c: &Cell) -> String {
    format!("{:.2} ({:.2})", c.point, c.se)
}

fn contrast_tag(c: &Contrast) -> String {
    format!("{}_{}", c.m, c.l)
}

/// Wide layout (potential outcomes on the diagonal, ATEs below) and a long
/// layout carrying the exact numbers.
pub fn contrast_matrix_tables(m: &ContrastMatrix, arm_labels: &[String], stars: impl Fn(&Cell, bool) -> &'static str) -> (Table, Table) {
    let k = m.cells.len();
    let mut header = vec![String::new()];
    header.extend(arm_labels.iter().cloned());
    let mut wide = Table { header, rows: vec![] };
    let mut long = Table::new(&["population", "outcome", "row_arm", "col_arm", "kind", "point", "se"]);
    for i in 0..k {
        let mut row = vec![arm_labels[i].clone()];
        for j in 0..k {
            match &m.cells[i][j] {
                Some(c) => {
                    row.push(format!("{}{}", cell_text(c), stars(c, i == j)));
                    long.rows.push(vec![
                        m.population.clone(),
                        m.outcome.clone(),
                        i.to_string(),
                        j.to_string(),
                        if i == j { "po".into() } else { "ate".into() },
                        num(c.point),
                        num(c.se),
                    ]);
                }
                None => row.push(String::new()),
            }
        }
        wide.rows.push(row);
    }
    (wide, long)
}

pub fn iate_summary_table(e: &EffectsArtifact) -> Table {
    let mut t = Table::new(&["contrast", "n", "share_positive_pct", "share_significant_positive_pct", "std_points", "mean_se"]);
    for s in &e.iate_summaries {
        t.rows.push(vec![
            s.contrast.to_string(),
            s.summary.n.to_string(),
            num(s.summary.share_positive),
            num(s.summary.share_significant_positive),
            num(s.summary.std_points),
            num(s.summary.mean_se),
        ]);
    }
    t
}

/// Heterogeneity p-values in percent: variables as rows, contrasts as columns.
pub fn wald_grid_table(w: &WaldArtifact, list: &str) -> Table {
    let mut contrasts: Vec<Contrast> = Vec::new();
    let mut vars: Vec<String> = Vec::new();
    for g in w.gates.iter().filter(|g| g.list == list) {
        if !contrasts.contains(&g.result.contrast) {
            contrasts.push(g.result.contrast);
        }
        if !vars.contains(&g.result.variable) {
            vars.push(g.result.variable.clone());
        }
    }
    let mut header = vec!["variable".to_string()];
    header.extend(contrasts.iter().map(|c| c.to_string()));
    let mut t = Table { header, rows: vec![] };
    for v in &vars {
        let mut row = vec![v.clone()];
        for c in &contrasts {
            let p = w
                .gates
                .iter()
                .find(|g| g.list == list && &g.result.variable == v && g.result.contrast == *c)
                .and_then(|g| g.result.wald)
                .map(|r| num(100.0 * r.p_value))
                .unwrap_or_default();
            row.push(p);
        }
        t.rows.push(row);
    }
    t
}

pub fn subpop_wald_table(w: &WaldArtifact) -> Table {
    let mut t = Table::new(&["contrast", "population", "point", "se", "statistic", "df", "p_value_pct"]);
    for s in &w.subpopulation {
        for e in &s.estimates {
            t.rows.push(vec![
                s.contrast.to_string(),
                e.population.clone(),
                num(e.point),
                num(e.se),
                num(s.wald.statistic),
                s.wald.df.to_string(),
                num(100.0 * s.wald.p_value),
            ]);
        }
    }
    t
}

/// Clusters as columns, numbered from 1 (least beneficial).
pub fn cluster_profile_table(p: &ClusterProfile) -> Table {
    let mut header = vec!["variable".to_string()];
    header.extend((1..=p.clusters).map(|c| format!("cluster_{c}")));
    Table {
        header,
        rows: p
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.name.clone()];
                row.extend(r.values.iter().map(|&v| num(v)));
                row
            })
            .collect(),
    }
}

pub fn allocation_table(results: &[AllocationResult], arm_labels: &[String]) -> Table {
    let mut header = vec!["rule".to_string()];
    header.extend(arm_labels.iter().map(|a| format!("share_{a}_pct")));
    header.extend(["mean_outcome", "switch_share_pct", "gain_for_switchers_pct"].map(String::from));
    let mut t = Table { header, rows: vec![] };
    for r in results {
        let mut row = vec![r.rule.clone()];
        row.extend(r.shares.iter().map(|&s| num(s)));
        row.push(num(r.mean_outcome));
        row.push(num(r.switch_share));
        row.push(r.gain_for_switchers.map(num).unwrap_or_else(|| "-".into()));
        t.rows.push(row);
    }
    t
}

pub fn tree_table(t: &TreeArtifact, arm_labels: &[String]) -> Table {
    let mut header = vec!["depth".to_string(), "capped".into(), "labeling".into(), "leaves".into(), "train_mean".into(), "eval_mean".into()];
    header.extend(arm_labels.iter().map(|a| format!("eval_share_{a}_pct")));
    header.push("eval_gain_for_switchers_pct".into());
    let mut out = Table { header, rows: vec![] };
    for e in &t.trees {
        let mut row = vec![
            e.depth.to_string(),
            e.capped.to_string(),
            format!("{:?}", e.tree.labeling).to_lowercase(),
            e.tree.leaf_count().to_string(),
            num(e.train.mean_outcome),
            num(e.eval.mean_outcome),
        ];
        row.extend(e.eval.shares.iter().map(|&s| num(s)));
        row.push(e.eval.gain_for_switchers.map(num).unwrap_or_else(|| "-".into()));
        out.rows.push(row);
    }
    out
}

// ---- SVG ----

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e", "#8c564b"];

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Axes { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * M)
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn frame(svg: &mut String, a: &Axes, title: &str, xlab: &str, ylab: &str) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>
<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        H - M,
        W - M,
        H - M,
        H - M,
        W / 2.0,
        H - 16.0,
        escape(xlab),
        H / 2.0,
        H / 2.0,
        escape(ylab)
    );
    for i in 0..=4 {
        let fx = a.x0 + (a.x1 - a.x0) * i as f64 / 4.0;
        let fy = a.y0 + (a.y1 - a.y0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text><text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            a.px(fx),
            H - M + 16.0,
            tick(fx),
            M - 6.0,
            a.py(fy) + 4.0,
            tick(fy)
        );
    }
    if a.y0 < 0.0 && a.y1 > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{M}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
            a.py(0.0),
            W - M,
            a.py(0.0)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(svg: &mut String, a: &Axes, pts: &[(f64, f64)], color: &str) {
    let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", a.px(x), a.py(y))).collect();
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
}

/// Line plot with an optional shaded band `(x, lo, hi)` and markers.
pub fn line_svg(title: &str, xlab: &str, ylab: &str, lines: &[(String, Vec<(f64, f64)>)], band: &[(f64, f64, f64)], markers: &[(f64, f64)]) -> String {
    let xs = lines.iter().flat_map(|l| l.1.iter().map(|p| p.0)).chain(band.iter().map(|b| b.0)).chain(markers.iter().map(|m| m.0));
    let ys = lines
        .iter()
        .flat_map(|l| l.1.iter().map(|p| p.1))
        .chain(band.iter().flat_map(|b| [b.1, b.2]))
        .chain(markers.iter().map(|m| m.1));
    let xs: Vec<f64> = xs.collect();
    let ys: Vec<f64> = ys.collect();
    let a = Axes::fit(xs.iter().copied(), ys.iter().copied());
    let mut svg = String::new();
    frame(&mut svg, &a, title, xlab, ylab);
    if !band.is_empty() {
        let mut pts: Vec<String> = band.iter().map(|b| format!("{:.2},{:.2}", a.px(b.0), a.py(b.2))).collect();
        pts.extend(band.iter().rev().map(|b| format!("{:.2},{:.2}", a.px(b.0), a.py(b.1))));
        let _ = writeln!(svg, r##"<polygon fill="#1f77b4" fill-opacity="0.15" points="{}"/>"##, pts.join(" "));
    }
    for (i, (name, pts)) in lines.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        polyline(&mut svg, &a, pts, c);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{c}">{}</text>"#,
            W - M - 120.0,
            M + 14.0 * i as f64,
            escape(name)
        );
    }
    for &(x, y) in markers {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="black"/>"#, a.px(x), a.py(y));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bars with confidence intervals.
pub fn bars_svg(title: &str, ylab: &str, labels: &[String], values: &[f64], lo: &[f64], hi: &[f64]) -> String {
    let n = labels.len().max(1);
    let a = Axes::fit(
        [0.0, n as f64].into_iter(),
        values.iter().chain(lo).chain(hi).copied().chain(std::iter::once(0.0)),
    );
    let mut svg = String::new();
    let mut a2 = a;
    a2.x0 = 0.0;
    a2.x1 = n as f64;
    frame(&mut svg, &a2, title, "", ylab);
    let bw = (W - 2.0 * M) / n as f64;
    for i in 0..labels.len() {
        let x = M + bw * i as f64;
        let (top, bottom) = if values[i] >= 0.0 { (a2.py(values[i]), a2.py(0.0)) } else { (a2.py(0.0), a2.py(values[i])) };
        let cx = x + bw / 2.0;
        let _ = writeln!(
            svg,
            r##"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" fill-opacity="0.7"/>
<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>
<text x="{cx:.2}" y="{}" text-anchor="middle" font-size="9">{}</text>"##,
            x + bw * 0.15,
            bw * 0.7,
            (bottom - top).max(0.5),
            a2.py(lo[i]),
            a2.py(hi[i]),
            H - M + 28.0,
            escape(&labels[i])
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn column(path: &Path, header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>> {
    let j = header.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
        column: name.into(),
        reason: format!("missing in {}", path.display()),
    })?;
    rows.iter()
        .map(|r| {
            r[j].parse::<f64>().map_err(|_| Error::Data(format!("{}: `{}` is not a number", path.display(), r[j])))
        })
        .collect()
}

/// Figure from a plot data file, chosen by its file-name prefix.
pub fn plot_from_csv(path: &Path) -> Result<String> {
    let (header, rows) = read_csv(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let col = |n: &str| column(path, &header, &rows, n);
    if stem.starts_with("effect_path_") {
        let h = col("horizon")?;
        let (ate, lo, hi) = (col("ate")?, col("lo90")?, col("hi90")?);
        let band: Vec<(f64, f64, f64)> = (0..h.len()).map(|i| (h[i], lo[i], hi[i])).collect();
        Ok(line_svg(stem, "months after start", "ATE", &[("ATE".into(), h.iter().copied().zip(ate).collect())], &band, &[]))
    } else if stem.starts_with("iate_density_") {
        let (x, d) = (col("x")?, col("density")?);
        Ok(line_svg(stem, "IATE", "density", &[("density".into(), x.into_iter().zip(d).collect())], &[], &[]))
    } else if stem.starts_with("gate_smooth_") {
        let (x, g) = (col("x")?, col("smoothed_diff")?);
        Ok(line_svg(stem, "value", "GATE - ATE", &[("smoothed".into(), x.into_iter().zip(g).collect())], &[], &[]))
    } else if stem.starts_with("gate_") {
        let gi = header.iter().position(|h| h == "group").ok_or_else(|| Error::Schema {
            column: "group".into(),
            reason: format!("missing in {}", path.display()),
        })?;
        let labels: Vec<String> = rows.iter().map(|r| r[gi].clone()).collect();
        Ok(bars_svg(stem, "GATE - ATE", &labels, &col("diff")?, &col("lo90")?, &col("hi90")?))
    } else {
        Err(Error::Data(format!("no figure type for {}", path.display())))
    }
}

/// Writes every table and figure derivable from the artifacts in `dir`.
/// Returns the written paths relative to `dir`.
pub fn write_reports(dir: &Path) -> Result<Vec<PathBuf>> {
    let tables = dir.join("tables");
    let plots = dir.join("plots");
    std::fs::create_dir_all(&tables).map_err(|e| Error::io(&tables, e))?;
    std::fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let put = |t: &Table, name: &str, written: &mut Vec<PathBuf>| -> Result<()> {
        let csv = tables.join(format!("{name}.csv"));
        let json = tables.join(format!("{name}.json"));
        t.write_csv(&csv)?;
        t.write_json(&json)?;
        written.push(PathBuf::from("tables").join(format!("{name}.csv")));
        written.push(PathBuf::from("tables").join(format!("{name}.json")));
        Ok(())
    };
    let mut plot_files: Vec<String> = Vec::new();
    let z90 = stats::normal_critical(0.10);

    let effects_path = dir.join("effects.json");
    let mut arm_labels: Option<Vec<String>> = None;
    if effects_path.exists() {
        let e: EffectsArtifact = read_json(&effects_path)?;
        for m in &e.matrices {
            let (wide, long) = contrast_matrix_tables(m, &e.arm_labels, |_, _| "");
            let tag = m.population.replace('=', "");
            put(&wide, &format!("contrast_matrix_{tag}"), &mut written)?;
            put(&long, &format!("contrast_matrix_{tag}_long"), &mut written)?;
        }
        put(&iate_summary_table(&e), "iate_summary", &mut written)?;
        for p in &e.paths {
            let mut t = Table::new(&["horizon", "outcome", "ate", "se", "lo90", "hi90"]);
            for (h, est) in p.estimates.iter().enumerate() {
                t.rows.push(vec![
                    (h + 1).to_string(),
                    est.outcome.clone(),
                    num(est.point),
                    num(est.se),
                    num(est.point - z90 * est.se),
                    num(est.point + z90 * est.se),
                ]);
            }
            let name = format!("effect_path_{}.csv", contrast_tag(&p.contrast));
            t.write_csv(&plots.join(&name))?;
            plot_files.push(name);
        }
        for s in &e.iate_summaries {
            let mut t = Table::new(&["x", "density"]);
            t.rows = s.summary.density.iter().map(|&(x, d)| vec![num(x), num(d)]).collect();
            let name = format!("iate_density_{}.csv", contrast_tag(&s.contrast));
            t.write_csv(&plots.join(&name))?;
            plot_files.push(name);
        }
        arm_labels = Some(e.arm_labels.clone());
    }

    let wald_path = dir.join("wald.json");
    if wald_path.exists() {
        let w: WaldArtifact = read_json(&wald_path)?;
        put(&subpop_wald_table(&w), "wald_subpopulations", &mut written)?;
        let mut lists: Vec<String> = w.gates.iter().map(|g| g.list.clone()).collect();
        lists.dedup();
        for list in &lists {
            put(&wald_grid_table(&w, list), &format!("wald_gate_{list}"), &mut written)?;
        }
        for g in &w.gates {
            let r = &g.result;
            let tag = format!("{}_{}", r.variable, contrast_tag(&r.contrast));
            let mut t = Table::new(&["group", "position", "share", "gate", "se", "ate", "diff", "diff_se", "lo90", "hi90"]);
            for grp in &r.groups {
                t.rows.push(vec![
                    grp.label.clone(),
                    num(grp.position),
                    num(grp.share),
                    num(grp.estimate.point),
                    num(grp.estimate.se),
                    num(r.ate.point),
                    num(grp.diff),
                    num(grp.diff_se),
                    num(grp.diff - z90 * grp.diff_se),
                    num(grp.diff + z90 * grp.diff_se),
                ]);
            }
            let name = format!("gate_{tag}.csv");
            t.write_csv(&plots.join(&name))?;
            plot_files.push(name);
            if let Some(s) = &g.smoothed {
                let mut t = Table::new(&["x", "smoothed_diff"]);
                t.rows = s.iter().map(|&(x, y)| vec![num(x), num(y)]).collect();
                let name = format!("gate_smooth_{tag}.csv");
                t.write_csv(&plots.join(&name))?;
                plot_files.push(name);
            }
        }
    }

    let cluster_path = dir.join("clusters.json");
    if cluster_path.exists() {
        let c: ClusterArtifact = read_json(&cluster_path)?;
        put(&cluster_profile_table(&c.profile), "cluster_profile", &mut written)?;
    }

    let placebo_path = dir.join("placebo.json");
    if placebo_path.exists() {
        let p: PlaceboResult = read_json(&placebo_path)?;
        let labels: Vec<String> = p.arms.iter().map(|a| a.to_string()).collect();
        let (wide, long) = contrast_matrix_tables(&p.matrix, &labels, |c, diag| if diag { "" } else { p.stars(c) });
        put(&wide, "placebo_matrix", &mut written)?;
        put(&long, "placebo_matrix_long", &mut written)?;
    }

    let alloc_path = dir.join("allocation.json");
    if alloc_path.exists() {
        let a: AllocationArtifact = read_json(&alloc_path)?;
        for t in &a.tables {
            put(&allocation_table(&t.results, &a.arm_labels), &format!("allocation_{}", t.caps_label), &mut written)?;
        }
        arm_labels.get_or_insert(a.arm_labels.clone());
    }

    let tree_path = dir.join("trees.json");
    if tree_path.exists() {
        let t: TreeArtifact = read_json(&tree_path)?;
        let labels = arm_labels.clone().unwrap_or_else(|| (0..t.n_arms).map(|a| a.to_string()).collect());
        put(&tree_table(&t, &labels), "policy_trees", &mut written)?;
        for e in &t.trees {
            let name = format!("tree_depth{}_{}.txt", e.depth, if e.capped { "capped" } else { "free" });
            std::fs::write(tables.join(&name), e.tree.render()).map_err(|err| Error::io(tables.join(&name), err))?;
            written.push(PathBuf::from("tables").join(name));
        }
    }

    for name in plot_files {
        let csv = plots.join(&name);
        let svg_name = name.replace(".csv", ".svg");
        let svg = plot_from_csv(&csv)?;
        std::fs::write(plots.join(&svg_name), svg).map_err(|e| Error::io(plots.join(&svg_name), e))?;
        written.push(PathBuf::from("plots").join(name));
        written.push(PathBuf::from("plots").join(svg_name));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_trimmed() {
        assert_eq!(tick(2.5), "2.5");
        assert_eq!(tick(-0.0001), "0");
        assert_eq!(tick(10.0), "10");
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = line_svg("t<1>", "x", "y", &[("a".into(), vec![(0.0, 1.0), (1.0, 2.0)])], &[(0.0, 0.5, 1.5)], &[(0.5, 1.5)]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("t&lt;1&gt;"));
        let b = bars_svg("b", "y", &["g1".into(), "g2".into()], &[1.0, -1.0], &[0.0, -2.0], &[2.0, 0.0]);
        assert_eq!(b.matches("<rect").count(), 3);
    }
}
