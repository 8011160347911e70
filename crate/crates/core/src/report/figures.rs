//! Static figures drawn from the bundle's CSV tables only, so every plotted
//! value can be traced to a table.

use std::collections::BTreeMap;
use std::path::PathBuf;

use super::svg::{color, Scale, Svg};
use super::Bundle;
use crate::distance::Metric;
use crate::error::{Error, Result};

/// Figure file stems, in emission order.
pub const FIGURES: [&str; 5] = ["pcoa", "biplot", "heatmap", "shannon_boxplot", "relative_abundance"];

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("table has no `{name}` column")))
    }

    fn num(&self, row: usize, col: usize) -> Result<f64> {
        let cell = &self.rows[row][col];
        cell.parse::<f64>()
            .map_err(|_| Error::InvalidInput(format!("non-numeric cell `{cell}`")))
    }
}

/// `None` when the file does not exist.
fn read_table(bundle: &Bundle, name: &str) -> Result<Option<Table>> {
    let path = bundle.path(name);
    if !path.is_file() {
        return Ok(None);
    }
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::MalformedCsv {
        file: name.into(),
        line: 0,
        message: e.to_string(),
    })?;
    let malformed = |e: csv::Error| Error::MalformedCsv {
        file: name.into(),
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };
    let headers = rdr.headers().map_err(malformed)?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(malformed))
        .collect::<Result<_>>()?;
    Ok(Some(Table { headers, rows }))
}

enum Outcome {
    Drawn(String),
    Skipped(String),
}

/// Writes whichever of the five figures have their tables present; a missing
/// table skips that figure with a warning. Returns the paths written.
pub fn emit_figures(bundle: &mut Bundle, metric: Metric, group: &str) -> Result<Vec<PathBuf>> {
    let m = metric.name();
    let mut written = Vec::new();
    for stem in FIGURES {
        let outcome = match stem {
            "pcoa" => pcoa_scatter(bundle, m, group)?,
            "biplot" => biplot(bundle, m)?,
            "heatmap" => heatmap(bundle)?,
            "shannon_boxplot" => boxplot(bundle)?,
            _ => stacked_bars(bundle)?,
        };
        match outcome {
            Outcome::Drawn(svg) => {
                let name = format!("{stem}.svg");
                bundle.write_bytes(&name, svg.as_bytes())?;
                written.push(bundle.path(&name));
            }
            Outcome::Skipped(why) => log::warn!("figure `{stem}` skipped: {why}"),
        }
    }
    Ok(written)
}

macro_rules! require {
    ($bundle:expr, $name:expr) => {
        match read_table($bundle, &$name)? {
            Some(t) => t,
            None => return Ok(Outcome::Skipped(format!("missing table {}", $name))),
        }
    };
}

struct Points {
    labels: Vec<String>,
    groups: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
}

fn read_scores(t: &Table, group: &str) -> Result<Option<Points>> {
    let (Ok(cx), Ok(cy)) = (t.col("PCoA1"), t.col("PCoA2")) else {
        return Ok(None);
    };
    let cg = t.col(group).ok();
    let mut p = Points {
        labels: Vec::new(),
        groups: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
    };
    for r in 0..t.rows.len() {
        p.labels.push(t.rows[r][0].clone());
        p.groups.push(cg.map(|c| t.rows[r][c].clone()).unwrap_or_default());
        p.x.push(t.num(r, cx)?);
        p.y.push(t.num(r, cy)?);
    }
    Ok(Some(p))
}

const W: f64 = 640.0;
const H: f64 = 520.0;
const MARGIN: f64 = 60.0;

fn group_colors(groups: &[String]) -> BTreeMap<String, usize> {
    let mut map = BTreeMap::new();
    for g in groups {
        let next = map.len();
        map.entry(g.clone()).or_insert(next);
    }
    map
}

fn legend(svg: &mut Svg, colors: &BTreeMap<String, usize>, x: f64) {
    let mut entries: Vec<(&String, &usize)> = colors.iter().collect();
    entries.sort_by_key(|(_, &i)| i);
    for (row, (name, &i)) in entries.into_iter().enumerate() {
        let y = MARGIN + 14.0 * row as f64;
        svg.rect(x, y - 8.0, 10.0, 10.0, color(i), None);
        svg.text(x + 14.0, y, name, 10.0, "start");
    }
}

fn axes(svg: &mut Svg, xs: &Scale, ys: &Scale, x_title: &str, y_title: &str, plot_right: f64) {
    svg.line(MARGIN, H - MARGIN, plot_right, H - MARGIN, "#333333", 1.0);
    svg.line(MARGIN, MARGIN, MARGIN, H - MARGIN, "#333333", 1.0);
    let (x0, y0) = (xs.at(0.0), ys.at(0.0));
    if (MARGIN..=plot_right).contains(&x0) {
        svg.line(x0, MARGIN, x0, H - MARGIN, "#cccccc", 0.5);
    }
    if (MARGIN..=H - MARGIN).contains(&y0) {
        svg.line(MARGIN, y0, plot_right, y0, "#cccccc", 0.5);
    }
    svg.text((MARGIN + plot_right) / 2.0, H - 20.0, x_title, 12.0, "middle");
    svg.text_rotated(20.0, H / 2.0, y_title, 12.0, -90.0);
}

fn pcoa_scatter(bundle: &Bundle, m: &str, group: &str) -> Result<Outcome> {
    let t = require!(bundle, format!("pcoa_{m}_scores.csv"));
    let Some(p) = read_scores(&t, group)? else {
        return Ok(Outcome::Skipped("fewer than two ordination axes".into()));
    };
    let right = W - 160.0;
    let xs = Scale::fit(&p.x, MARGIN, right);
    let ys = Scale::fit(&p.y, H - MARGIN, MARGIN);
    let colors = group_colors(&p.groups);
    let mut svg = Svg::new(W, H);
    svg.title(&format!("PCoA ({m})"));
    axes(&mut svg, &xs, &ys, "PCoA1", "PCoA2", right);
    for i in 0..p.x.len() {
        svg.circle(xs.at(p.x[i]), ys.at(p.y[i]), 3.0, color(colors[&p.groups[i]]), 0.6);
    }
    if let Some(c) = read_table(bundle, &format!("centroids_{m}_{group}.csv"))? {
        let (cl, cx, cy) = (c.col("level")?, c.col("PCoA1")?, c.col("PCoA2")?);
        for r in 0..c.rows.len() {
            let level = &c.rows[r][cl];
            let (x, y) = (xs.at(c.num(r, cx)?), ys.at(c.num(r, cy)?));
            let col = colors.get(level).map(|&i| color(i)).unwrap_or("#000000");
            svg.rect(x - 5.0, y - 5.0, 10.0, 10.0, col, Some("#000000"));
            svg.text(x + 7.0, y - 7.0, level, 10.0, "start");
        }
    }
    legend(&mut svg, &colors, right + 20.0);
    Ok(Outcome::Drawn(svg.finish()))
}

fn biplot(bundle: &Bundle, m: &str) -> Result<Outcome> {
    let t = require!(bundle, format!("pcoa_{m}_scores.csv"));
    let arrows = require!(bundle, format!("envfit_{m}.csv"));
    let Some(p) = read_scores(&t, "")? else {
        return Ok(Outcome::Skipped("fewer than two ordination axes".into()));
    };
    let (Ok(dx), Ok(dy)) = (arrows.col("dir_PCoA1"), arrows.col("dir_PCoA2")) else {
        return Ok(Outcome::Skipped("fitted vectors are not on PCoA1/PCoA2".into()));
    };
    let r2c = arrows.col("r2")?;
    let right = W - 40.0;
    let reach = p.x.iter().chain(&p.y).fold(0.0f64, |a, &v| a.max(v.abs()));
    let xs = Scale::fit(p.x.iter().chain([&-reach, &reach]), MARGIN, right);
    let ys = Scale::fit(p.y.iter().chain([&-reach, &reach]), H - MARGIN, MARGIN);
    let mut svg = Svg::new(W, H);
    svg.title(&format!("PCoA biplot ({m})"));
    axes(&mut svg, &xs, &ys, "PCoA1", "PCoA2", right);
    for i in 0..p.x.len() {
        svg.circle(xs.at(p.x[i]), ys.at(p.y[i]), 2.5, "#7f7f7f", 0.5);
    }
    // Arrow length sqrt(r2), drawn at 80% of the score range.
    let mult = 0.8 * reach;
    for r in 0..arrows.rows.len() {
        if arrows.rows[r][dx].is_empty() {
            continue;
        }
        let len = arrows.num(r, r2c)?.max(0.0).sqrt() * mult;
        let (ex, ey) = (arrows.num(r, dx)? * len, arrows.num(r, dy)? * len);
        svg.arrow(xs.at(0.0), ys.at(0.0), xs.at(ex), ys.at(ey), "#333333");
        svg.text(xs.at(ex * 1.08), ys.at(ey * 1.08), &arrows.rows[r][0], 11.0, "middle");
    }
    Ok(Outcome::Drawn(svg.finish()))
}

fn heatmap(bundle: &Bundle) -> Result<Outcome> {
    let t = require!(bundle, "heatmap.csv");
    let labels: Vec<String> = t.headers[1..].to_vec();
    let n = labels.len();
    if n == 0 {
        return Ok(Outcome::Skipped("empty heat-map table".into()));
    }
    let mut values = vec![vec![0.0; n]; n];
    let mut vmax = 0.0f64;
    for (i, row) in values.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = t.num(i, j + 1)?;
            vmax = vmax.max(*v);
        }
    }
    let left = 150.0;
    let top = 150.0;
    let cell = ((W.min(H + 120.0) - left - 20.0) / n as f64).min(40.0);
    let size = left + cell * n as f64 + 20.0;
    let mut svg = Svg::new(size, size + 110.0);
    svg.title("Ward clustering of ethnic profiles");

    // Dendrogram over the columns, from the merge table when present.
    if let Some(mt) = read_table(bundle, "dendrogram_merges.csv")? {
        let (cl, cr, ch) = (mt.col("left")?, mt.col("right")?, mt.col("height")?);
        let mut pos: BTreeMap<String, (f64, f64)> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), (left + (i as f64 + 0.5) * cell, 0.0)))
            .collect();
        let hmax = (0..mt.rows.len()).map(|r| mt.num(r, ch)).collect::<Result<Vec<_>>>()?;
        let hmax = hmax.iter().fold(0.0f64, |a, &b| a.max(b));
        let ys = Scale::new(0.0, hmax.max(f64::MIN_POSITIVE), top - 5.0, 35.0);
        for r in 0..mt.rows.len() {
            let h = mt.num(r, ch)?;
            let (Some(&(xa, ha)), Some(&(xb, hb))) = (pos.get(&mt.rows[r][cl]), pos.get(&mt.rows[r][cr])) else {
                return Ok(Outcome::Skipped("merge table does not match heat-map labels".into()));
            };
            let y = ys.at(h);
            svg.line(xa, ys.at(ha), xa, y, "#333333", 1.0);
            svg.line(xb, ys.at(hb), xb, y, "#333333", 1.0);
            svg.line(xa, y, xb, y, "#333333", 1.0);
            pos.insert(format!("#{}", r + 1), ((xa + xb) / 2.0, h));
        }
    }

    for i in 0..n {
        for j in 0..n {
            let shade = if vmax > 0.0 { values[i][j] / vmax } else { 0.0 };
            let g = (255.0 * (1.0 - shade)).round() as u8;
            let fill = format!("#ff{g:02x}{g:02x}");
            svg.rect(left + j as f64 * cell, top + i as f64 * cell, cell, cell, &fill, Some("#ffffff"));
        }
        svg.text(left - 6.0, top + (i as f64 + 0.65) * cell, &labels[i], 10.0, "end");
        svg.text_rotated(left + (i as f64 + 0.6) * cell, top + n as f64 * cell + 8.0, &labels[i], 10.0, -45.0);
    }
    Ok(Outcome::Drawn(svg.finish()))
}

fn boxplot(bundle: &Bundle) -> Result<Outcome> {
    let t = require!(bundle, "diversity_groups.csv");
    if t.rows.is_empty() {
        return Ok(Outcome::Skipped("no groups".into()));
    }
    let cols = ["q1", "median", "q3", "lower_whisker", "upper_whisker"]
        .iter()
        .map(|c| t.col(c))
        .collect::<Result<Vec<_>>>()?;
    let co = t.col("outliers")?;
    let mut stats = Vec::new();
    let mut all = Vec::new();
    for r in 0..t.rows.len() {
        let s = cols.iter().map(|&c| t.num(r, c)).collect::<Result<Vec<_>>>()?;
        let outliers = t.rows[r][co]
            .split(';')
            .filter(|x| !x.is_empty())
            .map(|x| x.parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad outlier `{x}`"))))
            .collect::<Result<Vec<_>>>()?;
        all.extend(s.iter().copied().chain(outliers.iter().copied()));
        stats.push((t.rows[r][0].clone(), s, outliers));
    }
    let right = W - 20.0;
    let bottom = H - 110.0;
    let ys = Scale::fit(all.iter().chain([&0.0]), bottom, MARGIN);
    let band = (right - MARGIN) / stats.len() as f64;
    let mut svg = Svg::new(W, H);
    svg.title("Shannon index per treatment");
    svg.line(MARGIN, bottom, right, bottom, "#333333", 1.0);
    svg.line(MARGIN, MARGIN, MARGIN, bottom, "#333333", 1.0);
    svg.text_rotated(20.0, (MARGIN + bottom) / 2.0, "H (nats)", 12.0, -90.0);
    for (i, (name, s, outliers)) in stats.iter().enumerate() {
        let cx = MARGIN + (i as f64 + 0.5) * band;
        let half = band * 0.3;
        let c = color(i);
        svg.line(cx, ys.at(s[3]), cx, ys.at(s[0]), "#333333", 1.0);
        svg.line(cx, ys.at(s[2]), cx, ys.at(s[4]), "#333333", 1.0);
        svg.rect(cx - half, ys.at(s[2]), 2.0 * half, ys.at(s[0]) - ys.at(s[2]), c, Some("#333333"));
        svg.line(cx - half, ys.at(s[1]), cx + half, ys.at(s[1]), "#000000", 2.0);
        for &o in outliers {
            svg.circle(cx, ys.at(o), 2.0, "#000000", 0.8);
        }
        svg.text_rotated(cx, bottom + 12.0, name, 10.0, -45.0);
    }
    Ok(Outcome::Drawn(svg.finish()))
}

fn stacked_bars(bundle: &Bundle) -> Result<Outcome> {
    let t = require!(bundle, "relative_abundance_group.csv");
    if t.rows.is_empty() || t.headers.len() < 2 {
        return Ok(Outcome::Skipped("no groups".into()));
    }
    let fuels = &t.headers[1..];
    let right = W - 130.0;
    let bottom = H - 110.0;
    let ys = Scale::new(0.0, 1.0, bottom, MARGIN);
    let band = (right - MARGIN) / t.rows.len() as f64;
    let mut svg = Svg::new(W, H);
    svg.title("Relative abundance of cooking fuels");
    svg.text_rotated(20.0, (MARGIN + bottom) / 2.0, "share of households", 12.0, -90.0);
    for r in 0..t.rows.len() {
        let x = MARGIN + r as f64 * band + band * 0.1;
        let mut acc = 0.0;
        for g in 0..fuels.len() {
            let v = t.num(r, g + 1)?;
            svg.rect(x, ys.at(acc + v), band * 0.8, ys.at(acc) - ys.at(acc + v), color(g), None);
            acc += v;
        }
        svg.text_rotated(x + band * 0.4, bottom + 12.0, &t.rows[r][0], 10.0, -45.0);
    }
    let colors = fuels.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
    legend(&mut svg, &colors, right + 15.0);
    Ok(Outcome::Drawn(svg.finish()))
}
