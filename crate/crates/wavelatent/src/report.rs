//! Evaluation report files: two CSV tables plus SVG bar charts.
//!
//! Undefined statistics (states without test records, single-trial CIs)
//! are written as `NA`.

use std::fmt::Write as _;

use wavelatent_core::pipeline::EvalReport;

pub const ESTIMATION_HEADER: &str = "state_k1,state_k2,component,mean_err,ci_half,n";
pub const RECONSTRUCTION_HEADER: &str = "state_k1,state_k2,path,rss_sss";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn component_name(c: usize) -> &'static str {
    if c == 0 {
        "k1"
    } else {
        "k2"
    }
}

pub fn estimation_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(ESTIMATION_HEADER);
    out.push('\n');
    for r in &report.estimation {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.state.k1,
            r.state.k2,
            component_name(r.component),
            opt(r.mean_err),
            opt(r.ci_half),
            r.n
        );
    }
    out
}

pub fn reconstruction_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(RECONSTRUCTION_HEADER);
    out.push('\n');
    for r in &report.reconstruction {
        let _ = writeln!(out, "{},{},{},{}", r.state.k1, r.state.k2, r.path, opt(r.rss_sss));
    }
    out
}

const WIDTH: f64 = 900.0;
const PANEL: f64 = 260.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

struct Bar {
    value: f64,
    whisker: Option<f64>,
    series: usize,
}

/// One panel of grouped bars; `groups[g]` holds the bars above label `g`.
fn panel(svg: &mut String, top: f64, title: &str, labels: &[String], groups: &[Vec<Bar>], unit: &str) {
    let values = groups.iter().flatten().flat_map(|b| {
        let w = b.whisker.unwrap_or(0.0);
        [b.value + w, b.value - w]
    });
    let (mut lo, mut hi) = values.fold((0.0f64, 0.0f64), |(l, h), v| (l.min(v), h.max(v)));
    if hi - lo <= 0.0 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    lo -= if lo < 0.0 { pad } else { 0.0 };
    hi += pad;
    let plot_h = PANEL - 70.0;
    let y0 = top + 30.0;
    let y = |v: f64| y0 + plot_h * (hi - v) / (hi - lo);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let slot = plot_w / groups.len().max(1) as f64;
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, top + 18.0, title);
    let _ = writeln!(svg, r#"<line x1="{MARGIN:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, y(0.0), WIDTH - MARGIN, y(0.0));
    let _ = writeln!(svg, r#"<line x1="{MARGIN:.1}" y1="{y0:.1}" x2="{MARGIN:.1}" y2="{:.1}" stroke="black"/>"#, y0 + plot_h);
    for v in [lo, hi] {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.3}{unit}</text>"#, MARGIN - 4.0, y(v) + 3.0);
    }
    for (g, bars) in groups.iter().enumerate() {
        let bw = 0.8 * slot / bars.len().max(1) as f64;
        let gx = MARGIN + slot * g as f64 + 0.1 * slot;
        for (k, b) in bars.iter().enumerate() {
            let x = gx + bw * k as f64;
            let (a, c) = (y(b.value), y(0.0));
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="{}"/>"#,
                a.min(c),
                (a - c).abs(),
                PALETTE[b.series % PALETTE.len()]
            );
            if let Some(w) = b.whisker {
                let cx = x + bw / 2.0;
                let _ = writeln!(svg, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="green"/>"#, y(b.value + w), y(b.value - w));
            }
        }
        let lx = MARGIN + slot * (g as f64 + 0.5);
        let ly = y0 + plot_h + 12.0;
        let _ = writeln!(
            svg,
            r#"<text x="{lx:.1}" y="{ly:.1}" font-size="8" text-anchor="end" transform="rotate(-45 {lx:.1} {ly:.1})">{}</text>"#,
            labels[g]
        );
    }
}

fn document(panels: usize, body: &str) -> String {
    let height = PANEL * panels as f64 + 20.0;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\">\n<!-- generator: wavelatent {} -->\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n",
        env!("CARGO_PKG_VERSION")
    )
}

/// Mean estimation error per state with 95% CI whiskers, one panel per
/// component.
pub fn estimation_svg(report: &EvalReport) -> String {
    let mut body = String::new();
    for c in 0..2 {
        let rows: Vec<_> = report.estimation.iter().filter(|r| r.component == c).collect();
        let labels: Vec<String> = rows.iter().map(|r| format!("({}, {})", r.state.k1, r.state.k2)).collect();
        let groups: Vec<Vec<Bar>> = rows
            .iter()
            .map(|r| {
                r.mean_err
                    .map(|v| Bar {
                        value: v,
                        whisker: r.ci_half,
                        series: c,
                    })
                    .into_iter()
                    .collect()
            })
            .collect();
        let title = format!("{} estimation error, {} (mean, 95% CI)", report.kind, component_name(c));
        panel(&mut body, PANEL * c as f64, &title, &labels, &groups, "");
    }
    document(2, &body)
}

/// RSS/SSS per state, one bar per path.
pub fn reconstruction_svg(report: &EvalReport) -> String {
    let mut labels: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<Bar>> = Vec::new();
    let mut paths: Vec<u32> = report.reconstruction.iter().map(|r| r.path).collect();
    paths.sort_unstable();
    paths.dedup();
    for r in &report.reconstruction {
        let label = format!("({}, {})", r.state.k1, r.state.k2);
        if labels.last() != Some(&label) {
            labels.push(label);
            groups.push(Vec::new());
        }
        if let Some(v) = r.rss_sss {
            groups.last_mut().unwrap().push(Bar {
                value: v,
                whisker: None,
                series: paths.iter().position(|&p| p == r.path).unwrap_or(0),
            });
        }
    }
    let mut body = String::new();
    panel(&mut body, 0.0, &format!("{} reconstruction RSS/SSS per path", report.kind), &labels, &groups, "%");
    document(1, &body)
}
