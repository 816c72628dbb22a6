//! HTML and terminal views of an attribution report.
//!
//! Each feature span gets a background on a diverging scale: red for
//! positive, blue for negative, white at zero, intensity `|φ| / max|φ|`.

use std::fmt::Write;

use super::explain::{AttributionReport, Granularity, Method};

/// Background colour for a signed attribution.
pub fn color(value: f64, max_abs: f64) -> (u8, u8, u8) {
    if max_abs <= 0.0 || value == 0.0 {
        return (255, 255, 255);
    }
    let t = (value.abs() / max_abs).min(1.0);
    let fade = (255.0 * (1.0 - t)).round() as u8;
    if value > 0.0 {
        (255, fade, fade)
    } else {
        (fade, fade, 255)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn method_label(m: &Method) -> String {
    match m {
        Method::Exact => "exact".into(),
        Method::Sampled { n_samples, seed } => format!("sampled (n_samples={n_samples}, seed={seed})"),
    }
}

fn granularity_label(g: Granularity) -> &'static str {
    match g {
        Granularity::Token => "token",
        Granularity::LabItem => "lab_item",
    }
}

/// Text cut into plain and coloured pieces, in order.
fn segments(report: &AttributionReport) -> Vec<(&str, Option<(u8, u8, u8)>)> {
    let max = report.max_abs();
    let mut spans: Vec<((usize, usize), f64)> =
        report.features.iter().filter_map(|f| f.span.map(|s| (s, f.value))).collect();
    spans.sort_by_key(|(s, _)| *s);
    let text = report.text.as_str();
    let mut out = Vec::new();
    let mut pos = 0;
    for ((s, e), v) in spans {
        if s < pos || e > text.len() || s > e {
            continue;
        }
        if s > pos {
            out.push((&text[pos..s], None));
        }
        out.push((&text[s..e], Some(color(v, max))));
        pos = e;
    }
    if pos < text.len() {
        out.push((&text[pos..], None));
    }
    out
}

/// Standalone HTML document; identical reports give identical bytes.
pub fn render_html(report: &AttributionReport) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "<!DOCTYPE html>");
    let _ = writeln!(h, "<html lang=\"en\">");
    let _ = writeln!(h, "<head>");
    let _ = writeln!(h, "<meta charset=\"utf-8\">");
    let _ = writeln!(h, "<title>Attribution for {}</title>", escape(&report.record_id));
    let _ = writeln!(
        h,
        "<style>body{{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.6}}\
         .text span{{padding:1px 2px;border-radius:3px}}\
         table{{border-collapse:collapse}}td,th{{padding:2px 10px;text-align:left;border-bottom:1px solid #ddd}}</style>"
    );
    let _ = writeln!(h, "</head>");
    let _ = writeln!(h, "<body>");
    let _ = writeln!(h, "<h1>{}</h1>", escape(&report.record_id));
    let _ = writeln!(h, "<table class=\"meta\">");
    for (k, v) in [
        ("mode", report.mode_name().to_string()),
        ("granularity", granularity_label(report.granularity).to_string()),
        ("method", method_label(&report.method)),
        ("target class", report.target_class.to_string()),
        ("base value", format!("{:.6}", report.base_value)),
        ("full value", format!("{:.6}", report.full_value)),
    ] {
        let _ = writeln!(h, "<tr><th>{k}</th><td>{}</td></tr>", escape(&v));
    }
    if let Some(p) = &report.prescreen {
        let _ = writeln!(
            h,
            "<tr><th>prescreen</th><td>top {} of {} tokens by |gradient x input|</td></tr>",
            p.k, p.candidates
        );
    }
    let _ = writeln!(h, "</table>");
    let _ = write!(h, "<p class=\"text\">");
    for (piece, c) in segments(report) {
        match c {
            Some((r, g, b)) => {
                let _ = write!(h, "<span style=\"background:#{r:02x}{g:02x}{b:02x}\">{}</span>", escape(piece));
            }
            None => h.push_str(&escape(piece)),
        }
    }
    let _ = writeln!(h, "</p>");
    let _ = writeln!(h, "<table class=\"features\">");
    let _ = writeln!(h, "<tr><th>feature</th><th>shapley</th><th>std error</th></tr>");
    let max = report.max_abs();
    for f in &report.features {
        let (r, g, b) = color(f.value, max);
        let se = f.std_error.map_or_else(String::new, |s| format!("{s:.6}"));
        let _ = writeln!(
            h,
            "<tr><td style=\"background:#{r:02x}{g:02x}{b:02x}\">{}</td><td>{:+.6}</td><td>{se}</td></tr>",
            escape(&f.name),
            f.value
        );
    }
    let _ = writeln!(h, "</table>");
    let _ = writeln!(h, "</body>");
    let _ = writeln!(h, "</html>");
    h
}

/// 24-bit ANSI colour rendering for terminals.
pub fn render_terminal(report: &AttributionReport) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{}  mode={} granularity={} method={} class={}",
        report.record_id,
        report.mode_name(),
        granularity_label(report.granularity),
        method_label(&report.method),
        report.target_class
    );
    let _ = writeln!(t, "base={:.6} full={:.6}", report.base_value, report.full_value);
    for (piece, c) in segments(report) {
        match c {
            Some((r, g, b)) => {
                let _ = write!(t, "\x1b[48;2;{r};{g};{b}m\x1b[38;2;0;0;0m{piece}\x1b[0m");
            }
            None => t.push_str(piece),
        }
    }
    t.push('\n');
    for f in &report.features {
        let _ = writeln!(t, "  {:+.6}  {}", f.value, f.name);
    }
    t
}

impl AttributionReport {
    fn mode_name(&self) -> &'static str {
        self.mode.name()
    }
}
