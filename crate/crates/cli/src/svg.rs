//! Static SVG renderings: a diverging heatmap of per-interval weights and a
//! step plot of a survival curve. Every mark carries its value in a
//! `<title>` and a `data-value` attribute.

use std::fmt::Write;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Blue for negative, red for positive, white at zero; `t` in `[-1, 1]`.
fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let fade = |c: f64| (255.0 - (255.0 - c) * t.abs()).round() as u8;
    let (r, g, b) = if t >= 0.0 {
        (fade(178.0), fade(24.0), fade(43.0))
    } else {
        (fade(33.0), fade(102.0), fade(172.0))
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// One row per feature, one column per interval.
pub fn heatmap(features: &[String], values: &[Vec<f64>], title: &str) -> String {
    let (cell_w, cell_h, left, top) = (14.0, 18.0, 150.0, 40.0);
    let cols = values.first().map_or(0, Vec::len);
    let width = left + cell_w * cols as f64 + 20.0;
    let height = top + cell_h * features.len() as f64 + 40.0;
    let scale = values.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="13">{}</text>"#, escape(title));
    for (i, (name, row)) in features.iter().zip(values).enumerate() {
        let y = top + cell_h * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + cell_h * 0.7,
            escape(name)
        );
        for (t, v) in row.iter().enumerate() {
            let x = left + cell_w * t as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" fill="{}" data-value="{v}"><title>{} interval {}: {v}</title></rect>"#,
                diverging(v / scale),
                escape(name),
                t + 1
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}">interval 1..{cols}; colour scale ±{scale}</text>"#,
        top + cell_h * features.len() as f64 + 20.0
    );
    s.push_str("</svg>\n");
    s
}

/// Survival probability at each grid boundary, drawn as a right-continuous
/// step function.
pub fn curve(times: &[f64], survival: &[f64], title: &str) -> String {
    let (w, h, left, top) = (480.0, 260.0, 50.0, 30.0);
    let t_max = times.last().copied().unwrap_or(1.0).max(1e-12);
    let px = |t: f64| left + w * t / t_max;
    let py = |s: f64| top + h * (1.0 - s);

    let mut path = String::new();
    for (i, (&t, &s)) in times.iter().zip(survival).enumerate() {
        if i == 0 {
            let _ = write!(path, "M{:.2},{:.2}", px(t), py(s));
        } else {
            let _ = write!(path, " H{:.2} V{:.2}", px(t), py(s));
        }
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        w + left + 20.0,
        h + top + 40.0
    );
    let _ = writeln!(out, r#"<text x="{left}" y="18" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#999"/>"##
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">1</text>"#, left - 4.0, top + 4.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, left - 4.0, top + h);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{t_max} days</text>"#,
        left + w,
        top + h + 16.0
    );
    let _ = writeln!(out, r##"<path d="{path}" fill="none" stroke="#b2182b" stroke-width="1.5"/>"##);
    for (&t, &s) in times.iter().zip(survival) {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" data-value="{s}"><title>S({t}) = {s}</title></circle>"#,
            px(t),
            py(s)
        );
    }
    out.push_str("</svg>\n");
    out
}
