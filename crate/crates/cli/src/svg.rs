//! Static line plot of mean ordering error against sample size.

use std::fmt::Write;

use pnlrank::sim::ExperimentResult;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Round tick step giving roughly five intervals over `[0, max]`.
fn tick_step(max: f64) -> f64 {
    let raw = max / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn error_plot(result: &ExperimentResult, manifest: &str) -> String {
    let spec = &result.spec;
    let ns = &spec.n_values;
    let (nmin, nmax) = (ns[0] as f64, ns[ns.len() - 1] as f64);
    let ymax_data = result.cells.iter().filter_map(|c| c.mean).fold(0.0_f64, f64::max);
    let step = tick_step(ymax_data.max(0.5));
    let ymax = (ymax_data / step).ceil().max(1.0) * step;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |n: f64| if nmax > nmin { LEFT + (n - nmin) / (nmax - nmin) * pw } else { LEFT + pw / 2.0 };
    let sy = |v: f64| TOP + ph - v / ymax * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, "<!-- manifest: {} -->", escape(manifest));
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&spec.name));

    // axes
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, TOP + ph, LEFT + pw, TOP + ph);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#, TOP + ph);
    for &n in ns {
        let x = sx(n as f64);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{n}</text>"#, TOP + ph + 19.0);
    }
    let ticks = (ymax / step).round() as usize;
    for i in 0..=ticks {
        let v = i as f64 * step;
        let y = sy(v);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, LEFT - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n</text>"#, LEFT + pw / 2.0, H - 14.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">mean wrong edges</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, &m) in spec.methods.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = result
            .cells
            .iter()
            .filter(|c| c.method == m)
            .filter_map(|c| c.mean.map(|v| format!("{:.1},{:.1}", sx(c.n as f64), sy(v))))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for p in &pts {
            let (x, y) = p.split_once(',').expect("x,y");
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = W - RIGHT + 16.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 24.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{m}</text>"#, lx + 30.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(tick_step(0.5), 0.1);
        assert_eq!(tick_step(3.0), 1.0);
        assert_eq!(tick_step(12.0), 2.5);
    }
}
