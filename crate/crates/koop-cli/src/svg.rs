//! Standalone SVG emission: scatter plots with log-colored markers, line
//! plots, and level-set polylines for pseudospectra. No external assets.

use std::io::Write;
use std::path::Path;

use crate::error::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 520.0;
const MARGIN: f64 = 56.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_points<'a>(points: impl Iterator<Item = (&'a f64, &'a f64)>) -> Option<Self> {
        let mut frame: Option<Frame> = None;
        for (&x, &y) in points {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            match frame.as_mut() {
                None => {
                    frame = Some(Frame {
                        x_min: x,
                        x_max: x,
                        y_min: y,
                        y_max: y,
                    })
                }
                Some(f) => {
                    f.x_min = f.x_min.min(x);
                    f.x_max = f.x_max.max(x);
                    f.y_min = f.y_min.min(y);
                    f.y_max = f.y_max.max(y);
                }
            }
        }
        frame.map(|mut f| {
            let pad_x = 0.05 * (f.x_max - f.x_min).max(1e-9);
            let pad_y = 0.05 * (f.y_max - f.y_min).max(1e-9);
            f.x_min -= pad_x;
            f.x_max += pad_x;
            f.y_min -= pad_y;
            f.y_max += pad_y;
            f
        })
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(title: &str) -> String {
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{}" y="28" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>
"##,
        WIDTH / 2.0
    )
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (MARGIN, WIDTH - MARGIN);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    out.push_str(&format!(
        r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#444" stroke-width="1"/>
"##,
        x1 - x0,
        y0 - y1
    ));
    for i in 0..=4 {
        let fx = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
        let fy = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        out.push_str(&format!(
            r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{:.3}</text>
"##,
            frame.px(fx),
            HEIGHT - MARGIN + 16.0,
            fx
        ));
        out.push_str(&format!(
            r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{:.3}</text>
"##,
            MARGIN - 6.0,
            frame.py(fy) + 3.0,
            fy
        ));
    }
    out.push_str(&format!(
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{x_label}</text>
"##,
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    out.push_str(&format!(
        r##"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>
"##,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
}

fn empty_figure(title: &str) -> String {
    let mut out = header(title);
    let frame = Frame {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };
    axes(&mut out, &frame, "", "");
    out.push_str(&format!(
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle" fill="#888">no data</text>
</svg>
"##,
        WIDTH / 2.0,
        HEIGHT / 2.0
    ));
    out
}

/// Blue-to-red color scale over `[0, 1]`.
fn color(t: f64) -> String {
    let stops = [
        (33u8, 102u8, 172u8),
        (103, 169, 207),
        (247, 247, 247),
        (239, 138, 98),
        (178, 24, 43),
    ];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    let f = t - i as f64;
    let lerp = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(stops[i].0, stops[i + 1].0),
        lerp(stops[i].1, stops[i + 1].1),
        lerp(stops[i].2, stops[i + 1].2)
    )
}

/// Scatter plot of complex points with optional log-colored marker values
/// and an optional unit-circle guide.
pub fn eigenvalue_scatter(
    path: &Path,
    title: &str,
    points: &[(f64, f64)],
    values: Option<&[f64]>,
    unit_circle: bool,
) -> Result<(), CliError> {
    let svg = if points.is_empty() {
        empty_figure(title)
    } else {
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let mut all_x = xs.clone();
        let mut all_y = ys.clone();
        if unit_circle {
            all_x.extend([-1.1, 1.1]);
            all_y.extend([-1.1, 1.1]);
        }
        let frame = Frame::from_points(all_x.iter().zip(all_y.iter())).unwrap();
        let mut out = header(title);
        axes(&mut out, &frame, "Re", "Im");
        if unit_circle {
            let mut d = String::from("M");
            for k in 0..=128 {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 128.0;
                d.push_str(&format!(" {:.2} {:.2}", frame.px(a.cos()), frame.py(a.sin())));
            }
            out.push_str(&format!(
                r##"<path d="{d}" fill="none" stroke="#999" stroke-dasharray="4 3" stroke-width="1"/>
"##
            ));
        }
        let logs: Option<Vec<f64>> = values.map(|v| {
            v.iter()
                .map(|x| x.max(1e-300).log10())
                .collect()
        });
        let (lo, hi) = match &logs {
            Some(l) => {
                let lo = l.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, if hi > lo { hi } else { lo + 1.0 })
            }
            None => (0.0, 1.0),
        };
        for (i, (x, y)) in points.iter().enumerate() {
            let fill = match &logs {
                Some(l) => color((l[i] - lo) / (hi - lo)),
                None => "#2166ac".to_string(),
            };
            out.push_str(&format!(
                r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{fill}" stroke="#333" stroke-width="0.4"/>
"##,
                frame.px(*x),
                frame.py(*y)
            ));
        }
        if values.is_some() {
            out.push_str(&format!(
                r##"<text x="{}" y="44" font-family="sans-serif" font-size="10" text-anchor="middle">marker color: log10 value in [{lo:.2}, {hi:.2}]</text>
"##,
                WIDTH / 2.0
            ));
        }
        out.push_str("</svg>\n");
        out
    };
    write_file(path, &svg)
}

/// Line plot of sampled curve data.
pub fn line_plot(
    path: &Path,
    title: &str,
    xs: &[f64],
    ys: &[f64],
    labels: (&str, &str),
) -> Result<(), CliError> {
    let finite: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .collect();
    let svg = if finite.is_empty() {
        empty_figure(title)
    } else {
        let fx: Vec<f64> = finite.iter().map(|p| p.0).collect();
        let fy: Vec<f64> = finite.iter().map(|p| p.1).collect();
        let frame = Frame::from_points(fx.iter().zip(fy.iter())).unwrap();
        let mut out = header(title);
        axes(&mut out, &frame, labels.0, labels.1);
        let mut d = String::from("M");
        for (x, y) in &finite {
            d.push_str(&format!(" {:.2} {:.2}", frame.px(*x), frame.py(*y)));
        }
        out.push_str(&format!(
            r##"<path d="{d}" fill="none" stroke="#2166ac" stroke-width="1.5"/>
</svg>
"##
        ));
        out
    };
    write_file(path, &svg)
}

/// Pseudospectrum plot: grid markers colored by `log10(tau)` plus level-set
/// polylines (marching squares on the polar grid) at the acceptance level.
pub fn pseudospectrum_plot(
    path: &Path,
    title: &str,
    points: &[(f64, f64)],
    tau: &[f64],
    epsilon: f64,
    grid_shape: Option<(usize, usize)>,
) -> Result<(), CliError> {
    if points.is_empty() {
        return write_file(path, &empty_figure(title));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let frame = Frame::from_points(xs.iter().zip(ys.iter())).unwrap();
    let mut out = header(title);
    axes(&mut out, &frame, "Re z", "Im z");

    let logs: Vec<f64> = tau.iter().map(|t| t.max(1e-300).log10()).collect();
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(lo + 1.0);
    for (i, (x, y)) in points.iter().enumerate() {
        out.push_str(&format!(
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>
"##,
            frame.px(*x),
            frame.py(*y),
            color((logs[i] - lo) / (hi - lo))
        ));
    }

    // level set tau = epsilon by marching squares over the structured grid;
    // the angular direction wraps around
    if let Some((n_r, n_theta)) = grid_shape {
        if n_r * n_theta == points.len() {
            let at = |ir: usize, it: usize| -> (f64, f64, f64) {
                let idx = ir * n_theta + (it % n_theta);
                (points[idx].0, points[idx].1, tau[idx] - epsilon)
            };
            let mut segments = String::new();
            for ir in 0..n_r.saturating_sub(1) {
                for it in 0..n_theta {
                    let corners = [
                        at(ir, it),
                        at(ir, it + 1),
                        at(ir + 1, it + 1),
                        at(ir + 1, it),
                    ];
                    let mut crossings: Vec<(f64, f64)> = Vec::new();
                    for e in 0..4 {
                        let (a, b) = (corners[e], corners[(e + 1) % 4]);
                        if (a.2 <= 0.0) != (b.2 <= 0.0) {
                            let t = a.2 / (a.2 - b.2);
                            crossings.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
                        }
                    }
                    for pair in crossings.chunks(2) {
                        if let [p, q] = pair {
                            segments.push_str(&format!(
                                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#111" stroke-width="1.2"/>
"##,
                                frame.px(p.0),
                                frame.py(p.1),
                                frame.px(q.0),
                                frame.py(q.1)
                            ));
                        }
                    }
                }
            }
            out.push_str(&segments);
        }
    }
    out.push_str(&format!(
        r##"<text x="{}" y="44" font-family="sans-serif" font-size="10" text-anchor="middle">log10 tau in [{lo:.2}, {hi:.2}]; black polylines: tau = {epsilon}</text>
</svg>
"##,
        WIDTH / 2.0
    ));
    write_file(path, &out)
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    file.write_all(content.as_bytes())
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
