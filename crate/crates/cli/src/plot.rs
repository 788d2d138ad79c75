//! SVG/CSV rendering of grid slices and delta sweeps.

use crate::commands::SweepRow;
use crate::failure::Failure;
use crate::PlotArgs;
use lti_viab::grid::GridSet;
use lti_viab::Error;
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;

const SIZE: f64 = 480.0;
const PAD: f64 = 48.0;

fn io(e: std::io::Error) -> Failure {
    Error::from(e).into()
}

fn csv_err(e: csv::Error) -> Failure {
    Error::Io(e.into()).into()
}

pub fn run(args: &PlotArgs) -> Result<(), Failure> {
    std::fs::create_dir_all(&args.out).map_err(io)?;
    let is_csv = args
        .input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        if args.slice.is_some() {
            return Err(Failure::usage("--slice applies to grid dumps, not sweeps"));
        }
        return sweep(&args.input, &args.out);
    }
    let file = std::fs::File::open(&args.input).map_err(io)?;
    let set = GridSet::read_dump(BufReader::new(file))?;
    let (ax, ay, fixed) = parse_slice(args.slice.as_deref(), &set)?;
    let slice = match ay {
        Some(ay) => set.slice2(ax, ay, &fixed)?,
        None => set.clone(),
    };
    let title = match ay {
        Some(ay) => format!("axes x{ax}, x{ay}"),
        None => format!("axis x{ax}"),
    };
    std::fs::write(args.out.join("slice.svg"), slice_svg(&slice, &title)).map_err(io)?;
    write_contour(&slice, &args.out.join("contour.csv"))
}

/// Parses `X,Y[:AXIS=VALUE,...]`; unspecified fixed axes sit at the middle node.
fn parse_slice(
    spec: Option<&str>,
    set: &GridSet,
) -> Result<(usize, Option<usize>, Vec<usize>), Failure> {
    let g = &set.grid;
    let d = g.dim();
    let mut fixed: Vec<usize> = g.nodes.iter().map(|n| n / 2).collect();
    let Some(spec) = spec else {
        return Ok(match d {
            1 => (0, None, fixed),
            _ => (0, Some(1), fixed),
        });
    };
    let bad = |why: &str| Failure::usage(format!("bad slice '{spec}': {why}"));
    let (axes, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let axes: Vec<usize> = axes
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| bad("axes must be integers"))
        })
        .collect::<Result<_, _>>()?;
    let (ax, ay) = match axes.as_slice() {
        [x] if d == 1 && *x == 0 => (0, None),
        [x, y] if *x < d && *y < d && x != y => (*x, Some(*y)),
        _ => return Err(bad("need two distinct axes within the grid dimension")),
    };
    for part in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (a, v) = part
            .split_once('=')
            .ok_or_else(|| bad("expected AXIS=VALUE"))?;
        let a: usize = a
            .trim()
            .parse()
            .map_err(|_| bad("axis must be an integer"))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| bad("value must be a number"))?;
        if a >= d || Some(a) == ay || a == ax {
            return Err(bad("fixed axis must be one of the remaining axes"));
        }
        if !(g.lower[a]..=g.upper[a]).contains(&v) {
            return Err(bad("fixed value outside the grid"));
        }
        fixed[a] = ((v - g.lower[a]) / g.h(a)).round() as usize;
    }
    Ok((ax, ay, fixed))
}

/// Maps data coordinates to the canvas (y up).
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * SIZE
    }
    fn py(&self, y: f64) -> f64 {
        PAD + (self.y1 - y) / (self.y1 - self.y0) * SIZE
    }
}

fn header(svg: &mut String, title: &str) {
    let w = SIZE + 2.0 * PAD;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{PAD}" y="{}">{title}</text>"#, PAD - 16.0);
    let _ = writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
}

fn axis_labels(svg: &mut String, f: &Frame, xl: &str, yl: &str) {
    let b = PAD + SIZE;
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{}">{:.3}</text>"#,
        b + 16.0,
        f.x0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{b}" y="{}" text-anchor="end">{:.3}</text>"#,
        b + 16.0,
        f.x1
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{b}" text-anchor="end">{:.3}</text>"#,
        PAD - 4.0,
        f.y0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
        PAD - 4.0,
        PAD + 12.0,
        f.y1
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{xl}</text>"#,
        PAD + SIZE / 2.0,
        b + 32.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{yl}</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
}

/// Node-centered cells drawn as merged row runs; 1D sets become a strip.
fn slice_svg(set: &GridSet, title: &str) -> String {
    let g = &set.grid;
    let mut svg = String::new();
    header(&mut svg, title);
    let two_d = g.dim() == 2;
    let hx = g.h(0);
    let (ny, hy, y0, y1) = if two_d {
        (g.nodes[1], g.h(1), g.lower[1], g.upper[1])
    } else {
        (1, 1.0, -0.5, 0.5)
    };
    let f = Frame {
        x0: g.lower[0] - hx / 2.0,
        x1: g.upper[0] + hx / 2.0,
        y0: y0 - hy / 2.0,
        y1: y1 + hy / 2.0,
    };
    if set.is_empty() {
        let c = PAD + SIZE / 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="{c}" y="{c}" text-anchor="middle" fill="gray">empty set</text>"#
        );
    }
    for j in 0..ny {
        let yc = if two_d { g.coord(1, j) } else { 0.0 };
        let mut i = 0;
        while i < g.nodes[0] {
            let occ = |i: usize| set.occ[if two_d { i * ny + j } else { i }];
            if !occ(i) {
                i += 1;
                continue;
            }
            let start = i;
            while i < g.nodes[0] && occ(i) {
                i += 1;
            }
            let xa = f.px(g.coord(0, start) - hx / 2.0);
            let xb = f.px(g.coord(0, i - 1) + hx / 2.0);
            let ya = f.py(yc + hy / 2.0);
            let yb = f.py(yc - hy / 2.0);
            let _ = writeln!(
                svg,
                r##"<rect x="{xa:.3}" y="{ya:.3}" width="{:.3}" height="{:.3}" fill="#3b6ea8"/>"##,
                xb - xa,
                yb - ya
            );
        }
    }
    axis_labels(
        &mut svg,
        &f,
        "first axis",
        if two_d { "second axis" } else { "" },
    );
    svg.push_str("</svg>\n");
    svg
}

/// Boundary points of a 1D/2D set: midpoints between occupied nodes and
/// unoccupied neighbors, or half a cell beyond the grid edge.
fn write_contour(set: &GridSet, path: &Path) -> Result<(), Failure> {
    let g = &set.grid;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let two_d = g.dim() == 2;
    let ny = if two_d { g.nodes[1] } else { 1 };
    let nx = g.nodes[0];
    let occ = |i: isize, j: isize| -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < nx
            && (j as usize) < ny
            && set.occ[i as usize * ny + j as usize]
    };
    w.write_record(if two_d { &["x", "y"][..] } else { &["x"][..] })
        .map_err(csv_err)?;
    let steps: &[(isize, isize)] = if two_d {
        &[(1, 0), (-1, 0), (0, 1), (0, -1)]
    } else {
        &[(1, 0), (-1, 0)]
    };
    for i in 0..nx as isize {
        for j in 0..ny as isize {
            if !occ(i, j) {
                continue;
            }
            for &(di, dj) in steps {
                if occ(i + di, j + dj) {
                    continue;
                }
                let x = g.coord(0, i as usize) + di as f64 * g.h(0) / 2.0;
                let mut rec = vec![format!("{x:.9}")];
                if two_d {
                    rec.push(format!(
                        "{:.9}",
                        g.coord(1, j as usize) + dj as f64 * g.h(1) / 2.0
                    ));
                }
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Symmetric log axis so both signs of the shift fit on one plot.
fn slog(d: f64) -> f64 {
    d.signum() * (1.0 + d.abs()).log10()
}

fn sweep(input: &Path, out: &Path) -> Result<(), Failure> {
    let mut r = csv::Reader::from_path(input).map_err(csv_err)?;
    let rows: Vec<SweepRow> = r.deserialize().collect::<Result<_, _>>().map_err(csv_err)?;
    if rows.is_empty() {
        return Err(Failure::usage("sweep file has no rows"));
    }
    let gamma = rows[0].gamma_norm;
    let fs: Vec<f64> = rows.iter().filter_map(|r| r.coupling_norm).collect();
    let ymax = fs
        .iter()
        .copied()
        .chain(gamma.is_finite().then_some(gamma))
        .fold(0.0_f64, f64::max)
        .max(1e-12)
        * 1.1;
    let xs: Vec<f64> = rows.iter().map(|r| slog(r.delta)).collect();
    let f = Frame {
        x0: xs.iter().copied().fold(f64::INFINITY, f64::min),
        x1: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        y0: 0.0,
        y1: ymax,
    };
    let mut svg = String::new();
    header(&mut svg, "coupling norm over the shift parameter");

    // Shade runs of infeasible samples: light for the unrelaxed conditions,
    // darker where even the selected relaxation fails.
    for (pick, color) in [
        (
            Box::new(|r: &SweepRow| !r.feasible_unrelaxed) as Box<dyn Fn(&SweepRow) -> bool>,
            "#f3dede",
        ),
        (Box::new(|r: &SweepRow| !r.feasible), "#e0b4b4"),
    ] {
        let mut i = 0;
        while i < rows.len() {
            if !pick(&rows[i]) {
                i += 1;
                continue;
            }
            let s = i;
            while i < rows.len() && pick(&rows[i]) {
                i += 1;
            }
            let xa = f.px(if s > 0 {
                (xs[s - 1] + xs[s]) / 2.0
            } else {
                xs[s]
            });
            let xb = f.px(if i < rows.len() {
                (xs[i - 1] + xs[i]) / 2.0
            } else {
                xs[i - 1]
            });
            let _ = writeln!(
                svg,
                r#"<rect x="{xa:.3}" y="{PAD}" width="{:.3}" height="{SIZE}" fill="{color}"/>"#,
                (xb - xa).max(0.5)
            );
        }
    }
    if gamma.is_finite() {
        let y = f.py(gamma);
        let _ = writeln!(
            svg,
            r#"<line x1="{PAD}" y1="{y:.3}" x2="{}" y2="{y:.3}" stroke="gray" stroke-dasharray="6 4"/>"#,
            PAD + SIZE
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.3}" text-anchor="end" fill="gray">asymptote {gamma:.4}</text>"#,
            PAD + SIZE - 4.0,
            y - 4.0
        );
    }
    for (get, style) in [
        (
            Box::new(|r: &SweepRow| r.coupling_norm) as Box<dyn Fn(&SweepRow) -> Option<f64>>,
            r#"stroke="black" stroke-width="1.5""#,
        ),
        (
            Box::new(|r: &SweepRow| r.upper_bound),
            r##"stroke="#3b6ea8" stroke-dasharray="3 3""##,
        ),
    ] {
        // Separate polylines per sign and per gap in the data.
        let mut seg: Vec<String> = Vec::new();
        let mut prev_sign = 0.0;
        let flush = |seg: &mut Vec<String>, svg: &mut String| {
            if seg.len() > 1 {
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" {style} points="{}"/>"#,
                    seg.join(" ")
                );
            }
            seg.clear();
        };
        for (r, &x) in rows.iter().zip(&xs) {
            match get(r).filter(|v| v.is_finite() && *v <= ymax) {
                Some(v) if r.delta.signum() == prev_sign || seg.is_empty() => {
                    seg.push(format!("{:.3},{:.3}", f.px(x), f.py(v)));
                }
                Some(v) => {
                    flush(&mut seg, &mut svg);
                    seg.push(format!("{:.3},{:.3}", f.px(x), f.py(v)));
                }
                None => flush(&mut seg, &mut svg),
            }
            prev_sign = r.delta.signum();
        }
        flush(&mut seg, &mut svg);
    }
    axis_labels(
        &mut svg,
        &f,
        "sign(delta) log10(1 + |delta|)",
        "coupling norm",
    );
    svg.push_str("</svg>\n");
    std::fs::write(out.join("sweep.svg"), svg).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lti_viab::grid::GridBox;

    fn grid3() -> GridSet {
        GridSet::full(GridBox::uniform(3, -1.0, 1.0, 5).unwrap())
    }

    #[test]
    fn slice_spec_parsing() {
        let s = grid3();
        assert_eq!(parse_slice(None, &s).unwrap(), (0, Some(1), vec![2, 2, 2]));
        assert_eq!(
            parse_slice(Some("2,0:1=-1"), &s).unwrap(),
            (2, Some(0), vec![2, 0, 2])
        );
        for bad in ["0", "0,0", "0,5", "0,1:1=0", "0,1:2=3", "a,b", "0,1:2"] {
            assert!(parse_slice(Some(bad), &s).is_err(), "{bad}");
        }
    }

    #[test]
    fn full_box_renders_single_rectangle_per_row() {
        let s = GridSet::full(GridBox::uniform(2, 0.0, 1.0, 4).unwrap());
        let svg = slice_svg(&s, "t");
        assert_eq!(svg.matches("fill=\"#3b6ea8\"").count(), 4);
        assert!(!svg.contains("empty set"));
    }

    #[test]
    fn empty_set_is_annotated() {
        let s = GridSet::empty(GridBox::uniform(2, 0.0, 1.0, 4).unwrap());
        let svg = slice_svg(&s, "t");
        assert!(svg.contains("empty set"));
        assert_eq!(svg.matches("fill=\"#3b6ea8\"").count(), 0);
    }
}
