//! Line charts of error or information curves.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use plotters::coord::Shift;
use plotters::prelude::*;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Reads a curves CSV (`predictor,aggregate,s,mean_error`) or an analysis
/// CSV (`video_id,s_seconds,<value>`) into chart series.
pub fn chart_from_csv(path: &Path, aggregate: &str) -> anyhow::Result<Chart> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut by_label: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut push = |label: &str, x: f64, y: f64| {
        if !by_label.contains_key(label) {
            order.push(label.to_string());
        }
        by_label.entry(label.to_string()).or_default().push((x, y));
    };
    let (title, y_label) = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["predictor", "aggregate", "s", "mean_error"] => {
            for r in reader.records() {
                let r = r?;
                if &r[1] == aggregate {
                    push(&r[0], r[2].parse()?, r[3].parse()?);
                }
            }
            (format!("Orthodromic error ({aggregate})"), "mean error (rad)".to_string())
        }
        ["video_id", "s_seconds", value] => {
            let value = value.to_string();
            for r in reader.records() {
                let r = r?;
                push(&r[0], r[1].parse()?, r[2].parse()?);
            }
            (value.clone(), value)
        }
        _ => bail!("unrecognized CSV header `{}` in {}", header.join(","), path.display()),
    };
    if by_label.is_empty() {
        bail!("no rows to plot in {}", path.display());
    }
    Ok(Chart {
        title,
        x_label: "prediction step s (s)".into(),
        y_label,
        series: order
            .into_iter()
            .map(|l| {
                let points = by_label.remove(&l).unwrap_or_default();
                Series { label: l, points }
            })
            .collect(),
    })
}

/// Writes an SVG, or a PNG when `path` ends in `.png`. PNG output carries
/// no text, since the bitmap backend is built without font support.
pub fn render(chart: &Chart, path: &Path, caption: &str) -> anyhow::Result<()> {
    let png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    if png {
        let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
        draw(chart, &root, None)?;
        root.present()?;
    } else {
        let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
        draw(chart, &root, Some(caption))?;
        root.present()?;
    }
    Ok(())
}

fn draw<DB: DrawingBackend>(chart: &Chart, root: &DrawingArea<DB, Shift>, caption: Option<&str>) -> anyhow::Result<()>
where
    DB::ErrorType: 'static,
{
    root.fill(&WHITE).map_err(|e| anyhow::anyhow!("{e}"))?;
    let xs = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let y1 = ys.fold(0.0f64, f64::max).max(1e-9) * 1.05;
    let mut builder = ChartBuilder::on(root);
    builder.margin(15);
    if let Some(c) = caption {
        builder
            .caption(format!("{} [{c}]", chart.title), ("sans-serif", 18))
            .x_label_area_size(40)
            .y_label_area_size(60);
    }
    let mut ctx = builder
        .build_cartesian_2d(x0..x1.max(x0 + 1e-9), 0.0..y1)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut mesh = ctx.configure_mesh();
    if caption.is_some() {
        mesh.x_desc(chart.x_label.as_str()).y_desc(chart.y_label.as_str());
    } else {
        mesh.disable_x_mesh().disable_y_mesh().x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(|e| anyhow::anyhow!("{e}"))?;
    for (i, s) in chart.series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let line = ctx
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        if caption.is_some() {
            line.label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
    }
    if caption.is_some() {
        ctx.configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_both_csv_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curves.csv");
        std::fs::write(&p, "# x\npredictor,aggregate,s,mean_error\nstatic,macro,0.2,0.1\nstatic,macro,0.4,0.2\nstatic,micro,0.2,0.1\n").unwrap();
        let c = chart_from_csv(&p, "macro").unwrap();
        assert_eq!(c.series.len(), 1);
        assert_eq!(c.series[0].points, vec![(0.2, 0.1), (0.4, 0.2)]);
        let p = dir.path().join("mi.csv");
        std::fs::write(&p, "video_id,s_seconds,mi_normalized\na,0.2,0.9\nb,0.2,0.8\n").unwrap();
        assert_eq!(chart_from_csv(&p, "macro").unwrap().series.len(), 2);
        let svg = dir.path().join("x.svg");
        render(&chart_from_csv(&p, "macro").unwrap(), &svg, "cfg").unwrap();
        assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
        let png = dir.path().join("x.png");
        render(&chart_from_csv(&p, "macro").unwrap(), &png, "cfg").unwrap();
        assert!(std::fs::metadata(&png).unwrap().len() > 0);
    }
}
