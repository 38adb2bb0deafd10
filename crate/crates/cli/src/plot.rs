//! CSV tables to SVG figures. Output depends only on the input rows.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use agz_core::control::{ActionSet, Joint, RewardMode};
use agz_core::evaluation::*;
use plotters::prelude::*;

use crate::CliError;

const SIZE: (u32, u32) = (720, 480);
const THIN: RGBAColor = RGBAColor(70, 110, 200, 0.35);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    VCurve,
    Policy,
    TrainingCurve,
    Trajectory,
}

impl Table {
    fn detect(header: &[String]) -> Option<Self> {
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        [
            (&VCURVE_HEADER[..], Table::VCurve),
            (&POLICY_HEADER[..], Table::Policy),
            (&TRAINING_CURVE_HEADER[..], Table::TrainingCurve),
            (&TRAJECTORY_HEADER[..], Table::Trajectory),
        ]
        .into_iter()
        .find(|(known, _)| *known == h.as_slice())
        .map(|(_, t)| t)
    }
}

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("plot: {e}"))
}

fn read_rows<T: CsvRow>(path: &Path) -> Result<Vec<T>, CliError> {
    let rows: Vec<T> = read_csv(File::open(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no rows", path.display())));
    }
    Ok(rows)
}

/// Writes one SVG per joint present in `input`; returns the written paths.
pub fn plot_csv(input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut reader = std::io::BufReader::new(File::open(input)?);
    let mut first = String::new();
    std::io::BufRead::read_line(&mut reader, &mut first)?;
    let header: Vec<String> = first.trim_end().split(',').map(str::to_string).collect();
    let table = Table::detect(&header)
        .ok_or_else(|| CliError::Usage(format!("{}: unrecognized header `{}`", input.display(), first.trim_end())))?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    match table {
        Table::VCurve => {
            let rows: Vec<VCurveRow> = read_rows(input)?;
            for joint in Joint::ALL {
                let mine: Vec<&VCurveRow> = rows.iter().filter(|r| r.joint == joint).collect();
                if !mine.is_empty() {
                    let path = out_dir.join(format!("vcurve_{}.svg", joint.name()));
                    write_svg(&path, |svg| vcurve(svg, joint, &mine))?;
                    written.push(path);
                }
            }
        }
        Table::Policy => {
            let rows: Vec<PolicyRow> = read_rows(input)?;
            for joint in Joint::ALL {
                let mine: Vec<&PolicyRow> = rows.iter().filter(|r| r.joint == joint).collect();
                if !mine.is_empty() {
                    let path = out_dir.join(format!("policy_{}.svg", joint.name()));
                    write_svg(&path, |svg| policy(svg, joint, &mine))?;
                    written.push(path);
                }
            }
        }
        Table::TrainingCurve => {
            let rows: Vec<TrainingCurveRow> = read_rows(input)?;
            for joint in Joint::ALL {
                let mine: Vec<&TrainingCurveRow> = rows.iter().filter(|r| r.joint == joint).collect();
                if !mine.is_empty() {
                    let path = out_dir.join(format!("training_curve_{}.svg", joint.name()));
                    write_svg(&path, |svg| training_curve(svg, joint, &mine))?;
                    written.push(path);
                }
            }
        }
        Table::Trajectory => {
            let rows: Vec<TrajectoryRow> = read_rows(input)?;
            for joint in Joint::ALL {
                let mine: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.joint == joint).collect();
                if !mine.is_empty() {
                    let path = out_dir.join(format!("trajectory_{}.svg", joint.name()));
                    write_svg(&path, |svg| trajectory(svg, joint, &mine))?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

type Area<'a> = DrawingArea<SVGBackend<'a>, plotters::coord::Shift>;

fn write_svg(path: &Path, draw: impl FnOnce(&Area) -> Result<(), CliError>) -> Result<(), CliError> {
    let mut text = String::new();
    {
        let root = SVGBackend::with_string(&mut text, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        draw(&root)?;
        root.present().map_err(plot_err)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn unit(joint: Joint) -> &'static str {
    match joint {
        Joint::Vergence => "px",
        Joint::Pan | Joint::Tilt => "px/it",
    }
}

/// `(min, max)` padded by 5 % (or ±1 around a constant).
fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
    (lo - pad, hi + pad)
}

/// Error values are stored in micro-units so they can key ordered maps.
fn key(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

fn vcurve(root: &Area, joint: Joint, rows: &[&VCurveRow]) -> Result<(), CliError> {
    let (x0, x1) = bounds(rows.iter().map(|r| r.error));
    let (y0, y1) = bounds(rows.iter().map(|r| r.loss));
    let mut chart = ChartBuilder::on(root)
        .caption(format!("{} V-curve", joint.name()), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(format!("{} error ({})", joint.name(), unit(joint)))
        .y_desc("reconstruction loss")
        .draw()
        .map_err(plot_err)?;

    let mut per_stimulus: BTreeMap<usize, BTreeMap<i64, f64>> = BTreeMap::new();
    let mut means: BTreeMap<&str, BTreeMap<i64, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        if r.scale == "combined" {
            per_stimulus.entry(r.stimulus).or_default().insert(key(r.error), r.loss);
        }
        let m = means.entry(r.scale.as_str()).or_default().entry(key(r.error)).or_insert((0.0, 0));
        m.0 += r.loss;
        m.1 += 1;
    }
    for curve in per_stimulus.values() {
        let pts = curve.iter().map(|(k, l)| (*k as f64 * 1e-6, *l));
        chart.draw_series(LineSeries::new(pts, THIN.stroke_width(1))).map_err(plot_err)?;
    }
    let styles = [("combined", RED.stroke_width(3)), ("fine", BLACK.stroke_width(2)), ("coarse", GREEN.stroke_width(2))];
    for (scale, style) in styles {
        if let Some(curve) = means.get(scale) {
            let pts: Vec<(f64, f64)> = curve.iter().map(|(k, (s, n))| (*k as f64 * 1e-6, s / *n as f64)).collect();
            chart
                .draw_series(LineSeries::new(pts, style))
                .map_err(plot_err)?
                .label(format!("mean {scale}"))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], style));
        }
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(plot_err)?;
    Ok(())
}

/// Blue intensity proportional to greedy-action frequency.
fn heat(f: f64) -> RGBColor {
    let f = f.clamp(0.0, 1.0);
    let c = (255.0 * (1.0 - f)).round() as u8;
    RGBColor(c, c, 255)
}

fn policy(root: &Area, joint: Joint, rows: &[&PolicyRow]) -> Result<(), CliError> {
    let mut errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    errors.sort_by(f64::total_cmp);
    errors.dedup();
    let half = if errors.len() > 1 { 0.5 * (errors[1] - errors[0]) } else { 0.5 };
    let (x0, x1) = (errors[0] - half, errors[errors.len() - 1] + half);
    let n = ActionSet::VALUES.len();
    let mut chart = ChartBuilder::on(root)
        .caption(format!("{} greedy-action frequency", joint.name()), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, 0.0..n as f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc(format!("{} error ({})", joint.name(), unit(joint)))
        .y_desc("action")
        .y_labels(n)
        .y_label_formatter(&|y| {
            let i = y.floor() as usize;
            if i < n && (y - i as f64 - 0.5).abs() < 0.26 {
                format!("{}", ActionSet::value(i))
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(rows.iter().map(|r| {
            let row = ActionSet::index_of(r.action_value).unwrap_or(0) as f64;
            Rectangle::new([(r.error - half, row), (r.error + half, row + 1.0)], heat(r.frequency).filled())
        }))
        .map_err(plot_err)?;
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn training_curve(root: &Area, joint: Joint, rows: &[&TrainingCurveRow]) -> Result<(), CliError> {
    // mean ± std over seeds, per reward mode
    let mut groups: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut tests: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.reward_mode.name()).or_default().entry(r.episode).or_default().push(r.train_error);
        if let Some(t) = r.test_error {
            tests.entry(r.reward_mode.name()).or_default().entry(r.episode).or_default().push(t);
        }
    }
    let last = rows.iter().map(|r| r.episode).max().unwrap_or(1) as f64;
    let (_, y1) = bounds(rows.iter().flat_map(|r| [r.train_error, r.test_error.unwrap_or(0.0)]));
    let mut chart = ChartBuilder::on(root)
        .caption(format!("{} training error", joint.name()), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..last, 0.0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("episode")
        .y_desc(format!("|{} error| ({})", joint.name(), unit(joint)))
        .draw()
        .map_err(plot_err)?;
    for (mode, curve) in &groups {
        let color = if RewardMode::parse(mode) == Some(RewardMode::Old) { BLUE } else { RED };
        let stats: Vec<(f64, f64, f64)> = curve
            .iter()
            .map(|(ep, v)| {
                let (m, s) = mean_std(v);
                (*ep as f64, m, s)
            })
            .collect();
        let band: Vec<(f64, f64)> = stats
            .iter()
            .map(|(x, m, s)| (*x, m + s))
            .chain(stats.iter().rev().map(|(x, m, s)| (*x, (m - s).max(0.0))))
            .collect();
        chart.draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled()))).map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(stats.iter().map(|(x, m, _)| (*x, *m)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("{mode} reward"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        if let Some(points) = tests.get(mode) {
            chart
                .draw_series(points.iter().map(|(ep, v)| Circle::new((*ep as f64, mean_std(v).0), 4, color.filled())))
                .map_err(plot_err)?;
        }
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(plot_err)?;
    Ok(())
}

fn trajectory(root: &Area, joint: Joint, rows: &[&TrajectoryRow]) -> Result<(), CliError> {
    let mut fans: BTreeMap<i64, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        fans.entry(key(r.initial_error)).or_default().entry(r.iteration).or_default().push(r.error);
    }
    let last = rows.iter().map(|r| r.iteration).max().unwrap_or(1) as f64;
    let (y0, y1) = bounds(rows.iter().map(|r| r.error));
    let mut chart = ChartBuilder::on(root)
        .caption(format!("{} recovery", joint.name()), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..last, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc(format!("{} error ({})", joint.name(), unit(joint)))
        .draw()
        .map_err(plot_err)?;
    let count = fans.len().max(2);
    for (i, curve) in fans.values().enumerate() {
        let color = HSLColor(0.66 * i as f64 / (count - 1) as f64, 0.8, 0.45);
        let pts = curve.iter().map(|(it, v)| (*it as f64, mean_std(v).0));
        chart.draw_series(LineSeries::new(pts, color.stroke_width(2))).map_err(plot_err)?;
    }
    Ok(())
}
