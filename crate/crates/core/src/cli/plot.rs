use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use super::CliError;
use crate::evalsuite::{AblationTable, MetricReport};

/// One file given to `plot`.
#[derive(Debug, Clone)]
pub enum PlotInput {
    Report(MetricReport),
    Ablation { name: String, table: AblationTable },
}

impl PlotInput {
    /// `.csv` files are ablation tables, everything else a metric report.
    pub fn load(path: &Path) -> Result<PlotInput, CliError> {
        let bad = |e: &dyn std::fmt::Display| CliError::Usage(format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e == "csv") {
            let table = AblationTable::load(path).map_err(|e| bad(&e))?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(PlotInput::Ablation { name, table })
        } else {
            MetricReport::load(path).map(PlotInput::Report).map_err(|e| bad(&e))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dash {
    Solid,
    Dashed,
    Dotted,
}

struct Curve {
    label: String,
    dash: Dash,
    color: usize,
    points: Vec<(f64, f64)>,
}

fn curves(inputs: &[PlotInput]) -> Vec<Curve> {
    let mut out = Vec::new();
    let mut reports: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut table_idx = 0;
    for input in inputs {
        match input {
            PlotInput::Report(r) => {
                let (metric, value) = r.headline();
                let key = format!("{} {} ({metric})", r.protocol, r.weights);
                reports.entry(key).or_default().push((r.label_fraction, 100.0 * value));
            }
            PlotInput::Ablation { name, table } => {
                let dash = [Dash::Solid, Dash::Dashed, Dash::Dotted][table_idx.min(2)];
                let mut by_count: BTreeMap<usize, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
                for row in &table.rows {
                    let cell = by_count
                        .entry(row.pretrain_flights)
                        .or_default()
                        .entry(row.label_fraction.to_bits())
                        .or_insert((0.0, 0));
                    cell.0 += row.value;
                    cell.1 += 1;
                }
                for (ci, (count, cells)) in by_count.into_iter().enumerate() {
                    let mut points: Vec<(f64, f64)> = cells
                        .into_iter()
                        .map(|(f, (sum, n))| (f64::from_bits(f), 100.0 * sum / n as f64))
                        .collect();
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    out.push(Curve {
                        label: format!("{name}: {count} groups"),
                        dash,
                        color: ci,
                        points,
                    });
                }
                table_idx += 1;
            }
        }
    }
    let offset = out.len();
    for (i, (label, mut points)) in reports.into_iter().enumerate() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.push(Curve {
            label,
            dash: Dash::Solid,
            color: offset + i,
            points,
        });
    }
    out
}

/// Accuracy (or mIoU) against label fraction on a log axis, one curve per
/// protocol and weights, or per pre-training subset size for ablation
/// tables. Successive ablation tables use solid, dashed and dotted lines.
pub fn plot_inputs(inputs: &[PlotInput], title: &str, out: &Path) -> Result<(), CliError> {
    let curves = curves(inputs);
    if curves.iter().all(|c| c.points.is_empty()) {
        return Err(CliError::Usage("nothing to plot".into()));
    }
    let xs = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !(lo > 0.0) {
        return Err(CliError::Usage("label fractions must be positive".into()));
    }
    let (lo, hi) = (lo / 1.5, hi * 1.5);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::runtime)?;
    }
    let root = SVGBackend::new(out, (800, 520)).into_drawing_area();
    let err = |e: &dyn std::fmt::Display| CliError::Runtime(format!("plotting failed: {e}"));
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((lo..hi).log_scale(), 0.0..100.0)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc("label fraction")
        .y_desc("score (%)")
        .draw()
        .map_err(|e| err(&e))?;
    for c in &curves {
        let color = Palette99::pick(c.color).to_rgba();
        let style = color.stroke_width(2);
        let anno = match c.dash {
            Dash::Solid => chart.draw_series(LineSeries::new(c.points.clone(), style)),
            Dash::Dashed => chart.draw_series(DashedLineSeries::new(c.points.clone(), 8, 5, style)),
            Dash::Dotted => chart.draw_series(DashedLineSeries::new(c.points.clone(), 2, 4, style)),
        }
        .map_err(|e| err(&e))?;
        anno.label(c.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(c.points.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| err(&e))?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}
