//! One-axis hyperparameter sweeps with CSV and SVG output.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::{csv_err, evaluate_split};
use super::model::Runtime;
use super::prepare::{prepare_from, PreparedData};
use super::train::{init_model, train};
use crate::data::{Cascade, SplitName};
use crate::dynamics::SolverMethod;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DiffusionSteps,
    HiddenDim,
    Intervals,
    Solver,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::DiffusionSteps => "diffusion_steps",
            Self::HiddenDim => "hidden_dim",
            Self::Intervals => "intervals",
            Self::Solver => "solver",
        }
    }

    /// Returns `cfg` with the axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        let int = |v: &str| v.parse::<usize>().map_err(|_| Error::Config(format!("{}: `{v}` is not an integer", self.name())));
        match self {
            Self::DiffusionSteps => c.diff.k = int(value)?,
            Self::HiddenDim => c.model.d_h = int(value)?,
            Self::Intervals => c.data.intervals = int(value)?,
            Self::Solver => c.ode.method = value.parse::<SolverMethod>()?,
        }
        c.validate()?;
        Ok(c)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Self::DiffusionSteps, Self::HiddenDim, Self::Intervals, Self::Solver]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis `{s}` (diffusion_steps, hidden_dim, intervals, solver)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub msle: f64,
    pub mape: f64,
    pub count: usize,
    pub seconds: f64,
}

/// One train and test run per value, all under the config seed. Only the
/// interval axis changes the labels, so other axes share `data`.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    cascades: &[Cascade],
    data: &PreparedData,
) -> Result<Vec<SweepRow>> {
    let configs: Vec<ExperimentConfig> = values.iter().map(|v| axis.apply(cfg, v)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, c) in values.iter().zip(&configs) {
        let start = Instant::now();
        let relabeled;
        let d = if axis == SweepAxis::Intervals {
            relabeled = prepare_from(c, cascades, Some(data.global.clone()))?;
            &relabeled
        } else {
            data
        };
        let rt = Runtime::new(c)?;
        let (model, mut store) = init_model(c);
        train(c, &model, &mut store, d, &rt)?;
        let (report, _) = evaluate_split(&model, &store, d, SplitName::Test, &rt, &c.hash())?;
        let row = SweepRow {
            axis,
            value: value.clone(),
            msle: report.msle,
            mape: report.mape,
            count: report.count,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{} = {value}: test msle {:.4}", axis.name(), row.msle);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Test MSLE and MAPE against the swept value, as an SVG line chart.
pub fn plot_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let plot_err = |e: String| Error::InvalidArgument(format!("plot: {e}"));
    if rows.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let axis = rows[0].axis.name();
    let hi = rows.iter().flat_map(|r| [r.msle, r.mape]).fold(0.0, f64::max).max(1e-9) * 1.1;
    let n = rows.len();
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("test error vs {axis}"), ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(-0.5..(n as f64 - 0.5), 0.0..hi)
        .map_err(|e| plot_err(e.to_string()))?;
    let labels: Vec<String> = rows.iter().map(|r| r.value.clone()).collect();
    chart
        .configure_mesh()
        .x_desc(axis)
        .y_desc("error")
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 { labels.get(i as usize).cloned().unwrap_or_default() } else { String::new() }
        })
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    for (name, color, get) in [("MSLE", BLUE, (|r: &SweepRow| r.msle) as fn(&SweepRow) -> f64), ("MAPE", RED, |r| r.mape)] {
        let pts: Vec<(f64, f64)> = rows.iter().enumerate().map(|(i, r)| (i as f64, get(r))).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color))
            .map_err(|e| plot_err(e.to_string()))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled()))).map_err(|e| plot_err(e.to_string()))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    root.present().map_err(|e| plot_err(e.to_string()))?;
    Ok(())
}
