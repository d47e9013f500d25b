//! Structured text reports.
//!
//! Every report starts with a schema line `# <kind> v<version>`, followed by
//! `key: value` lines, then zero or more `[section]` blocks of tab-separated
//! rows whose first row names the columns. Reals are written in Rust's
//! shortest round-trip form, so two reports are byte-identical exactly when
//! the values they carry are bit-identical.

use std::fmt::{Display, Write as _};

use crate::entropy::{EntropyMap, SweepReport};
use crate::nn::Model;
use crate::screening::ClassReport;
use crate::transforms::TransformSchedule;
use crate::visualizer::{OptimConfig, RunTrace, StoppingCriterion};

pub const RUN_SCHEMA: &str = "tivis-run-report v1";
pub const SWEEP_SCHEMA: &str = "tivis-sweep-report v1";
pub const CLASS_SCHEMA: &str = "tivis-class-report v1";
pub const ENTROPY_SCHEMA: &str = "tivis-entropy-report v1";

#[derive(Default)]
pub struct ReportWriter {
    out: String,
}

impl ReportWriter {
    pub fn new(schema: &str) -> Self {
        Self {
            out: format!("# {schema}\n"),
        }
    }

    pub fn kv(&mut self, key: &str, value: impl Display) -> &mut Self {
        writeln!(self.out, "{key}: {value}").unwrap();
        self
    }

    pub fn section(&mut self, name: &str, columns: &[&str]) -> &mut Self {
        writeln!(self.out, "[{name}]\n{}", columns.join("\t")).unwrap();
        self
    }

    pub fn row(&mut self, cells: &[String]) -> &mut Self {
        writeln!(self.out, "{}", cells.join("\t")).unwrap();
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

fn config_lines(w: &mut ReportWriter, config: &OptimConfig) {
    w.kv("q_target", config.q_target)
        .kv("step_size", config.step_size)
        .kv("max_inner_steps", config.max_inner_steps)
        .kv("gradient_mode", config.gradient_mode.name())
        .kv("objective", config.objective.name());
}

fn target_line(w: &mut ReportWriter, model: &Model, target: usize) {
    let name = model
        .class_names()
        .get(target)
        .map(String::as_str)
        .unwrap_or("?");
    w.kv("target_class", format!("{target} {name}"));
}

/// Report of one visualization run.
#[allow(clippy::too_many_arguments)]
pub fn run_report(
    model: &Model,
    target: usize,
    init_desc: &str,
    schedule: &TransformSchedule,
    config: &OptimConfig,
    stop: &StoppingCriterion,
    trace: &RunTrace,
) -> String {
    let mut w = ReportWriter::new(RUN_SCHEMA);
    target_line(&mut w, model, target);
    w.kv("init", init_desc);
    config_lines(&mut w, config);
    w.kv("q_test", stop.q_test)
        .kv("max_outer_iterations", stop.max_outer_iterations)
        .kv("schedule", schedule.describe_steps())
        .kv("battery", schedule.describe_battery())
        .kv("status", trace.status.name())
        .kv("iterations", trace.records.len())
        .kv("total_inner_steps", trace.total_inner_steps())
        .kv("final_battery_min", trace.battery_min());
    w.section(
        "trace",
        &["iteration", "inner_steps", "confidence", "battery_min", "battery_mean", "applied"],
    );
    for r in &trace.records {
        w.row(&[
            r.iteration.to_string(),
            r.inner_steps.to_string(),
            r.confidence.to_string(),
            r.battery_min.to_string(),
            r.battery_mean.to_string(),
            r.applied.map_or_else(|| "-".to_string(), |t| t.to_string()),
        ]);
    }
    w.section("battery", &["transform", "confidence"]);
    for e in &trace.final_battery {
        w.row(&[e.transform.to_string(), e.confidence.to_string()]);
    }
    w.finish()
}

/// Report of a baseline (no-transform) run, with its battery table.
pub fn baseline_report(
    model: &Model,
    target: usize,
    init_desc: &str,
    config: &OptimConfig,
    steps: usize,
    reached_target: bool,
    confidence: f64,
    battery: &[crate::transforms::BatteryEntry],
) -> String {
    let mut w = ReportWriter::new(RUN_SCHEMA);
    target_line(&mut w, model, target);
    w.kv("mode", "baseline").kv("init", init_desc);
    config_lines(&mut w, config);
    w.kv("status", if reached_target { "reached_target" } else { "inner_cap" })
        .kv("inner_steps", steps)
        .kv("confidence", confidence)
        .kv("battery_min", crate::transforms::battery_summary(battery).0);
    w.section("battery", &["transform", "confidence"]);
    for e in battery {
        w.row(&[e.transform.to_string(), e.confidence.to_string()]);
    }
    w.finish()
}

pub fn sweep_report(
    model: &Model,
    target: usize,
    schedule: &TransformSchedule,
    config: &OptimConfig,
    stop: &StoppingCriterion,
    report: &SweepReport,
) -> String {
    let mut w = ReportWriter::new(SWEEP_SCHEMA);
    target_line(&mut w, model, target);
    config_lines(&mut w, config);
    w.kv("q_test", stop.q_test)
        .kv("max_outer_iterations", stop.max_outer_iterations)
        .kv("schedule", schedule.describe_steps())
        .kv("battery", schedule.describe_battery())
        .kv("entropy_window", report.window)
        .kv("entropy_stride", report.stride)
        .kv(
            "best_init",
            report
                .best_init
                .map_or_else(|| "none".to_string(), |g| g.to_string()),
        );
    w.section(
        "records",
        &[
            "gray_level",
            "image_id",
            "status",
            "avg_gray_change",
            "second_order_total",
            "first_order_mean",
        ],
    );
    for r in &report.records {
        let cells = match &r.outcome {
            Ok(s) => vec![
                r.gray_level.to_string(),
                r.image_id.clone(),
                s.status.name().to_string(),
                s.avg_gray_change.to_string(),
                s.second_order_total.to_string(),
                s.first_order_mean.to_string(),
            ],
            Err(e) => vec![
                r.gray_level.to_string(),
                r.image_id.clone(),
                format!("failed: {}", e.replace(['\t', '\n'], " ")),
                "-".into(),
                "-".into(),
                "-".into(),
            ],
        };
        w.row(&cells);
    }
    w.finish()
}

pub fn class_report(report: &ClassReport) -> String {
    let mut w = ReportWriter::new(CLASS_SCHEMA);
    w.kv("k", report.k);
    if let Some(r) = report.rect {
        w.kv("screen_rect", r);
    }
    w.section("predictions", &["image", "variant", "rank", "class", "percent"]);
    for row in &report.rows {
        for (rank, c) in row.top.iter().enumerate() {
            w.row(&[
                row.image_id.clone(),
                row.variant.name().to_string(),
                (rank + 1).to_string(),
                c.class_name.clone(),
                format!("{:.4}", c.percent),
            ]);
        }
    }
    w.finish()
}

pub fn entropy_report(
    image_id: &str,
    whole_image: f64,
    map: &EntropyMap,
    second_order: Option<f64>,
) -> String {
    let mut w = ReportWriter::new(ENTROPY_SCHEMA);
    w.kv("image", image_id)
        .kv("entropy2d", whole_image)
        .kv("window", map.window)
        .kv("stride", map.stride)
        .kv("map_rows", map.rows)
        .kv("map_cols", map.cols)
        .kv("map_mean", map.mean())
        .kv(
            "second_order_total",
            second_order.map_or_else(|| "n/a".to_string(), |v| v.to_string()),
        );
    w.section("map", &["row", "values"]);
    for r in 0..map.rows {
        let vals: Vec<String> = (0..map.cols).map(|c| format!("{:.6}", map.get(r, c))).collect();
        w.row(&[r.to_string(), vals.join(" ")]);
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writer_layout() {
        let mut w = ReportWriter::new("demo v1");
        w.kv("a", 1.5).section("rows", &["x", "y"]).row(&["1".into(), "2".into()]);
        assert_eq!(w.finish(), "# demo v1\na: 1.5\n[rows]\nx\ty\n1\t2\n");
    }
}
