//! Report generation: cross-seed training curves with moving-average
//! smoothing, cross-game regret tables with 95% intervals, and self-contained
//! SVG charts. Every reported number is recomputed from the raw run logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config;
use crate::error::{CoreError, Result};
use crate::eval::{mean_ci, parse_eval_report_csv, EvalCsvRow, MeanCi};
use crate::rewards::{game_bounds, REWARD_KINDS};
use crate::trainer::{parse_episode_metrics, EpisodeMetrics, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Svg,
}

impl ReportFormat {
    pub fn parse_list(s: &str) -> Result<Vec<ReportFormat>> {
        let mut out = Vec::new();
        for part in s.split(',') {
            match part.trim() {
                "csv" => out.push(ReportFormat::Csv),
                "svg" => out.push(ReportFormat::Svg),
                other => {
                    return Err(CoreError::InvalidConfig(format!(
                        "unknown report format '{other}', valid: csv, svg"
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// What to render and where.
#[derive(Clone, Debug)]
pub struct ReportSpec {
    pub run_dirs: Vec<PathBuf>,
    pub formats: Vec<ReportFormat>,
    /// Moving-average window for curves. The first `window - 1` episodes use
    /// partial-window means.
    pub window: usize,
    pub out_dir: PathBuf,
}

struct LoadedRun {
    config: RunConfig,
    metrics: Vec<EpisodeMetrics>,
    eval_rows: Vec<EvalCsvRow>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config_path = dir.join("config.txt");
    let config_text = std::fs::read_to_string(&config_path).map_err(|e| CoreError::BadLog {
        path: config_path.display().to_string(),
        msg: format!("missing or unreadable: {e}"),
    })?;
    let config = config::run_config_from_str(&config_path.display().to_string(), &config_text)?;

    let metrics_path = dir.join("episode_metrics.csv");
    let metrics_text = std::fs::read_to_string(&metrics_path).map_err(|e| CoreError::BadLog {
        path: metrics_path.display().to_string(),
        msg: format!("missing or unreadable: {e}"),
    })?;
    let metrics = parse_episode_metrics(&metrics_text).map_err(|e| CoreError::BadLog {
        path: metrics_path.display().to_string(),
        msg: e.to_string(),
    })?;

    let eval_path = dir.join("eval_report.csv");
    let eval_rows = if eval_path.exists() {
        let text = std::fs::read_to_string(&eval_path)
            .map_err(|e| CoreError::io(format!("reading {}", eval_path.display()), e))?;
        parse_eval_report_csv(&text).map_err(|e| CoreError::BadLog {
            path: eval_path.display().to_string(),
            msg: e.to_string(),
        })?
    } else {
        vec![]
    };

    Ok(LoadedRun {
        config,
        metrics,
        eval_rows,
    })
}

/// Trailing moving average; the first `window - 1` entries average what is
/// available so far.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    let mut out = Vec::with_capacity(values.len());
    for t in 0..values.len() {
        let start = (t + 1).saturating_sub(window);
        let slice = &values[start..=t];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    out
}

const CURVE_METRICS: [&str; 9] = [
    "freq_c_after_c",
    "freq_d_after_c",
    "freq_c_after_d",
    "freq_d_after_d",
    "illegal_rate",
    "norm_reward_game",
    "norm_reward_deontological",
    "norm_reward_utilitarian",
    "norm_reward_game_deontological",
];

fn metric_series(run: &LoadedRun, metric: &str) -> Result<Vec<f64>> {
    let game = run.config.game.resolve()?;
    let params = &run.config.schedule.params;
    let from = |f: fn(&EpisodeMetrics) -> f64| run.metrics.iter().map(f).collect::<Vec<f64>>();
    let series = match metric {
        "freq_c_after_c" => from(|m| m.freq_c_after_c),
        "freq_d_after_c" => from(|m| m.freq_d_after_c),
        "freq_c_after_d" => from(|m| m.freq_c_after_d),
        "freq_d_after_d" => from(|m| m.freq_d_after_d),
        "illegal_rate" => from(|m| m.illegal_rate),
        _ => {
            let kind_idx = REWARD_KINDS
                .iter()
                .position(|k| metric == format!("norm_reward_{}", k.name()))
                .expect("known metric");
            let (lo, hi) = game_bounds(REWARD_KINDS[kind_idx], params, &game)?;
            run.metrics
                .iter()
                .map(|m| (m.mean_reward_by_kind[kind_idx] - lo) / (hi - lo))
                .collect()
        }
    };
    Ok(series)
}

/// Render reports over the given run directories. Returns the files written.
pub fn render_report(spec: &ReportSpec) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&spec.out_dir)
        .map_err(|e| CoreError::io(format!("creating {}", spec.out_dir.display()), e))?;
    if spec.window < 1 {
        return Err(CoreError::InvalidConfig("window must be >= 1".into()));
    }
    let mut written = Vec::new();

    let mut runs = Vec::new();
    for dir in &spec.run_dirs {
        runs.push(load_run(dir)?);
    }

    // Group runs by everything but the seed.
    let mut groups: BTreeMap<String, Vec<&LoadedRun>> = BTreeMap::new();
    for run in &runs {
        let key = format!(
            "{}_{}_{}",
            run.config.game.label(),
            config::reward_label(&run.config.schedule),
            run.config.opponent.label()
        );
        groups.entry(key).or_default().push(run);
    }

    let want_csv = spec.formats.contains(&ReportFormat::Csv);
    let want_svg = spec.formats.contains(&ReportFormat::Svg);

    for (group, members) in &groups {
        let episodes = members[0].metrics.len();
        for run in members {
            if run.metrics.len() != episodes {
                return Err(CoreError::BadLog {
                    path: group.clone(),
                    msg: "runs in one group have different episode counts".into(),
                });
            }
        }
        // metric -> per-episode MeanCi across seeds of smoothed series.
        let mut curves: BTreeMap<&str, Vec<MeanCi>> = BTreeMap::new();
        for metric in CURVE_METRICS {
            let mut smoothed: Vec<Vec<f64>> = Vec::new();
            for run in members {
                smoothed.push(moving_average(&metric_series(run, metric)?, spec.window));
            }
            let mut per_episode = Vec::with_capacity(episodes);
            for t in 0..episodes {
                let values: Vec<f64> = smoothed.iter().map(|s| s[t]).collect();
                per_episode.push(mean_ci(&values));
            }
            curves.insert(metric, per_episode);
        }

        if want_csv {
            let mut csv = String::from("episode");
            for metric in CURVE_METRICS {
                let _ = write!(csv, ",{metric},{metric}_ci_low,{metric}_ci_high");
            }
            csv.push('\n');
            #[allow(clippy::needless_range_loop)] // t is the episode column
            for t in 0..episodes {
                let _ = write!(csv, "{t}");
                for metric in CURVE_METRICS {
                    let m = curves[metric][t];
                    let _ = write!(csv, ",{},{},{}", m.mean, m.ci_low, m.ci_high);
                }
                csv.push('\n');
            }
            let path = spec.out_dir.join(format!("curves_{group}.csv"));
            std::fs::write(&path, csv)
                .map_err(|e| CoreError::io(format!("writing {}", path.display()), e))?;
            written.push(path);
        }

        if want_svg {
            let action_series: Vec<LineSeries> = CURVE_METRICS[..5]
                .iter()
                .map(|metric| LineSeries {
                    label: metric.to_string(),
                    points: curves[metric].iter().map(|m| m.mean).collect(),
                })
                .collect();
            let path = spec.out_dir.join(format!("action_types_{group}.svg"));
            std::fs::write(
                &path,
                svg_line_chart(group, "episode", "share", &action_series),
            )
            .map_err(|e| CoreError::io(format!("writing {}", path.display()), e))?;
            written.push(path);

            let reward_series: Vec<LineSeries> = CURVE_METRICS[5..]
                .iter()
                .map(|metric| LineSeries {
                    label: metric.trim_start_matches("norm_reward_").to_string(),
                    points: curves[metric].iter().map(|m| m.mean).collect(),
                })
                .collect();
            let path = spec.out_dir.join(format!("moral_reward_{group}.svg"));
            std::fs::write(
                &path,
                svg_line_chart(group, "episode", "normalized reward", &reward_series),
            )
            .map_err(|e| CoreError::io(format!("writing {}", path.display()), e))?;
            written.push(path);
        }
    }

    // Cross-game summary of evaluation metrics, one row per
    // (game, trained_kind, metric), aggregated across runs.
    let mut eval_groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for run in &runs {
        for row in &run.eval_rows {
            eval_groups
                .entry((
                    row.game.clone(),
                    row.trained_kind.clone(),
                    row.metric.clone(),
                ))
                .or_default()
                .push(row.value);
        }
    }
    if !eval_groups.is_empty() {
        if want_csv {
            let mut csv = String::from("game,trained_kind,metric,mean,ci_low,ci_high,n\n");
            for ((game, kind, metric), values) in &eval_groups {
                let m = mean_ci(values);
                let _ = writeln!(
                    csv,
                    "{game},{kind},{metric},{},{},{},{}",
                    m.mean,
                    m.ci_low,
                    m.ci_high,
                    values.len()
                );
            }
            let path = spec.out_dir.join("regret_summary.csv");
            std::fs::write(&path, csv)
                .map_err(|e| CoreError::io(format!("writing {}", path.display()), e))?;
            written.push(path);
        }
        if want_svg {
            let metrics: Vec<String> = {
                let mut m: Vec<String> = eval_groups
                    .keys()
                    .map(|(_, _, metric)| metric.clone())
                    .collect();
                m.sort();
                m.dedup();
                m
            };
            for metric in metrics {
                let bars: Vec<Bar> = eval_groups
                    .iter()
                    .filter(|((_, _, m), _)| *m == metric)
                    .map(|((game, kind, _), values)| {
                        let m = mean_ci(values);
                        Bar {
                            label: format!("{game}/{kind}"),
                            value: m.mean,
                            ci_low: m.ci_low,
                            ci_high: m.ci_high,
                        }
                    })
                    .collect();
                let path = spec.out_dir.join(format!("eval_{metric}.svg"));
                std::fs::write(&path, svg_bar_chart(&metric, &bars))
                    .map_err(|e| CoreError::io(format!("writing {}", path.display()), e))?;
                written.push(path);
            }
        }
    }

    Ok(written)
}

pub struct LineSeries {
    pub label: String,
    /// y values; x is the index.
    pub points: Vec<f64>,
}

pub struct Bar {
    pub label: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

const PALETTE: [&str; 9] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22",
];

const W: f64 = 860.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;

fn axis_frame(out: &mut String, title: &str, x_label: &str, y_label: &str, y_min: f64, y_max: f64) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(
        out,
        r#"<rect width="{W}" height="{H}" fill="white"/><text x="{}" y="22" font-family="sans-serif" font-size="15">{}</text>"#,
        MARGIN_L,
        xml_escape(title)
    );
    let plot_w = W - MARGIN_L - MARGIN_R;
    let plot_h = H - MARGIN_T - MARGIN_B;
    let _ = write!(
        out,
        r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let y = MARGIN_T + plot_h * (1.0 - frac);
        let value = y_min + (y_max - y_min) * frac;
        let _ = write!(
            out,
            r##"<line x1="{MARGIN_L}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{value:.2}</text>"##,
            MARGIN_L + plot_w,
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        H - 12.0,
        xml_escape(x_label)
    );
    let _ = write!(
        out,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        xml_escape(y_label)
    );
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// A self-contained line chart; x is the sample index.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[LineSeries]) -> String {
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut x_max = 1.0f64;
    for s in series {
        x_max = x_max.max(s.points.len().saturating_sub(1) as f64);
        for &y in &s.points {
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let plot_w = W - MARGIN_L - MARGIN_R;
    let plot_h = H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + plot_w * x / x_max.max(1.0);
    let sy = |y: f64| MARGIN_T + plot_h * (1.0 - (y - y_min) / (y_max - y_min));

    let mut out = String::new();
    axis_frame(&mut out, title, x_label, y_label, y_min, y_max);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for (t, &y) in s.points.iter().enumerate() {
            let cmd = if t == 0 { 'M' } else { 'L' };
            let _ = write!(path, "{cmd}{:.2},{:.2} ", sx(t as f64), sy(y));
        }
        let _ = write!(
            out,
            r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
        let ly = MARGIN_T + 16.0 * i as f64 + 10.0;
        let lx = W - MARGIN_R + 12.0;
        let _ = write!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            xml_escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// A self-contained bar chart with 95% interval whiskers.
pub fn svg_bar_chart(title: &str, bars: &[Bar]) -> String {
    let mut y_min = 0.0f64;
    let mut y_max = f64::NEG_INFINITY;
    for b in bars {
        y_min = y_min.min(b.ci_low);
        y_max = y_max.max(b.ci_high).max(b.value);
    }
    if !y_max.is_finite() || y_max <= y_min {
        y_max = y_min + 1.0;
    }
    let plot_w = W - MARGIN_L - MARGIN_R;
    let plot_h = H - MARGIN_T - MARGIN_B;
    let sy = |y: f64| MARGIN_T + plot_h * (1.0 - (y - y_min) / (y_max - y_min));

    let mut out = String::new();
    axis_frame(&mut out, title, "", "value", y_min, y_max);
    let n = bars.len().max(1) as f64;
    let slot = plot_w / n;
    let bar_w = (slot * 0.6).min(48.0);
    for (i, b) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cx = MARGIN_L + slot * (i as f64 + 0.5);
        let y0 = sy(0.0f64.max(y_min));
        let y1 = sy(b.value);
        let (top, height) = if y1 < y0 {
            (y1, y0 - y1)
        } else {
            (y0, y1 - y0)
        };
        let _ = write!(
            out,
            r#"<rect x="{:.2}" y="{top:.2}" width="{bar_w:.2}" height="{height:.2}" fill="{color}"/>"#,
            cx - bar_w / 2.0
        );
        let _ = write!(
            out,
            r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#222" stroke-width="1.5"/>"##,
            sy(b.ci_low),
            sy(b.ci_high)
        );
        let _ = write!(
            out,
            r#"<text x="{cx:.2}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            H - MARGIN_B + 14.0,
            xml_escape(&b.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
