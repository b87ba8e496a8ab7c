//! Evaluation grid (models × attacks → AUC), score histograms, and the CSV
//! and SVG artifacts built from them.
//!
//! CSV files start with `# key = value` comment lines carrying the effective
//! configuration, followed by a header row and fixed-point rows with six
//! decimals.

use std::fmt::Write as _;
use std::path::Path;

use crate::attack::{attack_suite, AttackConfig, AttackSpec};
use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::io::write_atomic;
use crate::objective::{auc_exact, ObjectiveContext};
use crate::trainer::{EpochRecord, TrainHistory, TrainMode};
use crate::{Error, Result};

/// Context used by evaluation attacks: the evaluated set's positive fraction
/// and no concavity regularizer, so the attacker targets the AUC surrogate
/// itself.
pub fn evaluation_context(ds: &Dataset) -> Result<ObjectiveContext> {
    ObjectiveContext::new(ds.p(), 0.0)
}

/// A trained model under a display name.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedModel {
    pub method: String,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub method: String,
    pub mode: TrainMode,
    pub attack: AttackSpec,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cells: Vec<ReportCell>,
    pub metadata: Vec<(String, String)>,
}

impl EvalReport {
    pub fn get(&self, method: &str, attack: AttackSpec) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.attack == attack)
            .map(|c| c.auc)
    }
}

/// Scores every model on every attacked copy of `dataset`. Attacks run at
/// full budget with no FOSC early stop.
pub fn evaluate_grid(
    models: &[NamedModel],
    dataset: &Dataset,
    specs: &[AttackSpec],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<EvalReport> {
    let ctx = evaluation_context(dataset)?;
    let mut cells = Vec::with_capacity(models.len() * specs.len());
    for m in models {
        let ck = &m.checkpoint;
        let attacked = attack_suite(&ctx, &ck.params, &ck.aux, dataset, specs, cfg, seed)?;
        for (spec, ds) in attacked {
            let scores = ck.params.score_rows(ds.features())?;
            cells.push(ReportCell {
                method: m.method.clone(),
                mode: ck.mode,
                attack: spec,
                auc: auc_exact(&scores, ds.labels())?,
            });
        }
    }
    Ok(EvalReport {
        cells,
        metadata: vec![
            ("dataset".into(), dataset.name().to_string()),
            ("seed".into(), seed.to_string()),
            ("eps".into(), cfg.eps.to_string()),
            ("beta".into(), cfg.beta.to_string()),
        ],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    /// `n_bins + 1` edges over `[0, 1]`.
    pub edges: Vec<f64>,
    pub pos_counts: Vec<usize>,
    pub neg_counts: Vec<usize>,
    pub attack: AttackSpec,
}

/// Per-class score histogram on the (possibly attacked) dataset. Also returns
/// the raw scores so callers can cross-check aggregate metrics.
pub fn score_histogram(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    attack: AttackSpec,
    cfg: &AttackConfig,
    seed: u64,
    n_bins: usize,
) -> Result<(ScoreHistogram, Vec<f64>)> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument("need at least two bins".into()));
    }
    let ctx = evaluation_context(dataset)?;
    let (_, ds) = attack_suite(
        &ctx,
        &checkpoint.params,
        &checkpoint.aux,
        dataset,
        &[attack],
        cfg,
        seed,
    )?
    .pop()
    .expect("one spec in, one dataset out");
    let scores = checkpoint.params.score_rows(ds.features())?;
    let mut pos_counts = vec![0; n_bins];
    let mut neg_counts = vec![0; n_bins];
    for (&s, &y) in scores.iter().zip(ds.labels()) {
        let bin = ((s * n_bins as f64) as usize).min(n_bins - 1);
        if y == 1 {
            pos_counts[bin] += 1;
        } else {
            neg_counts[bin] += 1;
        }
    }
    let edges = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    Ok((
        ScoreHistogram {
            edges,
            pos_counts,
            neg_counts,
            attack,
        },
        scores,
    ))
}

/// Six-decimal fixed point; rounding never yields `-0.000000`.
fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn header_block(header: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out
}

pub fn report_csv(report: &EvalReport, header: &[(String, String)]) -> String {
    let mut out = header_block(header);
    let extra: Vec<(String, String)> = report
        .metadata
        .iter()
        .filter(|(k, _)| !header.iter().any(|(h, _)| h == k))
        .cloned()
        .collect();
    out.push_str(&header_block(&extra));
    out.push_str("method,mode,attack,auc\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c.method,
            c.mode,
            c.attack,
            fixed6(c.auc)
        );
    }
    out
}

pub fn history_csv(history: &TrainHistory, header: &[(String, String)]) -> String {
    let mut out = header_block(header);
    out.push_str("epoch,objective,auc_clean,auc_attacked,grad_norm_w,mean_fosc,c_t\n");
    for r in &history.records {
        let attacked = r.auc_attacked.map(fixed6).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            fixed6(r.objective),
            fixed6(r.auc_clean),
            attacked,
            fixed6(r.grad_norm_w),
            fixed6(r.mean_fosc),
            fixed6(r.c_t)
        );
    }
    out
}

pub fn histogram_csv(h: &ScoreHistogram, header: &[(String, String)]) -> String {
    let mut out = header_block(header);
    let _ = writeln!(out, "# attack = {}", h.attack);
    out.push_str("bin_lo,bin_hi,pos_count,neg_count\n");
    for i in 0..h.pos_counts.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fixed6(h.edges[i]),
            fixed6(h.edges[i + 1]),
            h.pos_counts[i],
            h.neg_counts[i]
        );
    }
    out
}

pub fn write_report_csv(
    report: &EvalReport,
    header: &[(String, String)],
    path: &Path,
) -> Result<()> {
    write_atomic(path, report_csv(report, header).as_bytes())
}

pub fn write_history_csv(
    history: &TrainHistory,
    header: &[(String, String)],
    path: &Path,
) -> Result<()> {
    write_atomic(path, history_csv(history, header).as_bytes())
}

pub fn write_histogram_csv(
    h: &ScoreHistogram,
    header: &[(String, String)],
    path: &Path,
) -> Result<()> {
    write_atomic(path, histogram_csv(h, header).as_bytes())
}

/// Data rows of a CSV document: comments and the header row are skipped.
fn data_rows<'a>(
    text: &'a str,
    expected_header: &str,
    what: &'static str,
) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == expected_header => {}
        _ => {
            return Err(Error::format(
                what,
                format!("expected header `{expected_header}`"),
            ))
        }
    }
    Ok(lines.map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())))
}

fn num<T: std::str::FromStr>(field: &str, line: usize, what: &'static str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::format(what, format!("line {line}: bad number `{field}`")))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportCell>> {
    const WHAT: &str = "report csv";
    data_rows(text, "method,mode,attack,auc", WHAT)?
        .map(|(line, f)| {
            if f.len() != 4 {
                return Err(Error::format(
                    WHAT,
                    format!("line {line}: expected 4 fields"),
                ));
            }
            Ok(ReportCell {
                method: f[0].to_string(),
                mode: f[1].parse()?,
                attack: f[2].parse()?,
                auc: num(f[3], line, WHAT)?,
            })
        })
        .collect()
}

pub fn parse_history_csv(text: &str) -> Result<TrainHistory> {
    const WHAT: &str = "history csv";
    let records = data_rows(
        text,
        "epoch,objective,auc_clean,auc_attacked,grad_norm_w,mean_fosc,c_t",
        WHAT,
    )?
    .map(|(line, f)| {
        if f.len() != 7 {
            return Err(Error::format(
                WHAT,
                format!("line {line}: expected 7 fields"),
            ));
        }
        Ok(EpochRecord {
            epoch: num(f[0], line, WHAT)?,
            objective: num(f[1], line, WHAT)?,
            auc_clean: num(f[2], line, WHAT)?,
            auc_attacked: if f[3].is_empty() {
                None
            } else {
                Some(num(f[3], line, WHAT)?)
            },
            grad_norm_w: num(f[4], line, WHAT)?,
            mean_fosc: num(f[5], line, WHAT)?,
            c_t: num(f[6], line, WHAT)?,
        })
    })
    .collect::<Result<_>>()?;
    Ok(TrainHistory { records })
}

/// Rows of `(bin_lo, bin_hi, pos_count, neg_count)`.
pub fn parse_histogram_csv(text: &str) -> Result<Vec<(f64, f64, usize, usize)>> {
    const WHAT: &str = "histogram csv";
    data_rows(text, "bin_lo,bin_hi,pos_count,neg_count", WHAT)?
        .map(|(line, f)| {
            if f.len() != 4 {
                return Err(Error::format(
                    WHAT,
                    format!("line {line}: expected 4 fields"),
                ));
            }
            Ok((
                num(f[0], line, WHAT)?,
                num(f[1], line, WHAT)?,
                num(f[2], line, WHAT)?,
                num(f[3], line, WHAT)?,
            ))
        })
        .collect()
}

/// One polyline of an SVG line chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 600.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders an 800×600 SVG 1.1 line chart with axes, tick labels and a legend.
pub fn svg_lines(
    series: &[Series],
    title: &str,
    x_label: &str,
    y_label: &str,
    header: &[(String, String)],
) -> String {
    let finite = |v: &f64| v.is_finite();
    let xs = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .filter(finite);
    let ys = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .filter(finite);
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !(x0 < x1) {
        (x0, x1) = if x0.is_finite() {
            (x0 - 0.5, x0 + 0.5)
        } else {
            (0.0, 1.0)
        };
    }
    if !(y0 < y1) {
        (y0, y1) = if y0.is_finite() {
            (y0 - 0.5, y0 + 0.5)
        } else {
            (0.0, 1.0)
        };
    }
    let pw = SVG_W - MARGIN_L - MARGIN_R;
    let ph = SVG_H - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    for (k, v) in header {
        let _ = writeln!(out, "<!-- {} = {} -->", escape(k), escape(v));
    }
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">"
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">{}</text>",
        SVG_W / 2.0,
        escape(title)
    );
    // axes
    let (ax, ay) = (MARGIN_L, MARGIN_T + ph);
    let _ = writeln!(
        out,
        "<line x1=\"{ax:.1}\" y1=\"{ay:.1}\" x2=\"{:.1}\" y2=\"{ay:.1}\" stroke=\"black\"/>",
        ax + pw
    );
    let _ = writeln!(
        out,
        "<line x1=\"{ax:.1}\" y1=\"{MARGIN_T:.1}\" x2=\"{ax:.1}\" y2=\"{ay:.1}\" stroke=\"black\"/>"
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{:.3}</text>",
            px(xv),
            ay + 18.0,
            xv
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">{:.3}</text>",
            ax - 6.0,
            py(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        MARGIN_L + pw / 2.0,
        SVG_H - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\" transform=\"rotate(-90 18 {:.1})\">{}</text>",
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        );
        let ly = MARGIN_T + 10.0 + 20.0 * k as f64;
        let lx = MARGIN_L + pw - 150.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            lx + 25.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            lx + 32.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg_lines(
    series: &[Series],
    title: &str,
    x_label: &str,
    y_label: &str,
    header: &[(String, String)],
    path: &Path,
) -> Result<()> {
    write_atomic(
        path,
        svg_lines(series, title, x_label, y_label, header).as_bytes(),
    )
}

/// Clean and attacked AUC curves from a training history.
pub fn history_series(history: &TrainHistory) -> Vec<Series> {
    let mut out = vec![Series {
        label: "auc_clean".into(),
        points: history
            .records
            .iter()
            .map(|r| (r.epoch as f64, r.auc_clean))
            .collect(),
    }];
    let attacked: Vec<(f64, f64)> = history
        .records
        .iter()
        .filter_map(|r| r.auc_attacked.map(|a| (r.epoch as f64, a)))
        .collect();
    if !attacked.is_empty() {
        out.push(Series {
            label: "auc_attacked".into(),
            points: attacked,
        });
    }
    out
}

/// Positive and negative count curves over bin centres.
pub fn histogram_series(rows: &[(f64, f64, usize, usize)]) -> Vec<Series> {
    let centre = |r: &(f64, f64, usize, usize)| 0.5 * (r.0 + r.1);
    vec![
        Series {
            label: "positive".into(),
            points: rows.iter().map(|r| (centre(r), r.2 as f64)).collect(),
        },
        Series {
            label: "negative".into(),
            points: rows.iter().map(|r| (centre(r), r.3 as f64)).collect(),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic_longtail;
    use crate::linalg::Matrix;
    use crate::model::ScorerParams;
    use crate::objective::AuxParams;

    fn linear_model(w: Vec<f64>, name: &str) -> NamedModel {
        let d = w.len() - 1;
        NamedModel {
            method: name.into(),
            checkpoint: Checkpoint {
                mode: TrainMode::Natural,
                params: ScorerParams::from_flat(&[d, 1], w).unwrap(),
                aux: AuxParams::new(0.5, 0.5, 0.0).unwrap(),
            },
        }
    }

    #[test]
    fn perfect_separator_scores_one_on_clean() {
        let xs = Matrix::from_vec(4, 1, vec![0.9, 0.8, 0.2, 0.1]).unwrap();
        let ds = Dataset::new(xs, vec![1, 1, 0, 0], "toy").unwrap();
        let m = linear_model(vec![5.0, -2.5], "sep");
        let specs = [AttackSpec::Clean, AttackSpec::Pgd(5)];
        let r = evaluate_grid(&[m], &ds, &specs, &AttackConfig::default(), 0).unwrap();
        assert_eq!(r.cells.len(), 2);
        assert_eq!(r.get("sep", AttackSpec::Clean), Some(1.0));
    }

    #[test]
    fn random_scorer_is_near_half_on_null_data() {
        let ds = gen_synthetic_longtail(2, 2000, 6, 0.1, 0.0).unwrap();
        let models: Vec<NamedModel> = (0..3)
            .map(|s| NamedModel {
                method: format!("rand{s}"),
                checkpoint: Checkpoint {
                    mode: TrainMode::Natural,
                    params: ScorerParams::init(&[6, 4, 1], 100 + s).unwrap(),
                    aux: AuxParams::new(0.5, 0.5, 0.0).unwrap(),
                },
            })
            .collect();
        let specs = [AttackSpec::Clean, AttackSpec::Fgsm, AttackSpec::Pgd(5)];
        let cfg = AttackConfig::default();
        let r = evaluate_grid(&models, &ds, &specs, &cfg, 4).unwrap();
        for c in r.cells.iter().filter(|c| c.attack == AttackSpec::Clean) {
            assert!((c.auc - 0.5).abs() <= 0.05, "{c:?}");
        }
        assert!(r.cells.iter().all(|c| (0.0..=1.0).contains(&c.auc)));
        assert_eq!(r, evaluate_grid(&models, &ds, &specs, &cfg, 4).unwrap());
    }

    #[test]
    fn histogram_conservation_and_consistency() {
        let ds = gen_synthetic_longtail(7, 300, 4, 0.2, 3.0).unwrap();
        let m = linear_model(vec![1.0, -0.5, 2.0, 0.3, -1.0], "m");
        let cfg = AttackConfig::default();
        let (h, scores) =
            score_histogram(&m.checkpoint, &ds, AttackSpec::Pgd(3), &cfg, 1, 10).unwrap();
        assert_eq!(h.pos_counts.iter().sum::<usize>(), ds.n_pos());
        assert_eq!(h.neg_counts.iter().sum::<usize>(), ds.n_neg());
        let r = evaluate_grid(&[m], &ds, &[AttackSpec::Pgd(3)], &cfg, 1).unwrap();
        assert_eq!(r.cells[0].auc, auc_exact(&scores, ds.labels()).unwrap());

        let constant = linear_model(vec![0.0; 5], "c");
        let (h, _) =
            score_histogram(&constant.checkpoint, &ds, AttackSpec::Clean, &cfg, 1, 8).unwrap();
        assert_eq!(h.pos_counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.neg_counts.iter().filter(|&&c| c > 0).count(), 1);
        assert!(score_histogram(&constant.checkpoint, &ds, AttackSpec::Clean, &cfg, 1, 1).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let report = EvalReport {
            cells: vec![ReportCell {
                method: "mlp".into(),
                mode: TrainMode::AtFosc,
                attack: AttackSpec::Pgd(10),
                auc: 0.81234567,
            }],
            metadata: vec![("seed".into(), "3".into())],
        };
        let header = vec![("mode".to_string(), "at2".to_string())];
        let text = report_csv(&report, &header);
        assert!(text.starts_with("# mode = at2\n# seed = 3\nmethod,mode,attack,auc\n"));
        let back = parse_report_csv(&text).unwrap();
        assert!((back[0].auc - 0.81234567).abs() <= 1e-6);
        assert_eq!(back[0].attack, AttackSpec::Pgd(10));

        let history = TrainHistory {
            records: vec![EpochRecord {
                epoch: 0,
                objective: -0.123456789,
                auc_clean: 0.75,
                auc_attacked: None,
                grad_norm_w: 1.5,
                mean_fosc: 0.01,
                c_t: 0.02,
            }],
        };
        let back = parse_history_csv(&history_csv(&history, &[])).unwrap();
        assert!((back.records[0].objective - -0.123456789).abs() <= 1e-6);
        assert_eq!(back.records[0].auc_attacked, None);

        assert!(parse_report_csv("nope\n1,2,3,4\n").is_err());
    }

    #[test]
    fn svg_is_deterministic_and_handles_empty_input() {
        let empty = svg_lines(&[], "t", "x", "y", &[]);
        assert!(empty.contains("<svg") && empty.contains("<line") && !empty.contains("polyline"));
        let s = vec![Series {
            label: "a<b".into(),
            points: vec![(0.0, 0.5), (1.0, 0.7), (2.0, 0.9)],
        }];
        let one = svg_lines(&s, "t", "x", "y", &[("k".into(), "v".into())]);
        assert_eq!(
            one,
            svg_lines(&s, "t", "x", "y", &[("k".into(), "v".into())])
        );
        assert!(one.contains("a&lt;b") && one.contains("<!-- k = v -->"));
        assert!(one.contains("width=\"800\" height=\"600\""));
    }
}
