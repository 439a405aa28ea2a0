use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{mean_ci, SkillStats, SuccessTable};
use crate::corpus::{bytes_hash, load_jsonl, EnrichedTrajectory, LatentAssignment};
use crate::error::{Error, Result};
use crate::tvi::{EpochLog, SkillLibrary};

/// Named polyline for [`line_plot_svg`].
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Minimal line chart with axes, tick labels and a legend.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, l, r, t, b) = (560.0, 340.0, 60.0, 140.0, 30.0, 45.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let py = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, (w - r + l) / 2.0, esc(title));
    let _ = writeln!(s, r#"<line x1="{l}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - b, w - r, h - b);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{}" stroke="black"/>"#, h - b);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(xv), h - b + 14.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 4.0, py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (w - r + l) / 2.0, h - 8.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        (h - b + t) / 2.0,
        esc(y_label)
    );
    for (i, se) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = se.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = t + 14.0 * i as f64 + 6.0;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, w - r + 10.0, w - r + 26.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - r + 30.0, ly + 4.0, esc(&se.name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v.fract() == 0.0 && v.abs() >= 10.0) {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two bars per trajectory: the proposed segments (alternating shades) and
/// the decoded skills (one color per skill id), with annotations as hover
/// titles.
pub fn segmentation_svg(items: &[(EnrichedTrajectory, LatentAssignment)]) -> String {
    let cell = 8.0;
    let row_h = 46.0;
    let width = 120.0 + cell * items.iter().map(|(t, _)| t.len()).max().unwrap_or(1) as f64;
    let height = 20.0 + row_h * items.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (i, (t, a)) in items.iter().enumerate() {
        let y = 10.0 + row_h * i as f64;
        let _ = writeln!(s, r#"<text x="4" y="{}">traj {i} proposed</text>"#, y + 12.0);
        let _ = writeln!(s, r#"<text x="4" y="{}">decoded</text>"#, y + 32.0);
        let mut seg = 0usize;
        let mut ann = String::new();
        for step in 0..t.len() {
            if t.beta_bar[step] == 1 {
                seg += 1;
                ann = t.annotations[step].clone();
            }
            let x = 110.0 + cell * step as f64;
            let shade = if seg % 2 == 0 { "#bbbbbb" } else { "#777777" };
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="16" fill="{shade}"><title>{}</title></rect>"#,
                esc(&ann)
            );
            let k = a.skills[step];
            let c = PALETTE[k % PALETTE.len()];
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{}" width="{cell}" height="16" fill="{c}"><title>skill {k}</title></rect>"#,
                y + 20.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Index of what a report contains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Section name to "ok" or "no data".
    pub sections: BTreeMap<String, String>,
    /// Written file name to content hash.
    pub files: BTreeMap<String, String>,
}

/// Downstream curve record as written by the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub method: String,
    pub task: String,
    pub env_steps: usize,
    pub success_rate: f64,
    pub seed: u64,
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<Option<T>> {
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
}

fn read_lines<T: serde::de::DeserializeOwned>(p: &Path) -> Result<Option<Vec<T>>> {
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(load_jsonl(p)?))
}

struct Writer {
    dir: PathBuf,
    report: Report,
}

impl Writer {
    fn put(&mut self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), body)?;
        self.report.files.insert(name.to_string(), bytes_hash(body.as_bytes()));
        Ok(())
    }

    fn section(&mut self, name: &str, present: bool) -> Result<()> {
        self.report.sections.insert(name.into(), if present { "ok" } else { "no data" }.into());
        if !present {
            self.put(&format!("{name}.txt"), &format!("{name}: no data\n"))?;
        }
        Ok(())
    }
}

fn tsv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join("\t");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join("\t"));
        s.push('\n');
    }
    s
}

/// Builds `report/` under a run root from whatever stage outputs exist:
/// `tvi/train_log.jsonl`, `skills/{library,stats}.json`,
/// `skills/assignments.jsonl`, `segment/enriched.jsonl`,
/// `zero_shot/*.json` and `downstream/curves.jsonl`. Output depends only on
/// those inputs.
pub fn emit_report(run: &Path, out: &Path) -> Result<Report> {
    if !run.is_dir() {
        return Err(Error::MissingInput(format!("run directory {} does not exist", run.display())));
    }
    fs::create_dir_all(out)?;
    let mut w = Writer { dir: out.to_path_buf(), report: Report { sections: BTreeMap::new(), files: BTreeMap::new() } };

    let log: Option<Vec<EpochLog>> = read_lines(&run.join("tvi/train_log.jsonl"))?;
    w.section("training", log.as_ref().is_some_and(|l| !l.is_empty()))?;
    if let Some(log) = log.filter(|l| !l.is_empty()) {
        let rows = log.iter().map(|e| {
            vec![e.epoch.to_string(), f(e.total), f(e.elbo), f(e.kl_beta), f(e.kl_k), f(e.mdl), f(e.temperature), e.warmup.to_string()]
        });
        w.put("training.tsv", &tsv(&["epoch", "total", "elbo", "kl_beta", "kl_k", "mdl", "temperature", "warmup"], rows))?;
        let series = [
            Series { name: "total".into(), points: log.iter().map(|e| (e.epoch as f64, e.total)).collect() },
            Series { name: "mdl".into(), points: log.iter().map(|e| (e.epoch as f64, e.mdl)).collect() },
        ];
        w.put("training.svg", &line_plot_svg("training losses", "epoch", "nats per trajectory", &series))?;
    }

    let lib: Option<SkillLibrary> = read_json(&run.join("skills/library.json"))?;
    w.section("skills", lib.is_some())?;
    if let Some(lib) = &lib {
        let rows = (0..lib.k).filter(|&s| lib.usage[s] > 0).map(|s| {
            vec![s.to_string(), lib.usage[s].to_string(), f(lib.usage_fraction(s)), lib.kept.contains(&s).to_string()]
        });
        w.put("skills.tsv", &tsv(&["skill", "segments", "fraction", "kept"], rows))?;
    }

    let stats: Option<SkillStats> = read_json(&run.join("skills/stats.json"))?;
    w.section("skill_stats", stats.is_some())?;
    if let Some(st) = &stats {
        let names: Vec<String> = crate::gridworld::action_defs().into_iter().map(|a| a.name.replace(' ', "_")).collect();
        let mut header = vec!["skill"];
        header.extend(names.iter().map(String::as_str));
        let rows = st.skills.iter().zip(&st.action_proportions).map(|(s, p)| {
            std::iter::once(s.to_string()).chain(p.iter().map(|&x| f(x))).collect()
        });
        w.put("skill_actions.tsv", &tsv(&header, rows))?;
        let ids: Vec<String> = st.skills.iter().map(|s| format!("to_{s}")).collect();
        let mut header = vec!["from"];
        header.extend(ids.iter().map(String::as_str));
        let rows = st.skills.iter().zip(&st.transitions).map(|(s, p)| {
            std::iter::once(s.to_string()).chain(p.iter().map(|&x| f(x))).collect()
        });
        w.put("transitions.tsv", &tsv(&header, rows))?;
    }

    let enriched: Option<Vec<EnrichedTrajectory>> = read_lines(&run.join("segment/enriched.jsonl"))?;
    let assigned: Option<Vec<LatentAssignment>> = read_lines(&run.join("skills/assignments.jsonl"))?;
    let both = enriched.zip(assigned).filter(|(e, a)| !e.is_empty() && e.len() == a.len());
    w.section("segmentation", both.is_some())?;
    if let Some((e, a)) = both {
        let items: Vec<_> = e.into_iter().zip(a).take(6).collect();
        w.put("segmentation.svg", &segmentation_svg(&items))?;
    }

    let zs_dir = run.join("zero_shot");
    let mut tables: Vec<SuccessTable> = Vec::new();
    if zs_dir.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(&zs_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.ends_with("manifest.json"))
            .collect();
        names.sort();
        for p in names {
            if let Some(t) = read_json::<SuccessTable>(&p)? {
                tables.push(t);
            }
        }
    }
    w.section("zero_shot", !tables.is_empty())?;
    if !tables.is_empty() {
        let rows = tables.iter().flat_map(|t| {
            t.rows.iter().map(|r| {
                vec![t.method.clone(), r.category.clone(), r.episodes.to_string(), r.successes.to_string(), f(r.success_rate)]
            })
        });
        w.put("zero_shot.tsv", &tsv(&["method", "category", "episodes", "successes", "success_rate"], rows))?;
    }

    let curves: Option<Vec<CurveRecord>> = read_lines(&run.join("downstream/curves.jsonl"))?;
    let curves = curves.filter(|c| !c.is_empty());
    w.section("downstream", curves.is_some())?;
    if let Some(c) = curves {
        let mut grouped: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
        for r in &c {
            grouped.entry((r.method.clone(), r.env_steps)).or_default().push(r.success_rate);
        }
        let rows = grouped.iter().map(|((m, s), v)| {
            let (mean, ci) = mean_ci(v);
            vec![m.clone(), s.to_string(), v.len().to_string(), f(mean), f(ci)]
        });
        w.put("curves.tsv", &tsv(&["method", "env_steps", "runs", "mean_success", "ci95"], rows))?;
        let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for ((m, s), v) in &grouped {
            series.entry(m.clone()).or_default().push((*s as f64, mean_ci(v).0));
        }
        let series: Vec<Series> = series.into_iter().map(|(name, points)| Series { name, points }).collect();
        w.put("curves.svg", &line_plot_svg("downstream success", "env steps", "success rate", &series))?;
    }

    let summary = serde_json::to_string_pretty(&w.report)?;
    fs::write(out.join("summary.json"), summary + "\n")?;
    Ok(w.report)
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}
