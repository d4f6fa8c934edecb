use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;

use super::{compute_metrics, vote_simulation, Confusion, Metrics};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub simulation: String,
    pub segment: usize,
    pub density: f64,
    pub novel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationVerdict {
    pub simulation: String,
    pub segments: usize,
    pub novel_segments: usize,
    pub median_density: f64,
    pub damaged: bool,
    /// Ground truth, when known.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub threshold: f64,
    pub segments: Vec<SegmentScore>,
    pub simulations: Vec<SimulationVerdict>,
    /// Present only when every simulation is labelled.
    pub confusion: Option<Confusion>,
    pub metrics: Option<Metrics>,
}

fn comment_line<W: Write>(w: &mut W, comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl DetectionReport {
    /// Votes each simulation from its segment scores (given in order).
    pub fn build(threshold: f64, simulations: Vec<(String, Option<bool>, Vec<(f64, bool)>)>) -> Result<Self> {
        let mut segments = Vec::new();
        let mut verdicts = Vec::new();
        for (id, label, scores) in simulations {
            let flags: Vec<bool> = scores.iter().map(|s| s.1).collect();
            let densities: Vec<f64> = scores.iter().map(|s| s.0).collect();
            let vote = vote_simulation(&flags, &densities)?;
            segments.extend(scores.iter().enumerate().map(|(k, &(density, novel))| SegmentScore {
                simulation: id.clone(),
                segment: k,
                density,
                novel,
            }));
            verdicts.push(SimulationVerdict {
                simulation: id,
                segments: vote.segments,
                novel_segments: vote.novel_segments,
                median_density: vote.median_density,
                damaged: vote.damaged,
                label,
            });
        }
        let labelled = !verdicts.is_empty() && verdicts.iter().all(|v| v.label.is_some());
        let (confusion, metrics) = if labelled {
            let c = Confusion::from_pairs(verdicts.iter().map(|v| (v.damaged, v.label.unwrap_or(false))));
            (Some(c), Some(compute_metrics(&c)?))
        } else {
            (None, None)
        };
        Ok(Self {
            threshold,
            segments,
            simulations: verdicts,
            confusion,
            metrics,
        })
    }

    pub fn write_segments_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> std::io::Result<()> {
        comment_line(&mut w, comment)?;
        writeln!(w, "simulation_id,segment,density,novel")?;
        for s in &self.segments {
            writeln!(w, "{},{},{:.16e},{}", s.simulation, s.segment, s.density, s.novel as u8)?;
        }
        Ok(())
    }

    pub fn write_verdicts_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> std::io::Result<()> {
        comment_line(&mut w, comment)?;
        writeln!(w, "simulation_id,segments,novel_segments,median_density,verdict,label")?;
        for v in &self.simulations {
            let verdict = if v.damaged { "damaged" } else { "undamaged" };
            let label = match v.label {
                Some(true) => "damaged",
                Some(false) => "undamaged",
                None => "",
            };
            writeln!(
                w,
                "{},{},{},{:.16e},{verdict},{label}",
                v.simulation, v.segments, v.novel_segments, v.median_density
            )?;
        }
        Ok(())
    }

    /// Confusion counts and metrics; absent ratios are empty cells.
    pub fn write_metrics_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> std::io::Result<()> {
        comment_line(&mut w, comment)?;
        writeln!(w, "tn,tp,fn,fp,accuracy,recall,precision,f1,threshold")?;
        if let (Some(c), Some(m)) = (self.confusion, self.metrics) {
            writeln!(
                w,
                "{},{},{},{},{:.6},{},{},{},{:.16e}",
                c.tn,
                c.tp,
                c.fn_,
                c.fp,
                m.accuracy,
                opt(m.recall),
                opt(m.precision),
                opt(m.f1),
                self.threshold
            )?;
        }
        Ok(())
    }

    /// Scatter of log10 median density per simulation, coloured by label,
    /// with the threshold as a horizontal line.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (720.0, 420.0, 60.0);
        let floor = 1e-300_f64;
        let logs: Vec<f64> = self
            .simulations
            .iter()
            .map(|v| v.median_density.max(floor).log10())
            .chain(std::iter::once(self.threshold.max(floor).log10()))
            .collect();
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
        let mut hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
        if hi <= lo {
            hi = lo + 1.0;
        }
        let n = self.simulations.len().max(1) as f64;
        let x_of = |i: usize| pad + (i as f64 + 0.5) / n * (w - 2.0 * pad);
        let y_of = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
            h - pad,
            w - pad
        );
        let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#, h - pad);
        let mut tick = lo;
        let step = ((hi - lo) / 8.0).ceil().max(1.0);
        while tick <= hi + 1e-9 {
            let y = y_of(tick);
            let _ = writeln!(
                s,
                r#"<text x="{0}" y="{1:.1}" text-anchor="end">1e{tick}</text>"#,
                pad - 6.0,
                y + 4.0
            );
            tick += step;
        }
        let ty = y_of(self.threshold.max(floor).log10());
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{ty:.2}" x2="{0}" y2="{ty:.2}" stroke="gray" stroke-dasharray="6,4"/>"#,
            w - pad
        );
        let _ = writeln!(
            s,
            r#"<text x="{0}" y="{1:.1}" text-anchor="end" fill="gray">threshold {2:.3e}</text>"#,
            w - pad,
            ty - 6.0,
            self.threshold
        );
        for (i, v) in self.simulations.iter().enumerate() {
            let colour = match v.label {
                Some(true) => "#d62728",
                Some(false) => "#1f77b4",
                None => "#555555",
            };
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{colour}"><title>{}</title></circle>"#,
                x_of(i),
                y_of(v.median_density.max(floor).log10()),
                v.simulation
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{0}" y="{1}" text-anchor="middle">simulation</text>"#,
            w / 2.0,
            h - pad / 3.0
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">median joint density</text>"#,
            h / 2.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{0}\" y=\"20\" fill=\"#d62728\">damaged</text><text x=\"{1}\" y=\"20\" fill=\"#1f77b4\">undamaged</text>",
            pad,
            pad + 80.0
        );
        s.push_str("</svg>\n");
        s
    }
}
