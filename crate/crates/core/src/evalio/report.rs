use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ablation_label, EvalReport, ABLATION_CUES, ABLATION_OVERRIDES};
use crate::error::{Error, Result};

/// One row per scored frame.
pub fn write_report_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::from(e).at(path))?;
    w.write_record(["sequence", "setting", "frame_id", "iou_water", "iou_non_water", "miou"])?;
    for r in reports {
        for f in &r.frames {
            w.write_record([
                r.sequence.clone(),
                r.setting.clone(),
                f.frame_id.to_string(),
                format!("{:.6}", f.iou_water),
                format!("{:.6}", f.iou_non_water),
                format!("{:.6}", f.miou),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sequences as rows, cue subsets as column groups with one column per
/// override source, and a final average row. Missing cells print `-`.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut cells: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut seqs: Vec<&str> = Vec::new();
    for r in reports {
        if !seqs.contains(&r.sequence.as_str()) {
            seqs.push(&r.sequence);
        }
        cells.insert((&r.sequence, &r.setting), r.miou);
    }
    let name_w = seqs.iter().map(|s| s.len()).max().unwrap_or(0).max(8);
    let col = 8;
    let mut out = String::new();
    let _ = write!(out, "{:name_w$}", "");
    for (cues, _) in ABLATION_CUES {
        let _ = write!(out, " | {:^w$}", cues, w = col * 3 + 2);
    }
    out.push('\n');
    let _ = write!(out, "{:name_w$}", "sequence");
    for _ in ABLATION_CUES {
        out.push_str(" |");
        for src in ABLATION_OVERRIDES {
            let _ = write!(out, " {:>w$}", src.to_string().replace("imu", "horizon"), w = col - 1);
        }
    }
    out.push('\n');
    out.push_str(&"-".repeat(name_w + ABLATION_CUES.len() * (col * 3 + 4)));
    out.push('\n');
    let mut row = |label: &str, value: &dyn Fn(&str) -> Option<f64>| {
        let _ = write!(out, "{label:name_w$}");
        for (cues, _) in ABLATION_CUES {
            out.push_str(" |");
            for src in ABLATION_OVERRIDES {
                match value(&ablation_label(cues, src)) {
                    Some(v) => {
                        let _ = write!(out, " {:>w$.3}", v, w = col - 1);
                    }
                    None => {
                        let _ = write!(out, " {:>w$}", "-", w = col - 1);
                    }
                }
            }
        }
        out.push('\n');
    };
    for s in &seqs {
        row(s, &|setting| cells.get(&(*s, setting)).copied());
    }
    row("average", &|setting| {
        let v: Vec<f64> = seqs.iter().filter_map(|s| cells.get(&(*s, setting)).copied()).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    });
    out
}

#[cfg(test)]
mod tests {
    use super::super::FrameScore;
    use super::*;

    fn rep(seq: &str, setting: &str, m: f64) -> EvalReport {
        EvalReport {
            sequence: seq.into(),
            setting: setting.into(),
            frames: vec![FrameScore {
                frame_id: 3,
                iou_water: m,
                iou_non_water: m,
                miou: m,
            }],
            miou: m,
            cycles: 0,
            mean_infer_ms: 0.0,
            mean_train_ms: 0.0,
            wall_s: 0.0,
        }
    }

    #[test]
    fn table_layout() {
        let t = format_table(&[rep("river", "PT/none", 0.5), rep("lake", "PT/none", 0.7), rep("river", "PT+TC/horizon", 0.9)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].contains("PT+TC") && lines[0].contains("PT+All"));
        assert!(lines[3].starts_with("river") && lines[3].contains("0.500") && lines[3].contains("0.900"));
        assert!(lines[5].starts_with("average") && lines[5].contains("0.600"));
        assert_eq!(lines[4].matches('-').count(), 11);
    }

    #[test]
    fn csv_rows_match_scored_frames() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_report_csv(&p, &[rep("a", "PT/none", 0.5), rep("b", "PT/sky", 0.25)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
