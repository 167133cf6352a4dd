//! Metrics and table emission. JSON carries the full structures, CSV mirrors
//! the result tables with Image/Brain retrieval columns. Output is a pure
//! function of the run: no timestamps, no environment echoes, so identical
//! runs produce identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;
use stablemind_core::harness::{AblationReport, SubjectMetrics, Toggles};
use stablemind_core::spectral::SpectralGaps;

use crate::error::{CliError, CliResult};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io_at(path, e))
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!(
        "{}: {e}",
        path.display()
    )))?;
    for row in rows {
        w.write_record(row)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io_at(path, e))
}

fn onoff(flag: bool) -> String {
    if flag { "on" } else { "off" }.to_string()
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Per-subject pretraining retrieval, one row per subject and split.
pub fn pretrain_csv(path: &Path, subjects: &[SubjectMetrics]) -> CliResult<()> {
    let mut rows = vec![vec![
        "subject".to_string(),
        "split".to_string(),
        "Image\u{2191}".to_string(),
        "Brain\u{2191}".to_string(),
    ]];
    for m in subjects {
        rows.push(vec![
            m.subject_id.to_string(),
            "train".to_string(),
            num(m.train.image_retrieval),
            num(m.train.brain_retrieval),
        ]);
        rows.push(vec![
            m.subject_id.to_string(),
            "val".to_string(),
            num(m.val.image_retrieval),
            num(m.val.brain_retrieval),
        ]);
    }
    write_csv(path, &rows)
}

/// Single-row adaptation result with the mechanism toggles spelled out.
pub fn adapt_csv(path: &Path, toggles: Toggles, image: f64, brain: f64) -> CliResult<()> {
    let rows = vec![
        vec![
            "CSRR".to_string(),
            "FBA".to_string(),
            "DIB".to_string(),
            "Image\u{2191}".to_string(),
            "Brain\u{2191}".to_string(),
        ],
        vec![
            onoff(toggles.csrr),
            onoff(toggles.fba),
            onoff(toggles.dib),
            num(image),
            num(brain),
        ],
    ];
    write_csv(path, &rows)
}

/// Ablation grid, one row per configuration with mean and std over seeds.
pub fn ablation_csv(path: &Path, report: &AblationReport) -> CliResult<()> {
    let mut rows = vec![vec![
        "grid".to_string(),
        "configuration".to_string(),
        "CSRR".to_string(),
        "FBA".to_string(),
        "DIB".to_string(),
        "Image\u{2191} mean".to_string(),
        "Image\u{2191} std".to_string(),
        "Brain\u{2191} mean".to_string(),
        "Brain\u{2191} std".to_string(),
        "seeds".to_string(),
    ]];
    for r in &report.rows {
        rows.push(vec![
            report.grid.clone(),
            r.label.clone(),
            onoff(r.csrr),
            onoff(r.fba),
            onoff(r.dib),
            num(r.image_mean),
            num(r.image_std),
            num(r.brain_mean),
            num(r.brain_std),
            r.seeds.to_string(),
        ]);
    }
    write_csv(path, &rows)
}

/// Pairwise spectral gaps plus the average row.
pub fn spectral_csv(
    path: &Path,
    pairs: &[(String, String, SpectralGaps)],
    average: &SpectralGaps,
) -> CliResult<()> {
    let mut rows = vec![vec![
        "pair".to_string(),
        "D_freq".to_string(),
        "D_amp".to_string(),
        "D_pha".to_string(),
    ]];
    for (a, b, g) in pairs {
        rows.push(vec![
            format!("{a}-{b}"),
            num(g.d_freq),
            num(g.d_amp),
            num(g.d_pha),
        ]);
    }
    rows.push(vec![
        "average".to_string(),
        num(average.d_freq),
        num(average.d_amp),
        num(average.d_pha),
    ]);
    write_csv(path, &rows)
}
