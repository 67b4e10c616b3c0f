//! Configuration grids: K x N, few-shot count and the four-row ablation.

use std::fmt::Write as _;
use std::io::Write;

use super::dataset::QaExample;
use super::pipeline::{evaluate, GraphSource, PipelineConfig};
use super::report::EvalReport;
use crate::error::Result;
use crate::reasoner::checkpoint::Checkpoint;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub report: EvalReport,
}

impl SweepRow {
    fn setting(&self, key: &str) -> &str {
        self.report.config.get(key).map_or("-", String::as_str)
    }
}

/// One report per (K, N) pair, K-major.
pub fn sweep_kn(
    ckpt: &Checkpoint,
    dataset: &[QaExample],
    source: GraphSource<'_>,
    base: &PipelineConfig,
    ks: &[usize],
    ns: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(ks.len() * ns.len());
    for &k in ks {
        for &n in ns {
            let mut cfg = base.clone();
            cfg.paths.top_k = k;
            cfg.paths.per_entity = n;
            if let Some(b) = cfg.paths.beam {
                cfg.paths.beam = Some(b.max(k));
            }
            rows.push(SweepRow {
                label: format!("k{k}_n{n}"),
                report: evaluate(ckpt, dataset, source, &cfg)?,
            });
        }
    }
    Ok(rows)
}

/// One report per exemplar count.
pub fn sweep_fewshot(
    ckpt: &Checkpoint,
    dataset: &[QaExample],
    source: GraphSource<'_>,
    base: &PipelineConfig,
    counts: &[usize],
) -> Result<Vec<SweepRow>> {
    counts
        .iter()
        .map(|&e| {
            let cfg = PipelineConfig {
                fewshot: e,
                ..base.clone()
            };
            Ok(SweepRow {
                label: format!("e{e}"),
                report: evaluate(ckpt, dataset, source, &cfg)?,
            })
        })
        .collect()
}

/// Baseline, mask only, few-shot only and both. Rows without the mask use
/// `baseline` when given (a model trained with the ablation) and otherwise
/// `full` with the ablation switched on at inference.
pub fn ablation_grid(
    full: &Checkpoint,
    baseline: Option<&Checkpoint>,
    dataset: &[QaExample],
    source: GraphSource<'_>,
    base: &PipelineConfig,
    fewshot: usize,
) -> Result<Vec<SweepRow>> {
    let grid = [
        ("baseline", false, 0),
        ("mask_only", true, 0),
        ("fewshot_only", false, fewshot),
        ("full", true, fewshot),
    ];
    grid.iter()
        .map(|&(label, mask, e)| {
            let ckpt = if mask { full } else { baseline.unwrap_or(full) };
            let cfg = PipelineConfig {
                fewshot: e,
                mask_off: !mask,
                ..base.clone()
            };
            Ok(SweepRow {
                label: label.to_string(),
                report: evaluate(ckpt, dataset, source, &cfg)?,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "label\tk\tn\tbeam\tfewshot\tmask_off\tquestions\taccuracy\thits_at_1\tpath_hit_rate\ttop_path_hit_rate\thop_accuracy\terrors";

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{SWEEP_HEADER}");
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            row.label,
            row.setting("k"),
            row.setting("n"),
            row.setting("beam"),
            row.setting("fewshot"),
            row.setting("mask_off"),
            r.questions,
            r.accuracy,
            r.hits_at_1,
            r.path_hit_rate,
            r.top_path_hit_rate,
            r.hop_accuracy
                .map_or_else(|| "-".to_string(), |h| format!("{h:.6}")),
            r.errors,
        );
    }
    s
}

pub fn write_sweep(w: &mut impl Write, rows: &[SweepRow]) -> std::io::Result<()> {
    w.write_all(sweep_table(rows).as_bytes())
}
