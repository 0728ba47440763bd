//! Subcommand bodies.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use harmony_core::dataset::{load_coco, save_coco};
use harmony_core::discrepancy::{discrepancy_report, render_text, SpatialOptions};
use harmony_core::harmonizer::{
    harmonize_dataset, FailurePolicy, HarmonizeError, HarmonizeOptions, RuleAgent, RuleSet,
};
use harmony_core::taxonomy::builtin_mapping;
use harmony_core::{LayoutDataset, TaxonomyMapping};
use harmony_metrics::doc::{docs_from_dataset, load_jsonl};
use harmony_metrics::report::{aggregate, evaluate_pages};
use harmony_metrics::{EvalOptions, StructuredDoc};
use harmony_repgeom::plot::{scatter_csv, scatter_svg};
use harmony_repgeom::{analyze as analyze_geometry, load_embeddings, read_report, GeometryOptions};
use harmony_vlm::{TranscriptSink, VlmAgent};
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::{
    to_json_text, AgentKind, AnalyzeArgs, CliError, Command, EvaluateArgs, HarmonizeArgs, RepgeomArgs, ScatterArgs,
};

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// A mapping file path, or the short name of a builtin mapping.
pub fn load_mapping(source: &str) -> Result<TaxonomyMapping, CliError> {
    let path = Path::new(source);
    if path.is_file() {
        return TaxonomyMapping::load(path).map_err(CliError::data);
    }
    builtin_mapping(source).ok_or_else(|| {
        CliError::Usage(format!(
            "{source:?} is neither a mapping file nor a builtin mapping (heron, unstructured, doclaynet, doclaynet-unstructured)"
        ))
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(CliError::data)
}

/// Settings recorded in the manifest, and the inputs to digest.
pub fn describe(command: &Command, r: &Resolved) -> (Value, Vec<PathBuf>) {
    match command {
        Command::Analyze(a) => (
            json!({
                "inputs": a.inputs.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
                "map": a.map,
                "normalize_by_page": a.normalize_by_page,
            }),
            a.inputs
                .iter()
                .cloned()
                .chain(a.map.iter().map(PathBuf::from).filter(|p| p.is_file()))
                .collect(),
        ),
        Command::Harmonize(a) => {
            let mut cfg = json!({
                "input": path_str(&a.input),
                "images": a.images.as_deref().map(path_str),
                "rules": a.rules.as_deref().map(path_str),
                "mapping": a.mapping,
                "agent": format!("{:?}", a.agent).to_lowercase(),
                "policy": r.policy,
                "workers": r.workers,
            });
            if a.agent == AgentKind::Vlm {
                cfg["vlm"] = serde_json::to_value(&r.vlm).expect("config serializes");
            }
            let mut inputs = vec![a.input.clone()];
            inputs.extend(a.images.iter().cloned());
            inputs.extend(a.rules.iter().cloned());
            inputs.extend(a.mapping.iter().map(PathBuf::from).filter(|p| p.is_file()));
            (cfg, inputs)
        }
        Command::Evaluate(a) => (
            json!({
                "pred": path_str(&a.pred),
                "ref": path_str(&a.reference),
                "iou_threshold": a.iou_threshold,
                "shift_window": a.shift_window,
                "workers": r.workers,
            }),
            vec![a.pred.clone(), a.reference.clone()],
        ),
        Command::Repgeom(a) => {
            let mut inputs = vec![a.embeddings.clone()];
            inputs.extend(a.remap.iter().map(PathBuf::from).filter(|p| p.is_file()));
            (
                json!({
                    "embeddings": path_str(&a.embeddings),
                    "k": a.k,
                    "remap": a.remap,
                    "sample_cap": a.sample_cap,
                    "seed": r.seed,
                    "workers": r.workers,
                }),
                inputs,
            )
        }
        Command::Scatter(a) => (
            json!({"geometry": path_str(&a.geometry), "out": path_str(&a.out)}),
            vec![a.geometry.clone()],
        ),
    }
}

fn load_dataset(path: &Path) -> Result<LayoutDataset, CliError> {
    let (ds, report) = load_coco(path, &stem(path)).map_err(CliError::data)?;
    if !report.clamped.is_empty() || !report.dropped_degenerate.is_empty() {
        log::warn!(
            "{}: clamped {} box(es), dropped {} degenerate annotation(s)",
            path.display(),
            report.clamped.len(),
            report.dropped_degenerate.len()
        );
    }
    Ok(ds)
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let ds_a = load_dataset(&a.inputs[0])?;
    let ds_b = load_dataset(&a.inputs[1])?;
    let mapping = a.map.as_deref().map(load_mapping).transpose()?;
    let opts = SpatialOptions {
        normalize_by_page: a.normalize_by_page,
    };
    let report = discrepancy_report(&ds_a, &ds_b, mapping.as_ref(), opts).map_err(CliError::data)?;

    let mut csv = String::from("dataset,category,count,percent,mean_width,mean_height,mean_area\n");
    for d in &report.class_stats {
        for c in &d.classes {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                d.dataset, c.category, c.count, c.percent, c.mean_width, c.mean_height, c.mean_area
            );
        }
    }
    write(&a.out.join("discrepancy_report.json"), &to_json_text(&report))?;
    write(&a.out.join("discrepancy_report.txt"), &render_text(&report))?;
    write(&a.out.join("class_stats.csv"), &csv)
}

pub fn harmonize(a: &HarmonizeArgs, r: &Resolved) -> Result<(), CliError> {
    let policy: FailurePolicy = r.policy.parse().map_err(CliError::Usage)?;
    let rules = match &a.rules {
        Some(p) => RuleSet::load(p).map_err(CliError::data)?,
        None => RuleSet::builtin(),
    };
    let mapping = match &a.mapping {
        Some(m) => load_mapping(m)?,
        None => TaxonomyMapping::identity("target", rules.target_taxonomy()),
    };
    mapping.check_targets(rules.target_taxonomy()).map_err(CliError::data)?;
    let (mut ds, load_report) = load_coco(&a.input, &stem(&a.input)).map_err(CliError::data)?;
    match &a.images {
        Some(dir) if dir.is_dir() => ds.resolve_images(dir),
        Some(dir) => return Err(CliError::Data(format!("{}: not a directory", dir.display()))),
        None if a.agent == AgentKind::Vlm => {
            return Err(CliError::Usage(
                "--agent vlm needs --images so pages can be shown to the model".into(),
            ))
        }
        None => {}
    }
    let opts = HarmonizeOptions {
        policy,
        workers: r.workers,
    };

    let result = match a.agent {
        AgentKind::Rule => harmonize_dataset(&ds, &RuleAgent, &mapping, &rules, opts),
        AgentKind::Vlm => {
            let path = a.out.join("transcripts.jsonl");
            if path.exists() {
                std::fs::remove_file(&path).map_err(CliError::data)?;
            }
            let sink = TranscriptSink::to_file(&path).map_err(CliError::data)?;
            let agent = VlmAgent::new(r.vlm.clone())
                .map_err(|e| CliError::Usage(e.to_string()))?
                .with_transcripts(Arc::new(sink));
            harmonize_dataset(&ds, &agent, &mapping, &rules, opts)
        }
    };
    let (harmonized, report) = result.map_err(|e| match e {
        HarmonizeError::Agent { .. } => CliError::Agent(e.to_string()),
        e => CliError::data(e),
    })?;
    log::info!(
        "{} pages: {} accepted, {} fallback; {} -> {} annotations",
        report.pages_total,
        report.pages_accepted,
        report.pages_fallback,
        report.annotations_in,
        report.annotations_out
    );
    save_coco(&harmonized, &a.out.join("harmonized.json")).map_err(CliError::data)?;
    write(&a.out.join("job_report.json"), &to_json_text(&report))?;
    write(&a.out.join("load_report.json"), &to_json_text(&load_report))
}

fn load_docs(path: &Path) -> Result<Vec<StructuredDoc>, CliError> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        load_jsonl(path).map_err(CliError::data)
    } else {
        Ok(docs_from_dataset(&load_dataset(path)?))
    }
}

pub fn evaluate(a: &EvaluateArgs, r: &Resolved) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.iou_threshold) || a.shift_window < 0 {
        return Err(CliError::Usage(
            "--iou-threshold must be in [0, 1] and --shift-window non-negative".into(),
        ));
    }
    let pred = load_docs(&a.pred)?;
    let reference = load_docs(&a.reference)?;
    let opts = EvalOptions {
        iou_threshold: a.iou_threshold,
        shift_window: a.shift_window,
    };
    let pages = pool(r.workers)?
        .install(|| evaluate_pages(&pred, &reference, opts))
        .map_err(CliError::data)?;
    let report = aggregate(&pages);
    let mut lines = String::new();
    for p in &pages {
        lines.push_str(&serde_json::to_string(p).expect("page metrics serialize"));
        lines.push('\n');
    }
    write(&a.out.join("metrics.json"), &to_json_text(&report))?;
    write(&a.out.join("page_metrics.jsonl"), &lines)
}

pub fn repgeom(a: &RepgeomArgs, r: &Resolved) -> Result<(), CliError> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let mapping = a.remap.as_deref().map(load_mapping).transpose()?;
    let set = load_embeddings(&a.embeddings, mapping.as_ref()).map_err(CliError::data)?;
    let opts = GeometryOptions {
        k: a.k,
        sample_cap: a.sample_cap,
        seed: r.seed,
    };
    let report = pool(r.workers)?
        .install(|| analyze_geometry(&set, opts))
        .map_err(CliError::data)?;
    write(&a.out.join("geometry_report.json"), &to_json_text(&report))?;
    write(&a.out.join("scatter.csv"), &scatter_csv(&report))
}

pub fn scatter(a: &ScatterArgs) -> Result<(), CliError> {
    let report = read_report(&a.geometry).map_err(CliError::data)?;
    write(&a.out, &scatter_svg(&report))
}
