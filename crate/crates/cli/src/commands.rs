use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

use schedlift::autoscheduler::{trace_jsonl, tune_model, SearchBudget, TuneError};
use schedlift::executor::{build_plan, verify, InvalidReason, MeasureProtocol};
use schedlift::records::{
    descriptor_to_string, find_model, load_descriptor, load_library, render, DescriptorError,
    RecordStore, ReportDocument, ReportFormat,
};
use schedlift::transfer::{
    select_tuning_model, transfer_tune_model, ModelDescriptor, ModelKernel, SourceFilter,
    TransferError, TransferOptions,
};
use schedlift::zoo;

use crate::{
    invalid, AutotuneArgs, Command, Failure, GenArgs, ReportArgs, SelectArgs, TransferArgs,
    VerifyArgs, VERSION,
};

pub fn run(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen(a) => gen(cmd, a),
        Command::Autotune(a) => autotune(cmd, a),
        Command::Select(a) => select(cmd, a),
        Command::Transfer(a) => transfer(cmd, a),
        Command::Verify(a) => verify_records(cmd, a),
        Command::Report(a) => report(cmd, a),
    }
}

/// Prints (to stderr) and returns the resolved configuration.
fn config(cmd: &Command, protocol: Option<&MeasureProtocol>) -> Value {
    let mut v = json!({ "version": VERSION, "args": cmd });
    if let Some(p) = protocol {
        v["protocol"] = serde_json::to_value(p).expect("protocol serializes");
    }
    eprintln!("config: {v}");
    v
}

fn descriptor_error(e: DescriptorError) -> Failure {
    match e {
        DescriptorError::Io { .. } => invalid(e.to_string()),
        e => invalid(format!("invalid descriptor: {e}")),
    }
}

/// A preset name or a descriptor file.
fn load_model(arg: &str) -> Result<ModelDescriptor, Failure> {
    if let Some(m) = zoo::preset(arg) {
        return Ok(m);
    }
    if Path::new(arg).is_file() {
        return load_descriptor(arg).map_err(descriptor_error);
    }
    Err(invalid(format!(
        "`{arg}` is neither a descriptor file nor a preset ({})",
        zoo::PRESETS.join(", ")
    )))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifacts serialize");
    s.push('\n');
    s
}

fn open_store(path: &Path) -> Result<RecordStore, Failure> {
    RecordStore::open(path).map_err(|e| match e {
        schedlift::records::StoreError::Corrupt { .. } => invalid(e.to_string()),
        e => Failure::Internal(e.into()),
    })
}

fn gen(cmd: &Command, a: &GenArgs) -> Result<(), Failure> {
    config(cmd, None);
    if a.list {
        for p in zoo::PRESETS {
            println!("{p}");
        }
        return Ok(());
    }
    let name = a.preset.as_deref().unwrap_or_default();
    let model = zoo::preset(name).ok_or_else(|| {
        invalid(format!("unknown preset `{name}` ({})", zoo::PRESETS.join(", ")))
    })?;
    create_dir(&a.out)?;
    let path = a.out.join(format!("{name}.json"));
    write(&path, &descriptor_to_string(&model))?;
    println!("wrote {} ({} kernels)", path.display(), model.kernels.len());
    Ok(())
}

#[derive(Serialize)]
struct KernelSummary {
    kernel: String,
    class: String,
    baseline_ns: Option<u64>,
    best_ns: Option<u64>,
    fallback: Option<schedlift::autoscheduler::Fallback>,
    candidates: usize,
    invalid_count: usize,
    search_time_ns: u64,
}

fn autotune(cmd: &Command, a: &AutotuneArgs) -> Result<(), Failure> {
    let protocol = a.protocol.resolve();
    let cfg = config(cmd, Some(&protocol));
    let budget = SearchBudget {
        max_candidates: a.budget,
        seed: a.seed,
        population: a.population.min(a.budget),
        verify_trials: a.verify_trials,
    };
    budget.validate().map_err(|e| invalid(e.to_string()))?;
    let mut model = load_model(&a.model)?;
    let before = model.kernels.len();
    model
        .kernels
        .retain(|k| matches!(k, ModelKernel::Executable { .. }));
    let skipped = before - model.kernels.len();
    if skipped > 0 {
        println!(
            "note: {skipped} of {before} kernel entries of `{}` carry only a class and count; only concrete kernels are tuned",
            model.name
        );
    }
    create_dir(&a.out)?;
    let records_path = a.records.clone().unwrap_or_else(|| a.out.join("records.jsonl"));
    let mut store = open_store(&records_path)?;
    let outcomes = tune_model(&model, &budget, &protocol).map_err(|e| match e {
        TuneError::InvalidBudget(_) => invalid(e.to_string()),
        e => Failure::Internal(e.into()),
    })?;
    let trace_dir = a.out.join("traces");
    create_dir(&trace_dir)?;
    let mut kernels = Vec::new();
    let mut total = 0;
    for o in &outcomes {
        let r = &o.record;
        write(&trace_dir.join(format!("{}.jsonl", r.kernel_name)), &trace_jsonl(&o.trace))?;
        store.append(r.clone())?;
        total += o.search_time_ns;
        println!(
            "{:<12} {:<22} untuned {:>10} ns  best {:>10} ns  invalid {:>3}{}",
            r.kernel_name,
            r.kernel_class.as_str(),
            o.baseline.median_ns.unwrap_or(0),
            r.cost.median_ns.unwrap_or(0),
            o.invalid_count,
            o.fallback.map_or(String::new(), |f| format!("  fallback {f:?}"))
        );
        kernels.push(KernelSummary {
            kernel: r.kernel_name.clone(),
            class: r.kernel_class.to_string(),
            baseline_ns: o.baseline.median_ns,
            best_ns: r.cost.median_ns,
            fallback: o.fallback,
            candidates: o.trace.len(),
            invalid_count: o.invalid_count,
            search_time_ns: o.search_time_ns,
        });
    }
    let summary = json!({
        "version": VERSION,
        "config": cfg,
        "model": model.name,
        "skipped_abstract_entries": skipped,
        "search_time_ns": total,
        "kernels": kernels,
    });
    write(&a.out.join("autotune.json"), &pretty(&summary))?;
    println!(
        "tuned {} kernels in {:.3} s of search; records in {}",
        outcomes.len(),
        total as f64 / 1e9,
        records_path.display()
    );
    Ok(())
}

fn select(cmd: &Command, a: &SelectArgs) -> Result<(), Failure> {
    let cfg = config(cmd, None);
    let entries = load_library(&a.library).map_err(descriptor_error)?;
    let target = match find_model(&entries, &a.target) {
        Some(m) => m.clone(),
        None => load_model(&a.target)?,
    };
    let library: Vec<ModelDescriptor> = entries.into_iter().map(|(_, m)| m).collect();
    let ranking =
        select_tuning_model(&target, &library, a.top_k).map_err(|e| invalid(e.to_string()))?;
    for (i, s) in ranking.iter().enumerate() {
        let id = library
            .iter()
            .find(|m| m.name == s.candidate)
            .and_then(|m| m.id.clone())
            .map_or(String::new(), |id| format!(" ({id})"));
        println!(
            "{}. {}{id}  score {:.4}  shared classes {}",
            i + 1,
            s.candidate,
            s.score,
            s.shared_classes
        );
    }
    create_dir(&a.out)?;
    let doc = json!({
        "version": VERSION,
        "config": cfg,
        "target": target.name,
        "ranking": ranking,
    });
    write(&a.out.join("select.json"), &pretty(&doc))?;
    Ok(())
}

fn transfer(cmd: &Command, a: &TransferArgs) -> Result<(), Failure> {
    let protocol = a.protocol.resolve();
    let cfg = config(cmd, Some(&protocol));
    if !a.records.is_file() {
        return Err(invalid(format!(
            "record store {} does not exist",
            a.records.display()
        )));
    }
    let target = load_model(&a.target)?;
    let store = open_store(&a.records)?;
    let filter = match &a.source {
        Some(s) if !a.pool => {
            if !store.is_empty() && !store.sources().contains(&s.as_str()) {
                println!(
                    "note: no records from `{s}` in {} (sources: {})",
                    a.records.display(),
                    store.sources().join(", ")
                );
            }
            SourceFilter::model(s)
        }
        _ => SourceFilter::Pool,
    };
    let options = TransferOptions {
        protocol,
        verify_trials: a.verify_trials,
        seed: a.seed,
        program_runs: a.program_runs,
    };
    let report = transfer_tune_model(&target, &filter, &store, &options).map_err(|e| match e {
        TransferError::Model(e) => invalid(e.to_string()),
        e => Failure::Internal(e.into()),
    })?;
    let doc = ReportDocument::new(VERSION, cfg, report);
    create_dir(&a.out)?;
    for (file, format) in [
        ("report.json", ReportFormat::Json),
        ("report.csv", ReportFormat::Csv),
        ("report.md", ReportFormat::Markdown),
    ] {
        write(&a.out.join(file), &render(&doc, format))?;
    }
    let r = &doc.report;
    println!(
        "{}: speedup {:.3}x, {} of {} kernels fell back, search time {:.3} s; report in {}",
        r.target,
        r.speedup,
        r.fallback_count(),
        r.per_kernel.len(),
        r.search_time_ns as f64 / 1e9,
        a.out.join("report.md").display()
    );
    Ok(())
}

fn verify_records(cmd: &Command, a: &VerifyArgs) -> Result<(), Failure> {
    config(cmd, None);
    if !a.records.is_file() {
        return Err(invalid(format!(
            "record store {} does not exist",
            a.records.display()
        )));
    }
    let model = load_model(&a.model)?;
    let store = open_store(&a.records)?;
    let (mut ok, mut rejected, mut wrong) = (0, 0, 0);
    for (spec, _) in model.unique_kernels() {
        for r in store.by_class(spec.class()) {
            let tag = format!("{} <- {}/{}", spec.name(), r.source_model, r.kernel_name);
            match build_plan(&r.schedule, &spec) {
                Err(e) => {
                    rejected += 1;
                    let reason = InvalidReason::from(&e);
                    println!("{tag}: invalid ({}: {})", reason.reason, reason.detail);
                }
                Ok(plan) => {
                    let rep = verify(&plan, &spec, a.trials)?;
                    if rep.passed {
                        ok += 1;
                        println!("{tag}: ok (max abs err {:.2e})", rep.max_abs_err);
                    } else {
                        wrong += 1;
                        println!("{tag}: MISMATCH {:?}", rep.first_mismatch);
                    }
                }
            }
        }
    }
    println!("{ok} verified, {rejected} invalid for their target, {wrong} mismatched");
    if wrong > 0 {
        return Err(invalid(format!(
            "{wrong} stored schedules produce wrong results"
        )));
    }
    Ok(())
}

fn report(cmd: &Command, a: &ReportArgs) -> Result<(), Failure> {
    config(cmd, None);
    let format: ReportFormat = a.format.parse().map_err(invalid)?;
    let text = fs::read_to_string(&a.input)
        .map_err(|e| invalid(format!("cannot read {}: {e}", a.input.display())))?;
    let doc: ReportDocument = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("{} is not a transfer report: {e}", a.input.display())))?;
    let out = render(&doc, format);
    match &a.out {
        Some(p) => write(p, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}
