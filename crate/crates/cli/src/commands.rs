//! Subcommand implementations.

use std::path::{Path, PathBuf};

use exdos::alignment::{build_dictionary, AlignmentDictionary};
use exdos::ast::ingest_ast;
use exdos::cfg::build_cfg;
use exdos::csg::{build_contract_csg, build_csg};
use exdos::dagn::DagnParams;
use exdos::dataset::{
    five_run_report, generate_synthetic_corpus, load_samples, stratified_split, write_corpus, DatasetManifest,
    ExperimentConfig, Split, SynthSpec,
};
use exdos::evm::{decode_with, segment_blocks, BasicBlock, DecodeOptions, Instruction, InstructionRecord, OpcodeTable};
use exdos::features::{featurize_bytecode_with, featurize_source, import_embeddings, write_embeddings};
use exdos::graph::{ContractGraph, Modality};
use exdos::patterns::{match_bytecode_patterns_with, match_source_patterns, PatternAnnotation, PatternConfig};
use exdos::train::{detect, distill, finetune, pretrain_teacher, student_init, PairedSample, PhaseReport, TrainConfig};
use serde::Serialize;
use serde_json::json;

use crate::error::{CliResult, Failure};
use crate::io::{bytecode_text, default_contract_id, load_config, read_json, read_text, resolve_seed, sibling, to_json_line, Outputs};
use crate::*;

struct Ctx<'a> {
    cli: &'a Cli,
    seed: Option<u64>,
    out: Outputs,
}

impl Ctx<'_> {
    fn snapshot(&self, primary: Option<&Path>, name: &str, config: Option<serde_json::Value>) -> CliResult<()> {
        let value = json!({
            "exdos_version": env!("CARGO_PKG_VERSION"),
            "subcommand": name,
            "seed": self.seed,
            "globals": {
                "out_dir": self.cli.out_dir,
                "log_level": self.cli.log_level,
                "threads": self.cli.threads,
            },
            "args": self.cli.command,
            "config": config,
        });
        self.out.snapshot(primary, name, &value)
    }
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    let ctx = Ctx { cli, seed: resolve_seed(cli.seed)?, out: Outputs { out_dir: cli.out_dir.clone() } };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?
            .install(|| run_command(&ctx)),
        None => run_command(&ctx),
    }
}

fn run_command(ctx: &Ctx) -> CliResult<()> {
    match &ctx.cli.command {
        Command::Disasm(a) => disasm(ctx, a),
        Command::Cfg(a) => cfg(ctx, a),
        Command::Csg(a) => csg(ctx, a),
        Command::Patterns(a) => patterns(ctx, a),
        Command::Align(a) => align(ctx, a),
        Command::Featurize(a) => featurize(ctx, a),
        Command::GenCorpus(a) => gen_corpus(ctx, a),
        Command::Split(a) => split(ctx, a),
        Command::TrainTeacher(a) => train_teacher(ctx, a),
        Command::Distill(a) => distill_cmd(ctx, a),
        Command::Finetune(a) => finetune_cmd(ctx, a),
        Command::Detect(a) => detect_cmd(ctx, a),
        Command::Eval(a) => eval(ctx, a),
    }
}

fn opcode_table(b: &BytecodeInput) -> CliResult<OpcodeTable> {
    let table = OpcodeTable::shanghai();
    match &b.opcodes {
        Some(p) => Ok(table.with_overrides(p)?),
        None => Ok(table),
    }
}

fn decode_input(b: &BytecodeInput, table: &OpcodeTable) -> CliResult<Vec<Instruction>> {
    let hex = bytecode_text(&b.input)?;
    Ok(decode_with(&hex, &DecodeOptions { strip_metadata: !b.keep_metadata, table })?)
}

fn listing(ins: &[Instruction]) -> String {
    let mut out = String::new();
    for i in ins {
        out.push_str(&format!("{:06x}  {}", i.offset, i.mnemonic));
        if let Some(data) = &i.push_data {
            out.push_str(&format!(" 0x{}", hex_string(data)));
        }
        if i.padded > 0 {
            out.push_str(&format!("  ; truncated, {} zero bytes padded", i.padded));
        }
        out.push('\n');
    }
    out
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn disasm(ctx: &Ctx, a: &DisasmArgs) -> CliResult<()> {
    let table = opcode_table(&a.bytecode)?;
    let ins = decode_input(&a.bytecode, &table)?;
    let text = if a.json {
        let records: Vec<InstructionRecord> = ins.iter().map(InstructionRecord::from).collect();
        to_json_line(&records)?
    } else {
        listing(&ins)
    };
    let out = ctx.out.target(a.out.as_deref(), None);
    ctx.out.emit(out.as_deref(), &text)?;
    ctx.snapshot(out.as_deref(), "disasm", None)
}

fn cfg(ctx: &Ctx, a: &CfgArgs) -> CliResult<()> {
    let table = opcode_table(&a.bytecode)?;
    let ins = decode_input(&a.bytecode, &table)?;
    let blocks = segment_blocks(&ins);
    let id = a.contract_id.clone().unwrap_or_else(|| default_contract_id(&a.bytecode.input));
    let graph = build_cfg(&blocks, &id);
    for d in &graph.diagnostics {
        log::warn!("{id}: {d}");
    }
    let out = ctx.out.target(a.out.as_deref(), None);
    ctx.out.emit(out.as_deref(), &(graph.to_json() + "\n"))?;
    if let Some(p) = &a.blocks_out {
        ctx.out.write(&ctx.out.resolve(p), &to_json_line(&blocks)?)?;
    }
    ctx.snapshot(out.as_deref(), "cfg", None)
}

fn csg(ctx: &Ctx, a: &CsgArgs) -> CliResult<()> {
    let doc = ingest_ast(&read_text(&a.ast)?)?;
    let mut graph = match &a.function {
        Some(f) => build_csg(&doc, f)?,
        None => build_contract_csg(&doc),
    };
    if let Some(id) = &a.contract_id {
        graph.contract_id = id.clone();
    }
    let out = ctx.out.target(a.out.as_deref(), None);
    ctx.out.emit(out.as_deref(), &(graph.to_json() + "\n"))?;
    ctx.snapshot(out.as_deref(), "csg", None)
}

fn read_graph(path: &Path) -> CliResult<ContractGraph> {
    ContractGraph::from_json(&read_text(path)?).map_err(|e| Failure::input(path.display(), e))
}

fn require<'a>(flag: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    flag.as_deref().ok_or_else(|| Failure::Usage(what.to_owned()))
}

fn patterns(ctx: &Ctx, a: &PatternsArgs) -> CliResult<()> {
    let graph = read_graph(&a.graph)?;
    let annotations: Vec<PatternAnnotation> = match graph.modality {
        Modality::Bytecode => {
            let blocks: Vec<BasicBlock> = read_json(require(&a.blocks, "a bytecode graph needs --blocks")?)?;
            let config = a.radius.map_or_else(PatternConfig::default, |radius| PatternConfig { radius });
            match_bytecode_patterns_with(&graph, &blocks, &config)?
        }
        Modality::Source => {
            if a.radius.is_some() {
                return Err(Failure::Usage("--radius applies to bytecode graphs only".into()));
            }
            let doc = ingest_ast(&read_text(require(&a.ast, "a source graph needs --ast")?)?)?;
            match_source_patterns(&graph, &doc)?
        }
    };
    let out = ctx.out.target(a.out.as_deref(), None);
    ctx.out.emit(out.as_deref(), &to_json_line(&annotations)?)?;
    ctx.snapshot(out.as_deref(), "patterns", None)
}

fn align(ctx: &Ctx, a: &AlignArgs) -> CliResult<()> {
    let src: Vec<PatternAnnotation> = read_json(&a.source_annotations)?;
    let byt: Vec<PatternAnnotation> = read_json(&a.bytecode_annotations)?;
    let dict: AlignmentDictionary = build_dictionary(&src, &byt)?;
    if let (Some(s), Some(b)) = (&a.source_graph, &a.bytecode_graph) {
        dict.check_against(&read_graph(s)?, &read_graph(b)?)?;
    }
    let out = ctx.out.target(a.out.as_deref(), None);
    ctx.out.emit(out.as_deref(), &to_json_line(&dict)?)?;
    ctx.snapshot(out.as_deref(), "align", None)
}

fn featurize(ctx: &Ctx, a: &FeaturizeArgs) -> CliResult<()> {
    let graph = read_graph(&a.graph)?;
    let feats = if let Some(e) = &a.embeddings {
        import_embeddings(e, &graph)?
    } else {
        match graph.modality {
            Modality::Bytecode => {
                let blocks: Vec<BasicBlock> = read_json(require(&a.blocks, "a bytecode graph needs --blocks")?)?;
                featurize_bytecode_with(&blocks, &graph, &OpcodeTable::shanghai())?
            }
            Modality::Source => {
                let doc = ingest_ast(&read_text(require(&a.ast, "a source graph needs --ast")?)?)?;
                featurize_source(&graph, &doc)?
            }
        }
    };
    let out = ctx.out.target(a.out.as_deref(), None);
    ctx.out.emit(out.as_deref(), &write_embeddings(&feats))?;
    ctx.snapshot(out.as_deref(), "featurize", None)
}

fn gen_corpus(ctx: &Ctx, a: &GenCorpusArgs) -> CliResult<()> {
    if a.vulnerable > a.per_vulnerability {
        return Err(Failure::Usage("--vulnerable exceeds --per-vulnerability".into()));
    }
    let seed = ctx.seed.unwrap_or(0);
    let spec = SynthSpec { per_vulnerability: a.per_vulnerability, vulnerable_per_vulnerability: a.vulnerable };
    let dir = ctx.cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("corpus"));
    let contracts = generate_synthetic_corpus(spec, seed);
    let manifest = write_corpus(&dir, &contracts, seed)?;
    log::info!("{} contracts in {}", manifest.entries.len(), dir.display());
    ctx.snapshot(Some(&dir.join("manifest.json")), "gen-corpus", None)
}

fn parse_ratios(text: &str) -> CliResult<[usize; 3]> {
    let bad = || Failure::Usage(format!("--ratios `{text}`: expected three integers like 7:1:2"));
    let parts: Vec<usize> = text.split(':').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let ratios: [usize; 3] = parts.try_into().map_err(|_| bad())?;
    if ratios.iter().sum::<usize>() == 0 {
        return Err(bad());
    }
    Ok(ratios)
}

fn split(ctx: &Ctx, a: &SplitArgs) -> CliResult<()> {
    let ratios = parse_ratios(&a.ratios)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let split = stratified_split(&manifest, ratios, ctx.seed.unwrap_or(0))?;
    let out = ctx.out.target(a.out.as_deref(), None);
    ctx.out.emit(out.as_deref(), &to_json_line(&split)?)?;
    ctx.snapshot(out.as_deref(), "split", None)
}

struct TrainingData {
    config: TrainConfig,
    train: Vec<PairedSample<f64>>,
    val: Vec<PairedSample<f64>>,
}

fn training_data(ctx: &Ctx, d: &DataArgs) -> CliResult<TrainingData> {
    let mut config: TrainConfig = load_config(d.config.as_deref())?;
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    config.validate()?;
    let mut manifest = DatasetManifest::load(&d.manifest)?;
    if let Some(v) = d.vulnerability {
        manifest = manifest.subset(v);
    }
    let table = OpcodeTable::shanghai();
    let (train, val) = match &d.split {
        Some(p) => {
            let split: Split = read_json(p)?;
            let in_scope = |ids: &[String]| -> Vec<String> {
                ids.iter().filter(|id| manifest.entries.iter().any(|e| &e.contract_id == *id)).cloned().collect()
            };
            let train = load_samples(&manifest.select(&in_scope(&split.train))?, &table)?;
            let val = load_samples(&manifest.select(&in_scope(&split.val))?, &table)?;
            (train, val)
        }
        None => (load_samples(&manifest, &table)?, Vec::new()),
    };
    if train.is_empty() {
        return Err(Failure::Input("no training contracts selected".into()));
    }
    log::info!("{} training and {} validation contracts", train.len(), val.len());
    Ok(TrainingData { config, train, val })
}

fn read_model(path: &Path) -> CliResult<DagnParams<f64>> {
    DagnParams::from_json(&read_text(path)?).map_err(|e| match Failure::from(e) {
        Failure::Input(m) => Failure::input(path.display(), m),
        other => other,
    })
}

fn save_model(ctx: &Ctx, name: &str, out: &Path, model: &DagnParams<f64>, report: &PhaseReport, config: &TrainConfig) -> CliResult<()> {
    ctx.out.write(out, &(model.to_json() + "\n"))?;
    ctx.out.write(&sibling(out, "report.json"), &to_json_line(report)?)?;
    if let Some(last) = report.losses.last() {
        log::info!("{name}: final training loss {last:.6}");
    }
    ctx.snapshot(Some(out), name, Some(serde_json::to_value(config)?))
}

fn train_teacher(ctx: &Ctx, a: &TrainArgs) -> CliResult<()> {
    let data = training_data(ctx, &a.data)?;
    let views = |set: &[PairedSample<f64>]| set.iter().map(PairedSample::source_view).collect::<Vec<_>>();
    let (teacher, report) = pretrain_teacher(&views(&data.train), &views(&data.val), &data.config)?;
    let out = ctx.out.target(a.data.out.as_deref(), Some("teacher.json")).expect("default name");
    save_model(ctx, "train-teacher", &out, &teacher, &report, &data.config)
}

fn distill_cmd(ctx: &Ctx, a: &DistillArgs) -> CliResult<()> {
    let data = training_data(ctx, &a.data)?;
    let teacher = read_model(&a.teacher)?;
    let init = match &a.init {
        Some(p) => read_model(p)?,
        None => student_init(&data.config),
    };
    let (student, report) = distill(&teacher, &init, &data.train, &data.val, &data.config)?;
    let out = ctx.out.target(a.data.out.as_deref(), Some("student.json")).expect("default name");
    save_model(ctx, "distill", &out, &student, &report, &data.config)
}

fn finetune_cmd(ctx: &Ctx, a: &FinetuneArgs) -> CliResult<()> {
    let data = training_data(ctx, &a.data)?;
    let student = match &a.student {
        Some(p) => read_model(p)?,
        None => student_init(&data.config),
    };
    let views = |set: &[PairedSample<f64>]| set.iter().map(PairedSample::bytecode_view).collect::<Vec<_>>();
    let (model, report) = finetune(&student, &views(&data.train), &views(&data.val), &data.config)?;
    let out = ctx.out.target(a.data.out.as_deref(), Some("model.json")).expect("default name");
    save_model(ctx, "finetune", &out, &model, &report, &data.config)
}

fn detect_cmd(ctx: &Ctx, a: &DetectArgs) -> CliResult<()> {
    let table = opcode_table(&a.bytecode)?;
    let model = read_model(&a.model)?;
    let id = a.contract_id.clone().unwrap_or_else(|| default_contract_id(&a.bytecode.input));
    if a.bytecode.keep_metadata {
        return Err(Failure::Usage("detect always strips metadata, as training did".into()));
    }
    let hex = bytecode_text(&a.bytecode.input)?;
    let report = detect(&id, &hex, &model, &table)?;
    let out = ctx.out.target(a.out.as_deref(), None);
    ctx.out.emit(out.as_deref(), &to_json_line(&report)?)?;
    ctx.snapshot(out.as_deref(), "detect", None)
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    vulnerability: &'a str,
    runs: usize,
    mean_f1: f64,
    mean_accuracy: f64,
    mean_auc: f64,
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> CliResult<()> {
    let mut config: ExperimentConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = ctx.seed {
        config.split_seed = seed;
        config.train.seed = seed;
    }
    config.train.validate()?;
    if config.runs == 0 {
        return Err(Failure::Usage("config: runs must be at least 1".into()));
    }
    let manifest = DatasetManifest::load(&a.manifest)?;
    let targets: Vec<_> = match a.vulnerability {
        Some(v) => vec![v],
        None => manifest.vulnerabilities().into_iter().collect(),
    };
    let dir = ctx.out.dir();
    let table = OpcodeTable::shanghai();
    let mut summary = Vec::new();
    for v in &targets {
        let subset = manifest.subset(*v);
        if subset.entries.is_empty() {
            return Err(Failure::Input(format!("manifest has no {} contracts", v.name())));
        }
        let samples = load_samples::<f64>(&subset, &table)?;
        let report = five_run_report(&subset, &samples, &config)?;
        let sub = dir.join(v.name());
        ctx.out.write(&sub.join("metrics.csv"), &report.metrics_csv())?;
        ctx.out.write(&sub.join("roc.csv"), &report.roc_csv())?;
        ctx.out.write(&sub.join("report.json"), &to_json_line(&report)?)?;
        log::info!("{}: mean F1 {:.2} over {} runs", v.name(), report.mean.f1, report.runs.len());
        summary.push(EvalSummary {
            vulnerability: v.name(),
            runs: report.runs.len(),
            mean_f1: report.mean.f1,
            mean_accuracy: report.mean.accuracy,
            mean_auc: report.mean.auc,
        });
    }
    let summary_path = dir.join("summary.json");
    ctx.out.write(&summary_path, &to_json_line(&summary)?)?;
    print!("{}", to_json_line(&summary)?);
    ctx.snapshot(Some(&summary_path), "eval", Some(serde_json::to_value(&config)?))
}
