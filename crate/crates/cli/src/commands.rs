//! One function per subcommand. Each reads its inputs from the config,
//! writes its primary outputs under `paths.reports` or
//! `paths.checkpoints`, and returns an [`Outcome`] for the run report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use oqgen_core::corpus::{
    apply_cleaning_rules, load_qa_pairs, split_dataset, CleanVerdict, CleaningReport, CleaningRule,
    QAPair, QuestionType, Split,
};
use oqgen_core::metrics::{
    bleu4, focus_prf, rouge_l, CorrelationResult, CorrelationSample, MetricReport, SampleMetrics, Smoothing,
};
use oqgen_core::parse::{load_parsed_documents, ParsedDocument};
use oqgen_core::semgraph::{build_semantic_graph, default_pruned_relations, label_focus_nodes, merge_nodes, GraphDump};
use oqgen_core::template::{load_blocklist, mine_exemplars, EmbeddingTable, Template, TemplateExtractor};
use oqgen_core::text::detokenize;
use oqgen_model::classifier::{exemplar_head, ClassifierRole, SequenceClassifier};
use oqgen_model::{
    evaluate as eval_generator, train, ClassifierExample, Generator, OutputKind, SelectionMode, Strategy,
    TrainConfig, TrainingExample, TypePrediction, Variant, Vocabulary,
};
use serde::{Deserialize, Serialize};

use crate::config::{DecodeStrategy, PipelineConfig, Stage};
use crate::data::{
    clip, load_embedding_table, load_inventory, load_lexicons, load_protected, metric_tokens, read_jsonl, write_json,
    write_jsonl, write_pairs, write_text, Corpus, GenerationRecord, IdQuestion, TemplateRecord,
};
use crate::error::{CliError, Result};
use crate::protocol::{
    run_diversity, ClassifierPredictor, ModelGenerator, ProtocolInput, QuestionGenerator, TypePredictor,
};
use crate::report::{CommandReport, Outcome};

pub const QUESTION_CLASSIFIER: &str = "classifier-question.ckpt";
pub const ANSWER_CLASSIFIER: &str = "classifier-answer.ckpt";
pub const TEMPLATE_MODEL: &str = "tplgen-template.ckpt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Clean,
    Split,
    Graph,
    Templates,
    MineExemplars,
    Train,
    TrainClassifier,
    Generate,
    Classify,
    Evaluate,
    Diversity,
    Correlate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Clean => "clean",
            Command::Split => "split",
            Command::Graph => "graph",
            Command::Templates => "templates",
            Command::MineExemplars => "mine-exemplars",
            Command::Train => "train",
            Command::TrainClassifier => "train-classifier",
            Command::Generate => "generate",
            Command::Classify => "classify",
            Command::Evaluate => "evaluate",
            Command::Diversity => "diversity",
            Command::Correlate => "correlate",
        }
    }
}

/// Runs `command` and writes its report. Failures are recorded in the
/// report rather than returned.
pub fn run(command: Command, config: &PipelineConfig) -> CommandReport {
    run_reported(command.name(), config, |c| match command {
        Command::Clean => clean(c),
        Command::Split => split(c),
        Command::Graph => graph(c),
        Command::Templates => templates(c),
        Command::MineExemplars => mine(c),
        Command::Train => train_generator(c),
        Command::TrainClassifier => train_classifiers(c),
        Command::Generate => generate(c),
        Command::Classify => classify(c),
        Command::Evaluate => evaluate(c),
        Command::Diversity => {
            let mut generator = model_generator(c, None, c.generate.variant)?;
            let predictor = classifier_predictor(c)?;
            diversity_with(c, &mut generator, &predictor)
        }
        Command::Correlate => correlate(c),
    })
}

/// The `diversity` command with caller-supplied models.
pub fn run_diversity_with(
    config: &PipelineConfig,
    generator: &mut dyn QuestionGenerator,
    predictor: &dyn TypePredictor,
) -> CommandReport {
    run_reported(Command::Diversity.name(), config, |c| diversity_with(c, generator, predictor))
}

fn run_reported<F>(name: &str, config: &PipelineConfig, body: F) -> CommandReport
where
    F: FnOnce(&PipelineConfig) -> Result<Outcome>,
{
    let start = Instant::now();
    let result = body(config);
    let (ok, error, outcome) = match result {
        Ok(o) => (true, None, o),
        Err(e) => (false, Some(e.to_string()), Outcome::default()),
    };
    let mut report = CommandReport {
        command: name.to_string(),
        ok,
        error,
        seed: config.seed,
        config_hash: config.hash(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        outcome,
    };
    if let Err(e) = report.write(&config.paths.reports) {
        report.ok = false;
        report.error.get_or_insert_with(|| e.to_string());
    }
    report
}

fn existing(command: &str, path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::missing(command, format!("{what} at {}", path.display())))
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn template_string(tokens: &[String]) -> String {
    tokens.join(" ")
}

fn template_from_string(s: &str) -> Template {
    Template::from_strings(&s.split_whitespace().collect::<Vec<_>>())
}

#[derive(Serialize)]
struct VerdictRecord<'a> {
    id: &'a str,
    #[serde(flatten)]
    verdict: &'a CleanVerdict,
}

fn clean(cfg: &PipelineConfig) -> Result<Outcome> {
    let qa = cfg.require("clean", "paths.qa", &cfg.paths.qa)?;
    let pairs = load_qa_pairs(qa)?;
    let lex = load_lexicons(cfg.paths.lexicons.as_deref())?;
    let verdicts: Vec<CleanVerdict> = pairs
        .iter()
        .map(|p| apply_cleaning_rules(p, &lex, &CleaningRule::ALL))
        .collect();
    let summary = CleaningReport::from_verdicts(&verdicts);
    let accepted: Vec<QAPair> = pairs
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.accepted)
        .map(|(p, _)| p.clone())
        .collect();
    let records: Vec<VerdictRecord> = pairs
        .iter()
        .zip(&verdicts)
        .map(|(p, v)| VerdictRecord { id: &p.id, verdict: v })
        .collect();

    let mut out = Outcome::default();
    let clean_path = cfg.report_path("clean.jsonl");
    write_pairs(&clean_path, &accepted)?;
    let verdict_path = cfg.report_path("clean-verdicts.jsonl");
    write_jsonl(&verdict_path, &records)?;
    let summary_path = cfg.report_path("cleaning.json");
    write_json(&summary_path, &summary)?;
    out.input("pairs", pairs.len())
        .output("accepted", summary.accepted_count)
        .output("rejected", summary.rejected_count)
        .output(
            "skipped_checks",
            verdicts.iter().map(|v| v.skipped_rules.len()).sum(),
        );
    for (rule, n) in &summary.per_rule_counts {
        out.output(&format!("rule.{rule}"), *n);
    }
    out.emit(&clean_path).emit(&verdict_path).emit(&summary_path);
    Ok(out)
}

fn split(cfg: &PipelineConfig) -> Result<Outcome> {
    let qa = cfg.require("split", "paths.qa", &cfg.paths.qa)?;
    let mut pairs = load_qa_pairs(qa)?;
    let assignment = split_dataset(&pairs, cfg.split.ratios, cfg.stage_seed(Stage::Split))?;
    for p in &mut pairs {
        p.split = assignment.assignments.get(&p.id).copied();
    }
    let path = cfg.report_path("split.jsonl");
    write_pairs(&path, &pairs)?;
    let mut out = Outcome::default();
    out.input("pairs", pairs.len());
    for s in Split::ALL {
        out.output(s.name(), assignment.count(s));
    }
    out.emit(&path);
    Ok(out)
}

#[derive(Serialize)]
struct GraphRecord<'a> {
    id: &'a str,
    #[serde(flatten)]
    graph: GraphDump,
}

fn merged_graph(doc: &ParsedDocument) -> Result<oqgen_core::semgraph::SemanticGraph> {
    Ok(merge_nodes(&build_semantic_graph(doc, &default_pruned_relations())?, doc))
}

fn graph(cfg: &PipelineConfig) -> Result<Outcome> {
    let parsed = cfg.require("graph", "paths.parsed", &cfg.paths.parsed)?;
    let docs = load_parsed_documents(parsed)?;
    let mut records = Vec::with_capacity(docs.len());
    let (mut nodes, mut edges) = (0, 0);
    for d in &docs {
        let g = merged_graph(d)?;
        nodes += g.len();
        edges += g.edges().len();
        records.push(GraphRecord {
            id: &d.id,
            graph: g.dump(d),
        });
    }
    let path = cfg.report_path("graphs.jsonl");
    write_jsonl(&path, &records)?;
    let mut out = Outcome::default();
    out.input("documents", docs.len())
        .output("graphs", records.len())
        .output("nodes", nodes)
        .output("edges", edges)
        .emit(&path);
    Ok(out)
}

fn extractor<'a>(
    cfg: &PipelineConfig,
    emb: &'a EmbeddingTable,
    protected: &'a oqgen_core::template::ProtectedWordLists,
    lex: &'a oqgen_core::corpus::Lexicons,
) -> TemplateExtractor<'a> {
    TemplateExtractor {
        threshold: cfg.templates.threshold,
        ..TemplateExtractor::new(emb, protected, lex)
    }
}

/// Template of the reference question of `pair`.
fn reference_template(
    command: &str,
    corpus: &Corpus,
    ex: &TemplateExtractor<'_>,
    pair: &QAPair,
    ty: QuestionType,
) -> Result<Template> {
    let answer = corpus
        .answer(&pair.id)
        .ok_or_else(|| CliError::missing(command, format!("a parsed answer for `{}`", pair.id)))?;
    let question = corpus
        .questions
        .get(&pair.id)
        .ok_or_else(|| CliError::missing(command, format!("a parsed question for `{}`", pair.id)))?;
    Ok(ex.extract(&question.flatten(), answer, ty))
}

fn templates(cfg: &PipelineConfig) -> Result<Outcome> {
    cfg.require("templates", "paths.parsed_questions", &cfg.paths.parsed_questions)?;
    let corpus = Corpus::load(cfg, "templates")?;
    let emb = load_embedding_table(cfg, "templates")?;
    let protected = load_protected(cfg)?;
    let lex = load_lexicons(cfg.paths.lexicons.as_deref())?;
    let ex = extractor(cfg, &emb, &protected, &lex);
    let mut records = Vec::new();
    let mut skipped = 0;
    for pair in &corpus.pairs {
        let Some(ty) = pair.qtype else {
            skipped += 1;
            continue;
        };
        if !corpus.answers.contains_key(&pair.id) || !corpus.questions.contains_key(&pair.id) {
            skipped += 1;
            continue;
        }
        let t = reference_template("templates", &corpus, &ex, pair, ty)?;
        records.push(TemplateRecord {
            id: pair.id.clone(),
            qtype: ty,
            template: template_string(&t.token_strings()),
        });
    }
    let path = cfg.report_path("templates.jsonl");
    write_jsonl(&path, &records)?;
    let mut out = Outcome::default();
    out.input("pairs", corpus.pairs.len())
        .output("templates", records.len())
        .output("skipped", skipped)
        .emit(&path);
    Ok(out)
}

fn templates_path(cfg: &PipelineConfig, command: &str) -> Result<PathBuf> {
    match &cfg.paths.templates {
        Some(p) => Ok(p.clone()),
        None => existing(command, cfg.report_path("templates.jsonl"), "extracted templates"),
    }
}

fn mine(cfg: &PipelineConfig) -> Result<Outcome> {
    let path = templates_path(cfg, "mine-exemplars")?;
    let records: Vec<TemplateRecord> = read_jsonl(&path)?;
    let list: Vec<(QuestionType, Template)> = records
        .iter()
        .map(|r| (r.qtype, template_from_string(&r.template)))
        .collect();
    let blocklist = match &cfg.paths.blocklist {
        Some(p) => load_blocklist(p)?,
        None => BTreeSet::new(),
    };
    let inventory = mine_exemplars(&list, cfg.templates.min_freq, &blocklist)?;
    let out_path = cfg.report_path("exemplars.tsv");
    write_text(&out_path, &inventory.to_tsv())?;
    let mut out = Outcome::default();
    out.input("templates", records.len())
        .input("blocklisted", blocklist.len())
        .output("exemplars", inventory.total());
    for ty in QuestionType::ALL {
        out.output(&format!("type.{}", ty.name()), inventory.get(ty).len());
    }
    out.emit(&out_path);
    Ok(out)
}

fn checkpoint_name(variant: Variant) -> &'static str {
    match variant {
        Variant::JointGen => "jointgen.ckpt",
        Variant::ExplGen => "explgen.ckpt",
        Variant::TplGen => "tplgen.ckpt",
    }
}

/// Training examples for one split. For TplGen, the second list holds the
/// stage-1 (exemplar to template) examples.
struct ExampleSets {
    main: Vec<TrainingExample>,
    stage1: Vec<TrainingExample>,
}

fn build_examples(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: Split,
    variant: Variant,
    ex: Option<&TemplateExtractor<'_>>,
) -> Result<ExampleSets> {
    let lex = load_lexicons(cfg.paths.lexicons.as_deref())?;
    let inventory = load_inventory(cfg)?;
    let mut sets = ExampleSets {
        main: Vec::new(),
        stage1: Vec::new(),
    };
    for pair in corpus.in_split(split) {
        let Some(ty) = pair.qtype else { continue };
        let answer = corpus.answers[&pair.id].clone();
        let qtoks = corpus.question_tokens(pair);
        let target: Vec<String> = qtoks.iter().map(|t| t.text.clone()).collect();
        if variant == Variant::JointGen {
            sets.main
                .push(TrainingExample::new(ty, answer, &qtoks, Vec::new(), target, &lex)?);
            continue;
        }
        let ex = ex.expect("extractor is built for exemplar variants");
        let template = reference_template("train", corpus, ex, pair, ty)?;
        let exemplar = inventory.get(ty)[inventory.nearest(ty, &template)?.0].token_strings();
        if variant == Variant::ExplGen {
            sets.main
                .push(TrainingExample::new(ty, answer, &qtoks, vec![exemplar], target, &lex)?);
        } else {
            let tpl = template.token_strings();
            sets.stage1.push(TrainingExample::new(
                ty,
                answer.clone(),
                &qtoks,
                vec![exemplar],
                tpl.clone(),
                &lex,
            )?);
            sets.main.push(
                TrainingExample::new(ty, answer, &qtoks, vec![tpl], target, &lex)?.with_gold_focus_words(),
            );
        }
    }
    Ok(sets)
}

fn example_words(examples: &[TrainingExample]) -> Vec<Vec<String>> {
    let mut seqs = Vec::new();
    for e in examples {
        seqs.push(e.target.clone());
        seqs.push(e.input.answer_tokens());
        seqs.extend(e.input.segments.iter().cloned());
    }
    seqs
}

/// Drops examples the model cannot hold; returns how many were dropped.
fn keep_fitting(model: &Generator, examples: &mut Vec<TrainingExample>) -> usize {
    let before = examples.len();
    examples.retain(|e| {
        e.target.len() < model.config.max_positions && model.encode_input(&e.input).is_ok()
    });
    before - examples.len()
}

fn fit(
    cfg: &PipelineConfig,
    model: &mut Generator,
    train_set: &mut Vec<TrainingExample>,
    valid_set: &mut Vec<TrainingExample>,
    tc: &TrainConfig,
    name: &str,
    out: &mut Outcome,
) -> Result<()> {
    let dropped = keep_fitting(model, train_set) + keep_fitting(model, valid_set);
    out.input(&format!("{name}.train_examples"), train_set.len())
        .input(&format!("{name}.valid_examples"), valid_set.len())
        .output(&format!("{name}.dropped_too_long"), dropped);
    let log = train(model, train_set, tc, |_, _| Ok(true))?;
    let losses = log.losses();
    let tail = &losses[losses.len().saturating_sub(50)..];
    if !tail.is_empty() {
        out.metric(&format!("{name}.final_loss"), tail.iter().sum::<f64>() / tail.len() as f64);
    }
    out.output(&format!("{name}.steps"), losses.len());
    if !valid_set.is_empty() {
        let stats = eval_generator(model, valid_set, tc.bce_eps)?;
        out.metric(&format!("{name}.valid_token_accuracy"), stats.token_accuracy)
            .metric(&format!("{name}.valid_focus_f1"), stats.focus_f1);
    }
    let ckpt = cfg.checkpoint_path(&format!("{name}.ckpt"));
    std::fs::create_dir_all(&cfg.paths.checkpoints).map_err(|e| CliError::io(&cfg.paths.checkpoints, e))?;
    model.save(&ckpt)?;
    let log_path = cfg.report_path(&format!("train-{name}.csv"));
    write_text(&log_path, &log.to_csv())?;
    out.emit(&ckpt).emit(&log_path);
    Ok(())
}

fn train_generator(cfg: &PipelineConfig) -> Result<Outcome> {
    let variant = cfg.train.variant;
    let corpus = Corpus::load(cfg, "train")?;
    let emb = match variant {
        Variant::JointGen => None,
        _ => Some(load_embedding_table(cfg, "train")?),
    };
    let protected = load_protected(cfg)?;
    let lex = load_lexicons(cfg.paths.lexicons.as_deref())?;
    let ex = emb.as_ref().map(|e| extractor(cfg, e, &protected, &lex));
    let mut train_sets = build_examples(cfg, &corpus, Split::Train, variant, ex.as_ref())?;
    let mut valid_sets = build_examples(cfg, &corpus, Split::Valid, variant, ex.as_ref())?;
    if corpus.pairs.iter().all(|p| p.split.is_none()) {
        // Without split labels the valid set would repeat the training set.
        valid_sets.main.clear();
        valid_sets.stage1.clear();
    }

    let mut seqs = example_words(&train_sets.main);
    seqs.extend(example_words(&train_sets.stage1));
    for ty in QuestionType::ALL {
        seqs.extend(load_inventory(cfg)?.get(ty).iter().map(Template::token_strings));
    }
    let vocab = Vocabulary::build(seqs.iter().map(Vec::as_slice), cfg.train.min_word_count);
    let tc = cfg.train_config();
    let init = cfg.stage_seed(Stage::Init);

    let mut out = Outcome::default();
    out.input("pairs", corpus.pairs.len()).output("vocabulary", vocab.len());
    let name = checkpoint_name(variant).trim_end_matches(".ckpt");
    let mut main_config = cfg.model.clone();
    if variant == Variant::TplGen {
        main_config.focus_word_attention = true;
        let mut stage1 = Generator::new(cfg.model.clone(), vocab.clone(), OutputKind::Template, init)?;
        let stage1_name = TEMPLATE_MODEL.trim_end_matches(".ckpt");
        fit(
            cfg,
            &mut stage1,
            &mut train_sets.stage1,
            &mut valid_sets.stage1,
            &tc,
            stage1_name,
            &mut out,
        )?;
    }
    let mut model = Generator::new(main_config, vocab, OutputKind::Question, init)?;
    fit(cfg, &mut model, &mut train_sets.main, &mut valid_sets.main, &tc, name, &mut out)?;
    Ok(out)
}

fn train_classifiers(cfg: &PipelineConfig) -> Result<Outcome> {
    let corpus = Corpus::load(cfg, "train-classifier")?;
    let inventory = load_inventory(cfg)?;
    let protected = load_protected(cfg)?;
    let lex = load_lexicons(cfg.paths.lexicons.as_deref())?;
    // Exemplar heads need reference templates, hence embeddings and parsed
    // questions; without them the answer classifier ranks types only.
    let emb = match (&cfg.paths.embeddings, corpus.questions.is_empty()) {
        (Some(_), false) => Some(load_embedding_table(cfg, "train-classifier")?),
        _ => None,
    };
    let ex = emb.as_ref().map(|e| extractor(cfg, e, &protected, &lex));
    let max = cfg.classifier.model.max_positions - 1;

    let examples = |split: Split| -> Result<(Vec<ClassifierExample>, Vec<ClassifierExample>)> {
        let (mut q, mut a) = (Vec::new(), Vec::new());
        for pair in corpus.in_split(split) {
            let Some(ty) = pair.qtype else { continue };
            let answer = clip(corpus.answer_words(pair), max);
            q.push(ClassifierExample::type_example(clip(pair.question_tokens(), max), ty));
            a.push(ClassifierExample::type_example(answer.clone(), ty));
            if let Some(ex) = &ex {
                let t = reference_template("train-classifier", &corpus, ex, pair, ty)?;
                let index = inventory.nearest(ty, &t)?.0;
                a.push(ClassifierExample::exemplar_example(answer, ty, index));
            }
        }
        Ok((q, a))
    };
    let (q_train, a_train) = examples(Split::Train)?;
    let (q_valid, a_valid) = if corpus.pairs.iter().any(|p| p.split.is_some()) {
        examples(Split::Valid)?
    } else {
        (Vec::new(), Vec::new())
    };

    let seqs: Vec<&[String]> = q_train.iter().chain(&a_train).map(|e| e.tokens.as_slice()).collect();
    let vocab = Vocabulary::build(seqs, cfg.train.min_word_count);
    let tc = cfg.classifier_train_config();
    let seed = cfg.stage_seed(Stage::Classifier);
    let mut question = SequenceClassifier::type_classifier(
        cfg.classifier.model.clone(),
        vocab.clone(),
        ClassifierRole::Question,
        None,
        seed,
    )?;
    let mut answer = SequenceClassifier::type_classifier(
        cfg.classifier.model.clone(),
        vocab,
        ClassifierRole::Answer,
        ex.as_ref().map(|_| &inventory),
        seed.wrapping_add(1),
    )?;

    let mut out = Outcome::default();
    std::fs::create_dir_all(&cfg.paths.checkpoints).map_err(|e| CliError::io(&cfg.paths.checkpoints, e))?;
    for (name, model, train_set, valid_set, file) in [
        ("question", &mut question, &q_train, &q_valid, QUESTION_CLASSIFIER),
        ("answer", &mut answer, &a_train, &a_valid, ANSWER_CLASSIFIER),
    ] {
        let losses = model.train(train_set, &tc)?;
        out.input(&format!("{name}.train_examples"), train_set.len())
            .metric(&format!("{name}.final_loss"), losses.last().copied().unwrap_or(f64::NAN))
            .metric(&format!("{name}.train_accuracy"), model.accuracy(train_set)?);
        if !valid_set.is_empty() {
            out.metric(&format!("{name}.valid_accuracy"), model.accuracy(valid_set)?);
        }
        let path = cfg.checkpoint_path(file);
        model.save(&path)?;
        out.emit(&path);
    }
    out.output("exemplar_heads", usize::from(ex.is_some()));
    Ok(out)
}

fn load_classifier(cfg: &PipelineConfig, command: &str, file: &str) -> Result<SequenceClassifier> {
    let path = existing(command, cfg.checkpoint_path(file), "a trained classifier")?;
    Ok(SequenceClassifier::load(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
    pub confidence: f64,
}

fn classify(cfg: &PipelineConfig) -> Result<Outcome> {
    let qa = cfg.require("classify", "paths.qa", &cfg.paths.qa)?;
    let pairs = load_qa_pairs(qa)?;
    let model = load_classifier(cfg, "classify", QUESTION_CLASSIFIER)?;
    let max = model.config.max_positions - 1;
    let mut records = Vec::with_capacity(pairs.len());
    let mut retained = Vec::new();
    let (mut agree, mut gold) = (0, 0);
    for pair in &pairs {
        let words = clip(pair.question_tokens(), max);
        let (ty, confidence) = model.predict_type(&words)?;
        if let Some(g) = pair.qtype {
            gold += 1;
            agree += usize::from(g == ty);
        }
        let prediction = TypePrediction {
            text: words,
            qtype: ty,
            confidence,
        };
        if !oqgen_model::self_train_filter(vec![prediction], cfg.classifier.confidence_threshold).is_empty() {
            retained.push(QAPair {
                qtype: Some(ty),
                ..pair.clone()
            });
        }
        records.push(PredictionRecord {
            id: pair.id.clone(),
            qtype: ty,
            confidence,
        });
    }
    let pred_path = cfg.report_path("predictions.jsonl");
    write_jsonl(&pred_path, &records)?;
    let kept_path = cfg.report_path("self-train.jsonl");
    write_pairs(&kept_path, &retained)?;
    let mut out = Outcome::default();
    out.input("pairs", pairs.len())
        .output("predicted", records.len())
        .output("retained", retained.len());
    if gold > 0 {
        out.metric("gold_accuracy", agree as f64 / gold as f64);
    }
    out.emit(&pred_path).emit(&kept_path);
    Ok(out)
}

fn strategy(cfg: &PipelineConfig) -> Strategy {
    match cfg.generate.strategy {
        DecodeStrategy::Beam => Strategy::Beam(cfg.decode),
        DecodeStrategy::Greedy => Strategy::Greedy {
            min_len: cfg.decode.min_len,
            max_len: cfg.decode.max_len,
        },
        DecodeStrategy::Sample => Strategy::Sample {
            options: cfg.generate.sampling,
            seed: cfg.stage_seed(Stage::Sample),
        },
    }
}

/// Loads the trained generator for `variant` plus whatever exemplar
/// selection needs. Oracle selection reads reference templates from
/// `corpus`.
pub fn model_generator(cfg: &PipelineConfig, corpus: Option<&Corpus>, variant: Variant) -> Result<ModelGenerator> {
    let command = "generate";
    let path = existing(command, cfg.checkpoint_path(checkpoint_name(variant)), "a trained generator")?;
    let mut g = ModelGenerator::new(variant, Generator::load(path)?, strategy(cfg));
    if variant == Variant::TplGen {
        let path = existing(command, cfg.checkpoint_path(TEMPLATE_MODEL), "a trained template model")?;
        g.template_generator = Some(Generator::load(path)?);
    }
    if variant == Variant::JointGen {
        return Ok(g);
    }
    g.inventory = load_inventory(cfg)?;
    g.selection = cfg.generate.selection;
    match g.selection {
        SelectionMode::Learned => {
            let selector = load_classifier(cfg, command, ANSWER_CLASSIFIER)?;
            let sizes: BTreeMap<String, usize> = selector.head_sizes().into_iter().collect();
            let matches = QuestionType::ALL
                .iter()
                .all(|&ty| sizes.get(&exemplar_head(ty)).copied().unwrap_or(0) == g.inventory.get(ty).len());
            if !matches {
                return Err(CliError::missing(
                    command,
                    "an answer classifier trained on the configured exemplar inventory (rerun train-classifier)",
                ));
            }
            g.selector = Some(selector);
        }
        SelectionMode::Oracle => {
            let owned;
            let corpus = match corpus {
                Some(c) => c,
                None => {
                    owned = Corpus::load(cfg, command)?;
                    &owned
                }
            };
            let emb = load_embedding_table(cfg, command)?;
            let protected = load_protected(cfg)?;
            let lex = load_lexicons(cfg.paths.lexicons.as_deref())?;
            let ex = extractor(cfg, &emb, &protected, &lex);
            for pair in &corpus.pairs {
                if let (Some(ty), true) = (pair.qtype, corpus.questions.contains_key(&pair.id)) {
                    if corpus.answers.contains_key(&pair.id) {
                        let t = reference_template(command, corpus, &ex, pair, ty)?;
                        g.oracle_templates.insert(pair.id.clone(), t);
                    }
                }
            }
        }
    }
    Ok(g)
}

fn classifier_predictor(cfg: &PipelineConfig) -> Result<ClassifierPredictor> {
    Ok(ClassifierPredictor {
        answer: load_classifier(cfg, "diversity", ANSWER_CLASSIFIER)?,
        question: load_classifier(cfg, "diversity", QUESTION_CLASSIFIER)?,
    })
}

fn generate(cfg: &PipelineConfig) -> Result<Outcome> {
    let corpus = Corpus::load(cfg, "generate")?;
    let mut generator = model_generator(cfg, Some(&corpus), cfg.generate.variant)?;
    let pairs = corpus.in_split(cfg.generate.split);
    let mut type_model = None;
    let mut records = Vec::with_capacity(pairs.len());
    let mut predicted_types = 0;
    for pair in &pairs {
        let ty = match pair.qtype {
            Some(t) => t,
            None => {
                if type_model.is_none() {
                    type_model = Some(load_classifier(cfg, "generate", ANSWER_CLASSIFIER)?);
                }
                let m = type_model.as_ref().expect("loaded above");
                predicted_types += 1;
                m.predict_type(&clip(corpus.answer_words(pair), m.config.max_positions - 1))?.0
            }
        };
        let g = generator.generate(&pair.id, &corpus.answers[&pair.id], ty)?;
        records.push(GenerationRecord {
            id: pair.id.clone(),
            qtype: ty,
            question: detokenize(&g.question),
            template: g.template.as_deref().map(template_string),
            focus_nodes: g.focus_nodes,
        });
    }
    let path = cfg.report_path("generations.jsonl");
    write_jsonl(&path, &records)?;
    let mut out = Outcome::default();
    out.input("pairs", pairs.len())
        .output("questions", records.len())
        .output("types_from_classifier", predicted_types)
        .emit(&path);
    Ok(out)
}

/// Sentence and corpus BLEU are on a 0-100 scale here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub hypotheses: String,
    pub references: String,
    pub count: usize,
    pub unmatched: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub samples: Vec<SampleMetrics>,
}

fn hypotheses_path(cfg: &PipelineConfig, command: &str) -> Result<PathBuf> {
    match &cfg.paths.hypotheses {
        Some(p) => Ok(p.clone()),
        None => existing(command, cfg.report_path("generations.jsonl"), "generated questions"),
    }
}

fn evaluate(cfg: &PipelineConfig) -> Result<Outcome> {
    let hyp_path = hypotheses_path(cfg, "evaluate")?;
    let ref_path = match &cfg.paths.references {
        Some(p) => p.clone(),
        None => cfg.require("evaluate", "paths.references or paths.qa", &cfg.paths.qa)?.to_path_buf(),
    };
    let hyps: Vec<IdQuestion> = read_jsonl(&hyp_path)?;
    let refs: BTreeMap<String, String> = read_jsonl::<IdQuestion>(&ref_path)?
        .into_iter()
        .map(|r| (r.id, r.question))
        .collect();
    let triples: Vec<(String, Vec<String>, Vec<String>)> = hyps
        .iter()
        .filter_map(|h| {
            refs.get(&h.id)
                .map(|r| (h.id.clone(), metric_tokens(&h.question), metric_tokens(r)))
        })
        .collect();
    if triples.is_empty() {
        return Err(CliError::missing("evaluate", "hypotheses whose ids appear in the references"));
    }
    let m = MetricReport::compute(&file_label(&hyp_path), &file_label(&ref_path), &triples)?;
    let report = EvaluationReport {
        hypotheses: m.hypotheses,
        references: m.references,
        count: m.count,
        unmatched: hyps.len() - triples.len(),
        bleu4: 100.0 * m.bleu4,
        rouge_l: m.rouge_l,
        samples: m
            .samples
            .into_iter()
            .map(|s| SampleMetrics {
                bleu4: 100.0 * s.bleu4,
                ..s
            })
            .collect(),
    };
    let path = cfg.report_path("report.json");
    write_json(&path, &report)?;
    let mut out = Outcome::default();
    out.input("hypotheses", hyps.len())
        .input("references", refs.len())
        .output("scored", report.count)
        .output("unmatched", report.unmatched)
        .metric("bleu4", report.bleu4)
        .metric("rouge_l", report.rouge_l)
        .emit(&path);
    Ok(out)
}

fn diversity_with(
    cfg: &PipelineConfig,
    generator: &mut dyn QuestionGenerator,
    predictor: &dyn TypePredictor,
) -> Result<Outcome> {
    let corpus = Corpus::load(cfg, "diversity")?;
    let pairs = corpus.in_split(cfg.diversity.split);
    if pairs.is_empty() {
        return Err(CliError::missing("diversity", format!("pairs in the {} split", cfg.diversity.split)));
    }
    let words: Vec<Vec<String>> = pairs.iter().map(|p| corpus.answer_words(p)).collect();
    let inputs: Vec<ProtocolInput> = pairs
        .iter()
        .zip(&words)
        .map(|(p, w)| ProtocolInput {
            id: &p.id,
            answer_words: w,
            answer: &corpus.answers[&p.id],
        })
        .collect();
    let (result, records) = run_diversity(&inputs, generator, predictor, cfg.diversity.top_k)?;
    let summary_path = cfg.report_path("diversity.json");
    write_json(&summary_path, &result)?;
    let gen_path = cfg.report_path("diversity-generations.jsonl");
    write_jsonl(&gen_path, &records)?;
    let mut out = Outcome::default();
    out.input("answers", inputs.len())
        .output("questions", records.len())
        .metric("type_accuracy", result.type_accuracy)
        .metric("unique_types", result.unique_types)
        .metric("pairwise_bleu", result.pairwise_bleu)
        .emit(&summary_path)
        .emit(&gen_path);
    Ok(out)
}

fn correlate(cfg: &PipelineConfig) -> Result<Outcome> {
    let corpus = Corpus::load(cfg, "correlate")?;
    let lex = load_lexicons(cfg.paths.lexicons.as_deref())?;
    let hyp_path = hypotheses_path(cfg, "correlate")?;
    let hyps: Vec<GenerationRecord> = read_jsonl(&hyp_path)?;
    let pairs: BTreeMap<&str, &QAPair> = corpus.pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut samples = Vec::new();
    for h in &hyps {
        let (Some(pair), Some(answer), Some(nodes)) =
            (pairs.get(h.id.as_str()), corpus.answer(&h.id), h.focus_nodes.as_ref())
        else {
            continue;
        };
        let graph = merged_graph(answer)?;
        let gold = label_focus_nodes(&graph, answer, &corpus.question_tokens(pair), &lex).focus_indices();
        let predicted: BTreeSet<usize> = nodes.iter().copied().collect();
        let hyp = metric_tokens(&h.question);
        let reference = metric_tokens(&pair.question);
        samples.push(CorrelationSample {
            id: h.id.clone(),
            focus_f1: focus_prf(&predicted, &gold).2,
            bleu4: 100.0 * bleu4(&hyp, &[&reference], Smoothing::AddOne)?,
            rouge_l: rouge_l(&hyp, &reference),
        });
    }
    let result = CorrelationResult::compute(&samples, cfg.correlate.bins, cfg.correlate.p_threshold)?;
    let csv_path = cfg.report_path("correlation.csv");
    write_text(&csv_path, &result.to_csv())?;
    let json_path = cfg.report_path("correlation.json");
    write_json(&json_path, &result)?;
    let mut out = Outcome::default();
    out.input("hypotheses", hyps.len())
        .output("samples", samples.len())
        .output("significant", usize::from(result.significant))
        .metric("pearson_r", result.pearson_r)
        .metric("rouge_pearson_r", result.rouge_pearson_r);
    if let Some(p) = result.p_value {
        out.metric("p_value", p);
    }
    if let Some(p) = result.rouge_p_value {
        out.metric("rouge_p_value", p);
    }
    out.emit(&csv_path).emit(&json_path);
    Ok(out)
}
