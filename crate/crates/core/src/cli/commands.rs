use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use super::config::{RunConfig, ScorerSpec};
use crate::decode::{generate_batch, DecodeConfig, Strategy, DEFAULT_MAX_NEW_TOKENS};
use crate::error::{Error, Result};
use crate::loopdetect::{detect_in_continuation, loop_rate, LoopSpec, SentenceBoundary};
use crate::neighborhood::{
    absolute_samples, compare_protocol, difference_samples, evenly_spaced_steps, pca_project,
    relative_samples, Axis, CountParams, DeviationCurve, ProtocolConfig, StateEncoder,
    SupportIndex, ABSOLUTE_STEP_COUNT, RELATIVE_OFFSETS,
};
use crate::rng::stage_seed;
use crate::textmetrics::{
    inducingness_repeated, inducingness_simple, looping_conditions, mask_schedule,
    masked_likelihood_curve, pick_context, sentence_conditions, write_reports_csv, ConditionSet,
    MaskedScorer, ScoreFileScorer, UniformScorer,
};
use crate::toylm::SelfReinforcingLM;
use crate::trace::{load_corpus, write_corpus, Corpus, Origin, Passage, Split, StateTrace, TokenId};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Appends a constant `seed` column to CSV text.
fn with_seed_column(csv: &[u8], seed: u64) -> Vec<u8> {
    let text = String::from_utf8_lossy(csv);
    let mut out = String::with_capacity(text.len() + 16 * text.lines().count());
    for (i, line) in text.lines().enumerate() {
        out.push_str(line);
        if i == 0 {
            out.push_str(",seed\n");
        } else {
            out.push_str(&format!(",{seed}\n"));
        }
    }
    out.into_bytes()
}

fn write_csv_with_seed<F>(path: &Path, seed: u64, fill: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    fill(&mut buf).map_err(|e| Error::io(path, e))?;
    write_bytes(path, &with_seed_column(&buf, seed))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn toy_model(cfg: &RunConfig) -> Result<Option<SelfReinforcingLM>> {
    cfg.toy_model().cloned().map(SelfReinforcingLM::new).transpose()
}

fn require_toy(cfg: &RunConfig, what: &str) -> Result<SelfReinforcingLM> {
    toy_model(cfg)?.ok_or_else(|| {
        Error::usage(format!(
            "{what} needs a generative model; set model to {{\"kind\": \"toy\", ...}}"
        ))
    })
}

/// Toy real passages with half train, a quarter each valid and test.
fn sample_toy_corpus(model: &SelfReinforcingLM, cfg: &RunConfig) -> Vec<Passage> {
    let n = cfg.analysis.num_passages;
    let len = cfg.analysis.passage_len;
    let n_train = n / 2;
    let n_valid = (n - n_train) / 2;
    let n_test = n - n_train - n_valid;
    let mut out = Vec::with_capacity(n);
    for (split, count, tag) in [
        (Split::Train, n_train, "train"),
        (Split::Valid, n_valid, "valid"),
        (Split::Test, n_test, "test"),
    ] {
        out.extend(model.sample_real(
            &format!("{tag}-"),
            count,
            len,
            split,
            stage_seed(cfg.seed, &format!("corpus/{tag}")),
        ));
    }
    out
}

/// The corpus named in the config, or a sampled toy corpus when there is
/// none and the model is the toy LM.
fn real_corpus(cfg: &RunConfig, model: Option<&SelfReinforcingLM>) -> Result<Corpus> {
    match (&cfg.corpus, model) {
        (Some(path), _) => load_corpus(path),
        (None, Some(m)) => {
            let mut c = Corpus::new(m.spec().vocab_size);
            c.vocab = Some(m.vocabulary());
            for p in sample_toy_corpus(m, cfg) {
                c.push(p, None);
            }
            Ok(c)
        }
        (None, None) => Err(Error::usage("no corpus manifest and no toy model to sample one")),
    }
}

fn token_texts(corpus: &Corpus, model: Option<&SelfReinforcingLM>) -> Option<Vec<String>> {
    corpus
        .vocab
        .clone()
        .or_else(|| model.map(SelfReinforcingLM::vocabulary))
}

fn detokenize(vocab: Option<&[String]>, tokens: &[TokenId]) -> String {
    match vocab {
        Some(v) => tokens
            .iter()
            .map(|&t| v.get(t as usize).map(String::as_str).unwrap_or("\u{fffd}"))
            .collect(),
        None => tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    }
}

#[derive(Serialize)]
struct LoopLine<'a> {
    passage_id: &'a str,
    rho: Option<usize>,
    lambda: Option<usize>,
    looping_text: Option<String>,
}

pub fn cmd_detect(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = toy_model(cfg)?;
    let corpus = load_corpus(cfg.corpus_path()?)?;
    let vocab = token_texts(&corpus, model.as_ref());
    let passages: Vec<&Passage> = corpus.passages().collect();
    let loops: Vec<Option<LoopSpec>> = passages.iter().map(|p| detect_in_continuation(p)).collect();

    let path = out.join("loops.jsonl");
    let mut w = create(&path)?;
    for (p, spec) in passages.iter().zip(&loops) {
        let line = LoopLine {
            passage_id: &p.id,
            rho: spec.as_ref().map(|s| s.rho),
            lambda: spec.as_ref().map(|s| s.lambda),
            looping_text: spec
                .as_ref()
                .map(|s| detokenize(vocab.as_deref(), &s.looping_tokens)),
        };
        let text = serde_json::to_string(&line).map_err(|e| Error::json(&path, e))?;
        writeln!(w, "{text}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let rate = loop_rate(passages.iter().copied())?;
    let looping = loops.iter().filter(|l| l.is_some()).count();
    info!("{looping}/{} passages loop", passages.len());
    write_json_file(
        &out.join("summary.json"),
        &json!({
            "seed": cfg.seed,
            "passages": passages.len(),
            "looping": looping,
            "loop_rate": rate,
        }),
    )
}

fn generation_conditions(cfg: &RunConfig, corpus: &Corpus) -> Vec<(String, Vec<TokenId>)> {
    let len = cfg.analysis.condition_len;
    corpus
        .passages()
        .filter_map(|p| {
            if p.len() < len {
                warn!("passage `{}` shorter than the {len}-token condition, skipped", p.id);
                None
            } else {
                Some((p.id.clone(), p.tokens[..len].to_vec()))
            }
        })
        .collect()
}

fn stage_decode(cfg: &RunConfig, decode: &DecodeConfig, stage: &str) -> DecodeConfig {
    DecodeConfig {
        seed: decode.seed ^ stage_seed(cfg.seed, &format!("{stage}/{}", decode.strategy.label())),
        ..*decode
    }
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = require_toy(cfg, "generate")?;
    let corpus = real_corpus(cfg, Some(&model))?;
    let conditions = generation_conditions(cfg, &corpus);
    if conditions.is_empty() {
        return Err(Error::usage("no passage is long enough to provide a condition"));
    }
    let prompts: Vec<Vec<TokenId>> = conditions.iter().map(|(_, c)| c.clone()).collect();
    let mut summary = Vec::new();
    for decode in &cfg.decode {
        let label = decode.strategy.label();
        let dcfg = stage_decode(cfg, decode, "generate");
        let generated = generate_batch(&model, &format!("{label}-"), &prompts, &dcfg)?;
        let rate = loop_rate(&generated)?;
        let mut gen_corpus = Corpus::new(model.spec().vocab_size);
        gen_corpus.vocab = Some(model.vocabulary());
        gen_corpus.metadata.insert("strategy".into(), json!(dcfg));
        gen_corpus.metadata.insert("seed".into(), json!(cfg.seed));
        gen_corpus.metadata.insert(
            "condition_source".into(),
            json!(conditions.iter().map(|(id, _)| id).collect::<Vec<_>>()),
        );
        for mut p in generated {
            p.text = Some(model.detokenize(&p.tokens));
            let states = model.hidden_states(&p.id, &p.tokens)?;
            gen_corpus.push(p, Some(states));
        }
        write_corpus(&gen_corpus, &out.join(&label))?;
        info!("{label}: {} passages, loop rate {rate:.3}", prompts.len());
        summary.push(json!({"strategy": label, "passages": prompts.len(), "loop_rate": rate}));
    }
    write_json_file(
        &out.join("summary.json"),
        &json!({"seed": cfg.seed, "corpora": summary}),
    )
}

/// Recorded in neighborhood summaries.
const SUPPORT_STEPS: &str = "every support time step within the time window, conditioned prefix included";

fn radius_tag(r: f64) -> String {
    format!("{r}").replace('.', "p")
}

fn write_curve(path: &Path, curve: &DeviationCurve, arm: &str, mode: &str, seed: u64) -> Result<()> {
    write_csv_with_seed(path, seed, |buf| curve.write_csv(buf, arm, mode))
}

fn neighborhood_toy(cfg: &RunConfig, model: &SelfReinforcingLM, out: &Path) -> Result<()> {
    let corpus = real_corpus(cfg, Some(model))?;
    let passages: Vec<Passage> = corpus.passages().cloned().collect();
    let mut summary = Vec::new();
    for &mode in &cfg.analysis.modes {
        for &layer in &cfg.analysis.layers {
            for &radius in &cfg.analysis.radii {
                let mut pc = ProtocolConfig::new(radius, cfg.decode.clone());
                pc.layer = layer;
                pc.time_window = cfg.analysis.time_window;
                pc.condition_len = cfg.analysis.condition_len;
                pc.seed = stage_seed(cfg.seed, "neighborhood");
                let report = compare_protocol(&passages, model, mode, &pc)?;
                let dir = out
                    .join(mode.name())
                    .join(format!("layer{layer}_r{}", radius_tag(radius)));
                ensure_dir(&dir)?;
                for arm in &report.arms {
                    write_curve(&dir.join(format!("{}.csv", arm.name)), &arm.absolute, &arm.name, mode.name(), cfg.seed)?;
                    if let Some(c) = &arm.relative {
                        write_curve(&dir.join(format!("{}.relative.csv", arm.name)), c, &arm.name, mode.name(), cfg.seed)?;
                    }
                    if let Some(c) = &arm.difference {
                        write_curve(&dir.join(format!("{}.difference.csv", arm.name)), c, &arm.name, mode.name(), cfg.seed)?;
                    }
                }
                write_json_file(&dir.join("report.json"), &report)?;
                summary.push(json!({
                    "mode": mode.name(),
                    "layer": layer,
                    "radius": radius,
                    "arms": report.arms.iter().map(|a| json!({
                        "name": a.name,
                        "loop_rate": a.loop_rate,
                        "mean_count": mean_of(&a.absolute),
                    })).collect::<Vec<_>>(),
                }));
            }
        }
    }
    write_json_file(&out.join("summary.json"), &json!({"seed": cfg.seed, "support_steps": SUPPORT_STEPS, "runs": summary}))
}

fn mean_of(curve: &DeviationCurve) -> Option<f64> {
    let n: usize = curve.points.iter().map(|p| p.n).sum();
    (n > 0).then(|| curve.points.iter().map(|p| p.mean * p.n as f64).sum::<f64>() / n as f64)
}

fn traces_of(corpus: &Corpus, what: &str) -> Result<Vec<StateTrace>> {
    corpus
        .entries
        .iter()
        .map(|e| {
            e.states.clone().ok_or_else(|| Error::Load {
                passage_id: e.passage.id.clone(),
                reason: format!("{what} entry has no hidden states"),
            })
        })
        .collect()
}

/// Support from the corpus (its train split when labelled), evaluation from
/// its held-out passages and every configured evaluation set.
fn neighborhood_traces(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = load_corpus(cfg.corpus_path()?)?;
    let has_train = corpus.passages().any(|p| p.split == Split::Train);
    let (support, held_out): (Vec<_>, Vec<_>) = corpus
        .entries
        .iter()
        .cloned()
        .partition(|e| !has_train || e.passage.split == Split::Train);
    let support_corpus = Corpus { entries: support, ..Corpus::new(corpus.vocab_size) };
    let support_traces = traces_of(&support_corpus, "support")?;

    let mut sets: Vec<(String, Corpus, Option<Corpus>)> = Vec::new();
    if !held_out.is_empty() {
        sets.push(("real".into(), Corpus { entries: held_out, ..Corpus::new(corpus.vocab_size) }, None));
    }
    for e in &cfg.analysis.evaluate {
        let paired = e.paired_real.as_deref().map(load_corpus).transpose()?;
        sets.push((e.name.clone(), load_corpus(&e.manifest)?, paired));
    }
    if sets.is_empty() {
        return Err(Error::usage("nothing to evaluate: no held-out passages and no evaluation sets"));
    }
    let longest = sets
        .iter()
        .flat_map(|(_, c, _)| c.passages().map(Passage::len))
        .max()
        .unwrap_or(1);
    let steps = evenly_spaced_steps(0, longest.saturating_sub(1), ABSOLUTE_STEP_COUNT);
    let mode = "traces";
    let mut summary = Vec::new();
    for &layer in &cfg.analysis.layers {
        let index = SupportIndex::build(&support_traces, layer)?;
        for &radius in &cfg.analysis.radii {
            let params = CountParams { layer, radius, time_window: cfg.analysis.time_window };
            let dir = out.join(mode).join(format!("layer{layer}_r{}", radius_tag(radius)));
            ensure_dir(&dir)?;
            for (name, set, paired) in &sets {
                let traces = traces_of(set, name)?;
                let refs: Vec<&StateTrace> = traces.iter().collect();
                let absolute = absolute_samples(&index, &refs, &steps, &params)?.summarize(Axis::AbsoluteTime);
                write_curve(&dir.join(format!("{name}.csv")), &absolute, name, mode, cfg.seed)?;
                let mut rate = None;
                if set.passages().any(|p| p.origin == Origin::Generated) {
                    let loops: Vec<Option<LoopSpec>> = set.passages().map(detect_in_continuation).collect();
                    let loop_refs: Vec<Option<&LoopSpec>> = loops.iter().map(Option::as_ref).collect();
                    rate = Some(loop_rate(set.passages())?);
                    let rel = relative_samples(&index, &refs, &loop_refs, &RELATIVE_OFFSETS, &params)?
                        .summarize(Axis::RelativeToLoopStart);
                    write_curve(&dir.join(format!("{name}.relative.csv")), &rel, name, mode, cfg.seed)?;
                    if let Some(real) = paired {
                        let real_traces = traces_of(real, "paired real")?;
                        let real_refs: Vec<&StateTrace> = real_traces.iter().collect();
                        let diff = difference_samples(&index, &refs, &real_refs, &loop_refs, &RELATIVE_OFFSETS, &params)?
                            .summarize(Axis::RelativeToLoopStart);
                        write_curve(&dir.join(format!("{name}.difference.csv")), &diff, name, mode, cfg.seed)?;
                    }
                }
                summary.push(json!({
                    "layer": layer,
                    "radius": radius,
                    "name": name,
                    "loop_rate": rate,
                    "mean_count": mean_of(&absolute),
                }));
            }
        }
    }
    write_json_file(&out.join("summary.json"), &json!({"seed": cfg.seed, "support_steps": SUPPORT_STEPS, "runs": summary}))
}

pub fn cmd_neighborhood(cfg: &RunConfig, out: &Path) -> Result<()> {
    match toy_model(cfg)? {
        Some(model) if cfg.analysis.evaluate.is_empty() => neighborhood_toy(cfg, &model, out),
        _ => neighborhood_traces(cfg, out),
    }
}

pub fn cmd_inducingness(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = require_toy(cfg, "inducingness")?;
    let corpus = real_corpus(cfg, Some(&model))?;
    let vocab = model.vocabulary();
    let boundary = SentenceBoundary::default();
    let text_of = |t: TokenId| vocab.get(t as usize).map(String::as_str);
    let is_terminal = |t: TokenId| text_of(t).is_some_and(|s| boundary.is_terminal(s));
    let detok = |t: &[TokenId]| model.detokenize(t);

    let real: Vec<Passage> = corpus.passages().cloned().collect();
    let greedy = cfg
        .decode
        .iter()
        .find(|d| d.strategy == Strategy::Greedy)
        .copied()
        .unwrap_or_else(|| DecodeConfig::greedy(DEFAULT_MAX_NEW_TOKENS));
    let prompts: Vec<Vec<TokenId>> = generation_conditions(cfg, &corpus)
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    let generated = generate_batch(&model, "greedy-", &prompts, &stage_decode(cfg, &greedy, "inducingness"))?;
    let looping = ConditionSet {
        class: crate::textmetrics::ConditionClass::LoopingSequence,
        conditions: looping_conditions(&generated, text_of, &boundary),
    };
    info!("{} of {} greedy continuations loop", looping.conditions.len(), generated.len());
    let (first, last) = sentence_conditions(&real, is_terminal);
    let sets = [looping, first, last];

    let simple = inducingness_simple(&sets, &model, &greedy, detok)?;
    let context = pick_context(&real, is_terminal, stage_seed(cfg.seed, "inducingness"))?;
    let repeated = inducingness_repeated(&context, &sets, &cfg.analysis.repeats, &model, &greedy, detok)?;

    write_csv_with_seed(&out.join("inducingness_simple.csv"), cfg.seed, |b| write_reports_csv(b, &simple))?;
    write_csv_with_seed(&out.join("inducingness_repeated.csv"), cfg.seed, |b| write_reports_csv(b, &repeated))?;
    write_json_file(
        &out.join("summary.json"),
        &json!({
            "seed": cfg.seed,
            "headline": "f1",
            "rouge_note": "the reported ROUGE-L component is unstated upstream; precision, recall and f1 are all kept",
            "simple": simple,
            "repeated": repeated,
        }),
    )
}

pub fn cmd_likelihood(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = toy_model(cfg)?;
    let corpus = real_corpus(cfg, model.as_ref())?;
    let passages: Vec<Passage> = corpus.passages().cloned().collect();
    let a = &cfg.analysis;
    let seed = stage_seed(cfg.seed, "likelihood");

    // Mask positions for external scorers.
    let masks_path = out.join("masks.jsonl");
    let mut w = create(&masks_path)?;
    let mut ordered: Vec<&Passage> = passages.iter().filter(|p| !p.is_empty()).collect();
    ordered.sort_by(|x, y| x.id.cmp(&y.id));
    for p in ordered {
        for (rep, positions) in mask_schedule(&p.id, p.len(), a.mask_fraction, a.repetitions, seed)
            .into_iter()
            .enumerate()
        {
            let line = json!({"passage_id": p.id, "repetition": rep, "positions": positions});
            writeln!(w, "{line}").map_err(|e| Error::io(&masks_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&masks_path, e))?;

    let scorer: Box<dyn MaskedScorer> = match &a.scorer {
        ScorerSpec::Uniform => Box::new(UniformScorer { vocab_size: corpus.vocab_size }),
        ScorerSpec::File { path } => Box::new(ScoreFileScorer::load(path)?),
    };
    let curve = masked_likelihood_curve(&passages, scorer.as_ref(), a.mask_fraction, a.repetitions, seed)?;
    let label = cfg
        .corpus
        .as_ref()
        .and_then(|p| p.parent())
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "toy".into());
    write_csv_with_seed(&out.join("likelihood.csv"), cfg.seed, |b| curve.write_csv(b, &label))?;
    write_json_file(
        &out.join("summary.json"),
        &json!({
            "seed": cfg.seed,
            "mask_seed": seed,
            "passages": passages.len(),
            "steps": curve.points.len(),
        }),
    )
}

pub fn cmd_pca(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = toy_model(cfg)?;
    let corpus = real_corpus(cfg, model.as_ref())?;
    let layer = cfg.analysis.layers.first().copied().unwrap_or(0);
    let mut labels: Vec<(String, usize)> = Vec::new();
    let mut states: Vec<Vec<f32>> = Vec::new();
    for e in &corpus.entries {
        let trace = match (&e.states, &model) {
            (Some(s), _) => s.clone(),
            (None, Some(m)) => m.encode(&e.passage.id, &e.passage.tokens)?,
            (None, None) => {
                return Err(Error::Load {
                    passage_id: e.passage.id.clone(),
                    reason: "entry has no hidden states".into(),
                })
            }
        };
        if layer >= trace.num_layers() {
            return Err(Error::usage(format!("trace `{}` has no layer {layer}", trace.passage_id)));
        }
        for (t, h) in trace.layer_states(layer) {
            labels.push((trace.passage_id.clone(), t));
            states.push(h.to_vec());
        }
    }
    if let Some(max) = cfg.analysis.max_points {
        if max > 0 && states.len() > max {
            let keep: Vec<usize> = (0..max).map(|i| i * states.len() / max).collect();
            labels = keep.iter().map(|&i| labels[i].clone()).collect();
            states = keep.iter().map(|&i| std::mem::take(&mut states[i])).collect();
        }
    }
    let proj = pca_project(&states, cfg.analysis.components)?;
    let k = proj.directions.len();
    write_csv_with_seed(&out.join("pca.csv"), cfg.seed, |b| {
        write!(b, "passage_id,t")?;
        for c in 0..k {
            write!(b, ",pc{}", c + 1)?;
        }
        writeln!(b)?;
        for ((id, t), point) in labels.iter().zip(&proj.points) {
            write!(b, "{id},{t}")?;
            for v in point {
                write!(b, ",{v}")?;
            }
            writeln!(b)?;
        }
        Ok(())
    })?;
    write_json_file(
        &out.join("summary.json"),
        &json!({
            "seed": cfg.seed,
            "layer": layer,
            "points": states.len(),
            "explained_variance": proj.explained_variance,
            "explained_variance_ratio": proj.explained_variance_ratio,
        }),
    )
}
