//! Command-line wiring: corpus generation, the training phases, evaluation,
//! the α-sweep, and a streaming demo, all reading one resolved config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};

use crate::bpe::{bpe_decode, bpe_train, load_vocab, save_vocab, BpeVocab, BLANK_ID};
use crate::cascade::{
    load_checkpoint, save_checkpoint, stream_push, CascadeParams, StreamingSession,
};
use crate::config::{RunConfig, RunDirs};
use crate::corpus::{
    default_grammar, default_lexicon, gen_corpus, load_manifest, load_utterance_features,
    Lexicon, SlotGrammar, SpeakerSets, Split, Utterance,
};
use crate::decode::greedy_ctc_decode;
use crate::error::{Result, SluError};
use crate::eval::{
    alpha_sweep, evaluate, format_alpha_table, train_nlu, wer, write_alpha_csv, write_report_csv,
    NluParams,
};
use crate::losses::MtlWeight;
use crate::tensor::argmax;
use crate::training::{
    prepare_utterances, train_intent_stepwise, train_mtl, train_phoneme, train_word_ctc,
    write_history_csv, PreparedUtt, TrainOutcome,
};

#[derive(Debug, Parser)]
#[command(name = "slu-cascade", about = "Streaming three-module SLU cascade")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config file; omitted fields fall back to defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Run directory (corpus/, checkpoints/, reports/).
    #[arg(long, global = true, default_value = "runs/default")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainPhase {
    Phoneme,
    WordPretrain,
    WordFinetune,
    IntentStepwise,
    Mtl,
    Nlu,
}

impl TrainPhase {
    fn name(self) -> &'static str {
        match self {
            TrainPhase::Phoneme => "phoneme",
            TrainPhase::WordPretrain => "word-pretrain",
            TrainPhase::WordFinetune => "word-finetune",
            TrainPhase::IntentStepwise => "intent-stepwise",
            TrainPhase::Mtl => "mtl",
            TrainPhase::Nlu => "nlu",
        }
    }

    fn checkpoint_name(self) -> &'static str {
        match self {
            TrainPhase::Phoneme => "phoneme",
            TrainPhase::WordPretrain => "word_pretrain",
            TrainPhase::WordFinetune => "word_finetune",
            TrainPhase::IntentStepwise => "intent_stepwise",
            TrainPhase::Mtl => "mtl",
            TrainPhase::Nlu => "nlu",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic SLU and pre-training corpora plus the BPE
    /// vocabulary.
    GenCorpus {
        /// Grammar JSON; defaults to the shipped 31-intent grammar.
        #[arg(long)]
        grammar: Option<PathBuf>,
        /// Lexicon JSON; defaults to the shipped lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Run one training phase and write its checkpoint + loss history.
    Train {
        #[arg(value_enum)]
        phase: TrainPhase,
        /// MTL weight α (mtl phase only).
        #[arg(long)]
        alpha: Option<f64>,
        /// Frontend frame subsampling factor.
        #[arg(long)]
        subsample: Option<usize>,
        /// Word-module checkpoint to build on (intent-stepwise and mtl).
        #[arg(long)]
        word_ckpt: Option<PathBuf>,
        /// Where to write the resulting checkpoint.
        #[arg(long)]
        ckpt_out: Option<PathBuf>,
    },
    /// Evaluate WER, pipeline (1-best / N-best) and end-to-end intent
    /// accuracy on a split.
    Eval {
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        nbest: Option<usize>,
        /// Cascade checkpoint; defaults to checkpoints/mtl.ckpt.
        #[arg(long)]
        cascade_ckpt: Option<PathBuf>,
        /// NLU checkpoint; defaults to checkpoints/nlu.ckpt.
        #[arg(long)]
        nlu_ckpt: Option<PathBuf>,
    },
    /// Replay one utterance frame by frame through the streaming decoder.
    Stream {
        /// Utterance id to replay.
        #[arg(long)]
        utterance: String,
        /// Manifest to look it up in; defaults to the SLU manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Cascade checkpoint; defaults to checkpoints/mtl.ckpt.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Pause between frames, for demonstration.
        #[arg(long, default_value_t = 0)]
        frame_interval_ms: u64,
    },
    /// Train one MTL model per α from the same warm start and report WER +
    /// intent accuracy per α.
    SweepAlpha {
        /// Comma-separated α values.
        #[arg(long, default_value = "0.4,0.5,0.6,0.7,0.8")]
        alphas: String,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        nbest: Option<usize>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let dirs = RunDirs::new(&cli.out);
    match cli.command {
        Command::GenCorpus { grammar, lexicon } => {
            finalize_config(&cfg, &dirs)?;
            cmd_gen_corpus(&cfg, &dirs, grammar.as_deref(), lexicon.as_deref())
        }
        Command::Train {
            phase,
            alpha,
            subsample,
            word_ckpt,
            ckpt_out,
        } => {
            if let Some(a) = alpha {
                cfg.training.alpha = a;
            }
            if let Some(s) = subsample {
                cfg.model.subsample = s;
            }
            finalize_config(&cfg, &dirs)?;
            cmd_train(&cfg, &dirs, phase, word_ckpt.as_deref(), ckpt_out.as_deref())
        }
        Command::Eval {
            split,
            beam,
            nbest,
            cascade_ckpt,
            nlu_ckpt,
        } => {
            if let Some(b) = beam {
                cfg.eval.beam = b;
            }
            if let Some(n) = nbest {
                cfg.eval.nbest = n;
            }
            finalize_config(&cfg, &dirs)?;
            let split = Split::from_str(&split)?;
            cmd_eval(
                &cfg,
                &dirs,
                split,
                cascade_ckpt.as_deref(),
                nlu_ckpt.as_deref(),
            )
            .map(|_| ())
        }
        Command::Stream {
            utterance,
            manifest,
            ckpt,
            frame_interval_ms,
        } => {
            finalize_config(&cfg, &dirs)?;
            cmd_stream(
                &cfg,
                &dirs,
                &utterance,
                manifest.as_deref(),
                ckpt.as_deref(),
                frame_interval_ms,
            )
        }
        Command::SweepAlpha {
            alphas,
            beam,
            nbest,
        } => {
            if let Some(b) = beam {
                cfg.eval.beam = b;
            }
            if let Some(n) = nbest {
                cfg.eval.nbest = n;
            }
            finalize_config(&cfg, &dirs)?;
            let alphas = parse_alphas(&alphas)?;
            cmd_sweep_alpha(&cfg, &dirs, &alphas)
        }
    }
}

fn finalize_config(cfg: &RunConfig, dirs: &RunDirs) -> Result<()> {
    cfg.validate()?;
    dirs.create_all()?;
    cfg.save(&dirs.config_path())
}

fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| SluError::Config(format!("bad alpha value {:?}", part)))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(SluError::Config(format!("alpha {} outside [0,1]", v)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(SluError::Config("empty alpha list".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

pub fn cmd_gen_corpus(
    cfg: &RunConfig,
    dirs: &RunDirs,
    grammar_path: Option<&Path>,
    lexicon_path: Option<&Path>,
) -> Result<()> {
    let grammar = match grammar_path {
        Some(p) => SlotGrammar::load(p)?,
        None => default_grammar(),
    };
    let lexicon = match lexicon_path {
        Some(p) => Lexicon::load(p)?,
        None => default_lexicon(),
    };
    let speakers = SpeakerSets::generate(
        "slu",
        cfg.corpus.slu_speakers.0,
        cfg.corpus.slu_speakers.1,
        cfg.corpus.slu_speakers.2,
    );
    let corpus = gen_corpus(&grammar, &lexicon, &cfg.corpus, &speakers, cfg.seed, &dirs.corpus)?;

    // BPE vocabulary over pre-training text plus SLU training transcripts
    let mut sentences: Vec<String> = corpus.pretrain.iter().map(|u| u.text.clone()).collect();
    sentences.extend(
        corpus
            .slu
            .iter()
            .filter(|u| u.split == Split::Train)
            .map(|u| u.text.clone()),
    );
    let vocab = bpe_train(&sentences, cfg.bpe_target_size)?;
    save_vocab(&vocab, &dirs.bpe_vocab())?;

    println!("corpus written to {}", dirs.corpus.display());
    println!("intents: {}", grammar.num_intents());
    println!("bpe vocabulary: {} tokens (blank included)", vocab.size());
    println!();
    println!("{:<16} {:>8} {:>10}", "Dataset", "Speakers", "Utterances");
    for (name, utts) in [
        ("SLU train", by_split(&corpus.slu, Split::Train)),
        ("SLU valid", by_split(&corpus.slu, Split::Valid)),
        ("SLU test", by_split(&corpus.slu, Split::Test)),
        ("Pretrain train", by_split(&corpus.pretrain, Split::Train)),
        ("Pretrain valid", by_split(&corpus.pretrain, Split::Valid)),
    ] {
        let speakers: std::collections::BTreeSet<&str> =
            utts.iter().map(|u| u.speaker.as_str()).collect();
        println!("{:<16} {:>8} {:>10}", name, speakers.len(), utts.len());
    }
    Ok(())
}

fn by_split(utts: &[Utterance], split: Split) -> Vec<Utterance> {
    utts.iter().filter(|u| u.split == split).cloned().collect()
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct CorpusOnDisk {
    slu: Vec<Utterance>,
    pretrain: Vec<Utterance>,
    vocab: BpeVocab,
    grammar: SlotGrammar,
    lexicon: Lexicon,
}

fn load_corpus(dirs: &RunDirs) -> Result<CorpusOnDisk> {
    if !dirs.slu_manifest().exists() {
        return Err(SluError::Dependency(
            "corpus not found; run gen-corpus first".into(),
        ));
    }
    Ok(CorpusOnDisk {
        slu: load_manifest(&dirs.slu_manifest())?,
        pretrain: load_manifest(&dirs.pretrain_manifest())?,
        vocab: load_vocab(&dirs.bpe_vocab())?,
        grammar: SlotGrammar::load(&dirs.corpus.join("grammar.json"))?,
        lexicon: Lexicon::load(&dirs.corpus.join("lexicon.json"))?,
    })
}

fn require_checkpoint(path: &Path, needed_phase: &str) -> Result<CascadeParams> {
    if !path.exists() {
        return Err(SluError::Dependency(format!(
            "checkpoint {} not found; run `train {}` first",
            path.display(),
            needed_phase
        )));
    }
    load_checkpoint(path)
}

fn log_outcome(phase: &str, outcome: &TrainOutcome) {
    if let Some(last) = outcome.history.last() {
        println!(
            "{}: {} epochs, train {:.5}, val {:.5}{}",
            phase,
            outcome.history.len(),
            last.train_loss,
            last.val_loss,
            if outcome.stopped_early {
                " (early stop)"
            } else {
                ""
            }
        );
    }
}

/// Corpus-level greedy-decode WER of a cascade on prepared utterances.
fn greedy_wer(
    params: &CascadeParams,
    vocab: &BpeVocab,
    utts: &[PreparedUtt],
    texts: &BTreeMap<String, String>,
) -> Result<f64> {
    use rayon::prelude::*;
    let stats: Vec<Result<(usize, usize)>> = utts
        .par_iter()
        .map(|u| {
            let out = crate::cascade::cascade_forward(params, &u.features)?;
            let tokens = greedy_ctc_decode(&out.wp_log_probs);
            let hyp = bpe_decode(vocab, &tokens)?;
            let text = texts
                .get(&u.id)
                .ok_or_else(|| SluError::Data(format!("no reference text for {}", u.id)))?;
            let r: Vec<&str> = text.split_whitespace().collect();
            let h: Vec<&str> = hyp.split_whitespace().collect();
            let s = wer(&r, &h);
            Ok((s.edits, s.ref_len))
        })
        .collect();
    let mut edits = 0usize;
    let mut ref_len = 0usize;
    for s in stats {
        let (e, r) = s?;
        edits += e;
        ref_len += r;
    }
    Ok(edits as f64 / ref_len.max(1) as f64)
}

fn texts_of(utts: &[Utterance]) -> BTreeMap<String, String> {
    utts.iter()
        .map(|u| (u.id.clone(), u.text.clone()))
        .collect()
}

pub fn cmd_train(
    cfg: &RunConfig,
    dirs: &RunDirs,
    phase: TrainPhase,
    word_ckpt: Option<&Path>,
    ckpt_out: Option<&Path>,
) -> Result<()> {
    let corpus = load_corpus(dirs)?;
    let ckpt_path = ckpt_out
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| dirs.checkpoint(phase.checkpoint_name()));
    let phase_cfg = cfg.phase(phase.name());
    let subsample = cfg.model.subsample;

    let pre_train = by_split(&corpus.pretrain, Split::Train);
    let pre_valid = by_split(&corpus.pretrain, Split::Valid);
    let slu_train = by_split(&corpus.slu, Split::Train);
    let slu_valid = by_split(&corpus.slu, Split::Valid);

    match phase {
        TrainPhase::Phoneme => {
            let dims = cfg.cascade_dims(
                corpus.lexicon.num_phones(),
                corpus.vocab.size(),
                corpus.grammar.num_intents(),
            );
            let mut params = CascadeParams::init(dims, cfg.seed ^ 0x696e_6974)?;
            let train = prepare_utterances(&dirs.corpus, &pre_train, None, subsample)?;
            let val = prepare_utterances(&dirs.corpus, &pre_valid, None, subsample)?;
            let outcome = train_phoneme(&mut params, &train, &val, &phase_cfg)?;
            save_checkpoint(&params, &ckpt_path)?;
            write_history_csv(&outcome.history, &dirs.report("phoneme_history.csv"))?;
            log_outcome("phoneme", &outcome);
        }
        TrainPhase::WordPretrain => {
            let mut params = require_checkpoint(&dirs.checkpoint("phoneme"), "phoneme")?;
            let train =
                prepare_utterances(&dirs.corpus, &pre_train, Some(&corpus.vocab), subsample)?;
            let val =
                prepare_utterances(&dirs.corpus, &pre_valid, Some(&corpus.vocab), subsample)?;
            let (mut train, mut val) = (train, val);
            let outcome = train_word_ctc(&mut params, &mut train, &mut val, &phase_cfg)?;
            save_checkpoint(&params, &ckpt_path)?;
            write_history_csv(&outcome.history, &dirs.report("word_pretrain_history.csv"))?;
            log_outcome("word-pretrain", &outcome);
        }
        TrainPhase::WordFinetune => {
            let mut params =
                require_checkpoint(&dirs.checkpoint("word_pretrain"), "word-pretrain")?;
            let train =
                prepare_utterances(&dirs.corpus, &slu_train, Some(&corpus.vocab), subsample)?;
            let val =
                prepare_utterances(&dirs.corpus, &slu_valid, Some(&corpus.vocab), subsample)?;
            let texts = texts_of(&slu_valid);
            let wer_before = greedy_wer(&params, &corpus.vocab, &val, &texts)?;
            let (mut train, mut val) = (train, val);
            let outcome = train_word_ctc(&mut params, &mut train, &mut val, &phase_cfg)?;
            let wer_after = greedy_wer(&params, &corpus.vocab, &val, &texts)?;
            save_checkpoint(&params, &ckpt_path)?;
            write_history_csv(&outcome.history, &dirs.report("word_finetune_history.csv"))?;
            std::fs::write(
                dirs.report("word_finetune_wer.csv"),
                format!("stage,wer\nbefore,{:.6}\nafter,{:.6}\n", wer_before, wer_after),
            )?;
            log_outcome("word-finetune", &outcome);
            println!(
                "valid greedy WER: {:.4} before fine-tune, {:.4} after",
                wer_before, wer_after
            );
        }
        TrainPhase::IntentStepwise => {
            let word_path = word_ckpt
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| dirs.checkpoint("word_finetune"));
            let mut params = require_checkpoint(&word_path, "word-finetune")?;
            let mut train = prepare_utterances(&dirs.corpus, &slu_train, None, subsample)?;
            let mut val = prepare_utterances(&dirs.corpus, &slu_valid, None, subsample)?;
            let outcome = train_intent_stepwise(&mut params, &mut train, &mut val, &phase_cfg)?;
            save_checkpoint(&params, &ckpt_path)?;
            write_history_csv(&outcome.history, &dirs.report("intent_stepwise_history.csv"))?;
            log_outcome("intent-stepwise", &outcome);
        }
        TrainPhase::Mtl => {
            let word_path = word_ckpt
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| dirs.checkpoint("word_finetune"));
            let mut params = require_checkpoint(&word_path, "word-finetune")?;
            let train =
                prepare_utterances(&dirs.corpus, &slu_train, Some(&corpus.vocab), subsample)?;
            let val =
                prepare_utterances(&dirs.corpus, &slu_valid, Some(&corpus.vocab), subsample)?;
            let alpha = MtlWeight::new(cfg.training.alpha)?;
            let (mut train, mut val) = (train, val);
            let outcome = train_mtl(&mut params, alpha, &mut train, &mut val, &phase_cfg)?;
            save_checkpoint(&params, &ckpt_path)?;
            write_history_csv(&outcome.history, &dirs.report("mtl_history.csv"))?;
            log_outcome("mtl", &outcome);
        }
        TrainPhase::Nlu => {
            let mut nlu = NluParams::init(
                corpus.vocab.size(),
                cfg.model.nlu_embed_dim,
                cfg.model.nlu_hidden,
                cfg.model.nlu_layers,
                corpus.grammar.num_intents(),
                cfg.seed ^ 0x6e6c_75,
            );
            let train =
                prepare_utterances(&dirs.corpus, &slu_train, Some(&corpus.vocab), subsample)?;
            let val =
                prepare_utterances(&dirs.corpus, &slu_valid, Some(&corpus.vocab), subsample)?;
            let outcome = train_nlu(&mut nlu, &train, &val, &phase_cfg)?;
            nlu.save(&ckpt_path)?;
            write_history_csv(&outcome.history, &dirs.report("nlu_history.csv"))?;
            log_outcome("nlu", &outcome);
        }
    }
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn cmd_eval(
    cfg: &RunConfig,
    dirs: &RunDirs,
    split: Split,
    cascade_ckpt: Option<&Path>,
    nlu_ckpt: Option<&Path>,
) -> Result<crate::eval::EvalSummary> {
    let corpus = load_corpus(dirs)?;
    let cascade_path = cascade_ckpt
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| dirs.checkpoint("mtl"));
    let params = require_checkpoint(&cascade_path, "mtl")?;
    let nlu_path = nlu_ckpt
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| dirs.checkpoint("nlu"));
    if !nlu_path.exists() {
        return Err(SluError::Dependency(format!(
            "checkpoint {} not found; run `train nlu` first",
            nlu_path.display()
        )));
    }
    let nlu = NluParams::load(&nlu_path)?;
    let utts = by_split(&corpus.slu, split);
    let prepared = prepare_utterances(&dirs.corpus, &utts, None, cfg.model.subsample)?;
    let texts = texts_of(&utts);
    let report = evaluate(
        &params,
        &nlu,
        &corpus.vocab,
        &prepared,
        &texts,
        cfg.eval.beam,
        cfg.eval.nbest,
    )?;
    let report_path = dirs.report(&format!("eval_{}.csv", split.as_str()));
    write_report_csv(&report, &report_path)?;
    let s = &report.summary;
    println!(
        "{:<8} {:>9} {:>12} {:>12} {:>8}",
        "split", "ASR WER", "Pipe.(1best)", "Pipe.(Nbest)", "E2E"
    );
    println!(
        "{:<8} {:>8.2}% {:>11.1}% {:>11.1}% {:>7.1}%",
        split.as_str(),
        100.0 * s.wer,
        100.0 * s.pipeline_1best_accuracy,
        100.0 * s.pipeline_nbest_accuracy,
        100.0 * s.e2e_accuracy
    );
    println!("report written to {}", report_path.display());
    Ok(report.summary.clone())
}

// ---------------------------------------------------------------------------
// stream
// ---------------------------------------------------------------------------

pub fn cmd_stream(
    cfg: &RunConfig,
    dirs: &RunDirs,
    utterance_id: &str,
    manifest: Option<&Path>,
    ckpt: Option<&Path>,
    frame_interval_ms: u64,
) -> Result<()> {
    let manifest_path = manifest
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| dirs.slu_manifest());
    if !manifest_path.exists() {
        return Err(SluError::Dependency(
            "corpus not found; run gen-corpus first".into(),
        ));
    }
    let utts = load_manifest(&manifest_path)?;
    let utt = utts
        .iter()
        .find(|u| u.id == utterance_id)
        .ok_or_else(|| {
            SluError::Lookup(format!(
                "utterance {:?} not in {}",
                utterance_id,
                manifest_path.display()
            ))
        })?;
    let ckpt_path = ckpt
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| dirs.checkpoint("mtl"));
    let params = require_checkpoint(&ckpt_path, "mtl")?;
    let vocab = load_vocab(&dirs.bpe_vocab())?;
    let lexicon = Lexicon::load(&dirs.corpus.join("lexicon.json"))?;
    let grammar = SlotGrammar::load(&dirs.corpus.join("grammar.json"))?;
    let intents = grammar.intents();
    let corpus_dir = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let features = load_utterance_features(&corpus_dir, utt)?;

    let mut session = StreamingSession::new(&params);
    let mut emitted: Vec<usize> = Vec::new();
    let mut prev_wp = BLANK_ID;
    let mut final_intent: Option<usize> = None;
    let _ = cfg;
    for t in 0..features.dims()[0] {
        let out = stream_push(&mut session, &params, features.row(t))?;
        let top_phone = argmax(&out.phone_posterior);
        let phone_name = lexicon.phone_name(top_phone).unwrap_or("?");
        let mut line = format!("frame={} phone={}", out.frame_index, phone_name);
        if let Some(wp_row) = &out.wp_log_probs {
            let k = argmax(wp_row);
            if k != prev_wp && k != BLANK_ID {
                emitted.push(k);
            }
            prev_wp = k;
            let text = bpe_decode(&vocab, &emitted)?;
            line.push_str(&format!(" pieces={:?}", text));
        }
        if let Some(il) = &out.intent_logits {
            let best = argmax(il);
            final_intent = Some(best);
            let (a, o, l) = &intents[best];
            line.push_str(&format!(" intent={}|{}|{}", a, o, l));
        }
        println!("{}", line);
        if frame_interval_ms > 0 {
            std::thread::sleep(std::time::Duration::from_millis(frame_interval_ms));
        }
    }
    match final_intent {
        Some(id) => {
            let (a, o, l) = &intents[id];
            println!(
                "final intent={} action={} object={} location={} frames={}",
                id,
                a,
                o,
                l,
                features.dims()[0]
            );
        }
        None => println!("no intent emitted (subsampling consumed every frame)"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep-alpha
// ---------------------------------------------------------------------------

pub fn cmd_sweep_alpha(cfg: &RunConfig, dirs: &RunDirs, alphas: &[f64]) -> Result<()> {
    let corpus = load_corpus(dirs)?;
    let warm = require_checkpoint(&dirs.checkpoint("word_finetune"), "word-finetune")?;
    let nlu_path = dirs.checkpoint("nlu");
    if !nlu_path.exists() {
        return Err(SluError::Dependency(format!(
            "checkpoint {} not found; run `train nlu` first",
            nlu_path.display()
        )));
    }
    let nlu = NluParams::load(&nlu_path)?;
    let subsample = cfg.model.subsample;
    let slu_train = by_split(&corpus.slu, Split::Train);
    let slu_valid = by_split(&corpus.slu, Split::Valid);
    let slu_test = by_split(&corpus.slu, Split::Test);
    let mut train = prepare_utterances(&dirs.corpus, &slu_train, Some(&corpus.vocab), subsample)?;
    let mut val = prepare_utterances(&dirs.corpus, &slu_valid, Some(&corpus.vocab), subsample)?;
    let eval_utts = prepare_utterances(&dirs.corpus, &slu_test, None, subsample)?;
    let texts = texts_of(&slu_test);
    let rows = alpha_sweep(
        &warm,
        &nlu,
        &corpus.vocab,
        alphas,
        &mut train,
        &mut val,
        &eval_utts,
        &texts,
        &cfg.phase("mtl"),
        cfg.eval.beam,
        cfg.eval.nbest,
    )?;
    write_alpha_csv(&rows, &dirs.report("alpha_sweep.csv"))?;
    print!("{}", format_alpha_table(&rows));
    println!("report written to {}", dirs.report("alpha_sweep.csv").display());
    Ok(())
}
