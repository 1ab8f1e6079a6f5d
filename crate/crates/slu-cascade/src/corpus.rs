//! Synthetic SLU corpus generation: a slot grammar expands into labeled
//! command sentences, a pronunciation lexicon maps words to phone strings,
//! and a feature synthesizer turns phone strings into Gaussian acoustic
//! frames with per-frame alignments. A larger intent-free corpus over an
//! enlarged word list plays the out-of-domain pre-training role.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SluError};
use crate::tensor::Tensor;

pub const NO_LOCATION: &str = "none";

// ---------------------------------------------------------------------------
// Grammar
// ---------------------------------------------------------------------------

/// Sentence pattern tied to one action. `{object}` and (when
/// `with_location`) `{location}` are substituted at expansion time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Template {
    pub action: String,
    pub with_location: bool,
    pub text: String,
}

/// Slot grammar: slot value inventories, the set of valid
/// (action, object, location) triples, and sentence templates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SlotGrammar {
    pub actions: Vec<String>,
    pub objects: Vec<String>,
    pub locations: Vec<String>,
    pub validity: Vec<(String, String, String)>,
    pub templates: Vec<Template>,
}

/// One slot triple with its dense intent id (index in the canonical sorted
/// list of valid triples).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct IntentLabel {
    pub action: String,
    pub object: String,
    pub location: String,
    pub id: usize,
}

impl SlotGrammar {
    /// Valid triples in canonical (sorted) order; index == intent id.
    pub fn intents(&self) -> Vec<(String, String, String)> {
        let set: BTreeSet<(String, String, String)> = self.validity.iter().cloned().collect();
        set.into_iter().collect()
    }

    pub fn num_intents(&self) -> usize {
        self.intents().len()
    }

    pub fn intent_label(&self, triple: &(String, String, String)) -> Option<IntentLabel> {
        let intents = self.intents();
        intents
            .iter()
            .position(|t| t == triple)
            .map(|id| IntentLabel {
                action: triple.0.clone(),
                object: triple.1.clone(),
                location: triple.2.clone(),
                id,
            })
    }

    fn compatible_templates(&self, action: &str, with_location: bool) -> Vec<&Template> {
        self.templates
            .iter()
            .filter(|t| t.action == action && t.with_location == with_location)
            .collect()
    }

    fn expand_template(tpl: &Template, object: &str, location: &str) -> String {
        tpl.text
            .replace("{object}", object)
            .replace("{location}", location)
    }

    /// Every sentence the grammar can produce (used to keep the pre-training
    /// corpus disjoint from SLU text).
    pub fn all_sentences(&self) -> HashSet<String> {
        let mut out = HashSet::new();
        for triple in self.intents() {
            let with_loc = triple.2 != NO_LOCATION;
            for tpl in self.compatible_templates(&triple.0, with_loc) {
                out.insert(Self::expand_template(tpl, &triple.1, &triple.2));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| SluError::Format(format!("grammar serialize: {}", e)))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SluError::Config(format!("grammar parse: {}", e)))
    }
}

/// Expand the grammar: every valid triple appears exactly `per_intent`
/// times, with templates drawn uniformly among compatible ones.
pub fn grammar_expand(
    grammar: &SlotGrammar,
    per_intent: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(String, IntentLabel)>> {
    if grammar.validity.is_empty() {
        return Err(SluError::Contract("grammar has no valid triples".into()));
    }
    let mut out = Vec::with_capacity(grammar.num_intents() * per_intent);
    for triple in grammar.intents() {
        let with_loc = triple.2 != NO_LOCATION;
        let templates = grammar.compatible_templates(&triple.0, with_loc);
        if templates.is_empty() {
            return Err(SluError::Generation(format!(
                "no template for triple ({}, {}, {})",
                triple.0, triple.1, triple.2
            )));
        }
        let label = grammar.intent_label(&triple).expect("triple from intents()");
        for _ in 0..per_intent {
            let tpl = templates[rng.gen_range(0..templates.len())];
            let text = SlotGrammar::expand_template(tpl, &triple.1, &triple.2);
            out.push((text, label.clone()));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Lexicon
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconFile {
    phones: Vec<String>,
    entries: Vec<(String, Vec<Vec<String>>)>,
}

/// Pronunciation lexicon over a fixed phone inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    phones: Vec<String>,
    entries: Vec<(String, Vec<Vec<usize>>)>,
}

impl Lexicon {
    pub fn new(phones: Vec<String>, entries: Vec<(String, Vec<Vec<String>>)>) -> Result<Self> {
        let index = |p: &str| phones.iter().position(|q| q == p);
        let mut resolved = Vec::with_capacity(entries.len());
        for (word, prons) in entries {
            if prons.is_empty() || prons.iter().any(|p| p.is_empty()) {
                return Err(SluError::Config(format!(
                    "word {:?} needs at least one non-empty pronunciation",
                    word
                )));
            }
            let mut ids = Vec::with_capacity(prons.len());
            for pron in prons {
                let mut seq = Vec::with_capacity(pron.len());
                for p in &pron {
                    match index(p) {
                        Some(i) => seq.push(i),
                        None => {
                            return Err(SluError::Config(format!(
                                "phone {:?} of word {:?} not in inventory",
                                p, word
                            )))
                        }
                    }
                }
                if seq.windows(2).any(|w| w[0] == w[1]) {
                    return Err(SluError::Config(format!(
                        "pronunciation of {:?} repeats a phone; alignments must have contiguous runs",
                        word
                    )));
                }
                ids.push(seq);
            }
            resolved.push((word, ids));
        }
        resolved.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Lexicon {
            phones,
            entries: resolved,
        })
    }

    pub fn num_phones(&self) -> usize {
        self.phones.len()
    }

    pub fn phone_name(&self, id: usize) -> Option<&str> {
        self.phones.get(id).map(|s| s.as_str())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(w, _)| w.as_str())
    }

    pub fn pronunciation(&self, word: &str) -> Option<&[usize]> {
        self.entries
            .binary_search_by(|(w, _)| w.as_str().cmp(word))
            .ok()
            .map(|i| self.entries[i].1[0].as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = LexiconFile {
            phones: self.phones.clone(),
            entries: self
                .entries
                .iter()
                .map(|(w, prons)| {
                    (
                        w.clone(),
                        prons
                            .iter()
                            .map(|p| p.iter().map(|&i| self.phones[i].clone()).collect())
                            .collect(),
                    )
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| SluError::Format(format!("lexicon serialize: {}", e)))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: LexiconFile = serde_json::from_str(&text)
            .map_err(|e| SluError::Config(format!("lexicon parse: {}", e)))?;
        Lexicon::new(file.phones, file.entries)
    }
}

/// Concatenation of per-word first pronunciations.
pub fn phonemize(lexicon: &Lexicon, text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        match lexicon.pronunciation(word) {
            Some(p) => out.extend_from_slice(p),
            None => return Err(SluError::LexiconMiss(word.to_string())),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Feature synthesis
// ---------------------------------------------------------------------------

/// Per-utterance synthesis parameters. `speaker_offset` is the offset vector
/// of the utterance's speaker (empty slice = no offset).
#[derive(Debug, Clone)]
pub struct SynthCfg<'a> {
    pub min_dur: usize,
    pub max_dur: usize,
    pub noise_sigma: f64,
    pub speaker_offset: &'a [f64],
}

/// Phone prototype vectors: unit Gaussians rejection-sampled to pairwise
/// Euclidean distance ≥ `min_sep`.
pub fn phone_prototypes(n_phones: usize, dim: usize, min_sep: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(n_phones);
    while protos.len() < n_phones {
        let cand: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
        let ok = protos.iter().all(|p| {
            let d2: f64 = p
                .iter()
                .zip(&cand)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() >= min_sep
        });
        if ok {
            protos.push(cand);
        }
    }
    protos
}

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Render a phone string into acoustic frames. Each phone emits a uniform
/// random duration in `[min_dur, max_dur]` of frames equal to its prototype
/// plus speaker offset plus Gaussian noise; the alignment records the phone
/// id of every frame.
pub fn synth_features(
    phones: &[usize],
    prototypes: &[Vec<f64>],
    cfg: &SynthCfg,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<usize>)> {
    if cfg.min_dur < 1 || cfg.max_dur < cfg.min_dur {
        return Err(SluError::Contract(format!(
            "bad duration range [{}, {}]",
            cfg.min_dur, cfg.max_dur
        )));
    }
    if phones.is_empty() {
        return Err(SluError::Contract("cannot synthesize zero phones".into()));
    }
    let dim = prototypes.first().map(|p| p.len()).unwrap_or(0);
    let mut frames: Vec<f64> = Vec::new();
    let mut alignment: Vec<usize> = Vec::new();
    for &phone in phones {
        let proto = prototypes.get(phone).ok_or_else(|| {
            SluError::Contract(format!("phone id {} has no prototype", phone))
        })?;
        let dur = rng.gen_range(cfg.min_dur..=cfg.max_dur);
        for _ in 0..dur {
            for (d, &pv) in proto.iter().enumerate() {
                let spk = cfg.speaker_offset.get(d).copied().unwrap_or(0.0);
                let noise = if cfg.noise_sigma > 0.0 {
                    cfg.noise_sigma * gaussian(rng)
                } else {
                    0.0
                };
                frames.push(pv + spk + noise);
            }
            alignment.push(phone);
        }
    }
    let t_len = alignment.len();
    Ok((Tensor::new(vec![t_len, dim], frames)?, alignment))
}

// ---------------------------------------------------------------------------
// Utterances, manifests, feature files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = SluError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(SluError::Config(format!("unknown split {:?}", other))),
        }
    }
}

/// One manifest record. `feature_file` is relative to the manifest's
/// directory; `phones` is the per-frame alignment (length == `frames`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub split: Split,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent: Option<IntentLabel>,
    pub feature_file: String,
    pub frames: usize,
    pub dim: usize,
    pub phones: Vec<usize>,
}

pub fn save_manifest(utts: &[Utterance], path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for u in utts {
        let line = serde_json::to_string(u)
            .map_err(|e| SluError::Format(format!("manifest serialize: {}", e)))?;
        writeln!(w, "{}", line)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let u: Utterance = serde_json::from_str(line).map_err(|e| {
            SluError::Format(format!("manifest line {}: {}", i + 1, e))
        })?;
        out.push(u);
    }
    Ok(out)
}

const FEAT_MAGIC: &[u8; 4] = b"FEAT";
const FEAT_VERSION: u32 = 1;

/// Binary feature file: magic `FEAT`, u32 version=1, u32 T, u32 D
/// (little-endian), then T·D 32-bit floats row-major.
pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    if features.rank() != 2 {
        return Err(SluError::Contract(format!(
            "feature tensor must be [T×D], got {:?}",
            features.dims()
        )));
    }
    let (t_len, dim) = (features.dims()[0], features.dims()[1]);
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(FEAT_MAGIC)?;
    w.write_all(&FEAT_VERSION.to_le_bytes())?;
    w.write_all(&(t_len as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for &v in features.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[0..4] != FEAT_MAGIC {
        return Err(SluError::Format(format!(
            "{} is not a feature file",
            path.display()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u32_at(4);
    if version != FEAT_VERSION {
        return Err(SluError::Format(format!(
            "feature file version {} unsupported",
            version
        )));
    }
    let t_len = u32_at(8) as usize;
    let dim = u32_at(12) as usize;
    let need = 16 + 4 * t_len * dim;
    if bytes.len() != need {
        return Err(SluError::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("feature file truncated: {} of {} bytes", bytes.len(), need),
        )));
    }
    let mut data = Vec::with_capacity(t_len * dim);
    for i in 0..t_len * dim {
        let o = 16 + 4 * i;
        let v = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        data.push(v as f64);
    }
    Tensor::new(vec![t_len, dim], data)
}

/// Resolve and read an utterance's features relative to its manifest dir.
pub fn load_utterance_features(corpus_dir: &Path, utt: &Utterance) -> Result<Tensor> {
    let feats = read_features(&corpus_dir.join(&utt.feature_file))?;
    if feats.dims() != [utt.frames, utt.dim] {
        return Err(SluError::Data(format!(
            "utterance {}: feature file is {:?}, manifest says [{}, {}]",
            utt.id,
            feats.dims(),
            utt.frames,
            utt.dim
        )));
    }
    Ok(feats)
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

/// Per-split speaker name sets; must be pairwise disjoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeakerSets {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SpeakerSets {
    pub fn generate(prefix: &str, train: usize, valid: usize, test: usize) -> Self {
        let name = |split: &str, i: usize| format!("{}_{}_{:02}", prefix, split, i);
        SpeakerSets {
            train: (0..train).map(|i| name("train", i)).collect(),
            valid: (0..valid).map(|i| name("valid", i)).collect(),
            test: (0..test).map(|i| name("test", i)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in self
            .train
            .iter()
            .chain(self.valid.iter())
            .chain(self.test.iter())
        {
            if !seen.insert(s.as_str()) {
                return Err(SluError::Config(format!(
                    "speaker {:?} appears in more than one split",
                    s
                )));
            }
        }
        if self.train.is_empty() || self.valid.is_empty() || self.test.is_empty() {
            return Err(SluError::Config("every split needs ≥ 1 speaker".into()));
        }
        Ok(())
    }

    fn of(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Everything corpus generation needs besides grammar, lexicon, and seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CorpusConfig {
    pub feature_dim: usize,
    pub min_dur: usize,
    pub max_dur: usize,
    pub noise_sigma: f64,
    pub speaker_offset: f64,
    pub min_phone_sep: f64,
    pub slu_speakers: (usize, usize, usize),
    pub slu_per_intent: (usize, usize, usize),
    pub pretrain_speakers: (usize, usize),
    pub pretrain_utterances: (usize, usize),
    pub pretrain_words_range: (usize, usize),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            feature_dim: 16,
            min_dur: 1,
            max_dur: 3,
            noise_sigma: 0.3,
            speaker_offset: 0.2,
            min_phone_sep: 1.0,
            slu_speakers: (8, 2, 2),
            slu_per_intent: (64, 8, 8),
            pretrain_speakers: (18, 2),
            pretrain_utterances: (7500, 500),
            pretrain_words_range: (3, 6),
        }
    }
}

/// In-memory result of [`gen_corpus`].
#[derive(Debug)]
pub struct GeneratedCorpus {
    pub slu: Vec<Utterance>,
    pub pretrain: Vec<Utterance>,
}

fn speaker_offset_vec(dim: usize, sigma: f64, speaker: &str, seed: u64) -> Vec<f64> {
    // stable per-speaker stream: fold the name into the seed
    let mut h: u64 = 0xcbf29ce484222325;
    for b in speaker.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
    (0..dim).map(|_| sigma * gaussian(&mut rng)).collect()
}

/// True when two consecutive words would butt the same phone against itself,
/// which would merge alignment runs across the boundary.
fn has_boundary_repeat(lexicon: &Lexicon, words: &[&str]) -> bool {
    for w in words.windows(2) {
        let (a, b) = (lexicon.pronunciation(w[0]), lexicon.pronunciation(w[1]));
        if let (Some(a), Some(b)) = (a, b) {
            if a.last() == b.first() {
                return true;
            }
        }
    }
    false
}

fn render_utterance(
    id: String,
    speaker: String,
    split: Split,
    text: String,
    intent: Option<IntentLabel>,
    lexicon: &Lexicon,
    prototypes: &[Vec<f64>],
    cfg: &CorpusConfig,
    spk_offset: &[f64],
    rng: &mut ChaCha8Rng,
    features_dir: &Path,
    out_dir: &Path,
) -> Result<Utterance> {
    let phones = phonemize(lexicon, &text)?;
    let synth = SynthCfg {
        min_dur: cfg.min_dur,
        max_dur: cfg.max_dur,
        noise_sigma: cfg.noise_sigma,
        speaker_offset: spk_offset,
    };
    let (features, alignment) = synth_features(&phones, prototypes, &synth, rng)?;
    let rel = PathBuf::from("features").join(format!("{}.feat", id));
    write_features(&out_dir.join(&rel), &features)?;
    let _ = features_dir; // created by caller
    Ok(Utterance {
        id,
        speaker,
        split,
        text,
        intent,
        feature_file: rel.to_string_lossy().into_owned(),
        frames: alignment.len(),
        dim: cfg.feature_dim,
        phones: alignment,
    })
}

/// Generate the SLU and pre-training corpora under `out_dir`: feature files,
/// `slu_manifest.jsonl`, `pretrain_manifest.jsonl`, plus copies of the
/// grammar and lexicon used. Pure function of (grammar, lexicon, cfg, seed).
pub fn gen_corpus(
    grammar: &SlotGrammar,
    lexicon: &Lexicon,
    cfg: &CorpusConfig,
    speakers: &SpeakerSets,
    seed: u64,
    out_dir: &Path,
) -> Result<GeneratedCorpus> {
    speakers.validate()?;
    let features_dir = out_dir.join("features");
    fs::create_dir_all(&features_dir)?;

    let prototypes = phone_prototypes(
        lexicon.num_phones(),
        cfg.feature_dim,
        cfg.min_phone_sep,
        seed ^ 0x70726f746f, // "proto" stream
    );

    // SLU corpus: per split, every intent appears per-split-count times.
    let mut slu = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x736c75); // "slu" stream
    let splits = [
        (Split::Train, cfg.slu_per_intent.0),
        (Split::Valid, cfg.slu_per_intent.1),
        (Split::Test, cfg.slu_per_intent.2),
    ];
    for (split, per_intent) in splits {
        let pool = speakers.of(split);
        let expansions = grammar_expand(grammar, per_intent, &mut rng)?;
        for (n, (text, label)) in expansions.into_iter().enumerate() {
            let speaker = pool[rng.gen_range(0..pool.len())].clone();
            let spk_offset =
                speaker_offset_vec(cfg.feature_dim, cfg.speaker_offset, &speaker, seed);
            let id = format!("slu-{}-{:05}", split.as_str(), n);
            if has_boundary_repeat(lexicon, &text.split_whitespace().collect::<Vec<_>>()) {
                return Err(SluError::Generation(format!(
                    "grammar sentence {:?} repeats a phone across a word boundary",
                    text
                )));
            }
            slu.push(render_utterance(
                id,
                speaker,
                split,
                text,
                Some(label),
                lexicon,
                &prototypes,
                cfg,
                &spk_offset,
                &mut rng,
                &features_dir,
                out_dir,
            )?);
        }
    }

    // Pre-training corpus: random sentences over the full lexicon word list,
    // excluding anything the grammar could emit and any sentence that would
    // merge alignment runs across a word boundary.
    let slu_sentences = grammar.all_sentences();
    let words: Vec<&str> = lexicon.words().collect();
    let mut pretrain = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x707265); // "pre" stream
    let pre_speakers = SpeakerSets::generate(
        "pre",
        cfg.pretrain_speakers.0,
        cfg.pretrain_speakers.1,
        1,
    );
    let pre_splits = [
        (Split::Train, cfg.pretrain_utterances.0),
        (Split::Valid, cfg.pretrain_utterances.1),
    ];
    for (split, count) in pre_splits {
        let pool = pre_speakers.of(split);
        for n in 0..count {
            let text = loop {
                let len = rng.gen_range(cfg.pretrain_words_range.0..=cfg.pretrain_words_range.1);
                let pick: Vec<&str> = (0..len)
                    .map(|_| words[rng.gen_range(0..words.len())])
                    .collect();
                if has_boundary_repeat(lexicon, &pick) {
                    continue;
                }
                let s = pick.join(" ");
                if !slu_sentences.contains(&s) {
                    break s;
                }
            };
            let speaker = pool[rng.gen_range(0..pool.len())].clone();
            let spk_offset =
                speaker_offset_vec(cfg.feature_dim, cfg.speaker_offset, &speaker, seed);
            let id = format!("pre-{}-{:05}", split.as_str(), n);
            pretrain.push(render_utterance(
                id,
                speaker,
                split,
                text,
                None,
                lexicon,
                &prototypes,
                cfg,
                &spk_offset,
                &mut rng,
                &features_dir,
                out_dir,
            )?);
        }
    }

    save_manifest(&slu, &out_dir.join("slu_manifest.jsonl"))?;
    save_manifest(&pretrain, &out_dir.join("pretrain_manifest.jsonl"))?;
    grammar.save(&out_dir.join("grammar.json"))?;
    lexicon.save(&out_dir.join("lexicon.json"))?;

    Ok(GeneratedCorpus { slu, pretrain })
}

// ---------------------------------------------------------------------------
// Default grammar and lexicon
// ---------------------------------------------------------------------------

/// The shipped grammar: 31 valid (action, object, location) triples.
pub fn default_grammar() -> SlotGrammar {
    let s = |x: &str| x.to_string();
    let locations = ["none", "kitchen", "bedroom", "washroom"];
    let mut validity: Vec<(String, String, String)> = Vec::new();
    for loc in locations {
        validity.push((s("activate"), s("lights"), s(loc)));
        validity.push((s("deactivate"), s("lights"), s(loc)));
        validity.push((s("increase"), s("heat"), s(loc)));
        validity.push((s("decrease"), s("heat"), s(loc)));
    }
    for (a, o) in [
        ("increase", "volume"),
        ("decrease", "volume"),
        ("activate", "music"),
        ("deactivate", "music"),
        ("activate", "lamp"),
        ("deactivate", "lamp"),
        ("bring", "shoes"),
        ("bring", "socks"),
        ("bring", "juice"),
        ("bring", "newspaper"),
        ("bring", "water"),
        ("change", "english"),
        ("change", "chinese"),
        ("change", "korean"),
        ("change", "german"),
    ] {
        validity.push((s(a), s(o), s("none")));
    }

    let tpl = |action: &str, with_location: bool, text: &str| Template {
        action: s(action),
        with_location,
        text: s(text),
    };
    let templates = vec![
        tpl("activate", false, "turn on the {object}"),
        tpl("activate", false, "switch on the {object}"),
        tpl("activate", true, "turn on the {object} in the {location}"),
        tpl("activate", true, "switch on the {object} in the {location}"),
        tpl("deactivate", false, "turn off the {object}"),
        tpl("deactivate", false, "switch off the {object}"),
        tpl("deactivate", true, "turn off the {object} in the {location}"),
        tpl("deactivate", true, "switch off the {object} in the {location}"),
        tpl("increase", false, "turn up the {object}"),
        tpl("increase", false, "increase the {object}"),
        tpl("increase", true, "turn up the {object} in the {location}"),
        tpl("increase", true, "increase the {object} in the {location}"),
        tpl("decrease", false, "turn down the {object}"),
        tpl("decrease", false, "decrease the {object}"),
        tpl("decrease", true, "turn down the {object} in the {location}"),
        tpl("decrease", true, "decrease the {object} in the {location}"),
        tpl("bring", false, "bring me the {object}"),
        tpl("bring", false, "get me the {object}"),
        tpl("bring", false, "fetch the {object}"),
        tpl("change", false, "change the language to {object}"),
        tpl("change", false, "switch the language to {object}"),
        tpl("change", false, "set my device to {object}"),
    ];

    SlotGrammar {
        actions: ["activate", "deactivate", "increase", "decrease", "bring", "change"]
            .iter()
            .map(|a| s(a))
            .collect(),
        objects: [
            "lights", "music", "lamp", "heat", "volume", "shoes", "socks", "juice",
            "newspaper", "water", "english", "chinese", "korean", "german",
        ]
        .iter()
        .map(|o| s(o))
        .collect(),
        locations: locations.iter().map(|l| s(l)).collect(),
        validity,
        templates,
    }
}

/// 39-phone inventory and pronunciations for the grammar words plus an
/// enlarged out-of-domain word list (~3× the in-grammar vocabulary).
pub fn default_lexicon() -> Lexicon {
    let phones: Vec<String> = [
        "aa", "ae", "ah", "ao", "aw", "ay", "b", "ch", "d", "dh", "eh", "er", "ey", "f", "g",
        "hh", "ih", "iy", "jh", "k", "l", "m", "n", "ng", "ow", "oy", "p", "r", "s", "sh", "t",
        "th", "uh", "uw", "v", "w", "y", "z", "zh",
    ]
    .iter()
    .map(|p| p.to_string())
    .collect();

    let raw: &[(&str, &str)] = &[
        // grammar words
        ("turn", "t er n"),
        ("on", "aa n"),
        ("the", "dh ah"),
        ("switch", "s w ih ch"),
        ("off", "ao f"),
        ("up", "ah p"),
        ("down", "d aw n"),
        ("increase", "ih n k r iy s"),
        ("decrease", "d iy k r iy s"),
        ("bring", "b r ih ng"),
        ("me", "m iy"),
        ("get", "g eh t"),
        ("fetch", "f eh ch"),
        ("change", "ch ey n jh"),
        ("language", "l ae ng g w ah jh"),
        ("to", "t uw"),
        ("set", "s eh t"),
        ("my", "m ay"),
        ("device", "d ih v ay s"),
        ("in", "ih n"),
        ("lights", "l ay t s"),
        ("music", "m y uw z ih k"),
        ("lamp", "l ae m p"),
        ("heat", "hh iy t"),
        ("volume", "v aa l y uw m"),
        ("shoes", "sh uw z"),
        ("socks", "s aa k s"),
        ("juice", "jh uw s"),
        ("newspaper", "n uw z p ey p er"),
        ("water", "w ao t er"),
        ("english", "ih ng g l ih sh"),
        ("chinese", "ch ay n iy z"),
        ("korean", "k ao r iy ah n"),
        ("german", "jh er m ah n"),
        ("kitchen", "k ih ch ah n"),
        ("bedroom", "b eh d r uw m"),
        ("washroom", "w aa sh r uw m"),
        // out-of-domain words
        ("about", "ah b aw t"),
        ("after", "ae f t er"),
        ("again", "ah g eh n"),
        ("air", "eh r"),
        ("animal", "ae n ah m ah l"),
        ("answer", "ae n s er"),
        ("around", "ah r aw n d"),
        ("away", "ah w ey"),
        ("back", "b ae k"),
        ("because", "b ih k ao z"),
        ("begin", "b ih g ih n"),
        ("between", "b ih t w iy n"),
        ("book", "b uh k"),
        ("both", "b ow th"),
        ("bread", "b r eh d"),
        ("call", "k ao l"),
        ("chair", "ch eh r"),
        ("city", "s ih t iy"),
        ("clean", "k l iy n"),
        ("cold", "k ow l d"),
        ("come", "k ah m"),
        ("day", "d ey"),
        ("door", "d ao r"),
        ("early", "er l iy"),
        ("evening", "iy v n ih ng"),
        ("every", "eh v r iy"),
        ("face", "f ey s"),
        ("family", "f ae m ah l iy"),
        ("fast", "f ae s t"),
        ("find", "f ay n d"),
        ("first", "f er s t"),
        ("floor", "f l ao r"),
        ("food", "f uw d"),
        ("friend", "f r eh n d"),
        ("garden", "g aa r d ah n"),
        ("give", "g ih v"),
        ("good", "g uh d"),
        ("great", "g r ey t"),
        ("hand", "hh ae n d"),
        ("happy", "hh ae p iy"),
        ("hear", "hh ih r"),
        ("help", "hh eh l p"),
        ("home", "hh ow m"),
        ("house", "hh aw s"),
        ("keep", "k iy p"),
        ("know", "n ow"),
        ("large", "l aa r jh"),
        ("learn", "l er n"),
        ("letter", "l eh t er"),
        ("listen", "l ih s ah n"),
        ("little", "l ih t ah l"),
        ("long", "l ao ng"),
        ("look", "l uh k"),
        ("make", "m ey k"),
        ("morning", "m ao r n ih ng"),
        ("move", "m uw v"),
        ("never", "n eh v er"),
        ("night", "n ay t"),
        ("open", "ow p ah n"),
        ("over", "ow v er"),
        ("people", "p iy p ah l"),
        ("place", "p l ey s"),
        ("point", "p oy n t"),
        ("question", "k w eh s ch ah n"),
        ("quiet", "k w ay ah t"),
        ("rain", "r ey n"),
        ("read", "r iy d"),
        ("right", "r ay t"),
        ("river", "r ih v er"),
        ("room", "r uw m"),
        ("school", "s k uw l"),
        ("sing", "s ih ng"),
        ("sleep", "s l iy p"),
        ("small", "s m ao l"),
        ("sound", "s aw n d"),
        ("speak", "s p iy k"),
        ("start", "s t aa r t"),
        ("story", "s t ao r iy"),
        ("street", "s t r iy t"),
        ("summer", "s ah m er"),
        ("table", "t ey b ah l"),
        ("talk", "t ao k"),
        ("thing", "th ih ng"),
        ("think", "th ih ng k"),
        ("time", "t ay m"),
        ("together", "t ah g eh dh er"),
        ("tree", "t r iy"),
        ("under", "ah n d er"),
        ("usual", "y uw zh ah l"),
        ("very", "v eh r iy"),
        ("voice", "v oy s"),
        ("walk", "w ao k"),
        ("warm", "w ao r m"),
        ("watch", "w aa ch"),
        ("week", "w iy k"),
        ("window", "w ih n d ow"),
        ("winter", "w ih n t er"),
        ("word", "w er d"),
        ("world", "w er l d"),
        ("year", "y ih r"),
        ("yellow", "y eh l ow"),
        ("young", "y ah ng"),
        ("zero", "z ih r ow"),
        ("zone", "z ow n"),
    ];

    let entries: Vec<(String, Vec<Vec<String>>)> = raw
        .iter()
        .map(|(w, p)| {
            (
                w.to_string(),
                vec![p.split(' ').map(|s| s.to_string()).collect()],
            )
        })
        .collect();
    Lexicon::new(phones, entries).expect("default lexicon is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grammar_has_31_intents() {
        let g = default_grammar();
        assert_eq!(g.num_intents(), 31);
        let ids: BTreeSet<usize> = g
            .intents()
            .iter()
            .map(|t| g.intent_label(t).unwrap().id)
            .collect();
        assert_eq!(ids.len(), 31);
        assert_eq!(*ids.iter().max().unwrap(), 30);
    }

    #[test]
    fn tiny_grammars_count_intents() {
        let s = |x: &str| x.to_string();
        let one = SlotGrammar {
            actions: vec![s("a")],
            objects: vec![s("o")],
            locations: vec![s("none")],
            validity: vec![(s("a"), s("o"), s("none"))],
            templates: vec![Template {
                action: s("a"),
                with_location: false,
                text: s("do the {object}"),
            }],
        };
        assert_eq!(one.num_intents(), 1);

        let mut validity = Vec::new();
        for a in ["a", "b"] {
            for o in ["x", "y"] {
                for l in ["kitchen", "bedroom"] {
                    validity.push((s(a), s(o), s(l)));
                }
            }
        }
        let eight = SlotGrammar {
            actions: vec![s("a"), s("b")],
            objects: vec![s("x"), s("y")],
            locations: vec![s("kitchen"), s("bedroom")],
            validity,
            templates: vec![
                Template {
                    action: s("a"),
                    with_location: true,
                    text: s("a the {object} in the {location}"),
                },
                Template {
                    action: s("b"),
                    with_location: true,
                    text: s("b the {object} in the {location}"),
                },
            ],
        };
        assert_eq!(eight.num_intents(), 8);
    }

    #[test]
    fn expand_covers_every_intent() {
        let g = default_grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = grammar_expand(&g, 3, &mut rng).unwrap();
        assert_eq!(out.len(), 31 * 3);
        for id in 0..31 {
            assert_eq!(out.iter().filter(|(_, l)| l.id == id).count(), 3);
        }
    }

    #[test]
    fn expand_missing_template_is_generation_error() {
        let s = |x: &str| x.to_string();
        let g = SlotGrammar {
            actions: vec![s("sing")],
            objects: vec![s("song")],
            locations: vec![s("none")],
            validity: vec![(s("sing"), s("song"), s("none"))],
            templates: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            grammar_expand(&g, 1, &mut rng),
            Err(SluError::Generation(_))
        ));
    }

    #[test]
    fn phonemize_basics() {
        let lex = Lexicon::new(
            vec!["ao".into(), "n".into()],
            vec![("on".into(), vec![vec!["ao".into(), "n".into()]])],
        )
        .unwrap();
        assert_eq!(phonemize(&lex, "on").unwrap(), vec![0, 1]);
        assert_eq!(phonemize(&lex, "").unwrap(), Vec::<usize>::new());
        match phonemize(&lex, "on off") {
            Err(SluError::LexiconMiss(w)) => assert_eq!(w, "off"),
            other => panic!("expected lexicon miss, got {:?}", other),
        }
    }

    #[test]
    fn phonemize_concatenates_per_word() {
        let lex = default_lexicon();
        let a = phonemize(&lex, "turn on").unwrap();
        let mut want = phonemize(&lex, "turn").unwrap();
        want.extend(phonemize(&lex, "on").unwrap());
        assert_eq!(a, want);
    }

    #[test]
    fn prototypes_respect_separation() {
        let protos = phone_prototypes(12, 16, 1.0, 7);
        for i in 0..12 {
            for j in i + 1..12 {
                let d2: f64 = protos[i]
                    .iter()
                    .zip(&protos[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(d2.sqrt() >= 1.0);
            }
        }
    }

    #[test]
    fn synth_zero_noise_reproduces_prototypes() {
        let protos = phone_prototypes(3, 4, 1.0, 11);
        let cfg = SynthCfg {
            min_dur: 2,
            max_dur: 2,
            noise_sigma: 0.0,
            speaker_offset: &[],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (feats, align) = synth_features(&[0, 1, 2], &protos, &cfg, &mut rng).unwrap();
        assert_eq!(feats.dims(), &[6, 4]);
        assert_eq!(align, vec![0, 0, 1, 1, 2, 2]);
        for (t, &p) in align.iter().enumerate() {
            assert_eq!(feats.row(t), protos[p].as_slice());
        }
    }

    #[test]
    fn synth_deterministic_under_seed() {
        let protos = phone_prototypes(5, 8, 1.0, 3);
        let cfg = SynthCfg {
            min_dur: 1,
            max_dur: 3,
            noise_sigma: 0.3,
            speaker_offset: &[],
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            synth_features(&[1, 3, 0, 2], &protos, &cfg, &mut rng).unwrap()
        };
        let (f1, a1) = run();
        let (f2, a2) = run();
        assert_eq!(f1.data(), f2.data());
        assert_eq!(a1, a2);
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.feat");
        let t = Tensor::new(vec![3, 2], vec![0.5, -1.25, 2.0, 0.0, 3.5, -0.75]).unwrap();
        write_features(&path, &t).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.dims(), &[3, 2]);
        // values survive the f32 round trip exactly for these constants
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn feature_file_rejects_truncation_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.feat");
        fs::write(&path, b"NOPE").unwrap();
        assert!(read_features(&path).is_err());
        let good = dir.path().join("trunc.feat");
        let t = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        write_features(&good, &t).unwrap();
        let bytes = fs::read(&good).unwrap();
        fs::write(&good, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_features(&good), Err(SluError::Io(_))));
    }

    #[test]
    fn speaker_sets_disjointness() {
        let ok = SpeakerSets::generate("slu", 8, 2, 2);
        assert!(ok.validate().is_ok());
        let bad = SpeakerSets {
            train: vec!["a".into(), "b".into()],
            valid: vec!["b".into()],
            test: vec!["c".into()],
        };
        assert!(matches!(bad.validate(), Err(SluError::Config(_))));
    }

    fn tiny_config() -> CorpusConfig {
        CorpusConfig {
            slu_per_intent: (2, 1, 1),
            pretrain_utterances: (12, 4),
            pretrain_speakers: (3, 1),
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn gen_corpus_shape_and_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let g = default_grammar();
        let lex = default_lexicon();
        let cfg = tiny_config();
        let speakers = SpeakerSets::generate("slu", 8, 2, 2);
        let out = gen_corpus(&g, &lex, &cfg, &speakers, 42, dir.path()).unwrap();

        assert_eq!(out.slu.len(), 31 * (2 + 1 + 1));
        assert_eq!(out.pretrain.len(), 16);
        assert!(out.pretrain.iter().all(|u| u.intent.is_none()));
        assert!(out.slu.iter().all(|u| u.intent.is_some()));

        // speaker-disjoint splits
        for u in &out.slu {
            let pool = speakers.of(u.split);
            assert!(pool.contains(&u.speaker));
        }

        // every test intent appears in train
        let train_ids: BTreeSet<usize> = out
            .slu
            .iter()
            .filter(|u| u.split == Split::Train)
            .map(|u| u.intent.as_ref().unwrap().id)
            .collect();
        for u in out.slu.iter().filter(|u| u.split == Split::Test) {
            assert!(train_ids.contains(&u.intent.as_ref().unwrap().id));
        }

        // alignment length matches frames; collapsing runs gives phonemize(text)
        for u in out.slu.iter().chain(out.pretrain.iter()) {
            assert_eq!(u.phones.len(), u.frames);
            let mut runs = Vec::new();
            for &p in &u.phones {
                if runs.last() != Some(&p) {
                    runs.push(p);
                }
            }
            assert_eq!(runs, phonemize(&lex, &u.text).unwrap(), "utt {}", u.id);

            // feature files parse back to the recorded T and D
            let feats = load_utterance_features(dir.path(), u).unwrap();
            assert_eq!(feats.dims(), &[u.frames, u.dim]);
        }

        // manifests reload identically
        let slu2 = load_manifest(&dir.path().join("slu_manifest.jsonl")).unwrap();
        assert_eq!(slu2, out.slu);
    }

    #[test]
    fn gen_corpus_is_deterministic() {
        let g = default_grammar();
        let lex = default_lexicon();
        let cfg = tiny_config();
        let speakers = SpeakerSets::generate("slu", 3, 1, 1);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = gen_corpus(&g, &lex, &cfg, &speakers, 7, d1.path()).unwrap();
        let b = gen_corpus(&g, &lex, &cfg, &speakers, 7, d2.path()).unwrap();
        assert_eq!(a.slu, b.slu);
        assert_eq!(a.pretrain, b.pretrain);
        // byte-identical feature files
        for u in a.slu.iter().take(5) {
            let f1 = fs::read(d1.path().join(&u.feature_file)).unwrap();
            let f2 = fs::read(d2.path().join(&u.feature_file)).unwrap();
            assert_eq!(f1, f2);
        }
    }

    #[test]
    fn grammar_and_lexicon_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = default_grammar();
        let gp = dir.path().join("grammar.json");
        g.save(&gp).unwrap();
        assert_eq!(SlotGrammar::load(&gp).unwrap(), g);

        let lex = default_lexicon();
        let lp = dir.path().join("lexicon.json");
        lex.save(&lp).unwrap();
        assert_eq!(Lexicon::load(&lp).unwrap(), lex);
    }

    #[test]
    fn default_grammar_sentences_have_no_boundary_repeats() {
        let g = default_grammar();
        let lex = default_lexicon();
        for s in g.all_sentences() {
            let words: Vec<&str> = s.split_whitespace().collect();
            assert!(
                !has_boundary_repeat(&lex, &words),
                "sentence {:?} merges runs",
                s
            );
        }
    }
}
