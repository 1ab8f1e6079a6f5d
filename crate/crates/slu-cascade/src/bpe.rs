//! Byte-pair-encoding wordpiece vocabulary: training by greedy
//! highest-frequency pair merging, deterministic encoding, and decoding.
//!
//! Word-internal BPE with an end-of-word marker: the final character symbol
//! of every word carries a `</w>` suffix, input is lowercased, and words are
//! split on whitespace. Token id 0 is reserved for the CTC blank and is never
//! produced by encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SluError};

pub type TokenId = usize;

pub const BLANK_ID: TokenId = 0;
const BLANK_TOKEN: &str = "<blank>";
const EOW: &str = "</w>";

/// Trained BPE vocabulary: ordered merges plus the dense token table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<(String, String)>,
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
}

impl BpeVocab {
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn blank_id(&self) -> TokenId {
        BLANK_ID
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    fn from_parts(merges: Vec<(String, String)>, id_to_token: Vec<String>) -> Result<Self> {
        if id_to_token.first().map(|s| s.as_str()) != Some(BLANK_TOKEN) {
            return Err(SluError::Format(format!(
                "token id 0 must be {}, got {:?}",
                BLANK_TOKEN,
                id_to_token.first()
            )));
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(SluError::Format(format!("duplicate token {:?}", tok)));
            }
        }
        for (l, r) in &merges {
            let joined = format!("{}{}", l, r);
            if !token_to_id.contains_key(&joined) {
                return Err(SluError::Format(format!(
                    "merge {:?}+{:?} has no token {:?}",
                    l, r, joined
                )));
            }
        }
        Ok(BpeVocab {
            merges,
            id_to_token,
            token_to_id,
        })
    }
}

/// Split a word into its initial character symbols; the last carries `</w>`.
fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{}{}", c, EOW)
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let joined = format!("{}{}", left, right);
            symbols[i] = joined;
            symbols.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

/// Train a BPE vocabulary by greedy highest-frequency pair merging until
/// `target_size` tokens exist or no pair occurs at least twice. Ties break
/// lexicographically on the pair.
pub fn bpe_train(corpus: &[String], target_size: usize) -> Result<BpeVocab> {
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    for sentence in corpus {
        for word in sentence.to_lowercase().split_whitespace() {
            *word_freq.entry(word.to_string()).or_insert(0) += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(SluError::Contract("empty BPE training corpus".into()));
    }

    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .iter()
        .map(|(w, &f)| (word_symbols(w), f))
        .collect();

    let alphabet: BTreeSet<String> = words
        .iter()
        .flat_map(|(syms, _)| syms.iter().cloned())
        .collect();
    if target_size < alphabet.len() + 1 {
        return Err(SluError::Contract(format!(
            "target_size {} below alphabet size {} + 1 blank",
            target_size,
            alphabet.len()
        )));
    }

    let mut id_to_token: Vec<String> = Vec::with_capacity(target_size);
    id_to_token.push(BLANK_TOKEN.to_string());
    id_to_token.extend(alphabet.iter().cloned());

    let mut merges: Vec<(String, String)> = Vec::new();
    while id_to_token.len() < target_size {
        let mut pair_freq: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (syms, f) in &words {
            for w in syms.windows(2) {
                *pair_freq
                    .entry((w[0].clone(), w[1].clone()))
                    .or_insert(0) += f;
            }
        }
        // highest frequency; BTreeMap order makes the lexicographically
        // smallest pair win ties
        let best = pair_freq
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(p, &f)| (p.clone(), f));
        let ((left, right), freq) = match best {
            Some(b) => b,
            None => break,
        };
        if freq < 2 {
            break;
        }
        for (syms, _) in words.iter_mut() {
            apply_merge(syms, &left, &right);
        }
        id_to_token.push(format!("{}{}", left, right));
        merges.push((left, right));
    }

    BpeVocab::from_parts(merges, id_to_token)
}

/// Encode a sentence into wordpiece ids by replaying the learned merges per
/// word. Characters outside the training alphabet are an error.
pub fn bpe_encode(vocab: &BpeVocab, sentence: &str) -> Result<Vec<TokenId>> {
    let mut out = Vec::new();
    for word in sentence.to_lowercase().split_whitespace() {
        let mut symbols = word_symbols(word);
        for (l, r) in &vocab.merges {
            apply_merge(&mut symbols, l, r);
        }
        for sym in symbols {
            match vocab.token_to_id.get(&sym) {
                Some(&id) => out.push(id),
                None => {
                    let ch = sym.chars().next().unwrap_or('?');
                    return Err(SluError::UnknownSymbol(ch));
                }
            }
        }
    }
    Ok(out)
}

/// Decode wordpiece ids back to text: concatenate token strings, split words
/// at end-of-word markers, join with single spaces.
pub fn bpe_decode(vocab: &BpeVocab, tokens: &[TokenId]) -> Result<String> {
    let mut joined = String::new();
    for &id in tokens {
        if id == BLANK_ID {
            return Err(SluError::Contract("blank id in decode input".into()));
        }
        match vocab.token(id) {
            Some(tok) => joined.push_str(tok),
            None => {
                return Err(SluError::Contract(format!(
                    "token id {} out of range for vocab of {}",
                    id,
                    vocab.size()
                )))
            }
        }
    }
    let words: Vec<&str> = joined
        .split(EOW)
        .filter(|w| !w.is_empty())
        .collect();
    Ok(words.join(" "))
}

/// Serialize to the vocabulary file format:
/// line 1 `BPEV1 <|V|>`, one token per line in id order, a `MERGES`
/// sentinel, then one `left right` pair per line.
pub fn save_vocab(vocab: &BpeVocab, path: &Path) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "BPEV1 {}", vocab.size());
    for tok in &vocab.id_to_token {
        let _ = writeln!(s, "{}", tok);
    }
    let _ = writeln!(s, "MERGES");
    for (l, r) in &vocab.merges {
        let _ = writeln!(s, "{} {}", l, r);
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<BpeVocab> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SluError::Format("empty vocabulary file".into()))?;
    let size: usize = match header.strip_prefix("BPEV1 ") {
        Some(n) => n
            .trim()
            .parse()
            .map_err(|_| SluError::Format(format!("bad vocab header {:?}", header)))?,
        None => {
            return Err(SluError::Format(format!(
                "vocabulary file must start with BPEV1, got {:?}",
                header
            )))
        }
    };
    let mut id_to_token = Vec::with_capacity(size);
    for _ in 0..size {
        let tok = lines
            .next()
            .ok_or_else(|| SluError::Format("truncated token table".into()))?;
        id_to_token.push(tok.to_string());
    }
    match lines.next() {
        Some("MERGES") => {}
        other => {
            return Err(SluError::Format(format!(
                "expected MERGES sentinel, got {:?}",
                other
            )))
        }
    }
    let mut merges = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) => merges.push((l.to_string(), r.to_string())),
            _ => return Err(SluError::Format(format!("bad merge line {:?}", line))),
        }
    }
    BpeVocab::from_parts(merges, id_to_token)
}
