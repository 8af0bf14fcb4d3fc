//! Byte-level BPE compatible with the GPT-2 `vocab.json` / `merges.txt`
//! pair, plus a raw little-endian `u32` token file format.

use std::collections::HashMap;
use std::path::Path;

use fancy_regex::Regex;

use crate::error::{Error, Result};

const GPT2_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenSource {
    RawText,
    PreTokenized,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub ids: Vec<u32>,
    pub source: TokenSource,
}

impl TokenStream {
    pub fn new(ids: Vec<u32>, source: TokenSource) -> Self {
        Self { ids, source }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().find(|&&id| id as usize >= vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange { id, vocab_size }),
            None => Ok(()),
        }
    }

    /// Non-overlapping windows of exactly `len` tokens; a trailing partial
    /// window is dropped.
    pub fn windows(&self, len: usize) -> impl Iterator<Item = &[u32]> + '_ {
        self.ids.chunks_exact(len.max(1))
    }
}

/// The GPT-2 reversible byte → printable-char mapping.
fn bytes_to_unicode() -> [char; 256] {
    let mut printable: Vec<u32> = (b'!' as u32..=b'~' as u32)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            table[b as usize] = char::from_u32(256 + extra).expect("valid scalar");
            extra += 1;
        } else {
            table[b as usize] = char::from_u32(b).expect("valid scalar");
        }
    }
    table
}

pub struct BpeVocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    merge_ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    pattern: Regex,
}

impl std::fmt::Debug for BpeVocab {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BpeVocab")
            .field("vocab_size", &self.id_to_token.len())
            .field("merges", &self.merge_ranks.len())
            .finish()
    }
}

impl BpeVocab {
    /// Builds a vocabulary from a token→id map and ordered merge rules.
    pub fn new(token_to_id: HashMap<String, u32>, merges: Vec<(String, String)>) -> Result<Self> {
        let n = token_to_id.len();
        let mut id_to_token = vec![None; n];
        for (tok, &id) in &token_to_id {
            let slot = id_to_token.get_mut(id as usize).ok_or_else(|| {
                Error::InvalidArgument(format!("token id {id} is not dense in [0, {n})"))
            })?;
            if slot.replace(tok.clone()).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token id {id}")));
            }
        }
        let id_to_token = id_to_token
            .into_iter()
            .map(|t| t.expect("dense ids fill every slot"))
            .collect();

        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.into_iter().enumerate() {
            if merge_ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate merge rule `{} {}`",
                    pair.0, pair.1
                )));
            }
        }
        let byte_encoder = bytes_to_unicode();
        let byte_decoder = byte_encoder
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        Ok(Self {
            token_to_id,
            id_to_token,
            merge_ranks,
            byte_encoder,
            byte_decoder,
            pattern: Regex::new(GPT2_PATTERN).expect("static pattern compiles"),
        })
    }

    /// Parses the JSON map and merges text (first line may be a `#version` header).
    pub fn from_strs(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let token_to_id: HashMap<String, u32> = serde_json::from_str(vocab_json)?;
        let mut merges = Vec::new();
        for (lineno, line) in merges_txt.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => merges.push((a.to_string(), b.to_string())),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "merges line {}: expected two symbols, got `{line}`",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(token_to_id, merges)
    }

    pub fn from_files(vocab_json: &Path, merges_txt: &Path) -> Result<Self> {
        let v = std::fs::read_to_string(vocab_json).map_err(|e| Error::io(vocab_json, e))?;
        let m = std::fs::read_to_string(merges_txt).map_err(|e| Error::io(merges_txt, e))?;
        Self::from_strs(&v, &m)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn token_str(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Text of a single token after byte decoding (lossy).
    pub fn token_text(&self, id: u32) -> Result<String> {
        self.decode(&[id])
    }

    fn bpe_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut parts: Vec<String> = word
            .bytes()
            .map(|b| self.byte_encoder[b as usize].to_string())
            .collect();
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.merge_ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((_, at)) = best else { break };
            let (a, b) = (parts[at].clone(), parts[at + 1].clone());
            // merge every occurrence of the pair, left to right
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && parts[i] == a && parts[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut parts[i]));
                    i += 1;
                }
            }
            parts = merged;
        }
        for p in parts {
            match self.token_to_id.get(&p) {
                Some(&id) => out.push(id),
                // incomplete vocabularies: fall back to single byte symbols
                None => out.extend(p.chars().filter_map(|c| self.token_to_id.get(&c.to_string()))),
            }
        }
    }

    pub fn encode(&self, text: &str) -> TokenStream {
        let mut ids = Vec::new();
        for m in self.pattern.find_iter(text) {
            let m = m.expect("pattern has bounded backtracking");
            self.bpe_word(m.as_str(), &mut ids);
        }
        TokenStream::new(ids, TokenSource::RawText)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::with_capacity(ids.len() * 4);
        for &id in ids {
            let tok = self.token_str(id).ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: self.len(),
            })?;
            for c in tok.chars() {
                match self.byte_decoder.get(&c) {
                    Some(&b) => bytes.push(b),
                    None => {
                        let mut buf = [0u8; 4];
                        bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

/// Reads a headerless little-endian `u32` token file.
pub fn load_pretokenized(path: &Path, vocab_size: usize) -> Result<TokenStream> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::MalformedTokenFile {
            path: path.to_path_buf(),
            detail: format!("length {} is not a multiple of 4", bytes.len()),
        });
    }
    let ids: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let stream = TokenStream::new(ids, TokenSource::PreTokenized);
    stream.validate(vocab_size)?;
    Ok(stream)
}

pub fn write_pretokenized(path: &Path, ids: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = ids.iter().flat_map(|id| id.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// A tiny vocabulary: all 256 byte symbols plus a few merges.
    pub(crate) fn toy_vocab() -> BpeVocab {
        let enc = bytes_to_unicode();
        let mut map: HashMap<String, u32> = enc
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), i as u32))
            .collect();
        let merges = vec![
            ("i".to_string(), "n".to_string()),
            ("in".to_string(), "g".to_string()),
            ("Ġ".to_string(), "r".to_string()),
        ];
        for (a, b) in &merges {
            let id = map.len() as u32;
            map.insert(format!("{a}{b}"), id);
        }
        BpeVocab::new(map, merges).unwrap()
    }

    #[test]
    fn byte_encoder_is_bijective() {
        let enc = bytes_to_unicode();
        let set: std::collections::HashSet<char> = enc.iter().copied().collect();
        assert_eq!(set.len(), 256);
        assert_eq!(enc[b'A' as usize], 'A');
        assert_eq!(enc[b' ' as usize], 'Ġ');
    }

    #[test]
    fn toy_merges_apply_by_rank() {
        let v = toy_vocab();
        let ids = v.encode(" ring").ids;
        let toks: Vec<_> = ids.iter().map(|&i| v.token_str(i).unwrap()).collect();
        assert_eq!(toks, vec!["Ġr", "ing"]);
        assert_eq!(v.decode(&ids).unwrap(), " ring");
    }

    #[test]
    fn empty_roundtrip() {
        let v = toy_vocab();
        assert!(v.encode("").is_empty());
        assert_eq!(v.decode(&[]).unwrap(), "");
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let v = toy_vocab();
        let n = v.len() as u32;
        assert!(matches!(
            v.decode(&[n]),
            Err(Error::TokenOutOfRange { id, .. }) if id == n
        ));
    }

    #[test]
    fn invalid_utf8_is_replaced() {
        let v = toy_vocab();
        // lone continuation byte 0x80
        let id = v.id_of(&bytes_to_unicode()[0x80].to_string()).unwrap();
        assert_eq!(v.decode(&[id]).unwrap(), "\u{FFFD}");
    }

    #[test]
    fn rejects_sparse_ids_and_duplicate_merges() {
        let mut map = HashMap::new();
        map.insert("a".to_string(), 0);
        map.insert("b".to_string(), 2);
        assert!(BpeVocab::new(map, vec![]).is_err());
        let mut map = HashMap::new();
        map.insert("a".to_string(), 0);
        let m = vec![("a".into(), "a".into()), ("a".into(), "a".into())];
        assert!(BpeVocab::new(map, m).is_err());
    }

    #[test]
    fn pretokenized_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.bin");
        std::fs::write(&p, []).unwrap();
        assert!(load_pretokenized(&p, 10).unwrap().is_empty());

        let p = dir.path().join("one.bin");
        std::fs::write(&p, 42u32.to_le_bytes()).unwrap();
        let s = load_pretokenized(&p, 50).unwrap();
        assert_eq!(s.ids, vec![42]);
        assert_eq!(s.source, TokenSource::PreTokenized);

        assert!(matches!(
            load_pretokenized(&p, 42),
            Err(Error::TokenOutOfRange { id: 42, vocab_size: 42 })
        ));

        let p = dir.path().join("bad.bin");
        std::fs::write(&p, [1u8, 2, 3]).unwrap();
        assert!(matches!(
            load_pretokenized(&p, 50),
            Err(Error::MalformedTokenFile { .. })
        ));
    }

    #[test]
    fn windows_drop_partial_tail() {
        let s = TokenStream::new((0..10).collect(), TokenSource::RawText);
        let w: Vec<_> = s.windows(4).collect();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1], &[4, 5, 6, 7]);
    }
}
