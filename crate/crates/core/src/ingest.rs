//! Corpus ingestion: tokenization, vocabulary construction, fixed-length
//! encoding and AG News CSV loading.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// AG News category names, indexed by 0-based label.
pub const AGNEWS_CATEGORIES: [&str; 4] = ["World", "Sports", "Business", "Sci/Tech"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub label: usize,
    pub title: String,
    pub description: String,
}

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn example_tokens(example: &RawExample) -> Vec<String> {
    let mut tokens = tokenize(&example.title);
    tokens.extend(tokenize(&example.description));
    tokens
}

/// Bijective token/id mapping. Ids 0 and 1 are reserved for padding and
/// unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its ordered token list (as stored in a
    /// checkpoint). The first two entries must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Config(
                "vocabulary must start with the <pad> and <unk> tokens".into(),
            ));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if id_of.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, id_of })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Id of a real token; reserved tokens are never returned for text.
    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied().filter(|&id| id > UNK_ID)
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(UNK_ID)
    }
}

/// Builds a vocabulary from token frequencies over titles and descriptions.
///
/// Tokens with frequency `>= min_freq` are ranked by descending frequency,
/// then ascending string, and the first `max_size - 2` are kept.
pub fn build_vocab(corpus: &[RawExample], max_size: usize, min_freq: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if max_size < 2 {
        return Err(Error::Config(format!(
            "max_size must be >= 2, got {max_size}"
        )));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for example in corpus {
        for t in example_tokens(example) {
            *freq.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> =
        freq.into_iter().filter(|&(_, f)| f >= min_freq).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - 2);

    let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
        .into_iter()
        .chain(ranked.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Fixed-length id sequence with its true length and label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub true_len: usize,
    pub label: usize,
}

impl EncodedExample {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn valid_ids(&self) -> &[u32] {
        &self.ids[..self.true_len]
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.true_len).collect()
    }
}

/// Encodes title then description, truncating to the first `max_len` tokens
/// and padding with [`PAD_ID`]. Empty text becomes a single unknown token.
pub fn encode(example: &RawExample, vocab: &Vocabulary, max_len: usize) -> EncodedExample {
    assert!(max_len >= 1, "max_len must be >= 1");
    let mut ids: Vec<u32> = example_tokens(example)
        .iter()
        .take(max_len)
        .map(|t| vocab.lookup(t))
        .collect();
    if ids.is_empty() {
        ids.push(UNK_ID);
    }
    let true_len = ids.len();
    ids.resize(max_len, PAD_ID);
    EncodedExample {
        ids,
        true_len,
        label: example.label,
    }
}

/// Encoded examples with per-class counts and category names.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub examples: Vec<EncodedExample>,
    pub class_counts: Vec<usize>,
    pub categories: Vec<String>,
}

impl DatasetSplit {
    pub fn from_encoded(examples: Vec<EncodedExample>, categories: Vec<String>) -> Self {
        let mut class_counts = vec![0; categories.len()];
        for e in &examples {
            class_counts[e.label] += 1;
        }
        Self {
            examples,
            class_counts,
            categories,
        }
    }

    pub fn encode_all(
        raw: &[RawExample],
        vocab: &Vocabulary,
        max_len: usize,
        categories: Vec<String>,
    ) -> Self {
        let examples = raw.iter().map(|r| encode(r, vocab, max_len)).collect();
        Self::from_encoded(examples, categories)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn max_len(&self) -> Option<usize> {
        self.examples.first().map(EncodedExample::max_len)
    }
}

pub fn agnews_categories() -> Vec<String> {
    AGNEWS_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

/// Reads an AG News CSV (`"class","title","description"`, class in 1..=4).
/// A leading header row whose first field is not numeric is skipped.
pub fn read_agnews_csv(path: &Path) -> Result<Vec<RawExample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: e.position().map_or(idx as u64 + 1, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        let csv_err = |msg: String| Error::Csv {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if record.len() != 3 {
            return Err(csv_err(format!(
                "expected 3 fields, found {}",
                record.len()
            )));
        }
        let class_field = record[0].trim();
        let class: i64 = match class_field.parse() {
            Ok(c) => c,
            Err(_) if idx == 0 => continue,
            Err(_) => return Err(csv_err(format!("non-numeric class index {class_field:?}"))),
        };
        if !(1..=4).contains(&class) {
            return Err(csv_err(format!("class index {class} outside 1..=4")));
        }
        out.push(RawExample {
            label: (class - 1) as usize,
            title: record[1].to_string(),
            description: record[2].to_string(),
        });
    }
    Ok(out)
}

/// Loads and encodes an AG News split. Without a vocabulary, one is built
/// from the file itself with the given limits.
pub fn load_agnews_csv(
    path: &Path,
    vocab: Option<&Vocabulary>,
    settings: &VocabSettings,
) -> Result<(DatasetSplit, Vocabulary)> {
    let raw = read_agnews_csv(path)?;
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => build_vocab(&raw, settings.max_size, settings.min_freq)?,
    };
    let split = DatasetSplit::encode_all(&raw, &vocab, settings.max_len, agnews_categories());
    Ok((split, vocab))
}

/// Training and test splits with a vocabulary built from the training side.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
    pub vocab: Vocabulary,
}

/// Reads both AG News files, optionally takes stratified subsets of
/// `train_size` / `test_size` examples (`seed` and `seed + 1`), builds the
/// vocabulary from the training subset and encodes both.
pub fn prepare_agnews(
    train_path: &Path,
    test_path: &Path,
    train_size: Option<usize>,
    test_size: Option<usize>,
    seed: u64,
    settings: &VocabSettings,
) -> Result<PreparedData> {
    let categories = agnews_categories();
    let m = categories.len();
    let mut train_raw = read_agnews_csv(train_path)?;
    let mut test_raw = read_agnews_csv(test_path)?;
    if let Some(n) = train_size {
        train_raw = stratified_subset(&train_raw, m, n, seed);
    }
    if let Some(n) = test_size {
        test_raw = stratified_subset(&test_raw, m, n, seed.wrapping_add(1));
    }
    let vocab = build_vocab(&train_raw, settings.max_size, settings.min_freq)?;
    Ok(PreparedData {
        train: DatasetSplit::encode_all(&train_raw, &vocab, settings.max_len, categories.clone()),
        test: DatasetSplit::encode_all(&test_raw, &vocab, settings.max_len, categories),
        vocab,
    })
}

/// Vocabulary and sequence-length limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSettings {
    pub max_size: usize,
    pub min_freq: usize,
    pub max_len: usize,
}

impl Default for VocabSettings {
    fn default() -> Self {
        Self {
            max_size: 20_000,
            min_freq: 1,
            max_len: 64,
        }
    }
}

/// Class-stratified subset of `total` examples (split evenly, remainder to
/// the lowest class indices), returned in original order.
pub fn stratified_subset(
    raw: &[RawExample],
    num_classes: usize,
    total: usize,
    seed: u64,
) -> Vec<RawExample> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, e) in raw.iter().enumerate() {
        by_class[e.label].push(i);
    }
    let mut rng = Rng::new(seed);
    let mut keep = Vec::with_capacity(total);
    for (c, idx) in by_class.iter_mut().enumerate() {
        let quota = total / num_classes + usize::from(c < total % num_classes);
        rng.shuffle(idx);
        keep.extend(idx.iter().take(quota).copied());
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| raw[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn raw(label: usize, title: &str) -> RawExample {
        RawExample {
            label,
            title: title.into(),
            description: String::new(),
        }
    }

    fn vocab_of(words: &[&str]) -> Vocabulary {
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .iter()
            .chain(words)
            .map(|s| s.to_string())
            .collect();
        Vocabulary::from_tokens(tokens).unwrap()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(
            tokenize("The quick-brown Fox!"),
            ["the", "quick", "brown", "fox"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("AI2025, ok?"), ["ai2025", "ok"]);
    }

    #[test]
    fn vocab_size_cap_and_ranking() {
        let v = build_vocab(&[raw(0, "a a a b b c")], 4, 1).unwrap();
        assert_eq!(v.tokens(), [PAD_TOKEN, UNK_TOKEN, "a", "b"]);
    }

    #[test]
    fn vocab_min_freq_threshold() {
        let v = build_vocab(&[raw(0, "x")], 10, 2).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn vocab_tie_broken_by_string() {
        let v = build_vocab(&[raw(0, "b a b a")], 3, 1).unwrap();
        assert_eq!(v.tokens(), [PAD_TOKEN, UNK_TOKEN, "a"]);
    }

    #[test]
    fn vocab_empty_corpus() {
        assert_eq!(
            build_vocab(&[], 10, 1).unwrap_err().to_string(),
            "empty corpus"
        );
    }

    #[test]
    fn reserved_tokens_never_produced_by_text() {
        let v = build_vocab(&[raw(0, "pad unk")], 10, 1).unwrap();
        assert_eq!(v.lookup("<pad>"), UNK_ID);
        assert!(v.lookup("pad") > UNK_ID);
    }

    #[test]
    fn encode_examples() {
        let v = vocab_of(&["a", "b"]);
        let e = encode(&raw(0, "a b"), &v, 4);
        assert_eq!((e.ids.as_slice(), e.true_len), (&[2, 3, 0, 0][..], 2));
        let e = encode(&raw(0, "a z"), &v, 2);
        assert_eq!((e.ids.as_slice(), e.true_len), (&[2, 1][..], 2));
        let e = encode(&raw(0, ""), &v, 3);
        assert_eq!((e.ids.as_slice(), e.true_len), (&[1, 0, 0][..], 1));
    }

    #[test]
    fn encode_truncates_head_and_joins_description() {
        let v = vocab_of(&["a", "b", "c"]);
        let ex = RawExample {
            label: 2,
            title: "a".into(),
            description: "b c a".into(),
        };
        let e = encode(&ex, &v, 3);
        assert_eq!(e.ids, [2, 3, 4]);
        assert_eq!(e.label, 2);
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_toy_counts() {
        let f = write_csv(
            "\"1\",\"t1\",\"d1\"\n\"2\",\"t, two\",\"d \"\"q\"\"\"\n\"3\",\"t3\",\"d3\"\n",
        );
        let (split, vocab) = load_agnews_csv(f.path(), None, &VocabSettings::default()).unwrap();
        assert_eq!(split.class_counts, [1, 1, 1, 0]);
        assert_eq!(split.examples[0].label, 0);
        assert!(vocab.id_of("two").is_some());
        let raw = read_agnews_csv(f.path()).unwrap();
        assert_eq!(raw[1].description, "d \"q\"");
    }

    #[test]
    fn csv_header_is_skipped() {
        let f = write_csv("Class Index,Title,Description\n4,t,d\n");
        let raw = read_agnews_csv(f.path()).unwrap();
        assert_eq!(raw.len(), 1);
        assert_eq!(raw[0].label, 3);
    }

    #[test]
    fn csv_bad_class_names_line() {
        let f = write_csv("1,a,b\n5,c,d\n");
        let err = read_agnews_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("outside"), "{err}");
    }

    #[test]
    fn csv_malformed_row_names_line() {
        let f = write_csv("1,a,b\n2,c,d\n3,only-two\n");
        let err = read_agnews_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
        let f = write_csv("1,a,b\nx,c,d\n");
        assert!(read_agnews_csv(f.path()).is_err());
    }

    #[test]
    fn stratified_subset_is_balanced() {
        let raw: Vec<_> = (0..400).map(|i| raw(i % 4, &format!("w{i}"))).collect();
        let sub = stratified_subset(&raw, 4, 102, 1);
        assert_eq!(sub.len(), 102);
        let mut counts = [0; 4];
        sub.iter().for_each(|e| counts[e.label] += 1);
        assert_eq!(counts, [26, 26, 25, 25]);
        assert_eq!(sub, stratified_subset(&raw, 4, 102, 1));
    }

    proptest! {
        #[test]
        fn padding_discipline_and_determinism(
            texts in prop::collection::vec("[a-e ,.!]{0,30}", 1..20),
            max_len in 1usize..12,
        ) {
            let corpus: Vec<_> = texts.iter().map(|t| raw(0, t)).collect();
            let vocab = build_vocab(&corpus, 5, 1).unwrap();
            for ex in &corpus {
                let e = encode(ex, &vocab, max_len);
                prop_assert_eq!(&e, &encode(ex, &vocab, max_len));
                prop_assert_eq!(e.ids.len(), max_len);
                prop_assert!(e.true_len >= 1 && e.true_len <= max_len);
                for (i, &id) in e.ids.iter().enumerate() {
                    prop_assert_eq!(id == PAD_ID, i >= e.true_len);
                }
            }
        }

        #[test]
        fn vocab_round_trip_and_ranking(
            texts in prop::collection::vec("[a-f]{1,3}( [a-f]{1,3}){0,8}", 1..15),
            max_size in 2usize..30,
        ) {
            let corpus: Vec<_> = texts.iter().map(|t| raw(0, t)).collect();
            let vocab = build_vocab(&corpus, max_size, 1).unwrap();
            let mut freq: HashMap<String, usize> = HashMap::new();
            for ex in &corpus {
                for t in tokenize(&ex.title) {
                    *freq.entry(t).or_default() += 1;
                }
            }
            for (i, t) in vocab.tokens().iter().enumerate().skip(2) {
                prop_assert_eq!(vocab.id_of(t), Some(i as u32));
            }
            let real = &vocab.tokens()[2..];
            for w in real.windows(2) {
                let (fa, fb) = (freq[&w[0]], freq[&w[1]]);
                prop_assert!(fa > fb || (fa == fb && w[0] < w[1]));
            }
        }
    }
}
