//! Statement and function vectors: a frozen pretrained encoder behind an HTTP
//! client, or a trainable mean of token vectors.

mod cache;
mod client;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::codegraph::StatementGraph;
use crate::gnn::Features;

pub use cache::{content_hash, EmbeddingCache};
pub use client::{EncoderClient, RetryPolicy};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("encoder transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("encoder returned {got}-dimensional vectors, expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("encoder response malformed: {0}")]
    Protocol(String),
    #[error("graph line {line} is outside the function text ({lines} lines)")]
    LineOutOfRange { line: usize, lines: usize },
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[serde(alias = "pretrained")]
    PretrainedTransformer,
    #[default]
    #[serde(alias = "trainable")]
    TrainableAverage,
}

impl FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pretrained" | "pretrained_transformer" => Ok(Self::PretrainedTransformer),
            "trainable" | "trainable_average" => Ok(Self::TrainableAverage),
            other => Err(format!("unknown backend {other:?} (expected pretrained or trainable)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    SubwordBpe,
    WhitespacePunct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub backend: Backend,
    /// Vector width. For the pretrained backend this must match what the
    /// service advertises.
    pub dim: usize,
    pub max_tokens_function: usize,
    pub max_tokens_statement: usize,
    pub cache_dir: Option<PathBuf>,
    /// Base URL of the encoder service.
    pub endpoint: Option<String>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backend: Backend::TrainableAverage,
            dim: 128,
            max_tokens_function: 512,
            max_tokens_statement: 64,
            cache_dir: None,
            endpoint: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::Config("dim must be positive".into()));
        }
        if self.max_tokens_function < 2 || self.max_tokens_statement < 2 {
            return Err(EmbedError::Config("max_tokens must exceed 1".into()));
        }
        Ok(())
    }
}

/// Function vector plus one row per graph node (ascending line order).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub function_vec: Array1<f64>,
    pub stmt_matrix: Array2<f64>,
}

impl EmbeddingSet {
    pub fn into_features(self) -> Features {
        Features::Dense { func: self.function_vec, stmts: self.stmt_matrix }
    }
}

/// Byte ranges of whitespace/punctuation tokens. Identifier characters are
/// alphanumerics and `_`; every other non-space character is a token.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let word = c.is_alphanumeric() || c == '_';
        if word {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            spans.push((s, i));
        }
        if !c.is_whitespace() {
            spans.push((i, i + c.len_utf8()));
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

pub fn tokenize_whitespace_punct(text: &str) -> Vec<String> {
    token_spans(text).into_iter().map(|(a, b)| text[a..b].to_string()).collect()
}

/// Tokenise with the chosen scheme; the subword scheme asks the encoder
/// service.
pub fn tokenize(text: &str, scheme: TokenScheme, client: Option<&EncoderClient>) -> Result<Vec<String>, EmbedError> {
    match scheme {
        TokenScheme::WhitespacePunct => Ok(tokenize_whitespace_punct(text)),
        TokenScheme::SubwordBpe => {
            let client = client.ok_or_else(|| EmbedError::Config("subword tokenisation needs an encoder endpoint".into()))?;
            client.tokenize(text)
        }
    }
}

/// Keep the first `max_tokens` tokens of `text`, cutting at the end of the
/// last kept token so the original spelling survives.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let spans = token_spans(text);
    if spans.len() <= max_tokens {
        return text;
    }
    match max_tokens {
        0 => "",
        k => &text[..spans[k - 1].1],
    }
}

/// Statement texts for each graph node, in node order.
pub fn statement_texts<'a>(function_text: &'a str, graph: &StatementGraph) -> Result<Vec<&'a str>, EmbedError> {
    let lines: Vec<&str> = function_text.lines().collect();
    graph
        .nodes
        .iter()
        .map(|n| {
            lines
                .get(n.line_no.wrapping_sub(1))
                .map(|l| l.trim())
                .ok_or(EmbedError::LineOutOfRange { line: n.line_no, lines: lines.len() })
        })
        .collect()
}

/// Token vocabulary for the trainable backend. Id 0 is the shared unknown
/// token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

pub const UNK: &str = "<unk>";

impl Vocab {
    /// Tokens seen at least `min_count` times, ordered by descending count
    /// then lexicographically, capped at `max_size` entries (UNK included).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize, max_size: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for tok in tokenize_whitespace_punct(t) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(ranked.into_iter().take(max_size.saturating_sub(1)).map(|(t, _)| t));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
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

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Ids of the first `max_tokens` tokens of `text`.
    pub fn ids(&self, text: &str, max_tokens: usize) -> Vec<usize> {
        tokenize_whitespace_punct(text).iter().take(max_tokens).map(|t| self.id(t)).collect()
    }
}

/// Token-id features for the trainable backend.
pub fn token_features(
    function_text: &str,
    graph: &StatementGraph,
    vocab: &Vocab,
    config: &EncoderConfig,
) -> Result<Features, EmbedError> {
    let stmts = statement_texts(function_text, graph)?
        .into_iter()
        .map(|t| vocab.ids(t, config.max_tokens_statement))
        .collect();
    Ok(Features::Tokens { func: vocab.ids(function_text, config.max_tokens_function), stmts })
}

/// Vectors from a token table: mean of the rows of each text's tokens.
pub fn encode_trainable(
    function_text: &str,
    graph: &StatementGraph,
    vocab: &Vocab,
    table: &Array2<f64>,
    config: &EncoderConfig,
) -> Result<EmbeddingSet, EmbedError> {
    if table.ncols() != config.dim {
        return Err(EmbedError::DimMismatch { expected: config.dim, got: table.ncols() });
    }
    let Features::Tokens { func, stmts } = token_features(function_text, graph, vocab, config)? else {
        unreachable!("token_features returns token ids")
    };
    let mean = |ids: &[usize]| -> Array1<f64> {
        if ids.is_empty() {
            return table.row(0).to_owned();
        }
        if ids.iter().all(|t| *t == ids[0]) {
            return table.row(ids[0]).to_owned();
        }
        let mut v = Array1::zeros(table.ncols());
        for &t in ids {
            v += &table.row(t.min(table.nrows() - 1));
        }
        v / ids.len() as f64
    };
    let mut m = Array2::zeros((stmts.len(), table.ncols()));
    for (i, ids) in stmts.iter().enumerate() {
        m.row_mut(i).assign(&mean(ids));
    }
    Ok(EmbeddingSet { function_vec: mean(&func), stmt_matrix: m })
}

/// Input text for the encoder: a separator token in place of the empty
/// natural-language slot, then the truncated code.
pub fn pretrained_input(code: &str, max_tokens: usize) -> String {
    format!("</s> {}", truncate_tokens(code, max_tokens.saturating_sub(1)))
}

/// Vectors from the frozen encoder service, with optional caching.
pub fn encode_pretrained(
    function_text: &str,
    graph: &StatementGraph,
    config: &EncoderConfig,
    client: &EncoderClient,
    cache: Option<&EmbeddingCache>,
) -> Result<EmbeddingSet, EmbedError> {
    let mut texts = vec![pretrained_input(function_text, config.max_tokens_function)];
    for s in statement_texts(function_text, graph)? {
        texts.push(pretrained_input(s, config.max_tokens_statement));
    }
    let tag = client.model_tag();
    let mut vectors: Vec<Option<Vec<f32>>> = texts
        .iter()
        .map(|t| cache.and_then(|c| c.lookup(&content_hash(&tag, t), config.dim)))
        .collect();
    let missing: Vec<usize> = (0..texts.len()).filter(|&i| vectors[i].is_none()).collect();
    if !missing.is_empty() {
        let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
        let fresh = client.embed(&batch)?;
        for (&i, v) in missing.iter().zip(fresh) {
            if v.len() != config.dim {
                return Err(EmbedError::DimMismatch { expected: config.dim, got: v.len() });
            }
            if let Some(c) = cache {
                c.store(&content_hash(&tag, &texts[i]), &v)?;
            }
            vectors[i] = Some(v);
        }
    }
    let vectors: Vec<Vec<f32>> = vectors.into_iter().map(|v| v.expect("filled above")).collect();
    let n = vectors.len() - 1;
    let mut m = Array2::zeros((n, config.dim));
    for (i, v) in vectors[1..].iter().enumerate() {
        for (k, x) in v.iter().enumerate() {
            m[[i, k]] = f64::from(*x);
        }
    }
    let func = vectors[0].iter().map(|x| f64::from(*x)).collect();
    Ok(EmbeddingSet { function_vec: func, stmt_matrix: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegraph::build_graph_builtin;
    use proptest::prelude::*;

    #[test]
    fn whitespace_punct_split() {
        assert_eq!(tokenize_whitespace_punct("a = b + 1;"), ["a", "=", "b", "+", "1", ";"]);
        assert!(tokenize_whitespace_punct("").is_empty());
        assert_eq!(tokenize_whitespace_punct("p->len==0"), ["p", "-", ">", "len", "=", "=", "0"]);
        assert_eq!(tokenize_whitespace_punct("add_one(x)"), ["add_one", "(", "x", ")"]);
    }

    #[test]
    fn truncation_keeps_original_text() {
        assert_eq!(truncate_tokens("foo( a,  b )", 3), "foo( a");
        assert_eq!(truncate_tokens("x;", 5), "x;");
        assert_eq!(pretrained_input("a b c", 3), "</s> a b");
    }

    #[test]
    fn vocab_orders_by_count() {
        let v = Vocab::build(["a = b;", "a = c;"], 1, 100);
        assert_eq!(v.tokens()[0], UNK);
        assert_eq!(&v.tokens()[1..4], [";", "=", "a"]);
        assert_eq!(v.id("zzz"), 0);
        let capped = Vocab::build(["a = b;", "a = c;"], 2, 100);
        assert_eq!(capped.len(), 4);
        assert_eq!(Vocab::build(["a b c d"], 1, 2).len(), 2);
        let back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id(";"), 1);
    }

    #[test]
    fn trainable_rows_align_with_nodes() {
        let code = "int f(int a)\n{\n  int b = a;\n\n  return b;\n}";
        let g = build_graph_builtin("f", code);
        let v = Vocab::build([code], 1, 100);
        let cfg = EncoderConfig { dim: 4, ..Default::default() };
        let table = Array2::from_shape_fn((v.len(), 4), |(r, c)| (r * 4 + c) as f64);
        let e = encode_trainable(code, &g, &v, &table, &cfg).unwrap();
        assert_eq!(e.stmt_matrix.nrows(), g.len());
        let unk = encode_trainable("zz qq\n", &build_graph_builtin("u", "zz qq\n"), &v, &table, &cfg).unwrap();
        assert_eq!(unk.stmt_matrix.row(0), table.row(0));
        let scaled = encode_trainable(code, &g, &v, &(&table * 3.0), &cfg).unwrap();
        let diff = (&scaled.stmt_matrix - &(&e.stmt_matrix * 3.0)).mapv(f64::abs);
        assert!(diff.iter().all(|d| *d < 1e-12));
    }

    proptest! {
        #[test]
        fn tokens_reassemble_without_whitespace(s in "[ a-z0-9_;=+(){}*-]{0,40}") {
            let joined: String = tokenize_whitespace_punct(&s).concat();
            let stripped: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, stripped);
        }
    }
}
