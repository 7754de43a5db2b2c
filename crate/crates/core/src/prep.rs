//! Corpus ingestion: sentence splitting, Treebank-style tokenization,
//! stopword/punctuation filtering and corpus statistics.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Abbreviations that end in a period but do not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "al.", "approx.", "ca.", "cf.", "co.", "corp.", "dept.", "dr.", "e.g.", "ed.", "eds.", "eq.",
    "eqs.", "fig.", "figs.", "i.e.", "inc.", "jr.", "ltd.", "mr.", "mrs.", "ms.", "no.", "nos.",
    "p.", "pp.", "prof.", "ref.", "refs.", "resp.", "sr.", "st.", "univ.", "viz.", "vol.", "vs.",
    "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.",
    "dec.",
];

/// How lines of an input corpus map onto documents and sentences.
#[derive(Clone, Copy, Debug, Default, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One document per line; lines are sentence-split.
    #[default]
    Doc,
    /// One sentence per line; no splitting.
    Sentence,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "doc" => Ok(Granularity::Doc),
            "sentence" => Ok(Granularity::Sentence),
            other => Err(Error::InvalidConfig(format!(
                "unknown granularity '{other}' (expected doc or sentence)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrepConfig {
    pub lowercase: bool,
    pub stopwords: HashSet<String>,
    pub strip_punctuation: bool,
    pub max_sentence_tokens: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            lowercase: true,
            stopwords: default_stopwords(),
            strip_punctuation: true,
            max_sentence_tokens: 256,
        }
    }
}

impl PrepConfig {
    /// Configuration that only lowercases and drops punctuation tokens.
    pub fn without_stopwords() -> Self {
        PrepConfig {
            stopwords: HashSet::new(),
            ..PrepConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_sentence_tokens == 0 {
            return Err(Error::InvalidConfig(
                "max_sentence_tokens must be positive".into(),
            ));
        }
        if let Some(w) = self.stopwords.iter().find(|w| w.is_empty()) {
            return Err(Error::InvalidConfig(format!("empty stopword {w:?}")));
        }
        if self.lowercase {
            if let Some(w) = self.stopwords.iter().find(|w| w.to_lowercase() != **w) {
                return Err(Error::InvalidConfig(format!(
                    "stopword '{w}' is not lowercased"
                )));
            }
        }
        Ok(())
    }
}

/// The bundled 170-entry English stopword list.
pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

/// Read a stopword file: one entry per line, `#` starts a comment line.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Open {
        path: path.to_owned(),
        source,
    })?;
    Ok(parse_stopwords(&text))
}

fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceRecord {
    pub tokens: Vec<String>,
    pub source_doc_id: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: u64,
    pub sentences: u64,
    pub tokens: u64,
}

impl std::ops::Add for CorpusStats {
    type Output = CorpusStats;

    fn add(self, rhs: CorpusStats) -> CorpusStats {
        CorpusStats {
            documents: self.documents + rhs.documents,
            sentences: self.sentences + rhs.sentences,
            tokens: self.tokens + rhs.tokens,
        }
    }
}

fn is_sentence_final(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '\u{2019}' | '\u{201d}')
}

fn is_opening(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '{' | '\u{2018}' | '\u{201c}')
}

fn is_abbreviation(word: &str) -> bool {
    let word = word.trim_start_matches(is_opening);
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // Initials such as "J." in "J. Smith".
    let mut chars = word.chars();
    matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
}

/// Split a document into sentences.
///
/// A boundary follows `.`, `!` or `?` (plus any closing quotes/brackets) when
/// the next non-space character, after optional opening quotes/brackets, is
/// an uppercase letter or a digit. A period closing a known abbreviation or
/// an initial never ends a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;

    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_sentence_final(c) {
            i += 1;
            continue;
        }

        let mut j = i + 1;
        while j < chars.len() && (is_sentence_final(chars[j].1) || is_closing(chars[j].1)) {
            j += 1;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k == j || k == chars.len() {
            i = j.max(i + 1);
            continue;
        }
        let mut m = k;
        while m < chars.len() && is_opening(chars[m].1) {
            m += 1;
        }
        let starts_new = m < chars.len() && (chars[m].1.is_uppercase() || chars[m].1.is_ascii_digit());
        if !starts_new {
            i = j;
            continue;
        }

        if c == '.' {
            let word_start = text[..pos]
                .rfind(char::is_whitespace)
                .map(|p| p + text[p..].chars().next().map_or(1, char::len_utf8))
                .unwrap_or(0);
            let word = &text[word_start..=pos];
            if is_abbreviation(word) {
                i = j;
                continue;
            }
        }

        let end = if j < chars.len() { chars[j].0 } else { text.len() };
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_owned());
        }
        start = chars[k].0;
        i = k;
    }

    let rest = text[start..].trim();
    if !rest.is_empty() {
        sentences.push(rest.to_owned());
    }
    sentences
}

struct Rule(Regex, &'static str);

fn rules(specs: &[(&str, &'static str)]) -> Vec<Rule> {
    specs
        .iter()
        .map(|(re, rep)| Rule(Regex::new(re).expect("valid tokenizer regex"), rep))
        .collect()
}

static STARTING_QUOTES: LazyLock<Vec<Rule>> = LazyLock::new(|| {
    rules(&[
        (r#"^""#, "``"),
        (r"(``)", " $1 "),
        (r#"([ (\[{<])("|'')"#, "$1 `` "),
    ])
});

static PUNCTUATION: LazyLock<Vec<Rule>> = LazyLock::new(|| {
    rules(&[
        (r"([:,])([^\d])", " $1 $2"),
        (r"([:,])$", " $1 "),
        (r"\.\.\.", " ... "),
        (r"[;@#$%&]", " $0 "),
        (r#"([^.])(\.)([\]\)}>"']*)\s*$"#, "$1 $2$3 "),
        (r"[?!]", " $0 "),
        (r"([^'])' ", "$1 ' "),
        (r"[\]\[\(\)\{\}<>]", " $0 "),
        (r"--", " -- "),
    ])
});

static ENDING_QUOTES: LazyLock<Vec<Rule>> = LazyLock::new(|| {
    rules(&[
        (r#"""#, " '' "),
        (r"(\S)('')", "$1 $2 "),
        (r"([^' ])('[sS]|'[mM]|'[dD]|') ", "$1 $2 "),
        (r"([^' ])('ll|'LL|'re|'RE|'ve|'VE|n't|N'T) ", "$1 $2 "),
    ])
});

static CONTRACTIONS: LazyLock<Vec<Rule>> = LazyLock::new(|| {
    rules(&[
        (r"(?i)\b(can)(not)\b", " $1 $2 "),
        (r"(?i)\b(d)('ye)\b", " $1 $2 "),
        (r"(?i)\b(gim)(me)\b", " $1 $2 "),
        (r"(?i)\b(gon)(na)\b", " $1 $2 "),
        (r"(?i)\b(got)(ta)\b", " $1 $2 "),
        (r"(?i)\b(lem)(me)\b", " $1 $2 "),
        (r"(?i)\b(more)('n)\b", " $1 $2 "),
        (r"(?i)\b(wan)(na)\s", " $1 $2 "),
        (r"(?i) ('t)(is)\b", " $1 $2 "),
        (r"(?i) ('t)(was)\b", " $1 $2 "),
    ])
});

fn apply(rules: &[Rule], mut text: String) -> String {
    for Rule(re, rep) in rules {
        if re.is_match(&text) {
            text = re.replace_all(&text, *rep).into_owned();
        }
    }
    text
}

/// Tokenize one sentence following Penn Treebank conventions.
///
/// Punctuation is detached (the final period only at the end of the
/// sentence), contractions are split (`don't` -> `do n't`), double quotes
/// become `` and '', and word-internal hyphens, periods and commas between
/// digits are kept.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut text = apply(&STARTING_QUOTES, sentence.to_owned());
    text = apply(&PUNCTUATION, text);
    text = format!(" {text} ");
    text = apply(&ENDING_QUOTES, text);
    text = apply(&CONTRACTIONS, text);
    text.split_whitespace().map(str::to_owned).collect()
}

/// Whether `c` counts as punctuation for token filtering.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2010}'..='\u{2027}' | '\u{00ab}' | '\u{00bb}' | '\u{00b7}' | '\u{00a1}' | '\u{00bf}'
        )
}

/// Drop stopwords and pure punctuation tokens, lowercasing first if
/// configured. Order is preserved.
pub fn preprocess<S: AsRef<str>>(tokens: &[S], config: &PrepConfig) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if config.lowercase {
                t.to_lowercase()
            } else {
                t.to_owned()
            }
        })
        .filter(|t| !t.is_empty())
        .filter(|t| !(config.strip_punctuation && t.chars().all(is_punctuation)))
        .filter(|t| !config.stopwords.contains(t))
        .collect()
}

/// Tokenize and preprocess a single raw sentence.
pub fn prepare_sentence(sentence: &str, config: &PrepConfig) -> Vec<String> {
    preprocess(&tokenize(sentence), config)
}

/// Turn one input line into preprocessed sentence records. Empty sentences
/// are dropped and long ones truncated to `max_sentence_tokens`.
pub fn prepare_line(
    line: &str,
    granularity: Granularity,
    config: &PrepConfig,
    doc_id: Option<&str>,
) -> Vec<SentenceRecord> {
    let sentences = match granularity {
        Granularity::Doc => split_sentences(line),
        Granularity::Sentence => {
            let s = line.trim();
            if s.is_empty() {
                Vec::new()
            } else {
                vec![s.to_owned()]
            }
        }
    };

    sentences
        .iter()
        .filter_map(|s| {
            let mut tokens = prepare_sentence(s, config);
            if tokens.is_empty() {
                return None;
            }
            if tokens.len() > config.max_sentence_tokens {
                log::warn!(
                    "truncating sentence of {} tokens to {}",
                    tokens.len(),
                    config.max_sentence_tokens
                );
                tokens.truncate(config.max_sentence_tokens);
            }
            Some(SentenceRecord {
                tokens,
                source_doc_id: doc_id.map(str::to_owned),
            })
        })
        .collect()
}

/// Count documents, sentences and tokens (before stopword removal) of a
/// corpus stream. Blank lines are not documents.
pub fn corpus_stats<I, S>(lines: I, granularity: Granularity) -> io::Result<CorpusStats>
where
    I: IntoIterator<Item = io::Result<S>>,
    S: AsRef<str>,
{
    let mut stats = CorpusStats::default();
    for line in lines {
        let line = line?;
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        stats.documents += 1;
        let sentences = match granularity {
            Granularity::Doc => split_sentences(line),
            Granularity::Sentence => vec![line.trim().to_owned()],
        };
        for s in &sentences {
            stats.sentences += 1;
            stats.tokens += tokenize(s).len() as u64;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn split_examples() {
        assert!(split_sentences("").is_empty());
        assert_eq!(split_sentences("A b. C d."), vec!["A b.", "C d."]);
        assert_eq!(
            split_sentences("It is 3.5 mg. Next."),
            vec!["It is 3.5 mg.", "Next."]
        );
    }

    #[test]
    fn split_guards_abbreviations_and_lowercase() {
        assert_eq!(
            split_sentences("See Fig. 2 for details. Results follow."),
            vec!["See Fig. 2 for details.", "Results follow."]
        );
        assert_eq!(
            split_sentences("Shown by J. Smith et al. Later work agreed."),
            vec!["Shown by J. Smith et al. Later work agreed."]
        );
        assert_eq!(split_sentences("done. then more"), vec!["done. then more"]);
        assert_eq!(
            split_sentences("Really? Yes! \"Quoted.\" (Paren) 5 cases."),
            vec!["Really?", "Yes!", "\"Quoted.\"", "(Paren) 5 cases."]
        );
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Craf is essential."),
            toks(&["Craf", "is", "essential", "."])
        );
        assert_eq!(tokenize("a"), toks(&["a"]));
        assert_eq!(tokenize("(Kras-driven)"), toks(&["(", "Kras-driven", ")"]));
    }

    #[test]
    fn tokenize_treebank_details() {
        assert_eq!(
            tokenize("They don't know it's 1,000 mg, right?"),
            toks(&["They", "do", "n't", "know", "it", "'s", "1,000", "mg", ",", "right", "?"])
        );
        assert_eq!(
            tokenize("He said \"no\" today."),
            toks(&["He", "said", "``", "no", "''", "today", "."])
        );
        assert_eq!(tokenize("I cannot go"), toks(&["I", "can", "not", "go"]));
        assert_eq!(tokenize("e.g. the U.S. case"), toks(&["e.g.", "the", "U.S.", "case"]));
    }

    #[test]
    fn preprocess_examples() {
        let mut config = PrepConfig::without_stopwords();
        config.stopwords.insert("is".into());
        assert_eq!(
            preprocess(&toks(&["Craf", "is", "essential", "."]), &config),
            toks(&["craf", "essential"])
        );
        assert!(preprocess::<String>(&[], &config).is_empty());
        assert!(preprocess(&toks(&["...", "!"]), &config).is_empty());
    }

    #[test]
    fn preprocess_respects_flags() {
        let config = PrepConfig {
            lowercase: false,
            strip_punctuation: false,
            ..PrepConfig::without_stopwords()
        };
        assert_eq!(
            preprocess(&toks(&["The", ".", "X"]), &config),
            toks(&["The", ".", "X"])
        );
    }

    #[test]
    fn bundled_stopwords() {
        let sw = default_stopwords();
        assert_eq!(sw.len(), 170);
        assert!(sw.contains("the") && sw.contains("n't"));
        PrepConfig::default().validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = PrepConfig::without_stopwords();
        c.stopwords.insert("The".into());
        assert!(c.validate().is_err());
        let mut c = PrepConfig::without_stopwords();
        c.max_sentence_tokens = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn stats_examples() {
        let one = corpus_stats([Ok::<_, io::Error>("A b. C d.")], Granularity::Doc).unwrap();
        assert_eq!(
            one,
            CorpusStats {
                documents: 1,
                sentences: 2,
                tokens: 6
            }
        );
        let none = corpus_stats(Vec::<io::Result<String>>::new(), Granularity::Doc).unwrap();
        assert_eq!(none, CorpusStats::default());
        let two = corpus_stats(
            [Ok::<_, io::Error>("A b. C d."), Ok("A b. C d.")],
            Granularity::Doc,
        )
        .unwrap();
        assert_eq!(two, one + one);
    }

    #[test]
    fn stats_surfaces_stream_errors() {
        let lines = vec![Ok("A b.".to_string()), Err(io::Error::other("boom"))];
        assert!(corpus_stats(lines, Granularity::Doc).is_err());
    }

    #[test]
    fn prepare_line_truncates_and_drops_empty() {
        let config = PrepConfig {
            max_sentence_tokens: 2,
            ..PrepConfig::default()
        };
        let recs = prepare_line(
            "Alpha beta gamma delta. The of.",
            Granularity::Doc,
            &config,
            Some("d1"),
        );
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].tokens, toks(&["alpha", "beta"]));
        assert_eq!(recs[0].source_doc_id.as_deref(), Some("d1"));
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(words in prop::collection::vec("[A-Za-z.,!']{1,6}", 0..12)) {
            let config = PrepConfig::default();
            let once = preprocess(&words, &config);
            prop_assert_eq!(preprocess(&once, &config), once);
        }

        #[test]
        fn split_preserves_non_whitespace(text in "[A-Za-z0-9 .!?]{0,60}") {
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            let joined: String = split_sentences(&text).concat();
            prop_assert_eq!(strip(&joined), strip(&text));
        }

        #[test]
        fn stats_additive(a in "[A-Za-z .]{0,40}", b in "[A-Za-z .]{0,40}") {
            let sa = corpus_stats([Ok::<_, io::Error>(a.clone())], Granularity::Doc).unwrap();
            let sb = corpus_stats([Ok::<_, io::Error>(b.clone())], Granularity::Doc).unwrap();
            let both = corpus_stats([Ok::<_, io::Error>(a), Ok(b)], Granularity::Doc).unwrap();
            prop_assert_eq!(both, sa + sb);
        }
    }
}
