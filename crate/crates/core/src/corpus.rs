//! Corpus ingestion and tokenization.
//!
//! Geotagged corpora are UTF-8, one record per line, tab separated:
//! `id <TAB> lat <TAB> lon <TAB> text`. Untagged documents are `id <TAB> text`.
//! Lines whose id field starts with `#` are comments; blank lines are ignored.
//! An optional header line `id <TAB> lat <TAB> lon <TAB> text` may open a geotagged file.

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geo::GeoPoint;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: io::Error },
    #[error("read error at line {line}: {source}")]
    Read { line: usize, source: io::Error },
    #[error("malformed header at line {line}: expected `id\\tlat\\tlon\\ttext`, found {found:?}")]
    MalformedHeader { line: usize, found: String },
    #[error("{malformed} of {records} records are malformed (more than half); aborting")]
    TooManyMalformed { malformed: usize, records: usize },
    #[error("invalid post: {0}")]
    InvalidPost(String),
}

/// A single microblog post, optionally geotagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Post {
    id: String,
    text: String,
    location: Option<GeoPoint>,
}

impl Post {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        location: Option<GeoPoint>,
    ) -> Result<Self, CorpusError> {
        let (id, text) = (id.into(), text.into());
        if id.is_empty() {
            return Err(CorpusError::InvalidPost("empty id".into()));
        }
        if text.trim().is_empty() {
            return Err(CorpusError::InvalidPost(format!("post {id} has empty text")));
        }
        Ok(Self { id, text, location })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn location(&self) -> Option<GeoPoint> {
        self.location
    }
}

/// A tokenized text, e.g. all posts of one blog concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub gold_location: Option<GeoPoint>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: &str, gold_location: Option<GeoPoint>) -> Self {
        Self { id: id.into(), tokens: tokenize(text), gold_location }
    }

    pub fn from_tokens(id: impl Into<String>, tokens: Vec<String>, gold_location: Option<GeoPoint>) -> Self {
        let tokens = tokens.into_iter().flat_map(|t| tokenize(&t)).collect();
        Self { id: id.into(), tokens, gold_location }
    }

    pub fn from_post(post: &Post) -> Self {
        Self::new(post.id.clone(), &post.text, post.location)
    }
}

/// One token instance observed at a geotagged post's position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenOccurrence {
    pub token: String,
    pub location: GeoPoint,
    pub post_id: String,
}

fn keeps_prefix(c: char) -> bool {
    c == '#' || c == '@'
}

/// Lowercases, splits on whitespace and strips surrounding punctuation.
///
/// A single `#` or `@` directly in front of the word is kept so hash tags and
/// user names survive. Interior characters (hyphens, apostrophes) are untouched.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(clean_token).collect()
}

fn clean_token(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    let start = lower.char_indices().find(|(_, c)| c.is_alphanumeric()).map(|(i, _)| i)?;
    let (end, last) = lower.char_indices().rev().find(|(_, c)| c.is_alphanumeric())?;
    let core = &lower[start..end + last.len_utf8()];
    match lower[..start].chars().next_back() {
        Some(p) if keeps_prefix(p) => Some(format!("{p}{core}")),
        _ => Some(core.to_string()),
    }
}

/// Every token instance of every located post, in post order.
pub fn occurrences<'a, I>(posts: I) -> impl Iterator<Item = TokenOccurrence> + 'a
where
    I: IntoIterator<Item = &'a Post>,
    I::IntoIter: 'a,
{
    posts.into_iter().flat_map(|post| {
        let located = post.location.map(|loc| (loc, tokenize(&post.text)));
        located.into_iter().flat_map(move |(location, tokens)| {
            tokens.into_iter().map(move |token| TokenOccurrence { token, location, post_id: post.id.clone() })
        })
    })
}

/// Streaming reader over a geotagged corpus.
///
/// Records with unparseable or out-of-range coordinates are skipped and counted.
/// When the input is exhausted and more than half of all records were malformed,
/// the iterator yields a final [`CorpusError::TooManyMalformed`].
pub struct GeotaggedReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    records: usize,
    skipped: usize,
    finished: bool,
}

impl<R: BufRead> GeotaggedReader<R> {
    pub fn new(reader: R) -> Self {
        Self { lines: reader.lines(), line_no: 0, records: 0, skipped: 0, finished: false }
    }

    /// Records skipped so far.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Non-comment, non-blank records seen so far.
    pub fn records(&self) -> usize {
        self.records
    }

    fn parse(&mut self, line: &str) -> Result<Option<Post>, CorpusError> {
        if line.trim().is_empty() || line.starts_with('#') {
            return Ok(None);
        }
        if self.records == 0 && self.skipped == 0 && line.split('\t').next() == Some("id") {
            return if line.trim_end() == "id\tlat\tlon\ttext" {
                Ok(None)
            } else {
                Err(CorpusError::MalformedHeader { line: self.line_no, found: line.to_string() })
            };
        }
        self.records += 1;
        match parse_geotagged(line) {
            Some(post) => Ok(Some(post)),
            None => {
                self.skipped += 1;
                log::debug!("skipping malformed record at line {}", self.line_no);
                Ok(None)
            }
        }
    }
}

fn parse_geotagged(line: &str) -> Option<Post> {
    let mut fields = line.splitn(4, '\t');
    let id = fields.next()?;
    let lat = fields.next()?.trim().parse::<f64>().ok()?;
    let lon = fields.next()?.trim().parse::<f64>().ok()?;
    let text = fields.next()?;
    let location = GeoPoint::new(lat, lon).ok()?;
    Post::new(id, text, Some(location)).ok()
}

impl<R: BufRead> Iterator for GeotaggedReader<R> {
    type Item = Result<Post, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        loop {
            match self.lines.next() {
                Some(Ok(line)) => {
                    self.line_no += 1;
                    match self.parse(&line) {
                        Ok(Some(post)) => return Some(Ok(post)),
                        Ok(None) => continue,
                        Err(e) => {
                            self.finished = true;
                            return Some(Err(e));
                        }
                    }
                }
                Some(Err(source)) => {
                    self.finished = true;
                    return Some(Err(CorpusError::Read { line: self.line_no + 1, source }));
                }
                None => {
                    self.finished = true;
                    if self.skipped * 2 > self.records {
                        return Some(Err(CorpusError::TooManyMalformed {
                            malformed: self.skipped,
                            records: self.records,
                        }));
                    }
                    return None;
                }
            }
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path).map(BufReader::new).map_err(|source| CorpusError::Open { path: path.to_path_buf(), source })
}

/// Opens a geotagged corpus for streaming.
pub fn read_geotagged(path: impl AsRef<Path>) -> Result<GeotaggedReader<BufReader<File>>, CorpusError> {
    Ok(GeotaggedReader::new(open(path.as_ref())?))
}

/// A fully loaded geotagged corpus with its skip count.
#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub posts: Vec<Post>,
    pub skipped: usize,
}

pub fn load_geotagged(path: impl AsRef<Path>) -> Result<LoadedCorpus, CorpusError> {
    let mut reader = read_geotagged(path)?;
    let posts = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(LoadedCorpus { posts, skipped: reader.skipped() })
}

/// Reads documents from either format, line by line.
///
/// A line with four fields whose second and third parse as a valid coordinate
/// becomes a document with a gold location; anything else is read as `id <TAB> text`.
/// Lines without a tab or with empty text are skipped.
pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let reader = open(path.as_ref())?;
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Read { line: i + 1, source })?;
        if line.trim().is_empty() || line.starts_with('#') || line.trim_end() == "id\tlat\tlon\ttext" {
            continue;
        }
        if let Some(post) = parse_geotagged(&line) {
            docs.push(Document::from_post(&post));
            continue;
        }
        match line.split_once('\t') {
            Some((id, text)) if !id.is_empty() && !text.trim().is_empty() => docs.push(Document::new(id, text, None)),
            _ => log::warn!("skipping malformed document at line {}", i + 1),
        }
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("Bor i Falköping!"), ["bor", "i", "falköping"]);
        assert_eq!(toks("#lundakarneval är kul"), ["#lundakarneval", "är", "kul"]);
        assert!(toks("  ").is_empty());
        assert_eq!(toks("(@Kalle: \"ståckhålm-resan\"..."), ["@kalle", "ståckhålm-resan"]);
        assert_eq!(toks("## ... — !!"), Vec::<String>::new());
        assert_eq!(toks("!!#tag?"), ["#tag"]);
    }

    #[test]
    fn reader_skips_bad_coordinates() {
        let data = "# comment\np1\t59.3\t18.0\thej stockholm\np2\t91\t18.0\tfel\np3\t57.7\t11.9\tgöteborg\n\n";
        let mut r = GeotaggedReader::new(Cursor::new(data));
        let posts: Vec<_> = r.by_ref().collect::<Result<_, _>>().unwrap();
        assert_eq!(posts.len(), 2);
        assert_eq!(r.skipped(), 1);
        assert_eq!(posts[1].id(), "p3");
    }

    #[test]
    fn reader_well_formed_and_empty() {
        let data = "a\t1\t2\tx\nb\t3\t4\ty\nc\t5\t6\tz\n";
        assert_eq!(GeotaggedReader::new(Cursor::new(data)).count(), 3);
        assert_eq!(GeotaggedReader::new(Cursor::new("")).count(), 0);
    }

    #[test]
    fn reader_header_handling() {
        let ok = "id\tlat\tlon\ttext\na\t1\t2\tx\n";
        assert_eq!(GeotaggedReader::new(Cursor::new(ok)).collect::<Result<Vec<_>, _>>().unwrap().len(), 1);
        let bad = "id\tlatitude\tlon\ttext\na\t1\t2\tx\n";
        let first = GeotaggedReader::new(Cursor::new(bad)).next().unwrap();
        assert!(matches!(first, Err(CorpusError::MalformedHeader { line: 1, .. })));
    }

    #[test]
    fn reader_aborts_when_mostly_malformed() {
        let data = "a\t1\t2\tx\nb\tnope\t4\ty\nc\t5\n";
        let res: Result<Vec<_>, _> = GeotaggedReader::new(Cursor::new(data)).collect();
        assert!(matches!(res, Err(CorpusError::TooManyMalformed { malformed: 2, records: 3 })));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(read_geotagged("/nonexistent/corpus.tsv"), Err(CorpusError::Open { .. })));
    }

    #[test]
    fn occurrences_per_instance() {
        let p = GeoPoint::new(59.0, 18.0).unwrap();
        let posts = vec![
            Post::new("1", "a b a", Some(p)).unwrap(),
            Post::new("2", "ignored", None).unwrap(),
            Post::new("3", "c", Some(p)).unwrap(),
        ];
        let occ: Vec<_> = occurrences(&posts).map(|o| (o.token, o.post_id)).collect();
        let expect: Vec<_> = [("a", "1"), ("b", "1"), ("a", "1"), ("c", "3")]
            .iter()
            .map(|(t, id)| (t.to_string(), id.to_string()))
            .collect();
        assert_eq!(occ, expect);
    }

    #[test]
    fn post_invariants() {
        assert!(Post::new("", "x", None).is_err());
        assert!(Post::new("a", "   ", None).is_err());
    }
}
