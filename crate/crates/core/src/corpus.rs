//! Ingestion of Q&A data-dump posts, tag filtering and the on-disk corpus store.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("malformed JSON on line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("corpus schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("corpus file is missing its header line")]
    MissingHeader,
    #[error("duplicate post id {0}")]
    DuplicateId(u64),
    #[error("invalid tag filter: {0}")]
    InvalidFilter(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostKind {
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: u64,
    pub kind: PostKind,
    #[serde(default)]
    pub parent_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub body_html: String,
    pub body_text: String,
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub created_at: Option<String>,
}

impl Post {
    /// Text fed to the feature extractor: title (if any) followed by the body.
    pub fn document_text(&self, include_title: bool) -> String {
        match (&self.title, include_title) {
            (Some(title), true) if !title.is_empty() => format!("{}\n{}", title, self.body_text),
            _ => self.body_text.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DumpFormat {
    DumpXml,
    Jsonl,
}

impl std::str::FromStr for DumpFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dump-xml" | "xml" => Ok(DumpFormat::DumpXml),
            "jsonl" | "json" => Ok(DumpFormat::Jsonl),
            other => Err(format!("unknown dump format `{other}` (expected dump-xml or jsonl)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtmlOptions {
    /// Keep the text of `<code>`/`<pre>` blocks in `body_text`.
    pub keep_code: bool,
}

impl Default for HtmlOptions {
    fn default() -> Self {
        Self { keep_code: true }
    }
}

/// Row that could not be turned into a post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// Byte offset (XML) or 1-based line number (JSONL).
    pub location: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ParseReport {
    pub posts: Vec<Post>,
    /// Rows whose post type is neither question nor answer.
    pub skipped_types: usize,
    /// Answers whose parent question is not in the stream.
    pub orphan_answers: usize,
    pub row_errors: Vec<RowError>,
}

/// Parses a dump stream into posts. Answers inherit the tags of their parent
/// question when the parent is present anywhere in the same stream.
pub fn parse_dump<R: BufRead>(
    input: R,
    format: DumpFormat,
    html: HtmlOptions,
) -> Result<ParseReport, CorpusError> {
    let mut report = match format {
        DumpFormat::DumpXml => parse_xml(input, html)?,
        DumpFormat::Jsonl => parse_jsonl(input, html)?,
    };
    resolve_answer_tags(&mut report);
    Ok(report)
}

fn resolve_answer_tags(report: &mut ParseReport) {
    let question_tags: HashMap<u64, BTreeSet<String>> = report
        .posts
        .iter()
        .filter(|p| p.kind == PostKind::Question)
        .map(|p| (p.id, p.tags.clone()))
        .collect();
    for post in report.posts.iter_mut().filter(|p| p.kind == PostKind::Answer) {
        match post.parent_id.and_then(|parent| question_tags.get(&parent)) {
            Some(tags) => post.tags = tags.clone(),
            None => {
                post.tags.clear();
                report.orphan_answers += 1;
                log::warn!("answer {} has no parent question in the stream", post.id);
            }
        }
    }
}

struct RowBuilder {
    seen: HashSet<u64>,
    html: HtmlOptions,
}

impl RowBuilder {
    #[allow(clippy::too_many_arguments)]
    fn build(
        &mut self,
        id: Option<&str>,
        post_type: Option<&str>,
        parent: Option<&str>,
        body: Option<String>,
        tags: Option<&str>,
        title: Option<String>,
        created_at: Option<String>,
    ) -> Result<Option<Post>, String> {
        let id: u64 = id
            .ok_or("missing attribute Id")?
            .trim()
            .parse()
            .map_err(|_| "Id is not a positive integer".to_string())?;
        if id == 0 {
            return Err("Id must be positive".into());
        }
        let kind = match post_type.ok_or("missing attribute PostTypeId")?.trim() {
            "1" => PostKind::Question,
            "2" => PostKind::Answer,
            _ => return Ok(None),
        };
        let body_html = body.ok_or("missing attribute Body")?;
        let parent_id = match kind {
            PostKind::Question => None,
            PostKind::Answer => Some(
                parent
                    .ok_or("answer is missing attribute ParentId")?
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| "ParentId is not a positive integer".to_string())?,
            ),
        };
        if !self.seen.insert(id) {
            return Err(format!("duplicate post id {id}"));
        }
        let tags = match kind {
            PostKind::Question => tags.map(parse_tag_string).unwrap_or_default(),
            PostKind::Answer => BTreeSet::new(),
        };
        Ok(Some(Post {
            id,
            kind,
            parent_id,
            title: title.filter(|t| !t.is_empty()),
            body_text: strip_html(&body_html, self.html.keep_code),
            body_html,
            tags,
            created_at,
        }))
    }
}

fn parse_xml<R: BufRead>(input: R, html: HtmlOptions) -> Result<ParseReport, CorpusError> {
    let mut reader = Reader::from_reader(input);
    let mut builder = RowBuilder { seen: HashSet::new(), html };
    let mut report = ParseReport::default();
    let mut buf = Vec::new();
    loop {
        let offset = reader.buffer_position();
        match reader.read_event_into(&mut buf) {
            Ok(Event::Eof) => break,
            Ok(Event::Empty(e)) | Ok(Event::Start(e)) if e.name().as_ref() == b"row" => {
                match xml_row(&mut builder, &e) {
                    Ok(Some(post)) => report.posts.push(post),
                    Ok(None) => report.skipped_types += 1,
                    Err(message) => report.row_errors.push(RowError { location: offset, message }),
                }
            }
            Ok(_) => {}
            Err(err) => {
                return Err(CorpusError::Xml {
                    offset: reader.error_position(),
                    message: err.to_string(),
                })
            }
        }
        buf.clear();
    }
    Ok(report)
}

fn xml_row(builder: &mut RowBuilder, element: &BytesStart<'_>) -> Result<Option<Post>, String> {
    let mut attrs: HashMap<Vec<u8>, String> = HashMap::new();
    for attr in element.attributes() {
        let attr = attr.map_err(|e| format!("bad attribute: {e}"))?;
        let value = attr
            .unescape_value()
            .map_err(|e| format!("bad attribute value: {e}"))?
            .into_owned();
        attrs.insert(attr.key.as_ref().to_vec(), value);
    }
    let get = |k: &str| attrs.get(k.as_bytes()).map(String::as_str);
    builder.build(
        get("Id"),
        get("PostTypeId"),
        get("ParentId"),
        get("Body").map(str::to_string),
        get("Tags"),
        get("Title").map(str::to_string),
        get("CreationDate").map(str::to_string),
    )
}

#[derive(Deserialize)]
struct JsonRow {
    id: Option<u64>,
    kind: Option<String>,
    #[serde(default)]
    parent_id: Option<u64>,
    #[serde(default)]
    tags: Vec<String>,
    body_html: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    created_at: Option<String>,
}

fn parse_jsonl<R: BufRead>(input: R, html: HtmlOptions) -> Result<ParseReport, CorpusError> {
    let mut builder = RowBuilder { seen: HashSet::new(), html };
    let mut report = ParseReport::default();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = row.id.map(|v| v.to_string());
        let post_type = row.kind.as_deref().map(|k| match k {
            "question" => "1",
            "answer" => "2",
            _ => "other",
        });
        let parent = row.parent_id.map(|v| v.to_string());
        let tags = row.tags.iter().map(|t| format!("<{t}>")).collect::<String>();
        match builder.build(
            id.as_deref(),
            post_type,
            parent.as_deref(),
            row.body_html,
            Some(&tags),
            row.title,
            row.created_at,
        ) {
            Ok(Some(post)) => report.posts.push(post),
            Ok(None) => report.skipped_types += 1,
            Err(message) => report.row_errors.push(RowError { location: line_no as u64, message }),
        }
    }
    Ok(report)
}

/// Splits a dump tag string (`<a><b>` or `|a|b|`) into a lowercase set.
pub fn parse_tag_string(raw: &str) -> BTreeSet<String> {
    let raw = raw.trim();
    let parts: Box<dyn Iterator<Item = &str>> = if raw.starts_with('<') {
        Box::new(raw.split(['<', '>']))
    } else {
        Box::new(raw.split('|'))
    };
    parts
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

const INLINE_TAGS: &[&str] = &[
    "a", "abbr", "b", "code", "em", "i", "kbd", "s", "small", "span", "strike", "strong", "sub",
    "sup", "tt", "u",
];

/// Removes markup, decodes entities and collapses whitespace.
///
/// Never fails: a `<` without a closing `>` and a stray `>` are treated as
/// word delimiters, so no markup character survives in the output.
pub fn strip_html(body_html: &str, keep_code: bool) -> String {
    let mut out = String::with_capacity(body_html.len());
    let mut code_depth = 0usize;
    let mut rest = body_html;
    while let Some(pos) = rest.find(['<', '>']) {
        let (text, tail) = rest.split_at(pos);
        if keep_code || code_depth == 0 {
            out.push_str(&html_escape::decode_html_entities(text));
        }
        if let Some(after) = tail.strip_prefix('>') {
            out.push(' ');
            rest = after;
            continue;
        }
        let Some(end) = tail.find('>') else {
            out.push(' ');
            rest = &tail[1..];
            continue;
        };
        let inner = &tail[1..end];
        rest = &tail[end + 1..];

        let closing = inner.starts_with('/');
        let name: String = inner
            .trim_start_matches('/')
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        if name == "code" || name == "pre" {
            if closing {
                code_depth = code_depth.saturating_sub(1);
            } else if !inner.trim_end().ends_with('/') {
                code_depth += 1;
            }
        }
        if !INLINE_TAGS.contains(&name.as_str()) {
            out.push(' ');
        }
    }
    if keep_code || code_depth == 0 {
        out.push_str(&html_escape::decode_html_entities(rest));
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keeps posts tagged with `required_tag` and at least one of `any_of_tags`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagFilter {
    pub required_tag: String,
    pub any_of_tags: BTreeSet<String>,
}

impl TagFilter {
    pub fn new<I, S>(required_tag: &str, any_of_tags: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let required_tag = required_tag.trim().to_lowercase();
        if required_tag.is_empty() {
            return Err(CorpusError::InvalidFilter("required tag is empty".into()));
        }
        let mut any = BTreeSet::new();
        for tag in any_of_tags {
            let tag = tag.as_ref().trim().to_lowercase();
            if tag.is_empty() {
                return Err(CorpusError::InvalidFilter("empty tag in any-of set".into()));
            }
            any.insert(tag);
        }
        if any.is_empty() {
            return Err(CorpusError::InvalidFilter("any-of tag set is empty".into()));
        }
        Ok(Self { required_tag, any_of_tags: any })
    }

    /// Parses `required:any1,any2,...`.
    pub fn parse(spec: &str) -> Result<Self, CorpusError> {
        let (required, any) = spec
            .split_once(':')
            .ok_or_else(|| CorpusError::InvalidFilter(format!("expected `required:a,b,..`, got `{spec}`")))?;
        Self::new(required, any.split(','))
    }

    pub fn matches(&self, tags: &BTreeSet<String>) -> bool {
        tags.contains(&self.required_tag) && self.any_of_tags.iter().any(|t| tags.contains(t))
    }
}

pub fn filter_by_tags(posts: &[Post], filter: &TagFilter) -> Vec<Post> {
    posts.iter().filter(|p| filter.matches(&p.tags)).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub total: usize,
    pub questions: usize,
    pub answers: usize,
}

/// Working set of posts, ordered by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    posts: Vec<Post>,
    filter: Option<TagFilter>,
    source: String,
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    schema_version: u32,
    filter: Option<TagFilter>,
    source: String,
}

impl Corpus {
    pub fn new(
        mut posts: Vec<Post>,
        filter: Option<TagFilter>,
        source: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        posts.sort_by_key(|p| p.id);
        if let Some(w) = posts.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(CorpusError::DuplicateId(w[0].id));
        }
        Ok(Self { posts, filter, source: source.into() })
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn filter(&self) -> Option<&TagFilter> {
        self.filter.as_ref()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn get(&self, id: u64) -> Option<&Post> {
        self.posts.binary_search_by_key(&id, |p| p.id).ok().map(|i| &self.posts[i])
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn counts(&self) -> CorpusCounts {
        let questions = self.posts.iter().filter(|p| p.kind == PostKind::Question).count();
        CorpusCounts { total: self.posts.len(), questions, answers: self.posts.len() - questions }
    }

    /// Returns a new corpus restricted by `filter`, recording it as provenance.
    pub fn filtered(&self, filter: &TagFilter) -> Corpus {
        Corpus {
            posts: filter_by_tags(&self.posts, filter),
            filter: Some(filter.clone()),
            source: self.source.clone(),
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), CorpusError> {
        let header = CorpusHeader {
            schema_version: CORPUS_SCHEMA_VERSION,
            filter: self.filter.clone(),
            source: self.source.clone(),
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for post in &self.posts {
            serde_json::to_writer(&mut out, post).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Corpus, CorpusError> {
        let mut lines = input.lines().enumerate();
        let header: CorpusHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?)
                .map_err(|e| CorpusError::Json { line: 1, message: e.to_string() })?,
            None => return Err(CorpusError::MissingHeader),
        };
        if header.schema_version != CORPUS_SCHEMA_VERSION {
            return Err(CorpusError::SchemaVersion {
                found: header.schema_version,
                expected: CORPUS_SCHEMA_VERSION,
            });
        }
        let mut posts = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            posts.push(
                serde_json::from_str(&line)
                    .map_err(|e| CorpusError::Json { line: n + 1, message: e.to_string() })?,
            );
        }
        Corpus::new(posts, header.filter, header.source)
    }

    pub fn persist(&self, path: &Path) -> Result<(), CorpusError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Corpus, CorpusError> {
        Corpus::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(xml: &str) -> ParseReport {
        parse_dump(xml.as_bytes(), DumpFormat::DumpXml, HtmlOptions::default()).unwrap()
    }

    #[test]
    fn question_row_decodes_tags_and_body() {
        let r = parse(
            r#"<posts><row Id="7" PostTypeId="1" Tags="&lt;performance&gt;&lt;nginx&gt;" Body="&lt;p&gt;hi&lt;/p&gt;" /></posts>"#,
        );
        assert_eq!(r.posts.len(), 1);
        let p = &r.posts[0];
        assert_eq!(p.id, 7);
        assert_eq!(p.kind, PostKind::Question);
        assert_eq!(p.body_text, "hi");
        assert_eq!(p.tags, ["nginx", "performance"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn answers_inherit_parent_tags_even_when_parent_comes_later() {
        let r = parse(
            r#"<posts>
            <row Id="9" PostTypeId="2" ParentId="7" Body="&lt;p&gt;ok&lt;/p&gt;" />
            <row Id="7" PostTypeId="1" Tags="&lt;performance&gt;&lt;nginx&gt;" Body="q" />
            </posts>"#,
        );
        let answer = r.posts.iter().find(|p| p.id == 9).unwrap();
        assert_eq!(answer.kind, PostKind::Answer);
        assert_eq!(answer.parent_id, Some(7));
        assert_eq!(answer.body_text, "ok");
        assert_eq!(answer.tags.len(), 2);
        assert_eq!(r.orphan_answers, 0);
    }

    #[test]
    fn unknown_post_types_are_skipped_and_counted() {
        let r = parse(
            r#"<posts>
            <row Id="1" PostTypeId="1" Tags="&lt;a&gt;" Body="x" />
            <row Id="2" PostTypeId="2" ParentId="1" Body="x" />
            <row Id="3" PostTypeId="4" Body="wiki" />
            <row Id="4" PostTypeId="1" Tags="&lt;b&gt;" Body="x" />
            <row Id="5" PostTypeId="2" ParentId="4" Body="x" />
            </posts>"#,
        );
        assert_eq!(r.posts.len(), 4);
        assert_eq!(r.skipped_types, 1);
    }

    #[test]
    fn orphan_answers_get_empty_tags_and_are_counted() {
        let r = parse(r#"<posts><row Id="2" PostTypeId="2" ParentId="99" Body="x" /></posts>"#);
        assert_eq!(r.posts.len(), 1);
        assert!(r.posts[0].tags.is_empty());
        assert_eq!(r.orphan_answers, 1);
    }

    #[test]
    fn missing_attributes_are_row_errors() {
        let r = parse(
            r#"<posts><row PostTypeId="1" Body="x" /><row Id="3" PostTypeId="2" Body="x" /><row Id="4" PostTypeId="1" Body="ok" /></posts>"#,
        );
        assert_eq!(r.posts.len(), 1);
        assert_eq!(r.row_errors.len(), 2);
        assert!(r.row_errors[0].message.contains("Id"));
        assert!(r.row_errors[1].message.contains("ParentId"));
    }

    #[test]
    fn malformed_xml_reports_offset() {
        let err = parse_dump(
            r#"<posts><row Id="1" PostTypeId="1 Body="x" /></posts>"#.as_bytes(),
            DumpFormat::DumpXml,
            HtmlOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Xml { .. }), "{err}");
    }

    #[test]
    fn jsonl_rows_parse_and_bad_json_names_line() {
        let input = concat!(
            r#"{"id":7,"kind":"question","parent_id":null,"tags":["Performance","nginx"],"body_html":"<p>hi</p>","created_at":"2015-01-01T00:00:00Z"}"#,
            "\n",
            r#"{"id":9,"kind":"answer","parent_id":7,"tags":[],"body_html":"<p>ok</p>","created_at":null}"#,
            "\n"
        );
        let r = parse_dump(input.as_bytes(), DumpFormat::Jsonl, HtmlOptions::default()).unwrap();
        assert_eq!(r.posts.len(), 2);
        assert!(r.posts[1].tags.contains("performance"));

        let bad = "{\"id\":1}\n{not json\n";
        match parse_dump(bad.as_bytes(), DumpFormat::Jsonl, HtmlOptions::default()) {
            Err(CorpusError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strip_html_examples() {
        assert_eq!(strip_html("<p>MySQL is <b>slow</b></p>", true), "MySQL is slow");
        assert_eq!(strip_html("<pre><code>SELECT 1</code></pre>", false), "");
        assert_eq!(strip_html("<pre><code>SELECT 1</code></pre>", true), "SELECT 1");
        assert_eq!(strip_html("a &amp; b", true), "a & b");
        assert_eq!(strip_html("x <unclosed", true), "x unclosed");
        assert_eq!(strip_html("1 &lt; 2", true), "1 < 2");
        assert_eq!(strip_html("<p>one</p><p>two</p>", true), "one two");
    }

    #[test]
    fn tag_string_formats() {
        assert_eq!(parse_tag_string("<a><B>").len(), 2);
        assert!(parse_tag_string("|rails|nginx|").contains("rails"));
        assert!(parse_tag_string("").is_empty());
    }

    #[test]
    fn filter_examples() {
        let f = TagFilter::new("performance", ["apache", "nginx", "rails"]).unwrap();
        let tags = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert!(f.matches(&tags(&["performance", "nginx"])));
        assert!(!f.matches(&tags(&["performance", "java"])));
        assert!(!f.matches(&tags(&["nginx"])));
        assert!(TagFilter::new("performance", Vec::<String>::new()).is_err());
        assert_eq!(TagFilter::parse("Performance:apache,rails").unwrap().required_tag, "performance");
    }

    fn post(id: u64) -> Post {
        Post {
            id,
            kind: PostKind::Question,
            parent_id: None,
            title: Some(format!("t{id}")),
            body_html: "<p>x</p>".into(),
            body_text: "x".into(),
            tags: ["performance".to_string()].into_iter().collect(),
            created_at: None,
        }
    }

    #[test]
    fn persist_round_trip_and_header_only_for_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");

        let empty = Corpus::new(vec![], None, "empty").unwrap();
        empty.persist(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        assert_eq!(Corpus::load(&path).unwrap(), empty);

        let filter = TagFilter::new("performance", ["nginx"]).unwrap();
        let c = Corpus::new(vec![post(3), post(1), post(2)], Some(filter), "dump").unwrap();
        c.persist(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);
        let back = Corpus::load(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.posts()[0].id, 1);
    }

    #[test]
    fn unknown_schema_version_names_both() {
        let text = "{\"schema_version\":7,\"filter\":null,\"source\":\"x\"}\n";
        let err = Corpus::read_from(text.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(matches!(Corpus::new(vec![post(1), post(1)], None, ""), Err(CorpusError::DuplicateId(1))));
    }
}
