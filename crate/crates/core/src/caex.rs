//! Order-preserving tree model of AutomationML/CAEX manifests.
//!
//! The parser keeps every element, attribute, comment and processing
//! instruction it sees. Whitespace-only text between elements is dropped;
//! text inside leaf elements (`<Value>`, `<DefaultValue>`, ...) is kept
//! verbatim. Namespace prefixes stay part of the element name.

use std::fmt;

use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CaexError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    MalformedXml {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("document contains no element")]
    EmptyDocument,
    #[error("DOCTYPE declarations are not supported")]
    UnsupportedDoctype,
    #[error("path segment `{segment}` matches more than one child")]
    AmbiguousPath { segment: String },
    #[error("ID `{0}` is used by more than one element")]
    DuplicateId(String),
    #[error("insert position {position} out of range for {len} children")]
    IndexOutOfRange { position: usize, len: usize },
    #[error("invalid element path `{0}`")]
    InvalidPath(String),
}

/// A child node of an element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(CaexElement),
    Comment(String),
    ProcessingInstruction(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaexElement {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub children: Vec<Node>,
    pub text: Option<String>,
}

impl CaexElement {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    /// Builder-style attribute setter.
    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.set_attr(key, value);
        self
    }

    /// Sets leaf text. Empty text is stored as `None`, matching what the parser produces.
    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        let text = text.into();
        self.text = (!text.is_empty()).then_some(text);
        self
    }

    pub fn with_child(mut self, child: CaexElement) -> Self {
        self.children.push(Node::Element(child));
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Sets an attribute, replacing the value in place if the key exists.
    pub fn set_attr(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.attributes.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.attributes.push((key, value)),
        }
    }

    /// The `Name` attribute CAEX uses for addressing.
    pub fn caex_name(&self) -> Option<&str> {
        self.attr("Name")
    }

    pub fn id(&self) -> Option<&str> {
        self.attr("ID")
    }

    pub fn elements(&self) -> impl Iterator<Item = &CaexElement> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            _ => None,
        })
    }

    pub fn elements_mut(&mut self) -> impl Iterator<Item = &mut CaexElement> {
        self.children.iter_mut().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            _ => None,
        })
    }

    /// First child element with the given XML name and `Name` attribute.
    pub fn child(&self, xml_name: &str, caex_name: &str) -> Option<&CaexElement> {
        self.elements()
            .find(|e| e.name == xml_name && e.caex_name() == Some(caex_name))
    }

    pub fn child_mut(&mut self, xml_name: &str, caex_name: &str) -> Option<&mut CaexElement> {
        self.elements_mut()
            .find(|e| e.name == xml_name && e.caex_name() == Some(caex_name))
    }

    /// First child element with the given XML name.
    pub fn first_named(&self, xml_name: &str) -> Option<&CaexElement> {
        self.elements().find(|e| e.name == xml_name)
    }

    /// Text of the first child element with the given XML name.
    pub fn child_text(&self, xml_name: &str) -> Option<&str> {
        self.first_named(xml_name).and_then(|e| e.text.as_deref())
    }

    /// Depth-first pre-order walk over this element and all descendants.
    pub fn walk(&self) -> Walk<'_> {
        Walk { stack: vec![self] }
    }

    /// Inserts `child` before node index `position`, or at the end.
    pub fn insert_child(
        &mut self,
        child: CaexElement,
        position: Position,
    ) -> Result<(), CaexError> {
        let len = self.children.len();
        let index = match position {
            Position::End => len,
            Position::Index(i) if i <= len => i,
            Position::Index(i) => return Err(CaexError::IndexOutOfRange { position: i, len }),
        };
        self.children.insert(index, Node::Element(child));
        Ok(())
    }

    fn find_path(&self, path: &ElementPath) -> Result<Option<&CaexElement>, CaexError> {
        let mut current = self;
        for segment in path.segments() {
            let mut matches = current
                .elements()
                .filter(|e| e.caex_name() == Some(segment.as_str()));
            let Some(found) = matches.next() else {
                return Ok(None);
            };
            if matches.next().is_some() {
                return Err(CaexError::AmbiguousPath {
                    segment: segment.clone(),
                });
            }
            current = found;
        }
        Ok(Some(current))
    }

    fn find_path_mut(&mut self, path: &ElementPath) -> Result<Option<&mut CaexElement>, CaexError> {
        // resolve indices immutably first, then descend mutably
        let mut indices = Vec::with_capacity(path.segments().len());
        let mut current: &CaexElement = self;
        for segment in path.segments() {
            let mut hits = current
                .children
                .iter()
                .enumerate()
                .filter_map(|(i, n)| match n {
                    Node::Element(e) if e.caex_name() == Some(segment.as_str()) => Some((i, e)),
                    _ => None,
                });
            let Some((index, found)) = hits.next() else {
                return Ok(None);
            };
            if hits.next().is_some() {
                return Err(CaexError::AmbiguousPath {
                    segment: segment.clone(),
                });
            }
            indices.push(index);
            current = found;
        }
        let mut target = self;
        for index in indices {
            target = match &mut target.children[index] {
                Node::Element(e) => e,
                _ => unreachable!("index resolved to an element"),
            };
        }
        Ok(Some(target))
    }
}

pub struct Walk<'a> {
    stack: Vec<&'a CaexElement>,
}

impl<'a> Iterator for Walk<'a> {
    type Item = &'a CaexElement;

    fn next(&mut self) -> Option<Self::Item> {
        let next = self.stack.pop()?;
        let children: Vec<_> = next.elements().collect();
        self.stack.extend(children.into_iter().rev());
        Some(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Index(usize),
    End,
}

/// Slash-free sequence of `Name` attribute values, starting below the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ElementPath(Vec<String>);

impl ElementPath {
    pub fn new<I, S>(segments: I) -> Result<Self, CaexError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() || segments.iter().any(|s| s.contains('/')) {
            return Err(CaexError::InvalidPath(segments.join("/")));
        }
        Ok(Self(segments))
    }

    pub fn parse(text: &str) -> Result<Self, CaexError> {
        Self::new(text.split('/'))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn child(&self, segment: impl Into<String>) -> Result<Self, CaexError> {
        let mut segments = self.0.clone();
        segments.push(segment.into());
        Self::new(segments)
    }
}

impl fmt::Display for ElementPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

#[derive(Debug, Clone)]
pub struct CaexDocument {
    /// Provenance label, usually the file name. Not part of structural equality.
    pub source_name: String,
    /// Raw content of the `<?xml ...?>` declaration, if any.
    pub declaration: Option<String>,
    pub prolog: Vec<Node>,
    pub root: CaexElement,
    pub epilog: Vec<Node>,
}

impl PartialEq for CaexDocument {
    fn eq(&self, other: &Self) -> bool {
        self.declaration == other.declaration
            && self.prolog == other.prolog
            && self.root == other.root
            && self.epilog == other.epilog
    }
}

impl CaexDocument {
    pub fn new(root: CaexElement) -> Self {
        Self {
            source_name: String::new(),
            declaration: None,
            prolog: Vec::new(),
            root,
            epilog: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CaexError> {
        parse_caex(text)
    }

    pub fn to_xml(&self) -> String {
        serialize_caex(self)
    }

    pub fn find_by_path(&self, path: &ElementPath) -> Result<Option<&CaexElement>, CaexError> {
        self.root.find_path(path)
    }

    pub fn find_by_path_mut(
        &mut self,
        path: &ElementPath,
    ) -> Result<Option<&mut CaexElement>, CaexError> {
        self.root.find_path_mut(path)
    }

    pub fn find_by_id(&self, id: &str) -> Result<Option<&CaexElement>, CaexError> {
        let mut hits = self.root.walk().filter(|e| e.id() == Some(id));
        let first = hits.next();
        if hits.next().is_some() {
            return Err(CaexError::DuplicateId(id.to_owned()));
        }
        Ok(first)
    }

    /// Mutable lookup by ID. Does not check for duplicates; use [`Self::find_by_id`] for that.
    pub fn find_by_id_mut(&mut self, id: &str) -> Option<&mut CaexElement> {
        fn go<'a>(e: &'a mut CaexElement, id: &str) -> Option<&'a mut CaexElement> {
            if e.id() == Some(id) {
                return Some(e);
            }
            e.elements_mut().find_map(|c| go(c, id))
        }
        go(&mut self.root, id)
    }
}

/// Parses UTF-8 CAEX text. A leading byte-order mark is skipped.
pub fn parse_caex(text: &str) -> Result<CaexDocument, CaexError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = Reader::from_str(text);
    {
        let config = reader.config_mut();
        config.check_end_names = true;
        config.expand_empty_elements = false;
        config.trim_text(false);
    }

    let malformed = |reader: &Reader<&[u8]>, message: String, at_error: bool| {
        let offset = if at_error {
            reader.error_position()
        } else {
            reader.buffer_position()
        } as usize;
        let (line, column) = line_column(text, offset);
        CaexError::MalformedXml {
            line,
            column,
            message,
        }
    };

    let mut declaration = None;
    let mut prolog = Vec::new();
    let mut epilog = Vec::new();
    let mut root: Option<CaexElement> = None;
    // open elements plus their accumulated raw text segments
    let mut stack: Vec<(CaexElement, Vec<String>)> = Vec::new();

    loop {
        let event = reader
            .read_event()
            .map_err(|e| malformed(&reader, e.to_string(), true))?;
        match event {
            Event::Decl(d) => {
                if root.is_some() || !stack.is_empty() || !prolog.is_empty() {
                    return Err(malformed(
                        &reader,
                        "misplaced XML declaration".into(),
                        false,
                    ));
                }
                declaration = Some(String::from_utf8_lossy(&d).into_owned());
            }
            Event::DocType(_) => return Err(CaexError::UnsupportedDoctype),
            Event::Start(start) => {
                let element =
                    start_element(&reader, &start).map_err(|m| malformed(&reader, m, false))?;
                if stack.is_empty() && root.is_some() {
                    return Err(malformed(
                        &reader,
                        "more than one root element".into(),
                        false,
                    ));
                }
                stack.push((element, Vec::new()));
            }
            Event::Empty(start) => {
                let element =
                    start_element(&reader, &start).map_err(|m| malformed(&reader, m, false))?;
                attach(&mut stack, &mut root, element).map_err(|m| malformed(&reader, m, false))?;
            }
            Event::End(_) => {
                let (mut element, segments) = stack
                    .pop()
                    .ok_or_else(|| malformed(&reader, "unexpected end tag".into(), false))?;
                element.text = finish_text(&element, segments);
                attach(&mut stack, &mut root, element).map_err(|m| malformed(&reader, m, false))?;
            }
            Event::Text(t) => {
                let content = t
                    .unescape()
                    .map_err(|e| malformed(&reader, e.to_string(), false))?;
                match stack.last_mut() {
                    Some((_, segments)) => segments.push(content.into_owned()),
                    None if content.trim().is_empty() => {}
                    None => {
                        return Err(malformed(
                            &reader,
                            "text outside the root element".into(),
                            false,
                        ))
                    }
                }
            }
            Event::CData(c) => {
                let content = String::from_utf8(c.into_inner().into_owned())
                    .map_err(|e| malformed(&reader, e.to_string(), false))?;
                match stack.last_mut() {
                    Some((_, segments)) => segments.push(content),
                    None => {
                        return Err(malformed(
                            &reader,
                            "CDATA outside the root element".into(),
                            false,
                        ))
                    }
                }
            }
            Event::Comment(c) => {
                let node = Node::Comment(String::from_utf8_lossy(&c).into_owned());
                push_misc(&mut stack, &root, &mut prolog, &mut epilog, node);
            }
            Event::PI(pi) => {
                let node = Node::ProcessingInstruction(String::from_utf8_lossy(&pi).into_owned());
                push_misc(&mut stack, &root, &mut prolog, &mut epilog, node);
            }
            Event::Eof => break,
        }
    }

    if let Some((open, _)) = stack.last() {
        return Err(malformed(
            &reader,
            format!("unexpected end of input inside <{}>", open.name),
            false,
        ));
    }
    let root = root.ok_or(CaexError::EmptyDocument)?;
    Ok(CaexDocument {
        source_name: String::new(),
        declaration,
        prolog,
        root,
        epilog,
    })
}

fn start_element(
    reader: &Reader<&[u8]>,
    start: &quick_xml::events::BytesStart<'_>,
) -> Result<CaexElement, String> {
    let name = String::from_utf8(start.name().as_ref().to_vec()).map_err(|e| e.to_string())?;
    let mut element = CaexElement::new(name);
    for attr in start.attributes() {
        let attr = attr.map_err(|e| e.to_string())?;
        let key = String::from_utf8(attr.key.as_ref().to_vec()).map_err(|e| e.to_string())?;
        let value = attr
            .decode_and_unescape_value(reader.decoder())
            .map_err(|e| e.to_string())?
            .into_owned();
        element.attributes.push((key, value));
    }
    Ok(element)
}

fn attach(
    stack: &mut [(CaexElement, Vec<String>)],
    root: &mut Option<CaexElement>,
    element: CaexElement,
) -> Result<(), String> {
    match stack.last_mut() {
        Some((parent, _)) => {
            parent.children.push(Node::Element(element));
            Ok(())
        }
        None if root.is_none() => {
            *root = Some(element);
            Ok(())
        }
        None => Err("more than one root element".into()),
    }
}

fn push_misc(
    stack: &mut [(CaexElement, Vec<String>)],
    root: &Option<CaexElement>,
    prolog: &mut Vec<Node>,
    epilog: &mut Vec<Node>,
    node: Node,
) {
    match stack.last_mut() {
        Some((parent, _)) => parent.children.push(node),
        None if root.is_none() => prolog.push(node),
        None => epilog.push(node),
    }
}

fn finish_text(element: &CaexElement, segments: Vec<String>) -> Option<String> {
    if element.children.is_empty() {
        let text: String = segments.concat();
        (!text.is_empty()).then_some(text)
    } else {
        let text: String = segments
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect();
        (!text.is_empty()).then_some(text)
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let column = match before.iter().rposition(|&b| b == b'\n') {
        Some(nl) => offset - nl,
        None => offset + 1,
    };
    (line, column)
}

/// Canonical serialization: two-space indentation, attributes in stored
/// order, no byte-order mark. Deterministic for equal documents.
pub fn serialize_caex(doc: &CaexDocument) -> String {
    let mut out = String::new();
    if let Some(decl) = &doc.declaration {
        out.push_str("<?");
        out.push_str(decl);
        out.push_str("?>\n");
    }
    for node in &doc.prolog {
        write_node(&mut out, node, 0);
    }
    write_element(&mut out, &doc.root, 0);
    for node in &doc.epilog {
        write_node(&mut out, node, 0);
    }
    out
}

/// Serializes one element subtree the same way [`serialize_caex`] would.
pub fn serialize_element(element: &CaexElement) -> String {
    let mut out = String::new();
    write_element(&mut out, element, 0);
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_node(out: &mut String, node: &Node, depth: usize) {
    match node {
        Node::Element(e) => write_element(out, e, depth),
        Node::Comment(c) => {
            indent(out, depth);
            out.push_str("<!--");
            out.push_str(c);
            out.push_str("-->\n");
        }
        Node::ProcessingInstruction(p) => {
            indent(out, depth);
            out.push_str("<?");
            out.push_str(p);
            out.push_str("?>\n");
        }
    }
}

fn write_element(out: &mut String, element: &CaexElement, depth: usize) {
    indent(out, depth);
    out.push('<');
    out.push_str(&element.name);
    for (key, value) in &element.attributes {
        out.push(' ');
        out.push_str(key);
        out.push_str("=\"");
        escape_into(out, value, true);
        out.push('"');
    }
    if element.children.is_empty() {
        match &element.text {
            None => out.push_str("/>\n"),
            Some(text) => {
                out.push('>');
                escape_into(out, text, false);
                out.push_str("</");
                out.push_str(&element.name);
                out.push_str(">\n");
            }
        }
        return;
    }
    out.push('>');
    if let Some(text) = &element.text {
        escape_into(out, text, false);
    }
    out.push('\n');
    for child in &element.children {
        write_node(out, child, depth + 1);
    }
    indent(out, depth);
    out.push_str("</");
    out.push_str(&element.name);
    out.push_str(">\n");
}

fn escape_into(out: &mut String, text: &str, attribute: bool) {
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attribute => out.push_str("&quot;"),
            '\n' if attribute => out.push_str("&#10;"),
            '\t' if attribute => out.push_str("&#9;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let doc = parse_caex("<CAEXFile/>").unwrap();
        assert_eq!(doc.root.name, "CAEXFile");
        assert!(doc.root.children.is_empty());
        assert_eq!(serialize_caex(&doc), "<CAEXFile/>\n");
    }

    #[test]
    fn mismatched_tags_are_malformed() {
        let err = parse_caex("<a><b></a>").unwrap_err();
        assert!(
            matches!(err, CaexError::MalformedXml { line: 1, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn unclosed_root_is_malformed() {
        assert!(matches!(
            parse_caex("<a><b/>"),
            Err(CaexError::MalformedXml { .. })
        ));
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse_caex("").unwrap_err(), CaexError::EmptyDocument);
        assert_eq!(
            parse_caex("<?xml version=\"1.0\"?>\n<!-- banner -->\n").unwrap_err(),
            CaexError::EmptyDocument
        );
    }

    #[test]
    fn doctype_rejected() {
        let text = "<!DOCTYPE x [<!ENTITY a \"b\">]><x>&a;</x>";
        assert_eq!(parse_caex(text).unwrap_err(), CaexError::UnsupportedDoctype);
    }

    #[test]
    fn error_position_points_at_second_line() {
        let err = parse_caex("<a>\n  <b></c>\n</a>").unwrap_err();
        match err {
            CaexError::MalformedXml { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bom_is_skipped_and_not_emitted() {
        let doc = parse_caex("\u{feff}<CAEXFile/>").unwrap();
        assert!(!serialize_caex(&doc).starts_with('\u{feff}'));
    }

    #[test]
    fn duplicate_attribute_is_malformed() {
        assert!(matches!(
            parse_caex("<a x=\"1\" x=\"2\"/>"),
            Err(CaexError::MalformedXml { .. })
        ));
    }

    #[test]
    fn attribute_order_is_preserved() {
        let doc = parse_caex("<e a=\"1\" b=\"2\"/>").unwrap();
        assert_eq!(serialize_caex(&doc), "<e a=\"1\" b=\"2\"/>\n");
        let doc = parse_caex("<e b=\"2\" a=\"1\"/>").unwrap();
        assert_eq!(serialize_caex(&doc), "<e b=\"2\" a=\"1\"/>\n");
    }

    #[test]
    fn leaf_text_kept_exactly() {
        let doc = parse_caex("<A><Value>  50 &amp; up\n</Value><Value/></A>").unwrap();
        let values: Vec<_> = doc.root.elements().map(|e| e.text.clone()).collect();
        assert_eq!(
            values,
            vec![Some("  50 &amp; up\n".replace("&amp;", "&")), None]
        );
        let again = parse_caex(&serialize_caex(&doc)).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn comments_and_pis_survive() {
        let text = "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<!--tool banner-->\n<r><?mtp hint?><!-- c --><x/></r>\n<!--tail-->";
        let doc = parse_caex(text).unwrap();
        assert_eq!(doc.prolog, vec![Node::Comment("tool banner".into())]);
        assert_eq!(doc.epilog, vec![Node::Comment("tail".into())]);
        assert_eq!(doc.root.children.len(), 3);
        let again = parse_caex(&serialize_caex(&doc)).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn attribute_escapes_round_trip() {
        let doc = parse_caex("<e v=\"a&quot;b&lt;&#10;c\"/>").unwrap();
        assert_eq!(doc.root.attr("v"), Some("a\"b<\nc"));
        assert_eq!(parse_caex(&serialize_caex(&doc)).unwrap(), doc);
    }

    fn sample() -> CaexDocument {
        parse_caex(
            r#"<CAEXFile>
                 <SystemUnitClassLib Name="Lib">
                   <SystemUnitClass Name="A" ID="11111111-1111-1111-1111-111111111111">
                     <SystemUnitClass Name="B"/>
                   </SystemUnitClass>
                   <SystemUnitClass Name="X"/>
                   <SystemUnitClass Name="X"/>
                 </SystemUnitClassLib>
               </CAEXFile>"#,
        )
        .unwrap()
    }

    #[test]
    fn path_lookup() {
        let doc = sample();
        let hit = doc
            .find_by_path(&ElementPath::parse("Lib/A/B").unwrap())
            .unwrap()
            .unwrap();
        assert_eq!(hit.caex_name(), Some("B"));
        assert!(doc
            .find_by_path(&ElementPath::parse("Nonexistent").unwrap())
            .unwrap()
            .is_none());
        assert_eq!(
            doc.find_by_path(&ElementPath::parse("Lib/X").unwrap())
                .unwrap_err(),
            CaexError::AmbiguousPath {
                segment: "X".into()
            }
        );
    }

    #[test]
    fn path_validation() {
        assert!(ElementPath::new(Vec::<String>::new()).is_err());
        assert!(ElementPath::new(["a/b"]).is_err());
    }

    #[test]
    fn id_lookup() {
        let mut doc = sample();
        let hit = doc
            .find_by_id("11111111-1111-1111-1111-111111111111")
            .unwrap()
            .unwrap();
        assert_eq!(hit.caex_name(), Some("A"));
        assert!(doc
            .find_by_id("22222222-2222-2222-2222-222222222222")
            .unwrap()
            .is_none());

        let lib = doc.root.elements_mut().next().unwrap();
        let dup = CaexElement::new("InternalElement")
            .with_attr("ID", "11111111-1111-1111-1111-111111111111");
        lib.insert_child(dup, Position::End).unwrap();
        assert!(matches!(
            doc.find_by_id("11111111-1111-1111-1111-111111111111"),
            Err(CaexError::DuplicateId(_))
        ));
    }

    #[test]
    fn insert_positions() {
        let mut parent = CaexElement::new("P");
        parent
            .insert_child(CaexElement::new("a"), Position::End)
            .unwrap();
        assert_eq!(parent.children.len(), 1);
        parent
            .insert_child(CaexElement::new("b"), Position::End)
            .unwrap();
        parent
            .insert_child(CaexElement::new("c"), Position::Index(0))
            .unwrap();
        let names: Vec<_> = parent.elements().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
        assert_eq!(
            parent
                .insert_child(CaexElement::new("d"), Position::Index(5))
                .unwrap_err(),
            CaexError::IndexOutOfRange {
                position: 5,
                len: 3
            }
        );
    }

    #[test]
    fn lookups_do_not_mutate() {
        let doc = sample();
        let before = serialize_caex(&doc);
        let _ = doc.find_by_path(&ElementPath::parse("Lib/A").unwrap());
        let _ = doc.find_by_id("11111111-1111-1111-1111-111111111111");
        assert_eq!(serialize_caex(&doc), before);
    }

    #[test]
    fn mutable_path_lookup() {
        let mut doc = sample();
        let b = doc
            .find_by_path_mut(&ElementPath::parse("Lib/A/B").unwrap())
            .unwrap()
            .unwrap();
        b.set_attr("Touched", "yes");
        assert!(serialize_caex(&doc).contains("Touched=\"yes\""));
    }
}
