//! Built-in Type-1 duplicate-block detector and keyword-based cyclomatic
//! complexity for C-family sources.
//!
//! Sources are normalized line by line: `//` and `/* */` comments are removed,
//! runs of whitespace collapse to one space, and blank lines are dropped.
//! A window is `window_length` consecutive normalized lines. A window start in
//! a file is *duplicated* when the same window content occurs at any other
//! location (another start in the same file, or any start in another file).
//! Each maximal run of consecutive duplicated window starts is one duplicated
//! block.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::{Hash, Hasher};
use std::path::Path;

use rayon::prelude::*;

use crate::error::Result;
use crate::ingest::{FileMetrics, FileMetricsSnapshot};

pub const DEFAULT_WINDOW: usize = 10;

/// File extensions scanned by [`scan_tree`] when none are given.
pub const DEFAULT_EXTENSIONS: &[&str] = &[
    "java", "kt", "scala", "groovy", "c", "h", "cc", "cpp", "hpp", "cs", "js", "ts", "go", "rs",
    "swift",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedFile {
    pub file_path: String,
    pub lines: Vec<String>,
    /// `line_map[i]` is the 1-based original line of `lines[i]`.
    pub line_map: Vec<usize>,
}

impl NormalizedFile {
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Lex {
    Code,
    LineComment,
    BlockComment,
    Str(char),
}

fn collapse(buf: &str) -> String {
    buf.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Strips comments and collapses whitespace. String and char literals are
/// kept verbatim so comment markers inside them survive; an unterminated
/// literal ends at the line end.
pub fn normalize(file_path: &str, source: &str) -> NormalizedFile {
    let mut lines = Vec::new();
    let mut line_map = Vec::new();
    let mut buf = String::new();
    let mut state = Lex::Code;
    let mut line_no = 1;
    let mut chars = source.chars().peekable();

    let mut flush = |buf: &mut String, line_no: usize| {
        let l = collapse(buf);
        if !l.is_empty() {
            lines.push(l);
            line_map.push(line_no);
        }
        buf.clear();
    };

    while let Some(c) = chars.next() {
        if c == '\n' {
            flush(&mut buf, line_no);
            line_no += 1;
            if matches!(state, Lex::LineComment | Lex::Str(_)) {
                state = Lex::Code;
            }
            continue;
        }
        match state {
            Lex::Code => match c {
                '/' if chars.peek() == Some(&'/') => {
                    chars.next();
                    state = Lex::LineComment;
                    buf.push(' ');
                }
                '/' if chars.peek() == Some(&'*') => {
                    chars.next();
                    state = Lex::BlockComment;
                    buf.push(' ');
                }
                '"' | '\'' => {
                    state = Lex::Str(c);
                    buf.push(c);
                }
                _ => buf.push(c),
            },
            Lex::LineComment => {}
            Lex::BlockComment => {
                if c == '*' && chars.peek() == Some(&'/') {
                    chars.next();
                    state = Lex::Code;
                }
            }
            Lex::Str(q) => {
                buf.push(c);
                if c == '\\' {
                    if let Some(&n) = chars.peek() {
                        if n != '\n' {
                            buf.push(n);
                            chars.next();
                        }
                    }
                } else if c == q {
                    state = Lex::Code;
                }
            }
        }
    }
    flush(&mut buf, line_no);
    NormalizedFile {
        file_path: file_path.to_string(),
        lines,
        line_map,
    }
}

fn hash_line(line: &str) -> u64 {
    let mut h = DefaultHasher::new();
    line.hash(&mut h);
    h.finish()
}

fn window_hashes(line_hashes: &[u64], window: usize) -> Vec<u64> {
    if line_hashes.len() < window {
        return Vec::new();
    }
    line_hashes
        .windows(window)
        .map(|w| {
            let mut h = DefaultHasher::new();
            w.hash(&mut h);
            h.finish()
        })
        .collect()
}

/// Window index over a whole project snapshot.
#[derive(Debug, Clone)]
pub struct DuplicateIndex {
    window_length: usize,
    files: Vec<NormalizedFile>,
    by_path: HashMap<String, usize>,
    /// window hash -> (file id, start)
    windows: HashMap<u64, Vec<(usize, usize)>>,
}

impl DuplicateIndex {
    pub fn build(files: Vec<NormalizedFile>, window_length: usize) -> Self {
        assert!(window_length > 0, "window length must be positive");
        let hashed: Vec<Vec<u64>> = files
            .par_iter()
            .map(|f| {
                let lh: Vec<u64> = f.lines.iter().map(|l| hash_line(l)).collect();
                window_hashes(&lh, window_length)
            })
            .collect();
        let mut windows: HashMap<u64, Vec<(usize, usize)>> = HashMap::new();
        for (fid, hs) in hashed.iter().enumerate() {
            for (start, &h) in hs.iter().enumerate() {
                windows.entry(h).or_default().push((fid, start));
            }
        }
        let by_path = files
            .iter()
            .enumerate()
            .map(|(i, f)| (f.file_path.clone(), i))
            .collect();
        DuplicateIndex {
            window_length,
            files,
            by_path,
            windows,
        }
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn files(&self) -> &[NormalizedFile] {
        &self.files
    }

    pub fn get(&self, path: &str) -> Option<&NormalizedFile> {
        self.by_path.get(path).map(|&i| &self.files[i])
    }

    /// Which window starts of `file` also occur somewhere else.
    fn duplicated_starts(&self, file: &NormalizedFile) -> Vec<bool> {
        let w = self.window_length;
        let own_id = self.by_path.get(&file.file_path).copied();
        let lh: Vec<u64> = file.lines.iter().map(|l| hash_line(l)).collect();
        window_hashes(&lh, w)
            .iter()
            .enumerate()
            .map(|(start, h)| {
                let here = &file.lines[start..start + w];
                self.windows.get(h).is_some_and(|locs| {
                    locs.iter().any(|&(fid, s)| {
                        if Some(fid) == own_id && s == start {
                            return false;
                        }
                        self.files[fid].lines[s..s + w] == *here
                    })
                })
            })
            .collect()
    }

    /// Number of maximal duplicated blocks in `file`.
    pub fn count_duplicate_blocks(&self, file: &NormalizedFile) -> u64 {
        let marks = self.duplicated_starts(file);
        let mut blocks = 0;
        let mut inside = false;
        for m in marks {
            if m && !inside {
                blocks += 1;
            }
            inside = m;
        }
        blocks
    }
}

pub fn count_duplicate_blocks(file: &NormalizedFile, index: &DuplicateIndex) -> u64 {
    index.count_duplicate_blocks(file)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Punct(&'static str),
    Other,
}

const PUNCTS: &[&str] = &[
    "&&", "||", "?", "(", ")", "{", "}", ";", ",", ".", "<", ">", "[", "]", "-", ":", "=", "&",
];

fn tokenize(code: &str) -> Vec<Tok> {
    let mut toks = Vec::new();
    let bytes: Vec<char> = code.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '"' || c == '\'' {
            // skip literal
            let q = c;
            i += 1;
            while i < bytes.len() && bytes[i] != q && bytes[i] != '\n' {
                if bytes[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i += 1;
            toks.push(Tok::Other);
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_alphanumeric() || bytes[i] == '_') {
                i += 1;
            }
            toks.push(Tok::Ident(bytes[start..i].iter().collect()));
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_alphanumeric() || bytes[i] == '.') {
                i += 1;
            }
            toks.push(Tok::Other);
            continue;
        }
        let two: String = bytes[i..(i + 2).min(bytes.len())].iter().collect();
        if let Some(p) = PUNCTS.iter().find(|p| p.len() == 2 && **p == two) {
            toks.push(Tok::Punct(p));
            i += 2;
            continue;
        }
        let one = c.to_string();
        match PUNCTS.iter().find(|p| p.len() == 1 && **p == one) {
            Some(p) => toks.push(Tok::Punct(p)),
            None => toks.push(Tok::Other),
        }
        i += 1;
    }
    toks
}

const NOT_FUNCTION_NAMES: &[&str] = &[
    "if", "for", "while", "switch", "catch", "synchronized", "return", "new", "else", "do", "try",
    "foreach", "using", "lock", "sizeof", "typeof", "when", "match", "loop", "with", "elif",
    "except", "assert", "throw", "yield", "await", "super", "this", "fixed", "checked",
];

const DECISION_KEYWORDS: &[&str] = &["if", "for", "while", "case", "catch"];

fn is_function_header(toks: &[Tok], i: usize) -> bool {
    let Tok::Ident(name) = &toks[i] else {
        return false;
    };
    if NOT_FUNCTION_NAMES.contains(&name.as_str()) {
        return false;
    }
    if i > 0 && matches!(&toks[i - 1], Tok::Ident(p) if p == "new") {
        return false;
    }
    if i > 0 && toks[i - 1] == Tok::Punct(".") {
        return false;
    }
    if toks.get(i + 1) != Some(&Tok::Punct("(")) {
        return false;
    }
    let mut depth = 0usize;
    let mut j = i + 1;
    while j < toks.len() {
        match toks[j] {
            Tok::Punct("(") => depth += 1,
            Tok::Punct(")") => {
                depth -= 1;
                if depth == 0 {
                    break;
                }
            }
            Tok::Punct("{") | Tok::Punct(";") => return false,
            _ => {}
        }
        j += 1;
    }
    // Between the parameter list and the body only signature-like tokens
    // (throws clauses, return types) may appear.
    for t in toks.iter().skip(j + 1) {
        match t {
            Tok::Punct("{") => return true,
            Tok::Ident(_) => {}
            Tok::Punct(p) if [",", ".", "<", ">", "[", "]", "-", ":", "&", "(", ")"].contains(p) => {}
            _ => return false,
        }
    }
    false
}

fn is_ternary(toks: &[Tok], i: usize) -> bool {
    let prev = if i > 0 { toks.get(i - 1) } else { None };
    let next = toks.get(i + 1);
    if matches!(prev, Some(Tok::Punct("<")) | Some(Tok::Punct(","))) {
        return false;
    }
    !matches!(
        next,
        None | Some(Tok::Punct(";"))
            | Some(Tok::Punct("."))
            | Some(Tok::Punct(")"))
            | Some(Tok::Punct(","))
            | Some(Tok::Punct(">"))
            | Some(Tok::Punct("?"))
    ) && !matches!(next, Some(Tok::Ident(n)) if n == "extends" || n == "super")
}

/// McCabe-style estimate: one per function-like unit plus one per decision
/// point (`if`, `for`, `while`, `case`, `catch`, `&&`, `||`, ternary `?`).
pub fn cyclomatic_complexity(source: &str) -> u64 {
    let code = normalize("", source).text();
    let toks = tokenize(&code);
    let mut total = 0;
    for i in 0..toks.len() {
        match &toks[i] {
            Tok::Ident(w) if DECISION_KEYWORDS.contains(&w.as_str()) => total += 1,
            Tok::Ident(w) if w == "def" => total += 1,
            Tok::Ident(_) if is_function_header(&toks, i) => total += 1,
            Tok::Punct("&&") | Tok::Punct("||") => total += 1,
            Tok::Punct("?") if is_ternary(&toks, i) => total += 1,
            _ => {}
        }
    }
    total
}

/// Metrics for every matching source file below `root`, keyed by the path
/// relative to `root` with `/` separators.
pub fn scan_tree(
    root: &Path,
    repo: &str,
    hash: &str,
    window_length: usize,
    extensions: &[String],
) -> Result<FileMetricsSnapshot> {
    let mut paths = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| std::io::Error::other(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("");
        if !extensions.iter().any(|e| e == ext) {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        paths.push((rel, entry.path().to_path_buf()));
    }
    let loaded: Vec<(NormalizedFile, u64)> = paths
        .par_iter()
        .map(|(rel, full)| {
            let bytes = std::fs::read(full)?;
            let text = String::from_utf8_lossy(&bytes);
            Ok((normalize(rel, &text), cyclomatic_complexity(&text)))
        })
        .collect::<Result<_>>()?;
    let complexities: Vec<u64> = loaded.iter().map(|(_, c)| *c).collect();
    let index = DuplicateIndex::build(loaded.into_iter().map(|(f, _)| f).collect(), window_length);
    let dups: Vec<u64> = index
        .files()
        .par_iter()
        .map(|f| index.count_duplicate_blocks(f))
        .collect();
    let mut per_file = BTreeMap::new();
    for ((f, c), d) in index.files().iter().zip(complexities).zip(dups) {
        per_file.insert(
            f.file_path.clone(),
            FileMetrics {
                complexity: c,
                duplicated_blocks: d,
            },
        );
    }
    Ok(FileMetricsSnapshot {
        repo: repo.to_string(),
        hash: hash.to_string(),
        per_file,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lines(prefix: &str, n: usize) -> String {
        (0..n).map(|i| format!("{prefix}_{i} = {i};\n")).collect()
    }

    #[test]
    fn strips_comments_and_whitespace() {
        let f = normalize("a", "int  x = 1; // init\n");
        assert_eq!(f.lines, vec!["int x = 1;"]);
        assert_eq!(f.line_map, vec![1]);
        assert!(normalize("a", "// one\n/* two\n three */\n").lines.is_empty());
        let g = normalize("a", "a /* x */ b\n\n  c\t d  \nx = \"// not a comment\";");
        assert_eq!(g.lines, vec!["a b", "c d", "x = \"// not a comment\";"]);
        assert_eq!(g.line_map, vec![1, 3, 4]);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(src in "[a-z /*\"\n\t;{}]{0,200}") {
            let once = normalize("p", &src);
            let twice = normalize("p", &once.text());
            prop_assert_eq!(once.lines, twice.lines);
        }
    }

    #[test]
    fn shared_region_of_fifteen_lines_is_one_block() {
        let shared = lines("shared", 15);
        let a = normalize("a", &format!("{}{}{}", lines("a", 5), shared, lines("a2", 5)));
        let b = normalize("b", &format!("{}{}", shared, lines("b", 12)));
        let index = DuplicateIndex::build(vec![a.clone(), b.clone()], 10);
        assert_eq!(count_duplicate_blocks(&a, &index), 1);
        assert_eq!(count_duplicate_blocks(&b, &index), 1);
    }

    #[test]
    fn short_shared_region_is_ignored() {
        let shared = lines("shared", 5);
        let a = normalize("a", &format!("{}{}", shared, lines("a", 20)));
        let b = normalize("b", &format!("{}{}", lines("b", 20), shared));
        let index = DuplicateIndex::build(vec![a.clone(), b.clone()], 10);
        assert_eq!(count_duplicate_blocks(&a, &index), 0);
        assert_eq!(count_duplicate_blocks(&b, &index), 0);
        let tiny = normalize("t", &lines("t", 3));
        let idx2 = DuplicateIndex::build(vec![tiny.clone()], 10);
        assert_eq!(idx2.count_duplicate_blocks(&tiny), 0);
    }

    #[test]
    fn self_duplication_counts_each_site() {
        let body = lines("x", 15);
        let f = normalize("f", &format!("{body}{}{body}", lines("gap", 3)));
        let index = DuplicateIndex::build(vec![f.clone()], 10);
        assert_eq!(index.count_duplicate_blocks(&f), 2);
    }

    #[test]
    fn complexity_examples() {
        assert_eq!(cyclomatic_complexity(""), 0);
        assert_eq!(cyclomatic_complexity("// only a comment\n"), 0);
        let one_if = "int f(int x) {\n  if (x > 0) {\n    return 1;\n  }\n  return 0;\n}\n";
        assert_eq!(cyclomatic_complexity(one_if), 2);
        let mixed = "public static int g(int x, boolean b) throws IOException {\n\
                     if (x > 0 && b) { x++; }\n\
                     switch (x) {\n case 1: return 1;\n case 2: return 2;\n default: return 0;\n }\n}\n";
        assert_eq!(cyclomatic_complexity(mixed), 5);
    }

    #[test]
    fn complexity_heuristics() {
        // Calls, anonymous classes, comments and strings are not counted.
        assert_eq!(cyclomatic_complexity("foo(1);\nString s = \"if && ||\";\n"), 0);
        assert_eq!(cyclomatic_complexity("Runnable r = new Runnable() {\n};\n"), 0);
        assert_eq!(cyclomatic_complexity("int a = b ? 1 : 2;\n"), 1);
        assert_eq!(cyclomatic_complexity("Map<?, ?> m;\nx?.y;\n"), 0);
        assert_eq!(
            cyclomatic_complexity("fn parse(s: &str) -> Result<(), E> {\n    let x = y?;\n}\n"),
            1
        );
        assert_eq!(cyclomatic_complexity("} else if (a || b) {\n"), 2);
    }

    #[test]
    fn complexity_is_additive_over_functions() {
        let f1 = "int f(int x) {\n  if (x > 0) { return 1; }\n  return 0;\n}\n";
        let f2 = "void g() {\n  for (int i = 0; i < 3; i++) { while (true) { break; } }\n}\n";
        assert_eq!(
            cyclomatic_complexity(&format!("{f1}{f2}")),
            cyclomatic_complexity(f1) + cyclomatic_complexity(f2)
        );
    }

    #[test]
    fn scan_tree_reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let shared = lines("shared", 12);
        std::fs::create_dir_all(dir.path().join("src")).unwrap();
        std::fs::write(
            dir.path().join("src/A.java"),
            format!("void a() {{\n{shared}}}\n"),
        )
        .unwrap();
        std::fs::write(dir.path().join("src/B.java"), &shared).unwrap();
        std::fs::write(dir.path().join("notes.txt"), shared).unwrap();
        let exts: Vec<String> = DEFAULT_EXTENSIONS.iter().map(|s| s.to_string()).collect();
        let snap = scan_tree(dir.path(), "r", "h", 10, &exts).unwrap();
        assert_eq!(snap.per_file.len(), 2);
        assert_eq!(snap.per_file["src/A.java"].duplicated_blocks, 1);
        assert_eq!(snap.per_file["src/A.java"].complexity, 1);
        assert_eq!(snap.per_file["src/B.java"].duplicated_blocks, 1);
    }
}
