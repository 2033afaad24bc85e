//! Change-log, org-chart and metrics ingestion, and derivation of per-file
//! clone introduction/removal events.
//!
//! Every changed file in every commit becomes one [`FileChangeEvent`]. The
//! duplicate-block count before the change is taken from the latest known
//! state of the file in the repository (its entry in the previous commit's
//! metrics, or the most recent snapshot that mentioned it); a path never seen
//! before is a new file and starts at zero duplicates.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Team assigned to people missing from the applicable org chart.
pub const UNKNOWN_TEAM: &str = "Unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub file_path: String,
    pub added: u64,
    pub removed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub repo: String,
    pub hash: String,
    pub author_id: String,
    pub author_date: DateTime<Utc>,
    pub committer_id: String,
    pub committer_date: DateTime<Utc>,
    pub file_changes: Vec<FileChange>,
}

/// Parsed change log plus non-fatal notices (binary files and the like).
#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub commits: Vec<CommitRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrgChartSnapshot {
    pub valid_from: NaiveDate,
    /// author id -> team name
    pub membership: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FileMetrics {
    pub complexity: u64,
    pub duplicated_blocks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FileMetricsSnapshot {
    pub repo: String,
    pub hash: String,
    pub per_file: BTreeMap<String, FileMetrics>,
}

/// Which side of a commit a change is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribution {
    #[default]
    Committer,
    Author,
}

impl std::str::FromStr for Attribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "committer" => Ok(Attribution::Committer),
            "author" => Ok(Attribution::Author),
            other => Err(Error::invalid(format!("unknown attribution {other:?}"))),
        }
    }
}

/// One changed file in one commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChangeEvent {
    pub repo: String,
    pub hash: String,
    pub file_path: String,
    pub team_author: String,
    pub team_committer: String,
    pub add: u64,
    pub rem: u64,
    /// Complexity after the change.
    pub comp: u64,
    /// Duplicated blocks before the change.
    pub dup_prev: u64,
    pub introduced: u64,
    pub fixed: u64,
}

impl FileChangeEvent {
    pub fn dup_curr(&self) -> u64 {
        self.dup_prev + self.introduced - self.fixed
    }

    pub fn team(&self, attribution: Attribution) -> &str {
        match attribution {
            Attribution::Committer => &self.team_committer,
            Attribution::Author => &self.team_author,
        }
    }
}

fn parse_timestamp(s: &str, line: usize, field: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|d| d.with_timezone(&Utc))
        .map_err(|e| Error::Parse {
            line,
            message: format!("bad {field} {s:?}: {e}"),
        })
}

fn parse_line_count(
    s: &str,
    line: usize,
    field: &str,
    path: &str,
    warnings: &mut Vec<String>,
) -> Result<u64> {
    let s = s.trim();
    if s == "-" {
        warnings.push(format!(
            "line {line}: binary change to {path}; {field} counted as 0"
        ));
        return Ok(0);
    }
    s.parse::<u64>().map_err(|_| Error::Parse {
        line,
        message: format!("{field} must be a nonnegative integer or \"-\", got {s:?}"),
    })
}

struct LogBuilder {
    commits: Vec<CommitRecord>,
    seen: HashSet<(String, String)>,
    warnings: Vec<String>,
}

impl LogBuilder {
    fn new() -> Self {
        LogBuilder {
            commits: Vec::new(),
            seen: HashSet::new(),
            warnings: Vec::new(),
        }
    }

    /// Starts a new commit unless `header` continues the current one.
    fn begin(&mut self, header: CommitRecord, line: usize) -> Result<()> {
        if let Some(last) = self.commits.last() {
            if last.repo == header.repo && last.hash == header.hash {
                let same = last.author_id == header.author_id
                    && last.author_date == header.author_date
                    && last.committer_id == header.committer_id
                    && last.committer_date == header.committer_date;
                if !same {
                    return Err(Error::Parse {
                        line,
                        message: format!("conflicting metadata for commit {}", header.hash),
                    });
                }
                return Ok(());
            }
        }
        let key = (header.repo.clone(), header.hash.clone());
        if !self.seen.insert(key) {
            return Err(Error::DuplicateCommit {
                repo: header.repo,
                hash: header.hash,
            });
        }
        self.commits.push(header);
        Ok(())
    }

    fn push_change(&mut self, change: FileChange) {
        if let Some(last) = self.commits.last_mut() {
            last.file_changes.push(change);
        }
    }

    fn finish(self) -> ParsedLog {
        ParsedLog {
            commits: self.commits,
            warnings: self.warnings,
        }
    }
}

/// Parses a change log, detecting the format from its first non-blank line:
/// lines starting with `>>>` select the numstat-style log, anything else the
/// CSV contract.
pub fn parse_change_log(text: &str) -> Result<ParsedLog> {
    match text.lines().find(|l| !l.trim().is_empty()) {
        None => Ok(ParsedLog::default()),
        Some(first) if first.starts_with(">>>") => parse_numstat_log(text),
        Some(_) => parse_change_log_csv(text.as_bytes()),
    }
}

const LOG_HEADER: [&str; 9] = [
    "repo",
    "hash",
    "author_id",
    "author_date",
    "committer_id",
    "committer_date",
    "file_path",
    "added",
    "removed",
];

/// CSV change log: `repo,hash,author_id,author_date,committer_id,committer_date,file_path,added,removed`.
/// Rows of one commit must be contiguous.
pub fn parse_change_log_csv<R: Read>(reader: R) -> Result<ParsedLog> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != LOG_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}, got {}", LOG_HEADER.join(","), got.join(",")),
        });
    }
    let mut builder = LogBuilder::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 9 {
            return Err(Error::Parse {
                line,
                message: format!("expected 9 fields, got {}", record.len()),
            });
        }
        let header = CommitRecord {
            repo: record[0].trim().to_string(),
            hash: record[1].trim().to_string(),
            author_id: record[2].trim().to_string(),
            author_date: parse_timestamp(&record[3], line, "author_date")?,
            committer_id: record[4].trim().to_string(),
            committer_date: parse_timestamp(&record[5], line, "committer_date")?,
            file_changes: Vec::new(),
        };
        if header.repo.is_empty() || header.hash.is_empty() {
            return Err(Error::Parse {
                line,
                message: "repo and hash must be nonempty".into(),
            });
        }
        let path = record[6].trim().to_string();
        let added = parse_line_count(&record[7], line, "added", &path, &mut builder.warnings)?;
        let removed =
            parse_line_count(&record[8], line, "removed", &path, &mut builder.warnings)?;
        builder.begin(header, line)?;
        builder.push_change(FileChange {
            file_path: path,
            added,
            removed,
        });
    }
    Ok(builder.finish())
}

/// Numstat-style log as produced by
/// `git log --reverse --first-parent -m --no-renames --numstat --format='>>>%x09REPO%x09%H%x09%ae%x09%aI%x09%ce%x09%cI'`.
///
/// Each commit starts with a `>>>` header of six tab-separated fields
/// (repo, hash, author, author date, committer, committer date) followed by
/// `added<TAB>removed<TAB>path` lines.
pub fn parse_numstat_log(text: &str) -> Result<ParsedLog> {
    let mut builder = LogBuilder::new();
    let mut have_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(rest) = raw.strip_prefix(">>>") {
            let fields: Vec<&str> = rest.trim_start_matches('\t').split('\t').collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line,
                    message: format!("commit header needs 6 fields, got {}", fields.len()),
                });
            }
            let header = CommitRecord {
                repo: fields[0].trim().to_string(),
                hash: fields[1].trim().to_string(),
                author_id: fields[2].trim().to_string(),
                author_date: parse_timestamp(fields[3], line, "author_date")?,
                committer_id: fields[4].trim().to_string(),
                committer_date: parse_timestamp(fields[5], line, "committer_date")?,
                file_changes: Vec::new(),
            };
            // A header always opens a new commit in this format.
            if builder
                .commits
                .last()
                .is_some_and(|c| c.repo == header.repo && c.hash == header.hash)
            {
                return Err(Error::DuplicateCommit {
                    repo: header.repo,
                    hash: header.hash,
                });
            }
            builder.begin(header, line)?;
            have_header = true;
            continue;
        }
        if !have_header {
            return Err(Error::Parse {
                line,
                message: "file change before any commit header".into(),
            });
        }
        let mut parts = raw.splitn(3, '\t');
        let (a, r, p) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(r), Some(p)) => (a, r, p.trim().to_string()),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: "expected added<TAB>removed<TAB>path".into(),
                })
            }
        };
        let added = parse_line_count(a, line, "added", &p, &mut builder.warnings)?;
        let removed = parse_line_count(r, line, "removed", &p, &mut builder.warnings)?;
        builder.push_change(FileChange {
            file_path: p,
            added,
            removed,
        });
    }
    Ok(builder.finish())
}

#[derive(Deserialize)]
struct RawChart {
    valid_from: NaiveDate,
    teams: BTreeMap<String, Vec<String>>,
}

/// Org-chart JSON: `[{"valid_from":"YYYY-MM-DD","teams":{"Red":["alice"]}}]`.
pub fn parse_org_charts(json: &str) -> Result<Vec<OrgChartSnapshot>> {
    let raw: Vec<RawChart> = serde_json::from_str(json)?;
    let mut charts = Vec::with_capacity(raw.len());
    for chart in raw {
        let mut membership = BTreeMap::new();
        for (team, people) in chart.teams {
            for person in people {
                if let Some(prev) = membership.insert(person.clone(), team.clone()) {
                    if prev != team {
                        return Err(Error::invalid(format!(
                            "{person} belongs to both {prev} and {team} in chart {}",
                            chart.valid_from
                        )));
                    }
                }
            }
        }
        charts.push(OrgChartSnapshot {
            valid_from: chart.valid_from,
            membership,
        });
    }
    if charts.windows(2).any(|w| w[0].valid_from >= w[1].valid_from) {
        return Err(Error::invalid(
            "org-chart snapshots must have strictly increasing valid_from dates",
        ));
    }
    Ok(charts)
}

/// Team of `person` on `at`: membership in the latest snapshot whose
/// `valid_from` is on or before `at`, or [`UNKNOWN_TEAM`].
pub fn find_team<'a>(person: &str, at: NaiveDate, charts: &'a [OrgChartSnapshot]) -> &'a str {
    let idx = charts.partition_point(|c| c.valid_from <= at);
    if idx == 0 {
        return UNKNOWN_TEAM;
    }
    charts[idx - 1]
        .membership
        .get(person)
        .map(String::as_str)
        .unwrap_or(UNKNOWN_TEAM)
}

#[derive(Deserialize)]
struct MetricsRow {
    repo: String,
    hash: String,
    file_path: String,
    complexity: u64,
    duplicated_blocks: u64,
}

/// Metrics CSV: `repo,hash,file_path,complexity,duplicated_blocks`.
/// Snapshots are returned in first-appearance order.
pub fn parse_metrics_csv<R: Read>(reader: R) -> Result<Vec<FileMetricsSnapshot>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut order: Vec<(String, String)> = Vec::new();
    let mut map: HashMap<(String, String), FileMetricsSnapshot> = HashMap::new();
    for row in rdr.deserialize::<MetricsRow>() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let key = (row.repo.clone(), row.hash.clone());
        let snap = map.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            FileMetricsSnapshot {
                repo: row.repo.clone(),
                hash: row.hash.clone(),
                per_file: BTreeMap::new(),
            }
        });
        snap.per_file.insert(
            row.file_path,
            FileMetrics {
                complexity: row.complexity,
                duplicated_blocks: row.duplicated_blocks,
            },
        );
    }
    Ok(order
        .into_iter()
        .map(|k| map.remove(&k).expect("key recorded on insert"))
        .collect())
}

pub fn write_metrics_csv<W: Write>(snapshots: &[FileMetricsSnapshot], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["repo", "hash", "file_path", "complexity", "duplicated_blocks"])?;
    for snap in snapshots {
        for (path, m) in &snap.per_file {
            wtr.write_record([
                snap.repo.as_str(),
                snap.hash.as_str(),
                path.as_str(),
                &m.complexity.to_string(),
                &m.duplicated_blocks.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Runs the per-file clone accounting over a change history.
///
/// Both `introduced` (positive duplicate delta) and `fixed` (negative delta)
/// are filled in, so the same rows serve both outcome kinds.
pub fn derive_events(
    commits: &[CommitRecord],
    metrics: &[FileMetricsSnapshot],
    charts: &[OrgChartSnapshot],
) -> Result<Vec<FileChangeEvent>> {
    let by_commit: HashMap<(&str, &str), &FileMetricsSnapshot> = metrics
        .iter()
        .map(|m| ((m.repo.as_str(), m.hash.as_str()), m))
        .collect();
    let missing: Vec<String> = commits
        .iter()
        .filter(|c| !by_commit.contains_key(&(c.repo.as_str(), c.hash.as_str())))
        .map(|c| format!("{}:{}", c.repo, c.hash))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingMetrics(missing));
    }

    // Latest known metrics per (repo, path).
    let mut state: HashMap<(String, String), FileMetrics> = HashMap::new();
    let mut events = Vec::new();
    for commit in commits {
        let snapshot = by_commit[&(commit.repo.as_str(), commit.hash.as_str())];
        let team_author = find_team(&commit.author_id, commit.author_date.date_naive(), charts);
        let team_committer = find_team(
            &commit.committer_id,
            commit.committer_date.date_naive(),
            charts,
        );
        for change in &commit.file_changes {
            let key = (commit.repo.clone(), change.file_path.clone());
            let prev = state.get(&key).copied().unwrap_or_default();
            let curr = snapshot
                .per_file
                .get(&change.file_path)
                .copied()
                .unwrap_or_default();
            let delta = curr.duplicated_blocks as i64 - prev.duplicated_blocks as i64;
            events.push(FileChangeEvent {
                repo: commit.repo.clone(),
                hash: commit.hash.clone(),
                file_path: change.file_path.clone(),
                team_author: team_author.to_string(),
                team_committer: team_committer.to_string(),
                add: change.added,
                rem: change.removed,
                comp: curr.complexity,
                dup_prev: prev.duplicated_blocks,
                introduced: delta.max(0) as u64,
                fixed: (-delta).max(0) as u64,
            });
        }
        for change in &commit.file_changes {
            if !snapshot.per_file.contains_key(&change.file_path) {
                state.remove(&(commit.repo.clone(), change.file_path.clone()));
            }
        }
        for (path, m) in &snapshot.per_file {
            state.insert((commit.repo.clone(), path.clone()), *m);
        }
    }
    Ok(events)
}

/// Clone-introduction events; see [`derive_events`].
pub fn derive_introductions(
    commits: &[CommitRecord],
    metrics: &[FileMetricsSnapshot],
    charts: &[OrgChartSnapshot],
) -> Result<Vec<FileChangeEvent>> {
    derive_events(commits, metrics, charts)
}

/// Clone-removal events; see [`derive_events`].
pub fn derive_removals(
    commits: &[CommitRecord],
    metrics: &[FileMetricsSnapshot],
    charts: &[OrgChartSnapshot],
) -> Result<Vec<FileChangeEvent>> {
    derive_events(commits, metrics, charts)
}

pub fn write_events_csv<W: Write>(events: &[FileChangeEvent], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for e in events {
        wtr.serialize(e)?;
    }
    if events.is_empty() {
        wtr.write_record([
            "repo",
            "hash",
            "file_path",
            "team_author",
            "team_committer",
            "add",
            "rem",
            "comp",
            "dup_prev",
            "introduced",
            "fixed",
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_events_csv<R: Read>(r: R) -> Result<Vec<FileChangeEvent>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize::<FileChangeEvent>() {
        let e = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        if e.introduced > 0 && e.fixed > 0 {
            return Err(Error::invalid(format!(
                "event {}:{}:{} has both introduced and fixed clones",
                e.repo, e.hash, e.file_path
            )));
        }
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn charts() -> Vec<OrgChartSnapshot> {
        parse_org_charts(
            r#"[{"valid_from":"2020-01-01","teams":{"Red":["alice"],"Green":["bob"]}},
                {"valid_from":"2021-01-01","teams":{"Blue":["alice"],"Green":["bob"]}}]"#,
        )
        .unwrap()
    }

    #[test]
    fn csv_row_maps_fields() {
        let text = "repo,hash,author_id,author_date,committer_id,committer_date,file_path,added,removed\n\
                    r1,abc,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,src/A.java,10,4\n";
        let log = parse_change_log(text).unwrap();
        assert_eq!(log.commits.len(), 1);
        let c = &log.commits[0];
        assert_eq!(c.repo, "r1");
        assert_eq!(c.hash, "abc");
        assert_eq!(c.author_id, "alice");
        assert_eq!(c.committer_id, "bob");
        assert_eq!(
            c.file_changes,
            vec![FileChange {
                file_path: "src/A.java".into(),
                added: 10,
                removed: 4
            }]
        );
        assert!(log.warnings.is_empty());
    }

    #[test]
    fn binary_marker_counts_zero_with_warning() {
        let text = "repo,hash,author_id,author_date,committer_id,committer_date,file_path,added,removed\n\
                    r1,abc,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,logo.png,-,-\n\
                    r1,abc,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,src/A.java,3,1\n";
        let log = parse_change_log(text).unwrap();
        let fc = &log.commits[0].file_changes;
        assert_eq!((fc[0].added, fc[0].removed), (0, 0));
        assert_eq!((fc[1].added, fc[1].removed), (3, 1));
        assert_eq!(log.warnings.len(), 2);
        assert!(log.warnings[0].contains("logo.png"));
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_change_log("").unwrap().commits.is_empty());
        assert!(parse_change_log("\n  \n").unwrap().commits.is_empty());
        let header_only =
            "repo,hash,author_id,author_date,committer_id,committer_date,file_path,added,removed\n";
        assert!(parse_change_log(header_only).unwrap().commits.is_empty());
    }

    #[test]
    fn malformed_row_names_line() {
        let text = "repo,hash,author_id,author_date,committer_id,committer_date,file_path,added,removed\n\
                    r1,abc,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,a,1,1\n\
                    r1,abd,alice,not-a-date,bob,2020-01-03T00:00:00Z,a,1,1\n";
        match parse_change_log(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let neg = "repo,hash,author_id,author_date,committer_id,committer_date,file_path,added,removed\n\
                   r1,abc,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,a,-3,1\n";
        assert!(matches!(parse_change_log(neg), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicate_commit_is_rejected() {
        let text = "repo,hash,author_id,author_date,committer_id,committer_date,file_path,added,removed\n\
                    r1,abc,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,a,1,1\n\
                    r1,abd,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,a,1,1\n\
                    r1,abc,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,b,1,1\n";
        assert!(matches!(
            parse_change_log(text),
            Err(Error::DuplicateCommit { .. })
        ));
        // Same hash in a different repository is fine.
        let ok = "repo,hash,author_id,author_date,committer_id,committer_date,file_path,added,removed\n\
                  r1,abc,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,a,1,1\n\
                  r2,abc,alice,2020-01-02T00:00:00Z,bob,2020-01-03T00:00:00Z,a,1,1\n";
        assert_eq!(parse_change_log(ok).unwrap().commits.len(), 2);
    }

    #[test]
    fn numstat_log_parses() {
        let text = ">>>\tr1\tabc\talice\t2020-01-02T00:00:00+01:00\tbob\t2020-01-03T00:00:00Z\n\
                    10\t4\tsrc/A.java\n\
                    -\t-\tlogo.png\n\
                    \n\
                    >>>\tr1\tdef\tbob\t2020-01-04T00:00:00Z\tbob\t2020-01-04T00:00:00Z\n\
                    1\t0\tsrc/B.java\n";
        let log = parse_change_log(text).unwrap();
        assert_eq!(log.commits.len(), 2);
        assert_eq!(log.commits[0].file_changes.len(), 2);
        assert_eq!(log.commits[0].author_date.to_rfc3339(), "2020-01-01T23:00:00+00:00");
        assert_eq!(log.warnings.len(), 2);
        assert_eq!(log.commits[1].file_changes[0].added, 1);
    }

    #[test]
    fn find_team_cases() {
        let c = charts();
        assert_eq!(find_team("alice", date("2020-06-01"), &c), "Red");
        assert_eq!(find_team("alice", date("2021-01-01"), &c), "Blue");
        assert_eq!(find_team("alice", date("2020-12-31"), &c), "Red");
        assert_eq!(find_team("mallory", date("2020-06-01"), &c), UNKNOWN_TEAM);
        assert_eq!(find_team("alice", date("2019-12-31"), &c), UNKNOWN_TEAM);
        assert_eq!(find_team("alice", date("2020-01-01"), &[]), UNKNOWN_TEAM);
    }

    #[test]
    fn find_team_matches_linear_scan() {
        let c = charts();
        let linear = |p: &str, d: NaiveDate| -> String {
            let mut team = UNKNOWN_TEAM.to_string();
            for snap in &c {
                if snap.valid_from <= d {
                    team = snap.membership.get(p).cloned().unwrap_or(UNKNOWN_TEAM.into());
                }
            }
            team
        };
        let mut d = date("2019-12-25");
        while d < date("2021-01-10") {
            for p in ["alice", "bob", "carol"] {
                assert_eq!(find_team(p, d, &c), linear(p, d));
            }
            d = d.succ_opt().unwrap();
        }
    }

    #[test]
    fn org_charts_are_validated() {
        assert!(parse_org_charts(
            r#"[{"valid_from":"2021-01-01","teams":{}},{"valid_from":"2020-01-01","teams":{}}]"#
        )
        .is_err());
        assert!(parse_org_charts(
            r#"[{"valid_from":"2021-01-01","teams":{"A":["x"],"B":["x"]}}]"#
        )
        .is_err());
    }

    fn commit(hash: &str, files: &[&str]) -> CommitRecord {
        let t = DateTime::parse_from_rfc3339("2020-02-01T10:00:00Z")
            .unwrap()
            .with_timezone(&Utc);
        CommitRecord {
            repo: "r".into(),
            hash: hash.into(),
            author_id: "alice".into(),
            author_date: t,
            committer_id: "bob".into(),
            committer_date: t,
            file_changes: files
                .iter()
                .map(|f| FileChange {
                    file_path: f.to_string(),
                    added: 30,
                    removed: 0,
                })
                .collect(),
        }
    }

    fn snap(hash: &str, files: &[(&str, u64, u64)]) -> FileMetricsSnapshot {
        FileMetricsSnapshot {
            repo: "r".into(),
            hash: hash.into(),
            per_file: files
                .iter()
                .map(|(f, c, d)| {
                    (
                        f.to_string(),
                        FileMetrics {
                            complexity: *c,
                            duplicated_blocks: *d,
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn delta_rules() {
        let commits = vec![commit("c1", &["A"]), commit("c2", &["A"]), commit("c3", &["A"])];
        let metrics = vec![
            snap("c1", &[("A", 3, 2)]),
            snap("c2", &[("A", 3, 5)]),
            snap("c3", &[("A", 3, 1)]),
        ];
        let ev = derive_events(&commits, &metrics, &charts()).unwrap();
        // new file with two duplicates from scratch
        assert_eq!((ev[0].dup_prev, ev[0].introduced, ev[0].fixed), (0, 2, 0));
        // 2 -> 5
        assert_eq!((ev[1].dup_prev, ev[1].introduced, ev[1].fixed), (2, 3, 0));
        // 5 -> 1
        assert_eq!((ev[2].dup_prev, ev[2].introduced, ev[2].fixed), (5, 0, 4));
        assert_eq!(ev[0].team_committer, "Green");
        assert_eq!(ev[0].team_author, "Red");
    }

    #[test]
    fn new_file_without_duplicates() {
        let ev = derive_events(&[commit("c1", &["N"])], &[snap("c1", &[("N", 4, 0)])], &[])
            .unwrap();
        assert_eq!((ev[0].dup_prev, ev[0].introduced, ev[0].fixed), (0, 0, 0));
        assert_eq!(ev[0].add, 30);
        assert_eq!(ev[0].comp, 4);
    }

    #[test]
    fn removal_rules() {
        let commits = vec![commit("c1", &["A"]), commit("c2", &["A"]), commit("c3", &["A"])];
        let metrics = vec![
            snap("c1", &[("A", 1, 5)]),
            snap("c2", &[("A", 1, 2)]),
            snap("c3", &[("A", 1, 5)]),
        ];
        let ev = derive_removals(&commits, &metrics, &[]).unwrap();
        assert_eq!(ev[1].fixed, 3);
        assert_eq!(ev[2].fixed, 0);
        assert_eq!(ev[2].introduced, 3);
    }

    #[test]
    fn previous_state_comes_from_unchanged_files_too() {
        // B changes in c2 without being edited, through a clone elsewhere.
        let commits = vec![commit("c1", &["A", "B"]), commit("c2", &["A"]), commit("c3", &["B"])];
        let metrics = vec![
            snap("c1", &[("A", 1, 0), ("B", 1, 0)]),
            snap("c2", &[("A", 1, 1), ("B", 1, 1)]),
            snap("c3", &[("A", 1, 1), ("B", 1, 1)]),
        ];
        let ev = derive_events(&commits, &metrics, &[]).unwrap();
        assert_eq!(ev[3].file_path, "B");
        assert_eq!((ev[3].dup_prev, ev[3].introduced), (1, 0));
    }

    #[test]
    fn missing_snapshot_lists_hashes() {
        let err = derive_events(
            &[commit("c1", &["A"]), commit("c2", &["A"])],
            &[snap("c1", &[("A", 1, 0)])],
            &[],
        )
        .unwrap_err();
        match err {
            Error::MissingMetrics(h) => assert_eq!(h, vec!["r:c2".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn events_csv_roundtrip() {
        let commits = vec![commit("c1", &["A", "B"])];
        let metrics = vec![snap("c1", &[("A", 7, 1), ("B", 2, 0)])];
        let ev = derive_events(&commits, &metrics, &charts()).unwrap();
        let mut buf = Vec::new();
        write_events_csv(&ev, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "repo,hash,file_path,team_author,team_committer,add,rem,comp,dup_prev,introduced,fixed\n"
        ));
        assert_eq!(read_events_csv(buf.as_slice()).unwrap(), ev);
    }
}
