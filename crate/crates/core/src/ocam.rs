//! OCAM contribution metrics and per-repository team ranks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{Attribution, FileChangeEvent};
use crate::stats::average_ranks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcamMetric {
    NCommit,
    Churn,
    AddComp,
    RemComp,
}

impl OcamMetric {
    pub const ALL: [OcamMetric; 4] = [OcamMetric::NCommit, OcamMetric::Churn, OcamMetric::AddComp, OcamMetric::RemComp];

    pub fn name(self) -> &'static str {
        match self {
            OcamMetric::NCommit => "n_commit",
            OcamMetric::Churn => "churn",
            OcamMetric::AddComp => "add_comp",
            OcamMetric::RemComp => "rem_comp",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcamRow {
    pub repo: String,
    pub team: String,
    pub n_commit: u64,
    pub churn: u64,
    pub add_comp: u64,
    pub rem_comp: u64,
    /// Rank per metric in [`OcamMetric::ALL`] order, once ranked.
    pub ranks: Option<[f64; 4]>,
}

impl OcamRow {
    pub fn value(&self, m: OcamMetric) -> u64 {
        match m {
            OcamMetric::NCommit => self.n_commit,
            OcamMetric::Churn => self.churn,
            OcamMetric::AddComp => self.add_comp,
            OcamMetric::RemComp => self.rem_comp,
        }
    }

    pub fn rank(&self, m: OcamMetric) -> Option<f64> {
        self.ranks.map(|r| r[m.index()])
    }
}

/// Rows sorted by repository then team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcamTable {
    pub rows: Vec<OcamRow>,
}

impl OcamTable {
    pub fn get(&self, repo: &str, team: &str) -> Option<&OcamRow> {
        self.rows.iter().find(|r| r.repo == repo && r.team == team)
    }

    /// Long format `repo,team,metric,value,rank`; rank is empty before ranking.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["repo", "team", "metric", "value", "rank"])?;
        for r in &self.rows {
            for m in OcamMetric::ALL {
                let rank = r.rank(m).map(|v| v.to_string()).unwrap_or_default();
                wr.write_record([r.repo.as_str(), r.team.as_str(), m.name(), &r.value(m).to_string(), &rank])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn repo_rows(events: &[&FileChangeEvent], attribution: Attribution) -> Vec<OcamRow> {
    let mut acc: BTreeMap<&str, OcamRow> = BTreeMap::new();
    let mut commits: HashSet<(&str, &str)> = HashSet::new();
    let mut last_comp: HashMap<&str, u64> = HashMap::new();
    for e in events {
        let team = e.team(attribution);
        let row = acc.entry(team).or_insert_with(|| OcamRow {
            repo: e.repo.clone(),
            team: team.to_string(),
            n_commit: 0,
            churn: 0,
            add_comp: 0,
            rem_comp: 0,
            ranks: None,
        });
        if commits.insert((team, e.hash.as_str())) {
            row.n_commit += 1;
        }
        row.churn += e.add.max(e.rem);
        let prev = last_comp.insert(e.file_path.as_str(), e.comp).unwrap_or(0);
        if e.comp > prev {
            row.add_comp += e.comp - prev;
        } else {
            row.rem_comp += prev - e.comp;
        }
    }
    acc.into_values().collect()
}

/// Aggregates events per (repo, team). Events must be in application order
/// within each repository: a file's complexity before a change is taken from
/// its previous event, or 0 for its first.
pub fn ocam_metrics(events: &[FileChangeEvent], attribution: Attribution) -> OcamTable {
    let mut by_repo: BTreeMap<&str, Vec<&FileChangeEvent>> = BTreeMap::new();
    for e in events {
        by_repo.entry(e.repo.as_str()).or_default().push(e);
    }
    let groups: Vec<Vec<&FileChangeEvent>> = by_repo.into_values().collect();
    let rows = groups.par_iter().flat_map_iter(|g| repo_rows(g, attribution)).collect();
    OcamTable { rows }
}

/// Ranks teams within each repository per metric, 1 for the largest value,
/// ties sharing their average rank.
pub fn ocam_rank(table: &OcamTable) -> OcamTable {
    let mut rows = table.rows.clone();
    let mut start = 0;
    while start < rows.len() {
        let mut end = start;
        while end < rows.len() && rows[end].repo == rows[start].repo {
            end += 1;
        }
        let mut ranks = vec![[0.0; 4]; end - start];
        for m in OcamMetric::ALL {
            let neg: Vec<f64> = rows[start..end].iter().map(|r| -(r.value(m) as f64)).collect();
            for (i, r) in average_ranks(&neg).into_iter().enumerate() {
                ranks[i][m.index()] = r;
            }
        }
        for (row, r) in rows[start..end].iter_mut().zip(ranks) {
            row.ranks = Some(r);
        }
        start = end;
    }
    OcamTable { rows }
}
