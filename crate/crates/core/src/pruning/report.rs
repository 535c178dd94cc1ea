use super::circuit::ScoreKind;
use super::taylor::HeadScore;
use crate::error::{Error, Result};

/// Taylor head scores with their provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub seed: u64,
    pub scores: Vec<HeadScore>,
}

/// Heads in greedy removal order with the objective value after each removal.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitRanking {
    pub kind: ScoreKind,
    pub seed: u64,
    pub removals: Vec<(usize, usize)>,
    pub trace: Vec<f64>,
}

const COLUMNS: &str = "layer\thead\tscore";

fn parse_header(line: Option<&str>, key: &str) -> Result<(String, u64)> {
    let line = line.ok_or_else(|| Error::parse("pruning", 1, "empty report"))?;
    let rest = line
        .strip_prefix("# ")
        .ok_or_else(|| Error::parse("pruning", 1, "missing '# ' header"))?;
    let mut value = None;
    let mut seed = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some((k, v)) if k == key => value = Some(v.to_string()),
            Some(("seed", v)) => {
                seed = Some(
                    v.parse()
                        .map_err(|_| Error::parse("pruning", 1, "bad seed"))?,
                )
            }
            _ => {
                return Err(Error::parse(
                    "pruning",
                    1,
                    format!("unexpected header field {kv:?}"),
                ))
            }
        }
    }
    Ok((
        value.ok_or_else(|| Error::parse("pruning", 1, format!("missing {key}")))?,
        seed.ok_or_else(|| Error::parse("pruning", 1, "missing seed"))?,
    ))
}

fn parse_rows(lines: std::str::Lines<'_>) -> Result<Vec<(usize, usize, f64)>> {
    let mut lines = lines.enumerate();
    match lines.next() {
        Some((_, l)) if l == COLUMNS => {}
        _ => return Err(Error::parse("pruning", 2, "missing column header")),
    }
    lines
        .map(|(i, line)| {
            let n = i + 2;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(
                    "pruning",
                    n,
                    "expected three tab-separated fields",
                ));
            }
            let bad = |what: &str| Error::parse("pruning", n, format!("bad {what}"));
            Ok((
                f[0].parse().map_err(|_| bad("layer"))?,
                f[1].parse().map_err(|_| bad("head"))?,
                f[2].parse().map_err(|_| bad("score"))?,
            ))
        })
        .collect()
}

impl ScoreReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("# score=taylor seed={}\n{COLUMNS}\n", self.seed);
        for s in &self.scores {
            out.push_str(&format!("{}\t{}\t{}\n", s.layer, s.head, s.score));
        }
        out
    }
}

impl CircuitRanking {
    pub fn to_text(&self) -> String {
        let mut out = format!("# score={} seed={}\n{COLUMNS}\n", self.kind, self.seed);
        for (&(l, h), s) in self.removals.iter().zip(&self.trace) {
            out.push_str(&format!("{l}\t{h}\t{s}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let (kind, seed) = parse_header(lines.next(), "score")?;
        let kind: ScoreKind = kind.parse()?;
        let rows = parse_rows(lines)?;
        let mut seen = std::collections::HashSet::new();
        for (i, &(l, h, _)) in rows.iter().enumerate() {
            if !seen.insert((l, h)) {
                return Err(Error::parse(
                    "pruning",
                    i + 3,
                    format!("duplicate head ({l}, {h})"),
                ));
            }
        }
        Ok(Self {
            kind,
            seed,
            removals: rows.iter().map(|&(l, h, _)| (l, h)).collect(),
            trace: rows.iter().map(|&(_, _, s)| s).collect(),
        })
    }
}
