use std::fmt::Write as _;

use super::{Dataset, Sample, Split};
use crate::error::{Error, Result};

/// Serializes a dataset: header `V C T n split seed`, then per sample the
/// space-separated tokens, a tab, and the label or `-`.
pub fn write_dataset(d: &Dataset) -> String {
    let mut out = format!(
        "{} {} {} {} {} {}\n",
        d.vocab,
        d.classes,
        d.seq_len,
        d.samples.len(),
        d.split,
        d.seed
    );
    for s in &d.samples {
        for (i, t) in s.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{t}").expect("write to string");
        }
        match s.label {
            Some(l) => writeln!(out, "\t{l}").expect("write to string"),
            None => out.push_str("\t-\n"),
        }
    }
    out
}

fn field<T: std::str::FromStr>(v: Option<&str>, line: usize, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::parse("synth-data", line, format!("missing {name}")))?
        .parse()
        .map_err(|_| Error::parse("synth-data", line, format!("bad {name}")))
}

pub fn read_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("synth-data", 1, "empty file"))?;
    let mut h = header.split_whitespace();
    let vocab: usize = field(h.next(), 1, "V")?;
    let classes: usize = field(h.next(), 1, "C")?;
    let seq_len: usize = field(h.next(), 1, "T")?;
    let n: usize = field(h.next(), 1, "n")?;
    let split: Split = h
        .next()
        .ok_or_else(|| Error::parse("synth-data", 1, "missing split"))?
        .parse()
        .map_err(|_| Error::parse("synth-data", 1, "bad split"))?;
    let seed: u64 = field(h.next(), 1, "seed")?;
    if h.next().is_some() {
        return Err(Error::parse("synth-data", 1, "trailing header fields"));
    }
    let mut samples = Vec::with_capacity(n.min(1 << 20));
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let (toks, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse("synth-data", lineno, "missing tab"))?;
        let tokens = toks
            .split_whitespace()
            .map(|t| {
                let v: usize = t
                    .parse()
                    .map_err(|_| Error::parse("synth-data", lineno, format!("bad token {t:?}")))?;
                if v >= vocab {
                    return Err(Error::parse(
                        "synth-data",
                        lineno,
                        format!("token {v} >= vocabulary {vocab}"),
                    ));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        if tokens.len() != seq_len {
            return Err(Error::parse(
                "synth-data",
                lineno,
                format!("{} tokens, expected {seq_len}", tokens.len()),
            ));
        }
        let label = match label.trim() {
            "-" => None,
            l => {
                let v: usize = field(Some(l), lineno, "label")?;
                if v >= classes {
                    return Err(Error::parse(
                        "synth-data",
                        lineno,
                        format!("label {v} >= classes {classes}"),
                    ));
                }
                Some(v)
            }
        };
        samples.push(Sample { tokens, label });
    }
    if samples.len() != n {
        return Err(Error::parse(
            "synth-data",
            samples.len() + 2,
            format!("header declares {n} samples, found {}", samples.len()),
        ));
    }
    Ok(Dataset {
        vocab,
        classes,
        seq_len,
        split,
        seed,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, TaskSpec};

    #[test]
    fn roundtrip() {
        let spec = TaskSpec::with_seed(4);
        for split in Split::ALL {
            let d = generate(&spec, 17, split).unwrap();
            let text = write_dataset(&d);
            assert_eq!(read_dataset(&text).unwrap(), d);
        }
    }

    #[test]
    fn header_layout() {
        let d = generate(&TaskSpec::with_seed(2), 3, Split::Ood).unwrap();
        let text = write_dataset(&d);
        assert!(text.starts_with("64 4 16 3 ood 2\n"));
        assert!(text.lines().nth(1).unwrap().ends_with("\t-"));
    }

    #[test]
    fn rejects_count_mismatch() {
        let d = generate(&TaskSpec::default(), 3, Split::Test).unwrap();
        let text = write_dataset(&d).replace("64 4 16 3", "64 4 16 4");
        assert!(read_dataset(&text).is_err());
    }
}
