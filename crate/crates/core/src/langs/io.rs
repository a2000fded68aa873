use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, LabeledSequence};
use crate::error::{Error, Result};

const HEADER: &str = "#alphabet: ";

impl Dataset {
    /// Line-oriented text form: an alphabet header, then
    /// `label<TAB>tokens` or `T:targets<TAB>tokens` per record.
    pub fn to_text(&self) -> Result<String> {
        for a in &self.alphabet {
            if a.is_empty() || a.contains(|c: char| c == ',' || c.is_whitespace() || c == ':') {
                return Err(Error::InvalidArgument(format!(
                    "symbol `{a}` cannot be serialized"
                )));
            }
        }
        self.validate()?;
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}{}", self.alphabet.join(","));
        for s in &self.sequences {
            match s.label() {
                Some(l) => {
                    let _ = write!(out, "{l}");
                }
                None => {
                    let _ = write!(
                        out,
                        "T:{}",
                        self.symbols(s.steps().unwrap_or_default()).join(" ")
                    );
                }
            }
            let _ = writeln!(out, "\t{}", self.symbols(&s.tokens).join(" "));
        }
        Ok(out)
    }

    /// Inverse of [`Dataset::to_text`]. `source` names the input in errors.
    pub fn parse(text: &str, source: &str, expected: Option<&[String]>) -> Result<Dataset> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let alphabet: Vec<String> = match lines.next() {
            None => {
                return Ok(Dataset::empty(
                    expected.map(<[String]>::to_vec).unwrap_or_default(),
                ));
            }
            Some((_, first)) => {
                let rest = first
                    .strip_prefix(HEADER)
                    .ok_or_else(|| err(1, format!("expected `{HEADER}...` header")))?;
                if rest.is_empty() {
                    return Err(err(1, "empty alphabet".into()));
                }
                rest.split(',').map(str::to_string).collect()
            }
        };
        if let Some(exp) = expected {
            if exp != alphabet.as_slice() {
                return Err(Error::AlphabetMismatch {
                    expected: exp.join(","),
                    found: alphabet.join(","),
                });
            }
        }
        let lookup = |line: usize, s: &str| {
            alphabet
                .iter()
                .position(|a| a == s)
                .ok_or_else(|| err(line, format!("symbol `{s}` is not in the alphabet")))
        };
        let mut sequences = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            let (head, body) = line
                .split_once('\t')
                .ok_or_else(|| err(n, "missing tab between target and tokens".into()))?;
            let tokens = body
                .split_whitespace()
                .map(|s| lookup(n, s))
                .collect::<Result<Vec<_>>>()?;
            let record = if let Some(targets) = head.strip_prefix("T:") {
                let steps = targets
                    .split_whitespace()
                    .map(|s| lookup(n, s))
                    .collect::<Result<Vec<_>>>()?;
                if steps.len() != tokens.len() {
                    return Err(err(
                        n,
                        format!("{} targets for {} tokens", steps.len(), tokens.len()),
                    ));
                }
                LabeledSequence::with_steps(tokens, steps)
            } else {
                match head {
                    "0" => LabeledSequence::labeled(tokens, false),
                    "1" => LabeledSequence::labeled(tokens, true),
                    other => return Err(err(n, format!("bad label `{other}`"))),
                }
            };
            sequences.push(record);
        }
        Ok(Dataset {
            alphabet,
            sequences,
        })
    }
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset.to_text()?).map_err(|e| Error::io(path, e))
}

/// Reads a dataset file; with `expected`, the header must list exactly that
/// alphabet.
pub fn read_dataset(path: impl AsRef<Path>, expected: Option<&[String]>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::parse(&text, &path.display().to_string(), expected)
}
