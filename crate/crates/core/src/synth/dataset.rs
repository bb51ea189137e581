//! JSON Lines storage for examples and notes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::questions::QAExample;
use crate::error::{Error, Result};

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Streams records one line at a time; blank lines are skipped.
pub struct JsonlReader<T> {
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    path: std::path::PathBuf,
    _marker: std::marker::PhantomData<T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonlReader {
            lines: BufReader::new(f).lines(),
            line_no: 0,
            path: path.to_path_buf(),
            _marker: std::marker::PhantomData,
        })
    }
}

impl<T: DeserializeOwned> Iterator for JsonlReader<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Result<T>> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| Error::Dataset {
                line: self.line_no,
                message: e.to_string(),
            }));
        }
    }
}

pub fn write_dataset(examples: &[QAExample], path: &Path) -> Result<()> {
    write_jsonl(examples, path)
}

/// Reads and validates every example.
pub fn read_dataset(path: &Path) -> Result<Vec<QAExample>> {
    let mut out = Vec::new();
    for (i, ex) in JsonlReader::<QAExample>::open(path)?.enumerate() {
        let ex = ex?;
        ex.validate().map_err(|e| Error::Dataset {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_templates, generate_corpus, instantiate_questions, GeneratorConfig, Lexicon};

    #[test]
    fn round_trip_and_field_errors() {
        let lex = Lexicon::clinical();
        let gaz = lex.gazetteer().unwrap();
        let notes = generate_corpus(&GeneratorConfig { num_notes: 3, ..Default::default() }, &lex).unwrap();
        let (ex, _) = instantiate_questions(&notes, &default_templates(), &gaz);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&ex, &p).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), ex);

        let mut v: serde_json::Value = serde_json::to_value(&ex[0]).unwrap();
        v.as_object_mut().unwrap().remove("lf_id");
        let body = format!("{}\n{}\n", serde_json::to_string(&ex[1]).unwrap(), v);
        std::fs::write(&p, body).unwrap();
        match read_dataset(&p) {
            Err(Error::Dataset { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("lf_id"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tampered_answer_rejected() {
        let lex = Lexicon::clinical();
        let gaz = lex.gazetteer().unwrap();
        let notes = generate_corpus(&GeneratorConfig { num_notes: 1, ..Default::default() }, &lex).unwrap();
        let (mut ex, _) = instantiate_questions(&notes, &default_templates(), &gaz);
        ex[0].answer.text.push('x');
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&ex[..1], &p).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Dataset { line: 1, .. })));
    }
}
