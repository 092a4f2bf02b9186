//! Line-oriented text checkpoints.
//!
//! Reals are written in Rust's shortest round-trip form, so parsing a file
//! reproduces every bit of the saved values.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Default)]
pub(crate) struct Writer {
    out: String,
}

impl Writer {
    pub fn line(&mut self, text: impl AsRef<str>) {
        self.out.push_str(text.as_ref());
        self.out.push('\n');
    }

    pub fn reals(&mut self, values: &[f64]) {
        let mut s = String::with_capacity(values.len() * 20);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            write!(s, "{v:?}").unwrap();
        }
        self.line(s);
    }

    /// Shape line followed by one line per row.
    pub fn matrix(&mut self, t: &Tensor) {
        let (r, c) = t.dims2().expect("checkpoint tensors are matrices");
        self.line(format!("{r} {c}"));
        for i in 0..r {
            self.reals(&t.data()[i * c..(i + 1) * c]);
        }
    }

    pub fn finish(self) -> String {
        self.out
    }
}

pub(crate) struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Reader<'a> {
    pub fn new(text: &'a str) -> Self {
        Reader { lines: text.lines().enumerate(), line_no: 0 }
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse { line: self.line_no, message: message.into() }
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line_no = i + 1;
                Ok(l)
            }
            None => {
                self.line_no += 1;
                Err(self.error("unexpected end of file"))
            }
        }
    }

    /// A line `key v1 v2 ...`; returns the values.
    pub fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.error(format!("expected `{key}`")));
        }
        Ok(parts.collect())
    }

    pub fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let v = self.keyed(key)?;
        match v.as_slice() {
            [x] => x.parse().map_err(|_| self.error(format!("bad integer `{x}`"))),
            _ => Err(self.error(format!("`{key}` takes one value"))),
        }
    }

    pub fn parse_reals(&self, fields: &[&str]) -> Result<Vec<f64>> {
        fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| self.error(format!("bad number `{f}`"))))
            .collect()
    }

    pub fn reals(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != expected {
            return Err(self.error(format!("expected {expected} values, found {}", fields.len())));
        }
        self.parse_reals(&fields)
    }

    pub fn matrix(&mut self) -> Result<Tensor> {
        let line = self.next_line()?;
        let dims: Vec<usize> = line
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| self.error(format!("bad dimension `{f}`"))))
            .collect::<Result<_>>()?;
        let [r, c] = dims[..] else {
            return Err(self.error("expected `rows cols`"));
        };
        if r == 0 || c == 0 {
            return Err(self.error("empty matrix"));
        }
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r {
            data.extend(self.reals(c)?);
        }
        Tensor::matrix(r, c, data)
    }

    pub fn expect_end(&mut self) -> Result<()> {
        for (i, l) in self.lines.by_ref() {
            if !l.trim().is_empty() {
                return Err(Error::Parse { line: i + 1, message: "trailing content".into() });
            }
        }
        Ok(())
    }
}
