//! Plain-text dataset interchange.
//!
//! ```text
//! c=2
//! class 0
//! 0.5 1.25
//! -3 4
//!
//! class 1
//! 1 1
//! ```
//!
//! A `c=<int>` header, then one block per image: a `class <id>` line followed
//! by one line of `c` decimals per descriptor. Blocks are separated by blank
//! lines. Images of the same id are grouped into one class; classes keep the
//! order of their first appearance. Values are rounded to `f32`, the
//! precision of the binary format.

use adm_core::{DescriptorSet, LabeledClass, LabeledDataset};

use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn parse_text(input: &str) -> Result<LabeledDataset> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    let (hline, header) = lines
        .by_ref()
        .find(|(_, l)| !l.is_empty())
        .ok_or_else(|| parse_err(1, "missing \"c=<int>\" header"))?;
    let c: usize = header
        .strip_prefix("c=")
        .and_then(|v| v.trim().parse().ok())
        .filter(|&c| c > 0)
        .ok_or_else(|| {
            parse_err(
                hline,
                format!("expected \"c=<positive int>\", found {header:?}"),
            )
        })?;

    let mut classes: Vec<LabeledClass> = Vec::new();
    // (line of the class header, id, values so far)
    let mut current: Option<(usize, u32, Vec<f64>)> = None;

    let finish =
        |cur: Option<(usize, u32, Vec<f64>)>, classes: &mut Vec<LabeledClass>| -> Result<()> {
            let Some((line, id, data)) = cur else {
                return Ok(());
            };
            if data.is_empty() {
                return Err(parse_err(
                    line,
                    format!("class {id} image has no descriptors"),
                ));
            }
            let set = DescriptorSet::new(data.len() / c, c, data)
                .map_err(|e| parse_err(line, e.to_string()))?;
            match classes.iter_mut().find(|k| k.id == id) {
                Some(k) => k.images.push(set),
                None => classes.push(LabeledClass {
                    id,
                    images: vec![set],
                }),
            }
            Ok(())
        };

    for (no, line) in lines {
        if line.is_empty() {
            finish(current.take(), &mut classes)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix("class") {
            finish(current.take(), &mut classes)?;
            let id: u32 = rest.trim().parse().map_err(|_| {
                parse_err(no, format!("expected \"class <u32 id>\", found {line:?}"))
            })?;
            current = Some((no, id, Vec::new()));
            continue;
        }
        let Some((_, _, data)) = current.as_mut() else {
            return Err(parse_err(
                no,
                "descriptor line before any \"class <id>\" line",
            ));
        };
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(no, format!("{tok:?} is not a decimal number")))?;
            let v = v as f32;
            if !v.is_finite() {
                return Err(parse_err(no, format!("{tok:?} is not finite in f32")));
            }
            data.push(v as f64);
            count += 1;
        }
        if count != c {
            return Err(parse_err(no, format!("expected {c} values, found {count}")));
        }
    }
    finish(current.take(), &mut classes)?;

    if classes.is_empty() {
        return Err(parse_err(hline, "no images after the header"));
    }
    Ok(LabeledDataset::new(classes)?)
}
