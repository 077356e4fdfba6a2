//! Flat parameter vector with a named segment layout, and its text format.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// All trainable weights of one model as a flat array plus a layout of
/// named, shaped segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<(String, Vec<usize>)>,
    offsets: Vec<usize>,
}

impl ParamVector {
    pub fn zeros(layout: Vec<(String, Vec<usize>)>) -> Self {
        let mut offsets = Vec::with_capacity(layout.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for (_, shape) in &layout {
            total += shape.iter().product::<usize>();
            offsets.push(total);
        }
        ParamVector {
            values: vec![0.0; total],
            layout,
            offsets,
        }
    }

    pub fn from_values(layout: Vec<(String, Vec<usize>)>, values: Vec<f64>) -> Result<Self> {
        let mut pv = ParamVector::zeros(layout);
        if values.len() != pv.values.len() {
            return Err(Error::dim(pv.values.len(), values.len(), "param values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("param values".into()));
        }
        pv.values = values;
        Ok(pv)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[(String, Vec<usize>)] {
        &self.layout
    }

    pub fn segment_range(&self, name: &str) -> Option<(usize, usize)> {
        let idx = self.layout.iter().position(|(n, _)| n == name)?;
        Some((self.offsets[idx], self.offsets[idx + 1]))
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let (s, e) = self.segment_range(name)?;
        Some(&self.values[s..e])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (s, e) = self.segment_range(name)?;
        Some(&mut self.values[s..e])
    }

    /// Concatenate several vectors into one, prefixing segment names.
    pub fn concat(parts: &[(String, &ParamVector)]) -> ParamVector {
        let mut layout = Vec::new();
        let mut values = Vec::new();
        for (prefix, pv) in parts {
            for (name, shape) in &pv.layout {
                layout.push((format!("{prefix}.{name}"), shape.clone()));
            }
            values.extend_from_slice(&pv.values);
        }
        ParamVector::from_values(layout, values).expect("consistent concat")
    }

    /// View of the sub-vector whose segment names start with `prefix.`.
    /// Segments of one prefix are contiguous by construction of `concat`.
    pub fn slice_prefix(&self, prefix: &str) -> Option<(ParamVector, usize)> {
        let pat = format!("{prefix}.");
        let first = self.layout.iter().position(|(n, _)| n.starts_with(&pat))?;
        let mut last = first;
        for (i, (n, _)) in self.layout.iter().enumerate().skip(first) {
            if n.starts_with(&pat) {
                last = i;
            }
        }
        let layout: Vec<_> = self.layout[first..=last]
            .iter()
            .map(|(n, s)| (n[pat.len()..].to_string(), s.clone()))
            .collect();
        let (vs, ve) = (self.offsets[first], self.offsets[last + 1]);
        let pv = ParamVector::from_values(layout, self.values[vs..ve].to_vec()).ok()?;
        Some((pv, vs))
    }

    /// Serialize to the versioned text document format.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        writeln!(out, "format nncore-v1").unwrap();
        writeln!(out, "segments {}", self.layout.len()).unwrap();
        for (name, shape) in &self.layout {
            write!(out, "segment {name}").unwrap();
            for d in shape {
                write!(out, " {d}").unwrap();
            }
            out.push('\n');
        }
        writeln!(out, "values {}", self.values.len()).unwrap();
        for v in &self.values {
            // Shortest representation that parses back to the same f64.
            writeln!(out, "{v}").unwrap();
        }
        out
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header.trim() != "format nncore-v1" {
            return Err(Error::Format(format!(
                "expected 'format nncore-v1', got '{header}'"
            )));
        }
        let seg_line = lines.next().unwrap_or_default();
        let n_segs: usize = seg_line
            .strip_prefix("segments ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format("bad segments line".into()))?;
        let mut layout = Vec::with_capacity(n_segs);
        for _ in 0..n_segs {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format("truncated segment list".into()))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some("segment") {
                return Err(Error::Format(format!("bad segment line '{line}'")));
            }
            let name = parts
                .next()
                .ok_or_else(|| Error::Format("segment missing name".into()))?
                .to_string();
            let shape: Vec<usize> = parts
                .map(|p| {
                    p.parse()
                        .map_err(|_| Error::Format(format!("bad shape in '{line}'")))
                })
                .collect::<Result<_>>()?;
            layout.push((name, shape));
        }
        let val_line = lines.next().unwrap_or_default();
        let n_vals: usize = val_line
            .strip_prefix("values ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format("bad values line".into()))?;
        let mut values = Vec::with_capacity(n_vals);
        for _ in 0..n_vals {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format("truncated value list".into()))?;
            values.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad value '{line}'")))?,
            );
        }
        ParamVector::from_values(layout, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_round_trip_is_exact() {
        let layout = vec![("w0".to_string(), vec![2, 3]), ("b0".to_string(), vec![2])];
        let values = vec![
            1.0,
            -0.1,
            std::f64::consts::PI,
            1e-300,
            -7.25e17,
            0.1 + 0.2,
            4.0,
            5.5,
        ];
        let pv = ParamVector::from_values(layout, values).unwrap();
        let doc = pv.to_document();
        let back = ParamVector::from_document(&doc).unwrap();
        assert_eq!(pv, back);
    }

    #[test]
    fn rejects_non_finite_values() {
        let layout = vec![("w".to_string(), vec![1])];
        assert!(ParamVector::from_values(layout, vec![f64::NAN]).is_err());
    }

    #[test]
    fn concat_and_prefix_slice() {
        let a = ParamVector::from_values(vec![("w0".into(), vec![2])], vec![1.0, 2.0]).unwrap();
        let b = ParamVector::from_values(vec![("w0".into(), vec![1])], vec![3.0]).unwrap();
        let joint = ParamVector::concat(&[("l0".into(), &a), ("l1".into(), &b)]);
        assert_eq!(joint.len(), 3);
        let (part, offset) = joint.slice_prefix("l1").unwrap();
        assert_eq!(offset, 2);
        assert_eq!(part.values(), &[3.0]);
    }
}
