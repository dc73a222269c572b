//! Training sample sets and their CSV format.
//!
//! One row per observation: the input columns carry resource names, the
//! last column is `performance`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub input_names: Vec<String>,
    /// `n × input_dim` sample inputs.
    pub inputs: Vec<Vec<f64>>,
    /// Observed performance per sample.
    pub targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(input_names: Vec<String>, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} targets", inputs.len()),
                got: format!("{}", targets.len()),
            });
        }
        let dim = input_names.len();
        if inputs.iter().any(|row| row.len() != dim) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} inputs per row", dim),
                got: "ragged rows".into(),
            });
        }
        Ok(Self {
            input_names,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_names.len()
    }

    /// Per-column (min, max) over the inputs.
    pub fn input_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.input_dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in &self.inputs {
            for (k, v) in row.iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        (lo, hi)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.input_names.join(","));
        out.push_str(",performance\n");
        for (row, target) in self.inputs.iter().zip(&self.targets) {
            for v in row {
                out.push_str(&format!("{},", v));
            }
            out.push_str(&format!("{}\n", target));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty training CSV".into()))?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        let perf_col = columns
            .iter()
            .position(|c| *c == "performance")
            .ok_or_else(|| Error::Parse("missing `performance` column".into()))?;
        let input_names: Vec<String> = columns
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != perf_col)
            .map(|(_, c)| c.to_string())
            .collect();

        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (line_no, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != columns.len() {
                return Err(Error::Parse(format!(
                    "row {}: expected {} fields, got {}",
                    line_no + 2,
                    columns.len(),
                    fields.len()
                )));
            }
            let mut row = Vec::with_capacity(input_names.len());
            for (k, field) in fields.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad number {:?}", line_no + 2, field)))?;
                if k == perf_col {
                    targets.push(v);
                } else {
                    row.push(v);
                }
            }
            inputs.push(row);
        }
        Self::new(input_names, inputs, targets)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let set = TrainingSet::new(
            vec!["bandwidth_ul".into(), "cpu_ratio".into()],
            vec![vec![0.25, 0.5], vec![0.125, 0.75]],
            vec![312.5, 41.0625],
        )
        .unwrap();
        let text = set.to_csv();
        assert!(text.starts_with("bandwidth_ul,cpu_ratio,performance\n"));
        let back = TrainingSet::from_csv(&text).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn missing_performance_column_is_an_error() {
        let err = TrainingSet::from_csv("a,b\n1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn input_bounds_cover_data() {
        let set = TrainingSet::new(
            vec!["a".into()],
            vec![vec![0.4], vec![0.1], vec![0.9]],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let (lo, hi) = set.input_bounds();
        assert_eq!(lo, vec![0.1]);
        assert_eq!(hi, vec![0.9]);
    }
}
