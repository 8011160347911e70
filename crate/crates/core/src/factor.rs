use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A categorical variable: one level code per observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
    pub codes: Vec<usize>,
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: Vec<String>, codes: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if let Some(bad) = codes.iter().find(|&&c| c >= levels.len()) {
            return Err(Error::InvalidInput(format!(
                "factor `{name}` has code {bad} but only {} levels",
                levels.len()
            )));
        }
        Ok(Self {
            name,
            levels,
            codes,
        })
    }

    /// Builds a factor from per-observation labels; levels appear in first-seen order.
    pub fn from_labels<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let codes = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                match levels.iter().position(|x| x == l) {
                    Some(i) => i,
                    None => {
                        levels.push(l.to_string());
                        levels.len() - 1
                    }
                }
            })
            .collect();
        Self {
            name: name.into(),
            levels,
            codes,
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.levels.len()];
        for &c in &self.codes {
            counts[c] += 1;
        }
        counts
    }

    /// Number of levels with at least one observation.
    pub fn levels_present(&self) -> usize {
        self.level_counts().iter().filter(|&&c| c > 0).count()
    }

    /// Observation indices per level.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.levels.len()];
        for (i, &c) in self.codes.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Restricts the factor to a subset of observations, keeping the level list.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            levels: self.levels.clone(),
            codes: idx.iter().map(|&i| self.codes[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_become_codes() {
        let f = Factor::from_labels("g", &["b", "a", "b", "c"]);
        assert_eq!(f.levels, vec!["b", "a", "c"]);
        assert_eq!(f.codes, vec![0, 1, 0, 2]);
        assert_eq!(f.level_counts(), vec![2, 1, 1]);
        assert_eq!(f.members()[0], vec![0, 2]);
    }

    #[test]
    fn out_of_range_code_is_rejected() {
        assert!(Factor::new("g", vec!["a".into()], vec![0, 1]).is_err());
    }
}
