use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LearnError;

pub const CHECKPOINT_FORMAT: &str = "dpi-checkpoint v1";

/// Dense row-major matrix stored in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Trained state as TOML text: named scalars (currents in pA), weight
/// matrices and the seeds that produced them. Maps are ordered, so the same
/// checkpoint always serializes to the same bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub kind: String,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub matrices: Vec<Matrix>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: kind.to_string(),
            seeds: BTreeMap::new(),
            scalars: BTreeMap::new(),
            matrices: Vec::new(),
        }
    }

    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Result<(), LearnError> {
        if data.len() != rows * cols {
            return Err(LearnError::Checkpoint(format!("matrix {name}: {} values for {rows}x{cols}", data.len())));
        }
        if self.matrix(name).is_some() {
            return Err(LearnError::Checkpoint(format!("duplicate matrix {name}")));
        }
        self.matrices.push(Matrix { name: name.to_string(), rows, cols, data });
        Ok(())
    }

    pub fn matrix(&self, name: &str) -> Option<&Matrix> {
        self.matrices.iter().find(|m| m.name == name)
    }

    pub fn scalar(&self, name: &str) -> Result<f64, LearnError> {
        self.scalars.get(name).copied().ok_or_else(|| LearnError::Checkpoint(format!("missing scalar {name}")))
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(LearnError::Checkpoint(format!("unsupported format '{}'", self.format)));
        }
        if let Some((k, v)) = self.scalars.iter().find(|(_, v)| !v.is_finite()) {
            return Err(LearnError::Checkpoint(format!("scalar {k} = {v}")));
        }
        if let Some((k, _)) = self.seeds.iter().find(|(_, &v)| v > i64::MAX as u64) {
            return Err(LearnError::Checkpoint(format!("seed {k} does not fit a TOML integer")));
        }
        for m in &self.matrices {
            if m.data.len() != m.rows * m.cols {
                return Err(LearnError::Checkpoint(format!(
                    "matrix {}: {} values for {}x{}",
                    m.name,
                    m.data.len(),
                    m.rows,
                    m.cols
                )));
            }
            if m.data.iter().any(|v| !v.is_finite()) {
                return Err(LearnError::Checkpoint(format!("matrix {} has non-finite entries", m.name)));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, LearnError> {
        self.validate()?;
        toml::to_string(self).map_err(|e| LearnError::Checkpoint(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, LearnError> {
        let c: Checkpoint = toml::from_str(text).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes_and_formats() {
        let mut c = Checkpoint::new("classifier");
        assert!(c.add_matrix("AMPA", 2, 3, vec![0.0; 5]).is_err());
        c.add_matrix("AMPA", 2, 3, vec![0.0; 6]).unwrap();
        assert!(c.add_matrix("AMPA", 2, 3, vec![0.0; 6]).is_err());
        let text = c.to_toml().unwrap().replace("dpi-checkpoint v1", "dpi-checkpoint v0");
        assert!(Checkpoint::from_toml(&text).is_err());
        assert!(Checkpoint::from_toml("format = \"dpi-checkpoint v1\"\nkind = \"x\"\nextra = 1\n").is_err());
        assert!(c.scalar("I_tau_pA").is_err());
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_exact(
            values in prop::collection::vec(-1e6f64..1e6, 6),
            scalar in 1e-3f64..1e4,
            seed in 0u64..(1 << 62),
        ) {
            let mut c = Checkpoint::new("classifier");
            c.seeds.insert("train".into(), seed);
            c.scalars.insert("I_tau_pA".into(), scalar);
            c.add_matrix("GABA_A", 3, 2, values).unwrap();
            let text = c.to_toml().unwrap();
            let back = Checkpoint::from_toml(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_toml().unwrap(), text);
        }
    }
}
