use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HwError;
use crate::dpi_core::PICO;

pub const MAX_COARSE: u8 = 7;

/// Coarse/fine code of an on-chip bias generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BiasCode {
    pub coarse: u8,
    pub fine: u8,
}

impl BiasCode {
    pub fn new(coarse: i64, fine: i64) -> Result<Self, HwError> {
        if !(0..=MAX_COARSE as i64).contains(&coarse) || !(0..=255).contains(&fine) {
            return Err(HwError::InvalidCode { coarse, fine });
        }
        Ok(BiasCode { coarse: coarse as u8, fine: fine as u8 })
    }
}

impl fmt::Display for BiasCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.coarse, self.fine)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Linear in log-current.
    Log,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct BiasAnchors {
    interpolation: Interpolation,
    // coarse -> (fine -> current in A), fine ascending
    by_coarse: BTreeMap<u8, BTreeMap<u8, f64>>,
}

/// Measured (coarse, fine) -> current anchors per bias name.
///
/// Immutable once built; lookups between anchors of the same coarse value
/// interpolate in fine, lookups outside the anchored span fail.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationTable {
    biases: BTreeMap<String, BiasAnchors>,
}

const DEFAULT_TABLE: &str = include_str!("../../calibration/default.csv");

impl CalibrationTable {
    /// Built-in table: the measured anchors plus illustrative end points.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TABLE).expect("built-in calibration table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, HwError> {
        let text = std::fs::read_to_string(path).map_err(|e| HwError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses `bias_name,coarse,fine,current_pA[,interpolation]` records.
    /// Blank lines, `#` comments and a header row are ignored.
    pub fn parse(text: &str) -> Result<Self, HwError> {
        let mut table = CalibrationTable::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("bias_name") {
                continue;
            }
            let bad = |msg: String| HwError::Parse { line: i + 1, message: msg };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 && cols.len() != 5 {
                return Err(bad(format!("expected 4 or 5 columns, found {}", cols.len())));
            }
            let coarse: i64 = cols[1].parse().map_err(|_| bad(format!("bad coarse '{}'", cols[1])))?;
            let fine: i64 = cols[2].parse().map_err(|_| bad(format!("bad fine '{}'", cols[2])))?;
            let pa: f64 = cols[3].parse().map_err(|_| bad(format!("bad current '{}'", cols[3])))?;
            let code = BiasCode::new(coarse, fine).map_err(|e| bad(e.to_string()))?;
            let interp = match cols.get(4) {
                None => None,
                Some(&"linear") => Some(Interpolation::Linear),
                Some(&"log") => Some(Interpolation::Log),
                Some(other) => return Err(bad(format!("unknown interpolation '{other}'"))),
            };
            table.insert(cols[0], code, pa * PICO, interp).map_err(|e| bad(e.to_string()))?;
        }
        table.check_monotone()?;
        Ok(table)
    }

    /// Adds one anchor. Currents are in amperes.
    pub fn insert(
        &mut self,
        bias: &str,
        code: BiasCode,
        current: f64,
        interpolation: Option<Interpolation>,
    ) -> Result<(), HwError> {
        if !(current > 0.0 && current.is_finite()) {
            return Err(HwError::NonPositiveCurrent { bias: bias.to_string(), code });
        }
        let entry = self.biases.entry(bias.to_string()).or_default();
        if let Some(kind) = interpolation {
            entry.interpolation = kind;
        }
        entry.by_coarse.entry(code.coarse).or_default().insert(code.fine, current);
        Ok(())
    }

    fn check_monotone(&self) -> Result<(), HwError> {
        for (name, anchors) in &self.biases {
            for (&coarse, fines) in &anchors.by_coarse {
                let mut prev: Option<(u8, f64)> = None;
                for (&fine, &cur) in fines {
                    if let Some((pf, pc)) = prev {
                        if cur < pc {
                            return Err(HwError::NotMonotone {
                                bias: name.clone(),
                                lower: BiasCode { coarse, fine: pf },
                                upper: BiasCode { coarse, fine },
                            });
                        }
                    }
                    prev = Some((fine, cur));
                }
            }
        }
        Ok(())
    }

    pub fn bias_names(&self) -> impl Iterator<Item = &str> {
        self.biases.keys().map(String::as_str)
    }

    pub fn contains(&self, bias: &str) -> bool {
        self.biases.contains_key(bias)
    }

    /// Current produced by `code`, in amperes.
    pub fn code_to_current(&self, bias: &str, code: BiasCode) -> Result<f64, HwError> {
        let anchors = self.biases.get(bias).ok_or_else(|| HwError::UnknownBias(bias.to_string()))?;
        let fines =
            anchors.by_coarse.get(&code.coarse).ok_or_else(|| HwError::OutOfRange { bias: bias.to_string(), code })?;
        if let Some(&c) = fines.get(&code.fine) {
            return Ok(c);
        }
        let below = fines.range(..code.fine).next_back();
        let above = fines.range(code.fine..).next();
        match (below, above) {
            (Some((&f0, &c0)), Some((&f1, &c1))) => {
                let t = (code.fine - f0) as f64 / (f1 - f0) as f64;
                Ok(match anchors.interpolation {
                    Interpolation::Linear => c0 + t * (c1 - c0),
                    Interpolation::Log => (c0.ln() + t * (c1.ln() - c0.ln())).exp(),
                })
            }
            _ => Err(HwError::OutOfRange { bias: bias.to_string(), code }),
        }
    }

    /// Every code of `bias` that can be evaluated without extrapolation.
    pub fn valid_codes(&self, bias: &str) -> Result<Vec<BiasCode>, HwError> {
        let anchors = self.biases.get(bias).ok_or_else(|| HwError::UnknownBias(bias.to_string()))?;
        let mut codes = Vec::new();
        for (&coarse, fines) in &anchors.by_coarse {
            let lo = *fines.keys().next().expect("coarse entry has an anchor");
            let hi = *fines.keys().next_back().expect("coarse entry has an anchor");
            codes.extend((lo..=hi).map(|fine| BiasCode { coarse, fine }));
        }
        Ok(codes)
    }

    /// Code whose current is closest to `current` (ties: lowest code).
    ///
    /// Fails when `current` lies more than 1 % outside the span the bias can
    /// produce.
    pub fn nearest_code(&self, bias: &str, current: f64) -> Result<(BiasCode, f64), HwError> {
        let mut best: Option<(BiasCode, f64)> = None;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for code in self.valid_codes(bias)? {
            let c = self.code_to_current(bias, code)?;
            lo = lo.min(c);
            hi = hi.max(c);
            let better = match best {
                None => true,
                Some((_, bc)) => (c - current).abs() < (bc - current).abs(),
            };
            if better {
                best = Some((code, c));
            }
        }
        if current < lo * 0.99 || current > hi * 1.01 {
            return Err(HwError::CurrentOutOfRange { bias: bias.to_string(), current, min: lo, max: hi });
        }
        best.ok_or_else(|| HwError::UnknownBias(bias.to_string()))
    }

    /// Snaps a current to the value of its nearest code.
    pub fn quantize(&self, bias: &str, current: f64) -> Result<f64, HwError> {
        self.nearest_code(bias, current).map(|(_, c)| c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measured_anchors() {
        let t = CalibrationTable::builtin();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9 * b;
        assert!(close(t.code_to_current("IF_TAU", BiasCode::new(6, 22).unwrap()).unwrap(), 4.1 * PICO));
        assert!(close(t.code_to_current("IF_GAIN", BiasCode::new(6, 88).unwrap()).unwrap(), 500.0 * PICO));
        assert!(close(t.code_to_current("IF_DC", BiasCode::new(2, 57).unwrap()).unwrap(), 36.6 * PICO));
    }

    #[test]
    fn interpolation_and_errors() {
        let t = CalibrationTable::parse("A,3,10,10\nA,3,20,30\nB,1,0,1,log\nB,1,2,100\n").unwrap();
        let c = t.code_to_current("A", BiasCode::new(3, 15).unwrap()).unwrap();
        assert!((c - 20.0 * PICO).abs() < 1e-20);
        let c = t.code_to_current("B", BiasCode::new(1, 1).unwrap()).unwrap();
        assert!((c - 10.0 * PICO).abs() < 1e-18);
        assert!(matches!(t.code_to_current("A", BiasCode::new(3, 21).unwrap()), Err(HwError::OutOfRange { .. })));
        assert!(matches!(t.code_to_current("A", BiasCode::new(2, 15).unwrap()), Err(HwError::OutOfRange { .. })));
        assert!(matches!(t.code_to_current("C", BiasCode::new(3, 15).unwrap()), Err(HwError::UnknownBias(_))));
        assert!(BiasCode::new(8, 0).is_err());
        assert!(BiasCode::new(0, 256).is_err());
        assert!(BiasCode::new(-1, 0).is_err());
    }

    #[test]
    fn parse_rejects_bad_rows() {
        assert!(matches!(CalibrationTable::parse("A,3,10\n"), Err(HwError::Parse { line: 1, .. })));
        assert!(matches!(CalibrationTable::parse("A,3,10,-1\n"), Err(HwError::Parse { .. })));
        assert!(matches!(CalibrationTable::parse("A,3,10,5\nA,3,11,4\n"), Err(HwError::NotMonotone { .. })));
    }

    #[test]
    fn builtin_is_monotone_in_fine() {
        let t = CalibrationTable::builtin();
        for name in t.bias_names() {
            let codes = t.valid_codes(name).unwrap();
            for w in codes.windows(2) {
                if w[0].coarse == w[1].coarse {
                    let a = t.code_to_current(name, w[0]).unwrap();
                    let b = t.code_to_current(name, w[1]).unwrap();
                    assert!(b >= a, "{name} {} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn nearest_code_round_trips() {
        let t = CalibrationTable::builtin();
        let (code, c) = t.nearest_code("IF_TAU", 4.1 * PICO).unwrap();
        assert_eq!(code, BiasCode::new(6, 22).unwrap());
        assert!((c - 4.1 * PICO).abs() < 1e-24);
        assert!(t.nearest_code("IF_TAU", 1e-6).is_err());
    }
}
