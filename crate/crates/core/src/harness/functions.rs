//! Synthetic applications with closed-form EFPs.

use crate::domain::{ApplicationDescription, KnobDomain};

use super::HarnessError;

fn check(name: &str, value: f64, lo: f64, hi: f64) -> Result<(), HarnessError> {
    if (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(HarnessError::OutOfRange {
            name: name.to_string(),
            value,
            lo,
            hi,
        })
    }
}

/// `b1 = x² − y`, `b2 = −0.5x − y − 1`, for `−7 ≤ x, y ≤ 4`.
pub fn binh(x: f64, y: f64) -> Result<(f64, f64), HarnessError> {
    check("x", x, -7.0, 4.0)?;
    check("y", y, -7.0, 4.0)?;
    Ok((x * x - y, -0.5 * x - y - 1.0))
}

/// For `−5 ≤ xᵢ ≤ 5`:
///
/// ```text
/// k1 = Σ_{i=1..2} −10 exp(−0.2 √(xᵢ² + xᵢ₊₁²))
/// k2 = Σ_{i=1..3} |xᵢ|^0.8 + 5 sin(xᵢ³)
/// ```
pub fn kursawe(x1: f64, x2: f64, x3: f64) -> Result<(f64, f64), HarnessError> {
    let x = [x1, x2, x3];
    for (i, v) in x.iter().enumerate() {
        check(&format!("x{}", i + 1), *v, -5.0, 5.0)?;
    }
    let k1 = x
        .windows(2)
        .map(|w| -10.0 * (-0.2 * (w[0] * w[0] + w[1] * w[1]).sqrt()).exp())
        .sum();
    let k2 = x.iter().map(|v| v.abs().powf(0.8) + 5.0 * (v * v * v).sin()).sum();
    Ok((k1, k2))
}

/// Both knobs on the integers of `[−7, 4]`: 144 configurations.
pub fn binh_description() -> ApplicationDescription {
    let knob = |n: &str| KnobDomain::range(n, -7.0, 4.0, 1.0).unwrap();
    ApplicationDescription::new("binh", vec![knob("x"), knob("y")], vec!["b1".into(), "b2".into()], vec![])
}

/// All three knobs on the integers of `[−5, 5]`: 1331 configurations.
pub fn kursawe_description() -> ApplicationDescription {
    let knob = |n: &str| KnobDomain::range(n, -5.0, 5.0, 1.0).unwrap();
    ApplicationDescription::new(
        "kursawe",
        vec![knob("x1"), knob("x2"), knob("x3")],
        vec!["k1".into(), "k2".into()],
        vec![],
    )
}

/// A closed-form application: its description and exact EFPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synthetic {
    Binh,
    Kursawe,
}

impl Synthetic {
    pub fn description(self) -> ApplicationDescription {
        match self {
            Synthetic::Binh => binh_description(),
            Synthetic::Kursawe => kursawe_description(),
        }
    }

    pub fn evaluate(self, config: &[f64]) -> Result<Vec<f64>, HarnessError> {
        let (a, b) = match (self, config) {
            (Synthetic::Binh, [x, y]) => binh(*x, *y)?,
            (Synthetic::Kursawe, [x1, x2, x3]) => kursawe(*x1, *x2, *x3)?,
            _ => return Err(HarnessError::Arity(config.len())),
        };
        Ok(vec![a, b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binh_values() {
        assert_eq!(binh(2.0, 3.0).unwrap().0, 1.0);
        assert_eq!(binh(0.0, 0.0).unwrap(), (0.0, -1.0));
        assert!(binh(4.5, 0.0).is_err());
        assert!(binh(0.0, -7.5).is_err());
    }

    #[test]
    fn kursawe_values() {
        assert_eq!(kursawe(0.0, 0.0, 0.0).unwrap(), (-20.0, 0.0));
        assert!(kursawe(0.0, 5.1, 0.0).is_err());
    }

    #[test]
    fn domains() {
        assert_eq!(crate::doe::full_factorial(&binh_description().knobs, 10_000).unwrap().len(), 144);
        assert_eq!(crate::doe::full_factorial(&kursawe_description().knobs, 10_000).unwrap().len(), 1331);
    }

    proptest! {
        #[test]
        fn kursawe_k1_is_symmetric(a in -5.0f64..=5.0, b in -5.0f64..=5.0, c in -5.0f64..=5.0) {
            let (l, _) = kursawe(a, b, c).unwrap();
            let (r, _) = kursawe(c, b, a).unwrap();
            prop_assert!((l - r).abs() <= 1e-12 * l.abs().max(1.0));
        }
    }
}
