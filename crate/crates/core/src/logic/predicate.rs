use std::fmt;

use serde::{Deserialize, Serialize};

use super::LogicError;

/// Geometry of an atomic predicate, always read as `f(s) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredicateKind {
    /// `normal · s + offset > 0`
    Linear { normal: Vec<f64>, offset: f64 },
    /// `|P s - center| < radius`, where `P` picks the coordinates in `projection`.
    BallInside {
        projection: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
    },
    /// `|P s - center| > radius`
    BallOutside {
        projection: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
    },
}

/// A named, differentiable state predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    name: String,
    dim: usize,
    #[serde(flatten)]
    kind: PredicateKind,
}

impl Predicate {
    pub fn new(name: impl Into<String>, dim: usize, kind: PredicateKind) -> Result<Self, LogicError> {
        let name = name.into();
        let bad = |reason: &str| LogicError::InvalidPredicate {
            name: name.clone(),
            reason: reason.to_string(),
        };
        match &kind {
            PredicateKind::Linear { normal, offset } => {
                if normal.len() != dim {
                    return Err(bad("normal length differs from state dimension"));
                }
                let norm = normal.iter().map(|c| c * c).sum::<f64>().sqrt();
                if !(norm > 0.0) || !norm.is_finite() || !offset.is_finite() {
                    return Err(bad("normal must be finite and non-zero"));
                }
            }
            PredicateKind::BallInside {
                projection,
                center,
                radius,
            }
            | PredicateKind::BallOutside {
                projection,
                center,
                radius,
            } => {
                if projection.is_empty() || projection.len() != center.len() {
                    return Err(bad("projection and center lengths differ"));
                }
                if projection.iter().any(|&i| i >= dim) {
                    return Err(bad("projection index out of range"));
                }
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(bad("radius must be positive"));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(bad("center must be finite"));
                }
            }
        }
        Ok(Self { name, dim, kind })
    }

    pub fn linear(name: impl Into<String>, normal: Vec<f64>, offset: f64) -> Result<Self, LogicError> {
        let dim = normal.len();
        Self::new(name, dim, PredicateKind::Linear { normal, offset })
    }

    /// Ball over the leading `center.len()` coordinates of a `dim`-dimensional state.
    pub fn ball_inside(
        name: impl Into<String>,
        dim: usize,
        center: Vec<f64>,
        radius: f64,
    ) -> Result<Self, LogicError> {
        let projection = (0..center.len()).collect();
        Self::new(
            name,
            dim,
            PredicateKind::BallInside {
                projection,
                center,
                radius,
            },
        )
    }

    pub fn ball_outside(
        name: impl Into<String>,
        dim: usize,
        center: Vec<f64>,
        radius: f64,
    ) -> Result<Self, LogicError> {
        let projection = (0..center.len()).collect();
        Self::new(
            name,
            dim,
            PredicateKind::BallOutside {
                projection,
                center,
                radius,
            },
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &PredicateKind {
        &self.kind
    }

    /// Same predicate under a different name.
    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..self.clone()
        }
    }

    /// The predicate `-f(s) > 0`, i.e. the strict negation in `f(s) > 0` form.
    pub fn negated(&self) -> Self {
        let kind = match &self.kind {
            PredicateKind::Linear { normal, offset } => PredicateKind::Linear {
                normal: normal.iter().map(|c| -c).collect(),
                offset: -offset,
            },
            PredicateKind::BallInside {
                projection,
                center,
                radius,
            } => PredicateKind::BallOutside {
                projection: projection.clone(),
                center: center.clone(),
                radius: *radius,
            },
            PredicateKind::BallOutside {
                projection,
                center,
                radius,
            } => PredicateKind::BallInside {
                projection: projection.clone(),
                center: center.clone(),
                radius: *radius,
            },
        };
        Self {
            name: format!("!{}", self.name),
            dim: self.dim,
            kind,
        }
    }

    fn check_dim(&self, s: &[f64]) -> Result<(), LogicError> {
        if s.len() != self.dim {
            return Err(LogicError::DimensionMismatch {
                name: self.name.clone(),
                expected: self.dim,
                got: s.len(),
            });
        }
        Ok(())
    }

    /// Value of `f(s)`.
    pub fn value(&self, s: &[f64]) -> Result<f64, LogicError> {
        self.check_dim(s)?;
        Ok(self.value_unchecked(s))
    }

    pub(crate) fn value_unchecked(&self, s: &[f64]) -> f64 {
        match &self.kind {
            PredicateKind::Linear { normal, offset } => {
                normal.iter().zip(s).map(|(c, x)| c * x).sum::<f64>() + offset
            }
            PredicateKind::BallInside {
                projection,
                center,
                radius,
            } => radius - distance(projection, center, s),
            PredicateKind::BallOutside {
                projection,
                center,
                radius,
            } => distance(projection, center, s) - radius,
        }
    }

    /// Value and gradient of `f` at `s`. Ball gradients are zero at the center.
    pub fn value_and_gradient(&self, s: &[f64]) -> Result<(f64, Vec<f64>), LogicError> {
        self.check_dim(s)?;
        let value = self.value_unchecked(s);
        let gradient = match &self.kind {
            PredicateKind::Linear { normal, .. } => normal.clone(),
            PredicateKind::BallInside {
                projection, center, ..
            } => ball_gradient(projection, center, s, -1.0),
            PredicateKind::BallOutside {
                projection, center, ..
            } => ball_gradient(projection, center, s, 1.0),
        };
        Ok((value, gradient))
    }

    /// The point maximizing `f`, if one exists (ball-inside only), with the
    /// non-projected coordinates copied from `s`.
    pub fn maximizer(&self, s: &[f64]) -> Option<Vec<f64>> {
        match &self.kind {
            PredicateKind::BallInside {
                projection, center, ..
            } => {
                let mut out = s.to_vec();
                for (&i, &c) in projection.iter().zip(center) {
                    out[i] = c;
                }
                Some(out)
            }
            _ => None,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

fn distance(projection: &[usize], center: &[f64], s: &[f64]) -> f64 {
    projection
        .iter()
        .zip(center)
        .map(|(&i, c)| (s[i] - c).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn ball_gradient(projection: &[usize], center: &[f64], s: &[f64], sign: f64) -> Vec<f64> {
    let mut g = vec![0.0; s.len()];
    let d = distance(projection, center, s);
    if d == 0.0 {
        return g;
    }
    for (&i, c) in projection.iter().zip(center) {
        g[i] += sign * (s[i] - c) / d;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_predicate_value_and_gradient() {
        // y - x + w > 0 with w = 1
        let p = Predicate::linear("c2", vec![-1.0, 1.0], 1.0).unwrap();
        let (v, g) = p.value_and_gradient(&[0.0, 0.0]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(g, vec![-1.0, 1.0]);
    }

    #[test]
    fn ball_inside_boundary_point() {
        let p = Predicate::ball_inside("a", 2, vec![0.0, 0.0], 1.0).unwrap();
        let (v, g) = p.value_and_gradient(&[0.6, 0.8]).unwrap();
        assert!(v.abs() < 1e-15);
        assert!((g[0] + 0.6).abs() < 1e-15 && (g[1] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn ball_outside_value() {
        let p = Predicate::ball_outside("o", 2, vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(p.value(&[3.0, 4.0]).unwrap(), 4.0);
    }

    #[test]
    fn gradient_is_zero_at_center() {
        let p = Predicate::ball_inside("a", 3, vec![1.0, 2.0], 0.5).unwrap();
        let (v, g) = p.value_and_gradient(&[1.0, 2.0, 7.0]).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn negation_flips_sign() {
        let p = Predicate::ball_inside("a", 2, vec![1.0, -1.0], 0.5).unwrap();
        let l = Predicate::linear("l", vec![2.0, -1.0], 0.3).unwrap();
        for s in [[0.0, 0.0], [1.2, -0.9], [5.0, 3.0]] {
            assert!((p.value(&s).unwrap() + p.negated().value(&s).unwrap()).abs() < 1e-12);
            assert!((l.value(&s).unwrap() + l.negated().value(&s).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Predicate::linear("z", vec![0.0, 0.0], 1.0).is_err());
        assert!(Predicate::ball_inside("r", 2, vec![0.0, 0.0], 0.0).is_err());
        assert!(Predicate::ball_inside("r", 1, vec![0.0, 0.0], 1.0).is_err());
        let p = Predicate::linear("c", vec![1.0, 1.0], 0.0).unwrap();
        assert!(matches!(
            p.value(&[1.0]),
            Err(LogicError::DimensionMismatch { .. })
        ));
    }
}
