//! Nonnegative extended reals, the codomain of every density.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::cmp::Ordering;
use std::fmt;

/// A value in `[0, +inf]`. Negative values and NaN are rejected at
/// construction; exactly one of finite/infinite holds.
#[derive(Clone, Copy, PartialEq)]
pub struct ExtReal(f64);

pub const INF: ExtReal = ExtReal(f64::INFINITY);

impl ExtReal {
    pub const INFINITY: ExtReal = ExtReal(f64::INFINITY);
    pub const ZERO: ExtReal = ExtReal(0.0);

    /// Wraps a finite nonnegative value or `+inf`. Panics on NaN or
    /// negative input; densities are nonnegative by contract.
    pub fn new(v: f64) -> ExtReal {
        assert!(!v.is_nan(), "ExtReal cannot hold NaN");
        assert!(v >= 0.0, "ExtReal cannot hold negative value {v}");
        ExtReal(v)
    }

    /// Fallible constructor for untrusted input.
    pub fn try_new(v: f64) -> Option<ExtReal> {
        if v.is_nan() || v < 0.0 {
            None
        } else {
            Some(ExtReal(v))
        }
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// Raw value; `+inf` maps to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        self.0
    }

    /// Finite value or `None`.
    pub fn finite(self) -> Option<f64> {
        self.is_finite().then_some(self.0)
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        ExtReal(self.0.min(other.0))
    }

    pub fn max(self, other: ExtReal) -> ExtReal {
        ExtReal(self.0.max(other.0))
    }

    /// Scales by a nonnegative finite factor. `0 * inf` is defined as `0`,
    /// matching the convention used for convex combinations where a zero
    /// weight discards its branch.
    pub fn scale(self, c: f64) -> ExtReal {
        assert!(c.is_finite() && c >= 0.0, "scale factor must be finite nonnegative");
        if c == 0.0 {
            ExtReal(0.0)
        } else {
            ExtReal(c * self.0)
        }
    }

    /// Minimum over a nonempty iterator; `+inf` iff all elements are.
    pub fn min_over(iter: impl IntoIterator<Item = ExtReal>) -> Option<ExtReal> {
        iter.into_iter().reduce(ExtReal::min)
    }

    /// Convex combination `(1-t)*a + t*b` with `t` in `[0,1]`; an infinite
    /// branch with positive weight makes the result infinite.
    pub fn combine(t: f64, a: ExtReal, b: ExtReal) -> ExtReal {
        debug_assert!((0.0..=1.0).contains(&t));
        a.scale(1.0 - t) + b.scale(t)
    }
}

impl std::ops::Add for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: ExtReal) -> ExtReal {
        ExtReal(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for ExtReal {
    fn add_assign(&mut self, rhs: ExtReal) {
        self.0 += rhs.0;
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &ExtReal) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

impl Eq for ExtReal {}

impl Ord for ExtReal {
    fn cmp(&self, other: &ExtReal) -> Ordering {
        // Total order: no NaN by invariant.
        self.0.partial_cmp(&other.0).expect("ExtReal is never NaN")
    }
}

impl fmt::Debug for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

// JSON cannot carry Infinity as a number, so +inf serializes as the
// string "inf" and finite values as plain numbers.
impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<ExtReal, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = ExtReal;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a nonnegative number or the string \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<ExtReal, E> {
                ExtReal::try_new(v).ok_or_else(|| E::custom(format!("invalid ExtReal {v}")))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<ExtReal, E> {
                self.visit_f64(v as f64)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<ExtReal, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ExtReal, E> {
                if v == "inf" {
                    Ok(ExtReal::INFINITY)
                } else {
                    Err(E::custom(format!("invalid ExtReal string {v:?}")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_is_exclusive() {
        assert!(ExtReal::new(1.5).is_finite());
        assert!(!ExtReal::new(1.5).is_infinite());
        assert!(ExtReal::INFINITY.is_infinite());
        assert!(!ExtReal::INFINITY.is_finite());
    }

    #[test]
    fn addition_and_scaling_preserve_class() {
        let a = ExtReal::new(2.0);
        assert!((a + a).is_finite());
        assert!((a + ExtReal::INFINITY).is_infinite());
        assert!(a.scale(3.0).is_finite());
        assert!(ExtReal::INFINITY.scale(2.0).is_infinite());
        assert_eq!(ExtReal::INFINITY.scale(0.0), ExtReal::ZERO);
    }

    #[test]
    fn min_over_is_inf_iff_all_inf() {
        let all_inf = [ExtReal::INFINITY, ExtReal::INFINITY];
        assert!(ExtReal::min_over(all_inf).unwrap().is_infinite());
        let mixed = [ExtReal::INFINITY, ExtReal::new(3.0)];
        assert_eq!(ExtReal::min_over(mixed).unwrap().value(), 3.0);
        assert!(ExtReal::min_over(std::iter::empty()).is_none());
    }

    #[test]
    #[should_panic]
    fn rejects_nan() {
        let _ = ExtReal::new(f64::NAN);
    }

    #[test]
    #[should_panic]
    fn rejects_negative() {
        let _ = ExtReal::new(-1.0);
    }

    #[test]
    fn serde_roundtrip() {
        let v: ExtReal = serde_json::from_str("2.5").unwrap();
        assert_eq!(v.value(), 2.5);
        let i: ExtReal = serde_json::from_str("\"inf\"").unwrap();
        assert!(i.is_infinite());
        assert_eq!(serde_json::to_string(&i).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&v).unwrap(), "2.5");
    }
}
