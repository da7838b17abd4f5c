//! Canonical answer values and the exact arithmetic used to link and grade them.
//!
//! Raw answer strings ("7", "6/8", "2+\sqrt{2}", "[2, ∞)", "1001_2", "30°", "CAT")
//! are parsed into [`AnswerValue`]s. Scalar values (integers, rationals, sums of
//! rational multiples of 1, √n, π, e) support exact subtraction, which is what the
//! composition step uses to phrase the relation between two linked problems.
//! Equivalence checking has two policies: exact canonical-form equality, and a
//! two-decimal comparison that only kicks in when one side carries an irrational
//! constant.

mod parse;

pub use parse::parse_answer;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Errors produced by answer parsing and arithmetic.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum AnswerError {
    #[error("empty answer string")]
    Empty,
    /// The string is outside the supported answer taxonomy. The raw input is
    /// kept so callers can route it to LLM-assisted extraction or reject it.
    #[error("unparseable answer: {raw:?}")]
    Unparseable { raw: String },
    #[error("incompatible operands for exact arithmetic: {left} vs {right}")]
    Incompatible { left: String, right: String },
}

/// A constant factor in a scalar term: 1, √n (n square-free, n > 1), π, or e.
///
/// The derived ordering (unit, then radicals by radicand, then π, then e) is the
/// canonical term order used for rendering and equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstKind {
    Unit,
    Sqrt(u64),
    Pi,
    E,
}

/// One `coefficient × constant` term of a scalar sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub coeff: BigRational,
    pub konst: ConstKind,
}

/// An interval endpoint. `value: None` means the bound is infinite, which forces
/// the bound open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bound {
    pub value: Option<Box<AnswerValue>>,
    pub closed: bool,
}

impl Bound {
    pub fn finite(value: AnswerValue, closed: bool) -> Self {
        Bound {
            value: Some(Box::new(value)),
            closed,
        }
    }

    pub fn infinite() -> Self {
        Bound {
            value: None,
            closed: false,
        }
    }
}

/// A canonical answer value.
///
/// Scalar variants (`Integer`, `Rational`, `TermSum`, `Angle`, `LetterCode`) have a
/// numeric image and take part in exact arithmetic; the structured variants
/// (`BaseN`, `Interval`, `RatioParts`) compare structurally and must be reduced to
/// a scalar (boundary, part, digit count) before they can be linked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerValue {
    Integer(BigInt),
    /// Always reduced, denominator > 1.
    Rational(BigRational),
    /// Nonempty, constants distinct and sorted, no plain-rational reduction possible.
    TermSum(Vec<Term>),
    /// Digits most-significant first, no leading zeros (single zero digit allowed).
    BaseN { digits: Vec<u8>, base: u8 },
    Interval { lo: Bound, hi: Bound },
    /// At least two parts, gcd of all parts = 1.
    RatioParts(Vec<BigInt>),
    /// Uppercase ASCII word; its numeric image is the first letter's position in
    /// the alphabet (A=1, ..., Z=26), so `LetterCode("CAT")` is exactly 3.
    LetterCode(String),
    /// Angle in degrees; the radian image degrees·π/180 is materialized on demand.
    Angle { degrees: BigRational },
}

/// How two answer values are compared.
///
/// `TwoDecimal` only relaxes the comparison when either side contains an
/// irrational constant; otherwise it behaves exactly like `Exact`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivalencePolicy {
    Exact,
    TwoDecimal,
}

/// Decimal digits of π and e used for high-precision evaluation (50 decimals,
/// truncated). Square roots are computed to the same precision on demand.
const PI_DIGITS: &str = "3.14159265358979323846264338327950288419716939937510";
const E_DIGITS: &str = "2.71828182845904523536028747135266249775724709369995";
const EVAL_DECIMALS: u32 = 50;

impl AnswerValue {
    pub fn int(v: i64) -> Self {
        AnswerValue::Integer(BigInt::from(v))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        canonical_rational(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    /// Builds the canonical value for a map of `constant -> coefficient` terms.
    /// Zero coefficients are dropped; a pure unit sum collapses to
    /// `Integer`/`Rational`.
    pub fn from_terms(terms: BTreeMap<ConstKind, BigRational>) -> Self {
        let mut kept: Vec<Term> = terms
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(konst, coeff)| Term { coeff, konst })
            .collect();
        match kept.len() {
            0 => AnswerValue::Integer(BigInt::zero()),
            1 if kept[0].konst == ConstKind::Unit => {
                canonical_rational(kept.pop().unwrap().coeff)
            }
            _ => AnswerValue::TermSum(kept),
        }
    }

    /// The value as a `constant -> coefficient` map, if it is scalar.
    pub fn numeric_terms(&self) -> Option<BTreeMap<ConstKind, BigRational>> {
        let mut map = BTreeMap::new();
        match self {
            AnswerValue::Integer(i) => {
                map.insert(ConstKind::Unit, BigRational::from(i.clone()));
            }
            AnswerValue::Rational(r) => {
                map.insert(ConstKind::Unit, r.clone());
            }
            AnswerValue::TermSum(terms) => {
                for t in terms {
                    map.insert(t.konst, t.coeff.clone());
                }
            }
            AnswerValue::Angle { degrees } => {
                let coeff = degrees / BigRational::from(BigInt::from(180));
                if !coeff.is_zero() {
                    map.insert(ConstKind::Pi, coeff);
                }
            }
            AnswerValue::LetterCode(word) => {
                let first = word.as_bytes()[0];
                let ord = i64::from(first - b'A') + 1;
                map.insert(ConstKind::Unit, BigRational::from(BigInt::from(ord)));
            }
            _ => return None,
        }
        map.retain(|_, c| !c.is_zero());
        Some(map)
    }

    pub fn is_scalar(&self) -> bool {
        self.numeric_terms().is_some()
    }

    /// True if the scalar value carries a √n, π, or e component.
    pub fn contains_irrational(&self) -> bool {
        match self.numeric_terms() {
            Some(terms) => terms.keys().any(|k| *k != ConstKind::Unit),
            None => false,
        }
    }

    /// The radian image of an angle, as a canonical scalar (e.g. 30° → π/6).
    pub fn radian_image(&self) -> Option<AnswerValue> {
        match self {
            AnswerValue::Angle { .. } => Some(AnswerValue::from_terms(self.numeric_terms()?)),
            _ => None,
        }
    }

    /// High-precision rational evaluation with π, e, √n at 50 decimal digits.
    pub fn eval_precise(&self) -> Option<BigRational> {
        let terms = self.numeric_terms()?;
        let mut acc = BigRational::zero();
        for (konst, coeff) in terms {
            acc += coeff * const_approx(konst);
        }
        Some(acc)
    }

    /// Floating-point evaluation, for probes and diagnostics only.
    pub fn eval_f64(&self) -> Option<f64> {
        let terms = self.numeric_terms()?;
        let mut acc = 0.0f64;
        for (konst, coeff) in terms {
            let c = coeff.numer().to_f64()? / coeff.denom().to_f64()?;
            let k = match konst {
                ConstKind::Unit => 1.0,
                ConstKind::Sqrt(n) => (n as f64).sqrt(),
                ConstKind::Pi => std::f64::consts::PI,
                ConstKind::E => std::f64::consts::E,
            };
            acc += c * k;
        }
        Some(acc)
    }

    pub fn is_zero_value(&self) -> bool {
        match self.numeric_terms() {
            Some(terms) => terms.is_empty(),
            None => false,
        }
    }

    /// Sign of a scalar value (-1, 0, +1), judged at evaluation precision.
    pub fn sign(&self) -> Option<i8> {
        let v = self.eval_precise()?;
        Some(if v.is_zero() {
            0
        } else if v.is_positive() {
            1
        } else {
            -1
        })
    }

    /// Negation of a scalar value.
    pub fn negated(&self) -> Option<AnswerValue> {
        let terms = self.numeric_terms()?;
        Some(AnswerValue::from_terms(
            terms.into_iter().map(|(k, c)| (k, -c)).collect(),
        ))
    }

    /// Numeric ordering of two scalar values at evaluation precision.
    pub fn cmp_numeric(&self, other: &AnswerValue) -> Option<std::cmp::Ordering> {
        Some(self.eval_precise()?.cmp(&other.eval_precise()?))
    }

    /// Canonical text rendering; parseable back to an equivalent value.
    pub fn render(&self) -> String {
        self.to_string()
    }

    fn variant_name(&self) -> &'static str {
        match self {
            AnswerValue::Integer(_) => "integer",
            AnswerValue::Rational(_) => "rational",
            AnswerValue::TermSum(_) => "term sum",
            AnswerValue::BaseN { .. } => "base-n literal",
            AnswerValue::Interval { .. } => "interval",
            AnswerValue::RatioParts(_) => "ratio",
            AnswerValue::LetterCode(_) => "letter code",
            AnswerValue::Angle { .. } => "angle",
        }
    }
}

fn canonical_rational(r: BigRational) -> AnswerValue {
    if r.is_integer() {
        AnswerValue::Integer(r.to_integer())
    } else {
        AnswerValue::Rational(r)
    }
}

/// Rational approximation of a constant at [`EVAL_DECIMALS`] digits.
fn const_approx(konst: ConstKind) -> BigRational {
    match konst {
        ConstKind::Unit => BigRational::one(),
        ConstKind::Pi => decimal_literal(PI_DIGITS),
        ConstKind::E => decimal_literal(E_DIGITS),
        ConstKind::Sqrt(n) => {
            // floor(sqrt(n * 10^(2d))) / 10^d
            let scale = BigUint::from(10u8).pow(2 * EVAL_DECIMALS);
            let root = (BigUint::from(n) * scale).sqrt();
            BigRational::new(
                BigInt::from(root),
                BigInt::from(BigUint::from(10u8).pow(EVAL_DECIMALS)),
            )
        }
    }
}

fn decimal_literal(s: &str) -> BigRational {
    let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
    let digits: String = format!("{int_part}{frac_part}");
    let num: BigInt = digits.parse().expect("constant table digits");
    let den = BigInt::from(BigUint::from(10u8).pow(frac_part.len() as u32));
    BigRational::new(num, den)
}

/// Splits `n` into `k²·m` with `m` square-free and returns `(k, m)`.
fn extract_square(n: u64) -> (u64, u64) {
    let mut outside = 1u64;
    let mut rest = n;
    let mut d = 2u64;
    while d.saturating_mul(d) <= rest {
        while rest.is_multiple_of(d * d) {
            rest /= d * d;
            outside *= d;
        }
        d += 1;
    }
    (outside, rest)
}

/// Canonical term for `coeff·√n`: pulls square factors out of the radicand.
pub(crate) fn sqrt_term(coeff: BigRational, radicand: u64) -> (ConstKind, BigRational) {
    if radicand == 0 {
        return (ConstKind::Unit, BigRational::zero());
    }
    let (outside, rest) = extract_square(radicand);
    let scaled = coeff * BigRational::from(BigInt::from(outside));
    if rest == 1 {
        (ConstKind::Unit, scaled)
    } else {
        (ConstKind::Sqrt(rest), scaled)
    }
}

/// Exact difference `a - b` of two scalar values, in canonical form.
pub fn subtract(a: &AnswerValue, b: &AnswerValue) -> Result<AnswerValue, AnswerError> {
    combine(a, b, false)
}

/// Exact sum `a + b`; counterpart of [`subtract`], used by the round-trip checks.
pub fn add(a: &AnswerValue, b: &AnswerValue) -> Result<AnswerValue, AnswerError> {
    combine(a, b, true)
}

fn combine(a: &AnswerValue, b: &AnswerValue, add: bool) -> Result<AnswerValue, AnswerError> {
    let (ta, tb) = match (a.numeric_terms(), b.numeric_terms()) {
        (Some(ta), Some(tb)) => (ta, tb),
        _ => {
            return Err(AnswerError::Incompatible {
                left: a.variant_name().to_string(),
                right: b.variant_name().to_string(),
            })
        }
    };
    let mut out = ta;
    for (konst, coeff) in tb {
        let entry = out.entry(konst).or_insert_with(BigRational::zero);
        if add {
            *entry += coeff;
        } else {
            *entry -= coeff;
        }
    }
    Ok(AnswerValue::from_terms(out))
}

/// Rounds to two decimals, half away from zero, in exact rational arithmetic.
pub fn round_two_decimals(r: &BigRational) -> BigRational {
    let hundred = BigRational::from(BigInt::from(100));
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let scaled = r.abs() * &hundred + half;
    let floored = BigRational::from(scaled.floor().to_integer()) / &hundred;
    if r.is_negative() {
        -floored
    } else {
        floored
    }
}

/// Equivalence of two answer values under the given policy.
///
/// Scalars compare by canonical term maps; under `TwoDecimal`, when either side
/// carries an irrational constant, both sides are evaluated at 50-digit precision
/// and rounded half-away-from-zero to two decimals first. Structured variants
/// (intervals, ratios, base-n literals) always compare structurally.
pub fn equivalent(a: &AnswerValue, b: &AnswerValue, policy: EquivalencePolicy) -> bool {
    match (a.numeric_terms(), b.numeric_terms()) {
        (Some(ta), Some(tb)) => {
            let rounded = policy == EquivalencePolicy::TwoDecimal
                && (a.contains_irrational() || b.contains_irrational());
            if rounded {
                let (ea, eb) = (a.eval_precise().unwrap(), b.eval_precise().unwrap());
                round_two_decimals(&ea) == round_two_decimals(&eb)
            } else {
                ta == tb
            }
        }
        (None, None) => match (a, b) {
            (
                AnswerValue::Interval { lo: alo, hi: ahi },
                AnswerValue::Interval { lo: blo, hi: bhi },
            ) => bounds_equal(alo, blo) && bounds_equal(ahi, bhi),
            (
                AnswerValue::BaseN { digits: da, base: ba },
                AnswerValue::BaseN { digits: db, base: bb },
            ) => ba == bb && da == db,
            (AnswerValue::RatioParts(pa), AnswerValue::RatioParts(pb)) => pa == pb,
            _ => false,
        },
        _ => false,
    }
}

fn bounds_equal(a: &Bound, b: &Bound) -> bool {
    match (&a.value, &b.value) {
        (None, None) => true,
        (Some(va), Some(vb)) => {
            a.closed == b.closed && equivalent(va, vb, EquivalencePolicy::Exact)
        }
        _ => false,
    }
}

fn render_ratio(r: &BigRational) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerValue::Integer(i) => write!(f, "{i}"),
            AnswerValue::Rational(r) => write!(f, "{}", render_ratio(r)),
            AnswerValue::TermSum(terms) => {
                for (idx, term) in terms.iter().enumerate() {
                    let mag = term.coeff.abs();
                    let body = match term.konst {
                        ConstKind::Unit => render_ratio(&mag),
                        ConstKind::Sqrt(n) => {
                            if mag.is_one() {
                                format!("sqrt({n})")
                            } else {
                                format!("{}*sqrt({n})", render_ratio(&mag))
                            }
                        }
                        ConstKind::Pi => {
                            if mag.is_one() {
                                "pi".to_string()
                            } else {
                                format!("{}*pi", render_ratio(&mag))
                            }
                        }
                        ConstKind::E => {
                            if mag.is_one() {
                                "e".to_string()
                            } else {
                                format!("{}*e", render_ratio(&mag))
                            }
                        }
                    };
                    if idx == 0 {
                        if term.coeff.is_negative() {
                            write!(f, "-")?;
                        }
                    } else if term.coeff.is_negative() {
                        write!(f, " - ")?;
                    } else {
                        write!(f, " + ")?;
                    }
                    write!(f, "{body}")?;
                }
                Ok(())
            }
            AnswerValue::BaseN { digits, base } => {
                for d in digits {
                    let c = if *d < 10 {
                        (b'0' + d) as char
                    } else {
                        (b'A' + d - 10) as char
                    };
                    write!(f, "{c}")?;
                }
                write!(f, "_{base}")
            }
            AnswerValue::Interval { lo, hi } => {
                let open = if lo.closed { '[' } else { '(' };
                let close = if hi.closed { ']' } else { ')' };
                let lo_s = match &lo.value {
                    Some(v) => v.to_string(),
                    None => "-inf".to_string(),
                };
                let hi_s = match &hi.value {
                    Some(v) => v.to_string(),
                    None => "inf".to_string(),
                };
                write!(f, "{open}{lo_s}, {hi_s}{close}")
            }
            AnswerValue::RatioParts(parts) => {
                let rendered: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
                write!(f, "{}", rendered.join(":"))
            }
            AnswerValue::LetterCode(word) => write!(f, "{word}"),
            AnswerValue::Angle { degrees } => write!(f, "{}°", render_ratio(degrees)),
        }
    }
}
