//! Parsing of raw answer strings into canonical [`AnswerValue`]s.
//!
//! The accepted grammar is the closure of the answer situations the pipeline
//! handles: plain numerics (integers, decimals, fractions), sums of rational
//! multiples of √n/π/e, intervals, ratios, base-n literals, degree values,
//! number words (zero through twenty), and option words mapped by their first
//! letter's position in the alphabet. Anything outside that is rejected with
//! the raw string preserved, never guessed.

use super::{sqrt_term, AnswerError, AnswerValue, Bound, ConstKind};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::collections::BTreeMap;

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen", "twenty",
];

/// Parses a raw answer string into its canonical value.
pub fn parse_answer(raw: &str) -> Result<AnswerValue, AnswerError> {
    if raw.trim().is_empty() {
        return Err(AnswerError::Empty);
    }
    let s = preprocess(raw);
    if s.is_empty() {
        return Err(AnswerError::Empty);
    }

    if let Some(word) = parse_number_word(&s) {
        return Ok(AnswerValue::int(word));
    }
    if looks_like_interval(&s) {
        return parse_interval(&s).ok_or_else(|| unparseable(raw));
    }
    if let Some(v) = parse_ratio(&s) {
        return Ok(v);
    }
    if let Some(v) = parse_base_n(&s) {
        return Ok(v);
    }
    if let Some(v) = parse_degrees(&s) {
        return Ok(v);
    }
    if let Some(v) = parse_scalar(&s) {
        return Ok(v);
    }
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_uppercase()) {
        let first = s.as_bytes()[0];
        return Ok(AnswerValue::int(i64::from(first - b'A') + 1));
    }
    Err(unparseable(raw))
}

fn unparseable(raw: &str) -> AnswerError {
    AnswerError::Unparseable {
        raw: raw.to_string(),
    }
}

/// Normalizes LaTeX and unicode notation to the ASCII grammar.
fn preprocess(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    // Outer math-mode markers.
    loop {
        let t = s
            .trim()
            .trim_start_matches("$")
            .trim_end_matches("$")
            .trim_start_matches("\\(")
            .trim_end_matches("\\)")
            .to_string();
        if t == s {
            break;
        }
        s = t;
    }
    for (from, to) in [
        ("\\dfrac", "\\frac"),
        ("\\tfrac", "\\frac"),
        ("\\cdot", "*"),
        ("\\times", "*"),
        ("\\pi", "pi"),
        ("\\infty", "inf"),
        ("\\left", ""),
        ("\\right", ""),
        ("\\!", ""),
        ("\\,", " "),
        ("\\;", " "),
        ("\\ ", " "),
        ("^{\\circ}", "°"),
        ("^\\circ", "°"),
        ("\\circ", "°"),
        ("\u{2212}", "-"),
        ("\u{2013}", "-"),
        ("\u{00d7}", "*"),
        ("\u{22c5}", "*"),
        ("\u{00b7}", "*"),
        ("\u{03c0}", "pi"),
        ("\u{221e}", "inf"),
    ] {
        s = s.replace(from, to);
    }
    // √ forms before the sqrt regexes below.
    s = s.replace('\u{221a}', "\\sqrt");
    let frac = regex::Regex::new(r"\\frac\{(-?[0-9]+)\}\{(-?[0-9]+)\}").unwrap();
    s = frac.replace_all(&s, "($1/$2)").into_owned();
    let frac_short = regex::Regex::new(r"\\frac([0-9])([0-9])").unwrap();
    s = frac_short.replace_all(&s, "($1/$2)").into_owned();
    for pat in [r"\\sqrt\{([0-9]+)\}", r"\\sqrt\(([0-9]+)\)", r"\\sqrt ?([0-9]+)"] {
        let re = regex::Regex::new(pat).unwrap();
        s = re.replace_all(&s, "sqrt($1)").into_owned();
    }
    // Trailing unicode subscripts (base-n notation).
    let subs = ['\u{2080}', '\u{2081}', '\u{2082}', '\u{2083}', '\u{2084}', '\u{2085}',
        '\u{2086}', '\u{2087}', '\u{2088}', '\u{2089}'];
    if s.chars().any(|c| subs.contains(&c)) {
        let mut out = String::new();
        let mut in_sub = false;
        for c in s.chars() {
            if let Some(d) = subs.iter().position(|&x| x == c) {
                if !in_sub {
                    out.push('_');
                    in_sub = true;
                }
                out.push((b'0' + d as u8) as char);
            } else {
                in_sub = false;
                out.push(c);
            }
        }
        s = out;
    }
    s.trim().to_string()
}

fn parse_number_word(s: &str) -> Option<i64> {
    let lower = s.to_ascii_lowercase();
    NUMBER_WORDS
        .iter()
        .position(|w| *w == lower)
        .map(|i| i as i64)
}

fn looks_like_interval(s: &str) -> bool {
    let starts = s.starts_with('[') || s.starts_with('(');
    let ends = s.ends_with(']') || s.ends_with(')');
    starts && ends && s.contains(',')
}

fn parse_interval(s: &str) -> Option<AnswerValue> {
    let lo_closed = s.starts_with('[');
    let hi_closed = s.ends_with(']');
    let inner = &s[1..s.len() - 1];
    let (lo_str, hi_str) = inner.split_once(',')?;
    let lo = parse_bound(lo_str.trim(), lo_closed)?;
    let hi = parse_bound(hi_str.trim(), hi_closed)?;
    Some(AnswerValue::Interval { lo, hi })
}

fn parse_bound(s: &str, closed: bool) -> Option<Bound> {
    let body = s.trim_start_matches('+');
    let negated = body.strip_prefix('-').unwrap_or(body);
    if matches!(negated, "inf" | "oo" | "infinity") {
        return Some(Bound::infinite());
    }
    parse_scalar(s).map(|v| Bound::finite(v, closed))
}

fn parse_ratio(s: &str) -> Option<AnswerValue> {
    if !s.contains(':') {
        return None;
    }
    let mut parts = Vec::new();
    for piece in s.split(':') {
        let piece = piece.trim();
        let n: BigInt = piece.parse().ok()?;
        parts.push(n);
    }
    if parts.len() < 2 {
        return None;
    }
    let mut g = parts[0].clone();
    for p in &parts[1..] {
        g = num_integer::Integer::gcd(&g, p);
    }
    if !g.is_zero() && !g.is_one() {
        for p in &mut parts {
            *p /= &g;
        }
    }
    Some(AnswerValue::RatioParts(parts))
}

fn parse_base_n(s: &str) -> Option<AnswerValue> {
    let re = regex::Regex::new(r"^([0-9A-Za-z]+)_\{?([0-9]{1,2})\}?$").unwrap();
    let caps = re.captures(s)?;
    let base: u8 = caps[2].parse().ok()?;
    if !(2..=36).contains(&base) {
        return None;
    }
    let mut digits = Vec::new();
    for c in caps[1].chars() {
        let d = c.to_digit(36)? as u8;
        if d >= base {
            return None;
        }
        digits.push(d);
    }
    while digits.len() > 1 && digits[0] == 0 {
        digits.remove(0);
    }
    Some(AnswerValue::BaseN { digits, base })
}

fn parse_degrees(s: &str) -> Option<AnswerValue> {
    let body = ["°", " degrees", " degree", " deg"]
        .iter()
        .find_map(|suffix| s.strip_suffix(suffix))?;
    let value = parse_scalar(body.trim())?;
    match value.numeric_terms() {
        Some(terms) if terms.keys().all(|k| *k == ConstKind::Unit) => {
            let degrees = terms
                .get(&ConstKind::Unit)
                .cloned()
                .unwrap_or_else(BigRational::zero);
            Some(AnswerValue::Angle { degrees })
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(BigRational),
    Const(ConstKind),
    Sqrt(u64),
    Plus,
    Minus,
    Star,
    Slash,
}

fn lex_scalar(s: &str) -> Option<Vec<Token>> {
    let chars: Vec<char> = s.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            let mut seen_dot = false;
            while i < chars.len() && (chars[i].is_ascii_digit() || (chars[i] == '.' && !seen_dot)) {
                if chars[i] == '.' {
                    seen_dot = true;
                }
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            tokens.push(Token::Num(parse_decimal(&text)?));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphabetic() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            match word.as_str() {
                "pi" => tokens.push(Token::Const(ConstKind::Pi)),
                "e" => tokens.push(Token::Const(ConstKind::E)),
                "sqrt" => {
                    // Expect "(digits)".
                    if i >= chars.len() || chars[i] != '(' {
                        return None;
                    }
                    i += 1;
                    let dstart = i;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i >= chars.len() || chars[i] != ')' || i == dstart {
                        return None;
                    }
                    let radicand: u64 = chars[dstart..i].iter().collect::<String>().parse().ok()?;
                    i += 1;
                    tokens.push(Token::Sqrt(radicand));
                }
                _ => return None,
            }
        } else {
            match c {
                '+' => tokens.push(Token::Plus),
                '-' => tokens.push(Token::Minus),
                '*' => tokens.push(Token::Star),
                '/' => tokens.push(Token::Slash),
                '(' | ')' => {} // grouping from \frac normalization
                _ => return None,
            }
            i += 1;
        }
    }
    Some(tokens)
}

fn parse_decimal(text: &str) -> Option<BigRational> {
    if text == "." {
        return None;
    }
    let (int_part, frac_part) = text.split_once('.').unwrap_or((text, ""));
    let digits = format!(
        "{}{}",
        if int_part.is_empty() { "0" } else { int_part },
        frac_part
    );
    let num: BigInt = digits.parse().ok()?;
    let den = BigInt::from(10u8).pow(frac_part.len() as u32);
    Some(BigRational::new(num, den))
}

/// Parses a sum of signed `coefficient × constant` terms.
fn parse_scalar(s: &str) -> Option<AnswerValue> {
    let tokens = lex_scalar(s)?;
    if tokens.is_empty() {
        return None;
    }
    let mut terms: BTreeMap<ConstKind, BigRational> = BTreeMap::new();
    let mut pos = 0;

    loop {
        let mut negative = false;
        while pos < tokens.len() {
            match tokens[pos] {
                Token::Plus => pos += 1,
                Token::Minus => {
                    negative = !negative;
                    pos += 1;
                }
                _ => break,
            }
        }
        if pos >= tokens.len() {
            return None; // dangling sign or empty term
        }
        let (konst, coeff, next) = parse_term(&tokens, pos)?;
        pos = next;
        let signed = if negative { -coeff } else { coeff };
        *terms.entry(konst).or_insert_with(BigRational::zero) += signed;

        if pos == tokens.len() {
            break;
        }
        // The next token must start a new signed term.
        if !matches!(tokens[pos], Token::Plus | Token::Minus) {
            return None;
        }
    }
    Some(AnswerValue::from_terms(terms))
}

/// One term: `num [/ num] [[*] const [/ num]]` or `const [/ num]`.
fn parse_term(tokens: &[Token], mut pos: usize) -> Option<(ConstKind, BigRational, usize)> {
    let mut coeff = BigRational::one();
    let mut saw_num = false;

    if let Token::Num(n) = &tokens[pos] {
        coeff = n.clone();
        saw_num = true;
        pos += 1;
        if pos + 1 < tokens.len() {
            if let (Token::Slash, Token::Num(d)) = (&tokens[pos], &tokens[pos + 1]) {
                if d.is_zero() {
                    return None;
                }
                coeff /= d.clone();
                pos += 2;
            }
        }
    }

    let mut konst = ConstKind::Unit;
    let mut saw_const = false;
    let mut peek = pos;
    if peek < tokens.len() && tokens[peek] == Token::Star {
        peek += 1;
    }
    if peek < tokens.len() {
        match &tokens[peek] {
            Token::Const(k) => {
                konst = *k;
                saw_const = true;
                pos = peek + 1;
            }
            Token::Sqrt(n) => {
                let (k, scaled) = sqrt_term(coeff.clone(), *n);
                konst = k;
                coeff = scaled;
                saw_const = true;
                pos = peek + 1;
            }
            _ => {}
        }
    }
    if !saw_num && !saw_const {
        return None;
    }
    // Trailing divisor, e.g. "sqrt(2)/2" or "pi/6".
    if saw_const && pos + 1 < tokens.len() {
        if let (Token::Slash, Token::Num(d)) = (&tokens[pos], &tokens[pos + 1]) {
            if d.is_zero() {
                return None;
            }
            coeff /= d.clone();
            pos += 2;
        }
    }
    Some((konst, coeff, pos))
}
