//! Answer extraction and normalization for math benchmarks.

use num::BigRational;
use num::{BigInt, One, Zero};

/// Returns the content of the last balanced `\boxed{...}` group in `text`.
///
/// Nested braces are allowed; an unbalanced group is ignored in favor of
/// an earlier balanced one. `None` means the answer is missing (and is
/// scored as incorrect by the accuracy metric).
pub fn extract_boxed_answer(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let mut last = None;
    let mut search_from = 0;
    while let Some(pos) = text[search_from..].find(MARKER) {
        let open = search_from + pos + MARKER.len() - 1; // index of '{'
        if let Some(content) = balanced_group(&text[open..]) {
            last = Some(content);
        }
        search_from += pos + MARKER.len();
    }
    last
}

/// Given a slice starting at '{', returns the brace-balanced content.
fn balanced_group(s: &str) -> Option<String> {
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(s[1..i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Canonicalizes an answer string for exact comparison.
///
/// Numeric answers (integers, decimals, `a/b` fractions, `\frac{a}{b}`)
/// are rendered as exact reduced rationals, so "0.5", "1/2" and
/// "\frac{2}{4}" all compare equal. Everything else is lowercased with
/// internal whitespace collapsed.
pub fn normalize_answer(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    s = s.replace('$', "");
    s = s.replace("\\!", "");
    let mut s = s.trim().to_string();
    while s.ends_with('.') && !s.ends_with("..") {
        s.pop();
        s = s.trim_end().to_string();
    }

    if let Some(rational) = parse_rational(&s) {
        return render_rational(&rational);
    }

    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses integers, decimals (exactly), `a/b` fractions, and
/// `\frac{a}{b}` forms. Thousands separators are tolerated.
fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("\\frac").or_else(|| s.strip_prefix("\\dfrac")) {
        let after = rest.trim_start();
        let numer = balanced_group(after)?;
        let close = find_group_end(after)?;
        let denom_part = after[close..].trim_start();
        let denom = balanced_group(denom_part)?;
        let denom_end = find_group_end(denom_part)?;
        if !denom_part[denom_end..].trim().is_empty() {
            return None;
        }
        let n = parse_rational(&numer)?;
        let d = parse_rational(&denom)?;
        if d.is_zero() {
            return None;
        }
        return Some(n / d);
    }
    if let Some((numer, denom)) = s.split_once('/') {
        let n = parse_plain_number(numer.trim())?;
        let d = parse_plain_number(denom.trim())?;
        if d.is_zero() {
            return None;
        }
        return Some(n / d);
    }
    parse_plain_number(s)
}

/// Byte offset just past the first balanced `{...}` group.
fn find_group_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// True when commas separate digit groups of exactly three, e.g. "1,234,567".
fn valid_comma_grouping(digits: &str) -> bool {
    let int_part = digits.split('.').next().unwrap_or("");
    let groups: Vec<&str> = int_part.split(',').collect();
    if groups.len() < 2 || digits[int_part.len()..].contains(',') {
        return false;
    }
    let first_ok = !groups[0].is_empty() && groups[0].len() <= 3;
    first_ok && groups[1..].iter().all(|g| g.len() == 3)
}

/// Parses a signed integer or decimal, with optional thousands separators.
fn parse_plain_number(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (sign, digits) = match s.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => match s.strip_prefix('+') {
            Some(rest) => (1, rest),
            None => (1, s),
        },
    };
    if digits.is_empty() {
        return None;
    }
    if digits.contains(',') && !valid_comma_grouping(digits) {
        return None;
    }
    let cleaned = digits.replace(',', "");
    let (int_part, frac_part) = match cleaned.split_once('.') {
        Some((i, f)) => (i, f),
        None => (cleaned.as_str(), ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let digits_only = format!("{int_part}{frac_part}");
    let numer: BigInt = digits_only.parse().ok()?;
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    Some(BigRational::new(numer * BigInt::from(sign), denom))
}
