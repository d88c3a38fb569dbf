use std::collections::BTreeMap;

use chrono::{Days, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{EntityClass, MentionId, NoteExtraction};

/// How to read ambiguous numeric dates such as `01/02/2010`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DateLocale {
    /// month/day/year
    #[default]
    Us,
    /// day/month/year
    International,
}

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

fn month_from_name(word: &str) -> Option<u32> {
    let w = word.trim_end_matches('.').to_ascii_lowercase();
    if w.len() < 3 {
        return None;
    }
    MONTHS
        .iter()
        .position(|m| *m == w || (w.len() == 3 && m.starts_with(&w)) || (w == "sept" && *m == "september"))
        .map(|i| i as u32 + 1)
}

fn small_number(word: &str) -> Option<u64> {
    if let Ok(n) = word.parse() {
        return Some(n);
    }
    let n = match word {
        "a" | "an" | "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        _ => return None,
    };
    Some(n)
}

fn numeric_date(text: &str, locale: DateLocale) -> Option<NaiveDate> {
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Some(d);
    }
    let parts: Vec<&str> = text.split(['/', '.']).collect();
    if parts.len() != 3 || parts[2].len() != 4 {
        return None;
    }
    let a: u32 = parts[0].parse().ok()?;
    let b: u32 = parts[1].parse().ok()?;
    let y: i32 = parts[2].parse().ok()?;
    let (m, d) = match locale {
        DateLocale::Us => (a, b),
        DateLocale::International => (b, a),
    };
    NaiveDate::from_ymd_opt(y, m, d)
}

fn named_month_date(words: &[&str]) -> Option<NaiveDate> {
    if words.len() != 3 {
        return None;
    }
    let clean = |w: &str| w.trim_end_matches(',').to_string();
    // "Jan 5, 2010"
    if let Some(m) = month_from_name(&clean(words[0])) {
        let d: u32 = clean(words[1]).parse().ok()?;
        let y: i32 = clean(words[2]).parse().ok()?;
        return NaiveDate::from_ymd_opt(y, m, d);
    }
    // "5 Jan 2010"
    let d: u32 = clean(words[0]).parse().ok()?;
    let m = month_from_name(&clean(words[1]))?;
    let y: i32 = clean(words[2]).parse().ok()?;
    NaiveDate::from_ymd_opt(y, m, d)
}

fn relative_date(words: &[&str], dct: NaiveDate) -> Option<NaiveDate> {
    match words {
        ["today"] => Some(dct),
        ["yesterday"] => dct.checked_sub_days(Days::new(1)),
        ["tomorrow"] => dct.checked_add_days(Days::new(1)),
        [n, unit, dir] => {
            let n = small_number(n)?;
            let back = match *dir {
                "ago" | "earlier" | "before" | "prior" => true,
                "later" | "after" | "hence" => false,
                _ => return None,
            };
            let unit = unit.trim_end_matches('s');
            match unit {
                "day" | "week" => {
                    let days = Days::new(if unit == "week" { n * 7 } else { n });
                    if back {
                        dct.checked_sub_days(days)
                    } else {
                        dct.checked_add_days(days)
                    }
                }
                "month" => {
                    let months = Months::new(u32::try_from(n).ok()?);
                    if back {
                        dct.checked_sub_months(months)
                    } else {
                        dct.checked_add_months(months)
                    }
                }
                _ => None,
            }
        }
        _ => None,
    }
}

/// Resolve a date expression to a calendar date.
///
/// Supported: `YYYY-MM-DD`, numeric `A/B/YYYY` (read per `locale`),
/// `Mon D, YYYY`, `D Mon YYYY`, `today`/`yesterday`/`tomorrow`, and
/// `N days|weeks|months ago|later`. Relative forms need `dct`.
pub fn normalize_date(text: &str, dct: Option<NaiveDate>, locale: DateLocale) -> Option<NaiveDate> {
    let lowered = text.trim().to_ascii_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    if words.is_empty() {
        return None;
    }
    if words.len() == 1 {
        if let Some(d) = numeric_date(words[0], locale) {
            return Some(d);
        }
    }
    if let Some(d) = named_month_date(&words) {
        return Some(d);
    }
    relative_date(&words, dct?)
}

/// Normalize every `Date` mention of a note. The anchor for relative
/// expressions is the note's visit date, else the resolved DCT mention.
pub fn normalize_note_dates(note: &NoteExtraction, locale: DateLocale) -> BTreeMap<MentionId, NaiveDate> {
    let anchor = note.visit_date.or_else(|| {
        note.dct
            .as_deref()
            .and_then(|id| note.mention(id))
            .and_then(|m| normalize_date(&m.text, None, locale))
    });
    note.mentions
        .iter()
        .filter(|m| m.class == EntityClass::Date)
        .filter_map(|m| normalize_date(&m.text, anchor, locale).map(|d| (m.id.clone(), d)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ymd(y: i32, m: u32, d: u32) -> Option<NaiveDate> {
        NaiveDate::from_ymd_opt(y, m, d)
    }

    #[test]
    fn absolute_formats() {
        assert_eq!(normalize_date("01/02/2010", None, DateLocale::Us), ymd(2010, 1, 2));
        assert_eq!(
            normalize_date("01/02/2010", None, DateLocale::International),
            ymd(2010, 2, 1)
        );
        assert_eq!(normalize_date("2010-01-05", None, DateLocale::Us), ymd(2010, 1, 5));
        assert_eq!(normalize_date("Jan 5, 2010", None, DateLocale::Us), ymd(2010, 1, 5));
        assert_eq!(normalize_date("January 5, 2010", None, DateLocale::Us), ymd(2010, 1, 5));
        assert_eq!(normalize_date("5 Jan 2010", None, DateLocale::Us), ymd(2010, 1, 5));
        assert_eq!(normalize_date("13/13/2010", None, DateLocale::Us), None);
    }

    #[test]
    fn relative_forms() {
        let dct = ymd(2010, 1, 2);
        assert_eq!(normalize_date("yesterday", dct, DateLocale::Us), ymd(2010, 1, 1));
        assert_eq!(normalize_date("today", dct, DateLocale::Us), dct);
        assert_eq!(normalize_date("tomorrow", dct, DateLocale::Us), ymd(2010, 1, 3));
        assert_eq!(normalize_date("3 days ago", dct, DateLocale::Us), ymd(2009, 12, 30));
        assert_eq!(normalize_date("two weeks later", dct, DateLocale::Us), ymd(2010, 1, 16));
        assert_eq!(normalize_date("1 month ago", dct, DateLocale::Us), ymd(2009, 12, 2));
        assert_eq!(normalize_date("yesterday", None, DateLocale::Us), None);
    }

    #[test]
    fn non_dates_are_absent() {
        let dct = ymd(2010, 1, 2);
        assert_eq!(normalize_date("twice daily", dct, DateLocale::Us), None);
        assert_eq!(normalize_date("", dct, DateLocale::Us), None);
        assert_eq!(normalize_date("3 apples ago", dct, DateLocale::Us), None);
    }
}
