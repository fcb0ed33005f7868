use chrono::{Datelike, Duration, NaiveDate, Weekday};

use super::lexicon::WEEKDAYS;
use crate::error::{Error, Result};

/// Every relative-date phrase the generator can emit.
pub fn relative_date_vocabulary() -> Vec<String> {
    let mut phrases = vec!["today".to_string(), "tomorrow".to_string()];
    phrases.extend((2..=6).map(|n| format!("in {n} days")));
    phrases.extend(WEEKDAYS.iter().map(|d| format!("next {}", capitalize(d))));
    phrases
}

/// Resolves a phrase from [`relative_date_vocabulary`] against `today`.
/// "next <weekday>" is the first strictly future occurrence.
pub fn resolve_relative_date(today: NaiveDate, phrase: &str) -> Result<NaiveDate> {
    let p = phrase.trim().to_ascii_lowercase();
    let offset = match p.as_str() {
        "today" => 0,
        "tomorrow" => 1,
        _ => {
            if let Some(n) = p.strip_prefix("in ").and_then(|r| r.strip_suffix(" days")) {
                match n.parse::<i64>() {
                    Ok(n) if (2..=6).contains(&n) => n,
                    _ => return Err(unknown(phrase)),
                }
            } else if let Some(day) = p.strip_prefix("next ") {
                let target = parse_weekday(day).ok_or_else(|| unknown(phrase))?;
                let ahead = (target.num_days_from_monday() as i64
                    - today.weekday().num_days_from_monday() as i64)
                    .rem_euclid(7);
                if ahead == 0 {
                    7
                } else {
                    ahead
                }
            } else {
                return Err(unknown(phrase));
            }
        }
    };
    Ok(today + Duration::days(offset))
}

fn unknown(phrase: &str) -> Error {
    Error::Internal(format!("relative date phrase {phrase:?} is outside the generator vocabulary"))
}

fn parse_weekday(name: &str) -> Option<Weekday> {
    WEEKDAYS
        .iter()
        .position(|d| *d == name)
        .map(|i| Weekday::try_from(i as u8).expect("index below 7"))
}

pub fn weekday_name(date: NaiveDate) -> String {
    capitalize(WEEKDAYS[date.weekday().num_days_from_monday() as usize])
}

/// "09:30" -> "9:30 AM", "12:00" -> "12:00 PM", "18:00" -> "6:00 PM".
pub fn display_time(minutes_after_midnight: u32) -> String {
    let (h, m) = (minutes_after_midnight / 60, minutes_after_midnight % 60);
    let suffix = if h < 12 { "AM" } else { "PM" };
    let h12 = match h % 12 {
        0 => 12,
        x => x,
    };
    format!("{h12}:{m:02} {suffix}")
}

/// Inverse of [`display_time`], producing 24-hour "HH:MM".
pub fn resolve_display_time(display: &str) -> Result<String> {
    let bad = || Error::Internal(format!("unrecognized display time {display:?}"));
    let (clock, suffix) = display.trim().split_once(' ').ok_or_else(bad)?;
    let (h, m) = clock.split_once(':').ok_or_else(bad)?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&h) || m >= 60 {
        return Err(bad());
    }
    let h24 = match suffix {
        "AM" => h % 12,
        "PM" => h % 12 + 12,
        _ => return Err(bad()),
    };
    Ok(format!("{h24:02}:{m:02}"))
}

pub(crate) fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    /// Walks forward one day at a time until the phrase is satisfied.
    fn oracle(today: NaiveDate, phrase: &str) -> NaiveDate {
        let p = phrase.to_ascii_lowercase();
        if p == "today" {
            return today;
        }
        if p == "tomorrow" {
            return today.succ_opt().unwrap();
        }
        if let Some(n) = p.strip_prefix("in ").and_then(|r| r.strip_suffix(" days")) {
            let mut d = today;
            for _ in 0..n.parse::<u32>().unwrap() {
                d = d.succ_opt().unwrap();
            }
            return d;
        }
        let want = p.strip_prefix("next ").unwrap();
        let mut d = today.succ_opt().unwrap();
        while d.format("%A").to_string().to_ascii_lowercase() != want {
            d = d.succ_opt().unwrap();
        }
        d
    }

    #[test]
    fn examples() {
        let today = date("2025-03-10");
        assert_eq!(today.weekday(), Weekday::Mon);
        assert_eq!(resolve_relative_date(today, "tomorrow").unwrap(), date("2025-03-11"));
        assert_eq!(resolve_relative_date(today, "today").unwrap(), today);
        assert_eq!(resolve_relative_date(today, "next Friday").unwrap(), date("2025-03-14"));
        assert_eq!(resolve_relative_date(today, "next Monday").unwrap(), date("2025-03-17"));
    }

    #[test]
    fn agrees_with_day_walking_oracle() {
        let mut d = date("2024-12-20");
        for _ in 0..60 {
            for phrase in relative_date_vocabulary() {
                let got = resolve_relative_date(d, &phrase).unwrap();
                assert_eq!(got, oracle(d, &phrase), "{d} {phrase}");
                assert!(got >= d);
            }
            d = d.succ_opt().unwrap();
        }
    }

    #[test]
    fn out_of_vocabulary_is_internal_error() {
        let today = date("2025-03-10");
        for p in ["yesterday", "in 9 days", "next week", "in two days"] {
            assert!(matches!(resolve_relative_date(today, p), Err(Error::Internal(_))), "{p}");
        }
    }

    #[test]
    fn display_time_round_trip() {
        for minutes in (8 * 60..=18 * 60).step_by(15) {
            let shown = display_time(minutes);
            let back = resolve_display_time(&shown).unwrap();
            assert_eq!(back, format!("{:02}:{:02}", minutes / 60, minutes % 60));
        }
        assert_eq!(display_time(12 * 60), "12:00 PM");
        assert_eq!(display_time(9 * 60 + 30), "9:30 AM");
    }
}
