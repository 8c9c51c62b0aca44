//! Calendar-month arithmetic shared across the pipeline.
//!
//! Monthly quantities are keyed by calendar month rather than by an exact
//! month-end date so that daily calendars (which end on the last trading day
//! of a month) and monthly files (which may stamp any day of the month) join
//! unambiguously.

use chrono::{Datelike, NaiveDate};

/// A calendar month, ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthKey {
    pub year: i32,
    /// 1-based month.
    pub month: u32,
}

impl MonthKey {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        MonthKey { year, month }
    }

    pub fn from_date(date: NaiveDate) -> Self {
        MonthKey { year: date.year(), month: date.month() }
    }

    /// Month index on a continuous axis; consecutive months differ by 1.
    fn ordinal(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    pub fn next(self) -> Self {
        self.plus_months(1)
    }

    pub fn prev(self) -> Self {
        self.plus_months(-1)
    }

    pub fn plus_months(self, n: i64) -> Self {
        let ord = self.ordinal() + n;
        let year = ord.div_euclid(12);
        let month = ord.rem_euclid(12) + 1;
        MonthKey { year: year as i32, month: month as u32 }
    }

    /// Number of months from `earlier` to `self` (positive when `self` is later).
    pub fn months_since(self, earlier: MonthKey) -> i64 {
        self.ordinal() - earlier.ordinal()
    }

    /// Last calendar day of the month.
    pub fn last_day(self) -> NaiveDate {
        let first_next = NaiveDate::from_ymd_opt(
            self.next().year,
            self.next().month,
            1,
        )
        .expect("valid first-of-month");
        first_next.pred_opt().expect("valid last-of-month")
    }
}

impl std::fmt::Display for MonthKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Same calendar day one year earlier; Feb 29 maps to Feb 28.
pub fn one_year_before(date: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(date.year() - 1, date.month(), date.day())
        .unwrap_or_else(|| {
            NaiveDate::from_ymd_opt(date.year() - 1, date.month(), 28)
                .expect("valid fallback date")
        })
}

/// True for Monday through Friday; the synthetic calendar trades weekdays.
pub fn is_weekday(date: NaiveDate) -> bool {
    date.weekday().num_days_from_monday() < 5
}
