//! Check reports and the tolerance model shared by every checker.

use serde::{Deserialize, Serialize};

use crate::grid::{Accuracy, GridSpec};

/// Relative floating-point allowance applied to every check.
pub const REL_TOL: f64 = 1e-8;

/// Constant `K` in the discretisation allowance `K · h^order`, relative to the
/// largest term. Sized from the exponential product-rule residual of random
/// band-limited fields with `max |f| = 1`, whose worst ratio over 40 seeds at
/// 16³ and 48³ was about 3.
pub const DISCRETIZATION_K: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// A hypothesis of the implication was not met, so the check is vacuous.
    Prereq,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Prereq => "PREREQ",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub status: Status,
    pub equation_tag: String,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckReport {
    /// `pass ⇔ lhs ≤ rhs + tolerance`.
    pub fn evaluate(
        name: impl Into<String>,
        equation_tag: impl Into<String>,
        lhs: f64,
        rhs: f64,
        tolerance: f64,
    ) -> Self {
        let pass = lhs <= rhs + tolerance;
        CheckReport {
            name: name.into(),
            lhs,
            rhs,
            slack: rhs - lhs,
            pass,
            status: if pass { Status::Pass } else { Status::Fail },
            equation_tag: equation_tag.into(),
            tolerance,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        let note = note.into();
        self.note = Some(match self.note.take() {
            Some(prev) => format!("{prev}; {note}"),
            None => note,
        });
        self
    }

    /// Marks the report vacuous; both sides are kept for inspection.
    pub fn prerequisite_failed(mut self, reason: impl Into<String>) -> Self {
        self.pass = false;
        self.status = Status::Prereq;
        self.with_note(format!("prerequisite failed: {}", reason.into()))
    }

    /// Applies an optional prerequisite failure.
    pub fn gated(self, prereq: &Option<String>) -> Self {
        match prereq {
            Some(reason) => self.prerequisite_failed(reason.clone()),
            None => self,
        }
    }
}

/// `tolerance = (rel + disc) · scale`, where `disc = K h^order` is only
/// charged when the two sides are computed through different discrete routes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerance {
    pub rel: f64,
    pub disc: f64,
}

impl Tolerance {
    /// Both sides share the same discrete operators.
    pub fn same_route() -> Self {
        Tolerance {
            rel: REL_TOL,
            disc: 0.0,
        }
    }

    pub fn cross_route(spec: &GridSpec, acc: Accuracy) -> Self {
        Tolerance {
            rel: REL_TOL,
            disc: DISCRETIZATION_K * spec.max_spacing().powi(acc.order()),
        }
    }

    pub fn absolute(&self, scale: f64) -> f64 {
        (self.rel + self.disc) * scale.abs()
    }
}

/// Fixed column order of the report CSV.
pub const CSV_HEADER: &str = "name,j,lhs,rhs,slack,pass,tolerance,tag";

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_row(r: &CheckReport, j: Option<u64>) -> String {
    format!(
        "{},{},{:e},{:e},{:e},{},{:e},{}",
        csv_field(&r.name),
        j.map(|j| j.to_string()).unwrap_or_default(),
        r.lhs,
        r.rhs,
        r.slack,
        r.status.label(),
        r.tolerance,
        csv_field(&r.equation_tag)
    )
}

/// Renders `(j, report)` rows under [`CSV_HEADER`].
pub fn to_csv<'a>(rows: impl IntoIterator<Item = (Option<u64>, &'a CheckReport)>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (j, r) in rows {
        out.push_str(&csv_row(r, j));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_iff_within_tolerance() {
        assert!(CheckReport::evaluate("a", "t", 1.0, 1.0, 0.0).pass);
        assert!(CheckReport::evaluate("a", "t", 1.0 + 1e-9, 1.0, 1e-8).pass);
        let r = CheckReport::evaluate("a", "t", 2.0, 1.0, 0.5);
        assert!(!r.pass);
        assert_eq!(r.status, Status::Fail);
        assert_eq!(r.slack, -1.0);
    }

    #[test]
    fn prerequisite_marks_row() {
        let r = CheckReport::evaluate("a", "t", 0.0, 1.0, 0.0).prerequisite_failed("R < -1/j");
        assert!(!r.pass);
        assert_eq!(r.status, Status::Prereq);
        assert!(to_csv([(Some(3), &r)]).contains(",PREREQ,"));
    }

    #[test]
    fn empty_csv_is_header_only() {
        assert_eq!(to_csv(std::iter::empty()), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn json_round_trip() {
        let r = CheckReport::evaluate("x,y", "tag", 0.25, 0.5, 1e-9).with_note("n");
        let s = serde_json::to_string(&r).unwrap();
        let back: CheckReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        assert!(to_csv([(None, &r)]).contains("\"x,y\""));
    }
}
