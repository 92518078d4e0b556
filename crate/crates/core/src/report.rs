//! Structured verification reports: one record per check, with the
//! surviving terms, the matched-pair count and the sign assignment that
//! made the cancellation work. Serialization is deterministic (sorted
//! keys, stable field order) so repeated runs are byte-identical.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub budgets: BTreeMap<String, i64>,
    pub matched_pairs: usize,
    pub surviving_terms: Vec<String>,
    pub sign_assignment: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl CheckReport {
    pub fn new(check: &str) -> Self {
        CheckReport {
            check: check.to_string(),
            budgets: BTreeMap::new(),
            matched_pairs: 0,
            surviving_terms: Vec::new(),
            sign_assignment: BTreeMap::new(),
            notes: Vec::new(),
            pass: true,
        }
    }

    pub fn budget(mut self, key: &str, value: i64) -> Self {
        self.budgets.insert(key.to_string(), value);
        self
    }

    pub fn fail_with(&mut self, term: String) {
        self.pass = false;
        self.surviving_terms.push(term);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub checks: Vec<CheckReport>,
    pub pass: bool,
}

impl RunReport {
    pub fn from_checks(checks: Vec<CheckReport>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        RunReport { checks, pass }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {}  matched={}  surviving={}",
                if c.pass { "PASS" } else { "FAIL" },
                c.check,
                c.matched_pairs,
                c.surviving_terms.len()
            )?;
            for (k, v) in &c.budgets {
                writeln!(f, "    budget {} = {}", k, v)?;
            }
            for (k, v) in &c.sign_assignment {
                writeln!(f, "    sign {} = {}", k, v)?;
            }
            for n in &c.notes {
                writeln!(f, "    note: {}", n)?;
            }
            for t in c.surviving_terms.iter().take(8) {
                writeln!(f, "    surviving: {}", t)?;
            }
        }
        writeln!(f, "overall: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}
