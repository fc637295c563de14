// Evaluation report: per-demo staged success rows plus per-method
// reachability and alignment summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::sim::Success;

/// Column order of the imitation table.
pub const DOMAIN_ORDER: [&str; 3] = ["invisible", "stick", "blobhand"];

pub const CSV_HEADER: &str = "method,domain,demo_id,lift_rate,stack_rate,mean_goals_reached";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub domain: String,
    pub demo_id: usize,
    pub attempts: usize,
    pub goals_total: usize,
    pub lifts: usize,
    pub stacks: usize,
    pub lift_rate: f64,
    pub stack_rate: f64,
    pub mean_goals_reached: f64,
    /// `goals_histogram[m]` counts attempts that reached exactly `m` goals.
    pub goals_histogram: Vec<usize>,
}

impl ReportRow {
    pub fn new(method: &str, domain: &str, demo_id: usize, goals_total: usize) -> Self {
        ReportRow {
            method: method.to_string(),
            domain: domain.to_string(),
            demo_id,
            attempts: 0,
            goals_total,
            lifts: 0,
            stacks: 0,
            lift_rate: 0.0,
            stack_rate: 0.0,
            mean_goals_reached: 0.0,
            goals_histogram: vec![0; goals_total + 1],
        }
    }

    pub fn record(&mut self, s: Success, goals_reached: usize) {
        self.attempts += 1;
        self.lifts += s.lifted as usize;
        self.stacks += (s.stacked && s.lifted) as usize;
        self.goals_histogram[goals_reached.min(self.goals_total)] += 1;
    }

    pub fn finish(mut self) -> Self {
        let n = self.attempts.max(1) as f64;
        self.lift_rate = self.lifts as f64 / n;
        self.stack_rate = self.stacks as f64 / n;
        let total: usize = self.goals_histogram.iter().enumerate().map(|(m, c)| m * c).sum();
        self.mean_goals_reached = total as f64 / n;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub rho_same_domain: Vec<f64>,
    pub rho_cross_domain: Vec<f64>,
    pub alignment_accuracy: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MethodSummary {
    pub fn mean_rho_same(&self) -> Option<f64> {
        mean(&self.rho_same_domain)
    }

    pub fn mean_rho_cross(&self) -> Option<f64> {
        mean(&self.rho_cross_domain)
    }
}

/// Pooled rates for one (method, domain) cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub attempts: usize,
    pub lift_rate: f64,
    pub stack_rate: f64,
    pub mean_goals_reached: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub methods: Vec<MethodSummary>,
}

fn domain_rank(d: &str) -> usize {
    DOMAIN_ORDER.iter().position(|x| *x == d).unwrap_or(DOMAIN_ORDER.len())
}

impl EvalReport {
    /// Rows grouped by method (first-appearance order), then domain in table
    /// column order, then demo id.
    pub fn sort_rows(&mut self) {
        let mut order: Vec<String> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.method) {
                order.push(r.method.clone());
            }
        }
        self.rows.sort_by_key(|r| {
            (
                order.iter().position(|m| *m == r.method),
                domain_rank(&r.domain),
                r.domain.clone(),
                r.demo_id,
            )
        });
    }

    pub fn cell(&self, method: &str, domain: &str) -> Option<Cell> {
        let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.method == method && r.domain == domain).collect();
        let attempts: usize = rows.iter().map(|r| r.attempts).sum();
        if attempts == 0 {
            return None;
        }
        let n = attempts as f64;
        let goals: f64 = rows.iter().map(|r| r.mean_goals_reached * r.attempts as f64).sum();
        Some(Cell {
            attempts,
            lift_rate: rows.iter().map(|r| r.lifts).sum::<usize>() as f64 / n,
            stack_rate: rows.iter().map(|r| r.stacks).sum::<usize>() as f64 / n,
            mean_goals_reached: goals / n,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.method, r.domain, r.demo_id, r.lift_rate, r.stack_rate, r.mean_goals_reached
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// Lift / stack percentages, methods as rows and domains as columns.
    pub fn table(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        let mut domains: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
            if !domains.contains(&r.domain.as_str()) {
                domains.push(&r.domain);
            }
        }
        domains.sort_by_key(|d| domain_rank(d));
        let mut s = format!("{:<10}", "method");
        for d in &domains {
            let _ = write!(s, " {:>17}", format!("{d} lift/stack"));
        }
        s.push('\n');
        for m in methods {
            let _ = write!(s, "{m:<10}");
            for d in &domains {
                match self.cell(m, d) {
                    Some(c) => {
                        let _ = write!(s, " {:>17}", format!("{:.0}%/{:.0}%", 100.0 * c.lift_rate, 100.0 * c.stack_rate));
                    }
                    None => {
                        let _ = write!(s, " {:>17}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}
