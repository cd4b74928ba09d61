use std::fmt::Write;

use cicmed::cic::StrataShares;
use cicmed::dataio::Design;
use cicmed::simkit::{MonteCarloReport, SimulationDesign};
use cicmed::Error;
use serde::Serialize;

use crate::Format;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct SampleInfo {
    pub input: String,
    pub design: Design,
    pub observations: usize,
    pub clusters: usize,
    pub dropped_rows: usize,
    pub covariates: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct BootstrapInfo {
    pub replications: usize,
    pub seed: u64,
    pub failed: usize,
}

#[derive(Debug, Serialize)]
pub struct QuantileRow {
    pub q: f64,
    pub est: f64,
    pub se: Option<f64>,
    pub pval: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct EffectRow {
    pub method: &'static str,
    pub estimand: &'static str,
    pub status: String,
    pub est: Option<f64>,
    pub se: Option<f64>,
    pub pval: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub quantiles: Vec<QuantileRow>,
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub sample: SampleInfo,
    pub shares: StrataShares,
    pub bootstrap: Option<BootstrapInfo>,
    pub warnings: Vec<String>,
    pub results: Vec<EffectRow>,
}

#[derive(Debug, Serialize)]
pub struct TruthRow {
    pub estimand: &'static str,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub design: SimulationDesign,
    pub p_a: f64,
    pub p_c: f64,
    pub p_n: f64,
    pub truth: Vec<TruthRow>,
    pub warnings: Vec<String>,
    pub reports: Vec<MonteCarloReport>,
}

#[derive(Debug, Serialize)]
pub struct DiagnosticRow {
    pub name: String,
    pub estimate: Option<f64>,
    pub p_value: Option<f64>,
    pub std_diff: Option<f64>,
    pub flagged: Option<bool>,
    pub verdict: String,
}

#[derive(Debug, Serialize)]
pub struct DiagnoseReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub sample: SampleInfo,
    pub diagnostics: Vec<DiagnosticRow>,
}

pub enum Report {
    Estimate(EstimateReport),
    Simulate(SimulateReport),
    Diagnose(DiagnoseReport),
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn sample_header(out: &mut String, s: &SampleInfo) {
    let design = match s.design {
        Design::Panel => "panel",
        Design::RepeatedCrossSection => "cross_section",
    };
    writeln!(
        out,
        "# input={} design={design} observations={} clusters={} dropped_rows={}",
        s.input, s.observations, s.clusters, s.dropped_rows
    )
    .unwrap();
}

impl Report {
    pub fn render(&self, format: Format) -> String {
        match (self, format) {
            (Report::Estimate(r), Format::Json) => json(r),
            (Report::Simulate(r), Format::Json) => json(r),
            (Report::Diagnose(r), Format::Json) => json(r),
            (Report::Estimate(r), Format::Tsv) => estimate_tsv(r),
            (Report::Simulate(r), Format::Tsv) => simulate_tsv(r),
            (Report::Diagnose(r), Format::Tsv) => diagnose_tsv(r),
        }
    }
}

fn estimate_tsv(r: &EstimateReport) -> String {
    let mut out = String::new();
    sample_header(&mut out, &r.sample);
    writeln!(out, "# p_a={:.4} p_c={:.4} p_n={:.4}", r.shares.p_a, r.shares.p_c, r.shares.p_n).unwrap();
    if let Some(b) = &r.bootstrap {
        writeln!(out, "# bootstrap replications={} seed={} failed={}", b.replications, b.seed, b.failed).unwrap();
    }
    for w in &r.warnings {
        writeln!(out, "# warning: {w}").unwrap();
    }
    out.push_str("method\testimand\test\tse\tpval\tci_lower\tci_upper\tstatus\n");
    for e in &r.results {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.method,
            e.estimand,
            num(e.est),
            num(e.se),
            num(e.pval),
            num(e.ci_lower),
            num(e.ci_upper),
            e.status
        )
        .unwrap();
    }
    if r.results.iter().any(|e| !e.quantiles.is_empty()) {
        out.push_str("\nmethod\testimand\tq\test\tse\tpval\n");
        for e in &r.results {
            for q in &e.quantiles {
                writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", e.method, e.estimand, q.q, num(Some(q.est)), num(q.se), num(q.pval)).unwrap();
            }
        }
    }
    out
}

fn simulate_tsv(r: &SimulateReport) -> String {
    let mut out = String::new();
    let d = &r.design;
    writeln!(
        out,
        "# link={} assignment={} n={} reps={} seed={}",
        serde_json::to_value(d.link).unwrap().as_str().unwrap(),
        serde_json::to_value(d.assignment).unwrap().as_str().unwrap(),
        d.n,
        d.reps,
        d.seed
    )
    .unwrap();
    writeln!(out, "# p_a={:.4} p_c={:.4} p_n={:.4}", r.p_a, r.p_c, r.p_n).unwrap();
    for w in &r.warnings {
        writeln!(out, "# warning: {w}").unwrap();
    }
    for (k, rep) in r.reports.iter().enumerate() {
        let tsv = rep.to_tsv();
        let body = if k == 0 { tsv.as_str() } else { tsv.split_once('\n').map_or("", |(_, rest)| rest) };
        out.push_str(body);
    }
    out
}

fn diagnose_tsv(r: &DiagnoseReport) -> String {
    let mut out = String::new();
    sample_header(&mut out, &r.sample);
    out.push_str("diagnostic\testimate\tpval\tSD\tflagged\tverdict\n");
    for d in &r.diagnostics {
        let flagged = d.flagged.map_or("NA".to_string(), |f| f.to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{flagged}\t{}",
            d.name,
            num(d.estimate),
            num(d.p_value),
            num(d.std_diff),
            d.verdict
        )
        .unwrap();
    }
    out
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    schema_version: u32,
    error: ErrorBody<'a>,
}

pub fn error_json(e: &Error) -> String {
    serde_json::to_string(&ErrorReport {
        schema_version: SCHEMA_VERSION,
        error: ErrorBody {
            code: e.code(),
            message: e.to_string(),
        },
    })
    .expect("error serializes")
}
