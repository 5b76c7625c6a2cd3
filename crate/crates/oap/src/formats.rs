//! Text file formats: `OAPDS v1` datasets, `OAPNET v1` parameter files and
//! the CSV outputs. Floats are written with Rust's shortest round-trip
//! formatting so every file reloads bit-exactly.

use std::fmt::Write as _;
use std::io::{self, Write};

use oap_core::data::{OfflineDataset, QualityTier, QueryDataset, Transition};
use oap_core::nn::{MlpNet, OutputActivation};
use oap_core::scheduler::{DiagnosticRow, RunReport};
use oap_core::theory::{rho_bar_range, InstanceReport};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] oap_core::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse { line, msg: msg.into() }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn push_values(out: &mut String, values: &[f64]) {
    for v in values {
        out.push(' ');
        out.push_str(&fmt_f64(*v));
    }
}

pub const DATASET_MAGIC: &str = "OAPDS v1";

pub fn write_dataset<W: Write>(ds: &OfflineDataset, mut w: W) -> io::Result<()> {
    let mut header = format!(
        "{DATASET_MAGIC} state_dim={} action_dim={} n={} gamma={}",
        ds.state_dim,
        ds.action_dim,
        ds.len(),
        fmt_f64(ds.gamma)
    );
    if let Some(t) = ds.quality {
        write!(header, " tier={}", t.tag()).unwrap();
    }
    if let Some(s) = ds.source_seed {
        write!(header, " source_seed={s}").unwrap();
    }
    writeln!(w, "{header}")?;
    let mut row = String::new();
    for t in &ds.transitions {
        row.clear();
        push_values(&mut row, &t.s);
        push_values(&mut row, &t.a);
        push_values(&mut row, &t.s_next);
        push_values(&mut row, &[t.r]);
        row.push_str(if t.done { " 1" } else { " 0" });
        writeln!(w, "{}", &row[1..])?;
    }
    w.flush()
}

fn parse_key<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, FormatError> {
    value.parse().map_err(|_| parse_err(line, format!("bad value {value:?} for {key}")))
}

pub fn read_dataset(text: &str) -> Result<OfflineDataset, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let rest = header
        .strip_prefix(DATASET_MAGIC)
        .ok_or_else(|| parse_err(1, format!("expected header starting with {DATASET_MAGIC:?}")))?;
    let (mut sd, mut ad, mut n, mut gamma) = (None, None, None, None);
    let (mut tier, mut seed) = (None, None);
    for field in rest.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| parse_err(1, format!("malformed header field {field:?}")))?;
        match k {
            "state_dim" => sd = Some(parse_key::<usize>(1, k, v)?),
            "action_dim" => ad = Some(parse_key::<usize>(1, k, v)?),
            "n" => n = Some(parse_key::<usize>(1, k, v)?),
            "gamma" => gamma = Some(parse_key::<f64>(1, k, v)?),
            "tier" => tier = Some(v.parse::<QualityTier>().map_err(|e| parse_err(1, e.to_string()))?),
            "source_seed" => seed = Some(parse_key::<u64>(1, k, v)?),
            _ => return Err(parse_err(1, format!("unknown header key {k:?}"))),
        }
    }
    let missing = |k: &str| parse_err(1, format!("header is missing {k}"));
    let sd = sd.ok_or_else(|| missing("state_dim"))?;
    let ad = ad.ok_or_else(|| missing("action_dim"))?;
    let n = n.ok_or_else(|| missing("n"))?;
    let gamma = gamma.ok_or_else(|| missing("gamma"))?;
    let width = 2 * sd + ad + 2;
    let mut transitions = Vec::with_capacity(n);
    let mut last_line = 1;
    for (line, l) in lines {
        last_line = line;
        if l.trim().is_empty() {
            continue;
        }
        if transitions.len() == n {
            return Err(parse_err(line, format!("more than the {n} rows declared in the header")));
        }
        let values: Vec<f64> = l
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| parse_err(line, format!("bad number {v:?}"))))
            .collect::<Result<_, _>>()?;
        if values.len() != width {
            return Err(parse_err(line, format!("expected {width} values, got {}", values.len())));
        }
        let done = match values[width - 1] {
            x if x == 0.0 => false,
            x if x == 1.0 => true,
            x => return Err(parse_err(line, format!("done flag must be 0 or 1, got {x}"))),
        };
        if let Some(x) = values.iter().find(|x| !x.is_finite()) {
            return Err(parse_err(line, format!("non-finite value {x}")));
        }
        transitions.push(Transition {
            s: values[..sd].to_vec(),
            a: values[sd..sd + ad].to_vec(),
            s_next: values[sd + ad..2 * sd + ad].to_vec(),
            r: values[2 * sd + ad],
            done,
        });
    }
    if transitions.len() != n {
        return Err(parse_err(last_line + 1, format!("expected {n} rows, found {}", transitions.len())));
    }
    let mut ds = OfflineDataset::new(transitions, sd, ad, gamma)?;
    ds.quality = tier;
    ds.source_seed = seed;
    Ok(ds)
}

pub const NET_MAGIC: &str = "OAPNET v1";

pub fn write_net<W: Write>(net: &MlpNet, mut w: W) -> io::Result<()> {
    let widths: Vec<String> = net.widths().iter().map(usize::to_string).collect();
    writeln!(w, "{NET_MAGIC} widths={}", widths.join(","))?;
    for p in net.params() {
        writeln!(w, "{}", fmt_f64(*p))?;
    }
    w.flush()
}

/// Parses an `OAPNET v1` file. The output activation and dropout rate are
/// not part of the format and come from the caller.
pub fn read_net(text: &str, output: OutputActivation, dropout: f64) -> Result<MlpNet, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let widths = header
        .strip_prefix(NET_MAGIC)
        .map(str::trim)
        .and_then(|r| r.strip_prefix("widths="))
        .ok_or_else(|| parse_err(1, format!("expected header {NET_MAGIC:?} widths=...")))?;
    let widths: Vec<usize> = widths
        .split(',')
        .map(|w| w.parse().map_err(|_| parse_err(1, format!("bad width {w:?}"))))
        .collect::<Result<_, _>>()?;
    let mut params = Vec::new();
    for (line, l) in lines {
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        let v: f64 = l.parse().map_err(|_| parse_err(line, format!("bad number {l:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(line, format!("non-finite parameter {v}")));
        }
        params.push(v);
    }
    Ok(MlpNet::from_params(&widths, params, output, dropout)?)
}

pub const METRICS_HEADER: &str = "step,scheme,variant,env,seed,return_mean,return_std,norm_score,queries_used,env_steps";

/// One row per evaluation; `env` is the label the run was configured with.
pub fn write_metrics<W: Write>(report: &RunReport, env: &str, mut w: W) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for e in &report.evals {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            e.step,
            report.scheme.tag(),
            report.variant,
            env,
            report.seed,
            fmt_f64(e.return_mean),
            fmt_f64(e.return_std),
            fmt_f64(e.norm_score),
            e.queries_used,
            e.env_steps
        )?;
    }
    w.flush()
}

pub const ROUNDS_HEADER: &str = "step,oracle_queries,policy_preferred,ranknet_cost,pseudo_labels,init,oracle,pseudo,deviating";

pub fn write_rounds<W: Write>(report: &RunReport, mut w: W) -> io::Result<()> {
    writeln!(w, "{ROUNDS_HEADER}")?;
    for r in &report.rounds {
        let cost = r.ranknet_cost.map(fmt_f64).unwrap_or_default();
        let l = r.labels;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.step, r.oracle_queries, r.policy_preferred, cost, r.pseudo_labels, l.init, l.oracle, l.pseudo, l.deviating
        )?;
    }
    w.flush()
}

pub fn write_query_log<W: Write>(dq: &QueryDataset, state_dim: usize, action_dim: usize, mut w: W) -> io::Result<()> {
    let mut header = String::from("index");
    for i in 0..state_dim {
        write!(header, ",s{i}").unwrap();
    }
    for prefix in ["a_dataset", "a_policy"] {
        for i in 0..action_dim {
            write!(header, ",{prefix}{i}").unwrap();
        }
    }
    header.push_str(",preferred_is_policy,step");
    writeln!(w, "{header}")?;
    for r in &dq.records {
        let mut row = r.index.to_string();
        for v in r.state.iter().chain(&r.dataset_action).chain(&r.policy_action) {
            row.push(',');
            row.push_str(&fmt_f64(*v));
        }
        write!(row, ",{},{}", r.preferred_is_policy as u8, r.step).unwrap();
        writeln!(w, "{row}")?;
    }
    w.flush()
}

pub const DIAGNOSTICS_HEADER: &str = "index,divergence,value_gain";

pub fn write_diagnostics<W: Write>(rows: &[DiagnosticRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{DIAGNOSTICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.index, fmt_f64(r.divergence), fmt_f64(r.value_gain))?;
    }
    w.flush()
}

pub const THEORY_HEADER: &str = "instance,seed,n_states,n_actions,gamma,conflicts,\
lemma1_lhs,lemma1_rhs,lemma1_residual,\
prop1_a,prop1_b,prop1_b_empirical,prop1_residual,prop1_drift,revised_states,\
prop2_true_gap,prop2_estimated_gap,prop2_estimated_gap_empirical,prop2_slack,prop2_delta_term,prop2_eta_gap,prop2_eta_margin,\
alpha,alpha_tilde,dtv_revised,dtv_behavior,rho_bar,rho_bar_lo,rho_bar_hi,n_dataset_states,eval_agreement";

fn pass(ok: bool) -> &'static str {
    if ok { "PASS" } else { "FAIL" }
}

pub fn write_theory<W: Write>(reports: &[InstanceReport], mut w: W) -> io::Result<()> {
    let mut header = String::from(THEORY_HEADER);
    if let Some(r) = reports.first() {
        for (name, _) in r.checks() {
            write!(header, ",{name}").unwrap();
        }
    }
    writeln!(w, "{header}")?;
    for r in reports {
        let (lo, hi) = rho_bar_range(r.n_states, r.gamma);
        let (p1, p2) = (&r.prop1, &r.prop2);
        let floats = [
            r.lemma1.lhs,
            r.lemma1.rhs,
            r.lemma1.residual,
            p1.a,
            p1.b,
            p1.b_empirical,
            p1.residual,
            p1.drift,
        ];
        let mut row = format!("{},{},{},{},{},{}", r.index, r.seed, r.n_states, r.n_actions, fmt_f64(r.gamma), r.conflicts);
        for v in floats {
            write!(row, ",{}", fmt_f64(v)).unwrap();
        }
        write!(row, ",{}", p1.revised_states).unwrap();
        let floats = [
            p2.true_gap,
            p2.estimated_gap,
            p2.estimated_gap_empirical,
            p2.slack,
            p2.delta_term,
            p2.eta_gap,
            p2.eta_margin(),
            p2.alpha,
            p2.alpha_tilde,
            p2.dtv_revised,
            p2.dtv_behavior,
            p2.rho_bar,
            lo,
            hi,
        ];
        for v in floats {
            write!(row, ",{}", fmt_f64(v)).unwrap();
        }
        write!(row, ",{},{}", p2.n_dataset_states, fmt_f64(r.eval_agreement)).unwrap();
        for (_, ok) in r.checks() {
            write!(row, ",{}", pass(ok)).unwrap();
        }
        writeln!(w, "{row}")?;
    }
    w.flush()
}
