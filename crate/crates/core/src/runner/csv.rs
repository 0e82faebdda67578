use std::fmt::Write as _;

use super::SweepRow;
use crate::decomposition::{DecompositionMatrix, IntensityProfile};

/// Version tag written in the first line of every CSV file.
pub const CSV_SCHEMA: &str = "decoy-keysize-csv v1";

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn schema_line(out: &mut String, kind: &str) {
    writeln!(out, "# schema: {CSV_SCHEMA} {kind}").expect("writing to a string");
}

/// One line per row; aborted rows carry their reason code and leave every number empty.
///
/// `axis` names the leading column; `None` omits it. `k` fixes the number of intensity columns.
pub fn rows_csv(axis: Option<&str>, k: usize, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    schema_line(&mut out, "rows");
    let mut header: Vec<String> = vec![];
    if let Some(name) = axis {
        header.push(name.to_string());
    }
    header.extend(["status", "reason", "rate", "n_final", "n_sent"].map(String::from));
    header.extend((0..=k).map(|i| format!("mu_{i}")));
    header.extend((0..=2 * k).map(|i| format!("p_{i}")));
    header.extend(
        [
            "m",
            "theta_hat",
            "var_term",
            "theta2_term",
            "delta3",
            "a",
            "x_star",
            "y_star",
            "variance",
            "error_rate",
            "coding_rate",
            "raw_key",
            "capped",
        ]
        .map(String::from),
    );
    writeln!(out, "{}", header.join(",")).expect("writing to a string");
    let width = header.len();
    for row in rows {
        let mut fields: Vec<String> = vec![];
        if axis.is_some() {
            fields.push(format_float(row.axis_value));
        }
        match row.outcome() {
            None => {
                let reason = match &row.status {
                    super::RowStatus::Aborted(code) => code.clone(),
                    super::RowStatus::Key(_) => unreachable!(),
                };
                fields.push("aborted".into());
                fields.push(reason);
                fields.resize(width, String::new());
            }
            Some(o) => {
                let b = &o.breakdown;
                fields.push("ok".into());
                fields.push(String::new());
                fields.push(format_float(row.rate()));
                fields.push(o.n_final.to_string());
                fields.push(row.n_sent.to_string());
                fields.extend(row.mus.iter().map(|&v| format_float(v)));
                fields.extend(row.send_probs.iter().map(|&v| format_float(v)));
                for v in [
                    b.m,
                    b.theta_hat,
                    b.var_term,
                    b.theta2_term,
                    b.delta3,
                    b.a_used,
                    b.x_star,
                    b.y_star,
                    b.variance,
                    o.error_rate,
                    o.coding_rate,
                    o.raw,
                ] {
                    fields.push(format_float(v));
                }
                fields.push(o.capped.to_string());
            }
        }
        writeln!(out, "{}", fields.join(",")).expect("writing to a string");
    }
    out
}

/// The matrix `P_i^j` with one line per pulse kind, preceded by the `Omega_l` in a comment line.
pub fn decomposition_csv(profile: &IntensityProfile, decomp: &DecompositionMatrix) -> String {
    let mut out = String::new();
    schema_line(&mut out, "decomposition");
    let k = decomp.k();
    let omegas: Vec<String> = (2..=k + 1).map(|l| format_float(decomp.omega(l))).collect();
    writeln!(out, "# omega_2..omega_{} = {}", k + 1, omegas.join(",")).expect("writing to a string");
    let mut header = vec!["kind".to_string(), "mu".to_string()];
    header.extend((0..2 * k + 2).map(|j| format!("P_{j}")));
    writeln!(out, "{}", header.join(",")).expect("writing to a string");
    for i in 0..2 * k + 1 {
        let mut fields = vec![i.to_string(), format_float(profile.mu_of_kind(i))];
        fields.extend((0..2 * k + 2).map(|j| format_float(decomp.p(i, j))));
        writeln!(out, "{}", fields.join(",")).expect("writing to a string");
    }
    out
}
