//! Headerless CSV for inspecting Grams and codes.

use std::fmt::Write;

use kvlad_core::linalg::Matrix;

use crate::format::{CodesFile, GramFile};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row<'a>(out: &mut String, values: impl IntoIterator<Item = &'a f64>) {
    let mut first = true;
    for &v in values {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(&format_value(v));
    }
    out.push('\n');
}

fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        push_row(&mut out, m.row(i));
    }
    out
}

/// One row per Gram row, full matrix.
pub fn gram_csv(g: &GramFile) -> String {
    match g {
        GramFile::Symmetric(g) => matrix_csv(&g.values),
        GramFile::Cross(c) => matrix_csv(&c.values),
    }
}

/// One row per set: id, label, then the concatenated code.
pub fn codes_csv(c: &CodesFile) -> String {
    let mut out = String::new();
    for e in &c.entries {
        write!(out, "{},{}", e.id, e.label).expect("string write");
        if !e.code.is_empty() {
            out.push(',');
        }
        push_row(&mut out, e.code.blocks.iter().flatten());
    }
    out
}
