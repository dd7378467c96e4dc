//! Deterministic JSON output: insertion-ordered keys, floats at full
//! precision (17 significant digits), infinities as "inf"/"-inf" strings.

use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub enum Jv {
    Bool(bool),
    UInt(u64),
    /// Arbitrary-precision integer, already rendered as digits.
    BigInt(String),
    Float(f64),
    Str(String),
    Arr(Vec<Jv>),
    Obj(Vec<(String, Jv)>),
}

impl Jv {
    pub fn obj() -> Jv {
        Jv::Obj(Vec::new())
    }

    pub fn push(&mut self, key: &str, value: Jv) {
        match self {
            Jv::Obj(pairs) => pairs.push((key.to_string(), value)),
            _ => panic!("push on non-object"),
        }
    }

    pub fn with(mut self, key: &str, value: Jv) -> Jv {
        self.push(key, value);
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, indent: usize) {
        match self {
            Jv::Bool(b) => {
                let _ = write!(out, "{b}");
            }
            Jv::UInt(v) => {
                let _ = write!(out, "{v}");
            }
            Jv::BigInt(digits) => out.push_str(digits),
            Jv::Float(f) => out.push_str(&render_float(*f)),
            Jv::Str(s) => write_escaped(out, s),
            Jv::Arr(items) => {
                if items.is_empty() {
                    out.push_str("[]");
                    return;
                }
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    pad(out, indent + 1);
                    item.write(out, indent + 1);
                }
                out.push('\n');
                pad(out, indent);
                out.push(']');
            }
            Jv::Obj(pairs) => {
                if pairs.is_empty() {
                    out.push_str("{}");
                    return;
                }
                out.push('{');
                for (i, (k, v)) in pairs.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    pad(out, indent + 1);
                    write_escaped(out, k);
                    out.push_str(": ");
                    v.write(out, indent + 1);
                }
                out.push('\n');
                pad(out, indent);
                out.push('}');
            }
        }
    }
}

/// 17 significant digits round-trips every f64 exactly.
pub fn render_float(f: f64) -> String {
    if f.is_nan() {
        return "\"NaN\"".into();
    }
    if f == f64::INFINITY {
        return "\"inf\"".into();
    }
    if f == f64::NEG_INFINITY {
        return "\"-inf\"".into();
    }
    format!("{f:.16e}")
}

fn pad(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

fn write_escaped(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

pub fn float_arr(values: &[f64]) -> Jv {
    Jv::Arr(values.iter().map(|&v| Jv::Float(v)).collect())
}
