//! Model and policy files.
//!
//! Both are JSON documents tagged `"format": "mjls-v1"`. Matrices are
//! row-major nested arrays; numbers are written with 17 significant digits so
//! a save/load round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mjls_core::{validate_model, Mat, MjlsModel, Policy, ValidationReport, Vector};
use serde::Deserialize;

pub const FORMAT: &str = "mjls-v1";

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    /// serde_json reports the line and column, and names a missing field.
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("{path}: unsupported format {found:?}, expected {FORMAT:?}")]
    Format { path: PathBuf, found: String },

    #[error("{path}: field {field}: {detail}")]
    Shape {
        path: PathBuf,
        field: String,
        detail: String,
    },

    #[error("{path}: invalid model: {report}")]
    Invalid {
        path: PathBuf,
        report: ValidationReport,
    },
}

type Rows = Vec<Vec<f64>>;

#[derive(Deserialize)]
struct ModelFile {
    format: String,
    n_s: usize,
    d: usize,
    k: usize,
    #[serde(rename = "A")]
    a: Vec<Rows>,
    #[serde(rename = "B")]
    b: Vec<Rows>,
    #[serde(rename = "Q")]
    q: Vec<Rows>,
    #[serde(rename = "R")]
    r: Vec<Rows>,
    trans: Rows,
    rho: Vec<f64>,
    sigma0: Rows,
}

#[derive(Deserialize)]
struct PolicyFile {
    format: String,
    #[serde(rename = "K")]
    k: Vec<Rows>,
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Read {
        path: path.into(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), LoadError> {
    fs::write(path, text).map_err(|source| LoadError::Write {
        path: path.into(),
        source,
    })
}

fn check_format(path: &Path, found: &str) -> Result<(), LoadError> {
    if found == FORMAT {
        Ok(())
    } else {
        Err(LoadError::Format {
            path: path.into(),
            found: found.into(),
        })
    }
}

fn to_mat(path: &Path, field: &str, rows: &Rows) -> Result<Mat, LoadError> {
    let shape_err = |detail: String| LoadError::Shape {
        path: path.into(),
        field: field.into(),
        detail,
    };
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if n_rows == 0 || n_cols == 0 {
        return Err(shape_err("empty matrix".into()));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_cols) {
        return Err(shape_err(format!(
            "row {i} has {} entries, expected {n_cols}",
            row.len()
        )));
    }
    Ok(Mat::from_fn(n_rows, n_cols, |i, j| rows[i][j]))
}

fn to_mats(path: &Path, field: &str, blocks: &[Rows]) -> Result<Vec<Mat>, LoadError> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, rows)| to_mat(path, &format!("{field}[{i}]"), rows))
        .collect()
}

/// Reads and validates a model file.
pub fn load_model(path: &Path) -> Result<MjlsModel, LoadError> {
    let text = read(path)?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|source| LoadError::Parse {
        path: path.into(),
        source,
    })?;
    check_format(path, &file.format)?;
    let model = MjlsModel {
        n_s: file.n_s,
        d: file.d,
        k: file.k,
        a: to_mats(path, "A", &file.a)?,
        b: to_mats(path, "B", &file.b)?,
        q: to_mats(path, "Q", &file.q)?,
        r: to_mats(path, "R", &file.r)?,
        trans: to_mat(path, "trans", &file.trans)?,
        rho: Vector::from_vec(file.rho),
        sigma0: to_mat(path, "sigma0", &file.sigma0)?,
    };
    let report = validate_model(&model);
    if !report.is_valid() {
        return Err(LoadError::Invalid {
            path: path.into(),
            report,
        });
    }
    Ok(model)
}

/// Reads a policy file and checks its gains against `model`.
pub fn load_policy(path: &Path, model: &MjlsModel) -> Result<Policy, LoadError> {
    let text = read(path)?;
    let file: PolicyFile = serde_json::from_str(&text).map_err(|source| LoadError::Parse {
        path: path.into(),
        source,
    })?;
    check_format(path, &file.format)?;
    let gains = to_mats(path, "K", &file.k)?;
    let shape_err = |detail: String| LoadError::Shape {
        path: path.into(),
        field: "K".into(),
        detail,
    };
    if gains.len() != model.n_s {
        return Err(shape_err(format!(
            "{} gains for {} modes",
            gains.len(),
            model.n_s
        )));
    }
    if let Some((i, g)) = gains
        .iter()
        .enumerate()
        .find(|(_, g)| g.shape() != (model.k, model.d))
    {
        return Err(shape_err(format!(
            "K[{i}] is {}x{}, expected {}x{}",
            g.nrows(),
            g.ncols(),
            model.k,
            model.d
        )));
    }
    Ok(Policy::new(gains))
}

fn push_number(out: &mut String, v: f64) {
    // 17 significant digits survive the decimal round trip exactly
    write!(out, "{v:.16e}").unwrap();
}

fn push_matrix(out: &mut String, m: &Mat) {
    out.push('[');
    for i in 0..m.nrows() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('[');
        for j in 0..m.ncols() {
            if j > 0 {
                out.push_str(", ");
            }
            push_number(out, m[(i, j)]);
        }
        out.push(']');
    }
    out.push(']');
}

fn push_blocks(out: &mut String, name: &str, blocks: &[Mat], last: bool) {
    writeln!(out, "  \"{name}\": [").unwrap();
    for (i, m) in blocks.iter().enumerate() {
        out.push_str("    ");
        push_matrix(out, m);
        out.push_str(if i + 1 < blocks.len() { ",\n" } else { "\n" });
    }
    out.push_str(if last { "  ]\n" } else { "  ],\n" });
}

pub fn model_to_string(m: &MjlsModel) -> String {
    let mut out = String::new();
    write!(
        out,
        "{{\n  \"format\": \"{FORMAT}\",\n  \"n_s\": {},\n  \"d\": {},\n  \"k\": {},\n",
        m.n_s, m.d, m.k
    )
    .unwrap();
    push_blocks(&mut out, "A", &m.a, false);
    push_blocks(&mut out, "B", &m.b, false);
    push_blocks(&mut out, "Q", &m.q, false);
    push_blocks(&mut out, "R", &m.r, false);
    out.push_str("  \"trans\": ");
    push_matrix(&mut out, &m.trans);
    out.push_str(",\n  \"rho\": [");
    for (i, &v) in m.rho.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        push_number(&mut out, v);
    }
    out.push_str("],\n  \"sigma0\": ");
    push_matrix(&mut out, &m.sigma0);
    out.push_str("\n}\n");
    out
}

pub fn policy_to_string(p: &Policy) -> String {
    let mut out = format!("{{\n  \"format\": \"{FORMAT}\",\n");
    push_blocks(&mut out, "K", &p.gains, true);
    out.push_str("}\n");
    out
}

pub fn save_model(m: &MjlsModel, path: &Path) -> Result<(), LoadError> {
    write(path, &model_to_string(m))
}

pub fn save_policy(p: &Policy, path: &Path) -> Result<(), LoadError> {
    write(path, &policy_to_string(p))
}
