//! Trajectory datasets and result documents.
//!
//! Datasets are JSON documents of the form
//!
//! ```text
//! { "dimension": d,
//!   "subsystems": [ { "id": 1, "trace": [[x1(0), .., xd(0)], [x1(1), ..], ..] }, .. ] }
//! ```
//!
//! with one row per time step. They carry no model coefficients. Results and
//! certificate sets use the layouts of [`DwellTimeResult`] and
//! [`CertificateSet`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dwell;
use crate::linalg::Matrix;

/// Relative asymmetry accepted for supplied `P` matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

const DIAGONAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{}: field `{field}`: {message}", subsystem_label(*.subsystem))]
    Validation { subsystem: Option<usize>, field: String, message: String },
}

fn subsystem_label(id: Option<usize>) -> String {
    match id {
        Some(id) => format!("subsystem {id}"),
        None => "document".to_string(),
    }
}

impl DataError {
    pub(crate) fn validation(subsystem: Option<usize>, field: &str, message: impl Into<String>) -> Self {
        DataError::Validation { subsystem, field: field.to_string(), message: message.into() }
    }

    /// Parse error at the location reported by the JSON reader.
    pub fn from_json(e: serde_json::Error) -> Self {
        DataError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

/// One finite state trajectory `x(0), .., x(L)` of a single subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    states: Vec<Vec<f64>>,
}

impl Trace {
    /// Validates dimension consistency, finiteness, and `L ≥ d`.
    pub fn new(states: Vec<Vec<f64>>) -> Result<Self, DataError> {
        Self::validated(states, None)
    }

    fn validated(states: Vec<Vec<f64>>, id: Option<usize>) -> Result<Self, DataError> {
        let d = match states.first() {
            Some(x) if !x.is_empty() => x.len(),
            _ => return Err(DataError::validation(id, "trace", "trace must contain vectors of dimension >= 1")),
        };
        for (t, x) in states.iter().enumerate() {
            if x.len() != d {
                return Err(DataError::validation(
                    id,
                    "trace",
                    format!("state at t = {t} has dimension {}, expected {d}", x.len()),
                ));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(DataError::validation(id, "trace", format!("state at t = {t} is not finite")));
            }
        }
        if states.len() < d + 1 {
            return Err(DataError::validation(
                id,
                "trace",
                format!("trace has {} states but at least d + 1 = {} are needed (L >= d)", states.len(), d + 1),
            ));
        }
        Ok(Trace { states })
    }

    pub fn dimension(&self) -> usize {
        self.states[0].len()
    }

    /// `L`, the index of the last state.
    pub fn last_index(&self) -> usize {
        self.states.len() - 1
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub id: usize,
    pub trace: Trace,
}

/// The subsystems data: one pure trace per subsystem, ids `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemDataset {
    dimension: usize,
    subsystems: Vec<Subsystem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    dimension: usize,
    subsystems: Vec<SubsystemDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubsystemDoc {
    id: usize,
    trace: Vec<Vec<f64>>,
}

fn check_ids(ids: &[usize], field: &str) -> Result<(), DataError> {
    if ids.is_empty() {
        return Err(DataError::validation(None, field, "at least one subsystem is required"));
    }
    let mut seen = vec![false; ids.len()];
    for &id in ids {
        if id == 0 || id > ids.len() {
            return Err(DataError::validation(
                Some(id),
                "id",
                format!("ids must be exactly 1..={} with no gaps", ids.len()),
            ));
        }
        if std::mem::replace(&mut seen[id - 1], true) {
            return Err(DataError::validation(Some(id), "id", "duplicate id"));
        }
    }
    Ok(())
}

impl SubsystemDataset {
    /// Builds a dataset from traces listed in id order (ids become `1..=N`).
    pub fn from_traces(traces: Vec<Trace>) -> Result<Self, DataError> {
        let dimension = traces
            .first()
            .map(Trace::dimension)
            .ok_or_else(|| DataError::validation(None, "subsystems", "at least one subsystem is required"))?;
        let subsystems = traces.into_iter().enumerate().map(|(k, trace)| Subsystem { id: k + 1, trace }).collect();
        Self::new(dimension, subsystems)
    }

    pub fn new(dimension: usize, mut subsystems: Vec<Subsystem>) -> Result<Self, DataError> {
        if dimension == 0 {
            return Err(DataError::validation(None, "dimension", "dimension must be >= 1"));
        }
        check_ids(&subsystems.iter().map(|s| s.id).collect::<Vec<_>>(), "subsystems")?;
        subsystems.sort_by_key(|s| s.id);
        for s in &subsystems {
            if s.trace.dimension() != dimension {
                return Err(DataError::validation(
                    Some(s.id),
                    "trace",
                    format!("states have dimension {}, dataset dimension is {dimension}", s.trace.dimension()),
                ));
            }
        }
        Ok(SubsystemDataset { dimension, subsystems })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn to_json(&self) -> String {
        let doc = DatasetDoc {
            dimension: self.dimension,
            subsystems: self
                .subsystems
                .iter()
                .map(|s| SubsystemDoc { id: s.id, trace: s.trace.states.clone() })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("dataset serialization cannot fail")
    }
}

/// Parses and validates a dataset document.
pub fn parse_dataset(text: &str) -> Result<SubsystemDataset, DataError> {
    let doc: DatasetDoc = serde_json::from_str(text).map_err(DataError::from_json)?;
    let mut subsystems = Vec::with_capacity(doc.subsystems.len());
    for s in doc.subsystems {
        let trace = Trace::validated(s.trace, Some(s.id))?;
        if trace.dimension() != doc.dimension {
            return Err(DataError::validation(
                Some(s.id),
                "trace",
                format!("states have dimension {}, dataset dimension is {}", trace.dimension(), doc.dimension),
            ));
        }
        subsystems.push(Subsystem { id: s.id, trace });
    }
    SubsystemDataset::new(doc.dimension, subsystems)
}

/// Converts comma-separated tables (one per subsystem, one row per time step,
/// in id order) into a dataset. A non-numeric first row is taken as a header.
pub fn dataset_from_csv(tables: &[&str]) -> Result<SubsystemDataset, DataError> {
    let mut traces = Vec::with_capacity(tables.len());
    for (k, text) in tables.iter().enumerate() {
        let id = k + 1;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut states = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|e| DataError::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                column: 0,
                message: format!("subsystem {id}: {e}"),
            })?;
            let line = record.position().map_or(r + 1, |p| p.line() as usize);
            let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(row) => states.push(row),
                Err(_) if r == 0 => continue,
                Err(e) => {
                    return Err(DataError::Parse { line, column: 0, message: format!("subsystem {id}: {e}") });
                }
            }
        }
        traces.push(Trace::validated(states, Some(id))?);
    }
    if let Some(first) = traces.first() {
        let d = first.dimension();
        if let Some(k) = traces.iter().position(|t| t.dimension() != d) {
            return Err(DataError::validation(
                Some(k + 1),
                "trace",
                format!("states have dimension {}, expected {d}", traces[k].dimension()),
            ));
        }
    }
    SubsystemDataset::from_traces(traces)
}

/// A verified per-subsystem certificate as stored in the result document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub id: usize,
    #[serde(rename = "P")]
    pub p: Matrix,
    pub margin_pd: f64,
    /// Smallest eigenvalue of the data LMI residual; absent when the
    /// certificate was supplied without data to check it against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_lmi: Option<f64>,
    #[serde(rename = "T_offset", default, skip_serializing_if = "Option::is_none")]
    pub t_offset: Option<usize>,
}

/// Output of the dwell-time computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ResultDoc")]
pub struct DwellTimeResult {
    lambda_s: f64,
    epsilon: f64,
    mu: f64,
    tau: u64,
    mu_matrix: Matrix,
    certificates: Vec<CertificateRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultDoc {
    lambda_s: f64,
    epsilon: f64,
    mu: f64,
    tau: u64,
    mu_matrix: Matrix,
    certificates: Vec<CertificateRecord>,
}

impl TryFrom<ResultDoc> for DwellTimeResult {
    type Error = DataError;

    fn try_from(d: ResultDoc) -> Result<Self, DataError> {
        DwellTimeResult::new(d.lambda_s, d.epsilon, d.mu, d.tau, d.mu_matrix, d.certificates)
    }
}

impl DwellTimeResult {
    /// Validates every result invariant, including `μ = max μ_ij`, unit
    /// diagonal, `μ > 1` for distinct certificates, and the dwell-time formula.
    pub fn new(
        lambda_s: f64,
        epsilon: f64,
        mu: f64,
        tau: u64,
        mu_matrix: Matrix,
        certificates: Vec<CertificateRecord>,
    ) -> Result<Self, DataError> {
        if !(lambda_s > 0.0 && lambda_s < 1.0) {
            return Err(DataError::validation(None, "lambda_s", format!("{lambda_s} is outside ]0, 1[")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(DataError::validation(None, "epsilon", "must be a positive finite number"));
        }
        check_ids(&certificates.iter().map(|c| c.id).collect::<Vec<_>>(), "certificates")?;
        let n = certificates.len();
        if mu_matrix.rows() != n || mu_matrix.cols() != n {
            return Err(DataError::validation(
                None,
                "mu_matrix",
                format!("expected {n}x{n}, got {}x{}", mu_matrix.rows(), mu_matrix.cols()),
            ));
        }
        for i in 0..n {
            if (mu_matrix[(i, i)] - 1.0).abs() > DIAGONAL_TOL {
                return Err(DataError::validation(
                    Some(i + 1),
                    "mu_matrix",
                    format!("diagonal entry is {}, expected 1", mu_matrix[(i, i)]),
                ));
            }
        }
        let max_entry = mu_matrix.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if mu != max_entry {
            return Err(DataError::validation(
                None,
                "mu",
                format!("{mu} differs from the largest mu_matrix entry {max_entry}"),
            ));
        }
        let all_equal = certificates.windows(2).all(|w| w[0].p == w[1].p);
        if n >= 2 && mu <= 1.0 && !all_equal {
            return Err(DataError::validation(None, "mu", format!("{mu} <= 1 with {n} distinct certificates")));
        }
        let dim = certificates[0].p.rows();
        for c in &certificates {
            if !c.p.is_square() || c.p.rows() != dim {
                return Err(DataError::validation(Some(c.id), "P", format!("expected a {dim}x{dim} matrix")));
            }
        }
        let expected =
            dwell::dwell_time(mu, lambda_s, epsilon).map_err(|e| DataError::validation(None, "tau", e.to_string()))?;
        if tau != expected {
            return Err(DataError::validation(
                None,
                "tau",
                format!("{tau} but the dwell-time formula gives {expected}"),
            ));
        }
        Ok(DwellTimeResult { lambda_s, epsilon, mu, tau, mu_matrix, certificates })
    }

    pub fn lambda_s(&self) -> f64 {
        self.lambda_s
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn mu_matrix(&self) -> &Matrix {
        &self.mu_matrix
    }

    pub fn certificates(&self) -> &[CertificateRecord] {
        &self.certificates
    }
}

pub fn serialize_result(r: &DwellTimeResult) -> String {
    serde_json::to_string_pretty(r).expect("result serialization cannot fail")
}

pub fn parse_result(text: &str) -> Result<DwellTimeResult, DataError> {
    let doc: ResultDoc = serde_json::from_str(text).map_err(DataError::from_json)?;
    DwellTimeResult::try_from(doc)
}

/// Externally supplied Lyapunov matrices with their common rate.
///
/// Any result document also parses as a certificate set; extra fields are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSet {
    pub lambda_s: f64,
    pub certificates: Vec<SuppliedCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppliedCertificate {
    pub id: usize,
    #[serde(rename = "P")]
    pub p: Matrix,
}

/// Parses a certificate set, checking ids, shapes, and symmetry. Positive
/// definiteness is checked where the matrices are used.
pub fn parse_certificate_set(text: &str) -> Result<CertificateSet, DataError> {
    let mut set: CertificateSet = serde_json::from_str(text).map_err(DataError::from_json)?;
    if !(set.lambda_s > 0.0 && set.lambda_s < 1.0) {
        return Err(DataError::validation(None, "lambda_s", format!("{} is outside ]0, 1[", set.lambda_s)));
    }
    check_ids(&set.certificates.iter().map(|c| c.id).collect::<Vec<_>>(), "certificates")?;
    set.certificates.sort_by_key(|c| c.id);
    let dim = set.certificates[0].p.rows();
    for c in &set.certificates {
        if !c.p.is_square() || c.p.rows() != dim || dim == 0 {
            return Err(DataError::validation(Some(c.id), "P", format!("expected a {dim}x{dim} matrix")));
        }
        if !c.p.is_symmetric(SYMMETRY_TOL) {
            return Err(DataError::validation(
                Some(c.id),
                "P",
                format!("matrix is not symmetric (max asymmetry {:e})", c.p.max_asymmetry()),
            ));
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(dimension: usize, subs: &[(usize, Vec<Vec<f64>>)]) -> String {
        let subsystems: Vec<_> = subs.iter().map(|(id, t)| serde_json::json!({ "id": id, "trace": t })).collect();
        serde_json::json!({ "dimension": dimension, "subsystems": subsystems }).to_string()
    }

    fn nilpotent_trace() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]
    }

    #[test]
    fn parses_minimal_dataset() {
        let ds = parse_dataset(&doc(2, &[(1, nilpotent_trace())])).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.subsystems()[0].trace.last_index(), 2);
    }

    #[test]
    fn id_gap_is_rejected() {
        let err = parse_dataset(&doc(2, &[(1, nilpotent_trace()), (3, nilpotent_trace())])).unwrap_err();
        assert!(matches!(err, DataError::Validation { subsystem: Some(3), ref field, .. } if field == "id"));
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let err = parse_dataset(&doc(2, &[(1, nilpotent_trace()), (1, nilpotent_trace())])).unwrap_err();
        assert!(matches!(err, DataError::Validation { subsystem: Some(1), .. }));
    }

    #[test]
    fn short_trace_is_rejected() {
        let err = parse_dataset(&doc(2, &[(1, vec![vec![1.0, 0.0], vec![0.5, 1.0]])])).unwrap_err();
        match err {
            DataError::Validation { subsystem, field, message } => {
                assert_eq!(subsystem, Some(1));
                assert_eq!(field, "trace");
                assert!(message.contains("at least d + 1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_names_subsystem() {
        let bad = vec![vec![1.0, 0.0, 0.0]; 4];
        let err = parse_dataset(&doc(2, &[(1, nilpotent_trace()), (2, bad)])).unwrap_err();
        assert!(matches!(err, DataError::Validation { subsystem: Some(2), .. }));
    }

    #[test]
    fn ragged_trace_is_rejected() {
        let err = parse_dataset(&doc(2, &[(1, vec![vec![1.0, 0.0], vec![1.0], vec![0.0, 0.0]])])).unwrap_err();
        assert!(matches!(err, DataError::Validation { subsystem: Some(1), .. }));
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = parse_dataset("{\n \"dimension\": 2,\n \"subsystems\": [ oops ] }").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = parse_dataset(r#"{"dimension":1,"subsystems":[],"A":[[1]]}"#).unwrap_err();
        assert!(matches!(err, DataError::Parse { .. }));
    }

    #[test]
    fn csv_import_matches_json() {
        let table = "x1,x2\n1,0\n0,1\n0,0\n";
        let ds = dataset_from_csv(&[table, "1,0\n0,1\n0,0"]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.subsystems()[0].trace, Trace::new(nilpotent_trace()).unwrap());
        assert_eq!(ds.subsystems()[1].trace, ds.subsystems()[0].trace);
    }

    #[test]
    fn csv_bad_number_reports_line() {
        let err = dataset_from_csv(&["1,0\n0,x\n0,0\n"]).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }));
    }

    fn minimal_result() -> DwellTimeResult {
        DwellTimeResult::new(
            0.5,
            0.01,
            1.0,
            1,
            Matrix::identity(1),
            vec![CertificateRecord {
                id: 1,
                p: Matrix::identity(2),
                margin_pd: 1.0,
                margin_lmi: Some(0.25),
                t_offset: Some(0),
            }],
        )
        .unwrap()
    }

    #[test]
    fn minimal_result_round_trips() {
        let r = minimal_result();
        let back = parse_result(&serialize_result(&r)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn result_with_mu_not_above_one_is_refused() {
        let certs = vec![
            CertificateRecord { id: 1, p: Matrix::identity(2), margin_pd: 1.0, margin_lmi: None, t_offset: None },
            CertificateRecord {
                id: 2,
                p: Matrix::identity(2).scale(2.0),
                margin_pd: 2.0,
                margin_lmi: None,
                t_offset: None,
            },
        ];
        let err = DwellTimeResult::new(0.5, 0.01, 1.0, 1, Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap(), certs)
            .unwrap_err();
        assert!(matches!(err, DataError::Validation { ref field, .. } if field == "mu"));
    }

    #[test]
    fn result_with_wrong_tau_is_refused() {
        let err = DwellTimeResult::new(0.5, 0.01, 1.0, 3, Matrix::identity(1), minimal_result().certificates.clone())
            .unwrap_err();
        assert!(matches!(err, DataError::Validation { ref field, .. } if field == "tau"));
    }

    #[test]
    fn certificate_set_rejects_asymmetric() {
        let text = r#"{"lambda_s":0.5,"certificates":[{"id":1,"P":[[1,0.5],[0,1]]}]}"#;
        let err = parse_certificate_set(text).unwrap_err();
        assert!(matches!(err, DataError::Validation { subsystem: Some(1), .. }));
    }

    #[test]
    fn result_document_parses_as_certificate_set() {
        let set = parse_certificate_set(&serialize_result(&minimal_result())).unwrap();
        assert_eq!(set.lambda_s, 0.5);
        assert_eq!(set.certificates[0].p, Matrix::identity(2));
    }
}
