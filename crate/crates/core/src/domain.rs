//! Value types shared by every module, their validation, and the CSV row
//! contracts used for persistence and for message payloads.
//!
//! All types here are plain immutable values. Floating point columns are
//! rendered with the shortest decimal representation that parses back to
//! the identical `f64`, so every row round-trips bit-exactly.

use std::collections::HashSet;
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use thiserror::Error;

/// Errors raised while building domain values or parsing their text forms.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("knob `{name}`: {reason}")]
    InvalidKnob { name: String, reason: String },
    #[error("invalid range for knob `{0}`: start, stop and step must be finite with step > 0")]
    InvalidRange(String),
    #[error("description line {line}: {reason}")]
    Description { line: usize, reason: String },
    #[error("custom restriction predicates cannot be serialized")]
    OpaqueRestriction,
}

/// A malformed CSV line. Columns are 1-based.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CsvError {
    #[error("column {column}: expected {expected} columns, found {found}")]
    Arity {
        column: usize,
        expected: usize,
        found: usize,
    },
    #[error("column {column}: cannot parse `{text}` as a number")]
    Number { column: usize, text: String },
    #[error("column {column}: non-finite value")]
    NonFinite { column: usize },
    #[error("column {column}: empty identifier")]
    EmptyIdentifier { column: usize },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
}

/// Returns true when `s` is usable as a name, a topic segment and a CSV cell.
pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.')
}

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }
    };
}

real_vector!(
    /// One value per knob, position-aligned with the description's knob list.
    KnobConfig
);
real_vector!(
    /// One value per declared input feature. May be empty.
    FeatureVector
);
real_vector!(
    /// One value per declared EFP.
    EfpVector
);

/// Hashable identity of a configuration (bit patterns, with `-0.0` folded
/// onto `0.0`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConfigKey(Vec<u64>);

impl KnobConfig {
    pub fn key(&self) -> ConfigKey {
        ConfigKey(
            self.0
                .iter()
                .map(|v| if *v == 0.0 { 0u64 } else { v.to_bits() })
                .collect(),
        )
    }

    /// Lexicographic comparison on the knob values.
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

/// A software knob with its discrete admissible values.
#[derive(Debug, Clone, PartialEq)]
pub struct KnobDomain {
    pub name: String,
    pub values: Vec<f64>,
}

impl KnobDomain {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self, DomainError> {
        let knob = Self {
            name: name.into(),
            values,
        };
        if let Some(reason) = knob.defect() {
            return Err(DomainError::InvalidKnob {
                name: knob.name,
                reason,
            });
        }
        Ok(knob)
    }

    /// Arithmetic range `start, start + step, ...` up to and including `stop`
    /// (with a half-step tolerance on the last value).
    pub fn range(
        name: impl Into<String>,
        start: f64,
        stop: f64,
        step: f64,
    ) -> Result<Self, DomainError> {
        let name = name.into();
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start
        {
            return Err(DomainError::InvalidRange(name));
        }
        let count = ((stop - start) / step + 0.5).floor() as usize + 1;
        let values = (0..count).map(|i| start + step * i as f64).collect();
        Self::new(name, values)
    }

    fn defect(&self) -> Option<String> {
        if self.values.is_empty() {
            return Some("domain is empty".into());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Some("domain has non-finite values".into());
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Some("domain values must be strictly increasing".into());
        }
        None
    }

    pub fn contains(&self, value: f64) -> bool {
        let (_, distance) = self.snap(value);
        distance == 0.0
    }

    /// Nearest admissible value and its distance; ties go to the lower value.
    pub fn snap(&self, value: f64) -> (f64, f64) {
        let mut best = (self.values[0], (self.values[0] - value).abs());
        for &v in &self.values[1..] {
            let d = (v - value).abs();
            if d < best.1 {
                best = (v, d);
            }
        }
        best
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Min-max normalization onto `[0, 1]`; single-value domains map to 0.
    pub fn normalize(&self, value: f64) -> f64 {
        let span = self.max() - self.min();
        if span > 0.0 {
            (value - self.min()) / span
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, unit: f64) -> f64 {
        self.min() + unit * (self.max() - self.min())
    }
}

/// Comparison operator used by restrictions and by client constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    LessEq,
    GreaterEq,
}

impl Comparator {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::LessEq => lhs <= rhs,
            Comparator::GreaterEq => lhs >= rhs,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Comparator::LessEq => "le",
            Comparator::GreaterEq => "ge",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        match token {
            "le" => Some(Comparator::LessEq),
            "ge" => Some(Comparator::GreaterEq),
            _ => None,
        }
    }
}

/// `Σ coefficients[i] · knob[i]  (≤ | ≥)  bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coefficients: Vec<f64>,
    pub comparator: Comparator,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn holds(&self, values: &[f64]) -> bool {
        let lhs: f64 = self
            .coefficients
            .iter()
            .zip(values)
            .map(|(c, v)| c * v)
            .sum();
        self.comparator.holds(lhs, self.bound)
    }
}

pub type KnobPredicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Predicate removing invalid configurations from the full factorial.
#[derive(Clone)]
pub enum Restriction {
    /// Conjunction of linear inequalities; serializable.
    Linear(Vec<LinearConstraint>),
    /// Arbitrary in-process predicate; cannot travel over the wire.
    Custom(KnobPredicate),
}

impl Restriction {
    pub fn custom(predicate: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        Restriction::Custom(Arc::new(predicate))
    }

    pub fn allows(&self, values: &[f64]) -> bool {
        match self {
            Restriction::Linear(constraints) => constraints.iter().all(|c| c.holds(values)),
            Restriction::Custom(predicate) => predicate(values),
        }
    }
}

impl fmt::Debug for Restriction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Restriction::Linear(c) => f.debug_tuple("Linear").field(c).finish(),
            Restriction::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for Restriction {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Restriction::Linear(a), Restriction::Linear(b)) => a == b,
            (Restriction::Custom(a), Restriction::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoeParams {
    /// Configurations explored per design batch.
    pub n: usize,
    /// Correlation threshold distance, on min-max normalized knob values.
    pub epsilon: f64,
    /// Evaluations requested per configuration.
    pub repetitions: u32,
    pub restriction: Option<Restriction>,
}

impl Default for DoeParams {
    fn default() -> Self {
        Self {
            n: 40,
            epsilon: 0.2,
            repetitions: 1,
            restriction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnParams {
    /// Minimum signed R² for eligibility.
    pub eps_r: f64,
    /// Maximum adjusted MAE for eligibility.
    pub eps_m: f64,
    /// Exploration rounds before a forced selection; `-1` means no cap.
    pub max_iterations: i64,
    pub k_folds: usize,
    /// Validation-set ratio.
    pub v_f: f64,
    pub rng_seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            eps_r: 0.5,
            eps_m: 0.1,
            max_iterations: -1,
            k_folds: 5,
            v_f: 0.2,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMethod {
    KMeans,
    Dbscan,
    Manual,
    None,
}

impl ClusterMethod {
    fn token(self) -> &'static str {
        match self {
            ClusterMethod::KMeans => "kmeans",
            ClusterMethod::Dbscan => "dbscan",
            ClusterMethod::Manual => "manual",
            ClusterMethod::None => "none",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "kmeans" => Some(ClusterMethod::KMeans),
            "dbscan" => Some(ClusterMethod::Dbscan),
            "manual" => Some(ClusterMethod::Manual),
            "none" => Some(ClusterMethod::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub method: ClusterMethod,
    /// Cluster count for k-means.
    pub k: usize,
    /// Neighborhood radius for DBSCAN, on normalized features.
    pub eps_dist: f64,
    pub min_pts: usize,
    pub manual_centroids: Option<Vec<FeatureVector>>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            method: ClusterMethod::KMeans,
            k: 5,
            eps_dist: 0.1,
            min_pts: 4,
            manual_centroids: None,
        }
    }
}

/// Everything the server needs to know about an application.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplicationDescription {
    pub app_name: String,
    pub knobs: Vec<KnobDomain>,
    pub efps: Vec<String>,
    pub features: Vec<String>,
    pub doe_params: DoeParams,
    pub learn_params: LearnParams,
    pub cluster_params: ClusterParams,
}

impl ApplicationDescription {
    pub fn new(
        app_name: impl Into<String>,
        knobs: Vec<KnobDomain>,
        efps: Vec<String>,
        features: Vec<String>,
    ) -> Self {
        Self {
            app_name: app_name.into(),
            knobs,
            efps,
            features,
            doe_params: DoeParams::default(),
            learn_params: LearnParams::default(),
            cluster_params: ClusterParams::default(),
        }
    }

    pub fn layout(&self) -> RowLayout {
        RowLayout {
            knobs: self.knobs.len(),
            features: self.features.len(),
            efps: self.efps.len(),
        }
    }

    /// Knob names followed by feature names: the model predictor columns.
    pub fn predictor_names(&self) -> Vec<String> {
        self.knobs
            .iter()
            .map(|k| k.name.clone())
            .chain(self.features.iter().cloned())
            .collect()
    }

    pub fn config_is_valid(&self, config: &KnobConfig) -> bool {
        config.len() == self.knobs.len()
            && config.iter().zip(&self.knobs).all(|(v, k)| k.contains(*v))
    }

    pub fn efp_index(&self, name: &str) -> Option<usize> {
        self.efps.iter().position(|e| e == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub client_id: String,
    pub config: KnobConfig,
    pub features: FeatureVector,
    pub metrics: EfpVector,
    /// Client-local milliseconds.
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub config: KnobConfig,
    pub expected: EfpVector,
    pub features: FeatureVector,
}

/// Selected model family and its validation scores for one EFP.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTag {
    pub efp: String,
    pub family: String,
    pub signed_r2: f64,
    pub mae_adj: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    pub ops: Vec<OperatingPoint>,
    pub centroids: Vec<FeatureVector>,
    pub model_tags: Vec<ModelTag>,
}

/// One invariant violation found by [`validate_description`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Checks every invariant of a description and returns all violations.
pub fn validate_description(desc: &ApplicationDescription) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |path: String, message: &str| {
        out.push(Violation {
            path,
            message: message.to_string(),
        })
    };

    if desc.app_name.is_empty() {
        push("app_name".into(), "app_name must be non-empty");
    } else if !is_identifier(&desc.app_name) {
        push("app_name".into(), "app_name must be an identifier");
    }
    if desc.knobs.is_empty() {
        push("knobs".into(), "at least one knob is required");
    }
    if desc.efps.is_empty() {
        push("efps".into(), "at least one EFP is required");
    }

    let mut seen = HashSet::new();
    for (i, knob) in desc.knobs.iter().enumerate() {
        let path = format!("knobs[{i}]");
        if !is_identifier(&knob.name) {
            push(format!("{path}.name"), "knob name must be an identifier");
        }
        if !seen.insert(knob.name.as_str()) {
            push(format!("{path}.name"), "duplicate knob name");
        }
        if let Some(reason) = knob.defect() {
            push(format!("{path}.values"), &reason);
        }
    }
    for (list, label, dup) in [
        (&desc.efps, "efps", "duplicate EFP name"),
        (&desc.features, "features", "duplicate feature name"),
    ] {
        let mut seen = HashSet::new();
        for (i, name) in list.iter().enumerate() {
            if !is_identifier(name) {
                push(format!("{label}[{i}]"), "name must be an identifier");
            }
            if !seen.insert(name.as_str()) {
                push(format!("{label}[{i}]"), dup);
            }
        }
    }

    let doe = &desc.doe_params;
    if doe.n < 2 {
        push("doe_params.n".into(), "n >= 2");
    }
    if !(doe.epsilon > 0.0 && doe.epsilon.is_finite()) {
        push("doe_params.epsilon".into(), "epsilon > 0");
    }
    if doe.repetitions < 1 {
        push("doe_params.repetitions".into(), "repetitions >= 1");
    }
    if let Some(Restriction::Linear(constraints)) = &doe.restriction {
        for (i, c) in constraints.iter().enumerate() {
            if c.coefficients.len() != desc.knobs.len() {
                push(
                    format!("doe_params.restriction[{i}]"),
                    "one coefficient per knob is required",
                );
            }
            if !c.bound.is_finite() || c.coefficients.iter().any(|v| !v.is_finite()) {
                push(format!("doe_params.restriction[{i}]"), "non-finite constraint");
            }
        }
    }

    let learn = &desc.learn_params;
    if !(0.0..1.0).contains(&learn.v_f) {
        push("learn_params.v_f".into(), "0 <= v_f < 1");
    }
    if learn.k_folds < 2 {
        push("learn_params.k_folds".into(), "k_folds >= 2");
    }
    if !(learn.eps_m > 0.0) {
        push("learn_params.eps_m".into(), "eps_m > 0");
    }
    if learn.max_iterations == 0 || learn.max_iterations < -1 {
        push(
            "learn_params.max_iterations".into(),
            "max_iterations is -1 or >= 1",
        );
    }

    let cluster = &desc.cluster_params;
    if cluster.k < 1 {
        push("cluster_params.k".into(), "k >= 1");
    }
    if !(cluster.eps_dist > 0.0) {
        push("cluster_params.eps_dist".into(), "eps_dist > 0");
    }
    if cluster.method == ClusterMethod::Manual {
        match &cluster.manual_centroids {
            Some(c) if !c.is_empty() => {
                if c.iter().any(|v| v.len() != desc.features.len() || !v.is_finite()) {
                    push(
                        "cluster_params.manual_centroids".into(),
                        "centroid dimension must equal the feature count",
                    );
                }
            }
            _ => push(
                "cluster_params.manual_centroids".into(),
                "manual clustering needs at least one centroid",
            ),
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Column counts of a CSV row, taken from a description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLayout {
    pub knobs: usize,
    pub features: usize,
    pub efps: usize,
}

/// Shortest decimal rendering that parses back to the same `f64`.
pub fn format_real(value: f64) -> String {
    format!("{value}")
}

fn parse_real(text: &str, column: usize) -> Result<f64, CsvError> {
    let v: f64 = text.trim().parse().map_err(|_| CsvError::Number {
        column,
        text: text.to_string(),
    })?;
    if !v.is_finite() {
        return Err(CsvError::NonFinite { column });
    }
    Ok(v)
}

fn split_exact(line: &str, expected: usize) -> Result<Vec<&str>, CsvError> {
    let cells: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
    if cells.len() != expected {
        let column = if cells.len() < expected {
            cells.len() + 1
        } else {
            expected + 1
        };
        return Err(CsvError::Arity {
            column,
            expected,
            found: cells.len(),
        });
    }
    Ok(cells)
}

fn parse_reals(cells: &[&str], first_column: usize) -> Result<Vec<f64>, CsvError> {
    cells
        .iter()
        .enumerate()
        .map(|(i, c)| parse_real(c, first_column + i))
        .collect()
}

fn join_reals(out: &mut String, values: &[f64]) {
    for v in values {
        out.push(',');
        out.push_str(&format_real(*v));
    }
}

/// A record with a fixed CSV row layout.
pub trait CsvRecord: Sized {
    fn columns(layout: &RowLayout) -> usize;
    fn encode_row(&self) -> String;
    fn decode_row(line: &str, layout: &RowLayout) -> Result<Self, CsvError>;
}

/// `client_id, knobs..., features..., efps..., timestamp`.
impl CsvRecord for Observation {
    fn columns(l: &RowLayout) -> usize {
        l.knobs + l.features + l.efps + 2
    }

    fn encode_row(&self) -> String {
        let mut out = self.client_id.clone();
        join_reals(&mut out, &self.config);
        join_reals(&mut out, &self.features);
        join_reals(&mut out, &self.metrics);
        out.push(',');
        out.push_str(&self.timestamp.to_string());
        out
    }

    fn decode_row(line: &str, l: &RowLayout) -> Result<Self, CsvError> {
        let cells = split_exact(line, Self::columns(l))?;
        if cells[0].is_empty() {
            return Err(CsvError::EmptyIdentifier { column: 1 });
        }
        let a = 1 + l.knobs;
        let b = a + l.features;
        let c = b + l.efps;
        let ts_col = c + 1;
        let timestamp = cells[c].trim().parse().map_err(|_| CsvError::Number {
            column: ts_col,
            text: cells[c].to_string(),
        })?;
        Ok(Observation {
            client_id: cells[0].to_string(),
            config: KnobConfig(parse_reals(&cells[1..a], 2)?),
            features: FeatureVector(parse_reals(&cells[a..b], a + 1)?),
            metrics: EfpVector(parse_reals(&cells[b..c], b + 1)?),
            timestamp,
        })
    }
}

/// `knobs..., features..., efps...`.
impl CsvRecord for OperatingPoint {
    fn columns(l: &RowLayout) -> usize {
        l.knobs + l.features + l.efps
    }

    fn encode_row(&self) -> String {
        let mut out = String::new();
        join_reals(&mut out, &self.config);
        join_reals(&mut out, &self.features);
        join_reals(&mut out, &self.expected);
        out.remove(0);
        out
    }

    fn decode_row(line: &str, l: &RowLayout) -> Result<Self, CsvError> {
        let cells = split_exact(line, Self::columns(l))?;
        let values = parse_reals(&cells, 1)?;
        let (config, rest) = values.split_at(l.knobs);
        let (features, expected) = rest.split_at(l.features);
        Ok(OperatingPoint {
            config: KnobConfig(config.to_vec()),
            features: FeatureVector(features.to_vec()),
            expected: EfpVector(expected.to_vec()),
        })
    }
}

/// One design entry: a configuration and its outstanding evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct DoeRow {
    pub config: KnobConfig,
    pub remaining_repetitions: u32,
}

/// `knobs..., remaining_repetitions`.
impl CsvRecord for DoeRow {
    fn columns(l: &RowLayout) -> usize {
        l.knobs + 1
    }

    fn encode_row(&self) -> String {
        let mut out = String::new();
        join_reals(&mut out, &self.config);
        out.push(',');
        out.push_str(&self.remaining_repetitions.to_string());
        out.remove(0);
        out
    }

    fn decode_row(line: &str, l: &RowLayout) -> Result<Self, CsvError> {
        let cells = split_exact(line, Self::columns(l))?;
        let last = cells[l.knobs];
        Ok(DoeRow {
            config: KnobConfig(parse_reals(&cells[..l.knobs], 1)?),
            remaining_repetitions: last.trim().parse().map_err(|_| CsvError::Number {
                column: l.knobs + 1,
                text: last.to_string(),
            })?,
        })
    }
}

/// Centroid rows of `clusters.csv`: one column per feature.
impl CsvRecord for FeatureVector {
    fn columns(l: &RowLayout) -> usize {
        l.features
    }

    fn encode_row(&self) -> String {
        self.0.iter().map(|v| format_real(*v)).collect::<Vec<_>>().join(",")
    }

    fn decode_row(line: &str, l: &RowLayout) -> Result<Self, CsvError> {
        if l.features == 0 {
            return if line.trim().is_empty() {
                Ok(FeatureVector::default())
            } else {
                Err(CsvError::Arity {
                    column: 1,
                    expected: 0,
                    found: line.split(',').count(),
                })
            };
        }
        let cells = split_exact(line, l.features)?;
        Ok(FeatureVector(parse_reals(&cells, 1)?))
    }
}

pub fn encode_csv_row<R: CsvRecord>(record: &R) -> String {
    record.encode_row()
}

pub fn decode_csv_row<R: CsvRecord>(line: &str, layout: &RowLayout) -> Result<R, CsvError> {
    R::decode_row(line, layout)
}

pub fn observation_header(desc: &ApplicationDescription) -> String {
    let mut cols = vec!["client_id".to_string()];
    cols.extend(desc.predictor_names());
    cols.extend(desc.efps.iter().cloned());
    cols.push("timestamp".into());
    cols.join(",")
}

pub fn knowledge_header(desc: &ApplicationDescription) -> String {
    let mut cols = desc.predictor_names();
    cols.extend(desc.efps.iter().cloned());
    cols.join(",")
}

pub fn doe_header(desc: &ApplicationDescription) -> String {
    let mut cols: Vec<String> = desc.knobs.iter().map(|k| k.name.clone()).collect();
    cols.push("remaining_repetitions".into());
    cols.join(",")
}

pub fn clusters_header(desc: &ApplicationDescription) -> String {
    desc.features.join(",")
}

/// Line-oriented text form of a description, used by the `info_reply`
/// payload and by the server's `description.txt`.
///
/// ```text
/// app,<name>
/// knob,<name>,<v1>,<v2>,...
/// efp,<name>
/// feature,<name>
/// doe,<n>,<epsilon>,<repetitions>
/// restrict,<le|ge>,<bound>,<c1>,...,<cK>
/// learn,<eps_r>,<eps_m>,<max_iterations>,<k_folds>,<v_f>,<rng_seed>
/// cluster,<method>,<k>,<eps_dist>,<min_pts>
/// centroid,<f1>,...,<fF>
/// ```
pub fn encode_description(desc: &ApplicationDescription) -> Result<String, DomainError> {
    let mut lines = vec![format!("app,{}", desc.app_name)];
    for k in &desc.knobs {
        let mut line = format!("knob,{}", k.name);
        join_reals(&mut line, &k.values);
        lines.push(line);
    }
    lines.extend(desc.efps.iter().map(|e| format!("efp,{e}")));
    lines.extend(desc.features.iter().map(|f| format!("feature,{f}")));
    let d = &desc.doe_params;
    lines.push(format!(
        "doe,{},{},{}",
        d.n,
        format_real(d.epsilon),
        d.repetitions
    ));
    match &d.restriction {
        None => {}
        Some(Restriction::Custom(_)) => return Err(DomainError::OpaqueRestriction),
        Some(Restriction::Linear(constraints)) => {
            for c in constraints {
                let mut line = format!("restrict,{},{}", c.comparator.token(), format_real(c.bound));
                join_reals(&mut line, &c.coefficients);
                lines.push(line);
            }
        }
    }
    let l = &desc.learn_params;
    lines.push(format!(
        "learn,{},{},{},{},{},{}",
        format_real(l.eps_r),
        format_real(l.eps_m),
        l.max_iterations,
        l.k_folds,
        format_real(l.v_f),
        l.rng_seed
    ));
    let c = &desc.cluster_params;
    lines.push(format!(
        "cluster,{},{},{},{}",
        c.method.token(),
        c.k,
        format_real(c.eps_dist),
        c.min_pts
    ));
    for centroid in c.manual_centroids.iter().flatten() {
        let mut line = "centroid".to_string();
        join_reals(&mut line, centroid);
        lines.push(line);
    }
    Ok(lines.join("\n"))
}

pub fn decode_description(text: &str) -> Result<ApplicationDescription, DomainError> {
    let mut desc = ApplicationDescription::new(String::new(), vec![], vec![], vec![]);
    let mut constraints = Vec::new();
    let mut centroids = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |reason: &str| DomainError::Description {
            line: line_no,
            reason: reason.to_string(),
        };
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let reals = |from: usize| -> Result<Vec<f64>, DomainError> {
            cells[from..]
                .iter()
                .map(|c| c.trim().parse::<f64>().map_err(|_| err("bad number")))
                .collect()
        };
        let int = |idx: usize| -> Result<i64, DomainError> {
            cells
                .get(idx)
                .and_then(|c| c.trim().parse::<i64>().ok())
                .ok_or_else(|| err("bad integer"))
        };
        let want = |n: usize| -> Result<(), DomainError> {
            if cells.len() == n {
                Ok(())
            } else {
                Err(err(&format!("expected {n} fields")))
            }
        };
        match cells[0] {
            "app" => {
                want(2)?;
                desc.app_name = cells[1].to_string();
            }
            "knob" => {
                if cells.len() < 3 {
                    return Err(err("knob needs a name and values"));
                }
                desc.knobs.push(KnobDomain {
                    name: cells[1].to_string(),
                    values: reals(2)?,
                });
            }
            "efp" => {
                want(2)?;
                desc.efps.push(cells[1].to_string());
            }
            "feature" => {
                want(2)?;
                desc.features.push(cells[1].to_string());
            }
            "doe" => {
                want(4)?;
                let eps = reals(2)?[0];
                desc.doe_params.n = int(1)?.max(0) as usize;
                desc.doe_params.epsilon = eps;
                desc.doe_params.repetitions = int(3)?.max(0) as u32;
            }
            "restrict" => {
                if cells.len() < 4 {
                    return Err(err("restrict needs comparator, bound and coefficients"));
                }
                let comparator = Comparator::parse(cells[1]).ok_or_else(|| err("bad comparator"))?;
                let values = reals(2)?;
                constraints.push(LinearConstraint {
                    comparator,
                    bound: values[0],
                    coefficients: values[1..].to_vec(),
                });
            }
            "learn" => {
                want(7)?;
                let r = |idx: usize| -> Result<f64, DomainError> {
                    cells[idx].trim().parse().map_err(|_| err("bad number"))
                };
                desc.learn_params = LearnParams {
                    eps_r: r(1)?,
                    eps_m: r(2)?,
                    max_iterations: int(3)?,
                    k_folds: int(4)?.max(0) as usize,
                    v_f: r(5)?,
                    rng_seed: cells[6].trim().parse().map_err(|_| err("bad seed"))?,
                };
            }
            "cluster" => {
                want(5)?;
                desc.cluster_params.method =
                    ClusterMethod::parse(cells[1]).ok_or_else(|| err("bad cluster method"))?;
                desc.cluster_params.k = int(2)?.max(0) as usize;
                desc.cluster_params.eps_dist = reals(3)?[0];
                desc.cluster_params.min_pts = int(4)?.max(0) as usize;
            }
            "centroid" => centroids.push(FeatureVector(reals(1)?)),
            other => return Err(err(&format!("unknown record `{other}`"))),
        }
    }
    if !constraints.is_empty() {
        desc.doe_params.restriction = Some(Restriction::Linear(constraints));
    }
    if !centroids.is_empty() {
        desc.cluster_params.manual_centroids = Some(centroids);
    }
    Ok(desc)
}
