//! Operating-point lists: every admissible configuration crossed with every
//! feature centroid, each with the EFP values predicted by the selected
//! models.

use std::fmt::Write as _;

use log::warn;
use thiserror::Error;

use crate::doe::{restricted_grid, DoeError};
use crate::domain::{
    decode_csv_row, encode_csv_row, format_real, knowledge_header, ApplicationDescription,
    CsvError, EfpVector, FeatureVector, KnowledgeBase, ModelTag, OperatingPoint, RowLayout,
};
use crate::evaluate::{mae_adj, signed_r2};
use crate::models::FittedModel;

/// Largest operating-point list generated.
pub const MAX_OPS: usize = 1_000_000;
/// First line of a knowledge payload.
pub const PAYLOAD_VERSION: &str = "knobtune/knowledge/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnowledgeError {
    #[error(transparent)]
    Grid(#[from] DoeError),
    #[error("expected one model per EFP ({expected}), got {got}")]
    ModelCount { expected: usize, got: usize },
    #[error("{configs} configurations x {centroids} centroids exceeds {MAX_OPS} operating points")]
    TooLarge { configs: usize, centroids: usize },
    #[error("{dropped} of {total} operating points had non-finite predictions")]
    NonFinite { dropped: usize, total: usize },
    #[error("centroid {index} has {found} values, expected {expected}")]
    CentroidDimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("malformed knowledge payload at line {line}: {reason}")]
    Payload { line: usize, reason: String },
}

/// One operating point per (configuration, centroid), configuration-major.
/// Rows with a non-finite prediction are dropped; more than 1% of them is an
/// error.
pub fn generate_knowledge(
    desc: &ApplicationDescription,
    models: &[FittedModel],
    centroids: &[FeatureVector],
) -> Result<KnowledgeBase, KnowledgeError> {
    if models.len() != desc.efps.len() {
        return Err(KnowledgeError::ModelCount {
            expected: desc.efps.len(),
            got: models.len(),
        });
    }
    if let Some(index) = centroids.iter().position(|c| c.len() != desc.features.len()) {
        return Err(KnowledgeError::CentroidDimension {
            index,
            expected: desc.features.len(),
            found: centroids[index].len(),
        });
    }
    let grid = restricted_grid(desc, MAX_OPS)?;
    let total = grid.len() * centroids.len();
    if total > MAX_OPS {
        return Err(KnowledgeError::TooLarge {
            configs: grid.len(),
            centroids: centroids.len(),
        });
    }
    let mut ops = Vec::with_capacity(total);
    let mut dropped = 0;
    let mut x = Vec::with_capacity(desc.knobs.len() + desc.features.len());
    for config in &grid {
        for centroid in centroids {
            x.clear();
            x.extend_from_slice(config);
            x.extend_from_slice(centroid);
            let expected: Vec<f64> = models.iter().map(|m| m.predict(&x)).collect();
            if expected.iter().all(|v| v.is_finite()) {
                ops.push(OperatingPoint {
                    config: config.clone(),
                    expected: EfpVector::new(expected),
                    features: centroid.clone(),
                });
            } else {
                dropped += 1;
            }
        }
    }
    if dropped > 0 {
        if dropped * 100 > total {
            return Err(KnowledgeError::NonFinite { dropped, total });
        }
        warn!("dropped {dropped} of {total} operating points with non-finite predictions");
    }
    Ok(KnowledgeBase {
        ops,
        centroids: centroids.to_vec(),
        model_tags: desc
            .efps
            .iter()
            .zip(models)
            .map(|(efp, m)| ModelTag {
                efp: efp.clone(),
                family: m.kind.to_string(),
                signed_r2: f64::NAN,
                mae_adj: f64::NAN,
            })
            .collect(),
    })
}

/// `(mae_adj, signed_r2)` per EFP of the knowledge against a ground truth
/// evaluated at every operating point.
pub fn knowledge_error(
    kb: &KnowledgeBase,
    oracle: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> Vec<(f64, f64)> {
    let Some(first) = kb.ops.first() else {
        return vec![];
    };
    let efps = first.expected.len();
    let truth: Vec<Vec<f64>> = kb.ops.iter().map(|op| oracle(&op.config, &op.features)).collect();
    (0..efps)
        .map(|e| {
            let t: Vec<f64> = truth.iter().map(|v| v[e]).collect();
            let p: Vec<f64> = kb.ops.iter().map(|op| op.expected[e]).collect();
            (mae_adj(&t, &p).value, signed_r2(&t, &p))
        })
        .collect()
}

/// `knowledge.csv`: header plus one row per operating point.
pub fn knowledge_csv(desc: &ApplicationDescription, kb: &KnowledgeBase) -> String {
    let mut out = knowledge_header(desc);
    out.push('\n');
    for op in &kb.ops {
        out.push_str(&encode_csv_row(op));
        out.push('\n');
    }
    out
}

/// Broadcast form of a knowledge base:
///
/// ```text
/// knobtune/knowledge/1
/// #centroid,<f1>,...        one per centroid
/// #tag,<efp>,<family>,<signed_r2>,<mae_adj>
/// <knowledge.csv header>
/// <one row per operating point>
/// ```
pub fn encode_payload(desc: &ApplicationDescription, kb: &KnowledgeBase) -> String {
    let mut out = String::from(PAYLOAD_VERSION);
    out.push('\n');
    for c in &kb.centroids {
        out.push_str("#centroid");
        for v in c.iter() {
            let _ = write!(out, ",{}", format_real(*v));
        }
        out.push('\n');
    }
    for t in &kb.model_tags {
        let _ = writeln!(
            out,
            "#tag,{},{},{},{}",
            t.efp,
            t.family,
            format_real(t.signed_r2),
            format_real(t.mae_adj)
        );
    }
    out.push_str(&knowledge_csv(desc, kb));
    out
}

pub fn decode_payload(text: &str, layout: &RowLayout) -> Result<KnowledgeBase, KnowledgeError> {
    let bad = |line: usize, reason: String| KnowledgeError::Payload { line, reason };
    let csv = |line: usize, e: CsvError| bad(line, e.to_string());
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, PAYLOAD_VERSION)) => {}
        other => {
            return Err(bad(1, format!("expected {PAYLOAD_VERSION}, got {:?}", other.map(|o| o.1))))
        }
    }
    let mut kb = KnowledgeBase::default();
    let mut header_seen = false;
    for (i, line) in lines {
        let n = i + 1;
        if let Some(rest) = line.strip_prefix("#centroid") {
            let rest = rest.strip_prefix(',').unwrap_or("");
            kb.centroids.push(decode_csv_row(rest, layout).map_err(|e| csv(n, e))?);
        } else if let Some(rest) = line.strip_prefix("#tag,") {
            let cells: Vec<&str> = rest.split(',').collect();
            if cells.len() != 4 {
                return Err(bad(n, "tag needs 4 fields".into()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, format!("bad number {s:?}")));
            kb.model_tags.push(ModelTag {
                efp: cells[0].into(),
                family: cells[1].into(),
                signed_r2: num(cells[2])?,
                mae_adj: num(cells[3])?,
            });
        } else if !header_seen {
            header_seen = true;
        } else if !line.is_empty() {
            kb.ops.push(decode_csv_row(line, layout).map_err(|e| csv(n, e))?);
        }
    }
    if !header_seen {
        return Err(bad(0, "missing column header".into()));
    }
    Ok(kb)
}
