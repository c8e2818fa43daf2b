//! Validation of the candidate models for one EFP and selection of the one
//! to broadcast.
//!
//! Depending on how many distinct configurations have been observed, one of
//! three regimes applies:
//!
//! * `kfold_rotating_holdout`: `l` disjoint holdout blocks rotate over the
//!   data; inside each block's training part, k-fold cross-validation builds
//!   the ensemble inputs.
//! * `loo_with_holdout`: the first `k` configurations train leave-one-out
//!   models, the rest is a single holdout.
//! * `pure_loo`: leave-one-out over everything, no holdout, no ensembles.
//!
//! All repetitions of a configuration move together between training and
//! holdout.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{format_real, KnobConfig, LearnParams};
use crate::ensemble::{bag, cross_validate, solve_stack_weights, stack, stacking_matrix};
use crate::models::{Dataset, Family, FittedModel, ModelKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("holdout of {n} x {v_f} rounds to zero observations")]
    EmptyHoldout { n: usize, v_f: f64 },
    #[error("empty validation report")]
    EmptyReport,
    #[error("no rows to evaluate")]
    NoData,
    #[error("candidate {0} could not be fitted: {1}")]
    Fit(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    KfoldRotatingHoldout,
    LooWithHoldout,
    PureLoo,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::KfoldRotatingHoldout => "kfold_rotating_holdout",
            Regime::LooWithHoldout => "loo_with_holdout",
            Regime::PureLoo => "pure_loo",
        }
    }

    pub fn has_holdout(self) -> bool {
        self != Regime::PureLoo
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Regime for `n` distinct configurations.
pub fn choose_regime(n: usize, k: usize, v_f: f64) -> Regime {
    if n < k {
        Regime::PureLoo
    } else if (n - k) as f64 / n as f64 >= v_f {
        Regime::KfoldRotatingHoldout
    } else {
        Regime::LooWithHoldout
    }
}

/// Train/holdout index pairs: `m = round(n·v_f)` and `l = ⌊n/m⌋` contiguous
/// holdout blocks over a seeded permutation of `0..n`.
pub fn rotating_holdout_folds(
    n: usize,
    v_f: f64,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, EvalError> {
    let m = (n as f64 * v_f).round() as usize;
    if m == 0 {
        return Err(EvalError::EmptyHoldout { n, v_f });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..n / m)
        .map(|b| {
            let holdout = order[b * m..(b + 1) * m].to_vec();
            let train = order[..b * m]
                .iter()
                .chain(&order[(b + 1) * m..])
                .copied()
                .collect();
            (train, holdout)
        })
        .collect())
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let scale_a = a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let scale_b = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    // Spreads at rounding level count as constant.
    if saa.sqrt() <= 1e-12 * scale_a * n.sqrt() || sbb.sqrt() <= 1e-12 * scale_b * n.sqrt() {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `sign(r)·r²` of the Pearson correlation; 0 when either side is constant.
pub fn signed_r2(observed: &[f64], predicted: &[f64]) -> f64 {
    match pearson(observed, predicted) {
        Some(r) => r.signum() * r * r,
        None => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeAdj {
    pub value: f64,
    /// The observed range was zero, so `value` is the raw MAE.
    pub zero_range: bool,
}

/// Mean absolute error over the observed range.
pub fn mae_adj(observed: &[f64], predicted: &[f64]) -> MaeAdj {
    let mae = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).abs())
        .sum::<f64>()
        / observed.len() as f64;
    let lo = observed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        MaeAdj {
            value: mae / (hi - lo),
            zero_range: false,
        }
    } else {
        MaeAdj {
            value: mae,
            zero_range: true,
        }
    }
}

/// Score of one candidate model.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub kind: ModelKind,
    pub signed_r2: f64,
    pub mae_adj: f64,
    pub zero_range: bool,
    /// `None` when scored, else why the candidate failed.
    pub failure: Option<String>,
}

impl CandidateScore {
    pub fn ok(&self) -> bool {
        self.failure.is_none() && self.signed_r2.is_finite() && self.mae_adj.is_finite()
    }

    fn failed(kind: ModelKind, reason: String) -> Self {
        Self {
            kind,
            signed_r2: f64::NAN,
            mae_adj: f64::NAN,
            zero_range: false,
            failure: Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub regime: Regime,
    pub candidates: Vec<CandidateScore>,
}

impl ValidationReport {
    pub fn get(&self, kind: ModelKind) -> Option<&CandidateScore> {
        self.candidates.iter().find(|c| c.kind == kind)
    }

    /// `report.csv` rows: `efp, family, regime, signed_r2, mae_adj, status`.
    pub fn csv_rows(&self, efp: &str) -> Vec<String> {
        self.candidates
            .iter()
            .map(|c| {
                let status = match &c.failure {
                    None if c.zero_range => "ok_zero_range".to_string(),
                    None => "ok".to_string(),
                    Some(reason) => format!("failed: {}", reason.replace(',', ";")),
                };
                format!(
                    "{efp},{},{},{},{},{status}",
                    c.kind,
                    self.regime,
                    format_real(c.signed_r2),
                    format_real(c.mae_adj)
                )
            })
            .collect()
    }
}

pub const REPORT_HEADER: &str = "efp,family,regime,signed_r2,mae_adj,status";

/// Dense group index per row: rows sharing a configuration share a group.
pub fn config_groups(configs: &[KnobConfig]) -> Vec<usize> {
    let mut ids = HashMap::new();
    configs
        .iter()
        .map(|c| {
            let next = ids.len();
            *ids.entry(c.key()).or_insert(next)
        })
        .collect()
}

/// The candidates in declaration order: base families, their bagged
/// versions, then the stack.
pub fn candidate_kinds(with_ensembles: bool) -> Vec<ModelKind> {
    let mut kinds: Vec<ModelKind> = Family::ALL.into_iter().map(ModelKind::Base).collect();
    if with_ensembles {
        kinds.extend(Family::ALL.into_iter().map(ModelKind::Bagged));
        kinds.push(ModelKind::Stacked);
    }
    kinds
}

fn rows_of(groups: &[usize], chosen: &[usize]) -> Vec<usize> {
    let mut member = vec![false; groups.iter().max().map_or(0, |m| m + 1)];
    for &g in chosen {
        member[g] = true;
    }
    (0..groups.len()).filter(|&i| member[groups[i]]).collect()
}

/// Fold index per row: group `order[j]` goes to fold `j % k`.
fn fold_assignment(groups: &[usize], order: &[usize], k: usize) -> Vec<usize> {
    let mut fold_of = HashMap::new();
    for (j, g) in order.iter().enumerate() {
        fold_of.insert(*g, j % k);
    }
    groups.iter().map(|g| fold_of[g]).collect()
}

/// Dense renumbering of the groups of `rows`.
fn local_groups(groups: &[usize], rows: &[usize]) -> Vec<usize> {
    let mut ids = HashMap::new();
    rows.iter()
        .map(|&i| {
            let next = ids.len();
            *ids.entry(groups[i]).or_insert(next)
        })
        .collect()
}

/// Every candidate trained on `train`: the base families, and with
/// `folds`, the bagged models and the stack built from those folds.
/// Failures are recorded per candidate.
fn train_candidates(
    data: &Dataset,
    folds: Option<&[usize]>,
) -> Vec<(ModelKind, Result<FittedModel, String>)> {
    let mut out = Vec::new();
    let mut full: Vec<(Family, FittedModel)> = Vec::new();
    for family in Family::ALL {
        let fit = family.fit(data).map_err(|e| e.to_string());
        if let Ok(m) = &fit {
            full.push((family, m.clone()));
        }
        out.push((ModelKind::Base(family), fit));
    }
    let Some(folds) = folds else {
        return out;
    };
    let mut cv_sets = Vec::new();
    for family in Family::ALL {
        let cv = cross_validate(data, family, folds).map_err(|e| e.to_string());
        out.push((ModelKind::Bagged(family), cv.as_ref().map(bag).map_err(Clone::clone)));
        if let Ok(cv) = cv {
            if full.iter().any(|(f, _)| *f == family) {
                cv_sets.push(cv);
            }
        }
    }
    let stacked = stacking_matrix(&cv_sets)
        .map_err(|e| e.to_string())
        .map(|p| {
            let weights = solve_stack_weights(&p, &data.targets);
            let models = cv_sets
                .iter()
                .map(|cv| {
                    full.iter()
                        .find(|(f, _)| *f == cv.family)
                        .map(|(_, m)| m.clone())
                        .expect("stacked families have full fits")
                })
                .collect();
            stack(models, &weights)
        });
    out.push((ModelKind::Stacked, stacked));
    out
}

/// Observed and predicted values pooled across validation blocks, kept per
/// block as well.
#[derive(Default, Clone)]
struct Collected {
    blocks: Vec<(Vec<f64>, Vec<f64>)>,
    failure: Option<String>,
}

impl Collected {
    fn score(&self, kind: ModelKind, per_block: bool) -> CandidateScore {
        if let Some(reason) = &self.failure {
            return CandidateScore::failed(kind, reason.clone());
        }
        let pooled_obs: Vec<f64> = self.blocks.iter().flat_map(|b| b.0.clone()).collect();
        let pooled_pred: Vec<f64> = self.blocks.iter().flat_map(|b| b.1.clone()).collect();
        if pooled_obs.len() < 2 {
            return CandidateScore::failed(kind, "fewer than two validation rows".into());
        }
        if !pooled_pred.iter().all(|v| v.is_finite()) {
            return CandidateScore::failed(kind, "non-finite prediction".into());
        }
        let usable = per_block && self.blocks.len() > 1 && self.blocks.iter().all(|b| b.0.len() >= 2);
        if usable {
            let l = self.blocks.len() as f64;
            let maes: Vec<MaeAdj> = self.blocks.iter().map(|(o, p)| mae_adj(o, p)).collect();
            CandidateScore {
                kind,
                signed_r2: self.blocks.iter().map(|(o, p)| signed_r2(o, p)).sum::<f64>() / l,
                mae_adj: maes.iter().map(|m| m.value).sum::<f64>() / l,
                zero_range: maes.iter().any(|m| m.zero_range),
                failure: None,
            }
        } else {
            let m = mae_adj(&pooled_obs, &pooled_pred);
            CandidateScore {
                kind,
                signed_r2: signed_r2(&pooled_obs, &pooled_pred),
                mae_adj: m.value,
                zero_range: m.zero_range,
                failure: None,
            }
        }
    }
}

/// Scores every candidate for one EFP. `groups` gives the configuration
/// group of every row (see [`config_groups`]).
pub fn evaluate_candidates(
    data: &Dataset,
    groups: &[usize],
    params: &LearnParams,
) -> Result<ValidationReport, EvalError> {
    if data.n() == 0 {
        return Err(EvalError::NoData);
    }
    let g = groups.iter().max().map_or(0, |m| m + 1);
    let k = params.k_folds;
    let mut regime = choose_regime(g, k, params.v_f);
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut order: Vec<usize> = (0..g).collect();
    order.shuffle(&mut rng);

    // Validation splits as (training groups, holdout groups, inner folds).
    let mut splits: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    match regime {
        Regime::KfoldRotatingHoldout => {
            for (train, hold) in rotating_holdout_folds(g, params.v_f, params.rng_seed)? {
                splits.push((train, hold));
            }
        }
        Regime::LooWithHoldout => {
            if g == k {
                regime = Regime::PureLoo;
            } else {
                splits.push((order[..k].to_vec(), order[k..].to_vec()));
            }
        }
        Regime::PureLoo => {}
    }

    let kinds = candidate_kinds(regime.has_holdout());
    let mut collected: Vec<Collected> = vec![Collected::default(); kinds.len()];
    if regime == Regime::PureLoo {
        // Pooled out-of-fold predictions over every configuration.
        let folds: Vec<usize> = groups.to_vec();
        for (slot, family) in Family::ALL.into_iter().enumerate() {
            match cross_validate(data, family, &folds) {
                Ok(cv) => collected[slot].blocks.push((
                    data.targets.iter().copied().collect(),
                    cv.oof_predictions,
                )),
                Err(e) => collected[slot].failure = Some(e.to_string()),
            }
        }
    } else {
        for (train_groups, hold_groups) in &splits {
            let train_rows = rows_of(groups, train_groups);
            let hold_rows = rows_of(groups, hold_groups);
            let train = data.subset(&train_rows);
            let folds = match regime {
                Regime::KfoldRotatingHoldout => {
                    let local = local_groups(groups, &train_rows);
                    let mut local_order: Vec<usize> = (0..train_groups.len()).collect();
                    local_order.shuffle(&mut rng);
                    fold_assignment(&local, &local_order, k)
                }
                _ => local_groups(groups, &train_rows),
            };
            let trained = train_candidates(&train, Some(&folds));
            let observed: Vec<f64> = hold_rows.iter().map(|&i| data.targets[i]).collect();
            for (slot, (_, fit)) in trained.into_iter().enumerate() {
                let c = &mut collected[slot];
                if c.failure.is_some() {
                    continue;
                }
                match fit {
                    Ok(model) => {
                        let pred = hold_rows.iter().map(|&i| model.predict(&data.row(i))).collect();
                        c.blocks.push((observed.clone(), pred));
                    }
                    Err(e) => c.failure = Some(e),
                }
            }
        }
    }
    let candidates = kinds
        .iter()
        .zip(&collected)
        .map(|(kind, c)| c.score(*kind, !kind.is_ensemble()))
        .collect();
    Ok(ValidationReport { regime, candidates })
}

/// Result of applying the eligibility rule to a report.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub chosen: Option<CandidateScore>,
    pub eligible: Vec<CandidateScore>,
    pub iteration: usize,
    /// The choice ignored eligibility because no further round is allowed.
    pub forced: bool,
}

fn better(a: &CandidateScore, b: &CandidateScore) -> bool {
    // Candidates arrive in declaration order, so keeping the incumbent on a
    // full tie respects that order.
    a.mae_adj < b.mae_adj || (a.mae_adj == b.mae_adj && a.signed_r2 > b.signed_r2)
}

fn argmin<'a>(it: impl Iterator<Item = &'a CandidateScore>) -> Option<&'a CandidateScore> {
    it.fold(None, |best: Option<&CandidateScore>, c| match best {
        Some(b) if !better(c, b) => Some(b),
        _ => Some(c),
    })
}

/// Picks the eligible candidate with the smallest `mae_adj`. With none
/// eligible, returns no choice unless this is the last round (the iteration
/// cap is reached or `force` is set), in which case the smallest `mae_adj`
/// wins regardless.
pub fn select_model(
    report: &ValidationReport,
    params: &LearnParams,
    iteration: usize,
    force: bool,
) -> Result<SelectionOutcome, EvalError> {
    if report.candidates.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let eligible: Vec<CandidateScore> = report
        .candidates
        .iter()
        .filter(|c| c.ok() && c.signed_r2 > params.eps_r && c.mae_adj < params.eps_m)
        .cloned()
        .collect();
    let last = force || (params.max_iterations >= 0 && iteration as i64 >= params.max_iterations);
    let (chosen, forced) = match argmin(eligible.iter()) {
        Some(c) => (Some(c.clone()), false),
        None if last => (argmin(report.candidates.iter().filter(|c| c.ok())).cloned(), true),
        None => (None, false),
    };
    Ok(SelectionOutcome {
        chosen,
        eligible,
        iteration,
        forced,
    })
}

/// Fits `kind` on all the data, the way it was validated.
pub fn fit_candidate(
    kind: ModelKind,
    data: &Dataset,
    groups: &[usize],
    params: &LearnParams,
) -> Result<FittedModel, EvalError> {
    let fail = |e: String| EvalError::Fit(kind.to_string(), e);
    if let ModelKind::Base(family) = kind {
        return family.fit(data).map_err(|e| fail(e.to_string()));
    }
    let g = groups.iter().max().map_or(0, |m| m + 1);
    let mut order: Vec<usize> = (0..g).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.rng_seed));
    let folds = fold_assignment(groups, &order, params.k_folds.min(g).max(2));
    let trained = train_candidates(data, Some(&folds));
    trained
        .into_iter()
        .find(|(k, _)| *k == kind)
        .map(|(_, fit)| fit.map_err(fail))
        .unwrap_or_else(|| Err(fail("unknown candidate".into())))
}

/// Validation, selection and the final fit for one EFP.
#[derive(Debug, Clone)]
pub struct Learned {
    pub report: ValidationReport,
    pub outcome: SelectionOutcome,
    pub model: Option<FittedModel>,
}

pub fn learn_efp(
    data: &Dataset,
    groups: &[usize],
    params: &LearnParams,
    iteration: usize,
    force: bool,
) -> Result<Learned, EvalError> {
    let report = evaluate_candidates(data, groups, params)?;
    let outcome = select_model(&report, params, iteration, force)?;
    let model = match &outcome.chosen {
        Some(c) => Some(fit_candidate(c.kind, data, groups, params)?),
        None => None,
    };
    Ok(Learned {
        report,
        outcome,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn score(kind: ModelKind, r2: f64, mae: f64) -> CandidateScore {
        CandidateScore {
            kind,
            signed_r2: r2,
            mae_adj: mae,
            zero_range: false,
            failure: None,
        }
    }

    #[test]
    fn regimes() {
        assert_eq!(choose_regime(50, 5, 0.2), Regime::KfoldRotatingHoldout);
        assert_eq!(choose_regime(10, 8, 0.5), Regime::LooWithHoldout);
        assert_eq!(choose_regime(4, 5, 0.2), Regime::PureLoo);
    }

    #[test]
    fn holdout_block_arithmetic() {
        let f = rotating_holdout_folds(50, 0.2, 1).unwrap();
        assert_eq!(f.len(), 5);
        assert!(f.iter().all(|(t, h)| h.len() == 10 && t.len() == 40));
        let f = rotating_holdout_folds(10, 0.5, 1).unwrap();
        assert_eq!((f.len(), f[0].1.len()), (2, 5));
        assert!(rotating_holdout_folds(3, 0.1, 0).is_err());
    }

    /// Enumerates the blocks of n = 7, v_f = 0.3 and checks that exactly one
    /// index is never held out.
    #[test]
    fn floor_leaves_a_remainder() {
        let f = rotating_holdout_folds(7, 0.3, 3).unwrap();
        assert_eq!((f.len(), f[0].1.len()), (3, 2));
        let mut seen = [0; 7];
        for (train, hold) in &f {
            for &i in hold {
                seen[i] += 1;
            }
            for &i in train {
                assert!(!hold.contains(&i));
            }
            assert_eq!(train.len() + hold.len(), 7);
        }
        assert_eq!(seen.iter().filter(|&&s| s == 0).count(), 1);
        assert!(seen.iter().all(|&s| s <= 1));
    }

    #[test]
    fn r2_conventions() {
        let o = [1.0, 2.0, 4.0, 3.0];
        assert!((signed_r2(&o, &o) - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = o.iter().map(|v| -v).collect();
        assert!((signed_r2(&o, &neg) + 1.0).abs() < 1e-15);
        assert_eq!(signed_r2(&o, &[2.0; 4]), 0.0);
    }

    #[test]
    fn mae_adj_conventions() {
        let o: Vec<f64> = (0..=10).map(f64::from).collect();
        let p: Vec<f64> = o.iter().map(|v| v + 1.0).collect();
        assert!((mae_adj(&o, &p).value - 0.1).abs() < 1e-15);
        assert_eq!(mae_adj(&o, &o).value, 0.0);
        let m = mae_adj(&[2.0; 3], &[3.0; 3]);
        assert_eq!((m.value, m.zero_range), (1.0, true));
    }

    fn report(scores: Vec<CandidateScore>) -> ValidationReport {
        ValidationReport {
            regime: Regime::KfoldRotatingHoldout,
            candidates: scores,
        }
    }

    #[test]
    fn selection_rule() {
        let p = LearnParams::default();
        let r = report(vec![
            score(ModelKind::Base(Family::Linear1), 0.6, 0.05),
            score(ModelKind::Base(Family::Mars), 0.7, 0.08),
            score(ModelKind::Base(Family::Kriging), 0.4, 0.02),
        ]);
        let out = select_model(&r, &p, 1, false).unwrap();
        assert_eq!(out.chosen.unwrap().kind, ModelKind::Base(Family::Linear1));
        assert_eq!(out.eligible.len(), 2);
    }

    #[test]
    fn ineligible_reports_restart_until_the_last_round() {
        let p = LearnParams {
            max_iterations: 3,
            ..LearnParams::default()
        };
        let r = report(vec![
            score(ModelKind::Base(Family::Linear1), 0.2, 0.3),
            score(ModelKind::Base(Family::Mars), 0.3, 0.2),
        ]);
        assert_eq!(select_model(&r, &p, 1, false).unwrap().chosen, None);
        let last = select_model(&r, &p, 3, false).unwrap();
        assert!(last.forced);
        assert_eq!(last.chosen.unwrap().mae_adj, 0.2);
        let unbounded = LearnParams::default();
        assert_eq!(select_model(&r, &unbounded, 50, false).unwrap().chosen, None);
        assert!(select_model(&r, &unbounded, 50, true).unwrap().chosen.is_some());
        assert_eq!(
            select_model(&report(vec![]), &p, 1, false),
            Err(EvalError::EmptyReport)
        );
    }

    #[test]
    fn ties_prefer_higher_r2_then_declaration_order() {
        let p = LearnParams::default();
        let r = report(vec![
            score(ModelKind::Base(Family::Linear1), 0.8, 0.05),
            score(ModelKind::Base(Family::Mars), 0.9, 0.05),
            score(ModelKind::Base(Family::Kriging), 0.9, 0.05),
        ]);
        let out = select_model(&r, &p, 1, false).unwrap();
        assert_eq!(out.chosen.unwrap().kind, ModelKind::Base(Family::Mars));
    }

    fn binh_data(n_side: usize, f: impl Fn(f64, f64) -> f64) -> (Dataset, Vec<usize>) {
        let step = 11.0 / (n_side - 1) as f64;
        let mut rows = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                rows.push(vec![-7.0 + i as f64 * step, -7.0 + j as f64 * step]);
            }
        }
        let t = rows.iter().map(|r| f(r[0], r[1])).collect();
        let groups = (0..rows.len()).collect();
        (Dataset::new(rows, t, vec!["x".into(), "y".into()]).unwrap(), groups)
    }

    #[test]
    fn linear_target_scores_perfectly() {
        // 20 configurations of the linear Binh objective.
        let (data, groups) = binh_data(5, |x, y| -0.5 * x - y - 1.0);
        let data = data.subset(&(0..20).collect::<Vec<_>>());
        let groups = groups[..20].to_vec();
        let r = evaluate_candidates(&data, &groups, &LearnParams::default()).unwrap();
        assert_eq!(r.regime, Regime::KfoldRotatingHoldout);
        let lin = r.get(ModelKind::Base(Family::Linear1)).unwrap();
        assert!(lin.signed_r2 > 0.999 && lin.mae_adj < 1e-6, "{lin:?}");
    }

    #[test]
    fn pure_loo_has_no_ensembles() {
        let (data, groups) = binh_data(2, |x, y| x + y);
        let r = evaluate_candidates(&data, &groups, &LearnParams::default()).unwrap();
        assert_eq!(r.regime, Regime::PureLoo);
        assert!(r.candidates.iter().all(|c| !c.kind.is_ensemble()));
        assert_eq!(r.candidates.len(), 5);
    }

    #[test]
    fn loo_with_holdout_scores_the_remaining_groups() {
        let (data, groups) = binh_data(3, |x, y| 2.0 * x - y);
        let params = LearnParams {
            k_folds: 8,
            v_f: 0.5,
            ..LearnParams::default()
        };
        let r = evaluate_candidates(&data, &groups, &params).unwrap();
        assert_eq!(r.regime, Regime::LooWithHoldout);
        // One holdout configuration cannot carry a correlation.
        assert!(r.candidates.iter().all(|c| !c.ok()));
        let params = LearnParams { k_folds: 6, ..params };
        let r = evaluate_candidates(&data, &groups, &params).unwrap();
        assert_eq!(r.regime, Regime::LooWithHoldout);
        assert!(r.get(ModelKind::Base(Family::Linear1)).unwrap().mae_adj < 1e-9);
        assert!(r.get(ModelKind::Stacked).is_some());
    }

    #[test]
    fn noise_is_not_explained() {
        let mut large = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (data, groups) = binh_data(7, |_, _| 0.0);
            let noise: Vec<f64> = (0..data.n()).map(|_| rng.random::<f64>()).collect();
            let rows = (0..data.n()).map(|i| data.row(i)).collect();
            let data = Dataset::new(rows, noise, data.column_names.clone()).unwrap();
            let params = LearnParams {
                rng_seed: seed,
                ..LearnParams::default()
            };
            let r = evaluate_candidates(&data, &groups, &params).unwrap();
            large += r.candidates.iter().filter(|c| c.ok() && c.signed_r2.abs() >= 0.5).count();
        }
        let total = 20 * candidate_kinds(true).len();
        assert!((large as f64) < 0.05 * total as f64, "{large} of {total}");
    }

    #[test]
    fn repetitions_travel_together() {
        let configs: Vec<KnobConfig> = [1.0, 2.0, 1.0, 3.0, 2.0]
            .iter()
            .map(|v| KnobConfig::new(vec![*v]))
            .collect();
        assert_eq!(config_groups(&configs), vec![0, 1, 0, 2, 1]);
        let groups = [0, 1, 0, 2, 1, 3];
        let rows = rows_of(&groups, &[0, 3]);
        assert_eq!(rows, vec![0, 2, 5]);
    }

    #[test]
    fn report_rows() {
        let r = report(vec![score(ModelKind::Bagged(Family::Mars), 0.5, 0.25)]);
        assert_eq!(
            r.csv_rows("b1"),
            vec!["b1,mars_bagged,kfold_rotating_holdout,0.5,0.25,ok".to_string()]
        );
    }

    proptest! {
        #[test]
        fn r2_is_affine_invariant(
            obs in proptest::collection::vec(-50.0f64..50.0, 3..30),
            pred in proptest::collection::vec(-50.0f64..50.0, 30),
            a in 0.01f64..100.0,
            b in -100.0f64..100.0,
        ) {
            let pred = &pred[..obs.len()];
            let base = signed_r2(&obs, pred);
            let moved: Vec<f64> = pred.iter().map(|p| a * p + b).collect();
            let negated: Vec<f64> = pred.iter().map(|p| -p).collect();
            prop_assert!((signed_r2(&obs, &moved) - base).abs() < 1e-9);
            prop_assert!((signed_r2(&obs, &negated) + base).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&base));
        }

        #[test]
        fn holdout_blocks_are_disjoint(n in 2usize..200, v_f in 0.05f64..0.95, seed in any::<u64>()) {
            if let Ok(folds) = rotating_holdout_folds(n, v_f, seed) {
                let m = (n as f64 * v_f).round() as usize;
                let mut seen = vec![false; n];
                for (train, hold) in &folds {
                    prop_assert_eq!(hold.len(), m);
                    prop_assert_eq!(train.len() + hold.len(), n);
                    for &i in hold {
                        prop_assert!(!seen[i]);
                        seen[i] = true;
                        prop_assert!(!train.contains(&i));
                    }
                }
            }
        }

        #[test]
        fn selection_is_deterministic(
            scores in proptest::collection::vec((-1.0f64..1.0, 0.0f64..0.3), 1..11),
        ) {
            let kinds = candidate_kinds(true);
            let r = report(scores.iter().zip(&kinds).map(|((r2, m), k)| score(*k, *r2, *m)).collect());
            let p = LearnParams::default();
            let a = select_model(&r, &p, 1, false).unwrap();
            prop_assert_eq!(&a, &select_model(&r, &p, 1, false).unwrap());
            if let Some(c) = &a.chosen {
                prop_assert!(a.eligible.contains(c));
            }
        }
    }
}
