//! Brute-force oracles and finite-difference gradient checks.
//!
//! Everything here recomputes a quantity by the most literal method
//! available — explicit summation, exhaustive enumeration, O(n²) scans —
//! independently of the production code paths, so the two can be compared.
//! The `selftest` command and the acceptance suite both run these.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients, Graph, Matrix, ParamStore, Reduction, Var};
use crate::base::{base_loss, BaseModule};
use crate::error::Result;
use crate::evaluation::{average_precision, temporal_iou, Detection, GtInstance};
use crate::localization::{nms, oic_score, TemporalProposal};
use crate::model::substream;
use crate::subspace::SubspaceModule;
use crate::training::{
    partition_snippets, residual_loss, subspace_cls_loss, total_subspace_loss, triplet_loss,
    LossWeights, Prototypes, SnippetPartition, SubspaceMeans,
};

/// Finite-difference step used by every gradient check.
pub const FD_EPS: f64 = 1e-5;
/// Maximum tolerated relative error between analytic and numeric gradients.
pub const FD_TOL: f64 = 1e-4;

/// Outcome of one self-test check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

// ---------------------------------------------------------------------------
// partition oracle
// ---------------------------------------------------------------------------

/// Literal re-evaluation of the partition predicates, one snippet at a time.
pub fn brute_force_partition(a_rgb: &[f64], a_flow: &[f64], alpha: f64) -> SnippetPartition {
    let theta_high = 0.5 + alpha;
    let theta_low = 0.5 - alpha;
    let mut p = SnippetPartition {
        action: vec![],
        context_rgb: vec![],
        context_flow: vec![],
        background: vec![],
        theta_high,
        theta_low,
    };
    for (t, (&r, &f)) in a_rgb.iter().zip(a_flow).enumerate() {
        if r > theta_high && f > theta_high {
            p.action.push(t);
        } else if r > theta_high && f < theta_low {
            p.context_rgb.push(t);
        } else if f > theta_high && r < theta_low {
            p.context_flow.push(t);
        } else if r < theta_low && f < theta_low {
            p.background.push(t);
        }
    }
    p
}

/// Exhaustive grid of attention pairs over {0, 0.05, ..., 1}² for
/// α ∈ {0.1, 0.2, 0.3, 0.4}, compared snippet-by-snippet.
pub fn partition_grid_check() -> CheckResult {
    let name = "partition_exhaustive_grid";
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    let mut rgb = Vec::with_capacity(grid.len() * grid.len());
    let mut flow = Vec::with_capacity(grid.len() * grid.len());
    for &r in &grid {
        for &f in &grid {
            rgb.push(r);
            flow.push(f);
        }
    }
    let mut compared = 0usize;
    for alpha in [0.1, 0.2, 0.3, 0.4] {
        let got = match partition_snippets(
            &Matrix::row_vector(&rgb),
            &Matrix::row_vector(&flow),
            alpha,
        ) {
            Ok(p) => p,
            Err(e) => return CheckResult::new(name, false, format!("alpha {alpha}: {e}")),
        };
        let want = brute_force_partition(&rgb, &flow, alpha);
        if got.action != want.action
            || got.context_rgb != want.context_rgb
            || got.context_flow != want.context_flow
            || got.background != want.background
        {
            return CheckResult::new(
                name,
                false,
                format!("mismatch against brute-force predicates at alpha {alpha}"),
            );
        }
        compared += rgb.len();
    }
    CheckResult::new(
        name,
        true,
        format!("{compared} grid points across 4 alphas, zero mismatches"),
    )
}

// ---------------------------------------------------------------------------
// OIC oracle
// ---------------------------------------------------------------------------

/// Explicit-summation contrastive score over one score row.
pub fn brute_force_oic(row: &[f64], t_start: usize, t_end: usize) -> f64 {
    let len = t_end - t_start + 1;
    let tau = ((len as f64 / 4.0).round() as usize).max(1);
    let mut inner = 0.0;
    for v in &row[t_start..=t_end] {
        inner += v;
    }
    inner /= len as f64;
    let mut outer = 0.0;
    let mut count = 0usize;
    let mut i = t_start as isize - tau as isize;
    while i < t_start as isize {
        if i >= 0 {
            outer += row[i as usize];
            count += 1;
        }
        i += 1;
    }
    let mut j = t_end + 1;
    while j <= t_end + tau {
        if j < row.len() {
            outer += row[j];
            count += 1;
        }
        j += 1;
    }
    if count > 0 {
        outer /= count as f64;
    }
    inner - outer
}

/// Random (sequence, interval) cases compared to 1e-12, plus exact-zero
/// checks on constant sequences (dyadic constants make the means exact).
pub fn oic_random_check(cases: usize, seed: u64) -> CheckResult {
    let name = "oic_brute_force";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let t = rng.random_range(2..48);
        let rows = rng.random_range(2..5);
        let class = rng.random_range(1..rows);
        let scores = Matrix::from_fn(rows, t, |_, _| rng.random_range(0.0..1.0));
        let s = rng.random_range(0..t);
        let e = rng.random_range(s..t);
        let got = match oic_score(&scores, s, e, class) {
            Ok(v) => v,
            Err(err) => return CheckResult::new(name, false, format!("case {case}: {err}")),
        };
        let want = brute_force_oic(scores.row(class), s, e);
        worst = worst.max((got - want).abs());
        if (got - want).abs() > 1e-12 {
            return CheckResult::new(
                name,
                false,
                format!("case {case}: got {got}, brute force {want}"),
            );
        }
    }
    // constant sequences: score must be literally zero wherever a flank
    // survives clipping
    for k in 0..=16 {
        let c = k as f64 / 16.0;
        let scores = Matrix::filled(2, 12, c);
        for (s, e) in [(2, 4), (0, 3), (8, 11), (5, 5), (1, 10)] {
            let got = oic_score(&scores, s, e, 1).unwrap();
            if got != 0.0 {
                return CheckResult::new(
                    name,
                    false,
                    format!("constant {c} on [{s}, {e}] scored {got}, want exactly 0"),
                );
            }
        }
    }
    CheckResult::new(
        name,
        true,
        format!("{cases} random cases within 1e-12 (worst {worst:.2e}); constants exactly 0"),
    )
}

// ---------------------------------------------------------------------------
// NMS oracle
// ---------------------------------------------------------------------------

/// O(n²) suppression: repeatedly take the best remaining proposal and
/// delete everything it suppresses.
pub fn brute_force_nms(
    mut remaining: Vec<TemporalProposal>,
    iou_threshold: f64,
) -> Vec<TemporalProposal> {
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            let (a, b) = (&remaining[i], &remaining[best]);
            let a_better = match a.score.total_cmp(&b.score) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => {
                    (a.class, a.t_start, a.t_end) < (b.class, b.t_start, b.t_end)
                }
            };
            if a_better {
                best = i;
            }
        }
        let winner = remaining.swap_remove(best);
        remaining.retain(|p| {
            p.class != winner.class
                || temporal_iou((p.start_sec, p.end_sec), (winner.start_sec, winner.end_sec))
                    .unwrap_or(0.0)
                    <= iou_threshold
        });
        kept.push(winner);
    }
    kept
}

/// Random proposal sets against the O(n²) oracle; the surviving sets must
/// be identical (same proposals, same order).
pub fn nms_random_check(trials: usize, seed: u64) -> CheckResult {
    let name = "nms_brute_force";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let count = rng.random_range(0..25);
        let proposals: Vec<TemporalProposal> = (0..count)
            .map(|_| {
                let t_start = rng.random_range(0..30);
                let t_end = t_start + rng.random_range(0..8);
                let class = rng.random_range(1..4);
                // quantized scores force ties through the ordering rule
                let score = rng.random_range(1..6) as f64 / 5.0;
                TemporalProposal {
                    t_start,
                    t_end,
                    class,
                    score,
                    start_sec: t_start as f64,
                    end_sec: (t_end + 1) as f64,
                }
            })
            .collect();
        let threshold = rng.random_range(0.0..0.9);
        let got = nms(proposals.clone(), threshold);
        let want = brute_force_nms(proposals, threshold);
        if got != want {
            return CheckResult::new(
                name,
                false,
                format!(
                    "trial {trial}: survivors differ ({} vs {} proposals)",
                    got.len(),
                    want.len()
                ),
            );
        }
    }
    CheckResult::new(name, true, format!("{trials} random sets, identical survivors"))
}

// ---------------------------------------------------------------------------
// average-precision oracle
// ---------------------------------------------------------------------------

/// AP by exhaustive enumeration of the matching rule: every assignment of
/// detections to ground-truth segments (or to none) is generated, the
/// single rule-consistent one is selected, and AP is computed from it.
/// Panics if the rule-consistent assignment is not unique — that would mean
/// the matching rule itself is ambiguous.
pub fn enumeration_average_precision(
    detections: &[Detection],
    gts: &[GtInstance],
    iou_thr: f64,
) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));

    let iou = |d: &Detection, g: &GtInstance| -> f64 {
        if d.video_id != g.video_id {
            return -1.0;
        }
        temporal_iou((d.start_sec, d.end_sec), (g.start_sec, g.end_sec)).unwrap_or(0.0)
    };

    // assignment[i]: Some(gt index) or None for the i-th ranked detection
    let n_asn = (gts.len() + 1).pow(order.len() as u32);
    let mut consistent: Vec<f64> = Vec::new();
    for code in 0..n_asn {
        let mut c = code;
        let mut assignment = Vec::with_capacity(order.len());
        for _ in 0..order.len() {
            let v = c % (gts.len() + 1);
            c /= gts.len() + 1;
            assignment.push(if v == 0 { None } else { Some(v - 1) });
        }
        // validity: injective over Some
        let mut used = vec![false; gts.len()];
        let mut valid = true;
        for a in assignment.iter().flatten() {
            if used[*a] {
                valid = false;
                break;
            }
            used[*a] = true;
        }
        if !valid {
            continue;
        }
        // rule consistency, detection by detection in rank order
        let mut taken = vec![false; gts.len()];
        for (rank, &di) in order.iter().enumerate() {
            let det = &detections[di];
            let choice = assignment[rank];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = iou(det, g);
                if v >= iou_thr && best.map_or(true, |(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            if best.map(|(gi, _)| gi) != choice {
                valid = false;
                break;
            }
            if let Some(gi) = choice {
                taken[gi] = true;
            }
        }
        if !valid {
            continue;
        }
        let mut tp = 0usize;
        let mut ap = 0.0;
        for (rank, a) in assignment.iter().enumerate() {
            if a.is_some() {
                tp += 1;
                ap += tp as f64 / (rank + 1) as f64;
            }
        }
        consistent.push(ap / gts.len() as f64);
    }
    assert_eq!(
        consistent.len(),
        1,
        "matching rule admitted {} assignments",
        consistent.len()
    );
    consistent[0]
}

/// All detection/ground-truth combinations (≤4 detections, ≤3 GTs) drawn
/// from a fixed interval pool, under two score orders and two thresholds,
/// compared against the enumeration oracle.
pub fn ap_enumeration_check() -> CheckResult {
    let name = "average_precision_enumeration";
    let pool: [(f64, f64); 6] = [
        (0.0, 2.0),
        (1.0, 3.0),
        (2.0, 4.0),
        (4.0, 6.0),
        (5.0, 7.0),
        (0.0, 6.0),
    ];
    let subsets = |max_len: usize| -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for mask in 0u32..(1 << pool.len()) {
            let picked: Vec<usize> = (0..pool.len()).filter(|i| mask >> i & 1 == 1).collect();
            if !picked.is_empty() && picked.len() <= max_len {
                out.push(picked);
            }
        }
        out
    };
    let det_sets = subsets(4);
    let gt_sets = subsets(3);
    let mut cases = 0usize;
    for det_idx in &det_sets {
        for gt_idx in &gt_sets {
            for reverse_scores in [false, true] {
                let detections: Vec<Detection> = det_idx
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let rank = if reverse_scores { det_idx.len() - 1 - i } else { i };
                        Detection {
                            video_id: "v".to_string(),
                            class: 1,
                            start_sec: pool[p].0,
                            end_sec: pool[p].1,
                            score: 0.9 - 0.1 * rank as f64,
                        }
                    })
                    .collect();
                let gts: Vec<GtInstance> = gt_idx
                    .iter()
                    .map(|&p| GtInstance {
                        video_id: "v".to_string(),
                        class: 1,
                        start_sec: pool[p].0,
                        end_sec: pool[p].1,
                    })
                    .collect();
                for thr in [0.3, 0.5] {
                    let got = average_precision(&detections, &gts, thr);
                    let want = enumeration_average_precision(&detections, &gts, thr);
                    if (got - want).abs() > 1e-12 {
                        return CheckResult::new(
                            name,
                            false,
                            format!(
                                "dets {det_idx:?} gts {gt_idx:?} thr {thr}: got {got}, oracle {want}"
                            ),
                        );
                    }
                    cases += 1;
                }
            }
        }
    }
    // identical-interval perfect detection
    let perfect = [Detection {
        video_id: "v".to_string(),
        class: 1,
        start_sec: 1.0,
        end_sec: 4.0,
        score: 0.8,
    }];
    let gt = [GtInstance {
        video_id: "v".to_string(),
        class: 1,
        start_sec: 1.0,
        end_sec: 4.0,
    }];
    if average_precision(&perfect, &gt, 0.9) != 1.0 {
        return CheckResult::new(name, false, "perfect detection did not score AP 1".to_string());
    }
    CheckResult::new(name, true, format!("{cases} enumerated cases agree to 1e-12"))
}

// ---------------------------------------------------------------------------
// loss closed forms and entry enumeration
// ---------------------------------------------------------------------------

/// The three closed forms: classification loss ln 2 and residual loss ln 4
/// at uniform predictions, triplet loss 2m at identical prototypes.
pub fn loss_closed_form_check() -> CheckResult {
    let name = "loss_closed_forms";
    let tol = 1e-12;
    let mut g = Graph::new();
    let partition = SnippetPartition {
        action: vec![0, 1],
        context_rgb: vec![2],
        context_flow: vec![3],
        background: vec![4, 5],
        theta_high: 0.7,
        theta_low: 0.3,
    };
    let pa = g.constant(Matrix::filled(3, 6, 0.5));
    let pc = g.constant(Matrix::filled(3, 6, 0.5));
    let cls = match subspace_cls_loss(&mut g, pa, pc, &partition, &[1], 2) {
        Ok(v) => g.value(v).get(0, 0),
        Err(e) => return CheckResult::new(name, false, e.to_string()),
    };
    let kinds = g.constant(Matrix::filled(4, 6, 0.25));
    let res = match residual_loss(&mut g, kinds, &partition) {
        Ok(v) => g.value(v).get(0, 0),
        Err(e) => return CheckResult::new(name, false, e.to_string()),
    };
    let proto = g.constant(Matrix::col_vector(&[0.6, -0.2, 1.3]));
    let means = || SubspaceMeans {
        action: Some(proto),
        context: Some(proto),
        background: Some(proto),
    };
    let protos = Prototypes {
        in_action: means(),
        in_context: means(),
    };
    let trip = match triplet_loss(&mut g, &protos, 1.0) {
        Ok(v) => g.value(v).get(0, 0),
        Err(e) => return CheckResult::new(name, false, e.to_string()),
    };

    let ln2 = std::f64::consts::LN_2;
    let ln4 = 4.0_f64.ln();
    let errs = [
        ("classification", cls, ln2),
        ("residual", res, ln4),
        ("triplet", trip, 2.0),
    ];
    for (what, got, want) in errs {
        if (got - want).abs() > tol {
            return CheckResult::new(
                name,
                false,
                format!("{what}: got {got}, want {want} within {tol}"),
            );
        }
    }
    CheckResult::new(
        name,
        true,
        format!("ln2 / ln4 / 2m reproduced within {tol:.0e}"),
    )
}

/// Brute-force the classification loss by enumerating the constrained
/// entries literally from the pseudo-label rules and averaging by hand.
pub fn cls_loss_enumeration_check(trials: usize, seed: u64) -> CheckResult {
    let name = "cls_loss_entry_enumeration";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let num_actions = rng.random_range(1..4usize);
        let t = rng.random_range(1..12usize);
        let label_count = rng.random_range(1..=num_actions);
        let mut labels: Vec<usize> = (1..=num_actions).collect();
        for i in (1..labels.len()).rev() {
            let j = rng.random_range(0..=i);
            labels.swap(i, j);
        }
        labels.truncate(label_count);
        labels.sort_unstable();

        // random disjoint partition: each snippet gets kind 0..4 (4 = none)
        let mut partition = SnippetPartition {
            action: vec![],
            context_rgb: vec![],
            context_flow: vec![],
            background: vec![],
            theta_high: 0.7,
            theta_low: 0.3,
        };
        for i in 0..t {
            match rng.random_range(0..5) {
                0 => partition.action.push(i),
                1 => partition.context_rgb.push(i),
                2 => partition.context_flow.push(i),
                3 => partition.background.push(i),
                _ => {}
            }
        }
        let pa = Matrix::from_fn(num_actions + 1, t, |_, _| rng.random_range(0.01..0.99));
        let pc = Matrix::from_fn(num_actions + 1, t, |_, _| rng.random_range(0.01..0.99));

        // literal enumeration
        let bce = |p: f64, y: f64| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let mut total = 0.0;
        let mut count = 0usize;
        let mut add = |m: &Matrix, col: usize, positive: bool| {
            total += bce(m.get(0, col), if positive { 0.0 } else { 1.0 });
            count += 1;
            for &l in &labels {
                total += bce(m.get(l, col), if positive { 1.0 } else { 0.0 });
                count += 1;
            }
        };
        for &i in &partition.action {
            add(&pa, i, true);
        }
        for &i in partition.context_rgb.iter().chain(&partition.context_flow) {
            add(&pa, i, false);
            add(&pc, i, true);
        }
        for &i in &partition.background {
            add(&pa, i, false);
            add(&pc, i, false);
        }
        let want = if count == 0 { 0.0 } else { total / count as f64 };

        let mut g = Graph::new();
        let va = g.constant(pa);
        let vc = g.constant(pc);
        let got = match subspace_cls_loss(&mut g, va, vc, &partition, &labels, num_actions) {
            Ok(v) => g.value(v).get(0, 0),
            Err(e) => return CheckResult::new(name, false, format!("trial {trial}: {e}")),
        };
        if (got - want).abs() > 1e-12 {
            return CheckResult::new(
                name,
                false,
                format!("trial {trial}: got {got}, enumeration {want}"),
            );
        }
    }
    CheckResult::new(name, true, format!("{trials} random partitions agree to 1e-12"))
}

// ---------------------------------------------------------------------------
// gradient checks
// ---------------------------------------------------------------------------

fn store_with(entries: &[(&str, Matrix)]) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, value) in entries {
        store.register(name, value.clone()).expect("fresh store");
    }
    store
}

fn grid_values(rows: usize, cols: usize, scale: f64, phase: f64) -> Matrix {
    // smooth deterministic filler clear of ReLU kinks
    Matrix::from_fn(rows, cols, |i, j| {
        let v = ((i * cols + j) as f64 * 0.7 + phase).sin();
        scale * if v.abs() < 0.15 { 0.3 + v } else { v }
    })
}

fn run_gradcheck(
    name: &str,
    store: &mut ParamStore,
    build: impl Fn(&mut Graph, &ParamStore) -> Result<Var>,
) -> CheckResult {
    match check_gradients(store, FD_EPS, build) {
        Ok(report) => CheckResult::new(
            &format!("grad_{name}"),
            report.max_rel_error < FD_TOL,
            format!(
                "max rel err {:.3e} (worst {}) over {} entries",
                report.max_rel_error, report.worst, report.checked
            ),
        ),
        Err(e) => CheckResult::new(&format!("grad_{name}"), false, e.to_string()),
    }
}

/// Finite-difference checks for every differentiable operation.
pub fn op_gradient_checks() -> Vec<CheckResult> {
    let mut results = Vec::new();

    {
        let mut store = store_with(&[
            ("w", grid_values(2, 3, 0.8, 0.1)),
            ("b", grid_values(2, 1, 0.5, 1.3)),
        ]);
        let x = grid_values(3, 4, 1.0, 2.1);
        results.push(run_gradcheck("affine", &mut store, move |g, s| {
            let w = g.param(s, "w")?;
            let b = g.param(s, "b")?;
            let xc = g.constant(x.clone());
            let y = g.affine(w, b, xc)?;
            Ok(g.mean_all(y))
        }));
    }
    {
        let mut store = store_with(&[
            ("a", grid_values(2, 3, 0.9, 0.4)),
            ("b", grid_values(3, 4, 0.7, 1.9)),
        ]);
        results.push(run_gradcheck("matmul", &mut store, |g, s| {
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let y = g.matmul(a, b)?;
            Ok(g.mean_all(y))
        }));
    }
    {
        let mut store = store_with(&[("x", grid_values(2, 5, 1.1, 0.6))]);
        results.push(run_gradcheck("transpose", &mut store, |g, s| {
            let x = g.param(s, "x")?;
            let y = g.transpose(x);
            let yy = g.matmul(y, x)?; // make the reduction weight entries unevenly
            Ok(g.mean_all(yy))
        }));
    }
    {
        let mut store = store_with(&[
            ("a", grid_values(3, 3, 0.6, 0.2)),
            ("b", grid_values(3, 3, 0.5, 2.6)),
        ]);
        results.push(run_gradcheck("add_sub_scale", &mut store, |g, s| {
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let sum = g.add(a, b)?;
            let diff = g.sub(sum, b)?;
            let scaled = g.scale(diff, -1.7);
            let shifted = g.add_scalar(scaled, 0.35);
            let prod = g.matmul(shifted, b)?;
            Ok(g.mean_all(prod))
        }));
    }
    {
        let mut store = store_with(&[("x", grid_values(2, 4, 1.4, 0.9))]);
        results.push(run_gradcheck("sigmoid", &mut store, |g, s| {
            let x = g.param(s, "x")?;
            let y = g.sigmoid(x);
            let xt = g.transpose(x);
            let yy = g.matmul(y, xt)?;
            Ok(g.mean_all(yy))
        }));
    }
    {
        let mut store = store_with(&[("x", grid_values(2, 4, 1.2, 1.5))]);
        results.push(run_gradcheck("relu", &mut store, |g, s| {
            let x = g.param(s, "x")?;
            let y = g.relu(x);
            let xt = g.transpose(x);
            let yy = g.matmul(y, xt)?;
            Ok(g.mean_all(yy))
        }));
    }
    {
        let mut store = store_with(&[
            ("k", grid_values(2, 2 * 3, 0.7, 0.8)),
            ("kb", grid_values(2, 1, 0.4, 1.1)),
            ("x", grid_values(2, 6, 1.0, 2.4)),
        ]);
        results.push(run_gradcheck("conv1d_same", &mut store, |g, s| {
            let k = g.param(s, "k")?;
            let kb = g.param(s, "kb")?;
            let x = g.param(s, "x")?;
            let y = g.conv1d_same(k, kb, x, 3)?;
            let xt = g.transpose(x);
            let yy = g.matmul(y, xt)?;
            Ok(g.mean_all(yy))
        }));
    }
    {
        let mut store = store_with(&[("x", grid_values(4, 3, 1.0, 0.3))]);
        results.push(run_gradcheck("row_slice", &mut store, |g, s| {
            let x = g.param(s, "x")?;
            let top = g.row_slice(x, 0, 2)?;
            let bottom = g.row_slice(x, 2, 2)?;
            let bt = g.transpose(bottom);
            let prod = g.matmul(top, bt)?;
            Ok(g.mean_all(prod))
        }));
    }
    {
        let mut store = store_with(&[("x", grid_values(3, 5, 1.0, 1.7))]);
        results.push(run_gradcheck("mean_cols", &mut store, |g, s| {
            let x = g.param(s, "x")?;
            let m = g.mean_cols(x, &[0, 2, 4])?;
            let mt = g.transpose(m);
            let y = g.matmul(mt, x)?;
            Ok(g.mean_all(y))
        }));
    }
    {
        let mut store = store_with(&[("x", grid_values(3, 1, 1.0, 0.5))]);
        results.push(run_gradcheck("l2_normalize", &mut store, |g, s| {
            let x = g.param(s, "x")?;
            let n = g.l2_normalize(x);
            let nt = g.transpose(n);
            let y = g.matmul(nt, x)?;
            Ok(g.mean_all(y))
        }));
    }
    {
        let mut store = store_with(&[
            ("a", grid_values(3, 1, 1.0, 0.9)),
            ("b", grid_values(3, 1, 0.8, 2.2)),
        ]);
        results.push(run_gradcheck("euclidean_distance", &mut store, |g, s| {
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            g.euclidean_distance(a, b)
        }));
    }
    {
        let mut store = store_with(&[("x", grid_values(4, 3, 1.3, 1.2))]);
        results.push(run_gradcheck("softmax_cols", &mut store, |g, s| {
            let x = g.param(s, "x")?;
            let p = g.softmax_cols(x);
            let top = g.row_slice(p, 0, 2)?;
            Ok(g.mean_all(top))
        }));
    }
    {
        let target = Matrix::from_fn(2, 3, |i, j| ((i + j) % 2) as f64);
        let mask = Matrix::from_fn(2, 3, |i, j| ((i * 3 + j) % 3 != 0) as usize as f64);
        for reduction in [Reduction::Sum, Reduction::Mean] {
            let label = match reduction {
                Reduction::Sum => "bce_sum",
                Reduction::Mean => "bce_mean",
            };
            let mut store = store_with(&[("x", grid_values(2, 3, 1.0, 0.7))]);
            let (t, m) = (target.clone(), mask.clone());
            results.push(run_gradcheck(label, &mut store, move |g, s| {
                let x = g.param(s, "x")?;
                let p = g.sigmoid(x);
                g.binary_cross_entropy(p, &t, &m, reduction)
            }));
        }
    }
    {
        let mut store = store_with(&[("x", grid_values(4, 3, 1.1, 2.0))]);
        results.push(run_gradcheck("log_loss_picks", &mut store, |g, s| {
            let x = g.param(s, "x")?;
            let p = g.softmax_cols(x);
            g.log_loss_picks(p, &[(0, 0), (2, 1), (3, 2)])
        }));
    }
    {
        let mut store = store_with(&[("x", grid_values(3, 4, 1.0, 0.25))]);
        results.push(run_gradcheck("mean_all", &mut store, |g, s| {
            let x = g.param(s, "x")?;
            let xt = g.transpose(x);
            let y = g.matmul(x, xt)?;
            Ok(g.mean_all(y))
        }));
    }

    results
}

/// Composed-loss gradient checks for a tiny video (T=6, input width 8,
/// subspace width 2, 2 classes): the base objective over the base module's
/// parameters, and the full subspace objective (triplet + classification +
/// residual) over the subspace module's parameters.
pub fn composed_gradient_checks() -> Vec<CheckResult> {
    let t = 6;
    let d_o = 8;
    let d = 2;
    let n = 2;
    let features = grid_values(d_o, t, 0.9, 0.45);
    let labels = vec![1usize];
    let mut results = Vec::new();

    {
        let base = BaseModule::new("base", d_o, n).expect("valid dims");
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(substream(11, "init"));
        base.init_params(&mut store, &mut rng).expect("init");
        let (feats, labels) = (features.clone(), labels.clone());
        results.push(run_gradcheck("composed_base_loss", &mut store, move |g, s| {
            let x = g.constant(feats.clone());
            let fwd = base.forward(g, s, x)?;
            base_loss(g, fwd.video_fg, fwd.video_bg, &labels, n)
        }));
    }
    {
        let sub = SubspaceModule::new("sub", d_o, d, n, true).expect("valid dims");
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(substream(13, "init"));
        sub.init_params(&mut store, &mut rng).expect("init");
        let partition = SnippetPartition {
            action: vec![0, 1],
            context_rgb: vec![2],
            context_flow: vec![3],
            background: vec![4],
            theta_high: 0.7,
            theta_low: 0.3,
        };
        let weights = LossWeights::default();
        let (feats, labels) = (features.clone(), labels.clone());
        results.push(run_gradcheck(
            "composed_subspace_loss",
            &mut store,
            move |g, s| {
                let x = g.constant(feats.clone());
                let fwd = sub.forward(g, s, x)?;
                let losses =
                    total_subspace_loss(g, &fwd, &partition, &labels, n, 1.0, &weights, true)?;
                Ok(losses.total)
            },
        ));
    }
    results
}

/// Every check, in a stable order.
pub fn run_all() -> Vec<CheckResult> {
    let mut results = vec![
        partition_grid_check(),
        oic_random_check(1000, 41),
        nms_random_check(200, 42),
        ap_enumeration_check(),
        loss_closed_form_check(),
        cls_loss_enumeration_check(100, 43),
    ];
    results.extend(op_gradient_checks());
    results.extend(composed_gradient_checks());
    results
}
