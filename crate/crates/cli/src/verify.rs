//! Runtime verification suites.
//!
//! Each suite checks a core kernel against an independent reference written
//! as deliberately naive explicit loops straight from the definitions —
//! no max-subtraction, no shared code with the kernels — or against central
//! finite differences of the kernel's own value. The suites power the
//! `verify` subcommand and the acceptance tests.

use rand::Rng;

use etfcl_core::batch::EmbeddingBatch;
use etfcl_core::buffer::ReplayBuffer;
use etfcl_core::etf::{etf_max_deviation, generate_etf, ClassPrototypeMap, PrototypeSet};
use etfcl_core::linalg::{dot, norm, Mat};
use etfcl_core::losses::{
    alpha_schedule, fnc2_loss, hsd_loss, ird_loss, sprd_loss, supcon_loss, DistillationConfig,
    LossOutput, PlasticityConfig,
};
use etfcl_core::metrics::{average_accuracy, average_forgetting, nc_diagnostics, AccuracyMatrix};
use etfcl_core::rng::seeded;
use etfcl_core::ClassId;

/// Floor for relative-error denominators: below this scale the comparison is
/// effectively absolute, since central differences at h = 1e-6 cannot
/// resolve components much below ~1e-9.
const REL_FLOOR: f64 = 1e-3;

pub const GRAD_TOL: f64 = 1e-5;
pub const VALUE_TOL: f64 = 1e-10;
pub const ETF_TOL: f64 = 1e-9;
pub const METRIC_TOL: f64 = 1e-12;
pub const NC_TOL: f64 = 1e-10;

// ---- explicit-loop reference implementations -------------------------------

pub mod oracle {
    use super::*;

    fn signed_pow(base: f64, gamma: f64) -> f64 {
        if gamma == 0.0 {
            1.0
        } else if base >= 0.0 {
            base.powf(gamma)
        } else {
            // Negative base: real only for integer exponents.
            let m = (-base).powf(gamma);
            if (gamma as i64) % 2 == 0 {
                m
            } else {
                -m
            }
        }
    }

    pub fn supcon_value(batch: &EmbeddingBatch, tau: f64) -> f64 {
        let n = batch.len();
        let mut acc = 0.0;
        for i in 0..n {
            if !batch.is_anchor(i) {
                continue;
            }
            let mut positives = Vec::new();
            for j in 0..n {
                if j != i && batch.is_anchor(j) && batch.label(j) == batch.label(i) {
                    positives.push(j);
                }
            }
            let mut den = 0.0;
            for k in 0..n {
                if k != i {
                    den += (dot(batch.embedding(i), batch.embedding(k)) / tau).exp();
                }
            }
            for &j in &positives {
                let num = (dot(batch.embedding(i), batch.embedding(j)) / tau).exp();
                acc += -(1.0 / positives.len() as f64) * (num / den).ln();
            }
        }
        acc
    }

    #[allow(clippy::too_many_arguments)]
    pub fn fnc2_value(
        batch: &EmbeddingBatch,
        old_prototypes: &Mat,
        map: &ClassPrototypeMap,
        set: &PrototypeSet,
        tau: f64,
        gamma: f64,
    ) -> f64 {
        let n = batch.len();
        let mut acc = 0.0;
        for i in 0..n {
            if !batch.is_anchor(i) {
                continue;
            }
            let zi = batch.embedding(i);
            let mut positives = Vec::new();
            for j in 0..n {
                if j != i && batch.is_anchor(j) && batch.label(j) == batch.label(i) {
                    positives.push(j);
                }
            }
            let mut den = 0.0;
            for k in 0..n {
                if k != i {
                    den += (dot(zi, batch.embedding(k)) / tau).exp();
                }
            }
            for p in old_prototypes.iter_rows() {
                den += (dot(zi, p) / tau).exp();
            }
            let weight = 1.0 / (positives.len() as f64 + 1.0);
            for &j in &positives {
                let c = (dot(zi, batch.embedding(j)) / tau).exp() / den;
                acc -= weight * signed_pow(1.0 - c, gamma) * c.ln();
            }
            let vertex = map.vertex_for(batch.label(i)).unwrap();
            let r = (dot(zi, set.vertex(vertex)) / tau).exp() / den;
            acc -= weight * signed_pow(1.0 - r, gamma) * r.ln();
        }
        acc
    }

    pub fn ird_value(current: &Mat, past: &Mat, kappa_past: f64, kappa_current: f64) -> f64 {
        let n = current.rows();
        let mut acc = 0.0;
        for i in 0..n {
            let mut den_prev = 0.0;
            let mut den_cur = 0.0;
            for k in 0..n {
                if k != i {
                    den_prev += (dot(past.row(i), past.row(k)) / kappa_past).exp();
                    den_cur += (dot(current.row(i), current.row(k)) / kappa_current).exp();
                }
            }
            for j in 0..n {
                if j != i {
                    let o_prev = (dot(past.row(i), past.row(j)) / kappa_past).exp() / den_prev;
                    let o_cur =
                        (dot(current.row(i), current.row(j)) / kappa_current).exp() / den_cur;
                    acc += -o_prev * o_cur.ln();
                }
            }
        }
        acc
    }

    pub fn sprd_value(
        current: &Mat,
        past: &Mat,
        prototypes: &Mat,
        zeta_past: f64,
        zeta_current: f64,
    ) -> f64 {
        let mut acc = 0.0;
        for i in 0..current.rows() {
            let mut den_prev = 0.0;
            let mut den_cur = 0.0;
            for p in prototypes.iter_rows() {
                den_prev += (dot(past.row(i), p) / zeta_past).exp();
                den_cur += (dot(current.row(i), p) / zeta_current).exp();
            }
            for p in prototypes.iter_rows() {
                let q_prev = (dot(past.row(i), p) / zeta_past).exp() / den_prev;
                let q_cur = (dot(current.row(i), p) / zeta_current).exp() / den_cur;
                acc += -q_prev * q_cur.ln();
            }
        }
        acc
    }

    pub fn average_accuracy(rows: &[Vec<f64>]) -> f64 {
        let last = rows.last().unwrap();
        let mut acc = 0.0;
        for &a in last {
            acc += a;
        }
        acc / last.len() as f64
    }

    pub fn average_forgetting(rows: &[Vec<f64>]) -> f64 {
        let big_t = rows.len();
        let mut acc = 0.0;
        for i in 1..big_t {
            let mut worst = f64::NEG_INFINITY;
            for t in i..big_t {
                let drop = rows[t - 1][i - 1] - rows[big_t - 1][i - 1];
                if drop > worst {
                    worst = drop;
                }
            }
            acc += worst;
        }
        acc / (big_t - 1) as f64
    }

    /// Collapse scores straight from the definitions: per-class means,
    /// global mean of class means, covariance traces, centered cosines.
    pub fn nc_scores(
        embeddings: &Mat,
        labels: &[ClassId],
        set: &PrototypeSet,
        map: &ClassPrototypeMap,
    ) -> (f64, f64) {
        let mut classes: Vec<ClassId> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let d = embeddings.cols();
        let k = classes.len();

        let mut means = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (row, &l) in embeddings.iter_rows().zip(labels) {
            let ci = classes.iter().position(|&c| c == l).unwrap();
            counts[ci] += 1;
            for (m, &v) in means[ci].iter_mut().zip(row) {
                *m += v;
            }
        }
        for (mean, &count) in means.iter_mut().zip(&counts) {
            for m in mean.iter_mut() {
                *m /= count as f64;
            }
        }

        let mut global = vec![0.0; d];
        for mean in &means {
            for (g, &m) in global.iter_mut().zip(mean) {
                *g += m;
            }
        }
        for g in global.iter_mut() {
            *g /= k as f64;
        }

        let mut within = 0.0;
        for (ci, &c) in classes.iter().enumerate() {
            let mut trace = 0.0;
            for (row, &l) in embeddings.iter_rows().zip(labels) {
                if l == c {
                    for (v, m) in row.iter().zip(&means[ci]) {
                        trace += (v - m) * (v - m);
                    }
                }
            }
            within += trace / counts[ci] as f64;
        }
        within /= k as f64;

        let mut between = 0.0;
        let mut cos = 0.0;
        for (ci, &c) in classes.iter().enumerate() {
            let centered: Vec<f64> = means[ci].iter().zip(&global).map(|(m, g)| m - g).collect();
            let dist = norm(&centered);
            between += dist * dist;
            let proto = set.vertex(map.vertex_for(c).unwrap());
            cos += dot(&centered, proto) / dist;
        }
        between /= k as f64;
        (within / between, cos / k as f64)
    }
}

// ---- finite differences -----------------------------------------------------

/// Central finite-difference gradient of `value` with respect to every
/// embedding coordinate, step `h`.
pub fn finite_difference_grad<F: Fn(&EmbeddingBatch) -> f64>(
    batch: &EmbeddingBatch,
    h: f64,
    value: F,
) -> Mat {
    let mut grad = Mat::zeros(batch.len(), batch.dim());
    for view in 0..batch.len() {
        for coord in 0..batch.dim() {
            let mut plus = batch.clone();
            plus.nudge(view, coord, h);
            let mut minus = batch.clone();
            minus.nudge(view, coord, -h);
            grad.set(view, coord, (value(&plus) - value(&minus)) / (2.0 * h));
        }
    }
    grad
}

/// Max elementwise relative error with a floor on the denominator.
pub fn max_relative_error(analytic: &Mat, numeric: &Mat) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

// ---- random fixtures ---------------------------------------------------------

/// Unit-sphere batch of `sources` paired views in `dim` dimensions, labels
/// drawn from `classes`. `buffer_sources` trailing sources are flagged
/// non-anchor.
pub fn random_batch(
    sources: usize,
    dim: usize,
    classes: &[ClassId],
    buffer_sources: usize,
    seed: u64,
) -> EmbeddingBatch {
    let mut rng = seeded(seed);
    let n_views = 2 * sources;
    let mut rows = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let mut v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let len = norm(&v);
        v.iter_mut().for_each(|x| *x /= len);
        rows.push(v);
    }
    let mut labels = Vec::with_capacity(n_views);
    let mut is_anchor = Vec::with_capacity(n_views);
    for s in 0..sources {
        let label = classes[rng.random_range(0..classes.len())];
        labels.push(label);
        labels.push(label);
        let anchor = s < sources - buffer_sources;
        is_anchor.push(anchor);
        is_anchor.push(anchor);
    }
    let view_pair = (0..n_views).map(|i| i ^ 1).collect();
    EmbeddingBatch::new(Mat::from_rows(&rows), labels, view_pair, is_anchor).unwrap()
}

fn random_unit_rows(rows: usize, dim: usize, seed: u64) -> Mat {
    let mut rng = seeded(seed);
    let mut m = Mat::zeros(rows, dim);
    for r in 0..rows {
        let row = m.row_mut(r);
        for v in row.iter_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let len = norm(row);
        row.iter_mut().for_each(|x| *x /= len);
    }
    m
}

// ---- suites -------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub pass: bool,
    pub lines: Vec<String>,
}

impl SuiteReport {
    fn line(&mut self, s: String) {
        self.lines.push(s);
    }
}

/// Prototype geometry: norms and pairwise inner products for a spread of
/// frame sizes, plus seed determinism.
pub fn etf_suite() -> SuiteReport {
    let mut report = SuiteReport {
        name: "etf",
        pass: true,
        lines: Vec::new(),
    };
    let mut worst = 0.0f64;
    for k in [2usize, 3, 10, 50] {
        let d = (k - 1).max(8);
        match generate_etf(k, d, 20_000 + k as u64) {
            Ok(set) => {
                let dev = etf_max_deviation(&set);
                worst = worst.max(dev);
                report.line(format!("k={k:>2} d={d:>2}: max geometry deviation {dev:.3e}"));
            }
            Err(e) => {
                report.pass = false;
                report.line(format!("k={k} d={d}: construction failed: {e}"));
            }
        }
    }
    let a = generate_etf(10, 12, 4).unwrap();
    let b = generate_etf(10, 12, 4).unwrap();
    if a.vectors().data() != b.vectors().data() {
        report.pass = false;
        report.line("seed determinism violated".into());
    }
    if worst > ETF_TOL {
        report.pass = false;
    }
    report.line(format!("max deviation {worst:.3e} (tolerance {ETF_TOL:.0e})"));
    report
}

struct LossCase {
    name: String,
    out: LossOutput,
    value_fn: Box<dyn Fn(&EmbeddingBatch) -> f64>,
    oracle_value: f64,
}

fn distill_cfg() -> DistillationConfig {
    DistillationConfig {
        kappa_past: 0.01,
        kappa_current: 0.2,
        zeta_past: 0.01,
        zeta_current: 0.2,
        warmup_epochs: 30,
        total_epochs: 100,
    }
}

fn loss_cases(
    batch: &EmbeddingBatch,
    seed: u64,
    set: &PrototypeSet,
    map: &ClassPrototypeMap,
) -> Vec<LossCase> {
    let old = set.gather(&[0, 1]);
    let all = set.gather(&[0, 1, 2, 3]);
    let past = random_unit_rows(batch.len(), batch.dim(), seed ^ 0x5eed);
    let tau = 0.5;
    let dcfg = distill_cfg();

    let mut cases = Vec::new();

    cases.push(LossCase {
        name: "supcon".into(),
        out: supcon_loss(batch, tau).unwrap(),
        value_fn: Box::new(move |b| supcon_loss(b, tau).unwrap().value),
        oracle_value: oracle::supcon_value(batch, tau),
    });

    for gamma in [0.0, 1.0, 4.0] {
        let cfg = PlasticityConfig::new(tau, gamma);
        let set_c = set.clone();
        let map_c = map.clone();
        let old_c = old.clone();
        cases.push(LossCase {
            name: format!("fnc2(gamma={gamma})"),
            out: fnc2_loss(batch, &old, map, set, &cfg).unwrap(),
            value_fn: Box::new(move |b| {
                fnc2_loss(b, &old_c, &map_c, &set_c, &cfg).unwrap().value
            }),
            oracle_value: oracle::fnc2_value(batch, &old, map, set, tau, gamma),
        });
    }

    {
        let past_c = past.clone();
        cases.push(LossCase {
            name: "ird".into(),
            out: ird_loss(batch, &past, &dcfg).unwrap(),
            value_fn: Box::new(move |b| ird_loss(b, &past_c, &dcfg).unwrap().value),
            oracle_value: oracle::ird_value(
                batch.embeddings(),
                &past,
                dcfg.kappa_past,
                dcfg.kappa_current,
            ),
        });
    }

    {
        let past_c = past.clone();
        let all_c = all.clone();
        cases.push(LossCase {
            name: "sprd".into(),
            out: sprd_loss(batch, &past, &all, &dcfg).unwrap(),
            value_fn: Box::new(move |b| sprd_loss(b, &past_c, &all_c, &dcfg).unwrap().value),
            oracle_value: oracle::sprd_value(
                batch.embeddings(),
                &past,
                &all,
                dcfg.zeta_past,
                dcfg.zeta_current,
            ),
        });
    }

    // Blend epochs chosen to hit weights 0, 0.25 and 0.7.
    for epoch in [30usize, 55, 100] {
        let alpha = alpha_schedule(epoch, &dcfg);
        let past_c = past.clone();
        let all_c = all.clone();
        let expected = (1.0 - alpha)
            * oracle::ird_value(batch.embeddings(), &past, dcfg.kappa_past, dcfg.kappa_current)
            + alpha
                * oracle::sprd_value(
                    batch.embeddings(),
                    &past,
                    &all,
                    dcfg.zeta_past,
                    dcfg.zeta_current,
                );
        cases.push(LossCase {
            name: format!("hsd(alpha={alpha})"),
            out: hsd_loss(batch, &past, &all, &dcfg, epoch).unwrap(),
            value_fn: Box::new(move |b| {
                hsd_loss(b, &past_c, &all_c, &dcfg, epoch).unwrap().value
            }),
            oracle_value: expected,
        });
    }

    cases
}

/// Analytic gradients against central finite differences (h = 1e-6) and
/// vectorized values against the explicit-loop oracles, over `batches`
/// seeded random batches.
pub fn grad_suite(batches: usize) -> SuiteReport {
    let mut report = SuiteReport {
        name: "grad",
        pass: true,
        lines: Vec::new(),
    };
    let set = generate_etf(4, 8, 99).unwrap();
    let mut map = ClassPrototypeMap::new();
    map.assign_task(&[0, 1]).unwrap();
    map.assign_task(&[2, 3]).unwrap();

    let h = 1e-6;
    let mut worst_grad = 0.0f64;
    let mut worst_value = 0.0f64;
    let mut worst_case = String::new();
    for seed in 0..batches as u64 {
        // Classes 2 and 3 are "current"; vertices of 0 and 1 act as the
        // previous tasks' prototypes. Odd seeds get one buffer-origin
        // source so the asymmetric variants are exercised too.
        let batch = random_batch(4, 8, &[2, 3], (seed % 2) as usize, seed);
        for case in loss_cases(&batch, seed, &set, &map) {
            let numeric = finite_difference_grad(&batch, h, case.value_fn.as_ref());
            let rel = max_relative_error(&case.out.grad_z, &numeric);
            if rel > worst_grad {
                worst_grad = rel;
                worst_case = format!("{} seed {seed}", case.name);
            }
            worst_value = worst_value.max((case.out.value - case.oracle_value).abs());
        }
    }
    if worst_grad > GRAD_TOL || worst_value > VALUE_TOL {
        report.pass = false;
    }
    report.line(format!(
        "max gradient relative error {worst_grad:.3e} at {worst_case} (tolerance {GRAD_TOL:.0e})"
    ));
    report.line(format!(
        "max value deviation from loop oracle {worst_value:.3e} (tolerance {VALUE_TOL:.0e})"
    ));
    report
}

/// Reservoir retention law: every item of a length-`stream_len` stream ends
/// up retained with probability capacity/stream_len, estimated over
/// `trials` independent reservoirs.
pub fn reservoir_suite(capacity: usize, stream_len: usize, trials: usize) -> SuiteReport {
    let mut report = SuiteReport {
        name: "reservoir",
        pass: true,
        lines: Vec::new(),
    };
    let mut counts = vec![0u64; stream_len];
    for t in 0..trials {
        let mut buf = ReplayBuffer::new(capacity, t as u64);
        for i in 0..stream_len {
            buf.reservoir_insert(vec![i as f64], i as ClassId, 1);
        }
        for e in buf.entries() {
            counts[e.label as usize] += 1;
        }
    }
    let expected = capacity as f64 / stream_len as f64;
    let mut worst = 0.0f64;
    for &c in &counts {
        worst = worst.max((c as f64 / trials as f64 - expected).abs());
    }
    let tol = 0.002;
    if worst > tol {
        report.pass = false;
    }
    report.line(format!(
        "per-item retention deviates from {expected} by at most {worst:.5} over {trials} trials \
         (tolerance {tol})"
    ));
    report
}

/// Accuracy/forgetting formulas and collapse diagnostics against the loop
/// oracles, over random lower-triangular matrices and random clouds.
pub fn metrics_suite() -> SuiteReport {
    let mut report = SuiteReport {
        name: "metrics",
        pass: true,
        lines: Vec::new(),
    };
    let mut rng = seeded(1234);
    let mut worst_metric = 0.0f64;
    for _ in 0..100 {
        let t = rng.random_range(2..=8usize);
        let rows: Vec<Vec<f64>> = (1..=t)
            .map(|len| (0..len).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let m = AccuracyMatrix::from_rows(rows.clone()).unwrap();
        let aa = average_accuracy(&m).unwrap();
        let f = average_forgetting(&m).unwrap();
        worst_metric = worst_metric.max((aa - oracle::average_accuracy(&rows)).abs());
        worst_metric = worst_metric.max((f - oracle::average_forgetting(&rows)).abs());
    }
    // The two-task case by hand: 0.9 then 0.7 on the old task, 0.8 on the
    // new one; exactly 0.2 forgotten.
    let hand = AccuracyMatrix::from_rows(vec![vec![0.9], vec![0.7, 0.8]]).unwrap();
    let f_hand = average_forgetting(&hand).unwrap();
    if (f_hand - 0.2).abs() > 1e-15 {
        report.pass = false;
        report.line(format!("hand-checked forgetting came out {f_hand}, expected 0.2"));
    }
    if worst_metric > METRIC_TOL {
        report.pass = false;
    }
    report.line(format!(
        "max accuracy/forgetting deviation from loop oracle {worst_metric:.3e} \
         (tolerance {METRIC_TOL:.0e})"
    ));

    let set = generate_etf(4, 8, 77).unwrap();
    let mut map = ClassPrototypeMap::new();
    map.assign_task(&[0, 1, 2, 3]).unwrap();
    let mut worst_nc = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = seeded(seed * 31 + 7);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..4u32 {
            for _ in 0..50 {
                let v: Vec<f64> = set
                    .vertex(c as usize)
                    .iter()
                    .map(|&p| 0.5 * p + 0.4 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                rows.push(v);
                labels.push(c);
            }
        }
        let embeddings = Mat::from_rows(&rows);
        let nc = nc_diagnostics(&embeddings, &labels, &set, &map).unwrap();
        let (nc1, nc2) = oracle::nc_scores(&embeddings, &labels, &set, &map);
        worst_nc = worst_nc.max((nc.nc1_score - nc1).abs());
        worst_nc = worst_nc.max((nc.nc2_score - nc2).abs());
    }
    if worst_nc > NC_TOL {
        report.pass = false;
    }
    report.line(format!(
        "max collapse-score deviation from loop oracle {worst_nc:.3e} (tolerance {NC_TOL:.0e})"
    ));
    report
}
