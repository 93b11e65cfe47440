//! Frame-operator eigenvalues, irrep filter functions for
//! number-resolved outcomes, the particle-loss indicator, and the
//! post-selected mean estimator over record streams.

use crate::cg::{CGTable, Coupling, TableStore};
use crate::error::{Error, Result};
use crate::linopt::{amplitude, ExperimentRecord, PassiveUnitary};
use crate::repcore::{
    binomial, biguint_to_f64, dim_lambda, dim_sector, dual_pattern, dual_phase, enumerate_sector,
    fock_to_gt, FockVector, IrrepLabel,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Frame-operator eigenvalue for number-resolved detection, stored as
/// an exact rational.
#[derive(Clone, Debug)]
pub struct FrameEigenvalue {
    pub label: IrrepLabel,
    pub value: BigRational,
}

impl FrameEigenvalue {
    pub fn as_f64(&self) -> f64 {
        self.value.to_f64().expect("frame eigenvalue fits in f64")
    }
}

/// Closed form (m−1) / ((2k+m−1)·C(k+m−2, k)).
pub fn frame_eigenvalue_pnr(label: &IrrepLabel) -> FrameEigenvalue {
    let k = label.k as u64;
    let m = label.m as u64;
    let num = BigInt::from(m - 1);
    let den = BigInt::from(2 * k + m - 1) * BigInt::from(binomial(k + m - 2, k));
    let value = BigRational::new(num, den);
    debug_assert!(value.is_positive());
    FrameEigenvalue {
        label: *label,
        value,
    }
}

/// Per-irrep data the filter needs: the frame eigenvalue, the input
/// overlap Σ_M (C_{N0,N̄0}^M)², and the amortized sector vector
/// v(N′) = Σ_M C_{N0,N̄0}^M · C_{N′,N̄′}^M over zero-weight M.
pub struct IrrepFilterData {
    pub label: IrrepLabel,
    pub eigenvalue: FrameEigenvalue,
    pub input_overlap: f64,
    pub(crate) overlap: Vec<f64>,
}

/// Immutable context shared by all record evaluations for one (n, m, input).
pub struct FilterContext {
    pub n: u32,
    pub m: u32,
    pub input: FockVector,
    pub(crate) input_phase_negative: bool,
    pub(crate) sector: Vec<FockVector>,
    pub(crate) sector_phase_negative: Vec<bool>,
    per_irrep: Vec<IrrepFilterData>,
}

fn phase_negative(exponent: i64) -> bool {
    exponent.rem_euclid(2) == 1
}

pub(crate) fn build_filter_context_from_tables(
    n: u32,
    m: u32,
    input: FockVector,
    tables: &[Arc<CGTable>],
) -> Result<FilterContext> {
    if input.m() != m as usize || input.total() != n {
        return Err(Error::Argument(format!(
            "input {input} does not match n={n}, m={m}"
        )));
    }
    if tables.len() != n as usize + 1 {
        return Err(Error::Argument(format!(
            "need {} coupling tables, got {}",
            n + 1,
            tables.len()
        )));
    }
    let sector = enumerate_sector(n, m);
    let sector_gt: Vec<_> = sector.iter().map(fock_to_gt).collect();
    let sector_dual: Vec<_> = sector_gt.iter().map(dual_pattern).collect();
    let sector_phase_negative: Vec<bool> = sector_gt
        .iter()
        .map(|p| phase_negative(dual_phase(p)))
        .collect();
    let input_gt = fock_to_gt(&input);
    let input_dual = dual_pattern(&input_gt);
    let input_phase_negative = phase_negative(dual_phase(&input_gt));

    let mut per_irrep = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        let label = IrrepLabel::new(k, m)?;
        let table = &tables[k as usize];
        let expect = Coupling::symmetric_conjugate(n, m, k)?;
        if table.coupling() != &expect {
            return Err(Error::Argument(format!(
                "table {} does not match expected coupling {}",
                table.coupling().key(),
                expect.key()
            )));
        }
        // Zero-weight patterns of the k-labeled target have all weight
        // components equal to k.
        let zero_weight: Vec<usize> = table
            .target_patterns()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.weight().iter().all(|&w| w == k as i64))
            .map(|(i, _)| i)
            .collect();
        let mut c0 = Vec::with_capacity(zero_weight.len());
        for &it in &zero_weight {
            let v = table.coefficient(
                &input_gt,
                &input_dual,
                &table.target_patterns()[it],
                1,
            )?;
            c0.push(v);
        }
        let input_overlap: f64 = c0.iter().map(|v| v * v).sum();
        let mut overlap = vec![0.0f64; sector.len()];
        for (si, (sg, sd)) in sector_gt.iter().zip(&sector_dual).enumerate() {
            let mut acc = 0.0f64;
            for (pos, &it) in zero_weight.iter().enumerate() {
                // Structurally-zero input coefficients prune the sum.
                if c0[pos].abs() < 1e-12 {
                    continue;
                }
                acc += c0[pos]
                    * table.coefficient(sg, sd, &table.target_patterns()[it], 1)?;
            }
            overlap[si] = acc;
        }
        per_irrep.push(IrrepFilterData {
            label,
            eigenvalue: frame_eigenvalue_pnr(&label),
            input_overlap,
            overlap,
        });
    }
    Ok(FilterContext {
        n,
        m,
        input,
        input_phase_negative,
        sector,
        sector_phase_negative,
        per_irrep,
    })
}

/// Builds the filter context, creating or loading the coupling tables
/// through the store.
pub fn build_filter_context(
    n: u32,
    m: u32,
    input: FockVector,
    store: &mut TableStore,
) -> Result<FilterContext> {
    let mut tables = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        tables.push(store.get(&Coupling::symmetric_conjugate(n, m, k)?)?);
    }
    build_filter_context_from_tables(n, m, input, &tables)
}

impl FilterContext {
    pub fn irrep(&self, k: u32) -> Result<&IrrepFilterData> {
        self.per_irrep.get(k as usize).ok_or_else(|| {
            Error::Argument(format!("irrep label k={k} out of range 0..={}", self.n))
        })
    }

    /// Ideal noiseless signal level Tr[ρ P_k(ρ)] = Σ_M (C_{N0,N̄0}^M)².
    pub fn expected_plateau(&self, k: u32) -> Result<f64> {
        Ok(self.irrep(k)?.input_overlap)
    }
}

/// Evaluates the irrep filter on one record's outcome and composite
/// transformation. Zero whenever the outcome does not conserve the
/// particle number.
pub fn filter_pnr(
    ctx: &FilterContext,
    k: u32,
    outcome: &FockVector,
    g: &PassiveUnitary,
) -> Result<f64> {
    if outcome.m() != ctx.m as usize || g.m() != ctx.m as usize {
        return Err(Error::Argument(format!(
            "outcome/transformation mode count does not match context m={}",
            ctx.m
        )));
    }
    let data = ctx.irrep(k)?;
    if outcome.total() != ctx.n {
        return Ok(0.0);
    }
    let mut acc = 0.0f64;
    for (si, state) in ctx.sector.iter().enumerate() {
        let v = data.overlap[si];
        if v == 0.0 {
            continue;
        }
        // |per(g_{outcome,N'})|² / (outcome!·N'!) is the squared
        // amplitude; everything here is real by construction.
        let prob = amplitude(g, outcome, state)?.norm_sqr();
        let term = v * prob;
        if ctx.sector_phase_negative[si] {
            acc -= term;
        } else {
            acc += term;
        }
    }
    let s = data.eigenvalue.as_f64();
    let signed = if ctx.input_phase_negative { -acc } else { acc };
    Ok(signed / s)
}

/// Particle-number indicator: 1 iff the outcome conserves n particles.
pub fn filter_indicator(outcome: &FockVector, n: u32) -> f64 {
    if outcome.total() == n {
        1.0
    } else {
        0.0
    }
}

/// Which statistic to accumulate over records.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterSpec {
    /// Irrep filter for label k; uses a FilterContext.
    Irrep { k: u32 },
    /// Survival indicator for expected particle count n.
    Indicator { n: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalPoint {
    pub seq_len: u32,
    pub estimate: f64,
    pub stderr: f64,
    pub count_used: u64,
}

#[derive(Clone, Debug)]
pub struct RBSignal {
    pub filter_id: String,
    pub points: Vec<SignalPoint>,
    pub warnings: Vec<String>,
}

/// Order-independent deterministic sum.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Per-length mean estimator over a record stream.
///
/// Irrep filters post-select on particle conservation by default
/// (denominator T_pr); pass post_select = false to divide by all shots
/// instead, which folds the survival decay into the signal. The
/// indicator always uses every record.
pub fn estimate_signal(
    records: &[ExperimentRecord],
    spec: FilterSpec,
    ctx: Option<&FilterContext>,
    post_select: bool,
) -> Result<RBSignal> {
    if records.is_empty() {
        return Err(Error::Data("no records given".into()));
    }
    let m = records[0].product.m();
    for rec in records {
        if rec.product.m() != m || rec.outcome.m() != m {
            return Err(Error::Data(
                "records mix mode counts in one stream".into(),
            ));
        }
    }
    if let FilterSpec::Irrep { .. } = spec {
        let ctx = ctx.ok_or_else(|| {
            Error::Dependency("irrep filters need a FilterContext".into())
        })?;
        if ctx.m as usize != m {
            return Err(Error::Data(format!(
                "records have m={m}, context has m={}",
                ctx.m
            )));
        }
        for rec in records {
            if rec.survived && rec.outcome.total() != ctx.n {
                return Err(Error::Data(format!(
                    "surviving record with {} particles in an n={} stream",
                    rec.outcome.total(),
                    ctx.n
                )));
            }
        }
    }
    let mut by_len: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        by_len.entry(rec.seq_len).or_default().push(i);
    }
    let filter_id = match spec {
        FilterSpec::Irrep { k } => format!("irrep-{k}"),
        FilterSpec::Indicator { .. } => "indicator".to_string(),
    };
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for (l, idxs) in by_len {
        let values: Vec<f64> = match spec {
            FilterSpec::Indicator { n } => idxs
                .iter()
                .map(|&i| filter_indicator(&records[i].outcome, n))
                .collect(),
            FilterSpec::Irrep { k } => {
                let ctx = ctx.expect("checked above");
                let chosen: Vec<usize> = if post_select {
                    idxs.iter()
                        .copied()
                        .filter(|&i| records[i].outcome.total() == ctx.n)
                        .collect()
                } else {
                    idxs
                };
                if chosen.is_empty() {
                    warnings.push(format!(
                        "length {l}: no particle-conserving records, point omitted"
                    ));
                    continue;
                }
                chosen
                    .par_iter()
                    .map(|&i| filter_pnr(ctx, k, &records[i].outcome, &records[i].product))
                    .collect::<Result<Vec<f64>>>()?
            }
        };
        let (estimate, stderr) = mean_and_stderr(&values);
        points.push(SignalPoint {
            seq_len: l,
            estimate,
            stderr,
            count_used: values.len() as u64,
        });
    }
    Ok(RBSignal {
        filter_id,
        points,
        warnings,
    })
}

/// CSV with columns seq_len, estimate, stderr, count_used, filter_id.
pub fn write_signal_csv(signal: &RBSignal, out: &mut impl Write) -> Result<()> {
    write_signals_csv(std::slice::from_ref(signal), out)
}

/// Several signals in one CSV stream, single header, file order kept.
pub fn write_signals_csv(signals: &[RBSignal], out: &mut impl Write) -> Result<()> {
    writeln!(out, "seq_len,estimate,stderr,count_used,filter_id")?;
    for signal in signals {
        for p in &signal.points {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{},{}",
                p.seq_len, p.estimate, p.stderr, p.count_used, signal.filter_id
            )?;
        }
    }
    Ok(())
}

/// Reads signals back from the CSV emitted by `write_signal_csv`,
/// one RBSignal per distinct filter_id in file order.
pub fn read_signals_csv(input: &mut impl BufRead) -> Result<Vec<RBSignal>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty signal CSV".into()))??;
    if header.trim() != "seq_len,estimate,stderr,count_used,filter_id" {
        return Err(Error::Data(format!("unexpected CSV header: {header}")));
    }
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<SignalPoint>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "signal CSV line {}: expected 5 fields",
                lineno + 2
            )));
        }
        let parse_err =
            |what: &str| Error::Data(format!("signal CSV line {}: bad {what}", lineno + 2));
        let point = SignalPoint {
            seq_len: fields[0].parse().map_err(|_| parse_err("seq_len"))?,
            estimate: fields[1].parse().map_err(|_| parse_err("estimate"))?,
            stderr: fields[2].parse().map_err(|_| parse_err("stderr"))?,
            count_used: fields[3].parse().map_err(|_| parse_err("count_used"))?,
        };
        let id = fields[4].to_string();
        if !map.contains_key(&id) {
            order.push(id.clone());
        }
        map.entry(id).or_default().push(point);
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let points = map.remove(&id).expect("id recorded on insert");
            RBSignal {
                filter_id: id,
                points,
                warnings: Vec::new(),
            }
        })
        .collect())
}

/// Identity used in tests and the overlaps command: the dimensions of
/// all irreps in the conjugate-action decomposition sum to the squared
/// sector dimension.
pub fn dimension_checksum(n: u32, m: u32) -> bool {
    let total: f64 = (0..=n)
        .map(|k| biguint_to_f64(&dim_lambda(&IrrepLabel::new(k, m).expect("m >= 2"))))
        .sum();
    let d = biguint_to_f64(&dim_sector(n, m));
    (total - d * d).abs() < 1e-6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linopt::haar_unitary;
    use num_bigint::BigUint;
    use num_traits::One;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn context_22() -> FilterContext {
        let mut store = TableStore::new(None);
        build_filter_context(2, 2, FockVector::new(vec![1, 1]).unwrap(), &mut store).unwrap()
    }

    #[test]
    fn frame_eigenvalue_closed_forms() {
        // Two modes: 1/(2k+1).
        for k in 0..5u32 {
            let fe = frame_eigenvalue_pnr(&IrrepLabel::new(k, 2).unwrap());
            let expect = BigRational::new(BigInt::one(), BigInt::from(2 * k + 1));
            assert_eq!(fe.value, expect);
        }
        // Trivial irrep: 1 for every m.
        for m in 2..6u32 {
            let fe = frame_eigenvalue_pnr(&IrrepLabel::new(0, m).unwrap());
            assert!(fe.value.is_one());
        }
        // k=2, m=3: 1/9.
        let fe = frame_eigenvalue_pnr(&IrrepLabel::new(2, 3).unwrap());
        assert_eq!(
            fe.value,
            BigRational::new(BigInt::one(), BigInt::from(9))
        );
    }

    #[test]
    fn frame_eigenvalue_matches_cg_sum() {
        // (1/d_λ)·Σ_N Σ_M (C_{N,N̄}^M)² reproduces the closed form.
        for (n, m) in [(1u32, 2u32), (2, 2), (2, 3), (3, 3)] {
            let mut store = TableStore::new(None);
            let ctx = build_filter_context(
                n,
                m,
                FockVector::collision_free(n, m).unwrap(),
                &mut store,
            )
            .unwrap();
            for k in 0..=n {
                let table = store
                    .get(&Coupling::symmetric_conjugate(n, m, k).unwrap())
                    .unwrap();
                let sector = enumerate_sector(n, m);
                let mut total = 0.0f64;
                for state in &sector {
                    let sg = fock_to_gt(state);
                    let sd = dual_pattern(&sg);
                    for tp in table.target_patterns() {
                        if !tp.weight().iter().all(|&w| w == k as i64) {
                            continue;
                        }
                        let c = table.coefficient(&sg, &sd, tp, 1).unwrap();
                        total += c * c;
                    }
                }
                let d = biguint_to_f64(&dim_lambda(&IrrepLabel::new(k, m).unwrap()));
                let closed = ctx.irrep(k).unwrap().eigenvalue.as_f64();
                assert!(
                    (total / d - closed).abs() < 1e-10,
                    "n={n} m={m} k={k}: {} vs {closed}",
                    total / d
                );
            }
        }
    }

    #[test]
    fn trivial_irrep_filter_is_inverse_dimension() {
        let ctx = context_22();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let g = haar_unitary(2, &mut rng);
            for outcome in enumerate_sector(2, 2) {
                let f = filter_pnr(&ctx, 0, &outcome, &g).unwrap();
                assert!((f - 1.0 / 3.0).abs() < 1e-10, "got {f}");
            }
        }
    }

    #[test]
    fn lost_particle_outcome_gives_zero() {
        let ctx = context_22();
        let g = PassiveUnitary::identity(2);
        let lost = FockVector::new(vec![1, 0]).unwrap();
        for k in 0..=2 {
            assert_eq!(filter_pnr(&ctx, k, &lost, &g).unwrap(), 0.0);
        }
    }

    #[test]
    fn collision_free_square_input_has_zero_adjoint_overlap() {
        // n = m with input 1⃗_n: the k=1 irrep has no overlap with the input.
        for nm in [2u32, 3] {
            let mut store = TableStore::new(None);
            let ctx = build_filter_context(
                nm,
                nm,
                FockVector::collision_free(nm, nm).unwrap(),
                &mut store,
            )
            .unwrap();
            assert!(ctx.expected_plateau(1).unwrap().abs() < 1e-12);
            // Other irreps do overlap.
            assert!(ctx.expected_plateau(0).unwrap() > 1e-3);
            assert!(ctx.expected_plateau(nm).unwrap() > 1e-6);
        }
    }

    #[test]
    fn plateaus_sum_to_one() {
        // Σ_k Tr[ρ P_k(ρ)] = Tr[ρ²] = 1 for a pure input.
        for (n, m) in [(2u32, 2u32), (2, 3), (3, 3)] {
            let mut store = TableStore::new(None);
            let ctx = build_filter_context(
                n,
                m,
                FockVector::collision_free(n, m).unwrap(),
                &mut store,
            )
            .unwrap();
            let total: f64 = (0..=n).map(|k| ctx.expected_plateau(k).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-10, "n={n} m={m}: {total}");
        }
    }

    #[test]
    fn indicator_matches_survived_fraction_semantics() {
        assert_eq!(filter_indicator(&FockVector::new(vec![1, 1]).unwrap(), 2), 1.0);
        assert_eq!(filter_indicator(&FockVector::new(vec![0, 0]).unwrap(), 2), 0.0);
        assert_eq!(filter_indicator(&FockVector::new(vec![2, 1]).unwrap(), 2), 0.0);
    }

    #[test]
    fn identical_records_have_zero_stderr() {
        let ctx = context_22();
        let rec = ExperimentRecord {
            seq_len: 1,
            product: PassiveUnitary::identity(2),
            factors: None,
            outcome: FockVector::new(vec![1, 1]).unwrap(),
            survived: true,
        };
        let records = vec![rec.clone(), rec.clone(), rec];
        let signal =
            estimate_signal(&records, FilterSpec::Irrep { k: 0 }, Some(&ctx), true).unwrap();
        assert_eq!(signal.points.len(), 1);
        assert_eq!(signal.points[0].count_used, 3);
        assert!((signal.points[0].estimate - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(signal.points[0].stderr, 0.0);
    }

    #[test]
    fn empty_length_group_is_omitted_with_warning() {
        let ctx = context_22();
        let surviving = ExperimentRecord {
            seq_len: 1,
            product: PassiveUnitary::identity(2),
            factors: None,
            outcome: FockVector::new(vec![2, 0]).unwrap(),
            survived: true,
        };
        let lost = ExperimentRecord {
            seq_len: 2,
            product: PassiveUnitary::identity(2),
            factors: None,
            outcome: FockVector::new(vec![1, 0]).unwrap(),
            survived: false,
        };
        let records = vec![surviving, lost];
        let signal =
            estimate_signal(&records, FilterSpec::Irrep { k: 0 }, Some(&ctx), true).unwrap();
        assert_eq!(signal.points.len(), 1);
        assert_eq!(signal.points[0].seq_len, 1);
        assert_eq!(signal.warnings.len(), 1);
        assert!(signal.warnings[0].contains("length 2"));
    }

    #[test]
    fn mixed_mode_counts_rejected() {
        let a = ExperimentRecord {
            seq_len: 1,
            product: PassiveUnitary::identity(2),
            factors: None,
            outcome: FockVector::new(vec![1, 1]).unwrap(),
            survived: true,
        };
        let b = ExperimentRecord {
            seq_len: 1,
            product: PassiveUnitary::identity(3),
            factors: None,
            outcome: FockVector::new(vec![1, 1, 0]).unwrap(),
            survived: true,
        };
        let err = estimate_signal(&[a, b], FilterSpec::Indicator { n: 2 }, None, true);
        assert!(err.is_err());
    }

    #[test]
    fn filter_invariant_under_global_sign_flip() {
        let n = 2u32;
        let m = 2u32;
        let input = FockVector::new(vec![1, 1]).unwrap();
        let mut tables = Vec::new();
        let mut flipped = Vec::new();
        for k in 0..=n {
            let c = Coupling::symmetric_conjugate(n, m, k).unwrap();
            let t = crate::cg::build_table(&c).unwrap();
            let mut t2 = crate::cg::build_table(&c).unwrap();
            t2.flip_signs_for_test();
            tables.push(Arc::new(t));
            flipped.push(Arc::new(t2));
        }
        let ctx_a = build_filter_context_from_tables(n, m, input.clone(), &tables).unwrap();
        let ctx_b = build_filter_context_from_tables(n, m, input, &flipped).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g = haar_unitary(2, &mut rng);
        for outcome in enumerate_sector(2, 2) {
            for k in 0..=2 {
                let fa = filter_pnr(&ctx_a, k, &outcome, &g).unwrap();
                let fb = filter_pnr(&ctx_b, k, &outcome, &g).unwrap();
                assert!((fa - fb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn signal_csv_roundtrip() {
        let signal = RBSignal {
            filter_id: "irrep-2".to_string(),
            points: vec![
                SignalPoint {
                    seq_len: 1,
                    estimate: 0.123456789,
                    stderr: 0.001,
                    count_used: 100,
                },
                SignalPoint {
                    seq_len: 2,
                    estimate: -0.5,
                    stderr: 0.0,
                    count_used: 50,
                },
            ],
            warnings: Vec::new(),
        };
        let mut buf = Vec::new();
        write_signal_csv(&signal, &mut buf).unwrap();
        let parsed = read_signals_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].filter_id, "irrep-2");
        assert_eq!(parsed[0].points, signal.points);
    }

    #[test]
    fn dimension_checksum_holds() {
        for (n, m) in [(1u32, 2u32), (2, 2), (3, 3), (4, 4), (2, 5)] {
            assert!(dimension_checksum(n, m));
        }
        let _ = BigUint::from(1u32);
    }
}
