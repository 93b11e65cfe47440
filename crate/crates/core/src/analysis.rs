//! Decay fitting, fidelity aggregation, sequence-length and sampling
//! bounds, irrep weight truncation, and the analytic first and second
//! moments of the number-resolved filter under Haar-random sequences.

use crate::cg::{Coupling, TableStore};
use crate::error::{Error, Result};
use crate::filter::{frame_eigenvalue_pnr, pairwise_sum, RBSignal, SignalPoint};
use crate::repcore::{
    biguint_to_f64, dim_lambda, dim_sector, dual_pattern, dual_phase, enumerate_sector,
    fock_to_gt, FockVector, GTPattern, IrrepLabel,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// Result of fitting the model A·r^l to a signal.
#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub rate: f64,
    pub residual_norm: f64,
    pub amplitude_stderr: f64,
    pub rate_stderr: f64,
    pub iterations: u32,
}

/// Knobs for the guarantee bounds.
#[derive(Clone, Debug)]
pub struct AnalysisConfig {
    /// Assumed perturbation norm for the sequence-length bound.
    pub delta_lambda: f64,
    /// Target additive error of the fitted signal.
    pub alpha: f64,
    /// Accuracy for the sampling-complexity bound.
    pub epsilon: f64,
    /// Confidence for the sampling-complexity bound.
    pub delta: f64,
    /// Number of largest irreps retained in truncations.
    pub u: u32,
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_lambda > 0.0 && self.delta_lambda <= 0.2) {
            return Err(Error::Domain(format!(
                "perturbation norm {} outside (0, 1/5]",
                self.delta_lambda
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!(
                "additive error {} outside (0, 1)",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Domain(
                "sampling accuracy and confidence must lie in (0, 1)".into(),
            ));
        }
        if self.u == 0 {
            return Err(Error::Domain("u must be at least 1".into()));
        }
        Ok(())
    }
}

const MAX_FIT_ITERATIONS: u32 = 200;
const RATE_CEILING: f64 = 1.0 + 1e-6;

struct WeightedPoint {
    l: f64,
    y: f64,
    w: f64,
}

fn usable_points(signal: &RBSignal) -> Result<Vec<WeightedPoint>> {
    let finite: Vec<&SignalPoint> = signal
        .points
        .iter()
        .filter(|p| p.estimate.is_finite() && p.stderr.is_finite())
        .collect();
    let mut lengths: Vec<u32> = finite.iter().map(|p| p.seq_len).collect();
    lengths.sort_unstable();
    lengths.dedup();
    if lengths.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 distinct lengths with finite estimates, have {}",
            lengths.len()
        )));
    }
    // Inverse-variance weights; exact points (zero stderr) get the
    // largest weight present, and a signal with no error bars at all
    // is fitted unweighted.
    let min_pos = finite
        .iter()
        .filter(|p| p.stderr > 0.0)
        .map(|p| p.stderr)
        .fold(f64::INFINITY, f64::min);
    Ok(finite
        .iter()
        .map(|p| {
            let w = if min_pos.is_finite() {
                let s = if p.stderr > 0.0 { p.stderr } else { min_pos };
                1.0 / (s * s)
            } else {
                1.0
            };
            WeightedPoint {
                l: p.seq_len as f64,
                y: p.estimate,
                w,
            }
        })
        .collect())
}

fn log_linear_init(pts: &[WeightedPoint]) -> Result<(f64, f64)> {
    // Weighted least squares on ln|y| = ln|A| + l·ln r, delta-method
    // weights w·y²; the sign rides on A.
    let nonzero: Vec<&WeightedPoint> = pts.iter().filter(|p| p.y != 0.0).collect();
    let mut lengths: Vec<f64> = nonzero.iter().map(|p| p.l).collect();
    lengths.sort_by(f64::total_cmp);
    lengths.dedup();
    if lengths.len() < 2 {
        return Err(Error::Fit(
            "log-linear initializer needs 2 distinct lengths with nonzero estimates".into(),
        ));
    }
    let sign = nonzero
        .iter()
        .max_by(|a, b| a.y.abs().total_cmp(&b.y.abs()))
        .map(|p| p.y.signum())
        .expect("nonempty");
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in &nonzero {
        let w = p.w * p.y * p.y;
        let x = p.l;
        let ly = p.y.abs().ln();
        sw += w;
        sx += w * x;
        sy += w * ly;
        sxx += w * x * x;
        sxy += w * x * ly;
    }
    let det = sw * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return Err(Error::Fit("degenerate design in log-linear initializer".into()));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let r0 = slope.exp().clamp(1e-9, RATE_CEILING);
    let a0 = sign * intercept.exp();
    Ok((a0, r0))
}

fn weighted_sse(pts: &[WeightedPoint], a: f64, r: f64) -> f64 {
    pts.iter()
        .map(|p| {
            let e = p.y - a * r.powf(p.l);
            p.w * e * e
        })
        .sum()
}

/// Fits A·r^l by weighted log-linear initialization followed by damped
/// Gauss-Newton on the original scale.
pub fn fit_exponential(signal: &RBSignal) -> Result<FitResult> {
    let pts = usable_points(signal)?;
    let (mut a, mut r) = log_linear_init(&pts)?;
    let mut sse = weighted_sse(&pts, a, r);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        // Normal equations for the two parameters.
        let (mut jj_aa, mut jj_ar, mut jj_rr, mut g_a, mut g_r) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in &pts {
            let rl = r.powf(p.l);
            let e = p.y - a * rl;
            let ja = rl;
            let jr = if p.l == 0.0 { 0.0 } else { a * p.l * r.powf(p.l - 1.0) };
            jj_aa += p.w * ja * ja;
            jj_ar += p.w * ja * jr;
            jj_rr += p.w * jr * jr;
            g_a += p.w * ja * e;
            g_r += p.w * jr * e;
        }
        if g_a.abs().max(g_r.abs()) < 1e-10 * sse.max(1.0) {
            converged = true;
            break;
        }
        let det = jj_aa * jj_rr - jj_ar * jj_ar;
        if det.abs() < 1e-300 {
            return Err(Error::Fit("singular normal equations in decay fit".into()));
        }
        let da = (jj_rr * g_a - jj_ar * g_r) / det;
        let dr = (jj_aa * g_r - jj_ar * g_a) / det;
        let mut step = 1.0;
        let mut improved = false;
        let sse_prev = sse;
        for _ in 0..40 {
            let a_try = a + step * da;
            let r_try = (r + step * dr).clamp(1e-9, RATE_CEILING);
            let sse_try = weighted_sse(&pts, a_try, r_try);
            if sse_try < sse {
                a = a_try;
                r = r_try;
                sse = sse_try;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        // No improving step, or improvement at the rounding floor: the
        // weighted optimum is reached to floating-point resolution.
        if !improved || sse_prev - sse <= 1e-15 * sse_prev.max(1e-300) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Diagnostics(format!(
            "decay fit did not converge in {MAX_FIT_ITERATIONS} iterations"
        )));
    }
    r = r.clamp(f64::MIN_POSITIVE, RATE_CEILING);

    // Covariance from the final Jacobian; with unit weights the usual
    // residual-variance scaling applies.
    let (mut jj_aa, mut jj_ar, mut jj_rr) = (0.0, 0.0, 0.0);
    let mut weighted = false;
    for p in &pts {
        if p.w != 1.0 {
            weighted = true;
        }
        let ja = r.powf(p.l);
        let jr = if p.l == 0.0 { 0.0 } else { a * p.l * r.powf(p.l - 1.0) };
        jj_aa += p.w * ja * ja;
        jj_ar += p.w * ja * jr;
        jj_rr += p.w * jr * jr;
    }
    let det = jj_aa * jj_rr - jj_ar * jj_ar;
    let (amplitude_stderr, rate_stderr) = if det.abs() < 1e-300 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let scale = if weighted {
            1.0
        } else {
            let df = pts.len() as f64 - 2.0;
            if df > 0.0 {
                sse / df
            } else {
                0.0
            }
        };
        ((scale * jj_rr / det).max(0.0).sqrt(), (scale * jj_aa / det).max(0.0).sqrt())
    };
    Ok(FitResult {
        amplitude: a,
        rate: r,
        residual_norm: sse.sqrt(),
        amplitude_stderr,
        rate_stderr,
        iterations,
    })
}

/// Aggregated figure of merit together with the fraction of the total
/// irrep weight covered by the supplied rates.
#[derive(Clone, Debug, Serialize)]
pub struct FidelityEstimate {
    pub fidelity: f64,
    pub covered_weight: f64,
}

/// dim_sector(n,m)^{-2}·Σ_k d_{λ_k}·r_k over the provided subset.
pub fn rb_fidelity(rates: &BTreeMap<u32, f64>, n: u32, m: u32) -> Result<FidelityEstimate> {
    let d2 = {
        let d = biguint_to_f64(&dim_sector(n, m));
        d * d
    };
    let mut fidelity = 0.0;
    let mut covered = 0.0;
    for (&k, &r) in rates {
        if k > n {
            return Err(Error::Argument(format!("rate for k={k} exceeds n={n}")));
        }
        let dk = biguint_to_f64(&dim_lambda(&IrrepLabel::new(k, m)?));
        fidelity += dk * r;
        covered += dk;
    }
    Ok(FidelityEstimate {
        fidelity: fidelity / d2,
        covered_weight: covered / d2,
    })
}

/// Exact weight fraction covered by the u largest irreps:
/// 1 − [∏_{i=1}^u (n−i+1)/(n+m−i)]².
pub fn combined_weight_exact(n: u32, m: u32, u: u32) -> Result<BigRational> {
    if u == 0 || u > n + 1 {
        return Err(Error::Argument(format!(
            "u={u} outside 1..={} for n={n}",
            n + 1
        )));
    }
    let mut prod = BigRational::one();
    for i in 1..=u as i64 {
        let num = BigInt::from(n as i64 - i + 1);
        let den = BigInt::from(n as i64 + m as i64 - i);
        prod *= BigRational::new(num, den);
    }
    Ok(BigRational::one() - prod.clone() * prod)
}

pub fn combined_weight(n: u32, m: u32, u: u32) -> Result<f64> {
    Ok(combined_weight_exact(n, m, u)?
        .to_f64()
        .expect("weight fraction fits in f64"))
}

/// Sufficient sequence length for the fitted rate of one irrep:
/// ceil((ln(d_λ/s_λ) + 2·ln(1/α) + 4)/(2·ln(1/(2δ)))) with
/// d_λ/s_λ = ((2k+m−1)/(m−1))²·C(k+m−2,k)³.
pub fn min_sequence_length(cfg: &AnalysisConfig, label: &IrrepLabel) -> Result<u64> {
    cfg.validate()?;
    let d = biguint_to_f64(&dim_lambda(label));
    let s = frame_eigenvalue_pnr(label).as_f64();
    let ratio = d / s;
    let numer = ratio.ln() + 2.0 * (1.0 / cfg.alpha).ln() + 4.0;
    let denom = 2.0 * (1.0 / (2.0 * cfg.delta_lambda)).ln();
    Ok((numer / denom).ceil() as u64)
}

/// Chebyshev sampling bound: ceil(variance/(ε²·δ)).
pub fn sample_complexity(variance: f64, epsilon: f64, delta: f64) -> Result<u64> {
    if variance < 0.0 || !variance.is_finite() {
        return Err(Error::Domain(format!("variance {variance} must be ≥ 0")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(
            "accuracy and confidence must lie in (0, 1)".into(),
        ));
    }
    Ok((variance / (epsilon * epsilon * delta)).ceil() as u64)
}

/// Indices of zero-weight target patterns (all weight components equal).
pub(crate) fn zero_weight_targets(patterns: &[GTPattern], level: i64) -> Vec<usize> {
    patterns
        .iter()
        .enumerate()
        .filter(|(_, p)| p.weight().iter().all(|&w| w == level))
        .map(|(i, _)| i)
        .collect()
}

/// Ideal signal level of the irrep filter: Σ_M (C_{N0,N̄0}^M)², constant
/// in the sequence length.
pub fn first_moment(
    k: u32,
    n: u32,
    m: u32,
    input: &FockVector,
    store: &mut TableStore,
) -> Result<f64> {
    if input.m() != m as usize || input.total() != n {
        return Err(Error::Argument(format!(
            "input {input} does not match n={n}, m={m}"
        )));
    }
    if k > n {
        return Err(Error::Argument(format!("k={k} exceeds n={n}")));
    }
    let table = store.get(&Coupling::symmetric_conjugate(n, m, k)?)?;
    let gt = fock_to_gt(input);
    let dual = dual_pattern(&gt);
    let mut total = 0.0;
    for &it in &zero_weight_targets(table.target_patterns(), k as i64) {
        let c = table.coefficient(&gt, &dual, &table.target_patterns()[it], 1)?;
        total += c * c;
    }
    Ok(total)
}

/// Second moment of the irrep filter over Haar-random sequences and
/// number-resolved outcomes of the ideal experiment.
///
/// Contracts, per outcome N and component irrep l ≤ min(n, 2k), the
/// conjugate-action legs on the input and outcome with both square
/// couplings λ_k⊗λ_k→λ_l over every multiplicity copy. Dual-basis
/// phases enter once per Fock leg as in the filter itself.
pub fn second_moment(
    k: u32,
    n: u32,
    m: u32,
    input: &FockVector,
    store: &mut TableStore,
) -> Result<f64> {
    if input.m() != m as usize || input.total() != n {
        return Err(Error::Argument(format!(
            "input {input} does not match n={n}, m={m}"
        )));
    }
    if k > n {
        return Err(Error::Argument(format!("k={k} exceeds n={n}")));
    }
    let lmax = n.min(2 * k);
    let conj_k = store.get(&Coupling::symmetric_conjugate(n, m, k)?)?;
    let mut conj_l = Vec::with_capacity(lmax as usize + 1);
    let mut square_l = Vec::with_capacity(lmax as usize + 1);
    for l in 0..=lmax {
        conj_l.push(store.get(&Coupling::symmetric_conjugate(n, m, l)?)?);
        square_l.push(store.get(&Coupling::square(k, l, m)?)?);
    }

    let sector = enumerate_sector(n, m);
    let sector_gt: Vec<_> = sector.iter().map(fock_to_gt).collect();
    let sector_dual: Vec<_> = sector_gt.iter().map(dual_pattern).collect();
    let sector_sign: Vec<f64> = sector_gt
        .iter()
        .map(|p| if dual_phase(p).rem_euclid(2) == 1 { -1.0 } else { 1.0 })
        .collect();
    let input_gt = fock_to_gt(input);
    let input_sign = if dual_phase(&input_gt).rem_euclid(2) == 1 {
        -1.0
    } else {
        1.0
    };

    let zw_k = zero_weight_targets(conj_k.target_patterns(), k as i64);
    // Conjugate-action legs c[si][pos] for the λ_k target and for each λ_l.
    let legs = |table: &crate::cg::CGTable, zw: &[usize]| -> Result<Vec<Vec<f64>>> {
        sector_gt
            .iter()
            .zip(&sector_dual)
            .map(|(g, d)| {
                zw.iter()
                    .map(|&it| table.coefficient(g, d, &table.target_patterns()[it], 1))
                    .collect()
            })
            .collect()
    };
    let legs_k = legs(&conj_k, &zw_k)?;
    let input_si = sector
        .iter()
        .position(|s| s == input)
        .expect("input lies in its own sector");

    // Square-coupling contraction A(R, r) = Σ_{M,M'} c[M]·c[M']·Q(M,M';R,r)
    // for a fixed state's λ_k legs c.
    struct SquareData {
        d_l: f64,
        mult: usize,
        zw_l_conj: Vec<usize>,
        // q[r-1][pos_R][pos_M][pos_M']
        q: Vec<Vec<Vec<Vec<f64>>>>,
    }
    let mut squares = Vec::with_capacity(lmax as usize + 1);
    for l in 0..=lmax {
        let sq = &square_l[l as usize];
        let zw_l_sq = zero_weight_targets(sq.target_patterns(), l as i64);
        let zw_l_conj = zero_weight_targets(conj_l[l as usize].target_patterns(), l as i64);
        debug_assert_eq!(zw_l_sq.len(), zw_l_conj.len());
        let mult = sq.multiplicity();
        let mut q =
            vec![vec![vec![vec![0.0; zw_k.len()]; zw_k.len()]; zw_l_sq.len()]; mult];
        for (pos_r, &ir) in zw_l_sq.iter().enumerate() {
            for (pos_m, &im) in zw_k.iter().enumerate() {
                for (pos_m2, &im2) in zw_k.iter().enumerate() {
                    for r in 1..=mult {
                        // Factor patterns of the square table share the
                        // canonical order of the conjugate table's targets.
                        let v = sq.coefficient(
                            &conj_k.target_patterns()[im],
                            &conj_k.target_patterns()[im2],
                            &sq.target_patterns()[ir],
                            r,
                        )?;
                        q[r - 1][pos_r][pos_m][pos_m2] = v;
                    }
                }
            }
        }
        squares.push(SquareData {
            d_l: biguint_to_f64(&dim_lambda(&IrrepLabel::new(l, m)?)),
            mult,
            zw_l_conj,
            q,
        });
    }
    let legs_l: Vec<Vec<Vec<f64>>> = (0..=lmax)
        .map(|l| legs(&conj_l[l as usize], &squares[l as usize].zw_l_conj))
        .collect::<Result<_>>()?;

    let contract = |sq: &SquareData, c: &[f64], r: usize| -> Vec<f64> {
        let q = &sq.q[r - 1];
        q.iter()
            .map(|block| {
                let mut acc = 0.0;
                for (pm, row) in block.iter().enumerate() {
                    if c[pm] == 0.0 {
                        continue;
                    }
                    for (pm2, val) in row.iter().enumerate() {
                        acc += c[pm] * c[pm2] * val;
                    }
                }
                acc
            })
            .collect()
    };
    // Input-side factors U0(l, r) = Σ_R b0[R]·A0(R, r).
    let mut u0 = Vec::with_capacity(lmax as usize + 1);
    for l in 0..=lmax {
        let sq = &squares[l as usize];
        let b0 = &legs_l[l as usize][input_si];
        let a0: Vec<f64> = (1..=sq.mult)
            .map(|r| {
                let ar = contract(sq, &legs_k[input_si], r);
                ar.iter().zip(b0).map(|(x, y)| x * y).sum::<f64>()
            })
            .collect();
        u0.push(a0);
    }

    let terms: Vec<f64> = (0..sector.len())
        .into_par_iter()
        .map(|si| {
            let mut g = 0.0;
            for l in 0..=lmax as usize {
                let sq = &squares[l];
                let bn = &legs_l[l][si];
                let mut sum_r = 0.0;
                for r in 1..=sq.mult {
                    let an = contract(sq, &legs_k[si], r);
                    let un: f64 = an.iter().zip(bn).map(|(x, y)| x * y).sum();
                    sum_r += u0[l][r - 1] * un;
                }
                g += sum_r / sq.d_l;
            }
            sector_sign[si] * g
        })
        .collect();
    let s = frame_eigenvalue_pnr(&IrrepLabel::new(k, m)?).as_f64();
    Ok(input_sign * pairwise_sum(&terms) / (s * s))
}

/// Trivial variance bound s_λ^{-2} from |f| ≤ s_λ^{-1}.
pub fn variance_trivial_bound(label: &IrrepLabel) -> f64 {
    let s = frame_eigenvalue_pnr(label).as_f64();
    1.0 / (s * s)
}
