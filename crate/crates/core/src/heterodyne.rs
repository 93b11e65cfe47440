//! Heterodyne readout: closed-form Gaussian moment integrals, frame
//! eigenvalues and filter functions for the coherent-state POVM, their
//! analytic signal moments under Haar-random sequences, and a rejection
//! sampler for the continuous outcome distribution.
//!
//! The POVM is normalized as dν(α⃗) = d²ᵐα/πᵐ, so the outcome density of
//! a pure state is its Husimi function and every moment below is taken
//! with respect to that measure. Loss is not modeled for this readout.

use crate::analysis::zero_weight_targets;
use crate::cg::{Coupling, TableStore};
use crate::error::{Error, Result};
use crate::filter::{
    build_filter_context, mean_and_stderr, pairwise_sum, FilterContext, RBSignal, SignalPoint,
};
use crate::linopt::{amplitude, compose, haar_unitary, LossKind, Measure, PassiveUnitary, SimConfig};
use crate::repcore::{
    biguint_to_f64, dim_lambda, dim_sector, dual_pattern, dual_phase, enumerate_sector,
    factorial_f64, fock_to_gt, FockVector, IrrepLabel,
};
use num_complex::Complex64;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as FmtWrite;
use std::io::{BufRead, Write};

/// Complex displacement per mode, the outcome of one heterodyne shot.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherentVector {
    amplitudes: Vec<Complex64>,
}

impl CoherentVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Argument("coherent vector needs at least one mode".into()));
        }
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Argument("coherent amplitudes must be finite".into()));
        }
        Ok(CoherentVector { amplitudes })
    }

    pub fn m(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Total intensity S = Σ_j |α_j|².
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Interleaved re, im pairs, one per mode.
    pub fn flatten(&self) -> Vec<f64> {
        self.amplitudes
            .iter()
            .flat_map(|z| [z.re, z.im])
            .collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.is_empty() || flat.len() % 2 != 0 {
            return Err(Error::Data(format!(
                "coherent vector needs an even, positive number of doubles, got {}",
                flat.len()
            )));
        }
        CoherentVector::new(
            flat.chunks_exact(2)
                .map(|c| Complex64::new(c[0], c[1]))
                .collect(),
        )
        .map_err(|e| Error::Data(e.to_string()))
    }
}

/// A Gaussian monomial moment over ℂᵐ: the first half of the indices
/// enters conjugated, the second half directly.
#[derive(Clone, Debug)]
pub struct GaussianMomentSpec {
    pub indices: Vec<FockVector>,
}

/// Per-mode core of the moment integral divided by πᵐ: with η = K/2 and
/// s_j the conjugated exponent of mode j, each balanced mode contributes
/// s_j!·η^(−s_j−1) via ∫₀^∞ r^(2s+1)·e^(−ηr²) dr = s!/(2η^(s+1)); any
/// unbalanced mode kills the angular integral. The whole product is
/// divided by √(∏_i n⃗_i!).
fn moment_over_pi(conj: &[&FockVector], unconj: &[&FockVector], eta: f64) -> f64 {
    let m = conj[0].m();
    let mut val = 1.0;
    for j in 0..m {
        let s: u32 = conj.iter().map(|v| v.counts()[j]).sum();
        let t: u32 = unconj.iter().map(|v| v.counts()[j]).sum();
        if s != t {
            return 0.0;
        }
        val *= factorial_f64(s) * eta.powi(-(s as i32) - 1);
    }
    let mut fq = 1.0;
    for v in conj.iter().chain(unconj.iter()) {
        fq *= v.factorial();
    }
    val / fq.sqrt()
}

/// Moment of the rotation-invariant Gaussian against a product of mode
/// monomials,
///
///   I({n⃗_i}) = (∏_i n⃗_i!)^(−1/2) ∫_{ℂᵐ} d²ᵐα e^(−(K/2)|α⃗|²)
///              · conj(α⃗)^(n⃗_1+…+n⃗_{K/2}) · α⃗^(n⃗_{K/2+1}+…+n⃗_K),
///
/// which factorizes per mode and vanishes unless the conjugated and
/// direct exponents agree mode by mode.
pub fn gaussian_moment(spec: &GaussianMomentSpec) -> Result<f64> {
    let count = spec.indices.len();
    if count == 0 || count % 2 != 0 {
        return Err(Error::Argument(format!(
            "need an even, positive number of multi-indices, got {count}"
        )));
    }
    let m = spec.indices[0].m();
    if spec.indices.iter().any(|v| v.m() != m) {
        return Err(Error::Argument("multi-indices must share the mode count".into()));
    }
    let n = spec.indices[0].total();
    if spec.indices.iter().any(|v| v.total() != n) {
        return Err(Error::Argument(
            "multi-indices must share the particle number".into(),
        ));
    }
    let half = count / 2;
    let conj: Vec<&FockVector> = spec.indices[..half].iter().collect();
    let unconj: Vec<&FockVector> = spec.indices[half..].iter().collect();
    Ok(PI.powi(m as i32) * moment_over_pi(&conj, &unconj, count as f64 / 2.0))
}

struct SectorData {
    states: Vec<FockVector>,
    sign: Vec<f64>,
}

fn sector_data(n: u32, m: u32) -> SectorData {
    let states = enumerate_sector(n, m);
    let sign = states
        .iter()
        .map(|s| {
            if dual_phase(&fock_to_gt(s)).rem_euclid(2) == 1 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    SectorData { states, sign }
}

/// Per target pattern M of the coupling, the Husimi quadratic form of
/// the isotypic basis operator B_M = Σ (-1)^φ(N') C_{N,N̄'}^M |N⟩⟨N'|:
/// ∫ dν(α⃗) |⟨α⃗|B_M|α⃗⟩|². Row legs enter the Gaussian moment
/// conjugated, column legs unconjugated.
fn husimi_quadratic_forms(
    table: &crate::cg::CGTable,
    sec: &SectorData,
) -> Result<Vec<f64>> {
    let gts: Vec<_> = sec.states.iter().map(fock_to_gt).collect();
    let duals: Vec<_> = gts.iter().map(dual_pattern).collect();
    let mut per_target = Vec::with_capacity(table.target_patterns().len());
    for pat in table.target_patterns() {
        let mut legs = Vec::new();
        for (i, gi) in gts.iter().enumerate() {
            for (j, dj) in duals.iter().enumerate() {
                let c = table.coefficient(gi, dj, pat, 1)?;
                if c != 0.0 {
                    legs.push((i, j, sec.sign[j] * c));
                }
            }
        }
        let mut terms = Vec::with_capacity(legs.len() * legs.len());
        for &(i1, j1, b1) in &legs {
            for &(i2, j2, b2) in &legs {
                let i4 = moment_over_pi(
                    &[&sec.states[i1], &sec.states[j2]],
                    &[&sec.states[j1], &sec.states[i2]],
                    2.0,
                );
                if i4 != 0.0 {
                    terms.push(b1 * b2 * i4);
                }
            }
        }
        per_target.push(pairwise_sum(&terms));
    }
    Ok(per_target)
}

/// Frame eigenvalue of the heterodyne POVM on one irrep component:
/// the Husimi quadratic form summed over every basis operator of the
/// component, divided by the irrep dimension. The form takes the same
/// value on each basis operator; the sum keeps the evaluation free of
/// that symmetry argument.
pub fn frame_eigenvalue_het(k: u32, n: u32, m: u32, store: &mut TableStore) -> Result<f64> {
    if k > n {
        return Err(Error::Argument(format!("k={k} exceeds n={n}")));
    }
    let label = IrrepLabel::new(k, m)?;
    let table = store.get(&Coupling::symmetric_conjugate(n, m, k)?)?;
    let sec = sector_data(n, m);
    let per_target = husimi_quadratic_forms(&table, &sec)?;
    let d = biguint_to_f64(&dim_lambda(&label));
    Ok(pairwise_sum(&per_target) / d)
}

/// Filter context plus the heterodyne frame eigenvalues for k = 0..=n.
pub struct HetContext {
    pub ctx: FilterContext,
    s_het: Vec<f64>,
}

impl HetContext {
    pub fn s_het(&self, k: u32) -> Result<f64> {
        self.s_het
            .get(k as usize)
            .copied()
            .ok_or_else(|| Error::Argument(format!("k={k} exceeds n={}", self.ctx.n)))
    }
}

pub fn build_het_context(
    n: u32,
    m: u32,
    input: &FockVector,
    store: &mut TableStore,
) -> Result<HetContext> {
    let ctx = build_filter_context(n, m, input.clone(), store)?;
    let s_het = (0..=n)
        .map(|k| frame_eigenvalue_het(k, n, m, store))
        .collect::<Result<Vec<f64>>>()?;
    Ok(HetContext { ctx, s_het })
}

/// Irrep filter function of a heterodyne outcome: the signed overlap
/// sum of the filter context against the Husimi weights of the evolved
/// sector basis, divided by the heterodyne frame eigenvalue.
pub fn filter_het(
    hctx: &HetContext,
    k: u32,
    alpha: &CoherentVector,
    g: &PassiveUnitary,
) -> Result<f64> {
    let ctx = &hctx.ctx;
    let m = ctx.m as usize;
    if alpha.m() != m {
        return Err(Error::Argument(format!(
            "outcome has {} modes, context says {m}",
            alpha.m()
        )));
    }
    if g.m() != m {
        return Err(Error::Argument(format!(
            "gate acts on {} modes, context says {m}",
            g.m()
        )));
    }
    let data = ctx.irrep(k)?;
    let s = hctx.s_het(k)?;
    let damp = (-alpha.norm_sqr()).exp();
    // w[N] = conj(α⃗)^N/√(N!) over the particle-number sector.
    let w: Vec<Complex64> = ctx
        .sector
        .iter()
        .map(|nv| {
            let mut z = Complex64::new(1.0, 0.0);
            for (aj, &cj) in alpha.amplitudes().iter().zip(nv.counts()) {
                z *= aj.conj().powu(cj);
            }
            z / nv.factorial().sqrt()
        })
        .collect();
    let mut acc = 0.0;
    for (si, state) in ctx.sector.iter().enumerate() {
        let v = data.overlap[si];
        if v == 0.0 {
            continue;
        }
        let mut z = Complex64::new(0.0, 0.0);
        for (ni, nv) in ctx.sector.iter().enumerate() {
            if w[ni] == Complex64::new(0.0, 0.0) {
                continue;
            }
            z += w[ni] * amplitude(g, nv, state)?;
        }
        let husimi = damp * z.norm_sqr();
        acc += if ctx.sector_phase_negative[si] { -v } else { v } * husimi;
    }
    let sign0 = if ctx.input_phase_negative { -1.0 } else { 1.0 };
    Ok(sign0 * acc / s)
}

/// Analytic plateau of the heterodyne irrep filter under Haar-random
/// sequences, evaluated as the full four-fold sector contraction of
/// Gaussian moments against pair legs. The contraction reproduces the
/// frame normalization, so the value agrees with the squared input
/// overlap of the irrep.
pub fn first_moment_het(
    k: u32,
    n: u32,
    m: u32,
    input: &FockVector,
    store: &mut TableStore,
) -> Result<f64> {
    if input.total() != n || input.m() != m as usize {
        return Err(Error::Argument(format!(
            "input {input} does not match n={n}, m={m}"
        )));
    }
    if k > n {
        return Err(Error::Argument(format!("k={k} exceeds n={n}")));
    }
    let label = IrrepLabel::new(k, m)?;
    let table = store.get(&Coupling::symmetric_conjugate(n, m, k)?)?;
    let s = frame_eigenvalue_het(k, n, m, store)?;
    let d = biguint_to_f64(&dim_lambda(&label));
    let sec = sector_data(n, m);
    let ds = sec.states.len();
    let pats = table.target_patterns();
    // Pair legs over every target pattern of the irrep.
    let gts: Vec<_> = sec.states.iter().map(fock_to_gt).collect();
    let duals: Vec<_> = gts.iter().map(dual_pattern).collect();
    let mut pair_legs = vec![vec![Vec::new(); ds]; ds];
    for i in 0..ds {
        for j in 0..ds {
            let legs: Result<Vec<f64>> = pats
                .iter()
                .map(|p| table.coefficient(&gts[i], &duals[j], p, 1))
                .collect();
            pair_legs[i][j] = legs?;
        }
    }
    let gt0 = fock_to_gt(input);
    let dual0 = dual_pattern(&gt0);
    let mut proj = 0.0;
    for &it in &zero_weight_targets(pats, k as i64) {
        let c = table.coefficient(&gt0, &dual0, &pats[it], 1)?;
        proj += c * c;
    }
    let mut terms = Vec::new();
    for i1 in 0..ds {
        for j1 in 0..ds {
            for i2 in 0..ds {
                for j2 in 0..ds {
                    let dot: f64 = pair_legs[i1][j1]
                        .iter()
                        .zip(&pair_legs[i2][j2])
                        .map(|(a, b)| a * b)
                        .sum();
                    if dot == 0.0 {
                        continue;
                    }
                    let i4 = moment_over_pi(
                        &[&sec.states[i1], &sec.states[j2]],
                        &[&sec.states[j1], &sec.states[i2]],
                        2.0,
                    );
                    if i4 == 0.0 {
                        continue;
                    }
                    terms.push(sec.sign[j1] * sec.sign[j2] * i4 * dot);
                }
            }
        }
    }
    Ok(proj * pairwise_sum(&terms) / (d * s))
}

/// Exact second moment of the heterodyne irrep filter under
/// Haar-random sequences.
///
/// Contracts the six-fold sector sum of Gaussian moments with the
/// square couplings λ_k⊗λ_k → λ_l, l ≤ min(n, 2k). The probability
/// copy enters the coupling through its adjoint, which swaps its row
/// and column legs; in that form the contraction holds for any real
/// orthonormal choice of table bases. Cost grows as D⁶·d_k², intended
/// for small sectors.
pub fn second_moment_het(
    k: u32,
    n: u32,
    m: u32,
    input: &FockVector,
    store: &mut TableStore,
) -> Result<f64> {
    if input.total() != n || input.m() != m as usize {
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
    let s = frame_eigenvalue_het(k, n, m, store)?;

    let sec = sector_data(n, m);
    let ds = sec.states.len();
    let gts: Vec<_> = sec.states.iter().map(fock_to_gt).collect();
    let duals: Vec<_> = gts.iter().map(dual_pattern).collect();
    let input_si = sec
        .states
        .iter()
        .position(|st| st == input)
        .expect("input lies in its own sector");
    let input_sign = sec.sign[input_si];

    // Sparse pair legs on the full pattern list of λ_k; each pair
    // populates a single weight class.
    let pats_k = conj_k.target_patterns();
    let mut pair_legs: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); ds]; ds];
    for i in 0..ds {
        for j in 0..ds {
            let mut nz = Vec::new();
            for (p, pat) in pats_k.iter().enumerate() {
                let c = conj_k.coefficient(&gts[i], &duals[j], pat, 1)?;
                if c != 0.0 {
                    nz.push((p, c));
                }
            }
            pair_legs[i][j] = nz;
        }
    }

    // Per component l: dense square coefficients qfull[r-1][t][a][b]
    // over every target t, sparse conjugate-action legs of |i⟩⟨j| on
    // the same target indexing, inverse dimension, and the input-side
    // factor U0(l, r).
    struct Component {
        inv_d: f64,
        mult: usize,
        qfull: Vec<Vec<Vec<Vec<f64>>>>,
        legs: Vec<Vec<Vec<(usize, f64)>>>,
        u0: Vec<f64>,
    }
    let np = pats_k.len();
    let mut comps = Vec::with_capacity(lmax as usize + 1);
    for l in 0..=lmax {
        let sq = &square_l[l as usize];
        let cl = &conj_l[l as usize];
        let mult = sq.multiplicity();
        let nt = sq.target_patterns().len();
        let mut qfull = vec![vec![vec![vec![0.0; np]; np]; nt]; mult];
        for (t, pat) in sq.target_patterns().iter().enumerate() {
            for a in 0..np {
                for b in 0..np {
                    for r in 1..=mult {
                        qfull[r - 1][t][a][b] =
                            sq.coefficient(&pats_k[a], &pats_k[b], pat, r)?;
                    }
                }
            }
        }
        let mut legs = vec![vec![Vec::new(); ds]; ds];
        for i in 0..ds {
            for j in 0..ds {
                let mut nz = Vec::new();
                for pat in cl.target_patterns() {
                    let c = cl.coefficient(&gts[i], &duals[j], pat, 1)?;
                    if c != 0.0 {
                        let t = sq.target_index(pat).ok_or_else(|| {
                            Error::Coupling(format!(
                                "square table for level {l} misses target pattern {pat}"
                            ))
                        })?;
                        nz.push((t, c));
                    }
                }
                legs[i][j] = nz;
            }
        }
        let c0 = &pair_legs[input_si][input_si];
        let u0: Vec<f64> = (1..=mult)
            .map(|r| {
                let mut acc = 0.0;
                for &(t, b0) in &legs[input_si][input_si] {
                    let mut inner = 0.0;
                    for &(a, ca) in c0 {
                        for &(b, cb) in c0 {
                            inner += ca * cb * qfull[r - 1][t][a][b];
                        }
                    }
                    acc += b0 * inner;
                }
                acc
            })
            .collect();
        comps.push(Component {
            inv_d: 1.0 / biguint_to_f64(&dim_lambda(&IrrepLabel::new(l, m)?)),
            mult,
            qfull,
            legs,
            u0,
        });
    }

    let quads: Vec<(usize, usize, usize, usize)> = (0..ds)
        .flat_map(|i1| {
            (0..ds).flat_map(move |j1| {
                (0..ds).flat_map(move |i2| (0..ds).map(move |j2| (i1, j1, i2, j2)))
            })
        })
        .collect();
    let terms: Vec<f64> = quads
        .par_iter()
        .map(|&(i1, j1, i2, j2)| {
            let v1 = &pair_legs[i1][j1];
            let v2 = &pair_legs[i2][j2];
            if v1.is_empty() || v2.is_empty() {
                return 0.0;
            }
            let probes: Vec<(usize, usize, f64)> = (0..ds)
                .flat_map(|i3| (0..ds).map(move |j3| (i3, j3)))
                .filter_map(|(i3, j3)| {
                    let i6 = moment_over_pi(
                        &[&sec.states[i1], &sec.states[i2], &sec.states[i3]],
                        &[&sec.states[j1], &sec.states[j2], &sec.states[j3]],
                        3.0,
                    );
                    (i6 != 0.0).then_some((i3, j3, i6))
                })
                .collect();
            if probes.is_empty() {
                return 0.0;
            }
            // inner[l][r-1][t] = v1ᵀ·qfull·v2, reused across probes.
            let inner: Vec<Vec<Vec<f64>>> = comps
                .iter()
                .map(|c| {
                    (1..=c.mult)
                        .map(|r| {
                            c.qfull[r - 1]
                                .iter()
                                .map(|block| {
                                    let mut acc = 0.0;
                                    for &(a, ca) in v1 {
                                        for &(b, cb) in v2 {
                                            acc += ca * cb * block[a][b];
                                        }
                                    }
                                    acc
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let mut sub = 0.0;
            for &(i3, j3, i6) in &probes {
                let mut g = 0.0;
                for (l, c) in comps.iter().enumerate() {
                    // Adjoint swap of the probability copy.
                    let w3 = &c.legs[j3][i3];
                    if w3.is_empty() {
                        continue;
                    }
                    let mut sum_r = 0.0;
                    for r in 1..=c.mult {
                        let v: f64 = w3.iter().map(|&(t, x)| x * inner[l][r - 1][t]).sum();
                        sum_r += c.u0[r - 1] * v;
                    }
                    g += sum_r * c.inv_d;
                }
                sub += sec.sign[i3] * i6 * g;
            }
            sec.sign[j1] * sec.sign[j2] * sub
        })
        .collect();
    Ok(input_sign * pairwise_sum(&terms) / (s * s))
}

/// Draws one heterodyne outcome from the Husimi density of the evolved
/// input, e^(−|α⃗|²)·|Σ_N conj(α⃗)^N·⟨N|τ(g)|n⃗₀⟩/√(N!)|²/πᵐ.
///
/// Rejection from the sector envelope e^(−S)·Sⁿ/(n!·πᵐ): the radial
/// intensity is Gamma(n+m, 1), the direction isotropic, and the
/// acceptance ratio |P|²·n!/Sⁿ never exceeds one because the evolved
/// amplitudes form a unit vector. Mean acceptance is 1/D.
pub fn sample_husimi(
    g: &PassiveUnitary,
    input: &FockVector,
    rng: &mut impl Rng,
) -> Result<CoherentVector> {
    let m = input.m();
    if g.m() != m {
        return Err(Error::Argument(format!(
            "gate acts on {} modes, input has {m}",
            g.m()
        )));
    }
    let n = input.total();
    let sector = enumerate_sector(n, m as u32);
    let amps: Vec<Complex64> = sector
        .iter()
        .map(|nv| amplitude(g, nv, input))
        .collect::<Result<_>>()?;
    let inv_sqrt_fact: Vec<f64> = sector.iter().map(|nv| 1.0 / nv.factorial().sqrt()).collect();
    let nfact = factorial_f64(n);
    let gamma = Gamma::new((n as f64) + m as f64, 1.0)
        .expect("shape and scale are positive");
    let budget = 10_000u64
        .saturating_mul(dim_sector(n, m as u32).to_u64().unwrap_or(u64::MAX))
        .max(10_000);
    for _ in 0..budget {
        let s_tot: f64 = gamma.sample(rng);
        let mut dir: Vec<Complex64> = (0..m)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let norm: f64 = dir.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || s_tot == 0.0 {
            continue;
        }
        let scale = s_tot.sqrt() / norm;
        for z in dir.iter_mut() {
            *z *= scale;
        }
        let mut p = Complex64::new(0.0, 0.0);
        for (si, nv) in sector.iter().enumerate() {
            let mut mono = Complex64::new(1.0, 0.0);
            for (z, &cj) in dir.iter().zip(nv.counts()) {
                mono *= z.conj().powu(cj);
            }
            p += mono * inv_sqrt_fact[si] * amps[si];
        }
        let accept = p.norm_sqr() * nfact / s_tot.powi(n as i32);
        if !accept.is_finite() {
            return Err(Error::Diagnostics(
                "husimi rejection sampler produced a non-finite acceptance ratio".into(),
            ));
        }
        if rng.gen::<f64>() < accept {
            return CoherentVector::new(dir);
        }
    }
    Err(Error::Diagnostics(
        "husimi rejection sampler exceeded its attempt budget".into(),
    ))
}

/// One heterodyne benchmarking shot.
#[derive(Clone, Debug)]
pub struct HetRecord {
    pub seq_len: u32,
    /// Composite g_l···g_1 in applied order.
    pub product: PassiveUnitary,
    pub factors: Option<Vec<PassiveUnitary>>,
    pub outcome: CoherentVector,
}

/// Runs the heterodyne experiment. Loss is rejected: this readout has
/// no loss model. RNG streams are keyed by (length index, shot) as in
/// the number-resolved simulation, so results do not depend on the
/// thread count.
pub fn simulate_heterodyne(config: &SimConfig) -> Result<Vec<HetRecord>> {
    config.validate()?;
    if config.loss.kind != LossKind::None
        || config.loss.sqrt_p_sp != 1.0
        || config.loss.sqrt_p_m != 1.0
    {
        return Err(Error::Config(
            "heterodyne readout does not model loss; remove the loss block".into(),
        ));
    }
    let input = config.input_state()?;
    let m = config.m as usize;
    let shots = config.shots as u64;
    let jobs: Vec<(usize, u64)> = config
        .lengths
        .iter()
        .enumerate()
        .flat_map(|(li, _)| (0..shots).map(move |s| (li, s)))
        .collect();
    let results: Vec<Result<HetRecord>> = jobs
        .par_iter()
        .map(|&(li, shot)| {
            let l = config.lengths[li];
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(li as u64 * shots + shot);
            let mut factors = Vec::with_capacity(l as usize);
            for _ in 0..l {
                let g = match config.measure {
                    Measure::Haar => haar_unitary(m, &mut rng),
                    Measure::CompositeLocal => {
                        return Err(Error::Config(
                            "heterodyne simulation supports the Haar measure only".into(),
                        ))
                    }
                };
                factors.push(g);
            }
            let product = compose(&factors)?;
            let outcome = sample_husimi(&product, &input, &mut rng)?;
            Ok(HetRecord {
                seq_len: l,
                product,
                factors: if config.include_factors {
                    Some(factors)
                } else {
                    None
                },
                outcome,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Averages the heterodyne irrep filter per sequence length.
pub fn estimate_het_signal(
    records: &[HetRecord],
    k: u32,
    hctx: &HetContext,
) -> Result<RBSignal> {
    if records.is_empty() {
        return Err(Error::Data("no records to estimate from".into()));
    }
    let m = hctx.ctx.m as usize;
    if records.iter().any(|r| r.product.m() != m || r.outcome.m() != m) {
        return Err(Error::Data(format!(
            "records must act on {m} modes like the filter context"
        )));
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.seq_len).or_default().push(i);
    }
    let mut points = Vec::with_capacity(groups.len());
    for (&l, idxs) in &groups {
        let values: Vec<f64> = idxs
            .par_iter()
            .map(|&i| filter_het(hctx, k, &records[i].outcome, &records[i].product))
            .collect::<Result<_>>()?;
        let (mean, stderr) = mean_and_stderr(&values);
        points.push(SignalPoint {
            seq_len: l,
            estimate: mean,
            stderr,
            count_used: values.len() as u64,
        });
    }
    Ok(RBSignal {
        filter_id: format!("het-irrep-{k}"),
        points,
        warnings: Vec::new(),
    })
}

fn write_f64(buf: &mut String, v: f64) {
    write!(buf, "{:.16e}", v).expect("writing to string cannot fail");
}

/// Serializes heterodyne records as JSON lines; doubles carry 17
/// significant digits.
pub fn write_het_records_jsonl(records: &[HetRecord], out: &mut impl Write) -> Result<()> {
    for rec in records {
        let mut line = String::with_capacity(64 + 40 * rec.product.m() * rec.product.m());
        write!(line, "{{\"seq_len\":{},\"product\":[", rec.seq_len)
            .expect("writing to string cannot fail");
        for (i, v) in rec.product.flatten().iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            write_f64(&mut line, *v);
        }
        line.push_str("],\"outcome\":[");
        for (i, v) in rec.outcome.flatten().iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            write_f64(&mut line, *v);
        }
        line.push(']');
        if let Some(factors) = &rec.factors {
            line.push_str(",\"factors\":[");
            for (fi, f) in factors.iter().enumerate() {
                if fi > 0 {
                    line.push(',');
                }
                line.push('[');
                for (i, v) in f.flatten().iter().enumerate() {
                    if i > 0 {
                        line.push(',');
                    }
                    write_f64(&mut line, *v);
                }
                line.push(']');
            }
            line.push(']');
        }
        line.push('}');
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawHetRecord {
    seq_len: u32,
    product: Vec<f64>,
    outcome: Vec<f64>,
    #[serde(default)]
    factors: Option<Vec<Vec<f64>>>,
}

/// Parses a heterodyne JSONL record stream; validates unitarity and the
/// product-equals-composition invariant when factors are present.
pub fn read_het_records_jsonl(input: &mut impl BufRead) -> Result<Vec<HetRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawHetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("record line {}: {e}", lineno + 1)))?;
        let outcome = CoherentVector::from_flat(&raw.outcome)
            .map_err(|e| Error::Data(format!("record line {}: {e}", lineno + 1)))?;
        let m = outcome.m();
        if raw.product.len() != 2 * m * m {
            return Err(Error::Data(format!(
                "record line {}: product length {} does not match {} modes",
                lineno + 1,
                raw.product.len(),
                m
            )));
        }
        let product = PassiveUnitary::from_flat(m, &raw.product)
            .map_err(|e| Error::Data(format!("record line {}: {e}", lineno + 1)))?;
        let factors = match raw.factors {
            None => None,
            Some(fs) => {
                let mut list = Vec::with_capacity(fs.len());
                for f in fs {
                    list.push(
                        PassiveUnitary::from_flat(m, &f)
                            .map_err(|e| Error::Data(format!("record line {}: {e}", lineno + 1)))?,
                    );
                }
                let prod = compose(&list)?;
                let dev = (prod.matrix() - product.matrix()).map(|z| z.norm()).max();
                if dev > 1e-9 {
                    return Err(Error::Data(format!(
                        "record line {}: product differs from composed factors by {dev:.3e}",
                        lineno + 1
                    )));
                }
                Some(list)
            }
        };
        records.push(HetRecord {
            seq_len: raw.seq_len,
            product,
            factors,
            outcome,
        });
    }
    Ok(records)
}
