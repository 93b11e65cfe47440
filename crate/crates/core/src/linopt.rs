//! Linear-optics kernel: permanents, number-state transition amplitudes,
//! exact outcome distributions, Haar-random passive transformations,
//! loss, and the experiment simulator emitting benchmarking records.

use crate::error::{Error, Result};
use crate::repcore::{dim_sector, enumerate_sector, FockVector};
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::ToPrimitive;
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

/// An m-mode passive transformation; unitarity is checked at
/// construction to 1e-10 (1e-9 for long compositions).
#[derive(Clone, Debug, PartialEq)]
pub struct PassiveUnitary {
    mat: DMatrix<Complex64>,
}

impl PassiveUnitary {
    pub fn new(mat: DMatrix<Complex64>) -> Result<Self> {
        Self::with_tolerance(mat, 1e-10)
    }

    pub fn with_tolerance(mat: DMatrix<Complex64>, tol: f64) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(Error::Argument(format!(
                "passive transformation must be square and non-empty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let m = mat.nrows();
        let gram = mat.adjoint() * &mat;
        let mut dev = 0.0f64;
        for r in 0..m {
            for c in 0..m {
                let expect = if r == c {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                dev = dev.max((gram[(r, c)] - expect).norm());
            }
        }
        if dev > tol {
            return Err(Error::Argument(format!(
                "matrix is not unitary: deviation {dev:.3e} exceeds {tol:.1e}"
            )));
        }
        Ok(PassiveUnitary { mat })
    }

    pub fn identity(m: usize) -> Self {
        PassiveUnitary {
            mat: DMatrix::from_diagonal_element(m, m, Complex64::new(1.0, 0.0)),
        }
    }

    pub fn m(&self) -> usize {
        self.mat.nrows()
    }

    pub fn entry(&self, r: usize, c: usize) -> Complex64 {
        self.mat[(r, c)]
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    /// Row-major re/im interleaved flattening (2m² doubles).
    pub fn flatten(&self) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(2 * m * m);
        for r in 0..m {
            for c in 0..m {
                out.push(self.mat[(r, c)].re);
                out.push(self.mat[(r, c)].im);
            }
        }
        out
    }

    pub fn from_flat(m: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * m * m {
            return Err(Error::Data(format!(
                "expected {} doubles for an {m}x{m} matrix, got {}",
                2 * m * m,
                flat.len()
            )));
        }
        let mat = DMatrix::from_fn(m, m, |r, c| {
            let base = 2 * (r * m + c);
            Complex64::new(flat[base], flat[base + 1])
        });
        Self::with_tolerance(mat, 1e-9)
    }
}

/// Permanent by the Ryser formula with Gray-code subset iteration,
/// O(r·2^r). The empty matrix has permanent 1.
pub fn permanent(a: &DMatrix<Complex64>) -> Result<Complex64> {
    if a.nrows() != a.ncols() {
        return Err(Error::Argument(format!(
            "permanent needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let r = a.nrows();
    if r == 0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    if r > 62 {
        return Err(Error::Size(format!("permanent of order {r} is out of range")));
    }
    let mut v = vec![Complex64::new(0.0, 0.0); r];
    let mut total = Complex64::new(0.0, 0.0);
    let mut prev_gray: u64 = 0;
    for s in 1u64..(1u64 << r) {
        let gray = s ^ (s >> 1);
        let flipped = gray ^ prev_gray;
        let j = flipped.trailing_zeros() as usize;
        if gray & flipped != 0 {
            for i in 0..r {
                v[i] += a[(i, j)];
            }
        } else {
            for i in 0..r {
                v[i] -= a[(i, j)];
            }
        }
        prev_gray = gray;
        let mut prod = Complex64::new(1.0, 0.0);
        for x in &v {
            prod *= x;
        }
        if gray.count_ones() % 2 == 1 {
            total -= prod;
        } else {
            total += prod;
        }
    }
    if r % 2 == 1 {
        total = -total;
    }
    Ok(total)
}

/// Row/column-repeated submatrix g_{n_out, n_in}: n_in_j copies of
/// column j, n_out_i copies of row i.
pub fn submatrix(
    g: &PassiveUnitary,
    n_out: &FockVector,
    n_in: &FockVector,
) -> Result<DMatrix<Complex64>> {
    if n_out.m() != g.m() || n_in.m() != g.m() {
        return Err(Error::Argument("occupation length must match mode count".into()));
    }
    if n_out.total() != n_in.total() {
        return Err(Error::Argument(format!(
            "particle numbers differ: {} vs {}",
            n_out.total(),
            n_in.total()
        )));
    }
    let expand = |f: &FockVector| -> Vec<usize> {
        let mut idx = Vec::with_capacity(f.total() as usize);
        for (i, &c) in f.counts().iter().enumerate() {
            for _ in 0..c {
                idx.push(i);
            }
        }
        idx
    };
    let rows = expand(n_out);
    let cols = expand(n_in);
    let r = rows.len();
    Ok(DMatrix::from_fn(r, r, |i, j| g.entry(rows[i], cols[j])))
}

/// Transition amplitude <n_out| τ(g) |n_in> = per(g_{n_out,n_in}) / sqrt(n_out! n_in!).
pub fn amplitude(g: &PassiveUnitary, n_out: &FockVector, n_in: &FockVector) -> Result<Complex64> {
    let sub = submatrix(g, n_out, n_in)?;
    let per = permanent(&sub)?;
    Ok(per / (n_out.factorial() * n_in.factorial()).sqrt())
}

/// Exact Born-rule distribution over the particle-number sector.
pub struct OutcomeDistribution {
    pub states: Vec<FockVector>,
    pub probs: Vec<f64>,
}

pub const DEFAULT_SECTOR_CAP: u64 = 100_000;

/// Probabilities |amplitude|² over the whole (n, m) sector; checks
/// normalization to 1e-9, then renormalizes exactly for sampling.
pub fn outcome_distribution(
    g: &PassiveUnitary,
    n_in: &FockVector,
    cap: u64,
) -> Result<OutcomeDistribution> {
    let n = n_in.total();
    let m = g.m() as u32;
    let dim = dim_sector(n, m)
        .to_u64()
        .filter(|&d| d <= cap)
        .ok_or_else(|| {
            Error::Size(format!(
                "sector dimension for n={n}, m={m} exceeds the cap {cap}"
            ))
        })?;
    let states = enumerate_sector(n, m);
    debug_assert_eq!(states.len() as u64, dim);
    let mut probs = Vec::with_capacity(states.len());
    for s in &states {
        probs.push(amplitude(g, s, n_in)?.norm_sqr());
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Diagnostics(format!(
            "outcome probabilities sum to {total}, expected 1 within 1e-9"
        )));
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(OutcomeDistribution { states, probs })
}

impl OutcomeDistribution {
    /// Samples one outcome with a single uniform draw.
    pub fn sample(&self, rng: &mut impl Rng) -> FockVector {
        let u: f64 = rng.gen();
        let mut acc = 0.0f64;
        for (s, p) in self.states.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return s.clone();
            }
        }
        self.states
            .last()
            .expect("distribution is non-empty")
            .clone()
    }
}

/// Haar-random unitary: QR of a complex Ginibre matrix with the phase
/// correction diag(R_ii/|R_ii|).
pub fn haar_unitary(m: usize, rng: &mut impl Rng) -> PassiveUnitary {
    let normal = StandardNormal;
    let mut entries = Vec::with_capacity(m * m);
    for _ in 0..m * m {
        let re: f64 = normal.sample(rng);
        let im: f64 = normal.sample(rng);
        entries.push(Complex64::new(re, im));
    }
    let ginibre = DMatrix::from_row_slice(m, m, &entries);
    let qr = ginibre.qr();
    let r = qr.r();
    let mut q = qr.q();
    for c in 0..m {
        let d = r[(c, c)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for row in 0..m {
            q[(row, c)] *= phase;
        }
    }
    PassiveUnitary::new(q).expect("QR with phase fix yields a unitary")
}

/// Loss model: per-mode beam-splitter transmittivities (amplitude
/// convention; the per-photon survival probability is the square).
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    None,
    Uniform { sqrt_p: f64 },
    GateRandom { range: [f64; 2] },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LossModel {
    #[serde(flatten)]
    pub kind: LossKind,
    #[serde(default = "default_transmittivity")]
    pub sqrt_p_sp: f64,
    #[serde(default = "default_transmittivity")]
    pub sqrt_p_m: f64,
}

fn default_transmittivity() -> f64 {
    1.0
}

impl Default for LossModel {
    fn default() -> Self {
        LossModel {
            kind: LossKind::None,
            sqrt_p_sp: 1.0,
            sqrt_p_m: 1.0,
        }
    }
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        let check = |v: f64, name: &str| -> Result<()> {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} must lie in (0, 1], got {v}"
                )))
            }
        };
        check(self.sqrt_p_sp, "sqrt_p_sp")?;
        check(self.sqrt_p_m, "sqrt_p_m")?;
        match &self.kind {
            LossKind::None => Ok(()),
            LossKind::Uniform { sqrt_p } => check(*sqrt_p, "sqrt_p"),
            LossKind::GateRandom { range } => {
                check(range[0], "range lower end")?;
                check(range[1], "range upper end")?;
                if range[0] <= range[1] {
                    Ok(())
                } else {
                    Err(Error::Config("range must be ordered low, high".into()))
                }
            }
        }
    }
}

/// How each sequence element is drawn.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    #[default]
    Haar,
    /// Product of a random two-mode beam splitter and single-mode
    /// phases; a hook for non-uniform sampling, no convergence claims.
    CompositeLocal,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct SimConfig {
    pub n: u32,
    pub m: u32,
    /// Defaults to the collision-free input (1,...,1,0,...,0).
    #[serde(default)]
    pub input: Option<Vec<u32>>,
    pub lengths: Vec<u32>,
    /// Shots per sequence length (one outcome per sequence).
    pub shots: u32,
    #[serde(default)]
    pub loss: LossModel,
    pub seed: u64,
    #[serde(default)]
    pub measure: Measure,
    /// Keep the per-gate factors in each record.
    #[serde(default)]
    pub include_factors: bool,
}

impl SimConfig {
    pub fn input_state(&self) -> Result<FockVector> {
        let input = match &self.input {
            Some(counts) => FockVector::new(counts.clone())?,
            None => FockVector::collision_free(self.n, self.m)
                .map_err(|e| Error::Config(e.to_string()))?,
        };
        if input.m() != self.m as usize {
            return Err(Error::Config(format!(
                "input has {} modes, config says {}",
                input.m(),
                self.m
            )));
        }
        if input.total() != self.n {
            return Err(Error::Config(format!(
                "input holds {} particles, config says {}",
                input.total(),
                self.n
            )));
        }
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Config("need at least one mode".into()));
        }
        if self.n < 1 {
            return Err(Error::Config("need at least one particle".into()));
        }
        if self.lengths.is_empty() {
            return Err(Error::Config("lengths must be non-empty".into()));
        }
        if self.lengths.iter().any(|&l| l == 0) {
            return Err(Error::Config("sequence lengths must be positive".into()));
        }
        if self.shots == 0 {
            return Err(Error::Config("shots must be positive".into()));
        }
        self.input_state()?;
        self.loss.validate()?;
        if dim_sector(self.n, self.m).to_u64().is_none()
            || dim_sector(self.n, self.m).to_u64().unwrap() > DEFAULT_SECTOR_CAP
        {
            return Err(Error::Size(format!(
                "sector dimension for n={}, m={} exceeds the cap {}",
                self.n, self.m, DEFAULT_SECTOR_CAP
            )));
        }
        Ok(())
    }
}

/// One benchmarking shot: a sequence of gates compressed to its product,
/// the measured occupation, and whether all particles survived.
#[derive(Clone, Debug)]
pub struct ExperimentRecord {
    pub seq_len: u32,
    /// Composite g_l···g_1 in applied order.
    pub product: PassiveUnitary,
    pub factors: Option<Vec<PassiveUnitary>>,
    pub outcome: FockVector,
    pub survived: bool,
}

/// Per-shot bookkeeping the statistics tests consume.
#[derive(Clone, Debug)]
pub struct ShotDiagnostics {
    /// Probability that all particles survive this sequence.
    pub survival_prob: f64,
}

/// Ordered matrix product of factors in applied order (first gate acts
/// first, so the product is factors[l-1]···factors[0]).
pub fn compose(factors: &[PassiveUnitary]) -> Result<PassiveUnitary> {
    let first = factors
        .first()
        .ok_or_else(|| Error::Argument("compose needs at least one factor".into()))?;
    let m = first.m();
    let mut acc = DMatrix::from_diagonal_element(m, m, Complex64::new(1.0, 0.0));
    for f in factors {
        if f.m() != m {
            return Err(Error::Argument("factors must share the mode count".into()));
        }
        acc = f.matrix() * acc;
    }
    PassiveUnitary::with_tolerance(acc, 1e-9)
}

fn composite_local_gate(m: usize, rng: &mut impl Rng) -> PassiveUnitary {
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|a| ((a + 1)..m).map(move |b| (a, b)))
        .collect();
    let (a, b) = pairs[rng.gen_range(0..pairs.len())];
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut mat = DMatrix::from_diagonal_element(m, m, Complex64::new(1.0, 0.0));
    mat[(a, a)] = Complex64::new(theta.cos(), 0.0);
    mat[(a, b)] = Complex64::new(-theta.sin(), 0.0);
    mat[(b, a)] = Complex64::new(theta.sin(), 0.0);
    mat[(b, b)] = Complex64::new(theta.cos(), 0.0);
    for r in 0..m {
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let phase = Complex64::new(phi.cos(), phi.sin());
        for c in 0..m {
            mat[(r, c)] *= phase;
        }
    }
    PassiveUnitary::new(mat).expect("rotation times phases is unitary")
}

/// Runs the experiment and returns records plus per-shot diagnostics.
///
/// Per-shot RNG stream: a counter-seeded generator keyed by
/// (length index, shot), so results do not depend on the thread count.
/// Draw order within a shot: per gate the matrix entries (then the
/// gate transmittivity under gate-random loss), then one survival draw
/// per particle, then the ideal outcome, then one draw per lost particle.
pub fn simulate_detailed(
    config: &SimConfig,
) -> Result<(Vec<ExperimentRecord>, Vec<ShotDiagnostics>)> {
    config.validate()?;
    let input = config.input_state()?;
    let m = config.m as usize;
    let n = config.n;
    let shots = config.shots as u64;
    let jobs: Vec<(usize, u64)> = config
        .lengths
        .iter()
        .enumerate()
        .flat_map(|(li, _)| (0..shots).map(move |s| (li, s)))
        .collect();
    let results: Vec<Result<(ExperimentRecord, ShotDiagnostics)>> = jobs
        .par_iter()
        .map(|&(li, shot)| {
            let l = config.lengths[li];
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(li as u64 * shots + shot);
            let mut factors = Vec::with_capacity(l as usize);
            let mut q_photon = (config.loss.sqrt_p_sp * config.loss.sqrt_p_m).powi(2);
            for _ in 0..l {
                let g = match config.measure {
                    Measure::Haar => haar_unitary(m, &mut rng),
                    Measure::CompositeLocal => composite_local_gate(m, &mut rng),
                };
                factors.push(g);
                match &config.loss.kind {
                    LossKind::None => {}
                    LossKind::Uniform { sqrt_p } => q_photon *= sqrt_p * sqrt_p,
                    LossKind::GateRandom { range } => {
                        let t: f64 = if range[0] == range[1] {
                            range[0]
                        } else {
                            rng.gen_range(range[0]..range[1])
                        };
                        q_photon *= t * t;
                    }
                }
            }
            let product = compose(&factors)?;
            let survivors = if q_photon >= 1.0 {
                n
            } else {
                (0..n).filter(|_| rng.gen::<f64>() < q_photon).count() as u32
            };
            let dist = outcome_distribution(&product, &input, DEFAULT_SECTOR_CAP)?;
            let ideal = dist.sample(&mut rng);
            let outcome = if survivors == n {
                ideal
            } else {
                delete_particles(&ideal, n - survivors, &mut rng)
            };
            let record = ExperimentRecord {
                seq_len: l,
                product,
                factors: if config.include_factors {
                    Some(factors)
                } else {
                    None
                },
                outcome,
                survived: survivors == n,
            };
            let diag = ShotDiagnostics {
                survival_prob: q_photon.min(1.0).powi(n as i32),
            };
            Ok((record, diag))
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut diags = Vec::with_capacity(results.len());
    for r in results {
        let (rec, d) = r?;
        records.push(rec);
        diags.push(d);
    }
    Ok((records, diags))
}

pub fn simulate(config: &SimConfig) -> Result<Vec<ExperimentRecord>> {
    simulate_detailed(config).map(|(records, _)| records)
}

/// Uniform deletion without replacement: each lost particle is removed
/// from a mode chosen with probability proportional to its count.
fn delete_particles(ideal: &FockVector, lost: u32, rng: &mut impl Rng) -> FockVector {
    let mut counts = ideal.counts().to_vec();
    let mut remaining: u32 = counts.iter().sum();
    for _ in 0..lost {
        let pick = rng.gen_range(0..remaining);
        let mut acc = 0u32;
        for c in counts.iter_mut() {
            acc += *c;
            if pick < acc {
                *c -= 1;
                break;
            }
        }
        remaining -= 1;
    }
    FockVector::new(counts).expect("deletion keeps the vector valid")
}

fn write_f64(buf: &mut String, v: f64) {
    write!(buf, "{:.16e}", v).expect("writing to string cannot fail");
}

/// Serializes records as JSON lines; doubles carry 17 significant digits.
pub fn write_records_jsonl(records: &[ExperimentRecord], out: &mut impl Write) -> Result<()> {
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
        for (i, c) in rec.outcome.counts().iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            write!(line, "{c}").expect("writing to string cannot fail");
        }
        write!(line, "],\"survived\":{}", rec.survived).expect("writing to string cannot fail");
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
struct RawRecord {
    seq_len: u32,
    product: Vec<f64>,
    outcome: Vec<u32>,
    survived: bool,
    #[serde(default)]
    factors: Option<Vec<Vec<f64>>>,
}

/// Parses a JSONL record stream; validates unitarity and the
/// product-equals-composition invariant when factors are present.
pub fn read_records_jsonl(input: &mut impl BufRead) -> Result<Vec<ExperimentRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("record line {}: {e}", lineno + 1)))?;
        let m = raw.outcome.len();
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
        records.push(ExperimentRecord {
            seq_len: raw.seq_len,
            product,
            factors,
            outcome: FockVector::new(raw.outcome)?,
            survived: raw.survived,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn permanent_small_cases() {
        let id = DMatrix::from_diagonal_element(4, 4, c(1.0, 0.0));
        assert!((permanent(&id).unwrap() - c(1.0, 0.0)).norm() < 1e-12);
        let ones = DMatrix::from_element(3, 3, c(1.0, 0.0));
        assert!((permanent(&ones).unwrap() - c(6.0, 0.0)).norm() < 1e-12);
        let empty = DMatrix::<Complex64>::zeros(0, 0);
        assert_eq!(permanent(&empty).unwrap(), c(1.0, 0.0));
        let rect = DMatrix::<Complex64>::zeros(2, 3);
        assert!(permanent(&rect).is_err());
    }

    #[test]
    fn permanent_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[c(1.0, 1.0), c(2.0, 0.0), c(0.0, 1.0), c(3.0, -1.0)]);
        // ad + bc
        let expect = c(1.0, 1.0) * c(3.0, -1.0) + c(2.0, 0.0) * c(0.0, 1.0);
        assert!((permanent(&a).unwrap() - expect).norm() < 1e-12);
    }

    #[test]
    fn hong_ou_mandel_cancels() {
        let s = 0.5f64.sqrt();
        let bs = PassiveUnitary::new(DMatrix::from_row_slice(
            2,
            2,
            &[c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)],
        ))
        .unwrap();
        let one_one = FockVector::new(vec![1, 1]).unwrap();
        let amp = amplitude(&bs, &one_one, &one_one).unwrap();
        assert!(amp.norm() < 1e-12);
        let two_zero = FockVector::new(vec![2, 0]).unwrap();
        let amp2 = amplitude(&bs, &two_zero, &one_one).unwrap();
        assert!((amp2.norm_sqr() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn submatrix_shapes() {
        let g = PassiveUnitary::identity(3);
        let n_in = FockVector::new(vec![2, 0, 1]).unwrap();
        let n_out = FockVector::new(vec![1, 1, 1]).unwrap();
        let sub = submatrix(&g, &n_out, &n_in).unwrap();
        assert_eq!(sub.nrows(), 3);
        let vacuum = FockVector::new(vec![0, 0, 0]).unwrap();
        let sub0 = submatrix(&g, &vacuum, &vacuum).unwrap();
        assert_eq!(sub0.nrows(), 0);
        assert_eq!(permanent(&sub0).unwrap(), c(1.0, 0.0));
        let bad = FockVector::new(vec![1, 0, 0]).unwrap();
        assert!(submatrix(&g, &bad, &n_in).is_err());
    }

    #[test]
    fn identity_distribution_is_point_mass() {
        let g = PassiveUnitary::identity(3);
        let input = FockVector::new(vec![1, 1, 0]).unwrap();
        let dist = outcome_distribution(&g, &input, DEFAULT_SECTOR_CAP).unwrap();
        for (s, p) in dist.states.iter().zip(&dist.probs) {
            if s == &input {
                assert!((p - 1.0).abs() < 1e-12);
            } else {
                assert!(p.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_distribution_is_permuted_point_mass() {
        let mut mat = DMatrix::from_element(3, 3, c(0.0, 0.0));
        // Mode permutation 0 -> 1 -> 2 -> 0 as a passive transformation.
        mat[(1, 0)] = c(1.0, 0.0);
        mat[(2, 1)] = c(1.0, 0.0);
        mat[(0, 2)] = c(1.0, 0.0);
        let g = PassiveUnitary::new(mat).unwrap();
        let input = FockVector::new(vec![2, 1, 0]).unwrap();
        let expect = FockVector::new(vec![0, 2, 1]).unwrap();
        let dist = outcome_distribution(&g, &input, DEFAULT_SECTOR_CAP).unwrap();
        for (s, p) in dist.states.iter().zip(&dist.probs) {
            if s == &expect {
                assert!((p - 1.0).abs() < 1e-12);
            } else {
                assert!(p.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn haar_unitary_is_unitary_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = haar_unitary(4, &mut rng);
        let gram = u.matrix().adjoint() * u.matrix();
        for r in 0..4 {
            for cix in 0..4 {
                let expect = if r == cix { 1.0 } else { 0.0 };
                assert!((gram[(r, cix)] - c(expect, 0.0)).norm() < 1e-10);
            }
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let u2 = haar_unitary(4, &mut rng2);
        assert_eq!(u.matrix(), u2.matrix());
    }

    #[test]
    fn compose_matches_manual_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = haar_unitary(3, &mut rng);
        let b = haar_unitary(3, &mut rng);
        let ab = compose(&[a.clone(), b.clone()]).unwrap();
        let manual = b.matrix() * a.matrix();
        assert!((ab.matrix() - manual).map(|z| z.norm()).max() < 1e-12);
        let single = compose(&[a.clone()]).unwrap();
        assert_eq!(single.matrix(), a.matrix());
    }

    #[test]
    fn simulate_lossless_survives_and_conserves_particles() {
        let config = SimConfig {
            n: 2,
            m: 2,
            input: None,
            lengths: vec![1, 3],
            shots: 50,
            loss: LossModel::default(),
            seed: 5,
            measure: Measure::Haar,
            include_factors: true,
        };
        let records = simulate(&config).unwrap();
        assert_eq!(records.len(), 100);
        for rec in &records {
            assert!(rec.survived);
            assert_eq!(rec.outcome.total(), 2);
            let prod = compose(rec.factors.as_ref().unwrap()).unwrap();
            let dev = (prod.matrix() - rec.product.matrix()).map(|z| z.norm()).max();
            assert!(dev < 1e-9);
            assert_eq!(rec.factors.as_ref().unwrap().len(), rec.seq_len as usize);
        }
    }

    #[test]
    fn simulate_is_deterministic_across_thread_counts() {
        let config = SimConfig {
            n: 2,
            m: 3,
            input: None,
            lengths: vec![2],
            shots: 40,
            loss: LossModel {
                kind: LossKind::Uniform { sqrt_p: 0.9 },
                sqrt_p_sp: 1.0,
                sqrt_p_m: 1.0,
            },
            seed: 17,
            measure: Measure::Haar,
            include_factors: false,
        };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let r1 = pool1.install(|| simulate(&config)).unwrap();
        let r4 = pool4.install(|| simulate(&config)).unwrap();
        assert_eq!(r1.len(), r4.len());
        for (a, b) in r1.iter().zip(&r4) {
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.survived, b.survived);
            assert_eq!(a.product.matrix(), b.product.matrix());
        }
    }

    #[test]
    fn lossy_records_lose_particles() {
        let config = SimConfig {
            n: 3,
            m: 3,
            input: None,
            lengths: vec![4],
            shots: 200,
            loss: LossModel {
                kind: LossKind::Uniform { sqrt_p: 0.8 },
                sqrt_p_sp: 0.95,
                sqrt_p_m: 0.95,
            },
            seed: 23,
            measure: Measure::Haar,
            include_factors: false,
        };
        let (records, diags) = simulate_detailed(&config).unwrap();
        // p_SP = p_M = 0.95², p per gate = 0.8², four gates, cubed for n = 3.
        let q = (0.95f64.powi(4) * 0.8f64.powi(8)).powi(3);
        for d in &diags {
            assert!((d.survival_prob - q).abs() < 1e-12);
        }
        let mut saw_loss = false;
        for rec in &records {
            assert_eq!(rec.survived, rec.outcome.total() == 3);
            if !rec.survived {
                saw_loss = true;
                assert!(rec.outcome.total() < 3);
            }
        }
        assert!(saw_loss, "with these rates loss must occur in 200 shots");
    }

    #[test]
    fn composite_local_measure_produces_unitaries() {
        let config = SimConfig {
            n: 1,
            m: 3,
            input: None,
            lengths: vec![2],
            shots: 10,
            loss: LossModel::default(),
            seed: 2,
            measure: Measure::CompositeLocal,
            include_factors: false,
        };
        let records = simulate(&config).unwrap();
        assert_eq!(records.len(), 10);
    }

    #[test]
    fn jsonl_roundtrip_preserves_records() {
        let config = SimConfig {
            n: 2,
            m: 2,
            input: None,
            lengths: vec![1, 2],
            shots: 5,
            loss: LossModel {
                kind: LossKind::Uniform { sqrt_p: 0.9 },
                sqrt_p_sp: 1.0,
                sqrt_p_m: 1.0,
            },
            seed: 9,
            measure: Measure::Haar,
            include_factors: true,
        };
        let records = simulate(&config).unwrap();
        let mut buf = Vec::new();
        write_records_jsonl(&records, &mut buf).unwrap();
        let parsed = read_records_jsonl(&mut buf.as_slice()).unwrap();
        assert_eq!(parsed.len(), records.len());
        for (a, b) in records.iter().zip(&parsed) {
            assert_eq!(a.seq_len, b.seq_len);
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.survived, b.survived);
            // 17 significant digits round-trip doubles bit-exactly.
            assert_eq!(a.product.flatten(), b.product.flatten());
            let fa = a.factors.as_ref().unwrap();
            let fb = b.factors.as_ref().unwrap();
            assert_eq!(fa.len(), fb.len());
            for (x, y) in fa.iter().zip(fb) {
                assert_eq!(x.flatten(), y.flatten());
            }
        }
    }

    #[test]
    fn jsonl_rejects_inconsistent_factors() {
        let g = PassiveUnitary::identity(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = haar_unitary(2, &mut rng);
        let rec = ExperimentRecord {
            seq_len: 1,
            product: g,
            factors: Some(vec![h]),
            outcome: FockVector::new(vec![1, 0]).unwrap(),
            survived: true,
        };
        let mut buf = Vec::new();
        write_records_jsonl(&[rec], &mut buf).unwrap();
        assert!(read_records_jsonl(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn config_validation_errors() {
        let mut config = SimConfig {
            n: 2,
            m: 2,
            input: Some(vec![1, 1, 1]),
            lengths: vec![1],
            shots: 1,
            loss: LossModel::default(),
            seed: 0,
            measure: Measure::Haar,
            include_factors: false,
        };
        assert!(config.validate().is_err());
        config.input = Some(vec![1, 1]);
        assert!(config.validate().is_ok());
        config.lengths = vec![];
        assert!(config.validate().is_err());
        config.lengths = vec![1];
        config.loss.sqrt_p_sp = 0.0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn loss_model_json_forms() {
        let none: LossModel = serde_json::from_str(r#"{"kind":"none"}"#).unwrap();
        assert_eq!(none, LossModel::default());
        let uni: LossModel =
            serde_json::from_str(r#"{"kind":"uniform","sqrt_p":0.95,"sqrt_p_sp":0.9}"#).unwrap();
        assert_eq!(
            uni.kind,
            LossKind::Uniform { sqrt_p: 0.95 }
        );
        assert_eq!(uni.sqrt_p_sp, 0.9);
        assert_eq!(uni.sqrt_p_m, 1.0);
        let gr: LossModel =
            serde_json::from_str(r#"{"kind":"gate-random","range":[0.9,1.0]}"#).unwrap();
        assert_eq!(gr.kind, LossKind::GateRandom { range: [0.9, 1.0] });
    }
}
