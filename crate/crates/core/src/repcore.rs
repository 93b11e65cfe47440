//! Representation-theoretic bookkeeping for the unitary group U(m).
//!
//! Irreps of U(m) are labeled by weakly decreasing integer rows
//! ("shapes"); their orthonormal bases are indexed by triangular
//! Gelfand-Tsetlin patterns. This module provides shapes, patterns,
//! pattern enumeration, Weyl dimensions, weights, the bijection between
//! Fock occupation vectors and patterns of the symmetric irrep, dual
//! (conjugate) patterns with their phase convention, and the
//! decomposition data used by the benchmarking filters.

use crate::error::{Error, Result};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use std::collections::HashMap;
use std::fmt;

/// A U(m) highest weight: weakly decreasing non-negative integers, last
/// entry zero. Length is the number of modes m.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Shape {
    rows: Vec<i64>,
}

impl Shape {
    pub fn new(rows: Vec<i64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("shape must have at least one row".into()));
        }
        for w in rows.windows(2) {
            if w[0] < w[1] {
                return Err(Error::Shape(format!(
                    "rows must be weakly decreasing, got {:?}",
                    rows
                )));
            }
        }
        if *rows.last().unwrap() != 0 {
            return Err(Error::Shape(format!(
                "last row must be zero (polynomial irrep convention), got {:?}",
                rows
            )));
        }
        if rows[0] < 0 {
            return Err(Error::Shape(format!("rows must be non-negative, got {:?}", rows)));
        }
        Ok(Shape { rows })
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[i64] {
        &self.rows
    }

    /// Total number of boxes.
    pub fn boxes(&self) -> i64 {
        self.rows.iter().sum()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.rows.iter().map(|r| r.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Label of one irrep in the decomposition of the conjugate action on
/// the n-particle sector: k ranges over 0..=n, each with multiplicity
/// one. Shape is (2k, k, ..., k, 0) with m rows.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct IrrepLabel {
    pub k: u32,
    pub m: u32,
}

impl IrrepLabel {
    pub fn new(k: u32, m: u32) -> Result<Self> {
        if m < 2 {
            return Err(Error::Argument(format!("need at least 2 modes, got m={m}")));
        }
        Ok(IrrepLabel { k, m })
    }

    pub fn shape(&self) -> Shape {
        let m = self.m as usize;
        let k = self.k as i64;
        let mut rows = vec![k; m];
        rows[0] = 2 * k;
        rows[m - 1] = 0;
        if m == 2 {
            rows = vec![2 * k, 0];
        }
        Shape::new(rows).expect("irrep label shape is always valid")
    }
}

/// Triangular Gelfand-Tsetlin pattern. `rows[j-1]` is row j (j entries),
/// ordered bottom row first; the top row (index m-1) equals the shape.
/// Entry indices in formulas are 1-based: M(i, j) = rows[j-1][i-1].
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct GTPattern {
    rows: Vec<Vec<i64>>,
}

impl GTPattern {
    /// Validates triangularity and the interlacing constraints
    /// M(i, j+1) >= M(i, j) >= M(i+1, j+1).
    pub fn new(rows: Vec<Vec<i64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("pattern must be non-empty".into()));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.len() != j + 1 {
                return Err(Error::Shape(format!(
                    "row {} must have {} entries, got {}",
                    j + 1,
                    j + 1,
                    row.len()
                )));
            }
        }
        let m = rows.len();
        for j in 1..m {
            let lower = &rows[j - 1];
            let upper = &rows[j];
            for i in 0..j {
                if !(upper[i] >= lower[i] && lower[i] >= upper[i + 1]) {
                    return Err(Error::Shape(format!(
                        "interlacing violated at row {} entry {}",
                        j,
                        i + 1
                    )));
                }
            }
        }
        Ok(GTPattern { rows })
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// 1-based entry access: i-th entry of row j.
    pub fn entry(&self, i: usize, j: usize) -> i64 {
        self.rows[j - 1][i - 1]
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    /// Top row as a shape. Fails only if the top row ends nonzero.
    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.rows[self.m() - 1].clone())
    }

    /// Sum of row j for j = 1..=m.
    pub fn row_sums(&self) -> Vec<i64> {
        self.rows.iter().map(|r| r.iter().sum()).collect()
    }

    /// Weight vector (w_1, ..., w_m): w_j = row_sum(j) - row_sum(j-1).
    pub fn weight(&self) -> Vec<i64> {
        let sums = self.row_sums();
        let mut w = Vec::with_capacity(sums.len());
        let mut prev = 0;
        for s in sums {
            w.push(s - prev);
            prev = s;
        }
        w
    }

    /// Highest-weight pattern of a shape: row j holds the first j shape rows.
    pub fn highest_weight(shape: &Shape) -> GTPattern {
        let rows: Vec<Vec<i64>> = (1..=shape.m())
            .map(|j| shape.rows()[..j].to_vec())
            .collect();
        GTPattern { rows }
    }
}

impl fmt::Display for GTPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        write!(f, "[{}]", parts.join("|"))
    }
}

/// Fock occupation vector over m modes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct FockVector {
    counts: Vec<u32>,
}

impl FockVector {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Argument("occupation vector must be non-empty".into()));
        }
        Ok(FockVector { counts })
    }

    /// Collision-free input (1, ..., 1, 0, ..., 0) with n ones.
    pub fn collision_free(n: u32, m: u32) -> Result<Self> {
        if n > m {
            return Err(Error::Argument(format!(
                "collision-free input needs n <= m, got n={n}, m={m}"
            )));
        }
        let counts = (0..m).map(|i| if i < n { 1 } else { 0 }).collect();
        Ok(FockVector { counts })
    }

    pub fn m(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Multi-index factorial n_1! n_2! ... n_m! as f64 (exact at desk scale).
    pub fn factorial(&self) -> f64 {
        self.counts.iter().map(|&c| factorial_f64(c)).product()
    }
}

impl fmt::Display for FockVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.counts.iter().map(|c| c.to_string()).collect();
        write!(f, "|{}>", parts.join(","))
    }
}

/// Exact factorial as f64; exact for arguments up to 18.
pub fn factorial_f64(n: u32) -> f64 {
    let mut acc = 1.0f64;
    for i in 2..=n as u64 {
        acc *= i as f64;
    }
    acc
}

/// Binomial coefficient with arbitrary precision.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    num_integer::binomial(BigUint::from(n), BigUint::from(k))
}

pub fn biguint_to_f64(x: &BigUint) -> f64 {
    x.to_f64().expect("dimension fits in f64 range")
}

/// Weyl dimension formula: prod_{i<j} (1 + (l_i - l_j)/(j - i)) with
/// l_i the i-th shape row. Computed as an exact integer ratio.
pub fn dim_weyl(shape: &Shape) -> BigUint {
    let m = shape.m();
    let l = shape.rows();
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..m {
        for j in (i + 1)..m {
            // l_i - i strictly exceeds l_j - j for i < j, so every factor
            // is a positive integer.
            let f = (l[i] - i as i64) - (l[j] - j as i64);
            num *= BigUint::from(f as u64);
            den *= BigUint::from((j - i) as u64);
        }
    }
    let (q, r) = num_integer::Integer::div_rem(&num, &den);
    debug_assert!(r.is_zero(), "Weyl dimension must be integral");
    q
}

/// Dimension of the k-labeled irrep, shape (2k, k, ..., k, 0):
/// ((2k + m - 1)/(m - 1)) * binom(k + m - 2, k)^2, exactly.
pub fn dim_lambda(label: &IrrepLabel) -> BigUint {
    let k = label.k as u64;
    let m = label.m as u64;
    let b = binomial(k + m - 2, k);
    let num = BigUint::from(2 * k + m - 1) * &b * &b;
    let (q, r) = num_integer::Integer::div_rem(&num, &BigUint::from(m - 1));
    debug_assert!(r.is_zero(), "k-irrep dimension must be integral");
    q
}

/// Dimension of the n-particle sector on m modes: binom(n + m - 1, n).
pub fn dim_sector(n: u32, m: u32) -> BigUint {
    binomial(n as u64 + m as u64 - 1, n as u64)
}

/// All patterns of a shape in canonical order: ascending lexicographic
/// on the flattened entry list with the bottom row most significant.
pub fn enumerate_patterns(shape: &Shape) -> Vec<GTPattern> {
    let m = shape.m();
    let mut out = Vec::new();
    let mut rows: Vec<Vec<i64>> = vec![Vec::new(); m];
    rows[m - 1] = shape.rows().to_vec();
    fill_rows_below(&mut rows, m - 1, &mut out);
    out.sort();
    out
}

fn fill_rows_below(rows: &mut Vec<Vec<i64>>, j: usize, out: &mut Vec<GTPattern>) {
    if j == 0 {
        out.push(GTPattern { rows: rows.clone() });
        return;
    }
    // Row j (0-based index j-1) interlaces with row j+1 (index j);
    // entry i ranges over [upper[i+1], upper[i]].
    let upper = rows[j].clone();
    let mut row = vec![0i64; j];
    fill_entries(rows, j, &upper, &mut row, 0, out);
}

fn fill_entries(
    rows: &mut Vec<Vec<i64>>,
    j: usize,
    upper: &[i64],
    row: &mut Vec<i64>,
    i: usize,
    out: &mut Vec<GTPattern>,
) {
    if i == j {
        rows[j - 1] = row.clone();
        fill_rows_below(rows, j - 1, out);
        return;
    }
    for v in upper[i + 1]..=upper[i] {
        row[i] = v;
        fill_entries(rows, j, upper, row, i + 1, out);
    }
}

/// Pattern of the occupation vector in the symmetric irrep (n, 0, ..., 0):
/// row j = (n_1 + ... + n_j, 0, ..., 0).
pub fn fock_to_gt(fock: &FockVector) -> GTPattern {
    let m = fock.m();
    let mut rows = Vec::with_capacity(m);
    let mut partial = 0i64;
    for j in 1..=m {
        partial += fock.counts()[j - 1] as i64;
        let mut row = vec![0i64; j];
        row[0] = partial;
        rows.push(row);
    }
    GTPattern { rows }
}

/// Inverse of `fock_to_gt`. Errors if the pattern is not of symmetric
/// shape (only first entries nonzero).
pub fn gt_to_fock(pattern: &GTPattern) -> Result<FockVector> {
    let m = pattern.m();
    for (j, row) in pattern.rows().iter().enumerate() {
        if row[1..].iter().any(|&x| x != 0) {
            return Err(Error::Argument(format!(
                "pattern is not in a symmetric irrep (row {} has nonzero tail)",
                j + 1
            )));
        }
    }
    let mut counts = Vec::with_capacity(m);
    let mut prev = 0i64;
    for j in 1..=m {
        let s = pattern.entry(1, j);
        let c = s - prev;
        if c < 0 {
            return Err(Error::Argument("pattern has negative occupation".into()));
        }
        counts.push(c as u32);
        prev = s;
    }
    FockVector::new(counts)
}

/// Dual (conjugate-irrep) pattern: entries M~(i, l) = M(1, m) - M(l-i+1, l).
/// For the shapes used here (first row 2k or n, last row 0) the dual
/// shape equals the original, so the dual pattern lives in the same irrep.
pub fn dual_pattern(pattern: &GTPattern) -> GTPattern {
    let m = pattern.m();
    let top = pattern.entry(1, m);
    let rows: Vec<Vec<i64>> = (1..=m)
        .map(|l| (1..=l).map(|i| top - pattern.entry(l - i + 1, l)).collect())
        .collect();
    GTPattern { rows }
}

/// Phase exponent of the dual pairing: sum of the bottom m-1 row sums of
/// the pattern, minus the same for the highest-weight pattern of its shape.
/// The sign in formulas is (-1) to this power.
pub fn dual_phase(pattern: &GTPattern) -> i64 {
    let m = pattern.m();
    let sums = pattern.row_sums();
    let shape_rows = &pattern.rows()[m - 1];
    let mut s: i64 = sums[..m - 1].iter().sum();
    let mut partial = 0i64;
    for j in 1..m {
        partial += shape_rows[j - 1];
        s -= partial;
    }
    s
}

/// Irrep content of the conjugate action on the n-particle sector:
/// labels k = 0..=n, each once.
pub fn decompose_conjugate_action(n: u32, m: u32) -> Result<Vec<IrrepLabel>> {
    (0..=n).map(|k| IrrepLabel::new(k, m)).collect()
}

/// Multiplicity of the l-labeled irrep inside the tensor square of the
/// k-labeled irrep's decomposition partner: for l <= k it is l + 1, for
/// k < l <= 2k it is 2k - l + 1, zero beyond; at m = 2 every
/// multiplicity is min(1, that value).
pub fn tensor_square_multiplicity(k: u32, l: u32, m: u32) -> u32 {
    if l > 2 * k {
        return 0;
    }
    let raw = if l <= k { l + 1 } else { 2 * k - l + 1 };
    if m == 2 {
        raw.min(1)
    } else {
        raw
    }
}

/// Number of zero-weight patterns of a shape. For the k-labeled shapes
/// this equals binom(k + m - 2, k); computed by enumeration to stay
/// shape-generic.
pub fn zero_weight_multiplicity(shape: &Shape) -> u64 {
    let m = shape.m();
    let boxes = shape.boxes();
    if boxes % m as i64 != 0 {
        return 0;
    }
    let per = boxes / m as i64;
    enumerate_patterns(shape)
        .iter()
        .filter(|p| p.weight().iter().all(|&w| w == per))
        .count() as u64
}

/// Index map from patterns to their canonical positions.
pub fn pattern_index(patterns: &[GTPattern]) -> HashMap<GTPattern, usize> {
    patterns
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i))
        .collect()
}

/// All occupation vectors of the (n, m) sector, ordered to match the
/// canonical pattern order of the symmetric irrep.
pub fn enumerate_sector(n: u32, m: u32) -> Vec<FockVector> {
    let mut shape_rows = vec![0i64; m as usize];
    shape_rows[0] = n as i64;
    let shape = Shape::new(shape_rows).expect("symmetric shape is valid");
    enumerate_patterns(&shape)
        .iter()
        .map(|p| gt_to_fock(p).expect("symmetric patterns map to occupations"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_validation() {
        assert!(Shape::new(vec![2, 1, 0]).is_ok());
        assert!(Shape::new(vec![1, 2, 0]).is_err());
        assert!(Shape::new(vec![2, 1]).is_err());
        assert!(Shape::new(vec![]).is_err());
    }

    #[test]
    fn irrep_label_shapes() {
        assert_eq!(IrrepLabel::new(0, 3).unwrap().shape().rows(), &[0, 0, 0]);
        assert_eq!(IrrepLabel::new(2, 2).unwrap().shape().rows(), &[4, 0]);
        assert_eq!(IrrepLabel::new(3, 4).unwrap().shape().rows(), &[6, 3, 3, 0]);
    }

    #[test]
    fn pattern_validation_catches_interlacing() {
        assert!(GTPattern::new(vec![vec![1], vec![2, 0]]).is_ok());
        assert!(GTPattern::new(vec![vec![3], vec![2, 0]]).is_err());
        assert!(GTPattern::new(vec![vec![1, 0], vec![2, 0, 0]]).is_err());
    }

    #[test]
    fn weights_match_row_sum_differences() {
        let p = GTPattern::new(vec![vec![1], vec![2, 1], vec![2, 1, 0]]).unwrap();
        assert_eq!(p.row_sums(), vec![1, 3, 3]);
        assert_eq!(p.weight(), vec![1, 2, 0]);
    }

    #[test]
    fn su2_pattern_count_is_2j_plus_1() {
        // Shape (2j, 0) has 2j + 1 patterns.
        for twoj in 0..6i64 {
            let shape = Shape::new(vec![twoj, 0]).unwrap();
            assert_eq!(enumerate_patterns(&shape).len(), (twoj + 1) as usize);
        }
    }

    #[test]
    fn dims_agree_with_pattern_counts() {
        for rows in [vec![2, 0], vec![2, 1, 0], vec![4, 2, 2, 0], vec![3, 1, 0]] {
            let shape = Shape::new(rows).unwrap();
            let count = enumerate_patterns(&shape).len();
            assert_eq!(BigUint::from(count), dim_weyl(&shape));
        }
    }

    #[test]
    fn dim_lambda_matches_weyl() {
        for m in 2..=5u32 {
            for k in 0..=4u32 {
                let label = IrrepLabel::new(k, m).unwrap();
                assert_eq!(dim_lambda(&label), dim_weyl(&label.shape()));
            }
        }
    }

    #[test]
    fn sector_dimension_values() {
        assert_eq!(dim_sector(4, 4), BigUint::from(35u32));
        assert_eq!(dim_sector(2, 2), BigUint::from(3u32));
        assert_eq!(dim_sector(5, 10), BigUint::from(2002u32));
    }

    #[test]
    fn fock_gt_roundtrip() {
        let f = FockVector::new(vec![1, 0, 2, 1]).unwrap();
        let p = fock_to_gt(&f);
        assert_eq!(p.rows()[3], vec![4, 0, 0, 0]);
        assert_eq!(p.rows()[2], vec![3, 0, 0]);
        assert_eq!(gt_to_fock(&p).unwrap(), f);
    }

    #[test]
    fn sector_enumeration_matches_pattern_order() {
        let sector = enumerate_sector(2, 3);
        assert_eq!(sector.len(), 6);
        // Ascending partial sums: first state has everything in the last mode.
        assert_eq!(sector[0].counts(), &[0, 0, 2]);
        assert_eq!(sector[5].counts(), &[2, 0, 0]);
        let mut seen = sector.clone();
        seen.dedup();
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn dual_pattern_involution_and_weight_negation() {
        let shape = Shape::new(vec![2, 1, 0]).unwrap();
        for p in enumerate_patterns(&shape) {
            let d = dual_pattern(&p);
            let top = p.entry(1, 3);
            // Conjugation negates weights; the determinant twist adds the
            // top entry to every component: w~(j) = top - w(j).
            let w = p.weight();
            let expect: Vec<i64> = (0..3).map(|j| top - w[j]).collect();
            assert_eq!(d.weight(), expect);
            assert_eq!(dual_pattern(&d), p);
        }
    }

    #[test]
    fn dual_phase_su2_sign_matches_j_minus_m() {
        // Shape (2j, 0): pattern with bottom entry j + mz has phase
        // mz - j, whose sign equals the familiar (-1)^(j - mz).
        let twoj = 4i64;
        let shape = Shape::new(vec![twoj, 0]).unwrap();
        for p in enumerate_patterns(&shape) {
            let bottom = p.entry(1, 1);
            assert_eq!(dual_phase(&p), bottom - twoj);
            assert_eq!(
                (-1i64).pow((dual_phase(&p).rem_euclid(2)) as u32),
                (-1i64).pow(((twoj - bottom).rem_euclid(2)) as u32)
            );
        }
    }

    #[test]
    fn highest_weight_has_zero_dual_phase() {
        let shape = Shape::new(vec![4, 2, 2, 0]).unwrap();
        assert_eq!(dual_phase(&GTPattern::highest_weight(&shape)), 0);
    }

    #[test]
    fn conjugate_action_content() {
        let labels = decompose_conjugate_action(3, 4).unwrap();
        assert_eq!(labels.len(), 4);
        assert_eq!(labels[2], IrrepLabel::new(2, 4).unwrap());
    }

    #[test]
    fn tensor_square_multiplicities() {
        assert_eq!(tensor_square_multiplicity(2, 0, 3), 1);
        assert_eq!(tensor_square_multiplicity(2, 2, 3), 3);
        assert_eq!(tensor_square_multiplicity(2, 3, 3), 2);
        assert_eq!(tensor_square_multiplicity(2, 4, 3), 1);
        assert_eq!(tensor_square_multiplicity(2, 5, 3), 0);
        // Two modes: multiplicity free.
        assert_eq!(tensor_square_multiplicity(2, 2, 2), 1);
    }

    #[test]
    fn zero_weight_count_matches_binomial() {
        for m in 2..=4u32 {
            for k in 0..=3u32 {
                let label = IrrepLabel::new(k, m).unwrap();
                let expect = binomial(k as u64 + m as u64 - 2, k as u64);
                assert_eq!(
                    BigUint::from(zero_weight_multiplicity(&label.shape())),
                    expect
                );
            }
        }
    }
}
