//! Clebsch-Gordan coefficient tables for SU(m) tensor couplings.
//!
//! Tables are built numerically in the Gelfand-Tsetlin basis: the
//! highest-weight vectors of the target irrep are found as the null
//! space of the stacked raising operators on the matching weight
//! subspace of the product, multiplicity copies are orthonormalized
//! with a fixed sign convention, and the remaining coefficients follow
//! by applying lowering operators and solving small least-squares
//! systems weight class by weight class.
//!
//! Shapes are SU(m) labels with trailing zero. A coupling whose factor
//! box counts exceed the target's by a multiple of m (a determinant
//! twist, as in coupling a symmetric irrep with its conjugate) is
//! handled by shifting the weight-matching rule; ladder coefficients
//! are twist-invariant.

use crate::error::{Error, Result};
use crate::repcore::{
    biguint_to_f64, dim_weyl, enumerate_patterns, tensor_square_multiplicity, GTPattern,
    IrrepLabel, Shape,
};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Raising operator at level l (adds one to an entry of row l),
/// applied to entry k. Returns the raised pattern and matrix element,
/// or None when the raised pattern violates interlacing.
fn raising_element(p: &GTPattern, k: usize, l: usize) -> Option<(GTPattern, f64)> {
    let mut rows = p.rows().to_vec();
    rows[l - 1][k - 1] += 1;
    let cand = GTPattern::new(rows).ok()?;
    let lv = |i: usize, j: usize| p.entry(i, j) - i as i64;
    let lkl = lv(k, l);
    let mut num = 1.0f64;
    for i in 1..=l + 1 {
        num *= (lv(i, l + 1) - lkl) as f64;
    }
    for i in 1..l {
        num *= (lv(i, l - 1) - lkl - 1) as f64;
    }
    let mut den = 1.0f64;
    for i in (1..=l).filter(|&i| i != k) {
        den *= ((lv(i, l) - lkl) * (lv(i, l) - lkl - 1)) as f64;
    }
    let rad = -num / den;
    debug_assert!(rad > 0.0, "valid raise must have positive radicand");
    Some((cand, rad.sqrt()))
}

/// Lowering operator at level l applied to entry k; counterpart of
/// `raising_element`.
fn lowering_element(p: &GTPattern, k: usize, l: usize) -> Option<(GTPattern, f64)> {
    let mut rows = p.rows().to_vec();
    rows[l - 1][k - 1] -= 1;
    let cand = GTPattern::new(rows).ok()?;
    let lv = |i: usize, j: usize| p.entry(i, j) - i as i64;
    let lkl = lv(k, l);
    let mut num = 1.0f64;
    for i in 1..=l + 1 {
        num *= (lv(i, l + 1) - lkl + 1) as f64;
    }
    for i in 1..l {
        num *= (lv(i, l - 1) - lkl) as f64;
    }
    let mut den = 1.0f64;
    for i in (1..=l).filter(|&i| i != k) {
        den *= ((lv(i, l) - lkl + 1) * (lv(i, l) - lkl)) as f64;
    }
    let rad = -num / den;
    debug_assert!(rad > 0.0, "valid lower must have positive radicand");
    Some((cand, rad.sqrt()))
}

/// Enumerated irrep with weight bookkeeping and ladder maps.
struct IrrepData {
    patterns: Vec<GTPattern>,
    index: HashMap<GTPattern, usize>,
    weights: Vec<Vec<i64>>,
    /// raising[l-1][src] and lowering[l-1][src]: (target index, element).
    raising: Vec<Vec<Vec<(usize, f64)>>>,
    lowering: Vec<Vec<Vec<(usize, f64)>>>,
}

impl IrrepData {
    fn new(shape: &Shape) -> Self {
        let patterns = enumerate_patterns(shape);
        let index: HashMap<GTPattern, usize> = patterns
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let weights = patterns.iter().map(|p| p.weight()).collect();
        let m = shape.m();
        let mut raising = Vec::with_capacity(m - 1);
        let mut lowering = Vec::with_capacity(m - 1);
        for l in 1..m {
            let mut rmap = Vec::with_capacity(patterns.len());
            let mut lmap = Vec::with_capacity(patterns.len());
            for p in &patterns {
                let mut r = Vec::new();
                let mut lo = Vec::new();
                for k in 1..=l {
                    if let Some((q, c)) = raising_element(p, k, l) {
                        r.push((index[&q], c));
                    }
                    if let Some((q, c)) = lowering_element(p, k, l) {
                        lo.push((index[&q], c));
                    }
                }
                rmap.push(r);
                lmap.push(lo);
            }
            raising.push(rmap);
            lowering.push(lmap);
        }
        IrrepData {
            patterns,
            index,
            weights,
            raising,
            lowering,
        }
    }

    fn len(&self) -> usize {
        self.patterns.len()
    }
}

/// A requested tensor coupling factor1 ⊗ factor2 → target on m modes.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Coupling {
    pub m: u32,
    pub factor1: Shape,
    pub factor2: Shape,
    pub target: Shape,
}

impl Coupling {
    pub fn new(m: u32, factor1: Shape, factor2: Shape, target: Shape) -> Result<Self> {
        let mm = m as usize;
        if factor1.m() != mm || factor2.m() != mm || target.m() != mm {
            return Err(Error::Argument(format!(
                "coupling shapes must all have {m} rows"
            )));
        }
        let excess = factor1.boxes() + factor2.boxes() - target.boxes();
        if excess < 0 || excess % m as i64 != 0 {
            return Err(Error::Coupling(format!(
                "box counts incompatible: {} + {} vs {}",
                factor1.boxes(),
                factor2.boxes(),
                target.boxes()
            )));
        }
        Ok(Coupling {
            m,
            factor1,
            factor2,
            target,
        })
    }

    /// Coupling of the n-particle symmetric irrep with its conjugate
    /// (realized on the dual shape (n,...,n,0)) into the k-labeled irrep.
    pub fn symmetric_conjugate(n: u32, m: u32, k: u32) -> Result<Self> {
        if k > n {
            return Err(Error::Coupling(format!(
                "k={k} exceeds the particle number n={n}"
            )));
        }
        let mm = m as usize;
        let mut f1 = vec![0i64; mm];
        f1[0] = n as i64;
        let mut f2 = vec![n as i64; mm];
        f2[mm - 1] = 0;
        Coupling::new(
            m,
            Shape::new(f1)?,
            Shape::new(f2)?,
            IrrepLabel::new(k, m)?.shape(),
        )
    }

    /// Coupling of the k-labeled irrep with itself into the l-labeled one.
    pub fn square(k: u32, l: u32, m: u32) -> Result<Self> {
        if tensor_square_multiplicity(k, l, m) == 0 {
            return Err(Error::Coupling(format!(
                "irrep l={l} does not occur in the square of k={k}"
            )));
        }
        let lam = IrrepLabel::new(k, m)?.shape();
        Coupling::new(m, lam.clone(), lam, IrrepLabel::new(l, m)?.shape())
    }

    /// Determinant-twist constant: factors carry this many more columns
    /// of boxes than the target.
    pub fn twist(&self) -> i64 {
        (self.factor1.boxes() + self.factor2.boxes() - self.target.boxes()) / self.m as i64
    }

    /// Canonical cache key.
    pub fn key(&self) -> String {
        let rows = |s: &Shape| {
            s.rows()
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "m{};f1({});f2({});t({})",
            self.m,
            rows(&self.factor1),
            rows(&self.factor2),
            rows(&self.target)
        )
    }

    /// Expected multiplicity when the coupling belongs to one of the two
    /// families with known decompositions; None for other couplings.
    fn known_multiplicity(&self) -> Option<u32> {
        let m = self.m;
        let parse_lambda = |s: &Shape| -> Option<u32> {
            for k in 0.. {
                let cand = IrrepLabel::new(k, m).ok()?.shape();
                if &cand == s {
                    return Some(k);
                }
                if cand.boxes() > s.boxes() {
                    return None;
                }
            }
            None
        };
        let kt = parse_lambda(&self.target)?;
        // symmetric ⊗ dual-symmetric family
        let n = self.factor1.rows()[0];
        if self.factor1.rows()[1..].iter().all(|&r| r == 0) && n >= 0 {
            let mm = m as usize;
            let dual_ok = self.factor2.rows()[..mm - 1].iter().all(|&r| r == n)
                && self.factor2.rows()[mm - 1] == 0;
            if dual_ok {
                return Some(if kt as i64 <= n { 1 } else { 0 });
            }
        }
        // square family
        if self.factor1 == self.factor2 {
            if let Some(k) = parse_lambda(&self.factor1) {
                return Some(tensor_square_multiplicity(k, kt, m));
            }
        }
        None
    }
}

/// Report from table verification: maximum deviations of the
/// orthonormality sums, with the worst row located.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub max_deviation: f64,
    pub worst: Option<(usize, usize, usize, usize)>,
    pub checked: usize,
}

impl VerifyReport {
    pub fn pass(&self, tol: f64) -> bool {
        self.max_deviation < tol
    }
}

/// A complete coefficient table for one coupling.
///
/// Coefficients are stored densely per target pattern over the pair
/// list of its weight class; all other coefficients are zero by the
/// weight selection rule.
pub struct CGTable {
    coupling: Coupling,
    multiplicity: usize,
    twist: i64,
    f1: Vec<GTPattern>,
    f2: Vec<GTPattern>,
    tgt: Vec<GTPattern>,
    f1_index: HashMap<GTPattern, usize>,
    f2_index: HashMap<GTPattern, usize>,
    tgt_index: HashMap<GTPattern, usize>,
    f1_weights: Vec<Vec<i64>>,
    f2_weights: Vec<Vec<i64>>,
    tgt_weights: Vec<Vec<i64>>,
    /// Pair lists keyed by raw product weight, each sorted by (i1, i2).
    pair_groups: BTreeMap<Vec<i64>, Vec<(u32, u32)>>,
    /// rows[it][r] is dense over pair_groups at the matching key.
    rows: Vec<Vec<Vec<f64>>>,
}

impl CGTable {
    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn multiplicity(&self) -> usize {
        self.multiplicity
    }

    pub fn factor1_patterns(&self) -> &[GTPattern] {
        &self.f1
    }

    pub fn factor2_patterns(&self) -> &[GTPattern] {
        &self.f2
    }

    pub fn target_patterns(&self) -> &[GTPattern] {
        &self.tgt
    }

    pub fn factor1_index(&self, p: &GTPattern) -> Option<usize> {
        self.f1_index.get(p).copied()
    }

    pub fn factor2_index(&self, p: &GTPattern) -> Option<usize> {
        self.f2_index.get(p).copied()
    }

    pub fn target_index(&self, p: &GTPattern) -> Option<usize> {
        self.tgt_index.get(p).copied()
    }

    /// Raw product-weight key of a target pattern's class.
    fn class_key(&self, it: usize) -> Vec<i64> {
        self.tgt_weights[it]
            .iter()
            .map(|w| w + self.twist)
            .collect()
    }

    /// Pair list and coefficient row for one (target pattern, copy).
    pub fn row(&self, it: usize, r: usize) -> (&[(u32, u32)], &[f64]) {
        let key = self.class_key(it);
        let pairs = self
            .pair_groups
            .get(&key)
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        (pairs, &self.rows[it][r - 1])
    }

    /// Coefficient by canonical indices; zero when the weight rule fails.
    pub fn coefficient_by_index(&self, i1: usize, i2: usize, it: usize, r: usize) -> f64 {
        let wsum: Vec<i64> = self.f1_weights[i1]
            .iter()
            .zip(&self.f2_weights[i2])
            .map(|(a, b)| a + b)
            .collect();
        if wsum != self.class_key(it) {
            return 0.0;
        }
        let pairs = match self.pair_groups.get(&wsum) {
            Some(p) => p,
            None => return 0.0,
        };
        match pairs.binary_search(&(i1 as u32, i2 as u32)) {
            Ok(pos) => self.rows[it][r - 1][pos],
            Err(_) => 0.0,
        }
    }

    /// Coefficient by patterns. Errors on shape mismatch or an out of
    /// range multiplicity copy; returns exactly 0 off the weight rule.
    pub fn coefficient(
        &self,
        m1: &GTPattern,
        m2: &GTPattern,
        m: &GTPattern,
        r: usize,
    ) -> Result<f64> {
        if r < 1 || r > self.multiplicity {
            return Err(Error::Argument(format!(
                "multiplicity copy {r} out of range 1..={}",
                self.multiplicity
            )));
        }
        let i1 = self
            .f1_index
            .get(m1)
            .ok_or_else(|| Error::Argument("pattern not in factor1 irrep".into()))?;
        let i2 = self
            .f2_index
            .get(m2)
            .ok_or_else(|| Error::Argument("pattern not in factor2 irrep".into()))?;
        let it = self
            .tgt_index
            .get(m)
            .ok_or_else(|| Error::Argument("pattern not in target irrep".into()))?;
        Ok(self.coefficient_by_index(*i1, *i2, *it, r))
    }

    /// Orthonormality check: rows of the table (indexed by target
    /// pattern and copy) form an orthonormal family. Pairs of rows in
    /// different weight classes are orthogonal by the selection rule and
    /// are skipped.
    pub fn verify(&self) -> VerifyReport {
        let mut max_dev = 0.0f64;
        let mut worst = None;
        let mut checked = 0usize;
        let mut by_class: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
        for it in 0..self.tgt.len() {
            by_class.entry(self.class_key(it)).or_default().push(it);
        }
        for (_, members) in by_class {
            for (a_pos, &ia) in members.iter().enumerate() {
                for &ib in &members[a_pos..] {
                    for ra in 1..=self.multiplicity {
                        for rb in 1..=self.multiplicity {
                            if ia == ib && rb < ra {
                                continue;
                            }
                            let va = &self.rows[ia][ra - 1];
                            let vb = &self.rows[ib][rb - 1];
                            let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
                            let expect = if ia == ib && ra == rb { 1.0 } else { 0.0 };
                            let dev = (dot - expect).abs();
                            checked += 1;
                            if dev > max_dev {
                                max_dev = dev;
                                worst = Some((ia, ra, ib, rb));
                            }
                        }
                    }
                }
            }
        }
        VerifyReport {
            max_deviation: max_dev,
            worst,
            checked,
        }
    }

    #[cfg(test)]
    fn perturb_for_test(&mut self, it: usize, r: usize, pos: usize, delta: f64) {
        self.rows[it][r - 1][pos] += delta;
    }

    /// Negates every coefficient; the basis {−e_M} is equally valid, so
    /// physical quantities built from coefficient pairs must not change.
    #[cfg(test)]
    pub(crate) fn flip_signs_for_test(&mut self) {
        for block in &mut self.rows {
            for row in block {
                for v in row {
                    *v = -*v;
                }
            }
        }
    }
}

/// Completeness check across a family of tables sharing both factors:
/// summing C·C over all targets and copies must give the identity on
/// each product weight class. Returns the maximum deviation.
pub fn verify_completeness(tables: &[&CGTable]) -> Result<f64> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Argument("no tables given".into()))?;
    for t in tables {
        if t.coupling.factor1 != first.coupling.factor1
            || t.coupling.factor2 != first.coupling.factor2
        {
            return Err(Error::Argument(
                "completeness check needs tables sharing both factors".into(),
            ));
        }
    }
    let mut max_dev = 0.0f64;
    for (key, pairs) in &first.pair_groups {
        let np = pairs.len();
        let mut gram = vec![0.0f64; np * np];
        for t in tables {
            for it in 0..t.tgt.len() {
                if &t.class_key(it) != key {
                    continue;
                }
                for r in 1..=t.multiplicity {
                    let row = &t.rows[it][r - 1];
                    for a in 0..np {
                        for b in 0..np {
                            gram[a * np + b] += row[a] * row[b];
                        }
                    }
                }
            }
        }
        for a in 0..np {
            for b in 0..np {
                let expect = if a == b { 1.0 } else { 0.0 };
                max_dev = max_dev.max((gram[a * np + b] - expect).abs());
            }
        }
    }
    Ok(max_dev)
}

/// Reduced row echelon form with partial pivoting; rows end up ordered
/// by pivot column. Returns the rank.
fn rref(mat: &mut DMatrix<f64>, tol: f64) -> usize {
    let (nr, nc) = mat.shape();
    let mut rank = 0usize;
    for c in 0..nc {
        if rank == nr {
            break;
        }
        let mut best = rank;
        for r in rank + 1..nr {
            if mat[(r, c)].abs() > mat[(best, c)].abs() {
                best = r;
            }
        }
        if mat[(best, c)].abs() <= tol {
            continue;
        }
        mat.swap_rows(rank, best);
        let piv = mat[(rank, c)];
        for cc in 0..nc {
            mat[(rank, cc)] /= piv;
        }
        for r in 0..nr {
            if r != rank {
                let f = mat[(r, c)];
                if f != 0.0 {
                    for cc in 0..nc {
                        let sub = f * mat[(rank, cc)];
                        mat[(r, cc)] -= sub;
                    }
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Builds the complete table for a coupling.
pub fn build_table(coupling: &Coupling) -> Result<CGTable> {
    let expected_mult = coupling.known_multiplicity();
    if expected_mult == Some(0) {
        return Err(Error::Coupling(format!(
            "target does not occur in {}",
            coupling.key()
        )));
    }
    let d1 = IrrepData::new(&coupling.factor1);
    let d2 = IrrepData::new(&coupling.factor2);
    let dt = IrrepData::new(&coupling.target);
    let m = coupling.m as usize;
    let twist = coupling.twist();

    // Pair lists per raw product weight, in (i1, i2) order.
    let mut pair_groups: BTreeMap<Vec<i64>, Vec<(u32, u32)>> = BTreeMap::new();
    for i1 in 0..d1.len() {
        for i2 in 0..d2.len() {
            let w: Vec<i64> = d1.weights[i1]
                .iter()
                .zip(&d2.weights[i2])
                .map(|(a, b)| a + b)
                .collect();
            pair_groups.entry(w).or_default().push((i1 as u32, i2 as u32));
        }
    }
    let class_key = |wt: &[i64]| -> Vec<i64> { wt.iter().map(|w| w + twist).collect() };

    // Highest-weight solutions: null space of all raising operators on
    // the matching pair class.
    let hw = GTPattern::highest_weight(&coupling.target);
    let hw_key = class_key(&hw.weight());
    let hw_pairs = pair_groups.get(&hw_key).cloned().unwrap_or_default();
    if hw_pairs.is_empty() {
        return Err(Error::Coupling(format!(
            "target does not occur in {} (empty highest-weight class)",
            coupling.key()
        )));
    }
    let ncols = hw_pairs.len();
    let mut rows_blocks: Vec<Vec<f64>> = Vec::new();
    for l in 1..m {
        let mut up = hw_key.clone();
        up[l - 1] += 1;
        up[l] -= 1;
        let up_pairs = match pair_groups.get(&up) {
            Some(p) => p,
            None => continue,
        };
        let up_pos: HashMap<(u32, u32), usize> = up_pairs
            .iter()
            .enumerate()
            .map(|(pos, pr)| (*pr, pos))
            .collect();
        let mut block = vec![0.0f64; up_pairs.len() * ncols];
        for (col, &(i1, i2)) in hw_pairs.iter().enumerate() {
            for &(j1, c) in &d1.raising[l - 1][i1 as usize] {
                if let Some(&rowi) = up_pos.get(&(j1 as u32, i2)) {
                    block[rowi * ncols + col] += c;
                }
            }
            for &(j2, c) in &d2.raising[l - 1][i2 as usize] {
                if let Some(&rowi) = up_pos.get(&(i1, j2 as u32)) {
                    block[rowi * ncols + col] += c;
                }
            }
        }
        for r in 0..up_pairs.len() {
            rows_blocks.push(block[r * ncols..(r + 1) * ncols].to_vec());
        }
    }
    // Pad with zero rows so the SVD exposes the full right-singular basis.
    let nrows = rows_blocks.len().max(ncols);
    let mut amat = DMatrix::<f64>::zeros(nrows, ncols);
    for (r, row) in rows_blocks.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            amat[(r, c)] = *v;
        }
    }
    let svd = amat.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Diagnostics("SVD failed to produce V".into()))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-8 * smax.max(1.0);
    let mut null_rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..svd.singular_values.len() {
        if svd.singular_values[i] <= tol {
            null_rows.push(vt.row(i).iter().cloned().collect());
        }
    }
    let mult = null_rows.len();
    if mult == 0 {
        return Err(Error::Coupling(format!(
            "target does not occur in {} (no highest-weight solution)",
            coupling.key()
        )));
    }
    if let Some(exp) = expected_mult {
        if mult != exp as usize {
            return Err(Error::Diagnostics(format!(
                "found multiplicity {mult}, expected {exp} for {}",
                coupling.key()
            )));
        }
    }

    // Canonicalize multiplicity copies: echelon order, Gram-Schmidt,
    // first nonzero positive.
    let mut basis = DMatrix::<f64>::from_fn(mult, ncols, |r, c| null_rows[r][c]);
    rref(&mut basis, 1e-9);
    let mut hw_solutions: Vec<Vec<f64>> = Vec::with_capacity(mult);
    for r in 0..mult {
        let mut v: Vec<f64> = (0..ncols).map(|c| basis[(r, c)]).collect();
        for prev in &hw_solutions {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(Error::Diagnostics(
                "degenerate highest-weight basis after canonicalization".into(),
            ));
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        let lead = v.iter().find(|x| x.abs() > 1e-12).copied().unwrap_or(1.0);
        if lead < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        for x in v.iter_mut() {
            if *x == 0.0 {
                *x = 0.0;
            }
        }
        hw_solutions.push(v);
    }

    // Group target patterns by weight class and order classes by depth
    // below the highest weight.
    let hw_sums: Vec<i64> = {
        let sums = hw.row_sums();
        sums[..m - 1].to_vec()
    };
    let mut classes: BTreeMap<(i64, Vec<i64>), Vec<usize>> = BTreeMap::new();
    for it in 0..dt.len() {
        let sums = dt.patterns[it].row_sums();
        let depth: i64 = hw_sums
            .iter()
            .zip(&sums[..m - 1])
            .map(|(h, s)| h - s)
            .sum();
        classes
            .entry((depth, dt.weights[it].clone()))
            .or_default()
            .push(it);
    }

    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); dt.len()];
    // Solved coefficient vectors per target pattern (over its pair class).
    let mut solved: HashMap<usize, Vec<Vec<f64>>> = HashMap::new();

    for ((depth, wt), members) in &classes {
        let key = class_key(wt);
        let pairs = pair_groups.get(&key).cloned().unwrap_or_default();
        if *depth == 0 {
            // The highest-weight class of the target holds exactly the
            // highest-weight pattern.
            let it = members[0];
            debug_assert_eq!(members.len(), 1);
            debug_assert_eq!(pairs, hw_pairs);
            solved.insert(it, hw_solutions.clone());
            continue;
        }
        let np = pairs.len();
        if np == 0 {
            return Err(Error::Diagnostics(format!(
                "target weight class {:?} has no product pairs",
                wt
            )));
        }
        let pair_pos: HashMap<(u32, u32), usize> = pairs
            .iter()
            .enumerate()
            .map(|(pos, pr)| (*pr, pos))
            .collect();
        let nunk = members.len();
        // Equations from every solved parent class one lowering step up.
        let mut erows: Vec<Vec<f64>> = Vec::new();
        let mut brows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); mult];
        for l in 1..m {
            let mut wsrc = wt.clone();
            wsrc[l - 1] += 1;
            wsrc[l] -= 1;
            let src_members = match classes.get(&(depth - 1, wsrc.clone())) {
                Some(v) => v,
                None => continue,
            };
            let src_key = class_key(&wsrc);
            let src_pairs = &pair_groups[&src_key];
            for &isrc in src_members {
                // LHS: overlap of F_l|src> with each unknown pattern.
                let mut erow = vec![0.0f64; nunk];
                for &(jt, c) in &dt.lowering[l - 1][isrc] {
                    if let Some(pos) = members.iter().position(|&x| x == jt) {
                        erow[pos] += c;
                    }
                }
                erows.push(erow);
                // RHS: product lowering applied to the solved vector.
                let src_sol = &solved[&isrc];
                for r in 0..mult {
                    let mut b = vec![0.0f64; np];
                    for (ppos, &(i1, i2)) in src_pairs.iter().enumerate() {
                        let cv = src_sol[r][ppos];
                        if cv == 0.0 {
                            continue;
                        }
                        for &(j1, c) in &d1.lowering[l - 1][i1 as usize] {
                            if let Some(&q) = pair_pos.get(&(j1 as u32, i2)) {
                                b[q] += cv * c;
                            }
                        }
                        for &(j2, c) in &d2.lowering[l - 1][i2 as usize] {
                            if let Some(&q) = pair_pos.get(&(i1, j2 as u32)) {
                                b[q] += cv * c;
                            }
                        }
                    }
                    brows[r].push(b);
                }
            }
        }
        let neq = erows.len();
        if neq == 0 {
            return Err(Error::Diagnostics(format!(
                "weight class {:?} unreachable by lowering",
                wt
            )));
        }
        let emat = DMatrix::<f64>::from_fn(neq, nunk, |r, c| erows[r][c]);
        let svd = emat.clone().svd(true, true);
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-8 * svd.singular_values[0].max(1.0))
            .count();
        if rank < nunk {
            return Err(Error::Diagnostics(format!(
                "lowering system rank {rank} < unknowns {nunk} at class {:?}",
                wt
            )));
        }
        for r in 0..mult {
            let bmat = DMatrix::<f64>::from_fn(neq, np, |i, j| brows[r][i][j]);
            let x = svd
                .solve(&bmat, 1e-10)
                .map_err(|e| Error::Diagnostics(format!("least-squares solve failed: {e}")))?;
            let resid = (&emat * &x - &bmat).abs().max();
            let bscale = bmat.abs().max().max(1.0);
            if resid > 1e-8 * bscale {
                return Err(Error::Diagnostics(format!(
                    "lowering residual {resid:.3e} at class {:?}",
                    wt
                )));
            }
            for (pos, &it) in members.iter().enumerate() {
                let v: Vec<f64> = (0..np).map(|j| x[(pos, j)] + 0.0).collect();
                solved.entry(it).or_insert_with(Vec::new).push(v);
            }
        }
    }

    for (it, sols) in solved {
        rows[it] = sols
            .into_iter()
            .map(|v| v.into_iter().map(|x| if x == 0.0 { 0.0 } else { x }).collect())
            .collect();
    }

    let table = CGTable {
        coupling: coupling.clone(),
        multiplicity: mult,
        twist,
        f1: d1.patterns,
        f2: d2.patterns,
        tgt: dt.patterns,
        f1_index: d1.index,
        f2_index: d2.index,
        tgt_index: dt.index,
        f1_weights: d1.weights,
        f2_weights: d2.weights,
        tgt_weights: dt.weights,
        pair_groups,
        rows,
    };
    let report = table.verify();
    if !report.pass(1e-10) {
        return Err(Error::Diagnostics(format!(
            "orthonormality deviation {:.3e} exceeds 1e-10 for {}",
            report.max_deviation,
            coupling.key()
        )));
    }
    Ok(table)
}

fn cache_file_name(coupling: &Coupling) -> String {
    let rows = |s: &Shape| {
        s.rows()
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join("-")
    };
    format!(
        "cg_m{}_f1_{}_f2_{}_t_{}.cgt",
        coupling.m,
        rows(&coupling.factor1),
        rows(&coupling.factor2),
        rows(&coupling.target)
    )
}

/// Serializes a table. Payload rows hold canonical pattern indices and
/// the coefficient printed with 17 significant digits; zeros are
/// omitted and reconstructed on load. The header carries a checksum.
pub fn cache_store(table: &CGTable, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut payload = String::new();
    for it in 0..table.tgt.len() {
        let key = table.class_key(it);
        let pairs = table
            .pair_groups
            .get(&key)
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        for r in 1..=table.multiplicity {
            let row = &table.rows[it][r - 1];
            for (pos, &(i1, i2)) in pairs.iter().enumerate() {
                let v = row[pos];
                if v == 0.0 {
                    continue;
                }
                writeln!(payload, "{} {} {} {} {:.16e}", i1, i2, it, r, v)
                    .expect("writing to string cannot fail");
            }
        }
    }
    let digest = Sha256::digest(payload.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{:02x}", b).expect("writing to string cannot fail");
    }
    let count = payload.lines().count();
    let header = format!(
        "cgtable-v1 key={} mult={} rows={} sha256={}\n",
        table.coupling.key(),
        table.multiplicity,
        count,
        hex
    );
    let path = dir.join(cache_file_name(&table.coupling));
    std::fs::write(&path, header + &payload)?;
    Ok(path)
}

/// Loads a table from the cache. Returns Ok(None) on a miss: absent
/// file, wrong key, corrupt header, or checksum mismatch.
pub fn cache_load(coupling: &Coupling, dir: &Path) -> Result<Option<CGTable>> {
    let path = dir.join(cache_file_name(coupling));
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(_) => return Ok(None),
    };
    let (header, payload) = match text.split_once('\n') {
        Some(x) => x,
        None => return Ok(None),
    };
    let fields: HashMap<&str, &str> = header
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .collect();
    if !header.starts_with("cgtable-v1 ") {
        return Ok(None);
    }
    if fields.get("key") != Some(&coupling.key().as_str()) {
        return Ok(None);
    }
    let mult: usize = match fields.get("mult").and_then(|s| s.parse().ok()) {
        Some(v) => v,
        None => return Ok(None),
    };
    let rows_decl: usize = match fields.get("rows").and_then(|s| s.parse().ok()) {
        Some(v) => v,
        None => return Ok(None),
    };
    let digest = Sha256::digest(payload.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{:02x}", b).expect("writing to string cannot fail");
    }
    if fields.get("sha256") != Some(&hex.as_str()) {
        return Ok(None);
    }
    if payload.lines().count() != rows_decl {
        return Ok(None);
    }

    // Rebuild the skeleton, then fill stored values.
    let d1 = IrrepData::new(&coupling.factor1);
    let d2 = IrrepData::new(&coupling.factor2);
    let dt = IrrepData::new(&coupling.target);
    let twist = coupling.twist();
    let mut pair_groups: BTreeMap<Vec<i64>, Vec<(u32, u32)>> = BTreeMap::new();
    for i1 in 0..d1.len() {
        for i2 in 0..d2.len() {
            let w: Vec<i64> = d1.weights[i1]
                .iter()
                .zip(&d2.weights[i2])
                .map(|(a, b)| a + b)
                .collect();
            pair_groups.entry(w).or_default().push((i1 as u32, i2 as u32));
        }
    }
    let mut rows: Vec<Vec<Vec<f64>>> = Vec::with_capacity(dt.len());
    for it in 0..dt.len() {
        let key: Vec<i64> = dt.weights[it].iter().map(|w| w + twist).collect();
        let np = pair_groups.get(&key).map(|v| v.len()).unwrap_or(0);
        rows.push(vec![vec![0.0f64; np]; mult]);
    }
    let mut table = CGTable {
        coupling: coupling.clone(),
        multiplicity: mult,
        twist,
        f1: d1.patterns,
        f2: d2.patterns,
        tgt: dt.patterns,
        f1_index: d1.index,
        f2_index: d2.index,
        tgt_index: dt.index,
        f1_weights: d1.weights,
        f2_weights: d2.weights,
        tgt_weights: dt.weights,
        pair_groups,
        rows,
    };
    for line in payload.lines() {
        let mut toks = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Option<usize> { tok.and_then(|s| s.parse().ok()) };
        let i1 = parse(toks.next());
        let i2 = parse(toks.next());
        let it = parse(toks.next());
        let r = parse(toks.next());
        let v: Option<f64> = toks.next().and_then(|s| s.parse().ok());
        let (i1, i2, it, r, v) = match (i1, i2, it, r, v) {
            (Some(a), Some(b), Some(c), Some(d), Some(e)) => (a, b, c, d, e),
            _ => return Ok(None),
        };
        if it >= table.tgt.len() || r < 1 || r > mult {
            return Ok(None);
        }
        let key = table.class_key(it);
        let pos = match table
            .pair_groups
            .get(&key)
            .and_then(|pairs| pairs.binary_search(&(i1 as u32, i2 as u32)).ok())
        {
            Some(p) => p,
            None => return Ok(None),
        };
        table.rows[it][r - 1][pos] = v;
    }
    Ok(Some(table))
}

/// In-memory registry of built tables with an optional disk cache.
pub struct TableStore {
    dir: Option<PathBuf>,
    map: HashMap<String, Arc<CGTable>>,
}

impl TableStore {
    pub fn new(dir: Option<PathBuf>) -> Self {
        TableStore {
            dir,
            map: HashMap::new(),
        }
    }

    /// Honors the cache-directory environment variable when set.
    pub fn from_env() -> Self {
        let dir = std::env::var_os("PASSIVE_RB_CACHE_DIR").map(PathBuf::from);
        TableStore::new(dir)
    }

    pub fn get(&mut self, coupling: &Coupling) -> Result<Arc<CGTable>> {
        let key = coupling.key();
        if let Some(t) = self.map.get(&key) {
            return Ok(t.clone());
        }
        if let Some(dir) = self.dir.clone() {
            if let Some(t) = cache_load(coupling, &dir)? {
                let arc = Arc::new(t);
                self.map.insert(key, arc.clone());
                return Ok(arc);
            }
        }
        let t = build_table(coupling)?;
        if let Some(dir) = self.dir.clone() {
            cache_store(&t, &dir)?;
        }
        let arc = Arc::new(t);
        self.map.insert(key, arc.clone());
        Ok(arc)
    }
}

/// Sanity data for a shape: dimension as f64 for weighting formulas.
pub fn dim_f64(shape: &Shape) -> f64 {
    biguint_to_f64(&dim_weyl(shape))
}
