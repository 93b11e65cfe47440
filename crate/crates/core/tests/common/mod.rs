//! Reference implementations the integration suite checks the library
//! against: permutation-sum permanents, closed-form SU(2) recoupling,
//! deterministic quadrature, tableau counting, binomial loss pushforward
//! and a Monte-Carlo frame estimator. Functions here avoid the library's
//! own coupling and moment machinery unless they take a table argument
//! explicitly.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use passive_rb::cg::{Coupling, TableStore};
use passive_rb::linopt::PassiveUnitary;
use passive_rb::repcore::{
    biguint_to_f64, dim_lambda, dual_pattern, dual_phase, enumerate_sector, fock_to_gt,
};
use passive_rb::{GTPattern, IrrepLabel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn fact(n: u32) -> f64 {
    (1..=n as u64).map(|x| x as f64).product()
}

/// Factorial of x2/2. Callers guarantee x2 is even; negative x2 means a
/// vanishing recoupling term and is rejected before the call.
fn fact_half(x2: i64) -> f64 {
    assert!(x2 >= 0 && x2 % 2 == 0, "bad doubled factorial arg {x2}");
    fact((x2 / 2) as u32)
}

pub fn binom_f64(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let len = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / len;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (len - 1.0);
    (mean, (var / len).sqrt())
}

/// Total variation distance between two distributions over occupation
/// vectors, summed over the union of their supports.
pub fn tv_distance(p: &HashMap<Vec<u32>, f64>, q: &HashMap<Vec<u32>, f64>) -> f64 {
    let mut keys: Vec<&Vec<u32>> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (p.get(*k).unwrap_or(&0.0) - q.get(*k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Permanent by direct expansion over column choices.
pub fn permanent_naive(a: &DMatrix<Complex64>) -> Complex64 {
    fn go(a: &DMatrix<Complex64>, row: usize, used: &mut [bool]) -> Complex64 {
        if row == a.nrows() {
            return Complex64::new(1.0, 0.0);
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for c in 0..a.ncols() {
            if !used[c] {
                used[c] = true;
                acc += a[(row, c)] * go(a, row + 1, used);
                used[c] = false;
            }
        }
        acc
    }
    if a.nrows() == 0 {
        return Complex64::new(1.0, 0.0);
    }
    go(a, 0, &mut vec![false; a.ncols()])
}

/// Clebsch-Gordan coefficient ⟨j1 m1; j2 m2|J M⟩ in the Condon-Shortley
/// convention from the closed finite sum over recoupling terms. All
/// spin arguments are doubled so half-integers stay exact.
pub fn cg_su2(j1x: i64, m1x: i64, j2x: i64, m2x: i64, jx: i64, mx: i64) -> f64 {
    if m1x + m2x != mx || m1x.abs() > j1x || m2x.abs() > j2x || mx.abs() > jx {
        return 0.0;
    }
    if (j1x + m1x) % 2 != 0 || (j2x + m2x) % 2 != 0 || (jx + mx) % 2 != 0 {
        return 0.0;
    }
    if jx > j1x + j2x || jx < (j1x - j2x).abs() || (j1x + j2x + jx) % 2 != 0 {
        return 0.0;
    }
    let delta = fact_half(j1x + j2x - jx) * fact_half(j1x - j2x + jx)
        * fact_half(-j1x + j2x + jx)
        / fact_half(j1x + j2x + jx + 2);
    let pref = (jx as f64 + 1.0)
        * delta
        * fact_half(j1x + m1x)
        * fact_half(j1x - m1x)
        * fact_half(j2x + m2x)
        * fact_half(j2x - m2x)
        * fact_half(jx + mx)
        * fact_half(jx - mx);
    let kmin = 0
        .max((j2x - jx - m1x) / 2)
        .max((j1x + m2x - jx) / 2);
    let kmax = ((j1x + j2x - jx) / 2)
        .min((j1x - m1x) / 2)
        .min((j2x + m2x) / 2);
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let den = fact(k as u32)
            * fact_half(j1x + j2x - jx - 2 * k)
            * fact_half(j1x - m1x - 2 * k)
            * fact_half(j2x + m2x - 2 * k)
            * fact_half(jx - j2x + m1x + 2 * k)
            * fact_half(jx - j1x - m2x + 2 * k);
        sum += sign / den;
    }
    pref.sqrt() * sum
}

/// ⟨x1 x2|τ(g)|n1 n2⟩ for two modes from the binomial expansion of the
/// transformed creation operators.
pub fn su2_amp(g: &PassiveUnitary, x: (u32, u32), n: (u32, u32)) -> Complex64 {
    let (x1, x2) = x;
    let (n1, n2) = n;
    if x1 + x2 != n1 + n2 {
        return Complex64::new(0.0, 0.0);
    }
    let a = g.entry(0, 0);
    let b = g.entry(0, 1);
    let c = g.entry(1, 0);
    let d = g.entry(1, 1);
    let norm = (fact(x1) * fact(x2) / (fact(n1) * fact(n2))).sqrt();
    let kmin = x1.saturating_sub(n2);
    let kmax = n1.min(x1);
    let mut acc = Complex64::new(0.0, 0.0);
    for k in kmin..=kmax {
        acc += a.powu(k)
            * c.powu(n1 - k)
            * b.powu(x1 - k)
            * d.powu(n2 - (x1 - k))
            * (binom_f64(n1, k) * binom_f64(n2, x1 - k));
    }
    acc * norm
}

/// Zero-weight matrix element ⟨J 0|λ_J(g)|J 0⟩ for integer J. Only
/// |g00|² and |g01|² enter, so the determinant phase of g drops out.
pub fn su2_d00(jbig: u32, g: &PassiveUnitary) -> f64 {
    let p = g.entry(0, 0).norm_sqr();
    let q = g.entry(0, 1).norm_sqr();
    (0..=jbig)
        .map(|k| binom_f64(jbig, k).powi(2) * p.powi(k as i32) * (-q).powi((jbig - k) as i32))
        .sum()
}

/// Two-mode irrep filter through the spin picture: input (n1, n2) is
/// |j m⟩ with 2j = n1+n2 and 2m = n1−n2, the outcome is |j l⟩, and the
/// sequence enters only through the zero-weight element of λ_J.
pub fn su2_filter(jbig: u32, input: (u32, u32), outcome: (u32, u32), g: &PassiveUnitary) -> f64 {
    let n = input.0 + input.1;
    if outcome.0 + outcome.1 != n {
        return 0.0;
    }
    let jx = n as i64;
    let mx = input.0 as i64 - input.1 as i64;
    let lx = outcome.0 as i64 - outcome.1 as i64;
    let jbx = 2 * jbig as i64;
    let cm = cg_su2(jx, mx, jx, -mx, jbx, 0);
    let cl = cg_su2(jx, lx, jx, -lx, jbx, 0);
    // (−1)^(2j − m − l); m + l is always an integer here.
    let e = jx - (mx + lx) / 2;
    let sign = if e.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    (jbx as f64 + 1.0) * sign * cm * cl * su2_d00(jbig, g)
}

/// Haar plateau of the two-mode filter: the squared zero-weight overlap
/// of the input pair.
pub fn su2_first_moment(jbig: u32, input: (u32, u32)) -> f64 {
    let jx = (input.0 + input.1) as i64;
    let mx = input.0 as i64 - input.1 as i64;
    let cm = cg_su2(jx, mx, jx, -mx, 2 * jbig as i64, 0);
    cm * cm
}

/// Haar second moment of the two-mode filter from the closed recoupling
/// sum over outcome weights and intermediate integer spins K.
pub fn su2_second_moment(jbig: u32, input: (u32, u32)) -> f64 {
    let jx = (input.0 + input.1) as i64;
    let mx = input.0 as i64 - input.1 as i64;
    let jbx = 2 * jbig as i64;
    let s_inv = jbx as f64 + 1.0;
    let cm = cg_su2(jx, mx, jx, -mx, jbx, 0);
    let sign2j = if jx % 2 == 0 { 1.0 } else { -1.0 };
    let kx_max = jbx.min(jx);
    let mut lsum = 0.0;
    let mut lx = -jx;
    while lx <= jx {
        let cl = cg_su2(jx, lx, jx, -lx, jbx, 0);
        let phase = if ((mx + lx) / 2).rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        };
        let mut ksum = 0.0;
        for kbig in 0..=kx_max {
            let kx = 2 * kbig;
            let ck_l = cg_su2(jx, lx, jx, -lx, kx, 0);
            let ck_m = cg_su2(jx, mx, jx, -mx, kx, 0);
            let cjj = cg_su2(jbx, 0, jbx, 0, kx, 0);
            ksum += ck_l * ck_m * cjj * cjj / (kx as f64 + 1.0);
        }
        lsum += phase * cl * cl * ksum;
        lx += 2;
    }
    s_inv * s_inv * sign2j * cm * cm * lsum
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn simpson_adaptive_inner(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = simpson(f, a, mid);
    let right = simpson(f, mid, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_adaptive_inner(f, a, mid, left, 0.5 * tol, depth - 1)
        + simpson_adaptive_inner(f, mid, b, right, 0.5 * tol, depth - 1)
}

pub fn simpson_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let whole = simpson(f, a, b);
    let tol = rel_tol * whole.abs().max(1e-12);
    simpson_adaptive_inner(f, a, b, whole, tol, 40)
}

/// Gaussian moment of a 2q-index specification by quadrature of the
/// defining integral over each mode plane: the first q indices are
/// conjugated, the weight is e^(−q·|α⃗|²), the angle uses a trapezoid
/// rule (exact for trigonometric polynomials below the point count)
/// and the radius adaptive Simpson. The result is divided by the
/// square root of all index factorials.
pub fn quad_gaussian_moment(indices: &[Vec<u32>]) -> f64 {
    let q = indices.len() / 2;
    assert!(q >= 1 && 2 * q == indices.len());
    let m = indices[0].len();
    let eta = q as f64;
    let mut total = 1.0;
    for j in 0..m {
        let a: u32 = indices[..q].iter().map(|v| v[j]).sum();
        let b: u32 = indices[q..].iter().map(|v| v[j]).sum();
        let pts = (a + b + 2) as usize;
        let mut ang = Complex64::new(0.0, 0.0);
        for p in 0..pts {
            let th = 2.0 * std::f64::consts::PI * p as f64 / pts as f64;
            ang += Complex64::from_polar(1.0, (b as f64 - a as f64) * th);
        }
        ang *= 2.0 * std::f64::consts::PI / pts as f64;
        let s = (a + b) as f64;
        let rmax = ((s + 80.0) / eta).sqrt();
        let radial = simpson_adaptive(
            &|r: f64| r.powf(s + 1.0) * (-eta * r * r).exp(),
            0.0,
            rmax,
            1e-11,
        );
        total *= ang.re * radial;
    }
    let norm: f64 = indices.iter().flat_map(|v| v.iter()).map(|&c| fact(c)).product();
    total / norm.sqrt()
}

/// Number of semistandard tableaux of the given shape and content by
/// backtracking over cells in row-major order.
pub fn ssyt_count(shape: &[i64], content: &[u32]) -> u64 {
    let rows: Vec<usize> = shape.iter().map(|&r| r.max(0) as usize).collect();
    let cells: Vec<(usize, usize)> = rows
        .iter()
        .enumerate()
        .flat_map(|(r, &len)| (0..len).map(move |c| (r, c)))
        .collect();
    let mut grid = vec![vec![0usize; rows.first().copied().unwrap_or(0)]; rows.len()];
    let mut left: Vec<u32> = content.to_vec();
    fn go(
        cells: &[(usize, usize)],
        idx: usize,
        grid: &mut Vec<Vec<usize>>,
        left: &mut Vec<u32>,
    ) -> u64 {
        if idx == cells.len() {
            return 1;
        }
        let (r, c) = cells[idx];
        let min_row = if c > 0 { grid[r][c - 1] } else { 1 };
        let min_col = if r > 0 { grid[r - 1][c] + 1 } else { 1 };
        let lo = min_row.max(min_col);
        let mut count = 0;
        for v in lo..=left.len() {
            if left[v - 1] == 0 {
                continue;
            }
            left[v - 1] -= 1;
            grid[r][c] = v;
            count += go(cells, idx + 1, grid, left);
            left[v - 1] += 1;
        }
        grid[r][c] = 0;
        count
    }
    go(&cells, 0, &mut grid, &mut left)
}

pub fn compositions(n: u32, m: u32) -> Vec<Vec<u32>> {
    fn go(n: u32, m: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if m == 1 {
            prefix.push(n);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=n {
            prefix.push(c);
            go(n - c, m - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(n, m, &mut Vec::new(), &mut out);
    out
}

/// Outcome distribution of the lossy ideal experiment: the uniform
/// mixture over the n-particle sector pushed through independent
/// per-mode binomial thinning with survival probability q per particle.
pub fn lossy_outcome_marginal(n: u32, m: u32, q: f64) -> HashMap<Vec<u32>, f64> {
    let sector = compositions(n, m);
    let dinv = 1.0 / sector.len() as f64;
    let mut out: HashMap<Vec<u32>, f64> = HashMap::new();
    for nv in &sector {
        let mut stack: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), dinv)];
        for &cnt in nv {
            let mut next = Vec::with_capacity(stack.len() * (cnt as usize + 1));
            for (prefix, w) in &stack {
                for y in 0..=cnt {
                    let ww = w
                        * binom_f64(cnt, y)
                        * q.powi(y as i32)
                        * (1.0 - q).powi((cnt - y) as i32);
                    let mut p = prefix.clone();
                    p.push(y);
                    next.push((p, ww));
                }
            }
            stack = next;
        }
        for (yv, w) in stack {
            *out.entry(yv).or_insert(0.0) += w;
        }
    }
    out
}

pub fn uniform_weight(p: &GTPattern) -> bool {
    let w = p.weight();
    w.iter().all(|&x| x == w[0])
}

/// Frame eigenvalue of the number-resolved POVM evaluated from the
/// coupling table alone: d⁻¹ Σ_N Σ_{uniform-weight M} C(N, N̄ → M)².
pub fn frame_pnr_from_table(k: u32, n: u32, m: u32, store: &mut TableStore) -> f64 {
    let table = store
        .get(&Coupling::symmetric_conjugate(n, m, k).unwrap())
        .unwrap();
    let d = biguint_to_f64(&dim_lambda(&IrrepLabel::new(k, m).unwrap()));
    let mut total = 0.0;
    for state in enumerate_sector(n, m) {
        let gt = fock_to_gt(&state);
        let dual = dual_pattern(&gt);
        for pat in table.target_patterns() {
            if !uniform_weight(pat) {
                continue;
            }
            let c = table.coefficient(&gt, &dual, pat, 1).unwrap();
            total += c * c;
        }
    }
    total / d
}

/// Monte-Carlo estimate of the heterodyne frame eigenvalue. Draws α⃗
/// with density (2/π)^m e^(−2|α⃗|²) and averages
/// Σ_M |Σ_{N,N′} (−1)^(φ(N′)) C_{N,N̄′}^M ᾱ⃗^N α⃗^N′/√(N!N′!)|² / (d·2^m);
/// the envelope cancels the πᵐ measure and the e^(−2S) weight exactly.
pub fn mc_frame_het(
    k: u32,
    n: u32,
    m: u32,
    samples: u64,
    seed: u64,
    store: &mut TableStore,
) -> (f64, f64) {
    let table = store
        .get(&Coupling::symmetric_conjugate(n, m, k).unwrap())
        .unwrap();
    let sector = enumerate_sector(n, m);
    let gts: Vec<GTPattern> = sector.iter().map(fock_to_gt).collect();
    let duals: Vec<GTPattern> = gts.iter().map(dual_pattern).collect();
    let signs: Vec<f64> = gts
        .iter()
        .map(|g| {
            if dual_phase(g).rem_euclid(2) == 1 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    let inv_sqrt_fact: Vec<f64> = sector.iter().map(|s| 1.0 / s.factorial().sqrt()).collect();
    let mut legs: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    for pat in table.target_patterns() {
        let mut here = Vec::new();
        for (i, gi) in gts.iter().enumerate() {
            for (j, dj) in duals.iter().enumerate() {
                let c = table.coefficient(gi, dj, pat, 1).unwrap();
                if c != 0.0 {
                    here.push((i, j, signs[j] * c));
                }
            }
        }
        legs.push(here);
    }
    let d = biguint_to_f64(&dim_lambda(&IrrepLabel::new(k, m).unwrap()));
    let scale = 1.0 / (d * 2f64.powi(m as i32));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..samples {
        let alpha: Vec<Complex64> = (0..m)
            .map(|_| {
                let re: f64 = normal.sample(&mut rng);
                let im: f64 = normal.sample(&mut rng);
                Complex64::new(0.5 * re, 0.5 * im)
            })
            .collect();
        let w: Vec<Complex64> = sector
            .iter()
            .zip(&inv_sqrt_fact)
            .map(|(s, &f)| {
                let mut z = Complex64::new(1.0, 0.0);
                for (aj, &cj) in alpha.iter().zip(s.counts()) {
                    z *= aj.powu(cj);
                }
                z * f
            })
            .collect();
        let mut x = 0.0;
        for here in &legs {
            let mut p = Complex64::new(0.0, 0.0);
            for &(i, j, c) in here {
                p += w[i].conj() * w[j] * c;
            }
            x += p.norm_sqr();
        }
        let x = x * scale;
        sum += x;
        sumsq += x * x;
    }
    let len = samples as f64;
    let mean = sum / len;
    let var = (sumsq - sum * sum / len) / (len - 1.0);
    (mean, (var / len).sqrt())
}
