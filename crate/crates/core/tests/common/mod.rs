#![allow(dead_code)]

use modelcal::domain::{Design, EstimatingSpec, Family, SurveySample, UnitRecord};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Unknown,
    Poisson,
    Srs,
}

/// Random sample with `p` covariates. Linear responses follow
/// `1 + 0.5 Σx + N(0, 1)`; logistic ones `Bernoulli(expit(-0.3 + 0.4 Σx))`.
pub fn random_sample(seed: u64, n: usize, p: usize, family: Family, kind: Kind) -> SurveySample {
    let mut r = rng(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut units = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| z.sample(&mut r) + 0.5).collect();
        let s: f64 = x.iter().sum();
        let y = match family {
            Family::Linear => 1.0 + 0.5 * s + z.sample(&mut r),
            Family::Logistic => {
                let pr = 1.0 / (1.0 + (0.3 - 0.4 * s).exp());
                f64::from(r.random::<f64>() < pr)
            }
        };
        let unit = match kind {
            Kind::Unknown => UnitRecord::new(x, y, r.random_range(1.0..5.0), None).unwrap(),
            Kind::Poisson => UnitRecord::from_inclusion(x, y, r.random_range(0.05..0.9)).unwrap(),
            Kind::Srs => UnitRecord::new(x, y, 10.0, None).unwrap(),
        };
        units.push(unit);
    }
    let design = match kind {
        Kind::Unknown => Design::Unknown,
        Kind::Poisson => Design::Poisson,
        Kind::Srs => Design::SrsWithoutReplacement {
            population_size: 10.0 * n as f64,
        },
    };
    SurveySample::new(units, design, "random").unwrap()
}

pub fn spec2(family: Family) -> EstimatingSpec {
    EstimatingSpec::standard(family, 2).unwrap()
}

/// A feasible calibration instance: `d̃` normalized and rows `u_i` centred
/// under a random positive `w*`, so the constraint set has interior points.
pub fn feasible_instance(seed: u64, n: usize, q: usize) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let d = DVector::from_fn(n, |_, _| r.random_range(0.2..2.0));
    let d = &d / d.sum();
    let ws = DVector::from_fn(n, |_, _| r.random_range(0.2..2.0));
    let ws = &ws / ws.sum();
    let mut u = DMatrix::from_fn(n, q, |_, _| z.sample(&mut r));
    let centre = u.transpose() * &ws;
    for mut row in u.row_iter_mut() {
        row -= centre.transpose();
    }
    (d, u, ws)
}

/// Direct primal maximization of `Σ d̃ log w` over `{w > 0, Σw = 1, Σ w u = 0}`
/// by Newton in the null space of the constraints, started from the interior
/// point `w0`.
pub fn primal_el_oracle(d: &DVector<f64>, u: &DMatrix<f64>, w0: &DVector<f64>) -> DVector<f64> {
    let n = d.len();
    let q = u.ncols();
    let mut a = DMatrix::zeros(q + 1, n);
    a.row_mut(0).fill(1.0);
    a.rows_mut(1, q).copy_from(&u.transpose());
    // The projector onto the null space of A has eigenvalues exactly 0 or 1,
    // so its eigenvectors split cleanly at 1/2.
    let aat = &a * a.transpose();
    let proj = DMatrix::identity(n, n) - a.transpose() * aat.lu().solve(&a).unwrap();
    let eig = nalgebra::linalg::SymmetricEigen::new((&proj + proj.transpose()) * 0.5);
    let cols: Vec<usize> = (0..n).filter(|&j| eig.eigenvalues[j] > 0.5).collect();
    if cols.is_empty() {
        return w0.clone();
    }
    let basis = eig.eigenvectors.select_columns(&cols);
    let obj = |w: &DVector<f64>| d.iter().zip(w.iter()).map(|(d, w)| d * w.ln()).sum::<f64>();
    let mut w = w0.clone();
    for _ in 0..500 {
        let g = basis.transpose() * d.component_div(&w);
        if g.amax() < 1e-15 {
            break;
        }
        let dw2 = DVector::from_fn(n, |i, _| d[i] / (w[i] * w[i]));
        let h = basis.transpose() * DMatrix::from_diagonal(&dw2) * &basis;
        let step = h.lu().solve(&g).unwrap();
        let dir = &basis * step;
        let f0 = obj(&w);
        let mut t = 1.0;
        loop {
            let cand = &w + &dir * t;
            if cand.min() > 0.0 && obj(&cand) >= f0 - 1e-300 {
                w = cand;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return w;
            }
        }
    }
    w
}

/// Two-parameter linear fit sandwich by explicit summation, SRS design.
pub struct HandSandwich {
    pub jac: [[f64; 2]; 2],
    pub meat: [[f64; 2]; 2],
    pub cov: [[f64; 2]; 2],
}

pub fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

pub fn mul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn t2(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// `y = θ0 + θ1 x` on points `(x, y)` with equal weights `N/n`.
pub fn hand_linear_srs(points: &[(f64, f64)], pop: f64, theta: [f64; 2]) -> HandSandwich {
    let n = points.len() as f64;
    let dt = 1.0 / n;
    let mut jac = [[0.0; 2]; 2];
    let mut scores = Vec::new();
    for &(x, y) in points {
        let h = [1.0, x];
        let r = y - theta[0] - theta[1] * x;
        for i in 0..2 {
            for j in 0..2 {
                jac[i][j] -= dt * h[i] * h[j];
            }
        }
        scores.push([r, r * x]);
    }
    let mean = [
        scores.iter().map(|s| s[0]).sum::<f64>() / n,
        scores.iter().map(|s| s[1]).sum::<f64>() / n,
    ];
    let mut meat = [[0.0; 2]; 2];
    for s in &scores {
        for i in 0..2 {
            for j in 0..2 {
                meat[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    let f = (1.0 - n / pop) / (n * (n - 1.0));
    for row in &mut meat {
        for v in row.iter_mut() {
            *v *= f;
        }
    }
    let ji = inv2(jac);
    let cov = mul2(mul2(ji, meat), t2(ji));
    HandSandwich { jac, meat, cov }
}

pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(1e-300);
    (a - b).amax() / scale
}

/// Blocks `(I11, I12, I22, I0, Σu)` of the two-covariate linear model with
/// reduced covariate `x1`, summed unit by unit for a Poisson sample.
pub struct DirectBlocks {
    pub i11: DMatrix<f64>,
    pub i12: DMatrix<f64>,
    pub i22: DMatrix<f64>,
    pub i0: DMatrix<f64>,
    pub sigma_u: DMatrix<f64>,
}

pub fn direct_blocks_poisson(s: &SurveySample, beta: &DVector<f64>, alpha: &DVector<f64>) -> DirectBlocks {
    let total: f64 = s.units().iter().map(|u| u.design_weight()).sum();
    let mut b = DirectBlocks {
        i11: DMatrix::zeros(3, 3),
        i12: DMatrix::zeros(3, 2),
        i22: DMatrix::zeros(2, 2),
        i0: DMatrix::zeros(2, 2),
        sigma_u: DMatrix::zeros(5, 5),
    };
    for u in s.units() {
        let x = u.covariates();
        let d = u.design_weight() / total;
        let pi = u.inclusion_prob().unwrap();
        let h1 = [1.0, x[0], x[1]];
        let h2 = [1.0, x[0]];
        let r1 = u.response() - (beta[0] + beta[1] * x[0] + beta[2] * x[1]);
        let r2 = u.response() - (alpha[0] + alpha[1] * x[0]);
        let u1: Vec<f64> = h1.iter().map(|h| h * r1).collect();
        let u2: Vec<f64> = h2.iter().map(|h| h * r2).collect();
        let stacked: Vec<f64> = u1.iter().chain(&u2).copied().collect();
        for a in 0..3 {
            for c in 0..3 {
                b.i11[(a, c)] -= d * h1[a] * h1[c];
            }
            for c in 0..2 {
                b.i12[(a, c)] += d * u1[a] * u2[c];
            }
        }
        for a in 0..2 {
            for c in 0..2 {
                b.i22[(a, c)] += d * u2[a] * u2[c];
                b.i0[(a, c)] -= d * h2[a] * h2[c];
            }
        }
        for a in 0..5 {
            for c in 0..5 {
                b.sigma_u[(a, c)] += d * d * (1.0 - pi) * stacked[a] * stacked[c];
            }
        }
    }
    b.sigma_u *= s.len() as f64;
    b
}
