//! Pilot sequence books and the per-BS pilot correlation matrices.
//!
//! Every pilot column carries the same energy `L * rho_pilot` (full-power
//! pilots by default, `rho_pilot = P_max`). Three built-in designs plus an
//! external loader:
//!
//! * `Orthogonal` — scaled DFT columns, pilot k reused by user k of every
//!   cell (the classic full-reuse contamination baseline);
//! * `RandomGaussian` — i.i.d. complex Gaussian, rescaled per column;
//! * `NonorthogonalFrame` — an approximately equiangular frame over all
//!   users of the network, designed by alternating projection against the
//!   Welch-bound correlation cap, then split per cell;
//! * `External` — loaded from a CSV of interleaved real/imag rows, for
//!   sequence sets optimized by outside tools.

use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::network::NetworkScenario;
use crate::stream::{complex_gaussian, stream_rng};

/// Alternating-projection rounds used by the frame design.
const FRAME_DESIGN_ROUNDS: usize = 500;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PilotKind {
    Orthogonal,
    RandomGaussian,
    NonorthogonalFrame,
    External(PathBuf),
}

impl PilotKind {
    /// One-letter label used in reports ("O", "R", "N", "X").
    pub fn label(&self) -> &'static str {
        match self {
            PilotKind::Orthogonal => "O",
            PilotKind::RandomGaussian => "R",
            PilotKind::NonorthogonalFrame => "N",
            PilotKind::External(_) => "X",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PilotBook {
    pub length: usize,
    /// One `L x K_i` matrix per cell; column k is user (i, k)'s sequence.
    pub sequences: Vec<DMatrix<Complex64>>,
    pub kind: PilotKind,
    /// Per-symbol pilot power; every column satisfies ||phi||^2 = L * rho.
    pub rho_pilot: f64,
}

impl PilotBook {
    pub fn column_energy(&self) -> f64 {
        self.length as f64 * self.rho_pilot
    }

    /// All sequences as one `L x N` matrix, cell-major column order.
    pub fn flattened(&self) -> DMatrix<Complex64> {
        let n: usize = self.sequences.iter().map(|m| m.ncols()).sum();
        let mut out = DMatrix::<Complex64>::zeros(self.length, n);
        let mut col = 0;
        for m in &self.sequences {
            out.view_mut((0, col), (self.length, m.ncols())).copy_from(m);
            col += m.ncols();
        }
        out
    }

    /// Maximum normalized cross-correlation over all column pairs.
    pub fn max_coherence(&self) -> f64 {
        let f = self.flattened();
        let n = f.ncols();
        let mut worst = 0f64;
        for a in 0..n {
            for b in (a + 1)..n {
                let ca = f.column(a);
                let cb = f.column(b);
                let c = ca.dotc(&cb).norm() / (ca.norm() * cb.norm());
                worst = worst.max(c);
            }
        }
        worst
    }

    /// Writes the external-pilot CSV format (see `make_pilots`).
    pub fn save_external(&self, path: &Path) -> Result<()> {
        let f = self.flattened();
        let mut text = String::from(
            "# pilot sequences: 2L rows (re/im interleaved per symbol) x N columns (cell-major, user-minor)\n",
        );
        for s in 0..self.length {
            for part in 0..2 {
                let row: Vec<String> = (0..f.ncols())
                    .map(|g| {
                        let z = f[(s, g)];
                        if part == 0 { z.re.to_string() } else { z.im.to_string() }
                    })
                    .collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Welch lower bound on the max cross-correlation of `n` unit vectors in
/// dimension `l`.
pub fn welch_bound(n: usize, l: usize) -> f64 {
    if n <= l {
        return 0.0;
    }
    (((n - l) as f64) / ((l * (n - 1)) as f64)).sqrt()
}

fn scaled_dft_column(l: usize, k: usize, amplitude: f64) -> DMatrix<Complex64> {
    DMatrix::from_fn(l, 1, |r, _| {
        let phase = -2.0 * std::f64::consts::PI * (r * k) as f64 / l as f64;
        Complex64::from_polar(amplitude, phase)
    })
}

fn rescale_columns(m: &mut DMatrix<Complex64>, target_energy: f64) {
    for mut col in m.column_iter_mut() {
        let e = col.norm_squared();
        if e > 0.0 {
            col *= Complex64::from((target_energy / e).sqrt());
        }
    }
}

/// Alternating projection toward an equiangular unit-norm frame of `n`
/// columns in dimension `l`: clip the Gram off-diagonals at the Welch bound,
/// project back to a rank-`l` PSD Gram, renormalize, repeat.
fn design_frame(n: usize, l: usize, rng: &mut impl Rng) -> DMatrix<Complex64> {
    let mut f = DMatrix::<Complex64>::from_fn(l, n, |_, _| complex_gaussian(rng));
    rescale_columns(&mut f, 1.0);
    if n <= l {
        return f;
    }
    let cap = welch_bound(n, l);
    for _ in 0..FRAME_DESIGN_ROUNDS {
        let mut gram = f.adjoint() * &f;
        for a in 0..n {
            gram[(a, a)] = Complex64::new(1.0, 0.0);
            for b in 0..n {
                if a != b {
                    let g = gram[(a, b)];
                    let mag = g.norm();
                    if mag > cap {
                        gram[(a, b)] = g * Complex64::from(cap / mag);
                    }
                }
            }
        }
        // nearest rank-l factorization of the clipped Gram
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut next = DMatrix::<Complex64>::zeros(l, n);
        for (row, &idx) in order.iter().take(l).enumerate() {
            let lam = eig.eigenvalues[idx].max(0.0).sqrt();
            let vec = eig.eigenvectors.column(idx);
            for c in 0..n {
                next[(row, c)] = vec[c].conj() * Complex64::from(lam);
            }
        }
        rescale_columns(&mut next, 1.0);
        f = next;
    }
    f
}

fn split_per_cell(flat: &DMatrix<Complex64>, scenario: &NetworkScenario) -> Vec<DMatrix<Complex64>> {
    let mut out = Vec::with_capacity(scenario.num_cells());
    for i in 0..scenario.num_cells() {
        let range = scenario.users_of_cell(i);
        out.push(flat.columns(range.start, range.len()).into_owned());
    }
    out
}

/// Builds a pilot book of the requested kind and length.
///
/// `rho_pilot` defaults to the scenario's P_max (full-power pilots).
/// `Orthogonal` requires `l >= max_i K_i`; `External` requires the file to
/// match `2l` rows by `total_users` columns (columns are rescaled to the
/// book's fixed energy).
pub fn make_pilots(
    kind: PilotKind,
    l: usize,
    scenario: &NetworkScenario,
    seed: u64,
    rho_pilot: Option<f64>,
) -> Result<PilotBook> {
    if l == 0 {
        return Err(Error::invalid("pilots.length", "must be at least 1"));
    }
    let rho = rho_pilot.unwrap_or_else(|| scenario.pmax_watts());
    if !(rho > 0.0) {
        return Err(Error::invalid("pilots.power", "pilot power must be positive"));
    }
    let energy = l as f64 * rho;
    let n = scenario.num_users();

    let sequences = match &kind {
        PilotKind::Orthogonal => {
            let kmax = (0..scenario.num_cells())
                .map(|i| scenario.config.users_in_cell(i))
                .max()
                .unwrap_or(0);
            if l < kmax {
                return Err(Error::invalid(
                    "pilots.length",
                    format!("orthogonal book needs length >= users per cell ({kmax}), got {l}"),
                ));
            }
            let amp = rho.sqrt();
            (0..scenario.num_cells())
                .map(|i| {
                    let k_i = scenario.config.users_in_cell(i);
                    let mut m = DMatrix::<Complex64>::zeros(l, k_i);
                    for k in 0..k_i {
                        m.set_column(k, &scaled_dft_column(l, k, amp).column(0));
                    }
                    m
                })
                .collect()
        }
        PilotKind::RandomGaussian => {
            let mut rng = stream_rng(seed, 0);
            let mut flat = DMatrix::<Complex64>::from_fn(l, n, |_, _| complex_gaussian(&mut rng));
            rescale_columns(&mut flat, energy);
            split_per_cell(&flat, scenario)
        }
        PilotKind::NonorthogonalFrame => {
            let mut rng = stream_rng(seed, 0);
            let mut flat = design_frame(n, l, &mut rng);
            rescale_columns(&mut flat, energy);
            split_per_cell(&flat, scenario)
        }
        PilotKind::External(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let row: std::result::Result<Vec<f64>, _> =
                    line.split(',').map(|t| t.trim().parse::<f64>()).collect();
                rows.push(row.map_err(|e| {
                    Error::ShapeMismatch(format!("pilot file {}: bad number: {e}", path.display()))
                })?);
            }
            if rows.len() != 2 * l || rows.iter().any(|r| r.len() != n) {
                return Err(Error::ShapeMismatch(format!(
                    "pilot file {}: expected {} rows x {} cols, found {} x {}",
                    path.display(),
                    2 * l,
                    n,
                    rows.len(),
                    rows.first().map_or(0, |r| r.len())
                )));
            }
            let mut flat = DMatrix::<Complex64>::zeros(l, n);
            for s in 0..l {
                for g in 0..n {
                    flat[(s, g)] = Complex64::new(rows[2 * s][g], rows[2 * s + 1][g]);
                }
            }
            rescale_columns(&mut flat, energy);
            split_per_cell(&flat, scenario)
        }
    };

    Ok(PilotBook { length: l, sequences, kind, rho_pilot: rho })
}

/// Per-BS pilot correlation matrix `U_i` together with cached solves against
/// it. `U_i` collects the pilot energy of every user in the network as seen
/// through its large-scale gain to BS i, plus the noise floor.
pub struct PilotGram {
    /// `U_i`, Hermitian positive definite, one per BS.
    pub gram: Vec<DMatrix<Complex64>>,
    chol: Vec<Cholesky<Complex64, Dyn>>,
    /// `U_i^{-1} Phi_all` (L x N), reused by the rate coefficients.
    solved_all: Vec<DMatrix<Complex64>>,
    /// `U_i^{-1} Phi_i` (L x K_i), reused by the channel estimator.
    solved_own: Vec<DMatrix<Complex64>>,
}

impl PilotGram {
    pub fn solved_all(&self, bs: usize) -> &DMatrix<Complex64> {
        &self.solved_all[bs]
    }

    pub fn solved_own(&self, bs: usize) -> &DMatrix<Complex64> {
        &self.solved_own[bs]
    }

    pub fn solve(&self, bs: usize, rhs: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.chol[bs].solve(rhs)
    }
}

/// Builds `U_i = sigma^2 I + sum_j Phi_j V_ij Phi_j^*` for every BS i and
/// factorizes it once.
pub fn pilot_gram(book: &PilotBook, scenario: &NetworkScenario) -> Result<PilotGram> {
    let l = book.length;
    let n = scenario.num_users();
    let flat = book.flattened();
    if flat.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "pilot book covers {} users, scenario has {n}",
            flat.ncols()
        )));
    }

    let mut gram = Vec::with_capacity(scenario.num_cells());
    let mut chol = Vec::with_capacity(scenario.num_cells());
    let mut solved_all = Vec::with_capacity(scenario.num_cells());
    let mut solved_own = Vec::with_capacity(scenario.num_cells());

    for i in 0..scenario.num_cells() {
        // U_i = sigma^2 I + Phi diag(v_i) Phi^*, built from sqrt(v)-scaled columns
        let mut scaled = flat.clone();
        for g in 0..n {
            scaled.column_mut(g) *= Complex64::from(scenario.gain(i, g).sqrt());
        }
        let mut u = &scaled * scaled.adjoint();
        for d in 0..l {
            u[(d, d)] += Complex64::from(scenario.noise_power);
        }
        // keep it exactly Hermitian against accumulation error
        let herm = (&u + u.adjoint()) * Complex64::from(0.5);
        let factor = Cholesky::new(herm.clone()).ok_or_else(|| {
            Error::NumericalAbort("pilot correlation matrix is not positive definite".into())
        })?;
        solved_all.push(factor.solve(&flat));
        solved_own.push(factor.solve(&book.sequences[i]));
        gram.push(herm);
        chol.push(factor);
    }

    Ok(PilotGram { gram, chol, solved_all, solved_own })
}
