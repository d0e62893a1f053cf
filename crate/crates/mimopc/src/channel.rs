//! Small-scale fading, pilot-phase reception and MMSE channel estimation.
//!
//! The estimator solves one L x L Hermitian system per BS (factorized once
//! per scenario in [`PilotGram`]) and applies it across all M antennas via
//! the vec/Kronecker identity, so the M L x M L blown-up form is never built.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::network::NetworkScenario;
use crate::pilots::{PilotBook, PilotGram};
use crate::stream::complex_gaussian;

/// One realization of the fast fading: `per_bs[j]` holds the M x N matrix of
/// channels from every user in the network to BS j.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDraw {
    pub per_bs: Vec<DMatrix<Complex64>>,
    pub seed_index: u64,
}

/// MMSE estimates of the own-cell channels: `per_bs[i]` is M x K_i.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEstimate {
    pub per_bs: Vec<DMatrix<Complex64>>,
}

impl ChannelDraw {
    /// Channel vector of user `g` at BS `bs`.
    pub fn link(&self, bs: usize, g: usize) -> nalgebra::DVectorView<'_, Complex64> {
        self.per_bs[bs].column(g)
    }
}

/// Draws `h[j][g] = sqrt(v[j][g]) * g_vec`, i.i.d. standard complex Gaussian
/// entries, consuming the RNG in (bs, user, antenna) order.
pub fn sample_channel(scenario: &NetworkScenario, rng: &mut impl Rng) -> ChannelDraw {
    let m = scenario.antennas();
    let n = scenario.num_users();
    let per_bs = (0..scenario.num_cells())
        .map(|j| {
            let mut h = DMatrix::<Complex64>::zeros(m, n);
            for g in 0..n {
                let amp = Complex64::from(scenario.gain(j, g).sqrt());
                for r in 0..m {
                    h[(r, g)] = amp * complex_gaussian(rng);
                }
            }
            h
        })
        .collect();
    ChannelDraw { per_bs, seed_index: 0 }
}

/// Received pilot-phase signal per BS: `Y_i = sum_j H_ij Phi_j^T + Z_i`,
/// with i.i.d. complex Gaussian noise of power `sigma^2` per entry.
pub fn pilot_phase_rx(
    draw: &ChannelDraw,
    book: &PilotBook,
    scenario: &NetworkScenario,
    rng: &mut impl Rng,
) -> Vec<DMatrix<Complex64>> {
    let m = scenario.antennas();
    let l = book.length;
    let flat = book.flattened();
    let noise_amp = Complex64::from(scenario.noise_power.sqrt());
    (0..scenario.num_cells())
        .map(|i| {
            // note the plain transpose: pilots are transmitted, not matched
            let mut y = &draw.per_bs[i] * flat.transpose();
            for r in 0..m {
                for c in 0..l {
                    y[(r, c)] += noise_amp * complex_gaussian(rng);
                }
            }
            y
        })
        .collect()
}

/// MMSE estimate of the own-cell channels from the received pilots.
///
/// Column k of the estimate at BS i is `v_ii[k] * Y_i conj(U_i^{-1} phi_ik)`,
/// which is the blown-up linear-MMSE filter applied antenna-by-antenna.
pub fn mmse_estimate(
    received: &[DMatrix<Complex64>],
    book: &PilotBook,
    gram: &PilotGram,
    scenario: &NetworkScenario,
) -> Result<ChannelEstimate> {
    if received.len() != scenario.num_cells() {
        return Err(Error::ShapeMismatch(format!(
            "received pilots for {} BSs, scenario has {}",
            received.len(),
            scenario.num_cells()
        )));
    }
    let per_bs = (0..scenario.num_cells())
        .map(|i| {
            let solved = gram.solved_own(i); // U_i^{-1} Phi_i, L x K_i
            debug_assert_eq!(received[i].ncols(), book.length);
            let mut est = &received[i] * solved.conjugate();
            for (k, g) in scenario.users_of_cell(i).enumerate() {
                est.column_mut(k) *= Complex64::from(scenario.gain(i, g));
            }
            est
        })
        .collect();
    Ok(ChannelEstimate { per_bs })
}

/// Estimates with the true channels substituted (perfect-CSI override used by
/// diagnostics and degenerate-distribution tests).
pub fn perfect_estimate(draw: &ChannelDraw, scenario: &NetworkScenario) -> ChannelEstimate {
    let per_bs = (0..scenario.num_cells())
        .map(|i| {
            let range = scenario.users_of_cell(i);
            draw.per_bs[i].columns(range.start, range.len()).into_owned()
        })
        .collect();
    ChannelEstimate { per_bs }
}
